//! Extended-XYZ files and run configuration.

mod config;
mod extxyz;

pub use config::{Command, DataConfig, RunConfig};
pub use extxyz::{parse_extxyz, write_extxyz};

use std::path::Path;

use crate::error::Result;
use crate::geometry::AtomicSystem;

pub fn read_extxyz(path: impl AsRef<Path>) -> Result<Vec<AtomicSystem>> {
    parse_extxyz(&std::fs::read_to_string(path)?)
}

pub fn write_extxyz_file(path: impl AsRef<Path>, systems: &[AtomicSystem]) -> Result<()> {
    std::fs::write(path, write_extxyz(systems))?;
    Ok(())
}
