//! Element symbols and standard atomic masses (amu) for H through Xe.

use crate::error::{Error, Result};

/// Highest atomic number present in the built-in tables.
pub const MAX_ATOMIC_NUMBER: u32 = 54;

const TABLE: [(&str, f64); MAX_ATOMIC_NUMBER as usize] = [
    ("H", 1.008),
    ("He", 4.002602),
    ("Li", 6.94),
    ("Be", 9.0121831),
    ("B", 10.81),
    ("C", 12.011),
    ("N", 14.007),
    ("O", 15.999),
    ("F", 18.998403163),
    ("Ne", 20.1797),
    ("Na", 22.98976928),
    ("Mg", 24.305),
    ("Al", 26.9815385),
    ("Si", 28.085),
    ("P", 30.973761998),
    ("S", 32.06),
    ("Cl", 35.45),
    ("Ar", 39.948),
    ("K", 39.0983),
    ("Ca", 40.078),
    ("Sc", 44.955908),
    ("Ti", 47.867),
    ("V", 50.9415),
    ("Cr", 51.9961),
    ("Mn", 54.938044),
    ("Fe", 55.845),
    ("Co", 58.933194),
    ("Ni", 58.6934),
    ("Cu", 63.546),
    ("Zn", 65.38),
    ("Ga", 69.723),
    ("Ge", 72.630),
    ("As", 74.921595),
    ("Se", 78.971),
    ("Br", 79.904),
    ("Kr", 83.798),
    ("Rb", 85.4678),
    ("Sr", 87.62),
    ("Y", 88.90584),
    ("Zr", 91.224),
    ("Nb", 92.90637),
    ("Mo", 95.95),
    ("Tc", 98.0),
    ("Ru", 101.07),
    ("Rh", 102.90550),
    ("Pd", 106.42),
    ("Ag", 107.8682),
    ("Cd", 112.414),
    ("In", 114.818),
    ("Sn", 118.710),
    ("Sb", 121.760),
    ("Te", 127.60),
    ("I", 126.90447),
    ("Xe", 131.293),
];

pub fn symbol(z: u32) -> Result<&'static str> {
    entry(z).map(|e| e.0)
}

pub fn mass(z: u32) -> Result<f64> {
    entry(z).map(|e| e.1)
}

/// Case-sensitive lookup ("Fe", not "FE").
pub fn atomic_number(symbol: &str) -> Option<u32> {
    TABLE.iter().position(|(s, _)| *s == symbol).map(|p| p as u32 + 1)
}

fn entry(z: u32) -> Result<&'static (&'static str, f64)> {
    if z == 0 || z > MAX_ATOMIC_NUMBER {
        return Err(Error::UnsupportedElement(z));
    }
    Ok(&TABLE[z as usize - 1])
}
