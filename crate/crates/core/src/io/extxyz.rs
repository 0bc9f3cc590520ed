//! Extended-XYZ reading and writing.
//!
//! Comment-line grammar: whitespace-separated `key=value` pairs, values
//! optionally double-quoted to hold spaces. A comment line without any `=` is
//! a free-form title. Recognized keys: `Properties`, `energy`,
//! `dipole` (3 reals), `polarizability` (9 reals, row-major),
//! `dipole_magnitude`, `spatial_extent`; other keys are ignored.

use std::fmt::Write as _;

use crate::elements;
use crate::error::{Error, Result};
use crate::geometry::{AtomicSystem, Labels, Mat3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Real,
    Int,
    Str,
    Logical,
}

struct Column {
    name: String,
    kind: Kind,
    count: usize,
}

fn parse_properties(desc: &str, line: usize) -> Result<Vec<Column>> {
    let parts: Vec<&str> = desc.split(':').collect();
    if !parts.len().is_multiple_of(3) || parts.is_empty() {
        return Err(Error::parse(line, "Properties must be name:type:count triples"));
    }
    let mut cols = Vec::new();
    for t in parts.chunks(3) {
        let kind = match t[1] {
            "R" => Kind::Real,
            "I" => Kind::Int,
            "S" => Kind::Str,
            "L" => Kind::Logical,
            other => return Err(Error::parse(line, format!("unknown column type `{other}`"))),
        };
        let count: usize = t[2]
            .parse()
            .ok()
            .filter(|&c| (1..=64).contains(&c))
            .ok_or_else(|| Error::parse(line, format!("bad column count `{}`", t[2])))?;
        if t[0].is_empty() || cols.iter().any(|c: &Column| c.name == t[0]) {
            return Err(Error::parse(line, format!("bad or duplicate column name `{}`", t[0])));
        }
        cols.push(Column {
            name: t[0].to_string(),
            kind,
            count,
        });
    }
    let species_ok = cols
        .first()
        .is_some_and(|c| c.name == "species" && c.kind == Kind::Str && c.count == 1);
    let pos_ok = cols
        .get(1)
        .is_some_and(|c| c.name == "pos" && c.kind == Kind::Real && c.count == 3);
    if !species_ok || !pos_ok {
        return Err(Error::parse(line, "Properties must start with species:S:1:pos:R:3"));
    }
    if let Some(f) = cols.iter().find(|c| c.name == "forces") {
        if f.kind != Kind::Real || f.count != 3 {
            return Err(Error::parse(line, "forces column must be R:3"));
        }
    }
    Ok(cols)
}

/// Split a comment line into `key=value` pairs.
fn parse_comment(text: &str, line: usize) -> Result<Vec<(String, String)>> {
    if !text.contains('=') {
        return Ok(Vec::new());
    }
    let mut pairs = Vec::new();
    let mut chars = text.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            return Ok(pairs);
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        let valid_key = key.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !valid_key {
            return Err(Error::parse(line, format!("invalid key `{key}`")));
        }
        if chars.next() != Some('=') {
            return Err(Error::parse(line, format!("key `{key}` has no value")));
        }
        let mut value = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(c) => value.push(c),
                    None => return Err(Error::parse(line, format!("unterminated quote for `{key}`"))),
                }
            }
            if chars.peek().is_some_and(|c| !c.is_whitespace()) {
                return Err(Error::parse(line, format!("junk after quoted value of `{key}`")));
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                if c == '"' || c == '=' {
                    return Err(Error::parse(line, format!("unexpected `{c}` in value of `{key}`")));
                }
                value.push(c);
                chars.next();
            }
            if value.is_empty() {
                return Err(Error::parse(line, format!("empty value for `{key}`")));
            }
        }
        if pairs.iter().any(|(k, _)| *k == key) {
            return Err(Error::parse(line, format!("duplicate key `{key}`")));
        }
        pairs.push((key, value));
    }
}

fn real(s: &str, line: usize, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::parse(line, format!("{what}: `{s}` is not a number")))
}

fn reals(s: &str, n: usize, line: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split_whitespace()
        .map(|t| real(t, line, what))
        .collect::<Result<_>>()?;
    if v.len() != n {
        return Err(Error::parse(line, format!("{what} needs {n} values, got {}", v.len())));
    }
    Ok(v)
}

/// Parse every frame in `text`.
pub fn parse_extxyz(text: &str) -> Result<Vec<AtomicSystem>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let count_line = i + 1;
        let n: usize = lines[i]
            .trim()
            .parse()
            .map_err(|_| Error::parse(count_line, format!("expected an atom count, got `{}`", lines[i].trim())))?;
        if n == 0 {
            return Err(Error::parse(count_line, "frame declares zero atoms"));
        }
        let available = lines.len() - i - 1;
        if available == 0 || available - 1 < n {
            return Err(Error::parse(
                count_line,
                format!(
                    "frame declares {n} atoms but only {} rows follow",
                    available.saturating_sub(1)
                ),
            ));
        }
        let comment_line = i + 2;
        let pairs = parse_comment(lines[i + 1], comment_line)?;
        let mut columns = None;
        let mut labels = Labels::default();
        for (key, value) in &pairs {
            match key.as_str() {
                "Properties" | "properties" => columns = Some(parse_properties(value, comment_line)?),
                "energy" => labels.energy = Some(real(value, comment_line, "energy")?),
                "dipole" => {
                    let v = reals(value, 3, comment_line, "dipole")?;
                    labels.dipole = Some([v[0], v[1], v[2]]);
                }
                "polarizability" => {
                    let v = reals(value, 9, comment_line, "polarizability")?;
                    let mut m: Mat3 = [[0.0; 3]; 3];
                    for (k, x) in v.into_iter().enumerate() {
                        m[k / 3][k % 3] = x;
                    }
                    labels.polarizability = Some(m);
                }
                "dipole_magnitude" => labels.dipole_magnitude = Some(real(value, comment_line, "dipole_magnitude")?),
                "spatial_extent" => labels.spatial_extent = Some(real(value, comment_line, "spatial_extent")?),
                _ => {}
            }
        }
        let columns = match columns {
            Some(c) => c,
            None => parse_properties("species:S:1:pos:R:3", comment_line)?,
        };
        let width: usize = columns.iter().map(|c| c.count).sum();
        let mut atomic_numbers = Vec::new();
        let mut positions: Vec<Vec3> = Vec::new();
        let mut forces: Option<Vec<Vec3>> = columns.iter().any(|c| c.name == "forces").then(Vec::new);
        for row in 0..n {
            let line_no = comment_line + 1 + row;
            let fields: Vec<&str> = lines[i + 2 + row].split_whitespace().collect();
            if fields.len() != width {
                return Err(Error::parse(
                    line_no,
                    format!("expected {width} columns, found {}", fields.len()),
                ));
            }
            let mut at = 0;
            for col in &columns {
                let cell = &fields[at..at + col.count];
                at += col.count;
                match col.name.as_str() {
                    "species" => {
                        let z = elements::atomic_number(cell[0])
                            .ok_or_else(|| Error::parse(line_no, format!("unknown element `{}`", cell[0])))?;
                        atomic_numbers.push(z);
                    }
                    "pos" => positions.push([
                        real(cell[0], line_no, "position")?,
                        real(cell[1], line_no, "position")?,
                        real(cell[2], line_no, "position")?,
                    ]),
                    "forces" => {
                        let f = [
                            real(cell[0], line_no, "force")?,
                            real(cell[1], line_no, "force")?,
                            real(cell[2], line_no, "force")?,
                        ];
                        forces.as_mut().expect("forces column").push(f);
                    }
                    _ => {
                        for s in cell {
                            let ok = match col.kind {
                                Kind::Real => s.parse::<f64>().is_ok(),
                                Kind::Int => s.parse::<i64>().is_ok(),
                                Kind::Logical => matches!(*s, "T" | "F" | "True" | "False"),
                                Kind::Str => true,
                            };
                            if !ok {
                                return Err(Error::parse(
                                    line_no,
                                    format!("bad value `{s}` in column `{}`", col.name),
                                ));
                            }
                        }
                    }
                }
            }
        }
        labels.forces = forces;
        let system = AtomicSystem {
            atomic_numbers,
            positions,
            labels,
        };
        system.validate().map_err(|e| Error::parse(count_line, e.to_string()))?;
        frames.push(system);
        i += 2 + n;
    }
    Ok(frames)
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Frames with full (17 significant digit) precision.
pub fn write_extxyz(systems: &[AtomicSystem]) -> String {
    let mut out = String::new();
    for s in systems {
        let l = &s.labels;
        let mut props = String::from("species:S:1:pos:R:3");
        if l.forces.is_some() {
            props.push_str(":forces:R:3");
        }
        let _ = writeln!(out, "{}", s.len());
        let _ = write!(out, "Properties={props}");
        if let Some(e) = l.energy {
            let _ = write!(out, " energy={}", fmt(e));
        }
        if let Some(d) = l.dipole {
            let _ = write!(out, " dipole=\"{} {} {}\"", fmt(d[0]), fmt(d[1]), fmt(d[2]));
        }
        if let Some(m) = l.dipole_magnitude {
            let _ = write!(out, " dipole_magnitude={}", fmt(m));
        }
        if let Some(a) = l.polarizability {
            let vals: Vec<String> = a.iter().flatten().map(|&x| fmt(x)).collect();
            let _ = write!(out, " polarizability=\"{}\"", vals.join(" "));
        }
        if let Some(r2) = l.spatial_extent {
            let _ = write!(out, " spatial_extent={}", fmt(r2));
        }
        out.push('\n');
        for (k, (z, r)) in s.atomic_numbers.iter().zip(&s.positions).enumerate() {
            let sym = elements::symbol(*z).unwrap_or("X");
            let _ = write!(out, "{sym} {} {} {}", fmt(r[0]), fmt(r[1]), fmt(r[2]));
            if let Some(f) = &l.forces {
                let _ = write!(out, " {} {} {}", fmt(f[k][0]), fmt(f[k][1]), fmt(f[k][2]));
            }
            out.push('\n');
        }
    }
    out
}
