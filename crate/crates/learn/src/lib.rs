//! Function approximation and heterogeneous-agent trainers.

pub mod error;
pub mod happo;
pub mod hasac;
pub mod neural;

pub use error::{LearnError, Result};

/// Named flat parameter arrays, the unit of checkpoint storage.
pub type NamedArrays = Vec<(String, Vec<f64>)>;

/// Looks up a named array, checking its length when `len` is given.
pub fn take<'a>(arrays: &'a [(String, Vec<f64>)], name: &str, len: Option<usize>) -> Result<&'a [f64]> {
    let (_, values) = arrays
        .iter()
        .find(|(n, _)| n == name)
        .ok_or_else(|| LearnError::Snapshot(format!("'{name}' not present")))?;
    match len {
        Some(n) if values.len() != n => {
            Err(LearnError::Snapshot(format!("'{name}' has {} values, expected {n}", values.len())))
        }
        _ => Ok(values),
    }
}
