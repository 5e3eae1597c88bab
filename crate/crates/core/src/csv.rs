//! Minimal CSV writing. Floats use Rust's shortest round-trip formatting, so
//! output is byte-stable across runs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

pub(crate) fn join(cells: &[f64]) -> String {
    let mut s = String::new();
    for (i, c) in cells.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let a = c.abs();
        if a != 0.0 && !(1e-5..1e16).contains(&a) {
            let _ = write!(s, "{c:e}");
        } else {
            let _ = write!(s, "{c}");
        }
    }
    s
}

pub(crate) fn write(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
