use std::fmt::Write as _;
use std::path::Path;

use super::cloud::PointCloud;
use crate::error::{Error, Result};

/// Parses whitespace-separated ASCII points, one per line. Lines starting
/// with `#` and blank lines are skipped; columns past the third are ignored.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let mut p = [0.0f64; 3];
        let mut toks = l.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty());
        for (axis, v) in p.iter_mut().enumerate() {
            let tok = toks.next().ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected 3 coordinates, found {axis}"),
            })?;
            *v = tok.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("invalid coordinate '{tok}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "non-finite coordinate".into(),
                });
            }
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::Empty("xyz file has no points"));
    }
    PointCloud::new(points)
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text)
}

/// Formats with the shortest representation that reads back to the same `f64`.
pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    s
}

pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_xyz(cloud)).map_err(|e| Error::io(path, e))
}
