use std::path::Path;

use rand::Rng;

use super::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::Point3;

/// Triangle mesh read from an OFF file. Polygonal faces are fan-triangulated.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| parse_err(line, format!("invalid {what} '{tok}'")))
}

/// Parses the OFF subset: an `OFF` header (counts may follow on the same
/// line), a `V F E` count line, `V` vertex lines and `F` face lines of the form
/// `n i₁ … iₙ`. Blank lines and `#` comments are skipped.
pub fn parse_off(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty file, expected 'OFF' header"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(hline, format!("expected 'OFF' header, found '{header}'")))?
        .trim();
    let (cline, counts) = if rest.is_empty() {
        lines.next().ok_or_else(|| parse_err(hline + 1, "missing vertex/face counts"))?
    } else {
        (hline, rest)
    };
    let c: Vec<&str> = counts.split_whitespace().collect();
    if c.len() < 2 {
        return Err(parse_err(cline, format!("expected 'V F E' counts, found '{counts}'")));
    }
    let nv: usize = parse_num(c[0], cline, "vertex count")?;
    let nf: usize = parse_num(c[1], cline, "face count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(text.lines().count() + 1, format!("expected {nv} vertices, found {}", vertices.len())))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < 3 {
            return Err(parse_err(ln, "vertex needs 3 coordinates"));
        }
        let mut p = [0.0f64; 3];
        for i in 0..3 {
            p[i] = parse_num(t[i], ln, "coordinate")?;
            if !p[i].is_finite() {
                return Err(parse_err(ln, "non-finite coordinate"));
            }
        }
        vertices.push(p);
    }

    let mut triangles = Vec::with_capacity(nf);
    for f in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(text.lines().count() + 1, format!("expected {nf} faces, found {f}")))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        let n: usize = parse_num(t[0], ln, "face size")?;
        if n < 3 || t.len() < n + 1 {
            return Err(parse_err(ln, format!("face needs at least 3 indices and {n} listed")));
        }
        let mut idx = Vec::with_capacity(n);
        for tok in &t[1..=n] {
            let i: usize = parse_num(tok, ln, "vertex index")?;
            if i >= nv {
                return Err(parse_err(ln, format!("vertex index {i} out of range (V = {nv})")));
            }
            idx.push(i);
        }
        for j in 1..n - 1 {
            triangles.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    Ok(Mesh { vertices, triangles })
}

pub fn read_off(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_off(&text)
}

fn triangle_area(a: Point3, b: Point3, c: Point3) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let x = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// Draws `n` points from the mesh surface: a triangle with probability
/// proportional to its area, then a uniform point inside it.
pub fn sample_mesh<R: Rng + ?Sized>(mesh: &Mesh, n: usize, rng: &mut R) -> Result<PointCloud> {
    if mesh.triangles.is_empty() {
        return Err(Error::Empty("mesh has no faces"));
    }
    if n == 0 {
        return Err(Error::Empty("sample count"));
    }
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        total += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("mesh has zero surface area"));
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen::<f64>() * total;
        let i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let [a, b, c] = mesh.triangles[i].map(|v| mesh.vertices[v]);
        let s = rng.gen::<f64>().sqrt();
        let r = rng.gen::<f64>();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r), s * r);
        points.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
    }
    PointCloud::new(points)
}
