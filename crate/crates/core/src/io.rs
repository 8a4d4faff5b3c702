//! Plain-text file formats: point clouds, OFF meshes and per-point masks.
//!
//! Point files hold one point per line, `x y z` or `x y z nx ny nz`,
//! whitespace separated. Text after `#` is ignored. Numbers are written in
//! shortest round-trip form, so a write/read cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::TriangleMesh;
use crate::geom::{PointCloud, Vec3};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with comments stripped, paired with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_floats(path: &Path, line: usize, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|tok| match tok.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(parse_error(path, line, format!("not a finite number: '{tok}'"))),
        })
        .collect()
}

/// Parses point-cloud text. `path` is only used in error messages. Normals
/// further than 1e-9 from unit length are rescaled.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut width = None;
    for (line, content) in content_lines(text) {
        let v = parse_floats(path, line, content)?;
        if v.len() != 3 && v.len() != 6 {
            return Err(parse_error(path, line, format!("expected 3 or 6 values, found {}", v.len())));
        }
        if *width.get_or_insert(v.len()) != v.len() {
            return Err(parse_error(path, line, "lines mix 3 and 6 values"));
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
        if v.len() == 6 {
            let n = Vec3::new(v[3], v[4], v[5]);
            let len = n.norm();
            if len == 0.0 {
                return Err(parse_error(path, line, "zero-length normal"));
            }
            normals.push(if (len - 1.0).abs() > 1e-9 { n / len } else { n });
        }
    }
    if points.is_empty() {
        return Err(Error::Data(format!("{}: no points", path.display())));
    }
    if width == Some(6) {
        PointCloud::with_normals(points, normals)
    } else {
        PointCloud::new(points)
    }
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 64);
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(n) = cloud.normals() {
            let _ = write!(out, " {} {} {}", n[i].x, n[i].y, n[i].z);
        }
        out.push('\n');
    }
    out
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    parse_xyz(&read(path)?, path)
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    write(path, &format_xyz(cloud))
}

/// Parses an ASCII OFF mesh. Polygons are fan-triangulated.
pub fn parse_off(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut lines = content_lines(text);
    let (line, header) = lines.next().ok_or_else(|| parse_error(path, 1, "empty file"))?;
    let counts_inline = header.strip_prefix("OFF").ok_or_else(|| parse_error(path, line, "missing OFF header"))?;
    let (line, counts) = if counts_inline.trim().is_empty() {
        lines.next().ok_or_else(|| parse_error(path, line, "missing counts"))?
    } else {
        (line, counts_inline)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_error(path, line, format!("bad count '{t}'"))))
        .collect::<Result<_>>()?;
    let (nv, nf) = match counts[..] {
        [nv, nf, ..] => (nv, nf),
        _ => return Err(parse_error(path, line, "expected vertex and face counts")),
    };
    let mut vertices = Vec::with_capacity(nv);
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nv {
        let (line, content) = lines.next().ok_or_else(|| parse_error(path, line, "too few vertices"))?;
        let v = parse_floats(path, line, content)?;
        if v.len() < 3 {
            return Err(parse_error(path, line, "vertex needs 3 coordinates"));
        }
        vertices.push(Vec3::new(v[0], v[1], v[2]));
    }
    for _ in 0..nf {
        let (line, content) = lines.next().ok_or_else(|| parse_error(path, line, "too few faces"))?;
        let idx: Vec<usize> = content
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_error(path, line, format!("bad index '{t}'"))))
            .collect::<Result<_>>()?;
        let n = *idx.first().ok_or_else(|| parse_error(path, line, "empty face"))?;
        if n < 3 || idx.len() < n + 1 {
            return Err(parse_error(path, line, "face needs at least 3 vertex indices"));
        }
        let face = &idx[1..=n];
        if let Some(bad) = face.iter().find(|&&i| i >= nv) {
            return Err(parse_error(path, line, format!("vertex index {bad} out of range")));
        }
        triangles.extend((1..n - 1).map(|k| [face[0], face[k], face[k + 1]]));
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn format_off(mesh: &TriangleMesh) -> String {
    let mut out = format!("OFF\n{} {} 0\n", mesh.vertices().len(), mesh.triangles().len());
    for v in mesh.vertices() {
        let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    out
}

pub fn read_off(path: &Path) -> Result<TriangleMesh> {
    parse_off(&read(path)?, path)
}

pub fn write_off(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    write(path, &format_off(mesh))
}

/// One `0` or `1` per line.
pub fn parse_mask(text: &str, path: &Path) -> Result<Vec<bool>> {
    content_lines(text)
        .map(|(line, v)| match v {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(parse_error(path, line, format!("expected 0 or 1, found '{v}'"))),
        })
        .collect()
}

pub fn format_mask(mask: &[bool]) -> String {
    mask.iter().map(|&m| if m { "1\n" } else { "0\n" }).collect()
}

pub fn read_mask(path: &Path) -> Result<Vec<bool>> {
    parse_mask(&read(path)?, path)
}

pub fn write_mask(path: &Path, mask: &[bool]) -> Result<()> {
    write(path, &format_mask(mask))
}
