//! Plain-text mesh files and legacy ASCII VTK export/import.
//!
//! Mesh file: first line `nv nt`, then `nv` lines `x y flag`, then `nt` lines
//! `i j k` (0-based). Floats are written in shortest round-trip form so a
//! written file re-imports bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn fields<T: std::str::FromStr>(line: usize, text: &str, count: usize, what: &str) -> Result<Vec<T>> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    if parts.len() != count {
        return Err(parse_err(line, format!("expected {count} values for {what}, found {}", parts.len())));
    }
    parts
        .iter()
        .map(|p| p.parse::<T>().map_err(|_| parse_err(line, format!("cannot parse `{p}` in {what}"))))
        .collect()
}

/// Parses a mesh file. Clockwise triangles are reoriented; degenerate ones
/// and inconsistent boundary flags are rejected by [`Mesh::new`].
pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = content_lines(text);
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty mesh file"))?;
    let counts: Vec<usize> = fields(hl, header, 2, "header `nv nt`")?;
    let (nv, nt) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    let mut boundary = Vec::with_capacity(nv);
    for k in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(hl, format!("file ends after {k} of {nv} vertices")))?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_err(ln, format!("expected `x y flag`, found {} values", parts.len())));
        }
        let x: f64 = parts[0].parse().map_err(|_| parse_err(ln, format!("cannot parse x `{}`", parts[0])))?;
        let y: f64 = parts[1].parse().map_err(|_| parse_err(ln, format!("cannot parse y `{}`", parts[1])))?;
        let flag = match parts[2] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(ln, format!("boundary flag must be 0 or 1, got `{other}`"))),
        };
        if !(x.is_finite() && y.is_finite()) {
            return Err(parse_err(ln, "non-finite vertex coordinate"));
        }
        vertices.push(Point::new(x, y));
        boundary.push(flag);
    }
    let mut triangles = Vec::with_capacity(nt);
    for k in 0..nt {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(hl, format!("file ends after {k} of {nt} triangles")))?;
        let idx: Vec<usize> = fields(ln, l, 3, "triangle `i j k`")?;
        if let Some(bad) = idx.iter().find(|&&i| i >= nv) {
            return Err(parse_err(ln, format!("vertex index {bad} out of range (nv = {nv})")));
        }
        let mut tri = [idx[0], idx[1], idx[2]];
        let [a, b, c] = tri.map(|i| vertices[i]);
        let cross = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
        if cross < 0.0 {
            tri.swap(1, 2);
        }
        triangles.push(tri);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "unexpected content after the last triangle"));
    }
    Mesh::new(vertices, triangles, boundary)
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    parse_mesh(&std::fs::read_to_string(path)?)
}

pub fn format_mesh(mesh: &Mesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", mesh.num_vertices(), mesh.num_triangles());
    for (v, &b) in mesh.vertices().iter().zip(mesh.boundary_flags()) {
        let _ = writeln!(out, "{:e} {:e} {}", v.x, v.y, u8::from(b));
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
    }
    out
}

pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, format_mesh(mesh))?;
    Ok(())
}

/// Named scalar fields attached to a mesh for VTK export.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VtkFields {
    pub point_data: Vec<(String, Vec<f64>)>,
    pub cell_data: Vec<(String, Vec<f64>)>,
}

impl VtkFields {
    pub fn point(mut self, name: &str, values: &[f64]) -> Self {
        self.point_data.push((name.to_string(), values.to_vec()));
        self
    }

    pub fn cell(mut self, name: &str, values: &[f64]) -> Self {
        self.cell_data.push((name.to_string(), values.to_vec()));
        self
    }

    pub fn point_field(&self, name: &str) -> Option<&[f64]> {
        self.point_data.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn cell_field(&self, name: &str) -> Option<&[f64]> {
        self.cell_data.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(char::is_whitespace)
}

/// Legacy ASCII `UNSTRUCTURED_GRID` with scalar point and cell data.
pub fn format_vtk(mesh: &Mesh, fields: &VtkFields, title: &str) -> Result<String> {
    for (name, values) in &fields.point_data {
        if !valid_name(name) {
            return Err(Error::invalid(format!("invalid VTK field name `{name}`")));
        }
        if values.len() != mesh.num_vertices() {
            return Err(Error::invalid(format!(
                "point field `{name}` has {} values, mesh has {} vertices",
                values.len(),
                mesh.num_vertices()
            )));
        }
    }
    for (name, values) in &fields.cell_data {
        if !valid_name(name) {
            return Err(Error::invalid(format!("invalid VTK field name `{name}`")));
        }
        if values.len() != mesh.num_triangles() {
            return Err(Error::invalid(format!(
                "cell field `{name}` has {} values, mesh has {} triangles",
                values.len(),
                mesh.num_triangles()
            )));
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "{}", title.lines().next().unwrap_or(""));
    let _ = writeln!(out, "ASCII");
    let _ = writeln!(out, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(out, "POINTS {} double", mesh.num_vertices());
    for v in mesh.vertices() {
        let _ = writeln!(out, "{:e} {:e} 0", v.x, v.y);
    }
    let nt = mesh.num_triangles();
    let _ = writeln!(out, "CELLS {nt} {}", 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {nt}");
    for _ in 0..nt {
        let _ = writeln!(out, "5");
    }
    let section = |out: &mut String, header: String, data: &[(String, Vec<f64>)]| {
        if data.is_empty() {
            return;
        }
        let _ = writeln!(out, "{header}");
        for (name, values) in data {
            let _ = writeln!(out, "SCALARS {name} double 1");
            let _ = writeln!(out, "LOOKUP_TABLE default");
            for v in values {
                let _ = writeln!(out, "{v:e}");
            }
        }
    };
    section(&mut out, format!("POINT_DATA {}", mesh.num_vertices()), &fields.point_data);
    section(&mut out, format!("CELL_DATA {nt}"), &fields.cell_data);
    Ok(out)
}

pub fn write_vtk(mesh: &Mesh, fields: &VtkFields, title: &str, path: &Path) -> Result<()> {
    std::fs::write(path, format_vtk(mesh, fields, title)?)?;
    Ok(())
}

/// Geometry and fields read back from a file written by [`format_vtk`].
#[derive(Debug, Clone, PartialEq)]
pub struct VtkContents {
    pub points: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub fields: VtkFields,
}

struct Tokens<'a> {
    inner: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(lines: impl Iterator<Item = (usize, &'a str)>) -> Self {
        let inner = lines.flat_map(|(n, l)| l.split_whitespace().map(move |t| (n, t))).collect();
        Tokens { inner, pos: 0 }
    }

    fn line(&self) -> usize {
        self.inner.get(self.pos).or(self.inner.last()).map_or(0, |t| t.0)
    }

    fn next(&mut self) -> Result<&'a str> {
        let t = self.inner.get(self.pos).ok_or_else(|| parse_err(self.line(), "unexpected end of file"))?;
        self.pos += 1;
        Ok(t.1)
    }

    fn peek(&self) -> Option<&'a str> {
        self.inner.get(self.pos).map(|t| t.1)
    }

    fn expect(&mut self, keyword: &str) -> Result<()> {
        let line = self.line();
        let t = self.next()?;
        if t != keyword {
            return Err(parse_err(line, format!("expected `{keyword}`, found `{t}`")));
        }
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&mut self) -> Result<T> {
        let line = self.line();
        let t = self.next()?;
        t.parse().map_err(|_| parse_err(line, format!("cannot parse `{t}`")))
    }
}

fn read_scalars(tokens: &mut Tokens, count: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::new();
    while tokens.peek() == Some("SCALARS") {
        tokens.next()?;
        let name = tokens.next()?.to_string();
        tokens.next()?;
        if tokens.peek().is_some_and(|t| t.parse::<usize>().is_ok()) {
            tokens.next()?;
        }
        if tokens.peek() == Some("LOOKUP_TABLE") {
            tokens.next()?;
            tokens.next()?;
        }
        let values = (0..count).map(|_| tokens.parse::<f64>()).collect::<Result<Vec<_>>>()?;
        out.push((name, values));
    }
    Ok(out)
}

pub fn parse_vtk(text: &str) -> Result<VtkContents> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.starts_with("# vtk DataFile") => {}
        _ => return Err(parse_err(1, "missing `# vtk DataFile` header")),
    }
    lines.next().ok_or_else(|| parse_err(2, "missing title line"))?;
    let mut tokens = Tokens::new(lines.filter(|(_, l)| !l.trim().is_empty()));
    tokens.expect("ASCII")?;
    tokens.expect("DATASET")?;
    tokens.expect("UNSTRUCTURED_GRID")?;
    tokens.expect("POINTS")?;
    let nv: usize = tokens.parse()?;
    tokens.next()?;
    let mut points = Vec::with_capacity(nv);
    for _ in 0..nv {
        let x: f64 = tokens.parse()?;
        let y: f64 = tokens.parse()?;
        let _z: f64 = tokens.parse()?;
        points.push(Point::new(x, y));
    }
    tokens.expect("CELLS")?;
    let nt: usize = tokens.parse()?;
    let _size: usize = tokens.parse()?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let line = tokens.line();
        let k: usize = tokens.parse()?;
        if k != 3 {
            return Err(parse_err(line, format!("only triangles are supported, found a cell with {k} vertices")));
        }
        triangles.push([tokens.parse()?, tokens.parse()?, tokens.parse()?]);
    }
    tokens.expect("CELL_TYPES")?;
    let _: usize = tokens.parse()?;
    for _ in 0..nt {
        let line = tokens.line();
        let ty: u32 = tokens.parse()?;
        if ty != 5 {
            return Err(parse_err(line, format!("unsupported cell type {ty}")));
        }
    }
    let mut fields = VtkFields::default();
    while let Some(section) = tokens.peek() {
        let line = tokens.line();
        tokens.next()?;
        let count: usize = tokens.parse()?;
        match section {
            "POINT_DATA" if count == nv => fields.point_data.extend(read_scalars(&mut tokens, count)?),
            "CELL_DATA" if count == nt => fields.cell_data.extend(read_scalars(&mut tokens, count)?),
            other => return Err(parse_err(line, format!("unexpected section `{other} {count}`"))),
        }
    }
    Ok(VtkContents { points, triangles, fields })
}

pub fn read_vtk(path: &Path) -> Result<VtkContents> {
    parse_vtk(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_structured_mesh, Rectangle};

    #[test]
    fn mesh_file_round_trip() {
        let mesh = build_structured_mesh(3, Rectangle { x0: -0.1, y0: 0.0, x1: 1.3, y1: 0.7 }).unwrap();
        let back = parse_mesh(&format_mesh(&mesh)).unwrap();
        assert_eq!(back.vertices(), mesh.vertices());
        assert_eq!(back.triangles(), mesh.triangles());
        assert_eq!(back.boundary_flags(), mesh.boundary_flags());
    }

    #[test]
    fn clockwise_triangle_is_reoriented() {
        let text = "3 1\n0 0 1\n1 0 1\n0 1 1\n0 2 1\n";
        let mesh = parse_mesh(text).unwrap();
        assert_eq!(mesh.triangles()[0], [0, 1, 2]);
        assert!((mesh.area(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mesh_parse_errors_carry_line_numbers() {
        match parse_mesh("3 1\n0 0 1\n1 zero 1\n0 1 1\n0 1 2\n") {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_mesh("3 1\n0 0 1\n1 0 1\n0 1 1\n0 1 5\n"), Err(Error::Parse { line: 5, .. })));
        assert!(matches!(parse_mesh("3 1\n0 0 1\n1 0 1\n0 1 1\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn vtk_round_trip_is_exact() {
        let mesh = build_structured_mesh(4, Rectangle::UNIT_SQUARE).unwrap();
        let y: Vec<f64> = (0..mesh.num_vertices()).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let u: Vec<f64> = (0..mesh.num_triangles()).map(|i| 1e-300 * i as f64 - 0.1).collect();
        let fields = VtkFields::default().point("y", &y).cell("u", &u);
        let back = parse_vtk(&format_vtk(&mesh, &fields, "test").unwrap()).unwrap();
        assert_eq!(back.points, mesh.vertices());
        assert_eq!(back.triangles, mesh.triangles());
        assert_eq!(back.fields, fields);
    }

    #[test]
    fn vtk_rejects_wrong_length() {
        let mesh = build_structured_mesh(2, Rectangle::UNIT_SQUARE).unwrap();
        let fields = VtkFields::default().point("y", &[0.0; 3]);
        assert!(format_vtk(&mesh, &fields, "t").is_err());
    }
}
