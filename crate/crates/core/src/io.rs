//! Cloud and transform file I/O.
//!
//! Clouds: PLY 1.0 (ascii and binary_little_endian; binary coordinates are
//! 32-bit floats) and plain XYZ text (`x y z` per line, `#` comments). Only
//! the `vertex` element of a PLY file is read — coordinates from `x,y,z`,
//! optional normals from `nx,ny,nz`; other elements and extra vertex
//! properties are skipped (skipped elements with a warning).
//!
//! Transforms: a 4-line text file, one row of the homogeneous 4×4 matrix per
//! line, written with 17 significant digits so values round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud, Vec3};
use crate::se3::RigidTransform;

/// On-disk encodings for `save_cloud`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Scalar property types a PLY header may declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyScalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => PlyScalar::I8,
            "uchar" | "uint8" => PlyScalar::U8,
            "short" | "int16" => PlyScalar::I16,
            "ushort" | "uint16" => PlyScalar::U16,
            "int" | "int32" => PlyScalar::I32,
            "uint" | "uint32" => PlyScalar::U32,
            "float" | "float32" => PlyScalar::F32,
            "double" | "float64" => PlyScalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyScalar::I8 | PlyScalar::U8 => 1,
            PlyScalar::I16 | PlyScalar::U16 => 2,
            PlyScalar::I32 | PlyScalar::U32 | PlyScalar::F32 => 4,
            PlyScalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, PlyScalar::F32 | PlyScalar::F64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlyPropertyKind {
    Scalar(PlyScalar),
    List { count: PlyScalar, item: PlyScalar },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlyProperty {
    pub name: String,
    pub kind: PlyPropertyKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlyElement {
    pub name: String,
    pub count: usize,
    pub properties: Vec<PlyProperty>,
}

/// Parsed PLY header: format tag plus the declared elements in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlyHeader {
    pub format: PlyFormat,
    pub elements: Vec<PlyElement>,
}

/// Load a cloud, picking the format from the file extension: `.xyz` is plain
/// text, everything else is parsed as PLY.
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let is_xyz = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.eq_ignore_ascii_case("xyz"))
        .unwrap_or(false);
    if is_xyz {
        load_xyz(path)
    } else {
        load_ply(path)
    }
}

/// Write a cloud as PLY in the requested encoding. ASCII uses 9 significant
/// digits; binary stores coordinates (and normals) as little-endian `f32`.
pub fn save_cloud(cloud: &PointCloud, path: &Path, format: PlyFormat) -> Result<()> {
    let n = cloud.len();
    let mut header = String::new();
    header.push_str("ply\n");
    header.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let _ = writeln!(header, "element vertex {n}");
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.has_normals() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    header.push_str("end_header\n");

    let mut out: Vec<u8> = header.into_bytes();
    match format {
        PlyFormat::Ascii => {
            let mut body = String::new();
            for i in 0..n {
                let p = cloud.point(i);
                let _ = write!(body, "{:.8e} {:.8e} {:.8e}", p.x, p.y, p.z);
                if let Some(ns) = cloud.normals() {
                    let v = ns[i];
                    let _ = write!(body, " {:.8e} {:.8e} {:.8e}", v.x, v.y, v.z);
                }
                body.push('\n');
            }
            out.extend_from_slice(body.as_bytes());
        }
        PlyFormat::BinaryLittleEndian => {
            for i in 0..n {
                let p = cloud.point(i);
                for c in [p.x, p.y, p.z] {
                    out.extend_from_slice(&(c as f32).to_le_bytes());
                }
                if let Some(ns) = cloud.normals() {
                    let v = ns[i];
                    for c in [v.x, v.y, v.z] {
                        out.extend_from_slice(&(c as f32).to_le_bytes());
                    }
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a PLY file (ascii or binary_little_endian).
pub fn load_ply(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let pathname = path.display().to_string();
    let (header, data_start, header_lines) = parse_ply_header(&bytes, &pathname)?;
    match header.format {
        PlyFormat::Ascii => read_ascii_body(&bytes[data_start..], &header, &pathname, header_lines),
        PlyFormat::BinaryLittleEndian => read_binary_body(&bytes, data_start, &header, &pathname),
    }
}

/// Parse the header; returns it with the byte offset where data starts and
/// the number of header lines consumed.
pub fn parse_ply_header(bytes: &[u8], pathname: &str) -> Result<(PlyHeader, usize, usize)> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut format: Option<PlyFormat> = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_magic = false;
    let mut ended = false;

    while pos < bytes.len() {
        let eol = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .unwrap_or(bytes.len());
        let raw = &bytes[pos..eol];
        let next_pos = (eol + 1).min(bytes.len().max(eol));
        line_no += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| Error::parse_line(pathname, line_no, "header is not valid utf-8"))?
            .trim_end_matches('\r');
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next().unwrap_or("");

        if line_no == 1 {
            if line.trim() != "ply" {
                return Err(Error::parse_line(pathname, 1, "missing 'ply' magic line"));
            }
            saw_magic = true;
            pos = next_pos;
            continue;
        }
        match keyword {
            "comment" | "obj_info" | "" => {}
            "format" => {
                let kind = tokens.next().unwrap_or("");
                let version = tokens.next().unwrap_or("");
                if version != "1.0" {
                    return Err(Error::parse_line(
                        pathname,
                        line_no,
                        format!("unsupported PLY version '{version}'"),
                    ));
                }
                format = Some(match kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(Error::parse_line(
                            pathname,
                            line_no,
                            format!("unsupported PLY format '{other}'"),
                        ))
                    }
                });
            }
            "element" => {
                let name = tokens
                    .next()
                    .ok_or_else(|| Error::parse_line(pathname, line_no, "element without name"))?;
                let count: usize = tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| {
                    Error::parse_line(pathname, line_no, "element without a valid count")
                })?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let element = elements.last_mut().ok_or_else(|| {
                    Error::parse_line(pathname, line_no, "property before any element")
                })?;
                let first = tokens
                    .next()
                    .ok_or_else(|| Error::parse_line(pathname, line_no, "property without type"))?;
                let kind = if first == "list" {
                    let count_ty = tokens.next().and_then(PlyScalar::parse).ok_or_else(|| {
                        Error::parse_line(pathname, line_no, "bad list count type")
                    })?;
                    let item_ty = tokens.next().and_then(PlyScalar::parse).ok_or_else(|| {
                        Error::parse_line(pathname, line_no, "bad list item type")
                    })?;
                    if !count_ty.is_integer() {
                        return Err(Error::parse_line(
                            pathname,
                            line_no,
                            "list count type must be an integer type",
                        ));
                    }
                    PlyPropertyKind::List {
                        count: count_ty,
                        item: item_ty,
                    }
                } else {
                    let ty = PlyScalar::parse(first).ok_or_else(|| {
                        Error::parse_line(
                            pathname,
                            line_no,
                            format!("unknown property type '{first}'"),
                        )
                    })?;
                    PlyPropertyKind::Scalar(ty)
                };
                let name = tokens
                    .next()
                    .ok_or_else(|| Error::parse_line(pathname, line_no, "property without name"))?;
                element.properties.push(PlyProperty {
                    name: name.to_string(),
                    kind,
                });
            }
            "end_header" => {
                pos = next_pos;
                ended = true;
                break;
            }
            other => {
                return Err(Error::parse_line(
                    pathname,
                    line_no,
                    format!("unknown header keyword '{other}'"),
                ));
            }
        }
        pos = next_pos;
    }
    if !saw_magic || !ended {
        return Err(Error::parse_line(pathname, line_no, "truncated PLY header"));
    }
    let format =
        format.ok_or_else(|| Error::parse_line(pathname, line_no, "header has no format line"))?;
    Ok((PlyHeader { format, elements }, pos, line_no))
}

/// Column layout of the vertex element: indices of the coordinate and normal
/// properties, validated to be scalar floats.
struct VertexLayout {
    xyz: [usize; 3],
    normals: Option<[usize; 3]>,
}

fn vertex_layout(element: &PlyElement, pathname: &str) -> Result<VertexLayout> {
    let find = |name: &str| element.properties.iter().position(|p| p.name == name);
    let mut xyz = [0usize; 3];
    for (slot, name) in ["x", "y", "z"].iter().enumerate() {
        let idx = find(name).ok_or_else(|| Error::Parse {
            path: pathname.to_string(),
            location: "header".to_string(),
            message: format!("vertex element is missing required property '{name}'"),
        })?;
        match element.properties[idx].kind {
            PlyPropertyKind::Scalar(s) if !s.is_integer() => {}
            _ => {
                return Err(Error::Parse {
                    path: pathname.to_string(),
                    location: "header".to_string(),
                    message: format!("vertex property '{name}' must be a scalar float or double"),
                })
            }
        }
        xyz[slot] = idx;
    }
    let normal_idx: Vec<Option<usize>> = ["nx", "ny", "nz"].iter().map(|n| find(n)).collect();
    let normals = if normal_idx.iter().all(|i| i.is_some()) {
        let ids = [
            normal_idx[0].unwrap(),
            normal_idx[1].unwrap(),
            normal_idx[2].unwrap(),
        ];
        for &idx in &ids {
            match element.properties[idx].kind {
                PlyPropertyKind::Scalar(s) if !s.is_integer() => {}
                _ => {
                    return Err(Error::Parse {
                        path: pathname.to_string(),
                        location: "header".to_string(),
                        message: "normal properties must be scalar float or double".to_string(),
                    })
                }
            }
        }
        Some(ids)
    } else {
        None
    };
    Ok(VertexLayout { xyz, normals })
}

/// Assemble the cloud, applying the all-or-nothing normal policy: if any row
/// carries a zero-length normal the whole normal channel is dropped (with a
/// warning); otherwise normals are renormalized to exactly unit length.
fn finish_cloud(points: Vec<Point3>, raw_normals: Option<Vec<Vec3>>) -> Result<PointCloud> {
    if let Some(normals) = raw_normals {
        let mut unit = Vec::with_capacity(normals.len());
        let mut ok = true;
        for n in &normals {
            let norm = n.norm();
            if norm < 1e-12 {
                ok = false;
                break;
            }
            unit.push(n / norm);
        }
        if ok {
            return PointCloud::with_normals(points, unit);
        }
        log::warn!("dropping normals: at least one row has a zero-length normal");
    }
    PointCloud::new(points)
}

fn read_ascii_body(
    data: &[u8],
    header: &PlyHeader,
    pathname: &str,
    header_lines: usize,
) -> Result<PointCloud> {
    let text = std::str::from_utf8(data).map_err(|_| Error::Parse {
        path: pathname.to_string(),
        location: "body".to_string(),
        message: "ascii body is not valid utf-8".to_string(),
    })?;
    // Non-empty data rows with their absolute file line numbers.
    let mut rows = text
        .lines()
        .enumerate()
        .map(|(i, l)| (header_lines + 1 + i, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let mut points = Vec::new();
    let mut normals: Option<Vec<Vec3>> = None;
    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        if !is_vertex && element.count > 0 {
            log::warn!(
                "skipping PLY element '{}' ({} rows)",
                element.name,
                element.count
            );
        }
        let layout = if is_vertex {
            let l = vertex_layout(element, pathname)?;
            if l.normals.is_some() {
                normals = Some(Vec::with_capacity(element.count));
            }
            points.reserve(element.count);
            Some(l)
        } else {
            None
        };
        for _ in 0..element.count {
            let (line_no, row) = rows.next().ok_or_else(|| {
                Error::parse_line(pathname, header_lines + 1, "unexpected end of data rows")
            })?;
            let Some(layout) = &layout else { continue };
            let tokens: Vec<&str> = row.split_whitespace().collect();
            let mut values = vec![f64::NAN; element.properties.len()];
            let mut cursor = 0usize;
            for (pi, prop) in element.properties.iter().enumerate() {
                match prop.kind {
                    PlyPropertyKind::Scalar(_) => {
                        let tok = tokens.get(cursor).ok_or_else(|| {
                            Error::parse_line(pathname, line_no, "row has too few values")
                        })?;
                        values[pi] = tok.parse::<f64>().map_err(|_| {
                            Error::parse_line(pathname, line_no, format!("bad number '{tok}'"))
                        })?;
                        cursor += 1;
                    }
                    PlyPropertyKind::List { .. } => {
                        let tok = tokens.get(cursor).ok_or_else(|| {
                            Error::parse_line(pathname, line_no, "row has too few values")
                        })?;
                        let count: usize = tok.parse().map_err(|_| {
                            Error::parse_line(pathname, line_no, format!("bad list count '{tok}'"))
                        })?;
                        cursor += 1 + count;
                        if cursor > tokens.len() {
                            return Err(Error::parse_line(
                                pathname,
                                line_no,
                                "row has too few values for its list",
                            ));
                        }
                    }
                }
            }
            if cursor != tokens.len() {
                return Err(Error::parse_line(
                    pathname,
                    line_no,
                    "trailing values on row",
                ));
            }
            let p = Point3::new(
                values[layout.xyz[0]],
                values[layout.xyz[1]],
                values[layout.xyz[2]],
            );
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::parse_line(
                    pathname,
                    line_no,
                    "non-finite coordinate",
                ));
            }
            points.push(p);
            if let (Some(ids), Some(out)) = (&layout.normals, normals.as_mut()) {
                out.push(Vec3::new(values[ids[0]], values[ids[1]], values[ids[2]]));
            }
        }
    }
    finish_cloud(points, normals)
}

fn read_binary_body(
    bytes: &[u8],
    data_start: usize,
    header: &PlyHeader,
    pathname: &str,
) -> Result<PointCloud> {
    let mut pos = data_start;
    let mut points = Vec::new();
    let mut normals: Option<Vec<Vec3>> = None;

    let take = |pos: &mut usize, n: usize| -> Result<usize> {
        let start = *pos;
        let end = start
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::parse_byte(pathname, start, "unexpected end of binary data"))?;
        *pos = end;
        Ok(start)
    };
    let read_scalar_f64 = |bytes: &[u8], at: usize, ty: PlyScalar| -> f64 {
        match ty {
            PlyScalar::I8 => bytes[at] as i8 as f64,
            PlyScalar::U8 => bytes[at] as f64,
            PlyScalar::I16 => i16::from_le_bytes([bytes[at], bytes[at + 1]]) as f64,
            PlyScalar::U16 => u16::from_le_bytes([bytes[at], bytes[at + 1]]) as f64,
            PlyScalar::I32 => i32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64,
            PlyScalar::U32 => u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64,
            PlyScalar::F32 => f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64,
            PlyScalar::F64 => f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()),
        }
    };

    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        if !is_vertex && element.count > 0 {
            log::warn!(
                "skipping PLY element '{}' ({} rows)",
                element.name,
                element.count
            );
        }
        let layout = if is_vertex {
            let l = vertex_layout(element, pathname)?;
            if l.normals.is_some() {
                normals = Some(Vec::with_capacity(element.count));
            }
            points.reserve(element.count);
            Some(l)
        } else {
            None
        };
        for _ in 0..element.count {
            let row_start = pos;
            let mut values = vec![f64::NAN; element.properties.len()];
            for (pi, prop) in element.properties.iter().enumerate() {
                match prop.kind {
                    PlyPropertyKind::Scalar(ty) => {
                        let at = take(&mut pos, ty.size())?;
                        if layout.is_some() {
                            values[pi] = read_scalar_f64(bytes, at, ty);
                        }
                    }
                    PlyPropertyKind::List { count, item } => {
                        let at = take(&mut pos, count.size())?;
                        let n = read_scalar_f64(bytes, at, count);
                        if !(n.is_finite() && n >= 0.0) {
                            return Err(Error::parse_byte(pathname, at, "bad list count"));
                        }
                        take(&mut pos, n as usize * item.size())?;
                    }
                }
            }
            let Some(layout) = &layout else { continue };
            let p = Point3::new(
                values[layout.xyz[0]],
                values[layout.xyz[1]],
                values[layout.xyz[2]],
            );
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::parse_byte(
                    pathname,
                    row_start,
                    "non-finite coordinate",
                ));
            }
            points.push(p);
            if let (Some(ids), Some(out)) = (&layout.normals, normals.as_mut()) {
                out.push(Vec3::new(values[ids[0]], values[ids[1]], values[ids[2]]));
            }
        }
    }
    finish_cloud(points, normals)
}

/// Load an XYZ text file: one `x y z` triple per line, `#` starts a comment
/// line, blank lines are ignored.
pub fn load_xyz(path: &Path) -> Result<PointCloud> {
    let pathname = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&pathname, e))?;
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(Error::parse_line(
                &pathname,
                line_no,
                format!("expected 3 values per line, found {}", tokens.len()),
            ));
        }
        let mut coords = [0.0f64; 3];
        for (slot, tok) in tokens.iter().enumerate() {
            coords[slot] = tok.parse().map_err(|_| {
                Error::parse_line(&pathname, line_no, format!("bad number '{tok}'"))
            })?;
            if !coords[slot].is_finite() {
                return Err(Error::parse_line(
                    &pathname,
                    line_no,
                    "non-finite coordinate",
                ));
            }
        }
        points.push(Point3::new(coords[0], coords[1], coords[2]));
    }
    PointCloud::new(points)
}

/// Write a transform as 4 text lines (row-major homogeneous matrix) with 17
/// significant digits, enough for `f64` values to round-trip exactly.
pub fn save_transform(t: &RigidTransform, path: &Path) -> Result<()> {
    let m = t.to_row_major();
    let mut text = String::new();
    for row in 0..4 {
        let _ = writeln!(
            text,
            "{:.16e} {:.16e} {:.16e} {:.16e}",
            m[row * 4],
            m[row * 4 + 1],
            m[row * 4 + 2],
            m[row * 4 + 3]
        );
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a transform written by [`save_transform`]. The bottom row must be
/// `(0,0,0,1)` within `1e-12` and the rotation block must be a proper
/// rotation.
pub fn load_transform(path: &Path) -> Result<RigidTransform> {
    let pathname = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&pathname, e))?;
    let mut values = [0.0f64; 16];
    let mut row = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if row >= 4 {
            return Err(Error::parse_line(
                &pathname,
                line_no,
                "more than 4 matrix rows",
            ));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 4 {
            return Err(Error::parse_line(
                &pathname,
                line_no,
                format!("expected 4 values per row, found {}", tokens.len()),
            ));
        }
        for (col, tok) in tokens.iter().enumerate() {
            values[row * 4 + col] = tok.parse().map_err(|_| {
                Error::parse_line(&pathname, line_no, format!("bad number '{tok}'"))
            })?;
        }
        row += 1;
    }
    if row != 4 {
        return Err(Error::parse_line(
            &pathname,
            1,
            format!("expected 4 matrix rows, found {row}"),
        ));
    }
    RigidTransform::from_row_major(&values).map_err(|e| Error::Parse {
        path: pathname,
        location: "matrix".to_string(),
        message: e.to_string(),
    })
}
