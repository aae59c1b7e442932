//! Scan and trajectory file formats.
//!
//! Scans: PLY (ascii and binary little-endian, vertex properties
//! `x y z [intensity] [ring]`) and headerless little-endian `f32` quadruples
//! (`x y z intensity`). Trajectories: TUM text, one
//! `timestamp tx ty tz qx qy qz qw` line per pose.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::Pose;

#[derive(Debug, Error)]
pub enum CloudIoError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("timestamps not strictly increasing at record {index}")]
    NonMonotonicTimestamp { index: usize },
}

pub type Result<T> = std::result::Result<T, CloudIoError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub position: Vector3<f64>,
    pub intensity: Option<f32>,
    pub ring: Option<u16>,
}

impl ScanPoint {
    pub fn new(position: Vector3<f64>) -> Self {
        Self {
            position,
            intensity: None,
            ring: None,
        }
    }
}

/// One sweep of sensor returns, in the sensor frame. Points of a ring are
/// stored in acquisition (azimuth) order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scan {
    pub points: Vec<ScanPoint>,
    pub timestamp: f64,
}

impl Scan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_organized(&self) -> bool {
        !self.points.is_empty() && self.points.iter().all(|p| p.ring.is_some())
    }

    fn validate(&self) -> Result<()> {
        for (index, p) in self.points.iter().enumerate() {
            if !p.position.iter().all(|c| c.is_finite()) {
                return Err(CloudIoError::NonFinite { index });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanFormat {
    PlyAscii,
    PlyBinaryLe,
    RawF32x4,
}

impl ScanFormat {
    /// Guesses the format from the extension; PLY encoding is read from the header.
    pub fn from_path(path: &Path) -> Option<ScanFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(ScanFormat::PlyBinaryLe),
            "bin" | "raw" => Some(ScanFormat::RawF32x4),
            _ => None,
        }
    }
}

/// Reads a scan. For PLY inputs the encoding declared in the header wins over
/// the requested one, so either PLY variant may be passed.
pub fn read_scan(path: &Path, format: ScanFormat) -> Result<Scan> {
    let bytes = std::fs::read(path)?;
    match format {
        ScanFormat::RawF32x4 => decode_raw_f32x4(&bytes),
        ScanFormat::PlyAscii | ScanFormat::PlyBinaryLe => decode_ply(&bytes),
    }
}

pub fn decode_raw_f32x4(bytes: &[u8]) -> Result<Scan> {
    if !bytes.len().is_multiple_of(16) {
        return Err(CloudIoError::Truncated {
            expected: bytes.len().div_ceil(16) * 16,
            found: bytes.len(),
        });
    }
    let points = bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]);
            ScanPoint {
                position: Vector3::new(f(0) as f64, f(4) as f64, f(8) as f64),
                intensity: Some(f(12)),
                ring: None,
            }
        })
        .collect();
    let scan = Scan {
        points,
        timestamp: 0.0,
    };
    scan.validate()?;
    Ok(scan)
}

pub fn encode_raw_f32x4(scan: &Scan) -> Vec<u8> {
    let mut out = Vec::with_capacity(scan.len() * 16);
    for p in &scan.points {
        for v in [
            p.position.x as f32,
            p.position.y as f32,
            p.position.z as f32,
            p.intensity.unwrap_or(0.0),
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct PlyHeader {
    binary: bool,
    vertex_count: usize,
    properties: Vec<(String, ScalarType)>,
    timestamp: f64,
    body_offset: usize,
}

fn parse_ply_header(bytes: &[u8]) -> Result<PlyHeader> {
    let malformed = |m: &str| CloudIoError::MalformedHeader(m.to_string());
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| malformed("missing end_header"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| malformed("header is not utf-8"))?
            .trim_end_matches('\r')
            .to_string();
        offset += end + 1;
        let done = line.trim() == "end_header";
        lines.push(line);
        if done {
            break;
        }
    }
    if lines.first().map(|l| l.trim()) != Some("ply") {
        return Err(malformed("missing ply magic"));
    }

    let mut binary = None;
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut properties = Vec::new();
    let mut timestamp = 0.0;
    for line in &lines[1..] {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => {
                return Err(CloudIoError::MalformedHeader(format!(
                    "unsupported format {other}"
                )))
            }
            ["comment", "timestamp", t] => {
                timestamp = t.parse().map_err(|_| malformed("bad timestamp comment"))?
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                // Elements after the vertex block are ignored.
                if vertex_count.is_some() {
                    in_vertex = false;
                    continue;
                }
                if *name != "vertex" {
                    return Err(malformed("vertex element must come first"));
                }
                in_vertex = true;
                vertex_count = Some(count.parse().map_err(|_| malformed("bad vertex count"))?);
            }
            ["property", "list", ..] if in_vertex => {
                return Err(malformed("list properties on vertices are unsupported"))
            }
            ["property", ty, name] if in_vertex => {
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| CloudIoError::MalformedHeader(format!("unknown type {ty}")))?;
                properties.push((name.to_string(), ty));
            }
            ["property", ..] => {}
            ["end_header"] => {}
            _ => {
                return Err(CloudIoError::MalformedHeader(format!(
                    "unexpected header line {line:?}"
                )))
            }
        }
    }
    let header = PlyHeader {
        binary: binary.ok_or_else(|| malformed("missing format line"))?,
        vertex_count: vertex_count.ok_or_else(|| malformed("missing vertex element"))?,
        properties,
        timestamp,
        body_offset: offset,
    };
    for axis in ["x", "y", "z"] {
        if !header.properties.iter().any(|(n, _)| n == axis) {
            return Err(CloudIoError::MalformedHeader(format!(
                "missing property {axis}"
            )));
        }
    }
    Ok(header)
}

fn decode_ply(bytes: &[u8]) -> Result<Scan> {
    let header = parse_ply_header(bytes)?;
    let slot = |name: &str| header.properties.iter().position(|(n, _)| n == name);
    let (ix, iy, iz) = (slot("x").unwrap(), slot("y").unwrap(), slot("z").unwrap());
    let (ii, ir) = (slot("intensity"), slot("ring"));
    let nprops = header.properties.len();

    let mut values = vec![0.0; nprops];
    let mut points = Vec::with_capacity(header.vertex_count);
    let make_point = |v: &[f64]| ScanPoint {
        position: Vector3::new(v[ix], v[iy], v[iz]),
        intensity: ii.map(|i| v[i] as f32),
        ring: ir.map(|i| v[i] as u16),
    };

    let body = &bytes[header.body_offset..];
    if header.binary {
        let stride: usize = header.properties.iter().map(|(_, t)| t.size()).sum();
        let expected = stride * header.vertex_count;
        if body.len() < expected {
            return Err(CloudIoError::Truncated {
                expected,
                found: body.len(),
            });
        }
        for record in body[..expected].chunks_exact(stride) {
            let mut at = 0;
            for (slot, (_, ty)) in values.iter_mut().zip(&header.properties) {
                *slot = ty.decode_le(&record[at..]);
                at += ty.size();
            }
            points.push(make_point(&values));
        }
    } else {
        let text = std::str::from_utf8(body).map_err(|_| CloudIoError::Parse {
            line: 0,
            message: "body is not utf-8".into(),
        })?;
        let mut rows = text.lines().filter(|l| !l.trim().is_empty());
        for index in 0..header.vertex_count {
            let row = rows.next().ok_or(CloudIoError::Truncated {
                expected: header.vertex_count,
                found: index,
            })?;
            let mut fields = row.split_whitespace();
            for slot in values.iter_mut() {
                let token = fields.next().ok_or_else(|| CloudIoError::Parse {
                    line: index,
                    message: "too few fields".into(),
                })?;
                *slot = token.parse().map_err(|_| CloudIoError::Parse {
                    line: index,
                    message: format!("bad number {token:?}"),
                })?;
            }
            points.push(make_point(&values));
        }
    }
    let scan = Scan {
        points,
        timestamp: header.timestamp,
    };
    scan.validate()?;
    Ok(scan)
}

/// Writes a PLY scan with `double x y z`, plus `float intensity` and
/// `ushort ring` when every point carries them.
pub fn write_scan_ply(scan: &Scan, path: &Path, binary: bool) -> Result<()> {
    let has_intensity = !scan.is_empty() && scan.points.iter().all(|p| p.intensity.is_some());
    let has_ring = scan.is_organized();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(
        w,
        "format {} 1.0",
        if binary { "binary_little_endian" } else { "ascii" }
    )?;
    writeln!(w, "comment timestamp {}", scan.timestamp)?;
    writeln!(w, "element vertex {}", scan.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property double {axis}")?;
    }
    if has_intensity {
        writeln!(w, "property float intensity")?;
    }
    if has_ring {
        writeln!(w, "property ushort ring")?;
    }
    writeln!(w, "end_header")?;
    for p in &scan.points {
        if binary {
            for c in p.position.iter() {
                w.write_all(&c.to_le_bytes())?;
            }
            if has_intensity {
                w.write_all(&p.intensity.unwrap().to_le_bytes())?;
            }
            if has_ring {
                w.write_all(&p.ring.unwrap().to_le_bytes())?;
            }
        } else {
            write!(w, "{} {} {}", p.position.x, p.position.y, p.position.z)?;
            if has_intensity {
                write!(w, " {}", p.intensity.unwrap())?;
            }
            if has_ring {
                write!(w, " {}", p.ring.unwrap())?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub timestamp: f64,
    pub pose: Pose,
}

/// C-style `%.{digits}g`: `digits` significant digits, trailing zeros removed.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn format_trajectory_line(record: &TrajectoryRecord) -> String {
    let t = &record.pose.translation;
    let q = record.pose.rotation.as_ref().coords;
    let f = |v: f64| format_significant(v, 9);
    format!(
        "{:.9} {} {} {} {} {} {} {}",
        record.timestamp,
        f(t.x),
        f(t.y),
        f(t.z),
        f(q.x),
        f(q.y),
        f(q.z),
        f(q.w)
    )
}

fn check_monotonic(records: &[TrajectoryRecord]) -> Result<()> {
    for (index, pair) in records.windows(2).enumerate() {
        if pair[1].timestamp <= pair[0].timestamp {
            return Err(CloudIoError::NonMonotonicTimestamp { index: index + 1 });
        }
    }
    Ok(())
}

pub fn write_trajectory(records: &[TrajectoryRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(CloudIoError::EmptyTrajectory);
    }
    check_monotonic(records)?;
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(w, "{}", format_trajectory_line(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_trajectory<R: Read>(reader: R) -> Result<Vec<TrajectoryRecord>> {
    let mut records = Vec::new();
    for (line_no, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CloudIoError::Parse {
                line: line_no + 1,
                message: e.to_string(),
            })?;
        if values.len() != 8 {
            return Err(CloudIoError::Parse {
                line: line_no + 1,
                message: format!("expected 8 fields, found {}", values.len()),
            });
        }
        let q = Quaternion::new(values[7], values[4], values[5], values[6]);
        if q.norm() < 1e-12 {
            return Err(CloudIoError::Parse {
                line: line_no + 1,
                message: "zero quaternion".into(),
            });
        }
        records.push(TrajectoryRecord {
            timestamp: values[0],
            pose: Pose::new(
                UnitQuaternion::from_quaternion(q),
                Vector3::new(values[1], values[2], values[3]),
            ),
        });
    }
    check_monotonic(&records)?;
    Ok(records)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    parse_trajectory(File::open(path)?)
}
