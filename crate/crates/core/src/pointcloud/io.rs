//! Native map file format.
//!
//! ```text
//! portobello-map v1\n
//! count <N>\n
//! fields x y z\n            (or `fields x y z i`)
//! <N records of little-endian f32, in field order>
//! ```
//!
//! Coordinates are stored as `f32`; a cloud whose values are exactly
//! representable in `f32` round-trips bit for bit. Points without an intensity
//! in a cloud that otherwise has one are written as NaN and read back as `None`.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Point, PointCloud};

pub const MAP_MAGIC: &str = "portobello-map v1";
const MAX_HEADER_LINE: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum CloudIoError {
    #[error("format error at byte offset {offset}{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Format { offset: u64, line: Option<usize>, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CloudIoError {
    pub(crate) fn at(offset: usize, message: impl Into<String>) -> Self {
        CloudIoError::Format { offset: offset as u64, line: None, message: message.into() }
    }

    pub(crate) fn at_line(offset: usize, line: usize, message: impl Into<String>) -> Self {
        CloudIoError::Format { offset: offset as u64, line: Some(line), message: message.into() }
    }

    pub fn is_format(&self) -> bool {
        matches!(self, CloudIoError::Format { .. })
    }
}

/// Record layout declared by a `fields` header line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldLayout {
    Xyz,
    Xyzi,
}

impl FieldLayout {
    pub fn floats(self) -> usize {
        match self {
            FieldLayout::Xyz => 3,
            FieldLayout::Xyzi => 4,
        }
    }

    pub fn stride(self) -> usize {
        self.floats() * 4
    }

    fn header_value(self) -> &'static str {
        match self {
            FieldLayout::Xyz => "x y z",
            FieldLayout::Xyzi => "x y z i",
        }
    }

    pub fn for_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Self {
        if points.into_iter().any(|p| p.intensity.is_some()) {
            FieldLayout::Xyzi
        } else {
            FieldLayout::Xyz
        }
    }
}

/// Parsed three-line ASCII header shared by the map and scan formats.
#[derive(Debug, PartialEq, Eq)]
pub(crate) struct Header {
    pub count: u64,
    pub layout: FieldLayout,
    /// Byte offset where binary data starts.
    pub data_offset: usize,
}

fn read_line(bytes: &[u8], offset: usize, line_no: usize) -> Result<(&str, usize), CloudIoError> {
    let rest = &bytes[offset.min(bytes.len())..];
    let window = &rest[..rest.len().min(MAX_HEADER_LINE)];
    let Some(nl) = window.iter().position(|&b| b == b'\n') else {
        return Err(CloudIoError::at_line(offset, line_no, "unterminated or missing header line"));
    };
    let line = std::str::from_utf8(&window[..nl])
        .map_err(|_| CloudIoError::at_line(offset, line_no, "header line is not UTF-8"))?;
    Ok((line, offset + nl + 1))
}

pub(crate) fn parse_header(bytes: &[u8], magic: &str) -> Result<Header, CloudIoError> {
    let (line, off) = read_line(bytes, 0, 1)?;
    if line != magic {
        return Err(CloudIoError::at_line(0, 1, format!("expected `{magic}`, found `{line}`")));
    }
    let (line, off2) = read_line(bytes, off, 2)?;
    let count = line
        .strip_prefix("count ")
        .and_then(|v| v.parse::<u64>().ok())
        .ok_or_else(|| CloudIoError::at_line(off, 2, format!("expected `count <N>`, found `{line}`")))?;
    let (line, off3) = read_line(bytes, off2, 3)?;
    let layout = match line {
        "fields x y z" => FieldLayout::Xyz,
        "fields x y z i" => FieldLayout::Xyzi,
        _ => return Err(CloudIoError::at_line(off2, 3, format!("expected `fields x y z [i]`, found `{line}`"))),
    };
    Ok(Header { count, layout, data_offset: off3 })
}

pub(crate) fn write_header(out: &mut Vec<u8>, magic: &str, count: u64, layout: FieldLayout) {
    out.extend_from_slice(format!("{magic}\ncount {count}\nfields {}\n", layout.header_value()).as_bytes());
}

pub(crate) fn push_point(out: &mut Vec<u8>, p: &Point, layout: FieldLayout) {
    out.extend_from_slice(&(p.x as f32).to_le_bytes());
    out.extend_from_slice(&(p.y as f32).to_le_bytes());
    out.extend_from_slice(&(p.z as f32).to_le_bytes());
    if layout == FieldLayout::Xyzi {
        out.extend_from_slice(&p.intensity.unwrap_or(f32::NAN).to_le_bytes());
    }
}

/// Decodes one record at `offset`; the caller guarantees the bytes exist.
pub(crate) fn read_point(bytes: &[u8], offset: usize, layout: FieldLayout) -> Result<Point, CloudIoError> {
    let f = |k: usize| f32::from_le_bytes(bytes[offset + 4 * k..offset + 4 * k + 4].try_into().unwrap());
    let (x, y, z) = (f(0), f(1), f(2));
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(CloudIoError::at(offset, "non-finite coordinate"));
    }
    let intensity = match layout {
        FieldLayout::Xyz => None,
        FieldLayout::Xyzi => Some(f(3)).filter(|v| !v.is_nan()),
    };
    Ok(Point { x: x as f64, y: y as f64, z: z as f64, intensity })
}

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let layout = FieldLayout::for_points(&cloud.points);
    let mut out = Vec::with_capacity(64 + cloud.len() * layout.stride());
    write_header(&mut out, MAP_MAGIC, cloud.len() as u64, layout);
    for p in &cloud.points {
        push_point(&mut out, p, layout);
    }
    out
}

pub fn decode_cloud(bytes: &[u8], frame: &str) -> Result<PointCloud, CloudIoError> {
    let header = parse_header(bytes, MAP_MAGIC)?;
    let stride = header.layout.stride();
    let available = (bytes.len() - header.data_offset) / stride;
    if (available as u64) < header.count {
        let offset = header.data_offset + available * stride;
        return Err(CloudIoError::at(
            offset,
            format!("truncated: header declares {} points but data ends after {available}", header.count),
        ));
    }
    let end = header.data_offset + header.count as usize * stride;
    if end != bytes.len() {
        return Err(CloudIoError::at(end, format!("{} trailing bytes after {} points", bytes.len() - end, header.count)));
    }
    let mut points = Vec::with_capacity(header.count as usize);
    for k in 0..header.count as usize {
        points.push(read_point(bytes, header.data_offset + k * stride, header.layout)?);
    }
    Ok(PointCloud { points, frame: frame.to_string() })
}

pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), CloudIoError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_cloud(cloud))?;
    Ok(())
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud, CloudIoError> {
    let bytes = fs::read(path)?;
    decode_cloud(&bytes, crate::frames::MAP_FRAME)
}

/// SHA-256 of the encoded map, hex-encoded. Identifies a map in scenario files.
pub fn cloud_hash(cloud: &PointCloud) -> String {
    hex::encode(Sha256::digest(encode_cloud(cloud)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(n: usize) -> PointCloud {
        PointCloud::from_points("map", (0..n).map(|i| Point::new(i as f64, -(i as f64) * 0.5, 0.25)).collect())
    }

    #[test]
    fn header_layout_is_exact() {
        let bytes = encode_cloud(&cloud(2));
        assert!(bytes.starts_with(b"portobello-map v1\ncount 2\nfields x y z\n"));
        assert_eq!(bytes.len(), "portobello-map v1\ncount 2\nfields x y z\n".len() + 2 * 12);
    }

    #[test]
    fn intensity_layout_and_missing_values() {
        let c = PointCloud::from_points("map", vec![Point::with_intensity(1.0, 2.0, 3.0, 7.5), Point::new(0.0, 0.0, 0.0)]);
        let bytes = encode_cloud(&c);
        assert!(bytes.starts_with(b"portobello-map v1\ncount 2\nfields x y z i\n"));
        assert_eq!(decode_cloud(&bytes, "map").unwrap(), c);
    }

    #[test]
    fn declared_count_exceeds_data() {
        let mut bytes = encode_cloud(&cloud(4));
        let header = "portobello-map v1\ncount 4\n";
        bytes.splice(0..header.len(), "portobello-map v1\ncount 5\n".bytes());
        let err = decode_cloud(&bytes, "map").unwrap_err();
        let CloudIoError::Format { offset, .. } = err else { panic!() };
        assert_eq!(offset as usize, bytes.len());
    }

    #[test]
    fn truncated_mid_record_names_offset() {
        let bytes = encode_cloud(&cloud(10));
        let cut = &bytes[..bytes.len() - 5];
        let err = decode_cloud(cut, "map").unwrap_err();
        let header_len = bytes.len() - 120;
        match err {
            CloudIoError::Format { offset, message, .. } => {
                assert_eq!(offset as usize, header_len + 9 * 12);
                assert!(message.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_fields() {
        assert!(matches!(decode_cloud(b"portobello-map v2\ncount 0\nfields x y z\n", "m"), Err(CloudIoError::Format { line: Some(1), .. })));
        assert!(matches!(decode_cloud(b"portobello-map v1\ncount x\nfields x y z\n", "m"), Err(CloudIoError::Format { line: Some(2), .. })));
        assert!(matches!(decode_cloud(b"portobello-map v1\ncount 0\nfields x y\n", "m"), Err(CloudIoError::Format { line: Some(3), .. })));
        assert!(decode_cloud(b"portobello-map v1\ncount 0\nfields x y z\n", "m").unwrap().is_empty());
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_cloud(&cloud(1));
        bytes.push(0);
        assert!(decode_cloud(&bytes, "m").is_err());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(cloud_hash(&cloud(3)), cloud_hash(&cloud(3)));
        assert_ne!(cloud_hash(&cloud(3)), cloud_hash(&cloud(4)));
    }
}
