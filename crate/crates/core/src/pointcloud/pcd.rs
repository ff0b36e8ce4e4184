//! Reader and writer for the common subset of the PCD format: `DATA ascii` and
//! `DATA binary`, with `x y z` and an optional `intensity` (or `i`) field.
//! Other fields are skipped. Points with non-finite coordinates (the usual
//! "invalid" marker in organized clouds) are dropped.

use std::fs;
use std::path::Path;

use super::io::CloudIoError;
use super::{Point, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PcdEncoding {
    Ascii,
    Binary,
}

#[derive(Clone, Copy, Debug)]
struct FieldDesc {
    size: usize,
    kind: u8,
    /// byte offset within a binary record
    offset: usize,
    /// value offset within an ascii record
    slot: usize,
}

fn read_scalar(bytes: &[u8], kind: u8, size: usize) -> Option<f64> {
    Some(match (kind, size) {
        (b'F', 4) => f32::from_le_bytes(bytes.try_into().ok()?) as f64,
        (b'F', 8) => f64::from_le_bytes(bytes.try_into().ok()?),
        (b'U', 1) => bytes[0] as f64,
        (b'U', 2) => u16::from_le_bytes(bytes.try_into().ok()?) as f64,
        (b'U', 4) => u32::from_le_bytes(bytes.try_into().ok()?) as f64,
        (b'U', 8) => u64::from_le_bytes(bytes.try_into().ok()?) as f64,
        (b'I', 1) => bytes[0] as i8 as f64,
        (b'I', 2) => i16::from_le_bytes(bytes.try_into().ok()?) as f64,
        (b'I', 4) => i32::from_le_bytes(bytes.try_into().ok()?) as f64,
        (b'I', 8) => i64::from_le_bytes(bytes.try_into().ok()?) as f64,
        _ => return None,
    })
}

pub fn decode_pcd(bytes: &[u8], frame: &str) -> Result<PointCloud, CloudIoError> {
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut names: Vec<String> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    let mut kinds: Vec<u8> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut width: Option<usize> = None;
    let mut height = 1usize;
    let mut points_decl: Option<usize> = None;
    let encoding;

    loop {
        line_no += 1;
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(CloudIoError::at_line(offset, line_no, "header ended before DATA line"));
        };
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| CloudIoError::at_line(offset, line_no, "header is not UTF-8"))?
            .trim();
        let line_start = offset;
        offset += nl + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap().to_ascii_uppercase();
        let vals: Vec<&str> = parts.collect();
        let bad = |what: &str| CloudIoError::at_line(line_start, line_no, format!("invalid {what} line"));
        let parse_usizes = |v: &[&str], what: &str| -> Result<Vec<usize>, CloudIoError> {
            v.iter().map(|s| s.parse::<usize>().map_err(|_| bad(what))).collect()
        };
        match key.as_str() {
            "VERSION" | "VIEWPOINT" => {}
            "FIELDS" | "COLUMNS" => names = vals.iter().map(|s| s.to_string()).collect(),
            "SIZE" => sizes = parse_usizes(&vals, "SIZE")?,
            "TYPE" => {
                kinds = vals
                    .iter()
                    .map(|s| match s.as_bytes() {
                        [k @ (b'F' | b'I' | b'U')] => Ok(*k),
                        _ => Err(bad("TYPE")),
                    })
                    .collect::<Result<_, _>>()?
            }
            "COUNT" => counts = parse_usizes(&vals, "COUNT")?,
            "WIDTH" => width = Some(parse_usizes(&vals, "WIDTH")?.first().copied().ok_or_else(|| bad("WIDTH"))?),
            "HEIGHT" => height = parse_usizes(&vals, "HEIGHT")?.first().copied().ok_or_else(|| bad("HEIGHT"))?,
            "POINTS" => points_decl = parse_usizes(&vals, "POINTS")?.first().copied(),
            "DATA" => {
                encoding = match vals.first().map(|s| s.to_ascii_lowercase()).as_deref() {
                    Some("ascii") => PcdEncoding::Ascii,
                    Some("binary") => PcdEncoding::Binary,
                    Some(other) => {
                        return Err(CloudIoError::at_line(line_start, line_no, format!("unsupported DATA encoding `{other}`")))
                    }
                    None => return Err(bad("DATA")),
                };
                break;
            }
            _ => return Err(CloudIoError::at_line(line_start, line_no, format!("unknown header key `{key}`"))),
        }
    }

    let n_fields = names.len();
    if counts.is_empty() {
        counts = vec![1; n_fields];
    }
    if n_fields == 0 || sizes.len() != n_fields || kinds.len() != n_fields || counts.len() != n_fields {
        return Err(CloudIoError::at(0, "FIELDS/SIZE/TYPE/COUNT lengths disagree"));
    }
    let total = points_decl.or(width.map(|w| w * height)).ok_or_else(|| CloudIoError::at(0, "missing POINTS/WIDTH"))?;

    let mut descs = Vec::with_capacity(n_fields);
    let (mut byte_off, mut slot) = (0, 0);
    for k in 0..n_fields {
        if read_scalar(&vec![0u8; sizes[k]], kinds[k], sizes[k]).is_none() {
            return Err(CloudIoError::at(0, format!("unsupported type {}{}", kinds[k] as char, sizes[k])));
        }
        descs.push(FieldDesc { size: sizes[k], kind: kinds[k], offset: byte_off, slot });
        byte_off += sizes[k] * counts[k];
        slot += counts[k];
    }
    let record_len = byte_off;
    let find = |name: &str| names.iter().position(|n| n == name).map(|i| descs[i]);
    let (Some(fx), Some(fy), Some(fz)) = (find("x"), find("y"), find("z")) else {
        return Err(CloudIoError::at(0, "PCD must contain x, y and z fields"));
    };
    let fi = find("intensity").or_else(|| find("i"));

    let mut points = Vec::with_capacity(total);
    match encoding {
        PcdEncoding::Binary => {
            let data = &bytes[offset..];
            if data.len() < total * record_len {
                let complete = data.len() / record_len;
                return Err(CloudIoError::at(
                    offset + complete * record_len,
                    format!("truncated: POINTS {total} but data ends after {complete}"),
                ));
            }
            for k in 0..total {
                let rec = &data[k * record_len..(k + 1) * record_len];
                let get = |d: FieldDesc| read_scalar(&rec[d.offset..d.offset + d.size], d.kind, d.size).unwrap();
                let p = Point { x: get(fx), y: get(fy), z: get(fz), intensity: fi.map(|d| get(d) as f32) };
                if p.is_finite() {
                    points.push(p);
                }
            }
        }
        PcdEncoding::Ascii => {
            let text = std::str::from_utf8(&bytes[offset..]).map_err(|e| CloudIoError::at(offset + e.valid_up_to(), "data is not UTF-8"))?;
            let mut line_off = offset;
            let mut rows = 0usize;
            for raw in text.split_inclusive('\n') {
                let this_off = line_off;
                line_off += raw.len();
                line_no += 1;
                let row = raw.trim();
                if row.is_empty() {
                    continue;
                }
                if rows == total {
                    return Err(CloudIoError::at_line(this_off, line_no, "more data rows than POINTS"));
                }
                let vals: Vec<&str> = row.split_whitespace().collect();
                if vals.len() != slot {
                    return Err(CloudIoError::at_line(this_off, line_no, format!("expected {slot} values, found {}", vals.len())));
                }
                let get = |d: FieldDesc| -> Result<f64, CloudIoError> {
                    vals[d.slot].parse::<f64>().map_err(|_| CloudIoError::at_line(this_off, line_no, format!("bad number `{}`", vals[d.slot])))
                };
                let intensity = match fi {
                    Some(d) => Some(get(d)? as f32),
                    None => None,
                };
                let p = Point { x: get(fx)?, y: get(fy)?, z: get(fz)?, intensity };
                if p.is_finite() {
                    points.push(p);
                }
                rows += 1;
            }
            if rows < total {
                return Err(CloudIoError::at(line_off, format!("truncated: POINTS {total} but found {rows} rows")));
            }
        }
    }
    Ok(PointCloud { points, frame: frame.to_string() })
}

pub fn load_pcd(path: impl AsRef<Path>) -> Result<PointCloud, CloudIoError> {
    decode_pcd(&fs::read(path)?, crate::frames::MAP_FRAME)
}

/// Writes `x y z [intensity]` as F4 fields.
pub fn encode_pcd(cloud: &PointCloud, encoding: PcdEncoding) -> Vec<u8> {
    let with_i = cloud.points.iter().any(|p| p.intensity.is_some());
    let (fields, size, kind, count) =
        if with_i { ("x y z intensity", "4 4 4 4", "F F F F", "1 1 1 1") } else { ("x y z", "4 4 4", "F F F", "1 1 1") };
    let n = cloud.len();
    let data = match encoding {
        PcdEncoding::Ascii => "ascii",
        PcdEncoding::Binary => "binary",
    };
    let mut out = format!(
        "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\nFIELDS {fields}\nSIZE {size}\nTYPE {kind}\nCOUNT {count}\nWIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA {data}\n"
    )
    .into_bytes();
    for p in &cloud.points {
        let vals = [p.x as f32, p.y as f32, p.z as f32, p.intensity.unwrap_or(0.0)];
        let vals = if with_i { &vals[..] } else { &vals[..3] };
        match encoding {
            PcdEncoding::Ascii => {
                let row: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
                out.extend_from_slice(row.join(" ").as_bytes());
                out.push(b'\n');
            }
            PcdEncoding::Binary => vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    out
}

pub fn save_pcd(cloud: &PointCloud, path: impl AsRef<Path>, encoding: PcdEncoding) -> Result<(), CloudIoError> {
    fs::write(path, encode_pcd(cloud, encoding))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PointCloud {
        PointCloud::from_points(
            "map",
            vec![Point::with_intensity(1.5, -2.25, 0.125, 10.0), Point::with_intensity(3.0, 4.0, 5.0, 0.5)],
        )
    }

    #[test]
    fn ascii_and_binary_round_trip() {
        for enc in [PcdEncoding::Ascii, PcdEncoding::Binary] {
            let bytes = encode_pcd(&sample(), enc);
            assert_eq!(decode_pcd(&bytes, "map").unwrap(), sample());
        }
    }

    #[test]
    fn extra_fields_and_types_are_skipped() {
        let mut bytes = b"VERSION 0.7\nFIELDS x y z rgb intensity ring\nSIZE 8 8 8 4 4 2\nTYPE F F F U F U\nCOUNT 1 1 1 1 1 1\nWIDTH 1\nHEIGHT 1\nPOINTS 1\nDATA binary\n".to_vec();
        for v in [1.0f64, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&0xffu32.to_le_bytes());
        bytes.extend_from_slice(&42.0f32.to_le_bytes());
        bytes.extend_from_slice(&7u16.to_le_bytes());
        let c = decode_pcd(&bytes, "map").unwrap();
        assert_eq!(c.points, vec![Point::with_intensity(1.0, 2.0, 3.0, 42.0)]);
    }

    #[test]
    fn ascii_nan_points_dropped_and_short_data_rejected() {
        let text = "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nWIDTH 3\nHEIGHT 1\nPOINTS 3\nDATA ascii\n1 2 3\nnan nan nan\n4 5 6\n";
        assert_eq!(decode_pcd(text.as_bytes(), "m").unwrap().len(), 2);
        let short = "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nWIDTH 3\nHEIGHT 1\nPOINTS 3\nDATA ascii\n1 2 3\n";
        assert!(matches!(decode_pcd(short.as_bytes(), "m"), Err(CloudIoError::Format { .. })));
    }

    #[test]
    fn compressed_is_unsupported() {
        let text = "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nWIDTH 0\nHEIGHT 1\nPOINTS 0\nDATA binary_compressed\n";
        assert!(decode_pcd(text.as_bytes(), "m").is_err());
    }
}
