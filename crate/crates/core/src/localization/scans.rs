//! Scan replay file.
//!
//! ```text
//! portobello-scans v1\n
//! count <number of scans>\n
//! fields x y z\n            (or `fields x y z i`)
//! repeated: stamp u64 LE | point count u32 LE | points as LE f32 in field order
//! ```

use std::fs;
use std::path::Path;

use crate::frames::{Timestamp, VEHICLE_FRAME};
use crate::pointcloud::io::{parse_header, push_point, read_point, write_header, CloudIoError, FieldLayout};
use crate::pointcloud::PointCloud;

pub const SCANS_MAGIC: &str = "portobello-scans v1";

/// One range scan in the vehicle frame.
#[derive(Clone, Debug, PartialEq)]
pub struct StampedScan {
    pub stamp: Timestamp,
    pub cloud: PointCloud,
}

pub fn encode_scans(scans: &[StampedScan]) -> Vec<u8> {
    let layout = FieldLayout::for_points(scans.iter().flat_map(|s| s.cloud.points.iter()));
    let total: usize = scans.iter().map(|s| s.cloud.len()).sum();
    let mut out = Vec::with_capacity(64 + scans.len() * 12 + total * layout.stride());
    write_header(&mut out, SCANS_MAGIC, scans.len() as u64, layout);
    for s in scans {
        out.extend_from_slice(&s.stamp.nanos().to_le_bytes());
        out.extend_from_slice(&(s.cloud.len() as u32).to_le_bytes());
        for p in &s.cloud.points {
            push_point(&mut out, p, layout);
        }
    }
    out
}

pub fn decode_scans(bytes: &[u8]) -> Result<Vec<StampedScan>, CloudIoError> {
    let header = parse_header(bytes, SCANS_MAGIC)?;
    let stride = header.layout.stride();
    let mut off = header.data_offset;
    let mut scans = Vec::with_capacity(header.count.min(1 << 20) as usize);
    for k in 0..header.count {
        if bytes.len() < off + 12 {
            return Err(CloudIoError::at(off, format!("truncated: scan record {k} of {} has no complete header", header.count)));
        }
        let stamp = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let n = u32::from_le_bytes(bytes[off + 8..off + 12].try_into().unwrap()) as usize;
        let start = off + 12;
        let need = n * stride;
        if bytes.len() < start + need {
            let complete = (bytes.len() - start) / stride;
            return Err(CloudIoError::at(
                start + complete * stride,
                format!("truncated: scan record {k} declares {n} points but data ends after {complete}"),
            ));
        }
        let mut cloud = PointCloud::new(VEHICLE_FRAME);
        cloud.points.reserve(n);
        for j in 0..n {
            cloud.points.push(read_point(bytes, start + j * stride, header.layout)?);
        }
        scans.push(StampedScan { stamp: Timestamp(stamp), cloud });
        off = start + need;
    }
    if off != bytes.len() {
        return Err(CloudIoError::at(off, format!("{} trailing bytes after {} scans", bytes.len() - off, header.count)));
    }
    Ok(scans)
}

pub fn save_scans(scans: &[StampedScan], path: impl AsRef<Path>) -> Result<(), CloudIoError> {
    fs::write(path, encode_scans(scans))?;
    Ok(())
}

pub fn load_scans(path: impl AsRef<Path>) -> Result<Vec<StampedScan>, CloudIoError> {
    decode_scans(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::Point;

    fn scans() -> Vec<StampedScan> {
        (0..3)
            .map(|k| StampedScan {
                stamp: Timestamp::from_millis(100 * k),
                cloud: PointCloud::from_points(VEHICLE_FRAME, (0..k + 1).map(|j| Point::new(j as f64, k as f64, 0.5)).collect()),
            })
            .collect()
    }

    #[test]
    fn round_trip() {
        let s = scans();
        let bytes = encode_scans(&s);
        assert!(bytes.starts_with(b"portobello-scans v1\ncount 3\nfields x y z\n"));
        assert_eq!(decode_scans(&bytes).unwrap(), s);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_scans(&scans());
        let err = decode_scans(&bytes[..bytes.len() - 1]).unwrap_err();
        match err {
            CloudIoError::Format { offset, .. } => assert_eq!(offset as usize, bytes.len() - 12),
            e => panic!("{e}"),
        }
        let header_only = b"portobello-scans v1\ncount 1\nfields x y z\n\x01\x02";
        assert!(decode_scans(header_only).is_err());
    }

    #[test]
    fn wrong_magic() {
        assert!(decode_scans(b"portobello-map v1\ncount 0\nfields x y z\n").is_err());
    }
}
