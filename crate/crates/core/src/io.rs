//! Video container and CSV files.
//!
//! The container is `PFVD`, then little-endian `u32` frame count, width and
//! height, then the pixels of every frame, row-major.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Frame, Video};

pub const MAGIC: &[u8; 4] = b"PFVD";
pub const HEADER_LEN: usize = 16;

pub fn encode_video(frames: &[Frame]) -> Result<Vec<u8>> {
    let (w, h) = frames
        .first()
        .map(|f| (f.width, f.height))
        .unwrap_or((0, 0));
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + frames.len() * w * h);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&to_u32(frames.len(), "frame count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(w, "width")?.to_le_bytes());
    out.extend_from_slice(&to_u32(h, "height")?.to_le_bytes());
    for f in frames {
        if (f.width, f.height) != (w, h) {
            return Err(Error::InvalidArgument("frames differ in size".into()));
        }
        out.extend_from_slice(&f.pixels);
    }
    Ok(out)
}

pub fn decode_video(bytes: &[u8]) -> Result<Vec<Frame>> {
    let parse = |offset: usize, detail: String| Error::Parse {
        what: "video container".into(),
        offset: offset as u64,
        detail,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(parse(0, "bad magic, expected \"PFVD\"".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(parse(bytes.len(), "truncated header".into()));
    }
    let field = |i: usize| {
        let at = 4 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
    };
    let (n, w, h) = (field(0), field(1), field(2));
    let size = w
        .checked_mul(h)
        .ok_or_else(|| parse(8, format!("frame size {w}x{h} overflows")))?;
    let body = &bytes[HEADER_LEN..];
    let want = size
        .checked_mul(n)
        .ok_or_else(|| parse(4, "frame count overflows".into()))?;
    if body.len() < want {
        let frame = if size == 0 { 0 } else { body.len() / size };
        return Err(parse(
            HEADER_LEN + frame * size,
            format!("truncated: frame {frame} of {n} is incomplete"),
        ));
    }
    if body.len() > want {
        return Err(parse(
            HEADER_LEN + want,
            "trailing bytes after last frame".into(),
        ));
    }
    (0..n)
        .map(|i| Frame::new(w, h, body[i * size..(i + 1) * size].to_vec()))
        .collect()
}

pub fn write_video(path: &Path, frames: &[Frame]) -> Result<()> {
    let bytes = encode_video(frames)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_video(path: &Path) -> Result<Vec<Frame>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_video(&bytes)
}

/// Writes `header` then one `frame,x,y` row per point.
pub fn points_csv(header: &str, points: &[(f64, f64)]) -> String {
    let mut s = String::with_capacity(16 + points.len() * 32);
    s.push_str(header);
    s.push('\n');
    for (i, (x, y)) in points.iter().enumerate() {
        writeln!(s, "{i},{x},{y}").expect("write to string");
    }
    s
}

pub fn truth_csv(truth: &[(f64, f64)]) -> String {
    points_csv("frame,x,y", truth)
}

pub fn trajectory_csv(traj: &[(f64, f64)]) -> String {
    points_csv("frame,est_x,est_y", traj)
}

/// Parses a three-column `frame,x,y` CSV. Frames must be `0, 1, 2, ...`.
pub fn parse_points_csv(text: &str, what: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (line_no, line) in text.lines().enumerate() {
        let here = offset;
        offset += line.len() as u64 + 1;
        if line_no == 0 || line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| Error::Parse {
            what: what.to_string(),
            offset: here,
            detail: format!("line {}: {detail}", line_no + 1),
        };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(err(format!("expected 3 columns, found {}", cols.len())));
        }
        let frame: usize = cols[0].parse().map_err(|e| err(format!("frame: {e}")))?;
        if frame != out.len() {
            return Err(err(format!("expected frame {}, found {frame}", out.len())));
        }
        let x: f64 = cols[1].parse().map_err(|e| err(format!("x: {e}")))?;
        let y: f64 = cols[2].parse().map_err(|e| err(format!("y: {e}")))?;
        out.push((x, y));
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a container and, if given, its truth CSV.
pub fn load_video(path: &Path, truth: Option<&Path>) -> Result<Video> {
    let frames = read_video(path)?;
    let truth = match truth {
        Some(p) => parse_points_csv(&read_text(p)?, &p.display().to_string())?,
        None => Vec::new(),
    };
    Video::new(frames, truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize, w: usize, h: usize) -> Vec<Frame> {
        (0..n)
            .map(|i| Frame::new(w, h, (0..w * h).map(|p| (p + i) as u8).collect()).unwrap())
            .collect()
    }

    #[test]
    fn container_round_trip() {
        let f = frames(3, 5, 4);
        let bytes = encode_video(&f).unwrap();
        assert_eq!(bytes.len(), 16 + 3 * 5 * 4);
        assert_eq!(&bytes[..4], b"PFVD");
        assert_eq!(decode_video(&bytes).unwrap(), f);
    }

    #[test]
    fn bad_magic_names_offset_zero() {
        let mut bytes = encode_video(&frames(1, 2, 2)).unwrap();
        bytes[0] = b'X';
        match decode_video(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_names_the_incomplete_frame() {
        let bytes = encode_video(&frames(3, 2, 2)).unwrap();
        match decode_video(&bytes[..bytes.len() - 1]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 16 + 2 * 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let pts = vec![(1.5, 2.0), (0.1, -3.25)];
        let text = trajectory_csv(&pts);
        assert!(text.starts_with("frame,est_x,est_y\n0,1.5,2\n"));
        assert_eq!(parse_points_csv(&text, "t").unwrap(), pts);
        assert!(parse_points_csv("frame,x,y\n1,0,0\n", "t").is_err());
    }
}
