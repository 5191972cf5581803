use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::DepthImage;

/// Millimeter value stored for a depth in meters (`0` for invalid depths).
fn to_mm(d: f64) -> u16 {
    if d > 0.0 {
        (d * 1000.0).round().clamp(0.0, 65535.0) as u16
    } else {
        0
    }
}

/// Binary 16-bit PGM (`P5`, maxval 65535, big-endian samples) in millimeters.
pub fn encode_depth_pgm(img: &DepthImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n65535\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + 2 * img.data().len());
    out.extend_from_slice(header.as_bytes());
    for &d in img.data() {
        out.extend_from_slice(&to_mm(d).to_be_bytes());
    }
    out
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn decode_depth_pgm(bytes: &[u8], path: &Path) -> Result<DepthImage> {
    let err = |m: &str| Error::format(path, m);
    let mut pos = 0;
    if token(bytes, &mut pos).as_deref() != Some("P5") {
        return Err(err("not a binary PGM (P5) file"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token(bytes, &mut pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err(&format!("malformed header ({what})")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 65535 {
        return Err(err(&format!("expected maxval 65535, found {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(err("empty image"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| err(&format!("image size {w}x{h} overflows")))?;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() < need {
        return Err(err(&format!("truncated payload: {} of {need} bytes", payload.len())));
    }
    let data = payload[..need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 1000.0)
        .collect();
    DepthImage::new(w, h, data)
}

pub fn read_depth_pgm(path: &Path) -> Result<DepthImage> {
    decode_depth_pgm(&read_bytes(path)?, path)
}

pub fn write_depth_pgm(path: &Path, img: &DepthImage) -> Result<()> {
    write_atomic(path, &encode_depth_pgm(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_pixel_example() {
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&1500u16.to_be_bytes());
        bytes.extend_from_slice(&0u16.to_be_bytes());
        let img = decode_depth_pgm(&bytes, Path::new("t.pgm")).unwrap();
        assert_eq!(img.data(), &[1.5, 0.0]);
        assert_eq!(img.valid_count(), 1);
        assert_eq!(encode_depth_pgm(&img), bytes);
    }

    #[test]
    fn rejects_bad_files() {
        let p = Path::new("t.pgm");
        assert!(matches!(decode_depth_pgm(b"P5\n1 1\n255\n\x01", p), Err(Error::Format { .. })));
        assert!(decode_depth_pgm(b"P2\n1 1\n65535\n0", p).is_err());
        assert!(decode_depth_pgm(b"P5\n2 2\n65535\n\x00\x01", p).is_err());
        assert!(decode_depth_pgm(b"P5\n2", p).is_err());
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = decode_depth_pgm(b"P5\n# depth\n1 1\n65535\n\x07\xd0", Path::new("t.pgm")).unwrap();
        assert_eq!(img.data(), &[2.0]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pgm");
        let img = DepthImage::new(3, 2, vec![0.0, 1.0, 1.234, 65.535, 0.001, 4.5]).unwrap();
        write_depth_pgm(&p, &img).unwrap();
        let back = read_depth_pgm(&p).unwrap();
        assert_eq!(back, img);
        write_depth_pgm(&p, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), encode_depth_pgm(&img));
    }

    proptest! {
        #[test]
        fn bytes_round_trip((w, h, mm) in (1usize..8, 1usize..8).prop_flat_map(|(w, h)| (Just(w), Just(h), proptest::collection::vec(any::<u16>(), w * h)))) {
            let mut bytes = format!("P5\n{w} {h}\n65535\n").into_bytes();
            for v in &mm {
                bytes.extend_from_slice(&v.to_be_bytes());
            }
            let img = decode_depth_pgm(&bytes, Path::new("p")).unwrap();
            prop_assert_eq!(encode_depth_pgm(&img), bytes);
        }
    }
}
