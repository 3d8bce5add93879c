//! Binary PPM (P6) images and PGM (P5) label masks, 8 bits per sample.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::LabelMask;
use crate::tensor::Tensor;

/// Largest accepted width or height.
pub const MAX_EXTENT: usize = 1 << 15;
/// Largest label a mask file may contain.
pub const MAX_LABEL: u8 = 2;

struct Header {
    width: usize,
    height: usize,
    payload: usize,
}

/// Parses `magic w h maxval` plus the single whitespace byte before the payload.
fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(0, format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos as u64, format!("expected header field {}", i + 1)));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::format(start as u64, format!("header value {text} out of range")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(pos as u64, "expected whitespace after header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || width > MAX_EXTENT || height > MAX_EXTENT {
        return Err(Error::format(2, format!("extent {width}×{height} outside 1..={MAX_EXTENT}")));
    }
    if maxval != 255 {
        return Err(Error::format(2, format!("maxval {maxval} unsupported (only 255)")));
    }
    Ok(Header {
        width,
        height,
        payload: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, len: usize) -> Result<&'a [u8]> {
    let end = header.payload + len;
    if bytes.len() < end {
        return Err(Error::format(
            bytes.len() as u64,
            format!("payload truncated: expected {len} bytes after offset {}", header.payload),
        ));
    }
    Ok(&bytes[header.payload..end])
}

/// `[0, 1]` to a byte; out-of-range values saturate.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0
}

/// Encodes a `3×H×W` image with values in `[0, 1]`.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match *image.shape() {
        [3, h, w] if h > 0 && w > 0 && h <= MAX_EXTENT && w <= MAX_EXTENT => (h, w),
        _ => return Err(Error::dim("encode_ppm", image.shape(), &[3, 0, 0])),
    };
    let plane = h * w;
    let d = image.data();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * plane);
    for p in 0..plane {
        for ch in 0..3 {
            out.push(quantize(d[ch * plane + p]));
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let header = parse_header(bytes, b"P6")?;
    let (h, w) = (header.height, header.width);
    let plane = h * w;
    let raw = payload(bytes, &header, 3 * plane)?;
    let mut data = vec![0.0; 3 * plane];
    for p in 0..plane {
        for ch in 0..3 {
            data[ch * plane + p] = dequantize(raw[3 * p + ch]);
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn encode_pgm(mask: &LabelMask) -> Result<Vec<u8>> {
    if let Some(&bad) = mask.data().iter().find(|&&v| v > MAX_LABEL) {
        return Err(Error::Contract(format!("mask label {bad} exceeds {MAX_LABEL}")));
    }
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(mask.data());
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMask> {
    let header = parse_header(bytes, b"P5")?;
    let raw = payload(bytes, &header, header.width * header.height)?;
    if let Some(i) = raw.iter().position(|&v| v > MAX_LABEL) {
        return Err(Error::format(
            (header.payload + i) as u64,
            format!("mask value {} outside 0..={MAX_LABEL}", raw[i]),
        ));
    }
    LabelMask::new(header.height, header.width, raw.to_vec())
}

pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    Ok(fs::write(path, encode_ppm(image)?)?)
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_pgm(path: &Path, mask: &LabelMask) -> Result<()> {
    Ok(fs::write(path, encode_pgm(mask)?)?)
}

pub fn read_pgm(path: &Path) -> Result<LabelMask> {
    decode_pgm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mask_round_trip() {
        let m = LabelMask::new(2, 2, vec![0, 1, 2, 0]).unwrap();
        let bytes = encode_pgm(&m).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 1, 2, 0]);
        assert_eq!(decode_pgm(&bytes).unwrap(), m);
    }

    #[test]
    fn endpoints_survive_quantization() {
        let img = Tensor::new(vec![3, 1, 1], vec![1.0, 0.0, 1.0]).unwrap();
        assert_eq!(decode_ppm(&encode_ppm(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn bad_label_reports_offset() {
        let mut bytes = encode_pgm(&LabelMask::filled(2, 2, 0)).unwrap();
        let n = bytes.len();
        bytes[n - 2] = 3;
        match decode_pgm(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, n - 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\n\0"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_ppm(b"P6\n2 2\n255\n\0\0\0"), Err(Error::Format { .. })));
        assert!(matches!(decode_pgm(b"P5\nx 1\n255\n\0"), Err(Error::Format { offset: 3, .. })));
        assert!(matches!(decode_pgm(b"P5\n1 1\n65535\n\0\0"), Err(Error::Format { .. })));
    }

    #[test]
    fn header_comments_are_skipped() {
        let m = decode_pgm(b"P5\n# made by hand\n2 1\n255\n\x01\x02").unwrap();
        assert_eq!(m.data(), &[1, 2]);
    }

    proptest! {
        #[test]
        fn image_quantization_error_is_half_step(v in prop::collection::vec(0.0f64..=1.0, 12)) {
            let img = Tensor::new(vec![3, 2, 2], v).unwrap();
            let back = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
            // a second round trip is exact
            prop_assert_eq!(decode_ppm(&encode_ppm(&back).unwrap()).unwrap(), back);
        }
    }
}
