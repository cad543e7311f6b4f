//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::maps::LabelMap;

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{} bytes for a {height}x{width} RGB image",
                data.len()
            )));
        }
        Ok(RgbImage {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Values `v / 255` in HWC order.
    pub fn to_unit<T: crate::tensor::Real>(&self) -> Vec<T> {
        self.data.iter().map(|&v| T::lit(v as f64 / 255.0)).collect()
    }
}

struct Header {
    width: usize,
    height: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Netpbm(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Netpbm("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Netpbm(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Netpbm("header number out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Netpbm("missing whitespace after maxval".into()));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Netpbm(format!("unsupported maxval {maxval}")));
    }
    Ok(Header {
        width,
        height,
        offset: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8]> {
    let want = header.width * header.height * channels;
    let body = &bytes[header.offset..];
    if body.len() != want {
        return Err(Error::Netpbm(format!(
            "expected {want} payload bytes, found {}",
            body.len()
        )));
    }
    Ok(body)
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let header = parse_header(bytes, b"P6")?;
    let body = payload(bytes, &header, 3)?;
    RgbImage::new(header.height, header.width, body.to_vec())
}

/// Label ids must fit in one byte.
pub fn encode_pgm(labels: &LabelMap) -> Result<Vec<u8>> {
    if labels.batch() != 1 {
        return Err(Error::Shape("PGM holds a single label map".into()));
    }
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    for (flat, &id) in labels.ids().iter().enumerate() {
        let byte = u8::try_from(id).map_err(|_| {
            let (n, i, j) = labels.position(flat);
            Error::Netpbm(format!("label {id} at ({n}, {i}, {j}) does not fit in a byte"))
        })?;
        out.push(byte);
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMap> {
    let header = parse_header(bytes, b"P5")?;
    let body = payload(bytes, &header, 1)?;
    LabelMap::new(
        header.height,
        header.width,
        body.iter().map(|&b| b as u32).collect(),
    )
}

pub fn save_ppm(image: &RgbImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn load_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn save_pgm(labels: &LabelMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm(labels)?)?;
    Ok(())
}

pub fn load_pgm(path: &Path) -> Result<LabelMap> {
    decode_pgm(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crafted_two_by_two_pgm() {
        let bytes = b"P5\n2 2\n255\n\x00\x03\x07\xff";
        assert_eq!(bytes.len(), 15);
        let labels = decode_pgm(bytes).unwrap();
        assert_eq!((labels.height(), labels.width()), (2, 2));
        assert_eq!(labels.ids(), &[0, 3, 7, 255]);
        assert_eq!(encode_pgm(&labels).unwrap(), bytes.to_vec());
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P6 # made by hand\n1 1 # size\n255\n\x01\x02\x03";
        let img = decode_ppm(bytes).unwrap();
        assert_eq!(img.data(), &[1, 2, 3]);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(decode_pgm(b"P2\n1 1\n255\n\x00").is_err());
        assert!(decode_ppm(b"P5\n1 1\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n2").is_err());
    }

    #[test]
    fn wide_label_ids_cannot_be_written() {
        let labels = LabelMap::new(1, 1, vec![256]).unwrap();
        assert!(encode_pgm(&labels).is_err());
    }
}
