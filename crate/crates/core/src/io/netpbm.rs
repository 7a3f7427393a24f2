//! Binary NetPBM rasters: 8-bit grayscale `P5` and color `P6`.

use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved `r, g, b`.
    pub pixels: Vec<u8>,
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let err = |pos: usize, what: &str| Error::Netpbm(format!("{what} at byte offset {pos}"));
    if bytes.len() < 2 {
        return Err(err(bytes.len(), "truncated magic"));
    }
    let magic = [bytes[0], bytes[1]];
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
                Some(_) => break,
                None => return Err(err(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "expected a number"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text.parse().map_err(|_| err(start, "number out of range"))?;
        if *field == 0 {
            let name = ["width", "height", "maxval"][i];
            return Err(err(start, &format!("zero {name}")));
        }
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err(pos, "expected whitespace after header")),
    }
    Ok(Header {
        magic,
        width: fields[0],
        height: fields[1],
        maxval: fields[2],
        data_start: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    if h.maxval > 255 {
        return Err(Error::Netpbm(format!("maxval {} is not 8-bit", h.maxval)));
    }
    let need = h.width * h.height * channels;
    let have = bytes.len() - h.data_start;
    if have < need {
        return Err(Error::Netpbm(format!(
            "truncated pixel data at byte offset {} (expected {need} bytes from offset {})",
            bytes.len(),
            h.data_start
        )));
    }
    Ok(&bytes[h.data_start..h.data_start + need])
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(Error::Netpbm("not a binary PGM (P5) file at byte offset 0".into()));
    }
    Ok(GrayImage {
        width: h.width,
        height: h.height,
        pixels: payload(bytes, &h, 1)?.to_vec(),
    })
}

pub fn parse_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" {
        return Err(Error::Netpbm("not a binary PPM (P6) file at byte offset 0".into()));
    }
    Ok(RgbImage {
        width: h.width,
        height: h.height,
        pixels: payload(bytes, &h, 3)?.to_vec(),
    })
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    parse_pgm(&std::fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    Ok(std::fs::write(path, encode_pgm(img))?)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    Ok(std::fs::write(path, encode_ppm(img))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let img = GrayImage {
            width: 3,
            height: 2,
            pixels: vec![0, 10, 20, 30, 40, 255],
        };
        let bytes = encode_pgm(&img);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(parse_pgm(&bytes).unwrap(), img);
        let rgb = RgbImage {
            width: 1,
            height: 2,
            pixels: vec![1, 2, 3, 4, 5, 6],
        };
        assert_eq!(parse_ppm(&encode_ppm(&rgb)).unwrap(), rgb);
    }

    #[test]
    fn comments_in_header() {
        let bytes = b"P5 # made by hand\n2 # width\n1\n255\n\x07\x08";
        let img = parse_pgm(bytes).unwrap();
        assert_eq!((img.width, img.height, img.pixels.clone()), (2, 1, vec![7, 8]));
    }

    #[test]
    fn truncation_names_offset() {
        let bytes = encode_pgm(&GrayImage {
            width: 4,
            height: 4,
            pixels: vec![9; 16],
        });
        let err = parse_pgm(&bytes[..20]).unwrap_err().to_string();
        assert!(err.contains("byte offset 20"), "{err}");
        let err = parse_pgm(b"P5\n4 ").unwrap_err().to_string();
        assert!(err.contains("byte offset 5"), "{err}");
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n1 1\n65535\n00").is_err());
    }
}
