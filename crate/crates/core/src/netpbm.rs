//! Binary PPM (P6) and PGM (P5) with maxval 255.

use crate::egms::SparsificationMap;
use crate::error::{Error, Result};
use crate::tokenize::Planes;

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar `3 x H x W` tensor scaled to [0, 1].
    pub fn to_planes(&self) -> Planes {
        let mut p = Planes::zeros(3, self.height, self.width);
        let plane = self.width * self.height;
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                p.data[c * plane + i] = px[c] as f64 / 255.0;
            }
        }
        p
    }
}

/// 8-bit single-channel image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn to_rgb(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }
}

/// One pixel per token: 255 kept, 0 dropped.
pub fn mask_to_pgm(mask: &SparsificationMap) -> Vec<u8> {
    let gray = GrayImage {
        width: mask.ws(),
        height: mask.hs(),
        data: mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(),
    };
    write_pgm(&gray)
}

pub fn write_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::parse("offset 0", "not a netpbm file"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
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
            return Err(Error::parse(format!("offset {pos}"), "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::parse(format!("offset {start}"), "header field overflows"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::parse(format!("offset {pos}"), "missing whitespace after maxval"));
    }
    if fields[2] != 255 {
        return Err(Error::parse(
            format!("offset {pos}"),
            format!("maxval {} unsupported, only 255", fields[2]),
        ));
    }
    Ok(Header {
        magic,
        width: fields[0],
        height: fields[1],
        data_start: pos + 1,
    })
}

pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(Error::parse("offset 0", "expected P5"));
    }
    let n = h.width * h.height;
    let data = bytes
        .get(h.data_start..h.data_start + n)
        .ok_or_else(|| Error::parse(format!("offset {}", h.data_start), "pixel data truncated"))?;
    Ok(GrayImage {
        width: h.width,
        height: h.height,
        data: data.to_vec(),
    })
}

/// Reads P6 directly, or P5 with the gray value replicated to three channels.
pub fn read_image(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes)?;
    match &h.magic {
        b"P6" => {
            let n = h.width * h.height * 3;
            let data = bytes
                .get(h.data_start..h.data_start + n)
                .ok_or_else(|| Error::parse(format!("offset {}", h.data_start), "pixel data truncated"))?;
            Ok(RgbImage {
                width: h.width,
                height: h.height,
                data: data.to_vec(),
            })
        }
        b"P5" => Ok(read_pgm(bytes)?.to_rgb()),
        _ => Err(Error::parse("offset 0", "only P5 and P6 are supported")),
    }
}
