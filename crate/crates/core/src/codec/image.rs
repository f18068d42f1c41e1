use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit grayscale picture, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape("image", format!("{width}x{height}"), data.len()));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extends right and bottom edges by replication to multiples of `block`.
    pub fn pad_to_multiple(&self, block: usize) -> GrayImage {
        let w = self.width.div_ceil(block) * block;
        let h = self.height.div_ceil(block) * block;
        if (w, h) == (self.width, self.height) {
            return self.clone();
        }
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = y.min(self.height - 1);
            for x in 0..w {
                data.push(self.get(x.min(self.width - 1), sy));
            }
        }
        GrayImage { width: w, height: h, data }
    }

    pub fn crop(&self, width: usize, height: usize) -> GrayImage {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            data.extend_from_slice(&self.data[y * self.width..y * self.width + width]);
        }
        GrayImage { width, height, data }
    }

    /// Square tile with top-left corner `(x0, y0)`.
    pub fn tile(&self, x0: usize, y0: usize, size: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(size * size);
        for y in y0..y0 + size {
            out.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + size]);
        }
        out
    }
}

fn next_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c as char);
    }
    if tok.is_empty() {
        return Err(Error::format("PGM header", "unexpected end of file"));
    }
    Ok(tok)
}

fn header_number<R: BufRead>(r: &mut R, field: &str) -> Result<usize> {
    let tok = next_token(r)?;
    tok.parse()
        .map_err(|_| Error::format("PGM header", format!("bad {field} `{tok}`")))
}

/// Reads a binary (P5) PGM with maxval ≤ 255.
pub fn read_pgm_from<R: Read>(reader: R) -> Result<GrayImage> {
    let mut r = BufReader::new(reader);
    let magic = next_token(&mut r)?;
    if magic != "P5" {
        return Err(Error::format("PGM header", format!("expected P5, found `{magic}`")));
    }
    let width = header_number(&mut r, "width")?;
    let height = header_number(&mut r, "height")?;
    let maxval = header_number(&mut r, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format("PGM header", format!("maxval {maxval} is not 8-bit")));
    }
    let mut data = vec![0u8; width * height];
    r.read_exact(&mut data)
        .map_err(|_| Error::format("PGM data", "truncated pixel data"))?;
    if maxval != 255 {
        for v in &mut data {
            *v = ((*v as u32 * 255 + maxval as u32 / 2) / maxval as u32).min(255) as u8;
        }
    }
    GrayImage::new(width, height, data)
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_pgm_from(f).map_err(|e| match e {
        Error::Io(io) => Error::file(path, io),
        other => other,
    })
}

pub fn write_pgm_to<W: Write>(mut w: W, img: &GrayImage) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.data)?;
    Ok(())
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    write_pgm_to(std::io::BufWriter::new(f), img)
}
