//! Binary PPM (`P6`) and PGM (`P5`) files with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    /// Interleaved samples in raster order.
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!(
                "unsupported channel count {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::dim(
                "raster image",
                &[height, width, channels],
                &[pixels.len()],
            ));
        }
        Ok(RasterImage {
            width,
            height,
            channels,
            pixels,
        })
    }

    fn magic(&self) -> &'static str {
        if self.channels == 3 {
            "P6"
        } else {
            "P5"
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out =
            format!("{}\n{} {}\n255\n", self.magic(), self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PNM header".into()));
            }
            fields.push(
                std::str::from_utf8(&bytes[start..pos])
                    .map_err(|_| Error::Format("non-ASCII PNM header".into()))?,
            );
        }
        // exactly one whitespace byte separates maxval from the raster
        pos += 1;
        let channels = match fields[0] {
            "P6" => 3,
            "P5" => 1,
            other => return Err(Error::Format(format!("unsupported PNM magic {other:?}"))),
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PNM header field {s:?}")))
        };
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("unsupported maxval {maxval}")));
        }
        let body = bytes.get(pos..).unwrap_or_default();
        if body.len() != width * height * channels {
            return Err(Error::Format(format!(
                "PNM raster holds {} bytes, expected {}",
                body.len(),
                width * height * channels
            )));
        }
        RasterImage::new(width, height, channels, body.to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
