//! Plain-text (P2) PGM rasters, top row first, up to 16-bit levels.

use std::fmt::Write as _;
use std::path::Path;

use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl Gray {
    pub fn encode(&self) -> String {
        let mut out = format!("P2\n{} {}\n{}\n", self.width, self.height, self.maxval);
        for row in self.data.chunks(self.width.max(1)) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn decode(text: &str) -> Result<Self, Error> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let magic = tokens.next().ok_or_else(|| Error::Config("empty PGM".into()))?;
        if magic != "P2" {
            return Err(Error::Config(format!("not a plain PGM (magic {magic:?})")));
        }
        let mut num = |what: &str| -> Result<usize, Error> {
            let t = tokens.next().ok_or_else(|| Error::Config(format!("PGM truncated before {what}")))?;
            t.parse::<usize>().map_err(|_| Error::Config(format!("bad PGM {what} '{t}'")))
        };
        let (width, height, maxval) = (num("width")?, num("height")?, num("maxval")?);
        if maxval == 0 || maxval > u16::MAX as usize {
            return Err(Error::Config(format!("PGM maxval {maxval} out of range")));
        }
        let mut data = Vec::with_capacity(width * height);
        for _ in 0..width * height {
            let v = num("pixel")?;
            if v > maxval {
                return Err(Error::Config(format!("PGM pixel {v} exceeds maxval {maxval}")));
            }
            data.push(v as u16);
        }
        if tokens.next().is_some() {
            return Err(Error::Config("PGM has trailing data".into()));
        }
        Ok(Self { width, height, maxval: maxval as u16, data })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::decode(&text)
    }

    /// Level at column `x`, row `y` (row 0 at the top), scaled to [0, 1].
    pub fn level(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x] as f64 / self.maxval as f64
    }
}
