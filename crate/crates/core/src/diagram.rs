//! Time-space diagrams and their CSV / portable graymap encodings.
//!
//! CSV: one line per time step, `N` comma-separated `0`/`1` values, `\n`
//! line endings, no header.
//!
//! PGM: time runs along the horizontal axis and ring position down the
//! vertical axis (site 0 on the top row). Occupied sites are black (0),
//! empty sites white (255), max value 255. `P5` stores one byte per pixel
//! after the header `P5\n<width> <height>\n255\n`; `P2` writes the same
//! values as ASCII, one image row per line.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::RingConfiguration;

/// Gray level used for separator columns in comparison images.
pub const SEPARATOR_GRAY: u8 = 128;

/// `T + 1` rows of `N` occupancy bits; row 0 is the initial condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSpaceDiagram {
    n_sites: usize,
    states: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmFormat {
    /// Binary raster.
    P5,
    /// ASCII raster.
    P2,
}

impl TimeSpaceDiagram {
    pub fn new(initial: &RingConfiguration) -> Self {
        Self {
            n_sites: initial.len(),
            states: initial.bits().to_vec(),
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| CoreError::Domain("diagram needs at least one row".into()))?;
        let mut diagram = Self::new(&RingConfiguration::from_bits(first)?);
        for row in &rows[1..] {
            diagram.push_bits(row)?;
        }
        Ok(diagram)
    }

    pub fn push(&mut self, config: &RingConfiguration) -> Result<()> {
        self.push_bits(config.bits())
    }

    pub fn push_bits(&mut self, row: &[u8]) -> Result<()> {
        if row.len() != self.n_sites {
            return Err(CoreError::Shape {
                expected: format!("{} sites", self.n_sites),
                found: format!("{} sites", row.len()),
            });
        }
        if row.iter().any(|&b| b > 1) {
            return Err(CoreError::Domain("diagram rows must be binary".into()));
        }
        self.states.extend_from_slice(row);
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Number of rows, `T + 1`.
    pub fn n_rows(&self) -> usize {
        self.states.len() / self.n_sites
    }

    /// Number of transitions, `T`.
    pub fn n_steps(&self) -> usize {
        self.n_rows() - 1
    }

    pub fn row(&self, t: usize) -> &[u8] {
        &self.states[t * self.n_sites..(t + 1) * self.n_sites]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.states.chunks_exact(self.n_sites)
    }

    pub fn config(&self, t: usize) -> RingConfiguration {
        RingConfiguration::from_bits(self.row(t)).expect("rows are validated on insert")
    }

    pub fn vehicle_counts(&self) -> Vec<usize> {
        self.rows()
            .map(|r| r.iter().map(|&b| b as usize).sum())
            .collect()
    }

    /// Rows `start..end` as a new diagram.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_rows() {
            return Err(CoreError::Domain(format!(
                "row range {start}..{end} invalid for {} rows",
                self.n_rows()
            )));
        }
        Ok(Self {
            n_sites: self.n_sites,
            states: self.states[start * self.n_sites..end * self.n_sites].to_vec(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.states.len() * 2);
        for row in self.rows() {
            for (i, b) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push(if *b == 1 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|v| match v.trim() {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(CoreError::Domain(format!(
                        "line {}: expected 0 or 1, found {other:?}",
                        lineno + 1
                    ))),
                })
                .collect::<Result<Vec<u8>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?)
    }

    /// Raster with time on the horizontal axis: `height = N`, `width = T + 1`.
    pub fn to_gray(&self) -> GrayImage {
        let (w, h) = (self.n_rows(), self.n_sites);
        let mut pixels = vec![0u8; w * h];
        for (t, row) in self.rows().enumerate() {
            for (site, &b) in row.iter().enumerate() {
                pixels[site * w + t] = if b == 1 { 0 } else { 255 };
            }
        }
        GrayImage {
            width: w,
            height: h,
            pixels,
        }
    }

    pub fn to_pgm(&self, format: PgmFormat) -> Vec<u8> {
        self.to_gray().encode(format)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>, format: PgmFormat) -> Result<()> {
        fs::write(path, self.to_pgm(format))?;
        Ok(())
    }
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn encode(&self, format: PgmFormat) -> Vec<u8> {
        match format {
            PgmFormat::P5 => {
                let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
                out.extend_from_slice(&self.pixels);
                out
            }
            PgmFormat::P2 => {
                let mut s = format!("P2\n{} {}\n255\n", self.width, self.height);
                for row in self.pixels.chunks_exact(self.width.max(1)) {
                    let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
                    let _ = writeln!(s, "{}", line.join(" "));
                }
                s.into_bytes()
            }
        }
    }

    pub fn write(&self, path: impl AsRef<Path>, format: PgmFormat) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.encode(format))?;
        Ok(())
    }

    /// Parses a `P5` or `P2` file with max value 255.
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
                return Err(CoreError::Truncated("PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| CoreError::Header(format!("bad PGM field {s:?}")))
        };
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(CoreError::Header(format!("unsupported max value {maxval}")));
        }
        let n = width * height;
        let pixels = match fields[0].as_str() {
            "P5" => {
                let body = &bytes[(pos + 1).min(bytes.len())..];
                if body.len() < n {
                    return Err(CoreError::Truncated(format!(
                        "PGM raster has {} of {n} bytes",
                        body.len()
                    )));
                }
                body[..n].to_vec()
            }
            "P2" => {
                let values = String::from_utf8_lossy(&bytes[pos..])
                    .split_ascii_whitespace()
                    .map(|v| {
                        v.parse::<u8>()
                            .map_err(|_| CoreError::Header(format!("bad pixel {v:?}")))
                    })
                    .collect::<Result<Vec<u8>>>()?;
                if values.len() < n {
                    return Err(CoreError::Truncated(format!(
                        "PGM raster has {} of {n} values",
                        values.len()
                    )));
                }
                values[..n].to_vec()
            }
            other => {
                return Err(CoreError::BadMagic {
                    expected: "P5 or P2".into(),
                    found: other.into(),
                })
            }
        };
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}

/// Places diagrams left to right with a `gap`-pixel gray separator.
/// All diagrams must share `N`; shorter ones are padded with gray.
pub fn side_by_side(diagrams: &[&TimeSpaceDiagram], gap: usize) -> Result<GrayImage> {
    let first = diagrams
        .first()
        .ok_or_else(|| CoreError::Domain("nothing to compose".into()))?;
    let height = first.n_sites();
    if let Some(d) = diagrams.iter().find(|d| d.n_sites() != height) {
        return Err(CoreError::Shape {
            expected: format!("{height} sites"),
            found: format!("{} sites", d.n_sites()),
        });
    }
    let width = diagrams.iter().map(|d| d.n_rows()).sum::<usize>() + gap * (diagrams.len() - 1);
    let mut pixels = vec![SEPARATOR_GRAY; width * height];
    let mut x0 = 0;
    for d in diagrams {
        let img = d.to_gray();
        for y in 0..height {
            let src = &img.pixels[y * img.width..(y + 1) * img.width];
            pixels[y * width + x0..y * width + x0 + img.width].copy_from_slice(src);
        }
        x0 += img.width + gap;
    }
    Ok(GrayImage {
        width,
        height,
        pixels,
    })
}
