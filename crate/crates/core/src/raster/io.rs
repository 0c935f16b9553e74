//! Raster file formats.
//!
//! Binary (`.stpr`), all little-endian:
//!
//! ```text
//! "STPR" | version u16 | width u32 | height u32 | bands u16 | cell_size f64 | nodata f32
//! per band: name length u16 | name bytes (utf-8)
//! per band: width*height f32, row-major
//! ```
//!
//! Text: a header line `ncols nrows cellsize nodata` followed by `nrows`
//! lines of `ncols` whitespace-separated values. Single band only.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Grid, MultibandImage};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"STPR";
const VERSION: u16 = 1;
const TEXT_BAND_NAME: &str = "value";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    Binary,
    Text,
}

impl RasterFormat {
    /// `.txt` and `.asc` are text grids, everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt") | Some("asc") => RasterFormat::Text,
            _ => RasterFormat::Binary,
        }
    }
}

pub fn read_raster(path: &Path, format: RasterFormat) -> Result<MultibandImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    match format {
        RasterFormat::Binary => read_binary(&mut reader).map_err(|e| annotate(e, path)),
        RasterFormat::Text => {
            let mut text = String::new();
            reader
                .read_to_string(&mut text)
                .map_err(|e| Error::io(path, e))?;
            let grid = parse_text(&text).map_err(|e| annotate(e, path))?;
            Ok(MultibandImage::single(TEXT_BAND_NAME, grid))
        }
    }
}

/// Reads a single-band raster.
pub fn read_grid(path: &Path, format: RasterFormat) -> Result<Grid> {
    let image = read_raster(path, format)?;
    if image.band_count() != 1 {
        return Err(Error::Format(format!(
            "{}: expected 1 band, found {}",
            path.display(),
            image.band_count()
        )));
    }
    Ok(image.into_bands().pop().expect("one band").1)
}

pub fn write_raster(image: &MultibandImage, path: &Path, format: RasterFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    match format {
        RasterFormat::Binary => write_binary(image, &mut writer),
        RasterFormat::Text => {
            if image.band_count() != 1 {
                return Err(Error::Format(
                    "text grids hold exactly one band".to_string(),
                ));
            }
            writer.write_all(format_text(image.first()).as_bytes())
        }
    }
    .and_then(|_| writer.flush())
    .map_err(|e| Error::io(path, e))
}

pub fn write_grid(grid: &Grid, path: &Path, format: RasterFormat) -> Result<()> {
    // The name is irrelevant for text output and a harmless default for binary.
    let image = MultibandImage::single(TEXT_BAND_NAME, grid.clone());
    write_raster(&image, path, format)
}

fn annotate(err: Error, path: &Path) -> Error {
    match err {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Dimension(m) => Error::Dimension(format!("{}: {m}", path.display())),
        Error::InvalidValue(m) => Error::InvalidValue(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn write_binary(image: &MultibandImage, w: &mut impl Write) -> std::io::Result<()> {
    let first = image.first();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(first.width() as u32).to_le_bytes())?;
    w.write_all(&(first.height() as u32).to_le_bytes())?;
    w.write_all(&(image.band_count() as u16).to_le_bytes())?;
    w.write_all(&first.cell_size().to_le_bytes())?;
    w.write_all(&first.nodata().to_le_bytes())?;
    for (name, _) in image.bands() {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
    }
    for (_, grid) in image.bands() {
        // Bands share geometry but may carry their own sentinel in memory;
        // the file has one, so remap.
        for &v in grid.values() {
            let v = if grid.is_nodata(v) { first.nodata() } else { v };
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

fn read_binary(reader: &mut impl Read) -> Result<MultibandImage> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("read failed: {e}")))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not an STPR raster".into()));
    }
    let version = u16::from_le_bytes(cur.array()?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let width = u32::from_le_bytes(cur.array()?) as usize;
    let height = u32::from_le_bytes(cur.array()?) as usize;
    let band_count = u16::from_le_bytes(cur.array()?) as usize;
    let cell_size = f64::from_le_bytes(cur.array()?);
    let nodata = f32::from_le_bytes(cur.array()?);
    if band_count == 0 {
        return Err(Error::Format("zero bands".into()));
    }
    let mut names = Vec::with_capacity(band_count);
    for _ in 0..band_count {
        let len = u16::from_le_bytes(cur.array()?) as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Format("band name is not utf-8".into()))?;
        names.push(name.to_string());
    }
    let cells = width
        .checked_mul(height)
        .ok_or_else(|| Error::Dimension("dimensions overflow".into()))?;
    let expected = cells
        .checked_mul(band_count * 4)
        .ok_or_else(|| Error::Dimension("dimensions overflow".into()))?;
    let remaining = bytes.len() - cur.pos;
    if remaining != expected {
        return Err(Error::Dimension(format!(
            "header declares {band_count} band(s) of {width}x{height} ({expected} bytes), payload has {remaining} bytes"
        )));
    }
    let mut bands = Vec::with_capacity(band_count);
    for name in names {
        let values = cur
            .take(cells * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        bands.push((name, Grid::new(width, height, cell_size, nodata, values)?));
    }
    MultibandImage::new(bands)
}

fn parse_text(text: &str) -> Result<Grid> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty text grid".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(Error::Format(format!(
            "header must be 'ncols nrows cellsize nodata', got '{header}'"
        )));
    }
    let bad = |what: &str| Error::Format(format!("bad {what} in header '{header}'"));
    let width: usize = fields[0].parse().map_err(|_| bad("ncols"))?;
    let height: usize = fields[1].parse().map_err(|_| bad("nrows"))?;
    let cell_size: f64 = fields[2].parse().map_err(|_| bad("cellsize"))?;
    let nodata: f32 = fields[3].parse().map_err(|_| bad("nodata"))?;

    let mut values = Vec::with_capacity(width.saturating_mul(height));
    let mut rows = 0;
    for line in lines {
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: f32 = tok
                .parse()
                .map_err(|_| Error::Format(format!("bad value '{tok}' in row {}", rows + 1)))?;
            values.push(v);
        }
        let cols = values.len() - before;
        if cols != width {
            return Err(Error::Dimension(format!(
                "header declares {width} columns, row {} has {cols}",
                rows + 1
            )));
        }
        rows += 1;
    }
    if rows != height {
        return Err(Error::Dimension(format!(
            "header declares {height} rows, found {rows}"
        )));
    }
    Grid::new(width, height, cell_size, nodata, values)
}

fn format_text(grid: &Grid) -> String {
    let mut out = format!(
        "{} {} {} {}\n",
        grid.width(),
        grid.height(),
        grid.cell_size(),
        grid.nodata()
    );
    for row in grid.values().chunks(grid.width()) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
