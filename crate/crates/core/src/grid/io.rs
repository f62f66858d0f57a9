//! Global map container formats.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! magic      4 bytes  "ISRM"
//! version    u16      1
//! side (G)   u32
//! labels (C) u32
//! cell_size  f64
//! origin_x   f64
//! origin_y   f64
//! cells      G*G records, row-major, each (3 + C) f32:
//!            occupancy, explored, region[0..C], obs_count
//! ```
//!
//! The text variant carries the same header as `key value` lines followed by
//! one line per cell with the same `3 + C` values. Floats are written in
//! shortest round-trip form so both variants reproduce the stored `f32`s
//! bit for bit. Values are held as `f64` in memory and narrowed to `f32` on
//! write, so `write -> read -> write` is byte-identical.

use std::io::{BufRead, Read, Write};

use super::{CellGrid, GlobalMap};
use crate::error::{Error, Result};

pub const MAP_MAGIC: &[u8; 4] = b"ISRM";
pub const MAP_VERSION: u16 = 1;
const TEXT_MAGIC: &str = "ISRM-TEXT";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        what: "map file",
        msg: msg.into(),
    }
}

pub fn write_map<W: Write>(map: &GlobalMap, mut out: W) -> Result<()> {
    let grid = &map.grid;
    out.write_all(MAP_MAGIC)?;
    out.write_all(&MAP_VERSION.to_le_bytes())?;
    out.write_all(&(grid.side() as u32).to_le_bytes())?;
    out.write_all(&(grid.num_labels() as u32).to_le_bytes())?;
    out.write_all(&map.cell_size.to_le_bytes())?;
    out.write_all(&map.origin.0.to_le_bytes())?;
    out.write_all(&map.origin.1.to_le_bytes())?;
    let mut buf = Vec::with_capacity(grid.len() * (3 + grid.num_labels()) * 4);
    for flat in 0..grid.len() {
        for &v in grid.channels(flat) {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        buf.extend_from_slice(&(grid.obs_count(flat) as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn take<const N: usize>(input: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    input
        .read_exact(&mut b)
        .map_err(|e| format_err(format!("truncated header: {e}")))?;
    Ok(b)
}

pub fn read_map<R: Read>(mut input: R) -> Result<GlobalMap> {
    let magic: [u8; 4] = take(&mut input)?;
    if &magic != MAP_MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = u16::from_le_bytes(take(&mut input)?);
    if version != MAP_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let side = u32::from_le_bytes(take(&mut input)?) as usize;
    let labels = u32::from_le_bytes(take(&mut input)?) as usize;
    let cell_size = f64::from_le_bytes(take(&mut input)?);
    let ox = f64::from_le_bytes(take(&mut input)?);
    let oy = f64::from_le_bytes(take(&mut input)?);
    let mut map = GlobalMap::new(side, labels, cell_size, (ox, oy));
    let per_cell = 3 + labels;
    let mut body = vec![0u8; side * side * per_cell * 4];
    input
        .read_exact(&mut body)
        .map_err(|e| format_err(format!("truncated cell data: {e}")))?;
    let mut values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for flat in 0..side * side {
        let ch = map.grid.channels_mut(flat);
        for slot in ch.iter_mut() {
            *slot = values.next().unwrap_or_default() as f64;
        }
        let count = values.next().unwrap_or_default();
        map.grid.set_count(flat, decode_count(count)?);
    }
    Ok(map)
}

fn decode_count(v: f32) -> Result<u32> {
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(format_err(format!("invalid obs_count {v}")));
    }
    Ok(v as u32)
}

pub fn write_map_text<W: Write>(map: &GlobalMap, mut out: W) -> Result<()> {
    let grid = &map.grid;
    writeln!(out, "{TEXT_MAGIC} {MAP_VERSION}")?;
    writeln!(out, "side {}", grid.side())?;
    writeln!(out, "labels {}", grid.num_labels())?;
    writeln!(out, "cell_size {:?}", map.cell_size)?;
    writeln!(out, "origin {:?} {:?}", map.origin.0, map.origin.1)?;
    let mut line = String::new();
    for flat in 0..grid.len() {
        line.clear();
        for &v in grid.channels(flat) {
            line.push_str(&format!("{:?} ", v as f32));
        }
        line.push_str(&format!("{:?}", grid.obs_count(flat) as f32));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn header_value<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    let line = line.ok_or_else(|| format_err(format!("missing {key}")))?;
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| format_err(format!("expected {key}, got {line:?}")))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| format_err(format!("cannot parse {what} from {s:?}")))
}

pub fn read_map_text<R: BufRead>(input: R) -> Result<GlobalMap> {
    let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
    let mut it = lines.iter().map(String::as_str);
    let version = header_value(it.next(), TEXT_MAGIC)?;
    if parse::<u16>(version, "version")? != MAP_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let side: usize = parse(header_value(it.next(), "side")?, "side")?;
    let labels: usize = parse(header_value(it.next(), "labels")?, "labels")?;
    let cell_size: f64 = parse(header_value(it.next(), "cell_size")?, "cell_size")?;
    let origin = header_value(it.next(), "origin")?;
    let (ox, oy) = origin
        .split_once(' ')
        .ok_or_else(|| format_err("origin needs two values"))?;
    let mut map = GlobalMap::new(side, labels, cell_size, (parse(ox, "origin")?, parse(oy, "origin")?));
    for flat in 0..side * side {
        let line = it
            .next()
            .ok_or_else(|| format_err(format!("missing cell line {flat}")))?;
        let values: Vec<f32> = line
            .split_whitespace()
            .map(|t| parse(t, "cell value"))
            .collect::<Result<_>>()?;
        if values.len() != 3 + labels {
            return Err(format_err(format!(
                "cell line {flat} has {} values, expected {}",
                values.len(),
                3 + labels
            )));
        }
        let ch = map.grid.channels_mut(flat);
        for (slot, v) in ch.iter_mut().zip(&values) {
            *slot = *v as f64;
        }
        map.grid.set_count(flat, decode_count(values[2 + labels])?);
    }
    Ok(map)
}

impl CellGrid {
    /// Rounds every stored channel to `f32` precision.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}
