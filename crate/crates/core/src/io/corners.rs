use std::collections::BTreeMap;
use std::path::Path;

use super::{read_text, write_atomic};
use crate::calib::CornerGrid;
use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Parses `row,col,u,v` lines into a complete grid. The grid size is the
/// largest row and column index plus one; every cell must appear once.
pub fn parse_corners_csv(text: &str, path: &Path) -> Result<CornerGrid> {
    let err = |m: String| Error::format(path, m);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.split(',').map(str::trim).eq(["row", "col", "u", "v"]) => {}
        _ => return Err(err("expected header `row,col,u,v`".into())),
    }
    let mut cells = BTreeMap::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(err(format!("line {}: expected 4 fields", i + 1)));
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|_| err(format!("line {}: bad index `{s}`", i + 1)));
        let px = |s: &str| match s.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(err(format!("line {}: bad pixel coordinate `{s}`", i + 1))),
        };
        let key = (idx(f[0])?, idx(f[1])?);
        if cells.insert(key, Vec2::new(px(f[2])?, px(f[3])?)).is_some() {
            return Err(err(format!("duplicate corner ({}, {})", key.0, key.1)));
        }
    }
    if cells.is_empty() {
        return Err(err("no corners".into()));
    }
    let rows = cells.keys().map(|k| k.0).max().unwrap_or(0) + 1;
    let cols = cells.keys().map(|k| k.1).max().unwrap_or(0) + 1;
    let mut pixels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let p = cells.get(&(r, c)).ok_or_else(|| err(format!("missing corner ({r}, {c})")))?;
            pixels.push(*p);
        }
    }
    CornerGrid::new(rows, cols, pixels)
}

pub fn render_corners_csv(grid: &CornerGrid) -> String {
    let mut out = String::from("row,col,u,v\n");
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            let p = grid.get(r, c);
            out.push_str(&format!("{r},{c},{},{}\n", super::fmt_f64(p.x), super::fmt_f64(p.y)));
        }
    }
    out
}

pub fn read_corners_csv(path: &Path) -> Result<CornerGrid> {
    parse_corners_csv(&read_text(path)?, path)
}

pub fn write_corners_csv(path: &Path, grid: &CornerGrid) -> Result<()> {
    write_atomic(path, render_corners_csv(grid).as_bytes())
}
