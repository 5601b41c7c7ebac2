//! Rendering the final map stored at the end of a trace.

use super::trace::Trace;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::gridworld::{parse_ascii, to_ascii, to_pgm, OccupancyGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Render {
    Ascii,
    Pgm,
}

impl std::str::FromStr for Render {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascii" => Ok(Render::Ascii),
            "pgm" => Ok(Render::Pgm),
            _ => Err(Error::Contract(format!("unknown render format {s:?}"))),
        }
    }
}

fn final_map(trace: &Trace) -> Result<(OccupancyGrid, Vec<Vec2>)> {
    let rec = trace.of_kind("map").last().ok_or_else(|| Error::Json("trace has no map record".into()))?;
    let bad = || Error::Json("malformed map record".into());
    let res = rec.data["resolution"].as_f64().ok_or_else(bad)?;
    let rows: Vec<&str> = rec.data["known"].as_array().ok_or_else(bad)?.iter().filter_map(|r| r.as_str()).collect();
    let grid = parse_ascii(&rows.join("\n"), res, Vec2::ZERO)?;
    let poses = rec.data["poses"]
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|p| Some(Vec2::new(p[0].as_f64()?, p[1].as_f64()?)))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(bad)?;
    Ok((grid, poses))
}

/// ASCII output overlays robot ids (mod 10) on the map; PGM is the bare map.
pub fn render(trace: &Trace, how: Render) -> Result<String> {
    let (grid, poses) = final_map(trace)?;
    if how == Render::Pgm {
        return Ok(to_pgm(&grid));
    }
    let mut rows: Vec<Vec<char>> = to_ascii(&grid).lines().map(|l| l.chars().collect()).collect();
    for (i, p) in poses.iter().enumerate() {
        if let Some(c) = grid.cell_at(*p) {
            rows[grid.height() - 1 - c.y][c.x] = char::from_digit((i % 10) as u32, 10).expect("digit");
        }
    }
    let mut out = String::new();
    for r in rows {
        out.extend(r);
        out.push('\n');
    }
    Ok(out)
}
