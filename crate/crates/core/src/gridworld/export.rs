use super::{CellClass, OccupancyGrid};
use crate::error::{Error, Result};
use crate::geom::Vec2;

fn glyph(c: CellClass) -> char {
    match c {
        CellClass::Free => '.',
        CellClass::Occupied => '#',
        CellClass::Unknown => '?',
    }
}

/// One line per row, highest row first, using `.` Free, `#` Occupied, `?` Unknown.
pub fn to_ascii(grid: &OccupancyGrid) -> String {
    let mut s = String::with_capacity((grid.width() + 1) * grid.height());
    for y in (0..grid.height()).rev() {
        for x in 0..grid.width() {
            s.push(glyph(grid.class(super::Cell::new(x, y))));
        }
        s.push('\n');
    }
    s
}

/// Plain (P2) portable graymap: Free 255, Unknown 128, Occupied 0.
pub fn to_pgm(grid: &OccupancyGrid) -> String {
    let mut s = format!("P2\n{} {}\n255\n", grid.width(), grid.height());
    for y in (0..grid.height()).rev() {
        let row: Vec<&str> = (0..grid.width())
            .map(|x| match grid.class(super::Cell::new(x, y)) {
                CellClass::Free => "255",
                CellClass::Unknown => "128",
                CellClass::Occupied => "0",
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Inverse of [`to_ascii`]; known cells are set to ±`l_max`.
pub fn parse_ascii(text: &str, resolution: f64, origin: Vec2) -> Result<OccupancyGrid> {
    let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
    let height = rows.len();
    let width = rows.first().map(|r| r.chars().count()).unwrap_or(0);
    if rows.iter().any(|r| r.chars().count() != width) {
        return Err(Error::Contract("ragged ascii map".into()));
    }
    let mut g = OccupancyGrid::new(width, height, resolution, origin)?;
    let l = g.params().l_max;
    for (r, row) in rows.iter().enumerate() {
        let y = height - 1 - r;
        for (x, ch) in row.chars().enumerate() {
            let v = match ch {
                '.' => -l,
                '#' => l,
                '?' => 0.0,
                other => return Err(Error::Contract(format!("unexpected map glyph {other:?}"))),
            };
            g.set_log_odds(super::Cell::new(x, y), v);
        }
    }
    Ok(g)
}
