//! Integer position layouts for square image grids.
//!
//! A layout assigns every grid cell a nonnegative position index. All five
//! schemes produce indices that are contiguous from 0, so the number of
//! distinct positions an image consumes is just the largest index plus one:
//!
//! * `raster` / `reverse_raster`: row-major order, side^2 distinct indices.
//! * `mca`: the mirrored Manhattan distance `x + y` measured from the nearest
//!   corner, side - 1 distinct indices. Mirror-image cells share an index.
//! * `reverse_mca`: the same distance flipped so the grid center gets 0.
//! * `cca`: concentric square rings, periphery 0, side / 2 distinct indices.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Validated square grid shape. Sides are even and at least 2 so every cell
/// has a well-defined nearest corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    side: usize,
}

impl GridSpec {
    pub fn new(side: usize) -> Result<Self> {
        if side == 0 || side % 2 != 0 {
            return Err(Error::InvalidGrid { side });
        }
        Ok(Self { side })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn total(&self) -> usize {
        self.side * self.side
    }
}

/// Mirrored Manhattan coordinates of a cell: componentwise distance to the
/// nearest grid edge, so all four corners sit at (0, 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coord2D {
    pub x: usize,
    pub y: usize,
}

/// Signed Manhattan step from `a` to `b`. Antisymmetric, and telescopes:
/// summing deltas along any path equals the endpoint delta.
pub fn signed_manhattan_delta(a: Coord2D, b: Coord2D) -> i64 {
    (b.x as i64 - a.x as i64) + (b.y as i64 - a.y as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Raster,
    ReverseRaster,
    Mca,
    ReverseMca,
    Cca,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Raster,
        Scheme::ReverseRaster,
        Scheme::Mca,
        Scheme::ReverseMca,
        Scheme::Cca,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Raster => "raster",
            Scheme::ReverseRaster => "reverse_raster",
            Scheme::Mca => "mca",
            Scheme::ReverseMca => "reverse_mca",
            Scheme::Cca => "cca",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "raster" => Ok(Scheme::Raster),
            "reverse_raster" | "reverse-raster" => Ok(Scheme::ReverseRaster),
            "mca" => Ok(Scheme::Mca),
            "reverse_mca" | "reverse-mca" => Ok(Scheme::ReverseMca),
            "cca" => Ok(Scheme::Cca),
            other => Err(format!(
                "unknown scheme {other:?}, expected one of raster, reverse_raster, mca, reverse_mca, cca"
            )),
        }
    }
}

/// Mirrored Manhattan coordinates for every cell, row-major.
pub fn manhattan_coords(grid: GridSpec) -> Vec<Coord2D> {
    let side = grid.side();
    let mut out = Vec::with_capacity(grid.total());
    for r in 0..side {
        for c in 0..side {
            out.push(Coord2D {
                x: r.min(side - 1 - r),
                y: c.min(side - 1 - c),
            });
        }
    }
    out
}

/// A per-cell position index assignment, row-major, with indices covering
/// `0..num_distinct` without gaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionLayout {
    pub scheme: Scheme,
    pub side: usize,
    pub indices: Vec<usize>,
    pub num_distinct: usize,
}

impl PositionLayout {
    pub fn for_scheme(scheme: Scheme, grid: GridSpec) -> Self {
        match scheme {
            Scheme::Raster => Self::raster(grid),
            Scheme::ReverseRaster => Self::reverse_raster(grid),
            Scheme::Mca => Self::manhattan(grid),
            Scheme::ReverseMca => Self::reverse_manhattan(grid),
            Scheme::Cca => Self::concentric(grid),
        }
    }

    /// Row-major reading order: index = row * side + col.
    pub fn raster(grid: GridSpec) -> Self {
        Self::from_fn(Scheme::Raster, grid, |r, c, side| r * side + c)
    }

    /// Raster flipped end to end: the last cell reads 0.
    pub fn reverse_raster(grid: GridSpec) -> Self {
        let total = grid.total();
        Self::from_fn(Scheme::ReverseRaster, grid, |r, c, side| {
            total - 1 - (r * side + c)
        })
    }

    /// Mirrored Manhattan distance x + y. Corners get 0, the four central
    /// cells share the maximum side - 2.
    pub fn manhattan(grid: GridSpec) -> Self {
        Self::from_fn(Scheme::Mca, grid, |r, c, side| {
            r.min(side - 1 - r) + c.min(side - 1 - c)
        })
    }

    /// Mirrored Manhattan distance flipped: center 0, corners side - 2.
    pub fn reverse_manhattan(grid: GridSpec) -> Self {
        Self::from_fn(Scheme::ReverseMca, grid, |r, c, side| {
            (side - 2) - (r.min(side - 1 - r) + c.min(side - 1 - c))
        })
    }

    /// Concentric square rings, outermost ring 0, innermost side/2 - 1.
    pub fn concentric(grid: GridSpec) -> Self {
        Self::from_fn(Scheme::Cca, grid, |r, c, side| {
            r.min(side - 1 - r).min(c.min(side - 1 - c))
        })
    }

    fn from_fn(scheme: Scheme, grid: GridSpec, f: impl Fn(usize, usize, usize) -> usize) -> Self {
        let side = grid.side();
        let mut indices = Vec::with_capacity(grid.total());
        for r in 0..side {
            for c in 0..side {
                indices.push(f(r, c, side));
            }
        }
        let num_distinct = indices.iter().max().map_or(0, |m| m + 1);
        let layout = Self {
            scheme,
            side,
            indices,
            num_distinct,
        };
        debug_assert!(layout.validate().is_ok());
        layout
    }

    pub fn index_at(&self, row: usize, col: usize) -> usize {
        self.indices[row * self.side + col]
    }

    /// Check the contiguity and size invariants. Constructed layouts always
    /// pass; call this on deserialized ones before trusting them.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidLayout { reason });
        if self.side == 0 || self.side % 2 != 0 {
            return Err(Error::InvalidGrid { side: self.side });
        }
        if self.indices.len() != self.side * self.side {
            return fail(format!(
                "{} indices for a {}x{} grid",
                self.indices.len(),
                self.side,
                self.side
            ));
        }
        if self.num_distinct == 0 {
            return fail("num_distinct is 0".into());
        }
        let mut seen = vec![false; self.num_distinct];
        for &idx in &self.indices {
            if idx >= self.num_distinct {
                return fail(format!("index {idx} >= num_distinct {}", self.num_distinct));
            }
            seen[idx] = true;
        }
        if let Some(gap) = seen.iter().position(|s| !s) {
            return fail(format!("index {gap} is never assigned"));
        }
        Ok(())
    }

    /// The grid as CSV, one line per row.
    pub fn grid_csv(&self) -> String {
        let mut out = String::new();
        for row in self.indices.chunks(self.side) {
            let line: Vec<String> = row.iter().map(|i| i.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// The grid as an aligned text table.
    pub fn grid_table(&self) -> String {
        let width = (self.num_distinct - 1).to_string().len();
        let mut out = String::new();
        for row in self.indices.chunks(self.side) {
            let line: Vec<String> = row.iter().map(|i| format!("{i:>width$}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}
