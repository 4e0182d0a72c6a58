//! Integer grid coordinates shared by the planner, the fusion canvas, and
//! the rotary phases. Coordinates are `(h, w)` pairs in latent-cell (or
//! pixel) units; all arithmetic is exact.

use std::fmt;
use std::ops::{Add, Mul, Sub};

/// A position on the global grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct GridCoord {
    pub h: i64,
    pub w: i64,
}

impl GridCoord {
    pub const ORIGIN: GridCoord = GridCoord { h: 0, w: 0 };

    pub fn new(h: i64, w: i64) -> Self {
        Self { h, w }
    }
}

impl Add for GridCoord {
    type Output = GridCoord;
    fn add(self, rhs: GridCoord) -> GridCoord {
        GridCoord::new(self.h + rhs.h, self.w + rhs.w)
    }
}

impl Sub for GridCoord {
    type Output = GridCoord;
    fn sub(self, rhs: GridCoord) -> GridCoord {
        GridCoord::new(self.h - rhs.h, self.w - rhs.w)
    }
}

impl Mul<i64> for GridCoord {
    type Output = GridCoord;
    fn mul(self, k: i64) -> GridCoord {
        GridCoord::new(self.h * k, self.w * k)
    }
}

impl fmt::Display for GridCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.h, self.w)
    }
}

/// Height × width of a rectangular region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Extent {
    pub h: usize,
    pub w: usize,
}

impl Extent {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    pub fn contains(&self, c: GridCoord) -> bool {
        c.h >= 0 && c.w >= 0 && (c.h as usize) < self.h && (c.w as usize) < self.w
    }

    /// True when a tile of extent `tile` placed at `anchor` lies fully inside.
    pub fn fits(&self, anchor: GridCoord, tile: Extent) -> bool {
        anchor.h >= 0
            && anchor.w >= 0
            && anchor.h as u64 + tile.h as u64 <= self.h as u64
            && anchor.w as u64 + tile.w as u64 <= self.w as u64
    }
}

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.h, self.w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coord_arithmetic() {
        let a = GridCoord::new(5, 5);
        let d = GridCoord::new(1, 0);
        assert_eq!(a + d * 16, GridCoord::new(21, 5));
        assert_eq!(a - a, GridCoord::ORIGIN);
    }

    #[test]
    fn extent_fits() {
        let canvas = Extent::new(8, 32);
        let tile = Extent::new(8, 16);
        assert!(canvas.fits(GridCoord::new(0, 16), tile));
        assert!(!canvas.fits(GridCoord::new(0, 17), tile));
        assert!(!canvas.fits(GridCoord::new(-1, 0), tile));
    }
}
