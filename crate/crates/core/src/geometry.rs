//! Periodic lattice geometry and the nearest-neighbour step set.
//!
//! Sites of the d-dimensional discrete torus (Z/NZ)^d are stored in
//! lexicographic order with the last coordinate fastest, so axis d-1 has
//! stride 1 and axis 0 has stride N^(d-1).

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::Result;

/// Largest dimension the lattice machinery supports.
pub const MAX_DIM: usize = 4;

/// A signed unit step: one of the 2d vectors ±e_1, ..., ±e_d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Direction {
    /// Axis index in 0..d.
    pub axis: usize,
    /// `true` for +e_axis, `false` for -e_axis.
    pub positive: bool,
}

impl Direction {
    pub fn new(axis: usize, positive: bool) -> Self {
        Self { axis, positive }
    }

    /// Dense index in 0..2d: +e_a at 2a, -e_a at 2a+1.
    pub fn index(&self) -> usize {
        2 * self.axis + usize::from(!self.positive)
    }

    /// Inverse of [`Direction::index`].
    pub fn from_index(idx: usize) -> Self {
        Self {
            axis: idx / 2,
            positive: idx % 2 == 0,
        }
    }

    /// The opposite step; an involution.
    pub fn flip(&self) -> Self {
        Self {
            axis: self.axis,
            positive: !self.positive,
        }
    }

    /// Signed unit displacement along the axis.
    pub fn step(&self) -> i64 {
        if self.positive {
            1
        } else {
            -1
        }
    }

    /// i-th component of the step vector.
    pub fn component(&self, i: usize) -> f64 {
        if i == self.axis {
            self.step() as f64
        } else {
            0.0
        }
    }

    /// All 2d steps in index order.
    pub fn all(d: usize) -> impl Iterator<Item = Direction> {
        (0..2 * d).map(Direction::from_index)
    }
}

/// Discrete torus (Z/NZ)^d with lexicographic site indexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGeometry {
    d: usize,
    n: usize,
}

impl TorusGeometry {
    /// New torus; `d` in 1..=4 and `n >= 2`.
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(CoreError::InvalidGeometry(format!(
                "dimension {d} outside 1..={MAX_DIM}"
            )));
        }
        if n < 2 {
            return Err(CoreError::InvalidGeometry(format!("side length {n} < 2")));
        }
        // Guard against overflow of the site count.
        let sites = (n as u128).pow(d as u32);
        if sites > usize::MAX as u128 / 16 {
            return Err(CoreError::InvalidGeometry(format!(
                "lattice with {sites} sites is too large"
            )));
        }
        Ok(Self { d, n })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.n
    }

    /// Total number of sites N^d.
    pub fn sites(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Number of signed unit steps, 2d.
    pub fn num_directions(&self) -> usize {
        2 * self.d
    }

    pub fn directions(&self) -> impl Iterator<Item = Direction> {
        Direction::all(self.d)
    }

    /// Stride of `axis` in the flat site index.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.d - 1 - axis) as u32)
    }

    /// Coordinates of a flat site index.
    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut c = vec![0; self.d];
        let mut rest = site;
        for axis in (0..self.d).rev() {
            c[axis] = rest % self.n;
            rest /= self.n;
        }
        c
    }

    /// Flat index of a coordinate tuple (entries already in 0..N).
    pub fn site(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.d);
        coords.iter().fold(0, |acc, &c| acc * self.n + c)
    }

    /// Flat index of an arbitrary integer point, wrapped onto the torus.
    pub fn site_wrapped(&self, point: &[i64]) -> usize {
        debug_assert_eq!(point.len(), self.d);
        point.iter().fold(0, |acc, &c| {
            acc * self.n + c.rem_euclid(self.n as i64) as usize
        })
    }

    /// Neighbouring site one step along `dir`, wrapping modulo N.
    pub fn neighbor(&self, site: usize, dir: Direction) -> usize {
        let stride = self.stride(dir.axis);
        let n = self.n;
        let coord = (site / stride) % n;
        if dir.positive {
            if coord == n - 1 {
                site - (n - 1) * stride
            } else {
                site + stride
            }
        } else if coord == 0 {
            site + (n - 1) * stride
        } else {
            site - stride
        }
    }

    /// Centered representative of a coordinate, in [-N/2, N/2).
    pub fn centered(&self, coord: usize) -> i64 {
        let n = self.n as i64;
        let c = coord as i64;
        if 2 * c >= n {
            c - n
        } else {
            c
        }
    }

    /// Euclidean norm of the centered representative of a site.
    pub fn centered_norm(&self, site: usize) -> f64 {
        let mut sum = 0.0;
        let mut rest = site;
        for _ in 0..self.d {
            let c = self.centered(rest % self.n) as f64;
            sum += c * c;
            rest /= self.n;
        }
        sum.sqrt()
    }

    /// Precomputed neighbour table `[site * 2d + dir.index()]` for hot loops.
    pub fn neighbor_table(&self) -> Vec<usize> {
        let nd = self.num_directions();
        let mut table = vec![0usize; self.sites() * nd];
        for site in 0..self.sites() {
            for dir in self.directions() {
                table[site * nd + dir.index()] = self.neighbor(site, dir);
            }
        }
        table
    }
}
