//! Regular 2-D grids and fields defined on them.
//!
//! Node `(i, j)` sits at `(x0 + i*dx, y0 + j*dy)` for `0 <= i < nx`,
//! `0 <= j < ny`. Flattened vectors are row-major with `x` fastest:
//! `index = j * nx + i`. Every matrix in the crate (W1, Lambda, cross
//! covariances) uses this ordering.

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{invalid, Result};
use crate::Location;

// Coordinates this close to a grid line (in node units) are snapped onto it.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularGrid {
    pub origin: [f64; 2],
    pub spacing: [f64; 2],
    pub dims: [usize; 2],
}

impl RegularGrid {
    pub fn new(origin: [f64; 2], spacing: [f64; 2], dims: [usize; 2]) -> Result<Self> {
        let g = Self { origin, spacing, dims };
        g.validate()?;
        Ok(g)
    }

    /// Unit-spaced grid with nodes at `0..n` in both directions.
    pub fn unit_square(n: usize) -> Self {
        Self {
            origin: [0.0, 0.0],
            spacing: [1.0, 1.0],
            dims: [n, n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(invalid("grid origin must be finite"));
        }
        if !(self.spacing[0] > 0.0 && self.spacing[1] > 0.0)
            || !(self.spacing[0].is_finite() && self.spacing[1].is_finite())
        {
            return Err(invalid("grid spacing must be finite and positive"));
        }
        if self.dims[0] == 0 || self.dims[1] == 0 {
            return Err(invalid("grid dimensions must be positive"));
        }
        Ok(())
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.dims[1]
    }

    /// Number of nodes `M`.
    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.dims[0] + i
    }

    #[inline]
    pub fn ij(&self, index: usize) -> (usize, usize) {
        (index % self.dims[0], index / self.dims[0])
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Location {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
        ]
    }

    #[inline]
    pub fn location(&self, index: usize) -> Location {
        let (i, j) = self.ij(index);
        self.node(i, j)
    }

    /// All node locations in grid order.
    pub fn nodes(&self) -> Vec<Location> {
        (0..self.len()).map(|k| self.location(k)).collect()
    }

    /// Continuous node coordinates of a point, snapped onto grid lines within `1e-9`.
    pub fn node_coords(&self, p: Location) -> [f64; 2] {
        let snap = |t: f64| {
            let r = t.round();
            if (t - r).abs() < SNAP {
                r
            } else {
                t
            }
        };
        [
            snap((p[0] - self.origin[0]) / self.spacing[0]),
            snap((p[1] - self.origin[1]) / self.spacing[1]),
        ]
    }

    /// Lower-left node of the grid box containing `p` (floor convention: points
    /// on a grid line belong to the box with the larger index, i.e. the line is
    /// that box's lower edge). May lie outside the grid.
    pub fn containing_box(&self, p: Location) -> (i64, i64) {
        let t = self.node_coords(p);
        (t[0].floor() as i64, t[1].floor() as i64)
    }

    pub fn contains_node(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.dims[0] && (j as usize) < self.dims[1]
    }

    /// Offset (in nodes) of `other`'s origin relative to this grid, when both
    /// grids share spacing and their nodes align.
    pub fn lattice_offset(&self, other: &RegularGrid) -> Option<(i64, i64)> {
        if self.spacing != other.spacing {
            return None;
        }
        let t = self.node_coords(other.origin);
        if t[0].fract() != 0.0 || t[1].fract() != 0.0 {
            return None;
        }
        Some((t[0] as i64, t[1] as i64))
    }

    /// Grid with half the spacing whose nodes include every original node.
    pub fn refined(&self) -> RegularGrid {
        RegularGrid {
            origin: self.origin,
            spacing: [self.spacing[0] / 2.0, self.spacing[1] / 2.0],
            dims: [2 * self.dims[0] - 1, 2 * self.dims[1] - 1],
        }
    }

    /// Sub-grid of `self` selected as a window of a larger aligned grid.
    pub fn window_indices(&self, outer: &RegularGrid) -> Option<Vec<usize>> {
        let (oi, oj) = outer.lattice_offset(self)?;
        if oi < 0
            || oj < 0
            || oi as usize + self.nx() > outer.nx()
            || oj as usize + self.ny() > outer.ny()
        {
            return None;
        }
        let (oi, oj) = (oi as usize, oj as usize);
        let mut idx = Vec::with_capacity(self.len());
        for j in 0..self.ny() {
            for i in 0..self.nx() {
                idx.push(outer.index(oi + i, oj + j));
            }
        }
        Some(idx)
    }
}

/// Grow `grid` (spacing unchanged, original nodes preserved) so every location
/// is at least `margin` node spacings inside the extent.
pub fn pad_for_observations(grid: &RegularGrid, locs: &[Location], margin: usize) -> RegularGrid {
    if locs.is_empty() {
        return *grid;
    }
    let m = margin as f64;
    let (mut lo, mut hi) = ([0usize; 2], [0usize; 2]);
    for p in locs {
        let t = grid.node_coords(*p);
        for ax in 0..2 {
            let need_lo = (m - t[ax]).ceil();
            if need_lo > 0.0 {
                lo[ax] = lo[ax].max(need_lo as usize);
            }
            let need_hi = (t[ax] + m - (grid.dims[ax] - 1) as f64).ceil();
            if need_hi > 0.0 {
                hi[ax] = hi[ax].max(need_hi as usize);
            }
        }
    }
    RegularGrid {
        origin: [
            grid.origin[0] - lo[0] as f64 * grid.spacing[0],
            grid.origin[1] - lo[1] as f64 * grid.spacing[1],
        ],
        spacing: grid.spacing,
        dims: [grid.dims[0] + lo[0] + hi[0], grid.dims[1] + lo[1] + hi[1]],
    }
}

/// Values on a grid in grid order, with the seed and draw that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: RegularGrid,
    pub values: Vec<f64>,
    pub seed: Option<u64>,
    pub draw: Option<u64>,
}

impl GridField {
    pub fn new(grid: RegularGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!(
                "field has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("field values must be finite"));
        }
        Ok(Self {
            grid,
            values,
            seed: None,
            draw: None,
        })
    }

    pub fn zeros(grid: RegularGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            seed: None,
            draw: None,
        }
    }

    pub fn with_provenance(mut self, seed: u64, draw: u64) -> Self {
        self.seed = Some(seed);
        self.draw = Some(draw);
        self
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }
}

/// Covariance between lattice nodes as a function of the index offset.
///
/// On a regular grid `C(node_a, node_b)` only depends on `|di|, |dj|`, so a
/// table of `(max_di + 1) * (max_dj + 1)` values replaces every kernel
/// evaluation between grid nodes.
#[derive(Debug, Clone)]
pub struct LagTable {
    width: usize,
    max: [usize; 2],
    values: Vec<f64>,
}

impl LagTable {
    pub fn new(model: &CovarianceModel, spacing: [f64; 2], max_di: usize, max_dj: usize) -> Self {
        let width = max_di + 1;
        let mut values = Vec::with_capacity(width * (max_dj + 1));
        for dj in 0..=max_dj {
            for di in 0..=max_di {
                let d = (di as f64 * spacing[0]).hypot(dj as f64 * spacing[1]);
                values.push(model.cov(d));
            }
        }
        Self {
            width,
            max: [max_di, max_dj],
            values,
        }
    }

    /// Table covering every pair of nodes of `grid`.
    pub fn for_grid(model: &CovarianceModel, grid: &RegularGrid) -> Self {
        Self::new(model, grid.spacing, grid.nx() - 1, grid.ny() - 1)
    }

    #[inline]
    pub fn get(&self, di: i64, dj: i64) -> f64 {
        let (a, b) = (di.unsigned_abs() as usize, dj.unsigned_abs() as usize);
        debug_assert!(a <= self.max[0] && b <= self.max[1]);
        self.values[b * self.width + a]
    }

    pub fn max_lag(&self) -> [usize; 2] {
        self.max
    }
}
