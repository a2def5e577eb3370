//! Nearest-neighbor Kriging: observations are replaced by Kriging
//! predictions at nearby grid nodes (surrogates) whose noise variance is
//! inflated by the prediction error.

use std::io::Write;

use faer::Mat;
use rand::Rng;

use crate::covariance::CovarianceModel;
use crate::error::{invalid, Result};
use crate::grid::{pad_for_observations, GridField, LagTable, RegularGrid};
use crate::kriging::{clamp_variance, KrigingSystem, ObservationSet, SeProblem};
use crate::linalg::{col_sq_norms, DenseCap, SpdFactor};
use crate::local::{Neighborhood, NeighborhoodMap};
use crate::rng::std_normal;

/// Surrogate observations at grid nodes.
#[derive(Debug, Clone)]
pub struct SurrogateSet {
    pub grid: RegularGrid,
    /// Sorted, deduplicated grid indices.
    pub nodes: Vec<usize>,
    /// Kriging predictions from the real observations.
    pub values: Vec<f64>,
    /// Prediction-error variances at the surrogate nodes.
    pub pred_var: Vec<f64>,
    /// Extra nugget added on top of `pred_var`.
    pub tau2: f64,
}

impl SurrogateSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `pred_var + tau2` per surrogate.
    pub fn inflated_var(&self) -> Vec<f64> {
        self.pred_var.iter().map(|v| v + self.tau2).collect()
    }

    /// Synthetic surrogate data: field value at each surrogate node plus
    /// independent noise with the inflated variance.
    pub fn draw_inputs<R: Rng + ?Sized>(&self, field: &GridField, rng: &mut R) -> Result<Vec<f64>> {
        if field.grid != self.grid {
            return Err(invalid("field grid differs from the surrogate grid"));
        }
        Ok(self
            .nodes
            .iter()
            .zip(self.inflated_var())
            .map(|(&k, v)| field.values[k] + v.sqrt() * std_normal(rng))
            .collect())
    }

    /// CSV with header `x,y,value,sd`; `sd` is the inflated noise sd.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "value", "sd"])?;
        for ((&k, v), s2) in self.nodes.iter().zip(&self.values).zip(self.inflated_var()) {
            let p = self.grid.location(k);
            w.write_record(&[
                format!("{:.17e}", p[0]),
                format!("{:.17e}", p[1]),
                format!("{v:.17e}"),
                format!("{:.17e}", s2.sqrt()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Factored Kriging system on the surrogate nodes.
    pub fn system(&self, model: &CovarianceModel) -> Result<SurrogateSystem> {
        SurrogateSystem::new(self, model)
    }
}

/// Surrogates for `obs` on `grid` (already padded for `Order`). With
/// `Full`, every grid node is a surrogate.
pub fn build_surrogate(
    grid: &RegularGrid,
    obs: &ObservationSet,
    model: &CovarianceModel,
    nb: Neighborhood,
    tau2: f64,
) -> Result<SurrogateSet> {
    obs.validate()?;
    if !(tau2 >= 0.0) || !tau2.is_finite() {
        return Err(invalid("surrogate nugget must be finite and non-negative"));
    }
    let nodes = match nb {
        Neighborhood::Full => (0..grid.len()).collect(),
        Neighborhood::Order(n_p) => {
            let map = NeighborhoodMap::build(grid, &obs.locations, n_p)?;
            let mut v: Vec<usize> = map.indices.into_iter().flatten().collect();
            v.sort_unstable();
            v.dedup();
            v
        }
    };
    let locs: Vec<_> = nodes.iter().map(|&k| grid.location(k)).collect();
    let sys = KrigingSystem::for_observations(model, obs)?;
    let values = sys.predict(&obs.values, &locs)?;
    let pred_var = sys.cond_variance(&locs)?;
    Ok(SurrogateSet {
        grid: *grid,
        nodes,
        values,
        pred_var,
        tau2,
    })
}

/// Factor of `K_N + diag(pred_var + tau2)` with grid prediction from it.
#[derive(Debug)]
pub struct SurrogateSystem {
    grid: RegularGrid,
    model: CovarianceModel,
    nodes: Vec<(i64, i64)>,
    factor: Option<SpdFactor>,
}

impl SurrogateSystem {
    pub fn new(set: &SurrogateSet, model: &CovarianceModel) -> Result<Self> {
        let grid = set.grid;
        let nodes: Vec<(i64, i64)> = set
            .nodes
            .iter()
            .map(|&k| {
                let (i, j) = grid.ij(k);
                (i as i64, j as i64)
            })
            .collect();
        let factor = if nodes.is_empty() {
            None
        } else {
            let lags = LagTable::for_grid(model, &grid);
            let d = set.inflated_var();
            let k = Mat::from_fn(nodes.len(), nodes.len(), |a, b| {
                let c = lags.get(nodes[a].0 - nodes[b].0, nodes[a].1 - nodes[b].1);
                if a == b {
                    c + d[a]
                } else {
                    c
                }
            });
            Some(SpdFactor::new(k.as_ref(), model.sigma2)?)
        };
        Ok(Self {
            grid,
            model: *model,
            nodes,
            factor,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Prediction on `target` (a lattice-aligned window of the surrogate grid).
    pub fn predict_grid(&self, z: &[f64], target: &RegularGrid) -> Result<Vec<f64>> {
        if z.len() != self.len() {
            return Err(invalid("surrogate data length differs from surrogate count"));
        }
        let mut out = vec![0.0; target.len()];
        let Some(f) = &self.factor else {
            return Ok(out);
        };
        let (oi, oj) = self
            .grid
            .lattice_offset(target)
            .ok_or_else(|| invalid("target grid is not aligned with the surrogate grid"))?;
        let alpha = f.solve_vec(z);
        let lags = self.lags_for(target, oi, oj);
        let nx = target.nx();
        for (j, row) in out.chunks_mut(nx).enumerate() {
            let py = j as i64 + oj;
            for (i, o) in row.iter_mut().enumerate() {
                let px = i as i64 + oi;
                *o = self
                    .nodes
                    .iter()
                    .zip(&alpha)
                    .map(|(&(a, b), w)| w * lags.get(a - px, b - py))
                    .sum();
            }
        }
        Ok(out)
    }

    fn lags_for(&self, target: &RegularGrid, oi: i64, oj: i64) -> LagTable {
        let span = |lo: i64, n: usize, m: usize| -> usize {
            let hi = lo + n as i64 - 1;
            (hi.max(m as i64 - 1 - lo).max(m as i64 - 1)) as usize
        };
        LagTable::new(
            &self.model,
            self.grid.spacing,
            span(oi, target.nx(), self.grid.nx()),
            span(oj, target.ny(), self.grid.ny()),
        )
    }

    /// Analytic standard errors on `target`.
    pub fn se_grid(&self, target: &RegularGrid) -> Result<Vec<f64>> {
        let s2 = self.model.sigma2;
        let Some(f) = &self.factor else {
            return Ok(vec![s2.sqrt(); target.len()]);
        };
        let (oi, oj) = self
            .grid
            .lattice_offset(target)
            .ok_or_else(|| invalid("target grid is not aligned with the surrogate grid"))?;
        let lags = self.lags_for(target, oi, oj);
        let nx = target.nx();
        let mut out = Vec::with_capacity(target.len());
        let cols: Vec<usize> = (0..target.len()).collect();
        for chunk in cols.chunks(2048) {
            let mut bt = Mat::from_fn(self.len(), chunk.len(), |a, c| {
                let g = chunk[c];
                let (px, py) = ((g % nx) as i64 + oi, (g / nx) as i64 + oj);
                lags.get(self.nodes[a].0 - px, self.nodes[a].1 - py)
            });
            f.half_solve_in_place(&mut bt);
            for q in col_sq_norms(bt.as_ref()) {
                out.push(clamp_variance(s2 - q, s2)?.sqrt());
            }
        }
        Ok(out)
    }
}

/// Surrogate grid for `nb`: padded for `Order`, the grid itself for `Full`.
pub fn surrogate_grid(grid: &RegularGrid, obs: &ObservationSet, nb: Neighborhood) -> RegularGrid {
    match nb {
        Neighborhood::Full => *grid,
        Neighborhood::Order(n_p) => pad_for_observations(grid, &obs.locations, n_p),
    }
}

/// Nearest-neighbor Kriging standard errors `SE_N` on the problem grid.
pub fn nn_se(p: &SeProblem, nb: Neighborhood, tau2: f64, cap: DenseCap) -> Result<Vec<f64>> {
    let sg = surrogate_grid(&p.grid, &p.obs, nb);
    let set = build_surrogate(&sg, &p.obs, &p.model, nb, tau2)?;
    cap.check(set.len() + p.grid.len())?;
    let sys = set.system(&p.model)?;
    if nb == Neighborhood::Full {
        full_grid_se(&set, &sys, p.model.sigma2)
    } else {
        sys.se_grid(&p.grid)
    }
}

/// Every node is a surrogate: `diag(K - K (K + D)^{-1} K) = d - d^2 diag((K + D)^{-1})`.
fn full_grid_se(set: &SurrogateSet, sys: &SurrogateSystem, sigma2: f64) -> Result<Vec<f64>> {
    let Some(f) = &sys.factor else {
        return Ok(vec![sigma2.sqrt(); set.grid.len()]);
    };
    let inv = f.inverse_diag();
    set.inflated_var()
        .iter()
        .zip(inv)
        .map(|(d, q)| clamp_variance(d - d * d * q, sigma2).map(|v| v.min(sigma2).sqrt()))
        .collect()
}

/// Approximate standard errors `SE_N` for `obs` on `grid`.
pub fn nn_cond_variance(
    grid: &RegularGrid,
    obs: &ObservationSet,
    model: &CovarianceModel,
    nb: Neighborhood,
    tau2: f64,
    cap: DenseCap,
) -> Result<Vec<f64>> {
    let sg = surrogate_grid(grid, obs, nb);
    let set = build_surrogate(&sg, obs, model, nb, tau2)?;
    cap.check(set.len() + grid.len())?;
    set.system(model)?.se_grid(grid)
}
