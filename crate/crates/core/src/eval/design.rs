//! Factorial accuracy study: random observation layouts on a square grid,
//! exact versus approximate standard errors.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mean_sd, median, p95_abs, rel_error_fields, sigfig_agreement};
use crate::covariance::{range_for_correlation, CovarianceModel};
use crate::error::{invalid, Result};
use crate::grid::RegularGrid;
use crate::kriging::{ObservationSet, SeProblem};
use crate::linalg::DenseCap;
use crate::local::{local_se, Neighborhood};
use crate::nn::nn_se;
use crate::rng::stream;
use crate::Location;

/// Off-grid approximation evaluated against the exact standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxMethod {
    Local,
    NearestNeighbor,
}

impl std::fmt::Display for ApproxMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ApproxMethod::Local => "local",
            ApproxMethod::NearestNeighbor => "nearest_neighbor",
        })
    }
}

/// One (smoothness, range, noise) combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignCell {
    pub nu: f64,
    /// Distance at which the correlation falls to the target.
    pub distance: f64,
    pub theta: f64,
    pub tau: f64,
}

impl DesignCell {
    /// Smoothing parameter `tau^2 / sigma^2` (unit sill).
    pub fn lambda(&self) -> f64 {
        self.tau * self.tau
    }

    pub fn model(&self) -> Result<CovarianceModel> {
        CovarianceModel::new(1.0, self.theta, self.nu)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDesign {
    pub nus: Vec<f64>,
    pub distances: Vec<f64>,
    pub target_corr: f64,
    pub taus: Vec<f64>,
    /// Side length of the square domain `[0, extent]^2`.
    pub extent: f64,
    /// Nodes per side of the evaluation grid.
    pub grid_n: usize,
    pub n_obs: usize,
    pub configs: usize,
    pub orders: Vec<Neighborhood>,
    pub methods: Vec<ApproxMethod>,
    pub seed: u64,
}

impl Default for EvalDesign {
    fn default() -> Self {
        Self {
            nus: vec![0.5, 1.5],
            distances: vec![20.0, 45.0, 70.0],
            target_corr: 0.05,
            taus: vec![0.1, 0.2, 0.3],
            extent: 60.0,
            grid_n: 61,
            n_obs: 35,
            configs: 50,
            orders: vec![
                Neighborhood::Order(1),
                Neighborhood::Order(2),
                Neighborhood::Order(3),
                Neighborhood::Order(4),
                Neighborhood::Full,
            ],
            methods: vec![ApproxMethod::Local, ApproxMethod::NearestNeighbor],
            seed: 2024,
        }
    }
}

impl EvalDesign {
    /// A single cell with the given range parameter directly.
    pub fn single_cell(nu: f64, distance: f64, tau: f64) -> Self {
        Self {
            nus: vec![nu],
            distances: vec![distance],
            taus: vec![tau],
            ..Self::default()
        }
    }

    pub fn grid(&self) -> RegularGrid {
        let h = self.extent / (self.grid_n - 1) as f64;
        RegularGrid {
            origin: [0.0, 0.0],
            spacing: [h, h],
            dims: [self.grid_n, self.grid_n],
        }
    }

    pub fn cells(&self) -> Result<Vec<DesignCell>> {
        let mut out = Vec::new();
        for &nu in &self.nus {
            for &distance in &self.distances {
                let theta = range_for_correlation(nu, self.target_corr, distance)?;
                for &tau in &self.taus {
                    out.push(DesignCell {
                        nu,
                        distance,
                        theta,
                        tau,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Observation layout `k`, uniform on the domain, from its own stream.
    pub fn layout(&self, k: usize) -> Vec<Location> {
        let mut rng = stream(self.seed, k as u64);
        (0..self.n_obs)
            .map(|_| [rng.random::<f64>() * self.extent, rng.random::<f64>() * self.extent])
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_n < 2 || self.n_obs == 0 || self.configs == 0 {
            return Err(invalid("design needs a grid of at least 2 nodes, observations, and configurations"));
        }
        if !(self.extent > 0.0) {
            return Err(invalid("design extent must be positive"));
        }
        Ok(())
    }
}

/// Accuracy of one approximation on one layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub nu: f64,
    pub theta: f64,
    pub tau: f64,
    pub lambda: f64,
    pub config: usize,
    pub method: ApproxMethod,
    pub order: String,
    /// 95th percentile of the absolute relative percent error.
    pub p95_abs_rel_err: f64,
    /// Fraction of nodes agreeing with the exact value to 3 significant figures.
    pub sigfig3: f64,
}

/// Rows for one cell and one layout.
pub fn evaluate_layout(
    design: &EvalDesign,
    cell: &DesignCell,
    config: usize,
    cap: DenseCap,
) -> Result<Vec<DesignRow>> {
    let grid = design.grid();
    let model = cell.model()?;
    let obs = ObservationSet::locations_only(design.layout(config), cell.tau)?;
    let p = SeProblem::new(&grid, &obs, &model, cap)?;
    let exact = p.exact_se()?;
    let mut rows = Vec::new();
    for &method in &design.methods {
        for &nb in &design.orders {
            let approx = match method {
                ApproxMethod::Local => local_se(&p, nb)?,
                ApproxMethod::NearestNeighbor => nn_se(&p, nb, cell.tau * cell.tau, cap)?,
            };
            let rel = rel_error_fields(&exact, &approx);
            rows.push(DesignRow {
                nu: cell.nu,
                theta: cell.theta,
                tau: cell.tau,
                lambda: cell.lambda(),
                config,
                method,
                order: nb.to_string(),
                p95_abs_rel_err: p95_abs(&rel),
                sigfig3: sigfig_agreement(&exact, &approx, 3),
            });
        }
    }
    Ok(rows)
}

/// Every cell, layout, method and order. Row order is fixed (cell, layout,
/// method, order) whatever the thread count.
pub fn run_design(design: &EvalDesign, cap: DenseCap) -> Result<Vec<DesignRow>> {
    design.validate()?;
    let cells = design.cells()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..design.configs).map(move |k| (c, k)))
        .collect();
    let parts = jobs
        .par_iter()
        .map(|&(c, k)| evaluate_layout(design, &cells[c], k, cap))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Aggregate over layouts for one (cell, method, order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub nu: f64,
    pub theta: f64,
    pub tau: f64,
    pub method: ApproxMethod,
    pub order: String,
    pub configs: usize,
    pub sigfig3_mean: f64,
    pub sigfig3_sd: f64,
    pub p95_median: f64,
}

pub fn summarize(rows: &[DesignRow]) -> Vec<DesignSummary> {
    let mut keys: Vec<(f64, f64, f64, ApproxMethod, String)> = Vec::new();
    for r in rows {
        let k = (r.nu, r.theta, r.tau, r.method, r.order.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(nu, theta, tau, method, order)| {
            let sel: Vec<&DesignRow> = rows
                .iter()
                .filter(|r| r.nu == nu && r.theta == theta && r.tau == tau && r.method == method && r.order == order)
                .collect();
            let s: Vec<f64> = sel.iter().map(|r| r.sigfig3).collect();
            let p: Vec<f64> = sel.iter().map(|r| r.p95_abs_rel_err).collect();
            let (m, sd) = mean_sd(&s);
            DesignSummary {
                nu,
                theta,
                tau,
                method,
                order,
                configs: sel.len(),
                sigfig3_mean: m,
                sigfig3_sd: sd,
                p95_median: median(&p),
            }
        })
        .collect()
}

/// Long-format CSV of design rows.
pub fn write_rows_csv<W: Write>(rows: &[DesignRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[DesignSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
