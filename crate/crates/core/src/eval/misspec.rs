//! How wrong is conditional independence between neighboring grid boxes?
//!
//! Two observations in adjacent boxes of a unit grid are conditioned on the
//! union of their neighborhoods; the remaining correlation between them is
//! what the box-wise sampler ignores. The sweep reports its maximum over a
//! lattice of range and smoothness values.

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{invalid, Result};
use crate::linalg::SpdFactor;
use crate::Location;

/// Conditional correlation of `a` and `b` given the union of their
/// order-`n_p` neighborhoods on the integer lattice.
pub fn conditional_correlation(model: &CovarianceModel, a: Location, b: Location, n_p: usize) -> Result<f64> {
    if n_p == 0 {
        return Err(invalid("neighborhood order must be at least 1"));
    }
    let r = n_p as i64;
    let mut nodes: Vec<(i64, i64)> = Vec::new();
    for p in [a, b] {
        let (bi, bj) = (p[0].floor() as i64, p[1].floor() as i64);
        for j in bj - r + 1..=bj + r {
            for i in bi - r + 1..=bi + r {
                nodes.push((i, j));
            }
        }
    }
    nodes.sort_unstable();
    nodes.dedup();
    let locs: Vec<Location> = nodes.iter().map(|&(i, j)| [i as f64, j as f64]).collect();
    let k = Mat::from_fn(locs.len(), locs.len(), |p, q| model.cov_between(locs[p], locs[q]));
    let f = SpdFactor::new(k.as_ref(), model.sigma2)?;
    let ka = f.half_solve_vec(&locs.iter().map(|l| model.cov_between(a, *l)).collect::<Vec<_>>());
    let kb = f.half_solve_vec(&locs.iter().map(|l| model.cov_between(b, *l)).collect::<Vec<_>>());
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();
    let caa = model.sigma2 - dot(&ka, &ka);
    let cbb = model.sigma2 - dot(&kb, &kb);
    let cab = model.cov_between(a, b) - dot(&ka, &kb);
    Ok(cab / (caa * cbb).sqrt())
}

/// Observation pair for a given separation: both on the line `y = 0.5`,
/// straddling the shared edge `x = 1` of the boxes `[0,1]` and `[1,2]`.
/// At unit separation the members sit on the left edges of their boxes
/// (`x = 0`, `x = 1`); at half separation they sit a quarter unit either
/// side of the shared edge.
pub fn pair_for_spacing(spacing: f64) -> Result<(Location, Location)> {
    if spacing == 1.0 {
        Ok(([0.0, 0.5], [1.0, 0.5]))
    } else if spacing == 0.5 {
        Ok(([0.75, 0.5], [1.25, 0.5]))
    } else {
        Err(invalid(format!("no pair placement defined for spacing {spacing} (use 1.0 or 0.5)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisspecParams {
    pub spacings: Vec<f64>,
    pub n_p: usize,
    pub theta_range: (f64, f64),
    pub nu_range: (f64, f64),
    pub n_theta: usize,
    pub n_nu: usize,
}

impl Default for MisspecParams {
    fn default() -> Self {
        Self {
            spacings: vec![1.0, 0.5],
            n_p: 2,
            theta_range: (0.2, 10.0),
            nu_range: (0.5, 1.5),
            n_theta: 50,
            n_nu: 21,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Maximum conditional correlation for one pair spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisspecResult {
    pub spacing: f64,
    pub max_corr: f64,
    pub theta_at_max: f64,
    pub nu_at_max: f64,
    /// Maximum over the smallest smoothness in the sweep.
    pub max_at_nu_min: f64,
    /// Maximum over the largest smoothness in the sweep.
    pub max_at_nu_max: f64,
}

/// One sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisspecPoint {
    pub spacing: f64,
    pub theta: f64,
    pub nu: f64,
    pub corr: f64,
}

/// Every (spacing, theta, nu) conditional correlation, in sweep order.
pub fn misspec_sweep(params: &MisspecParams) -> Result<Vec<MisspecPoint>> {
    if params.n_theta == 0 || params.n_nu == 0 {
        return Err(invalid("sweep needs at least one range and one smoothness value"));
    }
    let thetas = linspace(params.theta_range.0, params.theta_range.1, params.n_theta);
    let nus = linspace(params.nu_range.0, params.nu_range.1, params.n_nu);
    let mut jobs = Vec::new();
    for &h in &params.spacings {
        let pair = pair_for_spacing(h)?;
        for &theta in &thetas {
            for &nu in &nus {
                jobs.push((h, pair, theta, nu));
            }
        }
    }
    jobs.par_iter()
        .map(|&(spacing, (a, b), theta, nu)| {
            let m = CovarianceModel::new(1.0, theta, nu)?;
            Ok(MisspecPoint {
                spacing,
                theta,
                nu,
                corr: conditional_correlation(&m, a, b, params.n_p)?,
            })
        })
        .collect()
}

pub fn misspec_study(params: &MisspecParams) -> Result<Vec<MisspecResult>> {
    let pts = misspec_sweep(params)?;
    let (nu_lo, nu_hi) = params.nu_range;
    Ok(params
        .spacings
        .iter()
        .map(|&h| {
            let sel: Vec<&MisspecPoint> = pts.iter().filter(|p| p.spacing == h).collect();
            let best = sel
                .iter()
                .copied()
                .max_by(|a, b| a.corr.total_cmp(&b.corr))
                .expect("non-empty sweep");
            let slice_max = |nu: f64| {
                sel.iter()
                    .filter(|p| p.nu == nu)
                    .map(|p| p.corr)
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            MisspecResult {
                spacing: h,
                max_corr: best.corr,
                theta_at_max: best.theta,
                nu_at_max: best.nu,
                max_at_nu_min: slice_max(nu_lo),
                max_at_nu_max: slice_max(nu_hi),
            }
        })
        .collect())
}
