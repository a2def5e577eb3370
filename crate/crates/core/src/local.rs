//! Local Kriging for off-grid values.
//!
//! Each observation location is predicted from the `(2 n_p)^2` grid nodes of
//! its order-`n_p` neighborhood. Every neighborhood has the same shape
//! relative to its grid box, so one stencil covariance is factored once and
//! shared by all observations.

use std::collections::BTreeMap;
use std::io::Write;

use faer::Mat;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{invalid, Error, Result};
use crate::grid::{pad_for_observations, GridField, LagTable, RegularGrid};
use crate::kriging::{clamp_variance, SeProblem};
use crate::linalg::SpdFactor;
use crate::rng::std_normal;
use crate::Location;

/// Size of the conditioning set used by the off-grid approximations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Neighborhood {
    /// `n_p` rings of grid boxes around the containing box.
    Order(usize),
    /// Every node of the grid.
    Full,
}

impl std::fmt::Display for Neighborhood {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Neighborhood::Order(n) => write!(f, "{n}"),
            Neighborhood::Full => write!(f, "full"),
        }
    }
}

impl From<Neighborhood> for String {
    fn from(n: Neighborhood) -> String {
        n.to_string()
    }
}

impl TryFrom<String> for Neighborhood {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl std::str::FromStr for Neighborhood {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(Neighborhood::Full);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Neighborhood::Order(n)),
            _ => Err(invalid(format!("neighborhood must be a positive integer or 'full', got '{s}'"))),
        }
    }
}

/// Lower-left node of the order-`n_p` neighborhood of `p`, checked against the grid.
fn stencil_base(grid: &RegularGrid, p: Location, n_p: usize, index: usize) -> Result<(usize, usize)> {
    if n_p == 0 {
        return Err(invalid("neighborhood order must be at least 1"));
    }
    let (bi, bj) = grid.containing_box(p);
    let r = n_p as i64;
    let (i0, j0) = (bi - r + 1, bj - r + 1);
    let (i1, j1) = (bi + r, bj + r);
    if i0 < 0 || j0 < 0 || i1 >= grid.nx() as i64 || j1 >= grid.ny() as i64 {
        return Err(Error::Margin {
            index,
            x: p[0],
            y: p[1],
            margin: n_p,
        });
    }
    Ok((i0 as usize, j0 as usize))
}

/// The `(2 n_p)^2` grid indices of the order-`n_p` neighborhood of `point`,
/// x fastest.
pub fn locate_neighbors(grid: &RegularGrid, point: Location, n_p: usize) -> Result<Vec<usize>> {
    let (i0, j0) = stencil_base(grid, point, n_p, 0)?;
    let s = 2 * n_p;
    let mut out = Vec::with_capacity(s * s);
    for b in 0..s {
        for a in 0..s {
            out.push(grid.index(i0 + a, j0 + b));
        }
    }
    Ok(out)
}

/// Neighborhoods of a set of observations on one grid.
#[derive(Debug, Clone)]
pub struct NeighborhoodMap {
    pub grid: RegularGrid,
    pub order: usize,
    /// Containing grid box (lower-left node) of each observation.
    pub boxes: Vec<(i64, i64)>,
    /// Grid indices of each neighborhood.
    pub indices: Vec<Vec<usize>>,
}

impl NeighborhoodMap {
    pub fn build(grid: &RegularGrid, locs: &[Location], n_p: usize) -> Result<Self> {
        let mut boxes = Vec::with_capacity(locs.len());
        let mut indices = Vec::with_capacity(locs.len());
        for (k, p) in locs.iter().enumerate() {
            stencil_base(grid, *p, n_p, k)?;
            boxes.push(grid.containing_box(*p));
            indices.push(locate_neighbors(grid, *p, n_p)?);
        }
        Ok(Self {
            grid: *grid,
            order: n_p,
            boxes,
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Observations sharing one grid box.
#[derive(Debug, Clone)]
pub struct BoxGroup {
    pub grid_box: (i64, i64),
    pub members: Vec<usize>,
    /// Lower Cholesky factor of the members' joint conditional covariance
    /// given the neighborhood; `None` for singletons.
    pub chol: Option<Mat<f64>>,
}

/// Sparse local-Kriging weights, conditional variances, and box groups.
#[derive(Debug, Clone)]
pub struct LocalSampler {
    grid: RegularGrid,
    order: usize,
    model: CovarianceModel,
    /// Neighborhood lower-left node per observation.
    bases: Vec<(usize, usize)>,
    /// Row-major `n x (2 n_p)^2` weights, stencil order x fastest.
    weights: Vec<f64>,
    gamma: Vec<f64>,
    groups: Vec<BoxGroup>,
}

/// Factor of the covariance among the `(2 n_p)^2` stencil nodes.
fn stencil_factor(model: &CovarianceModel, spacing: [f64; 2], n_p: usize) -> Result<SpdFactor> {
    let s = 2 * n_p;
    let lags = LagTable::new(model, spacing, s - 1, s - 1);
    let k = Mat::from_fn(s * s, s * s, |p, q| {
        let (ap, bp) = ((p % s) as i64, (p / s) as i64);
        let (aq, bq) = ((q % s) as i64, (q / s) as i64);
        lags.get(ap - aq, bp - bq)
    });
    SpdFactor::new(k.as_ref(), model.sigma2)
}

impl LocalSampler {
    /// Weights and conditional variances for `locs` on `grid`, which must
    /// already hold every neighborhood (see `pad_for_observations`).
    pub fn build(grid: &RegularGrid, locs: &[Location], model: &CovarianceModel, n_p: usize) -> Result<Self> {
        grid.validate()?;
        model.validate()?;
        let bases = locs
            .iter()
            .enumerate()
            .map(|(k, p)| stencil_base(grid, *p, n_p, k))
            .collect::<Result<Vec<_>>>()?;
        let s = 2 * n_p;
        let s2 = s * s;
        let n = locs.len();
        let factor = stencil_factor(model, grid.spacing, n_p)?;

        let kcols = Mat::from_fn(s2, n, |q, i| {
            let (i0, j0) = bases[i];
            let node = grid.node(i0 + q % s, j0 + q / s);
            model.cov_between(locs[i], node)
        });
        let w = if n > 0 { factor.solve(kcols.as_ref()) } else { Mat::zeros(s2, 0) };

        let mut weights = Vec::with_capacity(n * s2);
        let mut gamma = Vec::with_capacity(n);
        for i in 0..n {
            let mut q = 0.0;
            for r in 0..s2 {
                weights.push(w[(r, i)]);
                q += w[(r, i)] * kcols[(r, i)];
            }
            gamma.push(clamp_variance(model.sigma2 - q, model.sigma2)?.min(model.sigma2));
        }

        let mut by_box: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (k, p) in locs.iter().enumerate() {
            by_box.entry(grid.containing_box(*p)).or_default().push(k);
        }
        let mut groups = Vec::with_capacity(by_box.len());
        for (grid_box, members) in by_box {
            let chol = if members.len() > 1 {
                // members share one neighborhood: Cov = C_gg - k_a . w_b
                let m = members.len();
                let cov = Mat::from_fn(m, m, |a, b| {
                    let (ia, ib) = (members[a], members[b]);
                    let q: f64 = (0..s2).map(|r| kcols[(r, ia)] * w[(r, ib)]).sum();
                    model.cov_between(locs[ia], locs[ib]) - q
                });
                let f = SpdFactor::new(cov.as_ref(), model.sigma2)?;
                Some(f.l().to_owned())
            } else {
                None
            };
            groups.push(BoxGroup {
                grid_box,
                members,
                chol,
            });
        }

        Ok(Self {
            grid: *grid,
            order: n_p,
            model: *model,
            bases,
            weights,
            gamma,
            groups,
        })
    }

    pub fn grid(&self) -> &RegularGrid {
        &self.grid
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    /// Conditional variance of each observation location given its neighborhood.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn groups(&self) -> &[BoxGroup] {
        &self.groups
    }

    /// Row `i` of the weight matrix as (grid index, weight) pairs.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        let s = 2 * self.order;
        let s2 = s * s;
        let (i0, j0) = self.bases[i];
        (0..s2)
            .map(|q| (self.grid.index(i0 + q % s, j0 + q / s), self.weights[i * s2 + q]))
            .collect()
    }

    /// Local-Kriging predictions at the observation locations from a grid field.
    pub fn apply(&self, field: &GridField) -> Result<Vec<f64>> {
        if field.grid != self.grid {
            return Err(invalid("field grid differs from the sampler grid"));
        }
        let s = 2 * self.order;
        let s2 = s * s;
        let nx = self.grid.nx();
        Ok(self
            .bases
            .iter()
            .enumerate()
            .map(|(i, &(i0, j0))| {
                let w = &self.weights[i * s2..(i + 1) * s2];
                let mut acc = 0.0;
                for b in 0..s {
                    let row = (j0 + b) * nx + i0;
                    for a in 0..s {
                        acc += w[b * s + a] * field.values[row + a];
                    }
                }
                acc
            })
            .collect())
    }

    /// Synthetic observations: local prediction plus conditional noise with
    /// variance `gamma_i` (joint within shared boxes) plus independent
    /// measurement noise with variance `noise_var_i`. Groups are drawn in
    /// box order, members in observation order.
    pub fn sample_offgrid<R: Rng + ?Sized>(
        &self,
        field: &GridField,
        noise_var: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if noise_var.len() != self.len() {
            return Err(invalid("noise vector length differs from observation count"));
        }
        let mut z = self.apply(field)?;
        for g in &self.groups {
            match &g.chol {
                None => {
                    let i = g.members[0];
                    z[i] += (self.gamma[i] + noise_var[i]).sqrt() * std_normal(rng);
                }
                Some(l) => {
                    let xi: Vec<f64> = g.members.iter().map(|_| std_normal(rng)).collect();
                    for (a, &i) in g.members.iter().enumerate() {
                        let c: f64 = (0..=a).map(|b| l[(a, b)] * xi[b]).sum();
                        z[i] += c + noise_var[i].sqrt() * std_normal(rng);
                    }
                }
            }
        }
        Ok(z)
    }

    /// Weight matrix in coordinate format, one `row col value` line per
    /// nonzero, 17 significant digits.
    pub fn write_coo<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "row col value")?;
        for i in 0..self.len() {
            for (col, v) in self.row(i) {
                if v != 0.0 {
                    writeln!(out, "{i} {col} {v:.16e}")?;
                }
            }
        }
        Ok(())
    }
}

/// Builds a sampler for `locs` at order `n_p` on `grid` (already padded).
pub fn build_local_sampler(
    grid: &RegularGrid,
    locs: &[Location],
    model: &CovarianceModel,
    n_p: usize,
) -> Result<LocalSampler> {
    LocalSampler::build(grid, locs, model, n_p)
}

/// Cross terms of the local-Kriging error: `A = Cov(W1 y, y_G)` (n x M),
/// `B = Var(W1 y)` (n x n) and the conditional variances `gamma`.
fn local_moments(p: &SeProblem, nb: Neighborhood) -> Result<(Mat<f64>, Mat<f64>, Vec<f64>)> {
    let grid = &p.grid;
    let model = &p.model;
    let n = p.n_obs();
    let m = grid.len();
    match nb {
        Neighborhood::Full => {
            let lags = LagTable::for_grid(model, grid);
            let k11 = Mat::from_fn(m, m, |a, b| {
                let (ia, ja) = grid.ij(a);
                let (ib, jb) = grid.ij(b);
                lags.get(ia as i64 - ib as i64, ja as i64 - jb as i64)
            });
            let f = SpdFactor::new(k11.as_ref(), model.sigma2)?;
            drop(k11);
            let mut w1t = p.k_sg.transpose().to_owned();
            f.solve_in_place(&mut w1t);
            let b = &p.k_sg * &w1t;
            let gamma = (0..n)
                .map(|i| clamp_variance(model.sigma2 - b[(i, i)], model.sigma2))
                .collect::<Result<Vec<_>>>()?;
            Ok((p.k_sg.clone(), b, gamma))
        }
        Neighborhood::Order(n_p) => {
            let locs = &p.obs.locations;
            let padded = pad_for_observations(grid, locs, n_p);
            let (oi, oj) = padded
                .lattice_offset(grid)
                .ok_or_else(|| Error::Numeric("padded grid does not align".into()))?;
            let sampler = LocalSampler::build(&padded, locs, model, n_p)?;
            let lags = LagTable::for_grid(model, &padded);
            let s = 2 * n_p;
            let s2 = s * s;
            let (nx, ny) = (grid.nx(), grid.ny());
            let mut a = Mat::zeros(n, m);
            for i in 0..n {
                let (bi, bj) = sampler.bases[i];
                let w = &sampler.weights[i * s2..(i + 1) * s2];
                for gj in 0..ny {
                    let py = gj as i64 + oj;
                    for gi in 0..nx {
                        let px = gi as i64 + oi;
                        let mut acc = 0.0;
                        for q in 0..s2 {
                            let dx = (bi + q % s) as i64 - px;
                            let dy = (bj + q / s) as i64 - py;
                            acc += w[q] * lags.get(dx, dy);
                        }
                        a[(i, gj * nx + gi)] = acc;
                    }
                }
            }
            let mut b = Mat::zeros(n, n);
            for i in 0..n {
                let (bi, bj) = sampler.bases[i];
                let wi = &sampler.weights[i * s2..(i + 1) * s2];
                for l in 0..=i {
                    let (bl, bjl) = sampler.bases[l];
                    let wl = &sampler.weights[l * s2..(l + 1) * s2];
                    let (ox, oy) = (bi as i64 - bl as i64, bj as i64 - bjl as i64);
                    let mut acc = 0.0;
                    for q in 0..s2 {
                        let (qa, qb) = ((q % s) as i64, (q / s) as i64);
                        let mut inner = 0.0;
                        for r in 0..s2 {
                            let (ra, rb) = ((r % s) as i64, (r / s) as i64);
                            inner += wl[r] * lags.get(ox + qa - ra, oy + qb - rb);
                        }
                        acc += wi[q] * inner;
                    }
                    b[(i, l)] = acc;
                    b[(l, i)] = acc;
                }
            }
            Ok((a, b, sampler.gamma))
        }
    }
}

/// Standard errors of local-Kriging conditional simulation at every grid
/// node: the sd of `W2 (W1 y + e) - y` with `W2` the exact grid Kriging
/// weights and `e` independent noise of variance `gamma_i + phi_i^2`.
pub fn local_se(p: &SeProblem, nb: Neighborhood) -> Result<Vec<f64>> {
    let n = p.n_obs();
    let s2 = p.model.sigma2;
    if n == 0 {
        return Ok(vec![s2.sqrt(); p.grid.len()]);
    }
    let (a, b, gamma) = local_moments(p, nb)?;
    let noise = p.obs.noise_var();
    let bw = &b * &p.w2t;
    (0..p.grid.len())
        .map(|g| {
            let mut v = s2;
            for i in 0..n {
                let w = p.w2t[(i, g)];
                v += w * (bw[(i, g)] - 2.0 * a[(i, g)] + w * (gamma[i] + noise[i]));
            }
            clamp_variance(v, s2).map(f64::sqrt)
        })
        .collect()
}

/// Approximate standard errors `SE_L` for `obs` on `grid`.
pub fn local_cond_variance(
    grid: &RegularGrid,
    obs: &crate::kriging::ObservationSet,
    model: &CovarianceModel,
    nb: Neighborhood,
    cap: crate::linalg::DenseCap,
) -> Result<Vec<f64>> {
    let p = SeProblem::new(grid, obs, model, cap)?;
    local_se(&p, nb)
}
