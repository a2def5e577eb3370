//! Exact simple Kriging (zero mean) with per-observation nugget.
//!
//! Prediction `K_12 (K_22 + diag(phi^2))^{-1} z` and conditional variance
//! `diag(K_11 - K_12 (K_22 + diag(phi^2))^{-1} K_21)`. This is the reference
//! every approximation is checked against.

use faer::Mat;
use rayon::prelude::*;

use crate::covariance::CovarianceModel;
use crate::error::{invalid, Error, Result};
use crate::grid::RegularGrid;
use crate::linalg::{col_sq_norms, DenseCap, SpdFactor};
use crate::Location;

/// Observed values at irregular locations with per-observation noise sd `phi_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub locations: Vec<Location>,
    pub values: Vec<f64>,
    pub noise_sd: Vec<f64>,
}

impl ObservationSet {
    pub fn new(locations: Vec<Location>, values: Vec<f64>, noise_sd: Vec<f64>) -> Result<Self> {
        let obs = Self {
            locations,
            values,
            noise_sd,
        };
        obs.validate()?;
        Ok(obs)
    }

    /// Every observation gets the same noise sd `tau`.
    pub fn with_nugget(locations: Vec<Location>, values: Vec<f64>, tau: f64) -> Result<Self> {
        let n = locations.len();
        Self::new(locations, values, vec![tau; n])
    }

    /// Locations only, zero values; for variance computations.
    pub fn locations_only(locations: Vec<Location>, tau: f64) -> Result<Self> {
        let n = locations.len();
        Self::new(locations, vec![0.0; n], vec![tau; n])
    }

    pub fn empty() -> Self {
        Self {
            locations: Vec::new(),
            values: Vec::new(),
            noise_sd: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.locations.len();
        if self.values.len() != n || self.noise_sd.len() != n {
            return Err(invalid(format!(
                "observation arrays disagree: {} locations, {} values, {} noise sds",
                n,
                self.values.len(),
                self.noise_sd.len()
            )));
        }
        for (i, p) in self.locations.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(invalid(format!("observation {i} has a non-finite location")));
            }
            if !self.values[i].is_finite() {
                return Err(invalid(format!("observation {i} has a non-finite value")));
            }
            if !(self.noise_sd[i] >= 0.0) || !self.noise_sd[i].is_finite() {
                return Err(invalid(format!("observation {i} has an invalid noise sd")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn noise_var(&self) -> Vec<f64> {
        self.noise_sd.iter().map(|s| s * s).collect()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.locations.clone(), values, self.noise_sd.clone())
    }
}

/// Factored `K_22 + diag(nugget)` for a fixed set of data locations.
///
/// Built once and reused for every prediction from data at these locations,
/// whether real or synthetic.
#[derive(Debug)]
pub struct KrigingSystem {
    model: CovarianceModel,
    locations: Vec<Location>,
    factor: Option<SpdFactor>,
}

impl KrigingSystem {
    pub fn new(model: &CovarianceModel, locations: &[Location], nugget_var: &[f64]) -> Result<Self> {
        model.validate()?;
        if locations.len() != nugget_var.len() {
            return Err(invalid("nugget vector length differs from location count"));
        }
        let n = locations.len();
        let factor = if n == 0 {
            None
        } else {
            let k = Mat::from_fn(n, n, |i, j| {
                let c = model.cov_between(locations[i], locations[j]);
                if i == j {
                    c + nugget_var[i]
                } else {
                    c
                }
            });
            Some(SpdFactor::new(k.as_ref(), model.sigma2)?)
        };
        Ok(Self {
            model: *model,
            locations: locations.to_vec(),
            factor,
        })
    }

    pub fn for_observations(model: &CovarianceModel, obs: &ObservationSet) -> Result<Self> {
        Self::new(model, &obs.locations, &obs.noise_var())
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn factor(&self) -> Option<&SpdFactor> {
        self.factor.as_ref()
    }

    /// `(K_22 + D)^{-1} z`.
    pub fn weights(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.len() {
            return Err(invalid(format!(
                "data vector has {} entries for {} locations",
                z.len(),
                self.len()
            )));
        }
        Ok(match &self.factor {
            Some(f) => f.solve_vec(z),
            None => Vec::new(),
        })
    }

    /// `sum_i C(t, s_i) alpha_i` at each target.
    pub fn predict_with_weights(&self, alpha: &[f64], targets: &[Location]) -> Vec<f64> {
        targets
            .par_iter()
            .map(|&t| {
                self.locations
                    .iter()
                    .zip(alpha)
                    .map(|(&s, a)| a * self.model.cov_between(t, s))
                    .sum()
            })
            .collect()
    }

    /// Prediction at every node of `grid`, row-parallel.
    pub fn predict_grid_with_weights(&self, alpha: &[f64], grid: &RegularGrid) -> Vec<f64> {
        let nx = grid.nx();
        let mut out = vec![0.0; grid.len()];
        if self.is_empty() {
            return out;
        }
        let model = self.model;
        out.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
            let y = grid.origin[1] + j as f64 * grid.spacing[1];
            for (s, &a) in self.locations.iter().zip(alpha) {
                let dy = y - s[1];
                let dy2 = dy * dy;
                for (i, r) in row.iter_mut().enumerate() {
                    let dx = grid.origin[0] + i as f64 * grid.spacing[0] - s[0];
                    *r += a * model.cov((dx * dx + dy2).sqrt());
                }
            }
        });
        out
    }

    pub fn predict(&self, z: &[f64], targets: &[Location]) -> Result<Vec<f64>> {
        let alpha = self.weights(z)?;
        Ok(self.predict_with_weights(&alpha, targets))
    }

    pub fn predict_grid(&self, z: &[f64], grid: &RegularGrid) -> Result<Vec<f64>> {
        let alpha = self.weights(z)?;
        Ok(self.predict_grid_with_weights(&alpha, grid))
    }

    /// Conditional variances at the targets, processed in blocks so the
    /// cross-covariance never has more than `n * 4096` entries.
    pub fn cond_variance(&self, targets: &[Location]) -> Result<Vec<f64>> {
        let sigma2 = self.model.sigma2;
        let Some(f) = &self.factor else {
            return Ok(vec![sigma2; targets.len()]);
        };
        let n = self.len();
        let mut out = Vec::with_capacity(targets.len());
        for chunk in targets.chunks(4096) {
            let mut k = Mat::from_fn(n, chunk.len(), |i, j| {
                self.model.cov_between(self.locations[i], chunk[j])
            });
            f.half_solve_in_place(&mut k);
            for q in col_sq_norms(k.as_ref()) {
                out.push(clamp_variance(sigma2 - q, sigma2)?);
            }
        }
        Ok(out)
    }
}

/// Map tiny negative roundoff to zero; anything more negative is an error.
pub(crate) fn clamp_variance(v: f64, sigma2: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -1e-10 * sigma2 {
        Ok(0.0)
    } else {
        Err(Error::Numeric(format!("negative conditional variance {v:e}")))
    }
}

/// Simple-Kriging prediction at `targets`.
pub fn krige_predict(
    obs: &ObservationSet,
    targets: &[Location],
    model: &CovarianceModel,
) -> Result<Vec<f64>> {
    obs.validate()?;
    KrigingSystem::for_observations(model, obs)?.predict(&obs.values, targets)
}

/// Exact conditional variance at `targets`.
pub fn exact_cond_variance(
    obs: &ObservationSet,
    targets: &[Location],
    model: &CovarianceModel,
) -> Result<Vec<f64>> {
    obs.validate()?;
    KrigingSystem::for_observations(model, obs)?.cond_variance(targets)
}

/// Exact prediction standard errors on a grid, under the dense cap.
pub fn exact_se_grid(
    obs: &ObservationSet,
    grid: &RegularGrid,
    model: &CovarianceModel,
    cap: DenseCap,
) -> Result<Vec<f64>> {
    cap.check(grid.len() + obs.len())?;
    let v = exact_cond_variance(obs, &grid.nodes(), model)?;
    Ok(v.into_iter().map(f64::sqrt).collect())
}

/// Quantities shared by every grid standard-error evaluator for one
/// observation layout: the observation-to-grid covariance `K_SG` (n x M) and
/// `(K_SS + diag(phi^2))^{-1} K_SG`, the transpose of the grid Kriging weights.
#[derive(Debug)]
pub struct SeProblem {
    pub grid: RegularGrid,
    pub model: CovarianceModel,
    pub obs: ObservationSet,
    pub k_sg: Mat<f64>,
    pub w2t: Mat<f64>,
}

impl SeProblem {
    pub fn new(
        grid: &RegularGrid,
        obs: &ObservationSet,
        model: &CovarianceModel,
        cap: DenseCap,
    ) -> Result<Self> {
        obs.validate()?;
        grid.validate()?;
        cap.check(grid.len() + obs.len())?;
        let sys = KrigingSystem::for_observations(model, obs)?;
        let k_sg = cross_cov_grid(model, &obs.locations, grid);
        let w2t = match sys.factor() {
            Some(f) => f.solve(k_sg.as_ref()),
            None => Mat::zeros(0, grid.len()),
        };
        Ok(Self {
            grid: *grid,
            model: *model,
            obs: obs.clone(),
            k_sg,
            w2t,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.obs.len()
    }

    /// Exact standard errors at every grid node.
    pub fn exact_se(&self) -> Result<Vec<f64>> {
        let s2 = self.model.sigma2;
        (0..self.grid.len())
            .map(|g| {
                let q: f64 = (0..self.n_obs())
                    .map(|i| self.k_sg[(i, g)] * self.w2t[(i, g)])
                    .sum();
                clamp_variance(s2 - q, s2).map(f64::sqrt)
            })
            .collect()
    }
}

/// `C(s_i, g)` for every observation (rows) and grid node (columns).
pub fn cross_cov_grid(model: &CovarianceModel, locs: &[Location], grid: &RegularGrid) -> Mat<f64> {
    let mut k = Mat::zeros(locs.len(), grid.len());
    for (i, s) in locs.iter().enumerate() {
        for g in 0..grid.len() {
            k[(i, g)] = model.cov_between(*s, grid.location(g));
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::cov_matrix;
    use proptest::prelude::*;

    fn exp_model(theta: f64) -> CovarianceModel {
        CovarianceModel::exponential(1.0, theta).unwrap()
    }

    /// Gaussian elimination with partial pivoting, independent of the factorization path.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn no_observations_predicts_zero() {
        let obs = ObservationSet::empty();
        let p = krige_predict(&obs, &[[1.0, 2.0], [3.0, 4.0]], &exp_model(2.0)).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);
        let v = exact_cond_variance(&obs, &[[1.0, 2.0]], &exp_model(2.0)).unwrap();
        assert_eq!(v, vec![1.0]);
    }

    #[test]
    fn interpolates_noise_free_observation() {
        let obs = ObservationSet::with_nugget(vec![[1.5, 2.5]], vec![0.7], 0.0).unwrap();
        let m = exp_model(2.0);
        let p = krige_predict(&obs, &[[1.5, 2.5]], &m).unwrap();
        assert!((p[0] - 0.7).abs() < 1e-12);
        let v = exact_cond_variance(&obs, &[[1.5, 2.5]], &m).unwrap();
        assert_eq!(v[0], 0.0);
    }

    #[test]
    fn far_target_has_prior_variance() {
        let obs = ObservationSet::with_nugget(vec![[0.0, 0.0], [1.0, 0.0]], vec![1.0, 2.0], 0.1)
            .unwrap();
        let v = exact_cond_variance(&obs, &[[500.0, 500.0]], &exp_model(2.0)).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_observations_match_elimination() {
        let locs = vec![[0.0, 0.0], [1.0, 0.5], [0.3, 2.0]];
        let z = vec![0.4, -1.1, 0.9];
        let tau = 0.2;
        let obs = ObservationSet::with_nugget(locs.clone(), z.clone(), tau).unwrap();
        let m = exp_model(1.7);
        let targets = [[0.5, 0.5], [2.0, 1.0]];
        let got = krige_predict(&obs, &targets, &m).unwrap();
        let a: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| m.cov_between(locs[i], locs[j]) + if i == j { tau * tau } else { 0.0 })
                    .collect()
            })
            .collect();
        let alpha = dense_solve(a.clone(), z);
        for (t, g) in targets.iter().zip(&got) {
            let want: f64 = (0..3).map(|i| m.cov_between(*t, locs[i]) * alpha[i]).sum();
            assert!((g - want).abs() < 1e-10);
        }
        let var = exact_cond_variance(&obs, &targets, &m).unwrap();
        for (t, v) in targets.iter().zip(&var) {
            let k: Vec<f64> = (0..3).map(|i| m.cov_between(*t, locs[i])).collect();
            let w = dense_solve(a.clone(), k.clone());
            let want = 1.0 - k.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            assert!((v - want).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_prediction_matches_pointwise() {
        let obs = ObservationSet::with_nugget(
            vec![[0.3, 0.2], [2.7, 1.9], [1.1, 3.3]],
            vec![1.0, -0.5, 0.25],
            0.1,
        )
        .unwrap();
        let m = CovarianceModel::new(1.4, 1.3, 1.5).unwrap();
        let g = RegularGrid::new([-1.0, 0.0], [0.5, 0.75], [9, 7]).unwrap();
        let sys = KrigingSystem::for_observations(&m, &obs).unwrap();
        let a = sys.predict_grid(&obs.values, &g).unwrap();
        let b = sys.predict(&obs.values, &g.nodes()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn dense_cap_is_enforced() {
        let obs = ObservationSet::locations_only(vec![[1.0, 1.0]], 0.1).unwrap();
        let g = RegularGrid::unit_square(10);
        let err = exact_se_grid(&obs, &g, &exp_model(1.0), DenseCap(50)).unwrap_err();
        assert!(matches!(err, Error::DenseCap { size: 101, cap: 50 }));
    }

    #[test]
    fn variance_never_increases_with_more_data() {
        let m = exp_model(3.0);
        let all = [[0.5, 0.5], [2.2, 1.4], [3.9, 3.1], [1.0, 4.0]];
        let targets: Vec<Location> = RegularGrid::unit_square(5).nodes();
        let mut prev = vec![1.0; targets.len()];
        for k in 0..=all.len() {
            let obs = ObservationSet::locations_only(all[..k].to_vec(), 0.1).unwrap();
            let v = exact_cond_variance(&obs, &targets, &m).unwrap();
            for (a, b) in v.iter().zip(&prev) {
                assert!(*a <= b + 1e-12 && *a >= 0.0 && *a <= 1.0);
            }
            prev = v;
        }
    }

    #[test]
    fn se_problem_matches_cond_variance() {
        let obs = ObservationSet::with_nugget(
            vec![[1.3, 2.2], [3.7, 0.4], [2.0, 2.0]],
            vec![0.0; 3],
            0.2,
        )
        .unwrap();
        let m = CovarianceModel::new(2.0, 1.5, 1.0).unwrap();
        let g = RegularGrid::unit_square(6);
        let p = SeProblem::new(&g, &obs, &m, DenseCap::default()).unwrap();
        let se = p.exact_se().unwrap();
        let v = exact_cond_variance(&obs, &g.nodes(), &m).unwrap();
        for (a, b) in se.iter().zip(&v) {
            assert!((a * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_matrix_is_used_consistently() {
        let locs = vec![[0.0, 0.0], [0.5, 0.0]];
        let m = exp_model(1.0);
        let k = cov_matrix(&m, &locs, &locs);
        assert_eq!(k[(0, 1)], m.cov(0.5));
    }

    proptest! {
        #[test]
        fn linear_in_data_and_permutation_invariant(
            pts in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0, -2.0f64..2.0), 2..7),
            scale in -3.0f64..3.0,
            rot in 0usize..7,
        ) {
            let m = exp_model(2.5);
            let locs: Vec<Location> = pts.iter().map(|p| [p.0, p.1]).collect();
            let z: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let targets = [[5.0, 5.0], [1.0, 9.0]];
            let obs = ObservationSet::with_nugget(locs.clone(), z.clone(), 0.3).unwrap();
            let base = krige_predict(&obs, &targets, &m).unwrap();
            let scaled = krige_predict(
                &obs.with_values(z.iter().map(|v| v * scale).collect()).unwrap(), &targets, &m,
            ).unwrap();
            for (a, b) in base.iter().zip(&scaled) {
                prop_assert!((a * scale - b).abs() < 1e-9);
            }
            let r = rot % locs.len();
            let mut l2 = locs.clone();
            let mut z2 = z.clone();
            l2.rotate_left(r);
            z2.rotate_left(r);
            let perm = ObservationSet::with_nugget(l2, z2, 0.3).unwrap();
            let p2 = krige_predict(&perm, &targets, &m).unwrap();
            let v1 = exact_cond_variance(&obs, &targets, &m).unwrap();
            let v2 = exact_cond_variance(&perm, &targets, &m).unwrap();
            for i in 0..2 {
                prop_assert!((base[i] - p2[i]).abs() < 1e-9);
                prop_assert!((v1[i] - v2[i]).abs() < 1e-9);
            }
        }
    }
}
