//! Matérn covariance family.
//!
//! ```text
//! C(d) = sigma2 * 2^(1-nu) / Gamma(nu) * (sqrt(2 nu) d / theta)^nu * K_nu(sqrt(2 nu) d / theta)
//! ```
//!
//! `nu = 1/2` (exponential) and `nu = 3/2` take closed-form paths.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::bessel::bessel_k;
use crate::error::{invalid, Error, Result};
use crate::Location;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    /// Marginal variance (sill).
    pub sigma2: f64,
    /// Range parameter, in coordinate units.
    pub theta: f64,
    /// Smoothness.
    pub nu: f64,
}

impl CovarianceModel {
    pub fn new(sigma2: f64, theta: f64, nu: f64) -> Result<Self> {
        let m = Self { sigma2, theta, nu };
        m.validate()?;
        Ok(m)
    }

    pub fn exponential(sigma2: f64, theta: f64) -> Result<Self> {
        Self::new(sigma2, theta, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.sigma2) || !ok(self.theta) || !ok(self.nu) {
            return Err(invalid(format!(
                "covariance parameters must be finite and positive (sigma2={}, theta={}, nu={})",
                self.sigma2, self.theta, self.nu
            )));
        }
        Ok(())
    }

    /// Checked evaluation of `C(d)`.
    pub fn matern(&self, d: f64) -> Result<f64> {
        self.validate()?;
        if !(d >= 0.0) || !d.is_finite() {
            return Err(invalid(format!("distance must be finite and >= 0, got {d}")));
        }
        Ok(self.cov(d))
    }

    /// `C(d)` without argument checks; `d` must be non-negative.
    #[inline]
    pub fn cov(&self, d: f64) -> f64 {
        self.sigma2 * self.corr(d)
    }

    #[inline]
    pub fn corr(&self, d: f64) -> f64 {
        if d == 0.0 {
            return 1.0;
        }
        if self.nu == 0.5 {
            (-d / self.theta).exp()
        } else if self.nu == 1.5 {
            let s = 3f64.sqrt() * d / self.theta;
            (1.0 + s) * (-s).exp()
        } else {
            let x = (2.0 * self.nu).sqrt() * d / self.theta;
            if x > 700.0 {
                return 0.0;
            }
            let pref = (1.0 - self.nu).exp2() / libm::tgamma(self.nu);
            (pref * x.powf(self.nu) * bessel_k(self.nu, x)).min(1.0)
        }
    }

    #[inline]
    pub fn cov_between(&self, a: Location, b: Location) -> f64 {
        self.cov(dist(a, b))
    }
}

#[inline]
pub fn dist(a: Location, b: Location) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Dense `C(a_i, b_j)`; either side may be empty.
pub fn cov_matrix(model: &CovarianceModel, a: &[Location], b: &[Location]) -> Mat<f64> {
    Mat::from_fn(a.len(), b.len(), |i, j| model.cov_between(a[i], b[j]))
}

/// Range `theta` at which the unit-sill correlation at distance `d` equals `rho`.
///
/// Bisection on `log(theta)` over `[1e-6 d, 1e6 d]` to relative tolerance `1e-8`.
pub fn range_for_correlation(nu: f64, rho: f64, d: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(invalid(format!("target correlation must lie in (0, 1), got {rho}")));
    }
    if !(d > 0.0) || !d.is_finite() {
        return Err(invalid(format!("distance must be positive, got {d}")));
    }
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(invalid(format!("smoothness must be positive, got {nu}")));
    }
    let corr_at = |theta: f64| CovarianceModel { sigma2: 1.0, theta, nu }.corr(d) - rho;
    let (mut lo, mut hi) = ((1e-6 * d).ln(), (1e6 * d).ln());
    let (f_lo, f_hi) = (corr_at(lo.exp()), corr_at(hi.exp()));
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::Numeric(format!(
            "cannot bracket range for nu={nu}, rho={rho}, d={d}"
        )));
    }
    // correlation at fixed d increases with theta
    // run well past the 1e-8 relative target so the returned correlation is also tight
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if corr_at(mid.exp()) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
