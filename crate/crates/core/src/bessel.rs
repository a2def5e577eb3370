//! Modified Bessel function of the second kind, `K_nu(x)`, for real order.
//!
//! Temme's series is used for `x < 2` and Steed's continued fraction (CF2)
//! otherwise, both at the reduced order `mu = nu - round(nu)`, followed by
//! upward recurrence to `nu`. Relative accuracy is better than `1e-13` for
//! `0 <= nu <= 4` and `1e-3 <= x <= 700`, which covers every Matérn
//! evaluation this crate performs.

use std::f64::consts::PI;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const SERIES_LIMIT: f64 = 2.0;

// Chebyshev coefficients for Gamma_1(mu) and Gamma_2(mu) on |mu| <= 1/2.
const C1: [f64; 7] = [
    -1.142022680371168e0,
    6.5165112670737e-3,
    3.087090173086e-4,
    -3.4706269649e-6,
    6.9437664e-9,
    3.67795e-11,
    -1.356e-13,
];
const C2: [f64; 8] = [
    1.843740587300905e0,
    -7.68528408447867e-2,
    1.2719271366546e-3,
    -4.9717367042e-6,
    -3.31261198e-8,
    2.423096e-10,
    -1.702e-13,
    -1.49e-15,
];

fn chebev(c: &[f64], x: f64) -> f64 {
    let y2 = 2.0 * x;
    let (mut d, mut dd) = (0.0, 0.0);
    for &cj in c[1..].iter().rev() {
        let sv = d;
        d = y2 * d - dd + cj;
        dd = sv;
    }
    x * d - dd + 0.5 * c[0]
}

/// Returns `(1/Gamma(1+mu), 1/Gamma(1-mu), Gamma_1, Gamma_2)` for `|mu| <= 1/2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let xx = 8.0 * mu * mu - 1.0;
    let gam1 = chebev(&C1, xx);
    let gam2 = chebev(&C2, xx);
    (gam2 - mu * gam1, gam2 + mu * gam1, gam1, gam2)
}

/// `K_nu(x)` for `nu >= 0`, `x > 0`. Returns `+inf` at `x == 0` and `NaN` for
/// invalid input.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    let (k, _) = bessel_k_pair(nu, x);
    k
}

/// `(K_nu(x), K_{nu+1}(x))`.
pub fn bessel_k_pair(nu: f64, x: f64) -> (f64, f64) {
    if !(nu >= 0.0) || !(x >= 0.0) || !nu.is_finite() {
        return (f64::NAN, f64::NAN);
    }
    if x == 0.0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    if x.is_infinite() {
        return (0.0, 0.0);
    }
    let nl = (nu + 0.5).floor() as usize;
    let mu = nu - nl as f64;
    let mu2 = mu * mu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut k_mu, mut k_mu1) = if x < SERIES_LIMIT {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gampl, gammi, gam1, gam2) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..=MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            let del1 = c * (p - fi * ff);
            sum1 += del1;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (sum, sum1 * xi2)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut c = a1;
        let mut q = c;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..=MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        let k = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        (k, k * (mu + x + 0.5 - h) * xi)
    };

    for i in 1..=nl {
        let next = (mu + i as f64) * xi2 * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }
    (k_mu, k_mu1)
}
