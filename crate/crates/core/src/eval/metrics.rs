//! Error summaries comparing approximate and exact standard errors.

/// `100 (approx - exact) / exact` per node; `None` where the exact value is 0.
pub fn rel_error_fields(exact: &[f64], approx: &[f64]) -> Vec<Option<f64>> {
    assert_eq!(exact.len(), approx.len(), "standard-error fields differ in length");
    exact
        .iter()
        .zip(approx)
        .map(|(&e, &a)| if e > 0.0 { Some(100.0 * (a - e) / e) } else { None })
        .collect()
}

/// Linear-interpolation percentile (`p` in [0, 100]) of the finite values.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 100.0) / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// 95th percentile of `|E|` over unflagged nodes.
pub fn p95_abs(rel: &[Option<f64>]) -> f64 {
    let a: Vec<f64> = rel.iter().flatten().map(|e| e.abs()).collect();
    percentile(&a, 95.0)
}

/// `x` rounded half away from zero to `digits` significant figures, as
/// (decimal exponent, signed integer mantissa).
pub fn round_sig(x: f64, digits: u32) -> (i32, i64) {
    if x == 0.0 || !x.is_finite() {
        return (0, 0);
    }
    let mut e = x.abs().log10().floor() as i32;
    let top = 10f64.powi(digits as i32);
    let mut m = (x.abs() * 10f64.powi(digits as i32 - 1 - e)).round();
    if m >= top {
        e += 1;
        m = (x.abs() * 10f64.powi(digits as i32 - 1 - e)).round();
    } else if m < top / 10.0 {
        e -= 1;
        m = (x.abs() * 10f64.powi(digits as i32 - 1 - e)).round();
    }
    (e, x.signum() as i64 * m as i64)
}

/// Fraction of nodes whose values agree after rounding to `digits` significant figures.
pub fn sigfig_agreement(exact: &[f64], approx: &[f64], digits: u32) -> f64 {
    assert_eq!(exact.len(), approx.len(), "standard-error fields differ in length");
    if exact.is_empty() {
        return 1.0;
    }
    let hits = exact
        .iter()
        .zip(approx)
        .filter(|(e, a)| round_sig(**e, digits) == round_sig(**a, digits))
        .count();
    hits as f64 / exact.len() as f64
}

/// Mean and sample standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let s = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, s.sqrt())
}

pub fn median(v: &[f64]) -> f64 {
    percentile(v, 50.0)
}
