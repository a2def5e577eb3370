//! Helpers shared by the integration tests. Everything here is written
//! independently of the library's own linear algebra.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform_points(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [lo + (hi - lo) * r.random::<f64>(), lo + (hi - lo) * r.random::<f64>()])
        .collect()
}

pub fn exp_cov(theta: f64, a: [f64; 2], b: [f64; 2]) -> f64 {
    (-((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() / theta).exp()
}

/// Textbook Cholesky on a row-major square matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                assert!(d > 0.0, "matrix not positive definite at {i}");
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

pub fn forward(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i][i];
    }
    y
}

pub fn backward(l: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i][i];
    }
    x
}

pub fn spd_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let l = cholesky(a);
    backward(&l, &forward(&l, b))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-draw statistics over many draws: returns (mean, standard error of the mean).
pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / n;
    let v = samples.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Lags checked against the analytic covariance of unconditional draws.
pub const CE_LAGS: [(usize, usize); 10] = [(0, 0), (1, 0), (0, 1), (1, 1), (2, 1), (3, 0), (5, 2), (8, 8), (15, 3), (31, 0)];

/// For each lag: (sample covariance, its MC standard error, analytic value),
/// plus the largest |node mean| / SE over all nodes.
pub fn ce_moment_check(nu: f64, theta: f64, m: usize, draws: u64, seed: u64) -> (Vec<(f64, f64, f64)>, f64) {
    use cesim::covariance::CovarianceModel;
    use cesim::embedding::CirculantEmbedding;
    use cesim::grid::RegularGrid;
    let grid = RegularGrid::unit_square(m);
    let model = CovarianceModel::new(1.0, theta, nu).unwrap();
    let ce = CirculantEmbedding::build(&grid, &model, 3).unwrap();
    let mut per_lag = vec![Vec::with_capacity(draws as usize); CE_LAGS.len()];
    let mut sum = vec![0.0; grid.len()];
    let mut sumsq = vec![0.0; grid.len()];
    for k in 0..draws {
        let f = ce.simulate_one(&mut cesim::rng::stream(seed, k));
        for (q, &(di, dj)) in CE_LAGS.iter().enumerate() {
            let mut s = 0.0;
            let mut c = 0usize;
            for j in 0..m - dj {
                for i in 0..m - di {
                    s += f.values[j * m + i] * f.values[(j + dj) * m + i + di];
                    c += 1;
                }
            }
            per_lag[q].push(s / c as f64);
        }
        for (t, v) in f.values.iter().enumerate() {
            sum[t] += v;
            sumsq[t] += v * v;
        }
    }
    let lags = CE_LAGS
        .iter()
        .zip(&per_lag)
        .map(|(&(di, dj), s)| {
            let (est, se) = mean_and_se(s);
            (est, se, model.cov(((di * di + dj * dj) as f64).sqrt()))
        })
        .collect();
    let n = draws as f64;
    let worst = sum
        .iter()
        .zip(&sumsq)
        .map(|(s, q)| {
            let m = s / n;
            let sd = ((q - n * m * m) / (n - 1.0)).sqrt();
            m.abs() / (sd / n.sqrt())
        })
        .fold(0.0, f64::max);
    (lags, worst)
}
