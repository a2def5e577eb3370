//! Exact simulation of a stationary field on a regular grid by circulant
//! embedding.
//!
//! The covariance is wrapped onto a torus of size `N1 x N2` with
//! `N_i >= 2 (m_i - 1)`. Its 2-D DFT gives the eigenvalues (spectral weights)
//! of the block-circulant covariance; when they are all non-negative, complex
//! white noise scaled by `sqrt(weight / N)` and transformed back yields two
//! independent exact draws on the torus, and the leading `m1 x m2` window is
//! an exact draw on the grid.

use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::grid::{GridField, RegularGrid};
use crate::rng::std_normal;

pub const DEFAULT_MAX_DOUBLINGS: u32 = 3;

/// Negative weights down to `-CLAMP_TOL * sigma2` count as roundoff.
const CLAMP_TOL: f64 = 1e-10;

pub struct CirculantEmbedding {
    grid: RegularGrid,
    model: CovarianceModel,
    dims: [usize; 2],
    weights: Vec<f64>,
    // sqrt(weight / N), precomputed for sampling
    scale: Vec<f64>,
    fft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CirculantEmbedding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantEmbedding")
            .field("grid", &self.grid)
            .field("model", &self.model)
            .field("dims", &self.dims)
            .finish()
    }
}

/// Smallest even 2,3,5-smooth integer `>= n`.
pub fn smooth_even_size(n: usize) -> usize {
    let mut k = n.max(2);
    loop {
        if k % 2 == 0 {
            let mut r = k;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            if r == 1 {
                return k;
            }
        }
        k += 1;
    }
}

/// Wrapped covariance row of the torus, `x` fastest.
fn torus_covariance(model: &CovarianceModel, spacing: [f64; 2], dims: [usize; 2]) -> Vec<f64> {
    let [n1, n2] = dims;
    let mut c = Vec::with_capacity(n1 * n2);
    for k2 in 0..n2 {
        let l2 = k2.min(n2 - k2) as f64 * spacing[1];
        for k1 in 0..n1 {
            let l1 = k1.min(n1 - k1) as f64 * spacing[0];
            c.push(model.cov(l1.hypot(l2)));
        }
    }
    c
}

/// In-place 2-D DFT of an `n1 x n2` array stored with the first axis fastest.
fn fft2(data: &mut [Complex<f64>], dims: [usize; 2], fx: &dyn Fft<f64>, fy: &dyn Fft<f64>) {
    let [n1, n2] = dims;
    fx.process(data);
    let mut col = vec![Complex::new(0.0, 0.0); n2];
    for k1 in 0..n1 {
        for (k2, c) in col.iter_mut().enumerate() {
            *c = data[k2 * n1 + k1];
        }
        fy.process(&mut col);
        for (k2, c) in col.iter().enumerate() {
            data[k2 * n1 + k1] = *c;
        }
    }
}

impl CirculantEmbedding {
    pub fn build(grid: &RegularGrid, model: &CovarianceModel, max_doublings: u32) -> Result<Self> {
        grid.validate()?;
        model.validate()?;
        let mut dims = [
            smooth_even_size(2 * (grid.nx() - 1)),
            smooth_even_size(2 * (grid.ny() - 1)),
        ];
        let mut planner = FftPlanner::new();
        let tol = CLAMP_TOL * model.sigma2;
        for attempt in 0..=max_doublings {
            let fft_x = planner.plan_fft_forward(dims[0]);
            let fft_y = planner.plan_fft_forward(dims[1]);
            let mut buf: Vec<Complex<f64>> = torus_covariance(model, grid.spacing, dims)
                .into_iter()
                .map(|v| Complex::new(v, 0.0))
                .collect();
            fft2(&mut buf, dims, fft_x.as_ref(), fft_y.as_ref());
            let mut weights: Vec<f64> = buf.iter().map(|z| z.re).collect();
            let min = weights.iter().cloned().fold(f64::INFINITY, f64::min);
            if min >= -tol {
                for w in weights.iter_mut() {
                    if *w < 0.0 {
                        *w = 0.0;
                    }
                }
                let n = (dims[0] * dims[1]) as f64;
                let scale = weights.iter().map(|w| (w / n).sqrt()).collect();
                return Ok(Self {
                    grid: *grid,
                    model: *model,
                    dims,
                    weights,
                    scale,
                    fft_x,
                    fft_y,
                });
            }
            if attempt == max_doublings {
                return Err(Error::NegativeSpectrum {
                    min_weight: min,
                    dims: (dims[0], dims[1]),
                });
            }
            dims = [dims[0] * 2, dims[1] * 2];
        }
        unreachable!("loop returns on its last iteration")
    }

    pub fn grid(&self) -> &RegularGrid {
        &self.grid
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    /// Torus size `(N1, N2)`.
    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    /// Spectral weights, first axis fastest.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_range(&self) -> (f64, f64) {
        self.weights
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)))
    }

    /// Two independent exact draws on the grid (real and imaginary parts).
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> (GridField, GridField) {
        let [n1, _] = self.dims;
        let mut buf: Vec<Complex<f64>> = self
            .scale
            .iter()
            .map(|&s| {
                let re = std_normal(rng);
                let im = std_normal(rng);
                Complex::new(s * re, s * im)
            })
            .collect();
        fft2(&mut buf, self.dims, self.fft_x.as_ref(), self.fft_y.as_ref());
        let (mx, my) = (self.grid.nx(), self.grid.ny());
        let mut a = Vec::with_capacity(mx * my);
        let mut b = Vec::with_capacity(mx * my);
        for j in 0..my {
            for z in &buf[j * n1..j * n1 + mx] {
                a.push(z.re);
                b.push(z.im);
            }
        }
        let field = |values| GridField {
            grid: self.grid,
            values,
            seed: None,
            draw: None,
        };
        (field(a), field(b))
    }

    /// A single draw (the real part).
    pub fn simulate_one<R: Rng + ?Sized>(&self, rng: &mut R) -> GridField {
        self.simulate(rng).0
    }
}
