//! Stage timings of the local-Kriging conditional simulation.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::condsim::{CondSimConfig, ConditionalSimulator, Method};
use crate::covariance::CovarianceModel;
use crate::error::Result;
use crate::grid::RegularGrid;
use crate::kriging::ObservationSet;
use crate::local::LocalSampler;
use crate::rng::stream;
use crate::Location;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchParams {
    pub grid_sizes: Vec<usize>,
    pub n_obs: Vec<usize>,
    pub n_p: usize,
    pub model: CovarianceModel,
    pub tau: f64,
    /// Draws timed per row; stage times are per-draw means.
    pub draws: usize,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            grid_sizes: vec![128, 256, 512],
            n_obs: vec![400, 1600, 6400],
            n_p: 4,
            model: CovarianceModel {
                sigma2: 1.0,
                theta: 10.0,
                nu: 0.5,
            },
            tau: 0.1,
            draws: 1,
            seed: 1,
        }
    }
}

/// Wall-clock seconds for one (grid, observation count) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "CESetup")]
    pub ce_setup: f64,
    #[serde(rename = "OffSetup")]
    pub off_setup: f64,
    #[serde(rename = "CE")]
    pub ce: f64,
    #[serde(rename = "OffGrid")]
    pub off_grid: f64,
    pub predict: f64,
    pub total: f64,
}

/// `n` locations uniform on the `m x m` unit grid's extent.
pub fn uniform_locations(m: usize, n: usize, seed: u64) -> Vec<Location> {
    let mut rng = stream(seed, (m * 1_000_003 + n) as u64);
    let ext = (m - 1) as f64;
    (0..n).map(|_| [rng.random::<f64>() * ext, rng.random::<f64>() * ext]).collect()
}

pub fn bench_row(m: usize, n: usize, p: &BenchParams) -> Result<BenchRow> {
    let start = Instant::now();
    let grid = RegularGrid::unit_square(m);
    let locs = uniform_locations(m, n, p.seed);
    let mut rng = stream(p.seed, u64::MAX);
    let vals: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let obs = ObservationSet::with_nugget(locs, vals, p.tau)?;
    let mut cfg = CondSimConfig::new(grid, p.model, p.seed);
    cfg.method = Method::Local;
    cfg.n_p = p.n_p;
    let sim = ConditionalSimulator::new(&cfg, &obs)?;
    let setup = sim.setup_timings();
    let (mut ce, mut off, mut pred) = (0.0, 0.0, 0.0);
    let draws = p.draws.max(1);
    for k in 0..draws {
        let (_, t) = sim.draw(k as u64)?;
        ce += t.ce.as_secs_f64();
        off += t.off_grid.as_secs_f64();
        pred += t.predict.as_secs_f64();
    }
    let d = draws as f64;
    Ok(BenchRow {
        m,
        n,
        ce_setup: setup.ce_setup,
        off_setup: setup.off_setup,
        ce: ce / d,
        off_grid: off / d,
        predict: pred / d,
        total: start.elapsed().as_secs_f64(),
    })
}

/// Rows for every grid size and observation count, run one after another so
/// timings do not compete.
pub fn timing_bench(p: &BenchParams) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &m in &p.grid_sizes {
        for &n in &p.n_obs {
            rows.push(bench_row(m, n, p)?);
        }
    }
    Ok(rows)
}

/// Time to build the local sampler alone (neighborhood lookup, weights,
/// conditional variances, box groups) for `n` observations on an `m x m` grid.
pub fn off_setup_time(m: usize, n: usize, n_p: usize, model: &CovarianceModel, seed: u64) -> Result<f64> {
    let grid = RegularGrid::unit_square(m);
    let locs = uniform_locations(m, n, seed);
    let padded = crate::grid::pad_for_observations(&grid, &locs, n_p);
    let t = Instant::now();
    let s = LocalSampler::build(&padded, &locs, model, n_p)?;
    let el = t.elapsed().as_secs_f64();
    drop(s);
    Ok(el)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
