//! Conditional simulation on a grid.
//!
//! A draw is `v = y_hat + (y - y_tilde)`: the Kriging prediction from the
//! data, plus an unconditional grid draw `y`, minus the prediction `y_tilde`
//! made from synthetic data generated from `y` at the observation locations.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::embedding::{CirculantEmbedding, DEFAULT_MAX_DOUBLINGS};
use crate::error::{invalid, Error, Result};
use crate::grid::{pad_for_observations, GridField, RegularGrid};
use crate::kriging::{KrigingSystem, ObservationSet};
use crate::linalg::{DenseCap, SpdFactor, DEFAULT_DENSE_CAP};
use crate::local::{LocalSampler, Neighborhood};
use crate::nn::{build_surrogate, SurrogateSet, SurrogateSystem};
use crate::rng::{std_normal, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Local,
    NearestNeighbor,
    Exact,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Method::Local),
            "nearest_neighbor" | "nn" => Ok(Method::NearestNeighbor),
            "exact" => Ok(Method::Exact),
            _ => Err(invalid(format!("unknown method '{s}' (local, nearest_neighbor, exact)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Local => "local",
            Method::NearestNeighbor => "nearest_neighbor",
            Method::Exact => "exact",
        })
    }
}

/// What to do with several observations in one grid box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxPolicy {
    /// Keep them and draw their synthetic values jointly.
    Block,
    /// Replace them by one observation at their centroid.
    Average,
    /// Halve the grid spacing until they separate, then average what remains.
    Refine,
}

impl std::str::FromStr for BoxPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block" => Ok(BoxPolicy::Block),
            "average" => Ok(BoxPolicy::Average),
            "refine" => Ok(BoxPolicy::Refine),
            _ => Err(invalid(format!("unknown box policy '{s}' (block, average, refine)"))),
        }
    }
}

impl std::fmt::Display for BoxPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoxPolicy::Block => "block",
            BoxPolicy::Average => "average",
            BoxPolicy::Refine => "refine",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondSimConfig {
    pub grid: RegularGrid,
    pub model: CovarianceModel,
    pub method: Method,
    /// Neighborhood order for the off-grid step.
    pub n_p: usize,
    pub box_policy: BoxPolicy,
    /// Maximum number of spacing halvings under `Refine`.
    pub refine_limit: u32,
    pub draws: usize,
    pub seed: u64,
    pub max_doublings: u32,
    pub dense_cap: usize,
}

impl CondSimConfig {
    pub fn new(grid: RegularGrid, model: CovarianceModel, seed: u64) -> Self {
        Self {
            grid,
            model,
            method: Method::Local,
            n_p: 4,
            box_policy: BoxPolicy::Block,
            refine_limit: 1,
            draws: 1,
            seed,
            max_doublings: DEFAULT_MAX_DOUBLINGS,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.model.validate()?;
        if self.n_p == 0 {
            return Err(invalid("neighborhood order must be at least 1"));
        }
        if self.draws == 0 {
            return Err(invalid("ensemble size must be at least 1"));
        }
        Ok(())
    }
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
pub struct StageTimings {
    #[serde(rename = "CESetup")]
    pub ce_setup: f64,
    pub off_setup: f64,
    #[serde(rename = "CE")]
    pub ce: f64,
    pub off_grid: f64,
    #[serde(rename = "predict")]
    pub predict: f64,
    #[serde(rename = "total")]
    pub total: f64,
}

impl StageTimings {
    fn add_draw(&mut self, d: &DrawTimings) {
        self.ce += d.ce.as_secs_f64();
        self.off_grid += d.off_grid.as_secs_f64();
        self.predict += d.predict.as_secs_f64();
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DrawTimings {
    pub ce: Duration,
    pub off_grid: Duration,
    pub predict: Duration,
}

/// Groups observations by containing box of `grid`, preserving first-seen order.
fn box_groups(grid: &RegularGrid, obs: &ObservationSet) -> Vec<Vec<usize>> {
    let mut order: Vec<(i64, i64)> = Vec::new();
    let mut map: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (k, p) in obs.locations.iter().enumerate() {
        let b = grid.containing_box(*p);
        let e = map.entry(b).or_default();
        if e.is_empty() {
            order.push(b);
        }
        e.push(k);
    }
    order.into_iter().map(|b| map.remove(&b).unwrap()).collect()
}

/// One observation per occupied box: centroid location, mean value, and
/// noise sd of the mean `sqrt(sum phi^2) / k`.
pub fn average_boxes(grid: &RegularGrid, obs: &ObservationSet) -> Result<ObservationSet> {
    let mut locs = Vec::new();
    let mut vals = Vec::new();
    let mut sds = Vec::new();
    for g in box_groups(grid, obs) {
        let k = g.len() as f64;
        let mut c = [0.0, 0.0];
        let (mut v, mut s2) = (0.0, 0.0);
        for &i in &g {
            c[0] += obs.locations[i][0];
            c[1] += obs.locations[i][1];
            v += obs.values[i];
            s2 += obs.noise_sd[i] * obs.noise_sd[i];
        }
        locs.push([c[0] / k, c[1] / k]);
        vals.push(v / k);
        sds.push(s2.sqrt() / k);
    }
    ObservationSet::new(locs, vals, sds)
}

/// Number of boxes holding more than one observation.
pub fn shared_boxes(grid: &RegularGrid, obs: &ObservationSet) -> usize {
    box_groups(grid, obs).iter().filter(|g| g.len() > 1).count()
}

/// Applies the box policy, returning the output grid and the observations used.
pub fn apply_box_policy(
    grid: &RegularGrid,
    obs: &ObservationSet,
    policy: BoxPolicy,
    refine_limit: u32,
) -> Result<(RegularGrid, ObservationSet)> {
    match policy {
        BoxPolicy::Block => Ok((*grid, obs.clone())),
        BoxPolicy::Average => Ok((*grid, average_boxes(grid, obs)?)),
        BoxPolicy::Refine => {
            let mut g = *grid;
            for _ in 0..refine_limit {
                if shared_boxes(&g, obs) == 0 {
                    break;
                }
                g = g.refined();
            }
            Ok((g, average_boxes(&g, obs)?))
        }
    }
}

enum OffGrid {
    Local {
        sampler: LocalSampler,
        system: KrigingSystem,
        noise: Vec<f64>,
    },
    Nn {
        set: SurrogateSet,
        system: SurrogateSystem,
    },
    Exact {
        joint: SpdFactor,
        system: KrigingSystem,
        noise_sd: Vec<f64>,
    },
}

/// Everything shared by the draws of one ensemble.
pub struct ConditionalSimulator {
    config: CondSimConfig,
    grid: RegularGrid,
    obs: ObservationSet,
    sim_grid: RegularGrid,
    window: Vec<usize>,
    embedding: Option<CirculantEmbedding>,
    off: OffGrid,
    prediction: Vec<f64>,
    setup: StageTimings,
}

impl std::fmt::Debug for ConditionalSimulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConditionalSimulator")
            .field("grid", &self.grid)
            .field("sim_grid", &self.sim_grid)
            .field("n_obs", &self.obs.len())
            .finish()
    }
}

impl ConditionalSimulator {
    /// Runs Step 1 and every setup that does not depend on the draw.
    pub fn new(config: &CondSimConfig, obs: &ObservationSet) -> Result<Self> {
        config.validate()?;
        obs.validate()?;
        let start = Instant::now();
        let (grid, obs) = apply_box_policy(&config.grid, obs, config.box_policy, config.refine_limit)?;
        let model = config.model;
        let cap = DenseCap(config.dense_cap);

        let sim_grid = match config.method {
            Method::Exact => grid,
            _ => pad_for_observations(&grid, &obs.locations, config.n_p),
        };
        let window = grid
            .window_indices(&sim_grid)
            .ok_or_else(|| Error::Numeric("output grid is not a window of the simulation grid".into()))?;

        let mut setup = StageTimings::default();
        let t = Instant::now();
        let embedding = match config.method {
            Method::Exact => None,
            _ => Some(CirculantEmbedding::build(&sim_grid, &model, config.max_doublings)?),
        };
        setup.ce_setup = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let (off, prediction) = match config.method {
            Method::Local => {
                let sampler = LocalSampler::build(&sim_grid, &obs.locations, &model, config.n_p)?;
                setup.off_setup = t.elapsed().as_secs_f64();
                let system = KrigingSystem::for_observations(&model, &obs)?;
                let pred = system.predict_grid(&obs.values, &grid)?;
                let noise = obs.noise_var();
                (
                    OffGrid::Local {
                        sampler,
                        system,
                        noise,
                    },
                    pred,
                )
            }
            Method::NearestNeighbor => {
                let tau2 = mean_noise_var(&obs);
                let set = build_surrogate(&sim_grid, &obs, &model, Neighborhood::Order(config.n_p), tau2)?;
                cap.check(set.len())?;
                let system = set.system(&model)?;
                setup.off_setup = t.elapsed().as_secs_f64();
                let pred = system.predict_grid(&set.values, &grid)?;
                (OffGrid::Nn { set, system }, pred)
            }
            Method::Exact => {
                cap.check(grid.len() + obs.len())?;
                let mut locs = grid.nodes();
                locs.extend_from_slice(&obs.locations);
                let k = crate::covariance::cov_matrix(&model, &locs, &locs);
                let joint = SpdFactor::new(k.as_ref(), model.sigma2)?;
                setup.off_setup = t.elapsed().as_secs_f64();
                let system = KrigingSystem::for_observations(&model, &obs)?;
                let pred = system.predict_grid(&obs.values, &grid)?;
                (
                    OffGrid::Exact {
                        joint,
                        system,
                        noise_sd: obs.noise_sd.clone(),
                    },
                    pred,
                )
            }
        };
        setup.total = start.elapsed().as_secs_f64();
        Ok(Self {
            config: config.clone(),
            grid,
            obs,
            sim_grid,
            window,
            embedding,
            off,
            prediction,
            setup,
        })
    }

    pub fn config(&self) -> &CondSimConfig {
        &self.config
    }

    /// Output grid (refined when the box policy required it).
    pub fn grid(&self) -> &RegularGrid {
        &self.grid
    }

    /// Padded grid the unconditional draws live on.
    pub fn sim_grid(&self) -> &RegularGrid {
        &self.sim_grid
    }

    /// Observations after the box policy.
    pub fn observations(&self) -> &ObservationSet {
        &self.obs
    }

    pub fn embedding(&self) -> Option<&CirculantEmbedding> {
        self.embedding.as_ref()
    }

    /// Step-1 Kriging prediction on the output grid.
    pub fn prediction(&self) -> &[f64] {
        &self.prediction
    }

    pub fn setup_timings(&self) -> StageTimings {
        self.setup
    }

    /// Conditional draw number `index`, from its own random stream.
    pub fn draw(&self, index: u64) -> Result<(GridField, DrawTimings)> {
        let mut rng = stream(self.config.seed, index);
        let mut tm = DrawTimings::default();
        let m = self.grid.len();

        let t = Instant::now();
        let (y, z_star): (Vec<f64>, Vec<f64>);
        let y_tilde;
        match &self.off {
            OffGrid::Local {
                sampler,
                system,
                noise,
            } => {
                let field = self.embedding.as_ref().unwrap().simulate_one(&mut rng);
                tm.ce = t.elapsed();
                let t = Instant::now();
                z_star = sampler.sample_offgrid(&field, noise, &mut rng)?;
                tm.off_grid = t.elapsed();
                y = self.window.iter().map(|&k| field.values[k]).collect();
                let t = Instant::now();
                y_tilde = system.predict_grid(&z_star, &self.grid)?;
                tm.predict = t.elapsed();
            }
            OffGrid::Nn { set, system } => {
                let field = self.embedding.as_ref().unwrap().simulate_one(&mut rng);
                tm.ce = t.elapsed();
                let t = Instant::now();
                z_star = set.draw_inputs(&field, &mut rng)?;
                tm.off_grid = t.elapsed();
                y = self.window.iter().map(|&k| field.values[k]).collect();
                let t = Instant::now();
                y_tilde = system.predict_grid(&z_star, &self.grid)?;
                tm.predict = t.elapsed();
            }
            OffGrid::Exact {
                joint,
                system,
                noise_sd,
            } => {
                let xi: Vec<f64> = (0..joint.size()).map(|_| std_normal(&mut rng)).collect();
                let joint_draw = joint.mul_l(&xi);
                tm.ce = t.elapsed();
                let t = Instant::now();
                z_star = joint_draw[m..]
                    .iter()
                    .zip(noise_sd)
                    .map(|(v, s)| v + s * std_normal(&mut rng))
                    .collect();
                tm.off_grid = t.elapsed();
                y = joint_draw[..m].to_vec();
                let t = Instant::now();
                y_tilde = system.predict_grid(&z_star, &self.grid)?;
                tm.predict = t.elapsed();
            }
        }
        let v: Vec<f64> = (0..m).map(|k| self.prediction[k] + y[k] - y_tilde[k]).collect();
        let field = GridField::new(self.grid, v)?.with_provenance(self.config.seed, index);
        Ok((field, tm))
    }
}

fn mean_noise_var(obs: &ObservationSet) -> f64 {
    if obs.is_empty() {
        0.0
    } else {
        obs.noise_var().iter().sum::<f64>() / obs.len() as f64
    }
}

/// Draw `index` of the ensemble described by `config`.
pub fn conditional_draw(config: &CondSimConfig, obs: &ObservationSet, index: u64) -> Result<GridField> {
    Ok(ConditionalSimulator::new(config, obs)?.draw(index)?.0)
}

/// Conditional draws with their Monte Carlo summaries.
#[derive(Debug, Clone)]
pub struct FieldEnsemble {
    pub grid: RegularGrid,
    pub draws: Vec<GridField>,
    /// Step-1 Kriging prediction.
    pub prediction: Vec<f64>,
    pub mean: Vec<f64>,
    /// Per-node sample standard deviation (n - 1 denominator), the Monte
    /// Carlo estimate of the prediction standard error. `None` for a single draw.
    pub sd: Option<Vec<f64>>,
    pub timings: StageTimings,
}

impl FieldEnsemble {
    pub fn from_draws(grid: RegularGrid, draws: Vec<GridField>, prediction: Vec<f64>, timings: StageTimings) -> Self {
        let (mean, sd) = summarize(grid.len(), &draws);
        Self {
            grid,
            draws,
            prediction,
            mean,
            sd,
            timings,
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Standard error of the ensemble mean, `sd / sqrt(n)`.
    pub fn mean_se(&self) -> Option<Vec<f64>> {
        let n = self.draws.len() as f64;
        self.sd.as_ref().map(|s| s.iter().map(|v| v / n.sqrt()).collect())
    }
}

fn summarize(m: usize, draws: &[GridField]) -> (Vec<f64>, Option<Vec<f64>>) {
    let n = draws.len();
    let mut mean = vec![0.0; m];
    for d in draws {
        for (a, v) in mean.iter_mut().zip(&d.values) {
            *a += v;
        }
    }
    for a in &mut mean {
        *a /= n.max(1) as f64;
    }
    if n < 2 {
        return (mean, None);
    }
    let mut ss = vec![0.0; m];
    for d in draws {
        for ((s, v), mu) in ss.iter_mut().zip(&d.values).zip(&mean) {
            *s += (v - mu) * (v - mu);
        }
    }
    let sd = ss.into_iter().map(|s| (s / (n - 1) as f64).sqrt()).collect();
    (mean, Some(sd))
}

/// Runs `config.draws` conditional draws. Draw `k` always uses stream `k`,
/// so results do not depend on scheduling or thread count.
pub fn run_ensemble(config: &CondSimConfig, obs: &ObservationSet) -> Result<FieldEnsemble> {
    let start = Instant::now();
    let sim = ConditionalSimulator::new(config, obs)?;
    let results = (0..config.draws as u64)
        .into_par_iter()
        .map(|k| sim.draw(k))
        .collect::<Result<Vec<_>>>()?;
    let mut timings = sim.setup_timings();
    let mut draws = Vec::with_capacity(results.len());
    for (f, t) in results {
        timings.add_draw(&t);
        draws.push(f);
    }
    timings.total = start.elapsed().as_secs_f64();
    Ok(FieldEnsemble::from_draws(*sim.grid(), draws, sim.prediction().to_vec(), timings))
}

/// Unconditional draws on `grid`, draw `k` from stream `k`.
pub fn simulate_unconditional(
    grid: &RegularGrid,
    model: &CovarianceModel,
    draws: usize,
    seed: u64,
    max_doublings: u32,
) -> Result<Vec<GridField>> {
    let ce = CirculantEmbedding::build(grid, model, max_doublings)?;
    Ok((0..draws as u64)
        .into_par_iter()
        .map(|k| ce.simulate_one(&mut stream(seed, k)).with_provenance(seed, k))
        .collect())
}
