use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use cesim::condsim::{run_ensemble, simulate_unconditional, BoxPolicy, CondSimConfig, Method};
use cesim::covariance::CovarianceModel;
use cesim::embedding::{CirculantEmbedding, DEFAULT_MAX_DOUBLINGS};
use cesim::eval::bench::{timing_bench, write_bench_csv, BenchParams};
use cesim::eval::design::{run_design, summarize, write_rows_csv, write_summary_csv, ApproxMethod, EvalDesign};
use cesim::eval::misspec::{misspec_study, misspec_sweep, MisspecParams};
use cesim::grid::{pad_for_observations, GridField, RegularGrid};
use cesim::io::{parse_observations, read_config, write_raster, write_raster_csv, Manifest};
use cesim::kriging::{ObservationSet, SeProblem};
use cesim::linalg::{DenseCap, DEFAULT_DENSE_CAP};
use cesim::local::{local_se, Neighborhood};
use cesim::nn::nn_se;
use cesim::Error;

#[derive(Parser, Debug)]
#[command(name = "cesim", version, about = "Conditional simulation of Gaussian random fields on grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the circulant embedding and report its spectrum.
    EmbedCheck(Opts),
    /// Unconditional draws.
    Simulate(Opts),
    /// Conditional ensemble from observations.
    Condsim(Opts),
    /// Analytic standard-error raster (exact, local or nearest_neighbor).
    Se(Opts),
    /// Accuracy study over random observation layouts.
    Evaluate(Opts),
    /// Conditional correlation between neighboring boxes.
    Misspec(Opts),
    /// Stage timings.
    Bench(Opts),
}

/// Every flag may also be given in the `--config` file as `name = value`
/// (dashes or underscores); flags win.
#[derive(Args, Debug, Default)]
#[command(allow_negative_numbers = true)]
struct Opts {
    /// Key-value config file, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $CESIM_OUT or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,

    /// Grid origin `x,y`.
    #[arg(long, allow_hyphen_values = true)]
    origin: Option<String>,
    /// Grid spacing `h` or `hx,hy`.
    #[arg(long)]
    spacing: Option<String>,
    /// Grid nodes `nx,ny`; omit to fit the grid to the observations.
    #[arg(long)]
    dims: Option<String>,
    /// Extra nodes kept around the observations when fitting the grid.
    #[arg(long)]
    margin: Option<usize>,

    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,

    /// Observation CSV (`x,y,value[,sd]`).
    #[arg(long)]
    obs: Option<PathBuf>,
    /// Noise sd for observations without an sd column.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    method: Option<String>,
    /// Neighborhood order, or `full` for `se`.
    #[arg(long = "np")]
    np: Option<String>,
    #[arg(long)]
    box_policy: Option<String>,
    #[arg(long)]
    refine_limit: Option<u32>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    dense_cap: Option<usize>,
    #[arg(long)]
    max_doublings: Option<u32>,
    /// Also write CSV rasters.
    #[arg(long)]
    csv: bool,

    // evaluate
    #[arg(long)]
    configs: Option<usize>,
    #[arg(long)]
    nus: Option<String>,
    #[arg(long)]
    distances: Option<String>,
    #[arg(long)]
    taus: Option<String>,
    #[arg(long)]
    orders: Option<String>,
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    n_obs: Option<String>,

    // misspec
    #[arg(long)]
    spacings: Option<String>,
    #[arg(long)]
    theta_range: Option<String>,
    #[arg(long)]
    nu_range: Option<String>,
    #[arg(long)]
    n_theta: Option<usize>,
    #[arg(long)]
    n_nu: Option<usize>,

    // bench
    #[arg(long)]
    sizes: Option<String>,
}

/// Usage errors exit with status 2, everything else with 1.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Res<T> = std::result::Result<T, Failure>;

/// Flags layered over the config file, recording every value used.
struct Settings {
    values: BTreeMap<String, String>,
    echo: BTreeMap<String, String>,
}

impl Settings {
    fn new(opts: &Opts) -> Res<Self> {
        let mut values = BTreeMap::new();
        if let Some(p) = &opts.config {
            let file = if p.extension().is_some_and(|e| e == "json") {
                let m = Manifest::read(p)?;
                serde_json::from_value::<BTreeMap<String, String>>(m.config)
                    .map_err(|e| Failure::Run(Error::Json(e)))?
            } else {
                read_config(p)?
            };
            for (k, v) in file {
                values.insert(k.replace('-', "_"), v);
            }
        }
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                values.insert(k.to_string(), v);
            }
        };
        set("seed", opts.seed.map(|v| v.to_string()));
        set("origin", opts.origin.clone());
        set("spacing", opts.spacing.clone());
        set("dims", opts.dims.clone());
        set("margin", opts.margin.map(|v| v.to_string()));
        set("sigma2", opts.sigma2.map(|v| v.to_string()));
        set("theta", opts.theta.map(|v| v.to_string()));
        set("nu", opts.nu.map(|v| v.to_string()));
        set("obs", opts.obs.as_ref().map(|p| p.display().to_string()));
        set("tau", opts.tau.map(|v| v.to_string()));
        set("method", opts.method.clone());
        set("np", opts.np.clone());
        set("box_policy", opts.box_policy.clone());
        set("refine_limit", opts.refine_limit.map(|v| v.to_string()));
        set("draws", opts.draws.map(|v| v.to_string()));
        set("dense_cap", opts.dense_cap.map(|v| v.to_string()));
        set("max_doublings", opts.max_doublings.map(|v| v.to_string()));
        set("configs", opts.configs.map(|v| v.to_string()));
        set("nus", opts.nus.clone());
        set("distances", opts.distances.clone());
        set("taus", opts.taus.clone());
        set("orders", opts.orders.clone());
        set("methods", opts.methods.clone());
        set("n_obs", opts.n_obs.clone());
        set("spacings", opts.spacings.clone());
        set("theta_range", opts.theta_range.clone());
        set("nu_range", opts.nu_range.clone());
        set("n_theta", opts.n_theta.map(|v| v.to_string()));
        set("n_nu", opts.n_nu.map(|v| v.to_string()));
        set("sizes", opts.sizes.clone());
        Ok(Self {
            values,
            echo: BTreeMap::new(),
        })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.values.get(key).cloned();
        if let Some(v) = &v {
            self.echo.insert(key.to_string(), v.clone());
        }
        v
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Res<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| Failure::Run(Error::InvalidArgument(format!("{key}: cannot parse '{s}'")))),
        }
    }

    fn or<T: FromStr + ToString>(&mut self, key: &str, default: T) -> Res<T> {
        match self.parse(key)? {
            Some(v) => Ok(v),
            None => {
                self.echo.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Res<T> {
        self.parse(key)?
            .ok_or_else(|| Failure::Usage(format!("--{} is required", key.replace('_', "-"))))
    }

    fn list<T: FromStr>(&mut self, key: &str, default: &str) -> Res<Vec<T>> {
        let s = match self.raw(key) {
            Some(s) => s,
            None => {
                self.echo.insert(key.to_string(), default.to_string());
                default.to_string()
            }
        };
        s.split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Failure::Run(Error::InvalidArgument(format!("{key}: cannot parse '{t}'"))))
            })
            .collect()
    }

    fn pair(&mut self, key: &str, default: Option<&str>) -> Res<Option<[f64; 2]>> {
        let s = match (self.raw(key), default) {
            (Some(s), _) => s,
            (None, Some(d)) => {
                self.echo.insert(key.to_string(), d.to_string());
                d.to_string()
            }
            (None, None) => return Ok(None),
        };
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Failure::Run(Error::InvalidArgument(format!("{key}: cannot parse '{s}'"))))?;
        match v.as_slice() {
            [a] => Ok(Some([*a, *a])),
            [a, b] => Ok(Some([*a, *b])),
            _ => Err(Failure::Run(Error::InvalidArgument(format!("{key}: expected one or two numbers")))),
        }
    }

    fn seed(&mut self) -> Res<u64> {
        self.required("seed")
    }

    fn echo_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.echo).expect("string map serializes")
    }
}

fn out_dir(opts: &Opts) -> Res<PathBuf> {
    let dir = opts
        .out
        .clone()
        .or_else(|| std::env::var_os("CESIM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(Error::from)?;
    Ok(dir)
}

fn model(s: &mut Settings) -> Res<CovarianceModel> {
    let sigma2 = s.or("sigma2", 1.0)?;
    let theta = s.required("theta")?;
    let nu = s.or("nu", 0.5)?;
    Ok(CovarianceModel::new(sigma2, theta, nu)?)
}

fn observations(s: &mut Settings) -> Res<ObservationSet> {
    let path: String = s.required("obs")?;
    let tau = s.or("tau", 0.0)?;
    Ok(parse_observations(Path::new(&path), tau)?)
}

/// Explicit grid, or one fitted to the observations and padded by `margin`.
fn grid(s: &mut Settings, obs: Option<&ObservationSet>, default_margin: usize) -> Res<RegularGrid> {
    let spacing = s.pair("spacing", Some("1"))?.unwrap();
    if let Some(d) = s.pair("dims", None)? {
        let origin = s.pair("origin", Some("0,0"))?.unwrap();
        if d[0].fract() != 0.0 || d[1].fract() != 0.0 || d[0] < 1.0 || d[1] < 1.0 {
            return Err(Failure::Run(Error::InvalidArgument("dims must be positive integers".into())));
        }
        return Ok(RegularGrid::new(origin, spacing, [d[0] as usize, d[1] as usize])?);
    }
    let Some(obs) = obs.filter(|o| !o.is_empty()) else {
        return Err(Failure::Usage("--dims is required without observations".into()));
    };
    let margin = s.or("margin", default_margin)?;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &obs.locations {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let origin = s.pair("origin", None)?.unwrap_or([
        (lo[0] / spacing[0]).floor() * spacing[0],
        (lo[1] / spacing[1]).floor() * spacing[1],
    ]);
    let dims = [0, 1].map(|a| (((hi[a] - origin[a]) / spacing[a]).ceil() as usize + 1).max(2));
    let g = RegularGrid::new(origin, spacing, dims)?;
    Ok(pad_for_observations(&g, &obs.locations, margin))
}

fn raster(dir: &Path, name: &str, field: &GridField, csv: bool, what: &str, outputs: &mut Vec<String>) -> Res<()> {
    let p = dir.join(format!("{name}.f32"));
    write_raster(&p, field, Some(what))?;
    outputs.push(format!("{name}.f32"));
    if csv {
        let f = fs::File::create(dir.join(format!("{name}.csv"))).map_err(Error::from)?;
        write_raster_csv(field, f)?;
        outputs.push(format!("{name}.csv"));
    }
    Ok(())
}

fn finish(dir: &Path, command: &str, s: &Settings, seed: Option<u64>, timings: Option<serde_json::Value>, outputs: Vec<String>) -> Res<()> {
    let mut m = Manifest::new(command, s.echo_json());
    m.seed = seed;
    m.timings = timings;
    m.outputs = outputs;
    m.write(&dir.join("manifest.json"))?;
    Ok(())
}

fn embed_check(opts: &Opts) -> Res<()> {
    let mut s = Settings::new(opts)?;
    let g = grid(&mut s, None, 0)?;
    let m = model(&mut s)?;
    let md = s.or("max_doublings", DEFAULT_MAX_DOUBLINGS)?;
    let ce = CirculantEmbedding::build(&g, &m, md)?;
    let (lo, hi) = ce.weight_range();
    let d = ce.dims();
    println!("grid {}x{}", g.nx(), g.ny());
    println!("embedding {}x{}", d[0], d[1]);
    println!("min_weight {lo:e}");
    println!("max_weight {hi:e}");
    Ok(())
}

fn simulate(opts: &Opts) -> Res<()> {
    let mut s = Settings::new(opts)?;
    let seed = s.seed()?;
    let g = grid(&mut s, None, 0)?;
    let m = model(&mut s)?;
    let draws = s.or("draws", 1usize)?;
    let md = s.or("max_doublings", DEFAULT_MAX_DOUBLINGS)?;
    let dir = out_dir(opts)?;
    let fields = simulate_unconditional(&g, &m, draws, seed, md)?;
    let mut outputs = Vec::new();
    for (k, f) in fields.iter().enumerate() {
        raster(&dir, &format!("draw_{k:05}"), f, opts.csv, "unconditional draw", &mut outputs)?;
    }
    finish(&dir, "simulate", &s, Some(seed), None, outputs)
}

fn condsim(opts: &Opts) -> Res<()> {
    let mut s = Settings::new(opts)?;
    let seed = s.seed()?;
    let obs = observations(&mut s)?;
    let g = grid(&mut s, Some(&obs), 0)?;
    let mut cfg = CondSimConfig::new(g, model(&mut s)?, seed);
    cfg.method = s.or("method", Method::Local)?;
    cfg.n_p = s.or("np", 4usize)?;
    cfg.box_policy = s.or("box_policy", BoxPolicy::Block)?;
    cfg.refine_limit = s.or("refine_limit", 1u32)?;
    cfg.draws = s.or("draws", 1usize)?;
    cfg.max_doublings = s.or("max_doublings", DEFAULT_MAX_DOUBLINGS)?;
    cfg.dense_cap = s.or("dense_cap", DEFAULT_DENSE_CAP)?;
    let dir = out_dir(opts)?;
    let ens = run_ensemble(&cfg, &obs)?;
    let mut outputs = Vec::new();
    for (k, f) in ens.draws.iter().enumerate() {
        raster(&dir, &format!("draw_{k:05}"), f, opts.csv, "conditional draw", &mut outputs)?;
    }
    let pred = GridField::new(ens.grid, ens.prediction.clone())?;
    raster(&dir, "prediction", &pred, opts.csv, "kriging prediction", &mut outputs)?;
    let mean = GridField::new(ens.grid, ens.mean.clone())?;
    raster(&dir, "mean", &mean, opts.csv, "ensemble mean", &mut outputs)?;
    if let Some(sd) = &ens.sd {
        let sd = GridField::new(ens.grid, sd.clone())?;
        raster(&dir, "sd", &sd, opts.csv, "ensemble standard deviation", &mut outputs)?;
    } else {
        eprintln!("note: a single draw has no ensemble standard deviation");
    }
    let timings = serde_json::to_value(ens.timings).map_err(Error::from)?;
    finish(&dir, "condsim", &s, Some(seed), Some(timings), outputs)?;
    println!("{} draws on {}x{} grid written to {}", ens.len(), ens.grid.nx(), ens.grid.ny(), dir.display());
    Ok(())
}

fn se(opts: &Opts) -> Res<()> {
    let mut s = Settings::new(opts)?;
    let obs = observations(&mut s)?;
    let g = grid(&mut s, Some(&obs), 0)?;
    let m = model(&mut s)?;
    let method: String = s.or("method", "exact".to_string())?;
    let cap = DenseCap(s.or("dense_cap", DEFAULT_DENSE_CAP)?);
    let p = SeProblem::new(&g, &obs, &m, cap)?;
    let values = match method.as_str() {
        "exact" => p.exact_se()?,
        "local" => local_se(&p, s.or("np", Neighborhood::Order(4))?)?,
        "nearest_neighbor" | "nn" => {
            let tau: f64 = s.or("tau", 0.0)?;
            nn_se(&p, s.or("np", Neighborhood::Order(4))?, tau * tau, cap)?
        }
        other => {
            return Err(Failure::Run(Error::InvalidArgument(format!(
                "unknown method '{other}' (exact, local, nearest_neighbor)"
            ))))
        }
    };
    let dir = out_dir(opts)?;
    let mut outputs = Vec::new();
    raster(&dir, "se", &GridField::new(g, values)?, opts.csv, "standard error", &mut outputs)?;
    finish(&dir, "se", &s, None, None, outputs)
}

fn evaluate(opts: &Opts) -> Res<()> {
    let mut s = Settings::new(opts)?;
    let seed = s.seed()?;
    let d = EvalDesign::default();
    let design = EvalDesign {
        nus: s.list("nus", "0.5,1.5")?,
        distances: s.list("distances", "20,45,70")?,
        taus: s.list("taus", "0.1,0.2,0.3")?,
        configs: s.or("configs", d.configs)?,
        orders: s.list("orders", "1,2,3,4,full")?,
        methods: s
            .list::<String>("methods", "local,nearest_neighbor")?
            .iter()
            .map(|m| match m.as_str() {
                "local" => Ok(ApproxMethod::Local),
                "nearest_neighbor" | "nn" => Ok(ApproxMethod::NearestNeighbor),
                o => Err(Failure::Run(Error::InvalidArgument(format!("unknown method '{o}'")))),
            })
            .collect::<Res<_>>()?,
        n_obs: s.or("n_obs", d.n_obs)?,
        seed,
        ..d
    };
    let cap = DenseCap(s.or("dense_cap", DEFAULT_DENSE_CAP)?);
    let rows = run_design(&design, cap)?;
    let sum = summarize(&rows);
    let dir = out_dir(opts)?;
    write_rows_csv(&rows, fs::File::create(dir.join("rows.csv")).map_err(Error::from)?)?;
    write_summary_csv(&sum, fs::File::create(dir.join("summary.csv")).map_err(Error::from)?)?;
    for r in &sum {
        println!(
            "nu={} theta={:.2} tau={} {} np={} sigfig3={:.3} (sd {:.3}) p95={:.3}%",
            r.nu, r.theta, r.tau, r.method, r.order, r.sigfig3_mean, r.sigfig3_sd, r.p95_median
        );
    }
    finish(&dir, "evaluate", &s, Some(seed), None, vec!["rows.csv".into(), "summary.csv".into()])
}

fn misspec(opts: &Opts) -> Res<()> {
    let mut s = Settings::new(opts)?;
    let d = MisspecParams::default();
    let tr = s.pair("theta_range", Some("0.2,10"))?.unwrap();
    let nr = s.pair("nu_range", Some("0.5,1.5"))?.unwrap();
    let params = MisspecParams {
        spacings: s.list("spacings", "1,0.5")?,
        n_p: s.or("np", d.n_p)?,
        theta_range: (tr[0], tr[1]),
        nu_range: (nr[0], nr[1]),
        n_theta: s.or("n_theta", d.n_theta)?,
        n_nu: s.or("n_nu", d.n_nu)?,
    };
    let res = misspec_study(&params)?;
    let sweep = misspec_sweep(&params)?;
    let dir = out_dir(opts)?;
    let mut w = csv::Writer::from_path(dir.join("misspec.csv")).map_err(Error::from)?;
    for r in &res {
        w.serialize(r).map_err(Error::from)?;
        println!(
            "spacing {} max conditional correlation {:.4} at theta={:.3} nu={:.3}",
            r.spacing, r.max_corr, r.theta_at_max, r.nu_at_max
        );
    }
    w.flush().map_err(Error::from)?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv")).map_err(Error::from)?;
    for p in &sweep {
        w.serialize(p).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    finish(&dir, "misspec", &s, None, None, vec!["misspec.csv".into(), "sweep.csv".into()])
}

fn bench(opts: &Opts) -> Res<()> {
    let mut s = Settings::new(opts)?;
    let seed = s.seed()?;
    let d = BenchParams::default();
    let params = BenchParams {
        grid_sizes: s.list("sizes", "128,256,512")?,
        n_obs: s.list("n_obs", "400,1600,6400")?,
        n_p: s.or("np", d.n_p)?,
        model: CovarianceModel::new(s.or("sigma2", 1.0)?, s.or("theta", d.model.theta)?, s.or("nu", d.model.nu)?)?,
        tau: s.or("tau", d.tau)?,
        draws: s.or("draws", d.draws)?,
        seed,
    };
    let rows = timing_bench(&params)?;
    let dir = out_dir(opts)?;
    write_bench_csv(&rows, fs::File::create(dir.join("bench.csv")).map_err(Error::from)?)?;
    println!("m n CESetup OffSetup CE OffGrid predict total");
    for r in &rows {
        println!(
            "{} {} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4}",
            r.m, r.n, r.ce_setup, r.off_setup, r.ce, r.off_grid, r.predict, r.total
        );
    }
    finish(&dir, "bench", &s, Some(seed), None, vec!["bench.csv".into()])
}

fn run(cli: Cli) -> Res<()> {
    let opts = match &cli.command {
        Command::EmbedCheck(o)
        | Command::Simulate(o)
        | Command::Condsim(o)
        | Command::Se(o)
        | Command::Evaluate(o)
        | Command::Misspec(o)
        | Command::Bench(o) => o,
    };
    if let Some(t) = opts.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Run(Error::InvalidArgument(e.to_string())))?;
    }
    // dense kernels run serially so results never depend on the thread count
    faer::set_global_parallelism(faer::Par::Seq);
    match &cli.command {
        Command::EmbedCheck(o) => embed_check(o),
        Command::Simulate(o) => simulate(o),
        Command::Condsim(o) => condsim(o),
        Command::Se(o) => se(o),
        Command::Evaluate(o) => evaluate(o),
        Command::Misspec(o) => misspec(o),
        Command::Bench(o) => bench(o),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("ERROR usage: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("ERROR {}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
