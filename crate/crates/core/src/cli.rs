//! Config-driven command line: `constants`, `bounds`, `dataset`, `train`,
//! `verify`, `simulate` and `report`.
//!
//! Every subcommand reads one JSON [`RunConfig`], writes its artifacts into
//! `output_dir` and records them in a per-command manifest. Artifacts of a
//! failed run are removed.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{self, BoundGeometry};
use crate::error::{Error, Result};
use crate::mpc::{estimate_constants, Constants, MpcProblem};
use crate::nn::{self, RefineConfig, ReluNet, TrainConfig};
use crate::pipeline::{self, Dataset, Domain, InputMap, Regime};
use crate::scaling::ScalingParams;
use crate::verify::{self, ErrorBound, NnPolicy, RolloutSummary, Target};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "RELU_MPC_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CERT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    #[serde(default = "default_const_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_safety")]
    pub safety: f64,
    /// Replace estimated values (`c0`, `c2`, `gamma`, `L_u`, `D_Xinv`) before
    /// the derived constants are recomputed.
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
}

fn default_const_samples() -> usize {
    10_000
}
fn default_safety() -> f64 {
    1.1
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig {
            n_samples: default_const_samples(),
            seed: 0,
            safety: default_safety(),
            overrides: BTreeMap::new(),
        }
    }
}

/// Scaling parameters; unset fields default to `c8` from the constants,
/// `delta_hi = delta_bar`, `eps = delta_hi d(U) / (2 D(U))` and
/// `delta_lo = min{delta_hi, sqrt(c1/c6) d_target}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub c8: Option<f64>,
    pub delta_lo: Option<f64>,
    pub delta_hi: Option<f64>,
    pub eps: Option<f64>,
    /// Inradius of the target set `X'_inv`.
    pub d_target: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleCounts {
    pub dataset: usize,
    pub verify: usize,
    pub rollouts: usize,
    pub steps: usize,
    pub tail: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        SampleCounts {
            dataset: 20_000,
            verify: 10_000,
            rollouts: 100,
            steps: 200,
            tail: 12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub dataset: u64,
    pub verify: u64,
    pub rollouts: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { dataset: 1, verify: 2, rollouts: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    /// Fixed right-hand side; otherwise computed from the constants.
    pub rhs: Option<f64>,
    #[serde(default = "default_max_width")]
    pub max_width: u64,
}

fn default_max_width() -> u64 {
    20
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig { rhs: None, max_width: default_max_width() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Problem JSON; the built-in double integrator when absent.
    pub problem: Option<PathBuf>,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default = "default_regime")]
    pub regime: Regime,
    #[serde(default)]
    pub domain: Domain,
    /// Uniform error bound; defaults to `delta_bar`.
    pub delta1: Option<f64>,
    #[serde(default)]
    pub scaling: ScalingConfig,
    /// Hidden layer widths.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub train: TrainConfig,
    pub refine: Option<RefineConfig>,
    #[serde(default)]
    pub samples: SampleCounts,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub bounds: BoundsConfig,
    pub output_dir: PathBuf,
}

fn default_regime() -> Regime {
    Regime::Uniform
}
fn default_hidden() -> Vec<usize> {
    vec![32, 32, 32]
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = fs::read(path).map_err(|e| Error::from(e).context(format!("reading config {}", path.display())))?;
        let text = String::from_utf8_lossy(&bytes);
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: RunConfig = serde_path_to_error_like(de).map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &cfg.problem {
            if p.is_relative() {
                cfg.problem = Some(base.join(p));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok((cfg, hex::encode(Sha256::digest(&bytes))))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.problem {
            if !p.exists() {
                return Err(Error::Validation(format!("problem: file {} does not exist", p.display())));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Validation("hidden: need at least one positive width".into()));
        }
        self.train.validate()?;
        if let Some(d) = self.delta1 {
            if !(d > 0.0) {
                return Err(Error::Validation("delta1: must be positive".into()));
            }
        }
        for (k, v) in &self.constants.overrides {
            if !OVERRIDABLE.contains(&k.as_str()) {
                return Err(Error::Validation(format!("constants.overrides.{k}: not overridable (allowed: {OVERRIDABLE:?})")));
            }
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::Validation(format!("constants.overrides.{k}: must be positive")));
            }
        }
        let s = &self.samples;
        if s.dataset == 0 || s.verify == 0 || s.rollouts == 0 || s.steps == 0 || s.tail == 0 || s.tail > s.steps + 1 {
            return Err(Error::Validation("samples: counts must be positive and tail <= steps + 1".into()));
        }
        Ok(())
    }

    pub fn load_problem(&self) -> Result<MpcProblem> {
        match &self.problem {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::Validation(format!("problem {}: {e}", p.display())))
            }
            None => MpcProblem::double_integrator(),
        }
    }
}

/// Field-path aware parse: serde_json already reports line and column, and
/// unknown fields are rejected by `deny_unknown_fields`.
fn serde_path_to_error_like<'de, T: Deserialize<'de>>(
    de: &mut serde_json::Deserializer<serde_json::de::StrRead<'de>>,
) -> std::result::Result<T, serde_json::Error> {
    let v = T::deserialize(&mut *de)?;
    de.end()?;
    Ok(v)
}

const OVERRIDABLE: [&str; 5] = ["c0", "c2", "gamma", "L_u", "D_Xinv"];

#[derive(Parser, Debug)]
#[command(name = "relu-mpc", version, about = "Certified ReLU approximation of linear MPC policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate the stability constants and write constants.json.
    Constants(Common),
    /// Width/depth frontier (bounds.csv) and both right-hand sides (bounds.json).
    Bounds(Common),
    /// Build and persist the training set (dataset.csv + dataset.meta.json).
    Dataset(Common),
    /// Train on dataset.csv; writes model.json, history.csv and train.json.
    Train(Common),
    /// Pointwise certification of model.json; writes verify.json.
    Verify(Common),
    /// Closed-loop rollouts of model.json; writes trajectories.csv and simulate.json.
    Simulate(Common),
    /// Summarize the JSON reports found in the output directory.
    Report(Common),
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Ok(n) = std::env::var(THREADS_ENV) {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {n:?}");
                return EXIT_USAGE;
            }
        }
    }
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Run {
    name: &'static str,
    cfg: RunConfig,
    config_hash: String,
    written: Vec<PathBuf>,
    inputs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    crate_version: &'a str,
    seeds: BTreeMap<&'a str, u64>,
    inputs: Vec<ManifestEntry>,
    artifacts: Vec<ManifestEntry>,
    timestamp: String,
}

impl Run {
    fn path(&self, file: &str) -> PathBuf {
        self.cfg.output_dir.join(file)
    }

    fn write(&mut self, file: &str, contents: &str) -> Result<()> {
        let p = self.path(file);
        self.written.push(p.clone());
        fs::write(&p, contents)?;
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<()> {
        self.write(file, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    /// Register a file written by another routine.
    fn track(&mut self, p: PathBuf) -> PathBuf {
        self.written.push(p.clone());
        p
    }

    fn input(&mut self, file: &str) -> Result<PathBuf> {
        let p = self.path(file);
        if !p.exists() {
            return Err(Error::Validation(format!(
                "{} not found; run the producing subcommand first",
                p.display()
            )));
        }
        self.inputs.push(p.clone());
        Ok(p)
    }

    fn entry(&self, p: &Path) -> Result<ManifestEntry> {
        let bytes = fs::read(p)?;
        let rel = p.strip_prefix(&self.cfg.output_dir).unwrap_or(p);
        Ok(ManifestEntry {
            path: rel.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }

    fn finish(&mut self) -> Result<()> {
        let s = &self.cfg.seeds;
        let seeds = BTreeMap::from([
            ("constants", self.cfg.constants.seed),
            ("dataset", s.dataset),
            ("train", self.cfg.train.seed),
            ("verify", s.verify),
            ("rollouts", s.rollouts),
        ]);
        let manifest = Manifest {
            command: self.name,
            config_hash: &self.config_hash,
            crate_version: env!("CARGO_PKG_VERSION"),
            seeds,
            inputs: self.inputs.iter().map(|p| self.entry(p)).collect::<Result<_>>()?,
            artifacts: self.written.iter().map(|p| self.entry(p)).collect::<Result<_>>()?,
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        let file = format!("manifest-{}.json", self.name);
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        self.write(&file, &text)
    }

    fn cleanup(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }

    fn constants(&mut self, prob: &MpcProblem) -> Result<Constants> {
        let p = self.path("constants.json");
        if p.exists() {
            self.inputs.push(p.clone());
            let c: Constants = serde_json::from_str(&fs::read_to_string(&p)?)
                .map_err(|e| Error::Validation(format!("{}: {e}", p.display())))?;
            return Ok(c);
        }
        compute_constants(&self.cfg, prob)
    }
}

fn compute_constants(cfg: &RunConfig, prob: &MpcProblem) -> Result<Constants> {
    let cc = &cfg.constants;
    let mut c = estimate_constants(prob, cc.n_samples, cc.seed, cc.safety)?;
    if !cc.overrides.is_empty() {
        for (k, v) in &cc.overrides {
            match k.as_str() {
                "c0" => c.c0 = *v,
                "c2" => c.c2 = *v,
                "gamma" => c.gamma = *v,
                "L_u" => c.l_u = *v,
                "D_Xinv" => c.xinv_radius = *v,
                _ => unreachable!("validated"),
            }
        }
        c.rederive(prob)?;
    }
    Ok(c)
}

fn delta1_of(cfg: &RunConfig, c: &Constants) -> Result<f64> {
    let d = cfg.delta1.unwrap_or(c.delta_bar);
    if d > c.delta_bar {
        return Err(Error::Validation(format!("delta1: {d} exceeds delta_bar = {}", c.delta_bar)));
    }
    Ok(d)
}

fn scaling_of(cfg: &RunConfig, c: &Constants) -> Result<ScalingParams> {
    let s = &cfg.scaling;
    let hi = s.delta_hi.unwrap_or(c.delta_bar);
    let lo = match (s.delta_lo, s.d_target) {
        (Some(lo), _) => lo,
        (None, Some(d)) => hi.min((c.c1 / c.c6).sqrt() * d),
        (None, None) => {
            return Err(Error::Validation("scaling: set delta_lo or d_target for the non-uniform regime".into()));
        }
    };
    let eps = s.eps.unwrap_or(hi * c.u_inradius / (2.0 * c.u_radius));
    ScalingParams::new(s.c8.unwrap_or(c.c8), lo, hi, eps).map_err(|e| e.context("scaling"))
}

fn bound_of(cfg: &RunConfig, c: &Constants) -> Result<ErrorBound> {
    Ok(match cfg.regime {
        Regime::Uniform => ErrorBound::Uniform { delta1: delta1_of(cfg, c)? },
        Regime::NonUniform => ErrorBound::NonUniform(scaling_of(cfg, c)?),
    })
}

fn target_of(cfg: &RunConfig, c: &Constants) -> Result<Target> {
    Ok(match cfg.regime {
        Regime::Uniform => Target::uniform(c, delta1_of(cfg, c)?),
        Regime::NonUniform => {
            let p = scaling_of(cfg, c)?;
            Target::Ball { radius: c.target_radius(p.delta_lo) }
        }
    })
}

fn load_policy(run: &mut Run, prob: &MpcProblem) -> Result<NnPolicy> {
    let model = run.input("model.json")?;
    let net: ReluNet = serde_json::from_str(&fs::read_to_string(&model)?)
        .map_err(|e| Error::Validation(format!("{}: {e}", model.display())))?;
    let meta_path = run.input("dataset.meta.json")?;
    let meta: pipeline::DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
    if meta.problem_hash != prob.hash() {
        return Err(Error::Validation("dataset.meta.json: problem hash does not match the configured problem".into()));
    }
    if meta.regime != run.cfg.regime {
        return Err(Error::Validation("regime: model was trained for a different regime".into()));
    }
    if net.n_in() != prob.nx() || net.n_out() != prob.nu() {
        return Err(Error::Validation("model.json: input/output sizes do not match the problem".into()));
    }
    NnPolicy::new(net, InputMap::from_meta(&meta))
}

pub fn run(cmd: &Command) -> Result<i32> {
    let (name, common) = match cmd {
        Command::Constants(c) => ("constants", c),
        Command::Bounds(c) => ("bounds", c),
        Command::Dataset(c) => ("dataset", c),
        Command::Train(c) => ("train", c),
        Command::Verify(c) => ("verify", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Report(c) => ("report", c),
    };
    let (mut cfg, config_hash) = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.constants.seed = s;
        cfg.train.seed = s;
        cfg.seeds = Seeds { dataset: s, verify: s, rollouts: s };
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let mut run = Run {
        name,
        cfg,
        config_hash,
        written: Vec::new(),
        inputs: Vec::new(),
    };
    let result = dispatch(cmd, &mut run).and_then(|code| run.finish().map(|_| code));
    if result.is_err() {
        run.cleanup();
    }
    result
}

fn dispatch(cmd: &Command, run: &mut Run) -> Result<i32> {
    match cmd {
        Command::Constants(_) => cmd_constants(run),
        Command::Bounds(_) => cmd_bounds(run),
        Command::Dataset(_) => cmd_dataset(run),
        Command::Train(_) => cmd_train(run),
        Command::Verify(_) => cmd_verify(run),
        Command::Simulate(_) => cmd_simulate(run),
        Command::Report(_) => cmd_report(run),
    }
}

fn cmd_constants(run: &mut Run) -> Result<i32> {
    let prob = run.cfg.load_problem()?;
    let c = compute_constants(&run.cfg, &prob)?;
    run.write_json("constants.json", &c)?;
    println!("{}", serde_json::to_string_pretty(&c)?);
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct BoundsReport {
    regime: Regime,
    delta1: Option<f64>,
    theorem1: Option<bounds::Rhs>,
    theorem2: Option<bounds::Theorem2>,
    frontier_rhs: bounds::Rhs,
    frontier: Vec<FrontierRow>,
}

#[derive(Serialize, Clone)]
struct FrontierRow {
    n_w_prime: u64,
    n_d_prime: u64,
    n_w: u64,
    n_d: u64,
}

fn cmd_bounds(run: &mut Run) -> Result<i32> {
    let prob = run.cfg.load_problem()?;
    let (theorem1, theorem2, rhs, delta1) = match run.cfg.bounds.rhs {
        Some(rhs) => (None, None, bounds::Rhs { value: rhs, log10: rhs.log10() }, None),
        None => {
            let c = run.constants(&prob)?;
            let g = BoundGeometry {
                n_x: prob.nx(),
                n_u: prob.nu(),
                u_radius: c.u_radius,
                u_inradius: c.u_inradius,
                xinv_radius: c.xinv_radius,
                l_u: c.l_u,
            };
            let d1 = delta1_of(&run.cfg, &c)?;
            let t1 = bounds::theorem1_rhs(d1, c.delta_bar, &g)?;
            let t2 = match run.cfg.regime {
                Regime::NonUniform => {
                    let p = scaling_of(&run.cfg, &c)?;
                    Some(bounds::theorem2_rhs_at(p.delta_hi, p.delta_lo, p.c8, &g)?)
                }
                Regime::Uniform => None,
            };
            let used = t2.map_or(t1, |t| t.rhs);
            (Some(t1), t2, used, Some(d1))
        }
    };
    let n_x = u32::try_from(prob.nx()).map_err(|_| Error::Validation("n_x too large".into()))?;
    let mut rows = Vec::new();
    let mut csv_text = String::from("n_w_prime,n_d_prime,n_w,n_d,rhs,log10_rhs\n");
    if rhs.value.is_finite() {
        for (w, d) in bounds::feasible_pairs(rhs.value, run.cfg.bounds.max_width)? {
            let (n_w, n_d) = bounds::realized_architecture(w, d, n_x, prob.nu() as u64)?;
            csv_text.push_str(&format!("{w},{d},{n_w},{n_d},{:?},{:?}\n", rhs.value, rhs.log10));
            rows.push(FrontierRow { n_w_prime: w, n_d_prime: d, n_w, n_d });
        }
    } else {
        eprintln!("note: rhs = 10^{:.1} exceeds f64; frontier left empty", rhs.log10);
    }
    run.write("bounds.csv", &csv_text)?;
    let report = BoundsReport {
        regime: run.cfg.regime,
        delta1,
        theorem1,
        theorem2,
        frontier_rhs: rhs,
        frontier: rows,
    };
    run.write_json("bounds.json", &report)?;
    print!("{csv_text}");
    Ok(EXIT_OK)
}

fn cmd_dataset(run: &mut Run) -> Result<i32> {
    let prob = run.cfg.load_problem()?;
    let c = run.constants(&prob)?;
    let cfg = &run.cfg;
    let ds = match cfg.regime {
        Regime::Uniform => {
            pipeline::build_uniform_dataset(&prob, &c, delta1_of(cfg, &c)?, cfg.samples.dataset, cfg.seeds.dataset, cfg.domain)?
        }
        Regime::NonUniform => {
            let p = scaling_of(cfg, &c)?;
            pipeline::build_scaled_dataset(&prob, &c, &p, cfg.samples.dataset, cfg.seeds.dataset, cfg.domain)?
        }
    };
    let path = run.track(run.path("dataset.csv"));
    run.track(pipeline::meta_path(&path));
    ds.write(&path)?;
    println!(
        "dataset: {} samples ({} draws), eps = {:e}",
        ds.len(),
        ds.meta.drawn,
        ds.meta.eps
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct TrainReport {
    dims: Vec<usize>,
    param_count: usize,
    best_epoch: usize,
    epochs_run: usize,
    best_val_mse: f64,
    /// Largest error over the dataset (a sampled lower bound of the sup).
    sup_error: f64,
    eps: f64,
    sup_error_within_eps: bool,
    refined: bool,
}

fn cmd_train(run: &mut Run) -> Result<i32> {
    let prob = run.cfg.load_problem()?;
    let data = run.input("dataset.csv")?;
    let ds = Dataset::read(&data)?;
    ds.check_problem(&prob)?;
    let mut dims = vec![ds.inputs.nrows()];
    dims.extend(&run.cfg.hidden);
    dims.push(ds.targets.nrows());
    let out = nn::train(&ds.inputs, &ds.targets, &dims, &run.cfg.train)?;
    let (net, sup) = match &run.cfg.refine {
        Some(r) => nn::refine_sup(&out.net, &ds.inputs, &ds.targets, r)?,
        None => {
            let s = nn::sup_error(&out.net, &ds.inputs, &ds.targets)?;
            (out.net.clone(), s)
        }
    };
    run.write("model.json", &(net.to_json()? + "\n"))?;
    let mut hist = String::from("epoch,lr,train_mse,val_mse\n");
    for r in &out.history {
        hist.push_str(&format!("{},{:?},{:?},{:?}\n", r.epoch, r.lr, r.train_mse, r.val_mse));
    }
    run.write("history.csv", &hist)?;
    let report = TrainReport {
        param_count: net.param_count(),
        dims,
        best_epoch: out.best_epoch,
        epochs_run: out.history.len(),
        best_val_mse: out.best_val_mse,
        sup_error: sup,
        eps: ds.meta.eps,
        sup_error_within_eps: sup <= ds.meta.eps,
        refined: run.cfg.refine.is_some(),
    };
    run.write_json("train.json", &report)?;
    println!(
        "trained {:?}: val mse {:e}, sup error {:e} (eps {:e})",
        report.dims, report.best_val_mse, sup, ds.meta.eps
    );
    Ok(EXIT_OK)
}

fn cmd_verify(run: &mut Run) -> Result<i32> {
    let prob = run.cfg.load_problem()?;
    let c = run.constants(&prob)?;
    let policy = load_policy(run, &prob)?;
    let bound = bound_of(&run.cfg, &c)?;
    let r = verify::check_pointwise(&prob, &c, &policy, &bound, run.cfg.samples.verify, run.cfg.seeds.verify)?;
    #[derive(Serialize)]
    struct Out<'a> {
        bound: ErrorBound,
        passed: bool,
        report: &'a verify::PointwiseReport,
    }
    run.write_json("verify.json", &Out { bound, passed: r.passed(), report: &r })?;
    println!(
        "verify: {} samples, input violations {}, bound violations {}, invariance failures {}",
        r.n_samples, r.input_violations, r.error_violations, r.invariance_failures
    );
    Ok(if r.passed() { EXIT_OK } else { EXIT_CERT_FAILED })
}

fn cmd_simulate(run: &mut Run) -> Result<i32> {
    let prob = run.cfg.load_problem()?;
    let c = run.constants(&prob)?;
    let policy = load_policy(run, &prob)?;
    let target = target_of(&run.cfg, &c)?;
    let s = &run.cfg.samples;
    let x0s = pipeline::sample_states(&prob, &c, s.rollouts, run.cfg.seeds.rollouts, Domain::Invariant)?.states;
    let runs = verify::simulate_many(&prob, &policy, &x0s, s.steps, &target, s.tail)?;
    let summary = RolloutSummary::from_runs(&runs, s.steps, target);
    let path = run.track(run.path("trajectories.csv"));
    verify::write_trajectories(&path, &runs.iter().map(|r| &r.0).collect::<Vec<_>>())?;
    #[derive(Serialize)]
    struct Out<'a> {
        passed: bool,
        summary: &'a RolloutSummary,
        metrics: Vec<&'a verify::Metrics>,
    }
    run.write_json(
        "simulate.json",
        &Out {
            passed: summary.passed(),
            summary: &summary,
            metrics: runs.iter().map(|r| &r.1).collect(),
        },
    )?;
    println!(
        "simulate: {}/{} rollouts entered the target and stayed, {} violations",
        summary.entered_and_stayed, summary.n_rollouts, summary.total_violations
    );
    Ok(if summary.passed() { EXIT_OK } else { EXIT_CERT_FAILED })
}

fn cmd_report(run: &mut Run) -> Result<i32> {
    let mut rows: Vec<(String, String, String)> = Vec::new();
    let mut any = false;
    let mut read = |run: &mut Run, file: &str| -> Result<Option<serde_json::Value>> {
        let p = run.path(file);
        if !p.exists() {
            return Ok(None);
        }
        run.inputs.push(p.clone());
        any = true;
        Ok(Some(serde_json::from_str(&fs::read_to_string(&p)?)?))
    };
    let num = |v: &serde_json::Value| match v {
        serde_json::Value::Number(n) => format!("{}", n),
        other => other.to_string(),
    };
    if let Some(c) = read(run, "constants.json")? {
        for k in ["c0", "c1", "c2", "c3", "c6", "c7", "c8", "gamma", "L_u", "delta_bar"] {
            rows.push(("constants".into(), k.into(), num(&c[k]["value"])));
        }
    }
    if let Some(b) = read(run, "bounds.json")? {
        rows.push(("bounds".into(), "log10_rhs".into(), num(&b["frontier_rhs"]["log10"])));
        if let Some(t) = b.get("theorem1").filter(|t| !t.is_null()) {
            rows.push(("bounds".into(), "theorem1_log10_rhs".into(), num(&t["log10"])));
        }
    }
    if let Some(t) = read(run, "train.json")? {
        for k in ["param_count", "best_val_mse", "sup_error", "eps", "sup_error_within_eps"] {
            rows.push(("train".into(), k.into(), num(&t[k])));
        }
    }
    if let Some(v) = read(run, "verify.json")? {
        rows.push(("verify".into(), "passed".into(), num(&v["passed"])));
        for k in ["n_samples", "input_violations", "error_violations", "invariance_failures", "max_error"] {
            rows.push(("verify".into(), k.into(), num(&v["report"][k])));
        }
    }
    if let Some(s) = read(run, "simulate.json")? {
        rows.push(("simulate".into(), "passed".into(), num(&s["passed"])));
        for k in ["n_rollouts", "entered_and_stayed", "max_time_to_entry", "median_tail_mean_state_norm", "total_violations"] {
            rows.push(("simulate".into(), k.into(), num(&s["summary"][k])));
        }
    }
    if !any {
        return Err(Error::Validation(format!("no reports found in {}", run.cfg.output_dir.display())));
    }
    let mut csv_text = String::from("section,key,value\n");
    let w = rows.iter().map(|r| r.0.len() + r.1.len() + 1).max().unwrap_or(0);
    for (sec, key, val) in &rows {
        csv_text.push_str(&format!("{sec},{key},{val}\n"));
        println!("{:<w$}  {val}", format!("{sec}.{key}"));
    }
    run.write("report.csv", &csv_text)?;
    Ok(EXIT_OK)
}
