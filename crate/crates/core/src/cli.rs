//! The `soed` command-line front end.
//!
//! Every command reads a JSON [`RunConfig`]; `--seed`, `--engine` and `--out`
//! override the corresponding config entries. Relative paths inside a config
//! are resolved against the config file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::fv::fv_solve;
use crate::models::linear_gaussian;
use crate::models::surrogate::{train_surrogate, SurrogateConfig, SurrogateModel};
use crate::models::{CaseConfig, Engine, Profile, SourceModel};
use crate::nnet::Checkpoint;
use crate::problem::{GridResolution, ProblemSpec};
use crate::rng::{substream, Stream};
use crate::soed::{evaluate_policy, train, DesignMode, Evaluation, Histogram, Policy, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "soed", version, about = "Train and evaluate sequential experimental design policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs everything serially.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub engine: Option<Engine>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy, then evaluate it.
    Train(CommonArgs),
    /// Evaluate a saved policy checkpoint.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluation episodes; defaults to the config's `eval_episodes`.
        #[arg(short = 'n', long)]
        episodes: Option<usize>,
    },
    /// Tabulate mean ± SE of several reports and their pairwise differences.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a solver dataset and fit the concentration surrogate.
    Surrogate(CommonArgs),
    /// Write finite-volume concentration fields at the experiment times.
    FvDump {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated θ.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSelector {
    /// `linear_gaussian` or `source_case{1,2,3}`.
    Builtin(String),
    /// A source-inversion case file.
    Custom { custom: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub problem: ProblemSelector,
    #[serde(default = "desk")]
    pub profile: Profile,
    #[serde(default)]
    pub mode: DesignMode,
    /// Overrides applied on top of the problem's preset training settings.
    #[serde(default)]
    pub train: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub grid: Option<GridResolution>,
    #[serde(default)]
    pub engine: Option<Engine>,
    /// Saved surrogate used by `engine: surrogate`.
    #[serde(default)]
    pub surrogate_model: Option<PathBuf>,
    /// Settings for the `surrogate` command.
    #[serde(default)]
    pub surrogate: Option<SurrogateConfig>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn desk() -> Profile {
    Profile::Desk
}

fn default_eval_episodes() -> usize {
    10_000
}

impl RunConfig {
    /// Parses and checks a config; relative paths become absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let ProblemSelector::Custom { custom } = &mut cfg.problem {
            resolve(custom);
        }
        if let Some(p) = &mut cfg.surrogate_model {
            resolve(p);
        }
        if let Some(p) = &mut cfg.out_dir {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        match &self.problem {
            ProblemSelector::Builtin(name) => {
                if name != "linear_gaussian" && CaseConfig::builtin(name, self.profile).is_none() {
                    return Err(Error::Config(format!("problem: unknown builtin `{name}`")));
                }
            }
            ProblemSelector::Custom { custom } => {
                if !custom.is_file() {
                    return Err(Error::Config(format!("problem: {} does not exist", custom.display())));
                }
            }
        }
        if let Some(p) = &self.surrogate_model {
            if !p.is_file() {
                return Err(Error::Config(format!("surrogate_model: {} does not exist", p.display())));
            }
        }
        for key in ["seed", "mode"] {
            if self.train.contains_key(key) {
                return Err(Error::Config(format!("train.{key}: set `{key}` at the top level")));
            }
        }
        self.train_config()?;
        Ok(())
    }

    fn is_linear_gaussian(&self) -> bool {
        matches!(&self.problem, ProblemSelector::Builtin(n) if n == "linear_gaussian")
    }

    /// Preset for the problem with the `train` overrides, mode and seed applied.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let preset = if self.is_linear_gaussian() {
            TrainConfig::benchmark()
        } else {
            TrainConfig::source()
        };
        let mut value = serde_json::to_value(preset)?;
        let obj = value.as_object_mut().expect("struct serializes to an object");
        for (k, v) in &self.train {
            obj.insert(k.clone(), v.clone());
        }
        let mut cfg: TrainConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("train: {e}")))?;
        cfg.seed = self.seed;
        cfg.mode = self.mode;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Source-inversion case, or `None` for the linear-Gaussian benchmark.
    pub fn case(&self) -> Result<Option<CaseConfig>> {
        let mut case = match &self.problem {
            ProblemSelector::Builtin(n) if n == "linear_gaussian" => return Ok(None),
            ProblemSelector::Builtin(n) => CaseConfig::builtin(n, self.profile)
                .ok_or_else(|| Error::Config(format!("problem: unknown builtin `{n}`")))?,
            ProblemSelector::Custom { custom } => CaseConfig::load(custom)?,
        };
        if let Some(g) = &self.grid {
            case.grid = g.clone();
        }
        case.validate()?;
        Ok(Some(case))
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let Some(case) = self.case()? else {
            if matches!(self.engine, Some(e) if e != Engine::Fv) {
                return Err(Error::Config("engine: the linear-Gaussian problem has no solver engine".into()));
            }
            let mut p = linear_gaussian::benchmark();
            if let Some(g) = &self.grid {
                p.grid = g.clone();
            }
            return Ok(p);
        };
        match self.engine.unwrap_or(Engine::Tabulated) {
            Engine::Surrogate => {
                let path = self.surrogate_model.as_ref().ok_or_else(|| {
                    Error::Config("surrogate_model: required by the surrogate engine".into())
                })?;
                let sur = Arc::new(SurrogateModel::load(path)?);
                case.problem_with_model(Arc::new(SourceModel::with_surrogate(case.clone(), sur)?))
            }
            engine => case.problem(engine),
        }
    }

    fn apply(&mut self, args: &CommonArgs) {
        if let Some(s) = args.seed {
            self.seed = s;
        }
        if let Some(e) = args.engine {
            self.engine = Some(e);
        }
        if let Some(o) = &args.out {
            self.out_dir = Some(o.clone());
        }
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out_dir.clone().unwrap_or_else(|| PathBuf::from("soed-out"));
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub problem: String,
    pub mode: DesignMode,
    pub engine: Option<Engine>,
    pub seed: u64,
    pub n_eval: usize,
    pub mean: f64,
    pub standard_error: f64,
    pub histogram: Histogram,
    /// Batch mode only: every episode used the same design at each stage.
    pub batch_designs_identical: Option<bool>,
    pub trace_path: Option<PathBuf>,
    pub episodes_path: PathBuf,
    pub histogram_path: PathBuf,
    pub checkpoint_paths: Vec<PathBuf>,
    pub timings: Timings,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// True when all episodes share bitwise-identical designs at every stage.
pub fn designs_identical(eval: &Evaluation) -> bool {
    let Some(first) = eval.episodes.first() else {
        return true;
    };
    eval.episodes.iter().all(|e| {
        (0..e.horizon()).all(|k| {
            e.design(k)
                .iter()
                .zip(first.design(k))
                .all(|(a, b)| a.to_bits() == b.to_bits())
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub label: String,
    pub problem: String,
    pub mode: DesignMode,
    pub n_eval: usize,
    pub mean: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDifference {
    pub a: String,
    pub b: String,
    /// `mean_a − mean_b`
    pub difference: f64,
    /// `sqrt(se_a² + se_b²)`
    pub combined_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub entries: Vec<ComparisonEntry>,
    pub pairwise: Vec<PairwiseDifference>,
}

impl Comparison {
    pub fn from_reports(reports: &[(String, RunReport)]) -> Self {
        let entries: Vec<ComparisonEntry> = reports
            .iter()
            .map(|(label, r)| ComparisonEntry {
                label: label.clone(),
                problem: r.problem.clone(),
                mode: r.mode,
                n_eval: r.n_eval,
                mean: r.mean,
                standard_error: r.standard_error,
            })
            .collect();
        let mut pairwise = Vec::new();
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                pairwise.push(PairwiseDifference {
                    a: a.label.clone(),
                    b: b.label.clone(),
                    difference: a.mean - b.mean,
                    combined_se: a.standard_error.hypot(b.standard_error),
                });
            }
        }
        Self { entries, pairwise }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s += &format!(
                "{:<24} {:<16} {:<7} {:>9.4} ± {:.4}  (n={})\n",
                e.label, e.problem, e.mode, e.mean, e.standard_error, e.n_eval
            );
        }
        for p in &self.pairwise {
            s += &format!(
                "{} − {}: {:+.4} ± {:.4}\n",
                p.a, p.b, p.difference, p.combined_se
            );
        }
        s
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(f),
    }
}

fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(args);
    cfg.validate()?;
    Ok(cfg)
}

fn write_evaluation(
    cfg: &RunConfig,
    problem: &ProblemSpec,
    eval: &Evaluation,
    dir: &Path,
) -> Result<(PathBuf, PathBuf, Option<bool>)> {
    let episodes_path = dir.join("episodes.csv");
    let histogram_path = dir.join("histogram.csv");
    eval.write_episodes_csv(&episodes_path)?;
    eval.histogram.write_csv(&histogram_path)?;
    let identical = (cfg.mode == DesignMode::Batch).then(|| designs_identical(eval));
    if identical == Some(false) {
        return Err(Error::ModelFailure(format!(
            "{}: batch designs differ across evaluation episodes",
            problem.name
        )));
    }
    Ok((episodes_path, histogram_path, identical))
}

fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<RunReport> {
    let problem = cfg.problem()?;
    let tc = cfg.train_config()?;
    let dir = cfg.out_dir()?;
    let t0 = Instant::now();
    let out = train(&tc, &problem)?;
    let train_seconds = t0.elapsed().as_secs_f64();
    let trace_path = dir.join("trace.csv");
    out.trace.write_csv(&trace_path)?;
    let policy_path = dir.join("policy.json");
    let q_path = dir.join("q.json");
    out.policy.checkpoint().save(&policy_path)?;
    out.qnet.checkpoint().save(&q_path)?;
    let t1 = Instant::now();
    let eval = evaluate_policy(&out.policy, &problem, cfg.eval_episodes, cfg.seed)?;
    let eval_seconds = t1.elapsed().as_secs_f64();
    let (episodes_path, histogram_path, identical) = write_evaluation(cfg, &problem, &eval, &dir)?;
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        problem: problem.name.clone(),
        mode: cfg.mode,
        engine: cfg.case()?.map(|_| cfg.engine.unwrap_or(Engine::Tabulated)),
        seed: cfg.seed,
        n_eval: cfg.eval_episodes,
        mean: eval.mean,
        standard_error: eval.standard_error,
        histogram: eval.histogram,
        batch_designs_identical: identical,
        trace_path: Some(trace_path),
        episodes_path,
        histogram_path,
        checkpoint_paths: vec![policy_path, q_path],
        timings: Timings {
            train_seconds,
            eval_seconds,
        },
    };
    write_report(&report, &dir)?;
    Ok(report)
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, n: usize) -> Result<RunReport> {
    let problem = cfg.problem()?;
    let policy = Policy::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    policy.check_problem(&problem)?;
    if policy.is_batch() != (cfg.mode == DesignMode::Batch) {
        return Err(Error::Config(format!(
            "mode: checkpoint was trained {} batch mode",
            if policy.is_batch() { "in" } else { "outside" }
        )));
    }
    let dir = cfg.out_dir()?;
    let t0 = Instant::now();
    let eval = evaluate_policy(&policy, &problem, n, cfg.seed)?;
    let eval_seconds = t0.elapsed().as_secs_f64();
    let (episodes_path, histogram_path, identical) = write_evaluation(cfg, &problem, &eval, &dir)?;
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        problem: problem.name.clone(),
        mode: cfg.mode,
        engine: cfg.case()?.map(|_| cfg.engine.unwrap_or(Engine::Tabulated)),
        seed: cfg.seed,
        n_eval: n,
        mean: eval.mean,
        standard_error: eval.standard_error,
        histogram: eval.histogram,
        batch_designs_identical: identical,
        trace_path: None,
        episodes_path,
        histogram_path,
        checkpoint_paths: vec![checkpoint.to_path_buf()],
        timings: Timings {
            train_seconds: 0.0,
            eval_seconds,
        },
    };
    write_report(&report, &dir)?;
    Ok(report)
}

pub fn cmd_compare(paths: &[PathBuf]) -> Result<Comparison> {
    let reports = paths
        .iter()
        .map(|p| Ok((p.display().to_string(), RunReport::load(p)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison::from_reports(&reports))
}

pub fn cmd_surrogate(cfg: &RunConfig) -> Result<PathBuf> {
    let case = cfg
        .case()?
        .ok_or_else(|| Error::Config("problem: the surrogate needs a source-inversion case".into()))?;
    let scfg = cfg.surrogate.clone().unwrap_or_default();
    let dir = cfg.out_dir()?;
    let mut rng = substream(cfg.seed, Stream::Init, 1, 0);
    let (model, report, data) = train_surrogate(&case, &scfg, &mut rng)?;
    let model_path = dir.join("surrogate.json");
    model.save(&model_path)?;
    data.write_csv(&dir.join("surrogate_dataset.csv"))?;
    std::fs::write(dir.join("surrogate_report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(model_path)
}

pub fn cmd_fv_dump(cfg: &RunConfig, theta: &[f64]) -> Result<Vec<PathBuf>> {
    let case = cfg
        .case()?
        .ok_or_else(|| Error::Config("problem: fv-dump needs a source-inversion case".into()))?;
    if theta.len() != case.theta_dim() {
        return Err(Error::Config(format!(
            "--theta: expected {} values, got {}",
            case.theta_dim(),
            theta.len()
        )));
    }
    let dir = cfg.out_dir()?;
    let fields = fv_solve(&case.source(theta), &case.experiment_times, &case.fv_grid())?;
    let mut paths = Vec::new();
    let mut specs = Vec::new();
    for (k, f) in fields.iter().enumerate() {
        let path = dir.join(format!("field_{k}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["x", "y", "G"])?;
        for j in 0..f.ny {
            for i in 0..f.nx {
                let x = f.domain_lo + (f.i0 + i) as f64 * f.dz + 0.5 * f.dz;
                let y = f.domain_lo + (f.j0 + j) as f64 * f.dz + 0.5 * f.dz;
                w.write_record([x.to_string(), y.to_string(), f.at(i, j).to_string()])?;
            }
        }
        w.flush()?;
        specs.push(serde_json::json!({
            "file": path.file_name().map(|n| n.to_string_lossy().into_owned()),
            "time": f.time,
            "domain": [f.domain_lo, f.domain_hi],
            "dz": f.dz,
            "i0": f.i0,
            "j0": f.j0,
            "nx": f.nx,
            "ny": f.ny,
        }));
        paths.push(path);
    }
    std::fs::write(dir.join("fields.json"), serde_json::to_string_pretty(&specs)?)?;
    Ok(paths)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = load_config(&args)?;
            let r = with_threads(args.threads, || cmd_train(&cfg))?;
            println!("{}: {:.4} ± {:.4} over {} episodes", r.problem, r.mean, r.standard_error, r.n_eval);
        }
        Command::Eval {
            common,
            checkpoint,
            episodes,
        } => {
            let cfg = load_config(&common)?;
            let n = episodes.unwrap_or(cfg.eval_episodes);
            let r = with_threads(common.threads, || cmd_eval(&cfg, &checkpoint, n))?;
            println!("{}: {:.4} ± {:.4} over {} episodes", r.problem, r.mean, r.standard_error, r.n_eval);
        }
        Command::Compare { reports, out } => {
            let c = cmd_compare(&reports)?;
            print!("{}", c.table());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("comparison.json"), serde_json::to_string_pretty(&c)?)?;
            }
        }
        Command::Surrogate(args) => {
            let cfg = load_config(&args)?;
            let path = with_threads(args.threads, || cmd_surrogate(&cfg))?;
            println!("{}", path.display());
        }
        Command::FvDump { common, theta } => {
            let cfg = load_config(&common)?;
            for p in with_threads(common.threads, || cmd_fv_dump(&cfg, &theta))? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}
