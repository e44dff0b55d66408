//! Command-line front end. Every command writes CSV tables and JSON reports;
//! with `--out-dir` they go to files next to a `manifest.json`, otherwise to
//! stdout.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::Analysis;
use crate::distributions::{splus_tail_asymptotic, CorrectionPrefactor, MnOptions, TailSource};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::ladder::{LadderFamily, DEFAULT_TOL};
use crate::linalg::Vector;
use crate::model::{estimate_from_sequence, validate_model, CheckStatus, ScoreModel};
use crate::montecarlo::{
    empirical_ladder_epochs, empirical_mn, empirical_q1, empirical_splus, SimStatistic, SimulationConfig,
    SimulationReport, StartMode, GENERATOR,
};
use crate::spectral::{check_rho_prime_zero, rho_grid};

pub const THREADS_ENV: &str = "SEGSCORE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "segscore", version, about = "Score distributions for Markovian sequences")]
pub struct Cli {
    /// Write outputs and manifest.json into this directory instead of stdout.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// Worker threads for simulation (default: $SEGSCORE_THREADS or all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a model file against the hypotheses.
    Validate(ModelArg),
    /// θ*, u(θ*) and a ρ(θ) grid.
    Spectral(SpectralArgs),
    /// Ladder matrices and the constants c, c(∞), A*.
    Ladders(LaddersArgs),
    /// Exact cdf of S⁺ and its exponential tail.
    Splus(LevelArgs),
    /// Tail approximation of the first-excursion height Q₁.
    Q1(Q1Args),
    /// Local-score cdf approximation and Karlin-Dembo baseline.
    Mn(MnArgs),
    /// Monte Carlo estimates.
    Simulate(SimulateArgs),
    /// Analytic results joined with Monte Carlo estimates.
    Compare(CompareArgs),
    /// p-values of an observed local score.
    Pvalue(PvalueArgs),
    /// Fit a transition matrix from a sequence.
    Estimate(EstimateArgs),
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Model JSON file, or a bundled model name (dna, iid_pm1).
    pub model: String,
}

#[derive(Debug, Args)]
pub struct SpectralArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub theta_min: Option<f64>,
    #[arg(long)]
    pub theta_max: Option<f64>,
    #[arg(long, default_value_t = 41)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct LaddersArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct LevelArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Largest lattice level.
    #[arg(long, default_value_t = 30)]
    pub max_level: i64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TailArg {
    Exact,
    Asymptotic,
}

impl From<TailArg> for TailSource {
    fn from(t: TailArg) -> Self {
        match t {
            TailArg::Exact => TailSource::Exact,
            TailArg::Asymptotic => TailSource::Asymptotic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrefactorArg {
    Statement,
    ProofDisplay,
}

impl From<PrefactorArg> for CorrectionPrefactor {
    fn from(p: PrefactorArg) -> Self {
        match p {
            PrefactorArg::Statement => CorrectionPrefactor::Statement,
            PrefactorArg::ProofDisplay => CorrectionPrefactor::ProofDisplay,
        }
    }
}

#[derive(Debug, Args)]
pub struct Q1Args {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 30)]
    pub max_level: i64,
    #[arg(long, value_enum, default_value_t = TailArg::Exact)]
    pub tail: TailArg,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    pub x_min: f64,
    #[arg(long, default_value_t = 6.0, allow_hyphen_values = true)]
    pub x_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub x_step: f64,
}

impl GridArgs {
    fn points(&self) -> Result<Vec<f64>> {
        if !(self.x_step > 0.0) || !(self.x_max >= self.x_min) || !self.x_min.is_finite() || !self.x_max.is_finite() {
            return Err(Error::Input(format!(
                "invalid x-grid [{}, {}] step {}",
                self.x_min, self.x_max, self.x_step
            )));
        }
        let count = ((self.x_max - self.x_min) / self.x_step + 1e-9).floor() as usize;
        if count > 1_000_000 {
            return Err(Error::Input("x-grid has more than 10^6 points".into()));
        }
        Ok((0..=count).map(|i| self.x_min + i as f64 * self.x_step).collect())
    }
}

#[derive(Debug, Args)]
pub struct MnArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub n: u64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value_t = TailArg::Exact)]
    pub tail: TailArg,
    #[arg(long, value_enum, default_value_t = PrefactorArg::Statement)]
    pub prefactor: PrefactorArg,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum What {
    Splus,
    Q1,
    Mn,
    Ladder,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, value_enum)]
    pub what: What,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 100_000)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Start state label, or `pi` for the stationary law.
    #[arg(long)]
    pub start: Option<String>,
    /// Largest level for S⁺ and Q₁ tables.
    #[arg(long, default_value_t = 30)]
    pub max_level: i64,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value_t = What::Splus)]
    pub what: What,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 100_000)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub start: Option<String>,
    #[arg(long, default_value_t = 30)]
    pub max_level: i64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value_t = PrefactorArg::Statement)]
    pub prefactor: PrefactorArg,
}

#[derive(Debug, Args)]
pub struct PvalueArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub n: u64,
    #[arg(long)]
    pub score: i64,
    #[arg(long, value_enum, default_value_t = TailArg::Exact)]
    pub tail: TailArg,
    #[arg(long, value_enum, default_value_t = PrefactorArg::Statement)]
    pub prefactor: PrefactorArg,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Sequence file: whitespace-separated symbols, or one symbol per character.
    pub sequence: PathBuf,
    /// Scores as `SYMBOL=SCORE` pairs separated by commas, e.g. `A=-1,C=-1,G=0,T=1`.
    pub scores: String,
    #[arg(long, default_value_t = 0.0)]
    pub pseudocount: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: Value,
    pub model_hash: Option<String>,
    pub tool_version: &'static str,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
}

struct Artifact {
    name: String,
    body: String,
}

/// Collected outputs of one command.
struct Run {
    command: &'static str,
    parameters: Value,
    model_hash: Option<String>,
    seeds: Vec<u64>,
    artifacts: Vec<Artifact>,
}

impl Run {
    fn new(command: &'static str, parameters: Value) -> Self {
        Self {
            command,
            parameters,
            model_hash: None,
            seeds: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, body: String) {
        self.artifacts.push(Artifact {
            name: name.to_string(),
            body,
        });
    }

    fn add_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.add(name, body);
        Ok(())
    }

    fn finish(self, out_dir: Option<&Path>, started: Instant) -> Result<()> {
        match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let mut outputs = Vec::new();
                for a in &self.artifacts {
                    let path = dir.join(&a.name);
                    fs::write(&path, &a.body)?;
                    outputs.push(path.display().to_string());
                }
                let manifest = RunManifest {
                    command: self.command.to_string(),
                    parameters: self.parameters,
                    model_hash: self.model_hash,
                    tool_version: env!("CARGO_PKG_VERSION"),
                    seeds: self.seeds,
                    outputs,
                    wall_time_secs: started.elapsed().as_secs_f64(),
                };
                let path = dir.join("manifest.json");
                fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
                println!("{}", path.display());
            }
            None => {
                let many = self.artifacts.len() > 1;
                for a in &self.artifacts {
                    if many {
                        println!("# {}", a.name);
                    }
                    print!("{}", a.body);
                }
            }
        }
        Ok(())
    }
}

/// CSV rendering with the header given up front.
struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new<S: AsRef<str>>(header: &[S]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header.iter().map(|s| s.as_ref()))?;
        Ok(Self { writer })
    }

    fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<()> {
        self.writer.write_record(fields.iter().map(|s| s.as_ref()))?;
        Ok(())
    }

    fn finish(self) -> Result<String> {
        let bytes = self
            .writer
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub fn load_model(spec: &str) -> Result<ScoreModel> {
    let path = Path::new(spec);
    if path.exists() {
        return ScoreModel::load(path);
    }
    fixtures::by_name(spec).ok_or_else(|| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{spec}: no such file and not a bundled model (dna, iid_pm1)"),
        ))
    })
}

fn parse_start(model: &ScoreModel, start: Option<&str>, default: StartMode) -> Result<StartMode> {
    match start {
        None => Ok(default),
        Some("pi") => Ok(StartMode::Stationary),
        Some(label) => model
            .state_index(label)
            .map(StartMode::State)
            .ok_or_else(|| Error::Input(format!("unknown start state {label:?}"))),
    }
}

fn start_label(model: &ScoreModel, start: StartMode) -> String {
    match start {
        StartMode::State(s) => model.alphabet()[s].clone(),
        StartMode::Stationary => "pi".into(),
    }
}

/// Default start: first state for S⁺ and Q₁ (the DNA reproduction starts in
/// `A`), stationary otherwise.
fn default_start(what: What) -> StartMode {
    match what {
        What::Splus | What::Q1 => StartMode::State(0),
        What::Mn | What::Ladder => StartMode::Stationary,
    }
}

fn labelled(model: &ScoreModel, v: &Vector) -> Value {
    model.alphabet().iter().zip(v.iter()).map(|(a, x)| (a.clone(), json!(x))).collect::<serde_json::Map<_, _>>().into()
}

fn family_csv(model: &ScoreModel, family: &LadderFamily, lattice_step: i64) -> Result<String> {
    let mut t = Table::new(&["level", "from", "to", "value"])?;
    let labels = model.alphabet();
    for (level, m) in family.iter() {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                t.row(&[(level * lattice_step).to_string(), labels[i].clone(), labels[j].clone(), num(m[(i, j)])])?;
            }
        }
    }
    t.finish()
}

fn report_csv(report: &SimulationReport) -> Result<String> {
    let mut t = Table::new(&["level", "estimate", "se"])?;
    for i in 0..report.levels.len() {
        t.row(&[num(report.levels[i]), num(report.values[i]), num(report.standard_errors[i])])?;
    }
    t.finish()
}

fn report_json(report: &SimulationReport) -> Value {
    json!({
        "estimate": report.estimate,
        "replicates": report.replicates,
        "discarded": report.discarded,
        "config": report.config,
        "generator": report.generator,
        "wall_time_secs": report.wall_time_secs,
    })
}

fn sim_config(model: &ScoreModel, stat: SimStatistic, n: usize, reps: usize, seed: u64, start: StartMode, threads: Option<usize>) -> SimulationConfig {
    let mut cfg = SimulationConfig::new(model, stat, n, reps, seed, start);
    cfg.threads = threads;
    cfg
}

/// Parses `A=-1,C=-1,G=0,T=1` into an alphabet and its scores.
pub fn parse_scores(spec: &str) -> Result<(Vec<String>, Vec<i64>)> {
    let mut alphabet = Vec::new();
    let mut scores = Vec::new();
    for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (sym, score) = pair
            .rsplit_once(['=', ':'])
            .ok_or_else(|| Error::Input(format!("score entry {pair:?} is not SYMBOL=SCORE")))?;
        let score: i64 = score
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("score {score:?} is not an integer")))?;
        alphabet.push(sym.trim().to_string());
        scores.push(score);
    }
    if alphabet.is_empty() {
        return Err(Error::Input("no scores given".into()));
    }
    Ok((alphabet, scores))
}

/// Whitespace-separated tokens if they are all symbols, else one symbol per character.
fn read_sequence(text: &str, alphabet: &[String]) -> Vec<String> {
    let tokens: Vec<String> = text.split_whitespace().map(String::from).collect();
    if tokens.len() > 1 && tokens.iter().all(|t| alphabet.contains(t)) {
        tokens
    } else {
        text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
    }
}

/// Thread count from the flag or the environment.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(t) = flag {
        return if t == 0 { Err(Error::Input("--threads must be >= 1".into())) } else { Ok(Some(t)) };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .map(Some)
            .ok_or_else(|| Error::Input(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let started = Instant::now();
    let threads = resolve_threads(cli.threads)?;
    let out_dir = cli.out_dir.as_deref();
    let mut exit = 0;
    let run = match cli.command {
        Command::Validate(a) => {
            let model = load_model(&a.model)?;
            let report = validate_model(&model);
            if !report.passed {
                exit = 2;
            }
            let mut run = Run::new("validate", json!({ "model": a.model }));
            run.model_hash = Some(model.hash());
            let checks: Vec<Value> = report
                .checks
                .iter()
                .map(|c| {
                    json!({
                        "name": c.name,
                        "status": match c.status { CheckStatus::Pass => "pass", CheckStatus::Fail => "fail", CheckStatus::Warn => "warn" },
                        "value": c.value,
                        "detail": c.detail,
                    })
                })
                .collect();
            run.add_json("validation.json", &json!({ "passed": report.passed, "checks": checks, "warnings": report.warnings }))?;
            run
        }
        Command::Spectral(a) => {
            let model = load_model(&a.model.model)?;
            let analysis = Analysis::new(model)?;
            let s = &analysis.spectral;
            let theta_min = a.theta_min.unwrap_or(0.0);
            let theta_max = a.theta_max.unwrap_or(2.0 * s.theta_star);
            let grid = rho_grid(&analysis.model, theta_min, theta_max, a.points)?;
            let (fd, mean) = check_rho_prime_zero(&analysis.model)?;
            let mut run = Run::new(
                "spectral",
                json!({ "model": a.model.model, "theta_min": theta_min, "theta_max": theta_max, "points": a.points }),
            );
            run.model_hash = Some(analysis.model.hash());
            run.add_json(
                "spectral.json",
                &json!({
                    "theta_star": s.theta_star,
                    "theta_lattice": s.theta_lattice,
                    "lattice_step": analysis.model.lattice_step(),
                    "u_star": labelled(&analysis.model, &s.u_star),
                    "rho_at_root": s.diagnostics.rho_at_root,
                    "eigen_residual": s.diagnostics.eigen_residual,
                    "bracket": s.diagnostics.bracket,
                    "iterations": s.diagnostics.iterations,
                    "rho_prime_zero_fd": fd,
                    "mean_score": mean,
                }),
            )?;
            let mut t = Table::new(&["theta", "rho"])?;
            for (theta, rho) in grid {
                t.row(&[num(theta), num(rho)])?;
            }
            run.add("rho_grid.csv", t.finish()?);
            run
        }
        Command::Ladders(a) => {
            let model = load_model(&a.model.model)?;
            let analysis = Analysis::with_tol(model, a.tol)?;
            let (m, l) = (&analysis.model, &analysis.ladders);
            let mut run = Run::new("ladders", json!({ "model": a.model.model, "tol": a.tol }));
            run.model_hash = Some(m.hash());
            run.add_json(
                "ladders.json",
                &json!({
                    "theta_star": analysis.spectral.theta_star,
                    "lattice_step": l.lattice_step,
                    "c": l.c,
                    "c_inf": l.c_inf,
                    "c_inf_alternative": l.c_inf_alternative,
                    "a_star": l.a_star,
                    "mean_score": l.mean_score,
                    "l_inf": labelled(m, &l.l_inf),
                    "z": labelled(m, &l.z),
                    "w": labelled(m, &l.w),
                    "expected_descent": labelled(m, &l.expected_descent),
                    "g_row_sum_deviation": l.g_row_sum_deviation(),
                    "z_residual": l.z_residual(),
                    "w_residual": l.w_residual(),
                    "q_sweeps": l.q_stats.sweeps,
                    "q_last_change": l.q_stats.last_change,
                    "l_sweeps": l.l_stats.sweeps,
                    "l_last_change": l.l_stats.last_change,
                }),
            )?;
            let d = l.lattice_step;
            run.add("q_ladders.csv", family_csv(m, &l.q, d)?);
            run.add("l_ladders.csv", family_csv(m, &l.l, d)?);
            run.add("g_ladders.csv", family_csv(m, &l.g, d)?);
            run
        }
        Command::Splus(a) => {
            let model = load_model(&a.model.model)?;
            let analysis = Analysis::new(model)?;
            let exact = analysis.splus(a.max_level)?;
            let labels = analysis.model.alphabet();
            let mut run = Run::new("splus", json!({ "model": a.model.model, "max_level": a.max_level }));
            run.model_hash = Some(analysis.model.hash());

            let mut header = vec!["level".to_string()];
            header.extend(labels.iter().cloned());
            header.push("mixture".into());
            let mut cdf = Table::new(&header)?;
            let mixture = exact.cdf.mixture(&analysis.stationary);
            for (i, level) in exact.cdf.levels.iter().enumerate() {
                let mut row = vec![level.to_string()];
                row.extend((0..labels.len()).map(|s| num(exact.cdf.value(s, i))));
                row.push(num(mixture[i]));
                cdf.row(&row)?;
            }
            run.add("splus_cdf.csv", cdf.finish()?);

            let mut header = vec!["level".to_string()];
            header.extend(labels.iter().map(|s| format!("exact_{s}")));
            header.extend(labels.iter().map(|s| format!("asymptotic_{s}")));
            let mut tail = Table::new(&header)?;
            for (i, level) in exact.tail.levels.iter().enumerate() {
                let asym = splus_tail_asymptotic(&analysis.spectral, &analysis.ladders, i as i64);
                let mut row = vec![level.to_string()];
                row.extend((0..labels.len()).map(|s| num(exact.tail.value(s, i))));
                row.extend(asym.iter().map(|&x| num(x)));
                tail.row(&row)?;
            }
            run.add("splus_tail.csv", tail.finish()?);
            run.add_json(
                "splus.json",
                &json!({
                    "c_inf": analysis.ladders.c_inf,
                    "theta_star": analysis.spectral.theta_star,
                    "truncation_level": a.max_level,
                    "truncation_tail_bound": analysis.tail_bound(a.max_level),
                }),
            )?;
            run
        }
        Command::Q1(a) => {
            let model = load_model(&a.model.model)?;
            let analysis = Analysis::new(model)?;
            let table = analysis.q1_tail(a.max_level, a.tail.into())?;
            let labels = analysis.model.alphabet();
            let mut run = Run::new(
                "q1",
                json!({ "model": a.model.model, "max_level": a.max_level, "tail": format!("{:?}", a.tail).to_lowercase() }),
            );
            run.model_hash = Some(analysis.model.hash());
            let mut header = vec!["level".to_string()];
            header.extend(labels.iter().cloned());
            header.push("mixture".into());
            let mut t = Table::new(&header)?;
            let mixture = table.mixture(&analysis.stationary);
            for (i, level) in table.levels.iter().enumerate() {
                let mut row = vec![level.to_string()];
                row.extend((0..labels.len()).map(|s| num(table.value(s, i))));
                row.push(num(mixture[i]));
                t.row(&row)?;
            }
            run.add("q1_tail.csv", t.finish()?);
            run.add_json("q1.json", &table.metadata)?;
            run
        }
        Command::Mn(a) => {
            let model = load_model(&a.model.model)?;
            let analysis = Analysis::new(model)?;
            let xs = a.grid.points()?;
            let options = MnOptions {
                tail_source: a.tail.into(),
                prefactor: a.prefactor.into(),
            };
            let curve = analysis.mn_curve(a.n, &xs, options)?;
            let mut run = Run::new(
                "mn",
                json!({ "model": a.model.model, "n": a.n, "x_min": a.grid.x_min, "x_max": a.grid.x_max, "x_step": a.grid.x_step, "options": options }),
            );
            run.model_hash = Some(analysis.model.hash());
            let kd = curve.points.first().is_some_and(|p| p.kd.is_some());
            let mut header = vec!["x", "threshold", "level", "improved"];
            if kd {
                header.push("kd");
            }
            let mut t = Table::new(&header)?;
            for p in &curve.points {
                let mut row = vec![num(p.x), num(p.threshold), (p.level * analysis.model.lattice_step()).to_string(), num(p.improved)];
                if let Some(k) = p.kd {
                    row.push(num(k));
                }
                t.row(&row)?;
            }
            run.add("mn.csv", t.finish()?);
            run.add_json(
                "mn.json",
                &json!({
                    "a_star": analysis.ladders.a_star,
                    "kd_constant": analysis.kd_constant().ok(),
                    "clamped": curve.clamped,
                    "warnings": curve.warnings,
                    "truncation_level": curve.truncation_level,
                    "truncation_tail_bound": curve.truncation_tail_bound,
                }),
            )?;
            for w in &curve.warnings {
                eprintln!("warning: {w}");
            }
            run
        }
        Command::Simulate(a) => {
            let model = load_model(&a.model.model)?;
            let start = parse_start(&model, a.start.as_deref(), default_start(a.what))?;
            let mut run = Run::new(
                "simulate",
                json!({
                    "model": a.model.model, "what": a.what, "n": a.n, "reps": a.reps, "seed": a.seed,
                    "start": start_label(&model, start), "max_level": a.max_level,
                    "x_min": a.grid.x_min, "x_max": a.grid.x_max, "x_step": a.grid.x_step,
                    "generator": GENERATOR,
                }),
            );
            run.model_hash = Some(model.hash());
            run.seeds.push(a.seed);
            let levels: Vec<i64> = (0..=a.max_level.max(0)).map(|l| l * model.lattice_step()).collect();
            let report = match a.what {
                What::Splus => Some(empirical_splus(&model, &sim_config(&model, SimStatistic::SPlus, a.n, a.reps, a.seed, start, threads), &levels)?),
                What::Q1 => Some(empirical_q1(&model, &sim_config(&model, SimStatistic::Q1, a.n, a.reps, a.seed, start, threads), &levels)?),
                What::Mn => {
                    let analysis = Analysis::new(model.clone())?;
                    let log_n = (a.n as f64).ln() / analysis.spectral.theta_star;
                    let thresholds: Vec<f64> = a.grid.points()?.iter().map(|x| log_n + x).collect();
                    Some(empirical_mn(&model, &sim_config(&model, SimStatistic::Mn, a.n, a.reps, a.seed, start, threads), &thresholds)?)
                }
                What::Ladder => {
                    let e = empirical_ladder_epochs(&model, a.reps, a.seed, start)?;
                    run.add_json("ladder_epochs.json", &e)?;
                    None
                }
            };
            if let Some(r) = report {
                run.add("simulation.csv", report_csv(&r)?);
                run.add_json("simulation.json", &report_json(&r))?;
            }
            run
        }
        Command::Compare(a) => compare(a, threads)?,
        Command::Pvalue(a) => {
            let model = load_model(&a.model.model)?;
            let analysis = Analysis::new(model)?;
            let options = MnOptions {
                tail_source: a.tail.into(),
                prefactor: a.prefactor.into(),
            };
            let p = analysis.pvalue(a.n, a.score, options)?;
            let mut run = Run::new("pvalue", json!({ "model": a.model.model, "n": a.n, "score": a.score, "options": options }));
            run.model_hash = Some(analysis.model.hash());
            run.add_json("pvalue.json", &p)?;
            run
        }
        Command::Estimate(a) => {
            let (alphabet, scores) = parse_scores(&a.scores)?;
            let text = fs::read_to_string(&a.sequence)?;
            let sequence = read_sequence(&text, &alphabet);
            let p = estimate_from_sequence(&sequence, &alphabet, a.pseudocount)?;
            let rows = (0..p.nrows()).map(|i| p.row(i).iter().copied().collect()).collect();
            let model = ScoreModel::new(alphabet, rows, scores)?;
            let mut run = Run::new(
                "estimate",
                json!({ "sequence": a.sequence.display().to_string(), "scores": a.scores, "pseudocount": a.pseudocount }),
            );
            run.model_hash = Some(model.hash());
            run.add("model.json", model.to_file().to_json() + "\n");
            let report = validate_model(&model);
            for c in report.failures() {
                eprintln!("warning: estimated model fails {}: {}", c.name, c.detail);
            }
            run
        }
    };
    run.finish(out_dir, started)?;
    Ok(exit)
}

fn compare(a: CompareArgs, threads: Option<usize>) -> Result<Run> {
    let model = load_model(&a.model.model)?;
    let analysis = Analysis::new(model)?;
    let model = &analysis.model;
    let start = parse_start(model, a.start.as_deref(), default_start(a.what))?;
    let mut run = Run::new(
        "compare",
        json!({
            "model": a.model.model, "what": a.what, "n": a.n, "reps": a.reps, "seed": a.seed,
            "start": start_label(model, start), "max_level": a.max_level,
            "x_min": a.grid.x_min, "x_max": a.grid.x_max, "x_step": a.grid.x_step,
            "prefactor": format!("{:?}", a.prefactor).to_lowercase(), "generator": GENERATOR,
        }),
    );
    run.model_hash = Some(model.hash());
    run.seeds.push(a.seed);
    let weights = |start: StartMode| -> Vector {
        match start {
            StartMode::State(s) => Vector::from_fn(model.num_states(), |i, _| if i == s { 1.0 } else { 0.0 }),
            StartMode::Stationary => analysis.stationary.clone(),
        }
    };
    match a.what {
        What::Splus => {
            let exact = analysis.splus(a.max_level)?;
            let levels: Vec<i64> = exact.cdf.levels.clone();
            let mc = empirical_splus(model, &sim_config(model, SimStatistic::SPlus, a.n, a.reps, a.seed, start, threads), &levels)?;
            let w = weights(start);
            let cdf = exact.cdf.mixture(&w);
            let mut t = Table::new(&["level", "exact", "asymptotic", "monte_carlo", "se"])?;
            for (i, level) in levels.iter().enumerate() {
                let asym = splus_tail_asymptotic(&analysis.spectral, &analysis.ladders, i as i64).dot(&w);
                t.row(&[level.to_string(), num(cdf[i]), num(1.0 - asym), num(mc.values[i]), num(mc.standard_errors[i])])?;
            }
            run.add("compare_splus.csv", t.finish()?);
            run.add_json("simulation.json", &report_json(&mc))?;
        }
        What::Q1 => {
            let exact = analysis.q1_tail(a.max_level, TailSource::Exact)?;
            let asym = analysis.q1_tail(a.max_level, TailSource::Asymptotic)?;
            let mc = empirical_q1(model, &sim_config(model, SimStatistic::Q1, a.n, a.reps, a.seed, start, threads), &exact.levels)?;
            let w = weights(start);
            let (e, s) = (exact.mixture(&w), asym.mixture(&w));
            let mut t = Table::new(&["level", "approx", "asymptotic", "monte_carlo", "se"])?;
            for (i, level) in exact.levels.iter().enumerate() {
                t.row(&[level.to_string(), num(e[i]), num(s[i]), num(mc.values[i]), num(mc.standard_errors[i])])?;
            }
            run.add("compare_q1.csv", t.finish()?);
            run.add_json("simulation.json", &report_json(&mc))?;
        }
        What::Mn => {
            let xs = a.grid.points()?;
            let options = MnOptions {
                prefactor: a.prefactor.into(),
                ..Default::default()
            };
            let curve = analysis.mn_curve(a.n as u64, &xs, options)?;
            let thresholds: Vec<f64> = curve.points.iter().map(|p| p.threshold).collect();
            let mc = empirical_mn(model, &sim_config(model, SimStatistic::Mn, a.n, a.reps, a.seed, start, threads), &thresholds)?;
            let kd = curve.points.first().is_some_and(|p| p.kd.is_some());
            let mut header = vec!["x", "improved"];
            if kd {
                header.push("kd");
            }
            header.extend(["monte_carlo", "se"]);
            let mut t = Table::new(&header)?;
            for (i, p) in curve.points.iter().enumerate() {
                let mut row = vec![num(p.x), num(p.improved)];
                if let Some(k) = p.kd {
                    row.push(num(k));
                }
                row.extend([num(mc.values[i]), num(mc.standard_errors[i])]);
                t.row(&row)?;
            }
            run.add("compare_mn.csv", t.finish()?);
            run.add_json("simulation.json", &report_json(&mc))?;
        }
        What::Ladder => {
            let e = empirical_ladder_epochs(model, a.reps, a.seed, start)?;
            run.add_json(
                "compare_ladder.json",
                &json!({ "a_star": analysis.ladders.a_star, "monte_carlo": e }),
            )?;
        }
    }
    Ok(run)
}
