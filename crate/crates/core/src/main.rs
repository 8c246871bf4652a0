use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tweedie_spatial::error::{Error, Result};
use tweedie_spatial::fixtures::{self, Fixture};
use tweedie_spatial::graph::SpatialGraph;
use tweedie_spatial::io::{self, Dataset};
use tweedie_spatial::optimizer::{fit, FitResult, PenaltyConfig, Variant};
use tweedie_spatial::replicate::{replicate, RunConfig};
use tweedie_spatial::sim::{simulate_with_effects, Allocation, PatternKind};
use tweedie_spatial::solver::SolverKind;
use tweedie_spatial::study::{
    run_study, sensitivity_study, study_effects, study_sim_config, write_sensitivity_csv, write_study_csv,
    SensitivityConfig, StudyConfig, TuningPlan,
};
use tweedie_spatial::tuning::{cross_validate, solution_path, GridAxis, GridSpec};

#[derive(Parser, Debug)]
#[command(name = "tweedie-spatial", version, about = "Penalized spatial effects for Tweedie loss models")]
#[command(args_override_self = true)]
struct Cli {
    /// Plain-text `key = value` file of default flags; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one variant at fixed penalties.
    Fit(FitArgs),
    /// Cross-validate the penalties and fit at the chosen point.
    Cv(CvArgs),
    /// Trace the regularization path of a mixed penalty.
    Path(PathArgs),
    /// Simulate a data set over a fixture or user graph.
    Simulate(SimulateArgs),
    /// Replicated simulation comparison of the variants.
    Study(StudyArgs),
    /// Replicated train/validation analysis with per-location summaries.
    Summarize(SummarizeArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Tweedie index p in (1, 2).
    #[arg(long, default_value_t = 1.5)]
    p: f64,
    /// Master seed for every random stream.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Use the block-diagonal Laplacian (requires --blocks).
    #[arg(long)]
    approx: bool,
    /// Estimate an unpenalized intercept.
    #[arg(long)]
    intercept: bool,
    /// Convergence tolerance ε; iterations stop once the squared step falls below 2ε/(λ1 + 1).
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = SolverArg::Direct)]
    solver: SolverArg,
}

impl Common {
    fn penalty(&self) -> PenaltyConfig {
        PenaltyConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            fit_intercept: self.intercept,
            solver: match self.solver {
                SolverArg::Direct => SolverKind::Direct,
                SolverArg::Cg => SolverKind::ConjugateGradient { rtol: 1e-12 },
            },
            ..PenaltyConfig::default()
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SolverArg {
    Direct,
    Cg,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Observations: location_label,y,lp_mean,phi,weight.
    #[arg(long)]
    obs: PathBuf,
    /// Adjacency: from,to.
    #[arg(long)]
    edges: PathBuf,
    /// Block membership: label,block.
    #[arg(long)]
    blocks: Option<PathBuf>,
    /// Coordinates: label,lon,lat.
    #[arg(long)]
    coords: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        io::ingest(&self.obs, &self.edges, self.blocks.as_deref(), self.coords.as_deref())
    }
}

#[derive(Args, Debug, Clone)]
struct GridArgs {
    /// log10 λ1 grid `lo:hi:n`.
    #[arg(long, default_value = "-5:0:10")]
    grid_l1: GridAxis,
    /// log10 λ2 grid `lo:hi:n`, or `zero`.
    #[arg(long, default_value = "-3:2:10")]
    grid_l2: GridAxis,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

impl GridArgs {
    fn plan(&self, penalty: PenaltyConfig) -> TuningPlan {
        TuningPlan {
            gl_lambda1: self.grid_l1,
            gl_lambda2: self.grid_l2,
            ridge_lambda1: self.grid_l1,
            folds: self.folds,
            penalty,
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "gl")]
    variant: Variant,
    #[arg(long, default_value_t = 0.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda2: f64,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value = "gl")]
    variant: Variant,
}

#[derive(Args, Debug)]
struct PathArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: Common,
    /// log10 λ sequence `lo:hi:n`, traversed from hi to lo.
    #[arg(long, default_value = "-3:4:30")]
    grid_lambda: GridAxis,
    /// Share of λ given to the ridge term; 1 gives the ridge path.
    #[arg(long, default_value_t = 0.4)]
    mix: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum FixtureArg {
    Ct,
    ThreeState,
    Counties,
}

#[derive(Args, Debug, Clone)]
struct GraphSource {
    /// Built-in map; ignored when --edges and --coords are given.
    #[arg(long, value_enum, default_value_t = FixtureArg::Ct)]
    fixture: FixtureArg,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    coords: Option<PathBuf>,
    #[arg(long)]
    blocks: Option<PathBuf>,
}

impl GraphSource {
    fn load(&self) -> Result<Fixture> {
        match (&self.edges, &self.coords) {
            (Some(e), Some(c)) => {
                let (edges, mut labels) = io::read_edges(e)?;
                let rows = io::read_coords(c)?;
                labels.extend(rows.iter().map(|r| r.0.clone()));
                let mut graph = SpatialGraph::build(&edges, labels)?;
                if let Some(b) = &self.blocks {
                    graph = graph.with_blocks(&io::read_blocks(b)?)?;
                }
                let coords = graph
                    .labels()
                    .iter()
                    .map(|l| {
                        rows.iter()
                            .find(|r| &r.0 == l)
                            .map(|r| (r.1, r.2))
                            .ok_or_else(|| Error::Invalid(format!("no coordinates for `{l}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Fixture { graph, coords })
            }
            (None, None) => Ok(match self.fixture {
                FixtureArg::Ct => fixtures::ct_like(),
                FixtureArg::ThreeState => fixtures::three_state(),
                FixtureArg::Counties => fixtures::ct_counties()?,
            }),
            _ => Err(Error::Invalid("a user graph needs both --edges and --coords".into())),
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    graph: GraphSource,
    #[arg(long, default_value_t = 1.5)]
    p: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value = "block")]
    pattern: PatternKind,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0.15)]
    zero_target: f64,
    /// Rescale dispersion by bisection even when a reference range exists.
    #[arg(long)]
    calibrate: bool,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[command(flatten)]
    graph: GraphSource,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_delimiter = ',', default_value = "block,smooth,hotspot,structured")]
    patterns: Vec<PatternKind>,
    #[arg(long, value_delimiter = ',', default_value = "0.15")]
    zero_targets: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0.6)]
    train_frac: f64,
    #[arg(long, value_delimiter = ',', default_value = "gl,ridge,mle")]
    variant: Vec<Variant>,
    #[arg(long)]
    calibrate: bool,
    /// Record per-fit wall time (outputs then differ between runs).
    #[arg(long)]
    timing: bool,
    /// Run the index-misspecification study over these true indices instead.
    #[arg(long, value_delimiter = ',')]
    true_p: Vec<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Geojson,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0.6)]
    train_frac: f64,
    #[arg(long, value_delimiter = ',', default_value = "gl,ridge,mle")]
    variant: Vec<Variant>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

/// Collects written files for the run manifest.
struct Output {
    root: PathBuf,
    files: BTreeSet<String>,
}

impl Output {
    fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf(), files: BTreeSet::new() }
    }

    fn write(&mut self, rel: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        self.files.insert(rel.to_string());
        Ok(())
    }

    fn manifest(mut self, command: &str, args: &[String], extra: serde_json::Value) -> Result<()> {
        let files: Vec<String> = self.files.iter().cloned().collect();
        let doc = json!({
            "schema": 1,
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "arguments": args,
            "intercept_update": "after each majorization-descent step",
            "seed_scheme": "ChaCha8 streams keyed by SplitMix64 folding of (master seed, stream tags)",
            "details": extra,
            "files": files,
        });
        self.write("metadata.json", |w| {
            serde_json::to_writer_pretty(&mut *w, &doc)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }
}

fn write_fit(out: &mut Output, labels: &[String], name: &str, f: &FitResult) -> Result<()> {
    out.write(&format!("fits/{name}.csv"), |w| io::write_effects(labels, &f.alpha, w))?;
    out.write(&format!("fits/{name}_trace.csv"), |w| {
        writeln!(w, "iteration,objective")?;
        for (i, v) in f.objective_trace.iter().enumerate() {
            writeln!(w, "{i},{v}")?;
        }
        Ok(())
    })
}

fn fit_details(f: &FitResult) -> serde_json::Value {
    json!({
        "variant": f.variant.to_string(),
        "lambda1": f.lambda1,
        "lambda2": f.lambda2,
        "intercept": f.intercept,
        "iterations": f.iterations,
        "converged": f.converged,
        "objective": f.final_objective(),
    })
}

fn run_fit(a: &FitArgs, args: &[String]) -> Result<()> {
    let ds = a.data.load()?;
    let w = ds.graph.laplacian(a.common.approx)?;
    let cfg = a.common.penalty().with_penalties(a.lambda1, a.lambda2);
    let f = fit(&ds.table, &w, &cfg, a.common.p, a.variant)?;
    let mut out = Output::new(&a.common.out_dir);
    write_fit(&mut out, ds.graph.labels(), &format!("fit_{}", a.variant), &f)?;
    out.manifest("fit", args, fit_details(&f))
}

fn run_cv(a: &CvArgs, args: &[String]) -> Result<()> {
    let ds = a.data.load()?;
    let w = ds.graph.laplacian(a.common.approx)?;
    let mut grid = GridSpec::new(a.grid.grid_l1, a.grid.grid_l2, a.common.seed);
    if a.variant == Variant::Ridge {
        grid.log_lambda2 = GridAxis::Zero;
    }
    grid.folds = a.grid.folds;
    let penalty = a.common.penalty();
    let cv = cross_validate(&ds.table, &w, &grid, &penalty, a.common.p, a.variant)?;
    let (l1, l2) = cv.chosen_lambdas();
    let f = fit(&ds.table, &w, &penalty.with_penalties(l1, l2), a.common.p, a.variant)?;
    let mut out = Output::new(&a.common.out_dir);
    out.write(&format!("cv/cv_{}.csv", a.variant), |w| cv.write_csv(w))?;
    write_fit(&mut out, ds.graph.labels(), &format!("fit_{}", a.variant), &f)?;
    out.manifest("cv", args, json!({ "fit": fit_details(&f), "fold_seed": cv.fold_seed }))
}

fn run_path(a: &PathArgs, args: &[String]) -> Result<()> {
    let ds = a.data.load()?;
    let w = ds.graph.laplacian(a.common.approx)?;
    let lambdas = a.grid_lambda.values();
    let path = solution_path(&ds.table, &w, &lambdas, a.mix, &a.common.penalty(), a.common.p)?;
    let mut out = Output::new(&a.common.out_dir);
    out.write("fits/path.csv", |w| path.write_csv(ds.graph.labels(), w))?;
    out.manifest("path", args, json!({ "mix": a.mix, "points": lambdas.len() }))
}

fn run_simulate(a: &SimulateArgs, args: &[String]) -> Result<()> {
    let fixture = a.graph.load()?;
    let alpha = study_effects(&fixture, a.pattern, a.seed)?;
    let sim = study_sim_config(&alpha, a.pattern, a.zero_target, a.n, a.p, a.calibrate, a.seed)?;
    let table = simulate_with_effects(&alpha, &sim, &Allocation::Uniform)?;
    let labels = fixture.graph.labels();
    let mut out = Output::new(&a.out_dir);
    out.write("data/obs.csv", |w| io::write_observations(&table, labels, w))?;
    out.write("data/edges.csv", |w| io::write_edges(&fixture.graph, w))?;
    out.write("data/coords.csv", |w| io::write_coords(labels, &fixture.coords, w))?;
    if fixture.graph.has_blocks() {
        out.write("data/blocks.csv", |w| io::write_blocks(&fixture.graph, w))?;
    }
    out.write("data/effects.csv", |w| io::write_effects(labels, &alpha, w))?;
    out.manifest(
        "simulate",
        args,
        json!({
            "pattern": a.pattern.to_string(),
            "phi_range": [sim.phi_range.0, sim.phi_range.1],
            "phi_scale": sim.phi_scale,
            "zero_fraction": table.zero_fraction(),
        }),
    )
}

fn run_study_cmd(a: &StudyArgs, args: &[String]) -> Result<()> {
    let fixture = a.graph.load()?;
    let plan = a.grid.plan(a.common.penalty());
    let mut out = Output::new(&a.common.out_dir);
    if !a.true_p.is_empty() {
        let cfg = SensitivityConfig {
            patterns: a.patterns.clone(),
            ns: vec![a.n],
            true_ps: a.true_p.clone(),
            fit_p: a.common.p,
            reps: a.reps,
            seed: a.common.seed,
            zero_target: a.zero_targets.first().copied().unwrap_or(0.30),
            plan,
        };
        let rows = sensitivity_study(&cfg, &fixture)?;
        out.write("summaries/sensitivity.csv", |w| write_sensitivity_csv(&rows, w))?;
        return out.manifest("study", args, json!({ "kind": "sensitivity", "rows": rows.len() }));
    }
    let cfg = StudyConfig {
        patterns: a.patterns.clone(),
        zero_targets: a.zero_targets.clone(),
        n: a.n,
        reps: a.reps,
        seed: a.common.seed,
        p: a.common.p,
        train_frac: a.train_frac,
        variants: a.variant.clone(),
        approximate: a.common.approx,
        calibrate: a.calibrate,
        timing: a.timing,
        plan,
    };
    let rows = run_study(&cfg, &fixture)?;
    out.write("summaries/study.csv", |w| write_study_csv(&rows, w))?;
    out.manifest("study", args, json!({ "kind": "comparison", "rows": rows.len() }))
}

fn run_summarize(a: &SummarizeArgs, args: &[String]) -> Result<()> {
    let ds = a.data.load()?;
    if a.format == Format::Geojson && ds.coords.is_none() {
        return Err(Error::Invalid("--format geojson needs --coords".into()));
    }
    let run = RunConfig {
        train_frac: a.train_frac,
        reps: a.reps,
        seed: a.common.seed,
        p: a.common.p,
        variants: a.variant.clone(),
        approximate: a.common.approx,
        plan: a.grid.plan(a.common.penalty()),
    };
    let res = replicate(&run, &ds.table, &ds.graph)?;
    let labels = ds.graph.labels();
    let mut out = Output::new(&a.common.out_dir);
    for (variant, s) in &res.summaries {
        out.write(&format!("summaries/summary_{variant}.csv"), |w| io::write_summary_csv(s, w))?;
        if a.format == Format::Geojson {
            out.write(&format!("summaries/summary_{variant}.geojson"), |w| {
                io::write_summary_geojson(s, ds.coords.as_deref(), w)
            })?;
        }
    }
    out.write("summaries/improvements.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            "variant",
            "baseline_deviance",
            "deviance",
            "deviance_improvement_pct",
            "baseline_mse",
            "mse",
            "mse_improvement_pct",
        ])?;
        for i in &res.improvements {
            c.write_record([
                i.variant.to_string(),
                i.baseline_deviance.to_string(),
                i.deviance.to_string(),
                i.deviance_improvement_pct.to_string(),
                i.baseline_mse.to_string(),
                i.mse.to_string(),
                i.mse_improvement_pct.to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    out.write("fits/replications.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["rep", "variant", "lambda1", "lambda2", "intercept", "label", "alpha"])?;
        for r in &res.records {
            for (label, a) in labels.iter().zip(&r.fit.alpha) {
                c.write_record([
                    r.rep.to_string(),
                    r.variant.to_string(),
                    r.fit.lambda1.to_string(),
                    r.fit.lambda2.to_string(),
                    r.fit.intercept_or_zero().to_string(),
                    label.clone(),
                    a.to_string(),
                ])?;
            }
        }
        c.flush()?;
        Ok(())
    })?;
    out.write("cv/validation.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["rep", "variant", "baseline_deviance", "deviance", "baseline_mse", "mse"])?;
        for r in &res.records {
            c.write_record([
                r.rep.to_string(),
                r.variant.to_string(),
                r.baseline_deviance.to_string(),
                r.deviance.to_string(),
                r.baseline_mse.to_string(),
                r.mse.to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    out.manifest("summarize", args, json!({ "replications": a.reps }))
}

/// Inserts `--key=value` flags from the config file right after the
/// subcommand, ahead of the user's own flags so those take precedence.
fn merge_config(raw: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = raw.iter().map(|s| s.to_string_lossy().into_owned()).collect();
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < strs.len() {
        let s = &strs[i];
        if let Some(v) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if s == "--config" {
            config = strs.get(i + 1).map(PathBuf::from);
            i += 1;
        } else if s == "--threads" {
            i += 1;
        } else if sub.is_none() && !s.starts_with('-') {
            sub = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(sub)) = (config, sub) else {
        return Ok(raw);
    };
    let mut injected = Vec::new();
    for (k, v) in io::read_config(&path)? {
        let key = k.replace('_', "-");
        match v.as_str() {
            "true" => injected.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => injected.push(OsString::from(format!("--{key}={v}"))),
        }
    }
    let mut out: Vec<OsString> = raw[..=sub].to_vec();
    out.extend(injected);
    out.extend_from_slice(&raw[sub + 1..]);
    Ok(out)
}

fn run() -> Result<()> {
    let argv = merge_config(std::env::args_os().collect())?;
    let cli = Cli::parse_from(&argv);
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }
    let args: Vec<String> = argv.iter().skip(1).map(|s| s.to_string_lossy().into_owned()).collect();
    match &cli.command {
        Command::Fit(a) => run_fit(a, &args),
        Command::Cv(a) => run_cv(a, &args),
        Command::Path(a) => run_path(a, &args),
        Command::Simulate(a) => run_simulate(a, &args),
        Command::Study(a) => run_study_cmd(a, &args),
        Command::Summarize(a) => run_summarize(a, &args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
