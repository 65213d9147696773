//! `fairmask` command-line front end: algorithm comparisons, tau sweeps,
//! consistency exports and synthetic data.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use fairmask::baselines;
use fairmask::data::{self, SyntheticSpec};
use fairmask::fairness::{self, mask_spec_for, TrainThenMask};
use fairmask::metrics;
use fairmask::model::Activation;
use fairmask::models::predict_scores;
use fairmask::report::{evaluate, EvalOptions, FairnessReport};
use fairmask::{DatasetSchema, FamilySpec, MlpArchitecture, Split, TauGrid, TrainConfig};

#[derive(Parser)]
#[command(name = "fairmask", version, about = "Train-then-mask fair classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare every algorithm on one split and write report.txt / report.json.
    Compare(Common),
    /// Accuracy and group discrimination over a grid of offsets.
    Sweep(Common),
    /// Own score vs. mean score of the k nearest neighbours, per test row.
    Consistency(ConsistencyArgs),
    /// Write a synthetic dataset (or the toy fixture) plus its schema.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Logistic,
    Svm,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Relu,
    Sigmoid,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, value_enum, default_value = "logistic")]
    family: FamilyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent seeds to average over.
    #[arg(long)]
    repeats: Option<usize>,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.6,0.2,0.2")]
    split: String,
    /// `lo:hi:count`; defaults to 101 points covering the validation scores.
    #[arg(long)]
    tau_grid: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    /// Output directory (compare) or file (sweep, consistency).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    l2: f64,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hidden layer widths for the MLP, comma separated.
    #[arg(long, default_value = "16,8,4")]
    hidden: String,
    #[arg(long, value_enum, default_value = "relu")]
    activation: ActivationArg,
}

#[derive(Args)]
struct ConsistencyArgs {
    #[command(flatten)]
    common: Common,
    /// Offset added to every score before export.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    tau: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Write the eight-applicant admissions fixture instead.
    #[arg(long)]
    toy: bool,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0.8, allow_hyphen_values = true)]
    rho: f64,
    #[arg(long, default_value_t = 0.5)]
    protected_share: f64,
    #[arg(long, default_value_t = 0.3)]
    base_rate_protected: f64,
    #[arg(long, default_value_t = 0.5)]
    base_rate_unprotected: f64,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path; the schema goes next to it with a `.toml` extension.
    #[arg(long)]
    out: PathBuf,
}

/// Failure tagged with the pipeline stage that produced it.
struct Failure {
    stage: &'static str,
    message: String,
}

fn fail(stage: &'static str) -> impl FnOnce(fairmask::Error) -> Failure {
    move |e| Failure { stage, message: e.to_string() }
}

fn failure(stage: &'static str, message: impl Into<String>) -> Failure {
    Failure { stage, message: message.into() }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Files written so far; removed again if a later stage fails.
#[derive(Default)]
struct Outputs(Vec<PathBuf>);

impl Outputs {
    fn write(&mut self, path: &Path, contents: &str) -> Outcome<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| failure("write", format!("{}: {e}", dir.display())))?;
        }
        std::fs::write(path, contents).map_err(|e| failure("write", format!("{}: {e}", path.display())))?;
        self.0.push(path.to_path_buf());
        Ok(())
    }

    fn discard(&self) {
        for p in &self.0 {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[args]: {}", line.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let mut outputs = Outputs::default();
    let result = match cli.command {
        Command::Compare(c) => compare(&c, &mut outputs),
        Command::Sweep(c) => sweep(&c, &mut outputs),
        Command::Consistency(c) => consistency(&c, &mut outputs),
        Command::Synth(s) => synth(&s, &mut outputs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            outputs.discard();
            eprintln!("error[{}]: {}", f.stage, f.message.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

impl Common {
    fn family_spec(&self) -> Outcome<FamilySpec> {
        Ok(match self.family {
            FamilyArg::Logistic => FamilySpec::Logistic,
            FamilyArg::Svm => FamilySpec::LinearSvm,
            FamilyArg::Mlp => {
                let hidden_layers = self
                    .hidden
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| failure("args", format!("--hidden: expected widths like 16,8,4, got `{}`", self.hidden)))?;
                let activation = match self.activation {
                    ActivationArg::Relu => Activation::Relu,
                    ActivationArg::Sigmoid => Activation::Sigmoid,
                };
                let arch = MlpArchitecture { hidden_layers, activation };
                arch.validate().map_err(fail("args"))?;
                FamilySpec::Mlp(arch)
            }
        })
    }

    fn train_config(&self, seed: u64) -> Outcome<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            l2_penalty: self.l2,
            batch_size: self.batch_size,
            seed,
            ..TrainConfig::default()
        };
        cfg.validate().map_err(fail("args"))?;
        Ok(cfg)
    }

    fn fractions(&self) -> Outcome<[f64; 3]> {
        let bad = || failure("args", format!("--split: expected three fractions like 0.6,0.2,0.2, got `{}`", self.split));
        let parts: Vec<f64> = self
            .split
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        parts.try_into().map_err(|_| bad())
    }

    fn grid(&self) -> Outcome<Option<TauGrid>> {
        self.tau_grid
            .as_deref()
            .map(|g| g.parse::<TauGrid>().map_err(|e| failure("args", format!("--tau-grid: {e}"))))
            .transpose()
    }

    fn repeats(&self) -> Outcome<usize> {
        match self.repeats {
            Some(0) => Err(failure("args", "--repeats must be at least 1")),
            Some(r) => Ok(r),
            None => Ok(1),
        }
    }

    fn load(&self) -> Outcome<Loaded> {
        let schema = DatasetSchema::load(&self.schema).map_err(fail("schema"))?;
        let table = data::load_csv(&self.data, &schema).map_err(fail("data"))?;
        Ok(Loaded { schema, table })
    }

    fn config_json(&self, family: &FamilySpec, grid: Option<TauGrid>) -> Value {
        let arch = match family {
            FamilySpec::Mlp(a) => json!({
                "hidden_layers": a.hidden_layers,
                "activation": a.activation.as_str(),
            }),
            _ => Value::Null,
        };
        json!({
            "data": self.data.display().to_string(),
            "schema": self.schema.display().to_string(),
            "family": family.family().as_str(),
            "mlp": arch,
            "seed": self.seed,
            "split": self.split,
            "tau_grid": grid.map(|g| json!({"lo": g.lo, "hi": g.hi, "count": g.count})),
            "k": self.k,
            "learning_rate": self.lr,
            "epochs": self.epochs,
            "l2_penalty": self.l2,
            "batch_size": self.batch_size,
        })
    }
}

struct Loaded {
    schema: DatasetSchema,
    table: data::RawTable,
}

struct Prepared {
    split: Split,
    mask_values: Vec<f64>,
    warnings: Vec<String>,
}

fn prepare(loaded: &Loaded, fractions: [f64; 3], seed: u64) -> Outcome<Prepared> {
    let (split, plan, warnings) =
        data::prepare_split(&loaded.table, &loaded.schema, fractions, seed).map_err(fail("split"))?;
    let mask_values = plan.mask_values().map_err(fail("schema"))?;
    Ok(Prepared { split, mask_values, warnings })
}

fn run_train_then_mask(p: &Prepared, family: &FamilySpec, cfg: &TrainConfig, grid: Option<TauGrid>) -> Outcome<TrainThenMask> {
    let spec = mask_spec_for(&p.split.train, p.mask_values.clone()).map_err(fail("mask"))?;
    fairness::train_then_mask(&p.split.train, &p.split.validation, &spec, family, cfg, grid).map_err(fail("train"))
}

const ALGORITHMS: [&str; 5] = ["unconstrained", "omit-sensitive", "majority", "massage", "train-then-mask"];

#[derive(Serialize, Default, Clone)]
struct MeanRow {
    accuracy: f64,
    admit_protected: f64,
    admit_unprotected: f64,
    group_discr: f64,
    latent_discr: Option<f64>,
    strict_latent_discr: Option<f64>,
    latent_std_error: Option<f64>,
}

fn mean_rows(reports: &[FairnessReport]) -> MeanRow {
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&FairnessReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&FairnessReport) -> Option<f64>| {
        reports.iter().map(f).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / n)
    };
    MeanRow {
        accuracy: mean(&|r| r.accuracy),
        admit_protected: mean(&|r| r.admit_protected),
        admit_unprotected: mean(&|r| r.admit_unprotected),
        group_discr: mean(&|r| r.group_discr),
        latent_discr: mean_opt(&|r| r.latent_discr),
        strict_latent_discr: mean_opt(&|r| r.strict_latent_discr),
        latent_std_error: mean_opt(&|r| r.latent_std_error),
    }
}

fn compare(c: &Common, outputs: &mut Outputs) -> Outcome<()> {
    let family = c.family_spec()?;
    let fractions = c.fractions()?;
    let grid = c.grid()?;
    let repeats = c.repeats()?;
    let loaded = c.load()?;
    let multi_sensitive = loaded.schema.sensitive_columns.len() > 1;

    let mut per_algorithm: Vec<Vec<FairnessReport>> = vec![Vec::new(); ALGORITHMS.len()];
    let mut notices: Vec<String> = Vec::new();
    if multi_sensitive {
        notices.push("massage skipped: it needs exactly one sensitive column".into());
    }
    let mut seeds = Vec::new();
    for r in 0..repeats {
        let seed = c.seed.wrapping_add(r as u64);
        seeds.push(seed);
        let cfg = c.train_config(seed)?;
        let p = prepare(&loaded, fractions, seed)?;
        for w in &p.warnings {
            if !notices.contains(w) {
                notices.push(w.clone());
            }
        }
        let test = &p.split.test;
        let opts = EvalOptions { seed, ..EvalOptions::default() };
        let ttm = run_train_then_mask(&p, &family, &cfg, grid)?;
        let h_star = &ttm.reference.model;
        let eval = |name: &str, m: &fairmask::ScoreModel| {
            evaluate(name, m, Some(h_star), test, &opts).map_err(fail("evaluate"))
        };

        per_algorithm[0].push(eval(ALGORITHMS[0], h_star)?);
        let omit = baselines::omit_sensitive(&p.split.train, &family, &cfg).map_err(fail("train"))?;
        per_algorithm[1].push(eval(ALGORITHMS[1], &omit.model)?);
        per_algorithm[2].push(eval(ALGORITHMS[2], &baselines::majority(&p.split.train))?);
        if !multi_sensitive {
            let ranker = TrainConfig { allow_degenerate: true, ..cfg.clone() };
            let (fit, _) = baselines::massage(&p.split.train, &ranker, &family, &cfg).map_err(fail("massage"))?;
            per_algorithm[3].push(eval(ALGORITHMS[3], &fit.model)?);
        }
        per_algorithm[4].push(eval(ALGORITHMS[4], &ttm.model)?);
    }

    let rows: Vec<(&str, MeanRow)> = ALGORITHMS
        .iter()
        .zip(&per_algorithm)
        .filter(|(_, reps)| !reps.is_empty())
        .map(|(name, reps)| (*name, mean_rows(reps)))
        .collect();

    let mut table = String::new();
    let _ = writeln!(
        table,
        "# fairmask compare family={} repeats={} seed={} split={}",
        family.family().as_str(),
        repeats,
        c.seed,
        c.split
    );
    for n in &notices {
        let _ = writeln!(table, "# note: {n}");
    }
    let _ = writeln!(
        table,
        "{:<16} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "algorithm", "acc", "adm1", "adm0", "g_discr", "l_discr"
    );
    for (name, m) in &rows {
        let ld = m.latent_discr.map_or("-".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(
            table,
            "{:<16} {:>9.6} {:>9.6} {:>9.6} {:>9.6} {:>9}",
            name, m.accuracy, m.admit_protected, m.admit_unprotected, m.group_discr, ld
        );
    }

    let mut config = c.config_json(&family, grid);
    config["seeds"] = json!(seeds);
    config["notices"] = json!(notices);
    let metrics: serde_json::Map<String, Value> = rows
        .iter()
        .map(|(name, m)| (name.to_string(), serde_json::to_value(m).expect("plain struct serializes")))
        .collect();
    let doc = json!({
        "algorithms": rows.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
        "metrics": metrics,
        "config": config,
        "repeats": repeats,
    });
    let json_text = serde_json::to_string_pretty(&doc).expect("json value serializes") + "\n";

    outputs.write(&c.out.join("report.txt"), &table)?;
    outputs.write(&c.out.join("report.json"), &json_text)?;
    print!("{table}");
    Ok(())
}

/// Independent quadratic dominance check of the exported frontier flags.
fn frontier_consistent(points: &[fairness::SweepPoint]) -> bool {
    points.iter().all(|p| {
        let dominated = points.iter().any(|q| {
            q.accuracy >= p.accuracy
                && q.group_discr <= p.group_discr
                && (q.accuracy > p.accuracy || q.group_discr < p.group_discr)
        });
        p.on_frontier == !dominated
    })
}

fn sweep(c: &Common, outputs: &mut Outputs) -> Outcome<()> {
    let family = c.family_spec()?;
    let fractions = c.fractions()?;
    let grid = c.grid()?;
    let cfg = c.train_config(c.seed)?;
    let loaded = c.load()?;
    let p = prepare(&loaded, fractions, c.seed)?;
    let ttm = run_train_then_mask(&p, &family, &cfg, grid)?;
    let spec = ttm.model.mask.clone().expect("train-then-mask sets a mask");
    let result = fairness::tau_sweep(&ttm.reference.model, &p.split.validation, &spec, &ttm.grid)
        .map_err(fail("sweep"))?;
    if !frontier_consistent(&result.points) {
        return Err(failure("sweep", "frontier flags failed the dominance recheck"));
    }

    let body = result.to_delimited();
    let mut lines = body.lines();
    let header = lines.next().unwrap_or_default();
    let mut out = format!("row,{header}\n");
    for line in lines {
        let _ = writeln!(out, "grid,{line}");
    }
    let star = result.star();
    let _ = write!(out, "tau_star,{:?},{:?},{:?},{}", star.tau, star.accuracy, star.group_discr, star.on_frontier);
    if result.column_names.len() > 1 {
        for g in &star.group_discr_by_column {
            let _ = write!(out, ",{g:?}");
        }
    }
    out.push('\n');
    outputs.write(&c.out, &out)?;
    println!(
        "tau*={:?} accuracy={:.6} group_discr={:.6} points={}",
        star.tau,
        star.accuracy,
        star.group_discr,
        result.points.len()
    );
    Ok(())
}

/// Neighbourhood size when `--k` is not given: 10 for Adult-scale test sets.
fn default_k(test_rows: usize) -> usize {
    if test_rows >= 5000 {
        10
    } else {
        5
    }
}

fn consistency(a: &ConsistencyArgs, outputs: &mut Outputs) -> Outcome<()> {
    let c = &a.common;
    let family = c.family_spec()?;
    let fractions = c.fractions()?;
    let grid = c.grid()?;
    let cfg = c.train_config(c.seed)?;
    let loaded = c.load()?;
    let p = prepare(&loaded, fractions, c.seed)?;
    let ttm = run_train_then_mask(&p, &family, &cfg, grid)?;
    let model = ttm.model.with_tau(a.tau);
    let test = &p.split.test;
    let scores = predict_scores(&model, test).map_err(fail("consistency"))?;
    let k = c.k.unwrap_or_else(|| default_k(test.len()));
    let points = metrics::knn_consistency(&scores, test, k).map_err(fail("consistency"))?;
    let mut out = String::from("own_score,knn_mean\n");
    for (own, mean) in &points {
        let _ = writeln!(out, "{own:?},{mean:?}");
    }
    outputs.write(&c.out, &out)?;
    println!("k={k} rows={} tau={:?}", points.len(), a.tau);
    Ok(())
}

fn synth(s: &SynthArgs, outputs: &mut Outputs) -> Outcome<()> {
    let schema_path = s.out.with_extension("toml");
    if schema_path == s.out {
        return Err(failure("args", "--out must not already end in .toml"));
    }
    let (csv, schema) = if s.toy {
        (data::toy_csv(), data::toy_schema())
    } else {
        if !(s.rho.is_finite() && (-1.0..=1.0).contains(&s.rho)) {
            return Err(failure("args", format!("--rho must lie in [-1, 1], got {}", s.rho)));
        }
        let spec = SyntheticSpec {
            n: s.n,
            rho: s.rho,
            protected_share: s.protected_share,
            base_rate_protected: s.base_rate_protected,
            base_rate_unprotected: s.base_rate_unprotected,
            noise: s.noise,
            seed: s.seed,
        };
        let d = data::synthesize(&spec).map_err(fail("synth"))?;
        let mut buf = Vec::new();
        data::write_dataset_csv(&d, &mut buf).map_err(fail("synth"))?;
        (String::from_utf8(buf).expect("csv output is utf-8"), data::synthetic_schema())
    };
    outputs.write(&s.out, &csv)?;
    outputs.write(&schema_path, &schema.to_toml_string())?;
    println!("wrote {} and {}", s.out.display(), schema_path.display());
    Ok(())
}
