use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use zipf_mf::alpha::{estimate_alpha, AlphaCoefficients, LassoConfig};
use zipf_mf::data::{load_movielens_dir, DataSplit};
use zipf_mf::engine::{TrainConfig, TrainerContext, TrainerRegistry};
use zipf_mf::error::{Error, Result};
use zipf_mf::experiments::{
    evaluate_mae, evaluate_precision_at_k, median, Method, SweepReport, SweepRunner, SweepSettings,
    DEFAULT_BETA_GRID, DEFAULT_LR_GRID, SWEEP_FIXED_BETA, SWEEP_FIXED_LR,
};
use zipf_mf::model::FactorModel;
use zipf_mf::powerlaw::{matthew_degree_with_profile, DEFAULT_TOP_K};
use zipf_mf::synth::{generate, write_movielens_dir, SynthConfig};

#[derive(Parser)]
#[command(
    name = "zipf-mf",
    version,
    about = "Zipf-penalized matrix factorization for popularity-bias reduction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and save it.
    Train(Common),
    /// Fit stage-one alpha coefficients and write them as CSV.
    Alpha(Common),
    /// Report MAE, precision@K and Matthew degree of a saved model on the test split.
    Eval(Common),
    /// Compare both methods across learning rates.
    SweepLr(Common),
    /// Sweep the penalty coefficient at a fixed learning rate.
    SweepBeta(Common),
    /// Compare the Matthew degree of both methods across the beta grid.
    SweepMatthew(Common),
    /// Matthew degree and occurrence profile of a saved model.
    Measure(Common),
    /// Write a synthetic MovieLens-shaped dataset to --data-dir.
    Synth(Common),
}

#[derive(Args, Default)]
struct Common {
    /// Directory with ratings.csv and (optionally) movies.csv.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Trainer name for `train` (vanilla or zipf).
    #[arg(long)]
    method: Option<String>,
    /// Saved model file for `eval` and `measure`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Alpha CSV to use instead of fitting one.
    #[arg(long)]
    alpha: Option<PathBuf>,
    /// Per-epoch trace CSV written by `train`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Comma-separated grid for sweeps (learning rates or betas).
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Refit alpha for every zipf run of a sweep.
    #[arg(long)]
    alpha_per_run: bool,
}

/// Flag values layered over an optional key=value config file.
struct Resolved {
    flags: Common,
    file: HashMap<String, String>,
}

fn parse_config_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: n as u64 + 1,
            message: "expected key=value".into(),
        })?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

impl Resolved {
    fn new(flags: Common) -> Result<Self> {
        let file = match &flags.config {
            Some(p) => parse_config_file(p)?,
            None => HashMap::new(),
        };
        Ok(Resolved { flags, file })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.file
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::invalid(format!("config key `{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    fn get<T: FromStr + Clone>(&self, flag: &Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v.clone())),
            None => self.from_file(key),
        }
    }

    fn or<T: FromStr + Clone>(&self, flag: &Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    fn path(&self, flag: &Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.clone()
            .or_else(|| self.file.get(key).map(PathBuf::from))
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let f = &self.flags;
        let cfg = TrainConfig {
            learning_rate: self.or(&f.lr, "lr", d.learning_rate)?,
            beta: self.or(&f.beta, "beta", d.beta)?,
            epochs: self.or(&f.epochs, "epochs", d.epochs)?,
            latent_dim: self.or(&f.dim, "dim", d.latent_dim)?,
            rng_seed: self.or(&f.seed, "seed", d.rng_seed)?,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn top_k(&self) -> Result<usize> {
        self.or(&self.flags.topk, "topk", DEFAULT_TOP_K)
    }

    fn lasso(&self) -> Result<LassoConfig> {
        Ok(LassoConfig {
            lambda: self.or(&self.flags.lambda, "lambda", LassoConfig::default().lambda)?,
            ..LassoConfig::default()
        })
    }

    fn split(&self) -> Result<DataSplit> {
        let dir = self
            .path(&self.flags.data_dir, "data-dir")
            .ok_or_else(|| Error::invalid("--data-dir is required"))?;
        let data = load_movielens_dir(&dir)?;
        let fraction = self.or(&self.flags.test_fraction, "test-fraction", 0.2)?;
        let seed = self.or(&self.flags.seed, "seed", 42)?;
        eprintln!(
            "loaded {} ratings, {} users, {} items",
            data.len(),
            data.num_users(),
            data.num_items()
        );
        data.split(fraction, seed)
    }

    fn alpha_file(&self) -> Result<Option<AlphaCoefficients>> {
        self.path(&self.flags.alpha, "alpha")
            .map(|p| AlphaCoefficients::read_csv(File::open(p)?))
            .transpose()
    }

    fn grid(&self, default: &[f64]) -> Result<Vec<f64>> {
        let raw: Option<String> = self.get(&self.flags.grid, "grid")?;
        match raw {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad grid value `{x}`")))
                })
                .collect(),
        }
    }

    fn sweep_settings(&self) -> Result<SweepSettings> {
        let alpha_per_run =
            self.flags.alpha_per_run || self.from_file::<bool>("alpha-per-run")?.unwrap_or(false);
        Ok(SweepSettings {
            base: self.train_config()?,
            top_k: self.top_k()?,
            lasso: self.lasso()?,
            alpha_learning_rate: SWEEP_FIXED_LR,
            alpha_per_run,
            workers: self.or(&self.flags.workers, "workers", 0)?,
        })
    }

    fn load_model(&self) -> Result<FactorModel> {
        let path = self
            .path(&self.flags.model, "model")
            .ok_or_else(|| Error::invalid("--model is required"))?;
        FactorModel::load(std::io::BufReader::new(File::open(path)?))
    }
}

fn cmd_train(r: &Resolved) -> Result<()> {
    let split = r.split()?;
    let config = r.train_config()?;
    let method: String = r.or(&r.flags.method, "method", "zipf".to_string())?;
    let registry = TrainerRegistry::default();
    let mut ctx = TrainerContext::default();
    if method == "zipf" {
        let alpha = match r.alpha_file()? {
            Some(a) => a,
            None => estimate_alpha(&split.train, &config, r.top_k()?, &r.lasso()?)?.alpha,
        };
        ctx.alpha = Some(std::sync::Arc::new(alpha));
    }
    let trainer = registry.create(&method, &ctx)?;
    let outcome = trainer.train(&split.train, &config)?;
    let out = r
        .path(&r.flags.out, "out")
        .unwrap_or_else(|| PathBuf::from("model.bin"));
    outcome.model.save(BufWriter::new(File::create(&out)?))?;
    if let Some(trace) = r.path(&r.flags.trace, "trace") {
        outcome.write_trace_csv(File::create(trace)?)?;
    }
    let mae = evaluate_mae(&outcome.model, &split.test)?;
    println!(
        "method={} mae_test={mae:.6} model={}",
        trainer.name(),
        out.display()
    );
    Ok(())
}

fn cmd_alpha(r: &Resolved) -> Result<()> {
    let split = r.split()?;
    let config = TrainConfig {
        beta: 0.0,
        ..r.train_config()?
    };
    let est = estimate_alpha(&split.train, &config, r.top_k()?, &r.lasso()?)?;
    let out = r
        .path(&r.flags.out, "out")
        .unwrap_or_else(|| PathBuf::from("alpha.csv"));
    est.alpha.write_csv(File::create(&out)?)?;
    let nonzero = est.alpha.alpha.iter().filter(|a| **a != 0.0).count();
    println!(
        "alpha: {} users, {nonzero} non-zero, converged={} -> {}",
        est.alpha.len(),
        est.alpha.converged,
        out.display()
    );
    Ok(())
}

fn cmd_eval(r: &Resolved) -> Result<()> {
    let split = r.split()?;
    let model = r.load_model()?;
    let k = r.top_k()?;
    let mae = evaluate_mae(&model, &split.test)?;
    let precision = evaluate_precision_at_k(&model, &split.test, k)?;
    let (s, profile) = matthew_degree_with_profile(&model, k)?;
    println!(
        "mae_test={mae:.6} precision_at_{k}={precision:.6} matthew_degree_s={s:.6} coverage={}",
        profile.coverage()
    );
    Ok(())
}

fn cmd_measure(r: &Resolved) -> Result<()> {
    let model = r.load_model()?;
    let k = r.top_k()?;
    let (s, profile) = matthew_degree_with_profile(&model, k)?;
    if let Some(out) = r.path(&r.flags.out, "out") {
        profile.write_csv(File::create(out)?)?;
    }
    println!(
        "matthew_degree_s={s:.6} coverage={} top_k={k}",
        profile.coverage()
    );
    Ok(())
}

fn summarize(report: &SweepReport) {
    let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.6}"));
    for m in [Method::Vanilla, Method::Zipf] {
        println!(
            "{:<8} best_mae={} median_matthew_s={}",
            m.as_str(),
            fmt(report.best_mae(m)),
            fmt(median(&report.matthew_degrees(m)))
        );
    }
}

fn cmd_sweep(r: &Resolved, which: &str) -> Result<()> {
    let split = r.split()?;
    let settings = r.sweep_settings()?;
    let mut runner = SweepRunner::new(&split, settings);
    if let Some(a) = r.alpha_file()? {
        runner = runner.with_alpha(a);
    }
    let default_out = format!("{which}.csv");
    let out = r
        .path(&r.flags.out, "out")
        .unwrap_or_else(|| PathBuf::from(default_out));
    let report = match which {
        "sweep-lr" => {
            let beta = r.or(&r.flags.beta, "beta", SWEEP_FIXED_BETA)?;
            runner.run_lr_sweep(&r.grid(&DEFAULT_LR_GRID)?, beta, Some(&out))?
        }
        "sweep-beta" => {
            let lr = r.or(&r.flags.lr, "lr", SWEEP_FIXED_LR)?;
            runner.run_beta_sweep(&r.grid(&DEFAULT_BETA_GRID)?, lr, Some(&out))?
        }
        _ => {
            let lr = r.or(&r.flags.lr, "lr", SWEEP_FIXED_LR)?;
            runner.run_matthew_comparison(&r.grid(&DEFAULT_BETA_GRID)?, lr, Some(&out))?
        }
    };
    summarize(&report);
    println!("report: {}", out.display());
    Ok(())
}

fn cmd_synth(r: &Resolved) -> Result<()> {
    let dir = r
        .path(&r.flags.data_dir, "data-dir")
        .ok_or_else(|| Error::invalid("--data-dir is required"))?;
    let config = SynthConfig {
        seed: r.or(&r.flags.seed, "seed", 42)?,
        ..SynthConfig::movielens_small()
    };
    let data = generate(&config)?;
    write_movielens_dir(&data, &dir)?;
    println!("wrote {} ratings to {}", data.len(), dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match cli.command {
        Command::Train(c) => ("train", c),
        Command::Alpha(c) => ("alpha", c),
        Command::Eval(c) => ("eval", c),
        Command::SweepLr(c) => ("sweep-lr", c),
        Command::SweepBeta(c) => ("sweep-beta", c),
        Command::SweepMatthew(c) => ("sweep-matthew", c),
        Command::Measure(c) => ("measure", c),
        Command::Synth(c) => ("synth", c),
    };
    let r = Resolved::new(common)?;
    match name {
        "train" => cmd_train(&r),
        "alpha" => cmd_alpha(&r),
        "eval" => cmd_eval(&r),
        "measure" => cmd_measure(&r),
        "synth" => cmd_synth(&r),
        sweep => cmd_sweep(&r, sweep),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::FAILURE
        }
    }
}
