//! Evaluation metrics and the sweep harness behind the `sweep-*` commands.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::alpha::{estimate_alpha, AlphaCoefficients, LassoConfig};
use crate::data::{DataSplit, RatingsDataset};
use crate::engine::{TrainConfig, TrainerContext, TrainerRegistry};
use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::powerlaw::{matthew_degree_with_profile, DEFAULT_TOP_K};

pub const DEFAULT_LR_GRID: [f64; 7] = [1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
pub const DEFAULT_BETA_GRID: [f64; 8] = [1e-5, 3e-5, 5e-5, 7e-5, 1e-4, 3e-4, 5e-4, 1e-3];
pub const SWEEP_FIXED_LR: f64 = 1e-4;
pub const SWEEP_FIXED_BETA: f64 = 1e-3;
/// Ratings at or above this count as relevant for precision@K.
pub const RELEVANCE_THRESHOLD: f64 = 4.0;

/// Mean absolute error of clamped predictions on the original rating scale.
pub fn evaluate_mae(model: &FactorModel, test: &RatingsDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    let mut total = 0.0;
    for r in test.ratings() {
        total += (r.value - model.predict_rating(r.user, r.item)?).abs();
    }
    Ok(total / test.len() as f64)
}

/// Precision@K over each user's held-out items: the user's test items are
/// ranked by predicted score (lower index on ties), the top `min(K, |items|)`
/// are kept, and the share rated >= 4.0 is averaged over users with test items.
pub fn evaluate_precision_at_k(
    model: &FactorModel,
    test: &RatingsDataset,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("precision cutoff must be at least 1"));
    }
    let mut by_user: Vec<Vec<(usize, f64)>> = vec![Vec::new(); test.num_users()];
    for r in test.ratings() {
        by_user[r.user].push((r.item, r.value));
    }
    let mut sum = 0.0;
    let mut users = 0usize;
    for (i, items) in by_user.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let mut scored = items
            .iter()
            .map(|&(j, v)| Ok((model.cosine_score(i, j)?, j, v)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let cut = k.min(scored.len());
        let hits = scored[..cut]
            .iter()
            .filter(|s| s.2 >= RELEVANCE_THRESHOLD)
            .count();
        sum += hits as f64 / cut as f64;
        users += 1;
    }
    if users == 0 {
        return Err(Error::invalid("no user has held-out ratings"));
    }
    Ok(sum / users as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Vanilla,
    Zipf,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Zipf => "zipf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Method::Vanilla),
            "zipf" => Ok(Method::Zipf),
            other => Err(Error::UnknownTrainer(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Diverged,
    Degenerate,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
            RunStatus::Degenerate => "degenerate",
            RunStatus::Failed => "error",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ok" => RunStatus::Ok,
            "diverged" => RunStatus::Diverged,
            "degenerate" => RunStatus::Degenerate,
            "error" => RunStatus::Failed,
            other => return Err(Error::invalid(format!("unknown run status `{other}`"))),
        })
    }
}

/// One training run's identity within a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunKey {
    pub method: Method,
    pub learning_rate: f64,
    pub beta: f64,
    pub latent_dim: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl RunKey {
    fn fingerprint(&self) -> (Method, u64, u64, usize, usize, u64) {
        (
            self.method,
            self.learning_rate.to_bits(),
            self.beta.to_bits(),
            self.latent_dim,
            self.epochs,
            self.seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub key: RunKey,
    pub mae_test: Option<f64>,
    pub matthew_degree_s: Option<f64>,
    pub coverage: Option<usize>,
    pub wall_time_seconds: f64,
    pub status: RunStatus,
}

pub const REPORT_HEADER: [&str; 11] = [
    "method",
    "learning_rate",
    "beta",
    "latent_dim",
    "epochs",
    "seed",
    "mae_test",
    "matthew_degree_s",
    "coverage",
    "wall_time_seconds",
    "status",
];

fn opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map(ToString::to_string).unwrap_or_default()
}

impl SweepRow {
    fn record(&self) -> [String; 11] {
        let k = &self.key;
        [
            k.method.as_str().into(),
            k.learning_rate.to_string(),
            k.beta.to_string(),
            k.latent_dim.to_string(),
            k.epochs.to_string(),
            k.seed.to_string(),
            opt(&self.mae_test),
            opt(&self.matthew_degree_s),
            opt(&self.coverage),
            format!("{:.3}", self.wall_time_seconds),
            self.status.as_str().into(),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        let get = |i: usize| rec.get(i).unwrap_or("").trim();
        let bad = |i: usize| {
            Error::invalid(format!(
                "report column `{}` has bad value `{}`",
                REPORT_HEADER[i],
                get(i)
            ))
        };
        fn num<T: std::str::FromStr>(s: &str) -> Option<T> {
            s.parse().ok()
        }
        fn optional<T: std::str::FromStr>(s: &str) -> std::result::Result<Option<T>, ()> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| ())
            }
        }
        Ok(SweepRow {
            key: RunKey {
                method: Method::parse(get(0))?,
                learning_rate: num(get(1)).ok_or_else(|| bad(1))?,
                beta: num(get(2)).ok_or_else(|| bad(2))?,
                latent_dim: num(get(3)).ok_or_else(|| bad(3))?,
                epochs: num(get(4)).ok_or_else(|| bad(4))?,
                seed: num(get(5)).ok_or_else(|| bad(5))?,
            },
            mae_test: optional(get(6)).map_err(|_| bad(6))?,
            matthew_degree_s: optional(get(7)).map_err(|_| bad(7))?,
            coverage: optional(get(8)).map_err(|_| bad(8))?,
            wall_time_seconds: num(get(9)).ok_or_else(|| bad(9))?,
            status: RunStatus::parse(get(10))?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<&str> = rdr.headers()?.iter().collect();
        if header != REPORT_HEADER {
            return Err(Error::invalid(format!(
                "{}: report header does not match `{}`",
                path.display(),
                REPORT_HEADER.join(",")
            )));
        }
        let rows = rdr
            .records()
            .map(|r| SweepRow::from_record(&r?))
            .collect::<Result<_>>()?;
        Ok(SweepReport { rows })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(REPORT_HEADER)?;
        for row in &self.rows {
            out.write_record(row.record())?;
        }
        out.flush()?;
        Ok(())
    }

    fn ok_rows(&self, method: Method) -> impl Iterator<Item = &SweepRow> {
        self.rows
            .iter()
            .filter(move |r| r.key.method == method && r.mae_test.is_some())
    }

    /// Lowest test MAE among completed runs of `method`.
    pub fn best_mae(&self, method: Method) -> Option<f64> {
        self.ok_rows(method)
            .filter_map(|r| r.mae_test)
            .reduce(f64::min)
    }

    pub fn matthew_degrees(&self, method: Method) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.key.method == method)
            .filter_map(|r| r.matthew_degree_s)
            .collect()
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

/// Settings shared by every run of a sweep.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    /// Template for each run; learning rate and beta are overridden per point.
    pub base: TrainConfig,
    pub top_k: usize,
    pub lasso: LassoConfig,
    /// Learning rate of the stage-one model for the shared alpha.
    pub alpha_learning_rate: f64,
    /// Fit alpha separately for every zipf run instead of once per sweep.
    pub alpha_per_run: bool,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            base: TrainConfig::default(),
            top_k: DEFAULT_TOP_K,
            lasso: LassoConfig::default(),
            alpha_learning_rate: SWEEP_FIXED_LR,
            alpha_per_run: false,
            workers: 0,
        }
    }
}

impl SweepSettings {
    fn config_for(&self, key: &RunKey) -> TrainConfig {
        TrainConfig {
            learning_rate: key.learning_rate,
            beta: key.beta,
            ..self.base.clone()
        }
    }

    fn key(&self, method: Method, learning_rate: f64, beta: f64) -> RunKey {
        RunKey {
            method,
            learning_rate,
            beta,
            latent_dim: self.base.latent_dim,
            epochs: self.base.epochs,
            seed: self.base.rng_seed,
        }
    }
}

/// A point in a sweep. `alias` rows copy the results of another point instead
/// of training again (vanilla does not depend on beta).
#[derive(Debug, Clone, Copy)]
struct Planned {
    key: RunKey,
    alias_of: Option<RunKey>,
}

fn run_one(
    split: &DataSplit,
    settings: &SweepSettings,
    registry: &TrainerRegistry,
    shared_alpha: Option<&Arc<AlphaCoefficients>>,
    key: &RunKey,
) -> SweepRow {
    let start = Instant::now();
    let config = settings.config_for(key);
    let finish = |mae, s, cov, status| SweepRow {
        key: *key,
        mae_test: mae,
        matthew_degree_s: s,
        coverage: cov,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        status,
    };
    let failed = |e: &Error| match e {
        Error::Diverged { .. } => RunStatus::Diverged,
        Error::DegenerateDistribution(_) => RunStatus::Degenerate,
        _ => RunStatus::Failed,
    };

    let ctx = match key.method {
        Method::Vanilla => TrainerContext::default(),
        Method::Zipf => {
            let alpha = if settings.alpha_per_run || shared_alpha.is_none() {
                match estimate_alpha(&split.train, &config, settings.top_k, &settings.lasso) {
                    Ok(est) => Arc::new(est.alpha),
                    Err(e) => return finish(None, None, None, failed(&e)),
                }
            } else {
                Arc::clone(shared_alpha.expect("checked above"))
            };
            TrainerContext { alpha: Some(alpha) }
        }
    };
    let outcome = registry
        .create(key.method.as_str(), &ctx)
        .and_then(|t| t.train(&split.train, &config));
    let model = match outcome {
        Ok(o) => o.model,
        Err(e) => return finish(None, None, None, failed(&e)),
    };
    let mae = match evaluate_mae(&model, &split.test) {
        Ok(m) => m,
        Err(e) => return finish(None, None, None, failed(&e)),
    };
    match matthew_degree_with_profile(&model, settings.top_k) {
        Ok((s, profile)) => finish(Some(mae), Some(s), Some(profile.coverage()), RunStatus::Ok),
        Err(e) => finish(Some(mae), None, None, failed(&e)),
    }
}

/// Executes sweep plans, appending rows to an optional report file and
/// skipping rows that file already holds.
pub struct SweepRunner<'a> {
    pub split: &'a DataSplit,
    pub settings: SweepSettings,
    pub registry: TrainerRegistry,
    shared_alpha: Option<Arc<AlphaCoefficients>>,
}

impl<'a> SweepRunner<'a> {
    pub fn new(split: &'a DataSplit, settings: SweepSettings) -> Self {
        SweepRunner {
            split,
            settings,
            registry: TrainerRegistry::default(),
            shared_alpha: None,
        }
    }

    /// Use precomputed alpha for every zipf run instead of fitting one.
    pub fn with_alpha(mut self, alpha: AlphaCoefficients) -> Self {
        self.shared_alpha = Some(Arc::new(alpha));
        self
    }

    fn ensure_shared_alpha(&mut self) -> Result<()> {
        if self.shared_alpha.is_none() && !self.settings.alpha_per_run {
            let stage1 = TrainConfig {
                learning_rate: self.settings.alpha_learning_rate,
                beta: 0.0,
                ..self.settings.base.clone()
            };
            let est = estimate_alpha(
                &self.split.train,
                &stage1,
                self.settings.top_k,
                &self.settings.lasso,
            )?;
            self.shared_alpha = Some(Arc::new(est.alpha));
        }
        Ok(())
    }

    pub fn shared_alpha(&self) -> Option<&AlphaCoefficients> {
        self.shared_alpha.as_deref()
    }

    fn execute(&mut self, plan: Vec<Planned>, out: Option<&Path>) -> Result<SweepReport> {
        let existing = match out {
            Some(p) if p.exists() && std::fs::metadata(p)?.len() > 0 => SweepReport::read_csv(p)?,
            _ => SweepReport::default(),
        };
        let done: HashSet<_> = existing.rows.iter().map(|r| r.key.fingerprint()).collect();
        let pending: Vec<Planned> = plan
            .iter()
            .copied()
            .filter(|p| !done.contains(&p.key.fingerprint()))
            .collect();
        if pending
            .iter()
            .any(|p| p.key.method == Method::Zipf && p.alias_of.is_none())
        {
            self.ensure_shared_alpha()?;
        }

        let mut writer = match out {
            Some(p) => {
                let fresh = !p.exists() || std::fs::metadata(p)?.len() == 0;
                let file = OpenOptions::new().create(true).append(true).open(p)?;
                let mut w = csv::Writer::from_writer(file);
                if fresh {
                    w.write_record(REPORT_HEADER)?;
                    w.flush()?;
                }
                Some(w)
            }
            None => None,
        };

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.settings.workers)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?;
        let batch = pool.current_num_threads().max(1);

        let trained: Vec<RunKey> = pending
            .iter()
            .filter(|p| p.alias_of.is_none())
            .map(|p| p.key)
            .collect();
        let mut results: Vec<SweepRow> = existing.rows.clone();
        for chunk in trained.chunks(batch) {
            let rows: Vec<SweepRow> = pool.install(|| {
                chunk
                    .par_iter()
                    .map(|key| {
                        run_one(
                            self.split,
                            &self.settings,
                            &self.registry,
                            self.shared_alpha.as_ref(),
                            key,
                        )
                    })
                    .collect()
            });
            if let Some(w) = writer.as_mut() {
                for row in &rows {
                    w.write_record(row.record())?;
                }
                w.flush()?;
            }
            results.extend(rows);
        }

        for p in pending.iter().filter(|p| p.alias_of.is_some()) {
            let source = p.alias_of.expect("filtered");
            let Some(src) = results
                .iter()
                .find(|r| r.key.fingerprint() == source.fingerprint())
            else {
                continue;
            };
            let row = SweepRow {
                key: p.key,
                ..src.clone()
            };
            if let Some(w) = writer.as_mut() {
                w.write_record(row.record())?;
                w.flush()?;
            }
            results.push(row);
        }

        // Report in plan order, whatever the completion order was.
        let rows = plan
            .iter()
            .filter_map(|p| {
                results
                    .iter()
                    .find(|r| r.key.fingerprint() == p.key.fingerprint())
                    .cloned()
            })
            .collect();
        Ok(SweepReport { rows })
    }

    /// Vanilla and zipf (at `beta`) for every learning rate in `lr_grid`.
    pub fn run_lr_sweep(
        &mut self,
        lr_grid: &[f64],
        beta: f64,
        out: Option<&Path>,
    ) -> Result<SweepReport> {
        if lr_grid.is_empty() {
            return Err(Error::invalid("learning-rate grid is empty"));
        }
        let mut plan = Vec::new();
        for &lr in lr_grid {
            plan.push(Planned {
                key: self.settings.key(Method::Vanilla, lr, 0.0),
                alias_of: None,
            });
            plan.push(Planned {
                key: self.settings.key(Method::Zipf, lr, beta),
                alias_of: None,
            });
        }
        self.execute(plan, out)
    }

    /// One vanilla reference run at `lr`, then zipf for every beta in the grid.
    pub fn run_beta_sweep(
        &mut self,
        beta_grid: &[f64],
        lr: f64,
        out: Option<&Path>,
    ) -> Result<SweepReport> {
        if beta_grid.is_empty() {
            return Err(Error::invalid("beta grid is empty"));
        }
        let mut plan = vec![Planned {
            key: self.settings.key(Method::Vanilla, lr, 0.0),
            alias_of: None,
        }];
        for &b in beta_grid {
            plan.push(Planned {
                key: self.settings.key(Method::Zipf, lr, b),
                alias_of: None,
            });
        }
        self.execute(plan, out)
    }

    /// Both methods at every beta of the grid. Vanilla is trained once and its
    /// measurements are repeated under each beta label.
    pub fn run_matthew_comparison(
        &mut self,
        beta_grid: &[f64],
        lr: f64,
        out: Option<&Path>,
    ) -> Result<SweepReport> {
        if beta_grid.is_empty() {
            return Err(Error::invalid("beta grid is empty"));
        }
        let reference = self.settings.key(Method::Vanilla, lr, 0.0);
        let mut plan = vec![Planned {
            key: reference,
            alias_of: None,
        }];
        for &b in beta_grid {
            if b != 0.0 {
                plan.push(Planned {
                    key: self.settings.key(Method::Vanilla, lr, b),
                    alias_of: Some(reference),
                });
            }
            plan.push(Planned {
                key: self.settings.key(Method::Zipf, lr, b),
                alias_of: None,
            });
        }
        self.execute(plan, out)
    }
}
