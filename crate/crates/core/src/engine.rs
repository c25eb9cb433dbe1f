//! SGD training for cosine matrix factorization, with and without the Zipf
//! exponent penalty.
//!
//! Each training method is a [`Trainer`] registered by name in a
//! [`TrainerRegistry`], so the CLI and the sweep harness pick them at runtime.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alpha::AlphaCoefficients;
use crate::data::RatingsDataset;
use crate::error::{Error, Result};
use crate::model::{dot, init_entry, norm, FactorModel, MIN_ROW_NORM};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_BETA: f64 = 1e-3;
pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_DIM: usize = 50;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_LOG_GUARD: f64 = 1e-3;

const SHUFFLE_STREAM: u64 = 1;
const JITTER_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta: f64,
    pub epochs: usize,
    pub latent_dim: usize,
    pub rng_seed: u64,
    /// Penalty is skipped when `|ln(alpha_i t0 / n)|` falls below this.
    pub log_guard: f64,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            beta: DEFAULT_BETA,
            epochs: DEFAULT_EPOCHS,
            latent_dim: DEFAULT_DIM,
            rng_seed: DEFAULT_SEED,
            log_guard: DEFAULT_LOG_GUARD,
            shuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent dimension must be at least 1"));
        }
        if !(self.log_guard > 0.0) {
            return Err(Error::invalid(format!(
                "log guard must be positive, got {}",
                self.log_guard
            )));
        }
        Ok(())
    }
}

/// Zipf penalty parameters for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    pub beta: f64,
    /// Coefficient of the current user.
    pub alpha: f64,
    pub num_items: usize,
    pub log_guard: f64,
}

impl Penalty {
    /// `ln(alpha * t0 / n)` when the penalty applies, `None` when the guard fires.
    fn log_arg(&self, t0: f64) -> Option<f64> {
        if self.beta == 0.0 {
            return None;
        }
        let x = self.alpha * t0;
        if !(x > 0.0) {
            return None;
        }
        let l = (x / self.num_items as f64).ln();
        (l.abs() >= self.log_guard && l.is_finite()).then_some(l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradient {
    pub grad_u: Vec<f64>,
    pub grad_v: Vec<f64>,
    pub loss_value: f64,
    pub penalty_active: bool,
}

struct Terms {
    t0: f64,
    t1: f64,
    t2: f64,
}

fn terms(u: &[f64], v: &[f64]) -> Result<Terms> {
    let (t1, t2) = (norm(u), norm(v));
    if t1 < MIN_ROW_NORM || t2 < MIN_ROW_NORM {
        return Err(Error::NumericalDegeneracy(format!(
            "row norm below {MIN_ROW_NORM}: |u| = {t1:e}, |v| = {t2:e}"
        )));
    }
    Ok(Terms {
        t0: dot(u, v),
        t1,
        t2,
    })
}

/// Loss of one observation on the row pair `(u, v)`:
/// `(r - cos)^2 - beta (1 + n / ln(alpha t0 / n))`, the second term only when
/// the penalty is active. Returns the loss and whether the penalty was applied.
pub fn pair_loss(
    u: &[f64],
    v: &[f64],
    r_norm: f64,
    penalty: Option<&Penalty>,
) -> Result<(f64, bool)> {
    let Terms { t0, t1, t2 } = terms(u, v)?;
    let resid = r_norm - t0 / (t1 * t2);
    let mut loss = resid * resid;
    let mut active = false;
    if let Some(p) = penalty {
        if let Some(l) = p.log_arg(t0) {
            loss -= p.beta * (1.0 + p.num_items as f64 / l);
            active = true;
        }
    }
    Ok((loss, active))
}

/// Analytic gradient of [`pair_loss`] with respect to `u` and `v`.
pub fn pair_gradient(
    u: &[f64],
    v: &[f64],
    r_norm: f64,
    penalty: Option<&Penalty>,
) -> Result<SampleGradient> {
    let Terms { t0, t1, t2 } = terms(u, v)?;
    let t3 = t1 * t2;
    let resid = r_norm - t0 / t3;
    let t4 = 2.0 * resid;
    let cu = t0 / (t1 * t1 * t1 * t2);
    let cv = t0 / (t2 * t2 * t2 * t1);
    let mut grad_u: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| -t4 * (vi / t3 - cu * ui))
        .collect();
    let mut grad_v: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| -t4 * (ui / t3 - cv * vi))
        .collect();
    let mut loss = resid * resid;
    let mut active = false;
    if let Some(p) = penalty {
        if let Some(l) = p.log_arg(t0) {
            let n = p.num_items as f64;
            let coef = p.beta * n / (l * l * t0);
            grad_u
                .iter_mut()
                .zip(v)
                .for_each(|(g, &vi)| *g += coef * vi);
            grad_v
                .iter_mut()
                .zip(u)
                .for_each(|(g, &ui)| *g += coef * ui);
            loss -= p.beta * (1.0 + n / l);
            active = true;
        }
    }
    Ok(SampleGradient {
        grad_u,
        grad_v,
        loss_value: loss,
        penalty_active: active,
    })
}

fn penalty_for(
    model: &FactorModel,
    i: usize,
    alpha: Option<&AlphaCoefficients>,
    beta: f64,
    log_guard: f64,
) -> Result<Option<Penalty>> {
    if beta == 0.0 {
        return Ok(None);
    }
    let alpha = alpha.ok_or_else(|| Error::invalid("beta > 0 requires alpha coefficients"))?;
    let a = *alpha
        .alpha
        .get(i)
        .ok_or_else(|| Error::invalid(format!("no alpha coefficient for user {i}")))?;
    Ok(Some(Penalty {
        beta,
        alpha: a,
        num_items: model.num_items(),
        log_guard,
    }))
}

/// Per-sample loss for observation `(i, j)` with normalized rating `r_norm`.
pub fn sample_loss(
    model: &FactorModel,
    i: usize,
    j: usize,
    r_norm: f64,
    alpha: Option<&AlphaCoefficients>,
    beta: f64,
    log_guard: f64,
) -> Result<f64> {
    model.cosine_score(i, j)?;
    let penalty = penalty_for(model, i, alpha, beta, log_guard)?;
    pair_loss(model.user(i), model.item(j), r_norm, penalty.as_ref()).map(|(l, _)| l)
}

pub fn sample_gradient(
    model: &FactorModel,
    i: usize,
    j: usize,
    r_norm: f64,
    alpha: Option<&AlphaCoefficients>,
    beta: f64,
    log_guard: f64,
) -> Result<SampleGradient> {
    model.cosine_score(i, j)?;
    let penalty = penalty_for(model, i, alpha, beta, log_guard)?;
    pair_gradient(model.user(i), model.item(j), r_norm, penalty.as_ref())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sample loss, evaluated before each sample's update.
    pub train_loss: f64,
    /// Share of samples on which the log guard skipped the penalty (0 without a penalty).
    pub penalty_fire_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FactorModel,
    pub trace: Vec<EpochStats>,
}

impl TrainOutcome {
    /// Writes the per-epoch trace as `epoch,train_loss,penalty_fire_fraction`.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "penalty_fire_fraction"])?;
        for s in &self.trace {
            out.write_record([
                s.epoch.to_string(),
                s.train_loss.to_string(),
                s.penalty_fire_fraction.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn rejitter<R: rand::Rng>(row: &mut [f64], rng: &mut R) {
    if norm(row) < MIN_ROW_NORM {
        row.iter_mut().for_each(|x| *x = init_entry(rng));
    }
}

/// Shared SGD loop. `alpha` is consulted only when `config.beta > 0`.
pub fn run_sgd(
    data: &RatingsDataset,
    config: &TrainConfig,
    alpha: Option<&AlphaCoefficients>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let (m, n) = (data.num_users(), data.num_items());
    if config.beta > 0.0 {
        match alpha {
            None => return Err(Error::invalid("beta > 0 requires alpha coefficients")),
            Some(a) if a.alpha.len() != m => {
                return Err(Error::invalid(format!(
                    "alpha has {} coefficients for {m} users",
                    a.alpha.len()
                )))
            }
            _ => {}
        }
    }
    let scale = data.scale();
    let mut model = FactorModel::init(m, n, config.latent_dim, config.rng_seed, scale)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    jitter_rng.set_stream(JITTER_STREAM);

    let ratings = data.ratings();
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    let lr = config.learning_rate;
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        if config.shuffle_each_epoch {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        let mut fired = 0usize;
        for &idx in &order {
            let r = ratings[idx];
            let penalty = match alpha {
                Some(a) if config.beta > 0.0 => Some(Penalty {
                    beta: config.beta,
                    alpha: a.alpha[r.user],
                    num_items: n,
                    log_guard: config.log_guard,
                }),
                _ => None,
            };
            let (u, v) = model.rows_mut(r.user, r.item);
            let g = pair_gradient(u, v, r.value / scale.max, penalty.as_ref()).map_err(|e| {
                Error::Diverged {
                    epoch,
                    reason: e.to_string(),
                }
            })?;
            if penalty.is_some() && !g.penalty_active {
                fired += 1;
            }
            if !g.loss_value.is_finite() || g.grad_u.iter().chain(&g.grad_v).any(|x| !x.is_finite())
            {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!(
                        "non-finite loss or gradient on pair ({}, {})",
                        r.user, r.item
                    ),
                });
            }
            loss_sum += g.loss_value;
            u.iter_mut()
                .zip(&g.grad_u)
                .for_each(|(x, gx)| *x -= lr * gx);
            v.iter_mut()
                .zip(&g.grad_v)
                .for_each(|(x, gx)| *x -= lr * gx);
            if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("factor overflow on pair ({}, {})", r.user, r.item),
                });
            }
            rejitter(u, &mut jitter_rng);
            rejitter(v, &mut jitter_rng);
        }
        let train_loss = loss_sum / ratings.len() as f64;
        if !train_loss.is_finite() || !model.all_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite epoch loss".into(),
            });
        }
        trace.push(EpochStats {
            epoch,
            train_loss,
            penalty_fire_fraction: fired as f64 / ratings.len() as f64,
        });
    }
    Ok(TrainOutcome { model, trace })
}

/// Plain cosine MF: the penalty is ignored regardless of `config.beta`.
pub fn train_vanilla(data: &RatingsDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let config = TrainConfig {
        beta: 0.0,
        ..config.clone()
    };
    run_sgd(data, &config, None)
}

pub fn train_zipf(
    data: &RatingsDataset,
    config: &TrainConfig,
    alpha: &AlphaCoefficients,
) -> Result<TrainOutcome> {
    run_sgd(data, config, Some(alpha))
}

/// A named training method.
pub trait Trainer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether this method needs stage-1 alpha coefficients.
    fn needs_alpha(&self) -> bool {
        false
    }

    fn train(&self, data: &RatingsDataset, config: &TrainConfig) -> Result<TrainOutcome>;
}

pub struct VanillaTrainer;

impl Trainer for VanillaTrainer {
    fn name(&self) -> &'static str {
        "vanilla"
    }

    fn train(&self, data: &RatingsDataset, config: &TrainConfig) -> Result<TrainOutcome> {
        train_vanilla(data, config)
    }
}

pub struct ZipfTrainer {
    alpha: Arc<AlphaCoefficients>,
}

impl ZipfTrainer {
    pub fn new(alpha: Arc<AlphaCoefficients>) -> Self {
        ZipfTrainer { alpha }
    }
}

impl Trainer for ZipfTrainer {
    fn name(&self) -> &'static str {
        "zipf"
    }

    fn needs_alpha(&self) -> bool {
        true
    }

    fn train(&self, data: &RatingsDataset, config: &TrainConfig) -> Result<TrainOutcome> {
        train_zipf(data, config, &self.alpha)
    }
}

/// What a trainer factory may draw on.
#[derive(Default, Clone)]
pub struct TrainerContext {
    pub alpha: Option<Arc<AlphaCoefficients>>,
}

pub type TrainerFactory = fn(&TrainerContext) -> Result<Box<dyn Trainer>>;

pub struct TrainerRegistry {
    factories: BTreeMap<&'static str, TrainerFactory>,
}

impl TrainerRegistry {
    pub fn empty() -> Self {
        TrainerRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: TrainerFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn create(&self, name: &str, ctx: &TrainerContext) -> Result<Box<dyn Trainer>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownTrainer(name.to_string()))?;
        factory(ctx)
    }
}

impl Default for TrainerRegistry {
    fn default() -> Self {
        let mut reg = TrainerRegistry::empty();
        reg.register("vanilla", |_| Ok(Box::new(VanillaTrainer)));
        reg.register("zipf", |ctx| {
            let alpha = ctx
                .alpha
                .clone()
                .ok_or_else(|| Error::invalid("the zipf trainer needs alpha coefficients"))?;
            Ok(Box::new(ZipfTrainer::new(alpha)))
        });
        reg
    }
}
