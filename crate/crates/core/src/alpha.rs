//! Stage one of Zipf MF: rank items by how often a vanilla model recommends
//! them, then fit per-user coefficients `alpha` so that
//! `rank_j ~ sum_i alpha_i U_i . V_j`, with an L1 penalty.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::data::RatingsDataset;
use crate::engine::{train_vanilla, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::model::{dot, FactorModel};
use crate::powerlaw::{occurrence_profile, OccurrenceProfile};

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaCoefficients {
    pub alpha: Vec<f64>,
    pub lasso_lambda: Option<f64>,
    /// FNV-1a digest of the stage-one model the coefficients were fitted on.
    pub source_model_hash: Option<u64>,
    pub converged: bool,
}

impl AlphaCoefficients {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["user_index", "alpha"])?;
        for (i, a) in self.alpha.iter().enumerate() {
            out.write_record([i.to_string(), a.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads `user_index,alpha` rows. Indices must cover `0..m` exactly once.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if header != ["user_index", "alpha"] {
            return Err(Error::invalid(format!(
                "alpha file header must be `user_index,alpha`, found `{}`",
                header.join(",")
            )));
        }
        let mut pairs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |what: &str| Error::invalid(format!("alpha file line {line}: bad {what}"));
            let i: usize = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad("user_index"))?;
            let a: f64 = rec
                .get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad("alpha"))?;
            if !a.is_finite() {
                return Err(bad("alpha (non-finite)"));
            }
            pairs.push((i, a));
        }
        let mut alpha = vec![f64::NAN; pairs.len()];
        for (i, a) in pairs {
            match alpha.get_mut(i) {
                Some(slot) if slot.is_nan() => *slot = a,
                _ => {
                    return Err(Error::invalid(format!(
                        "alpha file: user_index {i} repeated or out of range"
                    )))
                }
            }
        }
        Ok(AlphaCoefficients {
            alpha,
            lasso_lambda: None,
            source_model_hash: None,
            converged: true,
        })
    }
}

pub fn model_hash(model: &FactorModel) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let header = [
        model.num_users() as u64,
        model.num_items() as u64,
        model.dim() as u64,
    ];
    let bytes = header
        .iter()
        .flat_map(|x| x.to_le_bytes())
        .chain(
            model
                .user_factors()
                .iter()
                .flat_map(|x| x.to_bits().to_le_bytes()),
        )
        .chain(
            model
                .item_factors()
                .iter()
                .flat_map(|x| x.to_bits().to_le_bytes()),
        );
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Popularity ranks, 1 = most recommended. Equal counts rank by lower item
/// index, so zero-count items come last in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTargets {
    pub targets: Vec<usize>,
    pub profile: OccurrenceProfile,
}

pub fn ranks_from_counts(counts: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; counts.len()];
    for (pos, j) in order.into_iter().enumerate() {
        ranks[j] = pos + 1;
    }
    ranks
}

pub fn rank_targets(stage1: &FactorModel, k: usize) -> Result<RankTargets> {
    let profile = occurrence_profile(stage1, k)?;
    Ok(RankTargets {
        targets: ranks_from_counts(&profile.counts),
        profile,
    })
}

/// Dense design matrix stored by column; `column(i)[j] = A[j][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_columns(rows: usize, columns: Vec<Vec<f64>>) -> Result<Self> {
        let cols = columns.len();
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::invalid("design columns differ in length"));
        }
        Ok(DesignMatrix {
            rows,
            cols,
            data: columns.into_iter().flatten().collect(),
        })
    }

    /// Build from row-major `rows x cols` entries.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::invalid("design entry count does not match shape"));
        }
        let columns = (0..cols)
            .map(|i| (0..rows).map(|j| entries[j * cols + i]).collect())
            .collect();
        Self::from_columns(rows, columns)
    }

    /// `A[j][i] = U_i . V_j` for the given model.
    pub fn from_model(model: &FactorModel) -> Self {
        let n = model.num_items();
        let columns = (0..model.num_users())
            .into_par_iter()
            .map(|i| {
                let u = model.user(i);
                (0..n).map(|j| dot(u, model.item(j))).collect()
            })
            .collect();
        Self::from_columns(n, columns).expect("columns built with n rows")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.data[i * self.rows..(i + 1) * self.rows]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                out.iter_mut()
                    .zip(self.column(i))
                    .for_each(|(o, a)| *o += a * xi);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    /// Objective after each completed sweep.
    pub objective: Vec<f64>,
}

/// `sum_j (r_j - (A a)_j)^2 + lambda |a|_1`.
pub fn lasso_objective(design: &DesignMatrix, targets: &[f64], coef: &[f64], lambda: f64) -> f64 {
    let fit = design.mul_vec(coef);
    let sse: f64 = targets
        .iter()
        .zip(&fit)
        .map(|(r, f)| (r - f) * (r - f))
        .sum();
    sse + lambda * coef.iter().map(|a| a.abs()).sum::<f64>()
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Cyclic coordinate descent on the un-halved Lasso objective.
///
/// Each coordinate takes the exact minimizer
/// `sign(rho) max(0, |rho| - lambda/2) / |A_i|^2`. The solve stops once a sweep
/// moves no coefficient by `tol` or more and the optimality conditions hold to
/// `tol`, or after `max_iter` sweeps.
pub fn solve_lasso(
    design: &DesignMatrix,
    targets: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LassoSolution> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!(
            "lasso lambda must be non-negative, got {lambda}"
        )));
    }
    if targets.len() != design.rows() {
        return Err(Error::invalid(format!(
            "{} targets for a design with {} rows",
            targets.len(),
            design.rows()
        )));
    }
    if design.data.iter().chain(targets).any(|x| !x.is_finite()) {
        return Err(Error::invalid("design and targets must be finite"));
    }
    let m = design.cols();
    let col_sq: Vec<f64> = (0..m)
        .map(|i| dot(design.column(i), design.column(i)))
        .collect();
    let mut coef = vec![0.0; m];
    let mut resid = targets.to_vec();
    let mut objective = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < max_iter {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for i in 0..m {
            if col_sq[i] == 0.0 {
                continue;
            }
            let col = design.column(i);
            let old = coef[i];
            let rho = dot(col, &resid) + col_sq[i] * old;
            let new = soft_threshold(rho, lambda / 2.0) / col_sq[i];
            let delta = new - old;
            if delta != 0.0 {
                resid.iter_mut().zip(col).for_each(|(r, a)| *r -= a * delta);
                coef[i] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        let sse: f64 = resid.iter().map(|r| r * r).sum();
        objective.push(sse + lambda * coef.iter().map(|a| a.abs()).sum::<f64>());
        // Step size and optimality residual must both be below `tol`.
        if max_change < tol && kkt_violation(design, targets, &coef, lambda) <= tol {
            converged = true;
            break;
        }
    }
    Ok(LassoSolution {
        coefficients: coef,
        converged,
        sweeps,
        objective,
    })
}

/// Largest violation of the Lasso optimality conditions at `coef`.
pub fn kkt_violation(design: &DesignMatrix, targets: &[f64], coef: &[f64], lambda: f64) -> f64 {
    let fit = design.mul_vec(coef);
    let resid: Vec<f64> = fit.iter().zip(targets).map(|(f, r)| f - r).collect();
    (0..design.cols())
        .map(|i| {
            let g = 2.0 * dot(design.column(i), &resid);
            if coef[i] != 0.0 {
                (g + lambda * coef[i].signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoConfig {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            lambda: DEFAULT_LAMBDA,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Fit alpha on an already trained stage-one model.
pub fn alpha_from_model(
    stage1: &FactorModel,
    k: usize,
    lasso: &LassoConfig,
) -> Result<AlphaCoefficients> {
    let ranks = rank_targets(stage1, k)?;
    let design = DesignMatrix::from_model(stage1);
    let targets: Vec<f64> = ranks.targets.iter().map(|&r| r as f64).collect();
    let sol = solve_lasso(&design, &targets, lasso.lambda, lasso.tol, lasso.max_iter)?;
    Ok(AlphaCoefficients {
        alpha: sol.coefficients,
        lasso_lambda: Some(lasso.lambda),
        source_model_hash: Some(model_hash(stage1)),
        converged: sol.converged,
    })
}

pub struct AlphaEstimate {
    pub alpha: AlphaCoefficients,
    pub stage1: TrainOutcome,
}

/// Vanilla training, rank extraction and the Lasso fit in one call.
pub fn estimate_alpha(
    train: &RatingsDataset,
    stage1: &TrainConfig,
    k: usize,
    lasso: &LassoConfig,
) -> Result<AlphaEstimate> {
    let outcome = train_vanilla(train, stage1)?;
    let alpha = alpha_from_model(&outcome.model, k, lasso)?;
    Ok(AlphaEstimate {
        alpha,
        stage1: outcome,
    })
}
