//! Latent-factor model with cosine-normalized predictions.

use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::RatingScale;
use crate::error::{Error, Result};

/// Row norms below this are treated as degenerate.
pub const MIN_ROW_NORM: f64 = 1e-12;

pub const INIT_LOW: f64 = 0.1;
pub const INIT_HIGH: f64 = 0.9;

const MAGIC: &[u8; 8] = b"ZIPFMF01";

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Draw one entry from the open interval (INIT_LOW, INIT_HIGH).
pub(crate) fn init_entry<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let x = rng.gen_range(INIT_LOW..INIT_HIGH);
        if x > INIT_LOW {
            return x;
        }
    }
}

/// User factors `U` (m x d) and item factors `V` (n x d), stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    num_users: usize,
    num_items: usize,
    dim: usize,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    scale: RatingScale,
}

impl FactorModel {
    pub fn init(
        num_users: usize,
        num_items: usize,
        dim: usize,
        seed: u64,
        scale: RatingScale,
    ) -> Result<Self> {
        if num_users == 0 || num_items == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "model shape must be positive, got m={num_users} n={num_items} d={dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let user_factors = (0..num_users * dim).map(|_| init_entry(&mut rng)).collect();
        let item_factors = (0..num_items * dim).map(|_| init_entry(&mut rng)).collect();
        Ok(FactorModel {
            num_users,
            num_items,
            dim,
            user_factors,
            item_factors,
            scale,
        })
    }

    /// Build from explicit row-major factor buffers.
    pub fn from_parts(
        num_users: usize,
        num_items: usize,
        dim: usize,
        user_factors: Vec<f64>,
        item_factors: Vec<f64>,
        scale: RatingScale,
    ) -> Result<Self> {
        if num_users == 0 || num_items == 0 || dim == 0 {
            return Err(Error::invalid("model shape must be positive"));
        }
        if user_factors.len() != num_users * dim || item_factors.len() != num_items * dim {
            return Err(Error::invalid(format!(
                "factor buffers have {} and {} entries, expected {} and {}",
                user_factors.len(),
                item_factors.len(),
                num_users * dim,
                num_items * dim
            )));
        }
        if user_factors
            .iter()
            .chain(&item_factors)
            .any(|x| !x.is_finite())
        {
            return Err(Error::invalid("factor entries must be finite"));
        }
        Ok(FactorModel {
            num_users,
            num_items,
            dim,
            user_factors,
            item_factors,
            scale,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn user(&self, i: usize) -> &[f64] {
        &self.user_factors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn item(&self, j: usize) -> &[f64] {
        &self.item_factors[j * self.dim..(j + 1) * self.dim]
    }

    pub fn user_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.user_factors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn item_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.item_factors[j * self.dim..(j + 1) * self.dim]
    }

    /// Mutable access to one user row and one item row at once.
    pub fn rows_mut(&mut self, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
        let d = self.dim;
        (
            &mut self.user_factors[i * d..(i + 1) * d],
            &mut self.item_factors[j * d..(j + 1) * d],
        )
    }

    pub fn user_factors(&self) -> &[f64] {
        &self.user_factors
    }

    pub fn item_factors(&self) -> &[f64] {
        &self.item_factors
    }

    fn check_index(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.num_users || j >= self.num_items {
            return Err(Error::invalid(format!(
                "index ({i}, {j}) outside {}x{}",
                self.num_users, self.num_items
            )));
        }
        Ok(())
    }

    /// `U_i . V_j / (|U_i| |V_j|)`.
    pub fn cosine_score(&self, i: usize, j: usize) -> Result<f64> {
        self.check_index(i, j)?;
        cosine(self.user(i), self.item(j))
            .ok_or_else(|| Error::NumericalDegeneracy(format!("zero-norm row for pair ({i}, {j})")))
    }

    /// Cosine rescaled by R_max and clamped into the rating scale.
    pub fn predict_rating(&self, i: usize, j: usize) -> Result<f64> {
        let c = self.cosine_score(i, j)?;
        Ok(self.scale.clamp(self.scale.max * c))
    }

    pub fn all_finite(&self) -> bool {
        self.user_factors
            .iter()
            .chain(&self.item_factors)
            .all(|x| x.is_finite())
    }

    /// Serialize as little-endian binary: magic, m, n, d, scale, then U and V row-major.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.num_users, self.num_items, self.dim] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.scale.min.to_le_bytes())?;
        w.write_all(&self.scale.max.to_le_bytes())?;
        for x in self.user_factors.iter().chain(&self.item_factors) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let mut buf = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut buf)?;
            Ok(u64::from_le_bytes(buf))
        };
        let m = next_u64(&mut r)? as usize;
        let n = next_u64(&mut r)? as usize;
        let d = next_u64(&mut r)? as usize;
        let min = f64::from_bits(next_u64(&mut r)?);
        let max = f64::from_bits(next_u64(&mut r)?);
        let scale = RatingScale::new(min, max).map_err(|e| Error::ModelFormat(e.to_string()))?;
        let read_block = |r: &mut R, len: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; len * 8];
            r.read_exact(&mut bytes)?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let u = read_block(
            &mut r,
            m.checked_mul(d)
                .ok_or_else(|| Error::ModelFormat("shape overflow".into()))?,
        )?;
        let v = read_block(
            &mut r,
            n.checked_mul(d)
                .ok_or_else(|| Error::ModelFormat("shape overflow".into()))?,
        )?;
        Self::from_parts(m, n, d, u, v, scale).map_err(|e| Error::ModelFormat(e.to_string()))
    }
}

pub(crate) fn cosine(u: &[f64], v: &[f64]) -> Option<f64> {
    let (nu, nv) = (norm(u), norm(v));
    if nu < MIN_ROW_NORM || nv < MIN_ROW_NORM {
        return None;
    }
    Some(dot(u, v) / (nu * nv))
}
