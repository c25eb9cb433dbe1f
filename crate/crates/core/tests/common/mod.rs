#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zipf_mf::alpha::DesignMatrix;
use zipf_mf::data::RatingScale;
use zipf_mf::model::FactorModel;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Model with Gaussian factors; some items duplicate earlier ones to force score ties.
pub fn random_model(rng: &mut ChaCha8Rng, m: usize, n: usize, d: usize) -> FactorModel {
    let u: Vec<f64> = (0..m * d).map(|_| gaussian(rng)).collect();
    let mut v: Vec<f64> = Vec::with_capacity(n * d);
    for j in 0..n {
        if j > 0 && rng.gen_bool(0.2) {
            let src = rng.gen_range(0..j);
            let row: Vec<f64> = v[src * d..(src + 1) * d].to_vec();
            v.extend(row);
        } else {
            v.extend((0..d).map(|_| gaussian(rng)));
        }
    }
    FactorModel::from_parts(m, n, d, u, v, RatingScale::MOVIELENS).unwrap()
}

/// Dense top-K counting: score every pair, fully sort each user's row.
pub fn brute_force_counts(model: &FactorModel, k: usize) -> Vec<u64> {
    let mut counts = vec![0u64; model.num_items()];
    for i in 0..model.num_users() {
        let mut row: Vec<(f64, usize)> = (0..model.num_items())
            .map(|j| (model.cosine_score(i, j).unwrap(), j))
            .collect();
        row.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in row.iter().take(k) {
            counts[j] += 1;
        }
    }
    counts
}

/// Least squares through the normal equations, Gaussian elimination with partial pivoting.
pub fn normal_equations(design: &DesignMatrix, targets: &[f64]) -> Vec<f64> {
    let m = design.cols();
    let mut a = vec![vec![0.0; m + 1]; m];
    for p in 0..m {
        for q in 0..m {
            a[p][q] = (0..design.rows())
                .map(|j| design.get(j, p) * design.get(j, q))
                .sum();
        }
        a[p][m] = (0..design.rows())
            .map(|j| design.get(j, p) * targets[j])
            .sum();
    }
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        for row in 0..m {
            if row != col {
                let f = a[row][col] / a[col][col];
                for c in col..=m {
                    a[row][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..m).map(|p| a[p][m] / a[p][p]).collect()
}

pub fn random_design(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DesignMatrix {
    let entries: Vec<f64> = (0..rows * cols).map(|_| gaussian(rng)).collect();
    DesignMatrix::from_row_major(rows, cols, &entries).unwrap()
}
