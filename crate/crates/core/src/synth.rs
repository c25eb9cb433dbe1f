//! Synthetic rating data with MovieLens-like shape: Zipf-distributed item
//! popularity, heavy-tailed user activity and half-star ratings driven by a
//! hidden cosine factor model.

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{RatingScale, RatingsDataset};
use crate::error::{Error, Result};
use crate::model::cosine;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    /// Mean number of ratings per user.
    pub mean_ratings_per_user: f64,
    pub min_ratings_per_user: usize,
    /// Exponent of the item popularity law.
    pub popularity_exponent: f64,
    pub latent_dim: usize,
    /// Standard deviation of rating noise, in stars.
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Same user and item counts as ml-latest-small, roughly the same density.
    pub fn movielens_small() -> Self {
        SynthConfig {
            num_users: 610,
            num_items: 9742,
            mean_ratings_per_user: 165.0,
            min_ratings_per_user: 20,
            popularity_exponent: 1.0,
            latent_dim: 8,
            noise: 0.6,
            seed: 42,
        }
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn generate(config: &SynthConfig) -> Result<RatingsDataset> {
    let SynthConfig {
        num_users: m,
        num_items: n,
        latent_dim: d,
        ..
    } = *config;
    if m == 0 || n == 0 || d == 0 {
        return Err(Error::invalid("synthetic shape must be positive"));
    }
    if config.min_ratings_per_user > n {
        return Err(Error::invalid(
            "minimum ratings per user exceeds item count",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scale = RatingScale::MOVIELENS;

    // Hidden taste vectors share a positive common direction so ratings lean high.
    let users: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            (0..d)
                .map(|k| if k == 0 { 2.0 } else { 0.0 } + gaussian(&mut rng))
                .collect()
        })
        .collect();
    let items: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|k| if k == 0 { 2.0 } else { 0.0 } + gaussian(&mut rng))
                .collect()
        })
        .collect();

    // Popularity follows a Zipf law over a random permutation of items.
    let mut perm: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
    let mut weights = vec![0.0; n];
    for (rank, &j) in perm.iter().enumerate() {
        weights[j] = ((rank + 1) as f64).powf(-config.popularity_exponent);
    }
    let popularity = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;

    let mut triples = Vec::new();
    let mut seen = vec![usize::MAX; n];
    for (i, u) in users.iter().enumerate() {
        // Log-normal activity, floored at the minimum.
        let sigma = 1.0;
        let mu = (config.mean_ratings_per_user.max(1.0)).ln() - sigma * sigma / 2.0;
        let count = ((mu + sigma * gaussian(&mut rng)).exp().round() as usize)
            .clamp(config.min_ratings_per_user, n);
        let mut picked = 0;
        let mut attempts = 0;
        while picked < count {
            attempts += 1;
            let j = if attempts > 50 * count {
                rng.gen_range(0..n)
            } else {
                popularity.sample(&mut rng)
            };
            if seen[j] == i {
                continue;
            }
            seen[j] = i;
            picked += 1;
            let c = cosine(u, &items[j]).unwrap_or(0.0);
            let raw = 3.0 + 2.5 * c + config.noise * gaussian(&mut rng);
            let stars = (raw * 2.0).round() / 2.0;
            triples.push((i, j, scale.clamp(stars)));
        }
    }
    RatingsDataset::from_triples(m, n, triples, scale)
}

/// Write `ratings.csv` and `movies.csv` in MovieLens layout under `dir`.
pub fn write_movielens_dir(data: &RatingsDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let catalog = data.catalog();
    let mut movies = csv::Writer::from_path(dir.join("movies.csv"))?;
    movies.write_record(["movieId", "title", "genres"])?;
    for j in 0..data.num_items() {
        let id = catalog.item_id(j).expect("index in range") + 1;
        movies.write_record([
            id.to_string(),
            format!("Item {id}"),
            "(no genres listed)".into(),
        ])?;
    }
    movies.flush()?;
    let mut ratings = csv::Writer::from_path(dir.join("ratings.csv"))?;
    ratings.write_record(["userId", "movieId", "rating", "timestamp"])?;
    for r in data.ratings() {
        // MovieLens ids start at 1.
        let user = catalog.user_id(r.user).expect("index in range") + 1;
        let item = catalog.item_id(r.item).expect("index in range") + 1;
        ratings.write_record([
            user.to_string(),
            item.to_string(),
            format!("{:.1}", r.value),
            "0".into(),
        ])?;
    }
    ratings.flush()?;
    Ok(())
}
