//! Rating data: MovieLens ingestion, contiguous id maps and seeded holdout splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const RATINGS_HEADER: [&str; 4] = ["userId", "movieId", "rating", "timestamp"];
pub const MOVIES_HEADER: [&str; 3] = ["movieId", "title", "genres"];

/// Closed interval of admissible ratings. `max` doubles as the normalizer R_max.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl RatingScale {
    pub const MOVIELENS: RatingScale = RatingScale { min: 0.5, max: 5.0 };

    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || min >= max || max <= 0.0 {
            return Err(Error::invalid(format!(
                "rating scale needs min < max and max > 0, got [{min}, {max}]"
            )));
        }
        Ok(RatingScale { min, max })
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

/// External id <-> contiguous index bijections for users and items.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
    user_index: HashMap<u64, usize>,
    item_index: HashMap<u64, usize>,
}

impl Catalog {
    /// Indices are assigned in ascending external-id order.
    pub fn from_ids(users: &BTreeSet<u64>, items: &BTreeSet<u64>) -> Self {
        let user_ids: Vec<u64> = users.iter().copied().collect();
        let item_ids: Vec<u64> = items.iter().copied().collect();
        let user_index = user_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let item_index = item_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        Catalog {
            user_ids,
            item_ids,
            user_index,
            item_index,
        }
    }

    /// Identity mapping: external id `k` is index `k`.
    pub fn identity(num_users: usize, num_items: usize) -> Self {
        let users = (0..num_users as u64).collect();
        let items = (0..num_items as u64).collect();
        Self::from_ids(&users, &items)
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_index(&self, id: u64) -> Option<usize> {
        self.user_index.get(&id).copied()
    }

    pub fn item_index(&self, id: u64) -> Option<usize> {
        self.item_index.get(&id).copied()
    }

    pub fn user_id(&self, index: usize) -> Option<u64> {
        self.user_ids.get(index).copied()
    }

    pub fn item_id(&self, index: usize) -> Option<u64> {
        self.item_ids.get(index).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingsDataset {
    ratings: Vec<Rating>,
    catalog: Arc<Catalog>,
    scale: RatingScale,
}

impl RatingsDataset {
    pub fn new(ratings: Vec<Rating>, catalog: Arc<Catalog>, scale: RatingScale) -> Result<Self> {
        let (m, n) = (catalog.num_users(), catalog.num_items());
        for (k, r) in ratings.iter().enumerate() {
            if r.user >= m || r.item >= n {
                return Err(Error::invalid(format!(
                    "rating #{k} has index ({}, {}) outside {m}x{n}",
                    r.user, r.item
                )));
            }
            if !scale.contains(r.value) {
                return Err(Error::invalid(format!(
                    "rating #{k} value {} outside scale [{}, {}]",
                    r.value, scale.min, scale.max
                )));
            }
        }
        Ok(RatingsDataset {
            ratings,
            catalog,
            scale,
        })
    }

    /// Dataset over an identity catalog, mostly for synthetic data and tests.
    pub fn from_triples(
        num_users: usize,
        num_items: usize,
        triples: impl IntoIterator<Item = (usize, usize, f64)>,
        scale: RatingScale,
    ) -> Result<Self> {
        let ratings = triples
            .into_iter()
            .map(|(user, item, value)| Rating { user, item, value })
            .collect();
        Self::new(
            ratings,
            Arc::new(Catalog::identity(num_users, num_items)),
            scale,
        )
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.catalog.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.catalog.num_items()
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    fn with_ratings(&self, ratings: Vec<Rating>) -> Self {
        RatingsDataset {
            ratings,
            catalog: Arc::clone(&self.catalog),
            scale: self.scale,
        }
    }

    /// Seeded global holdout. The ratings are put in canonical order before
    /// shuffling, so the result does not depend on input order.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<DataSplit> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "test fraction must lie in (0, 1), got {test_fraction}"
            )));
        }
        if self.ratings.is_empty() {
            return Err(Error::invalid("cannot split an empty dataset"));
        }
        let mut canonical = self.ratings.clone();
        canonical.sort_by(|a, b| {
            (a.user, a.item)
                .cmp(&(b.user, b.item))
                .then(a.value.total_cmp(&b.value))
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        canonical.shuffle(&mut rng);

        let total = canonical.len();
        let n_test = (test_fraction * total as f64).round() as usize;
        if n_test == 0 || n_test >= total {
            return Err(Error::invalid(format!(
                "test fraction {test_fraction} on {total} ratings leaves an empty {} set",
                if n_test == 0 { "test" } else { "train" }
            )));
        }
        let train = canonical.split_off(n_test);
        Ok(DataSplit {
            train: self.with_ratings(train),
            test: self.with_ratings(canonical),
            seed,
            test_fraction,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: RatingsDataset,
    pub test: RatingsDataset,
    pub seed: u64,
    pub test_fraction: f64,
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    let got: Vec<&str> = got.iter().map(str::trim).collect();
    if got != want {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                want.join(","),
                got.join(",")
            ),
        });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("missing field `{name}`"),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse `{name}` from `{raw}`"),
    })
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?)
}

fn read_movie_ids(path: &Path) -> Result<BTreeSet<u64>> {
    let mut rdr = open_csv(path)?;
    check_header(path, rdr.headers()?, &MOVIES_HEADER)?;
    let mut ids = BTreeSet::new();
    let mut rec = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut rec).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != MOVIES_HEADER.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        ids.insert(field::<u64>(path, line, &rec, 0, "movieId")?);
    }
    if ids.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(ids)
}

/// Load a MovieLens `ratings.csv`, optionally with the `movies.csv` catalog
/// that fixes the item universe. Timestamps are parsed and discarded.
pub fn load_movielens(ratings_path: &Path, movies_path: Option<&Path>) -> Result<RatingsDataset> {
    let scale = RatingScale::MOVIELENS;
    let catalog_items = movies_path.map(read_movie_ids).transpose()?;

    let mut rdr = open_csv(ratings_path)?;
    check_header(ratings_path, rdr.headers()?, &RATINGS_HEADER)?;

    // (user, movie) -> rating; later duplicates overwrite earlier ones.
    let mut raw: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    let mut rec = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut rec).map_err(|e| Error::Parse {
            path: ratings_path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != RATINGS_HEADER.len() {
            return Err(Error::Parse {
                path: ratings_path.to_path_buf(),
                line,
                message: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let user: u64 = field(ratings_path, line, &rec, 0, "userId")?;
        let movie: u64 = field(ratings_path, line, &rec, 1, "movieId")?;
        let value: f64 = field(ratings_path, line, &rec, 2, "rating")?;
        let _timestamp: i64 = field(ratings_path, line, &rec, 3, "timestamp")?;
        if !scale.contains(value) {
            return Err(Error::RatingOutOfScale {
                path: ratings_path.to_path_buf(),
                line,
                value,
                min: scale.min,
                max: scale.max,
            });
        }
        if let Some(items) = &catalog_items {
            if !items.contains(&movie) {
                return Err(Error::Parse {
                    path: ratings_path.to_path_buf(),
                    line,
                    message: format!("movieId {movie} is not in the movie catalog"),
                });
            }
        }
        raw.insert((user, movie), value);
    }
    if raw.is_empty() {
        return Err(Error::EmptyFile {
            path: ratings_path.to_path_buf(),
        });
    }

    let users: BTreeSet<u64> = raw.keys().map(|&(u, _)| u).collect();
    let items = catalog_items.unwrap_or_else(|| raw.keys().map(|&(_, i)| i).collect());
    let catalog = Catalog::from_ids(&users, &items);
    let ratings = raw
        .into_iter()
        .map(|((u, i), value)| Rating {
            user: catalog.user_index(u).expect("user collected above"),
            item: catalog.item_index(i).expect("item checked above"),
            value,
        })
        .collect();
    RatingsDataset::new(ratings, Arc::new(catalog), scale)
}

/// `ratings.csv` and `movies.csv` inside `dir`; the movies file is optional.
pub fn load_movielens_dir(dir: &Path) -> Result<RatingsDataset> {
    let movies = dir.join("movies.csv");
    load_movielens(
        &dir.join("ratings.csv"),
        movies.exists().then_some(movies.as_path()),
    )
}
