//! Rating data: loading, filtering, stratified splitting, truncated SVD
//! embeddings and their on-disk formats.
//!
//! The default text layout is MovieLens-100k `u.data`: whitespace-separated
//! `user item rating timestamp`, timestamp ignored.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, Dyn, MatrixView, SVD, U1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RANK: usize = 32;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
/// Items need strictly more ratings than this to survive filtering.
pub const DEFAULT_MIN_ITEM_RATINGS: usize = 5;

const SVD_OVERSAMPLE: usize = 10;
const SVD_POWER_ITERS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl Default for RatingScale {
    fn default() -> Self {
        Self { min: 1.0, max: 5.0 }
    }
}

impl RatingScale {
    pub fn contains(&self, r: f64) -> bool {
        r >= self.min && r <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: u64,
    pub item: u64,
    pub rating: f64,
}

/// Ratings with at most one row per `(user, item)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsTable {
    rows: Vec<Rating>,
    scale: RatingScale,
}

impl RatingsTable {
    /// Builds a table, keeping the last row of any duplicated pair.
    pub fn new(rows: Vec<Rating>, scale: RatingScale) -> Result<Self> {
        for r in &rows {
            if !scale.contains(r.rating) {
                return Err(Error::Data(format!(
                    "rating {} for (user {}, item {}) outside [{}, {}]",
                    r.rating, r.user, r.item, scale.min, scale.max
                )));
            }
        }
        Ok(Self {
            rows: dedup_keep_last(rows),
            scale,
        })
    }

    pub fn rows(&self) -> &[Rating] {
        &self.rows
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn users(&self) -> BTreeSet<u64> {
        self.rows.iter().map(|r| r.user).collect()
    }

    pub fn items(&self) -> BTreeSet<u64> {
        self.rows.iter().map(|r| r.item).collect()
    }

    /// Ratings of one user as `item -> rating`.
    pub fn user_ratings(&self, user: u64) -> BTreeMap<u64, f64> {
        self.rows
            .iter()
            .filter(|r| r.user == user)
            .map(|r| (r.item, r.rating))
            .collect()
    }
}

fn dedup_keep_last(rows: Vec<Rating>) -> Vec<Rating> {
    let mut last: HashMap<(u64, u64), usize> = HashMap::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        last.insert((r.user, r.item), i);
    }
    rows.into_iter()
        .enumerate()
        .filter(|(i, r)| last[&(r.user, r.item)] == *i)
        .map(|(_, r)| r)
        .collect()
}

/// How fields are separated in a ratings file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Delimiter {
    /// Any run of spaces or tabs.
    Whitespace,
    Char(char),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub delimiter: Delimiter,
    pub user_col: usize,
    pub item_col: usize,
    pub rating_col: usize,
    pub skip_header: bool,
    pub scale: RatingScale,
}

impl Default for LoadOptions {
    /// MovieLens-100k `u.data`.
    fn default() -> Self {
        Self {
            delimiter: Delimiter::Whitespace,
            user_col: 0,
            item_col: 1,
            rating_col: 2,
            skip_header: false,
            scale: RatingScale::default(),
        }
    }
}

pub fn load_ratings(path: &Path, opts: &LoadOptions) -> Result<RatingsTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(&text, path, opts)
}

pub fn parse_ratings(text: &str, path: &Path, opts: &LoadOptions) -> Result<RatingsTable> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if (opts.skip_header && lineno == 1) || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match opts.delimiter {
            Delimiter::Whitespace => line.split_whitespace().collect(),
            Delimiter::Char(c) => line.split(c).map(str::trim).collect(),
        };
        let field = |col: usize, what: &str| {
            fields
                .get(col)
                .copied()
                .ok_or_else(|| parse_err(lineno, format!("missing {what} column {col}")))
        };
        let user = field(opts.user_col, "user")?;
        let item = field(opts.item_col, "item")?;
        let rating = field(opts.rating_col, "rating")?;
        let user: u64 = user
            .parse()
            .map_err(|_| parse_err(lineno, format!("invalid user id {user:?}")))?;
        let item: u64 = item
            .parse()
            .map_err(|_| parse_err(lineno, format!("invalid item id {item:?}")))?;
        let rating: f64 = rating
            .parse()
            .ok()
            .filter(|r: &f64| r.is_finite())
            .ok_or_else(|| parse_err(lineno, format!("invalid rating {rating:?}")))?;
        if !opts.scale.contains(rating) {
            return Err(parse_err(
                lineno,
                format!(
                    "rating {rating} outside [{}, {}]",
                    opts.scale.min, opts.scale.max
                ),
            ));
        }
        rows.push(Rating { user, item, rating });
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no ratings found", path.display())));
    }
    RatingsTable::new(rows, opts.scale)
}

/// Dense id space: new id `k` maps back to `original[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IdMap {
    pub original: Vec<u64>,
}

impl IdMap {
    fn from_sorted(ids: impl IntoIterator<Item = u64>) -> Self {
        Self {
            original: ids.into_iter().collect(),
        }
    }

    fn lookup(&self) -> HashMap<u64, u64> {
        self.original
            .iter()
            .enumerate()
            .map(|(new, &old)| (old, new as u64))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }

    /// Composes `self` (new -> mid) after `inner` (mid -> original).
    pub fn compose(&self, inner: &IdMap) -> IdMap {
        IdMap {
            original: self
                .original
                .iter()
                .map(|&mid| inner.original[mid as usize])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reindexed {
    pub table: RatingsTable,
    pub users: IdMap,
    pub items: IdMap,
}

fn reindex(table: &RatingsTable, users: &IdMap, items: &IdMap) -> RatingsTable {
    let u = users.lookup();
    let i = items.lookup();
    RatingsTable {
        rows: table
            .rows
            .iter()
            .filter_map(|r| {
                Some(Rating {
                    user: *u.get(&r.user)?,
                    item: *i.get(&r.item)?,
                    rating: r.rating,
                })
            })
            .collect(),
        scale: table.scale,
    }
}

/// Drops items with `<= min_item_ratings` ratings, then remaps user and item
/// ids to `0..m` / `0..n` in ascending original order.
pub fn filter_and_reindex(table: &RatingsTable, min_item_ratings: usize) -> Result<Reindexed> {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for r in &table.rows {
        *counts.entry(r.item).or_default() += 1;
    }
    let kept = RatingsTable {
        rows: table
            .rows
            .iter()
            .filter(|r| counts[&r.item] > min_item_ratings)
            .copied()
            .collect(),
        scale: table.scale,
    };
    if kept.is_empty() {
        return Err(Error::Data(format!(
            "no item has more than {min_item_ratings} ratings"
        )));
    }
    let users = IdMap::from_sorted(kept.users());
    let items = IdMap::from_sorted(kept.items());
    let table = reindex(&kept, &users, &items);
    Ok(Reindexed {
        table,
        users,
        items,
    })
}

/// Interactions moved by the coverage repair pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRepairs {
    pub moved_to_test: usize,
    pub moved_to_train: usize,
    pub swaps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: RatingsTable,
    pub test: RatingsTable,
    pub repairs: SplitRepairs,
}

#[derive(Default)]
struct Counts {
    user_train: HashMap<u64, usize>,
    user_test: HashMap<u64, usize>,
    item_train: HashMap<u64, usize>,
    item_test: HashMap<u64, usize>,
}

impl Counts {
    fn build(rows: &[Rating], in_test: &[bool]) -> Self {
        let mut c = Counts::default();
        for (r, &t) in rows.iter().zip(in_test) {
            c.add(r, t, 1);
        }
        c
    }

    fn add(&mut self, r: &Rating, test: bool, delta: isize) {
        let (u, i) = if test {
            (&mut self.user_test, &mut self.item_test)
        } else {
            (&mut self.user_train, &mut self.item_train)
        };
        for (map, key) in [(u, r.user), (i, r.item)] {
            let e = map.entry(key).or_default();
            *e = (*e as isize + delta) as usize;
        }
    }

    fn get(map: &HashMap<u64, usize>, k: u64) -> usize {
        map.get(&k).copied().unwrap_or(0)
    }
}

/// Per-user split at `test_fraction`, followed by a repair pass that moves
/// the fewest interactions needed so every user is in both halves and every
/// training item also appears in the test half.
///
/// Each user contributes `ceil(fraction * count)` test rows, clamped to
/// `[1, count - 1]`.
pub fn stratified_split(table: &RatingsTable, test_fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::param(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let rows = table.rows.clone();
    let mut by_user: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (idx, r) in rows.iter().enumerate() {
        by_user.entry(r.user).or_default().push(idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; rows.len()];
    for (user, idxs) in &mut by_user {
        let count = idxs.len();
        if count < 2 {
            return Err(Error::Data(format!(
                "user {user} has a single rating; filter users with fewer than 2 ratings first"
            )));
        }
        idxs.shuffle(&mut rng);
        let n_test = ((test_fraction * count as f64).ceil() as usize).clamp(1, count - 1);
        for &i in &idxs[..n_test] {
            in_test[i] = true;
        }
    }

    let repairs = repair_coverage(&rows, &mut in_test)?;
    let (test_rows, train_rows): (Vec<_>, Vec<_>) =
        rows.into_iter().zip(in_test).partition(|(_, t)| *t);
    let split = SplitPair {
        train: RatingsTable {
            rows: train_rows.into_iter().map(|(r, _)| r).collect(),
            scale: table.scale,
        },
        test: RatingsTable {
            rows: test_rows.into_iter().map(|(r, _)| r).collect(),
            scale: table.scale,
        },
        repairs,
    };
    check_split(&split)?;
    Ok(split)
}

fn repair_coverage(rows: &[Rating], in_test: &mut [bool]) -> Result<SplitRepairs> {
    let mut repairs = SplitRepairs::default();
    let mut counts = Counts::build(rows, in_test);
    let items: BTreeSet<u64> = rows.iter().map(|r| r.item).collect();
    let mut item_rows: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut user_rows: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (idx, r) in rows.iter().enumerate() {
        item_rows.entry(r.item).or_default().push(idx);
        user_rows.entry(r.user).or_default().push(idx);
    }

    let flip = |idx: usize, counts: &mut Counts, in_test: &mut [bool]| {
        counts.add(&rows[idx], in_test[idx], -1);
        in_test[idx] = !in_test[idx];
        counts.add(&rows[idx], in_test[idx], 1);
    };

    // Each pass fixes at least one item or stops; bounded by item count.
    for _ in 0..=items.len() {
        let mut changed = false;
        for &item in &items {
            let train = Counts::get(&counts.item_train, item);
            let test = Counts::get(&counts.item_test, item);
            let candidates = &item_rows[&item];
            if train > 0 && test == 0 {
                // prefer a donor user that keeps a training row, item keeps one too
                let best = candidates
                    .iter()
                    .copied()
                    .filter(|&i| Counts::get(&counts.user_train, rows[i].user) >= 2)
                    .max_by_key(|&i| {
                        (
                            Counts::get(&counts.user_train, rows[i].user),
                            std::cmp::Reverse(i),
                        )
                    });
                if let Some(idx) = best {
                    flip(idx, &mut counts, in_test);
                    repairs.moved_to_test += 1;
                    changed = true;
                    continue;
                }
                // every rater has exactly one training row: swap with one of
                // that user's test rows whose item stays covered in test
                let swap = candidates.iter().copied().find_map(|idx| {
                    let user = rows[idx].user;
                    user_rows[&user]
                        .iter()
                        .copied()
                        .find(|&j| in_test[j] && Counts::get(&counts.item_test, rows[j].item) >= 2)
                        .map(|j| (idx, j))
                });
                match swap {
                    Some((idx, j)) => {
                        flip(idx, &mut counts, in_test);
                        flip(j, &mut counts, in_test);
                        repairs.swaps += 1;
                        changed = true;
                    }
                    None => {
                        return Err(Error::Data(format!(
                            "cannot place item {item} in the test split without emptying a user's training set"
                        )))
                    }
                }
            } else if train == 0 && test >= 2 {
                let best = candidates
                    .iter()
                    .copied()
                    .filter(|&i| Counts::get(&counts.user_test, rows[i].user) >= 2)
                    .max_by_key(|&i| {
                        (
                            Counts::get(&counts.user_test, rows[i].user),
                            std::cmp::Reverse(i),
                        )
                    });
                if let Some(idx) = best {
                    flip(idx, &mut counts, in_test);
                    repairs.moved_to_train += 1;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(repairs);
        }
    }
    Err(Error::Data("split repair did not converge".into()))
}

/// Scans a split for the coverage invariants.
pub fn check_split(split: &SplitPair) -> Result<()> {
    let train_users = split.train.users();
    let test_users = split.test.users();
    if let Some(u) = train_users.symmetric_difference(&test_users).next() {
        return Err(Error::Data(format!(
            "user {u} is missing from one side of the split"
        )));
    }
    let test_items = split.test.items();
    if let Some(i) = split.train.items().difference(&test_items).next() {
        return Err(Error::Data(format!(
            "training item {i} does not appear in the test split"
        )));
    }
    Ok(())
}

/// Drops items that have no training rows (they cannot be embedded) and
/// remaps item ids to `0..n`. Returns the new split, the item map
/// (new -> old) and the number of test rows dropped.
pub fn compact_items(split: &SplitPair) -> (SplitPair, IdMap, usize) {
    let items = IdMap::from_sorted(split.train.items());
    let users = IdMap::from_sorted(split.train.users().union(&split.test.users()).copied());
    let train = reindex(&split.train, &users, &items);
    let test = reindex(&split.test, &users, &items);
    let dropped = split.test.len() - test.len();
    (
        SplitPair {
            train,
            test,
            repairs: split.repairs,
        },
        items,
        dropped,
    )
}

/// Item and user latent factors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    items: DMatrix<f64>,
    users: DMatrix<f64>,
}

pub type RowView<'a> = MatrixView<'a, f64, U1, Dyn, U1, Dyn>;

impl EmbeddingSet {
    pub fn new(items: DMatrix<f64>, users: DMatrix<f64>) -> Result<Self> {
        if items.ncols() != users.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "item rank {} differs from user rank {}",
                items.ncols(),
                users.ncols()
            )));
        }
        if items.nrows() == 0 || users.nrows() == 0 || items.ncols() == 0 {
            return Err(Error::param("embedding matrices must be nonempty"));
        }
        Ok(Self { items, users })
    }

    pub fn n_items(&self) -> usize {
        self.items.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.users.nrows()
    }

    pub fn rank(&self) -> usize {
        self.items.ncols()
    }

    pub fn items(&self) -> &DMatrix<f64> {
        &self.items
    }

    pub fn users(&self) -> &DMatrix<f64> {
        &self.users
    }

    pub fn item(&self, i: usize) -> RowView<'_> {
        self.items.row(i)
    }

    pub fn user(&self, u: usize) -> RowView<'_> {
        self.users.row(u)
    }

    pub fn check_item(&self, i: usize) -> Result<()> {
        if i >= self.n_items() {
            return Err(Error::param(format!(
                "item {i} out of range (n = {})",
                self.n_items()
            )));
        }
        Ok(())
    }

    pub fn check_user(&self, u: usize) -> Result<()> {
        if u >= self.n_users() {
            return Err(Error::param(format!(
                "user {u} out of range (m = {})",
                self.n_users()
            )));
        }
        Ok(())
    }
}

/// Rank-`rank` SVD `A ≈ U diag(s) Vᵀ`, singular values descending.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl TruncatedSvd {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let s =
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.singular_values));
        &self.u * s * self.v.transpose()
    }
}

/// Randomized range finder with power iterations; falls back to a dense
/// SVD when the sketch would cover the full spectrum anyway.
pub fn truncated_svd(a: &DMatrix<f64>, rank: usize, seed: u64) -> Result<TruncatedSvd> {
    let (m, n) = a.shape();
    let full = m.min(n);
    if rank == 0 || rank > full {
        return Err(Error::param(format!(
            "rank {rank} invalid for a {m}x{n} matrix"
        )));
    }
    let sketch = (rank + SVD_OVERSAMPLE).min(full);
    let (u, s, vt) = if sketch >= full {
        let svd = SVD::new(a.clone(), true, true);
        (svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap())
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = DMatrix::from_fn(n, sketch, |_, _| StandardNormal.sample(&mut rng));
        let mut q = (a * omega).qr().q();
        for _ in 0..SVD_POWER_ITERS {
            let z = (a.transpose() * &q).qr().q();
            q = (a * z).qr().q();
        }
        let b = q.transpose() * a;
        let svd = SVD::new(b, true, true);
        (&q * svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap())
    };
    let mut u = u.columns(0, rank).into_owned();
    let mut v = vt.rows(0, rank).transpose();
    // sign convention: largest-magnitude entry of each right vector is positive
    for k in 0..rank {
        let col = v.column(k);
        let pivot = col.iter().copied().fold(
            0.0f64,
            |best, x| {
                if x.abs() > best.abs() {
                    x
                } else {
                    best
                }
            },
        );
        if pivot < 0.0 {
            v.column_mut(k).neg_mut();
            u.column_mut(k).neg_mut();
        }
    }
    Ok(TruncatedSvd {
        u,
        singular_values: s.iter().take(rank).copied().collect(),
        v,
    })
}

/// Dense user × item matrix with zeros for missing ratings. Shape is
/// `(max user id + 1, max item id + 1)`.
pub fn rating_matrix(train: &RatingsTable) -> DMatrix<f64> {
    let m = train.rows.iter().map(|r| r.user + 1).max().unwrap_or(0) as usize;
    let n = train.rows.iter().map(|r| r.item + 1).max().unwrap_or(0) as usize;
    let mut a = DMatrix::zeros(m, n);
    for r in &train.rows {
        a[(r.user as usize, r.item as usize)] = r.rating;
    }
    a
}

/// Truncated SVD embeddings of the training ratings.
///
/// Items are rows of `V √Σ` scaled to unit norm; users are rows of `U √Σ`
/// and keep their scale. Ids must already be dense (see
/// [`filter_and_reindex`] and [`compact_items`]).
pub fn factorize(train: &RatingsTable, rank: usize, seed: u64) -> Result<EmbeddingSet> {
    if train.is_empty() {
        return Err(Error::Data("cannot factorize an empty table".into()));
    }
    let a = rating_matrix(train);
    let (m, n) = a.shape();
    if rank == 0 || rank + 1 > m.min(n) {
        return Err(Error::param(format!(
            "rank {rank} too large for a {m}x{n} rating matrix (max {})",
            m.min(n).saturating_sub(1)
        )));
    }
    let svd = truncated_svd(&a, rank, seed)?;
    let sqrt_s: Vec<f64> = svd.singular_values.iter().map(|s| s.sqrt()).collect();
    let scale = |mut mat: DMatrix<f64>| {
        for (k, s) in sqrt_s.iter().enumerate() {
            mat.column_mut(k).scale_mut(*s);
        }
        mat
    };
    let users = scale(svd.u);
    let mut items = scale(svd.v);
    for (i, mut row) in items.row_iter_mut().enumerate() {
        let norm = row.norm();
        if !(norm > 1e-12) {
            return Err(Error::Data(format!(
                "item {i} has a null embedding; it needs at least one training rating"
            )));
        }
        row /= norm;
    }
    EmbeddingSet::new(items, users)
}

/// Reproducible low-rank ratings on a 1..=5 integer scale. Every item gets at
/// least 6 ratings (when there are at least 6 users) and every user at least 2.
#[allow(clippy::needless_range_loop)]
pub fn synth_dataset(
    num_users: usize,
    num_items: usize,
    density: f64,
    seed: u64,
) -> Result<RatingsTable> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::param(format!(
            "density must lie in (0, 1], got {density}"
        )));
    }
    if num_users == 0 || num_items == 0 {
        return Err(Error::param("synthetic dataset needs users and items"));
    }
    const LATENT: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let user_f: Vec<Vec<f64>> = (0..num_users)
        .map(|_| (0..LATENT).map(|_| normal(&mut rng)).collect())
        .collect();
    let item_f: Vec<Vec<f64>> = (0..num_items)
        .map(|_| (0..LATENT).map(|_| normal(&mut rng)).collect())
        .collect();

    let mut rated = vec![vec![false; num_items]; num_users];
    for row in rated.iter_mut() {
        for cell in row.iter_mut() {
            *cell = density >= 1.0 || rng.random::<f64>() < density;
        }
    }
    let min_per_item = 6.min(num_users);
    for i in 0..num_items {
        let mut have = (0..num_users).filter(|&u| rated[u][i]).count();
        while have < min_per_item {
            let u = rng.random_range(0..num_users);
            if !rated[u][i] {
                rated[u][i] = true;
                have += 1;
            }
        }
    }
    let min_per_user = 2.min(num_items);
    for row in rated.iter_mut() {
        let mut have = row.iter().filter(|&&x| x).count();
        while have < min_per_user {
            let i = rng.random_range(0..num_items);
            if !row[i] {
                row[i] = true;
                have += 1;
            }
        }
    }

    let mut rows = Vec::new();
    for (u, row) in rated.iter().enumerate() {
        for (i, _) in row.iter().enumerate().filter(|(_, &x)| x) {
            let affinity: f64 = user_f[u].iter().zip(&item_f[i]).map(|(a, b)| a * b).sum();
            let noise = 0.5 * normal(&mut rng);
            let rating = (3.0 + 0.7 * affinity + noise).round().clamp(1.0, 5.0);
            rows.push(Rating {
                user: u as u64,
                item: i as u64,
                rating,
            });
        }
    }
    RatingsTable::new(rows, RatingScale::default())
}

/// Writes to a sibling temp file, syncs, then renames over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Tab-separated `user item rating`.
pub fn write_ratings(path: &Path, table: &RatingsTable) -> Result<()> {
    let mut out = String::new();
    for r in &table.rows {
        out.push_str(&format!("{}\t{}\t{}\n", r.user, r.item, r.rating));
    }
    write_atomic(path, out.as_bytes())
}

/// Two columns: dense id, original id.
pub fn write_id_map(path: &Path, map: &IdMap) -> Result<()> {
    let mut out = String::new();
    for (new, old) in map.original.iter().enumerate() {
        out.push_str(&format!("{new}\t{old}\n"));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_id_map(path: &Path) -> Result<IdMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut original = Vec::new();
    for (lineno, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let bad = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: message.to_string(),
        };
        let mut it = line.split_whitespace();
        let new: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("invalid dense id"))?;
        let old: u64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("invalid original id"))?;
        if new != original.len() {
            return Err(bad("dense ids must be contiguous from 0"));
        }
        original.push(old);
    }
    Ok(IdMap { original })
}

/// Header line `n m d`, then `n` item rows and `m` user rows, whitespace
/// separated, in shortest round-trip decimal form.
pub fn write_embeddings(path: &Path, emb: &EmbeddingSet) -> Result<()> {
    let mut out = format!("{} {} {}\n", emb.n_items(), emb.n_users(), emb.rank());
    for mat in [&emb.items, &emb.users] {
        for row in mat.row_iter() {
            let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad(1, "empty embeddings file".into()))?
        .split_whitespace()
        .map(|s| {
            s.parse()
                .map_err(|_| bad(1, format!("invalid header field {s:?}")))
        })
        .collect::<Result<_>>()?;
    let [n, m, d] = header[..] else {
        return Err(bad(1, "header must be `n m d`".into()));
    };
    let mut values = Vec::with_capacity((n + m) * d);
    for (k, line) in lines.enumerate().take(n + m) {
        let before = values.len();
        for s in line.split_whitespace() {
            values.push(
                s.parse::<f64>()
                    .map_err(|_| bad(k + 2, format!("invalid value {s:?}")))?,
            );
        }
        if values.len() - before != d {
            return Err(bad(k + 2, format!("expected {d} values")));
        }
    }
    if values.len() != (n + m) * d {
        return Err(bad(n + m + 1, "truncated embeddings file".into()));
    }
    let items = DMatrix::from_row_slice(n, d, &values[..n * d]);
    let users = DMatrix::from_row_slice(m, d, &values[n * d..]);
    EmbeddingSet::new(items, users)
}
