#![allow(dead_code)]

use divsample::dataio::{
    compact_items, factorize, filter_and_reindex, stratified_split, synth_dataset, EmbeddingSet,
    RatingsTable, DEFAULT_MIN_ITEM_RATINGS, DEFAULT_RANK, DEFAULT_TEST_FRACTION,
};

/// The ingest pipeline applied in memory to a synthetic ratings table.
pub fn synthetic(
    users: usize,
    items: usize,
    density: f64,
    rank: usize,
    seed: u64,
) -> (EmbeddingSet, RatingsTable) {
    let raw = synth_dataset(users, items, density, seed).unwrap();
    let filtered = filter_and_reindex(&raw, DEFAULT_MIN_ITEM_RATINGS).unwrap();
    let split = stratified_split(&filtered.table, DEFAULT_TEST_FRACTION, seed).unwrap();
    let (split, _, _) = compact_items(&split);
    let emb = factorize(&split.train, rank, seed).unwrap();
    (emb, split.test)
}

/// The bundled 500 x 300 synthetic dataset at the default rank.
pub fn bundled() -> (EmbeddingSet, RatingsTable) {
    synthetic(500, 300, 0.1, DEFAULT_RANK, 0)
}

pub fn small() -> (EmbeddingSet, RatingsTable) {
    synthetic(60, 40, 0.3, 6, 7)
}
