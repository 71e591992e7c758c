//! Dictionary size schedule.

/// Plateauing component count `floor(t * n_max / (t + n_max))`.
pub fn growth_count(t: u64, n_max: u64) -> u64 {
    if t == 0 {
        return 0;
    }
    let (t, n) = (t as u128, n_max as u128);
    (t * n / (t + n)) as u64
}

/// New centroids for chunk `chunk_index` (1-based) of `chunk_len` tokens.
pub fn new_centroid_budget(chunk_index: u64, chunk_len: u64, n_max: u64) -> u64 {
    assert!(chunk_index >= 1, "chunk indices start at 1");
    growth_count(chunk_len * chunk_index, n_max) - growth_count(chunk_len * (chunk_index - 1), n_max)
}

/// Dictionary size the engine keeps after `t` tokens under the default
/// schedule. Identical to [`growth_count`] except that a non-empty stream
/// always has at least one component to merge into, which only matters for
/// the first token of single-token chunks or `n_max = 1`.
pub fn dictionary_target(t: u64, n_max: u64) -> u64 {
    if t == 0 {
        0
    } else {
        growth_count(t, n_max).max(1)
    }
}

/// Linear-growth ablation: chunk `chunk_index` (1-based) adds
/// `round(n_max / planned_chunks)` centroids until `n_max` is used up.
pub fn linear_growth_budget(chunk_index: u64, planned_chunks: u64, n_max: u64) -> u64 {
    assert!(chunk_index >= 1, "chunk indices start at 1");
    let planned = planned_chunks.max(1);
    let per_chunk = (n_max as f64 / planned as f64).round() as u64;
    let total = |c: u64| (c * per_chunk).min(n_max);
    total(chunk_index) - total(chunk_index - 1)
}
