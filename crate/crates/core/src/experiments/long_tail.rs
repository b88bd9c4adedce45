//! Long-tailed subsampling: class sizes fall geometrically from the largest
//! class down to `rho` times its size.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::models::Dataset;
use crate::rng::stream_rng;

/// Kept size of the class at rank `c` (0 = largest) out of `classes`.
pub fn long_tail_size(n_max: usize, rho: f64, c: usize, classes: usize) -> usize {
    let exponent = c as f64 / (classes - 1) as f64;
    // the slack absorbs products such as 500 * 0.01 landing just under 5
    (n_max as f64 * rho.powf(exponent) + 1e-9).floor() as usize
}

/// Classes are ranked by size (descending, ties by label); the class at rank
/// `c` keeps `floor(n_max * rho^(c / (C - 1)))` rows, or all of them if it
/// has fewer. Kept rows stay in their original order.
pub fn long_tail_downsample(data: &Dataset, rho: f64, seed: u64) -> Result<Dataset> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Domain(format!("rho must lie in (0, 1], got {rho}")));
    }
    let labels = data.class_labels()?;
    let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, found {}", members.len())));
    }
    let mut ranked: Vec<(i64, Vec<usize>)> = members.into_iter().collect();
    // stable sort keeps label order among equal sizes
    ranked.sort_by_key(|(_, rows)| core::cmp::Reverse(rows.len()));
    let n_max = ranked[0].1.len();
    let classes = ranked.len();
    let mut rng = stream_rng(seed, 2);
    let mut kept = Vec::new();
    for (c, (label, rows)) in ranked.iter().enumerate() {
        let keep = long_tail_size(n_max, rho, c, classes).min(rows.len());
        if keep == 0 {
            return Err(Error::DegenerateClass { class: *label });
        }
        kept.extend(sample(&mut rng, rows.len(), keep).into_iter().map(|i| rows[i]));
    }
    kept.sort_unstable();
    Ok(data.subset(&kept))
}
