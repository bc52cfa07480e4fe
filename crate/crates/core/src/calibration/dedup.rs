//! Naive near-duplicate removal by absolute embedding cosine similarity.

use std::collections::BTreeSet;

use rand::Rng;

use super::{DropReason, FilterReport};
use crate::error::{Error, Result};
use crate::item_bank::Item;
use crate::seed;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub(crate) fn embeddings<'a>(items: &[&'a Item]) -> Result<Vec<&'a [f64]>> {
    let mut out = Vec::with_capacity(items.len());
    let mut dim = None;
    for item in items {
        let e = item
            .embedding
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("item `{}` has no embedding", item.id)))?;
        if *dim.get_or_insert(e.len()) != e.len() {
            return Err(Error::invalid(format!(
                "item `{}` has embedding length {}, expected {}",
                item.id,
                e.len(),
                dim.unwrap()
            )));
        }
        if e.is_empty() || !e.iter().any(|x| *x != 0.0) || e.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("item `{}` has a degenerate embedding", item.id)));
        }
        out.push(e);
    }
    Ok(out)
}

/// Repeatedly takes the most similar remaining pair with `|cos| >=
/// floor`. Same truth value: one member is removed at random. Different
/// truth values: the member in the current majority truth class is
/// removed, at random on a tie.
pub fn naive_dedup(items: &[&Item], floor: f64, seed: u64) -> Result<FilterReport> {
    let emb = embeddings(items)?;
    let mut pairs = Vec::new();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let s = cosine(emb[i], emb[j]).abs();
            if s >= floor {
                pairs.push((s, i, j));
            }
        }
    }
    // descending similarity, then input order
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut rng = seed::rng(seed);
    let mut removed = BTreeSet::new();
    let mut n_true = items.iter().filter(|i| i.truth).count();
    let mut n_false = items.len() - n_true;
    for (_, i, j) in pairs {
        if removed.contains(&i) || removed.contains(&j) {
            continue;
        }
        let (ti, tj) = (items[i].truth, items[j].truth);
        let victim = if ti == tj || n_true == n_false {
            if rng.random::<bool>() {
                i
            } else {
                j
            }
        } else {
            let majority = n_true > n_false;
            if ti == majority {
                i
            } else {
                j
            }
        };
        if items[victim].truth {
            n_true -= 1;
        } else {
            n_false -= 1;
        }
        removed.insert(victim);
    }

    let mut report = FilterReport::default();
    for (k, item) in items.iter().enumerate() {
        if removed.contains(&k) {
            report.dropped.push((item.id.clone(), DropReason::Duplicate));
        } else {
            report.kept.push(item.id.clone());
        }
    }
    Ok(report)
}
