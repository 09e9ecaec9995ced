use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};

/// One query's gallery ordering, best first.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedResult {
    pub query_id: String,
    pub ranking: Vec<(String, f64)>,
}

impl RankedResult {
    /// 1-based rank of `id`.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.ranking.iter().position(|(g, _)| g == id).map(|p| p + 1)
    }
}

fn gt_ranks(results: &[RankedResult], gt: &HashMap<String, String>) -> Result<Vec<usize>> {
    results
        .iter()
        .map(|r| {
            let want = gt
                .get(&r.query_id)
                .ok_or_else(|| Error::MissingGroundTruth(r.query_id.clone()))?;
            r.rank_of(want)
                .ok_or_else(|| Error::MissingGroundTruth(format!("{} (item {want} not in gallery)", r.query_id)))
        })
        .collect()
}

/// Fraction of queries whose ground-truth item is ranked within the top `k`.
pub fn recall_at_k(results: &[RankedResult], gt: &HashMap<String, String>, k: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyInput("recall_at_k"));
    }
    let ranks = gt_ranks(results, gt)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Median 1-based ground-truth rank; the lower middle value for an even
/// number of queries.
pub fn median_rank(results: &[RankedResult], gt: &HashMap<String, String>) -> Result<usize> {
    if results.is_empty() {
        return Err(Error::EmptyInput("median_rank"));
    }
    let mut ranks = gt_ranks(results, gt)?;
    ranks.sort_unstable();
    Ok(ranks[(ranks.len() - 1) / 2])
}

/// Non-interpolated average precision: the mean of precision at the rank of
/// every positive. Equal scores keep input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "average_precision",
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::UndefinedAp);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Per-class F1 of single-label predictions and their mean. A class with
/// `P + R = 0` scores 0.
pub fn f1_per_class(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<(Vec<f64>, f64)> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension {
            op: "f1_per_class",
            left: vec![predictions.len()],
            right: vec![labels.len()],
        });
    }
    if n_classes == 0 {
        return Err(Error::EmptyInput("f1_per_class"));
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(Error::contract(format!("class id outside 0..{n_classes}")));
        }
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let f1: Vec<f64> = (0..n_classes)
        .map(|c| {
            let p = if tp[c] + fp[c] == 0 {
                0.0
            } else {
                tp[c] as f64 / (tp[c] + fp[c]) as f64
            };
            let r = if tp[c] + fn_[c] == 0 {
                0.0
            } else {
                tp[c] as f64 / (tp[c] + fn_[c]) as f64
            };
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .collect();
    let mean = f1.iter().sum::<f64>() / n_classes as f64;
    Ok((f1, mean))
}

/// Mean AP over the classes that have at least one positive, with the
/// per-class values keyed by class index.
pub fn mean_ap(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<(BTreeMap<usize, f64>, f64)> {
    let n_classes = scores.first().map_or(0, Vec::len);
    let mut per_class = BTreeMap::new();
    for c in 0..n_classes {
        let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let l: Vec<bool> = labels.iter().map(|r| r[c]).collect();
        match average_precision(&s, &l) {
            Ok(ap) => {
                per_class.insert(c, ap);
            }
            Err(Error::UndefinedAp) => {}
            Err(e) => return Err(e),
        }
    }
    if per_class.is_empty() {
        return Err(Error::UndefinedAp);
    }
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok((per_class, mean))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComponentAp {
    pub ap_i: f64,
    pub ap_v: f64,
    pub ap_t: f64,
    pub ap_iv: f64,
    pub ap_it: f64,
    pub ap_ivt: f64,
}

/// Pools triplet scores and labels onto the classes of one component by
/// taking the maximum over the triplets that share a component value.
fn pool<K: Ord + Copy>(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
    key: impl Fn(usize) -> K,
    n_triplets: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let mut keys: Vec<K> = (0..n_triplets).map(&key).collect();
    keys.sort();
    keys.dedup();
    let slot: Vec<usize> = (0..n_triplets)
        .map(|t| keys.binary_search(&key(t)).expect("key present"))
        .collect();
    let mut ps = vec![vec![f64::NEG_INFINITY; keys.len()]; scores.len()];
    let mut pl = vec![vec![false; keys.len()]; scores.len()];
    for (n, (s, l)) in scores.iter().zip(labels).enumerate() {
        for t in 0..n_triplets {
            ps[n][slot[t]] = ps[n][slot[t]].max(s[t]);
            pl[n][slot[t]] |= l[t];
        }
    }
    (ps, pl)
}

/// Component-wise mean AP of triplet scores. `components[k]` gives the
/// (instrument, verb, target) ids of triplet class `k`.
pub fn triplet_component_ap(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
    components: &[(usize, usize, usize)],
) -> Result<ComponentAp> {
    let n = components.len();
    if scores.iter().any(|r| r.len() != n) || labels.iter().any(|r| r.len() != n) {
        return Err(Error::contract(format!(
            "every score and label row must cover the {n} mapped triplet classes"
        )));
    }
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "triplet_component_ap",
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    let c = components;
    let ap = |key: &dyn Fn(usize) -> (usize, usize, usize)| -> Result<f64> {
        let (s, l) = pool(scores, labels, key, n);
        Ok(mean_ap(&s, &l)?.1)
    };
    Ok(ComponentAp {
        ap_i: ap(&|k| (c[k].0, 0, 0))?,
        ap_v: ap(&|k| (c[k].1, 0, 0))?,
        ap_t: ap(&|k| (c[k].2, 0, 0))?,
        ap_iv: ap(&|k| (c[k].0, c[k].1, 0))?,
        ap_it: ap(&|k| (c[k].0, c[k].2, 0))?,
        ap_ivt: mean_ap(scores, labels)?.1,
    })
}

/// Intersection over union of two intervals.
pub fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
