//! Consensus filtering gate over per-view teacher logits.
//!
//! Every tie is broken toward the lowest class index (or the
//! lexicographically smallest top-k signature), so the gate is a pure,
//! order-independent function of the logits.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::augment::ViewSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scoring::{argmax, LogitVector};

#[derive(Debug, Clone, PartialEq)]
pub struct GateResult<T> {
    /// Consensus class.
    pub consensus: usize,
    /// Top-1 class of every member, raw first.
    pub top1_seq: Vec<usize>,
    /// Sorted indices of accepted members.
    pub accepted_indices: Vec<usize>,
    /// Teacher logits of the accepted members, aligned with `accepted_indices`.
    pub accepted_logits: Vec<LogitVector<T>>,
    pub raw_discarded: bool,
    /// Plain top-1 consensus on the same logits; differs from `consensus`
    /// only under top-k gating.
    pub top1_consensus: usize,
}

impl<T> GateResult<T> {
    pub fn accepted_count(&self) -> usize {
        self.accepted_indices.len()
    }

    pub fn member_count(&self) -> usize {
        self.top1_seq.len()
    }

    /// True when top-k gating picked a different lead class than top-1 gating.
    pub fn topk_disagrees(&self) -> bool {
        self.consensus != self.top1_consensus
    }

    /// JSONL record for the `gate` command.
    pub fn record(&self, image_key: &str) -> GateRecord {
        GateRecord {
            image_key: image_key.to_string(),
            consensus: self.consensus,
            top1_seq: self.top1_seq.clone(),
            accepted_indices: self.accepted_indices.clone(),
            raw_discarded: self.raw_discarded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct GateRecord {
    pub image_key: String,
    pub consensus: usize,
    pub top1_seq: Vec<usize>,
    pub accepted_indices: Vec<usize>,
    pub raw_discarded: bool,
}

fn check_shapes<T>(logits: &[LogitVector<T>]) -> Result<usize> {
    let first = logits
        .first()
        .ok_or_else(|| Error::Data("no logits to gate".into()))?;
    let c = first.values.len();
    if c == 0 {
        return Err(Error::Data("logit vectors are empty".into()));
    }
    for l in logits {
        if l.values.len() != c {
            return Err(Error::Alignment {
                expected: c,
                got: l.values.len(),
            });
        }
    }
    Ok(c)
}

/// Per-member argmax.
pub fn top1_sequence<T: Scalar>(logits: &[LogitVector<T>]) -> Result<Vec<usize>> {
    check_shapes(logits)?;
    Ok(logits.iter().map(|l| argmax(&l.values)).collect())
}

/// Most frequent class; ties go to the lowest index.
pub fn consensus(top1: &[usize]) -> Result<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &k in top1 {
        *counts.entry(k).or_default() += 1;
    }
    // BTreeMap iterates ascending, so strict `>` keeps the lowest tied class
    counts
        .into_iter()
        .fold(None, |best: Option<(usize, usize)>, (k, n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((k, n)),
        })
        .map(|(k, _)| k)
        .ok_or_else(|| Error::Data("consensus of an empty sequence".into()))
}

/// Top-1 gate over a logit list aligned with view-set members.
pub fn gate_logits<T: Scalar>(logits: &[LogitVector<T>]) -> Result<GateResult<T>> {
    let top1_seq = top1_sequence(logits)?;
    let theta = consensus(&top1_seq)?;
    let accepted_indices: Vec<usize> = (0..logits.len()).filter(|&j| top1_seq[j] == theta).collect();
    let accepted_logits = accepted_indices.iter().map(|&j| logits[j].clone()).collect();
    Ok(GateResult {
        consensus: theta,
        top1_consensus: theta,
        raw_discarded: accepted_indices.first() != Some(&0),
        top1_seq,
        accepted_indices,
        accepted_logits,
    })
}

/// Top-1 gate on a view set; `logits[j]` must score member `j`.
pub fn filter_views<T: Scalar>(vs: &ViewSet, logits: &[LogitVector<T>]) -> Result<GateResult<T>> {
    if logits.len() != vs.len() {
        return Err(Error::Alignment {
            expected: vs.len(),
            got: logits.len(),
        });
    }
    gate_logits(logits)
}

/// Ordered top-`k` class indices, ties by ascending class index.
pub fn topk_signature<T: Scalar>(values: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Strict gate: members must share the consensus ordered top-`k` signature.
pub fn gate_logits_topk<T: Scalar>(logits: &[LogitVector<T>], k: usize) -> Result<GateResult<T>> {
    let c = check_shapes(logits)?;
    if k == 0 || k > c {
        return Err(Error::Parameter(format!("top-k gate needs 1 <= k <= {c}, got {k}")));
    }
    let sigs: Vec<Vec<usize>> = logits.iter().map(|l| topk_signature(&l.values, k)).collect();
    let mut counts: BTreeMap<&[usize], usize> = BTreeMap::new();
    for s in &sigs {
        *counts.entry(s.as_slice()).or_default() += 1;
    }
    let mut best: Option<(&[usize], usize)> = None;
    for (s, n) in counts {
        if best.is_none_or(|(_, bn)| n > bn) {
            best = Some((s, n));
        }
    }
    let winner = best.expect("nonempty").0.to_vec();
    let top1_seq = top1_sequence(logits)?;
    let top1_consensus = consensus(&top1_seq)?;
    let accepted_indices: Vec<usize> = (0..logits.len()).filter(|&j| sigs[j] == winner).collect();
    let accepted_logits = accepted_indices.iter().map(|&j| logits[j].clone()).collect();
    Ok(GateResult {
        consensus: winner[0],
        raw_discarded: accepted_indices.first() != Some(&0),
        top1_seq,
        accepted_indices,
        accepted_logits,
        top1_consensus,
    })
}

pub fn filter_views_topk<T: Scalar>(
    vs: &ViewSet,
    logits: &[LogitVector<T>],
    k: usize,
) -> Result<GateResult<T>> {
    if logits.len() != vs.len() {
        return Err(Error::Alignment {
            expected: vs.len(),
            got: logits.len(),
        });
    }
    gate_logits_topk(logits, k)
}

/// Accepts every member; used when gating is disabled.
pub fn accept_all<T: Scalar>(logits: &[LogitVector<T>]) -> Result<GateResult<T>> {
    let top1_seq = top1_sequence(logits)?;
    let theta = consensus(&top1_seq)?;
    Ok(GateResult {
        consensus: theta,
        top1_consensus: theta,
        accepted_indices: (0..logits.len()).collect(),
        accepted_logits: logits.to_vec(),
        raw_discarded: false,
        top1_seq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageops::Raster;

    fn lv(values: &[f64], j: usize) -> LogitVector<f64> {
        LogitVector::new(values.to_vec(), j)
    }

    fn from_top1(seq: &[usize], c: usize) -> Vec<LogitVector<f64>> {
        seq.iter()
            .enumerate()
            .map(|(j, &k)| {
                let mut v = vec![0.0; c];
                v[k] = 1.0;
                lv(&v, j)
            })
            .collect()
    }

    fn view_set(n: usize) -> ViewSet {
        let img = Raster::filled(8, 8, [1, 2, 3]).unwrap();
        ViewSet {
            raw: img.clone(),
            views: vec![img; n],
            provenance: vec![Vec::new(); n],
            corrupted: vec![false; n],
        }
    }

    #[test]
    fn top1_examples() {
        let ls = vec![lv(&[0.9, 0.1], 0), lv(&[0.2, 0.8], 1), lv(&[0.6, 0.4], 2)];
        assert_eq!(top1_sequence(&ls).unwrap(), vec![0, 1, 0]);
        assert_eq!(top1_sequence(&[lv(&[0.5, 0.5], 0)]).unwrap(), vec![0]);
        assert!(top1_sequence::<f64>(&[]).is_err());
    }

    #[test]
    fn consensus_examples() {
        assert_eq!(consensus(&[3, 3, 5, 3, 2, 3]).unwrap(), 3);
        assert_eq!(consensus(&[1, 1, 2, 2]).unwrap(), 1);
        assert_eq!(consensus(&[2, 2, 1, 1]).unwrap(), 1);
        assert_eq!(consensus(&[7]).unwrap(), 7);
    }

    #[test]
    fn filter_examples() {
        let g = filter_views(&view_set(5), &from_top1(&[3, 3, 5, 3, 2, 3], 6)).unwrap();
        assert_eq!(g.accepted_indices, vec![0, 1, 3, 5]);
        assert!(!g.raw_discarded);
        assert_eq!(g.accepted_logits.len(), 4);
        assert!(g.accepted_logits.iter().zip(&g.accepted_indices).all(|(l, &j)| l.view_index == j));

        let g = filter_views(&view_set(3), &from_top1(&[5, 3, 3, 3], 6)).unwrap();
        assert_eq!(g.accepted_indices, vec![1, 2, 3]);
        assert!(g.raw_discarded);

        let g = filter_views(&view_set(4), &from_top1(&[2; 5], 3)).unwrap();
        assert_eq!(g.accepted_indices, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        assert!(matches!(
            filter_views(&view_set(2), &from_top1(&[0, 0], 2)),
            Err(Error::Alignment { .. })
        ));
        let ls = vec![lv(&[0.1, 0.2], 0), lv(&[0.1, 0.2, 0.3], 1)];
        assert!(gate_logits(&ls).is_err());
    }

    #[test]
    fn topk_parameter_checks_and_reduction() {
        let ls = from_top1(&[1, 1, 0], 3);
        assert!(gate_logits_topk(&ls, 0).is_err());
        assert!(gate_logits_topk(&ls, 4).is_err());
        assert_eq!(gate_logits_topk(&ls, 1).unwrap(), gate_logits(&ls).unwrap());
    }

    #[test]
    fn topk_full_ranking_unanimous() {
        let ls: Vec<_> = (0..4).map(|j| lv(&[0.3, 0.9, 0.1, 0.5], j)).collect();
        let g = gate_logits_topk(&ls, 4).unwrap();
        assert_eq!(g.accepted_indices, vec![0, 1, 2, 3]);
        assert_eq!(g.consensus, 1);
    }

    #[test]
    fn topk_can_disagree_with_top1() {
        // top-1 mode is class 0 ([0,1],[0,2],[0,3] all differ at k=2);
        // the pair [1,2] appears twice
        let ls = vec![
            lv(&[0.9, 0.8, 0.0, 0.0], 0),
            lv(&[0.9, 0.0, 0.8, 0.0], 1),
            lv(&[0.9, 0.0, 0.0, 0.8], 2),
            lv(&[0.0, 0.9, 0.8, 0.0], 3),
            lv(&[0.0, 0.9, 0.8, 0.0], 4),
        ];
        let g = gate_logits_topk(&ls, 2).unwrap();
        assert_eq!(g.accepted_indices, vec![3, 4]);
        assert_eq!(g.consensus, 1);
        assert_eq!(g.top1_consensus, 0);
        assert!(g.topk_disagrees());
        assert!(g.raw_discarded);
    }

    #[test]
    fn accept_all_keeps_everything() {
        let g = accept_all(&from_top1(&[4, 0, 0], 5)).unwrap();
        assert_eq!(g.accepted_indices, vec![0, 1, 2]);
        assert!(!g.raw_discarded);
        assert_eq!(g.consensus, 0);
    }
}
