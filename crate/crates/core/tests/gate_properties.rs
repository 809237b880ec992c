use augpt::gate::{accept_all, gate_logits, gate_logits_topk, topk_signature};
use augpt::scoring::LogitVector;
use proptest::prelude::*;

fn member_logits() -> impl Strategy<Value = Vec<LogitVector<f64>>> {
    (2usize..12, 1usize..10).prop_flat_map(|(c, m)| {
        prop::collection::vec(prop::collection::vec(0u8..4, c), m).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(j, v)| LogitVector::new(v.into_iter().map(f64::from).collect(), j))
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn accepted_members_all_vote_for_consensus(logits in member_logits()) {
        let g = gate_logits(&logits).unwrap();
        prop_assert!(!g.accepted_indices.is_empty());
        for &j in &g.accepted_indices {
            prop_assert_eq!(g.top1_seq[j], g.consensus);
        }
        for j in 0..logits.len() {
            if !g.accepted_indices.contains(&j) {
                prop_assert_ne!(g.top1_seq[j], g.consensus);
            }
        }
        prop_assert_eq!(g.raw_discarded, g.top1_seq[0] != g.consensus);
    }

    #[test]
    fn consensus_is_a_mode(logits in member_logits()) {
        let g = gate_logits(&logits).unwrap();
        let votes = |k: usize| g.top1_seq.iter().filter(|&&t| t == k).count();
        let best = votes(g.consensus);
        prop_assert!(g.top1_seq.iter().all(|&t| votes(t) <= best));
        prop_assert!(g.top1_seq.iter().all(|&t| votes(t) < best || t >= g.consensus));
    }

    #[test]
    fn consensus_ignores_member_order(logits in member_logits(), rot in 0usize..10) {
        let g = gate_logits(&logits).unwrap();
        let mut shuffled = logits.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        prop_assert_eq!(gate_logits(&shuffled).unwrap().consensus, g.consensus);
    }

    #[test]
    fn top1_signature_gate_matches_plain_gate(logits in member_logits()) {
        let a = gate_logits(&logits).unwrap();
        let b = gate_logits_topk(&logits, 1).unwrap();
        prop_assert_eq!(a.consensus, b.consensus);
        prop_assert_eq!(&a.accepted_indices, &b.accepted_indices);
        prop_assert!(!b.topk_disagrees());
    }

    #[test]
    fn topk_accepts_one_shared_signature(logits in member_logits()) {
        let k = 2.min(logits[0].values.len());
        let g = gate_logits_topk(&logits, k).unwrap();
        let sig = |j: usize| topk_signature(&logits[j].values, k);
        let lead = sig(g.accepted_indices[0]);
        prop_assert_eq!(lead[0], g.consensus);
        for j in 0..logits.len() {
            prop_assert_eq!(g.accepted_indices.contains(&j), sig(j) == lead);
        }
    }

    #[test]
    fn disabled_gate_keeps_everyone(logits in member_logits()) {
        let g = accept_all(&logits).unwrap();
        prop_assert_eq!(g.accepted_indices, (0..logits.len()).collect::<Vec<_>>());
        prop_assert!(!g.raw_discarded);
    }
}

#[test]
fn ties_go_to_the_lowest_class() {
    let l = |v: Vec<f64>, j| LogitVector::new(v, j);
    let g = gate_logits(&[l(vec![0.0, 1.0, 0.0], 0), l(vec![1.0, 0.0, 0.0], 1), l(vec![2.0, 2.0, 0.0], 2)]).unwrap();
    assert_eq!(g.top1_seq, vec![1, 0, 0]);
    assert_eq!(g.consensus, 0);
    assert_eq!(g.accepted_indices, vec![1, 2]);
    assert!(g.raw_discarded);
}

#[test]
fn rejects_ragged_or_empty_members() {
    assert!(gate_logits::<f64>(&[]).is_err());
    let ragged = [LogitVector::new(vec![0.0, 1.0], 0), LogitVector::new(vec![0.0, 1.0, 2.0], 1)];
    assert!(gate_logits(&ragged).is_err());
    assert!(gate_logits_topk(&ragged[..1], 3).is_err());
    assert!(gate_logits_topk(&ragged[..1], 0).is_err());
}
