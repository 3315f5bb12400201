use std::path::Path;

use probdiar::evalkit::{der, format_rttm, parse_rttm, Resolution, ScoringOptions, Timeline, Turn};
use probdiar::partitions::{canonicalize, CrpParams, PartitionTables};
use probdiar::plda::{clustering_log_posterior, pairwise_llr, DiagPlda, ProbEmbedding};
use proptest::prelude::*;

/// Turns on a 0.1 s grid: (start tick, length in ticks, speaker).
fn turns(max_spk: usize) -> impl Strategy<Value = Vec<(u32, u32, usize)>> {
    prop::collection::vec((0u32..80, 1u32..30, 0..max_spk), 1..10)
}

fn timeline(raw: &[(u32, u32, usize)], prefix: &str) -> Timeline {
    Timeline {
        recording: "r".into(),
        turns: raw
            .iter()
            .map(|&(s, l, k)| Turn::new(s as f64 / 10.0, l as f64 / 10.0, format!("{prefix}{k}")).unwrap())
            .collect(),
    }
}

/// Frame-level error in ticks with every injective speaker mapping tried.
fn brute_force_der(reference: &[(u32, u32, usize)], hyp: &[(u32, u32, usize)], n_spk: usize) -> f64 {
    let horizon = 120usize;
    let active = |raw: &[(u32, u32, usize)], t: usize| {
        let mut on = vec![false; n_spk];
        for &(s, l, k) in raw {
            if (s as usize..(s + l) as usize).contains(&t) {
                on[k] = true;
            }
        }
        on
    };
    let frames: Vec<(Vec<bool>, Vec<bool>)> = (0..horizon).map(|t| (active(reference, t), active(hyp, t))).collect();
    let total_ref: usize = frames.iter().map(|(r, _)| r.iter().filter(|&&x| x).count()).sum();

    // maps hyp speaker h to reference speaker map[h] (or none)
    fn mappings(n: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        mappings(n, used, cur, out);
        cur.pop();
        for r in 0..n {
            if !used[r] {
                used[r] = true;
                cur.push(Some(r));
                mappings(n, used, cur, out);
                cur.pop();
                used[r] = false;
            }
        }
    }
    let mut all = Vec::new();
    mappings(n_spk, &mut vec![false; n_spk], &mut Vec::new(), &mut all);

    let mut best = usize::MAX;
    for map in &all {
        let mut err = 0;
        for (r, h) in &frames {
            let nr = r.iter().filter(|&&x| x).count();
            let nh = h.iter().filter(|&&x| x).count();
            let correct = (0..n_spk).filter(|&k| h[k] && map[k].is_some_and(|m| r[m])).count();
            err += nr.max(nh) - correct;
        }
        best = best.min(err);
    }
    best as f64 / total_ref as f64
}

fn tuple(xs: &[f64], bs: &[f64], dim: usize) -> Vec<ProbEmbedding> {
    xs.chunks(dim)
        .zip(bs.chunks(dim))
        .map(|(x, b)| ProbEmbedding::new(x.to_vec(), b.to_vec()).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn der_matches_frame_oracle(reference in turns(4), hyp in turns(4)) {
        let opts = ScoringOptions { collar: 0.0, resolution: Resolution::Frames(0.1) };
        let got = der(&timeline(&reference, "s"), &timeline(&hyp, "h"), &opts).unwrap().der();
        let want = brute_force_der(&reference, &hyp, 4);
        prop_assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn rttm_round_trips(raw in turns(5)) {
        let tl = timeline(&raw, "spk");
        let back = parse_rttm(&format_rttm(std::slice::from_ref(&tl)), Path::new("mem")).unwrap();
        prop_assert_eq!(back.len(), 1);
        let opts = ScoringOptions::default();
        prop_assert_eq!(der(&tl, &back[0], &opts).unwrap().der(), 0.0);
        prop_assert!((back[0].total_speech() - tl.total_speech()).abs() < 1e-9);
    }

    #[test]
    fn canonical_labels_ignore_names(labels in prop::collection::vec(0u8..6, 1..10), shift in 1u8..50) {
        let renamed: Vec<u8> = labels.iter().map(|l| l.wrapping_mul(7).wrapping_add(shift)).collect();
        let a = canonicalize(&labels);
        prop_assert_eq!(&a, &canonicalize(&renamed));
        prop_assert_eq!(&a, &canonicalize(a.blocks()));
    }

    /// Reordering the tuple permutes the posterior over partitions and
    /// changes nothing else.
    #[test]
    fn posterior_is_permutation_equivariant(
        xs in prop::collection::vec(-3.0f64..3.0, 10),
        bs in prop::collection::vec(0.0f64..20.0, 10),
        w in prop::collection::vec(0.1f64..5.0, 2),
        perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let dim = 2;
        let plda = DiagPlda::new(w).unwrap();
        let tables = PartitionTables::build(5, CrpParams::new(1.2, 0.3).unwrap()).unwrap();
        let t = tuple(&xs, &bs, dim);
        let permuted: Vec<_> = perm.iter().map(|&i| t[i].clone()).collect();
        let p = clustering_log_posterior(&t, &plda, &tables).unwrap();
        let q = clustering_log_posterior(&permuted, &plda, &tables).unwrap();
        for (k, lp) in p.iter().enumerate() {
            let labels = tables.label_string(k);
            let moved: Vec<u32> = perm.iter().map(|&i| labels.blocks()[i]).collect();
            let j = tables.index_of(&canonicalize(&moved)).unwrap();
            prop_assert!((lp - q[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn pairwise_llr_is_symmetric(
        x in prop::collection::vec(-3.0f64..3.0, 6),
        b in prop::collection::vec(0.0f64..50.0, 6),
        w in prop::collection::vec(0.1f64..5.0, 3),
    ) {
        let plda = DiagPlda::new(w).unwrap();
        let t = tuple(&x, &b, 3);
        let ab = pairwise_llr(&t[0], &t[1], &plda).unwrap();
        let ba = pairwise_llr(&t[1], &t[0], &plda).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
    }
}
