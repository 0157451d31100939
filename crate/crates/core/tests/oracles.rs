//! Property tests of the public API against brute-force oracles.

use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;

use taskrec_core::corpus::{cap_repeats, split_by_user};
use taskrec_core::eval::{auroc, precision_recall, rank_of};
use taskrec_core::markov::{fit_first_order, fit_pst};
use taskrec_core::persist::{read_model, write_model, ModelKind};
use taskrec_core::{CommandId, CommandSequence};

const V: u32 = 6;

fn sequences() -> impl Strategy<Value = Vec<CommandSequence>> {
    prop::collection::vec((0u8..8, prop::collection::vec(0..V, 2..15)), 1..25).prop_map(|raw| {
        raw.into_iter()
            .map(|(u, c)| {
                CommandSequence::new(format!("u{u}"), c.into_iter().map(CommandId).collect())
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn first_order_counts_match_pair_tally(corpus in sequences()) {
        let mut tally: HashMap<(u32, u32), u64> = HashMap::new();
        for s in &corpus {
            for w in s.commands.windows(2) {
                *tally.entry((w[0].0, w[1].0)).or_default() += 1;
            }
        }
        let m = fit_first_order(&corpus, V as usize).unwrap();
        for a in 0..V {
            let mut row = 0;
            for b in 0..V {
                let want = tally.get(&(a, b)).copied().unwrap_or(0);
                prop_assert_eq!(m.count(CommandId(a), CommandId(b)), want);
                row += want;
            }
            prop_assert_eq!(m.row_totals[a as usize], row);
            let p = m.predict(CommandId(a));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn suffix_tree_predicts_from_the_longest_kept_context(corpus in sequences(), prefix in prop::collection::vec(0..V, 1..8), min_count in 1u64..4) {
        let depth = 3;
        let tree = fit_pst(&corpus, V as usize, depth, min_count).unwrap();
        let prefix: Vec<CommandId> = prefix.into_iter().map(CommandId).collect();
        // Oracle: next-command counts after the longest suffix (up to depth)
        // seen at least `min_count` times; the empty context otherwise.
        let mut chosen = vec![0u64; V as usize];
        for d in (0..=depth.min(prefix.len())).rev() {
            let ctx = &prefix[prefix.len() - d..];
            let mut counts = vec![0u64; V as usize];
            for s in &corpus {
                for n in 1..s.len() {
                    if n >= d && &s.commands[n - d..n] == ctx {
                        counts[s.commands[n].index()] += 1;
                    }
                }
            }
            if d == 0 || counts.iter().sum::<u64>() >= min_count {
                chosen = counts;
                break;
            }
        }
        let total: u64 = chosen.iter().sum();
        let got = tree.predict(&prefix);
        for w in 0..V as usize {
            let want = (chosen[w] as f64 + 1.0) / (total as f64 + V as f64);
            prop_assert!((got[w] - want).abs() < 1e-12, "w={} got {} want {}", w, got[w], want);
        }
    }

    #[test]
    fn capping_repeats_bounds_runs_and_keeps_order(raw in prop::collection::vec(0..3u32, 0..40), max in 1usize..4) {
        let s = CommandSequence::new("u", raw.iter().map(|&c| CommandId(c)).collect());
        let capped = cap_repeats(&s, max);
        let mut run = 0;
        for (j, c) in capped.commands.iter().enumerate() {
            run = if j > 0 && capped.commands[j - 1] == *c { run + 1 } else { 1 };
            prop_assert!(run <= max);
        }
        // Runs are shortened, never removed or reordered.
        let skeleton = |v: &[CommandId]| { let mut d = v.to_vec(); d.dedup(); d };
        prop_assert_eq!(skeleton(&capped.commands), skeleton(&s.commands));
        prop_assert_eq!(cap_repeats(&capped, max).commands, capped.commands);
    }

    #[test]
    fn user_split_is_disjoint_and_complete(corpus in sequences(), frac in 0.0f64..1.0, seed in 0u64..50) {
        let users: BTreeSet<&str> = corpus.iter().map(|s| s.user.as_str()).collect();
        prop_assume!(users.len() >= 2);
        let (train, test) = split_by_user(&corpus, frac, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), corpus.len());
        let a: BTreeSet<&str> = train.iter().map(|s| s.user.as_str()).collect();
        let b: BTreeSet<&str> = test.iter().map(|s| s.user.as_str()).collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(split_by_user(&corpus, frac, seed).unwrap(), (train, test));
    }

    #[test]
    fn auroc_matches_pairwise_count(data in prop::collection::vec((0u8..5, any::<bool>()), 2..50)) {
        let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        let (pos, neg): (Vec<f64>, Vec<f64>) = {
            let p = scores.iter().zip(&labels).filter(|x| *x.1).map(|x| *x.0).collect();
            let n = scores.iter().zip(&labels).filter(|x| !*x.1).map(|x| *x.0).collect();
            (p, n)
        };
        match auroc(&scores, &labels) {
            Err(_) => prop_assert!(pos.is_empty() || neg.is_empty()),
            Ok(a) => {
                let mut wins = 0.0;
                for p in &pos {
                    for n in &neg {
                        wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
                    }
                }
                prop_assert!((a - wins / (pos.len() * neg.len()) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn precision_recall_matches_confusion_counts(data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..40), thr in 0.0f64..1.0) {
        let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        let tp = data.iter().filter(|d| d.0 >= thr && d.1).count() as f64;
        let fp = data.iter().filter(|d| d.0 >= thr && !d.1).count() as f64;
        let fneg = data.iter().filter(|d| d.0 < thr && d.1).count() as f64;
        if let Ok((p, r)) = precision_recall(&scores, &labels, thr) {
            prop_assert_eq!(p, if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 });
            prop_assert_eq!(r, if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 });
        }
    }

    #[test]
    fn rank_counts_strictly_better_candidates(probs in prop::collection::vec(0u8..4, 1..12), t in 0usize..12) {
        prop_assume!(t < probs.len());
        let p: Vec<f64> = probs.iter().map(|&x| x as f64).collect();
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        prop_assert_eq!(rank_of(&p, CommandId(t as u32)), order.iter().position(|&i| i == t).unwrap());
    }
}

#[test]
fn model_envelope_round_trips_and_checks_the_vocabulary() {
    let corpus = vec![CommandSequence::new(
        "u",
        vec![CommandId(0), CommandId(1), CommandId(0)],
    )];
    let m = fit_first_order(&corpus, 2).unwrap();
    let mut buf = Vec::new();
    write_model(&mut buf, ModelKind::Firstmm, "abc", &m).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let back: taskrec_core::markov::FirstOrderModel =
        read_model(&text, ModelKind::Firstmm, Some("abc")).unwrap();
    assert_eq!(back, m);
    assert!(read_model::<taskrec_core::markov::FirstOrderModel>(
        &text,
        ModelKind::Firstmm,
        Some("xyz")
    )
    .is_err());
    assert!(
        read_model::<taskrec_core::markov::FirstOrderModel>(&text, ModelKind::Pst, None).is_err()
    );
}
