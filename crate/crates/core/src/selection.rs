//! Greedy ranking that trades coverage (aspect score) against orthogonality
//! (similarity to aspects already ranked).

use std::cmp::Ordering;

use crate::dedup::SimilarityMatrix;
use crate::grouping::AspectGroup;

pub const DEFAULT_N: usize = 8;

pub struct SelectionInput {
    pub groups: Vec<AspectGroup>,
    /// Similarities between group representatives.
    pub sim: SimilarityMatrix,
    pub n: usize,
}

/// Priority of a remaining candidate: `score / max sim to ranked`.
/// Zero similarity ranks above every finite ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Priority {
    Ratio(f64),
    Orthogonal,
}

impl Priority {
    fn cmp(&self, other: &Priority) -> Ordering {
        match (self, other) {
            (Priority::Orthogonal, Priority::Orthogonal) => Ordering::Equal,
            (Priority::Orthogonal, _) => Ordering::Greater,
            (_, Priority::Orthogonal) => Ordering::Less,
            (Priority::Ratio(a), Priority::Ratio(b)) => a.total_cmp(b),
        }
    }
}

/// Full greedy order over items with the given scores and labels.
///
/// The first pick is the highest score. Each later pick maximizes
/// `score / max_{ranked} sim`; ties fall back to the higher score, then the
/// lexicographically smaller label.
pub fn greedy_order<F>(scores: &[f64], labels: &[&str], sim: F) -> Vec<usize>
where
    F: Fn(usize, usize) -> f64,
{
    let n = scores.len();
    assert_eq!(labels.len(), n);
    let better_base = |a: usize, b: usize| -> Ordering {
        scores[a]
            .total_cmp(&scores[b])
            .then_with(|| labels[b].cmp(labels[a]))
    };

    let mut remaining: Vec<usize> = (0..n).collect();
    let mut ranked: Vec<usize> = Vec::with_capacity(n);
    // running max similarity of each item to the ranked set
    let mut max_sim = vec![0.0f64; n];
    while !remaining.is_empty() {
        let pick_pos = if ranked.is_empty() {
            (0..remaining.len())
                .max_by(|&x, &y| better_base(remaining[x], remaining[y]))
                .expect("nonempty")
        } else {
            let priority = |i: usize| {
                if max_sim[i] == 0.0 {
                    Priority::Orthogonal
                } else {
                    Priority::Ratio(scores[i] / max_sim[i])
                }
            };
            (0..remaining.len())
                .max_by(|&x, &y| {
                    let (a, b) = (remaining[x], remaining[y]);
                    priority(a).cmp(&priority(b)).then_with(|| better_base(a, b))
                })
                .expect("nonempty")
        };
        let picked = remaining.swap_remove(pick_pos);
        for &i in &remaining {
            max_sim[i] = max_sim[i].max(sim(i, picked));
        }
        ranked.push(picked);
    }
    ranked
}

/// Rank every group and return the first `n`.
pub fn select(input: &SelectionInput) -> Vec<AspectGroup> {
    assert!(input.n >= 1, "output budget must be positive");
    let labels: Vec<&str> = input.groups.iter().map(|g| g.representative()).collect();
    let scores: Vec<f64> = input.groups.iter().map(|g| g.group_score).collect();
    let idx: Vec<usize> = labels
        .iter()
        .map(|l| input.sim.index_of(l).unwrap_or_else(|| panic!("no similarity row for {l:?}")))
        .collect();
    let display: Vec<&str> = input.groups.iter().map(|g| g.display_label.as_str()).collect();
    greedy_order(&scores, &display, |a, b| input.sim.get(idx[a], idx[b]))
        .into_iter()
        .take(input.n)
        .map(|i| input.groups[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dedup::AspectCluster;
    use proptest::prelude::*;

    fn group(label: &str, score: f64) -> AspectGroup {
        AspectGroup {
            display_label: label.into(),
            members: vec![AspectCluster {
                label: label.into(),
                members: vec![label.into()],
                label_score: score,
            }],
            group_score: score,
            is_vertical: false,
            class: None,
            resolved: vec![None],
        }
    }

    fn input(scores: &[(&str, f64)], pairs: &[(usize, usize, f64)], n: usize) -> SelectionInput {
        let k = scores.len();
        let mut rows = vec![vec![0.0; k]; k];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for &(i, j, s) in pairs {
            rows[i][j] = s;
            rows[j][i] = s;
        }
        SelectionInput {
            groups: scores.iter().map(|(l, s)| group(l, *s)).collect(),
            sim: SimilarityMatrix::from_rows(scores.iter().map(|(l, _)| l.to_string()).collect(), &rows),
            n,
        }
    }

    fn labels(groups: &[AspectGroup]) -> Vec<&str> {
        groups.iter().map(|g| g.display_label.as_str()).collect()
    }

    #[test]
    fn single_aspect() {
        assert_eq!(labels(&select(&input(&[("a", 0.3)], &[], 8))), ["a"]);
    }

    #[test]
    fn orthogonality_beats_raw_score() {
        let inp = input(
            &[("a1", 0.5), ("a2", 0.4), ("a3", 0.1)],
            &[(0, 1, 0.9), (0, 2, 0.1), (1, 2, 0.1)],
            8,
        );
        assert_eq!(labels(&select(&inp)), ["a1", "a3", "a2"]);
    }

    #[test]
    fn zero_similarity_goes_first_by_score_then_label() {
        let inp = input(
            &[("top", 0.9), ("near", 0.8), ("free_b", 0.1), ("free_a", 0.1)],
            &[(0, 1, 0.01)],
            8,
        );
        assert_eq!(labels(&select(&inp)), ["top", "free_a", "free_b", "near"]);
    }

    #[test]
    fn budget_truncates() {
        let inp = input(&[("a", 0.5), ("b", 0.4), ("c", 0.1)], &[], 2);
        assert_eq!(select(&inp).len(), 2);
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..7).prop_flat_map(|n| {
            (
                prop::collection::vec(0.01f64..1.0, n),
                prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], n * n),
            )
        })
    }

    proptest! {
        #[test]
        fn prefix_and_scale_invariance((scores, sims) in arb_instance(), c in 0.1f64..10.0) {
            let n = scores.len();
            let names: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
            let pairs: Vec<(usize, usize, f64)> = (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .map(|(i, j)| (i, j, sims[i * n + j]))
                .collect();
            let named: Vec<(&str, f64)> = names.iter().map(String::as_str).zip(scores.iter().copied()).collect();
            let full = select(&input(&named, &pairs, n));
            for budget in 1..n {
                let part = select(&input(&named, &pairs, budget));
                prop_assert_eq!(labels(&part), labels(&full[..budget]));
            }
            let scaled: Vec<(&str, f64)> = named.iter().map(|(l, s)| (*l, s * c)).collect();
            let rescaled = select(&input(&scaled, &pairs, n));
            prop_assert_eq!(labels(&rescaled), labels(&full));
            prop_assert_eq!(full.len(), n);
        }
    }
}
