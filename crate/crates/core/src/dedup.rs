//! Duplicate elimination: connected components of the σ-threshold
//! similarity graph.

use std::collections::BTreeMap;

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::retrieval::Retriever;

pub const DEFAULT_SIGMA: f64 = 0.35;

/// Symmetric aspect-similarity matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub aspects: Vec<String>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Build from a full row-major matrix. The upper triangle is mirrored so
    /// the result is exactly symmetric.
    pub fn from_rows(aspects: Vec<String>, rows: &[Vec<f64>]) -> Self {
        let n = aspects.len();
        assert_eq!(rows.len(), n, "matrix rows must match aspects");
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                values[i * n + j] = rows[i][j];
                values[j * n + i] = rows[i][j];
            }
        }
        SimilarityMatrix { aspects, values }
    }

    pub fn len(&self) -> usize {
        self.aspects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aspects.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn index_of(&self, aspect: &str) -> Option<usize> {
        self.aspects.iter().position(|a| a == aspect)
    }

    pub fn by_name(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.get(self.index_of(a)?, self.index_of(b)?))
    }

    /// Restrict to the given rows/columns, in that order.
    pub fn submatrix(&self, idx: &[usize]) -> SimilarityMatrix {
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| idx.iter().map(|&j| self.get(i, j)).collect())
            .collect();
        SimilarityMatrix::from_rows(idx.iter().map(|&i| self.aspects[i].clone()).collect(), &rows)
    }
}

/// Pairwise aspect similarities through retrieval. Each aspect is retrieved
/// once; each unordered pair is computed once.
pub fn similarity_matrix(aspects: &[String], retriever: &Retriever<'_>) -> SimilarityMatrix {
    let results: Vec<Vec<usize>> = aspects
        .par_iter()
        .map(|a| retriever.retrieve(a).doc_indices())
        .collect();
    let rows: Vec<Vec<f64>> = (0..aspects.len())
        .into_par_iter()
        .map(|i| {
            (0..aspects.len())
                .map(|j| {
                    if j < i {
                        0.0
                    } else {
                        retriever.set_similarity(&results[i], &results[j])
                    }
                })
                .collect()
        })
        .collect();
    SimilarityMatrix::from_rows(aspects.to_vec(), &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectCluster {
    pub label: String,
    pub members: Vec<String>,
    pub label_score: f64,
}

/// Connected components of the graph with an edge wherever `sim > sigma`.
/// Returns member index lists, each sorted, ordered by smallest member.
pub fn components(matrix: &SimilarityMatrix, sigma: f64) -> Vec<Vec<usize>> {
    let n = matrix.len();
    let mut uf = UnionFind::<usize>::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if matrix.get(i, j) > sigma {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

/// Cluster aspects and label each cluster with its highest-scoring member
/// (ties: lexicographically smallest). Clusters are ordered by label score
/// descending, then label.
pub fn cluster(matrix: &SimilarityMatrix, scores: &BTreeMap<String, f64>, sigma: f64) -> Vec<AspectCluster> {
    assert!((0.0..=1.0).contains(&sigma), "sigma must lie in [0, 1]");
    let score = |a: &str| scores.get(a).copied().unwrap_or(0.0);
    let mut clusters: Vec<AspectCluster> = components(matrix, sigma)
        .into_iter()
        .map(|idx| {
            let mut members: Vec<String> = idx.iter().map(|&i| matrix.aspects[i].clone()).collect();
            members.sort_by(|a, b| score(b).total_cmp(&score(a)).then_with(|| a.cmp(b)));
            AspectCluster {
                label: members[0].clone(),
                label_score: score(&members[0]),
                members,
            }
        })
        .collect();
    clusters.sort_by(|a, b| {
        b.label_score
            .total_cmp(&a.label_score)
            .then_with(|| a.label.cmp(&b.label))
    });
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(names: &[&str], pairs: &[(usize, usize, f64)]) -> SimilarityMatrix {
        let n = names.len();
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..n {
            rows[i][i] = 1.0;
        }
        for &(i, j, s) in pairs {
            rows[i][j] = s;
            rows[j][i] = s;
        }
        SimilarityMatrix::from_rows(names.iter().map(|s| s.to_string()).collect(), &rows)
    }

    fn scores(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(a, s)| (a.to_string(), *s)).collect()
    }

    #[test]
    fn transitive_connectivity() {
        let m = matrix(&["a", "b", "c"], &[(0, 1, 0.6), (1, 2, 0.5), (0, 2, 0.1)]);
        let c = cluster(&m, &scores(&[("a", 0.2), ("b", 0.5), ("c", 0.3)]), 0.35);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].label, "b");
        assert_eq!(c[0].label_score, 0.5);
        assert_eq!(c[0].members, ["b", "c", "a"]);
    }

    #[test]
    fn threshold_extremes() {
        let m = matrix(&["a", "b", "c"], &[(0, 1, 0.6), (1, 2, 0.5), (0, 2, 0.1)]);
        let s = scores(&[("a", 0.2), ("b", 0.5), ("c", 0.3)]);
        assert_eq!(cluster(&m, &s, 0.6).len(), 3, "strict inequality");
        assert_eq!(cluster(&m, &s, 0.0).len(), 1);
        let labels: Vec<String> = cluster(&m, &s, 0.9).into_iter().map(|c| c.label).collect();
        assert_eq!(labels, ["b", "c", "a"]);
    }

    #[test]
    fn label_ties_are_lexicographic() {
        let m = matrix(&["zeta", "alpha"], &[(0, 1, 0.9)]);
        let c = cluster(&m, &scores(&[("zeta", 0.4), ("alpha", 0.4)]), 0.35);
        assert_eq!(c[0].label, "alpha");
    }

    #[test]
    fn single_aspect() {
        let m = matrix(&["a"], &[]);
        assert_eq!(m.len(), 1);
        assert_eq!(cluster(&m, &scores(&[("a", 1.0)]), 0.35).len(), 1);
    }

    #[test]
    fn retrieval_backed_matrix_is_symmetric() {
        use crate::retrieval::{index, Document};
        let corpus = index(vec![
            Document::new("1", "vietnam travel package", "tour deal hanoi"),
            Document::new("2", "vietnam travel packages", "tour deal saigon"),
            Document::new("3", "vietnam visa", "embassy application"),
        ])
        .unwrap();
        let r = Retriever::new(&corpus, 8);
        let aspects: Vec<String> = ["vietnam travel package", "vietnam travel packages", "vietnam visa"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let m = similarity_matrix(&aspects, &r);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        assert!(m.get(0, 1) > m.get(0, 2));
    }

    fn brute_force(m: &SimilarityMatrix, sigma: f64) -> Vec<Vec<usize>> {
        // label propagation to a fixed point over all pairs
        let n = m.len();
        let mut label: Vec<usize> = (0..n).collect();
        loop {
            let mut changed = false;
            for i in 0..n {
                for j in 0..n {
                    if i != j && m.get(i, j) > sigma && label[j] < label[i] {
                        label[i] = label[j];
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, l) in label.into_iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        groups.into_values().collect()
    }

    fn arb_matrix() -> impl Strategy<Value = SimilarityMatrix> {
        (1usize..=10).prop_flat_map(|n| {
            prop::collection::vec(0.0f64..1.0, n * n).prop_map(move |v| {
                let rows: Vec<Vec<f64>> = (0..n).map(|i| v[i * n..(i + 1) * n].to_vec()).collect();
                SimilarityMatrix::from_rows((0..n).map(|i| format!("a{i}")).collect(), &rows)
            })
        })
    }

    proptest! {
        #[test]
        fn components_match_brute_force(m in arb_matrix(), sigma in 0.0f64..1.0) {
            prop_assert_eq!(components(&m, sigma), brute_force(&m, sigma));
        }

        #[test]
        fn clustering_invariants(m in arb_matrix(), s1 in 0.0f64..1.0, s2 in 0.0f64..1.0, raw in prop::collection::vec(0.0f64..1.0, 10)) {
            let scores: BTreeMap<String, f64> = m.aspects.iter().cloned().zip(raw).collect();
            let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
            let coarse = cluster(&m, &scores, lo);
            let fine = cluster(&m, &scores, hi);
            prop_assert!(coarse.len() <= fine.len());
            let mut all: Vec<String> = coarse.iter().flat_map(|c| c.members.clone()).collect();
            all.sort();
            let mut expected = m.aspects.clone();
            expected.sort();
            prop_assert_eq!(all, expected);
            for c in &coarse {
                prop_assert!(c.members.contains(&c.label));
                prop_assert!(c.members.iter().all(|a| scores[a] <= c.label_score));
            }
        }
    }
}
