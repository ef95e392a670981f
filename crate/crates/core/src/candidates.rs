//! Instance-level candidate aspects mined from refinements and super-strings.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::logmodel::{normalize_query, tokens, LogStats};

/// Placeholder standing in for the query entity inside canonical patterns.
pub const ENTITY_PLACEHOLDER: &str = "<E>";

/// Default number of candidates carried forward per query.
pub const DEFAULT_CANDIDATE_CAP: usize = 30;

/// A query split into its entity and optional property.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentedQuery {
    pub full: String,
    pub entity: String,
    pub property: Option<String>,
}

impl SegmentedQuery {
    pub fn new(entity: &str, property: Option<&str>) -> Self {
        let entity = normalize_query(entity);
        let property = property.map(normalize_query).filter(|p| !p.is_empty());
        let full = match &property {
            Some(p) => format!("{entity} {p}"),
            None => entity.clone(),
        };
        SegmentedQuery {
            full,
            entity,
            property,
        }
    }

    /// Parse a `full<TAB>entity[<TAB>property]` row. Returns `None` if the
    /// full query is not the entity followed by the property.
    pub fn parse_row(line: &str) -> Option<Self> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 {
            return None;
        }
        let property = cols.get(2).map(|p| p.trim()).filter(|p| !p.is_empty());
        let q = SegmentedQuery::new(cols[1], property);
        (!q.entity.is_empty() && normalize_query(cols[0]) == q.full).then_some(q)
    }

    /// Same query shape for a different entity of the class.
    pub fn with_entity(&self, entity: &str) -> Self {
        SegmentedQuery::new(entity, self.property.as_deref())
    }
}

impl fmt::Display for SegmentedQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.full)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Refinement,
    Superstring,
    Both,
    Propagated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAspect {
    pub surface: String,
    pub canonical: String,
    pub p_r: f64,
    pub p_ss: f64,
    pub p_inst: f64,
    pub origin: Origin,
}

/// Position of `needle` as a contiguous token run inside `hay`.
fn find_run(hay: &[&str], needle: &[&str]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Whether `query`'s tokens appear contiguously in `candidate`.
pub fn contains_tokens(candidate: &str, query: &str) -> bool {
    find_run(&tokens(candidate), &tokens(query)).is_some()
}

/// Replace every token-aligned occurrence of `entity` in `surface` with the
/// placeholder. Surfaces without the entity are returned unchanged.
pub fn canonicalize(surface: &str, entity: &str) -> String {
    let hay = tokens(surface);
    let needle = tokens(entity);
    if find_run(&hay, &needle).is_none() {
        return surface.to_string();
    }
    let mut out: Vec<&str> = Vec::with_capacity(hay.len());
    let mut i = 0;
    while i < hay.len() {
        if hay[i..].starts_with(&needle) {
            out.push(ENTITY_PLACEHOLDER);
            i += needle.len();
        } else {
            out.push(hay[i]);
            i += 1;
        }
    }
    out.join(" ")
}

/// Substitute `entity` back into a canonical pattern.
pub fn instantiate(pattern: &str, entity: &str) -> String {
    pattern
        .split_whitespace()
        .map(|t| if t == ENTITY_PLACEHOLDER { entity } else { t })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Refinement scores: follow counts of `query` normalized to sum to one.
pub fn refinements(stats: &LogStats, query: &str) -> BTreeMap<String, f64> {
    let followers = stats.followers(query);
    let total: u64 = followers.iter().map(|(_, c)| c).sum();
    if total == 0 {
        return BTreeMap::new();
    }
    followers
        .into_iter()
        .map(|(q, c)| (q.to_string(), c as f64 / total as f64))
        .collect()
}

/// Super-string scores, treating each super-string as a pseudo-refinement
/// of `query`. The query's own count stays in the denominator, so the
/// scores sum to less than one whenever the query itself was logged.
pub fn superstrings(stats: &LogStats, query: &str) -> BTreeMap<String, f64> {
    let needle = tokens(query);
    let Some(first) = needle.first() else {
        return BTreeMap::new();
    };
    let supers: Vec<(&str, u64)> = stats
        .queries_with_token(first)
        .iter()
        .filter(|q| q.as_str() != query && find_run(&tokens(q), &needle).is_some())
        .map(|q| (q.as_str(), stats.count(q)))
        .collect();
    let denom = stats.count(query) + supers.iter().map(|(_, c)| c).sum::<u64>();
    if supers.is_empty() || denom == 0 {
        return BTreeMap::new();
    }
    supers
        .into_iter()
        .map(|(q, c)| (q.to_string(), c as f64 / denom as f64))
        .collect()
}

/// Fuse refinements and super-strings, keep the `cap` best by
/// `max(p_r, p_ss)` and renormalize the kept scores into `p_inst`.
pub fn instance_aspects(stats: &LogStats, query: &SegmentedQuery, cap: usize) -> Vec<CandidateAspect> {
    assert!(cap >= 1, "candidate cap must be positive");
    let refs = refinements(stats, &query.full);
    let supers = superstrings(stats, &query.full);

    let mut merged: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for (q, &p) in &refs {
        merged.entry(q).or_default().0 = p;
    }
    for (q, &p) in &supers {
        merged.entry(q).or_default().1 = p;
    }

    let mut raw: Vec<(&str, f64, f64, f64)> = merged
        .into_iter()
        .map(|(q, (pr, pss))| (q, pr, pss, pr.max(pss)))
        .collect();
    raw.sort_by(|a, b| b.3.total_cmp(&a.3).then_with(|| a.0.cmp(b.0)));
    raw.truncate(cap);

    let total: f64 = raw.iter().map(|r| r.3).sum();
    raw.into_iter()
        .map(|(surface, p_r, p_ss, score)| CandidateAspect {
            surface: surface.to_string(),
            canonical: canonicalize(surface, &query.entity),
            p_r,
            p_ss,
            p_inst: score / total,
            origin: match (p_r > 0.0, p_ss > 0.0) {
                (true, true) => Origin::Both,
                (true, false) => Origin::Refinement,
                _ => Origin::Superstring,
            },
        })
        .collect()
}

/// `p_inst` keyed by canonical pattern.
pub fn pattern_distribution(candidates: &[CandidateAspect]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for c in candidates {
        *out.entry(c.canonical.clone()).or_insert(0.0) += c.p_inst;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logmodel::{count_stats, QueryEvent, Session};
    use proptest::prelude::*;

    fn stats_from(sessions: &[&[&str]]) -> LogStats {
        let sessions: Vec<Session> = sessions
            .iter()
            .map(|qs| Session {
                user_id: "u".into(),
                events: qs
                    .iter()
                    .enumerate()
                    .map(|(i, q)| QueryEvent {
                        user_id: "u".into(),
                        timestamp: i as i64,
                        query: q.to_string(),
                    })
                    .collect(),
            })
            .collect();
        count_stats(&sessions)
    }

    #[test]
    fn refinement_scores() {
        let stats = stats_from(&[&["q", "a"], &["q", "a"], &["q", "b"]]);
        let r = refinements(&stats, "q");
        assert!((r["a"] - 2.0 / 3.0).abs() < 1e-15);
        assert!((r["b"] - 1.0 / 3.0).abs() < 1e-15);
        let single = refinements(&stats_from(&[&["q", "a"]]), "q");
        assert_eq!(single["a"], 1.0);
        assert!(refinements(&stats, "absent").is_empty());
    }

    #[test]
    fn superstring_scores_use_lower_bound() {
        let mut sessions: Vec<&[&str]> = vec![&["vietnam travel"]; 10];
        sessions.extend(vec![&["vietnam travel visa"] as &[&str]; 5]);
        sessions.extend(vec![&["vietnam travel guide"] as &[&str]; 5]);
        sessions.push(&["vietnam traveler"]);
        let stats = stats_from(&sessions);
        let ss = superstrings(&stats, "vietnam travel");
        assert_eq!(ss.len(), 2, "token containment, not substring: {ss:?}");
        assert_eq!(ss["vietnam travel visa"], 0.25);
        assert_eq!(ss["vietnam travel guide"], 0.25);
        assert!(ss.values().sum::<f64>() < 1.0);
        assert!(superstrings(&stats, "vietnam travel guide").is_empty());
    }

    #[test]
    fn fusion_takes_max_then_normalizes() {
        // p_r(visa) = 0.6, p_ss(visa) = 0.25
        let mut sessions: Vec<&[&str]> = vec![];
        sessions.extend(vec![&["vietnam travel", "vietnam travel visa"] as &[&str]; 3]);
        sessions.extend(vec![&["vietnam travel", "hanoi"] as &[&str]; 2]);
        let stats = stats_from(&sessions);
        let q = SegmentedQuery::new("vietnam", Some("travel"));
        let c = instance_aspects(&stats, &q, 30);
        assert_eq!(c[0].surface, "vietnam travel visa");
        assert_eq!(c[0].p_r, 0.6);
        assert_eq!(c[0].p_ss, 3.0 / 8.0);
        assert_eq!(c[0].origin, Origin::Both);
        assert_eq!(c[0].canonical, "<E> travel visa");
        assert_eq!(c[1].canonical, "hanoi");
        assert_eq!(c[1].origin, Origin::Refinement);
        assert!((c[0].p_inst - 0.6).abs() < 1e-15);
        assert!((c[1].p_inst - 0.4).abs() < 1e-15);
    }

    #[test]
    fn cap_keeps_best_with_lexicographic_ties() {
        let stats = stats_from(&[&["q", "c"], &["q", "b"], &["q", "a"], &["q", "a"]]);
        let q = SegmentedQuery::new("q", None);
        let c = instance_aspects(&stats, &q, 2);
        let names: Vec<&str> = c.iter().map(|c| c.surface.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
        assert!((c.iter().map(|c| c.p_inst).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sources_give_no_candidates() {
        let stats = stats_from(&[&["other"]]);
        assert!(instance_aspects(&stats, &SegmentedQuery::new("laos", None), 30).is_empty());
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(canonicalize("vietnam travel visa", "vietnam"), "<E> travel visa");
        assert_eq!(canonicalize("cambodia travel", "vietnam"), "cambodia travel");
        assert_eq!(canonicalize("new york university", "new york"), "<E> university");
        assert_eq!(instantiate("<E> travel visa", "laos"), "laos travel visa");
    }

    #[test]
    fn parse_query_rows() {
        let q = SegmentedQuery::parse_row("laos travel\tlaos\ttravel").unwrap();
        assert_eq!(q.property.as_deref(), Some("travel"));
        assert!(SegmentedQuery::parse_row("laos travel\tvietnam\ttravel").is_none());
        let bare = SegmentedQuery::parse_row("Kobe Bryant\tkobe bryant").unwrap();
        assert_eq!(bare.full, "kobe bryant");
        assert!(bare.property.is_none());
    }

    proptest! {
        #[test]
        fn candidate_invariants(
            rows in prop::collection::vec((0usize..8, 0usize..8), 1..40),
            cap in 1usize..10,
        ) {
            let vocab = ["e", "e x", "e y", "z e", "a", "b", "e x y", "c"];
            let sessions: Vec<Vec<&str>> = rows.iter().map(|&(a, b)| vec![vocab[a], vocab[b]]).collect();
            let refs: Vec<&[&str]> = sessions.iter().map(|s| s.as_slice()).collect();
            let stats = stats_from(&refs);
            let q = SegmentedQuery::new("e", None);
            let c = instance_aspects(&stats, &q, cap);
            prop_assert!(c.len() <= cap);
            if !c.is_empty() {
                let total: f64 = c.iter().map(|c| c.p_inst).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
            for w in c.windows(2) {
                prop_assert!(w[0].p_inst > w[1].p_inst || (w[0].p_inst == w[1].p_inst && w[0].surface < w[1].surface));
            }
            for a in &c {
                for p in [a.p_r, a.p_ss, a.p_inst] {
                    prop_assert!((0.0..=1.0).contains(&p));
                }
                prop_assert_eq!(a.canonical.contains(ENTITY_PLACEHOLDER), contains_tokens(&a.surface, "e"));
            }
            for s in superstrings(&stats, "e").keys() {
                prop_assert!(contains_tokens(s, "e"));
            }
        }

        #[test]
        fn refinement_score_monotone(extra in 1usize..5, base_a in 1usize..4, base_b in 1usize..4) {
            let mk = |na: usize| {
                let mut s: Vec<&[&str]> = vec![&["q", "a"]; na];
                s.extend(vec![&["q", "b"] as &[&str]; base_b]);
                stats_from(&s)
            };
            let before = refinements(&mk(base_a), "q")["a"];
            let after = refinements(&mk(base_a + extra), "q")["a"];
            prop_assert!(after >= before);
        }
    }
}
