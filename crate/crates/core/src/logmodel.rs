//! Query-log ingestion: normalization, sessionization and the session /
//! occurrence counts consumed by candidate scoring.
//!
//! Sessions are delimited per user by an inactivity gap. Two counts come out
//! of a sessionized log:
//!
//! - `follow_count(q, q')`: number of sessions in which `q'` occurs at any
//!   position after an occurrence of `q` (at most once per session).
//! - `count(q)`: raw number of occurrences of `q` over the whole log.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default inactivity gap separating two sessions of the same user.
pub const DEFAULT_SESSION_GAP: i64 = 1800;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryEvent {
    pub user_id: String,
    pub timestamp: i64,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub user_id: String,
    pub events: Vec<QueryEvent>,
}

impl Session {
    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.events.iter().map(|e| e.query.as_str())
    }
}

/// Lowercase, strip punctuation and collapse whitespace.
///
/// Apostrophes survive only inside a token (`"o'neil"`); every other
/// non-alphanumeric character acts as a token separator.
pub fn normalize_query(raw: &str) -> String {
    normalize_with(raw, &[])
}

/// Same as [`normalize_query`], additionally retaining any character in `keep`.
pub fn normalize_with(raw: &str, keep: &[char]) -> String {
    let chars: Vec<char> = raw.chars().collect();
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for (i, &c) in chars.iter().enumerate() {
        let retained = if c.is_alphanumeric() || keep.contains(&c) {
            Some(c)
        } else if c == '\'' || c == '\u{2019}' {
            let inner = i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
            inner.then_some('\'')
        } else {
            None
        };
        match retained {
            Some(c) => {
                if pending_space && !out.is_empty() {
                    out.push(' ');
                }
                pending_space = false;
                out.extend(c.to_lowercase());
            }
            None => pending_space = true,
        }
    }
    out
}

/// Whitespace tokens of an already normalized query.
pub fn tokens(query: &str) -> Vec<&str> {
    query.split_whitespace().collect()
}

/// Partition events into per-user sessions, splitting wherever two
/// consecutive events of a user are `gap_seconds` or more apart. A gap of
/// exactly the threshold already ends the session.
///
/// Users appear in order of their first event in the input; events of a user
/// are stably sorted by timestamp.
pub fn sessionize(events: &[QueryEvent], gap_seconds: i64) -> Vec<Session> {
    assert!(gap_seconds > 0, "session gap must be positive");
    let mut order: Vec<&str> = Vec::new();
    let mut by_user: HashMap<&str, Vec<&QueryEvent>> = HashMap::new();
    for event in events {
        let slot = by_user.entry(event.user_id.as_str()).or_insert_with(|| {
            order.push(event.user_id.as_str());
            Vec::new()
        });
        slot.push(event);
    }

    let mut sessions = Vec::new();
    for user in order {
        let mut user_events = by_user.remove(user).unwrap_or_default();
        user_events.sort_by_key(|e| e.timestamp);
        let mut current: Vec<QueryEvent> = Vec::new();
        for event in user_events {
            if let Some(last) = current.last() {
                if event.timestamp - last.timestamp >= gap_seconds {
                    sessions.push(Session {
                        user_id: user.to_string(),
                        events: std::mem::take(&mut current),
                    });
                }
            }
            current.push(event.clone());
        }
        if !current.is_empty() {
            sessions.push(Session {
                user_id: user.to_string(),
                events: current,
            });
        }
    }
    sessions
}

/// Immutable count statistics over a sessionized log.
#[derive(Debug, Clone, Default)]
pub struct LogStats {
    follow: HashMap<String, HashMap<String, u64>>,
    counts: HashMap<String, u64>,
    session_presence: HashMap<String, u64>,
    /// first token -> queries containing it, sorted
    by_token: HashMap<String, Vec<String>>,
    sessions: usize,
}

impl LogStats {
    /// Sessions in which `next` occurs after `query`.
    pub fn follow_count(&self, query: &str, next: &str) -> u64 {
        self.follow
            .get(query)
            .and_then(|m| m.get(next))
            .copied()
            .unwrap_or(0)
    }

    /// All `(next, count)` pairs following `query`, sorted by `next`.
    pub fn followers(&self, query: &str) -> Vec<(&str, u64)> {
        let mut out: Vec<(&str, u64)> = self
            .follow
            .get(query)
            .map(|m| m.iter().map(|(k, &v)| (k.as_str(), v)).collect())
            .unwrap_or_default();
        out.sort_unstable();
        out
    }

    /// Raw number of occurrences of `query`.
    pub fn count(&self, query: &str) -> u64 {
        self.counts.get(query).copied().unwrap_or(0)
    }

    /// Number of sessions containing `query` at least once.
    pub fn sessions_containing(&self, query: &str) -> u64 {
        self.session_presence.get(query).copied().unwrap_or(0)
    }

    pub fn contains(&self, query: &str) -> bool {
        self.counts.contains_key(query)
    }

    pub fn session_count(&self) -> usize {
        self.sessions
    }

    pub fn total_events(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Distinct queries, sorted.
    pub fn vocabulary(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.counts.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }

    /// Vocabulary queries that contain `token`, sorted.
    pub fn queries_with_token(&self, token: &str) -> &[String] {
        self.by_token.get(token).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Compute follow counts and occurrence counts.
///
/// Self-follows (`q` after `q`) are not recorded: a query is never its own
/// refinement.
pub fn count_stats(sessions: &[Session]) -> LogStats {
    let mut stats = LogStats {
        sessions: sessions.len(),
        ..LogStats::default()
    };
    for session in sessions {
        let mut seen_before: Vec<&str> = Vec::new();
        let mut seen_set: HashSet<&str> = HashSet::new();
        let mut pairs: HashSet<(&str, &str)> = HashSet::new();
        for q in session.queries() {
            *stats.counts.entry(q.to_string()).or_default() += 1;
            for &prev in &seen_before {
                if prev != q {
                    pairs.insert((prev, q));
                }
            }
            if seen_set.insert(q) {
                seen_before.push(q);
            }
        }
        for q in seen_set {
            *stats.session_presence.entry(q.to_string()).or_default() += 1;
        }
        for (q, next) in pairs {
            *stats
                .follow
                .entry(q.to_string())
                .or_default()
                .entry(next.to_string())
                .or_default() += 1;
        }
    }

    let mut by_token: HashMap<String, BTreeSet<String>> = HashMap::new();
    for q in stats.counts.keys() {
        for t in tokens(q) {
            by_token.entry(t.to_string()).or_default().insert(q.clone());
        }
    }
    stats.by_token = by_token
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().collect()))
        .collect();
    stats
}

/// Outcome of reading a log file: parsed events and the number of rows
/// dropped for malformed fields or empty normalized queries.
#[derive(Debug, Clone, Default)]
pub struct LogRead {
    pub events: Vec<QueryEvent>,
    pub dropped: usize,
}

/// Parse a `user_id<TAB>timestamp<TAB>query` log.
pub fn read_log(path: &Path) -> Result<LogRead> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = LogRead::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_log_line(&line) {
            Some(event) => out.events.push(event),
            None => {
                log::warn!("{}:{}: dropping malformed log row", path.display(), idx + 1);
                out.dropped += 1;
            }
        }
    }
    if out.dropped > 0 {
        log::warn!("{}: dropped {} rows", path.display(), out.dropped);
    }
    Ok(out)
}

fn parse_log_line(line: &str) -> Option<QueryEvent> {
    let mut cols = line.splitn(3, '\t');
    let user_id = cols.next()?.trim();
    let timestamp: i64 = cols.next()?.trim().parse().ok()?;
    let query = normalize_query(cols.next()?);
    if user_id.is_empty() || timestamp < 0 || query.is_empty() {
        return None;
    }
    Some(QueryEvent {
        user_id: user_id.to_string(),
        timestamp,
        query,
    })
}

pub fn write_log<W: Write>(mut out: W, events: &[QueryEvent]) -> std::io::Result<()> {
    for e in events {
        writeln!(out, "{}\t{}\t{}", e.user_id, e.timestamp, e.query)?;
    }
    Ok(())
}

/// Read, sessionize and count a log file in one step.
pub fn load_stats(path: &Path, gap_seconds: i64) -> Result<LogStats> {
    let read = read_log(path)?;
    Ok(count_stats(&sessionize(&read.events, gap_seconds)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(user: &str, t: i64, q: &str) -> QueryEvent {
        QueryEvent {
            user_id: user.into(),
            timestamp: t,
            query: q.into(),
        }
    }

    fn session(qs: &[&str]) -> Session {
        Session {
            user_id: "u".into(),
            events: qs
                .iter()
                .enumerate()
                .map(|(i, q)| ev("u", i as i64, q))
                .collect(),
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_query("Vietnam   Travel"), "vietnam travel");
        assert_eq!(normalize_query("kobe bryant"), "kobe bryant");
        assert_eq!(normalize_query("  LAOS,travel "), "laos travel");
        assert_eq!(normalize_query("o'neil 'quoted'"), "o'neil quoted");
        assert_eq!(normalize_query("?!  ..."), "");
        assert_eq!(normalize_with("c++ tips", &['+']), "c++ tips");
    }

    #[test]
    fn singleton_session() {
        let s = sessionize(&[ev("a", 5, "x")], 1800);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].events.len(), 1);
    }

    #[test]
    fn gap_splits_sessions() {
        let events = [ev("a", 0, "e1"), ev("a", 600, "e2"), ev("a", 2400, "e3")];
        let s = sessionize(&events, 1800);
        let qs: Vec<Vec<&str>> = s.iter().map(|s| s.queries().collect()).collect();
        assert_eq!(qs, vec![vec!["e1", "e2"], vec!["e3"]]);
    }

    #[test]
    fn users_are_partitioned() {
        let events = [
            ev("a", 0, "a1"),
            ev("b", 1, "b1"),
            ev("a", 2, "a2"),
            ev("b", 3, "b2"),
        ];
        let s = sessionize(&events, 1800);
        assert_eq!(s.len(), 2);
        assert!(s[0].events.iter().all(|e| e.user_id == "a"));
        assert!(s[1].events.iter().all(|e| e.user_id == "b"));
    }

    #[test]
    fn follow_counts_once_per_session() {
        let stats = count_stats(&[
            session(&["q", "a"]),
            session(&["q", "a"]),
            session(&["q", "b"]),
        ]);
        assert_eq!(stats.follow_count("q", "a"), 2);
        assert_eq!(stats.follow_count("q", "b"), 1);
        assert_eq!(stats.count("q"), 3);
    }

    #[test]
    fn follow_is_positional() {
        let stats = count_stats(&[session(&["q", "a", "q"])]);
        assert_eq!(stats.follow_count("q", "a"), 1);
        assert_eq!(stats.follow_count("a", "q"), 1);
        assert_eq!(stats.follow_count("q", "q"), 0);
        assert_eq!(stats.count("q"), 2);
    }

    #[test]
    fn absent_query() {
        let stats = count_stats(&[session(&["x", "y"])]);
        assert_eq!(stats.count("q"), 0);
        assert!(stats.followers("q").is_empty());
        assert!(!stats.contains("q"));
    }

    #[test]
    fn malformed_rows_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.tsv");
        std::fs::write(
            &path,
            "# comment\nu1\t10\tVietnam Travel\nu1\tnoon\tx\nu2\t-4\ty\nu3\t12\t!!!\nu2\t20\tlaos\n",
        )
        .unwrap();
        let read = read_log(&path).unwrap();
        assert_eq!(read.dropped, 3);
        assert_eq!(read.events.len(), 2);
        assert_eq!(read.events[0].query, "vietnam travel");
    }

    fn arb_events() -> impl Strategy<Value = Vec<QueryEvent>> {
        prop::collection::vec((0u8..4, 0i64..20_000, 0u8..6), 0..60).prop_map(|rows| {
            rows.into_iter()
                .map(|(u, t, q)| ev(&format!("u{u}"), t, &format!("q{q}")))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn sessions_partition_events(events in arb_events(), gap in 1i64..5000) {
            let sessions = sessionize(&events, gap);
            let mut flat: Vec<QueryEvent> = sessions.iter().flat_map(|s| s.events.clone()).collect();
            let mut input = events.clone();
            let key = |e: &QueryEvent| (e.user_id.clone(), e.timestamp, e.query.clone());
            flat.sort_by_key(key);
            input.sort_by_key(key);
            prop_assert_eq!(flat, input);
            for s in &sessions {
                for w in s.events.windows(2) {
                    prop_assert_eq!(&w[0].user_id, &s.user_id);
                    prop_assert!(w[1].timestamp >= w[0].timestamp);
                    prop_assert!(w[1].timestamp - w[0].timestamp <= gap);
                }
            }
        }

        #[test]
        fn counts_are_conserved_and_bounded(events in arb_events()) {
            let sessions = sessionize(&events, 1800);
            let stats = count_stats(&sessions);
            prop_assert_eq!(stats.total_events(), events.len() as u64);
            for q in stats.vocabulary() {
                for (next, fs) in stats.followers(q) {
                    prop_assert!(fs >= 1);
                    prop_assert!(fs <= stats.sessions_containing(q).min(stats.sessions_containing(next)));
                }
            }
        }
    }
}
