//! Knowledge-base snapshot: entity classes, redirect synonyms and
//! disambiguation markers.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::logmodel::normalize_query;

/// Single-class knowledge base. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entity_class: HashMap<String, String>,
    redirects: HashMap<String, String>,
    ambiguous: HashSet<String>,
    /// lowercased class -> members
    class_members: BTreeMap<String, BTreeSet<String>>,
}

impl KnowledgeBase {
    /// Build from in-memory rows. Terms are normalized; class names keep
    /// their display casing.
    pub fn from_rows<'a>(
        entities: impl IntoIterator<Item = (&'a str, &'a str)>,
        redirects: impl IntoIterator<Item = (&'a str, &'a str)>,
        ambiguous: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let mut kb = KnowledgeBase::default();
        for (entity, class) in entities {
            kb.insert_entity(&normalize_query(entity), class.trim())?;
        }
        let raw: HashMap<String, String> = redirects
            .into_iter()
            .map(|(a, c)| (normalize_query(a), normalize_query(c)))
            .filter(|(a, c)| !a.is_empty() && !c.is_empty() && a != c)
            .collect();
        kb.redirects = collapse_redirects(&raw)?;
        kb.ambiguous = ambiguous
            .into_iter()
            .map(normalize_query)
            .filter(|t| !t.is_empty())
            .collect();
        Ok(kb)
    }

    fn insert_entity(&mut self, entity: &str, class: &str) -> Result<()> {
        if entity.is_empty() || class.is_empty() {
            return Ok(());
        }
        if let Some(prev) = self.entity_class.get(entity) {
            if !prev.eq_ignore_ascii_case(class) {
                return Err(Error::ConflictingClass {
                    entity: entity.to_string(),
                    first: prev.clone(),
                    second: class.to_string(),
                });
            }
            return Ok(());
        }
        let key = class.to_lowercase();
        // first spelling of a class wins as its display name
        let display = self
            .entity_class
            .values()
            .find(|c| c.to_lowercase() == key)
            .cloned()
            .unwrap_or_else(|| class.to_string());
        self.entity_class.insert(entity.to_string(), display);
        self.class_members
            .entry(key)
            .or_default()
            .insert(entity.to_string());
        Ok(())
    }

    /// Follow a redirect, if any.
    pub fn resolve<'a>(&'a self, term: &'a str) -> &'a str {
        self.redirects.get(term).map(String::as_str).unwrap_or(term)
    }

    pub fn is_ambiguous(&self, term: &str) -> bool {
        self.ambiguous.contains(self.resolve(term))
    }

    /// Class of `term` after redirect resolution, unless the resolved term
    /// is marked ambiguous.
    pub fn lookup_class(&self, term: &str) -> Option<&str> {
        let resolved = self.resolve(term);
        if self.ambiguous.contains(resolved) {
            return None;
        }
        self.entity_class.get(resolved).map(String::as_str)
    }

    /// Members of a class, matched case-insensitively, sorted.
    pub fn class_members(&self, class: &str) -> Vec<&str> {
        self.class_members
            .get(&class.to_lowercase())
            .map(|s| s.iter().map(String::as_str).collect())
            .unwrap_or_default()
    }

    /// `(entity, class)` rows sorted by entity.
    pub fn entities(&self) -> Vec<(&str, &str)> {
        let mut rows: Vec<(&str, &str)> = self
            .entity_class
            .iter()
            .map(|(e, c)| (e.as_str(), c.as_str()))
            .collect();
        rows.sort_unstable();
        rows
    }

    /// `(alias, canonical)` rows sorted by alias.
    pub fn redirects(&self) -> Vec<(&str, &str)> {
        let mut rows: Vec<(&str, &str)> = self
            .redirects
            .iter()
            .map(|(a, c)| (a.as_str(), c.as_str()))
            .collect();
        rows.sort_unstable();
        rows
    }

    pub fn ambiguous_terms(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.ambiguous.iter().map(String::as_str).collect();
        v.sort_unstable();
        v
    }

    pub fn write_entities<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (e, c) in self.entities() {
            writeln!(out, "{e}\t{c}")?;
        }
        Ok(())
    }

    pub fn write_redirects<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (a, c) in self.redirects() {
            writeln!(out, "{a}\t{c}")?;
        }
        Ok(())
    }

    pub fn write_disambiguation<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in self.ambiguous_terms() {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }
}

/// Point every alias at its final target; reject cycles.
fn collapse_redirects(raw: &HashMap<String, String>) -> Result<HashMap<String, String>> {
    let mut out = HashMap::with_capacity(raw.len());
    let mut aliases: Vec<&String> = raw.keys().collect();
    aliases.sort();
    for alias in aliases {
        let mut chain = vec![alias.clone()];
        let mut cur = alias;
        while let Some(next) = raw.get(cur) {
            if let Some(start) = chain.iter().position(|c| c == next) {
                let mut cycle = chain[start..].to_vec();
                cycle.push(next.clone());
                return Err(Error::RedirectCycle(cycle));
            }
            chain.push(next.clone());
            cur = next;
        }
        out.insert(alias.clone(), cur.clone());
    }
    Ok(out)
}

fn read_rows(path: &Path, columns: usize) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<String> = line.split('\t').map(|c| c.trim().to_string()).collect();
        if cols.len() < columns || cols[..columns].iter().any(String::is_empty) {
            return Err(Error::parse(path, idx + 1, format!("expected {columns} tab-separated columns")));
        }
        rows.push(cols);
    }
    Ok(rows)
}

/// Load the entity, redirect and disambiguation files.
pub fn load_kb(entities: &Path, redirects: &Path, disambiguation: &Path) -> Result<KnowledgeBase> {
    let entity_rows = read_rows(entities, 2)?;
    let redirect_rows = read_rows(redirects, 2)?;
    let ambiguous_rows = read_rows(disambiguation, 1)?;
    KnowledgeBase::from_rows(
        entity_rows.iter().map(|r| (r[0].as_str(), r[1].as_str())),
        redirect_rows.iter().map(|r| (r[0].as_str(), r[1].as_str())),
        ambiguous_rows.iter().map(|r| r[0].as_str()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn yale_kb() -> KnowledgeBase {
        KnowledgeBase::from_rows(
            [
                ("harvard university", "University"),
                ("new york university", "University"),
                ("oxford university", "University"),
                ("history", "Album"),
                ("laos", "country"),
            ],
            [("nyu", "new york university")],
            ["history", "food"],
        )
        .unwrap()
    }

    #[test]
    fn lookups() {
        let kb = yale_kb();
        assert_eq!(kb.lookup_class("laos"), Some("country"));
        assert_eq!(kb.lookup_class("harvard university"), Some("University"));
        assert_eq!(kb.lookup_class("nyu"), Some("University"));
        assert_eq!(kb.lookup_class("history"), None);
        assert_eq!(kb.lookup_class("food"), None);
        assert_eq!(kb.lookup_class("mars"), None);
        assert_eq!(kb.class_members("university").len(), 3);
    }

    #[test]
    fn multi_hop_redirects_collapse() {
        let kb = KnowledgeBase::from_rows(
            [("c", "K")],
            [("a", "b"), ("b", "c")],
            [],
        )
        .unwrap();
        assert_eq!(kb.resolve("a"), "c");
        assert_eq!(kb.lookup_class("a"), Some("K"));
        for (_, target) in kb.redirects() {
            assert_eq!(kb.resolve(target), target);
        }
    }

    #[test]
    fn redirect_cycle_is_fatal() {
        let err = KnowledgeBase::from_rows([], [("a", "b"), ("b", "c"), ("c", "a")], []).unwrap_err();
        match err {
            Error::RedirectCycle(chain) => assert_eq!(chain, ["a", "b", "c", "a"]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn conflicting_class_is_fatal() {
        let err = KnowledgeBase::from_rows([("laos", "country"), ("laos", "river")], [], []).unwrap_err();
        assert!(err.to_string().contains("laos"));
        // same class, different case, is not a conflict
        let kb = KnowledgeBase::from_rows([("laos", "Country"), ("laos", "country")], [], []).unwrap();
        assert_eq!(kb.lookup_class("laos"), Some("Country"));
    }

    #[test]
    fn files_round_trip() {
        let kb = yale_kb();
        let dir = tempfile::tempdir().unwrap();
        let (e, r, d) = (dir.path().join("e.tsv"), dir.path().join("r.tsv"), dir.path().join("d.txt"));
        kb.write_entities(File::create(&e).unwrap()).unwrap();
        kb.write_redirects(File::create(&r).unwrap()).unwrap();
        kb.write_disambiguation(File::create(&d).unwrap()).unwrap();
        let back = load_kb(&e, &r, &d).unwrap();
        assert_eq!(back.entities(), kb.entities());
        assert_eq!(back.redirects(), kb.redirects());
        assert_eq!(back.ambiguous_terms(), kb.ambiguous_terms());
    }

    #[test]
    fn malformed_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.tsv");
        std::fs::write(&e, "# header\nlaos\tcountry\nbroken\n").unwrap();
        let d = dir.path().join("d.txt");
        std::fs::write(&d, "").unwrap();
        let err = load_kb(&e, &d, &d).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
    }
}
