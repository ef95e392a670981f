//! Local stand-in for a web search engine plus the document and aspect
//! similarities built on top of its results.
//!
//! Documents are represented by TF-IDF vectors over their head and snippet
//! (raw term counts, `idf = ln(N / df)`). Retrieval ranks by cosine between
//! the query vector and document vectors.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logmodel::normalize_query;

/// Documents fetched per aspect.
pub const DEFAULT_M: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub head: String,
    pub snippet: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, head: impl Into<String>, snippet: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            head: head.into(),
            snippet: snippet.into(),
            body: None,
            url: None,
        }
    }

    /// Tokens used for similarity: head followed by snippet.
    pub fn similarity_tokens(&self) -> Vec<String> {
        let text = format!("{} {}", self.head, self.snippet);
        normalize_query(&text)
            .split_whitespace()
            .map(str::to_string)
            .collect()
    }
}

/// Sparse vector sorted by term id.
pub type SparseVec = Vec<(u32, f64)>;

fn dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

fn norm(v: &SparseVec) -> f64 {
    v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
}

fn cosine(a: &SparseVec, na: f64, b: &SparseVec, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(0.0, 1.0)
}

/// Indexed, frozen document collection.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
    vocab: HashMap<String, u32>,
    terms: Vec<String>,
    df: Vec<u32>,
    counts: Vec<Vec<(u32, u32)>>,
    vectors: Vec<SparseVec>,
    norms: Vec<f64>,
    postings: Vec<Vec<u32>>,
}

/// Index documents. Duplicate ids are rejected.
pub fn index(documents: Vec<Document>) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (i, doc) in documents.iter().enumerate() {
        if corpus.by_id.insert(doc.doc_id.clone(), i).is_some() {
            return Err(Error::DuplicateDocument(doc.doc_id.clone()));
        }
    }
    for doc in &documents {
        let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
        for tok in doc.similarity_tokens() {
            let next = corpus.terms.len() as u32;
            let id = *corpus.vocab.entry(tok.clone()).or_insert_with(|| {
                corpus.terms.push(tok);
                next
            });
            *tf.entry(id).or_default() += 1;
        }
        corpus.counts.push(tf.into_iter().collect());
    }
    corpus.df = vec![0; corpus.terms.len()];
    corpus.postings = vec![Vec::new(); corpus.terms.len()];
    for (d, counts) in corpus.counts.iter().enumerate() {
        for &(t, _) in counts {
            corpus.df[t as usize] += 1;
            corpus.postings[t as usize].push(d as u32);
        }
    }
    corpus.documents = documents;
    corpus.vectors = corpus
        .counts
        .iter()
        .map(|c| corpus.weigh(c.iter().copied()))
        .collect();
    corpus.norms = corpus.vectors.iter().map(norm).collect();
    Ok(corpus)
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, idx: usize) -> &Document {
        &self.documents[idx]
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).copied()
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.vocab.get(term).copied()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn df(&self, term: &str) -> u32 {
        self.term_id(term).map(|t| self.df[t as usize]).unwrap_or(0)
    }

    pub fn idf(&self, term_id: u32) -> f64 {
        let df = self.df[term_id as usize];
        if df == 0 {
            0.0
        } else {
            (self.len() as f64 / df as f64).ln()
        }
    }

    /// Raw term counts of an indexed document.
    pub fn term_counts(&self, idx: usize) -> &[(u32, u32)] {
        &self.counts[idx]
    }

    pub fn vector(&self, idx: usize) -> &SparseVec {
        &self.vectors[idx]
    }

    fn weigh(&self, counts: impl Iterator<Item = (u32, u32)>) -> SparseVec {
        counts
            .map(|(t, c)| (t, c as f64 * self.idf(t)))
            .filter(|(_, w)| *w != 0.0)
            .collect()
    }

    /// TF-IDF vector of arbitrary text against this corpus; unknown terms
    /// are dropped.
    pub fn vectorize(&self, tokens: &[String]) -> SparseVec {
        let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
        for t in tokens {
            if let Some(id) = self.term_id(t) {
                *tf.entry(id).or_default() += 1;
            }
        }
        self.weigh(tf.into_iter())
    }

    /// Cosine between two indexed documents.
    pub fn dsim_indexed(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return if self.norms[a] > 0.0 { 1.0 } else { 0.0 };
        }
        cosine(&self.vectors[a], self.norms[a], &self.vectors[b], self.norms[b])
    }

    /// Rank documents by cosine with `query`; zero scores are excluded and
    /// ties break on ascending doc id.
    pub fn search(&self, query: &str, m: usize) -> RetrievalResult {
        assert!(m >= 1, "m must be positive");
        let tokens: Vec<String> = normalize_query(query)
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let qv = self.vectorize(&tokens);
        let qn = norm(&qv);
        let mut candidates: Vec<u32> = qv
            .iter()
            .flat_map(|(t, _)| self.postings[*t as usize].iter().copied())
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        let mut scored: Vec<ScoredDoc> = candidates
            .into_iter()
            .map(|d| d as usize)
            .map(|d| (d, cosine(&qv, qn, &self.vectors[d], self.norms[d])))
            .filter(|(_, s)| *s > 0.0)
            .map(|(d, score)| ScoredDoc {
                doc: d,
                doc_id: self.documents[d].doc_id.clone(),
                score,
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
        scored.truncate(m);
        RetrievalResult {
            query: query.to_string(),
            docs: scored,
        }
    }
}

/// Cosine of the TF-IDF vectors of two documents under `corpus` statistics.
pub fn dsim(a: &Document, b: &Document, corpus: &Corpus) -> f64 {
    if let (Some(i), Some(j)) = (corpus.position(&a.doc_id), corpus.position(&b.doc_id)) {
        if corpus.document(i) == a && corpus.document(j) == b {
            return corpus.dsim_indexed(i, j);
        }
    }
    let va = corpus.vectorize(&a.similarity_tokens());
    let vb = corpus.vectorize(&b.similarity_tokens());
    cosine(&va, norm(&va), &vb, norm(&vb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    /// index into the corpus
    #[serde(skip)]
    pub doc: usize,
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub docs: Vec<ScoredDoc>,
}

impl RetrievalResult {
    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_indices(&self) -> Vec<usize> {
        self.docs.iter().map(|d| d.doc).collect()
    }
}

/// How two retrieved sets are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SetSimilarity {
    /// Average of each document's best match in the other set, both ways.
    #[default]
    MaxMatch,
    /// Cosine of the two sets each merged into a single document.
    Concatenated,
}

/// Best-match similarity between two retrieved sets:
/// `Σ_i max_j dsim / 2|D_i| + Σ_j max_i dsim / 2|D_j|`, zero if either is empty.
pub fn set_similarity(corpus: &Corpus, di: &[usize], dj: &[usize]) -> f64 {
    if di.is_empty() || dj.is_empty() {
        return 0.0;
    }
    let best = |from: &[usize], to: &[usize]| -> f64 {
        from.iter()
            .map(|&a| to.iter().map(|&b| corpus.dsim_indexed(a, b)).fold(0.0, f64::max))
            .sum::<f64>()
    };
    let forward = best(di, dj) / (2.0 * di.len() as f64);
    let backward = best(dj, di) / (2.0 * dj.len() as f64);
    (forward + backward).clamp(0.0, 1.0)
}

fn concatenated_similarity(corpus: &Corpus, di: &[usize], dj: &[usize]) -> f64 {
    if di.is_empty() || dj.is_empty() {
        return 0.0;
    }
    let merge = |set: &[usize]| {
        let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
        for &d in set {
            for &(t, c) in corpus.term_counts(d) {
                *tf.entry(t).or_default() += c;
            }
        }
        corpus.weigh(tf.into_iter())
    };
    let (a, b) = (merge(di), merge(dj));
    cosine(&a, norm(&a), &b, norm(&b))
}

/// Pinned search results, `{"query": ..., "doc_ids": [...]}` per line.
#[derive(Debug, Clone, Default)]
pub struct RetrievalCache {
    entries: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    query: String,
    doc_ids: Vec<String>,
}

impl RetrievalCache {
    pub fn insert(&mut self, query: &str, doc_ids: Vec<String>) {
        self.entries.insert(normalize_query(query), doc_ids);
    }

    pub fn get(&self, query: &str) -> Option<&[String]> {
        self.entries.get(&normalize_query(query)).map(Vec::as_slice)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut cache = RetrievalCache::default();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: CacheLine =
                serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
            cache.insert(&row.query, row.doc_ids);
        }
        Ok(cache)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for (query, doc_ids) in &self.entries {
            let line = CacheLine {
                query: query.clone(),
                doc_ids: doc_ids.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io("<retrieval cache>", e))?;
        }
        Ok(())
    }
}

/// Search front end with a fixed result depth and optional pinned results.
#[derive(Debug, Clone, Copy)]
pub struct Retriever<'a> {
    pub corpus: &'a Corpus,
    pub m: usize,
    pub pinned: Option<&'a RetrievalCache>,
    pub mode: SetSimilarity,
}

impl<'a> Retriever<'a> {
    pub fn new(corpus: &'a Corpus, m: usize) -> Self {
        Retriever {
            corpus,
            m,
            pinned: None,
            mode: SetSimilarity::MaxMatch,
        }
    }

    pub fn with_pinned(mut self, cache: &'a RetrievalCache) -> Self {
        self.pinned = Some(cache);
        self
    }

    pub fn with_mode(mut self, mode: SetSimilarity) -> Self {
        self.mode = mode;
        self
    }

    /// Top documents for `query`, from the pinned cache when it has an
    /// entry, otherwise from the corpus. Unknown pinned ids are skipped.
    pub fn retrieve(&self, query: &str) -> RetrievalResult {
        self.retrieve_top(query, self.m)
    }

    pub fn retrieve_top(&self, query: &str, m: usize) -> RetrievalResult {
        if let Some(ids) = self.pinned.and_then(|c| c.get(query)) {
            let docs = ids
                .iter()
                .filter_map(|id| self.corpus.position(id).map(|d| (d, id)))
                .take(m)
                .map(|(d, id)| ScoredDoc {
                    doc: d,
                    doc_id: id.clone(),
                    score: 0.0,
                })
                .collect();
            return RetrievalResult {
                query: query.to_string(),
                docs,
            };
        }
        self.corpus.search(query, m)
    }

    pub fn set_similarity(&self, di: &[usize], dj: &[usize]) -> f64 {
        match self.mode {
            SetSimilarity::MaxMatch => set_similarity(self.corpus, di, dj),
            SetSimilarity::Concatenated => concatenated_similarity(self.corpus, di, dj),
        }
    }

    /// Similarity of two aspects through their retrieved documents.
    pub fn aspect_sim(&self, a: &str, b: &str) -> f64 {
        let da = self.retrieve(a).doc_indices();
        let db = self.retrieve(b).doc_indices();
        self.set_similarity(&da, &db)
    }
}

/// Convenience wrapper over [`Retriever::aspect_sim`].
pub fn aspect_sim(a: &str, b: &str, corpus: &Corpus, m: usize) -> f64 {
    Retriever::new(corpus, m).aspect_sim(a, b)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    index(read_corpus(path)?)
}

pub fn write_corpus<W: Write>(mut out: W, docs: &[Document]) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n").map_err(|e| Error::io("<corpus>", e))?;
    }
    Ok(())
}
