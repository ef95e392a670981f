//! Offline metrics: topic-based inter-aspect similarity, coverage overlap
//! and pair-decision clustering F-measure.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dedup::{cluster, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::retrieval::{Corpus, Retriever, SparseVec};

pub const DEFAULT_TOPICS: usize = 32;

const OVERSAMPLE: usize = 8;
const MAX_ITERATIONS: usize = 400;
const RITZ_TOLERANCE: f64 = 1e-13;

/// Rank-T latent-semantic projection of the corpus TF-IDF matrix.
///
/// Term vectors are the leading left singular vectors of the term-document
/// matrix; a document's topic vector is the projection of its TF-IDF vector
/// onto them. Each singular vector's largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct TopicModel {
    dims: usize,
    /// term id -> topic coordinates
    term_vectors: Vec<Vec<f64>>,
    singular_values: Vec<f64>,
    doc_topics: Vec<Vec<f64>>,
}

impl TopicModel {
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn term_vector(&self, term_id: u32) -> &[f64] {
        &self.term_vectors[term_id as usize]
    }

    /// Project a TF-IDF vector; the empty vector maps to zero.
    pub fn project(&self, v: &SparseVec) -> Vec<f64> {
        let mut out = vec![0.0; self.dims];
        for &(t, w) in v {
            for (o, x) in out.iter_mut().zip(&self.term_vectors[t as usize]) {
                *o += w * x;
            }
        }
        out
    }

    pub fn doc_topics(&self, doc: usize) -> &[f64] {
        &self.doc_topics[doc]
    }
}

/// `X Xᵀ Q` for the sparse term-document matrix `X`.
fn gram_times(corpus: &Corpus, q: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = q.ncols();
    let mut xt_q = DMatrix::<f64>::zeros(corpus.len(), b);
    for d in 0..corpus.len() {
        for &(t, w) in corpus.vector(d) {
            for j in 0..b {
                xt_q[(d, j)] += w * q[(t as usize, j)];
            }
        }
    }
    let mut z = DMatrix::<f64>::zeros(q.nrows(), b);
    for d in 0..corpus.len() {
        for &(t, w) in corpus.vector(d) {
            for j in 0..b {
                z[(t as usize, j)] += w * xt_q[(d, j)];
            }
        }
    }
    (z, xt_q)
}

/// Truncated SVD by subspace iteration on `X Xᵀ` followed by a
/// Rayleigh-Ritz step. Deterministic: fixed starting block, fixed order.
pub fn build_topic_model(corpus: &Corpus, topics: usize) -> Result<TopicModel> {
    if topics == 0 {
        return Err(Error::Config("topic dimensionality must be positive".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Config("topic model needs a nonempty corpus".into()));
    }
    let vocab = corpus.terms().len();
    let block = (topics + OVERSAMPLE).min(vocab).min(corpus.len()).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start = DMatrix::<f64>::from_fn(vocab, block, |_, _| rng.random::<f64>() - 0.5);
    let mut q = start.qr().q();
    let mut ritz_prev: Vec<f64> = Vec::new();
    let mut ritz: (Vec<f64>, DMatrix<f64>) = (Vec::new(), DMatrix::zeros(0, 0));
    for _ in 0..MAX_ITERATIONS {
        let (z, xt_q) = gram_times(corpus, &q);
        // Rayleigh quotient of the current basis
        let small = xt_q.transpose() * &xt_q;
        let eig = SymmetricEigen::new(small);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let vectors = DMatrix::from_fn(block, block, |r, c| eig.eigenvectors[(r, order[c])]);
        ritz = (values.clone(), &q * vectors);

        let scale = values.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        let converged = ritz_prev.len() == values.len()
            && values
                .iter()
                .zip(&ritz_prev)
                .take(topics)
                .all(|(a, b)| (a - b).abs() <= RITZ_TOLERANCE * scale);
        if converged {
            break;
        }
        ritz_prev = values;
        q = z.qr().q();
    }

    let (values, basis) = ritz;
    let top = values.first().copied().unwrap_or(0.0);
    let rank = values
        .iter()
        .take_while(|&&v| top > 0.0 && v > top * 1e-12)
        .count();
    let dims = topics.min(rank).max(1);

    let mut columns: Vec<Vec<f64>> = (0..dims)
        .map(|c| (0..vocab).map(|r| basis[(r, c)]).collect())
        .collect();
    for col in &mut columns {
        let mut best = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let term_vectors: Vec<Vec<f64>> = (0..vocab)
        .map(|t| columns.iter().map(|c| c[t]).collect())
        .collect();
    let mut model = TopicModel {
        dims,
        term_vectors,
        singular_values: values.iter().take(dims).map(|v| v.sqrt()).collect(),
        doc_topics: Vec::new(),
    };
    model.doc_topics = (0..corpus.len()).map(|d| model.project(corpus.vector(d))).collect();
    Ok(model)
}

fn cosine_dense(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Topic similarity of two indexed documents.
pub fn tsim(d1: usize, d2: usize, model: &TopicModel) -> f64 {
    cosine_dense(model.doc_topics(d1), model.doc_topics(d2))
}

/// Mean topic similarity over all pairs of two document sets; zero when
/// either is empty.
pub fn set_topic_sim(d1: &[usize], d2: &[usize], model: &TopicModel) -> f64 {
    if d1.is_empty() || d2.is_empty() {
        return 0.0;
    }
    let total: f64 = d1
        .iter()
        .flat_map(|&a| d2.iter().map(move |&b| (a, b)))
        .map(|(a, b)| tsim(a, b, model))
        .sum();
    total / (d1.len() * d2.len()) as f64
}

/// Average inter-document topic similarity of two aspects' retrievals.
pub fn aspect_topic_sim(a1: &str, a2: &str, retriever: &Retriever<'_>, model: &TopicModel) -> f64 {
    set_topic_sim(
        &retriever.retrieve(a1).doc_indices(),
        &retriever.retrieve(a2).doc_indices(),
        model,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nsim {
    pub asim: f64,
    pub isim: f64,
    pub nsim: f64,
}

/// Normalized inter-aspect similarity: mean pairwise similarity over mean
/// self-similarity.
pub fn nsim(aspects: &[String], retriever: &Retriever<'_>, model: &TopicModel) -> Result<Nsim> {
    let n = aspects.len();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!("nsim needs at least two aspects, got {n}")));
    }
    let docs: Vec<Vec<usize>> = aspects.iter().map(|a| retriever.retrieve(a).doc_indices()).collect();
    let mut pair_total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            pair_total += set_topic_sim(&docs[i], &docs[j], model);
        }
    }
    let asim = 2.0 * pair_total / (n * (n - 1)) as f64;
    let isim = docs.iter().map(|d| set_topic_sim(d, d, model)).sum::<f64>() / n as f64;
    if isim == 0.0 {
        return Err(Error::UndefinedMetric("intra-aspect similarity is zero".into()));
    }
    Ok(Nsim {
        asim,
        isim,
        nsim: asim / isim,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub overlap: f64,
    /// No aspect retrieved anything; overlap is reported as 1.
    pub vacuous: bool,
    /// Union of the aspects' top-k documents (corpus indices, sorted).
    pub aspect_docs: Vec<usize>,
    /// Aspect documents outside the query's top-N.
    pub new_docs: Vec<usize>,
}

/// Fraction of the aspects' top-k documents already in the query's top-N.
pub fn coverage_overlap(query: &str, aspects: &[String], retriever: &Retriever<'_>, k: usize, n: usize) -> Coverage {
    assert!(k >= 1 && n >= 1, "k and N must be positive");
    let base: BTreeSet<usize> = retriever.retrieve_top(query, n).doc_indices().into_iter().collect();
    let union: BTreeSet<usize> = aspects
        .iter()
        .flat_map(|a| retriever.retrieve_top(a, k).doc_indices())
        .collect();
    if union.is_empty() {
        return Coverage {
            overlap: 1.0,
            vacuous: true,
            aspect_docs: Vec::new(),
            new_docs: Vec::new(),
        };
    }
    let inside = union.intersection(&base).count();
    Coverage {
        overlap: inside as f64 / union.len() as f64,
        vacuous: false,
        new_docs: union.difference(&base).copied().collect(),
        aspect_docs: union.into_iter().collect(),
    }
}

/// Gold-standard clustering of one query's aspects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldClustering {
    pub query: String,
    pub clusters: Vec<Vec<String>>,
}

impl GoldClustering {
    pub fn new(query: impl Into<String>, clusters: Vec<Vec<String>>) -> Result<Self> {
        let gold = GoldClustering {
            query: query.into(),
            clusters,
        };
        let mut seen = BTreeSet::new();
        for a in gold.aspects() {
            if !seen.insert(a.clone()) {
                return Err(Error::UniverseMismatch(format!("{a:?} appears twice in gold for {:?}", gold.query)));
            }
        }
        Ok(gold)
    }

    pub fn aspects(&self) -> Vec<String> {
        self.clusters.iter().flatten().cloned().collect()
    }
}

pub fn read_gold(path: &Path) -> Result<Vec<GoldClustering>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: GoldClustering =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        out.push(GoldClustering::new(raw.query, raw.clusters)?);
    }
    Ok(out)
}

pub fn write_gold<W: Write>(mut out: W, gold: &[GoldClustering]) -> Result<()> {
    for g in gold {
        serde_json::to_writer(&mut out, g)?;
        out.write_all(b"\n").map_err(|e| Error::io("<gold>", e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn same_cluster_pairs(partition: &[Vec<String>]) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for c in partition {
        for (i, a) in c.iter().enumerate() {
            for b in &c[i + 1..] {
                let pair = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
                out.insert(pair);
            }
        }
    }
    out
}

/// Score a predicted partition against gold over all unordered pairs.
pub fn pair_scores(predicted: &[Vec<String>], gold: &GoldClustering) -> Result<PairScores> {
    let universe = |p: &[Vec<String>]| p.iter().flatten().cloned().collect::<BTreeSet<String>>();
    let (pu, gu) = (universe(predicted), universe(&gold.clusters));
    if pu != gu {
        let missing: Vec<&String> = gu.symmetric_difference(&pu).take(3).collect();
        return Err(Error::UniverseMismatch(format!("{:?}: differing aspects {missing:?}", gold.query)));
    }
    let p = same_cluster_pairs(predicted);
    let g = same_cluster_pairs(&gold.clusters);
    if p.is_empty() && g.is_empty() {
        return Ok(PairScores {
            precision: 1.0,
            recall: 1.0,
            f: 1.0,
        });
    }
    let tp = p.intersection(&g).count() as f64;
    let precision = if p.is_empty() { 0.0 } else { tp / p.len() as f64 };
    let recall = if g.is_empty() { 0.0 } else { tp / g.len() as f64 };
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PairScores { precision, recall, f })
}

pub fn pair_f_measure(predicted: &[Vec<String>], gold: &GoldClustering) -> Result<f64> {
    Ok(pair_scores(predicted, gold)?.f)
}

/// One gold case with similarities over exactly its aspects.
#[derive(Debug, Clone)]
pub struct SweepCase {
    pub gold: GoldClustering,
    pub matrix: SimilarityMatrix,
}

impl SweepCase {
    pub fn from_retrieval(gold: GoldClustering, retriever: &Retriever<'_>) -> Self {
        let matrix = crate::dedup::similarity_matrix(&gold.aspects(), retriever);
        SweepCase { gold, matrix }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub mean_f: f64,
}

/// Mean pair F-measure of threshold clustering for each σ.
pub fn sigma_sweep(cases: &[SweepCase], sigmas: &[f64]) -> Result<Vec<SweepRow>> {
    if sigmas.is_empty() {
        return Err(Error::Config("sigma list is empty".into()));
    }
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let mut total = 0.0;
        for case in cases {
            let clusters = cluster(&case.matrix, &BTreeMap::new(), sigma);
            let partition: Vec<Vec<String>> = clusters.into_iter().map(|c| c.members).collect();
            total += pair_f_measure(&partition, &case.gold)?;
        }
        let mean_f = if cases.is_empty() { 0.0 } else { total / cases.len() as f64 };
        rows.push(SweepRow { sigma, mean_f });
    }
    Ok(rows)
}

/// Parse `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_sigmas(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad sigma list {spec:?}"));
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let values: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (start, stop, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        if step <= 0.0 || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        // round away accumulated binary error so printed values stay clean
        (0..=count)
            .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
            .collect()
    } else {
        spec.split(',').map(parse).collect::<Result<_>>()?
    };
    if values.is_empty() || values.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(bad());
    }
    Ok(values)
}

pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "sigma,mean_f")?;
    for r in rows {
        writeln!(out, "{:.6},{:.6}", r.sigma, r.mean_f)?;
    }
    Ok(())
}
