//! End-to-end runs: candidates, propagation, dedup, grouping and selection
//! for one query, and suites of queries with aggregated metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{instance_aspects, instantiate, pattern_distribution, refinements, CandidateAspect, Origin, SegmentedQuery};
use crate::config::Config;
use crate::dedup::{cluster, similarity_matrix, AspectCluster};
use crate::error::{Error, Result};
use crate::eval::{build_topic_model, coverage_overlap, nsim, Coverage, Nsim, TopicModel};
use crate::grouping::{group_by_class, ungrouped, AspectGroup};
use crate::kb::{load_kb, KnowledgeBase};
use crate::logmodel::{load_stats, LogStats};
use crate::propagation::{build_graph, propagate_passes, PatternDist};
use crate::retrieval::{load_corpus, Corpus, RetrievalCache, Retriever};
use crate::selection::{select, SelectionInput};

/// Locations of the shared inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputPaths {
    pub log: PathBuf,
    pub entities: PathBuf,
    pub redirects: PathBuf,
    pub disambiguation: PathBuf,
    pub corpus: PathBuf,
    pub pinned: Option<PathBuf>,
}

impl InputPaths {
    /// The file names a generated world uses.
    pub fn in_dir(dir: &Path) -> Self {
        InputPaths {
            log: dir.join("log.tsv"),
            entities: dir.join("entities.tsv"),
            redirects: dir.join("redirects.tsv"),
            disambiguation: dir.join("disambiguation.txt"),
            corpus: dir.join("corpus.jsonl"),
            pinned: None,
        }
    }
}

/// Immutable inputs shared by every query of a run.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub stats: LogStats,
    pub kb: KnowledgeBase,
    pub corpus: Corpus,
    pub pinned: Option<RetrievalCache>,
}

impl Inputs {
    pub fn load(paths: &InputPaths, config: &Config) -> Result<Self> {
        let stats = load_stats(&paths.log, config.session_gap_seconds)?;
        let kb = load_kb(&paths.entities, &paths.redirects, &paths.disambiguation)?;
        let corpus = load_corpus(&paths.corpus)?;
        let pinned = paths.pinned.as_deref().map(RetrievalCache::load).transpose()?;
        Ok(Inputs {
            stats,
            kb,
            corpus,
            pinned,
        })
    }

    pub fn retriever(&self, config: &Config) -> Retriever<'_> {
        let r = Retriever::new(&self.corpus, config.m);
        match &self.pinned {
            Some(cache) => r.with_pinned(cache),
            None => r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    /// No candidates from the log and none from a class.
    Empty,
}

/// Score breakdown of one candidate aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub surface: String,
    pub pattern: String,
    pub p_r: f64,
    pub p_ss: f64,
    pub p_inst: f64,
    pub p_class: f64,
    pub p: f64,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Class node the query joined, e.g. "Country travel".
    pub class: Option<String>,
    pub class_members: usize,
    /// Graph queries left out for lack of an unambiguous class.
    pub excluded_entities: Vec<String>,
    /// Aspects whose retrieval returned nothing.
    pub empty_retrievals: Vec<String>,
    pub instance_candidates: usize,
    pub candidates: usize,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedGroup {
    pub rank: usize,
    #[serde(flatten)]
    pub group: AspectGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectReport {
    pub query: SegmentedQuery,
    pub status: Status,
    pub selected: Vec<RankedGroup>,
    pub clusters: Vec<AspectCluster>,
    pub provenance: Vec<Provenance>,
    pub diagnostics: Diagnostics,
}

impl AspectReport {
    /// Retrievable labels of the selected groups, in rank order.
    pub fn selected_labels(&self) -> Vec<String> {
        self.selected.iter().map(|g| g.group.representative().to_string()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Human-readable rendering with scores at four decimals.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "query: {}", self.query.full);
        let _ = match &self.query.property {
            Some(p) => writeln!(s, "entity: {}  property: {p}", self.query.entity),
            None => writeln!(s, "entity: {}", self.query.entity),
        };
        if let Some(class) = &self.diagnostics.class {
            let _ = writeln!(s, "class: {class} ({} members)", self.diagnostics.class_members);
        }
        if self.status == Status::Empty {
            let _ = writeln!(s, "no aspects found");
        }
        for g in &self.selected {
            let members: Vec<&str> = g.group.surfaces().collect();
            let tag = if g.group.is_vertical { " [group]" } else { "" };
            let _ = writeln!(
                s,
                "{:>2}. {}{tag}  {:.4}  ({})",
                g.rank,
                g.group.display_label,
                g.group.group_score,
                members.join("; ")
            );
        }
        for m in &self.diagnostics.messages {
            let _ = writeln!(s, "note: {m}");
        }
        s
    }
}

/// Instantiated candidate list with full provenance, sorted by `p`
/// descending then surface, capped at `config.candidate_cap`.
fn scored_candidates(q: &SegmentedQuery, inputs: &Inputs, config: &Config, diag: &mut Diagnostics) -> Vec<Provenance> {
    let own: Vec<CandidateAspect> = instance_aspects(&inputs.stats, q, config.candidate_cap);
    diag.instance_candidates = own.len();
    let own_dist = pattern_distribution(&own);

    let mut class_weights = PatternDist::new();
    let mut smoothed = own_dist.clone();
    if let Some(class) = inputs.kb.lookup_class(&q.entity) {
        let mut queries: Vec<SegmentedQuery> = inputs
            .kb
            .class_members(class)
            .into_iter()
            .map(|e| q.with_entity(e))
            .collect();
        queries.push(q.clone());
        let dists: BTreeMap<SegmentedQuery, PatternDist> = queries
            .iter()
            .map(|m| {
                let d = if m == q {
                    own_dist.clone()
                } else {
                    pattern_distribution(&instance_aspects(&inputs.stats, m, config.candidate_cap))
                };
                (m.clone(), d)
            })
            .collect();
        let graph = build_graph(&inputs.kb, &queries, config.k);
        diag.excluded_entities = graph.excluded.iter().map(|e| e.entity.clone()).collect();
        if let Some(ci) = graph.class_of(q) {
            let state = propagate_passes(&graph, &dists, config.variant, 2);
            let node = &state.classes[ci];
            diag.class = Some(node.class_node.to_string());
            diag.class_members = node.members;
            class_weights = node.mixing_weights();
            smoothed = state.instances[q].clone();
        }
    } else {
        diag.messages.push(format!("entity {:?} has no class; propagation skipped", q.entity));
    }

    let mut by_surface: BTreeMap<String, Provenance> = BTreeMap::new();
    for (pattern, &p) in &smoothed {
        if !(p > 0.0) {
            continue;
        }
        let surface = instantiate(pattern, &q.entity);
        if surface == q.full {
            continue;
        }
        let own_hit = own.iter().find(|c| c.surface == surface);
        let entry = by_surface.entry(surface.clone()).or_insert_with(|| Provenance {
            surface,
            pattern: pattern.clone(),
            p_r: own_hit.map_or(0.0, |c| c.p_r),
            p_ss: own_hit.map_or(0.0, |c| c.p_ss),
            p_inst: 0.0,
            p_class: 0.0,
            p: 0.0,
            origin: own_hit.map_or(Origin::Propagated, |c| c.origin),
        });
        // distinct patterns can instantiate to the same surface
        entry.p_inst += own_dist.get(pattern).copied().unwrap_or(0.0);
        entry.p_class += class_weights.get(pattern).copied().unwrap_or(0.0);
        entry.p += p;
    }
    let mut out: Vec<Provenance> = by_surface.into_values().collect();
    out.sort_by(|a, b| b.p.total_cmp(&a.p).then_with(|| a.surface.cmp(&b.surface)));
    out.truncate(config.candidate_cap);
    out
}

/// Run every stage for one query.
pub fn run_query(q: &SegmentedQuery, inputs: &Inputs, config: &Config) -> Result<AspectReport> {
    config.validate()?;
    let started = Instant::now();
    let mut diag = Diagnostics::default();
    let provenance = scored_candidates(q, inputs, config, &mut diag);
    diag.candidates = provenance.len();
    if provenance.is_empty() {
        diag.messages.push("no candidate aspects".into());
        return Ok(AspectReport {
            query: q.clone(),
            status: Status::Empty,
            selected: Vec::new(),
            clusters: Vec::new(),
            provenance,
            diagnostics: diag,
        });
    }

    let retriever = inputs.retriever(config);
    let surfaces: Vec<String> = provenance.iter().map(|p| p.surface.clone()).collect();
    diag.empty_retrievals = surfaces
        .iter()
        .filter(|s| retriever.retrieve(s).is_empty())
        .cloned()
        .collect();
    let matrix = similarity_matrix(&surfaces, &retriever);
    let scores: BTreeMap<String, f64> = provenance.iter().map(|p| (p.surface.clone(), p.p)).collect();
    let clusters = cluster(&matrix, &scores, config.sigma);
    let groups = if config.grouping {
        group_by_class(&clusters, &inputs.kb, &q.entity)
    } else {
        ungrouped(&clusters)
    };
    let selected = select(&SelectionInput {
        groups,
        sim: matrix,
        n: config.n,
    });
    log::debug!(
        "{}: {} candidates, {} clusters, {:.1} ms",
        q.full,
        provenance.len(),
        clusters.len(),
        started.elapsed().as_secs_f64() * 1e3
    );
    Ok(AspectReport {
        query: q.clone(),
        status: Status::Ok,
        selected: selected
            .into_iter()
            .enumerate()
            .map(|(i, group)| RankedGroup { rank: i + 1, group })
            .collect(),
        clusters,
        provenance,
        diagnostics: diag,
    })
}

/// Read a `full<TAB>entity[<TAB>property]` query file.
pub fn read_queries(path: &Path) -> Result<Vec<SegmentedQuery>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let q = SegmentedQuery::parse_row(&line)
            .ok_or_else(|| Error::parse(path, idx + 1, "expected full query, entity and optional property, tab separated"))?;
        out.push(q);
    }
    Ok(out)
}

/// The `n` most frequent refinements of the query, ignoring dedup and
/// propagation. Used as the orthogonality baseline.
pub fn raw_refinements(stats: &LogStats, query: &str, n: usize) -> Vec<String> {
    let mut refs: Vec<(String, f64)> = refinements(stats, query).into_iter().collect();
    refs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    refs.into_iter().take(n).map(|(q, _)| q).collect()
}

/// Metrics and report of one suite query.
#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub query: SegmentedQuery,
    pub outcome: std::result::Result<AspectReport, String>,
    pub selected_nsim: Option<Nsim>,
    pub baseline_nsim: Option<Nsim>,
    pub coverage: Option<Coverage>,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteSummary {
    pub rows: Vec<SuiteRow>,
}

impl SuiteSummary {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }
}

fn evaluate(q: &SegmentedQuery, inputs: &Inputs, config: &Config, model: &TopicModel) -> SuiteRow {
    let retriever = inputs.retriever(config);
    let outcome = run_query(q, inputs, config).map_err(|e| e.to_string());
    let (selected_nsim, coverage) = match &outcome {
        Ok(report) if report.status == Status::Ok => {
            let labels = report.selected_labels();
            (
                nsim(&labels, &retriever, model).ok(),
                Some(coverage_overlap(&q.full, &labels, &retriever, config.coverage_k, config.coverage_n)),
            )
        }
        _ => (None, None),
    };
    let baseline = raw_refinements(&inputs.stats, &q.full, config.n);
    SuiteRow {
        query: q.clone(),
        selected_nsim,
        baseline_nsim: nsim(&baseline, &retriever, model).ok(),
        coverage,
        outcome,
    }
}

/// Run every query and collect metrics. `threads` caps parallelism; the
/// result does not depend on it.
pub fn run_suite_rows(queries: &[SegmentedQuery], inputs: &Inputs, config: &Config, threads: usize) -> Result<SuiteSummary> {
    config.validate()?;
    if queries.is_empty() {
        return Ok(SuiteSummary::default());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let model = build_topic_model(&inputs.corpus, config.topic_t)?;
        let rows = queries
            .par_iter()
            .map(|q| evaluate(q, inputs, config, &model))
            .collect();
        Ok(SuiteSummary { rows })
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Write reports and metric CSVs for a finished suite into `out`:
/// `reports/NNNN.json`, `reports/NNNN.txt`, `nsim.csv`, `coverage.csv`
/// and `failures.tsv` when any query failed.
pub fn write_suite(summary: &SuiteSummary, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if summary.rows.is_empty() {
        return Ok(());
    }
    let reports = out.join("reports");
    fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;
    let write_file = |path: PathBuf, body: &str| fs::write(&path, body).map_err(|e| Error::io(path, e));

    let mut nsim_csv = String::from("index,query,status,selected_nsim,baseline_nsim,selected_asim,baseline_asim\n");
    let mut cov_csv = String::from("index,query,overlap,vacuous,aspect_docs,new_docs\n");
    let mut failures = String::new();
    for (i, row) in summary.rows.iter().enumerate() {
        let status = match &row.outcome {
            Ok(report) => {
                write_file(reports.join(format!("{i:04}.json")), &(report.to_json()? + "\n"))?;
                write_file(reports.join(format!("{i:04}.txt")), &report.render_text())?;
                match report.status {
                    Status::Ok => "ok",
                    Status::Empty => "empty",
                }
            }
            Err(message) => {
                let _ = writeln!(failures, "{i}\t{}\t{message}", row.query.full);
                "failed"
            }
        };
        let _ = writeln!(
            nsim_csv,
            "{i},{},{status},{},{},{},{}",
            csv_field(&row.query.full),
            fmt_opt(row.selected_nsim.map(|n| n.nsim)),
            fmt_opt(row.baseline_nsim.map(|n| n.nsim)),
            fmt_opt(row.selected_nsim.map(|n| n.asim)),
            fmt_opt(row.baseline_nsim.map(|n| n.asim)),
        );
        if let Some(c) = &row.coverage {
            let _ = writeln!(
                cov_csv,
                "{i},{},{:.6},{},{},{}",
                csv_field(&row.query.full),
                c.overlap,
                c.vacuous,
                c.aspect_docs.len(),
                c.new_docs.len()
            );
        }
    }
    write_file(out.join("nsim.csv"), &nsim_csv)?;
    write_file(out.join("coverage.csv"), &cov_csv)?;
    if !failures.is_empty() {
        write_file(out.join("failures.tsv"), &failures)?;
    }
    Ok(())
}

/// Run a suite and write its artifacts.
pub fn run_suite(queries: &[SegmentedQuery], inputs: &Inputs, config: &Config, threads: usize, out: &Path) -> Result<SuiteSummary> {
    let summary = run_suite_rows(queries, inputs, config, threads)?;
    write_suite(&summary, out)?;
    Ok(summary)
}

/// Write a JSON value followed by a newline.
pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(|e| Error::io("<output>", e))
}

/// Buffered file creation with the path in the error.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}
