use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aspector::candidates::{instance_aspects, pattern_distribution, SegmentedQuery};
use aspector::config::Config;
use aspector::dedup::{cluster, similarity_matrix};
use aspector::eval::{
    build_topic_model, coverage_overlap, nsim, pair_scores, parse_sigmas, read_gold, sigma_sweep, write_sweep_csv,
    SweepCase,
};
use aspector::kb::{load_kb, KnowledgeBase};
use aspector::logmodel::{load_stats, read_log, sessionize};
use aspector::pipeline::{create_file, read_queries, run_query, run_suite, write_json, InputPaths, Inputs, Status};
use aspector::propagation::{build_graph, class_aspects, write_class_distributions, PatternDist};
use aspector::retrieval::{load_corpus, Corpus, RetrievalCache, Retriever};
use aspector::synthgen::{generate, WorldSpec};
use clap::{Args, Parser, Subcommand};

const CONFIG_ENV: &str = "ASPECTOR_CONFIG";

#[derive(Parser, Debug)]
#[command(name = "aspector", version, about = "Mine orthogonal, high-coverage aspects of entity queries")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` config file. Defaults to $ASPECTOR_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set sigma=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Class-to-instance propagation weight K.
    #[arg(long, global = true)]
    k: Option<f64>,
    /// Dedup similarity threshold.
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Documents retrieved per aspect.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Aspects reported per query.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Result depth of the original query for coverage (N).
    #[arg(long, global = true)]
    coverage_n: Option<usize>,
    /// Documents per aspect for coverage (k).
    #[arg(long, global = true)]
    coverage_k: Option<usize>,
    #[arg(long, global = true)]
    candidate_cap: Option<usize>,
    #[arg(long, global = true)]
    session_gap: Option<i64>,
    /// Propagation variant: average or indicator.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Topic model dimensionality (T).
    #[arg(long, global = true)]
    topics: Option<usize>,
    /// Disable vertical grouping.
    #[arg(long, global = true)]
    no_grouping: bool,
    /// Maximum worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More logging on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(flatten)]
    data: DataArgs,
}

/// Input locations. `--data DIR` supplies defaults for all of them using the
/// file names `synth` writes.
#[derive(Args, Debug, Clone)]
struct DataArgs {
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    log: Option<PathBuf>,
    #[arg(long, global = true)]
    entities: Option<PathBuf>,
    #[arg(long, global = true)]
    redirects: Option<PathBuf>,
    #[arg(long, global = true)]
    disambiguation: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Pinned retrieval results (JSON lines) taking precedence over search.
    #[arg(long, global = true)]
    pinned: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QueryArgs {
    /// Full query, e.g. "laos travel".
    #[arg(long)]
    query: String,
    /// Entity part of the query. Inferred from the knowledge base when
    /// omitted: the longest leading token run with a class.
    #[arg(long)]
    entity: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split a query log into sessions (TSV: session, user, timestamp, query).
    Sessionize {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Instance-level candidate aspects of one query (JSON).
    Candidates {
        #[command(flatten)]
        query: QueryArgs,
    },
    /// Class-level aspect distributions for every class (TSV).
    Propagate {
        /// Property appended to every entity, e.g. "travel".
        #[arg(long)]
        property: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline for one query; AspectReport JSON on stdout.
    Aspects {
        #[command(flatten)]
        query: QueryArgs,
        /// Print the human-readable rendering instead of JSON.
        #[arg(long)]
        text: bool,
    },
    /// Run a query file and write reports plus metric CSVs.
    Suite {
        /// TSV of full query, entity and optional property.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic world.
    Synth {
        /// WorldSpec JSON; a planted world is built when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 6)]
        classes: usize,
        #[arg(long = "entities-per-class", default_value_t = 10)]
        entities_per_class: usize,
        #[arg(long, default_value_t = 8)]
        patterns: usize,
        #[arg(long, default_value_t = 4)]
        duplicated: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalized inter-aspect similarity of a list of aspects (JSON).
    EvalNsim {
        /// One aspect per line.
        #[arg(long)]
        aspects: PathBuf,
    },
    /// Overlap of aspect results with the query's top-N (JSON).
    EvalCoverage {
        #[arg(long)]
        query: String,
        #[arg(long)]
        aspects: PathBuf,
    },
    /// Pair-decision F-measure of dedup clustering against gold (CSV).
    EvalClusterF {
        #[arg(long)]
        gold: PathBuf,
    },
    /// Mean F-measure across a sigma grid (CSV: sigma,mean_f).
    SweepSigma {
        #[arg(long)]
        gold: PathBuf,
        /// `start:stop:step` or a comma-separated list.
        #[arg(long, default_value = "0.05:0.55:0.05")]
        sigmas: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Data(aspector::Error),
}

impl From<aspector::Error> for CliError {
    fn from(e: aspector::Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(code) => code,
        // Output closed early, e.g. piped into `head`.
        Err(CliError::Data(e)) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn broken_pipe(e: &aspector::Error) -> bool {
    match e {
        aspector::Error::Io { source, .. } => source.kind() == io::ErrorKind::BrokenPipe,
        aspector::Error::Json(j) => j.io_error_kind() == Some(io::ErrorKind::BrokenPipe),
        _ => false,
    }
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
fn build_config(c: &Common) -> CliResult<Config> {
    let mut config = Config::default();
    let file = c
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
    if let Some(path) = file {
        config.apply_file(&path)?;
    }
    for pair in &c.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        config.set(key.trim(), value).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(v) = c.k {
        config.k = v;
    }
    if let Some(v) = c.sigma {
        config.sigma = v;
    }
    if let Some(v) = c.m {
        config.m = v;
    }
    if let Some(v) = c.n {
        config.n = v;
    }
    if let Some(v) = c.coverage_n {
        config.coverage_n = v;
    }
    if let Some(v) = c.coverage_k {
        config.coverage_k = v;
    }
    if let Some(v) = c.candidate_cap {
        config.candidate_cap = v;
    }
    if let Some(v) = c.session_gap {
        config.session_gap_seconds = v;
    }
    if let Some(v) = &c.variant {
        config.variant = v.parse().map_err(|e: aspector::Error| usage(e.to_string()))?;
    }
    if let Some(v) = c.topics {
        config.topic_t = v;
    }
    if c.no_grouping {
        config.grouping = false;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

impl DataArgs {
    fn path(&self, explicit: &Option<PathBuf>, file: &str, flag: &str) -> CliResult<PathBuf> {
        explicit
            .clone()
            .or_else(|| self.data.as_ref().map(|d| d.join(file)))
            .ok_or_else(|| usage(format!("missing --{flag} (or --data DIR)")))
    }

    fn paths(&self) -> CliResult<InputPaths> {
        Ok(InputPaths {
            log: self.path(&self.log, "log.tsv", "log")?,
            entities: self.path(&self.entities, "entities.tsv", "entities")?,
            redirects: self.path(&self.redirects, "redirects.tsv", "redirects")?,
            disambiguation: self.path(&self.disambiguation, "disambiguation.txt", "disambiguation")?,
            corpus: self.path(&self.corpus, "corpus.jsonl", "corpus")?,
            pinned: self.pinned.clone(),
        })
    }

    fn kb(&self) -> CliResult<KnowledgeBase> {
        Ok(load_kb(
            &self.path(&self.entities, "entities.tsv", "entities")?,
            &self.path(&self.redirects, "redirects.tsv", "redirects")?,
            &self.path(&self.disambiguation, "disambiguation.txt", "disambiguation")?,
        )?)
    }

    fn corpus(&self) -> CliResult<Corpus> {
        Ok(load_corpus(&self.path(&self.corpus, "corpus.jsonl", "corpus")?)?)
    }

    fn pinned(&self) -> CliResult<Option<RetrievalCache>> {
        Ok(self.pinned.as_deref().map(RetrievalCache::load).transpose()?)
    }
}

fn retriever<'a>(corpus: &'a Corpus, pinned: &'a Option<RetrievalCache>, config: &Config) -> Retriever<'a> {
    let r = Retriever::new(corpus, config.m);
    match pinned {
        Some(cache) => r.with_pinned(cache),
        None => r,
    }
}

/// Segment a query: an explicit entity must be a leading token run of the
/// query; otherwise take the longest leading run the KB knows.
fn segment(args: &QueryArgs, kb: &KnowledgeBase) -> CliResult<SegmentedQuery> {
    let full = aspector::logmodel::normalize_query(&args.query);
    let tokens: Vec<&str> = full.split(' ').filter(|t| !t.is_empty()).collect();
    if tokens.is_empty() {
        return Err(usage("--query is empty"));
    }
    let split = match &args.entity {
        Some(e) => {
            let entity = aspector::logmodel::normalize_query(e);
            let n = entity.split(' ').count();
            if n > tokens.len() || tokens[..n].join(" ") != entity {
                return Err(usage(format!("entity {entity:?} is not a prefix of query {full:?}")));
            }
            n
        }
        None => (1..=tokens.len())
            .rev()
            .find(|&n| kb.lookup_class(&tokens[..n].join(" ")).is_some())
            .unwrap_or(tokens.len()),
    };
    let property = tokens[split..].join(" ");
    Ok(SegmentedQuery::new(
        &tokens[..split].join(" "),
        (!property.is_empty()).then_some(property.as_str()),
    ))
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| aspector::Error::io(path, e))?;
    Ok(text
        .lines()
        .map(aspector::logmodel::normalize_query)
        .filter(|l| !l.is_empty())
        .collect())
}

/// Standard output or a file.
fn output(out: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(create_file(path)?),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn io_err(what: &str) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Data(aspector::Error::io(what, e))
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    let common = &cli.common;
    let config = build_config(common)?;
    let threads = match common.threads {
        Some(0) => return Err(usage("--threads must be at least 1")),
        Some(t) => t,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| usage(format!("thread pool: {e}")))?;
    let data = &common.data;
    log::debug!("effective config:\n{config}");

    match &cli.command {
        Command::Sessionize { out } => {
            let log_path = data.path(&data.log, "log.tsv", "log")?;
            let read = read_log(&log_path)?;
            let sessions = sessionize(&read.events, config.session_gap_seconds);
            log::info!("{} events, {} sessions, {} rows dropped", read.events.len(), sessions.len(), read.dropped);
            let mut w = output(out)?;
            for (i, s) in sessions.iter().enumerate() {
                for e in &s.events {
                    writeln!(w, "{i}\t{}\t{}\t{}", e.user_id, e.timestamp, e.query).map_err(io_err("<output>"))?;
                }
            }
            w.flush().map_err(io_err("<output>"))?;
        }
        Command::Candidates { query } => {
            let kb = data.kb()?;
            let q = segment(query, &kb)?;
            let stats = load_stats(&data.path(&data.log, "log.tsv", "log")?, config.session_gap_seconds)?;
            let candidates = instance_aspects(&stats, &q, config.candidate_cap);
            let body = serde_json::json!({ "query": q, "candidates": candidates });
            write_json(io::stdout().lock(), &body)?;
        }
        Command::Propagate { property, out } => {
            let kb = data.kb()?;
            let stats = load_stats(&data.path(&data.log, "log.tsv", "log")?, config.session_gap_seconds)?;
            let queries: Vec<SegmentedQuery> = kb
                .entities()
                .into_iter()
                .map(|(e, _)| SegmentedQuery::new(e, property.as_deref()))
                .collect();
            let dists: BTreeMap<SegmentedQuery, PatternDist> = queries
                .iter()
                .map(|q| (q.clone(), pattern_distribution(&instance_aspects(&stats, q, config.candidate_cap))))
                .collect();
            let graph = build_graph(&kb, &queries, config.k);
            let classes = class_aspects(&graph, &dists, config.variant);
            let mut w = output(out)?;
            write_class_distributions(&mut w, &classes).map_err(io_err("<output>"))?;
            w.flush().map_err(io_err("<output>"))?;
        }
        Command::Aspects { query, text } => {
            let inputs = Inputs::load(&data.paths()?, &config)?;
            let q = segment(query, &inputs.kb)?;
            let report = run_query(&q, &inputs, &config)?;
            if *text {
                io::stdout().lock().write_all(report.render_text().as_bytes()).map_err(io_err("<output>"))?;
            } else {
                write_json(io::stdout().lock(), &report)?;
            }
            if report.status == Status::Empty {
                eprintln!("error: no aspects found for {:?}", q.full);
                return Ok(ExitCode::from(2));
            }
        }
        Command::Suite { queries, out } => {
            let list = read_queries(queries)?;
            let inputs = Inputs::load(&data.paths()?, &config)?;
            let summary = run_suite(&list, &inputs, &config, threads, out)?;
            log::info!("{} queries, {} failed", summary.rows.len(), summary.failures());
        }
        Command::Synth {
            spec,
            seed,
            classes,
            entities_per_class,
            patterns,
            duplicated,
            out,
        } => {
            let mut world = match spec {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| aspector::Error::io(path, e))?;
                    serde_json::from_str::<WorldSpec>(&text)
                        .map_err(|e| aspector::Error::parse(path, e.line(), e.to_string()))?
                }
                None => WorldSpec::planted(seed.unwrap_or(1), *classes, *entities_per_class, *patterns, *duplicated),
            };
            if let Some(s) = seed {
                world.seed = *s;
            }
            generate(&world)?.write_to(out)?;
        }
        Command::EvalNsim { aspects } => {
            let list = read_lines(aspects)?;
            let corpus = data.corpus()?;
            let pinned = data.pinned()?;
            let model = build_topic_model(&corpus, config.topic_t)?;
            let value = nsim(&list, &retriever(&corpus, &pinned, &config), &model)?;
            write_json(io::stdout().lock(), &value)?;
        }
        Command::EvalCoverage { query, aspects } => {
            let list = read_lines(aspects)?;
            let corpus = data.corpus()?;
            let pinned = data.pinned()?;
            let r = retriever(&corpus, &pinned, &config);
            let c = coverage_overlap(query, &list, &r, config.coverage_k, config.coverage_n);
            let ids = |v: &[usize]| -> Vec<String> { v.iter().map(|&d| corpus.document(d).doc_id.clone()).collect() };
            let body = serde_json::json!({
                "query": query,
                "N": config.coverage_n,
                "k": config.coverage_k,
                "overlap": c.overlap,
                "vacuous": c.vacuous,
                "aspect_docs": ids(&c.aspect_docs),
                "new_docs": ids(&c.new_docs),
            });
            write_json(io::stdout().lock(), &body)?;
        }
        Command::EvalClusterF { gold } => {
            let gold = read_gold(gold)?;
            let corpus = data.corpus()?;
            let pinned = data.pinned()?;
            let r = retriever(&corpus, &pinned, &config);
            let mut w = io::BufWriter::new(io::stdout().lock());
            writeln!(w, "query,precision,recall,f").map_err(io_err("<output>"))?;
            let mut total = 0.0;
            for g in &gold {
                let matrix = similarity_matrix(&g.aspects(), &r);
                let partition: Vec<Vec<String>> = cluster(&matrix, &BTreeMap::new(), config.sigma)
                    .into_iter()
                    .map(|c| c.members)
                    .collect();
                let s = pair_scores(&partition, g)?;
                total += s.f;
                writeln!(w, "{},{:.6},{:.6},{:.6}", g.query, s.precision, s.recall, s.f).map_err(io_err("<output>"))?;
            }
            if !gold.is_empty() {
                log::info!("mean F at sigma {}: {:.6}", config.sigma, total / gold.len() as f64);
            }
            w.flush().map_err(io_err("<output>"))?;
        }
        Command::SweepSigma { gold, sigmas, out } => {
            let grid = parse_sigmas(sigmas).map_err(|e| usage(e.to_string()))?;
            let gold = read_gold(gold)?;
            let corpus = data.corpus()?;
            let pinned = data.pinned()?;
            let r = retriever(&corpus, &pinned, &config);
            let cases: Vec<SweepCase> = gold.into_iter().map(|g| SweepCase::from_retrieval(g, &r)).collect();
            let rows = sigma_sweep(&cases, &grid)?;
            let mut w = output(out)?;
            write_sweep_csv(&mut w, &rows).map_err(io_err("<output>"))?;
            w.flush().map_err(io_err("<output>"))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
