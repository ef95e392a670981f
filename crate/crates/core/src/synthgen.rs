//! Deterministic synthetic worlds: a query log, knowledge-base files, a
//! document corpus and gold clusterings with planted structure.
//!
//! Each class owns a set of canonical aspect patterns (`"<E> visa"`), some
//! with near-duplicate variants (`"<E> visas"`). Every pattern family has its
//! own vocabulary pool; documents for an instantiated aspect draw from that
//! pool, so near-duplicates retrieve near-identical documents while distinct
//! families only share the entity name and class vocabulary.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::{instantiate, SegmentedQuery};
use crate::error::{Error, Result};
use crate::eval::{write_gold, GoldClustering};
use crate::kb::KnowledgeBase;
use crate::logmodel::{write_log, QueryEvent};
use crate::retrieval::{write_corpus, Document};

fn default_overview_docs() -> usize {
    30
}
fn default_family_vocab() -> usize {
    18
}
fn default_family_terms() -> usize {
    9
}
fn default_class_vocab() -> usize {
    6
}
fn default_class_terms() -> usize {
    2
}
fn default_overview_vocab() -> usize {
    8
}
fn default_overview_terms() -> usize {
    4
}
fn default_min_aspects() -> usize {
    1
}
fn default_max_aspects() -> usize {
    3
}
fn default_sessions_per_user() -> usize {
    5
}
fn default_idiosyncratic() -> usize {
    0
}
fn default_idiosyncratic_weight() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub pattern: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    /// Canonical pattern containing `<E>`.
    pub pattern: String,
    pub weight: f64,
    /// Near-duplicate surface forms of the same need.
    #[serde(default)]
    pub variants: Vec<VariantSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub name: String,
    /// Relative sampling weight; zero keeps the entity out of the log.
    pub popularity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    #[serde(default)]
    pub property: Option<String>,
    pub entities: Vec<EntitySpec>,
    pub patterns: Vec<PatternSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub session_count: usize,
    pub docs_per_aspect: usize,
    pub classes: Vec<ClassSpec>,
    #[serde(default = "default_overview_docs")]
    pub overview_docs: usize,
    #[serde(default = "default_family_vocab")]
    pub family_vocab: usize,
    #[serde(default = "default_family_terms")]
    pub family_terms_per_doc: usize,
    #[serde(default = "default_class_vocab")]
    pub class_vocab: usize,
    #[serde(default = "default_class_terms")]
    pub class_terms_per_doc: usize,
    #[serde(default = "default_overview_vocab")]
    pub overview_vocab: usize,
    #[serde(default = "default_overview_terms")]
    pub overview_terms_per_doc: usize,
    #[serde(default = "default_min_aspects")]
    pub min_aspects_per_session: usize,
    #[serde(default = "default_max_aspects")]
    pub max_aspects_per_session: usize,
    #[serde(default = "default_sessions_per_user")]
    pub sessions_per_user: usize,
    /// Entity-specific aspects generated per entity. They enter the class
    /// distribution with low weight and act as propagation noise.
    #[serde(default = "default_idiosyncratic")]
    pub idiosyncratic_per_entity: usize,
    #[serde(default = "default_idiosyncratic_weight")]
    pub idiosyncratic_weight: f64,
}

impl WorldSpec {
    /// A world of `classes` classes with `entities` entities each. Every
    /// class plants the same `patterns` aspect patterns (as every country has
    /// visas and hotels); the first `duplicated` get a plural near-duplicate.
    /// Entity popularity is Zipf-like (`1/rank`) and the last entity of every
    /// class never appears in the log.
    pub fn planted(seed: u64, classes: usize, entities: usize, patterns: usize, duplicated: usize) -> Self {
        let mut names = WordGen::new(seed ^ 0x9e37_79b9_7f4a_7c15);
        let planted: Vec<PatternSpec> = (0..patterns)
            .map(|p| {
                let word = names.next_word();
                let weight = 1.0 / (1.0 + 0.15 * p as f64);
                PatternSpec {
                    pattern: format!("<E> {word}"),
                    weight,
                    variants: if p < duplicated {
                        vec![VariantSpec {
                            pattern: format!("<E> {word}s"),
                            weight: 0.7 * weight,
                        }]
                    } else {
                        Vec::new()
                    },
                }
            })
            .collect();
        let classes: Vec<ClassSpec> = (0..classes)
            .map(|c| ClassSpec {
                name: format!("class{c}"),
                property: None,
                entities: (0..entities)
                    .map(|rank| EntitySpec {
                        name: names.next_word(),
                        popularity: if rank + 1 == entities {
                            0.0
                        } else {
                            1.0 / (rank + 1) as f64
                        },
                    })
                    .collect(),
                patterns: planted.clone(),
            })
            .collect();
        WorldSpec {
            seed,
            session_count: 600 * classes.len(),
            docs_per_aspect: 8,
            classes,
            overview_docs: default_overview_docs(),
            family_vocab: default_family_vocab(),
            family_terms_per_doc: default_family_terms(),
            class_vocab: default_class_vocab(),
            class_terms_per_doc: default_class_terms(),
            overview_vocab: default_overview_vocab(),
            overview_terms_per_doc: default_overview_terms(),
            min_aspects_per_session: default_min_aspects(),
            max_aspects_per_session: default_max_aspects(),
            sessions_per_user: default_sessions_per_user(),
            idiosyncratic_per_entity: default_idiosyncratic(),
            idiosyncratic_weight: default_idiosyncratic_weight(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("world spec: {m}")));
        if self.classes.is_empty() {
            return bad("at least one class is required");
        }
        if self.docs_per_aspect == 0 || self.sessions_per_user == 0 {
            return bad("docs_per_aspect and sessions_per_user must be positive");
        }
        if self.min_aspects_per_session > self.max_aspects_per_session {
            return bad("min_aspects_per_session exceeds max_aspects_per_session");
        }
        if self.family_terms_per_doc > self.family_vocab
            || self.class_terms_per_doc > self.class_vocab
            || self.overview_terms_per_doc > self.overview_vocab
        {
            return bad("terms per document exceed their vocabulary");
        }
        if !(self.idiosyncratic_weight > 0.0) {
            return bad("idiosyncratic_weight must be positive");
        }
        for class in &self.classes {
            if class.entities.is_empty() {
                return bad(&format!("class {:?} has no entities", class.name));
            }
            if class.entities.iter().any(|e| !(e.popularity >= 0.0)) {
                return bad(&format!("class {:?} has a negative popularity", class.name));
            }
            for p in &class.patterns {
                let weights = std::iter::once(p.weight).chain(p.variants.iter().map(|v| v.weight));
                if weights.into_iter().any(|w| !(w > 0.0)) {
                    return bad(&format!("pattern {:?} needs positive weights", p.pattern));
                }
                if !p.pattern.contains("<E>") || p.variants.iter().any(|v| !v.pattern.contains("<E>")) {
                    return bad(&format!("pattern {:?} must contain <E>", p.pattern));
                }
            }
        }
        if self.classes.iter().flat_map(|c| &c.entities).all(|e| e.popularity == 0.0) && self.session_count > 0 {
            return bad("every entity has zero popularity");
        }
        Ok(())
    }
}

/// Deterministic pronounceable pseudo-words, never repeated.
struct WordGen {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl WordGen {
    fn new(seed: u64) -> Self {
        WordGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: HashSet::new(),
        }
    }

    fn next_word(&mut self) -> String {
        const CONSONANTS: &[u8] = b"bdfgklmnprtvz";
        const VOWELS: &[u8] = b"aeiou";
        loop {
            let mut w = String::new();
            for _ in 0..3 {
                w.push(*CONSONANTS.choose(&mut self.rng).expect("nonempty") as char);
                w.push(*VOWELS.choose(&mut self.rng).expect("nonempty") as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.next_word()).collect()
    }
}

/// Planted topic of a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocLabel {
    pub doc_id: String,
    pub entity: String,
    /// Base pattern of the family, or `None` for an entity overview page.
    pub family: Option<String>,
}

/// One aspect family instantiated for an entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFamily {
    pub base: String,
    /// Surfaces of the base and its variants, base first.
    pub surfaces: Vec<String>,
    pub class_level: bool,
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub spec: WorldSpec,
    pub events: Vec<QueryEvent>,
    pub kb: KnowledgeBase,
    pub documents: Vec<Document>,
    pub labels: Vec<DocLabel>,
    pub gold: Vec<GoldClustering>,
    pub queries: Vec<SegmentedQuery>,
    /// entity -> planted families
    pub families: BTreeMap<String, Vec<PlantedFamily>>,
}

impl SynthWorld {
    pub fn popularity(&self, entity: &str) -> Option<f64> {
        self.spec
            .classes
            .iter()
            .flat_map(|c| &c.entities)
            .find(|e| e.name == entity)
            .map(|e| e.popularity)
    }

    pub fn label_of(&self, doc_id: &str) -> Option<&DocLabel> {
        self.labels.iter().find(|l| l.doc_id == doc_id)
    }

    /// Write every artifact into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| -> Result<BufWriter<File>> {
            let path = dir.join(name);
            File::create(&path).map(BufWriter::new).map_err(|e| Error::io(path, e))
        };
        let io = |name: &str| {
            let path = dir.join(name);
            move |e: std::io::Error| Error::io(path, e)
        };

        let mut out = create("world.json")?;
        serde_json::to_writer_pretty(&mut out, &self.spec)?;
        out.write_all(b"\n").map_err(io("world.json"))?;
        out.flush().map_err(io("world.json"))?;

        let mut out = create("log.tsv")?;
        write_log(&mut out, &self.events).map_err(io("log.tsv"))?;
        out.flush().map_err(io("log.tsv"))?;

        let mut out = create("entities.tsv")?;
        self.kb.write_entities(&mut out).map_err(io("entities.tsv"))?;
        out.flush().map_err(io("entities.tsv"))?;
        let mut out = create("redirects.tsv")?;
        self.kb.write_redirects(&mut out).map_err(io("redirects.tsv"))?;
        out.flush().map_err(io("redirects.tsv"))?;
        let mut out = create("disambiguation.txt")?;
        self.kb.write_disambiguation(&mut out).map_err(io("disambiguation.txt"))?;
        out.flush().map_err(io("disambiguation.txt"))?;

        let mut out = create("corpus.jsonl")?;
        write_corpus(&mut out, &self.documents)?;
        out.flush().map_err(io("corpus.jsonl"))?;

        let mut out = create("doc_labels.tsv")?;
        for l in &self.labels {
            writeln!(out, "{}\t{}\t{}", l.doc_id, l.entity, l.family.as_deref().unwrap_or("-")).map_err(io("doc_labels.tsv"))?;
        }
        out.flush().map_err(io("doc_labels.tsv"))?;

        let mut out = create("gold.jsonl")?;
        write_gold(&mut out, &self.gold)?;
        out.flush().map_err(io("gold.jsonl"))?;

        let mut out = create("queries.tsv")?;
        for q in &self.queries {
            match &q.property {
                Some(p) => writeln!(out, "{}\t{}\t{}", q.full, q.entity, p),
                None => writeln!(out, "{}\t{}", q.full, q.entity),
            }
            .map_err(io("queries.tsv"))?;
        }
        out.flush().map_err(io("queries.tsv"))?;
        Ok(())
    }
}

struct EntityPlan {
    class: usize,
    name: String,
    query: SegmentedQuery,
    /// (surface, sampling weight, family index)
    surfaces: Vec<(String, f64, usize)>,
    families: Vec<PlantedFamily>,
    /// vocabulary pool per family
    pools: Vec<Vec<String>>,
    overview_pool: Vec<String>,
}

/// Generate a world. Output is a pure function of the spec.
pub fn generate(spec: &WorldSpec) -> Result<SynthWorld> {
    spec.validate()?;
    let mut words = WordGen::new(spec.seed);
    for class in &spec.classes {
        for e in &class.entities {
            words.used.extend(e.name.split_whitespace().map(str::to_string));
        }
        for p in &class.patterns {
            for v in std::iter::once(&p.pattern).chain(p.variants.iter().map(|v| &v.pattern)) {
                words.used.extend(v.split_whitespace().map(str::to_string));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let class_pools: Vec<Vec<String>> = spec.classes.iter().map(|_| words.words(spec.class_vocab)).collect();
    // one vocabulary per distinct pattern, shared by every class planting it
    let mut family_pools: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for class in &spec.classes {
        for p in &class.patterns {
            if !family_pools.contains_key(p.pattern.as_str()) {
                family_pools.insert(&p.pattern, words.words(spec.family_vocab));
            }
        }
    }

    let mut plans: Vec<EntityPlan> = Vec::new();
    for (ci, class) in spec.classes.iter().enumerate() {
        for e in &class.entities {
            let query = SegmentedQuery::new(&e.name, class.property.as_deref());
            let mut families = Vec::new();
            let mut surfaces = Vec::new();
            let mut pools = Vec::new();
            for (fi, p) in class.patterns.iter().enumerate() {
                let mut fam_surfaces = vec![instantiate(&p.pattern, &query.full)];
                surfaces.push((fam_surfaces[0].clone(), p.weight, fi));
                for v in &p.variants {
                    let s = instantiate(&v.pattern, &query.full);
                    surfaces.push((s.clone(), v.weight, fi));
                    fam_surfaces.push(s);
                }
                families.push(PlantedFamily {
                    base: p.pattern.clone(),
                    surfaces: fam_surfaces,
                    class_level: true,
                });
                pools.push(family_pools[p.pattern.as_str()].clone());
            }
            for _ in 0..spec.idiosyncratic_per_entity {
                let word = words.next_word();
                let pattern = format!("<E> {word}");
                let fi = families.len();
                let surface = instantiate(&pattern, &query.full);
                surfaces.push((surface.clone(), spec.idiosyncratic_weight, fi));
                families.push(PlantedFamily {
                    base: pattern,
                    surfaces: vec![surface],
                    class_level: false,
                });
                pools.push(words.words(spec.family_vocab));
            }
            plans.push(EntityPlan {
                class: ci,
                name: query.entity.clone(),
                query,
                surfaces,
                families,
                pools,
                overview_pool: words.words(spec.overview_vocab),
            });
        }
    }

    let events = sample_log(spec, &plans, &mut rng)?;

    let mut documents = Vec::new();
    let mut labels = Vec::new();
    for (ei, plan) in plans.iter().enumerate() {
        let class_pool = &class_pools[plan.class];
        for i in 0..spec.overview_docs {
            let mut snippet: Vec<String> = plan
                .overview_pool
                .choose_multiple(&mut rng, spec.overview_terms_per_doc)
                .cloned()
                .collect();
            snippet.extend(class_pool.choose_multiple(&mut rng, spec.class_terms_per_doc).cloned());
            snippet.shuffle(&mut rng);
            let doc_id = format!("e{ei:03}-ov-{i:02}");
            documents.push(Document::new(doc_id.clone(), plan.query.full.clone(), snippet.join(" ")));
            labels.push(DocLabel {
                doc_id,
                entity: plan.name.clone(),
                family: None,
            });
        }
        for (fi, family) in plan.families.iter().enumerate() {
            for (vi, surface) in family.surfaces.iter().enumerate() {
                let family_terms = covering_samples(&plan.pools[fi], spec.docs_per_aspect, spec.family_terms_per_doc, &mut rng);
                let class_terms = covering_samples(class_pool, spec.docs_per_aspect, spec.class_terms_per_doc, &mut rng);
                for (i, (mut snippet, extra)) in family_terms.into_iter().zip(class_terms).enumerate() {
                    snippet.extend(extra);
                    snippet.shuffle(&mut rng);
                    let doc_id = format!("e{ei:03}-f{fi:02}-v{vi}-{i:02}");
                    documents.push(Document::new(doc_id.clone(), surface.clone(), snippet.join(" ")));
                    labels.push(DocLabel {
                        doc_id,
                        entity: plan.name.clone(),
                        family: Some(family.base.clone()),
                    });
                }
            }
        }
    }

    let kb = KnowledgeBase::from_rows(
        spec.classes
            .iter()
            .flat_map(|c| c.entities.iter().map(move |e| (e.name.as_str(), c.name.as_str()))),
        [],
        [],
    )?;

    let gold = plans
        .iter()
        .map(|p| GoldClustering::new(p.query.full.clone(), p.families.iter().map(|f| f.surfaces.clone()).collect()))
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthWorld {
        spec: spec.clone(),
        events,
        kb,
        documents,
        labels,
        gold,
        queries: plans.iter().map(|p| p.query.clone()).collect(),
        families: plans.into_iter().map(|p| (p.name, p.families)).collect(),
    })
}

/// `docs` samples of `per_doc` distinct pool terms that together cover the
/// whole pool whenever `docs * per_doc >= pool.len()`.
fn covering_samples(pool: &[String], docs: usize, per_doc: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let mut order = pool.to_vec();
    order.shuffle(rng);
    (0..docs)
        .map(|i| (0..per_doc).map(|j| order[(i * per_doc + j) % order.len()].clone()).collect())
        .collect()
}

fn sample_log(spec: &WorldSpec, plans: &[EntityPlan], rng: &mut ChaCha8Rng) -> Result<Vec<QueryEvent>> {
    if spec.session_count == 0 {
        return Ok(Vec::new());
    }
    let popularity: Vec<f64> = spec
        .classes
        .iter()
        .flat_map(|c| c.entities.iter().map(|e| e.popularity))
        .collect();
    let pick_entity = WeightedIndex::new(&popularity).map_err(|e| Error::Config(format!("world spec: {e}")))?;
    let pick_surface: Vec<WeightedIndex<f64>> = plans
        .iter()
        .map(|p| WeightedIndex::new(p.surfaces.iter().map(|s| s.1)).map_err(|e| Error::Config(format!("world spec: {e}"))))
        .collect::<Result<_>>()?;

    let mut events = Vec::new();
    for s in 0..spec.session_count {
        let user = format!("u{:05}", s / spec.sessions_per_user);
        let mut t = (s % spec.sessions_per_user) as i64 * 7200;
        let e = pick_entity.sample(rng);
        let plan = &plans[e];
        events.push(QueryEvent {
            user_id: user.clone(),
            timestamp: t,
            query: plan.query.full.clone(),
        });
        let count = rng.random_range(spec.min_aspects_per_session..=spec.max_aspects_per_session);
        for _ in 0..count {
            t += rng.random_range(20..300);
            let surface = &plan.surfaces[pick_surface[e].sample(rng)].0;
            events.push(QueryEvent {
                user_id: user.clone(),
                timestamp: t,
                query: surface.clone(),
            });
        }
    }
    Ok(events)
}
