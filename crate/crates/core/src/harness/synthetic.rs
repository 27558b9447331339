use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::encode::{TokenVocab, PAD_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::kg::{ConceptId, KnowledgeGraph, RelId, RelationVocab};

use super::DatasetRecord;

/// Parameters of the synthetic path-reasoning task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSpec {
    pub num_train: usize,
    pub num_dev: usize,
    pub num_choices: usize,
    pub num_concepts: usize,
    /// Relation ids including reverses; must match the merged ConceptNet
    /// vocabulary (38).
    pub num_relations: usize,
    pub mean_question_entities: f64,
    /// Shortest-path length from the question concepts to the gold concept.
    pub hop: usize,
    /// Expected decoy bridges per question. A decoy is a concept linked to
    /// two question concepts, so it shows up in every choice's subgraph.
    pub distractor_density: f64,
    /// Stubs per concept in the base random graph.
    pub kg_degree: usize,
    /// Filler tokens per question; `None` means the mean entity count.
    pub fillers: Option<usize>,
    pub filler_vocab: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            num_train: 2000,
            num_dev: 500,
            num_choices: 4,
            num_concepts: 4000,
            num_relations: 38,
            mean_question_entities: 7.0,
            hop: 2,
            distractor_density: 2.0,
            kg_degree: 3,
            fillers: None,
            filler_vocab: 50,
            seed: 0,
        }
    }
}

const SPEC_KEYS: &[&str] = &[
    "num_train",
    "num_dev",
    "num_choices",
    "num_concepts",
    "num_relations",
    "mean_question_entities",
    "hop",
    "distractor_density",
    "kg_degree",
    "fillers",
    "filler_vocab",
    "seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl SyntheticTaskSpec {
    pub fn num_questions(&self) -> usize {
        self.num_train + self.num_dev
    }

    pub fn fillers(&self) -> usize {
        self.fillers
            .unwrap_or(self.mean_question_entities.round() as usize)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "num_train" => self.num_train = parse(key, v)?,
            "num_dev" => self.num_dev = parse(key, v)?,
            "num_choices" => self.num_choices = parse(key, v)?,
            "num_concepts" => self.num_concepts = parse(key, v)?,
            "num_relations" => self.num_relations = parse(key, v)?,
            "mean_question_entities" => self.mean_question_entities = parse(key, v)?,
            "hop" => self.hop = parse(key, v)?,
            "distractor_density" => self.distractor_density = parse(key, v)?,
            "kg_degree" => self.kg_degree = parse(key, v)?,
            "fillers" => self.fillers = if v == "auto" { None } else { Some(parse(key, v)?) },
            "filler_vocab" => self.filler_vocab = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "num_train" => self.num_train.to_string(),
            "num_dev" => self.num_dev.to_string(),
            "num_choices" => self.num_choices.to_string(),
            "num_concepts" => self.num_concepts.to_string(),
            "num_relations" => self.num_relations.to_string(),
            "mean_question_entities" => self.mean_question_entities.to_string(),
            "hop" => self.hop.to_string(),
            "distractor_density" => self.distractor_density.to_string(),
            "kg_degree" => self.kg_degree.to_string(),
            "fillers" => self.fillers.map_or("auto".into(), |f| f.to_string()),
            "filler_vocab" => self.filler_vocab.to_string(),
            "seed" => self.seed.to_string(),
            _ => unreachable!("unlisted key"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if !(1..=2).contains(&self.hop) {
            return bad(format!("hop must be 1 or 2, got {}", self.hop));
        }
        if self.num_choices < 2 {
            return Err(Error::TooFewChoices(self.num_choices));
        }
        if self.num_train == 0 || self.num_dev == 0 {
            return bad("num_train and num_dev must be at least 1".into());
        }
        if !(self.mean_question_entities >= 1.0) {
            return bad("mean_question_entities must be at least 1".into());
        }
        if !(self.distractor_density >= 0.0 && self.distractor_density.is_finite()) {
            return bad("distractor_density must be a finite non-negative number".into());
        }
        if self.kg_degree == 0 {
            return bad("kg_degree must be at least 1".into());
        }
        if self.filler_vocab == 0 && self.fillers() > 0 {
            return bad("filler_vocab must be positive when fillers are used".into());
        }
        let rel = RelationVocab::conceptnet().num_relations();
        if self.num_relations != rel {
            return bad(format!("num_relations must be {rel} (merged ConceptNet relations with reverses)"));
        }
        let max_q = max_entities(self.mean_question_entities);
        let need = max_q + self.num_choices + self.distractor_density.ceil() as usize + 2;
        if self.num_concepts < need {
            return bad(format!(
                "vocabulary too small: {} concepts, at least {need} needed for disjoint question, bridge and choice concepts",
                self.num_concepts
            ));
        }
        Ok(())
    }

    pub fn parse_kv(text: &str, origin: &str) -> Result<Self> {
        let mut s = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected key=value".into()))?;
            s.set(k.trim(), v).map_err(|e| err(e.to_string()))?;
        }
        s.validate().map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        Ok(s)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for k in SPEC_KEYS {
            let _ = writeln!(s, "{k}={}", self.get(k));
        }
        s
    }
}

/// `|V_q| = 1 + Binomial(round(2(m-1)), 1/2)` has mean `m`.
fn entity_trials(mean: f64) -> u64 {
    (2.0 * (mean - 1.0)).round().max(0.0) as u64
}

fn max_entities(mean: f64) -> usize {
    1 + entity_trials(mean) as usize
}

pub struct SyntheticTask {
    pub kg: KnowledgeGraph,
    pub vocab: TokenVocab,
    pub train: Vec<DatasetRecord>,
    pub dev: Vec<DatasetRecord>,
}

struct Draft {
    vq: Vec<ConceptId>,
}

pub fn concept_name(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(4);
    format!("c{i:0width$}")
}

pub fn filler_name(i: usize) -> String {
    format!("f{i}")
}

/// Undirected shortest-path distance from the nearest source, explored up to
/// `limit` hops. Nodes further away are absent.
pub fn distances_within(
    sources: &[ConceptId],
    neighbors: impl Fn(ConceptId) -> Vec<ConceptId>,
    limit: usize,
) -> std::collections::HashMap<ConceptId, usize> {
    let mut dist = std::collections::HashMap::new();
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist.insert(s, 0).is_none() {
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        if d == limit {
            continue;
        }
        for v in neighbors(u) {
            if !dist.contains_key(&v) {
                dist.insert(v, d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Generates a KG and questions whose gold concept lies exactly `hop` steps
/// from the question concepts while every distractor lies further than two
/// steps away. Decoy bridges between question concepts are added to the KG
/// before answers are chosen, so they never create a shortcut.
pub fn generate_synthetic(spec: &SyntheticTaskSpec, seed: u64) -> Result<SyntheticTask> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relations = RelationVocab::conceptnet();
    let rels: Vec<RelId> = (0..relations.num_merged())
        .filter(|&r| !relations.is_context(r))
        .collect();
    let n = spec.num_concepts;

    let mut pairs: HashSet<(ConceptId, ConceptId)> = HashSet::new();
    let mut triples: Vec<(ConceptId, RelId, ConceptId)> = Vec::new();
    let mut adj: Vec<BTreeSet<ConceptId>> = vec![BTreeSet::new(); n];
    let mut link = |a: ConceptId, b: ConceptId, rng: &mut ChaCha8Rng| {
        if a == b || !pairs.insert((a.min(b), a.max(b))) {
            return;
        }
        let r = *rels.choose(rng).expect("relations");
        let (h, t) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        triples.push((h, r, t));
        adj[a].insert(b);
        adj[b].insert(a);
    };

    let mut stubs: Vec<ConceptId> = (0..n).flat_map(|c| std::iter::repeat(c).take(spec.kg_degree)).collect();
    stubs.shuffle(&mut rng);
    for p in stubs.chunks_exact(2) {
        link(p[0], p[1], &mut rng);
    }

    let total = spec.num_questions();
    let attempts = total + total / 4 + 16;
    let trials = Binomial::new(entity_trials(spec.mean_question_entities), 0.5)
        .map_err(|e| Error::Spec(e.to_string()))?;
    let whole = spec.distractor_density.floor() as usize;
    let frac = spec.distractor_density - whole as f64;
    let mut drafts = Vec::with_capacity(attempts);
    for _ in 0..attempts {
        let k = (1 + trials.sample(&mut rng) as usize).min(n);
        let mut vq = rand::seq::index::sample(&mut rng, n, k).into_vec();
        vq.sort_unstable();
        let decoys = whole + usize::from(rng.gen_bool(frac));
        if vq.len() >= 2 {
            for _ in 0..decoys {
                let d = loop {
                    let c = rng.gen_range(0..n);
                    if vq.binary_search(&c).is_err() {
                        break c;
                    }
                };
                let ends = rand::seq::index::sample(&mut rng, vq.len(), 2);
                link(d, vq[ends.index(0)], &mut rng);
                link(d, vq[ends.index(1)], &mut rng);
            }
        }
        drafts.push(Draft { vq });
    }

    let names: Vec<String> = (0..n).map(|i| concept_name(i, n)).collect();
    let fillers: Vec<String> = (0..spec.filler_vocab).map(filler_name).collect();
    let vocab = TokenVocab::new(
        [PAD_TOKEN, UNK_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .chain(names.iter().cloned())
            .chain(fillers.iter().cloned()),
    );

    let mut records = Vec::with_capacity(total);
    for draft in drafts {
        if records.len() == total {
            break;
        }
        let dist = distances_within(&draft.vq, |c| adj[c].iter().copied().collect(), 2);
        let golds: Vec<ConceptId> = dist
            .iter()
            .filter(|&(_, &d)| d == spec.hop)
            .map(|(&c, _)| c)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let Some(&gold_concept) = golds.choose(&mut rng) else {
            continue;
        };
        let mut distractors = Vec::with_capacity(spec.num_choices - 1);
        let mut tries = 0;
        while distractors.len() < spec.num_choices - 1 && tries < 10_000 {
            tries += 1;
            let c = rng.gen_range(0..n);
            if !dist.contains_key(&c) && !distractors.contains(&c) {
                distractors.push(c);
            }
        }
        if distractors.len() < spec.num_choices - 1 {
            continue;
        }
        let gold = rng.gen_range(0..spec.num_choices);
        distractors.insert(gold, gold_concept);
        let answers = distractors;

        let mut question: Vec<&str> = draft.vq.iter().map(|&c| names[c].as_str()).collect();
        for _ in 0..spec.fillers() {
            question.push(fillers.choose(&mut rng).expect("filler vocabulary").as_str());
        }
        question.shuffle(&mut rng);

        let i = records.len();
        let id = if i < spec.num_train {
            format!("train-{i:05}")
        } else {
            format!("dev-{:05}", i - spec.num_train)
        };
        records.push(DatasetRecord {
            id,
            question: vocab.encode(&question),
            choices: answers.iter().map(|&a| vec![vocab.id(&names[a])]).collect(),
            vq: draft.vq,
            va: answers.iter().map(|&a| vec![a]).collect(),
            gold,
        });
    }
    if records.len() < total {
        return Err(Error::Spec(format!(
            "vocabulary too small: only {} of {total} questions admit a {}-hop gold concept and {} distant distractors",
            records.len(),
            spec.hop,
            spec.num_choices - 1
        )));
    }

    let kg = KnowledgeGraph::from_ids(names, &triples, relations)?;
    let dev = records.split_off(spec.num_train);
    Ok(SyntheticTask {
        kg,
        vocab,
        train: records,
        dev,
    })
}

/// Picks the choice whose concept is within `hop` steps of the question
/// concepts, using only the KG. Returns `None` when zero or several choices
/// qualify.
pub fn path_oracle(record: &DatasetRecord, kg: &KnowledgeGraph, hop: usize) -> Option<usize> {
    let dist = distances_within(&record.vq, |c| kg.neighbors(c).to_vec(), hop);
    let hits: Vec<usize> = record
        .va
        .iter()
        .enumerate()
        .filter(|(_, va)| va.iter().any(|c| dist.contains_key(c)))
        .map(|(i, _)| i)
        .collect();
    match hits.as_slice() {
        [only] => Some(*only),
        _ => None,
    }
}
