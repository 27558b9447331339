//! Synthetic task generation, on-disk formats and the command-line surface.

pub mod cli;
mod dataset;
mod synthetic;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use dataset::{
    dataset_to_string, parse_dataset, prepare_dataset, prepare_record, read_dataset, retrieve_choices,
    write_dataset, DatasetRecord, DATASET_FORMAT, DATASET_VERSION,
};
pub use synthetic::{
    concept_name, distances_within, filler_name, generate_synthetic, path_oracle, SyntheticTask,
    SyntheticTaskSpec,
};

use crate::encode::TokenVocab;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, NodeType, RelationVocab, SubgraphEdge};
use crate::model::{GraphQuery, JointLK, JointLKConfig, PreparedQuestion};
use crate::tensor::{check_gradients_with, GradCheckReport, ParamGroup, ParamId, ParamStore, Tape};

pub const TOKENS_FILE: &str = "tokens.txt";
pub const CONCEPTS_FILE: &str = "concepts.txt";
pub const EDGES_FILE: &str = "edges.tsv";
pub const RELATIONS_FILE: &str = "relations.tsv";
pub const TASK_FILE: &str = "task.txt";

pub fn split_file(split: &str) -> String {
    format!("{split}.jsonl")
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_config(path: &Path) -> Result<JointLKConfig> {
    JointLKConfig::parse_kv(&read_text(path)?, &path.display().to_string())
}

pub fn load_spec(path: &Path) -> Result<SyntheticTaskSpec> {
    SyntheticTaskSpec::parse_kv(&read_text(path)?, &path.display().to_string())
}

/// Writes the KG, token vocabulary, spec and both splits into `dir`.
pub fn write_task(dir: &Path, task: &SyntheticTask, spec: &SyntheticTaskSpec) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join(TOKENS_FILE), &task.vocab.to_text())?;
    write_text(&dir.join(CONCEPTS_FILE), &task.kg.vocab_text())?;
    write_text(&dir.join(EDGES_FILE), &task.kg.edges_text())?;
    write_text(&dir.join(RELATIONS_FILE), &task.kg.relations().to_table())?;
    write_text(&dir.join(TASK_FILE), &spec.to_kv())?;
    write_dataset(&dir.join(split_file("train")), &task.train)?;
    write_dataset(&dir.join(split_file("dev")), &task.dev)
}

/// File locations of a task directory, each individually overridable.
#[derive(Debug, Clone, Default)]
pub struct DataPaths {
    pub dir: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub concepts: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub tokens: Option<PathBuf>,
}

impl DataPaths {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Self::default()
        }
    }

    fn resolve(&self, explicit: &Option<PathBuf>, file: &str) -> Result<PathBuf> {
        match (explicit, &self.dir) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(d)) => Ok(d.join(file)),
            (None, None) => Err(Error::Config(format!("no data directory given and no path for {file}"))),
        }
    }

    pub fn split(&self, split: &str) -> Result<PathBuf> {
        self.resolve(&None, &split_file(split))
    }

    pub fn load_kg(&self) -> Result<KnowledgeGraph> {
        let edges = self.resolve(&self.edges, EDGES_FILE)?;
        let concepts = self.resolve(&self.concepts, CONCEPTS_FILE)?;
        let relations = match (&self.relations, &self.dir) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(d)) if d.join(RELATIONS_FILE).exists() => Some(d.join(RELATIONS_FILE)),
            _ => None,
        };
        Ok(KnowledgeGraph::load(&edges, &concepts, relations.as_deref())?)
    }

    pub fn load_vocab(&self) -> Result<TokenVocab> {
        TokenVocab::load(&self.resolve(&self.tokens, TOKENS_FILE)?)
    }
}

/// Everything needed to train or evaluate on one task directory.
pub struct LoadedTask {
    pub kg: KnowledgeGraph,
    pub vocab: TokenVocab,
}

impl LoadedTask {
    pub fn load(paths: &DataPaths) -> Result<Self> {
        Ok(Self {
            kg: paths.load_kg()?,
            vocab: paths.load_vocab()?,
        })
    }

    pub fn prepare(&self, records: &[DatasetRecord], config: &JointLKConfig) -> Result<Vec<PreparedQuestion>> {
        let scorer = crate::kg::scorer_by_name(&config.scorer)?;
        prepare_dataset(records, &self.kg, &self.vocab, config.max_nodes, scorer.as_ref())
    }

    pub fn new_model(&self, config: JointLKConfig) -> Result<JointLK> {
        JointLK::new(config, self.vocab.len(), self.kg.relations().num_relations())
    }
}

/// End-to-end finite-difference check of `config`'s architecture on a
/// random two-choice question over a five-node graph, dropout off.
///
/// The context node's feature is a detached copy of the query encoding,
/// so finite differences and the analytic gradient legitimately disagree
/// on encoder parameters when it is present. The check therefore runs
/// twice: every parameter on graphs without a context node, and the graph
/// parameters on graphs with one.
pub fn gradcheck_model(config: &JointLKConfig, seed: u64) -> Result<GradCheckReport> {
    let rel = RelationVocab::conceptnet();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = JointLK::new(config.clone(), GRADCHECK_VOCAB, rel.num_relations())?;
    let plain = gradcheck_question(&mut rng, &rel, false);
    let with_ctx = gradcheck_question(&mut rng, &rel, true);
    let graph_ids: Vec<ParamId> = model
        .store
        .ids()
        .filter(|&id| model.store.group(id) == ParamGroup::Graph)
        .collect();

    let mut store = std::mem::take(&mut model.store);
    let run = |store: &mut ParamStore, q: &PreparedQuestion, only: Option<&[ParamId]>| {
        check_gradients_with(store, only, |s, tape: &mut Tape| {
            Ok::<_, Error>(model.question_loss(s, tape, q, None)?.0)
        })
    };
    let first = run(&mut store, &plain, None);
    let second = first.and_then(|a| run(&mut store, &with_ctx, Some(&graph_ids)).map(|b| (a, b)));
    model.store = store;
    let (mut a, b) = second?;
    a.params.extend(b.params.into_iter().map(|mut p| {
        p.name.push_str(" (with context)");
        p
    }));
    Ok(a)
}

const GRADCHECK_VOCAB: usize = 12;

fn gradcheck_question(rng: &mut ChaCha8Rng, rel: &RelationVocab, context: bool) -> PreparedQuestion {
    let choice = |rng: &mut ChaCha8Rng| {
        let mut types = vec![NodeType::Question, NodeType::Question, NodeType::Bridge, NodeType::Answer];
        let mut edges = vec![
            SubgraphEdge { src: 0, rel: 3, dst: 2 },
            SubgraphEdge { src: 2, rel: rel.reverse(3), dst: 0 },
            SubgraphEdge { src: 2, rel: 5, dst: 3 },
            SubgraphEdge { src: 1, rel: 1, dst: 3 },
        ];
        if context {
            for (i, t) in types.clone().iter().enumerate() {
                let r = match t {
                    NodeType::Answer => rel.context_to_answer(),
                    NodeType::Question => rel.context_to_question(),
                    _ => continue,
                };
                edges.push(SubgraphEdge { src: 4, rel: r, dst: i });
                edges.push(SubgraphEdge { src: i, rel: rel.reverse(r), dst: 4 });
            }
            types.push(NodeType::Context);
        }
        edges.sort();
        let n = types.len();
        GraphQuery {
            tokens: (0..5).map(|_| rng.gen_range(2..GRADCHECK_VOCAB)).collect(),
            node_tokens: types
                .iter()
                .map(|t| if *t == NodeType::Context { vec![] } else { vec![rng.gen_range(2..GRADCHECK_VOCAB)] })
                .collect(),
            node_names: (0..n).map(|i| format!("n{i}")).collect(),
            node_types: types,
            edges,
        }
    };
    PreparedQuestion {
        id: "gradcheck".into(),
        choices: vec![choice(rng), choice(rng)],
        gold: 1,
        question_entities: 2,
    }
}
