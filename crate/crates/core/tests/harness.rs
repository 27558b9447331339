use std::collections::BTreeSet;

use jointlk::harness::{
    dataset_to_string, distances_within, generate_synthetic, parse_dataset, path_oracle, read_dataset, write_task,
    DataPaths, LoadedTask, SyntheticTaskSpec,
};
use jointlk::kg::{ground_concepts, ConceptId};

fn spec(num_train: usize, num_dev: usize) -> SyntheticTaskSpec {
    SyntheticTaskSpec {
        num_train,
        num_dev,
        num_concepts: 1000,
        ..SyntheticTaskSpec::default()
    }
}

#[test]
fn one_hop_without_decoys_answers_are_direct_neighbors() {
    let s = SyntheticTaskSpec {
        hop: 1,
        distractor_density: 0.0,
        ..spec(150, 50)
    };
    let task = generate_synthetic(&s, 3).unwrap();
    for r in task.train.iter().chain(&task.dev) {
        let vq: BTreeSet<ConceptId> = r.vq.iter().copied().collect();
        let gold = r.va[r.gold][0];
        assert!(vq.iter().any(|&q| task.kg.neighbors(q).contains(&gold)), "{}", r.id);
        let dist = distances_within(&r.vq, |c| task.kg.neighbors(c).to_vec(), 2);
        for (i, va) in r.va.iter().enumerate() {
            if i != r.gold {
                assert!(!dist.contains_key(&va[0]), "{}: distractor within 2 hops", r.id);
            }
        }
        assert_eq!(path_oracle(r, &task.kg, 1), Some(r.gold));
    }
}

#[test]
fn two_hop_answers_sit_exactly_two_hops_out() {
    let task = generate_synthetic(&spec(150, 50), 4).unwrap();
    for r in task.train.iter().chain(&task.dev) {
        let dist = distances_within(&r.vq, |c| task.kg.neighbors(c).to_vec(), 2);
        assert_eq!(dist.get(&r.va[r.gold][0]), Some(&2), "{}", r.id);
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let s = spec(60, 20);
    let a = generate_synthetic(&s, 11).unwrap();
    let b = generate_synthetic(&s, 11).unwrap();
    let c = generate_synthetic(&s, 12).unwrap();
    assert_eq!(dataset_to_string(&a.train), dataset_to_string(&b.train));
    assert_eq!(dataset_to_string(&a.dev), dataset_to_string(&b.dev));
    assert_eq!(a.kg.edges_text(), b.kg.edges_text());
    assert_eq!(a.vocab.to_text(), b.vocab.to_text());
    assert_ne!(dataset_to_string(&a.train), dataset_to_string(&c.train));
}

#[test]
fn question_entity_count_matches_requested_mean() {
    for mean in [3.0, 7.0, 12.0] {
        let s = SyntheticTaskSpec {
            mean_question_entities: mean,
            ..spec(800, 200)
        };
        let task = generate_synthetic(&s, 5).unwrap();
        let all: Vec<usize> = task.train.iter().chain(&task.dev).map(|r| r.vq.len()).collect();
        assert_eq!(all.len(), 1000);
        let got = all.iter().sum::<usize>() as f64 / all.len() as f64;
        assert!((got - mean).abs() <= 1.0, "mean |Vq| {got} for requested {mean}");
    }
}

#[test]
fn path_oracle_solves_every_question() {
    for (hop, seed) in [(2, 0), (2, 1), (1, 2)] {
        let s = SyntheticTaskSpec { hop, ..spec(400, 100) };
        let task = generate_synthetic(&s, seed).unwrap();
        for r in task.train.iter().chain(&task.dev) {
            assert_eq!(path_oracle(r, &task.kg, hop), Some(r.gold), "{} hop {hop}", r.id);
        }
    }
}

#[test]
fn grounding_the_text_reproduces_the_stored_concepts() {
    let task = generate_synthetic(&spec(100, 20), 6).unwrap();
    let words = |ids: &[usize]| ids.iter().map(|&t| task.vocab.token(t).to_string()).collect::<Vec<_>>();
    for r in task.train.iter().chain(&task.dev) {
        let vq: BTreeSet<ConceptId> = r.vq.iter().copied().collect();
        assert_eq!(ground_concepts(&words(&r.question), &task.kg), vq, "{}", r.id);
        for (toks, va) in r.choices.iter().zip(&r.va) {
            let va: BTreeSet<ConceptId> = va.iter().copied().collect();
            assert_eq!(ground_concepts(&words(toks), &task.kg), va, "{}", r.id);
        }
    }
}

#[test]
fn task_directory_round_trips() {
    let s = spec(40, 10);
    let task = generate_synthetic(&s, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_task(dir.path(), &task, &s).unwrap();

    let paths = DataPaths::in_dir(dir.path());
    assert_eq!(read_dataset(&paths.split("train").unwrap()).unwrap(), task.train);
    assert_eq!(read_dataset(&paths.split("dev").unwrap()).unwrap(), task.dev);
    let loaded = LoadedTask::load(&paths).unwrap();
    assert_eq!(loaded.kg.edges_text(), task.kg.edges_text());
    assert_eq!(loaded.kg.concepts(), task.kg.concepts());
    assert_eq!(loaded.vocab.to_text(), task.vocab.to_text());
    let text = std::fs::read_to_string(dir.path().join("task.txt")).unwrap();
    assert_eq!(SyntheticTaskSpec::parse_kv(&text, "task.txt").unwrap().to_kv(), s.to_kv());
    assert_eq!(parse_dataset(&dataset_to_string(&task.dev), "mem").unwrap(), task.dev);
}
