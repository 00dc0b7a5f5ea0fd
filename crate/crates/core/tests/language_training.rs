use std::collections::BTreeMap;

use tvg_core::clustering::{build_cluster_bank, purity};
use tvg_core::config::Config;
use tvg_core::data::{EmbeddingTable, QueryTokens};
use tvg_core::language::train_language_steps;
use tvg_core::pipeline::benchmark_config;
use tvg_core::synth::{generate_corpus, SyntheticSpec};
use tvg_core::tensor::Matrix;

fn tiny_cfg() -> Config {
    Config {
        necks: 2,
        clusters: 2,
        neck_dim: 6,
        mlp_hidden: 8,
        sentence_dim: 16,
        max_query_len: 5,
        language_batch: 1,
        lr_language: 1e-2,
        ..Config::default()
    }
}

fn table(n: usize) -> EmbeddingTable {
    let words = (0..n).map(|i| format!("w{i}")).collect();
    EmbeddingTable::new(words, Matrix::from_fn(n, 4, |r, c| ((r * 7 + c * 3) % 5) as f64 / 5.0 - 0.4)).unwrap()
}

#[test]
fn single_query_beats_uniform_after_200_steps() {
    let table = table(12);
    let corpus = vec![QueryTokens::new("q0", vec![3, 1, 4, 1, 5]).unwrap()];
    let trained = train_language_steps(&corpus, &table, &tiny_cfg(), 200).unwrap();
    assert_eq!(trained.trace.len(), 200);
    let last = trained.trace.last().unwrap();
    // Per-word cross entropy against the uniform bound.
    let uniform = (table.vocab_size() as f64).ln();
    assert!(last.cel / 5.0 < uniform, "{} vs {uniform}", last.cel / 5.0);
}

#[test]
fn held_out_loss_does_not_increase() {
    let spec = SyntheticSpec::default();
    let corpus = generate_corpus(&spec).unwrap();
    let cfg = benchmark_config();
    let (train, held) = corpus.queries.split_at(160);
    let before = train_language_steps(train, &corpus.table, &cfg, 0).unwrap();
    let after = train_language_steps(train, &corpus.table, &cfg, cfg.language_epochs).unwrap();
    let l0 = before.model.evaluate(held, &corpus.table, &cfg).total;
    let l1 = after.model.evaluate(held, &corpus.table, &cfg).total;
    assert!(l1 <= l0, "held-out L_w went from {l0} to {l1}");
}

#[test]
fn fixed_seed_gives_identical_traces() {
    let table = table(9);
    let corpus: Vec<QueryTokens> = (0..6)
        .map(|i| QueryTokens::new(format!("q{i}"), vec![i % 9, (i * 2) % 9, 4]).unwrap())
        .collect();
    let cfg = Config {
        language_batch: 2,
        ..tiny_cfg()
    };
    let a = train_language_steps(&corpus, &table, &cfg, 3).unwrap();
    let b = train_language_steps(&corpus, &table, &cfg, 3).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.model.store, b.model.store);

    let frozen = Config { lr_language: 0.0, ..cfg };
    let init = train_language_steps(&corpus, &table, &frozen, 0).unwrap();
    let still = train_language_steps(&corpus, &table, &frozen, 3).unwrap();
    assert_eq!(init.model.store, still.model.store);
}

#[test]
fn clusters_recover_planted_atoms() {
    let spec = SyntheticSpec::default();
    let corpus = generate_corpus(&spec).unwrap();
    let cfg = Config {
        clusters: spec.atoms,
        ..benchmark_config()
    };
    let trained = train_language_steps(&corpus.queries, &corpus.table, &cfg, cfg.language_epochs).unwrap();
    let necks = trained.model.export_necks(&corpus.queries, &corpus.table).unwrap();
    let bank = build_cluster_bank(&necks, &cfg).unwrap();
    let atom: BTreeMap<&str, usize> = corpus.truth.iter().map(|p| (p.query_id.as_str(), p.atom)).collect();
    let labels: Vec<usize> = bank.query_ids.iter().map(|q| atom[q.as_str()]).collect();
    for (i, assignments) in bank.assignments.iter().enumerate() {
        let p = purity(assignments, &labels);
        assert!(p >= 0.9, "neck {i}: purity {p}");
    }
}
