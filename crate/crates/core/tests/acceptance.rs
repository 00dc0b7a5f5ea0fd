//! Exit criteria. Each test prints one PASS/FAIL line to stdout (uncaptured)
//! and then asserts the same condition.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use tvg_core::archive::{Archive, Checkpoint};
use tvg_core::config::{CenterMode, Config};
use tvg_core::inference::EvalTable;
use tvg_core::pipeline::{
    benchmark_config, ground_queries, random_baseline_recall, run_benchmark, train_pipeline, truth_map, truth_pairs,
    BenchmarkReport,
};
use tvg_core::selfcheck::{
    attention_invariants, closed_form_cases, kmeans_blob_recovery, kmeans_exhaustive, language_gradients, ncut_oracle,
    video_gradients, GRADIENT_TOLERANCE,
};
use tvg_core::synth::{generate_corpus, SyntheticCorpus, SyntheticSpec};
use tvg_core::trainer::{run_training, TrainState};

const SEEDS_PER_LOSS: usize = 20;
const ATTENTION_SHAPES: usize = 1000;
const ATTENTION_TOL: f64 = 1e-6;
const ORACLE_SEEDS: usize = 100;
const EXHAUSTIVE_MIN: usize = 95;
const EIGEN_RESIDUAL: f64 = 1e-8;
const BASELINE_DRAWS: usize = 10_000;
const RECALL_FACTOR: f64 = 2.0;
const AGREEMENT_GAIN: f64 = 5.0;
const DQA_MARGIN: f64 = 2.0;
const BENCH_BUDGET_SECS: f64 = 1800.0;

fn report(criterion: u32, name: &str, passed: bool, detail: &str) {
    let line = format!(
        "{} criterion {criterion} ({name}): {detail}\n",
        if passed { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn corpus() -> &'static (SyntheticSpec, SyntheticCorpus) {
    static CORPUS: OnceLock<(SyntheticSpec, SyntheticCorpus)> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let spec = SyntheticSpec::default();
        let corpus = generate_corpus(&spec).expect("default spec generates");
        (spec, corpus)
    })
}

fn benchmark(cfg: &Config) -> BenchmarkReport {
    run_benchmark(&corpus().1, cfg).expect("benchmark runs")
}

fn main_run() -> &'static BenchmarkReport {
    static RUN: OnceLock<BenchmarkReport> = OnceLock::new();
    RUN.get_or_init(|| benchmark(&benchmark_config()))
}

fn r1(table: &EvalTable) -> f64 {
    table.get(1, 0.5).expect("R@1 IoU=0.5 present")
}

#[test]
fn criterion_1_gradient_suite() {
    let clock = Instant::now();
    let all: Vec<_> = language_gradients(SEEDS_PER_LOSS)
        .into_iter()
        .chain(video_gradients(SEEDS_PER_LOSS))
        .collect();
    let secs = clock.elapsed().as_secs_f64();
    let passed = all.iter().all(|g| g.passes() && g.seeds >= SEEDS_PER_LOSS) && secs < 120.0;
    let worst = all.iter().map(|g| format!("{} {:.1e}", g.loss, g.max_rel_error)).collect::<Vec<_>>();
    report(
        1,
        "gradient suite",
        passed,
        &format!("max rel error per loss [{}] vs {GRADIENT_TOLERANCE:e}; {secs:.1}s", worst.join(", ")),
    );
    assert!(passed);
}

#[test]
fn criterion_2_attention_invariants() {
    let clock = Instant::now();
    let (dev_a, dev_b, positive) = attention_invariants(ATTENTION_SHAPES, 2);
    let secs = clock.elapsed().as_secs_f64();
    let passed = dev_a <= ATTENTION_TOL && dev_b <= ATTENTION_TOL && positive && secs < 10.0;
    report(
        2,
        "attention invariants",
        passed,
        &format!("row-sum deviations A {dev_a:.1e}, B {dev_b:.1e} over {ATTENTION_SHAPES} shapes; {secs:.2}s"),
    );
    assert!(passed);
}

#[test]
fn criterion_3_clustering_oracles() {
    let blobs = kmeans_blob_recovery(ORACLE_SEEDS);
    let exact = kmeans_exhaustive(ORACLE_SEEDS);
    let (agree, residual) = ncut_oracle(ORACLE_SEEDS);
    let passed = blobs == ORACLE_SEEDS && exact >= EXHAUSTIVE_MIN && agree == ORACLE_SEEDS && residual <= EIGEN_RESIDUAL;
    report(
        3,
        "clustering oracles",
        passed,
        &format!(
            "blobs {blobs}/{ORACLE_SEEDS}, exhaustive optimum {exact}/{ORACLE_SEEDS} (need {EXHAUSTIVE_MIN}), \
             N-cut {agree}/{ORACLE_SEEDS} with residual {residual:.1e}"
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_4_closed_forms() {
    let cases = closed_form_cases();
    let failed: Vec<String> = cases
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    let passed = failed.is_empty();
    report(
        4,
        "closed-form cases",
        passed,
        &if passed {
            format!("{} cases exact", cases.len())
        } else {
            failed.join("; ")
        },
    );
    assert!(passed);
}

#[test]
fn criterion_5_synthetic_benchmark() {
    let (spec, corpus) = corpus();
    let run = main_run();
    let baseline = random_baseline_recall(corpus, spec, 0.5, BASELINE_DRAWS).unwrap();
    let recall = r1(&run.eval);
    let first = run.agreement[0];
    let last = *run.agreement.last().unwrap();
    let recall_ok = recall >= RECALL_FACTOR * baseline;
    let agreement_ok = run.agreement.len() == 5 && last >= first + AGREEMENT_GAIN;
    let time_ok = run.seconds < BENCH_BUDGET_SECS;
    let passed = recall_ok && agreement_ok && time_ok;
    report(
        5,
        "synthetic benchmark",
        passed,
        &format!(
            "(a) R@1 IoU=0.5 {recall:.2} vs random {baseline:.2} (need >= {:.2}) {}; \
             (b) label agreement {first:.2} -> {last:.2} (need +{AGREEMENT_GAIN}) {}; runtime {:.0}s {}",
            RECALL_FACTOR * baseline,
            if recall_ok { "ok" } else { "FAIL" },
            if agreement_ok { "ok" } else { "FAIL" },
            run.seconds,
            if time_ok { "ok" } else { "FAIL" },
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_6_ablation_directions() {
    let full = r1(&main_run().eval);
    let no_dqa = r1(&benchmark(&Config {
        beta_w: 0.0,
        ..benchmark_config()
    })
    .eval);
    let random = r1(&benchmark(&Config {
        center_mode: CenterMode::Random,
        ..benchmark_config()
    })
    .eval);
    let dqa_ok = full - no_dqa >= DQA_MARGIN;
    let center_ok = full > random;
    let passed = dqa_ok && center_ok;
    report(
        6,
        "ablation directions",
        passed,
        &format!(
            "R@1 IoU=0.5 full {full:.2}, without diversity loss {no_dqa:.2} (need drop >= {DQA_MARGIN}) {}; \
             random centers {random:.2} (need below full) {}",
            if dqa_ok { "ok" } else { "FAIL" },
            if center_ok { "ok" } else { "FAIL" },
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_7_determinism_and_resume() {
    let (_, corpus) = corpus();
    let cfg = benchmark_config();
    let reference = main_run();

    let mut snapshot = None;
    let trained = train_pipeline(&corpus.videos, &corpus.queries, &corpus.table, &cfg, |_, s| {
        if s.iteration == 2 {
            snapshot = Some(s.to_checkpoint(&cfg).to_archive().to_bytes());
        }
        Ok(())
    })
    .unwrap();
    let pairs = truth_pairs(corpus);
    let truth = truth_map(&corpus.truth);
    let eval_of = |state: &TrainState| {
        let results = ground_queries(&state.model, &trained.necks, &corpus.videos, &corpus.queries, &pairs, &cfg).unwrap();
        EvalTable::compute(&results, &truth).unwrap()
    };
    let eval = eval_of(&trained.state);
    let repeat_ok = trained.state.history == reference.history && eval == reference.eval;

    let archive = Archive::from_bytes(&snapshot.expect("iteration 2 reached"), Path::new("<memory>")).unwrap();
    let mut resumed = TrainState::from_checkpoint(&Checkpoint::from_archive(&archive).unwrap()).unwrap();
    run_training(&mut resumed, &corpus.videos, &trained.bank, &cfg, |_| Ok(())).unwrap();
    let resume_ok = resumed.history == trained.state.history
        && resumed.labels == trained.state.labels
        && resumed.metrics == trained.state.metrics
        && eval_of(&resumed) == eval;

    let passed = repeat_ok && resume_ok;
    report(
        7,
        "determinism",
        passed,
        &format!(
            "repeat run: {} loss records and eval table {}; resume from iteration 2: {}",
            trained.state.history.len(),
            if repeat_ok { "identical" } else { "DIFFER" },
            if resume_ok { "identical" } else { "DIFFERS" },
        ),
    );
    assert!(passed);
}
