use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use tvg_core::archive::{load_checkpoint, save_checkpoint};
use tvg_core::clustering::{build_cluster_bank, ClusterBank};
use tvg_core::config::Config;
use tvg_core::data::{load_feature_dir, load_query_corpus, write_matrix, Dtype, EmbeddingTable, FrameFeatureSequence};
use tvg_core::inference::{load_results, load_truth, results_to_csv, score_curve, EvalTable};
use tvg_core::language::{trace_csv, train_language_model, NeckSet};
use tvg_core::pipeline::ground_queries;
use tvg_core::selfcheck::{run_suite, SuiteOptions};
use tvg_core::synth::{generate_corpus, SyntheticSpec};
use tvg_core::tensor::Matrix;
use tvg_core::trainer::{history_csv, init_state, metrics_csv, run_training, TrainState};

#[derive(Parser)]
#[command(name = "tvg", version, about = "Unsupervised temporal video grounding pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr_video=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').with_context(|| format!("expected KEY=VALUE, got {kv}"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        info!("config hash {} seed {}", cfg.hash(), cfg.seed);
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted segments.
    SynthGen {
        /// Spec file of `key = value` lines; defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the query encoder-decoder and export neck matrices.
    TrainLanguage {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Language model checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Neck matrices to write.
        #[arg(long)]
        necks: PathBuf,
        /// Optional CSV of the per-step loss trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Optional long-format CSV of the necks.
        #[arg(long)]
        necks_csv: Option<PathBuf>,
    },
    /// Cluster the necks of every neck index.
    BuildClusters {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        necks: PathBuf,
        /// Clusters per neck index (overrides the config).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Optional text assignment table.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Train the video module against refreshed pseudo labels.
    TrainVideo {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        /// Checkpoint written after every iteration.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Per-iteration metrics CSV.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Per-step loss history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Ground each query of a pairs file in its video.
    Infer {
        #[command(flatten)]
        pairing: Pairing,
        /// Results file to write.
        #[arg(long)]
        out: PathBuf,
        /// Override the checkpoint's inference threshold.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Score a results file against ground truth.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Eval table CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump score curves and attention maps for plotting.
    Report {
        #[command(flatten)]
        pairing: Pairing,
        /// Directory for `scores.csv` and `attention/*.tvgm`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariant and gradient suite.
    Selfcheck {
        /// Seeds per loss in the gradient suite.
        #[arg(long, default_value_t = 20)]
        gradient_seeds: usize,
    },
}

#[derive(Args)]
struct Pairing {
    /// Video module checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    necks: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// CSV whose first two columns are `video_id,query_id`.
    #[arg(long)]
    pairs: PathBuf,
    /// Clusters file; only `report` uses it, for attention dumps.
    #[arg(long)]
    clusters: Option<PathBuf>,
}

struct Loaded {
    cfg: Config,
    model: tvg_core::video::VideoModel,
    necks: NeckSet,
    videos: Vec<FrameFeatureSequence>,
    pairs: Vec<(usize, usize)>,
    queries: Vec<tvg_core::data::QueryTokens>,
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let mut f = line.split(',').map(str::trim);
        match (f.next(), f.next()) {
            (Some(v), Some(q)) => out.push((v.to_string(), q.to_string())),
            _ => bail!("{}: malformed line {line:?}", path.display()),
        }
    }
    Ok(out)
}

impl Pairing {
    fn load(&self) -> Result<Loaded> {
        let ckpt = load_checkpoint(&self.checkpoint)?;
        let cfg = ckpt.config.clone();
        info!("config hash {} seed {}", cfg.hash(), cfg.seed);
        let model = tvg_core::video::VideoModel::from_checkpoint(&ckpt)?;
        let necks = NeckSet::load(&self.necks)?;
        let videos = load_feature_dir(&self.features)?;
        let vindex: BTreeMap<&str, usize> = videos.iter().enumerate().map(|(i, v)| (v.video_id.as_str(), i)).collect();
        // Grounding needs only the neck matrices, so queries carry no tokens here.
        let queries: Vec<tvg_core::data::QueryTokens> = necks
            .ids
            .iter()
            .map(|id| tvg_core::data::QueryTokens::new(id.clone(), vec![0]))
            .collect::<std::result::Result<_, _>>()?;
        let qindex: BTreeMap<&str, usize> = necks.ids.iter().enumerate().map(|(i, q)| (q.as_str(), i)).collect();
        let pairs = read_pairs(&self.pairs)?
            .iter()
            .map(|(v, q)| {
                let vi = vindex.get(v.as_str()).with_context(|| format!("unknown video {v}"))?;
                let qi = qindex.get(q.as_str()).with_context(|| format!("no necks for query {q}"))?;
                Ok((*vi, *qi))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Loaded {
            cfg,
            model,
            necks,
            videos,
            pairs,
            queries,
        })
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::SynthGen {
            spec,
            overrides,
            seed,
            out,
        } => {
            let mut s = match spec {
                Some(p) => SyntheticSpec::from_text(&std::fs::read_to_string(&p)?)?,
                None => SyntheticSpec::default(),
            };
            for kv in &overrides {
                let (k, v) = kv.split_once('=').with_context(|| format!("expected KEY=VALUE, got {kv}"))?;
                s.set(k.trim(), v.trim())?;
            }
            if let Some(seed) = seed {
                s.seed = seed;
            }
            info!("spec seed {}", s.seed);
            let corpus = generate_corpus(&s)?;
            corpus.write(&out, &s)?;
            let mut pairs = String::from("video_id,query_id\n");
            for p in &corpus.truth {
                let _ = writeln!(pairs, "{},{}", p.video_id, p.query_id);
            }
            write(&out.join("pairs.csv"), &pairs)?;
            info!("wrote {} videos and {} queries to {}", corpus.videos.len(), corpus.queries.len(), out.display());
        }
        Command::TrainLanguage {
            cfg,
            queries,
            embeddings,
            out,
            necks,
            trace,
            necks_csv,
        } => {
            let cfg = cfg.resolve()?;
            let table = EmbeddingTable::load(&embeddings)?;
            let corpus = load_query_corpus(&queries, &table, cfg.max_query_len)?;
            let trained = train_language_model(&corpus.queries, &table, &cfg)?;
            save_checkpoint(
                &out,
                &trained
                    .model
                    .to_checkpoint(&cfg, cfg.language_epochs, &trained.rng, Some(&trained.optimizer)),
            )?;
            let set = trained.model.export_necks(&corpus.queries, &table)?;
            set.save(&necks)?;
            if let Some(p) = trace {
                write(&p, &trace_csv(&trained.trace))?;
            }
            if let Some(p) = necks_csv {
                write(&p, &set.to_csv())?;
            }
            if let Some(last) = trained.trace.last() {
                info!("final L_w {:.4} (L_cel {:.4})", last.total, last.cel);
            }
        }
        Command::BuildClusters {
            cfg,
            necks,
            k,
            out,
            table,
        } => {
            let mut cfg = cfg.resolve()?;
            if let Some(k) = k {
                cfg.clusters = k;
                cfg.validate()?;
            }
            let set = NeckSet::load(&necks)?;
            let bank = build_cluster_bank(&set, &cfg)?;
            bank.save(&out)?;
            if let Some(p) = table {
                write(&p, &bank.assignment_table())?;
            }
            info!("built {} x {} centers, inertia {:?}", bank.necks(), bank.clusters(), bank.inertia);
        }
        Command::TrainVideo {
            cfg,
            features,
            clusters,
            out,
            resume,
            metrics,
            history,
        } => {
            let videos = load_feature_dir(&features)?;
            let bank = ClusterBank::load(&clusters)?;
            let (cfg, mut state) = match resume {
                Some(p) => {
                    let ckpt = load_checkpoint(&p)?;
                    info!("resuming at iteration {}", ckpt.iteration);
                    info!("config hash {} seed {}", ckpt.config.hash(), ckpt.config.seed);
                    (ckpt.config.clone(), TrainState::from_checkpoint(&ckpt)?)
                }
                None => {
                    let cfg = cfg.resolve()?;
                    let state = init_state(&videos, &bank, &cfg)?;
                    (cfg, state)
                }
            };
            run_training(&mut state, &videos, &bank, &cfg, |s| {
                save_checkpoint(&out, &s.to_checkpoint(&cfg))?;
                Ok(())
            })?;
            if let Some(p) = metrics {
                write(&p, &metrics_csv(&state.metrics))?;
            }
            if let Some(p) = history {
                write(&p, &history_csv(&state.history))?;
            }
        }
        Command::Infer {
            pairing,
            out,
            threshold,
            top_n,
        } => {
            let mut l = pairing.load()?;
            if let Some(t) = threshold {
                l.cfg.threshold = t;
            }
            if let Some(n) = top_n {
                l.cfg.top_n = n;
            }
            l.cfg.validate()?;
            let results = ground_queries(&l.model, &l.necks, &l.videos, &l.queries, &l.pairs, &l.cfg)?;
            write(&out, &results_to_csv(&results))?;
            info!("grounded {} queries", results.len());
        }
        Command::Eval { results, truth, out } => {
            let results = load_results(&results)?;
            let (truth, _) = load_truth(&truth)?;
            let table = EvalTable::compute(&results, &truth)?;
            print!("{}", table.render());
            if let Some(p) = out {
                write(&p, &table.to_csv())?;
            }
        }
        Command::Report { pairing, out } => {
            let l = pairing.load()?;
            let bank = pairing.clusters.as_ref().map(|p| ClusterBank::load(p)).transpose()?;
            let mut csv = String::from("video_id,query_id,frame,score\n");
            for &(v, q) in &l.pairs {
                let video = &l.videos[v];
                let qid = &l.necks.ids[q];
                let scores = score_curve(&l.model, &l.necks.necks[q], &video.features)?;
                for (t, s) in scores.iter().enumerate() {
                    let _ = writeln!(csv, "{},{},{t},{s:e}", video.video_id, qid);
                }
            }
            write(&out.join("scores.csv"), &csv)?;
            if let Some(bank) = bank {
                let dir = out.join("attention");
                std::fs::create_dir_all(&dir)?;
                for video in &l.videos {
                    for (i, centers) in bank.centers.iter().enumerate() {
                        let (_, a_spe, a_fore) = l.model.attention_maps(i, centers, &video.features)?;
                        write_matrix(&dir.join(format!("{}.a_spe{i}.tvgm", video.video_id)), &a_spe, Dtype::F32)?;
                        if i == 0 {
                            let fore = Matrix::row_vector(&a_fore);
                            write_matrix(&dir.join(format!("{}.a_fore.tvgm", video.video_id)), &fore, Dtype::F32)?;
                        }
                    }
                }
            }
        }
        Command::Selfcheck { gradient_seeds } => {
            let outcomes = run_suite(&SuiteOptions {
                gradient_seeds,
                ..SuiteOptions::default()
            });
            let mut ok = true;
            for c in &outcomes {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
