//! Pipeline driver behind the `narrate` binary.
//!
//! Every subcommand reads its upstream artifacts from sibling directories under
//! one root and writes only its own directory.

pub mod config;
pub mod rundir;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use narrate::autodiff::Container;
use narrate::dataset::{
    audit_random_episodes, build_dataset, Dataset, DatasetConfig, LabeledPair, PairKind,
};
use narrate::env::EnvConfig;
use narrate::lang::{
    corpus_vocabulary, cosine, paraphrase_corpus, train_word2vec, Goal, Vocabulary,
};
use narrate::mem::{accuracy, evaluate, heldout_congruence, optimal_threshold, train_mem, Mem};
use narrate::rl::{evaluate_policy, train_agent, Policy, UpdateMode};
use narrate::shaping::{NarrationScript, RewardMode};
use narrate::state_enc::StateStack;
use narrate::tsne::{cluster_report, coords_csv, stratified_sample, tsne, ClusterReport};
use narrate::{Error, Result};

pub use config::RunConfig;
use rundir::{require, RunDir};

pub const DATA_DIR: &str = "data";
pub const W2V_DIR: &str = "w2v";
pub const MEM_DIR: &str = "mem";
pub const EVAL_MEM_DIR: &str = "eval-mem";
pub const PROJECT_DIR: &str = "project";
pub const EVAL_AGENT_DIR: &str = "eval-agent";
pub const ENV_REPORT_DIR: &str = "env-report";
const AGENT_PREFIX: &str = "agent-";

#[derive(Debug, Parser)]
#[command(
    name = "narrate",
    version,
    about = "Narration-guided reward shaping pipeline"
)]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding one subdirectory per subcommand.
    #[arg(long, global = true, default_value = "runs")]
    pub root: PathBuf,
    /// Override a config key, e.g. `--set rl.budget=50000`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out random episodes and build the labelled state/command pairs.
    GenData {
        #[arg(long)]
        quota: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train word vectors on the paraphrase corpus.
    TrainW2v {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the mutual-embedding model on the generated pairs.
    TrainMem {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Accuracy of the trained MEM on every split.
    EvalMem {
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// t-SNE of state and command embeddings with a cluster report.
    Project {
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train an actor-critic agent under one reward mode.
    TrainAgent {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        update: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare every trained agent under the root.
    EvalAgent {
        #[arg(long)]
        episodes: Option<u32>,
    },
    /// Dump the rule table and audit the simulator's invariants under random play.
    EnvReport {
        #[arg(long)]
        episodes: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Where a subcommand wrote and what it reports.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub lines: Vec<String>,
}

impl Command {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        fn put<T: ToString>(
            out: &mut Vec<(&'static str, String)>,
            key: &'static str,
            v: &Option<T>,
        ) {
            if let Some(v) = v {
                out.push((key, v.to_string()));
            }
        }
        let mut out = Vec::new();
        match self {
            Command::GenData { quota, seed } => {
                put(&mut out, "data.quota", quota);
                put(&mut out, "data.seed", seed);
            }
            Command::TrainW2v { seed } => put(&mut out, "w2v.seed", seed),
            Command::TrainMem {
                epochs,
                lambda,
                seed,
            } => {
                put(&mut out, "mem.epochs", epochs);
                put(&mut out, "mem.lambda", lambda);
                put(&mut out, "mem.seed", seed);
            }
            Command::EvalMem { threshold } => put(&mut out, "mem.threshold", threshold),
            Command::Project { per_class, seed } => {
                put(&mut out, "project.per_class", per_class);
                put(&mut out, "project.seed", seed);
            }
            Command::TrainAgent {
                mode,
                budget,
                workers,
                update,
                seed,
            } => {
                put(&mut out, "rl.mode", mode);
                put(&mut out, "rl.budget", budget);
                put(&mut out, "rl.workers", workers);
                put(&mut out, "rl.update", update);
                put(&mut out, "rl.seed", seed);
            }
            Command::EvalAgent { episodes } => put(&mut out, "eval.episodes", episodes),
            Command::EnvReport { episodes, seed } => {
                put(&mut out, "audit.episodes", episodes);
                put(&mut out, "audit.seed", seed);
            }
        }
        out
    }
}

/// Defaults, then the config file, then `--set` pairs, then subcommand flags.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for pair in &cli.overrides {
        cfg.apply_override(pair)?;
    }
    for (key, value) in cli.command.overrides() {
        cfg.set(key, &value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = effective_config(cli)?;
    let root = cli.root.as_path();
    match cli.command {
        Command::GenData { .. } => gen_data(&cfg, root),
        Command::TrainW2v { .. } => train_w2v(&cfg, root),
        Command::TrainMem { .. } => train_mem_cmd(&cfg, root),
        Command::EvalMem { .. } => eval_mem(&cfg, root),
        Command::Project { .. } => project(&cfg, root).map(|(o, _)| o),
        Command::TrainAgent { .. } => train_agent_cmd(&cfg, root),
        Command::EvalAgent { .. } => eval_agent(&cfg, root).map(|(o, _)| o),
        Command::EnvReport { .. } => env_report(&cfg, root),
    }
}

fn load_dataset(root: &Path) -> Result<Dataset> {
    Dataset::load(&require(root, DATA_DIR, "dataset.bin", "gen-data")?)
}

fn load_mem(root: &Path) -> Result<Mem> {
    Mem::load(&require(root, MEM_DIR, "mem.bin", "train-mem")?)
}

pub fn gen_data(cfg: &RunConfig, root: &Path) -> Result<Outcome> {
    let vocab = corpus_vocabulary();
    let ds = build_dataset(
        &DatasetConfig {
            env: cfg.env.clone(),
            quota: cfg.data.quota,
            max_episodes: cfg.data.max_episodes,
            seed: cfg.data.seed,
        },
        &vocab,
    )?;
    let mut dir = RunDir::create(root, DATA_DIR)?;
    dir.write("dataset.bin", ds.to_bytes())?;
    dir.write("stats.csv", ds.stats())?;
    let line = format!(
        "records {} (train {}, val {}, test {}) from {} episodes",
        ds.len(),
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        ds.episodes
    );
    Ok(Outcome {
        dir: dir.finish(cfg, None)?,
        lines: vec![line],
    })
}

/// Word pairs whose similarity is reported after training.
pub const PROBE_PAIRS: [(&str, &str); 4] = [
    ("build", "construct"),
    ("build", "marine"),
    ("collect", "gather"),
    ("depot", "barracks"),
];

pub fn train_w2v(cfg: &RunConfig, root: &Path) -> Result<Outcome> {
    let vocab = corpus_vocabulary();
    let corpus: Vec<Vec<usize>> = paraphrase_corpus(cfg.w2v.repeats, cfg.w2v.params.seed)
        .iter()
        .map(|s| vocab.tokenize(s))
        .collect::<Result<_>>()?;
    let table = train_word2vec(&cfg.w2v.params, vocab.len(), &corpus)?;
    let mut similarity = String::from("a,b,cosine\n");
    let mut lines = Vec::new();
    for (a, b) in PROBE_PAIRS {
        let c = cosine(&table, vocab.id(a), vocab.id(b));
        let _ = writeln!(similarity, "{a},{b},{c}");
        lines.push(format!("cosine({a}, {b}) = {c:.4}"));
    }
    let mut words = Container::new();
    words.push_tensor("words", table);
    let mut dir = RunDir::create(root, W2V_DIR)?;
    dir.write("vocab.txt", vocab.to_bytes())?;
    dir.write("words.bin", words.to_bytes())?;
    dir.write("similarity.csv", similarity)?;
    Ok(Outcome {
        dir: dir.finish(cfg, None)?,
        lines,
    })
}

/// Trained word vectors and their vocabulary.
pub fn load_words(root: &Path) -> Result<(Vocabulary, narrate::autodiff::Tensor)> {
    let vocab = Vocabulary::from_bytes(&std::fs::read(require(
        root,
        W2V_DIR,
        "vocab.txt",
        "train-w2v",
    )?)?)?;
    let c = Container::load(&require(root, W2V_DIR, "words.bin", "train-w2v")?)?;
    Ok((vocab, c.tensor("words")?.clone()))
}

fn mem_metrics(mem: &Mem, ds: &Dataset, threshold: f64) -> Result<(String, Vec<String>)> {
    let mut text = String::new();
    let mut lines = Vec::new();
    for (name, split) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        let acc = evaluate(mem, split, threshold)?;
        let _ = writeln!(text, "{name}_accuracy {acc}");
        lines.push(format!("{name} accuracy {:.4}", acc));
    }
    let (hits, trials) = heldout_congruence(mem, &ds.test, threshold)?;
    let frac = hits as f64 / trials.max(1) as f64;
    let _ = writeln!(text, "heldout_congruent {hits}/{trials} {frac}");
    lines.push(format!(
        "held-out paraphrases congruent {hits}/{trials} ({frac:.4})"
    ));
    Ok((text, lines))
}

pub fn train_mem_cmd(cfg: &RunConfig, root: &Path) -> Result<Outcome> {
    let ds = load_dataset(root)?;
    let (vocab, words) = load_words(root)?;
    let mut mem = Mem::new(vocab, words, ds.grid_size, cfg.mem.seed)?;
    let start = Instant::now();
    let report = train_mem(&mut mem, &ds.train, &ds.val, &cfg.mem, |e| {
        eprintln!(
            "epoch {} train_loss {:.5} val_loss {:.5} train_acc {:.4} val_acc {:.4} ({:.0?})",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.train_acc,
            e.val_acc,
            start.elapsed()
        );
    })?;
    let (mut metrics, mut lines) = mem_metrics(&mem, &ds, cfg.mem.threshold)?;
    let _ = writeln!(metrics, "best_epoch {}", report.best_epoch);
    lines.push(format!("best epoch {}", report.best_epoch));
    let mut dir = RunDir::create(root, MEM_DIR)?;
    dir.write("mem.bin", mem.to_container().to_bytes())?;
    dir.write("curves.csv", report.curves_csv())?;
    dir.write("metrics.txt", metrics)?;
    Ok(Outcome {
        dir: dir.finish(cfg, None)?,
        lines,
    })
}

fn kind_accuracy(mem: &Mem, pairs: &[LabeledPair], kind: PairKind, threshold: f64) -> Result<f64> {
    let sel: Vec<&LabeledPair> = pairs.iter().filter(|p| p.kind == kind).collect();
    let d = mem.distances(&sel)?;
    let y: Vec<u8> = sel.iter().map(|p| p.y).collect();
    Ok(accuracy(&d, &y, threshold))
}

pub fn eval_mem(cfg: &RunConfig, root: &Path) -> Result<Outcome> {
    let ds = load_dataset(root)?;
    let mem = load_mem(root)?;
    let t = cfg.mem.threshold;
    let (mut metrics, mut lines) = mem_metrics(&mem, &ds, t)?;
    for (name, split) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        for kind in PairKind::ALL {
            let _ = writeln!(
                metrics,
                "{name}_{}_accuracy {}",
                kind.name(),
                kind_accuracy(&mem, split, kind, t)?
            );
        }
    }
    let val: Vec<&LabeledPair> = ds.val.iter().collect();
    let d = mem.distances(&val)?;
    let y: Vec<u8> = val.iter().map(|p| p.y).collect();
    let (best_t, best_acc) = optimal_threshold(&d, &y);
    let test_at_best = evaluate(&mem, &ds.test, best_t)?;
    let _ = writeln!(metrics, "val_optimal_threshold {best_t}");
    let _ = writeln!(metrics, "val_optimal_accuracy {best_acc}");
    let _ = writeln!(metrics, "test_accuracy_at_val_optimal {test_at_best}");
    lines.push(format!(
        "val-optimal threshold {best_t:.4} (val {best_acc:.4}, test {test_at_best:.4})"
    ));
    let mut dir = RunDir::create(root, EVAL_MEM_DIR)?;
    dir.write("metrics.txt", metrics)?;
    Ok(Outcome {
        dir: dir.finish(cfg, None)?,
        lines,
    })
}

fn goal_name(label: usize) -> String {
    Goal::from_index(label)
        .map(|g| g.name().to_string())
        .unwrap_or_else(|| label.to_string())
}

/// t-SNE of sampled training states (one class per detected goal) together with the canonical commands.
pub fn project(cfg: &RunConfig, root: &Path) -> Result<(Outcome, ClusterReport)> {
    let ds = load_dataset(root)?;
    let mem = load_mem(root)?;
    let matched: Vec<&LabeledPair> = ds
        .train
        .iter()
        .filter(|p| p.kind == PairKind::Matched && p.detected.is_some())
        .collect();
    let labels: Vec<usize> = matched
        .iter()
        .map(|p| p.detected.expect("filtered").index())
        .collect();
    let picked = stratified_sample(&labels, cfg.project.per_class, cfg.project.tsne.seed);
    let stacks: Vec<&StateStack> = picked.iter().map(|&i| &matched[i].stack).collect();
    let state_labels: Vec<usize> = picked.iter().map(|&i| labels[i]).collect();
    let commands: Vec<Vec<usize>> = Goal::ALL
        .iter()
        .map(|g| mem.vocab.tokenize(g.canonical()))
        .collect::<Result<_>>()?;
    let command_refs: Vec<&[usize]> = commands.iter().map(Vec::as_slice).collect();
    let mut points = mem.embed_states(&stacks)?;
    points.extend(mem.embed_commands(&command_refs)?);
    let emb = tsne(&points, &cfg.project.tsne)?;
    let n = stacks.len();
    let command_coords: Vec<(usize, [f64; 2])> = Goal::ALL
        .iter()
        .enumerate()
        .map(|(k, g)| (g.index(), emb.coords[n + k]))
        .collect();
    let report = cluster_report(&emb.coords[..n], &state_labels, &command_coords);
    let mut all_labels = state_labels.clone();
    all_labels.extend(Goal::ALL.iter().map(|g| g.index()));
    let kinds: Vec<&str> = (0..points.len())
        .map(|i| if i < n { "state" } else { "command" })
        .collect();
    let mut text = report.to_text(goal_name);
    let _ = writeln!(
        text,
        "final_kl {}",
        emb.kl.last().copied().unwrap_or(f64::NAN)
    );
    let mut lines = vec![
        format!(
            "mean silhouette {}",
            report
                .mean_silhouette()
                .map_or("n/a".to_string(), |s| format!("{s:.4}"))
        ),
        format!(
            "commands matched {}/{}",
            report.matched(),
            report.commands.len()
        ),
    ];
    if emb.unconverged_rows > 0 {
        let _ = writeln!(text, "unconverged_rows {}", emb.unconverged_rows);
        lines.push(format!(
            "warning: perplexity search did not converge for {} points",
            emb.unconverged_rows
        ));
    }
    let mut dir = RunDir::create(root, PROJECT_DIR)?;
    dir.write(
        "coords.csv",
        coords_csv(&emb.coords, &all_labels, &kinds, goal_name),
    )?;
    dir.write("report.txt", text)?;
    Ok((
        Outcome {
            dir: dir.finish(cfg, None)?,
            lines,
        },
        report,
    ))
}

pub fn agent_dir_name(mode: RewardMode, seed: u64) -> String {
    format!("{AGENT_PREFIX}{}-s{seed}", mode.name())
}

fn narration_script(cfg: &RunConfig, vocab: &Vocabulary) -> Result<NarrationScript> {
    let mut script = if cfg.shape.script.is_empty() {
        NarrationScript::default_script(vocab)?
    } else {
        let text = std::fs::read_to_string(&cfg.shape.script)
            .map_err(|e| Error::Config(format!("cannot read script {}: {e}", cfg.shape.script)))?;
        NarrationScript::parse(&text, vocab)?
    };
    if !(cfg.shape.threshold > 0.0 && cfg.shape.threshold < 1.0 && cfg.shape.r_shape > 0.0) {
        return Err(Error::Config(
            "shape.threshold must lie in (0, 1) and shape.r_shape be positive".into(),
        ));
    }
    script.threshold = cfg.shape.threshold;
    script.r_shape = cfg.shape.r_shape;
    Ok(script)
}

pub fn train_agent_cmd(cfg: &RunConfig, root: &Path) -> Result<Outcome> {
    let rl = cfg.rl_config();
    let needs_mem = rl.mode == RewardMode::MemShaped || rl.share_mem_encoder;
    let mem = if needs_mem {
        Some(Arc::new(load_mem(root)?))
    } else {
        None
    };
    let vocab = mem
        .as_ref()
        .map_or_else(corpus_vocabulary, |m| m.vocab.clone());
    let script = narration_script(cfg, &vocab)?;
    let start = Instant::now();
    let out = train_agent(&rl, &script, mem, |e| {
        if e.episode % 100 == 0 {
            eprintln!(
                "episode {} step {} env_return {} shaped_return {:.2} ({:.0?})",
                e.episode,
                e.step,
                e.env_return,
                e.shaped_return,
                start.elapsed()
            );
        }
    })?;
    let first = out
        .first_marine_episode()
        .map_or("none".to_string(), |e| e.to_string());
    let mut summary = String::new();
    let _ = writeln!(summary, "mode {}", rl.mode.name());
    let _ = writeln!(summary, "update {}", rl.update.name());
    let _ = writeln!(summary, "seed {}", rl.seed);
    let _ = writeln!(summary, "steps {}", out.steps);
    let _ = writeln!(summary, "updates {}", out.updates);
    let _ = writeln!(summary, "episodes {}", out.episodes.len());
    let _ = writeln!(summary, "first_marine_episode {first}");
    let _ = writeln!(summary, "final100_mean {}", out.final_mean(100));
    let mut dir = RunDir::create(root, &agent_dir_name(rl.mode, rl.seed))?;
    dir.write("policy.bin", out.policy.to_container().to_bytes())?;
    dir.write("curves.csv", out.curves_csv())?;
    dir.write("summary.txt", summary)?;
    let note = (rl.update == UpdateMode::Async).then_some("nondeterministic: asynchronous updates");
    let lines = vec![
        format!("{} episodes, {} updates", out.episodes.len(), out.updates),
        format!(
            "first marine episode {first}, final-100 mean marines {:.3}",
            out.final_mean(100)
        ),
    ];
    Ok(Outcome {
        dir: dir.finish(cfg, note)?,
        lines,
    })
}

/// One trained agent as read back by `eval-agent`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    pub dir: String,
    pub mode: RewardMode,
    pub seed: u64,
    pub first_marine_episode: Option<u64>,
    pub final100_mean: f64,
    pub eval_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: RewardMode,
    pub runs: usize,
    /// Median over runs; a run without any marine counts as never.
    pub median_first_marine: Option<f64>,
    pub mean_final100: f64,
    pub mean_eval: f64,
}

fn key_values(text: &str) -> BTreeMap<&str, &str> {
    text.lines()
        .filter_map(|l| l.split_once(' '))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect()
}

fn median_with_never(values: &[Option<u64>]) -> Option<f64> {
    let mut v: Vec<f64> = values
        .iter()
        .map(|x| x.map_or(f64::INFINITY, |e| e as f64))
        .collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    m.is_finite().then_some(m)
}

pub fn eval_agent(cfg: &RunConfig, root: &Path) -> Result<(Outcome, Vec<ModeSummary>)> {
    let mut names: Vec<String> = std::fs::read_dir(root)
        .map_err(|_| Error::MissingArtifact {
            path: root.display().to_string(),
            subcommand: "train-agent".into(),
        })?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with(AGENT_PREFIX))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::MissingArtifact {
            path: root.join(format!("{AGENT_PREFIX}*")).display().to_string(),
            subcommand: "train-agent".into(),
        });
    }
    let mut runs = Vec::new();
    for name in &names {
        let summary = std::fs::read_to_string(require(root, name, "summary.txt", "train-agent")?)?;
        let kv = key_values(&summary);
        let field = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("{name}/summary.txt lacks {k}")))
        };
        let mode: RewardMode = field("mode")?.parse()?;
        let seed = field("seed")?
            .parse()
            .map_err(|_| Error::Format(format!("{name}: bad seed")))?;
        let first_marine_episode = field("first_marine_episode")?.parse().ok();
        let final100_mean = field("final100_mean")?
            .parse()
            .map_err(|_| Error::Format(format!("{name}: bad final100_mean")))?;
        let trained = RunConfig::from_file(&require(root, name, rundir::CONFIG, "train-agent")?)?;
        let policy = Policy::from_container(&Container::load(&require(
            root,
            name,
            "policy.bin",
            "train-agent",
        )?)?)?;
        let scores = evaluate_policy(&policy, &trained.env, cfg.eval.episodes, cfg.eval.seed)?;
        let eval_mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        runs.push(AgentRun {
            dir: name.clone(),
            mode,
            seed,
            first_marine_episode,
            final100_mean,
            eval_mean,
        });
    }
    let mut per_run = String::from("run,mode,seed,first_marine_episode,final100_mean,eval_mean\n");
    for r in &runs {
        let _ = writeln!(
            per_run,
            "{},{},{},{},{},{}",
            r.dir,
            r.mode.name(),
            r.seed,
            r.first_marine_episode
                .map_or("none".to_string(), |e| e.to_string()),
            r.final100_mean,
            r.eval_mean
        );
    }
    let mut modes = Vec::new();
    let mut text = String::from("mode,runs,median_first_marine,mean_final100,mean_eval\n");
    let mut lines = Vec::new();
    for mode in RewardMode::ALL {
        let sel: Vec<&AgentRun> = runs.iter().filter(|r| r.mode == mode).collect();
        if sel.is_empty() {
            continue;
        }
        let k = sel.len() as f64;
        let s = ModeSummary {
            mode,
            runs: sel.len(),
            median_first_marine: median_with_never(
                &sel.iter()
                    .map(|r| r.first_marine_episode)
                    .collect::<Vec<_>>(),
            ),
            mean_final100: sel.iter().map(|r| r.final100_mean).sum::<f64>() / k,
            mean_eval: sel.iter().map(|r| r.eval_mean).sum::<f64>() / k,
        };
        let median = s
            .median_first_marine
            .map_or("never".to_string(), |m| m.to_string());
        let _ = writeln!(
            text,
            "{},{},{median},{},{}",
            mode.name(),
            s.runs,
            s.mean_final100,
            s.mean_eval
        );
        lines.push(format!(
            "{}: {} runs, median first marine episode {median}, final-100 mean {:.3}, eval mean {:.3}",
            mode.name(),
            s.runs,
            s.mean_final100,
            s.mean_eval
        ));
        modes.push(s);
    }
    let mut dir = RunDir::create(root, EVAL_AGENT_DIR)?;
    dir.write("runs.csv", per_run)?;
    dir.write("modes.csv", text)?;
    Ok((
        Outcome {
            dir: dir.finish(cfg, None)?,
            lines,
        },
        modes,
    ))
}

pub fn env_report(cfg: &RunConfig, root: &Path) -> Result<Outcome> {
    let audit = audit_random_episodes(&cfg.env, cfg.audit.episodes, cfg.audit.seed)?;
    let mut text = String::new();
    let _ = writeln!(text, "episodes {}", audit.episodes);
    let _ = writeln!(text, "steps {}", audit.steps);
    let _ = writeln!(text, "marines {}", audit.marines);
    let _ = writeln!(text, "violations {}", audit.violation_count);
    let _ = writeln!(text, "replay_mismatches {}", audit.replay_mismatches);
    for v in &audit.violations {
        let _ = writeln!(text, "violation {v}");
    }
    let mut dir = RunDir::create(root, ENV_REPORT_DIR)?;
    dir.write("rules.txt", cfg.env.rule_report())?;
    dir.write("audit.txt", text)?;
    let lines = vec![format!(
        "{} episodes, {} steps, {} violations, {} replay mismatches",
        audit.episodes, audit.steps, audit.violation_count, audit.replay_mismatches
    )];
    Ok(Outcome {
        dir: dir.finish(cfg, None)?,
        lines,
    })
}

/// The small task used for desk-scale runs.
pub fn desk_env() -> EnvConfig {
    EnvConfig::desk()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_treats_missing_as_never() {
        assert_eq!(median_with_never(&[Some(3), None, Some(1)]), Some(3.0));
        assert_eq!(median_with_never(&[None, None, Some(1)]), None);
        assert_eq!(median_with_never(&[Some(2), Some(4)]), Some(3.0));
    }

    #[test]
    fn flags_override_set_pairs() {
        let cli = Cli::try_parse_from([
            "narrate",
            "--set",
            "data.quota=7",
            "--set",
            "data.seed=3",
            "gen-data",
            "--quota",
            "9",
        ])
        .unwrap();
        let cfg = effective_config(&cli).unwrap();
        assert_eq!((cfg.data.quota, cfg.data.seed), (9, 3));
    }

    #[test]
    fn bad_override_is_config_error() {
        let cli =
            Cli::try_parse_from(["narrate", "--set", "rl.mode=greedy", "env-report"]).unwrap();
        assert_eq!(effective_config(&cli).unwrap_err().category(), "config");
    }
}
