use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use curio_core::harness::{
    ablate, emit, ensure_dir, evaluate, grad_suite, write_ablation, write_training_curve, AblationConfig, EvalConfig,
    EvalRun, FoldResult, VisionStart,
};
use curio_core::nnet::{Checkpoint, SampleMode};
use curio_core::policy::{BaselineConfig, PolicyConfig, PolicyKind, PolicyNet};
use curio_core::scene::{AttributeSchema, Dataset, SceneGenConfig};
use curio_core::trainer::{train_with, Agent, DataConfig, EpisodeConfig};

#[derive(Parser)]
#[command(name = "curio", version, about = "Learning-by-asking laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (gen-dataset) or directory (all other commands).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a scene dataset as JSON.
    GenDataset {
        #[command(flatten)]
        common: Common,
        /// standard, novel, mixed or arid.
        #[arg(long, default_value = "standard")]
        schema: String,
        #[arg(long, default_value_t = 1800)]
        count: usize,
    },
    /// Train the question policy.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides the episode count.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate policies over test folds.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Comma-separated: random, entropy, entropy-context, learned.
        #[arg(long, default_value = "random,entropy,entropy-context")]
        policy: String,
        /// Policy file written by `train` (required for `learned`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Static-vision, partial-vision, question-type and object-count ablations.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "learned")]
        policy: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Policy trained with `static_vision = true` for the static-vision
        /// curve; defaults to `--checkpoint`.
        #[arg(long)]
        static_checkpoint: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    GradCheck {
        #[command(flatten)]
        common: Common,
    },
}

/// Trained policy plus what is needed to rebuild it.
#[derive(Serialize, Deserialize)]
struct PolicyFile {
    num_concepts: usize,
    world_seed: u64,
    config: PolicyConfig,
    params: Checkpoint,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(default)]
struct EvalFile {
    eval: EvalConfig,
    data: DataConfig,
    baseline: BaselineConfig,
    /// train, val, test or all.
    split: Option<String>,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(default)]
struct AblateFile {
    ablation: AblationConfig,
    data: DataConfig,
    baseline: BaselineConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct GradFile {
    seeds: u64,
}

impl Default for GradFile {
    fn default() -> Self {
        Self { seeds: 10 }
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn load_policy(path: &Path) -> Result<(PolicyNet, u64)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: PolicyFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut net = PolicyNet::new(file.num_concepts, file.config, 0);
    net.load_checkpoint(&file.params)?;
    Ok((net, file.world_seed))
}

fn parse_policies(list: &str) -> Result<Vec<PolicyKind>> {
    list.split(',')
        .map(|s| s.trim().parse::<PolicyKind>().map_err(anyhow::Error::msg))
        .collect()
}

fn agent<'a>(kind: PolicyKind, baseline: &'a BaselineConfig, net: Option<&'a PolicyNet>) -> Result<Agent<'a>> {
    Ok(match kind {
        PolicyKind::Random => Agent::Random,
        PolicyKind::Entropy => Agent::Entropy(baseline),
        PolicyKind::EntropyContext => Agent::EntropyContext(baseline),
        PolicyKind::Learned => Agent::Learned {
            net: net.context("policy `learned` needs --checkpoint")?,
            mode: SampleMode::Eval,
        },
    })
}

fn check_concepts(net: Option<&PolicyNet>, schema: &AttributeSchema) -> Result<()> {
    if let Some(n) = net {
        if n.num_concepts() != schema.num_concepts() {
            bail!(
                "policy expects {} concepts but vocabulary `{}` has {}",
                n.num_concepts(),
                schema.name,
                schema.num_concepts()
            );
        }
    }
    Ok(())
}

fn gen_dataset(common: &Common, schema: &str, count: usize) -> Result<()> {
    let gen: SceneGenConfig = read_config(common.config.as_deref())?;
    let schema = AttributeSchema::by_name(schema)?;
    let ds = Dataset::generate(schema, &gen, count, common.seed.unwrap_or(0))?;
    if let Some(parent) = common.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    ds.save(&common.out)?;
    Ok(())
}

fn run_train(common: &Common, episodes: Option<usize>) -> Result<()> {
    let mut cfg: EpisodeConfig = read_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(e) = episodes {
        cfg.episodes = e;
    }
    cfg.validate()?;
    let out = ensure_dir(&common.out)?;
    let data = cfg.data.dataset()?;
    let result = train_with(&cfg, &data, |s| {
        eprintln!(
            "episode {:>4}  reward {:.4}  final recall {:.4}  entropy {:.4}",
            s.episode, s.mean_reward, s.mean_final_recall, s.entropy
        )
    })?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let file = PolicyFile {
        num_concepts: result.net.num_concepts(),
        world_seed: cfg.world_seed,
        config: cfg.policy.clone(),
        params: result.net.to_checkpoint(),
    };
    fs::write(out.join("policy.json"), serde_json::to_string(&file)?)?;
    write_training_curve(&out, &result.curve)?;
    Ok(())
}

fn run_eval(common: &Common, policies: &str, checkpoint: Option<&Path>) -> Result<()> {
    let mut file: EvalFile = read_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        file.eval.seed = s;
    }
    let kinds = parse_policies(policies)?;
    let loaded = checkpoint.map(load_policy).transpose()?;
    if let Some((_, world)) = &loaded {
        file.eval.world_seed = *world;
    }
    let net = loaded.as_ref().map(|(n, _)| n);
    let out = ensure_dir(&common.out)?;
    let data = file.data.dataset()?;
    check_concepts(net, &data.schema)?;
    let (train, val, test) = data.splits();
    let split = file.split.as_deref().unwrap_or("test");
    let scenes = match split {
        "train" => train,
        "val" => val,
        "test" => test,
        "all" => &data.scenes[..],
        other => bail!("unknown split `{other}`"),
    };
    let mut results: Vec<(PolicyKind, Vec<FoldResult>)> = Vec::new();
    for kind in kinds {
        let a = agent(kind, &file.baseline, net)?;
        let folds = evaluate(&a, scenes, &data.schema, &file.eval, &VisionStart::Fresh)?;
        results.push((kind, folds));
    }
    let split_name = format!("{}-{}", data.schema.name, split);
    let runs: Vec<EvalRun<'_>> = results
        .iter()
        .map(|(k, f)| EvalRun {
            policy: k.name(),
            split: &split_name,
            schema: &data.schema,
            folds: f,
        })
        .collect();
    emit(&out, &runs)?;
    for r in &runs {
        eprintln!("{:16} {}  AUC {:.4}", r.policy, r.split, r.mean_auc());
    }
    Ok(())
}

fn run_ablate(common: &Common, policy: &str, checkpoint: Option<&Path>, static_checkpoint: Option<&Path>) -> Result<()> {
    let mut file: AblateFile = read_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        file.ablation.eval.seed = s;
    }
    let kind: PolicyKind = policy.parse().map_err(anyhow::Error::msg)?;
    let loaded = checkpoint.map(load_policy).transpose()?;
    if let Some((_, world)) = &loaded {
        file.ablation.eval.world_seed = *world;
    }
    let net = loaded.as_ref().map(|(n, _)| n);
    let out = ensure_dir(&common.out)?;
    let standard = file.data.dataset()?;
    if standard.schema.name != "standard" {
        bail!("ablations start from the standard vocabulary, got `{}`", standard.schema.name);
    }
    check_concepts(net, &standard.schema)?;
    let mixed = Dataset::generate(
        AttributeSchema::mixed(),
        &file.data.generator,
        file.data.size,
        file.data.seed,
    )?;
    let static_loaded = static_checkpoint.map(load_policy).transpose()?;
    let static_net = static_loaded.as_ref().map(|(n, _)| n).or(net);
    check_concepts(static_net, &standard.schema)?;
    let a = agent(kind, &file.baseline, net)?;
    let s = agent(kind, &file.baseline, static_net)?;
    let report = ablate(&a, &s, standard.splits().2, mixed.splits().2, standard.splits().0, &file.ablation)?;
    write_ablation(&out, &report)?;
    Ok(())
}

fn run_grad_check(common: &Common) -> Result<bool> {
    let file: GradFile = read_config(common.config.as_deref())?;
    let start = common.seed.unwrap_or(0);
    let out = ensure_dir(&common.out)?;
    let checks = grad_suite(start..start + file.seeds);
    let mut w = csv::Writer::from_path(out.join("gradcheck.csv"))?;
    w.write_record(["check", "seed", "max_rel_err", "tolerance", "passed"])?;
    for c in &checks {
        w.write_record([
            c.name.clone(),
            c.seed.to_string(),
            format!("{:e}", c.max_rel_err),
            format!("{:e}", c.tolerance),
            c.passed().to_string(),
        ])?;
    }
    w.flush()?;
    let failed = checks.iter().filter(|c| !c.passed()).count();
    eprintln!("{} checks, {} failed", checks.len(), failed);
    Ok(failed == 0)
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.cmd {
        Cmd::GenDataset { common, schema, count } => gen_dataset(common, schema, *count)?,
        Cmd::Train { common, episodes } => run_train(common, *episodes)?,
        Cmd::Eval {
            common,
            policy,
            checkpoint,
        } => run_eval(common, policy, checkpoint.as_deref())?,
        Cmd::Ablate {
            common,
            policy,
            checkpoint,
            static_checkpoint,
        } => run_ablate(common, policy, checkpoint.as_deref(), static_checkpoint.as_deref())?,
        Cmd::GradCheck { common } => return run_grad_check(common),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
