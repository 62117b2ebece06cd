use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mention_atlas::guidance::ReferenceStrategy;
use mention_atlas::metrics::SinglesMode;
use mention_atlas::ontology::ConceptId;
use mention_atlas::pipeline::{self, EpsSweep, PipelineConfig, PipelineError};
use mention_atlas::synth::SynthConfig;

const THREADS_VAR: &str = "MENTION_ATLAS_THREADS";

#[derive(Parser)]
#[command(
    name = "mention-atlas",
    version,
    about = "Guide reuse of phenotype NLP models on new tasks"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Single-threaded training with reproducible output.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    ontology: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct Space {
    /// Context half-window around each mention.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    min_pts: Option<usize>,
}

#[derive(Args)]
struct GuideArgs {
    #[arg(long)]
    target: Option<ConceptId>,
    #[arg(long)]
    eps: Option<f64>,
    /// Pick eps at this quantile of the core distances.
    #[arg(long, conflicts_with = "eps")]
    eps_quantile: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    #[arg(long)]
    e: Option<usize>,
    #[arg(long, value_enum)]
    reference_strategy: Option<RefArg>,
    #[arg(long, value_enum)]
    singles: Option<SinglesArg>,
    /// Only the target concept's annotations form the task.
    #[arg(long)]
    only_target: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefArg {
    AverageContexts,
    PositiveOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum SinglesArg {
    Pooled,
    Individual,
}

#[derive(Subcommand)]
enum Command {
    /// Train mark-up embeddings on an annotated corpus.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Subtract the mean vector after training.
        #[arg(long)]
        center_vectors: bool,
    },
    /// Partition a new task's mentions into p-known and p-unknown.
    Guide {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        space: Space,
        #[command(flatten)]
        guide: GuideArgs,
    },
    /// Separate Power across eps values.
    SweepEps {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        space: Space,
        /// Comma-separated eps values.
        #[arg(long, value_delimiter = ',', conflicts_with = "grid")]
        eps: Vec<f64>,
        /// Number of eps values spread over core-distance quantiles.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Waste and accuracy across similarity thresholds.
    SweepThreshold {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        space: Space,
        #[command(flatten)]
        guide: GuideArgs,
        /// Comma-separated thresholds in [-1, 1].
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            required = true
        )]
        thresholds: Vec<f64>,
    },
    /// Generate a labelled synthetic corpus.
    Synth {
        /// Built-in generator config: eps-sweep, reuse or compare-refs.
        #[arg(long, conflicts_with = "synth_config")]
        preset: Option<String>,
        /// Generator config JSON.
        #[arg(long)]
        synth_config: Option<PathBuf>,
        /// Also write source/ and target/ splits with this source share.
        #[arg(long)]
        split: Option<f64>,
    },
    /// Compare reference phenotypes on the same task.
    CompareRefs {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        space: Space,
        #[command(flatten)]
        guide: GuideArgs,
        /// Comma-separated candidate concepts.
        #[arg(long, value_delimiter = ',', required = true)]
        candidates: Vec<ConceptId>,
    },
}

impl Inputs {
    fn apply(self, cfg: &mut PipelineConfig) {
        cfg.corpus = self.corpus.or(cfg.corpus.take());
        cfg.annotations = self.annotations.or(cfg.annotations.take());
        cfg.ontology = self.ontology.or(cfg.ontology.take());
        cfg.model = self.model.or(cfg.model.take());
    }
}

impl Space {
    fn apply(self, cfg: &mut PipelineConfig) {
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(m) = self.min_pts {
            cfg.min_pts = m;
        }
    }
}

impl GuideArgs {
    fn apply(self, cfg: &mut PipelineConfig) {
        if let Some(t) = self.target {
            cfg.target_concept = Some(t);
        }
        if let Some(eps) = self.eps {
            cfg.eps = eps;
            cfg.eps_quantile = None;
        }
        if let Some(q) = self.eps_quantile {
            cfg.eps_quantile = Some(q);
        }
        if let Some(t) = self.threshold {
            cfg.similarity_threshold = t;
        }
        if let Some(e) = self.e {
            cfg.e = e;
        }
        if let Some(r) = self.reference_strategy {
            cfg.reference_strategy = match r {
                RefArg::AverageContexts => ReferenceStrategy::AverageContexts,
                RefArg::PositiveOnly => ReferenceStrategy::PositiveOnly,
            };
        }
        if let Some(s) = self.singles {
            cfg.singles_mode = match s {
                SinglesArg::Pooled => SinglesMode::Pooled,
                SinglesArg::Individual => SinglesMode::Individual,
            };
        }
        cfg.only_target_mentions |= self.only_target;
    }
}

fn threads() -> Option<usize> {
    std::env::var(THREADS_VAR)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n| n > 0)
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("summaries serialize")
    );
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.common.out_dir {
        cfg.out_dir = dir;
    }
    cfg.deterministic |= cli.common.deterministic;
    let workers = threads().unwrap_or_else(rayon::current_num_threads);
    cfg.workers = workers;

    match cli.command {
        Command::Train {
            inputs,
            dim,
            epochs,
            center_vectors,
        } => {
            inputs.apply(&mut cfg);
            cfg.train.center_vectors |= center_vectors;
            if let Some(d) = dim {
                cfg.train.dim = d;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let summary = pipeline::cmd_train(&cfg)?;
            println!("model: {}", summary.model.display());
            println!("vocab size: {}", summary.vocab_size);
            println!("dim: {}", summary.dim);
            let phenotypes: Vec<String> = summary
                .trained_phenotypes
                .iter()
                .map(|c| c.to_string())
                .collect();
            println!("phenotypes: {}", phenotypes.join(","));
        }
        Command::Guide {
            inputs,
            space,
            guide,
        } => {
            inputs.apply(&mut cfg);
            space.apply(&mut cfg);
            guide.apply(&mut cfg);
            print_json(&pipeline::cmd_guide(&cfg)?);
        }
        Command::SweepEps {
            inputs,
            space,
            eps,
            grid,
            trials,
        } => {
            inputs.apply(&mut cfg);
            space.apply(&mut cfg);
            if let Some(t) = trials {
                cfg.random_trials = t;
            }
            let sweep = match grid {
                Some(n) => EpsSweep::Grid(n),
                None => EpsSweep::List(eps),
            };
            let rows = pipeline::cmd_sweep_eps(&cfg, &sweep)?;
            println!(
                "{} rows -> {}",
                rows.len(),
                cfg.out_dir.join(pipeline::SWEEP_EPS_FILE).display()
            );
        }
        Command::SweepThreshold {
            inputs,
            space,
            guide,
            thresholds,
        } => {
            inputs.apply(&mut cfg);
            space.apply(&mut cfg);
            guide.apply(&mut cfg);
            let rows = pipeline::cmd_sweep_threshold(&cfg, &thresholds)?;
            println!(
                "{} rows -> {}",
                rows.len(),
                cfg.out_dir.join(pipeline::SWEEP_THRESHOLD_FILE).display()
            );
        }
        Command::Synth {
            preset,
            synth_config,
            split,
        } => {
            let mut synth = match (preset, synth_config) {
                (Some(name), _) => SynthConfig::preset(&name)?,
                (None, Some(path)) => SynthConfig::load(path)?,
                (None, None) => return Err(PipelineError::Unset("synth preset or config")),
            };
            if let Some(seed) = cli.common.seed {
                synth.seed = seed;
            }
            print_json(&pipeline::cmd_synth(&synth, &cfg.out_dir, split)?);
        }
        Command::CompareRefs {
            inputs,
            space,
            guide,
            candidates,
        } => {
            inputs.apply(&mut cfg);
            space.apply(&mut cfg);
            guide.apply(&mut cfg);
            print_json(&pipeline::cmd_compare_refs(&cfg, &candidates)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = threads() {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global pool is built once");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
