use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use subnet_tda::experiment::{verify, ExperimentConfig, Pipeline, Policy, Variant, Workspace, FIGURE_DIRS};
use subnet_tda::model::LanguageId;
use subnet_tda::{Error, Result};

#[derive(Parser)]
#[command(name = "subnet-tda", version, about = "Language subnetworks, sparse fine-tuning and sketched TracIn")]
struct Cli {
    /// Config file, or the name of a bundled config (ci-scale, ci-scale-graded, paper-scale).
    #[arg(long, global = true, default_value = "ci-scale")]
    config: String,
    /// Artifact directory; defaults to the config's out_dir or runs/<name>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the corpus, model and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Recompute stages whose recorded inputs no longer match.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Sft,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multilingual corpus.
    GenData,
    /// Fine-tune fully, or sparsely with the identified (or shuffled) masks.
    Train {
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        /// For sft: `sft` or `sft-random-<seed>`; all configured runs if omitted.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Identify a language's subnetwork by iterative head pruning.
    Prune {
        /// Language name or index; every language if omitted.
        #[arg(long)]
        language: Option<String>,
    },
    /// Compute influence rankings for a variant.
    Influence {
        /// Variant name (full, subnet, random-<s>, mask-of-<L>, composed-<op>-<A>+<B>, sft, sft-random-<s>); all if omitted.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Build the report bundle from existing rankings.
    Analyze,
    /// Run the gradient, sketch, mask and matrix self-checks.
    Verify,
    /// Run every missing stage, then build the report bundle.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn pipeline(cfg: ExperimentConfig, force: bool, policy: Policy) -> Result<Pipeline> {
    let ws = Workspace::new(cfg.output_dir(), cfg.hash(), force)?;
    Pipeline::new(cfg, Some(ws), policy)
}

fn language(cfg: &ExperimentConfig, s: &str) -> Result<LanguageId> {
    match s.parse::<usize>() {
        Ok(i) if i < cfg.corpus.languages.len() => Ok(LanguageId(i as u16)),
        Ok(i) => Err(Error::Lookup(format!("language index {i} out of range"))),
        Err(_) => cfg.corpus.language_id(s),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if let Command::Verify = cli.command {
        let report = verify::run(&cfg);
        for c in &report.checks {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        return if report.passed() { Ok(()) } else { Err(Error::contract("verification failed")) };
    }
    let out = cfg.output_dir();
    let (policy, cfg) = match &cli.command {
        Command::GenData => (Policy::Only("data".into()), cfg),
        Command::Train { mode: Mode::Full, .. } => (Policy::Only("train/full".into()), cfg),
        Command::Train { mode: Mode::Sft, variant } => {
            let prefix = match variant {
                Some(v) => match v.parse::<Variant>()? {
                    Variant::Sft | Variant::SftRandom(_) => format!("train/{v}"),
                    _ => return Err(Error::config(format!("{v} is not a sparse fine-tuning run"))),
                },
                None => "train/sft".into(),
            };
            (Policy::Only(prefix), cfg)
        }
        Command::Prune { language: Some(l) } => {
            let id = language(&cfg, l)?;
            (Policy::Only(format!("prune/{}", cfg.corpus.languages[id.index()].name)), cfg)
        }
        Command::Prune { language: None } => (Policy::Only("prune/".into()), cfg),
        Command::Influence { variant: Some(v) } => (Policy::Only(format!("influence/{v}")), cfg),
        Command::Influence { variant: None } => (Policy::Only("influence/".into()), cfg),
        Command::Analyze => (Policy::Only("report".into()), cfg),
        Command::Report => (Policy::Auto, cfg),
        Command::Verify => unreachable!(),
    };
    let p = pipeline(cfg, cli.force, policy)?;
    let _lock = p.workspace().expect("workspace").lock()?;
    match cli.command {
        Command::GenData => {
            let d = p.data()?;
            println!("corpus: {} train, {} dev, {} test examples in {}", d.train.len(), d.dev.len(), d.test.len(), out.display());
        }
        Command::Train { mode: Mode::Full, .. } => {
            let s = p.full_model()?;
            println!("full fine-tuning: {} epochs, dev accuracy {:?}", s.len(), s.last().expect("trained").dev_accuracy);
        }
        Command::Train { mode: Mode::Sft, variant } => {
            let runs: Vec<Option<u64>> = match variant.map(|v| v.parse::<Variant>()).transpose()? {
                Some(Variant::SftRandom(s)) => vec![Some(s)],
                Some(_) => vec![None],
                None => {
                    let mut r = vec![None];
                    if p.config().variants.sft_random {
                        r.extend(p.config().variants.random_seeds.iter().map(|&s| Some(s)));
                    }
                    r
                }
            };
            for r in runs {
                let s = p.sft_model(r)?;
                let label = r.map(|s| format!("sft-random-{s}")).unwrap_or_else(|| "sft".into());
                println!("{label}: {} epochs, dev accuracy {:?}", s.len(), s.last().expect("trained").dev_accuracy);
            }
        }
        Command::Prune { language: Some(l) } => {
            let id = language(p.config(), &l)?;
            let t = p.trace(id)?;
            let m = &p.config().model;
            let mask = t.selected_mask(m.num_layers, m.heads_per_layer);
            println!("{l}: {} of {} heads kept, stop reason {:?}", mask.enabled_count(), mask.len(), t.stop_reason);
        }
        Command::Prune { language: None } => {
            let names = p.languages();
            for (name, mask) in names.iter().zip(p.masks()?) {
                println!("{name}: {} of {} heads kept", mask.enabled_count(), mask.len());
            }
        }
        Command::Influence { variant } => {
            let variants = match variant {
                Some(v) => vec![v.parse::<Variant>()?],
                None => p.config().variants(),
            };
            for v in variants {
                let r = p.rankings(&v)?;
                println!("{v}: rankings for {} eligible test examples", r.eligible.len());
            }
        }
        Command::Analyze | Command::Report => {
            let report = p.write_report()?;
            let s = &report.summary;
            println!("report written to {}", out.join("report").display());
            for d in FIGURE_DIRS {
                println!("  {d}/");
            }
            println!("subnetwork diagonal delta: {:?}", s.subnet_diagonal);
            println!("mask similarity vs influence r: {:?}", s.similarity_vs_influence.r);
        }
        Command::Verify => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
