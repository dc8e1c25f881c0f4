use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use minattn::config::{parse_seeds, Overrides};
use minattn::runner;
use minattn::{Error, ExperimentConfig, Result};

#[derive(Debug, Parser)]
#[command(name = "minattn", version, about = "Ensemble model-based meta-RL with a minimum-attention regularizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Meta-train every seed.
    Train(Common),
    /// Meta-train (or resume), then adapt to the held-out tasks.
    MetaTest(Common),
    /// Train one arm per value of the configured ablation axis.
    Ablate(Common),
    /// Meta-train (or resume), then write attention heatmaps.
    Heatmap(Common),
    /// Rebuild learning curves from an output directory.
    Curves {
        /// Output directory of a finished run; defaults to the config's.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write only the CSV.
        #[arg(long)]
        no_svg: bool,
    },
    /// Parse and validate a configuration, then print it with every default.
    ValidateConfig(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list such as `0,1,2` or `0-9`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Regularization weight.
    #[arg(long)]
    alpha: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let seeds = match (&self.seed, &self.seeds) {
            (Some(s), _) => Some(vec![*s]),
            (None, Some(text)) => Some(parse_seeds(text)?),
            (None, None) => None,
        };
        let o = Overrides {
            seeds,
            out: self.out.clone(),
            alpha: self.alpha,
        };
        ExperimentConfig::load(&self.config, &o)
    }
}

fn report_failures(set: &runner::RunSet) {
    for (seed, r) in &set.runs {
        if let Err(e) = r {
            eprintln!("seed {seed} failed: {e}");
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.load()?;
            let set = runner::train(&cfg)?;
            report_failures(&set);
            let s = set.summary();
            match &s.final_metrics {
                Some(m) => println!(
                    "{} seeds, epoch {}: return {:.3} +- {:.3}, feedback {:.5} +- {:.5}",
                    m.seeds, s.epochs, m.total_reward.mean, m.total_reward.std, m.feedback.mean, m.feedback.std
                ),
                None => println!("nothing trained (0 epochs)"),
            }
            println!("wrote {}", cfg.output.dir.display());
        }
        Command::MetaTest(c) => {
            let cfg = c.load()?;
            for r in runner::meta_test_all(&cfg)? {
                println!("seed {} {}: {:.3} -> {:.3}", r.seed, r.task, r.pre_return, r.post_return);
            }
            println!("wrote {}", cfg.output.dir.join("metatest.csv").display());
        }
        Command::Ablate(c) => {
            let cfg = c.load()?;
            for r in runner::ablate(&cfg)? {
                println!(
                    "{}={}: return {:.3} +- {:.3}, feedback {:.5}, lower feedback than first arm in {}/{}",
                    r.axis, r.value, r.total_reward_mean, r.total_reward_std, r.feedback_mean,
                    r.lower_feedback_than_first, r.paired_seeds
                );
            }
            println!("wrote {}", cfg.output.dir.join("comparison.csv").display());
        }
        Command::Heatmap(c) => {
            let cfg = c.load()?;
            for (seed, g) in runner::heatmaps(&cfg)? {
                let (lo, hi) = g.value_range().unwrap_or((f64::NAN, f64::NAN));
                println!("seed {seed}: range [{lo:.5}, {hi:.5}]");
            }
        }
        Command::Curves { out, config, no_svg } => {
            let dir = match (out, config) {
                (Some(d), _) => d,
                (None, Some(p)) => ExperimentConfig::load(&p, &Overrides::default())?.output.dir,
                (None, None) => return Err(Error::Config("curves needs --out or --config".into())),
            };
            let rows = runner::curves_from_dir(&dir, !no_svg)?;
            println!("{} curve points, wrote {}", rows.len(), dir.join("curves.csv").display());
        }
        Command::ValidateConfig(c) => {
            let cfg = c.load()?;
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
