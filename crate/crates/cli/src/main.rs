//! Command-line driver: synthesize cities, build task graphs, meta-train,
//! adapt to the held-out city, evaluate and plot.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use stormgan::protocol::{GraphChoice, Method};
use stormgan::synthcity::SizeClass;
use stormgan::ExecMode;

use crate::commands::Ctx;
use crate::config::Overrides;

#[derive(Parser)]
#[command(name = "stormgan", version, about = "Cross-city mobility estimation experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Training seed, or the world seed for `synth`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root directory of all artifacts.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Task graph: s1, s2 or none.
    #[arg(long, global = true)]
    scenario: Option<GraphChoice>,
    /// Held-out city
    #[arg(long, global = true)]
    test_city: Option<String>,
    /// Meta-training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic cities with known mobility coefficients.
    Synth {
        /// Size classes of the task cities, comma separated.
        #[arg(long, value_delimiter = ',')]
        cities: Option<Vec<SizeClass>>,
        /// Extra graph-only cities without rasters.
        #[arg(long)]
        context_cities: Option<usize>,
        /// Disable observation noise.
        #[arg(long)]
        no_noise: bool,
    },
    /// Build the city task graph from the synthesized tables.
    BuildGraph,
    /// Meta-train the generator and discriminator.
    Train,
    /// Adapt the meta-trained generator to the held-out city.
    Adapt,
    /// Estimate the evaluation week and score every method.
    Eval {
        /// Methods, comma separated; all by default.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
    },
    /// Heat-map panels and the KL curve of the last evaluation.
    Plot,
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let mut cfg = config::load(c.config.as_deref())?;
    let is_synth = matches!(cli.cmd, Cmd::Synth { .. });
    Overrides {
        seed: c.seed.filter(|_| !is_synth),
        scenario: c.scenario,
        test_city: c.test_city.clone(),
        epochs: c.epochs,
    }
    .apply(&mut cfg);
    let mode = if c.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    if let Cmd::Synth { cities, context_cities, no_noise } = &cli.cmd {
        if let Some(s) = c.seed {
            cfg.world.seed = s;
        }
        if let Some(v) = cities {
            cfg.world.task_cities = v.clone();
        }
        if let Some(n) = context_cities {
            cfg.world.context_cities = *n;
        }
        if *no_noise {
            cfg.world.synth.noise_sd = 0.0;
        }
    }
    let ctx = Ctx { cfg, out: c.out.clone(), mode };
    match &cli.cmd {
        Cmd::Synth { .. } => commands::synth(&ctx),
        Cmd::BuildGraph => commands::build_graph(&ctx),
        Cmd::Train => commands::train(&ctx),
        Cmd::Adapt => commands::adapt(&ctx),
        Cmd::Eval { methods } => {
            let mut ms = methods.clone().unwrap_or_else(|| Method::ALL.to_vec());
            let mut seen = Vec::new();
            ms.retain(|m| if seen.contains(m) { false } else { seen.push(*m); true });
            commands::eval(&ctx, &ms)
        }
        Cmd::Plot => commands::plot(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
