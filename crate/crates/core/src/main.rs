use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use diskchain::harness::{
    calibrate, convergence_study, emit_calibration, emit_convergence, emit_outputs, load_checkpoints, analyse,
    run_experiment, ExperimentSpec,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "diskchain", version, about = "Hard-disk occupancy simulation and Markov chain surrogate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and analyse a single radius.
    Simulate(Common),
    /// Simulate and analyse every radius in the list, then regress across radii.
    Sweep(Common),
    /// Choose the number of chain states at the first radius.
    CalibrateNs(Common),
    /// Realization-count convergence study at the first radius.
    Converge(Common),
    /// Re-fit from counters saved by a previous run in the output directory.
    Fit(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Disk radius; repeat or comma-separate for sweeps.
    #[arg(long, value_delimiter = ',')]
    radius: Vec<f64>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Number of chain states.
    #[arg(long)]
    ns: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Steps discarded before counting and time averaging.
    #[arg(long)]
    burn_in: Option<usize>,
}

impl Common {
    fn spec(&self) -> anyhow::Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::from_json_file(path)?,
            None => ExperimentSpec::default(),
        };
        if !self.radius.is_empty() {
            spec.radius_list = self.radius.clone();
        }
        if let Some(n) = self.realizations {
            spec.base.realizations = n;
            spec.realization_sweep.retain(|&c| c <= n);
            if spec.realization_sweep.last() != Some(&n) {
                spec.realization_sweep.push(n);
            }
        }
        if let Some(n) = self.steps {
            spec.base.steps = n;
        }
        if let Some(dt) = self.dt {
            spec.base.dt = dt;
        }
        if let Some(ns) = self.ns {
            spec.base.n_states = ns;
        }
        if let Some(seed) = self.seed {
            spec.base.base_seed = seed;
        }
        if let Some(w) = self.workers {
            spec.worker_count = w;
        }
        if let Some(out) = &self.out {
            spec.output_dir = out.clone();
        }
        if let Some(b) = self.burn_in {
            spec.base.burn_in = b;
        }
        if let Some(&r) = spec.radius_list.first() {
            spec.base.radius = r;
        }
        Ok(spec)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let mut spec = c.spec()?;
            spec.radius_list.truncate(1);
            run_experiment(&spec, true)?;
        }
        Command::Sweep(c) => {
            run_experiment(&c.spec()?, true)?;
        }
        Command::CalibrateNs(c) => {
            let spec = c.spec()?;
            let cals = calibrate(&spec)?;
            for cal in &cals {
                println!("{}: n_states = {} (stabilized: {})", cal.kind, cal.chosen, cal.stabilized);
            }
            emit_calibration(&cals, &spec.output_dir)?;
        }
        Command::Converge(c) => {
            let spec = c.spec()?;
            let rows = convergence_study(&spec)?;
            emit_convergence(&rows, &spec.output_dir)?;
        }
        Command::Fit(c) => {
            let spec = c.spec()?;
            let runs = load_checkpoints(&spec, &spec.output_dir).context("loading saved counters")?;
            emit_outputs(&analyse(&spec, runs), &spec.output_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            eprintln!("{}", serde_json::json!({ "error": e.to_string(), "causes": chain }));
            ExitCode::FAILURE
        }
    }
}
