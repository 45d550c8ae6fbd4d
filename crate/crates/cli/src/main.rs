//! `jmls`: simulate, identify and evaluate jump Markov linear systems.

mod config;

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jmls_core::experiments::{match_modes, run_experiment, Example, ExperimentConfig};
use jmls_core::io::{
    load_checkpoint, load_dataset, load_model, save_checkpoint, save_dataset, save_model,
    write_chain_trace, write_mode_marginals, IterateLog,
};
use jmls_core::model::generate_input;
use jmls_core::psaem::{resume_psaem, PsaemState};
use jmls_core::{mcmc_smoother, mode_indicator, simulate, PsaemConfig, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use config::{load_overlay, RunConfig};

#[derive(Parser)]
#[command(
    name = "jmls",
    version,
    about = "Identification of jump Markov linear systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from a model.
    Simulate(SimulateArgs),
    /// Estimate parameters from a dataset.
    Identify(IdentifyArgs),
    /// Posterior mode marginals under a fixed model.
    Smooth(SmoothArgs),
    /// H2 error between two models after mode matching.
    EvalH2(EvalArgs),
    /// Randomized replication of the scalar two-mode example.
    Example1(ExampleArgs),
    /// Randomized replication of the two-state three-mode example.
    Example2(ExampleArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output dataset CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "length")]
    t_len: Option<usize>,
    /// Also write the latent modes as `t,s_t`.
    #[arg(long)]
    modes_out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct IdentifyArgs {
    #[arg(long)]
    data: PathBuf,
    /// Initial parameters `θ₀`.
    #[arg(long, required_unless_present = "resume")]
    init: Option<PathBuf>,
    /// Continue from a checkpoint instead of `--init`.
    #[arg(long, conflicts_with = "init")]
    resume: Option<PathBuf>,
    /// True parameters, enabling H2 columns in the iterate log.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value = "out/identify")]
    out_dir: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SmoothArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV `t,p_mode1..p_modeK`.
    #[arg(long)]
    out: PathBuf,
    /// Optional chain trace `iter,t,s_t`.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    estimate: PathBuf,
}

#[derive(Args)]
struct ExampleArgs {
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Use the long data lengths (T=3000 for example1, T=8000 for example2).
    #[arg(long)]
    full_scale: bool,
    #[command(flatten)]
    common: Common,
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = load_overlay(RunConfig::default(), common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let cfg = run_config(&args.common)?;
    let model = load_model(&args.model)?;
    let t_len = args.t_len.unwrap_or(cfg.t_len);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let u = generate_input(t_len, model.dims.n_u, cfg.input_pole, &mut rng)?;
    let (data, traj) = simulate(&model, &u, &mut rng)?;
    save_dataset(&args.out, &data)?;
    if let Some(path) = args.modes_out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "s_t"])?;
        for (t, s) in traj.s.iter().enumerate() {
            w.write_record(&[(t + 1).to_string(), (s + 1).to_string()])?;
        }
        w.flush()?;
    }
    eprintln!("wrote {} samples to {}", t_len, args.out.display());
    Ok(())
}

fn cmd_identify(args: IdentifyArgs) -> Result<()> {
    let cfg = run_config(&args.common)?;
    let data = load_dataset(&args.data)?;
    let truth = args.truth.as_deref().map(load_model).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let state = match (&args.resume, &args.init) {
        (Some(path), _) => load_checkpoint(path)?,
        (None, Some(path)) => PsaemState::init(load_model(path)?, data.len(), &mut rng)?,
        (None, None) => unreachable!("clap requires --init or --resume"),
    };
    let start = state.iteration;
    let psaem_cfg = PsaemConfig {
        n_particles: args.particles.unwrap_or(cfg.n_particles),
        n_iters: start + args.iters.unwrap_or(cfg.n_iters),
        schedule: cfg.schedule,
        divisor: cfg.divisor,
        history_cap: 0,
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let log_path = args.out_dir.join("iterates.csv");
    let mut log = IterateLog::new(BufWriter::new(File::create(&log_path)?), truth)?;
    let mut last_k = start;
    let mut log_err = None;
    let result = resume_psaem(state, &data, &psaem_cfg, &mut rng, &mut |rep| {
        last_k = rep.k;
        if log_err.is_none() {
            if let Err(e) = log.record(rep) {
                log_err = Some(e);
            }
        }
    });
    log.finish()?;
    if let Some(e) = log_err {
        return Err(e);
    }
    let state = result.inspect_err(|_| {
        eprintln!(
            "failed during iteration {} (last completed {last_k})",
            last_k + 1
        );
    })?;
    save_checkpoint(&args.out_dir.join("checkpoint.json"), &state)?;
    save_model(&args.out_dir.join("estimate.json"), &state.theta)?;
    eprintln!(
        "completed {} iterations; results in {}",
        state.iteration,
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_smooth(args: SmoothArgs) -> Result<()> {
    let cfg = run_config(&args.common)?;
    let model = load_model(&args.model)?;
    let data = load_dataset(&args.data)?;
    data.check_dims(&model.dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_iters = args.iters.unwrap_or(cfg.n_iters);
    let burn_in = args.burn_in.unwrap_or(cfg.burn_in);
    let out = mcmc_smoother(
        &model,
        &data,
        args.particles.unwrap_or(cfg.n_particles),
        n_iters,
        burn_in,
        &mut rng,
        mode_indicator(model.dims.k),
    )?;
    write_mode_marginals(
        BufWriter::new(File::create(&args.out)?),
        &out.average,
        model.dims.k,
    )?;
    if let Some(path) = args.trace {
        write_chain_trace(BufWriter::new(File::create(path)?), &out.chain)?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let truth = load_model(&args.truth)?;
    let est = load_model(&args.estimate)?;
    let report = match_modes(&truth, &est)?;
    let one_based = serde_json::json!({
        "per_mode": report.per_mode.iter().map(|e| if e.is_finite() { serde_json::json!(e) } else { serde_json::json!("inf") }).collect::<Vec<_>>(),
        "mean": if report.mean.is_finite() { serde_json::json!(report.mean) } else { serde_json::json!("inf") },
        "permutation": report.permutation.iter().map(|m| m + 1).collect::<Vec<_>>(),
        "n_unstable": report.n_unstable,
    });
    println!("{}", serde_json::to_string_pretty(&one_based)?);
    Ok(())
}

fn cmd_example(example: Example, args: ExampleArgs) -> Result<()> {
    let mut base = ExperimentConfig::for_example(example);
    if args.full_scale {
        base = base.full_scale();
    }
    let mut cfg = load_overlay(base, args.common.config.as_deref())?;
    if let Some(v) = args.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.particles {
        cfg.n_particles = v;
    }
    if let Some(v) = args.iters {
        cfg.n_iters = v;
    }
    if let Some(v) = args.repeats {
        cfg.n_repeats = v;
    }
    if let Some(v) = args.out_dir {
        cfg.out_dir = v;
    }
    let summary = run_experiment(&cfg)?;
    for r in &summary.repeats {
        println!(
            "repeat {}: mean H2 initial {:.4}, iterate 1 {:.4}, iterate {} {:.4}",
            r.repeat + 1,
            r.initial.mean,
            r.first_iterate(),
            cfg.n_iters,
            r.final_iterate()
        );
    }
    println!("results in {}", cfg.out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Identify(a) => cmd_identify(a),
        Command::Smooth(a) => cmd_smooth(a),
        Command::EvalH2(a) => cmd_eval(a),
        Command::Example1(a) => cmd_example(Example::Example1, a),
        Command::Example2(a) => cmd_example(Example::Example2, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
