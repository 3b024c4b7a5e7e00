use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cocompress::pipeline::{self, PipelineConfig};
use cocompress::{demo, save_network, Error, UnitKinds};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "cocompress",
    version,
    about = "Joint channel pruning and low-rank decomposition of conv layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic network to --manifest.
    DemoGen(Opts),
    /// Build and fit per-layer sensitivity curves.
    Sensitivity(Opts),
    /// Allocate per-layer rates from the sensitivity summary.
    Plan(Opts),
    /// Compress every layer to its planned rate.
    Compress(Opts),
    /// Rebuild the report from the compressed manifest.
    Report(Opts),
    /// Run sensitivity, plan, compress and report in sequence.
    Run(Opts),
}

#[derive(Args, Debug)]
struct Opts {
    /// Network manifest (JSON).
    #[arg(long, default_value = "manifest.json")]
    manifest: PathBuf,
    /// Output directory shared by all stages.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Network-wide FLOPs reduction target.
    #[arg(long, default_value_t = 0.5)]
    target_rate: f64,
    /// Weight of the remaining-space term in unit importance.
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Fraction of units removed between rescoring rounds.
    #[arg(long = "interval-frac", default_value_t = 0.01)]
    interval_frac: f64,
    /// Planner step size.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Planner stops once the squared FLOPs error falls below this.
    #[arg(long, default_value_t = 1e4)]
    stop_threshold: f64,
    /// Upper clamp on any single layer's rate.
    #[arg(long, default_value_t = 0.95)]
    r_max: f64,
    /// Only prune input channels.
    #[arg(long, conflicts_with = "decompose_only")]
    pruning_only: bool,
    /// Only remove singular values.
    #[arg(long)]
    decompose_only: bool,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Seed for demo generation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Opts {
    fn config(&self) -> PipelineConfig {
        let kinds = if self.pruning_only {
            UnitKinds::ChannelsOnly
        } else if self.decompose_only {
            UnitKinds::SingularValuesOnly
        } else {
            UnitKinds::Both
        };
        PipelineConfig {
            manifest: self.manifest.clone(),
            out_dir: self.out.clone(),
            target_rate: self.target_rate,
            gamma: self.gamma,
            interval_fraction: self.interval_frac,
            eta: self.eta,
            stop_threshold: self.stop_threshold,
            r_max: self.r_max,
            kinds,
            use_fast_metric: true,
            seed: self.seed,
            workers: self.workers,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn sensitivity(cfg: &PipelineConfig) -> Result<(), u8> {
    let outcome = pipeline::run_sensitivity(cfg).map_err(report)?;
    for (name, curve) in &outcome.curves {
        println!(
            "{name}: a={:.6e} b={:.6} R2={:.6}",
            curve.a, curve.b, curve.r_squared
        );
    }
    if outcome.failures.is_empty() {
        return Ok(());
    }
    let mut code = EXIT_NUMERICAL;
    for (name, e) in &outcome.failures {
        eprintln!("error: layer `{name}`: {e}");
        if !e.is_numerical() {
            code = EXIT_DATA;
        }
    }
    Err(code)
}

fn plan(cfg: &PipelineConfig) -> Result<(), u8> {
    let plan = pipeline::run_plan(cfg).map_err(report)?;
    for l in &plan.layers {
        println!(
            "{}: R={:.6}{}{}",
            l.name,
            l.r_target,
            if l.clamped { " (clamped)" } else { "" },
            if l.fallback { " (global rate)" } else { "" }
        );
    }
    println!(
        "sum F*R = {:.1}  C*F = {:.1}  iterations = {}",
        plan.achieved_flops_sum, plan.target_flops, plan.iterations
    );
    Ok(())
}

fn compress(cfg: &PipelineConfig) -> Result<(), u8> {
    let report = pipeline::run_compress(cfg).map_err(report)?;
    print!("{}", report.table());
    Ok(())
}

fn report_stage(cfg: &PipelineConfig) -> Result<(), u8> {
    let report = pipeline::run_report(cfg).map_err(report)?;
    print!("{}", report.table());
    Ok(())
}

fn report(e: Error) -> u8 {
    eprintln!("error: {e}");
    exit_code(&e)
}

fn run(command: Command) -> Result<(), u8> {
    match command {
        Command::DemoGen(o) => {
            let bundle = demo::demo_network(o.seed);
            save_network(&bundle, &o.manifest).map_err(report)?;
            println!("wrote {}", o.manifest.display());
            Ok(())
        }
        Command::Sensitivity(o) => sensitivity(&o.config()),
        Command::Plan(o) => plan(&o.config()),
        Command::Compress(o) => compress(&o.config()),
        Command::Report(o) => report_stage(&o.config()),
        Command::Run(o) => {
            let cfg = o.config();
            sensitivity(&cfg)?;
            plan(&cfg)?;
            compress(&cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
