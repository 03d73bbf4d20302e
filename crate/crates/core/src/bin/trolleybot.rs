use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use trolleybot::harness::{
    emit_batch, emit_logs, emit_mission, run_approach_trial, run_batch, run_full_mission, sample_initial_poses,
    trial_seed, BatchSummary, ControllerChoice, HarnessError, ScenarioConfig,
};
use trolleybot::selftest;

#[derive(Parser)]
#[command(name = "trolleybot", version, about = "Trolley collection simulator and controller benchmark")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// One approach trial from the first sampled start pose.
    Run(Common),
    /// Controller comparison over shared start poses.
    Batch(Common),
    /// The full multi-trolley collection mission.
    Mission(Common),
    /// Run every acceptance check; exits with 2 if any fails.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario JSON; built-in defaults when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_enum)]
    controller: Option<ControllerArg>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Clfcbf,
    Mpc,
    Nonlinear,
}

impl From<ControllerArg> for ControllerChoice {
    fn from(c: ControllerArg) -> Self {
        match c {
            ControllerArg::Clfcbf => ControllerChoice::Clfcbf,
            ControllerArg::Mpc => ControllerChoice::Mpc,
            ControllerArg::Nonlinear => ControllerChoice::Nonlinear,
        }
    }
}

fn load(path: Option<&Path>, fallback: impl FnOnce() -> Result<ScenarioConfig, HarnessError>) -> Result<ScenarioConfig, HarnessError> {
    match path {
        Some(p) => ScenarioConfig::load(p),
        None => fallback(),
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn print_summary(summary: &[BatchSummary], runs: usize) {
    println!(
        "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "controller", "success", "ex_av", "ex_std", "ey_av", "ey_std", "eth_av", "eth_std"
    );
    for s in summary {
        println!(
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            s.controller.as_str(),
            format!("{}/{runs}", s.success),
            opt(s.ex_mean, 2),
            opt(s.ex_std, 2),
            opt(s.ey_mean, 2),
            opt(s.ey_std, 2),
            opt(s.eth_mean, 2),
            opt(s.eth_std, 2),
        );
    }
    println!("hardware reference (not a target): ours success 30, e_x 2.08 +- 0.96 mm, e_y 9.33 +- 10.51 mm, e_theta 2.12 +- 1.55 deg");
}

fn run(args: Common) -> Result<(), HarnessError> {
    let mut cfg = load(args.scenario.as_deref(), || Ok(ScenarioConfig::default()))?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let choice = args.controller.map_or(cfg.controller, Into::into);
    cfg.controller = choice;
    let start = sample_initial_poses(&cfg, 1, seed)[0];
    let result = run_approach_trial(&cfg, choice, &start, trial_seed(seed, 0))?;
    emit_logs(&result, &args.out, &format!("{choice}_run"))?;
    println!(
        "{choice} from ({:.3}, {:.3}, {:.1} deg): {}",
        start.x,
        start.y,
        start.theta.to_degrees(),
        if result.success { "success" } else { "failure" }
    );
    match (result.e_x, result.e_y, result.e_theta) {
        (Some(x), Some(y), Some(t)) => println!("e_x {x:.2} mm, e_y {y:.2} mm, e_theta {t:.2} deg"),
        _ => println!("reason: {}", result.failure.as_deref().unwrap_or("unknown")),
    }
    println!("{:.2} s simulated, {} steps, logs in {}", result.duration, result.steps.len(), args.out.display());
    Ok(())
}

fn batch(args: Common) -> Result<(), HarnessError> {
    let cfg = load(args.scenario.as_deref(), || Ok(ScenarioConfig::default()))?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let runs = args.runs.unwrap_or(cfg.runs);
    let controllers: Vec<ControllerChoice> = match args.controller {
        Some(c) => vec![c.into()],
        None => ControllerChoice::ALL.to_vec(),
    };
    let outcome = run_batch(&cfg, &controllers, runs, seed)?;
    emit_batch(&outcome, &args.out)?;
    print_summary(&outcome.summary, runs);
    println!("logs and summary.json in {}", args.out.display());
    Ok(())
}

fn mission(args: Common) -> Result<bool, HarnessError> {
    let mut cfg = load(args.scenario.as_deref(), selftest::mission_scenario)?;
    if let Some(c) = args.controller {
        cfg.controller = c.into();
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    let report = run_full_mission(&cfg, seed)?;
    emit_mission(&report, &args.out)?;
    println!(
        "{}: docked {}/{} in {:.1} s, final stage {}",
        if report.success { "done" } else { "aborted" },
        report.docked_count,
        cfg.trolleys.len(),
        report.duration,
        report.final_stage
    );
    if let Some(f) = &report.failure {
        println!("reason: {f}");
    }
    let spacings: Vec<String> = report.queue.spacings.iter().map(|s| format!("{s:.4}")).collect();
    println!("queue spacings [{}] m", spacings.join(", "));
    println!("logs in {}", args.out.display());
    Ok(report.success)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.verb {
        Verb::Run(a) => run(a).map(|_| true),
        Verb::Batch(a) => batch(a).map(|_| true),
        Verb::Mission(a) => mission(a),
        Verb::Selftest { seed } => {
            let reports = selftest::run_all(seed);
            for r in &reports {
                println!("{r}");
            }
            if reports.iter().all(|r| r.passed) {
                return ExitCode::SUCCESS;
            }
            return ExitCode::from(2);
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
