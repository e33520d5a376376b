//! `ecbf`: run the energy-limiting experiments and the verification suites.

mod output;
mod plot;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use energy_cbf::scenarios::checks::scenario_checks;
use energy_cbf::scenarios::{analyze_power_sweep, Case, Scenario, ScenarioError, ScenarioKind};
use energy_cbf::simulator::SimError;
use energy_cbf::{verify, RobotModel};

#[derive(Parser)]
#[command(
    name = "ecbf",
    version,
    about = "Kinetic-energy safety filter experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write traces, a summary and plots.
    Run(RunArgs),
    /// Run the numerical verification suites.
    Verify(VerifyArgs),
    /// Print a built-in scenario as TOML.
    Config {
        /// exp1..exp4 or a scenario kind
        name: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Agnostic,
    Aware,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(clap::Args)]
struct RunArgs {
    /// exp1..exp4 or a scenario kind; ignored with --config
    #[arg(required_unless_present = "config")]
    scenario: Option<String>,
    /// Scenario TOML file
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Comma-separated γ values, 1/s
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    gamma: Option<Vec<f64>>,
    /// Kinetic-energy limit, J
    #[arg(long, allow_negative_numbers = true)]
    kmax: Option<f64>,
    /// Filter mode for the filtered runs
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// `off` runs only the unfiltered case, `on` drops it
    #[arg(long, value_enum)]
    filter: Option<Toggle>,
    /// Comma-separated injected powers for constant-power runs, W
    #[arg(long, value_delimiter = ',')]
    p_ext: Option<Vec<f64>>,
    /// Simulated time per run, s
    #[arg(long)]
    duration: Option<f64>,
    /// Seed of the velocity-noise generator
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: out/NAME]
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Also write binary traces
    #[arg(long)]
    binary: bool,
    /// Skip the SVG plots
    #[arg(long)]
    no_plots: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    All,
    Dynamics,
    Qp,
    Filter,
    Simulator,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(value_enum, default_value = "all")]
    suite: Suite,
    /// Model TOML file [default: desk arm]
    #[arg(long)]
    model: Option<PathBuf>,
    /// Seed for the randomized samples
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Verify(args) => verify_cmd(args),
        Command::Config { name } => Scenario::builtin(&name)
            .map(|s| {
                emit(&s.to_toml_string());
                true
            })
            .map_err(Into::into),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn apply_overrides(s: &mut Scenario, args: &RunArgs) -> Result<()> {
    if let Some(g) = &args.gamma {
        s.filter.gammas = g.clone();
    }
    if let Some(k) = args.kmax {
        s.filter.k_max = k;
    }
    if let Some(mode) = args.mode {
        let filtered = match mode {
            Mode::Agnostic => Case::Agnostic,
            Mode::Aware => Case::Aware,
        };
        let keep_off = s.filter.cases.contains(&Case::Off);
        s.filter.cases = if keep_off {
            vec![filtered, Case::Off]
        } else {
            vec![filtered]
        };
    }
    match args.filter {
        Some(Toggle::Off) => s.filter.cases = vec![Case::Off],
        Some(Toggle::On) => {
            s.filter.cases.retain(|c| *c != Case::Off);
            if s.filter.cases.is_empty() {
                s.filter.cases.push(Case::Agnostic);
            }
        }
        None => {}
    }
    if let Some(p) = &args.p_ext {
        if s.kind != ScenarioKind::ConstantPower {
            bail!("--p-ext only applies to constant_power scenarios");
        }
        s.power.p_ext = p.clone();
    }
    if let Some(d) = args.duration {
        s.sim.duration = d;
    }
    if let Some(seed) = args.seed {
        s.sim.seed = seed;
    }
    s.validate()?;
    Ok(())
}

fn run(args: RunArgs) -> Result<bool> {
    let mut scenario = match (&args.config, &args.scenario) {
        (Some(path), _) => Scenario::from_toml_file(path)?,
        (None, Some(name)) => Scenario::builtin(name)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    apply_overrides(&mut scenario, &args)?;
    let model = scenario.load_model()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.name));
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    std::fs::write(out.join("scenario.toml"), scenario.to_toml_string())
        .with_context(|| format!("cannot write {}", out.join("scenario.toml").display()))?;
    if let Some(e) = scenario.stored_energy(&model) {
        log::info!("spring energy at release: {e:.3} J");
    }

    let runs = match scenario.run_all(&model) {
        Ok(runs) => runs,
        Err(ScenarioError::Sim {
            label,
            source:
                SimError::Diverged {
                    tick,
                    time,
                    partial,
                },
        }) => {
            let path = out.join(format!("{label}_partial.csv"));
            output::write_trace(&path, &partial.records)?;
            bail!(
                "run `{label}` diverged at tick {tick} (t = {time:.4} s); partial trace in {}",
                path.display()
            );
        }
        Err(e) => return Err(e.into()),
    };

    for run in &runs {
        output::write_trace(
            &out.join(format!("{}.csv", run.spec.label)),
            &run.output.records,
        )?;
        if args.binary {
            output::write_binary(
                &out.join(format!("{}.bin", run.spec.label)),
                &run.output.records,
            )?;
        }
    }
    let sweep = (scenario.kind == ScenarioKind::ConstantPower)
        .then(|| analyze_power_sweep(&scenario, &runs));
    let plant = if scenario.sim.gravity_compensated {
        model.without_gravity()
    } else {
        model.clone()
    };
    output::write_summary(&out.join("summary.csv"), &plant, &runs, sweep.as_ref())?;
    if !args.no_plots {
        plot::energy(&out.join("kinetic_energy.svg"), &scenario, &runs)?;
        plot::extracted_power(&out.join("p_safe.svg"), &runs)?;
        if let Some(sweep) = &sweep {
            plot::steady_state(&out.join("steady_state.svg"), sweep)?;
        }
    }

    let checks = scenario_checks(&scenario, &runs, sweep.as_ref());
    emit(&format!(
        "{}: {} runs written to {}\n",
        scenario.name,
        runs.len(),
        out.display()
    ));
    for c in &checks {
        emit(&format!("{c}\n"));
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn verify_cmd(args: VerifyArgs) -> Result<bool> {
    let model = match &args.model {
        Some(path) => {
            RobotModel::from_toml_file(path).with_context(|| format!("model {}", path.display()))?
        }
        None => RobotModel::desk_arm(),
    };
    let reports = match args.suite {
        Suite::All => verify::all(&model, args.seed),
        Suite::Dynamics => vec![verify::dynamics_suite(&model, 500, args.seed)],
        Suite::Qp => vec![verify::qp_suite(1000, args.seed)],
        Suite::Filter => vec![verify::filter_suite(&model, 10_000, args.seed)],
        Suite::Simulator => vec![verify::simulator_suite(&model, args.seed)],
    };
    for r in &reports {
        emit(&r.to_string());
    }
    Ok(reports.iter().all(|r| r.passed()))
}
