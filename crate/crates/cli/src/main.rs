//! `fhn`: command-line runner for the strongly coupled FitzHugh-Nagumo toolkit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fhn_core::bifurcation::{classify, detect_limit_cycle};
use fhn_core::experiment::{
    parse_assignment, resolve, resolve_tables, run_plan, set_key, ExperimentConfig, ModelKind, Plan, Preset,
};
use fhn_core::limit_ode::LimitState;
use fhn_core::Error;

#[derive(Parser, Debug)]
#[command(name = "fhn", version, about = "Simulate and cross-check the strongly coupled FitzHugh-Nagumo mean-field system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Euler-Maruyama simulation of the neuron network.
    SimulateNetwork(RunArgs),
    /// Finite-volume solution of the mean-field Fokker-Planck equation.
    SimulatePde(RunArgs),
    /// RK4 integration of the limit FitzHugh-Nagumo equation.
    SimulateOde(RunArgs),
    /// Network, PDE and limit ODE on shared parameters, with discrepancies.
    Compare(RunArgs),
    /// Runs whatever `model` the configuration file selects.
    Run(RunArgs),
    /// Equilibria, stability and regime of the limit equation (JSON on stdout).
    Classify(RunArgs),
    /// Searches for an attracting limit cycle of the limit equation (JSON on stdout).
    DetectCycle(RunArgs),
    /// Runs a figure preset.
    Scenario {
        /// fig1, fig2, fig3, fig4 or fig5
        preset: String,
        #[command(flatten)]
        args: RunArgs,
    },
}

/// Flags mirror configuration keys; they override the configuration file.
#[derive(Args, Debug)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "FHN_OUTPUT_DIR", default_value = "fhn-output")]
    out: PathBuf,
    /// Generic override `section.key=value` (repeatable), e.g. `--set pde.nv=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// params.lambda
    #[arg(long)]
    lambda: Option<f64>,
    /// params.a
    #[arg(long)]
    a: Option<f64>,
    /// params.b
    #[arg(long)]
    b: Option<f64>,
    /// params.i_ext
    #[arg(long, allow_hyphen_values = true)]
    i_ext: Option<f64>,
    /// params.sigma
    #[arg(long)]
    sigma: Option<f64>,
    /// params.epsilon
    #[arg(long)]
    epsilon: Option<f64>,
    /// params.adaptation_noise
    #[arg(long)]
    adaptation_noise: Option<bool>,
    /// sim.n
    #[arg(long)]
    n: Option<i64>,
    /// sim.t_end
    #[arg(long)]
    t_end: Option<f64>,
    /// sim.dt
    #[arg(long)]
    dt: Option<f64>,
    /// sim.seed
    #[arg(long)]
    seed: Option<i64>,
    /// init.mean_v
    #[arg(long, allow_hyphen_values = true)]
    mean_v: Option<f64>,
    /// init.mean_x
    #[arg(long, allow_hyphen_values = true)]
    mean_x: Option<f64>,
    /// label
    #[arg(long)]
    label: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> anyhow::Result<toml::Table> {
        let mut t = toml::Table::new();
        let floats = [
            ("params.lambda", self.lambda),
            ("params.a", self.a),
            ("params.b", self.b),
            ("params.i_ext", self.i_ext),
            ("params.sigma", self.sigma),
            ("params.epsilon", self.epsilon),
            ("sim.t_end", self.t_end),
            ("sim.dt", self.dt),
            ("init.mean_v", self.mean_v),
            ("init.mean_x", self.mean_x),
        ];
        for (k, v) in floats {
            if let Some(v) = v {
                set_key(&mut t, k, toml::Value::Float(v))?;
            }
        }
        for (k, v) in [("sim.n", self.n), ("sim.seed", self.seed)] {
            if let Some(v) = v {
                set_key(&mut t, k, toml::Value::Integer(v))?;
            }
        }
        if let Some(b) = self.adaptation_noise {
            set_key(&mut t, "params.adaptation_noise", toml::Value::Boolean(b))?;
        }
        if let Some(l) = &self.label {
            set_key(&mut t, "label", toml::Value::String(l.clone()))?;
        }
        for s in &self.sets {
            let (k, v) = parse_assignment(s)?;
            set_key(&mut t, &k, v)?;
        }
        Ok(t)
    }

    fn config_text(&self) -> anyhow::Result<String> {
        match &self.config {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())).into()),
            None => Ok(String::new()),
        }
    }

    /// Resolves the plan, forcing `model` when the subcommand fixes it.
    fn plan(&self, model: Option<ModelKind>) -> anyhow::Result<Plan> {
        let mut over = self.overrides()?;
        if let Some(m) = model {
            set_key(&mut over, "model", toml::Value::String(m.to_string()))?;
        }
        Ok(resolve(&self.config_text()?, &over)?)
    }

    fn single(&self) -> anyhow::Result<ExperimentConfig> {
        let mut plan = self.plan(None)?;
        if plan.runs.len() != 1 {
            return Err(Error::Config(format!(
                "this command needs a single run, the configuration expands to {}",
                plan.runs.len()
            ))
            .into());
        }
        Ok(plan.runs.remove(0))
    }
}

fn execute(plan: &Plan, out: &Path) -> anyhow::Result<()> {
    for w in &plan.notes {
        eprintln!("note: {w}");
    }
    let summary = run_plan(plan, out)?;
    for r in &summary.runs {
        for w in &r.warnings {
            eprintln!("warning [{}]: {w}", r.label);
        }
        eprintln!(
            "{} ({}): {:?}, {:.2} s, files: {}",
            r.label,
            r.model,
            r.classification.regime,
            r.runtime_seconds,
            r.files.join(", ")
        );
    }
    println!("{}", out.join("summary.json").display());
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SimulateNetwork(a) => execute(&a.plan(Some(ModelKind::Network))?, &a.out),
        Command::SimulatePde(a) => execute(&a.plan(Some(ModelKind::Pde))?, &a.out),
        Command::SimulateOde(a) => execute(&a.plan(Some(ModelKind::Ode))?, &a.out),
        Command::Compare(a) => execute(&a.plan(Some(ModelKind::Compare))?, &a.out),
        Command::Run(a) => execute(&a.plan(None)?, &a.out),
        Command::Classify(a) => {
            let cfg = a.single()?;
            let report = classify(&cfg.params)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::DetectCycle(a) => {
            let cfg = a.single()?;
            let s0 = LimitState::new(0.0, cfg.init.mean_v, cfg.init.mean_x);
            let cycle = detect_limit_cycle(&cfg.params, s0, &cfg.ode.cycle)?;
            let out = serde_json::json!({ "cycle": cycle, "params": cfg.params });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        Command::Scenario { preset, args } => {
            let preset: Preset = preset.parse()?;
            let mut over: toml::Table = args
                .config_text()?
                .parse()
                .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            over.remove("preset");
            fhn_core::experiment::merge_tables(&mut over, &args.overrides()?);
            let plan = resolve_tables(Some(preset), &over)?;
            execute(&plan, &args.out)
        }
    }
}

/// 2: configuration, 3: numerical blow-up, 4: inconclusive cycle detection, 1: other.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) | Some(Error::InvalidParameter(_)) => 2,
        Some(Error::BlowUp { .. }) => 3,
        Some(Error::Inconclusive(_)) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli).context("fhn failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
