use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use fractune_core::pipeline::{
    parse_plant, run_pipeline, run_stage_by_name, Context, RunManifest, Stage, StageOutcome,
};
use fractune_core::robustness::{SETTLE_BAND, SETTLE_WINDOW};
use fractune_core::rules::{
    apply_rule, linspace, rule_surface_grid, write_surface_csv, RuleKind, SoptdParams,
};
use fractune_core::sim::{ControllerKind, FopidParams};

#[derive(Parser)]
#[command(
    name = "fractune",
    version,
    about = "Model reduction, PID/FOPID tuning and GP tuning rules"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Reduce test-bench plants to FOPTD and SOPTD models.
    Reduce(RunArgs),
    /// GA-tune PID and FOPID controllers on the full-order plants.
    Tune(RunArgs),
    /// Evolve single- and multi-gene tuning rules.
    EvolveRules(RunArgs),
    /// Compare GA and rule-based controllers on the evaluation plants.
    Evaluate(RunArgs),
    /// Sweep plant perturbations for a fixed controller.
    Robustness(RunArgs),
    /// Run the manifest's stages in order.
    Pipeline(RunArgs),
    /// Apply a published tuning rule to SOPTD parameters and print the controller as JSON.
    ApplyRule(ApplyArgs),
    /// Simulate one closed loop and write its trajectory.
    Simulate(SimulateArgs),
    /// Evaluate a published rule over a tau_max x tau_min grid as CSV.
    RuleSurface(SurfaceArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run manifest; defaults apply to omitted fields.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory of reference tables with CHECKSUMS.sha256.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Plants for reduce, tune and gp, e.g. `P1:8,P2:0.6`.
    #[arg(long, value_delimiter = ',')]
    plants: Vec<String>,
}

impl RunArgs {
    fn manifest(&self) -> Result<RunManifest> {
        let mut m = match &self.manifest {
            Some(p) => {
                RunManifest::load(p).with_context(|| format!("reading manifest {}", p.display()))?
            }
            None => RunManifest::default(),
        };
        if let Some(s) = self.seed {
            m.seed = s;
        }
        if let Some(o) = &self.out {
            m.output_dir = o.clone();
        }
        if let Some(f) = &self.fixtures {
            m.fixture_dir = Some(f.clone());
        }
        if !self.plants.is_empty() {
            m.plants = Some(
                self.plants
                    .iter()
                    .map(|p| parse_plant(p))
                    .collect::<Result<_, _>>()?,
            );
        }
        m.validate()?;
        Ok(m)
    }
}

#[derive(Args)]
struct ApplyArgs {
    /// sg-pid, mg-pid, sg-fopid or mg-fopid.
    #[arg(long)]
    rule: RuleKind,
    #[arg(long = "K", alias = "k")]
    k: f64,
    #[arg(long)]
    tau_max: f64,
    #[arg(long)]
    tau_min: f64,
    #[arg(long = "L", alias = "l")]
    l: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Test-bench plant, e.g. `P2:0.6`.
    #[arg(long)]
    plant: String,
    /// Published rule applied to the plant's reference SOPTD model instead of explicit gains.
    #[arg(long, conflicts_with_all = ["kp", "ki", "kd", "lambda", "mu"])]
    rule: Option<RuleKind>,
    #[arg(long, default_value_t = 0.0)]
    kp: f64,
    #[arg(long, default_value_t = 0.0)]
    ki: f64,
    #[arg(long, default_value_t = 0.0)]
    kd: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args)]
struct SurfaceArgs {
    #[arg(long)]
    rule: RuleKind,
    #[arg(long = "K", alias = "k", default_value_t = 1.0)]
    k: f64,
    /// `lo:hi:n`
    #[arg(long, default_value = "0.1:10:50")]
    tau_max: String,
    /// `lo:hi:n`
    #[arg(long, default_value = "0.1:10:50")]
    tau_min: String,
    #[arg(long = "L", alias = "l", default_value_t = 1.0)]
    l: f64,
    /// CSV file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        bail!("range {s:?} is not of the form lo:hi:n");
    };
    let (lo, hi): (f64, f64) = (lo.parse()?, hi.parse()?);
    let n: usize = n.parse()?;
    if n == 0 || !(lo.is_finite() && hi.is_finite()) || lo > hi {
        bail!("range {s:?} needs finite lo <= hi and n >= 1");
    }
    Ok(linspace(lo, hi, n))
}

fn report(outcomes: &[StageOutcome]) -> ExitCode {
    let mut failed = false;
    for o in outcomes {
        let note = if o.skipped { " (cached)" } else { "" };
        println!("stage {}{note}", o.stage);
        for c in &o.checks {
            println!("  {c}");
            failed |= c.failed_gate();
        }
    }
    if failed {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn run_one(args: &RunArgs, stage: Stage) -> Result<ExitCode> {
    let ctx = Context::new(args.manifest()?)?;
    fs::create_dir_all(&ctx.manifest.output_dir)?;
    let outcome = run_stage_by_name(&ctx, stage).with_context(|| format!("stage {stage}"))?;
    Ok(report(&[outcome]))
}

fn simulate(a: &SimulateArgs) -> Result<ExitCode> {
    let mut m = a.run.manifest()?;
    if let Some(dt) = a.dt {
        m.sim.dt = dt;
    }
    if let Some(h) = a.horizon {
        m.sim.horizon = h;
    }
    let plant = parse_plant(&a.plant)?;
    let ctx = Context::new(m)?;
    let ctrl = match a.rule {
        Some(rule) => apply_rule(rule, &ctx.reference_soptd(&plant)?)?,
        None => FopidParams::new(a.kp, a.ki, a.kd, a.lambda, a.mu),
    };
    let (tr, j) = ctx.simulate(&plant, &ctrl)?;
    let dir = ctx.manifest.output_dir.join("simulate");
    fs::create_dir_all(&dir)?;
    let kind = if ctrl.lambda == 1.0 && ctrl.mu == 1.0 {
        ControllerKind::Pid
    } else {
        ControllerKind::Fopid
    };
    let path = dir.join(format!("{}_{}_{kind}.csv", plant.family, plant.param));
    tr.write_csv(std::io::BufWriter::new(fs::File::create(&path)?))?;
    let out = json!({
        "plant": plant,
        "controller": ctrl,
        "J": j,
        "overshoot": tr.overshoot(),
        "settled": tr.settled(SETTLE_BAND, SETTLE_WINDOW),
        "diverged": tr.diverged,
        "trajectory": path,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Reduce(a) => run_one(&a, Stage::Reduce),
        Cmd::Tune(a) => run_one(&a, Stage::Tune),
        Cmd::EvolveRules(a) => run_one(&a, Stage::Gp),
        Cmd::Evaluate(a) => run_one(&a, Stage::Evaluate),
        Cmd::Robustness(a) => run_one(&a, Stage::Robustness),
        Cmd::Pipeline(a) => {
            let ctx = Context::new(a.manifest()?)?;
            let rep = run_pipeline(&ctx)?;
            Ok(report(&rep.stages))
        }
        Cmd::ApplyRule(a) => {
            let p = SoptdParams::new(a.k, a.tau_max, a.tau_min, a.l)?;
            let c = apply_rule(a.rule, &p)?;
            let out = json!({ "rule": a.rule.to_string(), "input": p, "controller": c });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Simulate(a) => simulate(&a),
        Cmd::RuleSurface(a) => {
            let pts = rule_surface_grid(
                a.rule,
                a.k,
                &parse_range(&a.tau_max)?,
                &parse_range(&a.tau_min)?,
                a.l,
            );
            match &a.out {
                Some(p) => write_surface_csv(&pts, fs::File::create(p)?)?,
                None => write_surface_csv(&pts, std::io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
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
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
