//! Batch stages over the test bench: reduce, tune, gp, evaluate, robustness.
//!
//! Each stage writes under `<output_dir>/<stage>/` and records a content hash of its inputs;
//! a rerun with the same inputs reuses the stored results.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{invalid_arg, invalid_config, Error, Result};
use crate::fixtures::{find, sha256_hex, Fixtures};
use crate::gp::{prot, run_gp, FeatureVector, GpConfig, GpMode, MultiGeneModel};
use crate::lti::{make_testbench, representative_plants, test_bench, Family, TestBenchSpec};
use crate::reduction::{
    reduce_testbench, ObjectiveKind, ReductionConfig, ReductionRecord, Template, J_RESOLUTION,
};
use crate::robustness::{
    default_corners, robustness_sweep, PerturbationSpec, RobustnessRow, SETTLE_BAND, SETTLE_WINDOW,
};
use crate::rules::{apply_rule, Gene, RuleKind, SoptdParams, TuningSource};
use crate::sim::{
    closed_loop_step, cost_j, tune_controller, ControllerKind, FopidParams, OustaloupConfig,
    SimConfig, Trajectory, TuneConfig,
};

const HASH_FILE: &str = ".stage-hash";
const PARTIAL_FILE: &str = "PARTIAL";
const CHECKS_FILE: &str = "checks.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Reduce,
    Tune,
    #[serde(alias = "evolve_rules", alias = "evolve-rules")]
    Gp,
    Evaluate,
    Robustness,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Reduce,
        Stage::Tune,
        Stage::Gp,
        Stage::Evaluate,
        Stage::Robustness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Reduce => "reduce",
            Stage::Tune => "tune",
            Stage::Gp => "gp",
            Stage::Evaluate => "evaluate",
            Stage::Robustness => "robustness",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "reduce" => Ok(Stage::Reduce),
            "tune" => Ok(Stage::Tune),
            "gp" | "evolve_rules" => Ok(Stage::Gp),
            "evaluate" => Ok(Stage::Evaluate),
            "robustness" => Ok(Stage::Robustness),
            other => Err(invalid_arg(format!("unknown stage {other:?}"))),
        }
    }
}

/// Where a stage takes upstream data from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Outputs of an earlier stage in the same output directory.
    #[default]
    Pipeline,
    /// The reference tables.
    Fixtures,
}

/// How rule-based controller parameters are obtained in the evaluate stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSet {
    /// Hand-coded published rules applied to SOPTD parameters.
    #[default]
    Published,
    /// Parameters printed in the rule table.
    Table,
    /// Models from the gp stage.
    Evolved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpStageConfig {
    pub gp: GpConfig,
    pub training: Source,
}

impl Default for GpStageConfig {
    fn default() -> Self {
        Self {
            gp: GpConfig::default(),
            training: Source::Pipeline,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub plants: Vec<TestBenchSpec>,
    pub controllers: Vec<ControllerKind>,
    /// GA parameters: this run's tune stage or the reference tables.
    pub ga_params: Source,
    pub rules: RuleSet,
    /// SOPTD inputs to published rules.
    pub rule_inputs: Source,
    /// Relative J tolerance of the multi-gene rule against GA.
    pub rule_tolerance: f64,
    /// Relative J tolerance of GA parameters against the reference tables.
    pub ga_tolerance: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            plants: representative_plants().to_vec(),
            controllers: vec![ControllerKind::Pid, ControllerKind::Fopid],
            ga_params: Source::Pipeline,
            rules: RuleSet::Published,
            rule_inputs: Source::Fixtures,
            rule_tolerance: 0.05,
            ga_tolerance: 0.10,
        }
    }
}

/// Controller used by the robustness stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "from")]
pub enum ControllerChoice {
    /// A row of the rule table for the stage plant.
    Table {
        controller: ControllerKind,
        source: TuningSource,
    },
    /// A published rule applied to the plant's reference SOPTD parameters.
    Rule {
        rule: RuleKind,
    },
    Params {
        params: FopidParams,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub plant: TestBenchSpec,
    pub controller: ControllerChoice,
    pub corners: Vec<PerturbationSpec>,
    /// Dead time scaled by delay perturbations on a delay-free plant; defaults to the
    /// plant's reference SOPTD delay.
    pub apparent_delay: Option<f64>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            plant: TestBenchSpec::new(Family::P2, 0.6),
            controller: ControllerChoice::Table {
                controller: ControllerKind::Fopid,
                source: TuningSource::Multi,
            },
            corners: default_corners(),
            apparent_delay: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub output_dir: PathBuf,
    /// Directory with reference tables and `CHECKSUMS.sha256`; the embedded copy when absent.
    pub fixture_dir: Option<PathBuf>,
    /// Plants for reduce, tune and gp; the whole test bench when absent.
    pub plants: Option<Vec<TestBenchSpec>>,
    pub reduction: ReductionConfig,
    pub tune: TuneConfig,
    pub sim: SimConfig,
    pub oustaloup: OustaloupConfig,
    pub gp: GpStageConfig,
    pub evaluate: EvaluateConfig,
    pub robustness: RobustnessConfig,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            seed: 0,
            stages: Stage::ALL.to_vec(),
            output_dir: PathBuf::from("out"),
            fixture_dir: None,
            plants: None,
            reduction: ReductionConfig::default(),
            tune: TuneConfig::default(),
            sim: SimConfig::default(),
            oustaloup: OustaloupConfig::default(),
            gp: GpStageConfig::default(),
            evaluate: EvaluateConfig::default(),
            robustness: RobustnessConfig::default(),
        }
    }
}

impl RunManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid_config(
                "stages must be unique and in order: reduce, tune, gp, evaluate, robustness",
            ));
        }
        self.reduction.validate()?;
        let mut tune_ga = self.tune.ga.clone();
        tune_ga.bounds = vec![self.tune.gain_bounds, self.tune.order_bounds];
        tune_ga.init_range = Some(vec![self.tune.gain_init, self.tune.order_init]);
        tune_ga.validate()?;
        self.sim.steps()?;
        self.gp.gp.validate()?;
        for p in self
            .plant_list()
            .iter()
            .chain(&self.evaluate.plants)
            .chain([&self.robustness.plant])
        {
            p.factored()?;
        }
        for c in &self.robustness.corners {
            c.validate()?;
        }
        if !(self.evaluate.rule_tolerance >= 0.0 && self.evaluate.ga_tolerance >= 0.0) {
            return Err(invalid_config("evaluate tolerances must be non-negative"));
        }
        Ok(())
    }

    pub fn plant_list(&self) -> Vec<TestBenchSpec> {
        self.plants.clone().unwrap_or_else(test_bench)
    }

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.output_dir.join(stage.name())
    }
}

/// Parses `P1:8`, `P2=0.6` or `P3 5`.
pub fn parse_plant(s: &str) -> Result<TestBenchSpec> {
    let (f, p) = s
        .split_once([':', '=', ' '])
        .ok_or_else(|| invalid_arg(format!("plant {s:?} is not of the form FAMILY:PARAM")))?;
    let family = Family::from_str(f)?;
    let param = p
        .trim()
        .parse::<f64>()
        .map_err(|e| invalid_arg(format!("plant parameter {p:?}: {e}")))?;
    let spec = TestBenchSpec::new(family, param);
    spec.factored()?;
    Ok(spec)
}

/// Seed for one unit of work, independent of scheduling.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Outcome of one acceptance comparison. Only `gate` checks affect the exit status.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub stage: Stage,
    pub name: String,
    pub gate: bool,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn gate(stage: Stage, name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            stage,
            name: name.into(),
            gate: true,
            pass,
            detail: detail.into(),
        }
    }

    fn soft(stage: Stage, name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            gate: false,
            ..Self::gate(stage, name, pass, detail)
        }
    }

    pub fn failed_gate(&self) -> bool {
        self.gate && !self.pass
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match (self.pass, self.gate) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "WARN",
        };
        write!(
            f,
            "{status} {}: {} ({})",
            self.stage, self.name, self.detail
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<StageOutcome>,
}

impl PipelineReport {
    pub fn checks(&self) -> impl Iterator<Item = &Check> {
        self.stages.iter().flat_map(|s| &s.checks)
    }

    pub fn passed(&self) -> bool {
        !self.checks().any(Check::failed_gate)
    }
}

/// One controller's parameters and cost on a test-bench plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub family: Family,
    pub param: f64,
    pub controller: ControllerKind,
    pub source: TuningSource,
    #[serde(rename = "Kp")]
    pub kp: f64,
    #[serde(rename = "Ki")]
    pub ki: f64,
    #[serde(rename = "Kd")]
    pub kd: f64,
    pub lambda: f64,
    pub mu: f64,
    #[serde(rename = "J", with = "crate::serde_ext::inf_null")]
    pub j: f64,
}

impl TuningRecord {
    pub fn new(
        spec: TestBenchSpec,
        controller: ControllerKind,
        source: TuningSource,
        p: FopidParams,
        j: f64,
    ) -> Self {
        Self {
            family: spec.family,
            param: spec.param,
            controller,
            source,
            kp: p.kp,
            ki: p.ki,
            kd: p.kd,
            lambda: p.lambda,
            mu: p.mu,
            j,
        }
    }

    pub fn spec(&self) -> TestBenchSpec {
        TestBenchSpec::new(self.family, self.param)
    }

    pub fn params(&self) -> FopidParams {
        FopidParams::new(self.kp, self.ki, self.kd, self.lambda, self.mu)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionDiff {
    pub family: Family,
    pub param: f64,
    pub template: Template,
    pub objective: ObjectiveKind,
    pub column: String,
    pub ours: f64,
    pub reference: f64,
    pub rel_dev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningDiff {
    pub family: Family,
    pub param: f64,
    pub controller: ControllerKind,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J_ref")]
    pub j_ref: Option<f64>,
    pub rel_dev: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub family: Family,
    pub param: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub tau_max: f64,
    pub tau_min: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub pid: Option<FopidParams>,
    pub fopid: Option<FopidParams>,
}

impl TrainingRow {
    pub fn features(&self) -> FeatureVector {
        FeatureVector::new(self.k, self.tau_max, self.tau_min, self.l)
    }

    pub fn target(&self, controller: ControllerKind, parameter: &str) -> Option<f64> {
        let p = match controller {
            ControllerKind::Pid => self.pid?,
            ControllerKind::Fopid => self.fopid?,
        };
        param_value(&p, parameter)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleModel {
    pub controller: ControllerKind,
    pub parameter: String,
    pub gene: Gene,
    pub mae: f64,
    pub node_count: usize,
    pub expression: String,
    pub model: MultiGeneModel,
    pub pareto: Vec<ParetoRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub node_count: usize,
    pub mae: f64,
    pub expression: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpStageResult {
    pub training: Vec<TrainingRow>,
    pub models: Vec<RuleModel>,
}

impl GpStageResult {
    pub fn model(
        &self,
        controller: ControllerKind,
        gene: Gene,
        parameter: &str,
    ) -> Option<&RuleModel> {
        self.models
            .iter()
            .find(|m| m.controller == controller && m.gene == gene && m.parameter == parameter)
    }

    /// Controller parameters predicted by the evolved models of one gene mode.
    pub fn predict(
        &self,
        controller: ControllerKind,
        gene: Gene,
        p: &SoptdParams,
    ) -> Result<FopidParams> {
        let x = p.features().values();
        let mut v = [0.0, 0.0, 0.0, 1.0, 1.0];
        for (i, name) in parameters(controller).iter().enumerate() {
            let m = self.model(controller, gene, name).ok_or_else(|| {
                invalid_arg(format!("no evolved {gene:?} model for {controller} {name}"))
            })?;
            v[i] = prot::clamp(m.model.predict(&x));
        }
        Ok(FopidParams::new(v[0], v[1], v[2], v[3], v[4]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub family: Family,
    pub param: f64,
    pub controller: ControllerKind,
    pub source: TuningSource,
    #[serde(rename = "Kp")]
    pub kp: f64,
    #[serde(rename = "Ki")]
    pub ki: f64,
    #[serde(rename = "Kd")]
    pub kd: f64,
    pub lambda: f64,
    pub mu: f64,
    #[serde(rename = "J", with = "crate::serde_ext::inf_null")]
    pub j: f64,
    #[serde(with = "crate::serde_ext::inf_null")]
    pub overshoot: f64,
    pub settled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    pub plant: TestBenchSpec,
    pub controller: FopidParams,
    pub apparent_delay: Option<f64>,
    pub rows: Vec<RobustnessRow>,
}

pub fn parameters(controller: ControllerKind) -> &'static [&'static str] {
    match controller {
        ControllerKind::Pid => &["Kp", "Ki", "Kd"],
        ControllerKind::Fopid => &["Kp", "Ki", "Kd", "lambda", "mu"],
    }
}

pub fn param_value(p: &FopidParams, name: &str) -> Option<f64> {
    match name {
        "Kp" => Some(p.kp),
        "Ki" => Some(p.ki),
        "Kd" => Some(p.kd),
        "lambda" => Some(p.lambda),
        "mu" => Some(p.mu),
        _ => None,
    }
}

/// Shared state of a run: the manifest and the verified reference tables.
pub struct Context {
    pub manifest: RunManifest,
    pub fixtures: Fixtures,
    fixture_digest: String,
}

impl Context {
    pub fn new(manifest: RunManifest) -> Result<Self> {
        manifest.validate()?;
        let fixtures = Fixtures::load(manifest.fixture_dir.as_deref())?;
        let fixture_digest = sha256_hex(&serde_json::to_vec(&fixtures)?);
        Ok(Self {
            manifest,
            fixtures,
            fixture_digest,
        })
    }

    fn key(&self, stage: Stage, config: serde_json::Value, inputs: &[PathBuf]) -> Result<String> {
        let mut digests = Vec::new();
        for p in inputs {
            let bytes = fs::read(p).map_err(|e| {
                invalid_config(format!(
                    "{} is missing ({e}); run its stage first",
                    p.display()
                ))
            })?;
            digests.push(sha256_hex(&bytes));
        }
        let v = json!({
            "stage": stage.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.manifest.seed,
            "fixtures": self.fixture_digest,
            "config": config,
            "inputs": digests,
        });
        Ok(sha256_hex(&serde_json::to_vec(&v)?))
    }

    pub fn reference_soptd(&self, spec: &TestBenchSpec) -> Result<SoptdParams> {
        let row = find(&self.fixtures.table2_nyquist, spec)
            .ok_or_else(|| invalid_arg(format!("no reference SOPTD model for {spec}")))?;
        let k = make_testbench(*spec)?.dc_gain();
        SoptdParams::new(k, row.soptd_tau_max, row.soptd_tau_min, row.soptd_l)
    }

    pub fn reference_params(
        &self,
        spec: &TestBenchSpec,
        controller: ControllerKind,
    ) -> Option<(FopidParams, f64)> {
        match controller {
            ControllerKind::Pid => find(&self.fixtures.table3_pid, spec)
                .map(|r| (FopidParams::pid(r.kp, r.ki, r.kd), r.j)),
            ControllerKind::Fopid => find(&self.fixtures.table4_fopid, spec)
                .map(|r| (FopidParams::new(r.kp, r.ki, r.kd, r.lambda, r.mu), r.j)),
        }
    }

    pub fn simulate(&self, spec: &TestBenchSpec, ctrl: &FopidParams) -> Result<(Trajectory, f64)> {
        let m = &self.manifest;
        let tr = closed_loop_step(&make_testbench(*spec)?, ctrl, &m.oustaloup, &m.sim)?;
        let j = cost_j(&tr, m.sim.w1, m.sim.w2);
        Ok((tr, j))
    }
}

fn json_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{}.json", stage.name()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trajectory(path: &Path, tr: &Trajectory) -> Result<()> {
    let f = fs::File::create(path)?;
    tr.write_csv(std::io::BufWriter::new(f))
}

/// Runs `compute` unless the stage directory holds results for the same key.
fn run_stage<T, C, K>(
    ctx: &Context,
    stage: Stage,
    key: String,
    compute: C,
    checks: K,
) -> Result<StageOutcome>
where
    T: Serialize + DeserializeOwned,
    C: FnOnce(&Path) -> Result<T>,
    K: FnOnce(&T) -> Result<Vec<Check>>,
{
    let dir = ctx.manifest.stage_dir(stage);
    let results = json_path(&dir, stage);
    let stored = fs::read_to_string(dir.join(HASH_FILE)).ok();
    if stored.as_deref().map(str::trim) == Some(key.as_str()) && results.is_file() {
        let value: T = read_json(&results)?;
        return Ok(StageOutcome {
            stage,
            skipped: true,
            checks: checks(&value)?,
        });
    }
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let value = match compute(&dir) {
        Ok(v) => v,
        Err(e) => {
            fs::write(dir.join(PARTIAL_FILE), format!("{stage} failed: {e}\n"))?;
            return Err(e);
        }
    };
    write_json(&results, &value)?;
    let checks = checks(&value)?;
    write_csv(&dir.join(CHECKS_FILE), &checks)?;
    fs::write(dir.join(HASH_FILE), format!("{key}\n"))?;
    Ok(StageOutcome {
        stage,
        skipped: false,
        checks,
    })
}

fn rel_dev(ours: f64, reference: f64) -> f64 {
    (ours - reference) / reference.abs()
}

fn within(ours: f64, reference: f64, tol: f64) -> bool {
    rel_dev(ours, reference).abs() <= tol
}

fn file_stem(spec: &TestBenchSpec) -> String {
    format!("{}_{}", spec.family, spec.param)
}

pub fn cmd_reduce(ctx: &Context) -> Result<StageOutcome> {
    let m = &ctx.manifest;
    let plants = m.plant_list();
    let key = ctx.key(
        Stage::Reduce,
        json!({ "plants": plants, "reduction": m.reduction }),
        &[],
    )?;
    run_stage(
        ctx,
        Stage::Reduce,
        key,
        |dir| {
            let jobs: Vec<(TestBenchSpec, ObjectiveKind)> = plants
                .iter()
                .flat_map(|p| [(*p, ObjectiveKind::H2), (*p, ObjectiveKind::Nyquist)])
                .collect();
            let recs = jobs
                .par_iter()
                .map(|(p, obj)| {
                    let mut cfg = m.reduction.clone();
                    cfg.objective = *obj;
                    cfg.ga.seed = derive_seed(m.seed, &format!("reduce/{obj}/{}", p.label()));
                    reduce_testbench(*p, &cfg)
                })
                .collect::<Result<Vec<_>>>()?;
            let recs: Vec<ReductionRecord> = recs.into_iter().flatten().collect();
            write_csv(&dir.join("reduction.csv"), &recs)?;
            write_csv(&dir.join("diff.csv"), &reduction_diff(ctx, &recs))?;
            Ok(recs)
        },
        |recs| Ok(reduction_checks(ctx, recs)),
    )
}

fn reduction_diff(ctx: &Context, recs: &[ReductionRecord]) -> Vec<ReductionDiff> {
    let mut out = Vec::new();
    for r in recs {
        let table = match r.objective {
            ObjectiveKind::H2 => &ctx.fixtures.table1_h2,
            ObjectiveKind::Nyquist => &ctx.fixtures.table2_nyquist,
        };
        let Some(row) = find(table, &TestBenchSpec::new(r.family, r.param)) else {
            continue;
        };
        let cells: Vec<(&str, f64, f64)> = match r.template {
            Template::Foptd => vec![
                ("J", r.j_min, row.foptd_j),
                ("tau", r.tau_max, row.foptd_tau),
                ("L", r.l, row.foptd_l),
            ],
            Template::Soptd => vec![
                ("J", r.j_min, row.soptd_j),
                ("tau_max", r.tau_max, row.soptd_tau_max),
                ("tau_min", r.tau_min.unwrap_or(f64::NAN), row.soptd_tau_min),
                ("L", r.l, row.soptd_l),
            ],
        };
        for (column, ours, reference) in cells {
            out.push(ReductionDiff {
                family: r.family,
                param: r.param,
                template: r.template,
                objective: r.objective,
                column: column.to_string(),
                ours,
                reference,
                rel_dev: rel_dev(ours, reference),
            });
        }
    }
    out
}

fn reduction_checks(ctx: &Context, recs: &[ReductionRecord]) -> Vec<Check> {
    let get = |spec: &TestBenchSpec, t: Template, o: ObjectiveKind| {
        recs.iter()
            .find(|r| spec.matches(r.family, r.param) && r.template == t && r.objective == o)
            .map(|r| r.j_min)
    };
    let plants: Vec<TestBenchSpec> = recs
        .iter()
        .filter(|r| r.template == Template::Foptd && r.objective == ObjectiveKind::Nyquist)
        .map(|r| TestBenchSpec::new(r.family, r.param))
        .collect();
    let mut bound_fail = Vec::new();
    let mut bound_n = 0;
    let mut order_fail = Vec::new();
    for p in &plants {
        let js = get(p, Template::Soptd, ObjectiveKind::Nyquist);
        if let (Some(js), Some(row)) = (js, find(&ctx.fixtures.table2_nyquist, p)) {
            bound_n += 1;
            if js > 2.0 * row.soptd_j {
                bound_fail.push(format!("{p} {js:.4e} vs {:.4e}", row.soptd_j));
            }
        }
        for o in [ObjectiveKind::H2, ObjectiveKind::Nyquist] {
            if let (Some(jf), Some(js)) = (get(p, Template::Foptd, o), get(p, Template::Soptd, o)) {
                if js > jf + J_RESOLUTION {
                    order_fail.push(format!("{p} {o}"));
                }
            }
        }
    }
    let detail = |fails: &[String], n: usize| {
        if fails.is_empty() {
            format!("{n}/{n}")
        } else {
            format!("{}/{n}; failing: {}", n - fails.len(), fails.join(", "))
        }
    };
    vec![
        Check::gate(
            Stage::Reduce,
            "Nyquist SOPTD J <= 2x reference",
            bound_fail.is_empty(),
            detail(&bound_fail, bound_n),
        ),
        Check::gate(
            Stage::Reduce,
            "SOPTD J <= FOPTD J",
            order_fail.is_empty(),
            detail(&order_fail, 2 * plants.len()),
        ),
    ]
}

pub fn cmd_tune(ctx: &Context) -> Result<StageOutcome> {
    let m = &ctx.manifest;
    let plants = m.plant_list();
    let key = ctx.key(
        Stage::Tune,
        json!({ "plants": plants, "tune": m.tune, "sim": m.sim, "oustaloup": m.oustaloup }),
        &[],
    )?;
    run_stage(
        ctx,
        Stage::Tune,
        key,
        |dir| {
            let jobs: Vec<(TestBenchSpec, ControllerKind)> = plants
                .iter()
                .flat_map(|p| [(*p, ControllerKind::Pid), (*p, ControllerKind::Fopid)])
                .collect();
            let recs = jobs
                .par_iter()
                .map(|(p, kind)| {
                    let mut cfg = m.tune.clone();
                    cfg.ga.seed = derive_seed(m.seed, &format!("tune/{kind}/{}", p.label()));
                    let r =
                        tune_controller(&make_testbench(*p)?, *kind, &cfg, &m.oustaloup, &m.sim)?;
                    Ok(TuningRecord::new(
                        *p,
                        *kind,
                        TuningSource::Ga,
                        r.params,
                        r.j,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            write_csv(&dir.join("tuning.csv"), &recs)?;
            write_csv(&dir.join("diff.csv"), &tuning_diff(ctx, &recs))?;
            Ok(recs)
        },
        |recs| Ok(tuning_checks(ctx, recs)),
    )
}

fn tuning_diff(ctx: &Context, recs: &[TuningRecord]) -> Vec<TuningDiff> {
    recs.iter()
        .map(|r| {
            let j_ref = ctx
                .reference_params(&r.spec(), r.controller)
                .map(|(_, j)| j);
            TuningDiff {
                family: r.family,
                param: r.param,
                controller: r.controller,
                j: r.j,
                j_ref,
                rel_dev: j_ref.map(|jr| rel_dev(r.j, jr)),
            }
        })
        .collect()
}

/// Rows within tolerance required out of `n` compared rows: 30 of 38 on the full bench.
pub fn tuning_quota(n: usize) -> usize {
    (n * 30).div_ceil(38)
}

fn tuning_checks(ctx: &Context, recs: &[TuningRecord]) -> Vec<Check> {
    let diffs = tuning_diff(ctx, recs);
    let mut out = Vec::new();
    for kind in [ControllerKind::Pid, ControllerKind::Fopid] {
        let rows: Vec<&TuningDiff> = diffs
            .iter()
            .filter(|d| d.controller == kind && d.j_ref.is_some())
            .collect();
        let outliers: Vec<String> = rows
            .iter()
            .filter(|d| d.rel_dev.is_some_and(|r| r.abs() > 0.10))
            .map(|d| {
                format!(
                    "{} {:+.1}%",
                    TestBenchSpec::new(d.family, d.param),
                    100.0 * d.rel_dev.unwrap_or(0.0)
                )
            })
            .collect();
        let ok = rows.len() - outliers.len();
        let need = tuning_quota(rows.len());
        let mut detail = format!("{ok}/{} within 10%, need {need}", rows.len());
        if !outliers.is_empty() {
            detail.push_str(&format!("; outliers: {}", outliers.join(", ")));
        }
        out.push(Check::gate(
            Stage::Tune,
            format!("{kind} J within 10% of reference"),
            ok >= need,
            detail,
        ));
    }
    let lambdas: Vec<f64> = recs
        .iter()
        .filter(|r| r.controller == ControllerKind::Fopid)
        .map(|r| r.lambda)
        .collect();
    let inside = lambdas.iter().filter(|l| (0.9..=1.0).contains(*l)).count();
    out.push(Check::soft(
        Stage::Tune,
        "FOPID lambda in [0.9, 1.0]",
        inside == lambdas.len(),
        format!("{inside}/{}", lambdas.len()),
    ));
    out
}

fn training_rows(ctx: &Context) -> Result<Vec<TrainingRow>> {
    let m = &ctx.manifest;
    let plants = m.plant_list();
    let mut rows = Vec::new();
    match m.gp.training {
        Source::Fixtures => {
            for p in &plants {
                let s = ctx.reference_soptd(p)?;
                rows.push(TrainingRow {
                    family: p.family,
                    param: p.param,
                    k: s.k,
                    tau_max: s.tau_max,
                    tau_min: s.tau_min,
                    l: s.l,
                    pid: ctx.reference_params(p, ControllerKind::Pid).map(|x| x.0),
                    fopid: ctx.reference_params(p, ControllerKind::Fopid).map(|x| x.0),
                });
            }
        }
        Source::Pipeline => {
            let red: Vec<ReductionRecord> =
                read_json(&json_path(&m.stage_dir(Stage::Reduce), Stage::Reduce))?;
            let tun: Vec<TuningRecord> =
                read_json(&json_path(&m.stage_dir(Stage::Tune), Stage::Tune))?;
            for p in &plants {
                let Some(r) = red.iter().find(|r| {
                    p.matches(r.family, r.param)
                        && r.template == Template::Soptd
                        && r.objective == ObjectiveKind::Nyquist
                }) else {
                    return Err(invalid_config(format!(
                        "reduce stage has no Nyquist SOPTD model for {p}"
                    )));
                };
                let s = SoptdParams::try_from(&r.model())?;
                let ctrl = |kind| {
                    tun.iter()
                        .find(|t| p.matches(t.family, t.param) && t.controller == kind)
                        .map(TuningRecord::params)
                };
                rows.push(TrainingRow {
                    family: p.family,
                    param: p.param,
                    k: s.k,
                    tau_max: s.tau_max,
                    tau_min: s.tau_min,
                    l: s.l,
                    pid: ctrl(ControllerKind::Pid),
                    fopid: ctrl(ControllerKind::Fopid),
                });
            }
        }
    }
    Ok(rows)
}

fn stage_inputs(ctx: &Context, source: Source, stages: &[Stage]) -> Vec<PathBuf> {
    match source {
        Source::Fixtures => Vec::new(),
        Source::Pipeline => stages
            .iter()
            .map(|s| json_path(&ctx.manifest.stage_dir(*s), *s))
            .collect(),
    }
}

pub fn cmd_evolve_rules(ctx: &Context) -> Result<StageOutcome> {
    let m = &ctx.manifest;
    let inputs = stage_inputs(ctx, m.gp.training, &[Stage::Reduce, Stage::Tune]);
    let key = ctx.key(
        Stage::Gp,
        json!({ "plants": m.plant_list(), "gp": m.gp }),
        &inputs,
    )?;
    run_stage(
        ctx,
        Stage::Gp,
        key,
        |dir| {
            let training = training_rows(ctx)?;
            write_csv(&dir.join("training.csv"), &training_csv(&training))?;
            let jobs: Vec<(ControllerKind, &str, Gene)> =
                [ControllerKind::Pid, ControllerKind::Fopid]
                    .into_iter()
                    .flat_map(|c| parameters(c).iter().map(move |p| (c, *p)))
                    .flat_map(|(c, p)| [(c, p, Gene::Single), (c, p, Gene::Multi)])
                    .collect();
            let models = jobs
                .par_iter()
                .map(|(c, p, g)| evolve_one(m, &training, *c, p, *g))
                .collect::<Result<Vec<_>>>()?;
            let pareto_dir = dir.join("pareto");
            fs::create_dir_all(&pareto_dir)?;
            for r in &models {
                let name = format!("{}_{}_{}.csv", r.controller, r.parameter, gene_name(r.gene));
                write_csv(&pareto_dir.join(name), &r.pareto)?;
            }
            let summary: Vec<ParetoRowWithKey> = models
                .iter()
                .map(|r| ParetoRowWithKey {
                    controller: r.controller,
                    parameter: r.parameter.clone(),
                    gene: r.gene,
                    mae: r.mae,
                    node_count: r.node_count,
                    expression: r.expression.clone(),
                })
                .collect();
            write_csv(&dir.join("rules.csv"), &summary)?;
            Ok(GpStageResult { training, models })
        },
        |res| Ok(gp_checks(res)),
    )
}

#[derive(Serialize)]
struct ParetoRowWithKey {
    controller: ControllerKind,
    parameter: String,
    gene: Gene,
    mae: f64,
    node_count: usize,
    expression: String,
}

#[derive(Serialize)]
struct TrainingCsvRow {
    family: Family,
    param: f64,
    #[serde(rename = "K")]
    k: f64,
    tau_max: f64,
    tau_min: f64,
    #[serde(rename = "L")]
    l: f64,
    pid_kp: Option<f64>,
    pid_ki: Option<f64>,
    pid_kd: Option<f64>,
    fopid_kp: Option<f64>,
    fopid_ki: Option<f64>,
    fopid_kd: Option<f64>,
    fopid_lambda: Option<f64>,
    fopid_mu: Option<f64>,
}

fn training_csv(rows: &[TrainingRow]) -> Vec<TrainingCsvRow> {
    rows.iter()
        .map(|r| TrainingCsvRow {
            family: r.family,
            param: r.param,
            k: r.k,
            tau_max: r.tau_max,
            tau_min: r.tau_min,
            l: r.l,
            pid_kp: r.pid.map(|p| p.kp),
            pid_ki: r.pid.map(|p| p.ki),
            pid_kd: r.pid.map(|p| p.kd),
            fopid_kp: r.fopid.map(|p| p.kp),
            fopid_ki: r.fopid.map(|p| p.ki),
            fopid_kd: r.fopid.map(|p| p.kd),
            fopid_lambda: r.fopid.map(|p| p.lambda),
            fopid_mu: r.fopid.map(|p| p.mu),
        })
        .collect()
}

fn gene_name(g: Gene) -> &'static str {
    TuningSource::from(g).name()
}

fn mode_of(g: Gene) -> GpMode {
    match g {
        Gene::Single => GpMode::SingleGene,
        Gene::Multi => GpMode::MultiGene,
    }
}

/// Training data for one target, skipping plants without a value.
pub fn training_set(
    rows: &[TrainingRow],
    controller: ControllerKind,
    parameter: &str,
) -> (Vec<FeatureVector>, Vec<f64>) {
    rows.iter()
        .filter_map(|r| r.target(controller, parameter).map(|y| (r.features(), y)))
        .unzip()
}

fn evolve_one(
    m: &RunManifest,
    rows: &[TrainingRow],
    c: ControllerKind,
    p: &str,
    g: Gene,
) -> Result<RuleModel> {
    let (x, y) = training_set(rows, c, p);
    let mut cfg = m.gp.gp.clone();
    cfg.seed = derive_seed(m.seed, &format!("gp/{c}/{p}"));
    let res = run_gp(&x, &y, &cfg, mode_of(g))?;
    Ok(RuleModel {
        controller: c,
        parameter: p.to_string(),
        gene: g,
        mae: res.mae,
        node_count: res.best.node_count(),
        expression: res.best.to_text(),
        model: res.best,
        pareto: res
            .pareto
            .iter()
            .map(|e| ParetoRow {
                node_count: e.node_count,
                mae: e.mae,
                expression: e.model.to_text(),
            })
            .collect(),
    })
}

fn gp_checks(res: &GpStageResult) -> Vec<Check> {
    let mut out = vec![Check::soft(
        Stage::Gp,
        "training rows",
        res.training.len() == test_bench().len(),
        format!("{} rows x 7 features", res.training.len()),
    )];
    let total = res.models.iter().all(|m| {
        res.training
            .iter()
            .all(|r| m.model.predict(&r.features().values()).is_finite())
    });
    out.push(Check::gate(
        Stage::Gp,
        "rules total on training rows",
        total,
        format!("{} models", res.models.len()),
    ));
    let mut better = Vec::new();
    let mut n = 0;
    for c in [ControllerKind::Pid, ControllerKind::Fopid] {
        for p in parameters(c) {
            if let (Some(s), Some(mg)) =
                (res.model(c, Gene::Single, p), res.model(c, Gene::Multi, p))
            {
                n += 1;
                if mg.mae <= s.mae {
                    better.push(format!("{c} {p}"));
                }
            }
        }
    }
    out.push(Check::soft(
        Stage::Gp,
        "multi-gene MAE <= single-gene MAE",
        better.len() == n,
        format!("{}/{n} targets", better.len()),
    ));
    out
}

fn evaluation_inputs(ctx: &Context) -> Vec<PathBuf> {
    let e = &ctx.manifest.evaluate;
    let mut stages = Vec::new();
    if e.rule_inputs == Source::Pipeline && e.rules == RuleSet::Published {
        stages.push(Stage::Reduce);
    }
    if e.ga_params == Source::Pipeline {
        stages.push(Stage::Tune);
    }
    if e.rules == RuleSet::Evolved {
        stages.push(Stage::Gp);
    }
    stage_inputs(ctx, Source::Pipeline, &stages)
}

fn rule_input(ctx: &Context, spec: &TestBenchSpec) -> Result<SoptdParams> {
    let m = &ctx.manifest;
    match m.evaluate.rule_inputs {
        Source::Fixtures => ctx.reference_soptd(spec),
        Source::Pipeline => {
            let red: Vec<ReductionRecord> =
                read_json(&json_path(&m.stage_dir(Stage::Reduce), Stage::Reduce))?;
            let r = red
                .iter()
                .find(|r| {
                    spec.matches(r.family, r.param)
                        && r.template == Template::Soptd
                        && r.objective == ObjectiveKind::Nyquist
                })
                .ok_or_else(|| {
                    invalid_config(format!(
                        "reduce stage has no Nyquist SOPTD model for {spec}"
                    ))
                })?;
            SoptdParams::try_from(&r.model())
        }
    }
}

fn ga_params(ctx: &Context, spec: &TestBenchSpec, kind: ControllerKind) -> Result<FopidParams> {
    let m = &ctx.manifest;
    match m.evaluate.ga_params {
        Source::Fixtures => ctx
            .reference_params(spec, kind)
            .map(|x| x.0)
            .ok_or_else(|| invalid_arg(format!("no reference {kind} parameters for {spec}"))),
        Source::Pipeline => {
            let tun: Vec<TuningRecord> =
                read_json(&json_path(&m.stage_dir(Stage::Tune), Stage::Tune))?;
            tun.iter()
                .find(|t| spec.matches(t.family, t.param) && t.controller == kind)
                .map(TuningRecord::params)
                .ok_or_else(|| {
                    invalid_config(format!("tune stage has no {kind} controller for {spec}"))
                })
        }
    }
}

fn rule_params(
    ctx: &Context,
    spec: &TestBenchSpec,
    kind: ControllerKind,
    gene: Gene,
    evolved: Option<&GpStageResult>,
) -> Result<FopidParams> {
    match ctx.manifest.evaluate.rules {
        RuleSet::Published => apply_rule(RuleKind::new(kind, gene), &rule_input(ctx, spec)?),
        RuleSet::Table => ctx
            .fixtures
            .rule_row(kind, gene.into(), spec)
            .map(|r| r.params())
            .ok_or_else(|| invalid_arg(format!("no rule-table row for {kind} {gene:?} on {spec}"))),
        RuleSet::Evolved => {
            let res = evolved.ok_or_else(|| invalid_config("evolved rules need the gp stage"))?;
            res.predict(kind, gene, &rule_input(ctx, spec)?)
        }
    }
}

pub fn cmd_evaluate(ctx: &Context) -> Result<StageOutcome> {
    let m = &ctx.manifest;
    let key = ctx.key(
        Stage::Evaluate,
        json!({ "evaluate": m.evaluate, "sim": m.sim, "oustaloup": m.oustaloup }),
        &evaluation_inputs(ctx),
    )?;
    run_stage(
        ctx,
        Stage::Evaluate,
        key,
        |dir| {
            let evolved: Option<GpStageResult> = match m.evaluate.rules {
                RuleSet::Evolved => {
                    Some(read_json(&json_path(&m.stage_dir(Stage::Gp), Stage::Gp))?)
                }
                _ => None,
            };
            let mut jobs = Vec::new();
            for p in &m.evaluate.plants {
                for &kind in &m.evaluate.controllers {
                    for source in TuningSource::ALL {
                        let params = match source.gene() {
                            None => ga_params(ctx, p, kind)?,
                            Some(g) => rule_params(ctx, p, kind, g, evolved.as_ref())?,
                        };
                        jobs.push((*p, kind, source, params));
                    }
                }
            }
            let traj_dir = dir.join("trajectories");
            fs::create_dir_all(&traj_dir)?;
            let rows = jobs
                .par_iter()
                .map(|(p, kind, source, params)| {
                    let (j, overshoot, settled) = match ctx.simulate(p, params) {
                        Ok((tr, j)) => {
                            let name = format!("{}_{kind}_{source}.csv", file_stem(p));
                            write_trajectory(&traj_dir.join(name), &tr)?;
                            (j, tr.overshoot(), tr.settled(SETTLE_BAND, SETTLE_WINDOW))
                        }
                        Err(Error::InvalidArgument(_)) => (f64::INFINITY, f64::INFINITY, false),
                        Err(e) => return Err(e),
                    };
                    let base = TuningRecord::new(*p, *kind, *source, *params, j);
                    Ok(EvaluationRow {
                        family: base.family,
                        param: base.param,
                        controller: *kind,
                        source: *source,
                        kp: base.kp,
                        ki: base.ki,
                        kd: base.kd,
                        lambda: base.lambda,
                        mu: base.mu,
                        j,
                        overshoot,
                        settled,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            write_csv(&dir.join("evaluation.csv"), &rows)?;
            Ok(rows)
        },
        |rows| Ok(evaluation_checks(ctx, rows)),
    )
}

fn evaluation_checks(ctx: &Context, rows: &[EvaluationRow]) -> Vec<Check> {
    let e = &ctx.manifest.evaluate;
    let get = |p: &TestBenchSpec, k: ControllerKind, s: TuningSource| {
        rows.iter()
            .find(|r| p.matches(r.family, r.param) && r.controller == k && r.source == s)
            .map(|r| r.j)
    };
    let mut close = Vec::new();
    let mut far = Vec::new();
    let mut sg_worse = 0;
    let mut cells = 0;
    let mut ga_far = Vec::new();
    let mut ga_n = 0;
    for p in &e.plants {
        for &k in &e.controllers {
            let (Some(ga), Some(sg), Some(mg)) = (
                get(p, k, TuningSource::Ga),
                get(p, k, TuningSource::Single),
                get(p, k, TuningSource::Multi),
            ) else {
                continue;
            };
            cells += 1;
            let cell = format!("{p} {k} {:+.1}%", 100.0 * rel_dev(mg, ga));
            if within(mg, ga, e.rule_tolerance) {
                close.push(cell);
            } else {
                far.push(cell);
            }
            if sg >= mg {
                sg_worse += 1;
            }
            if let Some((_, jr)) = ctx.reference_params(p, k) {
                ga_n += 1;
                if !within(ga, jr, e.ga_tolerance) {
                    ga_far.push(format!("{p} {k} {ga:.4} vs {jr}"));
                }
            }
        }
    }
    let mut detail = format!(
        "{}/{cells} within {}%",
        close.len(),
        100.0 * e.rule_tolerance
    );
    if !far.is_empty() {
        detail.push_str(&format!("; outside: {}", far.join(", ")));
    }
    let mut ga_detail = format!(
        "{}/{ga_n} within {}%",
        ga_n - ga_far.len(),
        100.0 * e.ga_tolerance
    );
    if !ga_far.is_empty() {
        ga_detail.push_str(&format!("; outside: {}", ga_far.join(", ")));
    }
    vec![
        Check::gate(
            Stage::Evaluate,
            "multi-gene rule J close to GA J",
            far.is_empty(),
            detail,
        ),
        Check::soft(
            Stage::Evaluate,
            "single-gene J >= multi-gene J",
            sg_worse * 4 >= cells * 3,
            format!("{sg_worse}/{cells} cells"),
        ),
        Check::gate(
            Stage::Evaluate,
            "GA J matches reference",
            ga_far.is_empty(),
            ga_detail,
        ),
    ]
}

fn robustness_controller(ctx: &Context) -> Result<FopidParams> {
    let r = &ctx.manifest.robustness;
    match &r.controller {
        ControllerChoice::Table { controller, source } => match source {
            TuningSource::Ga => ctx
                .fixtures
                .rule_row(*controller, *source, &r.plant)
                .map(|x| x.params())
                .or_else(|| ctx.reference_params(&r.plant, *controller).map(|x| x.0)),
            _ => ctx
                .fixtures
                .rule_row(*controller, *source, &r.plant)
                .map(|x| x.params()),
        }
        .ok_or_else(|| {
            invalid_arg(format!(
                "no table row for {controller} {source} on {}",
                r.plant
            ))
        }),
        ControllerChoice::Rule { rule } => apply_rule(*rule, &ctx.reference_soptd(&r.plant)?),
        ControllerChoice::Params { params } => Ok(*params),
    }
}

pub fn cmd_robustness(ctx: &Context) -> Result<StageOutcome> {
    let m = &ctx.manifest;
    let key = ctx.key(
        Stage::Robustness,
        json!({ "robustness": m.robustness, "sim": m.sim, "oustaloup": m.oustaloup }),
        &[],
    )?;
    run_stage(
        ctx,
        Stage::Robustness,
        key,
        |dir| {
            let r = &m.robustness;
            let ctrl = robustness_controller(ctx)?;
            let mut plant = r.plant.factored()?;
            if plant.delay == 0.0 {
                plant.apparent_delay = match r.apparent_delay {
                    Some(l) => Some(l),
                    None => find(&ctx.fixtures.table2_nyquist, &r.plant).map(|row| row.soptd_l),
                };
            }
            let corners = robustness_sweep(&plant, &ctrl, &r.corners, &m.oustaloup, &m.sim)?;
            let traj_dir = dir.join("trajectories");
            fs::create_dir_all(&traj_dir)?;
            for c in &corners {
                let s = c.row.spec();
                let name = format!("dK{:+}_dTau{:+}_dL{:+}.csv", s.dk_pct, s.dtau_pct, s.dl_pct);
                write_trajectory(&traj_dir.join(name), &c.trajectory)?;
            }
            let rows: Vec<RobustnessRow> = corners.into_iter().map(|c| c.row).collect();
            write_csv(&dir.join("robustness.csv"), &rows)?;
            Ok(RobustnessResult {
                plant: r.plant,
                controller: ctrl,
                apparent_delay: plant.apparent_delay,
                rows,
            })
        },
        |res| {
            let unsettled: Vec<String> = res
                .rows
                .iter()
                .filter(|r| !r.settled)
                .map(|r| format!("({:+}, {:+}, {:+})", r.dk_pct, r.dtau_pct, r.dl_pct))
                .collect();
            let n = res.rows.len();
            let mut detail = format!("{}/{n} corners settled", n - unsettled.len());
            if !unsettled.is_empty() {
                detail.push_str(&format!("; unsettled: {}", unsettled.join(", ")));
            }
            Ok(vec![Check::gate(
                Stage::Robustness,
                "all corners settle",
                unsettled.is_empty(),
                detail,
            )])
        },
    )
}

pub fn run_stage_by_name(ctx: &Context, stage: Stage) -> Result<StageOutcome> {
    match stage {
        Stage::Reduce => cmd_reduce(ctx),
        Stage::Tune => cmd_tune(ctx),
        Stage::Gp => cmd_evolve_rules(ctx),
        Stage::Evaluate => cmd_evaluate(ctx),
        Stage::Robustness => cmd_robustness(ctx),
    }
}

/// Runs the manifest's stages in order and writes `checks.csv` at the output root.
pub fn run_pipeline(ctx: &Context) -> Result<PipelineReport> {
    fs::create_dir_all(&ctx.manifest.output_dir)?;
    let mut report = PipelineReport::default();
    for &stage in &ctx.manifest.stages {
        report.stages.push(run_stage_by_name(ctx, stage)?);
    }
    let checks: Vec<&Check> = report.checks().collect();
    write_csv(&ctx.manifest.output_dir.join(CHECKS_FILE), &checks)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_manifest(out: &Path) -> RunManifest {
        let mut m = RunManifest {
            output_dir: out.to_path_buf(),
            plants: Some(vec![
                TestBenchSpec::new(Family::P1, 3.0),
                TestBenchSpec::new(Family::P2, 0.6),
            ]),
            ..RunManifest::default()
        };
        m.reduction.ga = m.reduction.ga.clone().pop_size(12).max_generations(8);
        m.reduction.grid_points = 60;
        m.tune.ga = m.tune.ga.clone().pop_size(6).max_generations(3);
        m.sim.dt = 0.05;
        m.gp.gp.pop_size = 30;
        m.gp.gp.generations = 4;
        m.evaluate.plants = vec![TestBenchSpec::new(Family::P2, 0.6)];
        m.evaluate.rule_inputs = Source::Pipeline;
        m.robustness.corners = vec![
            PerturbationSpec::nominal(),
            PerturbationSpec::new(10.0, 20.0, 50.0).unwrap(),
        ];
        m
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert_eq!("evolve-rules".parse::<Stage>().unwrap(), Stage::Gp);
        let m: RunManifest =
            serde_json::from_str(r#"{"stages": ["reduce", "evolve_rules"]}"#).unwrap();
        assert_eq!(m.stages, vec![Stage::Reduce, Stage::Gp]);
    }

    #[test]
    fn manifest_rejects_misordered_stages_and_unknown_fields() {
        assert!(RunManifest::from_json(r#"{"stages": ["tune", "reduce"]}"#).is_err());
        assert!(RunManifest::from_json(r#"{"stages": ["tune", "tune"]}"#).is_err());
        assert!(RunManifest::from_json(r#"{"sead": 1}"#).is_err());
        let m = RunManifest::from_json(r#"{"seed": 7, "plants": [{"family": "P3", "param": 5}]}"#)
            .unwrap();
        assert_eq!(m.seed, 7);
        assert_eq!(m.plant_list(), vec![TestBenchSpec::new(Family::P3, 5.0)]);
        assert_eq!(RunManifest::default().plant_list().len(), 38);
    }

    #[test]
    fn plant_parsing() {
        assert_eq!(
            parse_plant("P1:8").unwrap(),
            TestBenchSpec::new(Family::P1, 8.0)
        );
        assert_eq!(
            parse_plant("p2=0.6").unwrap(),
            TestBenchSpec::new(Family::P2, 0.6)
        );
        assert!(parse_plant("P1:2.5").is_err());
        assert!(parse_plant("P9:1").is_err());
        assert!(parse_plant("P1").is_err());
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
    }

    #[test]
    fn tuning_quota_matches_full_bench() {
        assert_eq!(tuning_quota(38), 30);
        assert_eq!(tuning_quota(37), 30);
        assert_eq!(tuning_quota(8), 7);
    }

    #[test]
    fn small_pipeline_runs_skips_and_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ctx = Context::new(small_manifest(a.path())).unwrap();
        let first = run_pipeline(&ctx).unwrap();
        assert!(first.stages.iter().all(|s| !s.skipped));
        assert_eq!(first.stages.len(), 5);
        let red: Vec<ReductionRecord> = read_json(&a.path().join("reduce/reduce.json")).unwrap();
        assert_eq!(red.len(), 2 * 2 * 2);
        let gp: GpStageResult = read_json(&a.path().join("gp/gp.json")).unwrap();
        assert_eq!(gp.training.len(), 2);
        assert_eq!(gp.models.len(), 16);
        assert!(a.path().join("gp/pareto/fopid_mu_multi.csv").is_file());
        assert!(a
            .path()
            .join("evaluate/trajectories/P2_0.6_pid_ga.csv")
            .is_file());
        assert!(a
            .path()
            .join("robustness/trajectories/dK+10_dTau+20_dL+50.csv")
            .is_file());
        let header = fs::read_to_string(a.path().join("robustness/robustness.csv")).unwrap();
        assert!(header.starts_with("dK,dTau,dL,J,overshoot,settled\n"));

        let second = run_pipeline(&ctx).unwrap();
        assert!(second.stages.iter().all(|s| s.skipped));
        assert_eq!(
            first.stages.iter().map(|s| &s.checks).collect::<Vec<_>>(),
            second.stages.iter().map(|s| &s.checks).collect::<Vec<_>>()
        );

        let ctx_b = Context::new(small_manifest(b.path())).unwrap();
        run_pipeline(&ctx_b).unwrap();
        for f in [
            "reduce/reduction.csv",
            "tune/tuning.csv",
            "gp/rules.csv",
            "evaluate/evaluation.csv",
            "robustness/robustness.csv",
            "checks.csv",
        ] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn changed_config_reruns_only_downstream_of_the_change() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = small_manifest(dir.path());
        m.stages = vec![Stage::Reduce, Stage::Robustness];
        run_pipeline(&Context::new(m.clone()).unwrap()).unwrap();
        m.robustness.corners.truncate(1);
        let report = run_pipeline(&Context::new(m).unwrap()).unwrap();
        assert!(report.stages[0].skipped);
        assert!(!report.stages[1].skipped);
    }

    #[test]
    fn failed_stage_leaves_partial_marker() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = small_manifest(dir.path());
        m.stages = vec![Stage::Robustness];
        m.robustness.plant = TestBenchSpec::new(Family::P1, 3.0);
        let ctx = Context::new(m).unwrap();
        assert!(run_pipeline(&ctx).is_err());
        assert!(dir.path().join("robustness").join(PARTIAL_FILE).is_file());
        assert!(!dir.path().join("robustness").join(HASH_FILE).exists());
    }

    #[test]
    fn missing_upstream_stage_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = small_manifest(dir.path());
        m.stages = vec![Stage::Gp];
        let ctx = Context::new(m).unwrap();
        assert!(matches!(run_pipeline(&ctx), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn published_rules_on_reference_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = small_manifest(dir.path());
        m.stages = vec![Stage::Evaluate];
        m.evaluate.ga_params = Source::Fixtures;
        m.evaluate.rule_inputs = Source::Fixtures;
        m.evaluate.controllers = vec![ControllerKind::Pid];
        m.sim = SimConfig::default();
        let ctx = Context::new(m).unwrap();
        let report = run_pipeline(&ctx).unwrap();
        let ga = report
            .checks()
            .find(|c| c.name == "GA J matches reference")
            .unwrap();
        assert!(ga.pass, "{ga}");
    }
}
