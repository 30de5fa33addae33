//! GA-based reduction of higher-order plants to FOPTD/SOPTD templates.

use std::fmt;
use std::str::FromStr;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_config, Error, Result};
use crate::ga::{run_ga, GaConfig, GaResult};
use crate::lti::{h2_norm, pade3, DelayMode, DelayedTf, Family, RationalTf, TestBenchSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Template {
    Foptd,
    Soptd,
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Template::Foptd => "FOPTD",
            Template::Soptd => "SOPTD",
        })
    }
}

impl FromStr for Template {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FOPTD" => Ok(Template::Foptd),
            "SOPTD" => Ok(Template::Soptd),
            _ => Err(invalid_arg(format!("unknown template {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    H2,
    Nyquist,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::H2 => "h2",
            ObjectiveKind::Nyquist => "nyquist",
        })
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h2" => Ok(ObjectiveKind::H2),
            "nyquist" => Ok(ObjectiveKind::Nyquist),
            _ => Err(invalid_arg(format!("unknown objective {s:?}"))),
        }
    }
}

/// How the H2 discrepancy between plant and model is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum H2Variant {
    /// `| ||P|| - ||Pred|| |`
    #[default]
    NormGap,
    /// `||P - Pred||`
    Difference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    omegas: Vec<f64>,
}

impl FrequencyGrid {
    /// `count` logarithmically spaced frequencies in rad/s, endpoints included.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) || count < 2 {
            return Err(invalid_arg(format!("invalid grid [{lo}, {hi}] x {count}")));
        }
        let (a, b) = (lo.log10(), hi.log10());
        let omegas = (0..count)
            .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
            .collect();
        Ok(Self { omegas })
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReductionConfig {
    pub objective: ObjectiveKind,
    pub w1: f64,
    pub w2: f64,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    pub delay_mode: DelayMode,
    pub h2_variant: H2Variant,
    pub tau_bounds: (f64, f64),
    pub delay_bounds: (f64, f64),
    pub ga: GaConfig,
    /// Nelder-Mead iterations applied to the GA optimum; 0 disables.
    pub polish_iterations: u64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::Nyquist,
            w1: 1.0,
            w2: 1.0,
            grid_lo: 1e-4,
            grid_hi: 1e4,
            grid_points: 500,
            delay_mode: DelayMode::Pade3,
            h2_variant: H2Variant::NormGap,
            tau_bounds: (1e-4, 10.0),
            delay_bounds: (1e-5, 10.0),
            ga: GaConfig {
                pop_size: 50,
                max_generations: 100,
                stall_generations: 40,
                function_tolerance: 1e-9,
                mutation_scale_end: 0.002,
                ..GaConfig::DEF
            },
            polish_iterations: 300,
        }
    }
}

impl ReductionConfig {
    pub fn grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::log_spaced(self.grid_lo, self.grid_hi, self.grid_points)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(invalid_config(format!("{name} must be finite and >= 0")));
            }
        }
        for (name, (lo, hi)) in [
            ("tau_bounds", self.tau_bounds),
            ("delay_bounds", self.delay_bounds),
        ] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(invalid_config(format!("{name} must satisfy 0 < lo < hi")));
            }
        }
        Ok(())
    }
}

/// Low-order model `K e^{-Ls} / ((tau_max s + 1)(tau_min s + 1))`; FOPTD has no `tau_min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedModel {
    pub template: Template,
    pub k: f64,
    pub tau_max: f64,
    pub tau_min: Option<f64>,
    pub l: f64,
}

impl ReducedModel {
    pub fn foptd(k: f64, tau: f64, l: f64) -> Self {
        Self {
            template: Template::Foptd,
            k,
            tau_max: tau,
            tau_min: None,
            l,
        }
    }

    pub fn soptd(k: f64, tau_a: f64, tau_b: f64, l: f64) -> Self {
        Self {
            template: Template::Soptd,
            k,
            tau_max: tau_a.max(tau_b),
            tau_min: Some(tau_a.min(tau_b)),
            l,
        }
    }

    pub fn to_delayed_tf(&self) -> Result<DelayedTf> {
        let mut den = vec![self.tau_max, 1.0];
        if let Some(t) = self.tau_min {
            den = crate::lti::poly::mul(&den, &[t, 1.0]);
        }
        DelayedTf::new(RationalTf::new(vec![self.k], den)?, self.l)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionRecord {
    pub family: Family,
    pub param: f64,
    pub template: Template,
    pub objective: ObjectiveKind,
    #[serde(rename = "J_min")]
    pub j_min: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub tau_max: f64,
    pub tau_min: Option<f64>,
    #[serde(rename = "L")]
    pub l: f64,
}

impl ReductionRecord {
    pub fn model(&self) -> ReducedModel {
        ReducedModel {
            template: self.template,
            k: self.k,
            tau_max: self.tau_max,
            tau_min: self.tau_min,
            l: self.l,
        }
    }
}

fn to_rational(p: &DelayedTf) -> RationalTf {
    if p.delay == 0.0 {
        p.tf.clone()
    } else {
        p.tf.mul(&pade3(p.delay))
    }
}

/// H2 discrepancy; delays are replaced by their Padé approximants.
pub fn j_h2(p: &DelayedTf, pred: &DelayedTf, variant: H2Variant) -> Result<f64> {
    let a = to_rational(p);
    let b = to_rational(pred);
    match variant {
        H2Variant::NormGap => Ok((h2_norm(&a)? - h2_norm(&b)?).abs()),
        H2Variant::Difference => {
            h2_norm(&a)?;
            h2_norm(&b)?;
            h2_norm(&a.sub(&b))
        }
    }
}

/// `w1 ||dRe||_2 + w2 ||dIm||_2` over the grid.
pub fn j_nyquist(
    p: &DelayedTf,
    pred: &DelayedTf,
    grid: &FrequencyGrid,
    w1: f64,
    w2: f64,
    mode: DelayMode,
) -> f64 {
    NyquistObjective::new(p, grid, w1, w2, mode).eval(pred)
}

/// Nyquist objective with the plant's response cached on the grid.
pub struct NyquistObjective {
    omegas: Vec<f64>,
    plant: Vec<(f64, f64)>,
    w1: f64,
    w2: f64,
    mode: DelayMode,
}

impl NyquistObjective {
    pub fn new(p: &DelayedTf, grid: &FrequencyGrid, w1: f64, w2: f64, mode: DelayMode) -> Self {
        let plant = grid
            .omegas()
            .iter()
            .map(|&w| {
                let g = p.eval_jw(w, mode);
                (g.re, g.im)
            })
            .collect();
        Self {
            omegas: grid.omegas().to_vec(),
            plant,
            w1,
            w2,
            mode,
        }
    }

    pub fn eval(&self, pred: &DelayedTf) -> f64 {
        let (mut sr, mut si) = (0.0, 0.0);
        for (&w, &(re, im)) in self.omegas.iter().zip(&self.plant) {
            let g = pred.eval_jw(w, self.mode);
            sr += (g.re - re).powi(2);
            si += (g.im - im).powi(2);
        }
        self.w1 * sr.sqrt() + self.w2 * si.sqrt()
    }
}

fn decode(template: Template, k: f64, genes: &[f64]) -> ReducedModel {
    let v: Vec<f64> = genes.iter().map(|g| 10f64.powf(*g)).collect();
    match template {
        Template::Foptd => ReducedModel::foptd(k, v[0], v[1]),
        Template::Soptd => ReducedModel::soptd(k, v[0], v[1], v[2]),
    }
}

type Objective<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;

/// Objective values closer than this are not distinguishable; H2 norm gaps bottom out near 1e-14.
pub const J_RESOLUTION: f64 = 1e-12;

/// Initial simplex edge as a fraction of each log-scale range.
const POLISH_STEP: f64 = 0.01;

fn log_box((lo, hi): (f64, f64)) -> (f64, f64) {
    (lo.log10(), hi.log10())
}

/// Fits `template` to `plant`. The gain is the plant's DC gain; time constants and delay are
/// searched on a logarithmic scale. `warm_start` models are injected into the initial population.
pub fn reduce(
    plant: &DelayedTf,
    template: Template,
    cfg: &ReductionConfig,
    warm_start: &[ReducedModel],
) -> Result<(ReducedModel, f64, GaResult)> {
    cfg.validate()?;
    let k = plant.dc_gain();
    if !k.is_finite() || k == 0.0 {
        return Err(invalid_arg(format!(
            "plant DC gain {k} cannot be matched by a template"
        )));
    }
    let tb = log_box(cfg.tau_bounds);
    let lb = log_box(cfg.delay_bounds);
    let bounds = match template {
        Template::Foptd => vec![tb, lb],
        Template::Soptd => vec![tb, tb, lb],
    };
    let mut ga = cfg.ga.clone();
    ga.bounds = bounds.clone();
    ga.init_range = None;
    for m in warm_start {
        let mut g = vec![m.tau_max.log10()];
        if template == Template::Soptd {
            g.push(m.tau_min.unwrap_or(cfg.tau_bounds.0).log10());
        }
        g.push(m.l.log10());
        let g: Vec<f64> = g
            .iter()
            .zip(&bounds)
            .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
            .collect();
        ga.seeds.push(g);
    }

    let objective: Box<Objective> = match cfg.objective {
        ObjectiveKind::Nyquist => {
            let obj = NyquistObjective::new(plant, &cfg.grid()?, cfg.w1, cfg.w2, cfg.delay_mode);
            Box::new(move |g| match decode(template, k, g).to_delayed_tf() {
                Ok(m) => obj.eval(&m),
                Err(_) => f64::INFINITY,
            })
        }
        ObjectiveKind::H2 => {
            let full = to_rational(plant);
            let plant_norm = h2_norm(&full)?;
            let variant = cfg.h2_variant;
            Box::new(move |g| {
                let m = match decode(template, k, g).to_delayed_tf() {
                    Ok(m) => to_rational(&m),
                    Err(_) => return f64::INFINITY,
                };
                let r = match variant {
                    H2Variant::NormGap => h2_norm(&m).map(|n| (plant_norm - n).abs()),
                    H2Variant::Difference => h2_norm(&full.sub(&m)),
                };
                r.unwrap_or(f64::INFINITY)
            })
        }
    };
    let result = run_ga(&objective, &ga)?;
    let (best, j) = polish(
        &objective,
        &result.best,
        result.best_objective,
        &bounds,
        cfg.polish_iterations,
    )?;
    Ok((decode(template, k, &best), j, result))
}

struct BoxedCost<'a, F> {
    f: &'a F,
    bounds: &'a [(f64, f64)],
}

impl<F: Fn(&[f64]) -> f64> CostFunction for BoxedCost<'_, F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, g: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let inside = g
            .iter()
            .zip(self.bounds)
            .all(|(x, (lo, hi))| (lo..=hi).contains(&x));
        Ok(if inside { (self.f)(g) } else { f64::INFINITY })
    }
}

/// Nelder-Mead refinement of the GA optimum inside `bounds`. Keeps the start unless it improves.
fn polish<F: Fn(&[f64]) -> f64>(
    f: &F,
    start: &[f64],
    j0: f64,
    bounds: &[(f64, f64)],
    iterations: u64,
) -> Result<(Vec<f64>, f64)> {
    if iterations == 0 || !j0.is_finite() {
        return Ok((start.to_vec(), j0));
    }
    let mut simplex = vec![start.to_vec()];
    for (i, (lo, hi)) in bounds.iter().enumerate() {
        let mut v = start.to_vec();
        let step = POLISH_STEP * (hi - lo);
        v[i] = if v[i] + step <= *hi {
            v[i] + step
        } else {
            v[i] - step
        };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-14)
        .map_err(|e| invalid_config(e.to_string()))?;
    let res = Executor::new(BoxedCost { f, bounds }, solver)
        .configure(|s| s.max_iters(iterations))
        .run()
        .map_err(|e| invalid_arg(format!("polish failed: {e}")))?;
    match res.state().get_best_param() {
        Some(p) if res.state().get_best_cost() < j0 => Ok((p.clone(), res.state().get_best_cost())),
        _ => Ok((start.to_vec(), j0)),
    }
}

/// FOPTD then SOPTD for one test-bench plant. SOPTD is rerun from the FOPTD optimum if it fits worse.
pub fn reduce_testbench(
    spec: TestBenchSpec,
    cfg: &ReductionConfig,
) -> Result<[ReductionRecord; 2]> {
    let plant = crate::lti::make_testbench(spec)?;
    let (fo, jf, _) = reduce(&plant, Template::Foptd, cfg, &[])?;
    let (mut so, mut js, _) = reduce(&plant, Template::Soptd, cfg, &[])?;
    if js > jf + J_RESOLUTION {
        // the FOPTD optimum is a local trap for SOPTD, so it is only used when the cold run falls short
        let seed = ReducedModel::soptd(fo.k, fo.tau_max, cfg.tau_bounds.0, fo.l);
        let (warm, jw, _) = reduce(&plant, Template::Soptd, cfg, &[seed])?;
        if jw < js {
            (so, js) = (warm, jw);
        }
    }
    let rec = |m: ReducedModel, j: f64| ReductionRecord {
        family: spec.family,
        param: spec.param,
        template: m.template,
        objective: cfg.objective,
        j_min: j,
        k: m.k,
        tau_max: m.tau_max,
        tau_min: m.tau_min,
        l: m.l,
    };
    Ok([rec(fo, jf), rec(so, js)])
}
