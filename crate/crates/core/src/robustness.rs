//! Plant perturbation sweeps for fixed controllers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::lti::FactoredPlant;
use crate::sim::{closed_loop_step, cost_j, FopidParams, OustaloupConfig, SimConfig, Trajectory};

pub const MAX_PCT: f64 = 90.0;
pub const SETTLE_BAND: f64 = 0.02;
pub const SETTLE_WINDOW: f64 = 10.0;

/// Relative changes in percent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    #[serde(rename = "dK")]
    pub dk_pct: f64,
    #[serde(rename = "dTau")]
    pub dtau_pct: f64,
    #[serde(rename = "dL")]
    pub dl_pct: f64,
}

impl PerturbationSpec {
    pub fn new(dk_pct: f64, dtau_pct: f64, dl_pct: f64) -> Result<Self> {
        let s = Self {
            dk_pct,
            dtau_pct,
            dl_pct,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn nominal() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.dk_pct, self.dtau_pct, self.dl_pct] {
            if !v.is_finite() || v.abs() > MAX_PCT {
                return Err(invalid_arg(format!(
                    "perturbation {v}% outside +/-{MAX_PCT}%"
                )));
            }
        }
        Ok(())
    }

    /// Multiplicative inverse, so that applying `self` then `inverse()` is the identity on K and tau.
    pub fn inverse(&self) -> Self {
        let inv = |p: f64| 100.0 * (1.0 / (1.0 + p / 100.0) - 1.0);
        Self {
            dk_pct: inv(self.dk_pct),
            dtau_pct: inv(self.dtau_pct),
            dl_pct: inv(self.dl_pct),
        }
    }
}

/// Nominal plus the eight sign combinations of the given magnitudes.
pub fn corner_specs(dk: f64, dtau: f64, dl: f64) -> Vec<PerturbationSpec> {
    let mut out = vec![PerturbationSpec::nominal()];
    for sk in [1.0, -1.0] {
        for st in [1.0, -1.0] {
            for sl in [1.0, -1.0] {
                out.push(PerturbationSpec {
                    dk_pct: sk * dk,
                    dtau_pct: st * dtau,
                    dl_pct: sl * dl,
                });
            }
        }
    }
    out
}

pub fn default_corners() -> Vec<PerturbationSpec> {
    corner_specs(10.0, 20.0, 50.0)
}

/// Scales gain, dominant time constants and delay of a factored plant.
///
/// A delay-free plant with an `apparent_delay` gets `max(0, dL) * apparent_delay` of dead time;
/// negative delay changes cannot remove lag that is not a pure delay.
pub fn perturb_plant(p: &FactoredPlant, spec: &PerturbationSpec) -> Result<FactoredPlant> {
    spec.validate()?;
    let mut out = p.clone();
    out.gain *= 1.0 + spec.dk_pct / 100.0;
    for &i in &p.dominant {
        let tau = out
            .time_constants
            .get_mut(i)
            .ok_or_else(|| invalid_arg(format!("dominant index {i} out of range")))?;
        *tau *= 1.0 + spec.dtau_pct / 100.0;
        if *tau <= 0.0 {
            return Err(invalid_arg(
                "perturbation made a time constant non-positive",
            ));
        }
    }
    if p.delay > 0.0 {
        out.delay = p.delay * (1.0 + spec.dl_pct / 100.0);
    } else if let Some(la) = p.apparent_delay {
        out.delay = (spec.dl_pct / 100.0).max(0.0) * la;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    #[serde(rename = "dK")]
    pub dk_pct: f64,
    #[serde(rename = "dTau")]
    pub dtau_pct: f64,
    #[serde(rename = "dL")]
    pub dl_pct: f64,
    #[serde(rename = "J", with = "crate::serde_ext::inf_null")]
    pub j: f64,
    #[serde(with = "crate::serde_ext::inf_null")]
    pub overshoot: f64,
    pub settled: bool,
}

impl RobustnessRow {
    pub fn spec(&self) -> PerturbationSpec {
        PerturbationSpec {
            dk_pct: self.dk_pct,
            dtau_pct: self.dtau_pct,
            dl_pct: self.dl_pct,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CornerResult {
    pub row: RobustnessRow,
    pub trajectory: Trajectory,
}

/// Simulates `ctrl` on every perturbed plant. Diverged corners are reported with `J = inf`.
pub fn robustness_sweep(
    plant: &FactoredPlant,
    ctrl: &FopidParams,
    specs: &[PerturbationSpec],
    ocfg: &OustaloupConfig,
    scfg: &SimConfig,
) -> Result<Vec<CornerResult>> {
    specs
        .par_iter()
        .map(|spec| {
            let p = perturb_plant(plant, spec)?.to_delayed_tf();
            let trajectory = closed_loop_step(&p, ctrl, ocfg, scfg)?;
            let row = RobustnessRow {
                dk_pct: spec.dk_pct,
                dtau_pct: spec.dtau_pct,
                dl_pct: spec.dl_pct,
                j: cost_j(&trajectory, scfg.w1, scfg.w2),
                overshoot: trajectory.overshoot(),
                settled: trajectory.settled(SETTLE_BAND, SETTLE_WINDOW),
            };
            Ok(CornerResult { row, trajectory })
        })
        .collect()
}
