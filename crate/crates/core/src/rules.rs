//! Published analytical tuning rules for PID and FOPID controllers, driven by SOPTD parameters.
//!
//! Every rule exists twice: a hand-coded evaluator (used by [`apply_rule`]) and a text form in
//! the expression grammar of [`crate::gp`]. Tests keep the two in agreement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::gp::prot::{clamp, pdiv, plog, psqrt, root4};
use crate::gp::{parse_expr, ExprTree, FeatureVector};
use crate::reduction::ReducedModel;
use crate::sim::{ControllerKind, FopidParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoptdParams {
    #[serde(rename = "K")]
    pub k: f64,
    pub tau_max: f64,
    pub tau_min: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl SoptdParams {
    pub fn new(k: f64, tau_max: f64, tau_min: f64, l: f64) -> Result<Self> {
        let p = Self {
            k,
            tau_max,
            tau_min,
            l,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.k, self.tau_max, self.tau_min, self.l]
            .iter()
            .all(|v| v.is_finite());
        if !finite
            || self.k == 0.0
            || self.tau_min <= 0.0
            || self.tau_max < self.tau_min
            || self.l < 0.0
        {
            return Err(invalid_arg(format!(
                "SOPTD parameters need K != 0, tau_max >= tau_min > 0 and L >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn features(&self) -> FeatureVector {
        FeatureVector::new(self.k, self.tau_max, self.tau_min, self.l)
    }
}

impl TryFrom<&ReducedModel> for SoptdParams {
    type Error = Error;
    fn try_from(m: &ReducedModel) -> Result<Self> {
        let tau_min = m
            .tau_min
            .ok_or_else(|| invalid_arg("rules need a SOPTD model, got FOPTD"))?;
        Self::new(m.k, m.tau_max, tau_min, m.l)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gene {
    Single,
    Multi,
}

/// Where a set of controller parameters came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningSource {
    Ga,
    Single,
    Multi,
}

impl TuningSource {
    pub const ALL: [TuningSource; 3] =
        [TuningSource::Ga, TuningSource::Single, TuningSource::Multi];

    pub fn gene(self) -> Option<Gene> {
        match self {
            TuningSource::Ga => None,
            TuningSource::Single => Some(Gene::Single),
            TuningSource::Multi => Some(Gene::Multi),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TuningSource::Ga => "ga",
            TuningSource::Single => "single",
            TuningSource::Multi => "multi",
        }
    }
}

impl From<Gene> for TuningSource {
    fn from(g: Gene) -> Self {
        match g {
            Gene::Single => TuningSource::Single,
            Gene::Multi => TuningSource::Multi,
        }
    }
}

impl fmt::Display for TuningSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleKind {
    pub controller: ControllerKind,
    pub gene: Gene,
}

impl RuleKind {
    pub const SG_PID: Self = Self::new(ControllerKind::Pid, Gene::Single);
    pub const MG_PID: Self = Self::new(ControllerKind::Pid, Gene::Multi);
    pub const SG_FOPID: Self = Self::new(ControllerKind::Fopid, Gene::Single);
    pub const MG_FOPID: Self = Self::new(ControllerKind::Fopid, Gene::Multi);
    pub const ALL: [Self; 4] = [Self::SG_PID, Self::MG_PID, Self::SG_FOPID, Self::MG_FOPID];

    pub const fn new(controller: ControllerKind, gene: Gene) -> Self {
        Self { controller, gene }
    }

    /// Parameter names produced by this rule, in output order.
    pub fn parameters(&self) -> &'static [&'static str] {
        match self.controller {
            ControllerKind::Pid => &["Kp", "Ki", "Kd"],
            ControllerKind::Fopid => &["Kp", "Ki", "Kd", "lambda", "mu"],
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = match self.gene {
            Gene::Single => "sg",
            Gene::Multi => "mg",
        };
        write!(f, "{g}-{}", self.controller)
    }
}

impl FromStr for RuleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (g, c) = s.split_once('-').ok_or_else(|| {
            invalid_arg(format!("rule must look like sg-pid or mg-fopid, got {s:?}"))
        })?;
        let gene = match g.to_ascii_lowercase().as_str() {
            "sg" | "single" => Gene::Single,
            "mg" | "multi" => Gene::Multi,
            _ => return Err(invalid_arg(format!("unknown gene mode {g:?}"))),
        };
        Ok(Self::new(c.parse()?, gene))
    }
}

struct Vars {
    k: f64,
    tx: f64,
    tn: f64,
    l: f64,
    /// tau_max / tau_min
    r: f64,
    /// L / tau_min
    lt: f64,
    /// L / tau_max
    lx: f64,
}

impl Vars {
    fn new(p: &SoptdParams) -> Self {
        Self {
            k: p.k,
            tx: p.tau_max,
            tn: p.tau_min,
            l: p.l,
            r: pdiv(p.tau_max, p.tau_min),
            lt: pdiv(p.l, p.tau_min),
            lx: pdiv(p.l, p.tau_max),
        }
    }
}

fn cos(x: f64) -> f64 {
    x.cos()
}
fn sin(x: f64) -> f64 {
    x.sin()
}
fn tanh(x: f64) -> f64 {
    x.tanh()
}
fn exp(x: f64) -> f64 {
    clamp(x.exp())
}
fn sq(x: f64) -> f64 {
    x * x
}

fn sg_pid(v: &Vars) -> [f64; 3] {
    let Vars {
        k,
        tx,
        tn,
        l,
        lt,
        lx,
        ..
    } = *v;
    // Kp: the 0.09685 bracket runs to the end of the expression.
    let inner =
        psqrt(pdiv(tx, cos(tn))) + tanh(pdiv(tn, tx) - tx * tx) + cos(pdiv(l * tx, tn)) + root4(tx)
            - pdiv(l * tx, tn);
    let rest =
        -sin(1.6e-6 * (tx * tx) * (1250.0 * l + 2117.0) * (500.0 * (psqrt(lx) - lt) + 1877.0))
            + tanh(tn - l)
            - sin(tx)
            - pdiv(6.483756, tx);
    let kp = (1.4 + 0.09685 * (inner + rest)) / k;
    let ki = (1.003
        - 0.2452 * psqrt(4.0 * plog(tx + l) + 2.0 * tanh(tn) + 3.0 * tanh(l) + tanh(tx) - 0.8913))
        / k;
    let kd = (-1.024
        + 0.539
            * (psqrt((0.0 - (lt + tn * tn - 1.082)) * plog(cos(tn)) * (cos(tn) - 1.031))
                + psqrt(pdiv(l * l, tx * tx * psqrt(tx)) + cos(l) + tx)
                + plog(tanh(pdiv(2.8546 * tn, l)) + cos(l) + lx)))
        / k;
    [kp, ki, kd]
}

const SG_PID_TEXT: [&str; 3] = [
    "(1.4 + 0.09685 * (psqrt(pdiv(tau_max, cos(tau_min))) + tanh(pdiv(tau_min, tau_max) - tau_max * tau_max) \
     + cos(pdiv(L * tau_max, tau_min)) + psqrt(psqrt(tau_max)) - pdiv(L * tau_max, tau_min) \
     - sin(1.6e-6 * (tau_max * tau_max) * (1250 * L + 2117) * (500 * (psqrt(x7) - x6) + 1877)) \
     + tanh(tau_min - L) - sin(tau_max) - pdiv(6.483756, tau_max))) / K",
    "(1.003 - 0.2452 * psqrt(4 * plog(tau_max + L) + 2 * tanh(tau_min) + 3 * tanh(L) + tanh(tau_max) - 0.8913)) / K",
    "(-1.024 + 0.539 * (psqrt((0 - (x6 + tau_min * tau_min - 1.082)) * plog(cos(tau_min)) * (cos(tau_min) - 1.031)) \
     + psqrt(pdiv(L * L, tau_max * tau_max * psqrt(tau_max)) + cos(L) + tau_max) \
     + plog(tanh(pdiv(2.8546 * tau_min, L)) + cos(L) + x7))) / K",
];

fn mg_pid(v: &Vars) -> [f64; 3] {
    let Vars {
        k,
        tx,
        tn,
        l,
        r,
        lt,
        lx,
    } = *v;
    let kp = {
        let a = 0.3362 * (sin(lx) - lt - psqrt(cos(pdiv(lt, cos(l) - lx))));
        // The operator before 0.1138 is missing in print; read as '+'.
        let b = 0.1138
            * (2.0 * plog(tx)
                - l
                - lt
                - psqrt(cos(pdiv(tx * tx, cos(tx))))
                - psqrt(cos(pdiv(1.0, tn * cos(l)))));
        let c = 0.4052 * (psqrt(cos(pdiv(cos(tn), sin(lt) - lt))) + cos(cos(sin(l))));
        let d = -0.4627 * (psqrt(cos(pdiv(tanh(lt), l))) + cos(2.0 * plog(tx)));
        let e = 0.232 * psqrt(plog(cos(tx)));
        let f = 0.414 * root4(cos(pdiv(lx - cos(lt), sin(lt) - lt)));
        let g = -0.3325 * root4(cos(pdiv(cos(l) - lx, cos(l))));
        (1.468 + a + b + c + d + e + f + g) / k
    };
    let ki = {
        let q = pdiv(l, tn * cos(tn));
        (1.426
            - 0.1283 * pdiv(l, tn * plog(tn + r))
            - 0.0872 * tanh(sin(plog(tn) + 51.86 + pdiv(cos(tn), l + lt)))
            - 0.0446 * tanh(sin(r + tx + 51.86 + pdiv(cos(plog(tn)), 5.806 * tanh(tx))))
            - 0.1572 * plog(tn)
            - 1.268 * tanh(tanh(tx))
            - 0.0437 * plog(sin(tx))
            - 0.003763 * (r + tx + q)
            + 0.0052 * (tanh(tn + q) + q + plog(cos(lt))))
            / k
    };
    let kd = {
        // Bracket reading chosen by least total deviation; still off, see the allowlist.
        let a = plog(r * tanh(l - 7.535)) * psqrt(pdiv(tanh(r), lx - 7.432));
        let c3 = psqrt(cos(plog(plog(tn))));
        let lg = plog(
            0.008 * r * (125.0 * lx - 946.0) * cos(plog(tn)) * psqrt(pdiv(tx - 7.432, l - 7.7285)),
        );
        (0.9524 * (a + lx + 6.177) + pdiv(psqrt(l), lt - 7.566) + pdiv(0.1826, tx - 7.5439)
            - tn
            - tanh(r * exp(r))
            - 0.2212 * (plog(plog(r) - 4.001 - l) + tanh(cos(0.1247 * r)))
            - sin(sin(psqrt(plog(l))))
            - 0.8712 * (psqrt(l) + cos(c3))
            - 0.6186 * exp(c3)
            - 0.104216
                * pdiv(
                    psqrt(0.0 - tanh(tn - lx)),
                    plog(pdiv(2.391, tn) + 0.8314 - tx),
                )
            + 2.124 * plog(psqrt(exp(tn + plog(tn)) - psqrt(cos(tn))))
            - 0.163 * (lg + lx + pdiv(psqrt(tx), lx - 8.36327) + psqrt(tx) - tn))
            / k
    };
    [kp, ki, kd]
}

const MG_PID_TEXT: [&str; 3] = [
    "(1.468 + 0.3362 * (sin(x7) - x6 - psqrt(cos(pdiv(x6, cos(L) - x7)))) \
     + 0.1138 * (2 * plog(tau_max) - L - x6 - psqrt(cos(pdiv(tau_max * tau_max, cos(tau_max)))) - psqrt(cos(pdiv(1, tau_min * cos(L))))) \
     + 0.4052 * (psqrt(cos(pdiv(cos(tau_min), sin(x6) - x6))) + cos(cos(sin(L)))) \
     + -0.4627 * (psqrt(cos(pdiv(tanh(x6), L))) + cos(2 * plog(tau_max))) \
     + 0.232 * psqrt(plog(cos(tau_max))) \
     + 0.414 * psqrt(psqrt(cos(pdiv(x7 - cos(x6), sin(x6) - x6)))) \
     + -0.3325 * psqrt(psqrt(cos(pdiv(cos(L) - x7, cos(L)))))) / K",
    "(1.426 - 0.1283 * pdiv(L, tau_min * plog(tau_min + x5)) \
     - 0.0872 * tanh(sin(plog(tau_min) + 51.86 + pdiv(cos(tau_min), L + x6))) \
     - 0.0446 * tanh(sin(x5 + tau_max + 51.86 + pdiv(cos(plog(tau_min)), 5.806 * tanh(tau_max)))) \
     - 0.1572 * plog(tau_min) - 1.268 * tanh(tanh(tau_max)) - 0.0437 * plog(sin(tau_max)) \
     - 0.003763 * (x5 + tau_max + pdiv(L, tau_min * cos(tau_min))) \
     + 0.0052 * (tanh(tau_min + pdiv(L, tau_min * cos(tau_min))) + pdiv(L, tau_min * cos(tau_min)) + plog(cos(x6)))) / K",
    "(0.9524 * (plog(x5 * tanh(L - 7.535)) * psqrt(pdiv(tanh(x5), x7 - 7.432)) + x7 + 6.177) \
     + pdiv(psqrt(L), x6 - 7.566) + pdiv(0.1826, tau_max - 7.5439) - tau_min - tanh(x5 * exp(x5)) \
     - 0.2212 * (plog(plog(x5) - 4.001 - L) + tanh(cos(0.1247 * x5))) - sin(sin(psqrt(plog(L)))) \
     - 0.8712 * (psqrt(L) + cos(psqrt(cos(plog(plog(tau_min)))))) - 0.6186 * exp(psqrt(cos(plog(plog(tau_min))))) \
     - 0.104216 * pdiv(psqrt(0 - tanh(tau_min - x7)), plog(pdiv(2.391, tau_min) + 0.8314 - tau_max)) \
     + 2.124 * plog(psqrt(exp(tau_min + plog(tau_min)) - psqrt(cos(tau_min)))) \
     - 0.163 * (plog(0.008 * x5 * (125 * x7 - 946) * cos(plog(tau_min)) * psqrt(pdiv(tau_max - 7.432, L - 7.7285))) \
     + x7 + pdiv(psqrt(tau_max), x7 - 8.36327) + psqrt(tau_max) - tau_min)) / K",
];

fn sg_fopid(v: &Vars) -> [f64; 5] {
    let Vars {
        k,
        tx,
        tn,
        l,
        r,
        lt,
        lx,
    } = *v;
    // Kp: the 0.2775 bracket covers the second fraction too.
    let kp = {
        let a = lt + tanh(l * l + pdiv(l, tn * tx) + pdiv(cos(r), exp(tx)));
        let b = pdiv(
            psqrt(tanh(lt) - tn),
            (pdiv(plog(lt), tx) + 2.0 * tx)
                * (2.0 * sq(plog(tx)) + 2.0 * pdiv(l, tn * (tx * tx * tx))),
        );
        (1.188 - 0.2775 * (a + b)) / k
    };
    // Ki: the 0.08 bracket includes the squared-log tail.
    let ki = {
        let a =
            pdiv(sq(sq(r)), cos(l) * plog(tx) + tanh(tn) + tx) * sq(pdiv(tanh(plog(tx)), 0.254));
        let b = sq(pdiv(plog(0.1851 * sin(tn)), tx));
        (0.314 - 0.08 * (a - b)) / k
    };
    let kd = {
        let br = (sq(tn - 1.972) * sq(sin(sin(tx))) + psqrt(sin(pdiv(4.86129, l)))) - sin(tx)
            + psqrt(sin(r))
            + psqrt(sin(pdiv(-9.56649, tn)))
            + plog(sin(r))
            + psqrt(plog(r))
            + psqrt(sin(pdiv(-9.61668, tn)))
            - cos(lx)
            + cos(4.735 * r);
        (0.04877 + 0.2898 * cos(r) + 0.1449 * br) / k
    };
    // The radical covers tau_max * L.
    let lambda = 0.9974 - 0.002605 * psqrt(tx * l) * (tx - tanh(tn));
    let mu = 2.0205
        + 1.708
            * (tanh(tanh(tanh(l)))
                - cos(tanh(r))
                - cos(cos(tanh(pdiv(l * tx, tn))))
                - cos(tanh(l + lx + pdiv(tx * tx, tn * tn)))
                + cos(cos(pdiv(l * tn, tx * tx * exp(tn)))));
    [kp, ki, kd, lambda, mu]
}

const SG_FOPID_TEXT: [&str; 5] = [
    "(1.188 - 0.2775 * (x6 + tanh(L * L + pdiv(L, tau_min * tau_max) + pdiv(cos(x5), exp(tau_max))) \
     + pdiv(psqrt(tanh(x6) - tau_min), (pdiv(plog(x6), tau_max) + 2 * tau_max) \
     * (2 * square(plog(tau_max)) + 2 * pdiv(L, tau_min * (tau_max * tau_max * tau_max)))))) / K",
    "(0.314 - 0.08 * (pdiv(square(square(x5)), cos(L) * plog(tau_max) + tanh(tau_min) + tau_max) \
     * square(tanh(plog(tau_max)) / 0.254) - square(pdiv(plog(0.1851 * sin(tau_min)), tau_max)))) / K",
    "(0.04877 + 0.2898 * cos(x5) + 0.1449 * ((square(tau_min - 1.972) * square(sin(sin(tau_max))) \
     + psqrt(sin(pdiv(4.86129, L)))) - sin(tau_max) + psqrt(sin(x5)) + psqrt(sin(pdiv(-9.56649, tau_min))) \
     + plog(sin(x5)) + psqrt(plog(x5)) + psqrt(sin(pdiv(-9.61668, tau_min))) - cos(x7) + cos(4.735 * x5))) / K",
    "0.9974 - 0.002605 * psqrt(tau_max * L) * (tau_max - tanh(tau_min))",
    "2.0205 + 1.708 * (tanh(tanh(tanh(L))) - cos(tanh(x5)) - cos(cos(tanh(pdiv(L * tau_max, tau_min)))) \
     - cos(tanh(L + x7 + pdiv(tau_max * tau_max, tau_min * tau_min))) \
     + cos(cos(pdiv(L * tau_min, tau_max * tau_max * exp(tau_min)))))",
];

fn mg_fopid(v: &Vars) -> [f64; 5] {
    let Vars {
        k,
        tx,
        tn,
        l,
        r,
        lt,
        lx,
    } = *v;
    let r2 = r * r;
    let kp = {
        let q = pdiv(l * (tx * tx), tn * tn * tn);
        let w = pdiv(l * l, tx * tn);
        (-5.94177 * tanh(root4(plog(7.964 + lt - r))) - 1.146 * psqrt(sin(sin(sin(sin(r2)))))
            + 0.04561
                * (cos((1000.0 * r2 - 8049.0 - 1000.0 * lt) * (0.001 * q))
                    + cos(8.757 * q)
                    + psqrt(pdiv(r2 * tanh(lx), tanh(r))))
            + 6.5488
            - 0.2383 * cos(plog(tanh(lt * tanh(l) + sin(tn + r))))
            + 0.24655 * cos(plog(tanh(lx + plog(w))))
            - 0.1022
                * psqrt(
                    plog(2.0 * r) * pdiv(l * tx, tn * tn) * pdiv(sin(w), plog(w))
                        + cos(0.284 + pdiv(tx * tx, l) - psqrt(tn)),
                )
            + 0.2571 * (cos(plog(l)) - sin(cos(cos(exp(pdiv(7.646 * l, tx)))))))
            / k
    };
    // Ki: grouping of the printed body is ambiguous; both outer brackets read as closing last.
    let ki = {
        let h = plog(lt);
        let sinh_h = (exp(h) - exp(0.0 - h)) * 0.5;
        let cosh_h = (exp(h) + exp(0.0 - h)) * 0.5;
        let first = -0.01641
            * (plog(plog(l) + r + plog(tn))
                + cos(r2 + r + pdiv(exp(tx), plog(l)))
                + plog(tn)
                + r
                + tanh(r2)
                + plog(pdiv(l * l, tx * tx)));
        let mid = -0.02497
            * exp(tanh(tx) + tanh(exp(tn)) + tanh(3.0 * tx) + tanh(1.989 + pdiv(exp(l), tn * tn)))
            - 0.00019 * (tx * tx)
            - 0.00009464
                * (sq(pdiv(l, tx * tn))
                    + pdiv(
                        tx * tx * sinh_h + r + pdiv(exp(lx), plog(l)),
                        cosh_h * cos(plog(tn)),
                    ))
            - 0.0008462 * pdiv(sq(sq(l)), sq(sq(tx)))
            + 0.059 * r
            + 0.0295 * (r2 + plog(plog(tn)) + plog(cos(exp(2.0 * tn))))
            + 0.02669
                * plog(tanh(l + pdiv(l, tn * plog(l))))
                * (cos(tn) + cos(exp(2.0 * r)) + plog(tn))
            - 0.03
                * (plog(tanh(l + pdiv(l, tx * tx)))
                    + r2
                    + 9.464e-5 * (pdiv(exp(l), tx * tx) - sq(tn + r)));
        let last = -0.03295
            * (sq(cos(plog(plog(tn)))) + tanh(pdiv(l, plog(l) + r2 * r2)) + cos(plog(lt) + r)
                - sin(0.7031 + l - pdiv(l * l, tx * tx))
                + tn);
        (1.6428 + first + mid + last) / k
    };
    // Kd: five nested cosines.
    let kd = {
        let e2n = exp(2.0 * tn);
        (3.453 - 4.196 * cos(cos(cos(cos(cos(tn + r))))) - 0.3846 * (sin(sin(psqrt(r))) - tx)
            + 0.1009 * plog(pdiv(psqrt(cos(tx)), tx + l - exp(tn)))
            + 0.008964
                * pdiv(
                    sin(psqrt(r)) + lx - cos(tn - tanh(lt)) + tn,
                    tanh(tanh(tn - pdiv(l * l, tn * tn))),
                )
            - 0.131 * cos(e2n * (plog(lx) - lt + l) + cos(r - 2.021 - r2))
            + 0.08997 * cos(exp(2.0 * (tn + r)) * (tx - tn - 2.0 * r) + e2n * (lt - plog(lx) - l))
            + 0.1828 * cos(e2n * (2.0 * tn - lt + l) + cos(tn)))
            / k
    };
    let lambda = -0.0001 * pdiv(tx, l)
        + 0.261 * sq(plog(cos(tanh(tx + 6.405))))
        + 0.01138 * lt
        + 0.00264 * plog(pdiv(tx - l, tn))
        - 0.0001788 * (exp(tanh(tn)) * sq(l + tx) + sq(cos(pdiv(l * l, tn * tn))))
        + 0.004568 * psqrt(exp(tanh(lt)))
        + 0.88968;
    // mu: the double exponential is read as e^(e^(0.4448 ln r)); the printed fraction overflows.
    let mu = 0.876643 * tanh(tanh(l))
        + 0.0055
            * pdiv(
                pdiv(r, tanh(lt)) + pdiv(cos(exp(lt)), cos(l - lt)),
                plog(lt),
            )
        - 0.06738 * plog(plog(lt) + cos(r))
        - 0.2712 * cos(pdiv(tx - l, tn))
        + 0.01116 * exp(exp(0.4448 * plog(r)))
        + 0.04845 * plog(sin(sin(pdiv(lx + lt, plog(cos(l))))))
        - 0.0505 * plog(sin(sin(pdiv(r, tanh(lt)))))
        + 0.06646;
    [kp, ki, kd, lambda, mu]
}

const MG_FOPID_TEXT: [&str; 5] = [
    "(-5.94177 * tanh(psqrt(psqrt(plog(7.964 + x6 - x5)))) - 1.146 * psqrt(sin(sin(sin(sin(x5 * x5))))) \
     + 0.04561 * (cos((1000 * (x5 * x5) - 8049 - 1000 * x6) * (0.001 * pdiv(L * (tau_max * tau_max), tau_min * tau_min * tau_min))) \
     + cos(8.757 * pdiv(L * (tau_max * tau_max), tau_min * tau_min * tau_min)) + psqrt(pdiv(x5 * x5 * tanh(x7), tanh(x5)))) \
     + 6.5488 - 0.2383 * cos(plog(tanh(x6 * tanh(L) + sin(tau_min + x5)))) \
     + 0.24655 * cos(plog(tanh(x7 + plog(pdiv(L * L, tau_max * tau_min))))) \
     - 0.1022 * psqrt(plog(2 * x5) * pdiv(L * tau_max, tau_min * tau_min) \
     * pdiv(sin(pdiv(L * L, tau_max * tau_min)), plog(pdiv(L * L, tau_max * tau_min))) \
     + cos(0.284 + pdiv(tau_max * tau_max, L) - psqrt(tau_min))) \
     + 0.2571 * (cos(plog(L)) - sin(cos(cos(exp(pdiv(7.646 * L, tau_max))))))) / K",
    "(1.6428 + -0.01641 * (plog(plog(L) + x5 + plog(tau_min)) + cos(x5 * x5 + x5 + pdiv(exp(tau_max), plog(L))) \
     + plog(tau_min) + x5 + tanh(x5 * x5) + plog(pdiv(L * L, tau_max * tau_max))) \
     + (-0.02497 * exp(tanh(tau_max) + tanh(exp(tau_min)) + tanh(3 * tau_max) + tanh(1.989 + pdiv(exp(L), tau_min * tau_min))) \
     - 0.00019 * (tau_max * tau_max) \
     - 0.00009464 * (square(pdiv(L, tau_max * tau_min)) + pdiv(tau_max * tau_max * ((exp(plog(x6)) - exp(0 - plog(x6))) * 0.5) \
     + x5 + pdiv(exp(x7), plog(L)), (exp(plog(x6)) + exp(0 - plog(x6))) * 0.5 * cos(plog(tau_min)))) \
     - 0.0008462 * pdiv(square(square(L)), square(square(tau_max))) + 0.059 * x5 \
     + 0.0295 * (x5 * x5 + plog(plog(tau_min)) + plog(cos(exp(2 * tau_min)))) \
     + 0.02669 * plog(tanh(L + pdiv(L, tau_min * plog(L)))) * (cos(tau_min) + cos(exp(2 * x5)) + plog(tau_min)) \
     - 0.03 * (plog(tanh(L + pdiv(L, tau_max * tau_max))) + x5 * x5 \
     + 9.464e-5 * (pdiv(exp(L), tau_max * tau_max) - square(tau_min + x5)))) \
     + -0.03295 * (square(cos(plog(plog(tau_min)))) + tanh(pdiv(L, plog(L) + x5 * x5 * (x5 * x5))) + cos(plog(x6) + x5) \
     - sin(0.7031 + L - pdiv(L * L, tau_max * tau_max)) + tau_min)) / K",
    "(3.453 - 4.196 * cos(cos(cos(cos(cos(tau_min + x5))))) - 0.3846 * (sin(sin(psqrt(x5))) - tau_max) \
     + 0.1009 * plog(pdiv(psqrt(cos(tau_max)), tau_max + L - exp(tau_min))) \
     + 0.008964 * pdiv(sin(psqrt(x5)) + x7 - cos(tau_min - tanh(x6)) + tau_min, tanh(tanh(tau_min - pdiv(L * L, tau_min * tau_min)))) \
     - 0.131 * cos(exp(2 * tau_min) * (plog(x7) - x6 + L) + cos(x5 - 2.021 - x5 * x5)) \
     + 0.08997 * cos(exp(2 * (tau_min + x5)) * (tau_max - tau_min - 2 * x5) + exp(2 * tau_min) * (x6 - plog(x7) - L)) \
     + 0.1828 * cos(exp(2 * tau_min) * (2 * tau_min - x6 + L) + cos(tau_min))) / K",
    "-0.0001 * pdiv(tau_max, L) + 0.261 * square(plog(cos(tanh(tau_max + 6.405)))) + 0.01138 * x6 \
     + 0.00264 * plog(pdiv(tau_max - L, tau_min)) \
     - 0.0001788 * (exp(tanh(tau_min)) * square(L + tau_max) + square(cos(pdiv(L * L, tau_min * tau_min)))) \
     + 0.004568 * psqrt(exp(tanh(x6))) + 0.88968",
    "0.876643 * tanh(tanh(L)) + 0.0055 * pdiv(pdiv(x5, tanh(x6)) + pdiv(cos(exp(x6)), cos(L - x6)), plog(x6)) \
     - 0.06738 * plog(plog(x6) + cos(x5)) - 0.2712 * cos(pdiv(tau_max - L, tau_min)) \
     + 0.01116 * exp(exp(0.4448 * plog(x5))) \
     + 0.04845 * plog(sin(sin(pdiv(x7 + x6, plog(cos(L)))))) - 0.0505 * plog(sin(sin(pdiv(x5, tanh(x6))))) + 0.06646",
];

/// Evaluates a published rule. Non-finite results are mapped through the protected clamp.
pub fn apply_rule(kind: RuleKind, p: &SoptdParams) -> Result<FopidParams> {
    p.validate()?;
    Ok(apply_unchecked(kind, p))
}

fn apply_unchecked(kind: RuleKind, p: &SoptdParams) -> FopidParams {
    let v = Vars::new(p);
    match (kind.controller, kind.gene) {
        (ControllerKind::Pid, g) => {
            let [kp, ki, kd] = if g == Gene::Single {
                sg_pid(&v)
            } else {
                mg_pid(&v)
            };
            FopidParams::pid(clamp(kp), clamp(ki), clamp(kd))
        }
        (ControllerKind::Fopid, g) => {
            let [kp, ki, kd, lambda, mu] = if g == Gene::Single {
                sg_fopid(&v)
            } else {
                mg_fopid(&v)
            };
            FopidParams::new(clamp(kp), clamp(ki), clamp(kd), clamp(lambda), clamp(mu))
        }
    }
}

/// Rule text in the expression grammar, one entry per parameter.
pub fn rule_text(kind: RuleKind) -> &'static [&'static str] {
    match (kind.controller, kind.gene) {
        (ControllerKind::Pid, Gene::Single) => &SG_PID_TEXT,
        (ControllerKind::Pid, Gene::Multi) => &MG_PID_TEXT,
        (ControllerKind::Fopid, Gene::Single) => &SG_FOPID_TEXT,
        (ControllerKind::Fopid, Gene::Multi) => &MG_FOPID_TEXT,
    }
}

/// Parsed expression trees for each parameter of a rule.
pub fn rule_trees(kind: RuleKind) -> Result<Vec<(&'static str, ExprTree)>> {
    kind.parameters()
        .iter()
        .zip(rule_text(kind))
        .map(|(name, text)| Ok((*name, parse_expr(text)?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub tau_max: f64,
    pub tau_min: f64,
    pub l: f64,
    /// `None` where the grid point is not a valid SOPTD model.
    pub params: Option<FopidParams>,
}

/// Evaluates a rule over the `tau_max x tau_min` grid at fixed `k` and `l`.
pub fn rule_surface_grid(
    kind: RuleKind,
    k: f64,
    tau_max: &[f64],
    tau_min: &[f64],
    l: f64,
) -> Vec<SurfacePoint> {
    let mut out = Vec::with_capacity(tau_max.len() * tau_min.len());
    for &tx in tau_max {
        for &tn in tau_min {
            let params = SoptdParams::new(k, tx, tn, l)
                .ok()
                .map(|p| apply_unchecked(kind, &p));
            out.push(SurfacePoint {
                tau_max: tx,
                tau_min: tn,
                l,
                params,
            });
        }
    }
    out
}

#[derive(Serialize)]
struct SurfaceCsvRow {
    tau_max: f64,
    tau_min: f64,
    #[serde(rename = "L")]
    l: f64,
    valid: bool,
    #[serde(rename = "Kp")]
    kp: Option<f64>,
    #[serde(rename = "Ki")]
    ki: Option<f64>,
    #[serde(rename = "Kd")]
    kd: Option<f64>,
    lambda: Option<f64>,
    mu: Option<f64>,
}

/// Writes surface points as CSV; invalid points have empty parameter cells.
pub fn write_surface_csv<W: std::io::Write>(points: &[SurfacePoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        let c = p.params;
        out.serialize(SurfaceCsvRow {
            tau_max: p.tau_max,
            tau_min: p.tau_min,
            l: p.l,
            valid: c.is_some(),
            kp: c.map(|c| c.kp),
            ki: c.map(|c| c.ki),
            kd: c.map(|c| c.kd),
            lambda: c.map(|c| c.lambda),
            mu: c.map(|c| c.mu),
        })?;
    }
    out.flush()?;
    Ok(())
}

/// `n` evenly spaced values on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
