//! Closed-loop simulation of PID / fractional-order PID control, the ITAE+ISCO cost
//! and GA tuning of controller parameters.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_config, Error, Result};
use crate::ga::{run_ga, GaConfig, GaResult};
use crate::lti::{poly, DelayedTf, RationalTf, StateSpace};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FopidParams {
    #[serde(rename = "Kp")]
    pub kp: f64,
    #[serde(rename = "Ki")]
    pub ki: f64,
    #[serde(rename = "Kd")]
    pub kd: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl FopidParams {
    pub fn new(kp: f64, ki: f64, kd: f64, lambda: f64, mu: f64) -> Self {
        Self {
            kp,
            ki,
            kd,
            lambda,
            mu,
        }
    }

    pub fn pid(kp: f64, ki: f64, kd: f64) -> Self {
        Self::new(kp, ki, kd, 1.0, 1.0)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.kp, self.ki, self.kd, self.lambda, self.mu]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Pid,
    Fopid,
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ControllerKind::Pid => "pid",
            ControllerKind::Fopid => "fopid",
        })
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pid" => Ok(ControllerKind::Pid),
            "fopid" => Ok(ControllerKind::Fopid),
            _ => Err(invalid_arg(format!("unknown controller kind {s:?}"))),
        }
    }
}

/// Recursive pole/zero approximation of `s^alpha` over `[omega_b, omega_h]` rad/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OustaloupConfig {
    pub n_poles: usize,
    pub omega_b: f64,
    pub omega_h: f64,
}

impl Default for OustaloupConfig {
    fn default() -> Self {
        Self {
            n_poles: 5,
            omega_b: 1e-2,
            omega_h: 1e2,
        }
    }
}

impl OustaloupConfig {
    fn validate(&self) -> Result<()> {
        if self.n_poles == 0 {
            return Err(invalid_config("Oustaloup n_poles must be >= 1"));
        }
        if !(self.omega_b > 0.0 && self.omega_h > self.omega_b && self.omega_h.is_finite()) {
            return Err(invalid_config(
                "Oustaloup band must satisfy 0 < omega_b < omega_h",
            ));
        }
        Ok(())
    }
}

const ORDER_EPS: f64 = 1e-12;

/// Splits `alpha` into an integer power and a fractional part in `[0, 1)`.
fn split_order(alpha: f64) -> (i32, f64) {
    let n = alpha.floor();
    let f = alpha - n;
    if f < ORDER_EPS {
        (n as i32, 0.0)
    } else if f > 1.0 - ORDER_EPS {
        (n as i32 + 1, 0.0)
    } else {
        (n as i32, f)
    }
}

/// Band-limited `s^f` for `0 <= f < 1`.
fn oustaloup_fraction(f: f64, cfg: &OustaloupConfig) -> RationalTf {
    if f == 0.0 {
        return RationalTf::gain(1.0);
    }
    let n = cfg.n_poles as f64;
    let ratio = cfg.omega_h / cfg.omega_b;
    let mut num = vec![1.0];
    let mut den = vec![1.0];
    for k in 1..=cfg.n_poles {
        let k = k as f64;
        let wz = cfg.omega_b * ratio.powf((2.0 * k - 1.0 - f) / (2.0 * n));
        let wp = cfg.omega_b * ratio.powf((2.0 * k - 1.0 + f) / (2.0 * n));
        num = poly::mul(&num, &[1.0, wz]);
        den = poly::mul(&den, &[1.0, wp]);
    }
    RationalTf::new(poly::scale(&num, cfg.omega_h.powf(f)), den)
        .expect("finite Oustaloup coefficients")
}

fn integer_power(n: i32) -> RationalTf {
    let mut p = vec![1.0];
    p.extend(std::iter::repeat_n(0.0, n.unsigned_abs() as usize));
    let tf = if n >= 0 {
        RationalTf::new(p, vec![1.0])
    } else {
        RationalTf::new(vec![1.0], p)
    };
    tf.expect("finite coefficients")
}

/// Rational approximation of `s^alpha`: the integer part is exact, the fractional part is Oustaloup.
pub fn oustaloup_approx(alpha: f64, cfg: &OustaloupConfig) -> Result<RationalTf> {
    cfg.validate()?;
    if !(alpha.is_finite() && (-2.0..=2.0).contains(&alpha)) {
        return Err(invalid_arg(format!(
            "fractional order must lie in [-2, 2], got {alpha}"
        )));
    }
    let (n, f) = split_order(alpha);
    Ok(integer_power(n).mul(&oustaloup_fraction(f, cfg)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub time: f64,
    pub magnitude: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub w1: f64,
    pub w2: f64,
    pub setpoint_time: f64,
    pub disturbance: Option<Disturbance>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 100.0,
            dt: 0.01,
            w1: 1.0,
            w2: 1.0,
            setpoint_time: 0.0,
            disturbance: None,
        }
    }
}

impl SimConfig {
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite() && self.horizon > 0.0 && self.horizon.is_finite())
        {
            return Err(invalid_config("dt and horizon must be positive and finite"));
        }
        let n = self.horizon / self.dt;
        if (n - n.round()).abs() > 1e-6 * n.max(1.0) {
            return Err(invalid_config(format!(
                "horizon {} is not an integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        if self.w1 < 0.0 || self.w2 < 0.0 {
            return Err(invalid_config("cost weights must be >= 0"));
        }
        Ok(n.round() as usize)
    }

    fn setpoint(&self, t: f64) -> f64 {
        if t >= self.setpoint_time - 1e-9 * self.dt {
            1.0
        } else {
            0.0
        }
    }

    fn load(&self, t: f64) -> f64 {
        match self.disturbance {
            Some(d) if t >= d.time - 1e-9 * self.dt => d.magnitude,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub e: Vec<f64>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn overshoot(&self) -> f64 {
        let peak = self.y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (peak - 1.0).max(0.0)
    }

    /// `|e| < band` over the final `window` seconds.
    pub fn settled(&self, band: f64, window: f64) -> bool {
        if self.diverged || self.is_empty() {
            return false;
        }
        let t_end = *self.t.last().unwrap();
        self.t
            .iter()
            .zip(&self.e)
            .filter(|(t, _)| **t >= t_end - window - 1e-12)
            .all(|(_, e)| e.abs() < band)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "y", "u", "e"])?;
        for i in 0..self.len() {
            wr.serialize((self.t[i], self.y[i], self.u[i], self.e[i]))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Trapezoidal `int w1 t |e| + w2 u^2 dt`; diverged runs cost `+inf`.
pub fn cost_j(traj: &Trajectory, w1: f64, w2: f64) -> f64 {
    if traj.diverged {
        return f64::INFINITY;
    }
    let f: Vec<f64> = (0..traj.len())
        .map(|i| w1 * traj.t[i] * traj.e[i].abs() + w2 * traj.u[i] * traj.u[i])
        .collect();
    let mut j = 0.0;
    for i in 1..f.len() {
        j += 0.5 * (traj.t[i] - traj.t[i - 1]) * (f[i] + f[i - 1]);
    }
    if j.is_finite() {
        j
    } else {
        f64::INFINITY
    }
}

/// Linear block driven by `cz . z + cr . r`, contributing `sign * (C x + D in)` to `u`.
struct Block {
    ss: StateSpace,
    cz: RowDVector<f64>,
    cr: f64,
    sign: f64,
}

/// Plant plus controller as `z' = A z + Br r + Bv v`, `u = Ux z + Ur r`, `y = Cy z`.
struct Loop {
    a: DMatrix<f64>,
    br: DVector<f64>,
    bv: DVector<f64>,
    ux: RowDVector<f64>,
    ur: f64,
    cy: RowDVector<f64>,
}

fn scaled(tf: &RationalTf, k: f64) -> Result<StateSpace> {
    let mut ss = tf.scale(k).state_space()?;
    if ss.order() == 0 {
        ss.c = RowDVector::zeros(0);
    }
    Ok(ss)
}

/// Splits `s^n O(s)` into its polynomial part `q(s)` and strictly proper remainder, and returns
/// `q(0) + R(s)/D(s)`: the response to a step without the impulsive terms.
fn impulse_free(tf: &RationalTf) -> Result<RationalTf> {
    let num = tf.num().to_vec();
    let den = tf.den().to_vec();
    if num.len() < den.len() {
        return Ok(tf.clone());
    }
    let mut rem = num.clone();
    let qlen = num.len() - den.len() + 1;
    let mut q = vec![0.0; qlen];
    for i in 0..qlen {
        let c = rem[i] / den[0];
        q[i] = c;
        for (j, d) in den.iter().enumerate() {
            rem[i + j] -= c * d;
        }
    }
    let r = rem[qlen..].to_vec();
    let q0 = *q.last().unwrap();
    let total = poly::add(&poly::scale(&den, q0), &r);
    RationalTf::new(total, den)
}

fn build_loop(plant: &RationalTf, ctrl: &FopidParams, ocfg: &OustaloupConfig) -> Result<Loop> {
    if !plant.is_strictly_proper() {
        return Err(Error::Improper(
            "plant must be strictly proper for closed-loop simulation".into(),
        ));
    }
    let p = plant.state_space()?;
    let np = p.order();
    let embed = |row: &RowDVector<f64>| {
        let mut v = RowDVector::zeros(np);
        v.copy_from(row);
        v
    };
    let neg_cy = embed(&(-&p.c));

    let mut blocks: Vec<Block> = Vec::new();
    if ctrl.ki != 0.0 {
        let op = oustaloup_approx(-ctrl.lambda, ocfg)?;
        blocks.push(Block {
            ss: scaled(&op, ctrl.ki)?,
            cz: neg_cy.clone(),
            cr: 1.0,
            sign: 1.0,
        });
    }
    if ctrl.kd != 0.0 {
        if !(ctrl.mu.is_finite() && (-2.0..=2.0).contains(&ctrl.mu)) {
            return Err(invalid_arg(format!(
                "derivative order must lie in [-2, 2], got {}",
                ctrl.mu
            )));
        }
        let (n, f) = split_order(ctrl.mu);
        let frac = oustaloup_fraction(f, ocfg);
        if n <= 0 {
            blocks.push(Block {
                ss: scaled(&integer_power(n).mul(&frac), ctrl.kd)?,
                cz: neg_cy.clone(),
                cr: 1.0,
                sign: 1.0,
            });
        } else {
            if plant.relative_degree() <= n as isize {
                return Err(Error::Simulation(format!(
                    "derivative order {} needs plant relative degree > {n}",
                    ctrl.mu
                )));
            }
            let setpoint_path = impulse_free(&integer_power(n).mul(&frac))?;
            blocks.push(Block {
                ss: scaled(&setpoint_path, ctrl.kd)?,
                cz: RowDVector::zeros(np),
                cr: 1.0,
                sign: 1.0,
            });
            let mut ca = p.c.clone();
            for _ in 0..n {
                ca = &ca * &p.a;
            }
            blocks.push(Block {
                ss: scaled(&frac, ctrl.kd)?,
                cz: embed(&ca),
                cr: 0.0,
                sign: -1.0,
            });
        }
    }

    let total = np + blocks.iter().map(|b| b.ss.order()).sum::<usize>();
    let mut a = DMatrix::zeros(total, total);
    let mut br = DVector::zeros(total);
    let mut bv = DVector::zeros(total);
    let mut ux = RowDVector::zeros(total);
    let mut cy = RowDVector::zeros(total);
    a.view_mut((0, 0), (np, np)).copy_from(&p.a);
    bv.rows_mut(0, np).copy_from(&p.b);
    cy.columns_mut(0, np).copy_from(&p.c);
    for j in 0..np {
        ux[j] = ctrl.kp * neg_cy[j];
    }
    let mut ur = ctrl.kp;

    let mut off = np;
    for b in &blocks {
        let n = b.ss.order();
        a.view_mut((off, off), (n, n)).copy_from(&b.ss.a);
        a.view_mut((off, 0), (n, np)).copy_from(&(&b.ss.b * &b.cz));
        br.rows_mut(off, n).axpy(b.cr, &b.ss.b, 0.0);
        for j in 0..n {
            ux[off + j] += b.sign * b.ss.c[j];
        }
        for j in 0..np {
            ux[j] += b.sign * b.ss.d * b.cz[j];
        }
        ur += b.sign * b.ss.d * b.cr;
        off += n;
    }
    Ok(Loop {
        a,
        br,
        bv,
        ux,
        ur,
        cy,
    })
}

/// Block of `exp(M dt)` for `M = [[A, B], [0, 0]]`, one column per input plus first-order-hold terms.
fn discretize(
    a: &DMatrix<f64>,
    inputs: &[&DVector<f64>],
    foh: Option<&DVector<f64>>,
    dt: f64,
) -> (DMatrix<f64>, Vec<DVector<f64>>) {
    let n = a.nrows();
    let m = inputs.len() + if foh.is_some() { 2 } else { 0 };
    let mut big = DMatrix::zeros(n + m, n + m);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    for (j, b) in inputs.iter().enumerate() {
        big.view_mut((0, n + j), (n, 1)).copy_from(*b);
    }
    if let Some(b) = foh {
        let w = n + inputs.len();
        big.view_mut((0, w), (n, 1)).copy_from(b);
        big[(w, w + 1)] = 1.0;
    }
    let e = (big * dt).exp();
    let phi = e.view((0, 0), (n, n)).into_owned();
    let mut cols: Vec<DVector<f64>> = (0..m)
        .map(|j| e.view((0, n + j), (n, 1)).column(0).into_owned())
        .collect();
    if foh.is_some() {
        let last = cols.len() - 1;
        cols[last] /= dt;
    }
    (phi, cols)
}

const DIVERGENCE_GUARD: f64 = 1e6;

/// Unit-step setpoint response under unity negative feedback.
///
/// The integer part of the derivative order acts on the measured output, its fractional
/// Oustaloup factor on the error, so `lambda = mu = 1` is the classical PID with derivative
/// on measurement. Integration is exact for piecewise-constant setpoint and disturbance;
/// the delayed control signal is first-order held.
pub fn closed_loop_step(
    plant: &DelayedTf,
    ctrl: &FopidParams,
    ocfg: &OustaloupConfig,
    scfg: &SimConfig,
) -> Result<Trajectory> {
    let steps = scfg.steps()?;
    if !plant.tf.is_stable() {
        return Err(Error::Unstable("plant must be stable".into()));
    }
    let lp = build_loop(&plant.tf, ctrl, ocfg)?;
    let dt = scfg.dt;
    let mut traj = Trajectory {
        t: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        e: Vec::with_capacity(steps + 1),
        diverged: false,
    };
    let n = lp.a.nrows();
    let mut z = DVector::<f64>::zeros(n);
    let push = |traj: &mut Trajectory, k: usize, z: &DVector<f64>, u: f64| -> bool {
        let t = k as f64 * dt;
        let y = lp.cy.dot(&z.transpose());
        let r = scfg.setpoint(t);
        traj.t.push(t);
        traj.y.push(y);
        traj.u.push(u);
        traj.e.push(r - y);
        if !(y.is_finite() && u.is_finite()) || y.abs() > DIVERGENCE_GUARD {
            traj.diverged = true;
        }
        !traj.diverged
    };

    if plant.delay == 0.0 {
        let acl = &lp.a + &lp.bv * &lp.ux;
        let brc = &lp.br + &lp.bv * lp.ur;
        let (phi, g) = discretize(&acl, &[&brc, &lp.bv], None, dt);
        for k in 0..=steps {
            let t = k as f64 * dt;
            let r = scfg.setpoint(t);
            let u = lp.ux.dot(&z.transpose()) + lp.ur * r;
            if !push(&mut traj, k, &z, u) || k == steps {
                break;
            }
            z = &phi * &z + &g[0] * r + &g[1] * scfg.load(t);
        }
        return Ok(traj);
    }

    let (phi, g) = discretize(&lp.a, &[&lp.br, &lp.bv], Some(&lp.bv), dt);
    let (g_r, g_d, g0, g1) = (&g[0], &g[1], &g[2], &g[3]);
    let lag = plant.delay / dt;
    let mut hist: Vec<f64> = Vec::with_capacity(steps + 1);
    let delayed = |hist: &[f64], pos: f64| -> f64 {
        if pos < 0.0 {
            return 0.0;
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        let a = hist[i];
        let b = if frac > 0.0 { hist[i + 1] } else { a };
        a + frac * (b - a)
    };
    let ux_g1 = lp.ux.dot(&g1.transpose());
    let mut u = lp.ur * scfg.setpoint(0.0);
    let mut w = 0.0;
    for k in 0..=steps {
        hist.push(u);
        if !push(&mut traj, k, &z, u) || k == steps {
            break;
        }
        let t = k as f64 * dt;
        let r = scfg.setpoint(t);
        let pos = (k + 1) as f64 - lag;
        let base = &phi * &z + g_r * r + g_d * scfg.load(t) + g0 * w;
        let r_next = scfg.setpoint(t + dt);
        if pos <= k as f64 + 1e-12 {
            let w_next = delayed(&hist, pos);
            z = base + g1 * (w_next - w);
            w = w_next;
            u = lp.ux.dot(&z.transpose()) + lp.ur * r_next;
        } else {
            let b = pos - k as f64;
            let a = 1.0 - b;
            let zeta = base + g1 * (a * u - w);
            let u_next = (lp.ux.dot(&zeta.transpose()) + lp.ur * r_next) / (1.0 - b * ux_g1);
            z = zeta + g1 * (b * u_next);
            w = a * u + b * u_next;
            u = u_next;
        }
    }
    Ok(traj)
}

/// Cost of one parameter set; failures and divergence map to `+inf`.
pub fn evaluate_cost(
    plant: &DelayedTf,
    ctrl: &FopidParams,
    ocfg: &OustaloupConfig,
    scfg: &SimConfig,
) -> f64 {
    match closed_loop_step(plant, ctrl, ocfg, scfg) {
        Ok(tr) => cost_j(&tr, scfg.w1, scfg.w2),
        Err(_) => f64::INFINITY,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub ga: GaConfig,
    pub gain_bounds: (f64, f64),
    pub order_bounds: (f64, f64),
    /// Initial-population box for gains and orders.
    pub gain_init: (f64, f64),
    pub order_init: (f64, f64),
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            ga: GaConfig {
                mutation_scale_start: 1.0,
                mutation_scale_end: 0.05,
                ..GaConfig::DEF
            },
            gain_bounds: (0.0, 100.0),
            order_bounds: (0.0, 2.0),
            gain_init: (0.0, 1.0),
            order_init: (0.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TuneResult {
    pub kind: ControllerKind,
    pub params: FopidParams,
    #[serde(rename = "J")]
    pub j: f64,
    pub ga: GaResult,
}

fn decode_params(kind: ControllerKind, g: &[f64]) -> FopidParams {
    match kind {
        ControllerKind::Pid => FopidParams::pid(g[0], g[1], g[2]),
        ControllerKind::Fopid => FopidParams::new(g[0], g[1], g[2], g[3], g[4]),
    }
}

/// GA search of controller parameters minimising the closed-loop cost on `plant`.
pub fn tune_controller(
    plant: &DelayedTf,
    kind: ControllerKind,
    cfg: &TuneConfig,
    ocfg: &OustaloupConfig,
    scfg: &SimConfig,
) -> Result<TuneResult> {
    scfg.steps()?;
    let dims = match kind {
        ControllerKind::Pid => 3,
        ControllerKind::Fopid => 5,
    };
    let mut ga = cfg.ga.clone();
    ga.bounds = (0..dims)
        .map(|i| {
            if i < 3 {
                cfg.gain_bounds
            } else {
                cfg.order_bounds
            }
        })
        .collect();
    ga.init_range = Some(
        (0..dims)
            .map(|i| if i < 3 { cfg.gain_init } else { cfg.order_init })
            .collect(),
    );
    let res = run_ga(
        |g| evaluate_cost(plant, &decode_params(kind, g), ocfg, scfg),
        &ga,
    )?;
    Ok(TuneResult {
        kind,
        params: decode_params(kind, &res.best),
        j: res.best_objective,
        ga: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{make_testbench, Family, TestBenchSpec};
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn bench(f: Family, p: f64) -> DelayedTf {
        make_testbench(TestBenchSpec::new(f, p)).unwrap()
    }

    fn j_of(plant: &DelayedTf, c: FopidParams) -> f64 {
        let s = SimConfig::default();
        let tr = closed_loop_step(plant, &c, &OustaloupConfig::default(), &s).unwrap();
        cost_j(&tr, 1.0, 1.0)
    }

    #[test]
    fn oustaloup_integer_orders_are_exact() {
        let cfg = OustaloupConfig::default();
        assert_eq!(oustaloup_approx(0.0, &cfg).unwrap(), RationalTf::gain(1.0));
        let s = oustaloup_approx(1.0, &cfg).unwrap();
        assert_eq!(s.num(), &[1.0, 0.0]);
        assert_eq!(s.den(), &[1.0]);
        let inv = oustaloup_approx(-2.0, &cfg).unwrap();
        assert_eq!(inv.den(), &[1.0, 0.0, 0.0]);
        assert!(oustaloup_approx(2.5, &cfg).is_err());
        let bad = OustaloupConfig {
            omega_b: 10.0,
            omega_h: 1.0,
            ..cfg
        };
        assert!(oustaloup_approx(0.5, &bad).is_err());
    }

    #[test]
    fn oustaloup_half_order_at_band_centre() {
        let h = oustaloup_approx(0.5, &OustaloupConfig::default()).unwrap();
        let g = h.eval(Complex64::new(0.0, 1.0));
        assert!(20.0 * g.norm().log10() < 1.0);
        assert!((g.arg().to_degrees() - 45.0).abs() < 3.0);
    }

    #[test]
    fn oustaloup_tracks_ideal_operator_in_central_decades() {
        let cfg = OustaloupConfig::default();
        for alpha in [-0.9, -0.3, 0.2, 0.5, 0.77, 1.4] {
            let h = oustaloup_approx(alpha, &cfg).unwrap();
            let den = h.den();
            if alpha < 0.0 {
                // the factored integrator leaves one pole at the origin
                assert_eq!(*den.last().unwrap(), 0.0);
                assert!(crate::lti::routh_hurwitz_stable(&den[..den.len() - 1]));
            } else {
                assert!(h.is_stable());
            }
            let num = h.num();
            let zeros_at_origin = if alpha >= 1.0 { 1 } else { 0 };
            assert!(num[num.len() - zeros_at_origin..].iter().all(|c| *c == 0.0));
            assert!(crate::lti::routh_hurwitz_stable(
                &num[..num.len() - zeros_at_origin]
            ));
            let frac = alpha - alpha.floor();
            for i in 0..=40 {
                let w = 10f64.powf(-1.0 + 2.0 * i as f64 / 40.0);
                let g = h.eval(Complex64::new(0.0, w));
                let db = 20.0 * (g.norm() / w.powf(alpha)).log10();
                let phase = g.arg().to_degrees() - alpha * 90.0;
                let phase = (phase + 180.0).rem_euclid(360.0) - 180.0;
                assert!(db.abs() < 1.0, "alpha {alpha} w {w} dB {db}");
                // edge roll-off grows with the fractional part: about 5.4 deg at 0.95
                let limit = if frac <= 0.55 { 3.0 } else { 6.0 };
                assert!(phase.abs() < limit, "alpha {alpha} w {w} phase {phase}");
                if i == 20 {
                    assert!(phase.abs() < 0.5, "alpha {alpha} centre phase {phase}");
                }
            }
        }
    }

    #[test]
    fn zero_controller_leaves_plant_at_rest() {
        let p = bench(Family::P1, 3.0);
        let tr = closed_loop_step(
            &p,
            &FopidParams::pid(0.0, 0.0, 0.0),
            &OustaloupConfig::default(),
            &SimConfig::default(),
        )
        .unwrap();
        assert!(tr.y.iter().all(|&y| y == 0.0));
        assert!(tr.u.iter().all(|&u| u == 0.0));
        assert!(tr.e.iter().all(|&e| e == 1.0));
        assert_eq!(tr.len(), 10001);
    }

    /// Independent reference: RK4 on plant states with `u = Kp e + Ki xi - Kd y'`.
    fn classical_pid(
        plant: &DelayedTf,
        kp: f64,
        ki: f64,
        kd: f64,
        dt: f64,
        steps: usize,
        sub: usize,
    ) -> Vec<f64> {
        let ss = plant.tf.state_space().unwrap();
        let n = ss.order();
        let f = |x: &DVector<f64>| -> DVector<f64> {
            let xp = x.rows(0, n).into_owned();
            let y = ss.c.dot(&xp.transpose());
            let yd = (&ss.c * &ss.a).dot(&xp.transpose());
            let u = kp * (1.0 - y) + ki * x[n] - kd * yd;
            let mut dx = DVector::zeros(n + 1);
            dx.rows_mut(0, n).copy_from(&(&ss.a * &xp + &ss.b * u));
            dx[n] = 1.0 - y;
            dx
        };
        let h = dt / sub as f64;
        let mut x = DVector::zeros(n + 1);
        let mut ys = vec![0.0];
        for _ in 0..steps {
            for _ in 0..sub {
                let k1 = f(&x);
                let k2 = f(&(&x + &k1 * (h / 2.0)));
                let k3 = f(&(&x + &k2 * (h / 2.0)));
                let k4 = f(&(&x + &k3 * h));
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            ys.push(ss.c.dot(&x.rows(0, n).transpose()));
        }
        ys
    }

    #[test]
    fn integer_orders_match_classical_pid() {
        let p = bench(Family::P1, 3.0);
        let scfg = SimConfig {
            horizon: 30.0,
            dt: 0.05,
            ..Default::default()
        };
        let tr = closed_loop_step(
            &p,
            &FopidParams::pid(1.182448, 0.413749, 0.782454),
            &OustaloupConfig::default(),
            &scfg,
        )
        .unwrap();
        let reference = classical_pid(&p, 1.182448, 0.413749, 0.782454, 0.05, 600, 20);
        let rms = (tr
            .y
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / tr.len() as f64)
            .sqrt();
        assert!(rms < 1e-6, "rms {rms}");
    }

    #[test]
    fn fopid_with_unit_orders_is_pid() {
        let p = bench(Family::P4, 0.4);
        let s = SimConfig::default();
        let o = OustaloupConfig::default();
        let a = closed_loop_step(&p, &FopidParams::new(1.2, 0.4, 0.9, 1.0, 1.0), &o, &s).unwrap();
        let b = closed_loop_step(&p, &FopidParams::pid(1.2, 0.4, 0.9), &o, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn published_pid_costs_are_reproduced() {
        let j = j_of(
            &bench(Family::P1, 3.0),
            FopidParams::pid(1.182448, 0.413749, 0.782454),
        );
        assert_relative_eq!(j, 104.9453, max_relative = 0.01);
        let j = j_of(
            &bench(Family::P3, 5.0),
            FopidParams::pid(1.993027, 0.170803, 3.388806),
        );
        assert_relative_eq!(j, 142.1802, max_relative = 0.02);
        let j = j_of(
            &bench(Family::P2, 0.1),
            FopidParams::pid(0.796559, 0.878393, 0.010446),
        );
        assert_relative_eq!(j, 101.0431, max_relative = 0.01);
    }

    #[test]
    fn published_fopid_costs_are_reproduced() {
        let j = j_of(
            &bench(Family::P1, 3.0),
            FopidParams::new(0.567381, 0.397193, 0.336985, 0.997252, 0.238964),
        );
        assert_relative_eq!(j, 105.7456, max_relative = 0.01);
        let j = j_of(
            &bench(Family::P4, 0.4),
            FopidParams::new(0.412859, 0.461503, 0.884647, 0.995174, 0.336957),
        );
        assert_relative_eq!(j, 108.652, max_relative = 0.01);
    }

    #[test]
    fn table_pid_settles_with_small_overshoot() {
        let p = bench(Family::P1, 3.0);
        let tr = closed_loop_step(
            &p,
            &FopidParams::pid(1.182448, 0.413749, 0.782454),
            &OustaloupConfig::default(),
            &SimConfig::default(),
        )
        .unwrap();
        assert!(tr.overshoot() < 0.2);
        assert!(tr.settled(1e-3, 10.0));
        let tail: f64 = {
            let cut = SimConfig::default();
            let idx = tr.e.iter().rposition(|e| e.abs() >= 1e-3).unwrap_or(0);
            let sub = Trajectory {
                t: tr.t[idx..].to_vec(),
                y: tr.y[idx..].to_vec(),
                u: vec![0.0; tr.len() - idx],
                e: tr.e[idx..].to_vec(),
                diverged: false,
            };
            cost_j(&sub, cut.w1, 0.0)
        };
        assert!(tail < 0.05 * cost_j(&tr, 1.0, 1.0));
    }

    #[test]
    fn cost_examples() {
        let z = Trajectory {
            t: vec![0.0, 1.0, 2.0],
            y: vec![1.0; 3],
            u: vec![0.0; 3],
            e: vec![0.0; 3],
            diverged: false,
        };
        assert_eq!(cost_j(&z, 1.0, 1.0), 0.0);
        let p = bench(Family::P2, 0.5);
        let tr = closed_loop_step(
            &p,
            &FopidParams::pid(0.9, 0.6, 0.2),
            &OustaloupConfig::default(),
            &SimConfig::default(),
        )
        .unwrap();
        let itae = cost_j(&tr, 1.0, 0.0);
        assert_relative_eq!(cost_j(&tr, 2.0, 0.0), 2.0 * itae, max_relative = 1e-12);
        let mut d = tr.clone();
        d.diverged = true;
        assert_eq!(cost_j(&d, 1.0, 1.0), f64::INFINITY);
    }

    #[test]
    fn cost_converges_under_step_refinement() {
        let p = bench(Family::P1, 4.0);
        let c = FopidParams::new(0.63, 0.29, 0.36, 0.996, 0.54);
        let o = OustaloupConfig::default();
        let coarse = SimConfig {
            dt: 0.02,
            ..Default::default()
        };
        let fine = SimConfig {
            dt: 0.01,
            ..Default::default()
        };
        let a = cost_j(&closed_loop_step(&p, &c, &o, &coarse).unwrap(), 1.0, 1.0);
        let b = cost_j(&closed_loop_step(&p, &c, &o, &fine).unwrap(), 1.0, 1.0);
        assert!((a - b).abs() / b < 0.005);
    }

    #[test]
    fn unstable_loop_is_flagged() {
        let p = bench(Family::P1, 8.0);
        let tr = closed_loop_step(
            &p,
            &FopidParams::pid(20.0, 5.0, 0.0),
            &OustaloupConfig::default(),
            &SimConfig::default(),
        )
        .unwrap();
        assert!(tr.diverged);
        assert_eq!(cost_j(&tr, 1.0, 1.0), f64::INFINITY);
        assert_eq!(tr.t.len(), tr.y.len());
    }

    #[test]
    fn delayed_plant_matches_pade_free_reference() {
        // A delay that is a whole number of steps behaves like a shifted input.
        let tf = RationalTf::new(vec![1.0], vec![1.0, 2.0, 1.0]).unwrap();
        let plant = DelayedTf::new(tf.clone(), 0.5).unwrap();
        let scfg = SimConfig {
            horizon: 40.0,
            dt: 0.01,
            ..Default::default()
        };
        let o = OustaloupConfig::default();
        let c = FopidParams::pid(0.5, 0.3, 0.0);
        let tr = closed_loop_step(&plant, &c, &o, &scfg).unwrap();
        assert!(!tr.diverged);
        assert!(tr.y[49].abs() < 1e-12);
        assert!(tr.y[60] > 0.0);
        assert!((tr.y.last().unwrap() - 1.0).abs() < 1e-3);
        let fine = SimConfig { dt: 0.005, ..scfg };
        let tf2 = closed_loop_step(&plant, &c, &o, &fine).unwrap();
        let ja = cost_j(&tr, 1.0, 1.0);
        let jb = cost_j(&tf2, 1.0, 1.0);
        assert!((ja - jb).abs() / jb < 1e-3);
        let short = DelayedTf::new(tf, 0.004).unwrap();
        let tr = closed_loop_step(&short, &c, &o, &scfg).unwrap();
        assert!((tr.y.last().unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn disturbance_shifts_output() {
        let p = bench(Family::P2, 0.6);
        let c = FopidParams::pid(0.973, 0.554, 0.312);
        let o = OustaloupConfig::default();
        let base = closed_loop_step(&p, &c, &o, &SimConfig::default()).unwrap();
        let dist = SimConfig {
            disturbance: Some(Disturbance {
                time: 50.0,
                magnitude: 0.2,
            }),
            ..Default::default()
        };
        let d = closed_loop_step(&p, &c, &o, &dist).unwrap();
        assert_eq!(base.y[5000], d.y[5000]);
        assert!(d.y[5200] > base.y[5200] + 0.01);
        assert!((d.y.last().unwrap() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn horizon_must_be_a_multiple_of_dt() {
        let s = SimConfig {
            horizon: 1.0,
            dt: 0.3,
            ..Default::default()
        };
        assert!(s.steps().is_err());
    }

    #[test]
    fn pure_gain_plant_is_easy() {
        // unity gain with two fast lags stands in for a static plant
        let plant = DelayedTf::rational(RationalTf::new(vec![1.0], vec![2e-6, 3e-3, 1.0]).unwrap());
        let scfg = SimConfig {
            horizon: 10.0,
            dt: 0.01,
            w2: 0.0,
            ..Default::default()
        };
        let cfg = TuneConfig {
            ga: GaConfig {
                max_generations: 30,
                seed: 3,
                ..TuneConfig::default().ga
            },
            ..Default::default()
        };
        let r = tune_controller(
            &plant,
            ControllerKind::Pid,
            &cfg,
            &OustaloupConfig::default(),
            &scfg,
        )
        .unwrap();
        assert!(r.j < 0.5, "J = {}", r.j);
    }
}
