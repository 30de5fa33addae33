//! Continuous-time SISO transfer functions, the higher-order test bench,
//! delay approximation, frequency response and H2 norms.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

/// Polynomial helpers. Coefficients are stored highest power first.
pub mod poly {
    use num_complex::Complex64;

    pub fn trim(c: &[f64]) -> Vec<f64> {
        let first = c.iter().position(|&x| x != 0.0);
        match first {
            Some(i) => c[i..].to_vec(),
            None => vec![0.0],
        }
    }

    pub fn eval(c: &[f64], s: Complex64) -> Complex64 {
        c.iter()
            .fold(Complex64::new(0.0, 0.0), |acc, &x| acc * s + x)
    }

    pub fn eval_real(c: &[f64], x: f64) -> f64 {
        c.iter().fold(0.0, |acc, &v| acc * x + v)
    }

    pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        let n = a.len().max(b.len());
        let mut out = vec![0.0; n];
        for (i, &x) in a.iter().rev().enumerate() {
            out[n - 1 - i] += x;
        }
        for (i, &x) in b.iter().rev().enumerate() {
            out[n - 1 - i] += x;
        }
        out
    }

    pub fn scale(a: &[f64], k: f64) -> Vec<f64> {
        a.iter().map(|x| x * k).collect()
    }

    pub fn degree(c: &[f64]) -> usize {
        trim(c).len() - 1
    }

    /// Product of first-order factors `(c s + 1)`.
    pub fn from_time_constants(taus: &[f64]) -> Vec<f64> {
        taus.iter().fold(vec![1.0], |acc, &t| mul(&acc, &[t, 1.0]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RationalTf {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl RationalTf {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        if num.is_empty() || den.is_empty() {
            return Err(Error::InvalidTf("empty coefficient vector".into()));
        }
        if num.iter().chain(den.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidTf("non-finite coefficient".into()));
        }
        let den = poly::trim(&den);
        if den.len() == 1 && den[0] == 0.0 {
            return Err(Error::InvalidTf("denominator is identically zero".into()));
        }
        Ok(Self {
            num: poly::trim(&num),
            den,
        })
    }

    pub fn gain(k: f64) -> Self {
        Self {
            num: vec![k],
            den: vec![1.0],
        }
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.len() == 1 && self.num[0] == 0.0
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        if s.norm_sqr() <= 1.0 {
            return poly::eval(&self.num, s) / poly::eval(&self.den, s);
        }
        // Horner in 1/s keeps high-order polynomials finite at large |s|.
        let z = s.inv();
        let rev = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &x| acc * z + x)
        };
        let excess = self.den.len() as i32 - self.num.len() as i32;
        z.powi(excess) * rev(&self.num) / rev(&self.den)
    }

    pub fn dc_gain(&self) -> f64 {
        poly::eval_real(&self.num, 0.0) / poly::eval_real(&self.den, 0.0)
    }

    pub fn relative_degree(&self) -> isize {
        if self.is_zero() {
            return isize::MAX;
        }
        (self.den.len() as isize) - (self.num.len() as isize)
    }

    pub fn is_proper(&self) -> bool {
        self.relative_degree() >= 0
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.relative_degree() > 0
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self {
            num: poly::trim(&poly::mul(&self.num, &other.num)),
            den: poly::trim(&poly::mul(&self.den, &other.den)),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let num = poly::add(
            &poly::mul(&self.num, &other.den),
            &poly::mul(&other.num, &self.den),
        );
        Self {
            num: poly::trim(&num),
            den: poly::trim(&poly::mul(&self.den, &other.den)),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            num: poly::trim(&poly::scale(&self.num, k)),
            den: self.den.clone(),
        }
    }

    /// True when every root of the denominator lies in the open left half-plane.
    pub fn is_stable(&self) -> bool {
        routh_hurwitz_stable(&self.den)
    }

    /// Controller-canonical realization. Fails for improper transfer functions.
    pub fn state_space(&self) -> Result<StateSpace> {
        if !self.is_proper() {
            return Err(Error::Improper(format!(
                "numerator degree exceeds denominator degree ({self})"
            )));
        }
        let n = self.den.len() - 1;
        let lead = self.den[0];
        let a: Vec<f64> = self.den.iter().map(|x| x / lead).collect();
        let mut b = vec![0.0; n + 1 - self.num.len()];
        b.extend(self.num.iter().map(|x| x / lead));
        let d = b[0];
        let mut am = DMatrix::zeros(n, n);
        for j in 0..n {
            am[(0, j)] = -a[j + 1];
        }
        for i in 1..n {
            am[(i, i - 1)] = 1.0;
        }
        let mut bm = DVector::zeros(n);
        if n > 0 {
            bm[0] = 1.0;
        }
        let cm = RowDVector::from_iterator(n, (1..=n).map(|i| b[i] - a[i] * d));
        Ok(StateSpace {
            a: am,
            b: bm,
            c: cm,
            d,
        })
    }
}

impl fmt::Display for RationalTf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} / {:?}", self.num, self.den)
    }
}

#[derive(Clone, Debug)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
}

impl StateSpace {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }
}

/// Rational part plus an input dead time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TfRecord", into = "TfRecord")]
pub struct DelayedTf {
    pub tf: RationalTf,
    pub delay: f64,
}

/// Serialized form: `{num, den, delay}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TfRecord {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
    pub delay: f64,
}

impl TryFrom<TfRecord> for DelayedTf {
    type Error = Error;
    fn try_from(r: TfRecord) -> Result<Self> {
        DelayedTf::new(RationalTf::new(r.num, r.den)?, r.delay)
    }
}

impl From<DelayedTf> for TfRecord {
    fn from(p: DelayedTf) -> Self {
        TfRecord {
            num: p.tf.num,
            den: p.tf.den,
            delay: p.delay,
        }
    }
}

impl DelayedTf {
    pub fn new(tf: RationalTf, delay: f64) -> Result<Self> {
        if !delay.is_finite() || delay < 0.0 {
            return Err(Error::InvalidTf(format!(
                "delay must be finite and >= 0, got {delay}"
            )));
        }
        Ok(Self { tf, delay })
    }

    pub fn rational(tf: RationalTf) -> Self {
        Self { tf, delay: 0.0 }
    }

    pub fn eval_jw(&self, omega: f64, mode: DelayMode) -> Complex64 {
        let s = Complex64::new(0.0, omega);
        let g = self.tf.eval(s);
        if self.delay == 0.0 {
            return g;
        }
        match mode {
            DelayMode::Exact => g * Complex64::from_polar(1.0, -omega * self.delay),
            DelayMode::Pade3 => g * pade3(self.delay).eval(s),
        }
    }

    /// Rational model with the delay replaced by its third-order Padé approximant.
    pub fn to_pade(&self) -> RationalTf {
        self.tf.mul(&pade3(self.delay))
    }

    pub fn dc_gain(&self) -> f64 {
        self.tf.dc_gain()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayMode {
    Exact,
    #[default]
    Pade3,
}

/// Third-order Padé approximant of `e^{-Ls}` in all-pass form.
pub fn pade3(delay: f64) -> RationalTf {
    let l = delay;
    let num = vec![-l * l * l, 12.0 * l * l, -60.0 * l, 120.0];
    let den = vec![l * l * l, 12.0 * l * l, 60.0 * l, 120.0];
    RationalTf::new(num, den).expect("pade coefficients are finite")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreqSample {
    pub omega: f64,
    pub re: f64,
    pub im: f64,
}

pub fn freq_response(p: &DelayedTf, omegas: &[f64], mode: DelayMode) -> Result<Vec<FreqSample>> {
    omegas
        .iter()
        .map(|&w| {
            if !(w.is_finite() && w > 0.0) {
                return Err(invalid_arg(format!(
                    "frequency must be positive and finite, got {w}"
                )));
            }
            let g = p.eval_jw(w, mode);
            Ok(FreqSample {
                omega: w,
                re: g.re,
                im: g.im,
            })
        })
        .collect()
}

/// Routh–Hurwitz test: all roots strictly in the left half-plane.
pub fn routh_hurwitz_stable(den: &[f64]) -> bool {
    let d = poly::trim(den);
    let n = d.len() - 1;
    if n == 0 {
        return d[0] != 0.0;
    }
    if d.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let sign = d[0].signum();
    if d.iter().any(|&x| x * sign <= 0.0) {
        return false;
    }
    let width = n / 2 + 1;
    let mut prev: Vec<f64> = (0..width).map(|i| *d.get(2 * i).unwrap_or(&0.0)).collect();
    let mut cur: Vec<f64> = (0..width)
        .map(|i| *d.get(2 * i + 1).unwrap_or(&0.0))
        .collect();
    for _ in 0..n - 1 {
        if cur[0] * sign <= 0.0 {
            return false;
        }
        let mut next = vec![0.0; width];
        for i in 0..width - 1 {
            next[i] = (cur[0] * prev[i + 1] - prev[0] * cur[i + 1]) / cur[0];
        }
        prev = cur;
        cur = next;
    }
    cur[0] * sign > 0.0
}

fn check_h2_input(tf: &RationalTf) -> Result<bool> {
    if tf.is_zero() {
        return Ok(false);
    }
    if !tf.is_strictly_proper() {
        return Err(Error::Improper(
            "H2 norm is infinite for a transfer function that is not strictly proper".into(),
        ));
    }
    if !tf.is_stable() {
        return Err(Error::Unstable(format!(
            "denominator {:?} is not Hurwitz",
            tf.den()
        )));
    }
    Ok(true)
}

/// H2 norm from the controllability Gramian: `||G||^2 = C P C^T`, `A P + P A^T + B B^T = 0`.
pub fn h2_norm(tf: &RationalTf) -> Result<f64> {
    if !check_h2_input(tf)? {
        return Ok(0.0);
    }
    let ss = tf.state_space()?;
    let d = balance_scaling(&ss.a);
    let n = d.len();
    let a = DMatrix::from_fn(n, n, |i, j| ss.a[(i, j)] * d[j] / d[i]);
    let b = DMatrix::from_fn(n, 1, |i, _| ss.b[(i, 0)] / d[i]);
    let c = DMatrix::from_fn(1, n, |_, j| ss.c[(0, j)] * d[j]);
    let p = lyapunov(&a, &(&b * b.transpose()))?;
    let v = (&c * &p * c.transpose())[(0, 0)];
    Ok(v.max(0.0).sqrt())
}

/// Power-of-two diagonal scaling that balances row and column norms of `a`.
pub fn balance_scaling(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut d = vec![1.0f64; n];
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let (mut c, mut r) = (0.0, 0.0);
            for j in (0..n).filter(|&j| j != i) {
                c += (a[(j, i)] * d[i] / d[j]).abs();
                r += (a[(i, j)] * d[j] / d[i]).abs();
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let (mut c2, mut r2) = (c, r);
            while c2 < r2 / 2.0 {
                c2 *= 2.0;
                r2 /= 2.0;
                f *= 2.0;
            }
            while c2 >= r2 * 2.0 {
                c2 /= 2.0;
                r2 *= 2.0;
                f /= 2.0;
            }
            if c2 + r2 < 0.95 * s {
                converged = false;
                d[i] *= f;
            }
        }
    }
    d
}

/// Solves `A P + P A^T + Q = 0` by vectorization.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|x| -x));
    let lu = k.clone().lu();
    let singular = || Error::Unstable("Lyapunov operator is singular".into());
    let mut sol = lu.solve(&rhs).ok_or_else(singular)?;
    let resid = &rhs - &k * &sol;
    sol += lu.solve(&resid).ok_or_else(singular)?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// H2 norm by Gauss-Legendre quadrature of `|G(jw)|^2` over a logarithmic frequency axis.
pub fn h2_norm_quadrature(tf: &RationalTf) -> Result<f64> {
    if !check_h2_input(tf)? {
        return Ok(0.0);
    }
    let f = |x: f64| {
        let w = x.exp();
        tf.eval(Complex64::new(0.0, w)).norm_sqr() * w
    };
    Ok((gauss_legendre(&f, -40.0, 40.0, 3200) / std::f64::consts::PI).sqrt())
}

/// Composite 5-point Gauss-Legendre rule over `panels` equal panels.
fn gauss_legendre(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const NODES: [(f64, f64); 5] = [
        (0.0, 0.568_888_888_888_888_9),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let mid = a + (i as f64 + 0.5) * h;
            NODES
                .iter()
                .map(|(x, w)| w * f(mid + 0.5 * h * x))
                .sum::<f64>()
                * 0.5
                * h
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    P1,
    P2,
    P3,
    P4,
}

impl Family {
    pub fn param_name(self) -> &'static str {
        match self {
            Family::P1 => "n",
            Family::P2 | Family::P4 => "alpha",
            Family::P3 => "T",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "P1" => Ok(Family::P1),
            "P2" => Ok(Family::P2),
            "P3" => Ok(Family::P3),
            "P4" => Ok(Family::P4),
            other => Err(invalid_arg(format!("unknown plant family {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestBenchSpec {
    pub family: Family,
    pub param: f64,
}

impl TestBenchSpec {
    pub fn new(family: Family, param: f64) -> Self {
        Self { family, param }
    }

    pub fn label(&self) -> String {
        format!(
            "{} {}={}",
            self.family,
            self.family.param_name(),
            self.param
        )
    }

    /// Identity used to match against fixture rows.
    pub fn matches(&self, family: Family, param: f64) -> bool {
        self.family == family && (self.param - param).abs() < 1e-9
    }

    /// Gain, time constants, numerator factors and the family's dominant time constants.
    pub fn factored(&self) -> Result<FactoredPlant> {
        let p = self.param;
        if !p.is_finite() {
            return Err(invalid_arg("test-bench parameter must be finite"));
        }
        let (poles, zeros, dominant) = match self.family {
            Family::P1 => {
                if p < 1.0 || p.fract() != 0.0 || p > 60.0 {
                    return Err(invalid_arg(format!(
                        "P1 order must be an integer in 1..=60, got {p}"
                    )));
                }
                let n = p as usize;
                (vec![1.0; n], vec![], (0..n).collect())
            }
            Family::P2 => {
                if p <= 0.0 {
                    return Err(invalid_arg(format!("P2 alpha must be positive, got {p}")));
                }
                (vec![1.0, p, p * p, p * p * p], vec![], vec![0])
            }
            Family::P3 => {
                if p <= 0.0 {
                    return Err(invalid_arg(format!("P3 T must be positive, got {p}")));
                }
                (vec![1.0, p, p], vec![], vec![1, 2])
            }
            Family::P4 => {
                if p < 0.0 {
                    return Err(invalid_arg(format!(
                        "P4 alpha must be non-negative, got {p}"
                    )));
                }
                (vec![1.0; 3], vec![-p], vec![0, 1, 2])
            }
        };
        Ok(FactoredPlant {
            gain: 1.0,
            time_constants: poles,
            zero_coeffs: zeros,
            delay: 0.0,
            dominant,
            apparent_delay: None,
        })
    }
}

impl fmt::Display for TestBenchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub fn make_testbench(spec: TestBenchSpec) -> Result<DelayedTf> {
    Ok(spec.factored()?.to_delayed_tf())
}

/// The 38 higher-order plants of the benchmark set.
pub fn test_bench() -> Vec<TestBenchSpec> {
    let mut v = Vec::with_capacity(38);
    for n in [3, 4, 5, 6, 7, 8, 10, 20] {
        v.push(TestBenchSpec::new(Family::P1, n as f64));
    }
    for i in 1..=9 {
        v.push(TestBenchSpec::new(Family::P2, i as f64 / 10.0));
    }
    for t in [0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 2.0, 5.0, 10.0] {
        v.push(TestBenchSpec::new(Family::P3, t));
    }
    for i in 1..=11 {
        v.push(TestBenchSpec::new(Family::P4, i as f64 / 10.0));
    }
    v
}

/// The four plants used for rule evaluation.
pub fn representative_plants() -> [TestBenchSpec; 4] {
    [
        TestBenchSpec::new(Family::P1, 8.0),
        TestBenchSpec::new(Family::P2, 0.6),
        TestBenchSpec::new(Family::P3, 5.0),
        TestBenchSpec::new(Family::P4, 0.4),
    ]
}

/// Plant in factored form `K prod(1 + z_j s) / prod(1 + tau_i s) e^{-Ls}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactoredPlant {
    pub gain: f64,
    pub time_constants: Vec<f64>,
    pub zero_coeffs: Vec<f64>,
    pub delay: f64,
    /// Indices into `time_constants` scaled by time-constant perturbations.
    pub dominant: Vec<usize>,
    /// Apparent dead time of a delay-free plant, used for delay perturbations.
    pub apparent_delay: Option<f64>,
}

impl FactoredPlant {
    pub fn to_delayed_tf(&self) -> DelayedTf {
        let num = poly::scale(&poly::from_time_constants(&self.zero_coeffs), self.gain);
        let den = poly::from_time_constants(&self.time_constants);
        DelayedTf {
            tf: RationalTf::new(num, den).expect("factored plant coefficients are finite"),
            delay: self.delay,
        }
    }
}
