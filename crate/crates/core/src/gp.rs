//! Tree-based symbolic regression with single- and multi-gene individuals.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_config, Error, Result};
use crate::rng::{stream, CONTROL_SLOT};

pub const N_FEATURES: usize = 7;
pub const CLAMP: f64 = 1e12;

/// Protected primitives shared by evolved trees and hand-written rules.
pub mod prot {
    pub fn pdiv(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            0.0
        } else {
            a / b
        }
    }

    /// `ln|x|`, zero at the origin.
    pub fn plog(x: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else {
            x.abs().ln()
        }
    }

    pub fn psqrt(x: f64) -> f64 {
        x.abs().sqrt()
    }

    pub fn root4(x: f64) -> f64 {
        psqrt(psqrt(x))
    }

    pub fn clamp(x: f64) -> f64 {
        if x.is_nan() {
            0.0
        } else {
            x.clamp(-super::CLAMP, super::CLAMP)
        }
    }
}

use prot::{clamp, pdiv, plog, psqrt};

/// Regression inputs derived from a SOPTD model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub k: f64,
    pub tau_max: f64,
    pub tau_min: f64,
    pub l: f64,
}

impl FeatureVector {
    pub fn new(k: f64, tau_max: f64, tau_min: f64, l: f64) -> Self {
        Self {
            k,
            tau_max,
            tau_min,
            l,
        }
    }

    pub fn ratio_tt(&self) -> f64 {
        pdiv(self.tau_max, self.tau_min)
    }

    pub fn ratio_lmin(&self) -> f64 {
        pdiv(self.l, self.tau_min)
    }

    pub fn ratio_lmax(&self) -> f64 {
        pdiv(self.l, self.tau_max)
    }

    /// `[K, tau_max, tau_min, L, tau_max/tau_min, L/tau_min, L/tau_max]` as `x1..x7`.
    pub fn values(&self) -> [f64; N_FEATURES] {
        [
            self.k,
            self.tau_max,
            self.tau_min,
            self.l,
            self.ratio_tt(),
            self.ratio_lmin(),
            self.ratio_lmax(),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Sin,
    Cos,
    Tanh,
    Log,
    Exp,
    Square,
    Var(u8),
    Const(f64),
}

const FUNCTIONS: [Op; 11] = [
    Op::Add,
    Op::Sub,
    Op::Mul,
    Op::Div,
    Op::Sqrt,
    Op::Sin,
    Op::Cos,
    Op::Tanh,
    Op::Log,
    Op::Exp,
    Op::Square,
];

impl Op {
    pub fn arity(&self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div => 2,
            Op::Var(_) | Op::Const(_) => 0,
            _ => 1,
        }
    }

    fn unary_name(&self) -> &'static str {
        match self {
            Op::Sqrt => "psqrt",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Tanh => "tanh",
            Op::Log => "plog",
            Op::Exp => "exp",
            Op::Square => "square",
            _ => unreachable!("not a unary operator"),
        }
    }

    fn apply1(&self, a: f64) -> f64 {
        match self {
            Op::Sqrt => psqrt(a),
            Op::Sin => a.sin(),
            Op::Cos => a.cos(),
            Op::Tanh => a.tanh(),
            Op::Log => plog(a),
            Op::Exp => a.exp(),
            Op::Square => a * a,
            _ => unreachable!("not a unary operator"),
        }
    }

    fn apply2(&self, a: f64, b: f64) -> f64 {
        match self {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
            Op::Div => pdiv(a, b),
            _ => unreachable!("not a binary operator"),
        }
    }
}

/// Expression tree stored in prefix order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExprTree {
    nodes: Vec<Op>,
}

impl ExprTree {
    pub fn from_prefix(nodes: Vec<Op>) -> Result<Self> {
        let mut need = 1usize;
        for (i, op) in nodes.iter().enumerate() {
            if need == 0 {
                return Err(invalid_arg(format!("trailing nodes after position {i}")));
            }
            if let Op::Var(v) = op {
                if *v as usize >= N_FEATURES {
                    return Err(invalid_arg(format!("feature index {v} out of range")));
                }
            }
            if let Op::Const(c) = op {
                if !c.is_finite() {
                    return Err(invalid_arg("constants must be finite"));
                }
            }
            need = need - 1 + op.arity();
        }
        if need != 0 || nodes.is_empty() {
            return Err(invalid_arg("incomplete prefix expression"));
        }
        Ok(Self { nodes })
    }

    pub fn var(i: usize) -> Self {
        Self {
            nodes: vec![Op::Var(i as u8)],
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            nodes: vec![Op::Const(c)],
        }
    }

    pub fn unary(op: Op, a: ExprTree) -> Self {
        let mut nodes = vec![op];
        nodes.extend(a.nodes);
        Self { nodes }
    }

    pub fn binary(op: Op, a: ExprTree, b: ExprTree) -> Self {
        let mut nodes = vec![op];
        nodes.extend(a.nodes);
        nodes.extend(b.nodes);
        Self { nodes }
    }

    pub fn nodes(&self) -> &[Op] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// End (exclusive) of the subtree rooted at `i`.
    pub fn subtree_end(&self, i: usize) -> usize {
        let mut need = 1usize;
        let mut j = i;
        while need > 0 {
            need = need - 1 + self.nodes[j].arity();
            j += 1;
        }
        j
    }

    /// Depth of each node; the root has depth 1.
    pub fn node_depths(&self) -> Vec<usize> {
        let mut depths = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let mut cur = 1;
        for op in &self.nodes {
            depths.push(cur);
            let a = op.arity();
            if a > 0 {
                stack.push((cur, a));
                cur += 1;
            } else {
                while let Some((d, left)) = stack.last_mut() {
                    *left -= 1;
                    if *left == 0 {
                        stack.pop();
                    } else {
                        cur = *d + 1;
                        break;
                    }
                }
            }
        }
        depths
    }

    pub fn depth(&self) -> usize {
        self.node_depths().into_iter().max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64; N_FEATURES]) -> f64 {
        let mut stack: Vec<f64> = Vec::with_capacity(self.nodes.len());
        for op in self.nodes.iter().rev() {
            let v = match op {
                Op::Var(i) => x[*i as usize],
                Op::Const(c) => *c,
                op if op.arity() == 1 => {
                    let a = stack.pop().expect("valid prefix tree");
                    op.apply1(a)
                }
                op => {
                    let a = stack.pop().expect("valid prefix tree");
                    let b = stack.pop().expect("valid prefix tree");
                    op.apply2(a, b)
                }
            };
            stack.push(clamp(v));
        }
        stack.pop().expect("valid prefix tree")
    }

    pub fn eval_features(&self, f: &FeatureVector) -> f64 {
        self.eval(&f.values())
    }

    fn replace(&self, start: usize, end: usize, with: &[Op]) -> Self {
        let mut nodes = Vec::with_capacity(self.nodes.len() - (end - start) + with.len());
        nodes.extend_from_slice(&self.nodes[..start]);
        nodes.extend_from_slice(with);
        nodes.extend_from_slice(&self.nodes[end..]);
        Self { nodes }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.write_node(0, &mut out);
        out
    }

    fn write_node(&self, i: usize, out: &mut String) -> usize {
        let op = self.nodes[i];
        match op {
            Op::Var(v) => {
                out.push_str(&format!("x{}", v + 1));
                i + 1
            }
            Op::Const(c) => {
                out.push_str(&format!("{c:?}"));
                i + 1
            }
            Op::Div => {
                out.push_str("pdiv(");
                let j = self.write_node(i + 1, out);
                out.push_str(", ");
                let k = self.write_node(j, out);
                out.push(')');
                k
            }
            Op::Add | Op::Sub | Op::Mul => {
                let sym = match op {
                    Op::Add => " + ",
                    Op::Sub => " - ",
                    _ => " * ",
                };
                out.push('(');
                let j = self.write_node(i + 1, out);
                out.push_str(sym);
                let k = self.write_node(j, out);
                out.push(')');
                k
            }
            _ => {
                out.push_str(op.unary_name());
                out.push('(');
                let j = self.write_node(i + 1, out);
                out.push(')');
                j
            }
        }
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Parses infix text: `+ - * /`, parentheses, numeric literals, `x1..x7` (or `K`, `tau_max`,
/// `tau_min`, `L`) and the functions `pdiv psqrt plog sin cos tanh exp square`.
pub fn parse_expr(text: &str) -> Result<ExprTree> {
    let mut p = Parser {
        s: text.as_bytes(),
        pos: 0,
    };
    let t = p.expr()?;
    p.skip_ws();
    if p.pos != p.s.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(t)
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Parse {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<ExprTree> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = ExprTree::binary(if c == b'+' { Op::Add } else { Op::Sub }, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<ExprTree> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = ExprTree::binary(if c == b'*' { Op::Mul } else { Op::Div }, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<ExprTree> {
        if self.peek() == Some(b'-') {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.s.get(self.pos), Some(c) if c.is_ascii_digit() || *c == b'.') {
                self.pos = save;
                return self.number();
            }
            let inner = self.unary()?;
            return Ok(ExprTree::binary(Op::Sub, ExprTree::constant(0.0), inner));
        }
        self.primary()
    }

    fn number(&mut self) -> Result<ExprTree> {
        self.skip_ws();
        let start = self.pos;
        if self.s.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        while let Some(&c) = self.s.get(self.pos) {
            let exp_sign =
                (c == b'-' || c == b'+') && matches!(self.s.get(self.pos - 1), Some(b'e' | b'E'));
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let lit = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii");
        lit.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(ExprTree::constant)
            .ok_or_else(|| Error::Parse {
                pos: start,
                msg: format!("invalid number {lit:?}"),
            })
    }

    fn primary(&mut self) -> Result<ExprTree> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while matches!(self.s.get(self.pos), Some(c) if c.is_ascii_alphanumeric() || *c == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii");
                if self.peek() == Some(b'(') {
                    self.pos += 1;
                    let a = self.expr()?;
                    if name == "pdiv" {
                        self.expect(b',')?;
                        let b = self.expr()?;
                        self.expect(b')')?;
                        return Ok(ExprTree::binary(Op::Div, a, b));
                    }
                    self.expect(b')')?;
                    let op = match name {
                        "psqrt" | "sqrt" => Op::Sqrt,
                        "sin" => Op::Sin,
                        "cos" => Op::Cos,
                        "tanh" => Op::Tanh,
                        "plog" | "log" => Op::Log,
                        "exp" => Op::Exp,
                        "square" => Op::Square,
                        _ => {
                            return Err(Error::Parse {
                                pos: start,
                                msg: format!("unknown function {name:?}"),
                            })
                        }
                    };
                    return Ok(ExprTree::unary(op, a));
                }
                let idx = match name {
                    "K" => 0,
                    "tau_max" => 1,
                    "tau_min" => 2,
                    "L" => 3,
                    _ => name
                        .strip_prefix('x')
                        .and_then(|d| d.parse::<usize>().ok())
                        .filter(|d| (1..=N_FEATURES).contains(d))
                        .map(|d| d - 1)
                        .ok_or_else(|| Error::Parse {
                            pos: start,
                            msg: format!("unknown variable {name:?}"),
                        })?,
                };
                Ok(ExprTree::var(idx))
            }
            _ => Err(self.err("expected an expression")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiGeneModel {
    pub genes: Vec<ExprTree>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl MultiGeneModel {
    pub fn predict(&self, x: &[f64; N_FEATURES]) -> f64 {
        self.bias
            + self
                .genes
                .iter()
                .zip(&self.weights)
                .map(|(g, w)| w * g.eval(x))
                .sum::<f64>()
    }

    pub fn node_count(&self) -> usize {
        self.genes.iter().map(ExprTree::node_count).sum()
    }

    /// The whole model as one expression tree.
    pub fn to_tree(&self) -> ExprTree {
        self.genes
            .iter()
            .zip(&self.weights)
            .fold(ExprTree::constant(self.bias), |acc, (g, w)| {
                ExprTree::binary(
                    Op::Add,
                    acc,
                    ExprTree::binary(Op::Mul, ExprTree::constant(*w), g.clone()),
                )
            })
    }

    pub fn to_text(&self) -> String {
        self.to_tree().to_text()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LsFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Set when the ridge-regularised solve was used.
    pub ridge: bool,
}

pub const RIDGE_EPS: f64 = 1e-8;

/// Least-squares weights and intercept for gene output columns.
pub fn fit_gene_weights(columns: &[Vec<f64>], y: &[f64]) -> Result<LsFit> {
    let n = y.len();
    if n == 0 {
        return Err(invalid_arg("least squares needs at least one sample"));
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(invalid_arg("gene outputs and targets differ in length"));
    }
    let m = columns.len() + 1;
    let g = DMatrix::from_fn(n, m, |i, j| if j == 0 { 1.0 } else { columns[j - 1][i] });
    let yv = DVector::from_column_slice(y);
    let gtg = g.transpose() * &g;
    let gty = g.transpose() * &yv;
    let scale = (0..m).map(|i| gtg[(i, i)]).fold(0.0f64, f64::max).max(1.0);
    let mut ridge = n < m;
    let mut sol = None;
    if !ridge {
        if let Some(ch) = gtg.clone().cholesky() {
            let l = ch.l();
            let min_pivot = (0..m)
                .map(|i| l[(i, i)] * l[(i, i)])
                .fold(f64::INFINITY, f64::min);
            if min_pivot > 1e-12 * scale {
                sol = Some(ch.solve(&gty));
            }
        }
        ridge = sol.is_none();
    }
    let sol = match sol {
        Some(s) => s,
        None => {
            let reg = gtg + DMatrix::identity(m, m) * (RIDGE_EPS * scale);
            reg.clone()
                .cholesky()
                .map(|c| c.solve(&gty))
                .or_else(|| reg.lu().solve(&gty))
                .ok_or_else(|| Error::InvalidArgument("least-squares system is singular".into()))?
        }
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "least-squares solution is not finite".into(),
        ));
    }
    Ok(LsFit {
        weights: sol.iter().skip(1).copied().collect(),
        bias: sol[0],
        ridge,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpMode {
    SingleGene,
    MultiGene,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub pop_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub max_depth: usize,
    pub init_max_depth: usize,
    pub p_crossover: f64,
    pub p_mutation: f64,
    pub p_reproduction: f64,
    pub max_genes: usize,
    pub p_highlevel_xover: f64,
    pub p_lowlevel_xover: f64,
    pub p_subtree_mutation: f64,
    pub constant_range: (f64, f64),
    pub p_constant: f64,
    pub constant_jitter: f64,
    pub elite_count: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            pop_size: 500,
            generations: 100,
            tournament_size: 3,
            max_depth: 7,
            init_max_depth: 6,
            p_crossover: 0.85,
            p_mutation: 0.10,
            p_reproduction: 0.05,
            max_genes: 8,
            p_highlevel_xover: 0.2,
            p_lowlevel_xover: 0.8,
            p_subtree_mutation: 0.9,
            constant_range: (-10.0, 10.0),
            p_constant: 0.2,
            constant_jitter: 0.5,
            elite_count: 1,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        let sum = self.p_crossover + self.p_mutation + self.p_reproduction;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid_config(
                "crossover, mutation and reproduction probabilities must sum to 1",
            ));
        }
        if (self.p_highlevel_xover + self.p_lowlevel_xover - 1.0).abs() > 1e-9 {
            return Err(invalid_config(
                "high- and low-level crossover probabilities must sum to 1",
            ));
        }
        if self.pop_size < 2
            || self.tournament_size == 0
            || self.max_depth == 0
            || self.max_genes == 0
        {
            return Err(invalid_config(
                "population, tournament size, depth and gene limits must be positive",
            ));
        }
        if self.init_max_depth == 0 || self.init_max_depth > self.max_depth {
            return Err(invalid_config("init_max_depth must lie in 1..=max_depth"));
        }
        if self.elite_count >= self.pop_size {
            return Err(invalid_config("elite_count must be smaller than pop_size"));
        }
        let (lo, hi) = self.constant_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(invalid_config("constant_range must be a finite interval"));
        }
        Ok(())
    }

    fn genes_limit(&self, mode: GpMode) -> usize {
        match mode {
            GpMode::SingleGene => 1,
            GpMode::MultiGene => self.max_genes,
        }
    }
}

fn random_terminal(cfg: &GpConfig, rng: &mut impl Rng) -> Op {
    if rng.gen::<f64>() < cfg.p_constant {
        let (lo, hi) = cfg.constant_range;
        Op::Const(lo + (hi - lo) * rng.gen::<f64>())
    } else {
        Op::Var(rng.gen_range(0..N_FEATURES) as u8)
    }
}

fn grow_into(out: &mut Vec<Op>, depth: usize, full: bool, cfg: &GpConfig, rng: &mut impl Rng) {
    let n_term = N_FEATURES + 1;
    let leaf =
        depth <= 1 || (!full && rng.gen_range(0..FUNCTIONS.len() + n_term) >= FUNCTIONS.len());
    if leaf {
        out.push(random_terminal(cfg, rng));
        return;
    }
    let f = FUNCTIONS[rng.gen_range(0..FUNCTIONS.len())];
    out.push(f);
    for _ in 0..f.arity() {
        grow_into(out, depth - 1, full, cfg, rng);
    }
}

/// Random tree of depth at most `max_depth` (full or grow chosen at random, depth ramped).
pub fn random_tree(max_depth: usize, cfg: &GpConfig, rng: &mut impl Rng) -> ExprTree {
    let depth = rng.gen_range(1..=max_depth.max(1));
    let full = rng.gen::<bool>();
    let mut nodes = Vec::new();
    grow_into(&mut nodes, depth, full, cfg, rng);
    ExprTree { nodes }
}

/// Replaces every operator at depth `max_depth` with a random terminal.
pub fn trim_depth(t: &ExprTree, max_depth: usize, cfg: &GpConfig, rng: &mut impl Rng) -> ExprTree {
    let depths = t.node_depths();
    let mut out = Vec::with_capacity(t.nodes.len());
    let mut i = 0;
    while i < t.nodes.len() {
        if depths[i] >= max_depth && t.nodes[i].arity() > 0 {
            out.push(random_terminal(cfg, rng));
            i = t.subtree_end(i);
        } else {
            out.push(t.nodes[i]);
            i += 1;
        }
    }
    ExprTree { nodes: out }
}

/// Best of `k` uniform draws (lower score wins, ties to the first drawn).
pub fn tournament_select(scores: &[f64], k: usize, rng: &mut impl Rng) -> Result<usize> {
    if scores.is_empty() {
        return Err(invalid_arg("tournament needs a non-empty population"));
    }
    let mut best = rng.gen_range(0..scores.len());
    for _ in 1..k.max(1) {
        let c = rng.gen_range(0..scores.len());
        if scores[c].total_cmp(&scores[best]).is_lt() {
            best = c;
        }
    }
    Ok(best)
}

/// Swaps uniformly chosen subtrees, then trims both children to `max_depth`.
pub fn subtree_crossover(
    a: &ExprTree,
    b: &ExprTree,
    cfg: &GpConfig,
    rng: &mut impl Rng,
) -> (ExprTree, ExprTree) {
    let i = rng.gen_range(0..a.nodes.len());
    let j = rng.gen_range(0..b.nodes.len());
    crossover_at(a, b, i, j, cfg, rng)
}

pub fn crossover_at(
    a: &ExprTree,
    b: &ExprTree,
    i: usize,
    j: usize,
    cfg: &GpConfig,
    rng: &mut impl Rng,
) -> (ExprTree, ExprTree) {
    let (ie, je) = (a.subtree_end(i), b.subtree_end(j));
    let c1 = a.replace(i, ie, &b.nodes[j..je]);
    let c2 = b.replace(j, je, &a.nodes[i..ie]);
    (
        trim_depth(&c1, cfg.max_depth, cfg, rng),
        trim_depth(&c2, cfg.max_depth, cfg, rng),
    )
}

/// Replaces a uniformly chosen subtree with a fresh random one within the remaining depth budget.
pub fn subtree_mutate(a: &ExprTree, cfg: &GpConfig, rng: &mut impl Rng) -> ExprTree {
    let i = rng.gen_range(0..a.nodes.len());
    let d = a.node_depths()[i];
    let budget = cfg.max_depth.saturating_sub(d) + 1;
    let fresh = random_tree(budget.min(cfg.init_max_depth.max(2)), cfg, rng);
    a.replace(i, a.subtree_end(i), &fresh.nodes)
}

fn jitter_constant(a: &ExprTree, cfg: &GpConfig, rng: &mut impl Rng) -> Option<ExprTree> {
    let consts: Vec<usize> = (0..a.nodes.len())
        .filter(|&i| matches!(a.nodes[i], Op::Const(_)))
        .collect();
    if consts.is_empty() {
        return None;
    }
    let i = consts[rng.gen_range(0..consts.len())];
    let mut t = a.clone();
    if let Op::Const(c) = t.nodes[i] {
        let z: f64 = rng.sample(StandardNormal);
        t.nodes[i] = Op::Const(c + cfg.constant_jitter * z);
    }
    Some(t)
}

#[derive(Clone, Debug)]
struct Individual {
    genes: Vec<ExprTree>,
    fit: Option<LsFit>,
    mae: f64,
}

impl Individual {
    fn nodes(&self) -> usize {
        self.genes.iter().map(ExprTree::node_count).sum()
    }

    fn model(&self) -> MultiGeneModel {
        let fit = self.fit.clone().unwrap_or(LsFit {
            weights: vec![0.0; self.genes.len()],
            bias: 0.0,
            ridge: true,
        });
        MultiGeneModel {
            genes: self.genes.clone(),
            weights: fit.weights,
            bias: fit.bias,
        }
    }
}

fn evaluate(genes: Vec<ExprTree>, x: &[[f64; N_FEATURES]], y: &[f64]) -> Individual {
    let cols: Vec<Vec<f64>> = genes
        .iter()
        .map(|g| x.iter().map(|r| g.eval(r)).collect())
        .collect();
    match fit_gene_weights(&cols, y) {
        Ok(fit) => {
            let mae = y
                .iter()
                .enumerate()
                .map(|(i, yi)| {
                    let p = fit.bias
                        + cols
                            .iter()
                            .zip(&fit.weights)
                            .map(|(c, w)| w * c[i])
                            .sum::<f64>();
                    (p - yi).abs()
                })
                .sum::<f64>()
                / y.len() as f64;
            Individual {
                genes,
                fit: Some(fit),
                mae: if mae.is_finite() { mae } else { f64::INFINITY },
            }
        }
        Err(_) => Individual {
            genes,
            fit: None,
            mae: f64::INFINITY,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoEntry {
    pub node_count: usize,
    pub mae: f64,
    pub model: MultiGeneModel,
}

/// Non-dominated archive over (node count, MAE).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    entries: Vec<ParetoEntry>,
}

impl ParetoArchive {
    pub fn entries(&self) -> &[ParetoEntry] {
        &self.entries
    }

    /// Inserts unless dominated or equal to an existing entry; evicts entries it dominates.
    pub fn offer(
        &mut self,
        node_count: usize,
        mae: f64,
        model: impl FnOnce() -> MultiGeneModel,
    ) -> bool {
        if !mae.is_finite() {
            return false;
        }
        if self
            .entries
            .iter()
            .any(|e| e.node_count <= node_count && e.mae <= mae)
        {
            return false;
        }
        self.entries
            .retain(|e| !(node_count <= e.node_count && mae <= e.mae));
        let pos = self.entries.partition_point(|e| e.node_count < node_count);
        self.entries.insert(
            pos,
            ParetoEntry {
                node_count,
                mae,
                model: model(),
            },
        );
        true
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GpResult {
    pub best: MultiGeneModel,
    pub mae: f64,
    pub pareto: Vec<ParetoEntry>,
    pub history: Vec<f64>,
}

fn better(a: &Individual, b: &Individual) -> bool {
    a.mae < b.mae || (a.mae == b.mae && a.nodes() < b.nodes())
}

/// Evolves a model of `y` from the feature rows. Deterministic for a given seed.
pub fn run_gp(x: &[FeatureVector], y: &[f64], cfg: &GpConfig, mode: GpMode) -> Result<GpResult> {
    let rows: Vec<[f64; N_FEATURES]> = x.iter().map(FeatureVector::values).collect();
    run_gp_rows(&rows, y, cfg, mode)
}

pub fn run_gp_rows(
    rows: &[[f64; N_FEATURES]],
    y: &[f64],
    cfg: &GpConfig,
    mode: GpMode,
) -> Result<GpResult> {
    cfg.validate()?;
    if rows.len() != y.len() || y.len() < 2 {
        return Err(invalid_arg(
            "need at least two samples with matching targets",
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(invalid_arg("targets must be finite"));
    }
    let max_genes = cfg.genes_limit(mode);

    let mut pop: Vec<Individual> = (0..cfg.pop_size)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, 0, i as u64);
            let n = rng.gen_range(1..=max_genes);
            let genes = (0..n)
                .map(|_| random_tree(cfg.init_max_depth, cfg, &mut rng))
                .collect();
            evaluate(genes, rows, y)
        })
        .collect();

    let mut archive = ParetoArchive::default();
    let mut history = Vec::with_capacity(cfg.generations + 1);
    for generation in 0..=cfg.generations {
        for ind in &pop {
            archive.offer(ind.nodes(), ind.mae, || ind.model());
        }
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| {
            pop[a]
                .mae
                .total_cmp(&pop[b].mae)
                .then(pop[a].nodes().cmp(&pop[b].nodes()))
                .then(a.cmp(&b))
        });
        history.push(pop[order[0]].mae);
        if generation == cfg.generations {
            break;
        }
        let g = generation + 1;
        let scores: Vec<f64> = pop.iter().map(|p| p.mae).collect();
        let elites: Vec<Individual> = order
            .iter()
            .take(cfg.elite_count)
            .map(|&i| pop[i].clone())
            .collect();
        let free = cfg.pop_size - cfg.elite_count;

        let mut ctrl = stream(cfg.seed, g, CONTROL_SLOT);
        let events = free.div_ceil(2);
        let draws: Vec<(f64, usize, usize)> = (0..events)
            .map(|_| {
                let r = ctrl.gen::<f64>();
                let a =
                    tournament_select(&scores, cfg.tournament_size, &mut ctrl).expect("non-empty");
                let b =
                    tournament_select(&scores, cfg.tournament_size, &mut ctrl).expect("non-empty");
                (r, a, b)
            })
            .collect();

        let children: Vec<Vec<ExprTree>> = draws
            .par_iter()
            .enumerate()
            .flat_map_iter(|(slot, &(r, a, b))| {
                let mut rng = stream(cfg.seed, g, slot as u64);
                breed(&pop[a].genes, &pop[b].genes, r, max_genes, cfg, &mut rng)
            })
            .collect();

        let mut next = elites;
        let evaluated: Vec<Individual> = children
            .into_par_iter()
            .take(free)
            .map(|genes| evaluate(genes, rows, y))
            .collect();
        next.extend(evaluated);
        pop = next;
    }

    let best = pop
        .iter()
        .fold(None::<&Individual>, |acc, p| match acc {
            Some(b) if !better(p, b) => Some(b),
            _ => Some(p),
        })
        .expect("non-empty population");
    if !best.mae.is_finite() {
        return Err(Error::InvalidArgument(
            "no individual produced a finite fit".into(),
        ));
    }
    Ok(GpResult {
        best: best.model(),
        mae: best.mae,
        pareto: archive.entries,
        history,
    })
}

fn breed(
    a: &[ExprTree],
    b: &[ExprTree],
    r: f64,
    max_genes: usize,
    cfg: &GpConfig,
    rng: &mut impl Rng,
) -> Vec<Vec<ExprTree>> {
    if r < cfg.p_crossover {
        if max_genes > 1 && rng.gen::<f64>() < cfg.p_highlevel_xover {
            let (i1, i2) = ordered_pair(a.len(), rng);
            let (j1, j2) = ordered_pair(b.len(), rng);
            let mut c1: Vec<ExprTree> = a[..i1].to_vec();
            c1.extend_from_slice(&b[j1..j2]);
            c1.extend_from_slice(&a[i2..]);
            let mut c2: Vec<ExprTree> = b[..j1].to_vec();
            c2.extend_from_slice(&a[i1..i2]);
            c2.extend_from_slice(&b[j2..]);
            for c in [&mut c1, &mut c2] {
                c.truncate(max_genes);
                if c.is_empty() {
                    c.push(random_tree(cfg.init_max_depth, cfg, rng));
                }
            }
            vec![c1, c2]
        } else {
            let ga = rng.gen_range(0..a.len());
            let gb = rng.gen_range(0..b.len());
            let (x, y) = subtree_crossover(&a[ga], &b[gb], cfg, rng);
            let mut c1 = a.to_vec();
            let mut c2 = b.to_vec();
            c1[ga] = x;
            c2[gb] = y;
            vec![c1, c2]
        }
    } else if r < cfg.p_crossover + cfg.p_mutation {
        let mut c = a.to_vec();
        let gi = rng.gen_range(0..c.len());
        let jittered = if rng.gen::<f64>() < cfg.p_subtree_mutation {
            None
        } else {
            jitter_constant(&c[gi], cfg, rng)
        };
        c[gi] = jittered.unwrap_or_else(|| subtree_mutate(&c[gi], cfg, rng));
        vec![c]
    } else {
        vec![a.to_vec()]
    }
}

/// Two cut points `i <= j` in `0..=n`, selecting a non-empty range.
fn ordered_pair(n: usize, rng: &mut impl Rng) -> (usize, usize) {
    let i = rng.gen_range(0..n);
    let j = rng.gen_range(i + 1..=n);
    (i, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, Strategy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(v: [f64; 4]) -> [f64; N_FEATURES] {
        FeatureVector::new(v[0], v[1], v[2], v[3]).values()
    }

    #[test]
    fn protected_semantics() {
        let div = parse_expr("x1 / x2").unwrap();
        assert_eq!(div.eval(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 0.0);
        let log = parse_expr("plog(x1)").unwrap();
        assert_eq!(log.eval(&[-1.0; 7]), 0.0);
        assert_eq!(log.eval(&[0.0; 7]), 0.0);
        let sq = parse_expr("square(x1)").unwrap();
        assert_eq!(sq.eval(&[3.0; 7]), 9.0);
        let big = parse_expr("exp(exp(x1))").unwrap();
        assert_eq!(big.eval(&[10.0; 7]), CLAMP);
        let root = parse_expr("psqrt(x1)").unwrap();
        assert_eq!(root.eval(&[-4.0; 7]), 2.0);
    }

    #[test]
    fn node_counts_and_text() {
        assert_eq!(ExprTree::var(0).node_count(), 1);
        let t = parse_expr("x1 + x2").unwrap();
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.to_text(), "(x1 + x2)");
        assert_eq!(parse_expr("x1 / x2").unwrap().to_text(), "pdiv(x1, x2)");
        let lam = parse_expr("0.9974 - 0.002605 * psqrt(tau_max * L) * (tau_max - tanh(tau_min))")
            .unwrap();
        assert_eq!(lam.node_count(), 13);
    }

    #[test]
    fn parser_handles_literals_and_errors() {
        let t = parse_expr("-2.5e-3 * x3 - -1").unwrap();
        assert_eq!(
            t.eval(&[0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]),
            -2.5e-3 * 2.0 + 1.0
        );
        assert!(parse_expr("x8").is_err());
        assert!(parse_expr("foo(x1)").is_err());
        assert!(parse_expr("(x1 + x2").is_err());
        assert!(parse_expr("x1 x2").is_err());
        let neg = parse_expr("-x1").unwrap();
        assert_eq!(neg.eval(&[2.0; 7]), -2.0);
    }

    #[test]
    fn depth_of_nested_tree() {
        let t = parse_expr("sin(x1 + cos(x2))").unwrap();
        assert_eq!(t.depth(), 4);
        assert_eq!(t.node_depths(), vec![1, 2, 3, 3, 4]);
    }

    #[test]
    fn root_crossover_swaps_parents() {
        let cfg = GpConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = parse_expr("x1 + x2").unwrap();
        let b = parse_expr("sin(x3)").unwrap();
        let (c1, c2) = crossover_at(&a, &b, 0, 0, &cfg, &mut rng);
        assert_eq!(c1, b);
        assert_eq!(c2, a);
        let (d1, d2) = crossover_at(&a, &a, 1, 1, &cfg, &mut rng);
        assert_eq!(d1, a);
        assert_eq!(d2, a);
    }

    #[test]
    fn mutating_a_terminal_gives_fresh_tree() {
        let cfg = GpConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = subtree_mutate(&ExprTree::var(0), &cfg, &mut rng);
        assert!(m.depth() <= cfg.max_depth);
    }

    #[test]
    fn tournament_examples() {
        let scores = [3.0, 1.0, 2.0, 5.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hits = 0;
        for _ in 0..10_000 {
            if tournament_select(&scores, 3, &mut rng).unwrap() == 1 {
                hits += 1;
            }
        }
        assert!(hits as f64 / 10_000.0 > 0.5);
        let mut counts = [0usize; 4];
        for _ in 0..8000 {
            counts[tournament_select(&scores, 1, &mut rng).unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| (1700..2300).contains(&c)));
        assert!(tournament_select(&[], 3, &mut rng).is_err());
    }

    #[test]
    fn least_squares_examples() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 2.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        let f = fit_gene_weights(std::slice::from_ref(&x), &y).unwrap();
        assert!((f.weights[0] - 2.0).abs() < 1e-10 && (f.bias - 3.0).abs() < 1e-10);
        assert!(!f.ridge);
        let c = vec![4.2; 10];
        let f = fit_gene_weights(std::slice::from_ref(&x), &c).unwrap();
        assert!(f.weights[0].abs() < 1e-10 && (f.bias - 4.2).abs() < 1e-10);
        let f = fit_gene_weights(&[x.clone(), x.clone()], &y).unwrap();
        assert!(f.ridge);
        assert!(f.weights.iter().all(|w| w.is_finite()));
        assert!(((f.weights[0] + f.weights[1]) - 2.0).abs() < 1e-4);
        let f = fit_gene_weights(&[vec![1.0], vec![2.0]], &[3.0]).unwrap();
        assert!(f.ridge);
    }

    #[test]
    fn pareto_archive_contract() {
        let m = || MultiGeneModel {
            genes: vec![ExprTree::var(0)],
            weights: vec![1.0],
            bias: 0.0,
        };
        let mut a = ParetoArchive::default();
        assert!(a.offer(5, 1.0, m));
        assert!(!a.offer(6, 1.0, m));
        assert!(!a.offer(5, 1.0, m));
        assert!(a.offer(3, 2.0, m));
        assert!(a.offer(4, 0.5, m));
        let n: Vec<_> = a.entries().iter().map(|e| (e.node_count, e.mae)).collect();
        assert_eq!(n, vec![(3, 2.0), (4, 0.5)]);
    }

    #[test]
    fn single_gene_recovers_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<FeatureVector> = (0..30)
            .map(|_| {
                FeatureVector::new(
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(1.0..5.0),
                    rng.gen_range(0.1..1.0),
                    rng.gen_range(0.1..3.0),
                )
            })
            .collect();
        let y: Vec<f64> = x.iter().map(|f| f.k + f.tau_max).collect();
        let cfg = GpConfig {
            generations: 50,
            seed: 2,
            ..Default::default()
        };
        let r = run_gp(&x, &y, &cfg, GpMode::SingleGene).unwrap();
        assert!(r.mae < 1e-6, "mae {}", r.mae);
        assert_eq!(r.best.genes.len(), 1);
    }

    #[test]
    fn gp_is_deterministic_and_front_is_non_dominated() {
        let x: Vec<FeatureVector> = (0..12)
            .map(|i| FeatureVector::new(1.0, 1.0 + i as f64 * 0.3, 0.5, 0.2 * i as f64 + 0.1))
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|f| (f.l / f.tau_max).sin() + f.tau_min)
            .collect();
        let cfg = GpConfig {
            pop_size: 60,
            generations: 8,
            seed: 9,
            ..Default::default()
        };
        let a = run_gp(&x, &y, &cfg, GpMode::MultiGene).unwrap();
        let b = run_gp(&x, &y, &cfg, GpMode::MultiGene).unwrap();
        assert_eq!(a.best.to_text(), b.best.to_text());
        for p in &a.pareto {
            for q in &a.pareto {
                let dominates = q.node_count <= p.node_count
                    && q.mae <= p.mae
                    && (q.node_count, q.mae) != (p.node_count, p.mae);
                assert!(!dominates);
            }
        }
        for w in a.pareto.windows(2) {
            assert!(w[0].node_count < w[1].node_count && w[1].mae < w[0].mae);
        }
        for w in a.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(a.best.genes.iter().all(|g| g.depth() <= cfg.max_depth));
    }

    #[test]
    fn bad_probabilities_rejected() {
        let cfg = GpConfig {
            p_mutation: 0.5,
            ..Default::default()
        };
        let x = [FeatureVector::new(1.0, 1.0, 1.0, 1.0); 2];
        assert!(run_gp(&x, &[1.0, 2.0], &cfg, GpMode::SingleGene).is_err());
        assert!(run_gp(&x[..1], &[1.0], &GpConfig::default(), GpMode::SingleGene).is_err());
    }

    fn arb_tree() -> impl Strategy<Value = ExprTree> {
        (any::<u64>(), 1usize..=7).prop_map(|(seed, d)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_tree(d, &GpConfig::default(), &mut rng)
        })
    }

    proptest! {
        #[test]
        fn evaluation_is_total(t in arb_tree(), v in proptest::array::uniform4(1e-3f64..10.0)) {
            let out = t.eval(&row(v));
            prop_assert!(out.is_finite() && out.abs() <= CLAMP);
        }

        #[test]
        fn print_parse_round_trip(t in arb_tree(), v in proptest::array::uniform4(1e-3f64..10.0)) {
            let back = parse_expr(&t.to_text()).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(back.eval(&row(v)).to_bits(), t.eval(&row(v)).to_bits());
        }

        #[test]
        fn crossover_and_mutation_respect_depth(a in arb_tree(), b in arb_tree(), seed in any::<u64>()) {
            let cfg = GpConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (c1, c2) = subtree_crossover(&a, &b, &cfg, &mut rng);
            prop_assert!(c1.depth() <= cfg.max_depth && c2.depth() <= cfg.max_depth);
            let m = subtree_mutate(&c1, &cfg, &mut rng);
            prop_assert!(m.depth() <= cfg.max_depth);
            prop_assert!(m.eval(&row([1.0, 2.0, 0.5, 0.3])).is_finite());
        }
    }
}
