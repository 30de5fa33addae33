//! Real-coded genetic algorithm: rank scaling, stochastic-uniform selection,
//! scattered crossover, Gaussian mutation and elitism.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_config, Error, Result};
use crate::rng::{stream, CONTROL_SLOT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub pop_size: usize,
    pub elite_count: usize,
    pub crossover_fraction: f64,
    pub max_generations: usize,
    pub stall_generations: usize,
    /// Relative improvement below which a generation counts as stalled.
    pub function_tolerance: f64,
    /// Stop as soon as the best objective reaches this value.
    pub objective_target: Option<f64>,
    pub mutation_scale_start: f64,
    pub mutation_scale_end: f64,
    pub seed: u64,
    /// Hard box; mutated genes are clipped to it.
    pub bounds: Vec<(f64, f64)>,
    /// Box for the initial population and the mutation width. Defaults to `bounds`.
    pub init_range: Option<Vec<(f64, f64)>>,
    /// Individuals injected into the initial population.
    pub seeds: Vec<Vec<f64>>,
}

impl GaConfig {
    pub const DEF: Self = Self {
        pop_size: 20,
        elite_count: 2,
        crossover_fraction: 0.8,
        max_generations: 100,
        stall_generations: 20,
        function_tolerance: 1e-6,
        objective_target: None,
        mutation_scale_start: 0.1,
        mutation_scale_end: 0.01,
        seed: 0,
        bounds: Vec::new(),
        init_range: None,
        seeds: Vec::new(),
    };

    pub fn with_bounds(bounds: Vec<(f64, f64)>) -> Self {
        Self {
            bounds,
            ..Self::DEF
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn pop_size(mut self, n: usize) -> Self {
        self.pop_size = n;
        self
    }

    pub fn max_generations(mut self, n: usize) -> Self {
        self.max_generations = n;
        self
    }

    pub fn stall_generations(mut self, n: usize) -> Self {
        self.stall_generations = n;
        self
    }

    pub fn init_range(mut self, r: Vec<(f64, f64)>) -> Self {
        self.init_range = Some(r);
        self
    }

    pub fn mutation_scale(mut self, start: f64, end: f64) -> Self {
        self.mutation_scale_start = start;
        self.mutation_scale_end = end;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 {
            return Err(invalid_config("pop_size must be at least 2"));
        }
        if self.elite_count >= self.pop_size {
            return Err(invalid_config("elite_count must be smaller than pop_size"));
        }
        if !(0.0..=1.0).contains(&self.crossover_fraction) {
            return Err(invalid_config("crossover_fraction must lie in [0, 1]"));
        }
        if self.max_generations == 0 {
            return Err(invalid_config("max_generations must be positive"));
        }
        if self.bounds.is_empty() {
            return Err(invalid_config("bounds must not be empty"));
        }
        check_box(&self.bounds, "bounds")?;
        if let Some(r) = &self.init_range {
            if r.len() != self.bounds.len() {
                return Err(invalid_config("init_range and bounds differ in length"));
            }
            check_box(r, "init_range")?;
        }
        if self.seeds.len() > self.pop_size
            || self.seeds.iter().any(|s| s.len() != self.bounds.len())
        {
            return Err(invalid_config(
                "seed individuals must match the gene count and fit in the population",
            ));
        }
        for s in [self.mutation_scale_start, self.mutation_scale_end] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(invalid_config("mutation scales must be finite and >= 0"));
            }
        }
        Ok(())
    }

    fn init_box(&self) -> &[(f64, f64)] {
        self.init_range.as_deref().unwrap_or(&self.bounds)
    }

    fn scale_at(&self, generation: usize) -> f64 {
        let frac = (generation as f64 / self.max_generations as f64).min(1.0);
        self.mutation_scale_start + (self.mutation_scale_end - self.mutation_scale_start) * frac
    }
}

impl Default for GaConfig {
    fn default() -> Self {
        Self::DEF
    }
}

fn check_box(b: &[(f64, f64)], what: &str) -> Result<()> {
    for (i, &(lo, hi)) in b.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(invalid_config(format!(
                "{what}[{i}] = ({lo}, {hi}) is not a valid interval"
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub median: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxGenerations,
    Stall,
    ObjectiveTarget,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Vec<f64>,
    pub best_objective: f64,
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
    pub stop_reason: StopReason,
}

fn key(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}

fn sorted_order(obj: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..obj.len()).collect();
    idx.sort_by(|&a, &b| key(obj[a]).total_cmp(&key(obj[b])).then(a.cmp(&b)));
    idx
}

/// Rank-based fitness `1/sqrt(rank)` normalised to sum to one. Ties share the mean of their ranks' values.
pub fn rank_scale(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(invalid_arg("rank_scale needs at least one score"));
    }
    let order = sorted_order(raw);
    let mut out = vec![0.0; raw.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && key(raw[order[j + 1]]) == key(raw[order[i]]) {
            j += 1;
        }
        let mean = (i..=j).map(|r| 1.0 / ((r + 1) as f64).sqrt()).sum::<f64>() / (j - i + 1) as f64;
        for &k in &order[i..=j] {
            out[k] = mean;
        }
        i = j + 1;
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    Ok(out)
}

/// Stochastic universal sampling: `n` equally spaced pointers over the cumulative fitness.
pub fn select_stochastic_uniform(
    fitness: &[f64],
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if fitness.is_empty() {
        return Err(invalid_arg("selection needs a non-empty population"));
    }
    if fitness.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(invalid_arg(
            "fitness values must be finite and non-negative",
        ));
    }
    let total: f64 = fitness.iter().sum();
    if total <= 0.0 {
        return Err(invalid_arg("fitness values sum to zero"));
    }
    let step = total / n as f64;
    let mut pos = rng.gen::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut cum = fitness[0];
    let mut k = 0;
    for _ in 0..n {
        while pos >= cum && k + 1 < fitness.len() {
            k += 1;
            cum += fitness[k];
        }
        out.push(k);
        pos += step;
    }
    Ok(out)
}

/// Child takes each gene from `a` or `b` according to a random binary mask.
pub fn scattered_crossover(a: &[f64], b: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
    let mask: Vec<bool> = (0..a.len()).map(|_| rng.gen::<bool>()).collect();
    scattered_crossover_mask(a, b, &mask)
}

pub fn scattered_crossover_mask(a: &[f64], b: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.len() != mask.len() {
        return Err(invalid_arg(format!(
            "parent lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(mask
        .iter()
        .zip(a.iter().zip(b))
        .map(|(&m, (&x, &y))| if m { x } else { y })
        .collect())
}

/// Adds `N(0, (scale * width_i)^2)` to each gene and clips to `bounds`.
pub fn gaussian_mutate(
    genes: &[f64],
    scale: f64,
    widths: &[f64],
    bounds: &[(f64, f64)],
    rng: &mut impl Rng,
) -> Vec<f64> {
    genes
        .iter()
        .zip(widths.iter().zip(bounds))
        .map(|(&g, (&w, &(lo, hi)))| {
            let z: f64 = rng.sample(StandardNormal);
            (g + z * scale * w).clamp(lo, hi)
        })
        .collect()
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Minimises `objective` over the box in `cfg`. Deterministic for a given seed.
pub fn run_ga<F>(objective: F, cfg: &GaConfig) -> Result<GaResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let dim = cfg.bounds.len();
    let init = cfg.init_box();
    let widths: Vec<f64> = init.iter().map(|(lo, hi)| hi - lo).collect();

    let mut pop: Vec<Vec<f64>> = (0..cfg.pop_size)
        .map(|i| {
            let mut rng = stream(cfg.seed, 0, i as u64);
            (0..dim)
                .map(|d| {
                    let (lo, hi) = init[d];
                    let (blo, bhi) = cfg.bounds[d];
                    (lo + (hi - lo) * rng.gen::<f64>()).clamp(blo, bhi)
                })
                .collect()
        })
        .collect();
    for (slot, seed) in pop.iter_mut().zip(&cfg.seeds) {
        *slot = seed
            .iter()
            .zip(&cfg.bounds)
            .map(|(g, (lo, hi))| g.clamp(*lo, *hi))
            .collect();
    }
    let mut obj: Vec<f64> = pop.par_iter().map(|g| objective(g)).collect();
    let mut evaluations = pop.len();
    if obj.iter().all(|o| !key(*o).is_finite()) {
        return Err(Error::InvalidArgument(
            "objective is non-finite for the whole initial population".into(),
        ));
    }

    let mut history = Vec::new();
    let mut best_seen = f64::INFINITY;
    let mut stall = 0;
    let mut generation = 0;
    let stop_reason = loop {
        let order = sorted_order(&obj);
        let sorted: Vec<f64> = order.iter().map(|&i| key(obj[i])).collect();
        let best = sorted[0];
        history.push(GenerationStats {
            generation,
            best,
            median: median(&sorted),
        });
        if let Some(t) = cfg.objective_target {
            if best <= t {
                break StopReason::ObjectiveTarget;
            }
        }
        if generation > 0 {
            let improvement = best_seen - best;
            if improvement <= cfg.function_tolerance * best_seen.abs().max(1.0) {
                stall += 1;
            } else {
                stall = 0;
            }
        }
        best_seen = best_seen.min(best);
        if cfg.stall_generations > 0 && stall >= cfg.stall_generations {
            break StopReason::Stall;
        }
        if generation + 1 >= cfg.max_generations {
            break StopReason::MaxGenerations;
        }

        generation += 1;
        let fitness = rank_scale(&obj)?;
        let free = cfg.pop_size - cfg.elite_count;
        let n_cross = (cfg.crossover_fraction * free as f64).round() as usize;
        let n_mut = free - n_cross;
        let mut ctrl = stream(cfg.seed, generation, CONTROL_SLOT);
        let mut parents = select_stochastic_uniform(&fitness, 2 * n_cross + n_mut, &mut ctrl)?;
        parents.shuffle(&mut ctrl);

        let scale = cfg.scale_at(generation);
        let children: Vec<Vec<f64>> = (0..free)
            .map(|c| {
                let mut rng = stream(cfg.seed, generation, c as u64);
                if c < n_cross {
                    scattered_crossover(&pop[parents[2 * c]], &pop[parents[2 * c + 1]], &mut rng)
                        .expect("population members share a length")
                } else {
                    let p = parents[2 * n_cross + (c - n_cross)];
                    gaussian_mutate(&pop[p], scale, &widths, &cfg.bounds, &mut rng)
                }
            })
            .collect();
        let child_obj: Vec<f64> = children.par_iter().map(|g| objective(g)).collect();
        evaluations += children.len();

        let mut next = Vec::with_capacity(cfg.pop_size);
        let mut next_obj = Vec::with_capacity(cfg.pop_size);
        for &i in order.iter().take(cfg.elite_count) {
            next.push(pop[i].clone());
            next_obj.push(obj[i]);
        }
        next.extend(children);
        next_obj.extend(child_obj);
        pop = next;
        obj = next_obj;
    };

    let best_idx = sorted_order(&obj)[0];
    Ok(GaResult {
        best: pop[best_idx].clone(),
        best_objective: key(obj[best_idx]),
        history,
        evaluations,
        stop_reason,
    })
}
