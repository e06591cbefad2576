//! Differential evolution, DE/rand/1/bin, maximizing over a box.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Rule for choosing among candidates with equal objective value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Smallest Euclidean norm.
    MinNorm,
    /// Keep whichever was found first.
    FirstFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeConfig {
    pub population: usize,
    pub generations: usize,
    pub bounds: Vec<(f64, f64)>,
    pub f: f64,
    pub cr: f64,
    pub restarts: usize,
    pub tie_break: TieBreak,
    pub seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        DeConfig {
            population: 100,
            generations: 1000,
            bounds: Vec::new(),
            f: 0.8,
            cr: 0.9,
            restarts: 100,
            tie_break: TieBreak::MinNorm,
            seed: 0,
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::Config(format!("DE population {} < 4", self.population)));
        }
        if !(self.cr > 0.0 && self.cr <= 1.0) {
            return Err(Error::Config(format!("DE crossover rate {} outside (0, 1]", self.cr)));
        }
        if !(self.f > 0.0 && self.f < 2.0) {
            return Err(Error::Config(format!("DE weight {} outside (0, 2)", self.f)));
        }
        if self.restarts == 0 {
            return Err(Error::Config("DE needs at least one restart".into()));
        }
        if self.bounds.is_empty() {
            return Err(Error::Config("DE bounds are empty".into()));
        }
        for &(lo, hi) in &self.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("bad DE bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `true` when candidate `(x, v)` should replace the incumbent best.
pub fn improves(v: f64, x: &[f64], best_v: f64, best_x: &[f64], tie: TieBreak) -> bool {
    v > best_v || (v == best_v && tie == TieBreak::MinNorm && norm2(x) < norm2(best_x))
}

/// One DE run from the given stream. Returns the best point ever evaluated.
pub fn differential_evolution<F>(objective: F, cfg: &DeConfig, stream: &[u64]) -> Result<DeResult>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, stream);
    let d = cfg.bounds.len();
    let np = cfg.population;
    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            cfg.bounds
                .iter()
                .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                .collect()
        })
        .collect();
    let mut fit: Vec<f64> = pop.iter().map(|x| objective(x)).collect();
    let mut evaluations = np;
    let mut best = 0;
    for i in 1..np {
        if improves(fit[i], &pop[i], fit[best], &pop[best], cfg.tie_break) {
            best = i;
        }
    }
    let mut best_x = pop[best].clone();
    let mut best_v = fit[best];
    let mut trial = vec![0.0; d];
    for _ in 0..cfg.generations {
        for i in 0..np {
            let (r1, r2, r3) = loop {
                let picks = index::sample(&mut rng, np, 3);
                let (a, b, c) = (picks.index(0), picks.index(1), picks.index(2));
                if a != i && b != i && c != i {
                    break (a, b, c);
                }
            };
            let jrand = rng.random_range(0..d);
            for j in 0..d {
                trial[j] = if j == jrand || rng.random::<f64>() < cfg.cr {
                    let (lo, hi) = cfg.bounds[j];
                    (pop[r1][j] + cfg.f * (pop[r2][j] - pop[r3][j])).clamp(lo, hi)
                } else {
                    pop[i][j]
                };
            }
            let v = objective(&trial);
            evaluations += 1;
            if v >= fit[i] {
                pop[i].copy_from_slice(&trial);
                fit[i] = v;
            }
            if improves(v, &trial, best_v, &best_x, cfg.tie_break) {
                best_x.copy_from_slice(&trial);
                best_v = v;
            }
        }
    }
    Ok(DeResult {
        x: best_x,
        value: best_v,
        evaluations,
    })
}
