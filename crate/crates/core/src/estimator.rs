//! Maximum-rank estimation: DE point estimates, delta calibration, profile
//! bounds of the maximizer set and objective surfaces.
//!
//! Parameters are addressed by their position in the full coefficient vector
//! `[beta0 = 1, beta.., delta, gamma]`; position 0 is never searched.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::de::{self, DeConfig, TieBreak};
use crate::error::{Error, Result};
use crate::inequalities::{InequalitySet, Score};
use crate::model::Theta;

/// Grid resolution for profile scans.
pub const PROFILE_POINTS: usize = 601;

/// Names of the searchable components `1..dim`.
pub fn parameter_names(dim: usize) -> Vec<String> {
    let mut v: Vec<String> = (1..dim - 2).map(|k| format!("beta{k}")).collect();
    v.push("delta".into());
    v.push("gamma".into());
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub theta_hat: Theta,
    pub score: Score,
    /// Best count found by each restart, in restart order.
    pub restart_best: Vec<usize>,
    /// Profile bounds per searchable component, when computed.
    pub maximizer_bounds: Option<Vec<(f64, f64)>>,
    pub delta_calibrated: Option<f64>,
}

/// Full vector from the free components, inserting beta0 and a frozen delta.
fn expand(free: &[f64], dim: usize, delta: Option<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(dim);
    v.push(Theta::BETA0);
    match delta {
        None => v.extend_from_slice(free),
        Some(d) => {
            v.extend_from_slice(&free[..free.len() - 1]);
            v.push(d);
            v.push(free[free.len() - 1]);
        }
    }
    v
}

/// `de.bounds` covers components `1..dim`; a frozen delta drops its entry.
fn free_bounds(de: &DeConfig, dim: usize, delta: Option<f64>) -> Result<Vec<(f64, f64)>> {
    if de.bounds.len() != dim - 1 {
        return Err(Error::Config(format!(
            "DE bounds have {} entries, model has {} free parameters",
            de.bounds.len(),
            dim - 1
        )));
    }
    let mut b = de.bounds.clone();
    if delta.is_some() {
        b.remove(dim - 3);
    }
    Ok(b)
}

/// Runs `de.restarts` independent DE searches (in parallel) and keeps the
/// best, with ties resolved by `de.tie_break`.
pub fn point_estimate(ineqs: &InequalitySet, de: &DeConfig, delta: Option<f64>) -> Result<EstimateResult> {
    if ineqs.is_empty() {
        return Err(Error::EmptyInequalitySet);
    }
    let dim = ineqs.dim;
    let bounds = free_bounds(de, dim, delta)?;
    let cfg = DeConfig { bounds, ..de.clone() };
    cfg.validate()?;
    let objective = |x: &[f64]| ineqs.count_satisfied(&expand(x, dim, delta)) as f64;
    let runs: Vec<de::DeResult> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| de::differential_evolution(objective, &cfg, &[r as u64]))
        .collect::<Result<_>>()?;
    let mut best = &runs[0];
    for r in &runs[1..] {
        if de::improves(r.value, &r.x, best.value, &best.x, cfg.tie_break) {
            best = r;
        }
    }
    let full = expand(&best.x, dim, delta);
    Ok(EstimateResult {
        theta_hat: Theta::from_vector(&full)?,
        score: ineqs.score_vec(&full),
        restart_best: runs.iter().map(|r| r.value as usize).collect(),
        maximizer_bounds: None,
        delta_calibrated: delta,
    })
}

/// Smallest grid value of delta whose frozen estimate attains the largest
/// score over the grid. Returns it with the score profile.
pub fn calibrate_delta(ineqs: &InequalitySet, grid: &[f64], de: &DeConfig) -> Result<(f64, Vec<(f64, usize)>)> {
    if grid.is_empty() {
        return Err(Error::Config("delta grid is empty".into()));
    }
    let profile: Vec<(f64, usize)> = grid
        .iter()
        .map(|&d| point_estimate(ineqs, de, Some(d)).map(|e| (d, e.score.count)))
        .collect::<Result<_>>()?;
    Ok((pick_calibrated(&profile), profile))
}

/// Smallest value attaining the maximum score of a `(value, score)` profile.
pub fn pick_calibrated(profile: &[(f64, usize)]) -> f64 {
    let max = profile.iter().map(|p| p.1).max().unwrap_or(0);
    profile
        .iter()
        .filter(|p| p.1 == max)
        .map(|p| p.0)
        .fold(f64::INFINITY, f64::min)
}

/// Uniform grid of `points` values on `[lo, hi]`.
pub fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Per searchable component, the smallest and largest value on a profile
/// grid (plus the estimate itself) that keeps the score of `theta_hat`
/// while the other components stay at `theta_hat`.
pub fn maximizer_bounds(
    ineqs: &InequalitySet,
    theta_hat: &Theta,
    bounds: &[(f64, f64)],
    points: usize,
) -> Result<Vec<(f64, f64)>> {
    let base = theta_hat.to_vector();
    if base.len() != ineqs.dim || bounds.len() != ineqs.dim - 1 {
        return Err(Error::Config("bounds or theta do not match the inequality dimension".into()));
    }
    let target = ineqs.count_satisfied(&base);
    Ok((1..ineqs.dim)
        .into_par_iter()
        .map(|k| {
            let (lo, hi) = bounds[k - 1];
            let mut g = grid(lo, hi, points);
            g.push(base[k]);
            let mut v = base.clone();
            let mut lb = base[k];
            let mut ub = base[k];
            for x in g {
                v[k] = x;
                if ineqs.count_satisfied(&v) >= target {
                    lb = lb.min(x);
                    ub = ub.max(x);
                }
            }
            (lb, ub)
        })
        .collect())
}

/// Scores on a 1-D or 2-D grid over components of the full vector, holding
/// the rest at `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub axes: Vec<(usize, String, Vec<f64>)>,
    /// Row-major over the axes (last axis fastest).
    pub counts: Vec<usize>,
    pub total: usize,
}

pub fn objective_surface(ineqs: &InequalitySet, base: &[f64], axes: &[(usize, Vec<f64>)]) -> Result<Surface> {
    if axes.is_empty() || axes.len() > 2 {
        return Err(Error::Config("surfaces take one or two axes".into()));
    }
    if base.len() != ineqs.dim || axes.iter().any(|(k, g)| *k == 0 || *k >= ineqs.dim || g.is_empty()) {
        return Err(Error::Config("surface axis outside the parameter vector".into()));
    }
    let names = parameter_names(ineqs.dim);
    let outer = &axes[0];
    let inner: Option<&(usize, Vec<f64>)> = axes.get(1);
    let counts: Vec<usize> = outer
        .1
        .par_iter()
        .flat_map_iter(|&x| {
            let mut v = base.to_vec();
            v[outer.0] = x;
            let row: Vec<usize> = match inner {
                None => vec![ineqs.count_satisfied(&v)],
                Some((k, g)) => g
                    .iter()
                    .map(|&y| {
                        v[*k] = y;
                        ineqs.count_satisfied(&v)
                    })
                    .collect(),
            };
            row
        })
        .collect();
    Ok(Surface {
        axes: axes.iter().map(|(k, g)| (*k, names[k - 1].clone(), g.clone())).collect(),
        counts,
        total: ineqs.len(),
    })
}

impl Surface {
    pub fn max(&self) -> usize {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// 2-D count at `(row, col)`; 1-D surfaces use `col = 0`.
    pub fn at(&self, row: usize, col: usize) -> usize {
        let width = self.axes.get(1).map_or(1, |a| a.2.len());
        self.counts[row * width + col]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = self.axes.iter().map(|a| a.1.clone()).collect();
        header.extend(["count".to_string(), "fraction".to_string()]);
        out.write_record(&header)?;
        let width = self.axes.get(1).map_or(1, |a| a.2.len());
        for (idx, &c) in self.counts.iter().enumerate() {
            let mut row = vec![self.axes[0].2[idx / width].to_string()];
            if let Some(a) = self.axes.get(1) {
                row.push(a.2[idx % width].to_string());
            }
            row.push(c.to_string());
            row.push((c as f64 / self.total.max(1) as f64).to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Search defaults for the synthetic studies: 50 generations of a single run.
/// Ties keep the first point found, so components the data do not pin down
/// land anywhere in the box instead of being pulled to zero.
pub fn monte_carlo_de(dim: usize, lo: f64, hi: f64, seed: u64) -> DeConfig {
    DeConfig {
        population: 100,
        generations: 50,
        bounds: vec![(lo, hi); dim - 1],
        restarts: 1,
        tie_break: TieBreak::FirstFound,
        seed,
        ..DeConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inequalities::{Detail, Family, Inequality, InequalityOptions};
    use crate::model::SubsidySpec;

    fn set(zs: &[[f64; 4]]) -> InequalitySet {
        InequalitySet {
            n: 4,
            dim: 4,
            options: InequalityOptions::default(),
            subsidy: SubsidySpec::default(),
            inequalities: zs
                .iter()
                .map(|z| Inequality {
                    z: z.to_vec(),
                    family: Family::TwoCoalitions,
                    pair: (0, 1),
                    detail: Detail::Drop { k: 0 },
                })
                .collect(),
        }
    }

    fn de(seed: u64) -> DeConfig {
        DeConfig {
            population: 20,
            generations: 40,
            bounds: vec![(-10.0, 10.0); 3],
            restarts: 4,
            seed,
            ..DeConfig::default()
        }
    }

    #[test]
    fn names() {
        assert_eq!(parameter_names(4), vec!["beta1", "delta", "gamma"]);
        assert_eq!(parameter_names(3), vec!["delta", "gamma"]);
    }

    #[test]
    fn expand_inserts_frozen_delta() {
        assert_eq!(expand(&[2.0, 3.0], 4, Some(7.0)), vec![1.0, 2.0, 7.0, 3.0]);
        assert_eq!(expand(&[2.0, 5.0, 3.0], 4, None), vec![1.0, 2.0, 5.0, 3.0]);
    }

    #[test]
    fn estimate_satisfies_everything_when_possible() {
        // gamma >= 2 and gamma <= 3 and beta1 >= -1
        let s = set(&[[-2.0, 0.0, 0.0, 1.0], [3.0, 0.0, 0.0, -1.0], [1.0, 1.0, 0.0, 0.0]]);
        let e = point_estimate(&s, &de(1), None).unwrap();
        assert_eq!(e.score.count, 3);
        assert!(e.theta_hat.gamma >= 2.0 && e.theta_hat.gamma <= 3.0);
        let again = point_estimate(&s, &de(1), None).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn frozen_delta_is_respected() {
        let s = set(&[[0.0, 0.0, 1.0, 0.0]]);
        let e = point_estimate(&s, &de(2), Some(-4.0)).unwrap();
        assert_eq!(e.theta_hat.delta, -4.0);
        assert_eq!(e.score.count, 0);
    }

    #[test]
    fn calibration_picks_smallest_maximizer() {
        assert_eq!(pick_calibrated(&[(0.0, 1), (1.0, 3), (2.0, 3), (3.0, 3)]), 1.0);
        assert_eq!(pick_calibrated(&[(0.0, 2), (1.0, 2)]), 0.0);
        assert_eq!(pick_calibrated(&[(0.0, 1), (1.0, 2), (2.0, 3)]), 2.0);
        // delta >= 2 satisfies the single inequality
        let s = set(&[[-2.0, 0.0, 1.0, 0.0]]);
        let (d, profile) = calibrate_delta(&s, &[0.0, 1.0, 2.0, 3.0, 4.0], &de(3)).unwrap();
        assert_eq!(d, 2.0);
        assert_eq!(profile.len(), 5);
    }

    #[test]
    fn bounds_flat_and_peaked() {
        // gamma in [1, 2]; beta1 and delta unrestricted
        let s = set(&[[-1.0, 0.0, 0.0, 1.0], [2.0, 0.0, 0.0, -1.0]]);
        let th = Theta::new(vec![0.0], 0.0, 1.5);
        let b = maximizer_bounds(&s, &th, &[(-10.0, 10.0); 3], 201).unwrap();
        assert_eq!(b[0], (-10.0, 10.0));
        assert_eq!(b[1], (-10.0, 10.0));
        assert!((b[2].0 - 1.0).abs() < 1e-9 && (b[2].1 - 2.0).abs() < 1e-9);
        // single peak: gamma == 1 exactly
        let s = set(&[[-1.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, -1.0]]);
        let th = Theta::new(vec![0.0], 0.0, 1.0);
        let b = maximizer_bounds(&s, &th, &[(-10.0, 10.0); 3], 201).unwrap();
        assert_eq!(b[2], (1.0, 1.0));
    }

    #[test]
    fn surface_shapes_and_csv() {
        let s = set(&[[-1.0, 0.0, 0.0, 1.0]]);
        let base = vec![1.0, 0.0, 0.0, 0.0];
        let surf = objective_surface(&s, &base, &[(1, grid(-1.0, 1.0, 3)), (3, grid(0.0, 2.0, 5))]).unwrap();
        assert_eq!(surf.counts.len(), 15);
        assert_eq!(surf.at(0, 0), 0);
        assert_eq!(surf.at(0, 2), 1);
        let mut buf = Vec::new();
        surf.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("beta1,gamma,count,fraction"));
        assert_eq!(text.lines().count(), 16);
    }

    #[test]
    fn symmetric_inequalities_give_symmetric_surface() {
        let s = set(&[[0.0, 1.0, 0.0, 1.0], [0.0, -1.0, 0.0, -1.0], [0.5, 1.0, 0.0, -1.0]]);
        let g = grid(-2.0, 2.0, 9);
        let surf = objective_surface(&s, &[1.0, 0.0, 0.0, 0.0], &[(1, g.clone()), (3, g)]).unwrap();
        let mut sym = true;
        for r in 0..9 {
            for c in 0..9 {
                sym &= surf.at(r, c) == surf.at(8 - r, 8 - c);
            }
        }
        assert!(!sym, "the offset inequality breaks sign symmetry");
        let s = set(&[[0.0, 1.0, 0.0, 1.0], [0.0, -1.0, 0.0, -1.0]]);
        let g = grid(-2.0, 2.0, 9);
        let surf = objective_surface(&s, &[1.0, 0.0, 0.0, 0.0], &[(1, g.clone()), (3, g)]).unwrap();
        for r in 0..9 {
            for c in 0..9 {
                assert_eq!(surf.at(r, c), surf.at(8 - r, 8 - c));
            }
        }
    }
}
