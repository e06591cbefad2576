//! Percentile confidence intervals by bootstrap or subsampling of firms.
//!
//! Fixed firms (by default the main firms) appear in every replicate; the
//! others are drawn with replacement (bootstrap) or without (subsampling).
//! Each replicate rebuilds its inequalities and re-runs the estimator.

use rand::seq::{index, IndexedRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::de::DeConfig;
use crate::error::{Error, Result};
use crate::estimator::{parameter_names, point_estimate};
use crate::inequalities::{build_inequalities, InequalityOptions, ObservedMatching};
use crate::model::{FirmRecord, Market, ModelSpec, Role};
use crate::{rng, stats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    Bootstrap,
    Subsampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    pub method: ResampleMethod,
    pub replications: usize,
    /// Firm ids kept in every replicate; `None` keeps the main firms.
    pub keep_fixed: Option<Vec<usize>>,
    /// Total replicate size, fixed firms included (subsampling only).
    pub subsample_size: Option<usize>,
    pub seed: u64,
    /// DE budget per replicate.
    pub replicate_population: usize,
    pub replicate_restarts: usize,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig {
            method: ResampleMethod::Bootstrap,
            replications: 200,
            keep_fixed: None,
            subsample_size: None,
            seed: 0,
            replicate_population: 200,
            replicate_restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    pub n_firms: usize,
    pub n_inequalities: usize,
    /// Searchable components of the replicate estimate; `None` when skipped.
    pub params: Option<Vec<f64>>,
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiResult {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub replicates: Vec<Replicate>,
    pub skipped: usize,
    /// More than 10% of replicates had no inequalities.
    pub warning: bool,
}

/// Indices (into `firms`) of one replicate, fixed firms first.
pub fn draw_replicate(firms: &[FirmRecord], fixed: &[bool], rc: &ResampleConfig, index_: usize) -> Result<Vec<usize>> {
    let mut r = rng::stream(rc.seed, &[0xC1, index_ as u64]);
    let kept: Vec<usize> = (0..firms.len()).filter(|&i| fixed[i]).collect();
    let pool: Vec<usize> = (0..firms.len()).filter(|&i| !fixed[i]).collect();
    let mut out = kept.clone();
    match rc.method {
        ResampleMethod::Bootstrap => {
            if !pool.is_empty() {
                out.extend((0..pool.len()).map(|_| *pool.choose(&mut r).unwrap()));
            }
        }
        ResampleMethod::Subsampling => {
            let b = rc
                .subsample_size
                .ok_or_else(|| Error::Config("subsampling needs subsample_size".into()))?;
            if b >= firms.len() || b < kept.len() {
                return Err(Error::Config(format!(
                    "subsample size {b} must be below {} and at least the {} fixed firms",
                    firms.len(),
                    kept.len()
                )));
            }
            let picks = index::sample(&mut r, pool.len(), b - kept.len());
            let mut chosen: Vec<usize> = picks.iter().map(|k| pool[k]).collect();
            chosen.sort_unstable();
            out.extend(chosen);
        }
    }
    Ok(out)
}

fn fixed_mask(firms: &[FirmRecord], rc: &ResampleConfig) -> Result<Vec<bool>> {
    match &rc.keep_fixed {
        None => Ok(firms.iter().map(|f| f.role == Some(Role::MainBuyer)).collect()),
        Some(ids) => {
            let mut mask = vec![false; firms.len()];
            for id in ids {
                let pos = firms
                    .iter()
                    .position(|f| f.id == *id)
                    .ok_or_else(|| Error::Config(format!("fixed firm id {id} not in data")))?;
                mask[pos] = true;
            }
            Ok(mask)
        }
    }
}

/// Runs all replicates. `de.seed` is shared by every replicate so that
/// differences across replicates come from the data only.
pub fn resample_ci(
    firms: &[FirmRecord],
    spec: &ModelSpec,
    options: &InequalityOptions,
    de: &DeConfig,
    delta: Option<f64>,
    rc: &ResampleConfig,
) -> Result<CiResult> {
    if rc.replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    let fixed = fixed_mask(firms, rc)?;
    let rep_de = DeConfig {
        population: rc.replicate_population,
        restarts: rc.replicate_restarts,
        ..de.clone()
    };
    let replicates: Vec<Replicate> = (0..rc.replications)
        .into_par_iter()
        .map(|b| -> Result<Replicate> {
            let picks = draw_replicate(firms, &fixed, rc, b)?;
            let sample: Vec<FirmRecord> = picks.iter().map(|&i| firms[i].clone()).collect();
            let market = Market::new(sample.clone(), spec.clone())?;
            let mut obs = ObservedMatching::from_firms(&sample, options.buyer_restriction)?;
            obs.origin = Some(picks.clone());
            let mut rep = Replicate {
                index: b,
                n_firms: picks.len(),
                n_inequalities: 0,
                params: None,
                fraction: None,
            };
            match build_inequalities(&market, &obs, options) {
                Ok(set) => {
                    rep.n_inequalities = set.len();
                    let est = point_estimate(&set, &rep_de, delta)?;
                    rep.params = Some(est.theta_hat.to_vector()[1..].to_vec());
                    rep.fraction = Some(est.score.fraction);
                }
                Err(Error::EmptyInequalitySet) => {}
                Err(e) => return Err(e),
            }
            Ok(rep)
        })
        .collect::<Result<_>>()?;
    let done: Vec<&Vec<f64>> = replicates.iter().filter_map(|r| r.params.as_ref()).collect();
    let skipped = replicates.len() - done.len();
    if done.is_empty() {
        return Err(Error::EmptyInequalitySet);
    }
    let dim = done[0].len();
    let (lower, upper) = percentile_bounds(&done, dim);
    Ok(CiResult {
        names: parameter_names(dim + 1),
        lower,
        upper,
        replicates,
        skipped,
        warning: skipped * 10 > rc.replications,
    })
}

/// Componentwise 2.5th and 97.5th percentiles.
pub fn percentile_bounds(rows: &[&Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    (0..dim)
        .map(|k| {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            (
                stats::percentile(&col, 0.025).unwrap(),
                stats::percentile(&col, 0.975).unwrap(),
            )
        })
        .unzip()
}

impl CiResult {
    pub fn write_replicates_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["replicate".to_string(), "n_firms".into(), "n_inequalities".into(), "fraction".into()];
        header.extend(self.names.iter().cloned());
        out.write_record(&header)?;
        for r in &self.replicates {
            let mut row = vec![
                r.index.to_string(),
                r.n_firms.to_string(),
                r.n_inequalities.to_string(),
                r.fraction.map_or(String::new(), |f| f.to_string()),
            ];
            match &r.params {
                Some(p) => row.extend(p.iter().map(|v| v.to_string())),
                None => row.extend(self.names.iter().map(|_| String::new())),
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Covariate;

    fn firms() -> Vec<FirmRecord> {
        let spec = [
            (Role::MainBuyer, Some(1), [0.9, 0.1]),
            (Role::Seller, Some(1), [0.3, 0.2]),
            (Role::MainBuyer, Some(2), [0.6, 0.4]),
            (Role::Seller, Some(2), [0.2, 0.05]),
            (Role::Seller, Some(2), [0.1, 0.1]),
            (Role::Unmatched, None, [0.05, 0.02]),
            (Role::Unmatched, None, [0.08, 0.3]),
            (Role::Unmatched, None, [0.02, 0.01]),
        ];
        spec.iter()
            .enumerate()
            .map(|(i, (r, g, t))| FirmRecord::new(i, format!("f{i}"), Some(*r), t.to_vec(), *g).unwrap())
            .collect()
    }

    fn model() -> ModelSpec {
        ModelSpec {
            covariates: vec![Covariate::SizeOfType(0), Covariate::ShareOfType(0)],
            ..ModelSpec::default()
        }
    }

    fn de() -> DeConfig {
        DeConfig {
            population: 20,
            generations: 10,
            bounds: vec![(-10.0, 10.0); 3],
            restarts: 1,
            seed: 5,
            ..DeConfig::default()
        }
    }

    #[test]
    fn bootstrap_keeps_fixed_and_size() {
        let f = firms();
        let rc = ResampleConfig::default();
        let mask = fixed_mask(&f, &rc).unwrap();
        let picks = draw_replicate(&f, &mask, &rc, 3).unwrap();
        assert_eq!(picks.len(), f.len());
        assert_eq!(&picks[..2], &[0, 2]);
        assert!(picks[2..].iter().all(|&i| !mask[i]));
    }

    #[test]
    fn subsample_size_counts_fixed_firms() {
        let f = firms();
        let rc = ResampleConfig {
            method: ResampleMethod::Subsampling,
            subsample_size: Some(5),
            ..ResampleConfig::default()
        };
        let mask = fixed_mask(&f, &rc).unwrap();
        let picks = draw_replicate(&f, &mask, &rc, 0).unwrap();
        assert_eq!(picks.len(), 5);
        let mut u = picks.clone();
        u.dedup();
        assert_eq!(u.len(), 5);
        let bad = ResampleConfig {
            subsample_size: Some(8),
            ..rc
        };
        assert!(draw_replicate(&f, &mask, &bad, 0).is_err());
    }

    #[test]
    fn single_replicate_collapses() {
        let rc = ResampleConfig {
            replications: 1,
            replicate_population: 20,
            ..ResampleConfig::default()
        };
        let ci = resample_ci(&firms(), &model(), &InequalityOptions::default(), &de(), Some(1.0), &rc).unwrap();
        let p = ci.replicates[0].params.as_ref().unwrap();
        assert_eq!(&ci.lower, p);
        assert_eq!(&ci.upper, p);
    }

    #[test]
    fn all_fixed_gives_zero_width() {
        let f = firms();
        let rc = ResampleConfig {
            replications: 5,
            keep_fixed: Some(f.iter().map(|x| x.id).collect()),
            replicate_population: 20,
            ..ResampleConfig::default()
        };
        let ci = resample_ci(&f, &model(), &InequalityOptions::default(), &de(), None, &rc).unwrap();
        assert_eq!(ci.lower, ci.upper);
        assert_eq!(ci.skipped, 0);
        let mut buf = Vec::new();
        ci.write_replicates_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
    }

    #[test]
    fn lower_never_exceeds_upper() {
        let rc = ResampleConfig {
            replications: 12,
            replicate_population: 20,
            ..ResampleConfig::default()
        };
        let ci = resample_ci(&firms(), &model(), &InequalityOptions::default(), &de(), None, &rc).unwrap();
        for (l, u) in ci.lower.iter().zip(&ci.upper) {
            assert!(l <= u);
        }
    }
}
