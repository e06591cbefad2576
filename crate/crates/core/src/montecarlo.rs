//! Synthetic markets and batch identification / estimation studies.
//!
//! Each firm gets two carrier tonnages drawn i.i.d. and rescaled; the
//! production index interacts type-0 size and type-0 share. Shocks are
//! i.i.d. per (firm, bundle). Simulation `s`, attempt `a` draws everything
//! from stream `[s, a]` of the root seed, so results do not depend on
//! scheduling.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::de::DeConfig;
use crate::equilibrium::{
    assemble_lp, classify_outcome, integerize, solve_equilibrium, Allocation, MatchingOutcome, NoiseDraws,
    NonIntegerMode, DEFAULT_LP_CAP,
};
use crate::error::{Error, Result};
use crate::estimator::{grid, objective_surface, parameter_names, point_estimate, Surface};
use crate::inequalities::{build_inequalities, InequalityOptions, InequalitySet, ObservedMatching};
use crate::model::{Covariate, FirmRecord, Market, ModelSpec, SubsidySpec, Theta};
use crate::{rng, stats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum TonnageLaw {
    LogNormal { mu: f64, sigma: f64, scale: f64 },
    Uniform { lo: f64, hi: f64, scale: f64 },
}

impl TonnageLaw {
    pub fn base_case() -> Self {
        TonnageLaw::LogNormal {
            mu: 2.0,
            sigma: 1.0,
            scale: 0.01,
        }
    }

    pub fn large_firms() -> Self {
        TonnageLaw::Uniform {
            lo: 20.0,
            hi: 80.0,
            scale: 0.01,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        Ok(match *self {
            TonnageLaw::LogNormal { mu, sigma, scale } => {
                LogNormal::new(mu, sigma).map_err(|e| Error::Config(e.to_string()))?.sample(rng) * scale
            }
            TonnageLaw::Uniform { lo, hi, scale } => {
                Uniform::new_inclusive(lo, hi).map_err(|e| Error::Config(e.to_string()))?.sample(rng) * scale
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n: usize,
    pub theta0: Theta,
    pub tonnage: TonnageLaw,
    pub subsidy: SubsidySpec,
    pub noise_sigma: f64,
    pub n_sims: usize,
    pub seed: u64,
    pub drop_noninteger: bool,
    pub max_attempts: usize,
    pub buyer_in_aggregate: bool,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n: 8,
            theta0: Theta::new(vec![0.0], 1.0, 1.0),
            tonnage: TonnageLaw::base_case(),
            subsidy: SubsidySpec::default(),
            noise_sigma: 1.0,
            n_sims: 1000,
            seed: 0,
            drop_noninteger: true,
            max_attempts: 1000,
            buyer_in_aggregate: true,
        }
    }
}

impl DgpConfig {
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            covariates: vec![Covariate::SizeOfType(0), Covariate::ShareOfType(0)],
            subsidy: self.subsidy,
            buyer_in_aggregate: self.buyer_in_aggregate,
            ..ModelSpec::default()
        }
    }

    pub fn mode(&self) -> NonIntegerMode {
        if self.drop_noninteger {
            NonIntegerMode::Drop
        } else {
            NonIntegerMode::Perturb
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimMarket {
    pub market: Market,
    pub noise: NoiseDraws,
    pub allocation: Allocation,
    pub outcome: MatchingOutcome,
    /// Draws needed to obtain a usable equilibrium (1 when the first was).
    pub attempts: usize,
}

/// Draws firms for one attempt of simulation `sim`.
pub fn draw_firms<R: Rng + ?Sized>(cfg: &DgpConfig, rng: &mut R) -> Result<Vec<FirmRecord>> {
    (0..cfg.n)
        .map(|i| {
            let t = vec![cfg.tonnage.sample(rng)?, cfg.tonnage.sample(rng)?];
            FirmRecord::synthetic(i, t)
        })
        .collect()
}

pub fn generate_market(cfg: &DgpConfig, sim: u64) -> Result<SimMarket> {
    let spec = cfg.model_spec();
    for attempt in 0..cfg.max_attempts {
        let mut r = rng::stream(cfg.seed, &[sim, attempt as u64]);
        let market = Market::new(draw_firms(cfg, &mut r)?, spec.clone())?;
        let noise = NoiseDraws::draw(cfg.n, cfg.noise_sigma, &mut r);
        let lp = assemble_lp(&market, &cfg.theta0, &noise, DEFAULT_LP_CAP)?;
        let allocation = solve_equilibrium(&lp)?;
        let outcome = match (allocation.integer_outcome(), cfg.mode()) {
            (Some(o), _) => o,
            (None, NonIntegerMode::Drop) => continue,
            (None, NonIntegerMode::Perturb) => integerize(&allocation, &mut r),
        };
        let outcome = outcome.annotate(&market);
        return Ok(SimMarket {
            market,
            noise,
            allocation,
            outcome,
            attempts: attempt + 1,
        });
    }
    Err(Error::DegenerateDgp {
        attempts: cfg.max_attempts,
    })
}

impl SimMarket {
    pub fn inequalities(&self, options: &InequalityOptions) -> Result<InequalitySet> {
        build_inequalities(&self.market, &ObservedMatching::from_outcome(&self.outcome), options)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub sim: u64,
    pub attempts: usize,
    pub qualified: bool,
    pub n_groups: usize,
    pub n_unmatched: usize,
    pub n_inequalities: usize,
    pub score_hat: usize,
    pub score_true: usize,
    /// Searchable components of the estimate.
    pub theta_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub subset: String,
    pub parameter: String,
    pub n: usize,
    pub median_bias: Option<f64>,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub records: Vec<SimRecord>,
    pub summary: Vec<BiasRow>,
}

impl McReport {
    pub fn row(&self, subset: &str, parameter: &str) -> Option<&BiasRow> {
        self.summary.iter().find(|r| r.subset == subset && r.parameter == parameter)
    }

    pub fn write_records_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let names = self
            .records
            .first()
            .map(|r| parameter_names(r.theta_hat.len() + 1))
            .unwrap_or_default();
        let mut header: Vec<String> = [
            "sim",
            "attempts",
            "qualified",
            "n_groups",
            "n_unmatched",
            "n_inequalities",
            "score_hat",
            "score_true",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(names.iter().map(|n| format!("{n}_hat")));
        out.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.sim.to_string(),
                r.attempts.to_string(),
                r.qualified.to_string(),
                r.n_groups.to_string(),
                r.n_unmatched.to_string(),
                r.n_inequalities.to_string(),
                r.score_hat.to_string(),
                r.score_true.to_string(),
            ];
            row.extend(r.theta_hat.iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Median bias and RMSE of each searchable component on a subset of records.
pub fn bias_rows(subset: &str, records: &[&SimRecord], theta0: &Theta) -> Vec<BiasRow> {
    let truth = theta0.to_vector();
    let names = parameter_names(truth.len());
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let errs: Vec<f64> = records.iter().map(|r| r.theta_hat[k] - truth[k + 1]).collect();
            BiasRow {
                subset: subset.to_string(),
                parameter: name.clone(),
                n: errs.len(),
                median_bias: stats::median(&errs),
                rmse: stats::rmse(&errs),
            }
        })
        .collect()
}

/// Generate, build inequalities (subsidy IR pair off), estimate; per sim.
pub fn run_mc(cfg: &DgpConfig, de: &DeConfig) -> Result<McReport> {
    if cfg.n_sims == 0 {
        return Err(Error::Config("n_sims must be at least 1".into()));
    }
    let options = InequalityOptions::monte_carlo();
    let truth = cfg.theta0.to_vector();
    let records: Vec<SimRecord> = (0..cfg.n_sims as u64)
        .into_par_iter()
        .map(|sim| -> Result<SimRecord> {
            let m = generate_market(cfg, sim)?;
            let set = m.inequalities(&options)?;
            let sim_de = DeConfig {
                seed: rng::derive_seed(de.seed, sim),
                ..de.clone()
            };
            let est = point_estimate(&set, &sim_de, None)?;
            let summary = classify_outcome(&m.outcome);
            Ok(SimRecord {
                sim,
                attempts: m.attempts,
                qualified: m.outcome.any_qualified(),
                n_groups: summary.n_groups,
                n_unmatched: summary.n_unmatched,
                n_inequalities: set.len(),
                score_hat: est.score.count,
                score_true: set.count_satisfied(&truth),
                theta_hat: est.theta_hat.to_vector()[1..].to_vec(),
            })
        })
        .collect::<Result<_>>()?;
    let all: Vec<&SimRecord> = records.iter().collect();
    let qualified: Vec<&SimRecord> = records.iter().filter(|r| r.qualified).collect();
    let unqualified: Vec<&SimRecord> = records.iter().filter(|r| !r.qualified).collect();
    let mut summary = bias_rows("all", &all, &cfg.theta0);
    summary.extend(bias_rows("qualified", &qualified, &cfg.theta0));
    summary.extend(bias_rows("unqualified", &unqualified, &cfg.theta0));
    Ok(McReport { records, summary })
}

/// Whether every grid cell attaining the surface maximum lies strictly
/// inside the scan box (2-D surfaces).
pub fn region_bounded(surface: &Surface) -> bool {
    let rows = surface.axes[0].2.len();
    let cols = surface.axes.get(1).map_or(1, |a| a.2.len());
    let max = surface.max();
    for r in 0..rows {
        for c in 0..cols {
            if surface.at(r, c) == max && (r == 0 || c == 0 || r + 1 == rows || c + 1 == cols) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallNResult {
    pub n: usize,
    pub seed: u64,
    pub n_inequalities: usize,
    pub bounded: bool,
    pub surface: Surface,
}

/// Box used for the (beta, gamma) scans.
pub const SCAN_BOX: (f64, f64) = (-20.0, 30.0);

/// `(beta1, gamma)` surface at the true delta for one market of each size.
pub fn small_n_scan(cfg: &DgpConfig, ns: &[usize], points: usize) -> Result<Vec<SmallNResult>> {
    ns.par_iter()
        .map(|&n| {
            let c = DgpConfig { n, ..cfg.clone() };
            let m = generate_market(&c, 0)?;
            let set = m.inequalities(&InequalityOptions::monte_carlo())?;
            let g = grid(SCAN_BOX.0, SCAN_BOX.1, points);
            let surface = objective_surface(&set, &c.theta0.to_vector(), &[(1, g.clone()), (set.dim - 1, g)])?;
            Ok(SmallNResult {
                n,
                seed: c.seed,
                n_inequalities: set.len(),
                bounded: region_bounded(&surface),
                surface,
            })
        })
        .collect()
}
