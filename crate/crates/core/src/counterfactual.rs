//! Subsidy policy sweeps, expenditure accounting and merger configurations.
//!
//! Every cell of a sweep reuses the same shock draws (draw `d` comes from
//! stream `[d]`), so differences across cells come from the policy only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

use crate::equilibrium::{
    assemble_lp, classify_outcome, integerize, solve_equilibrium, Allocation, MatchingOutcome, NoiseDraws,
    NonIntegerMode, DEFAULT_LP_CAP,
};
use crate::error::{Error, Result};
use crate::model::{classify_bundle, BundleKind, Coalition, FirmRecord, Market, SubsidySpec, Theta};
use crate::montecarlo::DgpConfig;
use crate::{rng, stats};

/// How the spread parameter of the counterfactual shocks is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadReading {
    Variance,
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyGrid {
    pub amounts: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub draws: usize,
    pub noise_spread: f64,
    pub spread_reading: SpreadReading,
    pub seed: u64,
}

impl Default for PolicyGrid {
    fn default() -> Self {
        PolicyGrid {
            amounts: vec![0.0, 0.1, 0.25, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 2.0],
            thresholds: vec![1.0, 2.0, 3.0, 4.0, 5.0, 7.5],
            draws: 20,
            noise_spread: 5.0,
            spread_reading: SpreadReading::Variance,
            seed: 0,
        }
    }
}

impl PolicyGrid {
    pub fn sigma(&self) -> f64 {
        match self.spread_reading {
            SpreadReading::Variance => self.noise_spread.sqrt(),
            SpreadReading::StdDev => self.noise_spread,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.amounts.is_empty() || self.thresholds.is_empty() || self.draws == 0 {
            return Err(Error::Config("policy grid needs amounts, thresholds and draws".into()));
        }
        if self.amounts.iter().chain(&self.thresholds).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("policy amounts and thresholds must be non-negative".into()));
        }
        if !(self.noise_spread >= 0.0) {
            return Err(Error::Config("noise spread must be non-negative".into()));
        }
        Ok(())
    }
}

/// Total subsidy paid: `amount` per qualified group.
pub fn expenditure(outcome: &MatchingOutcome, amount: f64) -> f64 {
    amount * outcome.qualified.iter().filter(|&&q| q).count() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawResult {
    pub draw: usize,
    pub outcome: MatchingOutcome,
    pub expenditure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub amount: f64,
    pub threshold: f64,
    pub draws: Vec<DrawResult>,
    pub failed: usize,
    pub median_groups: Option<f64>,
    pub median_unmatched: Option<f64>,
    pub median_post_merger: Option<f64>,
    pub median_expenditure: Option<f64>,
    pub modal: Option<MatchingOutcome>,
    pub modal_count: usize,
    pub probabilistic_draws: usize,
}

/// Equilibrium outcome for one market and shock draw, rounded if needed.
fn solve_outcome(market: &Market, theta: &Theta, noise: &NoiseDraws, rounding_stream: &[u64], seed: u64) -> Result<(Allocation, MatchingOutcome)> {
    let lp = assemble_lp(market, theta, noise, DEFAULT_LP_CAP)?;
    let alloc = solve_equilibrium(&lp)?;
    let outcome = integerize(&alloc, &mut rng::stream(seed, rounding_stream)).annotate(market);
    Ok((alloc, outcome))
}

pub fn policy_sweep(market: &Market, theta: &Theta, grid: &PolicyGrid) -> Result<Vec<CellResult>> {
    grid.validate()?;
    market.spec.check_theta(theta)?;
    let n = market.n();
    if n > DEFAULT_LP_CAP {
        return Err(Error::MarketTooLarge { n, cap: DEFAULT_LP_CAP });
    }
    let sigma = grid.sigma();
    let noises: Vec<NoiseDraws> = (0..grid.draws)
        .map(|d| NoiseDraws::draw(n, sigma, &mut rng::stream(grid.seed, &[d as u64])))
        .collect();
    let cells: Vec<(f64, f64)> = grid
        .thresholds
        .iter()
        .flat_map(|&t| grid.amounts.iter().map(move |&a| (a, t)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..grid.draws).map(move |d| (c, d))).collect();
    let solved: Vec<Result<DrawResult>> = jobs
        .par_iter()
        .map(|&(c, d)| {
            let (amount, threshold) = cells[c];
            let m = market.with_subsidy(SubsidySpec {
                amount,
                threshold,
                ..market.spec.subsidy
            });
            let (_, outcome) = solve_outcome(&m, theta, &noises[d], &[d as u64, 1], grid.seed)?;
            Ok(DrawResult {
                draw: d,
                expenditure: expenditure(&outcome, amount),
                outcome,
            })
        })
        .collect();
    let mut per_cell: Vec<(Vec<DrawResult>, usize)> = vec![(Vec::new(), 0); cells.len()];
    for ((c, _), r) in jobs.iter().zip(solved) {
        match r {
            Ok(d) => per_cell[*c].0.push(d),
            Err(Error::SolverFailure(_)) | Err(Error::Infeasible) => per_cell[*c].1 += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(cells
        .iter()
        .zip(per_cell)
        .map(|(&(amount, threshold), (draws, failed))| summarize_cell(amount, threshold, draws, failed))
        .collect())
}

fn summarize_cell(amount: f64, threshold: f64, draws: Vec<DrawResult>, failed: usize) -> CellResult {
    let summaries: Vec<_> = draws.iter().map(|d| classify_outcome(&d.outcome)).collect();
    let col = |f: &dyn Fn(usize) -> f64| stats::lower_median(&(0..draws.len()).map(f).collect::<Vec<_>>());
    let outcomes: Vec<MatchingOutcome> = draws.iter().map(|d| d.outcome.clone()).collect();
    let (modal, modal_count) = match modal_configuration(&outcomes) {
        Some((m, c)) => (Some(m), c),
        None => (None, 0),
    };
    CellResult {
        amount,
        threshold,
        failed,
        median_groups: col(&|k| summaries[k].n_groups as f64),
        median_unmatched: col(&|k| summaries[k].n_unmatched as f64),
        median_post_merger: col(&|k| summaries[k].n_post_merger_firms as f64),
        median_expenditure: col(&|k| draws[k].expenditure),
        probabilistic_draws: draws.iter().filter(|d| d.outcome.probabilistic).count(),
        modal,
        modal_count,
        draws,
    }
}

/// Most frequent partition with its count; ties go to the smallest key.
pub fn modal_configuration(outcomes: &[MatchingOutcome]) -> Option<(MatchingOutcome, usize)> {
    let mut counts: BTreeMap<String, (usize, &MatchingOutcome)> = BTreeMap::new();
    for o in outcomes {
        counts.entry(o.canonical_key()).or_insert((0, o)).0 += 1;
    }
    let best = counts.values().map(|v| v.0).max()?;
    // BTreeMap iterates keys in order, so the first hit is the smallest key
    counts.values().find(|v| v.0 == best).map(|v| (v.1.clone(), best))
}

pub fn write_cells_csv<W: Write>(cells: &[CellResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "amount",
        "threshold",
        "draws",
        "failed",
        "median_groups",
        "median_unmatched",
        "median_post_merger",
        "median_expenditure",
        "modal_count",
        "probabilistic_draws",
        "modal_configuration",
    ])?;
    let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for c in cells {
        out.write_record([
            c.amount.to_string(),
            c.threshold.to_string(),
            c.draws.len().to_string(),
            c.failed.to_string(),
            f(c.median_groups),
            f(c.median_unmatched),
            f(c.median_post_merger),
            f(c.median_expenditure),
            c.modal_count.to_string(),
            c.probabilistic_draws.to_string(),
            c.modal.as_ref().map_or(String::new(), |m| m.canonical_key()),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Group label of a buyer-led group or an unmatched firm.
fn group_label(buyer: usize) -> String {
    format!("G{buyer}")
}

fn unmatched_label(firm: usize) -> String {
    format!("U{firm}")
}

/// Destination labels of every firm in an integer outcome.
pub fn outcome_memberships(outcome: &MatchingOutcome) -> Vec<Vec<String>> {
    let mut m = vec![Vec::new(); outcome.n];
    for g in &outcome.groups {
        for f in g.members() {
            m[f].push(group_label(g.buyer));
        }
    }
    for &u in &outcome.unmatched {
        m[u].push(unmatched_label(u));
    }
    m
}

/// Destination labels from an allocation: every group (or autarky) a firm
/// holds positive mass in. Fractional firms get several labels.
pub fn allocation_memberships(alloc: &Allocation) -> Vec<Vec<String>> {
    let n = alloc.n;
    let tol = crate::equilibrium::INTEGRALITY_TOL;
    let mut m: Vec<Vec<String>> = vec![Vec::new(); n];
    for i in 0..n {
        for bits in 0..1u128 << n {
            let bundle = Coalition::from_bits(bits, n);
            if alloc.get(i, bundle) <= tol {
                continue;
            }
            match classify_bundle(i, bundle) {
                BundleKind::Null => m[i].push(unmatched_label(i)),
                BundleKind::Buyer => {
                    m[i].push(group_label(i));
                    for j in bundle.members() {
                        m[j].push(group_label(i));
                    }
                }
                _ => {}
            }
        }
    }
    for v in &mut m {
        v.sort();
        v.dedup();
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub cell: String,
    pub firm: usize,
    pub name: String,
    pub source: String,
    pub target: String,
    pub weight: f64,
}

/// Flows from the baseline groups to each cell's groups; a firm with `k`
/// destinations contributes `k` rows of weight `1/k`.
pub fn export_configuration_flows(
    firms: &[FirmRecord],
    before: &MatchingOutcome,
    after: &[(String, Vec<Vec<String>>)],
) -> Vec<FlowRow> {
    let src = outcome_memberships(before);
    let mut rows = Vec::new();
    for (cell, memberships) in after {
        for (i, dests) in memberships.iter().enumerate() {
            let w = 1.0 / dests.len().max(1) as f64;
            for d in dests {
                rows.push(FlowRow {
                    cell: cell.clone(),
                    firm: firms.get(i).map_or(i, |f| f.id),
                    name: firms.get(i).map_or_else(String::new, |f| f.name.clone()),
                    source: src[i][0].clone(),
                    target: d.clone(),
                    weight: w,
                });
            }
        }
    }
    rows
}

pub fn write_statics_csv<W: Write>(rows: &[StaticsRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_flows_csv<W: Write>(rows: &[FlowRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticsRow {
    pub gamma: f64,
    pub used_draws: usize,
    pub median_groups: Option<f64>,
    pub median_unmatched: Option<f64>,
    pub mean_groups: Option<f64>,
    pub mean_unmatched: Option<f64>,
}

/// Equilibrium group counts across merger costs. Draw `d` fixes one market
/// and one shock vector used at every gamma.
pub fn comparative_statics(cfg: &DgpConfig, gammas: &[f64], draws: usize, mode: NonIntegerMode) -> Result<Vec<StaticsRow>> {
    let spec = cfg.model_spec();
    let markets: Vec<(Market, NoiseDraws)> = (0..draws as u64)
        .map(|d| {
            let mut r = rng::stream(cfg.seed, &[0x5747, d]);
            let firms = crate::montecarlo::draw_firms(cfg, &mut r)?;
            let noise = NoiseDraws::draw(cfg.n, cfg.noise_sigma, &mut r);
            Ok((Market::new(firms, spec.clone())?, noise))
        })
        .collect::<Result<_>>()?;
    gammas
        .par_iter()
        .map(|&gamma| {
            let theta = Theta { gamma, ..cfg.theta0.clone() };
            let mut groups = Vec::new();
            let mut unmatched = Vec::new();
            for (d, (m, noise)) in markets.iter().enumerate() {
                let lp = assemble_lp(m, &theta, noise, DEFAULT_LP_CAP)?;
                let alloc = solve_equilibrium(&lp)?;
                let outcome = match (alloc.integer_outcome(), mode) {
                    (Some(o), _) => o,
                    (None, NonIntegerMode::Drop) => continue,
                    (None, NonIntegerMode::Perturb) => integerize(&alloc, &mut rng::stream(cfg.seed, &[0x5748, d as u64])),
                };
                let s = classify_outcome(&outcome);
                groups.push(s.n_groups as f64);
                unmatched.push(s.n_unmatched as f64);
            }
            let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            Ok(StaticsRow {
                gamma,
                used_draws: groups.len(),
                median_groups: stats::lower_median(&groups),
                median_unmatched: stats::lower_median(&unmatched),
                mean_groups: mean(&groups),
                mean_unmatched: mean(&unmatched),
            })
        })
        .collect()
}

/// Number of adjacent steps where `values` moves against `direction`
/// (`+1` nondecreasing, `-1` nonincreasing).
pub fn monotonicity_violations(values: &[f64], direction: f64) -> usize {
    values.windows(2).filter(|w| (w[1] - w[0]) * direction < 0.0).count()
}
