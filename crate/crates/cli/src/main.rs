use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use coalmatch::counterfactual::{
    comparative_statics, export_configuration_flows, outcome_memberships, policy_sweep,
    write_cells_csv, write_flows_csv, write_statics_csv,
};
use coalmatch::equilibrium::{oracle_welfare, Group, MatchingOutcome, NonIntegerMode};
use coalmatch::estimator::{
    calibrate_delta, maximizer_bounds, objective_surface, parameter_names, point_estimate, EstimateResult,
    PROFILE_POINTS,
};
use coalmatch::inequalities::{build_inequalities, InequalitySet, ObservedMatching, ObservedRole};
use coalmatch::inference::resample_ci;
use coalmatch::io::{load_firms, write_firms, RunConfig};
use coalmatch::model::{FirmRecord, Market, Role, SubsidyKind, SubsidySpec};
use coalmatch::montecarlo::{generate_market, run_mc, DgpConfig};
use coalmatch::{estimator, Error, Result};

const MANIFEST_SCHEMA: u32 = 1;

#[derive(Parser)]
#[command(name = "coalmatch", version, about = "Coalition matching equilibria, estimation and merger policy sweeps")]
struct Cli {
    /// Run configuration (TOML). Missing keys take base-case defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct FirmsArg {
    /// Firm table (CSV).
    #[arg(long)]
    firms: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw one synthetic market and solve its equilibrium.
    Simulate {
        #[arg(long, default_value_t = 0)]
        sim: u64,
    },
    /// Maximum-rank point estimate.
    Estimate(FirmsArg),
    /// Objective surface over one or two parameters.
    Surface(FirmsArg),
    /// Profile bounds of the maximizer set around the estimate.
    Bounds(FirmsArg),
    /// Bootstrap or subsampling percentile intervals.
    Ci(FirmsArg),
    /// Monte Carlo estimation study on synthetic markets.
    Mc {
        #[arg(long)]
        sims: Option<usize>,
    },
    /// Subsidy policy sweep on a firm table, or comparative statics in gamma.
    Counterfactual {
        #[arg(long, required_unless_present = "statics")]
        firms: Option<PathBuf>,
        /// Run the merger-cost comparative statics on synthetic markets instead.
        #[arg(long)]
        statics: bool,
    },
    /// Compare LP equilibria with brute-force partition enumeration.
    OracleCheck {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Simulate { .. } => "simulate",
            Cmd::Estimate(_) => "estimate",
            Cmd::Surface(_) => "surface",
            Cmd::Bounds(_) => "bounds",
            Cmd::Ci(_) => "ci",
            Cmd::Mc { .. } => "mc",
            Cmd::Counterfactual { .. } => "counterfactual",
            Cmd::OracleCheck { .. } => "oracle-check",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    seed: u64,
    threads: usize,
    outputs: Vec<String>,
    elapsed_ms: u128,
}

/// Collects outputs in memory; everything is written by `flush` at the end.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    fn flush(&self) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        for (name, bytes) in &self.files {
            fs::write(self.dir.join(name), bytes)?;
        }
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn market_and_matching(cfg: &RunConfig, path: &Path) -> Result<(Vec<FirmRecord>, Market, ObservedMatching)> {
    let firms = load_firms(path)?.firms;
    let market = Market::new(firms.clone(), cfg.model.spec())?;
    let obs = ObservedMatching::from_firms(&firms, cfg.inequalities.buyer_restriction)?;
    Ok((firms, market, obs))
}

fn inequalities(cfg: &RunConfig, path: &Path) -> Result<(Vec<FirmRecord>, InequalitySet)> {
    let (firms, market, obs) = market_and_matching(cfg, path)?;
    let set = build_inequalities(&market, &obs, &cfg.inequalities)?;
    Ok((firms, set))
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    names: Vec<String>,
    n_firms: usize,
    n_inequalities: usize,
    estimate: &'a EstimateResult,
    delta_profile: Option<Vec<(f64, usize)>>,
}

fn estimate(cfg: &RunConfig, set: &InequalitySet) -> Result<(EstimateResult, Option<Vec<(f64, usize)>>)> {
    let de = cfg.estimation_de();
    match (cfg.delta.fixed, &cfg.delta.grid) {
        (Some(d), _) => Ok((point_estimate(set, &de, Some(d))?, None)),
        (None, Some(grid)) => {
            let (d, profile) = calibrate_delta(set, grid, &de)?;
            Ok((point_estimate(set, &de, Some(d))?, Some(profile)))
        }
        (None, None) => Ok((point_estimate(set, &de, None)?, None)),
    }
}

/// Observed groups as an outcome; members of groups without a main firm
/// count as unmatched.
fn observed_outcome(obs: &ObservedMatching) -> MatchingOutcome {
    let n = obs.n();
    let groups: Vec<Group> = (0..n)
        .filter(|&i| obs.roles[i] == ObservedRole::Buyer)
        .map(|i| Group {
            buyer: i,
            targets: obs.targets[i].clone(),
        })
        .collect();
    let in_group: Vec<usize> = groups.iter().flat_map(|g| g.members().collect::<Vec<_>>()).collect();
    let unmatched = (0..n).filter(|i| !in_group.contains(i)).collect();
    MatchingOutcome::new(n, groups, unmatched)
}

/// Synthetic firms labelled with the roles of an equilibrium outcome.
fn label_firms(firms: &[FirmRecord], outcome: &MatchingOutcome) -> Vec<FirmRecord> {
    let mut out = firms.to_vec();
    for f in &mut out {
        f.role = Some(Role::Unmatched);
    }
    for g in &outcome.groups {
        out[g.buyer].role = Some(Role::MainBuyer);
        out[g.buyer].group_id = Some(g.buyer + 1);
        for &t in &g.targets {
            out[t].role = Some(Role::Seller);
            out[t].group_id = Some(g.buyer + 1);
        }
    }
    out
}

#[derive(Serialize)]
struct OracleSummary {
    n: usize,
    trials: usize,
    matches: usize,
    max_relative_gap: f64,
    fractional_redraws: usize,
}

fn oracle_check(cfg: &RunConfig, n: usize, trials: usize) -> Result<OracleSummary> {
    let mut matches = 0;
    let mut worst = 0.0f64;
    let mut redraws = 0;
    for t in 0..trials as u64 {
        let kind = if t % 2 == 0 { SubsidyKind::ToBuyer } else { SubsidyKind::Shared };
        let dgp = DgpConfig {
            n,
            subsidy: SubsidySpec {
                kind,
                ..cfg.dgp.subsidy
            },
            drop_noninteger: true,
            ..cfg.dgp.clone()
        };
        let m = generate_market(&dgp, t)?;
        redraws += m.attempts - 1;
        let (w, part) = oracle_welfare(&m.market, &dgp.theta0, &m.noise)?;
        let gap = (m.allocation.welfare - w).abs() / (1.0 + w.abs());
        worst = worst.max(gap);
        let lp = m.allocation.integer_outcome().map(|o| o.canonical_key());
        if gap <= 1e-6 && lp == Some(part.canonical_key()) {
            matches += 1;
        }
    }
    Ok(OracleSummary {
        n,
        trials,
        matches,
        max_relative_gap: worst,
        fractional_redraws: redraws,
    })
}

fn run(cli: &Cli, out: &mut Outputs) -> Result<u64> {
    let cfg = load_config(cli)?;
    out.add("config.toml", cfg.to_toml()?.into_bytes());
    match &cli.cmd {
        Cmd::Simulate { sim } => {
            let m = generate_market(&cfg.dgp, *sim)?;
            let firms = label_firms(&m.market.firms, &m.outcome);
            out.csv("firms.csv", |w| write_firms(&firms, w))?;
            out.json("allocation.json", &m.allocation.report())?;
            out.json("outcome.json", &m.outcome)?;
            let set = m.inequalities(&coalmatch::inequalities::InequalityOptions::monte_carlo());
            match set {
                Ok(s) => out.csv("inequalities.csv", |w| s.write_csv(w))?,
                Err(Error::EmptyInequalitySet) => {}
                Err(e) => return Err(e),
            }
            println!(
                "{} groups, {} unmatched, {} attempts",
                m.outcome.groups.len(),
                m.outcome.unmatched.len(),
                m.attempts
            );
        }
        Cmd::Estimate(a) => {
            let (firms, set) = inequalities(&cfg, &a.firms)?;
            let (est, profile) = estimate(&cfg, &set)?;
            out.csv("inequalities.csv", |w| set.write_csv(w))?;
            out.json(
                "estimate.json",
                &EstimateReport {
                    names: parameter_names(set.dim),
                    n_firms: firms.len(),
                    n_inequalities: set.len(),
                    estimate: &est,
                    delta_profile: profile,
                },
            )?;
            println!("score {}/{} theta {:?}", est.score.count, est.score.total, est.theta_hat.to_vector());
        }
        Cmd::Surface(a) => {
            let (_, set) = inequalities(&cfg, &a.firms)?;
            let base = match &cfg.surface.base {
                Some(b) if b.len() == set.dim => b.clone(),
                Some(b) => {
                    return Err(Error::Config(format!(
                        "surface base has {} entries, model needs {}",
                        b.len(),
                        set.dim
                    )))
                }
                None => estimate(&cfg, &set)?.0.theta_hat.to_vector(),
            };
            let names = parameter_names(set.dim);
            let g = estimator::grid(cfg.surface.lo, cfg.surface.hi, cfg.surface.points);
            let wanted = if cfg.surface.axes.is_empty() {
                vec![names[0].clone(), names[names.len() - 1].clone()]
            } else {
                cfg.surface.axes.clone()
            };
            let axes = wanted
                .iter()
                .map(|a| {
                    names
                        .iter()
                        .position(|n| n == a)
                        .map(|k| (k + 1, g.clone()))
                        .ok_or_else(|| Error::Config(format!("unknown surface axis `{a}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let surf = objective_surface(&set, &base, &axes)?;
            out.csv("surface.csv", |w| surf.write_csv(w))?;
            println!("max score {}/{}", surf.max(), surf.total);
        }
        Cmd::Bounds(a) => {
            let (_, set) = inequalities(&cfg, &a.firms)?;
            let (est, _) = estimate(&cfg, &set)?;
            let b = maximizer_bounds(&set, &est.theta_hat, &cfg.estimation_bounds(), PROFILE_POINTS)?;
            let est = EstimateResult {
                maximizer_bounds: Some(b),
                ..est
            };
            out.json("bounds.json", &est)?;
            for (n, (lo, hi)) in parameter_names(set.dim).iter().zip(est.maximizer_bounds.as_ref().unwrap()) {
                println!("{n} [{lo}, {hi}]");
            }
        }
        Cmd::Ci(a) => {
            let firms = load_firms(&a.firms)?.firms;
            let ci = resample_ci(
                &firms,
                &cfg.model.spec(),
                &cfg.inequalities,
                &cfg.estimation_de(),
                cfg.delta.fixed,
                &cfg.resample,
            )?;
            out.csv("replicates.csv", |w| ci.write_replicates_csv(w))?;
            #[derive(Serialize)]
            struct CiSummary<'a> {
                names: &'a [String],
                lower: &'a [f64],
                upper: &'a [f64],
                replications: usize,
                skipped: usize,
                warning: bool,
            }
            out.json(
                "ci.json",
                &CiSummary {
                    names: &ci.names,
                    lower: &ci.lower,
                    upper: &ci.upper,
                    replications: ci.replicates.len(),
                    skipped: ci.skipped,
                    warning: ci.warning,
                },
            )?;
            if ci.warning {
                eprintln!("warning: {} of {} replicates had no inequalities", ci.skipped, ci.replicates.len());
            }
            for k in 0..ci.names.len() {
                println!("{} [{}, {}]", ci.names[k], ci.lower[k], ci.upper[k]);
            }
        }
        Cmd::Mc { sims } => {
            let dgp = DgpConfig {
                n_sims: sims.unwrap_or(cfg.dgp.n_sims),
                ..cfg.dgp.clone()
            };
            let de = cfg.mc.de(dgp.theta0.dim(), cfg.de.seed);
            let rep = run_mc(&dgp, &de)?;
            out.csv("records.csv", |w| rep.write_records_csv(w))?;
            out.json("summary.json", &rep.summary)?;
            for r in rep.summary.iter().filter(|r| r.subset == "all") {
                println!(
                    "{} median_bias {:.4} rmse {:.4}",
                    r.parameter,
                    r.median_bias.unwrap_or(f64::NAN),
                    r.rmse.unwrap_or(f64::NAN)
                );
            }
        }
        Cmd::Counterfactual { statics: true, .. } => {
            let mode = if cfg.statics.drop_noninteger {
                NonIntegerMode::Drop
            } else {
                NonIntegerMode::Perturb
            };
            let rows = comparative_statics(&cfg.dgp, &cfg.statics.gammas, cfg.statics.draws, mode)?;
            out.csv("statics.csv", |w| write_statics_csv(&rows, w))?;
            for r in &rows {
                println!(
                    "gamma {} groups {:?} unmatched {:?} ({} draws)",
                    r.gamma, r.median_groups, r.median_unmatched, r.used_draws
                );
            }
        }
        Cmd::Counterfactual { firms: Some(path), .. } => {
            let theta = cfg
                .theta
                .clone()
                .ok_or_else(|| Error::Config("counterfactual needs [theta] in the config".into()))?;
            let (firms, market, obs) = market_and_matching(&cfg, path)?;
            let cells = policy_sweep(&market, &theta, &cfg.policy)?;
            out.csv("cells.csv", |w| write_cells_csv(&cells, w))?;
            let before = observed_outcome(&obs);
            let after: Vec<(String, Vec<Vec<String>>)> = cells
                .iter()
                .filter_map(|c| {
                    c.modal
                        .as_ref()
                        .map(|m| (format!("M={},kappa={}", c.amount, c.threshold), outcome_memberships(m)))
                })
                .collect();
            let flows = export_configuration_flows(&firms, &before, &after);
            out.csv("flows.csv", |w| write_flows_csv(&flows, w))?;
            for c in &cells {
                println!(
                    "M={} kappa={} groups {:?} unmatched {:?} expenditure {:?}",
                    c.amount, c.threshold, c.median_groups, c.median_unmatched, c.median_expenditure
                );
            }
        }
        Cmd::Counterfactual { .. } => unreachable!("clap requires --firms without --statics"),
        Cmd::OracleCheck { n, trials } => {
            let s = oracle_check(&cfg, *n, *trials)?;
            out.json("oracle.json", &s)?;
            println!("{}/{} match", s.matches, s.trials);
            println!(
                "max relative welfare gap {:.3e}, {} fractional draws redrawn",
                s.max_relative_gap, s.fractional_redraws
            );
        }
    }
    Ok(cfg.seed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: kind=ConfigError msg={e}");
            return ExitCode::from(2);
        }
    }
    let mut out = Outputs {
        dir: cli.out.clone(),
        files: Vec::new(),
    };
    let result = run(&cli, &mut out).and_then(|seed| {
        let config_hash = sha256_hex(&out.files[0].1);
        let manifest = Manifest {
            schema_version: MANIFEST_SCHEMA,
            command: cli.cmd.name(),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: config_hash,
            seed,
            threads: rayon::current_num_threads(),
            outputs: out.files.iter().map(|f| f.0.clone()).collect(),
            elapsed_ms: start.elapsed().as_millis(),
        };
        out.json("manifest.json", &manifest)?;
        out.flush()
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
