//! Firm CSV ingestion and run configuration.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::counterfactual::PolicyGrid;
use crate::de::{DeConfig, TieBreak};
use crate::error::{Error, Result};
use crate::inequalities::InequalityOptions;
use crate::inference::ResampleConfig;
use crate::model::{CostSpec, Covariate, FirmRecord, ModelSpec, Role, SubsidySpec, Theta};
use crate::montecarlo::DgpConfig;
use crate::rng::derive_seed;

pub const FIRM_COLUMNS: [&str; 8] = [
    "id",
    "name",
    "firm_type",
    "group_id",
    "ton_liner",
    "ton_special",
    "ton_tramper",
    "ton_tanker",
];

const TONNAGE_COLUMNS: std::ops::Range<usize> = 4..8;

/// Parsed firms plus the raw cells, so the file can be written back as read.
#[derive(Debug, Clone, PartialEq)]
pub struct FirmTable {
    pub firms: Vec<FirmRecord>,
    raw: Vec<Vec<String>>,
}

fn role_of(firm_type: &str) -> Option<Role> {
    match firm_type {
        "main" => Some(Role::MainBuyer),
        "affiliate" | "wholly" => Some(Role::Seller),
        "unmatched" => Some(Role::Unmatched),
        _ => None,
    }
}

pub fn load_firms(path: impl AsRef<Path>) -> Result<FirmTable> {
    read_firms(std::fs::File::open(path)?)
}

pub fn read_firms<R: Read>(input: R) -> Result<FirmTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(Error::MissingColumn(FIRM_COLUMNS[0].into())),
        Some(h) => h?,
    };
    for (k, col) in FIRM_COLUMNS.iter().enumerate() {
        if header.get(k) != Some(col) {
            return Err(Error::MissingColumn((*col).into()));
        }
    }
    if header.len() != FIRM_COLUMNS.len() {
        return Err(Error::BadRow {
            row: 1,
            msg: format!("header has {} columns, expected {}", header.len(), FIRM_COLUMNS.len()),
        });
    }
    let mut firms = Vec::new();
    let mut raw = vec![header.iter().map(str::to_string).collect::<Vec<_>>()];
    let mut seen = HashSet::new();
    for (k, rec) in records.enumerate() {
        // row numbers count the header as row 1
        let row = k + 2;
        let rec = rec.map_err(|e| Error::BadRow { row, msg: e.to_string() })?;
        if rec.len() != FIRM_COLUMNS.len() {
            return Err(Error::BadRow {
                row,
                msg: format!("{} fields, expected {}", rec.len(), FIRM_COLUMNS.len()),
            });
        }
        let id: usize = rec[0].trim().parse().map_err(|_| Error::BadRow {
            row,
            msg: format!("bad id `{}`", &rec[0]),
        })?;
        if !seen.insert(id) {
            return Err(Error::DuplicateId { row, id });
        }
        let role = role_of(rec[2].trim()).ok_or_else(|| Error::BadRow {
            row,
            msg: format!("unknown firm_type `{}`", &rec[2]),
        })?;
        let group = rec[3].trim();
        let group_id = if group.is_empty() {
            None
        } else {
            Some(group.parse::<usize>().map_err(|_| Error::BadRow {
                row,
                msg: format!("bad group_id `{group}`"),
            })?)
        };
        if group_id.is_some() == (role == Role::Unmatched) {
            return Err(Error::BadRow {
                row,
                msg: "group_id must be set exactly when firm_type is not unmatched".into(),
            });
        }
        let tonnage = TONNAGE_COLUMNS
            .map(|c| {
                let v = rec[c].trim();
                match v.parse::<f64>() {
                    Ok(x) if x.is_finite() && x >= 0.0 => Ok(x),
                    _ => Err(Error::BadDecimal {
                        row,
                        column: FIRM_COLUMNS[c].into(),
                        value: v.into(),
                    }),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        firms.push(FirmRecord::new(id, &rec[1], Some(role), tonnage, group_id)?);
        raw.push(rec.iter().map(str::to_string).collect());
    }
    if firms.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(FirmTable { firms, raw })
}

impl FirmTable {
    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.raw {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Writes firms without a raw table (synthetic data).
pub fn write_firms<W: Write>(firms: &[FirmRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(FIRM_COLUMNS)?;
    for f in firms {
        if f.tonnage.len() > 4 {
            return Err(Error::Config(format!("firm {} has more than 4 carrier types", f.id)));
        }
        let firm_type = match f.role {
            Some(Role::MainBuyer) => "main",
            Some(Role::Seller) => "affiliate",
            Some(Role::Unmatched) | None => "unmatched",
        };
        let mut row = vec![
            f.id.to_string(),
            f.name.clone(),
            firm_type.into(),
            f.group_id.map_or(String::new(), |g| g.to_string()),
        ];
        row.extend((0..4).map(|t| f.tonnage.get(t).copied().unwrap_or(0.0).to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub covariates: Vec<Covariate>,
    pub buyer_in_aggregate: bool,
    pub subsidy: SubsidySpec,
    pub cost: CostSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let m = ModelSpec::default();
        ModelConfig {
            covariates: m.covariates,
            buyer_in_aggregate: m.buyer_in_aggregate,
            subsidy: m.subsidy,
            cost: m.cost,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            covariates: self.covariates.clone(),
            subsidy: self.subsidy,
            cost: self.cost,
            buyer_in_aggregate: self.buyer_in_aggregate,
        }
    }
}

/// Search box per free parameter. `explicit` overrides the per-kind boxes
/// and must list every component after the normalized one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub beta: (f64, f64),
    pub delta: (f64, f64),
    pub gamma: (f64, f64),
    pub explicit: Option<Vec<(f64, f64)>>,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            beta: (-300.0, 300.0),
            delta: (-300.0, 300.0),
            gamma: (-10.0, 20.0),
            explicit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeltaConfig {
    /// Freeze delta at this value.
    pub fixed: Option<f64>,
    /// Calibrate delta on this grid (used when `fixed` is unset).
    pub grid: Option<Vec<f64>>,
}

impl Default for DeltaConfig {
    fn default() -> Self {
        DeltaConfig { fixed: None, grid: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceConfig {
    /// One or two parameter names, e.g. `["beta1", "gamma"]`. Empty means
    /// the first and last searchable components.
    pub axes: Vec<String>,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Base point for the other components; defaults to the estimate.
    pub base: Option<Vec<f64>>,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        SurfaceConfig {
            axes: Vec::new(),
            lo: -20.0,
            hi: 30.0,
            points: 101,
            base: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub generations: usize,
    pub population: usize,
    pub restarts: usize,
    pub box_lo: f64,
    pub box_hi: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            generations: 50,
            population: 100,
            restarts: 1,
            box_lo: -20.0,
            box_hi: 20.0,
        }
    }
}

impl McConfig {
    pub fn de(&self, dim: usize, seed: u64) -> DeConfig {
        DeConfig {
            population: self.population,
            generations: self.generations,
            restarts: self.restarts,
            bounds: vec![(self.box_lo, self.box_hi); dim - 1],
            tie_break: TieBreak::FirstFound,
            seed,
            ..DeConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticsConfig {
    pub gammas: Vec<f64>,
    pub draws: usize,
    pub drop_noninteger: bool,
}

impl Default for StaticsConfig {
    fn default() -> Self {
        StaticsConfig {
            gammas: (0..=10).map(f64::from).collect(),
            draws: 50,
            drop_noninteger: true,
        }
    }
}

/// Everything a CLI run needs. An empty file gives the base case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub bounds: BoundsConfig,
    pub de: DeConfig,
    pub delta: DeltaConfig,
    pub inequalities: InequalityOptions,
    pub resample: ResampleConfig,
    pub policy: PolicyGrid,
    /// Parameters for `simulate` and `counterfactual`.
    pub theta: Option<Theta>,
    pub dgp: DgpConfig,
    pub mc: McConfig,
    pub surface: SurfaceConfig,
    pub statics: StaticsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::default(),
            bounds: BoundsConfig::default(),
            de: DeConfig::default(),
            delta: DeltaConfig::default(),
            inequalities: InequalityOptions::default(),
            resample: ResampleConfig::default(),
            policy: PolicyGrid::default(),
            theta: None,
            dgp: DgpConfig::default(),
            mc: McConfig::default(),
            surface: SurfaceConfig::default(),
            statics: StaticsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.covariates.is_empty() {
            return Err(Error::Config("at least one covariate is required".into()));
        }
        let dim = self.model.spec().theta_dim();
        if let Some(b) = &self.bounds.explicit {
            if b.len() != dim - 1 {
                return Err(Error::Config(format!(
                    "explicit bounds list {} entries, parameters need {}",
                    b.len(),
                    dim - 1
                )));
            }
        }
        for (lo, hi) in self.estimation_bounds() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("bad bound [{lo}, {hi}]")));
            }
        }
        if let Some(t) = &self.theta {
            self.model.spec().check_theta(t)?;
        }
        Ok(())
    }

    /// Bounds for components 1.. of the parameter vector.
    pub fn estimation_bounds(&self) -> Vec<(f64, f64)> {
        if let Some(b) = &self.bounds.explicit {
            return b.clone();
        }
        let n_beta = self.model.covariates.len() - 1;
        let mut b = vec![self.bounds.beta; n_beta];
        b.push(self.bounds.delta);
        b.push(self.bounds.gamma);
        b
    }

    /// Estimation DE settings with bounds filled in.
    pub fn estimation_de(&self) -> DeConfig {
        DeConfig {
            bounds: self.estimation_bounds(),
            ..self.de.clone()
        }
    }

    /// Replaces every sub-seed with one derived from the root seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.de.seed = derive_seed(seed, 1);
        self.resample.seed = derive_seed(seed, 2);
        self.policy.seed = derive_seed(seed, 3);
        self.dgp.seed = derive_seed(seed, 4);
        self
    }
}
