//! Firms, coalitions, covariates and the linear joint production function.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Payoff assigned to bundles that make a firm both seller of itself and
/// buyer of others. Finite so the LP stays bounded.
pub const UNREAL_PAYOFF: f64 = -1e9;

/// Observed role of a firm in data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    MainBuyer,
    Seller,
    Unmatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmRecord {
    pub id: usize,
    pub name: String,
    pub role: Option<Role>,
    /// Tonnage per carrier type, millions of D/W tons.
    pub tonnage: Vec<f64>,
    pub group_id: Option<usize>,
}

impl FirmRecord {
    pub fn new(
        id: usize,
        name: impl Into<String>,
        role: Option<Role>,
        tonnage: Vec<f64>,
        group_id: Option<usize>,
    ) -> Result<Self> {
        if tonnage.is_empty() {
            return Err(Error::Config(format!("firm {id} has no carrier types")));
        }
        if let Some(t) = tonnage.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::Config(format!("firm {id} has invalid tonnage {t}")));
        }
        Ok(FirmRecord {
            id,
            name: name.into(),
            role,
            tonnage,
            group_id,
        })
    }

    /// Synthetic firm without observed role or group.
    pub fn synthetic(id: usize, tonnage: Vec<f64>) -> Result<Self> {
        Self::new(id, format!("firm{id}"), None, tonnage, None)
    }

    pub fn total_tonnage(&self) -> f64 {
        self.tonnage.iter().sum()
    }
}

/// Size and specialization measures of a firm or coalition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub size_total: f64,
    pub size_by_type: Vec<f64>,
    pub share_by_type: Vec<f64>,
    pub hhi: f64,
    /// Set when total tonnage is zero (shares and hhi are then zero).
    pub degenerate: bool,
}

fn shares_and_hhi(sizes: &[f64]) -> (f64, Vec<f64>, f64) {
    let total: f64 = sizes.iter().sum();
    if total > 0.0 {
        let shares: Vec<f64> = sizes.iter().map(|s| s / total).collect();
        let hhi = shares.iter().map(|s| s * s).sum();
        (total, shares, hhi)
    } else {
        (0.0, vec![0.0; sizes.len()], 0.0)
    }
}

pub fn build_covariates(firm: &FirmRecord) -> Covariates {
    let (total, shares, hhi) = shares_and_hhi(&firm.tonnage);
    Covariates {
        size_total: total,
        size_by_type: firm.tonnage.clone(),
        share_by_type: shares,
        hhi,
        degenerate: total <= 0.0,
    }
}

/// Aggregate covariates of a coalition: sizes add up, shares are unweighted
/// member means, hhi is recomputed from the pooled tonnage.
pub fn coalition_covariates(members: &[&Covariates]) -> Result<Covariates> {
    let first = members.first().ok_or(Error::NullCoalition)?;
    let k = first.size_by_type.len();
    let mut sizes = vec![0.0; k];
    let mut share_sum = vec![0.0; k];
    for m in members {
        if m.size_by_type.len() != k {
            return Err(Error::Config("members disagree on carrier types".into()));
        }
        for t in 0..k {
            sizes[t] += m.size_by_type[t];
            share_sum[t] += m.share_by_type[t];
        }
    }
    let n = members.len() as f64;
    let (total, _, hhi) = shares_and_hhi(&sizes);
    Ok(Covariates {
        size_total: total,
        size_by_type: sizes,
        share_by_type: share_sum.into_iter().map(|s| s / n).collect(),
        hhi,
        degenerate: total <= 0.0,
    })
}

/// One entry of the interaction menu: the production index contains
/// `x_i[c] * x_J[c]` for every configured covariate `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Covariate {
    TotalSize,
    SizeOfType(usize),
    ShareOfType(usize),
    Hhi,
}

impl Covariate {
    pub fn value(&self, c: &Covariates) -> f64 {
        match *self {
            Covariate::TotalSize => c.size_total,
            Covariate::SizeOfType(t) => c.size_by_type[t],
            Covariate::ShareOfType(t) => c.share_by_type[t],
            Covariate::Hhi => c.hhi,
        }
    }

    fn carrier(&self) -> Option<usize> {
        match *self {
            Covariate::SizeOfType(t) | Covariate::ShareOfType(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Covariate::TotalSize => write!(f, "total"),
            Covariate::SizeOfType(t) => write!(f, "size:{t}"),
            Covariate::ShareOfType(t) => write!(f, "share:{t}"),
            Covariate::Hhi => write!(f, "hhi"),
        }
    }
}

impl std::str::FromStr for Covariate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown covariate `{s}`"));
        match s {
            "total" => Ok(Covariate::TotalSize),
            "hhi" => Ok(Covariate::Hhi),
            _ => {
                let (kind, idx) = s.split_once(':').ok_or_else(bad)?;
                let idx: usize = idx.parse().map_err(|_| bad())?;
                match kind {
                    "size" => Ok(Covariate::SizeOfType(idx)),
                    "share" => Ok(Covariate::ShareOfType(idx)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

impl TryFrom<String> for Covariate {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Covariate> for String {
    fn from(c: Covariate) -> String {
        c.to_string()
    }
}

/// Parameters of the production index. The coefficient on the first
/// interaction covariate is normalized to +1 and not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta: Vec<f64>,
    pub delta: f64,
    pub gamma: f64,
}

impl Theta {
    pub const BETA0: f64 = 1.0;

    pub fn new(beta: Vec<f64>, delta: f64, gamma: f64) -> Self {
        Theta { beta, delta, gamma }
    }

    /// Length of the full coefficient vector `[beta0, beta.., delta, gamma]`.
    pub fn dim(&self) -> usize {
        self.beta.len() + 3
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(Self::BETA0);
        v.extend_from_slice(&self.beta);
        v.push(self.delta);
        v.push(self.gamma);
        v
    }

    /// Inverse of [`Theta::to_vector`]; the leading entry is ignored.
    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if v.len() < 3 {
            return Err(Error::Config("theta vector needs at least 3 entries".into()));
        }
        let k = v.len();
        Ok(Theta {
            beta: v[1..k - 2].to_vec(),
            delta: v[k - 2],
            gamma: v[k - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsidyKind {
    ToBuyer,
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsidySpec {
    pub kind: SubsidyKind,
    pub amount: f64,
    /// Tonnage a group must strictly exceed to qualify.
    pub threshold: f64,
}

impl Default for SubsidySpec {
    fn default() -> Self {
        SubsidySpec {
            kind: SubsidyKind::ToBuyer,
            amount: 1.0,
            threshold: 1.0,
        }
    }
}

impl SubsidySpec {
    pub fn qualifies(&self, group_tonnage: f64) -> bool {
        group_tonnage > self.threshold
    }
}

/// Subsidy received by a buyer whose group has `group_size` members and
/// pooled tonnage `group_tonnage`.
pub fn subsidy_term(spec: &SubsidySpec, group_size: usize, group_tonnage: f64) -> f64 {
    if group_size == 0 || !spec.qualifies(group_tonnage) {
        return 0.0;
    }
    match spec.kind {
        SubsidyKind::ToBuyer => spec.amount,
        SubsidyKind::Shared => spec.amount / group_size as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSpec {
    /// `true`: gamma per acquired firm. `false`: gamma once per merger.
    pub per_target: bool,
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec { per_target: true }
    }
}

impl CostSpec {
    /// Number of cost units charged to firm `i` for bundle `bundle`.
    pub fn units(&self, i: usize, bundle: Coalition) -> f64 {
        let targets = bundle.without(i).len();
        if targets == 0 {
            0.0
        } else if self.per_target {
            targets as f64
        } else {
            1.0
        }
    }
}

/// Per-target merger cost: zero for autarky and self-sale.
pub fn merger_cost(i: usize, bundle: Coalition, gamma: f64) -> f64 {
    gamma * CostSpec { per_target: true }.units(i, bundle)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseDist {
    StdNormal,
    Normal { sigma: f64 },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub dist: NoiseDist,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn sigma(&self) -> Result<f64> {
        match self.dist {
            NoiseDist::StdNormal => Ok(1.0),
            NoiseDist::Normal { sigma } if sigma > 0.0 => Ok(sigma),
            NoiseDist::Normal { sigma } => Err(Error::Config(format!("noise sigma must be > 0, got {sigma}"))),
            NoiseDist::None => Ok(0.0),
        }
    }
}

/// Bitset over firm indices; supports markets of up to 128 firms.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coalition {
    bits: u128,
    width: u8,
}

impl Coalition {
    pub const MAX_WIDTH: usize = 128;

    pub fn empty(width: usize) -> Self {
        assert!(width <= Self::MAX_WIDTH, "coalition width {width} > 128");
        Coalition {
            bits: 0,
            width: width as u8,
        }
    }

    pub fn from_bits(bits: u128, width: usize) -> Self {
        let mut c = Self::empty(width);
        let mask = if width == 128 { u128::MAX } else { (1u128 << width) - 1 };
        assert_eq!(bits & !mask, 0, "bits outside coalition width");
        c.bits = bits;
        c
    }

    pub fn singleton(i: usize, width: usize) -> Self {
        Self::empty(width).with(i)
    }

    pub fn from_members(members: impl IntoIterator<Item = usize>, width: usize) -> Self {
        members.into_iter().fold(Self::empty(width), |c, m| c.with(m))
    }

    pub fn bits(&self) -> u128 {
        self.bits
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.width() && self.bits & (1u128 << i) != 0
    }

    pub fn with(mut self, i: usize) -> Self {
        assert!(i < self.width(), "firm {i} outside coalition width {}", self.width);
        self.bits |= 1u128 << i;
        self
    }

    pub fn without(mut self, i: usize) -> Self {
        if i < self.width() {
            self.bits &= !(1u128 << i);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        let bits = self.bits;
        (0..self.width()).filter(move |i| bits & (1u128 << i) != 0)
    }
}

impl fmt::Debug for Coalition {
    /// Bit string in firm order, as in `(110)` for firms 1 and 2 of three.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for i in 0..self.width() {
            write!(f, "{}", if self.contains(i) { '1' } else { '0' })?;
        }
        write!(f, ")")
    }
}

/// Role implied for firm `i` by holding bundle `J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BundleKind {
    Null,
    SellerSelf,
    Buyer,
    Unreal,
}

pub fn classify_bundle(i: usize, bundle: Coalition) -> BundleKind {
    match (bundle.contains(i), bundle.len()) {
        (_, 0) => BundleKind::Null,
        (true, 1) => BundleKind::SellerSelf,
        (true, _) => BundleKind::Unreal,
        (false, _) => BundleKind::Buyer,
    }
}

/// Everything about the production function except the parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Interaction covariates; the first carries the normalized coefficient.
    pub covariates: Vec<Covariate>,
    pub subsidy: SubsidySpec,
    pub cost: CostSpec,
    /// Whether the buyer's own firm is pooled into the coalition aggregate.
    pub buyer_in_aggregate: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            covariates: vec![Covariate::TotalSize],
            subsidy: SubsidySpec::default(),
            cost: CostSpec::default(),
            buyer_in_aggregate: true,
        }
    }
}

impl ModelSpec {
    pub fn n_beta(&self) -> usize {
        self.covariates.len().saturating_sub(1)
    }

    /// Length of the coefficient stacks produced by [`Market::index_stack`].
    pub fn theta_dim(&self) -> usize {
        self.covariates.len() + 2
    }

    pub fn check_theta(&self, theta: &Theta) -> Result<()> {
        if theta.beta.len() != self.n_beta() {
            return Err(Error::Config(format!(
                "theta has {} beta coefficients, covariate menu needs {}",
                theta.beta.len(),
                self.n_beta()
            )));
        }
        Ok(())
    }
}

/// A set of firms with precomputed covariates and a production specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub firms: Vec<FirmRecord>,
    pub covariates: Vec<Covariates>,
    pub spec: ModelSpec,
}

impl Market {
    pub fn new(firms: Vec<FirmRecord>, spec: ModelSpec) -> Result<Self> {
        if spec.covariates.is_empty() {
            return Err(Error::Config("covariate menu is empty".into()));
        }
        if firms.len() > Coalition::MAX_WIDTH {
            return Err(Error::Config(format!("{} firms exceed 128", firms.len())));
        }
        if let Some(first) = firms.first() {
            let k = first.tonnage.len();
            if firms.iter().any(|f| f.tonnage.len() != k) {
                return Err(Error::Config("firms disagree on number of carrier types".into()));
            }
            for c in &spec.covariates {
                if let Some(t) = c.carrier() {
                    if t >= k {
                        return Err(Error::Config(format!("covariate {c} refers to carrier {t}, only {k} present")));
                    }
                }
            }
        }
        if spec.subsidy.amount < 0.0 || spec.subsidy.threshold < 0.0 {
            return Err(Error::Config("subsidy amount and threshold must be non-negative".into()));
        }
        let covariates = firms.iter().map(build_covariates).collect();
        Ok(Market {
            firms,
            covariates,
            spec,
        })
    }

    pub fn n(&self) -> usize {
        self.firms.len()
    }

    pub fn with_subsidy(&self, subsidy: SubsidySpec) -> Self {
        let mut m = self.clone();
        m.spec.subsidy = subsidy;
        m
    }

    /// Members pooled into the aggregate when `buyer` acquires `targets`.
    fn pooled(&self, buyer: usize, targets: Coalition) -> Coalition {
        if self.spec.buyer_in_aggregate {
            targets.with(buyer)
        } else {
            targets
        }
    }

    /// Pooled tonnage of the group formed by `buyer` and `targets`.
    pub fn group_tonnage(&self, buyer: usize, targets: Coalition) -> f64 {
        self.pooled(buyer, targets)
            .members()
            .map(|j| self.firms[j].total_tonnage())
            .sum()
    }

    /// Whether the group led by `buyer` meets the subsidy threshold.
    pub fn qualifies(&self, buyer: usize, targets: Coalition) -> bool {
        !targets.without(buyer).is_empty() && self.spec.subsidy.qualifies(self.group_tonnage(buyer, targets))
    }

    /// Subsidy term for `buyer` acquiring `targets` under `subsidy`.
    pub fn subsidy_for(&self, buyer: usize, targets: Coalition, subsidy: &SubsidySpec) -> f64 {
        let targets = targets.without(buyer);
        if targets.is_empty() {
            return 0.0;
        }
        let pooled = self.pooled(buyer, targets);
        subsidy_term(subsidy, pooled.len(), self.group_tonnage(buyer, targets))
    }

    /// Coefficient stack `X_i(J)` with `value = X_i(J) · theta_vector`.
    ///
    /// Null bundles give the self-interaction stack with no subsidy or cost,
    /// seller bundles a zero stack. `bundle` must not be unreal for `i`.
    pub fn index_stack(&self, i: usize, bundle: Coalition) -> Vec<f64> {
        self.index_stack_with(i, bundle, &self.spec.subsidy)
    }

    /// As [`Market::index_stack`] under an alternative subsidy regime.
    pub fn index_stack_with(&self, i: usize, bundle: Coalition, subsidy: &SubsidySpec) -> Vec<f64> {
        let dim = self.spec.theta_dim();
        let nc = self.spec.covariates.len();
        let mut z = vec![0.0; dim];
        let xi = &self.covariates[i];
        match classify_bundle(i, bundle) {
            BundleKind::SellerSelf => {}
            BundleKind::Null => {
                for (k, c) in self.spec.covariates.iter().enumerate() {
                    let v = c.value(xi);
                    z[k] = v * v;
                }
            }
            BundleKind::Buyer | BundleKind::Unreal => {
                let targets = bundle.without(i);
                let pooled = self.pooled(i, targets);
                let members: Vec<&Covariates> = pooled.members().map(|j| &self.covariates[j]).collect();
                let xj = coalition_covariates(&members).expect("buyer bundle has members");
                for (k, c) in self.spec.covariates.iter().enumerate() {
                    z[k] = c.value(xi) * c.value(&xj);
                }
                z[nc] = self.subsidy_for(i, targets, subsidy);
                z[nc + 1] = -self.spec.cost.units(i, targets);
            }
        }
        z
    }

    /// `U_{i,J}` = production value plus the match-specific shock.
    pub fn production_value(&self, i: usize, bundle: Coalition, theta: &Theta, eps: f64) -> Result<f64> {
        self.spec.check_theta(theta)?;
        Ok(match classify_bundle(i, bundle) {
            BundleKind::SellerSelf => 0.0,
            BundleKind::Unreal => UNREAL_PAYOFF,
            BundleKind::Null | BundleKind::Buyer => dot(&self.index_stack(i, bundle), &theta.to_vector()) + eps,
        })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
