//! Competitive equilibrium as the optimum of the social-welfare LP.
//!
//! Every firm `i` holds a distribution `A[i][J]` over all `2^N` bundles. The
//! LP maximizes `sum A[i][J] * U[i][J]` subject to adding-up
//! (`sum_J A[i][J] = eta_i`) and supply-equals-demand for every firm sold:
//! the mass with which `i` sells itself equals the mass of other firms'
//! bundles that contain `i`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::model::{classify_bundle, BundleKind, Coalition, Market, NoiseSpec, Theta};
use crate::simplex::{self, SimplexOptions, SparseColumn, StandardLp};

pub const DEFAULT_LP_CAP: usize = 14;
pub const ORACLE_CAP: usize = 6;
pub const FEASIBILITY_TOL: f64 = 1e-8;
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Standard deviation of the perturbation used to round fractional allocations.
pub const ROUNDING_NOISE_SD: f64 = 1e-3;

/// Enumerates bundles and classifies them per firm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleCatalog {
    n: usize,
    /// Bundle bits in presentation order: by size, then lexicographic members.
    order: Vec<u32>,
}

impl BundleCatalog {
    pub fn new(n: usize) -> Self {
        assert!(n <= 20, "catalog of {n} firms is too large");
        let mut order: Vec<u32> = (0..1u32 << n).collect();
        order.sort_by_key(|&b| {
            let members: Vec<u32> = (0..n as u32).filter(|i| b & (1 << i) != 0).collect();
            (members.len(), members)
        });
        BundleCatalog { n, order }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bundles_per_firm(&self) -> usize {
        1 << self.n
    }

    pub fn bundles(&self) -> impl Iterator<Item = Coalition> + '_ {
        self.order.iter().map(|&b| Coalition::from_bits(b as u128, self.n))
    }

    pub fn kind(&self, firm: usize, bundle: Coalition) -> BundleKind {
        classify_bundle(firm, bundle)
    }

    /// LP column of `A[firm][bundle]`.
    pub fn column(&self, firm: usize, bundle: Coalition) -> usize {
        firm * self.bundles_per_firm() + bundle.bits() as usize
    }
}

/// One variable `A[firm][bundle]` in a constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Term {
    pub firm: usize,
    pub bundle: Coalition,
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{},{:?}", self.firm + 1, self.bundle)
    }
}

/// `supply = sum(demand)` for one firm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeasibilityConstraint {
    pub firm: usize,
    pub supply: Term,
    pub demand: Vec<Term>,
}

impl fmt::Display for FeasibilityConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = ", self.supply)?;
        for (k, t) in self.demand.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

pub fn build_feasibility_constraints(catalog: &BundleCatalog) -> Vec<FeasibilityConstraint> {
    let n = catalog.n();
    (0..n)
        .map(|i| FeasibilityConstraint {
            firm: i,
            supply: Term {
                firm: i,
                bundle: Coalition::singleton(i, n),
            },
            demand: (0..n)
                .filter(|&other| other != i)
                .flat_map(|other| {
                    catalog
                        .bundles()
                        .filter(move |b| b.contains(i))
                        .map(move |bundle| Term { firm: other, bundle })
                })
                .collect(),
        })
        .collect()
}

/// Match-specific shocks `eps[i][J]`, drawn for every cell in firm-major,
/// bundle-bits order so streams stay aligned across markets of equal size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraws {
    n: usize,
    values: Vec<f64>,
}

impl NoiseDraws {
    pub fn zeros(n: usize) -> Self {
        NoiseDraws {
            n,
            values: vec![0.0; n << n],
        }
    }

    pub fn draw<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Self {
        if sigma <= 0.0 {
            return Self::zeros(n);
        }
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        NoiseDraws {
            n,
            values: (0..n << n).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn from_spec(n: usize, spec: &NoiseSpec) -> Result<Self> {
        let sigma = spec.sigma()?;
        Ok(Self::draw(n, sigma, &mut crate::rng::stream(spec.seed, &[0])))
    }

    pub fn get(&self, firm: usize, bundle: Coalition) -> f64 {
        self.values[(firm << self.n) + bundle.bits() as usize]
    }

    pub fn scaled(&self, c: f64) -> Self {
        NoiseDraws {
            n: self.n,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

/// The social-welfare LP for a market of `n` firms.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub catalog: BundleCatalog,
    /// `payoffs[catalog.column(i, J)] = U[i][J]`.
    pub payoffs: Vec<f64>,
    pub eta: Vec<f64>,
    pub feasibility: Vec<FeasibilityConstraint>,
}

impl LinearProgram {
    /// Builds the LP directly from a payoff table (firm-major, bundle bits).
    pub fn from_payoffs(n: usize, payoffs: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        if payoffs.len() != n << n || eta.len() != n {
            return Err(Error::Config("payoff table or eta has wrong size".into()));
        }
        if n < 1 {
            return Err(Error::Config("market has no firms".into()));
        }
        let catalog = BundleCatalog::new(n);
        let feasibility = build_feasibility_constraints(&catalog);
        Ok(LinearProgram {
            catalog,
            payoffs,
            eta,
            feasibility,
        })
    }

    pub fn n(&self) -> usize {
        self.catalog.n()
    }

    pub fn n_variables(&self) -> usize {
        self.payoffs.len()
    }

    pub fn n_adding_up_rows(&self) -> usize {
        self.n()
    }

    pub fn n_feasibility_rows(&self) -> usize {
        self.feasibility.len()
    }

    pub fn payoff(&self, firm: usize, bundle: Coalition) -> f64 {
        self.payoffs[self.catalog.column(firm, bundle)]
    }

    /// Rows `0..n` are adding-up, rows `n..2n` feasibility.
    pub fn to_standard(&self) -> StandardLp {
        let n = self.n();
        let mut columns = vec![SparseColumn::default(); self.n_variables()];
        for i in 0..n {
            for bundle in self.catalog.bundles() {
                let col = &mut columns[self.catalog.column(i, bundle)];
                col.rows.push(i);
                col.vals.push(1.0);
            }
        }
        for c in &self.feasibility {
            let row = n + c.firm;
            let s = &mut columns[self.catalog.column(c.supply.firm, c.supply.bundle)];
            s.rows.push(row);
            s.vals.push(1.0);
            for t in &c.demand {
                let d = &mut columns[self.catalog.column(t.firm, t.bundle)];
                d.rows.push(row);
                d.vals.push(-1.0);
            }
        }
        let mut rhs = self.eta.clone();
        rhs.extend(std::iter::repeat_n(0.0, n));
        StandardLp {
            costs: self.payoffs.clone(),
            columns,
            rhs,
        }
    }

    /// Autarky basis: the null bundle for each adding-up row and the
    /// (zero-level) self-sale bundle for each feasibility row.
    fn autarky_basis(&self) -> Vec<usize> {
        let n = self.n();
        let mut basis: Vec<usize> = (0..n)
            .map(|i| self.catalog.column(i, Coalition::empty(n)))
            .collect();
        basis.extend((0..n).map(|i| self.catalog.column(i, Coalition::singleton(i, n))));
        basis
    }

    /// Largest violation of bounds, adding-up and feasibility rows.
    pub fn max_violation(&self, a: &[f64]) -> f64 {
        let n = self.n();
        let nb = self.catalog.bundles_per_firm();
        let mut worst = 0.0f64;
        for i in 0..n {
            let row = &a[i * nb..(i + 1) * nb];
            for &v in row {
                worst = worst.max(-v).max(v - self.eta[i]);
            }
            worst = worst.max((row.iter().sum::<f64>() - self.eta[i]).abs());
        }
        for c in &self.feasibility {
            let supply = a[self.catalog.column(c.supply.firm, c.supply.bundle)];
            let demand: f64 = c.demand.iter().map(|t| a[self.catalog.column(t.firm, t.bundle)]).sum();
            worst = worst.max((supply - demand).abs());
        }
        worst
    }
}

/// Payoff table `U[i][J]` for every firm and bundle.
pub fn payoff_table(market: &Market, theta: &Theta, noise: &NoiseDraws) -> Result<Vec<f64>> {
    let n = market.n();
    let mut out = Vec::with_capacity(n << n);
    for i in 0..n {
        for bits in 0..1u128 << n {
            let bundle = Coalition::from_bits(bits, n);
            out.push(market.production_value(i, bundle, theta, noise.get(i, bundle))?);
        }
    }
    Ok(out)
}

pub fn assemble_lp(market: &Market, theta: &Theta, noise: &NoiseDraws, cap: usize) -> Result<LinearProgram> {
    let n = market.n();
    if n > cap {
        return Err(Error::MarketTooLarge { n, cap });
    }
    if noise.n != n {
        return Err(Error::Config("noise draws sized for a different market".into()));
    }
    LinearProgram::from_payoffs(n, payoff_table(market, theta, noise)?, vec![1.0; n])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub n: usize,
    pub eta: Vec<f64>,
    /// Firm-major, bundle bits.
    pub a: Vec<f64>,
    pub welfare: f64,
    pub is_integer: bool,
}

impl Allocation {
    pub fn get(&self, firm: usize, bundle: Coalition) -> f64 {
        self.a[(firm << self.n) + bundle.bits() as usize]
    }

    fn integral(n: usize, eta: &[f64], a: &[f64]) -> bool {
        a.iter().enumerate().all(|(k, &v)| {
            let e = eta[k >> n];
            v.abs() <= INTEGRALITY_TOL || (v - e).abs() <= INTEGRALITY_TOL
        })
    }

    /// Partition read off an integer allocation.
    pub fn integer_outcome(&self) -> Option<MatchingOutcome> {
        if !self.is_integer {
            return None;
        }
        let n = self.n;
        let mut groups = Vec::new();
        let mut unmatched = Vec::new();
        for i in 0..n {
            let bits = (0..1u128 << n).find(|&b| self.a[(i << n) + b as usize] > 0.5 * self.eta[i])?;
            let bundle = Coalition::from_bits(bits, n);
            match classify_bundle(i, bundle) {
                BundleKind::Null => unmatched.push(i),
                BundleKind::Buyer => groups.push(Group {
                    buyer: i,
                    targets: bundle.members().collect(),
                }),
                BundleKind::SellerSelf => {}
                BundleKind::Unreal => return None,
            }
        }
        let outcome = MatchingOutcome::new(n, groups, unmatched);
        outcome.validate().ok()?;
        Some(outcome)
    }

    pub fn report(&self) -> AllocationReport {
        let n = self.n;
        let entries = self
            .a
            .iter()
            .enumerate()
            .filter(|(_, &v)| v.abs() > INTEGRALITY_TOL)
            .map(|(k, &v)| AllocationEntry {
                firm: k >> n,
                bundle: format!("{:?}", Coalition::from_bits((k & ((1 << n) - 1)) as u128, n)),
                mass: v,
            })
            .collect();
        AllocationReport {
            n,
            welfare: self.welfare,
            is_integer: self.is_integer,
            entries,
        }
    }
}

/// Serializable sparse view of an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub n: usize,
    pub welfare: f64,
    pub is_integer: bool,
    pub entries: Vec<AllocationEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationEntry {
    pub firm: usize,
    pub bundle: String,
    pub mass: f64,
}

pub fn solve_equilibrium(lp: &LinearProgram) -> Result<Allocation> {
    solve_equilibrium_with(lp, &SimplexOptions::default())
}

pub fn solve_equilibrium_with(lp: &LinearProgram, opts: &SimplexOptions) -> Result<Allocation> {
    let std_lp = lp.to_standard();
    let basis = lp.autarky_basis();
    let sol = simplex::solve(&std_lp, Some(&basis), opts).map_err(|e| match e {
        Error::Unbounded => Error::SolverFailure("unbounded social-welfare LP".into()),
        other => other,
    })?;
    let violation = lp.max_violation(&sol.x);
    if violation > FEASIBILITY_TOL {
        return Err(Error::SolverFailure(format!("solution violates constraints by {violation:e}")));
    }
    let n = lp.n();
    let is_integer = Allocation::integral(n, &lp.eta, &sol.x);
    Ok(Allocation {
        n,
        eta: lp.eta.clone(),
        a: sol.x,
        welfare: sol.objective,
        is_integer,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Group {
    pub buyer: usize,
    pub targets: Vec<usize>,
}

impl Group {
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.buyer).chain(self.targets.iter().copied())
    }

    pub fn target_coalition(&self, width: usize) -> Coalition {
        Coalition::from_members(self.targets.iter().copied(), width)
    }
}

/// A partition of the firms into buyer-led groups and unmatched firms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingOutcome {
    pub n: usize,
    pub groups: Vec<Group>,
    pub unmatched: Vec<usize>,
    /// Per group, whether it meets the subsidy threshold. Empty until
    /// [`MatchingOutcome::annotate`] is called.
    pub qualified: Vec<bool>,
    /// Set when produced by perturbation rounding of a fractional optimum.
    pub probabilistic: bool,
}

impl MatchingOutcome {
    /// Canonical form: groups sorted by buyer, targets and unmatched sorted.
    pub fn new(n: usize, mut groups: Vec<Group>, mut unmatched: Vec<usize>) -> Self {
        for g in &mut groups {
            g.targets.sort_unstable();
        }
        groups.sort();
        unmatched.sort_unstable();
        MatchingOutcome {
            n,
            groups,
            unmatched,
            qualified: Vec::new(),
            probabilistic: false,
        }
    }

    pub fn all_unmatched(n: usize) -> Self {
        Self::new(n, Vec::new(), (0..n).collect())
    }

    /// Checks that groups and unmatched firms partition `0..n`.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.n];
        let mut mark = |i: usize| -> Result<()> {
            if i >= self.n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidMatching(format!("firm {i} missing or repeated")));
            }
            Ok(())
        };
        for g in &self.groups {
            if g.targets.is_empty() {
                return Err(Error::InvalidMatching(format!("group of buyer {} has no targets", g.buyer)));
            }
            for m in g.members() {
                mark(m)?;
            }
        }
        for &u in &self.unmatched {
            mark(u)?;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidMatching(format!("firm {i} not assigned")));
        }
        Ok(())
    }

    pub fn annotate(mut self, market: &Market) -> Self {
        self.qualified = self
            .groups
            .iter()
            .map(|g| market.qualifies(g.buyer, g.target_coalition(market.n())))
            .collect();
        self
    }

    pub fn any_qualified(&self) -> bool {
        self.qualified.iter().any(|&q| q)
    }

    /// Stable text key used to compare and count configurations.
    pub fn canonical_key(&self) -> String {
        let mut s = String::new();
        for g in &self.groups {
            let t: Vec<String> = g.targets.iter().map(|t| t.to_string()).collect();
            s.push_str(&format!("{}<{}>;", g.buyer, t.join(",")));
        }
        let u: Vec<String> = self.unmatched.iter().map(|t| t.to_string()).collect();
        s.push_str(&format!("|{}", u.join(",")));
        s
    }

    /// Total welfare of this partition under `payoff(firm, bundle)`.
    pub fn welfare(&self, payoff: impl Fn(usize, Coalition) -> f64) -> f64 {
        let g: f64 = self
            .groups
            .iter()
            .map(|g| payoff(g.buyer, g.target_coalition(self.n)))
            .sum();
        let u: f64 = self.unmatched.iter().map(|&i| payoff(i, Coalition::empty(self.n))).sum();
        g + u
    }
}

/// Exhaustive welfare maximum over all partitions into buyer-led groups.
pub fn oracle_welfare(market: &Market, theta: &Theta, noise: &NoiseDraws) -> Result<(f64, MatchingOutcome)> {
    let n = market.n();
    if n > ORACLE_CAP {
        return Err(Error::OracleTooLarge { n, cap: ORACLE_CAP });
    }
    market.spec.check_theta(theta)?;
    let value = |i: usize, b: Coalition| market.production_value(i, b, theta, noise.get(i, b)).unwrap();
    let mut best: Option<(f64, Vec<Vec<usize>>, Vec<usize>)> = None;
    // restricted growth strings enumerate set partitions
    let mut labels = vec![0usize; n];
    loop {
        let n_blocks = labels.iter().max().map_or(0, |m| m + 1);
        let mut blocks = vec![Vec::new(); n_blocks];
        for (i, &l) in labels.iter().enumerate() {
            blocks[l].push(i);
        }
        let mut total = 0.0;
        let mut buyers = Vec::with_capacity(n_blocks);
        for block in &blocks {
            if block.len() == 1 {
                total += value(block[0], Coalition::empty(n));
                buyers.push(block[0]);
            } else {
                let (b, v) = block
                    .iter()
                    .map(|&b| {
                        let targets = Coalition::from_members(block.iter().copied().filter(|&j| j != b), n);
                        (b, value(b, targets))
                    })
                    .max_by(|x, y| x.1.total_cmp(&y.1))
                    .unwrap();
                total += v;
                buyers.push(b);
            }
        }
        if best.as_ref().is_none_or(|(w, _, _)| total > *w) {
            best = Some((total, blocks, buyers));
        }
        // next restricted growth string
        let mut k = n;
        loop {
            if k <= 1 {
                let (w, blocks, buyers) = best.unwrap();
                let mut groups = Vec::new();
                let mut unmatched = Vec::new();
                for (block, b) in blocks.into_iter().zip(buyers) {
                    if block.len() == 1 {
                        unmatched.push(b);
                    } else {
                        groups.push(Group {
                            buyer: b,
                            targets: block.into_iter().filter(|&j| j != b).collect(),
                        });
                    }
                }
                return Ok((w, MatchingOutcome::new(n, groups, unmatched)));
            }
            k -= 1;
            let prefix_max = labels[..k].iter().max().copied().unwrap_or(0);
            if labels[k] <= prefix_max {
                labels[k] += 1;
                for l in labels.iter_mut().skip(k + 1) {
                    *l = 0;
                }
                break;
            }
        }
    }
}

/// Converts an allocation into a partition. Integer allocations are read
/// directly; otherwise the allocation is perturbed with small normal noise
/// and buyer bundles are accepted greedily by perturbed weight whenever all
/// members are still free and the buyer weighs the bundle above autarky.
pub fn integerize<R: Rng + ?Sized>(alloc: &Allocation, rng: &mut R) -> MatchingOutcome {
    if let Some(outcome) = alloc.integer_outcome() {
        return outcome;
    }
    let n = alloc.n;
    let noise = Normal::new(0.0, ROUNDING_NOISE_SD).expect("positive sd");
    let perturbed: Vec<f64> = alloc.a.iter().map(|v| v + noise.sample(rng)).collect();
    let mut candidates: Vec<(f64, usize, Coalition)> = Vec::new();
    for i in 0..n {
        for bits in 1..1u128 << n {
            let bundle = Coalition::from_bits(bits, n);
            if classify_bundle(i, bundle) == BundleKind::Buyer && alloc.get(i, bundle) > INTEGRALITY_TOL {
                candidates.push((perturbed[(i << n) + bits as usize], i, bundle));
            }
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut taken = vec![false; n];
    let mut groups = Vec::new();
    for (w, i, bundle) in candidates {
        if taken[i] || bundle.members().any(|j| taken[j]) {
            continue;
        }
        if w < perturbed[i << n] {
            continue;
        }
        taken[i] = true;
        for j in bundle.members() {
            taken[j] = true;
        }
        groups.push(Group {
            buyer: i,
            targets: bundle.members().collect(),
        });
    }
    let unmatched = (0..n).filter(|&i| !taken[i]).collect();
    let mut outcome = MatchingOutcome::new(n, groups, unmatched);
    outcome.probabilistic = true;
    outcome
}

/// How fractional equilibria are handled by data-generating callers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonIntegerMode {
    /// Discard the draw.
    Drop,
    /// Round with [`integerize`].
    Perturb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub n_groups: usize,
    pub n_unmatched: usize,
    pub n_post_merger_firms: usize,
    pub n_qualified: usize,
}

pub fn classify_outcome(outcome: &MatchingOutcome) -> OutcomeSummary {
    let n_groups = outcome.groups.len();
    let n_unmatched = outcome.unmatched.len();
    OutcomeSummary {
        n_groups,
        n_unmatched,
        n_post_merger_firms: n_groups + n_unmatched,
        n_qualified: outcome.qualified.iter().filter(|&&q| q).count(),
    }
}

/// Frequencies of group-size patterns, e.g. `{"1-1": 2}`, for reporting.
pub fn shape_counts(outcome: &MatchingOutcome) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for g in &outcome.groups {
        *m.entry(g.targets.len()).or_insert(0) += 1;
    }
    m
}
