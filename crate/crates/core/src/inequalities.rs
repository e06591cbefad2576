//! Pairwise-stability inequalities and the maximum-rank score.
//!
//! Each inequality is stored as a difference of coefficient stacks `z` so
//! that it holds at `theta` iff `z · theta >= 0`. Shocks never enter.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::equilibrium::MatchingOutcome;
use crate::error::{Error, Result};
use crate::model::{Coalition, FirmRecord, Market, Role, SubsidySpec, Theta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    TwoCoalitions,
    OneCoalitionDrop,
    UnmatchedTarget,
    IrUnmatched,
    IrSubsidy,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::TwoCoalitions,
        Family::OneCoalitionDrop,
        Family::UnmatchedTarget,
        Family::IrUnmatched,
        Family::IrSubsidy,
    ];

    pub fn number(&self) -> u8 {
        *self as u8 + 1
    }
}

/// Which counterfactual produced an inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Detail {
    /// Buyer `a` gives up `k` for `h`; buyer `b` the reverse.
    Swap { k: usize, h: usize },
    /// Target `k` leaves and stays unmatched.
    Drop { k: usize },
    /// Unmatched firm joins; `removed` leaves in exchange when present.
    Insert { added: usize, removed: Option<usize> },
    /// Two unmatched firms merge with `buyer` acquiring the other.
    Merge { buyer: usize },
    /// Matched with subsidy beats autarky.
    SubsidyUpper { buyer: usize },
    /// Autarky beats the same match without subsidy.
    SubsidyLower { buyer: usize },
}

impl std::fmt::Display for Detail {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Detail::Swap { k, h } => write!(f, "swap:{k}:{h}"),
            Detail::Drop { k } => write!(f, "drop:{k}"),
            Detail::Insert { added, removed: Some(r) } => write!(f, "insert:{added}:{r}"),
            Detail::Insert { added, removed: None } => write!(f, "insert:{added}"),
            Detail::Merge { buyer } => write!(f, "merge:{buyer}"),
            Detail::SubsidyUpper { buyer } => write!(f, "ir_upper:{buyer}"),
            Detail::SubsidyLower { buyer } => write!(f, "ir_lower:{buyer}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub z: Vec<f64>,
    pub family: Family,
    pub pair: (usize, usize),
    pub detail: Detail,
}

/// How an unmatched firm enters a buyer's coalition in the buyer/unmatched case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionVariant {
    /// One inequality per target `k`: the unmatched firm replaces `k`.
    WithRemoval,
    /// A single inequality: the unmatched firm is added on top.
    Pure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InequalityOptions {
    /// Only firms observed as main firms may act as buyers in counterfactuals.
    pub buyer_restriction: bool,
    /// Emit the with/without-subsidy individual rationality pair.
    pub ir_subsidy: bool,
    pub insertion: InsertionVariant,
}

impl Default for InequalityOptions {
    fn default() -> Self {
        InequalityOptions {
            buyer_restriction: true,
            ir_subsidy: true,
            insertion: InsertionVariant::WithRemoval,
        }
    }
}

impl InequalityOptions {
    /// Setting for synthetic markets: no role data and no pre-subsidy regime.
    pub fn monte_carlo() -> Self {
        InequalityOptions {
            buyer_restriction: false,
            ir_subsidy: false,
            insertion: InsertionVariant::WithRemoval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservedRole {
    Buyer,
    Seller,
    Unmatched,
}

/// Roles and targets of an observed matching, indexed like the market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedMatching {
    pub roles: Vec<ObservedRole>,
    /// Targets per firm; empty unless the firm is a buyer.
    pub targets: Vec<Vec<usize>>,
    /// Whether the firm may be a buyer in a counterfactual merger.
    pub eligible: Vec<bool>,
    /// Original firm of each entry when the data were resampled; pairs of
    /// copies of the same firm yield no inequalities.
    #[serde(default)]
    pub origin: Option<Vec<usize>>,
}

impl ObservedMatching {
    pub fn n(&self) -> usize {
        self.roles.len()
    }

    /// Roles from an equilibrium outcome; every firm is buyer-eligible.
    pub fn from_outcome(outcome: &MatchingOutcome) -> Self {
        let n = outcome.n;
        let mut roles = vec![ObservedRole::Unmatched; n];
        let mut targets = vec![Vec::new(); n];
        for g in &outcome.groups {
            roles[g.buyer] = ObservedRole::Buyer;
            targets[g.buyer] = g.targets.clone();
            for &t in &g.targets {
                roles[t] = ObservedRole::Seller;
            }
        }
        ObservedMatching {
            roles,
            targets,
            eligible: vec![true; n],
            origin: None,
        }
    }

    /// Roles from data. Each group is led by its main firm; members of a group
    /// without a main firm are sellers with no observed buyer. Unmatched
    /// firms may be buyers only when `buyer_restriction` is off.
    pub fn from_firms(firms: &[FirmRecord], buyer_restriction: bool) -> Result<Self> {
        let n = firms.len();
        let mut roles = vec![ObservedRole::Unmatched; n];
        let mut targets = vec![Vec::new(); n];
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, f) in firms.iter().enumerate() {
            if let (Some(g), true) = (f.group_id, f.role != Some(Role::Unmatched)) {
                groups.entry(g).or_default().push(i);
            }
        }
        for (g, members) in groups {
            let mains: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&i| firms[i].role == Some(Role::MainBuyer))
                .collect();
            if mains.len() > 1 {
                return Err(Error::InvalidMatching(format!("group {g} has {} main firms", mains.len())));
            }
            let others: Vec<usize> = members.iter().copied().filter(|i| !mains.contains(i)).collect();
            match mains.first() {
                Some(&b) if !others.is_empty() => {
                    roles[b] = ObservedRole::Buyer;
                    targets[b] = others.clone();
                    for &s in &others {
                        roles[s] = ObservedRole::Seller;
                    }
                }
                Some(_) => {}
                None => {
                    for &s in &others {
                        roles[s] = ObservedRole::Seller;
                    }
                }
            }
        }
        let eligible = firms
            .iter()
            .map(|f| !buyer_restriction || f.role == Some(Role::MainBuyer))
            .collect();
        Ok(ObservedMatching {
            roles,
            targets,
            eligible,
            origin: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalitySet {
    pub n: usize,
    pub dim: usize,
    pub options: InequalityOptions,
    pub subsidy: SubsidySpec,
    pub inequalities: Vec<Inequality>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub count: usize,
    pub total: usize,
    pub fraction: f64,
    /// `2 / (N (N - 1))` times the count.
    pub normalized: f64,
}

/// Relative slack on the zero boundary so that exact ties computed through
/// different float paths still count as satisfied. Scale invariant.
const TIE_SLACK: f64 = 1e-12;

#[inline]
pub fn satisfied(z: &[f64], theta: &[f64]) -> bool {
    let mut s = 0.0;
    let mut mag = 0.0;
    for (a, b) in z.iter().zip(theta) {
        let p = a * b;
        s += p;
        mag += p.abs();
    }
    s >= -TIE_SLACK * mag
}

impl InequalitySet {
    pub fn len(&self) -> usize {
        self.inequalities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inequalities.is_empty()
    }

    pub fn count_by_family(&self) -> [usize; 5] {
        let mut c = [0; 5];
        for q in &self.inequalities {
            c[q.family as usize] += 1;
        }
        c
    }

    /// Number of satisfied inequalities at the full coefficient vector.
    pub fn count_satisfied(&self, theta: &[f64]) -> usize {
        debug_assert_eq!(theta.len(), self.dim);
        self.inequalities.iter().filter(|q| satisfied(&q.z, theta)).count()
    }

    pub fn score_vec(&self, theta: &[f64]) -> Score {
        let count = self.count_satisfied(theta);
        let total = self.len();
        let n = self.n as f64;
        Score {
            count,
            total,
            fraction: if total == 0 { 0.0 } else { count as f64 / total as f64 },
            normalized: if self.n < 2 { 0.0 } else { 2.0 / (n * (n - 1.0)) * count as f64 },
        }
    }

    pub fn score(&self, theta: &Theta) -> Result<Score> {
        let v = theta.to_vector();
        if v.len() != self.dim {
            return Err(Error::Config(format!(
                "theta has dimension {}, inequalities need {}",
                v.len(),
                self.dim
            )));
        }
        Ok(self.score_vec(&v))
    }

    /// Flat CSV: family, pair, detail, then one column per z component.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["family".to_string(), "a".into(), "b".into(), "detail".into()];
        header.extend((0..self.dim).map(|k| format!("z{k}")));
        out.write_record(&header)?;
        for q in &self.inequalities {
            let mut row = vec![
                q.family.number().to_string(),
                q.pair.0.to_string(),
                q.pair.1.to_string(),
                q.detail.to_string(),
            ];
            row.extend(q.z.iter().map(|v| format!("{v:e}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Builder<'a> {
    market: &'a Market,
    obs: &'a ObservedMatching,
    out: Vec<Inequality>,
}

impl Builder<'_> {
    fn width(&self) -> usize {
        self.market.n()
    }

    fn coalition(&self, members: impl IntoIterator<Item = usize>) -> Coalition {
        Coalition::from_members(members, self.width())
    }

    fn stack(&self, i: usize, targets: Coalition) -> Vec<f64> {
        self.market.index_stack(i, targets)
    }

    fn unmatched(&self, i: usize) -> Vec<f64> {
        self.market.index_stack(i, Coalition::empty(self.width()))
    }

    fn push(&mut self, lhs: &[&[f64]], rhs: &[&[f64]], family: Family, pair: (usize, usize), detail: Detail) {
        let dim = self.market.spec.theta_dim();
        let mut z = vec![0.0; dim];
        for s in lhs {
            for (a, b) in z.iter_mut().zip(s.iter()) {
                *a += b;
            }
        }
        for s in rhs {
            for (a, b) in z.iter_mut().zip(s.iter()) {
                *a -= b;
            }
        }
        self.out.push(Inequality { z, family, pair, detail });
    }

    fn targets(&self, i: usize) -> Coalition {
        self.coalition(self.obs.targets[i].iter().copied())
    }

    fn two_buyers(&mut self, a: usize, b: usize) {
        let (ta, tb) = (self.targets(a), self.targets(b));
        let observed_a = self.stack(a, ta);
        let observed_b = self.stack(b, tb);
        for k in ta.members() {
            for h in tb.members() {
                let swap_a = self.stack(a, ta.without(k).with(h));
                let swap_b = self.stack(b, tb.without(h).with(k));
                self.push(
                    &[&observed_a, &observed_b],
                    &[&swap_a, &swap_b],
                    Family::TwoCoalitions,
                    (a, b),
                    Detail::Swap { k, h },
                );
            }
        }
    }

    fn buyer_seller(&mut self, buyer: usize, pair: (usize, usize)) {
        let t = self.targets(buyer);
        let observed = self.stack(buyer, t);
        for k in t.members() {
            let dropped = self.stack(buyer, t.without(k));
            let alone = self.unmatched(k);
            self.push(&[&observed], &[&dropped, &alone], Family::OneCoalitionDrop, pair, Detail::Drop { k });
        }
    }

    fn buyer_unmatched(&mut self, buyer: usize, outsider: usize, pair: (usize, usize), variant: InsertionVariant) {
        let t = self.targets(buyer);
        let observed = self.stack(buyer, t);
        let outside = self.unmatched(outsider);
        match variant {
            InsertionVariant::WithRemoval => {
                for k in t.members() {
                    let swapped = self.stack(buyer, t.without(k).with(outsider));
                    let alone = self.unmatched(k);
                    self.push(
                        &[&observed, &outside],
                        &[&swapped, &alone],
                        Family::UnmatchedTarget,
                        pair,
                        Detail::Insert {
                            added: outsider,
                            removed: Some(k),
                        },
                    );
                }
            }
            InsertionVariant::Pure => {
                let grown = self.stack(buyer, t.with(outsider));
                self.push(
                    &[&observed, &outside],
                    &[&grown],
                    Family::UnmatchedTarget,
                    pair,
                    Detail::Insert {
                        added: outsider,
                        removed: None,
                    },
                );
            }
        }
    }

    fn two_unmatched(&mut self, a: usize, b: usize) {
        let (buyer, target) = if self.obs.eligible[a] {
            (a, b)
        } else if self.obs.eligible[b] {
            (b, a)
        } else {
            return;
        };
        let ua = self.unmatched(a);
        let ub = self.unmatched(b);
        let merged = self.stack(buyer, self.coalition([target]));
        self.push(&[&ua, &ub], &[&merged], Family::IrUnmatched, (a, b), Detail::Merge { buyer });
    }

    fn chi(&mut self, buyer: usize, pair: (usize, usize)) {
        let t = self.targets(buyer);
        let subsidy = self.market.spec.subsidy;
        let with = self.market.index_stack_with(buyer, t, &subsidy);
        let without = self.market.index_stack_with(buyer, t, &SubsidySpec { amount: 0.0, ..subsidy });
        let alone = self.unmatched(buyer);
        self.push(&[&with], &[&alone], Family::IrSubsidy, pair, Detail::SubsidyUpper { buyer });
        self.push(&[&alone], &[&without], Family::IrSubsidy, pair, Detail::SubsidyLower { buyer });
    }
}

/// Builds all inequalities by scanning firm pairs `a < b`.
pub fn build_inequalities(market: &Market, obs: &ObservedMatching, options: &InequalityOptions) -> Result<InequalitySet> {
    use ObservedRole::*;
    let n = market.n();
    if obs.n() != n {
        return Err(Error::InvalidMatching(format!("matching has {} firms, market {n}", obs.n())));
    }
    if !obs.roles.iter().any(|r| matches!(r, Buyer | Unmatched)) {
        return Err(Error::EmptyInequalitySet);
    }
    let mut b = Builder {
        market,
        obs,
        out: Vec::new(),
    };
    for x in 0..n {
        for y in x + 1..n {
            if obs.origin.as_ref().is_some_and(|o| o[x] == o[y]) {
                continue;
            }
            let pair = (x, y);
            match (obs.roles[x], obs.roles[y]) {
                (Buyer, Buyer) => {
                    b.two_buyers(x, y);
                    if options.ir_subsidy {
                        b.chi(x, pair);
                        b.chi(y, pair);
                    }
                }
                (Buyer, Seller) | (Seller, Buyer) => {
                    let buyer = if obs.roles[x] == Buyer { x } else { y };
                    b.buyer_seller(buyer, pair);
                    if options.ir_subsidy {
                        b.chi(buyer, pair);
                    }
                }
                (Buyer, Unmatched) | (Unmatched, Buyer) => {
                    let (buyer, outsider) = if obs.roles[x] == Buyer { (x, y) } else { (y, x) };
                    b.buyer_unmatched(buyer, outsider, pair, options.insertion);
                    if options.ir_subsidy {
                        b.chi(buyer, pair);
                    }
                }
                (Unmatched, Unmatched) => b.two_unmatched(x, y),
                (Seller, Seller) | (Seller, Unmatched) | (Unmatched, Seller) => {}
            }
        }
    }
    if b.out.is_empty() {
        return Err(Error::EmptyInequalitySet);
    }
    Ok(InequalitySet {
        n,
        dim: market.spec.theta_dim(),
        options: *options,
        subsidy: market.spec.subsidy,
        inequalities: b.out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::Group;
    use crate::model::{dot, Covariate, ModelSpec, SubsidyKind};
    use proptest::prelude::*;

    fn market(tons: &[[f64; 2]], spec: ModelSpec) -> Market {
        let firms = tons
            .iter()
            .enumerate()
            .map(|(i, t)| FirmRecord::synthetic(i, t.to_vec()).unwrap())
            .collect();
        Market::new(firms, spec).unwrap()
    }

    fn base_spec() -> ModelSpec {
        ModelSpec {
            covariates: vec![Covariate::SizeOfType(0), Covariate::ShareOfType(0)],
            ..ModelSpec::default()
        }
    }

    fn tons(n: usize) -> Vec<[f64; 2]> {
        (0..n).map(|i| [0.1 + 0.07 * i as f64, 0.05 + 0.03 * (i % 3) as f64]).collect()
    }

    fn outcome(n: usize, groups: &[(usize, &[usize])]) -> MatchingOutcome {
        let gs: Vec<Group> = groups
            .iter()
            .map(|(b, t)| Group {
                buyer: *b,
                targets: t.to_vec(),
            })
            .collect();
        let used: Vec<usize> = gs.iter().flat_map(|g| g.members().collect::<Vec<_>>()).collect();
        MatchingOutcome::new(n, gs, (0..n).filter(|i| !used.contains(i)).collect())
    }

    fn build(n: usize, groups: &[(usize, &[usize])], opts: InequalityOptions) -> Result<InequalitySet> {
        let m = market(&tons(n), base_spec());
        build_inequalities(&m, &ObservedMatching::from_outcome(&outcome(n, groups)), &opts)
    }

    #[test]
    fn two_one_to_one_matches_give_one_swap() {
        let m = market(&tons(4), base_spec());
        let obs = ObservedMatching::from_outcome(&outcome(4, &[(0, &[1]), (2, &[3])]));
        let set = build_inequalities(&m, &obs, &InequalityOptions::monte_carlo()).unwrap();
        let swaps: Vec<&Inequality> = set.inequalities.iter().filter(|q| q.family == Family::TwoCoalitions).collect();
        assert_eq!(swaps.len(), 1);
        let c = |i: usize, j: usize| m.index_stack(i, Coalition::from_members([j], 4));
        let expected: Vec<f64> = (0..set.dim).map(|k| c(0, 1)[k] + c(2, 3)[k] - c(0, 3)[k] - c(2, 1)[k]).collect();
        assert_eq!(swaps[0].z, expected);
    }

    #[test]
    fn two_unmatched_give_single_merge() {
        let set = build(2, &[], InequalityOptions::monte_carlo()).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.inequalities[0].family, Family::IrUnmatched);
    }

    #[test]
    fn seller_pairs_contribute_nothing() {
        // 0 buys {1,2}; the only pairs are buyer-seller and seller-seller
        let set = build(3, &[(0, &[1, 2])], InequalityOptions::monte_carlo()).unwrap();
        assert!(set.inequalities.iter().all(|q| q.pair.0 == 0));
        assert_eq!(set.len(), 4);
    }

    #[test]
    fn counts_for_eight_firm_shapes() {
        let mc = InequalityOptions::monte_carlo();
        assert_eq!(build(8, &[(0, &[1]), (2, &[3])], mc).unwrap().len(), 19);
        assert_eq!(build(8, &[(0, &[1]), (2, &[3]), (4, &[5])], mc).unwrap().len(), 19);
        assert_eq!(build(8, &[(0, &[1, 2]), (3, &[4])], mc).unwrap().len(), 23);
        let pure = InequalityOptions {
            insertion: InsertionVariant::Pure,
            ..mc
        };
        assert_eq!(build(8, &[(0, &[1, 2]), (3, &[4])], pure).unwrap().len(), 20);
    }

    #[test]
    fn empty_inequality_sets_are_signaled() {
        // everybody a seller: impossible from outcomes, so build roles by hand
        let m = market(&tons(3), base_spec());
        let obs = ObservedMatching {
            roles: vec![ObservedRole::Seller; 3],
            targets: vec![Vec::new(); 3],
            eligible: vec![true; 3],
            origin: None,
        };
        assert!(matches!(
            build_inequalities(&m, &obs, &InequalityOptions::default()),
            Err(Error::EmptyInequalitySet)
        ));
        // unmatched firms that may not buy
        let obs = ObservedMatching {
            roles: vec![ObservedRole::Unmatched; 3],
            targets: vec![Vec::new(); 3],
            eligible: vec![false; 3],
            origin: None,
        };
        assert!(matches!(
            build_inequalities(&m, &obs, &InequalityOptions::default()),
            Err(Error::EmptyInequalitySet)
        ));
    }

    #[test]
    fn chi_delta_difference_under_shared_subsidy() {
        let spec = ModelSpec {
            subsidy: SubsidySpec {
                kind: SubsidyKind::Shared,
                amount: 1.0,
                threshold: 1.0,
            },
            ..base_spec()
        };
        let m = market(&[[0.7, 0.1], [0.5, 0.0]], spec);
        let obs = ObservedMatching::from_outcome(&outcome(2, &[(0, &[1])]));
        let set = build_inequalities(&m, &obs, &InequalityOptions::default()).unwrap();
        let chis: Vec<&Inequality> = set.inequalities.iter().filter(|q| q.family == Family::IrSubsidy).collect();
        assert_eq!(chis.len(), 2);
        let d = set.dim - 2;
        assert!((chis[0].z[d] - 0.5).abs() < 1e-15);
        assert_eq!(chis[1].z[d], 0.0);
        // unqualified: both delta-free
        let m = market(&[[0.3, 0.1], [0.2, 0.0]], base_spec());
        let set = build_inequalities(&m, &obs, &InequalityOptions::default()).unwrap();
        for q in set.inequalities.iter().filter(|q| q.family == Family::IrSubsidy) {
            assert_eq!(q.z[d], 0.0);
        }
    }

    #[test]
    fn delta_and_gamma_components_are_differences() {
        let set = build(6, &[(0, &[1, 2]), (3, &[4])], InequalityOptions::monte_carlo()).unwrap();
        let m = market(&tons(6), base_spec());
        let d = set.dim - 2;
        for q in &set.inequalities {
            if let Detail::Drop { k } = q.detail {
                let t = Coalition::from_members([1, 2], 6);
                assert_eq!(q.z[d + 1], -1.0);
                let ds = m.subsidy_for(0, t, &m.spec.subsidy) - m.subsidy_for(0, t.without(k), &m.spec.subsidy);
                assert_eq!(q.z[d], ds);
            }
        }
    }

    #[test]
    fn buyer_restriction_only_removes() {
        let firms: Vec<FirmRecord> = tons(5)
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let (role, g) = match i {
                    0 => (Role::MainBuyer, Some(1)),
                    1 => (Role::Seller, Some(1)),
                    _ => (Role::Unmatched, None),
                };
                FirmRecord::new(i, format!("f{i}"), Some(role), t.to_vec(), g).unwrap()
            })
            .collect();
        let m = Market::new(firms.clone(), base_spec()).unwrap();
        let opts = InequalityOptions::default();
        let on = build_inequalities(&m, &ObservedMatching::from_firms(&firms, true).unwrap(), &opts).unwrap();
        let off = build_inequalities(&m, &ObservedMatching::from_firms(&firms, false).unwrap(), &opts).unwrap();
        assert!(off.len() > on.len());
        assert_eq!(on.count_by_family()[Family::IrUnmatched as usize], 0);
        assert_eq!(off.count_by_family()[Family::IrUnmatched as usize], 3);
    }

    #[test]
    fn orphan_groups_have_sellers_without_buyer() {
        let firms: Vec<FirmRecord> = (0..3)
            .map(|i| {
                let role = if i == 2 { Role::Unmatched } else { Role::Seller };
                let g = if i == 2 { None } else { Some(4) };
                FirmRecord::new(i, "x", Some(role), vec![0.1, 0.2], g).unwrap()
            })
            .collect();
        let obs = ObservedMatching::from_firms(&firms, true).unwrap();
        assert_eq!(obs.roles, vec![ObservedRole::Seller, ObservedRole::Seller, ObservedRole::Unmatched]);
    }

    #[test]
    fn score_edges() {
        let set = build(5, &[(0, &[1])], InequalityOptions::monte_carlo()).unwrap();
        let s = set.score_vec(&vec![0.0; set.dim]);
        assert_eq!(s.count, set.len());
        assert_eq!(s.fraction, 1.0);
        let one = InequalitySet {
            n: 2,
            dim: 3,
            options: InequalityOptions::default(),
            subsidy: SubsidySpec::default(),
            inequalities: vec![Inequality {
                z: vec![1.0, 0.0, 0.0],
                family: Family::TwoCoalitions,
                pair: (0, 1),
                detail: Detail::Drop { k: 1 },
            }],
        };
        assert_eq!(one.score_vec(&[-1.0, 0.0, 0.0]).count, 0);
        assert_eq!(one.score_vec(&[1.0, 0.0, 0.0]).normalized, 1.0);
    }

    #[test]
    fn csv_has_one_row_per_inequality() {
        let set = build(4, &[(0, &[1])], InequalityOptions::monte_carlo()).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), set.len() + 1);
        assert!(text.starts_with("family,a,b,detail,z0,z1,z2,z3"));
    }

    proptest! {
        #[test]
        fn score_is_scale_invariant(th in prop::collection::vec(-20.0f64..20.0, 3), c in 0.01f64..100.0) {
            let set = build(6, &[(0, &[1, 2]), (3, &[4])], InequalityOptions::monte_carlo()).unwrap();
            let mut v = vec![1.0];
            v.extend(th);
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            prop_assert_eq!(set.count_satisfied(&v), set.count_satisfied(&scaled));
        }

        #[test]
        fn z_is_linear(a in prop::collection::vec(-5.0f64..5.0, 4), b in prop::collection::vec(-5.0f64..5.0, 4)) {
            let set = build(5, &[(0, &[1]), (2, &[3])], InequalityOptions::default()).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            for q in &set.inequalities {
                let lhs = dot(&q.z, &sum);
                let rhs = dot(&q.z, &a) + dot(&q.z, &b);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            }
        }

        #[test]
        fn count_independent_of_tonnage(scale in 0.1f64..20.0) {
            let spec = base_spec();
            let t: Vec<[f64; 2]> = tons(7).iter().map(|x| [x[0] * scale, x[1]]).collect();
            let m = market(&t, spec);
            let obs = ObservedMatching::from_outcome(&outcome(7, &[(0, &[1, 2]), (4, &[3])]));
            let set = build_inequalities(&m, &obs, &InequalityOptions::default()).unwrap();
            let base = build(7, &[(0, &[1, 2]), (4, &[3])], InequalityOptions::default()).unwrap();
            prop_assert_eq!(set.len(), base.len());
        }
    }
}
