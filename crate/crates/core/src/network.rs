//! Store-and-forward traffic network model.
//!
//! A network is a set of one-way links joined at signalized intersections.
//! Each link `l` carries `x_l` vehicles, bounded by its capacity, and
//! discharges at most `c_l` vehicles per step while its light is green.
//! Discharged vehicles split among downstream links by turn ratios, and each
//! downstream link grants a share of its free space to every upstream link.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default absolute tolerance used for real-valued comparisons.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Upper bound on the size of the enumerated control set.
pub const MAX_CONTROLS: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network has no links")]
    NoLinks,
    #[error("duplicate link id {0}")]
    DuplicateLink(u32),
    #[error("duplicate intersection id `{0}`")]
    DuplicateIntersection(String),
    #[error("link {link}: capacity and saturation flow must be finite and positive")]
    NonPositiveParameter { link: u32 },
    #[error("link {link}: unknown intersection `{intersection}`")]
    DanglingIntersection { link: u32, intersection: String },
    #[error("link {link}: downstream link {target} does not exist")]
    UnknownDownstream { link: u32, target: u32 },
    #[error("link {link}: downstream link {target} does not leave the head intersection of {link}")]
    TopologyMismatch { link: u32, target: u32 },
    #[error("link {link}: downstream link {target} listed twice")]
    DuplicateTurn { link: u32, target: u32 },
    #[error("link {link}: a link cannot feed itself")]
    SelfLoop { link: u32 },
    #[error("link {link}: ratio {value} outside (0, 1]")]
    RatioOutOfRange { link: u32, value: f64 },
    #[error("link {link}: turn ratios exceed 1 (sum {sum})")]
    TurnRatioSum { link: u32, sum: f64 },
    #[error("link {link}: capacity ratios of simultaneously green upstream links exceed 1 (sum {sum})")]
    CapacityRatioSum { link: u32, sum: f64 },
    #[error("signal constraint at `{intersection}` references unknown link {link}")]
    UnknownSignalLink { intersection: String, link: u32 },
    #[error("empty control set")]
    EmptyControlSet,
    #[error("control set exceeds {MAX_CONTROLS} patterns")]
    TooManyControls,
    #[error("empty demand set")]
    EmptyDemand,
    #[error("demand box {index}: expected {expected} bounds per side, got {got}")]
    DemandDimension { index: usize, expected: usize, got: usize },
    #[error("demand box {index}, link {link}: bounds must satisfy 0 <= lower <= upper")]
    DemandBounds { index: usize, link: u32 },
}

/// One turning movement out of a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSpec {
    /// Receiving link id.
    pub link: u32,
    /// Fraction of the discharged vehicles entering the receiving link.
    pub turn: f64,
    /// Share of the receiving link's free space granted to this movement.
    #[serde(default = "one")]
    pub share: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: u32,
    /// Storage capacity in vehicles.
    pub capacity: f64,
    /// Vehicles discharged per step at full green.
    pub saturation: f64,
    pub head: String,
    #[serde(default)]
    pub tail: Option<String>,
    #[serde(default)]
    pub downstream: Vec<TurnSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

impl Sense {
    pub fn holds(self, lhs: i64, rhs: i64) -> bool {
        match self {
            Sense::Le => lhs <= rhs,
            Sense::Eq => lhs == rhs,
            Sense::Ge => lhs >= rhs,
        }
    }
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        })
    }
}

/// Linear constraint over the binary lights, e.g. `u_a + u_b <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalConstraint {
    /// `(link id, integer coefficient)` pairs.
    pub terms: Vec<(u32, i32)>,
    pub sense: Sense,
    pub rhs: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionSpec {
    pub id: String,
    #[serde(default)]
    pub constraints: Vec<SignalConstraint>,
}

/// Axis-aligned box of exogenous arrivals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DemandBox {
    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn contains(&self, d: &[f64], tol: f64) -> bool {
        d.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }
}

/// Raw network description as ingested from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub intersections: Vec<IntersectionSpec>,
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub demand: Vec<DemandBox>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

/// Binary light vector, one entry per link (`true` = green).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ControlPattern(Vec<bool>);

impl ControlPattern {
    pub fn new(bits: Vec<bool>) -> Self {
        ControlPattern(bits)
    }

    pub fn all_red(n: usize) -> Self {
        ControlPattern(vec![false; n])
    }

    #[inline]
    pub fn is_green(&self, link: usize) -> bool {
        self.0[link]
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for ControlPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Movement `l -> k` with its turn ratio and capacity share.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Turn {
    pub link: usize,
    pub turn: f64,
    pub share: f64,
}

impl Turn {
    /// Ratio `alpha / beta` scaling the receiving link's free space.
    #[inline]
    pub fn space_factor(&self) -> f64 {
        self.share / self.turn
    }
}

#[derive(Debug, Clone)]
struct LinearSignalRow {
    terms: Vec<(usize, i32)>,
    sense: Sense,
    rhs: i32,
}

/// Validated, immutable network with precomputed adjacency.
#[derive(Debug, Clone)]
pub struct Network {
    ids: Vec<u32>,
    capacity: Vec<f64>,
    saturation: Vec<f64>,
    head: Vec<usize>,
    tail: Vec<Option<usize>>,
    intersections: Vec<String>,
    downstream: Vec<Vec<Turn>>,
    // `upstream[l]` holds turns `i -> l`, with `Turn::link == i`.
    upstream: Vec<Vec<Turn>>,
    adjacent: Vec<Vec<usize>>,
    signal_rows: Vec<(usize, LinearSignalRow)>,
    controls: Vec<ControlPattern>,
    demand: Vec<DemandBox>,
    tolerance: f64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<Network, NetworkError> {
        Network::from_spec(self)
    }
}

impl Network {
    pub fn from_spec(spec: &NetworkSpec) -> Result<Network, NetworkError> {
        let n = spec.links.len();
        if n == 0 {
            return Err(NetworkError::NoLinks);
        }
        let tolerance = spec.tolerance.unwrap_or(DEFAULT_TOLERANCE);

        let mut inter_index = HashMap::new();
        for (i, inter) in spec.intersections.iter().enumerate() {
            if inter_index.insert(inter.id.clone(), i).is_some() {
                return Err(NetworkError::DuplicateIntersection(inter.id.clone()));
            }
        }
        let mut link_index = HashMap::new();
        for (i, link) in spec.links.iter().enumerate() {
            if link_index.insert(link.id, i).is_some() {
                return Err(NetworkError::DuplicateLink(link.id));
            }
        }

        let mut head = Vec::with_capacity(n);
        let mut tail = Vec::with_capacity(n);
        for link in &spec.links {
            let ok = |v: f64| v.is_finite() && v > 0.0;
            if !ok(link.capacity) || !ok(link.saturation) {
                return Err(NetworkError::NonPositiveParameter { link: link.id });
            }
            let resolve = |name: &String| {
                inter_index
                    .get(name)
                    .copied()
                    .ok_or_else(|| NetworkError::DanglingIntersection {
                        link: link.id,
                        intersection: name.clone(),
                    })
            };
            head.push(resolve(&link.head)?);
            tail.push(link.tail.as_ref().map(resolve).transpose()?);
        }

        let mut downstream = vec![Vec::new(); n];
        let mut upstream = vec![Vec::new(); n];
        for (l, link) in spec.links.iter().enumerate() {
            let mut sum = 0.0;
            for t in &link.downstream {
                let k = *link_index
                    .get(&t.link)
                    .ok_or(NetworkError::UnknownDownstream { link: link.id, target: t.link })?;
                if k == l {
                    return Err(NetworkError::SelfLoop { link: link.id });
                }
                if tail[k] != Some(head[l]) {
                    return Err(NetworkError::TopologyMismatch { link: link.id, target: t.link });
                }
                if downstream[l].iter().any(|d: &Turn| d.link == k) {
                    return Err(NetworkError::DuplicateTurn { link: link.id, target: t.link });
                }
                for v in [t.turn, t.share] {
                    if !(v > 0.0 && v <= 1.0) {
                        return Err(NetworkError::RatioOutOfRange { link: link.id, value: v });
                    }
                }
                sum += t.turn;
                downstream[l].push(Turn { link: k, turn: t.turn, share: t.share });
                upstream[k].push(Turn { link: l, turn: t.turn, share: t.share });
            }
            if sum > 1.0 + tolerance {
                return Err(NetworkError::TurnRatioSum { link: link.id, sum });
            }
        }

        // j is adjacent to l when both receive from a common upstream link
        let adjacent = (0..n)
            .map(|l| {
                let mut adj: Vec<usize> = upstream[l]
                    .iter()
                    .flat_map(|i| downstream[i.link].iter().map(|k| k.link))
                    .filter(|&j| j != l)
                    .collect();
                adj.sort_unstable();
                adj.dedup();
                adj
            })
            .collect();

        let mut signal_rows = Vec::new();
        for (iidx, inter) in spec.intersections.iter().enumerate() {
            for c in &inter.constraints {
                let mut terms = Vec::with_capacity(c.terms.len());
                for &(id, coef) in &c.terms {
                    let l = *link_index.get(&id).ok_or_else(|| NetworkError::UnknownSignalLink {
                        intersection: inter.id.clone(),
                        link: id,
                    })?;
                    terms.push((l, coef));
                }
                signal_rows.push((iidx, LinearSignalRow { terms, sense: c.sense, rhs: c.rhs }));
            }
        }

        if spec.demand.is_empty() {
            return Err(NetworkError::EmptyDemand);
        }
        for (index, b) in spec.demand.iter().enumerate() {
            for side in [&b.lower, &b.upper] {
                if side.len() != n {
                    return Err(NetworkError::DemandDimension { index, expected: n, got: side.len() });
                }
            }
            for l in 0..n {
                let (lo, hi) = (b.lower[l], b.upper[l]);
                if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                    return Err(NetworkError::DemandBounds { index, link: spec.links[l].id });
                }
            }
        }

        let rows: Vec<LinearSignalRow> = signal_rows.iter().map(|(_, r)| r.clone()).collect();
        let controls = enumerate_controls(n, &rows)?;

        let net = Network {
            ids: spec.links.iter().map(|l| l.id).collect(),
            capacity: spec.links.iter().map(|l| l.capacity).collect(),
            saturation: spec.links.iter().map(|l| l.saturation).collect(),
            head,
            tail,
            intersections: spec.intersections.iter().map(|i| i.id.clone()).collect(),
            downstream,
            upstream,
            adjacent,
            signal_rows,
            controls,
            demand: spec.demand.clone(),
            tolerance,
        };
        net.check_capacity_shares()?;
        Ok(net)
    }

    // Shares are constant while the upstream light is green and irrelevant
    // while it is red, so they only have to sum to at most one over the
    // upstream links that can be green together.
    fn check_capacity_shares(&self) -> Result<(), NetworkError> {
        for l in 0..self.len() {
            if self.upstream[l].len() < 2 {
                continue;
            }
            for u in &self.controls {
                let sum: f64 = self.upstream[l]
                    .iter()
                    .filter(|t| u.is_green(t.link))
                    .map(|t| t.share)
                    .sum();
                if sum > 1.0 + self.tolerance {
                    return Err(NetworkError::CapacityRatioSum { link: self.ids[l], sum });
                }
            }
        }
        Ok(())
    }

    /// Number of links.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn link_id(&self, l: usize) -> u32 {
        self.ids[l]
    }

    pub fn link_ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn capacity(&self, l: usize) -> f64 {
        self.capacity[l]
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacity
    }

    pub fn saturation(&self, l: usize) -> f64 {
        self.saturation[l]
    }

    pub fn head(&self, l: usize) -> &str {
        &self.intersections[self.head[l]]
    }

    pub fn tail(&self, l: usize) -> Option<&str> {
        self.tail[l].map(|t| self.intersections[t].as_str())
    }

    pub fn downstream(&self, l: usize) -> &[Turn] {
        &self.downstream[l]
    }

    /// Turns feeding `l`; each entry's `link` is the upstream link.
    pub fn upstream(&self, l: usize) -> &[Turn] {
        &self.upstream[l]
    }

    pub fn adjacent(&self, l: usize) -> &[usize] {
        &self.adjacent[l]
    }

    /// True when some link shares an upstream feeder with another link.
    pub fn has_adjacency(&self) -> bool {
        self.adjacent.iter().any(|a| !a.is_empty())
    }

    /// Admissible light patterns in lexicographic order.
    pub fn controls(&self) -> &[ControlPattern] {
        &self.controls
    }

    pub fn demand(&self) -> &[DemandBox] {
        &self.demand
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Signal constraints as `(intersection, terms, sense, rhs)`.
    pub fn signal_constraints(&self) -> impl Iterator<Item = (&str, &[(usize, i32)], Sense, i32)> {
        self.signal_rows
            .iter()
            .map(|(i, r)| (self.intersections[*i].as_str(), r.terms.as_slice(), r.sense, r.rhs))
    }

    pub fn in_state_space(&self, x: &[f64]) -> bool {
        x.len() == self.len()
            && x.iter()
                .zip(&self.capacity)
                .all(|(v, cap)| *v >= -self.tolerance && *v <= cap + self.tolerance)
    }

    /// Componentwise hull of all demand boxes.
    pub fn demand_hull(&self) -> DemandBox {
        let n = self.len();
        let mut lower = vec![f64::INFINITY; n];
        let mut upper = vec![f64::NEG_INFINITY; n];
        for b in &self.demand {
            for l in 0..n {
                lower[l] = lower[l].min(b.lower[l]);
                upper[l] = upper[l].max(b.upper[l]);
            }
        }
        DemandBox { lower, upper }
    }

    /// Vehicles leaving link `l` in one step.
    pub fn outflow(&self, x: &[f64], u: &ControlPattern, l: usize) -> f64 {
        if !u.is_green(l) {
            return 0.0;
        }
        self.downstream[l]
            .iter()
            .map(|k| k.space_factor() * (self.capacity[k.link] - x[k.link]))
            .fold(x[l].min(self.saturation[l]), f64::min)
    }

    pub fn outflows(&self, x: &[f64], u: &ControlPattern) -> Vec<f64> {
        (0..self.len()).map(|l| self.outflow(x, u, l)).collect()
    }

    /// Unclamped successor occupancy of link `l` given all outflows.
    #[inline]
    pub(crate) fn balance(&self, x: &[f64], flows: &[f64], d: &[f64], l: usize) -> f64 {
        let inflow: f64 = self.upstream[l].iter().map(|i| i.turn * flows[i.link]).sum();
        x[l] - flows[l] + inflow + d[l]
    }

    /// One step of the network dynamics.
    pub fn step(&self, x: &[f64], u: &ControlPattern, d: &[f64]) -> Vec<f64> {
        let flows = self.outflows(x, u);
        (0..self.len())
            .map(|l| self.balance(x, &flows, d, l).min(self.capacity[l]))
            .collect()
    }

    /// Check `x_l^cap >= c_l + c_i beta_il / alpha_il` for every upstream pair.
    pub fn check_flow_bound_assumption(&self) -> FlowBoundReport {
        let mut checks = Vec::new();
        for l in 0..self.len() {
            for i in &self.upstream[l] {
                let required = self.saturation[l] + self.saturation[i.link] * i.turn / i.share;
                checks.push(FlowBoundCheck {
                    link: self.ids[l],
                    upstream: self.ids[i.link],
                    capacity: self.capacity[l],
                    required,
                    pass: self.capacity[l] + self.tolerance >= required,
                });
            }
        }
        FlowBoundReport { checks }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowBoundCheck {
    pub link: u32,
    pub upstream: u32,
    pub capacity: f64,
    pub required: f64,
    pub pass: bool,
}

/// Per upstream pair outcome of the flow bound check. Links without
/// upstream links contribute no entries and pass vacuously.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowBoundReport {
    pub checks: Vec<FlowBoundCheck>,
}

impl FlowBoundReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FlowBoundCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Depth-first enumeration over links in index order, green after red, so
/// the output is sorted lexicographically. Partial assignments that cannot
/// be completed are pruned.
fn enumerate_controls(n: usize, rows: &[LinearSignalRow]) -> Result<Vec<ControlPattern>, NetworkError> {
    // per row, coefficient of each link
    let dense: Vec<Vec<i64>> = rows
        .iter()
        .map(|r| {
            let mut c = vec![0i64; n];
            for &(l, a) in &r.terms {
                c[l] += a as i64;
            }
            c
        })
        .collect();
    // suffix ranges of achievable contributions from links l..n
    let suffix: Vec<Vec<(i64, i64)>> = dense
        .iter()
        .map(|c| {
            let mut s = vec![(0i64, 0i64); n + 1];
            for l in (0..n).rev() {
                let (lo, hi) = s[l + 1];
                s[l] = (lo + c[l].min(0), hi + c[l].max(0));
            }
            s
        })
        .collect();

    let mut out = Vec::new();
    let mut bits = vec![false; n];
    let mut partial = vec![0i64; rows.len()];

    fn feasible(rows: &[LinearSignalRow], partial: &[i64], suffix: &[Vec<(i64, i64)>], next: usize) -> bool {
        rows.iter().enumerate().all(|(r, row)| {
            let (lo, hi) = suffix[r][next];
            let (lo, hi) = (partial[r] + lo, partial[r] + hi);
            let rhs = row.rhs as i64;
            match row.sense {
                Sense::Le => lo <= rhs,
                Sense::Ge => hi >= rhs,
                Sense::Eq => lo <= rhs && rhs <= hi,
            }
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        l: usize,
        n: usize,
        rows: &[LinearSignalRow],
        dense: &[Vec<i64>],
        suffix: &[Vec<(i64, i64)>],
        bits: &mut Vec<bool>,
        partial: &mut Vec<i64>,
        out: &mut Vec<ControlPattern>,
    ) -> Result<(), NetworkError> {
        if !feasible(rows, partial, suffix, l) {
            return Ok(());
        }
        if l == n {
            if rows.iter().zip(partial.iter()).all(|(r, &p)| r.sense.holds(p, r.rhs as i64)) {
                if out.len() >= MAX_CONTROLS {
                    return Err(NetworkError::TooManyControls);
                }
                out.push(ControlPattern(bits.clone()));
            }
            return Ok(());
        }
        for green in [false, true] {
            bits[l] = green;
            if green {
                for (r, c) in dense.iter().enumerate() {
                    partial[r] += c[l];
                }
            }
            recurse(l + 1, n, rows, dense, suffix, bits, partial, out)?;
            if green {
                for (r, c) in dense.iter().enumerate() {
                    partial[r] -= c[l];
                }
            }
        }
        bits[l] = false;
        Ok(())
    }

    recurse(0, n, rows, &dense, &suffix, &mut bits, &mut partial, &mut out)?;
    if out.is_empty() {
        return Err(NetworkError::EmptyControlSet);
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn link(id: u32, cap: f64, sat: f64, head: &str, tail: Option<&str>, down: &[(u32, f64, f64)]) -> LinkSpec {
        LinkSpec {
            id,
            capacity: cap,
            saturation: sat,
            head: head.to_string(),
            tail: tail.map(str::to_string),
            downstream: down
                .iter()
                .map(|&(link, turn, share)| TurnSpec { link, turn, share })
                .collect(),
        }
    }

    /// Two links in series: 1 -> 2 with beta = 0.5, alpha = 1.
    pub fn desk2_spec(demand_hi: [f64; 2]) -> NetworkSpec {
        NetworkSpec {
            intersections: vec![
                IntersectionSpec { id: "A".into(), constraints: vec![] },
                IntersectionSpec { id: "B".into(), constraints: vec![] },
            ],
            links: vec![
                link(1, 10.0, 4.0, "A", None, &[(2, 0.5, 1.0)]),
                link(2, 10.0, 4.0, "B", Some("A"), &[]),
            ],
            demand: vec![DemandBox { lower: vec![0.0, 0.0], upper: demand_hi.to_vec() }],
            tolerance: None,
        }
    }

    pub fn desk2() -> Network {
        desk2_spec([2.0, 0.0]).validate().unwrap()
    }
}
