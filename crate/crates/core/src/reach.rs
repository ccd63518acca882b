//! Robust interval reachability.
//!
//! When every link's capacity exceeds its own saturation flow plus the
//! scaled saturation flow of each feeder, the successor occupancy of a link
//! is nondecreasing in its own occupancy and in the occupancy of its
//! downstream and upstream links, and nonincreasing in the occupancy of its
//! adjacent links. The upper successor bound is then the dynamics evaluated
//! at the upper corner for own/downstream/upstream terms and the lower
//! corner for adjacent terms, with the largest demand; the lower bound is
//! symmetric.

use thiserror::Error;

use crate::geometry::HyperRect;
use crate::network::{ControlPattern, Network};

/// Default cap on the number of boxes carried through a horizon.
pub const DEFAULT_BRANCH_CAP: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReachError {
    #[error("flow bound assumption fails for link {link} fed by {upstream} ({capacity} < {required}); interval bounds would be unsound")]
    AssumptionViolated { link: u32, upstream: u32, capacity: f64, required: f64 },
    #[error("reach explosion: {branches} boxes exceed the cap of {cap}; use a single demand box")]
    Explosion { branches: usize, cap: usize },
    #[error("demand box index {0} out of range")]
    DemandIndex(usize),
}

/// Closed box `[lower, upper]` of link occupancies.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ReachBox {
    pub fn point(x: &[f64]) -> Self {
        ReachBox { lower: x.to_vec(), upper: x.to_vec() }
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        ReachBox { lower, upper }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    /// `self ⊆ other`.
    pub fn is_within(&self, other: &ReachBox) -> bool {
        (0..self.lower.len()).all(|l| self.lower[l] >= other.lower[l] && self.upper[l] <= other.upper[l])
    }

    pub fn to_rect(&self) -> HyperRect {
        HyperRect::closed(self.lower.clone(), self.upper.clone())
    }
}

/// Union of reach boxes.
pub type ReachUnion = Vec<ReachBox>;

/// Interval reachability engine bound to a network that satisfies the flow
/// bound assumption.
#[derive(Debug, Clone)]
pub struct Reach<'a> {
    net: &'a Network,
    branch_cap: usize,
}

impl<'a> Reach<'a> {
    /// Refuses networks failing the flow bound check.
    pub fn new(net: &'a Network) -> Result<Self, ReachError> {
        if let Some(c) = net.check_flow_bound_assumption().failures().next() {
            return Err(ReachError::AssumptionViolated {
                link: c.link,
                upstream: c.upstream,
                capacity: c.capacity,
                required: c.required,
            });
        }
        Ok(Reach { net, branch_cap: DEFAULT_BRANCH_CAP })
    }

    pub fn with_branch_cap(mut self, cap: usize) -> Self {
        self.branch_cap = cap;
        self
    }

    pub fn network(&self) -> &'a Network {
        self.net
    }

    // Successor bound for every link. `near` supplies the occupancy used
    // for own, downstream and upstream terms, `far` the one for adjacent
    // terms.
    fn bound(&self, near: &[f64], far: &[f64], u: &ControlPattern, d: &[f64]) -> Vec<f64> {
        let net = self.net;
        let n = net.len();
        let mut out = Vec::with_capacity(n);
        for l in 0..n {
            let own = if u.is_green(l) {
                net.downstream(l)
                    .iter()
                    .map(|k| k.space_factor() * (net.capacity(k.link) - near[k.link]))
                    .fold(near[l].min(net.saturation(l)), f64::min)
            } else {
                0.0
            };
            let inflow: f64 = net
                .upstream(l)
                .iter()
                .map(|feeder| {
                    let i = feeder.link;
                    if !u.is_green(i) {
                        return 0.0;
                    }
                    let f_i = net
                        .downstream(i)
                        .iter()
                        .map(|k| {
                            let occ = if k.link == l { near[l] } else { far[k.link] };
                            k.space_factor() * (net.capacity(k.link) - occ)
                        })
                        .fold(near[i].min(net.saturation(i)), f64::min);
                    feeder.turn * f_i
                })
                .sum();
            let next = (near[l] - own + inflow + d[l]).min(net.capacity(l)).max(0.0);
            out.push(next);
        }
        out
    }

    /// Successor box for one demand box.
    pub fn one_box(&self, input: &ReachBox, u: &ControlPattern, dbox: usize) -> Result<ReachBox, ReachError> {
        let d = self.net.demand().get(dbox).ok_or(ReachError::DemandIndex(dbox))?;
        let upper = self.bound(&input.upper, &input.lower, u, &d.upper);
        let lower = self.bound(&input.lower, &input.upper, u, &d.lower);
        Ok(ReachBox { lower, upper })
    }

    /// One-step reachable union over all demand boxes.
    pub fn one(&self, input: &ReachBox, u: &ControlPattern) -> ReachUnion {
        (0..self.net.demand().len())
            .map(|i| self.one_box(input, u, i).expect("index in range"))
            .collect()
    }

    /// Apply one step to every box of a union.
    pub fn advance(&self, boxes: &[ReachBox], u: &ControlPattern) -> Result<ReachUnion, ReachError> {
        let branches = boxes.len() * self.net.demand().len();
        if branches > self.branch_cap {
            return Err(ReachError::Explosion { branches, cap: self.branch_cap });
        }
        Ok(boxes.iter().flat_map(|b| self.one(b, u)).collect())
    }

    /// Reachable unions after each of the controls in `useq`.
    pub fn horizon(&self, start: &ReachBox, useq: &[&ControlPattern]) -> Result<Vec<ReachUnion>, ReachError> {
        let mut out = Vec::with_capacity(useq.len());
        let mut current = vec![start.clone()];
        for u in useq {
            current = self.advance(&current, u)?;
            out.push(current.clone());
        }
        Ok(out)
    }

    /// Upper successor bound computed from upper bounds alone. Only valid
    /// without adjacency, where adjacent terms never occur.
    pub fn upper_only(&self, upper: &[f64], u: &ControlPattern, demand_upper: &[f64]) -> Option<Vec<f64>> {
        if self.net.has_adjacency() {
            return None;
        }
        Some(self.bound(upper, upper, u, demand_upper))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures;

    fn green(bits: &[u8]) -> ControlPattern {
        ControlPattern::new(bits.iter().map(|b| *b == 1).collect())
    }

    #[test]
    fn desk2_box_example() {
        let net = fixtures::desk2();
        let reach = Reach::new(&net).unwrap();
        let input = ReachBox::new(vec![4.0, 6.0], vec![6.0, 8.0]);
        let out = reach.one_box(&input, &green(&[1, 1]), 0).unwrap();
        assert_eq!(out.upper, vec![4.0, 6.0]);
        assert_eq!(out.lower, vec![0.0, 4.0]);
    }

    #[test]
    fn point_box_matches_step() {
        let mut spec = fixtures::desk2_spec([2.0, 0.0]);
        spec.demand[0].lower = vec![1.25, 0.0];
        spec.demand[0].upper = vec![1.25, 0.0];
        let net = spec.validate().unwrap();
        let reach = Reach::new(&net).unwrap();
        for x in [[6.0, 8.0], [0.0, 10.0], [3.3, 9.1], [10.0, 0.0]] {
            for u in net.controls() {
                let out = reach.one_box(&ReachBox::point(&x), u, 0).unwrap();
                let exact = net.step(&x, u, &[1.25, 0.0]);
                assert_eq!(out.lower, exact);
                assert_eq!(out.upper, exact);
            }
        }
    }

    #[test]
    fn refuses_assumption_violation() {
        let mut spec = fixtures::desk2_spec([2.0, 0.0]);
        spec.links[1].capacity = 5.0;
        let net = spec.validate().unwrap();
        assert!(matches!(Reach::new(&net), Err(ReachError::AssumptionViolated { link: 2, upstream: 1, .. })));
    }

    #[test]
    fn horizon_one_is_one_step() {
        let net = fixtures::desk2();
        let reach = Reach::new(&net).unwrap();
        let start = ReachBox::point(&[5.0, 5.0]);
        let u = &net.controls()[3];
        let h = reach.horizon(&start, &[u]).unwrap();
        assert_eq!(h, vec![reach.one(&start, u)]);
    }

    #[test]
    fn explosion_is_reported() {
        let mut spec = fixtures::desk2_spec([2.0, 0.0]);
        spec.demand.push(spec.demand[0].clone());
        let net = spec.validate().unwrap();
        let reach = Reach::new(&net).unwrap().with_branch_cap(4);
        let u = &net.controls()[0];
        let err = reach.horizon(&ReachBox::point(&[1.0, 1.0]), &[u, u, u]).unwrap_err();
        assert_eq!(err, ReachError::Explosion { branches: 8, cap: 4 });
    }
}
