//! Finite abstraction of the network on a rectangular grid.
//!
//! Each link's range `[0, cap]` is split at sorted breakpoints into
//! intervals `[0, b_1], (b_1, b_2], ..., (b_{N-1}, cap]`. Cells are the
//! products of these intervals, numbered in mixed radix with link 0 as the
//! least significant digit. Transitions over-approximate the one-step
//! successors of each cell under each admissible control.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{HyperRect, SafeSet};
use crate::network::Network;
use crate::reach::{Reach, ReachBox};

pub type CellId = u32;

/// Hard limit on the number of grid cells.
pub const MAX_CELLS: usize = 1 << 26;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbstractionError {
    #[error("breakpoint {value} for link {link} outside (0, {capacity})")]
    BreakpointOutOfRange { link: u32, value: f64, capacity: f64 },
    #[error("expected breakpoints for {expected} links, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("grid has too many cells")]
    TooManyCells,
    #[error("safe-set threshold {value} of link {link} is not a grid breakpoint")]
    MissingThreshold { link: u32, value: f64 },
}

/// Dense set of cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSet {
    members: Vec<bool>,
}

impl CellSet {
    pub fn empty(universe: usize) -> Self {
        CellSet { members: vec![false; universe] }
    }

    pub fn full(universe: usize) -> Self {
        CellSet { members: vec![true; universe] }
    }

    pub fn from_ids(universe: usize, ids: impl IntoIterator<Item = CellId>) -> Self {
        let mut s = CellSet::empty(universe);
        for q in ids {
            s.insert(q);
        }
        s
    }

    #[inline]
    pub fn contains(&self, q: CellId) -> bool {
        self.members[q as usize]
    }

    pub fn insert(&mut self, q: CellId) {
        self.members[q as usize] = true;
    }

    pub fn remove(&mut self, q: CellId) {
        self.members[q as usize] = false;
    }

    pub fn universe(&self) -> usize {
        self.members.len()
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|b| *b)
    }

    pub fn iter(&self) -> impl Iterator<Item = CellId> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(q, _)| q as CellId)
    }

    pub fn is_subset_of(&self, other: &CellSet) -> bool {
        self.members.iter().zip(&other.members).all(|(a, b)| !*a || *b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionGrid {
    // per link: 0 = b_0 < b_1 < ... < b_N = cap
    breakpoints: Vec<Vec<f64>>,
    strides: Vec<usize>,
    cells: usize,
}

impl PartitionGrid {
    /// Grid whose breakpoints are the thresholds of `safe` plus `extra`
    /// (one list per link, possibly empty).
    pub fn build(net: &Network, safe: &SafeSet, extra: &[Vec<f64>]) -> Result<Self, AbstractionError> {
        let n = net.len();
        if extra.len() != n {
            return Err(AbstractionError::Dimension { expected: n, got: extra.len() });
        }
        let thresholds = safe.thresholds();
        let mut per_link = Vec::with_capacity(n);
        for l in 0..n {
            let cap = net.capacity(l);
            for &v in &extra[l] {
                if !(v > 0.0 && v < cap) {
                    return Err(AbstractionError::BreakpointOutOfRange { link: net.link_id(l), value: v, capacity: cap });
                }
            }
            let mut interior: Vec<f64> = thresholds[l].iter().chain(&extra[l]).copied().collect();
            interior.sort_by(f64::total_cmp);
            interior.dedup();
            per_link.push(interior);
        }
        Self::from_interior(net.capacities(), per_link)
    }

    /// Grid from interior breakpoints only (`0` and `cap` are implied).
    pub fn from_interior(capacity: &[f64], interior: Vec<Vec<f64>>) -> Result<Self, AbstractionError> {
        let mut breakpoints = Vec::with_capacity(capacity.len());
        let mut strides = Vec::with_capacity(capacity.len());
        let mut cells: usize = 1;
        for (l, mut pts) in interior.into_iter().enumerate() {
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let mut b = Vec::with_capacity(pts.len() + 2);
            b.push(0.0);
            b.extend(pts.into_iter().filter(|v| *v > 0.0 && *v < capacity[l]));
            b.push(capacity[l]);
            strides.push(cells);
            cells = cells.checked_mul(b.len() - 1).ok_or(AbstractionError::TooManyCells)?;
            breakpoints.push(b);
        }
        if cells > MAX_CELLS {
            return Err(AbstractionError::TooManyCells);
        }
        Ok(PartitionGrid { breakpoints, strides, cells })
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    pub fn dim(&self) -> usize {
        self.breakpoints.len()
    }

    /// Number of intervals along link `l`.
    pub fn intervals(&self, l: usize) -> usize {
        self.breakpoints[l].len() - 1
    }

    /// All breakpoints of link `l`, including `0` and the capacity.
    pub fn breakpoints(&self, l: usize) -> &[f64] {
        &self.breakpoints[l]
    }

    /// Interval index of `v` along link `l`; a breakpoint belongs to the
    /// interval below it.
    #[inline]
    pub fn interval_of(&self, l: usize, v: f64) -> usize {
        let b = &self.breakpoints[l];
        let interior = &b[1..b.len() - 1];
        interior.partition_point(|&p| p < v)
    }

    pub fn locate(&self, x: &[f64]) -> CellId {
        (0..self.dim())
            .map(|l| self.interval_of(l, x[l]) * self.strides[l])
            .sum::<usize>() as CellId
    }

    pub fn digits(&self, q: CellId) -> Vec<usize> {
        let q = q as usize;
        (0..self.dim()).map(|l| (q / self.strides[l]) % self.intervals(l)).collect()
    }

    pub fn cell_of_digits(&self, digits: &[usize]) -> CellId {
        digits.iter().zip(&self.strides).map(|(d, s)| d * s).sum::<usize>() as CellId
    }

    /// The cell as a set, with its half-open faces.
    pub fn cell_rect(&self, q: CellId) -> HyperRect {
        let digits = self.digits(q);
        let n = self.dim();
        let mut r = HyperRect::closed(vec![0.0; n], vec![0.0; n]);
        for l in 0..n {
            let i = digits[l];
            r.lower[l] = self.breakpoints[l][i];
            r.upper[l] = self.breakpoints[l][i + 1];
            r.lower_open[l] = i > 0;
        }
        r
    }

    pub fn cell_closure(&self, q: CellId) -> ReachBox {
        let r = self.cell_rect(q);
        ReachBox::new(r.lower, r.upper)
    }

    /// Per link, the inclusive interval-index range met by a closed box.
    pub fn index_ranges(&self, b: &ReachBox) -> Vec<(usize, usize)> {
        (0..self.dim())
            .map(|l| (self.interval_of(l, b.lower[l]), self.interval_of(l, b.upper[l])))
            .collect()
    }

    /// Every cell intersecting the closed box `b`.
    pub fn cells_meeting(&self, b: &ReachBox) -> Vec<CellId> {
        let ranges = self.index_ranges(b);
        let mut out = Vec::new();
        let mut digits: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        loop {
            out.push(self.cell_of_digits(&digits));
            let mut l = 0;
            loop {
                if l == digits.len() {
                    return out;
                }
                digits[l] += 1;
                if digits[l] <= ranges[l].1 {
                    break;
                }
                digits[l] = ranges[l].0;
                l += 1;
            }
        }
    }

    /// Requires every threshold of `safe` to be a breakpoint, so each cell
    /// lies entirely inside or entirely outside the set.
    pub fn check_aligned(&self, net: &Network, safe: &SafeSet) -> Result<(), AbstractionError> {
        for (l, ts) in safe.thresholds().iter().enumerate() {
            for &v in ts {
                if !self.breakpoints[l].contains(&v) {
                    return Err(AbstractionError::MissingThreshold { link: net.link_id(l), value: v });
                }
            }
        }
        Ok(())
    }

    /// Cells whose whole rectangle lies inside `safe`.
    pub fn label_cells(&self, net: &Network, safe: &SafeSet) -> Result<CellSet, AbstractionError> {
        self.check_aligned(net, safe)?;
        let members = (0..self.cells as CellId)
            .into_par_iter()
            .map(|q| {
                let r = self.cell_rect(q);
                safe.boxes().iter().any(|b| r.is_subset_of(b))
            })
            .collect();
        Ok(CellSet { members })
    }
}

/// Nondeterministic finite transition system over grid cells.
#[derive(Debug, Clone)]
pub struct TransitionSystem {
    cells: usize,
    controls: usize,
    // successors of (q, u) at q * controls + u, sorted
    succ: Vec<Vec<CellId>>,
    safe: CellSet,
}

impl TransitionSystem {
    /// Successors of every cell under every admissible control, computed
    /// from the interval reach of the cell closure.
    pub fn build(reach: &Reach<'_>, grid: &PartitionGrid, safe: CellSet) -> Self {
        let net = reach.network();
        let controls = net.controls().len();
        let succ = (0..grid.cell_count() * controls)
            .into_par_iter()
            .map(|idx| {
                let q = (idx / controls) as CellId;
                let u = &net.controls()[idx % controls];
                let closure = grid.cell_closure(q);
                let mut out: Vec<CellId> = reach
                    .one(&closure, u)
                    .iter()
                    .flat_map(|b| grid.cells_meeting(b))
                    .collect();
                out.sort_unstable();
                out.dedup();
                out
            })
            .collect();
        TransitionSystem { cells: grid.cell_count(), controls, succ, safe }
    }

    /// Assemble from explicit successor lists (`succ[q][u]`).
    pub fn from_parts(succ: Vec<Vec<Vec<CellId>>>, safe: CellSet) -> Self {
        let cells = succ.len();
        let controls = succ.first().map_or(0, |s| s.len());
        let flat = succ
            .into_iter()
            .flat_map(|per_u| {
                assert_eq!(per_u.len(), controls);
                per_u.into_iter().map(|mut s| {
                    s.sort_unstable();
                    s.dedup();
                    s
                })
            })
            .collect();
        TransitionSystem { cells, controls, succ: flat, safe }
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    pub fn control_count(&self) -> usize {
        self.controls
    }

    #[inline]
    pub fn successors(&self, q: CellId, u: usize) -> &[CellId] {
        &self.succ[q as usize * self.controls + u]
    }

    pub fn safe_cells(&self) -> &CellSet {
        &self.safe
    }

    pub fn transition_count(&self) -> usize {
        self.succ.iter().map(Vec::len).sum()
    }

    /// Reverse map: for each cell, the `(q, u)` pairs that can reach it.
    pub fn predecessors(&self) -> Vec<Vec<(CellId, u32)>> {
        let mut pred = vec![Vec::new(); self.cells];
        for q in 0..self.cells {
            for u in 0..self.controls {
                for &p in self.successors(q as CellId, u) {
                    pred[p as usize].push((q as CellId, u as u32));
                }
            }
        }
        pred
    }

    /// Plain-text edge list: `cell control successor...` per line.
    pub fn export_edges(&self) -> String {
        let mut out = String::new();
        for q in 0..self.cells {
            for u in 0..self.controls {
                let _ = write!(out, "{q} {u}");
                for s in self.successors(q as CellId, u) {
                    let _ = write!(out, " {s}");
                }
                out.push('\n');
            }
        }
        out
    }
}
