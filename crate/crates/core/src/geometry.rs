//! Hyper-rectangles, finite unions of them, and safe-set compilation from
//! boolean expressions over `x_l <= r` atoms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Network;

/// Refuse robustness precomputation beyond this many elementary pieces.
const MAX_ROBUSTNESS_PIECES: usize = 1 << 22;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("safety atom references unknown link {0}")]
    UnknownLink(u32),
    #[error("safety atom on link {link}: threshold {threshold} outside (0, {capacity})")]
    ThresholdOutOfRange { link: u32, threshold: f64, capacity: f64 },
    #[error("empty conjunction or disjunction in safety expression")]
    EmptyConnective,
    #[error("box dimension {got} does not match state dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("safe set has too many elementary pieces ({0}) for exact robustness")]
    TooManyPieces(usize),
}

/// Axis-aligned hyper-rectangle with per-face openness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRect {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower_open: Vec<bool>,
    pub upper_open: Vec<bool>,
}

impl HyperRect {
    pub fn closed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let n = lower.len();
        assert_eq!(n, upper.len());
        HyperRect { lower, upper, lower_open: vec![false; n], upper_open: vec![false; n] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|l| {
            let above = if self.lower_open[l] { x[l] > self.lower[l] } else { x[l] >= self.lower[l] };
            let below = if self.upper_open[l] { x[l] < self.upper[l] } else { x[l] <= self.upper[l] };
            above && below
        })
    }

    pub fn is_empty(&self) -> bool {
        (0..self.dim()).any(|l| {
            self.lower[l] > self.upper[l]
                || (self.lower[l] == self.upper[l] && (self.lower_open[l] || self.upper_open[l]))
        })
    }

    /// Intersection, or `None` when empty. On equal bounds the open flag wins.
    pub fn intersect(&self, other: &HyperRect) -> Option<HyperRect> {
        let n = self.dim();
        let mut out = HyperRect::closed(vec![0.0; n], vec![0.0; n]);
        for l in 0..n {
            let (lo, lo_open) = if self.lower[l] > other.lower[l] {
                (self.lower[l], self.lower_open[l])
            } else if self.lower[l] < other.lower[l] {
                (other.lower[l], other.lower_open[l])
            } else {
                (self.lower[l], self.lower_open[l] || other.lower_open[l])
            };
            let (hi, hi_open) = if self.upper[l] < other.upper[l] {
                (self.upper[l], self.upper_open[l])
            } else if self.upper[l] > other.upper[l] {
                (other.upper[l], other.upper_open[l])
            } else {
                (self.upper[l], self.upper_open[l] || other.upper_open[l])
            };
            out.lower[l] = lo;
            out.upper[l] = hi;
            out.lower_open[l] = lo_open;
            out.upper_open[l] = hi_open;
        }
        if out.is_empty() {
            None
        } else {
            Some(out)
        }
    }

    /// Set inclusion `self ⊆ other`, respecting openness.
    pub fn is_subset_of(&self, other: &HyperRect) -> bool {
        if self.is_empty() {
            return true;
        }
        (0..self.dim()).all(|l| {
            let lower_ok = self.lower[l] > other.lower[l]
                || (self.lower[l] == other.lower[l] && (!other.lower_open[l] || self.lower_open[l]));
            let upper_ok = self.upper[l] < other.upper[l]
                || (self.upper[l] == other.upper[l] && (!other.upper_open[l] || self.upper_open[l]));
            lower_ok && upper_ok
        })
    }

    /// Euclidean distance from `x` to the closure of the box.
    pub fn distance(&self, x: &[f64]) -> f64 {
        (0..self.dim())
            .map(|l| {
                let gap = (self.lower[l] - x[l]).max(x[l] - self.upper[l]).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Boolean expression over rectangular atoms `x_link <= le`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafetyExpr {
    Atom { link: u32, le: f64 },
    And(Vec<SafetyExpr>),
    Or(Vec<SafetyExpr>),
}

impl SafetyExpr {
    pub fn atom(link: u32, le: f64) -> Self {
        SafetyExpr::Atom { link, le }
    }

    /// Direct truth value at `x`; links resolved through `net`.
    pub fn eval(&self, net: &Network, x: &[f64]) -> bool {
        match self {
            SafetyExpr::Atom { link, le } => net.index_of(*link).is_some_and(|l| x[l] <= *le),
            SafetyExpr::And(items) => items.iter().all(|e| e.eval(net, x)),
            SafetyExpr::Or(items) => items.iter().any(|e| e.eval(net, x)),
        }
    }

    // Disjunctive normal form as a list of conjunctions of (link index, r).
    fn dnf(&self, net: &Network) -> Result<Vec<Vec<(usize, f64)>>, GeometryError> {
        match self {
            SafetyExpr::Atom { link, le } => {
                let l = net.index_of(*link).ok_or(GeometryError::UnknownLink(*link))?;
                let cap = net.capacity(l);
                if !(*le > 0.0 && *le < cap) {
                    return Err(GeometryError::ThresholdOutOfRange { link: *link, threshold: *le, capacity: cap });
                }
                Ok(vec![vec![(l, *le)]])
            }
            SafetyExpr::Or(items) => {
                if items.is_empty() {
                    return Err(GeometryError::EmptyConnective);
                }
                let mut out = Vec::new();
                for e in items {
                    out.extend(e.dnf(net)?);
                }
                Ok(out)
            }
            SafetyExpr::And(items) => {
                if items.is_empty() {
                    return Err(GeometryError::EmptyConnective);
                }
                let mut acc: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
                for e in items {
                    let rhs = e.dnf(net)?;
                    let mut next = Vec::with_capacity(acc.len() * rhs.len());
                    for a in &acc {
                        for b in &rhs {
                            let mut c = a.clone();
                            c.extend_from_slice(b);
                            next.push(c);
                        }
                    }
                    acc = next;
                }
                Ok(acc)
            }
        }
    }

    /// Expand to a union of closed boxes `[0, r]` (capacity on unconstrained
    /// links). With `prune`, boxes contained in another box are dropped.
    pub fn compile(&self, net: &Network, prune: bool) -> Result<SafeSet, GeometryError> {
        let caps = net.capacities();
        let mut boxes: Vec<HyperRect> = self
            .dnf(net)?
            .into_iter()
            .map(|conj| {
                let mut upper = caps.to_vec();
                for (l, r) in conj {
                    upper[l] = upper[l].min(r);
                }
                HyperRect::closed(vec![0.0; caps.len()], upper)
            })
            .collect();
        if prune {
            boxes = prune_subsumed(boxes);
        }
        SafeSet::new(caps.to_vec(), boxes)
    }
}

fn prune_subsumed(boxes: Vec<HyperRect>) -> Vec<HyperRect> {
    let mut keep: Vec<HyperRect> = Vec::with_capacity(boxes.len());
    'outer: for (i, b) in boxes.iter().enumerate() {
        for (j, other) in boxes.iter().enumerate() {
            if i == j || !b.is_subset_of(other) {
                continue;
            }
            // identical boxes: keep the first occurrence only
            if !other.is_subset_of(b) || j < i {
                continue 'outer;
            }
        }
        keep.push(b.clone());
    }
    keep
}

/// Finite union of boxes inside the state space `[0, cap]^n`.
#[derive(Debug, Clone)]
pub struct SafeSet {
    capacity: Vec<f64>,
    boxes: Vec<HyperRect>,
    // closures of the elementary pieces of X that lie outside the union
    violation: Vec<HyperRect>,
}

impl SafeSet {
    pub fn new(capacity: Vec<f64>, boxes: Vec<HyperRect>) -> Result<Self, GeometryError> {
        let n = capacity.len();
        if let Some(b) = boxes.iter().find(|b| b.dim() != n) {
            return Err(GeometryError::Dimension { expected: n, got: b.dim() });
        }
        let violation = violation_pieces(&capacity, &boxes)?;
        Ok(SafeSet { capacity, boxes, violation })
    }

    /// The whole state space.
    pub fn everything(capacity: Vec<f64>) -> Self {
        let n = capacity.len();
        let b = HyperRect::closed(vec![0.0; n], capacity.clone());
        SafeSet::new(capacity, vec![b]).expect("state-space box")
    }

    pub fn boxes(&self) -> &[HyperRect] {
        &self.boxes
    }

    pub fn capacity(&self) -> &[f64] {
        &self.capacity
    }

    pub fn dim(&self) -> usize {
        self.capacity.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(x))
    }

    /// Signed distance to violation: positive inside (distance to the part of
    /// the state space outside the set), negative outside (minus the distance
    /// to the set). Faces shared with the state-space boundary do not count.
    /// `+inf` when the set covers the whole state space.
    pub fn robustness(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            self.violation
                .iter()
                .map(|p| p.distance(x))
                .fold(f64::INFINITY, f64::min)
        } else {
            -self.boxes.iter().map(|b| b.distance(x)).fold(f64::INFINITY, f64::min)
        }
    }

    /// Every distinct finite bound strictly inside `(0, cap_l)` per link.
    pub fn thresholds(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|l| {
                let mut t: Vec<f64> = self
                    .boxes
                    .iter()
                    .flat_map(|b| [b.lower[l], b.upper[l]])
                    .filter(|v| *v > 0.0 && *v < self.capacity[l])
                    .collect();
                t.sort_by(f64::total_cmp);
                t.dedup();
                t
            })
            .collect()
    }

    /// Box list in a plain text format, one box per line.
    pub fn export_boxes(&self) -> String {
        let mut out = String::new();
        for (i, b) in self.boxes.iter().enumerate() {
            out.push_str(&format!("box {i}:"));
            for l in 0..b.dim() {
                let lb = if b.lower_open[l] { '(' } else { '[' };
                let ub = if b.upper_open[l] { ')' } else { ']' };
                out.push_str(&format!(" {lb}{}, {}{ub}", b.lower[l], b.upper[l]));
            }
            out.push('\n');
        }
        out
    }
}

/// One elementary piece along a single axis: an open interval between
/// consecutive cuts, or a single cut point.
#[derive(Debug, Clone, Copy)]
struct AxisPiece {
    lo: f64,
    hi: f64,
    probe: f64,
}

// Split each axis at every box bound. A point cut is its own piece only
// when some box is open there, since with closed faces a cut point is safe
// whenever both neighbouring open pieces are.
fn violation_pieces(capacity: &[f64], boxes: &[HyperRect]) -> Result<Vec<HyperRect>, GeometryError> {
    let n = capacity.len();
    let mut axes: Vec<Vec<AxisPiece>> = Vec::with_capacity(n);
    for l in 0..n {
        let cap = capacity[l];
        let mut cuts: Vec<f64> = vec![0.0, cap];
        let mut open_cuts: Vec<f64> = Vec::new();
        for b in boxes {
            for (v, open) in [(b.lower[l], b.lower_open[l]), (b.upper[l], b.upper_open[l])] {
                if v >= 0.0 && v <= cap {
                    cuts.push(v);
                    if open {
                        open_cuts.push(v);
                    }
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut pieces = Vec::new();
        for w in cuts.windows(2) {
            pieces.push(AxisPiece { lo: w[0], hi: w[1], probe: 0.5 * (w[0] + w[1]) });
        }
        for c in cuts {
            if open_cuts.contains(&c) {
                pieces.push(AxisPiece { lo: c, hi: c, probe: c });
            }
        }
        if pieces.is_empty() {
            pieces.push(AxisPiece { lo: 0.0, hi: 0.0, probe: 0.0 });
        }
        axes.push(pieces);
    }
    let total = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len()));
    match total {
        Some(t) if t <= MAX_ROBUSTNESS_PIECES => {}
        Some(t) => return Err(GeometryError::TooManyPieces(t)),
        None => return Err(GeometryError::TooManyPieces(usize::MAX)),
    }

    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    let mut probe = vec![0.0; n];
    loop {
        for l in 0..n {
            probe[l] = axes[l][idx[l]].probe;
        }
        if !boxes.iter().any(|b| b.contains(&probe)) {
            out.push(HyperRect::closed(
                (0..n).map(|l| axes[l][idx[l]].lo).collect(),
                (0..n).map(|l| axes[l][idx[l]].hi).collect(),
            ));
        }
        // odometer increment
        let mut l = 0;
        loop {
            if l == n {
                return Ok(out);
            }
            idx[l] += 1;
            if idx[l] < axes[l].len() {
                break;
            }
            idx[l] = 0;
            l += 1;
        }
    }
}
