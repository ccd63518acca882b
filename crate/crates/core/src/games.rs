//! Fixpoint games on the finite abstraction.

use std::fmt::Write as _;

use thiserror::Error;

use crate::abstraction::{CellId, CellSet, PartitionGrid, TransitionSystem};
use crate::geometry::{GeometryError, SafeSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("no terminal set: the safety game is empty; refine the partition")]
    EmptyWinningSet,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Greatest controlled-invariant cell set inside the safe cells, with every
/// control keeping each member inside the set.
#[derive(Debug, Clone, PartialEq)]
pub struct WinningSet {
    cells: CellSet,
    admissible: Vec<Vec<u32>>,
}

impl WinningSet {
    pub fn from_parts(cells: CellSet, admissible: Vec<Vec<u32>>) -> Self {
        WinningSet { cells, admissible }
    }

    pub fn cells(&self) -> &CellSet {
        &self.cells
    }

    pub fn contains(&self, q: CellId) -> bool {
        self.cells.contains(q)
    }

    /// Controls `u` with `δ(q, u) ⊆` the set; empty outside the set.
    pub fn admissible(&self, q: CellId) -> &[u32] {
        &self.admissible[q as usize]
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Text table: `cell: control control ...` for each winning cell.
    pub fn export_table(&self) -> String {
        let mut out = String::new();
        for q in self.cells.iter() {
            let _ = write!(out, "{q}:");
            for u in self.admissible(q) {
                let _ = write!(out, " {u}");
            }
            out.push('\n');
        }
        out
    }
}

/// Safety game. A worklist over the reverse transition relation removes
/// cells whose every control may leave the current set.
pub fn safety_game(ts: &TransitionSystem, safe: &CellSet) -> WinningSet {
    let n = ts.cell_count();
    let m = ts.control_count();
    let mut alive = safe.clone();
    // successors of (q, u) currently outside the set
    let mut outside = vec![0u32; n * m];
    let mut good = vec![0u32; n];
    let mut worklist = Vec::new();

    for q in alive.iter() {
        for u in 0..m {
            let bad = ts.successors(q, u).iter().filter(|&&p| !alive.contains(p)).count() as u32;
            outside[q as usize * m + u] = bad;
            if bad == 0 {
                good[q as usize] += 1;
            }
        }
        if good[q as usize] == 0 {
            worklist.push(q);
        }
    }
    for &q in &worklist {
        alive.remove(q);
    }

    let pred = ts.predecessors();
    while let Some(p) = worklist.pop() {
        for &(q, u) in &pred[p as usize] {
            if !alive.contains(q) {
                continue;
            }
            let slot = &mut outside[q as usize * m + u as usize];
            *slot += 1;
            if *slot == 1 {
                good[q as usize] -= 1;
                if good[q as usize] == 0 {
                    alive.remove(q);
                    worklist.push(q);
                }
            }
        }
    }

    let admissible = (0..n)
        .map(|q| {
            if !alive.contains(q as CellId) {
                return Vec::new();
            }
            (0..m as u32)
                .filter(|&u| outside[q * m + u as usize] == 0)
                .collect()
        })
        .collect();
    WinningSet { cells: alive, admissible }
}

/// Union of the winning cells as a safe set (the terminal set).
pub fn winning_boxes(win: &WinningSet, grid: &PartitionGrid, capacity: &[f64]) -> Result<SafeSet, GameError> {
    if win.is_empty() {
        return Err(GameError::EmptyWinningSet);
    }
    let boxes = win.cells().iter().map(|q| grid.cell_rect(q)).collect();
    Ok(SafeSet::new(capacity.to_vec(), boxes)?)
}

/// Cells from which some control forces entry into the target, with the
/// worst-case number of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Attractor {
    rank: Vec<Option<u32>>,
    control: Vec<Option<u32>>,
}

impl Attractor {
    pub fn from_parts(rank: Vec<Option<u32>>, control: Vec<Option<u32>>) -> Self {
        Attractor { rank, control }
    }

    pub fn contains(&self, q: CellId) -> bool {
        self.rank[q as usize].is_some()
    }

    /// Worst-case steps to the target.
    pub fn rank(&self, q: CellId) -> Option<u32> {
        self.rank[q as usize]
    }

    /// Stored control; `None` for target cells and cells outside.
    pub fn control(&self, q: CellId) -> Option<u32> {
        self.control[q as usize]
    }

    pub fn len(&self) -> usize {
        self.rank.iter().filter(|r| r.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells from which the target cannot be forced.
    pub fn losing(&self) -> impl Iterator<Item = CellId> + '_ {
        self.rank
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .map(|(q, _)| q as CellId)
    }
}

/// Reachability game, layer by layer: a cell joins at rank `k + 1` when
/// some control sends all its successors into ranks `<= k`. The lowest
/// such control index is stored.
pub fn reachability_game(ts: &TransitionSystem, target: &CellSet) -> Attractor {
    let n = ts.cell_count();
    let m = ts.control_count();
    let mut rank: Vec<Option<u32>> = vec![None; n];
    let mut control = vec![None; n];
    let mut outside = vec![0u32; n * m];
    for q in 0..n {
        for u in 0..m {
            outside[q * m + u] = ts.successors(q as CellId, u).len() as u32;
        }
    }
    let pred = ts.predecessors();

    let mut layer: Vec<CellId> = target.iter().collect();
    for &q in &layer {
        rank[q as usize] = Some(0);
    }
    let mut k = 0u32;
    while !layer.is_empty() {
        let mut touched = Vec::new();
        for &p in &layer {
            for &(q, u) in &pred[p as usize] {
                let slot = &mut outside[q as usize * m + u as usize];
                *slot -= 1;
                if *slot == 0 && rank[q as usize].is_none() {
                    touched.push(q);
                }
            }
        }
        touched.sort_unstable();
        touched.dedup();
        k += 1;
        for &q in &touched {
            let u = (0..m).find(|&u| outside[q as usize * m + u] == 0).expect("a control reached zero");
            rank[q as usize] = Some(k);
            control[q as usize] = Some(u as u32);
        }
        layer = touched;
    }
    Attractor { rank, control }
}
