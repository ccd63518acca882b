//! Robust finite-horizon MPC by full enumeration of control sequences.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{CellSet, PartitionGrid};
use crate::games::WinningSet;
use crate::network::{DemandBox, Network};
use crate::reach::{Reach, ReachBox, ReachError};

pub const DEFAULT_ENUMERATION_CAP: u64 = 100_000;

/// True iff every grid cell meeting the closed box lies in `cells`. Grid
/// cells partition the state space, so this is exact containment of the box
/// in the union of those cells.
pub fn box_in_cellunion(b: &ReachBox, grid: &PartitionGrid, cells: &CellSet) -> bool {
    let ranges = grid.index_ranges(b);
    let mut digits: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    loop {
        if !cells.contains(grid.cell_of_digits(&digits)) {
            return false;
        }
        let mut l = 0;
        loop {
            if l == digits.len() {
                return true;
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

/// Where the nominal demand `d^e` comes from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NominalDemand {
    /// Midpoint of the first demand box.
    #[default]
    Midpoint,
    Constant(Vec<f64>),
    /// Indexed by absolute time; the last entry repeats.
    Sequence(Vec<Vec<f64>>),
    /// Uniform in the demand set, drawn per absolute time from this seed.
    Random { seed: u64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("{sequences} control sequences exceed the enumeration cap of {cap}")]
    EnumerationCap { sequences: u128, cap: u64 },
    #[error("nominal demand {0:?} has the wrong dimension or lies outside the demand set")]
    NominalOutsideDemand(Vec<f64>),
    #[error("nominal demand sequence is empty")]
    EmptySequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    #[serde(default)]
    pub nominal: NominalDemand,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_cap")]
    pub enumeration_cap: u64,
}

fn default_tolerance() -> f64 {
    1e-9
}

fn default_cap() -> u64 {
    DEFAULT_ENUMERATION_CAP
}

impl MpcConfig {
    pub fn new(horizon: usize) -> Self {
        MpcConfig {
            horizon,
            nominal: NominalDemand::Midpoint,
            tolerance: default_tolerance(),
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    pub fn validate(&self, net: &Network) -> Result<(), ConfigError> {
        if self.horizon == 0 {
            return Err(ConfigError::ZeroHorizon);
        }
        let sequences = (net.controls().len() as u128).checked_pow(self.horizon as u32).unwrap_or(u128::MAX);
        if sequences > self.enumeration_cap as u128 {
            return Err(ConfigError::EnumerationCap { sequences, cap: self.enumeration_cap });
        }
        let inside = |d: &Vec<f64>| d.len() == net.len() && net.demand().iter().any(|b| b.contains(d, net.tolerance()));
        match &self.nominal {
            NominalDemand::Constant(d) if !inside(d) => Err(ConfigError::NominalOutsideDemand(d.clone())),
            NominalDemand::Sequence(s) if s.is_empty() => Err(ConfigError::EmptySequence),
            NominalDemand::Sequence(s) => match s.iter().find(|d| !inside(d)) {
                Some(d) => Err(ConfigError::NominalOutsideDemand(d.clone())),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

/// Uniform draw from the demand set: a box chosen uniformly, then each
/// coordinate uniform within it.
pub fn uniform_demand(boxes: &[DemandBox], rng: &mut impl Rng) -> Vec<f64> {
    let b = &boxes[rng.gen_range(0..boxes.len())];
    b.lower
        .iter()
        .zip(&b.upper)
        .map(|(&lo, &hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
        .collect()
}

fn nominal_at(net: &Network, nominal: &NominalDemand, time: usize) -> Vec<f64> {
    match nominal {
        NominalDemand::Midpoint => net.demand()[0].midpoint(),
        NominalDemand::Constant(d) => d.clone(),
        NominalDemand::Sequence(s) => s[time.min(s.len() - 1)].clone(),
        NominalDemand::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((time as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            uniform_demand(net.demand(), &mut rng)
        }
    }
}

/// Why no sequence was feasible.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnosis {
    /// Prefixes rejected at each horizon step (safe-path constraint for
    /// steps before the last, terminal constraint at the last).
    pub rejected_at: Vec<u64>,
    pub start_in_terminal: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("infeasible: no control sequence satisfies the safe-path and terminal constraints ({0:?})")]
    Infeasible(Diagnosis),
    #[error("state outside the state space")]
    OutsideStateSpace,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Reach(#[from] ReachError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// Control indices into `Network::controls`.
    pub sequence: Vec<usize>,
    /// Nominal cost `J^e`.
    pub cost: f64,
}

impl Plan {
    pub fn first(&self) -> usize {
        self.sequence[0]
    }
}

/// Enumerative planner over `U^H` with prefix sharing: a prefix whose reach
/// leaves the safe cells prunes its whole subtree.
#[derive(Debug, Clone)]
pub struct Planner<'a> {
    net: &'a Network,
    reach: Reach<'a>,
    grid: &'a PartitionGrid,
    safe: &'a CellSet,
    terminal: &'a CellSet,
    cfg: MpcConfig,
}

struct Search {
    best: Option<Plan>,
    rejected_at: Vec<u64>,
}

impl<'a> Planner<'a> {
    pub fn new(
        net: &'a Network,
        grid: &'a PartitionGrid,
        safe: &'a CellSet,
        win: &'a WinningSet,
        cfg: MpcConfig,
    ) -> Result<Self, PlanError> {
        cfg.validate(net)?;
        Ok(Planner { net, reach: Reach::new(net)?, grid, safe, terminal: win.cells(), cfg })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn network(&self) -> &'a Network {
        self.net
    }

    /// Nominal demands `d^e[t], ..., d^e[t+H-1]`.
    pub fn nominal(&self, t: usize) -> Vec<Vec<f64>> {
        (0..self.cfg.horizon).map(|k| nominal_at(self.net, &self.cfg.nominal, t + k)).collect()
    }

    fn admissible_at(&self, depth: usize, boxes: &[ReachBox]) -> bool {
        let cells = if depth + 1 == self.cfg.horizon { self.terminal } else { self.safe };
        boxes.iter().all(|b| box_in_cellunion(b, self.grid, cells))
    }

    /// Nominal cost of a sequence if it satisfies every constraint.
    pub fn evaluate(&self, x: &[f64], t: usize, sequence: &[usize]) -> Result<Option<f64>, PlanError> {
        if !self.net.in_state_space(x) {
            return Err(PlanError::OutsideStateSpace);
        }
        let nominal = self.nominal(t);
        let mut boxes = vec![ReachBox::point(x)];
        let mut xe = x.to_vec();
        let mut cost = 0.0;
        for (depth, &ui) in sequence.iter().enumerate() {
            let u = &self.net.controls()[ui];
            boxes = self.reach.advance(&boxes, u)?;
            if !self.admissible_at(depth, &boxes) {
                return Ok(None);
            }
            xe = self.net.step(&xe, u, &nominal[depth]);
            cost += xe.iter().sum::<f64>();
        }
        Ok(Some(cost))
    }

    /// Optimal first control and plan at state `x`, time `t`.
    pub fn plan(&self, x: &[f64], t: usize) -> Result<Plan, PlanError> {
        if !self.net.in_state_space(x) {
            return Err(PlanError::OutsideStateSpace);
        }
        let nominal = self.nominal(t);
        let start = vec![ReachBox::point(x)];
        let m = self.net.controls().len();
        let h = self.cfg.horizon;
        let branches: Vec<Result<Search, ReachError>> = (0..m)
            .into_par_iter()
            .map(|u0| {
                let mut s = Search { best: None, rejected_at: vec![0; h] };
                let mut seq = vec![u0];
                self.descend(&start, x, 0.0, &nominal, &mut seq, &mut s)?;
                Ok(s)
            })
            .collect();

        let mut best: Option<Plan> = None;
        let mut rejected_at = vec![0; h];
        for s in branches {
            let s = s?;
            for (acc, r) in rejected_at.iter_mut().zip(&s.rejected_at) {
                *acc += r;
            }
            if let Some(p) = s.best {
                if best.as_ref().is_none_or(|b| p.cost < b.cost - self.cfg.tolerance) {
                    best = Some(p);
                }
            }
        }
        best.ok_or_else(|| {
            PlanError::Infeasible(Diagnosis {
                rejected_at,
                start_in_terminal: self.terminal.contains(self.grid.locate(x)),
            })
        })
    }

    // `seq` holds the prefix including the control applied at this depth.
    fn descend(
        &self,
        boxes: &[ReachBox],
        xe: &[f64],
        cost: f64,
        nominal: &[Vec<f64>],
        seq: &mut Vec<usize>,
        s: &mut Search,
    ) -> Result<(), ReachError> {
        let depth = seq.len() - 1;
        let u = &self.net.controls()[seq[depth]];
        let next = self.reach.advance(boxes, u)?;
        if !self.admissible_at(depth, &next) {
            s.rejected_at[depth] += 1;
            return Ok(());
        }
        let xn = self.net.step(xe, u, &nominal[depth]);
        let cost = cost + xn.iter().sum::<f64>();
        if depth + 1 == self.cfg.horizon {
            if s.best.as_ref().is_none_or(|b| cost < b.cost - self.cfg.tolerance) {
                s.best = Some(Plan { sequence: seq.clone(), cost });
            }
            return Ok(());
        }
        for ui in 0..self.net.controls().len() {
            seq.push(ui);
            self.descend(&next, &xn, cost, nominal, seq, s)?;
            seq.pop();
        }
        Ok(())
    }

    /// The previous plan's tail extended by one control, checked at `x`.
    /// Returns the first extension found feasible.
    pub fn shifted_witness(&self, x: &[f64], t: usize, previous: &Plan) -> Result<Option<Plan>, PlanError> {
        let mut seq: Vec<usize> = previous.sequence[1..].to_vec();
        seq.push(0);
        for ui in 0..self.net.controls().len() {
            *seq.last_mut().expect("non-empty") = ui;
            if let Some(cost) = self.evaluate(x, t, &seq)? {
                return Ok(Some(Plan { sequence: seq, cost }));
            }
        }
        Ok(None)
    }
}

/// What a controller applied at one step, and why.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Optimal,
    /// Driving toward the terminal set before the first feasible plan.
    Recovery,
    /// No feasible plan; a fallback control was applied.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub x: Vec<f64>,
    pub u: Vec<bool>,
    pub d: Vec<f64>,
    /// Nominal cost of the applied plan; `NaN` when none exists.
    pub cost: f64,
    pub robustness: f64,
    pub feasible: bool,
    pub mode: Mode,
    pub witness: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub final_state: Vec<f64>,
    pub final_robustness: f64,
}

impl Trace {
    /// States `x[0], ..., x[T]`.
    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(|r| r.x.as_slice()).chain(std::iter::once(self.final_state.as_slice()))
    }

    /// Infeasible steps after the first feasible one.
    pub fn infeasibility_events(&self) -> usize {
        self.rows.iter().skip_while(|r| !r.feasible).filter(|r| !r.feasible).count()
    }

    pub fn witness_failures(&self) -> usize {
        self.rows.iter().filter(|r| r.witness == Some(false)).count()
    }

    pub fn recovery_steps(&self) -> usize {
        self.rows.iter().filter(|r| r.mode == Mode::Recovery).count()
    }

    pub fn min_robustness(&self) -> f64 {
        self.rows.iter().map(|r| r.robustness).fold(self.final_robustness, f64::min)
    }

    /// Sum of vehicles over `x[1], ..., x[T]`.
    pub fn total_cost(&self) -> f64 {
        self.states().skip(1).map(|x| x.iter().sum::<f64>()).sum()
    }

    /// CSV with header `step,x_*,u_*,d_*,J,rho,feasible`. The final state
    /// gets a row with empty control, demand, cost and flag fields.
    pub fn to_csv(&self, link_ids: &[u32]) -> String {
        let mut out = String::from("step");
        for prefix in ["x", "u", "d"] {
            for id in link_ids {
                let _ = write!(out, ",{prefix}_{id}");
            }
        }
        out.push_str(",J,rho,feasible\n");
        let n = link_ids.len();
        for r in &self.rows {
            let _ = write!(out, "{}", r.step);
            for v in &r.x {
                let _ = write!(out, ",{v}");
            }
            for g in &r.u {
                let _ = write!(out, ",{}", u8::from(*g));
            }
            for v in &r.d {
                let _ = write!(out, ",{v}");
            }
            let cost = if r.cost.is_nan() { String::new() } else { r.cost.to_string() };
            let _ = writeln!(out, ",{cost},{},{}", r.robustness, u8::from(r.feasible));
        }
        let _ = write!(out, "{}", self.rows.len());
        for v in &self.final_state {
            let _ = write!(out, ",{v}");
        }
        out.push_str(&",".repeat(2 * n + 1));
        let _ = writeln!(out, ",{},", self.final_robustness);
        out
    }
}
