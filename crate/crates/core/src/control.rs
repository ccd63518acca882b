//! Online controllers, selectable by name, and the closed-loop simulator.

use thiserror::Error;

use crate::abstraction::CellId;
use crate::geometry::SafeSet;
use crate::mpc::{MpcConfig, Mode, Plan, PlanError, Planner, Trace, TraceRow};
use crate::network::Network;
use crate::pipeline::Synthesis;
use crate::sampler::{DemandSampler, UnknownStrategy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("unrecoverable initial state: cell {0} cannot be driven into the terminal set")]
    Unrecoverable(CellId),
    #[error("initial state outside the state space")]
    OutsideStateSpace,
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Unknown(#[from] UnknownStrategy),
}

/// The control chosen at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Index into `Network::controls`.
    pub control: usize,
    pub cost: f64,
    pub feasible: bool,
    pub mode: Mode,
    /// Whether the shifted previous plan was feasible, when one exists.
    pub witness: Option<bool>,
}

pub trait Controller {
    fn name(&self) -> &'static str;
    fn decide(&mut self, x: &[f64], t: usize) -> Result<Decision, ControlError>;
}

// Control of the attractor strategy, or any stored admissible control for
// cells already in the target.
fn guided_control(syn: &Synthesis, q: CellId) -> Option<usize> {
    if syn.win.contains(q) {
        return syn.win.admissible(q).first().map(|&u| u as usize);
    }
    syn.attractor.control(q).map(|u| u as usize)
}

/// Robust MPC with terminal constraint. Before its first feasible plan it
/// follows the attractor toward the terminal set.
pub struct MpcController<'a> {
    syn: &'a Synthesis,
    planner: Planner<'a>,
    previous: Option<Plan>,
    started: bool,
}

impl<'a> MpcController<'a> {
    pub fn new(syn: &'a Synthesis, cfg: &MpcConfig) -> Result<Self, ControlError> {
        let planner = Planner::new(&syn.net, &syn.grid, &syn.safe_cells, &syn.win, cfg.clone())?;
        Ok(MpcController { syn, planner, previous: None, started: false })
    }
}

impl Controller for MpcController<'_> {
    fn name(&self) -> &'static str {
        "mpc"
    }

    fn decide(&mut self, x: &[f64], t: usize) -> Result<Decision, ControlError> {
        let witness = match &self.previous {
            Some(prev) => Some(self.planner.shifted_witness(x, t, prev)?.is_some()),
            None => None,
        };
        match self.planner.plan(x, t) {
            Ok(plan) => {
                self.started = true;
                let d = Decision { control: plan.first(), cost: plan.cost, feasible: true, mode: Mode::Optimal, witness };
                self.previous = Some(plan);
                Ok(d)
            }
            Err(PlanError::Infeasible(_)) => {
                let q = self.syn.grid.locate(x);
                let guided = guided_control(self.syn, q);
                if !self.started {
                    let control = guided.ok_or(ControlError::Unrecoverable(q))?;
                    return Ok(Decision { control, cost: f64::NAN, feasible: false, mode: Mode::Recovery, witness });
                }
                // keep following the last plan while it lasts
                let tail = self.previous.take().filter(|p| p.sequence.len() > 1).map(|p| Plan {
                    sequence: p.sequence[1..].to_vec(),
                    cost: f64::NAN,
                });
                let control = match (&tail, guided) {
                    (Some(p), _) => p.first(),
                    (None, Some(u)) => u,
                    (None, None) => 0,
                };
                Ok(Decision { control, cost: f64::NAN, feasible: false, mode: Mode::Fallback, witness })
            }
            Err(e) => Err(e.into()),
        }
    }
}

fn nominal_total(net: &Network, x: &[f64], u: usize, d: &[f64]) -> f64 {
    net.step(x, &net.controls()[u], d).iter().sum()
}

/// One-step controller restricted to the stored admissible controls of the
/// current winning cell, picking the lowest nominal next-step total.
pub struct InvariantController<'a> {
    syn: &'a Synthesis,
    planner: Planner<'a>,
}

impl Controller for InvariantController<'_> {
    fn name(&self) -> &'static str {
        "invariant"
    }

    fn decide(&mut self, x: &[f64], t: usize) -> Result<Decision, ControlError> {
        let net = &self.syn.net;
        let q = self.syn.grid.locate(x);
        let d = &self.planner.nominal(t)[0];
        if !self.syn.win.contains(q) {
            let control = self.syn.attractor.control(q).ok_or(ControlError::Unrecoverable(q))? as usize;
            return Ok(Decision { control, cost: f64::NAN, feasible: false, mode: Mode::Recovery, witness: None });
        }
        let mut best: Option<(usize, f64)> = None;
        for &u in self.syn.win.admissible(q) {
            let cost = nominal_total(net, x, u as usize, d);
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((u as usize, cost));
            }
        }
        let (control, cost) = best.expect("winning cells have an admissible control");
        Ok(Decision { control, cost, feasible: true, mode: Mode::Optimal, witness: None })
    }
}

/// Unconstrained one-step minimizer of the nominal vehicle total; ignores
/// the safe set entirely.
pub struct GreedyController<'a> {
    net: &'a Network,
    planner: Planner<'a>,
}

impl Controller for GreedyController<'_> {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn decide(&mut self, x: &[f64], t: usize) -> Result<Decision, ControlError> {
        let d = &self.planner.nominal(t)[0];
        let mut best = (0, f64::INFINITY);
        for u in 0..self.net.controls().len() {
            let cost = nominal_total(self.net, x, u, d);
            if cost < best.1 {
                best = (u, cost);
            }
        }
        Ok(Decision { control: best.0, cost: best.1, feasible: true, mode: Mode::Optimal, witness: None })
    }
}

type ControllerFactory = for<'a> fn(&'a Synthesis, &MpcConfig) -> Result<Box<dyn Controller + 'a>, ControlError>;

fn mpc<'a>(syn: &'a Synthesis, cfg: &MpcConfig) -> Result<Box<dyn Controller + 'a>, ControlError> {
    Ok(Box::new(MpcController::new(syn, cfg)?))
}

fn invariant<'a>(syn: &'a Synthesis, cfg: &MpcConfig) -> Result<Box<dyn Controller + 'a>, ControlError> {
    let planner = Planner::new(&syn.net, &syn.grid, &syn.safe_cells, &syn.win, cfg.clone())?;
    Ok(Box::new(InvariantController { syn, planner }))
}

fn greedy<'a>(syn: &'a Synthesis, cfg: &MpcConfig) -> Result<Box<dyn Controller + 'a>, ControlError> {
    let planner = Planner::new(&syn.net, &syn.grid, &syn.safe_cells, &syn.win, cfg.clone())?;
    Ok(Box::new(GreedyController { net: &syn.net, planner }))
}

const CONTROLLERS: &[(&str, ControllerFactory)] = &[("mpc", mpc), ("invariant", invariant), ("greedy", greedy)];

pub fn controller_names() -> impl Iterator<Item = &'static str> {
    CONTROLLERS.iter().map(|(n, _)| *n)
}

pub fn make_controller<'a>(name: &str, syn: &'a Synthesis, cfg: &MpcConfig) -> Result<Box<dyn Controller + 'a>, ControlError> {
    let (_, factory) = CONTROLLERS.iter().find(|(n, _)| *n == name).ok_or_else(|| UnknownStrategy {
        kind: "controller",
        name: name.to_string(),
        known: controller_names().collect::<Vec<_>>().join(", "),
    })?;
    factory(syn, cfg)
}

/// Run `steps` steps from `x0`: decide, draw the demand, advance.
pub fn closed_loop(
    net: &Network,
    safe: &SafeSet,
    controller: &mut dyn Controller,
    sampler: &mut dyn DemandSampler,
    x0: &[f64],
    steps: usize,
) -> Result<Trace, ControlError> {
    if !net.in_state_space(x0) {
        return Err(ControlError::OutsideStateSpace);
    }
    let mut x = x0.to_vec();
    let mut rows = Vec::with_capacity(steps);
    for t in 0..steps {
        let dec = controller.decide(&x, t)?;
        let u = &net.controls()[dec.control];
        let d = sampler.sample(net, safe, &x, u);
        let next = net.step(&x, u, &d);
        rows.push(TraceRow {
            step: t,
            robustness: safe.robustness(&x),
            x: std::mem::replace(&mut x, next),
            u: u.bits().to_vec(),
            d,
            cost: dec.cost,
            feasible: dec.feasible,
            mode: dec.mode,
            witness: dec.witness,
        });
    }
    Ok(Trace { rows, final_robustness: safe.robustness(&x), final_state: x })
}
