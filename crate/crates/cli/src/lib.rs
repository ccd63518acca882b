//! Command implementations behind the `safempc` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use safempc_core::abstraction::CellSet;
use safempc_core::control::{closed_loop, make_controller, ControlError};
use safempc_core::games::{Attractor, WinningSet};
use safempc_core::milp::{build_mld, check_big_m, emit_lp};
use safempc_core::pipeline::{Counts, Synthesis, SynthesisError, Timings};
use safempc_core::sampler::make_sampler;
use safempc_core::scenario::{Resolved, Scenario, ScenarioError};

#[derive(Debug, Parser)]
#[command(name = "safempc", version, about = "Safe MPC for signalized traffic networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the abstraction, solve the safety game, cache the result.
    Synthesize(Common),
    /// Run the closed loop and write the trace.
    Run(RunArgs),
    /// Write the mixed-integer encoding as an LP file.
    EmitMilp(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory (default: the scenario's, else `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the MPC horizon.
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Demand sampler seed (default: the scenario's)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Closed-loop steps (default: the scenario's)
    #[arg(long)]
    pub steps: Option<usize>,
    /// Controller name (mpc, invariant, greedy).
    #[arg(long)]
    pub controller: Option<String>,
    /// Demand sampler name (uniform, corner, greedy-worst).
    #[arg(long)]
    pub demand_sampler: Option<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error("empty winning set: no terminal set exists on this grid; refine the partition (add breakpoints)")]
    EmptyWinningSet,
    #[error("closed loop failed: {0}")]
    Control(ControlError),
    #[error("run finished with {0} infeasible steps after a feasible start")]
    InfeasibleRun(usize),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt cache {path}: {source}")]
    Cache { path: PathBuf, source: serde_json::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(_) => 2,
            CliError::EmptyWinningSet => 3,
            CliError::InfeasibleRun(_) | CliError::Control(ControlError::Unrecoverable(_)) => 4,
            CliError::Control(ControlError::Unknown(_) | ControlError::OutsideStateSpace) => 2,
            _ => 1,
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn load(common: &Common) -> Result<Resolved, CliError> {
    let mut s = Scenario::load(&common.scenario)?;
    if let Some(h) = common.horizon {
        s.mpc.horizon = h;
    }
    Ok(s.resolve()?)
}

fn out_dir(common: &Common, r: &Resolved) -> PathBuf {
    common.out.clone().or_else(|| r.scenario.output.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

/// Everything needed to rebuild the online controller without redoing the
/// abstraction.
#[derive(Debug, Serialize, Deserialize)]
struct Cache {
    /// Network, safety expression, breakpoints and demand override.
    key: serde_json::Value,
    counts: Counts,
    timings: Timings,
    /// `(cell, admissible controls)`.
    winning: Vec<(u32, Vec<u32>)>,
    /// `(cell, rank, control)`.
    attractor: Vec<(u32, u32, Option<u32>)>,
}

fn cache_key(r: &Resolved) -> serde_json::Value {
    let s = &r.scenario;
    serde_json::json!({
        "network": s.network,
        "safety": s.safety,
        "breakpoints": s.breakpoints,
        "demand": s.demand,
    })
}

fn cache_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}_synthesis.json"))
}

fn to_cache(r: &Resolved, syn: &Synthesis) -> Cache {
    let cells = syn.grid.cell_count() as u32;
    Cache {
        key: cache_key(r),
        counts: syn.counts(),
        timings: syn.timings,
        winning: syn.win.cells().iter().map(|q| (q, syn.win.admissible(q).to_vec())).collect(),
        attractor: (0..cells)
            .filter_map(|q| syn.attractor.rank(q).map(|k| (q, k, syn.attractor.control(q))))
            .collect(),
    }
}

fn from_cache(r: &Resolved, c: Cache) -> Result<Synthesis, CliError> {
    let cells = c.counts.cells;
    let mut win_cells = CellSet::empty(cells);
    let mut admissible = vec![Vec::new(); cells];
    for (q, us) in c.winning {
        win_cells.insert(q);
        admissible[q as usize] = us;
    }
    let mut rank = vec![None; cells];
    let mut control = vec![None; cells];
    for (q, k, u) in c.attractor {
        rank[q as usize] = Some(k);
        control[q as usize] = u;
    }
    Ok(Synthesis::assemble(
        r.net.clone(),
        r.safe.clone(),
        &r.extra,
        WinningSet::from_parts(win_cells, admissible),
        Attractor::from_parts(rank, control),
    )?)
}

fn summary_text(r: &Resolved, syn: &Synthesis) -> String {
    let c = syn.counts();
    let t = syn.timings;
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", r.scenario.name);
    let _ = writeln!(s, "links: {}", r.net.len());
    let _ = writeln!(s, "controls: {}", r.net.controls().len());
    let _ = writeln!(s, "safe boxes: {}", r.safe.boxes().len());
    let _ = writeln!(s, "cells |Q|: {}", c.cells);
    let _ = writeln!(s, "safe cells |Q^S|: {}", c.safe);
    let _ = writeln!(s, "winning cells |Q^I|: {}", c.winning);
    let _ = writeln!(s, "attractor cells: {}", c.attractor);
    let _ = writeln!(s, "transitions: {}", c.transitions);
    let _ = writeln!(s, "grid_ms: {:.3}", t.grid_ms);
    let _ = writeln!(s, "transitions_ms: {:.3}", t.transitions_ms);
    let _ = writeln!(s, "game_ms: {:.3}", t.game_ms);
    let _ = writeln!(s, "attractor_ms: {:.3}", t.attractor_ms);
    s
}

/// Paths written by a command.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

pub fn cmd_synthesize(common: &Common) -> Result<Artifacts, CliError> {
    let r = load(common)?;
    let dir = out_dir(common, &r);
    let name = &r.scenario.name;
    let syn = r.synthesize()?;
    let ts = syn.ts.as_ref().expect("fresh synthesis keeps transitions");

    let summary = summary_text(&r, &syn);
    let files = vec![
        (dir.join(format!("{name}_summary.txt")), summary.clone()),
        (dir.join(format!("{name}_winning.txt")), syn.win.export_table()),
        (dir.join(format!("{name}_edges.txt")), ts.export_edges()),
        (cache_path(&dir, name), serde_json::to_string(&to_cache(&r, &syn)).expect("cache serializes")),
    ];
    for (p, text) in &files {
        write(p, text)?;
    }
    if syn.win.is_empty() {
        return Err(CliError::EmptyWinningSet);
    }
    Ok(Artifacts { files: files.into_iter().map(|(p, _)| p).collect(), summary })
}

fn synthesis_for_run(r: &Resolved, dir: &Path) -> Result<(Synthesis, bool), CliError> {
    let path = cache_path(dir, &r.scenario.name);
    if let Ok(text) = fs::read_to_string(&path) {
        let cache: Cache = serde_json::from_str(&text).map_err(|source| CliError::Cache { path: path.clone(), source })?;
        if cache.key == cache_key(r) {
            return Ok((from_cache(r, cache)?, true));
        }
    }
    Ok((r.synthesize()?, false))
}

pub fn cmd_run(args: &RunArgs) -> Result<Artifacts, CliError> {
    let mut r = load(&args.common)?;
    if let Some(c) = &args.controller {
        r.scenario.controller = c.clone();
    }
    if let Some(s) = &args.demand_sampler {
        r.scenario.demand_sampler = s.clone();
    }
    let seed = args.seed.unwrap_or(r.scenario.seed);
    let steps = args.steps.unwrap_or(r.scenario.steps);
    let dir = out_dir(&args.common, &r);
    let name = r.scenario.name.clone();

    let (syn, cached) = synthesis_for_run(&r, &dir)?;
    if syn.win.is_empty() && r.scenario.controller != "greedy" {
        return Err(CliError::EmptyWinningSet);
    }
    let mut controller = make_controller(&r.scenario.controller, &syn, &r.scenario.mpc).map_err(CliError::Control)?;
    let mut sampler = make_sampler(&r.scenario.demand_sampler, seed).map_err(|e| CliError::Control(e.into()))?;
    let trace = closed_loop(&syn.net, &syn.safe, controller.as_mut(), sampler.as_mut(), &r.scenario.initial_state, steps)
        .map_err(CliError::Control)?;

    let all_safe = trace.states().all(|x| syn.safe.contains(x));
    let infeasible = trace.infeasibility_events();
    let mut summary = String::new();
    let _ = writeln!(summary, "scenario: {name}");
    let _ = writeln!(summary, "controller: {}", controller.name());
    let _ = writeln!(summary, "demand sampler: {}", r.scenario.demand_sampler);
    let _ = writeln!(summary, "seed: {seed}");
    let _ = writeln!(summary, "steps: {steps}");
    let _ = writeln!(summary, "horizon: {}", r.scenario.mpc.horizon);
    let _ = writeln!(summary, "synthesis: {}", if cached { "cached" } else { "recomputed" });
    let _ = writeln!(summary, "min robustness: {}", trace.min_robustness());
    let _ = writeln!(summary, "total cost: {}", trace.total_cost());
    let _ = writeln!(summary, "infeasibility events: {infeasible}");
    let _ = writeln!(summary, "shifted-plan witness failures: {}", trace.witness_failures());
    let _ = writeln!(summary, "recovery steps: {}", trace.recovery_steps());
    let _ = writeln!(summary, "all states safe: {all_safe}");

    let csv_path = dir.join(format!("{name}_trace.csv"));
    let summary_path = dir.join(format!("{name}_run_summary.txt"));
    write(&csv_path, &trace.to_csv(syn.net.link_ids()))?;
    write(&summary_path, &summary)?;
    if infeasible > 0 {
        return Err(CliError::InfeasibleRun(infeasible));
    }
    Ok(Artifacts { files: vec![csv_path, summary_path], summary })
}

pub fn cmd_emit_milp(common: &Common) -> Result<Artifacts, CliError> {
    let r = load(common)?;
    let dir = out_dir(common, &r);
    let h = r.scenario.mpc.horizon;
    let name = &r.scenario.name;
    let mut model = build_mld(&r.net, name, h);
    model.fix_initial_state(&r.scenario.initial_state);
    let mut summary = String::new();
    if let [only] = r.safe.boxes() {
        model.restrict_to_box(1..=h, only, "safe");
        summary.push_str("safe set: single box, encoded\n");
    } else {
        let _ = writeln!(summary, "safe set: {} boxes, not encoded (single box only)", r.safe.boxes().len());
    }
    let bad: Vec<String> = check_big_m(&model, &r.net).into_iter().filter(|c| !c.ok()).map(|c| c.what).collect();
    let _ = writeln!(summary, "variables: {}", model.vars.len());
    let _ = writeln!(summary, "binaries: {}", model.binary_count());
    let _ = writeln!(summary, "rows: {}", model.rows.len());
    let _ = writeln!(summary, "M: {}", model.big_m);
    let _ = writeln!(summary, "M': {}", model.big_m_clamp);
    let _ = writeln!(summary, "big-M failures: {}", bad.len());
    let path = dir.join(format!("{name}_H{h}.lp"));
    write(&path, &emit_lp(&model))?;
    Ok(Artifacts { files: vec![path], summary })
}

/// Dispatch a parsed command line.
pub fn run(cli: &Cli) -> Result<Artifacts, CliError> {
    match &cli.command {
        Command::Synthesize(c) => cmd_synthesize(c),
        Command::Run(a) => cmd_run(a),
        Command::EmitMilp(c) => cmd_emit_milp(c),
    }
}
