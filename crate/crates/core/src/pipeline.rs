//! Offline synthesis: grid, labels, transitions, safety game, attractor.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{AbstractionError, CellSet, PartitionGrid, TransitionSystem};
use crate::games::{reachability_game, safety_game, winning_boxes, Attractor, GameError, WinningSet};
use crate::geometry::SafeSet;
use crate::network::Network;
use crate::reach::{Reach, ReachError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Wall-clock milliseconds per phase.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub grid_ms: f64,
    pub transitions_ms: f64,
    pub game_ms: f64,
    pub attractor_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub net: Network,
    pub safe: SafeSet,
    pub grid: PartitionGrid,
    pub safe_cells: CellSet,
    /// Absent when assembled from a stored winning set.
    pub ts: Option<TransitionSystem>,
    pub win: WinningSet,
    /// Attractor of the winning cells over the whole grid.
    pub attractor: Attractor,
    pub timings: Timings,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

impl Synthesis {
    /// `extra` holds additional interior breakpoints per link.
    pub fn run(net: Network, safe: SafeSet, extra: &[Vec<f64>]) -> Result<Self, SynthesisError> {
        let reach = Reach::new(&net)?;
        let t = Instant::now();
        let grid = PartitionGrid::build(&net, &safe, extra)?;
        let safe_cells = grid.label_cells(&net, &safe)?;
        let grid_ms = ms(t);

        let t = Instant::now();
        let ts = TransitionSystem::build(&reach, &grid, safe_cells.clone());
        let transitions_ms = ms(t);

        let t = Instant::now();
        let win = safety_game(&ts, &safe_cells);
        let game_ms = ms(t);

        let t = Instant::now();
        let attractor = reachability_game(&ts, win.cells());
        let attractor_ms = ms(t);

        Ok(Synthesis {
            net,
            safe,
            grid,
            safe_cells,
            ts: Some(ts),
            win,
            attractor,
            timings: Timings { grid_ms, transitions_ms, game_ms, attractor_ms },
        })
    }

    /// Rebuild the online part from a stored winning set and attractor.
    pub fn assemble(
        net: Network,
        safe: SafeSet,
        extra: &[Vec<f64>],
        win: WinningSet,
        attractor: Attractor,
    ) -> Result<Self, SynthesisError> {
        Reach::new(&net)?;
        let grid = PartitionGrid::build(&net, &safe, extra)?;
        let safe_cells = grid.label_cells(&net, &safe)?;
        Ok(Synthesis { net, safe, grid, safe_cells, ts: None, win, attractor, timings: Timings::default() })
    }

    /// The terminal set as a box union.
    pub fn terminal(&self) -> Result<SafeSet, GameError> {
        winning_boxes(&self.win, &self.grid, self.net.capacities())
    }

    pub fn counts(&self) -> Counts {
        Counts {
            cells: self.grid.cell_count(),
            safe: self.safe_cells.len(),
            winning: self.win.len(),
            attractor: self.attractor.len(),
            transitions: self.ts.as_ref().map_or(0, TransitionSystem::transition_count),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub cells: usize,
    pub safe: usize,
    pub winning: usize,
    pub attractor: usize,
    pub transitions: usize,
}
