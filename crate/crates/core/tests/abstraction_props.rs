mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safempc_core::abstraction::{CellId, PartitionGrid};
use safempc_core::pipeline::Synthesis;
use safempc_core::scenario::Resolved;

use common::{axes, edgy_in, resolved, scan_cell, uniform_in};

fn oracle_axes(r: &Resolved) -> Vec<Vec<f64>> {
    let thresholds = r.safe.thresholds();
    let interior: Vec<Vec<f64>> = thresholds.iter().zip(&r.extra).map(|(t, e)| t.iter().chain(e).copied().collect()).collect();
    axes(r.net.capacities(), &interior)
}

fn grid_of(r: &Resolved) -> PartitionGrid {
    PartitionGrid::build(&r.net, &r.safe, &r.extra).unwrap()
}

/// Points near breakpoints are where off-by-one interval errors live.
fn probe(rng: &mut impl Rng, axes: &[Vec<f64>]) -> Vec<f64> {
    axes.iter()
        .map(|axis| {
            let p = axis[rng.gen_range(0..axis.len())];
            let cap = *axis.last().unwrap();
            match rng.gen_range(0..4) {
                0 => p,
                1 => (p + 1e-9).min(cap),
                2 => (p - 1e-9).max(0.0),
                _ => rng.gen_range(0.0..=cap),
            }
        })
        .collect()
}

#[test]
fn breakpoints_are_thresholds_plus_extras() {
    for name in ["desk2", "arterial4", "paper_fig2"] {
        let r = resolved(name);
        let grid = grid_of(&r);
        for (l, axis) in oracle_axes(&r).iter().enumerate() {
            assert_eq!(grid.breakpoints(l), axis.as_slice(), "{name} link {l}");
        }
    }
}

#[test]
fn paper_fig2_grid_size() {
    let r = resolved("paper_fig2");
    let grid = grid_of(&r);
    let intervals: Vec<usize> = (0..r.net.len()).map(|l| grid.intervals(l)).collect();
    assert_eq!(intervals, vec![3, 2, 2, 3, 2, 2, 3, 3, 3]);
    assert_eq!(grid.cell_count(), 3888);
}

#[test]
fn desk2_four_cell_example() {
    let r = resolved("desk2");
    let grid = PartitionGrid::from_interior(r.net.capacities(), vec![vec![5.0], vec![5.0]]).unwrap();
    assert_eq!(grid.cell_count(), 4);
    // x = (6, 2): link 1 in (5, 10], link 2 in [0, 5]
    assert_eq!(grid.locate(&[6.0, 2.0]), 1);
    assert_eq!(grid.digits(1), vec![1, 0]);
    assert_eq!(grid.locate(&[5.0, 5.0]), 0);
}

#[test]
fn desk2_single_box_labels() {
    use safempc_core::geometry::{HyperRect, SafeSet};
    let r = resolved("desk2");
    let grid = PartitionGrid::from_interior(r.net.capacities(), vec![vec![5.0], vec![5.0]]).unwrap();
    let s = SafeSet::new(r.net.capacities().to_vec(), vec![HyperRect::closed(vec![0.0, 0.0], vec![5.0, 10.0])]).unwrap();
    let safe = grid.label_cells(&r.net, &s).unwrap();
    assert_eq!(safe.iter().collect::<Vec<_>>(), vec![0, 2]);
}

#[test]
fn unaligned_grid_is_rejected() {
    let r = resolved("desk2");
    let grid = PartitionGrid::from_interior(r.net.capacities(), vec![vec![5.0], vec![5.0]]).unwrap();
    assert!(grid.label_cells(&r.net, &r.safe).is_err());
}

/// Every transition of the 4-cell DESK-2 grid is backed by simulation and
/// every simulated landing cell is a transition.
#[test]
fn desk2_table_against_simulation() {
    let r = resolved("desk2");
    let grid = PartitionGrid::from_interior(r.net.capacities(), vec![vec![5.0], vec![5.0]]).unwrap();
    let safe = grid.label_cells(&r.net, &safe_everything(&r)).unwrap();
    let reach = safempc_core::reach::Reach::new(&r.net).unwrap();
    let ts = safempc_core::abstraction::TransitionSystem::build(&reach, &grid, safe);
    let ax = axes(r.net.capacities(), &[vec![5.0], vec![5.0]]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for q in 0..4 as CellId {
        let cell = grid.cell_closure(q);
        for (ui, u) in r.net.controls().iter().enumerate() {
            for _ in 0..1000 {
                let x = edgy_in(&mut rng, &cell.lower, &cell.upper);
                if scan_cell(&ax, &x) != q {
                    continue;
                }
                let b = &r.net.demand()[0];
                let d = edgy_in(&mut rng, &b.lower, &b.upper);
                let to = scan_cell(&ax, &r.net.step(&x, u, &d));
                assert!(ts.successors(q, ui).contains(&to), "q{q} u{ui} -> {to}");
            }
        }
    }
}

fn safe_everything(r: &Resolved) -> safempc_core::geometry::SafeSet {
    safempc_core::geometry::SafeSet::everything(r.net.capacities().to_vec())
}

#[test]
fn safe_cell_union_equals_the_safe_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in ["desk2", "arterial4", "paper_fig2"] {
        let r = resolved(name);
        let grid = grid_of(&r);
        let safe = grid.label_cells(&r.net, &r.safe).unwrap();
        let ax = oracle_axes(&r);
        for _ in 0..20_000 {
            let x = probe(&mut rng, &ax);
            let by_cells = safe.contains(scan_cell(&ax, &x));
            assert_eq!(by_cells, r.scenario.safety.eval(&r.net, &x), "{name} at {x:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn locate_matches_linear_scan(seed in any::<u64>(), which in 0usize..3) {
        let r = resolved(["desk2", "arterial4", "paper_fig2"][which]);
        let grid = grid_of(&r);
        let ax = oracle_axes(&r);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = probe(&mut rng, &ax);
        prop_assert_eq!(grid.locate(&x), scan_cell(&ax, &x));
    }

    /// Each state lies in exactly one cell set, the one `locate` names.
    #[test]
    fn cells_partition_the_state_space(seed in any::<u64>(), which in 0usize..2) {
        let r = resolved(["desk2", "arterial4"][which]);
        let grid = grid_of(&r);
        let ax = oracle_axes(&r);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = probe(&mut rng, &ax);
        let owners: Vec<CellId> = (0..grid.cell_count() as CellId).filter(|&q| grid.cell_rect(q).contains(&x)).collect();
        prop_assert_eq!(owners, vec![grid.locate(&x)]);
    }

    #[test]
    fn digits_round_trip(seed in any::<u64>()) {
        let r = resolved("paper_fig2");
        let grid = grid_of(&r);
        let q = (seed % grid.cell_count() as u64) as CellId;
        prop_assert_eq!(grid.cell_of_digits(&grid.digits(q)), q);
    }
}

/// One-step simulation stays inside the abstract successors.
#[test]
fn simulation_relation_on_small_scenarios() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for name in ["desk2", "arterial4"] {
        let r = resolved(name);
        let syn = Synthesis::run(r.net.clone(), r.safe.clone(), &r.extra).unwrap();
        let ts = syn.ts.as_ref().unwrap();
        let ax = oracle_axes(&r);
        for _ in 0..20_000 {
            let x = probe(&mut rng, &ax);
            let ui = rng.gen_range(0..r.net.controls().len());
            let b = &r.net.demand()[rng.gen_range(0..r.net.demand().len())];
            let d = uniform_in(&mut rng, &b.lower, &b.upper);
            let next = r.net.step(&x, &r.net.controls()[ui], &d);
            let from = scan_cell(&ax, &x);
            assert!(ts.successors(from, ui).contains(&scan_cell(&ax, &next)), "{name}: {x:?} u{ui} {d:?}");
        }
    }
}
