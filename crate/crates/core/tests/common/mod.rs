//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's dynamics, reach or game code; only raw specs and
//! plain data cross the boundary.
#![allow(dead_code)]

pub mod lp;

use std::collections::BTreeSet;

use rand::Rng;
use safempc_core::abstraction::{CellId, CellSet, TransitionSystem};
use safempc_core::network::NetworkSpec;
use safempc_core::scenario::{NetworkRef, Resolved, Scenario};

pub fn resolved(name: &str) -> Resolved {
    let s = Scenario::bundled(name).unwrap_or_else(|| panic!("no bundled scenario {name}"));
    s.resolve().unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn spec_of(r: &Resolved) -> NetworkSpec {
    match &r.scenario.network {
        NetworkRef::Inline(spec) => spec.clone(),
        NetworkRef::Path(p) => panic!("unresolved network path {}", p.display()),
    }
}

/// Step evaluated straight from the raw spec: outflow is the minimum of
/// occupancy, saturation flow and each receiving link's scaled free space;
/// the successor is the balance clipped at capacity.
pub fn spec_step(spec: &NetworkSpec, x: &[f64], green: &[bool], d: &[f64]) -> Vec<f64> {
    let n = spec.links.len();
    let pos = |id: u32| spec.links.iter().position(|l| l.id == id).unwrap();
    let mut f = vec![0.0; n];
    for (l, link) in spec.links.iter().enumerate() {
        if !green[l] {
            continue;
        }
        let mut v = x[l].min(link.saturation);
        for t in &link.downstream {
            let k = pos(t.link);
            v = v.min(t.share / t.turn * (spec.links[k].capacity - x[k]));
        }
        f[l] = v;
    }
    let mut next = vec![0.0; n];
    for (l, link) in spec.links.iter().enumerate() {
        let mut arrivals = 0.0;
        for (i, up) in spec.links.iter().enumerate() {
            for t in &up.downstream {
                if t.link == link.id {
                    arrivals += t.turn * f[i];
                }
            }
        }
        next[l] = (x[l] - f[l] + arrivals + d[l]).min(link.capacity);
    }
    next
}

/// Breakpoints per link including 0 and the capacity, from raw thresholds.
pub fn axes(capacity: &[f64], interior: &[Vec<f64>]) -> Vec<Vec<f64>> {
    capacity
        .iter()
        .zip(interior)
        .map(|(&c, pts)| {
            let mut v: Vec<f64> = pts.iter().copied().filter(|p| *p > 0.0 && *p < c).collect();
            v.push(0.0);
            v.push(c);
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        })
        .collect()
}

/// Interval index by linear scan: interval 0 is `[b0, b1]`, interval `i`
/// is `(b_i, b_{i+1}]`.
pub fn scan_interval(axis: &[f64], v: f64) -> usize {
    (0..axis.len() - 1).find(|&i| v <= axis[i + 1]).unwrap_or(axis.len() - 2)
}

/// Mixed-radix id, link 0 least significant.
pub fn scan_cell(axes: &[Vec<f64>], x: &[f64]) -> CellId {
    let mut id = 0usize;
    let mut stride = 1usize;
    for (axis, v) in axes.iter().zip(x) {
        id += scan_interval(axis, *v) * stride;
        stride *= axis.len() - 1;
    }
    id as CellId
}

/// Ids of every cell whose set meets the closed box `[lo, hi]`.
pub fn scan_cells_meeting(axes: &[Vec<f64>], lo: &[f64], hi: &[f64]) -> Vec<CellId> {
    let per_link: Vec<Vec<usize>> = axes
        .iter()
        .enumerate()
        .map(|(l, axis)| {
            (0..axis.len() - 1)
                .filter(|&i| {
                    let above_floor = if i == 0 { hi[l] >= axis[0] } else { hi[l] > axis[i] };
                    above_floor && lo[l] <= axis[i + 1]
                })
                .collect()
        })
        .collect();
    let mut ids = vec![(0usize, 1usize)];
    for (l, choices) in per_link.iter().enumerate() {
        let width = axes[l].len() - 1;
        ids = ids
            .iter()
            .flat_map(|&(id, stride)| choices.iter().map(move |&i| (id + i * stride, stride * width)))
            .collect();
    }
    ids.into_iter().map(|(id, _)| id as CellId).collect()
}

pub fn scan_covered(axes: &[Vec<f64>], lo: &[f64], hi: &[f64], cells: &CellSet) -> bool {
    scan_cells_meeting(axes, lo, hi).into_iter().all(|q| cells.contains(q))
}

/// Successor lists as sets, read out of a transition system.
pub fn successor_table(ts: &TransitionSystem) -> Vec<Vec<BTreeSet<CellId>>> {
    (0..ts.cell_count())
        .map(|q| (0..ts.control_count()).map(|u| ts.successors(q as CellId, u).iter().copied().collect()).collect())
        .collect()
}

/// Greatest fixpoint by full rescans: drop every cell none of whose
/// controls keeps all successors inside, until nothing changes.
pub fn naive_safety(succ: &[Vec<BTreeSet<CellId>>], safe: &BTreeSet<CellId>) -> (BTreeSet<CellId>, Vec<Vec<u32>>) {
    let mut set = safe.clone();
    loop {
        let keep: BTreeSet<CellId> = set
            .iter()
            .copied()
            .filter(|&q| succ[q as usize].iter().any(|s| s.is_subset(&set)))
            .collect();
        if keep == set {
            break;
        }
        set = keep;
    }
    let admissible = (0..succ.len())
        .map(|q| {
            if !set.contains(&(q as CellId)) {
                return Vec::new();
            }
            (0..succ[q].len() as u32).filter(|&u| succ[q][u as usize].is_subset(&set)).collect()
        })
        .collect();
    (set, admissible)
}

/// Least fixpoint by layers: rank `k + 1` for cells with a control whose
/// successors all have rank at most `k`; the lowest such control is kept.
pub fn naive_attractor(succ: &[Vec<BTreeSet<CellId>>], target: &BTreeSet<CellId>) -> (Vec<Option<u32>>, Vec<Option<u32>>) {
    let n = succ.len();
    let mut rank = vec![None; n];
    let mut control = vec![None; n];
    for &q in target {
        rank[q as usize] = Some(0);
    }
    let mut reached: BTreeSet<CellId> = target.clone();
    let mut k = 0;
    loop {
        k += 1;
        let mut layer = Vec::new();
        for q in 0..n {
            if rank[q].is_some() {
                continue;
            }
            if let Some(u) = (0..succ[q].len()).find(|&u| succ[q][u].is_subset(&reached)) {
                layer.push((q, u as u32));
            }
        }
        if layer.is_empty() {
            break;
        }
        for (q, u) in layer {
            rank[q] = Some(k);
            control[q] = Some(u);
            reached.insert(q as CellId);
        }
    }
    (rank, control)
}

/// Random transition system with non-empty successor lists.
pub fn random_ts(rng: &mut impl Rng, cells: usize, controls: usize, max_succ: usize) -> (TransitionSystem, BTreeSet<CellId>) {
    let succ: Vec<Vec<Vec<CellId>>> = (0..cells)
        .map(|_| {
            (0..controls)
                .map(|_| {
                    let k = rng.gen_range(1..=max_succ);
                    (0..k).map(|_| rng.gen_range(0..cells as CellId)).collect()
                })
                .collect()
        })
        .collect();
    let safe: BTreeSet<CellId> = (0..cells as CellId).filter(|_| rng.gen_bool(0.7)).collect();
    let ts = TransitionSystem::from_parts(succ, CellSet::from_ids(cells, safe.iter().copied()));
    (ts, safe)
}

pub fn uniform_in(rng: &mut impl Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter().zip(hi).map(|(&a, &b)| if b > a { rng.gen_range(a..=b) } else { a }).collect()
}

/// Point of `[lo, hi]`, with each coordinate snapped to an end half the time.
pub fn edgy_in(rng: &mut impl Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(&a, &b)| match rng.gen_range(0..4) {
            0 => a,
            1 => b,
            _ if b > a => rng.gen_range(a..=b),
            _ => a,
        })
        .collect()
}

/// Random acyclic network that passes the flow bound check: links run
/// between numbered junctions in increasing order, capacities are sized
/// after the turns are drawn.
pub fn random_network_spec(rng: &mut impl Rng, max_links: usize) -> NetworkSpec {
    use safempc_core::network::{DemandBox, IntersectionSpec, LinkSpec, TurnSpec};

    let junctions = rng.gen_range(2..=4usize);
    let n = rng.gen_range(2..=max_links);
    let mut ends: Vec<(Option<usize>, usize)> = (0..n)
        .map(|_| {
            let head = rng.gen_range(1..junctions);
            let tail = if rng.gen_bool(0.6) { Some(rng.gen_range(0..head)) } else { None };
            (tail, head)
        })
        .collect();
    ends.sort();
    let sat: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..10.0f64).round()).collect();
    let mut down: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for l in 0..n {
        let receivers: Vec<usize> = (0..n).filter(|&k| k != l && ends[k].0 == Some(ends[l].1)).collect();
        let mut left = 1.0;
        for k in receivers {
            if rng.gen_bool(0.7) && left > 0.05 {
                let beta = (rng.gen_range(0.05..=left) * 20.0f64).round().max(1.0) / 20.0;
                let beta = beta.min(left);
                left -= beta;
                down[l].push((k, beta));
            }
        }
    }
    let feeders: Vec<usize> = (0..n).map(|k| down.iter().filter(|d| d.iter().any(|t| t.0 == k)).count()).collect();
    let mut share = vec![vec![0.0; n]; n];
    let mut cap: Vec<f64> = sat.iter().map(|c| c + rng.gen_range(1.0..20.0f64).round()).collect();
    for (i, turns) in down.iter().enumerate() {
        for &(k, beta) in turns {
            let alpha = 1.0 / feeders[k] as f64 * if rng.gen_bool(0.5) { 1.0 } else { 0.5 };
            share[i][k] = alpha;
            cap[k] = cap[k].max((sat[k] + sat[i] * beta / alpha).ceil() + rng.gen_range(0.0..5.0f64).round());
        }
    }
    let links = (0..n)
        .map(|l| LinkSpec {
            id: l as u32 + 1,
            capacity: cap[l],
            saturation: sat[l],
            head: format!("J{}", ends[l].1),
            tail: ends[l].0.map(|t| format!("J{t}")),
            downstream: down[l]
                .iter()
                .map(|&(k, beta)| TurnSpec { link: k as u32 + 1, turn: beta, share: share[l][k] })
                .collect(),
        })
        .collect();
    let upper: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.0..4.0f64).round() } else { 0.0 }).collect();
    NetworkSpec {
        intersections: (0..junctions).map(|j| IntersectionSpec { id: format!("J{j}"), constraints: vec![] }).collect(),
        links,
        demand: vec![DemandBox { lower: vec![0.0; n], upper }],
        tolerance: None,
    }
}
