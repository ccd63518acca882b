//! Mixed logical dynamical encoding of the network over a horizon, emitted
//! as CPLEX-style LP text, with a substitution checker.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::HyperRect;
use crate::network::{Network, Sense};

/// Which group of rows a constraint belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    /// `z_l = min{x_l, c_l, space of each downstream link}`.
    Min,
    /// `f_l = u_l z_l`.
    Flow,
    /// `z'_l` as a linear balance.
    Balance,
    /// `x_l' = min{z'_l, cap_l}`.
    Clamp,
    Signal,
    Region,
    Initial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    State,
    Control,
    Demand,
    Min,
    Flow,
    Balance,
    Selector,
    ClampSelector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Var {
    pub name: String,
    pub role: Role,
    pub link: usize,
    pub step: usize,
    pub binary: bool,
    pub lower: f64,
    /// `f64::INFINITY` for unbounded.
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub name: String,
    pub block: Block,
    pub step: usize,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn lhs(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, a)| a * values[v]).sum()
    }

    /// Amount by which the row is violated (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.lhs(values);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// Selector binaries of one min block, in candidate order: own occupancy,
/// saturation flow, then each downstream link.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinBlock {
    pub selectors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MldModel {
    pub name: String,
    pub horizon: usize,
    pub vars: Vec<Var>,
    pub rows: Vec<Row>,
    pub objective: Vec<(usize, f64)>,
    /// Big-M of the min blocks.
    pub big_m: f64,
    /// Big-M of the clamp blocks.
    pub big_m_clamp: f64,
    /// `x[τ][l]` for `τ = 0..=H`; the rest for `τ = 0..H`.
    pub x: Vec<Vec<usize>>,
    pub u: Vec<Vec<usize>>,
    pub d: Vec<Vec<usize>>,
    pub z: Vec<Vec<usize>>,
    pub f: Vec<Vec<usize>>,
    pub zp: Vec<Vec<usize>>,
    pub min_blocks: Vec<Vec<MinBlock>>,
    pub clamp: Vec<Vec<usize>>,
}

struct Builder {
    vars: Vec<Var>,
    rows: Vec<Row>,
}

impl Builder {
    fn var(&mut self, name: String, role: Role, link: usize, step: usize, lower: f64, upper: f64) -> usize {
        self.vars.push(Var { name, role, link, step, binary: false, lower, upper });
        self.vars.len() - 1
    }

    fn binary(&mut self, name: String, role: Role, link: usize, step: usize) -> usize {
        self.vars.push(Var { name, role, link, step, binary: true, lower: 0.0, upper: 1.0 });
        self.vars.len() - 1
    }

    fn row(&mut self, name: String, block: Block, step: usize, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.rows.push(Row { name, block, step, terms, sense, rhs });
    }
}

/// Big-M for the min blocks: no candidate exceeds it on the state space.
pub fn min_block_big_m(net: &Network) -> f64 {
    (0..net.len())
        .flat_map(|l| {
            let own = net.capacity(l).max(net.saturation(l));
            net.downstream(l)
                .iter()
                .map(|k| k.space_factor() * net.capacity(k.link))
                .chain(std::iter::once(own))
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// Largest possible inflow plus demand on a link.
fn max_arrivals(net: &Network, l: usize, demand_upper: &[f64]) -> f64 {
    net.upstream(l).iter().map(|t| t.turn * net.saturation(t.link)).sum::<f64>() + demand_upper[l]
}

/// Big-M for the clamp blocks.
pub fn clamp_big_m(net: &Network) -> f64 {
    let hull = net.demand_hull();
    (0..net.len())
        .map(|l| net.capacity(l).max(max_arrivals(net, l, &hull.upper)))
        .fold(0.0, f64::max)
}

/// Encode `H` steps of the dynamics. With several demand boxes the demand
/// variables range over their bounding box.
pub fn build_mld(net: &Network, name: &str, horizon: usize) -> MldModel {
    let n = net.len();
    let id = |l: usize| net.link_id(l);
    let hull = net.demand_hull();
    let big_m = min_block_big_m(net);
    let big_m_clamp = clamp_big_m(net);
    let mut b = Builder { vars: Vec::new(), rows: Vec::new() };

    let x: Vec<Vec<usize>> = (0..=horizon)
        .map(|t| (0..n).map(|l| b.var(format!("x_{}_{t}", id(l)), Role::State, l, t, 0.0, net.capacity(l))).collect())
        .collect();
    let mut u = Vec::with_capacity(horizon);
    let mut d = Vec::with_capacity(horizon);
    let mut z = Vec::with_capacity(horizon);
    let mut f = Vec::with_capacity(horizon);
    let mut zp = Vec::with_capacity(horizon);
    let mut min_blocks = Vec::with_capacity(horizon);
    let mut clamp = Vec::with_capacity(horizon);

    for t in 0..horizon {
        let ut: Vec<usize> = (0..n).map(|l| b.binary(format!("u_{}_{t}", id(l)), Role::Control, l, t)).collect();
        let dt: Vec<usize> = (0..n)
            .map(|l| b.var(format!("d_{}_{t}", id(l)), Role::Demand, l, t, hull.lower[l], hull.upper[l]))
            .collect();
        let zt: Vec<usize> = (0..n).map(|l| b.var(format!("z_{}_{t}", id(l)), Role::Min, l, t, 0.0, f64::INFINITY)).collect();
        let ft: Vec<usize> = (0..n).map(|l| b.var(format!("f_{}_{t}", id(l)), Role::Flow, l, t, 0.0, f64::INFINITY)).collect();
        let zpt: Vec<usize> =
            (0..n).map(|l| b.var(format!("zp_{}_{t}", id(l)), Role::Balance, l, t, 0.0, f64::INFINITY)).collect();

        let mut blocks = Vec::with_capacity(n);
        for l in 0..n {
            let c = net.saturation(l);
            let (zl, xl) = (zt[l], x[t][l]);
            let sx = b.binary(format!("dz_{}_x_{t}", id(l)), Role::Selector, l, t);
            let sc = b.binary(format!("dz_{}_c_{t}", id(l)), Role::Selector, l, t);
            let mut selectors = vec![sx, sc];
            let tag = format!("{}_{t}", id(l));
            b.row(format!("min_x_le_{tag}"), Block::Min, t, vec![(zl, 1.0), (xl, -1.0)], Sense::Le, 0.0);
            b.row(format!("min_x_ge_{tag}"), Block::Min, t, vec![(zl, 1.0), (xl, -1.0), (sx, big_m)], Sense::Ge, 0.0);
            b.row(format!("min_c_le_{tag}"), Block::Min, t, vec![(zl, 1.0)], Sense::Le, c);
            b.row(format!("min_c_ge_{tag}"), Block::Min, t, vec![(zl, 1.0), (sc, big_m)], Sense::Ge, c);
            for k in net.downstream(l) {
                let s = k.space_factor();
                let cap_k = net.capacity(k.link);
                let xk = x[t][k.link];
                let kid = id(k.link);
                let sk = b.binary(format!("dz_{}_k{kid}_{t}", id(l)), Role::Selector, l, t);
                selectors.push(sk);
                b.row(format!("min_k{kid}_le_{tag}"), Block::Min, t, vec![(zl, 1.0), (xk, s)], Sense::Le, s * cap_k);
                b.row(
                    format!("min_k{kid}_ge_{tag}"),
                    Block::Min,
                    t,
                    vec![(zl, 1.0), (xk, s), (sk, big_m)],
                    Sense::Ge,
                    s * cap_k,
                );
            }
            let count = selectors.len();
            b.row(
                format!("min_sel_{tag}"),
                Block::Min,
                t,
                selectors.iter().map(|&v| (v, 1.0)).collect(),
                Sense::Eq,
                (count - 1) as f64,
            );
            blocks.push(MinBlock { selectors });

            let (fl, ul) = (ft[l], ut[l]);
            b.row(format!("flow_cu_{tag}"), Block::Flow, t, vec![(fl, 1.0), (ul, -c)], Sense::Le, 0.0);
            b.row(format!("flow_pos_{tag}"), Block::Flow, t, vec![(fl, 1.0)], Sense::Ge, 0.0);
            b.row(format!("flow_z_le_{tag}"), Block::Flow, t, vec![(fl, 1.0), (zl, -1.0)], Sense::Le, 0.0);
            b.row(format!("flow_z_ge_{tag}"), Block::Flow, t, vec![(fl, 1.0), (zl, -1.0), (ul, -c)], Sense::Ge, -c);
        }

        for l in 0..n {
            let tag = format!("{}_{t}", id(l));
            let mut terms = vec![(zpt[l], 1.0), (x[t][l], -1.0), (ft[l], 1.0)];
            terms.extend(net.upstream(l).iter().map(|i| (ft[i.link], -i.turn)));
            terms.push((dt[l], -1.0));
            b.row(format!("bal_{tag}"), Block::Balance, t, terms, Sense::Eq, 0.0);
        }

        let mut ct = Vec::with_capacity(n);
        for l in 0..n {
            let tag = format!("{}_{t}", id(l));
            let cap = net.capacity(l);
            let (xn, zpl) = (x[t + 1][l], zpt[l]);
            let dl = b.binary(format!("dc_{tag}"), Role::ClampSelector, l, t);
            ct.push(dl);
            b.row(format!("clamp_z_le_{tag}"), Block::Clamp, t, vec![(xn, 1.0), (zpl, -1.0)], Sense::Le, 0.0);
            b.row(format!("clamp_cap_le_{tag}"), Block::Clamp, t, vec![(xn, 1.0)], Sense::Le, cap);
            b.row(
                format!("clamp_z_ge_{tag}"),
                Block::Clamp,
                t,
                vec![(xn, 1.0), (zpl, -1.0), (dl, big_m_clamp)],
                Sense::Ge,
                0.0,
            );
            b.row(
                format!("clamp_cap_ge_{tag}"),
                Block::Clamp,
                t,
                vec![(xn, 1.0), (dl, -big_m_clamp)],
                Sense::Ge,
                cap - big_m_clamp,
            );
        }

        for (j, (inter, terms, sense, rhs)) in net.signal_constraints().enumerate() {
            b.row(
                format!("sig_{inter}_{j}_{t}"),
                Block::Signal,
                t,
                terms.iter().map(|&(l, a)| (ut[l], a as f64)).collect(),
                sense,
                rhs as f64,
            );
        }

        u.push(ut);
        d.push(dt);
        z.push(zt);
        f.push(ft);
        zp.push(zpt);
        min_blocks.push(blocks);
        clamp.push(ct);
    }

    let objective = x.iter().skip(1).flatten().map(|&v| (v, 1.0)).collect();
    MldModel {
        name: name.to_string(),
        horizon,
        vars: b.vars,
        rows: b.rows,
        objective,
        big_m,
        big_m_clamp,
        x,
        u,
        d,
        z,
        f,
        zp,
        min_blocks,
        clamp,
    }
}

impl MldModel {
    pub fn binary_count(&self) -> usize {
        self.vars.iter().filter(|v| v.binary).count()
    }

    pub fn rows_in(&self, block: Block) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(move |r| r.block == block)
    }

    /// Pin `x[0]` to a measured state.
    pub fn fix_initial_state(&mut self, x0: &[f64]) {
        for (l, &v) in x0.iter().enumerate() {
            let var = self.x[0][l];
            let name = format!("init_{}", &self.vars[var].name[2..]);
            self.rows.push(Row { name, block: Block::Initial, step: 0, terms: vec![(var, 1.0)], sense: Sense::Eq, rhs: v });
        }
    }

    /// Keep `x[τ]` inside the closure of a single box for each listed step.
    pub fn restrict_to_box(&mut self, steps: impl IntoIterator<Item = usize>, region: &HyperRect, tag: &str) {
        for t in steps {
            for l in 0..region.dim() {
                let var = self.x[t][l];
                let base = &self.vars[var].name[2..];
                if region.upper[l] < self.vars[var].upper {
                    let name = format!("{tag}_hi_{base}");
                    self.rows.push(Row { name, block: Block::Region, step: t, terms: vec![(var, 1.0)], sense: Sense::Le, rhs: region.upper[l] });
                }
                if region.lower[l] > self.vars[var].lower {
                    let name = format!("{tag}_lo_{base}");
                    self.rows.push(Row { name, block: Block::Region, step: t, terms: vec![(var, 1.0)], sense: Sense::Ge, rhs: region.lower[l] });
                }
            }
        }
    }
}

fn write_terms(out: &mut String, terms: &[(usize, f64)], vars: &[Var]) {
    for (i, &(v, a)) in terms.iter().enumerate() {
        if i > 0 && i % 8 == 0 {
            out.push_str("\n   ");
        }
        let sign = if a < 0.0 { '-' } else { '+' };
        let mag = a.abs();
        if i == 0 && sign == '+' {
            let _ = write!(out, " {mag} {}", vars[v].name);
        } else {
            let _ = write!(out, " {sign} {mag} {}", vars[v].name);
        }
    }
}

/// CPLEX-style LP text. Identical models give identical bytes.
pub fn emit_lp(model: &MldModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "\\ {} horizon {}", model.name, model.horizon);
    out.push_str("Minimize\n obj:");
    write_terms(&mut out, &model.objective, &model.vars);
    out.push('\n');
    if !model.rows.is_empty() {
        out.push_str("Subject To\n");
        for r in &model.rows {
            let _ = write!(out, " {}:", r.name);
            write_terms(&mut out, &r.terms, &model.vars);
            let _ = writeln!(out, " {} {}", r.sense, r.rhs);
        }
    }
    out.push_str("Bounds\n");
    for v in model.vars.iter().filter(|v| !v.binary) {
        if v.upper.is_finite() {
            let _ = writeln!(out, " {} <= {} <= {}", v.lower, v.name, v.upper);
        } else if v.lower != 0.0 {
            let _ = writeln!(out, " {} >= {}", v.name, v.lower);
        }
    }
    let binaries: Vec<&str> = model.vars.iter().filter(|v| v.binary).map(|v| v.name.as_str()).collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for chunk in binaries.chunks(8) {
            let _ = writeln!(out, " {}", chunk.join(" "));
        }
    }
    out.push_str("End\n");
    out
}

/// One big-M requirement and whether the model meets it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BigMCheck {
    pub what: String,
    pub required: f64,
    pub provided: f64,
}

impl BigMCheck {
    pub fn ok(&self) -> bool {
        self.provided >= self.required
    }
}

/// Check that every relaxed big-M row is slack over the whole state space
/// and demand set. Relaxed min rows need `M >= candidate` (the min is at
/// least 0); the relaxed clamp rows need `M' >= cap_l` and
/// `M' >= z'_l - cap_l`, where `z'_l <= cap_l + inflow + demand`.
pub fn check_big_m(model: &MldModel, net: &Network) -> Vec<BigMCheck> {
    let hull = net.demand_hull();
    let mut out = Vec::new();
    for l in 0..net.len() {
        let id = net.link_id(l);
        out.push(BigMCheck { what: format!("min x_{id}"), required: net.capacity(l), provided: model.big_m });
        out.push(BigMCheck { what: format!("min c_{id}"), required: net.saturation(l), provided: model.big_m });
        for k in net.downstream(l) {
            out.push(BigMCheck {
                what: format!("min space {id}->{}", net.link_id(k.link)),
                required: k.space_factor() * net.capacity(k.link),
                provided: model.big_m,
            });
        }
        out.push(BigMCheck { what: format!("clamp cap_{id}"), required: net.capacity(l), provided: model.big_m_clamp });
        out.push(BigMCheck {
            what: format!("clamp overflow {id}"),
            required: max_arrivals(net, l, &hull.upper),
            provided: model.big_m_clamp,
        });
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubstitutionError {
    #[error("trace has {states} states and {controls} controls; need controls = states - 1 >= horizon")]
    Shape { states: usize, controls: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowViolation {
    /// Trace step where the window starts.
    pub window: usize,
    pub row: String,
    pub block: Block,
    pub step: usize,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NotForced {
    pub window: usize,
    pub var: String,
    pub lower: f64,
    pub upper: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SubstitutionReport {
    pub windows: usize,
    pub violations: Vec<RowViolation>,
    pub not_forced: Vec<NotForced>,
}

impl SubstitutionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.not_forced.is_empty()
    }
}

/// Auxiliary assignment implied by the simulator over one window.
fn assignment(model: &MldModel, net: &Network, xs: &[Vec<f64>], us: &[Vec<bool>], ds: &[Vec<f64>]) -> Vec<f64> {
    let mut val = vec![0.0; model.vars.len()];
    for (t, row) in model.x.iter().enumerate() {
        for (l, &v) in row.iter().enumerate() {
            val[v] = xs[t][l];
        }
    }
    for t in 0..model.horizon {
        let x = &xs[t];
        let mut flows = vec![0.0; net.len()];
        for l in 0..net.len() {
            let mut cands = vec![x[l], net.saturation(l)];
            cands.extend(net.downstream(l).iter().map(|k| k.space_factor() * (net.capacity(k.link) - x[k.link])));
            let zl = cands.iter().copied().fold(f64::INFINITY, f64::min);
            let active = cands.iter().position(|&c| c == zl).expect("min is a candidate");
            for (j, &s) in model.min_blocks[t][l].selectors.iter().enumerate() {
                val[s] = if j == active { 0.0 } else { 1.0 };
            }
            let ul = us[t][l];
            flows[l] = if ul { zl } else { 0.0 };
            val[model.z[t][l]] = zl;
            val[model.u[t][l]] = f64::from(u8::from(ul));
            val[model.f[t][l]] = flows[l];
            val[model.d[t][l]] = ds[t][l];
        }
        for l in 0..net.len() {
            let zpl = net.balance(x, &flows, &ds[t], l);
            val[model.zp[t][l]] = zpl;
            val[model.clamp[t][l]] = if zpl > net.capacity(l) { 1.0 } else { 0.0 };
        }
    }
    val
}

/// Interval bounds implied by the rows once `fixed` variables are pinned.
pub fn propagate(model: &MldModel, fixed: &[Option<f64>]) -> Vec<(f64, f64)> {
    let mut bounds: Vec<(f64, f64)> = model
        .vars
        .iter()
        .zip(fixed)
        .map(|(v, fx)| match fx {
            Some(x) => (*x, *x),
            None => (v.lower, v.upper),
        })
        .collect();
    let passes = 8 * (model.horizon + 1);
    for _ in 0..passes {
        let mut changed = false;
        for r in &model.rows {
            for (j, &(vj, aj)) in r.terms.iter().enumerate() {
                if fixed[vj].is_some() {
                    continue;
                }
                // others' contribution range
                let (mut lo, mut hi) = (0.0, 0.0);
                for (i, &(vi, ai)) in r.terms.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let (bl, bh) = bounds[vi];
                    let (p, q) = if ai >= 0.0 { (ai * bl, ai * bh) } else { (ai * bh, ai * bl) };
                    lo += p;
                    hi += q;
                }
                // aj * vj (sense) rhs - others
                let upper_from = |others_lo: f64| (r.rhs - others_lo) / aj;
                let (mut nl, mut nh) = bounds[vj];
                let le = matches!(r.sense, Sense::Le | Sense::Eq);
                let ge = matches!(r.sense, Sense::Ge | Sense::Eq);
                if le {
                    let v = upper_from(lo);
                    if aj > 0.0 { nh = nh.min(v) } else { nl = nl.max(v) }
                }
                if ge {
                    let v = upper_from(hi);
                    if aj > 0.0 { nl = nl.max(v) } else { nh = nh.min(v) }
                }
                if nl.is_finite() && nl > bounds[vj].0 + 1e-12 || nh.is_finite() && nh < bounds[vj].1 - 1e-12 {
                    bounds[vj] = (nl.max(bounds[vj].0), nh.min(bounds[vj].1));
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    bounds
}

/// Substitute the simulator's trajectory into every window of the model.
/// Each window must satisfy all rows within `tol`, and fixing `x[0]`, the
/// controls, the demand and the binaries must force every later state to
/// the simulated value.
pub fn check_substitution(
    model: &MldModel,
    net: &Network,
    states: &[Vec<f64>],
    controls: &[Vec<bool>],
    demands: &[Vec<f64>],
    tol: f64,
) -> Result<SubstitutionReport, SubstitutionError> {
    let h = model.horizon;
    if controls.len() + 1 != states.len() || demands.len() != controls.len() || controls.len() < h {
        return Err(SubstitutionError::Shape { states: states.len(), controls: controls.len() });
    }
    let mut report = SubstitutionReport::default();
    let windows = if h == 0 { 0 } else { controls.len() - h + 1 };
    for s in 0..windows {
        report.windows += 1;
        let val = assignment(model, net, &states[s..=s + h], &controls[s..s + h], &demands[s..s + h]);
        for r in model.rows.iter().filter(|r| !matches!(r.block, Block::Initial | Block::Region)) {
            let slack = r.violation(&val);
            if slack > tol {
                report.violations.push(RowViolation { window: s, row: r.name.clone(), block: r.block, step: s + r.step, slack });
            }
        }
        let fixed: Vec<Option<f64>> = model
            .vars
            .iter()
            .enumerate()
            .map(|(i, v)| match v.role {
                Role::State if v.step > 0 => None,
                Role::Min | Role::Flow | Role::Balance => None,
                _ => Some(val[i]),
            })
            .collect();
        let bounds = propagate(model, &fixed);
        for t in 1..=h {
            for &v in &model.x[t] {
                let (lo, hi) = bounds[v];
                let expected = val[v];
                if hi - lo > tol || expected < lo - tol || expected > hi + tol {
                    report.not_forced.push(NotForced { window: s, var: model.vars[v].name.clone(), lower: lo, upper: hi, expected });
                }
            }
        }
    }
    report.violations.sort_by_key(|v| (v.window, v.step));
    Ok(report)
}
