//! Demand realizations for closed-loop runs, selectable by name.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::SafeSet;
use crate::mpc::uniform_demand;
use crate::network::{ControlPattern, Network};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown {kind} '{name}' (known: {known})")]
pub struct UnknownStrategy {
    pub kind: &'static str,
    pub name: String,
    pub known: String,
}

/// Chooses the demand applied at each step.
pub trait DemandSampler: Send {
    fn name(&self) -> &'static str;
    fn sample(&mut self, net: &Network, safe: &SafeSet, x: &[f64], u: &ControlPattern) -> Vec<f64>;
}

/// Uniform over the demand set.
pub struct Uniform(ChaCha8Rng);

impl DemandSampler for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn sample(&mut self, net: &Network, _: &SafeSet, _: &[f64], _: &ControlPattern) -> Vec<f64> {
        uniform_demand(net.demand(), &mut self.0)
    }
}

/// A random vertex of a random demand box.
pub struct Corner(ChaCha8Rng);

impl DemandSampler for Corner {
    fn name(&self) -> &'static str {
        "corner"
    }

    fn sample(&mut self, net: &Network, _: &SafeSet, _: &[f64], _: &ControlPattern) -> Vec<f64> {
        let boxes = net.demand();
        let b = &boxes[self.0.gen_range(0..boxes.len())];
        b.lower
            .iter()
            .zip(&b.upper)
            .map(|(&lo, &hi)| if self.0.gen_bool(0.5) { hi } else { lo })
            .collect()
    }
}

/// Largest number of free demand coordinates whose vertices are enumerated.
const MAX_VERTEX_DIMS: usize = 12;

/// The demand vertex that minimizes the robustness of the next state, with
/// the larger vehicle total breaking ties.
pub struct GreedyWorst;

impl GreedyWorst {
    fn candidates(net: &Network) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for b in net.demand() {
            let free: Vec<usize> = (0..net.len()).filter(|&l| b.upper[l] > b.lower[l]).collect();
            if free.len() > MAX_VERTEX_DIMS {
                out.push(b.upper.clone());
                out.push(b.lower.clone());
                continue;
            }
            for mask in 0..1u32 << free.len() {
                let mut d = b.lower.clone();
                for (bit, &l) in free.iter().enumerate() {
                    if mask >> bit & 1 == 1 {
                        d[l] = b.upper[l];
                    }
                }
                out.push(d);
            }
        }
        out
    }
}

impl DemandSampler for GreedyWorst {
    fn name(&self) -> &'static str {
        "greedy-worst"
    }

    fn sample(&mut self, net: &Network, safe: &SafeSet, x: &[f64], u: &ControlPattern) -> Vec<f64> {
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        for d in Self::candidates(net) {
            let next = net.step(x, u, &d);
            let rho = safe.robustness(&next);
            let total: f64 = next.iter().sum();
            let better = match &best {
                None => true,
                Some((r, t, _)) => rho < *r || (rho == *r && total > *t),
            };
            if better {
                best = Some((rho, total, d));
            }
        }
        best.expect("demand set is non-empty").2
    }
}

type SamplerFactory = fn(u64) -> Box<dyn DemandSampler>;

fn uniform(seed: u64) -> Box<dyn DemandSampler> {
    Box::new(Uniform(ChaCha8Rng::seed_from_u64(seed)))
}

fn corner(seed: u64) -> Box<dyn DemandSampler> {
    Box::new(Corner(ChaCha8Rng::seed_from_u64(seed)))
}

fn greedy_worst(_: u64) -> Box<dyn DemandSampler> {
    Box::new(GreedyWorst)
}

const SAMPLERS: &[(&str, SamplerFactory)] = &[("uniform", uniform), ("corner", corner), ("greedy-worst", greedy_worst)];

pub fn sampler_names() -> impl Iterator<Item = &'static str> {
    SAMPLERS.iter().map(|(n, _)| *n)
}

pub fn make_sampler(name: &str, seed: u64) -> Result<Box<dyn DemandSampler>, UnknownStrategy> {
    SAMPLERS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, f)| f(seed))
        .ok_or_else(|| UnknownStrategy {
            kind: "demand sampler",
            name: name.to_string(),
            known: sampler_names().collect::<Vec<_>>().join(", "),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures;

    #[test]
    fn registry_lookup() {
        assert_eq!(sampler_names().collect::<Vec<_>>(), ["uniform", "corner", "greedy-worst"]);
        assert_eq!(make_sampler("corner", 1).unwrap().name(), "corner");
        let err = make_sampler("gaussian", 1).err().unwrap();
        assert_eq!(err.to_string(), "unknown demand sampler 'gaussian' (known: uniform, corner, greedy-worst)");
    }

    #[test]
    fn samples_stay_in_demand_set() {
        let net = fixtures::desk2();
        let safe = SafeSet::everything(net.capacities().to_vec());
        let u = &net.controls()[0];
        for name in sampler_names() {
            let mut s = make_sampler(name, 3).unwrap();
            for _ in 0..100 {
                let d = s.sample(&net, &safe, &[1.0, 1.0], u);
                assert!(net.demand()[0].contains(&d, 0.0), "{name}: {d:?}");
            }
        }
    }

    #[test]
    fn greedy_worst_pushes_occupancy_up() {
        let net = fixtures::desk2();
        let safe = SafeSet::everything(net.capacities().to_vec());
        let d = GreedyWorst.sample(&net, &safe, &[1.0, 1.0], &net.controls()[0]);
        assert_eq!(d, vec![2.0, 0.0]);
    }
}
