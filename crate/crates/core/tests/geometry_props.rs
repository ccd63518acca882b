mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safempc_core::geometry::{HyperRect, SafeSet};

use common::{edgy_in, resolved, uniform_in};

#[test]
fn desk2_robustness_at_the_initial_state() {
    let r = resolved("desk2");
    // nearest violation is the corner (5, 7) of {x1 > 5, x2 > 7}
    let rho = r.safe.robustness(&[3.0, 3.0]);
    assert!((rho - 20f64.sqrt()).abs() < 1e-12);
    // outside: distance back to the nearest safe box
    assert!((r.safe.robustness(&[9.0, 3.0]) + 1.0).abs() < 1e-12);
}

#[test]
fn whole_space_has_infinite_robustness() {
    let s = SafeSet::everything(vec![10.0, 10.0]);
    assert_eq!(s.robustness(&[5.0, 5.0]), f64::INFINITY);
}

#[test]
fn paper_fig2_compiles_to_pruned_boxes() {
    let r = resolved("paper_fig2");
    let unpruned = r.scenario.safety.compile(&r.net, false).unwrap();
    assert!(r.safe.boxes().len() <= unpruned.boxes().len());
    assert!(r.safe.boxes().iter().all(|b| unpruned.boxes().contains(b)));
}

#[test]
fn half_open_intersections() {
    let mut a = HyperRect::closed(vec![0.0], vec![5.0]);
    let b = HyperRect::closed(vec![5.0], vec![10.0]);
    assert!(a.intersect(&b).is_some());
    a.upper_open[0] = true;
    assert!(a.intersect(&b).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn membership_matches_the_expression(seed in any::<u64>(), which in 0usize..3) {
        let r = resolved(["desk2", "arterial4", "paper_fig2"][which]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = edgy_in(&mut rng, &vec![0.0; r.net.len()], r.net.capacities());
        prop_assert_eq!(r.safe.contains(&x), r.scenario.safety.eval(&r.net, &x));
    }

    /// Inside, no sampled unsafe state is closer than the robustness; the
    /// sign always agrees with membership.
    #[test]
    fn robustness_is_a_safe_radius(seed in any::<u64>(), which in 0usize..2) {
        let r = resolved(["desk2", "arterial4"][which]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zero = vec![0.0; r.net.len()];
        let x = uniform_in(&mut rng, &zero, r.net.capacities());
        let rho = r.safe.robustness(&x);
        prop_assert_eq!(rho > 0.0, r.safe.contains(&x));
        if rho > 0.0 {
            for _ in 0..300 {
                let y = edgy_in(&mut rng, &zero, r.net.capacities());
                if !r.safe.contains(&y) {
                    let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    prop_assert!(dist >= rho - 1e-9);
                }
            }
        }
    }
}
