use proptest::prelude::*;
use rbfctl_core::optim::{adam_step, descent_loop, schedule_rate, AdamState, LrSchedule};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_has_three_plateaus(lr0 in 1e-5f64..1.0, total in 4usize..2000) {
        let s = LrSchedule::new(lr0, total);
        for t in 0..total {
            let expect = if t < total / 2 { lr0 } else if t < 3 * total / 4 { lr0 / 10.0 } else { lr0 / 100.0 };
            prop_assert_eq!(schedule_rate(&s, t).unwrap(), expect);
        }
        prop_assert!(schedule_rate(&s, total).is_err());
    }

    #[test]
    fn adam_is_permutation_equivariant(
        grads in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 1..6),
        p0 in prop::collection::vec(-1.0f64..1.0, 6),
        shift in 1usize..6,
    ) {
        let rot = |v: &[f64]| -> Vec<f64> { (0..v.len()).map(|i| v[(i + shift) % v.len()]).collect() };
        let mut a = AdamState::new(p0.clone());
        let mut b = AdamState::new(rot(&p0));
        for g in &grads {
            a = adam_step(a, g, 1e-2).unwrap();
            b = adam_step(b, &rot(g), 1e-2).unwrap();
        }
        prop_assert_eq!(rot(&a.params), b.params);
        prop_assert!(a.v.iter().all(|v| *v >= 0.0));
        prop_assert_eq!(a.t, grads.len());
    }

    #[test]
    fn first_step_opposes_gradient_sign(g in prop::collection::vec(-10.0f64..10.0, 1..12)) {
        let s = adam_step(AdamState::new(vec![0.0; g.len()]), &g, 0.1).unwrap();
        for (p, gi) in s.params.iter().zip(&g) {
            if *gi != 0.0 {
                prop_assert!(p * gi < 0.0);
            }
        }
    }
}

#[test]
fn descent_loop_is_deterministic_and_sized() {
    let f = |c: &[f64]| -> Result<(f64, Vec<f64>), String> {
        Ok((c.iter().map(|x| (x - 1.0).powi(4)).sum(), c.iter().map(|x| 4.0 * (x - 1.0).powi(3)).collect()))
    };
    let a = descent_loop(f, vec![0.0, 3.0, -2.0], LrSchedule::new(0.05, 100), 100).unwrap();
    let b = descent_loop(f, vec![0.0, 3.0, -2.0], LrSchedule::new(0.05, 100), 100).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.costs.len(), 101);
    assert_eq!(a.rates.len(), 100);
    assert!(a.final_cost().unwrap() < a.initial_cost().unwrap());
}
