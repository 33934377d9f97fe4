use std::collections::HashMap;

use proptest::prelude::*;

use pmpcert_core::extension::{ConeProjection, cone_lambda};
use pmpcert_core::parse;
use nalgebra::DVector;

fn leaf() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("x".to_string()),
        Just("y".to_string()),
        (-3.0f64..3.0).prop_map(|c| format!("{c:.4}")),
        (1u32..5).prop_map(|k| k.to_string()),
    ]
}

fn expr() -> impl Strategy<Value = String> {
    leaf().prop_recursive(4, 32, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} + {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} - ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) * {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) / (3 + sin({b}))")),
            (inner.clone(), 2u32..4).prop_map(|(a, k)| format!("({a})^{k}")),
            inner.clone().prop_map(|a| format!("-{a}")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("tanh({a})")),
            inner.prop_map(|a| format!("exp(sin({a}))")),
        ]
    })
}

proptest! {
    #[test]
    fn printing_is_a_fixed_point(text in expr(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let e = parse(&text).unwrap();
        let printed = e.to_string();
        let again = parse(&printed).unwrap();
        prop_assert_eq!(&again.to_string(), &printed);
        let env: HashMap<&str, f64> = [("x", x), ("y", y)].into_iter().collect();
        let (a, b) = (e.eval(&env).unwrap(), again.eval(&env).unwrap());
        prop_assert!(a == b || (a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn dual_matches_central_difference(text in expr(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let e = parse(&text).unwrap();
        let env: HashMap<&str, f64> = [("x", x), ("y", y)].into_iter().collect();
        let (v, d) = e.eval_dual(&env, "x").unwrap();
        prop_assert_eq!(v, e.eval(&env).unwrap());
        let h = 1e-6;
        let at = |dx: f64| {
            let env: HashMap<&str, f64> = [("x", x + dx), ("y", y)].into_iter().collect();
            e.eval(&env).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        prop_assert!((d - fd).abs() <= 1e-5 * d.abs().max(1.0), "{}: {} vs {}", text, d, fd);
    }

    #[test]
    fn projection_lands_on_the_orthant(
        y in prop::collection::vec(-5.0f64..5.0, 1..6),
        scale in prop::collection::vec(0.1f64..3.0, 6),
    ) {
        let h: Vec<f64> = scale[..y.len()].to_vec();
        let proj = ConeProjection::new(DVector::from_vec(h.clone())).unwrap();
        let lam = cone_lambda(&y, &h);
        let phi = proj.phi(&y);
        prop_assert!(lam >= 0.0);
        prop_assert!(phi.iter().all(|p| *p >= -1e-12));
        if y.iter().all(|v| *v >= 0.0) {
            prop_assert_eq!(lam, 0.0);
            prop_assert_eq!(&phi, &y);
        } else {
            // some coordinate sits on the boundary
            prop_assert!(phi.iter().any(|p| p.abs() <= 1e-12));
        }
        // Lipschitz in the max norm
        let z: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
        let pz = proj.phi(&z);
        let d = phi.iter().zip(&pz).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(d <= proj.lipschitz_bound() * 0.1 + 1e-12);
    }
}
