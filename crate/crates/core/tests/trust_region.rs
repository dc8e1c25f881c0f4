use minattn_core::meta::trust_region_step;
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn vectors() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| (prop::collection::vec(-10.0..10.0f64, n), prop::collection::vec(-1e3..1e3f64, n)))
}

proptest! {
    #[test]
    fn step_has_the_trust_region_length((theta, g) in vectors(), delta in 1e-6..1.0f64) {
        prop_assume!(norm(&g) > 1e-9);
        let next = trust_region_step(&theta, &g, delta).unwrap();
        let d: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        prop_assert!((norm(&d) - (2.0 * delta).sqrt()).abs() <= 1e-9);
        // Ascent: the step points along the gradient.
        prop_assert!(d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() > 0.0);
    }

    #[test]
    fn positive_gradient_scaling_is_irrelevant((theta, g) in vectors(), scale in 1e-3..1e3f64, delta in 1e-4..1.0f64) {
        prop_assume!(norm(&g) > 1e-6);
        let a = trust_region_step(&theta, &g, delta).unwrap();
        let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
        let b = trust_region_step(&theta, &scaled, delta).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn zero_gradient_is_a_zero_step(theta in prop::collection::vec(-10.0..10.0f64, 1..40), delta in 1e-6..1.0f64) {
        let g = vec![0.0; theta.len()];
        prop_assert_eq!(trust_region_step(&theta, &g, delta).unwrap(), theta);
    }
}
