use minattn_core::mlp::Activation;
use minattn_core::policy::Policy;
use minattn_core::rng::seeded;

#[test]
fn squashed_density_integrates_to_one() {
    let p = Policy::mlp(2, &[8], Activation::Tanh, vec![-2.0], vec![3.0], -0.2, &mut seeded(4)).unwrap();
    let x = [0.4, -1.1];
    // Midpoint rule in the pre-squash coordinate, where the integrand is
    // smooth: the density of u times du/dy.
    let (lo, hi, n) = (-12.0, 12.0, 200_000);
    let h = (hi - lo) / n as f64;
    let mut total = 0.0;
    for k in 0..n {
        let y: f64 = lo + (k as f64 + 0.5) * h;
        let u = 0.5 + 2.5 * y.tanh();
        let du = 2.5 * (1.0 - y.tanh().powi(2));
        if du > 0.0 {
            total += p.log_prob(&x, 0.0, &[u]).unwrap().exp() * du * h;
        }
    }
    assert!((total - 1.0).abs() < 1e-6, "{total}");
}

#[test]
fn samples_respect_bounds() {
    let p = Policy::mlp(3, &[16], Activation::Swish, vec![-1.0, 0.0], vec![1.0, 5.0], 1.0, &mut seeded(9)).unwrap();
    let mut rng = seeded(10);
    for k in 0..5000 {
        let x = [k as f64 * 0.01, -3.0, 2.0];
        let s = p.act(&x, 0.0, Some(&[3.0, -7.0]), &mut rng).unwrap();
        assert!((-1.0..=1.0).contains(&s.action[0]) && (0.0..=5.0).contains(&s.action[1]));
        assert!(s.log_prob.is_finite());
    }
}
