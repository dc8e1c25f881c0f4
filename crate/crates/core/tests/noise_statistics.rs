use minattn_core::noise::OuProcess;
use minattn_core::rng::{normal, seeded};

fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    let m = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    let cov = (0..n - lag).map(|i| (xs[i] - m) * (xs[i + lag] - m)).sum::<f64>() / (n - lag) as f64;
    cov / var
}

#[test]
fn stationary_variance_and_autocorrelation() {
    let (theta, sigma, dt) = (2.0, 0.5, 0.01);
    let steps = 1_000_000;
    let stationary = sigma * sigma / (2.0 * theta);
    let mut rng = seeded(99);
    let mut ou = OuProcess::new(theta, vec![0.0], vec![sigma], dt).unwrap();
    // Start from a stationary draw so no burn-in is needed.
    ou.set_current(&[stationary.sqrt() * normal(&mut rng)]).unwrap();
    let xs: Vec<f64> = (0..steps).map(|_| ou.step(&mut rng)[0]).collect();

    let m = xs.iter().sum::<f64>() / steps as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / steps as f64;
    assert!((var / stationary - 1.0).abs() < 0.05, "variance {var} vs {stationary}");
    for lag in [5usize, 25, 50] {
        let expected = (-theta * lag as f64 * dt).exp();
        let got = autocorrelation(&xs, lag);
        assert!((got / expected - 1.0).abs() < 0.1, "lag {lag}: {got} vs {expected}");
    }
}

#[test]
fn nonzero_mean_is_the_long_run_average() {
    let mut rng = seeded(5);
    let mut ou = OuProcess::new(1.0, vec![0.3, -2.0], vec![0.2, 0.0], 0.01).unwrap();
    let n = 200_000;
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let v = ou.step(&mut rng);
        sum[0] += v[0];
        sum[1] += v[1];
    }
    assert!((sum[0] / n as f64 - 0.3).abs() < 0.01);
    assert_eq!(sum[1] / n as f64, -2.0);
}
