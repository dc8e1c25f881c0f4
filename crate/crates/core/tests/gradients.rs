//! Analytic gradients and Jacobians against central finite differences.

use minattn_core::linalg::DenseMatrix;
use minattn_core::meta::{vpg_gradient, BaselineKind, VpgOptions};
use minattn_core::mlp::{Activation, MlpNetwork};
use minattn_core::policy::{LinearSchedule, Policy, StepCotangent};
use minattn_core::rng::{normal, seeded};
use minattn_core::trajectory::{
    rollout, ActionMode, FeedforwardSource, RolloutOptions, RolloutTask, Trajectory, TrajectorySource,
};

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn central<F: FnMut(&[f64]) -> f64>(p: &[f64], i: usize, mut f: F) -> f64 {
    let mut q = p.to_vec();
    q[i] = p[i] + H;
    let up = f(&q);
    q[i] = p[i] - H;
    let down = f(&q);
    (up - down) / (2.0 * H)
}

fn random_vec(n: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..n).map(|_| scale * normal(&mut rng)).collect()
}

fn mlp_policy(seed: u64) -> Policy {
    Policy::mlp(3, &[6, 5], Activation::Tanh, vec![-2.0, -1.0], vec![2.0, 1.0], -0.4, &mut seeded(seed))
        .unwrap()
        .with_params(&{
            // Larger weights than the default init so the squash is exercised.
            let p = Policy::mlp(3, &[6, 5], Activation::Tanh, vec![-2.0, -1.0], vec![2.0, 1.0], -0.4, &mut seeded(seed))
                .unwrap();
            let noise = random_vec(p.param_count(), 0.4, seed + 100);
            p.params().iter().zip(&noise).map(|(a, b)| a + b).collect::<Vec<_>>()
        })
        .unwrap()
}

#[test]
fn mlp_parameter_gradients() {
    let mut cases = 0;
    for act in [Activation::Tanh, Activation::Swish] {
        let net = MlpNetwork::random(&[3, 5, 4, 2], act, Activation::Identity, &mut seeded(4)).unwrap();
        let x = [0.3, -0.7, 1.1];
        let w = [0.6, -1.3];
        let g = net.backward_params(&x, &w).unwrap();
        let p = net.params().to_vec();
        for i in 0..p.len() {
            let fd = central(&p, i, |q| {
                let mut n = net.clone();
                n.set_params(q).unwrap();
                let y = n.forward(&x).unwrap();
                w[0] * y[0] + w[1] * y[1]
            });
            assert!(rel_err(g[i], fd) < TOL, "{act:?} param {i}: {} vs {fd}", g[i]);
            cases += 1;
        }
    }
    assert!(cases >= 100);
}

#[test]
fn mlp_input_jacobian() {
    let net = MlpNetwork::random(&[4, 7, 3], Activation::Swish, Activation::Tanh, &mut seeded(9)).unwrap();
    let x = [0.2, -0.4, 0.9, -1.5];
    let j = net.input_jacobian(&x).unwrap();
    let jt = net.forward_tangents(&x).unwrap().jacobian();
    for o in 0..3 {
        for i in 0..4 {
            let fd = central(&x, i, |q| net.forward(q).unwrap()[o]);
            assert!(rel_err(j.get(o, i), fd) < TOL);
            assert!(rel_err(jt.get(o, i), fd) < TOL);
        }
    }
}

#[test]
fn jacobian_backward_matches_differenced_jacobian_functional() {
    for act in [Activation::Tanh, Activation::Swish] {
        let net = MlpNetwork::random(&[3, 6, 5, 2], act, Activation::Identity, &mut seeded(21)).unwrap();
        let x = [0.5, -0.2, 0.8];
        let out_cot = [0.7, -0.4];
        let c = random_vec(6, 1.0, 5);
        let jac_cot = DenseMatrix::new(2, 3, c.clone()).unwrap();
        let tt = net.forward_tangents(&x).unwrap();
        let mut g = vec![0.0; net.param_count()];
        net.jacobian_backward(&tt, &out_cot, &jac_cot, &mut g, 1.0).unwrap();
        let p = net.params().to_vec();
        for i in 0..p.len() {
            let fd = central(&p, i, |q| {
                let mut n = net.clone();
                n.set_params(q).unwrap();
                let y = n.forward(&x).unwrap();
                let j = n.input_jacobian(&x).unwrap();
                out_cot[0] * y[0]
                    + out_cot[1] * y[1]
                    + j.as_slice().iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
            });
            assert!(rel_err(g[i], fd) < TOL, "{act:?} param {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn policy_score_gradient() {
    let p = mlp_policy(1);
    let x = [0.4, -0.3, 0.2];
    let action = [0.7, -0.2];
    let g = p.log_prob_grad(&x, 0.0, &action).unwrap();
    let theta = p.params();
    for i in 0..theta.len() {
        let fd = central(&theta, i, |q| p.with_params(q).unwrap().log_prob(&x, 0.0, &action).unwrap());
        assert!(rel_err(g[i], fd) < TOL, "param {i}: {} vs {fd}", g[i]);
    }
}

#[test]
fn policy_state_jacobian() {
    let p = mlp_policy(2);
    let x = [0.1, 0.6, -0.5];
    let j = p.state_jacobian(&x, 0.0).unwrap();
    for o in 0..2 {
        for i in 0..3 {
            let fd = central(&x, i, |q| p.mean_action(q, 0.0).unwrap()[o]);
            assert!(rel_err(j.get(o, i), fd) < TOL);
        }
    }
}

#[test]
fn feedback_and_mean_action_gradient() {
    let p = mlp_policy(3);
    let x = [-0.3, 0.8, 0.4];
    let (wf, c) = (-0.8, [0.3, -1.1]);
    let mut g = vec![0.0; p.param_count()];
    p.accumulate_gradient(
        &x,
        0.0,
        StepCotangent { score: None, mean_action: Some(&c), feedback_weight: wf },
        &mut g,
    )
    .unwrap();
    let theta = p.params();
    for i in 0..theta.len() {
        let fd = central(&theta, i, |q| {
            let pq = p.with_params(q).unwrap();
            let mu = pq.mean_action(&x, 0.0).unwrap();
            wf * pq.state_jacobian(&x, 0.0).unwrap().frobenius_sq() + c[0] * mu[0] + c[1] * mu[1]
        });
        assert!(rel_err(g[i], fd) < TOL, "param {i}: {} vs {fd}", g[i]);
    }
}

#[test]
fn linear_policy_gradients() {
    let s = LinearSchedule::new(
        2,
        1,
        vec![0.0, 0.5, 1.0],
        random_vec(6, 1.0, 8),
        random_vec(3, 1.0, 9),
    )
    .unwrap();
    let p = Policy::linear(s, -0.3, vec![-5.0], vec![5.0]).unwrap();
    let (x, t) = ([0.6, -0.9], 0.3);
    let (wf, c) = (0.7, [1.4]);
    let mut g = vec![0.0; p.param_count()];
    p.accumulate_gradient(
        &x,
        t,
        StepCotangent { score: Some((&[0.25], 0.9)), mean_action: Some(&c), feedback_weight: wf },
        &mut g,
    )
    .unwrap();
    let theta = p.params();
    for i in 0..theta.len() {
        let fd = central(&theta, i, |q| {
            let pq = p.with_params(q).unwrap();
            0.9 * pq.log_prob(&x, t, &[0.25]).unwrap()
                + c[0] * pq.mean_action(&x, t).unwrap()[0]
                + wf * pq.state_jacobian(&x, t).unwrap().frobenius_sq()
        });
        assert!(rel_err(g[i], fd) < TOL, "param {i}: {} vs {fd}", g[i]);
    }
}

/// Deterministic scalar system used to roll out fixed trajectories.
struct Drift;

impl RolloutTask for Drift {
    fn state_dim(&self) -> usize {
        3
    }
    fn dt(&self) -> f64 {
        0.05
    }
    fn sample_initial_state(&self, _: &mut minattn_core::rng::SimRng) -> Vec<f64> {
        vec![0.5, -0.2, 0.1]
    }
    fn reward(&self, x: &[f64], u: &[f64]) -> f64 {
        -x.iter().map(|v| v * v).sum::<f64>() - 0.1 * u.iter().map(|v| v * v).sum::<f64>()
    }
    fn advance(
        &self,
        x: &[f64],
        _: f64,
        u: &[f64],
        _: &mut minattn_core::rng::SimRng,
    ) -> minattn_core::Result<(Vec<f64>, bool)> {
        Ok((vec![x[0] + 0.05 * x[1], x[1] + 0.05 * u[0], x[2] - 0.05 * u[1]], false))
    }
}

/// Penalty part of the regularized objective evaluated on the recorded
/// states with `theta`'s mean actions.
fn penalty(p: &Policy, trajs: &[Trajectory], alpha: f64, dt: f64) -> f64 {
    let mut total = 0.0;
    for tr in trajs {
        let mut prev: Option<Vec<f64>> = None;
        for s in &tr.steps {
            let mu = p.mean_action(&s.state, s.time).unwrap();
            let fb = p.state_jacobian(&s.state, s.time).unwrap().frobenius_sq();
            let ff = prev
                .as_ref()
                .map(|q| mu.iter().zip(q).map(|(a, b)| ((a - b) / dt).powi(2)).sum::<f64>())
                .unwrap_or(0.0);
            total += -alpha * (fb + ff);
            prev = Some(mu);
        }
    }
    total / trajs.len() as f64
}

#[test]
fn pathwise_penalty_gradient() {
    let p = mlp_policy(5);
    let opts = RolloutOptions { horizon: 6, feedforward: FeedforwardSource::MeanAction, source: TrajectorySource::RealEnv };
    let trajs: Vec<Trajectory> = (0..3)
        .map(|s| rollout(&Drift, &p, vec![0.5, -0.2, 0.1 * s as f64], &opts, ActionMode::Stochastic, &mut seeded(s)).unwrap())
        .collect();
    let alpha = 0.3;
    let with = VpgOptions { gamma: 0.95, alpha, baseline: BaselineKind::None, pathwise: true, dt: 0.05 };
    let without = VpgOptions { pathwise: false, ..with };
    let g1 = vpg_gradient(&p, &trajs, &with).unwrap();
    let g0 = vpg_gradient(&p, &trajs, &without).unwrap();
    let theta = p.params();
    for i in 0..theta.len() {
        let fd = central(&theta, i, |q| penalty(&p.with_params(q).unwrap(), &trajs, alpha, 0.05));
        let analytic = g1[i] - g0[i];
        assert!(rel_err(analytic, fd) < TOL, "param {i}: {analytic} vs {fd}");
    }
}
