use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semtlc_core::agent::{mlp_gradients, ActionMask, Dense, MlpParams, Transition};
use semtlc_core::Action;

fn random_batch(rng: &mut ChaCha8Rng, n_in: usize, size: usize) -> Vec<Transition> {
    (0..size)
        .map(|_| {
            let obs: Arc<[f64]> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let next_obs: Arc<[f64]> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Transition {
                obs,
                action: if rng.gen_bool(0.5) { Action::Switch } else { Action::Extend },
                reward: rng.gen_range(-2.0..0.0),
                next_obs,
                terminal: rng.gen_bool(0.2),
                next_mask: ActionMask {
                    switch_allowed: rng.gen_bool(0.7),
                },
            }
        })
        .collect()
}

fn central_difference(params: &MlpParams, batch: &[Transition], target: &MlpParams, discount: f64, h: f64) -> Vec<f64> {
    let base = params.flat_params();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_flat_params(&p).unwrap();
        let plus = mlp_gradients(&probe, batch, target, discount).unwrap().1;
        p[i] = base[i] - h;
        probe.set_flat_params(&p).unwrap();
        let minus = mlp_gradients(&probe, batch, target, discount).unwrap().1;
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut worst: f64 = 0.0;
    for instance in 0..24u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + instance);
        let n_in = rng.gen_range(2..8);
        let depth = rng.gen_range(1..4);
        let mut sizes = vec![n_in];
        for _ in 0..depth {
            sizes.push(rng.gen_range(2..10));
        }
        sizes.push(2);
        let params = MlpParams::init(&sizes, &mut rng).unwrap();
        let target = MlpParams::init(&sizes, &mut rng).unwrap();
        let size = rng.gen_range(1..9);
        let batch = random_batch(&mut rng, n_in, size);
        let analytic = mlp_gradients(&params, &batch, &target, 0.9).unwrap().0.flat_params();
        let numeric = central_difference(&params, &batch, &target, 0.9, 1e-6);
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "instance {instance} sizes {sizes:?}: relative error {err:e}");
        worst = worst.max(err);
    }
    assert!(worst.is_finite());
}

#[test]
fn one_layer_closed_form() {
    // Q(x) = W x + b, one transition: dL/dW[a,:] = 2 δ x, dL/db[a] = 2 δ.
    let layer = Dense::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]], vec![0.1, -0.2]).unwrap();
    let params = MlpParams::from_layers(vec![layer]).unwrap();
    let target = params.zeros_like();
    let x = [0.3, -0.7];
    let batch = vec![Transition {
        obs: Arc::from(x.as_slice()),
        action: Action::Switch,
        reward: -1.5,
        next_obs: Arc::from([0.0, 0.0].as_slice()),
        terminal: false,
        next_mask: ActionMask { switch_allowed: true },
    }];
    let q_switch = 2.0 * 0.3 + 0.25 * -0.7 - 0.2;
    let delta: f64 = q_switch - (-1.5);
    let (grads, loss) = mlp_gradients(&params, &batch, &target, 0.99).unwrap();
    assert!((loss - delta * delta).abs() < 1e-12);
    let g = &grads.layers()[0];
    assert!((g.weight(1, 0) - 2.0 * delta * x[0]).abs() < 1e-12);
    assert!((g.weight(1, 1) - 2.0 * delta * x[1]).abs() < 1e-12);
    assert!((g.biases[1] - 2.0 * delta).abs() < 1e-12);
    assert_eq!(g.weight(0, 0), 0.0);
    assert_eq!(g.biases[0], 0.0);
}

#[test]
fn zero_td_error_gives_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = MlpParams::init(&[3, 4, 2], &mut rng).unwrap();
    let obs: Arc<[f64]> = Arc::from([0.2, -0.4, 0.9].as_slice());
    let q = params.forward(&obs).unwrap();
    let batch = vec![Transition {
        obs: obs.clone(),
        action: Action::Extend,
        reward: q[0],
        next_obs: obs,
        terminal: true,
        next_mask: ActionMask { switch_allowed: false },
    }];
    let (grads, loss) = mlp_gradients(&params, &batch, &params, 0.99).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.flat_params().iter().all(|&g| g == 0.0));
}
