use std::time::Instant;

use archbuild::tinynn::{
    adam_step, bc_fit, cross_entropy, grad, grad_check, softmax, AdamConfig, AdamState, Batch, MlpParams,
    NetworkCheckpoint,
};
use proptest::prelude::*;
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_draw(rng: &mut ChaCha8Rng) -> (MlpParams, Batch) {
    let in_dim = rng.gen_range(1..=8);
    let depth = rng.gen_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(2..=12)).collect();
    let n_out = rng.gen_range(2..=6);
    let mut params = MlpParams::init_with_hidden(rng, in_dim, &hidden, n_out);
    let b = Uniform::new(-0.5, 0.5);
    for layer in &mut params.layers {
        layer.bias.mapv_inplace(|_| b.sample(rng));
    }
    let n = rng.gen_range(1..=8);
    let u = Uniform::new(-1.0, 1.0);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..in_dim).map(|_| u.sample(rng)).collect()).collect();
    let targets = (0..n).map(|_| rng.gen_range(0..n_out)).collect();
    (params, Batch::new(&rows, targets).unwrap())
}

#[test]
fn gradient_matches_finite_differences_on_random_draws() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (params, batch) = random_draw(&mut rng);
        worst = worst.max(grad_check(&params, &batch).unwrap());
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
    assert!(started.elapsed().as_secs_f64() < 10.0, "took {:?}", started.elapsed());
}

#[test]
fn adam_scalar_trajectory_matches_hand_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p = MlpParams::init_with_hidden(&mut rng, 1, &[], 2);
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = 0.0);
    }
    let cfg = AdamConfig::default();
    let mut state = AdamState::new(cfg, &p);
    let (mut theta, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
    for t in 1..=10 {
        let g_val = (t as f64 * 0.7).sin() + 0.5;
        let mut g = p.zeros_like();
        g.layers[0].weights[[0, 0]] = g_val;
        adam_step(&mut p, &g, &mut state).unwrap();
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g_val;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g_val * g_val;
        let mh = m / (1.0 - cfg.beta1.powi(t));
        let vh = v / (1.0 - cfg.beta2.powi(t));
        theta -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        assert!((p.layers[0].weights[[0, 0]] - theta).abs() < 1e-12);
    }
    assert_eq!(state.t, 10);
}

#[test]
fn duplicating_rows_leaves_gradient_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (params, batch) = random_draw(&mut rng);
    let rows: Vec<Vec<f64>> = batch.inputs().rows().into_iter().map(|r| r.to_vec()).collect();
    let doubled_rows: Vec<Vec<f64>> = rows.iter().chain(&rows).cloned().collect();
    let doubled_targets: Vec<usize> = batch.targets().iter().chain(batch.targets()).copied().collect();
    let doubled = Batch::new(&doubled_rows, doubled_targets).unwrap();
    let (a, b) = (grad(&params, &batch).unwrap(), grad(&params, &doubled).unwrap());
    for (x, y) in a.tensors().zip(b.tensors()) {
        for (p, q) in x.iter().zip(y) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn separable_data_is_fit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs: Vec<Vec<f64>> = (0..6).map(|i| (0..6).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let rows: Vec<Vec<f64>> = (0..50).map(|k| inputs[k % 6].clone()).collect();
    let targets: Vec<usize> = (0..50).map(|k| (k % 6 + 2) % 6).collect();
    let data = Batch::new(&rows, targets.clone()).unwrap();
    let mut params = MlpParams::init(&mut rng, 6, 6);
    let mut adam = AdamState::new(AdamConfig::default(), &params);
    bc_fit(&data, &mut params, &mut adam, 200, 64, &mut rng).unwrap();
    let correct = rows
        .iter()
        .zip(&targets)
        .filter(|(r, t)| {
            let p = params.forward_probs(r).unwrap();
            (0..6).all(|k| p[**t] >= p[k])
        })
        .count();
    assert_eq!(correct, 50);
}

#[test]
fn checkpoint_survives_json_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (params, _) = random_draw(&mut rng);
    let text = serde_json::to_string(&NetworkCheckpoint::from_params(&params)).unwrap();
    let back: NetworkCheckpoint = serde_json::from_str(&text).unwrap();
    assert_eq!(back.to_params().unwrap(), params);
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 2..10)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn cross_entropy_is_nonnegative(logits in prop::collection::vec(-20.0f64..20.0, 2..8), t in 0usize..8) {
        let p = softmax(&logits);
        let t = t % p.len();
        prop_assert!(cross_entropy(&p, t) >= 0.0);
    }

    #[test]
    fn zero_gradient_step_is_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut params, _) = random_draw(&mut rng);
        let before = params.clone();
        let mut state = AdamState::new(AdamConfig::default(), &params);
        let zero = params.zeros_like();
        adam_step(&mut params, &zero, &mut state).unwrap();
        prop_assert_eq!(params, before);
        prop_assert_eq!(state.t, 1);
    }
}
