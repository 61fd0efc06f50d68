use std::sync::Arc;

use pic_core::models::{CartPole, CartPoleParams, LqCost, LqParams, ScalarIntegrator};
use pic_core::{
    euler_maruyama_step, rollout_batch, shift_receding_horizon, ControlSequence, CostModel,
    NoiseConfig, NoiseSequence, RolloutOptions,
};
use proptest::prelude::*;

fn lq_cost() -> CostModel {
    CostModel::new(Arc::new(LqCost { params: LqParams::default() }), 1)
}

#[test]
fn lq_costs_match_hand_rolled_simulation() {
    let dt = 0.1;
    let nominal = ControlSequence::new(3, 1, dt, vec![0.5, -0.25, 1.0]).unwrap();
    let table = vec![0.3, -0.1, 0.2, -0.4, 0.0, 0.7];
    let noise = NoiseSequence::from_samples(2, 3, 1, table.clone()).unwrap();
    let x0 = 1.5;
    let batch = rollout_batch(
        &ScalarIntegrator,
        &lq_cost(),
        &nominal,
        &noise,
        &[x0],
        0.0,
        &RolloutOptions::default(),
    )
    .unwrap();

    for k in 0..2 {
        // Straight-line reimplementation of the three steps.
        let u = [0.5, -0.25, 1.0];
        let d = &table[k * 3..k * 3 + 3];
        let mut x = x0;
        let mut stages = [0.0; 3];
        let mut xs = [x0; 4];
        for i in 0..3 {
            let a = u[i] + d[i];
            stages[i] = (0.5 * x * x + 0.5 * a * a) * dt;
            x += a * dt;
            xs[i + 1] = x;
        }
        for i in 0..3 {
            assert!((batch.stage_cost(k, i) - stages[i]).abs() < 1e-15);
            assert!((batch.state(k, i + 1)[0] - xs[i + 1]).abs() < 1e-15);
        }
        let ctg0 = stages[0] + stages[1] + stages[2];
        assert!((batch.cost_to_go(k, 0) - ctg0).abs() < 1e-14);
        assert!((batch.cost_to_go(k, 2) - stages[2]).abs() < 1e-15);
        assert_eq!(batch.terminal_cost(k), 0.0);
    }
}

#[test]
fn standard_normal_draws_are_centered() {
    let dt = 0.04;
    let noise = NoiseSequence::generate(&NoiseConfig::gaussian(vec![1.0]), 1000, 100, dt, 42).unwrap();
    let xi: Vec<f64> = noise.samples().iter().map(|v| v * dt.sqrt()).collect();
    let n = xi.len() as f64;
    let mean = xi.iter().sum::<f64>() / n;
    let var = xi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var - 1.0).abs() < 0.02, "variance {var}");
}

#[test]
fn noise_increment_variance_scales_with_dt() {
    // Var(du dt) = sigma^2 dt, the Brownian increment variance.
    let sigma = 0.7;
    for dt in [0.01, 0.1] {
        let noise = NoiseSequence::generate(&NoiseConfig::gaussian(vec![sigma]), 2000, 50, dt, 3).unwrap();
        let n = noise.samples().len() as f64;
        let var = noise.samples().iter().map(|v| (v * dt).powi(2)).sum::<f64>() / n;
        let expect = sigma * sigma * dt;
        assert!((var / expect - 1.0).abs() < 0.01, "dt {dt}: {var} vs {expect}");
    }
}

#[test]
fn upright_cartpole_step_is_exact() {
    let m = CartPole::new(CartPoleParams::default());
    let x = [0.0; 4];
    let next = euler_maruyama_step(&m, 0.0, &x, &[0.0], &[0.0], 0.02).unwrap();
    assert_eq!(next, x.to_vec());
}

#[test]
fn batch_is_independent_of_thread_count() {
    let model = CartPole::new(CartPoleParams::default());
    let cost = CostModel::new(
        Arc::new(pic_core::models::CartPoleCost {
            weights: Default::default(),
        }),
        1,
    );
    let nominal = ControlSequence::zeros(30, 1, 0.02).unwrap();
    let noise = NoiseSequence::generate(&NoiseConfig::gaussian(vec![2.0]), 64, 30, 0.02, 9).unwrap();
    let x0 = [0.0, 0.0, 3.0, 0.0];
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                rollout_batch(&model, &cost, &nominal, &noise, &x0, 0.0, &RolloutOptions::default()).unwrap()
            })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn shift_drops_first_and_repeats_last() {
    let seq = ControlSequence::new(4, 2, 0.1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
    let s = shift_receding_horizon(&seq);
    assert_eq!(s.as_slice(), &[3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 7.0, 8.0]);
    assert_eq!(s.dt(), 0.1);
}

proptest! {
    #[test]
    fn costs_to_go_are_suffix_sums(
        xs in -3.0f64..3.0,
        table in proptest::collection::vec(-2.0f64..2.0, 3 * 8),
    ) {
        let nominal = ControlSequence::zeros(8, 1, 0.05).unwrap();
        let noise = NoiseSequence::from_samples(3, 8, 1, table).unwrap();
        let batch = rollout_batch(&ScalarIntegrator, &lq_cost(), &nominal, &noise, &[xs], 0.0, &RolloutOptions::default()).unwrap();
        for k in 0..3 {
            let mut acc = batch.terminal_cost(k);
            for i in (0..8).rev() {
                acc += batch.stage_cost(k, i);
                prop_assert!((batch.cost_to_go(k, i) - acc).abs() <= 1e-12 * (1.0 + acc.abs()));
            }
        }
    }

    #[test]
    fn shift_preserves_shape(h in 1usize..20, m in 1usize..4) {
        let v: Vec<f64> = (0..h * m).map(|i| i as f64).collect();
        let s = shift_receding_horizon(&ControlSequence::new(h, m, 0.1, v.clone()).unwrap());
        prop_assert_eq!(s.horizon(), h);
        prop_assert_eq!(s.control_dim(), m);
        prop_assert_eq!(&s.as_slice()[(h - 1) * m..], &v[(h - 1) * m..]);
    }
}
