use edgedrift::learner::brn::BrnState;
use edgedrift::learner::front::{DenseTanh, FrontExtractor};
use edgedrift::learner::head::HeadModel;
use edgedrift::learner::{loss, Prediction};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain nested-loop matvec followed by tanh.
fn oracle_layer(w: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.nrows())
        .map(|i| {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += w[[i, j]] * xj;
            }
            acc.tanh()
        })
        .collect()
}

#[test]
fn front_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layers = vec![DenseTanh::random(7, 5, 1.5, &mut rng), DenseTanh::random(5, 3, 1.5, &mut rng)];
    let front = FrontExtractor::new(layers.clone(), 0.0).unwrap();
    for _ in 0..50 {
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
        let expect = oracle_layer(&layers[1].weights, &oracle_layer(&layers[0].weights, &x));
        let got = front.forward_front(&x).unwrap();
        for (a, b) in got.0.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!(front.forward_front(&[0.0; 6]).is_err());
}

#[test]
fn cross_entropy_matches_log() {
    for p in [1.0, 0.5, 0.25, 1e-3, 0.9999] {
        let pred = Prediction::from_scores(vec![p, 1.0 - p]);
        let l = loss(&pred, 0).unwrap();
        assert!((l - (-p.ln())).abs() < 1e-14, "p={p}");
    }
    let pred = Prediction::from_scores(vec![0.0, 1.0]);
    assert!(loss(&pred, 0).unwrap().is_finite());
    assert!(loss(&pred, 2).is_err());
}

#[test]
fn batch_loss_equals_mean_of_per_sample_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hidden = vec![DenseTanh::random(4, 6, 1.0, &mut rng)];
    let brn = BrnState::new(6, 0.1, 3.0, 5.0).unwrap();
    let mut head = HeadModel::new(hidden, 3, brn, 0.05).unwrap();
    head.init_weights(0.5, &mut rng);
    let x = Array2::from_shape_fn((10, 4), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
    let (l, grads, _) = head.gradients(x.view(), &labels).unwrap();
    assert!((l - head.batch_loss(x.view(), &labels).unwrap()).abs() < 1e-12);
    assert!(grads.is_finite());
}

proptest! {
    #[test]
    fn brn_corrections_stay_clipped(
        mean in prop::collection::vec(-100.0f64..100.0, 4),
        sigma in prop::collection::vec(1e-3f64..100.0, 4),
        r_max in 1.0f64..5.0,
        d_max in 0.0f64..5.0,
    ) {
        let mut brn = BrnState::new(4, 0.1, r_max, d_max).unwrap();
        brn.running_var = Array1::from_elem(4, 2.0);
        let (r, d) = brn.corrections(&Array1::from(mean), &Array1::from(sigma));
        for v in r.iter() {
            prop_assert!(*v >= 1.0 / r_max - 1e-12 && *v <= r_max + 1e-12);
        }
        for v in d.iter() {
            prop_assert!(v.abs() <= d_max + 1e-12);
        }
    }

    #[test]
    fn brn_training_output_has_clipped_moments(seed in 0u64..500) {
        // with r=1, d=0 every column comes out zero-mean and unit variance
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((16, 3), |_| rng.random_range(-4.0..4.0));
        let brn = BrnState::new(3, 0.1, 1.0, 0.0).unwrap();
        let out = brn.forward_train(x.view()).unwrap().output;
        for col in out.columns() {
            let m = col.mean().unwrap();
            let v = col.mapv(|c| (c - m) * (c - m)).mean().unwrap();
            prop_assert!(m.abs() < 1e-12);
            prop_assert!((v - 1.0).abs() < 1e-3);
        }
    }
}
