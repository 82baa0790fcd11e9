mod common;

use common::*;
use nfm_core::fm::fm_score;
use nfm_core::linalg::Matrix;
use nfm_core::nfm::pooling::{bi_interaction_grad, bi_interaction_pairwise};
use nfm_core::nfm::{
    backward, batchnorm_forward, bi_interaction, dropout, embed, forward_batch, nfm_forward, pool,
    Activation, BatchNormState, Mode, NfmParams, Pooling,
};
use nfm_core::rng::seeded;
use nfm_core::SparseInstance;
use proptest::prelude::*;
use rand::Rng as _;

fn embed_set() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=32, 0usize..=20)
        .prop_flat_map(|(k, n)| prop::collection::vec(prop::collection::vec(-3.0f64..3.0, k), n))
}

proptest! {
    #[test]
    fn linear_time_pooling_equals_pairwise_sum(embeds in embed_set()) {
        let k = embeds.first().map_or(4, Vec::len);
        let fast = bi_interaction(&embeds, Some(k)).unwrap();
        let slow = bi_interaction_pairwise(&embeds, k);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn nfm0_with_unit_h_is_fm(seed in any::<u64>(), n in 1usize..30, k in 1usize..16) {
        let mut rng = seeded(seed, 9);
        let fm = random_fm(&mut rng, n, k);
        let x = random_instance(&mut rng, n, 20);
        let nfm = NfmParams::from_fm(fm.clone());
        let y = nfm.predict(&x).unwrap();
        prop_assert!((y - fm_score(&fm, &x).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn eval_mode_is_bit_reproducible(seed in any::<u64>()) {
        let mut rng = seeded(seed, 9);
        let p = random_nfm(&mut rng, 12, 4, &[5, 3], Activation::Tanh, true, Pooling::BiInteraction);
        let x = random_instance(&mut rng, 12, 6);
        let a = nfm_forward(&p, &x, Mode::Eval, &[0.5, 0.5, 0.5], &mut seeded(1, 1)).unwrap();
        let b = nfm_forward(&p, &x, Mode::Eval, &[0.5, 0.5, 0.5], &mut seeded(2, 1)).unwrap();
        prop_assert_eq!(a.scores[0].to_bits(), b.scores[0].to_bits());
    }

    #[test]
    fn train_mode_batchnorm_standardizes(seed in any::<u64>(), rows in 8usize..64, cols in 1usize..16) {
        let mut rng = seeded(seed, 9);
        let shift = rng.random_range(-5.0..5.0);
        let batch = Matrix::from_fn(rows, cols, |_, _| shift + rng.random_range(-3.0..3.0));
        let mut state = BatchNormState::new(cols, 0.9, 1e-5);
        let out = batchnorm_forward(&mut state, &batch, Mode::Train).unwrap();
        let moments = |m: &Matrix, c: usize| {
            let col: Vec<f64> = (0..rows).map(|r| m.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / rows as f64;
            (mean, col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64)
        };
        for c in 0..cols {
            let (_, input_var) = moments(&batch, c);
            let (mean, var) = moments(&out, c);
            prop_assert!(mean.abs() <= 1e-9, "mean {mean}");
            // exactly σ²/(σ²+ε), which is within ε of 1 whenever σ² ≥ 1 − ε
            prop_assert!((var - input_var / (input_var + 1e-5)).abs() <= 1e-12, "var {var}");
            if input_var >= 1.0 - 1e-5 {
                prop_assert!((var - 1.0).abs() <= 1e-5, "var {var}");
            }
        }
    }
}

#[test]
fn pooling_examples() {
    let u = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
    assert_eq!(bi_interaction(&u, None).unwrap(), vec![3.0, 8.0]);
    assert_eq!(bi_interaction(&u[..1], None).unwrap(), vec![0.0, 0.0]);
    assert_eq!(bi_interaction(&[], Some(3)).unwrap(), vec![0.0; 3]);
    assert_eq!(
        pool(&u, Pooling::Concat { fields: 2 }, 2).unwrap(),
        vec![1.0, 2.0, 3.0, 4.0]
    );
    let v = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
    assert_eq!(pool(&v, Pooling::Average, 2).unwrap(), vec![1.0, 1.0]);
    assert!(bi_interaction(&[vec![1.0], vec![1.0, 2.0]], None).is_err());
}

#[test]
fn embedding_examples() {
    let mut fm = nfm_core::FmParams::zeros(3, 2);
    fm.embeddings.row_mut(1).copy_from_slice(&[1.0, -1.0]);
    let x = SparseInstance::new(vec![(1, 2.0)], 0.0).unwrap();
    assert_eq!(embed(&fm, &x).unwrap(), vec![vec![2.0, -2.0]]);
    let one = SparseInstance::one_hot(&[1], 0.0).unwrap();
    assert_eq!(embed(&fm, &one).unwrap(), vec![fm.embedding(1).to_vec()]);
    assert!(embed(&fm, &SparseInstance::one_hot(&[], 0.0).unwrap())
        .unwrap()
        .is_empty());
    assert!(embed(&fm, &SparseInstance::one_hot(&[3], 0.0).unwrap()).is_err());
}

#[test]
fn all_zero_input_only_moves_the_bias() {
    let mut rng = seeded(3, 9);
    let p = random_nfm(
        &mut rng,
        6,
        3,
        &[4],
        Activation::Tanh,
        false,
        Pooling::BiInteraction,
    );
    let x = SparseInstance::one_hot(&[], 0.0).unwrap();
    let t = nfm_forward(&p, &x, Mode::Train, &[], &mut seeded(0, 1)).unwrap();
    let g = backward(&p, &t, &[1.0]).unwrap();
    assert_eq!(g.w0, 1.0);
    assert!(g.embeddings.is_empty() && g.linear.is_empty());
    // the pooled vector is zero, so only the bias path into h carries gradient
    assert!(g.layers[0].weights.as_slice().iter().all(|&w| w == 0.0));
}

struct Case {
    activation: Activation,
    layers: Vec<usize>,
    bn: bool,
    dropout: bool,
    pooling: Pooling,
    batch: usize,
}

/// Worst relative error between the batched backward pass and central
/// differences of a random linear functional of the batch scores.
fn gradient_check(seed: u64, case: &Case) -> Option<f64> {
    let mut rng = seeded(seed, 11);
    let n = 10;
    let k = rng.random_range(1..=6);
    let fields = match case.pooling {
        Pooling::Concat { fields } => Some(fields),
        _ => None,
    };
    let p = random_nfm(
        &mut rng,
        n,
        k,
        &case.layers,
        case.activation,
        case.bn,
        case.pooling,
    );
    let xs: Vec<SparseInstance> = (0..case.batch)
        .map(|_| match fields {
            Some(f) => instance_with(&mut rng, n, f),
            None => random_instance(&mut rng, n, 6),
        })
        .collect();
    let refs: Vec<&SparseInstance> = xs.iter().collect();
    let ratios: Vec<f64> = if case.dropout {
        vec![0.3; 1 + case.layers.len()]
    } else {
        vec![]
    };
    let weights: Vec<f64> = (0..case.batch)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let trace = forward_batch(&p, &refs, Mode::Train, &ratios, &mut seeded(seed, 1)).unwrap();
    if case.activation == Activation::Relu && trace.min_abs_pre_activation() <= 1e-3 {
        return None;
    }
    let analytic = flatten_grads(&p, &backward(&p, &trace, &weights).unwrap());
    let numeric = finite_differences(&p, 1e-5, &|q| {
        weighted_scores(q, &refs, &ratios, seed, &weights)
    });
    let (_, worst) = worst_rel_err(&analytic, &numeric, 1e-4);
    Some(worst)
}

fn run_cases(case: Case, trials: u64) {
    let mut checked = 0;
    for seed in 0..trials * 4 {
        if checked == trials {
            break;
        }
        if let Some(err) = gradient_check(seed, &case) {
            assert!(
                err <= 1e-4,
                "seed {seed} {:?} layers {:?} bn {} dropout {} pooling {:?}: rel err {err:e}",
                case.activation,
                case.layers,
                case.bn,
                case.dropout,
                case.pooling
            );
            checked += 1;
        }
    }
    assert_eq!(checked, trials, "too few points away from ReLU kinks");
}

#[test]
fn backward_matches_finite_differences_for_every_activation() {
    for activation in Activation::ALL {
        for layers in [vec![], vec![4], vec![5, 3]] {
            run_cases(
                Case {
                    activation,
                    layers,
                    bn: false,
                    dropout: false,
                    pooling: Pooling::BiInteraction,
                    batch: 1,
                },
                8,
            );
        }
    }
}

#[test]
fn backward_respects_dropout_masks() {
    for activation in [Activation::Tanh, Activation::Relu] {
        run_cases(
            Case {
                activation,
                layers: vec![4, 3],
                bn: false,
                dropout: true,
                pooling: Pooling::BiInteraction,
                batch: 5,
            },
            8,
        );
    }
}

#[test]
fn backward_through_batch_norm_matches_finite_differences() {
    for activation in Activation::ALL {
        run_cases(
            Case {
                activation,
                layers: vec![4, 3],
                bn: true,
                dropout: true,
                pooling: Pooling::BiInteraction,
                batch: 6,
            },
            6,
        );
    }
}

#[test]
fn backward_for_ablation_poolings() {
    for pooling in [Pooling::Average, Pooling::Concat { fields: 3 }] {
        for bn in [false, true] {
            run_cases(
                Case {
                    activation: Activation::Sigmoid,
                    layers: vec![4],
                    bn,
                    dropout: false,
                    pooling,
                    batch: 4,
                },
                6,
            );
        }
    }
}

#[test]
fn bi_interaction_partials_match_finite_differences() {
    let mut rng = seeded(21, 9);
    for _ in 0..50 {
        let n = 8;
        let k = rng.random_range(1..=8);
        let fm = random_fm(&mut rng, n, k);
        let x = random_instance(&mut rng, n, 6);
        let pooled =
            |fm: &nfm_core::FmParams| bi_interaction(&embed(fm, &x).unwrap(), Some(k)).unwrap();
        for (i, _) in x.iter() {
            let analytic = bi_interaction_grad(&fm, &x, i).unwrap();
            for f in 0..k {
                let h = 1e-5;
                let mut up = fm.clone();
                up.embeddings.set(i, f, fm.embeddings.get(i, f) + h);
                let mut down = fm.clone();
                down.embeddings.set(i, f, fm.embeddings.get(i, f) - h);
                let numeric = (pooled(&up)[f] - pooled(&down)[f]) / (2.0 * h);
                assert!(
                    rel_err(analytic[f], numeric, 1e-4) <= 1e-4,
                    "{} vs {numeric}",
                    analytic[f]
                );
                // the Jacobian is diagonal in f
                for g in (0..k).filter(|&g| g != f) {
                    assert!((pooled(&up)[g] - pooled(&down)[g]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn inverted_dropout_preserves_the_expectation() {
    let mut rng = seeded(5, 9);
    let k = 8;
    let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
    let ratio = 0.3;
    let draws = 100_000;
    let mut mrng = seeded(5, 1);
    let mut mean = vec![0.0; k];
    for _ in 0..draws {
        let m = dropout::sample_mask(1, k, ratio, &mut mrng).unwrap();
        for f in 0..k {
            mean[f] += v[f] * m.get(0, f) / draws as f64;
        }
    }
    for f in 0..k {
        assert!(
            rel_err(mean[f], v[f], 0.0) <= 1e-2,
            "dim {f}: {} vs {}",
            mean[f],
            v[f]
        );
    }
}

#[test]
fn forward_rejects_bad_dropout_and_concat_mismatch() {
    let mut rng = seeded(8, 9);
    let p = random_nfm(
        &mut rng,
        6,
        2,
        &[3],
        Activation::Relu,
        false,
        Pooling::Concat { fields: 2 },
    );
    let a = SparseInstance::one_hot(&[0, 1], 1.0).unwrap();
    let b = SparseInstance::one_hot(&[0, 1, 2], 1.0).unwrap();
    assert!(forward_batch(&p, &[&a, &b], Mode::Train, &[], &mut seeded(0, 1)).is_err());
    assert!(forward_batch(&p, &[&a], Mode::Train, &[0.1], &mut seeded(0, 1)).is_err());
    assert!(forward_batch(&p, &[&a], Mode::Train, &[1.0, 0.1], &mut seeded(0, 1)).is_err());
}
