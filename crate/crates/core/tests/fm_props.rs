mod common;

use common::*;
use nfm_core::fm::{fm_gradients, fm_score, FmParams};
use nfm_core::rng::seeded;
use nfm_core::SparseInstance;
use proptest::prelude::*;
use rand::Rng as _;

proptest! {
    #[test]
    fn linear_time_score_equals_double_loop(seed in any::<u64>(), n in 1usize..40, k in 1usize..16) {
        let mut rng = seeded(seed, 9);
        let p = random_fm(&mut rng, n, k);
        let x = random_instance(&mut rng, n, 20);
        let fast = fm_score(&p, &x).unwrap();
        let slow = brute_fm(&p, &x);
        prop_assert!((fast - slow).abs() <= 1e-10, "{fast} vs {slow}");
    }

    /// The score is affine in any single parameter: three evenly spaced
    /// values of θ give collinear scores.
    #[test]
    fn score_is_affine_in_each_parameter(seed in any::<u64>()) {
        let mut rng = seeded(seed, 9);
        let (n, k) = (8, 3);
        let p = random_fm(&mut rng, n, k);
        let x = random_instance(&mut rng, n, 6);
        let slot = rng.random_range(0..1 + n + n * k);
        let at = |t: f64| {
            let mut q = p.clone();
            match slot {
                0 => q.w0 = t,
                s if s <= n => q.linear[s - 1] = t,
                s => q.embeddings.as_mut_slice()[s - 1 - n] = t,
            }
            fm_score(&q, &x).unwrap()
        };
        let (a, b, c) = (at(-1.3), at(0.2), at(1.7));
        prop_assert!((b - (a + c) / 2.0).abs() <= 1e-10 * (1.0 + a.abs() + c.abs()));
    }

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>()) {
        let mut rng = seeded(seed, 9);
        let (n, k) = (7, 4);
        let p = random_fm(&mut rng, n, k);
        let x = random_instance(&mut rng, n, 5);
        let g = fm_gradients(&p, &x).unwrap();
        let h = 1e-5;
        let fd = |f: &dyn Fn(&mut FmParams, f64)| {
            let mut up = p.clone();
            f(&mut up, h);
            let mut down = p.clone();
            f(&mut down, -h);
            (fm_score(&up, &x).unwrap() - fm_score(&down, &x).unwrap()) / (2.0 * h)
        };
        prop_assert!(rel_err(g.w0, fd(&|q, d| q.w0 += d), 1e-5) <= 1e-5);
        for &(i, gi) in &g.linear {
            prop_assert!(rel_err(gi, fd(&|q, d| q.linear[i] += d), 1e-5) <= 1e-5);
        }
        for (i, row) in &g.embeddings {
            for (f, &gif) in row.iter().enumerate() {
                let num = fd(&|q, d| q.embeddings.set(*i, f, q.embeddings.get(*i, f) + d));
                prop_assert!(rel_err(gif, num, 1e-5) <= 1e-5, "v[{i}][{f}]: {gif} vs {num}");
            }
        }
        // inactive parameters are absent
        prop_assert_eq!(g.linear.len(), x.nnz());
        prop_assert_eq!(g.embeddings.len(), x.nnz());
    }
}

#[test]
fn scoring_examples() {
    let p = FmParams {
        w0: 0.0,
        linear: vec![0.0, 0.0],
        embeddings: nfm_core::linalg::Matrix::from_vec(2, 1, vec![2.0, 3.0]),
    };
    let x = SparseInstance::one_hot(&[0, 1], 1.0).unwrap();
    assert_eq!(fm_score(&p, &x).unwrap(), 6.0);
    let mut q = random_fm(&mut seeded(1, 9), 5, 3);
    q.w0 = 0.7;
    assert_eq!(
        fm_score(&q, &SparseInstance::one_hot(&[], 0.0).unwrap()).unwrap(),
        0.7
    );
    let single = SparseInstance::one_hot(&[3], 0.0).unwrap();
    assert!((fm_score(&q, &single).unwrap() - (0.7 + q.linear[3])).abs() < 1e-15);
    assert!(fm_score(&q, &SparseInstance::one_hot(&[5], 0.0).unwrap()).is_err());
}

#[test]
fn gradient_examples() {
    let p = random_fm(&mut seeded(2, 9), 5, 3);
    let empty = fm_gradients(&p, &SparseInstance::one_hot(&[], 0.0).unwrap()).unwrap();
    assert_eq!(empty.w0, 1.0);
    assert!(empty.linear.is_empty() && empty.embeddings.is_empty());
    let one = fm_gradients(&p, &SparseInstance::one_hot(&[2], 0.0).unwrap()).unwrap();
    assert_eq!(one.embeddings.len(), 1);
    assert!(one.embeddings[0].1.iter().all(|&g| g == 0.0));
}

#[test]
fn frappe_sized_parameter_count() {
    assert_eq!(FmParams::zeros(2, 1).count_parameters(), 5);
    assert_eq!(FmParams::zeros(5382, 128).count_parameters(), 694_279);
}
