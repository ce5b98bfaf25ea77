//! Property-based invariants for the numerical kernels, plus a few
//! deterministic cross-module identities.

use bca_core::circulant::{circ_materialize, BlockCirculantMatrix, DenseMatrix};
use bca_core::fft::{fft, fft_real, ifft, Complex};
use bca_core::grad::{
    block_circ_coeff_grad_batch, block_circ_matvec_backward, dense_grad_batch,
};
use bca_core::optim::{effective_lr, OptimizerConfig};
use bca_core::sim::{batch_rng, generate_target_system, mse_loss, sample_batch};
use proptest::prelude::*;

/// At iteration 0 every model is zero-initialized, so the upstream
/// gradients are identical across parametrizations and each block-circulant
/// coefficient gradient must equal the sum of the dense-gradient entries
/// along its circulant diagonal.
#[test]
fn iteration_zero_gradients_are_diagonal_sums() {
    let (n, p, batch, seed) = (64usize, 16usize, 8usize, 5u64);
    let target = generate_target_system(n, seed);
    let mut rng = batch_rng(seed);
    let (xs, ys) = sample_batch(&target, batch, 1.0, &mut rng).unwrap();

    // zero-initialized models predict zero, so the shared upstream
    // gradient is -2 y / (n * batch)
    let scale = 2.0 / (n as f64 * batch as f64);
    let grad_hs: Vec<Vec<f64>> = ys
        .iter()
        .map(|y| y.iter().map(|v| -scale * v).collect())
        .collect();

    let dense = dense_grad_batch(&grad_hs, &xs).unwrap();
    let block = BlockCirculantMatrix::zeros(n, n, p).unwrap();
    let coeff = block_circ_coeff_grad_batch(&block, &xs, &grad_hs).unwrap();

    let q = n / p;
    for i in 0..q {
        for j in 0..q {
            for k in 0..p {
                let mut diag_sum = 0.0;
                for m in 0..p {
                    diag_sum += dense.get(i * p + m, j * p + (m + p - k) % p);
                }
                let got = coeff[(i * q + j) * p + k];
                assert!(
                    (got - diag_sum).abs() < 1e-12,
                    "block ({i},{j}) offset {k}: {got} vs {diag_sum}"
                );
            }
        }
    }
}

fn signal(n: usize) -> impl Strategy<Value = Vec<Complex>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n..=n)
        .prop_map(|v| v.into_iter().map(|(re, im)| Complex::new(re, im)).collect())
}

fn real_signal(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n..=n)
}

fn pow2_exponent(max: u32) -> impl Strategy<Value = u32> {
    1..=max
}

fn max_abs(v: &[Complex]) -> f64 {
    v.iter().map(|c| c.abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// fft(a*x + b*y) = a*fft(x) + b*fft(y)
    #[test]
    fn fft_is_linear(
        exp in pow2_exponent(12),
        seed_a in -2.0f64..2.0,
        seed_b in -2.0f64..2.0,
    ) {
        let n = 1usize << exp;
        let x: Vec<Complex> = (0..n)
            .map(|i| Complex::new(((i * 7 + 3) % 11) as f64 / 11.0 - 0.5, ((i * 5 + 1) % 13) as f64 / 13.0 - 0.5))
            .collect();
        let y: Vec<Complex> = (0..n)
            .map(|i| Complex::new(((i * 3 + 5) % 17) as f64 / 17.0 - 0.5, ((i * 11 + 2) % 7) as f64 / 7.0 - 0.5))
            .collect();
        let combo: Vec<Complex> = x
            .iter()
            .zip(&y)
            .map(|(a, b)| a.scale(seed_a) + b.scale(seed_b))
            .collect();
        let lhs = fft(&combo).unwrap();
        let rhs: Vec<Complex> = fft(&x)
            .unwrap()
            .iter()
            .zip(&fft(&y).unwrap())
            .map(|(a, b)| a.scale(seed_a) + b.scale(seed_b))
            .collect();
        let scale = max_abs(&lhs).max(1.0);
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((*l - *r).abs() / scale < 1e-10);
        }
    }

    /// sum |x|^2 = (1/n) sum |X|^2
    #[test]
    fn parseval_holds(exp in pow2_exponent(12), seed in signal(64)) {
        let n = 1usize << exp;
        let x: Vec<Complex> = (0..n).map(|i| seed[i % seed.len()].scale(1.0 + (i % 5) as f64 * 0.1)).collect();
        let time: f64 = x.iter().map(|c| c.norm_sqr()).sum();
        let freq: f64 = fft(&x).unwrap().iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
        prop_assert!((time - freq).abs() / time.max(1e-30) < 1e-10);
    }

    /// round trip through forward and inverse transforms
    #[test]
    fn fft_round_trip(exp in pow2_exponent(10), raw in signal(1024)) {
        let n = 1usize << exp;
        let x = &raw[..n];
        let back = ifft(&fft(x).unwrap()).unwrap();
        for (a, b) in back.iter().zip(x) {
            prop_assert!((*a - *b).abs() < 1e-11);
        }
    }

    /// real-input transform has conjugate symmetry
    #[test]
    fn real_fft_conjugate_symmetry(exp in pow2_exponent(9), raw in real_signal(512)) {
        let n = 1usize << exp;
        let out = fft_real(&raw[..n]).unwrap();
        for k in 1..n {
            prop_assert!((out[k] - out[n - k].conj()).abs() < 1e-11);
        }
    }

    /// block-circulant product equals the materialized dense product
    #[test]
    fn block_matvec_equals_dense_oracle(
        n_exp in 1u32..=8,
        p_pick in 0usize..16,
        raw in real_signal(512),
    ) {
        let n = 1usize << n_exp;
        let divisors: Vec<usize> = (0..=n_exp).map(|e| 1usize << e).collect();
        let p = divisors[p_pick % divisors.len()];
        let count = n / p * (n / p) * p;
        let coeffs: Vec<f64> = (0..count).map(|i| raw[i % raw.len()] + (i % 3) as f64 * 0.01).collect();
        let x: Vec<f64> = (0..n).map(|i| raw[(i * 7) % raw.len()]).collect();
        let m = BlockCirculantMatrix::from_coeffs(n, n, p, coeffs).unwrap();
        let fast = m.matvec(&x).unwrap();
        let dense = m.materialize().matvec(&x).unwrap();
        for (a, b) in fast.iter().zip(&dense) {
            prop_assert!((a - b).abs() / (1.0 + b.abs()) < 1e-10);
        }
    }

    /// the dense degenerate case round-trips any matrix exactly
    #[test]
    fn block_size_one_represents_any_dense_matrix(raw in real_signal(64)) {
        let dense = DenseMatrix::from_vec(8, 8, raw).unwrap();
        let m = BlockCirculantMatrix::from_dense(&dense, 1).unwrap();
        prop_assert_eq!(m.materialize(), dense);
    }

    /// circ(e_k) materializes to the k-th cyclic permutation power
    #[test]
    fn shift_coefficient_is_permutation_power(n_exp in 1u32..=6, k in 0usize..64) {
        let n = 1usize << n_exp;
        let k = k % n;
        let mut c = vec![0.0; n];
        c[k] = 1.0;
        let m = circ_materialize(&c);
        for i in 0..n {
            for j in 0..n {
                let want = if (i + n - j) % n == k { 1.0 } else { 0.0 };
                prop_assert_eq!(m.get(i, j), want);
            }
        }
    }

    /// coefficient gradients are bounded by the product of block norms
    #[test]
    fn gradient_bilinear_bound(raw in real_signal(192)) {
        let (n, p) = (32usize, 8usize);
        let coeffs: Vec<f64> = raw[..n * n / p].to_vec();
        let x: Vec<f64> = raw[64..64 + n].to_vec();
        let g: Vec<f64> = raw[96..96 + n].to_vec();
        let m = BlockCirculantMatrix::from_coeffs(n, n, p, coeffs).unwrap();
        let grads = block_circ_matvec_backward(&m, &x, &g).unwrap();
        for i in 0..m.blocks_out() {
            let gn = g[i * p..(i + 1) * p].iter().map(|v| v * v).sum::<f64>().sqrt();
            for j in 0..m.blocks_in() {
                let xn = x[j * p..(j + 1) * p].iter().map(|v| v * v).sum::<f64>().sqrt();
                for &v in grads.grad_coeffs.block(i, j) {
                    prop_assert!(v.abs() <= gn * xn + 1e-12);
                }
            }
        }
    }

    /// input gradient equals the transpose product
    #[test]
    fn input_gradient_is_transpose_product(raw in real_signal(160)) {
        let (n, p) = (16usize, 4usize);
        let coeffs: Vec<f64> = raw[..n * n / p].to_vec();
        let x: Vec<f64> = raw[64..64 + n].to_vec();
        let g: Vec<f64> = raw[96..96 + n].to_vec();
        let m = BlockCirculantMatrix::from_coeffs(n, n, p, coeffs).unwrap();
        let grads = block_circ_matvec_backward(&m, &x, &g).unwrap();
        let want = m.transpose().matvec(&g).unwrap();
        for (a, b) in grads.grad_input.iter().zip(&want) {
            prop_assert!((a - b).abs() / (1.0 + b.abs()) < 1e-10);
        }
    }

    /// dividing the rate by p then scaling back recovers the base rate
    #[test]
    fn heuristic_rate_round_trips(base_lr in 1e-6f64..10.0, p in 1usize..5000) {
        let config = OptimizerConfig::sgd(base_lr).with_heuristic(p);
        let eff = effective_lr(&config).unwrap();
        prop_assert!((eff * p as f64 - base_lr).abs() <= 2.0 * f64::EPSILON * base_lr);
    }

    /// mse agrees with the direct summation oracle
    #[test]
    fn mse_matches_direct_sum(a in real_signal(33), b in real_signal(33)) {
        let got = mse_loss(&a, &b).unwrap();
        let mut sum = 0.0;
        for i in 0..a.len() {
            sum += (a[i] - b[i]) * (a[i] - b[i]);
        }
        prop_assert!((got - sum / 33.0).abs() <= 1e-15 * (1.0 + sum));
    }
}
