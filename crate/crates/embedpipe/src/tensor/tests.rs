use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng))
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn matmul_direct_definition() {
    let mut g = Graph::new();
    let a = g
        .constant(&Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
        .unwrap();
    let b = g
        .constant(&Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap())
        .unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    assert_eq!(g.value(c).shape(), &[2, 1]);
}

#[test]
fn softmax_symmetry_case() {
    let mut g = Graph::new();
    let x = g.constant(&Tensor::vector(&[0.0, 0.0])).unwrap();
    let s = g.softmax(x).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
}

#[test]
fn temporal_max_pool_elementwise_max() {
    let mut g = Graph::new();
    let x = g
        .constant(&Tensor::matrix(2, 2, vec![1.0, -2.0, 0.0, 3.0]).unwrap())
        .unwrap();
    let p = g.temporal_max_pool(x).unwrap();
    assert_eq!(g.value(p).data(), &[1.0, 3.0]);
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut g = Graph::new();
    let a = g.constant(&Tensor::matrix(2, 3, vec![0.0; 6]).unwrap()).unwrap();
    let b = g.constant(&Tensor::matrix(2, 3, vec![0.0; 6]).unwrap()).unwrap();
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn non_finite_input_rejected() {
    let mut g = Graph::new();
    let t = Tensor::vector(&[1.0, f64::NAN]);
    assert!(matches!(
        g.leaf(&t, false),
        Err(TensorError::NonFinite { .. })
    ));
}

#[test]
fn backward_square_gives_two_x() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::scalar(3.0), true).unwrap();
    let y = g.mul(x, x).unwrap();
    let loss = g.sum(y).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0]);
}

#[test]
fn backward_sum_of_softmax_is_zero() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::vector(&[0.3, -1.2, 2.0]), true).unwrap();
    let s = g.softmax(x).unwrap();
    let loss = g.sum(s).unwrap();
    g.backward(loss).unwrap();
    for gv in g.grad(x).unwrap() {
        assert!(gv.abs() < 1e-14, "grad {gv}");
    }
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::vector(&[1.0, 2.0]), true).unwrap();
    let y = g.tanh(x).unwrap();
    assert!(matches!(
        g.backward(y),
        Err(TensorError::NonScalarLoss { .. })
    ));
}

#[test]
fn backward_accumulates_without_reset_and_repeats_bitwise_with_reset() {
    let run = |resets: bool| -> Vec<f64> {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::vector(&[0.5, -0.25, 2.0]), true).unwrap();
        let t = g.tanh(x).unwrap();
        let m = g.mul(t, t).unwrap();
        let loss = g.mean(m).unwrap();
        g.backward(loss).unwrap();
        let first = g.grad(x).unwrap().to_vec();
        if resets {
            g.reset_grads();
        }
        g.backward(loss).unwrap();
        let second = g.grad(x).unwrap().to_vec();
        if resets {
            assert_eq!(first, second, "reset run must reproduce bit-for-bit");
        } else {
            for (a, b) in first.iter().zip(&second) {
                assert_eq!(2.0 * a, *b, "no-reset run must accumulate");
            }
        }
        second
    };
    run(true);
    run(false);
}

/// Three-layer net: every parameter checked against central differences.
#[test]
fn random_three_layer_net_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = vec![
        randn(&mut rng, &[4, 6]),
        randn(&mut rng, &[6]),
        randn(&mut rng, &[6, 5]),
        randn(&mut rng, &[5]),
        randn(&mut rng, &[5, 3]),
        randn(&mut rng, &[3]),
    ];
    let input = randn(&mut rng, &[2, 4]);
    let err = grad_check(
        |g, leaves| {
            let x = g.constant(&input)?;
            let h1 = g.matmul(x, leaves[0])?;
            let h1 = g.add(h1, leaves[1])?;
            let h1 = g.tanh(h1)?;
            let h2 = g.matmul(h1, leaves[2])?;
            let h2 = g.add(h2, leaves[3])?;
            let h2 = g.relu(h2)?;
            let h3 = g.matmul(h2, leaves[4])?;
            let h3 = g.add(h3, leaves[5])?;
            let s = g.sigmoid(h3)?;
            let sq = g.mul(s, s)?;
            g.mean(sq)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

/// Every differentiable op against central differences on random
/// shape-valid inputs (100 cases spread across the op set).
#[test]
fn per_op_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..100 {
        let rows = rng.gen_range(1..4usize);
        let cols = rng.gen_range(1..5usize);
        let a = randn(&mut rng, &[rows, cols]);
        let b = randn(&mut rng, &[rows, cols]);
        let w = randn(&mut rng, &[cols, 3]);
        let bias = randn(&mut rng, &[3]);
        let op = case % 14;
        let targets: Vec<u32> = (0..rows).map(|_| rng.gen_range(0..3) as u32).collect();
        let ids: Vec<u32> = (0..2).map(|_| rng.gen_range(0..rows) as u32).collect();
        let err = grad_check(
            |g, l| {
                let x = l[0];
                let y = l[1];
                let node = match op {
                    0 => {
                        let m = g.matmul(x, l[2])?;
                        g.add(m, l[3])?
                    }
                    1 => g.add(x, y)?,
                    2 => g.mul(x, y)?,
                    3 => g.affine(x, -1.5, 0.25)?,
                    4 => g.concat(&[x, y], 0)?,
                    5 => g.concat(&[x, y], 1)?,
                    6 => g.tanh(x)?,
                    7 => g.relu(x)?,
                    8 => g.sigmoid(x)?,
                    9 => g.softmax(x)?,
                    10 => g.log_softmax(x)?,
                    11 => g.temporal_max_pool(x)?,
                    12 => {
                        let m = g.matmul(x, l[2])?;
                        return g.cross_entropy(m, &targets, None);
                    }
                    _ => g.embedding_lookup(x, &ids)?,
                };
                let sq = g.mul(node, node)?;
                g.mean(sq)
            },
            &[a, b, w, bias],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "op {op} case {case}: relative error {err}");
    }
}

#[test]
fn gru_cell_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..10 {
        let h = rng.gen_range(1..5usize);
        let params = vec![
            randn(&mut rng, &[3 * h]),
            randn(&mut rng, &[h]),
            randn(&mut rng, &[h, 3 * h]),
        ];
        let err = grad_check(
            |g, l| {
                let out = g.gru_cell(l[0], l[1], l[2])?;
                let sq = g.mul(out, out)?;
                g.mean(sq)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "relative error {err}");
    }
}

/// The fused cell must be bit-identical to the same math composed from
/// primitive ops.
#[test]
fn gru_cell_matches_composed_ops_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(56);
    let h = 4usize;
    let xg = randn(&mut rng, &[3 * h]);
    let hp = randn(&mut rng, &[h]);
    let uh = randn(&mut rng, &[h, 3 * h]);

    let mut g = Graph::new();
    let (xgn, hpn, uhn) = (
        g.constant(&xg).unwrap(),
        g.constant(&hp).unwrap(),
        g.constant(&uh).unwrap(),
    );
    let fused = g.gru_cell(xgn, hpn, uhn).unwrap();

    let hg = g.matmul(hpn, uhn).unwrap();
    let xz = g.slice_cols(xgn, 0, h).unwrap();
    let hz = g.slice_cols(hg, 0, h).unwrap();
    let zs = g.add(xz, hz).unwrap();
    let z = g.sigmoid(zs).unwrap();
    let xr = g.slice_cols(xgn, h, h).unwrap();
    let hr = g.slice_cols(hg, h, h).unwrap();
    let rs = g.add(xr, hr).unwrap();
    let r = g.sigmoid(rs).unwrap();
    let xc = g.slice_cols(xgn, 2 * h, h).unwrap();
    let hc = g.slice_cols(hg, 2 * h, h).unwrap();
    let rhc = g.mul(r, hc).unwrap();
    let cs = g.add(xc, rhc).unwrap();
    let c = g.tanh(cs).unwrap();
    let keep = g.affine(z, -1.0, 1.0).unwrap();
    let kept = g.mul(keep, hpn).unwrap();
    let new = g.mul(z, c).unwrap();
    let composed = g.add(kept, new).unwrap();

    assert_eq!(g.value(fused).data(), g.value(composed).data());
}

#[test]
fn powf_grad_and_domain() {
    let params = vec![Tensor::vector(&[0.7, 2.5, 0.1])];
    let err = grad_check(
        |g, l| {
            let p = g.powf(l[0], -0.5)?;
            g.sum(p)
        },
        &params,
        1e-6,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");

    let mut g = Graph::new();
    let x = g.constant(&Tensor::vector(&[1.0, 0.0])).unwrap();
    assert!(g.powf(x, 0.5).is_err());
}

#[test]
fn grad_check_exact_on_sum_of_squares() {
    let params = vec![Tensor::vector(&[1.5, -2.0, 0.25, 3.0])];
    let err = grad_check(
        |g, l| {
            let sq = g.mul(l[0], l[0])?;
            g.sum(sq)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-8, "relative error {err}");
}

#[test]
fn grad_check_mse_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = randn(&mut rng, &[8]);
    let b = randn(&mut rng, &[8]);
    let err = grad_check(
        |g, l| {
            let neg_b = g.affine(l[1], -1.0, 0.0)?;
            let diff = g.add(l[0], neg_b)?;
            let sq = g.mul(diff, diff)?;
            g.mean(sq)
        },
        &[a, b],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "relative error {err}");
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let rows = rng.gen_range(1..5usize);
        let cols = rng.gen_range(1..9usize);
        let x = randn(&mut rng, &[rows, cols]);
        let mut g = Graph::new();
        let xn = g.constant(&x).unwrap();
        let s = g.softmax(xn).unwrap();
        for r in 0..rows {
            let sum: f64 = g.value(s).data()[r * cols..(r + 1) * cols].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row sum {sum}");
        }
    }
}

#[test]
fn cross_entropy_of_certain_prediction_is_zero() {
    let mut g = Graph::new();
    // Margin 60: the correct class has probability 1 up to ~1e-26.
    let logits = g
        .constant(&Tensor::matrix(1, 3, vec![60.0, 0.0, 0.0]).unwrap())
        .unwrap();
    let ce = g.cross_entropy(logits, &[0], None).unwrap();
    assert!(g.value(ce).item() < 1e-15);
}

#[test]
fn cross_entropy_ignores_pad_positions() {
    let mut g = Graph::new();
    let logits = g
        .constant(&Tensor::matrix(2, 3, vec![0.0, 60.0, 0.0, 0.0, 0.0, 0.0]).unwrap())
        .unwrap();
    // Second position is PAD (id 0 used as ignore marker here).
    let with_pad = g.cross_entropy(logits, &[1, 0], Some(0)).unwrap();
    assert!(g.value(with_pad).item() < 1e-15);
    // All positions ignored is an error, not a silent zero.
    assert!(g.cross_entropy(logits, &[0, 0], Some(0)).is_err());
}

#[test]
fn ops_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = randn(&mut rng, &[3, 4]);
    let w = randn(&mut rng, &[4, 2]);
    let run = || {
        let mut g = Graph::new();
        let xn = g.constant(&x).unwrap();
        let wn = g.constant(&w).unwrap();
        let m = g.matmul(xn, wn).unwrap();
        let s = g.softmax(m).unwrap();
        g.value(s).data().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut x = Tensor::scalar(1.0);
    let g = Tensor::scalar(2.0);
    let mut adam = Adam::new(
        AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        },
        &[1],
    );
    adam.step(&mut [&mut x], &[&g]).unwrap();
    assert!((x.item() - 0.9).abs() < 1e-7, "got {}", x.item());
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_zero_gradient_leaves_params_unchanged() {
    let mut x = Tensor::vector(&[1.0, -2.0, 3.0]);
    let g = Tensor::vector(&[0.0, 0.0, 0.0]);
    let mut adam = Adam::new(AdamConfig::default(), &[3]);
    adam.step(&mut [&mut x], &[&g]).unwrap();
    assert_eq!(x.data(), &[1.0, -2.0, 3.0]);
}

/// Reference implementation of the Adam recurrence, evaluated step by step.
#[test]
fn adam_two_steps_match_reference_recurrence() {
    let cfg = AdamConfig {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    // Reference: hand evaluation on f(x) = x^2, so g = 2x.
    let mut rx = 1.0f64;
    let (mut rm, mut rv) = (0.0f64, 0.0f64);
    for t in 1..=2 {
        let g = 2.0 * rx;
        rm = cfg.beta1 * rm + (1.0 - cfg.beta1) * g;
        rv = cfg.beta2 * rv + (1.0 - cfg.beta2) * g * g;
        let mh = rm / (1.0 - cfg.beta1.powi(t));
        let vh = rv / (1.0 - cfg.beta2.powi(t));
        rx -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }

    let mut x = Tensor::scalar(1.0);
    let mut adam = Adam::new(cfg, &[1]);
    for _ in 0..2 {
        let g = Tensor::scalar(2.0 * x.item());
        adam.step(&mut [&mut x], &[&g]).unwrap();
    }
    assert_eq!(x.item(), rx);
}

#[test]
fn adam_shape_mismatch_rejected() {
    let mut x = Tensor::vector(&[1.0, 2.0]);
    let g = Tensor::vector(&[1.0]);
    let mut adam = Adam::new(AdamConfig::default(), &[2]);
    assert!(adam.step(&mut [&mut x], &[&g]).is_err());
}

#[test]
fn embedding_lookup_rejects_out_of_range() {
    let mut g = Graph::new();
    let table = g
        .constant(&Tensor::matrix(3, 2, vec![0.0; 6]).unwrap())
        .unwrap();
    assert!(matches!(
        g.embedding_lookup(table, &[0, 3]),
        Err(TensorError::IndexOutOfRange { .. })
    ));
}
