use adamd_numerics::{adam_step, grad_check, AdamState, NumericsError, Padding, Tape, Tensor};
use approx_eq::close;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod approx_eq {
    pub fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

/// Direct nested-loop convolution used as an oracle for the gemm path.
fn naive_conv(x: &Tensor, k: &Tensor, pad: usize) -> Vec<f64> {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let ho = h + 2 * pad + 1 - kh;
    let wo = w + 2 * pad + 1 - kw;
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        for r in 0..ho {
            for q in 0..wo {
                let mut acc = 0.0;
                for c in 0..ci {
                    for i in 0..kh {
                        for j in 0..kw {
                            let (rr, qq) = (r + i, q + j);
                            if rr < pad || qq < pad || rr - pad >= h || qq - pad >= w {
                                continue;
                            }
                            acc += x.data()[c * h * w + (rr - pad) * w + (qq - pad)] * k.data()[((o * ci + c) * kh + i) * kw + j];
                        }
                    }
                }
                out[(o * ho + r) * wo + q] = acc;
            }
        }
    }
    out
}

#[test]
fn conv_identity_kernel() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
    let k = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
    let y = tape.conv2d(x, k, Padding::Same).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
}

#[test]
fn conv_counts_overlap_with_same_padding() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[1, 3, 3], 1.0));
    let k = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = tape.conv2d(x, k, Padding::Same).unwrap();
    let v = tape.value(y);
    assert_eq!(v.shape(), &[1, 3, 3]);
    assert_eq!(v.data()[4], 9.0);
    assert_eq!(v.data()[0], 4.0);
    assert_eq!(v.data()[1], 6.0);
}

#[test]
fn conv_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (ci, co, h, w, kh, kw) in [
        (2, 3, 5, 7, 3, 3),
        (1, 4, 6, 4, 1, 3),
        (3, 2, 8, 8, 5, 3),
        (20, 2, 6, 5, 3, 3),
        (12, 1, 4, 7, 3, 3),
        (4, 3, 5, 5, 1, 1),
    ] {
        let x = Tensor::randn(&[ci, h, w], 1.0, &mut rng);
        let k = Tensor::randn(&[co, ci, kh, kw], 1.0, &mut rng);
        for (padding, pad) in [(Padding::Same, kh / 2), (Padding::Valid, 0)] {
            if padding == Padding::Same && kh != kw {
                continue;
            }
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let kv = tape.constant(k.clone());
            let y = tape.conv2d(xv, kv, padding).unwrap();
            let expect = naive_conv(&x, &k, pad);
            for (a, b) in tape.value(y).data().iter().zip(&expect) {
                assert!(close(*a, *b, 1e-12), "{a} vs {b}");
            }
        }
    }
}

#[test]
fn conv_batch_equals_per_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Tensor::randn(&[3, 2, 6, 5], 1.0, &mut rng);
    let k = Tensor::randn(&[4, 2, 3, 3], 1.0, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let kv = tape.constant(k.clone());
    let y = tape.conv2d(xv, kv, Padding::Same).unwrap();
    assert_eq!(tape.shape(y), &[3, 4, 6, 5]);
    for s in 0..3 {
        let xs = Tensor::new(&[2, 6, 5], x.data()[s * 60..(s + 1) * 60].to_vec()).unwrap();
        let expect = naive_conv(&xs, &k, 1);
        for (a, b) in tape.value(y).data()[s * 120..(s + 1) * 120].iter().zip(&expect) {
            assert!(close(*a, *b, 1e-12));
        }
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 4, 4]));
    let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
    let err = tape.conv2d(x, k, Padding::Same).unwrap_err();
    assert!(matches!(err, NumericsError::Shape { op: "conv2d", .. }), "{err}");
    assert!(err.to_string().contains("C_in = 2"));
}

#[test]
fn maxpool_examples() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[1, 2, 2], &[1., 2., 3., 4.]));
    let y = tape.maxpool2d(x).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0]);

    let c = tape.param(Tensor::full(&[1, 2, 2], 7.0));
    let p = tape.maxpool2d(c).unwrap();
    assert_eq!(tape.value(p).data(), &[7.0]);
    assert_eq!(tape.pool_indices(p).unwrap(), &[0]);
    let s = tape.sum(p);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(c).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn maxpool_rejects_odd_extent() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 4]));
    assert!(tape.maxpool2d(x).is_err());
}

#[test]
fn upsample_nearest_examples() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[1, 1, 1], &[1.0]));
    let y = tape.upsample_nearest2d(x).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 2, 2]);
    assert_eq!(tape.value(y).data(), &[1.0; 4]);

    let z = tape.param(t(&[2, 2, 1], &[1., 2., 3., 4.]));
    let u = tape.upsample_nearest2d(z).unwrap();
    let s = tape.sum(u);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(z).unwrap().data(), &[4.0; 4]);
}

#[test]
fn upsample_linear_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(vec![0.0, 1.0]));
    let y = tape.upsample_linear_time(x, 2).unwrap();
    let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    for (a, b) in tape.value(y).data().iter().zip(expect) {
        assert!(close(*a, b, 1e-15));
    }

    let c = tape.constant(Tensor::full(&[5], 0.3));
    let u = tape.upsample_linear_time(c, 4).unwrap();
    assert_eq!(tape.value(u).len(), 20);
    assert!(tape.value(u).data().iter().all(|v| close(*v, 0.3, 1e-15)));

    let r = tape.constant(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
    let same = tape.upsample_linear_time(r, 1).unwrap();
    assert_eq!(tape.value(same), tape.value(r));

    let short = tape.constant(Tensor::from_vec(vec![1.0]));
    assert!(tape.upsample_linear_time(short, 2).is_err());
}

#[test]
fn upsample_linear_keeps_endpoints_per_channel() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 3, 2], &[1., -1., 2., -2., 3., -3., 4., -4., 5., -5., 6., -6.]));
    let y = tape.upsample_linear_time(x, 4).unwrap();
    let v = tape.value(y);
    assert_eq!(v.shape(), &[2, 12, 2]);
    assert_eq!(&v.data()[0..2], &[1.0, -1.0]);
    assert_eq!(&v.data()[22..24], &[3.0, -3.0]);
    assert_eq!(&v.data()[24..26], &[4.0, -4.0]);
    assert_eq!(&v.data()[46..48], &[6.0, -6.0]);
}

#[test]
fn dense_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
    let eye = tape.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
    let zero_b = tape.constant(Tensor::zeros(&[3]));
    let y = tape.dense(x, eye, zero_b).unwrap();
    assert_eq!(tape.value(y), tape.value(x));

    let zero_w = tape.constant(Tensor::zeros(&[3, 2]));
    let b = tape.constant(t(&[2], &[0.5, -1.5]));
    let z = tape.dense(x, zero_w, b).unwrap();
    assert_eq!(tape.value(z).data(), &[0.5, -1.5, 0.5, -1.5]);

    let bad = tape.constant(Tensor::zeros(&[4, 2]));
    assert!(tape.dense(x, bad, b).is_err());
}

#[test]
fn bce_examples() {
    let mut tape = Tape::new();
    let p = tape.param(Tensor::from_vec(vec![0.5]));
    let l = tape.bce(p, &Tensor::from_vec(vec![1.0]), &[1.0], None).unwrap();
    assert!(close(tape.value(l).item().unwrap(), std::f64::consts::LN_2, 1e-12));

    let exact = tape.constant(Tensor::from_vec(vec![1.0, 0.0, 1.0]));
    let l2 = tape.bce(exact, &Tensor::from_vec(vec![1.0, 0.0, 1.0]), &[1.0], None).unwrap();
    assert!(tape.value(l2).item().unwrap() < 1e-6);
}

#[test]
fn bce_gradient_closed_form() {
    let pv = vec![0.2, 0.7, 0.9, 0.35];
    let yv = vec![0.0, 1.0, 0.0, 1.0];
    let w = 2.5;
    let mut tape = Tape::new();
    let p = tape.param(Tensor::from_vec(pv.clone()));
    let l = tape.bce(p, &Tensor::from_vec(yv.clone()), &[w], None).unwrap();
    tape.backward(l).unwrap();
    for ((g, p), y) in tape.grad(p).unwrap().data().iter().zip(&pv).zip(&yv) {
        let expect = (p - y) / (p * (1.0 - p)) * w / 4.0;
        assert!(close(*g, expect, 1e-12));
    }
}

#[test]
fn bce_mask_and_sample_split() {
    // two samples of 3 cells; the masked cell must not count toward either sum or mean
    let pred = Tensor::new(&[2, 3], vec![0.5, 0.5, 0.01, 0.2, 0.2, 0.2]).unwrap();
    let target = Tensor::new(&[2, 3], vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
    let mask = Tensor::new(&[2, 3], vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    let mut tape = Tape::new();
    let p = tape.constant(pred);
    let l = tape.bce(p, &target, &[1.0, 3.0], Some(&mask)).unwrap();
    let expect = std::f64::consts::LN_2 + 3.0 * -(0.8f64).ln();
    assert!(close(tape.value(l).item().unwrap(), expect, 1e-12));
}

#[test]
fn bce_rejects_nan() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::from_vec(vec![f64::NAN]));
    let err = tape.bce(p, &Tensor::from_vec(vec![1.0]), &[1.0], None).unwrap_err();
    assert_eq!(err, NumericsError::NonFinite { op: "bce" });
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut params = vec![Tensor::from_vec(vec![1.0, -2.0, 3.0])];
    let before = params.clone();
    let mut state = AdamState::new(1e-3);
    for _ in 0..5 {
        adam_step(&mut params, &[Tensor::zeros(&[3])], &mut state).unwrap();
    }
    assert_eq!(params, before);
    assert_eq!(state.step_count(), 5);
}

#[test]
fn adam_first_step_closed_form() {
    let mut params = vec![Tensor::scalar(0.0)];
    let mut state = AdamState::new(1e-3);
    adam_step(&mut params, &[Tensor::scalar(1.0)], &mut state).unwrap();
    let expect = -1e-3 / (1.0 + 1e-8);
    assert!(close(params[0].item().unwrap(), expect, 1e-18));
}

#[test]
fn adam_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p0 = vec![Tensor::randn(&[4, 3], 1.0, &mut rng)];
    let grads: Vec<Tensor> = (0..4).map(|_| Tensor::randn(&[4, 3], 1.0, &mut rng)).collect();
    let run = || {
        let mut p = p0.clone();
        let mut s = AdamState::new(1e-3);
        for g in &grads {
            s.step(&mut p, std::slice::from_ref(g)).unwrap();
        }
        (p, s)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert_eq!(sa.first_moments()[0].shape(), &[4, 3]);
}

#[test]
fn adam_rejects_shape_drift() {
    let mut state = AdamState::new(1e-3);
    let mut p = vec![Tensor::zeros(&[2])];
    assert!(state.step(&mut p, &[Tensor::zeros(&[3])]).is_err());
}

#[test]
fn grad_check_square() {
    let err = grad_check(
        |tape, v| {
            let sq = tape.mul(v[0], v[0])?;
            Ok(tape.sum(sq))
        },
        &[Tensor::scalar(3.0)],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn backward_is_linear_in_summed_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0 = Tensor::randn(&[6], 1.0, &mut rng);
    let f1 = |tape: &mut Tape, x| {
        let s = tape.sigmoid(x);
        tape.sum(s)
    };
    let f2 = |tape: &mut Tape, x| {
        let s = tape.mul(x, x).unwrap();
        let t = tape.tanh(s);
        tape.sum(t)
    };
    let grad_of = |which: u8| {
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let out = match which {
            1 => f1(&mut tape, x),
            2 => f2(&mut tape, x),
            _ => {
                let a = f1(&mut tape, x);
                let b = f2(&mut tape, x);
                tape.add(a, b).unwrap()
            }
        };
        tape.backward(out).unwrap();
        tape.grad(x).unwrap().clone()
    };
    let (g1, g2, g12) = (grad_of(1), grad_of(2), grad_of(3));
    for i in 0..6 {
        assert!(close(g12.data()[i], g1.data()[i] + g2.data()[i], 1e-14));
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn(&[2, 3, 8, 8], 1.0, &mut rng);
    let k = Tensor::randn(&[4, 3, 3, 3], 1.0, &mut rng);
    let run = || {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let kv = tape.constant(k.clone());
        let y = tape.conv2d(xv, kv, Padding::Same).unwrap();
        let p = tape.maxpool2d(y).unwrap();
        tape.value(p).clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn gru_gates_stay_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::randn(&[2, 10, 3], 1.0, &mut rng));
    let w_ih = tape.param(Tensor::randn(&[3, 12], 1.0, &mut rng));
    let w_hh = tape.param(Tensor::randn(&[4, 12], 1.0, &mut rng));
    let b = tape.param(Tensor::randn(&[12], 1.0, &mut rng));
    let h = tape.gru(x, w_ih, w_hh, b, false).unwrap();
    assert_eq!(tape.shape(h), &[2, 10, 4]);
    let [r, z, n] = tape.gru_gate_ranges(h).unwrap();
    assert!(r.0 > 0.0 && r.1 < 1.0);
    assert!(z.0 > 0.0 && z.1 < 1.0);
    assert!(n.0 > -1.0 && n.1 < 1.0);
    assert!(tape.value(h).data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn gru_reverse_equals_forward_on_reversed_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (t_len, i_dim, h_dim) = (7, 3, 5);
    let x = Tensor::randn(&[t_len, i_dim], 1.0, &mut rng);
    let mut rev = Vec::new();
    for t in (0..t_len).rev() {
        rev.extend_from_slice(&x.data()[t * i_dim..(t + 1) * i_dim]);
    }
    let xr = Tensor::new(&[t_len, i_dim], rev).unwrap();
    let w_ih = Tensor::randn(&[i_dim, 3 * h_dim], 0.5, &mut rng);
    let w_hh = Tensor::randn(&[h_dim, 3 * h_dim], 0.5, &mut rng);
    let b = Tensor::randn(&[3 * h_dim], 0.5, &mut rng);
    let mut tape = Tape::new();
    let (a, bb, c) = (tape.constant(w_ih), tape.constant(w_hh), tape.constant(b));
    let xv = tape.constant(x);
    let xrv = tape.constant(xr);
    let back = tape.gru(xv, a, bb, c, true).unwrap();
    let fwd = tape.gru(xrv, a, bb, c, false).unwrap();
    for t in 0..t_len {
        let lhs = &tape.value(back).data()[t * h_dim..(t + 1) * h_dim];
        let rt = t_len - 1 - t;
        let rhs = &tape.value(fwd).data()[rt * h_dim..(rt + 1) * h_dim];
        assert_eq!(lhs, rhs);
    }
}
