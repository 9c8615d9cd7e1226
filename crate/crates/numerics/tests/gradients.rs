//! Finite-difference checks of every differentiable op.

use adamd_numerics::{grad_check, Padding, Result, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 5;

/// Reduces a tensor to a scalar through a fixed random projection.
fn project(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

fn check(seed: u64, shapes: &[&[usize]], out_len: usize, body: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point: Vec<Tensor> = shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect();
    let proj = Tensor::randn(&[out_len], 1.0, &mut rng);
    let err = grad_check(
        |tape, v| {
            let y = body(tape, v)?;
            let flat = tape.reshape(y, &[out_len])?;
            project(tape, flat, &proj)
        },
        &point,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "seed {seed}: relative error {err}");
}

#[test]
fn conv2d_gradients() {
    for seed in 0..SEEDS {
        check(seed, &[&[2, 8, 8], &[3, 2, 3, 3]], 3 * 64, |t, v| t.conv2d(v[0], v[1], Padding::Same));
        check(seed, &[&[2, 2, 6, 5], &[2, 2, 3, 1]], 2 * 2 * 4 * 5, |t, v| {
            t.conv2d(v[0], v[1], Padding::Valid)
        });
        check(seed, &[&[1, 2, 12, 6], &[2, 2, 3, 3]], 2 * 72, |t, v| t.conv2d(v[0], v[1], Padding::Same));
        check(seed, &[&[2, 4, 6, 4], &[1, 4, 3, 3]], 2 * 24, |t, v| t.conv2d(v[0], v[1], Padding::Same));
        check(seed, &[&[2, 4, 5, 3], &[3, 4, 1, 1]], 2 * 3 * 15, |t, v| {
            t.conv2d(v[0], v[1], Padding::Same)
        });
        check(seed, &[&[1, 4, 32, 16], &[2, 4, 1, 1]], 2 * 512, |t, v| {
            t.conv2d(v[0], v[1], Padding::Same)
        });
        check(seed, &[&[1, 2, 32, 16], &[2, 2, 3, 3]], 2 * 512, |t, v| {
            t.conv2d(v[0], v[1], Padding::Same)
        });
        check(seed, &[&[1, 4, 32, 16], &[4]], 4 * 512, |t, v| t.bias_channels(v[0], v[1]));
        check(seed, &[&[2, 1, 8, 6], &[4, 1, 3, 3]], 2 * 4 * 48, |t, v| {
            t.conv2d(v[0], v[1], Padding::Same)
        });
        check(seed, &[&[2, 10, 6, 4], &[1, 10, 3, 3]], 2 * 24, |t, v| {
            t.conv2d(v[0], v[1], Padding::Same)
        });
        check(seed, &[&[1, 19, 5, 4], &[2, 19, 3, 3]], 2 * 20, |t, v| {
            t.conv2d(v[0], v[1], Padding::Same)
        });
    }
}

#[test]
fn bottleneck_chain_gradients() {
    for seed in 0..SEEDS {
        check(
            seed,
            &[&[1, 4, 32, 16], &[2, 4, 1, 1], &[2], &[2, 2, 3, 3], &[4, 2, 1, 1]],
            4 * 512,
            |t, v| {
                let y = t.relu(v[0]);
                let y = t.conv2d(y, v[1], Padding::Same)?;
                let y = t.bias_channels(y, v[2])?;
                let y = t.relu(y);
                let y = t.conv2d(y, v[3], Padding::Same)?;
                let y = t.relu(y);
                let y = t.conv2d(y, v[4], Padding::Same)?;
                t.add(v[0], y)
            },
        );
    }
}

#[test]
fn maxpool_gradients() {
    for seed in 0..SEEDS {
        check(seed, &[&[1, 8, 8]], 16, |t, v| t.maxpool2d(v[0]));
    }
}

#[test]
fn upsample_gradients() {
    for seed in 0..SEEDS {
        check(seed, &[&[2, 3, 4]], 2 * 6 * 8, |t, v| t.upsample_nearest2d(v[0]));
        check(seed, &[&[2, 5, 3]], 2 * 20 * 3, |t, v| t.upsample_linear_time(v[0], 4));
    }
}

#[test]
fn dense_and_activation_gradients() {
    for seed in 0..SEEDS {
        check(seed, &[&[4, 5], &[5, 3], &[3]], 12, |t, v| t.dense(v[0], v[1], v[2]));
        check(seed, &[&[3, 4]], 12, |t, v| Ok(t.sigmoid(v[0])));
        check(seed, &[&[3, 4]], 12, |t, v| Ok(t.tanh(v[0])));
        check(seed, &[&[2, 3], &[2, 4]], 14, |t, v| t.concat_last(v[0], v[1]));
        check(seed, &[&[2, 3, 2, 2], &[3]], 24, |t, v| t.bias_channels(v[0], v[1]));
    }
}

#[test]
fn bce_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let target = Tensor::new(
            &[2, 6],
            (0..12).map(|_| if rand::Rng::random::<bool>(&mut rng) { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let err = grad_check(
            |t, v| {
                let p = t.sigmoid(v[0]);
                t.bce(p, &target, &[0.7, 1.3], None)
            },
            &[Tensor::randn(&[2, 6], 1.5, &mut rng)],
            EPS,
        )
        .unwrap();
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn gru_gradients() {
    for seed in 0..SEEDS {
        for reverse in [false, true] {
            check(seed, &[&[2, 6, 3], &[3, 12], &[4, 12], &[12]], 2 * 6 * 4, |t, v| {
                t.gru(v[0], v[1], v[2], v[3], reverse)
            });
        }
    }
}
