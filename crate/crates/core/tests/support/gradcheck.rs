//! Central finite-difference checks for every tape operation.
//!
//! Each check builds a scalar function of some leaf tensors, differentiates
//! it with the tape, and compares every partial derivative against
//! `(f(x + h) - f(x - h)) / 2h`. Inputs are drawn away from the kinks of
//! `relu` and `max`, where the two routes legitimately disagree.

#![allow(dead_code)]

use gscls_core::autodiff::{BatchNormConfig, BatchNormState, Graph, Mode, Tensor, Var};
use gscls_core::rng::{Rng, SeedStream};
use rand::Rng as _;

pub const STEP: f64 = 1e-6;
/// Gradients smaller than this are compared absolutely.
pub const DENOMINATOR_FLOOR: f64 = 1e-3;
pub const SHAPES_PER_OP: usize = 20;

pub fn random_tensor(rng: &mut Rng, shape: Vec<usize>) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Random values with every entry at least `gap` away from zero.
pub fn away_from_zero(rng: &mut Rng, shape: Vec<usize>, gap: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let v: f64 = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// An `n × c` matrix whose per-group column maxima lead the runner-up by
/// at least `gap`.
pub fn distinct_maxima(rng: &mut Rng, groups: usize, points: usize, c: usize, gap: f64) -> Tensor {
    loop {
        let t = random_tensor(rng, vec![groups * points, c]);
        let d = t.data();
        let ok = (0..groups).all(|g| {
            (0..c).all(|j| {
                let mut col: Vec<f64> = (0..points).map(|r| d[(g * points + r) * c + j]).collect();
                col.sort_by(|a, b| b.total_cmp(a));
                points == 1 || col[0] - col[1] > gap
            })
        });
        if ok {
            return t;
        }
    }
}

/// Contracts a node with fixed random weights so every output entry
/// reaches the scalar with a distinct coefficient.
pub fn weighted_sum(g: &mut Graph, x: Var, weights: &Tensor) -> Var {
    let w = g.leaf(weights.clone(), false);
    let prod = g.mul(x, w).expect("matching shapes");
    g.sum(prod).expect("sum")
}

/// Largest relative disagreement between tape and finite-difference
/// derivatives of `f` over every entry of every input.
pub fn max_relative_error<F>(inputs: &[Tensor], mode: Mode, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |values: &[Tensor]| -> f64 {
        let mut g = Graph::new(mode);
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = f(&mut g, &vars);
        g.value(out).data()[0]
    };

    let mut g = Graph::new(mode);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars);
    g.backward(out).expect("backward");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or(vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut worst = 0.0f64;
    let mut values = inputs.to_vec();
    for (k, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let x0 = values[k].data()[i];
            values[k].data_mut()[i] = x0 + STEP;
            let up = eval(&values);
            values[k].data_mut()[i] = x0 - STEP;
            let down = eval(&values);
            values[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * STEP);
            let denom = a.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Runs every operation over `SHAPES_PER_OP` random shapes; returns the
/// worst error per operation.
pub fn check_all_ops(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = SeedStream::new(seed).derive("gradcheck").rng();
    let mut results = Vec::new();
    let mut run = |name: &'static str, rng: &mut Rng, case: &mut dyn FnMut(&mut Rng) -> f64| {
        let worst = (0..SHAPES_PER_OP).map(|_| case(rng)).fold(0.0, f64::max);
        results.push((name, worst));
    };

    run("matmul", &mut rng, &mut |rng| {
        let (n, k, m) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
        let a = random_tensor(rng, vec![n, k]);
        let b = random_tensor(rng, vec![k, m]);
        let w = random_tensor(rng, vec![n, m]);
        max_relative_error(&[a, b], Mode::Train, |g, v| {
            let y = g.matmul(v[0], v[1]).unwrap();
            weighted_sum(g, y, &w)
        })
    });

    run("add_bias", &mut rng, &mut |rng| {
        let (n, c) = (rng.random_range(1..6), rng.random_range(1..6));
        let x = random_tensor(rng, vec![n, c]);
        let b = random_tensor(rng, vec![c]);
        let w = random_tensor(rng, vec![n, c]);
        max_relative_error(&[x, b], Mode::Train, |g, v| {
            let y = g.add_bias(v[0], v[1]).unwrap();
            weighted_sum(g, y, &w)
        })
    });

    run("relu", &mut rng, &mut |rng| {
        let (n, c) = (rng.random_range(1..6), rng.random_range(1..6));
        let x = away_from_zero(rng, vec![n, c], 1e-3);
        let w = random_tensor(rng, vec![n, c]);
        max_relative_error(&[x], Mode::Train, |g, v| {
            let y = g.relu(v[0]).unwrap();
            weighted_sum(g, y, &w)
        })
    });

    run("dropout", &mut rng, &mut |rng| {
        let (n, c) = (rng.random_range(1..6), rng.random_range(1..6));
        let x = random_tensor(rng, vec![n, c]);
        let w = random_tensor(rng, vec![n, c]);
        let rate = rng.random_range(0.1..0.7);
        let seed: u64 = rng.random();
        max_relative_error(&[x], Mode::Train, |g, v| {
            let y = g.dropout(v[0], rate, seed).unwrap();
            weighted_sum(g, y, &w)
        })
    });

    run("batch_norm_train", &mut rng, &mut |rng| {
        let (n, c) = (rng.random_range(2..7), rng.random_range(1..5));
        let x = random_tensor(rng, vec![n, c]);
        let gamma = random_tensor(rng, vec![c]);
        let beta = random_tensor(rng, vec![c]);
        let w = random_tensor(rng, vec![n, c]);
        max_relative_error(&[x, gamma, beta], Mode::Train, |g, v| {
            let mut state = BatchNormState::new(c);
            let y = g
                .batch_norm(v[0], v[1], v[2], &mut state, BatchNormConfig::default())
                .unwrap();
            weighted_sum(g, y, &w)
        })
    });

    run("batch_norm_eval", &mut rng, &mut |rng| {
        let (n, c) = (rng.random_range(1..6), rng.random_range(1..5));
        let x = random_tensor(rng, vec![n, c]);
        let gamma = random_tensor(rng, vec![c]);
        let beta = random_tensor(rng, vec![c]);
        let w = random_tensor(rng, vec![n, c]);
        let state = BatchNormState {
            running_mean: (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
            running_var: (0..c).map(|_| rng.random_range(0.2..2.0)).collect(),
        };
        max_relative_error(&[x, gamma, beta], Mode::Eval, |g, v| {
            let mut s = state.clone();
            let y = g.batch_norm(v[0], v[1], v[2], &mut s, BatchNormConfig::default()).unwrap();
            weighted_sum(g, y, &w)
        })
    });

    run("max_over_points", &mut rng, &mut |rng| {
        let (groups, points, c) = (rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..5));
        let x = distinct_maxima(rng, groups, points, c, 1e-3);
        let w = random_tensor(rng, vec![groups, c]);
        max_relative_error(&[x], Mode::Train, |g, v| {
            let y = g.max_over_points(v[0], points).unwrap();
            weighted_sum(g, y, &w)
        })
    });

    run("softmax_cross_entropy", &mut rng, &mut |rng| {
        let (b, k) = (rng.random_range(1..6), rng.random_range(2..7));
        let logits = random_tensor(rng, vec![b, k]).map_scale(3.0);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        max_relative_error(&[logits], Mode::Train, |g, v| g.softmax_cross_entropy(v[0], &labels).unwrap().0)
    });

    run("mul", &mut rng, &mut |rng| {
        let (n, c) = (rng.random_range(1..6), rng.random_range(1..6));
        let a = random_tensor(rng, vec![n, c]);
        let b = random_tensor(rng, vec![n, c]);
        max_relative_error(&[a, b], Mode::Train, |g, v| {
            let y = g.mul(v[0], v[1]).unwrap();
            g.sum(y).unwrap()
        })
    });

    run("sum", &mut rng, &mut |rng| {
        let (n, c) = (rng.random_range(1..6), rng.random_range(1..6));
        let x = random_tensor(rng, vec![n, c]);
        max_relative_error(&[x], Mode::Train, |g, v| {
            // Square first so the derivative depends on the input.
            let y = g.mul(v[0], v[0]).unwrap();
            g.sum(y).unwrap()
        })
    });

    run("composed_network", &mut rng, &mut |rng| {
        let (b, m, c_in, h, k) = (
            rng.random_range(2..4),
            rng.random_range(2..5),
            rng.random_range(1..5),
            rng.random_range(2..5),
            rng.random_range(2..5),
        );
        let x = random_tensor(rng, vec![b * m, c_in]);
        let w1 = random_tensor(rng, vec![c_in, h]);
        let b1 = random_tensor(rng, vec![h]);
        let gamma = random_tensor(rng, vec![h]);
        let beta = random_tensor(rng, vec![h]);
        let w2 = random_tensor(rng, vec![h, k]);
        let b2 = random_tensor(rng, vec![k]);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        max_relative_error(&[x, w1, b1, gamma, beta, w2, b2], Mode::Train, |g, v| {
            let mut state = BatchNormState::new(h);
            let z = g.matmul(v[0], v[1]).unwrap();
            let z = g.add_bias(z, v[2]).unwrap();
            let z = g.batch_norm(z, v[3], v[4], &mut state, BatchNormConfig::default()).unwrap();
            let z = g.relu(z).unwrap();
            let z = g.max_over_points(z, m).unwrap();
            let z = g.matmul(z, v[5]).unwrap();
            let z = g.add_bias(z, v[6]).unwrap();
            g.softmax_cross_entropy(z, &labels).unwrap().0
        })
    });

    results
}

trait Scale {
    fn map_scale(self, s: f64) -> Self;
}

impl Scale for Tensor {
    fn map_scale(mut self, s: f64) -> Self {
        self.data_mut().iter_mut().for_each(|v| *v *= s);
        self
    }
}
