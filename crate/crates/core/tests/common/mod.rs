//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use morarena::tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean softmax cross-entropy of a ReLU MLP given as raw row-major layers,
/// computed with plain loops.
pub fn plain_loss(layers: &[(Vec<f64>, Vec<f64>)], dims: &[usize], x: &[f64], labels: &[usize]) -> f64 {
    let n = labels.len();
    let h = plain_hidden(layers, dims, x, n, &mut |_| {});
    let c = dims[dims.len() - 1];
    let mut total = 0.0;
    for i in 0..n {
        let row = &h[i * c..(i + 1) * c];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]];
    }
    total / n as f64
}

/// Logits of `n` rows, reporting every hidden pre-activation to `seen`.
fn plain_hidden(layers: &[(Vec<f64>, Vec<f64>)], dims: &[usize], x: &[f64], n: usize, seen: &mut dyn FnMut(f64)) -> Vec<f64> {
    let mut h = x.to_vec();
    for (l, (w, b)) in layers.iter().enumerate() {
        let (k, m) = (dims[l], dims[l + 1]);
        let mut z = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let mut s = b[j];
                for t in 0..k {
                    s += h[i * k + t] * w[t * m + j];
                }
                z[i * m + j] = if l + 1 < layers.len() {
                    seen(s);
                    s.max(0.0)
                } else {
                    s
                };
            }
        }
        h = z;
    }
    h
}


fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Largest relative error between autodiff and central differences (step
/// `h`) over every parameter and input of a random MLP. Points within `100h`
/// of a ReLU kink are redrawn, since the loss is not differentiable there.
pub fn gradient_check(seed: u64, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(2..=6)];
    for _ in 0..depth {
        dims.push(rng.random_range(2..=8));
    }
    dims.push(rng.random_range(2..=5));
    let n = 3;
    let (base, x) = loop {
        let layers: Vec<(Vec<f64>, Vec<f64>)> = dims
            .windows(2)
            .map(|w| {
                let weights = (0..w[0] * w[1]).map(|_| rng.random_range(-1.0..1.0)).collect();
                let biases = (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect();
                (weights, biases)
            })
            .collect();
        let x: Vec<f64> = (0..n * dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut nearest = f64::INFINITY;
        plain_hidden(&layers, &dims, &x, n, &mut |s| nearest = nearest.min(s.abs()));
        if nearest > 100.0 * h {
            break (layers, x);
        }
    };
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..dims[dims.len() - 1])).collect();
    let xt = Tensor::new(vec![n, dims[0]], x.clone()).unwrap();

    let mut g = Graph::new();
    let xv = g.leaf(xt);
    let params: Vec<_> = base
        .iter()
        .zip(dims.windows(2))
        .map(|((w, b), d)| {
            (
                g.leaf(Tensor::new(vec![d[0], d[1]], w.clone()).unwrap()),
                g.leaf(Tensor::new(vec![d[1]], b.clone()).unwrap()),
            )
        })
        .collect();
    let mut hidden = xv;
    for (l, &(w, b)) in params.iter().enumerate() {
        let z = g.matmul(hidden, w).unwrap();
        let z = g.add_bias(z, b).unwrap();
        hidden = if l + 1 < params.len() { g.relu(z) } else { z };
    }
    let loss = g.softmax_xent(hidden, &labels).unwrap();
    let grads = g.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (l, &(wv, bv)) in params.iter().enumerate() {
        for (which, var) in [(0, wv), (1, bv)] {
            let analytic = grads.get(var).unwrap().data().to_vec();
            for (i, &a) in analytic.iter().enumerate() {
                let shifted = |d: f64| {
                    let mut p = base.clone();
                    let target = if which == 0 { &mut p[l].0 } else { &mut p[l].1 };
                    target[i] += d;
                    plain_loss(&p, &dims, &x, &labels)
                };
                let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
                worst = worst.max(rel_err(a, numeric));
            }
        }
    }
    let gx = grads.get(xv).unwrap().data().to_vec();
    for (i, &a) in gx.iter().enumerate() {
        let shifted = |d: f64| {
            let mut xs = x.clone();
            xs[i] += d;
            plain_loss(&base, &dims, &xs, &labels)
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        worst = worst.max(rel_err(a, numeric));
    }
    worst
}

/// A small world that trains in well under a second per seed.
pub fn small_config() -> morarena::arena::ArenaConfig {
    morarena::arena::ArenaConfig {
        seeds: 1,
        per_class: 60,
        judge_per_class: 150,
        trigger_size: 20,
        extraction_queries: 400,
        dawn_extraction_epochs: 30,
        di_members: 20,
        di_public: 20,
        iterations: 10,
        restarts: 2,
        calibration_independents: 2,
        calibration_extracted: 2,
        screening_holdouts: 2,
        sweep: vec![0.1, 0.3],
        defense_epochs: 3,
        ..morarena::arena::ArenaConfig::default()
    }
}
