//! Scalar f64 reference for straight-through score gradients, shared by the
//! core oracle test and the acceptance suite.

#![allow(clippy::needless_range_loop)]

use fsl_core::matrix::Matrix;
use fsl_core::nn::{Activation, LayerSpec, Minibatch, Supernetwork};
use fsl_core::prng::RngStream;

/// Reference network in f64 with per-edge loops and its own mask.
pub struct Reference {
    pub specs: Vec<LayerSpec>,
    pub weights: Vec<Vec<f64>>,
    pub scores: Vec<Vec<f64>>,
}

impl Reference {
    fn mask(scores: &[f64], k: f64) -> Vec<bool> {
        let n = scores.len();
        let drop = ((1.0 - k) * n as f64).floor() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        // Stable ascending sort: equal scores keep index order.
        idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
        let mut keep = vec![true; n];
        for &i in &idx[..drop] {
            keep[i] = false;
        }
        keep
    }

    fn act(a: Activation, x: f64) -> f64 {
        match a {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn act_grad(a: Activation, x: f64) -> f64 {
        match a {
            Activation::Relu => f64::from(u8::from(x > 0.0)),
            Activation::Identity => 1.0,
        }
    }

    pub fn score_grads(&self, k: f64, xs: &[Vec<f64>], labels: &[usize]) -> Vec<Vec<f64>> {
        let masked: Vec<Vec<f64>> = self
            .weights
            .iter()
            .zip(&self.scores)
            .map(|(w, s)| {
                let m = Self::mask(s, k);
                w.iter().zip(m).map(|(&w, keep)| if keep { w } else { 0.0 }).collect()
            })
            .collect();
        let mut out: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let batch = xs.len() as f64;
        for (x, &y) in xs.iter().zip(labels) {
            // Forward, keeping Z (inputs) and I (pre-activations) per layer.
            let mut zs = vec![x.clone()];
            let mut is = Vec::new();
            for (l, spec) in self.specs.iter().enumerate() {
                let z = zs.last().unwrap();
                let mut pre = vec![0.0; spec.fan_out];
                for v in 0..spec.fan_out {
                    for u in 0..spec.fan_in {
                        pre[v] += masked[l][v * spec.fan_in + u] * z[u];
                    }
                }
                zs.push(pre.iter().map(|&p| Self::act(spec.activation, p)).collect());
                is.push(pre);
            }
            let logits = zs.last().unwrap();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
            let mut d_out: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(j, &l)| ((l - max).exp() / sum - f64::from(u8::from(j == y))) / batch)
                .collect();
            for l in (0..self.specs.len()).rev() {
                let spec = self.specs[l];
                let d_pre: Vec<f64> = d_out
                    .iter()
                    .zip(&is[l])
                    .map(|(&d, &p)| d * Self::act_grad(spec.activation, p))
                    .collect();
                for v in 0..spec.fan_out {
                    for u in 0..spec.fan_in {
                        let e = v * spec.fan_in + u;
                        out[l][e] += d_pre[v] * zs[l][u] * self.weights[l][e];
                    }
                }
                let mut d_in = vec![0.0; spec.fan_in];
                for v in 0..spec.fan_out {
                    for u in 0..spec.fan_in {
                        d_in[u] += d_pre[v] * masked[l][v * spec.fan_in + u];
                    }
                }
                d_out = d_in;
            }
        }
        out
    }
}

pub fn random_case(rng: &mut RngStream) -> (Supernetwork, Reference, Minibatch, f64) {
    // Up to three layers with at most 100 edges in total.
    let depth = 1 + rng.below(3) as usize;
    let mut widths = vec![1 + rng.below(5) as usize];
    for _ in 0..depth {
        widths.push(1 + rng.below(5) as usize);
    }
    let mut specs = Vec::new();
    for (i, w) in widths.windows(2).enumerate() {
        let act = if i + 1 == depth {
            Activation::Identity
        } else {
            Activation::Relu
        };
        specs.push(LayerSpec::new(w[0], w[1], act));
    }
    assert!(specs.iter().map(|s| s.edges()).sum::<usize>() <= 100);
    let mut weights = Vec::new();
    let mut scores = Vec::new();
    for s in &specs {
        let w: Vec<f32> = (0..s.edges()).map(|_| rng.normal() as f32).collect();
        let sc: Vec<f32> = (0..s.edges()).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        weights.push(Matrix::from_vec(s.fan_out, s.fan_in, w).unwrap());
        scores.push(Matrix::from_vec(s.fan_out, s.fan_in, sc).unwrap());
    }
    let reference = Reference {
        specs: specs.clone(),
        weights: weights
            .iter()
            .map(|m| m.as_slice().iter().map(|&x| f64::from(x)).collect())
            .collect(),
        scores: scores
            .iter()
            .map(|m| m.as_slice().iter().map(|&x| f64::from(x)).collect())
            .collect(),
    };
    let net = Supernetwork::from_parts(&specs, weights, scores).unwrap();
    let classes = *widths.last().unwrap();
    let b = 1 + rng.below(6) as usize;
    let x: Vec<f32> = (0..b * widths[0]).map(|_| rng.normal() as f32).collect();
    let labels: Vec<usize> = (0..b).map(|_| rng.below(classes as u64) as usize).collect();
    let batch = Minibatch::new(Matrix::from_vec(b, widths[0], x).unwrap(), labels, classes).unwrap();
    let k = [0.1, 0.3, 0.5, 0.7, 1.0][rng.below(5) as usize];
    (net, reference, batch, k)
}

/// Largest absolute difference between `ep_backward` and the reference over
/// one random case.
pub fn max_case_error(rng: &mut RngStream) -> f64 {
    let (net, reference, batch, k) = random_case(rng);
    let (_, cache) = fsl_core::nn::ep_forward(&net, k, &batch).unwrap();
    let got = fsl_core::nn::ep_backward(&net, k, &batch, &cache).unwrap();
    let xs: Vec<Vec<f64>> = (0..batch.len())
        .map(|b| batch.inputs.row(b).iter().map(|&x| f64::from(x)).collect())
        .collect();
    let want = reference.score_grads(k, &xs, &batch.labels);
    let mut worst = 0.0f64;
    for (g, w) in got.iter().zip(&want) {
        for (&a, &b) in g.as_slice().iter().zip(w) {
            worst = worst.max((f64::from(a) - b).abs());
        }
    }
    worst
}
