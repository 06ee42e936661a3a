//! Naive reference implementations shared by the integration tests.

#![allow(dead_code)]

use simmering::net::{Activation, LossKind, Topology};

/// Per-layer pre-activations and the output, by explicit loops over the
/// documented parameter layout.
pub fn naive_forward(topology: &Topology, params: &[f64], input: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let sizes = topology.layer_sizes();
    let mut offset = 0;
    let mut a = input.to_vec();
    let mut pres = Vec::new();
    for (l, act) in topology.activations().iter().enumerate() {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let w = &params[offset..offset + fan_in * fan_out];
        let b = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        let mut z = vec![0.0; fan_out];
        for o in 0..fan_out {
            let mut s = b[o];
            for i in 0..fan_in {
                s += w[o * fan_in + i] * a[i];
            }
            z[o] = s;
        }
        a = z.iter().map(|&v| apply(*act, v)).collect();
        pres.push(z);
    }
    (pres, a)
}

fn apply(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Tanh => z.tanh(),
        Activation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::Elu => {
            if z > 0.0 {
                z
            } else {
                z.exp() - 1.0
            }
        }
        Activation::Linear => z,
    }
}

/// Loss written from the textbook definitions, one sample at a time.
pub fn naive_loss(kind: LossKind, outputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let s = outputs.len() as f64;
    let mut total = 0.0;
    let mut entries = 0.0;
    for (z, y) in outputs.iter().zip(targets) {
        match kind {
            LossKind::Sse | LossKind::Mse => {
                total += z.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
            LossKind::CategoricalCrossEntropy => {
                let denom: f64 = z.iter().map(|v| v.exp()).sum();
                for (zk, yk) in z.iter().zip(y) {
                    total -= yk * (zk.exp() / denom).ln();
                }
            }
            LossKind::BinaryCrossEntropyFromLogits => {
                for (zk, yk) in z.iter().zip(y) {
                    let p = 1.0 / (1.0 + (-zk).exp());
                    total -= yk * p.ln() + (1.0 - yk) * (1.0 - p).ln();
                    entries += 1.0;
                }
            }
        }
    }
    match kind {
        LossKind::Sse => total,
        LossKind::Mse | LossKind::CategoricalCrossEntropy => total / s,
        LossKind::BinaryCrossEntropyFromLogits => total / entries,
    }
}
