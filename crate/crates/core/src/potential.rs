//! Loss surfaces seen as potential energies over a flat parameter vector.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::net::{self, LossKind, Topology};

pub trait Potential {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64>;

    /// Writes the gradient at `x` into `grad` and returns the value.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// `sum_i k_i x_i^2 / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalQuadratic {
    pub stiffness: Vec<f64>,
}

impl DiagonalQuadratic {
    pub fn new(stiffness: Vec<f64>) -> Self {
        DiagonalQuadratic { stiffness }
    }

    /// One-dimensional harmonic well `k x^2 / 2`.
    pub fn harmonic(k: f64) -> Self {
        DiagonalQuadratic { stiffness: vec![k] }
    }

    pub fn flat(dim: usize) -> Self {
        DiagonalQuadratic {
            stiffness: vec![0.0; dim],
        }
    }
}

impl Potential for DiagonalQuadratic {
    fn dim(&self) -> usize {
        self.stiffness.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self
            .stiffness
            .iter()
            .zip(x)
            .map(|(k, x)| 0.5 * k * x * x)
            .sum())
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        for ((g, k), x) in grad.iter_mut().zip(&self.stiffness).zip(x) {
            *g = k * x;
        }
        self.value(x)
    }
}

/// Full-batch network loss on a fixed set of (already scaled) samples.
///
/// `scale` multiplies both the loss and its gradient. Regression runs use it
/// to express a squared-error loss computed on min-max scaled targets in the
/// original target units: if `y = a * y_scaled + b` then
/// `SSE(y) = a^2 * SSE(y_scaled)`.
#[derive(Debug, Clone)]
pub struct NetworkObjective<'a> {
    pub topology: &'a Topology,
    pub inputs: ArrayView2<'a, f64>,
    pub targets: ArrayView2<'a, f64>,
    pub loss: LossKind,
    pub scale: f64,
}

impl<'a> NetworkObjective<'a> {
    pub fn new(
        topology: &'a Topology,
        inputs: ArrayView2<'a, f64>,
        targets: ArrayView2<'a, f64>,
        loss: LossKind,
    ) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::shape(
                format!("{} target rows", inputs.nrows()),
                format!("{} target rows", targets.nrows()),
            ));
        }
        if targets.ncols() != topology.output_dim() {
            return Err(Error::shape(
                format!("{} target columns", topology.output_dim()),
                format!("{} target columns", targets.ncols()),
            ));
        }
        Ok(NetworkObjective {
            topology,
            inputs,
            targets,
            loss,
            scale: 1.0,
        })
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn predict(&self, x: &[f64]) -> Result<Array2<f64>> {
        net::forward(self.topology, x, self.inputs)
    }
}

impl Potential for NetworkObjective<'_> {
    fn dim(&self) -> usize {
        self.topology.param_count()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let out = net::forward(self.topology, x, self.inputs)?;
        Ok(self.scale * net::loss(self.loss, out.view(), self.targets)?)
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let value = net::loss_and_gradient_into(
            self.topology,
            x,
            self.inputs,
            self.targets,
            self.loss,
            grad,
        )?;
        if self.scale != 1.0 {
            grad.iter_mut().for_each(|g| *g *= self.scale);
        }
        Ok(self.scale * value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;
    use ndarray::array;

    #[test]
    fn harmonic_gradient() {
        let p = DiagonalQuadratic::new(vec![1.0, 100.0]);
        let mut g = [0.0; 2];
        let v = p.value_and_gradient(&[2.0, 0.1], &mut g).unwrap();
        assert!((v - (2.0 + 0.5)).abs() < 1e-12);
        assert_eq!(g, [2.0, 10.0]);
    }

    #[test]
    fn scale_multiplies_value_and_gradient() {
        let t = Topology::uniform(vec![1, 3, 1], Activation::Tanh, Activation::Linear).unwrap();
        let x = array![[0.1], [0.5], [-0.7]];
        let y = array![[0.0], [1.0], [0.2]];
        let params: Vec<f64> = (0..t.param_count()).map(|i| 0.1 * i as f64 - 0.3).collect();
        let base = NetworkObjective::new(&t, x.view(), y.view(), LossKind::Sse).unwrap();
        let scaled = base.clone().with_scale(4.0);
        let mut g1 = vec![0.0; t.param_count()];
        let mut g2 = g1.clone();
        let v1 = base.value_and_gradient(&params, &mut g1).unwrap();
        let v2 = scaled.value_and_gradient(&params, &mut g2).unwrap();
        assert_eq!(4.0 * v1, v2);
        assert_eq!(scaled.value(&params).unwrap(), v2);
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(4.0 * a, *b);
        }
    }

    #[test]
    fn mismatched_rows_rejected() {
        let t = Topology::uniform(vec![1, 1], Activation::Linear, Activation::Linear).unwrap();
        let x = array![[0.1], [0.5]];
        let y = array![[0.0]];
        assert!(NetworkObjective::new(&t, x.view(), y.view(), LossKind::Sse).is_err());
    }
}
