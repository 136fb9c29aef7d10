//! Trainable dense network used by the weight-based baselines.

use crate::data::Dataset;
use crate::error::{FslError, Result};
use crate::matrix::Matrix;
use crate::nn::{
    accuracy_with, backward_pass, forward_pass, shuffled_batches, softmax_cross_entropy,
    Architecture, LayerSpec, Minibatch, MomentumSgd, SgdConfig,
};
use crate::prng::{init_weights, InitKind, RngStream, TAG_WEIGHTS};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    specs: Vec<LayerSpec>,
    weights: Vec<Matrix>,
}

impl DenseNetwork {
    pub fn from_seed(arch: &Architecture, seed: u64, init: InitKind) -> Result<Self> {
        let mut rng = RngStream::derive(seed, &[TAG_WEIGHTS]);
        let weights = arch
            .layers()
            .iter()
            .map(|l| init_weights(l.fan_out, l.fan_in, init, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            specs: arch.layers().to_vec(),
            weights,
        })
    }

    /// Rebuilds a network from a flat parameter vector laid out layer by layer.
    pub fn from_flat(arch: &Architecture, flat: &[f32]) -> Result<Self> {
        if flat.len() != arch.total_edges() {
            return Err(FslError::ShapeMismatch {
                expected: format!("{} parameters", arch.total_edges()),
                actual: format!("{} parameters", flat.len()),
            });
        }
        let mut start = 0;
        let mut weights = Vec::with_capacity(arch.layers().len());
        for l in arch.layers() {
            let n = l.edges();
            weights.push(Matrix::from_vec(l.fan_out, l.fan_in, flat[start..start + n].to_vec())?);
            start += n;
        }
        Ok(Self {
            specs: arch.layers().to_vec(),
            weights,
        })
    }

    pub fn flatten(&self) -> Vec<f32> {
        self.weights
            .iter()
            .flat_map(|w| w.as_slice().iter().copied())
            .collect()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    /// Mean cross-entropy and per-layer weight gradients on one batch.
    pub fn gradients(&self, batch: &Minibatch) -> Result<(f64, Vec<Matrix>)> {
        if batch.inputs.cols() != self.specs[0].fan_in {
            return Err(FslError::ShapeMismatch {
                expected: format!("input width {}", self.specs[0].fan_in),
                actual: format!("input width {}", batch.inputs.cols()),
            });
        }
        let (logits, inputs, preacts) = forward_pass(&self.weights, &self.specs, &batch.inputs);
        let (loss, dlogits) = softmax_cross_entropy(&logits, &batch.labels);
        Ok((
            loss,
            backward_pass(&self.weights, &self.specs, &inputs, &preacts, &dlogits),
        ))
    }

    /// Local SGD with momentum and weight decay on the weights.
    pub fn train(
        &mut self,
        data: &Dataset,
        epochs: usize,
        sgd: &SgdConfig,
        rng: &mut RngStream,
    ) -> Result<()> {
        if epochs == 0 {
            return Err(FslError::ZeroEpochs);
        }
        if data.is_empty() {
            return Err(FslError::EmptyDataset);
        }
        sgd.validate()?;
        let mut opt = MomentumSgd::new(*sgd, self.weights.len());
        for _ in 0..epochs {
            for batch in shuffled_batches(data, sgd.batch_size, rng)? {
                let (_, grads) = self.gradients(&batch)?;
                for (l, g) in grads.iter().enumerate() {
                    opt.step(l, self.weights[l].as_mut_slice(), g.as_slice());
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<f64> {
        accuracy_with(&self.weights, &self.specs, data)
    }
}
