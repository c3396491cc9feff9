use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PolicyError, Result};
use crate::model::{Act, Dropout, PolicyInput, Style, ACTION_DIM};
use crate::real::Real;
use crate::tape::{kl_divergence, Tape, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reconstruction {
    /// Mean absolute error.
    #[default]
    L1,
    /// Mean squared error.
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

impl LossParts {
    /// `reconstruction = recon_sum / n_entries`, `kl = kl_sum / batch`,
    /// `total = reconstruction + beta * kl`.
    pub fn from_sums(
        recon_sum: f64,
        n_entries: usize,
        kl_sum: f64,
        batch: usize,
        beta: f64,
    ) -> Result<Self> {
        if n_entries == 0 {
            return Err(PolicyError::AllMasked);
        }
        let reconstruction = recon_sum / n_entries as f64;
        let kl = if batch == 0 {
            0.0
        } else {
            kl_sum / batch as f64
        };
        Ok(Self {
            total: reconstruction + beta * kl,
            reconstruction,
            kl,
        })
    }
}

/// Batch objective from already-computed predictions and style posteriors.
/// `mask[b][j]` covers all six dimensions of step `j`.
pub fn loss<T: Real>(
    predicted: &[Tensor<T>],
    target: &[Tensor<T>],
    mask: &[Vec<bool>],
    mean: &[Vec<T>],
    log_var: &[Vec<T>],
    beta: f64,
    kind: Reconstruction,
) -> Result<LossParts> {
    let b = predicted.len();
    if target.len() != b || mask.len() != b || mean.len() != b || log_var.len() != b {
        return Err(PolicyError::InvalidArgument(
            "loss inputs have inconsistent batch sizes".into(),
        ));
    }
    if !(beta >= 0.0) {
        return Err(PolicyError::InvalidArgument(format!(
            "beta {beta} must be non-negative"
        )));
    }
    let mut recon = 0.0;
    let mut n = 0;
    let mut kl = 0.0;
    for i in 0..b {
        let (p, t) = (&predicted[i], &target[i]);
        if (p.rows, p.cols) != (t.rows, t.cols) || p.cols != ACTION_DIM || mask[i].len() != p.rows {
            return Err(PolicyError::InvalidArgument(
                "predicted and target chunks differ in shape".into(),
            ));
        }
        for (j, keep) in mask[i].iter().enumerate() {
            if *keep {
                for c in 0..ACTION_DIM {
                    let d = p.at(j, c).to_f64_lossy() - t.at(j, c).to_f64_lossy();
                    recon += match kind {
                        Reconstruction::L1 => d.abs(),
                        Reconstruction::L2 => d * d,
                    };
                    n += 1;
                }
            }
        }
        kl += kl_divergence(&mean[i], &log_var[i]).to_f64_lossy();
    }
    LossParts::from_sums(recon, n, kl, b, beta)
}

/// One training example in the model's scalar type.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub input: PolicyInput<T>,
    /// `k x 6` normalized target actions; masked rows are zero.
    pub target: Tensor<T>,
    pub mask: Vec<bool>,
}

/// Forward and backward over a batch; gradients of the batch objective are
/// added into `grads`. `eps[i]` is the reparameterization noise of sample `i`.
pub fn batch_gradients<T: Real>(
    model: &Act<T>,
    batch: &[&Sample<T>],
    eps: &[Vec<T>],
    beta: f64,
    kind: Reconstruction,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    mut grads: Option<&mut [Tensor<T>]>,
) -> Result<LossParts> {
    let n_entries: usize = batch
        .iter()
        .map(|s| s.mask.iter().filter(|m| **m).count() * ACTION_DIM)
        .sum();
    if n_entries == 0 {
        return Err(PolicyError::AllMasked);
    }
    let inv_n = T::lit(1.0 / n_entries as f64);
    let kl_w = T::lit(beta / batch.len() as f64);
    let mut recon_sum = 0.0;
    let mut kl_sum = 0.0;
    for (s, e) in batch.iter().zip(eps) {
        let mut tape = Tape::new(&model.params.tensors);
        let mut drop = Dropout {
            p: model.cfg.dropout,
            rng: dropout_rng.as_deref_mut(),
        };
        let out = model.forward(
            &mut tape,
            &s.input,
            Style::Encode {
                actions: &s.target,
                mask: &s.mask,
                eps: e,
            },
            &mut drop,
        );
        let elem_mask: Vec<bool> = s.mask.iter().flat_map(|m| [*m; ACTION_DIM]).collect();
        let recon = match kind {
            Reconstruction::L1 => tape.abs_diff_sum(out.chunk, s.target.data.clone(), elem_mask),
            Reconstruction::L2 => tape.sq_diff_sum(out.chunk, s.target.data.clone(), elem_mask),
        };
        let kl = tape.kl_sum(
            out.mean.expect("training forward"),
            out.log_var.expect("training forward"),
        );
        recon_sum += tape.scalar(recon).to_f64_lossy();
        kl_sum += tape.scalar(kl).to_f64_lossy();
        if let Some(g) = grads.as_deref_mut() {
            let r = tape.scale(recon, inv_n);
            let k = tape.scale(kl, kl_w);
            let objective = tape.add(r, k);
            tape.backward(objective, g);
        }
    }
    LossParts::from_sums(recon_sum, n_entries, kl_sum, batch.len(), beta)
}
