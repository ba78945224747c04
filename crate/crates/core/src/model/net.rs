//! Forward pass, cross-entropy loss, and backpropagation.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Whether a pass applies dropout.
pub enum ForwardMode<'a> {
    Eval,
    Train {
        dropout_rate: f64,
        rng: &'a mut ChaCha8Rng,
    },
}

/// Everything backprop needs from the forward pass.
struct ForwardPass {
    hidden_pre: Array2<f64>,
    /// Post-ReLU, post-dropout activations.
    hidden: Array2<f64>,
    log_probs: Array2<f64>,
    probs: Array2<f64>,
    /// Inverted-dropout mask, entries 0 or 1/(1-rate). None in eval mode or
    /// at rate 0.
    mask: Option<Array2<f64>>,
}

fn forward_pass(
    params: &ParamSet,
    x: &ArrayView2<f64>,
    mode: ForwardMode<'_>,
) -> Result<ForwardPass> {
    let dims = params.dims();
    if x.ncols() != dims.d_in {
        return Err(Error::DimensionMismatch(format!(
            "input has {} features, model expects {}",
            x.ncols(),
            dims.d_in
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model input".into()));
    }

    let hidden_pre = x.dot(&params.w1) + &params.b1;
    let mut hidden = hidden_pre.mapv(|v| v.max(0.0));

    let mask = match mode {
        ForwardMode::Eval => None,
        ForwardMode::Train { dropout_rate, rng } => {
            if !(0.0..1.0).contains(&dropout_rate) {
                return Err(Error::InvalidArg(format!(
                    "dropout_rate must be in [0,1), got {dropout_rate}"
                )));
            }
            if dropout_rate == 0.0 {
                None
            } else {
                let keep = 1.0 - dropout_rate;
                let scale = 1.0 / keep;
                let mask = Array2::from_shape_fn(hidden.raw_dim(), |_| {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        0.0
                    }
                });
                hidden *= &mask;
                Some(mask)
            }
        }
    };

    let logits = hidden.dot(&params.w2) + &params.b2;
    // Log-sum-exp stabilization: shift by the row max, then normalize the
    // exponentials directly (this keeps uniform rows exactly 1/c).
    let mut log_probs = logits;
    let mut probs = log_probs.clone();
    for (mut log_row, mut prob_row) in log_probs.rows_mut().into_iter().zip(probs.rows_mut()) {
        let max = log_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        log_row.mapv_inplace(|v| v - max);
        prob_row.assign(&log_row.mapv(f64::exp));
        let sum: f64 = prob_row.sum();
        prob_row.mapv_inplace(|v| v / sum);
        let log_sum = sum.ln();
        log_row.mapv_inplace(|v| v - log_sum);
    }

    Ok(ForwardPass {
        hidden_pre,
        hidden,
        log_probs,
        probs,
        mask,
    })
}

/// Class probabilities for a batch: softmax(ReLU(X w1 + b1) w2 + b2), with
/// inverted dropout on the hidden layer in train mode.
pub fn forward(
    params: &ParamSet,
    x: &ArrayView2<f64>,
    mode: ForwardMode<'_>,
) -> Result<Array2<f64>> {
    Ok(forward_pass(params, x, mode)?.probs)
}

/// Mean cross-entropy loss and its gradients w.r.t. every parameter; the
/// same dropout mask drives forward and backward.
pub fn loss_and_grads(
    params: &ParamSet,
    x: &ArrayView2<f64>,
    y: &[usize],
    mode: ForwardMode<'_>,
) -> Result<(f64, ParamSet)> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} rows vs {} labels",
            y.len()
        )));
    }
    let classes = params.dims().classes;
    if let Some(&bad) = y.iter().find(|&&label| label >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes,
        });
    }

    let pass = forward_pass(params, x, mode)?;

    let loss = -(0..n).map(|i| pass.log_probs[[i, y[i]]]).sum::<f64>() / n as f64;

    // dL/dlogits = (probs - onehot) / n
    let mut dlogits = pass.probs;
    for (i, &label) in y.iter().enumerate() {
        dlogits[[i, label]] -= 1.0;
    }
    dlogits /= n as f64;

    let gw2 = pass.hidden.t().dot(&dlogits);
    let gb2 = dlogits.sum_axis(Axis(0));

    let mut dhidden = dlogits.dot(&params.w2.t());
    if let Some(mask) = &pass.mask {
        dhidden *= mask;
    }
    // ReLU gate on the pre-activation.
    ndarray::Zip::from(&mut dhidden)
        .and(&pass.hidden_pre)
        .for_each(|g, &pre| {
            if pre <= 0.0 {
                *g = 0.0;
            }
        });

    let gw1 = x.t().dot(&dhidden);
    let gb1 = dhidden.sum_axis(Axis(0));

    Ok((
        loss,
        ParamSet {
            w1: gw1,
            b1: gb1,
            w2: gw2,
            b2: gb2,
        },
    ))
}

/// Evaluation-mode metrics on a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Eval-mode loss/accuracy/predictions; argmax ties break to the lowest
/// class index.
pub fn evaluate(params: &ParamSet, dataset: &Dataset) -> Result<EvalResult> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = params.dims().classes;
    if let Some(&bad) = dataset.labels().iter().find(|&&label| label >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    let pass = forward_pass(params, &dataset.features().view(), ForwardMode::Eval)?;
    let n = dataset.n_samples();

    let loss = -(0..n)
        .map(|i| pass.log_probs[[i, dataset.labels()[i]]])
        .sum::<f64>()
        / n as f64;

    let predictions: Vec<usize> = pass
        .probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    let accuracy = predictions
        .iter()
        .zip(dataset.labels())
        .filter(|(p, l)| p == l)
        .count() as f64
        / n as f64;

    Ok(EvalResult {
        loss,
        accuracy,
        predictions,
    })
}
