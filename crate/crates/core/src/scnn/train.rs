use super::adam::AdamState;
use super::net::{mse_with_grad, NetParams, Wants};
use crate::error::{ReconError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            iters: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    /// Full-batch loss before each update, one entry per iteration.
    pub losses: Vec<f64>,
    /// Loss of the returned parameters.
    pub final_loss: f64,
}

fn diverged(iteration: usize) -> ReconError {
    ReconError::Divergence {
        context: "network training".into(),
        iteration,
    }
}

/// Column budget per forward/backward chunk; bounds the unfolded buffers to a few MB.
const CHUNK_COLUMNS: usize = 4096;

/// Full-batch loss and weight gradient, accumulated over chunks of whole images.
fn batch_gradient(params: &NetParams, patches: &Tensor, chunk: usize, iter: usize) -> Result<(f64, Vec<f64>)> {
    let wants = Wants {
        params: true,
        input: false,
    };
    let total = patches.batch as f64;
    let mut loss = 0.0;
    let mut grads = vec![0.0; params.weights().len()];
    let mut start = 0;
    while start < patches.batch {
        let len = chunk.min(patches.batch - start);
        let part;
        let x = if len == patches.batch {
            patches
        } else {
            part = patches.sub_batch(start, len);
            &part
        };
        let (out, cache) = params.forward_cached(x)?;
        let (l, mut g) = mse_with_grad(&out, x).map_err(|_| diverged(iter))?;
        let w = len as f64 / total;
        for v in g.data.iter_mut() {
            *v *= w;
        }
        loss += w * l;
        let (gw, _) = params.backward(&cache, &g, wants);
        for (a, b) in grads.iter_mut().zip(gw.expect("parameter gradients requested")) {
            *a += b;
        }
        start += len;
    }
    Ok((loss, grads))
}

/// Full-batch Adam on `MSE(net(patches), patches)`, starting from `init`.
///
/// All patches form one batch (evaluated in chunks of whole images); the parameters after
/// the last iteration are returned.
pub fn train_self_consistency(
    init: NetParams,
    patches: &Tensor,
    cfg: TrainConfig,
) -> Result<TrainOutcome> {
    if patches.batch == 0 {
        return Err(ReconError::Calibration("no calibration patches".into()));
    }
    let chunk = (CHUNK_COLUMNS / patches.plane_len()).max(1);
    let mut params = init;
    let mut state = AdamState::new(params.weights().len());
    let mut losses = Vec::with_capacity(cfg.iters);
    for iter in 0..cfg.iters {
        let (loss, grads) = batch_gradient(&params, patches, chunk, iter)?;
        losses.push(loss);
        params.adam_step(&mut state, &grads, cfg.lr);
    }
    let (final_loss, _) = batch_gradient(&params, patches, chunk, cfg.iters)?;
    Ok(TrainOutcome {
        params,
        losses,
        final_loss,
    })
}
