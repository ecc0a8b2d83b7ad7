use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{Adam, Grads, Model, Scalar};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, Key};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Minibatch training loop shared by pretraining and segmentation.
///
/// `example(epoch, index)` materializes one `(input, target)` pair and `loss`
/// maps output probabilities to `(loss, dL/dlogits)`. Samples in a batch are
/// processed in parallel; their gradients are summed in batch order, so the
/// result does not depend on the thread count. Returns the mean per-sample
/// loss of each epoch.
pub fn fit<F, T, E, L>(model: &mut Model<F>, n: usize, cfg: &FitConfig, example: E, loss: L) -> Result<Vec<f64>>
where
    F: Scalar,
    T: Send,
    E: Fn(usize, usize) -> Result<(Vec<F>, T)> + Sync,
    L: Fn(&[F], &T) -> Result<(f64, Vec<F>)> + Sync,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Data("cannot train on an empty sample set".into()));
    }
    let mut opt = Adam::new(model.params(), cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derived_rng(cfg.seed, &[Key::Str("order"), Key::U64(epoch as u64)]));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let net = &*model;
            let results = batch
                .par_iter()
                .map(|&i| {
                    let (input, target) = example(epoch, i)?;
                    let trace = net.forward_trace(&input)?;
                    let (l, grad) = loss(&trace.probs, &target)?;
                    let mut g = net.zero_grads();
                    net.backward(&trace, &grad, &mut g);
                    Ok((l, g))
                })
                .collect::<Result<Vec<(f64, Grads<F>)>>>()?;
            let mut acc = model.zero_grads();
            for (l, g) in &results {
                if !l.is_finite() {
                    return Err(Error::Data(format!("non-finite loss in epoch {epoch}")));
                }
                total += l;
                for (a, b) in acc.iter_mut().zip(g) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += *y;
                    }
                }
            }
            let scale = F::of(1.0 / batch.len() as f64);
            for a in &mut acc {
                for x in a.iter_mut() {
                    *x *= scale;
                }
            }
            opt.step(model.params_mut(), &acc);
        }
        history.push(total / n as f64);
        log::debug!("epoch {epoch}: loss {:.6}", total / n as f64);
    }
    Ok(history)
}
