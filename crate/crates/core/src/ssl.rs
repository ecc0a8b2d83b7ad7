//! Self-supervised pretraining: reconstruct each clean image from a deformed copy.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::deform::{deform, DeformConfig};
use crate::error::{Error, Result};
use crate::imaging::{Dataset, Image};
use crate::net::{fit, FitConfig, Head, Model, NetConfig, Scalar};
use crate::rng::{derive_seed, derived_rng, Key};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub deform: DeformConfig,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            deform: DeformConfig::default(),
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config("ssl.epochs and ssl.batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("ssl.learning_rate must be > 0".into()));
        }
        self.deform.validate()
    }
}

fn check_shape(n: usize, target: &Image) -> Result<()> {
    if n != target.pixels.len() {
        return Err(Error::Shape(format!(
            "{n} predictions for image {} of {}x{}",
            target.id, target.height, target.width
        )));
    }
    Ok(())
}

/// Mean squared error over pixels.
pub fn reconstruction_loss<F: Scalar>(pred: &[F], target: &Image) -> Result<f64> {
    check_shape(pred.len(), target)?;
    let sum: f64 = pred
        .iter()
        .zip(&target.pixels)
        .map(|(p, &t)| (p.f64() - t as f64).powi(2))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`reconstruction_loss`] with respect to `pred`.
pub fn reconstruction_grad<F: Scalar>(pred: &[F], target: &Image) -> Result<Vec<f64>> {
    check_shape(pred.len(), target)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(&target.pixels)
        .map(|(p, &t)| 2.0 * (p.f64() - t as f64) / n)
        .collect())
}

fn loss_logit_grad<F: Scalar>(probs: &[F], target: &Image) -> Result<(f64, Vec<F>)> {
    let loss = reconstruction_loss(probs, target)?;
    let grad = reconstruction_grad(probs, target)?;
    Ok((
        loss,
        probs
            .iter()
            .zip(grad)
            .map(|(p, g)| {
                let p = p.f64();
                F::of(g * p * (1.0 - p))
            })
            .collect(),
    ))
}

/// Seed used to initialize the pretraining network.
pub fn init_seed(cfg: &SslConfig) -> u64 {
    derive_seed(cfg.seed, &[Key::Str("ssl-init")])
}

/// Train a reconstruction-head network on `dataset`; returns the model and
/// the mean training loss of each epoch.
///
/// Each `(epoch, image)` pair gets its own deformation stream seeded from
/// `(cfg.seed, epoch, image id)`.
pub fn pretrain<F: Scalar>(dataset: &Dataset, net_cfg: &NetConfig, cfg: &SslConfig) -> Result<(Model<F>, Vec<f64>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("pretraining on an empty dataset".into()));
    }
    if net_cfg.head != Head::Reconstruction {
        return Err(Error::Config("pretraining needs a reconstruction-head config".into()));
    }
    if net_cfg.input_size != dataset.size() {
        return Err(Error::Shape(format!(
            "net input {:?} vs dataset {:?}",
            net_cfg.input_size,
            dataset.size()
        )));
    }
    let mut model = Model::<F>::build(net_cfg, init_seed(cfg))?;
    let samples = dataset.samples();
    let fit_cfg = FitConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: derive_seed(cfg.seed, &[Key::Str("ssl-fit")]),
    };
    let history = fit(
        &mut model,
        samples.len(),
        &fit_cfg,
        |epoch, i| {
            let clean = &samples[i].image;
            let mut rng = derived_rng(cfg.seed, &[Key::U64(epoch as u64), Key::Str(&clean.id)]);
            let corrupted = deform(clean, &mut rng, &cfg.deform)?;
            let input = corrupted.pixels.iter().map(|&v| F::of(v as f64)).collect();
            Ok((input, clean))
        },
        |probs, target: &&Image| loss_logit_grad(probs, target),
    )?;
    Ok((model, history))
}

/// `epoch,mean_loss` CSV, epochs numbered from 1.
pub fn write_loss_csv(path: &Path, history: &[f64]) -> Result<()> {
    let mut csv = String::from("epoch,mean_loss\n");
    for (i, l) in history.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}
