//! Segmentation objective (pixel-mean cross-entropy + soft Dice), training and
//! Dice-coefficient evaluation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Dataset, Mask};
use crate::net::{fit, FitConfig, Head, Model, Scalar};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegConfig {
    pub base_epochs: usize,
    pub iter_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub threshold: f64,
    pub smooth: f64,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            base_epochs: 10,
            iter_epochs: 2,
            batch_size: 8,
            learning_rate: 1e-3,
            threshold: 0.5,
            smooth: 1.0,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_epochs < 1 || self.iter_epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config("seg epochs and batch_size must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("seg.threshold must be in (0,1)".into()));
        }
        if !(self.smooth > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("seg.smooth and seg.learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

fn check_len(n: usize, gt: &Mask) -> Result<()> {
    if n != gt.pixels.len() {
        return Err(Error::Shape(format!(
            "{n} predictions for mask {} of {}x{}",
            gt.id, gt.height, gt.width
        )));
    }
    Ok(())
}

/// `2|P ∩ G| / (|P| + |G|)`, with two empty masks scoring 1.
pub fn dice_coefficient(pred: &Mask, gt: &Mask) -> Result<f64> {
    if pred.size() != gt.size() {
        return Err(Error::Shape(format!(
            "dice: prediction {:?} vs ground truth {:?}",
            pred.size(),
            gt.size()
        )));
    }
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&p, &g) in pred.pixels.iter().zip(&gt.pixels) {
        inter += (p & g) as usize;
        total += (p + g) as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// `1 - (2 Σ p g + s) / (Σ p + Σ g + s)`.
pub fn soft_dice_loss<F: Scalar>(probs: &[F], gt: &Mask, smooth: f64) -> Result<f64> {
    soft_dice_parts(probs, gt, smooth).map(|(l, _)| l)
}

fn soft_dice_parts<F: Scalar>(probs: &[F], gt: &Mask, smooth: f64) -> Result<(f64, Vec<f64>)> {
    check_len(probs.len(), gt)?;
    if !(smooth > 0.0) {
        return Err(Error::Config("dice smoothing must be > 0".into()));
    }
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut gsum = 0.0;
    for (p, &g) in probs.iter().zip(&gt.pixels) {
        let (p, g) = (p.f64(), g as f64);
        inter += p * g;
        psum += p;
        gsum += g;
    }
    let num = 2.0 * inter + smooth;
    let den = psum + gsum + smooth;
    let grad = gt
        .pixels
        .iter()
        .map(|&g| -(2.0 * g as f64 * den - num) / (den * den))
        .collect();
    Ok((1.0 - num / den, grad))
}

/// Pixel-mean binary cross-entropy with clamped probabilities.
pub fn cross_entropy<F: Scalar>(probs: &[F], gt: &Mask) -> Result<f64> {
    check_len(probs.len(), gt)?;
    let n = probs.len() as f64;
    let sum: f64 = probs
        .iter()
        .zip(&gt.pixels)
        .map(|(p, &g)| {
            let p = p.f64().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if g == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegLoss {
    pub ce: f64,
    pub dice: f64,
    pub total: f64,
}

/// Unweighted sum of [`cross_entropy`] and [`soft_dice_loss`].
pub fn seg_loss<F: Scalar>(probs: &[F], gt: &Mask, smooth: f64) -> Result<SegLoss> {
    let ce = cross_entropy(probs, gt)?;
    let dice = soft_dice_loss(probs, gt, smooth)?;
    Ok(SegLoss {
        ce,
        dice,
        total: ce + dice,
    })
}

/// [`seg_loss`] and its gradient with respect to the probabilities.
pub fn seg_loss_grad<F: Scalar>(probs: &[F], gt: &Mask, smooth: f64) -> Result<(SegLoss, Vec<f64>)> {
    let loss = seg_loss(probs, gt, smooth)?;
    let (_, dice_grad) = soft_dice_parts(probs, gt, smooth)?;
    let n = probs.len() as f64;
    let grad = probs
        .iter()
        .zip(&gt.pixels)
        .zip(dice_grad)
        .map(|((p, &g), dd)| {
            let p = p.f64();
            let ce = if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                0.0
            } else if g == 1 {
                -1.0 / (p * n)
            } else {
                1.0 / ((1.0 - p) * n)
            };
            ce + dd
        })
        .collect();
    Ok((loss, grad))
}

/// Loss and gradient with respect to the logits feeding the output sigmoid.
///
/// The cross-entropy term uses the closed form `(p - g) / n`, which stays
/// finite when `p` saturates.
pub(crate) fn seg_loss_logit_grad<F: Scalar>(probs: &[F], gt: &Mask, smooth: f64) -> Result<(f64, Vec<F>)> {
    let loss = seg_loss(probs, gt, smooth)?;
    let (_, dice_grad) = soft_dice_parts(probs, gt, smooth)?;
    let n = probs.len() as f64;
    let grad = probs
        .iter()
        .zip(&gt.pixels)
        .zip(dice_grad)
        .map(|((p, &g), dd)| {
            let p = p.f64();
            F::of((p - g as f64) / n + dd * p * (1.0 - p))
        })
        .collect();
    Ok((loss.total, grad))
}

/// Train `model` for exactly `epochs` on every sample of `labeled`.
pub fn train_seg<F: Scalar>(
    model: &mut Model<F>,
    labeled: &Dataset,
    cfg: &SegConfig,
    epochs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if model.config().head != Head::Segmentation {
        return Err(Error::Config("train_seg needs a segmentation-head model".into()));
    }
    if let Some(id) = labeled.unlabeled_ids().first() {
        return Err(Error::Data(format!("sample {id} has no mask")));
    }
    let samples = labeled.samples();
    let fit_cfg = FitConfig {
        epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed,
    };
    let smooth = cfg.smooth;
    fit(
        model,
        samples.len(),
        &fit_cfg,
        |_, i| {
            let s = &samples[i];
            let input = s.image.pixels.iter().map(|&v| F::of(v as f64)).collect();
            Ok((input, s.mask.as_ref().expect("checked above")))
        },
        |probs, gt: &&Mask| seg_loss_logit_grad(probs, gt, smooth),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<(String, f64)>,
    pub mean_dice: f64,
    pub n: usize,
    pub threshold: f64,
}

impl EvalReport {
    /// `<dir>/dice.csv` (sample_id,dice) and `<dir>/summary.json` {mean_dice, n, threshold}.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut csv = String::from("sample_id,dice\n");
        for (id, d) in &self.per_sample {
            csv.push_str(&format!("{id},{d}\n"));
        }
        let path = dir.join("dice.csv");
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        let summary = serde_json::json!({
            "mean_dice": self.mean_dice,
            "n": self.n,
            "threshold": self.threshold,
        });
        let path = dir.join("summary.json");
        fs::write(&path, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&path, e))
    }
}

/// Order-fixed pairwise summation.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Mean Dice of thresholded predictions over every sample of `test`.
pub fn evaluate<F: Scalar>(model: &Model<F>, test: &Dataset, threshold: f64) -> Result<EvalReport> {
    use rayon::prelude::*;
    if test.is_empty() {
        return Err(Error::Data("evaluation on an empty test set".into()));
    }
    if let Some(id) = test.unlabeled_ids().first() {
        return Err(Error::Data(format!("test sample {id} has no mask")));
    }
    let per_sample = test
        .samples()
        .par_iter()
        .map(|s| {
            let input: Vec<F> = s.image.pixels.iter().map(|&v| F::of(v as f64)).collect();
            let probs = model.forward(&input)?;
            let gt = s.mask.as_ref().expect("checked above");
            let bits = probs.iter().map(|p| u8::from(p.f64() > threshold)).collect();
            let pred = Mask::new(s.id(), gt.height, gt.width, bits)?;
            Ok((s.id().to_string(), dice_coefficient(&pred, gt)?))
        })
        .collect::<Result<Vec<_>>>()?;
    // dataset order is id order, so the summation order is fixed
    let scores: Vec<f64> = per_sample.iter().map(|(_, d)| *d).collect();
    Ok(EvalReport {
        mean_dice: pairwise_sum(&scores) / scores.len() as f64,
        n: scores.len(),
        threshold,
        per_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8], h: usize, w: usize) -> Mask {
        Mask::new("m", h, w, bits.to_vec()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = mask(&[1, 1, 0, 0], 2, 2);
        assert_eq!(dice_coefficient(&a, &a).unwrap(), 1.0);
        let b = mask(&[0, 0, 1, 1], 2, 2);
        assert_eq!(dice_coefficient(&a, &b).unwrap(), 0.0);
        let e = mask(&[0; 4], 2, 2);
        assert_eq!(dice_coefficient(&e, &e).unwrap(), 1.0);
        let p = mask(&[1, 1, 1, 1, 0, 0, 0, 0], 2, 4);
        let g = mask(&[1, 1, 0, 0, 1, 1, 0, 0], 2, 4);
        assert_eq!(dice_coefficient(&p, &g).unwrap(), 0.5);
        assert!(dice_coefficient(&a, &mask(&[0; 6], 2, 3)).is_err());
    }

    #[test]
    fn near_perfect_soft_dice() {
        let g = mask(&[1, 0, 1, 0, 0, 1, 1, 0, 0], 3, 3);
        let probs: Vec<f64> = g.pixels.iter().map(|&b| if b == 1 { 0.999 } else { 0.001 }).collect();
        assert!(soft_dice_loss(&probs, &g, 1.0).unwrap() < 0.01);
        let l = seg_loss(&probs, &g, 1.0).unwrap();
        assert!(l.total < 0.02);
        assert_eq!(l.total, l.ce + l.dice);
    }

    #[test]
    fn empty_ground_truth_with_low_probs() {
        let g = mask(&[0; 64], 8, 8);
        let probs = vec![0.001f64; 64];
        // 1 - 1 / (0.064 + 1), about 0.0602
        let l = soft_dice_loss(&probs, &g, 1.0).unwrap();
        assert!((l - (1.0 - 1.0 / 1.064)).abs() < 1e-12);
        assert!(l > 0.06 && l < 0.061);
    }

    #[test]
    fn clamped_ce_is_finite() {
        let g = mask(&[1, 0], 1, 2);
        let l = seg_loss(&[0.0f64, 1.0], &g, 1.0).unwrap();
        assert!(l.total.is_finite());
        assert!((l.ce - (-(PROB_CLAMP).ln())).abs() < 1e-6);
    }

    #[test]
    fn pairwise_sum_matches_plain_sum() {
        let xs: Vec<f64> = (0..37).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&xs), xs.iter().sum::<f64>());
    }
}
