//! Stochastic image corruptions used as the pretext input for reconstruction.
//!
//! Four operators, each mapping `[0,1]` images to `[0,1]` images:
//! a monotone cubic Bézier intensity remap, local pixel shuffling, in-painting
//! and out-painting. [`deform`] composes them with configurable probabilities.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Number of curve samples used to tabulate the Bézier value map.
pub const BEZIER_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformConfig {
    pub p_nonlinear: f64,
    pub p_shuffle: f64,
    pub p_paint: f64,
    pub p_inpaint_given_paint: f64,
    pub shuffle_windows: usize,
    pub shuffle_max_frac: f64,
    pub paint_patch_count_range: (usize, usize),
    pub paint_patch_frac_range: (f64, f64),
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            p_nonlinear: 0.9,
            p_shuffle: 0.5,
            p_paint: 0.9,
            p_inpaint_given_paint: 0.8,
            shuffle_windows: 100,
            shuffle_max_frac: 0.125,
            paint_patch_count_range: (1, 5),
            paint_patch_frac_range: (1.0 / 6.0, 1.0 / 3.0),
        }
    }
}

impl DeformConfig {
    /// Every transform disabled; `deform` becomes the identity.
    pub fn identity() -> Self {
        Self {
            p_nonlinear: 0.0,
            p_shuffle: 0.0,
            p_paint: 0.0,
            p_inpaint_given_paint: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_nonlinear", self.p_nonlinear),
            ("p_shuffle", self.p_shuffle),
            ("p_paint", self.p_paint),
            ("p_inpaint_given_paint", self.p_inpaint_given_paint),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("deform.{name} = {p} is not a probability")));
            }
        }
        let frac_ok = |f: f64| f > 0.0 && f < 1.0;
        if !frac_ok(self.shuffle_max_frac) {
            return Err(Error::Config("deform.shuffle_max_frac must be in (0,1)".into()));
        }
        let (fmin, fmax) = self.paint_patch_frac_range;
        if !frac_ok(fmin) || !frac_ok(fmax) || fmin > fmax {
            return Err(Error::Config("deform.paint_patch_frac_range must be ordered within (0,1)".into()));
        }
        let (cmin, cmax) = self.paint_patch_count_range;
        if cmin < 1 || cmin > cmax {
            return Err(Error::Config("deform.paint_patch_count_range must be ordered and >= 1".into()));
        }
        if self.shuffle_windows < 1 {
            return Err(Error::Config("deform.shuffle_windows must be >= 1".into()));
        }
        Ok(())
    }
}

/// Axis-aligned pixel rectangle `[y, y+h) x [x, x+w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y && y < self.y + self.h && x >= self.x && x < self.x + self.w
    }

    pub fn area(&self) -> usize {
        self.h * self.w
    }
}

/// Tabulated monotone cubic Bézier value map with endpoints on `x = 0` and `x = 1`.
#[derive(Debug, Clone)]
pub struct BezierMap {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl BezierMap {
    /// `flipped` swaps the endpoints to `(0,1) -> (1,0)`, inverting intensities.
    pub fn new(c1: (f64, f64), c2: (f64, f64), flipped: bool) -> Self {
        let (y0, y3) = if flipped { (1.0, 0.0) } else { (0.0, 1.0) };
        let n = BEZIER_SAMPLES;
        let mut xs = Vec::with_capacity(n + 1);
        let mut ys = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let t = i as f64 / n as f64;
            let (b0, b1, b2, b3) = bernstein(t);
            xs.push(b1 * c1.0 + b2 * c2.0 + b3);
            ys.push(b0 * y0 + b1 * c1.1 + b2 * c2.1 + b3 * y3);
        }
        // x(t) is nondecreasing for control x-coordinates in [0,1]; guard rounding.
        for i in 1..xs.len() {
            if xs[i] < xs[i - 1] {
                xs[i] = xs[i - 1];
            }
        }
        Self { xs, ys }
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        let c1 = (rng.gen::<f64>(), rng.gen::<f64>());
        let c2 = (rng.gen::<f64>(), rng.gen::<f64>());
        let flipped = rng.gen_bool(0.5);
        Self::new(c1, c2, flipped)
    }

    pub fn eval(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        let i = self.xs.partition_point(|&x| x <= v);
        let y = if i == 0 {
            self.ys[0]
        } else if i == self.xs.len() {
            self.ys[i - 1]
        } else {
            let (x0, x1) = (self.xs[i - 1], self.xs[i]);
            let (y0, y1) = (self.ys[i - 1], self.ys[i]);
            if x1 > x0 {
                y0 + (y1 - y0) * (v - x0) / (x1 - x0)
            } else {
                y0
            }
        };
        y.clamp(0.0, 1.0)
    }

    pub fn apply(&self, img: &Image) -> Image {
        img.with_pixels(
            img.pixels
                .iter()
                .map(|&p| self.eval(p as f64) as f32)
                .collect(),
        )
    }
}

fn bernstein(t: f64) -> (f64, f64, f64, f64) {
    let s = 1.0 - t;
    (s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t)
}

pub fn nonlinear_intensity(img: &Image, rng: &mut impl Rng) -> Image {
    BezierMap::random(rng).apply(img)
}

fn shuffle_max_side(img: &Image, cfg: &DeformConfig) -> Result<usize> {
    let side = (cfg.shuffle_max_frac * img.height.min(img.width) as f64).floor() as usize;
    if side < 2 {
        return Err(Error::Config(format!(
            "shuffle window side {side} < 2 for a {}x{} image",
            img.height, img.width
        )));
    }
    Ok(side)
}

/// Permute the pixels of `cfg.shuffle_windows` random windows, one after another.
pub fn local_shuffle_traced(img: &Image, rng: &mut impl Rng, cfg: &DeformConfig) -> Result<(Image, Vec<Rect>)> {
    let max_side = shuffle_max_side(img, cfg)?;
    let (h, w) = img.size();
    let mut px = img.pixels.clone();
    let mut windows = Vec::with_capacity(cfg.shuffle_windows);
    let mut buf = Vec::with_capacity(max_side * max_side);
    for _ in 0..cfg.shuffle_windows {
        let wh = rng.gen_range(2..=max_side);
        let ww = rng.gen_range(2..=max_side);
        let y = rng.gen_range(0..=h - wh);
        let x = rng.gen_range(0..=w - ww);
        buf.clear();
        for r in y..y + wh {
            buf.extend_from_slice(&px[r * w + x..r * w + x + ww]);
        }
        buf.shuffle(rng);
        for (k, r) in (y..y + wh).enumerate() {
            px[r * w + x..r * w + x + ww].copy_from_slice(&buf[k * ww..(k + 1) * ww]);
        }
        windows.push(Rect { y, x, h: wh, w: ww });
    }
    Ok((img.with_pixels(px), windows))
}

pub fn local_shuffle(img: &Image, rng: &mut impl Rng, cfg: &DeformConfig) -> Result<Image> {
    local_shuffle_traced(img, rng, cfg).map(|(img, _)| img)
}

/// Random rectangle strictly inside the image, sides in `[lo, hi]` per axis.
fn interior_rect(rng: &mut impl Rng, (h, w): (usize, usize), side_h: (usize, usize), side_w: (usize, usize)) -> Rect {
    let rh = rng.gen_range(side_h.0..=side_h.1);
    let rw = rng.gen_range(side_w.0..=side_w.1);
    let y = rng.gen_range(1..=h - 1 - rh);
    let x = rng.gen_range(1..=w - 1 - rw);
    Rect { y, x, h: rh, w: rw }
}

fn check_paintable(img: &Image) -> Result<()> {
    if img.height < 4 || img.width < 4 {
        return Err(Error::Config(format!(
            "painting needs at least 4x4, got {}x{}",
            img.height, img.width
        )));
    }
    Ok(())
}

fn patch_sides(cfg: &DeformConfig, m: usize, dim: usize) -> (usize, usize) {
    let (fmin, fmax) = cfg.paint_patch_frac_range;
    let cap = dim - 2;
    let lo = ((fmin * m as f64).floor() as usize).clamp(1, cap);
    let hi = ((fmax * m as f64).floor() as usize).clamp(lo, cap);
    (lo, hi)
}

/// Replace random interior patches with uniform noise.
pub fn inpaint_traced(img: &Image, rng: &mut impl Rng, cfg: &DeformConfig) -> Result<(Image, Vec<Rect>)> {
    check_paintable(img)?;
    let (h, w) = img.size();
    let m = h.min(w);
    let (cmin, cmax) = cfg.paint_patch_count_range;
    let count = rng.gen_range(cmin..=cmax);
    let sides_h = patch_sides(cfg, m, h);
    let sides_w = patch_sides(cfg, m, w);
    let mut px = img.pixels.clone();
    let mut rects = Vec::with_capacity(count);
    for _ in 0..count {
        let r = interior_rect(rng, (h, w), sides_h, sides_w);
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                px[y * w + x] = rng.gen::<f32>();
            }
        }
        rects.push(r);
    }
    Ok((img.with_pixels(px), rects))
}

pub fn inpaint(img: &Image, rng: &mut impl Rng, cfg: &DeformConfig) -> Result<Image> {
    inpaint_traced(img, rng, cfg).map(|(img, _)| img)
}

fn retained_sides(dim: usize) -> (usize, usize) {
    let lo = dim.div_ceil(2);
    let hi = ((dim * 7) / 8).min(dim - 2).max(lo);
    (lo, hi)
}

/// Replace everything with uniform noise except one or two retained interior
/// rectangles. The first rectangle alone covers at least a quarter of the image.
pub fn outpaint_traced(img: &Image, rng: &mut impl Rng, _cfg: &DeformConfig) -> Result<(Image, Vec<Rect>)> {
    check_paintable(img)?;
    let (h, w) = img.size();
    let count = rng.gen_range(1..=2);
    let rects: Vec<Rect> = (0..count)
        .map(|_| interior_rect(rng, (h, w), retained_sides(h), retained_sides(w)))
        .collect();
    let mut px = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            if rects.iter().any(|r| r.contains(y, x)) {
                px.push(img.pixels[y * w + x]);
            } else {
                px.push(rng.gen::<f32>());
            }
        }
    }
    Ok((img.with_pixels(px), rects))
}

pub fn outpaint(img: &Image, rng: &mut impl Rng, cfg: &DeformConfig) -> Result<Image> {
    outpaint_traced(img, rng, cfg).map(|(img, _)| img)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Paint {
    In,
    Out,
}

/// Which operators a single [`deform_traced`] call applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Applied {
    pub nonlinear: bool,
    pub shuffle: bool,
    pub paint: Option<Paint>,
}

pub fn deform_traced(img: &Image, rng: &mut impl Rng, cfg: &DeformConfig) -> Result<(Image, Applied)> {
    let mut applied = Applied::default();
    let mut out = img.clone();
    if rng.gen_bool(cfg.p_nonlinear) {
        out = nonlinear_intensity(&out, rng);
        applied.nonlinear = true;
    }
    if rng.gen_bool(cfg.p_shuffle) {
        out = local_shuffle(&out, rng, cfg)?;
        applied.shuffle = true;
    }
    if rng.gen_bool(cfg.p_paint) {
        if rng.gen_bool(cfg.p_inpaint_given_paint) {
            out = inpaint(&out, rng, cfg)?;
            applied.paint = Some(Paint::In);
        } else {
            out = outpaint(&out, rng, cfg)?;
            applied.paint = Some(Paint::Out);
        }
    }
    Ok((out, applied))
}

/// The corruption operator: intensity remap, shuffle, then at most one painting op.
pub fn deform(img: &Image, rng: &mut impl Rng, cfg: &DeformConfig) -> Result<Image> {
    deform_traced(img, rng, cfg).map(|(img, _)| img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn ramp(h: usize, w: usize) -> Image {
        let px = (0..h * w).map(|i| i as f32 / (h * w - 1) as f32).collect();
        Image::new("ramp", h, w, px).unwrap()
    }

    #[test]
    fn diagonal_control_points_give_identity() {
        let map = BezierMap::new((1.0 / 3.0, 1.0 / 3.0), (2.0 / 3.0, 2.0 / 3.0), false);
        let img = ramp(16, 16);
        let out = map.apply(&img);
        for (a, b) in img.pixels.iter().zip(&out.pixels) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn endpoints_are_fixed() {
        let mut rng = rng_from(11);
        for _ in 0..50 {
            let c1 = (rng.gen(), rng.gen());
            let c2 = (rng.gen(), rng.gen());
            let map = BezierMap::new(c1, c2, false);
            assert_eq!(map.eval(0.0), 0.0);
            assert_eq!(map.eval(1.0), 1.0);
            let flipped = BezierMap::new(c1, c2, true);
            assert_eq!(flipped.eval(0.0), 1.0);
            assert_eq!(flipped.eval(1.0), 0.0);
        }
    }

    #[test]
    fn shuffle_of_constant_image_is_identity() {
        let img = Image::new("c", 32, 32, vec![0.25; 1024]).unwrap();
        let out = local_shuffle(&img, &mut rng_from(1), &DeformConfig::default()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn shuffle_rejects_windows_below_two_pixels() {
        let img = ramp(8, 8);
        assert!(local_shuffle(&img, &mut rng_from(1), &DeformConfig::default()).is_err());
    }

    #[test]
    fn identity_config_is_identity() {
        let img = ramp(32, 32);
        let out = deform(&img, &mut rng_from(5), &DeformConfig::identity()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn inpaint_is_reproducible() {
        let img = ramp(32, 32);
        let cfg = DeformConfig::default();
        let a = inpaint_traced(&img, &mut rng_from(9), &cfg).unwrap();
        let b = inpaint_traced(&img, &mut rng_from(9), &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn outpaint_keeps_a_quarter() {
        let img = ramp(17, 31);
        let mut rng = rng_from(4);
        for _ in 0..200 {
            let (_, rects) = outpaint_traced(&img, &mut rng, &DeformConfig::default()).unwrap();
            assert!(rects[0].area() * 4 >= 17 * 31);
            for r in &rects {
                assert!(r.y >= 1 && r.x >= 1 && r.y + r.h < 17 && r.x + r.w < 31);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(DeformConfig::default().validate().is_ok());
        let bad = DeformConfig {
            p_shuffle: 1.5,
            ..DeformConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DeformConfig {
            paint_patch_count_range: (0, 3),
            ..DeformConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
