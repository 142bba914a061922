//! VOCAMix: inject a donor's static middle frame into the moving region of
//! a primary clip while keeping the primary's verb.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::{Clip, SoftLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MotionMask {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
    pub coverage: f64,
    /// True when the clip had no motion and the full frame was used.
    pub fallback: bool,
}

impl MotionMask {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            mask: vec![true; height * width],
            coverage: 1.0,
            fallback: true,
        }
    }

    pub fn active(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Per-pixel temporal standard deviation of the grayscale frames.
pub fn motion_scores(clip: &Clip) -> Vec<f64> {
    let g = clip.geometry;
    let plane = g.height * g.width;
    let gray = |k: usize, p: usize| -> f64 {
        let f = clip.frame(k);
        if g.channels == 3 {
            0.299 * f[p] as f64 + 0.587 * f[plane + p] as f64 + 0.114 * f[2 * plane + p] as f64
        } else {
            (0..g.channels).map(|c| f[c * plane + p] as f64).sum::<f64>() / g.channels as f64
        }
    };
    let t = g.frames as f64;
    (0..plane)
        .map(|p| {
            // shifted by the first frame so a static pixel scores exactly 0
            let v0 = gray(0, p);
            let vals: Vec<f64> = (0..g.frames).map(|k| gray(k, p) - v0).collect();
            let mean = vals.iter().sum::<f64>() / t;
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t).sqrt()
        })
        .collect()
}

/// Keeps the top `rho` fraction of pixels by motion score. Pixels with zero
/// score never enter the mask; a clip with no motion falls back to the full
/// frame.
pub fn estimate_motion_region(clip: &Clip, rho: f64) -> Result<MotionMask> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("quantile rho must lie in (0, 1), got {rho}")));
    }
    let g = clip.geometry;
    let scores = motion_scores(clip);
    let n = scores.len();
    let k = ((rho * n as f64).round() as usize).clamp(1, n);
    let mut sorted = scores.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k - 1];
    let mask: Vec<bool> = scores.iter().map(|&s| s > 0.0 && s >= threshold).collect();
    let active = mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Ok(MotionMask::full(g.height, g.width));
    }
    Ok(MotionMask {
        height: g.height,
        width: g.width,
        mask,
        coverage: active as f64 / n as f64,
        fallback: false,
    })
}

/// Blends `donor`'s middle frame into every frame of `primary` inside the
/// mask (or everywhere with `full_frame`). The verb stays the primary's; the
/// object label is softened by `lambda`.
pub fn vocamix(
    primary: &Clip,
    donor: &Clip,
    lambda: f64,
    mask: &MotionMask,
    full_frame: bool,
    n_objects: usize,
) -> Result<(Clip, SoftLabel)> {
    if primary.geometry != donor.geometry {
        return Err(Error::ShapeMismatch {
            op: "vocamix",
            lhs: geometry_dims(primary),
            rhs: geometry_dims(donor),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let g = primary.geometry;
    let plane = g.height * g.width;
    if !full_frame && mask.mask.len() != plane {
        return Err(Error::invalid("motion mask does not match the clip frame size"));
    }
    if primary.object >= n_objects || donor.object >= n_objects {
        return Err(Error::invalid("object label outside the vocabulary"));
    }
    let middle = donor.frame(g.frames / 2);
    let mut out = primary.clone();
    let (a, b) = ((1.0 - lambda) as f32, lambda as f32);
    for k in 0..g.frames {
        let frame = out.frame_mut(k);
        for c in 0..g.channels {
            for p in 0..plane {
                if full_frame || mask.mask[p] {
                    let i = c * plane + p;
                    frame[i] = a * frame[i] + b * middle[i];
                }
            }
        }
    }
    Ok((out, SoftLabel::mix(primary.object, donor.object, lambda, n_objects)))
}

fn geometry_dims(c: &Clip) -> Vec<usize> {
    let g = c.geometry;
    vec![g.frames, g.channels, g.height, g.width]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSampler {
    pub beta_a: f64,
    pub beta_b: f64,
    pub scale: f64,
    pub p_aug: f64,
}

impl Default for LambdaSampler {
    fn default() -> Self {
        Self {
            beta_a: 2.0,
            beta_b: 2.0,
            scale: 0.2,
            p_aug: 0.5,
        }
    }
}

impl LambdaSampler {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_a > 0.0 && self.beta_b > 0.0) {
            return Err(Error::Config("voca.beta parameters must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.scale) || !(0.0..=1.0).contains(&self.p_aug) {
            return Err(Error::Config("voca.scale and voca.p_aug must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `scale · Beta(a, b)`.
pub fn sample_lambda(s: &LambdaSampler, rng: &mut impl Rng) -> Result<f64> {
    let beta = Beta::new(s.beta_a, s.beta_b).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(s.scale * beta.sample(rng))
}
