//! Color-histogram refiner built from the first annotated frame.
//!
//! Foreground and background RGB histograms give a per-pixel color
//! posterior. It is combined with a location prior taken from the dilated
//! coarse mask, thresholded, restricted to components that touch the coarse
//! mask and hole-filled.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Connectivity, ImageFrame, LabelField, SoftMask};
use crate::error::{Error, Result};
use crate::morphology::{fill_holes, label_components, max_filter_disc};

use super::Refiner;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExemplarConfig {
    pub bins_per_channel: usize,
    /// Exponent on the location prior; the color posterior gets `1 - lambda`.
    pub lambda: f64,
    /// Dilation radius of the coarse mask, in pixels.
    pub radius: f64,
}

impl Default for ExemplarConfig {
    fn default() -> Self {
        ExemplarConfig {
            bins_per_channel: 16,
            lambda: 0.5,
            radius: 5.0,
        }
    }
}

const PRIOR_LOW: f64 = 0.1;
const PRIOR_HIGH: f64 = 0.9;
const SCORE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarModel {
    bins: usize,
    /// Smoothed `P(bin | foreground)`.
    fg: Vec<f64>,
    /// Smoothed `P(bin | background)`.
    bg: Vec<f64>,
    prior_fg: f64,
}

impl ExemplarModel {
    #[inline]
    fn bin(&self, rgb: [u8; 3]) -> usize {
        let q = |v: u8| v as usize * self.bins / 256;
        (q(rgb[0]) * self.bins + q(rgb[1])) * self.bins + q(rgb[2])
    }

    /// `P(foreground | color)` under the smoothed histograms.
    pub fn posterior(&self, rgb: [u8; 3]) -> f64 {
        let b = self.bin(rgb);
        let f = self.fg[b] * self.prior_fg;
        let g = self.bg[b] * (1.0 - self.prior_fg);
        f / (f + g)
    }

    pub fn posterior_map(&self, frame: &ImageFrame) -> Vec<f64> {
        (0..frame.dims().len())
            .map(|i| self.posterior(frame.pixel(i)))
            .collect()
    }

    pub fn bins_per_channel(&self) -> usize {
        self.bins
    }
}

/// Builds Laplace-smoothed (pseudo-count 1) color histograms from an
/// annotated frame.
pub fn exemplar_build(frame: &ImageFrame, gt: &LabelField, bins: usize) -> Result<ExemplarModel> {
    if !(1..=256).contains(&bins) {
        return Err(Error::config(format!(
            "bins per channel must be in 1..=256, got {bins}"
        )));
    }
    if frame.dims() != gt.dims() {
        return Err(Error::validation("frame and ground truth sizes differ"));
    }
    let total_bins = bins * bins * bins;
    let mut model = ExemplarModel {
        bins,
        fg: vec![0.0; total_bins],
        bg: vec![0.0; total_bins],
        prior_fg: 0.0,
    };
    let (mut nf, mut nb) = (0usize, 0usize);
    for i in 0..gt.dims().len() {
        let b = model.bin(frame.pixel(i));
        if gt.get(i) == 1 {
            model.fg[b] += 1.0;
            nf += 1;
        } else {
            model.bg[b] += 1.0;
            nb += 1;
        }
    }
    if nf == 0 {
        return Err(Error::config("exemplar model needs a non-empty foreground"));
    }
    let (df, db) = ((nf + total_bins) as f64, (nb + total_bins) as f64);
    for v in &mut model.fg {
        *v = (*v + 1.0) / df;
    }
    for v in &mut model.bg {
        *v = (*v + 1.0) / db;
    }
    model.prior_fg = nf as f64 / (nf + nb) as f64;
    Ok(model)
}

pub fn exemplar_refine(
    model: &ExemplarModel,
    frame: &ImageFrame,
    coarse: &SoftMask,
    config: &ExemplarConfig,
) -> Result<SoftMask> {
    let dims = frame.dims();
    if coarse.dims() != dims {
        return Err(Error::validation("coarse mask and frame sizes differ"));
    }
    let dilated = max_filter_disc(coarse.values(), dims, config.radius);
    let support: Vec<bool> = coarse.values().iter().map(|&v| v >= 0.5).collect();
    let lambda = config.lambda;
    let selected: Vec<bool> = (0..dims.len())
        .map(|i| {
            let prior = PRIOR_LOW + (PRIOR_HIGH - PRIOR_LOW) * dilated[i];
            let post = model.posterior(frame.pixel(i));
            post.powf(1.0 - lambda) * prior.powf(lambda) >= SCORE_THRESHOLD
        })
        .collect();
    let (comp, count) = label_components(dims, Connectivity::Four, |i| selected[i]);
    let mut keep = vec![false; count + 1];
    for i in 0..dims.len() {
        if support[i] && comp[i] != 0 {
            keep[comp[i] as usize] = true;
        }
    }
    let mut out: Vec<u8> = comp
        .iter()
        .map(|&c| (c != 0 && keep[c as usize]) as u8)
        .collect();
    fill_holes(&mut out, dims);
    SoftMask::new(
        coarse.frame_index(),
        coarse.object_id(),
        dims,
        out.into_iter().map(f64::from).collect(),
    )
}

/// One exemplar model per object, built from each object's first-frame mask.
#[derive(Debug, Clone)]
pub struct ExemplarRefiner {
    models: BTreeMap<u32, ExemplarModel>,
    config: ExemplarConfig,
}

impl ExemplarRefiner {
    pub fn build(
        first_frame: &ImageFrame,
        first_gt: &[LabelField],
        config: ExemplarConfig,
    ) -> Result<Self> {
        let models = first_gt
            .iter()
            .map(|gt| {
                Ok((
                    gt.object_id(),
                    exemplar_build(first_frame, gt, config.bins_per_channel)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(ExemplarRefiner { models, config })
    }

    pub fn model(&self, object_id: u32) -> Option<&ExemplarModel> {
        self.models.get(&object_id)
    }
}

impl Refiner for ExemplarRefiner {
    fn refine(&self, frame: &ImageFrame, coarse: &SoftMask) -> Result<SoftMask> {
        let model = self.models.get(&coarse.object_id()).ok_or_else(|| {
            Error::config(format!(
                "no exemplar model for object {}",
                coarse.object_id()
            ))
        })?;
        exemplar_refine(model, frame, coarse, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Dims;

    const RED: [u8; 3] = [220, 20, 20];
    const BLUE: [u8; 3] = [20, 20, 220];

    /// 32x32 blue frame with a red 12x12 square at (10, 10).
    fn scene() -> (ImageFrame, LabelField) {
        let d = Dims::new(32, 32).unwrap();
        let mut f = ImageFrame::filled(d, BLUE);
        let mut gt = LabelField::zeros(0, 1, d);
        for r in 10..22 {
            for c in 10..22 {
                f.set_pixel(d.flatten(r, c), RED);
                gt.set(d.flatten(r, c), true);
            }
        }
        (f, gt)
    }

    #[test]
    fn red_on_blue_posterior_from_counts() {
        let (f, gt) = scene();
        let m = exemplar_build(&f, &gt, 16).unwrap();
        // Direct evaluation of the smoothed counts.
        let (nf, nb, bins) = (144.0, 1024.0 - 144.0, 4096.0);
        let pf = (nf + 1.0) / (nf + bins) * (nf / 1024.0);
        let pb = 1.0 / (nb + bins) * (nb / 1024.0);
        let expect = pf / (pf + pb);
        assert!((m.posterior(RED) - expect).abs() < 1e-12);
        assert!(m.posterior(RED) > 0.9);
        assert!(m.posterior(BLUE) < 0.1);
    }

    #[test]
    fn uniform_color_half_foreground_is_even() {
        let d = Dims::new(8, 8).unwrap();
        let f = ImageFrame::filled(d, [100, 100, 100]);
        let gt = LabelField::new(0, 1, d, (0..64).map(|i| (i < 32) as u8).collect()).unwrap();
        let m = exemplar_build(&f, &gt, 16).unwrap();
        assert!((m.posterior([100, 100, 100]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_bin_posterior_is_area_fraction() {
        let (f, gt) = scene();
        let m = exemplar_build(&f, &gt, 1).unwrap();
        for c in [RED, BLUE, [0, 0, 0]] {
            assert!((m.posterior(c) - 144.0 / 1024.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_foreground_rejected() {
        let (f, _) = scene();
        let empty = LabelField::zeros(0, 1, f.dims());
        assert!(matches!(
            exemplar_build(&f, &empty, 16),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let (f, gt) = scene();
        let m = exemplar_build(&f, &gt, 16).unwrap();
        let out = exemplar_refine(&m, &f, &gt.to_soft(), &ExemplarConfig::default()).unwrap();
        assert_eq!(out.binarize(0.5), gt);
    }

    #[test]
    fn empty_coarse_gives_empty_output() {
        let (f, gt) = scene();
        let m = exemplar_build(&f, &gt, 16).unwrap();
        let out = exemplar_refine(
            &m,
            &f,
            &SoftMask::zeros(0, 1, f.dims()),
            &ExemplarConfig::default(),
        )
        .unwrap();
        assert_eq!(out.sum(), 0.0);
    }

    #[test]
    fn deterministic_and_binary_output() {
        let (f, gt) = scene();
        let m = exemplar_build(&f, &gt, 16).unwrap();
        let mut coarse = gt.clone();
        coarse.set(0, true);
        coarse.set(15 * 32 + 15, false);
        let a = exemplar_refine(&m, &f, &coarse.to_soft(), &ExemplarConfig::default()).unwrap();
        let b = exemplar_refine(&m, &f, &coarse.to_soft(), &ExemplarConfig::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(a.binarize(0.5), gt);
    }
}
