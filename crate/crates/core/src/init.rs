//! Initial labelings and pixel likelihoods from per-frame response maps.
//!
//! Each frame's response is weighted by a Gaussian around the position
//! predicted from the previous labelings, fused by pixelwise max with the
//! previous frame's fused map warped along the flow, and binarized.
//! Likelihoods put 0.99 on the labeled foreground, a decaying band around it
//! and 0.01 elsewhere.

use crate::datamodel::{
    clamp_likelihood, Connectivity, Dims, FlowField, LabelField, LikelihoodField, Params, SoftMask,
};
use crate::error::{Error, Result};
use crate::flowgraph::{check_forward_backward, warp_mask};
use crate::morphology::{bounding_box, largest_component, squared_distance_to};

pub const FOREGROUND_LIKELIHOOD: f64 = 0.99;
pub const UNCERTAIN_PEAK: f64 = 0.7;
pub const BACKGROUND_LIKELIHOOD: f64 = 0.01;

/// Constant-velocity extrapolation from the most recent centroids
/// (`(row, col)`, oldest first).
pub fn predict_centroid(history: &[(f64, f64)]) -> Result<(f64, f64)> {
    match history {
        [] => Err(Error::config("no centroid history to predict from")),
        [only] => Ok(*only),
        [.., c1, c2] => Ok((2.0 * c2.0 - c1.0, 2.0 * c2.1 - c1.1)),
    }
}

/// `exp(-d^2 / (2 sigma^2))` with `d` measured from the grid point nearest
/// to `center`.
pub fn gaussian_position_prior(center: (f64, f64), sigma: f64, dims: Dims) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::validation(format!(
            "sigma_motion must be > 0, got {sigma}"
        )));
    }
    let (cr, cc) = (center.0.round(), center.1.round());
    let denom = 2.0 * sigma * sigma;
    Ok((0..dims.len())
        .map(|i| {
            let (r, c) = dims.unflatten(i);
            let (dr, dc) = (r as f64 - cr, c as f64 - cc);
            (-(dr * dr + dc * dc) / denom).exp()
        })
        .collect())
}

/// Pixelwise maximum of two maps.
pub fn fuse_response(weighted: &SoftMask, warped_prev: &SoftMask) -> Result<SoftMask> {
    if weighted.dims() != warped_prev.dims() {
        return Err(Error::validation(format!(
            "cannot fuse maps of {:?} and {:?}",
            weighted.dims(),
            warped_prev.dims()
        )));
    }
    let values = weighted
        .values()
        .iter()
        .zip(warped_prev.values())
        .map(|(a, b)| a.max(*b))
        .collect();
    SoftMask::new(
        weighted.frame_index(),
        weighted.object_id(),
        weighted.dims(),
        values,
    )
}

/// Label 1 where the map is at least `threshold`.
pub fn binarize(map: &SoftMask, threshold: f64) -> LabelField {
    map.binarize(threshold)
}

/// Likelihood of the foreground label around a labeling: 0.99 inside, a
/// Gaussian band of peak 0.7 within `radius` of the foreground, 0.01
/// elsewhere.
pub fn build_likelihood(labeling: &LabelField, radius: f64, sigma: f64) -> Result<LikelihoodField> {
    if !(radius >= 1.0) {
        return Err(Error::config(format!(
            "dilation radius must be >= 1, got {radius}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::config(format!(
            "sigma_uncertain must be > 0, got {sigma}"
        )));
    }
    let dims = labeling.dims();
    let d2 = squared_distance_to(labeling.labels(), dims);
    let r2 = radius * radius;
    let raw: Vec<f64> = d2
        .iter()
        .map(|&d2| {
            if d2 == 0.0 {
                FOREGROUND_LIKELIHOOD
            } else if d2 <= r2 {
                UNCERTAIN_PEAK * (-d2 / (2.0 * sigma * sigma)).exp()
            } else {
                BACKGROUND_LIKELIHOOD
            }
        })
        .collect();
    clamp_likelihood(labeling.frame_index(), labeling.object_id(), dims, &raw)
}

fn centroid(mask: &[u8], dims: Dims) -> Option<(f64, f64)> {
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m == 1) {
        let (r, c) = dims.unflatten(i);
        sr += r as f64;
        sc += c as f64;
        n += 1;
    }
    (n > 0).then(|| (sr / n as f64, sc / n as f64))
}

fn half_diagonal(mask: &[u8], dims: Dims) -> Option<f64> {
    bounding_box(mask, dims).map(|(r0, c0, r1, c1)| {
        let (h, w) = ((r1 - r0 + 1) as f64, (c1 - c0 + 1) as f64);
        0.5 * (h * h + w * w).sqrt()
    })
}

fn find_flow(flows: &[FlowField], source: usize, step: i32) -> Option<&FlowField> {
    flows
        .iter()
        .find(|f| f.source_frame() == source && f.step() == step)
}

/// Builds `x(0)` and the likelihood fields for one object.
///
/// `responses[t]` is the object's foreground-probability map for frame `t`
/// (frame 0's entry is ignored in favor of `first_gt`). `flows` must contain
/// the backward flow `(t, -1)` for every `t >= 1`; when the forward flow
/// `(t - 1, +1)` is also present, warped values are dropped where the pair
/// fails the forward-backward check.
pub fn initialize_sequence(
    responses: &[SoftMask],
    flows: &[FlowField],
    first_gt: &LabelField,
    params: &Params,
) -> Result<(Vec<LabelField>, Vec<LikelihoodField>)> {
    params.validate()?;
    let dims = first_gt.dims();
    let object_id = first_gt.object_id();
    let radius = params.dilate_radius;
    let sigma_u = params.sigma_uncertain();
    if responses.is_empty() {
        return Err(Error::config("no response maps supplied"));
    }
    for (t, r) in responses.iter().enumerate() {
        if r.dims() != dims {
            return Err(Error::Dimension {
                frame: t,
                expected: (dims.width, dims.height),
                found: (r.dims().width, r.dims().height),
            });
        }
    }

    let first = first_gt.clone().with_index(0, object_id);
    let mut labels = vec![first.clone()];
    let mut likelihoods = vec![build_likelihood(&first, radius, sigma_u)?];

    let mut track: Vec<(f64, f64)> = Vec::with_capacity(responses.len());
    let mut sigma_motion = 1.0;
    let mut observe =
        |mask: &LabelField, predicted: Option<(f64, f64)>, track: &mut Vec<(f64, f64)>| {
            let main = largest_component(mask.labels(), dims, Connectivity::Four);
            if let Some(s) = half_diagonal(&main, dims) {
                sigma_motion = s;
            }
            if let Some(c) = centroid(&main, dims).or(predicted) {
                track.push(c);
            }
            sigma_motion
        };
    let mut sigma = observe(&first, None, &mut track);
    if track.is_empty() {
        return Err(Error::config("first-frame ground truth is empty"));
    }
    let mut prev_fused = first.to_soft();

    for (t, response) in responses.iter().enumerate().skip(1) {
        let predicted = predict_centroid(&track[track.len().saturating_sub(2)..])?;
        let s = params.sigma_motion.unwrap_or(sigma);
        let prior = gaussian_position_prior(predicted, s, dims)?;
        let weighted = SoftMask::new(
            t,
            object_id,
            dims,
            response
                .values()
                .iter()
                .zip(&prior)
                .map(|(v, w)| v * w)
                .collect(),
        )?;

        let bwd = find_flow(flows, t, -1).ok_or_else(|| {
            Error::config(format!("missing backward flow for frame {t} (step -1)"))
        })?;
        let mut warped = warp_mask(&prev_fused, bwd)?;
        if let Some(fwd) = find_flow(flows, t - 1, 1) {
            let valid = check_forward_backward(bwd, fwd, params.fb_tolerance)?;
            let values = warped
                .values()
                .iter()
                .zip(&valid)
                .map(|(&v, &ok)| if ok { v } else { 0.0 })
                .collect();
            warped = SoftMask::new(t, object_id, dims, values)?;
        }
        let fused = fuse_response(&weighted, &warped.with_index(t, object_id))?;
        let x = binarize(&fused, params.binarize_threshold);
        likelihoods.push(build_likelihood(&x, radius, sigma_u)?);
        sigma = observe(&x, Some(predicted), &mut track);
        labels.push(x);
        prev_fused = fused;
    }
    Ok((labels, likelihoods))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn centroid_prediction() {
        assert_eq!(
            predict_centroid(&[(10.0, 10.0), (12.0, 14.0)]).unwrap(),
            (14.0, 18.0)
        );
        assert_eq!(
            predict_centroid(&[(5.0, 5.0), (5.0, 5.0)]).unwrap(),
            (5.0, 5.0)
        );
        assert_eq!(predict_centroid(&[(7.0, 3.0)]).unwrap(), (7.0, 3.0));
        assert!(matches!(
            predict_centroid(&[]),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn gaussian_prior_values() {
        let d = Dims::new(21, 21).unwrap();
        let m = gaussian_position_prior((10.2, 9.8), 3.0, d).unwrap();
        assert_eq!(m[d.flatten(10, 10)], 1.0);
        assert_relative_eq!(m[d.flatten(10, 13)], (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(m[d.flatten(10, 13)], 0.6065, epsilon = 1e-4);
        let wide = gaussian_position_prior((0.0, 0.0), 1e9, d).unwrap();
        assert!(wide.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn fusion_and_binarization() {
        let d = Dims::new(3, 1).unwrap();
        let a = SoftMask::new(0, 1, d, vec![0.3, 0.0, 0.5]).unwrap();
        let b = SoftMask::new(0, 1, d, vec![0.8, 0.0, 0.5]).unwrap();
        assert_eq!(fuse_response(&a, &b).unwrap().values(), &[0.8, 0.0, 0.5]);
        assert_eq!(fuse_response(&a, &SoftMask::zeros(0, 1, d)).unwrap(), a);
        assert_eq!(binarize(&a, 0.5).labels(), &[0, 0, 1]);
        let low = SoftMask::new(0, 1, d, vec![0.49; 3]).unwrap();
        assert_eq!(binarize(&low, 0.5).count_ones(), 0);
        let other = SoftMask::zeros(0, 1, Dims::new(1, 3).unwrap());
        assert!(fuse_response(&a, &other).is_err());
    }

    #[test]
    fn likelihood_bands() {
        let d = Dims::new(60, 1).unwrap();
        let mut x = LabelField::zeros(0, 1, d);
        for i in 0..10 {
            x.set(i, true);
        }
        let l = build_likelihood(&x, 20.0, 10.0).unwrap();
        assert_eq!(l.get(0), 0.99);
        assert_relative_eq!(l.get(10), 0.7 * (-1.0f64 / 200.0).exp(), epsilon = 1e-15);
        assert!(l.get(10) < 0.7 && l.get(10) > 0.69);
        assert_relative_eq!(l.get(29), 0.7 * (-400.0f64 / 200.0).exp(), epsilon = 1e-15);
        assert_eq!(l.get(30), 0.01);
        assert_eq!(l.get(59), 0.01);
    }

    fn square_gt(d: Dims, r0: usize, c0: usize, size: usize, frame: usize) -> LabelField {
        let mut x = LabelField::zeros(frame, 1, d);
        for r in r0..r0 + size {
            for c in c0..c0 + size {
                x.set(d.flatten(r, c), true);
            }
        }
        x
    }

    #[test]
    fn perfect_responses_survive() {
        let d = Dims::new(24, 24).unwrap();
        let gt: Vec<LabelField> = (0..4).map(|t| square_gt(d, 8, 8, 6, t)).collect();
        let resp: Vec<SoftMask> = gt.iter().map(LabelField::to_soft).collect();
        let flows: Vec<FlowField> = (1..4)
            .flat_map(|t| {
                [
                    FlowField::zeros(t, -1, d).unwrap(),
                    FlowField::zeros(t - 1, 1, d).unwrap(),
                ]
            })
            .collect();
        let (x, l) = initialize_sequence(&resp, &flows, &gt[0], &Params::default()).unwrap();
        assert_eq!(x, gt);
        assert_eq!(l.len(), 4);
    }

    #[test]
    fn distant_duplicate_is_suppressed() {
        let d = Dims::new(48, 48).unwrap();
        // Object moves 2 columns per frame; frame 2's response has a copy far away.
        let gt: Vec<LabelField> = (0..3).map(|t| square_gt(d, 10, 5 + 2 * t, 5, t)).collect();
        let mut resp: Vec<SoftMask> = gt.iter().map(LabelField::to_soft).collect();
        let mut noisy = gt[2].clone();
        for r in 35..40 {
            for c in 35..40 {
                noisy.set(d.flatten(r, c), true);
            }
        }
        resp[2] = noisy.to_soft();
        let flows: Vec<FlowField> = (1..3)
            .flat_map(|t| {
                [
                    FlowField::uniform(t, -1, d, -2.0, 0.0).unwrap(),
                    FlowField::uniform(t - 1, 1, d, 2.0, 0.0).unwrap(),
                ]
            })
            .collect();
        let params = Params {
            sigma_motion: Some(4.0),
            ..Params::default()
        };
        let (x, _) = initialize_sequence(&resp, &flows, &gt[0], &params).unwrap();
        assert_eq!(x[2], gt[2]);
    }

    #[test]
    fn empty_responses_keep_the_propagated_mask() {
        let d = Dims::new(16, 16).unwrap();
        let gt0 = square_gt(d, 4, 4, 4, 0);
        let resp = vec![
            gt0.to_soft(),
            SoftMask::zeros(1, 1, d),
            SoftMask::zeros(2, 1, d),
        ];
        let flows = vec![
            FlowField::zeros(1, -1, d).unwrap(),
            FlowField::zeros(2, -1, d).unwrap(),
        ];
        let (x, l) = initialize_sequence(&resp, &flows, &gt0, &Params::default()).unwrap();
        // The fused map is carried forward, so the first-frame mask survives
        // frames whose own response is empty.
        assert_eq!(x[1], gt0.clone().with_index(1, 1));
        assert_eq!(x[2], gt0.clone().with_index(2, 1));
        assert_eq!(l[2].probs(), l[1].probs());
    }

    #[test]
    fn missing_flow_is_configuration_error() {
        let d = Dims::new(8, 8).unwrap();
        let gt0 = square_gt(d, 2, 2, 2, 0);
        let resp = vec![gt0.to_soft(), gt0.to_soft().with_index(1, 1)];
        assert!(matches!(
            initialize_sequence(&resp, &[], &gt0, &Params::default()),
            Err(Error::Configuration(_))
        ));
    }

    proptest! {
        #[test]
        fn prior_is_radially_non_increasing(r in 0usize..20, c in 0usize..20, s in 0.5f64..10.0) {
            let d = Dims::new(20, 20).unwrap();
            let m = gaussian_position_prior((r as f64, c as f64), s, d).unwrap();
            let mut by_dist: Vec<(usize, f64)> = (0..d.len()).map(|i| {
                let (rr, cc) = d.unflatten(i);
                ((rr as i64 - r as i64).pow(2) as usize + (cc as i64 - c as i64).pow(2) as usize, m[i])
            }).collect();
            by_dist.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
            for w in by_dist.windows(2) {
                prop_assert!(w[1].1 <= w[0].1);
            }
        }

        #[test]
        fn fusion_bounds(a in proptest::collection::vec(0.0f64..=1.0, 12), b in proptest::collection::vec(0.0f64..=1.0, 12)) {
            let d = Dims::new(4, 3).unwrap();
            let (ma, mb) = (SoftMask::new(0, 1, d, a).unwrap(), SoftMask::new(0, 1, d, b).unwrap());
            let f = fuse_response(&ma, &mb).unwrap();
            prop_assert_eq!(&f, &fuse_response(&mb, &ma).unwrap());
            prop_assert_eq!(&fuse_response(&f, &f).unwrap(), &f);
            for i in 0..12 {
                prop_assert!(f.get(i) >= ma.get(i) && f.get(i) >= mb.get(i));
            }
        }

        #[test]
        fn likelihood_stratification(bits in proptest::collection::vec(0u8..2, 100)) {
            let d = Dims::new(10, 10).unwrap();
            let x = LabelField::new(0, 1, d, bits).unwrap();
            let l = build_likelihood(&x, 3.0, 1.5).unwrap();
            for i in 0..100 {
                let p = l.get(i);
                if x.get(i) == 1 {
                    prop_assert_eq!(p, 0.99);
                } else {
                    prop_assert!((0.01..=0.7).contains(&p));
                }
            }
        }
    }
}
