//! Region similarity (J), contour accuracy (F) and their aggregation.

use serde::Serialize;

use crate::datamodel::{Dims, LabelField};
use crate::error::{Error, Result};
use crate::morphology::{boundary, dilate_disc};

fn check_dims(pred: &LabelField, gt: &LabelField) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::validation(format!(
            "prediction is {:?}, ground truth is {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

/// Intersection over union; 1.0 when both masks are empty.
pub fn region_j(pred: &LabelField, gt: &LabelField) -> Result<f64> {
    check_dims(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.labels().iter().zip(gt.labels()) {
        inter += (a & b) as usize;
        union += (a | b) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// DAVIS default boundary tolerance: 0.8% of the image diagonal, at least 1.
pub fn default_tolerance(dims: Dims) -> f64 {
    (0.008 * dims.diagonal()).round().max(1.0)
}

/// Boundary F-measure with matches allowed within `tol` pixels.
pub fn contour_f(pred: &LabelField, gt: &LabelField, tol: f64) -> Result<f64> {
    check_dims(pred, gt)?;
    if !(tol >= 0.0) {
        return Err(Error::validation(format!(
            "tolerance must be >= 0, got {tol}"
        )));
    }
    let dims = pred.dims();
    let bp = boundary(pred.labels(), dims);
    let bg = boundary(gt.labels(), dims);
    let (np, ng) = (count(&bp), count(&bg));
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let gt_zone = dilate_disc(&bg, dims, tol);
    let pred_zone = dilate_disc(&bp, dims, tol);
    let hits = |b: &[u8], zone: &[u8]| {
        b.iter()
            .zip(zone)
            .filter(|(&x, &z)| x == 1 && z == 1)
            .count()
    };
    let precision = hits(&bp, &gt_zone) as f64 / np as f64;
    let recall = hits(&bg, &pred_zone) as f64 / ng as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

fn count(mask: &[u8]) -> usize {
    mask.iter().filter(|&&m| m == 1).count()
}

/// Mean and recall (fraction strictly above 0.5) of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub global_mean: f64,
    pub j: MetricSummary,
    pub f: MetricSummary,
    pub count: usize,
}

/// Scores of one (sequence, object) pair, averaged over its frames.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Score {
    pub sequence: String,
    pub object_id: u32,
    pub j: f64,
    pub f: f64,
}

fn summarize(values: impl Iterator<Item = f64> + Clone) -> MetricSummary {
    let n = values.clone().count() as f64;
    MetricSummary {
        mean: values.clone().sum::<f64>() / n,
        recall: values.filter(|&v| v > 0.5).count() as f64 / n,
    }
}

pub fn aggregate(scores: &[Score]) -> Result<Aggregate> {
    if scores.is_empty() {
        return Err(Error::validation("no scores to aggregate"));
    }
    let j = summarize(scores.iter().map(|s| s.j));
    let f = summarize(scores.iter().map(|s| s.f));
    Ok(Aggregate {
        global_mean: 0.5 * (j.mean + f.mean),
        j,
        f,
        count: scores.len(),
    })
}

/// Scores one object over a sequence: frame-averaged J and F. Frames listed
/// in `skip` (typically the annotated first frame) are excluded.
pub fn score_object(
    sequence: &str,
    pred: &[LabelField],
    gt: &[LabelField],
    tol: Option<f64>,
    skip: &[usize],
) -> Result<Score> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::validation(format!(
            "{} predicted frames for {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let (mut js, mut fs, mut n) = (0.0, 0.0, 0usize);
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        if skip.contains(&t) {
            continue;
        }
        let tol = tol.unwrap_or_else(|| default_tolerance(g.dims()));
        js += region_j(p, g)?;
        fs += contour_f(p, g, tol)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::validation("every frame was skipped"));
    }
    Ok(Score {
        sequence: sequence.to_owned(),
        object_id: pred[0].object_id(),
        j: js / n as f64,
        f: fs / n as f64,
    })
}

/// Plain-text table: one row per (sequence, object) and a summary block.
pub fn render_table(scores: &[Score]) -> Result<String> {
    use std::fmt::Write;
    let agg = aggregate(scores)?;
    let width = scores
        .iter()
        .map(|s| s.sequence.len())
        .max()
        .unwrap_or(0)
        .max("sequence".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>8}  {:>8}",
        "sequence", "object", "J", "F"
    );
    for s in scores {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>8.4}  {:>8.4}",
            s.sequence, s.object_id, s.j, s.f
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>8}  {:>8}  {:>8}  {:>8}  {:>8}",
        "Global", "J-Mean", "J-Recall", "F-Mean", "F-Recall"
    );
    let _ = writeln!(
        out,
        "{:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}",
        agg.global_mean, agg.j.mean, agg.j.recall, agg.f.mean, agg.f.recall
    );
    Ok(out)
}

#[derive(Serialize)]
struct Record<'a> {
    sequence: &'a str,
    object_id: u32,
    metric: &'a str,
    value: f64,
}

/// JSON lines, one record per (sequence, object, metric).
pub fn render_records(scores: &[Score]) -> String {
    let mut out = String::new();
    for s in scores {
        for (metric, value) in [("J", s.j), ("F", s.f)] {
            let rec = Record {
                sequence: &s.sequence,
                object_id: s.object_id,
                metric,
                value,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(d: Dims, r0: usize, c0: usize, h: usize, w: usize) -> LabelField {
        let mut x = LabelField::zeros(0, 1, d);
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                x.set(d.flatten(r, c), true);
            }
        }
        x
    }

    #[test]
    fn region_examples() {
        let d = Dims::new(10, 10).unwrap();
        let gt = rect(d, 2, 2, 4, 4);
        assert_eq!(region_j(&gt, &gt).unwrap(), 1.0);
        assert_eq!(
            region_j(&rect(d, 0, 0, 2, 2), &rect(d, 7, 7, 2, 2)).unwrap(),
            0.0
        );
        assert_eq!(region_j(&rect(d, 2, 2, 2, 4), &gt).unwrap(), 0.5);
        let empty = LabelField::zeros(0, 1, d);
        assert_eq!(region_j(&empty, &empty).unwrap(), 1.0);
        assert!(region_j(&empty, &LabelField::zeros(0, 1, Dims::new(5, 5).unwrap())).is_err());
    }

    #[test]
    fn contour_examples() {
        let d = Dims::new(20, 20).unwrap();
        let gt = rect(d, 5, 5, 6, 6);
        assert_eq!(contour_f(&gt, &gt, 1.0).unwrap(), 1.0);
        assert_eq!(contour_f(&rect(d, 5, 6, 6, 6), &gt, 2.0).unwrap(), 1.0);
        assert!(contour_f(&rect(d, 5, 9, 6, 6), &gt, 1.0).unwrap() < 1.0);
        assert_eq!(
            contour_f(&LabelField::zeros(0, 1, d), &gt, 2.0).unwrap(),
            0.0
        );
        let empty = LabelField::zeros(0, 1, d);
        assert_eq!(contour_f(&empty, &empty, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn default_tolerance_values() {
        assert_eq!(default_tolerance(Dims::new(128, 128).unwrap()), 1.0);
        assert_eq!(default_tolerance(Dims::new(854, 480).unwrap()), 8.0);
    }

    fn score(j: f64, f: f64) -> Score {
        Score {
            sequence: "s".into(),
            object_id: 1,
            j,
            f,
        }
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[score(0.4, 0.0), score(0.6, 0.0), score(0.8, 0.0)]).unwrap();
        assert!((a.j.mean - 0.6).abs() < 1e-12);
        assert!((a.j.recall - 2.0 / 3.0).abs() < 1e-12);
        let b = aggregate(&[score(0.706, 0.706)]).unwrap();
        assert!((b.global_mean - 0.706).abs() < 1e-12);
        let c = aggregate(&[score(0.5, 0.5), score(0.5, 0.5)]).unwrap();
        assert_eq!(c.j.recall, 0.0);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn records_and_table() {
        let s = [score(1.0, 0.5)];
        let rec = render_records(&s);
        assert_eq!(rec.lines().count(), 2);
        assert!(rec.contains(r#""metric":"J","value":1.0"#));
        assert!(render_table(&s).unwrap().contains("Global"));
    }

    fn mask_strategy() -> impl Strategy<Value = LabelField> {
        proptest::collection::vec(0u8..2, 64)
            .prop_map(|v| LabelField::new(0, 1, Dims::new(8, 8).unwrap(), v).unwrap())
    }

    proptest! {
        #[test]
        fn metrics_symmetric_and_bounded(a in mask_strategy(), b in mask_strategy(), t in 0.0f64..4.0) {
            let j = region_j(&a, &b).unwrap();
            prop_assert_eq!(j, region_j(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&j));
            let f = contour_f(&a, &b, t).unwrap();
            prop_assert!((f - contour_f(&b, &a, t).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!(contour_f(&a, &b, t + 1.0).unwrap() >= f - 1e-12);
        }
    }
}
