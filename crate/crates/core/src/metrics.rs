//! Labeling quality metrics: amortized frame time, object error and pixel error.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::dataset::rasterize_mask;
use crate::error::{Error, Result};
use crate::geometry::PoseDelta;
use crate::propagation::FrameAnnotation;
use crate::raster::{polygon_spans, Mask, SpanSet};

/// An object counts as correctly labeled above this overlap ratio.
pub const OVERLAP_THRESHOLD: f64 = 0.75;

/// Manual-labeling row kept for comparison. These numbers are imported, not measured.
pub const MANUAL_FRAME_TIME_SEC: f64 = 92.3;
pub const MANUAL_OBJECT_ERROR_PCT: f64 = 1.2;
pub const MANUAL_PIXEL_ERROR_PX: f64 = 46.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PixelErrorMode {
    /// Differing pixels divided by the number of truth objects.
    #[default]
    PerObject,
    /// Differing pixels per frame.
    PerFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingReport {
    pub method: String,
    pub mean_frame_time_sec: f64,
    pub mean_object_error_pct: f64,
    pub mean_pixel_error_px: f64,
    pub frames_evaluated: usize,
    pub pixel_error_mode: PixelErrorMode,
}

/// `(initial + machine) / frames`.
pub fn mean_frame_time(initial_label_sec: f64, machine_sec: f64, frame_count: usize) -> Result<f64> {
    if frame_count == 0 {
        return Err(Error::UndefinedMetric("frame time over zero frames".into()));
    }
    if !(initial_label_sec >= 0.0 && machine_sec >= 0.0) {
        return Err(Error::UndefinedMetric("negative labeling time".into()));
    }
    Ok((initial_label_sec + machine_sec) / frame_count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObjectErrorCount {
    /// Truth objects that were missed or overlap too little.
    pub wrong: usize,
    /// Truth objects with a non-empty footprint in the image.
    pub total: usize,
}

impl ObjectErrorCount {
    pub fn fraction(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::UndefinedMetric("no truth objects in view".into()));
        }
        Ok(self.wrong as f64 / self.total as f64)
    }
}

fn spans_of(frame: &FrameAnnotation, cam: &CameraModel) -> Vec<(u32, SpanSet)> {
    frame
        .polygons
        .iter()
        .map(|p| (p.class_id, polygon_spans(&p.vertices, cam.width, cam.height)))
        .collect()
}

/// Greedy maximum-overlap matching between predicted and truth objects of
/// the same class. Overlap is intersection area over truth area. Truth
/// objects that rasterize to nothing are not counted.
pub fn object_error(
    predicted: &FrameAnnotation,
    truth: &FrameAnnotation,
    cam: &CameraModel,
) -> Result<ObjectErrorCount> {
    let pred = spans_of(predicted, cam);
    let truth: Vec<(u32, SpanSet, u64)> = spans_of(truth, cam)
        .into_iter()
        .map(|(c, s)| {
            let a = s.area();
            (c, s, a)
        })
        .filter(|t| t.2 > 0)
        .collect();
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("no truth objects in view".into()));
    }

    let mut pairs = Vec::new();
    for (ti, (tc, ts, ta)) in truth.iter().enumerate() {
        for (pi, (pc, ps)) in pred.iter().enumerate() {
            if pc != tc {
                continue;
            }
            let inter = ps.intersection_area(ts);
            if inter > 0 {
                pairs.push((inter as f64 / *ta as f64, pi, ti));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut pred_used = vec![false; pred.len()];
    let mut truth_ratio: Vec<Option<f64>> = vec![None; truth.len()];
    for (ratio, pi, ti) in pairs {
        if pred_used[pi] || truth_ratio[ti].is_some() {
            continue;
        }
        pred_used[pi] = true;
        truth_ratio[ti] = Some(ratio);
    }
    let correct = truth_ratio
        .iter()
        .filter(|r| matches!(r, Some(v) if *v > OVERLAP_THRESHOLD))
        .count();
    Ok(ObjectErrorCount {
        wrong: truth.len() - correct,
        total: truth.len(),
    })
}

/// Number of pixels set in exactly one mask.
pub fn pixel_difference(predicted: &Mask, truth: &Mask) -> Result<u64> {
    predicted.symmetric_difference(truth)
}

pub fn pixel_error(
    predicted: &Mask,
    truth: &Mask,
    object_count: usize,
    mode: PixelErrorMode,
) -> Result<f64> {
    let diff = pixel_difference(predicted, truth)? as f64;
    match mode {
        PixelErrorMode::PerFrame => Ok(diff),
        PixelErrorMode::PerObject if object_count == 0 => {
            Err(Error::UndefinedMetric("pixel error per object with no objects".into()))
        }
        PixelErrorMode::PerObject => Ok(diff / object_count as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameEvaluation {
    pub frame_id: u64,
    pub objects: usize,
    pub wrong_objects: usize,
    pub differing_pixels: u64,
}

pub fn evaluate_frame(
    predicted: &FrameAnnotation,
    truth: &FrameAnnotation,
    cam: &CameraModel,
) -> Result<FrameEvaluation> {
    let counts = object_error(predicted, truth, cam)?;
    let diff = pixel_difference(&rasterize_mask(predicted, cam), &rasterize_mask(truth, cam))?;
    Ok(FrameEvaluation {
        frame_id: truth.frame_id,
        objects: counts.total,
        wrong_objects: counts.wrong,
        differing_pixels: diff,
    })
}

/// Pools frame evaluations into one report. Object error is wrong objects
/// over all objects; per-object pixel error is all differing pixels over all
/// objects; per-frame pixel error is the mean over frames.
pub fn summarize(
    method: &str,
    frames: &[FrameEvaluation],
    mean_frame_time_sec: f64,
    mode: PixelErrorMode,
) -> Result<LabelingReport> {
    if frames.is_empty() {
        return Err(Error::UndefinedMetric("no frames evaluated".into()));
    }
    let objects: usize = frames.iter().map(|f| f.objects).sum();
    let wrong: usize = frames.iter().map(|f| f.wrong_objects).sum();
    let diff: u64 = frames.iter().map(|f| f.differing_pixels).sum();
    let pixel = match mode {
        PixelErrorMode::PerObject => diff as f64 / objects as f64,
        PixelErrorMode::PerFrame => diff as f64 / frames.len() as f64,
    };
    Ok(LabelingReport {
        method: method.to_string(),
        mean_frame_time_sec,
        mean_object_error_pct: 100.0 * wrong as f64 / objects as f64,
        mean_pixel_error_px: pixel,
        frames_evaluated: frames.len(),
        pixel_error_mode: mode,
    })
}

/// Aligned text table with one row per report and the imported manual row first.
pub fn render_table(reports: &[LabelingReport], include_manual: bool) -> String {
    let mut rows: Vec<[String; 5]> = vec![[
        "Method".into(),
        "Mean frame time, s".into(),
        "Mean object error, %".into(),
        "Mean pixel error, px".into(),
        "Frames".into(),
    ]];
    if include_manual {
        rows.push([
            "manual (imported)".into(),
            format!("{MANUAL_FRAME_TIME_SEC:.1}"),
            format!("{MANUAL_OBJECT_ERROR_PCT:.1}"),
            format!("{MANUAL_PIXEL_ERROR_PX:.1}"),
            "-".into(),
        ]);
    }
    for r in reports {
        rows.push([
            r.method.clone(),
            format!("{:.3}", r.mean_frame_time_sec),
            format!("{:.2}", r.mean_object_error_pct),
            format!("{:.2}", r.mean_pixel_error_px),
            r.frames_evaluated.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..5)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let _ = write!(out, "{:<w$}", row[0], w = widths[0]);
        for c in 1..5 {
            let _ = write!(out, "  {:>w$}", row[c], w = widths[c]);
        }
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * 4;
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

pub fn frames_csv(frames: &[FrameEvaluation]) -> String {
    let mut out = String::from("frame_id,objects,wrong_objects,differing_pixels\n");
    for f in frames {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            f.frame_id, f.objects, f.wrong_objects, f.differing_pixels
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RepeatabilityStats {
    pub trials: usize,
    /// Max |dx|, |dy|, |dz| in meters.
    pub max_translation: [f64; 3],
    /// Max |rx|, |ry|, |rz| in radians.
    pub max_rotation: [f64; 3],
    /// Max rotation angle in radians.
    pub max_angle: f64,
}

pub fn repeatability_stats(trials: &[PoseDelta]) -> RepeatabilityStats {
    let mut s = RepeatabilityStats {
        trials: trials.len(),
        ..Default::default()
    };
    for d in trials {
        for k in 0..3 {
            s.max_translation[k] = s.max_translation[k].max(d.0[k].abs());
            s.max_rotation[k] = s.max_rotation[k].max(d.0[k + 3].abs());
        }
        s.max_angle = s.max_angle.max(nalgebra::Vector3::from(d.rotation()).norm());
    }
    s
}

pub fn repeatability_csv(trials: &[PoseDelta]) -> String {
    let mut out = String::from("trial,dx_mm,dy_mm,dz_mm,rx_deg,ry_deg,rz_deg,angle_deg\n");
    for (i, d) in trials.iter().enumerate() {
        let v = d.0;
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            i,
            v[0] * 1e3,
            v[1] * 1e3,
            v[2] * 1e3,
            v[3].to_degrees(),
            v[4].to_degrees(),
            v[5].to_degrees(),
            nalgebra::Vector3::from(d.rotation()).norm().to_degrees()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::propagation::PolygonAnnotation;
    use nalgebra::Vector2;

    fn rect(class_id: u32, x: f64, y: f64, w: f64, h: f64) -> PolygonAnnotation {
        PolygonAnnotation::new(
            class_id,
            vec![
                Vector2::new(x, y),
                Vector2::new(x + w, y),
                Vector2::new(x + w, y + h),
                Vector2::new(x, y + h),
            ],
        )
        .unwrap()
    }

    fn frame(polygons: Vec<PolygonAnnotation>) -> FrameAnnotation {
        FrameAnnotation {
            frame_id: 0,
            polygons,
            camera_pose: RigidTransform::identity(),
            timestamp: None,
            hidden: vec![],
        }
    }

    fn grid(n: usize) -> FrameAnnotation {
        frame(
            (0..n)
                .map(|i| rect(0, 20.0 + 30.0 * (i % 10) as f64, 20.0 + 40.0 * (i / 10) as f64, 20.0, 20.0))
                .collect(),
        )
    }

    #[test]
    fn frame_time_arithmetic() {
        assert!((mean_frame_time(119.0, 0.0, 400).unwrap() - 0.2975).abs() < 1e-15);
        assert_eq!(mean_frame_time(0.0, 8.0, 4).unwrap(), 2.0);
        assert_eq!(mean_frame_time(119.0, 0.5, 1).unwrap(), 119.5);
        assert!(mean_frame_time(1.0, 0.0, 0).is_err());
    }

    #[test]
    fn object_error_counts() {
        let cam = CameraModel::default();
        let truth = grid(20);
        assert_eq!(object_error(&truth, &truth, &cam).unwrap().fraction().unwrap(), 0.0);
        let mut missing = truth.clone();
        missing.polygons.remove(7);
        assert_eq!(object_error(&missing, &truth, &cam).unwrap().fraction().unwrap(), 0.05);
        assert!(matches!(
            object_error(&truth, &frame(vec![]), &cam),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn overlap_threshold_is_strict() {
        let cam = CameraModel::default();
        let truth = frame(vec![rect(0, 100.0, 100.0, 20.0, 20.0)]);
        // 15/20 columns overlap: exactly 75% is not enough.
        let at = frame(vec![rect(0, 105.0, 100.0, 20.0, 20.0)]);
        assert_eq!(object_error(&at, &truth, &cam).unwrap().wrong, 1);
        let above = frame(vec![rect(0, 104.0, 100.0, 20.0, 20.0)]);
        assert_eq!(object_error(&above, &truth, &cam).unwrap().wrong, 0);
    }

    #[test]
    fn class_mismatch_is_wrong() {
        let cam = CameraModel::default();
        let truth = frame(vec![rect(0, 100.0, 100.0, 20.0, 20.0)]);
        let pred = frame(vec![rect(1, 100.0, 100.0, 20.0, 20.0)]);
        assert_eq!(object_error(&pred, &truth, &cam).unwrap().wrong, 1);
    }

    #[test]
    fn one_prediction_matches_one_truth() {
        let cam = CameraModel::default();
        let truth = frame(vec![rect(0, 100.0, 100.0, 20.0, 20.0), rect(0, 100.0, 100.0, 20.0, 20.0)]);
        let pred = frame(vec![rect(0, 100.0, 100.0, 20.0, 20.0)]);
        assert_eq!(object_error(&pred, &truth, &cam).unwrap().wrong, 1);
    }

    #[test]
    fn shifted_rectangle_pixel_error() {
        let cam = CameraModel::default();
        let a = rasterize_mask(&frame(vec![rect(0, 10.0, 10.0, 40.0, 50.0)]), &cam);
        let b = rasterize_mask(&frame(vec![rect(0, 11.0, 10.0, 40.0, 50.0)]), &cam);
        assert_eq!(pixel_error(&a, &b, 1, PixelErrorMode::PerObject).unwrap(), 100.0);
        assert_eq!(pixel_error(&b, &a, 1, PixelErrorMode::PerObject).unwrap(), 100.0);
        assert_eq!(pixel_error(&a, &a, 1, PixelErrorMode::PerFrame).unwrap(), 0.0);
        assert!(pixel_error(&a, &Mask::new(10, 10), 1, PixelErrorMode::PerFrame).is_err());
    }

    #[test]
    fn repeatability_maxima() {
        assert_eq!(repeatability_stats(&[PoseDelta([0.0; 6])]).max_translation, [0.0; 3]);
        let s = repeatability_stats(&[PoseDelta([1.0, -2.0, 3.0, -0.1, 0.2, -0.3])]);
        assert_eq!(s.max_translation, [1.0, 2.0, 3.0]);
        assert_eq!(s.max_rotation, [0.1, 0.2, 0.3]);
        assert_eq!(repeatability_csv(&[PoseDelta([0.0; 6])]).lines().count(), 2);
    }

    #[test]
    fn table_includes_manual_row() {
        let r = LabelingReport {
            method: "odometry".into(),
            mean_frame_time_sec: 0.2975,
            mean_object_error_pct: 0.0,
            mean_pixel_error_px: 3.3,
            frames_evaluated: 400,
            pixel_error_mode: PixelErrorMode::PerObject,
        };
        let t = render_table(&[r], true);
        assert!(t.contains("manual (imported)") && t.contains("92.3") && t.contains("0.297"));
        assert_eq!(t.lines().count(), 4);
    }
}
