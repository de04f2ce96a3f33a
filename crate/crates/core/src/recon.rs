//! Average Jaccard scoring of reconstructed tracks, the single-video
//! reconstruction score and error localisation.

use crate::model::{self, ReconstructedTrack, Trajan};
use crate::trackdata::{QueryPoint, TrackSet};
use crate::train::make_batch;
use crate::{Error, Result};
use std::io::{Read, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct AJConfig {
    /// Pixel radii at the evaluation resolution, strictly increasing.
    pub thresholds: Vec<f64>,
    pub eval_width: u32,
    pub eval_height: u32,
    /// An occlusion logit above this value means "predicted occluded".
    pub occl_logit_cutoff: f64,
}

impl Default for AJConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            eval_width: 256,
            eval_height: 256,
            occl_logit_cutoff: 0.0,
        }
    }
}

impl AJConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config("at least one threshold is required".into()));
        }
        if !self.thresholds.iter().all(|&d| d > 0.0 && d.is_finite()) {
            return Err(Error::Config("thresholds must be positive and finite".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("thresholds must be strictly increasing".into()));
        }
        if self.eval_width == 0 || self.eval_height == 0 {
            return Err(Error::Config("evaluation resolution must be positive".into()));
        }
        Ok(())
    }
}

/// Point tracks with visibility, stored frame-major (`[t * num_points + i]`).
///
/// Unlike [`TrackSet`] this allows fully hidden points, as predictions may be.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTracks {
    pub clip_len: usize,
    pub num_points: usize,
    pub width: f64,
    pub height: f64,
    pub positions: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl PointTracks {
    pub fn from_trackset(ts: &TrackSet) -> Self {
        Self {
            clip_len: ts.clip_len(),
            num_points: ts.num_tracks(),
            width: f64::from(ts.width()),
            height: f64::from(ts.height()),
            positions: ts.positions().iter().map(|p| [f64::from(p[0]), f64::from(p[1])]).collect(),
            visible: ts.occluded().iter().map(|o| !o).collect(),
        }
    }

    /// Packs decoder output; tracks must all have the same length.
    pub fn from_reconstructions(tracks: &[ReconstructedTrack], width: u32, height: u32, cutoff: f64) -> Result<Self> {
        let clip_len = tracks.first().map_or(0, |t| t.len());
        if tracks.iter().any(|t| t.len() != clip_len || t.occlusion_logits.len() != clip_len) {
            return Err(Error::contract("reconstructed tracks differ in length"));
        }
        let n = tracks.len();
        let mut positions = Vec::with_capacity(clip_len * n);
        let mut visible = Vec::with_capacity(clip_len * n);
        for t in 0..clip_len {
            for tr in tracks {
                positions.push(tr.positions[t]);
                visible.push(tr.occlusion_logits[t] <= cutoff);
            }
        }
        Ok(Self {
            clip_len,
            num_points: n,
            width: f64::from(width),
            height: f64::from(height),
            positions,
            visible,
        })
    }

    fn check(&self) -> Result<()> {
        let n = self.clip_len * self.num_points;
        if self.positions.len() != n || self.visible.len() != n {
            return Err(Error::contract("point track arrays do not match their dimensions"));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::contract("resolution must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AJReport {
    pub overall: f64,
    /// `(threshold, Jaccard)` in threshold order.
    pub per_threshold: Vec<(f64, f64)>,
    pub per_frame: Vec<f64>,
    pub per_point: Vec<f64>,
    /// Frames without a single countable pair; their score is 1.
    pub vacuous_frames: Vec<usize>,
    pub vacuous_points: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Counts {
    fn add(&mut self, gt_vis: bool, pred_vis: bool, within: bool) {
        match (gt_vis, pred_vis) {
            (true, true) if within => self.tp += 1,
            (true, true) => {
                self.fp += 1;
                self.fn_ += 1;
            }
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    /// `None` when nothing was counted.
    fn jaccard(&self) -> Option<f64> {
        let den = self.tp + self.fp + self.fn_;
        (den > 0).then(|| self.tp as f64 / den as f64)
    }
}

/// Average Jaccard of `pred` against `gt`, both rescaled to the evaluation
/// resolution. A prediction is within `δ` when its distance is strictly
/// smaller than `δ`.
pub fn average_jaccard(pred: &PointTracks, gt: &PointTracks, cfg: &AJConfig) -> Result<AJReport> {
    cfg.validate()?;
    pred.check()?;
    gt.check()?;
    if (pred.clip_len, pred.num_points) != (gt.clip_len, gt.num_points) {
        return Err(Error::contract(format!(
            "prediction is {}×{}, ground truth is {}×{}",
            pred.clip_len, pred.num_points, gt.clip_len, gt.num_points
        )));
    }
    let (t_len, n) = (gt.clip_len, gt.num_points);
    let (ew, eh) = (f64::from(cfg.eval_width), f64::from(cfg.eval_height));
    let nd = cfg.thresholds.len();
    let mut total = vec![Counts::default(); nd];
    let mut frame = vec![Counts::default(); nd * t_len];
    let mut point = vec![Counts::default(); nd * n];
    for t in 0..t_len {
        for i in 0..n {
            let k = t * n + i;
            let (p, g) = (pred.positions[k], gt.positions[k]);
            let dx = p[0] * ew / pred.width - g[0] * ew / gt.width;
            let dy = p[1] * eh / pred.height - g[1] * eh / gt.height;
            let dist = dx.hypot(dy);
            for (di, &delta) in cfg.thresholds.iter().enumerate() {
                let within = dist < delta;
                total[di].add(gt.visible[k], pred.visible[k], within);
                frame[t * nd + di].add(gt.visible[k], pred.visible[k], within);
                point[i * nd + di].add(gt.visible[k], pred.visible[k], within);
            }
        }
    }
    // Only the "nothing counted" case differs between thresholds, and it
    // does not depend on the threshold, so one flag per scope suffices.
    let mean_over = |c: &[Counts]| -> (f64, bool) {
        match c[0].jaccard() {
            None => (1.0, true),
            Some(_) => (c.iter().map(|x| x.jaccard().unwrap_or(1.0)).sum::<f64>() / c.len() as f64, false),
        }
    };
    let per_threshold: Vec<(f64, f64)> = cfg
        .thresholds
        .iter()
        .zip(&total)
        .map(|(&d, c)| (d, c.jaccard().unwrap_or(1.0)))
        .collect();
    let overall = per_threshold.iter().map(|p| p.1).sum::<f64>() / nd as f64;
    let mut vacuous_frames = Vec::new();
    let per_frame = (0..t_len)
        .map(|t| {
            let (v, vac) = mean_over(&frame[t * nd..(t + 1) * nd]);
            if vac {
                vacuous_frames.push(t);
            }
            v
        })
        .collect();
    let mut vacuous_points = Vec::new();
    let per_point = (0..n)
        .map(|i| {
            let (v, vac) = mean_over(&point[i * nd..(i + 1) * nd]);
            if vac {
                vacuous_points.push(i);
            }
            v
        })
        .collect();
    if !vacuous_frames.is_empty() {
        log::warn!("{} frame(s) had no countable pairs and score 1", vacuous_frames.len());
    }
    Ok(AJReport {
        overall,
        per_threshold,
        per_frame,
        per_point,
        vacuous_frames,
        vacuous_points,
    })
}

/// Anything that can rebuild query tracks from a support set.
pub trait TrackReconstructor {
    /// Reconstructs the track through each query point for all frames of the
    /// clip. `ground_truth` holds the query tracks; real models use it only
    /// for its shape and resolution.
    fn reconstruct(&self, support: &TrackSet, ground_truth: &TrackSet, queries: &[QueryPoint], cutoff: f64) -> Result<PointTracks>;
}

impl TrackReconstructor for Trajan {
    fn reconstruct(&self, support: &TrackSet, ground_truth: &TrackSet, queries: &[QueryPoint], cutoff: f64) -> Result<PointTracks> {
        let latent = self.encode(support)?;
        let (w, h) = (ground_truth.width(), ground_truth.height());
        let tracks = model::decode_many(&self.params, &self.config, &latent, queries, ground_truth.clip_len(), w, h)?;
        PointTracks::from_reconstructions(&tracks, w, h, cutoff)
    }
}

/// Test double that echoes the ground truth, optionally shifted.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IdentityReconstructor {
    pub offset: [f64; 2],
}

impl TrackReconstructor for IdentityReconstructor {
    fn reconstruct(&self, _support: &TrackSet, ground_truth: &TrackSet, _queries: &[QueryPoint], _cutoff: f64) -> Result<PointTracks> {
        let mut pt = PointTracks::from_trackset(ground_truth);
        for p in &mut pt.positions {
            p[0] += self.offset[0];
            p[1] += self.offset[1];
        }
        Ok(pt)
    }
}

/// Reconstruction score of one clip: split into support and query tracks
/// with `seed`, rebuild the queries from the support set and score them.
pub fn per_video_score(
    model: &dyn TrackReconstructor,
    ts: &TrackSet,
    n_support: usize,
    n_query: usize,
    seed: u64,
    cfg: &AJConfig,
) -> Result<AJReport> {
    let batch = make_batch(ts, n_support, n_query, seed, false)?;
    let pred = model.reconstruct(&batch.support, &batch.queries, &batch.query_points, cfg.occl_logit_cutoff)?;
    average_jaccard(&pred, &PointTracks::from_trackset(&batch.queries), cfg)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Localization {
    /// Frame with the lowest per-frame AJ (earliest on ties).
    pub worst_frame: usize,
    /// Inclusive frame range of ±window around it, clipped to the clip.
    pub window: (usize, usize),
    /// Query indices from worst to best per-point AJ; ties keep index order.
    pub points_ascending: Vec<usize>,
}

pub fn localize(report: &AJReport, window: usize) -> Result<Localization> {
    if report.per_frame.is_empty() || report.per_point.is_empty() {
        return Err(Error::validation("report has no per-frame or per-point scores"));
    }
    let mut worst_frame = 0;
    for (t, &v) in report.per_frame.iter().enumerate() {
        if v < report.per_frame[worst_frame] {
            worst_frame = t;
        }
    }
    let last = report.per_frame.len() - 1;
    let mut points_ascending: Vec<usize> = (0..report.per_point.len()).collect();
    points_ascending.sort_by(|&a, &b| report.per_point[a].total_cmp(&report.per_point[b]));
    Ok(Localization {
        worst_frame,
        window: (worst_frame.saturating_sub(window), (worst_frame + window).min(last)),
        points_ascending,
    })
}

/// Writes a report as `scope,index,threshold,value` rows followed by a
/// `summary` row.
pub fn write_report_csv<W: Write>(report: &AJReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scope", "index", "threshold", "value"])?;
    for (i, (d, v)) in report.per_threshold.iter().enumerate() {
        w.write_record(["threshold", &i.to_string(), &d.to_string(), &v.to_string()])?;
    }
    for (t, v) in report.per_frame.iter().enumerate() {
        w.write_record(["frame", &t.to_string(), "", &v.to_string()])?;
    }
    for (i, v) in report.per_point.iter().enumerate() {
        w.write_record(["point", &i.to_string(), "", &v.to_string()])?;
    }
    for t in &report.vacuous_frames {
        w.write_record(["vacuous_frame", &t.to_string(), "", "1"])?;
    }
    for i in &report.vacuous_points {
        w.write_record(["vacuous_point", &i.to_string(), "", "1"])?;
    }
    w.write_record(["summary", "", "", &report.overall.to_string()])?;
    w.flush()?;
    Ok(())
}

/// Reads what [`write_report_csv`] wrote; `#` lines are skipped.
pub fn read_report_csv<R: Read>(input: R) -> Result<AJReport> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut report = AJReport {
        overall: f64::NAN,
        per_threshold: Vec::new(),
        per_frame: Vec::new(),
        per_point: Vec::new(),
        vacuous_frames: Vec::new(),
        vacuous_points: Vec::new(),
    };
    let bad = |m: &str| Error::Format(format!("AJ report: {m}"));
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}")));
    let idx = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad index {s:?}")));
    let mut saw_summary = false;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let expect_next = |i: usize, len: usize| if i == len { Ok(()) } else { Err(bad("rows out of order")) };
        match &rec[0] {
            "threshold" => {
                expect_next(idx(&rec[1])?, report.per_threshold.len())?;
                report.per_threshold.push((num(&rec[2])?, num(&rec[3])?));
            }
            "frame" => {
                expect_next(idx(&rec[1])?, report.per_frame.len())?;
                report.per_frame.push(num(&rec[3])?);
            }
            "point" => {
                expect_next(idx(&rec[1])?, report.per_point.len())?;
                report.per_point.push(num(&rec[3])?);
            }
            "vacuous_frame" => report.vacuous_frames.push(idx(&rec[1])?),
            "vacuous_point" => report.vacuous_points.push(idx(&rec[1])?),
            "summary" => {
                report.overall = num(&rec[3])?;
                saw_summary = true;
            }
            other => return Err(bad(&format!("unknown scope {other:?}"))),
        }
    }
    if !saw_summary {
        return Err(bad("missing summary row"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracks(t: usize, n: usize, pos: Vec<[f64; 2]>, vis: Vec<bool>) -> PointTracks {
        PointTracks {
            clip_len: t,
            num_points: n,
            width: 256.0,
            height: 256.0,
            positions: pos,
            visible: vis,
        }
    }

    #[test]
    fn hand_enumerated_two_points() {
        let gt = tracks(1, 2, vec![[10.0, 10.0], [50.0, 50.0]], vec![true, true]);
        let pred = tracks(1, 2, vec![[10.5, 10.0], [53.0, 50.0]], vec![true, true]);
        let r = average_jaccard(&pred, &gt, &AJConfig::default()).unwrap();
        let j: Vec<f64> = r.per_threshold.iter().map(|p| p.1).collect();
        assert_eq!(j, vec![1.0 / 3.0, 1.0 / 3.0, 1.0, 1.0, 1.0]);
        assert!((r.overall - (2.0 / 3.0 + 3.0) / 5.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_all_missed() {
        let gt = tracks(2, 2, vec![[1.0, 1.0]; 4], vec![true; 4]);
        assert_eq!(average_jaccard(&gt, &gt, &AJConfig::default()).unwrap().overall, 1.0);
        let hidden = tracks(2, 2, vec![[1.0, 1.0]; 4], vec![false; 4]);
        let r = average_jaccard(&hidden, &gt, &AJConfig::default()).unwrap();
        assert_eq!(r.overall, 0.0);
        assert!(r.per_frame.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn both_hidden_counts_nothing() {
        let gt = tracks(2, 1, vec![[1.0, 1.0]; 2], vec![true, false]);
        let pred = tracks(2, 1, vec![[1.0, 1.0]; 2], vec![true, false]);
        let r = average_jaccard(&pred, &gt, &AJConfig::default()).unwrap();
        assert_eq!(r.overall, 1.0);
        assert_eq!(r.vacuous_frames, vec![1]);
        assert_eq!(r.per_frame, vec![1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let a = tracks(1, 2, vec![[0.0; 2]; 2], vec![true; 2]);
        let b = tracks(2, 1, vec![[0.0; 2]; 2], vec![true; 2]);
        assert!(matches!(average_jaccard(&a, &b, &AJConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn thresholds_validated() {
        let cfg = AJConfig {
            thresholds: vec![2.0, 1.0],
            ..AJConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn localize_examples() {
        let mut r = AJReport {
            overall: 0.5,
            per_threshold: vec![],
            per_frame: vec![0.9, 0.2, 0.8],
            per_point: vec![0.5, 0.1, 0.5, 0.3],
            vacuous_frames: vec![],
            vacuous_points: vec![],
        };
        let l = localize(&r, 1).unwrap();
        assert_eq!((l.worst_frame, l.window), (1, (0, 2)));
        assert_eq!(l.points_ascending, vec![1, 3, 0, 2]);
        r.per_frame = vec![0.4; 5];
        assert_eq!(localize(&r, 1).unwrap().worst_frame, 0);
        r.per_frame.clear();
        assert!(localize(&r, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let r = AJReport {
            overall: 0.1 + 0.2,
            per_threshold: vec![(1.0, 1.0 / 3.0), (2.0, 0.7)],
            per_frame: vec![0.25, 1.0],
            per_point: vec![std::f64::consts::PI],
            vacuous_frames: vec![1],
            vacuous_points: vec![],
        };
        let mut buf = Vec::new();
        write_report_csv(&r, &mut buf).unwrap();
        assert_eq!(read_report_csv(&buf[..]).unwrap(), r);
    }
}
