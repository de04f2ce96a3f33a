//! Synthetic clips, track-space corruption, the temporal sensitivity
//! protocol and the statistics used to compare metrics with human ratings.

use crate::trackdata::TrackSet;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Pan,
    Rotate,
    Zoom,
    Jitter,
    /// Pan, rotation, zoom and jitter applied together.
    Mixed,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pan" => Self::Pan,
            "rotate" => Self::Rotate,
            "zoom" => Self::Zoom,
            "jitter" => Self::Jitter,
            "mixed" => Self::Mixed,
            other => return Err(Error::Config(format!("unknown synthetic kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub width: u32,
    pub height: u32,
    /// Pan velocity in px/frame.
    pub velocity: [f64; 2],
    /// Rotation about the image centre in rad/frame.
    pub omega: f64,
    /// Per-frame scale factor about the image centre.
    pub zoom: f64,
    /// Standard deviation of per-frame jitter in px.
    pub jitter_std: f64,
    /// Start points are drawn at least this far from the border.
    pub margin: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            velocity: [1.0, 0.0],
            omega: 0.02,
            zoom: 1.01,
            jitter_std: 1.0,
            margin: 0.0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let finite = self.velocity.iter().chain([&self.omega, &self.zoom, &self.jitter_std, &self.margin]).all(|v| v.is_finite());
        if !finite || self.width == 0 || self.height == 0 {
            return Err(Error::Config("synthetic parameters must be finite with positive resolution".into()));
        }
        if self.zoom <= 0.0 || self.jitter_std < 0.0 || self.margin < 0.0 {
            return Err(Error::Config("zoom must be positive, jitter and margin non-negative".into()));
        }
        if 2.0 * self.margin >= f64::from(self.width.min(self.height)) {
            return Err(Error::Config("margin leaves no room for start points".into()));
        }
        Ok(())
    }
}

/// Generates a clip of `j` tracks over `t` frames. Points outside the image
/// are marked occluded.
pub fn synth_tracks(kind: SynthKind, t: usize, j: usize, p: &SynthParams, seed: u64) -> Result<TrackSet> {
    p.validate()?;
    if t < 2 || j == 0 {
        return Err(Error::Config(format!("need at least 2 frames and 1 track, got {t}×{j}")));
    }
    let (w, h) = (f64::from(p.width), f64::from(p.height));
    let (cx, cy) = (w / 2.0, h / 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, p.jitter_std).map_err(|e| Error::Config(e.to_string()))?;
    let inside = |q: [f64; 2]| q[0] >= 0.0 && q[0] < w && q[1] >= 0.0 && q[1] < h;
    let mut pos = vec![[0f32; 2]; t * j];
    let mut occ = vec![false; t * j];
    for jj in 0..j {
        loop {
            let x0 = rng.random_range(p.margin..w - p.margin);
            let y0 = rng.random_range(p.margin..h - p.margin);
            let track: Vec<[f64; 2]> = (0..t)
                .map(|ti| {
                    let tf = ti as f64;
                    let (mut x, mut y) = (x0, y0);
                    if matches!(kind, SynthKind::Rotate | SynthKind::Mixed) {
                        let (s, c) = (p.omega * tf).sin_cos();
                        let (dx, dy) = (x - cx, y - cy);
                        x = cx + c * dx - s * dy;
                        y = cy + s * dx + c * dy;
                    }
                    if matches!(kind, SynthKind::Zoom | SynthKind::Mixed) {
                        let z = p.zoom.powf(tf);
                        x = cx + (x - cx) * z;
                        y = cy + (y - cy) * z;
                    }
                    if matches!(kind, SynthKind::Pan | SynthKind::Mixed) {
                        x += p.velocity[0] * tf;
                        y += p.velocity[1] * tf;
                    }
                    if matches!(kind, SynthKind::Jitter | SynthKind::Mixed) {
                        x += noise.sample(&mut rng);
                        y += noise.sample(&mut rng);
                    }
                    [x, y]
                })
                .collect();
            // Redraw tracks that never enter the image.
            if track.iter().any(|&q| inside(q)) {
                for (ti, q) in track.into_iter().enumerate() {
                    pos[ti * j + jj] = [q[0] as f32, q[1] as f32];
                    occ[ti * j + jj] = !inside(q);
                }
                break;
            }
        }
    }
    TrackSet::new(t, j, p.width, p.height, pos, occ)
}

/// A set of `n` clips cycling through pan, rotation and zoom with random
/// motion parameters.
pub fn synth_dataset(n: usize, t: usize, j: usize, width: u32, height: u32, seed: u64) -> Result<Vec<TrackSet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let kind = [SynthKind::Pan, SynthKind::Rotate, SynthKind::Zoom][i % 3];
            let p = SynthParams {
                width,
                height,
                velocity: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
                omega: rng.random_range(-0.05..0.05),
                zoom: rng.random_range(0.97..1.03),
                jitter_std: 0.0,
                margin: 0.0,
            };
            synth_tracks(kind, t, j, &p, rng.random())
        })
        .collect()
}

/// One of the five corruption strengths: 1.x are low-frequency, 2.x
/// high-frequency deformations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    L1_1,
    L1_2,
    L2_1,
    L2_2,
    L2_3,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::L1_1, Level::L1_2, Level::L2_1, Level::L2_2, Level::L2_3];

    /// `(amplitude px, spatial frequency cycles/px)` of every component.
    pub fn parameters(self) -> (f64, f64) {
        match self {
            Level::L1_1 => (4.0, 1.0 / 64.0),
            Level::L1_2 => (8.0, 1.0 / 64.0),
            Level::L2_1 => (2.0, 1.0 / 8.0),
            Level::L2_2 => (4.0, 1.0 / 8.0),
            Level::L2_3 => (8.0, 1.0 / 8.0),
        }
    }

    pub fn is_high_frequency(self) -> bool {
        matches!(self, Level::L2_1 | Level::L2_2 | Level::L2_3)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Level::L1_1 => "1.1",
            Level::L1_2 => "1.2",
            Level::L2_1 => "2.1",
            Level::L2_2 => "2.2",
            Level::L2_3 => "2.3",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Level::ALL
            .into_iter()
            .find(|l| l.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown corruption level {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveComponent {
    pub amplitude: f64,
    /// Cycles per pixel along `direction`.
    pub frequency: f64,
    pub phase: f64,
    /// Angle of the wave vector; points are displaced along it.
    pub direction: f64,
}

/// A smooth displacement field made of sinusoidal waves.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub components: Vec<WaveComponent>,
    pub level: Option<Level>,
}

pub const FIELD_COMPONENTS: usize = 3;

impl DeformationField {
    /// Draws random phases and directions for a level.
    pub fn sample(level: Level, rng: &mut impl Rng) -> Self {
        let (amplitude, frequency) = level.parameters();
        let components = (0..FIELD_COMPONENTS)
            .map(|_| WaveComponent {
                amplitude,
                frequency,
                phase: rng.random_range(0.0..TAU),
                direction: rng.random_range(0.0..TAU),
            })
            .collect();
        Self {
            components,
            level: Some(level),
        }
    }

    pub fn zero() -> Self {
        Self {
            components: Vec::new(),
            level: None,
        }
    }

    pub fn displacement(&self, x: f64, y: f64) -> [f64; 2] {
        let mut d = [0.0; 2];
        for c in &self.components {
            let (s, co) = c.direction.sin_cos();
            let a = c.amplitude * (TAU * c.frequency * (x * co + y * s) + c.phase).sin();
            d[0] += a * co;
            d[1] += a * s;
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CorruptionMode {
    /// One field for the whole clip.
    Spatial,
    /// A fresh field every frame.
    Spatiotemporal,
}

impl CorruptionMode {
    pub fn name(self) -> &'static str {
        match self {
            CorruptionMode::Spatial => "spatial",
            CorruptionMode::Spatiotemporal => "spatiotemporal",
        }
    }
}

impl FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Self::Spatial),
            "spatiotemporal" => Ok(Self::Spatiotemporal),
            other => Err(Error::Config(format!("unknown corruption mode {other:?}"))),
        }
    }
}

/// The fields applied to each frame. Both modes draw from the same stream,
/// so the spatial field is the spatiotemporal field of frame 0.
pub fn frame_fields(level: Level, mode: CorruptionMode, clip_len: usize, seed: u64) -> Vec<DeformationField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        CorruptionMode::Spatial => vec![DeformationField::sample(level, &mut rng); clip_len],
        CorruptionMode::Spatiotemporal => (0..clip_len).map(|_| DeformationField::sample(level, &mut rng)).collect(),
    }
}

/// Moves every visible point by the field of its frame, evaluated at the
/// point. Occlusion flags are untouched.
pub fn corrupt_with_fields(ts: &TrackSet, fields: &[DeformationField]) -> Result<TrackSet> {
    if fields.len() != ts.clip_len() {
        return Err(Error::contract(format!("{} fields for {} frames", fields.len(), ts.clip_len())));
    }
    ts.map_positions(|t, j, p| {
        if ts.is_occluded(t, j) {
            return p;
        }
        let d = fields[t].displacement(f64::from(p[0]), f64::from(p[1]));
        [(f64::from(p[0]) + d[0]) as f32, (f64::from(p[1]) + d[1]) as f32]
    })
}

pub fn corrupt_tracks(ts: &TrackSet, level: Level, mode: CorruptionMode, seed: u64) -> Result<TrackSet> {
    corrupt_with_fields(ts, &frame_fields(level, mode, ts.clip_len(), seed))
}

/// A ratio whose denominator may vanish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Finite(f64),
    /// Non-zero over zero.
    Infinite,
    /// Zero over zero.
    Undefined,
}

impl Ratio {
    pub fn of(num: f64, den: f64) -> Self {
        if den != 0.0 {
            Ratio::Finite(num / den)
        } else if num != 0.0 {
            Ratio::Infinite
        } else {
            Ratio::Undefined
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Finite(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Finite(v) => write!(f, "{v}"),
            Ratio::Infinite => f.write_str("inf"),
            Ratio::Undefined => f.write_str("undefined"),
        }
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" => Ok(Ratio::Infinite),
            "undefined" => Ok(Ratio::Undefined),
            v => v
                .parse()
                .map(Ratio::Finite)
                .map_err(|_| Error::Format(format!("bad ratio {v:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub level: Level,
    pub spatial: f64,
    pub spatiotemporal: f64,
    /// Spatiotemporal over spatial.
    pub ratio: Ratio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub levels: Vec<LevelResult>,
}

impl SensitivityReport {
    /// Mean of the finite ratios; infinite if any ratio is infinite.
    pub fn mean_ratio(&self) -> Ratio {
        mean_ratio(self.levels.iter())
    }

    pub fn mean_ratio_where(&self, pred: impl Fn(Level) -> bool) -> Ratio {
        mean_ratio(self.levels.iter().filter(|r| pred(r.level)))
    }

    /// `level,mode,value,ratio` with two rows per level.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "mode", "value", "ratio"])?;
        for r in &self.levels {
            let ratio = r.ratio.to_string();
            w.write_record([r.level.tag(), "spatial", &r.spatial.to_string(), &ratio])?;
            w.write_record([r.level.tag(), "spatiotemporal", &r.spatiotemporal.to_string(), &ratio])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let recs = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
        if recs.len() % 2 != 0 {
            return Err(Error::Format("sensitivity report needs two rows per level".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad value {s:?}")));
        let levels = recs
            .chunks(2)
            .map(|pair| {
                let (a, b) = (&pair[0], &pair[1]);
                if a.len() != 4 || b.len() != 4 || &a[0] != &b[0] || &a[1] != "spatial" || &b[1] != "spatiotemporal" || &a[3] != &b[3] {
                    return Err(Error::Format("malformed sensitivity row pair".into()));
                }
                Ok(LevelResult {
                    level: a[0].parse()?,
                    spatial: num(&a[2])?,
                    spatiotemporal: num(&b[2])?,
                    ratio: a[3].parse()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }
}

fn mean_ratio<'a>(rows: impl Iterator<Item = &'a LevelResult>) -> Ratio {
    let mut sum = 0.0;
    let mut n = 0;
    for r in rows {
        match r.ratio {
            Ratio::Finite(v) => {
                sum += v;
                n += 1;
            }
            Ratio::Infinite => return Ratio::Infinite,
            Ratio::Undefined => {}
        }
    }
    if n == 0 {
        Ratio::Undefined
    } else {
        Ratio::Finite(sum / n as f64)
    }
}

/// A metric over a clean and a corrupted set of clips.
pub type SetMetric<'a> = dyn Fn(&[TrackSet], &[TrackSet]) -> Result<f64> + Sync + 'a;

/// Seed used for clip `i` at `level`; both modes share it.
pub fn corruption_seed(seed: u64, level: Level, clip: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(level as u64 * 1_000_003 + clip as u64);
    rng.random()
}

/// Corrupts every clean clip at each level in both modes and evaluates the
/// metric on both sets.
pub fn sensitivity_protocol(metric: &SetMetric<'_>, clean: &[TrackSet], levels: &[Level], seed: u64) -> Result<SensitivityReport> {
    if clean.is_empty() {
        return Err(Error::EmptyInput("no clean clips".into()));
    }
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut values = [0.0; 2];
        for (slot, mode) in [CorruptionMode::Spatial, CorruptionMode::Spatiotemporal].into_iter().enumerate() {
            let corrupted = clean
                .iter()
                .enumerate()
                .map(|(i, ts)| corrupt_tracks(ts, level, mode, corruption_seed(seed, level, i)))
                .collect::<Result<Vec<_>>>()?;
            values[slot] = metric(clean, &corrupted).map_err(|e| e.with_context(format!("level {level}, {} mode", mode.name())))?;
        }
        out.push(LevelResult {
            level,
            spatial: values[0],
            spatiotemporal: values[1],
            ratio: Ratio::of(values[1], values[0]),
        });
    }
    Ok(SensitivityReport { levels: out })
}

/// Ranks starting at 1, ties sharing the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut k = i;
        while k + 1 < idx.len() && v[idx[k + 1]] == v[idx[i]] {
            k += 1;
        }
        let r = (i + k) as f64 / 2.0 + 1.0;
        for &ix in &idx[i..=k] {
            ranks[ix] = r;
        }
        i = k + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numerical("correlation undefined for constant input".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!("lengths {} and {} differ", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: a.len() });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite value in correlation input"));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Area under the ROC curve with ties counted as half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract("scores and labels differ in length"));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite score"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::validation("both classes must be present"));
    }
    let ranks = average_ranks(scores);
    let r_pos: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = r_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rating {
    pub video_id: String,
    pub rater_id: String,
    pub question: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RatingTable {
    pub rows: Vec<Rating>,
}

impl RatingTable {
    /// Reads `video_id,rater_id,question,score`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["video_id", "rater_id", "question", "score"] {
            return Err(Error::Format("rating table header must be video_id,rater_id,question,score".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let score: f64 = rec[3]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad score {:?}", &rec[3])))?;
            if !score.is_finite() {
                return Err(Error::validation("rating scores must be finite"));
            }
            rows.push(Rating {
                video_id: rec[0].to_string(),
                rater_id: rec[1].to_string(),
                question: rec[2].to_string(),
                score,
            });
        }
        Ok(Self { rows })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["video_id", "rater_id", "question", "score"])?;
        for r in &self.rows {
            w.write_record([&r.video_id, &r.rater_id, &r.question, &r.score.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

/// Standardises each rater's scores over all their rows (population std).
/// Raters with constant scores are dropped; their ids are returned.
pub fn zscore_raters(rt: &RatingTable) -> (RatingTable, Vec<String>) {
    let mut by_rater: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &rt.rows {
        by_rater.entry(&r.rater_id).or_default().push(r.score);
    }
    let stats: BTreeMap<&str, (f64, f64)> = by_rater.iter().map(|(k, v)| (*k, mean_std(v))).collect();
    let dropped: Vec<String> = stats.iter().filter(|(_, s)| s.1 == 0.0).map(|(k, _)| k.to_string()).collect();
    for d in &dropped {
        log::warn!("rater {d:?} gives constant scores; their rows are dropped");
    }
    let rows = rt
        .rows
        .iter()
        .filter_map(|r| {
            let (m, s) = stats[r.rater_id.as_str()];
            (s > 0.0).then(|| Rating {
                score: (r.score - m) / s,
                ..r.clone()
            })
        })
        .collect();
    (RatingTable { rows }, dropped)
}

/// Per question: population std of scores across raters for each video,
/// averaged over videos with at least two ratings.
pub fn inter_rater_sigma(rt: &RatingTable) -> BTreeMap<String, f64> {
    let mut groups: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for r in &rt.rows {
        groups.entry((&r.question, &r.video_id)).or_default().push(r.score);
    }
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut questions: Vec<&str> = Vec::new();
    for ((q, _), scores) in &groups {
        if questions.last() != Some(q) {
            questions.push(q);
        }
        if scores.len() >= 2 {
            let e = acc.entry(q.to_string()).or_default();
            e.0 += mean_std(scores).1;
            e.1 += 1;
        }
    }
    for q in questions {
        if !acc.contains_key(q) {
            log::warn!("question {q:?} has no video with two or more raters; omitted");
        }
    }
    acc.into_iter().map(|(q, (s, n))| (q, s / n as f64)).collect()
}

/// Mean score per video for one question, in video-id order.
pub fn mean_score_per_video(rt: &RatingTable, question: &str) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in rt.rows.iter().filter(|r| r.question == question) {
        let e = acc.entry(r.video_id.clone()).or_default();
        e.0 += r.score;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Wraps a per-clip score into a set metric that averages it over the
/// corrupted clips.
pub fn per_video_mean<'a>(f: impl Fn(&TrackSet) -> Result<f64> + Sync + 'a) -> Box<SetMetric<'a>> {
    Box::new(move |_clean: &[TrackSet], corrupted: &[TrackSet]| {
        let mut sum = 0.0;
        for (i, ts) in corrupted.iter().enumerate() {
            sum += f(ts).map_err(|e| e.with_context(format!("clip {i}")))?;
        }
        Ok(sum / corrupted.len() as f64)
    })
}
