//! Hand-crafted motion descriptors: tubelet histograms of track velocity
//! and acceleration, track length and radius, and flow-based warp error.

use crate::io::{dim_to_u32, put_f32s, put_u32, ByteReader};
use crate::trackdata::TrackSet;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistogramConfig {
    /// Tracks form a `grid × grid` lattice, row-major in track order.
    pub grid: usize,
    pub chunk_len: usize,
    /// `(frames, rows, cols)` of one tubelet.
    pub tubelet: (usize, usize, usize),
    pub bins: usize,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            grid: 64,
            chunk_len: 16,
            tubelet: (4, 5, 5),
            bins: 8,
        }
    }
}

impl HistogramConfig {
    fn cells(&self) -> (usize, usize, usize) {
        let (tt, tr, tc) = self.tubelet;
        (self.chunk_len / tt, self.grid / tr, self.grid / tc)
    }

    /// Length of the descriptor: two features times bins times tubelets.
    pub fn dim(&self) -> usize {
        let (a, b, c) = self.cells();
        2 * self.bins * a * b * c
    }

    pub fn validate(&self) -> Result<()> {
        let (tt, tr, tc) = self.tubelet;
        if self.bins == 0 || tt == 0 || tr == 0 || tc == 0 || self.chunk_len < 3 {
            return Err(Error::Config("histogram sizes must be positive and chunks at least 3 frames".into()));
        }
        if self.dim() == 0 {
            return Err(Error::Config("tubelets larger than the grid or chunk".into()));
        }
        Ok(())
    }
}

/// Angle bin of a vector; bin 0 is centred on angle 0.
pub fn angle_bin(v: [f64; 2], bins: usize) -> usize {
    let width = std::f64::consts::TAU / bins as f64;
    let theta = v[1].atan2(v[0]);
    ((theta + width / 2.0) / width).floor().rem_euclid(bins as f64) as usize % bins
}

/// Velocity and acceleration histograms of a dense track grid.
///
/// Velocities are the 15 frame differences padded to 16 by repeating the
/// last one; accelerations are the 14 differences of those, padded the same
/// way. Occlusion is ignored. Layout: feature, time chunk, row chunk, column
/// chunk, bin.
pub fn motion_histogram(ts: &TrackSet, cfg: &HistogramConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let g = cfg.grid;
    if ts.clip_len() != cfg.chunk_len || ts.num_tracks() != g * g {
        return Err(Error::contract(format!(
            "histogram needs {} frames of a {g}×{g} grid, got {} frames and {} tracks",
            cfg.chunk_len,
            ts.clip_len(),
            ts.num_tracks()
        )));
    }
    let t_len = cfg.chunk_len;
    let (tt, tr, tc) = cfg.tubelet;
    let (nt, nr, nc) = cfg.cells();
    let nb = cfg.bins;
    let mut out = vec![0.0; cfg.dim()];
    let mut vel = vec![[0.0; 2]; t_len];
    let mut acc = vec![[0.0; 2]; t_len];
    for r in 0..nr * tr {
        for c in 0..nc * tc {
            let j = r * g + c;
            for t in 0..t_len - 1 {
                let (a, b) = (ts.position(t, j), ts.position(t + 1, j));
                vel[t] = [f64::from(b[0]) - f64::from(a[0]), f64::from(b[1]) - f64::from(a[1])];
            }
            vel[t_len - 1] = vel[t_len - 2];
            for t in 0..t_len - 2 {
                acc[t] = [vel[t + 1][0] - vel[t][0], vel[t + 1][1] - vel[t][1]];
            }
            acc[t_len - 2] = acc[t_len - 3];
            acc[t_len - 1] = acc[t_len - 3];
            for (f, series) in [&vel, &acc].into_iter().enumerate() {
                for (t, v) in series.iter().enumerate().take(nt * tt) {
                    let mag = v[0].hypot(v[1]);
                    if mag == 0.0 {
                        continue;
                    }
                    let cell = (((f * nt + t / tt) * nr + r / tr) * nc + c / tc) * nb;
                    out[cell + angle_bin(*v, nb)] += mag;
                }
            }
        }
    }
    Ok(out)
}

/// Path length of every track over segments whose endpoints are both
/// visible.
pub fn track_length(ts: &TrackSet) -> Vec<f64> {
    (0..ts.num_tracks())
        .map(|j| {
            (0..ts.clip_len() - 1)
                .filter(|&t| !ts.is_occluded(t, j) && !ts.is_occluded(t + 1, j))
                .map(|t| {
                    let (a, b) = (ts.position(t, j), ts.position(t + 1, j));
                    (f64::from(b[0]) - f64::from(a[0])).hypot(f64::from(b[1]) - f64::from(a[1]))
                })
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    fn contains(&self, p: [f64; 2]) -> bool {
        let d = (p[0] - self.center[0]).hypot(p[1] - self.center[1]);
        d <= self.radius * (1.0 + 1e-12) + 1e-12
    }

    fn diameter(a: [f64; 2], b: [f64; 2]) -> Self {
        let center = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        Self {
            center,
            radius: (a[0] - center[0]).hypot(a[1] - center[1]),
        }
    }

    fn through(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Self {
        let (bx, by) = (b[0] - a[0], b[1] - a[1]);
        let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
        let d = 2.0 * (bx * cy - by * cx);
        if d.abs() < 1e-12 * (bx.abs() + by.abs() + cx.abs() + cy.abs()).powi(2).max(f64::MIN_POSITIVE) {
            // Collinear: the two extreme points span the circle.
            return [Self::diameter(a, b), Self::diameter(a, c), Self::diameter(b, c)]
                .into_iter()
                .max_by(|p, q| p.radius.total_cmp(&q.radius))
                .expect("three candidates");
        }
        let (b2, c2) = (bx * bx + by * by, cx * cx + cy * cy);
        let ux = (cy * b2 - by * c2) / d;
        let uy = (bx * c2 - cx * b2) / d;
        Self {
            center: [a[0] + ux, a[1] + uy],
            radius: ux.hypot(uy),
        }
    }
}

/// Smallest circle enclosing `points` (randomised incremental construction
/// with a fixed shuffle seed). `None` for an empty input.
pub fn min_enclosing_circle(points: &[[f64; 2]]) -> Option<Circle> {
    let mut p = points.to_vec();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed));
    let mut c = Circle {
        center: *p.first()?,
        radius: 0.0,
    };
    for i in 1..p.len() {
        if c.contains(p[i]) {
            continue;
        }
        c = Circle {
            center: p[i],
            radius: 0.0,
        };
        for j in 0..i {
            if c.contains(p[j]) {
                continue;
            }
            c = Circle::diameter(p[i], p[j]);
            for k in 0..j {
                if !c.contains(p[k]) {
                    c = Circle::through(p[i], p[j], p[k]);
                }
            }
        }
    }
    Some(c)
}

/// Radius of the smallest circle around each track's visible positions.
pub fn track_radius(ts: &TrackSet) -> Vec<f64> {
    (0..ts.num_tracks())
        .map(|j| {
            let pts: Vec<[f64; 2]> = (0..ts.clip_len())
                .filter(|&t| !ts.is_occluded(t, j))
                .map(|t| {
                    let p = ts.position(t, j);
                    [f64::from(p[0]), f64::from(p[1])]
                })
                .collect();
            min_enclosing_circle(&pts).map_or(0.0, |c| c.radius)
        })
        .collect()
}

pub const FLOW_MAGIC: &[u8; 4] = b"FLO1";
pub const FRAME_MAGIC: &[u8; 4] = b"IMG1";

/// Per-pixel displacement in pixels with an occlusion mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    displacement: Vec<[f32; 2]>,
    occluded: Vec<bool>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, displacement: Vec<[f32; 2]>, occluded: Vec<bool>) -> Result<Self> {
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Error::validation("flow dimensions overflow"))?;
        if displacement.len() != n || occluded.len() != n {
            return Err(Error::contract(format!("flow arrays do not match {height}×{width}")));
        }
        if displacement.iter().any(|d| !d[0].is_finite() || !d[1].is_finite()) {
            return Err(Error::validation("flow contains a non-finite displacement"));
        }
        Ok(Self {
            height,
            width,
            displacement,
            occluded,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn displacement(&self, row: usize, col: usize) -> [f32; 2] {
        self.displacement[row * self.width + col]
    }

    pub fn is_occluded(&self, row: usize, col: usize) -> bool {
        self.occluded[row * self.width + col]
    }
}

/// `FLO1` layout: magic, `u32` H, `u32` W, H·W·2 `f32`, H·W `u8` mask.
pub fn write_flow(f: &FlowField) -> Result<Vec<u8>> {
    let mut out = FLOW_MAGIC.to_vec();
    put_u32(&mut out, dim_to_u32(f.height, "height")?);
    put_u32(&mut out, dim_to_u32(f.width, "width")?);
    put_f32s(&mut out, f.displacement.iter().flatten().copied());
    out.extend(f.occluded.iter().map(|&o| u8::from(o)));
    Ok(out)
}

pub fn read_flow(bytes: &[u8]) -> Result<FlowField> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(FLOW_MAGIC)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let n = h.checked_mul(w).ok_or_else(|| Error::Format("flow dimensions overflow".into()))?;
    let raw = r.f32s(n.checked_mul(2).ok_or_else(|| Error::Format("flow dimensions overflow".into()))?)?;
    let mask = r.take(n)?;
    r.finish()?;
    let occluded = mask
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Format(format!("mask byte {v} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let displacement = raw.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    FlowField::new(h, w, displacement, occluded)
}

/// A raw image with values in `[0, 1]`, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::validation("frame dimensions overflow"))?;
        if data.len() != n {
            return Err(Error::contract(format!("frame payload has {} values, expected {n}", data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation("frame values must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// `IMG1` layout: magic, `u32` H, W, C, then H·W·C `f32`.
pub fn write_frame(f: &Frame) -> Result<Vec<u8>> {
    let mut out = FRAME_MAGIC.to_vec();
    put_u32(&mut out, dim_to_u32(f.height, "height")?);
    put_u32(&mut out, dim_to_u32(f.width, "width")?);
    put_u32(&mut out, dim_to_u32(f.channels, "channels")?);
    put_f32s(&mut out, f.data.iter().copied());
    Ok(out)
}

pub fn read_frame(bytes: &[u8]) -> Result<Frame> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(FRAME_MAGIC)?;
    let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Format("frame dimensions overflow".into()))?;
    let data = r.f32s(n)?;
    r.finish()?;
    Frame::new(h, w, c, data)
}

/// Mean absolute per-channel difference between `b` and `a` sampled
/// bilinearly at `x + flow`, over pixels that are neither occluded nor
/// warped outside the image.
pub fn warp_error(a: &Frame, b: &Frame, flow: &FlowField) -> Result<f64> {
    let (h, w, ch) = a.shape();
    if b.shape() != (h, w, ch) || (flow.height, flow.width) != (h, w) {
        return Err(Error::contract(format!(
            "frames {:?}, {:?} and flow {}×{} disagree",
            a.shape(),
            b.shape(),
            flow.height,
            flow.width
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for row in 0..h {
        for col in 0..w {
            if flow.is_occluded(row, col) {
                continue;
            }
            let d = flow.displacement(row, col);
            let x = col as f64 + f64::from(d[0]);
            let y = row as f64 + f64::from(d[1]);
            if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
                continue;
            }
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            for c in 0..ch {
                let s = |r: usize, cc: usize| f64::from(a.get(r, cc, c));
                let top = s(y0, x0) * (1.0 - fx) + s(y0, x1) * fx;
                let bottom = s(y1, x0) * (1.0 - fx) + s(y1, x1) * fx;
                let sampled = top * (1.0 - fy) + bottom * fy;
                sum += (f64::from(b.get(row, col, c)) - sampled).abs();
            }
            count += ch;
        }
    }
    if count == 0 {
        return Err(Error::Numerical("warp error undefined: every pixel is masked".into()));
    }
    Ok(sum / count as f64)
}

/// Mean displacement norm over non-occluded pixels.
pub fn flow_magnitude(flow: &FlowField) -> Result<f64> {
    let (sum, n) = flow
        .displacement
        .iter()
        .zip(&flow.occluded)
        .filter(|(_, &o)| !o)
        .fold((0.0, 0usize), |(s, n), (d, _)| (s + f64::from(d[0]).hypot(f64::from(d[1])), n + 1));
    if n == 0 {
        return Err(Error::Numerical("flow magnitude undefined: every pixel is masked".into()));
    }
    Ok(sum / n as f64)
}
