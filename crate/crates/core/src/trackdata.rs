//! Point-track data model and the `TRK1` binary format.
//!
//! Layout (little-endian): `"TRK1"`, then `T, J, width, height` as `u32`,
//! then `T·J·2` `f32` positions ordered frame-major, track, then (x, y),
//! then `T·J` occlusion bytes (1 = occluded).

use crate::io::{checked_len, dim_to_u32, put_f32s, put_u32, ByteReader};
use crate::{Error, Result};

pub const TRACK_MAGIC: &[u8; 4] = b"TRK1";
pub const TRACK_HEADER_LEN: usize = 20;

/// Fixed-size header at the start of every `TRK1` stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackFileHeader {
    pub clip_len: u32,
    pub num_tracks: u32,
    pub width: u32,
    pub height: u32,
}

impl TrackFileHeader {
    pub fn payload_len(&self) -> Result<usize> {
        let cells = checked_len(&[self.clip_len as usize, self.num_tracks as usize])?;
        let pos = checked_len(&[cells, 8])?;
        pos.checked_add(cells)
            .ok_or_else(|| Error::Format("declared dimensions overflow".into()))
    }
}

/// A validated set of point trajectories.
///
/// Positions are pixel coordinates in the stated resolution. The set always
/// has at least two frames, at least one track, finite positions and at least
/// one visible frame per track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    clip_len: usize,
    num_tracks: usize,
    width: u32,
    height: u32,
    positions: Vec<[f32; 2]>,
    occluded: Vec<bool>,
}

impl TrackSet {
    /// Builds a track set from frame-major arrays (`index = t * J + j`).
    pub fn new(
        clip_len: usize,
        num_tracks: usize,
        width: u32,
        height: u32,
        positions: Vec<[f32; 2]>,
        occluded: Vec<bool>,
    ) -> Result<Self> {
        let ts = Self {
            clip_len,
            num_tracks,
            width,
            height,
            positions,
            occluded,
        };
        ts.validate()?;
        Ok(ts)
    }

    /// Like [`TrackSet::new`], but silently removes tracks that are occluded
    /// in every frame. Returns the set and the number of dropped tracks.
    pub fn new_dropping_hidden(
        clip_len: usize,
        num_tracks: usize,
        width: u32,
        height: u32,
        positions: Vec<[f32; 2]>,
        occluded: Vec<bool>,
    ) -> Result<(Self, usize)> {
        check_array_lens(clip_len, num_tracks, positions.len(), occluded.len())?;
        let keep: Vec<usize> = (0..num_tracks)
            .filter(|&j| (0..clip_len).any(|t| !occluded[t * num_tracks + j]))
            .collect();
        let dropped = num_tracks - keep.len();
        if dropped == 0 {
            return Ok((
                Self::new(clip_len, num_tracks, width, height, positions, occluded)?,
                0,
            ));
        }
        let mut pos = Vec::with_capacity(clip_len * keep.len());
        let mut occ = Vec::with_capacity(clip_len * keep.len());
        for t in 0..clip_len {
            for &j in &keep {
                pos.push(positions[t * num_tracks + j]);
                occ.push(occluded[t * num_tracks + j]);
            }
        }
        Ok((Self::new(clip_len, keep.len(), width, height, pos, occ)?, dropped))
    }

    fn validate(&self) -> Result<()> {
        if self.clip_len < 2 {
            return Err(Error::validation(format!(
                "clip length must be at least 2, got {}",
                self.clip_len
            )));
        }
        if self.num_tracks == 0 {
            return Err(Error::validation("track set has no tracks"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation(format!(
                "resolution must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        check_array_lens(
            self.clip_len,
            self.num_tracks,
            self.positions.len(),
            self.occluded.len(),
        )?;
        if let Some(i) = self
            .positions
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::validation(format!(
                "non-finite position at frame {}, track {}",
                i / self.num_tracks,
                i % self.num_tracks
            )));
        }
        for j in 0..self.num_tracks {
            if (0..self.clip_len).all(|t| self.is_occluded(t, j)) {
                return Err(Error::validation(format!(
                    "track {j} has no visible frame"
                )));
            }
        }
        Ok(())
    }

    pub fn clip_len(&self) -> usize {
        self.clip_len
    }

    pub fn num_tracks(&self) -> usize {
        self.num_tracks
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn positions(&self) -> &[[f32; 2]] {
        &self.positions
    }

    pub fn occluded(&self) -> &[bool] {
        &self.occluded
    }

    #[inline]
    pub fn position(&self, t: usize, j: usize) -> [f32; 2] {
        self.positions[t * self.num_tracks + j]
    }

    #[inline]
    pub fn is_occluded(&self, t: usize, j: usize) -> bool {
        self.occluded[t * self.num_tracks + j]
    }

    pub fn num_visible(&self, j: usize) -> usize {
        (0..self.clip_len).filter(|&t| !self.is_occluded(t, j)).count()
    }

    /// Positions of track `j` over all frames.
    pub fn track(&self, j: usize) -> impl Iterator<Item = [f32; 2]> + '_ {
        (0..self.clip_len).map(move |t| self.position(t, j))
    }

    /// New set containing the listed tracks, in the listed order.
    pub fn select(&self, tracks: &[usize]) -> Result<Self> {
        if let Some(&bad) = tracks.iter().find(|&&j| j >= self.num_tracks) {
            return Err(Error::Bounds {
                index: bad,
                limit: self.num_tracks,
            });
        }
        let mut pos = Vec::with_capacity(self.clip_len * tracks.len());
        let mut occ = Vec::with_capacity(self.clip_len * tracks.len());
        for t in 0..self.clip_len {
            for &j in tracks {
                pos.push(self.position(t, j));
                occ.push(self.is_occluded(t, j));
            }
        }
        Self::new(self.clip_len, tracks.len(), self.width, self.height, pos, occ)
    }

    /// Returns a copy with positions replaced by `f(t, j, old)`. Occlusion
    /// flags and shape are untouched; the result is re-validated.
    pub fn map_positions(&self, mut f: impl FnMut(usize, usize, [f32; 2]) -> [f32; 2]) -> Result<Self> {
        let mut out = self.clone();
        for t in 0..self.clip_len {
            for j in 0..self.num_tracks {
                let i = t * self.num_tracks + j;
                out.positions[i] = f(t, j, self.positions[i]);
            }
        }
        out.validate()?;
        Ok(out)
    }
}

fn check_array_lens(clip_len: usize, num_tracks: usize, npos: usize, nocc: usize) -> Result<()> {
    let cells = clip_len
        .checked_mul(num_tracks)
        .ok_or_else(|| Error::validation("dimensions overflow"))?;
    if npos != cells || nocc != cells {
        return Err(Error::contract(format!(
            "expected {cells} positions and occlusion flags for T={clip_len}, J={num_tracks}; got {npos} and {nocc}"
        )));
    }
    Ok(())
}

/// A query location on one frame of a clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryPoint {
    pub x: f64,
    pub y: f64,
    pub t: usize,
}

impl QueryPoint {
    pub fn validate(&self, clip_len: usize, width: u32, height: u32) -> Result<()> {
        if self.t >= clip_len {
            return Err(Error::Bounds {
                index: self.t,
                limit: clip_len,
            });
        }
        let inside = |v: f64, lim: u32| v.is_finite() && v >= 0.0 && v < f64::from(lim);
        if !inside(self.x, width) || !inside(self.y, height) {
            return Err(Error::validation(format!(
                "query point ({}, {}) outside {width}x{height}",
                self.x, self.y
            )));
        }
        Ok(())
    }
}

pub fn read_header(bytes: &[u8]) -> Result<TrackFileHeader> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(TRACK_MAGIC)?;
    Ok(TrackFileHeader {
        clip_len: r.u32()?,
        num_tracks: r.u32()?,
        width: r.u32()?,
        height: r.u32()?,
    })
}

/// Parses a `TRK1` stream, dropping fully occluded tracks.
pub fn read_trackset(bytes: &[u8]) -> Result<TrackSet> {
    let (ts, dropped) = read_trackset_counted(bytes)?;
    if dropped > 0 {
        log::warn!("dropped {dropped} fully occluded track(s) on ingestion");
    }
    Ok(ts)
}

/// [`read_trackset`] that also reports how many tracks were dropped.
pub fn read_trackset_counted(bytes: &[u8]) -> Result<(TrackSet, usize)> {
    let header = read_header(bytes)?;
    let mut r = ByteReader::new(bytes);
    r.take(TRACK_HEADER_LEN)?;
    let expected = TRACK_HEADER_LEN + header.payload_len()?;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let t = header.clip_len as usize;
    let j = header.num_tracks as usize;
    let raw = r.f32s(t * j * 2)?;
    let positions: Vec<[f32; 2]> = raw.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let occ_bytes = r.take(t * j)?;
    let occluded = occ_bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("occlusion byte {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    TrackSet::new_dropping_hidden(t, j, header.width, header.height, positions, occluded)
}

/// Serializes a track set to `TRK1` bytes.
pub fn write_trackset(ts: &TrackSet) -> Result<Vec<u8>> {
    ts.validate()?;
    let mut out = Vec::with_capacity(TRACK_HEADER_LEN + ts.positions.len() * 9);
    out.extend_from_slice(TRACK_MAGIC);
    put_u32(&mut out, dim_to_u32(ts.clip_len, "clip length")?);
    put_u32(&mut out, dim_to_u32(ts.num_tracks, "track count")?);
    put_u32(&mut out, ts.width);
    put_u32(&mut out, ts.height);
    put_f32s(&mut out, ts.positions.iter().flat_map(|p| [p[0], p[1]]));
    out.extend(ts.occluded.iter().map(|&o| u8::from(o)));
    Ok(out)
}

/// Rescales positions as if the clip had been tracked at `target_w × target_h`.
pub fn normalize_to_resolution(ts: &TrackSet, target_w: u32, target_h: u32) -> Result<TrackSet> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::validation(format!(
            "target resolution must be positive, got {target_w}x{target_h}"
        )));
    }
    if ts.width == 0 || ts.height == 0 {
        return Err(Error::validation("source resolution is zero"));
    }
    if target_w == ts.width && target_h == ts.height {
        return Ok(ts.clone());
    }
    let sx = f64::from(target_w) / f64::from(ts.width);
    let sy = f64::from(target_h) / f64::from(ts.height);
    let mut out = ts.map_positions(|_, _, p| {
        [(f64::from(p[0]) * sx) as f32, (f64::from(p[1]) * sy) as f32]
    })?;
    out.width = target_w;
    out.height = target_h;
    Ok(out)
}
