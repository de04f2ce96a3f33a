use crate::config::RunConfig;
use motionbench::bench::{
    corrupt_tracks, inter_rater_sigma, mean_score_per_video, roc_auc, sensitivity_protocol, spearman_rho,
    synth_dataset, synth_tracks, zscore_raters, CorruptionMode, Level, RatingTable, SynthKind, SynthParams,
};
use motionbench::dist::{fit_gaussian, mmd2_unbiased, pair_distance, pool_latent, read_embeddings, write_embeddings, EmbeddingSet, MMD_CLAMP};
use motionbench::model::{read_checkpoint, write_checkpoint, Checkpoint, ModelParams, Trajan};
use motionbench::motion::{flow_magnitude, motion_histogram, read_flow, read_frame, track_length, track_radius, warp_error, HistogramConfig};
use motionbench::recon::{localize, per_video_score, read_report_csv, write_report_csv, IdentityReconstructor, TrackReconstructor};
use motionbench::trackdata::{read_trackset, write_trackset, TrackSet};
use motionbench::train::train_from;
use motionbench::{dist, Error, Result};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Context shared by all subcommands.
pub struct Ctx {
    pub cfg: RunConfig,
    /// `key=value` pairs of the command line, recorded in report headers.
    pub args: Vec<(String, String)>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::from(e).with_context(path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::from(e).with_context(path.display()))
}

pub fn load_tracks(path: &Path) -> Result<TrackSet> {
    read_trackset(&read_file(path)?).map_err(|e| e.with_context(path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&read_file(path)?).map_err(|e| e.with_context(path.display()))
}

fn require_trajan(path: &Path) -> Result<Trajan> {
    match load_checkpoint(path)? {
        Checkpoint::Trajan(m) => Ok(m),
        Checkpoint::Identity => Err(Error::validation(format!(
            "{} is an identity checkpoint and has no encoder",
            path.display()
        ))),
    }
}

fn reconstructor(ckpt: Checkpoint) -> Box<dyn TrackReconstructor + Sync> {
    match ckpt {
        Checkpoint::Trajan(m) => Box::new(m),
        Checkpoint::Identity => Box::new(IdentityReconstructor::default()),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

impl Ctx {
    /// Writes a CSV report whose first line records the tool version, the
    /// command line and the resolved configuration.
    fn report(&self, name: &Path, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let path = self.cfg.output_path(name)?;
        let mut buf = Vec::new();
        let fields: Vec<String> = self
            .args
            .iter()
            .cloned()
            .chain(self.cfg.pairs())
            .map(|(k, v)| format!("{k}={}", v.replace(['\n', '\r'], " ")))
            .collect();
        writeln!(buf, "# motionbench {VERSION} {}", fields.join(" "))?;
        body(&mut buf)?;
        write_file(&path, &buf)?;
        Ok(path)
    }

    fn binary(&self, name: &Path, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.cfg.output_path(name)?;
        write_file(&path, bytes)?;
        Ok(path)
    }
}

fn load_all(inputs: &[PathBuf]) -> Result<Vec<TrackSet>> {
    inputs.par_iter().map(|p| load_tracks(p)).collect()
}

pub fn train(ctx: &Ctx, inputs: &[PathBuf], out: &Path, loss_out: Option<&Path>) -> Result<()> {
    let data = load_all(inputs)?;
    let cfg = &ctx.cfg;
    let init = ModelParams::init(&cfg.model, cfg.train.seed)?;
    let every = cfg.train.checkpoint_every;
    let ckpt_path = cfg.output_path(out)?;
    let outcome = train_from(&data, &cfg.model, &cfg.train, init, &mut |step, params, loss| {
        if step % 100 == 0 {
            log::info!("step {step}: loss {loss:.6}");
        }
        if every > 0 && step % every == 0 {
            let m = Checkpoint::Trajan(Trajan {
                config: cfg.model,
                params: params.clone(),
            });
            write_file(&ckpt_path, &write_checkpoint(&m)?)?;
        }
        Ok(())
    })?;
    let model = Checkpoint::Trajan(Trajan {
        config: cfg.model,
        params: outcome.params,
    });
    ctx.binary(out, &write_checkpoint(&model)?)?;
    if let Some(name) = loss_out {
        ctx.report(name, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["step", "loss"])?;
            for (i, l) in outcome.losses.iter().enumerate() {
                w.write_record([(i + 1).to_string(), l.to_string()])?;
            }
            w.flush()?;
            Ok(())
        })?;
    }
    println!("trained {} steps; final loss {}", outcome.losses.len(), outcome.losses.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

pub fn embed(ctx: &Ctx, checkpoint: &Path, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let model = require_trajan(checkpoint)?;
    let rows = inputs
        .par_iter()
        .map(|p| {
            let ts = load_tracks(p)?;
            let lat = model.encode(&ts).map_err(|e| e.with_context(p.display()))?;
            Ok(pool_latent(&lat, ctx.cfg.pool))
        })
        .collect::<Result<Vec<_>>>()?;
    let es = EmbeddingSet::from_rows(rows, inputs.iter().map(|p| stem(p)).collect())?;
    ctx.binary(out, &write_embeddings(&es)?)?;
    Ok(())
}

pub fn aj(ctx: &Ctx, checkpoint: &Path, seed: u64, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let model = reconstructor(load_checkpoint(checkpoint)?);
    let cfg = &ctx.cfg;
    let reports = inputs
        .par_iter()
        .map(|p| {
            let ts = load_tracks(p)?;
            per_video_score(model.as_ref(), &ts, cfg.n_support, cfg.n_query, seed, &cfg.aj).map_err(|e| e.with_context(p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    if let [single] = reports.as_slice() {
        ctx.report(out, |buf| write_report_csv(single, buf))?;
        println!("AJ {}", single.overall);
        return Ok(());
    }
    let mean = reports.iter().map(|r| r.overall).sum::<f64>() / reports.len() as f64;
    ctx.report(out, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["scope", "index", "threshold", "value"])?;
        for (i, r) in reports.iter().enumerate() {
            w.write_record(["video", &i.to_string(), "", &r.overall.to_string()])?;
        }
        w.write_record(["summary", "", "", &mean.to_string()])?;
        w.flush()?;
        Ok(())
    })?;
    println!("mean AJ {mean}");
    Ok(())
}

pub fn localize_cmd(ctx: &Ctx, report: &Path, window: usize, out: &Path) -> Result<()> {
    let r = read_report_csv(&read_file(report)?[..]).map_err(|e| e.with_context(report.display()))?;
    let loc = localize(&r, window)?;
    ctx.report(out, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["kind", "rank", "index", "value"])?;
        w.write_record(["worst_frame", "0", &loc.worst_frame.to_string(), &r.per_frame[loc.worst_frame].to_string()])?;
        w.write_record(["window", "0", &loc.window.0.to_string(), ""])?;
        w.write_record(["window", "1", &loc.window.1.to_string(), ""])?;
        for (rank, &i) in loc.points_ascending.iter().enumerate() {
            w.write_record(["point", &rank.to_string(), &i.to_string(), &r.per_point[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    println!("worst frame {} (window {}..={})", loc.worst_frame, loc.window.0, loc.window.1);
    Ok(())
}

fn scalar_report(ctx: &Ctx, out: &Path, metric: &str, value: f64) -> Result<()> {
    ctx.report(out, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["metric", "value"])?;
        w.write_record([metric, &value.to_string()])?;
        w.flush()?;
        Ok(())
    })?;
    println!("{metric} {value}");
    Ok(())
}

fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    read_embeddings(&read_file(path)?).map_err(|e| e.with_context(path.display()))
}

pub fn frechet(ctx: &Ctx, a: &Path, b: &Path, out: &Path) -> Result<()> {
    let ga = fit_gaussian(&load_embeddings(a)?)?;
    let gb = fit_gaussian(&load_embeddings(b)?)?;
    scalar_report(ctx, out, "frechet", dist::frechet_distance(&ga, &gb)?)
}

pub fn mmd(ctx: &Ctx, a: &Path, b: &Path, out: &Path) -> Result<()> {
    let v = mmd2_unbiased(&load_embeddings(a)?, &load_embeddings(b)?, MMD_CLAMP)?;
    scalar_report(ctx, out, "mmd2", v)
}

pub fn pairdist(ctx: &Ctx, checkpoint: &Path, a: &Path, b: &Path, out: &Path) -> Result<()> {
    let model = require_trajan(checkpoint)?;
    let la = model.encode(&load_tracks(a)?)?;
    let lb = model.encode(&load_tracks(b)?)?;
    scalar_report(ctx, out, "pair_distance", pair_distance(&la, &lb)?)
}

pub fn histogram(ctx: &Ctx, input: &Path, out: &Path) -> Result<()> {
    let h = motion_histogram(&load_tracks(input)?, &HistogramConfig::default())?;
    ctx.report(out, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["index", "value"])?;
        for (i, v) in h.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(())
}

pub fn motion_stats(ctx: &Ctx, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let stats = inputs
        .par_iter()
        .map(|p| {
            let ts = load_tracks(p)?;
            Ok((stem(p), track_length(&ts), track_radius(&ts)))
        })
        .collect::<Result<Vec<_>>>()?;
    ctx.report(out, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["video", "track", "length", "radius"])?;
        for (name, len, rad) in &stats {
            for (j, (l, r)) in len.iter().zip(rad).enumerate() {
                w.write_record([name.as_str(), &j.to_string(), &l.to_string(), &r.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(())
}

pub fn warp(ctx: &Ctx, frames: &[PathBuf], flows: &[PathBuf], out: &Path) -> Result<()> {
    if frames.len() < 2 || flows.len() != frames.len() - 1 {
        return Err(Error::validation(format!(
            "{} frames need {} flow fields, got {}",
            frames.len(),
            frames.len().saturating_sub(1),
            flows.len()
        )));
    }
    let rows = (0..flows.len())
        .into_par_iter()
        .map(|i| {
            let a = read_frame(&read_file(&frames[i])?)?;
            let b = read_frame(&read_file(&frames[i + 1])?)?;
            let f = read_flow(&read_file(&flows[i])?)?;
            let ctx_msg = || format!("frame pair {i}");
            let we = warp_error(&a, &b, &f).map_err(|e| e.with_context(ctx_msg()))?;
            let mag = flow_magnitude(&f).map_err(|e| e.with_context(ctx_msg()))?;
            Ok((we, mag))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let mean_we = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let mean_mag = rows.iter().map(|r| r.1).sum::<f64>() / n;
    ctx.report(out, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["pair", "warp_error", "score", "flow_magnitude"])?;
        for (i, (we, mag)) in rows.iter().enumerate() {
            w.write_record([i.to_string(), we.to_string(), (-we).to_string(), mag.to_string()])?;
        }
        w.write_record(["mean".to_string(), mean_we.to_string(), (-mean_we).to_string(), mean_mag.to_string()])?;
        w.flush()?;
        Ok(())
    })?;
    println!("warp error {mean_we} (score {}), flow magnitude {mean_mag}", -mean_we);
    Ok(())
}

pub fn corrupt(ctx: &Ctx, input: &Path, level: Level, mode: CorruptionMode, seed: u64, out: &Path) -> Result<()> {
    let ts = corrupt_tracks(&load_tracks(input)?, level, mode, seed)?;
    ctx.binary(out, &write_trackset(&ts)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SensitivityMetric {
    /// One minus the per-video reconstruction AJ.
    Aj,
    /// Mean track length.
    Length,
    /// Mean smallest-enclosing-circle radius.
    Radius,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sensitivity(
    ctx: &Ctx,
    checkpoint: Option<&Path>,
    metric: SensitivityMetric,
    seed: u64,
    levels: &[Level],
    inputs: &[PathBuf],
    out: &Path,
) -> Result<()> {
    let clean = load_all(inputs)?;
    let cfg = &ctx.cfg;
    let model = match (metric, checkpoint) {
        (SensitivityMetric::Aj, Some(p)) => Some(reconstructor(load_checkpoint(p)?)),
        (SensitivityMetric::Aj, None) => return Err(Error::validation("the aj metric needs --checkpoint")),
        _ => None,
    };
    let per_clip = |ts: &TrackSet, i: usize| -> Result<f64> {
        match metric {
            SensitivityMetric::Aj => {
                let m = model.as_ref().expect("checked above");
                let r = per_video_score(m.as_ref(), ts, cfg.n_support, cfg.n_query, seed.wrapping_add(i as u64), &cfg.aj)?;
                Ok(1.0 - r.overall)
            }
            SensitivityMetric::Length => Ok(mean(&track_length(ts))),
            SensitivityMetric::Radius => Ok(mean(&track_radius(ts))),
        }
    };
    let set_metric = |_clean: &[TrackSet], corrupted: &[TrackSet]| -> Result<f64> {
        let vals = corrupted
            .par_iter()
            .enumerate()
            .map(|(i, ts)| per_clip(ts, i).map_err(|e| e.with_context(format!("clip {i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(mean(&vals))
    };
    let report = sensitivity_protocol(&set_metric, &clean, levels, seed)?;
    ctx.report(out, |buf| report.write_csv(buf))?;
    println!("mean ratio {}", report.mean_ratio());
    Ok(())
}

fn read_score_map(path: &Path, value_col: &str) -> Result<BTreeMap<String, f64>> {
    let bytes = read_file(path)?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(&bytes[..]);
    let h = r.headers()?.clone();
    if h.iter().collect::<Vec<_>>() != ["video_id", value_col] {
        return Err(Error::Format(format!("{}: header must be video_id,{value_col}", path.display())));
    }
    let mut map = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad value {:?}", path.display(), &rec[1])))?;
        if map.insert(rec[0].to_string(), v).is_some() {
            return Err(Error::Format(format!("{}: duplicate video {:?}", path.display(), &rec[0])));
        }
    }
    Ok(map)
}

pub fn correlate(ctx: &Ctx, ratings: &Path, scores: &Path, question: &str, labels: Option<&Path>, out: &Path) -> Result<()> {
    let table = RatingTable::read_csv(&read_file(ratings)?[..]).map_err(|e| e.with_context(ratings.display()))?;
    let (z, dropped) = zscore_raters(&table);
    let human = mean_score_per_video(&z, question);
    let metric = read_score_map(scores, "score")?;
    let common: Vec<&String> = metric.keys().filter(|k| human.contains_key(*k)).collect();
    let a: Vec<f64> = common.iter().map(|k| metric[*k]).collect();
    let b: Vec<f64> = common.iter().map(|k| human[*k]).collect();
    let rho = spearman_rho(&a, &b)?;
    let auc = match labels {
        Some(p) => {
            let lab = read_score_map(p, "label")?;
            let keys: Vec<&String> = metric.keys().filter(|k| lab.contains_key(*k)).collect();
            let s: Vec<f64> = keys.iter().map(|k| metric[*k]).collect();
            let l: Vec<bool> = keys.iter().map(|k| lab[*k] != 0.0).collect();
            Some(roc_auc(&s, &l)?)
        }
        None => None,
    };
    let sigma = inter_rater_sigma(&z);
    ctx.report(out, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["statistic", "question", "value"])?;
        w.write_record(["spearman_rho", question, &rho.to_string()])?;
        w.write_record(["n_videos", question, &common.len().to_string()])?;
        if let Some(auc) = auc {
            w.write_record(["roc_auc", "", &auc.to_string()])?;
        }
        for (q, s) in &sigma {
            w.write_record(["inter_rater_sigma", q, &s.to_string()])?;
        }
        w.write_record(["dropped_raters", "", &dropped.len().to_string()])?;
        w.flush()?;
        Ok(())
    })?;
    println!("spearman rho {rho} over {} videos", common.len());
    Ok(())
}

pub struct SynthArgs {
    pub kind: SynthKind,
    pub frames: usize,
    pub tracks: usize,
    pub seed: u64,
    pub params: SynthParams,
    pub count: Option<usize>,
}

pub fn synth(ctx: &Ctx, a: &SynthArgs, out: &Path) -> Result<()> {
    match a.count {
        None => {
            let ts = synth_tracks(a.kind, a.frames, a.tracks, &a.params, a.seed)?;
            ctx.binary(out, &write_trackset(&ts)?)?;
        }
        Some(n) => {
            let clips = synth_dataset(n, a.frames, a.tracks, a.params.width, a.params.height, a.seed)?;
            for (i, ts) in clips.iter().enumerate() {
                ctx.binary(&out.join(format!("clip_{i:04}.trk")), &write_trackset(ts)?)?;
            }
        }
    }
    Ok(())
}
