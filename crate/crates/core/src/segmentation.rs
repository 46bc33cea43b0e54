//! Speaking-activity smoothing, turn-taking event detection, and
//! positive/unlabeled window extraction.
//!
//! A positive window for the incoming speaker is drawn uniformly from the
//! interval starting `l_max` before their speech onset and ending `l_excl`
//! (potential mouth-opening frames) before it. Everything else that does
//! not overlap speech or a chosen positive window can become an unlabeled
//! window.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{FaceTrack, NUM_CHANNELS};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed dataset: {0}")]
    MalformedDataset(String),
}

/// Window sampling parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Window length in seconds.
    pub window_len: f64,
    /// Positive windows start no earlier than `l_max` before the onset.
    pub l_max: f64,
    /// Positive windows end at least `l_excl` before the onset.
    pub l_excl: f64,
    /// Speaking runs and interior gaps shorter than this are smoothed away.
    pub min_duration: f64,
    /// Score threshold; strictly greater means speaking.
    pub asd_threshold: f64,
    /// Unlabeled sampling rate per track.
    pub unlabeled_per_minute: f64,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            window_len: 4.0,
            l_max: 10.0,
            l_excl: 0.5,
            min_duration: 1.0,
            asd_threshold: 0.0,
            unlabeled_per_minute: 2.0,
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.window_len + self.l_excl > self.l_max {
            return Err(SegmentError::InvalidConfig(format!(
                "window_len + l_excl = {} exceeds l_max = {}",
                self.window_len + self.l_excl,
                self.l_max
            )));
        }
        for (name, v) in [
            ("window_len", self.window_len),
            ("l_max", self.l_max),
            ("l_excl", self.l_excl),
            ("min_duration", self.min_duration),
        ] {
            if v <= 0.0 {
                return Err(SegmentError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Four-class annotation schema used on validation/test sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthLabel {
    Negative,
    PossiblyPositive,
    Positive,
    Outlier,
}

impl std::str::FromStr for TruthLabel {
    type Err = SegmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "negative" => Ok(TruthLabel::Negative),
            "possibly_positive" => Ok(TruthLabel::PossiblyPositive),
            "positive" => Ok(TruthLabel::Positive),
            "outlier" => Ok(TruthLabel::Outlier),
            other => Err(SegmentError::UnknownLabel(other.to_string())),
        }
    }
}

/// How a four-class label collapses to a binary one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeMode {
    /// Keep only unambiguous train-time labels; possibly-positive and
    /// outlier samples are dropped.
    TrainBinary,
    /// Validation merge: possibly-positive counts as positive, outliers
    /// are dropped.
    ValMerge,
}

/// Collapses an annotation to a binary label; `None` drops the sample.
pub fn merge_annotation_labels(label: TruthLabel, mode: MergeMode) -> Option<bool> {
    match (mode, label) {
        (_, TruthLabel::Negative) => Some(false),
        (_, TruthLabel::Positive) => Some(true),
        (MergeMode::ValMerge, TruthLabel::PossiblyPositive) => Some(true),
        (MergeMode::TrainBinary, TruthLabel::PossiblyPositive) => None,
        (_, TruthLabel::Outlier) => None,
    }
}

/// PU role of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PuRole {
    Positive,
    Unlabeled,
}

/// A fixed-length feature window.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub video_id: String,
    pub face_id: String,
    pub t_start: f64,
    pub t_end: f64,
    /// Row-major `[T, C]`, `C = 19`; stored as f32 like the on-disk format.
    pub data: Vec<f32>,
    pub seq_len: usize,
    pub pu_role: PuRole,
    pub truth: Option<TruthLabel>,
}

/// The moment a participant becomes the new speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnEvent {
    pub new_speaker: String,
    pub onset: f64,
    pub previous_speaker: Option<String>,
    pub previous_end: Option<f64>,
}

/// Two-pass smoothing on a boolean speaking sequence: first drop speaking
/// runs shorter than `min_frames`, then fill interior non-speaking gaps
/// shorter than `min_frames`. The fixed order makes the operation
/// idempotent.
pub fn smooth_bools(speaking: &[bool], min_frames: usize) -> Vec<bool> {
    let mut out = speaking.to_vec();
    // Pass 1: remove short speaking runs.
    let mut i = 0;
    while i < out.len() {
        if out[i] {
            let mut j = i;
            while j < out.len() && out[j] {
                j += 1;
            }
            if j - i < min_frames {
                out[i..j].fill(false);
            }
            i = j;
        } else {
            i += 1;
        }
    }
    // Pass 2: fill short interior gaps.
    let first_speak = out.iter().position(|&s| s);
    let last_speak = out.iter().rposition(|&s| s);
    if let (Some(first), Some(last)) = (first_speak, last_speak) {
        let mut i = first;
        while i <= last {
            if !out[i] {
                let mut j = i;
                while j <= last && !out[j] {
                    j += 1;
                }
                if j - i < min_frames {
                    out[i..j].fill(true);
                }
                i = j;
            } else {
                i += 1;
            }
        }
    }
    out
}

/// Thresholds ASD scores and smooths them into speaking segments.
///
/// Segments are half-open `[start, end)` on the frame grid, so a segment's
/// duration equals its frame count divided by the frame rate. The returned
/// track carries the segments; frames are untouched.
pub fn smooth_asd(track: &FaceTrack, cfg: &SamplerConfig) -> FaceTrack {
    let period = 1.0 / track.frame_rate;
    let min_frames = (cfg.min_duration * track.frame_rate).round() as usize;
    let speaking: Vec<bool> = track
        .frames
        .iter()
        .map(|f| f.asd_score > cfg.asd_threshold)
        .collect();
    let smoothed = smooth_bools(&speaking, min_frames);

    let mut segments = Vec::new();
    let mut i = 0;
    while i < smoothed.len() {
        if smoothed[i] {
            let mut j = i;
            while j < smoothed.len() && smoothed[j] {
                j += 1;
            }
            let start = track.frames[i].time;
            let end = track.frames[j - 1].time + period;
            segments.push((start, end));
            i = j;
        } else {
            i += 1;
        }
    }

    let mut out = track.clone();
    out.speaking_segments = segments;
    out
}

/// Detects speaker handovers across tracks.
///
/// One event per speaking-segment onset whose speaker differs from the most
/// recent prior speaker, where "prior speaker" is the owner of the segment
/// with the latest end strictly before this onset. A speaker resuming after
/// their own pause is not an event. Events are sorted by onset.
pub fn detect_turn_events(tracks: &[FaceTrack]) -> Vec<TurnEvent> {
    // (start, end, face)
    let mut segments: Vec<(f64, f64, &str)> = Vec::new();
    for t in tracks {
        for &(s, e) in &t.speaking_segments {
            segments.push((s, e, t.face_id.as_str()));
        }
    }
    segments.sort_by(|a, b| {
        (a.0, a.1, a.2)
            .partial_cmp(&(b.0, b.1, b.2))
            .unwrap()
    });

    let mut events = Vec::new();
    for &(onset, _, face) in &segments {
        // Latest-ended segment strictly before this onset; ties broken by
        // (end, start, face) so the scan is deterministic.
        let prev = segments
            .iter()
            .filter(|&&(_, e, _)| e < onset)
            .max_by(|a, b| (a.1, a.0, a.2).partial_cmp(&(b.1, b.0, b.2)).unwrap());
        match prev {
            Some(&(_, prev_end, prev_face)) => {
                if prev_face != face {
                    events.push(TurnEvent {
                        new_speaker: face.to_string(),
                        onset,
                        previous_speaker: Some(prev_face.to_string()),
                        previous_end: Some(prev_end),
                    });
                }
            }
            None => {
                events.push(TurnEvent {
                    new_speaker: face.to_string(),
                    onset,
                    previous_speaker: None,
                    previous_end: None,
                });
            }
        }
    }
    events.sort_by(|a, b| {
        (a.onset, a.new_speaker.as_str())
            .partial_cmp(&(b.onset, b.new_speaker.as_str()))
            .unwrap()
    });
    events
}

/// Number of frames per window for a track.
pub fn window_frames(window_len: f64, frame_rate: f64) -> usize {
    (window_len * frame_rate).round() as usize
}

fn cut_window(track: &FaceTrack, start_idx: usize, n_frames: usize) -> Option<Vec<f32>> {
    if start_idx + n_frames > track.frames.len() {
        return None;
    }
    let mut data = Vec::with_capacity(n_frames * NUM_CHANNELS);
    for f in &track.frames[start_idx..start_idx + n_frames] {
        if !f.has_features() {
            return None;
        }
        for v in f.channels() {
            data.push(v as f32);
        }
    }
    Some(data)
}

fn track_key(t: &FaceTrack) -> (String, String, String) {
    (
        t.video_id.clone(),
        t.face_id.clone(),
        format!("{:.6}", t.start_time()),
    )
}

/// Draws one positive window per turn event.
///
/// The window start is drawn uniformly on the frame grid over
/// `[onset - l_max, onset - l_excl - window_len]`. Events whose track does
/// not fully cover the drawn window are skipped and the reason is logged.
pub fn extract_positive_samples(
    tracks: &[FaceTrack],
    events: &[TurnEvent],
    cfg: &SamplerConfig,
) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut by_face: BTreeMap<&str, Vec<&FaceTrack>> = BTreeMap::new();
    for t in tracks {
        by_face.entry(t.face_id.as_str()).or_default().push(t);
    }

    let mut ordered: Vec<&TurnEvent> = events.iter().collect();
    ordered.sort_by(|a, b| {
        (a.onset, a.new_speaker.as_str())
            .partial_cmp(&(b.onset, b.new_speaker.as_str()))
            .unwrap()
    });

    let mut samples = Vec::new();
    for ev in ordered {
        let Some(cands) = by_face.get(ev.new_speaker.as_str()) else {
            log::info!(
                "skip event at {:.2}s: no track for face {}",
                ev.onset,
                ev.new_speaker
            );
            continue;
        };
        // The track part containing the onset.
        let Some(track) = cands.iter().find(|t| {
            t.start_time() <= ev.onset && ev.onset <= t.end_time() + 1.0 / t.frame_rate
        }) else {
            log::info!(
                "skip event at {:.2}s: face {} has no track part covering the onset",
                ev.onset,
                ev.new_speaker
            );
            continue;
        };

        let n_frames = window_frames(cfg.window_len, track.frame_rate);
        let lo = ev.onset - cfg.l_max;
        let hi = ev.onset - cfg.l_excl - cfg.window_len;
        // Candidate start indices on the frame grid relative to track start.
        let t0 = track.start_time();
        let i_lo = ((lo - t0) * track.frame_rate).ceil() as i64;
        let i_hi = ((hi - t0) * track.frame_rate).floor() as i64;
        if i_hi < i_lo {
            log::info!("skip event at {:.2}s: empty start interval", ev.onset);
            continue;
        }
        // Draw over the full admissible interval, then check coverage; a
        // draw outside the recorded track is a skip, not a re-draw.
        let idx = rng.gen_range(i_lo..=i_hi);
        if idx < 0 || (idx as usize) + n_frames > track.frames.len() {
            log::info!(
                "skip event at {:.2}s: drawn window not covered by track",
                ev.onset
            );
            continue;
        }
        let idx = idx as usize;
        let Some(data) = cut_window(track, idx, n_frames) else {
            log::info!(
                "skip event at {:.2}s: window contains unfilled frames",
                ev.onset
            );
            continue;
        };
        let t_start = track.frames[idx].time;
        samples.push(Sample {
            video_id: track.video_id.clone(),
            face_id: track.face_id.clone(),
            t_start,
            t_end: t_start + n_frames as f64 / track.frame_rate,
            data,
            seq_len: n_frames,
            pu_role: PuRole::Positive,
            truth: None,
        });
    }
    samples
}

/// Draws unlabeled windows from non-speaking regions.
///
/// The target count per track is `floor(duration_minutes * rate)`. A drawn
/// window is accepted only if the track is not speaking anywhere inside it
/// and it does not overlap a positive window already chosen for the same
/// track. Uses rejection sampling with a bounded number of attempts, so
/// saturated tracks simply yield fewer samples.
pub fn extract_unlabeled_samples(
    tracks: &[FaceTrack],
    positives: &[Sample],
    cfg: &SamplerConfig,
) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(1));
    let mut ordered: Vec<&FaceTrack> = tracks.iter().collect();
    ordered.sort_by_key(|t| track_key(t));

    let mut samples = Vec::new();
    for track in ordered {
        let n_frames = window_frames(cfg.window_len, track.frame_rate);
        if track.frames.len() < n_frames {
            continue;
        }
        let minutes = track.duration() / 60.0;
        let target = (minutes * cfg.unlabeled_per_minute).floor() as usize;
        if target == 0 {
            continue;
        }
        let own_positives: Vec<(f64, f64)> = positives
            .iter()
            .filter(|s| s.video_id == track.video_id && s.face_id == track.face_id)
            .map(|s| (s.t_start, s.t_end))
            .collect();

        let max_attempts = target * 50;
        let mut accepted = 0;
        let mut attempts = 0;
        while accepted < target && attempts < max_attempts {
            attempts += 1;
            let idx = rng.gen_range(0..=track.frames.len() - n_frames);
            let t_start = track.frames[idx].time;
            let t_end = t_start + n_frames as f64 / track.frame_rate;
            let speaking_overlap = track
                .speaking_segments
                .iter()
                .any(|&(s, e)| s < t_end && t_start < e);
            if speaking_overlap {
                continue;
            }
            let positive_overlap = own_positives
                .iter()
                .any(|&(s, e)| s < t_end && t_start < e);
            if positive_overlap {
                continue;
            }
            let Some(data) = cut_window(track, idx, n_frames) else {
                continue;
            };
            samples.push(Sample {
                video_id: track.video_id.clone(),
                face_id: track.face_id.clone(),
                t_start,
                t_end,
                data,
                seq_len: n_frames,
                pu_role: PuRole::Unlabeled,
                truth: None,
            });
            accepted += 1;
        }
    }
    samples.sort_by(|a, b| {
        (a.video_id.as_str(), a.face_id.as_str(), a.t_start)
            .partial_cmp(&(b.video_id.as_str(), b.face_id.as_str(), b.t_start))
            .unwrap()
    });
    samples
}

// ---------------------------------------------------------------------------
// Dataset files: manifest JSON + raw f32 tensor + JSON-lines index.
// ---------------------------------------------------------------------------

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: SamplerConfig,
    pub seed: u64,
    pub n_samples: usize,
    pub seq_len: usize,
    pub channels: usize,
    pub n_positive: usize,
    pub n_unlabeled: usize,
    pub tensor_file: String,
    pub index_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexLine {
    video_id: String,
    face_id: String,
    t_start: f64,
    t_end: f64,
    pu_role: PuRole,
    truth: Option<TruthLabel>,
}

/// Writes manifest + tensor + index into `dir`.
///
/// Tensor layout: little-endian f32, row-major `[N, T, C]`, in index order.
pub fn write_dataset(
    dir: &Path,
    samples: &[Sample],
    cfg: &SamplerConfig,
) -> Result<DatasetManifest, SegmentError> {
    let io_err = |path: &Path| {
        let p = path.display().to_string();
        move |source| SegmentError::Io {
            path: p.clone(),
            source,
        }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let seq_len = samples.first().map_or(0, |s| s.seq_len);
    for s in samples {
        if s.seq_len != seq_len {
            return Err(SegmentError::MalformedDataset(format!(
                "inconsistent window length: {} vs {}",
                s.seq_len, seq_len
            )));
        }
        if s.data.len() != seq_len * NUM_CHANNELS {
            return Err(SegmentError::MalformedDataset(
                "sample data length does not match T x C".into(),
            ));
        }
        if s.data.iter().any(|v| !v.is_finite()) {
            return Err(SegmentError::MalformedDataset(
                "sample contains non-finite values".into(),
            ));
        }
    }

    let tensor_path = dir.join("samples.f32");
    let mut w = BufWriter::new(File::create(&tensor_path).map_err(io_err(&tensor_path))?);
    for s in samples {
        for v in &s.data {
            w.write_all(&v.to_le_bytes()).map_err(io_err(&tensor_path))?;
        }
    }
    w.flush().map_err(io_err(&tensor_path))?;

    let index_path = dir.join("index.jsonl");
    let mut w = BufWriter::new(File::create(&index_path).map_err(io_err(&index_path))?);
    for s in samples {
        let line = IndexLine {
            video_id: s.video_id.clone(),
            face_id: s.face_id.clone(),
            t_start: s.t_start,
            t_end: s.t_end,
            pu_role: s.pu_role,
            truth: s.truth,
        };
        serde_json::to_writer(&mut w, &line)
            .map_err(|e| SegmentError::MalformedDataset(e.to_string()))?;
        w.write_all(b"\n").map_err(io_err(&index_path))?;
    }
    w.flush().map_err(io_err(&index_path))?;

    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        config: cfg.clone(),
        seed: cfg.rng_seed,
        n_samples: samples.len(),
        seq_len,
        channels: NUM_CHANNELS,
        n_positive: samples
            .iter()
            .filter(|s| s.pu_role == PuRole::Positive)
            .count(),
        n_unlabeled: samples
            .iter()
            .filter(|s| s.pu_role == PuRole::Unlabeled)
            .count(),
        tensor_file: "samples.f32".into(),
        index_file: "index.jsonl".into(),
    };
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SegmentError::MalformedDataset(e.to_string()))?;
    std::fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<Sample>), SegmentError> {
    let io_err = |path: &Path| {
        let p = path.display().to_string();
        move |source| SegmentError::Io {
            path: p.clone(),
            source,
        }
    };
    let text = std::fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| SegmentError::MalformedDataset(e.to_string()))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(SegmentError::MalformedDataset(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let index_path = dir.join(&manifest.index_file);
    let reader = BufReader::new(File::open(&index_path).map_err(io_err(&index_path))?);
    let mut index = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(io_err(&index_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IndexLine = serde_json::from_str(&line)
            .map_err(|e| SegmentError::MalformedDataset(e.to_string()))?;
        index.push(rec);
    }
    if index.len() != manifest.n_samples {
        return Err(SegmentError::MalformedDataset(format!(
            "index has {} records, manifest says {}",
            index.len(),
            manifest.n_samples
        )));
    }

    let tensor_path = dir.join(&manifest.tensor_file);
    let mut bytes = Vec::new();
    File::open(&tensor_path)
        .map_err(io_err(&tensor_path))?
        .read_to_end(&mut bytes)
        .map_err(io_err(&tensor_path))?;
    let per_sample = manifest.seq_len * manifest.channels;
    if bytes.len() != manifest.n_samples * per_sample * 4 {
        return Err(SegmentError::MalformedDataset(format!(
            "tensor file has {} bytes, expected {}",
            bytes.len(),
            manifest.n_samples * per_sample * 4
        )));
    }

    let mut samples = Vec::with_capacity(index.len());
    for (i, rec) in index.into_iter().enumerate() {
        let start = i * per_sample * 4;
        let data: Vec<f32> = bytes[start..start + per_sample * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        samples.push(Sample {
            video_id: rec.video_id,
            face_id: rec.face_id,
            t_start: rec.t_start,
            t_end: rec.t_end,
            data,
            seq_len: manifest.seq_len,
            pu_role: rec.pu_role,
            truth: rec.truth,
        });
    }
    Ok((manifest, samples))
}
