//! Feature/ASD stream ingestion.
//!
//! Two CSV streams describe the same video: a feature stream (facial action
//! units and gaze per detected face) and an ASD stream (active-speaker
//! scores per detected face). The two tools label faces independently, so
//! records are joined per timestamp by bounding-box intersection; the ASD
//! face id becomes the track identity. Timestamps where the feature tool
//! lost the face are flagged and later filled by linear interpolation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_AUS: usize = 17;
pub const NUM_GAZE: usize = 2;
/// Feature channels per frame: 17 action units + 2 gaze angles.
pub const NUM_CHANNELS: usize = NUM_AUS + NUM_GAZE;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("missing or misnamed column `{0}`")]
    MissingColumn(String),
    #[error("non-monotonic time for face `{face_id}` at row {row}")]
    NonMonotonicTime { face_id: String, row: usize },
    #[error("row {row}, column `{col}`: not a valid numeric value")]
    NonNumericField { row: usize, col: String },
    #[error("ambiguous box match at t={time}: multiple intersections")]
    AmbiguousMatch { time: f64 },
    #[error("empty input stream")]
    EmptyInput,
    #[error("track `{0}` has fewer than 2 frames with features")]
    TooFewFrames(String),
    #[error("track `{face_id}` frame interval varies more than 1% from the median")]
    VariableFrameRate { face_id: String },
    #[error("malformed track line {line}: {message}")]
    MalformedTrack { line: usize, message: String },
}

/// Axis-aligned box in pixels; `w` and `h` are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Intersection area; zero for disjoint or merely touching boxes.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix > 0.0 && iy > 0.0 {
            ix * iy
        } else {
            0.0
        }
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0.0
    }
}

/// One timestamped observation of one face.
///
/// `aus`/`gaze` hold NaN on frames flagged for interpolation until
/// [`interpolate_gaps`] fills them; `interpolated` stays true afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub time: f64,
    pub face_id: String,
    pub bbox: BBox,
    pub aus: [f64; NUM_AUS],
    pub gaze: [f64; NUM_GAZE],
    pub asd_score: f64,
    pub interpolated: bool,
}

impl FeatureFrame {
    pub fn has_features(&self) -> bool {
        self.aus.iter().chain(self.gaze.iter()).all(|v| !v.is_nan())
    }

    /// The 19 feature channels in dataset order (AUs then gaze).
    pub fn channels(&self) -> [f64; NUM_CHANNELS] {
        let mut out = [0.0; NUM_CHANNELS];
        out[..NUM_AUS].copy_from_slice(&self.aus);
        out[NUM_AUS..].copy_from_slice(&self.gaze);
        out
    }
}

/// Per-face time series with speaking segments filled in by smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTrack {
    pub video_id: String,
    pub face_id: String,
    /// Hz; constant per track within 1%.
    pub frame_rate: f64,
    /// Strictly increasing in time.
    pub frames: Vec<FeatureFrame>,
    /// Disjoint, sorted half-open `[start, end)` intervals.
    pub speaking_segments: Vec<(f64, f64)>,
}

impl FaceTrack {
    pub fn start_time(&self) -> f64 {
        self.frames.first().map_or(0.0, |f| f.time)
    }

    pub fn end_time(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.time)
    }

    pub fn duration(&self) -> f64 {
        if self.frames.is_empty() {
            0.0
        } else {
            self.end_time() - self.start_time() + 1.0 / self.frame_rate
        }
    }

    /// Index of the frame at or after `time` on this track's grid.
    pub fn frame_index_at(&self, time: f64) -> usize {
        let t0 = self.start_time();
        (((time - t0) * self.frame_rate).round().max(0.0)) as usize
    }
}

/// Input stream schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamFormat {
    /// `time,face_id,x,y,w,h,au01..au17,gaze_x,gaze_y`
    FeatureCsv,
    /// `time,face_id,x,y,w,h,asd_score`
    AsdCsv,
}

fn feature_header() -> Vec<String> {
    let mut h = vec!["time", "face_id", "x", "y", "w", "h"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for i in 1..=NUM_AUS {
        h.push(format!("au{i:02}"));
    }
    h.push("gaze_x".into());
    h.push("gaze_y".into());
    h
}

fn asd_header() -> Vec<String> {
    ["time", "face_id", "x", "y", "w", "h", "asd_score"]
        .into_iter()
        .map(String::from)
        .collect()
}

fn parse_field(raw: &str, row: usize, col: &str) -> Result<f64, DataError> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::NonNumericField {
            row,
            col: col.to_string(),
        })
}

/// Parses one CSV stream into frames sorted by `(face_id, time)`.
///
/// Rows must appear in strictly increasing time order per face. Malformed
/// rows (non-numeric fields, non-positive box sizes, AU values outside
/// [0, 5]) are rejected with an error rather than skipped.
pub fn parse_feature_stream(
    path: &Path,
    format: StreamFormat,
) -> Result<Vec<FeatureFrame>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let expected = match format {
        StreamFormat::FeatureCsv => feature_header(),
        StreamFormat::AsdCsv => asd_header(),
    };
    let headers = reader
        .headers()
        .map_err(|_| DataError::MissingColumn("header row".into()))?
        .clone();
    let got: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    for (i, want) in expected.iter().enumerate() {
        if got.get(i).map(String::as_str) != Some(want.as_str()) {
            return Err(DataError::MissingColumn(want.clone()));
        }
    }
    if got.len() != expected.len() {
        return Err(DataError::MissingColumn(format!(
            "unexpected extra column `{}`",
            got[expected.len()]
        )));
    }

    let mut frames = Vec::new();
    let mut last_time: BTreeMap<String, f64> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let record = record.map_err(|_| DataError::NonNumericField {
            row,
            col: "record".into(),
        })?;
        let field = |idx: usize| -> &str { record.get(idx).unwrap_or("") };
        let time = parse_field(field(0), row, "time")?;
        if time < 0.0 {
            return Err(DataError::NonNumericField {
                row,
                col: "time".into(),
            });
        }
        let face_id = field(1).to_string();
        if face_id.is_empty() {
            return Err(DataError::NonNumericField {
                row,
                col: "face_id".into(),
            });
        }
        if let Some(&prev) = last_time.get(&face_id) {
            if time <= prev {
                return Err(DataError::NonMonotonicTime { face_id, row });
            }
        }
        last_time.insert(face_id.clone(), time);

        let x = parse_field(field(2), row, "x")?;
        let y = parse_field(field(3), row, "y")?;
        let w = parse_field(field(4), row, "w")?;
        let h = parse_field(field(5), row, "h")?;
        if w <= 0.0 {
            return Err(DataError::NonNumericField {
                row,
                col: "w".into(),
            });
        }
        if h <= 0.0 {
            return Err(DataError::NonNumericField {
                row,
                col: "h".into(),
            });
        }
        let bbox = BBox { x, y, w, h };

        let frame = match format {
            StreamFormat::FeatureCsv => {
                let mut aus = [0.0; NUM_AUS];
                for (k, au) in aus.iter_mut().enumerate() {
                    let col = format!("au{:02}", k + 1);
                    let v = parse_field(field(6 + k), row, &col)?;
                    if !(0.0..=5.0).contains(&v) {
                        return Err(DataError::NonNumericField { row, col });
                    }
                    *au = v;
                }
                let gaze = [
                    parse_field(field(6 + NUM_AUS), row, "gaze_x")?,
                    parse_field(field(7 + NUM_AUS), row, "gaze_y")?,
                ];
                FeatureFrame {
                    time,
                    face_id,
                    bbox,
                    aus,
                    gaze,
                    asd_score: f64::NAN,
                    interpolated: false,
                }
            }
            StreamFormat::AsdCsv => FeatureFrame {
                time,
                face_id,
                bbox,
                aus: [f64::NAN; NUM_AUS],
                gaze: [f64::NAN; NUM_GAZE],
                asd_score: parse_field(field(6), row, "asd_score")?,
                interpolated: false,
            },
        };
        frames.push(frame);
    }
    frames.sort_by(|a, b| {
        (a.face_id.as_str(), a.time)
            .partial_cmp(&(b.face_id.as_str(), b.time))
            .unwrap()
    });
    Ok(frames)
}

/// Sub-millisecond quantization key used to group records by timestamp.
fn time_key(t: f64) -> i64 {
    (t * 1e6).round() as i64
}

/// Joins feature records onto the ASD timeline by box intersection.
///
/// For every ASD record, the feature record at the same timestamp whose box
/// overlaps it (strictly positive area) provides the AU/gaze channels. Zero
/// matches flag the frame for interpolation; more than one match on either
/// side of the pairing is an error, never a heuristic pick. Feature records
/// that match no ASD box are dropped, since they carry no speaking signal.
pub fn match_tracks(
    video_id: &str,
    features: &[FeatureFrame],
    asd: &[FeatureFrame],
) -> Result<Vec<FaceTrack>, DataError> {
    if features.is_empty() || asd.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let mut features_by_time: BTreeMap<i64, Vec<&FeatureFrame>> = BTreeMap::new();
    for f in features {
        features_by_time.entry(time_key(f.time)).or_default().push(f);
    }

    // An ASD box must intersect at most one feature box, and a feature box
    // must serve at most one ASD box per timestamp.
    let mut merged: BTreeMap<String, Vec<FeatureFrame>> = BTreeMap::new();
    let mut asd_by_time: BTreeMap<i64, Vec<&FeatureFrame>> = BTreeMap::new();
    for a in asd {
        asd_by_time.entry(time_key(a.time)).or_default().push(a);
    }
    for (key, asd_group) in &asd_by_time {
        let empty = Vec::new();
        let feat_group = features_by_time.get(key).unwrap_or(&empty);
        for feat in feat_group {
            let hits = asd_group
                .iter()
                .filter(|a| a.bbox.intersects(&feat.bbox))
                .count();
            if hits > 1 {
                return Err(DataError::AmbiguousMatch { time: feat.time });
            }
        }
        for a in asd_group {
            let matches: Vec<&&FeatureFrame> = feat_group
                .iter()
                .filter(|f| f.bbox.intersects(&a.bbox))
                .collect();
            let frame = match matches.len() {
                0 => FeatureFrame {
                    time: a.time,
                    face_id: a.face_id.clone(),
                    bbox: a.bbox,
                    aus: [f64::NAN; NUM_AUS],
                    gaze: [f64::NAN; NUM_GAZE],
                    asd_score: a.asd_score,
                    interpolated: true,
                },
                1 => FeatureFrame {
                    time: a.time,
                    face_id: a.face_id.clone(),
                    bbox: a.bbox,
                    aus: matches[0].aus,
                    gaze: matches[0].gaze,
                    asd_score: a.asd_score,
                    interpolated: false,
                },
                _ => return Err(DataError::AmbiguousMatch { time: a.time }),
            };
            merged.entry(a.face_id.clone()).or_default().push(frame);
        }
    }

    let mut tracks = Vec::new();
    for (face_id, mut frames) in merged {
        frames.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
        let frame_rate = infer_frame_rate(&face_id, &frames)?;
        tracks.push(FaceTrack {
            video_id: video_id.to_string(),
            face_id,
            frame_rate,
            frames,
            speaking_segments: Vec::new(),
        });
    }
    Ok(tracks)
}

/// Median inter-frame interval, required constant within 1%.
pub fn infer_frame_rate(face_id: &str, frames: &[FeatureFrame]) -> Result<f64, DataError> {
    if frames.len() < 2 {
        return Err(DataError::TooFewFrames(face_id.to_string()));
    }
    let mut deltas: Vec<f64> = frames.windows(2).map(|w| w[1].time - w[0].time).collect();
    deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = deltas[deltas.len() / 2];
    if deltas
        .iter()
        .any(|d| (d - median).abs() > 0.01 * median)
    {
        return Err(DataError::VariableFrameRate {
            face_id: face_id.to_string(),
        });
    }
    Ok(1.0 / median)
}

/// Fills flagged gaps no longer than `max_gap` seconds by per-channel
/// linear interpolation; longer gaps split the track. Leading and trailing
/// flagged frames are dropped (no extrapolation rule exists).
///
/// Splitting is why this returns a list: each returned part is contiguous
/// and fully valued. Applying the operation again is the identity.
pub fn interpolate_gaps(track: &FaceTrack, max_gap: f64) -> Result<Vec<FaceTrack>, DataError> {
    let valid_count = track.frames.iter().filter(|f| f.has_features()).count();
    if valid_count < 2 {
        return Err(DataError::TooFewFrames(track.face_id.clone()));
    }

    let frames = &track.frames;
    let valid_idx: Vec<usize> = (0..frames.len())
        .filter(|&i| frames[i].has_features())
        .collect();

    let mut parts: Vec<Vec<FeatureFrame>> = Vec::new();
    let mut current: Vec<FeatureFrame> = vec![frames[valid_idx[0]].clone()];

    for pair in valid_idx.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let gap = frames[b].time - frames[a].time;
        let fits = gap <= max_gap;
        if fits {
            for i in a + 1..b {
                let t = (frames[i].time - frames[a].time) / gap;
                let mut filled = frames[i].clone();
                for k in 0..NUM_AUS {
                    filled.aus[k] = frames[a].aus[k] + t * (frames[b].aus[k] - frames[a].aus[k]);
                }
                for k in 0..NUM_GAZE {
                    filled.gaze[k] =
                        frames[a].gaze[k] + t * (frames[b].gaze[k] - frames[a].gaze[k]);
                }
                filled.bbox = BBox {
                    x: frames[a].bbox.x + t * (frames[b].bbox.x - frames[a].bbox.x),
                    y: frames[a].bbox.y + t * (frames[b].bbox.y - frames[a].bbox.y),
                    w: frames[a].bbox.w + t * (frames[b].bbox.w - frames[a].bbox.w),
                    h: frames[a].bbox.h + t * (frames[b].bbox.h - frames[a].bbox.h),
                };
                filled.interpolated = true;
                current.push(filled);
            }
            current.push(frames[b].clone());
        } else {
            // Too long to fill: close this part and start a new one.
            parts.push(std::mem::take(&mut current));
            current.push(frames[b].clone());
        }
    }
    parts.push(current);

    parts
        .into_iter()
        .filter(|p| p.len() >= 2)
        .map(|frames| {
            let frame_rate = infer_frame_rate(&track.face_id, &frames)?;
            Ok(FaceTrack {
                video_id: track.video_id.clone(),
                face_id: track.face_id.clone(),
                frame_rate,
                frames,
                speaking_segments: Vec::new(),
            })
        })
        .collect()
}

/// JSON-lines record mirroring the CSV columns plus `asd_score` and
/// `interpolated`.
#[derive(Debug, Serialize, Deserialize)]
struct TrackLine {
    time: f64,
    face_id: String,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    aus: Vec<f64>,
    gaze_x: f64,
    gaze_y: f64,
    asd_score: f64,
    interpolated: bool,
}

/// Writes one JSON-lines file for the track. Frames must be fully valued.
pub fn write_track(track: &FaceTrack, path: &Path) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for (i, f) in track.frames.iter().enumerate() {
        if !f.has_features() || !f.asd_score.is_finite() {
            return Err(DataError::MalformedTrack {
                line: i + 1,
                message: "frame still has missing values".into(),
            });
        }
        let line = TrackLine {
            time: f.time,
            face_id: f.face_id.clone(),
            x: f.bbox.x,
            y: f.bbox.y,
            w: f.bbox.w,
            h: f.bbox.h,
            aus: f.aus.to_vec(),
            gaze_x: f.gaze[0],
            gaze_y: f.gaze[1],
            asd_score: f.asd_score,
            interpolated: f.interpolated,
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| DataError::MalformedTrack {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads a track written by [`write_track`]. The video id is not stored in
/// the file; callers pass it (it is encoded in the file name by the CLI).
pub fn read_track(video_id: &str, path: &Path) -> Result<FaceTrack, DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut frames = Vec::new();
    let mut face_id = String::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrackLine =
            serde_json::from_str(&line).map_err(|e| DataError::MalformedTrack {
                line: i + 1,
                message: e.to_string(),
            })?;
        if rec.aus.len() != NUM_AUS {
            return Err(DataError::MalformedTrack {
                line: i + 1,
                message: format!("expected {NUM_AUS} AU values, got {}", rec.aus.len()),
            });
        }
        if face_id.is_empty() {
            face_id = rec.face_id.clone();
        } else if face_id != rec.face_id {
            return Err(DataError::MalformedTrack {
                line: i + 1,
                message: "mixed face ids in one track file".into(),
            });
        }
        let mut aus = [0.0; NUM_AUS];
        aus.copy_from_slice(&rec.aus);
        frames.push(FeatureFrame {
            time: rec.time,
            face_id: rec.face_id,
            bbox: BBox {
                x: rec.x,
                y: rec.y,
                w: rec.w,
                h: rec.h,
            },
            aus,
            gaze: [rec.gaze_x, rec.gaze_y],
            asd_score: rec.asd_score,
            interpolated: rec.interpolated,
        });
    }
    let frame_rate = infer_frame_rate(&face_id, &frames)?;
    Ok(FaceTrack {
        video_id: video_id.to_string(),
        face_id,
        frame_rate,
        frames,
        speaking_segments: Vec::new(),
    })
}
