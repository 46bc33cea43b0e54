//! Pseudo leaning-forward effect.
//!
//! A canonical zoom-and-shift trajectory is derived from recorded tracks:
//! over a lead window before each speech onset, the face box's area ratio
//! gives the scale (square root, so area growth maps to isotropic linear
//! scale) and the box-center displacement, normalized by the reference box
//! size, gives the shift. The per-event curves are averaged pointwise,
//! clamped, and mirrored so playback returns to identity. Frames are warped
//! by inverse-mapping affine transforms with bilinear sampling and edge
//! clamping.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::FaceTrack;
use crate::segmentation::TurnEvent;

#[derive(Debug, Error)]
pub enum EffectError {
    #[error("no event has full lead coverage on its track")]
    NoUsableEvents,
    #[error("invalid image buffer: {0}")]
    InvalidBuffer(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad ppm file {path}: {message}")]
    BadPpm { path: String, message: String },
}

pub const SCALE_MAX: f64 = 1.5;

/// One playback step of the effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    /// Isotropic zoom factor, within [1.0, 1.5].
    pub scale: f64,
    /// Horizontal shift as a fraction of frame width.
    pub shift_x: f64,
    /// Vertical shift as a fraction of frame height.
    pub shift_y: f64,
}

impl TrajectorySample {
    pub const IDENTITY: TrajectorySample = TrajectorySample {
        scale: 1.0,
        shift_x: 0.0,
        shift_y: 0.0,
    };
}

/// A lean-forward curve that starts and ends at identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeanTrajectory {
    pub frame_rate: f64,
    pub samples: Vec<TrajectorySample>,
}

impl LeanTrajectory {
    pub fn duration(&self) -> f64 {
        if self.samples.len() < 2 {
            0.0
        } else {
            (self.samples.len() - 1) as f64 / self.frame_rate
        }
    }

    /// An all-identity trajectory of the given length.
    pub fn identity(frame_rate: f64, n_samples: usize) -> Self {
        LeanTrajectory {
            frame_rate,
            samples: vec![TrajectorySample::IDENTITY; n_samples],
        }
    }

    pub fn validate(&self) -> Result<(), EffectError> {
        if self.samples.is_empty() {
            return Err(EffectError::InvalidTrajectory("no samples".into()));
        }
        if self.frame_rate <= 0.0 || self.frame_rate.is_nan() {
            return Err(EffectError::InvalidTrajectory(
                "frame_rate must be positive".into(),
            ));
        }
        let first = self.samples[0];
        let last = *self.samples.last().unwrap();
        for s in [first, last] {
            if s != TrajectorySample::IDENTITY {
                return Err(EffectError::InvalidTrajectory(
                    "trajectory must start and end at identity".into(),
                ));
            }
        }
        if self
            .samples
            .iter()
            .any(|s| !(1.0..=SCALE_MAX).contains(&s.scale))
        {
            return Err(EffectError::InvalidTrajectory(format!(
                "scale outside [1.0, {SCALE_MAX}]"
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EffectError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| EffectError::InvalidTrajectory(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| EffectError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EffectError> {
        let text = std::fs::read_to_string(path).map_err(|source| EffectError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let t: LeanTrajectory =
            serde_json::from_str(&text).map_err(|e| EffectError::InvalidTrajectory(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }
}

/// Derives the canonical lean-in curve from recorded turn events.
///
/// For each event with full coverage of `[onset - lead, onset]` on the new
/// speaker's track, the per-frame scale is `sqrt(area(t) / area(t0))` and
/// the shift is the box-center displacement over the reference box size.
/// Curves are averaged pointwise, the scale clamped into [1, 1.5], the
/// endpoints renormalized to exact identity, and a mirrored return appended
/// so the playback ends where it began.
pub fn trajectory_from_tracks(
    tracks: &[FaceTrack],
    events: &[TurnEvent],
    lead: f64,
) -> Result<LeanTrajectory, EffectError> {
    let mut curves: Vec<Vec<TrajectorySample>> = Vec::new();
    let mut frame_rate = 0.0;

    for ev in events {
        let Some(track) = tracks.iter().find(|t| {
            t.face_id == ev.new_speaker
                && t.start_time() <= ev.onset - lead
                && ev.onset <= t.end_time() + 1.0 / t.frame_rate
        }) else {
            continue;
        };
        if frame_rate == 0.0 {
            frame_rate = track.frame_rate;
        } else if (frame_rate - track.frame_rate).abs() > 1e-9 {
            log::info!(
                "skip event at {:.2}s: frame rate differs from first usable event",
                ev.onset
            );
            continue;
        }
        let n = (lead * track.frame_rate).round() as usize + 1;
        let i0 = track.frame_index_at(ev.onset - lead);
        if i0 + n > track.frames.len() {
            continue;
        }
        let reference = track.frames[i0].bbox;
        let (cx0, cy0) = reference.center();
        let curve: Vec<TrajectorySample> = (0..n)
            .map(|k| {
                let b = track.frames[i0 + k].bbox;
                let (cx, cy) = b.center();
                TrajectorySample {
                    scale: (b.area() / reference.area()).sqrt(),
                    shift_x: (cx - cx0) / reference.w,
                    shift_y: (cy - cy0) / reference.h,
                }
            })
            .collect();
        curves.push(curve);
    }

    if curves.is_empty() {
        return Err(EffectError::NoUsableEvents);
    }

    // Pointwise mean across events.
    let n = curves[0].len();
    let m = curves.len() as f64;
    let mut lean_in: Vec<TrajectorySample> = (0..n)
        .map(|k| TrajectorySample {
            scale: curves.iter().map(|c| c[k].scale).sum::<f64>() / m,
            shift_x: curves.iter().map(|c| c[k].shift_x).sum::<f64>() / m,
            shift_y: curves.iter().map(|c| c[k].shift_y).sum::<f64>() / m,
        })
        .collect();

    // Renormalize so the first sample is exactly identity, then clamp.
    let first = lean_in[0];
    for s in &mut lean_in {
        s.scale = (s.scale / first.scale).clamp(1.0, SCALE_MAX);
        s.shift_x -= first.shift_x;
        s.shift_y -= first.shift_y;
    }

    // Mirror the curve so playback returns to identity.
    let mut samples = lean_in.clone();
    samples.extend(lean_in.iter().rev().skip(1));

    let trajectory = LeanTrajectory {
        frame_rate,
        samples,
    };
    trajectory.validate()?;
    Ok(trajectory)
}

/// RGB8 image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBuffer {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn validate(&self) -> Result<(), EffectError> {
        if self.width == 0 || self.height == 0 {
            return Err(EffectError::InvalidBuffer("zero dimension".into()));
        }
        if self.pixels.len() != self.width * self.height * 3 {
            return Err(EffectError::InvalidBuffer(format!(
                "buffer holds {} bytes, expected {}",
                self.pixels.len(),
                self.width * self.height * 3
            )));
        }
        Ok(())
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Row-major 2x3 affine matrix mapping output pixels to source coordinates.
pub type AffineMatrix = [f64; 6];

/// Builds the output-to-source map for a zoom about `center` composed with
/// a translation of the content by `(shift_x, shift_y)` pixels:
/// `src = center + (p - center) / scale - shift`.
pub fn make_affine(scale: f64, shift_x: f64, shift_y: f64, center: (f64, f64)) -> AffineMatrix {
    let (cx, cy) = center;
    let inv = 1.0 / scale;
    [
        inv,
        0.0,
        cx - cx * inv - shift_x,
        0.0,
        inv,
        cy - cy * inv - shift_y,
    ]
}

/// Analytic inverse of a 2x3 affine map (assumed non-singular).
pub fn invert_affine(m: &AffineMatrix) -> AffineMatrix {
    let det = m[0] * m[4] - m[1] * m[3];
    let ia = m[4] / det;
    let ib = -m[1] / det;
    let id = -m[3] / det;
    let ie = m[0] / det;
    [
        ia,
        ib,
        -(ia * m[2] + ib * m[5]),
        id,
        ie,
        -(id * m[2] + ie * m[5]),
    ]
}

pub fn apply_affine(m: &AffineMatrix, p: (f64, f64)) -> (f64, f64) {
    (
        m[0] * p.0 + m[1] * p.1 + m[2],
        m[3] * p.0 + m[4] * p.1 + m[5],
    )
}

fn is_identity(m: &AffineMatrix) -> bool {
    *m == [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
}

/// Inverse-mapping warp with bilinear sampling; source coordinates outside
/// the image clamp to the nearest edge pixel. Output dimensions equal the
/// input's. An exact identity matrix returns a bitwise-identical copy.
pub fn warp(image: &ImageBuffer, matrix: &AffineMatrix) -> Result<ImageBuffer, EffectError> {
    image.validate()?;
    if is_identity(matrix) {
        return Ok(image.clone());
    }
    let (w, h) = (image.width, image.height);
    let mut out = ImageBuffer::new(w, h);
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = apply_affine(matrix, (x as f64, y as f64));
            let sx = sx.clamp(0.0, max_x);
            let sy = sy.clamp(0.0, max_y);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            let p00 = image.pixel(x0, y0);
            let p10 = image.pixel(x1, y0);
            let p01 = image.pixel(x0, y1);
            let p11 = image.pixel(x1, y1);
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                rgb[c] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
            out.set_pixel(x, y, rgb);
        }
    }
    Ok(out)
}

/// A frame with its timestamp.
#[derive(Debug, Clone)]
pub struct TimedFrame {
    pub time: f64,
    pub image: ImageBuffer,
}

/// Record of one effect playback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Playback {
    pub trigger_time: f64,
    pub start_time: f64,
}

/// Plays the trajectory once per accepted trigger.
///
/// A trigger is consumed by the first frame at or after its time; triggers
/// arriving while a playback is active are dropped, not deferred. Frames
/// outside playback pass through untouched (bitwise). `face_center` gives
/// the zoom center per frame; pixel shifts come from the trajectory's
/// fractional shifts times the frame dimensions.
pub fn apply_effect(
    frames: &[TimedFrame],
    trajectory: &LeanTrajectory,
    trigger_times: &[f64],
    face_center_per_frame: &[(f64, f64)],
) -> Result<(Vec<ImageBuffer>, Vec<Playback>), EffectError> {
    trajectory.validate()?;
    if frames.len() != face_center_per_frame.len() {
        return Err(EffectError::InvalidBuffer(format!(
            "{} frames but {} face centers",
            frames.len(),
            face_center_per_frame.len()
        )));
    }
    if frames.windows(2).any(|w| w[1].time <= w[0].time) {
        return Err(EffectError::InvalidBuffer(
            "frame timestamps must be strictly increasing".into(),
        ));
    }
    let mut triggers: Vec<f64> = trigger_times.to_vec();
    triggers.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let duration = trajectory.duration();

    let mut out = Vec::with_capacity(frames.len());
    let mut playbacks = Vec::new();
    let mut active: Option<f64> = None; // playback start time
    let mut next_trigger = 0usize;

    for (frame, &center) in frames.iter().zip(face_center_per_frame) {
        if let Some(start) = active {
            if frame.time > start + duration {
                active = None;
            }
        }
        // Consume every due trigger; only the first can start a playback.
        while next_trigger < triggers.len() && triggers[next_trigger] <= frame.time {
            if active.is_none() {
                active = Some(frame.time);
                playbacks.push(Playback {
                    trigger_time: triggers[next_trigger],
                    start_time: frame.time,
                });
            }
            next_trigger += 1;
        }
        match active {
            Some(start) => {
                let idx = ((frame.time - start) * trajectory.frame_rate).round() as usize;
                let idx = idx.min(trajectory.samples.len() - 1);
                let s = trajectory.samples[idx];
                let matrix = make_affine(
                    s.scale,
                    s.shift_x * frame.image.width as f64,
                    s.shift_y * frame.image.height as f64,
                    center,
                );
                out.push(warp(&frame.image, &matrix)?);
            }
            None => out.push(frame.image.clone()),
        }
    }
    Ok((out, playbacks))
}

// ---------------------------------------------------------------------------
// Binary PPM (P6) frame files.
// ---------------------------------------------------------------------------

pub fn write_ppm(image: &ImageBuffer, path: &Path) -> Result<(), EffectError> {
    image.validate()?;
    let io_err = |source| EffectError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write!(w, "P6\n{} {}\n255\n", image.width, image.height).map_err(io_err)?;
    w.write_all(&image.pixels).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn read_ppm(path: &Path) -> Result<ImageBuffer, EffectError> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|source| EffectError::Io {
            path: path.display().to_string(),
            source,
        })?
        .read_to_end(&mut bytes)
        .map_err(|source| EffectError::Io {
            path: path.display().to_string(),
            source,
        })?;
    let bad = |message: &str| EffectError::BadPpm {
        path: path.display().to_string(),
        message: message.to_string(),
    };

    // Header: "P6", whitespace/comments, width, height, maxval, single
    // whitespace byte, then raw RGB.
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(bad("not a P6 file"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comment lines.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("missing header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| bad("bad header number"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad("only maxval 255 supported"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing separator after maxval"));
    }
    pos += 1;
    let expected = width * height * 3;
    if bytes.len() - pos != expected {
        return Err(bad("pixel payload has wrong length"));
    }
    let image = ImageBuffer {
        width,
        height,
        pixels: bytes[pos..].to_vec(),
    };
    image.validate()?;
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{BBox, FeatureFrame, NUM_AUS, NUM_GAZE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn track_with_boxes(face_id: &str, fps: f64, boxes: Vec<BBox>) -> FaceTrack {
        let frames: Vec<FeatureFrame> = boxes
            .into_iter()
            .enumerate()
            .map(|(i, bbox)| FeatureFrame {
                time: i as f64 / fps,
                face_id: face_id.into(),
                bbox,
                aus: [0.0; NUM_AUS],
                gaze: [0.0; NUM_GAZE],
                asd_score: 0.0,
                interpolated: false,
            })
            .collect();
        FaceTrack {
            video_id: "v".into(),
            face_id: face_id.into(),
            frame_rate: fps,
            frames,
            speaking_segments: Vec::new(),
        }
    }

    fn event(face: &str, onset: f64) -> TurnEvent {
        TurnEvent {
            new_speaker: face.into(),
            onset,
            previous_speaker: None,
            previous_end: None,
        }
    }

    #[test]
    fn static_face_gives_identity_trajectory() {
        let b = BBox {
            x: 10.0,
            y: 10.0,
            w: 50.0,
            h: 50.0,
        };
        let track = track_with_boxes("A", 10.0, vec![b; 60]);
        let traj = trajectory_from_tracks(&[track], &[event("A", 4.0)], 2.0).unwrap();
        assert!(traj
            .samples
            .iter()
            .all(|s| *s == TrajectorySample::IDENTITY));
        // Lean-in of 21 samples plus a 20-sample mirrored return.
        assert_eq!(traj.samples.len(), 41);
    }

    #[test]
    fn doubling_area_ramps_to_sqrt_two() {
        // Box area grows linearly to 2x over the lead.
        let fps = 10.0;
        let n = 60;
        let boxes: Vec<BBox> = (0..n)
            .map(|i| {
                let t = i as f64 / fps;
                // Area ramp starts at onset - lead = 2.0 s.
                let factor = if t < 2.0 {
                    1.0
                } else {
                    1.0 + (t - 2.0) / 2.0
                };
                BBox {
                    x: 0.0,
                    y: 0.0,
                    w: 50.0 * factor.sqrt(),
                    h: 50.0 * factor.sqrt(),
                }
            })
            .collect();
        let track = track_with_boxes("A", fps, boxes);
        let traj = trajectory_from_tracks(&[track], &[event("A", 4.0)], 2.0).unwrap();
        let peak = traj.samples[20].scale;
        assert!((peak - 2f64.sqrt()).abs() < 1e-9, "peak {peak}");
        assert!(peak < SCALE_MAX);
        // Monotone ramp up then mirrored down.
        assert_eq!(traj.samples[0], TrajectorySample::IDENTITY);
        assert_eq!(*traj.samples.last().unwrap(), TrajectorySample::IDENTITY);
    }

    #[test]
    fn singleton_event_curve_is_its_own_mean() {
        let fps = 5.0;
        let boxes: Vec<BBox> = (0..40)
            .map(|i| BBox {
                x: i as f64 * 0.5,
                y: 0.0,
                w: 50.0 + i as f64,
                h: 50.0 + i as f64,
            })
            .collect();
        let track = track_with_boxes("A", fps, boxes.clone());
        let traj = trajectory_from_tracks(&[track], &[event("A", 6.0)], 2.0).unwrap();
        // Lean-in must equal this event's own ratios exactly.
        let i0 = 20; // (6.0 - 2.0) * 5
        let reference = boxes[i0];
        for (k, s) in traj.samples.iter().take(11).enumerate() {
            let b = boxes[i0 + k];
            let expect_scale =
                ((b.w * b.h) / (reference.w * reference.h)).sqrt().clamp(1.0, SCALE_MAX);
            assert!((s.scale - expect_scale).abs() < 1e-12);
            let (cx, cy) = b.center();
            let (cx0, cy0) = reference.center();
            assert!((s.shift_x - (cx - cx0) / reference.w).abs() < 1e-12);
            assert!((s.shift_y - (cy - cy0) / reference.h).abs() < 1e-12);
        }
    }

    #[test]
    fn no_coverage_is_an_error() {
        let b = BBox {
            x: 0.0,
            y: 0.0,
            w: 10.0,
            h: 10.0,
        };
        let track = track_with_boxes("A", 10.0, vec![b; 10]);
        // Onset at 0.5 s cannot have 2 s of lead.
        assert!(matches!(
            trajectory_from_tracks(&[track], &[event("A", 0.5)], 2.0),
            Err(EffectError::NoUsableEvents)
        ));
    }

    #[test]
    fn affine_identity_and_center_fixpoint() {
        let m = make_affine(1.0, 0.0, 0.0, (3.0, 4.0));
        assert_eq!(m, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

        // Scale 2 about the center: center maps to itself; the output
        // corner samples the source midway between center and corner.
        let center = (8.0, 6.0);
        let m = make_affine(2.0, 0.0, 0.0, center);
        assert_eq!(apply_affine(&m, center), center);
        let (sx, sy) = apply_affine(&m, (0.0, 0.0));
        assert!((sx - 4.0).abs() < 1e-12);
        assert!((sy - 3.0).abs() < 1e-12);
    }

    #[test]
    fn affine_roundtrip_through_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..200 {
            let m = make_affine(
                rng.gen_range(0.5..2.5),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-30.0..30.0),
                (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)),
            );
            let inv = invert_affine(&m);
            for _ in 0..5 {
                let p = (rng.gen_range(-50.0..150.0), rng.gen_range(-50.0..150.0));
                let q = apply_affine(&inv, apply_affine(&m, p));
                assert!((q.0 - p.0).abs() < 1e-9);
                assert!((q.1 - p.1).abs() < 1e-9);
            }
        }
    }

    fn gradient_image(w: usize, h: usize) -> ImageBuffer {
        let mut img = ImageBuffer::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(
                    x,
                    y,
                    [
                        (x * 7 % 256) as u8,
                        (y * 11 % 256) as u8,
                        ((x + y) * 3 % 256) as u8,
                    ],
                );
            }
        }
        img
    }

    fn checkerboard(w: usize, h: usize) -> ImageBuffer {
        let mut img = ImageBuffer::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = if (x / 4 + y / 4) % 2 == 0 { 255 } else { 0 };
                img.set_pixel(x, y, [v, v, v]);
            }
        }
        img
    }

    #[test]
    fn identity_warp_is_bitwise_identity() {
        let img = gradient_image(32, 24);
        let out = warp(&img, &make_affine(1.0, 0.0, 0.0, (16.0, 12.0))).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn integer_translation_matches_shift_oracle() {
        let img = gradient_image(16, 12);
        // Shift content right by 1 pixel: src = p - (1, 0).
        let m = make_affine(1.0, 1.0, 0.0, (0.0, 0.0));
        let out = warp(&img, &m).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                let sx = if x == 0 { 0 } else { x - 1 }; // edge clamp
                assert_eq!(out.pixel(x, y), img.pixel(sx, y), "({x},{y})");
            }
        }
    }

    #[test]
    fn center_zoom_preserves_center_pixel() {
        // Odd dimensions put a pixel exactly at the center.
        let img = checkerboard(33, 25);
        let center = (16.0, 12.0);
        let m = make_affine(2.0, 0.0, 0.0, center);
        let out = warp(&img, &m).unwrap();
        assert_eq!(out.pixel(16, 12), img.pixel(16, 12));
    }

    #[test]
    fn warp_rejects_invalid_buffer() {
        let img = ImageBuffer {
            width: 4,
            height: 4,
            pixels: vec![0; 5],
        };
        assert!(matches!(
            warp(&img, &make_affine(1.0, 0.0, 0.0, (0.0, 0.0))),
            Err(EffectError::InvalidBuffer(_))
        ));
    }

    fn frame_seq(n: usize, fps: f64) -> (Vec<TimedFrame>, Vec<(f64, f64)>) {
        let frames: Vec<TimedFrame> = (0..n)
            .map(|i| TimedFrame {
                time: i as f64 / fps,
                image: gradient_image(20, 16),
            })
            .collect();
        let centers = vec![(10.0, 8.0); n];
        (frames, centers)
    }

    #[test]
    fn no_triggers_passes_through_bitwise() {
        let (frames, centers) = frame_seq(10, 10.0);
        let traj = LeanTrajectory::identity(10.0, 5);
        let (out, playbacks) = apply_effect(&frames, &traj, &[], &centers).unwrap();
        assert!(playbacks.is_empty());
        for (o, f) in out.iter().zip(&frames) {
            assert_eq!(*o, f.image);
        }
    }

    #[test]
    fn identity_trajectory_playback_is_bitwise_passthrough() {
        let (frames, centers) = frame_seq(10, 10.0);
        let traj = LeanTrajectory::identity(10.0, 5);
        let (out, playbacks) = apply_effect(&frames, &traj, &[0.0], &centers).unwrap();
        assert_eq!(playbacks.len(), 1);
        for (o, f) in out.iter().zip(&frames) {
            assert_eq!(*o, f.image);
        }
    }

    #[test]
    fn close_triggers_play_once() {
        let fps = 10.0;
        let (frames, centers) = frame_seq(40, fps);
        // A 2-second non-identity trajectory.
        let mut samples = vec![TrajectorySample::IDENTITY; 21];
        for (i, s) in samples.iter_mut().enumerate().take(20).skip(1) {
            s.scale = 1.0 + 0.3 * (i as f64 / 20.0);
        }
        let traj = LeanTrajectory {
            frame_rate: fps,
            samples,
        };
        traj.validate().unwrap();
        // Two triggers 0.5 s apart; the second lands mid-playback.
        let (_, playbacks) = apply_effect(&frames, &traj, &[0.5, 1.0], &centers).unwrap();
        assert_eq!(playbacks.len(), 1);
        assert_eq!(playbacks[0].trigger_time, 0.5);

        // Triggers after playback ends start a fresh one.
        let (_, playbacks) = apply_effect(&frames, &traj, &[0.5, 3.0], &centers).unwrap();
        assert_eq!(playbacks.len(), 2);
    }

    #[test]
    fn effect_endpoints_are_passthrough() {
        let fps = 10.0;
        let (frames, centers) = frame_seq(40, fps);
        let mut samples = vec![TrajectorySample::IDENTITY; 11];
        for (i, s) in samples.iter_mut().enumerate().take(10).skip(1) {
            s.scale = 1.0 + 0.2 * (i as f64 / 10.0);
            s.shift_x = 0.01 * i as f64;
        }
        let traj = LeanTrajectory {
            frame_rate: fps,
            samples,
        };
        traj.validate().unwrap();
        let (out, playbacks) = apply_effect(&frames, &traj, &[1.0], &centers).unwrap();
        assert_eq!(playbacks.len(), 1);
        // First and last playback frames use the identity endpoints.
        assert_eq!(out[10], frames[10].image);
        assert_eq!(out[20], frames[20].image);
        // A mid-playback frame differs.
        assert_ne!(out[15], frames[15].image);
    }

    #[test]
    fn ppm_roundtrip() {
        let img = gradient_image(13, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ppm");
        write_ppm(&img, &path).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P5\n2 2\n255\nxxxx").unwrap();
        assert!(matches!(read_ppm(&path), Err(EffectError::BadPpm { .. })));
        std::fs::write(&path, b"P6\n2 2\n255\nxxx").unwrap();
        assert!(matches!(read_ppm(&path), Err(EffectError::BadPpm { .. })));
    }
}
