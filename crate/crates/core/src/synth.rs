//! Synthetic sessions with known turn-grabbing ground truth.
//!
//! A floor-passing Markov process produces one speaker at a time with
//! exponential utterance lengths. Before each takeover the incoming speaker
//! enters an intention state during which the configured signal channels
//! ramp up; every channel carries Gaussian noise. The resulting tracks feed
//! the real extraction pipeline, so the learning stack can be validated
//! against a fully supervised oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{BBox, FaceTrack, FeatureFrame, NUM_AUS, NUM_CHANNELS};
use crate::segmentation::{
    detect_turn_events, extract_positive_samples, extract_unlabeled_samples, smooth_asd,
    Sample, SamplerConfig, TruthLabel,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

/// Generator parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_participants: usize,
    /// Session length in seconds.
    pub session_len: f64,
    pub frame_rate: f64,
    /// Mean intention lead before a takeover; actual leads are drawn
    /// uniformly in [0.75, 1.25] times this.
    pub intention_lead: f64,
    /// Channels (0..19) carrying the intention ramp.
    pub signal_channels: Vec<usize>,
    /// Ramp height added to signal channels at the onset.
    pub signal_strength: f64,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_participants: 4,
            session_len: 300.0,
            frame_rate: 25.0,
            intention_lead: 3.0,
            // AU channels 1-4 plus both gaze channels.
            signal_channels: vec![0, 1, 2, 3, NUM_AUS, NUM_AUS + 1],
            signal_strength: 1.0,
            noise_sigma: 0.5,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_participants < 2 {
            return Err(SynthError::InvalidConfig(
                "need at least 2 participants".into(),
            ));
        }
        if self.signal_channels.is_empty() {
            return Err(SynthError::InvalidConfig("signal_channels empty".into()));
        }
        if self.signal_channels.iter().any(|&c| c >= NUM_CHANNELS) {
            return Err(SynthError::InvalidConfig(format!(
                "signal channel out of range 0..{NUM_CHANNELS}"
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(SynthError::InvalidConfig("noise_sigma negative".into()));
        }
        if !(self.session_len > 0.0 && self.frame_rate > 0.0 && self.intention_lead > 0.0) {
            return Err(SynthError::InvalidConfig(
                "durations and rates must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A labeled time interval of one face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthInterval {
    pub face_id: String,
    pub start: f64,
    pub end: f64,
    pub label: TruthLabel,
}

/// Ground truth for one generated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SessionTruth {
    pub video_id: String,
    /// Intention intervals (positive) and speaking intervals (outlier);
    /// uncovered time is negative.
    pub intervals: Vec<TruthInterval>,
    /// Scripted takeovers: (face_id, speech onset).
    pub takeovers: Vec<(String, f64)>,
}

impl SessionTruth {
    /// Labels a window by overlap: outlier if the face speaks during more
    /// than half of it, else positive if intention covers at least half,
    /// else negative.
    pub fn label_window(&self, face_id: &str, t_start: f64, t_end: f64) -> TruthLabel {
        let window = t_end - t_start;
        let overlap = |label: TruthLabel| -> f64 {
            self.intervals
                .iter()
                .filter(|iv| iv.face_id == face_id && iv.label == label)
                .map(|iv| (iv.end.min(t_end) - iv.start.max(t_start)).max(0.0))
                .sum()
        };
        if overlap(TruthLabel::Outlier) > 0.5 * window {
            TruthLabel::Outlier
        } else if overlap(TruthLabel::Positive) >= 0.5 * window {
            TruthLabel::Positive
        } else {
            TruthLabel::Negative
        }
    }
}

/// Standard normal via Box-Muller, driven by the supplied stream.
fn randn(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Exponential with the given mean.
fn rand_exp(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -mean * u.ln()
}

#[derive(Debug, Clone)]
struct Utterance {
    speaker: usize,
    start: f64,
    end: f64,
}

/// One speaker at a time: exponential utterance lengths (clamped to
/// [2, 15] s), handover gaps of 0.5-1.5 s, next speaker uniform among the
/// others.
fn build_schedule(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Utterance> {
    let mut schedule = Vec::new();
    let mut t = rng.gen_range(0.5..1.5);
    let mut speaker = rng.gen_range(0..cfg.n_participants);
    // Stop once no 2-second utterance fits before the session end.
    while t + 2.0 <= cfg.session_len {
        let len = rand_exp(rng, 6.0)
            .clamp(2.0, 15.0)
            .min(cfg.session_len - t);
        schedule.push(Utterance {
            speaker,
            start: t,
            end: t + len,
        });
        t = t + len + rng.gen_range(0.5..1.5);
        let step = rng.gen_range(1..cfg.n_participants);
        speaker = (speaker + step) % cfg.n_participants;
    }
    schedule
}

fn face_id(k: usize) -> String {
    format!("p{k:02}")
}

fn participant_bbox(k: usize) -> BBox {
    BBox {
        x: 40.0 + 320.0 * (k % 3) as f64,
        y: 40.0 + 260.0 * (k / 3) as f64,
        w: 200.0,
        h: 200.0,
    }
}

const AU_BASELINE: f64 = 1.0;
const ASD_MARGIN: f64 = 2.0;
const ASD_NOISE: f64 = 0.25;

/// Generates one session: per-face tracks with features and ASD scores,
/// plus the ground-truth intervals and scripted takeovers.
pub fn generate_session(cfg: &SynthConfig) -> Result<(Vec<FaceTrack>, SessionTruth), SynthError> {
    cfg.validate()?;
    let video_id = format!("synth-{}", cfg.rng_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    let schedule = build_schedule(cfg, &mut rng);

    // Intention windows: one per utterance, for its speaker, ending at the
    // utterance start.
    let mut intentions: Vec<(usize, f64, f64)> = Vec::new();
    for utt in &schedule {
        let lead = rng.gen_range(0.75 * cfg.intention_lead..1.25 * cfg.intention_lead);
        intentions.push((utt.speaker, (utt.start - lead).max(0.0), utt.start));
    }

    let n_frames = (cfg.session_len * cfg.frame_rate).floor() as usize;
    let mut tracks = Vec::with_capacity(cfg.n_participants);
    for k in 0..cfg.n_participants {
        let own_utterances: Vec<&Utterance> =
            schedule.iter().filter(|u| u.speaker == k).collect();
        let own_intentions: Vec<&(usize, f64, f64)> =
            intentions.iter().filter(|(s, _, _)| *s == k).collect();
        let bbox = participant_bbox(k);
        let mut frames = Vec::with_capacity(n_frames);
        for i in 0..n_frames {
            let t = i as f64 / cfg.frame_rate;
            let mut channels = [0.0f64; NUM_CHANNELS];
            for (c, slot) in channels.iter_mut().enumerate() {
                let baseline = if c < NUM_AUS { AU_BASELINE } else { 0.0 };
                *slot = baseline + cfg.noise_sigma * randn(&mut rng);
            }
            // Additive intention ramp on the signal channels.
            for &&(_, lo, hi) in &own_intentions {
                if t >= lo && t < hi && hi > lo {
                    let ramp = cfg.signal_strength * (t - lo) / (hi - lo);
                    for &c in &cfg.signal_channels {
                        channels[c] += ramp;
                    }
                }
            }
            let mut aus = [0.0; NUM_AUS];
            for (c, au) in aus.iter_mut().enumerate() {
                *au = channels[c].clamp(0.0, 5.0);
            }
            let gaze = [channels[NUM_AUS], channels[NUM_AUS + 1]];

            let speaking = own_utterances.iter().any(|u| u.start <= t && t < u.end);
            let asd_score = if speaking {
                ASD_MARGIN + ASD_NOISE * randn(&mut rng)
            } else {
                -ASD_MARGIN + ASD_NOISE * randn(&mut rng)
            };
            frames.push(FeatureFrame {
                time: t,
                face_id: face_id(k),
                bbox,
                aus,
                gaze,
                asd_score,
                interpolated: false,
            });
        }
        tracks.push(FaceTrack {
            video_id: video_id.clone(),
            face_id: face_id(k),
            frame_rate: cfg.frame_rate,
            frames,
            speaking_segments: Vec::new(),
        });
    }

    let mut intervals = Vec::new();
    for &(speaker, lo, hi) in &intentions {
        if hi > lo {
            intervals.push(TruthInterval {
                face_id: face_id(speaker),
                start: lo,
                end: hi,
                label: TruthLabel::Positive,
            });
        }
    }
    for utt in &schedule {
        intervals.push(TruthInterval {
            face_id: face_id(utt.speaker),
            start: utt.start,
            end: utt.end,
            label: TruthLabel::Outlier,
        });
    }
    let takeovers = schedule
        .iter()
        .map(|u| (face_id(u.speaker), u.start))
        .collect();

    Ok((
        tracks,
        SessionTruth {
            video_id,
            intervals,
            takeovers,
        },
    ))
}

/// PN/PU datasets carved from generated sessions.
#[derive(Debug, Clone, Default)]
pub struct PuDataset {
    pub positives: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    /// Held-out, fully labeled split (roughly a quarter of all samples).
    pub test: Vec<Sample>,
}

/// Runs the real extraction pipeline over generated sessions, attaches the
/// hidden truth to every sample, and holds out a labeled test split.
pub fn make_pu_dataset(
    sessions: &[(Vec<FaceTrack>, SessionTruth)],
    cfg: &SamplerConfig,
) -> PuDataset {
    let mut all: Vec<Sample> = Vec::new();
    for (tracks, truth) in sessions {
        let smoothed: Vec<FaceTrack> = tracks.iter().map(|t| smooth_asd(t, cfg)).collect();
        let events = detect_turn_events(&smoothed);
        let mut positives = extract_positive_samples(&smoothed, &events, cfg);
        let mut unlabeled = extract_unlabeled_samples(&smoothed, &positives, cfg);
        for s in positives.iter_mut().chain(unlabeled.iter_mut()) {
            s.truth = Some(truth.label_window(&s.face_id, s.t_start, s.t_end));
        }
        all.extend(positives);
        all.extend(unlabeled);
    }

    // Seeded hold-out of about a quarter of the samples.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(2));
    let mut out = PuDataset::default();
    for s in all {
        if rng.gen::<f64>() < 0.25 {
            out.test.push(s);
        } else {
            match s.pu_role {
                crate::segmentation::PuRole::Positive => out.positives.push(s),
                crate::segmentation::PuRole::Unlabeled => out.unlabeled.push(s),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::PuRole;

    fn quiet_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            session_len: 120.0,
            frame_rate: 10.0,
            rng_seed: seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn silent_generator_is_constant_baseline() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            signal_strength: 0.0,
            ..quiet_cfg(1)
        };
        let (tracks, _) = generate_session(&cfg).unwrap();
        for track in &tracks {
            for f in &track.frames {
                assert!(f.aus.iter().all(|&v| v == AU_BASELINE));
                assert!(f.gaze.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let cfg = quiet_cfg(7);
        let a = generate_session(&cfg).unwrap();
        let b = generate_session(&cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn one_speaker_at_a_time() {
        for seed in 0..5 {
            let (_, truth) = generate_session(&quiet_cfg(seed)).unwrap();
            let speech: Vec<&TruthInterval> = truth
                .intervals
                .iter()
                .filter(|iv| iv.label == TruthLabel::Outlier)
                .collect();
            for (i, a) in speech.iter().enumerate() {
                for b in speech.iter().skip(i + 1) {
                    assert!(
                        a.end <= b.start || b.end <= a.start,
                        "overlap: {a:?} vs {b:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn pipeline_recovers_scripted_takeovers() {
        let cfg = SynthConfig {
            noise_sigma: 0.1,
            ..quiet_cfg(3)
        };
        let (tracks, truth) = generate_session(&cfg).unwrap();
        let sampler = SamplerConfig::default();
        let smoothed: Vec<FaceTrack> = tracks.iter().map(|t| smooth_asd(t, &sampler)).collect();
        let events = detect_turn_events(&smoothed);
        let period = 1.0 / cfg.frame_rate;
        let recovered = truth
            .takeovers
            .iter()
            .filter(|(face, onset)| {
                events
                    .iter()
                    .any(|e| e.new_speaker == *face && (e.onset - onset).abs() <= 2.0 * period)
            })
            .count();
        assert!(
            recovered as f64 >= 0.95 * truth.takeovers.len() as f64,
            "recovered {recovered} of {}",
            truth.takeovers.len()
        );
    }

    #[test]
    fn empty_sessions_give_empty_datasets() {
        let ds = make_pu_dataset(&[], &SamplerConfig::default());
        assert!(ds.positives.is_empty() && ds.unlabeled.is_empty() && ds.test.is_empty());
    }

    #[test]
    fn positives_carry_positive_truth_when_lead_covers_sampling_window() {
        // Sampler windows live in [onset-6, onset-0.5]; leads of at least
        // 6 s (0.75 * 8) cover every window.
        let synth_cfg = SynthConfig {
            intention_lead: 8.0,
            session_len: 240.0,
            frame_rate: 10.0,
            rng_seed: 11,
            ..SynthConfig::default()
        };
        let sampler = SamplerConfig {
            l_max: 6.0,
            rng_seed: 11,
            ..SamplerConfig::default()
        };
        let session = generate_session(&synth_cfg).unwrap();
        let ds = make_pu_dataset(&[session], &sampler);
        let total = ds.positives.len()
            + ds
                .test
                .iter()
                .filter(|s| s.pu_role == PuRole::Positive)
                .count();
        assert!(total > 5, "too few positives generated: {total}");
        let good = ds
            .positives
            .iter()
            .chain(ds.test.iter().filter(|s| s.pu_role == PuRole::Positive))
            .filter(|s| s.truth == Some(TruthLabel::Positive))
            .count();
        assert!(
            good as f64 >= 0.9 * total as f64,
            "{good} of {total} positives carry positive truth"
        );
    }

    #[test]
    fn unlabeled_contains_both_truth_classes() {
        let synth_cfg = SynthConfig {
            session_len: 240.0,
            frame_rate: 10.0,
            rng_seed: 13,
            ..SynthConfig::default()
        };
        // intention_lead (3 s) < l_max (10 s): U straddles both classes.
        let sampler = SamplerConfig {
            unlabeled_per_minute: 6.0,
            rng_seed: 13,
            ..SamplerConfig::default()
        };
        let session = generate_session(&synth_cfg).unwrap();
        let ds = make_pu_dataset(&[session], &sampler);
        let n_pos = ds
            .unlabeled
            .iter()
            .filter(|s| s.truth == Some(TruthLabel::Positive))
            .count();
        let n_neg = ds
            .unlabeled
            .iter()
            .filter(|s| s.truth == Some(TruthLabel::Negative))
            .count();
        assert!(n_pos > 0, "no positive-truth unlabeled samples");
        assert!(n_neg > 0, "no negative-truth unlabeled samples");
    }

    #[test]
    fn unlabeled_positive_fraction_matches_enumeration_oracle() {
        // The rejection sampler draws uniformly over admissible window
        // starts, so the positive fraction of U must match an exhaustive
        // enumeration of that domain, within 3 binomial standard errors
        // aggregated over seeds.
        let mut drawn_pos = 0usize;
        let mut drawn_total = 0usize;
        let mut expected_sum = 0.0;
        let mut expected_n = 0usize;
        for seed in 0..6 {
            let synth_cfg = SynthConfig {
                session_len: 180.0,
                frame_rate: 10.0,
                rng_seed: seed,
                ..SynthConfig::default()
            };
            let sampler = SamplerConfig {
                unlabeled_per_minute: 4.0,
                rng_seed: seed,
                ..SamplerConfig::default()
            };
            let (tracks, truth) = generate_session(&synth_cfg).unwrap();
            let smoothed: Vec<FaceTrack> =
                tracks.iter().map(|t| smooth_asd(t, &sampler)).collect();
            let events = detect_turn_events(&smoothed);
            let positives = extract_positive_samples(&smoothed, &events, &sampler);
            let unlabeled = extract_unlabeled_samples(&smoothed, &positives, &sampler);
            for s in &unlabeled {
                drawn_total += 1;
                if truth.label_window(&s.face_id, s.t_start, s.t_end) == TruthLabel::Positive {
                    drawn_pos += 1;
                }
            }
            // Enumerate the admissible domain.
            for track in &smoothed {
                let n_frames =
                    crate::segmentation::window_frames(sampler.window_len, track.frame_rate);
                let own_pos: Vec<(f64, f64)> = positives
                    .iter()
                    .filter(|p| p.face_id == track.face_id)
                    .map(|p| (p.t_start, p.t_end))
                    .collect();
                for idx in 0..=track.frames.len().saturating_sub(n_frames) {
                    let t0 = track.frames[idx].time;
                    let t1 = t0 + n_frames as f64 / track.frame_rate;
                    let speaking = track
                        .speaking_segments
                        .iter()
                        .any(|&(s, e)| s < t1 && t0 < e);
                    let in_pos = own_pos.iter().any(|&(s, e)| s < t1 && t0 < e);
                    if !speaking && !in_pos {
                        expected_n += 1;
                        if truth.label_window(&track.face_id, t0, t1) == TruthLabel::Positive {
                            expected_sum += 1.0;
                        }
                    }
                }
            }
        }
        let p_expected = expected_sum / expected_n as f64;
        let p_drawn = drawn_pos as f64 / drawn_total as f64;
        let se = (p_expected * (1.0 - p_expected) / drawn_total as f64).sqrt();
        assert!(
            (p_drawn - p_expected).abs() <= 3.0 * se,
            "drawn {p_drawn:.4} vs expected {p_expected:.4} (se {se:.4}, n {drawn_total})"
        );
    }
}
