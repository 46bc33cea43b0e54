//! Subcommand argument structs and implementations.

use std::collections::BTreeMap;
use std::error::Error;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use turngrab_core::dataio::{
    interpolate_gaps, match_tracks, parse_feature_stream, read_track, write_track, FaceTrack,
    StreamFormat,
};
use turngrab_core::effect::{
    apply_effect, read_ppm, trajectory_from_tracks, write_ppm, LeanTrajectory, TimedFrame,
};
use turngrab_core::metrics::evaluate;
use turngrab_core::net::{
    load_params, sample_tensor, save_params, train, EpochStat, NetworkConfig, TrainSignal,
};
use turngrab_core::pu::{estimate_prior, Estimator, LossKind, RiskConfig};
use turngrab_core::segmentation::{
    detect_turn_events, extract_positive_samples, extract_unlabeled_samples,
    merge_annotation_labels, read_dataset, smooth_asd, write_dataset, MergeMode, PuRole, Sample,
    SamplerConfig,
};
use turngrab_core::synth::{generate_session, SessionTruth, SynthConfig};
use turngrab_core::tensor::Tensor;
use turngrab_core::tuner::{
    run_study, EpochSink, PruneDecision, SearchSpace,
};

pub type CliResult = Result<(), Box<dyn Error>>;

fn pick<T>(cli: Option<T>, file: Option<T>, default: T) -> T {
    cli.or(file).unwrap_or(default)
}

fn load_config_file<T: serde::de::DeserializeOwned + Default>(
    path: &Option<PathBuf>,
) -> Result<T, Box<dyn Error>> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
            Ok(serde_json::from_str(&text)
                .map_err(|e| format!("bad config {}: {e}", p.display()))?)
        }
        None => Ok(T::default()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Box<dyn Error>> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    Ok(())
}

fn check_video_id(id: &str) -> Result<(), Box<dyn Error>> {
    if id.is_empty() || id.contains("__") || id.contains('/') {
        return Err(format!("invalid video id `{id}` (no `__` or `/` allowed)").into());
    }
    Ok(())
}

fn track_file_name(video: &str, face: &str, part: usize) -> String {
    format!("{video}__{face}__{part:03}.jsonl")
}

/// Loads every `*.jsonl` track in a directory; the video id is the file
/// name's first `__`-separated field.
fn load_tracks(dir: &Path) -> Result<Vec<FaceTrack>, Box<dyn Error>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("cannot read {}: {e}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format!("no .jsonl track files in {}", dir.display()).into());
    }
    let mut tracks = Vec::new();
    for path in paths {
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        let video_id = stem.split("__").next().unwrap_or("unknown").to_string();
        tracks.push(read_track(&video_id, &path)?);
    }
    Ok(tracks)
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Feature CSV (time,face_id,x,y,w,h,au01..au17,gaze_x,gaze_y).
    #[arg(long)]
    features: PathBuf,
    /// ASD CSV (time,face_id,x,y,w,h,asd_score).
    #[arg(long)]
    asd: PathBuf,
    #[arg(long)]
    video_id: String,
    #[arg(long)]
    out: PathBuf,
    /// Longest feature gap (seconds) filled by interpolation; longer gaps
    /// split the track.
    #[arg(long)]
    max_gap: Option<f64>,
    /// JSON file with default option values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
struct IngestFile {
    max_gap: Option<f64>,
}

#[derive(Serialize)]
struct IngestEcho<'a> {
    features: &'a Path,
    asd: &'a Path,
    video_id: &'a str,
    max_gap: f64,
    tracks_written: usize,
}

pub fn run_ingest(args: IngestArgs) -> CliResult {
    check_video_id(&args.video_id)?;
    let file: IngestFile = load_config_file(&args.config)?;
    let max_gap = pick(args.max_gap, file.max_gap, 1.0);

    let features = parse_feature_stream(&args.features, StreamFormat::FeatureCsv)?;
    let asd = parse_feature_stream(&args.asd, StreamFormat::AsdCsv)?;
    let tracks = match_tracks(&args.video_id, &features, &asd)?;

    fs::create_dir_all(&args.out)?;
    let mut written = 0usize;
    for track in &tracks {
        let parts = interpolate_gaps(track, max_gap)?;
        for (i, part) in parts.iter().enumerate() {
            let path = args
                .out
                .join(track_file_name(&part.video_id, &part.face_id, i));
            write_track(part, &path)?;
            written += 1;
        }
    }
    write_json(
        &args.out.join("ingest_config.json"),
        &IngestEcho {
            features: &args.features,
            asd: &args.asd,
            video_id: &args.video_id,
            max_gap,
            tracks_written: written,
        },
    )?;
    println!("wrote {written} track file(s) to {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Directory of track .jsonl files.
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window_len: Option<f64>,
    #[arg(long)]
    l_max: Option<f64>,
    #[arg(long)]
    l_excl: Option<f64>,
    #[arg(long)]
    min_duration: Option<f64>,
    #[arg(long)]
    asd_threshold: Option<f64>,
    #[arg(long)]
    unlabeled_per_minute: Option<f64>,
    /// Ground-truth JSON files (one per video) to attach labels from.
    #[arg(long)]
    truth: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
struct ExtractFile {
    seed: Option<u64>,
    window_len: Option<f64>,
    l_max: Option<f64>,
    l_excl: Option<f64>,
    min_duration: Option<f64>,
    asd_threshold: Option<f64>,
    unlabeled_per_minute: Option<f64>,
}

pub fn run_extract(args: ExtractArgs) -> CliResult {
    let file: ExtractFile = load_config_file(&args.config)?;
    let defaults = SamplerConfig::default();
    let cfg = SamplerConfig {
        window_len: pick(args.window_len, file.window_len, defaults.window_len),
        l_max: pick(args.l_max, file.l_max, defaults.l_max),
        l_excl: pick(args.l_excl, file.l_excl, defaults.l_excl),
        min_duration: pick(args.min_duration, file.min_duration, defaults.min_duration),
        asd_threshold: pick(args.asd_threshold, file.asd_threshold, defaults.asd_threshold),
        unlabeled_per_minute: pick(
            args.unlabeled_per_minute,
            file.unlabeled_per_minute,
            defaults.unlabeled_per_minute,
        ),
        rng_seed: pick(args.seed, file.seed, 0),
    };
    cfg.validate()?;

    let mut truths: BTreeMap<String, SessionTruth> = BTreeMap::new();
    for path in &args.truth {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read truth {}: {e}", path.display()))?;
        let truth: SessionTruth = serde_json::from_str(&text)
            .map_err(|e| format!("bad truth file {}: {e}", path.display()))?;
        truths.insert(truth.video_id.clone(), truth);
    }

    let tracks = load_tracks(&args.tracks)?;
    let mut by_video: BTreeMap<String, Vec<FaceTrack>> = BTreeMap::new();
    for t in tracks {
        by_video.entry(t.video_id.clone()).or_default().push(t);
    }

    let mut samples: Vec<Sample> = Vec::new();
    for (video_id, tracks) in &by_video {
        let smoothed: Vec<FaceTrack> = tracks.iter().map(|t| smooth_asd(t, &cfg)).collect();
        let events = detect_turn_events(&smoothed);
        let mut positives = extract_positive_samples(&smoothed, &events, &cfg);
        let mut unlabeled = extract_unlabeled_samples(&smoothed, &positives, &cfg);
        if let Some(truth) = truths.get(video_id) {
            for s in positives.iter_mut().chain(unlabeled.iter_mut()) {
                s.truth = Some(truth.label_window(&s.face_id, s.t_start, s.t_end));
            }
        }
        log::info!(
            "{video_id}: {} events, {} positive, {} unlabeled",
            events.len(),
            positives.len(),
            unlabeled.len()
        );
        samples.extend(positives);
        samples.extend(unlabeled);
    }

    let manifest = write_dataset(&args.out, &samples, &cfg)?;
    println!(
        "wrote {} samples ({} positive, {} unlabeled) to {}",
        manifest.n_samples,
        manifest.n_positive,
        manifest.n_unlabeled,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    participants: Option<usize>,
    /// Session length in seconds.
    #[arg(long)]
    session_len: Option<f64>,
    /// Number of sessions (seeds increment per session).
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    frame_rate: Option<f64>,
    #[arg(long)]
    intention_lead: Option<f64>,
    #[arg(long)]
    signal_strength: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Also emit feature/ASD CSV files in the ingest schema.
    #[arg(long)]
    emit_csv: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
struct SynthFile {
    seed: Option<u64>,
    participants: Option<usize>,
    session_len: Option<f64>,
    sessions: Option<usize>,
    frame_rate: Option<f64>,
    intention_lead: Option<f64>,
    signal_strength: Option<f64>,
    noise_sigma: Option<f64>,
}

#[derive(Serialize)]
struct SynthEcho {
    base: SynthConfig,
    sessions: usize,
    emit_csv: bool,
}

fn write_session_csv(dir: &Path, tracks: &[FaceTrack]) -> CliResult {
    let video = &tracks[0].video_id;
    let mut feat = fs::File::create(dir.join(format!("{video}__features.csv")))?;
    let mut asd = fs::File::create(dir.join(format!("{video}__asd.csv")))?;
    let au_cols: Vec<String> = (1..=17).map(|i| format!("au{i:02}")).collect();
    writeln!(
        feat,
        "time,face_id,x,y,w,h,{},gaze_x,gaze_y",
        au_cols.join(",")
    )?;
    writeln!(asd, "time,face_id,x,y,w,h,asd_score")?;
    // Row-per-frame across tracks, ordered by (time, face) like a real
    // detector stream.
    let mut rows: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, t) in tracks.iter().enumerate() {
        for (fi, f) in t.frames.iter().enumerate() {
            rows.push((f.time, ti, fi));
        }
    }
    rows.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
    for (_, ti, fi) in rows {
        let f = &tracks[ti].frames[fi];
        let aus: Vec<String> = f.aus.iter().map(|v| format!("{v}")).collect();
        writeln!(
            feat,
            "{},{},{},{},{},{},{},{},{}",
            f.time,
            f.face_id,
            f.bbox.x,
            f.bbox.y,
            f.bbox.w,
            f.bbox.h,
            aus.join(","),
            f.gaze[0],
            f.gaze[1]
        )?;
        writeln!(
            asd,
            "{},{},{},{},{},{},{}",
            f.time, f.face_id, f.bbox.x, f.bbox.y, f.bbox.w, f.bbox.h, f.asd_score
        )?;
    }
    Ok(())
}

pub fn run_synth(args: SynthArgs) -> CliResult {
    let file: SynthFile = load_config_file(&args.config)?;
    let defaults = SynthConfig::default();
    let base = SynthConfig {
        n_participants: pick(args.participants, file.participants, defaults.n_participants),
        session_len: pick(args.session_len, file.session_len, defaults.session_len),
        frame_rate: pick(args.frame_rate, file.frame_rate, defaults.frame_rate),
        intention_lead: pick(
            args.intention_lead,
            file.intention_lead,
            defaults.intention_lead,
        ),
        signal_channels: defaults.signal_channels.clone(),
        signal_strength: pick(
            args.signal_strength,
            file.signal_strength,
            defaults.signal_strength,
        ),
        noise_sigma: pick(args.noise_sigma, file.noise_sigma, defaults.noise_sigma),
        rng_seed: pick(args.seed, file.seed, 0),
    };
    let n_sessions = pick(args.sessions, file.sessions, 1);

    fs::create_dir_all(&args.out)?;
    for s in 0..n_sessions {
        let cfg = SynthConfig {
            rng_seed: base.rng_seed.wrapping_add(s as u64),
            ..base.clone()
        };
        let (tracks, truth) = generate_session(&cfg)?;
        for track in &tracks {
            let path = args
                .out
                .join(track_file_name(&track.video_id, &track.face_id, 0));
            write_track(track, &path)?;
        }
        write_json(
            &args.out.join(format!("{}__truth.json", truth.video_id)),
            &truth,
        )?;
        if args.emit_csv {
            write_session_csv(&args.out, &tracks)?;
        }
        println!("session {} written", truth.video_id);
    }
    write_json(
        &args.out.join("synth_config.json"),
        &SynthEcho {
            base,
            sessions: n_sessions,
            emit_csv: args.emit_csv,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset manifest JSON.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Separate labeled dataset for validation; without it a labeled
    /// fraction of --data is held out.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    estimator: Option<Estimator>,
    /// Class prior; estimated from the merged validation labels if absent.
    #[arg(long)]
    prior: Option<f64>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    conv1_dim: Option<usize>,
    #[arg(long)]
    conv2_dim: Option<usize>,
    #[arg(long)]
    kernel_size: Option<usize>,
    #[arg(long)]
    lstm_layers: Option<usize>,
    #[arg(long)]
    lstm_dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Worker count for parallelizable stages (training itself is
    /// sequential by contract).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
struct TrainFile {
    val_frac: Option<f64>,
    estimator: Option<Estimator>,
    prior: Option<f64>,
    loss: Option<LossKind>,
    seed: Option<u64>,
    conv1_dim: Option<usize>,
    conv2_dim: Option<usize>,
    kernel_size: Option<usize>,
    lstm_layers: Option<usize>,
    lstm_dim: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    data: &'a Path,
    val: Option<&'a Path>,
    val_frac: f64,
    network: &'a NetworkConfig,
    risk: &'a RiskConfig,
    n_positive: usize,
    n_unlabeled: usize,
    n_val: usize,
    best_val_mcc: f64,
}

/// Labeled evaluation pairs after the validation merge; outliers drop out.
fn merged_pairs(samples: &[Sample], seq_len: usize, channels: usize) -> Vec<(Tensor, bool)> {
    samples
        .iter()
        .filter_map(|s| {
            s.truth
                .and_then(|t| merge_annotation_labels(t, MergeMode::ValMerge))
                .map(|label| (sample_tensor(&s.data, seq_len, channels), label))
        })
        .collect()
}

struct TrainData {
    positives: Vec<Tensor>,
    unlabeled: Vec<Tensor>,
    val: Vec<(Tensor, bool)>,
    seq_len: usize,
    channels: usize,
}

/// Assembles train/val tensors from the dataset flags shared by `train`
/// and `tune`.
fn prepare_train_data(
    data: &Path,
    val: &Option<PathBuf>,
    val_frac: f64,
    seed: u64,
) -> Result<TrainData, Box<dyn Error>> {
    let (manifest, samples) = read_dataset(data)?;
    let (seq_len, channels) = (manifest.seq_len, manifest.channels);

    let (train_samples, val_pairs) = match val {
        Some(val_path) => {
            let (val_manifest, val_samples) = read_dataset(val_path)?;
            if val_manifest.seq_len != seq_len || val_manifest.channels != channels {
                return Err("validation dataset shape differs from training data".into());
            }
            (samples, merged_pairs(&val_samples, seq_len, channels))
        }
        None => {
            if !(0.0..1.0).contains(&val_frac) {
                return Err(format!("val_frac {val_frac} outside [0, 1)").into());
            }
            // Hold out a seeded fraction of the labeled samples.
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
            let mut train_samples = Vec::new();
            let mut val_samples = Vec::new();
            for s in samples {
                if s.truth.is_some() && rng.gen::<f64>() < val_frac {
                    val_samples.push(s);
                } else {
                    train_samples.push(s);
                }
            }
            let pairs = merged_pairs(&val_samples, seq_len, channels);
            (train_samples, pairs)
        }
    };

    let mut positives = Vec::new();
    let mut unlabeled = Vec::new();
    for s in &train_samples {
        let tensor = sample_tensor(&s.data, seq_len, channels);
        match s.pu_role {
            PuRole::Positive => positives.push(tensor),
            PuRole::Unlabeled => unlabeled.push(tensor),
        }
    }
    Ok(TrainData {
        positives,
        unlabeled,
        val: val_pairs,
        seq_len,
        channels,
    })
}

fn resolve_risk(
    estimator: Estimator,
    loss: LossKind,
    prior: Option<f64>,
    val: &[(Tensor, bool)],
) -> Result<RiskConfig, Box<dyn Error>> {
    let prior = match prior {
        Some(p) => p,
        None => {
            let labels: Vec<bool> = val.iter().map(|(_, l)| *l).collect();
            estimate_prior(&labels)?
        }
    };
    Ok(RiskConfig::new(prior, loss, estimator)?)
}

pub fn run_train(args: TrainArgs) -> CliResult {
    let file: TrainFile = load_config_file(&args.config)?;
    let seed = pick(args.seed, file.seed, 0);
    let val_frac = pick(args.val_frac, file.val_frac, 0.25);
    let data = prepare_train_data(&args.data, &args.val, val_frac, seed)?;

    let defaults = NetworkConfig::default();
    let net_cfg = NetworkConfig {
        conv1_dim: pick(args.conv1_dim, file.conv1_dim, defaults.conv1_dim),
        conv2_dim: pick(args.conv2_dim, file.conv2_dim, defaults.conv2_dim),
        kernel_size: pick(args.kernel_size, file.kernel_size, defaults.kernel_size),
        lstm_layers: pick(args.lstm_layers, file.lstm_layers, defaults.lstm_layers),
        lstm_dim: pick(args.lstm_dim, file.lstm_dim, defaults.lstm_dim),
        input_channels: data.channels,
        seq_len: data.seq_len,
        learning_rate: pick(args.lr, file.lr, defaults.learning_rate),
        batch_size: pick(args.batch_size, file.batch_size, defaults.batch_size),
        epochs: pick(args.epochs, file.epochs, defaults.epochs),
        init_seed: seed,
    };
    let risk_cfg = resolve_risk(
        pick(args.estimator, file.estimator, Estimator::Nnpu),
        pick(args.loss, file.loss, LossKind::Sigmoid),
        args.prior.or(file.prior),
        &data.val,
    )?;

    let result = train(
        &data.positives,
        &data.unlabeled,
        &data.val,
        &net_cfg,
        &risk_cfg,
        None,
    )?;

    fs::create_dir_all(&args.out)?;
    save_params(&result.params, &args.out.join("model.tgw"))?;
    write_json(&args.out.join("history.json"), &result.history)?;
    let best = result
        .history
        .iter()
        .map(|s| s.val_mcc)
        .fold(f64::NEG_INFINITY, f64::max);
    write_json(
        &args.out.join("train_config.json"),
        &TrainEcho {
            data: &args.data,
            val: args.val.as_deref(),
            val_frac,
            network: &net_cfg,
            risk: &risk_cfg,
            n_positive: data.positives.len(),
            n_unlabeled: data.unlabeled.len(),
            n_val: data.val.len(),
            best_val_mcc: best,
        },
    )?;
    println!(
        "trained {} epochs; best val MCC {best:.4}; model at {}",
        result.history.len(),
        args.out.join("model.tgw").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
struct EvalFile {
    threshold: Option<f64>,
}

#[derive(Serialize)]
struct EvalEcho<'a> {
    data: &'a Path,
    model: &'a Path,
    threshold: f64,
    n_scored: usize,
    n_dropped_outliers: usize,
}

pub fn run_eval(args: EvalArgs) -> CliResult {
    let file: EvalFile = load_config_file(&args.config)?;
    let threshold = pick(args.threshold, file.threshold, 0.0);

    let (manifest, samples) = read_dataset(&args.data)?;
    let params = load_params(&args.model)?;
    if params.config.seq_len != manifest.seq_len
        || params.config.input_channels != manifest.channels
    {
        return Err("model input shape does not match the dataset".into());
    }

    let labeled: Vec<&Sample> = samples.iter().filter(|s| s.truth.is_some()).collect();
    if labeled.is_empty() {
        return Err("dataset has no labeled samples to evaluate".into());
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0usize;
    for s in &labeled {
        match merge_annotation_labels(s.truth.unwrap(), MergeMode::ValMerge) {
            Some(label) => {
                let tensor = sample_tensor(&s.data, manifest.seq_len, manifest.channels);
                scores.push(turngrab_core::net::forward(&params, &tensor)?);
                labels.push(label);
            }
            None => dropped += 1,
        }
    }
    let report = evaluate(&scores, &labels, threshold)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(out, &text)?;
        write_json(
            &out.with_extension("config.json"),
            &EvalEcho {
                data: &args.data,
                model: &args.model,
                threshold,
                n_scored: labels.len(),
                n_dropped_outliers: dropped,
            },
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct TuneArgs {
    /// SearchSpace JSON; omit for the built-in default space.
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Report JSON output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint file; an existing one resumes the study.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    estimator: Option<Estimator>,
    #[arg(long)]
    prior: Option<f64>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
struct TuneFile {
    val_frac: Option<f64>,
    seed: Option<u64>,
    estimator: Option<Estimator>,
    prior: Option<f64>,
    loss: Option<LossKind>,
    batch_size: Option<usize>,
}

pub fn run_tune(args: TuneArgs) -> CliResult {
    let file: TuneFile = load_config_file(&args.config)?;
    let seed = pick(args.seed, file.seed, 0);
    let val_frac = pick(args.val_frac, file.val_frac, 0.25);
    let space: SearchSpace = match &args.space {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read space {}: {e}", path.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| format!("bad search space {}: {e}", path.display()))?
        }
        None => SearchSpace::default(),
    };
    space.validate()?;

    let data = prepare_train_data(&args.data, &args.val, val_frac, seed)?;
    let risk_cfg = resolve_risk(
        pick(args.estimator, file.estimator, Estimator::Nnpu),
        pick(args.loss, file.loss, LossKind::Sigmoid),
        args.prior.or(file.prior),
        &data.val,
    )?;
    let base = NetworkConfig {
        input_channels: data.channels,
        seq_len: data.seq_len,
        batch_size: pick(args.batch_size, file.batch_size, 32),
        init_seed: seed,
        ..NetworkConfig::default()
    };

    let mut train_fn = |config: &NetworkConfig,
                        trial_seed: u64,
                        sink: &mut EpochSink|
     -> Result<(), String> {
        let cfg = NetworkConfig {
            init_seed: trial_seed,
            ..config.clone()
        };
        let mut callback = |stat: &EpochStat| -> TrainSignal {
            match sink(stat.epoch, stat.val_mcc) {
                PruneDecision::Keep => TrainSignal::Continue,
                PruneDecision::Prune => TrainSignal::Stop,
            }
        };
        train(
            &data.positives,
            &data.unlabeled,
            &data.val,
            &cfg,
            &risk_cfg,
            Some(&mut callback),
        )
        .map(|_| ())
        .map_err(|e| e.to_string())
    };

    let report = run_study(&space, &base, &mut train_fn, seed, args.resume.as_deref())?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_json(&args.out, &report)?;
    match report.best_config() {
        Some(best) => println!(
            "best trial {}: MCC {:.4} (conv1={}, conv2={}, layers={}, dim={}, lr={})",
            report.best_trial_id.unwrap(),
            report.best_mcc,
            best.conv1_dim,
            best.conv2_dim,
            best.lstm_layers,
            best.lstm_dim,
            best.learning_rate
        ),
        None => println!("no trials executed"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// effect
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct EffectArgs {
    /// Directory of input .ppm frames (played in name order).
    #[arg(long)]
    frames: PathBuf,
    /// Trajectory JSON {frame_rate, samples:[{scale,shift_x,shift_y}]}.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Derive the trajectory from these track files instead.
    #[arg(long)]
    tracks: Option<PathBuf>,
    /// Lead window (seconds) when deriving from tracks.
    #[arg(long)]
    lead: Option<f64>,
    /// Where to save a derived trajectory.
    #[arg(long)]
    save_trajectory: Option<PathBuf>,
    /// Triggers JSON {frame_rate, triggers:[..], face_center?}.
    #[arg(long)]
    triggers: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
struct EffectFile {
    lead: Option<f64>,
}

#[derive(Deserialize)]
struct TriggerSpec {
    frame_rate: f64,
    triggers: Vec<f64>,
    /// Zoom center; the frame center when absent.
    face_center: Option<(f64, f64)>,
}

#[derive(Serialize)]
struct EffectEcho<'a> {
    frames: &'a Path,
    trajectory_source: String,
    triggers: &'a Path,
    lead: f64,
    n_frames: usize,
    playbacks: usize,
}

pub fn run_effect(args: EffectArgs) -> CliResult {
    let file: EffectFile = load_config_file(&args.config)?;
    let lead = pick(args.lead, file.lead, 2.0);

    let (trajectory, source) = match (&args.trajectory, &args.tracks) {
        (Some(path), _) => (LeanTrajectory::load(path)?, path.display().to_string()),
        (None, Some(dir)) => {
            let tracks = load_tracks(dir)?;
            let cfg = SamplerConfig::default();
            let smoothed: Vec<FaceTrack> = tracks.iter().map(|t| smooth_asd(t, &cfg)).collect();
            let events = detect_turn_events(&smoothed);
            let traj = trajectory_from_tracks(&smoothed, &events, lead)?;
            (traj, format!("derived from {}", dir.display()))
        }
        (None, None) => {
            return Err("either --trajectory or --tracks is required".into());
        }
    };
    if let Some(path) = &args.save_trajectory {
        trajectory.save(path)?;
    }

    let trigger_text = fs::read_to_string(&args.triggers)
        .map_err(|e| format!("cannot read triggers {}: {e}", args.triggers.display()))?;
    let spec: TriggerSpec = serde_json::from_str(&trigger_text)
        .map_err(|e| format!("bad triggers file {}: {e}", args.triggers.display()))?;
    if spec.frame_rate <= 0.0 {
        return Err("trigger frame_rate must be positive".into());
    }

    let mut frame_paths: Vec<PathBuf> = fs::read_dir(&args.frames)
        .map_err(|e| format!("cannot read {}: {e}", args.frames.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "ppm"))
        .collect();
    frame_paths.sort();
    if frame_paths.is_empty() {
        return Err(format!("no .ppm frames in {}", args.frames.display()).into());
    }

    let mut frames = Vec::with_capacity(frame_paths.len());
    let mut centers = Vec::with_capacity(frame_paths.len());
    for (i, path) in frame_paths.iter().enumerate() {
        let image = read_ppm(path)?;
        let center = spec
            .face_center
            .unwrap_or((image.width as f64 / 2.0, image.height as f64 / 2.0));
        frames.push(TimedFrame {
            time: i as f64 / spec.frame_rate,
            image,
        });
        centers.push(center);
    }

    let (out_frames, playbacks) = apply_effect(&frames, &trajectory, &spec.triggers, &centers)?;
    fs::create_dir_all(&args.out)?;
    for (path, image) in frame_paths.iter().zip(&out_frames) {
        let name = path.file_name().unwrap();
        write_ppm(image, &args.out.join(name))?;
    }
    write_json(&args.out.join("playbacks.json"), &playbacks)?;
    write_json(
        &args.out.join("effect_config.json"),
        &EffectEcho {
            frames: &args.frames,
            trajectory_source: source,
            triggers: &args.triggers,
            lead,
            n_frames: out_frames.len(),
            playbacks: playbacks.len(),
        },
    )?;
    println!(
        "wrote {} frames ({} playback(s)) to {}",
        out_frames.len(),
        playbacks.len(),
        args.out.display()
    );
    Ok(())
}
