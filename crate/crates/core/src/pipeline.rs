//! Stage drivers behind the command-line tool. Every stage reads and writes
//! files under one output directory:
//!
//! ```text
//! <out>/dataset/manifest.json, clips/<id>/...
//! <out>/checkpoints/{motion,video}.ckpt
//! <out>/reports/{filter_report,eval_<source>}.json, {motion,video}_train.jsonl
//! <out>/generated/<source>/manifest.json, <clip>/...
//! <out>/viz/...
//! ```
//!
//! Stage seeds are derived from the root seed by stage name.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::camera::{plucker_embedding, PluckerMap};
use crate::codec::{color_wheel, compute_scale_factor, encode_flow, rgb_to_flow, EncodedFlow, DEFAULT_SCALE_PERCENTILE};
use crate::dataset::{frame_name, generate_dataset, testbed_clip, DatasetConfig, DatasetMode};
use crate::error::{Error, Result};
use crate::estimate::estimate_flow_naive;
use crate::filter::{
    cycle_error_map, filter_dataset, pooled_clip_score, ClipConsistency, ConsistencyReport, FilterReport, ReferenceValues,
    DEFAULT_FILTER_PERCENTILE,
};
use crate::flow::FlowField;
use crate::fm::checkpoint;
use crate::fm::two_stage::{
    encoded_to_tensor, frame_to_tensor, generate_video, plucker_tensor, two_stage_generate, video_condition, MotionMode,
    TwoStageConfig, PLUCKER_CHANNELS, VIDEO_COND_CHANNELS,
};
use crate::fm::{train, ConvNet, FMConfig, NetConfig, TrainItem, TrainRecord, TrainingSet};
use crate::io::{ensure_dir, read_encoded, read_flow, read_frame, read_json, write_encoded, write_flow, write_frame, write_json, write_png};
use crate::manifest::{DatasetManifest, ManifestEntry, Source, MANIFEST_FILE};
use crate::metrics::{add_noise_snr, mean_rotation_error, motion_error, motion_error_per_frame, rotation_errors, MetricReport, RobustnessRow, SNR_LEVELS_DB};
use crate::render::{Frame, FrameSequence};
use crate::seed::derive_seed;
use crate::stats::check_percentile;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    /// Optimiser steps per generator.
    pub steps: usize,
    /// Leading share of `steps` spent on real data only.
    pub pretrain_fraction: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mixture_ratio: f64,
    pub grad_clip: Option<f64>,
    pub hidden: usize,
    pub ctrl_hidden: usize,
    pub blocks: usize,
    /// Lower clamp on t in the velocity head of both generators. A large
    /// floor moves training weight away from the near-data end, where the
    /// condition matters least.
    pub t_floor: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            steps: 200,
            pretrain_fraction: 0.25,
            batch_size: 8,
            learning_rate: 3e-3,
            mixture_ratio: 0.5,
            grad_clip: Some(1.0),
            hidden: 24,
            ctrl_hidden: 12,
            blocks: 2,
            t_floor: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowSource {
    /// Stage 2 driven by the checker testbed's analytic flow.
    GroundTruth,
    /// Stage 1 samples drive stage 2.
    Stage1,
}

impl FlowSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            FlowSource::GroundTruth => "ground-truth",
            FlowSource::Stage1 => "stage1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateSettings {
    /// Number of dataset clips whose conditioning drives stage 1.
    pub clips: usize,
    /// Start each generated video from the reference clip's first frame.
    pub anchor: bool,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        Self { clips: 2, anchor: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub mode: DatasetMode,
    pub dataset: DatasetConfig,
    pub codec_percentile: f64,
    pub filter_percentile: f64,
    pub integrator_steps: usize,
    pub train: TrainSettings,
    pub generate: GenerateSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("run"),
            seed: 0,
            mode: DatasetMode::Camera,
            dataset: DatasetConfig::default(),
            codec_percentile: DEFAULT_SCALE_PERCENTILE,
            filter_percentile: DEFAULT_FILTER_PERCENTILE,
            integrator_steps: 100,
            train: TrainSettings::default(),
            generate: GenerateSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        check_percentile(self.codec_percentile)?;
        check_percentile(self.filter_percentile)?;
        self.dataset.validate()?;
        if self.integrator_steps < 1 {
            return Err(Error::invalid("integrator needs at least one step"));
        }
        if !(0.0..=1.0).contains(&self.train.pretrain_fraction) {
            return Err(Error::invalid("pretrain_fraction outside [0, 1]"));
        }
        self.net_config(1, 0).validate()?;
        self.fm_config(3, 0).validate()
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out.join("checkpoints")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("reports")
    }

    pub fn generated_dir(&self, source: FlowSource) -> PathBuf {
        self.out.join("generated").join(source.as_str())
    }

    pub fn viz_dir(&self) -> PathBuf {
        self.out.join("viz")
    }

    fn shape(&self) -> [usize; 3] {
        [3, self.dataset.height, self.dataset.width]
    }

    fn fm_config(&self, channels: usize, seed: u64) -> FMConfig {
        let t = &self.train;
        let pretrain = (t.steps as f64 * t.pretrain_fraction).round() as usize;
        FMConfig {
            shape: [channels, self.dataset.height, self.dataset.width],
            integrator_steps: self.integrator_steps,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            mixture_ratio: t.mixture_ratio,
            pretrain_steps: pretrain,
            finetune_steps: t.steps - pretrain,
            grad_clip: t.grad_clip,
            seed,
        }
    }

    fn net_config(&self, cond_channels: usize, seed: u64) -> NetConfig {
        NetConfig {
            t_floor: self.train.t_floor,
            hidden: self.train.hidden,
            ctrl_hidden: self.train.ctrl_hidden,
            blocks: self.train.blocks,
            init_seed: seed,
            ..NetConfig::new(3, cond_channels)
        }
    }
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPrerequisite(format!("{} not found ({hint})", path.display())))
    }
}

fn load_dataset(cfg: &PipelineConfig) -> Result<(PathBuf, DatasetManifest)> {
    let root = cfg.dataset_dir();
    let path = root.join(MANIFEST_FILE);
    require(&path, "run gen-dataset first")?;
    let manifest = DatasetManifest::load(&path)?;
    Ok((root, manifest))
}

fn dataset_mode(manifest: &DatasetManifest) -> Result<DatasetMode> {
    DatasetMode::parse(manifest.mode.as_deref().unwrap_or("camera"))
}

fn scale_factor(manifest: &DatasetManifest) -> Result<f64> {
    manifest
        .scale_factor_px
        .ok_or_else(|| Error::MissingPrerequisite("dataset has no scale factor (run encode first)".into()))
}

fn read_flows(root: &Path, paths: &[String]) -> Result<Vec<FlowField>> {
    paths.iter().map(|p| read_flow(&root.join(p))).collect()
}

fn read_frames(root: &Path, paths: &[String]) -> Result<FrameSequence> {
    let frames = paths.iter().map(|p| read_frame(&root.join(p))).collect::<Result<Vec<_>>>()?;
    Ok(FrameSequence { frames })
}

fn write_jsonl(path: &Path, records: &[TrainRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_gen_dataset(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    generate_dataset(&cfg.dataset_dir(), cfg.mode, &cfg.dataset, derive_seed(cfg.seed, "gen-dataset"))
}

/// Sets the dataset scale factor from the kept forward flows and writes one
/// encoded PNG per flow.
pub fn cmd_encode(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let (root, mut manifest) = load_dataset(cfg)?;
    let mut all = Vec::new();
    for e in manifest.kept() {
        all.extend(read_flows(&root, &e.flow_paths)?);
    }
    let s_f = compute_scale_factor(&all, cfg.codec_percentile)?;
    manifest.scale_factor_px = Some(s_f);
    for entry in manifest.entries.iter_mut().filter(|e| e.kept) {
        entry.encoded_paths.clear();
        for (n, rel) in entry.flow_paths.iter().enumerate() {
            let flow = read_flow(&root.join(rel))?;
            let enc_rel = format!("clips/{}/enc_{n:03}.png", entry.clip_id);
            write_encoded(&root.join(&enc_rel), &encode_flow(&flow, s_f)?)?;
            entry.encoded_paths.push(enc_rel);
        }
    }
    manifest.save(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Scores unscored real clips, marks outliers at the configured percentile
/// and writes `filter_report.json`.
pub fn cmd_filter(cfg: &PipelineConfig) -> Result<FilterReport> {
    cfg.validate()?;
    let (root, mut manifest) = load_dataset(cfg)?;
    let mut per_clip = Vec::new();
    for entry in manifest.entries.iter_mut().filter(|e| e.source == Source::Real) {
        let fwd = read_flows(&root, &entry.flow_paths)?;
        let bwd = read_flows(&root, &entry.backward_flow_paths)?;
        if fwd.len() != bwd.len() {
            return Err(Error::Format {
                path: root.join(MANIFEST_FILE),
                reason: format!("clip {} has unequal forward/backward flow counts", entry.clip_id),
            });
        }
        let maps = fwd.iter().zip(&bwd).map(|(f, b)| cycle_error_map(f, b)).collect::<Result<Vec<_>>>()?;
        let scored = match pooled_clip_score(&maps) {
            Ok(s) => Some(s),
            Err(Error::Unscorable) => None,
            Err(e) => return Err(e),
        };
        if entry.error.is_none() {
            entry.error = scored.map(|(score, _)| score);
        }
        if let (Some(error), Some((_, pixels))) = (entry.error, scored) {
            per_clip.push(ClipConsistency {
                clip_id: entry.clip_id.clone(),
                error,
                pixels,
            });
        }
    }
    let (filtered, threshold) = filter_dataset(&manifest, cfg.filter_percentile)?;
    filtered.save(&root.join(MANIFEST_FILE))?;
    let kept = filtered.kept().count();
    let report = FilterReport {
        percentile: cfg.filter_percentile,
        threshold_px: threshold,
        kept,
        removed: filtered.entries.len() - kept,
        consistency: ConsistencyReport::new(per_clip)?,
        reference: ReferenceValues::default(),
    };
    let reports = cfg.report_dir();
    ensure_dir(&reports)?;
    write_json(&reports.join("filter_report.json"), &report)?;
    Ok(report)
}

fn plucker_maps(root: &Path, entry: &ManifestEntry) -> Result<Option<Vec<PluckerMap>>> {
    let Some(rel) = &entry.trajectory_path else {
        return Ok(None);
    };
    let traj: Trajectory = read_json(&root.join(rel))?;
    let maps = traj
        .poses()
        .map(|p| plucker_embedding(&traj.intrinsics, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(maps))
}

/// Stage-1 training items from kept clips: encoded flow samples,
/// Plücker-conditioned when `with_plucker` and a trajectory is available.
pub fn motion_training_set(root: &Path, manifest: &DatasetManifest, with_plucker: bool) -> Result<TrainingSet> {
    let mut set = TrainingSet::default();
    for entry in manifest.kept() {
        let maps = if with_plucker { plucker_maps(root, entry)? } else { None };
        for (n, rel) in entry.encoded_paths.iter().enumerate() {
            let sample = encoded_to_tensor(&read_encoded(&root.join(rel))?);
            let cond = match &maps {
                Some(m) => Some(plucker_tensor(&m[n], &m[n + 1])?),
                None => None,
            };
            let item = TrainItem { sample, cond };
            match entry.source {
                Source::Real => set.real.push(item),
                Source::Synthetic => set.synthetic.push(item),
            }
        }
    }
    Ok(set)
}

/// Stage-2 training items: every frame of every kept clip, conditioned as
/// during generation (first-frame flag, or encoded flow plus warped
/// previous frame).
pub fn video_training_set(root: &Path, manifest: &DatasetManifest, s_f: f64) -> Result<TrainingSet> {
    let mut set = TrainingSet::default();
    for entry in manifest.kept() {
        let frames = read_frames(root, &entry.frame_paths)?;
        let encoded = entry
            .encoded_paths
            .iter()
            .map(|p| read_encoded(&root.join(p)))
            .collect::<Result<Vec<_>>>()?;
        if encoded.len() + 1 != frames.len() {
            return Err(Error::MissingPrerequisite(format!("clip {} is not encoded (run encode first)", entry.clip_id)));
        }
        for (k, frame) in frames.frames.iter().enumerate() {
            let cond = if k == 0 {
                video_condition(frame.width, frame.height, None)?
            } else {
                let enc = &encoded[k - 1];
                let flow = rgb_to_flow(enc, s_f)?;
                video_condition(frame.width, frame.height, Some((enc, &frames.frames[k - 1], &flow)))?
            };
            let item = TrainItem {
                sample: frame_to_tensor(frame),
                cond: Some(cond),
            };
            match entry.source {
                Source::Real => set.real.push(item),
                Source::Synthetic => set.synthetic.push(item),
            }
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub generator: String,
    pub steps: usize,
    pub real_items: usize,
    pub synthetic_items: usize,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

fn summary(generator: &str, data: &TrainingSet, records: &[TrainRecord]) -> TrainSummary {
    TrainSummary {
        generator: generator.into(),
        steps: records.len(),
        real_items: data.real.len(),
        synthetic_items: data.synthetic.len(),
        first_loss: records.first().map(|r| r.loss),
        last_loss: records.last().map(|r| r.loss),
    }
}

/// Trains the motion generator and the motion-guided frame generator.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<Vec<TrainSummary>> {
    cfg.validate()?;
    let (root, manifest) = load_dataset(cfg)?;
    let s_f = scale_factor(&manifest)?;
    let camera = dataset_mode(&manifest)? == DatasetMode::Camera;
    let ckpt = cfg.checkpoint_dir();
    let reports = cfg.report_dir();
    ensure_dir(&ckpt)?;
    ensure_dir(&reports)?;

    let motion_data = motion_training_set(&root, &manifest, camera)?;
    let cond = if camera { PLUCKER_CHANNELS } else { 0 };
    let mut motion = ConvNet::new(cfg.net_config(cond, derive_seed(cfg.seed, "init/motion")))?;
    let records = train(&mut motion, &motion_data, &cfg.fm_config(3, derive_seed(cfg.seed, "train/motion")), |_| {})?;
    checkpoint::save(&ckpt.join("motion.ckpt"), &motion)?;
    write_jsonl(&reports.join("motion_train.jsonl"), &records)?;
    let mut out = vec![summary("motion", &motion_data, &records)];

    let video_data = video_training_set(&root, &manifest, s_f)?;
    let mut video = ConvNet::new(cfg.net_config(VIDEO_COND_CHANNELS, derive_seed(cfg.seed, "init/video")))?;
    let records = train(&mut video, &video_data, &cfg.fm_config(3, derive_seed(cfg.seed, "train/video")), |_| {})?;
    checkpoint::save(&ckpt.join("video.ckpt"), &video)?;
    write_jsonl(&reports.join("video_train.jsonl"), &records)?;
    out.push(summary("video", &video_data, &records));
    Ok(out)
}

fn load_checkpoint(cfg: &PipelineConfig, name: &str) -> Result<ConvNet> {
    let path = cfg.checkpoint_dir().join(name);
    require(&path, "run train first")?;
    checkpoint::load(&path)
}

/// Writes a generated clip (frames, conditioning flows and their encodings)
/// and returns its manifest entry.
fn write_generated(root: &Path, id: &str, frames: &FrameSequence, flows: &[FlowField], encoded: &[EncodedFlow]) -> Result<ManifestEntry> {
    let dir = root.join(id);
    ensure_dir(&dir)?;
    let mut entry = ManifestEntry::new(id, Source::Synthetic);
    for (n, f) in frames.frames.iter().enumerate() {
        let rel = format!("{id}/{}", frame_name(n));
        write_frame(&root.join(&rel), f)?;
        entry.frame_paths.push(rel);
    }
    for (n, (flow, enc)) in flows.iter().zip(encoded).enumerate() {
        let rel = format!("{id}/cond_{n:03}.flo");
        write_flow(&root.join(&rel), flow)?;
        entry.flow_paths.push(rel);
        let rel = format!("{id}/cond_{n:03}.png");
        write_encoded(&root.join(&rel), enc)?;
        entry.encoded_paths.push(rel);
    }
    Ok(entry)
}

/// Ground-truth source: stage 2 only, on the checker testbed, conditioned on
/// its analytic flow and anchored at its first frame. Stage-1 source: both
/// stages for the first kept synthetic clips.
pub fn cmd_generate(cfg: &PipelineConfig, source: FlowSource) -> Result<DatasetManifest> {
    cfg.validate()?;
    let (root, dataset) = load_dataset(cfg)?;
    let s_f = scale_factor(&dataset)?;
    let mode = dataset_mode(&dataset)?;
    let video = load_checkpoint(cfg, "video.ckpt")?;
    let out = cfg.generated_dir(source);
    ensure_dir(&out)?;
    let shape = cfg.shape();
    let mut manifest = DatasetManifest {
        mode: dataset.mode.clone(),
        width: Some(cfg.dataset.width),
        height: Some(cfg.dataset.height),
        scale_factor_px: Some(s_f),
        ..Default::default()
    };
    manifest.extra.insert("flow_source".into(), Value::from(source.as_str()));
    let two_stage = |seed_label: &str| TwoStageConfig {
        mode: match mode {
            DatasetMode::Camera => MotionMode::Camera,
            DatasetMode::HumanLike => MotionMode::Object,
        },
        s_f,
        integrator_steps: cfg.integrator_steps,
        seed: derive_seed(cfg.seed, seed_label),
    };
    match source {
        FlowSource::GroundTruth => {
            let testbed = testbed_clip(&cfg.dataset)?;
            let encoded = testbed
                .forward
                .iter()
                .map(|f| Ok(encode_flow(f, s_f)?.quantized()))
                .collect::<Result<Vec<_>>>()?;
            let anchor = &testbed.frames.frames[0];
            let frames = generate_video(&video, &encoded, Some(anchor), shape, &two_stage("generate/testbed"))?;
            manifest.entries.push(write_generated(&out, "testbed", &frames, &testbed.forward, &encoded)?);
        }
        FlowSource::Stage1 => {
            let motion = load_checkpoint(cfg, "motion.ckpt")?;
            let refs: Vec<&ManifestEntry> = dataset
                .kept()
                .filter(|e| e.source == Source::Synthetic)
                .take(cfg.generate.clips)
                .collect();
            if refs.is_empty() {
                return Err(Error::EmptyPool("synthetic"));
            }
            for entry in refs {
                let maps = match mode {
                    DatasetMode::Camera => Some(
                        plucker_maps(&root, entry)?
                            .ok_or_else(|| Error::MissingPrerequisite(format!("clip {} has no trajectory", entry.clip_id)))?,
                    ),
                    DatasetMode::HumanLike => None,
                };
                let anchor: Option<Frame> = match (cfg.generate.anchor, entry.frame_paths.first()) {
                    (true, Some(p)) => Some(read_frame(&root.join(p))?),
                    _ => None,
                };
                let n_frames = entry.frame_paths.len();
                let ts = two_stage(&format!("generate/{}", entry.clip_id));
                let (flows, frames) = two_stage_generate(&motion, &video, maps.as_deref(), n_frames, shape, anchor.as_ref(), &ts)?;
                let encoded = flows.iter().map(|f| Ok(encode_flow(f, s_f)?.quantized())).collect::<Result<Vec<_>>>()?;
                let mut generated = write_generated(&out, &entry.clip_id, &frames, &flows, &encoded)?;
                generated.trajectory_path = entry.trajectory_path.as_ref().map(|p| {
                    let abs = root.join(p);
                    relative_to(&abs, &out)
                });
                manifest.entries.push(generated);
            }
        }
    }
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// `path` expressed relative to `base` when both live under the same
/// parent chain; absolute otherwise.
fn relative_to(path: &Path, base: &Path) -> String {
    let p: Vec<_> = path.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = p.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return path.display().to_string();
    }
    let mut rel = PathBuf::new();
    for _ in common..b.len() {
        rel.push("..");
    }
    for c in &p[common..] {
        rel.push(c);
    }
    rel.to_string_lossy().replace('\\', "/")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalOptions {
    /// Manifest to score; defaults to the generated manifest of `source`.
    pub manifest: Option<PathBuf>,
    /// Compare against this manifest's flows instead of re-estimating flow
    /// from the scored manifest's frames.
    pub against: Option<PathBuf>,
    pub gt_trajectory: Option<PathBuf>,
    pub est_trajectory: Option<PathBuf>,
    /// Regenerate under noisy conditioning at the standard SNR levels.
    pub snr_sweep: bool,
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// M-Err between each entry's conditioning flow and flow re-estimated from
/// its frames (or another manifest's flows), pooled over all frames;
/// optional mRotErr and SNR sweep. Writes `eval_<source>.json`.
pub fn cmd_eval(cfg: &PipelineConfig, source: FlowSource, opts: &EvalOptions) -> Result<MetricReport> {
    cfg.validate()?;
    let path = opts
        .manifest
        .clone()
        .unwrap_or_else(|| cfg.generated_dir(source).join(MANIFEST_FILE));
    require(&path, "run generate first")?;
    let manifest = DatasetManifest::load(&path)?;
    let root = manifest_dir(&path);
    let against = match &opts.against {
        Some(p) => {
            require(p, "comparison manifest")?;
            Some((manifest_dir(p), DatasetManifest::load(p)?))
        }
        None => None,
    };
    let block = cfg.dataset.block;
    let mut inputs = Vec::new();
    let mut estimates = Vec::new();
    for entry in &manifest.entries {
        let flows = read_flows(&root, &entry.flow_paths)?;
        let est = match &against {
            Some((aroot, other)) => {
                let twin = other
                    .entries
                    .iter()
                    .find(|e| e.clip_id == entry.clip_id)
                    .ok_or_else(|| Error::MissingPrerequisite(format!("clip {} absent from comparison manifest", entry.clip_id)))?;
                read_flows(aroot, &twin.flow_paths)?
            }
            None => estimate_flow_naive(&read_frames(&root, &entry.frame_paths)?, block.block, block.search)?,
        };
        if est.len() != flows.len() {
            return Err(Error::shape(format!("{} flows", flows.len()), est.len()));
        }
        inputs.extend(flows);
        estimates.extend(est);
    }
    let mut report = MetricReport {
        m_err: Some(motion_error(&inputs, &estimates)?),
        per_frame_m_err: motion_error_per_frame(&inputs, &estimates)?,
        ..Default::default()
    };
    match (&opts.gt_trajectory, &opts.est_trajectory) {
        (Some(gt), Some(est)) => {
            let gt: Trajectory = read_json(gt)?;
            let est: Trajectory = read_json(est)?;
            report.per_frame_rot_err = rotation_errors(&gt, &est)?;
            report.m_rot_err = Some(mean_rotation_error(&gt, &est)?);
        }
        (None, None) => {}
        _ => return Err(Error::invalid("mRotErr needs both --gt-trajectory and --est-trajectory")),
    }
    if opts.snr_sweep {
        report.robustness = snr_sweep(cfg, &root, &manifest, report.m_err.unwrap_or_default())?;
    }
    let reports = cfg.report_dir();
    ensure_dir(&reports)?;
    write_json(&reports.join(format!("eval_{}.json", source.as_str())), &report)?;
    Ok(report)
}

/// Regenerates each entry's frames from noisy copies of its conditioning
/// flow and scores them against the clean flow.
fn snr_sweep(cfg: &PipelineConfig, root: &Path, manifest: &DatasetManifest, clean: f64) -> Result<Vec<RobustnessRow>> {
    let s_f = scale_factor(manifest)?;
    let video = load_checkpoint(cfg, "video.ckpt")?;
    let block = cfg.dataset.block;
    let mut rows = vec![RobustnessRow {
        snr_db: None,
        measured_snr_db: None,
        m_err: clean,
    }];
    for db in SNR_LEVELS_DB {
        let mut inputs = Vec::new();
        let mut estimates = Vec::new();
        let mut measured = Vec::new();
        for entry in &manifest.entries {
            let flows = read_flows(root, &entry.flow_paths)?;
            let anchor = read_frame(&root.join(&entry.frame_paths[0]))?;
            let mut encoded = Vec::with_capacity(flows.len());
            for (n, f) in flows.iter().enumerate() {
                let noisy = add_noise_snr(f, db, derive_seed(cfg.seed, &format!("snr/{}/{db}/{n}", entry.clip_id)))?;
                measured.push(noisy.measured_snr_db);
                encoded.push(encode_flow(&noisy.flow, s_f)?.quantized());
            }
            let ts = TwoStageConfig {
                mode: MotionMode::Object,
                s_f,
                integrator_steps: cfg.integrator_steps,
                seed: derive_seed(cfg.seed, &format!("snr/{}/{db}", entry.clip_id)),
            };
            let frames = generate_video(&video, &encoded, Some(&anchor), cfg.shape(), &ts)?;
            estimates.extend(estimate_flow_naive(&frames, block.block, block.search)?);
            inputs.extend(flows);
        }
        rows.push(RobustnessRow {
            snr_db: Some(db),
            measured_snr_db: Some(measured.iter().sum::<f64>() / measured.len() as f64),
            m_err: motion_error(&inputs, &estimates)?,
        });
    }
    Ok(rows)
}

/// Renders every flow of a manifest (default: the dataset) as codec PNGs
/// plus a color-wheel legend. Returns the number of images written.
pub fn cmd_viz(cfg: &PipelineConfig, manifest_path: Option<&Path>) -> Result<usize> {
    cfg.validate()?;
    let path = manifest_path.map(Path::to_path_buf).unwrap_or_else(|| cfg.dataset_dir().join(MANIFEST_FILE));
    require(&path, "run gen-dataset first")?;
    let manifest = DatasetManifest::load(&path)?;
    let root = manifest_dir(&path);
    let mut all = Vec::new();
    for e in &manifest.entries {
        all.push(read_flows(&root, &e.flow_paths)?);
    }
    let s_f = match manifest.scale_factor_px {
        Some(s) => s,
        None => compute_scale_factor(&all.concat(), cfg.codec_percentile)?,
    };
    let viz = cfg.viz_dir();
    ensure_dir(&viz)?;
    write_encoded(&viz.join("color_wheel.png"), &color_wheel(128))?;
    let mut written = 1;
    for (entry, flows) in manifest.entries.iter().zip(&all) {
        let dir = viz.join(&entry.clip_id);
        ensure_dir(&dir)?;
        for (n, f) in flows.iter().enumerate() {
            write_png(&dir.join(format!("flow_{n:03}.png")), &encode_flow(f, s_f)?.to_image())?;
            written += 1;
        }
    }
    Ok(written)
}
