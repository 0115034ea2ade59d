//! The five commands: synth, fit-tokenizer, train, infer, eval.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use imu4d_core::format::{parse_imu, write_motion, write_scene};
use imu4d_core::imu::{mask_devices, sample_device_config, ImuSequence};
use imu4d_core::kinematics::{crop_and_align, Skeleton};
use imu4d_core::metrics::{format_entries, scene_counts, CaptionPair, IouMode, JointAlign, MotionMetricsReport, SceneCounts, SceneMetricsReport, TextMetricsReport};
use imu4d_core::model::{augment_batch, shifted_window_average, Model, Prediction, RawSample, SamplingConfig, Stage, Vocabs};
use imu4d_core::nn::AdamW;
use imu4d_core::tokenizer::text::split_words;
use imu4d_core::tokenizer::{MotionTokenizer, TextVocab};
use log::{info, warn};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainedState};
use crate::config::{DeviceSpec, RunConfig, SplitSel};
use crate::dataset::{generate_scenarios, load_split, write_dataset, ManifestEntry, Record};
use crate::error::{self, CliError, CliResult};

pub fn tokenizer_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoint_dir.join("tokenizer.ckpt")
}

pub fn model_path(cfg: &RunConfig, stage: Stage) -> PathBuf {
    cfg.paths.checkpoint_dir.join(format!("model_stage{}.ckpt", stage.number()))
}

fn train_split(cfg: &RunConfig) -> SplitSel {
    if cfg.train.all_splits {
        SplitSel::All
    } else {
        SplitSel::Train
    }
}

fn nonempty(records: Vec<Record>, what: &str) -> CliResult<Vec<Record>> {
    if records.is_empty() {
        return Err(CliError::MissingInput(format!("no sequences in the {what} split")));
    }
    Ok(records)
}

pub fn cmd_synth(cfg: &RunConfig) -> CliResult<Vec<ManifestEntry>> {
    let scenarios = generate_scenarios(&cfg.synth, &cfg.taxonomy())?;
    let entries = write_dataset(&cfg.paths.data_dir, &scenarios, &Skeleton::body22())?;
    info!("wrote {} sequences to {}", entries.len(), cfg.paths.data_dir.display());
    Ok(entries)
}

pub fn cmd_fit_tokenizer(cfg: &RunConfig) -> CliResult<Checkpoint> {
    let records = nonempty(load_split(&cfg.paths.data_dir, train_split(cfg))?, "training")?;
    let corpus = records.iter().map(|r| Ok(crop_and_align(&r.motion, 0, r.motion.len())?.0)).collect::<CliResult<Vec<_>>>()?;
    let (tokenizer, report) = MotionTokenizer::fit(&corpus, &cfg.tokenizer)?;
    info!(
        "tokenizer fitted on {} windows: reconstruction {:.5}, {} codes reseeded",
        report.windows, report.vq.reconstruction, report.vq.reseeded
    );
    let text = TextVocab::build(records.iter().map(|r| r.caption.as_str()));
    let ckpt = Checkpoint { config: cfg.clone(), tokenizer, text, trained: None };
    save_checkpoint(&ckpt, &tokenizer_path(cfg))?;
    Ok(ckpt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub path: PathBuf,
    pub stage: Stage,
    pub steps: usize,
    pub final_loss: f64,
    pub initialized_from_stage1: bool,
}

pub fn raw_samples(records: &[Record], text: &TextVocab) -> Vec<RawSample> {
    records
        .iter()
        .map(|r| RawSample { motion: r.motion.clone(), imu: r.imu.clone(), text: text.encode(&r.caption), scene: Some(r.scene.clone()) })
        .collect()
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainSummary> {
    let stage = cfg.train.stage();
    let base = load_checkpoint(&tokenizer_path(cfg))?;
    let records = nonempty(load_split(&cfg.paths.data_dir, train_split(cfg))?, "training")?;
    let raws = raw_samples(&records, &base.text);
    let vocabs = Vocabs::from_parts(&base.tokenizer, &base.text, cfg.synth.classes);
    let mut model = Model::new(cfg.model.clone(), vocabs)?;
    let mut from_stage1 = false;
    if stage == Stage::Two {
        let prev = model_path(cfg, Stage::One);
        if prev.exists() {
            let ck = load_checkpoint(&prev)?;
            let t = ck.trained.ok_or_else(|| CliError::Corrupt(format!("{} holds no model", prev.display())))?;
            if t.model.config != model.config || t.model.vocabs != model.vocabs {
                return Err(CliError::Config(format!("{} was trained with a different model configuration", prev.display())));
            }
            model.params = t.model.params;
            from_stage1 = true;
            info!("stage 2 initialized from {}", prev.display());
        } else {
            warn!("no stage-1 checkpoint at {}; training stage 2 from scratch", prev.display());
        }
    }
    let mut opt = AdamW::new(cfg.train.optimizer(), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut log = String::from("step\tloss\tcode\tmean\tstd\tbody\tanchor\ttext\tclass\tpose\tgrad_norm\tlr\n");
    let mut last = f64::NAN;
    let n = raws.len();
    for step in 0..cfg.train.steps {
        let k = cfg.train.batch_size.min(n);
        let mut idx = sample_indices(&mut rng, n, k).into_vec();
        idx.sort_unstable();
        let picked: Vec<RawSample> = idx.iter().map(|&i| raws[i].clone()).collect();
        let batch = augment_batch(&mut rng, &picked, &base.tokenizer, &cfg.augment)?;
        let s = model.train_step(&mut opt, &batch, stage, &mut rng)?;
        last = s.loss.total;
        let l = &s.loss;
        let _ = writeln!(
            log,
            "{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}",
            step + 1,
            l.total,
            l.code,
            l.mean,
            l.std,
            l.body,
            l.anchor,
            l.text,
            l.class,
            l.pose,
            s.grad_norm,
            s.lr
        );
        if cfg.train.log_every > 0 && ((step + 1) % cfg.train.log_every == 0 || step == 0) {
            info!("step {}/{} loss {:.4} (text {:.3}, code {:.3}, body {:.4})", step + 1, cfg.train.steps, l.total, l.text, l.code, l.body);
        }
    }
    error::write(&cfg.paths.report_dir.join(format!("train_stage{}.tsv", stage.number())), log)?;
    let path = model_path(cfg, stage);
    let trained = TrainedState { model, optimizer: opt, rng, stage, steps: cfg.train.steps as u64 };
    let ckpt = Checkpoint { config: cfg.clone(), tokenizer: base.tokenizer, text: base.text, trained: Some(trained) };
    save_checkpoint(&ckpt, &path)?;
    Ok(TrainSummary { path, stage, steps: cfg.train.steps, final_loss: last, initialized_from_stage1: from_stage1 })
}

/// The model checkpoint for the configured training stage.
pub fn load_model(cfg: &RunConfig) -> CliResult<Checkpoint> {
    let path = model_path(cfg, cfg.train.stage());
    let ck = load_checkpoint(&path)?;
    if ck.trained.is_none() {
        return Err(CliError::Corrupt(format!("{} holds no model", path.display())));
    }
    Ok(ck)
}

fn sampling(cfg: &RunConfig) -> SamplingConfig {
    SamplingConfig { temperature: cfg.eval.temperature, seed: cfg.eval.seed, ..SamplingConfig::default() }
}

fn apply_devices(imu: &ImuSequence, spec: DeviceSpec, seed: u64) -> CliResult<ImuSequence> {
    let set = match spec {
        DeviceSpec::All => return Ok(imu.clone()),
        DeviceSpec::Count(n) => sample_device_config(&mut ChaCha8Rng::seed_from_u64(seed), n)?,
        DeviceSpec::Slots(s) => s,
    };
    Ok(mask_devices(imu, &set)?)
}

fn predict(cfg: &RunConfig, ck: &Checkpoint, imu: &ImuSequence) -> CliResult<Prediction> {
    let t = ck.trained.as_ref().expect("model checkpoint");
    let s = sampling(cfg);
    Ok(if cfg.eval.shifted_average {
        shifted_window_average(&t.model, imu, &ck.tokenizer, t.stage, &s)?
    } else {
        t.model.infer(imu, &ck.tokenizer, t.stage, &s)?
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOutput {
    pub motion: PathBuf,
    pub caption: PathBuf,
    pub scene: Option<PathBuf>,
    pub text: String,
}

/// Writes `<out>.motion`, `<out>.txt` and, for stage-2 models, `<out>.scene`.
pub fn cmd_infer(cfg: &RunConfig, imu_path: &Path, out: &Path) -> CliResult<InferOutput> {
    let ck = load_model(cfg)?;
    let imu = parse_imu(&error::read_to_string(imu_path)?)?;
    let imu = apply_devices(&imu, cfg.eval.devices, cfg.eval.seed)?;
    let pred = predict(cfg, &ck, &imu)?;
    if pred.text_truncated || pred.scene_truncated {
        warn!("decoding hit a token budget; output truncated");
    }
    let text = ck.text.decode(&pred.text)?;
    let with_ext = |ext: &str| {
        let mut p = out.as_os_str().to_owned();
        p.push(format!(".{ext}"));
        PathBuf::from(p)
    };
    let out = InferOutput { motion: with_ext("motion"), caption: with_ext("txt"), scene: pred.scene.as_ref().map(|_| with_ext("scene")), text };
    error::write(&out.motion, write_motion(&pred.motion))?;
    error::write(&out.caption, format!("{}\n", out.text))?;
    if let (Some(path), Some(scene)) = (&out.scene, &pred.scene) {
        error::write(path, write_scene(scene))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub id: String,
    pub frames: usize,
    pub motion: MotionMetricsReport,
    pub caption: String,
    pub predicted: String,
    pub scene: Option<SceneCounts>,
}

impl SequenceResult {
    pub fn exact_text(&self) -> bool {
        split_words(&self.caption) == split_words(&self.predicted)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: SplitSel,
    pub frames: usize,
    pub sequences: Vec<SequenceResult>,
    pub motion: MotionMetricsReport,
    pub text: TextMetricsReport,
    pub scene: Option<SceneMetricsReport>,
}

impl EvalReport {
    pub fn exact_matches(&self) -> usize {
        self.sequences.iter().filter(|s| s.exact_text()).count()
    }

    pub fn summary(&self) -> String {
        let mut entries = self.motion.entries();
        entries.extend(self.text.entries());
        entries.push(("text.exact_match", self.exact_matches() as f64, "sequences"));
        if let Some(s) = &self.scene {
            entries.extend(s.entries());
        }
        let split = format!("{:?}", self.split).to_lowercase();
        format!("split = {split}\nsequences = {}\nframes = {}\n{}", self.sequences.len(), self.frames, format_entries(&entries))
    }

    pub fn per_sequence_tsv(&self) -> String {
        let mut out = String::from("id\tframes\tmpjpe_mm\tpa_mpjpe_mm\tmpjre_deg\tmpjve_mm\tmte_mm\texact_text\tpredicted_caption\n");
        for s in &self.sequences {
            let m = &s.motion;
            let _ = writeln!(
                out,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
                s.id,
                s.frames,
                m.mpjpe,
                m.pa_mpjpe,
                m.mpjre,
                m.mpjve,
                m.mte,
                s.exact_text() as u8,
                s.predicted
            );
        }
        out
    }
}

/// Scores the model (or the ground truth itself when `eval.oracle` is set)
/// on the first `frame_budget` frames of every sequence in the split.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<EvalReport> {
    let records = nonempty(load_split(&cfg.paths.data_dir, cfg.eval.split)?, "evaluation")?;
    let ck = if cfg.eval.oracle { None } else { Some(load_model(cfg)?) };
    let with_scene = cfg.eval.oracle || ck.as_ref().and_then(|c| c.trained.as_ref()).is_some_and(|t| t.stage == Stage::Two);
    let report = evaluate(cfg, ck.as_ref(), &records, with_scene)?;
    error::write(&cfg.paths.report_dir.join("metrics.txt"), report.summary())?;
    error::write(&cfg.paths.report_dir.join("per_sequence.tsv"), report.per_sequence_tsv())?;
    Ok(report)
}

pub fn evaluate(cfg: &RunConfig, ck: Option<&Checkpoint>, records: &[Record], with_scene: bool) -> CliResult<EvalReport> {
    let skel = Skeleton::body22();
    let tax = cfg.taxonomy();
    let budget = cfg.eval.frame_budget();
    let mut sequences = Vec::with_capacity(records.len());
    let mut pooled = SceneCounts::default();
    for (i, r) in records.iter().enumerate() {
        let len = budget.min(r.motion.len());
        if len < budget {
            warn!("{} has {} frames, fewer than the {budget}-frame budget", r.id, r.motion.len());
        }
        let (gt, tf) = crop_and_align(&r.motion, 0, len)?;
        let gt_scene = r.scene.transformed(&tf);
        let (motion, predicted, scene) = match ck {
            None => (gt.clone(), r.caption.clone(), Some(gt_scene.clone())),
            Some(ck) => {
                let imu = apply_devices(&r.imu.crop(0, len)?, cfg.eval.devices, cfg.eval.seed.wrapping_add(i as u64))?;
                let pred = predict(cfg, ck, &imu)?;
                (pred.motion, ck.text.decode(&pred.text)?, pred.scene)
            }
        };
        let counts = if with_scene { Some(scene_counts(&scene.unwrap_or_default(), &gt_scene, &tax, IouMode::Auto)?) } else { None };
        if let Some(c) = &counts {
            pooled.add(c);
        }
        let m = MotionMetricsReport::compute(&motion, &gt, &skel, JointAlign::Pelvis)?;
        info!("{}: mpjpe {:.2} mm, text \"{predicted}\"", r.id, m.mpjpe);
        sequences.push(SequenceResult { id: r.id.clone(), frames: len, motion: m, caption: r.caption.clone(), predicted, scene: counts });
    }
    let motion = MotionMetricsReport::mean(&sequences.iter().map(|s| s.motion).collect::<Vec<_>>());
    let pairs: Vec<CaptionPair> =
        sequences.iter().map(|s| CaptionPair { candidate: split_words(&s.predicted), references: vec![split_words(&s.caption)] }).collect();
    let text = TextMetricsReport::compute(&pairs);
    Ok(EvalReport { split: cfg.eval.split, frames: budget, sequences, motion, text, scene: with_scene.then(|| pooled.report()) })
}
