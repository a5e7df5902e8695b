//! Builds and evaluates the three comparable systems:
//!
//! * `P1`: project, greedy CTC decode, embed the decoded labels, classify.
//! * `E1`: classify the raw latent frames.
//! * `E2`: summarize the latent frames with CTS, classify the summary.
//!
//! Stage timings use a monotonic clock around compute only; nothing in the
//! timed region touches the file system. Real-time factor is processing time
//! over nominal audio duration, where one latent step stands for four input
//! frames of `frame_shift_ms` each.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::ctc::greedy_decode;
use crate::cts::{compression_stats, summarize_path, SummarizeOptions};
use crate::error::{Error, Result};
use crate::lu::{lu_fine_tune, lu_train, LuConfig, LuInput, LuModel, LuSample, TrainReport};
use crate::seqcore::{frame_argmax, project_softmax, ProjectionMatrix, Vocabulary};
use crate::synth::{generate_corpus, kfold_split, Corpus, SynthSpec, Utterance};

/// Input frames consumed per latent step by the encoder front end.
pub const FRONTEND_REDUCTION: f64 = 4.0;

/// JSON schema for [`EvalReport`].
pub const REPORT_SCHEMA: &str = include_str!("../schemas/report.schema.json");

pub const REPORT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SystemId {
    P1,
    E1,
    E2,
}

impl SystemId {
    pub const ALL: [SystemId; 3] = [SystemId::P1, SystemId::E1, SystemId::E2];

    /// Whether this system's classifier reads decoded labels.
    pub fn uses_text(self) -> bool {
        self == SystemId::P1
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SystemId::P1 => "P1",
            SystemId::E1 => "E1",
            SystemId::E2 => "E2",
        };
        f.write_str(name)
    }
}

impl FromStr for SystemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(SystemId::P1),
            "e1" => Ok(SystemId::E1),
            "e2" => Ok(SystemId::E2),
            other => Err(Error::Config(format!(
                "unknown system {other:?} (expected p1, e1 or e2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Project,
    Decode,
    Embed,
    Summarize,
    Lu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub intent: usize,
}

/// Predictions and timings of one pass of a system over a set of utterances.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub system: SystemId,
    pub predictions: Vec<Prediction>,
    pub stages: BTreeMap<Stage, Duration>,
    pub total: Duration,
    /// Nominal audio duration in milliseconds.
    pub audio_ms: f64,
    /// Per-utterance `T / S` for E2 runs.
    pub compression_ratios: Vec<f64>,
    /// Per-utterance `S / L` for E2 runs.
    pub segments_per_label: Vec<f64>,
}

impl RunOutput {
    pub fn stage_sum(&self) -> Duration {
        self.stages.values().sum()
    }

    pub fn rtf(&self) -> f64 {
        self.total.as_secs_f64() * 1e3 / self.audio_ms
    }

    pub fn stage_ms(&self) -> BTreeMap<Stage, f64> {
        self.stages
            .iter()
            .map(|(s, d)| (*s, d.as_secs_f64() * 1e3))
            .collect()
    }
}

pub fn nominal_audio_ms<'a>(utterances: impl IntoIterator<Item = &'a Utterance>) -> f64 {
    utterances
        .into_iter()
        .map(|u| u.seq.len() as f64 * f64::from(u.seq.frame_shift_ms()) * FRONTEND_REDUCTION)
        .sum()
}

fn check_mode(id: SystemId, model: &LuModel) -> Result<()> {
    if id.uses_text() != model.has_embedding() {
        return Err(Error::Mode(format!(
            "system {id} needs a {} model",
            if id.uses_text() {
                "text (label-embedding)"
            } else {
                "latent-input"
            }
        )));
    }
    Ok(())
}

/// Contiguous stage timer: each stage ends where the next begins, so stage
/// times add up to the utterance total.
struct Clock<'a> {
    stages: &'a mut BTreeMap<Stage, Duration>,
    start: Instant,
    mark: Instant,
}

impl<'a> Clock<'a> {
    fn start(stages: &'a mut BTreeMap<Stage, Duration>) -> Self {
        let now = Instant::now();
        Self {
            stages,
            start: now,
            mark: now,
        }
    }

    fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let out = f();
        let now = Instant::now();
        *self.stages.entry(stage).or_default() += now - self.mark;
        self.mark = now;
        out
    }

    fn elapsed(&self) -> Duration {
        self.mark - self.start
    }
}

/// Runs one system over `utterances`, single-threaded, timing every stage.
pub fn run_system(
    id: SystemId,
    utterances: &[&Utterance],
    proj: &ProjectionMatrix,
    vocab: &Vocabulary,
    model: &LuModel,
) -> Result<RunOutput> {
    check_mode(id, model)?;
    let cts_options = SummarizeOptions {
        drop_blank_segments: false,
        blank_index: vocab.blank_index,
    };
    let mut stages = BTreeMap::new();
    let mut total = Duration::ZERO;
    let mut predictions = Vec::with_capacity(utterances.len());
    let mut ratios = Vec::new();
    let mut per_label = Vec::new();
    for utt in utterances {
        let mut clock = Clock::start(&mut stages);
        let intent = match id {
            SystemId::P1 => {
                let grid = clock.time(Stage::Project, || project_softmax(&utt.seq, proj))?;
                let decoded = clock.time(Stage::Decode, || greedy_decode(&grid, vocab))?;
                let rows = clock.time(Stage::Embed, || model.embed_labels(&decoded.ids))?;
                clock.time(Stage::Lu, || {
                    model.forward(&rows).map(|p| crate::seqcore::argmax(&p))
                })?
            }
            SystemId::E1 => clock.time(Stage::Lu, || {
                model
                    .forward_latent(&utt.seq)
                    .map(|p| crate::seqcore::argmax(&p))
            })?,
            SystemId::E2 => {
                let grid = clock.time(Stage::Project, || project_softmax(&utt.seq, proj))?;
                let summary = clock.time(Stage::Summarize, || {
                    summarize_path(&utt.seq, &frame_argmax(&grid), cts_options)
                })?;
                let intent = clock.time(Stage::Lu, || {
                    model
                        .forward_latent(&summary.vectors)
                        .map(|p| crate::seqcore::argmax(&p))
                })?;
                total += clock.elapsed();
                // bookkeeping outside the timed region
                let decoded = greedy_decode(&grid, vocab)?;
                let stats = compression_stats(&summary, &decoded);
                ratios.push(stats.ratio);
                per_label.push(stats.segments_per_label);
                predictions.push(Prediction {
                    id: utt.id.clone(),
                    intent,
                });
                continue;
            }
        };
        total += clock.elapsed();
        predictions.push(Prediction {
            id: utt.id.clone(),
            intent,
        });
    }
    Ok(RunOutput {
        system: id,
        predictions,
        stages,
        total,
        audio_ms: nominal_audio_ms(utterances.iter().copied()),
        compression_ratios: ratios,
        segments_per_label: per_label,
    })
}

/// Exact-match intent accuracy in percent.
pub fn evaluate(predictions: &[Prediction], truth: &[&Utterance]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let by_id: BTreeMap<&str, usize> = predictions
        .iter()
        .map(|p| (p.id.as_str(), p.intent))
        .collect();
    let mut correct = 0usize;
    for utt in truth {
        let predicted = by_id
            .get(utt.id.as_str())
            .ok_or_else(|| Error::MissingId(utt.id.clone()))?;
        if *predicted == utt.intent {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / truth.len() as f64)
}

/// Timing summary of repeated runs.
#[derive(Debug, Clone)]
pub struct Bench {
    /// The repeat whose RTF is the median; its predictions are the reported ones.
    pub median: RunOutput,
    pub rtfs: Vec<f64>,
}

impl Bench {
    pub fn rtf(&self) -> f64 {
        self.median.rtf()
    }
}

/// Runs a system `repeats` times and keeps the median-RTF repeat.
pub fn bench_rtf(
    id: SystemId,
    utterances: &[&Utterance],
    proj: &ProjectionMatrix,
    vocab: &Vocabulary,
    model: &LuModel,
    repeats: usize,
) -> Result<Bench> {
    if repeats < 3 {
        return Err(Error::Config(format!(
            "repeats must be at least 3, got {repeats}"
        )));
    }
    if utterances.is_empty() {
        return Err(Error::Empty("benchmark corpus"));
    }
    let mut runs = (0..repeats)
        .map(|_| run_system(id, utterances, proj, vocab, model))
        .collect::<Result<Vec<_>>>()?;
    let rtfs: Vec<f64> = runs.iter().map(RunOutput::rtf).collect();
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| rtfs[a].total_cmp(&rtfs[b]));
    let median = runs.swap_remove(order[order.len() / 2]);
    Ok(Bench { median, rtfs })
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Classifier hyper-parameters shared by all three systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub hidden: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs of E2 fine-tuning on summarized inputs, starting from E1.
    pub fine_tune_epochs: usize,
    pub fine_tune_learning_rate: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 2,
            learning_rate: 0.005,
            epochs: 8,
            batch_size: 16,
            fine_tune_epochs: 4,
            fine_tune_learning_rate: 0.002,
        }
    }
}

impl TrainSettings {
    pub fn lu_config(&self, input_dim: usize, num_intents: usize, seed: u64) -> LuConfig {
        LuConfig {
            input_dim,
            hidden: self.hidden,
            layers: self.layers,
            num_intents,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            vocab_size: None,
        }
    }
}

/// Training inputs for one system.
pub fn training_samples(
    id: SystemId,
    utterances: &[&Utterance],
    proj: &ProjectionMatrix,
    vocab: &Vocabulary,
) -> Result<Vec<LuSample>> {
    utterances
        .iter()
        .map(|u| {
            let input = match id {
                SystemId::P1 => LuInput::Labels(u.true_labels.ids.clone()),
                SystemId::E1 => LuInput::from_latent(&u.seq),
                SystemId::E2 => {
                    let options = SummarizeOptions {
                        drop_blank_segments: false,
                        blank_index: vocab.blank_index,
                    };
                    let summary = crate::cts::summarize(&u.seq, proj, options)?;
                    LuInput::from_latent(&summary.vectors)
                }
            };
            Ok(LuSample {
                input,
                intent: u.intent,
            })
        })
        .collect()
}

/// Trained classifiers for the three systems.
#[derive(Debug, Clone)]
pub struct TrainedSystems {
    pub p1: LuModel,
    pub e1: LuModel,
    pub e2: LuModel,
    pub losses: BTreeMap<SystemId, Vec<f64>>,
}

impl TrainedSystems {
    pub fn model(&self, id: SystemId) -> &LuModel {
        match id {
            SystemId::P1 => &self.p1,
            SystemId::E1 => &self.e1,
            SystemId::E2 => &self.e2,
        }
    }
}

/// Trains P1 on gold label sequences, E1 on latent frames, then fine-tunes a
/// copy of E1 on summarized frames to obtain E2.
pub fn train_systems(
    train: &[&Utterance],
    corpus: &Corpus,
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainedSystems> {
    let (proj, vocab) = (&corpus.projection, &corpus.vocab);
    let dim = corpus.projection.dim();
    let k = corpus.spec.num_intents;
    let mut losses = BTreeMap::new();

    let p1_config = settings.lu_config(dim, k, seed).with_vocab(vocab.len());
    let (p1, report) = lu_train(
        &p1_config,
        &training_samples(SystemId::P1, train, proj, vocab)?,
    )?;
    losses.insert(SystemId::P1, report.epoch_losses);

    let e1_config = settings.lu_config(dim, k, seed.wrapping_add(1));
    let (e1, report) = lu_train(
        &e1_config,
        &training_samples(SystemId::E1, train, proj, vocab)?,
    )?;
    losses.insert(SystemId::E1, report.epoch_losses);

    let e2 = fine_tune_e2(
        &e1,
        settings,
        seed.wrapping_add(2),
        &training_samples(SystemId::E2, train, proj, vocab)?,
    )?;
    losses.insert(SystemId::E2, e2.1.epoch_losses);

    Ok(TrainedSystems {
        p1,
        e1,
        e2: e2.0,
        losses,
    })
}

pub fn fine_tune_e2(
    e1: &LuModel,
    settings: &TrainSettings,
    seed: u64,
    samples: &[LuSample],
) -> Result<(LuModel, TrainReport)> {
    let start = e1.clone().with_schedule(
        settings.fine_tune_learning_rate,
        settings.fine_tune_epochs,
        settings.batch_size,
        seed,
    );
    lu_fine_tune(start, samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalConfig {
    pub synth: SynthSpec,
    pub k: usize,
    pub train: TrainSettings,
    pub repeats: usize,
}

impl CrossvalConfig {
    pub fn new(synth: SynthSpec) -> Self {
        Self {
            synth,
            k: 5,
            train: TrainSettings::default(),
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemResult {
    pub accuracy_pct: f64,
    pub rtf: f64,
    pub total_ms: f64,
    pub stage_ms: BTreeMap<Stage, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compression {
    pub mean_ratio: f64,
    pub mean_segments_per_label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub audio_ms: f64,
    pub systems: BTreeMap<SystemId, SystemResult>,
    pub compression: Compression,
    pub train_loss: BTreeMap<SystemId, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub per_system: BTreeMap<SystemId, SystemResult>,
    pub compression: Compression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub seed: u64,
    pub config: CrossvalConfig,
    pub folds: Vec<FoldReport>,
    pub summary: Summary,
}

/// Keys of [`EvalReport`] whose values depend on wall-clock time.
pub const TIMING_KEYS: [&str; 3] = ["rtf", "total_ms", "stage_ms"];

/// Removes timing fields from a serialized report, leaving only the
/// seed-determined content.
pub fn strip_timing(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for key in TIMING_KEYS {
                map.remove(key);
            }
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// Evaluates already-trained systems on one fold.
pub fn evaluate_fold(
    fold: usize,
    train_size: usize,
    eval: &[&Utterance],
    corpus: &Corpus,
    systems: &TrainedSystems,
    repeats: usize,
) -> Result<FoldReport> {
    let mut results = BTreeMap::new();
    let mut compression = Compression {
        mean_ratio: 0.0,
        mean_segments_per_label: 0.0,
    };
    for id in SystemId::ALL {
        let bench = bench_rtf(
            id,
            eval,
            &corpus.projection,
            &corpus.vocab,
            systems.model(id),
            repeats,
        )?;
        let run = &bench.median;
        if id == SystemId::E2 {
            compression = Compression {
                mean_ratio: mean(&run.compression_ratios),
                mean_segments_per_label: mean(&run.segments_per_label),
            };
        }
        results.insert(
            id,
            SystemResult {
                accuracy_pct: evaluate(&run.predictions, eval)?,
                rtf: run.rtf(),
                total_ms: run.total.as_secs_f64() * 1e3,
                stage_ms: run.stage_ms(),
            },
        );
    }
    Ok(FoldReport {
        fold,
        train_size,
        eval_size: eval.len(),
        audio_ms: nominal_audio_ms(eval.iter().copied()),
        systems: results,
        compression,
        train_loss: systems.losses.clone(),
    })
}

/// Cross-validation over an existing corpus.
pub fn crossval_corpus(corpus: &Corpus, config: &CrossvalConfig) -> Result<EvalReport> {
    let folds = kfold_split(corpus.len(), config.k)?;
    let mut reports = Vec::with_capacity(folds.len());
    for (f, fold) in folds.iter().enumerate() {
        let train = corpus.subset(&fold.train);
        let eval = corpus.subset(&fold.eval);
        let seed = config
            .synth
            .seed
            .wrapping_mul(1000)
            .wrapping_add(10 * f as u64);
        let systems = train_systems(&train, corpus, &config.train, seed)?;
        reports.push(evaluate_fold(
            f,
            train.len(),
            &eval,
            corpus,
            &systems,
            config.repeats,
        )?);
    }
    Ok(EvalReport {
        version: REPORT_VERSION.to_string(),
        seed: config.synth.seed,
        config: config.clone(),
        summary: summarize_folds(&reports),
        folds: reports,
    })
}

/// Generates the corpus from `config.synth`, then cross-validates.
pub fn run_crossval(config: &CrossvalConfig) -> Result<EvalReport> {
    let corpus = generate_corpus(&config.synth)?;
    crossval_corpus(&corpus, config)
}

/// Mean accuracy over folds; RTF pooled as total time over total audio.
pub fn summarize_folds(folds: &[FoldReport]) -> Summary {
    let audio: f64 = folds.iter().map(|f| f.audio_ms).sum();
    let mut per_system = BTreeMap::new();
    for id in SystemId::ALL {
        let results: Vec<&SystemResult> = folds.iter().filter_map(|f| f.systems.get(&id)).collect();
        if results.is_empty() {
            continue;
        }
        let accuracy: Vec<f64> = results.iter().map(|r| r.accuracy_pct).collect();
        let total_ms: f64 = results.iter().map(|r| r.total_ms).sum();
        let mut stage_ms = BTreeMap::new();
        for r in &results {
            for (stage, ms) in &r.stage_ms {
                *stage_ms.entry(*stage).or_insert(0.0) += ms;
            }
        }
        per_system.insert(
            id,
            SystemResult {
                accuracy_pct: mean(&accuracy),
                rtf: total_ms / audio,
                total_ms,
                stage_ms,
            },
        );
    }
    let ratios: Vec<f64> = folds.iter().map(|f| f.compression.mean_ratio).collect();
    let per_label: Vec<f64> = folds
        .iter()
        .map(|f| f.compression.mean_segments_per_label)
        .collect();
    Summary {
        per_system,
        compression: Compression {
            mean_ratio: mean(&ratios),
            mean_segments_per_label: mean(&per_label),
        },
    }
}
