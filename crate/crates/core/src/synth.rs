//! Synthetic utterance corpus with planted label embeddings.
//!
//! Every label `v` (blank included) gets a random unit vector `e_v`. The CTC
//! projection row for `v` is `alpha * e_v`, so a frame near `e_v` decodes to
//! `v`. An utterance picks one of its intent's label templates and emits, per
//! label, a run of noisy copies of the label embedding, with runs of noisy
//! blank frames between labels.
//!
//! Noise is isotropic Gaussian with per-coordinate deviation `sigma / sqrt(D)`,
//! so `sigma` is the expected norm of the noise vector. Gaussian scatter
//! around a label embedding is a modelling assumption about encoder outputs.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctc::LabelSequence;
use crate::error::{Error, Result};
use crate::formats::{read_lseq, read_proj, read_vocab, write_lseq, write_proj, write_vocab};
use crate::seqcore::{LatentSequence, ProjectionMatrix, Vocabulary};

const MAX_RESAMPLES: usize = 1000;

/// Inclusive integer range, serialized as `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span(pub usize, pub usize);

impl Span {
    fn sample(&self, rng: &mut impl Rng) -> usize {
        rng.random_range(self.0..=self.1)
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.0 > self.1 {
            return Err(Error::Config(format!(
                "{name} range [{}, {}] is empty",
                self.0, self.1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_intents: usize,
    /// Label inventory size including the blank (index 0).
    pub vocab_size: usize,
    pub latent_dim: usize,
    pub templates_per_intent: usize,
    pub template_len: Span,
    pub run_len: Span,
    pub gap_len: Span,
    pub logit_scale: f32,
    pub noise_sigma: f32,
    pub utterances_per_intent: usize,
    /// Templates each intent borrows from its predecessor; 0 keeps the
    /// template sets of different intents disjoint.
    pub shared_templates: usize,
    pub frame_shift_ms: f32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_intents: 6,
            vocab_size: 41,
            latent_dim: 16,
            templates_per_intent: 5,
            template_len: Span(3, 8),
            run_len: Span(2, 6),
            gap_len: Span(0, 3),
            logit_scale: 4.0,
            noise_sigma: 0.4,
            utterances_per_intent: 100,
            shared_templates: 0,
            frame_shift_ms: crate::seqcore::DEFAULT_FRAME_SHIFT_MS,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_intents < 2 {
            return Err(Error::Config("need at least two intents".into()));
        }
        if self.vocab_size < self.num_intents || self.vocab_size < 3 {
            return Err(Error::Config(format!(
                "vocab_size {} too small for {} intents",
                self.vocab_size, self.num_intents
            )));
        }
        if self.latent_dim == 0 || self.templates_per_intent == 0 || self.utterances_per_intent == 0
        {
            return Err(Error::Config(
                "latent_dim, templates_per_intent and utterances_per_intent must be positive"
                    .into(),
            ));
        }
        if self.shared_templates > self.templates_per_intent {
            return Err(Error::Config(
                "shared_templates exceeds templates_per_intent".into(),
            ));
        }
        self.template_len.check("template_len")?;
        self.run_len.check("run_len")?;
        self.gap_len.check("gap_len")?;
        if self.template_len.0 == 0 || self.run_len.0 == 0 {
            return Err(Error::Config(
                "template and run lengths must be at least 1".into(),
            ));
        }
        if !(self.logit_scale.is_finite() && self.logit_scale >= 0.0) {
            return Err(Error::Config("logit_scale must be non-negative".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        if !(self.frame_shift_ms.is_finite() && self.frame_shift_ms > 0.0) {
            return Err(Error::Config("frame_shift_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn num_utterances(&self) -> usize {
        self.num_intents * self.utterances_per_intent
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub intent: usize,
    pub true_labels: LabelSequence,
    pub seq: LatentSequence,
    /// Planted label of every frame (blank for gap frames).
    pub frame_labels: Vec<usize>,
}

/// Unit embeddings for every label and the matching projection `alpha * e_v`.
pub fn plant_projection(spec: &SynthSpec) -> Result<(ProjectionMatrix, Vec<Vec<f32>>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (v, d) = (spec.vocab_size, spec.latent_dim);
    for _ in 0..MAX_RESAMPLES {
        let embeddings: Vec<Vec<f32>> = (0..v).map(|_| unit_vector(d, &mut rng)).collect();
        if max_cross_dot(&embeddings) < 1.0 {
            let weights = embeddings
                .iter()
                .flat_map(|e| e.iter().map(|x| x * spec.logit_scale))
                .collect();
            return Ok((ProjectionMatrix::without_bias(weights, d)?, embeddings));
        }
    }
    Err(Error::Config(format!(
        "could not draw {v} separable unit embeddings in {d} dimensions"
    )))
}

fn unit_vector(d: usize, rng: &mut impl Rng) -> Vec<f32> {
    loop {
        let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return raw.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

/// Largest dot product between distinct embeddings, in 64-bit arithmetic.
pub fn max_cross_dot(embeddings: &[Vec<f32>]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            let dot: f64 = embeddings[i]
                .iter()
                .zip(&embeddings[j])
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum();
            worst = worst.max(dot);
        }
    }
    worst
}

/// Templates for every intent: `templates[intent][k]` is a non-blank label
/// sequence without consecutive repeats.
pub fn draw_templates(spec: &SynthSpec) -> Result<Vec<Vec<Vec<usize>>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);
    let mut seen = HashSet::new();
    let mut templates = Vec::with_capacity(spec.num_intents);
    for intent in 0..spec.num_intents {
        let mut own = Vec::with_capacity(spec.templates_per_intent);
        let borrowed = if intent > 0 { spec.shared_templates } else { 0 };
        for k in 0..borrowed {
            let prev: &Vec<Vec<usize>> = &templates[intent - 1];
            own.push(prev[k % prev.len()].clone());
        }
        let mut attempts = 0;
        while own.len() < spec.templates_per_intent {
            attempts += 1;
            if attempts > MAX_RESAMPLES * spec.templates_per_intent {
                return Err(Error::Config(
                    "label inventory too small for distinct templates".into(),
                ));
            }
            let len = spec.template_len.sample(&mut rng);
            let mut labels: Vec<usize> = Vec::with_capacity(len);
            while labels.len() < len {
                let label = rng.random_range(1..spec.vocab_size);
                if labels.last() != Some(&label) {
                    labels.push(label);
                }
            }
            if seen.insert(labels.clone()) {
                own.push(labels);
            }
        }
        templates.push(own);
    }
    Ok(templates)
}

/// Everything needed to synthesize utterances for one spec.
#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: SynthSpec,
    pub vocab: Vocabulary,
    pub projection: ProjectionMatrix,
    pub embeddings: Vec<Vec<f32>>,
    pub templates: Vec<Vec<Vec<usize>>>,
}

impl Generator {
    pub fn new(spec: &SynthSpec) -> Result<Self> {
        let (projection, embeddings) = plant_projection(spec)?;
        Ok(Self {
            spec: spec.clone(),
            vocab: Vocabulary::synthetic(spec.vocab_size)?,
            projection,
            embeddings,
            templates: draw_templates(spec)?,
        })
    }

    /// Deterministic RNG for utterance `index`, independent of generation order.
    pub fn utterance_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(index as u64 + 1);
        rng
    }

    pub fn generate_utterance(
        &self,
        id: String,
        intent: usize,
        rng: &mut impl Rng,
    ) -> Result<Utterance> {
        if intent >= self.spec.num_intents {
            return Err(Error::LabelOutOfRange {
                label: intent,
                size: self.spec.num_intents,
            });
        }
        let options = &self.templates[intent];
        let template = &options[rng.random_range(0..options.len())];
        self.render(id, intent, template, rng)
    }

    /// Expand a label template into frames.
    pub fn render(
        &self,
        id: String,
        intent: usize,
        template: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Utterance> {
        if template.is_empty() {
            return Err(Error::Empty("template"));
        }
        let d = self.spec.latent_dim;
        let noise = f64::from(self.spec.noise_sigma) / (d as f64).sqrt();
        let blank = self.vocab.blank_index;
        let mut frame_labels = Vec::new();
        for (i, &label) in template.iter().enumerate() {
            if i > 0 {
                let gap = self.spec.gap_len.sample(rng);
                frame_labels.extend(std::iter::repeat_n(blank, gap));
            }
            let run = self.spec.run_len.sample(rng);
            frame_labels.extend(std::iter::repeat_n(label, run));
        }
        let mut frames = Vec::with_capacity(frame_labels.len() * d);
        for &label in &frame_labels {
            for &x in &self.embeddings[label] {
                let jitter: f64 = if noise > 0.0 {
                    noise * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                frames.push((f64::from(x) + jitter) as f32);
            }
        }
        Ok(Utterance {
            id,
            intent,
            true_labels: LabelSequence::new(template.to_vec()),
            seq: LatentSequence::new(frames, d, self.spec.frame_shift_ms)?,
            frame_labels,
        })
    }

    /// All utterances; utterance `i` has intent `i mod K`.
    pub fn generate_all(&self) -> Result<Vec<Utterance>> {
        (0..self.spec.num_utterances())
            .into_par_iter()
            .map(|i| {
                let mut rng = self.utterance_rng(i);
                self.generate_utterance(utterance_id(i), i % self.spec.num_intents, &mut rng)
            })
            .collect()
    }
}

pub fn utterance_id(index: usize) -> String {
    format!("utt{index:05}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub intent: usize,
    pub labels: Vec<usize>,
    pub lseq: String,
}

/// A generated or loaded corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: SynthSpec,
    pub vocab: Vocabulary,
    pub projection: ProjectionMatrix,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn manifest(&self) -> Vec<ManifestRow> {
        self.utterances
            .iter()
            .map(|u| ManifestRow {
                id: u.id.clone(),
                intent: u.intent,
                labels: u.true_labels.ids.clone(),
                lseq: format!("lseq/{}.lseq", u.id),
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<&Utterance> {
        indices.iter().map(|&i| &self.utterances[i]).collect()
    }
}

pub fn generate_corpus(spec: &SynthSpec) -> Result<Corpus> {
    let generator = Generator::new(spec)?;
    let utterances = generator.generate_all()?;
    Ok(Corpus {
        spec: spec.clone(),
        vocab: generator.vocab,
        projection: generator.projection,
        utterances,
    })
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SPEC_FILE: &str = "spec.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const PROJ_FILE: &str = "projection.proj";

/// Writes `spec.json`, `vocab.json`, `projection.proj`, `manifest.jsonl` and
/// one `lseq/<id>.lseq` per utterance under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("lseq"))?;
    let mut spec_text = serde_json::to_string_pretty(&corpus.spec)?;
    spec_text.push('\n');
    fs::write(dir.join(SPEC_FILE), spec_text)?;
    write_vocab(dir.join(VOCAB_FILE), &corpus.vocab)?;
    write_proj(dir.join(PROJ_FILE), &corpus.projection)?;
    let mut manifest = fs::File::create(dir.join(MANIFEST_FILE))?;
    for (row, utt) in corpus.manifest().iter().zip(&corpus.utterances) {
        writeln!(manifest, "{}", serde_json::to_string(row)?)?;
        write_lseq(dir.join(&row.lseq), &utt.seq)?;
    }
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Loads a corpus written by [`write_corpus`]. Planted frame labels are not
/// stored on disk and come back empty.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir: PathBuf = dir.as_ref().to_path_buf();
    let spec: SynthSpec = serde_json::from_slice(&fs::read(dir.join(SPEC_FILE))?)?;
    let vocab = read_vocab(dir.join(VOCAB_FILE))?;
    let projection = read_proj(dir.join(PROJ_FILE))?;
    let rows = read_manifest(dir.join(MANIFEST_FILE))?;
    if rows.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    let utterances = rows
        .into_par_iter()
        .map(|row| {
            Ok(Utterance {
                seq: read_lseq(dir.join(&row.lseq))?,
                id: row.id,
                intent: row.intent,
                true_labels: LabelSequence::new(row.labels),
                frame_labels: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        spec,
        vocab,
        projection,
        utterances,
    })
}

/// One cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Round-robin folds: row `i` is evaluated in fold `i mod k`.
pub fn kfold_split(rows: usize, k: usize) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if rows < k {
        return Err(Error::Config(format!("{rows} rows cannot form {k} folds")));
    }
    Ok((0..k)
        .map(|f| {
            let (eval, train): (Vec<usize>, Vec<usize>) = (0..rows).partition(|i| i % k == f);
            Fold { train, eval }
        })
        .collect())
}

/// Fraction of frames whose projected argmax equals the planted label.
pub fn frame_accuracy<'a>(
    utterances: impl IntoIterator<Item = &'a Utterance>,
    projection: &ProjectionMatrix,
) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for utt in utterances {
        let grid = crate::seqcore::project_softmax(&utt.seq, projection)?;
        let path = crate::seqcore::frame_argmax(&grid);
        hits += path
            .arg_labels
            .iter()
            .zip(&utt.frame_labels)
            .filter(|(a, b)| a == b)
            .count();
        total += utt.frame_labels.len();
    }
    if total == 0 {
        return Err(Error::Empty("planted frame labels"));
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::greedy_decode;
    use crate::seqcore::project_softmax;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            utterances_per_intent: 10,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn noiseless_frames_decode_to_planted_labels() {
        let spec = SynthSpec {
            noise_sigma: 0.0,
            ..small_spec()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let g = Generator::new(&spec).unwrap();
        assert_eq!(
            frame_accuracy(&corpus.utterances, &g.projection).unwrap(),
            1.0
        );
        for utt in &corpus.utterances {
            let grid = project_softmax(&utt.seq, &corpus.projection).unwrap();
            assert_eq!(
                greedy_decode(&grid, &corpus.vocab).unwrap().ids,
                utt.true_labels.ids
            );
        }
    }

    #[test]
    fn zero_scale_gives_uniform_posteriors() {
        let spec = SynthSpec {
            logit_scale: 0.0,
            ..small_spec()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let grid = project_softmax(&corpus.utterances[0].seq, &corpus.projection).unwrap();
        for row in grid.rows() {
            for p in row {
                assert!((p - 1.0 / 41.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_frame_accuracy() {
        let spec = SynthSpec::default();
        let corpus = generate_corpus(&spec).unwrap();
        let acc = frame_accuracy(&corpus.utterances, &corpus.projection).unwrap();
        assert!(acc >= 0.95, "frame accuracy {acc}");
    }

    #[test]
    fn embeddings_are_unit_and_separable() {
        let (_, embeddings) = plant_projection(&SynthSpec::default()).unwrap();
        for e in &embeddings {
            let norm: f64 = e.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        assert!(max_cross_dot(&embeddings) < 1.0);
    }

    #[test]
    fn one_dimension_cannot_separate_many_labels() {
        let spec = SynthSpec {
            latent_dim: 1,
            ..small_spec()
        };
        assert!(plant_projection(&spec).is_err());
    }

    #[test]
    fn degenerate_ranges() {
        let spec = SynthSpec {
            run_len: Span(1, 1),
            gap_len: Span(0, 0),
            noise_sigma: 0.0,
            ..small_spec()
        };
        let g = Generator::new(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let utt = g.render("u".into(), 0, &[3, 7], &mut rng).unwrap();
        assert_eq!(utt.seq.len(), 2);
        let grid = project_softmax(&utt.seq, &g.projection).unwrap();
        assert_eq!(crate::seqcore::frame_argmax(&grid).arg_labels, vec![3, 7]);
    }

    #[test]
    fn length_bounds_for_four_label_template() {
        let g = Generator::new(&small_spec()).unwrap();
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let utt = g.render("u".into(), 0, &[1, 2, 3, 4], &mut rng).unwrap();
            assert!((8..=33).contains(&utt.seq.len()));
            assert_eq!(utt.seq.len(), utt.frame_labels.len());
        }
    }

    #[test]
    fn corpus_is_balanced_and_deterministic() {
        let spec = SynthSpec::default();
        let a = generate_corpus(&spec).unwrap();
        assert_eq!(a.len(), 600);
        let mut counts = [0usize; 6];
        for u in &a.utterances {
            counts[u.intent] += 1;
        }
        assert_eq!(counts, [100; 6]);
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a.utterances, b.utterances);
    }

    #[test]
    fn templates_are_disjoint_across_intents() {
        let templates = draw_templates(&SynthSpec::default()).unwrap();
        let mut owner = std::collections::HashMap::new();
        for (intent, set) in templates.iter().enumerate() {
            for t in set {
                assert!(t.windows(2).all(|w| w[0] != w[1]));
                assert!(t.iter().all(|&l| l != 0));
                if let Some(prev) = owner.insert(t.clone(), intent) {
                    assert_eq!(prev, intent, "template {t:?} shared");
                }
            }
        }
        let shared = draw_templates(&SynthSpec {
            shared_templates: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        assert_eq!(shared[1][0], shared[0][0]);
    }

    #[test]
    fn written_corpus_is_byte_identical() {
        let spec = small_spec();
        let corpus = generate_corpus(&spec).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_corpus(&corpus, a.path()).unwrap();
        write_corpus(&generate_corpus(&spec).unwrap(), b.path()).unwrap();
        for name in [
            MANIFEST_FILE,
            SPEC_FILE,
            VOCAB_FILE,
            PROJ_FILE,
            "lseq/utt00042.lseq",
        ] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
        let rows = read_manifest(a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(rows.len(), 60);
        assert_eq!(rows[7].lseq, "lseq/utt00007.lseq");
        let loaded = load_corpus(a.path()).unwrap();
        assert_eq!(loaded.utterances[13].seq, corpus.utterances[13].seq);
        assert_eq!(loaded.spec, spec);
    }

    #[test]
    fn spec_json_is_snake_case_and_strict() {
        let text = serde_json::to_string(&SynthSpec::default()).unwrap();
        assert!(text.contains("\"noise_sigma\":0.4"));
        assert!(text.contains("\"template_len\":[3,8]"));
        let partial: SynthSpec = serde_json::from_str("{\"num_intents\": 3}").unwrap();
        assert_eq!(partial.num_intents, 3);
        assert_eq!(partial.vocab_size, 41);
        assert!(serde_json::from_str::<SynthSpec>("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn kfold_round_robin() {
        let folds = kfold_split(10, 5).unwrap();
        assert_eq!(folds[0].eval, vec![0, 5]);
        assert_eq!(folds[3].eval, vec![3, 8]);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.eval.clone()).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.train.len() + f.eval.len(), 10);
            assert!(f.train.iter().all(|i| !f.eval.contains(i)));
        }
        for f in kfold_split(13, 5).unwrap() {
            assert!(f.eval.len() == 2 || f.eval.len() == 3);
        }
        assert!(kfold_split(3, 5).is_err());
        assert!(kfold_split(10, 1).is_err());
    }

    #[test]
    fn rejects_invalid_specs() {
        for bad in [
            SynthSpec {
                num_intents: 1,
                ..SynthSpec::default()
            },
            SynthSpec {
                vocab_size: 4,
                ..SynthSpec::default()
            },
            SynthSpec {
                run_len: Span(4, 2),
                ..SynthSpec::default()
            },
            SynthSpec {
                noise_sigma: -1.0,
                ..SynthSpec::default()
            },
        ] {
            assert!(generate_corpus(&bad).is_err());
        }
        let g = Generator::new(&small_spec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(g.generate_utterance("x".into(), 6, &mut rng).is_err());
    }
}
