use cts_core::harness::{
    bench_rtf, crossval_corpus, evaluate, run_system, strip_timing, training_samples,
    CrossvalConfig, Stage, SystemId, TrainSettings, REPORT_SCHEMA,
};
use cts_core::lu::{lu_train, LuConfig, LuModel};
use cts_core::seqcore::LatentSequence;
use cts_core::synth::{generate_corpus, Corpus, SynthSpec, Utterance};
use cts_core::Error;

fn quick_settings() -> TrainSettings {
    TrainSettings {
        hidden: 6,
        layers: 1,
        epochs: 2,
        fine_tune_epochs: 1,
        ..TrainSettings::default()
    }
}

fn small_corpus(per_intent: usize, sigma: f32) -> Corpus {
    generate_corpus(&SynthSpec {
        utterances_per_intent: per_intent,
        noise_sigma: sigma,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn latent_model(corpus: &Corpus, seed: u64) -> LuModel {
    let config = LuConfig {
        hidden: 4,
        layers: 1,
        ..LuConfig::new(corpus.projection.dim(), corpus.spec.num_intents, seed)
    };
    LuModel::init(&config).unwrap()
}

#[test]
fn mode_mismatch_is_rejected() {
    let corpus = small_corpus(2, 0.4);
    let utts: Vec<&Utterance> = corpus.utterances.iter().collect();
    let latent = latent_model(&corpus, 1);
    let err = run_system(
        SystemId::P1,
        &utts,
        &corpus.projection,
        &corpus.vocab,
        &latent,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Mode(_)));
    let text = LuModel::init(&latent.config().clone().with_vocab(corpus.vocab.len())).unwrap();
    for id in [SystemId::E1, SystemId::E2] {
        assert!(matches!(
            run_system(id, &utts, &corpus.projection, &corpus.vocab, &text),
            Err(Error::Mode(_))
        ));
    }
}

#[test]
fn e2_equals_e1_on_one_frame_utterances() {
    let corpus = small_corpus(2, 0.4);
    let model = latent_model(&corpus, 3);
    let singles: Vec<Utterance> = corpus
        .utterances
        .iter()
        .map(|u| Utterance {
            seq: LatentSequence::new(u.seq.frame(u.seq.len() / 2).to_vec(), u.seq.dim(), 10.0)
                .unwrap(),
            ..u.clone()
        })
        .collect();
    let refs: Vec<&Utterance> = singles.iter().collect();
    let e1 = run_system(
        SystemId::E1,
        &refs,
        &corpus.projection,
        &corpus.vocab,
        &model,
    )
    .unwrap();
    let e2 = run_system(
        SystemId::E2,
        &refs,
        &corpus.projection,
        &corpus.vocab,
        &model,
    )
    .unwrap();
    assert_eq!(e1.predictions, e2.predictions);
    assert!(e2.compression_ratios.iter().all(|r| *r == 1.0));
}

#[test]
fn p1_on_noiseless_corpus_matches_gold_text_classification() {
    let corpus = small_corpus(8, 0.0);
    let utts: Vec<&Utterance> = corpus.utterances.iter().collect();
    let config = quick_settings()
        .lu_config(corpus.projection.dim(), corpus.spec.num_intents, 5)
        .with_vocab(corpus.vocab.len());
    let samples = training_samples(SystemId::P1, &utts, &corpus.projection, &corpus.vocab).unwrap();
    let (model, _) = lu_train(&config, &samples).unwrap();
    let run = run_system(
        SystemId::P1,
        &utts,
        &corpus.projection,
        &corpus.vocab,
        &model,
    )
    .unwrap();
    for (sample, (pred, utt)) in samples.iter().zip(run.predictions.iter().zip(&utts)) {
        assert_eq!(pred.id, utt.id);
        assert_eq!(pred.intent, model.classify(&sample.input).unwrap());
    }
}

#[test]
fn stage_times_account_for_total() {
    let corpus = small_corpus(20, 0.4);
    let utts: Vec<&Utterance> = corpus.utterances.iter().collect();
    let latent = latent_model(&corpus, 7);
    let text = LuModel::init(&latent.config().clone().with_vocab(corpus.vocab.len())).unwrap();
    for id in SystemId::ALL {
        let model = if id.uses_text() { &text } else { &latent };
        let run = run_system(id, &utts, &corpus.projection, &corpus.vocab, model).unwrap();
        let sum = run.stage_sum().as_secs_f64();
        let total = run.total.as_secs_f64();
        assert!(
            (total - sum).abs() <= 0.01 * total,
            "{id}: total {total} vs stages {sum}"
        );
        let expected: &[Stage] = match id {
            SystemId::P1 => &[Stage::Project, Stage::Decode, Stage::Embed, Stage::Lu],
            SystemId::E1 => &[Stage::Lu],
            SystemId::E2 => &[Stage::Project, Stage::Summarize, Stage::Lu],
        };
        assert_eq!(run.stages.keys().copied().collect::<Vec<_>>(), expected);
    }
}

#[test]
fn bench_preconditions() {
    let corpus = small_corpus(2, 0.4);
    let utts: Vec<&Utterance> = corpus.utterances.iter().collect();
    let model = latent_model(&corpus, 1);
    assert!(matches!(
        bench_rtf(
            SystemId::E1,
            &utts,
            &corpus.projection,
            &corpus.vocab,
            &model,
            2
        ),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        bench_rtf(
            SystemId::E1,
            &[],
            &corpus.projection,
            &corpus.vocab,
            &model,
            3
        ),
        Err(Error::Empty(_))
    ));
    let bench = bench_rtf(
        SystemId::E1,
        &utts,
        &corpus.projection,
        &corpus.vocab,
        &model,
        3,
    )
    .unwrap();
    assert_eq!(bench.rtfs.len(), 3);
    assert!(bench.rtf() > 0.0);
}

#[test]
fn rtf_is_stable_when_corpus_doubles() {
    let corpus = small_corpus(60, 0.4);
    let model = latent_model(&corpus, 2);
    let all: Vec<&Utterance> = corpus.utterances.iter().collect();
    let half = &all[..all.len() / 2];
    let rtf = |utts: &[&Utterance]| {
        bench_rtf(
            SystemId::E1,
            utts,
            &corpus.projection,
            &corpus.vocab,
            &model,
            7,
        )
        .unwrap()
        .rtf()
    };
    // warm caches before measuring
    rtf(half);
    let (small, large) = (rtf(half), rtf(&all));
    assert!((large / small - 1.0).abs() <= 0.2, "RTF {small} vs {large}");
}

#[test]
fn accuracy_rejects_empty_truth() {
    assert!(matches!(evaluate(&[], &[]), Err(Error::Empty(_))));
}

#[test]
fn crossval_report_shape_schema_and_determinism() {
    let corpus = generate_corpus(&SynthSpec::default()).unwrap();
    let mut config = CrossvalConfig::new(corpus.spec.clone());
    config.train = TrainSettings {
        epochs: 1,
        fine_tune_epochs: 1,
        hidden: 4,
        layers: 1,
        ..TrainSettings::default()
    };
    let report = crossval_corpus(&corpus, &config).unwrap();
    assert_eq!(report.folds.len(), 5);
    for fold in &report.folds {
        assert_eq!(fold.eval_size, 120);
        assert_eq!(fold.train_size, 480);
        assert_eq!(fold.systems.len(), 3);
    }
    for id in SystemId::ALL {
        let mean = report
            .folds
            .iter()
            .map(|f| f.systems[&id].accuracy_pct)
            .sum::<f64>()
            / 5.0;
        let summary = &report.summary.per_system[&id];
        assert!((summary.accuracy_pct - mean).abs() < 1e-9);
        assert!((0.0..=100.0).contains(&summary.accuracy_pct));
        assert!(summary.rtf > 0.0);
    }

    let json = serde_json::to_value(&report).unwrap();
    let text = json.to_string();
    assert!(!text.contains("P2"));
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::JSONSchema::compile(&schema).unwrap();
    if let Err(errors) = validator.validate(&json) {
        let messages: Vec<String> = errors.map(|e| e.to_string()).collect();
        panic!("schema violations: {messages:?}");
    }
    for key in ["config", "folds", "summary", "seed", "version"] {
        assert!(json.get(key).is_some(), "{key}");
    }

    let again = crossval_corpus(&corpus, &config).unwrap();
    let (mut a, mut b) = (json, serde_json::to_value(&again).unwrap());
    strip_timing(&mut a);
    strip_timing(&mut b);
    assert_eq!(a, b);
}

#[test]
fn schema_rejects_a_p2_entry() {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::JSONSchema::compile(&schema).unwrap();
    let system = serde_json::json!({"accuracy_pct": 50.0, "rtf": 0.1, "total_ms": 1.0, "stage_ms": {"lu": 1.0}});
    let compression = serde_json::json!({"mean_ratio": 3.0, "mean_segments_per_label": 1.5});
    let report = serde_json::json!({
        "version": "0", "seed": 1,
        "config": {"synth": {}, "k": 5, "train": {}, "repeats": 3},
        "folds": [],
        "summary": {"per_system": {"P2": system}, "compression": compression}
    });
    assert!(!validator.is_valid(&report));
}
