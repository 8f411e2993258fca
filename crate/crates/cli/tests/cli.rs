use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use tokstd_core::audio::write_wav;
use tokstd_core::encoder::{EncoderParams, EncoderShape};
use tokstd_core::features::{FeatureConfig, FeatureNormalizer};
use tokstd_core::quantizer::Codebook;
use tokstd_core::rng;
use tokstd_core::synth::{render_track, SpeechSynth};
use tokstd_core::tokenizer::Tokenizer;

fn tokstd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tokstd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tokstd(args);
    assert!(
        out.status.success(),
        "tokstd {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = tokstd(&["search", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(tokstd(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn help_lists_every_subcommand() {
    let help = ok(&["--help"]);
    for sub in ["features", "augment", "train", "tokenize", "index", "search", "eval", "selftest"] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn selftest_passes() {
    let out = ok(&["selftest"]);
    let rows: Vec<&str> = out.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert!(rows.len() >= 5);
    assert!(rows.iter().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"training": {"batch_size": 8, "bogus": 1}}"#).unwrap();
    assert_eq!(tokstd(&["selftest", "--cfg", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let out = tokstd(&["search", "--index", s(&dir.path().join("nope")), "--tokens", "1 2 3"]);
    assert_eq!(out.status.code(), Some(2));
}

/// Random (untrained) tokenizer over default MFCC features.
fn random_tokenizer(seed: u64) -> Tokenizer {
    let features = FeatureConfig::default();
    let shape = EncoderShape {
        input_dim: features.dim(),
        hidden_dim: 16,
        embed_dim: 8,
        layers: 1,
    };
    let mut r = rng::stream(seed, "cli-test", 0);
    Tokenizer {
        normalizer: FeatureNormalizer::identity(features.dim()),
        features: Some(features),
        sample_rate: 16_000,
        params: EncoderParams::init(shape, &mut r),
        codebook: Codebook::random_unit(32, 8, &mut r).unwrap(),
        step: 0,
        training: None,
    }
}

#[test]
fn search_on_a_200_segment_index() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    let synth = SpeechSynth::new(10, 12, 3, 5);
    let tracks = root.join("tracks");
    fs::create_dir_all(&tracks).unwrap();
    let mut r = rng::stream(5, "tracks", 0);
    for t in 0..10 {
        let terms: Vec<usize> = (0..12).map(|i| (i + t) % 12).collect();
        let (mut clip, _) = render_track(&synth, &terms, t % 3, (0.1, 0.3), &mut r);
        // exactly ten seconds gives twenty 1 s segments at 0.5 s hop
        clip.samples.resize(160_000, 0.0);
        write_wav(tracks.join(format!("track{t:02}.wav")), &clip).unwrap();
    }
    let query = root.join("query.wav");
    write_wav(&query, &synth.render_term(4, 1, &mut r)).unwrap();
    let tok_dir = root.join("tok");
    random_tokenizer(1).save(&tok_dir).unwrap();

    let index = root.join("index");
    ok(&["index", "--tokenizer", s(&tok_dir), "--tracks", s(&tracks), "--l", "1.0", "--h", "0.5", "--out", s(&index)]);
    let manifest: Value = serde_json::from_slice(&fs::read(index.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["doc_count"], 200);

    let out = ok(&["search", "--index", s(&index), "--query", s(&query), "--topk", "5"]);
    let hits: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(hits.len(), 5);
    for (i, h) in hits.iter().enumerate() {
        assert_eq!(h["rank"], i + 1);
        assert!(h["segment_id"].as_u64().unwrap() < 200);
        assert!(h["track_id"].as_str().unwrap().starts_with("track"));
    }
    let scores: Vec<f64> = hits.iter().map(|h| h["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let out = ok(&["search", "--index", s(&index), "--query", s(&query), "--topk", "3", "--dtw-rerank"]);
    let hits: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(hits.len(), 3);
    assert!(hits.iter().all(|h| h["dtw"].is_array()));
}

fn write_manifest(path: &Path, lines: &[Value]) {
    let text: Vec<String> = lines.iter().map(|v| v.to_string()).collect();
    fs::write(path, text.join("\n") + "\n").unwrap();
}

/// Train, tokenize, index and evaluate on a tiny synthetic corpus.
#[test]
fn end_to_end_pipeline() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    let synth = SpeechSynth::new(8, 5, 5, 11);
    let mut r = rng::stream(11, "corpus", 0);

    let utt_dir = root.join("utts");
    fs::create_dir_all(&utt_dir).unwrap();
    let mut entries = Vec::new();
    for term in 0..5 {
        for spk in 0..4 {
            let name = format!("t{term}_s{spk}.wav");
            write_wav(utt_dir.join(&name), &synth.render_term(term, spk, &mut r)).unwrap();
            entries.push(serde_json::json!({
                "term": format!("term{term}"),
                "wav_path": format!("utts/{name}"),
                "speaker_id": format!("spk{spk}"),
            }));
        }
    }
    let manifest = root.join("train.jsonl");
    write_manifest(&manifest, &entries);
    let cfg = root.join("cfg.json");
    fs::write(
        &cfg,
        r#"{"training": {"k_neg": 4, "encoder": {"input_dim": 48, "hidden_dim": 16, "embed_dim": 8, "layers": 1}},
            "augment": {"reverb_prob": 0.5},
            "mtwv": {"beta": 20.0}}"#,
    )
    .unwrap();

    let train = |out: &Path| {
        ok(&[
            "train", "--cfg", s(&cfg), "--manifest", s(&manifest), "--out", s(out),
            "--steps", "12", "--batch-size", "4", "--codebook-size", "16", "--seed", "3", "--deterministic",
        ]);
    };
    let (run_a, run_b) = (root.join("run_a"), root.join("run_b"));
    train(&run_a);
    train(&run_b);
    for f in ["metrics.csv", "final/encoder.json", "final/encoder.f32", "final/codebook.json", "final/codebook.f32"] {
        let (a, b) = (fs::read(run_a.join(f)).unwrap(), fs::read(run_b.join(f)).unwrap());
        assert!(a == b, "{f} differs between identical deterministic runs");
    }
    let metrics = fs::read_to_string(run_a.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,l_contrast,l_robust,l_commit,total,entropy,sinkhorn_converged"));
    assert_eq!(metrics.lines().count(), 13);
    let tok = run_a.join("final");

    let out = ok(&["tokenize", "--tokenizer", s(&tok), "--in", s(&utt_dir.join("t0_s0.wav"))]);
    let line: Value = serde_json::from_str(out.trim()).unwrap();
    assert!(!line["tokens"].as_array().unwrap().is_empty());
    assert!(line["tokens"].as_array().unwrap().iter().all(|t| t.as_u64().unwrap() < 16));

    // archive: two tracks by the held-out speaker
    let tracks = root.join("tracks");
    fs::create_dir_all(&tracks).unwrap();
    let mut truth = Vec::new();
    for t in 0..2 {
        let order: Vec<usize> = (0..5).map(|i| (i + 2 * t) % 5).collect();
        let (clip, occ) = render_track(&synth, &order, 4, (0.3, 0.6), &mut r);
        write_wav(tracks.join(format!("arch{t}.wav")), &clip).unwrap();
        for o in occ {
            truth.push(serde_json::json!({
                "term": format!("term{}", o.term),
                "track_id": format!("arch{t}"),
                "start_s": o.start_s,
                "end_s": o.end_s,
            }));
        }
    }
    let truth_path = root.join("truth.jsonl");
    write_manifest(&truth_path, &truth);
    let index = root.join("index");
    ok(&[
        "index", "--ckpt", s(&tok.join("encoder.json")), "--codebook", s(&tok.join("codebook.json")),
        "--tracks", s(&tracks), "--out", s(&index),
    ]);

    let q_dir = root.join("queries");
    fs::create_dir_all(&q_dir).unwrap();
    let mut queries = Vec::new();
    for term in 0..5 {
        let p = q_dir.join(format!("q{term}.wav"));
        write_wav(&p, &synth.render_term(term, 3, &mut r)).unwrap();
        queries.push(serde_json::json!({"term": format!("term{term}"), "wav_path": s(&p)}));
    }
    let q_path = root.join("queries.jsonl");
    write_manifest(&q_path, &queries);
    let conds = root.join("conditions.json");
    fs::write(&conds, r#"[{"kind": "clean"}, {"kind": "noise", "snr_db": 5.0}, {"kind": "noise-reverb", "snr_db": 5.0}]"#).unwrap();
    let report_dir = root.join("report");
    let csv = ok(&[
        "eval", "--index", s(&index), "--queries", s(&q_path), "--truth", s(&truth_path),
        "--conditions", s(&conds), "--out", s(&report_dir),
    ]);
    assert_eq!(csv.lines().count(), 4, "{csv}");
    for row in csv.lines().skip(1) {
        let mtwv: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(mtwv <= 1.0);
    }
    let json: Value = serde_json::from_slice(&fs::read(report_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["conditions"].as_array().unwrap().len(), 3);
}

#[test]
fn features_and_augment_write_outputs() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    let synth = SpeechSynth::new(6, 2, 1, 2);
    let mut r = rng::stream(2, "feat", 0);
    let wavs = root.join("wavs");
    fs::create_dir_all(&wavs).unwrap();
    for t in 0..2 {
        write_wav(wavs.join(format!("w{t}.wav")), &synth.render_term(t, 0, &mut r)).unwrap();
    }
    let feats = root.join("feats");
    ok(&["features", "--in", s(&wavs), "--out", s(&feats), "--mfcc", "13", "--pad-s", "1.0"]);
    let header: Value = serde_json::from_slice(&fs::read(feats.join("w0.feat.json")).unwrap()).unwrap();
    assert_eq!(header["shape"][1], 39);
    assert_eq!(header["shape"][0], 98);

    let aug = root.join("aug");
    let args = ["augment", "--in", s(&wavs), "--out", s(&aug), "--snr-lo", "5", "--snr-hi", "5", "--reverb-prob", "0", "--seed", "9"];
    ok(&args);
    let draws = fs::read_to_string(aug.join("draws.jsonl")).unwrap();
    assert_eq!(draws.lines().count(), 2);
    let first: Value = serde_json::from_str(draws.lines().next().unwrap()).unwrap();
    assert_eq!(first["snr_db"], 5.0);
    let a = fs::read(aug.join("w0.wav")).unwrap();
    ok(&args);
    assert_eq!(a, fs::read(aug.join("w0.wav")).unwrap(), "augmentation is not reproducible");
}
