//! `tokstd`: noise-robust speech tokenization and spoken term detection.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use tokstd_core::alignment::{AlignMode, DtwOptions};
use tokstd_core::audio::{decimate, load_wav, write_wav, AudioClip};
use tokstd_core::augment::sample_distortion;
use tokstd_core::config::PipelineConfig;
use tokstd_core::evaluation::{run_experiment, tokenize_tracks, Condition, Experiment, Query, TruthRecord};
use tokstd_core::features::{pad_to_fixed, read_features, write_features, MfccExtractor};
use tokstd_core::quantizer::TokenSequence;
use tokstd_core::retrieval::{build_index, load_index, save_index, search, SegmentRecord};
use tokstd_core::rng::derive_seed;
use tokstd_core::tokenizer::Tokenizer;
use tokstd_core::training::{train, TargetMode, Utterance, UtterancePairSource};
use tokstd_core::{selftest, Error, Result};

/// Sub-directory of an index holding the tokenizer that built it.
const INDEX_TOKENIZER_DIR: &str = "tokenizer";

#[derive(Parser)]
#[command(name = "tokstd", version, about = "Noise-robust speech tokenizer and spoken term detection")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline configuration (JSON). Flags override it; it overrides defaults.
    #[arg(long, global = true, value_name = "FILE")]
    cfg: Option<PathBuf>,
    /// Global seed; every module stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded end to end, for bit-identical artifacts.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeat for trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Extract MFCC features from every WAV file in a directory.
    Features(FeaturesArgs),
    /// Write distorted (noise, reverberation) copies of WAV files.
    Augment(AugmentArgs),
    /// Train the encoder and codebook from a dataset manifest.
    Train(TrainArgs),
    /// Print the token sequence of WAV files as JSON lines.
    Tokenize(TokenizeArgs),
    /// Segment, tokenize and index archive tracks.
    Index(IndexArgs),
    /// Search an index with a spoken query; prints hits as JSON lines.
    Search(SearchArgs),
    /// Score queries against an index under acoustic conditions.
    Eval(EvalArgs),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    mfcc: Option<usize>,
    #[arg(long)]
    win_ms: Option<f64>,
    #[arg(long)]
    hop_ms: Option<f64>,
    /// Pad clips shorter than this many seconds with zero context.
    #[arg(long)]
    pad_s: Option<f64>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "DIR")]
    noise_dir: Option<String>,
    #[arg(long, value_name = "DIR")]
    rir_dir: Option<String>,
    #[arg(long)]
    snr_lo: Option<f64>,
    #[arg(long)]
    snr_hi: Option<f64>,
    #[arg(long)]
    reverb_prob: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSONL lines `{term, wav_path | feat_path, speaker_id?}`.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    codebook_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Use argmax one-hot targets instead of the transport plan.
    #[arg(long)]
    argmax_targets: bool,
    /// Train without distortion.
    #[arg(long)]
    no_augment: bool,
    /// Distort both utterances of a pair.
    #[arg(long)]
    distort_both: bool,
    /// Keep one partner per frame on the alignment path.
    #[arg(long)]
    one_to_one: bool,
}

#[derive(Args)]
struct TokenizerArgs {
    /// Directory written by `train` (its `final/` sub-directory) or an index.
    #[arg(long, value_name = "DIR", conflicts_with_all = ["ckpt", "codebook"])]
    tokenizer: Option<PathBuf>,
    /// Encoder manifest (`encoder.json`).
    #[arg(long, value_name = "FILE", requires = "codebook")]
    ckpt: Option<PathBuf>,
    /// Codebook manifest (`codebook.json`).
    #[arg(long, value_name = "FILE", requires = "ckpt")]
    codebook: Option<PathBuf>,
}

impl TokenizerArgs {
    fn load(&self) -> Result<Tokenizer> {
        match (&self.tokenizer, &self.ckpt, &self.codebook) {
            (Some(dir), _, _) => {
                let nested = dir.join(INDEX_TOKENIZER_DIR);
                Tokenizer::load(if nested.is_dir() { &nested } else { dir })
            }
            (None, Some(c), Some(b)) => Tokenizer::load_files(c, b),
            _ => Err(Error::Config("give --tokenizer DIR or both --ckpt and --codebook".into())),
        }
    }
}

#[derive(Args)]
struct TokenizeArgs {
    #[command(flatten)]
    tokenizer: TokenizerArgs,
    /// A WAV file or a directory of them.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Treat inputs as archive segments rather than padded term utterances.
    #[arg(long)]
    segment: bool,
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    tokenizer: TokenizerArgs,
    /// Directory of archive WAV tracks.
    #[arg(long, value_name = "DIR")]
    tracks: PathBuf,
    /// Segment length, seconds.
    #[arg(long = "l")]
    length: Option<f64>,
    /// Segment hop, seconds.
    #[arg(long = "h")]
    hop: Option<f64>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, value_name = "DIR")]
    index: PathBuf,
    /// Spoken query (WAV).
    #[arg(long, value_name = "WAV", required_unless_present = "tokens")]
    query: Option<PathBuf>,
    /// Query given directly as space-separated token ids.
    #[arg(long, conflicts_with = "query")]
    tokens: Option<String>,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    #[arg(long)]
    dtw_rerank: bool,
    #[arg(long)]
    nprobe: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    index: PathBuf,
    /// JSONL lines `{term, wav_path, condition?}`.
    #[arg(long, value_name = "FILE")]
    queries: PathBuf,
    /// JSONL lines `{term, track_id, start_s, end_s}`.
    #[arg(long, value_name = "FILE")]
    truth: PathBuf,
    /// JSON array of conditions; defaults to clean plus the SNR grid.
    #[arg(long, value_name = "FILE")]
    conditions: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainEntry {
    term: String,
    wav_path: Option<String>,
    feat_path: Option<String>,
    speaker_id: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryEntry {
    term: String,
    wav_path: String,
    #[serde(default)]
    condition: Option<String>,
    #[serde(default)]
    id: Option<String>,
}

#[derive(Serialize)]
struct TokenLine<'a> {
    file: String,
    tokens: &'a [u32],
}

#[derive(Serialize)]
struct HitLine<'a> {
    rank: usize,
    segment_id: u32,
    track_id: &'a str,
    start: f64,
    score: f64,
    stage1: f32,
    stage2: f64,
    stage3: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dtw: Option<(f64, f64)>,
    low_confidence: bool,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::Dataset(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(v);
    }
    Ok(out)
}

fn io_err(path: &Path, e: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Relative manifest paths resolve against the manifest's directory.
fn resolve(manifest: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    v.sort();
    if v.is_empty() {
        return Err(Error::Dataset(format!("no .wav files in {}", dir.display())));
    }
    Ok(v)
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "clip".into(), |s| s.to_string_lossy().into_owned())
}

fn load_at(path: &Path, sample_rate: u32) -> Result<AudioClip> {
    decimate(&load_wav(path)?, sample_rate)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load_or_default(g.cfg.as_deref())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
        cfg.training.seed = derive_seed(s, "training", 0);
        cfg.augment.seed = derive_seed(s, "augment", 0);
    }
    if let Some(t) = g.threads {
        cfg.threads = Some(t);
    }
    if g.deterministic {
        cfg.threads = Some(1);
    }
    Ok(cfg)
}

fn cmd_features(mut cfg: PipelineConfig, a: &FeaturesArgs) -> Result<()> {
    let f = &mut cfg.features;
    f.n_mfcc = a.mfcc.unwrap_or(f.n_mfcc);
    f.win_ms = a.win_ms.unwrap_or(f.win_ms);
    f.hop_ms = a.hop_ms.unwrap_or(f.hop_ms);
    f.pad_s = a.pad_s.unwrap_or(f.pad_s);
    cfg.validate()?;
    let files = wav_files(&a.input)?;
    create_dir(&a.out)?;
    let extractor = MfccExtractor::new(&cfg.features, cfg.sample_rate)?;
    files.par_iter().try_for_each(|p| -> Result<()> {
        let clip = load_at(p, cfg.sample_rate)?;
        let seq = if clip.duration() < cfg.features.pad_s {
            pad_to_fixed(&clip, None, cfg.features.pad_s)?.features(&extractor, &cfg.features)?
        } else {
            extractor.extract(&clip)?
        };
        write_features(&seq.with_source_id(p.display().to_string()), &a.out, &stem(p))?;
        Ok(())
    })?;
    info!("wrote features for {} files to {}", files.len(), a.out.display());
    Ok(())
}

fn cmd_augment(mut cfg: PipelineConfig, a: &AugmentArgs) -> Result<()> {
    let g = &mut cfg.augment;
    g.noise_dir = a.noise_dir.clone().or(g.noise_dir.take());
    g.rir_dir = a.rir_dir.clone().or(g.rir_dir.take());
    g.snr_lo = a.snr_lo.unwrap_or(g.snr_lo);
    g.snr_hi = a.snr_hi.unwrap_or(g.snr_hi);
    g.reverb_prob = a.reverb_prob.unwrap_or(g.reverb_prob);
    cfg.validate()?;
    let spec = cfg.augment.build(cfg.sample_rate)?;
    let files = wav_files(&a.input)?;
    create_dir(&a.out)?;
    let draws = files
        .par_iter()
        .enumerate()
        .map(|(i, p)| -> Result<String> {
            let clip = load_at(p, cfg.sample_rate)?;
            let (out, draw) = sample_distortion(&clip, &spec, 0..clip.len(), i as u64)?;
            write_wav(a.out.join(format!("{}.wav", stem(p))), &out)?;
            Ok(serde_json::json!({
                "file": p.display().to_string(),
                "snr_db": draw.snr_db,
                "noise_index": draw.noise_index,
                "rir_index": draw.rir_index,
            })
            .to_string())
        })
        .collect::<Result<Vec<_>>>()?;
    let log = a.out.join("draws.jsonl");
    fs::write(&log, draws.join("\n") + "\n").map_err(|e| io_err(&log, e))?;
    info!("wrote {} distorted files to {}", files.len(), a.out.display());
    Ok(())
}

fn cmd_train(mut cfg: PipelineConfig, a: &TrainArgs) -> Result<()> {
    let t = &mut cfg.training;
    t.steps = a.steps.unwrap_or(t.steps);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.lr = a.lr.unwrap_or(t.lr);
    t.codebook_size = a.codebook_size.unwrap_or(t.codebook_size);
    t.checkpoint_every = a.checkpoint_every.unwrap_or(t.checkpoint_every);
    if a.argmax_targets {
        t.targets = TargetMode::ArgmaxOneHot;
    }
    cfg.validate()?;

    let entries: Vec<TrainEntry> = read_jsonl(&a.manifest)?;
    let mut terms: Vec<String> = entries.iter().map(|e| e.term.clone()).collect();
    terms.sort();
    terms.dedup();
    let extractor = MfccExtractor::new(&cfg.features, cfg.sample_rate)?;
    let utts = entries
        .par_iter()
        .map(|e| -> Result<Utterance> {
            let term = terms.binary_search(&e.term).expect("term was collected");
            match (&e.wav_path, &e.feat_path) {
                (Some(w), None) => {
                    let clip = load_at(&resolve(&a.manifest, w), cfg.sample_rate)?;
                    Utterance::from_audio(term, e.speaker_id.clone(), &clip, &cfg.features, &extractor)
                }
                (None, Some(f)) => Ok(Utterance {
                    term,
                    speaker: e.speaker_id.clone(),
                    padded: None,
                    features: read_features(&resolve(&a.manifest, f))?,
                }),
                _ => Err(Error::Dataset(format!(
                    "entry for term {:?} needs exactly one of wav_path and feat_path",
                    e.term
                ))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    info!("{} utterances of {} terms", utts.len(), terms.len());

    let augment = if a.no_augment {
        None
    } else {
        Some(cfg.augment.build(cfg.sample_rate)?)
    };
    let align = DtwOptions {
        band: None,
        mode: if a.one_to_one { AlignMode::OneToOne } else { AlignMode::Full },
    };
    let mut source = UtterancePairSource::new(
        utts,
        cfg.features.clone(),
        cfg.sample_rate,
        augment,
        align,
        derive_seed(cfg.training.seed, "pair-source", 0),
    )?
    .distort_both(a.distort_both);
    create_dir(&a.out)?;
    let p = a.out.join("config.json");
    fs::write(&p, serde_json::to_vec_pretty(&cfg)?).map_err(|e| io_err(&p, e))?;
    let outcome = train(&cfg.training, &mut source, Some(&a.out))?;
    if let Some(last) = outcome.log.last() {
        info!(
            "step {}: loss {:.4}, codebook entropy {:.3}",
            last.step, last.total, last.entropy
        );
    }
    info!("tokenizer written to {}", a.out.join("final").display());
    Ok(())
}

fn cmd_tokenize(a: &TokenizeArgs) -> Result<()> {
    let tok = a.tokenizer.load()?;
    let files = wav_files(&a.input)?;
    let seqs = files
        .par_iter()
        .map(|p| -> Result<TokenSequence> {
            let clip = load_at(p, tok.sample_rate)?;
            if a.segment {
                tok.tokenize_segment(&clip)
            } else {
                tok.tokenize_term(&clip)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = io::stdout().lock();
    for (p, s) in files.iter().zip(&seqs) {
        let line = serde_json::to_string(&TokenLine {
            file: p.display().to_string(),
            tokens: &s.tokens,
        })?;
        writeln!(out, "{line}").map_err(|e| io_err(Path::new("<stdout>"), e))?;
    }
    Ok(())
}

fn cmd_index(mut cfg: PipelineConfig, a: &IndexArgs) -> Result<()> {
    cfg.segment_length = a.length.unwrap_or(cfg.segment_length);
    cfg.segment_hop = a.hop.unwrap_or(cfg.segment_hop);
    cfg.validate()?;
    let tok = a.tokenizer.load()?;
    let files = wav_files(&a.tracks)?;
    let per_track = files
        .par_iter()
        .map(|p| -> Result<Vec<SegmentRecord>> {
            let track = vec![(stem(p), load_at(p, tok.sample_rate)?)];
            tokenize_tracks(&tok, &track, cfg.segment_length, cfg.segment_hop)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<SegmentRecord> = per_track.into_iter().flatten().collect();
    let idx = build_index(&records, tok.codebook.size(), &cfg.index)?;
    let store = tokstd_core::retrieval::SegmentStore::new(records);
    let (length, hop) = (cfg.segment_length, cfg.segment_hop);
    save_index(&a.out, &idx, &store, |m| {
        m.segment_length = Some(length);
        m.segment_hop = Some(hop);
        m.tokenizer_dir = Some(INDEX_TOKENIZER_DIR.into());
    })?;
    tok.save(&a.out.join(INDEX_TOKENIZER_DIR))?;
    info!(
        "indexed {} segments from {} tracks into {}",
        store.len(),
        files.len(),
        a.out.display()
    );
    Ok(())
}

fn index_tokenizer(dir: &Path, tokenizer_dir: Option<&str>) -> Result<Tokenizer> {
    let sub = tokenizer_dir.ok_or_else(|| {
        Error::Index(format!("{}: index has no tokenizer; rebuild it with `tokstd index`", dir.display()))
    })?;
    Tokenizer::load(&dir.join(sub))
}

fn cmd_search(mut cfg: PipelineConfig, a: &SearchArgs) -> Result<()> {
    if a.dtw_rerank {
        cfg.search.dtw_rerank = true;
    }
    cfg.search.nprobe = a.nprobe.unwrap_or(cfg.search.nprobe);
    if a.topk == 0 {
        return Err(Error::Config("--topk must be positive".into()));
    }
    cfg.search.n3 = cfg.search.n3.max(a.topk);
    cfg.search.n2 = cfg.search.n2.max(cfg.search.n3);
    cfg.search.n1 = cfg.search.n1.max(cfg.search.n2);
    cfg.validate()?;
    let (idx, store, manifest) = load_index(&a.index)?;
    let tok = match (&a.query, manifest.tokenizer_dir.as_deref()) {
        (Some(_), t) => Some(index_tokenizer(&a.index, t)?),
        (None, Some(t)) => Tokenizer::load(&a.index.join(t)).ok(),
        (None, None) => None,
    };
    let query = match (&a.query, &a.tokens) {
        (Some(p), _) => {
            let tok = tok.as_ref().expect("loaded above");
            tok.tokenize_term(&load_at(p, tok.sample_rate)?)?
        }
        (None, Some(s)) => TokenSequence::from_tokens(
            s.split_whitespace()
                .map(|t| t.parse::<u32>().map_err(|e| Error::Config(format!("bad token {t:?}: {e}"))))
                .collect::<Result<_>>()?,
        ),
        (None, None) => unreachable!("clap requires one of them"),
    };
    let unit = match &tok {
        Some(t) if cfg.search.dtw_rerank => Some(t.codebook.normalized()?),
        _ => None,
    };
    let res = search(&query, &idx, &store, &cfg.search, unit.as_ref().map(|u| u.view()))?;
    if res.low_confidence {
        warn!("no candidate shares a token with the query");
    }
    let mut out = io::stdout().lock();
    for (rank, h) in res.hits.iter().take(a.topk).enumerate() {
        let line = serde_json::to_string(&HitLine {
            rank: rank + 1,
            segment_id: h.segment_id,
            track_id: &h.track_id,
            start: h.start,
            score: h.dtw.map_or(h.stage3, |d| d.1),
            stage1: h.stage1,
            stage2: h.stage2,
            stage3: h.stage3,
            dtw: h.dtw,
            low_confidence: res.low_confidence,
        })?;
        writeln!(out, "{line}").map_err(|e| io_err(Path::new("<stdout>"), e))?;
    }
    info!(
        "stage timings: {:?} / {:?} / {:?} / {:?}",
        res.timings.stage1, res.timings.stage2, res.timings.stage3, res.timings.rerank
    );
    Ok(())
}

fn cmd_eval(cfg: PipelineConfig, a: &EvalArgs) -> Result<()> {
    cfg.validate()?;
    let (idx, store, manifest) = load_index(&a.index)?;
    let tok = index_tokenizer(&a.index, manifest.tokenizer_dir.as_deref())?;
    let entries: Vec<QueryEntry> = read_jsonl(&a.queries)?;
    let queries = entries
        .iter()
        .enumerate()
        .map(|(i, e)| -> Result<Query> {
            Ok(Query {
                id: e.id.clone().unwrap_or_else(|| format!("q{i}")),
                term: e.term.clone(),
                clip: load_at(&resolve(&a.queries, &e.wav_path), tok.sample_rate)?,
                condition: e.condition.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<TruthRecord> = read_jsonl(&a.truth)?;
    let conditions: Vec<Condition> = match &a.conditions {
        Some(p) => serde_json::from_slice(&fs::read(p).map_err(|e| io_err(p, e))?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => Condition::standard_set(),
    };
    // evaluation banks always include reverberation responses
    let mut banks = cfg.augment.clone();
    banks.reverb_prob = banks.reverb_prob.max(1e-3);
    let spec = banks.build(tok.sample_rate)?;
    let exp = Experiment {
        tokenizer: &tok,
        index: &idx,
        store: &store,
        queries: &queries,
        truth: &truth,
        conditions,
        noise_bank: spec.noise_bank,
        rir_bank: spec.rir_bank,
        search: cfg.search.clone(),
        mtwv: cfg.mtwv.clone(),
        seed: derive_seed(cfg.seed, "evaluation", 0),
    };
    let report = run_experiment(&exp)?;
    report.write(&a.out)?;
    print!("{}", report.csv());
    Ok(())
}

fn cmd_selftest(cfg: PipelineConfig) -> Result<bool> {
    let checks = selftest::run(cfg.seed)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} passed, {failed} failed", checks.len() - failed);
    Ok(failed == 0)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load_config(&cli.global)?;
    let threads = cfg.threads.unwrap_or(0);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        warn!("thread pool already initialised: {e}");
    }
    match &cli.command {
        Command::Features(a) => cmd_features(cfg, a)?,
        Command::Augment(a) => cmd_augment(cfg, a)?,
        Command::Train(a) => cmd_train(cfg, a)?,
        Command::Tokenize(a) => cmd_tokenize(a)?,
        Command::Index(a) => cmd_index(cfg, a)?,
        Command::Search(a) => cmd_search(cfg, a)?,
        Command::Eval(a) => cmd_eval(cfg, a)?,
        Command::Selftest => return cmd_selftest(cfg),
    }
    Ok(true)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parameter(_) => 1,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
