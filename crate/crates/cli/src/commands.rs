use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::Serialize;

use avqvc::audio::{compute_mel, load_audio, write_wav, FrontendConfig, MelSpectrogram};
use avqvc::cache::{
    load_feature_dir, prepare, read_features, read_synthetic_spec, write_features, write_synthetic_dir, SpeakerSplit,
};
use avqvc::config::RunConfig;
use avqvc::conversion::{synthesize_waveform, ConversionRequest, DEFAULT_GRIFFIN_LIM_ITERS};
use avqvc::corpus::Corpus;
use avqvc::evaluation::{codebook_sweep, mcd_from_log_mel, score_checkpoint, SweepConfig};
use avqvc::synthetic::generate_synthetic_corpus;
use avqvc::training::{load_checkpoint, Mode, TrainOutputs, Trainer};
use avqvc::{atomic_write, Error, Result};

use crate::manifest::RunManifest;
use crate::CACHE_ENV;

pub const CHECKPOINT_FILE: &str = "checkpoint.avqvc";
pub const METRICS_FILE: &str = "metrics.csv";
/// The trained codebook as a plain K x D array, for inspection.
pub const CODEBOOK_FILE: &str = "codebook.npy";

/// Options shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice in the run (overrides all config seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute log-mel features for <speaker>/<utterance>.wav files and write speaker splits.
    Prepare(PrepareArgs),
    /// Write a synthetic feature corpus with known speaker offsets.
    SynthCorpus(SynthArgs),
    /// Train a model on a feature directory.
    Train(TrainArgs),
    /// Convert a source utterance to a target speaker's voice.
    Convert(ConvertArgs),
    /// Mel-cepstral distortion between two utterances, or a disentanglement score.
    Eval(EvalArgs),
    /// Train and score one model per codebook size on a synthetic corpus.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory laid out as <speaker>/<utterance>.wav.
    #[arg(long)]
    data: PathBuf,
    /// Feature cache directory (default: $AVQVC_CACHE_DIR).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature directory from `prepare` or `synth-corpus` (default: $AVQVC_CACHE_DIR).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for the checkpoint, metrics log and manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    /// avqvc (triplet swap objective) or vqvc (self reconstruction only).
    #[arg(long)]
    mode: Option<Mode>,
    /// Continue from the checkpoint already in --out.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Source utterance: .wav or a .npy feature file with its .frontend sidecar.
    #[arg(long)]
    source: PathBuf,
    /// Target utterance: .wav or .npy as for --source.
    #[arg(long)]
    target: PathBuf,
    /// Output: .wav writes the waveform plus a .npy mel next to it; .npy writes the mel only.
    #[arg(long)]
    out: PathBuf,
    /// Phase reconstruction iterations for waveform output.
    #[arg(long, default_value_t = DEFAULT_GRIFFIN_LIM_ITERS)]
    iterations: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference utterance (.wav or .npy log-mel) for MCD.
    #[arg(long, requires = "converted")]
    reference: Option<PathBuf>,
    /// Converted utterance (.wav or .npy log-mel) for MCD.
    #[arg(long, requires = "reference")]
    converted: Option<PathBuf>,
    /// Checkpoint to score for speaker disentanglement on --data.
    #[arg(long, requires = "data", conflicts_with = "reference")]
    ckpt: Option<PathBuf>,
    /// Feature directory for disentanglement scoring.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Restrict --data to one speaker split (train, eval or test).
    #[arg(long)]
    split: Option<String>,
    /// JSON report path.
    #[arg(long, default_value = "eval.json")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Synthetic corpus directory from `synth-corpus`; omitted means generate from [synthetic].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for sweep.tsv, sweep.json and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated codebook sizes.
    #[arg(long, value_delimiter = ',', default_values_t = avqvc::evaluation::DEFAULT_SWEEP_SIZES)]
    sizes: Vec<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[command(flatten)]
    common: Common,
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::SynthCorpus(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Convert(a) => cmd_convert(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn cache_root(flag: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .ok_or_else(|| Error::Config(format!("{what} not given and ${CACHE_ENV} is unset")))
}

fn validated(common: &Common) -> Result<RunConfig> {
    let cfg = common.load()?.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_prepare(a: PrepareArgs) -> Result<()> {
    let cfg = validated(&a.common)?;
    let cache = cache_root(a.cache, "--cache")?;
    let mut manifest = RunManifest::new("prepare", &cfg);
    let summary = prepare(&a.data, &cache, &cfg.frontend, cfg.split.seed)?;
    println!(
        "{} utterances cached ({} computed, {} reused); speakers train {} / eval {} / test {}",
        summary.computed + summary.reused,
        summary.computed,
        summary.reused,
        summary.split.train.len(),
        summary.split.eval.len(),
        summary.split.test.len()
    );
    manifest.inputs.push(a.data);
    manifest.outputs.push(cache.clone());
    manifest.write(&cache.join("prepare.manifest.json"))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(n) = a.speakers {
        cfg.synthetic.n_speakers = n;
    }
    if let Some(n) = a.utterances {
        cfg.synthetic.utterances_per_speaker = n;
    }
    if let Some(n) = a.feature_dim {
        cfg.synthetic.feature_dim = n;
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    let corpus = generate_synthetic_corpus(&cfg.synthetic)?;
    write_synthetic_dir(&corpus, &a.out)?;
    let speakers: Vec<String> = (0..cfg.synthetic.n_speakers).map(avqvc::synthetic::speaker_name).collect();
    match SpeakerSplit::new(&speakers, cfg.split.seed) {
        Ok(split) => split.write(&a.out)?,
        Err(e) => log::warn!("no speaker split written: {e}"),
    }
    println!("wrote {} utterances to {}", corpus.utterances.len(), a.out.display());
    let mut manifest = RunManifest::new("synth-corpus", &cfg);
    manifest.outputs.push(a.out.clone());
    manifest.write(&a.out.join("synth-corpus.manifest.json"))
}

/// Loads the training speakers of a feature directory.
fn training_corpus(dir: &Path, frontend: &FrontendConfig) -> Result<Corpus> {
    let split = SpeakerSplit::read(dir).ok();
    let speakers = split.as_ref().map(|s| s.train.as_slice());
    let expected = if read_synthetic_spec(dir)?.is_some() { None } else { Some(frontend) };
    load_feature_dir(dir, speakers, expected)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
    }
    if let Some(mode) = a.mode {
        cfg.train.mode = mode;
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    let data = cache_root(a.data, "--data")?;
    let corpus = training_corpus(&data, &cfg.frontend)?;
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    let metrics = a.out.join(METRICS_FILE);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let mut trainer = if a.resume {
        let mut ckpt = load_checkpoint(&ckpt_path)?;
        ckpt.train.steps = cfg.train.steps;
        Trainer::resume(ckpt, &corpus)?
    } else {
        if metrics.exists() {
            std::fs::remove_file(&metrics).map_err(|e| Error::Io {
                path: metrics.clone(),
                source: e,
            })?;
        }
        Trainer::new(cfg.model.clone(), cfg.train.clone(), cfg.weights, cfg.frontend.clone(), &corpus)?
    };
    let outputs = TrainOutputs {
        metrics_log: Some(metrics.clone()),
        checkpoint: Some(ckpt_path.clone()),
    };
    let reports = trainer.run_until(cfg.train.steps, &outputs)?;
    if let Some(last) = reports.last() {
        println!(
            "step {} total {:.5} recon {:.5} latent {:.5} speaker {:.5} diff {:.5}",
            trainer.checkpoint().step,
            last.total,
            last.recon,
            last.latent,
            last.speaker,
            last.diff
        );
    } else {
        avqvc::training::save_checkpoint(trainer.checkpoint(), &ckpt_path)?;
    }
    println!("checkpoint {}", ckpt_path.display());
    let codebook = a.out.join(CODEBOOK_FILE);
    avqvc::cache::write_matrix(&codebook, trainer.checkpoint().model.codebook.entries())?;
    let mut manifest = RunManifest::new("train", &cfg);
    manifest.inputs.push(data);
    manifest.outputs.extend([ckpt_path, metrics, codebook]);
    manifest.write(&a.out.join("train.manifest.json"))
}

fn is_wav(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Log-mel features from a wav (computed with `frontend`) or a .npy with sidecar.
fn load_mel(path: &Path, frontend: &FrontendConfig) -> Result<MelSpectrogram> {
    if is_wav(path) {
        compute_mel(&load_audio(path)?, frontend)
    } else {
        let (frames, config) = read_features(path)?;
        Ok(MelSpectrogram {
            frames,
            config,
            speaker_id: path
                .parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            utterance_id: stem(path),
        })
    }
}

fn cmd_convert(a: ConvertArgs) -> Result<()> {
    let cfg = validated(&a.common)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let request = ConversionRequest {
        source: load_mel(&a.source, &ckpt.frontend)?,
        target: load_mel(&a.target, &ckpt.frontend)?,
    };
    let converted = request.run(&ckpt)?;
    let mel_path = a.out.with_extension("npy");
    write_features(&mel_path, &converted.frames, &converted.config)?;
    let mut manifest = RunManifest::new("convert", &cfg);
    manifest.inputs.extend([a.ckpt.clone(), a.source.clone(), a.target.clone()]);
    manifest.outputs.push(mel_path.clone());
    println!("mel {}", mel_path.display());
    if is_wav(&a.out) {
        let clip = synthesize_waveform(&converted.frames, &converted.config, a.iterations)?;
        write_wav(&a.out, &clip)?;
        println!("waveform {}", a.out.display());
        manifest.outputs.push(a.out.clone());
    }
    manifest.write(&a.out.with_extension("manifest.json"))
}

#[derive(Debug, Serialize)]
struct McdReport {
    reference: PathBuf,
    converted: PathBuf,
    mcd_db: f64,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = validated(&a.common)?;
    let mut manifest = RunManifest::new("eval", &cfg);
    let json = match (&a.reference, &a.converted, &a.ckpt, &a.data) {
        (Some(r), Some(c), None, _) => {
            let reference = load_mel(r, &cfg.frontend)?;
            let converted = load_mel(c, &cfg.frontend)?;
            if reference.config != converted.config {
                return Err(Error::Compatibility(format!(
                    "reference uses [{}], converted uses [{}]",
                    reference.config, converted.config
                )));
            }
            let mcd_db = mcd_from_log_mel(&reference.frames, &converted.frames)?;
            println!("MCD {mcd_db:.4} dB");
            manifest.inputs.extend([r.clone(), c.clone()]);
            serde_json::to_string_pretty(&McdReport {
                reference: r.clone(),
                converted: c.clone(),
                mcd_db,
            })
        }
        (None, None, Some(ck), Some(dir)) => {
            let ckpt = load_checkpoint(ck)?;
            let speakers = match &a.split {
                Some(name) => Some(SpeakerSplit::read(dir)?.get(name)?.to_vec()),
                None => None,
            };
            let expected = if read_synthetic_spec(dir)?.is_some() { None } else { Some(&ckpt.frontend) };
            let corpus = load_feature_dir(dir, speakers.as_deref(), expected)?;
            let score = score_checkpoint(&ckpt, &corpus)?;
            println!(
                "separation {:.4} (intra {:.4}, inter {:.4}); swap/self L1 {:.4}",
                score.separation, score.intra_cosine, score.inter_cosine, score.swap_ratio
            );
            manifest.inputs.extend([ck.clone(), dir.clone()]);
            serde_json::to_string_pretty(&score)
        }
        _ => {
            return Err(Error::Config(
                "eval needs either --reference and --converted, or --ckpt and --data".into(),
            ))
        }
    }
    .expect("report serializes");
    atomic_write(&a.out, json.as_bytes())?;
    manifest.outputs.push(a.out.clone());
    manifest.write(&a.out.with_extension("manifest.json"))
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
    }
    let mut manifest = RunManifest::new("sweep", &cfg);
    if let Some(dir) = &a.data {
        let spec = read_synthetic_spec(dir)?.ok_or_else(|| {
            Error::Data(format!(
                "{} is not a synthetic corpus; the sweep needs ground-truth speaker offsets",
                dir.display()
            ))
        })?;
        cfg.synthetic = spec;
        manifest.inputs.push(dir.clone());
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    manifest.config = cfg.clone();
    let corpus = generate_synthetic_corpus(&cfg.synthetic)?;
    if let Some(dir) = &a.data {
        let on_disk = load_feature_dir(dir, None, None)?;
        if on_disk != corpus.to_corpus() {
            return Err(Error::Data(format!(
                "{} does not match the corpus its synthetic.toml describes",
                dir.display()
            )));
        }
    }
    let sweep = SweepConfig {
        sizes: a.sizes,
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        weights: cfg.weights,
        held_out_fraction: cfg.split.held_out_fraction,
        split_seed: cfg.split.seed,
    };
    let report = codebook_sweep(&sweep, &corpus)?;
    let tsv = a.out.join("sweep.tsv");
    let json = a.out.join("sweep.json");
    atomic_write(&tsv, report.to_tsv().as_bytes())?;
    atomic_write(&json, report.to_json().as_bytes())?;
    print!("{}", report.to_tsv());
    manifest.outputs.extend([tsv, json]);
    manifest.write(&a.out.join("sweep.manifest.json"))
}
