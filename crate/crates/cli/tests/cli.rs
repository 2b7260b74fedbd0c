use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use avqvc::audio::{write_wav, AudioClip, FrontendConfig};
use avqvc::cache::{read_features, write_features};
use avqvc::training::load_checkpoint;

const SMALL: &str = r#"
[model]
latent_dim = 8
encoder_layers = 2
encoder_width = 16
decoder_layers = 2
decoder_width = 16
kernel_size = 3
codebook_size = 16

[train]
batch_size = 2
segment_len = 16
learning_rate = 0.001
log_every = 0

[synthetic]
n_speakers = 4
utterances_per_speaker = 4
feature_dim = 80
min_frames = 24
max_frames = 40
"#;

fn avqvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avqvc"))
        .args(args)
        .env_remove("AVQVC_CACHE_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    corpus: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("run.toml");
    std::fs::write(&config, SMALL).unwrap();
    let corpus = root.join("corpus");
    ok(&avqvc(&["synth-corpus", "--out", s(&corpus), "--config", s(&config), "--seed", "3"]));
    Fixture {
        _dir: dir,
        root,
        config,
        corpus,
    }
}

fn train(f: &Fixture, out: &Path, steps: &str) -> Output {
    avqvc(&[
        "train", "--data", s(&f.corpus), "--out", s(out), "--config", s(&f.config), "--steps", steps, "--seed", "3",
    ])
}

#[test]
fn train_writes_a_loadable_checkpoint_and_is_repeatable() {
    let f = fixture();
    let a = f.root.join("a");
    let b = f.root.join("b");
    ok(&train(&f, &a, "10"));
    ok(&train(&f, &b, "10"));
    let ckpt = load_checkpoint(&a.join("checkpoint.avqvc")).unwrap();
    assert_eq!(ckpt.step, 10);
    for name in ["checkpoint.avqvc", "metrics.csv", "codebook.npy"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let codebook = avqvc::cache::read_matrix(&a.join("codebook.npy")).unwrap();
    assert_eq!(&codebook, ckpt.model.codebook.entries());
    assert!(a.join("train.manifest.json").exists());
    // Re-running into the same directory reproduces the same bytes.
    let before = std::fs::read(a.join("metrics.csv")).unwrap();
    ok(&train(&f, &a, "10"));
    assert_eq!(std::fs::read(a.join("metrics.csv")).unwrap(), before);
}

#[test]
fn convert_rejects_mismatched_frontends_and_writes_outputs() {
    let f = fixture();
    let run = f.root.join("run");
    ok(&train(&f, &run, "3"));
    let ckpt = run.join("checkpoint.avqvc");
    let src = f.corpus.join("spk00").join("spk00_u000.npy");
    let tgt = f.corpus.join("spk01").join("spk01_u000.npy");
    let (frames, _) = (avqvc::cache::read_matrix(&src).unwrap(), ());
    let good = f.root.join("good").join("src.npy");
    write_features(&good, &frames, &FrontendConfig::default()).unwrap();
    let target = f.root.join("good").join("tgt.npy");
    write_features(&target, &avqvc::cache::read_matrix(&tgt).unwrap(), &FrontendConfig::default()).unwrap();
    let bad = f.root.join("bad").join("src.npy");
    let other = FrontendConfig {
        hop_size: 200,
        ..FrontendConfig::default()
    };
    write_features(&bad, &frames, &other).unwrap();

    let out = avqvc(&["convert", "--ckpt", s(&ckpt), "--source", s(&bad), "--target", s(&target), "--out", s(&f.root.join("x.npy"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible"));

    let wav = f.root.join("conv").join("out.wav");
    std::fs::create_dir_all(wav.parent().unwrap()).unwrap();
    ok(&avqvc(&[
        "convert", "--ckpt", s(&ckpt), "--source", s(&good), "--target", s(&target), "--out", s(&wav), "--iterations", "2",
    ]));
    let (mel, config) = read_features(&wav.with_extension("npy")).unwrap();
    assert_eq!(mel.nrows(), frames.nrows());
    assert_eq!(config, FrontendConfig::default());
    assert!(wav.exists());
    assert!(wav.with_extension("manifest.json").exists());
}

#[test]
fn eval_of_identical_inputs_is_zero() {
    let f = fixture();
    let src = f.corpus.join("spk00").join("spk00_u001.npy");
    let mel = f.root.join("m.npy");
    write_features(&mel, &avqvc::cache::read_matrix(&src).unwrap(), &FrontendConfig::default()).unwrap();
    let report = f.root.join("eval.json");
    ok(&avqvc(&["eval", "--reference", s(&mel), "--converted", s(&mel), "--out", s(&report)]));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["mcd_db"].as_f64(), Some(0.0));
}

#[test]
fn eval_scores_a_checkpoint_on_a_split() {
    let f = fixture();
    let run = f.root.join("run");
    ok(&train(&f, &run, "3"));
    let report = f.root.join("score.json");
    ok(&avqvc(&[
        "eval", "--ckpt", s(&run.join("checkpoint.avqvc")), "--data", s(&f.corpus), "--out", s(&report),
    ]));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(json["separation"].as_f64().is_some());
}

fn write_wav_corpus(root: &Path, speakers: usize) {
    for spk in 0..speakers {
        std::fs::create_dir_all(root.join(format!("p{spk:02}"))).unwrap();
        for utt in 0..2 {
            let freq = 200.0 + 50.0 * spk as f64 + 10.0 * utt as f64;
            let samples = (0..4000)
                .map(|i| (0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin()) as f32)
                .collect();
            let path = root.join(format!("p{spk:02}")).join(format!("u{utt}.wav"));
            write_wav(&path, &AudioClip::new(samples, "", "")).unwrap();
        }
    }
}

#[test]
fn prepare_is_seeded_and_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("wavs");
    write_wav_corpus(&data, 6);
    let (a, b) = (dir.path().join("cache_a"), dir.path().join("cache_b"));
    ok(&avqvc(&["prepare", "--data", s(&data), "--cache", s(&a), "--seed", "5"]));
    ok(&avqvc(&["prepare", "--data", s(&data), "--cache", s(&b), "--seed", "5"]));
    let mut seen = Vec::new();
    for name in ["train", "eval", "test"] {
        let p = Path::new("splits").join(format!("{name}.txt"));
        let text = std::fs::read_to_string(a.join(&p)).unwrap();
        assert_eq!(text, std::fs::read_to_string(b.join(&p)).unwrap());
        seen.extend(text.lines().map(String::from));
    }
    let n = seen.len();
    seen.sort();
    seen.dedup();
    assert_eq!((n, seen.len()), (6, 6));
    let (frames, config) = read_features(&a.join("p00").join("u0.npy")).unwrap();
    assert_eq!((frames.ncols(), config), (80, FrontendConfig::default()));
    assert!(a.join("prepare.manifest.json").exists());

    // Training straight from the prepared cache uses the train split.
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    ok(&avqvc(&["train", "--data", s(&a), "--out", s(&dir.path().join("run")), "--config", s(&cfg), "--steps", "2"]));
}

#[test]
fn prepare_reports_empty_and_missing_directories() {
    let dir = tempfile::tempdir().unwrap();
    let out = avqvc(&["prepare", "--data", s(dir.path()), "--cache", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = avqvc(&["prepare", "--data", s(&dir.path().join("nope")), "--cache", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_name_the_key_and_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nstepz = 3\n").unwrap();
    let out = avqvc(&["synth-corpus", "--out", s(&dir.path().join("c")), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));

    let out = avqvc(&["train", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus-flag"));
}

#[test]
fn help_lists_config_keys() {
    for cmd in ["prepare", "synth-corpus", "train", "convert", "eval", "sweep"] {
        let out = avqvc(&[cmd, "--help"]);
        ok(&out);
        let text = String::from_utf8_lossy(&out.stdout);
        for key in ["train.steps", "model.codebook_size", "frontend.hop_size", "weights.lambda", "seed"] {
            assert!(text.contains(key), "{cmd} --help lacks {key}");
        }
    }
}

#[test]
fn sweep_writes_sorted_tables() {
    let f = fixture();
    let out = f.root.join("sweep");
    ok(&avqvc(&[
        "sweep", "--data", s(&f.corpus), "--out", s(&out), "--sizes", "32,8", "--steps", "3", "--config", s(&f.config),
        "--seed", "3",
    ]));
    let tsv = std::fs::read_to_string(out.join("sweep.tsv")).unwrap();
    let ks: Vec<&str> = tsv.lines().skip(2).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ks, ["8", "32"]);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
    assert!(out.join("sweep.manifest.json").exists());
}

#[test]
fn cache_root_comes_from_the_environment() {
    let f = fixture();
    let out = Command::new(env!("CARGO_BIN_EXE_avqvc"))
        .args(["train", "--out", s(&f.root.join("env")), "--config", s(&f.config), "--steps", "1"])
        .env("AVQVC_CACHE_DIR", &f.corpus)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    ok(&out);
    let out = avqvc(&["train", "--out", s(&f.root.join("env2")), "--steps", "1"]);
    assert_eq!(out.status.code(), Some(1));
}
