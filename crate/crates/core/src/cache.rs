//! On-disk feature cache, speaker splits and feature directories.
//!
//! Layout under a cache root:
//!
//! ```text
//! <speaker>/<utterance>.npy        T x n_mels log-mel matrix (f64)
//! <speaker>/<utterance>.frontend   frontend config the matrix was computed with
//! splits/{train,eval,test}.txt     one speaker id per line
//! synthetic.toml                   present when the directory holds a synthetic corpus
//! ```
//!
//! A cached matrix is reused only when its sidecar parses to exactly the
//! requested frontend config. Every file is written by atomic rename, so
//! concurrent writers never expose a partial file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use ndarray_npy::{ReadNpyExt, WriteNpyExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{compute_mel, load_audio, FrontendConfig, MelSpectrogram};
use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::synthetic::{SyntheticCorpus, SyntheticCorpusSpec};
use crate::util::atomic_write;

pub const SPLITS_DIR: &str = "splits";
pub const SYNTHETIC_MANIFEST: &str = "synthetic.toml";
pub const FEATURE_EXT: &str = "npy";
pub const SIDECAR_EXT: &str = "frontend";

/// Speaker count at and above which the fixed 90/10/rest split applies.
pub const FULL_SPLIT_SPEAKERS: usize = 109;
const FULL_TRAIN: usize = 90;
const FULL_EVAL: usize = 10;

pub fn write_matrix(path: &Path, frames: &Array2<f64>) -> Result<()> {
    let mut bytes = Vec::new();
    frames
        .write_npy(&mut bytes)
        .map_err(|e| Error::Data(format!("encoding {}: {e}", path.display())))?;
    atomic_write(path, &bytes)
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Array2::<f64>::read_npy(std::io::BufReader::new(file)).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads a feature matrix together with the frontend config in its sidecar.
pub fn read_features(path: &Path) -> Result<(Array2<f64>, FrontendConfig)> {
    let frames = read_matrix(path)?;
    let sidecar = path.with_extension(SIDECAR_EXT);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    Ok((frames, FrontendConfig::from_sidecar(&text)?))
}

/// Writes a matrix and its frontend sidecar. The matrix goes first so a
/// present sidecar always describes a complete matrix.
pub fn write_features(path: &Path, frames: &Array2<f64>, config: &FrontendConfig) -> Result<()> {
    write_matrix(path, frames)?;
    atomic_write(&path.with_extension(SIDECAR_EXT), config.to_sidecar().as_bytes())
}

#[derive(Debug, Clone)]
pub struct FeatureCache {
    root: PathBuf,
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, speaker_id: &str, utterance_id: &str) -> PathBuf {
        self.root.join(speaker_id).join(format!("{utterance_id}.{FEATURE_EXT}"))
    }

    /// Cached frames, or `None` when missing, unreadable or computed with a different config.
    pub fn lookup(&self, speaker_id: &str, utterance_id: &str, config: &FrontendConfig) -> Option<Array2<f64>> {
        let path = self.path_for(speaker_id, utterance_id);
        match read_features(&path) {
            Ok((frames, stored)) if &stored == config && frames.ncols() == config.n_mels => Some(frames),
            Ok(_) => {
                log::debug!("cache entry {} is stale", path.display());
                None
            }
            Err(_) => None,
        }
    }

    pub fn store(&self, mel: &MelSpectrogram) -> Result<PathBuf> {
        let path = self.path_for(&mel.speaker_id, &mel.utterance_id);
        write_features(&path, &mel.frames, &mel.config)?;
        Ok(path)
    }
}

/// One input file found under a `<speaker>/<utterance>.wav` tree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SourceFile {
    pub speaker_id: String,
    pub utterance_id: String,
    pub path: PathBuf,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Lists files with extension `ext` one level below the speaker directories
/// of `dir`, sorted by speaker then utterance.
pub fn scan_tree(dir: &Path, ext: &str) -> Result<Vec<SourceFile>> {
    let mut files = Vec::new();
    for speaker_dir in sorted_entries(dir)? {
        if !speaker_dir.is_dir() || speaker_dir.file_name().is_some_and(|n| n == SPLITS_DIR) {
            continue;
        }
        let speaker_id = speaker_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        for path in sorted_entries(&speaker_dir)? {
            if path.is_file() && has_ext(&path, ext) {
                files.push(SourceFile {
                    speaker_id: speaker_id.clone(),
                    utterance_id: stem(&path),
                    path,
                });
            }
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no <speaker>/<utterance>.{ext} files under {}",
            dir.display()
        )));
    }
    Ok(files)
}

/// Speaker-level partition into train, eval and test.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpeakerSplit {
    pub train: Vec<String>,
    pub eval: Vec<String>,
    pub test: Vec<String>,
}

impl SpeakerSplit {
    /// Shuffles the speakers with `seed` and partitions them.
    ///
    /// With at least [`FULL_SPLIT_SPEAKERS`] speakers the split is 90 train,
    /// 10 eval and the rest test. Smaller sets use the same proportions
    /// (90:10:9) with at least one eval and one test speaker.
    ///
    /// ```
    /// use avqvc::cache::SpeakerSplit;
    ///
    /// let speakers: Vec<String> = (0..109).map(|i| format!("p{i:03}")).collect();
    /// let split = SpeakerSplit::new(&speakers, 0).unwrap();
    /// assert_eq!((split.train.len(), split.eval.len(), split.test.len()), (90, 10, 9));
    /// ```
    pub fn new(speakers: &[String], seed: u64) -> Result<Self> {
        let unique: BTreeSet<&String> = speakers.iter().collect();
        if unique.len() != speakers.len() {
            return Err(Error::Data("duplicate speaker ids in split input".into()));
        }
        let n = unique.len();
        if n < 4 {
            return Err(Error::Data(format!(
                "a speaker split needs at least 4 speakers (2 train, 1 eval, 1 test), found {n}"
            )));
        }
        let (n_train, n_eval) = if n >= FULL_SPLIT_SPEAKERS {
            (FULL_TRAIN, FULL_EVAL)
        } else {
            let total = (FULL_SPLIT_SPEAKERS) as f64;
            let n_eval = ((n as f64 * FULL_EVAL as f64 / total).floor() as usize).max(1);
            let n_test = ((n as f64 * (total - (FULL_TRAIN + FULL_EVAL) as f64) / total).floor() as usize).max(1);
            (n - n_eval - n_test, n_eval)
        };
        let mut order: Vec<String> = unique.into_iter().cloned().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let take = |range: std::ops::Range<usize>| {
            let mut v = order[range].to_vec();
            v.sort();
            v
        };
        Ok(Self {
            train: take(0..n_train),
            eval: take(n_train..n_train + n_eval),
            test: take(n_train + n_eval..n),
        })
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let dir = root.join(SPLITS_DIR);
        for (name, list) in [("train", &self.train), ("eval", &self.eval), ("test", &self.test)] {
            let mut text = list.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            atomic_write(&dir.join(format!("{name}.txt")), text.as_bytes())?;
        }
        Ok(())
    }

    pub fn read(root: &Path) -> Result<Self> {
        let dir = root.join(SPLITS_DIR);
        let read = |name: &str| -> Result<Vec<String>> {
            let path = dir.join(format!("{name}.txt"));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
        };
        Ok(Self {
            train: read("train")?,
            eval: read("eval")?,
            test: read("test")?,
        })
    }

    pub fn get(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "eval" => Ok(&self.eval),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split {other:?}; expected train, eval or test"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepareSummary {
    pub computed: usize,
    pub reused: usize,
    pub split: SpeakerSplit,
}

/// Computes (or reuses) log-mel features for every wav under `data_dir` and
/// writes the speaker split lists into `cache_root`.
pub fn prepare(data_dir: &Path, cache_root: &Path, config: &FrontendConfig, seed: u64) -> Result<PrepareSummary> {
    config.validate()?;
    let files = scan_tree(data_dir, "wav")?;
    let cache = FeatureCache::new(cache_root);
    let (mut computed, mut reused) = (0, 0);
    for file in &files {
        if cache.lookup(&file.speaker_id, &file.utterance_id, config).is_some() {
            reused += 1;
            continue;
        }
        let mut clip = load_audio(&file.path)?;
        clip.speaker_id = file.speaker_id.clone();
        clip.utterance_id = file.utterance_id.clone();
        let mel = compute_mel(&clip, config).map_err(|e| match e {
            Error::TooShort { len, needed } => Error::Data(format!(
                "{}: {len} samples, need at least {needed}",
                file.path.display()
            )),
            other => other,
        })?;
        cache.store(&mel)?;
        computed += 1;
    }
    let speakers: Vec<String> = files
        .iter()
        .map(|f| f.speaker_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let split = SpeakerSplit::new(&speakers, seed)?;
    split.write(cache_root)?;
    log::info!("prepared {} utterances ({computed} computed, {reused} cached)", files.len());
    Ok(PrepareSummary { computed, reused, split })
}

/// Loads every feature matrix under `dir`. When `speakers` is given only
/// those speakers are kept; when `expected` is given every sidecar must match it.
pub fn load_feature_dir(dir: &Path, speakers: Option<&[String]>, expected: Option<&FrontendConfig>) -> Result<Corpus> {
    let keep: Option<BTreeSet<&str>> = speakers.map(|s| s.iter().map(String::as_str).collect());
    let mut utterances = Vec::new();
    for file in scan_tree(dir, FEATURE_EXT)? {
        if keep.as_ref().is_some_and(|k| !k.contains(file.speaker_id.as_str())) {
            continue;
        }
        let frames = match expected {
            Some(cfg) => {
                let (frames, stored) = read_features(&file.path)?;
                if &stored != cfg {
                    return Err(Error::Compatibility(format!(
                        "{} was computed with [{stored}], expected [{cfg}]",
                        file.path.display()
                    )));
                }
                frames
            }
            None => read_matrix(&file.path)?,
        };
        utterances.push(Utterance {
            speaker_id: file.speaker_id,
            utterance_id: file.utterance_id,
            frames,
        });
    }
    if utterances.is_empty() {
        return Err(Error::EmptyInput(format!("no utterances selected from {}", dir.display())));
    }
    let corpus = Corpus::new(utterances);
    corpus.validate()?;
    Ok(corpus)
}

/// Writes a synthetic corpus as a feature directory with its generating spec.
pub fn write_synthetic_dir(corpus: &SyntheticCorpus, dir: &Path) -> Result<()> {
    for u in &corpus.utterances {
        write_matrix(&dir.join(&u.speaker_id).join(format!("{}.{FEATURE_EXT}", u.utterance_id)), &u.frames)?;
    }
    let spec = toml::to_string(&corpus.spec).map_err(|e| Error::Config(e.to_string()))?;
    atomic_write(&dir.join(SYNTHETIC_MANIFEST), spec.as_bytes())
}

/// The generating spec of a synthetic feature directory, if it is one.
pub fn read_synthetic_spec(dir: &Path) -> Result<Option<SyntheticCorpusSpec>> {
    let path = dir.join(SYNTHETIC_MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}
