use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Mode;
use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Two crops from one speaker (different utterances) and one crop from another speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub x1: Array2<f64>,
    pub x2: Array2<f64>,
    pub x3: Array2<f64>,
    /// Corpus indices of the three source utterances.
    pub sources: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    Triplets(Vec<Triplet>),
    Singles(Vec<Array2<f64>>),
}

/// Draws triplets and single crops from a corpus.
#[derive(Debug, Clone)]
pub struct TripletSampler<'a> {
    corpus: &'a Corpus,
    speakers: Vec<Vec<usize>>,
    segment_len: usize,
}

impl<'a> TripletSampler<'a> {
    pub fn new(corpus: &'a Corpus, segment_len: usize) -> Result<Self> {
        let by_speaker = corpus.by_speaker();
        if by_speaker.len() < 2 {
            let who = by_speaker.keys().next().copied().unwrap_or("<none>");
            return Err(Error::Data(format!(
                "triplet sampling needs at least 2 speakers, corpus only has {who:?}"
            )));
        }
        let short: Vec<&str> = by_speaker
            .iter()
            .filter(|(_, idx)| idx.len() < 2)
            .map(|(s, _)| *s)
            .collect();
        if !short.is_empty() {
            return Err(Error::Data(format!(
                "speakers with fewer than 2 utterances: {}",
                short.join(", ")
            )));
        }
        Ok(Self {
            corpus,
            speakers: by_speaker.into_values().collect(),
            segment_len,
        })
    }

    fn crop(&self, index: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let frames = &self.corpus.utterances[index].frames;
        let t = frames.nrows();
        if t <= self.segment_len {
            return frames.clone();
        }
        let start = rng.gen_range(0..=t - self.segment_len);
        frames.slice(s![start..start + self.segment_len, ..]).to_owned()
    }

    pub fn sample_triplet(&self, rng: &mut ChaCha8Rng) -> Triplet {
        let a = rng.gen_range(0..self.speakers.len());
        let mut b = rng.gen_range(0..self.speakers.len() - 1);
        if b >= a {
            b += 1;
        }
        let pair: Vec<usize> = self.speakers[a].choose_multiple(rng, 2).copied().collect();
        let third = *self.speakers[b].choose(rng).expect("speaker has utterances");
        let x1 = self.crop(pair[0], rng);
        let x2 = self.crop(pair[1], rng);
        let x3 = self.crop(third, rng);
        Triplet {
            x1,
            x2,
            x3,
            sources: [pair[0], pair[1], third],
        }
    }

    pub fn sample_single(&self, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let index = rng.gen_range(0..self.corpus.len());
        self.crop(index, rng)
    }
}

/// Deterministic batch sequence: the batch for step `n` depends only on the
/// seed and `n`, so any number of producers yields the same sequence.
#[derive(Debug, Clone)]
pub struct BatchSchedule<'a> {
    sampler: TripletSampler<'a>,
    seed: u64,
    batch_size: usize,
    mode: Mode,
}

impl<'a> BatchSchedule<'a> {
    pub fn new(sampler: TripletSampler<'a>, seed: u64, batch_size: usize, mode: Mode) -> Self {
        Self {
            sampler,
            seed,
            batch_size,
            mode,
        }
    }

    pub fn rng_for_step(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        rng
    }

    pub fn batch(&self, step: u64) -> Batch {
        let mut rng = self.rng_for_step(step);
        match self.mode {
            Mode::Avqvc => Batch::Triplets(
                (0..self.batch_size)
                    .map(|_| self.sampler.sample_triplet(&mut rng))
                    .collect(),
            ),
            Mode::Vqvc => Batch::Singles(
                (0..self.batch_size)
                    .map(|_| self.sampler.sample_single(&mut rng))
                    .collect(),
            ),
        }
    }

    /// Batches for `steps`, produced by `workers` background threads through
    /// bounded per-worker queues and consumed in step order.
    pub fn for_each_prefetched<F>(&self, steps: std::ops::Range<u64>, workers: usize, mut consume: F) -> Result<()>
    where
        F: FnMut(u64, Batch) -> Result<()>,
    {
        if workers == 0 {
            for step in steps {
                consume(step, self.batch(step))?;
            }
            return Ok(());
        }
        let start = steps.start;
        std::thread::scope(|scope| {
            let receivers: Vec<_> = (0..workers)
                .map(|w| {
                    let (tx, rx) = std::sync::mpsc::sync_channel::<Batch>(2);
                    let steps = steps.clone();
                    scope.spawn(move || {
                        for step in steps.filter(|s| (s - start) as usize % workers == w) {
                            if tx.send(self.batch(step)).is_err() {
                                break;
                            }
                        }
                    });
                    rx
                })
                .collect();
            for step in steps {
                let rx = &receivers[(step - start) as usize % workers];
                let batch = rx
                    .recv()
                    .map_err(|_| Error::Data(format!("batch producer for step {step} stopped")))?;
                consume(step, batch)?;
            }
            Ok(())
        })
    }
}
