//! CBOW with negative sampling.
//!
//! One training example is a target token, the input vectors of its context
//! window and `negative_samples` noise tokens drawn from the unigram^0.75
//! distribution. With `h` the mean of the context input vectors and `u_w`
//! the output vector of token `w`, the example loss is
//!
//! ```text
//! L = -ln σ(h·u_target) - Σ_neg ln σ(-h·u_neg)
//! ```
//!
//! [`negative_sampling_loss`] and [`negative_sampling_grad`] evaluate it on
//! plain slices; the trainer reads rows out of the shared parameter
//! matrices, calls the same gradient routine and writes the step back.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingError, TrainConfig, TrainMode};

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(x)`, stable for large |x|.
#[inline]
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn context_mean(context: &[&[f64]]) -> Vec<f64> {
    let dim = context[0].len();
    let mut h = vec![0.0; dim];
    for row in context {
        for (acc, v) in h.iter_mut().zip(row.iter()) {
            *acc += v;
        }
    }
    let n = context.len() as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss of one CBOW example. `outputs[0]` is the target's output vector,
/// the rest are negatives.
pub fn negative_sampling_loss(context: &[&[f64]], outputs: &[&[f64]]) -> f64 {
    let h = context_mean(context);
    outputs
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let s = dot(&h, u);
            if i == 0 {
                neg_log_sigmoid(s)
            } else {
                neg_log_sigmoid(-s)
            }
        })
        .sum()
}

/// Loss and gradients of one example.
#[derive(Debug, Clone)]
pub struct NsGradient {
    pub loss: f64,
    /// Gradient with respect to each context input vector (identical for
    /// every context slot because `h` is their mean).
    pub context: Vec<f64>,
    /// Gradients with respect to `outputs`, in the same order.
    pub outputs: Vec<Vec<f64>>,
}

pub fn negative_sampling_grad(context: &[&[f64]], outputs: &[&[f64]]) -> NsGradient {
    let h = context_mean(context);
    let dim = h.len();
    let mut grad_h = vec![0.0; dim];
    let mut loss = 0.0;
    let mut out_grads = Vec::with_capacity(outputs.len());
    for (i, u) in outputs.iter().enumerate() {
        let s = dot(&h, u);
        // dL/ds
        let g = if i == 0 {
            loss += neg_log_sigmoid(s);
            sigmoid(s) - 1.0
        } else {
            loss += neg_log_sigmoid(-s);
            sigmoid(s)
        };
        for (gh, uv) in grad_h.iter_mut().zip(u.iter()) {
            *gh += g * uv;
        }
        out_grads.push(h.iter().map(|hv| g * hv).collect());
    }
    let n = context.len() as f64;
    grad_h.iter_mut().for_each(|x| *x /= n);
    NsGradient {
        loss,
        context: grad_h,
        outputs: out_grads,
    }
}

/// Row-major matrix of f64 stored as atomics so several workers can update
/// it without locks. All accesses use relaxed ordering.
pub(crate) struct SharedMatrix {
    dim: usize,
    data: Vec<AtomicU64>,
}

impl SharedMatrix {
    fn from_values(dim: usize, values: Vec<f64>) -> Self {
        SharedMatrix {
            dim,
            data: values
                .into_iter()
                .map(|v| AtomicU64::new(v.to_bits()))
                .collect(),
        }
    }

    fn read_row(&self, row: usize, buf: &mut Vec<f64>) {
        buf.clear();
        let base = row * self.dim;
        buf.extend(
            self.data[base..base + self.dim]
                .iter()
                .map(|a| f64::from_bits(a.load(Ordering::Relaxed))),
        );
    }

    fn add_scaled(&self, row: usize, scale: f64, delta: &[f64]) {
        let base = row * self.dim;
        for (cell, d) in self.data[base..base + self.dim].iter().zip(delta) {
            let cur = f64::from_bits(cell.load(Ordering::Relaxed));
            cell.store((cur + scale * d).to_bits(), Ordering::Relaxed);
        }
    }

    fn into_values(self) -> Vec<f64> {
        self.data
            .into_iter()
            .map(|a| f64::from_bits(a.into_inner()))
            .collect()
    }
}

pub(crate) struct Trainer<'a> {
    pub config: &'a TrainConfig,
    /// Sentences as vocabulary indices, out-of-vocabulary tokens removed.
    pub sentences: &'a [Vec<usize>],
    pub counts: &'a [u64],
    pub is_markup: &'a [bool],
}

impl Trainer<'_> {
    /// `on_epoch` is called after every epoch in deterministic mode with the
    /// current input matrix.
    pub fn run(
        self,
        mode: TrainMode,
        mut on_epoch: Option<super::EpochObserver<'_>>,
    ) -> Result<Vec<f64>, EmbeddingError> {
        let cfg = self.config;
        let vocab = self.counts.len();
        let dim = cfg.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let half = 0.5 / dim as f64;
        let init: Vec<f64> = (0..vocab * dim)
            .map(|_| rng.gen_range(-half..half))
            .collect();
        let input = SharedMatrix::from_values(dim, init);
        let output = SharedMatrix::from_values(dim, vec![0.0; vocab * dim]);

        let noise = WeightedIndex::new(self.counts.iter().map(|&c| (c as f64).powf(0.75)))
            .map_err(|e| EmbeddingError::Training(format!("noise distribution: {e}")))?;
        let train_words: u64 = self.sentences.iter().map(|s| s.len() as u64).sum();
        let keep_prob: Vec<f64> = self
            .counts
            .iter()
            .zip(self.is_markup)
            .map(|(&c, &markup)| {
                if markup || cfg.subsample_threshold <= 0.0 {
                    1.0
                } else {
                    let t = cfg.subsample_threshold * train_words as f64;
                    (((c as f64) / t).sqrt() + 1.0) * t / c as f64
                }
            })
            .collect();

        let shared = Shared {
            cfg,
            input: &input,
            output: &output,
            noise: &noise,
            keep_prob: &keep_prob,
            total: (cfg.epochs as u64 * train_words).max(1),
            processed: AtomicUsize::new(0),
        };

        match mode {
            TrainMode::Deterministic => {
                let mut worker_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                worker_rng.set_stream(1);
                let mut scratch = Scratch::default();
                for epoch in 0..cfg.epochs {
                    for sentence in self.sentences {
                        shared.train_sentence(sentence, epoch, &mut worker_rng, &mut scratch)?;
                    }
                    if let Some(cb) = on_epoch.as_mut() {
                        let snapshot: Vec<f64> = (0..vocab)
                            .flat_map(|r| {
                                let mut buf = Vec::new();
                                input.read_row(r, &mut buf);
                                buf
                            })
                            .collect();
                        cb(epoch, &snapshot);
                    }
                }
            }
            TrainMode::Parallel { workers } => {
                let workers = workers.max(1);
                let shards: Vec<&[Vec<usize>]> = self
                    .sentences
                    .chunks(self.sentences.len().div_ceil(workers).max(1))
                    .collect();
                std::thread::scope(|scope| -> Result<(), EmbeddingError> {
                    let handles: Vec<_> = shards
                        .into_iter()
                        .enumerate()
                        .map(|(w, shard)| {
                            let shared = &shared;
                            scope.spawn(move || -> Result<(), EmbeddingError> {
                                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                                rng.set_stream(1 + w as u64);
                                let mut scratch = Scratch::default();
                                for epoch in 0..cfg.epochs {
                                    for sentence in shard {
                                        shared.train_sentence(
                                            sentence,
                                            epoch,
                                            &mut rng,
                                            &mut scratch,
                                        )?;
                                    }
                                }
                                Ok(())
                            })
                        })
                        .collect();
                    for h in handles {
                        h.join().expect("training worker panicked")?;
                    }
                    Ok(())
                })?;
            }
        }
        Ok(input.into_values())
    }
}

#[derive(Default)]
struct Scratch {
    kept: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

struct Shared<'a> {
    cfg: &'a TrainConfig,
    input: &'a SharedMatrix,
    output: &'a SharedMatrix,
    noise: &'a WeightedIndex<f64>,
    keep_prob: &'a [f64],
    total: u64,
    processed: AtomicUsize,
}

impl Shared<'_> {
    fn learning_rate(&self) -> f64 {
        let done = self.processed.load(Ordering::Relaxed) as f64 / self.total as f64;
        self.cfg.learning_rate * (1.0 - done).max(1e-4)
    }

    fn train_sentence(
        &self,
        sentence: &[usize],
        epoch: usize,
        rng: &mut ChaCha8Rng,
        scratch: &mut Scratch,
    ) -> Result<(), EmbeddingError> {
        scratch.kept.clear();
        for &w in sentence {
            let p = self.keep_prob[w];
            if p >= 1.0 || rng.gen::<f64>() < p {
                scratch.kept.push(w);
            }
        }
        let kept = std::mem::take(&mut scratch.kept);
        let window = self.cfg.window;
        for (pos, &target) in kept.iter().enumerate() {
            let step = self.processed.fetch_add(1, Ordering::Relaxed);
            let lo = pos.saturating_sub(window);
            let hi = (pos + window + 1).min(kept.len());
            let context: Vec<usize> = (lo..hi).filter(|&j| j != pos).map(|j| kept[j]).collect();
            if context.is_empty() {
                continue;
            }
            let mut samples = Vec::with_capacity(1 + self.cfg.negative_samples);
            samples.push(target);
            for _ in 0..self.cfg.negative_samples {
                let n = self.noise.sample(rng);
                if n != target {
                    samples.push(n);
                }
            }
            let loss = self.step(&context, &samples, self.learning_rate(), scratch);
            if !loss.is_finite() {
                scratch.kept = kept;
                return Err(EmbeddingError::NonFiniteLoss { epoch, step });
            }
        }
        // pay back the words dropped by subsampling so the schedule still
        // reaches its floor at the end of training
        self.processed
            .fetch_add(sentence.len() - kept.len(), Ordering::Relaxed);
        scratch.kept = kept;
        Ok(())
    }

    fn step(&self, context: &[usize], samples: &[usize], lr: f64, scratch: &mut Scratch) -> f64 {
        let needed = context.len() + samples.len();
        if scratch.rows.len() < needed {
            scratch.rows.resize_with(needed, Vec::new);
        }
        let (ctx_rows, out_rows) = scratch.rows.split_at_mut(context.len());
        for (buf, &c) in ctx_rows.iter_mut().zip(context) {
            self.input.read_row(c, buf);
        }
        for (buf, &w) in out_rows.iter_mut().zip(samples) {
            self.output.read_row(w, buf);
        }
        let ctx_refs: Vec<&[f64]> = ctx_rows.iter().map(Vec::as_slice).collect();
        let out_refs: Vec<&[f64]> = out_rows[..samples.len()]
            .iter()
            .map(Vec::as_slice)
            .collect();
        let grad = negative_sampling_grad(&ctx_refs, &out_refs);
        for (&w, g) in samples.iter().zip(&grad.outputs) {
            self.output.add_scaled(w, -lr, g);
        }
        for &c in context {
            self.input.add_scaled(c, -lr, &grad.context);
        }
        grad.loss
    }
}
