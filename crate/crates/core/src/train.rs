//! Mini-batch training with teacher forcing, gradient clipping and Adam.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_vocab, load_pretrained_vectors, ExamplePair};
use crate::error::{Error, Result};
use crate::eval::{bleu4_corpus, generate_all};
use crate::model::{Graph2Seq, ModelConfig, PreparedGraph};
use crate::tensor::{clip_gradients, AdamState, Real, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub epochs: usize,
    /// Stop after this many dev evaluations without improvement; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub min_freq: usize,
    pub pretrained_vectors: Option<PathBuf>,
    /// Stop once dev BLEU reaches this value.
    pub target_bleu: Option<f64>,
    /// Evaluate on dev every this many epochs.
    pub dev_every: usize,
    /// Worker threads for dev-set generation.
    pub jobs: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 30,
            clip_norm: 20.0,
            epochs: 20,
            patience: 5,
            seed: 1,
            min_freq: 1,
            pretrained_vectors: None,
            target_bleu: None,
            dev_every: 1,
            jobs: 1,
            model: ModelConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Token-averaged training loss over the epoch.
    pub train_loss: f64,
    pub dev_bleu: Option<f64>,
    /// Mean pre-clip gradient norm over the epoch's batches.
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    pub clipped_batches: usize,
    pub batches: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Real> {
    /// The best-dev model, or the final one when no dev set was given.
    pub model: Graph2Seq<T>,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_dev_bleu: Option<f64>,
    /// Pretrained-vector coverage of the (source, target) vocabularies.
    pub coverage: Option<(f64, f64)>,
}

/// CSV with columns `epoch,train_loss,dev_bleu,grad_norm_mean`.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,dev_bleu,grad_norm_mean\n");
    for m in metrics {
        let dev = m.dev_bleu.map(|b| b.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", m.epoch, m.train_loss, dev, m.grad_norm_mean);
    }
    out
}

fn validate(config: &TrainConfig) -> Result<()> {
    let bad = |what: &str| Err(Error::Config(format!("{what} must be positive")));
    if !(config.lr > 0.0) {
        return bad("lr");
    }
    if !(config.clip_norm > 0.0) {
        return bad("clip_norm");
    }
    if config.batch_size == 0 {
        return bad("batch_size");
    }
    if config.epochs == 0 {
        return bad("epochs");
    }
    if config.min_freq == 0 {
        return bad("min_freq");
    }
    if config.dev_every == 0 {
        return bad("dev_every");
    }
    Ok(())
}

pub fn train<T: Real>(config: &TrainConfig, train: &[ExamplePair], dev: &[ExamplePair]) -> Result<TrainOutcome<T>> {
    train_with(config, train, dev, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with<T: Real>(
    config: &TrainConfig,
    train: &[ExamplePair],
    dev: &[ExamplePair],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>> {
    validate(config)?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let (src, tgt) = build_vocab(train, config.min_freq);
    let mut model = Graph2Seq::<T>::new(config.model.clone(), src, tgt, config.seed)?;
    let coverage = match &config.pretrained_vectors {
        Some(path) => {
            let enc = model.encoder.embedding;
            let dec = model.decoder.embedding;
            let a = load_pretrained_vectors(path, &model.src_vocab, model.params.value_mut(enc))?;
            let b = load_pretrained_vectors(path, &model.tgt_vocab, model.params.value_mut(dec))?;
            Some((a, b))
        }
        None => None,
    };

    let examples: Vec<(PreparedGraph, Vec<usize>)> = train
        .iter()
        .map(|p| (model.prepare(&p.query), model.target_ids(&p.target)))
        .collect();
    let mut adam = AdamState::new(&model.params, T::lit(config.lr));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let clip = T::lit(config.clip_norm);

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut metrics = Vec::new();
    let mut best: Option<(f64, usize, Graph2Seq<T>)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut nll, mut tokens) = (0.0, 0usize);
        let (mut norm_sum, mut norm_max, mut clipped) = (0.0, 0.0f64, 0);
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(&PreparedGraph, &[usize])> =
                chunk.iter().map(|&i| (&examples[i].0, examples[i].1.as_slice())).collect();
            let (loss, n, grads) = {
                let mut tape = Tape::new(&model.params);
                let (loss, n) = model.batch_loss(&mut tape, &batch, Some(&mut dropout_rng))?;
                let value = tape.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b + 1,
                        loss: value,
                    });
                }
                (value, n, tape.backward(loss)?)
            };
            model.params.accumulate(&grads);
            let norm = clip_gradients(&mut model.params, clip).to_f64().unwrap_or(f64::NAN);
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                    loss: norm,
                });
            }
            if norm > config.clip_norm {
                clipped += 1;
            }
            adam.step(&mut model.params);
            nll += loss * n as f64;
            tokens += n;
            norm_sum += norm;
            norm_max = norm_max.max(norm);
            batches += 1;
        }

        let dev_bleu = if !dev.is_empty() && epoch % config.dev_every == 0 {
            Some(dev_score(&model, dev, config.jobs)?)
        } else {
            None
        };
        let m = EpochMetrics {
            epoch,
            train_loss: nll / tokens as f64,
            dev_bleu,
            grad_norm_mean: norm_sum / batches as f64,
            grad_norm_max: norm_max,
            clipped_batches: clipped,
            batches,
        };
        on_epoch(&m);
        metrics.push(m);

        if let Some(score) = dev_bleu {
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            if config.target_bleu.is_some_and(|t| score >= t) {
                break;
            }
            if config.patience > 0 && since_best >= config.patience {
                break;
            }
        }
    }

    let last_epoch = metrics.len();
    Ok(match best {
        Some((score, epoch, best_model)) => TrainOutcome {
            model: best_model,
            metrics,
            best_epoch: epoch,
            best_dev_bleu: Some(score),
            coverage,
        },
        None => TrainOutcome {
            model,
            metrics,
            best_epoch: last_epoch,
            best_dev_bleu: None,
            coverage,
        },
    })
}

/// Corpus BLEU-4 of beam-search outputs on `pairs`.
pub fn dev_score<T: Real>(model: &Graph2Seq<T>, pairs: &[ExamplePair], jobs: usize) -> Result<f64> {
    let outputs = generate_all(model, pairs, &model.config.decoder, jobs)?;
    let hyps: Vec<Vec<String>> = outputs.into_iter().map(|o| o.unwrap_or_default()).collect();
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.target.clone()).collect();
    Ok(bleu4_corpus(&hyps, &refs)?.bleu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        let mut c = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        c.model.word_dim = 8;
        c.model.encoder.hidden_dim = 6;
        c.model.encoder.hop_size = 2;
        c.model.decoder.hidden_size = 8;
        c.model.decoder.max_decode_len = 10;
        c
    }

    fn pairs() -> Vec<ExamplePair> {
        vec![
            ExamplePair::new("SELECT a WHERE b > val_0", "which a where b more than val_0").unwrap(),
            ExamplePair::new("SELECT COUNT c", "how many c").unwrap(),
            ExamplePair::new("SELECT d", "which d").unwrap(),
        ]
    }

    #[test]
    fn same_seed_same_losses() {
        let a = train::<f32>(&small(), &pairs(), &[]).unwrap();
        let b = train::<f32>(&small(), &pairs(), &[]).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.metrics[0].batches, 2);
    }

    #[test]
    fn best_dev_is_maximal() {
        let p = pairs();
        let out = train::<f32>(&small(), &p, &p).unwrap();
        let best = out.best_dev_bleu.unwrap();
        assert!(out.metrics.iter().all(|m| m.dev_bleu.unwrap() <= best));
    }

    #[test]
    fn csv_header_and_rows() {
        let out = train::<f32>(&small(), &pairs(), &[]).unwrap();
        let csv = metrics_csv(&out.metrics);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,dev_bleu,grad_norm_mean");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,"));
    }

    #[test]
    fn rejects_bad_config_and_empty_set() {
        let mut c = small();
        c.lr = 0.0;
        assert!(train::<f32>(&c, &pairs(), &[]).is_err());
        assert!(train::<f32>(&small(), &[], &[]).is_err());
    }
}
