//! Training loops: noise-free stage 1, channel stage 2 with frozen
//! encoders, and the joint from-scratch baseline.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::channel::interleaved_noise;
use crate::codec::{chamfer, ChannelMode, CodecConfig, Model, Sample};
use crate::dataset_io::{Checkpoint, Dataset, RngState, Stage};
use crate::error::{Error, Result};
use crate::nn::{Adam, Gradients, Tape, Tensor};

/// Mean training Chamfer distance per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

pub fn prepare_samples(cfg: &CodecConfig, ds: &Dataset) -> Result<Vec<Sample>> {
    ds.clouds.iter().map(|c| Sample::new(cfg, c.clone())).collect()
}

const MODEL_KEY: &str = "model.";

/// Hyperparameters stored alongside the weights: every codec field plus
/// the training settings that produced them.
fn hyper(cfg: &ExperimentConfig, epochs: usize, snr_db: Option<f64>) -> Result<BTreeMap<String, String>> {
    let table = toml::Value::try_from(&cfg.model).map_err(|e| Error::Config(e.to_string()))?;
    let mut h = BTreeMap::new();
    if let toml::Value::Table(t) = table {
        for (k, v) in t {
            h.insert(format!("{MODEL_KEY}{k}"), v.to_string());
        }
    }
    h.insert("train.seed".into(), cfg.train.seed.to_string());
    h.insert("train.lr".into(), cfg.train.lr.to_string());
    h.insert("train.batch".into(), cfg.train.batch.to_string());
    h.insert("train.epochs".into(), epochs.to_string());
    if let Some(s) = snr_db {
        h.insert("train.snr_db".into(), s.to_string());
    }
    Ok(h)
}

/// Codec configuration recorded in a checkpoint.
pub fn codec_config(ckpt: &Checkpoint) -> Result<CodecConfig> {
    let text: String = ckpt
        .hyper
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(MODEL_KEY).map(|k| format!("{k} = {v}\n")))
        .collect();
    if text.is_empty() {
        return Err(Error::Checkpoint("checkpoint lacks model configuration".into()));
    }
    let cfg: CodecConfig = toml::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Copies every parameter of `model` from `ckpt`; all must be present.
pub fn restore(model: &mut Model, ckpt: &Checkpoint) -> Result<()> {
    let n = ckpt.load_into(&mut model.store)?;
    if n != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint provides {n} of the model's {} parameters",
            model.store.len()
        )));
    }
    Ok(())
}

/// Rebuilds the model a checkpoint was taken from.
pub fn load_model(ckpt: &Checkpoint) -> Result<Model> {
    let mut model = Model::new(codec_config(ckpt)?, 0)?;
    restore(&mut model, ckpt)?;
    Ok(model)
}

fn training_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One optimisation step's worth of work for sample `i` at `snr_db`.
type Step<'a> = dyn FnMut(&Model, usize, f64, &mut ChaCha8Rng) -> Result<(f64, Gradients)> + 'a;

fn run_epochs(
    model: &mut Model,
    cfg: &ExperimentConfig,
    n: usize,
    epochs: usize,
    rng: &mut ChaCha8Rng,
    step: &mut Step,
) -> Result<TrainLog> {
    let adam = Adam::new(cfg.train.lr);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.train.batch) {
            let snr = if cfg.train.randomize_snr {
                let (lo, hi) = cfg.train.snr_range_db;
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            } else {
                cfg.train.snr_db
            };
            model.store.zero_grad();
            for &i in batch {
                let (loss, grads) = step(model, i, snr, rng).map_err(|e| match e {
                    Error::NonFinite(msg) => Error::Diverged { epoch, msg },
                    other => other,
                })?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        msg: format!("loss {loss} on sample {i}"),
                    });
                }
                total += loss;
                model.store.accumulate(&grads);
            }
            model.store.scale_grads(1.0 / batch.len() as f64);
            adam.step(&mut model.store);
        }
        let mean = total / n as f64;
        log::info!("epoch {epoch}: mean chamfer {mean:.6}");
        log.epoch_loss.push(mean);
        if cfg.train.stop_ratio > 0.0 && mean <= cfg.train.stop_ratio * log.epoch_loss[0] {
            log::info!("stopping after epoch {epoch}: loss ratio reached");
            break;
        }
    }
    Ok(log)
}

fn check_nonempty(samples: &[Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    Ok(())
}

/// Local encoder, global encoder (with camera predictor) and semantic
/// decoder trained end to end without the channel.
pub fn train_stage1(cfg: &ExperimentConfig, train: &[Sample]) -> Result<Trained> {
    cfg.validate()?;
    check_nonempty(train)?;
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let mut rng = training_rng(cfg.train.seed, 1);
    let epochs = cfg.train.stage1_epochs;
    let log = run_epochs(&mut model, cfg, train.len(), epochs, &mut rng, &mut |m, i, _, _| {
        let mut tape = Tape::new(&m.store);
        let y = m.forward(&mut tape, &train[i], ChannelMode::Identity)?;
        let loss = chamfer(&mut tape, y, train[i].cloud.points())?;
        let g = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], g))
    })?;
    let checkpoint = Checkpoint::from_params(
        &model.store,
        Stage::Stage1,
        RngState::capture(&rng),
        hyper(cfg, log.epoch_loss.len(), None)?,
    );
    Ok(Trained { model, checkpoint, log })
}

fn frozen_snapshot(model: &Model) -> Vec<(String, Vec<u64>)> {
    model
        .store
        .iter()
        .filter(|(_, p)| p.frozen)
        .map(|(_, p)| (p.name.clone(), p.value.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

/// Channel encoder, channel decoder and semantic decoder trained under
/// AWGN with both semantic encoders frozen at their stage-1 values.
pub fn train_stage2(cfg: &ExperimentConfig, stage1: &Checkpoint, train: &[Sample]) -> Result<Trained> {
    cfg.validate()?;
    check_nonempty(train)?;
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    restore(&mut model, stage1)?;
    model.freeze_encoders(true);
    let before = frozen_snapshot(&model);

    let encoded: Vec<(Tensor, Option<Tensor>)> = train
        .iter()
        .map(|s| model.encode_values(s))
        .collect::<Result<_>>()?;
    let noise_len = model.noise_len(true);
    let mut rng = training_rng(cfg.train.seed, 2);
    let epochs = cfg.train.stage2_epochs;
    let log = run_epochs(&mut model, cfg, train.len(), epochs, &mut rng, &mut |m, i, snr, rng| {
        let noise = interleaved_noise(noise_len, snr, rng);
        let mut tape = Tape::new(&m.store);
        let (l, g) = &encoded[i];
        let local = tape.input(l.clone());
        let global = g.as_ref().map(|g| tape.input(g.clone()));
        let y = m.transmit(&mut tape, local, ChannelMode::Coded(noise.as_deref()))?;
        let y = m.decode(&mut tape, y, global, &train[i])?;
        let loss = chamfer(&mut tape, y, train[i].cloud.points())?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], grads))
    })?;

    if frozen_snapshot(&model) != before {
        return Err(Error::Checkpoint("a frozen encoder parameter changed during stage 2".into()));
    }
    model.freeze_encoders(false);
    let checkpoint = Checkpoint::from_params(
        &model.store,
        Stage::Stage2,
        RngState::capture(&rng),
        hyper(cfg, log.epoch_loss.len(), Some(cfg.train.snr_db))?,
    );
    Ok(Trained { model, checkpoint, log })
}

/// Baseline without pre-training: the whole system, channel included,
/// trained under noise from initialization for `epochs` epochs.
pub fn train_from_scratch(cfg: &ExperimentConfig, train: &[Sample], epochs: usize) -> Result<Trained> {
    cfg.validate()?;
    check_nonempty(train)?;
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let noise_len = model.noise_len(true);
    let mut rng = training_rng(cfg.train.seed, 3);
    let log = run_epochs(&mut model, cfg, train.len(), epochs, &mut rng, &mut |m, i, snr, rng| {
        let noise = interleaved_noise(noise_len, snr, rng);
        let mut tape = Tape::new(&m.store);
        let y = m.forward(&mut tape, &train[i], ChannelMode::Coded(noise.as_deref()))?;
        let loss = chamfer(&mut tape, y, train[i].cloud.points())?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], grads))
    })?;
    let checkpoint = Checkpoint::from_params(
        &model.store,
        Stage::Stage2,
        RngState::capture(&rng),
        hyper(cfg, log.epoch_loss.len(), Some(cfg.train.snr_db))?,
    );
    Ok(Trained { model, checkpoint, log })
}
