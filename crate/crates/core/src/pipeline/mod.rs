//! Orchestration: configuration, the two training stages, evaluation
//! sweeps and CSV output.

mod config;
mod eval;
mod train;

pub use config::{EvalConfig, ExperimentConfig, TrainConfig, OUTPUT_DIR_ENV};
pub use eval::{
    ablate_global, dump_reconstructions, dump_views, eval_rng, evaluate_model, transmit_once, SweepResult, SweepRow, CSV_HEADER, CSV_SCHEMA,
};
pub use train::{
    codec_config, load_model, prepare_samples, restore, train_from_scratch, train_stage1, train_stage2, TrainLog,
    Trained,
};

use crate::codec::Sample;
use crate::dataset_io::{load_dataset, Split};
use crate::error::Result;

/// Loads and prepares one split of the configured dataset.
pub fn load_samples(cfg: &ExperimentConfig, split: Split) -> Result<(Vec<String>, Vec<Sample>)> {
    let ds = load_dataset(&cfg.dataset, split)?;
    let samples = prepare_samples(&cfg.model, &ds)?;
    Ok((ds.names, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{CodecConfig, Model};
    use crate::dataset_io::{Checkpoint, Stage};

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::toy();
        c.model = CodecConfig {
            points: 64,
            patches: 8,
            d: 4,
            d_prime: 2,
            views: 2,
            image: 16,
            cnn_features: 16,
            ..CodecConfig::default()
        };
        c.dataset.points = 64;
        c.train.batch = 4;
        c.train.stage1_epochs = 3;
        c.train.stage2_epochs = 2;
        c.train.seed = 9;
        c
    }

    fn bits(c: &Checkpoint) -> Vec<u64> {
        c.blobs.iter().flat_map(|b| b.values.iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let mut cfg = tiny();
        cfg.train.stage1_epochs = 0;
        let (_, train) = load_samples(&cfg, Split::Train).unwrap();
        let t = train_stage1(&cfg, &train).unwrap();
        let init = Model::new(cfg.model.clone(), cfg.train.seed).unwrap();
        let init_ckpt = Checkpoint::from_params(&init.store, Stage::Stage1, t.checkpoint.rng, t.checkpoint.hyper.clone());
        assert_eq!(bits(&t.checkpoint), bits(&init_ckpt));
        assert!(t.log.epoch_loss.is_empty());
        assert_eq!(codec_config(&t.checkpoint).unwrap(), cfg.model);
    }

    #[test]
    fn training_is_deterministic_and_stage2_freezes() {
        let cfg = tiny();
        let (_, train) = load_samples(&cfg, Split::Train).unwrap();
        let a = train_stage1(&cfg, &train).unwrap();
        let b = train_stage1(&cfg, &train).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(bits(&a.checkpoint), bits(&b.checkpoint));
        assert_eq!(a.log.epoch_loss.len(), 3);

        let s2 = train_stage2(&cfg, &a.checkpoint, &train).unwrap();
        assert_eq!(s2.checkpoint.stage, Stage::Stage2);
        for blob in &a.checkpoint.blobs {
            let after = s2.checkpoint.blob(&blob.name).unwrap();
            let encoder = crate::codec::ENCODER_PREFIXES.iter().any(|p| blob.name.starts_with(p));
            if encoder {
                assert_eq!(after, blob, "{}", blob.name);
            }
            if blob.name.starts_with("chan_") {
                assert_ne!(after, blob, "{}", blob.name);
            }
        }

        let mut other = cfg.clone();
        other.model.d = 6;
        assert!(train_stage2(&other, &a.checkpoint, &train).is_err());
    }

    #[test]
    fn evaluation_rows_and_determinism() {
        let cfg = tiny();
        let (_, train) = load_samples(&cfg, Split::Train).unwrap();
        let (_, test) = load_samples(&cfg, Split::Test).unwrap();
        let t = train_stage1(&cfg, &train).unwrap();
        let snrs = [f64::INFINITY, 10.0, 0.0];
        let r1 = evaluate_model(&t.model, Stage::Stage1, &cfg, &test, &snrs).unwrap();
        let r2 = evaluate_model(&t.model, Stage::Stage1, &cfg, &test, &snrs).unwrap();
        assert_eq!(r1.rows.len(), 3);
        assert_eq!(r1.to_csv(), r2.to_csv());
        let csv = r1.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_SCHEMA);
        assert_eq!(lines[1], CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("8,4,2,inf,"));

        // the identity path at infinite SNR equals plain reconstruction
        let mut cd = 0.0;
        for s in &test {
            let r = t.model.reconstruct(s, crate::codec::ChannelMode::Identity).unwrap();
            cd += crate::codec::chamfer_distance(s.cloud.points(), r.points()).unwrap();
        }
        assert_eq!(r1.rows[0].cd, cd / test.len() as f64);

        let reloaded = load_model(&t.checkpoint).unwrap();
        let r3 = evaluate_model(&reloaded, Stage::Stage1, &cfg, &test, &snrs).unwrap();
        assert_eq!(r3, r1);
    }

    #[test]
    fn ablation_rows_are_sorted() {
        let mut cfg = tiny();
        cfg.train.stage1_epochs = 1;
        let (_, train) = load_samples(&cfg, Split::Train).unwrap();
        let mut models = Vec::new();
        for dp in [2, 0] {
            let mut c = cfg.clone();
            c.model.d_prime = dp;
            models.push(train_stage1(&c, &train).unwrap().model);
        }
        let family: Vec<_> = models.iter().map(|m| (m, Stage::Stage1)).collect();
        let r = ablate_global(&family, &cfg, &train, f64::INFINITY).unwrap();
        assert_eq!(r.rows.iter().map(|r| r.d_prime).collect::<Vec<_>>(), vec![0, 2]);
    }
}
