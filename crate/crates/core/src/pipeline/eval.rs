//! Evaluation sweeps and their CSV form.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::channel::{interleaved_noise, rate_report, RateReport};
use crate::codec::{chamfer_distance, render, write_pgm, Camera, ChannelMode, Model, Sample};
use crate::dataset_io::{save_ply, Stage};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::metrics::{display_psnr, evaluate};
use crate::nn::Tape;

pub const CSV_SCHEMA: &str = "# pcsemcom-sweep v1";
pub const CSV_HEADER: &str = "s,d,d_prime,snr_db,bpp,symbols_per_point,d1_psnr_db,d2_psnr_db,\
d1_psnr_symmetric_db,d2_psnr_symmetric_db,cd,wall_ms";

/// One sweep point: configuration, rate and test-set means.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub s: usize,
    pub d: usize,
    pub d_prime: usize,
    pub snr_db: f64,
    pub rate: RateReport,
    pub d1_psnr_db: f64,
    pub d2_psnr_db: f64,
    pub d1_psnr_symmetric_db: f64,
    pub d2_psnr_symmetric_db: f64,
    pub cd: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

fn fmt_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_SCHEMA}\n{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.s,
                r.d,
                r.d_prime,
                fmt_db(r.snr_db),
                r.rate.bits_per_point,
                r.rate.symbols_per_point,
                display_psnr(r.d1_psnr_db),
                display_psnr(r.d2_psnr_db),
                display_psnr(r.d1_psnr_symmetric_db),
                display_psnr(r.d2_psnr_symmetric_db),
                r.cd,
                r.wall_ms,
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Channel path a checkpoint of `stage` is evaluated with: stage-1 models
/// have an untrained channel codec, so they send power-normalized
/// semantics uncoded.
fn noise_for(model: &Model, stage: Stage, snr_db: f64, rng: &mut ChaCha8Rng) -> (bool, Option<Vec<f64>>) {
    let coded = stage == Stage::Stage2;
    (coded, interleaved_noise(model.noise_len(coded), snr_db, rng))
}

fn mode(coded: bool, noise: Option<&[f64]>) -> ChannelMode<'_> {
    match (coded, noise) {
        (true, n) => ChannelMode::Coded(n),
        (false, None) => ChannelMode::Identity,
        (false, n) => ChannelMode::Uncoded(n),
    }
}

/// Noise generator for sweep point `point` of a run seeded with `seed`.
pub fn eval_rng(seed: u64, point: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(100 + point as u64);
    rng
}

/// One pass through the channel a checkpoint of `stage` is evaluated with,
/// drawing noise from `rng`.
pub fn transmit_once(
    model: &Model,
    stage: Stage,
    sample: &Sample,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PointCloud> {
    let (coded, noise) = noise_for(model, stage, snr_db, rng);
    model.reconstruct(sample, mode(coded, noise.as_deref()))
}

/// Runs the full transmit chain over the test set at each SNR with fixed
/// parameters.
pub fn evaluate_model(
    model: &Model,
    stage: Stage,
    cfg: &ExperimentConfig,
    test: &[Sample],
    snrs_db: &[f64],
) -> Result<SweepResult> {
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let mc = &model.cfg;
    let mut rows = Vec::with_capacity(snrs_db.len());
    for (pi, &snr) in snrs_db.iter().enumerate() {
        let t0 = Instant::now();
        let mut rng = eval_rng(cfg.train.seed, pi);
        let (mut d1, mut d2, mut s1, mut s2, mut cd) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for sample in test {
            let recon = transmit_once(model, stage, sample, snr, &mut rng)?;
            let q = evaluate(&sample.cloud, &recon, cfg.eval.normal_k)?;
            d1 += q.d1_psnr_db;
            d2 += q.d2_psnr_db;
            s1 += q.d1_psnr_symmetric_db;
            s2 += q.d2_psnr_symmetric_db;
            cd += chamfer_distance(sample.cloud.points(), recon.points())?;
        }
        let n = test.len() as f64;
        let rate = rate_report(mc.patches, mc.d, mc.d_prime, mc.points, snr, cfg.eval.success_p)?;
        let wall_ms = if cfg.eval.timing {
            t0.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        rows.push(SweepRow {
            s: mc.patches,
            d: mc.d,
            d_prime: mc.d_prime,
            snr_db: snr,
            rate,
            d1_psnr_db: d1 / n,
            d2_psnr_db: d2 / n,
            d1_psnr_symmetric_db: s1 / n,
            d2_psnr_symmetric_db: s2 / n,
            cd: cd / n,
            wall_ms,
        });
    }
    Ok(SweepResult { rows })
}

/// D2 PSNR against `D'`: one row per trained model at `snr_db`, sorted by
/// `D'`.
pub fn ablate_global(
    family: &[(&Model, Stage)],
    cfg: &ExperimentConfig,
    test: &[Sample],
    snr_db: f64,
) -> Result<SweepResult> {
    let mut rows = Vec::with_capacity(family.len());
    for (model, stage) in family {
        let samples: Vec<Sample> = test
            .iter()
            .map(|s| model.sample(s.cloud.clone()))
            .collect::<Result<_>>()?;
        rows.extend(evaluate_model(model, *stage, cfg, &samples, &[snr_db])?.rows);
    }
    rows.sort_by_key(|r| r.d_prime);
    Ok(SweepResult { rows })
}

/// Writes each reconstruction at `snr_db` as `<name>_snr<snr>.ply`.
pub fn dump_reconstructions(
    model: &Model,
    stage: Stage,
    cfg: &ExperimentConfig,
    test: &[Sample],
    names: &[String],
    snr_db: f64,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = eval_rng(cfg.train.seed, 0);
    for (sample, name) in test.iter().zip(names) {
        let recon = transmit_once(model, stage, sample, snr_db, &mut rng)?;
        save_ply(&recon, dir.join(format!("{name}_snr{}.ply", fmt_db(snr_db))))?;
    }
    Ok(())
}

/// Writes the learned projections of each test cloud as PGM files.
pub fn dump_views(model: &Model, test: &[Sample], names: &[String], dir: &Path) -> Result<()> {
    let Some(branch) = &model.global else {
        return Ok(());
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (sample, name) in test.iter().zip(names) {
        let mut tape = Tape::new(&model.store);
        let c = tape.input(sample.centred.clone());
        let cams = branch.camera.forward(&mut tape, c, sample.radius)?;
        let cams: Vec<Camera> = crate::codec::cameras_from_tensor(tape.value(cams));
        let views = render(sample.cloud.points(), &cams, &branch.render)?;
        for v in 0..cams.len() {
            write_pgm(dir.join(format!("{name}_view{v}.pgm")), &views, v)?;
        }
    }
    Ok(())
}
