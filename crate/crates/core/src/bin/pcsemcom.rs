//! Command-line front end: dataset preparation, training, evaluation
//! sweeps, the link budget calculator and standalone metrics.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pcsemcom::channel::{capacity, lossless_budget};
use pcsemcom::dataset_io::{load_checkpoint, load_dataset, load_ply, save_checkpoint, save_ply, Checkpoint, Split};
use pcsemcom::metrics::evaluate;
use pcsemcom::pipeline::{
    codec_config, dump_reconstructions, dump_views, evaluate_model, load_model, load_samples, train_stage1,
    train_stage2, ExperimentConfig, SweepResult, Trained,
};
use pcsemcom::Result;

#[derive(Parser)]
#[command(name = "pcsemcom", version, about = "Point-cloud semantic communication simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the normalized train and test clouds as PLY files.
    Prepare {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Train stage 1 (noise-free) or stage 2 (channel, frozen encoders).
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Stage-1 checkpoint, required for stage 2.
        #[arg(long)]
        stage1: Option<PathBuf>,
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Evaluate a checkpoint on the test split at each SNR.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated SNRs in dB; `inf` disables noise.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        snr: Vec<f64>,
        /// CSV destination (default `<out>/eval.csv`).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        dump_ply: bool,
        #[arg(long)]
        dump_views: bool,
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// SNR sweep of one checkpoint, or a rate sweep that trains both stages
    /// for each `S:d` pair.
    Sweep {
        #[arg(long, conflicts_with = "rate", requires = "checkpoint")]
        snr: bool,
        /// Comma-separated `S:d` pairs.
        #[arg(long, value_delimiter = ',')]
        rate: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Lossless side-channel symbols for `bits` at `snr` dB.
    Budget {
        #[arg(long)]
        bits: u64,
        #[arg(long, allow_negative_numbers = true)]
        snr: f64,
        #[arg(long, default_value_t = 0.9)]
        p: f64,
        #[arg(long)]
        verbose: bool,
    },
    /// D1/D2 PSNR of B against reference A.
    Metrics {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = pcsemcom::geometry::DEFAULT_NORMAL_K)]
        normal_k: usize,
    },
    /// Print the resolved configuration as TOML.
    Config {
        #[command(flatten)]
        exp: ExpArgs,
    },
}

/// Configuration source plus per-field overrides, shared by every
/// subcommand that needs an experiment.
#[derive(Args, Debug, Clone, Default)]
struct ExpArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in starting point: toy or paper.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    stage2_epochs: Option<usize>,
    /// Training SNR in dB.
    #[arg(long, allow_negative_numbers = true)]
    train_snr: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    d_prime: Option<usize>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    image: Option<usize>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    toy_variants: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    timing: bool,
}

impl ExpArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => ExperimentConfig::toy(),
        };
        macro_rules! set {
            ($($field:ident => $($path:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { c.$($path).+ = v; })*
            };
        }
        set!(
            out => output_dir,
            seed => train.seed,
            lr => train.lr,
            batch => train.batch,
            stage1_epochs => train.stage1_epochs,
            stage2_epochs => train.stage2_epochs,
            train_snr => train.snr_db,
            points => model.points,
            patches => model.patches,
            d => model.d,
            d_prime => model.d_prime,
            views => model.views,
            image => model.image,
            toy_variants => dataset.toy_variants,
            limit => dataset.limit,
        );
        if let Some(p) = self.points {
            c.dataset.points = p;
        }
        if let Some(r) = &self.data_root {
            c.dataset.root = Some(r.clone());
        }
        c.eval.timing |= self.timing;
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| pcsemcom::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| pcsemcom::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Prepare { exp } => {
            let cfg = exp.resolve()?;
            let out = cfg.resolved_output_dir().join("data");
            for split in [Split::Train, Split::Test] {
                let ds = load_dataset(&cfg.dataset, split)?;
                let dir = out.join(split.as_str());
                create_dir(&dir)?;
                for (name, cloud) in ds.names.iter().zip(&ds.clouds) {
                    save_ply(cloud, dir.join(format!("{name}.ply")))?;
                }
                println!("{}: {} clouds -> {}", split.as_str(), ds.len(), dir.display());
            }
            Ok(())
        }
        Cmd::Train { stage, stage1, exp } => {
            let cfg = exp.resolve()?;
            let out = cfg.resolved_output_dir();
            create_dir(&out)?;
            let (_, train) = load_samples(&cfg, Split::Train)?;
            let trained = if stage == 1 {
                train_stage1(&cfg, &train)?
            } else {
                let Some(path) = stage1 else {
                    return Err(pcsemcom::Error::InvalidArgument(
                        "stage 2 needs a stage-1 checkpoint (--stage1)".into(),
                    ));
                };
                train_stage2(&cfg, &load_checkpoint(path)?, &train)?
            };
            save_run(&cfg, &out, &format!("stage{stage}"), &trained)
        }
        Cmd::Eval {
            checkpoint,
            snr,
            csv,
            dump_ply,
            dump_views: views,
            exp,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let mut cfg = for_checkpoint(exp.resolve()?, &ckpt)?;
            if !snr.is_empty() {
                cfg.eval.snrs_db = snr;
            }
            cfg.eval.dump_ply |= dump_ply;
            cfg.eval.dump_views |= views;
            let out = cfg.resolved_output_dir();
            let result = eval_checkpoint(&cfg, &ckpt, &out)?;
            emit(&result, &csv.unwrap_or_else(|| out.join("eval.csv")))
        }
        Cmd::Sweep {
            snr: _,
            rate,
            checkpoint,
            csv,
            exp,
        } => {
            let base = exp.resolve()?;
            let out = base.resolved_output_dir();
            let csv = csv.unwrap_or_else(|| out.join("sweep.csv"));
            if let Some(path) = checkpoint {
                let ckpt = load_checkpoint(&path)?;
                let cfg = for_checkpoint(base, &ckpt)?;
                return emit(&eval_checkpoint(&cfg, &ckpt, &out)?, &csv);
            }
            if rate.is_empty() {
                return Err(pcsemcom::Error::InvalidArgument(
                    "sweep needs --snr with --checkpoint, or --rate S:d,...".into(),
                ));
            }
            let mut all = SweepResult::default();
            for pair in &rate {
                let (s, d) = parse_pair(pair)?;
                let mut cfg = base.clone();
                cfg.model.patches = s;
                cfg.model.d = d;
                cfg.validate()?;
                let dir = out.join(format!("s{s}_d{d}"));
                create_dir(&dir)?;
                let (_, train) = load_samples(&cfg, Split::Train)?;
                let s1 = train_stage1(&cfg, &train)?;
                save_run(&cfg, &dir, "stage1", &s1)?;
                let s2 = train_stage2(&cfg, &s1.checkpoint, &train)?;
                save_run(&cfg, &dir, "stage2", &s2)?;
                all.rows.extend(eval_checkpoint(&cfg, &s2.checkpoint, &dir)?.rows);
            }
            emit(&all, &csv)
        }
        Cmd::Budget { bits, snr, p, verbose } => {
            let b = lossless_budget(bits, snr, p)?;
            if verbose {
                println!(
                    "bits {} snr_db {} p {} capacity {} symbols {}",
                    b.bit_use,
                    snr,
                    p,
                    capacity(snr),
                    b.symbol_use
                );
            } else {
                println!("{}", b.symbol_use);
            }
            Ok(())
        }
        Cmd::Metrics { a, b, normal_k } => {
            let q = evaluate(&load_ply(&a)?, &load_ply(&b)?, normal_k)?;
            println!("d1_psnr_db {}", q.d1_psnr_db);
            println!("d2_psnr_db {}", q.d2_psnr_db);
            println!("d1_psnr_symmetric_db {}", q.d1_psnr_symmetric_db);
            println!("d2_psnr_symmetric_db {}", q.d2_psnr_symmetric_db);
            println!("e_c2c {}", q.e_c2c);
            println!("e_c2p {}", q.e_c2p);
            println!("peak {}", q.peak);
            Ok(())
        }
        Cmd::Config { exp } => {
            print!("{}", exp.resolve()?.to_toml()?);
            Ok(())
        }
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let bad = || pcsemcom::Error::InvalidArgument(format!("rate point {s:?} is not S:d"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// The experiment with its model replaced by the checkpoint's.
fn for_checkpoint(mut cfg: ExperimentConfig, ckpt: &Checkpoint) -> Result<ExperimentConfig> {
    cfg.model = codec_config(ckpt)?;
    cfg.dataset.points = cfg.model.points;
    cfg.dataset.range = cfg.model.range;
    cfg.validate()?;
    Ok(cfg)
}

fn save_run(cfg: &ExperimentConfig, dir: &Path, tag: &str, t: &Trained) -> Result<()> {
    let ckpt = dir.join(format!("{tag}.ckpt"));
    save_checkpoint(&t.checkpoint, &ckpt)?;
    cfg.save(dir.join(format!("{tag}.toml")))?;
    let mut log = String::from("epoch,mean_chamfer\n");
    for (i, l) in t.log.epoch_loss.iter().enumerate() {
        log.push_str(&format!("{i},{l}\n"));
    }
    write_text(&dir.join(format!("{tag}_loss.csv")), &log)?;
    println!("{}", ckpt.display());
    Ok(())
}

fn eval_checkpoint(cfg: &ExperimentConfig, ckpt: &Checkpoint, out: &Path) -> Result<SweepResult> {
    let model = load_model(ckpt)?;
    let (names, test) = load_samples(cfg, Split::Test)?;
    let result = evaluate_model(&model, ckpt.stage, cfg, &test, &cfg.eval.snrs_db)?;
    if cfg.eval.dump_ply {
        for &snr in &cfg.eval.snrs_db {
            dump_reconstructions(&model, ckpt.stage, cfg, &test, &names, snr, &out.join("ply"))?;
        }
    }
    if cfg.eval.dump_views {
        dump_views(&model, &test, &names, &out.join("views"))?;
    }
    Ok(result)
}

fn emit(result: &SweepResult, csv: &Path) -> Result<()> {
    result.write_csv(csv)?;
    print!("{}", result.to_csv());
    Ok(())
}
