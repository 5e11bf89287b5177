//! Command-line front end: training runs, dataset perturbation, collapse
//! reports, layerwise profiles, and cluster-leap geometry, all driven by
//! flat key-value config files.
//!
//! The `NC_LAB_THREADS` environment variable caps the thread count used for
//! sharded attack generation during metric evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nc_lab::attacks::LossMode;
use nc_lab::checkpoint;
use nc_lab::config::{attack_from_config, Config};
use nc_lab::data::Dataset;
use nc_lab::error::{Error, Result};
use nc_lab::experiment::{
    accuracy, cluster_leap_summary, emit_cluster_leap, emit_layerwise, penultimate_features,
    run_experiment, DatasetSpec, ExperimentConfig,
};
use nc_lab::nc::metrics::nc_report;
use nc_lab::nc::stats::{class_stats, FeatureSet};
use nc_lab::nc::{io as feature_io, metrics};
use nc_lab::S;

#[derive(Parser)]
#[command(name = "nc-lab", version, about = "Neural-collapse laboratory for small classifiers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a full training experiment and emit metric files
    Train {
        /// Key-value config file
        #[arg(long)]
        config: PathBuf,
        /// Override config entries (repeatable): --set train.epochs=50
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Perturb a dataset with a checkpoint and write the perturbed inputs
    /// as text rows (label, then flattened values)
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config describing the dataset (dataset.*) and attack (attack.*)
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collapse metrics for a checkpoint on a dataset, or for imported
    /// feature files
    NcReport {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Evaluation FeatureSet (binary container or text rows)
        #[arg(long)]
        features: Option<PathBuf>,
        /// Reference FeatureSet supplying NCC centers
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Class count for text feature files
        #[arg(long)]
        classes: Option<usize>,
        /// Feature dimension for text feature files
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Per-tap depth profile of collapse and NCC robustness
    Layerwise {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Representations larger than this are average-pool subsampled
        #[arg(long, default_value_t = 4096)]
        max_dim: usize,
    },
    /// Cluster-leap geometry of attacked representations
    ClusterLeap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path, overrides: &[String]) -> Result<Config> {
    let mut cfg = Config::from_file(path)?;
    for item in overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {:?} is not KEY=VALUE", item)))?;
        cfg.set(k.trim(), v.trim());
    }
    Ok(cfg)
}

fn build_dataset(cfg: &Config) -> Result<(Dataset<S>, Option<Dataset<S>>)> {
    DatasetSpec::from_config(cfg)?.build()
}

fn load_features(path: &Path, classes: Option<usize>, dim: Option<usize>) -> Result<FeatureSet<S>> {
    match feature_io::load_binary(path) {
        Ok(fs) => Ok(fs),
        Err(Error::Format(_)) => {
            let (c, p) = match (classes, dim) {
                (Some(c), Some(p)) => (c, p),
                _ => {
                    return Err(Error::Config(
                        "text feature files need --classes and --dim".into(),
                    ))
                }
            };
            feature_io::load_text(path, c, p)
        }
        Err(e) => Err(e),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config, overrides } => {
            let cfg = ExperimentConfig::from_config(load_config(&config, &overrides)?)?;
            let out = run_experiment::<S>(&cfg)?;
            println!("run complete: {}", out.display());
        }
        Cmd::Attack {
            checkpoint,
            config,
            overrides,
            out,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let net = checkpoint::load::<S>(&checkpoint)?;
            let (ds, _) = build_dataset(&cfg)?;
            let attack = attack_from_config(&cfg, "attack.")?;
            let x = ds.to_tensor()?;
            let adv = match attack.loss_mode {
                LossMode::CeTargeted => {
                    let targets =
                        nc_lab::attacks::circular_targets(&ds.labels, ds.num_classes);
                    nc_lab::attacks::pgd_targeted(&net, &x, &targets, &attack)?
                }
                LossMode::Kl => nc_lab::attacks::pgd_kl(&net, &x, &attack)?,
                LossMode::CeUntargeted => {
                    nc_lab::attacks::pgd_untargeted(&net, &x, &ds.labels, &attack)?
                }
            };
            let av = adv.to_vec();
            let d = ds.input_dim();
            let mut text = String::new();
            for (i, &label) in ds.labels.iter().enumerate() {
                text.push_str(&label.to_string());
                for v in &av[i * d..(i + 1) * d] {
                    text.push_str(&format!(" {:e}", v));
                }
                text.push('\n');
            }
            std::fs::write(&out, text)?;
            println!("wrote {} perturbed examples to {}", ds.len(), out.display());
        }
        Cmd::NcReport {
            checkpoint,
            config,
            overrides,
            features,
            reference,
            classes,
            dim,
        } => {
            if let Some(fpath) = features {
                let fs = load_features(&fpath, classes, dim)?;
                let stats = class_stats(&fs)?;
                let (equinorm, equiangular) = metrics::nc2(&stats)?;
                println!("nc1 = {:e}", metrics::nc1(&stats)?);
                println!("nc2_equinorm = {:e}", equinorm);
                println!("nc2_equiangular = {:e}", equiangular);
                match reference {
                    Some(rpath) => {
                        let rfs = load_features(&rpath, classes, dim)?;
                        let rstats = class_stats(&rfs)?;
                        println!(
                            "ncc_accuracy = {:e}",
                            metrics::ncc_accuracy(&fs, &rstats.class_means)?
                        );
                        println!(
                            "simplex_similarity = {:e}",
                            metrics::simplex_similarity(&stats, &rstats)?
                        );
                        println!(
                            "noncentered_angular = {:e}",
                            metrics::noncentered_angular(&stats, &rstats)?
                        );
                    }
                    None => println!(
                        "ncc_accuracy = {:e}",
                        metrics::ncc_accuracy(&fs, &stats.class_means)?
                    ),
                }
            } else {
                let ckpt = checkpoint
                    .ok_or_else(|| Error::Config("need --checkpoint or --features".into()))?;
                let cfgp =
                    config.ok_or_else(|| Error::Config("need --config with --checkpoint".into()))?;
                let cfg = load_config(&cfgp, &overrides)?;
                let net = checkpoint::load::<S>(&ckpt)?;
                let (ds, _) = build_dataset(&cfg)?;
                let x = ds.to_tensor()?;
                let (feats, preds) = penultimate_features(&net, &x)?;
                let fs = FeatureSet::from_rows(&feats, &ds.labels, ds.num_classes)?;
                let (wt, bt) = net.classifier_params();
                let ws = wt.shape();
                let w = nc_lab::linalg::Mat {
                    rows: ws[0],
                    cols: ws[1],
                    data: wt.to_vec(),
                };
                let rep = nc_report(&fs, &preds, &w, &bt.to_vec(), None)?;
                println!("accuracy = {:e}", accuracy(&preds, &ds.labels));
                println!("nc1 = {:e}", rep.nc1);
                println!("nc2_equinorm = {:e}", rep.nc2_equinorm);
                println!("nc2_equiangular = {:e}", rep.nc2_equiangular);
                println!("nc3 = {:e}", rep.nc3);
                println!("nc4_mismatch = {:e}", rep.nc4_mismatch);
                println!("ncc_accuracy = {:e}", rep.ncc_accuracy);
                println!("ncc_matching_rate = {:e}", rep.ncc_matching_rate);
            }
        }
        Cmd::Layerwise {
            checkpoint,
            config,
            overrides,
            out,
            max_dim,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let net = checkpoint::load::<S>(&checkpoint)?;
            let (train, test) = build_dataset(&cfg)?;
            let attack = attack_from_config(&cfg, "attack.")?;
            emit_layerwise(&net, &train, test.as_ref(), &attack, max_dim, &out)?;
            println!("wrote layerwise profile to {}", out.display());
        }
        Cmd::ClusterLeap {
            checkpoint,
            config,
            overrides,
            out,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let net = checkpoint::load::<S>(&checkpoint)?;
            let (ds, _) = build_dataset(&cfg)?;
            let attack = attack_from_config(&cfg, "attack.")?;
            emit_cluster_leap(&net, &ds, &attack, &out)?;
            if attack.loss_mode == LossMode::CeTargeted {
                let (success, angle) = cluster_leap_summary(&net, &ds, &attack)?;
                println!("targeted_success = {:e}", success);
                println!("mean_angle_rad = {:e}", angle);
            }
            println!("wrote cluster-leap report to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
