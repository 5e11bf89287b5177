//! Experiment runner and report emitters: full training runs with per-epoch
//! collapse metrics over clean / Gaussian / untargeted / targeted reference
//! sets, layerwise depth profiles, and cluster-leap geometry files.
//!
//! Output files are CSV with `#`-prefixed provenance comments (config hash,
//! seed, crate version).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::attacks::{circular_targets, pgd_targeted, pgd_untargeted, AttackConfig, LossMode, Norm};
use crate::checkpoint;
use crate::config::{attack_to_config, Config};
use crate::data::{load_idx, make_gaussian_mixture, normalize_stats, split_balanced, Dataset};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::models::{build_mlp, build_small_convnet, Network};
use crate::nc::layerwise::pooled_tap_features;
use crate::nc::metrics::{nc_report, ncc_accuracy, ncc_matching_rate, predicted_group_stats, NcReport};
use crate::nc::stats::{class_stats, ClassStats, FeatureSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::{fit, FitResult, TrainConfig};

/// Thread count for sharded attack generation during metric evaluation.
pub const THREADS_ENV: &str = "NC_LAB_THREADS";

pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

#[derive(Debug, Clone)]
pub enum DatasetSpec {
    GaussianMixture {
        classes: usize,
        n_per_class: usize,
        test_per_class: usize,
        dim: usize,
        center_radius: f64,
        noise_std: f64,
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

impl DatasetSpec {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        match cfg.get("dataset.kind").unwrap_or("gaussian_mixture") {
            "gaussian_mixture" => Ok(DatasetSpec::GaussianMixture {
                classes: cfg.get_usize("dataset.classes", 4)?,
                n_per_class: cfg.get_usize("dataset.n_per_class", 200)?,
                test_per_class: cfg.get_usize("dataset.test_per_class", 0)?,
                dim: cfg.get_usize("dataset.dim", 20)?,
                center_radius: cfg.get_f64("dataset.center_radius", 2.0)?,
                noise_std: cfg.get_f64("dataset.noise_std", 0.1)?,
                seed: cfg.get_u64("dataset.seed", 0)?,
            }),
            "idx" => Ok(DatasetSpec::Idx {
                images: PathBuf::from(cfg.require("dataset.images")?),
                labels: PathBuf::from(cfg.require("dataset.labels")?),
            }),
            other => Err(Error::Config(format!(
                "unknown dataset.kind {:?} (gaussian_mixture | idx)",
                other
            ))),
        }
    }

    /// Build the train split and, for mixtures with `test_per_class > 0`, a
    /// test split drawn from the same centers and squash.
    pub fn build<F: Scalar>(&self) -> Result<(Dataset<F>, Option<Dataset<F>>)> {
        match self {
            DatasetSpec::GaussianMixture {
                classes,
                n_per_class,
                test_per_class,
                dim,
                center_radius,
                noise_std,
                seed,
            } => {
                let all = make_gaussian_mixture(
                    *classes,
                    n_per_class + test_per_class,
                    *dim,
                    *center_radius,
                    *noise_std,
                    *seed,
                )?;
                if *test_per_class == 0 {
                    Ok((all, None))
                } else {
                    let (train, test) = split_balanced(&all, *n_per_class)?;
                    Ok((train, Some(test)))
                }
            }
            DatasetSpec::Idx { images, labels } => Ok((load_idx(images, labels)?, None)),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ModelSpec {
    Mlp { hidden: Vec<usize>, seed: u64 },
    Convnet { channels: Vec<usize>, seed: u64 },
}

impl ModelSpec {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let seed = cfg.get_u64("model.seed", 0)?;
        match cfg.get("model.kind").unwrap_or("mlp") {
            "mlp" => {
                let hidden = match cfg.get("model.hidden") {
                    None => vec![128, 128],
                    Some(v) => crate::config::parse_list(v, |s| {
                        s.parse()
                            .map_err(|e| Error::Config(format!("bad width {:?}: {}", s, e)))
                    })?,
                };
                Ok(ModelSpec::Mlp { hidden, seed })
            }
            "convnet" => {
                let channels = match cfg.get("model.channels") {
                    None => vec![8, 16],
                    Some(v) => crate::config::parse_list(v, |s| {
                        s.parse()
                            .map_err(|e| Error::Config(format!("bad channel count {:?}: {}", s, e)))
                    })?,
                };
                Ok(ModelSpec::Convnet { channels, seed })
            }
            other => Err(Error::Config(format!(
                "unknown model.kind {:?} (mlp | convnet)",
                other
            ))),
        }
    }

    pub fn build<F: Scalar>(&self, ds: &Dataset<F>) -> Result<Network<F>> {
        match self {
            ModelSpec::Mlp { hidden, seed } => build_mlp(ds.input_dim(), hidden, ds.num_classes, *seed),
            ModelSpec::Convnet { channels, seed } => {
                let (c, h, w) = match ds.input_shape.as_slice() {
                    [c, h, w] => (*c, *h, *w),
                    other => {
                        return Err(Error::Config(format!(
                            "convnet needs channel×height×width inputs, dataset has {:?}",
                            other
                        )))
                    }
                };
                build_small_convnet(channels, (c, h, w), ds.num_classes, *seed)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// The raw parsed config, kept for provenance (hash + echo file).
    pub raw: Config,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    /// Compute train-split mean/std and fold them into the model's forward.
    pub normalize: bool,
    pub train: TrainConfig,
    /// Untargeted-attack radius sweep evaluated at each metric epoch; step
    /// sizes scale linearly (α = ε/4).
    pub sweep_epsilons: Vec<f64>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_config(raw: Config) -> Result<Self> {
        let dataset = DatasetSpec::from_config(&raw)?;
        let model = ModelSpec::from_config(&raw)?;
        let train = crate::config::train_from_config(&raw, "train.")?;
        let sweep_epsilons = match raw.get("sweep.epsilons") {
            None => Vec::new(),
            Some(v) => crate::config::parse_list(v, crate::config::parse_real)?,
        };
        let out_dir = PathBuf::from(raw.get("output.dir").unwrap_or("run"));
        let normalize = raw.get_bool("model.normalize", false)?;
        Ok(ExperimentConfig {
            raw,
            dataset,
            model,
            normalize,
            train,
            sweep_epsilons,
            out_dir,
        })
    }
}

/// Flattened penultimate-layer representations and network predictions.
pub fn penultimate_features<F: Scalar>(net: &Network<F>, x: &Tensor<F>) -> Result<(Mat<F>, Vec<usize>)> {
    let (logits, taps) = net.forward_with_taps(x)?;
    let last = taps
        .last()
        .ok_or_else(|| Error::Contract("network has no representation taps".into()))?;
    let n = x.shape()[0];
    let feats = Mat {
        rows: n,
        cols: last.numel() / n,
        data: last.to_vec(),
    };
    let c = net.num_classes;
    let lv = logits.data();
    let preds = (0..n)
        .map(|i| {
            lv[i * c..(i + 1) * c]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap()
        })
        .collect();
    Ok((feats, preds))
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / preds.len() as f64
}

/// Run an attack over row shards on `threads` worker threads, each on its
/// own restored copy of the network. Both PGD step rules are per-example,
/// so sharding does not change the result.
pub fn sharded_attack<F: Scalar>(
    net: &Network<F>,
    x: &Tensor<F>,
    y: &[usize],
    cfg: &AttackConfig,
    targeted: bool,
    threads: usize,
) -> Result<Tensor<F>> {
    let n = x.shape()[0];
    if threads <= 1 || n < 2 * threads {
        return if targeted {
            pgd_targeted(net, x, y, cfg)
        } else {
            pgd_untargeted(net, x, y, cfg)
        };
    }
    let bytes = checkpoint::snapshot(net)?;
    let chunk = n.div_ceil(threads);
    let mut bounds = Vec::new();
    let mut s = 0;
    while s < n {
        bounds.push((s, (s + chunk).min(n)));
        s += chunk;
    }
    let per = x.numel() / n;
    let xv = x.to_vec();
    let shards: Vec<Result<Vec<F>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = bounds
            .iter()
            .map(|&(a, b)| {
                let bytes = &bytes;
                let shard_data = xv[a * per..b * per].to_vec();
                let shard_y = y[a..b].to_vec();
                let mut shape = x.shape();
                shape[0] = b - a;
                scope.spawn(move || -> Result<Vec<F>> {
                    let net = checkpoint::restore::<F>(bytes)?;
                    let shard_x = Tensor::new(&shape, shard_data)?;
                    let adv = if targeted {
                        pgd_targeted(&net, &shard_x, &shard_y, cfg)?
                    } else {
                        pgd_untargeted(&net, &shard_x, &shard_y, cfg)?
                    };
                    Ok(adv.to_vec())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut data = Vec::with_capacity(x.numel());
    for shard in shards {
        data.extend(shard?);
    }
    Tensor::new(&x.shape(), data)
}

fn fmt_opt<F: Scalar>(v: Option<F>) -> String {
    v.map_or(String::new(), |x| format!("{:e}", x.to_f64()))
}

fn provenance(w: &mut impl Write, cfg_hash: u64, seed: u64) -> Result<()> {
    writeln!(w, "# config_hash = {:016x}", cfg_hash)?;
    writeln!(w, "# seed = {}", seed)?;
    writeln!(w, "# version = {}", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

const METRIC_HEADER: &str = "epoch,set,norm,epsilon,alpha,accuracy,nc1,nc2_equinorm,nc2_equiangular,nc3,nc4_mismatch,ncc_accuracy,ncc_matching_rate,simplex_similarity,noncentered_angular";

#[allow(clippy::too_many_arguments)]
fn metric_row<F: Scalar>(
    w: &mut impl Write,
    epoch: usize,
    set: &str,
    norm: &str,
    epsilon: f64,
    alpha: f64,
    acc: f64,
    rep: &NcReport<F>,
) -> Result<()> {
    writeln!(
        w,
        "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
        epoch,
        set,
        norm,
        epsilon,
        alpha,
        acc,
        rep.nc1.to_f64(),
        rep.nc2_equinorm.to_f64(),
        rep.nc2_equiangular.to_f64(),
        rep.nc3.to_f64(),
        rep.nc4_mismatch.to_f64(),
        rep.ncc_accuracy.to_f64(),
        rep.ncc_matching_rate.to_f64(),
        fmt_opt(rep.simplex_similarity),
        fmt_opt(rep.noncentered_angular),
    )?;
    Ok(())
}

fn classifier_mats<F: Scalar>(net: &Network<F>) -> (Mat<F>, Vec<F>) {
    let (w, b) = net.classifier_params();
    let ws = w.shape();
    (
        Mat {
            rows: ws[0],
            cols: ws[1],
            data: w.to_vec(),
        },
        b.to_vec(),
    )
}

fn norm_name(n: Norm) -> &'static str {
    match n {
        Norm::Linf => "linf",
        Norm::L2 => "l2",
    }
}

/// Evaluate one input set at the penultimate layer and append a metric row.
/// `reference` carries the clean statistics used for NCC centers and the
/// simplex comparisons; pass `None` for the clean set itself.
#[allow(clippy::too_many_arguments)]
fn eval_set<F: Scalar>(
    out: &mut impl Write,
    net: &Network<F>,
    epoch: usize,
    set: &str,
    inputs: &Tensor<F>,
    labels: &[usize],
    reference: Option<&ClassStats<F>>,
    norm: &str,
    epsilon: f64,
    alpha: f64,
) -> Result<(FeatureSet<F>, Vec<usize>)> {
    let (feats, preds) = penultimate_features(net, inputs)?;
    let fs = FeatureSet::from_rows(&feats, labels, net.num_classes)?;
    let (w, b) = classifier_mats(net);
    let rep = nc_report(&fs, &preds, &w, &b, reference)?;
    let acc = accuracy(&preds, labels);
    metric_row(out, epoch, set, norm, epsilon, alpha, acc, &rep)?;
    Ok((fs, preds))
}

/// Train per the config and emit `metrics.csv`, `train_log.csv`,
/// `config.txt`, and `final.ckpt` into the output directory.
pub fn run_experiment<F: Scalar>(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir)?;
    let (train_ds, test_ds) = cfg.dataset.build::<F>()?;
    let mut net = cfg.model.build(&train_ds)?;
    if cfg.normalize {
        let (mean, std) = normalize_stats(&train_ds)?;
        net.set_normalization(mean, std);
    }
    let threads = thread_count();
    // hash what the run computes, not where it lands, so reruns into a
    // fresh directory stamp identical provenance
    let hash = {
        let mut h = cfg.raw.clone();
        h.remove("output.dir");
        h.content_hash()
    };
    let seed = cfg.train.seed;

    fs::write(cfg.out_dir.join("config.txt"), cfg.raw.to_text())?;

    let mut metrics = BufWriter::new(fs::File::create(cfg.out_dir.join("metrics.csv"))?);
    provenance(&mut metrics, hash, seed)?;
    writeln!(metrics, "{}", METRIC_HEADER)?;

    let eval = &cfg.train.eval_attack;
    let enorm = norm_name(eval.norm);
    let result: FitResult = fit(&net, &train_ds, &cfg.train, |net, ctx| {
        // clean set: its own statistics are the reference simplex
        let (clean_fs, _) = eval_set(
            &mut metrics, net, ctx.epoch, "clean", ctx.clean, ctx.labels, None, "none", 0.0, 0.0,
        )?;
        let clean_stats = class_stats(&clean_fs)?;

        eval_set(
            &mut metrics,
            net,
            ctx.epoch,
            "gaussian",
            ctx.gaussian,
            ctx.labels,
            Some(&clean_stats),
            "gaussian",
            cfg.train.gaussian_sigma,
            0.0,
        )?;
        eval_set(
            &mut metrics,
            net,
            ctx.epoch,
            "perturbed",
            ctx.perturbed,
            ctx.labels,
            Some(&clean_stats),
            enorm,
            eval.epsilon,
            eval.alpha,
        )?;

        let targets = circular_targets(ctx.labels, net.num_classes);
        let tcfg = AttackConfig {
            loss_mode: LossMode::CeTargeted,
            ..eval.clone()
        };
        let adv = sharded_attack(net, ctx.clean, &targets, &tcfg, true, threads)?;
        eval_set(
            &mut metrics,
            net,
            ctx.epoch,
            "targeted",
            &adv,
            ctx.labels,
            Some(&clean_stats),
            enorm,
            eval.epsilon,
            eval.alpha,
        )?;

        // radius sweep with linearly scaled step size
        for &eps in &cfg.sweep_epsilons {
            let scfg = AttackConfig {
                epsilon: eps,
                alpha: eps / 4.0,
                loss_mode: LossMode::CeUntargeted,
                ..eval.clone()
            };
            let adv = sharded_attack(net, ctx.clean, ctx.labels, &scfg, false, threads)?;
            eval_set(
                &mut metrics,
                net,
                ctx.epoch,
                "sweep_untargeted",
                &adv,
                ctx.labels,
                Some(&clean_stats),
                enorm,
                eps,
                eps / 4.0,
            )?;
        }

        if let Some(test) = &test_ds {
            let tx = test.to_tensor()?;
            eval_set(
                &mut metrics,
                net,
                ctx.epoch,
                "clean_test",
                &tx,
                &test.labels,
                Some(&clean_stats),
                "none",
                0.0,
                0.0,
            )?;
        }
        Ok(())
    })?;
    metrics.flush()?;

    let mut log = BufWriter::new(fs::File::create(cfg.out_dir.join("train_log.csv"))?);
    provenance(&mut log, hash, seed)?;
    if let Some(onset) = result.tpt_onset {
        writeln!(log, "# tpt_onset = {}", onset)?;
    }
    writeln!(log, "epoch,lr,clean_accuracy,robust_accuracy,ce_loss,robust_loss")?;
    for l in &result.logs {
        if !l.ce_loss.is_finite() || !l.robust_loss.is_finite() {
            return Err(Error::NonFinite("training loss").with_epoch(l.epoch));
        }
        writeln!(
            log,
            "{},{:e},{:e},{:e},{:e},{:e}",
            l.epoch,
            crate::training::lr_at(&cfg.train, l.epoch),
            l.clean_accuracy,
            l.robust_accuracy,
            l.ce_loss,
            l.robust_loss
        )?;
    }
    log.flush()?;

    checkpoint::save(&net, &cfg.out_dir.join("final.ckpt"))?;
    Ok(cfg.out_dir.clone())
}

/// Per-tap depth profile: clean-statistics collapse metrics plus NCC
/// accuracy and network-matching rates for clean and perturbed inputs, on
/// the reference split (centers) and an evaluation split.
pub fn emit_layerwise<F: Scalar>(
    net: &Network<F>,
    train: &Dataset<F>,
    test: Option<&Dataset<F>>,
    attack: &AttackConfig,
    max_dim: usize,
    out_path: &Path,
) -> Result<()> {
    let train_x = train.to_tensor()?;
    let train_adv = pgd_untargeted(net, &train_x, &train.labels, attack)?;
    let (test_x, test_labels) = match test {
        Some(t) => (t.to_tensor()?, t.labels.clone()),
        None => (train_x.clone(), train.labels.clone()),
    };
    let test_adv = pgd_untargeted(net, &test_x, &test_labels, attack)?;

    let (clean_tr, preds_clean_tr) = pooled_tap_features(net, &train_x, max_dim)?;
    let (pert_tr, preds_pert_tr) = pooled_tap_features(net, &train_adv, max_dim)?;
    let (clean_te, preds_clean_te) = pooled_tap_features(net, &test_x, max_dim)?;
    let (pert_te, preds_pert_te) = pooled_tap_features(net, &test_adv, max_dim)?;

    let mut prov_cfg = Config::new();
    attack_to_config(attack, "attack.", &mut prov_cfg);
    let mut w = BufWriter::new(fs::File::create(out_path)?);
    provenance(&mut w, prov_cfg.content_hash(), attack.seed)?;
    writeln!(
        w,
        "depth,dim,nc1,nc2_equinorm,nc2_equiangular,ncc_acc_clean_train,ncc_acc_pert_train,ncc_acc_clean_test,ncc_acc_pert_test,match_clean_train,match_pert_train,match_clean_test,match_pert_test"
    )?;

    let c = net.num_classes;
    for depth in 0..clean_tr.len() {
        let row = || -> Result<String> {
            let ref_fs = FeatureSet::from_rows(&clean_tr[depth], &train.labels, c)?;
            let stats = class_stats(&ref_fs)?;
            let centers = &stats.class_means;
            let (equinorm, equiangular) = crate::nc::metrics::nc2(&stats)?;
            let fs_pt = FeatureSet::from_rows(&pert_tr[depth], &train.labels, c)?;
            let fs_ct = FeatureSet::from_rows(&clean_te[depth], &test_labels, c)?;
            let fs_pe = FeatureSet::from_rows(&pert_te[depth], &test_labels, c)?;
            Ok(format!(
                "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                depth,
                clean_tr[depth].cols,
                crate::nc::metrics::nc1(&stats)?.to_f64(),
                equinorm.to_f64(),
                equiangular.to_f64(),
                ncc_accuracy(&ref_fs, centers)?.to_f64(),
                ncc_accuracy(&fs_pt, centers)?.to_f64(),
                ncc_accuracy(&fs_ct, centers)?.to_f64(),
                ncc_accuracy(&fs_pe, centers)?.to_f64(),
                ncc_matching_rate(&ref_fs, &preds_clean_tr, centers)?.to_f64(),
                ncc_matching_rate(&fs_pt, &preds_pert_tr, centers)?.to_f64(),
                ncc_matching_rate(&fs_ct, &preds_clean_te, centers)?.to_f64(),
                ncc_matching_rate(&fs_pe, &preds_pert_te, centers)?.to_f64(),
            ))
        };
        writeln!(w, "{}", row().map_err(|e| e.with_layer(depth))?)?;
    }
    w.flush()?;
    Ok(())
}

/// Cluster-leap geometry: perturb the dataset, group penultimate
/// representations by PREDICTED label, and emit four sections — predicted
/// histogram, clean-mean norms, predicted-mean norms, per-class angles.
pub fn emit_cluster_leap<F: Scalar>(
    net: &Network<F>,
    ds: &Dataset<F>,
    attack: &AttackConfig,
    out_path: &Path,
) -> Result<()> {
    let x = ds.to_tensor()?;
    let adv = match attack.loss_mode {
        LossMode::CeTargeted => {
            let targets = circular_targets(&ds.labels, ds.num_classes);
            pgd_targeted(net, &x, &targets, attack)?
        }
        _ => pgd_untargeted(net, &x, &ds.labels, attack)?,
    };

    let (clean_feats, _) = penultimate_features(net, &x)?;
    let clean_fs = FeatureSet::from_rows(&clean_feats, &ds.labels, ds.num_classes)?;
    let clean_stats = class_stats(&clean_fs)?;

    let (adv_feats, adv_preds) = penultimate_features(net, &adv)?;
    let fs_predicted = FeatureSet::from_rows(&adv_feats, &adv_preds, ds.num_classes)?;
    let groups = predicted_group_stats(&fs_predicted, &clean_stats)?;

    let mut prov_cfg = Config::new();
    attack_to_config(attack, "attack.", &mut prov_cfg);
    let mut w = BufWriter::new(fs::File::create(out_path)?);
    provenance(&mut w, prov_cfg.content_hash(), attack.seed)?;

    writeln!(w, "# section: predicted_histogram")?;
    writeln!(w, "class,count")?;
    for g in &groups {
        writeln!(w, "{},{}", g.class, g.count)?;
    }

    writeln!(w, "# section: clean_mean_norms")?;
    writeln!(w, "class,norm")?;
    for (c, m) in clean_stats.centered_means().iter().enumerate() {
        writeln!(w, "{},{:e}", c, crate::linalg::l2_norm(m).to_f64())?;
    }

    writeln!(w, "# section: predicted_mean_norms")?;
    writeln!(w, "class,norm")?;
    for g in &groups {
        writeln!(w, "{},{}", g.class, fmt_opt(g.mean_norm))?;
    }

    writeln!(w, "# section: predicted_angles")?;
    writeln!(w, "class,angle_rad")?;
    for g in &groups {
        writeln!(w, "{},{}", g.class, fmt_opt(g.angle_to_clean))?;
    }
    w.flush()?;
    Ok(())
}

/// Summary of a cluster-leap run for programmatic checks: targeted success
/// rate and the mean angle over non-empty predicted groups.
pub fn cluster_leap_summary<F: Scalar>(
    net: &Network<F>,
    ds: &Dataset<F>,
    attack: &AttackConfig,
) -> Result<(f64, f64)> {
    let x = ds.to_tensor()?;
    let targets = circular_targets(&ds.labels, ds.num_classes);
    let adv = pgd_targeted(net, &x, &targets, attack)?;
    let (clean_feats, _) = penultimate_features(net, &x)?;
    let clean_stats = class_stats(&FeatureSet::from_rows(&clean_feats, &ds.labels, ds.num_classes)?)?;
    let (adv_feats, adv_preds) = penultimate_features(net, &adv)?;
    let success = accuracy(&adv_preds, &targets);
    let fs_predicted = FeatureSet::from_rows(&adv_feats, &adv_preds, ds.num_classes)?;
    let groups = predicted_group_stats(&fs_predicted, &clean_stats)?;
    let angles: Vec<f64> = groups
        .iter()
        .filter_map(|g| g.angle_to_clean.map(|a| a.to_f64()))
        .collect();
    if angles.is_empty() {
        return Err(Error::Degenerate("no non-empty predicted groups".into()));
    }
    let mean_angle = angles.iter().sum::<f64>() / angles.len() as f64;
    Ok((success, mean_angle))
}
