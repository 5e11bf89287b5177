//! Acceptance gate: eleven go/no-go criteria covering metric correctness
//! (exact oracles), attack contracts, and desk-scale reproductions of the
//! headline collapse phenomena. Each criterion prints one pass/fail line
//! (with per-clause detail) and the test fails if any criterion fails.
//!
//! The empirical criteria (5-10) pin every free parameter — dataset seed,
//! model seed, schedule — so reruns are bit-for-bit repeatable.

use std::fmt::Write as _;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use nc_lab::attacks::{
    circular_targets, gaussian_perturb, pgd_kl, pgd_targeted, pgd_untargeted, AttackConfig,
    LossMode, Norm,
};
use nc_lab::data::{make_gaussian_mixture, Dataset};
use nc_lab::experiment::{accuracy, penultimate_features, run_experiment, ExperimentConfig};
use nc_lab::linalg::{dot, l2_norm, Mat};
use nc_lab::config::Config;
use nc_lab::models::{build_mlp, build_small_convnet};
use nc_lab::nc::etf::standard_etf;
use nc_lab::nc::layerwise::pooled_tap_features;
use nc_lab::nc::metrics::{self, predicted_group_stats};
use nc_lab::nc::stats::{class_stats, ClassStats, FeatureSet};
use nc_lab::tensor::{check_gradients, ops, Tensor};
use nc_lab::training::{fit, Regime, TrainConfig};
use nc_lab::{Network64, Tensor64};

// ---------------------------------------------------------------------------
// reporting

struct Clause {
    ok: bool,
    detail: String,
}

fn clause(ok: bool, detail: String) -> Clause {
    Clause { ok, detail }
}

/// Prints the one-line verdict (plus clause detail) and returns whether the
/// criterion passed.
fn verdict(num: usize, name: &str, started: Instant, clauses: &[Clause]) -> bool {
    let ok = clauses.iter().all(|c| c.ok);
    let mut line = format!(
        "criterion {:2} {:44} {} ({:.1}s)",
        num,
        name,
        if ok { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    for c in clauses {
        let _ = write!(line, "\n    [{}] {}", if c.ok { "ok" } else { "FAIL" }, c.detail);
    }
    println!("{line}");
    ok
}

// ---------------------------------------------------------------------------
// shared helpers

fn classifier_mat(net: &Network64) -> (Mat<f64>, Vec<f64>) {
    let (wt, bt) = net.classifier_params();
    let ws = wt.shape();
    (Mat { rows: ws[0], cols: ws[1], data: wt.to_vec() }, bt.to_vec())
}

struct CleanReport {
    nc1: f64,
    equiangular: f64,
    nc4: f64,
    stats: ClassStats<f64>,
}

fn clean_report(net: &Network64, x: &Tensor64, labels: &[usize]) -> CleanReport {
    let (feats, _) = penultimate_features(net, x).unwrap();
    let fs = FeatureSet::from_rows(&feats, labels, net.num_classes).unwrap();
    let stats = class_stats(&fs).unwrap();
    let (_, equiangular) = metrics::nc2(&stats).unwrap();
    let (w, b) = classifier_mat(net);
    CleanReport {
        nc1: metrics::nc1(&stats).unwrap(),
        equiangular,
        nc4: metrics::nc4_mismatch(&fs, &w, &b).unwrap(),
        stats,
    }
}

// ---------------------------------------------------------------------------
// criterion 1: exact collapse on a synthetic ETF

fn etf_oracle_suite() -> Vec<Clause> {
    let mut out = Vec::new();
    for &c in &[3usize, 10, 100] {
        let frame = standard_etf::<f64>(c, c, c as u64).unwrap();
        // zero-variance clusters: every class sits exactly on its vertex
        let mut fs = FeatureSet::new(c, c);
        for class in 0..c {
            for _ in 0..3 {
                fs.push(class, frame.row(class).to_vec()).unwrap();
            }
        }
        let stats = class_stats(&fs).unwrap();
        let nc1 = metrics::nc1(&stats).unwrap();
        let (equinorm, equiangular) = metrics::nc2(&stats).unwrap();
        let nc3 = metrics::nc3(&stats, &frame).unwrap();
        let nc4 = metrics::nc4_mismatch(&fs, &frame, &vec![0.0; c]).unwrap();
        out.push(clause(
            nc1.abs() <= 1e-10
                && equinorm.abs() <= 1e-10
                && equiangular.abs() <= 1e-10
                && nc3.abs() <= 1e-10
                && nc4.abs() <= 1e-10,
            format!(
                "C={c}: nc1 {nc1:.1e}, nc2 ({equinorm:.1e}, {equiangular:.1e}), nc3 {nc3:.1e}, nc4 {nc4:.1e}, all <= 1e-10"
            ),
        ));
        // every pairwise angle equals arccos(-1/(C-1)) to 1e-10
        let expect = (-1.0 / (c as f64 - 1.0)).acos();
        let mut worst = 0.0f64;
        for i in 0..c {
            for j in (i + 1)..c {
                let angle = dot(frame.row(i), frame.row(j)).clamp(-1.0, 1.0).acos();
                worst = worst.max((angle - expect).abs());
            }
        }
        out.push(clause(
            worst <= 1e-10,
            format!("C={c}: pairwise angles match arccos(-1/{}) = {expect:.4} rad to {worst:.1e}", c - 1),
        ));
        if c == 10 {
            out.push(clause((expect - 1.68).abs() <= 1e-2, format!("C=10 angle {expect:.4} ~ 1.68 rad")));
        }
        if c == 100 {
            out.push(clause((expect - 1.58).abs() <= 1e-2, format!("C=100 angle {expect:.4} ~ 1.58 rad")));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// criterion 2: direct-summation oracles on random small instances

/// Dense inverse by Gauss-Jordan with partial pivoting; the instances keep
/// p <= C-1 so the between-class scatter is generically full rank and no
/// pseudoinverse machinery is needed on the oracle side.
fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        for v in &mut m[col] {
            *v /= p;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = m[row][col];
            for k in 0..2 * n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

struct OracleStats {
    class_means: Vec<Vec<f64>>,
    global_mean: Vec<f64>,
    sigma_b: Vec<Vec<f64>>,
    sigma_w: Vec<Vec<f64>>,
}

fn oracle_stats(features: &[Vec<f64>], labels: &[usize], c: usize) -> OracleStats {
    let p = features[0].len();
    let n = features.len();
    let mut class_means = vec![vec![0.0; p]; c];
    let mut counts = vec![0usize; c];
    let mut global_mean = vec![0.0; p];
    for (f, &l) in features.iter().zip(labels) {
        counts[l] += 1;
        for j in 0..p {
            class_means[l][j] += f[j];
            global_mean[j] += f[j];
        }
    }
    for (m, &cnt) in class_means.iter_mut().zip(&counts) {
        for v in m.iter_mut() {
            *v /= cnt as f64;
        }
    }
    for v in &mut global_mean {
        *v /= n as f64;
    }
    let mut sigma_b = vec![vec![0.0; p]; p];
    for m in &class_means {
        for i in 0..p {
            for j in 0..p {
                sigma_b[i][j] += (m[i] - global_mean[i]) * (m[j] - global_mean[j]) / c as f64;
            }
        }
    }
    let mut sigma_w = vec![vec![0.0; p]; p];
    for (f, &l) in features.iter().zip(labels) {
        for i in 0..p {
            for j in 0..p {
                sigma_w[i][j] += (f[i] - class_means[l][i]) * (f[j] - class_means[l][j]) / n as f64;
            }
        }
    }
    OracleStats { class_means, global_mean, sigma_b, sigma_w }
}

fn oracle_nc1(s: &OracleStats) -> f64 {
    let inv = invert(&s.sigma_b);
    let p = inv.len();
    (0..p).map(|i| (0..p).map(|k| inv[i][k] * s.sigma_w[k][i]).sum::<f64>()).sum()
}

fn oracle_centered_unit(s: &OracleStats) -> Vec<Vec<f64>> {
    s.class_means
        .iter()
        .map(|m| {
            let d: Vec<f64> = m.iter().zip(&s.global_mean).map(|(a, g)| a - g).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            d.into_iter().map(|v| v / norm).collect()
        })
        .collect()
}

fn oracle_nc2(s: &OracleStats) -> (f64, f64) {
    let c = s.class_means.len();
    let norms: Vec<f64> = s
        .class_means
        .iter()
        .map(|m| {
            m.iter().zip(&s.global_mean).map(|(a, g)| (a - g) * (a - g)).sum::<f64>().sqrt()
        })
        .collect();
    let mean = norms.iter().sum::<f64>() / c as f64;
    let equinorm = (norms.iter().map(|n| (n - mean) * (n - mean)).sum::<f64>() / c as f64).sqrt();
    let tilde = oracle_centered_unit(s);
    let mut acc = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                let ip: f64 = tilde[i].iter().zip(&tilde[j]).map(|(a, b)| a * b).sum();
                acc += (ip + 1.0 / (c as f64 - 1.0)).abs();
            }
        }
    }
    (equinorm, acc / (c * (c - 1)) as f64)
}

fn oracle_nc3(s: &OracleStats, w: &[Vec<f64>]) -> f64 {
    let tilde = oracle_centered_unit(s);
    let mut acc = 0.0;
    for (row, t) in w.iter().zip(&tilde) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (wi, ti) in row.iter().zip(t) {
            acc += (wi / norm - ti) * (wi / norm - ti);
        }
    }
    acc.sqrt()
}

fn oracle_ncc(h: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (0usize, f64::INFINITY);
    for (c, m) in centers.iter().enumerate() {
        let d: f64 = h.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

fn oracle_angle(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ip: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (ip / (na * nb)).clamp(-1.0, 1.0).acos()
}

fn brute_force_equivalence() -> Vec<Clause> {
    let mut worst: (f64, &'static str) = (0.0, "none");
    let track = |name: &'static str, a: f64, b: f64, worst: &mut (f64, &'static str)| {
        let d = (a - b).abs();
        if d > worst.0 {
            *worst = (d, name);
        }
    };
    for instance in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(instance);
        let c = rng.gen_range(3..=5usize);
        let p = c - 1;
        // ETF centers keep Sigma_B full-rank and well conditioned, so the
        // production pseudoinverse and the oracle's dense inverse agree to
        // machine precision
        let frame = standard_etf::<f64>(c, p, 1000 + instance).unwrap();
        let centers: Vec<Vec<f64>> = (0..c).map(|i| {
            frame.row(i).iter().map(|v| 2.0 * v).collect()
        }).collect();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for class in 0..c {
            for _ in 0..rng.gen_range(1..=10usize) {
                features.push(
                    (0..p)
                        .map(|j| centers[class][j] + 0.4 * rng.sample::<f64, _>(StandardNormal))
                        .collect::<Vec<f64>>(),
                );
                labels.push(class);
            }
        }
        let second: Vec<Vec<f64>> = features
            .iter()
            .map(|f| f.iter().map(|v| v + 0.2 * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let w: Vec<Vec<f64>> =
            (0..c).map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let b: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
        let preds: Vec<usize> = (0..labels.len()).map(|_| rng.gen_range(0..c)).collect();

        let rows = Mat::from_rows(&features);
        let fs = FeatureSet::from_rows(&rows, &labels, c).unwrap();
        let stats = class_stats(&fs).unwrap();
        let fs2 = FeatureSet::from_rows(&Mat::from_rows(&second), &labels, c).unwrap();
        let stats2 = class_stats(&fs2).unwrap();
        let wm = Mat::from_rows(&w);

        let os = oracle_stats(&features, &labels, c);
        let os2 = oracle_stats(&second, &labels, c);

        track("nc1", metrics::nc1(&stats).unwrap(), oracle_nc1(&os), &mut worst);
        let (en, ea) = metrics::nc2(&stats).unwrap();
        let (oen, oea) = oracle_nc2(&os);
        track("nc2_equinorm", en, oen, &mut worst);
        track("nc2_equiangular", ea, oea, &mut worst);
        track("nc3", metrics::nc3(&stats, &wm).unwrap(), oracle_nc3(&os, &w), &mut worst);

        // nc4: fraction where argmax(Wh+b) and nearest own-center disagree
        let mism = features
            .iter()
            .filter(|h| {
                let lin = (0..c)
                    .max_by(|&i, &j| {
                        let vi: f64 = w[i].iter().zip(*h).map(|(a, b)| a * b).sum::<f64>() + b[i];
                        let vj: f64 = w[j].iter().zip(*h).map(|(a, b)| a * b).sum::<f64>() + b[j];
                        vi.total_cmp(&vj)
                    })
                    .unwrap();
                lin != oracle_ncc(h, &os.class_means)
            })
            .count() as f64
            / features.len() as f64;
        track("nc4_mismatch", metrics::nc4_mismatch(&fs, &wm, &b).unwrap(), mism, &mut worst);

        // NCC accuracy / matching rate of the second set against first-set centers
        let acc = second
            .iter()
            .zip(&labels)
            .filter(|(h, &l)| oracle_ncc(h, &os.class_means) == l)
            .count() as f64
            / second.len() as f64;
        track(
            "ncc_accuracy",
            metrics::ncc_accuracy(&fs2, &stats.class_means).unwrap(),
            acc,
            &mut worst,
        );
        let matched = second
            .iter()
            .zip(&preds)
            .filter(|(h, &pr)| oracle_ncc(h, &os.class_means) == pr)
            .count() as f64
            / second.len() as f64;
        track(
            "ncc_matching_rate",
            metrics::ncc_matching_rate(&fs2, &preds, &stats.class_means).unwrap(),
            matched,
            &mut worst,
        );

        let t1 = oracle_centered_unit(&os);
        let t2 = oracle_centered_unit(&os2);
        let sim = (0..c).map(|i| oracle_angle(&t1[i], &t2[i])).sum::<f64>() / c as f64;
        track(
            "simplex_similarity",
            metrics::simplex_similarity(&stats, &stats2).unwrap(),
            sim,
            &mut worst,
        );
        let ang = (0..c)
            .map(|i| oracle_angle(&os.class_means[i], &os2.class_means[i]))
            .sum::<f64>()
            / c as f64;
        track(
            "noncentered_angular",
            metrics::noncentered_angular(&stats, &stats2).unwrap(),
            ang,
            &mut worst,
        );
    }
    vec![clause(
        worst.0 <= 1e-10,
        format!("100 instances, worst deviation {:.1e} ({}) <= 1e-10", worst.0, worst.1),
    )]
}

// ---------------------------------------------------------------------------
// criterion 3: finite-difference gradient checks on both losses

fn gradient_correctness() -> Vec<Clause> {
    let mut out = Vec::new();
    let mlp = build_mlp::<f64>(6, &[8], 3, 11).unwrap();
    mlp.freeze();
    let conv = build_small_convnet::<f64>(&[2, 3], (1, 4, 4), 3, 12).unwrap();
    conv.freeze();
    let cases: [(&str, &Network64, Vec<usize>); 2] =
        [("mlp", &mlp, vec![4, 6]), ("convnet", &conv, vec![2, 1, 4, 4])];
    for (name, net, shape) in &cases {
        let n = shape[0];
        let dim: usize = shape[1..].iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut worst_ce = 0.0f64;
        let mut worst_kl = 0.0f64;
        for _ in 0..10 {
            let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(0.05..0.95)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let point = Tensor::new(shape, data.clone()).unwrap();
            // the step sits between roundoff (the pooled convnet has tiny
            // per-pixel gradients, so differences cancel below ~1e-4) and
            // relu-kink straddling (which appears above ~3e-4)
            let err = check_gradients(
                |x| ops::softmax_cross_entropy(&net.forward(x)?, &labels),
                &point,
                2e-4,
            )
            .unwrap();
            worst_ce = worst_ce.max(err);

            let reference: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(0.05..0.95)).collect();
            let clean = net.forward(&Tensor::new(shape, reference).unwrap()).unwrap().detach();
            let err = check_gradients(
                |x| ops::kl_divergence(&clean, &net.forward(x)?),
                &point,
                2e-4,
            )
            .unwrap();
            worst_kl = worst_kl.max(err);
        }
        out.push(clause(
            worst_ce <= 1e-5,
            format!("{name} CE: worst relative error {worst_ce:.1e} <= 1e-5 (10 points)"),
        ));
        out.push(clause(
            worst_kl <= 1e-5,
            format!("{name} KL: worst relative error {worst_kl:.1e} <= 1e-5 (10 points)"),
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// criterion 4: attack output contracts over random configurations

fn attack_contracts() -> Vec<Clause> {
    let net = build_mlp::<f64>(4, &[6], 3, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut ball_worst = 0.0f64;
    let mut range_worst = 0.0f64;
    let mut frozen = true;
    let mut identity = true;
    let mut identity_cases = 0usize;
    for invocation in 0..1000u64 {
        let cfg = AttackConfig {
            norm: if rng.gen_bool(0.5) { Norm::Linf } else { Norm::L2 },
            epsilon: if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.01..0.5) },
            alpha: rng.gen_range(0.005..0.2),
            steps: rng.gen_range(0..=5usize),
            loss_mode: LossMode::CeUntargeted,
            random_start: rng.gen_bool(0.5),
            clamp_input_range: rng.gen_bool(0.8),
            seed: invocation,
        };
        let data: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<usize> = (0..2).map(|_| rng.gen_range(0..3)).collect();
        let x = Tensor::new(&[2, 4], data.clone()).unwrap();
        let before: Vec<Vec<f64>> = net.params().iter().map(|p| p.to_vec()).collect();

        let adv = match invocation % 3 {
            0 => pgd_untargeted(&net, &x, &labels, &cfg).unwrap(),
            1 => pgd_targeted(&net, &x, &circular_targets(&labels, 3), &cfg).unwrap(),
            _ => pgd_kl(&net, &x, &cfg).unwrap(),
        };
        let av = adv.to_vec();

        // norm-ball membership
        match cfg.norm {
            Norm::Linf => {
                for (a, o) in av.iter().zip(&data) {
                    ball_worst = ball_worst.max((a - o).abs() - cfg.epsilon);
                }
            }
            Norm::L2 => {
                for i in 0..2 {
                    let d: f64 = av[i * 4..(i + 1) * 4]
                        .iter()
                        .zip(&data[i * 4..(i + 1) * 4])
                        .map(|(a, o)| (a - o) * (a - o))
                        .sum();
                    ball_worst = ball_worst.max(d.sqrt() - cfg.epsilon);
                }
            }
        }
        if cfg.clamp_input_range {
            for &a in &av {
                range_worst = range_worst.max((-a).max(a - 1.0));
            }
        }
        // parameter and input immutability (bitwise)
        frozen &= net
            .params()
            .iter()
            .zip(&before)
            .all(|(p, b)| p.to_vec() == *b && p.grad().is_none())
            && x.to_vec() == data;
        if cfg.steps == 0 {
            identity_cases += 1;
            identity &= av == data;
        }
    }
    vec![
        clause(ball_worst <= 1e-12, format!("norm-ball overshoot {ball_worst:.1e} <= 1e-12 (1000 invocations)")),
        clause(range_worst <= 1e-12, format!("range-clamp overshoot {range_worst:.1e} <= 1e-12")),
        clause(frozen, "parameters, gradients, and inputs untouched by every attack".into()),
        clause(identity, format!("N=0 returns the input exactly ({identity_cases} cases)")),
    ]
}

// ---------------------------------------------------------------------------
// criteria 5-7: the frozen ST run and attacks on it

/// C=4, 50/class, dim 20, radius/noise = 4.8: snug enough to need real
/// training, separated enough for tight equiangularity.
fn st_task() -> Dataset<f64> {
    make_gaussian_mixture::<f64>(4, 50, 20, 1.2, 0.25, 0).unwrap()
}

struct StRun {
    net: Network64,
    x: Tensor64,
    labels: Vec<usize>,
    clauses: Vec<Clause>,
    clean: CleanReport,
}

fn st_collapse() -> StRun {
    let ds = st_task();
    let mut cfg = TrainConfig::desk_default(Regime::St);
    cfg.batch_size = 32;
    cfg.weight_decay = 5e-3;
    cfg.metric_every = cfg.epochs;
    cfg.eval_attack.steps = 0;
    let x = ds.to_tensor().unwrap();

    // pass 1 finds the zero-training-error onset; pass 2 retraces the
    // identical trajectory and reads nc1 off at exactly that epoch
    let scout = build_mlp::<f64>(20, &[128, 128], 4, 1).unwrap();
    let onset = fit(&scout, &ds, &cfg, |_, _| Ok(())).unwrap().tpt_onset;

    let net = build_mlp::<f64>(20, &[128, 128], 4, 1).unwrap();
    cfg.metric_every = 1;
    let mut onset_nc1: Option<(usize, f64)> = None;
    let result = fit(&net, &ds, &cfg, |net, ctx| {
        if Some(ctx.epoch) == onset {
            let (feats, _) = penultimate_features(net, ctx.clean)?;
            let fs = FeatureSet::from_rows(&feats, ctx.labels, 4)?;
            onset_nc1 = Some((ctx.epoch, metrics::nc1(&class_stats(&fs)?)?));
        }
        Ok(())
    })
    .unwrap();

    let clean = clean_report(&net, &x, &ds.labels);
    let mut clauses = Vec::new();
    let onset = result.tpt_onset;
    let stays = onset.map_or(false, |e| {
        result.logs[e..].iter().all(|l| l.clean_accuracy == 1.0)
    });
    clauses.push(clause(
        stays,
        format!("training error reaches 0 (epoch {onset:?}) and stays 0 through epoch 200"),
    ));
    let (oe, onc1) = onset_nc1.unwrap_or((0, f64::NAN));
    clauses.push(clause(
        clean.nc1 <= 0.1 * onc1,
        format!(
            "final clean nc1 {:.3e} <= 10% of zero-error-onset (epoch {oe}) value {onc1:.3e} (ratio {:.2})",
            clean.nc1,
            clean.nc1 / onc1
        ),
    ));
    clauses.push(clause(
        clean.equiangular <= 0.05,
        format!("nc2_equiangular {:.4} <= 0.05", clean.equiangular),
    ));
    clauses.push(clause(clean.nc4 == 0.0, format!("nc4_mismatch {} = 0", clean.nc4)));
    StRun { net, x, labels: ds.labels.clone(), clauses, clean }
}

fn fragility(st: &StRun) -> Vec<Clause> {
    // 24/255 is about half the smallest inter-class l-inf gap between raw
    // training examples
    let eps = 24.0 / 255.0;
    let atk = AttackConfig { epsilon: eps, alpha: eps / 4.0, ..AttackConfig::linf_default() };
    let adv = pgd_untargeted(&st.net, &st.x, &st.labels, &atk).unwrap();
    let (pfeats, ppreds) = penultimate_features(&st.net, &adv).unwrap();
    let success = 1.0 - accuracy(&ppreds, &st.labels);
    // ground-truth grouping of the perturbed representations
    let pfs = FeatureSet::from_rows(&pfeats, &st.labels, 4).unwrap();
    let pert_nc1 = metrics::nc1(&class_stats(&pfs).unwrap()).unwrap();
    let gx = gaussian_perturb(&st.x, eps, 13).unwrap();
    let (gfeats, _) = penultimate_features(&st.net, &gx).unwrap();
    let gfs = FeatureSet::from_rows(&gfeats, &st.labels, 4).unwrap();
    let gauss_nc1 = metrics::nc1(&class_stats(&gfs).unwrap()).unwrap();
    vec![
        clause(success >= 0.95, format!("untargeted success {success:.3} >= 0.95 at eps 24/255")),
        clause(
            pert_nc1 >= 10.0 * st.clean.nc1,
            format!("perturbed nc1 {pert_nc1:.3e} >= 10x clean {:.3e} ({:.1}x)", st.clean.nc1, pert_nc1 / st.clean.nc1),
        ),
        clause(
            gauss_nc1 <= 2.0 * st.clean.nc1,
            format!("gaussian nc1 {gauss_nc1:.3e} <= 2x clean ({:.2}x)", gauss_nc1 / st.clean.nc1),
        ),
    ]
}

fn cluster_leaping(st: &StRun) -> Vec<Clause> {
    let eps = 64.0 / 255.0;
    let atk = AttackConfig {
        epsilon: eps,
        alpha: 2.5 * eps / 100.0,
        steps: 100,
        loss_mode: LossMode::CeTargeted,
        ..AttackConfig::linf_default()
    };
    let targets = circular_targets(&st.labels, 4);
    let counts = {
        let mut c = [0usize; 4];
        for &t in &targets {
            c[t] += 1;
        }
        c
    };
    let adv = pgd_targeted(&st.net, &st.x, &targets, &atk).unwrap();
    let (afeats, apreds) = penultimate_features(&st.net, &adv).unwrap();
    let success = accuracy(&apreds, &targets);
    // group perturbed representations by predicted class, compare each
    // group mean's direction to the clean class mean of that class
    let fs_pred = FeatureSet::from_rows(&afeats, &apreds, 4).unwrap();
    let groups = predicted_group_stats(&fs_pred, &st.clean.stats).unwrap();
    let angles: Vec<f64> = groups.iter().filter_map(|g| g.angle_to_clean).collect();
    let mean_angle = angles.iter().sum::<f64>() / angles.len().max(1) as f64;
    let cm = st.clean.stats.centered_means();
    let mut min_pair = f64::INFINITY;
    for i in 0..4 {
        for j in (i + 1)..4 {
            let cos = dot(&cm[i], &cm[j]) / (l2_norm(&cm[i]) * l2_norm(&cm[j]));
            min_pair = min_pair.min(cos.clamp(-1.0, 1.0).acos());
        }
    }
    let floor = (-1.0f64 / 3.0).acos() - 0.1;
    vec![
        clause(success == 1.0, format!("targeted success {success:.3} = 100%")),
        clause(
            angles.len() == 4 && mean_angle <= 0.3,
            format!("mean predicted-to-clean class-mean angle {mean_angle:.4} rad <= 0.3"),
        ),
        clause(
            min_pair >= floor,
            format!("clean inter-class angle {min_pair:.4} >= arccos(-1/3) - 0.1 = {floor:.4}"),
        ),
        clause(
            counts.iter().all(|&c| c == 50),
            format!("circular target balance exact: {counts:?}"),
        ),
    ]
}

// ---------------------------------------------------------------------------
// criteria 8-9: robust training on the same task

struct AtRun {
    clauses: Vec<Clause>,
    clean_nc1: f64,
}

fn at_twin_simplices() -> AtRun {
    let ds = st_task();
    let net = build_mlp::<f64>(20, &[128, 128], 4, 2).unwrap();
    let mut cfg = TrainConfig::desk_default(Regime::At);
    cfg.batch_size = 32;
    cfg.weight_decay = 5e-3;
    cfg.seed = 2;
    cfg.attack.epsilon = 6.0 / 255.0; // below the inter-class l-inf margin
    cfg.attack.alpha = cfg.attack.epsilon / 4.0;
    cfg.attack.steps = 10;
    cfg.metric_every = cfg.epochs;
    let x = ds.to_tensor().unwrap();

    let mut final_pert: Option<Tensor64> = None;
    let result = fit(&net, &ds, &cfg, |_, ctx| {
        final_pert = Some(ctx.perturbed.clone());
        Ok(())
    })
    .unwrap();
    let last = result.logs.last().unwrap();

    let clean = clean_report(&net, &x, &ds.labels);
    let pert = clean_report(&net, &final_pert.unwrap(), &ds.labels);
    let similarity = metrics::simplex_similarity(&clean.stats, &pert.stats).unwrap();
    let angular = metrics::noncentered_angular(&clean.stats, &pert.stats).unwrap();

    let clauses = vec![
        clause(
            last.clean_accuracy == 1.0 && last.robust_accuracy == 1.0,
            format!(
                "clean {:.3} and robust {:.3} training accuracy both 100% at eps 6/255",
                last.clean_accuracy, last.robust_accuracy
            ),
        ),
        clause(
            clean.equiangular <= 0.05 && clean.nc4 == 0.0,
            format!("clean: nc2_equiangular {:.4} <= 0.05, nc4 {} = 0", clean.equiangular, clean.nc4),
        ),
        clause(
            pert.equiangular <= 0.05 && pert.nc4 == 0.0,
            format!("perturbed: nc2_equiangular {:.4} <= 0.05, nc4 {} = 0", pert.equiangular, pert.nc4),
        ),
        clause(
            similarity <= 0.1 && angular <= 0.1,
            format!("simplex_similarity {similarity:.4} <= 0.1, noncentered_angular {angular:.4} <= 0.1"),
        ),
        clause(
            pert.nc1 > clean.nc1,
            format!("perturbed nc1 {:.3e} > clean nc1 {:.3e}", pert.nc1, clean.nc1),
        ),
    ];
    AtRun { clauses, clean_nc1: clean.nc1 }
}

fn trades_non_collapse(at: &AtRun) -> Vec<Clause> {
    let ds = st_task();
    let net = build_mlp::<f64>(20, &[128, 128], 4, 1).unwrap();
    let mut cfg = TrainConfig::desk_default(Regime::Trades);
    cfg.batch_size = 32;
    cfg.weight_decay = 5e-4; // 5e-3 collapses TRADES to a constant function
    cfg.metric_every = cfg.epochs;
    let x = ds.to_tensor().unwrap();
    let result = fit(&net, &ds, &cfg, |_, _| Ok(())).unwrap();
    let last = result.logs.last().unwrap();
    let clean = clean_report(&net, &x, &ds.labels);
    vec![
        clause(
            last.clean_accuracy == 1.0 && last.ce_loss <= 1e-2 && last.robust_loss <= 1e-2,
            format!(
                "converged with both losses near zero: ce {:.2e}, kl {:.2e} (acc {:.3})",
                last.ce_loss, last.robust_loss, last.clean_accuracy
            ),
        ),
        clause(
            clean.nc1 >= 5.0 * at.clean_nc1,
            format!(
                "TRADES clean nc1 {:.3e} >= 5x the matched-epoch AT value {:.3e} ({:.2}x)",
                clean.nc1,
                at.clean_nc1,
                clean.nc1 / at.clean_nc1
            ),
        ),
        clause(
            clean.equiangular >= 0.1,
            format!("nc2_equiangular {:.4} stays >= 0.1", clean.equiangular),
        ),
    ]
}

// ---------------------------------------------------------------------------
// criterion 10: depth profile of a small convnet

/// dim-16 mixture rendered as 16x16 images by 4x nearest-neighbor upsampling
/// plus iid per-pixel noise, clamped to [0,1].
fn image_task() -> Dataset<f64> {
    let base = make_gaussian_mixture::<f64>(4, 50, 16, 1.2, 0.3, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut inputs = Vec::with_capacity(base.len() * 256);
    for i in 0..base.len() {
        let ex = base.example(i);
        for py in 0..16 {
            for px in 0..16 {
                let n: f64 = rng.sample(StandardNormal);
                inputs.push((ex[(py / 4) * 4 + px / 4] + 0.15 * n).clamp(0.0, 1.0));
            }
        }
    }
    Dataset {
        input_shape: vec![1, 16, 16],
        inputs,
        labels: base.labels.clone(),
        num_classes: 4,
        metadata: base.metadata.clone(),
    }
}

fn layerwise_profile() -> Vec<Clause> {
    let ds = image_task();
    let net = build_small_convnet::<f64>(&[8, 16, 16, 32], (1, 16, 16), 4, 1).unwrap();
    let mut cfg = TrainConfig::desk_default(Regime::St);
    cfg.batch_size = 32;
    cfg.weight_decay = 5e-3;
    cfg.metric_every = cfg.epochs;
    cfg.eval_attack.steps = 0;
    let result = fit(&net, &ds, &cfg, |_, _| Ok(())).unwrap();
    let zero_error = result.logs.last().unwrap().clean_accuracy == 1.0;

    let x = ds.to_tensor().unwrap();
    let eps = 24.0 / 255.0;
    let atk = AttackConfig { epsilon: eps, alpha: eps / 4.0, ..AttackConfig::linf_default() };
    let adv = pgd_untargeted(&net, &x, &ds.labels, &atk).unwrap();
    let (clean_taps, _) = pooled_tap_features(&net, &x, usize::MAX).unwrap();
    let (pert_taps, _) = pooled_tap_features(&net, &adv, usize::MAX).unwrap();

    let mut clean_nc1 = Vec::new();
    let mut pert_nc1 = Vec::new();
    let mut pert_ncc = Vec::new();
    for (ct, pt) in clean_taps.iter().zip(&pert_taps) {
        let cfs = FeatureSet::from_rows(ct, &ds.labels, 4).unwrap();
        let cstats = class_stats(&cfs).unwrap();
        clean_nc1.push(metrics::nc1(&cstats).unwrap());
        let pfs = FeatureSet::from_rows(pt, &ds.labels, 4).unwrap();
        pert_nc1.push(metrics::nc1(&class_stats(&pfs).unwrap()).unwrap());
        pert_ncc.push(metrics::ncc_accuracy(&pfs, &cstats.class_means).unwrap());
    }
    let inversions = clean_nc1.windows(2).filter(|w| w[1] > w[0]).count();
    let chain: Vec<String> = clean_nc1.iter().map(|v| format!("{v:.3}")).collect();
    let first_ratio = pert_nc1[0] / clean_nc1[0];
    let last_ratio = pert_nc1.last().unwrap() / clean_nc1.last().unwrap();
    let ncc_gap = pert_ncc[0] - pert_ncc.last().unwrap();
    vec![
        clause(zero_error, format!("convnet trained to zero error (onset {:?})", result.tpt_onset)),
        clause(
            inversions <= 1,
            format!("clean nc1 non-increasing across depth up to one inversion: [{}] has {inversions}", chain.join(", ")),
        ),
        clause(
            first_ratio <= 2.0,
            format!("first-tap perturbed nc1 {first_ratio:.2}x clean <= 2x"),
        ),
        clause(
            last_ratio >= 10.0,
            format!("last-tap perturbed nc1 {last_ratio:.1}x clean >= 10x"),
        ),
        clause(
            ncc_gap >= 0.20,
            format!(
                "perturbed NCC accuracy: first tap {:.3} vs last tap {:.3} (gap {:.1} points >= 20)",
                pert_ncc[0],
                pert_ncc.last().unwrap(),
                100.0 * ncc_gap
            ),
        ),
    ]
}

// ---------------------------------------------------------------------------
// criterion 11: determinism of experiment outputs

fn determinism() -> Vec<Clause> {
    let base = "\
dataset.kind = gaussian_mixture
dataset.classes = 3
dataset.n_per_class = 12
dataset.test_per_class = 4
dataset.dim = 6
dataset.center_radius = 1.0
dataset.noise_std = 0.2
dataset.seed = 5
model.kind = mlp
model.hidden = 16
model.seed = 3
train.regime = at
train.epochs = 4
train.batch_size = 8
train.lr = 0.05
train.metric_every = 2
train.attack.steps = 3
train.eval_attack.steps = 3
sweep.epsilons = 0.02, 0.05
";
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for run in ["a", "b"] {
        let mut cfg = Config::parse(base).unwrap();
        let dir = tmp.path().join(run);
        cfg.set("output.dir", dir.to_str().unwrap());
        let ec = ExperimentConfig::from_config(cfg).unwrap();
        run_experiment::<f64>(&ec).unwrap();
        dirs.push(dir);
    }
    let mut out = Vec::new();
    for file in ["metrics.csv", "train_log.csv", "final.ckpt"] {
        let a = std::fs::read(dirs[0].join(file)).unwrap();
        let b = std::fs::read(dirs[1].join(file)).unwrap();
        out.push(clause(
            a == b,
            format!("rerun {file} byte-identical ({} bytes)", a.len()),
        ));
    }
    out
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    let mut run = |num: usize, name: &str, budget_s: Option<f64>, clauses: Vec<Clause>, t0: Instant| {
        let mut clauses = clauses;
        if let Some(limit) = budget_s {
            let took = t0.elapsed().as_secs_f64();
            clauses.push(clause(took < limit, format!("runtime {took:.1}s < {limit:.0}s")));
        }
        if !verdict(num, name, t0, &clauses) {
            failed.push(num);
        }
    };

    let t = Instant::now();
    run(1, "ETF oracle suite", Some(1.0), etf_oracle_suite(), t);
    let t = Instant::now();
    run(2, "brute-force metric equivalence", Some(10.0), brute_force_equivalence(), t);
    let t = Instant::now();
    run(3, "gradient correctness", Some(30.0), gradient_correctness(), t);
    let t = Instant::now();
    run(4, "attack contracts", Some(60.0), attack_contracts(), t);

    let t = Instant::now();
    let mut st = st_collapse();
    run(5, "ST collapse reproduction", Some(300.0), std::mem::take(&mut st.clauses), t);
    let t = Instant::now();
    run(6, "fragility under attack", Some(300.0), fragility(&st), t);
    let t = Instant::now();
    run(7, "cluster leaping", None, cluster_leaping(&st), t);

    let t = Instant::now();
    let mut at = at_twin_simplices();
    run(8, "AT twin simplices", Some(900.0), std::mem::take(&mut at.clauses), t);
    let t = Instant::now();
    run(9, "TRADES non-collapse", Some(900.0), trades_non_collapse(&at), t);

    let t = Instant::now();
    run(10, "layerwise profile", Some(900.0), layerwise_profile(), t);
    let t = Instant::now();
    run(11, "determinism and idempotence", None, determinism(), t);

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
