//! Flat key-value configuration files with dotted section prefixes
//! (`train.attack.epsilon = 8/255`), plus typed accessors and round-trip
//! serialization for the attack and training configs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::attacks::{AttackConfig, LossMode, Norm};
use crate::error::{Error, Result};
use crate::training::{Regime, TrainConfig};

/// Parsed configuration: ordered `key = value` pairs. Keys are unique;
/// a later assignment overrides an earlier one.
#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Config::default()
    }

    /// Parse `key = value` lines; `#` starts a comment, blank lines are
    /// ignored. Errors carry the 1-based line number.
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got {:?}", i + 1, raw))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            cfg.set(key, value.trim());
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.remove(key);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing key '{}'", key)))
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_real(v).map_err(|e| Error::Config(format!("key '{}': {}", key, e))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("key '{}': {}", key, e))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("key '{}': {}", key, e))),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::Config(format!(
                "key '{}': expected true or false, got {:?}",
                key, v
            ))),
        }
    }

    /// Canonical text form: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{} = {}", k, v);
        }
        out
    }

    /// FNV-1a over the canonical text; stamps output files so reruns are
    /// attributable to an exact configuration.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Real-number literal, with `a/b` fractions accepted so radii can be
/// written in pixel units (`8/255`).
pub fn parse_real(s: &str) -> Result<f64> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num
            .trim()
            .parse()
            .map_err(|e| Error::Config(format!("bad numerator {:?}: {}", num, e)))?;
        let d: f64 = den
            .trim()
            .parse()
            .map_err(|e| Error::Config(format!("bad denominator {:?}: {}", den, e)))?;
        if d == 0.0 {
            return Err(Error::Config(format!("zero denominator in {:?}", s)));
        }
        return Ok(n / d);
    }
    s.parse()
        .map_err(|e| Error::Config(format!("bad number {:?}: {}", s, e)))
}

/// Comma-separated list of values parsed by `f`.
pub fn parse_list<T>(s: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| f(p.trim())).collect()
}

fn norm_from_str(s: &str) -> Result<Norm> {
    match s {
        "linf" => Ok(Norm::Linf),
        "l2" => Ok(Norm::L2),
        other => Err(Error::Config(format!("unknown norm {:?} (linf | l2)", other))),
    }
}

fn norm_to_str(n: Norm) -> &'static str {
    match n {
        Norm::Linf => "linf",
        Norm::L2 => "l2",
    }
}

fn loss_mode_from_str(s: &str) -> Result<LossMode> {
    match s {
        "ce_untargeted" => Ok(LossMode::CeUntargeted),
        "ce_targeted" => Ok(LossMode::CeTargeted),
        "kl" => Ok(LossMode::Kl),
        other => Err(Error::Config(format!(
            "unknown loss_mode {:?} (ce_untargeted | ce_targeted | kl)",
            other
        ))),
    }
}

fn loss_mode_to_str(m: LossMode) -> &'static str {
    match m {
        LossMode::CeUntargeted => "ce_untargeted",
        LossMode::CeTargeted => "ce_targeted",
        LossMode::Kl => "kl",
    }
}

/// Read an AttackConfig from keys under `prefix` (e.g. `train.attack.`).
/// Missing keys fall back to the norm's defaults.
pub fn attack_from_config(cfg: &Config, prefix: &str) -> Result<AttackConfig> {
    let key = |k: &str| format!("{}{}", prefix, k);
    let norm = match cfg.get(&key("norm")) {
        None => Norm::Linf,
        Some(v) => norm_from_str(v).map_err(|e| Error::Config(format!("key '{}norm': {}", prefix, e)))?,
    };
    let base = match norm {
        Norm::Linf => AttackConfig::linf_default(),
        Norm::L2 => AttackConfig::l2_default(),
    };
    let loss_mode = match cfg.get(&key("loss_mode")) {
        None => base.loss_mode,
        Some(v) => loss_mode_from_str(v)?,
    };
    let out = AttackConfig {
        norm,
        epsilon: cfg.get_f64(&key("epsilon"), base.epsilon)?,
        alpha: cfg.get_f64(&key("alpha"), base.alpha)?,
        steps: cfg.get_usize(&key("steps"), base.steps)?,
        loss_mode,
        random_start: cfg.get_bool(&key("random_start"), base.random_start)?,
        clamp_input_range: cfg.get_bool(&key("clamp_input_range"), base.clamp_input_range)?,
        seed: cfg.get_u64(&key("seed"), base.seed)?,
    };
    out.validate()?;
    Ok(out)
}

/// Write an AttackConfig under `prefix`; inverse of `attack_from_config`.
pub fn attack_to_config(ac: &AttackConfig, prefix: &str, cfg: &mut Config) {
    let set = |cfg: &mut Config, k: &str, v: String| cfg.set(&format!("{}{}", prefix, k), &v);
    set(cfg, "norm", norm_to_str(ac.norm).into());
    set(cfg, "epsilon", format!("{:e}", ac.epsilon));
    set(cfg, "alpha", format!("{:e}", ac.alpha));
    set(cfg, "steps", ac.steps.to_string());
    set(cfg, "loss_mode", loss_mode_to_str(ac.loss_mode).into());
    set(cfg, "random_start", ac.random_start.to_string());
    set(cfg, "clamp_input_range", ac.clamp_input_range.to_string());
    set(cfg, "seed", ac.seed.to_string());
}

fn regime_from_str(s: &str) -> Result<Regime> {
    match s {
        "st" => Ok(Regime::St),
        "at" => Ok(Regime::At),
        "trades" => Ok(Regime::Trades),
        other => Err(Error::Config(format!(
            "unknown regime {:?} (st | at | trades)",
            other
        ))),
    }
}

pub fn regime_to_str(r: Regime) -> &'static str {
    match r {
        Regime::St => "st",
        Regime::At => "at",
        Regime::Trades => "trades",
    }
}

/// Learning-rate drops written as `epoch:factor,epoch:factor`.
fn drops_from_str(s: &str) -> Result<Vec<(usize, f64)>> {
    parse_list(s, |item| {
        let (e, f) = item
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("expected epoch:factor, got {:?}", item)))?;
        let epoch = e
            .trim()
            .parse()
            .map_err(|err| Error::Config(format!("bad drop epoch {:?}: {}", e, err)))?;
        Ok((epoch, parse_real(f)?))
    })
}

/// Read a TrainConfig from keys under `prefix` (usually `train.`), with
/// nested attacks under `{prefix}attack.` and `{prefix}eval_attack.`.
pub fn train_from_config(cfg: &Config, prefix: &str) -> Result<TrainConfig> {
    let key = |k: &str| format!("{}{}", prefix, k);
    let regime = match cfg.get(&key("regime")) {
        None => Regime::St,
        Some(v) => regime_from_str(v)?,
    };
    let base = TrainConfig::desk_default(regime);
    let lr_drops = match cfg.get(&key("lr_drops")) {
        None => base.lr_drops.clone(),
        Some(v) => drops_from_str(v)?,
    };
    let mut attack = attack_from_config(cfg, &key("attack."))?;
    if regime == Regime::Trades && cfg.get(&key("attack.loss_mode")).is_none() {
        attack.loss_mode = LossMode::Kl;
    }
    let out = TrainConfig {
        regime,
        epochs: cfg.get_usize(&key("epochs"), base.epochs)?,
        batch_size: cfg.get_usize(&key("batch_size"), base.batch_size)?,
        lr_initial: cfg.get_f64(&key("lr"), base.lr_initial)?,
        lr_drops,
        momentum: cfg.get_f64(&key("momentum"), base.momentum)?,
        weight_decay: cfg.get_f64(&key("weight_decay"), base.weight_decay)?,
        seed: cfg.get_u64(&key("seed"), base.seed)?,
        attack,
        beta: cfg.get_f64(&key("beta"), base.beta)?,
        eval_attack: attack_from_config(cfg, &key("eval_attack."))?,
        gaussian_sigma: cfg.get_f64(&key("gaussian_sigma"), base.gaussian_sigma)?,
        metric_every: cfg.get_usize(&key("metric_every"), base.metric_every)?,
    };
    out.validate()?;
    Ok(out)
}

pub fn train_to_config(tc: &TrainConfig, prefix: &str, cfg: &mut Config) {
    let set = |cfg: &mut Config, k: &str, v: String| cfg.set(&format!("{}{}", prefix, k), &v);
    set(cfg, "regime", regime_to_str(tc.regime).into());
    set(cfg, "epochs", tc.epochs.to_string());
    set(cfg, "batch_size", tc.batch_size.to_string());
    set(cfg, "lr", format!("{:e}", tc.lr_initial));
    let drops: Vec<String> = tc
        .lr_drops
        .iter()
        .map(|(e, f)| format!("{}:{:e}", e, f))
        .collect();
    set(cfg, "lr_drops", drops.join(","));
    set(cfg, "momentum", format!("{:e}", tc.momentum));
    set(cfg, "weight_decay", format!("{:e}", tc.weight_decay));
    set(cfg, "seed", tc.seed.to_string());
    set(cfg, "beta", format!("{:e}", tc.beta));
    set(cfg, "gaussian_sigma", format!("{:e}", tc.gaussian_sigma));
    set(cfg, "metric_every", tc.metric_every.to_string());
    attack_to_config(&tc.attack, &format!("{}attack.", prefix), cfg);
    attack_to_config(&tc.eval_attack, &format!("{}eval_attack.", prefix), cfg);
}
