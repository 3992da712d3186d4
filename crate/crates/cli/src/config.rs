//! Run configuration: a line-oriented `key = value` file, environment and
//! `--key value` command-line overrides.
//!
//! Precedence, lowest first: built-in defaults, the config file,
//! `TACIFA_SEED`, command-line flags. Keys are case-insensitive (`J = 20`
//! and `j = 20` are the same key); `#` starts a comment. Setting `case`
//! resets `p` and `noise_sd` to that case's defaults, so put overrides of
//! those after it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use tacifa_core::simgen::{Case, SimSpec, Zeta1Family};
use tacifa_core::{HyperParams, McmcConfig};

pub const SEED_ENV: &str = "TACIFA_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hyper: HyperParams,
    /// Initial ranks given explicitly; `None` means the defaults capped by
    /// the number of features.
    pub r_init: Option<usize>,
    pub r1_init: Option<usize>,
    pub r2_init: Option<usize>,
    pub mcmc: McmcConfig,
    pub sim: SimSpec,
    pub x_csv: Option<PathBuf>,
    pub y_csv: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub heldout_fraction: f64,
    pub heldout_seed: u64,
    pub eval_grid_size: usize,
    /// Write every recorded sample to `chain.csv`.
    pub checkpoint: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hyper: HyperParams::default(),
            r_init: None,
            r1_init: None,
            r2_init: None,
            mcmc: McmcConfig::default(),
            sim: SimSpec::case1(1),
            x_csv: None,
            y_csv: None,
            out_dir: PathBuf::from("tacifa_out"),
            heldout_fraction: 0.10,
            heldout_seed: 2,
            eval_grid_size: 200,
            checkpoint: false,
        }
    }
}

/// Every accepted key, in manifest order.
pub const KEYS: &[&str] = &[
    "nu1",
    "a1",
    "a2",
    "sigma_shape",
    "sigma_rate",
    "omega",
    "k",
    "k1",
    "k2",
    "j",
    "degree",
    "warp_degree",
    "r_init",
    "r1_init",
    "r2_init",
    "n_iter",
    "n_burnin",
    "leapfrog_steps",
    "step_size_kappa",
    "step_size_lambda",
    "adapt_interval",
    "accept_low",
    "accept_high",
    "prune_threshold",
    "seed",
    "thin",
    "case",
    "t",
    "p",
    "r_true",
    "noise_sd",
    "zeta1_family",
    "x_csv",
    "y_csv",
    "out_dir",
    "heldout_fraction",
    "heldout_seed",
    "eval_grid_size",
    "checkpoint",
];

fn positive_f64(v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| anyhow!("expected a number, got `{v}`"))?;
    if !(x > 0.0 && x.is_finite()) {
        bail!("must be positive, got {v}");
    }
    Ok(x)
}

fn unit_f64(v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| anyhow!("expected a number, got `{v}`"))?;
    if !(0.0..=1.0).contains(&x) {
        bail!("must lie in [0, 1], got {v}");
    }
    Ok(x)
}

fn count(v: &str, min: usize) -> Result<usize> {
    let n: i64 = v.parse().map_err(|_| anyhow!("expected an integer, got `{v}`"))?;
    if n < min as i64 {
        bail!("must be at least {min}, got {v}");
    }
    Ok(n as usize)
}

fn seed(v: &str) -> Result<u64> {
    v.parse().map_err(|_| anyhow!("expected a nonnegative integer seed, got `{v}`"))
}

fn optional_rank(v: &str) -> Result<Option<usize>> {
    if v.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        count(v, 1).map(Some)
    }
}

fn flag(v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("expected true or false, got `{v}`"),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.to_ascii_lowercase();
        let v = value.trim();
        let h = &mut self.hyper;
        let m = &mut self.mcmc;
        match key.as_str() {
            "nu1" => h.nu1 = positive_f64(v)?,
            "a1" => h.a1 = positive_f64(v)?,
            "a2" => h.a2 = positive_f64(v)?,
            "sigma_shape" => h.sigma_shape = positive_f64(v)?,
            "sigma_rate" => h.sigma_rate = positive_f64(v)?,
            "omega" => h.omega = positive_f64(v)?,
            "k" => h.k = count(v, 2)?,
            "k1" => h.k1 = count(v, 2)?,
            "k2" => h.k2 = count(v, 2)?,
            "j" => h.j = count(v, 2)?,
            "degree" => h.degree = count(v, 1)?,
            "warp_degree" => h.warp_degree = count(v, 1)?,
            "r_init" => self.r_init = optional_rank(v)?,
            "r1_init" => self.r1_init = optional_rank(v)?,
            "r2_init" => self.r2_init = optional_rank(v)?,
            "n_iter" => m.n_iter = count(v, 1)?,
            "n_burnin" => m.n_burnin = count(v, 0)?,
            "leapfrog_steps" => m.leapfrog_steps = count(v, 1)?,
            "step_size_kappa" => m.step_size_kappa = positive_f64(v)?,
            "step_size_lambda" => m.step_size_lambda = positive_f64(v)?,
            "adapt_interval" => m.adapt_interval = count(v, 1)?,
            "accept_low" => m.accept_low = unit_f64(v)?,
            "accept_high" => m.accept_high = unit_f64(v)?,
            "prune_threshold" => {
                let x: f64 = v.parse().map_err(|_| anyhow!("expected a number, got `{v}`"))?;
                if !(x >= 0.0 && x.is_finite()) {
                    bail!("must be nonnegative, got {v}");
                }
                m.prune_threshold = x;
            }
            "seed" => {
                m.seed = seed(v)?;
                self.sim.seed = m.seed;
            }
            "thin" => m.thin = count(v, 1)?,
            "case" => {
                // switching case resets the case-specific feature count and noise
                let base = match v.to_ascii_lowercase().as_str() {
                    "sinusoid" | "1" => SimSpec::case1(self.sim.seed),
                    "ellipse" | "2" => SimSpec::case2(self.sim.seed),
                    _ => bail!("expected sinusoid or ellipse, got `{v}`"),
                };
                self.sim.case = base.case;
                self.sim.p = base.p;
                self.sim.noise_sd = base.noise_sd;
            }
            "t" => self.sim.t = count(v, 10)?,
            "p" => self.sim.p = count(v, 1)?,
            "r_true" => self.sim.r_true = count(v, 1)?,
            "noise_sd" => {
                let x: f64 = v.parse().map_err(|_| anyhow!("expected a number, got `{v}`"))?;
                if !(x >= 0.0 && x.is_finite()) {
                    bail!("must be nonnegative, got {v}");
                }
                self.sim.noise_sd = x;
            }
            "zeta1_family" => {
                self.sim.zeta1_family = match v.to_ascii_lowercase().as_str() {
                    "sin" => Zeta1Family::Sin,
                    "linear" => Zeta1Family::Linear,
                    "square" => Zeta1Family::Square,
                    "cube" => Zeta1Family::Cube,
                    _ => bail!("expected sin, linear, square or cube, got `{v}`"),
                }
            }
            "x_csv" => self.x_csv = Some(nonempty_path(v)?),
            "y_csv" => self.y_csv = Some(nonempty_path(v)?),
            "out_dir" => self.out_dir = nonempty_path(v)?,
            "heldout_fraction" => {
                let x: f64 = v.parse().map_err(|_| anyhow!("expected a number, got `{v}`"))?;
                if !(0.0..0.5).contains(&x) {
                    bail!("must lie in [0, 0.5), got {v}");
                }
                self.heldout_fraction = x;
            }
            "heldout_seed" => self.heldout_seed = seed(v)?,
            "eval_grid_size" => self.eval_grid_size = count(v, 2)?,
            "checkpoint" => self.checkpoint = flag(v)?,
            _ => bail!("unknown key `{key}`"),
        }
        Ok(())
    }

    /// Applies a `key = value` text, reporting errors with `origin:line`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{origin}:{}: expected `key = value`, got `{}`", n + 1, raw.trim());
            };
            let key = key.trim();
            if key.is_empty() {
                bail!("{origin}:{}: missing key", n + 1);
            }
            self.set(key, value)
                .with_context(|| format!("{origin}:{}: key `{}`", n + 1, key.to_ascii_lowercase()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `--key value` pairs (also accepts `--key=value`).
    pub fn apply_flags(&mut self, args: &[String]) -> Result<()> {
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let Some(name) = arg.strip_prefix("--") else {
                bail!("expected a `--key value` flag, got `{arg}`");
            };
            let (key, value) = match name.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = args.get(i + 1).ok_or_else(|| anyhow!("flag `--{name}` has no value"))?;
                    i += 1;
                    (name.to_string(), v.clone())
                }
            };
            let key = key.replace('-', "_");
            self.set(&key, &value).with_context(|| format!("flag --{key}"))?;
            i += 1;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then `TACIFA_SEED`, then flags.
    pub fn load(file: Option<&Path>, env_seed: Option<&str>, flags: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        if let Some(s) = env_seed {
            cfg.set("seed", s).with_context(|| format!("environment variable {SEED_ENV}"))?;
        }
        cfg.apply_flags(flags)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-key checks that single assignments cannot make.
    pub fn validate(&self) -> Result<()> {
        let mut h = self.hyper.clone();
        h.r_init = self.r_init.unwrap_or(h.r_init);
        h.r1_init = self.r1_init.unwrap_or(h.r1_init);
        h.r2_init = self.r2_init.unwrap_or(h.r2_init);
        h.validate()?;
        self.mcmc.validate()?;
        self.sim.validate()?;
        Ok(())
    }

    /// Hyperparameters with the initial ranks resolved for `p` features.
    pub fn hyper_for(&self, p: usize) -> HyperParams {
        let mut h = self.hyper.clone();
        let capped = HyperParams::for_features(p);
        h.r_init = self.r_init.unwrap_or(capped.r_init);
        h.r1_init = self.r1_init.unwrap_or(capped.r1_init);
        h.r2_init = self.r2_init.unwrap_or(capped.r2_init);
        h
    }

    fn value_of(&self, key: &str) -> String {
        let h = &self.hyper;
        let m = &self.mcmc;
        let rank = |r: Option<usize>| r.map_or_else(|| "auto".to_string(), |v| v.to_string());
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(String::new, |p| p.display().to_string());
        match key {
            "nu1" => h.nu1.to_string(),
            "a1" => h.a1.to_string(),
            "a2" => h.a2.to_string(),
            "sigma_shape" => h.sigma_shape.to_string(),
            "sigma_rate" => h.sigma_rate.to_string(),
            "omega" => h.omega.to_string(),
            "k" => h.k.to_string(),
            "k1" => h.k1.to_string(),
            "k2" => h.k2.to_string(),
            "j" => h.j.to_string(),
            "degree" => h.degree.to_string(),
            "warp_degree" => h.warp_degree.to_string(),
            "r_init" => rank(self.r_init),
            "r1_init" => rank(self.r1_init),
            "r2_init" => rank(self.r2_init),
            "n_iter" => m.n_iter.to_string(),
            "n_burnin" => m.n_burnin.to_string(),
            "leapfrog_steps" => m.leapfrog_steps.to_string(),
            "step_size_kappa" => m.step_size_kappa.to_string(),
            "step_size_lambda" => m.step_size_lambda.to_string(),
            "adapt_interval" => m.adapt_interval.to_string(),
            "accept_low" => m.accept_low.to_string(),
            "accept_high" => m.accept_high.to_string(),
            "prune_threshold" => m.prune_threshold.to_string(),
            "seed" => m.seed.to_string(),
            "thin" => m.thin.to_string(),
            "case" => match self.sim.case {
                Case::Sinusoid => "sinusoid".into(),
                Case::Ellipse => "ellipse".into(),
            },
            "t" => self.sim.t.to_string(),
            "p" => self.sim.p.to_string(),
            "r_true" => self.sim.r_true.to_string(),
            "noise_sd" => self.sim.noise_sd.to_string(),
            "zeta1_family" => match self.sim.zeta1_family {
                Zeta1Family::Sin => "sin".into(),
                Zeta1Family::Linear => "linear".into(),
                Zeta1Family::Square => "square".into(),
                Zeta1Family::Cube => "cube".into(),
            },
            "x_csv" => path(&self.x_csv),
            "y_csv" => path(&self.y_csv),
            "out_dir" => self.out_dir.display().to_string(),
            "heldout_fraction" => self.heldout_fraction.to_string(),
            "heldout_seed" => self.heldout_seed.to_string(),
            "eval_grid_size" => self.eval_grid_size.to_string(),
            "checkpoint" => self.checkpoint.to_string(),
            _ => unreachable!("every key in KEYS has a value"),
        }
    }

    /// The full configuration in the same `key = value` format the parser
    /// reads. Empty paths are written as comments.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let v = self.value_of(key);
            if v.is_empty() {
                let _ = writeln!(out, "# {key} =");
            } else {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
        out
    }
}

fn nonempty_path(v: &str) -> Result<PathBuf> {
    if v.is_empty() {
        bail!("path must not be empty");
    }
    Ok(PathBuf::from(v))
}
