//! The four subcommands. Each returns its in-memory results so that tests
//! can inspect them without re-reading the output files.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tacifa_core::postprocess::{predict, HeldOut, Prediction};
use tacifa_core::sampler::run_chain_with;
use tacifa_core::simgen::{self, Truth};
use tacifa_core::{Chain, PosteriorSummary, SeriesPair};

use crate::config::RunConfig;
use crate::io;

/// Input series with their feature names and, for simulated data, the truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub data: SeriesPair,
    pub names: Vec<String>,
    pub truth: Option<Truth>,
}

/// Everything a fit produces.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub dataset: Dataset,
    /// Columns held out of the fit (empty for `fit` and `similarity`).
    pub heldout: HeldOut,
    pub chain: Chain,
    pub summary: PosteriorSummary,
}

impl FitOutcome {
    pub fn prediction(&self) -> Option<&Prediction> {
        self.summary.prediction.as_ref()
    }
}

/// Reads `x_csv` / `y_csv` when both are set, otherwise simulates.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match (&cfg.x_csv, &cfg.y_csv) {
        (Some(x), Some(y)) => {
            let (data, names) = io::read_pair(x, y)?;
            Ok(Dataset { data, names, truth: None })
        }
        (None, None) => {
            let sim = simgen::generate(&cfg.sim)?;
            let names = io::default_names(sim.data.p());
            Ok(Dataset {
                data: sim.data,
                names,
                truth: Some(sim.truth),
            })
        }
        _ => anyhow::bail!("x_csv and y_csv must be given together"),
    }
}

pub fn eval_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Draws `round(fraction · T)` distinct columns of each series.
pub fn heldout_split(data: &SeriesPair, fraction: f64, seed: u64) -> HeldOut {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |t: usize| {
        let n = ((fraction * t as f64).round() as usize).min(t.saturating_sub(2));
        let mut v = rand::seq::index::sample(&mut rng, t, n).into_vec();
        v.sort_unstable();
        v
    };
    let x = pick(data.t1());
    let y = pick(data.t2());
    HeldOut { x, y }
}

fn fit_chain(cfg: &RunConfig, data: &SeriesPair) -> Result<Chain> {
    let hyper = cfg.hyper_for(data.p());
    let total = cfg.mcmc.n_iter;
    let every = (total / 20).max(1);
    let chain = run_chain_with(data, &hyper, &cfg.mcmc, |it, state| {
        if (it + 1) % every == 0 || it + 1 == total {
            eprintln!(
                "iteration {}/{}: ranks {} / {} / {}",
                it + 1,
                total,
                state.rank(),
                state.rank1(),
                state.rank2()
            );
        }
    })?;
    Ok(chain)
}

fn run(cfg: &RunConfig, hold_out: bool) -> Result<FitOutcome> {
    let dataset = load_dataset(cfg)?;
    let full = &dataset.data;
    let heldout = if hold_out {
        heldout_split(full, cfg.heldout_fraction, cfg.heldout_seed)
    } else {
        HeldOut::default()
    };
    let (keep_x, keep_y) = heldout.training(full.t1(), full.t2());
    let train = full.select_columns(&keep_x, &keep_y)?;
    eprintln!(
        "fitting p = {}, T1 = {}, T2 = {} ({} / {} columns held out)",
        train.p(),
        train.t1(),
        train.t2(),
        heldout.x.len(),
        heldout.y.len()
    );
    let chain = fit_chain(cfg, &train)?;
    let mut summary = PosteriorSummary::compute(&chain, &train, &eval_grid(cfg.eval_grid_size))?;
    if hold_out && !(heldout.x.is_empty() && heldout.y.is_empty()) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.heldout_seed);
        rng.set_stream(1);
        summary.prediction = Some(predict(&chain, full, &heldout, &mut rng)?);
    }
    Ok(FitOutcome {
        dataset,
        heldout,
        chain,
        summary,
    })
}

pub fn simulate(cfg: &RunConfig) -> Result<Dataset> {
    let sim = simgen::generate(&cfg.sim)?;
    let names = io::default_names(sim.data.p());
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let d = &sim.data;
    let t = &sim.truth;
    io::write_series_file(&dir.join("x.csv"), &names, &d.grid_x, &d.x)?;
    io::write_series_file(&dir.join("y.csv"), &names, &d.grid_y, &d.y)?;
    io::write_series_file(&dir.join("truth_mean_x.csv"), &names, &d.grid_x, &t.mean_x)?;
    io::write_series_file(&dir.join("truth_mean_y.csv"), &names, &d.grid_y, &t.mean_y)?;
    io::write_column(&dir.join("truth_warp.csv"), "warp", &t.warp)?;
    fs::write(dir.join("manifest.txt"), manifest("simulate", cfg))?;
    eprintln!("wrote simulated pair to {}", dir.display());
    Ok(Dataset {
        data: sim.data,
        names,
        truth: Some(sim.truth),
    })
}

pub fn fit(cfg: &RunConfig) -> Result<FitOutcome> {
    let out = run(cfg, false)?;
    write_outputs(cfg, "fit", &out)?;
    Ok(out)
}

pub fn predict_heldout(cfg: &RunConfig) -> Result<FitOutcome> {
    let out = run(cfg, true)?;
    write_outputs(cfg, "predict", &out)?;
    if let Some(p) = out.prediction() {
        eprintln!(
            "held-out mse {:.4} / {:.4}, coverage {:.3} / {:.3}",
            p.mse.0, p.mse.1, p.coverage.0, p.coverage.1
        );
    }
    Ok(out)
}

pub fn similarity(cfg: &RunConfig) -> Result<FitOutcome> {
    let out = run(cfg, false)?;
    write_outputs(cfg, "similarity", &out)?;
    let s = &out.summary.syn;
    println!("syn {:.4} [{:.4}, {:.4}] plug-in {:.4}", s.mean, s.lo, s.hi, s.plug_in);
    Ok(out)
}

fn manifest(command: &str, cfg: &RunConfig) -> String {
    format!(
        "# tacifa {} {command}\n# TACIFA_SEED={}\n{}",
        env!("CARGO_PKG_VERSION"),
        std::env::var(crate::config::SEED_ENV).unwrap_or_default(),
        cfg.to_text()
    )
}

fn write_outputs(cfg: &RunConfig, command: &str, out: &FitOutcome) -> Result<()> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let names = &out.dataset.names;
    let s = &out.summary;

    let truth_warp = out
        .dataset
        .truth
        .as_ref()
        .map(|_| s.warp.grid.iter().map(|&t| simgen::m0(t)).collect::<Vec<_>>());
    io::write_warp(&dir.join("warp_summary.csv"), &s.warp, truth_warp.as_deref())?;
    io::write_matrix(&dir.join("sp_shared1.csv"), names, &s.sp_shared1)?;
    io::write_matrix(&dir.join("sp_shared2.csv"), names, &s.sp_shared2)?;
    io::write_matrix(&dir.join("sp_ind1.csv"), names, &s.sp_ind1)?;
    io::write_matrix(&dir.join("sp_ind2.csv"), names, &s.sp_ind2)?;
    io::write_syn(&dir.join("syn.csv"), &s.syn)?;
    io::write_column(&dir.join("syn_samples.csv"), "syn", &s.syn.per_sample)?;
    io::write_diagnostics(&dir.join("diagnostics.csv"), &out.chain.diagnostics)?;
    io::write_prune_events(&dir.join("prune_events.csv"), &out.chain.diagnostics)?;
    if let Some(pred) = &s.prediction {
        io::write_predictions(&dir.join("heldout_predictions.csv"), names, pred)?;
        io::write_metrics(&dir.join("metrics.csv"), pred)?;
    }
    if cfg.checkpoint {
        io::write_chain(&dir.join("chain.csv"), &out.chain.samples)?;
        let mut f = fs::File::create(dir.join("chain_manifest.txt"))?;
        writeln!(f, "samples = {}", out.chain.len())?;
        writeln!(f, "kappa_acceptance = {:?}", out.chain.diagnostics.kappa_acceptance)?;
        writeln!(f, "lambda_acceptance = {:?}", out.chain.diagnostics.lambda_acceptance)?;
    }
    let mut m = manifest(command, cfg);
    m.push_str(&format!(
        "# samples = {}\n# excluded (shared, ind1, ind2) = {:?}\n",
        out.chain.len(),
        s.excluded
    ));
    fs::write(dir.join("manifest.txt"), m)?;
    write_readme(dir, s.prediction.is_some(), cfg.checkpoint)?;
    Ok(())
}

fn write_readme(dir: &Path, prediction: bool, checkpoint: bool) -> Result<()> {
    let mut text = String::from(
        "# TACIFA output\n\n\
         - `manifest.txt`: the full configuration of this run; it can be passed back with `--config`.\n\
         - `warp_summary.csv`: posterior mean and 95% band of the warping function on the evaluation grid.\n\
         - `sp_shared1.csv`, `sp_shared2.csv`: sign-probability importance of the shared loadings of X and Y.\n\
         - `sp_ind1.csv`, `sp_ind2.csv`: the same for the individual loadings.\n\
         - `syn.csv`: posterior mean, 95% interval and plug-in value of the Syn similarity score.\n\
         - `syn_samples.csv`: the per-sample Syn scores.\n\
         - `diagnostics.csv`: acceptance, step sizes, ranks and log-likelihood per iteration.\n\
         - `prune_events.csv`: columns removed during burn-in.\n",
    );
    if prediction {
        text.push_str(
            "- `heldout_predictions.csv`: posterior predictive mean and 95% interval for every held-out value.\n\
             - `metrics.csv`: held-out mean squared error and interval coverage per series.\n",
        );
    }
    if checkpoint {
        text.push_str("- `chain.csv`, `chain_manifest.txt`: every recorded sample in long format.\n");
    }
    fs::write(dir.join("README.md"), text)?;
    Ok(())
}
