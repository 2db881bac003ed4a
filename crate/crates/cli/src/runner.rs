//! Executing resolved configurations: run directories, config snapshots,
//! and the run/ablate command bodies.
//!
//! Every run directory receives the resolved config before any training
//! starts, and a metrics CSV is written even when training aborts, so a
//! failed run leaves its provenance and partial data behind.

use std::path::{Path, PathBuf};

use ben_core::envs::{build_prior_dataset, PriorDataset, SearchRescueEnv, TigerEnv};
use ben_core::nets::HistoryMode;
use ben_core::rng_from_seed;
use ben_core::trainer::{approx_brl_into, RunMetrics};

use crate::config::{snapshot_toml, Axis, EnvSetting, Resolved, RunSetting, Variant};
use crate::csvout::write_metrics_csv;
use crate::{CliError, CliResult};

fn build_dataset(setting: &RunSetting) -> CliResult<PriorDataset> {
    match &setting.env {
        EnvSetting::Tiger(_) => Ok(PriorDataset::default()),
        EnvSetting::SearchRescue(cfg) => {
            let mut rng = rng_from_seed(setting.prior.dataset_seed);
            Ok(build_prior_dataset(
                cfg,
                setting.prior.knowledge,
                setting.prior.listen_demos,
                &mut rng,
            )?)
        }
    }
}

/// Train one setting, streaming rows into `metrics` so an abort preserves
/// everything produced so far.
pub fn run_setting_into(
    setting: &RunSetting,
    metrics: &mut RunMetrics,
) -> CliResult<()> {
    let spec = setting.ben_spec();
    let dataset = build_dataset(setting)?;
    match &setting.env {
        EnvSetting::Tiger(cfg) => {
            let cfg = *cfg;
            approx_brl_into(
                &setting.train,
                &spec,
                Some(cfg),
                &dataset,
                |seed| TigerEnv::new(cfg, seed),
                metrics,
            )?;
        }
        EnvSetting::SearchRescue(cfg) => {
            let cfg = *cfg;
            approx_brl_into(
                &setting.train,
                &spec,
                None,
                &dataset,
                |seed| SearchRescueEnv::new(cfg, seed),
                metrics,
            )?;
        }
    }
    Ok(())
}

fn prepare_dir(resolved: &Resolved) -> CliResult<()> {
    std::fs::create_dir_all(&resolved.out_dir)?;
    let snapshot = snapshot_toml(resolved)?;
    std::fs::write(resolved.out_dir.join("config.toml"), snapshot)?;
    if let Some(received) = &resolved.received {
        std::fs::write(resolved.out_dir.join("config_received.toml"), received)?;
    }
    Ok(())
}

fn execute_variants(out_dir: &Path, variants: &[Variant]) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    for variant in variants {
        let mut metrics = RunMetrics::default();
        let outcome = run_setting_into(&variant.setting, &mut metrics);
        let path = out_dir.join(format!("{}.csv", variant.label));
        write_metrics_csv(&path, &metrics)?;
        written.push(path);
        if let Err(e) = outcome {
            return Err(match e {
                CliError::Config(msg) => CliError::Config(msg),
                CliError::Runtime(msg) => CliError::Runtime(format!(
                    "{msg} (partial metrics kept in {})",
                    written.last().expect("just pushed").display()
                )),
            });
        }
    }
    Ok(written)
}

/// The `run` command: execute every variant of the resolved config and
/// return the metrics files written.
pub fn execute_run(resolved: &Resolved) -> CliResult<Vec<PathBuf>> {
    prepare_dir(resolved)?;
    execute_variants(&resolved.out_dir, &resolved.variants)
}

fn ablate_variants(resolved: &Resolved, axis: Axis) -> Vec<Variant> {
    let base = &resolved.base;
    match axis {
        Axis::AleatoricLayers => resolved
            .ablate
            .aleatoric
            .iter()
            .map(|&layers| {
                let mut setting = base.clone();
                setting.agent.aleatoric_layers = layers;
                Variant {
                    label: format!("ablate_aleatoric_layers_{layers}"),
                    setting,
                }
            })
            .collect(),
        Axis::PretrainSteps => resolved
            .ablate
            .pretrain
            .iter()
            .map(|&steps| {
                let mut setting = base.clone();
                setting.train.n_pretrain = steps;
                Variant {
                    label: format!("ablate_pretrain_steps_{steps}"),
                    setting,
                }
            })
            .collect(),
        Axis::Contextual => {
            let mut recurrent = base.clone();
            recurrent.agent.history = HistoryMode::Recurrent;
            let mut contextual = base.clone();
            contextual.agent.history = HistoryMode::Contextual;
            vec![
                Variant {
                    label: "ablate_contextual_ben".into(),
                    setting: recurrent,
                },
                Variant {
                    label: "ablate_contextual_contextual".into(),
                    setting: contextual,
                },
            ]
        }
    }
}

/// The `ablate` command: sweep one axis of the base setting, everything
/// else held fixed, one metrics file per grid point.
pub fn execute_ablate(resolved: &Resolved, axis: Axis) -> CliResult<Vec<PathBuf>> {
    prepare_dir(resolved)?;
    let variants = ablate_variants(resolved, axis);
    execute_variants(&resolved.out_dir, &variants)
}
