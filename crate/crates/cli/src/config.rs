//! Run configuration: the TOML file format, named presets, and the
//! resolution step that turns a partial file plus command-line overrides
//! into fully explicit settings.
//!
//! Resolution is layered: preset defaults, then file values, then flags.
//! The resolved result serializes back into the same file format with
//! every field populated, and that snapshot resolves to itself, which is
//! what makes reruns reproducible from a run directory alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ben_core::envs::{PriorKnowledge, SarConfig, TigerConfig, SAR_ACTIONS, TIGER_ACTIONS};
use ben_core::nets::{HistoryMode, QNetConfig};
use ben_core::trainer::{BenSpec, PosteriorKind, RunMode, TrainConfig, UpdateSchedule};

use crate::{CliError, CliResult};

/// Environment variable consulted for the output directory when neither
/// the `--out` flag nor the config file provides one.
pub const OUT_DIR_VAR: &str = "BEN_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    TigerFig8,
    SarEpisodicTabulaRasa,
    SarEpisodicWeakPrior,
    SarZeroShot,
}

impl Preset {
    pub fn parse(name: &str) -> CliResult<Self> {
        match name {
            "tiger_fig8" => Ok(Preset::TigerFig8),
            "sar_episodic_tabula_rasa" => Ok(Preset::SarEpisodicTabulaRasa),
            "sar_episodic_weak_prior" => Ok(Preset::SarEpisodicWeakPrior),
            "sar_zero_shot" => Ok(Preset::SarZeroShot),
            other => Err(CliError::Config(format!(
                "unknown preset '{other}'; known presets: tiger_fig8, \
                 sar_episodic_tabula_rasa, sar_episodic_weak_prior, sar_zero_shot"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::TigerFig8 => "tiger_fig8",
            Preset::SarEpisodicTabulaRasa => "sar_episodic_tabula_rasa",
            Preset::SarEpisodicWeakPrior => "sar_episodic_weak_prior",
            Preset::SarZeroShot => "sar_zero_shot",
        }
    }

    fn is_tiger(&self) -> bool {
        matches!(self, Preset::TigerFig8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Tiger,
    SearchRescue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    AleatoricLayers,
    PretrainSteps,
    Contextual,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::AleatoricLayers => "aleatoric_layers",
            Axis::PretrainSteps => "pretrain_steps",
            Axis::Contextual => "contextual",
        }
    }
}

/// The on-disk file format. Every field is optional; omitted values fall
/// back to the preset (or environment-kind) defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "EnvFile::is_empty")]
    pub env: EnvFile,
    #[serde(default, skip_serializing_if = "TrainFile::is_empty")]
    pub train: TrainFile,
    #[serde(default, skip_serializing_if = "AgentFile::is_empty")]
    pub agent: AgentFile,
    #[serde(default, skip_serializing_if = "PriorFile::is_empty")]
    pub prior: PriorFile,
    #[serde(default, skip_serializing_if = "AblateFile::is_empty")]
    pub ablate: AblateFile,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<EnvKind>,
    // Tiger fields.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_tiger: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_gold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_correct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_wrong: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_stay: Option<f64>,
    // Search-and-rescue fields.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_victims: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_hazards: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_victim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_hazard: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_noise: Option<f64>,
    // Shared fields.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_listen: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl EnvFile {
    fn is_empty(&self) -> bool {
        self.kind.is_none()
            && self.r_tiger.is_none()
            && self.r_gold.is_none()
            && self.p_correct.is_none()
            && self.p_wrong.is_none()
            && self.p_stay.is_none()
            && self.n_grid.is_none()
            && self.n_victims.is_none()
            && self.n_hazards.is_none()
            && self.r_victim.is_none()
            && self.r_hazard.is_none()
            && self.sigma_noise.is_none()
            && self.r_listen.is_none()
            && self.gamma.is_none()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_pretrain: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_update: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_posterior: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_psi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_mc: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain_batch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episode_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub posterior: Option<PosteriorName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleName>,
}

impl TrainFile {
    fn is_empty(&self) -> bool {
        self.n_pretrain.is_none()
            && self.n_update.is_none()
            && self.n_posterior.is_none()
            && self.lr_omega.is_none()
            && self.lr_psi.is_none()
            && self.truncation.is_none()
            && self.n_mc.is_none()
            && self.pretrain_batch.is_none()
            && self.episode_cap.is_none()
            && self.episodes.is_none()
            && self.seeds.is_none()
            && self.mode.is_none()
            && self.posterior.is_none()
            && self.schedule.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    EpisodicTabulaRasa,
    EpisodicWeakPrior,
    ZeroShotStrongPrior,
}

impl From<ModeName> for RunMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::EpisodicTabulaRasa => RunMode::EpisodicTabulaRasa,
            ModeName::EpisodicWeakPrior => RunMode::EpisodicWeakPrior,
            ModeName::ZeroShotStrongPrior => RunMode::ZeroShotStrongPrior,
        }
    }
}

impl From<RunMode> for ModeName {
    fn from(m: RunMode) -> Self {
        match m {
            RunMode::EpisodicTabulaRasa => ModeName::EpisodicTabulaRasa,
            RunMode::EpisodicWeakPrior => ModeName::EpisodicWeakPrior,
            RunMode::ZeroShotStrongPrior => ModeName::ZeroShotStrongPrior,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorName {
    VariationalFlow,
    ExactTiger,
}

impl From<PosteriorName> for PosteriorKind {
    fn from(p: PosteriorName) -> Self {
        match p {
            PosteriorName::VariationalFlow => PosteriorKind::VariationalFlow,
            PosteriorName::ExactTiger => PosteriorKind::ExactTiger,
        }
    }
}

impl From<PosteriorKind> for PosteriorName {
    fn from(p: PosteriorKind) -> Self {
        match p {
            PosteriorKind::VariationalFlow => PosteriorName::VariationalFlow,
            PosteriorKind::ExactTiger => PosteriorName::ExactTiger,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    InterleavedTimesteps,
    PosteriorBlock,
}

impl From<ScheduleName> for UpdateSchedule {
    fn from(s: ScheduleName) -> Self {
        match s {
            ScheduleName::InterleavedTimesteps => UpdateSchedule::InterleavedTimesteps,
            ScheduleName::PosteriorBlock => UpdateSchedule::PosteriorBlock,
        }
    }
}

impl From<UpdateSchedule> for ScheduleName {
    fn from(s: UpdateSchedule) -> Self {
        match s {
            UpdateSchedule::InterleavedTimesteps => ScheduleName::InterleavedTimesteps,
            UpdateSchedule::PosteriorBlock => ScheduleName::PosteriorBlock,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history: Option<HistoryName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoding: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aleatoric_hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aleatoric_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epistemic_hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_weight: Option<f64>,
}

impl AgentFile {
    fn is_empty(&self) -> bool {
        self.history.is_none()
            && self.hidden.is_none()
            && self.encoding.is_none()
            && self.aleatoric_hidden.is_none()
            && self.aleatoric_layers.is_none()
            && self.epistemic_hidden.is_none()
            && self.prior_var.is_none()
            && self.prior_weight.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryName {
    Recurrent,
    Contextual,
}

impl From<HistoryName> for HistoryMode {
    fn from(h: HistoryName) -> Self {
        match h {
            HistoryName::Recurrent => HistoryMode::Recurrent,
            HistoryName::Contextual => HistoryMode::Contextual,
        }
    }
}

impl From<HistoryMode> for HistoryName {
    fn from(h: HistoryMode) -> Self {
        match h {
            HistoryMode::Recurrent => HistoryName::Recurrent,
            HistoryMode::Contextual => HistoryName::Contextual,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<KnowledgeName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub listen_demos: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_seed: Option<u64>,
}

impl PriorFile {
    fn is_empty(&self) -> bool {
        self.knowledge.is_none() && self.listen_demos.is_none() && self.dataset_seed.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeName {
    None,
    Weak,
    Strong,
}

impl From<KnowledgeName> for PriorKnowledge {
    fn from(k: KnowledgeName) -> Self {
        match k {
            KnowledgeName::None => PriorKnowledge::None,
            KnowledgeName::Weak => PriorKnowledge::Weak,
            KnowledgeName::Strong => PriorKnowledge::Strong,
        }
    }
}

impl From<PriorKnowledge> for KnowledgeName {
    fn from(k: PriorKnowledge) -> Self {
        match k {
            PriorKnowledge::None => KnowledgeName::None,
            PriorKnowledge::Weak => KnowledgeName::Weak,
            PriorKnowledge::Strong => KnowledgeName::Strong,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aleatoric_grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain_grid: Option<Vec<usize>>,
}

impl AblateFile {
    fn is_empty(&self) -> bool {
        self.aleatoric_grid.is_none() && self.pretrain_grid.is_none()
    }
}

/// Command-line overrides; they win over every file value.
#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub preset: Option<String>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

/// One fully specified environment.
#[derive(Debug, Clone)]
pub enum EnvSetting {
    Tiger(TigerConfig),
    SearchRescue(SarConfig),
}

impl EnvSetting {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvSetting::Tiger(_) => EnvKind::Tiger,
            EnvSetting::SearchRescue(_) => EnvKind::SearchRescue,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvSetting::Tiger(_) => 3,
            EnvSetting::SearchRescue(cfg) => cfg.state_dim(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            EnvSetting::Tiger(_) => TIGER_ACTIONS,
            EnvSetting::SearchRescue(_) => SAR_ACTIONS,
        }
    }
}

/// Agent architecture independent of environment dimensions.
#[derive(Debug, Clone)]
pub struct AgentSettings {
    pub history: HistoryMode,
    pub hidden: usize,
    pub encoding: usize,
    pub aleatoric_hidden: usize,
    pub aleatoric_layers: usize,
    pub epistemic_hidden: usize,
    pub prior_var: f64,
    pub prior_weight: f64,
}

/// How the pretraining dataset is built.
#[derive(Debug, Clone)]
pub struct PriorSettings {
    pub knowledge: PriorKnowledge,
    pub listen_demos: usize,
    pub dataset_seed: u64,
}

/// One runnable experiment setting with nothing left implicit.
#[derive(Debug, Clone)]
pub struct RunSetting {
    pub env: EnvSetting,
    pub train: TrainConfig,
    pub agent: AgentSettings,
    pub prior: PriorSettings,
}

impl RunSetting {
    pub fn ben_spec(&self) -> BenSpec {
        BenSpec {
            qnet: QNetConfig {
                mode: self.agent.history,
                state_dim: self.env.state_dim(),
                n_actions: self.env.n_actions(),
                hidden: self.agent.hidden,
                encoding: self.agent.encoding,
            },
            aleatoric_hidden: self.agent.aleatoric_hidden,
            aleatoric_layers: self.agent.aleatoric_layers,
            epistemic_hidden: self.agent.epistemic_hidden,
            prior_var: self.agent.prior_var,
            prior_weight: self.agent.prior_weight,
        }
    }
}

/// One labelled run; `run` writes `<label>.csv` per variant.
#[derive(Debug, Clone)]
pub struct Variant {
    pub label: String,
    pub setting: RunSetting,
}

#[derive(Debug, Clone)]
pub struct AblateGrids {
    pub aleatoric: Vec<usize>,
    pub pretrain: Vec<usize>,
}

/// The complete, validated result of configuration resolution.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub preset: Option<Preset>,
    pub out_dir: PathBuf,
    pub base: RunSetting,
    pub variants: Vec<Variant>,
    pub ablate: AblateGrids,
    /// The file as received, if any; copied into the run directory.
    pub received: Option<String>,
}

pub fn load_file(path: &Path) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_file(&text)
}

pub fn parse_file(text: &str) -> CliResult<FileConfig> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("config does not parse: {e}")))
}

fn default_agent(kind: EnvKind) -> AgentSettings {
    match kind {
        EnvKind::Tiger => AgentSettings {
            history: HistoryMode::Recurrent,
            hidden: 32,
            encoding: 2,
            aleatoric_hidden: 8,
            aleatoric_layers: 2,
            epistemic_hidden: 16,
            prior_var: 0.25,
            prior_weight: 1.0,
        },
        EnvKind::SearchRescue => AgentSettings {
            history: HistoryMode::Recurrent,
            hidden: 64,
            encoding: 8,
            aleatoric_hidden: 8,
            aleatoric_layers: 2,
            epistemic_hidden: 16,
            prior_var: 0.25,
            prior_weight: 1.0,
        },
    }
}

fn default_train(preset: Option<Preset>, env: &EnvSetting) -> TrainConfig {
    let mut train = match env {
        EnvSetting::Tiger(_) => TrainConfig::tiger_default(),
        EnvSetting::SearchRescue(cfg) => {
            let mut t = TrainConfig::sar_default();
            t.episode_cap = cfg.max_steps();
            t
        }
    };
    match preset {
        Some(Preset::TigerFig8) => {
            train.seeds = (0..20).collect();
        }
        Some(Preset::SarEpisodicTabulaRasa) => {
            train.seeds = (0..5).collect();
            train.episodes = 3;
        }
        Some(Preset::SarEpisodicWeakPrior) => {
            train.seeds = (0..5).collect();
            train.episodes = 3;
            train.mode = RunMode::EpisodicWeakPrior;
            train.n_pretrain = 200;
        }
        Some(Preset::SarZeroShot) => {
            train.seeds = (0..5).collect();
            train.episodes = 1;
            train.mode = RunMode::ZeroShotStrongPrior;
            train.n_pretrain = 500;
        }
        None => {}
    }
    train
}

fn resolve_env(preset: Option<Preset>, file: &EnvFile) -> CliResult<EnvSetting> {
    let kind = match (file.kind, preset) {
        (Some(k), _) => k,
        (None, Some(p)) if p.is_tiger() => EnvKind::Tiger,
        (None, Some(_)) => EnvKind::SearchRescue,
        (None, None) => {
            return Err(CliError::Config(
                "either a preset or [env] kind is required".into(),
            ))
        }
    };
    let tiger_only = [
        ("r_tiger", file.r_tiger.is_some()),
        ("r_gold", file.r_gold.is_some()),
        ("p_correct", file.p_correct.is_some()),
        ("p_wrong", file.p_wrong.is_some()),
        ("p_stay", file.p_stay.is_some()),
    ];
    let sar_only = [
        ("n_grid", file.n_grid.is_some()),
        ("n_victims", file.n_victims.is_some()),
        ("n_hazards", file.n_hazards.is_some()),
        ("r_victim", file.r_victim.is_some()),
        ("r_hazard", file.r_hazard.is_some()),
        ("sigma_noise", file.sigma_noise.is_some()),
    ];
    let misplaced = match kind {
        EnvKind::Tiger => sar_only.iter().find(|(_, set)| *set),
        EnvKind::SearchRescue => tiger_only.iter().find(|(_, set)| *set),
    };
    if let Some((name, _)) = misplaced {
        return Err(CliError::Config(format!(
            "[env] field '{name}' does not apply to kind {}",
            match kind {
                EnvKind::Tiger => "tiger",
                EnvKind::SearchRescue => "search_rescue",
            }
        )));
    }
    match kind {
        EnvKind::Tiger => {
            let mut cfg = TigerConfig::default();
            if let Some(v) = file.r_tiger {
                cfg.r_tiger = v;
            }
            if let Some(v) = file.r_gold {
                cfg.r_gold = v;
            }
            if let Some(v) = file.r_listen {
                cfg.r_listen = v;
            }
            if let Some(v) = file.gamma {
                cfg.gamma = v;
            }
            if let Some(v) = file.p_correct {
                cfg.p_correct = v;
            }
            if let Some(v) = file.p_wrong {
                cfg.p_wrong = v;
            }
            if let Some(v) = file.p_stay {
                cfg.p_stay = v;
            }
            cfg.validate()?;
            Ok(EnvSetting::Tiger(cfg))
        }
        EnvKind::SearchRescue => {
            let mut cfg = SarConfig::default();
            if let Some(v) = file.n_grid {
                cfg.n_grid = v;
            }
            if let Some(v) = file.n_victims {
                cfg.n_victims = v;
            }
            if let Some(v) = file.n_hazards {
                cfg.n_hazards = v;
            }
            if let Some(v) = file.r_victim {
                cfg.r_victim = v;
            }
            if let Some(v) = file.r_hazard {
                cfg.r_hazard = v;
            }
            if let Some(v) = file.r_listen {
                cfg.r_listen = v;
            }
            if let Some(v) = file.gamma {
                cfg.gamma = v;
            }
            if let Some(v) = file.sigma_noise {
                cfg.sigma_noise = v;
            }
            cfg.validate()?;
            Ok(EnvSetting::SearchRescue(cfg))
        }
    }
}

fn knowledge_for_mode(mode: RunMode) -> PriorKnowledge {
    match mode {
        RunMode::EpisodicTabulaRasa => PriorKnowledge::None,
        RunMode::EpisodicWeakPrior => PriorKnowledge::Weak,
        RunMode::ZeroShotStrongPrior => PriorKnowledge::Strong,
    }
}

fn expand(preset: Option<Preset>, base: &RunSetting) -> Vec<Variant> {
    match preset {
        Some(Preset::TigerFig8) => [1usize, 5, 20]
            .iter()
            .map(|&k| {
                let mut setting = base.clone();
                setting.train.n_update = k;
                Variant {
                    label: format!("tiger_fig8_msbbe{k}"),
                    setting,
                }
            })
            .collect(),
        Some(Preset::SarZeroShot) => {
            let mut contextual = base.clone();
            contextual.agent.history = HistoryMode::Contextual;
            vec![
                Variant {
                    label: "sar_zero_shot_ben".into(),
                    setting: base.clone(),
                },
                Variant {
                    label: "sar_zero_shot_contextual".into(),
                    setting: contextual,
                },
            ]
        }
        Some(p) => vec![Variant {
            label: p.name().into(),
            setting: base.clone(),
        }],
        None => vec![Variant {
            label: "run".into(),
            setting: base.clone(),
        }],
    }
}

fn resolve_preset(file: &FileConfig, flags: &Flags) -> CliResult<Option<Preset>> {
    match (&flags.preset, &file.preset) {
        (Some(name), _) => Ok(Some(Preset::parse(name)?)),
        (None, Some(name)) => Ok(Some(Preset::parse(name)?)),
        (None, None) => Ok(None),
    }
}

/// Resolve just the environment section, for commands that need no run
/// settings (the oracle).
pub fn resolve_env_only(file: &FileConfig, flags: &Flags) -> CliResult<EnvSetting> {
    let preset = resolve_preset(file, flags)?;
    resolve_env(preset, &file.env)
}

/// Layer preset defaults, file values, and flags into a [`Resolved`].
pub fn resolve(file: &FileConfig, flags: &Flags, received: Option<String>) -> CliResult<Resolved> {
    let preset = resolve_preset(file, flags)?;
    let env = resolve_env(preset, &file.env)?;

    let mut train = default_train(preset, &env);
    let t = &file.train;
    if let Some(v) = t.n_pretrain {
        train.n_pretrain = v;
    }
    if let Some(v) = t.n_update {
        train.n_update = v;
    }
    if let Some(v) = t.n_posterior {
        train.n_posterior = v;
    }
    if let Some(v) = t.lr_omega {
        train.lr_omega = v;
    }
    if let Some(v) = t.lr_psi {
        train.lr_psi = v;
    }
    if let Some(v) = t.truncation {
        train.truncation = v;
    }
    if let Some(v) = t.n_mc {
        train.n_mc = v;
    }
    if let Some(v) = t.pretrain_batch {
        train.pretrain_batch = v;
    }
    if let Some(v) = t.episode_cap {
        train.episode_cap = v;
    }
    if let Some(v) = t.episodes {
        train.episodes = v;
    }
    if let Some(v) = &t.seeds {
        train.seeds = v.clone();
    }
    if let Some(v) = t.mode {
        train.mode = v.into();
    }
    if let Some(v) = t.posterior {
        train.posterior = v.into();
    }
    if let Some(v) = t.schedule {
        train.schedule = v.into();
    }
    if !flags.seeds.is_empty() {
        train.seeds = flags.seeds.clone();
    }
    train.validate()?;

    if train.posterior == PosteriorKind::ExactTiger
        && !matches!(env, EnvSetting::Tiger(_))
    {
        return Err(CliError::Config(
            "the exact_tiger posterior requires the tiger environment".into(),
        ));
    }

    let mut agent = default_agent(env.kind());
    let a = &file.agent;
    if let Some(v) = a.history {
        agent.history = v.into();
    }
    if let Some(v) = a.hidden {
        agent.hidden = v;
    }
    if let Some(v) = a.encoding {
        agent.encoding = v;
    }
    if let Some(v) = a.aleatoric_hidden {
        agent.aleatoric_hidden = v;
    }
    if let Some(v) = a.aleatoric_layers {
        agent.aleatoric_layers = v;
    }
    if let Some(v) = a.epistemic_hidden {
        agent.epistemic_hidden = v;
    }
    if let Some(v) = a.prior_var {
        agent.prior_var = v;
    }
    if let Some(v) = a.prior_weight {
        agent.prior_weight = v;
    }

    let mut prior = PriorSettings {
        knowledge: knowledge_for_mode(train.mode),
        listen_demos: 16,
        dataset_seed: 9001,
    };
    let p = &file.prior;
    if let Some(v) = p.knowledge {
        prior.knowledge = v.into();
    }
    if let Some(v) = p.listen_demos {
        prior.listen_demos = v;
    }
    if let Some(v) = p.dataset_seed {
        prior.dataset_seed = v;
    }
    if matches!(env, EnvSetting::Tiger(_)) && prior.knowledge != PriorKnowledge::None {
        return Err(CliError::Config(
            "prior datasets exist for search_rescue only; tiger runs take knowledge = \"none\""
                .into(),
        ));
    }

    let ablate = AblateGrids {
        aleatoric: file
            .ablate
            .aleatoric_grid
            .clone()
            .unwrap_or_else(|| vec![1, 2, 3, 4]),
        pretrain: file
            .ablate
            .pretrain_grid
            .clone()
            .unwrap_or_else(|| vec![0, 100, 500]),
    };
    if ablate.aleatoric.is_empty() || ablate.pretrain.is_empty() {
        return Err(CliError::Config("ablation grids must be nonempty".into()));
    }
    if ablate.aleatoric.iter().any(|&l| l == 0) {
        return Err(CliError::Config(
            "aleatoric_grid entries must be at least 1".into(),
        ));
    }

    let out_dir = flags
        .out
        .clone()
        .or_else(|| file.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
        .ok_or_else(|| {
            CliError::Config(format!(
                "no output directory: pass --out, set out_dir in the config, or set {OUT_DIR_VAR}"
            ))
        })?;

    let base = RunSetting {
        env,
        train,
        agent,
        prior,
    };
    let variants = expand(preset, &base);
    Ok(Resolved {
        preset,
        out_dir,
        base,
        variants,
        ablate,
        received,
    })
}

/// Serialize a [`Resolved`] back into the file format with every value
/// explicit. Parsing and resolving the result reproduces the run.
pub fn snapshot(resolved: &Resolved) -> FileConfig {
    let base = &resolved.base;
    let env = match &base.env {
        EnvSetting::Tiger(cfg) => EnvFile {
            kind: Some(EnvKind::Tiger),
            r_tiger: Some(cfg.r_tiger),
            r_gold: Some(cfg.r_gold),
            p_correct: Some(cfg.p_correct),
            p_wrong: Some(cfg.p_wrong),
            p_stay: Some(cfg.p_stay),
            r_listen: Some(cfg.r_listen),
            gamma: Some(cfg.gamma),
            ..EnvFile::default()
        },
        EnvSetting::SearchRescue(cfg) => EnvFile {
            kind: Some(EnvKind::SearchRescue),
            n_grid: Some(cfg.n_grid),
            n_victims: Some(cfg.n_victims),
            n_hazards: Some(cfg.n_hazards),
            r_victim: Some(cfg.r_victim),
            r_hazard: Some(cfg.r_hazard),
            sigma_noise: Some(cfg.sigma_noise),
            r_listen: Some(cfg.r_listen),
            gamma: Some(cfg.gamma),
            ..EnvFile::default()
        },
    };
    FileConfig {
        preset: resolved.preset.map(|p| p.name().to_string()),
        out_dir: Some(resolved.out_dir.clone()),
        env,
        train: TrainFile {
            n_pretrain: Some(base.train.n_pretrain),
            n_update: Some(base.train.n_update),
            n_posterior: Some(base.train.n_posterior),
            lr_omega: Some(base.train.lr_omega),
            lr_psi: Some(base.train.lr_psi),
            truncation: Some(base.train.truncation),
            n_mc: Some(base.train.n_mc),
            pretrain_batch: Some(base.train.pretrain_batch),
            episode_cap: Some(base.train.episode_cap),
            episodes: Some(base.train.episodes),
            seeds: Some(base.train.seeds.clone()),
            mode: Some(base.train.mode.into()),
            posterior: Some(base.train.posterior.into()),
            schedule: Some(base.train.schedule.into()),
        },
        agent: AgentFile {
            history: Some(base.agent.history.into()),
            hidden: Some(base.agent.hidden),
            encoding: Some(base.agent.encoding),
            aleatoric_hidden: Some(base.agent.aleatoric_hidden),
            aleatoric_layers: Some(base.agent.aleatoric_layers),
            epistemic_hidden: Some(base.agent.epistemic_hidden),
            prior_var: Some(base.agent.prior_var),
            prior_weight: Some(base.agent.prior_weight),
        },
        prior: PriorFile {
            knowledge: Some(base.prior.knowledge.into()),
            listen_demos: Some(base.prior.listen_demos),
            dataset_seed: Some(base.prior.dataset_seed),
        },
        ablate: AblateFile {
            aleatoric_grid: Some(resolved.ablate.aleatoric.clone()),
            pretrain_grid: Some(resolved.ablate.pretrain.clone()),
        },
    }
}

pub fn snapshot_toml(resolved: &Resolved) -> CliResult<String> {
    toml::to_string_pretty(&snapshot(resolved))
        .map_err(|e| CliError::Runtime(format!("cannot serialize config snapshot: {e}")))
}
