//! Run configuration: a TOML file plus environment overrides.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! `LOCNET_SEED`, `LOCNET_OUT` and `LOCNET_PROFILE` override the file, and
//! command-line flags override both.

use std::path::{Path, PathBuf};

use locnet_core::anodet::AdConfig;
use locnet_core::locate::{AdmissionRules, RowForm};
use locnet_core::losest::{LosEstConfig, TrainingCriteria};
use locnet_core::nn::{AdamConfig, TrainConfig};
use locnet_core::nomp::NompConfig;
use locnet_core::sim::{ArrayConfig, OfdmConfig, OrientationPolicy};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Wifi20,
    Uwb,
}

impl Profile {
    pub fn ofdm(self) -> OfdmConfig {
        match self {
            Profile::Wifi20 => OfdmConfig::wifi20(),
            Profile::Uwb => OfdmConfig::uwb_wide(),
        }
    }

    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "wifi20" => Ok(Profile::Wifi20),
            "uwb" | "uwb-wide" => Ok(Profile::Uwb),
            other => Err(HarnessError::Config(format!("unknown profile `{other}` (expected wifi20 or uwb)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Wifi20 => "wifi20",
            Profile::Uwb => "uwb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrayKind {
    Triangle,
    PatchPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrientationMode {
    Fixed,
    PerTrajectory,
    PerPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub snr_db: f64,
    pub max_reflections: usize,
    pub trajectory_length: usize,
    pub step: f64,
    pub array: ArrayKind,
    /// Element spacing of the array, wavelengths.
    pub element_spacing: f64,
    pub orientation: OrientationMode,
    /// Receiver clock offset range in delay samples, drawn per trajectory.
    pub clock_offset_samples: [f64; 2],
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            snr_db: 25.0,
            max_reflections: 2,
            trajectory_length: 15,
            step: 0.2,
            array: ArrayKind::Triangle,
            element_spacing: 0.5,
            orientation: OrientationMode::PerTrajectory,
            clock_offset_samples: [1.0, 3.0],
        }
    }
}

impl SimSettings {
    pub fn array_config(&self) -> ArrayConfig {
        match self.array {
            ArrayKind::Triangle => ArrayConfig::triangle(self.element_spacing),
            ArrayKind::PatchPair => {
                let mut a = ArrayConfig::patch_pair();
                a.element_positions[1][0] = self.element_spacing;
                a
            }
        }
    }

    pub fn orientation_policy(&self) -> OrientationPolicy {
        match self.orientation {
            OrientationMode::Fixed => OrientationPolicy::Fixed(0.0),
            OrientationMode::PerTrajectory => OrientationPolicy::PerTrajectory,
            OrientationMode::PerPoint => OrientationPolicy::PerPoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSettings {
    pub num_paths: usize,
    pub delay_oversample: usize,
    pub angle_grid: usize,
    pub newton_steps: usize,
    pub cyclic_rounds: usize,
}

impl Default for ExtractSettings {
    fn default() -> Self {
        let n = NompConfig::default();
        Self {
            num_paths: 5,
            delay_oversample: n.delay_oversample,
            angle_grid: n.angle_grid_size,
            newton_steps: n.newton_steps,
            cyclic_rounds: n.cyclic_rounds,
        }
    }
}

impl ExtractSettings {
    pub fn nomp(&self) -> NompConfig {
        NompConfig {
            delay_oversample: self.delay_oversample,
            angle_grid_size: self.angle_grid,
            newton_steps: self.newton_steps,
            cyclic_rounds: self.cyclic_rounds,
        }
    }
}

/// Propagation regime of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioClass {
    LosDominant,
    Obstructed,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub class: ScenarioClass,
    pub region: String,
    pub train_devices: Vec<String>,
    pub eval_devices: Vec<String>,
    /// Trajectories simulated per split.
    #[serde(default)]
    pub train_trajectories: usize,
    #[serde(default)]
    pub eval_trajectories: usize,
    /// Mixed-condition trajectories (train devices) used to set the gate threshold.
    #[serde(default)]
    pub calibration_trajectories: usize,
    /// Confines walks to a square of this half-width (m) around the device.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

pub fn default_scenarios() -> Vec<ScenarioSpec> {
    let s = |name: &str, class, region: &str, train: &[&str], eval: &[&str], counts: [usize; 3], radius| ScenarioSpec {
        name: name.into(),
        class,
        region: region.into(),
        train_devices: train.iter().map(|d| d.to_string()).collect(),
        eval_devices: eval.iter().map(|d| d.to_string()).collect(),
        train_trajectories: counts[0],
        eval_trajectories: counts[1],
        calibration_trajectories: counts[2],
        radius,
    };
    vec![
        s("los-open", ScenarioClass::LosDominant, "open", &["d1", "d2"], &["d6", "d7"], [1200, 500, 150], Some(4.5)),
        s("los-corridor", ScenarioClass::LosDominant, "corridor", &["d5"], &["d10"], [600, 200, 150], Some(4.5)),
        s("olos-meeting", ScenarioClass::Obstructed, "corridor", &["d3"], &["d8"], [600, 200, 150], Some(4.5)),
        s("nlos-server", ScenarioClass::Blocked, "server-front", &["d4"], &["d9"], [600, 200, 150], None),
        s("nlos-pillar", ScenarioClass::Blocked, "pillar-zone", &["d11"], &["d12"], [600, 200, 150], None),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub validation_fraction: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            learning_rate: a.learning_rate,
            batch_size: 8,
            epochs: 100,
            decay_factor: a.decay_factor,
            decay_every: a.decay_every,
            validation_fraction: 0.1,
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                decay_factor: self.decay_factor,
                decay_every: self.decay_every,
                ..AdamConfig::default()
            },
            batch_size: self.batch_size,
            epochs: self.epochs,
            validation_fraction: self.validation_fraction,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSettings {
    pub n: usize,
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub feature_dim: usize,
    pub bilstm_hidden: usize,
    pub ad_hidden: usize,
    pub fc_hidden: usize,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        let l = LosEstConfig::default();
        Self {
            n: l.n,
            conv_layers: l.conv_layers,
            conv_channels: l.conv_channels,
            feature_dim: l.feature_dim,
            bilstm_hidden: l.hidden,
            ad_hidden: 32,
            fc_hidden: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSettings {
    /// Midpoint error (degrees) separating normal from anomalous segments
    /// during calibration.
    pub label_error_deg: f64,
    pub max_los_error_deg: f64,
    pub min_top_gain_dbm: f64,
    pub tx_power_dbm: f64,
}

impl Default for GateSettings {
    fn default() -> Self {
        let c = TrainingCriteria::default();
        Self {
            label_error_deg: 15.0,
            max_los_error_deg: c.max_los_error_deg,
            min_top_gain_dbm: c.min_top_gain_dbm,
            tx_power_dbm: c.tx_power_dbm,
        }
    }
}

impl GateSettings {
    pub fn criteria(&self) -> TrainingCriteria {
        TrainingCriteria {
            max_los_error_deg: self.max_los_error_deg,
            min_top_gain_dbm: self.min_top_gain_dbm,
            tx_power_dbm: self.tx_power_dbm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocateSettings {
    pub min_spacing: f64,
    pub min_span_deg: f64,
    pub min_bearings: usize,
    /// Use the sine/cosine row form instead of the tangent form.
    pub sin_cos_rows: bool,
    /// Geometrically admissible walks to collect for the localization run.
    pub trajectories: usize,
    /// Walks drawn before giving up on reaching `trajectories`.
    pub max_candidates: usize,
    pub devices: Vec<String>,
    /// Half-width (m) of the square walking area centred on the device.
    pub radius: f64,
    /// Points per localization walk.
    pub trajectory_length: usize,
    /// Chance of a 90 degree turn per step on localization walks.
    pub turn_probability: f64,
}

impl Default for LocateSettings {
    fn default() -> Self {
        Self {
            min_spacing: 0.4,
            min_span_deg: 20.0,
            min_bearings: 5,
            sin_cos_rows: false,
            trajectories: 500,
            max_candidates: 5000,
            devices: ["d6", "d7", "d8", "d9", "d10"].map(String::from).to_vec(),
            radius: 4.0,
            trajectory_length: 15,
            turn_probability: 0.0,
        }
    }
}

impl LocateSettings {
    pub fn rules(&self) -> AdmissionRules {
        AdmissionRules { min_spacing: self.min_spacing, min_span_deg: self.min_span_deg, min_bearings: self.min_bearings }
    }

    pub fn row_form(&self) -> RowForm {
        if self.sin_cos_rows {
            RowForm::SinCos
        } else {
            RowForm::Tangent
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Path to a scene file, or `builtin:office`.
    pub scene: String,
    pub profile: Profile,
    pub sim: SimSettings,
    pub extract: ExtractSettings,
    pub network: NetworkSettings,
    pub train: TrainSettings,
    pub gate: GateSettings,
    pub locate: LocateSettings,
    pub scenarios: Vec<ScenarioSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out: PathBuf::from("locnet-out"),
            scene: "builtin:office".into(),
            profile: Profile::Wifi20,
            sim: SimSettings::default(),
            extract: ExtractSettings::default(),
            network: NetworkSettings::default(),
            train: TrainSettings::default(),
            gate: GateSettings::default(),
            locate: LocateSettings::default(),
            scenarios: default_scenarios(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `LOCNET_SEED`, `LOCNET_OUT` and `LOCNET_PROFILE` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), HarnessError> {
        if let Some(s) = lookup("LOCNET_SEED") {
            self.seed = s.trim().parse().map_err(|_| HarnessError::Config(format!("LOCNET_SEED `{s}` is not an integer")))?;
        }
        if let Some(o) = lookup("LOCNET_OUT") {
            self.out = PathBuf::from(o);
        }
        if let Some(p) = lookup("LOCNET_PROFILE") {
            self.profile = Profile::parse(p.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.network.n < 3 {
            return bad(format!("segment length N = {} must be at least 3", self.network.n));
        }
        if self.extract.num_paths == 0 {
            return bad("L must be at least 1".into());
        }
        if self.sim.trajectory_length < self.network.n {
            return bad(format!(
                "trajectory length {} is shorter than the segment length {}",
                self.sim.trajectory_length, self.network.n
            ));
        }
        if self.locate.trajectory_length < self.network.n {
            return bad(format!(
                "localization trajectory length {} is shorter than the segment length {}",
                self.locate.trajectory_length, self.network.n
            ));
        }
        if let Some(s) = self.scenarios.iter().find(|s| s.radius.is_some_and(|r| !(r > 0.0))) {
            return bad(format!("scenario `{}` radius must be positive", s.name));
        }
        if self.sim.step <= 0.0 || !self.sim.step.is_finite() {
            return bad("step must be positive".into());
        }
        if self.sim.max_reflections > 2 {
            return bad(format!("max_reflections {} is not supported (0..=2)", self.sim.max_reflections));
        }
        if self.sim.snr_db.is_nan() {
            return bad("snr_db must be a number".into());
        }
        if self.train.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        let [lo, hi] = self.sim.clock_offset_samples;
        if !(lo >= 0.0 && hi >= lo) {
            return bad("clock_offset_samples must be an ordered non-negative range".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.scenarios {
            if !names.insert(&s.name) {
                return bad(format!("duplicate scenario `{}`", s.name));
            }
        }
        Ok(())
    }

    pub fn losest_config(&self) -> LosEstConfig {
        LosEstConfig {
            n: self.network.n,
            l: self.extract.num_paths,
            conv_layers: self.network.conv_layers,
            conv_channels: self.network.conv_channels,
            kernel_taps: 3,
            feature_dim: self.network.feature_dim,
            hidden: self.network.bilstm_hidden,
        }
    }

    pub fn ad_config(&self) -> AdConfig {
        AdConfig { feature_dim: self.network.feature_dim, hidden: self.network.ad_hidden }
    }

    pub fn scenario(&self, name: &str) -> Option<&ScenarioSpec> {
        self.scenarios.iter().find(|s| s.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn env_overrides() {
        let mut c = RunConfig::default();
        c.apply_env(|k| match k {
            "LOCNET_SEED" => Some("99".into()),
            "LOCNET_PROFILE" => Some("uwb".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.seed, 99);
        assert_eq!(c.profile, Profile::Uwb);
        assert!(c.apply_env(|k| (k == "LOCNET_SEED").then(|| "x".into())).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("[network]\nn = 2").is_err());
        assert!(RunConfig::from_toml("[sim]\nmax_reflections = 3").is_err());
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("profile = \"lte\"").is_err());
    }
}
