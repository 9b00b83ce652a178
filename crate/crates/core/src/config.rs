//! Scenario configuration.
//!
//! A scenario is one TOML file with the sections `[topology]`,
//! `[acquisition]`, `[experiment]`, `[forest]`, an `[[ecus]]` array and an
//! optional `[attack]` table. Every section except `[[ecus]]` has defaults;
//! unknown keys are rejected. See `configs/testbed.toml` for an annotated
//! example.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::AcquisitionConfig;
use crate::attack::{AttackMode, AttackScenario};
use crate::bus::{build_topology, validate_profiles, BusTopology, EcuId, EcuProfile, TapId, TopologyConfig};
use crate::can::Mid;
use crate::forest::{ForestParams, MidOwnershipMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Split,
    Kfold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Benign messages in total, across all ECUs.
    pub messages: usize,
    pub mode: SplitMode,
    pub train_fraction: f64,
    pub stratified: bool,
    pub k: usize,
    /// Allowed message periods (ms), inclusive.
    pub period_bounds_ms: [f64; 2],
    /// Minimum macro F1 for the report gate.
    pub gate_macro_f1: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 2024,
            messages: 60_000,
            mode: SplitMode::Split,
            train_fraction: 0.06,
            stratified: true,
            k: 10,
            period_bounds_ms: [10.0, 40.0],
            gate_macro_f1: 0.994,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcuConfig {
    pub id: u16,
    pub tap_m: f64,
    pub mids: Vec<Mid>,
    pub canh_dom_v: f64,
    #[serde(default = "default_canl")]
    pub canl_dom_v: f64,
    #[serde(default = "default_recessive")]
    pub v_recessive_v: f64,
    pub period_ms: f64,
    #[serde(default = "default_jitter")]
    pub jitter_sigma_v: f64,
}

fn default_canl() -> f64 {
    1.5
}

fn default_recessive() -> f64 {
    2.5
}

fn default_jitter() -> f64 {
    0.002
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub forest: ForestParams,
    pub ecus: Vec<EcuConfig>,
    #[serde(default)]
    pub attack: Option<AttackScenario>,
}

/// A config problem, located in the source text when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted path of the offending key, e.g. `ecus[2].canh_dom_v`.
    pub path: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: ")?,
            (Some(l), None) => write!(f, "line {l}: ")?,
            _ => {}
        }
        if !self.path.is_empty() {
            write!(f, "{}: ", self.path)?;
        }
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn at(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.into(),
        line: None,
        column: None,
        message: message.into(),
    }
}

/// Everything the pipeline needs, resolved from a validated config.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub topology: BusTopology,
    pub profiles: Vec<EcuProfile>,
    pub ownership: MidOwnershipMap,
}

impl ScenarioConfig {
    /// The ten-ECU bench: taps 1 m apart, ECU n sends MID n.
    pub fn testbed() -> Self {
        let canh = [3.25, 3.30, 3.2185, 3.36, 3.35, 3.28, 3.3114, 3.405, 3.24, 3.33];
        let periods = [10.0, 20.0, 40.0, 10.0, 20.0, 40.0, 10.0, 20.0, 40.0, 20.0];
        let ecus = (0..10)
            .map(|i| EcuConfig {
                id: i as u16 + 1,
                tap_m: 0.5 + i as f64,
                mids: vec![Mid::new(i + 1).expect("small MID")],
                canh_dom_v: canh[i as usize],
                canl_dom_v: default_canl(),
                v_recessive_v: default_recessive(),
                period_ms: periods[i as usize],
                jitter_sigma_v: default_jitter(),
            })
            .collect();
        ScenarioConfig {
            topology: TopologyConfig::default(),
            acquisition: AcquisitionConfig::default(),
            experiment: ExperimentConfig::default(),
            forest: ForestParams::default(),
            ecus,
            attack: Some(AttackScenario {
                attacker_ecu: EcuId(5),
                attacker_tap_m: None,
                mode: AttackMode::MidVoltage,
                victim_mids: [3, 7, 8].map(|m| Mid::new(m).expect("small MID")).to_vec(),
                // CANH 3.2185, 3.3114 and 3.405 V over a 1.5 V CANL.
                spoof_differential_v: vec![1.7185, 1.8114, 1.905],
                messages_per_victim: 600,
                periods_ms: vec![10.0, 20.0, 40.0],
            }),
        }
    }

    /// Same bench with every noise source off and the ADC bypassed.
    pub fn zero_noise(mut self) -> Self {
        self.acquisition.quantize = false;
        self.acquisition.noise_sigma_v = 0.0;
        self.acquisition.common_mode_amplitude_v = 0.0;
        for e in &mut self.ecus {
            e.jitter_sigma_v = 0.0;
        }
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_col(text, s.start))
                .map_or((None, None), |(l, c)| (Some(l), Some(c)));
            ConfigError {
                path: String::new(),
                line,
                column,
                message: e.message().to_owned(),
            }
        })?;
        config.validate().map_err(|mut e| {
            e.line = locate(text, &e.path);
            e
        })?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io(path.display().to_string(), e))?;
        Self::from_toml_str(&text).map_err(LoadError::Config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// `config_hash=<hex> seed=<n>`, the first line of every output file.
    pub fn provenance(&self) -> String {
        format!("config_hash={} seed={}", self.hash(), self.experiment.seed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.resolve().map(|_| ())
    }

    pub fn resolve(&self) -> Result<Scenario, ConfigError> {
        let exp = &self.experiment;
        if !(exp.train_fraction > 0.0 && exp.train_fraction < 1.0) {
            return Err(at("experiment.train_fraction", "must lie strictly between 0 and 1"));
        }
        if exp.k < 2 {
            return Err(at("experiment.k", "needs at least 2 folds"));
        }
        let [lo, hi] = exp.period_bounds_ms;
        if !(lo > 0.0 && lo <= hi) {
            return Err(at("experiment.period_bounds_ms", "expected 0 < low <= high"));
        }
        if !(0.0..=1.0).contains(&exp.gate_macro_f1) {
            return Err(at("experiment.gate_macro_f1", "must lie in [0, 1]"));
        }
        self.acquisition
            .validate()
            .map_err(|e| at("acquisition", e.to_string()))?;
        self.forest.validate().map_err(|e| at("forest", e.to_string()))?;
        if self.ecus.len() < 2 {
            return Err(at("ecus", "need at least two ECUs"));
        }

        let mut ids = BTreeSet::new();
        for (i, e) in self.ecus.iter().enumerate() {
            if !ids.insert(e.id) {
                return Err(at(format!("ecus[{i}].id"), format!("duplicate ECU id {}", e.id)));
            }
            if e.mids.is_empty() {
                return Err(at(format!("ecus[{i}].mids"), "an ECU must own at least one MID"));
            }
            if !(lo..=hi).contains(&e.period_ms) {
                return Err(at(
                    format!("ecus[{i}].period_ms"),
                    format!("{} ms outside [{lo}, {hi}] ms", e.period_ms),
                ));
            }
        }

        let taps: Vec<f64> = self.ecus.iter().map(|e| e.tap_m).collect();
        let topology = build_topology(&self.topology, &taps).map_err(|e| {
            let path = match &e {
                crate::bus::BusError::TapOutOfRange(x) => taps
                    .iter()
                    .position(|t| t == x)
                    .map_or("ecus".into(), |i| format!("ecus[{i}].tap_m")),
                crate::bus::BusError::DuplicateTap { second, .. } => format!("ecus[{second}].tap_m"),
                _ => "topology".into(),
            };
            at(path, e.to_string())
        })?;

        let profiles: Vec<EcuProfile> = self
            .ecus
            .iter()
            .enumerate()
            .map(|(i, e)| EcuProfile {
                ecu_id: EcuId(e.id),
                tap: TapId(i),
                owned_mids: e.mids.iter().copied().collect(),
                canh_dom: e.canh_dom_v,
                canl_dom: e.canl_dom_v,
                v_recessive: e.v_recessive_v,
                period_ms: e.period_ms,
                jitter_sigma_v: e.jitter_sigma_v,
            })
            .collect();
        validate_profiles(&profiles).map_err(|e| {
            let path = match &e {
                crate::bus::BusError::Profile { ecu, .. } => self
                    .ecus
                    .iter()
                    .position(|c| c.id == *ecu)
                    .map_or("ecus".into(), |i| format!("ecus[{i}]")),
                _ => "ecus".into(),
            };
            at(path, e.to_string())
        })?;
        let ownership = MidOwnershipMap::from_profiles(&profiles).map_err(|e| at("ecus", e.to_string()))?;

        if let Some(attack) = &self.attack {
            if attack.victim_mids.is_empty() {
                return Err(at("attack.victim_mids", "attack needs at least one victim MID"));
            }
            attack.validate().map_err(|e| at("attack", e.to_string()))?;
            if !ids.contains(&attack.attacker_ecu.0) {
                return Err(at("attack.attacker_ecu", format!("no ECU with id {}", attack.attacker_ecu.0)));
            }
        }

        Ok(Scenario {
            config: self.clone(),
            topology,
            profiles,
            ownership,
        })
    }
}

#[derive(Debug)]
pub enum LoadError {
    Io(String, std::io::Error),
    Config(ConfigError),
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Io(path, e) => write!(f, "cannot read {path}: {e}"),
            LoadError::Config(e) => write!(f, "invalid config: {e}"),
        }
    }
}

impl std::error::Error for LoadError {}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Best-effort line of a dotted key path such as `ecus[2].tap_m` or `experiment.k`.
fn locate(text: &str, path: &str) -> Option<usize> {
    let (head, key) = match path.split_once('.') {
        Some((h, k)) => (h, Some(k)),
        None => (path, None),
    };
    let (section, index) = match head.split_once('[') {
        Some((s, rest)) => (s, rest.trim_end_matches(']').parse::<usize>().ok()),
        None => (head, None),
    };
    let header = match index {
        Some(_) => format!("[[{section}]]"),
        None => format!("[{section}]"),
    };
    let lines: Vec<&str> = text.lines().collect();
    let mut seen = 0;
    let start = lines.iter().position(|l| {
        if l.trim() != header {
            return false;
        }
        seen += 1;
        seen == index.unwrap_or(0) + 1
    })?;
    let Some(key) = key else {
        return Some(start + 1);
    };
    let found = lines[start + 1..]
        .iter()
        .take_while(|l| !l.trim_start().starts_with('['))
        .position(|l| {
            l.trim_start()
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        });
    Some(found.map_or(start, |i| start + 1 + i) + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn testbed_resolves() {
        let s = ScenarioConfig::testbed().resolve().unwrap();
        assert_eq!(s.profiles.len(), 10);
        assert_eq!(s.ownership.owner(Mid::new(3).unwrap()), Some(EcuId(3)));
        let d: Vec<f64> = s.profiles.iter().map(EcuProfile::differential).collect();
        assert!((d[2] - 1.7185).abs() < 1e-12 && (d[6] - 1.8114).abs() < 1e-12);
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let c = ScenarioConfig::testbed();
        let back = ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut other = c.clone();
        other.experiment.seed += 1;
        assert_ne!(other.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    const SMALL: &str = r#"
[experiment]
seed = 1
messages = 10

[[ecus]]
id = 1
tap_m = 1.0
mids = [1]
canh_dom_v = 3.3
period_ms = 10

[[ecus]]
id = 2
tap_m = 2.0
mids = [2]
canh_dom_v = 3.3
period_ms = 20
"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let c = ScenarioConfig::from_toml_str(SMALL).unwrap();
        assert_eq!(c.acquisition, AcquisitionConfig::default());
        assert_eq!(c.ecus[1].canl_dom_v, 1.5);
        assert!(c.attack.is_none());
    }

    #[test]
    fn semantic_errors_point_at_lines() {
        let bad = SMALL.replace("period_ms = 20", "period_ms = 80");
        let e = ScenarioConfig::from_toml_str(&bad).unwrap_err();
        assert_eq!(e.path, "ecus[1].period_ms");
        assert_eq!(e.line, Some(18));

        let bad = SMALL.replace("mids = [2]", "mids = [1]");
        let e = ScenarioConfig::from_toml_str(&bad).unwrap_err();
        assert_eq!(e.path, "ecus[1]");
        assert_eq!(e.line, Some(13));

        let bad = SMALL.replace("tap_m = 2.0", "tap_m = 1.0");
        let e = ScenarioConfig::from_toml_str(&bad).unwrap_err();
        assert_eq!(e.path, "ecus[1].tap_m");
        assert_eq!(e.line, Some(15));
    }

    #[test]
    fn syntax_and_unknown_keys() {
        let e = ScenarioConfig::from_toml_str(&SMALL.replace("seed = 1", "seed = ")).unwrap_err();
        assert_eq!(e.line, Some(3));
        let e = ScenarioConfig::from_toml_str(&SMALL.replace("seed = 1", "sed = 1")).unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.message.contains("unknown field"));
    }

    #[test]
    fn empty_attack_list_is_rejected() {
        let mut c = ScenarioConfig::testbed();
        if let Some(a) = c.attack.as_mut() {
            a.victim_mids.clear();
            a.spoof_differential_v.clear();
        }
        assert_eq!(c.validate().unwrap_err().path, "attack.victim_mids");
    }
}
