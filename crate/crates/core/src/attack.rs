//! Masquerade traffic generation.
//!
//! The attacker is a compromised ECU (or an extra node) at its own tap. In
//! MID-only mode it sends frames carrying victim MIDs with its natural drive.
//! In MID-voltage mode it also overrides its dominant differential per victim.
//! Either way the voltage at the sampling points is set by the attacker's tap,
//! so the two-point ratio stays the attacker's.

use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{
    synthesize_transmission, AcquisitionConfig, AcquisitionError, Transmitter, WaveformCapture,
};
use crate::bus::{
    voltage_at_sp, BusError, BusTopology, EcuId, EcuProfile, SamplingPoint, TapId,
    DIFFERENTIAL_DOMINANT_RANGE,
};
use crate::can::{encode_frame, CanFrame, Mid};
use crate::seed::{self, Stream};

/// Payload of every injected frame.
pub const ATTACK_PAYLOAD: [u8; 8] = [0x00; 8];

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("attacker {0} is not a configured ECU")]
    UnknownAttacker(EcuId),
    #[error("MID {mid} is owned by the attacker {attacker}; nothing to masquerade")]
    OwnMid { mid: Mid, attacker: EcuId },
    #[error("no ECU owns victim MID {0}")]
    UnownedMid(Mid),
    #[error("attacker tap coincides with the tap of victim {0}")]
    SharedTap(EcuId),
    #[error("spoof level {0} V outside the dominant differential range [1.5, 3.0] V")]
    SpoofOutOfRange(f64),
    #[error("{victims} victims but {spoofs} spoof levels")]
    SpoofCount { victims: usize, spoofs: usize },
    #[error("scenario mode is {actual:?}, operation needs {expected:?}")]
    WrongMode { expected: AttackMode, actual: AttackMode },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("search space: {0}")]
    SearchSpace(String),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    MidOnly,
    MidVoltage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackScenario {
    pub attacker_ecu: EcuId,
    /// Extra node position (m). `None` attacks from the attacker ECU's own tap.
    #[serde(default)]
    pub attacker_tap_m: Option<f64>,
    pub mode: AttackMode,
    pub victim_mids: Vec<Mid>,
    /// Differential drive per victim, aligned with `victim_mids` (MID-voltage mode).
    #[serde(default)]
    pub spoof_differential_v: Vec<f64>,
    #[serde(default = "default_messages_per_victim")]
    pub messages_per_victim: usize,
    /// Injection period per victim; a shorter list is cycled.
    #[serde(default = "default_periods")]
    pub periods_ms: Vec<f64>,
}

fn default_messages_per_victim() -> usize {
    600
}

fn default_periods() -> Vec<f64> {
    vec![10.0, 20.0, 40.0]
}

/// One injected frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackFrame {
    pub time_ms: f64,
    /// Owner of the spoofed MID.
    pub victim: EcuId,
    pub drive_v: f64,
    /// Labelled with the attacker, the true sender.
    pub capture: WaveformCapture,
}

/// Resolved injection plan: where the attacker sits and what it drives per victim.
#[derive(Debug, Clone)]
struct Plan {
    topology: BusTopology,
    tap: TapId,
    jitter_sigma_v: f64,
    victims: Vec<(Mid, EcuId, f64)>,
}

impl AttackScenario {
    pub fn validate(&self) -> Result<(), AttackError> {
        if self.victim_mids.iter().collect::<BTreeSet<_>>().len() != self.victim_mids.len() {
            return Err(AttackError::Invalid("duplicate victim MID".into()));
        }
        if self.periods_ms.is_empty() && !self.victim_mids.is_empty() {
            return Err(AttackError::Invalid("periods_ms is empty".into()));
        }
        if let Some(p) = self.periods_ms.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(AttackError::Invalid(format!("period {p} ms must be positive")));
        }
        if self.mode == AttackMode::MidVoltage {
            if self.spoof_differential_v.len() != self.victim_mids.len() {
                return Err(AttackError::SpoofCount {
                    victims: self.victim_mids.len(),
                    spoofs: self.spoof_differential_v.len(),
                });
            }
            if let Some(&v) = self
                .spoof_differential_v
                .iter()
                .find(|v| !DIFFERENTIAL_DOMINANT_RANGE.contains(*v))
            {
                return Err(AttackError::SpoofOutOfRange(v));
            }
        }
        Ok(())
    }

    fn plan(&self, topology: &BusTopology, profiles: &[EcuProfile]) -> Result<Plan, AttackError> {
        self.validate()?;
        let attacker = profiles
            .iter()
            .find(|p| p.ecu_id == self.attacker_ecu)
            .ok_or(AttackError::UnknownAttacker(self.attacker_ecu))?;
        let (topology, tap) = match self.attacker_tap_m {
            Some(x) => topology.with_extra_tap(x)?,
            None => (topology.clone(), attacker.tap),
        };
        let attacker_x = topology.tap_position(tap)?;
        let mut victims = Vec::with_capacity(self.victim_mids.len());
        for (i, &mid) in self.victim_mids.iter().enumerate() {
            let owner = profiles
                .iter()
                .find(|p| p.owned_mids.contains(&mid))
                .ok_or(AttackError::UnownedMid(mid))?;
            if owner.ecu_id == self.attacker_ecu {
                return Err(AttackError::OwnMid {
                    mid,
                    attacker: self.attacker_ecu,
                });
            }
            if topology.tap_position(owner.tap)? == attacker_x {
                return Err(AttackError::SharedTap(owner.ecu_id));
            }
            let drive = match self.mode {
                AttackMode::MidOnly => attacker.differential(),
                AttackMode::MidVoltage => self.spoof_differential_v[i],
            };
            victims.push((mid, owner.ecu_id, drive));
        }
        Ok(Plan {
            topology,
            tap,
            jitter_sigma_v: attacker.jitter_sigma_v,
            victims,
        })
    }
}

fn generate(
    scenario: &AttackScenario,
    plan: &Plan,
    acq: &AcquisitionConfig,
    seed: u64,
) -> Result<Vec<AttackFrame>, AttackError> {
    let mut rng = seed::rng(seed, Stream::Attack);
    let capture_base: u64 = rng.random();
    let mut schedule = Vec::with_capacity(plan.victims.len() * scenario.messages_per_victim);
    for (v, _) in plan.victims.iter().enumerate() {
        let period = scenario.periods_ms[v % scenario.periods_ms.len()];
        let phase = rng.random::<f64>() * period;
        for j in 0..scenario.messages_per_victim {
            schedule.push((phase + j as f64 * period, v));
        }
    }
    schedule.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let streams: Vec<_> = plan
        .victims
        .iter()
        .map(|&(mid, _, _)| {
            let frame = CanFrame::new(u32::from(mid.value()), &ATTACK_PAYLOAD)
                .expect("MID already validated and payload is 8 bytes");
            encode_frame(&frame)
        })
        .collect();

    schedule
        .par_iter()
        .enumerate()
        .map(|(k, &(time_ms, v))| {
            let (_, victim, drive_v) = plan.victims[v];
            let tx = Transmitter {
                label: scenario.attacker_ecu,
                tap: plan.tap,
                drive_v,
                jitter_sigma_v: plan.jitter_sigma_v,
            };
            let capture = synthesize_transmission(
                &plan.topology,
                &tx,
                &streams[v],
                acq,
                seed::derive(capture_base, k),
            )?;
            Ok(AttackFrame {
                time_ms,
                victim,
                drive_v,
                capture,
            })
        })
        .collect()
}

/// Frames with victim MIDs driven at the attacker's own level.
pub fn inject_mid_masquerade(
    scenario: &AttackScenario,
    topology: &BusTopology,
    profiles: &[EcuProfile],
    acq: &AcquisitionConfig,
    seed: u64,
) -> Result<Vec<AttackFrame>, AttackError> {
    if scenario.mode != AttackMode::MidOnly {
        return Err(AttackError::WrongMode {
            expected: AttackMode::MidOnly,
            actual: scenario.mode,
        });
    }
    let plan = scenario.plan(topology, profiles)?;
    generate(scenario, &plan, acq, seed)
}

/// Frames with victim MIDs driven at the configured spoof level for each victim.
pub fn inject_mid_voltage_masquerade(
    scenario: &AttackScenario,
    topology: &BusTopology,
    profiles: &[EcuProfile],
    acq: &AcquisitionConfig,
    seed: u64,
) -> Result<Vec<AttackFrame>, AttackError> {
    if scenario.mode != AttackMode::MidVoltage {
        return Err(AttackError::WrongMode {
            expected: AttackMode::MidVoltage,
            actual: scenario.mode,
        });
    }
    let plan = scenario.plan(topology, profiles)?;
    generate(scenario, &plan, acq, seed)
}

/// Dispatches on the scenario mode.
pub fn inject(
    scenario: &AttackScenario,
    topology: &BusTopology,
    profiles: &[EcuProfile],
    acq: &AcquisitionConfig,
    seed: u64,
) -> Result<Vec<AttackFrame>, AttackError> {
    match scenario.mode {
        AttackMode::MidOnly => inject_mid_masquerade(scenario, topology, profiles, acq, seed),
        AttackMode::MidVoltage => {
            inject_mid_voltage_masquerade(scenario, topology, profiles, acq, seed)
        }
    }
}

/// Discrete drive levels an attacker would have to search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub count: usize,
    /// Level offsets from the bottom of the range (volts), `k * resolution`.
    pub levels: Vec<f64>,
}

impl SearchSpace {
    /// Chance that one uniformly random level is the single correct one.
    pub fn guess_probability(&self) -> f64 {
        1.0 / self.count as f64
    }
}

pub fn voltage_search_space(range_v: f64, resolution_v: f64) -> Result<SearchSpace, AttackError> {
    if !(range_v.is_finite() && range_v > 0.0 && resolution_v.is_finite() && resolution_v > 0.0) {
        return Err(AttackError::SearchSpace(format!(
            "range {range_v} V and resolution {resolution_v} V must be positive"
        )));
    }
    // Absorb representation error so that e.g. 1.75 / 0.005 counts as exactly 350 steps.
    let steps = range_v / resolution_v;
    let count = (steps * (1.0 + 1e-12)).floor() as usize;
    if count == 0 {
        return Err(AttackError::SearchSpace(format!(
            "range {range_v} V is smaller than resolution {resolution_v} V"
        )));
    }
    Ok(SearchSpace {
        count,
        levels: (0..count).map(|k| k as f64 * resolution_v).collect(),
    })
}

/// Attacker drive that reproduces the victim's nominal voltage at one sampling point.
pub fn match_single_point(
    topology: &BusTopology,
    attacker_tap: TapId,
    victim_tap: TapId,
    victim_drive_v: f64,
    point: SamplingPoint,
) -> Result<f64, BusError> {
    let target = voltage_at_sp(topology, victim_tap, victim_drive_v, point)?;
    let unit = voltage_at_sp(topology, attacker_tap, 1.0, point)?;
    Ok(target / unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{build_topology, expected_ratio, TopologyConfig};

    fn profile(id: u16, tap: usize, canh: f64) -> EcuProfile {
        EcuProfile {
            ecu_id: EcuId(id),
            tap: TapId(tap),
            owned_mids: [Mid::new(u32::from(id)).unwrap()].into(),
            canh_dom: canh,
            canl_dom: 1.5,
            v_recessive: 2.5,
            period_ms: 10.0,
            jitter_sigma_v: 0.0,
        }
    }

    fn setup() -> (BusTopology, Vec<EcuProfile>) {
        let topo = build_topology(&TopologyConfig::default(), &[1.0, 3.0, 5.0, 7.0]).unwrap();
        let profiles = vec![
            profile(3, 0, 3.2185),
            profile(5, 1, 3.35),
            profile(7, 2, 3.3114),
            profile(8, 3, 3.405),
        ];
        (topo, profiles)
    }

    fn scenario(mode: AttackMode) -> AttackScenario {
        AttackScenario {
            attacker_ecu: EcuId(5),
            attacker_tap_m: None,
            mode,
            victim_mids: vec![Mid::new(3).unwrap(), Mid::new(7).unwrap(), Mid::new(8).unwrap()],
            spoof_differential_v: vec![1.7185, 1.8114, 1.905],
            messages_per_victim: 4,
            periods_ms: vec![10.0, 20.0, 40.0],
        }
    }

    #[test]
    fn mid_only_frames_carry_victim_mid_and_attacker_label() {
        let (topo, profiles) = setup();
        let frames = inject_mid_masquerade(
            &scenario(AttackMode::MidOnly),
            &topo,
            &profiles,
            &AcquisitionConfig::ideal(),
            1,
        )
        .unwrap();
        assert_eq!(frames.len(), 12);
        let gamma = expected_ratio(&topo, TapId(1)).unwrap().gamma();
        for f in &frames {
            assert_eq!(f.capture.ecu_label, EcuId(5));
            assert_eq!(u16::from(f.capture.mid), f.victim.0);
            assert_eq!(f.drive_v, profiles[1].differential());
            let k = f.capture.mask[0];
            let r = f.capture.s_a[k] / f.capture.s_b[k];
            assert!((r - gamma).abs() <= 1e-12 * gamma);
        }
        assert!(frames.windows(2).all(|w| w[0].time_ms <= w[1].time_ms));
    }

    #[test]
    fn spoofed_voltage_keeps_attacker_ratio() {
        let (topo, profiles) = setup();
        let frames = inject_mid_voltage_masquerade(
            &scenario(AttackMode::MidVoltage),
            &topo,
            &profiles,
            &AcquisitionConfig::ideal(),
            2,
        )
        .unwrap();
        let gamma = expected_ratio(&topo, TapId(1)).unwrap().gamma();
        for f in &frames {
            let k = f.capture.mask[0];
            let r = f.capture.s_a[k] / f.capture.s_b[k];
            assert!((r - gamma).abs() <= 1e-12 * gamma);
        }
        let drives: BTreeSet<_> = frames.iter().map(|f| f.drive_v.to_bits()).collect();
        assert_eq!(drives.len(), 3);
    }

    #[test]
    fn spoofing_own_level_matches_mid_only() {
        let (topo, profiles) = setup();
        let mut s = scenario(AttackMode::MidVoltage);
        s.spoof_differential_v = vec![profiles[1].differential(); 3];
        let acq = AcquisitionConfig::default();
        let voltage = inject(&s, &topo, &profiles, &acq, 9).unwrap();
        let mid_only = inject(&scenario(AttackMode::MidOnly), &topo, &profiles, &acq, 9).unwrap();
        assert_eq!(voltage, mid_only);
    }

    #[test]
    fn deterministic_and_exact_counts() {
        let (topo, profiles) = setup();
        let mut s = scenario(AttackMode::MidOnly);
        s.messages_per_victim = 7;
        let acq = AcquisitionConfig::default();
        let a = inject(&s, &topo, &profiles, &acq, 4).unwrap();
        let b = inject(&s, &topo, &profiles, &acq, 4).unwrap();
        assert_eq!(a, b);
        for v in [3, 7, 8] {
            assert_eq!(a.iter().filter(|f| f.victim == EcuId(v)).count(), 7);
        }
        s.victim_mids.clear();
        s.spoof_differential_v.clear();
        assert!(inject(&s, &topo, &profiles, &acq, 4).unwrap().is_empty());
    }

    #[test]
    fn scenario_errors() {
        let (topo, profiles) = setup();
        let acq = AcquisitionConfig::ideal();
        let mut s = scenario(AttackMode::MidOnly);
        s.victim_mids.push(Mid::new(5).unwrap());
        assert!(matches!(
            inject(&s, &topo, &profiles, &acq, 0),
            Err(AttackError::OwnMid { .. })
        ));
        let mut s = scenario(AttackMode::MidVoltage);
        s.spoof_differential_v[1] = 1.437;
        assert!(matches!(
            inject(&s, &topo, &profiles, &acq, 0),
            Err(AttackError::SpoofOutOfRange(_))
        ));
        let mut s = scenario(AttackMode::MidOnly);
        s.attacker_tap_m = Some(1.0);
        assert!(matches!(
            inject(&s, &topo, &profiles, &acq, 0),
            Err(AttackError::Bus(BusError::DuplicateTap { .. }))
        ));
        assert!(matches!(
            inject_mid_masquerade(&scenario(AttackMode::MidVoltage), &topo, &profiles, &acq, 0),
            Err(AttackError::WrongMode { .. })
        ));
    }

    #[test]
    fn extra_node_attacker() {
        let (topo, profiles) = setup();
        let mut s = scenario(AttackMode::MidOnly);
        s.attacker_tap_m = Some(9.0);
        let frames = inject(&s, &topo, &profiles, &AcquisitionConfig::ideal(), 0).unwrap();
        let (extended, tap) = topo.with_extra_tap(9.0).unwrap();
        let gamma = expected_ratio(&extended, tap).unwrap().gamma();
        let k = frames[0].capture.mask[0];
        let r = frames[0].capture.s_a[k] / frames[0].capture.s_b[k];
        assert!((r - gamma).abs() <= 1e-12 * gamma);
    }

    #[test]
    fn search_space_counts() {
        let s = voltage_search_space(1.75, 0.005).unwrap();
        assert_eq!(s.count, 350);
        assert_eq!(s.levels.len(), 350);
        assert!((s.guess_probability() - 0.002857142857).abs() < 1e-12);
        assert_eq!(voltage_search_space(0.005, 0.005).unwrap().count, 1);
        assert_eq!(voltage_search_space(0.3, 0.1).unwrap().count, 3);
        assert!(voltage_search_space(0.0, 0.005).is_err());
        assert!(voltage_search_space(1.0, -0.1).is_err());
        assert!(voltage_search_space(0.004, 0.005).is_err());
    }

    #[test]
    fn single_point_match_leaves_other_point_wrong() {
        let (topo, _) = setup();
        let cfg = TopologyConfig::default();
        let (attacker, victim, drive) = (TapId(1), TapId(2), 1.8114);
        let spoof = match_single_point(&topo, attacker, victim, drive, SamplingPoint::A).unwrap();
        // Inverting the SP_a divider by hand.
        let r_a_victim = cfg.ohms_per_meter * (5.0 - cfg.sp_a_m);
        let r_a_attacker = cfg.ohms_per_meter * (3.0 - cfg.sp_a_m);
        let v_victim = drive * cfg.r_k_ohms / (r_a_victim + cfg.r_k_ohms);
        let oracle = v_victim * (r_a_attacker + cfg.r_k_ohms) / cfg.r_k_ohms;
        assert!((spoof - oracle).abs() < 1e-12);
        let a = voltage_at_sp(&topo, attacker, spoof, SamplingPoint::A).unwrap();
        let b = voltage_at_sp(&topo, attacker, spoof, SamplingPoint::B).unwrap();
        let vb = voltage_at_sp(&topo, victim, drive, SamplingPoint::B).unwrap();
        assert!((a - v_victim).abs() < 1e-12);
        assert!((b - vb).abs() > 1e-6);

        let same = match_single_point(&topo, victim, victim, drive, SamplingPoint::B).unwrap();
        assert!((same - drive).abs() < 1e-12);
    }
}
