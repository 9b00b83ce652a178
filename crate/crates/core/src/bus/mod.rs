//! Resistive two-point model of the CAN channel.
//!
//! The bus is a linear trunk with sampling points `SP_a` and `SP_b`. Beyond
//! each sampling point the remaining line and its load are lumped into a tail
//! resistance (`R_K` beyond `SP_a`, `R_L` beyond `SP_b`). A transmitting ECU at
//! a tap acts as an ideal differential source; the voltage seen at each
//! sampling point is a plain divider between the wire from the tap to that
//! point and the corresponding tail:
//!
//! ```text
//! V_a = V * R_K / (R_a + R_K)        V_b = V * R_L / (R_b + R_L)
//! ratio = V_a / V_b = (R_K / R_L) * (R_b + R_L) / (R_a + R_K)
//! ```
//!
//! The ratio depends only on where the transmitter sits, not on how hard it
//! drives the bus. Voltages are differential (CANH - CANL).

mod nodal;
mod profile;

pub use nodal::{nodal_solve, NetworkNode, NodalSolution, Resistor, ResistorNetwork};
pub use profile::{
    differential_from_canh, validate_profiles, EcuId, EcuProfile, CANH_DOMINANT_RANGE,
    CANL_DOMINANT_RANGE, DIFFERENTIAL_DOMINANT_RANGE, NOMINAL_CANL_DOMINANT, RECESSIVE_RANGE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BusError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("sampling points must satisfy 0 <= sp_a ({sp_a}) < sp_b ({sp_b}) <= trunk length ({trunk})")]
    SamplingPoints { sp_a: f64, sp_b: f64, trunk: f64 },
    #[error("tap at {0} m lies outside the span between the sampling points")]
    TapOutOfRange(f64),
    #[error("taps {first} and {second} share the same position ({position} m)")]
    DuplicateTap {
        first: usize,
        second: usize,
        position: f64,
    },
    #[error("unknown tap index {0}")]
    UnknownTap(usize),
    #[error("resistor network is singular: {0}")]
    Singular(String),
    #[error("resistance scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("ECU {ecu}: {reason}")]
    Profile { ecu: u16, reason: String },
}

/// Raw topology description, as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub ohms_per_meter: f64,
    pub trunk_length_m: f64,
    pub sp_a_m: f64,
    pub sp_b_m: f64,
    pub r_k_ohms: f64,
    pub r_l_ohms: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            ohms_per_meter: 0.025,
            trunk_length_m: 10.0,
            sp_a_m: 0.2,
            sp_b_m: 9.8,
            r_k_ohms: 120.0,
            r_l_ohms: 120.0,
        }
    }
}

/// Index of an ECU tap within a [`BusTopology`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TapId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingPoint {
    A,
    B,
}

/// Validated, immutable linear trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct BusTopology {
    ohms_per_meter: f64,
    trunk_length_m: f64,
    sp_a_m: f64,
    sp_b_m: f64,
    r_k: f64,
    r_l: f64,
    taps_m: Vec<f64>,
}

const POSITION_EPS: f64 = 1e-9;

fn positive(name: &'static str, value: f64) -> Result<f64, BusError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(BusError::NonPositive { name, value })
    }
}

pub fn build_topology(config: &TopologyConfig, taps_m: &[f64]) -> Result<BusTopology, BusError> {
    let ohms_per_meter = positive("ohms_per_meter", config.ohms_per_meter)?;
    let trunk = positive("trunk_length_m", config.trunk_length_m)?;
    let r_k = positive("r_k_ohms", config.r_k_ohms)?;
    let r_l = positive("r_l_ohms", config.r_l_ohms)?;
    let (sp_a, sp_b) = (config.sp_a_m, config.sp_b_m);
    if !(sp_a.is_finite() && sp_b.is_finite() && 0.0 <= sp_a && sp_a < sp_b && sp_b <= trunk) {
        return Err(BusError::SamplingPoints {
            sp_a,
            sp_b,
            trunk,
        });
    }
    for &x in taps_m {
        if !(x.is_finite() && sp_a <= x && x <= sp_b) {
            return Err(BusError::TapOutOfRange(x));
        }
    }
    // On a linear trunk two taps see the same (R_a, R_b) pair iff they coincide.
    let mut order: Vec<usize> = (0..taps_m.len()).collect();
    order.sort_by(|&i, &j| taps_m[i].total_cmp(&taps_m[j]));
    for pair in order.windows(2) {
        let (i, j) = (pair[0], pair[1]);
        if (taps_m[j] - taps_m[i]).abs() < POSITION_EPS {
            return Err(BusError::DuplicateTap {
                first: i.min(j),
                second: i.max(j),
                position: taps_m[i],
            });
        }
    }
    Ok(BusTopology {
        ohms_per_meter,
        trunk_length_m: trunk,
        sp_a_m: sp_a,
        sp_b_m: sp_b,
        r_k,
        r_l,
        taps_m: taps_m.to_vec(),
    })
}

impl BusTopology {
    pub fn ohms_per_meter(&self) -> f64 {
        self.ohms_per_meter
    }

    pub fn trunk_length_m(&self) -> f64 {
        self.trunk_length_m
    }

    pub fn sp_positions(&self) -> (f64, f64) {
        (self.sp_a_m, self.sp_b_m)
    }

    pub fn tails(&self) -> (f64, f64) {
        (self.r_k, self.r_l)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps_m
    }

    pub fn tap_position(&self, tap: TapId) -> Result<f64, BusError> {
        self.taps_m
            .get(tap.0)
            .copied()
            .ok_or(BusError::UnknownTap(tap.0))
    }

    /// Wire resistance from the tap to `SP_a` and to `SP_b`.
    pub fn path_resistances(&self, tap: TapId) -> Result<(f64, f64), BusError> {
        let x = self.tap_position(tap)?;
        Ok((
            self.ohms_per_meter * (x - self.sp_a_m),
            self.ohms_per_meter * (self.sp_b_m - x),
        ))
    }

    /// Copy of this topology with one more tap appended.
    pub fn with_extra_tap(&self, position_m: f64) -> Result<(BusTopology, TapId), BusError> {
        let mut taps = self.taps_m.clone();
        taps.push(position_m);
        let config = TopologyConfig {
            ohms_per_meter: self.ohms_per_meter,
            trunk_length_m: self.trunk_length_m,
            sp_a_m: self.sp_a_m,
            sp_b_m: self.sp_b_m,
            r_k_ohms: self.r_k,
            r_l_ohms: self.r_l,
        };
        let topo = build_topology(&config, &taps)?;
        Ok((topo, TapId(taps.len() - 1)))
    }

    /// Every wire and tail resistance multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> Result<BusTopology, BusError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(BusError::InvalidScale(scale));
        }
        Ok(BusTopology {
            ohms_per_meter: self.ohms_per_meter * scale,
            r_k: self.r_k * scale,
            r_l: self.r_l * scale,
            ..self.clone()
        })
    }
}

/// Divider output at one sampling point for a transmitter at `tap`.
pub fn voltage_at_sp(
    topology: &BusTopology,
    tap: TapId,
    drive_v: f64,
    point: SamplingPoint,
) -> Result<f64, BusError> {
    let (r_a, r_b) = topology.path_resistances(tap)?;
    let (path, tail) = match point {
        SamplingPoint::A => (r_a, topology.r_k),
        SamplingPoint::B => (r_b, topology.r_l),
    };
    Ok(drive_v * tail / (path + tail))
}

/// Dimensionless two-point ratio `V_a / V_b` for a transmitter.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct RatioValue(pub f64);

impl RatioValue {
    pub fn gamma(self) -> f64 {
        self.0
    }
}

pub fn expected_ratio(topology: &BusTopology, tap: TapId) -> Result<RatioValue, BusError> {
    let (r_a, r_b) = topology.path_resistances(tap)?;
    let (r_k, r_l) = (topology.r_k, topology.r_l);
    Ok(RatioValue((r_k / r_l) * (r_b + r_l) / (r_a + r_k)))
}

/// Uniform environmental change: all resistances scaled by `resistance_scale`,
/// every ECU's differential drive shifted by `drive_drift_v`.
pub fn apply_environment(
    topology: &BusTopology,
    resistance_scale: f64,
    profiles: &[EcuProfile],
    drive_drift_v: f64,
) -> Result<(BusTopology, Vec<EcuProfile>), BusError> {
    let topo = topology.scaled(resistance_scale)?;
    let profiles = profiles
        .iter()
        .map(|p| p.with_drive_shift(drive_drift_v))
        .collect();
    Ok((topo, profiles))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ten_taps() -> Vec<f64> {
        (0..10).map(|i| 0.5 + i as f64).collect()
    }

    /// Topology with R_a and R_b chosen directly (1 ohm per meter).
    fn manual(r_a: f64, r_b: f64, r_k: f64, r_l: f64) -> BusTopology {
        let cfg = TopologyConfig {
            ohms_per_meter: 1.0,
            trunk_length_m: r_a + r_b,
            sp_a_m: 0.0,
            sp_b_m: r_a + r_b,
            r_k_ohms: r_k,
            r_l_ohms: r_l,
        };
        build_topology(&cfg, &[r_a]).unwrap()
    }

    #[test]
    fn default_testbed_is_valid() {
        let topo = build_topology(&TopologyConfig::default(), &ten_taps()).unwrap();
        assert_eq!(topo.taps().len(), 10);
    }

    #[test]
    fn rejects_bad_layouts() {
        let cfg = TopologyConfig::default();
        assert!(matches!(
            build_topology(&cfg, &[1.0, 2.0, 1.0]),
            Err(BusError::DuplicateTap { first: 0, second: 2, .. })
        ));
        let same = TopologyConfig {
            sp_b_m: 0.2,
            ..cfg.clone()
        };
        assert!(matches!(build_topology(&same, &[]), Err(BusError::SamplingPoints { .. })));
        let neg = TopologyConfig {
            r_k_ohms: 0.0,
            ..cfg.clone()
        };
        assert!(matches!(build_topology(&neg, &[]), Err(BusError::NonPositive { .. })));
        assert_eq!(build_topology(&cfg, &[9.9]), Err(BusError::TapOutOfRange(9.9)));
    }

    #[test]
    fn divider_worked_example() {
        let topo = manual(10.0, 30.0, 120.0, 120.0);
        let v = voltage_at_sp(&topo, TapId(0), 3.5, SamplingPoint::A).unwrap();
        assert!((v - 3.5 * 120.0 / 130.0).abs() < 1e-12);
        assert!((v - 3.230769).abs() < 1e-6);
        let doubled = voltage_at_sp(&topo, TapId(0), 7.0, SamplingPoint::A).unwrap();
        assert_eq!(doubled, 2.0 * v);
        assert_eq!(
            voltage_at_sp(&topo, TapId(3), 3.5, SamplingPoint::A),
            Err(BusError::UnknownTap(3))
        );
    }

    #[test]
    fn zero_path_passes_voltage_through() {
        let topo = manual(0.0, 30.0, 120.0, 120.0);
        assert_eq!(voltage_at_sp(&topo, TapId(0), 3.5, SamplingPoint::A).unwrap(), 3.5);
    }

    #[test]
    fn ratio_worked_examples() {
        let g = expected_ratio(&manual(10.0, 30.0, 120.0, 120.0), TapId(0)).unwrap();
        assert!((g.gamma() - 150.0 / 130.0).abs() < 1e-15);
        assert!((g.gamma() - 1.153846).abs() < 1e-6);
        let sym = expected_ratio(&manual(20.0, 20.0, 120.0, 120.0), TapId(0)).unwrap();
        assert_eq!(sym.gamma(), 1.0);
        let scaled = expected_ratio(&manual(11.0, 33.0, 132.0, 132.0), TapId(0)).unwrap();
        assert!((scaled.gamma() - g.gamma()).abs() < 1e-14);
    }

    #[test]
    fn ratio_is_monotone_along_the_trunk() {
        let topo = build_topology(&TopologyConfig::default(), &ten_taps()).unwrap();
        let gammas: Vec<f64> = (0..10)
            .map(|i| expected_ratio(&topo, TapId(i)).unwrap().gamma())
            .collect();
        assert!(gammas.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn environment_keeps_ratio() {
        let topo = build_topology(&TopologyConfig::default(), &ten_taps()).unwrap();
        let (hot, _) = apply_environment(&topo, 1.2, &[], 0.0).unwrap();
        for i in 0..10 {
            let before = expected_ratio(&topo, TapId(i)).unwrap().gamma();
            let after = expected_ratio(&hot, TapId(i)).unwrap().gamma();
            assert!((before - after).abs() <= 1e-12);
            let va = voltage_at_sp(&topo, TapId(i), 2.0, SamplingPoint::A).unwrap();
            let va_hot = voltage_at_sp(&hot, TapId(i), 2.0, SamplingPoint::A).unwrap();
            assert!((va - va_hot).abs() <= 1e-12);
        }
        assert_eq!(
            apply_environment(&topo, 0.0, &[], 0.0).unwrap_err(),
            BusError::InvalidScale(0.0)
        );
    }
}
