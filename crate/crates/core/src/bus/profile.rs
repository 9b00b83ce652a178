use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::{BusError, TapId};
use crate::can::Mid;

/// Dominant CANH output tolerance (volts).
pub const CANH_DOMINANT_RANGE: RangeInclusive<f64> = 2.75..=4.5;
/// Dominant CANL output tolerance (volts).
pub const CANL_DOMINANT_RANGE: RangeInclusive<f64> = 0.5..=2.25;
/// Dominant differential output tolerance (volts).
pub const DIFFERENTIAL_DOMINANT_RANGE: RangeInclusive<f64> = 1.5..=3.0;
/// Recessive line level (volts).
pub const RECESSIVE_RANGE: RangeInclusive<f64> = 2.0..=3.0;
/// Nominal dominant CANL level (volts).
pub const NOMINAL_CANL_DOMINANT: f64 = 1.5;

/// Differential drive of a transmitter whose dominant CANH sits at `canh_v`
/// while CANL stays at its nominal dominant level.
pub fn differential_from_canh(canh_v: f64) -> f64 {
    canh_v - NOMINAL_CANL_DOMINANT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EcuId(pub u16);

impl fmt::Display for EcuId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ECU{}", self.0)
    }
}

/// Electrical characteristics and bus role of one ECU.
#[derive(Debug, Clone, PartialEq)]
pub struct EcuProfile {
    pub ecu_id: EcuId,
    pub tap: TapId,
    pub owned_mids: BTreeSet<Mid>,
    pub canh_dom: f64,
    pub canl_dom: f64,
    pub v_recessive: f64,
    pub period_ms: f64,
    /// Per-frame standard deviation of the differential drive (volts).
    pub jitter_sigma_v: f64,
}

impl EcuProfile {
    pub fn differential(&self) -> f64 {
        self.canh_dom - self.canl_dom
    }

    pub fn validate(&self) -> Result<(), BusError> {
        let fail = |reason: String| BusError::Profile {
            ecu: self.ecu_id.0,
            reason,
        };
        if !CANH_DOMINANT_RANGE.contains(&self.canh_dom) {
            return Err(fail(format!("canh_dom {} outside [2.75, 4.5] V", self.canh_dom)));
        }
        if !CANL_DOMINANT_RANGE.contains(&self.canl_dom) {
            return Err(fail(format!("canl_dom {} outside [0.5, 2.25] V", self.canl_dom)));
        }
        if !DIFFERENTIAL_DOMINANT_RANGE.contains(&self.differential()) {
            return Err(fail(format!(
                "dominant differential {} outside [1.5, 3.0] V",
                self.differential()
            )));
        }
        if !RECESSIVE_RANGE.contains(&self.v_recessive) {
            return Err(fail(format!("v_recessive {} outside [2.0, 3.0] V", self.v_recessive)));
        }
        if !(self.period_ms.is_finite() && self.period_ms > 0.0) {
            return Err(fail(format!("period {} ms must be positive", self.period_ms)));
        }
        if !(self.jitter_sigma_v.is_finite() && self.jitter_sigma_v >= 0.0) {
            return Err(fail(format!("jitter {} must be non-negative", self.jitter_sigma_v)));
        }
        Ok(())
    }

    /// Shifts the differential drive by `drift_v`, split evenly between the lines.
    pub fn with_drive_shift(&self, drift_v: f64) -> EcuProfile {
        EcuProfile {
            canh_dom: self.canh_dom + drift_v / 2.0,
            canl_dom: self.canl_dom - drift_v / 2.0,
            ..self.clone()
        }
    }
}

/// Checks every profile plus the cross-ECU rules: unique ids, unique taps,
/// disjoint MID ownership.
pub fn validate_profiles(profiles: &[EcuProfile]) -> Result<(), BusError> {
    let mut ids = BTreeSet::new();
    let mut taps = BTreeMap::new();
    let mut owners: BTreeMap<Mid, EcuId> = BTreeMap::new();
    for p in profiles {
        p.validate()?;
        if !ids.insert(p.ecu_id) {
            return Err(BusError::Profile {
                ecu: p.ecu_id.0,
                reason: "duplicate ECU id".into(),
            });
        }
        if let Some(other) = taps.insert(p.tap, p.ecu_id) {
            return Err(BusError::Profile {
                ecu: p.ecu_id.0,
                reason: format!("shares tap {} with {other}", p.tap.0),
            });
        }
        for &mid in &p.owned_mids {
            if let Some(other) = owners.insert(mid, p.ecu_id) {
                return Err(BusError::Profile {
                    ecu: p.ecu_id.0,
                    reason: format!("MID {mid} already owned by {other}"),
                });
            }
        }
    }
    Ok(())
}
