//! Masquerade detection: compare the classifier's sender against the MID owner.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bus::{BusError, EcuId, EcuProfile};
use crate::can::Mid;

/// Which ECU is allowed to send each MID.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MidOwnershipMap(pub BTreeMap<Mid, EcuId>);

impl MidOwnershipMap {
    pub fn from_profiles(profiles: &[EcuProfile]) -> Result<Self, BusError> {
        let mut map = BTreeMap::new();
        for p in profiles {
            for &mid in &p.owned_mids {
                if let Some(prev) = map.insert(mid, p.ecu_id) {
                    return Err(BusError::Profile {
                        ecu: p.ecu_id.0,
                        reason: format!("MID {mid} already owned by {prev}"),
                    });
                }
            }
        }
        Ok(MidOwnershipMap(map))
    }

    pub fn owner(&self, mid: Mid) -> Option<EcuId> {
        self.0.get(&mid).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Benign,
    MasqueradeAlert,
    /// No ECU owns the MID; the frame is flagged without a claimed sender.
    UnknownMid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub predicted: EcuId,
    pub claimed: Option<EcuId>,
    pub decision: Decision,
}

impl Verdict {
    pub fn is_alert(&self) -> bool {
        self.decision != Decision::Benign
    }
}

pub fn detect_masquerade(predicted: EcuId, mid: Mid, map: &MidOwnershipMap) -> Verdict {
    let claimed = map.owner(mid);
    let decision = match claimed {
        None => Decision::UnknownMid,
        Some(owner) if owner == predicted => Decision::Benign,
        Some(_) => Decision::MasqueradeAlert,
    };
    Verdict {
        predicted,
        claimed,
        decision,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map() -> MidOwnershipMap {
        MidOwnershipMap((1..=5).map(|i| (Mid::new(i).unwrap(), EcuId(i as u16))).collect())
    }

    #[test]
    fn unknown_mid_is_flagged() {
        let v = detect_masquerade(EcuId(1), Mid::new(0x7FF).unwrap(), &map());
        assert_eq!(v.decision, Decision::UnknownMid);
        assert_eq!(v.claimed, None);
    }

    proptest! {
        #[test]
        fn alert_iff_sender_differs_from_owner(pred in 1u16..=5, mid in 1u32..=5) {
            let v = detect_masquerade(EcuId(pred), Mid::new(mid).unwrap(), &map());
            prop_assert_eq!(v.claimed, Some(EcuId(mid as u16)));
            prop_assert_eq!(v.is_alert(), u32::from(pred) != mid);
        }
    }
}
