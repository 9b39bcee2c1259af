//! Per-step event flags and their CSV token names.

use crate::{Error, Result};

/// Compact set of events raised during one simulation step.
///
/// Serialized in the CSV `events` column as `;`-joined tokens in a fixed
/// order (empty string when no events fired), so output stays byte-stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventSet(u32);

/// One event kind; the discriminant is the bit position in [`EventSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Event {
    RtcPulse = 0,
    LatchOn,
    LatchOff,
    BootStart,
    CaptureStart,
    CaptureDone,
    ShutdownReq,
    ChargeFull,
    Recharge,
    Brownout,
    LoadShed,
    RegulatorDropout,
    OverDischarge,
    OverCharge,
    OverCurrent,
    ShortCircuit,
    ReversePolarity,
    SocClampLow,
    SocClampHigh,
    RtcPowerLost,
}

/// All events in serialization order, paired with their CSV tokens.
const TOKENS: [(Event, &str); 20] = [
    (Event::RtcPulse, "RTC_PULSE"),
    (Event::LatchOn, "LATCH_ON"),
    (Event::LatchOff, "LATCH_OFF"),
    (Event::BootStart, "BOOT_START"),
    (Event::CaptureStart, "CAPTURE_START"),
    (Event::CaptureDone, "CAPTURE_DONE"),
    (Event::ShutdownReq, "SHUTDOWN_REQ"),
    (Event::ChargeFull, "CHARGE_FULL"),
    (Event::Recharge, "RECHARGE"),
    (Event::Brownout, "BROWNOUT"),
    (Event::LoadShed, "LOAD_SHED"),
    (Event::RegulatorDropout, "REGULATOR_DROPOUT"),
    (Event::OverDischarge, "OVER_DISCHARGE"),
    (Event::OverCharge, "OVER_CHARGE"),
    (Event::OverCurrent, "OVER_CURRENT"),
    (Event::ShortCircuit, "SHORT_CIRCUIT"),
    (Event::ReversePolarity, "REVERSE_POLARITY"),
    (Event::SocClampLow, "SOC_CLAMP_LOW"),
    (Event::SocClampHigh, "SOC_CLAMP_HIGH"),
    (Event::RtcPowerLost, "RTC_POWER_LOST"),
];

impl EventSet {
    /// Empty set.
    pub const EMPTY: EventSet = EventSet(0);

    /// True when no event is set.
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Add one event.
    pub fn insert(&mut self, e: Event) {
        self.0 |= 1 << e as u32;
    }

    /// Set membership test.
    pub fn contains(self, e: Event) -> bool {
        self.0 & (1 << e as u32) != 0
    }

    /// Union of two sets.
    pub fn union(self, other: EventSet) -> EventSet {
        EventSet(self.0 | other.0)
    }

    /// Render as the CSV token string (`;`-joined, fixed order).
    pub fn to_token_string(self) -> String {
        let mut out = String::new();
        for (e, tok) in TOKENS {
            if self.contains(e) {
                if !out.is_empty() {
                    out.push(';');
                }
                out.push_str(tok);
            }
        }
        out
    }

    /// Parse a CSV token string produced by [`EventSet::to_token_string`].
    pub fn parse_token_string(s: &str) -> Result<EventSet> {
        let mut set = EventSet::EMPTY;
        if s.is_empty() {
            return Ok(set);
        }
        for tok in s.split(';') {
            let found = TOKENS.iter().find(|(_, t)| *t == tok);
            match found {
                Some((e, _)) => set.insert(*e),
                None => return Err(Error::csv(format!("unknown event token '{tok}'"))),
            }
        }
        Ok(set)
    }
}
