//! Single-cell Li-ion pack: coulomb-counted state of charge, piecewise-linear
//! open-circuit voltage, ohmic internal resistance, and a latching protection
//! state machine.

use crate::{Error, Result};

/// Cell voltage at which CC charging hands over to CV.
pub const V_CELL_FULL: f64 = 4.2;
/// Protection trip: over-discharge cutoff at the cell terminal.
pub const V_OVER_DISCHARGE: f64 = 2.4;
/// Protection trip: over-charge cutoff at the cell terminal.
pub const V_OVER_CHARGE: f64 = 4.28;
/// Protection trip: sustained current magnitude limit.
pub const I_OVER_CURRENT: f64 = 6.0;
/// Protection trip: short-circuit current magnitude.
pub const I_SHORT_CIRCUIT: f64 = 12.0;

/// Default open-circuit voltage anchors as (soc, volts) pairs.
pub const DEFAULT_OCV_ANCHORS: [(f64, f64); 5] =
    [(0.0, 3.0), (0.1, 3.5), (0.5, 3.7), (0.9, 4.0), (1.0, 4.2)];

/// Latched fault kinds recognized by the protection IC model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    OverCharge,
    OverDischarge,
    OverCurrent,
    ShortCircuit,
    ReversePolarity,
}

/// Protection FET state plus the latched fault, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtectionState {
    pub discharge_enabled: bool,
    pub charge_enabled: bool,
    pub fault: Fault,
}

impl ProtectionState {
    /// Both FETs closed, no fault.
    pub fn new() -> Self {
        ProtectionState { discharge_enabled: true, charge_enabled: true, fault: Fault::None }
    }
}

impl Default for ProtectionState {
    fn default() -> Self {
        Self::new()
    }
}

/// Direction a SoC clamp acted in during an integration step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocClamp {
    Low,
    High,
}

/// Battery pack state. Sign convention: positive current charges the pack.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryPack {
    pub capacity_ah: f64,
    pub soc: f64,
    pub r_internal_ohm: f64,
    /// (soc, volts) anchors, strictly increasing in both coordinates,
    /// spanning soc 0.0 to 1.0.
    pub ocv_anchors: Vec<(f64, f64)>,
    pub protection: ProtectionState,
}

impl BatteryPack {
    /// Build a pack, validating all structural invariants.
    pub fn new(
        capacity_ah: f64,
        soc: f64,
        r_internal_ohm: f64,
        ocv_anchors: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if !(capacity_ah > 0.0) {
            return Err(Error::config("battery capacity_ah must be > 0"));
        }
        if !(0.0..=1.0).contains(&soc) {
            return Err(Error::config("battery soc_init must be within [0, 1]"));
        }
        if !(r_internal_ohm >= 0.0) {
            return Err(Error::config("battery r_internal_ohm must be >= 0"));
        }
        if ocv_anchors.len() < 2 {
            return Err(Error::config("battery ocv_anchors needs at least 2 points"));
        }
        if ocv_anchors[0].0 != 0.0 || ocv_anchors.last().unwrap().0 != 1.0 {
            return Err(Error::config("battery ocv_anchors must span soc 0.0 to 1.0"));
        }
        for w in ocv_anchors.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                return Err(Error::config(
                    "battery ocv_anchors must be strictly increasing in soc and volts",
                ));
            }
        }
        Ok(BatteryPack {
            capacity_ah,
            soc,
            r_internal_ohm,
            ocv_anchors,
            protection: ProtectionState::new(),
        })
    }

    /// Pack with the default 10 Ah / 50 mΩ parameters at the given SoC.
    pub fn default_pack(soc: f64) -> Result<Self> {
        BatteryPack::new(10.0, soc, 0.05, DEFAULT_OCV_ANCHORS.to_vec())
    }

    /// Open-circuit voltage by piecewise-linear interpolation over the anchors.
    pub fn ocv_from_soc(&self, soc: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&soc) {
            return Err(Error::domain(format!("soc {soc} outside [0, 1]")));
        }
        let a = &self.ocv_anchors;
        for w in a.windows(2) {
            if soc <= w[1].0 {
                let f = (soc - w[0].0) / (w[1].0 - w[0].0);
                return Ok(w[0].1 + f * (w[1].1 - w[0].1));
            }
        }
        Ok(a.last().unwrap().1)
    }

    /// OCV at the pack's current SoC.
    pub fn ocv(&self) -> f64 {
        self.ocv_from_soc(self.soc).expect("stored soc is always in range")
    }

    /// Terminal voltage under load: OCV plus the IR term. Positive current
    /// (charging) raises the terminal above OCV, negative lowers it.
    pub fn terminal_voltage(&self, i_net_a: f64) -> f64 {
        self.ocv() + i_net_a * self.r_internal_ohm
    }

    /// Integrate net current over one step (coulomb counting). Returns the
    /// advanced pack and whether SoC had to be clamped at a rail.
    pub fn step_soc(&self, i_net_a: f64, dt_s: f64) -> (BatteryPack, Option<SocClamp>) {
        let mut next = self.clone();
        let delta = i_net_a * dt_s / (self.capacity_ah * 3600.0);
        let raw = self.soc + delta;
        let mut clamp = None;
        next.soc = if raw < 0.0 {
            clamp = Some(SocClamp::Low);
            0.0
        } else if raw > 1.0 {
            clamp = Some(SocClamp::High);
            1.0
        } else {
            raw
        };
        (next, clamp)
    }

    /// Largest charge current the pack can absorb this step without
    /// overshooting soc = 1.0.
    pub fn charge_headroom_a(&self, dt_s: f64) -> f64 {
        (1.0 - self.soc) * self.capacity_ah * 3600.0 / dt_s
    }

    /// Largest discharge current the pack can source this step without
    /// undershooting soc = 0.0.
    pub fn discharge_available_a(&self, dt_s: f64) -> f64 {
        self.soc * self.capacity_ah * 3600.0 / dt_s
    }

    /// Largest charge current the constant-voltage regulation loop allows:
    /// any more and the terminal (OCV + i·r) would rise past the 4.2 V
    /// cell-full point the CV stage holds.
    pub fn cv_charge_limit_a(&self) -> f64 {
        ((V_CELL_FULL - self.ocv()) / self.r_internal_ohm).max(0.0)
    }

    /// Evaluate the protection comparators against this step's current and
    /// terminal voltage. Faults latch: once set, the state only changes via
    /// [`BatteryPack::reset_protection`]. Severity order: short-circuit,
    /// over-current, then the voltage trips.
    pub fn check_protection(&self, i_a: f64, v_term: f64) -> ProtectionState {
        let mut p = self.protection;
        if p.fault != Fault::None {
            return p;
        }
        let fault = if i_a.abs() >= I_SHORT_CIRCUIT {
            Fault::ShortCircuit
        } else if i_a.abs() > I_OVER_CURRENT {
            Fault::OverCurrent
        } else if v_term >= V_OVER_CHARGE && i_a > 0.0 {
            Fault::OverCharge
        } else if v_term <= V_OVER_DISCHARGE && i_a < 0.0 {
            Fault::OverDischarge
        } else {
            Fault::None
        };
        match fault {
            Fault::None => {}
            Fault::OverCharge => {
                p.charge_enabled = false;
                p.fault = fault;
            }
            Fault::OverDischarge => {
                p.discharge_enabled = false;
                p.fault = fault;
            }
            // Current faults and reverse polarity open both FETs.
            _ => {
                p.charge_enabled = false;
                p.discharge_enabled = false;
                p.fault = fault;
            }
        }
        p
    }

    /// Latch an externally detected fault (e.g. reverse pack polarity).
    pub fn trip_fault(&self, fault: Fault) -> ProtectionState {
        let mut p = self.protection;
        if p.fault == Fault::None && fault != Fault::None {
            p.fault = fault;
            match fault {
                Fault::OverCharge => p.charge_enabled = false,
                Fault::OverDischarge => p.discharge_enabled = false,
                _ => {
                    p.charge_enabled = false;
                    p.discharge_enabled = false;
                }
            }
        }
        p
    }

    /// Clear any latched fault and close both FETs (power-on reset / button).
    pub fn reset_protection(&self) -> ProtectionState {
        ProtectionState::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pack(soc: f64) -> BatteryPack {
        BatteryPack::default_pack(soc).unwrap()
    }

    #[test]
    fn ocv_hits_anchors_exactly() {
        let p = pack(0.5);
        assert_eq!(p.ocv_from_soc(0.0).unwrap(), 3.0);
        assert_eq!(p.ocv_from_soc(0.1).unwrap(), 3.5);
        assert_eq!(p.ocv_from_soc(0.5).unwrap(), 3.7);
        assert_eq!(p.ocv_from_soc(0.9).unwrap(), 4.0);
        assert_eq!(p.ocv_from_soc(1.0).unwrap(), 4.2);
    }

    #[test]
    fn ocv_interpolates_between_anchors() {
        // Halfway between the 0.5 and 0.9 anchors: 3.7 + 0.5 * 0.3.
        let p = pack(0.5);
        assert!((p.ocv_from_soc(0.7).unwrap() - 3.85).abs() < 1e-12);
    }

    #[test]
    fn ocv_rejects_out_of_range_soc() {
        let p = pack(0.5);
        assert!(p.ocv_from_soc(-0.01).is_err());
        assert!(p.ocv_from_soc(1.01).is_err());
    }

    #[test]
    fn terminal_voltage_adds_ir_term() {
        let p = pack(0.5);
        assert!((p.terminal_voltage(2.0) - 3.8).abs() < 1e-12);
        assert!((p.terminal_voltage(-1.0) - 3.65).abs() < 1e-12);
        assert_eq!(p.terminal_voltage(0.0), p.ocv());
    }

    #[test]
    fn step_soc_coulomb_counts() {
        // 2 A for one hour into 10 Ah adds 0.2 of soc.
        let p = pack(0.5);
        let (next, clamp) = p.step_soc(2.0, 3600.0);
        assert!((next.soc - 0.7).abs() < 1e-12);
        assert!(clamp.is_none());
    }

    #[test]
    fn step_soc_clamps_at_rails() {
        let p = pack(0.99);
        let (next, clamp) = p.step_soc(10.0, 3600.0);
        assert_eq!(next.soc, 1.0);
        assert_eq!(clamp, Some(SocClamp::High));

        let p = pack(0.01);
        let (next, clamp) = p.step_soc(-10.0, 3600.0);
        assert_eq!(next.soc, 0.0);
        assert_eq!(clamp, Some(SocClamp::Low));
    }

    #[test]
    fn headroom_limits_match_capacity() {
        let p = pack(0.95);
        // 5% of 10 Ah is 1800 C; over a 1 s step that is 1800 A of headroom.
        assert!((p.charge_headroom_a(1.0) - 1800.0).abs() < 1e-9);
        assert!((p.discharge_available_a(1.0) - 34200.0).abs() < 1e-6);
    }

    #[test]
    fn over_discharge_trips_and_latches() {
        let mut p = pack(0.0);
        let prot = p.check_protection(-0.5, 2.4);
        assert_eq!(prot.fault, Fault::OverDischarge);
        assert!(!prot.discharge_enabled);
        assert!(prot.charge_enabled);

        // Latched: a healthy-looking step does not clear it.
        p.protection = prot;
        let again = p.check_protection(0.0, 3.7);
        assert_eq!(again, prot);
    }

    #[test]
    fn over_discharge_needs_discharge_current() {
        // Low terminal voltage alone (e.g. during charge ramp) must not trip.
        let p = pack(0.0);
        let prot = p.check_protection(0.1, 2.4);
        assert_eq!(prot.fault, Fault::None);
    }

    #[test]
    fn over_charge_trips() {
        let p = pack(1.0);
        let prot = p.check_protection(2.0, 4.28);
        assert_eq!(prot.fault, Fault::OverCharge);
        assert!(!prot.charge_enabled);
        assert!(prot.discharge_enabled);
    }

    #[test]
    fn current_faults_by_magnitude() {
        let p = pack(0.5);
        let prot = p.check_protection(-6.5, 3.4);
        assert_eq!(prot.fault, Fault::OverCurrent);
        assert!(!prot.discharge_enabled && !prot.charge_enabled);

        let prot = p.check_protection(12.5, 4.0);
        assert_eq!(prot.fault, Fault::ShortCircuit);
    }

    #[test]
    fn reset_restores_both_fets() {
        let mut p = pack(0.5);
        p.protection = p.check_protection(-13.0, 3.0);
        assert_ne!(p.protection.fault, Fault::None);
        assert_eq!(p.reset_protection(), ProtectionState::new());
    }

    #[test]
    fn constructor_rejects_bad_anchors() {
        assert!(BatteryPack::new(10.0, 0.5, 0.05, vec![(0.0, 3.0)]).is_err());
        assert!(BatteryPack::new(10.0, 0.5, 0.05, vec![(0.1, 3.0), (1.0, 4.2)]).is_err());
        assert!(BatteryPack::new(10.0, 0.5, 0.05, vec![(0.0, 3.0), (0.5, 2.9), (1.0, 4.2)])
            .is_err());
        assert!(BatteryPack::new(10.0, 1.5, 0.05, DEFAULT_OCV_ANCHORS.to_vec()).is_err());
        assert!(BatteryPack::new(-1.0, 0.5, 0.05, DEFAULT_OCV_ANCHORS.to_vec()).is_err());
    }
}
