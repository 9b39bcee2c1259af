//! Solar harvesting chain: panel, irradiance profiles, input-source
//! selection, and the solar CC/CV charger with constant-voltage MPPT.

use crate::battery::{BatteryPack, V_CELL_FULL};
use crate::powerpath::{solve_node, NodeInput, NodeOutcome};
use crate::{Error, Result};

/// Fraction of rated panel power captured by constant-voltage MPPT.
pub const K_MPPT_DEFAULT: f64 = 0.85;
/// Solar charger conversion efficiency.
pub const ETA_SOLAR_DEFAULT: f64 = 0.94;
/// CV taper time constant.
pub const TAU_CV_DEFAULT_S: f64 = 1800.0;
/// Input power below which the charger sits idle.
pub const P_MIN_DEFAULT_W: f64 = 0.05;
/// OCV at which a Full charger re-enters CC.
pub const V_RECHARGE: f64 = 4.10;
/// CV terminates when the commanded current falls to this fraction of the
/// CC setpoint.
pub const CV_TERMINATION_FRACTION: f64 = 0.1;

/// Photovoltaic panel nameplate parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarPanel {
    pub p_rated_w: f64,
    pub v_oc: f64,
    pub v_mpp: f64,
    /// MPPT capture fraction applied to rated power.
    pub k_mppt: f64,
}

impl SolarPanel {
    /// Panel with validated nameplate values.
    pub fn new(p_rated_w: f64, v_oc: f64, v_mpp: f64, k_mppt: f64) -> Result<Self> {
        if !(p_rated_w > 0.0) {
            return Err(Error::config("panel p_rated_w must be > 0"));
        }
        if !(v_mpp > 0.0 && v_oc > v_mpp) {
            return Err(Error::config("panel requires 0 < v_mpp < v_oc"));
        }
        if !(0.0 < k_mppt && k_mppt <= 1.0) {
            return Err(Error::config("panel k_mppt must be in (0, 1]"));
        }
        Ok(SolarPanel { p_rated_w, v_oc, v_mpp, k_mppt })
    }
}

/// Normalized irradiance (0..1 of peak) over the day.
#[derive(Debug, Clone, PartialEq)]
pub enum IrradianceProfile {
    /// Half-sine between sunrise and sunset, zero at night.
    ClearSky { sunrise_s: f64, sunset_s: f64, peak_fraction: f64 },
    /// Piecewise-linear trace of (time-of-day s, fraction) points; zero
    /// outside the covered range.
    Trace { points: Vec<(f64, f64)> },
}

impl IrradianceProfile {
    /// Validate structural requirements.
    pub fn validate(&self) -> Result<()> {
        match self {
            IrradianceProfile::ClearSky { sunrise_s, sunset_s, peak_fraction } => {
                if !(sunrise_s < sunset_s) {
                    return Err(Error::config("irradiance sunrise must precede sunset"));
                }
                if !(0.0..=1.0).contains(peak_fraction) {
                    return Err(Error::config("irradiance peak_fraction must be in [0, 1]"));
                }
            }
            IrradianceProfile::Trace { points } => {
                if points.len() < 2 {
                    return Err(Error::config("irradiance trace needs at least 2 points"));
                }
                for w in points.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return Err(Error::config("irradiance trace times must increase"));
                    }
                }
                if points.iter().any(|(_, g)| !(0.0..=1.0).contains(g)) {
                    return Err(Error::config("irradiance trace fractions must be in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Irradiance fraction at a time of day in seconds.
    pub fn at(&self, tod_s: f64) -> f64 {
        match self {
            IrradianceProfile::ClearSky { sunrise_s, sunset_s, peak_fraction } => {
                if tod_s < *sunrise_s || tod_s > *sunset_s {
                    0.0
                } else {
                    let phase = (tod_s - sunrise_s) / (sunset_s - sunrise_s);
                    peak_fraction * (std::f64::consts::PI * phase).sin()
                }
            }
            IrradianceProfile::Trace { points } => {
                if tod_s < points[0].0 || tod_s > points.last().unwrap().0 {
                    return 0.0;
                }
                for w in points.windows(2) {
                    if tod_s <= w[1].0 {
                        let f = (tod_s - w[0].0) / (w[1].0 - w[0].0);
                        return w[0].1 + f * (w[1].1 - w[0].1);
                    }
                }
                0.0
            }
        }
    }
}

/// Raw power the panel+MPPT stage can offer at irradiance fraction `g`.
pub fn pv_available_power(panel: &SolarPanel, g: f64) -> f64 {
    g.clamp(0.0, 1.0) * panel.p_rated_w * panel.k_mppt
}

/// Which charging input is in control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSource {
    None,
    Solar,
    Usb,
}

/// Input auto-switch: USB preempts solar when both are present.
pub fn select_input(solar_present: bool, usb_present: bool) -> InputSource {
    if usb_present {
        InputSource::Usb
    } else if solar_present {
        InputSource::Solar
    } else {
        InputSource::None
    }
}

/// Solar charger operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolarMode {
    Idle,
    Cc,
    Cv,
    Full,
}

/// Solar charger status LED.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolarLed {
    Off,
    Red,
    Green,
}

/// Solar charger state machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarChargerState {
    pub mode: SolarMode,
    pub led: SolarLed,
    /// CC setpoint selected by the hardware jumper: 2 A default, 3 A option.
    pub i_setpoint_a: f64,
    /// Conversion efficiency, input to battery node.
    pub eta: f64,
    pub tau_cv_s: f64,
    pub p_min_w: f64,
    /// Seconds since CV entry; drives the taper schedule.
    pub cv_elapsed_s: f64,
}

impl SolarChargerState {
    /// Fresh charger; `jumper_3a` selects the elevated 3 A setpoint.
    pub fn new(jumper_3a: bool, eta: f64, tau_cv_s: f64, p_min_w: f64) -> Result<Self> {
        if !(0.0 < eta && eta <= 1.0) {
            return Err(Error::config("solar charger eta must be in (0, 1]"));
        }
        if !(tau_cv_s > 0.0) {
            return Err(Error::config("solar charger tau_cv_s must be > 0"));
        }
        if !(p_min_w >= 0.0) {
            return Err(Error::config("solar charger p_min_w must be >= 0"));
        }
        Ok(SolarChargerState {
            mode: SolarMode::Idle,
            led: SolarLed::Off,
            i_setpoint_a: if jumper_3a { 3.0 } else { 2.0 },
            eta,
            tau_cv_s,
            p_min_w,
            cv_elapsed_s: 0.0,
        })
    }

    /// Charger with all default knobs.
    pub fn default_charger() -> Self {
        Self::new(false, ETA_SOLAR_DEFAULT, TAU_CV_DEFAULT_S, P_MIN_DEFAULT_W).unwrap()
    }

    /// Force the charger idle (input deselected or absent).
    pub fn deselected(&self) -> Self {
        let mut next = *self;
        next.mode = SolarMode::Idle;
        next.led = SolarLed::Off;
        next.cv_elapsed_s = 0.0;
        next
    }
}

/// Additional sinks hanging off the battery node during a charger step.
#[derive(Debug, Clone, Copy)]
pub struct NodeSinks {
    pub i_fixed_a: f64,
    pub p_boost_w: f64,
    /// Discharge current the pack can actually supply this step.
    pub i_discharge_available_a: f64,
}

impl NodeSinks {
    /// No load on the node, pack treated as inexhaustible this step.
    pub fn none() -> Self {
        NodeSinks { i_fixed_a: 0.0, p_boost_w: 0.0, i_discharge_available_a: f64::INFINITY }
    }
}

/// Everything a charger step reports back.
#[derive(Debug, Clone, Copy)]
pub struct ChargerStepOut {
    pub node: NodeOutcome,
    /// Raw power drawn from the input, before conversion efficiency.
    pub p_raw_drawn_w: f64,
    /// Conversion loss inside the charger this step.
    pub p_loss_w: f64,
    pub entered_full: bool,
    pub recharge: bool,
}

/// Advance the solar charger one step: pick the mode, command a charge
/// current, solve the battery node (loads are served from the input before
/// the battery), and run the mode transitions against the solved voltage.
pub fn solar_charger_step(
    st: &SolarChargerState,
    p_pv_w: f64,
    pack: &BatteryPack,
    sinks: NodeSinks,
    dt_s: f64,
    reverse_fault: bool,
) -> (SolarChargerState, ChargerStepOut) {
    let mut next = *st;
    let powered = !reverse_fault && p_pv_w >= st.p_min_w;

    // Entry transitions.
    if !powered {
        next.mode = SolarMode::Idle;
        next.cv_elapsed_s = 0.0;
    } else {
        match next.mode {
            SolarMode::Idle => {
                next.mode = SolarMode::Cc;
                next.cv_elapsed_s = 0.0;
            }
            SolarMode::Full => {
                if pack.ocv() <= V_RECHARGE {
                    next.mode = SolarMode::Cc;
                    next.cv_elapsed_s = 0.0;
                }
            }
            _ => {}
        }
    }
    let recharge = st.mode == SolarMode::Full && next.mode == SolarMode::Cc;

    // Commanded charge current for this step: the mode schedule, capped by
    // the voltage-regulation loop (terminal held at the 4.2 V cell-full
    // point) and by the charge the pack can still absorb.
    let headroom = pack.charge_headroom_a(dt_s);
    let schedule = match next.mode {
        SolarMode::Idle | SolarMode::Full => 0.0,
        SolarMode::Cc => next.i_setpoint_a,
        SolarMode::Cv => next.i_setpoint_a * (-next.cv_elapsed_s / next.tau_cv_s).exp(),
    };
    let i_limit = schedule.min(pack.cv_charge_limit_a()).min(headroom);

    let p_node = if powered { p_pv_w * next.eta } else { 0.0 };
    let node = solve_node(
        pack,
        &NodeInput {
            p_src_w: p_node,
            i_charge_limit_a: i_limit,
            i_fixed_a: sinks.i_fixed_a,
            p_boost_w: sinks.p_boost_w,
            discharge_enabled: pack.protection.discharge_enabled,
            charge_enabled: pack.protection.charge_enabled,
            i_discharge_available_a: sinks.i_discharge_available_a,
        },
    );

    // Exit transitions against the solved node voltage.
    let mut entered_full = false;
    if powered {
        match next.mode {
            SolarMode::Cc => {
                if node.v_node >= V_CELL_FULL - 1e-12 {
                    next.mode = SolarMode::Cv;
                    next.cv_elapsed_s = 0.0;
                }
            }
            SolarMode::Cv => {
                next.cv_elapsed_s += dt_s;
                if i_limit <= CV_TERMINATION_FRACTION * next.i_setpoint_a {
                    next.mode = SolarMode::Full;
                    next.cv_elapsed_s = 0.0;
                    entered_full = true;
                }
            }
            _ => {}
        }
    }

    next.led = match next.mode {
        SolarMode::Idle => SolarLed::Off,
        SolarMode::Cc | SolarMode::Cv => SolarLed::Red,
        SolarMode::Full => SolarLed::Green,
    };

    let p_raw = node.p_src_drawn_w / next.eta;
    let out = ChargerStepOut {
        node,
        p_raw_drawn_w: p_raw,
        p_loss_w: p_raw - node.p_src_drawn_w,
        entered_full,
        recharge,
    };
    (next, out)
}
