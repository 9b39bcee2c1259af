//! USB charging path: trickle/CC/CV charger with a direct power path that
//! serves the 5 V system rail from the adapter while charging.

use crate::battery::{BatteryPack, V_CELL_FULL};
use crate::harvest::{CV_TERMINATION_FRACTION, V_RECHARGE};
use crate::powerpath::{
    boost_input_power, solve_node, NodeInput, NodeOutcome, BOOST_I_MAX_A, BOOST_V_OUT,
};
use crate::{Error, Result};

/// Default USB CC setpoint.
pub const I_CC_USB_DEFAULT: f64 = 2.65;
/// Trickle (pre-charge) current for deeply discharged packs.
pub const I_TRICKLE_A: f64 = 0.1;
/// Cell voltage below which the charger trickles.
pub const V_TRICKLE: f64 = 3.0;
/// USB charger conversion efficiency.
pub const ETA_USB_DEFAULT: f64 = 0.94;
/// Maximum USB input power the front end accepts.
pub const P_USB_MAX_W: f64 = 15.0;

/// USB charger operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UsbMode {
    Idle,
    Trickle,
    Cc,
    Cv,
    Full,
}

/// USB charger status LED.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UsbLed {
    Off,
    /// Blinking at 0.5 Hz: charging in progress.
    Blink05Hz,
    /// Solid: charge complete.
    Solid,
}

/// USB charger state machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UsbChargerState {
    pub mode: UsbMode,
    pub led: UsbLed,
    pub i_cc_a: f64,
    pub i_trickle_a: f64,
    pub v_trickle: f64,
    pub eta: f64,
    pub tau_cv_s: f64,
    /// Seconds since CV entry; drives the taper schedule.
    pub cv_elapsed_s: f64,
}

impl UsbChargerState {
    /// Fresh charger with validated knobs.
    pub fn new(i_cc_a: f64, eta: f64, tau_cv_s: f64) -> Result<Self> {
        if !(i_cc_a > 0.0) {
            return Err(Error::config("usb charger i_cc_a must be > 0"));
        }
        if !(0.0 < eta && eta <= 1.0) {
            return Err(Error::config("usb charger eta must be in (0, 1]"));
        }
        if !(tau_cv_s > 0.0) {
            return Err(Error::config("usb charger tau_cv_s must be > 0"));
        }
        Ok(UsbChargerState {
            mode: UsbMode::Idle,
            led: UsbLed::Off,
            i_cc_a,
            i_trickle_a: I_TRICKLE_A,
            v_trickle: V_TRICKLE,
            eta,
            tau_cv_s,
            cv_elapsed_s: 0.0,
        })
    }

    /// Charger with all default knobs.
    pub fn default_charger() -> Self {
        Self::new(I_CC_USB_DEFAULT, ETA_USB_DEFAULT, crate::harvest::TAU_CV_DEFAULT_S).unwrap()
    }

    /// Force the charger idle (input absent).
    pub fn deselected(&self) -> Self {
        let mut next = *self;
        next.mode = UsbMode::Idle;
        next.led = UsbLed::Off;
        next.cv_elapsed_s = 0.0;
        next
    }
}

/// Result of one USB charger step.
#[derive(Debug, Clone, Copy)]
pub struct UsbStepOut {
    pub node: NodeOutcome,
    /// Raw power drawn from the adapter (direct path plus conversion input).
    pub p_raw_drawn_w: f64,
    /// Conversion loss inside the charger this step.
    pub p_loss_w: f64,
    /// Portion of the 5 V load served straight from the adapter.
    pub i_direct_5v_a: f64,
    /// Portion of the 5 V load served from the battery through the boost.
    pub i_boost_5v_a: f64,
    /// Boost input power that was presented to the node for the remainder.
    pub p_boost_w: f64,
    /// The whole 5 V load was shed (boost remainder above its current limit).
    pub load_shed: bool,
    pub entered_full: bool,
    pub recharge: bool,
}

/// Advance the USB charger one step. The adapter serves the 5 V load directly
/// first (lossless power path); any remainder is drawn from the battery
/// through the boost; leftover adapter power charges the pack under the
/// trickle/CC/CV schedule.
pub fn usb_charger_step(
    st: &UsbChargerState,
    p_usb_w: f64,
    pack: &BatteryPack,
    i_load_5v_a: f64,
    i_fixed_a: f64,
    i_discharge_available_a: f64,
    dt_s: f64,
) -> (UsbChargerState, UsbStepOut) {
    let mut next = *st;
    let powered = p_usb_w > 0.0;

    // Direct power path: adapter covers the rail before anything else.
    let p_load_w = BOOST_V_OUT * i_load_5v_a;
    let p_direct = if powered { p_usb_w.min(p_load_w) } else { 0.0 };
    let i_direct = p_direct / BOOST_V_OUT;
    let mut i_rem = i_load_5v_a - i_direct;
    if i_rem < 1e-15 {
        i_rem = 0.0;
    }

    // Boost remainder; demand beyond the output limit sheds the whole load.
    let mut load_shed = false;
    let (i_direct, i_rem, p_boost) = if i_rem > BOOST_I_MAX_A {
        load_shed = true;
        (0.0, 0.0, 0.0)
    } else if i_rem > 0.0 {
        (i_direct, i_rem, boost_input_power(i_rem).expect("remainder within boost limit"))
    } else {
        (i_direct, 0.0, 0.0)
    };

    // Entry transitions.
    if !powered {
        next.mode = UsbMode::Idle;
        next.cv_elapsed_s = 0.0;
    } else {
        let v_predict = pack.ocv() + next.i_trickle_a * pack.r_internal_ohm;
        match next.mode {
            UsbMode::Idle => {
                next.mode = if v_predict < next.v_trickle { UsbMode::Trickle } else { UsbMode::Cc };
                next.cv_elapsed_s = 0.0;
            }
            UsbMode::Full => {
                if pack.ocv() <= V_RECHARGE {
                    next.mode = UsbMode::Cc;
                    next.cv_elapsed_s = 0.0;
                }
            }
            _ => {}
        }
    }
    let recharge = st.mode == UsbMode::Full && next.mode == UsbMode::Cc;

    // Commanded charge current for this step: the mode schedule, capped by
    // the voltage-regulation loop (terminal held at the 4.2 V cell-full
    // point) and by the charge the pack can still absorb.
    let headroom = pack.charge_headroom_a(dt_s);
    let schedule = match next.mode {
        UsbMode::Idle | UsbMode::Full => 0.0,
        UsbMode::Trickle => next.i_trickle_a,
        UsbMode::Cc => next.i_cc_a,
        UsbMode::Cv => next.i_cc_a * (-next.cv_elapsed_s / next.tau_cv_s).exp(),
    };
    let i_limit = schedule.min(pack.cv_charge_limit_a()).min(headroom);

    // Adapter power left for charging, referred to the battery node.
    let p_node = if powered { (p_usb_w - p_direct) * next.eta } else { 0.0 };
    let node = solve_node(
        pack,
        &NodeInput {
            p_src_w: p_node,
            i_charge_limit_a: i_limit,
            i_fixed_a,
            p_boost_w: p_boost,
            discharge_enabled: pack.protection.discharge_enabled,
            charge_enabled: pack.protection.charge_enabled,
            i_discharge_available_a,
        },
    );

    // Exit transitions against the solved node voltage.
    let mut entered_full = false;
    if powered {
        match next.mode {
            UsbMode::Trickle => {
                if node.v_node >= next.v_trickle {
                    next.mode = UsbMode::Cc;
                }
            }
            UsbMode::Cc => {
                if node.v_node >= V_CELL_FULL - 1e-12 {
                    next.mode = UsbMode::Cv;
                    next.cv_elapsed_s = 0.0;
                }
            }
            UsbMode::Cv => {
                next.cv_elapsed_s += dt_s;
                if i_limit <= CV_TERMINATION_FRACTION * next.i_cc_a {
                    next.mode = UsbMode::Full;
                    next.cv_elapsed_s = 0.0;
                    entered_full = true;
                }
            }
            _ => {}
        }
    }

    next.led = match next.mode {
        UsbMode::Idle => UsbLed::Off,
        UsbMode::Trickle | UsbMode::Cc | UsbMode::Cv => UsbLed::Blink05Hz,
        UsbMode::Full => UsbLed::Solid,
    };

    let p_conv_raw = node.p_src_drawn_w / next.eta;
    let served_direct = if node.boost_served || i_rem == 0.0 { i_direct } else { 0.0 };
    let out = UsbStepOut {
        node,
        p_raw_drawn_w: BOOST_V_OUT * served_direct + p_conv_raw,
        p_loss_w: p_conv_raw - node.p_src_drawn_w,
        i_direct_5v_a: served_direct,
        i_boost_5v_a: if node.boost_served { i_rem } else { 0.0 },
        p_boost_w: p_boost,
        load_shed,
        entered_full,
        recharge,
    };
    (next, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::DEFAULT_OCV_ANCHORS;

    /// Pack whose OCV curve reaches low enough to exercise trickle mode.
    fn deep_pack(soc: f64) -> BatteryPack {
        BatteryPack::new(10.0, soc, 0.05, vec![(0.0, 2.5), (1.0, 4.2)]).unwrap()
    }

    #[test]
    fn trickles_below_threshold() {
        let st = UsbChargerState::default_charger();
        // ocv 2.895; under 100 mA trickle the terminal sits at 2.9 V.
        let soc = (2.895 - 2.5) / 1.7;
        let pack = deep_pack(soc);
        let (next, out) = usb_charger_step(&st, 13.25, &pack, 0.0, 0.0, f64::INFINITY, 1.0);
        assert_eq!(next.mode, UsbMode::Trickle);
        assert_eq!(next.led, UsbLed::Blink05Hz);
        assert!((out.node.i_batt_a - 0.1).abs() < 1e-12);
        assert!((out.node.v_node - 2.9).abs() < 1e-9);
    }

    #[test]
    fn cc_at_setpoint_with_ample_adapter() {
        let st = UsbChargerState::default_charger();
        let pack = BatteryPack::default_pack(0.5).unwrap();
        let (next, out) = usb_charger_step(&st, 15.0, &pack, 0.0, 0.0, f64::INFINITY, 1.0);
        assert_eq!(next.mode, UsbMode::Cc);
        assert_eq!(out.node.i_batt_a, 2.65);
    }

    #[test]
    fn full_charge_sequence_has_no_regressions() {
        // Small pack and short taper so the whole sequence fits in seconds.
        let mut pack =
            BatteryPack::new(0.02, 0.0, 0.05, vec![(0.0, 2.5), (1.0, 4.2)]).unwrap();
        let mut st = UsbChargerState::new(I_CC_USB_DEFAULT, ETA_USB_DEFAULT, 5.0).unwrap();
        let rank = |m: UsbMode| match m {
            UsbMode::Idle => 0,
            UsbMode::Trickle => 1,
            UsbMode::Cc => 2,
            UsbMode::Cv => 3,
            UsbMode::Full => 4,
        };
        let mut seen = vec![UsbMode::Idle];
        let dt = 0.1;
        for _ in 0..20_000 {
            let (n, out) = usb_charger_step(&st, 15.0, &pack, 0.0, 0.0, f64::INFINITY, dt);
            assert!(
                rank(n.mode) >= rank(st.mode),
                "mode regressed from {:?} to {:?}",
                st.mode,
                n.mode
            );
            if n.mode != *seen.last().unwrap() {
                seen.push(n.mode);
            }
            st = n;
            let (p, _) = pack.step_soc(out.node.i_batt_a, dt);
            pack = p;
            if st.mode == UsbMode::Full {
                break;
            }
        }
        assert_eq!(seen, vec![UsbMode::Idle, UsbMode::Trickle, UsbMode::Cc, UsbMode::Cv, UsbMode::Full]);
        assert_eq!(st.led, UsbLed::Solid);
        // CV regulation tapers the current to the termination point before
        // the pack tops off completely; the charge ends just shy of 1.0.
        assert!(pack.soc > 0.99 && pack.soc < 1.0, "soc at termination: {}", pack.soc);
    }

    #[test]
    fn direct_path_serves_load_before_battery() {
        let st = UsbChargerState::default_charger();
        let pack = BatteryPack::new(10.0, 0.5, 0.05, DEFAULT_OCV_ANCHORS.to_vec()).unwrap();
        // 1 A at 5 V load with a 15 W adapter: all of it comes straight from
        // the adapter, and the battery still charges from the remainder.
        let (_, out) = usb_charger_step(&st, 15.0, &pack, 1.0, 0.0, f64::INFINITY, 1.0);
        assert!((out.i_direct_5v_a - 1.0).abs() < 1e-12);
        assert_eq!(out.i_boost_5v_a, 0.0);
        assert!(out.node.i_batt_a > 0.0);
        // Raw draw covers the direct watts plus the conversion input.
        let expect = 5.0 + out.node.p_src_drawn_w / ETA_USB_DEFAULT;
        assert!((out.p_raw_drawn_w - expect).abs() < 1e-12);
    }

    #[test]
    fn weak_adapter_splits_load_with_battery() {
        let st = UsbChargerState::default_charger();
        let pack = BatteryPack::default_pack(0.5).unwrap();
        // 2 W adapter, 1 A load: 0.4 A direct, 0.6 A through the boost.
        let (_, out) = usb_charger_step(&st, 2.0, &pack, 1.0, 0.0, f64::INFINITY, 1.0);
        assert!((out.i_direct_5v_a - 0.4).abs() < 1e-12);
        assert!((out.i_boost_5v_a - 0.6).abs() < 1e-12);
        assert!(out.node.i_batt_a < 0.0);
    }

    #[test]
    fn oversized_boost_remainder_sheds_load() {
        let st = UsbChargerState::default_charger();
        let pack = BatteryPack::default_pack(0.5).unwrap();
        // 3 A of load with no adapter margin: remainder exceeds the boost
        // limit, so the whole load drops for the step.
        let (_, out) = usb_charger_step(&st, 0.5, &pack, 3.0, 0.0, f64::INFINITY, 1.0);
        assert!(out.load_shed);
        assert_eq!(out.i_direct_5v_a, 0.0);
        assert_eq!(out.i_boost_5v_a, 0.0);
    }

    #[test]
    fn full_mode_led_solid_and_no_current() {
        let mut st = UsbChargerState::default_charger();
        st.mode = UsbMode::Full;
        st.led = UsbLed::Solid;
        let pack = BatteryPack::default_pack(1.0).unwrap();
        let (next, out) = usb_charger_step(&st, 15.0, &pack, 0.0, 0.0, f64::INFINITY, 1.0);
        assert_eq!(next.mode, UsbMode::Full);
        assert_eq!(next.led, UsbLed::Solid);
        assert_eq!(out.node.i_batt_a, 0.0);
    }

    #[test]
    fn unplugged_goes_idle() {
        let mut st = UsbChargerState::default_charger();
        st.mode = UsbMode::Cc;
        let pack = BatteryPack::default_pack(0.5).unwrap();
        let (next, out) = usb_charger_step(&st, 0.0, &pack, 0.0, 0.0, f64::INFINITY, 1.0);
        assert_eq!(next.mode, UsbMode::Idle);
        assert_eq!(next.led, UsbLed::Off);
        assert_eq!(out.p_raw_drawn_w, 0.0);
    }
}
