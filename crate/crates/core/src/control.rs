//! Timekeeping and measurement support: the low-power RTC that wakes the
//! system, its supply selection, the switched battery-voltage divider, and
//! the gated external sensor supply.

/// RTC quiescent draw.
pub const RTC_I_QUIESCENT_A: f64 = 400e-9;

/// Which rail feeds the RTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtcSupply {
    Primary5V,
    Battery,
}

/// RTC state: a monotonic epoch plus an optional countdown alarm with an
/// optional auto-rearm period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtcState {
    pub epoch_s: f64,
    pub countdown_s: Option<f64>,
    pub period_s: Option<f64>,
    pub powered: bool,
    pub supply: RtcSupply,
}

impl RtcState {
    /// Powered RTC at epoch zero with no alarm programmed.
    pub fn new() -> Self {
        RtcState {
            epoch_s: 0.0,
            countdown_s: None,
            period_s: None,
            powered: true,
            supply: RtcSupply::Battery,
        }
    }

    /// Program the countdown alarm; `period_s` re-arms it on expiry.
    pub fn program(&self, countdown_s: f64, period_s: Option<f64>) -> Self {
        let mut next = *self;
        next.countdown_s = Some(countdown_s);
        next.period_s = period_s;
        next
    }
}

impl Default for RtcState {
    fn default() -> Self {
        Self::new()
    }
}

/// Advance the RTC one step. Returns the new state and whether the countdown
/// expired (a wake pulse). An unpowered RTC is frozen: no epoch advance, no
/// pulses. On expiry the alarm re-arms by adding the period, keeping long-run
/// pulse phase exact; without a period the alarm clears.
pub fn rtc_tick(st: &RtcState, dt_s: f64) -> (RtcState, bool) {
    let mut next = *st;
    if !next.powered {
        return (next, false);
    }
    next.epoch_s += dt_s;
    let mut pulse = false;
    if let Some(cd) = next.countdown_s {
        let mut cd = cd - dt_s;
        if cd <= 1e-9 {
            pulse = true;
            match next.period_s {
                Some(p) if p > 0.0 => {
                    while cd <= 1e-9 {
                        cd += p;
                    }
                    next.countdown_s = Some(cd);
                }
                _ => next.countdown_s = None,
            }
        } else {
            next.countdown_s = Some(cd);
        }
    }
    (next, pulse)
}

/// RTC supply mux: the 5 V rail when the system is up, battery otherwise.
pub fn rtc_supply_select(latch_on: bool) -> RtcSupply {
    if latch_on {
        RtcSupply::Primary5V
    } else {
        RtcSupply::Battery
    }
}

/// Switched resistive divider feeding the battery-voltage ADC channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdcDivider {
    pub enabled: bool,
    /// Division ratio applied to the battery voltage.
    pub ratio: f64,
    /// Total divider resistance seen by the battery when switched in.
    pub r_total_ohm: f64,
}

impl AdcDivider {
    /// Divider with the default 1:2 ratio and 200 kΩ total string.
    pub fn default_divider() -> Self {
        AdcDivider { enabled: false, ratio: 0.5, r_total_ohm: 200_000.0 }
    }
}

/// ADC channel voltage and divider drain for a battery voltage. A disabled
/// divider is disconnected: zero reading, zero drain.
pub fn adc_read_vbat(d: &AdcDivider, v_bat: f64) -> (f64, f64) {
    if !d.enabled {
        (0.0, 0.0)
    } else {
        (v_bat * d.ratio, v_bat / d.r_total_ohm)
    }
}

/// Gated external sensor supply: passes the sensor current only while both
/// the enable line and the system latch are up.
pub fn ext_power_enable(enabled: bool, latch_on: bool, i_ext_a: f64) -> f64 {
    if enabled && latch_on {
        i_ext_a
    } else {
        0.0
    }
}
