//! Load side of the system: the embedded processing unit's duty-cycle phases,
//! their current draws, and the capture schedule.

use crate::{Error, Result};

/// Battery-side draw with the system latched off: RTC keep-alive, boost
/// quiescent, protection leakage — everything, counted once.
pub const I_SLEEP_FLOOR_A: f64 = 211e-6;

/// Operating phase of the embedded processing unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadPhase {
    /// Battery disconnected or protection cut: nothing draws at all.
    Off,
    /// Latch off, system sleeping: only the battery-side floor draws.
    Sleep,
    /// Power-up until the application is ready.
    Boot,
    /// Image capture with sensors powered.
    Capture,
    /// Application idle (also the post-capture shutdown wait).
    Idle,
}

/// Current draws and phase durations of the vision load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadModel {
    pub i_sleep_a: f64,
    pub i_boot_5v_a: f64,
    pub i_capture_5v_a: f64,
    pub i_idle_5v_a: f64,
    pub i_sensors_5v_a: f64,
    pub t_boot_s: f64,
    pub t_capture_s: f64,
}

impl LoadModel {
    /// Default draw figures for the reference vision device.
    pub fn default_model() -> Self {
        LoadModel {
            i_sleep_a: I_SLEEP_FLOOR_A,
            i_boot_5v_a: 0.25,
            i_capture_5v_a: 0.40,
            i_idle_5v_a: 0.15,
            i_sensors_5v_a: 0.012,
            t_boot_s: 5.0,
            t_capture_s: 25.0,
        }
    }

    /// Validate that all draws and durations are non-negative.
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.i_sleep_a,
            self.i_boot_5v_a,
            self.i_capture_5v_a,
            self.i_idle_5v_a,
            self.i_sensors_5v_a,
            self.t_boot_s,
            self.t_capture_s,
        ];
        if vals.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::config("load currents and durations must be >= 0"));
        }
        Ok(())
    }
}

/// 5 V rail current for a phase, with any gated external sensor current
/// added on top.
pub fn load_current_5v_a(phase: LoadPhase, model: &LoadModel, i_ext_5v_a: f64) -> f64 {
    match phase {
        LoadPhase::Off | LoadPhase::Sleep => 0.0,
        LoadPhase::Boot => model.i_boot_5v_a + i_ext_5v_a,
        LoadPhase::Capture => model.i_capture_5v_a + i_ext_5v_a,
        LoadPhase::Idle => model.i_idle_5v_a + i_ext_5v_a,
    }
}

/// Battery-side fixed draw for a phase. Only sleep carries the floor; while
/// the system is up those quiescents ride the 5 V rail instead, and a
/// disconnected pack draws nothing.
pub fn battery_floor_a(phase: LoadPhase, model: &LoadModel) -> f64 {
    match phase {
        LoadPhase::Sleep => model.i_sleep_a,
        _ => 0.0,
    }
}

/// Daily capture schedule: wake every `interval_s` from sunrise while within
/// the sunset bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutyCycleSchedule {
    pub sunrise_s: f64,
    pub sunset_s: f64,
    pub interval_s: f64,
}

impl DutyCycleSchedule {
    /// Schedule with validated bounds.
    pub fn new(sunrise_s: f64, sunset_s: f64, interval_s: f64) -> Result<Self> {
        if !(sunrise_s < sunset_s) {
            return Err(Error::config("schedule sunrise must precede sunset"));
        }
        if !(interval_s > 0.0) {
            return Err(Error::config("schedule interval_s must be > 0"));
        }
        if !(0.0..86400.0).contains(&sunrise_s) || !(sunset_s <= 86400.0) {
            return Err(Error::config("schedule times must lie within one day"));
        }
        Ok(DutyCycleSchedule { sunrise_s, sunset_s, interval_s })
    }
}

/// Wake times of day for one schedule: sunrise plus every interval that still
/// lands at or before sunset.
pub fn schedule_events(s: &DutyCycleSchedule) -> Vec<f64> {
    let mut out = Vec::new();
    let n = ((s.sunset_s - s.sunrise_s) / s.interval_s).floor() as usize;
    for k in 0..=n {
        out.push(s.sunrise_s + k as f64 * s.interval_s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sleep_floor_only_when_sleeping() {
        let m = LoadModel::default_model();
        assert_eq!(battery_floor_a(LoadPhase::Sleep, &m), 211e-6);
        assert_eq!(battery_floor_a(LoadPhase::Boot, &m), 0.0);
        assert_eq!(battery_floor_a(LoadPhase::Off, &m), 0.0);
        // At 3.7 V the floor burns about 780 µW.
        let p = 3.7 * battery_floor_a(LoadPhase::Sleep, &m);
        assert!((p - 780.7e-6).abs() < 1e-7);
    }

    #[test]
    fn capture_adds_sensor_current() {
        let m = LoadModel::default_model();
        assert!((load_current_5v_a(LoadPhase::Capture, &m, 0.012) - 0.412).abs() < 1e-12);
        assert_eq!(load_current_5v_a(LoadPhase::Boot, &m, 0.0), 0.25);
        assert_eq!(load_current_5v_a(LoadPhase::Idle, &m, 0.0), 0.15);
    }

    #[test]
    fn off_and_sleep_draw_nothing_on_the_rail() {
        let m = LoadModel::default_model();
        assert_eq!(load_current_5v_a(LoadPhase::Off, &m, 0.0), 0.0);
        assert_eq!(load_current_5v_a(LoadPhase::Sleep, &m, 0.0), 0.0);
    }

    #[test]
    fn schedule_counts_wakes_inclusive() {
        // 06:00 to 17:00 every 30 min: 23 wakes.
        let s = DutyCycleSchedule::new(21600.0, 61200.0, 1800.0).unwrap();
        assert_eq!(schedule_events(&s).len(), 23);
        // Trimmed window 07:00 to 16:30: 20 wakes.
        let s = DutyCycleSchedule::new(25200.0, 59400.0, 1800.0).unwrap();
        assert_eq!(schedule_events(&s).len(), 20);
    }

    #[test]
    fn degenerate_schedule_fires_once() {
        let s = DutyCycleSchedule::new(21600.0, 61200.0, 86000.0).unwrap();
        assert_eq!(schedule_events(&s), vec![21600.0]);
    }

    #[test]
    fn schedule_rejects_bad_bounds() {
        assert!(DutyCycleSchedule::new(61200.0, 21600.0, 1800.0).is_err());
        assert!(DutyCycleSchedule::new(21600.0, 61200.0, 0.0).is_err());
    }
}
