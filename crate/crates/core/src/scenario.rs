//! Scenario file parser. The format is a small INI dialect: `[section]`
//! headers, `key = value` lines, `#` comments. Parsing is fail-closed —
//! unknown sections, unknown keys, duplicate keys, and malformed values are
//! all hard errors that carry the offending line number.

use std::path::Path;

use crate::engine::{
    BatteryConfig, ButtonPress, SimConfig, SolarConfig, UsbConfig, Window,
};
use crate::harvest::{
    IrradianceProfile, SolarPanel, ETA_SOLAR_DEFAULT, K_MPPT_DEFAULT, P_MIN_DEFAULT_W,
    TAU_CV_DEFAULT_S,
};
use crate::load::{DutyCycleSchedule, LoadModel};
use crate::usbcharge::{ETA_USB_DEFAULT, I_CC_USB_DEFAULT};
use crate::{Error, Result};

/// Default daylight bounds used when a section leaves them out: 06:30 and
/// 17:30 as seconds of day.
pub const SUNRISE_DEFAULT_S: f64 = 23_400.0;
pub const SUNSET_DEFAULT_S: f64 = 63_000.0;

/// Default wake cadence for the daily duty-cycle schedule.
pub const WAKE_INTERVAL_DEFAULT_S: f64 = 1_800.0;

#[derive(Debug)]
struct RawEntry {
    key: String,
    value: String,
    line: usize,
    used: bool,
}

#[derive(Debug)]
struct RawSection {
    name: String,
    line: usize,
    entries: Vec<RawEntry>,
}

impl RawSection {
    /// Take the single value for `key`; duplicate occurrences are an error.
    fn take(&mut self, key: &str) -> Result<Option<(String, usize)>> {
        let mut found: Option<(String, usize)> = None;
        for e in self.entries.iter_mut().filter(|e| e.key == key) {
            if found.is_some() {
                return Err(Error::config(format!(
                    "line {}: duplicate key '{}' in [{}]",
                    e.line, key, self.name
                )));
            }
            e.used = true;
            found = Some((e.value.clone(), e.line));
        }
        Ok(found)
    }

    /// Take every value for a repeatable key, in file order.
    fn take_all(&mut self, key: &str) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for e in self.entries.iter_mut().filter(|e| e.key == key) {
            e.used = true;
            out.push((e.value.clone(), e.line));
        }
        out
    }

    fn take_f64(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key)? {
            Some((v, line)) => parse_f64(&v, key, line),
            None => Ok(default),
        }
    }

    fn take_opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key)? {
            Some((v, line)) => parse_f64(&v, key, line).map(Some),
            None => Ok(None),
        }
    }

    fn require_f64(&mut self, key: &str) -> Result<f64> {
        match self.take(key)? {
            Some((v, line)) => parse_f64(&v, key, line),
            None => Err(Error::config(format!(
                "[{}] is missing required key '{}'",
                self.name, key
            ))),
        }
    }

    fn take_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key)? {
            Some((v, line)) => match v.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::config(format!(
                    "line {line}: key '{key}' expects true or false, found '{v}'"
                ))),
            },
            None => Ok(default),
        }
    }

    /// Error out if any entry was never consumed by the builder.
    fn finish(&self) -> Result<()> {
        if let Some(e) = self.entries.iter().find(|e| !e.used) {
            return Err(Error::config(format!(
                "line {}: unknown key '{}' in [{}]",
                e.line, e.key, self.name
            )));
        }
        Ok(())
    }
}

fn parse_f64(v: &str, key: &str, line: usize) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| {
        Error::config(format!("line {line}: key '{key}' expects a number, found '{v}'"))
    })?;
    if !x.is_finite() {
        return Err(Error::config(format!("line {line}: key '{key}' must be finite")));
    }
    Ok(x)
}

/// Parse `a:b` into a pair of numbers.
fn parse_pair(v: &str, key: &str, line: usize) -> Result<(f64, f64)> {
    let (a, b) = v.split_once(':').ok_or_else(|| {
        Error::config(format!("line {line}: key '{key}' expects 'a:b', found '{v}'"))
    })?;
    Ok((parse_f64(a.trim(), key, line)?, parse_f64(b.trim(), key, line)?))
}

/// Parse `a:b, c:d, ...` into a list of pairs.
fn parse_pair_list(v: &str, key: &str, line: usize) -> Result<Vec<(f64, f64)>> {
    v.split(',')
        .map(|item| parse_pair(item.trim(), key, line))
        .collect()
}

fn tokenize(text: &str) -> Result<Vec<RawSection>> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| {
                    Error::config(format!("line {line_no}: unterminated section header"))
                })?
                .trim();
            if name.is_empty() {
                return Err(Error::config(format!("line {line_no}: empty section name")));
            }
            if sections.iter().any(|s| s.name == name) {
                return Err(Error::config(format!(
                    "line {line_no}: duplicate section [{name}]"
                )));
            }
            sections.push(RawSection {
                name: name.to_string(),
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {line_no}: expected 'key = value' or '[section]'"))
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(Error::config(format!(
                "line {line_no}: empty key or value"
            )));
        }
        let section = sections.last_mut().ok_or_else(|| {
            Error::config(format!("line {line_no}: key before any [section]"))
        })?;
        section.entries.push(RawEntry {
            key: key.to_string(),
            value: value.to_string(),
            line: line_no,
            used: false,
        });
    }
    Ok(sections)
}

fn take_section(sections: &mut Vec<RawSection>, name: &str) -> Option<RawSection> {
    let pos = sections.iter().position(|s| s.name == name)?;
    Some(sections.remove(pos))
}

fn build_battery(mut s: RawSection) -> Result<(BatteryConfig, bool)> {
    let capacity_ah = s.require_f64("capacity_ah")?;
    let soc_init = s.require_f64("soc_init")?;
    let r_internal_ohm = s.take_f64("r_internal_ohm", 0.05)?;
    let ocv_anchors = match s.take("ocv_anchors")? {
        Some((v, line)) => parse_pair_list(&v, "ocv_anchors", line)?,
        None => crate::battery::DEFAULT_OCV_ANCHORS.to_vec(),
    };
    let connected = s.take_bool("connected", true)?;
    s.finish()?;
    Ok((
        BatteryConfig { capacity_ah, soc_init, r_internal_ohm, ocv_anchors },
        connected,
    ))
}

fn build_irradiance(mut s: RawSection) -> Result<IrradianceProfile> {
    let kind = match s.take("kind")? {
        Some((v, _)) => v,
        None => "clear_sky".to_string(),
    };
    let profile = match kind.as_str() {
        "clear_sky" => {
            let sunrise_s = s.take_f64("sunrise_s", SUNRISE_DEFAULT_S)?;
            let sunset_s = s.take_f64("sunset_s", SUNSET_DEFAULT_S)?;
            let peak_fraction = s.take_f64("peak_fraction", 1.0)?;
            IrradianceProfile::ClearSky { sunrise_s, sunset_s, peak_fraction }
        }
        "trace" => {
            let points = match s.take("points")? {
                Some((v, line)) => parse_pair_list(&v, "points", line)?,
                None => {
                    return Err(Error::config(
                        "[irradiance] kind trace requires 'points'",
                    ))
                }
            };
            IrradianceProfile::Trace { points }
        }
        other => {
            return Err(Error::config(format!(
                "[irradiance] kind must be clear_sky or trace, found '{other}'"
            )))
        }
    };
    s.finish()?;
    Ok(profile)
}

fn build_solar(
    mut s: RawSection,
    irradiance: Option<RawSection>,
) -> Result<SolarConfig> {
    let p_rated_w = s.require_f64("p_rated_w")?;
    let v_oc = s.take_f64("v_oc", 6.9)?;
    let v_mpp = s.take_f64("v_mpp", 6.0)?;
    let k_mppt = s.take_f64("k_mppt", K_MPPT_DEFAULT)?;
    let jumper_3a = s.take_bool("jumper_3a", false)?;
    let eta = s.take_f64("eta", ETA_SOLAR_DEFAULT)?;
    let tau_cv_s = s.take_f64("tau_cv_s", TAU_CV_DEFAULT_S)?;
    let p_min_w = s.take_f64("p_min_w", P_MIN_DEFAULT_W)?;
    s.finish()?;
    let profile = match irradiance {
        Some(sec) => build_irradiance(sec)?,
        None => IrradianceProfile::ClearSky {
            sunrise_s: SUNRISE_DEFAULT_S,
            sunset_s: SUNSET_DEFAULT_S,
            peak_fraction: 1.0,
        },
    };
    Ok(SolarConfig {
        panel: SolarPanel { p_rated_w, v_oc, v_mpp, k_mppt },
        profile,
        jumper_3a,
        eta,
        tau_cv_s,
        p_min_w,
    })
}

fn build_usb(mut s: RawSection) -> Result<UsbConfig> {
    let p_usb_w = s.require_f64("p_usb_w")?;
    let i_cc_a = s.take_f64("i_cc_a", I_CC_USB_DEFAULT)?;
    let eta = s.take_f64("eta", ETA_USB_DEFAULT)?;
    let tau_cv_s = s.take_f64("tau_cv_s", TAU_CV_DEFAULT_S)?;
    let windows = match s.take("windows")? {
        Some((v, line)) => parse_pair_list(&v, "windows", line)?
            .into_iter()
            .map(|(a, b)| Window { t_start_s: a, t_end_s: b })
            .collect(),
        // No windows key: the adapter stays plugged in for the whole run.
        None => vec![Window { t_start_s: 0.0, t_end_s: f64::INFINITY }],
    };
    s.finish()?;
    Ok(UsbConfig { p_usb_w, i_cc_a, eta, tau_cv_s, windows })
}

fn build_load(mut s: RawSection) -> Result<LoadModel> {
    let d = LoadModel::default_model();
    let model = LoadModel {
        i_sleep_a: s.take_f64("i_sleep_a", d.i_sleep_a)?,
        i_boot_5v_a: s.take_f64("i_boot_5v_a", d.i_boot_5v_a)?,
        i_capture_5v_a: s.take_f64("i_capture_5v_a", d.i_capture_5v_a)?,
        i_idle_5v_a: s.take_f64("i_idle_5v_a", d.i_idle_5v_a)?,
        i_sensors_5v_a: s.take_f64("i_sensors_5v_a", d.i_sensors_5v_a)?,
        t_boot_s: s.take_f64("t_boot_s", d.t_boot_s)?,
        t_capture_s: s.take_f64("t_capture_s", d.t_capture_s)?,
    };
    s.finish()?;
    Ok(model)
}

fn build_schedule(mut s: RawSection) -> Result<DutyCycleSchedule> {
    let sunrise_s = s.take_f64("sunrise_s", SUNRISE_DEFAULT_S)?;
    let sunset_s = s.take_f64("sunset_s", SUNSET_DEFAULT_S)?;
    let interval_s = s.take_f64("interval_s", WAKE_INTERVAL_DEFAULT_S)?;
    s.finish()?;
    DutyCycleSchedule::new(sunrise_s, sunset_s, interval_s)
}

/// Parse scenario text into a validated configuration.
pub fn parse_scenario(text: &str) -> Result<SimConfig> {
    let mut sections = tokenize(text)?;

    let mut cfg = SimConfig::bare(0.5);

    if let Some(mut s) = take_section(&mut sections, "sim") {
        cfg.dt_s = s.take_f64("dt_s", 1.0)?;
        cfg.duration_days = s.take_f64("duration_days", 1.0)?;
        s.finish()?;
    }

    match take_section(&mut sections, "battery") {
        Some(s) => {
            let (battery, connected) = build_battery(s)?;
            cfg.battery = battery;
            cfg.battery_connected = connected;
        }
        None => return Err(Error::config("scenario requires a [battery] section")),
    }

    let irradiance = take_section(&mut sections, "irradiance");
    match take_section(&mut sections, "solar") {
        Some(s) => cfg.solar = Some(build_solar(s, irradiance)?),
        None => {
            if irradiance.is_some() {
                return Err(Error::config(
                    "[irradiance] requires a [solar] section",
                ));
            }
        }
    }

    if let Some(s) = take_section(&mut sections, "usb") {
        cfg.usb = Some(build_usb(s)?);
    }

    if let Some(s) = take_section(&mut sections, "load") {
        cfg.load = build_load(s)?;
    }

    if let Some(s) = take_section(&mut sections, "schedule") {
        cfg.schedule = Some(build_schedule(s)?);
    }

    if let Some(mut s) = take_section(&mut sections, "rtc") {
        cfg.wake_period_s = s.take_opt_f64("wake_period_s")?;
        s.finish()?;
    }

    if let Some(mut s) = take_section(&mut sections, "adc") {
        cfg.adc_sample_on_wake = s.take_bool("sample_on_wake", true)?;
        cfg.adc_ratio = s.take_f64("ratio", 0.5)?;
        cfg.adc_r_total_ohm = s.take_f64("r_total_ohm", 200_000.0)?;
        s.finish()?;
    }

    if let Some(mut s) = take_section(&mut sections, "buttons") {
        for (v, line) in s.take_all("press") {
            let (t_s, hold_s) = parse_pair(&v, "press", line)?;
            cfg.buttons.push(ButtonPress { t_s, hold_s });
        }
        s.finish()?;
    }

    if let Some(mut s) = take_section(&mut sections, "shutdown") {
        for (v, line) in s.take_all("hold") {
            let (a, b) = parse_pair(&v, "hold", line)?;
            cfg.shutdown_holds.push(Window { t_start_s: a, t_end_s: b });
        }
        s.finish()?;
    }

    if let Some(mut s) = take_section(&mut sections, "faults") {
        for (v, line) in s.take_all("solar_reverse") {
            let (a, b) = parse_pair(&v, "solar_reverse", line)?;
            cfg.solar_reverse_windows.push(Window { t_start_s: a, t_end_s: b });
        }
        cfg.battery_reverse_at_s = s.take_opt_f64("battery_reverse_at_s")?;
        s.finish()?;
    }

    if let Some(s) = sections.first() {
        return Err(Error::config(format!(
            "line {}: unknown section [{}]",
            s.line, s.name
        )));
    }

    cfg.validate()?;
    Ok(cfg)
}

/// Read and parse a scenario file.
pub fn load_scenario(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text).map_err(|e| match e {
        Error::Config(msg) => {
            Error::Config(format!("{}: {msg}", path.display()))
        }
        other => other,
    })
}
