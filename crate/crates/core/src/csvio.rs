//! CSV contract for step series: fixed column order, 9-significant-digit
//! number formatting, and strict parse-back. Output is byte-deterministic:
//! the same run always serializes to identical files.

use std::io::{BufRead, Write};

use crate::engine::{ChargerModeToken, Report, SimStep};
use crate::events::EventSet;
use crate::harvest::{InputSource, SolarLed};
use crate::usbcharge::UsbLed;
use crate::{Error, Result};

/// Column header, fixed for the life of the format.
pub const HEADER: &str = "t_s,v_bat_V,soc,source,i_solar_A,i_usb_A,i_charge_A,i_load_5v_A,\
i_batt_net_A,latch_on,charger_mode,led_solar,led_usb,p_loss_W,e_harvested_J,e_consumed_J,\
e_loss_J,events";

/// Format a number to 9 significant digits: plain decimal in a comfortable
/// magnitude range, scientific outside it, `0` for zero.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let a = x.abs();
    if (1e-4..1e9).contains(&a) {
        let exp = a.log10().floor() as i32;
        let prec = (8 - exp).max(0) as usize;
        format!("{x:.prec$}")
    } else {
        format!("{x:.8e}")
    }
}

fn source_token(s: InputSource) -> &'static str {
    match s {
        InputSource::None => "None",
        InputSource::Solar => "Solar",
        InputSource::Usb => "Usb",
    }
}

fn parse_source(s: &str) -> Result<InputSource> {
    match s {
        "None" => Ok(InputSource::None),
        "Solar" => Ok(InputSource::Solar),
        "Usb" => Ok(InputSource::Usb),
        _ => Err(Error::csv(format!("unknown source token '{s}'"))),
    }
}

fn mode_token(m: ChargerModeToken) -> &'static str {
    match m {
        ChargerModeToken::Idle => "Idle",
        ChargerModeToken::Trickle => "Trickle",
        ChargerModeToken::Cc => "CC",
        ChargerModeToken::Cv => "CV",
        ChargerModeToken::Full => "Full",
    }
}

fn parse_mode(s: &str) -> Result<ChargerModeToken> {
    match s {
        "Idle" => Ok(ChargerModeToken::Idle),
        "Trickle" => Ok(ChargerModeToken::Trickle),
        "CC" => Ok(ChargerModeToken::Cc),
        "CV" => Ok(ChargerModeToken::Cv),
        "Full" => Ok(ChargerModeToken::Full),
        _ => Err(Error::csv(format!("unknown charger mode token '{s}'"))),
    }
}

fn solar_led_token(l: SolarLed) -> &'static str {
    match l {
        SolarLed::Off => "Off",
        SolarLed::Red => "Red",
        SolarLed::Green => "Green",
    }
}

fn parse_solar_led(s: &str) -> Result<SolarLed> {
    match s {
        "Off" => Ok(SolarLed::Off),
        "Red" => Ok(SolarLed::Red),
        "Green" => Ok(SolarLed::Green),
        _ => Err(Error::csv(format!("unknown solar led token '{s}'"))),
    }
}

fn usb_led_token(l: UsbLed) -> &'static str {
    match l {
        UsbLed::Off => "Off",
        UsbLed::Blink05Hz => "Blink05Hz",
        UsbLed::Solid => "Solid",
    }
}

fn parse_usb_led(s: &str) -> Result<UsbLed> {
    match s {
        "Off" => Ok(UsbLed::Off),
        "Blink05Hz" => Ok(UsbLed::Blink05Hz),
        "Solid" => Ok(UsbLed::Solid),
        _ => Err(Error::csv(format!("unknown usb led token '{s}'"))),
    }
}

/// Serialize one step as a CSV row (no trailing newline).
pub fn row_string(s: &SimStep) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        fmt_sig(s.t_s),
        fmt_sig(s.v_bat_v),
        fmt_sig(s.soc),
        source_token(s.source),
        fmt_sig(s.i_solar_a),
        fmt_sig(s.i_usb_a),
        fmt_sig(s.i_charge_a),
        fmt_sig(s.i_load_5v_a),
        fmt_sig(s.i_batt_net_a),
        if s.latch_on { "1" } else { "0" },
        mode_token(s.charger_mode),
        solar_led_token(s.led_solar),
        usb_led_token(s.led_usb),
        fmt_sig(s.p_loss_w),
        fmt_sig(s.e_harvested_j),
        fmt_sig(s.e_consumed_j),
        fmt_sig(s.e_loss_j),
        s.events.to_token_string(),
    )
}

fn parse_f64(field: &str, name: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::csv(format!("field {name}: cannot parse number '{field}'")))
}

/// Parse one CSV row back into a step.
pub fn parse_row(line: &str) -> Result<SimStep> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 18 {
        return Err(Error::csv(format!("expected 18 fields, found {}", fields.len())));
    }
    Ok(SimStep {
        t_s: parse_f64(fields[0], "t_s")?,
        v_bat_v: parse_f64(fields[1], "v_bat_V")?,
        soc: parse_f64(fields[2], "soc")?,
        source: parse_source(fields[3])?,
        i_solar_a: parse_f64(fields[4], "i_solar_A")?,
        i_usb_a: parse_f64(fields[5], "i_usb_A")?,
        i_charge_a: parse_f64(fields[6], "i_charge_A")?,
        i_load_5v_a: parse_f64(fields[7], "i_load_5v_A")?,
        i_batt_net_a: parse_f64(fields[8], "i_batt_net_A")?,
        latch_on: match fields[9] {
            "1" => true,
            "0" => false,
            other => return Err(Error::csv(format!("latch_on must be 0 or 1, found '{other}'"))),
        },
        charger_mode: parse_mode(fields[10])?,
        led_solar: parse_solar_led(fields[11])?,
        led_usb: parse_usb_led(fields[12])?,
        p_loss_w: parse_f64(fields[13], "p_loss_W")?,
        e_harvested_j: parse_f64(fields[14], "e_harvested_J")?,
        e_consumed_j: parse_f64(fields[15], "e_consumed_J")?,
        e_loss_j: parse_f64(fields[16], "e_loss_J")?,
        events: EventSet::parse_token_string(fields[17])?,
    })
}

/// Write the header line.
pub fn write_header(w: &mut impl Write) -> Result<()> {
    writeln!(w, "{HEADER}")?;
    Ok(())
}

/// Write one step row.
pub fn write_row(w: &mut impl Write, s: &SimStep) -> Result<()> {
    writeln!(w, "{}", row_string(s))?;
    Ok(())
}

/// Streaming reader over a step CSV: checks the header, then yields rows.
pub struct CsvReader<R: BufRead> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> CsvReader<R> {
    /// Open a reader and validate the header line.
    pub fn new(inner: R) -> Result<Self> {
        let mut lines = inner.lines();
        match lines.next() {
            Some(Ok(h)) if h == HEADER => Ok(CsvReader { lines, line_no: 1 }),
            Some(Ok(h)) => Err(Error::csv(format!("unexpected header: '{h}'"))),
            Some(Err(e)) => Err(e.into()),
            None => Err(Error::csv("empty file")),
        }
    }
}

impl<R: BufRead> Iterator for CsvReader<R> {
    type Item = Result<SimStep>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = match self.lines.next()? {
            Ok(l) => l,
            Err(e) => return Some(Err(e.into())),
        };
        self.line_no += 1;
        if line.is_empty() {
            return self.next();
        }
        Some(
            parse_row(&line)
                .map_err(|e| Error::csv(format!("line {}: {e}", self.line_no))),
        )
    }
}

/// Render a report in the fixed key=value layout both subcommands print.
pub fn render_report(r: &Report) -> String {
    format!(
        "min_v_bat_V={}\nmin_soc={}\nthreshold_V={}\nself_sustainable={}\n\
total_captures={}\ncharge_full_count={}\nbrownout_count={}\nenergy_residual_J={}\n",
        fmt_sig(r.min_v_bat_v),
        fmt_sig(r.min_soc),
        fmt_sig(r.threshold_v),
        r.self_sustainable,
        r.total_captures,
        r.charge_full_count,
        r.brownout_count,
        fmt_sig(r.energy_residual_j),
    )
}

/// Parse a report back from its rendered layout.
pub fn parse_report(text: &str) -> Result<Report> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::csv(format!("bad report line '{line}'")))?;
        map.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<String> {
        map.get(k).cloned().ok_or_else(|| Error::csv(format!("report missing key '{k}'")))
    };
    Ok(Report {
        min_v_bat_v: parse_f64(&get("min_v_bat_V")?, "min_v_bat_V")?,
        min_soc: parse_f64(&get("min_soc")?, "min_soc")?,
        threshold_v: parse_f64(&get("threshold_V")?, "threshold_V")?,
        self_sustainable: get("self_sustainable")? == "true",
        total_captures: get("total_captures")?
            .parse()
            .map_err(|_| Error::csv("bad total_captures"))?,
        charge_full_count: get("charge_full_count")?
            .parse()
            .map_err(|_| Error::csv("bad charge_full_count"))?,
        brownout_count: get("brownout_count")?
            .parse()
            .map_err(|_| Error::csv("bad brownout_count"))?,
        energy_residual_j: parse_f64(&get("energy_residual_J")?, "energy_residual_J")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    fn sample_step() -> SimStep {
        let mut events = EventSet::EMPTY;
        events.insert(Event::RtcPulse);
        events.insert(Event::LatchOn);
        SimStep {
            t_s: 23400.0,
            v_bat_v: 4.07321954,
            soc: 0.947234511,
            source: InputSource::Solar,
            i_solar_a: 0.512345678,
            i_usb_a: 0.0,
            i_charge_a: 0.1,
            i_load_5v_a: 0.412,
            i_batt_net_a: -0.57123,
            latch_on: true,
            charger_mode: ChargerModeToken::Cc,
            led_solar: SolarLed::Red,
            led_usb: UsbLed::Off,
            p_loss_w: 0.123456789,
            e_harvested_j: 1234.56789,
            e_consumed_j: 987.654321,
            e_loss_j: 55.5,
            events,
        }
    }

    #[test]
    fn fmt_sig_gives_nine_significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(4.2), "4.20000000");
        assert_eq!(fmt_sig(-3.69998945), "-3.69998945");
        assert_eq!(fmt_sig(600.0), "600.000000");
        assert_eq!(fmt_sig(0.00021), "0.000210000000");
        assert_eq!(fmt_sig(211e-6), "0.000211000000");
        assert_eq!(fmt_sig(1e-5), "1.00000000e-5");
        assert_eq!(fmt_sig(1.5e-7), "1.50000000e-7");
        assert_eq!(fmt_sig(10368000.0), "10368000.0");
    }

    #[test]
    fn row_round_trips() {
        let s = sample_step();
        let line = row_string(&s);
        let p = parse_row(&line).unwrap();
        // Serializing the parsed row again must be byte-identical.
        assert_eq!(row_string(&p), line);
        assert_eq!(p.source, s.source);
        assert_eq!(p.events, s.events);
        assert!((p.v_bat_v - s.v_bat_v).abs() < 1e-8);
    }

    #[test]
    fn reader_checks_header_and_yields_rows() {
        let s = sample_step();
        let mut buf = Vec::new();
        write_header(&mut buf).unwrap();
        write_row(&mut buf, &s).unwrap();
        write_row(&mut buf, &s).unwrap();
        let rows: Vec<_> = CsvReader::new(&buf[..])
            .unwrap()
            .collect::<Result<Vec<_>>>()
            .unwrap();
        assert_eq!(rows.len(), 2);

        let bad = b"not,a,header\n1,2,3\n";
        assert!(CsvReader::new(&bad[..]).is_err());
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(parse_row("1,2,3").is_err());
        let s = sample_step();
        let line = row_string(&s).replace("Solar", "Lunar");
        assert!(parse_row(&line).is_err());
    }

    #[test]
    fn report_renders_and_parses() {
        let r = Report {
            min_v_bat_v: 4.07321954,
            min_soc: 0.918234567,
            threshold_v: 4.0,
            self_sustainable: true,
            total_captures: 2760,
            charge_full_count: 120,
            brownout_count: 0,
            energy_residual_j: 3.2152e-7,
        };
        let text = render_report(&r);
        let p = parse_report(&text).unwrap();
        assert_eq!(render_report(&p), text);
        assert_eq!(p.total_captures, 2760);
        assert!(p.self_sustainable);
    }
}
