//! Deployment metrics derived from measured latency and power, plus analytic
//! MAC and memory accounting. Nothing here estimates device behaviour.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::config::{count_macs, weight_bytes, ModelConfig, Shape};
use crate::error::{Error, Result};
use crate::eval::align;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DeviceMeasurement {
    pub device: String,
    pub voltage_v: f64,
    pub clock_mhz: f64,
    pub latency_ms: f64,
    pub power_mw: f64,
}

impl DeviceMeasurement {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("clock_mhz", self.clock_mhz),
            ("latency_ms", self.latency_ms),
            ("power_mw", self.power_mw),
        ] {
            positive(name, v)?;
        }
        if !(self.voltage_v.is_finite() && self.voltage_v >= 0.0) {
            return Err(Error::InvalidArgument(format!("voltage_v must be ≥ 0, got {}", self.voltage_v)));
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

/// MACs per clock cycle: `macs / (latency_s · clock_hz)`.
pub fn inference_efficiency(macs: u64, latency_ms: f64, clock_mhz: f64) -> Result<f64> {
    positive("macs", macs as f64)?;
    positive("latency_ms", latency_ms)?;
    positive("clock_mhz", clock_mhz)?;
    Ok(macs as f64 / (latency_ms * 1e-3 * clock_mhz * 1e6))
}

/// µW per MHz.
pub fn power_efficiency(power_mw: f64, clock_mhz: f64) -> Result<f64> {
    positive("power_mw", power_mw)?;
    positive("clock_mhz", clock_mhz)?;
    Ok(power_mw * 1000.0 / clock_mhz)
}

/// µJ per inference; mW × ms = µJ.
pub fn energy_per_inference(power_mw: f64, latency_ms: f64) -> Result<f64> {
    positive("power_mw", power_mw)?;
    positive("latency_ms", latency_ms)?;
    Ok(power_mw * latency_ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub weight_bytes: u64,
    pub input_bytes: u64,
    /// Largest int8 input + output activation pair over all layers.
    pub activation_bytes: u64,
}

pub fn footprint(cfg: &ModelConfig) -> Footprint {
    let input = cfg.input_shape();
    let shapes = cfg.shapes();
    let mut prev = input.elements() as u64;
    let mut peak = 0u64;
    for s in &shapes {
        let out = s.elements() as u64;
        peak = peak.max(prev + out);
        prev = out;
    }
    Footprint {
        weight_bytes: weight_bytes(cfg),
        input_bytes: match input {
            Shape::Chw(c, h, w) => (c * h * w) as u64,
            Shape::Flat(n) => n as u64,
        },
        activation_bytes: peak,
    }
}

/// Reads `device,voltage_v,clock_mhz,latency_ms,power_mw` rows. Lines
/// starting with `#` are comments; errors carry the file line number.
pub fn read_measurements(path: impl AsRef<Path>) -> Result<Vec<DeviceMeasurement>> {
    let path = path.as_ref();
    parse_measurements(&std::fs::read_to_string(path)?, path)
}

pub fn parse_measurements(text: &str, origin: &Path) -> Result<Vec<DeviceMeasurement>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let fail = |line: u64, message: String| Error::Annotation {
        path: origin.to_path_buf(),
        line: line as usize,
        message,
    };
    let headers = reader.headers().map_err(|e| fail(1, e.to_string()))?.clone();
    let want = ["device", "voltage_v", "clock_mhz", "latency_ms", "power_mw"];
    if headers.iter().collect::<Vec<_>>() != want {
        let line = reader.position().line().max(1);
        return Err(fail(line, format!("expected header `{}`", want.join(","))));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            fail(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let m: DeviceMeasurement = rec.deserialize(Some(&headers)).map_err(|e| fail(line, e.to_string()))?;
        m.validate().map_err(|e| fail(line, e.to_string()))?;
        out.push(m);
    }
    if out.is_empty() {
        return Err(fail(1, "no measurement rows".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceMetrics {
    pub measurement: DeviceMeasurement,
    pub power_efficiency_uw_per_mhz: f64,
    /// From the analytic MAC count.
    pub mac_per_cycle: f64,
    /// From the reference MAC count, when one is given.
    pub mac_per_cycle_reference: Option<f64>,
    pub energy_uj: f64,
    /// Latency divided by the lowest latency; `None` with a single device.
    pub latency_vs_fastest: Option<f64>,
    /// Energy divided by the lowest energy; `None` with a single device.
    pub energy_vs_best: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub macs: u64,
    pub reference_macs: Option<u64>,
    pub footprint: Footprint,
    pub devices: Vec<DeviceMetrics>,
}

/// Per-device metrics in input order. Ratios are taken against the best
/// device, so permuting rows only permutes the output.
pub fn compare_report(measurements: &[DeviceMeasurement], cfg: &ModelConfig, reference_macs: Option<u64>) -> Result<MetricsReport> {
    if measurements.is_empty() {
        return Err(Error::InvalidArgument("need at least one measurement".into()));
    }
    let macs = count_macs(cfg).total;
    let mut devices = measurements
        .iter()
        .map(|m| {
            m.validate()?;
            Ok(DeviceMetrics {
                measurement: m.clone(),
                power_efficiency_uw_per_mhz: power_efficiency(m.power_mw, m.clock_mhz)?,
                mac_per_cycle: inference_efficiency(macs, m.latency_ms, m.clock_mhz)?,
                mac_per_cycle_reference: reference_macs
                    .map(|r| inference_efficiency(r, m.latency_ms, m.clock_mhz))
                    .transpose()?,
                energy_uj: energy_per_inference(m.power_mw, m.latency_ms)?,
                latency_vs_fastest: None,
                energy_vs_best: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if devices.len() > 1 {
        let fastest = devices.iter().map(|d| d.measurement.latency_ms).fold(f64::INFINITY, f64::min);
        let leanest = devices.iter().map(|d| d.energy_uj).fold(f64::INFINITY, f64::min);
        for d in &mut devices {
            d.latency_vs_fastest = Some(d.measurement.latency_ms / fastest);
            d.energy_vs_best = Some(d.energy_uj / leanest);
        }
    }
    Ok(MetricsReport {
        model: cfg.name().unwrap_or("model").to_string(),
        macs,
        reference_macs,
        footprint: footprint(cfg),
        devices,
    })
}

/// Three significant figures.
pub fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let digits = x.abs().log10().floor() as i32 + 1;
    if digits >= 3 {
        let unit = 10f64.powi(digits - 3);
        format!("{}", (x / unit).round() * unit)
    } else {
        format!("{:.*}", (3 - digits) as usize, x)
    }
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "device,voltage_v,clock_mhz,latency_ms,power_mw,power_efficiency_uw_per_mhz,mac_per_cycle,mac_per_cycle_reference,energy_uj,latency_vs_fastest,energy_vs_best\n",
        );
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for d in &self.devices {
            let m = &d.measurement;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                m.device,
                m.voltage_v,
                m.clock_mhz,
                m.latency_ms,
                m.power_mw,
                d.power_efficiency_uw_per_mhz,
                d.mac_per_cycle,
                opt(d.mac_per_cycle_reference),
                d.energy_uj,
                opt(d.latency_vs_fastest),
                opt(d.energy_vs_best)
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut text = String::new();
        let fp = &self.footprint;
        let _ = writeln!(text, "model {}", self.model);
        let _ = writeln!(text, "  analytic MACs per inference: {}", self.macs);
        if let Some(r) = self.reference_macs {
            let _ = writeln!(
                text,
                "  reference MACs: {r} (analytic count differs by {}x)",
                sig3(self.macs as f64 / r as f64)
            );
        }
        let _ = writeln!(text, "  int8 weight bytes: {}", fp.weight_bytes);
        let _ = writeln!(text, "  input bytes: {}", fp.input_bytes);
        let _ = writeln!(text, "  peak activation bytes: {}", fp.activation_bytes);
        text.push('\n');

        let with_ref = self.reference_macs.is_some();
        let mut header: Vec<String> = ["device", "V", "MHz", "latency ms", "µW/MHz", "MAC/cycle"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        if with_ref {
            header.push("MAC/cycle (ref)".into());
        }
        header.extend(["energy µJ", "latency ×", "energy ×"].iter().map(|s| s.to_string()));
        let mut rows = vec![header];
        let opt = |v: Option<f64>| v.map(sig3).unwrap_or_else(|| "-".into());
        for d in &self.devices {
            let m = &d.measurement;
            let mut row = vec![
                m.device.clone(),
                format!("{}", m.voltage_v),
                format!("{}", m.clock_mhz),
                sig3(m.latency_ms),
                sig3(d.power_efficiency_uw_per_mhz),
                sig3(d.mac_per_cycle),
            ];
            if with_ref {
                row.push(opt(d.mac_per_cycle_reference));
            }
            row.extend([sig3(d.energy_uj), opt(d.latency_vs_fastest), opt(d.energy_vs_best)]);
            rows.push(row);
        }
        text.push_str(&align(&rows));
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn metric_examples() {
        assert!((inference_efficiency(29_425_000, 5.5, 50.0).unwrap() - 107.0).abs() < 1e-9);
        assert!((inference_efficiency(1, 1.0, 1e-3).unwrap() - 1.0).abs() < 1e-12);
        assert!((inference_efficiency(1_000_000, 4e6 / 50e6 * 1e3, 50.0).unwrap() - 0.25).abs() < 1e-12);
        assert!((power_efficiency(11.328, 192.0).unwrap() - 59.0).abs() < 1e-9);
        assert!((energy_per_inference(35.64, 5.5).unwrap() - 196.0).abs() < 0.1);
        assert_eq!(energy_per_inference(1.0, 1.0).unwrap(), 1.0);
        assert!(inference_efficiency(0, 1.0, 1.0).is_err());
        assert!(power_efficiency(1.0, -1.0).is_err());
    }

    #[test]
    fn metrics_invert() {
        let m = DeviceMeasurement {
            device: "x".into(),
            voltage_v: 1.8,
            clock_mhz: 192.0,
            latency_ms: 538.49,
            power_mw: 11.328,
        };
        let pe = power_efficiency(m.power_mw, m.clock_mhz).unwrap();
        assert!(rel(pe * m.clock_mhz / 1000.0, m.power_mw) < 1e-9);
        let e = energy_per_inference(m.power_mw, m.latency_ms).unwrap();
        assert!(rel(e / m.latency_ms, m.power_mw) < 1e-9);
        let ie = inference_efficiency(1_000_000, m.latency_ms, m.clock_mhz).unwrap();
        assert!(rel(ie * m.latency_ms * 1e-3 * m.clock_mhz * 1e6, 1e6) < 1e-9);
    }

    #[test]
    fn reference_footprint() {
        let fp = footprint(&ModelConfig::reference_single_class());
        assert_eq!(fp.input_bytes, 23_232);
        assert!(fp.weight_bytes <= 452_608);
        assert!(fp.activation_bytes <= 350 * 1024);
        assert_eq!(fp.weight_bytes, weight_bytes(&ModelConfig::reference_single_class()));
    }

    #[test]
    fn significant_figures() {
        assert_eq!(sig3(65.2727), "65.3");
        assert_eq!(sig3(31.122), "31.1");
        assert_eq!(sig3(1.0), "1.00");
        assert_eq!(sig3(107.0), "107");
        assert_eq!(sig3(6099.6), "6100");
        assert_eq!(sig3(0.25), "0.250");
    }

    #[test]
    fn csv_errors_have_lines() {
        let text = "# comment\ndevice,voltage_v,clock_mhz,latency_ms,power_mw\na,1.2,50,5.5,35.6\nb,1.2,zero,5.5,35.6\n";
        match parse_measurements(text, Path::new("m.csv")) {
            Err(Error::Annotation { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let text = "device,voltage_v,clock_mhz,latency_ms,power_mw\na,1.2,50,-5.5,35.6\n";
        assert!(matches!(parse_measurements(text, Path::new("m.csv")), Err(Error::Annotation { line: 2, .. })));
        let ok = parse_measurements("device,voltage_v,clock_mhz,latency_ms,power_mw\na,1.2,50,5.5,35.6\n", Path::new("m")).unwrap();
        let report = compare_report(&ok, &ModelConfig::reference_single_class(), None).unwrap();
        assert_eq!(report.devices[0].latency_vs_fastest, None);
    }
}
