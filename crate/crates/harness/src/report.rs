//! Report files: `sweep.csv`, `pareto.csv` and `stages.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use bwnet_core::{pareto_front, StageReport, SweepPoint};
use serde_json::Value;

use crate::error::{HarnessError, Result};

pub const SWEEP_HEADER: &str = "threshold,lambda,bandwidth,accuracy";
pub const SIGNIFICANT_DIGITS: usize = 9;

/// `x` with nine significant digits, positional for moderate exponents and
/// scientific otherwise.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    let exp: i32 = sci[sci.find('e').expect("scientific notation") + 1..]
        .parse()
        .expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    }
}

/// `x` rounded to nine significant digits.
pub fn round_sig(x: f64) -> f64 {
    format_sig(x).parse().unwrap_or(x)
}

fn csv_rows(points: &[SweepPoint]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            format_sig(p.threshold),
            format_sig(p.lambda),
            format_sig(p.bandwidth),
            format_sig(p.accuracy)
        );
    }
    out
}

fn round_numbers(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = round_sig(n.as_f64().expect("f64 number"));
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to nine significant digits.
pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_numbers(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportFiles {
    pub sweep: PathBuf,
    pub pareto: PathBuf,
    pub stages: PathBuf,
}

pub fn emit_report(points: &[SweepPoint], stages: &[StageReport], dir: &Path) -> Result<ReportFiles> {
    if points.is_empty() {
        return Err(HarnessError::Config("no sweep points to report".into()));
    }
    if stages.is_empty() {
        return Err(HarnessError::Config("no stage reports to report".into()));
    }
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let files = ReportFiles {
        sweep: dir.join("sweep.csv"),
        pareto: dir.join("pareto.csv"),
        stages: dir.join("stages.json"),
    };
    write_file(&files.sweep, &csv_rows(points))?;
    write_file(&files.pareto, &csv_rows(&pareto_front(points)))?;
    write_file(&files.stages, &to_json(&stages)?)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig(129.0 / 1125.0), "0.114666667");
        assert_eq!(format_sig(1.0), "1.00000000");
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(123456.789012), "123456.789");
        assert_eq!(format_sig(4.0 / 1125.0), "0.00355555556");
        assert_eq!(format_sig(1.5e-9), "1.50000000e-9");
        assert_eq!(round_sig(2.0 / 3.0), 0.666666667);
    }
}
