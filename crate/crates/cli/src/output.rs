//! CSV rendering of loss curves and their across-seed summaries.

use std::fmt::Write as _;

use stratext_core::learning::Mode;

pub const RECORD_HEADER: &str = "experiment,mode,seed,epoch,k,alpha,beta,train_loss,val_loss";
pub const SUMMARY_HEADER: &str =
    "experiment,mode,epoch,k,alpha,beta,seeds,train_mean,train_p05,train_p95,val_mean,val_p05,val_p95";

/// One epoch of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRecord {
    pub experiment: String,
    pub mode: Mode,
    pub seed: u64,
    /// Counted from 1.
    pub epoch: usize,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Mean and 5th/95th percentiles across seeds for one (cell, mode, epoch).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub experiment: String,
    pub mode: Mode,
    pub epoch: usize,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seeds: usize,
    pub train: Interval,
    pub val: Interval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub p05: f64,
    pub p95: f64,
}

impl Interval {
    /// Mean with the 5th and 95th percentiles. Panics on an empty sample.
    pub fn of(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "interval of an empty sample");
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            p05: percentile(&sorted, 0.05),
            p95: percentile(&sorted, 0.95),
        }
    }
}

/// Percentile of sorted data, interpolating linearly between order
/// statistics at rank `q (n - 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Shortest rendering with nine significant digits, switching to exponent
/// form outside `[1e-5, 1e9)`.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let fixed = format!("{:.*}", (8 - exp) as usize, v);
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn render_records(records: &[CsvRecord]) -> String {
    let mut out = String::from(RECORD_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.mode.name(),
            r.seed,
            r.epoch,
            r.k,
            format_sig(r.alpha),
            format_sig(r.beta),
            format_sig(r.train_loss),
            format_sig(r.val_loss)
        )
        .unwrap();
    }
    out
}

pub fn render_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let cells = [r.train.mean, r.train.p05, r.train.p95, r.val.mean, r.val.p05, r.val.p95]
            .map(format_sig)
            .join(",");
        writeln!(
            out,
            "{},{},{},{},{},{},{},{cells}",
            r.experiment,
            r.mode.name(),
            r.epoch,
            r.k,
            format_sig(r.alpha),
            format_sig(r.beta),
            r.seeds,
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig(0.61803398875), "0.618033989");
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(-2.5), "-2.5");
        assert_eq!(format_sig(123456789.4), "123456789");
        assert_eq!(format_sig(1234567890.0), "1.23456789e9");
        assert_eq!(format_sig(0.000012345678912), "0.0000123456789");
        assert_eq!(format_sig(1.5e-7), "1.5e-7");
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(9.999999999), "10");
    }

    #[test]
    fn percentile_endpoints_and_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 5.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert!((percentile(&v, 0.05) - 1.2).abs() < 1e-15);
        assert_eq!(Interval::of(&[7.0]), Interval { mean: 7.0, p05: 7.0, p95: 7.0 });
    }

    #[test]
    fn header_is_fixed() {
        assert_eq!(render_records(&[]), format!("{RECORD_HEADER}\n"));
    }
}
