//! File formats and the command implementations behind the `hgpo` binary.
//!
//! Traces are JSON Lines ([`trace`]), metrics and annotations are CSV, and
//! configs are canonical JSON with sorted keys ([`config`]). Floats are
//! written in shortest round-trip form so re-reading a file yields the exact
//! same bits.

pub mod commands;
pub mod config;
pub mod metrics;
pub mod trace;

pub use commands::{analyze, compare, prop1_check, train, AnalyzeConfig, AnalyzeSummary, CellOutcome, CompareSummary, Prop1Args, SummaryRow};
pub use config::{Command, RunConfig};
pub use metrics::write_metrics;
pub use trace::{group_records, read_trace, write_records, write_trace, TraceGroup, TraceRecord, TraceStep};

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        serde_json::to_string(&x).expect("finite floats always serialize")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e21, 0.0, 6.02214076e23] {
            assert_eq!(format_float(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(format_float(f64::NAN), "NaN");
    }
}
