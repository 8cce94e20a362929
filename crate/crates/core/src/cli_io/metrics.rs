//! Per-epoch metrics CSV.

use std::io::Write;

use super::{format_float, format_opt};
use crate::error::{HgpoError, Result};
use crate::optimizer::MetricsRow;

/// Writes the header from [`MetricsRow::header`] and one line per row.
pub fn write_metrics<W: Write>(writer: W, k: usize, rows: &[MetricsRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(MetricsRow::header(k))?;
    for row in rows {
        if row.avg_group_size.len() != k + 1 {
            return Err(HgpoError::invalid(format!(
                "metrics row for epoch {} has {} group-size columns, expected {}",
                row.epoch,
                row.avg_group_size.len(),
                k + 1
            )));
        }
        let mut record = vec![
            row.epoch.to_string(),
            format_float(row.mean_reward),
            format_float(row.success_rate),
            format_float(row.mean_advantage),
            format_float(row.pg_loss),
            format_float(row.kl),
            format_float(row.clip_fraction),
            format_float(row.oracle_step_ratio),
        ];
        record.extend(row.avg_group_size.iter().map(|&x| format_float(x)));
        record.extend([row.bias_traj, row.bias_step, row.bias_hgpo].map(format_opt));
        out.write_record(&record)?;
    }
    out.flush()?;
    Ok(())
}
