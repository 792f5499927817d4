use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One CSV row of per-(sample, view) pose metrics. Errors in mm, `accel` in
/// mm/frame².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sample_id: String,
    pub view_id: String,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub accel: f64,
}

/// Write rows with a header line, columns in field order.
pub fn write_metric_csv<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
