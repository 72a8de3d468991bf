use std::path::Path;

use super::IterationRecord;
use crate::error::{Error, Result};

/// First line of every history file.
pub const HISTORY_SCHEMA: &str = "# seggrow history v1";

fn optional(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Column names, after the schema line.
pub const HISTORY_COLUMNS: &str = "k,mean_loss,mean_task2_dice_vs_gt,wall_seconds";

/// One row per outer iteration. Values use the shortest exact decimal
/// form, so identical runs give identical files apart from `wall_seconds`.
pub fn history_csv(records: &[IterationRecord]) -> String {
    let mut out = format!("{HISTORY_SCHEMA}\n{HISTORY_COLUMNS}\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{:.3}\n",
            r.k,
            optional(r.mean_loss),
            optional(r.approximation_dice),
            r.wall_seconds
        ));
    }
    out
}

pub fn write_history(path: &Path, records: &[IterationRecord]) -> Result<()> {
    std::fs::write(path, history_csv(records)).map_err(|e| Error::io(path, e))
}
