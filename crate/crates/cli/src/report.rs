//! Report tables as CSV (median per cell) and JSON (everything, including
//! per-seed error counts).

use std::path::Path;

use isib_core::experiment::ReportTable;

use crate::dataset::write_json;
use crate::error::{CliError, Result};

pub fn write_table(dir: &Path, stem: &str, table: &ReportTable) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::format(&csv_path, e))?;
    let mut header = vec!["row".to_string(), "init".into(), "diffkm".into(), "alpha".into()];
    header.extend(table.conditions.iter().cloned());
    w.write_record(&header).map_err(|e| CliError::format(&csv_path, e))?;
    for row in &table.rows {
        let mut rec = vec![
            row.key.label(),
            row.key.init.as_str().to_string(),
            row.key.diffkm.to_string(),
            row.key.alpha.map_or_else(String::new, |a| a.to_string()),
        ];
        rec.extend(row.cells.iter().map(|c| c.median.map_or_else(String::new, |m| m.to_string())));
        w.write_record(&rec).map_err(|e| CliError::format(&csv_path, e))?;
    }
    w.flush().map_err(CliError::io(&csv_path))?;
    write_json(&dir.join(format!("{stem}.json")), table)
}
