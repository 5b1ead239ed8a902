use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{BacktestReport, PipelineError, Result};
use crate::market_data::csv_io::format_timestamp;
use crate::market_data::write_csv_to;

pub const REPORT_FILE: &str = "report.json";

/// Everything `write_outputs` produces, in write order.
pub const OUTPUT_FILES: [&str; 5] = [REPORT_FILE, "bars.csv", "signals.csv", "snapshots.csv", "trades.csv"];

const SIGNALS_HEADER: [&str; 4] = ["timestamp", "side", "trigger_price", "strategy"];
const SNAPSHOTS_HEADER: [&str; 5] = ["timestamp", "cash", "units", "holding_value", "total"];
const TRADES_HEADER: [&str; 5] = ["timestamp", "side", "price", "units", "fee_paid"];

fn unwritable(path: &Path, e: impl ToString) -> PipelineError {
    PipelineError::UnwritableOutput {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| unwritable(path, e))
}

fn write_rows<const N: usize>(path: &Path, header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| unwritable(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| unwritable(path, e))?;
    }
    w.flush().map_err(|e| unwritable(path, e))
}

/// Loads a report previously written by [`write_outputs`].
pub fn read_report(path: &Path) -> Result<BacktestReport> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Report(format!("cannot read {}: {e}", path.display())))?;
    let report: BacktestReport = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Report(format!("{} is not a valid report: {e}", path.display())))?;
    report.validate()?;
    Ok(report)
}

/// Writes `report.json` plus the bars, signals, snapshots and trades CSVs into
/// `out_dir`, creating it if needed. Returns the written paths.
pub fn write_outputs(report: &BacktestReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| unwritable(out_dir, e))?;
    let paths: Vec<PathBuf> = OUTPUT_FILES.iter().map(|f| out_dir.join(f)).collect();

    let mut json = serde_json::to_vec_pretty(report).map_err(|e| PipelineError::Report(e.to_string()))?;
    json.push(b'\n');
    std::fs::write(&paths[0], json).map_err(|e| unwritable(&paths[0], e))?;

    let series = report.series()?;
    let mut bars = create(&paths[1])?;
    write_csv_to(&series, &mut bars).map_err(|e| unwritable(&paths[1], e))?;
    bars.flush().map_err(|e| unwritable(&paths[1], e))?;

    write_rows(
        &paths[2],
        SIGNALS_HEADER,
        report.signals.iter().map(|s| {
            [
                format_timestamp(&s.timestamp),
                s.side.to_string(),
                s.trigger_price.to_string(),
                s.strategy.to_string(),
            ]
        }),
    )?;
    write_rows(
        &paths[3],
        SNAPSHOTS_HEADER,
        report.snapshots.iter().map(|s| {
            [
                format_timestamp(&s.timestamp),
                s.cash.to_string(),
                s.units.to_string(),
                s.holding_value.to_string(),
                s.total.to_string(),
            ]
        }),
    )?;
    write_rows(
        &paths[4],
        TRADES_HEADER,
        report.trades.iter().map(|t| {
            [
                format_timestamp(&t.timestamp),
                t.side.to_string(),
                t.price.to_string(),
                t.units.to_string(),
                t.fee_paid.to_string(),
            ]
        }),
    )?;
    Ok(paths)
}
