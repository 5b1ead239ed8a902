use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};

use super::{AssetClass, Bar, Interval, MarketDataError, PriceSeries, Result};

pub const CSV_HEADER: &str = "timestamp,open,high,low,close,volume";

const TIME_COLUMNS: [&str; 4] = ["timestamp", "date", "datetime", "time"];

/// Loads a series from an OHLCV CSV file. The symbol is the file stem, minus a
/// trailing `_<interval>` if present.
pub fn load_csv(path: impl AsRef<Path>, asset_class: AssetClass, interval: Interval) -> Result<PriceSeries> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "UNKNOWN".to_string());
    let symbol = match stem.strip_suffix(&format!("_{interval}")) {
        Some(s) if !s.is_empty() => s.to_string(),
        _ => stem,
    };
    let file = File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    parse_csv(file, symbol, asset_class, interval)
}

/// Parses OHLCV CSV from any reader. Extra columns are ignored, rows may be in
/// any order, and each row is validated; row numbers in errors are 1-based and
/// exclude the header.
pub fn parse_csv<R: Read>(
    reader: R,
    symbol: impl Into<String>,
    asset_class: AssetClass,
    interval: Interval,
) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| MarketDataError::UnparseableRow {
            row: 0,
            reason: e.to_string(),
        })?
        .clone();
    let find = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
    };
    let ts_col = find(&TIME_COLUMNS).ok_or_else(|| MarketDataError::MissingColumn("timestamp".into()))?;
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(["open", "high", "low", "close", "volume"]) {
        *slot = find(&[name]).ok_or_else(|| MarketDataError::MissingColumn(name.into()))?;
    }

    let mut bars = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let unparseable = |reason: String| MarketDataError::UnparseableRow { row, reason };
        let record = record.map_err(|e| unparseable(e.to_string()))?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let timestamp = parse_timestamp(field(ts_col)).map_err(unparseable)?;
        let mut values = [0f64; 5];
        for (v, &idx) in values.iter_mut().zip(cols.iter()) {
            let raw = field(idx);
            *v = raw
                .parse::<f64>()
                .map_err(|_| unparseable(format!("`{raw}` is not a number")))?;
        }
        let bar = Bar {
            timestamp,
            open: values[0],
            high: values[1],
            low: values[2],
            close: values[3],
            volume: values[4],
        };
        bar.validate().map_err(unparseable)?;
        bars.push(bar);
    }

    if bars.is_empty() {
        return Err(MarketDataError::EmptySeries);
    }
    PriceSeries::from_unsorted(symbol, asset_class, interval, bars)
}

/// Accepts RFC 3339 or naive `YYYY-MM-DD[ HH:MM[:SS]]`, naive values read as UTC.
pub(crate) fn parse_timestamp(raw: &str) -> std::result::Result<DateTime<Utc>, String> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(naive.and_utc());
        }
    }
    if let Ok(date) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return Ok(date.and_hms_opt(0, 0, 0).expect("midnight").and_utc());
    }
    Err(format!("unrecognised timestamp `{raw}`"))
}

pub(crate) fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Writes `series` in the canonical CSV layout.
pub fn write_csv_to<W: Write>(series: &PriceSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_io = |e: csv::Error| MarketDataError::Io(e.into());
    w.write_record(CSV_HEADER.split(',')).map_err(to_io)?;
    for b in series.bars() {
        w.write_record([
            format_timestamp(&b.timestamp),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.close.to_string(),
            b.volume.to_string(),
        ])
        .map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(series: &PriceSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_csv_to(series, File::create(path)?)
}
