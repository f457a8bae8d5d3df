//! Parsing and validation of raw per-ticker OHLCV CSV exports.
//!
//! Input files carry 14 columns (header names matched case-insensitively,
//! any column order): DATE, OPEN, HIGH, LOW, CLOSE, VOLUME, EX_DIVIDEND,
//! SPLIT_RATIO, ADJ_OPEN, ADJ_HIGH, ADJ_LOW, ADJ_CLOSE, ADJ_VOLUME,
//! ADJ_FACTOR. The model consumes only the ten price/volume features;
//! EX_DIVIDEND, SPLIT_RATIO and ADJ_FACTOR are dropped, DATE is kept as
//! sample metadata.

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Number of model features per bar (OHLCV plus adjusted OHLCV).
pub const NUM_FEATURES: usize = 10;

/// Feature slot of ADJ_CLOSE, the series labels are computed from.
pub const ADJ_CLOSE_SLOT: usize = 8;

const COLUMNS: [&str; 14] = [
    "date",
    "open",
    "high",
    "low",
    "close",
    "volume",
    "ex_dividend",
    "split_ratio",
    "adj_open",
    "adj_high",
    "adj_low",
    "adj_close",
    "adj_volume",
    "adj_factor",
];

/// One trading day exactly as exported: all 14 columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub ex_dividend: f64,
    pub split_ratio: f64,
    pub adj_open: f64,
    pub adj_high: f64,
    pub adj_low: f64,
    pub adj_close: f64,
    pub adj_volume: f64,
    pub adj_factor: f64,
}

/// The 10-feature projection of a bar, in the fixed canonical order
/// OPEN, HIGH, LOW, CLOSE, VOLUME, ADJ_OPEN, ADJ_HIGH, ADJ_LOW,
/// ADJ_CLOSE, ADJ_VOLUME.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBar {
    pub date: NaiveDate,
    pub features: [f64; NUM_FEATURES],
}

/// Clean, date-ordered feature series for one ticker.
#[derive(Debug, Clone)]
pub struct TickerSeries {
    pub symbol: String,
    pub bars: Vec<FeatureBar>,
}

/// One skipped or rejected input row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowDiagnostic {
    /// 1-based line number in the source file (header is line 1).
    pub line: u64,
    pub reason: String,
}

impl std::fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

/// Parse a CSV byte stream into raw bars.
///
/// Strict mode fails on the first malformed data row; lenient mode skips it
/// and records a diagnostic. A missing header column is fatal either way.
pub fn parse_csv(content: &[u8], lenient: bool) -> Result<(Vec<RawBar>, Vec<RowDiagnostic>)> {
    let text = std::str::from_utf8(content)
        .map_err(|e| Error::Data(format!("input is not UTF-8: {e}")))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::Data("empty file: no header row".into()));
    }

    // header-name lookup, case-insensitive, order-independent
    let mut index = [usize::MAX; 14];
    for (slot, name) in COLUMNS.iter().enumerate() {
        match headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
        {
            Some(i) => index[slot] = i,
            None => {
                return Err(Error::Data(format!(
                    "missing required column {} in header",
                    name.to_uppercase()
                )))
            }
        }
    }

    let mut bars = Vec::new();
    let mut diagnostics = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no as u64 + 2;
        let outcome = record
            .map_err(|e| format!("unreadable row: {e}"))
            .and_then(|rec| parse_record(&rec, &index));
        match outcome {
            Ok(bar) => bars.push(bar),
            Err(reason) if lenient => diagnostics.push(RowDiagnostic { line, reason }),
            Err(reason) => {
                return Err(Error::Data(format!("line {line}: {reason}")));
            }
        }
    }
    Ok((bars, diagnostics))
}

fn parse_record(rec: &csv::StringRecord, index: &[usize; 14]) -> std::result::Result<RawBar, String> {
    let field = |slot: usize| -> std::result::Result<&str, String> {
        rec.get(index[slot])
            .map(str::trim)
            .ok_or_else(|| format!("row has too few fields for column {}", COLUMNS[slot].to_uppercase()))
    };
    let num = |slot: usize| -> std::result::Result<f64, String> {
        let raw = field(slot)?;
        raw.parse::<f64>()
            .map_err(|_| format!("non-numeric {} value {raw:?}", COLUMNS[slot].to_uppercase()))
    };
    let date = NaiveDate::parse_from_str(field(0)?, "%Y-%m-%d")
        .map_err(|_| format!("unparseable DATE {:?}", field(0).unwrap_or("")))?;
    Ok(RawBar {
        date,
        open: num(1)?,
        high: num(2)?,
        low: num(3)?,
        close: num(4)?,
        volume: num(5)?,
        ex_dividend: num(6)?,
        split_ratio: num(7)?,
        adj_open: num(8)?,
        adj_high: num(9)?,
        adj_low: num(10)?,
        adj_close: num(11)?,
        adj_volume: num(12)?,
        adj_factor: num(13)?,
    })
}

/// Check the bar invariants, reporting the first violated one by field name.
pub fn validate_bar(bar: &RawBar) -> std::result::Result<(), String> {
    let prices = [
        ("open", bar.open),
        ("high", bar.high),
        ("low", bar.low),
        ("close", bar.close),
        ("adj_open", bar.adj_open),
        ("adj_high", bar.adj_high),
        ("adj_low", bar.adj_low),
        ("adj_close", bar.adj_close),
    ];
    for (name, v) in prices {
        if !v.is_finite() {
            return Err(format!("{name}: non-finite value"));
        }
        if v <= 0.0 {
            return Err(format!("{name}: non-positive price"));
        }
    }
    for (name, v) in [
        ("volume", bar.volume),
        ("adj_volume", bar.adj_volume),
        ("ex_dividend", bar.ex_dividend),
        ("split_ratio", bar.split_ratio),
        ("adj_factor", bar.adj_factor),
    ] {
        if !v.is_finite() {
            return Err(format!("{name}: non-finite value"));
        }
    }
    if bar.volume < 0.0 {
        return Err("volume: negative volume".into());
    }
    if bar.adj_volume < 0.0 {
        return Err("adj_volume: negative volume".into());
    }
    check_range("", bar.open, bar.high, bar.low, bar.close)?;
    check_range("adj_", bar.adj_open, bar.adj_high, bar.adj_low, bar.adj_close)?;
    Ok(())
}

fn check_range(prefix: &str, open: f64, high: f64, low: f64, close: f64) -> std::result::Result<(), String> {
    if high < low {
        return Err(format!("{prefix}high < {prefix}low"));
    }
    if low > open.min(close) {
        return Err(format!("{prefix}low above {prefix}open/{prefix}close"));
    }
    if high < open.max(close) {
        return Err(format!("{prefix}high below {prefix}open/{prefix}close"));
    }
    Ok(())
}

/// Project a validated bar onto its 10 model features.
pub fn select_features(bar: &RawBar) -> FeatureBar {
    FeatureBar {
        date: bar.date,
        features: [
            bar.open,
            bar.high,
            bar.low,
            bar.close,
            bar.volume,
            bar.adj_open,
            bar.adj_high,
            bar.adj_low,
            bar.adj_close,
            bar.adj_volume,
        ],
    }
}

/// Validate, project, and date-order raw bars into a [`TickerSeries`].
///
/// Strict mode fails on any invalid bar or duplicate date. Lenient mode
/// skips invalid bars and keeps the first bar of a duplicated date, with a
/// diagnostic for each dropped row.
pub fn build_series(
    symbol: &str,
    bars: &[RawBar],
    lenient: bool,
) -> Result<(TickerSeries, Vec<RowDiagnostic>)> {
    let mut diagnostics = Vec::new();
    let mut kept: Vec<FeatureBar> = Vec::with_capacity(bars.len());
    for (i, bar) in bars.iter().enumerate() {
        match validate_bar(bar) {
            Ok(()) => kept.push(select_features(bar)),
            Err(reason) if lenient => diagnostics.push(RowDiagnostic {
                line: i as u64 + 1,
                reason,
            }),
            Err(reason) => {
                return Err(Error::Data(format!("bar {} ({}): {reason}", i + 1, bar.date)))
            }
        }
    }
    kept.sort_by_key(|b| b.date);
    let mut out: Vec<FeatureBar> = Vec::with_capacity(kept.len());
    for bar in kept {
        if out.last().map(|p| p.date) == Some(bar.date) {
            if lenient {
                diagnostics.push(RowDiagnostic {
                    line: 0,
                    reason: format!("duplicate date {} dropped (keep-first)", bar.date),
                });
                continue;
            }
            return Err(Error::Data(format!("duplicate date {}", bar.date)));
        }
        out.push(bar);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("series {symbol}: no valid bars")));
    }
    Ok((
        TickerSeries {
            symbol: symbol.to_string(),
            bars: out,
        },
        diagnostics,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const HEADER: &str = "date,open,high,low,close,volume,ex_dividend,split_ratio,adj_open,adj_high,adj_low,adj_close,adj_volume,adj_factor";

    fn row(date: &str, o: f64, h: f64, l: f64, c: f64, v: f64) -> String {
        format!("{date},{o},{h},{l},{c},{v},0.0,1.0,{o},{h},{l},{c},{v},1.0")
    }

    fn sample_bar() -> RawBar {
        let csv = format!("{HEADER}\n{}", row("2017-01-03", 109.55, 110.1599, 109.13, 109.40, 8642514.0));
        parse_csv(csv.as_bytes(), false).unwrap().0.remove(0)
    }

    #[test]
    fn parses_cleaned_row() {
        let bar = sample_bar();
        assert_eq!(bar.open, 109.55);
        assert_eq!(bar.high, 110.1599);
        assert_eq!(bar.low, 109.13);
        assert_eq!(bar.close, 109.40);
        assert_eq!(bar.volume, 8642514.0);
        assert_eq!(bar.adj_open, 109.55);
        assert_eq!(bar.adj_volume, 8642514.0);
    }

    #[test]
    fn header_only_file_is_empty_not_error() {
        let (bars, diags) = parse_csv(HEADER.as_bytes(), false).unwrap();
        assert!(bars.is_empty());
        assert!(diags.is_empty());
    }

    #[test]
    fn empty_file_is_error() {
        assert!(parse_csv(b"", false).is_err());
    }

    #[test]
    fn missing_column_is_fatal() {
        let trimmed = HEADER.replace(",adj_factor", "");
        let err = parse_csv(trimmed.as_bytes(), true).unwrap_err();
        assert!(err.to_string().contains("ADJ_FACTOR"), "{err}");
    }

    #[test]
    fn lenient_skips_bad_volume_row_with_diagnostic() {
        let csv = format!(
            "{HEADER}\n{}\n{}\n2017-01-05,1,2,0.5,1.5,abc,0,1,1,2,0.5,1.5,10,1\n{}",
            row("2017-01-03", 1.0, 2.0, 0.5, 1.5, 10.0),
            row("2017-01-04", 1.0, 2.0, 0.5, 1.5, 10.0),
            row("2017-01-06", 1.0, 2.0, 0.5, 1.5, 10.0),
        );
        let (bars, diags) = parse_csv(csv.as_bytes(), true).unwrap();
        assert_eq!(bars.len(), 3);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].line, 4);
        assert!(diags[0].reason.contains("VOLUME"));
        // strict mode makes the same row fatal
        assert!(parse_csv(csv.as_bytes(), false).is_err());
    }

    #[test]
    fn header_order_independent() {
        let csv_a = format!("{HEADER}\n{}", row("2017-01-03", 1.0, 2.0, 0.5, 1.5, 10.0));
        let csv_b = "open,date,high,low,close,volume,ex_dividend,split_ratio,adj_open,adj_high,adj_low,adj_close,adj_volume,adj_factor\n\
                     1,2017-01-03,2,0.5,1.5,10,0.0,1.0,1,2,0.5,1.5,10,1.0";
        let a = parse_csv(csv_a.as_bytes(), false).unwrap().0;
        let b = parse_csv(csv_b.as_bytes(), false).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn validate_accepts_real_row_and_rejects_bad_ranges() {
        let mut bar = sample_bar();
        bar.open = 111.75;
        bar.high = 112.90;
        bar.low = 109.59;
        bar.close = 110.41;
        bar.adj_open = 111.75;
        bar.adj_high = 112.90;
        bar.adj_low = 109.59;
        bar.adj_close = 110.41;
        assert!(validate_bar(&bar).is_ok());

        let mut inverted = bar.clone();
        inverted.high = 100.0;
        inverted.low = 101.0;
        inverted.open = 100.5;
        inverted.close = 100.5;
        assert_eq!(validate_bar(&inverted).unwrap_err(), "high < low");

        let mut zero = bar.clone();
        zero.open = 0.0;
        assert!(validate_bar(&zero).unwrap_err().contains("non-positive price"));

        let mut outside = bar;
        outside.close = 200.0;
        assert!(validate_bar(&outside).unwrap_err().contains("high below"));
    }

    #[test]
    fn select_features_order_and_length() {
        let bar = sample_bar();
        let fb = select_features(&bar);
        assert_eq!(fb.features.len(), NUM_FEATURES);
        assert_eq!(
            fb.features,
            [109.55, 110.1599, 109.13, 109.40, 8642514.0, 109.55, 110.1599, 109.13, 109.40, 8642514.0]
        );
    }

    #[test]
    fn select_features_keeps_adjusted_slots_separate() {
        let mut bar = sample_bar();
        bar.adj_open = 54.775;
        bar.adj_high = 55.08;
        bar.adj_low = 54.565;
        bar.adj_close = 54.70;
        bar.adj_volume = 17285028.0;
        let fb = select_features(&bar);
        assert_eq!(&fb.features[0..5], &[109.55, 110.1599, 109.13, 109.40, 8642514.0]);
        assert_eq!(&fb.features[5..10], &[54.775, 55.08, 54.565, 54.70, 17285028.0]);
    }

    #[test]
    fn build_series_sorts_by_date() {
        let csv = format!(
            "{HEADER}\n{}\n{}\n{}",
            row("2017-01-05", 1.0, 2.0, 0.5, 1.5, 10.0),
            row("2017-01-03", 1.0, 2.0, 0.5, 1.5, 10.0),
            row("2017-01-04", 1.0, 2.0, 0.5, 1.5, 10.0),
        );
        let (bars, _) = parse_csv(csv.as_bytes(), false).unwrap();
        let (series, diags) = build_series("TST", &bars, false).unwrap();
        assert!(diags.is_empty());
        let dates: Vec<_> = series.bars.iter().map(|b| b.date).collect();
        assert!(dates.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn duplicate_date_strict_vs_lenient() {
        let csv = format!(
            "{HEADER}\n{}\n{}",
            row("2017-01-03", 1.0, 2.0, 0.5, 1.5, 10.0),
            row("2017-01-03", 3.0, 4.0, 2.5, 3.5, 10.0),
        );
        let (bars, _) = parse_csv(csv.as_bytes(), false).unwrap();
        let err = build_series("TST", &bars, false).unwrap_err();
        assert!(err.to_string().contains("2017-01-03"));
        let (series, diags) = build_series("TST", &bars, true).unwrap();
        assert_eq!(series.bars.len(), 1);
        assert_eq!(series.bars[0].features[0], 1.0); // keep-first
        assert_eq!(diags.len(), 1);
    }

    #[test]
    fn lenient_build_skips_invalid_bar() {
        let csv = format!(
            "{HEADER}\n{}\n{}\n{}\n{}\n{}",
            row("2017-01-03", 1.0, 2.0, 0.5, 1.5, 10.0),
            row("2017-01-04", 1.0, 2.0, 0.5, 1.5, 10.0),
            row("2017-01-05", 1.0, 0.4, 0.5, 0.45, 10.0), // high < low
            row("2017-01-06", 1.0, 2.0, 0.5, 1.5, 10.0),
            row("2017-01-09", 1.0, 2.0, 0.5, 1.5, 10.0),
        );
        let (bars, _) = parse_csv(csv.as_bytes(), false).unwrap();
        let (series, diags) = build_series("TST", &bars, true).unwrap();
        assert_eq!(series.bars.len(), 4);
        assert_eq!(diags.len(), 1);
    }
}
