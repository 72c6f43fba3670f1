//! CSV ingestion of price panels, return and sign transforms, categorical
//! stacking, and a plain CSV format for observation panels.
//!
//! Files are comma-separated with a mandatory header row. Leading lines
//! starting with `#` carry free-form metadata and are skipped on input.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Series;

/// Closing prices, one row per date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePanel {
    pub dates: Vec<String>,
    pub tickers: Vec<String>,
    /// Row-major `T × d`.
    pub prices: Vec<Vec<f64>>,
}

impl PricePanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tickers.len()
    }
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
    if !(digits(0..4) && digits(5..7) && digits(8..10)) {
        return false;
    }
    let month: u32 = s[5..7].parse().unwrap_or(0);
    let day: u32 = s[8..10].parse().unwrap_or(0);
    (1..=12).contains(&month) && (1..=31).contains(&day)
}

/// Strips `#` metadata lines and returns the remaining text together with
/// the number of lines removed (so error messages can cite file lines).
fn strip_metadata(text: &str) -> (usize, String) {
    let mut skipped = 0;
    let mut lines = text.lines().peekable();
    while let Some(line) = lines.peek() {
        if line.starts_with('#') {
            skipped += 1;
            lines.next();
        } else {
            break;
        }
    }
    let body: Vec<&str> = lines.collect();
    (skipped, body.join("\n"))
}

/// Reads a price panel: header `date,<ticker>,…`, ISO-8601 dates strictly
/// increasing, strictly positive prices and no empty cells.
pub fn read_prices<R: Read>(mut reader: R) -> Result<PricePanel> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let (offset, body) = strip_metadata(&text);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let csv_err = |line: usize, msg: String| Error::Csv { line, msg };

    let header = rdr.headers().map_err(|e| csv_err(offset + 1, e.to_string()))?.clone();
    if header.len() < 2 {
        return Err(csv_err(offset + 1, "header needs a date column and at least one ticker".into()));
    }
    let tickers: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if tickers.iter().any(String::is_empty) {
        return Err(csv_err(offset + 1, "empty ticker name in header".into()));
    }

    let mut dates: Vec<String> = Vec::new();
    let mut prices = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let line = offset + k + 2;
        let record = record.map_err(|e| csv_err(line, e.to_string()))?;
        if record.len() != tickers.len() + 1 {
            return Err(csv_err(line, format!("expected {} fields, found {}", tickers.len() + 1, record.len())));
        }
        let date = record[0].trim();
        if !is_iso_date(date) {
            return Err(csv_err(line, format!("'{date}' is not an ISO-8601 date (YYYY-MM-DD)")));
        }
        if let Some(prev) = dates.last() {
            if date == prev.as_str() {
                return Err(csv_err(line, format!("duplicate date {date}")));
            }
            if date < prev.as_str() {
                return Err(csv_err(line, format!("date {date} is earlier than {prev}")));
            }
        }
        let mut row = Vec::with_capacity(tickers.len());
        for (j, cell) in record.iter().skip(1).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(csv_err(line, format!("missing price for {} on {date}", tickers[j])));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| csv_err(line, format!("'{cell}' is not a number ({} on {date})", tickers[j])))?;
            if !(v > 0.0) || !v.is_finite() {
                return Err(csv_err(line, format!("price {v} for {} on {date} must be positive", tickers[j])));
            }
            row.push(v);
        }
        dates.push(date.to_string());
        prices.push(row);
    }
    if prices.len() < 2 {
        return Err(Error::InvalidData("a price panel needs at least two dates".into()));
    }
    Ok(PricePanel { dates, tickers, prices })
}

pub fn ingest_prices(path: impl AsRef<Path>) -> Result<PricePanel> {
    read_prices(std::fs::File::open(path)?)
}

/// Log returns `log P_t − log P_{t−1}`; `T − 1` rows.
pub fn to_returns(panel: &PricePanel) -> Result<Vec<Vec<f64>>> {
    if panel.len() < 2 {
        return Err(Error::InvalidData("need at least two prices for a return".into()));
    }
    Ok(panel
        .prices
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a.ln() - b.ln()).collect())
        .collect())
}

/// `1` for a non-negative return, `0` otherwise.
pub fn binarize_returns(returns: &[Vec<f64>]) -> Result<Series> {
    if returns.iter().flatten().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("returns".into()));
    }
    let rows: Vec<Vec<f64>> =
        returns.iter().map(|row| row.iter().map(|&r| if r >= 0.0 { 1.0 } else { 0.0 }).collect()).collect();
    Series::from_rows(&rows)
}

/// Encodes categories `1..=M` as indicators of the first `M − 1` categories.
///
/// Output columns are category-major: the indicator of category `j`
/// (`1 ≤ j ≤ M − 1`) for coordinate `i` sits at column `(j − 1)·d + i`.
/// Category `M` is the all-zero block.
pub fn categorical_stack(categories: &[Vec<usize>], m: usize) -> Result<Series> {
    if m < 2 {
        return Err(Error::InvalidSpec(format!("need at least two categories, got {m}")));
    }
    let d = categories.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::Dimension("empty categorical panel".into()));
    }
    let q = m - 1;
    let mut rows = Vec::with_capacity(categories.len());
    for (t, obs) in categories.iter().enumerate() {
        if obs.len() != d {
            return Err(Error::Dimension(format!("row {} has {} entries, expected {d}", t + 1, obs.len())));
        }
        let mut row = vec![0.0; d * q];
        for (i, &c) in obs.iter().enumerate() {
            if c == 0 || c > m {
                return Err(Error::InvalidData(format!("category {c} at t = {}, series {} outside 1..={m}", t + 1, i + 1)));
            }
            if c < m {
                row[(c - 1) * d + i] = 1.0;
            }
        }
        rows.push(row);
    }
    Series::from_rows(&rows)
}

/// Writes a panel as CSV: `# key: value` metadata lines, a header of series
/// names, then one row per time point. Numbers use the shortest
/// representation that round-trips.
pub fn write_series<W: Write>(mut w: W, series: &Series, metadata: &[(String, String)]) -> Result<()> {
    for (k, v) in metadata {
        writeln!(w, "# {k}: {}", v.replace('\n', " "))?;
    }
    writeln!(w, "{}", series.names().join(","))?;
    for t in 0..series.len() {
        let cells: Vec<String> = series.row(t).iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Reads a panel written by [`write_series`] (or any headed numeric CSV).
pub fn read_series<R: Read>(mut reader: R) -> Result<Series> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let (offset, body) = strip_metadata(&text);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Csv { line: offset + 1, msg: e.to_string() })?.clone();
    let names: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    let n = names.len();
    let mut values = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let line = offset + k + 2;
        let record = record.map_err(|e| Error::Csv { line, msg: e.to_string() })?;
        if record.len() != n {
            return Err(Error::Csv { line, msg: format!("expected {n} fields, found {}", record.len()) });
        }
        for cell in record.iter() {
            let v: f64 =
                cell.trim().parse().map_err(|_| Error::Csv { line, msg: format!("'{cell}' is not a number") })?;
            values.push(v);
        }
    }
    Series::with_names(values, n, names)
}

pub fn load_series(path: impl AsRef<Path>) -> Result<Series> {
    read_series(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "date,AAA,BBB\n2020-03-31,10,20\n2020-06-30,11,19.5\n2020-09-30,12.5,21\n";

    #[test]
    fn reads_well_formed_panel() {
        let p = read_prices(GOOD.as_bytes()).unwrap();
        assert_eq!((p.len(), p.dim()), (3, 2));
        assert_eq!(p.tickers, vec!["AAA", "BBB"]);
        assert_eq!(p.prices[1], vec![11.0, 19.5]);
    }

    #[test]
    fn rejects_bad_cells_with_line_numbers() {
        let zero = "date,AAA,BBB\n2020-03-31,10,20\n2020-06-30,0,19.5\n";
        match read_prices(zero.as_bytes()) {
            Err(Error::Csv { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("AAA"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        let dup = "date,AAA\n2020-03-31,10\n2020-03-31,11\n";
        assert!(matches!(read_prices(dup.as_bytes()), Err(Error::Csv { line: 3, .. })));
        let gap = "date,AAA,BBB\n2020-03-31,10,\n2020-06-30,1,2\n";
        assert!(matches!(read_prices(gap.as_bytes()), Err(Error::Csv { line: 2, .. })));
        let baddate = "date,AAA\n31/03/2020,10\n2020-06-30,1\n";
        assert!(read_prices(baddate.as_bytes()).is_err());
    }

    #[test]
    fn metadata_lines_shift_line_numbers() {
        let text = format!("# source: test\n{}", "date,AAA\n2020-03-31,10\n2020-06-30,-1\n");
        assert!(matches!(read_prices(text.as_bytes()), Err(Error::Csv { line: 4, .. })));
    }

    #[test]
    fn returns_and_signs() {
        let p = PricePanel {
            dates: vec!["2020-01-01".into(), "2020-02-01".into(), "2020-03-01".into()],
            tickers: vec!["X".into(), "Y".into()],
            prices: vec![vec![1.0, 5.0], vec![std::f64::consts::E, 5.0], vec![1.0, 5.0]],
        };
        let r = to_returns(&p).unwrap();
        assert!((r[0][0] - 1.0).abs() < 1e-15);
        assert_eq!(r[0][1], 0.0);
        let y = binarize_returns(&[vec![0.02, -0.03, 0.0], vec![-0.01, 0.0, 1.0]]).unwrap();
        assert_eq!(y.row(0), &[1.0, 0.0, 1.0]);
        assert_eq!(y.row(1), &[0.0, 1.0, 1.0]);
        let y = binarize_returns(&r).unwrap();
        assert_eq!(y.row(0), &[1.0, 1.0]);
        assert_eq!(y.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn stacking_layout() {
        let s = categorical_stack(&[vec![1, 2], vec![3, 3]], 3).unwrap();
        assert_eq!(s.row(0), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.row(1), &[0.0, 0.0, 0.0, 0.0]);
        let binary = categorical_stack(&[vec![1], vec![2]], 2).unwrap();
        assert_eq!(binary.as_slice(), &[1.0, 0.0]);
        assert!(categorical_stack(&[vec![4]], 3).is_err());
        assert!(categorical_stack(&[vec![0]], 3).is_err());
    }

    #[test]
    fn series_round_trip() {
        let s = Series::from_rows(&[vec![1.0, 0.25], vec![3.0, 1e-17]]).unwrap();
        let mut buf = Vec::new();
        write_series(&mut buf, &s, &[("seed".into(), "7".into())]).unwrap();
        let back = read_series(buf.as_slice()).unwrap();
        assert_eq!(back.as_slice(), s.as_slice());
        assert_eq!(back.names(), s.names());
        let mut again = Vec::new();
        write_series(&mut again, &back, &[("seed".into(), "7".into())]).unwrap();
        assert_eq!(buf, again);
    }
}
