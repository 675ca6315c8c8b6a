//! Two-column CSV reading shared by the supply config and demand ingestion.

use std::io::Read;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv parse error: {0}")]
    Parse(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("no data rows")]
    Empty,
}

/// Picks `;` when the header line contains one and no comma, else `,`.
fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    if header.contains(';') && !header.contains(',') {
        b';'
    } else {
        b','
    }
}

/// Reads `(time, value)` pairs from CSV text with a header row.
pub fn parse_two_columns(text: &str) -> Result<(Vec<f64>, Vec<f64>), CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(text))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(CsvError::Row {
                row: row + 2,
                reason: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| CsvError::Row {
                row: row + 2,
                reason: format!("`{s}`: {e}"),
            })
        };
        times.push(parse(&record[0])?);
        values.push(parse(&record[1])?);
    }
    if times.is_empty() {
        return Err(CsvError::Empty);
    }
    Ok((times, values))
}

pub fn read_two_columns(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CsvError> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| CsvError::Io {
            path: path.display().to_string(),
            source,
        })?;
    parse_two_columns(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comma_and_semicolon() {
        let (t, v) = parse_two_columns("time_hours,value\n0,1.5\n1, 2\n").unwrap();
        assert_eq!((t, v), (vec![0.0, 1.0], vec![1.5, 2.0]));
        let (t, v) = parse_two_columns("time_hours;value\n0;3\n2;4\n").unwrap();
        assert_eq!((t, v), (vec![0.0, 2.0], vec![3.0, 4.0]));
    }

    #[test]
    fn reports_bad_rows() {
        assert!(matches!(parse_two_columns("time_hours,value\n"), Err(CsvError::Empty)));
        assert!(matches!(
            parse_two_columns("time_hours,value\n0,abc\n"),
            Err(CsvError::Row { row: 2, .. })
        ));
    }
}
