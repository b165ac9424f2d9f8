//! Report files: per-concept CSVs and JSON summaries.
//!
//! CSV floats carry 17 significant digits so every value round-trips
//! exactly; undefined estimates print as `NA`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// 17 significant digits, enough to reproduce the exact f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), fmt_f64)
}

/// Write CSV rows (the first row is the header). Fields are joined with
/// commas; callers guarantee fields contain no commas or quotes.
pub fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        out.write_all(row.join(",").as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_roundtrips_exactly() {
        for x in [
            0.1,
            1.0 / 3.0,
            -2.5e-17,
            123456789.123456789,
            f64::MIN_POSITIVE,
        ] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn undefined_prints_na() {
        assert_eq!(fmt_opt(None), "NA");
        assert_eq!(fmt_opt(Some(0.5)), fmt_f64(0.5));
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(
            &path,
            &[
                vec!["a".into(), "b".into()],
                vec!["1".into(), "2".into()],
            ],
        )
        .unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,2\n");
    }
}
