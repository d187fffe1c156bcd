//! Small CSV helpers shared by the output formats.

use crate::error::{Error, Result};

/// 17-significant-digit decimal, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parses a numeric CSV whose header must equal `expected` exactly.
/// Returns one vector per column.
pub fn parse_csv_table(text: &str, expected: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != expected {
        return Err(Error::Parse(format!(
            "expected header `{}`, found `{header}`",
            expected.join(",")
        )));
    }
    let mut out = vec![Vec::new(); expected.len()];
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected.len() {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {}",
                row + 1,
                fields.len(),
                expected.len()
            )));
        }
        for (c, f) in fields.iter().enumerate() {
            let v = f
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}, column {}: {e}", row + 1, expected[c])))?;
            out[c].push(v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_has_17_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.0), "0.0000000000000000e0");
    }

    #[test]
    fn rejects_bad_header_and_rows() {
        assert!(parse_csv_table("a,b\n1,2\n", &["t", "value"]).is_err());
        assert!(parse_csv_table("t,value\n1\n", &["t", "value"]).is_err());
        assert!(parse_csv_table("t,value\n1,x\n", &["t", "value"]).is_err());
        let cols = parse_csv_table("t,value\n0,1.5\n1,2.5\n", &["t", "value"]).unwrap();
        assert_eq!(cols[1], vec![1.5, 2.5]);
    }
}
