//! CSV and JSON output.
//!
//! Floats are written like C's `%.10g`; path coordinates use `%.17g` so a
//! path written and read back is bit-identical.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

/// Formats `x` like C's `%.{sig}g`.
pub fn fmt_g(x: f64, sig: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sig = sig.max(1);
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= sig as i32 {
        let mantissa = strip_zeros(mantissa);
        format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `%.10g`, the default for tabular output.
pub fn g10(x: f64) -> String {
    fmt_g(x, 10)
}

/// A CSV table with a fixed header.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Renders the table, preceded by `comments` as `# ` lines.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            for line in c.lines() {
                let _ = writeln!(out, "# {line}");
            }
        }
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Pretty JSON of any serializable record.
pub fn to_json<T: Serialize>(record: &T) -> String {
    serde_json::to_string_pretty(record).expect("records serialize")
}

/// Writes `contents` to `path`, or to stdout when `path` is `None` or `-`.
pub fn write_output(path: Option<&Path>, contents: &str) -> io::Result<()> {
    match path {
        Some(p) if p.as_os_str() != "-" => std::fs::write(p, contents),
        _ => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(contents.as_bytes())?;
            stdout.flush()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_c_general_format() {
        assert_eq!(fmt_g(0.0, 10), "0");
        assert_eq!(fmt_g(1.0, 10), "1");
        assert_eq!(fmt_g(0.5, 10), "0.5");
        assert_eq!(fmt_g(std::f64::consts::LN_2, 10), "0.6931471806");
        assert_eq!(fmt_g(123456.0, 3), "1.23e+05");
        assert_eq!(fmt_g(1e-5, 10), "1e-05");
        assert_eq!(fmt_g(0.0001234, 10), "0.0001234");
        assert_eq!(fmt_g(-2.5e20, 10), "-2.5e+20");
        assert_eq!(fmt_g(1e10, 10), "1e+10");
        assert_eq!(fmt_g(999999.99999, 10), "1000000");
        assert_eq!(fmt_g(f64::INFINITY, 10), "inf");
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, std::f64::consts::PI * 1e-7, 6.02214076e23, 2f64.sqrt() - 1.0] {
            assert_eq!(fmt_g(x, 17).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn table_renders_comments_and_rows() {
        let mut t = Table::new(&["n", "p"]);
        t.push(vec!["1".into(), g10(0.25)]);
        assert_eq!(t.to_csv(&["seed = 3".into()]), "# seed = 3\nn,p\n1,0.25\n");
    }
}
