// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Deterministic rendering of command results as CSV or JSON.
//!
//! All floating-point values are printed with 12 significant digits,
//! switching to scientific notation below `1e-3` in magnitude, so emitted
//! files are byte-stable across runs and reload to the original values
//! within one unit of the twelfth digit.

use std::fmt::Write as _;
use std::path::PathBuf;

use tripex::error::{Error, Result};

/// Output encoding of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutFormat {
    Csv,
    Json,
}

/// Where a command writes its document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutTarget {
    Stdout,
    File(PathBuf),
}

impl OutTarget {
    /// `-` selects stdout; anything else is a file path.
    pub fn parse(text: &str) -> Self {
        if text == "-" {
            OutTarget::Stdout
        } else {
            OutTarget::File(PathBuf::from(text))
        }
    }

    /// Write the rendered document (stdout gets it verbatim).
    pub fn write(&self, body: &str) -> Result<()> {
        match self {
            OutTarget::Stdout => {
                print!("{body}");
                Ok(())
            }
            OutTarget::File(path) => {
                std::fs::write(path, body).map_err(|source| Error::Io {
                    path: path.display().to_string(),
                    source,
                })
            }
        }
    }
}

/// Render a float with 12 significant digits (scientific below 1e-3).
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        // Not representable in CSV/JSON numerics; only reachable through a
        // caller bug, so make it visible rather than panicking.
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let magnitude = x.abs();
    if magnitude < 1e-3 {
        format!("{x:.11e}")
    } else {
        let exponent = magnitude.log10().floor() as i32;
        let decimals = (11 - exponent).max(0) as usize;
        format!("{x:.decimals$}")
    }
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Bool(bool),
    /// Rendered as `-` in CSV and `null` in JSON.
    Missing,
}

/// A rectangular result table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableDoc {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

fn csv_escape(text: &str) -> String {
    if text.contains(',') || text.contains('"') || text.contains('\n') {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

impl TableDoc {
    pub fn new(columns: impl IntoIterator<Item = impl Into<String>>) -> Self {
        TableDoc {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Render as CSV with a header line and a trailing newline.
    pub fn csv(&self) -> String {
        let mut out = String::new();
        out.push_str(
            &self
                .columns
                .iter()
                .map(|c| csv_escape(c))
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
        for row in &self.rows {
            let rendered: Vec<String> = row
                .iter()
                .map(|cell| match cell {
                    Cell::Num(x) => format_number(*x),
                    Cell::Int(i) => i.to_string(),
                    Cell::Text(s) => csv_escape(s),
                    Cell::Bool(b) => b.to_string(),
                    Cell::Missing => "-".to_string(),
                })
                .collect();
            out.push_str(&rendered.join(","));
            out.push('\n');
        }
        out
    }
}

/// A JSON document with insertion-ordered object keys (deterministic
/// rendering; numbers use [`format_number`]).
#[derive(Debug, Clone, PartialEq)]
pub enum Json {
    Num(f64),
    Int(i64),
    UInt(u64),
    Str(String),
    Bool(bool),
    Null,
    Arr(Vec<Json>),
    Obj(Vec<(String, Json)>),
}

impl Json {
    pub fn str(text: impl Into<String>) -> Json {
        Json::Str(text.into())
    }

    pub fn num_array(values: impl IntoIterator<Item = f64>) -> Json {
        Json::Arr(values.into_iter().map(Json::Num).collect())
    }

    pub fn str_array(values: impl IntoIterator<Item = impl Into<String>>) -> Json {
        Json::Arr(values.into_iter().map(Json::str).collect())
    }

    pub fn opt_num(value: Option<f64>) -> Json {
        match value {
            Some(x) => Json::Num(x),
            None => Json::Null,
        }
    }

    /// Render with two-space indentation and a trailing newline.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out, 0);
        out.push('\n');
        out
    }

    fn render_into(&self, out: &mut String, indent: usize) {
        match self {
            Json::Num(x) => out.push_str(&format_number(*x)),
            Json::Int(i) => {
                let _ = write!(out, "{i}");
            }
            Json::UInt(u) => {
                let _ = write!(out, "{u}");
            }
            Json::Bool(b) => {
                let _ = write!(out, "{b}");
            }
            Json::Null => out.push_str("null"),
            Json::Str(s) => {
                out.push('"');
                for ch in s.chars() {
                    match ch {
                        '"' => out.push_str("\\\""),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        '\r' => out.push_str("\\r"),
                        '\t' => out.push_str("\\t"),
                        c if (c as u32) < 0x20 => {
                            let _ = write!(out, "\\u{:04x}", c as u32);
                        }
                        c => out.push(c),
                    }
                }
                out.push('"');
            }
            Json::Arr(items) => {
                if items.is_empty() {
                    out.push_str("[]");
                    return;
                }
                out.push('[');
                for (k, item) in items.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    out.push('\n');
                    out.push_str(&"  ".repeat(indent + 1));
                    item.render_into(out, indent + 1);
                }
                out.push('\n');
                out.push_str(&"  ".repeat(indent));
                out.push(']');
            }
            Json::Obj(entries) => {
                if entries.is_empty() {
                    out.push_str("{}");
                    return;
                }
                out.push('{');
                for (k, (key, value)) in entries.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    out.push('\n');
                    out.push_str(&"  ".repeat(indent + 1));
                    Json::Str(key.clone()).render_into(out, indent + 1);
                    out.push_str(": ");
                    value.render_into(out, indent + 1);
                }
                out.push('\n');
                out.push_str(&"  ".repeat(indent));
                out.push('}');
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_print_twelve_significant_digits() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(1.5), "1.50000000000");
        assert_eq!(format_number(-0.75), "-0.750000000000");
        assert_eq!(format_number(34.6), "34.6000000000");
        assert_eq!(format_number(544.0476), "544.047600000");
        // Scientific below 1e-3.
        assert_eq!(format_number(6.582119569e-5), "6.58211956900e-5");
        assert_eq!(format_number(-2.5e-4), "-2.50000000000e-4");
        // Exactly 1e-3 stays positional.
        assert_eq!(format_number(1e-3), "0.00100000000000");
    }

    #[test]
    fn printed_numbers_reload_to_full_precision() {
        let samples = [
            1.5,
            -0.75,
            34.6,
            -9.127413,
            6.582119569e-5,
            1.8380745312e-3,
            0.0797,
            123456.789012,
            -3.063457552e-4,
        ];
        for &x in &samples {
            let printed = format_number(x);
            let reloaded: f64 = printed.parse().unwrap();
            assert!(
                (reloaded - x).abs() <= 1e-11 * x.abs(),
                "{x} printed as {printed} reloads to {reloaded}"
            );
            // Formatting is idempotent: reformatting the reloaded value
            // reproduces the same bytes.
            assert_eq!(format_number(reloaded), printed);
        }
        // Rounding across a magnitude boundary still reloads within one
        // unit of the twelfth digit (idempotence does not apply there).
        let x = 0.9999999999999_f64;
        let reloaded: f64 = format_number(x).parse().unwrap();
        assert!((reloaded - x).abs() <= 1e-11 * x.abs());
    }

    #[test]
    fn csv_rendering_escapes_and_terminates() {
        let mut table = TableDoc::new(["name", "value"]);
        table.push(vec![Cell::Text("plain".into()), Cell::Num(1.5)]);
        table.push(vec![Cell::Text("with,comma".into()), Cell::Missing]);
        table.push(vec![Cell::Text("with\"quote".into()), Cell::Bool(true)]);
        table.push(vec![Cell::Text("n".into()), Cell::Int(4)]);
        let csv = table.csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "name,value");
        assert_eq!(lines[1], "plain,1.50000000000");
        assert_eq!(lines[2], "\"with,comma\",-");
        assert_eq!(lines[3], "\"with\"\"quote\",true");
        assert_eq!(lines[4], "n,4");
        assert!(csv.ends_with('\n'));
    }

    #[test]
    fn json_rendering_is_deterministic_and_escaped() {
        let doc = Json::Obj(vec![
            ("command".into(), Json::str("spectrum")),
            ("j_mev".into(), Json::Num(-1.5)),
            ("empty".into(), Json::Arr(vec![])),
            ("rows".into(), Json::Arr(vec![Json::Obj(vec![
                ("idx".into(), Json::Int(0)),
                ("note".into(), Json::str("a\"b\\c\nd")),
                ("gap".into(), Json::Null),
            ])])),
        ]);
        let rendered = doc.render();
        assert_eq!(rendered, doc.render());
        assert!(rendered.contains("\"j_mev\": -1.50000000000"));
        assert!(rendered.contains("\"empty\": []"));
        assert!(rendered.contains("\\\"b\\\\c\\nd"));
        assert!(rendered.ends_with("}\n"));
    }
}
