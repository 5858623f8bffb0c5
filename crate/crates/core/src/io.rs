//! Numeric CSV tables and static SVG line charts.
//!
//! Every number is written with 17 significant digits so that reading a file
//! back and writing it again reproduces it byte for byte.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Named numeric columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(headers: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if headers.len() != columns.len() {
            return Err(Error::usage("table needs one header per column"));
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.len() != first.len()) {
                return Err(Error::usage("table columns differ in length"));
            }
        }
        Ok(Table { headers, columns })
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }
}

/// 17 significant digits in scientific notation.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

pub fn write_csv(table: &Table) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.headers)?;
    for r in 0..table.rows() {
        w.write_record(table.columns.iter().map(|c| format_number(c[r])))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

pub fn read_csv(text: &str) -> Result<Table> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::usage(format!("row {} has {} fields", line + 2, rec.len())));
        }
        for (col, field) in columns.iter_mut().zip(rec.iter()) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::usage(format!("row {}: `{field}` is not a number", line + 2))
            })?;
            col.push(v);
        }
    }
    Table::new(headers, columns)
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 90.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Line chart of every column against the first. Non-finite points are
/// skipped. Built only from the table, never from the computation that
/// produced it.
pub fn line_chart_svg(table: &Table, title: &str) -> Result<String> {
    if table.columns.len() < 2 {
        return Err(Error::usage("a chart needs an x column and at least one series"));
    }
    let x = &table.columns[0];
    let (x_lo, x_hi) = padded_range(x.iter().copied());
    let (y_lo, y_hi) = padded_range(table.columns[1..].iter().flat_map(|c| c.iter().copied()));
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |v: f64| MARGIN_L + (v - x_lo) / (x_hi - x_lo) * pw;
    let sy = |v: f64| MARGIN_T + ph - (v - y_lo) / (y_hi - y_lo) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        MARGIN_L + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_lo + f * (x_hi - x_lo);
        let yv = y_lo + f * (y_hi - y_lo);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            sx(xv),
            MARGIN_T + ph + 16.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            MARGIN_L - 6.0,
            sy(yv) + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 15.0,
        escape(&table.headers[0])
    );
    let y_label = table.headers[1..].join(", ");
    let _ = writeln!(
        s,
        r#"<text transform="translate(20 {:.2}) rotate(-90)" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        MARGIN_T + ph / 2.0,
        escape(&y_label)
    );
    for (k, (name, col)) in table.headers[1..].iter().zip(&table.columns[1..]).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = x
            .iter()
            .zip(col)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", sx(*a), sy(*b)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            points.join(" "),
            escape(name)
        );
        let ly = MARGIN_T + 14.0 + 18.0 * k as f64;
        let lx = WIDTH - MARGIN_R + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, 0.0, f64::NAN, f64::NEG_INFINITY] {
            let s = format_number(v);
            let back: f64 = s.parse().unwrap();
            assert!(back.to_bits() == v.to_bits() || (v.is_nan() && back.is_nan()), "{s}");
        }
        assert_eq!(format_number(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let t = Table::new(
            vec!["t".into(), "E".into()],
            vec![vec![0.0, 0.5, 1.0], vec![0.0, 1.0 / 3.0, f64::NAN]],
        )
        .unwrap();
        let a = write_csv(&t).unwrap();
        let b = write_csv(&read_csv(&a).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("t,E\n"));
    }

    #[test]
    fn read_csv_rejects_garbage() {
        assert!(read_csv("t,E\n1,abc\n").is_err());
    }

    #[test]
    fn svg_has_one_polyline_per_series() {
        let t = Table::new(
            vec!["t".into(), "a".into(), "b".into()],
            vec![vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 4.0], vec![1.0, f64::NAN, 3.0]],
        )
        .unwrap();
        let svg = line_chart_svg(&t, "demo <x>").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("demo &lt;x&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
