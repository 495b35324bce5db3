//! Small output helpers: aligned text tables and CSV writers.

use ndarray::Array1;
use std::io::Write;
use std::path::Path;

/// Render rows as a plain aligned table.
pub fn text_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let ncols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (j, cell) in row.iter().enumerate().take(ncols) {
            widths[j] = widths[j].max(cell.len());
        }
    }
    let mut out = String::new();
    let fmt_row = |cells: Vec<String>, widths: &[usize]| -> String {
        let mut line = String::new();
        for (j, cell) in cells.iter().enumerate() {
            if j > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{:<width$}", cell, width = widths[j]));
        }
        line.trim_end().to_string()
    };
    out.push_str(&fmt_row(headers.iter().map(|h| h.to_string()).collect(), &widths));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (ncols - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row.clone(), &widths));
        out.push('\n');
    }
    out
}

/// Write a per-coefficient result file: leading `#` summary lines, then
/// `column,coefficient,standard_error` (empty SE cells when recovery was
/// not possible).
pub fn write_coefficients_csv(
    path: &Path,
    summary: &[(String, String)],
    names: &[String],
    coefficients: &Array1<f64>,
    standard_errors: Option<&Array1<f64>>,
) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    for (k, v) in summary {
        writeln!(f, "# {k}: {v}")?;
    }
    writeln!(f, "column,coefficient,standard_error")?;
    for (j, name) in names.iter().enumerate() {
        match standard_errors {
            Some(se) => writeln!(f, "{name},{},{}", coefficients[j], se[j])?,
            None => writeln!(f, "{name},{},", coefficients[j])?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_aligned() {
        let t = text_table(
            &["name", "value"],
            &[
                vec!["alpha".into(), "1.25".into()],
                vec!["b".into(), "-0.5".into()],
            ],
        );
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("name"));
        assert!(lines[2].starts_with("alpha"));
    }
}
