//! Plain-text number formatting shared by every CSV writer.

use std::io::{self, Write};

/// Formats a float with 17 significant digits so it parses back to the same bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes one comma-separated row terminated by `\n`.
pub fn write_row<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    let mut line = String::with_capacity(values.len() * 24);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push_str(&fmt_f64(*v));
    }
    line.push('\n');
    w.write_all(line.as_bytes())
}

/// `prefix0,prefix1,...` column names.
pub fn indexed_header(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}
