//! Shared formatting for CSV and JSON output.

/// Round-trip formatting with 17 significant digits.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}
