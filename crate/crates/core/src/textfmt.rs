//! Shared helpers for the plain-text artifact formats.

/// Formats a float with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(value: f64) -> String {
    format!("{value:.16e}")
}

/// Formats a slice of floats separated by single spaces.
pub fn fmt_row(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")
}

pub fn parse_f64_list(text: &str) -> Option<Vec<f64>> {
    text.split_whitespace().map(|t| t.parse().ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, f64::MIN_POSITIVE] {
            let text = fmt_f64(v);
            assert_eq!(text.parse::<f64>().unwrap().to_bits(), v.to_bits());
            let mantissa = text.split('e').next().unwrap();
            let digits = mantissa.chars().filter(|c| c.is_ascii_digit()).count();
            assert_eq!(digits, 17);
        }
    }
}
