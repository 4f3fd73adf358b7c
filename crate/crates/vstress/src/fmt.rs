//! Canonical number rendering shared by every output file.

/// Scientific notation with 17 significant digits; parses back to the
/// same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::num;

    #[test]
    fn round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, -0.0, f64::MIN_POSITIVE] {
            let back: f64 = num(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
        assert_eq!(num(100.0), "1.0000000000000000e2");
    }
}
