//! Number formatting shared by the CSV writers.

/// Formats `v` with six significant digits, `%g`-style: fixed notation for
/// decimal exponents in `-5..6`, scientific otherwise. Trailing zeros are
/// kept so every value shows all six digits. NaN prints as `nan`.
pub fn sig6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0.00000".into();
    }
    let sci = format!("{v:.5e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-5..6).contains(&exp) {
        format!("{v:.*}", (5 - exp) as usize)
    } else {
        sci
    }
}

/// Parses a value written by [`sig6`].
pub fn parse_sig6(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        other => other.parse().ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(sig6(0.5), "0.500000");
        assert_eq!(sig6(1.0 / 3.0), "0.333333");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(12345.67), "12345.7");
        assert_eq!(sig6(9.9999996), "10.0000");
        assert_eq!(sig6(-0.00012345678), "-0.000123457");
        assert_eq!(sig6(1e-7), "1.00000e-7");
        assert_eq!(sig6(f64::NAN), "nan");
        assert_eq!(sig6(0.0), "0.00000");
    }

    fn significant_digits(s: &str) -> usize {
        let mantissa = s.split('e').next().unwrap();
        let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
        digits.trim_start_matches('0').len()
    }

    proptest! {
        #[test]
        fn six_digits_and_close(v in -1e9f64..1e9) {
            prop_assume!(v.abs() > 1e-300);
            let s = sig6(v);
            prop_assert_eq!(significant_digits(&s), 6, "{}", s);
            let back = parse_sig6(&s).unwrap();
            prop_assert!((back - v).abs() <= 5e-6 * v.abs());
        }
    }
}
