//! Number formatting for the CSV outputs: 12 significant digits, trailing
//! zeros trimmed, '.' decimal separator, scientific notation only when the
//! exponent leaves the readable range (printf %g semantics).

/// Formats with 12 significant digits.
pub fn sig12(v: f64) -> String {
    sig(v, 12)
}

pub fn sig(v: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if v == 0.0 {
        return "0".to_string();
    }
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    // Let the scientific formatter do the rounding, then pick presentation
    // from the rounded exponent.
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp >= -4 && exp < digits as i32 {
        let prec = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{v:.prec$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_render_plainly() {
        assert_eq!(sig12(120.0), "120");
        assert_eq!(sig12(0.0), "0");
        assert_eq!(sig12(-7.0), "-7");
        assert_eq!(sig12(1000.0), "1000");
    }

    #[test]
    fn fractions_keep_twelve_digits() {
        assert_eq!(sig12(0.4342585459106941), "0.434258545911");
        assert_eq!(sig12(0.75), "0.75");
        assert_eq!(sig12(1.0 / 3.0), "0.333333333333");
    }

    #[test]
    fn small_and_large_go_scientific() {
        assert_eq!(sig12(1.5e-11), "1.5e-11");
        assert_eq!(sig12(4.93e-65), "4.93e-65");
        assert_eq!(sig12(3.2e15), "3.2e15");
        assert_eq!(sig12(0.00012345), "0.00012345");
    }

    #[test]
    fn rounding_crosses_decades_cleanly() {
        assert_eq!(sig(999.99999, 5), "1000");
        assert_eq!(sig(0.99999999, 3), "1");
    }

    #[test]
    fn non_finite_values() {
        assert_eq!(sig12(f64::INFINITY), "inf");
        assert_eq!(sig12(f64::NEG_INFINITY), "-inf");
        assert_eq!(sig12(f64::NAN), "nan");
    }
}
