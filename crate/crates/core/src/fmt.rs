//! Fixed numeric formatting for every emitted file.
//!
//! Floats are written as the shortest decimal that round-trips, which is
//! platform independent, so identical runs give byte-identical outputs.
//! Magnitudes outside [1e-5, 1e16) switch to scientific notation.

pub fn f64_str(v: f64) -> String {
    if v == 0.0 {
        // folds -0 into 0
        return "0".to_string();
    }
    let a = v.abs();
    if a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn opt_f64_str(v: Option<f64>) -> String {
    v.map(f64_str).unwrap_or_default()
}

/// Round to `decimals` places.
pub fn round_to(v: f64, decimals: u32) -> f64 {
    let s = 10f64.powi(decimals as i32);
    (v * s).round() / s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_round_trip() {
        assert_eq!(f64_str(1.0), "1");
        assert_eq!(f64_str(0.1), "0.1");
        assert_eq!(f64_str(-0.0), "0");
        assert_eq!(f64_str(f64::INFINITY), "inf");
        assert_eq!(f64_str(2.5e-45), "2.5e-45");
        assert_eq!(f64_str(0.00001), "0.00001");
        assert_eq!(f64_str(3e20), "3e20");
        let x = 0.1 + 0.2;
        assert_eq!(f64_str(x).parse::<f64>().unwrap(), x);
    }
}
