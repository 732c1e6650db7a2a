//! Numeric text formatting for all emitted output.
//!
//! Reals are printed with 12 significant digits, switching to scientific
//! notation for |x| < 1e-4 or |x| >= 1e7, so baseline files are stable
//! byte-for-byte across runs.

/// Format a real with 12 significant digits.
pub fn sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let a = x.abs();
    if !(1e-4..1e7).contains(&a) {
        return format!("{x:.11e}");
    }
    // 12 significant digits in plain decimal.
    let digits_before = (a.log10().floor() as i32 + 1).clamp(1, 7);
    let prec = (12 - digits_before).max(0) as usize;
    format!("{x:.prec$}")
}

/// Join a slice of reals with commas, each through [`sig`].
pub fn sig_join(xs: &[f64]) -> String {
    xs.iter().map(|&x| sig(x)).collect::<Vec<_>>().join(",")
}
