//! Small numeric helpers shared by the probes and the report writer.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by n).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn percentage(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Formats `x` with `digits` decimals, rounding ties to even.
pub fn fmt_fixed(x: f64, digits: usize) -> String {
    let scale = 10f64.powi(digits as i32);
    let scaled = x * scale;
    // Snap values that are a ulp or two off an exact tie onto it.
    let nearest_half = (scaled * 2.0).round() / 2.0;
    let snapped = if (scaled - nearest_half).abs() < 1e-9 * scaled.abs().max(1.0) {
        nearest_half
    } else {
        scaled
    };
    let rounded = snapped.round_ties_even() / scale;
    let out = format!("{rounded:.digits$}");
    if out.starts_with('-') && out[1..].chars().all(|c| c == '0' || c == '.') {
        out[1..].to_string()
    } else {
        out
    }
}
