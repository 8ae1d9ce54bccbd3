//! Binary PPM (`P6`) heatmaps with a linear three-stop color map.

use crate::error::{Error, Result};
use crate::manifest::fmt_f64;

const STOPS: [[f64; 3]; 3] = [[59.0, 76.0, 192.0], [221.0, 221.0, 221.0], [180.0, 4.0, 38.0]];

/// Color of `t ∈ [0, 1]`.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * 2.0;
    let (a, b, u) = if t <= 1.0 {
        (STOPS[0], STOPS[1], t)
    } else {
        (STOPS[1], STOPS[2], t - 1.0)
    };
    std::array::from_fn(|k| (a[k] + u * (b[k] - a[k])).round() as u8)
}

/// Heatmap of a row-major `n1 × n2` channel with `x1` to the right and `x2`
/// upwards. Returns the image bytes and the channel extrema.
pub fn heatmap(n1: usize, n2: usize, data: &[f64]) -> Result<(Vec<u8>, f64, f64)> {
    if data.is_empty() || data.len() != n1 * n2 {
        return Err(Error::Validation("heatmap needs a non-empty channel".into()));
    }
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut out = format!("P6\n# min={} max={}\n{n1} {n2}\n255\n", fmt_f64(lo), fmt_f64(hi)).into_bytes();
    for row in (0..n2).rev() {
        for col in 0..n1 {
            let v = data[col * n2 + row];
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            out.extend_from_slice(&colormap(t));
        }
    }
    Ok((out, lo, hi))
}
