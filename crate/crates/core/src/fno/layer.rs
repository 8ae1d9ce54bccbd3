//! Spectral convolution block: truncated Fourier mixing plus a pointwise
//! affine bypass, followed by the activation.

use num_complex::Complex64;

use super::Activation;
use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::spectral::{forward_vec, half_len, inverse_vec, row_weight};

/// Stored coefficient indices of the retained block `κ1 ∈ [0, m)`,
/// `κ2 ∈ [-m, m)`, in the order used by the weight tensor.
pub(crate) fn block_indices(grid: &GridSpec, modes: usize) -> Vec<usize> {
    let n2 = grid.n2();
    let mut idx = Vec::with_capacity(2 * modes * modes);
    for mu1 in 0..modes {
        for kappa2 in -(modes as i64)..modes as i64 {
            let j2 = kappa2.rem_euclid(n2 as i64) as usize;
            idx.push(mu1 * n2 + j2);
        }
    }
    idx
}

pub(crate) fn block_len(modes: usize) -> usize {
    2 * modes * modes
}

pub(crate) fn check_modes(grid: &GridSpec, modes: usize) -> Result<()> {
    if modes == 0 || 2 * modes > grid.n1() || 2 * modes > grid.n2() {
        return Err(Error::Config(format!(
            "{modes} retained modes do not fit a {}x{} grid (need 1 <= modes <= n/2)",
            grid.n1(),
            grid.n2()
        )));
    }
    Ok(())
}

/// Borrowed parameters of one block. `spectral` holds `(re, im)` pairs laid
/// out as `[mode][out][in]`; `bypass_w` is `[out][in]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerParams<'a> {
    pub spectral: &'a [f64],
    pub bypass_w: &'a [f64],
    pub bypass_b: &'a [f64],
}

/// Mutable gradient slices with the same layout as [`LayerParams`].
pub(crate) struct LayerGrads<'a> {
    pub spectral: &'a mut [f64],
    pub bypass_w: &'a mut [f64],
    pub bypass_b: &'a mut [f64],
}

/// Values kept from the forward pass.
pub(crate) struct LayerTape {
    /// Block coefficients of the input, `[in][mode]`.
    pub x_hat: Vec<Vec<Complex64>>,
    /// Pre-activation values.
    pub z: Vec<Vec<f64>>,
}

fn weight(spectral: &[f64], width: usize, q: usize, o: usize, i: usize) -> Complex64 {
    let at = 2 * ((q * width + o) * width + i);
    Complex64::new(spectral[at], spectral[at + 1])
}

pub(crate) fn forward(
    grid: &GridSpec,
    modes: usize,
    act: Activation,
    p: LayerParams<'_>,
    x: &[Vec<f64>],
) -> (Vec<Vec<f64>>, LayerTape) {
    let width = x.len();
    let idx = block_indices(grid, modes);
    let x_hat: Vec<Vec<Complex64>> = x
        .iter()
        .map(|ch| {
            let s = forward_vec(grid, ch);
            idx.iter().map(|&q| s[q]).collect()
        })
        .collect();
    let mut z = Vec::with_capacity(width);
    for o in 0..width {
        let mut spec = vec![Complex64::new(0.0, 0.0); half_len(grid)];
        for (m, &q) in idx.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, xi) in x_hat.iter().enumerate() {
                acc += weight(p.spectral, width, m, o, i) * xi[m];
            }
            spec[q] = acc;
        }
        let mut zo = inverse_vec(grid, &spec);
        let row = &p.bypass_w[o * width..(o + 1) * width];
        for (b, v) in zo.iter_mut().enumerate() {
            let mut acc = p.bypass_b[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi[b];
            }
            *v += acc;
        }
        z.push(zo);
    }
    let y = z.iter().map(|zo| zo.iter().map(|&v| act.apply(v)).collect()).collect();
    (y, LayerTape { x_hat, z })
}

/// Accumulates parameter gradients into `g` and returns the input gradient.
pub(crate) fn backward(
    grid: &GridSpec,
    modes: usize,
    act: Activation,
    p: LayerParams<'_>,
    x: &[Vec<f64>],
    tape: &LayerTape,
    y_bar: &[Vec<f64>],
    g: LayerGrads<'_>,
) -> Vec<Vec<f64>> {
    let width = x.len();
    let n = grid.len() as f64;
    let n1 = grid.n1();
    let n2 = grid.n2();
    let idx = block_indices(grid, modes);
    let z_bar: Vec<Vec<f64>> = tape
        .z
        .iter()
        .zip(y_bar)
        .map(|(z, yb)| z.iter().zip(yb).map(|(&v, &b)| b * act.derivative(v)).collect())
        .collect();

    let mut x_bar = vec![vec![0.0; grid.len()]; width];
    for (o, zb) in z_bar.iter().enumerate() {
        g.bypass_b[o] += zb.iter().sum::<f64>();
        for (i, xi) in x.iter().enumerate() {
            let w = p.bypass_w[o * width + i];
            let mut acc = 0.0;
            for ((&zv, &xv), xb) in zb.iter().zip(xi).zip(x_bar[i].iter_mut()) {
                acc += zv * xv;
                *xb += w * zv;
            }
            g.bypass_w[o * width + i] += acc;
        }
    }

    let r_bar: Vec<Vec<Complex64>> = z_bar
        .iter()
        .map(|zb| {
            let s = forward_vec(grid, zb);
            idx.iter().map(|&q| s[q]).collect()
        })
        .collect();
    let mut back: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); half_len(grid)]; width];
    for (m, &q) in idx.iter().enumerate() {
        let scale = row_weight(q / n2, n1) * n;
        for (o, rb) in r_bar.iter().enumerate() {
            let zq = rb[m] * scale;
            for i in 0..width {
                let at = 2 * ((m * width + o) * width + i);
                let gw = zq * tape.x_hat[i][m].conj();
                g.spectral[at] += gw.re;
                g.spectral[at + 1] += gw.im;
                back[i][q] += weight(p.spectral, width, m, o, i).conj() * rb[m];
            }
        }
    }
    for (xb, s) in x_bar.iter_mut().zip(&back) {
        for (v, d) in xb.iter_mut().zip(inverse_vec(grid, s)) {
            *v += d;
        }
    }
    x_bar
}

/// Weights of a standalone spectral convolution block.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralWeights {
    pub width: usize,
    pub modes: usize,
    /// `[mode][out][in]` over the retained block `κ1 ∈ [0, m)`, `κ2 ∈ [-m, m)`.
    pub spectral: Vec<Complex64>,
    /// `[out][in]`.
    pub bypass_w: Vec<f64>,
    pub bypass_b: Vec<f64>,
}

impl SpectralWeights {
    pub fn zeros(width: usize, modes: usize) -> Self {
        Self {
            width,
            modes,
            spectral: vec![Complex64::new(0.0, 0.0); block_len(modes) * width * width],
            bypass_w: vec![0.0; width * width],
            bypass_b: vec![0.0; width],
        }
    }

    /// Identity channel mixing on every retained mode, zero bypass.
    pub fn identity(width: usize, modes: usize) -> Self {
        let mut w = Self::zeros(width, modes);
        for m in 0..block_len(modes) {
            for o in 0..width {
                w.spectral[(m * width + o) * width + o] = Complex64::new(1.0, 0.0);
            }
        }
        w
    }
}

/// Applies one spectral convolution block to a `width`-channel field.
pub fn spectral_conv_layer(
    grid: &GridSpec,
    x: &[Vec<f64>],
    weights: &SpectralWeights,
    act: Activation,
) -> Result<Vec<Vec<f64>>> {
    check_modes(grid, weights.modes)?;
    let width = weights.width;
    if x.len() != width
        || x.iter().any(|c| c.len() != grid.len())
        || weights.spectral.len() != block_len(weights.modes) * width * width
        || weights.bypass_w.len() != width * width
        || weights.bypass_b.len() != width
    {
        return Err(Error::Shape(format!(
            "spectral block of width {width} applied to {} channels",
            x.len()
        )));
    }
    let flat: Vec<f64> = weights.spectral.iter().flat_map(|c| [c.re, c.im]).collect();
    let p = LayerParams {
        spectral: &flat,
        bypass_w: &weights.bypass_w,
        bypass_b: &weights.bypass_b,
    };
    Ok(forward(grid, weights.modes, act, p, x).0)
}
