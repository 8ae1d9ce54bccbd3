use num_complex::Complex64;

use super::{forward_vec, half_len, inverse_vec, WaveVector};
use crate::error::{Error, Result};
use crate::field::{GridSpec, TensorField, VectorField, OUT_OF_PLANE};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Per-channel spectra; `None` marks a channel that is identically zero.
type Spectra = Vec<Option<Vec<Complex64>>>;

fn forward_channels(grid: &GridSpec, channels: &[Vec<f64>]) -> Spectra {
    channels
        .iter()
        .map(|ch| {
            if ch.iter().all(|&v| v == 0.0) {
                None
            } else {
                Some(forward_vec(grid, ch))
            }
        })
        .collect()
}

fn inverse_channels(grid: &GridSpec, spectra: Spectra) -> Vec<Vec<f64>> {
    spectra
        .into_iter()
        .map(|s| match s {
            Some(s) => inverse_vec(grid, &s),
            None => vec![0.0; grid.len()],
        })
        .collect()
}

fn coeff(s: &Spectra, ch: usize, q: usize) -> Complex64 {
    s[ch].as_ref().map_or(ZERO, |v| v[q])
}

/// Visits every stored coefficient with its differentiation wavevector.
fn for_each_mode(grid: &GridSpec, mut f: impl FnMut(usize, WaveVector)) {
    let n2 = grid.n2();
    for mu1 in 0..=grid.n1() / 2 {
        for j2 in 0..n2 {
            f(mu1 * n2 + j2, WaveVector::derivative(grid, mu1, j2));
        }
    }
}

/// Row-wise divergence `(div P)_r = ∂_j P_rj`, evaluated from the Fourier
/// coefficients `P̂(k) ik`. The mean mode contributes nothing.
pub fn spectral_div(p: &TensorField) -> VectorField {
    let grid = *p.grid();
    let spec = forward_channels(&grid, p.channels());
    let mut out: Spectra = vec![None; 3];
    for (r, slot) in out.iter_mut().enumerate() {
        if spec[3 * r].is_none() && spec[3 * r + 1].is_none() {
            continue;
        }
        let mut d = vec![ZERO; half_len(&grid)];
        for_each_mode(&grid, |q, k| {
            d[q] = I * (coeff(&spec, 3 * r, q) * k.k1 + coeff(&spec, 3 * r + 1, q) * k.k2);
        });
        *slot = Some(d);
    }
    VectorField::from_raw(grid, inverse_channels(&grid, out))
}

/// Adjoint of [`spectral_div`] with respect to the plain sum-of-products
/// inner product on grid values.
pub fn spectral_div_adjoint(v: &VectorField) -> TensorField {
    let grid = *v.grid();
    let spec = forward_channels(&grid, v.channels());
    let mut out: Spectra = vec![None; 9];
    for r in 0..3 {
        let Some(vr) = &spec[r] else { continue };
        let mut g1 = vec![ZERO; half_len(&grid)];
        let mut g2 = vec![ZERO; half_len(&grid)];
        for_each_mode(&grid, |q, k| {
            g1[q] = -I * k.k1 * vr[q];
            g2[q] = -I * k.k2 * vr[q];
        });
        out[3 * r] = Some(g1);
        out[3 * r + 1] = Some(g2);
    }
    TensorField::from_raw(grid, inverse_channels(&grid, out))
}

/// In-plane gradient `(∂_1 f, ∂_2 f)` of one channel.
pub fn spectral_gradient(grid: &GridSpec, f: &[f64]) -> Result<[Vec<f64>; 2]> {
    crate::field::check_channel(grid, f, "gradient input")?;
    let s = forward_vec(grid, f);
    let mut d1 = vec![ZERO; s.len()];
    let mut d2 = vec![ZERO; s.len()];
    for_each_mode(grid, |q, k| {
        d1[q] = I * k.k1 * s[q];
        d2[q] = I * k.k2 * s[q];
    });
    Ok([inverse_vec(grid, &d1), inverse_vec(grid, &d2)])
}

/// Row-wise curl with mean passthrough, `P̂(0) = Â(0)` and
/// `P̂(k) = Â(k) (axt ik)ᵀ` otherwise. No layout checks.
pub fn curl_tensor(a: &TensorField) -> TensorField {
    let grid = *a.grid();
    let spec = forward_channels(&grid, a.channels());
    let mut out: Spectra = vec![None; 9];
    for r in 0..3 {
        let (a0, a1, a2) = (3 * r, 3 * r + 1, 3 * r + 2);
        let has = |c: usize| spec[c].is_some();
        let mut p = [
            has(a0) || has(a2),
            has(a1) || has(a2),
            has(a2) || has(a0) || has(a1),
        ]
        .map(|needed| needed.then(|| vec![ZERO; half_len(&grid)]));
        for_each_mode(&grid, |q, k| {
            let (x0, x1, x2) = (coeff(&spec, a0, q), coeff(&spec, a1, q), coeff(&spec, a2, q));
            let vals = if q == 0 {
                [x0, x1, x2]
            } else {
                [I * k.k2 * x2, -I * k.k1 * x2, I * (k.k1 * x1 - k.k2 * x0)]
            };
            for (slot, v) in p.iter_mut().zip(vals) {
                if let Some(s) = slot {
                    s[q] = v;
                }
            }
        });
        for (j, s) in p.into_iter().enumerate() {
            out[3 * r + j] = s;
        }
    }
    TensorField::from_raw(grid, inverse_channels(&grid, out))
}

/// Adjoint of [`curl_tensor`]: multiplies by the conjugate of the
/// `(axt ik)ᵀ` factor, identity on the mean mode.
pub fn curl_tensor_adjoint(g: &TensorField) -> TensorField {
    let grid = *g.grid();
    let spec = forward_channels(&grid, g.channels());
    let mut out: Spectra = vec![None; 9];
    for r in 0..3 {
        let (g0, g1, g2) = (3 * r, 3 * r + 1, 3 * r + 2);
        if spec[g0].is_none() && spec[g1].is_none() && spec[g2].is_none() {
            continue;
        }
        let mut a = [
            vec![ZERO; half_len(&grid)],
            vec![ZERO; half_len(&grid)],
            vec![ZERO; half_len(&grid)],
        ];
        for_each_mode(&grid, |q, k| {
            let (y0, y1, y2) = (coeff(&spec, g0, q), coeff(&spec, g1, q), coeff(&spec, g2, q));
            let vals = if q == 0 {
                [y0, y1, y2]
            } else {
                [I * k.k2 * y2, -I * k.k1 * y2, I * (k.k1 * y1 - k.k2 * y0)]
            };
            for (slot, v) in a.iter_mut().zip(vals) {
                slot[q] = v;
            }
        });
        for (j, s) in a.into_iter().enumerate() {
            out[3 * r + j] = Some(s);
        }
    }
    TensorField::from_raw(grid, inverse_channels(&grid, out))
}

/// Mean slots of the plane-deformation stress potential: spatially constant.
pub(crate) const POTENTIAL_MEAN_SLOTS: [(usize, usize); 5] = [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)];

/// Checks the reduced potential layout: in-plane and (3,3) components are
/// spatially constant, components (1,3), (2,3), (3,1), (3,2) have zero mean.
pub fn validate_potential_layout(a: &TensorField, tol: f64) -> Result<()> {
    let scale = tol * (1.0 + a.max_abs());
    let mean = a.mean();
    for &(r, c) in &POTENTIAL_MEAN_SLOTS {
        let m = mean[r][c];
        let dev = a.comp(r, c).iter().fold(0.0f64, |acc, v| acc.max((v - m).abs()));
        if dev > scale {
            return Err(Error::Layout(format!(
                "potential component ({},{}) must be spatially constant (deviation {dev:e})",
                r + 1,
                c + 1
            )));
        }
    }
    for &(r, c) in &OUT_OF_PLANE {
        if mean[r][c].abs() > scale {
            return Err(Error::Layout(format!(
                "potential component ({},{}) must have zero mean (mean {:e})",
                r + 1,
                c + 1,
                mean[r][c]
            )));
        }
    }
    Ok(())
}

/// Stress from a plane-deformation stress potential. The output is
/// divergence-free to rounding and has the plane-deformation layout exactly.
pub fn curl_potential(a: &TensorField) -> Result<TensorField> {
    validate_potential_layout(a, 1e-12)?;
    let m = a.mean();
    let mean = POTENTIAL_MEAN_SLOTS.map(|(r, c)| m[r][c]);
    let fluct = OUT_OF_PLANE.map(|(r, c)| a.comp(r, c));
    Ok(curl_plane(a.grid(), &mean, fluct))
}

/// Reduced curl for plane deformation. `mean` holds Ā11, Ā12, Ā21, Ā22,
/// Ā33; `fluct` holds Ã13, Ã23, Ã31, Ã32 (their mean modes are ignored).
pub(crate) fn curl_plane(grid: &GridSpec, mean: &[f64; 5], fluct: [&[f64]; 4]) -> TensorField {
    let spec: Vec<Vec<Complex64>> = fluct.iter().map(|f| forward_vec(grid, f)).collect();
    // P11, P12, P21, P22, P33
    let mut p: Vec<Vec<Complex64>> = (0..5).map(|_| vec![ZERO; half_len(grid)]).collect();
    for_each_mode(grid, |q, k| {
        if q == 0 {
            return;
        }
        let [a13, a23, a31, a32] = [0, 1, 2, 3].map(|c| spec[c][q]);
        p[0][q] = I * k.k2 * a13;
        p[1][q] = -I * k.k1 * a13;
        p[2][q] = I * k.k2 * a23;
        p[3][q] = -I * k.k1 * a23;
        p[4][q] = I * (k.k1 * a32 - k.k2 * a31);
    });
    let mut comps = vec![vec![0.0; grid.len()]; 9];
    for ((&(r, c), s), m) in POTENTIAL_MEAN_SLOTS.iter().zip(&p).zip(mean) {
        let mut f = inverse_vec(grid, s);
        f.iter_mut().for_each(|v| *v += m);
        comps[3 * r + c] = f;
    }
    TensorField::from_raw(*grid, comps)
}

/// Adjoint of [`curl_plane`]: gradients with respect to the five mean values
/// and the four fluctuation channels.
pub(crate) fn curl_plane_adjoint(g: &TensorField) -> ([f64; 5], [Vec<f64>; 4]) {
    let grid = *g.grid();
    let mean = POTENTIAL_MEAN_SLOTS.map(|(r, c)| g.comp(r, c).iter().sum::<f64>());
    let spec: Vec<Vec<Complex64>> = POTENTIAL_MEAN_SLOTS
        .iter()
        .map(|&(r, c)| forward_vec(&grid, g.comp(r, c)))
        .collect();
    let mut a: Vec<Vec<Complex64>> = (0..4).map(|_| vec![ZERO; half_len(&grid)]).collect();
    for_each_mode(&grid, |q, k| {
        if q == 0 {
            return;
        }
        let [g11, g12, g21, g22, g33] = [0, 1, 2, 3, 4].map(|c| spec[c][q]);
        a[0][q] = I * (k.k1 * g12 - k.k2 * g11);
        a[1][q] = I * (k.k1 * g22 - k.k2 * g21);
        a[2][q] = I * k.k2 * g33;
        a[3][q] = -I * k.k1 * g33;
    });
    (mean, [0, 1, 2, 3].map(|c| inverse_vec(&grid, &a[c])))
}

/// Symmetric divergence-free field `inc B = curl (curl B)ᵀ` with mean
/// passthrough. `B` must be symmetric.
pub fn inc_potential(b: &TensorField) -> Result<TensorField> {
    let grid = *b.grid();
    let tol = 1e-12 * (1.0 + b.max_abs());
    for r in 0..3 {
        for c in r + 1..3 {
            let d = b
                .comp(r, c)
                .iter()
                .zip(b.comp(c, r))
                .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
            if d > tol {
                return Err(Error::Validation(format!(
                    "inc potential must be symmetric: ({},{}) differs from ({},{}) by {d:e}",
                    r + 1,
                    c + 1,
                    c + 1,
                    r + 1
                )));
            }
        }
    }
    let spec = forward_channels(&grid, b.channels());
    let upper = |r: usize, c: usize| if r <= c { 3 * r + c } else { 3 * c + r };
    let mut t: Vec<Vec<Complex64>> = (0..6).map(|_| vec![ZERO; half_len(&grid)]).collect();
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    for_each_mode(&grid, |q, k| {
        let mut bm = [[ZERO; 3]; 3];
        for (r, row) in bm.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = coeff(&spec, upper(r, c), q);
            }
        }
        if q == 0 {
            for (slot, &(r, c)) in t.iter_mut().zip(&pairs) {
                slot[q] = bm[r][c];
            }
            return;
        }
        let m = axt_ik(&k);
        // T = M B Mᵀ
        let mut mb = [[ZERO; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                mb[i][j] = (0..3).map(|n| m[i][n] * bm[n][j]).sum();
            }
        }
        for (slot, &(i, j)) in t.iter_mut().zip(&pairs) {
            slot[q] = (0..3).map(|n| mb[i][n] * m[j][n]).sum();
        }
    });
    let fields: Vec<Vec<f64>> = t.iter().map(|s| inverse_vec(&grid, s)).collect();
    let mut comps = vec![Vec::new(); 9];
    for (f, &(r, c)) in fields.into_iter().zip(&pairs) {
        if r != c {
            comps[3 * c + r] = f.clone();
        }
        comps[3 * r + c] = f;
    }
    Ok(TensorField::from_raw(grid, comps))
}

/// Matrix of `axt(ik)`, the skew tensor with `(axt a) b = a × b`.
fn axt_ik(k: &WaveVector) -> [[Complex64; 3]; 3] {
    let [a1, a2, a3] = k.as_array().map(|v| I * v);
    [[ZERO, -a3, a2], [a3, ZERO, -a1], [-a2, a1, ZERO]]
}
