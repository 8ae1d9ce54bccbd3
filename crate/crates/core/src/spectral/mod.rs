//! Real-input 2D discrete Fourier transform on the half spectrum, and the
//! Fourier-space differential operators built on it.
//!
//! Coefficients of a real `n1 × n2` field are kept for `κ1 ∈ {0..n1/2}` (half
//! axis) and all `n2` bins along the second axis. Bin `j2` carries the signed
//! wavenumber `κ2 = j2` for `j2 < n2/2` and `j2 - n2` otherwise, so
//! `κ2 ∈ {-n2/2 .. n2/2-1}`. The forward transform is normalized by
//! `1/(n1 n2)`, making the `(0,0)` coefficient the cell mean.

mod ops;

pub use ops::{
    curl_potential, curl_tensor, curl_tensor_adjoint, inc_potential, spectral_div,
    spectral_div_adjoint, spectral_gradient, validate_potential_layout,
};
pub(crate) use ops::{curl_plane, curl_plane_adjoint};

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::GridSpec;

/// Tolerance on the Hermitian symmetry of a half spectrum handed to
/// [`rdft2_inverse`].
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Fourier coefficients of one real channel.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfSpectrum {
    grid: GridSpec,
    data: Vec<Complex64>,
}

impl HalfSpectrum {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            data: vec![Complex64::new(0.0, 0.0); half_len(&grid)],
        }
    }

    pub fn from_coefficients(grid: GridSpec, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != half_len(&grid) {
            return Err(Error::Shape(format!(
                "half spectrum of a {}x{} grid has {} coefficients, got {}",
                grid.n1(),
                grid.n2(),
                half_len(&grid),
                data.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Number of stored `κ1` rows, `n1/2 + 1`.
    pub fn rows(&self) -> usize {
        self.grid.n1() / 2 + 1
    }

    pub fn get(&self, mu1: usize, j2: usize) -> Complex64 {
        self.data[mu1 * self.grid.n2() + j2]
    }

    pub fn set(&mut self, mu1: usize, j2: usize, v: Complex64) {
        let n2 = self.grid.n2();
        self.data[mu1 * n2 + j2] = v;
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.data
    }

    /// Signed integer wavenumbers of a stored coefficient.
    pub fn kappa(&self, mu1: usize, j2: usize) -> (i64, i64) {
        (mu1 as i64, signed_kappa(j2, self.grid.n2()))
    }

    /// Checks the conjugate symmetry required for a real inverse: the
    /// `κ1 = 0` and `κ1 = n1/2` rows must be Hermitian in `κ2`.
    pub fn check_symmetry(&self, tol: f64) -> Result<()> {
        let n2 = self.grid.n2();
        let scale = self.data.iter().fold(1.0f64, |a, z| a.max(z.norm()));
        for mu1 in [0, self.grid.n1() / 2] {
            for j2 in 0..n2 {
                let partner = (n2 - j2) % n2;
                let d = (self.get(mu1, j2) - self.get(mu1, partner).conj()).norm();
                if d > tol * scale {
                    let (k1, k2) = self.kappa(mu1, j2);
                    return Err(Error::InvalidSpectrum(format!(
                        "coefficient at κ=({k1},{k2}) is not the conjugate of its partner (mismatch {d:e})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Wavevector `k_d = 2π κ_d / l` (plane problems only, `k3 = 0`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaveVector {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl WaveVector {
    pub fn from_kappa(k1: i64, k2: i64, l: f64) -> Self {
        Self {
            k1: 2.0 * PI * k1 as f64 / l,
            k2: 2.0 * PI * k2 as f64 / l,
            k3: 0.0,
        }
    }

    /// Wavevector of a stored coefficient including Nyquist components.
    pub fn full(grid: &GridSpec, mu1: usize, j2: usize) -> Self {
        Self::from_kappa(mu1 as i64, signed_kappa(j2, grid.n2()), grid.length())
    }

    /// Wavevector used for differentiation: components at the Nyquist
    /// wavenumber (`κ1 = n1/2`, `κ2 = -n2/2`) are zeroed so that derivatives
    /// of real fields stay real and `div ∘ curl` vanishes identically.
    pub fn derivative(grid: &GridSpec, mu1: usize, j2: usize) -> Self {
        let mut k = Self::full(grid, mu1, j2);
        if mu1 == grid.n1() / 2 {
            k.k1 = 0.0;
        }
        if j2 == grid.n2() / 2 {
            k.k2 = 0.0;
        }
        k
    }

    pub fn norm_sqr(&self) -> f64 {
        self.k1 * self.k1 + self.k2 * self.k2 + self.k3 * self.k3
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.k1, self.k2, self.k3]
    }
}

pub(crate) fn signed_kappa(j2: usize, n2: usize) -> i64 {
    if j2 < n2 / 2 {
        j2 as i64
    } else {
        j2 as i64 - n2 as i64
    }
}

pub(crate) fn half_len(grid: &GridSpec) -> usize {
    (grid.n1() / 2 + 1) * grid.n2()
}

/// Parseval weight of a stored row: rows `0` and `n1/2` stand for themselves,
/// every other row also for its conjugate partner.
pub(crate) fn row_weight(mu1: usize, n1: usize) -> f64 {
    if mu1 == 0 || mu1 == n1 / 2 {
        1.0
    } else {
        2.0
    }
}

/// FFT plans for one grid shape. Plans are immutable; scratch space is
/// allocated per call.
pub(crate) struct Rdft2 {
    n1: usize,
    n2: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

thread_local! {
    static PLANS: RefCell<HashMap<(usize, usize), Rc<Rdft2>>> = RefCell::new(HashMap::new());
}

pub(crate) fn plan(grid: &GridSpec) -> Rc<Rdft2> {
    let key = (grid.n1(), grid.n2());
    PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry(key)
            .or_insert_with(|| Rc::new(Rdft2::new(key.0, key.1)))
            .clone()
    })
}

impl Rdft2 {
    fn new(n1: usize, n2: usize) -> Self {
        let mut real = RealFftPlanner::<f64>::new();
        let mut cplx = FftPlanner::<f64>::new();
        Self {
            n1,
            n2,
            r2c: real.plan_fft_forward(n1),
            c2r: real.plan_fft_inverse(n1),
            fwd: cplx.plan_fft_forward(n2),
            inv: cplx.plan_fft_inverse(n2),
        }
    }

    /// Normalized forward transform of `field` into `out` (`(n1/2+1) * n2`).
    pub(crate) fn forward(&self, field: &[f64], out: &mut [Complex64]) {
        let (n1, n2) = (self.n1, self.n2);
        let h = n1 / 2 + 1;
        debug_assert_eq!(field.len(), n1 * n2);
        debug_assert_eq!(out.len(), h * n2);
        let mut col = self.r2c.make_input_vec();
        let mut spec = self.r2c.make_output_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for i2 in 0..n2 {
            for (i1, c) in col.iter_mut().enumerate() {
                *c = field[i1 * n2 + i2];
            }
            self.r2c
                .process_with_scratch(&mut col, &mut spec, &mut scratch)
                .expect("buffer sizes match the plan");
            for (mu1, s) in spec.iter().enumerate() {
                out[mu1 * n2 + i2] = *s;
            }
        }
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fwd.get_inplace_scratch_len()];
        let norm = 1.0 / (n1 * n2) as f64;
        for row in out.chunks_exact_mut(n2) {
            self.fwd.process_with_scratch(row, &mut scratch);
            for z in row.iter_mut() {
                *z *= norm;
            }
        }
    }

    /// Unnormalized inverse. Rows `0` and `n1/2` contribute only their real
    /// part after the `κ2` sum, which is the exact inverse for Hermitian input
    /// and a real-linear map in general.
    pub(crate) fn inverse(&self, spectrum: &[Complex64], out: &mut [f64]) {
        let (n1, n2) = (self.n1, self.n2);
        let h = n1 / 2 + 1;
        debug_assert_eq!(spectrum.len(), h * n2);
        debug_assert_eq!(out.len(), n1 * n2);
        let mut buf = spectrum.to_vec();
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inv.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(n2) {
            self.inv.process_with_scratch(row, &mut scratch);
        }
        let mut spec = self.c2r.make_input_vec();
        let mut col = self.c2r.make_output_vec();
        let mut scratch = self.c2r.make_scratch_vec();
        for i2 in 0..n2 {
            for (mu1, s) in spec.iter_mut().enumerate() {
                *s = buf[mu1 * n2 + i2];
            }
            spec[0].im = 0.0;
            spec[h - 1].im = 0.0;
            self.c2r
                .process_with_scratch(&mut spec, &mut col, &mut scratch)
                .expect("buffer sizes match the plan");
            for (i1, c) in col.iter().enumerate() {
                out[i1 * n2 + i2] = *c;
            }
        }
    }
}

pub(crate) fn forward_vec(grid: &GridSpec, field: &[f64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); half_len(grid)];
    plan(grid).forward(field, &mut out);
    out
}

pub(crate) fn inverse_vec(grid: &GridSpec, spectrum: &[Complex64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    plan(grid).inverse(spectrum, &mut out);
    out
}

/// Forward transform of one real channel.
pub fn rdft2_forward(grid: &GridSpec, field: &[f64]) -> Result<HalfSpectrum> {
    crate::field::check_channel(grid, field, "rdft2 input")?;
    Ok(HalfSpectrum {
        grid: *grid,
        data: forward_vec(grid, field),
    })
}

/// Inverse transform; rejects spectra that are not conjugate-symmetric.
pub fn rdft2_inverse(spectrum: &HalfSpectrum) -> Result<Vec<f64>> {
    if spectrum.data.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::InvalidSpectrum("non-finite coefficient".into()));
    }
    spectrum.check_symmetry(SYMMETRY_TOL)?;
    Ok(inverse_vec(&spectrum.grid, &spectrum.data))
}

/// Number of independent modes per axis kept by the real transform.
pub fn independent_modes(n: usize) -> usize {
    n / 2 + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(n^4) transform with the same normalization and layout.
    fn naive_dft(grid: &GridSpec, f: &[f64]) -> Vec<Complex64> {
        let (n1, n2) = (grid.n1(), grid.n2());
        let mut out = Vec::with_capacity(half_len(grid));
        for mu1 in 0..=n1 / 2 {
            for j2 in 0..n2 {
                let mut acc = Complex64::new(0.0, 0.0);
                for i1 in 0..n1 {
                    for i2 in 0..n2 {
                        let phase = -2.0
                            * PI
                            * ((mu1 * i1) as f64 / n1 as f64 + (j2 * i2) as f64 / n2 as f64);
                        acc += Complex64::from_polar(f[i1 * n2 + i2], phase);
                    }
                }
                out.push(acc / (n1 * n2) as f64);
            }
        }
        out
    }

    fn random(n1: usize, n2: usize, seed: u64) -> (GridSpec, Vec<f64>) {
        let g = GridSpec::new(n1, n2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (g, f)
    }

    #[test]
    fn matches_naive_dft_on_small_grids() {
        for n1 in [2, 4, 6, 8] {
            for n2 in [2, 4, 6, 8] {
                let (g, f) = random(n1, n2, (n1 * 10 + n2) as u64);
                let fast = rdft2_forward(&g, &f).unwrap();
                let slow = naive_dft(&g, &f);
                for (a, b) in fast.coefficients().iter().zip(&slow) {
                    assert!((a - b).norm() < 1e-12, "{n1}x{n2}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn constant_field_has_only_mean_mode() {
        let g = GridSpec::square(8, 1.0).unwrap();
        let s = rdft2_forward(&g, &vec![2.5; 64]).unwrap();
        assert!((s.get(0, 0) - Complex64::new(2.5, 0.0)).norm() < 1e-15);
        for (idx, z) in s.coefficients().iter().enumerate().skip(1) {
            assert!(z.norm() < 1e-15, "index {idx}: {z}");
        }
    }

    #[test]
    fn cosine_has_half_amplitude_coefficient() {
        let g = GridSpec::square(16, 1.0).unwrap();
        let f: Vec<f64> = (0..g.len())
            .map(|b| (2.0 * PI * (b / 16) as f64 / 16.0).cos())
            .collect();
        let s = rdft2_forward(&g, &f).unwrap();
        for mu1 in 0..s.rows() {
            for j2 in 0..16 {
                let want = if (mu1, j2) == (1, 0) { 0.5 } else { 0.0 };
                assert!((s.get(mu1, j2) - Complex64::new(want, 0.0)).norm() < 1e-14);
            }
        }
        let back = rdft2_inverse(&s).unwrap();
        for (a, b) in back.iter().zip(&f) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn single_mode_inverse_is_cosine() {
        let g = GridSpec::square(8, 1.0).unwrap();
        let mut s = HalfSpectrum::zeros(g);
        s.set(1, 0, Complex64::new(0.5, 0.0));
        let f = rdft2_inverse(&s).unwrap();
        for (b, v) in f.iter().enumerate() {
            let want = (2.0 * PI * (b / 8) as f64 / 8.0).cos();
            assert!((v - want).abs() < 1e-14);
        }
        assert!(rdft2_inverse(&HalfSpectrum::zeros(g))
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn asymmetric_spectrum_rejected() {
        let g = GridSpec::square(8, 1.0).unwrap();
        let mut s = HalfSpectrum::zeros(g);
        s.set(0, 1, Complex64::new(1.0, 0.0));
        assert!(matches!(rdft2_inverse(&s), Err(Error::InvalidSpectrum(_))));
        s.set(0, 7, Complex64::new(1.0, 0.0));
        assert!(rdft2_inverse(&s).is_ok());
        let mut t = HalfSpectrum::zeros(g);
        t.set(0, 0, Complex64::new(1.0, 0.5));
        assert!(rdft2_inverse(&t).is_err());
    }

    #[test]
    fn signed_wavenumbers() {
        let g = GridSpec::square(8, 1.0).unwrap();
        let s = HalfSpectrum::zeros(g);
        assert_eq!(s.rows(), 5);
        assert_eq!(s.kappa(4, 3), (4, 3));
        assert_eq!(s.kappa(0, 4), (0, -4));
        assert_eq!(s.kappa(0, 7), (0, -1));
        let k = WaveVector::derivative(&g, 4, 4);
        assert_eq!((k.k1, k.k2), (0.0, 0.0));
        let k = WaveVector::full(&g, 4, 4);
        assert!((k.k1 - 8.0 * PI).abs() < 1e-12 && (k.k2 + 8.0 * PI).abs() < 1e-12);
        assert_eq!(independent_modes(64), 33);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn roundtrip_identity(seed in any::<u64>(), e1 in 1usize..6, e2 in 1usize..6) {
                let (g, f) = random(2 * e1, 2 * e2, seed);
                let back = rdft2_inverse(&rdft2_forward(&g, &f).unwrap()).unwrap();
                for (a, b) in back.iter().zip(&f) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }

            #[test]
            fn spectrum_roundtrip(seed in any::<u64>()) {
                // a symmetric spectrum is the transform of some real field
                let (g, f) = random(8, 6, seed);
                let s = rdft2_forward(&g, &f).unwrap();
                let again = rdft2_forward(&g, &rdft2_inverse(&s).unwrap()).unwrap();
                for (a, b) in again.coefficients().iter().zip(s.coefficients()) {
                    prop_assert!((a - b).norm() < 1e-12);
                }
            }
        }
    }
}
