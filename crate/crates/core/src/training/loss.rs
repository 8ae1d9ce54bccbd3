//! Weighted data loss, divergence penalty and the gradient-based weights.

use crate::error::{Error, Result};
use crate::field::{channel_mean, GridSpec, TensorField, VectorField};
use crate::fno::STRESS_SLOTS;
use crate::spectral::{spectral_div, spectral_div_adjoint, spectral_gradient};

/// Per-point weights of the supervised components, [`STRESS_SLOTS`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField {
    grid: GridSpec,
    channels: [Vec<f64>; 5],
}

impl WeightField {
    pub fn ones(grid: GridSpec) -> Self {
        Self {
            grid,
            channels: std::array::from_fn(|_| vec![1.0; grid.len()]),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn channels(&self) -> &[Vec<f64>; 5] {
        &self.channels
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            grid: self.grid,
            channels: self.channels.clone().map(|c| c.into_iter().map(|v| alpha * v).collect()),
        }
    }

    /// Weight applied to divergence row `r` when the weighted penalty is
    /// enabled: the mean of the row's two in-plane component weights.
    fn row_weight(&self, r: usize, b: usize) -> f64 {
        0.5 * (self.channels[2 * r][b] + self.channels[2 * r + 1][b])
    }
}

/// `W_c = 1 + |∇P_c| / (mean|P_c| + ε)`, `ε = 1e-8 · max_c mean|P_c|`, with
/// the gradient taken spectrally.
pub fn weight_matrix(p_dat: &TensorField) -> Result<WeightField> {
    let grid = *p_dat.grid();
    let refs: Vec<f64> = STRESS_SLOTS
        .iter()
        .map(|&(r, c)| {
            let abs: Vec<f64> = p_dat.comp(r, c).iter().map(|v| v.abs()).collect();
            channel_mean(&abs)
        })
        .collect();
    let eps = 1e-8 * refs.iter().cloned().fold(0.0, f64::max);
    let mut channels: [Vec<f64>; 5] = std::array::from_fn(|_| vec![1.0; grid.len()]);
    for (k, &(r, c)) in STRESS_SLOTS.iter().enumerate() {
        let norm = refs[k] + eps;
        if norm == 0.0 {
            continue;
        }
        let [g1, g2] = spectral_gradient(&grid, p_dat.comp(r, c))?;
        for ((w, a), b) in channels[k].iter_mut().zip(&g1).zip(&g2) {
            *w = 1.0 + a.hypot(*b) / norm;
        }
    }
    Ok(WeightField { grid, channels })
}

fn check_pair(a: &TensorField, b: &TensorField, w: &WeightField) -> Result<()> {
    if !a.grid().same_shape(b.grid()) || !a.grid().same_shape(w.grid()) {
        return Err(Error::Shape(format!(
            "loss operands on {}x{}, {}x{} and {}x{} grids",
            a.grid().n1(),
            a.grid().n2(),
            b.grid().n1(),
            b.grid().n2(),
            w.grid().n1(),
            w.grid().n2()
        )));
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `Σ_b Σ_c W_c |P_out,c - P_dat,c|` for one sample.
pub fn sample_data_loss(p_out: &TensorField, p_dat: &TensorField, w: &WeightField) -> Result<f64> {
    check_pair(p_out, p_dat, w)?;
    let mut sum = 0.0;
    for (k, &(r, c)) in STRESS_SLOTS.iter().enumerate() {
        for ((o, d), wv) in p_out.comp(r, c).iter().zip(p_dat.comp(r, c)).zip(&w.channels[k]) {
            sum += wv * (o - d).abs();
        }
    }
    Ok(sum)
}

/// Gradient of [`sample_data_loss`] with respect to `p_out`, with
/// `sign(0) = 0`.
pub fn sample_data_loss_grad(p_out: &TensorField, p_dat: &TensorField, w: &WeightField) -> Result<TensorField> {
    check_pair(p_out, p_dat, w)?;
    let grid = *p_out.grid();
    let mut comps = vec![vec![0.0; grid.len()]; 9];
    for (k, &(r, c)) in STRESS_SLOTS.iter().enumerate() {
        comps[3 * r + c] = p_out
            .comp(r, c)
            .iter()
            .zip(p_dat.comp(r, c))
            .zip(&w.channels[k])
            .map(|((o, d), wv)| wv * sign(o - d))
            .collect();
    }
    TensorField::from_components(grid, comps)
}

/// Data loss over a set of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DataLoss {
    /// `(1/n_dat) Σ_a` of the per-sample sums.
    pub total: f64,
    pub per_sample: Vec<f64>,
}

pub fn loss_data(outs: &[TensorField], dats: &[TensorField], ws: &[WeightField], n_dat: usize) -> Result<DataLoss> {
    if outs.len() != dats.len() || outs.len() != ws.len() {
        return Err(Error::Shape(format!(
            "{} outputs, {} targets and {} weight fields",
            outs.len(),
            dats.len(),
            ws.len()
        )));
    }
    if n_dat == 0 {
        return Err(Error::Validation("n_dat must be positive".into()));
    }
    let per_sample = outs
        .iter()
        .zip(dats)
        .zip(ws)
        .map(|((o, d), w)| sample_data_loss(o, d, w))
        .collect::<Result<Vec<_>>>()?;
    let total = per_sample.iter().sum::<f64>() / n_dat as f64;
    Ok(DataLoss { total, per_sample })
}

/// `Σ_b Σ_r |(div P)_r|` for one sample, optionally weighted per row.
pub fn sample_div_loss(p_out: &TensorField, w: Option<&WeightField>) -> f64 {
    let d = spectral_div(p_out);
    let mut sum = 0.0;
    for r in 0..2 {
        for (b, v) in d.comp(r).iter().enumerate() {
            sum += w.map_or(1.0, |w| w.row_weight(r, b)) * v.abs();
        }
    }
    sum
}

/// Gradient of [`sample_div_loss`] with respect to `p_out`.
pub fn sample_div_loss_grad(p_out: &TensorField, w: Option<&WeightField>) -> TensorField {
    let d = spectral_div(p_out);
    let grid = *p_out.grid();
    let mut comps = vec![vec![0.0; grid.len()]; 3];
    for r in 0..2 {
        comps[r] = d
            .comp(r)
            .iter()
            .enumerate()
            .map(|(b, v)| w.map_or(1.0, |w| w.row_weight(r, b)) * sign(*v))
            .collect();
    }
    spectral_div_adjoint(&VectorField::from_raw(grid, comps))
}

pub fn loss_div(outs: &[TensorField], n_dat: usize) -> Result<f64> {
    if n_dat == 0 {
        return Err(Error::Validation("n_dat must be positive".into()));
    }
    Ok(outs.iter().map(|p| sample_div_loss(p, None)).sum::<f64>() / n_dat as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Mat3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_plane(grid: GridSpec, seed: u64) -> TensorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut comps = vec![vec![0.0; grid.len()]; 9];
        for (r, c) in STRESS_SLOTS {
            comps[3 * r + c] = (0..grid.len()).map(|_| rng.gen_range(-300.0..300.0)).collect();
        }
        TensorField::from_components(grid, comps).unwrap()
    }

    #[test]
    fn uniform_stress_has_unit_weights() {
        let g = GridSpec::square(16, 1.0).unwrap();
        let p: Mat3 = [[3.0, -1.0, 0.0], [2.0, 241.0, 0.0], [0.0, 0.0, 90.0]];
        let w = weight_matrix(&TensorField::uniform(g, &p)).unwrap();
        assert!(w.channels().iter().flatten().all(|&v| v == 1.0));
        let w0 = weight_matrix(&TensorField::zeros(g)).unwrap();
        assert!(w0.channels().iter().flatten().all(|&v| v == 1.0));
    }

    #[test]
    fn step_profile_peaks_at_interface_rows() {
        let n = 32;
        let g = GridSpec::square(n, 1.0).unwrap();
        let p = TensorField::from_fn(g, |[x1, _]| {
            let v = if (0.25..0.75).contains(&x1) { 300.0 } else { 100.0 };
            [[0.0; 3], [0.0, v, 0.0], [0.0; 3]]
        })
        .unwrap();
        let w = weight_matrix(&p).unwrap();
        let w22 = &w.channels()[3];
        let row = |i1: usize| w22[g.index(i1, 0)];
        let max = w22.iter().cloned().fold(0.0, f64::max);
        let interface = [7, 8, 23, 24];
        let peak = interface.iter().map(|&i| row(i)).fold(0.0, f64::max);
        assert_eq!(peak, max);
        for i1 in 0..n {
            if !interface.contains(&i1) {
                assert!(row(i1) < peak);
            }
            for i2 in 0..n {
                assert!((w22[g.index(i1, i2)] - row(i1)).abs() <= 1e-12 * peak);
            }
        }
        assert!(w.channels()[0].iter().all(|&v| v == 1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn weights_are_scale_invariant(seed in any::<u64>(), alpha in 1e-3f64..1e3) {
            let g = GridSpec::square(8, 1.0).unwrap();
            let p = random_plane(g, seed);
            let w = weight_matrix(&p).unwrap();
            let wa = weight_matrix(&p.scaled(alpha)).unwrap();
            for (a, b) in w.channels().iter().flatten().zip(wa.channels().iter().flatten()) {
                prop_assert!(*a >= 1.0);
                prop_assert!((a - b).abs() <= 1e-12 * a);
            }
        }

        #[test]
        fn data_loss_nonnegative_and_zero_on_match(seed in any::<u64>()) {
            let g = GridSpec::square(8, 1.0).unwrap();
            let a = random_plane(g, seed);
            let b = random_plane(g, seed.wrapping_add(1));
            let w = weight_matrix(&b).unwrap();
            prop_assert!(sample_data_loss(&a, &b, &w).unwrap() > 0.0);
            prop_assert_eq!(sample_data_loss(&b, &b, &w).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_point_offset() {
        let g = GridSpec::square(4, 1.0).unwrap();
        let dat = random_plane(g, 3);
        let mut comps = dat.clone().into_channels();
        comps[3 * 1 + 0][5] += 0.75;
        let out = TensorField::from_components(g, comps).unwrap();
        let w = WeightField::ones(g);
        let l = loss_data(&[out.clone()], &[dat.clone()], &[w.clone()], 1).unwrap();
        assert!((l.total - 0.75).abs() < 1e-12);
        assert_eq!(l.per_sample.len(), 1);
        let l2 = loss_data(&[out.clone()], &[dat.clone()], &[w.scaled(2.0)], 1).unwrap();
        assert!((l2.total - 1.5).abs() < 1e-12);
        let l4 = loss_data(&[out.clone(), dat.clone()], &[dat.clone(), dat.clone()], &[w.clone(), w.clone()], 4).unwrap();
        assert!((l4.total - 0.75 / 4.0).abs() < 1e-12);
        assert_eq!(loss_data(&[dat.clone()], &[dat.clone()], &[w.clone()], 1).unwrap().total, 0.0);
        assert!(matches!(loss_data(&[out], &[], &[w], 1), Err(Error::Shape(_))));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = TensorField::zeros(GridSpec::square(4, 1.0).unwrap());
        let b = TensorField::zeros(GridSpec::square(8, 1.0).unwrap());
        let w = WeightField::ones(*a.grid());
        assert!(matches!(sample_data_loss(&a, &b, &w), Err(Error::Shape(_))));
    }

    #[test]
    fn sine_divergence_penalty() {
        for (n, l) in [(64, 1.0), (48, 2.0)] {
            let g = GridSpec::square(n, l).unwrap();
            let p = TensorField::from_fn(g, |[x1, _]| {
                [[(2.0 * PI * x1 / l).sin(), 0.0, 0.0], [0.0; 3], [0.0; 3]]
            })
            .unwrap();
            // Brute-force discrete mean of |cos| on the grid.
            let mean_cos = (0..n).map(|i| (2.0 * PI * i as f64 / n as f64).cos().abs()).sum::<f64>() / n as f64;
            let want = g.len() as f64 * (2.0 * PI / l) * mean_cos;
            let got = loss_div(&[p], 1).unwrap();
            assert!((got - want).abs() < 1e-10 * want);
            assert!((got / g.len() as f64 - 4.0 / l).abs() < 2e-3 * 4.0 / l);
        }
        let g = GridSpec::square(8, 1.0).unwrap();
        let c = TensorField::uniform(g, &[[1.0, 2.0, 0.0], [3.0, 4.0, 0.0], [0.0, 0.0, 5.0]]);
        assert_eq!(loss_div(&[c], 1).unwrap(), 0.0);
    }

    fn central_difference(f: impl Fn(&TensorField) -> f64, p: &TensorField, r: usize, c: usize, b: usize) -> f64 {
        // Both losses are piecewise linear in P; a wide step is exact away
        // from sign changes and keeps the roundoff of the large sums small.
        let h = 1e-3;
        let mut up = p.clone().into_channels();
        up[3 * r + c][b] += h;
        let mut down = p.clone().into_channels();
        down[3 * r + c][b] -= h;
        let g = *p.grid();
        (f(&TensorField::from_components(g, up).unwrap()) - f(&TensorField::from_components(g, down).unwrap()))
            / (2.0 * h)
    }

    #[test]
    fn loss_gradients_match_differences() {
        let g = GridSpec::square(8, 1.0).unwrap();
        let out = random_plane(g, 1);
        let dat = random_plane(g, 2);
        let w = weight_matrix(&dat).unwrap();
        let gd = sample_data_loss_grad(&out, &dat, &w).unwrap();
        for weighted in [None, Some(&w)] {
            let gv = sample_div_loss_grad(&out, weighted);
            for (r, c) in STRESS_SLOTS {
                for b in [0, 9, 33, 63] {
                    let fd = central_difference(|p| sample_data_loss(p, &dat, &w).unwrap(), &out, r, c, b);
                    assert!((fd - gd.comp(r, c)[b]).abs() < 1e-6 * fd.abs().max(1.0));
                    let fd = central_difference(|p| sample_div_loss(p, weighted), &out, r, c, b);
                    assert!((fd - gv.comp(r, c)[b]).abs() < 1e-5 * fd.abs().max(1.0), "{r}{c} {b}");
                }
            }
        }
    }
}
