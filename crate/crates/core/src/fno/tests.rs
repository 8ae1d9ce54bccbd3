use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::field::{VectorField, OUT_OF_PLANE};
use crate::manifest::Manifest;
use crate::mechanics::voronoi_microstructure;
use crate::spectral::{curl_potential, spectral_div, spectral_div_adjoint};

fn small(head: Head) -> FnoConfig {
    FnoConfig {
        n_layers: 2,
        width: 3,
        modes: 2,
        head,
        activation: Activation::Gelu,
        fbar_input: false,
    }
}

fn random_input(grid: GridSpec, channels: usize, seed: u64) -> ModelInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ch = (0..channels)
        .map(|_| (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    ModelInput::from_channels(grid, ch).unwrap()
}

fn random_model(config: FnoConfig, seed: u64) -> FnoModel {
    // Larger spectral weights than the initializer so that every path
    // contributes visibly.
    let mut m = FnoModel::new(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for l in config.layout().layers {
        for v in &mut m.params_mut()[l.spectral] {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    m.set_out_scale(250.0).unwrap();
    m
}

fn weighted_sum(p: &TensorField, g: &TensorField) -> f64 {
    p.channels()
        .iter()
        .flatten()
        .zip(g.channels().iter().flatten())
        .map(|(a, b)| a * b)
        .sum()
}

fn random_tensor(grid: GridSpec, seed: u64) -> TensorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TensorField::from_components(
        grid,
        (0..9)
            .map(|_| (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
    )
    .unwrap()
}

#[test]
fn parameter_count_matches_hand_count() {
    let c = FnoConfig::default();
    let w = 20;
    let per_layer = 2 * (2 * 12 * 12) * w * w + w * w + w;
    assert_eq!(param_count(&c), (2 * w + w) + 4 * per_layer + (9 * w + 9));
    let g = FnoConfig {
        head: Head::Guided,
        fbar_input: true,
        ..c
    };
    assert_eq!(param_count(&g), (6 * w + w) + 4 * per_layer + (5 * w + 5));
    let layout = c.layout();
    let named = layout.named();
    assert_eq!(named.len(), 4 + 3 * 4);
    assert!(named.windows(2).all(|p| p[0].1.end == p[1].1.start));
    assert_eq!(named.last().unwrap().1.end, layout.len);
}

#[test]
fn gelu_derivative_matches_difference_quotient() {
    for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
        let h = 1e-6;
        let fd = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
        assert!((fd - Activation::Gelu.derivative(x)).abs() < 1e-9);
    }
    assert_eq!(Activation::Gelu.apply(0.0), 0.0);
    assert!((Activation::Gelu.apply(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
}

#[test]
fn names_roundtrip() {
    for h in Head::ALL {
        assert_eq!(h.to_string().parse::<Head>().unwrap(), h);
    }
    assert!("pinn".parse::<Head>().is_err());
    assert_eq!("gelu".parse::<Activation>().unwrap(), Activation::Gelu);
    assert!("relu".parse::<Activation>().is_err());
}

#[test]
fn encoded_output_is_divergence_free() {
    let grid = GridSpec::square(32, 1.7).unwrap();
    for seed in 0..10 {
        let config = FnoConfig {
            modes: 6,
            width: 5,
            ..small(Head::Encoded)
        };
        let model = random_model(config, seed);
        let out = model.forward(&random_input(grid, 2, 100 + seed)).unwrap();
        let p = &out.stress;
        assert!(p.is_plane_layout());
        let bound = 1e-11 * grid.base_wavenumber() * p.max_abs();
        assert!(p.max_abs() > 0.0);
        assert!(spectral_div(p).max_abs() < bound, "seed {seed}");
        let a = out.potential.as_ref().unwrap();
        let back = curl_potential(a).unwrap();
        for (x, y) in back.channels().iter().flatten().zip(p.channels().iter().flatten()) {
            assert!((x - y).abs() <= 1e-12 * p.max_abs());
        }
    }
}

#[test]
fn direct_heads_are_not_equilibrated() {
    let grid = GridSpec::square(16, 1.0).unwrap();
    let model = random_model(small(Head::Guided), 3);
    let p = model.predict(&random_input(grid, 2, 4)).unwrap();
    assert!(p.is_plane_layout());
    assert!(spectral_div(&p).max_abs() > 1e-3 * grid.base_wavenumber() * p.max_abs());
}

#[test]
fn zero_weights_give_bias_constant() {
    let grid = GridSpec::square(8, 1.0).unwrap();
    for head in Head::ALL {
        let config = small(head);
        let layout = config.layout();
        let mut params = vec![0.0; layout.len];
        let bias: Vec<f64> = (0..config.out_channels()).map(|k| 0.1 * (k as f64 + 1.0)).collect();
        params[layout.head_b.clone()].copy_from_slice(&bias);
        let model = FnoModel::from_params(config, params, 100.0).unwrap();
        let p = model.predict(&random_input(grid, 2, 1)).unwrap();
        let mut want = [[0.0; 3]; 3];
        for (k, (r, c)) in STRESS_SLOTS.into_iter().enumerate() {
            want[r][c] = 100.0 * bias[k];
        }
        for b in 0..grid.len() {
            let got = p.at(b);
            for r in 0..3 {
                for c in 0..3 {
                    assert!((got[r][c] - want[r][c]).abs() < 1e-12, "{head} {r}{c}");
                }
            }
        }
        assert_eq!(spectral_div(&p).max_abs(), 0.0);

        let zero = FnoModel::from_params(config, vec![0.0; layout.len], 100.0).unwrap();
        assert_eq!(zero.predict(&random_input(grid, 2, 1)).unwrap().max_abs(), 0.0);
    }
}

#[test]
fn mean_path_with_silenced_fluctuations() {
    let grid = GridSpec::square(16, 1.0).unwrap();
    let config = small(Head::Encoded);
    let mut model = random_model(config, 9);
    let layout = config.layout();
    let w = config.width;
    for ch in 5..9 {
        for v in &mut model.params_mut()[layout.head_w.start + ch * w..layout.head_w.start + (ch + 1) * w] {
            *v = 0.0;
        }
        model.params_mut()[layout.head_b.start + ch] = 0.0;
    }
    let out = model.forward(&random_input(grid, 2, 2)).unwrap();
    let a = out.potential.unwrap();
    let p = out.stress;
    for (r, c) in OUT_OF_PLANE {
        assert!(p.comp(r, c).iter().all(|&v| v == 0.0));
    }
    for (r, c) in STRESS_SLOTS {
        let want = a.comp(r, c)[0];
        assert!(p.comp(r, c).iter().all(|&v| (v - want).abs() <= 1e-12 * want.abs().max(1.0)));
        assert!(want.abs() > 0.0);
    }
}

#[test]
fn forward_is_deterministic() {
    let grid = GridSpec::square(16, 1.0).unwrap();
    let m = voronoi_microstructure(&grid, 6, 3).unwrap();
    let input = ModelInput::new(&m, None);
    for head in Head::ALL {
        let a = FnoModel::new(small(head), 42).unwrap();
        let b = FnoModel::new(small(head), 42).unwrap();
        assert_eq!(a, b);
        let pa = a.predict(&input).unwrap();
        let pb = b.predict(&input).unwrap();
        let bits = |p: &TensorField| p.channels().iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&pa), bits(&pb));
        assert_ne!(FnoModel::new(small(head), 43).unwrap(), a);
    }
}

#[test]
fn input_normalization_and_fbar_channels() {
    let grid = GridSpec::square(4, 1.0).unwrap();
    let m = MaterialField::new(grid, vec![50.0, 300.0, 175.0, 60.0].repeat(4), vec![0.2, 0.4, 0.3, 0.25].repeat(4))
        .unwrap();
    let fbar = [[1.0, 0.0, 0.0], [0.0, 1.004, 0.0], [0.0, 0.0, 1.0]];
    let x = ModelInput::new(&m, Some(&fbar));
    assert_eq!(x.channels().len(), 6);
    assert_eq!(&x.channels()[0][..4], &[0.0, 1.0, 0.5, 0.04]);
    let nu = &x.channels()[1][..4];
    for (a, b) in nu.iter().zip([0.0, 1.0, 0.5, 0.25]) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(x.channels()[5].iter().all(|&v| (v - 0.004).abs() < 1e-15));
    assert!(x.channels().iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    let model = FnoModel::new(small(Head::Guided), 0).unwrap();
    assert!(matches!(model.forward(&x), Err(Error::Shape(_))));
}

#[test]
fn too_many_modes_is_a_config_error() {
    let grid = GridSpec::square(4, 1.0).unwrap();
    let model = FnoModel::new(FnoConfig { modes: 3, ..small(Head::Encoded) }, 0).unwrap();
    assert!(matches!(model.forward(&random_input(grid, 2, 0)), Err(Error::Config(_))));
    assert!(FnoModel::new(FnoConfig { width: 0, ..small(Head::Encoded) }, 0).is_err());
}

#[test]
fn from_params_validates() {
    let c = small(Head::Guided);
    let n = param_count(&c);
    assert!(matches!(FnoModel::from_params(c, vec![0.0; n - 1], 1.0), Err(Error::Shape(_))));
    let mut p = vec![0.0; n];
    p[3] = f64::NAN;
    assert!(matches!(FnoModel::from_params(c, p, 1.0), Err(Error::Validation(_))));
    assert!(FnoModel::from_params(c, vec![0.0; n], 0.0).is_err());
}

/// Largest relative mismatch between analytic and central-difference
/// gradients of `L = <G, P(θ)>`. Entries far below the gradient scale are
/// compared against that scale instead of their own magnitude.
fn max_gradient_error(model: &FnoModel, input: &ModelInput, g: &TensorField) -> f64 {
    let out = model.forward(input).unwrap();
    let analytic = model.backward(&out, g).unwrap();
    let floor = 1e-6 * analytic.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut m = model.clone();
    for k in 0..analytic.len() {
        let orig = m.params()[k];
        m.params_mut()[k] = orig + h;
        let up = weighted_sum(&m.predict(input).unwrap(), g);
        m.params_mut()[k] = orig - h;
        let down = weighted_sum(&m.predict(input).unwrap(), g);
        m.params_mut()[k] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - analytic[k]).abs() / analytic[k].abs().max(fd.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let grid = GridSpec::square(8, 1.3).unwrap();
    for head in Head::ALL {
        let model = random_model(small(head), 11);
        let input = random_input(grid, 2, 12);
        let g = random_tensor(grid, 13).scaled(1e-2);
        let err = max_gradient_error(&model, &input, &g);
        assert!(err < 1e-5, "{head}: {err:e}");
    }
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let grid = GridSpec::square(8, 1.0).unwrap();
    for head in Head::ALL {
        let model = random_model(small(head), 5);
        let out = model.forward(&random_input(grid, 2, 6)).unwrap();
        let g = model.backward(&out, &TensorField::zeros(grid)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn encoded_gradient_of_divergence_pairing_vanishes() {
    // Any loss that only sees div P has zero gradient through the encoded head.
    let grid = GridSpec::square(16, 1.0).unwrap();
    let model = random_model(small(Head::Encoded), 7);
    let out = model.forward(&random_input(grid, 2, 8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = VectorField::from_components(
        grid,
        (0..3)
            .map(|_| (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
    )
    .unwrap();
    let g_div = model
        .backward(&out, &spectral_div_adjoint(&v))
        .unwrap();
    let g_ref = model.backward(&out, &random_tensor(grid, 2)).unwrap();
    let max = |g: &[f64]| g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(max(&g_div) < 1e-12 * max(&g_ref), "{:e}", max(&g_div) / max(&g_ref));
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let model = random_model(small(Head::Informed), 21);
    let mut extra = Manifest::new();
    extra.set("seed", 21);
    save_checkpoint(dir.path(), &model, &extra).unwrap();
    let (back, m) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back, model);
    assert_eq!(m.get("seed"), Some("21"));
    assert_eq!(m.get("fno.head"), Some("informed"));

    std::fs::write(dir.path().join("head_b.pefno"), b"PEFNO1\0\x01").unwrap();
    match load_checkpoint(dir.path()) {
        Err(Error::Format { path, .. }) => assert!(path.ends_with("head_b.pefno")),
        other => panic!("expected format error, got {other:?}"),
    }
}

/// Band-limited two-channel input sampled on an `n × n` grid.
fn band_limited(n: usize) -> ModelInput {
    let grid = GridSpec::square(n, 1.0).unwrap();
    let f = |x1: f64, x2: f64| {
        [
            0.5 + 0.3 * (2.0 * PI * x1).cos() * (2.0 * PI * x2).sin(),
            0.4 - 0.2 * (2.0 * PI * (x1 - 2.0 * x2)).sin(),
        ]
    };
    let mut ch = vec![Vec::with_capacity(grid.len()), Vec::with_capacity(grid.len())];
    for i1 in 0..n {
        for i2 in 0..n {
            let [x1, x2] = grid.position(i1, i2);
            let v = f(x1, x2);
            ch[0].push(v[0]);
            ch[1].push(v[1]);
        }
    }
    ModelInput::from_channels(grid, ch).unwrap()
}

#[test]
fn resolution_transfer_on_band_limited_input() {
    let config = FnoConfig {
        n_layers: 2,
        width: 4,
        modes: 4,
        head: Head::Guided,
        activation: Activation::Gelu,
        fbar_input: false,
    };
    let model = random_model(config, 3);
    let coarse = model.predict(&band_limited(32)).unwrap();
    let fine = model.predict(&band_limited(64)).unwrap();
    let scale = fine.max_abs();
    let mut worst = 0.0f64;
    for i1 in 0..32 {
        for i2 in 0..32 {
            let a = coarse.at(i1 * 32 + i2);
            let b = fine.at(2 * i1 * 64 + 2 * i2);
            for r in 0..3 {
                for c in 0..3 {
                    worst = worst.max((a[r][c] - b[r][c]).abs());
                }
            }
        }
    }
    assert!(worst <= 1e-6 * scale, "{:e}", worst / scale);
}
