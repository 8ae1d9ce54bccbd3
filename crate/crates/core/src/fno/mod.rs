//! Fourier neural operator mapping material fields to stress fields.
//!
//! The network is a pointwise lift, `n_layers` spectral convolution blocks
//! and a pointwise head. Two head families exist:
//!
//! * `guided` / `informed`: the head emits P11, P12, P21, P22 and P33 directly.
//!   Both heads share the architecture and differ only in the training loss.
//! * `encoded`: the head emits a stress potential. The in-plane and `33`
//!   slots are reduced to their cell means, the four out-of-plane slots are
//!   used as zero-mean fluctuations, and the stress is the curl of that
//!   potential. Its spectral divergence vanishes for every parameter value.
//!
//! All parameters live in one flat vector; [`ParamLayout`] names the slices.
//! Gradients are computed by hand-written reverse mode in [`FnoModel::backward`].

mod checkpoint;
mod layer;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layer::{spectral_conv_layer, SpectralWeights};

use crate::error::{Error, Result};
use crate::field::{channel_mean, GridSpec, Mat3, TensorField};
use crate::mechanics::MaterialField;
use crate::spectral::{curl_plane, curl_plane_adjoint};
use layer::{block_len, check_modes, LayerGrads, LayerParams, LayerTape};

/// Stress slots produced by the direct heads, in channel order.
pub const STRESS_SLOTS: [(usize, usize); 5] = [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)];

/// Potential slots produced by the encoded head, in channel order: the five
/// mean slots followed by the four fluctuation slots.
pub const POTENTIAL_SLOTS: [(usize, usize); 9] = [
    (0, 0),
    (0, 1),
    (1, 0),
    (1, 1),
    (2, 2),
    (0, 2),
    (1, 2),
    (2, 0),
    (2, 1),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Head {
    Guided,
    Informed,
    Encoded,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::Guided, Head::Informed, Head::Encoded];

    pub fn out_channels(self) -> usize {
        match self {
            Head::Guided | Head::Informed => STRESS_SLOTS.len(),
            Head::Encoded => POTENTIAL_SLOTS.len(),
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Guided => "guided",
            Head::Informed => "informed",
            Head::Encoded => "encoded",
        })
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "guided" => Ok(Head::Guided),
            "informed" => Ok(Head::Informed),
            "encoded" => Ok(Head::Encoded),
            _ => Err(Error::Config(format!("unknown head `{s}` (guided, informed, encoded)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Gelu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => x * normal_cdf(x),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                normal_cdf(x) + x * pdf
            }
            Activation::Identity => 1.0,
        }
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Gelu => "gelu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::Config(format!("unknown activation `{s}` (gelu, identity)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FnoConfig {
    pub n_layers: usize,
    pub width: usize,
    pub modes: usize,
    pub head: Head,
    pub activation: Activation,
    /// Append the in-plane entries of `F̄ - I` as constant input channels.
    pub fbar_input: bool,
}

impl Default for FnoConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            width: 20,
            modes: 12,
            head: Head::Encoded,
            activation: Activation::Gelu,
            fbar_input: false,
        }
    }
}

impl FnoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.width == 0 || self.modes == 0 {
            return Err(Error::Config("fno layers, width and modes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        if self.fbar_input {
            6
        } else {
            2
        }
    }

    pub fn out_channels(&self) -> usize {
        self.head.out_channels()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }
}

/// Offsets of the named parameter tensors in the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub lift_w: Range<usize>,
    pub lift_b: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    /// `(re, im)` pairs, `[mode][out][in]`.
    pub spectral: Range<usize>,
    pub bypass_w: Range<usize>,
    pub bypass_b: Range<usize>,
}

impl ParamLayout {
    fn new(c: &FnoConfig) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let w = c.width;
        let lift_w = take(w * c.in_channels());
        let lift_b = take(w);
        let layers = (0..c.n_layers)
            .map(|_| LayerLayout {
                spectral: take(2 * block_len(c.modes) * w * w),
                bypass_w: take(w * w),
                bypass_b: take(w),
            })
            .collect();
        let head_w = take(c.out_channels() * w);
        let head_b = take(c.out_channels());
        Self {
            lift_w,
            lift_b,
            layers,
            head_w,
            head_b,
            len: at,
        }
    }

    /// `(name, range)` for every tensor, in storage order.
    pub fn named(&self) -> Vec<(String, Range<usize>)> {
        let mut v = vec![("lift_w".to_string(), self.lift_w.clone()), ("lift_b".into(), self.lift_b.clone())];
        for (k, l) in self.layers.iter().enumerate() {
            v.push((format!("layer{k}_spectral"), l.spectral.clone()));
            v.push((format!("layer{k}_bypass_w"), l.bypass_w.clone()));
            v.push((format!("layer{k}_bypass_b"), l.bypass_b.clone()));
        }
        v.push(("head_w".into(), self.head_w.clone()));
        v.push(("head_b".into(), self.head_b.clone()));
        v
    }
}

/// Number of trainable parameters of a configuration.
pub fn param_count(config: &FnoConfig) -> usize {
    config.layout().len
}

/// Normalized network input on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    grid: GridSpec,
    channels: Vec<Vec<f64>>,
}

/// Affine maps taking the admissible property ranges onto `[0, 1]`.
pub fn normalize_youngs(e: f64) -> f64 {
    (e - 50.0) / 250.0
}

pub fn normalize_poisson(nu: f64) -> f64 {
    (nu - 0.2) / 0.2
}

impl ModelInput {
    /// Material channels, followed by `F̄ - I` channels when `fbar` is given.
    pub fn new(material: &MaterialField, fbar: Option<&Mat3>) -> Self {
        let mut channels = vec![
            material.youngs().iter().map(|&e| normalize_youngs(e)).collect(),
            material.poisson().iter().map(|&nu| normalize_poisson(nu)).collect(),
        ];
        if let Some(f) = fbar {
            let n = material.grid().len();
            for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let v = f[r][c] - if r == c { 1.0 } else { 0.0 };
                channels.push(vec![v; n]);
            }
        }
        Self {
            grid: *material.grid(),
            channels,
        }
    }

    /// Raw channels, e.g. for synthetic inputs.
    pub fn from_channels(grid: GridSpec, channels: Vec<Vec<f64>>) -> Result<Self> {
        for (k, ch) in channels.iter().enumerate() {
            crate::field::check_channel(&grid, ch, &format!("input channel {k}"))?;
        }
        Ok(Self { grid, channels })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FnoModel {
    config: FnoConfig,
    params: Vec<f64>,
    /// Fixed output scale [MPa] applied to the head.
    out_scale: f64,
}

/// Forward result with the values needed by [`FnoModel::backward`].
pub struct FnoOutput {
    /// First Piola–Kirchhoff stress [MPa].
    pub stress: TensorField,
    /// Encoded head only: the potential whose curl is `stress`, with constant
    /// mean slots and zero-mean fluctuation slots.
    pub potential: Option<TensorField>,
    tape: Tape,
}

struct Tape {
    grid: GridSpec,
    input: Vec<Vec<f64>>,
    /// Inputs of each block, then the last block's output.
    hidden: Vec<Vec<Vec<f64>>>,
    layers: Vec<LayerTape>,
}

impl FnoModel {
    /// Freshly initialized model: spectral weights uniform in
    /// `±1/(width·modes²)` (real and imaginary parts), affine maps uniform in
    /// `±1/√fan_in`.
    pub fn new(config: FnoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.len];
        let mut fill = |r: &Range<usize>, bound: f64, rng: &mut ChaCha8Rng| {
            for v in &mut params[r.clone()] {
                *v = rng.gen_range(-bound..bound);
            }
        };
        let b_in = 1.0 / (config.in_channels() as f64).sqrt();
        let b_w = 1.0 / (config.width as f64).sqrt();
        fill(&layout.lift_w, b_in, &mut rng);
        fill(&layout.lift_b, b_in, &mut rng);
        let b_spec = 1.0 / (config.width * config.modes * config.modes) as f64;
        for l in &layout.layers {
            fill(&l.spectral, b_spec, &mut rng);
            fill(&l.bypass_w, b_w, &mut rng);
            fill(&l.bypass_b, b_w, &mut rng);
        }
        fill(&layout.head_w, b_w, &mut rng);
        fill(&layout.head_b, b_w, &mut rng);
        Ok(Self {
            config,
            params,
            out_scale: 1.0,
        })
    }

    pub fn from_params(config: FnoConfig, params: Vec<f64>, out_scale: f64) -> Result<Self> {
        config.validate()?;
        if params.len() != param_count(&config) {
            return Err(Error::Shape(format!(
                "{} parameters given, configuration needs {}",
                params.len(),
                param_count(&config)
            )));
        }
        if let Some(k) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("parameter {k} is not finite")));
        }
        if !(out_scale.is_finite() && out_scale > 0.0) {
            return Err(Error::Validation(format!("output scale {out_scale} must be positive")));
        }
        Ok(Self {
            config,
            params,
            out_scale,
        })
    }

    pub fn config(&self) -> &FnoConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn out_scale(&self) -> f64 {
        self.out_scale
    }

    pub fn set_out_scale(&mut self, s: f64) -> Result<()> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Validation(format!("output scale {s} must be positive")));
        }
        self.out_scale = s;
        Ok(())
    }

    fn layer_params(&self, l: &LayerLayout) -> LayerParams<'_> {
        LayerParams {
            spectral: &self.params[l.spectral.clone()],
            bypass_w: &self.params[l.bypass_w.clone()],
            bypass_b: &self.params[l.bypass_b.clone()],
        }
    }

    pub fn predict(&self, input: &ModelInput) -> Result<TensorField> {
        Ok(self.forward(input)?.stress)
    }

    pub fn forward(&self, input: &ModelInput) -> Result<FnoOutput> {
        let c = &self.config;
        let grid = *input.grid();
        check_modes(&grid, c.modes)?;
        if input.channels.len() != c.in_channels() {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {}",
                c.in_channels(),
                input.channels.len()
            )));
        }
        let layout = c.layout();
        let lifted = affine(
            &input.channels,
            &self.params[layout.lift_w.clone()],
            &self.params[layout.lift_b.clone()],
        );
        let mut hidden = vec![lifted];
        let mut layers = Vec::with_capacity(c.n_layers);
        for l in &layout.layers {
            let x = hidden.last().expect("lifted field present");
            let (y, tape) = layer::forward(&grid, c.modes, c.activation, self.layer_params(l), x);
            layers.push(tape);
            hidden.push(y);
        }
        let out = affine(
            hidden.last().expect("hidden state present"),
            &self.params[layout.head_w.clone()],
            &self.params[layout.head_b.clone()],
        );
        let (stress, potential) = self.assemble(&grid, out);
        Ok(FnoOutput {
            stress,
            potential,
            tape: Tape {
                grid,
                input: input.channels.clone(),
                hidden,
                layers,
            },
        })
    }

    fn assemble(&self, grid: &GridSpec, out: Vec<Vec<f64>>) -> (TensorField, Option<TensorField>) {
        let s = self.out_scale;
        match self.config.head {
            Head::Guided | Head::Informed => {
                let mut comps = vec![vec![0.0; grid.len()]; 9];
                for ((r, c), ch) in STRESS_SLOTS.into_iter().zip(out) {
                    comps[3 * r + c] = ch.into_iter().map(|v| s * v).collect();
                }
                (TensorField::from_raw(*grid, comps), None)
            }
            Head::Encoded => {
                let mean: [f64; 5] = std::array::from_fn(|j| channel_mean(&out[j]));
                let fluct: [&[f64]; 4] = std::array::from_fn(|j| out[5 + j].as_slice());
                let stress = curl_plane(grid, &mean, fluct).scaled(s);
                let mut comps = vec![vec![0.0; grid.len()]; 9];
                for (j, (r, c)) in POTENTIAL_SLOTS.into_iter().enumerate() {
                    comps[3 * r + c] = if j < 5 {
                        vec![s * mean[j]; grid.len()]
                    } else {
                        let m = channel_mean(&out[j]);
                        out[j].iter().map(|v| s * (v - m)).collect()
                    };
                }
                (stress, Some(TensorField::from_raw(*grid, comps)))
            }
        }
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient `stress_bar` with respect to the output stress.
    pub fn backward(&self, out: &FnoOutput, stress_bar: &TensorField) -> Result<Vec<f64>> {
        let c = &self.config;
        let tape = &out.tape;
        let grid = tape.grid;
        if !stress_bar.grid().same_shape(&grid) {
            return Err(Error::Shape("stress gradient grid differs from forward grid".into()));
        }
        let layout = c.layout();
        let mut g = vec![0.0; layout.len];
        let s = self.out_scale;

        let out_bar: Vec<Vec<f64>> = match c.head {
            Head::Guided | Head::Informed => STRESS_SLOTS
                .iter()
                .map(|&(r, cc)| stress_bar.comp(r, cc).iter().map(|v| s * v).collect())
                .collect(),
            Head::Encoded => {
                let (gm, gf) = curl_plane_adjoint(stress_bar);
                let n = grid.len() as f64;
                let mut v: Vec<Vec<f64>> = gm.iter().map(|m| vec![s * m / n; grid.len()]).collect();
                v.extend(gf.into_iter().map(|f| f.into_iter().map(|x| s * x).collect::<Vec<_>>()));
                v
            }
        };

        let last = tape.hidden.last().expect("hidden state present");
        let mut x_bar = affine_backward(
            last,
            &out_bar,
            &self.params[layout.head_w.clone()],
            &mut g,
            layout.head_w.clone(),
            layout.head_b.clone(),
        );
        for (k, l) in layout.layers.iter().enumerate().rev() {
            let (spec, rest) = g.split_at_mut(l.bypass_w.start);
            let (bw, bb) = rest.split_at_mut(l.bypass_b.start - l.bypass_w.start);
            let grads = LayerGrads {
                spectral: &mut spec[l.spectral.clone()],
                bypass_w: &mut bw[..l.bypass_w.len()],
                bypass_b: &mut bb[..l.bypass_b.len()],
            };
            x_bar = layer::backward(
                &grid,
                c.modes,
                c.activation,
                self.layer_params(l),
                &tape.hidden[k],
                &tape.layers[k],
                &x_bar,
                grads,
            );
        }
        affine_backward(
            &tape.input,
            &x_bar,
            &self.params[layout.lift_w.clone()],
            &mut g,
            layout.lift_w.clone(),
            layout.lift_b.clone(),
        );
        Ok(g)
    }
}

/// Pointwise `y_o = Σ_i w[o][i] x_i + b_o`.
fn affine(x: &[Vec<f64>], w: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    let cin = x.len();
    let n = x.first().map_or(0, Vec::len);
    b.iter()
        .enumerate()
        .map(|(o, &bo)| {
            let row = &w[o * cin..(o + 1) * cin];
            let mut y = vec![bo; n];
            for (wi, xi) in row.iter().zip(x) {
                for (yv, xv) in y.iter_mut().zip(xi) {
                    *yv += wi * xv;
                }
            }
            y
        })
        .collect()
}

fn affine_backward(
    x: &[Vec<f64>],
    y_bar: &[Vec<f64>],
    w: &[f64],
    g: &mut [f64],
    w_range: Range<usize>,
    b_range: Range<usize>,
) -> Vec<Vec<f64>> {
    let cin = x.len();
    let n = x.first().map_or(0, Vec::len);
    let mut x_bar = vec![vec![0.0; n]; cin];
    for (o, yb) in y_bar.iter().enumerate() {
        g[b_range.start + o] += yb.iter().sum::<f64>();
        for (i, xi) in x.iter().enumerate() {
            let wi = w[o * cin + i];
            let mut acc = 0.0;
            for ((&yv, &xv), xb) in yb.iter().zip(xi).zip(x_bar[i].iter_mut()) {
                acc += yv * xv;
                *xb += wi * yv;
            }
            g[w_range.start + o * cin + i] += acc;
        }
    }
    x_bar
}

#[cfg(test)]
mod tests;
