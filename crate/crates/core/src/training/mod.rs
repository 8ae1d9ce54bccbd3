//! Losses, optimizer and training/evaluation loops.
//!
//! The data loss sums `W_c |P_out,c - P_dat,c|` over points and supervised
//! components and divides by the number of samples. The divergence penalty
//! sums `|(div P_out)_r|` over points and rows the same way. The informed head
//! minimizes `L_dat + c L_div`; the guided and encoded heads minimize `L_dat`
//! alone, and `L_div` is only reported for them.

mod loss;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use loss::{
    loss_data, loss_div, sample_data_loss, sample_data_loss_grad, sample_div_loss, sample_div_loss_grad,
    weight_matrix, DataLoss, WeightField,
};

use crate::error::{Error, Result};
use crate::field::{Mat3, TensorField};
use crate::fno::{FnoModel, Head, ModelInput, STRESS_SLOTS};
use crate::manifest::fmt_f64;
use crate::mechanics::{derive_seed, MaterialField, Sample};
use crate::spectral::spectral_div;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Initial learning rate, decayed by a half cosine to `lr_min`.
    pub lr: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Divergence-penalty weight of the informed head.
    pub c: f64,
    /// Apply the data weights to the divergence penalty as well.
    pub weighted_div: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 8,
            lr: 1e-3,
            lr_min: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            c: 0.1,
            weighted_div: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch == 0 {
            return bad("train.batch must be at least 1");
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad("train.c must be a finite non-negative number");
        }
        if !(self.lr > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr) {
            return bad("learning rates must satisfy 0 < lr_min <= lr");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `e` (counted from 0).
    pub fn learning_rate(&self, e: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr;
        }
        let t = e as f64 / (self.epochs - 1) as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Inputs, targets and weights of a training set sharing one grid and load.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    inputs: Vec<ModelInput>,
    targets: Vec<TensorField>,
    weights: Vec<WeightField>,
}

impl TrainingSet {
    pub fn new(materials: &[MaterialField], stresses: Vec<TensorField>, fbar: &Mat3, fbar_input: bool) -> Result<Self> {
        if materials.is_empty() {
            return Err(Error::Validation("training set is empty".into()));
        }
        if materials.len() != stresses.len() {
            return Err(Error::Shape(format!(
                "{} materials but {} stress fields",
                materials.len(),
                stresses.len()
            )));
        }
        let grid = *materials[0].grid();
        for (k, (m, p)) in materials.iter().zip(&stresses).enumerate() {
            if *m.grid() != grid || *p.grid() != grid {
                return Err(Error::Shape(format!("sample {k} is not on the shared grid")));
            }
        }
        let weights = stresses.iter().map(weight_matrix).collect::<Result<Vec<_>>>()?;
        let inputs = materials
            .iter()
            .map(|m| ModelInput::new(m, fbar_input.then_some(fbar)))
            .collect();
        Ok(Self {
            inputs,
            targets: stresses,
            weights,
        })
    }

    pub fn from_samples(samples: &[Sample], fbar_input: bool) -> Result<Self> {
        let fbar = samples
            .first()
            .ok_or_else(|| Error::Validation("training set is empty".into()))?
            .load
            .fbar();
        if samples.iter().any(|s| s.load.fbar() != fbar) {
            return Err(Error::Validation("samples do not share one load".into()));
        }
        let materials: Vec<MaterialField> = samples.iter().map(|s| s.material.clone()).collect();
        let stresses = samples.iter().map(|s| s.stress.clone()).collect();
        Self::new(&materials, stresses, fbar, fbar_input)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> &[ModelInput] {
        &self.inputs
    }

    pub fn targets(&self) -> &[TensorField] {
        &self.targets
    }

    pub fn weights(&self) -> &[WeightField] {
        &self.weights
    }

    /// Root mean square of the supervised target components [MPa].
    pub fn stress_rms(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for p in &self.targets {
            for (r, c) in STRESS_SLOTS {
                sum += p.comp(r, c).iter().map(|v| v * v).sum::<f64>();
                count += p.grid().len();
            }
        }
        (sum / count as f64).sqrt()
    }
}

/// One line of the metrics stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub l_dat: f64,
    pub l_div: f64,
    /// Mean absolute error per supervised component [MPa].
    pub mae: [f64; 5],
    /// Largest pointwise `Σ_r |(div P)_r|` [MPa/l].
    pub max_div: f64,
}

pub const METRICS_HEADER: &str = "epoch,L_dat,L_div,mae_11,mae_12,mae_21,mae_22,mae_33,max_div";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let mut s = self.epoch.to_string();
        for v in [self.l_dat, self.l_div].iter().chain(&self.mae).chain([&self.max_div]) {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        s
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    fs::write(path, metrics_csv(rows))?;
    Ok(())
}

/// Output fields and summary of one sample.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub stress: TensorField,
    /// `|P_out,c - P_dat,c|` per supervised component.
    pub error: [Vec<f64>; 5],
    /// `div p̃_1`, `div p̃_2`; the third row vanishes in plane deformation.
    pub divergence: [Vec<f64>; 2],
    pub mae: [f64; 5],
    pub max_div: f64,
    pub l_dat: f64,
    pub l_div: f64,
}

/// Compares an output stress against the reference.
pub fn evaluate_fields(p_out: TensorField, p_dat: &TensorField, w: &WeightField) -> Result<Evaluation> {
    let l_dat = sample_data_loss(&p_out, p_dat, w)?;
    let d = spectral_div(&p_out);
    let l_div = d.comp(0).iter().chain(d.comp(1)).map(|v| v.abs()).sum();
    let error: [Vec<f64>; 5] = STRESS_SLOTS.map(|(r, c)| {
        p_out.comp(r, c).iter().zip(p_dat.comp(r, c)).map(|(a, b)| (a - b).abs()).collect()
    });
    let n = p_out.grid().len() as f64;
    let mae = std::array::from_fn(|k| error[k].iter().sum::<f64>() / n);
    let max_div = d
        .comp(0)
        .iter()
        .zip(d.comp(1))
        .zip(d.comp(2))
        .map(|((a, b), c)| a.abs() + b.abs() + c.abs())
        .fold(0.0, f64::max);
    let divergence = [d.comp(0).to_vec(), d.comp(1).to_vec()];
    Ok(Evaluation {
        stress: p_out,
        error,
        divergence,
        mae,
        max_div,
        l_dat,
        l_div,
    })
}

pub fn evaluate(model: &FnoModel, input: &ModelInput, p_dat: &TensorField, w: &WeightField) -> Result<Evaluation> {
    evaluate_fields(model.predict(input)?, p_dat, w)
}

/// Metrics of a model over a whole set.
pub fn evaluate_set(model: &FnoModel, data: &TrainingSet, epoch: usize) -> Result<MetricsRow> {
    let evals = (0..data.len())
        .into_par_iter()
        .map(|a| evaluate(model, &data.inputs[a], &data.targets[a], &data.weights[a]))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = Accumulator::default();
    for e in &evals {
        acc.add(e.l_dat, e.l_div, &e.mae, e.max_div);
    }
    Ok(acc.row(epoch, data.len()))
}

#[derive(Default)]
struct Accumulator {
    l_dat: f64,
    l_div: f64,
    mae: [f64; 5],
    max_div: f64,
}

impl Accumulator {
    fn add(&mut self, l_dat: f64, l_div: f64, mae: &[f64; 5], max_div: f64) {
        self.l_dat += l_dat;
        self.l_div += l_div;
        for (a, m) in self.mae.iter_mut().zip(mae) {
            *a += m;
        }
        self.max_div = self.max_div.max(max_div);
    }

    fn row(&self, epoch: usize, n_dat: usize) -> MetricsRow {
        let n = n_dat as f64;
        MetricsRow {
            epoch,
            l_dat: self.l_dat / n,
            l_div: self.l_div / n,
            mae: self.mae.map(|m| m / n),
            max_div: self.max_div,
        }
    }
}

/// Per-sample forward/backward result.
struct SampleStep {
    eval: Evaluation,
    loss: f64,
    grad: Vec<f64>,
}

/// Weight of the divergence penalty in the objective of `model`'s head.
fn penalty(model: &FnoModel, cfg: &TrainConfig) -> f64 {
    if model.config().head == Head::Informed {
        cfg.c
    } else {
        0.0
    }
}

fn sample_step(model: &FnoModel, data: &TrainingSet, a: usize, cfg: &TrainConfig) -> Result<SampleStep> {
    let out = model.forward(&data.inputs[a])?;
    let (p_dat, w) = (&data.targets[a], &data.weights[a]);
    let c = penalty(model, cfg);
    let div_w = cfg.weighted_div.then_some(w);
    let mut g = sample_data_loss_grad(&out.stress, p_dat, w)?;
    let mut loss = sample_data_loss(&out.stress, p_dat, w)?;
    if c > 0.0 {
        let gd = sample_div_loss_grad(&out.stress, div_w);
        let comps = g
            .channels()
            .iter()
            .zip(gd.channels())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + c * y).collect())
            .collect();
        g = TensorField::from_components(*g.grid(), comps)?;
        loss += c * sample_div_loss(&out.stress, div_w);
    }
    let grad = model.backward(&out, &g)?;
    let eval = evaluate_fields(out.stress, p_dat, w)?;
    Ok(SampleStep { eval, loss, grad })
}

fn batch_steps(model: &FnoModel, data: &TrainingSet, batch: &[usize], cfg: &TrainConfig) -> Result<Vec<SampleStep>> {
    if let Some(&a) = batch.iter().find(|&&a| a >= data.len()) {
        return Err(Error::Shape(format!("sample index {a} out of range")));
    }
    batch.par_iter().map(|&a| sample_step(model, data, a, cfg)).collect()
}

/// Training objective averaged over `batch` and its parameter gradient,
/// reduced in batch order.
pub fn loss_and_gradient(
    model: &FnoModel,
    data: &TrainingSet,
    batch: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let steps = batch_steps(model, data, batch, cfg)?;
    Ok(reduce(&steps, model.params().len()))
}

fn reduce(steps: &[SampleStep], n_params: usize) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; n_params];
    let mut loss = 0.0;
    for s in steps {
        for (g, v) in grad.iter_mut().zip(&s.grad) {
            *g += v;
        }
        loss += s.loss;
    }
    let inv = 1.0 / steps.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    (loss * inv, grad)
}

/// Trains `model` in place. The output scale is reset to the RMS of the
/// targets first. Row 0 of the returned metrics evaluates the initial model
/// on the full set; row `e` holds the means over the batches of epoch `e`.
/// `on_epoch` runs after every row is produced.
pub fn train(
    model: &mut FnoModel,
    data: &TrainingSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&FnoModel, &MetricsRow) -> Result<()>,
) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let scale = data.stress_rms();
    model.set_out_scale(if scale > 0.0 { scale } else { 1.0 })?;
    let n_dat = data.len();
    let mut adam = Adam::new(model.params().len(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut order: Vec<usize> = (0..n_dat).collect();

    let row0 = evaluate_set(model, data, 0)?;
    check_finite(&row0, 0, &order, model)?;
    on_epoch(model, &row0)?;
    let mut rows = vec![row0];

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64, 0));
        order.shuffle(&mut rng);
        let lr = cfg.learning_rate(epoch - 1);
        let mut acc = Accumulator::default();
        for batch in order.chunks(cfg.batch) {
            let steps = batch_steps(model, data, batch, cfg)?;
            for s in &steps {
                acc.add(s.eval.l_dat, s.eval.l_div, &s.eval.mae, s.eval.max_div);
            }
            let (loss, grad) = reduce(&steps, model.params().len());
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch.to_vec(),
                    parameters: model.params().to_vec(),
                });
            }
            adam.step(model.params_mut(), &grad, lr);
        }
        let row = acc.row(epoch, n_dat);
        check_finite(&row, epoch, &order, model)?;
        on_epoch(model, &row)?;
        rows.push(row);
    }
    Ok(rows)
}

fn check_finite(row: &MetricsRow, epoch: usize, batch: &[usize], model: &FnoModel) -> Result<()> {
    let ok = row.l_dat.is_finite() && row.l_div.is_finite() && row.max_div.is_finite() && row.mae.iter().all(|v| v.is_finite());
    if ok {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            epoch,
            batch: batch.to_vec(),
            parameters: model.params().to_vec(),
        })
    }
}
