//! Periodic grids, real tensor/vector fields on them, and the mean–fluctuation
//! split.
//!
//! Every channel is a row-major `n1 × n2` array: grid point `(i1, i2)` lives at
//! index `i1 * n2 + i2` and sits at position `(i1 / n1, i2 / n2) · l`. Tensor
//! channels are ordered row-major over `(r, c)`.

mod io;

pub use io::{
    decode_container, encode_container, read_container, read_tensor, read_vector,
    write_container, write_tensor, write_vector, Container, MAGIC, VERSION,
};

use crate::error::{Error, Result};

/// 3×3 real matrix, `m[r][c]`.
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Tensor components that vanish identically for plane deformation of a
/// first Piola–Kirchhoff stress: (1,3), (2,3), (3,1), (3,2), 0-based.
pub const OUT_OF_PLANE: [(usize, usize); 4] = [(0, 2), (1, 2), (2, 0), (2, 1)];

/// Periodic square cell sampled on an even `n1 × n2` grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    n1: usize,
    n2: usize,
    l: f64,
}

impl GridSpec {
    pub fn new(n1: usize, n2: usize, l: f64) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::UnsupportedGrid {
                n1,
                n2,
                reason: "need at least 2 points per axis",
            });
        }
        if n1 % 2 != 0 || n2 % 2 != 0 {
            return Err(Error::UnsupportedGrid {
                n1,
                n2,
                reason: "odd point counts are not supported",
            });
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::Validation(format!("cell length must be positive, got {l}")));
        }
        Ok(Self { n1, n2, l })
    }

    /// Square `n × n` grid.
    pub fn square(n: usize, l: f64) -> Result<Self> {
        Self::new(n, n, l)
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    /// Physical side length of the cell.
    pub fn length(&self) -> f64 {
        self.l
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i1 * self.n2 + i2
    }

    pub fn position(&self, i1: usize, i2: usize) -> [f64; 2] {
        [
            i1 as f64 / self.n1 as f64 * self.l,
            i2 as f64 / self.n2 as f64 * self.l,
        ]
    }

    /// Same point counts, other length allowed.
    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.n1 == other.n1 && self.n2 == other.n2
    }

    pub fn with_length(&self, l: f64) -> Result<Self> {
        Self::new(self.n1, self.n2, l)
    }

    /// Base wavenumber `2π / l`.
    pub fn base_wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.l
    }
}

pub(crate) fn check_channel(grid: &GridSpec, data: &[f64], what: &str) -> Result<()> {
    if data.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{what}: expected {} values for a {}x{} grid, got {}",
            grid.len(),
            grid.n1(),
            grid.n2(),
            data.len()
        )));
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{what}: non-finite value at index {pos}")));
    }
    Ok(())
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub(crate) fn channel_mean(values: &[f64]) -> f64 {
    compensated_sum(values) / values.len() as f64
}

/// Real 3×3 tensor field on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    grid: GridSpec,
    comps: Vec<Vec<f64>>,
}

impl TensorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            comps: vec![vec![0.0; grid.len()]; 9],
        }
    }

    /// Builds a field from 9 channels in row-major `(r, c)` order.
    pub fn from_components(grid: GridSpec, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != 9 {
            return Err(Error::Shape(format!("tensor field needs 9 channels, got {}", comps.len())));
        }
        for (k, ch) in comps.iter().enumerate() {
            check_channel(&grid, ch, &format!("component ({},{})", k / 3 + 1, k % 3 + 1))?;
        }
        Ok(Self { grid, comps })
    }

    pub(crate) fn from_raw(grid: GridSpec, comps: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(comps.len(), 9);
        Self { grid, comps }
    }

    pub fn uniform(grid: GridSpec, value: &Mat3) -> Self {
        let comps = (0..9)
            .map(|k| vec![value[k / 3][k % 3]; grid.len()])
            .collect();
        Self { grid, comps }
    }

    /// Samples `f(position)` at every grid point.
    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 2]) -> Mat3) -> Result<Self> {
        let mut comps = vec![vec![0.0; grid.len()]; 9];
        for i1 in 0..grid.n1() {
            for i2 in 0..grid.n2() {
                let m = f(grid.position(i1, i2));
                let b = grid.index(i1, i2);
                for (k, ch) in comps.iter_mut().enumerate() {
                    ch[b] = m[k / 3][k % 3];
                }
            }
        }
        Self::from_components(grid, comps)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Channel `(r, c)`, 0-based.
    pub fn comp(&self, r: usize, c: usize) -> &[f64] {
        &self.comps[3 * r + c]
    }

    pub(crate) fn comp_mut(&mut self, r: usize, c: usize) -> &mut Vec<f64> {
        &mut self.comps[3 * r + c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.comps
    }

    /// Tensor value at flat grid index `b`.
    pub fn at(&self, b: usize) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (k, ch) in self.comps.iter().enumerate() {
            m[k / 3][k % 3] = ch[b];
        }
        m
    }

    /// Cell average per component.
    pub fn mean(&self) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (k, ch) in self.comps.iter().enumerate() {
            m[k / 3][k % 3] = channel_mean(ch);
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    /// True when the out-of-plane stress components are identically zero.
    pub fn is_plane_layout(&self) -> bool {
        OUT_OF_PLANE
            .iter()
            .all(|&(r, c)| self.comp(r, c).iter().all(|&v| v == 0.0))
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Result<Self> {
        if !grid.same_shape(&self.grid) {
            return Err(Error::Shape("grid point counts differ".into()));
        }
        self.grid = grid;
        Ok(self)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let comps = self
            .comps
            .iter()
            .map(|ch| ch.iter().map(|v| alpha * v).collect())
            .collect();
        Self { grid: self.grid, comps }
    }
}

/// Real 3-vector field on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            comps: vec![vec![0.0; grid.len()]; 3],
        }
    }

    pub fn from_components(grid: GridSpec, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != 3 {
            return Err(Error::Shape(format!("vector field needs 3 channels, got {}", comps.len())));
        }
        for (k, ch) in comps.iter().enumerate() {
            check_channel(&grid, ch, &format!("component {}", k + 1))?;
        }
        Ok(Self { grid, comps })
    }

    pub(crate) fn from_raw(grid: GridSpec, comps: Vec<Vec<f64>>) -> Self {
        Self { grid, comps }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn comp(&self, r: usize) -> &[f64] {
        &self.comps[r]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }
}

/// A field written as its cell average plus a zero-mean remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFluctSplit {
    pub mean: Mat3,
    pub fluct: TensorField,
}

impl MeanFluctSplit {
    pub fn reconstruct(&self) -> TensorField {
        let mut comps = self.fluct.comps.clone();
        for (k, ch) in comps.iter_mut().enumerate() {
            let m = self.mean[k / 3][k % 3];
            for v in ch.iter_mut() {
                *v += m;
            }
        }
        TensorField::from_raw(self.fluct.grid, comps)
    }
}

pub fn split_mean_fluct(f: &TensorField) -> Result<MeanFluctSplit> {
    for (k, ch) in f.comps.iter().enumerate() {
        if let Some(pos) = ch.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "component ({},{}) non-finite at index {pos}",
                k / 3 + 1,
                k % 3 + 1
            )));
        }
    }
    let mean = f.mean();
    let comps = f
        .comps
        .iter()
        .enumerate()
        .map(|(k, ch)| {
            let m = mean[k / 3][k % 3];
            ch.iter().map(|v| v - m).collect()
        })
        .collect();
    Ok(MeanFluctSplit {
        mean,
        fluct: TensorField::from_raw(f.grid, comps),
    })
}
