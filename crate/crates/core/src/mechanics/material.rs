use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lame_from_engineering;
use crate::error::{Error, Result};
use crate::field::{check_channel, read_container, write_container, GridSpec};

/// Sampling range of Young's modulus [GPa].
pub const YOUNGS_RANGE: (f64, f64) = (50.0, 300.0);
/// Sampling range of Poisson's ratio.
pub const POISSON_RANGE: (f64, f64) = (0.2, 0.4);

/// Per-pixel isotropic elastic properties.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialField {
    grid: GridSpec,
    youngs: Vec<f64>,
    poisson: Vec<f64>,
    lambda: Vec<f64>,
    mu: Vec<f64>,
}

impl MaterialField {
    pub fn new(grid: GridSpec, youngs: Vec<f64>, poisson: Vec<f64>) -> Result<Self> {
        check_channel(&grid, &youngs, "Young's modulus")?;
        check_channel(&grid, &poisson, "Poisson's ratio")?;
        let in_range = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if let Some(b) = youngs.iter().position(|&e| !in_range(e, YOUNGS_RANGE)) {
            return Err(Error::Domain(format!(
                "Young's modulus {} GPa at pixel {b} outside [{}, {}]",
                youngs[b], YOUNGS_RANGE.0, YOUNGS_RANGE.1
            )));
        }
        if let Some(b) = poisson.iter().position(|&v| !in_range(v, POISSON_RANGE)) {
            return Err(Error::Domain(format!(
                "Poisson's ratio {} at pixel {b} outside [{}, {}]",
                poisson[b], POISSON_RANGE.0, POISSON_RANGE.1
            )));
        }
        let (lambda, mu) = youngs
            .iter()
            .zip(&poisson)
            .map(|(&e, &nu)| lame_from_engineering(e, nu))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self {
            grid,
            youngs,
            poisson,
            lambda,
            mu,
        })
    }

    pub fn uniform(grid: GridSpec, youngs: f64, poisson: f64) -> Result<Self> {
        Self::new(grid, vec![youngs; grid.len()], vec![poisson; grid.len()])
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn youngs(&self) -> &[f64] {
        &self.youngs
    }

    pub fn poisson(&self) -> &[f64] {
        &self.poisson
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn is_uniform(&self) -> bool {
        self.youngs.iter().all(|&e| e == self.youngs[0])
            && self.poisson.iter().all(|&v| v == self.poisson[0])
    }
}

/// Nearest-seed labels under the wrap-around distance of the periodic cell.
/// Ties go to the lower seed index.
pub fn periodic_voronoi_labels(grid: &GridSpec, seeds: &[[f64; 2]]) -> Vec<usize> {
    let l = grid.length();
    let wrap = |d: f64| d - l * (d / l).round();
    (0..grid.len())
        .map(|b| {
            let x = grid.position(b / grid.n2(), b % grid.n2());
            let mut best = (f64::INFINITY, 0);
            for (g, s) in seeds.iter().enumerate() {
                let (d1, d2) = (wrap(x[0] - s[0]), wrap(x[1] - s[1]));
                let d = d1 * d1 + d2 * d2;
                if d < best.0 {
                    best = (d, g);
                }
            }
            best.1
        })
        .collect()
}

/// Random periodic polycrystal with per-grain properties drawn uniformly
/// from [`YOUNGS_RANGE`] and [`POISSON_RANGE`].
pub fn voronoi_microstructure(grid: &GridSpec, n_grains: usize, seed: u64) -> Result<MaterialField> {
    if n_grains == 0 {
        return Err(Error::Validation("need at least one grain".into()));
    }
    if n_grains > grid.len() {
        return Err(Error::Validation(format!(
            "{n_grains} grains do not fit on a {}x{} grid",
            grid.n1(),
            grid.n2()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = grid.length();
    let seeds: Vec<[f64; 2]> = (0..n_grains)
        .map(|_| [rng.gen_range(0.0..l), rng.gen_range(0.0..l)])
        .collect();
    let props: Vec<(f64, f64)> = (0..n_grains)
        .map(|_| {
            (
                rng.gen_range(YOUNGS_RANGE.0..=YOUNGS_RANGE.1),
                rng.gen_range(POISSON_RANGE.0..=POISSON_RANGE.1),
            )
        })
        .collect();
    let labels = periodic_voronoi_labels(grid, &seeds);
    let youngs = labels.iter().map(|&g| props[g].0).collect();
    let poisson = labels.iter().map(|&g| props[g].1).collect();
    MaterialField::new(*grid, youngs, poisson)
}

/// Two-channel container: Young's modulus, Poisson's ratio.
pub fn write_material(path: &Path, m: &MaterialField) -> Result<()> {
    write_container(path, m.grid.n1(), m.grid.n2(), &[&m.youngs, &m.poisson])
}

pub fn read_material(path: &Path, l: f64) -> Result<MaterialField> {
    let c = read_container(path)?;
    let fail = |field, detail: String| Error::Format {
        path: path.to_path_buf(),
        field,
        detail,
    };
    if c.channels.len() != 2 {
        return Err(fail("channels", format!("expected 2, found {}", c.channels.len())));
    }
    let grid = GridSpec::new(c.n1, c.n2, l).map_err(|e| fail("n1", e.to_string()))?;
    let mut it = c.channels.into_iter();
    let (youngs, poisson) = (it.next().unwrap(), it.next().unwrap());
    MaterialField::new(grid, youngs, poisson).map_err(|e| fail("payload", e.to_string()))
}
