//! Run configuration: flat `key=value` text with documented defaults.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::fno::FnoConfig;
use crate::manifest::Manifest;
use crate::mechanics::{LoadCase, SolverSettings};
use crate::training::TrainConfig;

/// Every accepted key with its default and meaning, in echo order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "base seed for microstructures, initialization and shuffling"),
    ("grid.n", "64", "grid points per axis"),
    ("grid.l", "1", "cell edge length"),
    ("load.F11", "1", "prescribed mean deformation gradient"),
    ("load.F12", "0", ""),
    ("load.F21", "0", ""),
    ("load.F22", "1.004", ""),
    ("data.n", "1000", "number of microstructures / samples"),
    ("micro.grains_min", "5", "grains per microstructure, inclusive range"),
    ("micro.grains_max", "30", ""),
    ("micro.dir", "micro", "microstructure directory"),
    ("data.dir", "data", "dataset directory"),
    ("data.from_micro", "false", "solve the microstructures in micro.dir instead of drawing new ones"),
    ("solver.tol", "1e-6", "relative equilibrium residual"),
    ("solver.max_iter", "500", "stress evaluations per solve"),
    ("solver.redraw", "3", "redraws allowed per sample after a failed solve"),
    ("fno.layers", "4", "spectral blocks"),
    ("fno.width", "20", "channels per block"),
    ("fno.modes", "12", "retained Fourier modes per axis"),
    ("fno.head", "encoded", "guided | informed | encoded"),
    ("fno.activation", "gelu", "gelu | identity"),
    ("fno.fbar_input", "false", "feed F - I as constant input channels"),
    ("train.epochs", "100", ""),
    ("train.batch", "8", ""),
    ("train.lr", "1e-3", "initial learning rate"),
    ("train.lr_min", "1e-4", "final learning rate of the cosine decay"),
    ("train.beta1", "0.9", "Adam moment decay"),
    ("train.beta2", "0.999", ""),
    ("train.eps", "1e-8", ""),
    ("train.c", "0.1", "divergence penalty weight (informed head)"),
    ("train.weighted_div", "false", "weight the divergence penalty like the data loss"),
    ("out.dir", "out", "training output directory"),
    ("eval.dir", "eval", "evaluation output directory"),
    ("eval.checkpoint", "", "checkpoint evaluated by `eval`; empty means <out.dir>/checkpoint"),
    ("plots.dir", "plots", "heatmap output directory"),
];

/// Resolved run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub load: LoadCase,
    pub n_samples: usize,
    pub grains: (usize, usize),
    pub micro_dir: PathBuf,
    pub data_dir: PathBuf,
    pub from_micro: bool,
    pub solver: SolverSettings,
    pub redraw: usize,
    pub fno: FnoConfig,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub eval_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub plots_dir: PathBuf,
    /// Every key with its effective value, in [`KEYS`] order.
    pub resolved: Manifest,
}

fn get<T: std::str::FromStr>(m: &Manifest, key: &str) -> Result<T> {
    m.require(key)
}

impl RunConfig {
    /// Defaults overridden by `file` (if any) and then by `overrides`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut given = match file {
            Some(p) => Manifest::read(p).map_err(|e| match e {
                Error::File { path, source } => Error::Config(format!("{}: {source}", path.display())),
                other => other,
            })?,
            None => Manifest::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            given.set(k.trim(), v.trim());
        }
        Self::resolve(&given)
    }

    pub fn resolve(given: &Manifest) -> Result<Self> {
        for (k, _) in given.entries() {
            if !KEYS.iter().any(|(key, _, _)| key == k) {
                return Err(Error::Config(format!("unknown configuration key `{k}`")));
            }
        }
        let mut m = Manifest::new();
        for (k, default, _) in KEYS {
            m.set(*k, given.get(k).unwrap_or(default));
        }
        Self::from_resolved(m).map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })
    }

    fn from_resolved(m: Manifest) -> Result<Self> {
        let grid = GridSpec::square(get(&m, "grid.n")?, get(&m, "grid.l")?)?;
        let fbar = [
            [get(&m, "load.F11")?, get(&m, "load.F12")?, 0.0],
            [get(&m, "load.F21")?, get(&m, "load.F22")?, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let load = LoadCase::new(fbar)?;
        let n_samples: usize = get(&m, "data.n")?;
        if n_samples == 0 {
            return Err(Error::Config("data.n must be at least 1".into()));
        }
        let grains = (get(&m, "micro.grains_min")?, get(&m, "micro.grains_max")?);
        if grains.0 == 0 || grains.0 > grains.1 {
            return Err(Error::Config("grain range must satisfy 1 <= min <= max".into()));
        }
        let solver = SolverSettings {
            tol: get(&m, "solver.tol")?,
            max_iter: get(&m, "solver.max_iter")?,
        };
        if !(solver.tol > 0.0) || solver.max_iter == 0 {
            return Err(Error::Config("solver.tol and solver.max_iter must be positive".into()));
        }
        let fno = FnoConfig {
            n_layers: get(&m, "fno.layers")?,
            width: get(&m, "fno.width")?,
            modes: get(&m, "fno.modes")?,
            head: get::<String>(&m, "fno.head")?.parse()?,
            activation: get::<String>(&m, "fno.activation")?.parse()?,
            fbar_input: get(&m, "fno.fbar_input")?,
        };
        fno.validate()?;
        let seed = get(&m, "seed")?;
        let train = TrainConfig {
            epochs: get(&m, "train.epochs")?,
            batch: get(&m, "train.batch")?,
            lr: get(&m, "train.lr")?,
            lr_min: get(&m, "train.lr_min")?,
            beta1: get(&m, "train.beta1")?,
            beta2: get(&m, "train.beta2")?,
            adam_eps: get(&m, "train.eps")?,
            c: get(&m, "train.c")?,
            weighted_div: get(&m, "train.weighted_div")?,
            seed,
        };
        train.validate()?;
        let path = |k: &str| get::<String>(&m, k).map(PathBuf::from);
        let out_dir = path("out.dir")?;
        let checkpoint = match m.get("eval.checkpoint") {
            Some("") | None => out_dir.join("checkpoint"),
            Some(p) => PathBuf::from(p),
        };
        Ok(Self {
            seed,
            grid,
            load,
            n_samples,
            grains,
            micro_dir: path("micro.dir")?,
            data_dir: path("data.dir")?,
            from_micro: get(&m, "data.from_micro")?,
            solver,
            redraw: get(&m, "solver.redraw")?,
            fno,
            train,
            out_dir,
            eval_dir: path("eval.dir")?,
            checkpoint,
            plots_dir: path("plots.dir")?,
            resolved: m,
        })
    }

    /// Documented keys and defaults as a config file.
    pub fn template() -> String {
        let mut s = String::new();
        for (k, v, doc) in KEYS {
            if !doc.is_empty() {
                s.push_str(&format!("# {doc}\n"));
            }
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}
