//! Synthetic training data: periodic Voronoi polycrystals with isotropic
//! Saint Venant–Kirchhoff grains, solved for quasi-static equilibrium under a
//! prescribed mean deformation gradient.
//!
//! Moduli are in GPa. Stresses handed out in [`Sample`] are in MPa.

mod constitutive;
mod dataset;
mod material;
mod solver;

pub use constitutive::{green_strain, lame_from_engineering, svk_stress, LoadCase};
pub use dataset::{derive_seed, draw_microstructure, generate_dataset, Dataset, DatasetSpec, SampleInfo};
pub use material::{
    periodic_voronoi_labels, read_material, voronoi_microstructure, write_material, MaterialField,
    POISSON_RANGE, YOUNGS_RANGE,
};
pub use solver::{equilibrium_residual, solve_equilibrium, Sample, SolverSettings};

/// GPa → MPa.
pub const MPA_PER_GPA: f64 = 1000.0;
