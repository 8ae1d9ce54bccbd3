use crate::error::{Error, Result};
use crate::field::{Mat3, IDENTITY};

/// Lamé moduli `(λ, μ)` from Young's modulus and Poisson's ratio.
pub fn lame_from_engineering(youngs: f64, poisson: f64) -> Result<(f64, f64)> {
    if !(youngs.is_finite() && youngs > 0.0) {
        return Err(Error::Domain(format!("Young's modulus must be positive, got {youngs}")));
    }
    if !(poisson > 0.0 && poisson < 0.5) {
        return Err(Error::Domain(format!("Poisson's ratio must lie in (0, 0.5), got {poisson}")));
    }
    let lambda = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    let mu = youngs / (2.0 * (1.0 + poisson));
    Ok((lambda, mu))
}

pub(crate) fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// Green strain `½(FᵀF − I)`, built from its upper triangle so it is exactly
/// symmetric.
pub fn green_strain(f: &Mat3) -> Mat3 {
    let mut e = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let c = f[0][i] * f[0][j] + f[1][i] * f[1][j] + f[2][i] * f[2][j];
            let v = 0.5 * (c - IDENTITY[i][j]);
            e[i][j] = v;
            e[j][i] = v;
        }
    }
    e
}

/// First Piola–Kirchhoff stress of the Saint Venant–Kirchhoff law,
/// `P = λ tr(E) F + 2μ F E`.
pub fn svk_stress(f: &Mat3, lambda: f64, mu: f64) -> Mat3 {
    let e = green_strain(f);
    let tr = e[0][0] + e[1][1] + e[2][2];
    let fe = matmul(f, &e);
    let mut p = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            p[i][j] = lambda * tr * f[i][j] + 2.0 * mu * fe[i][j];
        }
    }
    p
}

/// Prescribed mean deformation gradient for plane deformation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadCase {
    fbar: Mat3,
}

impl LoadCase {
    pub fn new(fbar: Mat3) -> Result<Self> {
        if fbar.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("mean deformation gradient must be finite".into()));
        }
        if fbar[0][2] != 0.0 || fbar[1][2] != 0.0 || fbar[2][0] != 0.0 || fbar[2][1] != 0.0 {
            return Err(Error::Layout(
                "mean deformation gradient must have F13 = F23 = F31 = F32 = 0".into(),
            ));
        }
        if fbar[2][2] != 1.0 {
            return Err(Error::Layout("plane deformation requires F33 = 1".into()));
        }
        let det = fbar[0][0] * fbar[1][1] - fbar[0][1] * fbar[1][0];
        if det <= 0.0 {
            return Err(Error::Domain(format!("mean deformation gradient has det {det}")));
        }
        Ok(Self { fbar })
    }

    /// `diag(1, f22, 1)`.
    pub fn uniaxial(f22: f64) -> Result<Self> {
        Self::new([[1.0, 0.0, 0.0], [0.0, f22, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn fbar(&self) -> &Mat3 {
        &self.fbar
    }
}
