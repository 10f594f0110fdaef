//! Low-rank spline bases for smoothing stratum (and time) means.
//!
//! The default basis is the cubic radial construction: raw columns
//! `R_{ik} = |x_i - kappa_k|^3` are reparameterized as `Z = R * Omega^{-1/2}`
//! with `Omega_{kl} = |kappa_k - kappa_l|^3`, so the penalized coefficients
//! act as i.i.d. `N(0, sigma^2)` random effects. A truncated-linear
//! alternative `(x - kappa_k)_+` is provided for cross-checking; the two
//! families produce near-identical smooths.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::Error;
use crate::Result;

/// Fixed (polynomial) and penalized (spline) design blocks for one smooth.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrices {
    /// Unpenalized polynomial part `[1, x]`.
    pub xpoly: DMatrix<f64>,
    /// Penalized part; one column per knot.
    pub zspline: DMatrix<f64>,
    pub knots: Vec<f64>,
}

/// Choose `count` knots from sorted distinct covariate values.
///
/// With `count` equal to the number of distinct values the knots are the
/// values themselves; otherwise knots sit at equally spaced quantiles of
/// the distinct values (rank-interpolated).
pub fn place_knots(values: &[f64], count: usize) -> Result<Vec<f64>> {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let d = distinct.len();
    if count > d {
        return Err(Error::TooManyKnots {
            requested: count,
            distinct: d,
        });
    }
    if count == 0 {
        return Err(Error::InvalidSpec("knot count must be >= 1".into()));
    }
    if count == d {
        return Ok(distinct);
    }
    if count == 1 {
        let mid = 0.5 * (d - 1) as f64;
        return Ok(vec![interp_rank(&distinct, mid)]);
    }
    let knots = (0..count)
        .map(|j| {
            let rank = j as f64 * (d - 1) as f64 / (count - 1) as f64;
            interp_rank(&distinct, rank)
        })
        .collect();
    Ok(knots)
}

fn interp_rank(sorted: &[f64], rank: f64) -> f64 {
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Cubic radial basis with the penalty absorbed into the columns.
///
/// The penalty matrix `Omega` is indefinite for this kernel, so its
/// symmetric square root is taken on eigenvalue magnitudes; magnitudes
/// below `1e-10 * max` flag a singular penalty.
pub fn thin_plate_basis(x: &[f64], knots: &[f64]) -> Result<BasisMatrices> {
    check_knots(knots)?;
    let r = radial(x, knots);
    let omega_inv_sqrt = penalty_inverse_sqrt(knots)?;
    let zspline = &r * &omega_inv_sqrt;
    Ok(BasisMatrices {
        xpoly: poly_part(x),
        zspline,
        knots: knots.to_vec(),
    })
}

/// Truncated-linear basis `(x - kappa_k)_+`.
pub fn truncated_linear_basis(x: &[f64], knots: &[f64]) -> Result<BasisMatrices> {
    check_knots(knots)?;
    let zspline = DMatrix::from_fn(x.len(), knots.len(), |i, k| (x[i] - knots[k]).max(0.0));
    Ok(BasisMatrices {
        xpoly: poly_part(x),
        zspline,
        knots: knots.to_vec(),
    })
}

fn check_knots(knots: &[f64]) -> Result<()> {
    if knots.is_empty() {
        return Err(Error::InvalidSpec("at least one knot required".into()));
    }
    for i in 0..knots.len() {
        for j in i + 1..knots.len() {
            if knots[i] == knots[j] {
                return Err(Error::InvalidSpec(format!("duplicate knot {}", knots[i])));
            }
        }
    }
    Ok(())
}

fn poly_part(x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i] })
}

pub(crate) fn radial(x: &[f64], knots: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), knots.len(), |i, k| (x[i] - knots[k]).abs().powi(3))
}

pub(crate) fn penalty_matrix(knots: &[f64]) -> DMatrix<f64> {
    radial(knots, knots)
}

fn penalty_eigen(knots: &[f64]) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let eig = SymmetricEigen::new(penalty_matrix(knots));
    if knots.len() == 1 {
        // A single knot has Omega = [0]; normalize by the identity instead.
        return Ok(eig);
    }
    let max_mag = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    if eig.eigenvalues.iter().any(|&l| l.abs() < 1e-10 * max_mag) {
        return Err(Error::SingularPenalty);
    }
    Ok(eig)
}

/// `Omega^{-1/2}` on eigenvalue magnitudes.
pub(crate) fn penalty_inverse_sqrt(knots: &[f64]) -> Result<DMatrix<f64>> {
    if knots.len() == 1 {
        return Ok(DMatrix::identity(1, 1));
    }
    let eig = penalty_eigen(knots)?;
    Ok(eigen_power(&eig, -0.5))
}

/// `Omega^{1/2}` on eigenvalue magnitudes (used by round-trip checks).
#[cfg(test)]
pub(crate) fn penalty_sqrt(knots: &[f64]) -> Result<DMatrix<f64>> {
    if knots.len() == 1 {
        return Ok(DMatrix::identity(1, 1));
    }
    let eig = penalty_eigen(knots)?;
    Ok(eigen_power(&eig, 0.5))
}

fn eigen_power(eig: &SymmetricEigen<f64, nalgebra::Dyn>, pow: f64) -> DMatrix<f64> {
    let k = eig.eigenvalues.len();
    let scaled = DMatrix::from_fn(k, k, |i, j| {
        eig.eigenvectors[(i, j)] * eig.eigenvalues[j].abs().powf(pow)
    });
    &scaled * eig.eigenvectors.transpose()
}
