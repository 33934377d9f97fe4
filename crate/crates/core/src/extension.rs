//! Extensions of maps defined on an orthant to a full neighbourhood.
//!
//! [`project_extend`] composes with the projection `φ(y) = y + λ(y) h`
//! onto `ℝ^s_+` along an interior direction `h`; [`reflect_extend`] mirrors
//! across each coordinate face, `f̃(y) = -f(-y) + 2 f(0)` for `y < 0`, which
//! glues with a continuous first derivative.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Projection onto the nonnegative orthant along a direction `h > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProjection {
    h: DVector<f64>,
}

impl ConeProjection {
    pub fn new(h: DVector<f64>) -> Result<Self> {
        if h.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("h", "direction must be strictly positive"));
        }
        Ok(Self { h })
    }

    pub fn ones(s: usize) -> Self {
        Self {
            h: DVector::from_element(s, 1.0),
        }
    }

    pub fn direction(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn lambda(&self, y: &[f64]) -> f64 {
        cone_lambda(y, self.h.as_slice())
    }

    /// `φ(y) = y + λ(y) h`.
    pub fn phi(&self, y: &[f64]) -> Vec<f64> {
        let lam = self.lambda(y);
        y.iter().zip(self.h.iter()).map(|(yi, hi)| yi + lam * hi).collect()
    }

    /// Lipschitz constant of `φ` in the max norm, `1 + max h / min h`.
    pub fn lipschitz_bound(&self) -> f64 {
        1.0 + self.h.max() / self.h.min()
    }
}

/// `λ(y) = min { λ >= 0 : y + λ h >= 0 } = max(0, max_i -y_i / h_i)`.
pub fn cone_lambda(y: &[f64], h: &[f64]) -> f64 {
    debug_assert_eq!(y.len(), h.len());
    y.iter().zip(h).map(|(yi, hi)| -yi / hi).fold(0.0, f64::max)
}

/// Evaluate `map(x, φ(y))`. On the orthant `φ(y) = y` and the inner map is
/// called with `y` itself.
pub fn project_extend<T, E>(
    map: impl Fn(&[f64], &[f64]) -> std::result::Result<T, E>,
    proj: &ConeProjection,
    x: &[f64],
    y: &[f64],
) -> std::result::Result<T, E> {
    if y.iter().all(|v| *v >= 0.0) {
        map(x, y)
    } else {
        map(x, &proj.phi(y))
    }
}

/// Reflection extension in every coordinate of `y`, applied one coordinate
/// after another. `f` is only ever called with `y >= 0` and `z` unchanged.
pub fn reflect_extend<E>(
    f: &impl Fn(&[f64], &[f64], &[f64]) -> std::result::Result<Vec<f64>, E>,
    x: &[f64],
    y: &[f64],
    z: &[f64],
) -> std::result::Result<Vec<f64>, E> {
    let mut y = y.to_vec();
    reflect_from(f, x, &mut y, z, 0)
}

fn reflect_from<E>(
    f: &impl Fn(&[f64], &[f64], &[f64]) -> std::result::Result<Vec<f64>, E>,
    x: &[f64],
    y: &mut [f64],
    z: &[f64],
    k: usize,
) -> std::result::Result<Vec<f64>, E> {
    if k == y.len() {
        return f(x, y, z);
    }
    let yk = y[k];
    if yk >= 0.0 {
        return reflect_from(f, x, y, z, k + 1);
    }
    y[k] = -yk;
    let mirrored = reflect_from(f, x, y, z, k + 1)?;
    y[k] = 0.0;
    let face = reflect_from(f, x, y, z, k + 1)?;
    y[k] = yk;
    Ok(mirrored.iter().zip(&face).map(|(m, c)| -m + 2.0 * c).collect())
}
