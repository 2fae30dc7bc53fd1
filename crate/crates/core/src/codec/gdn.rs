//! Generalized divisive normalization and its decoder-side inverse.
//!
//! At every spatial position `p`:
//!
//! ```text
//! r_i(p)  = beta_i + sum_j gamma_ij * x_j(p)^2
//! GDN:  y_i(p) = x_i(p) / sqrt(r_i(p))
//! IGDN: y_i(p) = x_i(p) * sqrt(r_i(p))
//! ```
//!
//! Layers store `beta` and `gamma` unconstrained and map them through
//! [`positive_beta`] / [`nonnegative_gamma`] before use.

use crate::error::{Error, Result};
use crate::tensor::{gemm, FeatureMap, Scalar, Trans};

/// Lower bound added to the softplus image of `beta`.
pub const BETA_FLOOR: f64 = 1e-6;

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn softplus_inverse(y: f64) -> f64 {
    // log(exp(y) - 1), written to stay accurate for large y.
    y + (-(-y).exp_m1()).ln()
}

fn logistic<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `softplus(raw) + BETA_FLOOR`, strictly positive.
pub fn positive_beta<T: Scalar>(raw: T) -> T {
    softplus(raw) + T::from_f64_lossy(BETA_FLOOR)
}

/// `softplus(raw)`, never negative.
pub fn nonnegative_gamma<T: Scalar>(raw: T) -> T {
    softplus(raw)
}

/// Derivative of either reparameterization with respect to its raw value.
pub(crate) fn reparam_derivative<T: Scalar>(raw: T) -> T {
    logistic(raw)
}

/// Unconstrained value whose reparameterized beta equals `beta`.
pub fn beta_to_raw(beta: f64) -> f64 {
    softplus_inverse(beta - BETA_FLOOR)
}

/// Unconstrained value whose reparameterized gamma equals `gamma` (`gamma > 0`).
pub fn gamma_to_raw(gamma: f64) -> f64 {
    softplus_inverse(gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    Forward,
    Inverse,
}

fn validate<T: Scalar>(x: &FeatureMap<T>, beta: &[T], gamma: &[T]) -> Result<()> {
    let c = x.channels();
    if beta.len() != c {
        return Err(Error::DimensionMismatch {
            context: "GDN beta",
            expected: c,
            actual: beta.len(),
        });
    }
    if gamma.len() != c * c {
        return Err(Error::DimensionMismatch {
            context: "GDN gamma",
            expected: c * c,
            actual: gamma.len(),
        });
    }
    if let Some(b) = beta.iter().find(|b| !(**b > T::zero())) {
        return Err(Error::InvalidParameter(format!(
            "GDN beta must be positive, got {b}"
        )));
    }
    if let Some(g) = gamma.iter().find(|g| !(**g >= T::zero())) {
        return Err(Error::InvalidParameter(format!(
            "GDN gamma must be non-negative, got {g}"
        )));
    }
    Ok(())
}

/// Returns the output and the per-position denominators `r`.
pub(crate) fn normalize<T: Scalar>(
    x: &FeatureMap<T>,
    beta: &[T],
    gamma: &[T],
    mode: Mode,
) -> (FeatureMap<T>, Vec<T>) {
    let (c, plane) = (x.channels(), x.plane_len());
    let squares: Vec<T> = x.as_slice().iter().map(|&v| v * v).collect();
    let mut r = vec![T::zero(); c * plane];
    gemm(Trans::No, Trans::No, c, plane, c, gamma, &squares, &mut r, false);
    for (ch, &b) in beta.iter().enumerate() {
        for v in &mut r[ch * plane..(ch + 1) * plane] {
            *v = *v + b;
        }
    }
    let y: Vec<T> = x
        .as_slice()
        .iter()
        .zip(&r)
        .map(|(&v, &d)| match mode {
            Mode::Forward => v / d.sqrt(),
            Mode::Inverse => v * d.sqrt(),
        })
        .collect();
    (
        FeatureMap::from_vec(c, x.height(), x.width(), y).expect("shape preserved"),
        r,
    )
}

/// GDN with explicit (already positive) `beta` (`c`) and row-major `gamma` (`c x c`).
pub fn gdn_forward<T: Scalar>(
    x: &FeatureMap<T>,
    beta: &[T],
    gamma: &[T],
) -> Result<FeatureMap<T>> {
    validate(x, beta, gamma)?;
    Ok(normalize(x, beta, gamma, Mode::Forward).0)
}

/// Inverse GDN, the decoder-side companion of [`gdn_forward`]. Not its exact inverse.
pub fn igdn_forward<T: Scalar>(
    x: &FeatureMap<T>,
    beta: &[T],
    gamma: &[T],
) -> Result<FeatureMap<T>> {
    validate(x, beta, gamma)?;
    Ok(normalize(x, beta, gamma, Mode::Inverse).0)
}

/// Gradients of a GDN/IGDN layer with respect to its input and its effective parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GdnGrads<T> {
    pub input: FeatureMap<T>,
    pub beta: Vec<T>,
    pub gamma: Vec<T>,
}

fn backward_public<T: Scalar>(
    x: &FeatureMap<T>,
    beta: &[T],
    gamma: &[T],
    dy: &FeatureMap<T>,
    mode: Mode,
) -> Result<GdnGrads<T>> {
    validate(x, beta, gamma)?;
    if dy.shape() != x.shape() {
        return Err(Error::DimensionMismatch {
            context: "GDN output gradient",
            expected: x.as_slice().len(),
            actual: dy.as_slice().len(),
        });
    }
    let (_, r) = normalize(x, beta, gamma, mode);
    let c = x.channels();
    let (mut gb, mut gg) = (vec![T::zero(); c], vec![T::zero(); c * c]);
    let input = normalize_backward(x, &r, gamma, mode, dy, &mut gb, &mut gg);
    Ok(GdnGrads {
        input,
        beta: gb,
        gamma: gg,
    })
}

/// Vector-Jacobian product of [`gdn_forward`] with output gradient `dy`.
pub fn gdn_backward<T: Scalar>(
    x: &FeatureMap<T>,
    beta: &[T],
    gamma: &[T],
    dy: &FeatureMap<T>,
) -> Result<GdnGrads<T>> {
    backward_public(x, beta, gamma, dy, Mode::Forward)
}

/// Vector-Jacobian product of [`igdn_forward`] with output gradient `dy`.
pub fn igdn_backward<T: Scalar>(
    x: &FeatureMap<T>,
    beta: &[T],
    gamma: &[T],
    dy: &FeatureMap<T>,
) -> Result<GdnGrads<T>> {
    backward_public(x, beta, gamma, dy, Mode::Inverse)
}

/// Backward pass. Accumulates gradients with respect to the effective
/// `beta`/`gamma` and returns `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn normalize_backward<T: Scalar>(
    x: &FeatureMap<T>,
    r: &[T],
    gamma: &[T],
    mode: Mode,
    dy: &FeatureMap<T>,
    grad_beta: &mut [T],
    grad_gamma: &mut [T],
) -> FeatureMap<T> {
    let (c, plane) = (x.channels(), x.plane_len());
    let half = T::from_f64_lossy(0.5);
    let xs = x.as_slice();
    let dys = dy.as_slice();
    let mut dx = vec![T::zero(); c * plane];
    let mut dr = vec![T::zero(); c * plane];
    for i in 0..c * plane {
        let root = r[i].sqrt();
        match mode {
            Mode::Forward => {
                dx[i] = dys[i] / root;
                dr[i] = -half * dys[i] * xs[i] / (r[i] * root);
            }
            Mode::Inverse => {
                dx[i] = dys[i] * root;
                dr[i] = half * dys[i] * xs[i] / root;
            }
        }
    }
    for (ch, gb) in grad_beta.iter_mut().enumerate() {
        *gb = *gb + dr[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
    }
    let squares: Vec<T> = xs.iter().map(|&v| v * v).collect();
    gemm(Trans::No, Trans::Yes, c, c, plane, &dr, &squares, grad_gamma, true);
    // dx_k += 2 x_k sum_i gamma_ik dr_i
    let mut back = vec![T::zero(); c * plane];
    gemm(Trans::Yes, Trans::No, c, plane, c, gamma, &dr, &mut back, false);
    let two = T::from_f64_lossy(2.0);
    for i in 0..c * plane {
        dx[i] = dx[i] + two * xs[i] * back[i];
    }
    FeatureMap::from_vec(c, x.height(), x.width(), dx).expect("shape preserved")
}
