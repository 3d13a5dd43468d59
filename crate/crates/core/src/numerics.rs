//! Stable scalar and vector primitives: log-sum-exp, softmax and a central
//! finite-difference gradient used as the reference for every analytic
//! gradient in the crate.

use std::ops::Deref;

use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// A vector of class scores (logits), one per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("scores", "empty score vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scores"));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ScoreVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A probability vector: entries in `[0, 1]` summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("probs", "empty probability vector"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::invalid("probs", "entries must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::invalid("probs", format!("entries sum to {total}")));
        }
        Ok(Self(probs))
    }

    /// Normalizes non-negative mass into a probability vector.
    pub fn from_mass(mass: &[f64]) -> Result<Self> {
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::invalid(
                "mass",
                "entries must be finite and non-negative",
            ));
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("mass", "total mass must be positive"));
        }
        Self::new(mass.iter().map(|m| m / total).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SimplexVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid("v", "empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("v"));
    }
    Ok(())
}

/// `log Σ exp(v_i)`, shifted by `max(v)`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    check_finite(v)?;
    Ok(lse(v))
}

pub(crate) fn lse(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax(v: &[f64]) -> Result<SimplexVector> {
    check_finite(v)?;
    Ok(SimplexVector(softmax_raw(v)))
}

pub(crate) fn softmax_raw(v: &[f64]) -> Vec<f64> {
    let z = lse(v);
    v.iter().map(|x| (x - z).exp()).collect()
}

pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    check_finite(v)?;
    let z = lse(v);
    Ok(v.iter().map(|x| x - z).collect())
}

/// Index of the largest entry; ties go to the highest index.
pub fn argmax_highest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x >= v[best] {
            best = i;
        }
    }
    best
}

/// Central differences `(f(v + h e_i) - f(v - h e_i)) / 2h` per coordinate.
pub fn finite_diff_gradient<F>(f: F, v: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("h", "step must be positive"));
    }
    let mut point = v.to_vec();
    let mut grad = Vec::with_capacity(v.len());
    for i in 0..v.len() {
        let orig = point[i];
        point[i] = orig + h;
        let fp = f(&point);
        point[i] = orig - h;
        let fm = f(&point);
        point[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest coordinate-wise relative error, with denominator `max(1, |analytic|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}
