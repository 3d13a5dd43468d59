//! Loss values and analytic score-gradients for the balanced loss, the
//! GCE-based GLA/GCA surrogates, the cost-sensitive max surrogate and the
//! usual imbalance baselines (CE, WCE, LA, EQUAL, CB, FOCAL, LDAM).
//!
//! Every softmax-then-log is evaluated in log space. Softmax probabilities
//! entering `-log` are floored at [`PROB_FLOOR`].

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax_highest, lse, SimplexVector};

/// Lower clamp applied to a probability before `-log`.
pub const PROB_FLOOR: f64 = 1e-300;

fn log_floor() -> f64 {
    PROB_FLOOR.ln()
}

/// Per-class sample counts and the empirical priors derived from them.
///
/// Stats built from priors alone (the theory oracles) carry no counts, so
/// count-dependent losses (LDAM) reject them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    counts: Option<Vec<u64>>,
    priors: Vec<f64>,
    weights: Vec<f64>,
    log_priors: Vec<f64>,
    p_min: f64,
}

impl ClassStats {
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("counts", "no classes"));
        }
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass(k));
        }
        let total: u64 = counts.iter().sum();
        let m = total as f64;
        let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / m).collect();
        // m / m_y, the WCE weight, which equals 1 / p̂(y).
        let weights = counts.iter().map(|&c| m / c as f64).collect();
        Ok(Self::assemble(Some(counts.to_vec()), priors, weights))
    }

    pub fn from_priors(priors: &[f64]) -> Result<Self> {
        let priors = SimplexVector::new(priors.to_vec())?.into_inner();
        if priors.iter().any(|p| *p <= 0.0) {
            return Err(Error::invalid("priors", "every prior must be positive"));
        }
        let weights = priors.iter().map(|p| 1.0 / p).collect();
        Ok(Self::assemble(None, priors, weights))
    }

    fn assemble(counts: Option<Vec<u64>>, priors: Vec<f64>, weights: Vec<f64>) -> Self {
        let log_priors = priors.iter().map(|p| p.ln()).collect();
        let p_min = priors.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            counts,
            priors,
            weights,
            log_priors,
            p_min,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.priors.len()
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }

    pub fn total(&self) -> Option<u64> {
        self.counts.as_ref().map(|c| c.iter().sum())
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    /// Inverse-prior class weight `m / m_y`.
    pub fn class_weight(&self, y: usize) -> f64 {
        self.weights[y]
    }

    pub fn log_prior(&self, y: usize) -> f64 {
        self.log_priors[y]
    }
}

/// Loss family tag, without hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossFamily {
    Ce,
    Wce,
    La,
    Equal,
    Cb,
    Focal,
    Ldam,
    Gce,
    Gla,
    Gca,
    Csmax,
}

impl LossFamily {
    pub const ALL: [LossFamily; 11] = [
        LossFamily::Ce,
        LossFamily::Wce,
        LossFamily::La,
        LossFamily::Equal,
        LossFamily::Cb,
        LossFamily::Focal,
        LossFamily::Ldam,
        LossFamily::Gce,
        LossFamily::Gla,
        LossFamily::Gca,
        LossFamily::Csmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Ce => "ce",
            LossFamily::Wce => "wce",
            LossFamily::La => "la",
            LossFamily::Equal => "equal",
            LossFamily::Cb => "cb",
            LossFamily::Focal => "focal",
            LossFamily::Ldam => "ldam",
            LossFamily::Gce => "gce",
            LossFamily::Gla => "gla",
            LossFamily::Gca => "gca",
            LossFamily::Csmax => "csmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
    }

    pub fn is_baseline(self) -> bool {
        matches!(
            self,
            LossFamily::Ce
                | LossFamily::Wce
                | LossFamily::La
                | LossFamily::Equal
                | LossFamily::Cb
                | LossFamily::Focal
                | LossFamily::Ldam
        )
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A loss family together with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum LossSpec {
    Ce,
    Wce,
    /// Logit adjustment `h(x, y) + τ log p̂(y)`.
    La {
        tau: f64,
    },
    /// Equalization loss; `p` is the Bernoulli rate of the per-class drop
    /// draw and `lambda` the tail-frequency threshold.
    Equal {
        p: f64,
        lambda: f64,
    },
    /// Class-balanced weighting `(1 - γ) / (1 - γ^{m_y / m})`.
    Cb {
        gamma: f64,
    },
    Focal {
        gamma: f64,
    },
    /// Label-distribution-aware margin `Δ_y = C / m_y^{1/4}`.
    Ldam {
        c: f64,
    },
    Gce {
        q: f64,
    },
    Gla {
        q: f64,
    },
    Gca {
        q: f64,
        margins: Vec<f64>,
    },
    /// `c(y) max_{y'} Ψ((h(x,y) - h(x,y')) / ρ)` with `Ψ(x) = Φ^τ(e^{-x})`
    /// and cost `c(y) = 1 / p̂(y)`.
    Csmax {
        rho: f64,
        psi_tau: f64,
    },
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::invalid("q", format!("{q} outside [0, 1)")));
    }
    Ok(())
}

fn check_open_unit(arg: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::invalid(arg, format!("{v} outside (0, 1)")));
    }
    Ok(())
}

fn check_positive(arg: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(arg, format!("{v} must be positive")));
    }
    Ok(())
}

impl LossSpec {
    pub fn family(&self) -> LossFamily {
        match self {
            LossSpec::Ce => LossFamily::Ce,
            LossSpec::Wce => LossFamily::Wce,
            LossSpec::La { .. } => LossFamily::La,
            LossSpec::Equal { .. } => LossFamily::Equal,
            LossSpec::Cb { .. } => LossFamily::Cb,
            LossSpec::Focal { .. } => LossFamily::Focal,
            LossSpec::Ldam { .. } => LossFamily::Ldam,
            LossSpec::Gce { .. } => LossFamily::Gce,
            LossSpec::Gla { .. } => LossFamily::Gla,
            LossSpec::Gca { .. } => LossFamily::Gca,
            LossSpec::Csmax { .. } => LossFamily::Csmax,
        }
    }

    /// GCA with the cube-root default margins for `stats`.
    pub fn gca_default(q: f64, stats: &ClassStats) -> Self {
        LossSpec::Gca {
            q,
            margins: default_gca_margins(stats),
        }
    }

    /// Checks hyperparameter ranges for an `n`-class problem.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            LossSpec::Ce | LossSpec::Wce => Ok(()),
            LossSpec::La { tau } => check_positive("tau", *tau),
            LossSpec::Equal { p, lambda } => {
                check_open_unit("p", *p)?;
                check_open_unit("lambda", *lambda)
            }
            LossSpec::Cb { gamma } => check_open_unit("gamma", *gamma),
            LossSpec::Focal { gamma } => {
                if !(*gamma >= 0.0 && gamma.is_finite()) {
                    return Err(Error::invalid("gamma", format!("{gamma} must be >= 0")));
                }
                Ok(())
            }
            LossSpec::Ldam { c } => check_positive("c", *c),
            LossSpec::Gce { q } | LossSpec::Gla { q } => check_q(*q),
            LossSpec::Gca { q, margins } => {
                check_q(*q)?;
                if margins.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: margins.len(),
                    });
                }
                if margins.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                    return Err(Error::invalid("margins", "every margin must be positive"));
                }
                Ok(())
            }
            LossSpec::Csmax { rho, psi_tau } => {
                check_positive("rho", *rho)?;
                if !(*psi_tau >= 0.0 && psi_tau.is_finite()) {
                    return Err(Error::invalid("psi_tau", "must be >= 0"));
                }
                Ok(())
            }
        }
    }

    /// Short `key=value` rendering of the hyperparameters.
    pub fn params_label(&self) -> String {
        match self {
            LossSpec::Ce | LossSpec::Wce => String::new(),
            LossSpec::La { tau } => format!("tau={tau}"),
            LossSpec::Equal { p, lambda } => format!("p={p};lambda={lambda}"),
            LossSpec::Cb { gamma } | LossSpec::Focal { gamma } => format!("gamma={gamma}"),
            LossSpec::Ldam { c } => format!("c={c}"),
            LossSpec::Gce { q } | LossSpec::Gla { q } => format!("q={q}"),
            LossSpec::Gca { q, margins } => {
                let m: Vec<String> = margins.iter().map(|r| format!("{r:.6}")).collect();
                format!("q={q};margins={}", m.join("/"))
            }
            LossSpec::Csmax { rho, psi_tau } => format!("rho={rho};psi_tau={psi_tau}"),
        }
    }
}

/// Target of a search or risk computation: the balanced 0-1 loss or a
/// surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    Balanced,
    Surrogate(LossSpec),
}

impl Objective {
    /// Loss of `scores` on `label`; EQUAL is not supported here (its value
    /// depends on random draws).
    pub fn eval(&self, scores: &[f64], label: usize, stats: &ClassStats) -> Result<f64> {
        match self {
            Objective::Balanced => {
                eval_balanced_loss(argmax_highest(scores), label, stats.priors())
            }
            Objective::Surrogate(spec) => eval(spec, scores, label, stats, None),
        }
    }
}

/// `Ψ^q(t)`: `-log t` for `q = 0`, `(1 - t^q) / q` otherwise.
///
/// For `q = 0`, `t = 0` saturates at `-log(PROB_FLOOR)`.
pub fn psi_q(t: f64, q: f64) -> Result<f64> {
    if !(q >= 0.0 && q.is_finite()) {
        return Err(Error::invalid("q", format!("{q} must be >= 0")));
    }
    if !(t.is_finite() && t <= 1.0) {
        return Err(Error::invalid("t", format!("{t} outside (0, 1]")));
    }
    if q == 0.0 {
        if t < 0.0 {
            return Err(Error::invalid("t", format!("{t} outside (0, 1]")));
        }
        return Ok(-t.max(PROB_FLOOR).ln());
    }
    if t <= 0.0 {
        return Err(Error::invalid(
            "t",
            format!("{t} must be positive for q > 0"),
        ));
    }
    Ok((1.0 - t.powf(q)) / q)
}

/// `Ψ^q` of the softmax of `logits` at `y`, in log space. On request the
/// gradient `t^q (softmax(z) - e_y)` is written to `grad`.
fn gce_on_logits(z: &[f64], y: usize, q: f64, grad: Option<&mut [f64]>) -> f64 {
    let norm = lse(z);
    let log_t = z[y] - norm;
    let value = if q == 0.0 {
        -log_t.max(log_floor())
    } else {
        -(q * log_t).exp_m1() / q
    };
    if let Some(g) = grad {
        let tq = if q == 0.0 { 1.0 } else { (q * log_t).exp() };
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (z[j] - norm).exp();
            *gj = tq * (p - if j == y { 1.0 } else { 0.0 });
        }
    }
    value
}

fn check_inputs(scores: &[f64], label: usize, stats: &ClassStats) -> Result<()> {
    let n = stats.n_classes();
    if scores.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: scores.len(),
        });
    }
    if label >= n {
        return Err(Error::Label { label, n });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    Ok(())
}

/// GLA loss: `Ψ^q` of the softmax of `h + log p̂ / (1 - q)` at the label.
pub fn eval_gla(scores: &[f64], label: usize, stats: &ClassStats, q: f64) -> Result<f64> {
    eval(&LossSpec::Gla { q }, scores, label, stats, None)
}

/// GCA loss: `(1 / p̂(y)) Ψ^q(softmax(h / ρ_y)_y)`. The whole score vector
/// is divided by the margin of the true class.
pub fn eval_gca(
    scores: &[f64],
    label: usize,
    stats: &ClassStats,
    q: f64,
    margins: &[f64],
) -> Result<f64> {
    let spec = LossSpec::Gca {
        q,
        margins: margins.to_vec(),
    };
    eval(&spec, scores, label, stats, None)
}

/// Cube-root margins `ρ_k = m_k^{1/3} / Σ_j m_j^{1/3}`.
pub fn default_gca_margins(stats: &ClassStats) -> Vec<f64> {
    let roots: Vec<f64> = match stats.counts() {
        Some(counts) => counts.iter().map(|&c| (c as f64).cbrt()).collect(),
        None => stats.priors().iter().map(|p| p.cbrt()).collect(),
    };
    let total: f64 = roots.iter().sum();
    roots.iter().map(|r| r / total).collect()
}

/// Draws the per-class EQUAL drop indicators `β_j ~ Bernoulli(p)`.
pub fn equal_draws<R: Rng + ?Sized>(p: f64, n: usize, rng: &mut R) -> Vec<bool> {
    (0..n).map(|_| rng.random::<f64>() < p).collect()
}

/// Baseline losses (CE, WCE, LA, EQUAL, CB, FOCAL, LDAM). EQUAL needs one
/// draw per class in `draws`.
pub fn eval_baseline(
    spec: &LossSpec,
    scores: &[f64],
    label: usize,
    stats: &ClassStats,
    draws: Option<&[bool]>,
) -> Result<f64> {
    if !spec.family().is_baseline() {
        return Err(Error::Unsupported(format!(
            "{} as a baseline loss",
            spec.family()
        )));
    }
    eval(spec, scores, label, stats, draws)
}

/// Loss value of any family.
pub fn eval(
    spec: &LossSpec,
    scores: &[f64],
    label: usize,
    stats: &ClassStats,
    draws: Option<&[bool]>,
) -> Result<f64> {
    compute(spec, scores, label, stats, draws, None)
}

/// Gradient of the loss with respect to the scores.
pub fn eval_grad(
    spec: &LossSpec,
    scores: &[f64],
    label: usize,
    stats: &ClassStats,
    draws: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; scores.len()];
    compute(spec, scores, label, stats, draws, Some(&mut grad))?;
    Ok(grad)
}

/// Value and score-gradient in one pass; `grad` must have length `n`.
pub fn value_and_grad(
    spec: &LossSpec,
    scores: &[f64],
    label: usize,
    stats: &ClassStats,
    draws: Option<&[bool]>,
    grad: &mut [f64],
) -> Result<f64> {
    if grad.len() != scores.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            got: grad.len(),
        });
    }
    compute(spec, scores, label, stats, draws, Some(grad))
}

fn compute(
    spec: &LossSpec,
    s: &[f64],
    y: usize,
    stats: &ClassStats,
    draws: Option<&[bool]>,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    check_inputs(s, y, stats)?;
    let n = s.len();
    spec.validate(n)?;
    let value = match spec {
        LossSpec::Ce => gce_on_logits(s, y, 0.0, grad),
        LossSpec::Gce { q } => gce_on_logits(s, y, *q, grad),
        LossSpec::Wce => {
            let w = stats.class_weight(y);
            let v = gce_on_logits(s, y, 0.0, grad.as_deref_mut());
            scale(grad, w);
            w * v
        }
        LossSpec::La { tau } => {
            let z: Vec<f64> = (0..n).map(|j| s[j] + tau * stats.log_prior(j)).collect();
            gce_on_logits(&z, y, 0.0, grad)
        }
        LossSpec::Gla { q } => {
            let z: Vec<f64> = (0..n)
                .map(|j| s[j] + stats.log_prior(j) / (1.0 - q))
                .collect();
            gce_on_logits(&z, y, *q, grad)
        }
        LossSpec::Gca { q, margins } => {
            let w = stats.class_weight(y);
            let rho = margins[y];
            let z: Vec<f64> = s.iter().map(|v| v / rho).collect();
            let v = gce_on_logits(&z, y, *q, grad.as_deref_mut());
            scale(grad, w / rho);
            w * v
        }
        LossSpec::Cb { gamma } => {
            let w = (1.0 - gamma) / (1.0 - gamma.powf(stats.priors()[y]));
            let v = gce_on_logits(s, y, 0.0, grad.as_deref_mut());
            scale(grad, w);
            w * v
        }
        LossSpec::Focal { gamma } => focal(s, y, *gamma, grad),
        LossSpec::Ldam { c } => {
            let counts = stats
                .counts()
                .ok_or_else(|| Error::Unsupported("LDAM without class counts".into()))?;
            let mut z = s.to_vec();
            z[y] -= c / (counts[y] as f64).powf(0.25);
            gce_on_logits(&z, y, 0.0, grad)
        }
        LossSpec::Equal { lambda, .. } => {
            let draws =
                draws.ok_or_else(|| Error::invalid("draws", "EQUAL needs per-class draws"))?;
            if draws.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: draws.len(),
                });
            }
            // w_j = 1 - β_j 1{p̂_j < λ} 1{j ≠ y}, each w_j in {0, 1}.
            let active: Vec<bool> = (0..n)
                .map(|j| j == y || !(draws[j] && stats.priors()[j] < *lambda))
                .collect();
            let kept: Vec<f64> = (0..n).filter(|&j| active[j]).map(|j| s[j]).collect();
            let norm = lse(&kept);
            if let Some(g) = grad {
                for j in 0..n {
                    let p = if active[j] { (s[j] - norm).exp() } else { 0.0 };
                    g[j] = p - if j == y { 1.0 } else { 0.0 };
                }
            }
            -(s[y] - norm).max(log_floor())
        }
        LossSpec::Csmax { rho, psi_tau } => {
            csmax(s, y, stats.class_weight(y), *rho, *psi_tau, grad)
        }
    };
    Ok(value)
}

fn scale(grad: Option<&mut [f64]>, factor: f64) {
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v *= factor);
    }
}

fn focal(s: &[f64], y: usize, gamma: f64, grad: Option<&mut [f64]>) -> f64 {
    let norm = lse(s);
    let log_t = s[y] - norm;
    let t = log_t.exp();
    let one_minus_t = -log_t.exp_m1();
    let clamped = log_t.max(log_floor());
    let value = one_minus_t.powf(gamma) * -clamped;
    if let Some(g) = grad {
        // d/d(log t) of -(1 - t)^γ log t
        let tilt = if gamma == 0.0 || one_minus_t == 0.0 {
            0.0
        } else {
            gamma * one_minus_t.powf(gamma - 1.0) * t * clamped
        };
        let dlog = tilt - one_minus_t.powf(gamma);
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (s[j] - norm).exp();
            *gj = dlog * (if j == y { 1.0 } else { 0.0 } - p);
        }
    }
    value
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Comp-sum transform `Ψ(x) = Φ^τ(e^{-x})` and its derivative.
fn comp_sum(x: f64, tau: f64) -> (f64, f64) {
    let sp = softplus(-x);
    let value = if tau == 1.0 {
        sp
    } else {
        ((1.0 - tau) * sp).exp_m1() / (1.0 - tau)
    };
    let deriv = -(-x - tau * sp).exp();
    (value, deriv)
}

fn csmax(s: &[f64], y: usize, cost: f64, rho: f64, tau: f64, grad: Option<&mut [f64]>) -> f64 {
    // Ψ is decreasing, so the max sits at the smallest gap; ties keep the
    // smallest index.
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_deriv = 0.0;
    for j in 0..s.len() {
        let (v, d) = comp_sum((s[y] - s[j]) / rho, tau);
        if v > best_val {
            best = j;
            best_val = v;
            best_deriv = d;
        }
    }
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v = 0.0);
        if best != y {
            let d = cost * best_deriv / rho;
            g[y] = d;
            g[best] = -d;
        }
    }
    cost * best_val
}

/// Cost-sensitive max surrogate with an explicit cost.
pub fn eval_csmax(
    scores: &[f64],
    label: usize,
    cost: f64,
    rho_margin: f64,
    psi_tau: f64,
) -> Result<f64> {
    if label >= scores.len() {
        return Err(Error::Label {
            label,
            n: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    check_positive("rho", rho_margin)?;
    if !(cost >= 0.0) {
        return Err(Error::invalid("cost", "must be >= 0"));
    }
    if !(psi_tau >= 0.0) {
        return Err(Error::invalid("psi_tau", "must be >= 0"));
    }
    if cost == 0.0 {
        return Ok(0.0);
    }
    Ok(csmax(scores, label, cost, rho_margin, psi_tau, None))
}

/// Balanced 0-1 loss: `1{prediction ≠ label} / p(label)`.
pub fn eval_balanced_loss(prediction: usize, label: usize, priors: &[f64]) -> Result<f64> {
    let n = priors.len();
    if prediction >= n {
        return Err(Error::Label {
            label: prediction,
            n,
        });
    }
    if label >= n {
        return Err(Error::Label { label, n });
    }
    if !(priors[label] > 0.0) {
        return Err(Error::invalid(
            "priors",
            format!("zero prior for class {label}"),
        ));
    }
    Ok(if prediction == label {
        0.0
    } else {
        1.0 / priors[label]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, max_relative_error, FD_STEP};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn uniform(n: usize) -> ClassStats {
        ClassStats::from_counts(&vec![10; n]).unwrap()
    }

    #[test]
    fn class_stats_contract() {
        let s = ClassStats::from_counts(&[80, 20]).unwrap();
        assert_eq!(s.priors(), &[0.8, 0.2]);
        assert_eq!(s.p_min(), 0.2);
        assert_eq!(s.class_weight(1), 5.0);
        assert!(matches!(
            ClassStats::from_counts(&[3, 0]),
            Err(Error::EmptyClass(1))
        ));
        assert!(ClassStats::from_priors(&[1.0, 0.0]).is_err());
        assert!(ClassStats::from_priors(&[0.7, 0.2]).is_err());
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi_q(1.0, 0.0).unwrap(), 0.0);
        assert!((psi_q(0.25, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((psi_q(0.3, 1.0).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(psi_q(0.0, 0.0).unwrap(), -PROB_FLOOR.ln());
        assert!(psi_q(0.0, 0.5).is_err());
        assert!(psi_q(-0.1, 0.0).is_err());
        assert!(psi_q(1.5, 0.0).is_err());
    }

    #[test]
    fn gla_examples() {
        let v = eval_gla(&[0.0, 0.0], 0, &uniform(2), 0.0).unwrap();
        assert!((v - LN_2).abs() < 1e-15);
        let skew = ClassStats::from_priors(&[0.8, 0.2]).unwrap();
        let v = eval_gla(&[0.0, 0.0], 1, &skew, 0.0).unwrap();
        assert!((v - 1.609_437_912_434_100_3).abs() < 1e-12);
        assert!(eval_gla(&[0.0, 0.0], 1, &skew, 1.0).is_err());
        assert!(eval_gla(&[0.0, 0.0], 1, &skew, -0.1).is_err());
    }

    #[test]
    fn gca_examples() {
        let stats = ClassStats::from_priors(&[0.5, 0.5]).unwrap();
        let v = eval_gca(&[0.0, 0.0], 0, &stats, 0.0, &[1.0, 1.0]).unwrap();
        assert!((v - 2.0 * LN_2).abs() < 1e-15);
        assert!(eval_gca(&[0.0, 0.0], 0, &stats, 0.0, &[0.0, 1.0]).is_err());
        assert!(eval_gca(&[0.0, 0.0], 0, &stats, 0.0, &[-1.0, 1.0]).is_err());
        assert!(eval_gca(&[0.0, 0.0], 0, &stats, 0.0, &[1.0]).is_err());
    }

    #[test]
    fn default_margins() {
        let m = default_gca_margins(&ClassStats::from_counts(&[1, 1]).unwrap());
        assert_eq!(m, vec![0.5, 0.5]);
        let m = default_gca_margins(&ClassStats::from_counts(&[8, 1]).unwrap());
        assert!((m[0] - 2.0 / 3.0).abs() < 1e-15 && (m[1] - 1.0 / 3.0).abs() < 1e-15);
        let m = default_gca_margins(&ClassStats::from_counts(&[1000, 8, 1]).unwrap());
        for (a, b) in m.iter().zip([10.0, 2.0, 1.0]) {
            assert!((a - b / 13.0).abs() < 1e-15);
        }
    }

    #[test]
    fn baseline_examples() {
        let v = eval_baseline(&LossSpec::Ce, &[0.0; 3], 2, &uniform(3), None).unwrap();
        assert!((v - 3f64.ln()).abs() < 1e-15);
        let stats = ClassStats::from_counts(&[16, 16]).unwrap();
        let v = eval_baseline(&LossSpec::Ldam { c: 1.0 }, &[0.0, 0.0], 0, &stats, None).unwrap();
        assert!((v - 0.974_076_984_180_107_9).abs() < 1e-12);
        assert!(eval_baseline(&LossSpec::Gla { q: 0.0 }, &[0.0, 0.0], 0, &stats, None).is_err());
        assert!(eval_baseline(&LossSpec::Cb { gamma: 1.5 }, &[0.0, 0.0], 0, &stats, None).is_err());
        let eq = LossSpec::Equal {
            p: 0.5,
            lambda: 0.1,
        };
        assert!(eval_baseline(&eq, &[0.0, 0.0], 0, &stats, None).is_err());
        assert!(eval_baseline(&eq, &[0.0, 0.0], 0, &stats, Some(&[true])).is_err());
    }

    #[test]
    fn ldam_needs_counts() {
        let stats = ClassStats::from_priors(&[0.5, 0.5]).unwrap();
        assert!(eval(&LossSpec::Ldam { c: 1.0 }, &[0.0, 0.0], 0, &stats, None).is_err());
    }

    #[test]
    fn equal_drops_rare_negatives_only() {
        // class 1 is rare (prior 0.05 < λ) and dropped from the normalizer
        // when the label is 0; the label's own term is never dropped.
        let stats = ClassStats::from_counts(&[95, 5]).unwrap();
        let eq = LossSpec::Equal {
            p: 0.5,
            lambda: 0.1,
        };
        let dropped = eval(&eq, &[0.0, 3.0], 0, &stats, Some(&[true, true])).unwrap();
        assert_eq!(dropped, 0.0);
        let kept = eval(&eq, &[0.0, 3.0], 0, &stats, Some(&[false, false])).unwrap();
        let ce = eval(&LossSpec::Ce, &[0.0, 3.0], 0, &stats, None).unwrap();
        assert_eq!(kept, ce);
        let own = eval(&eq, &[0.0, 3.0], 1, &stats, Some(&[true, true])).unwrap();
        assert_eq!(
            own,
            eval(&LossSpec::Ce, &[0.0, 3.0], 1, &stats, None).unwrap()
        );
        // strict threshold: p̂ = λ is not dropped
        let stats = ClassStats::from_counts(&[9, 1]).unwrap();
        let eq = LossSpec::Equal {
            p: 0.5,
            lambda: 0.1,
        };
        let v = eval(&eq, &[0.0, 3.0], 0, &stats, Some(&[true, true])).unwrap();
        assert_eq!(
            v,
            eval(&LossSpec::Ce, &[0.0, 3.0], 0, &stats, None).unwrap()
        );
    }

    #[test]
    fn csmax_examples() {
        let v = eval_csmax(&[0.0, 0.0], 0, 1.0, 1.0, 1.0).unwrap();
        assert!((v - LN_2).abs() < 1e-15);
        assert_eq!(
            eval_csmax(&[3.0, -7.0, 1.0], 1, 0.0, 0.5, 1.0).unwrap(),
            0.0
        );
        let v = eval_csmax(&[500.0, 0.0, -20.0], 0, 2.5, 1.0, 1.0).unwrap();
        assert!((v - 2.5 * LN_2).abs() < 1e-15);
        // exponential member: Ψ(x) = e^{-x}
        let v = eval_csmax(&[0.0, 1.0], 0, 1.0, 1.0, 0.0).unwrap();
        assert!((v - 1f64.exp()).abs() < 1e-12);
        assert!(eval_csmax(&[0.0, 1.0], 0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn csmax_tie_subgradient_uses_smallest_index() {
        let stats = uniform(3);
        let spec = LossSpec::Csmax {
            rho: 1.0,
            psi_tau: 1.0,
        };
        let g = eval_grad(&spec, &[0.0, 2.0, 2.0], 0, &stats, None).unwrap();
        assert!(g[1] > 0.0 && g[2] == 0.0 && g[0] < 0.0);
        let g = eval_grad(&spec, &[2.0, 0.0, 2.0], 2, &stats, None).unwrap();
        assert!(g[0] > 0.0 && g[2] < 0.0);
    }

    #[test]
    fn balanced_loss_examples() {
        assert_eq!(eval_balanced_loss(1, 1, &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(eval_balanced_loss(0, 1, &[0.5, 0.5]).unwrap(), 2.0);
        assert!((eval_balanced_loss(0, 1, &[0.9, 0.1]).unwrap() - 10.0).abs() < 1e-12);
        assert!(eval_balanced_loss(0, 1, &[1.0, 0.0]).is_err());
        assert!(eval_balanced_loss(2, 1, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn gradient_examples() {
        let g = eval_grad(&LossSpec::Ce, &[0.0, 0.0], 0, &uniform(2), None).unwrap();
        assert_eq!(g, vec![-0.5, 0.5]);
        let s = [0.3, -1.2, 2.0];
        let ce = eval_grad(&LossSpec::Ce, &s, 1, &uniform(3), None).unwrap();
        let gla = eval_grad(&LossSpec::Gla { q: 0.0 }, &s, 1, &uniform(3), None).unwrap();
        for (a, b) in ce.iter().zip(&gla) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn input_errors() {
        let stats = uniform(3);
        assert!(eval(&LossSpec::Ce, &[0.0, 0.0], 0, &stats, None).is_err());
        assert!(eval(&LossSpec::Ce, &[0.0; 3], 3, &stats, None).is_err());
        assert!(eval(&LossSpec::Ce, &[0.0, f64::NAN, 0.0], 0, &stats, None).is_err());
        assert!(eval(&LossSpec::La { tau: 0.0 }, &[0.0; 3], 0, &stats, None).is_err());
    }

    fn specs(n: usize, stats: &ClassStats) -> Vec<LossSpec> {
        vec![
            LossSpec::Ce,
            LossSpec::Wce,
            LossSpec::La { tau: 1.0 },
            LossSpec::La { tau: 2.0 },
            LossSpec::Cb { gamma: 0.9 },
            LossSpec::Focal { gamma: 2.0 },
            LossSpec::Focal { gamma: 0.5 },
            LossSpec::Ldam { c: 0.5 },
            LossSpec::Gce { q: 0.3 },
            LossSpec::Gla { q: 0.0 },
            LossSpec::Gla { q: 0.7 },
            LossSpec::gca_default(0.0, stats),
            LossSpec::Gca {
                q: 0.4,
                margins: (0..n).map(|k| 0.5 + 0.25 * k as f64).collect(),
            },
            LossSpec::Csmax {
                rho: 0.7,
                psi_tau: 1.0,
            },
            LossSpec::Csmax {
                rho: 1.5,
                psi_tau: 0.5,
            },
        ]
    }

    fn case() -> impl Strategy<Value = (Vec<f64>, Vec<u64>, usize)> {
        (2usize..6).prop_flat_map(|n| {
            (
                prop::collection::vec(-4.0..4.0f64, n),
                prop::collection::vec(1u64..500, n),
                0..n,
            )
        })
    }

    proptest! {
        #[test]
        fn values_nonnegative_and_shift_invariant((s, counts, y) in case(), c in -50.0..50.0f64) {
            let stats = ClassStats::from_counts(&counts).unwrap();
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            let draws = vec![true; s.len()];
            let eq = LossSpec::Equal { p: 0.5, lambda: 0.3 };
            for spec in specs(s.len(), &stats).iter().chain([&eq]) {
                let a = eval(spec, &s, y, &stats, Some(&draws)).unwrap();
                let b = eval(spec, &shifted, y, &stats, Some(&draws)).unwrap();
                prop_assert!(a >= 0.0, "{spec:?} negative");
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{spec:?}: {a} vs {b}");
            }
        }

        #[test]
        fn true_score_monotone((s, counts, y) in case(), bump in 0.0..3.0f64) {
            let stats = ClassStats::from_counts(&counts).unwrap();
            let mut up = s.clone();
            up[y] += bump;
            let draws = vec![false; s.len()];
            for spec in specs(s.len(), &stats) {
                let a = eval(&spec, &s, y, &stats, Some(&draws)).unwrap();
                let b = eval(&spec, &up, y, &stats, Some(&draws)).unwrap();
                prop_assert!(b <= a + 1e-12, "{spec:?}: {a} -> {b}");
            }
        }

        #[test]
        fn gradients_match_finite_differences((s, counts, y) in case()) {
            let stats = ClassStats::from_counts(&counts).unwrap();
            for spec in specs(s.len(), &stats) {
                if matches!(spec, LossSpec::Csmax { .. }) {
                    let mut sorted = s.clone();
                    sorted.sort_by(f64::total_cmp);
                    let gap = sorted[s.len() - 1] - sorted[s.len() - 2];
                    prop_assume!(gap > 1e-3);
                }
                let g = eval_grad(&spec, &s, y, &stats, None).unwrap();
                let fd = finite_diff_gradient(
                    |v| eval(&spec, v, y, &stats, None).unwrap(), &s, FD_STEP).unwrap();
                prop_assert!(max_relative_error(&g, &fd) < 1e-6, "{spec:?}: {g:?} vs {fd:?}");
            }
        }

        #[test]
        fn gla_with_uniform_priors_is_gce(s in prop::collection::vec(-5.0..5.0f64, 4), y in 0usize..4, q in 0.0..0.95f64) {
            let stats = uniform(4);
            let gla = eval_gla(&s, y, &stats, q).unwrap();
            let gce = eval(&LossSpec::Gce { q }, &s, y, &stats, None).unwrap();
            prop_assert!((gla - gce).abs() < 1e-12);
        }

        #[test]
        fn gca_margin_scaling((s, counts, y) in case(), c in 0.1..10.0f64) {
            let stats = ClassStats::from_counts(&counts).unwrap();
            let margins = default_gca_margins(&stats);
            let a = eval_gca(&s, y, &stats, 0.3, &margins).unwrap();
            let s2: Vec<f64> = s.iter().map(|v| v / c).collect();
            let m2: Vec<f64> = margins.iter().map(|v| v / c).collect();
            let b = eval_gca(&s2, y, &stats, 0.3, &m2).unwrap();
            prop_assert!((a - b).abs() < 1e-10 * a.max(1.0));
        }

        #[test]
        fn focal_zero_gamma_is_ce((s, counts, y) in case()) {
            let stats = ClassStats::from_counts(&counts).unwrap();
            let f = eval(&LossSpec::Focal { gamma: 0.0 }, &s, y, &stats, None).unwrap();
            let c = eval(&LossSpec::Ce, &s, y, &stats, None).unwrap();
            prop_assert_eq!(f, c);
        }
    }
}
