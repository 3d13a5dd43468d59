//! Pointwise oracles for the balanced loss: Bayes labels, conditional
//! regrets, closed-form best conditional errors of the GCE-type surrogates,
//! the H-consistency bound checks, and the margin-bound machinery
//! (ρ-margin loss, empirical Rademacher complexity, minimizability gaps).

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::{rng_from_seed, Dataset, DiscreteJoint};
use crate::error::{Error, Result};
use crate::losses::{self, ClassStats, LossSpec, Objective};
use crate::numerics::{argmax_highest, lse, SimplexVector};
use crate::trainer::{predict, LinearModel, Model};

/// Tolerance on bound slacks for float error in the closed forms.
pub const SLACK_TOL: f64 = 1e-9;

/// The distribution of `y` at one input `x`, the class priors, and the
/// labels the hypothesis set can predict there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPoint {
    cond: Vec<f64>,
    priors: Vec<f64>,
    reachable: Vec<usize>,
}

impl ConditionalPoint {
    /// Point with every label reachable.
    pub fn new(cond: Vec<f64>, priors: Vec<f64>) -> Result<Self> {
        let n = cond.len();
        Self::with_reachable(cond, priors, (0..n).collect())
    }

    pub fn with_reachable(
        cond: Vec<f64>,
        priors: Vec<f64>,
        mut reachable: Vec<usize>,
    ) -> Result<Self> {
        let cond = SimplexVector::new(cond)?.into_inner();
        let priors = SimplexVector::new(priors)?.into_inner();
        if cond.len() != priors.len() {
            return Err(Error::Dimension {
                expected: cond.len(),
                got: priors.len(),
            });
        }
        if priors.iter().any(|p| *p <= 0.0) {
            return Err(Error::invalid("priors", "every prior must be positive"));
        }
        reachable.sort_unstable();
        reachable.dedup();
        if reachable.is_empty() {
            return Err(Error::invalid("reachable", "no reachable label"));
        }
        if let Some(&label) = reachable.iter().find(|&&y| y >= cond.len()) {
            return Err(Error::Label {
                label,
                n: cond.len(),
            });
        }
        Ok(Self {
            cond,
            priors,
            reachable,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.cond.len()
    }

    pub fn cond(&self) -> &[f64] {
        &self.cond
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn reachable(&self) -> &[usize] {
        &self.reachable
    }

    pub fn p_min(&self) -> f64 {
        self.priors.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn is_regular(&self) -> bool {
        self.reachable.len() == self.cond.len()
    }

    pub fn stats(&self) -> ClassStats {
        ClassStats::from_priors(&self.priors).expect("validated priors")
    }

    /// `p(y|x) / p(y)` for every label.
    pub fn ratios(&self) -> Vec<f64> {
        self.cond
            .iter()
            .zip(&self.priors)
            .map(|(c, p)| c / p)
            .collect()
    }
}

/// Highest-scoring reachable label; ties go to the highest index.
fn argmax_reachable(point: &ConditionalPoint, values: &[f64]) -> usize {
    let mut best = point.reachable[0];
    for &y in &point.reachable {
        if values[y] >= values[best] {
            best = y;
        }
    }
    best
}

/// Conditional balanced regret of predicting `predicted`:
/// `max_{y reachable} p(y|x)/p(y) − p(ŷ|x)/p(ŷ)`.
pub fn bal_regret(point: &ConditionalPoint, predicted: usize) -> Result<f64> {
    if !point.reachable.contains(&predicted) {
        return Err(Error::invalid(
            "predicted",
            format!("label {predicted} is not reachable"),
        ));
    }
    let r = point.ratios();
    let best = point
        .reachable
        .iter()
        .map(|&y| r[y])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best - r[predicted])
}

/// `argmax_y p(y|x)/p(y)` over reachable labels.
pub fn bayes_balanced_label(point: &ConditionalPoint) -> usize {
    argmax_reachable(point, &point.ratios())
}

/// `argmax_y p(y|x)/p(y)^τ` over reachable labels, the label favoured by
/// logit adjustment with temperature `τ`.
pub fn bayes_la_label(point: &ConditionalPoint, tau: f64) -> Result<usize> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau", "must be >= 0"));
    }
    let v: Vec<f64> = point
        .cond
        .iter()
        .zip(&point.priors)
        .map(|(c, p)| c / p.powf(tau))
        .collect();
    Ok(argmax_reachable(point, &v))
}

/// Adjusted-softmax target of the GLA minimizer, `s(y) ∝ p(y|x)^{1/(1−q)}`.
pub fn gla_pointwise_minimizer(point: &ConditionalPoint, q: f64) -> Result<SimplexVector> {
    check_q(q)?;
    let e = 1.0 / (1.0 - q);
    let mass: Vec<f64> = point.cond.iter().map(|c| c.powf(e)).collect();
    SimplexVector::from_mass(&mass)
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::invalid("q", format!("{q} outside [0, 1)")));
    }
    Ok(())
}

/// `Σ_y p(y|x) ℓ(h, x, y)` with class stats taken from the point's priors.
pub fn conditional_error(spec: &LossSpec, scores: &[f64], point: &ConditionalPoint) -> Result<f64> {
    if matches!(spec, LossSpec::Equal { .. }) {
        return Err(Error::Unsupported("EQUAL conditional error".into()));
    }
    let stats = point.stats();
    let mut total = 0.0;
    for (y, c) in point.cond.iter().enumerate() {
        if *c > 0.0 {
            total += c * losses::eval(spec, scores, y, &stats, None)?;
        }
    }
    Ok(total)
}

/// Best GCE conditional error for the distribution `dist` with
/// unconstrained scores.
fn gce_best(dist: &[f64], q: f64) -> f64 {
    if q == 0.0 {
        -dist
            .iter()
            .filter(|c| **c > 0.0)
            .map(|c| c * c.ln())
            .sum::<f64>()
    } else {
        let e = 1.0 / (1.0 - q);
        let z: f64 = dist.iter().map(|c| c.powf(e)).sum();
        dist.iter()
            .map(|c| c * (1.0 - (c.powf(e) / z).powf(q)))
            .sum::<f64>()
            / q
    }
}

/// Closed-form best conditional error over unconstrained scores for GCE,
/// GLA and GCA with unit margins.
pub fn best_conditional_error(spec: &LossSpec, point: &ConditionalPoint) -> Result<f64> {
    spec.validate(point.n_classes())?;
    match spec {
        LossSpec::Gce { q } | LossSpec::Gla { q } => Ok(gce_best(&point.cond, *q)),
        LossSpec::Gca { q, margins } => {
            if margins.iter().any(|r| *r != 1.0) {
                return Err(Error::Unsupported(
                    "GCA closed form with non-unit margins".into(),
                ));
            }
            let ratios = point.ratios();
            let z: f64 = ratios.iter().sum();
            let reweighted: Vec<f64> = ratios.iter().map(|r| r / z).collect();
            Ok(z * gce_best(&reweighted, *q))
        }
        other => Err(Error::Unsupported(format!(
            "closed-form best conditional error for {}",
            other.family()
        ))),
    }
}

/// Per-label affine map `z = h / r_y + o` and weight `a_y` with which the
/// conditional error of a GCE-type loss is `Σ_y a_y Ψ^q(softmax(z)_y)`.
struct GceForm {
    q: f64,
    offset: Vec<f64>,
    scale: Vec<f64>,
    weight: Vec<f64>,
}

impl GceForm {
    fn new(spec: &LossSpec, point: &ConditionalPoint) -> Result<Self> {
        let n = point.n_classes();
        spec.validate(n)?;
        let cond = point.cond.clone();
        let form = match spec {
            LossSpec::Gce { q } => GceForm {
                q: *q,
                offset: vec![0.0; n],
                scale: vec![1.0; n],
                weight: cond,
            },
            LossSpec::Gla { q } => GceForm {
                q: *q,
                offset: point.priors.iter().map(|p| p.ln() / (1.0 - q)).collect(),
                scale: vec![1.0; n],
                weight: cond,
            },
            LossSpec::Gca { q, margins } => GceForm {
                q: *q,
                offset: vec![0.0; n],
                scale: margins.clone(),
                weight: point.ratios(),
            },
            other => {
                return Err(Error::Unsupported(format!(
                    "numeric minimization for {}",
                    other.family()
                )))
            }
        };
        Ok(form)
    }

    fn z(&self, h: &[f64], y: usize) -> Vec<f64> {
        h.iter()
            .zip(&self.offset)
            .map(|(v, o)| v / self.scale[y] + o)
            .collect()
    }

    fn value(&self, h: &[f64]) -> f64 {
        let mut total = 0.0;
        for y in 0..h.len() {
            if self.weight[y] == 0.0 {
                continue;
            }
            let z = self.z(h, y);
            let log_t = z[y] - lse(&z);
            let psi = if self.q == 0.0 {
                -log_t
            } else {
                -(self.q * log_t).exp_m1() / self.q
            };
            total += self.weight[y] * psi;
        }
        total
    }

    /// Gradient and Hessian in `h`.
    fn derivatives(&self, h: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = h.len();
        let mut g = vec![0.0; n];
        let mut hess = vec![vec![0.0; n]; n];
        for y in 0..n {
            if self.weight[y] == 0.0 {
                continue;
            }
            let z = self.z(h, y);
            let norm = lse(&z);
            let p: Vec<f64> = z.iter().map(|v| (v - norm).exp()).collect();
            let tq = if self.q == 0.0 {
                1.0
            } else {
                (self.q * (z[y] - norm)).exp()
            };
            let r = self.scale[y];
            let a = self.weight[y] * tq;
            let diff: Vec<f64> = (0..n)
                .map(|j| p[j] - if j == y { 1.0 } else { 0.0 })
                .collect();
            for i in 0..n {
                g[i] += a * diff[i] / r;
                for j in 0..n {
                    let cov = if i == j { p[i] } else { 0.0 } - p[i] * p[j];
                    hess[i][j] += a * (cov - self.q * diff[i] * diff[j]) / (r * r);
                }
            }
        }
        (g, hess)
    }
}

/// Solves `(A + λI) x = b` for symmetric `A` by Cholesky; `None` when the
/// shifted matrix is not positive definite.
fn solve_shifted(a: &[Vec<f64>], lambda: f64, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j] + if i == j { lambda } else { 0.0 };
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i][i];
    }
    Some(x)
}

/// Result of [`minimize_conditional_error`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minimized {
    pub scores: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Numerically minimizes the conditional error of a GCE, GLA or GCA loss
/// over unconstrained scores, starting from zero. Steps are damped Newton
/// steps (Levenberg–Marquardt) of length at most 1, at most 10,000 of
/// them, stopping when no damped step decreases the objective or two
/// consecutive steps gain less than 1e-12 squared.
pub fn minimize_conditional_error(spec: &LossSpec, point: &ConditionalPoint) -> Result<Minimized> {
    const MAX_STEPS: usize = 10_000;
    const TOL: f64 = 1e-12;
    // for q > 0 the loss saturates; long steps can land on the flat region
    const MAX_STEP: f64 = 1.0;
    let form = GceForm::new(spec, point)?;
    let n = point.n_classes();
    let mut h = vec![0.0; n];
    let mut f = form.value(&h);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut small_steps = 0;
    while iterations < MAX_STEPS {
        iterations += 1;
        let (g, hess) = form.derivatives(&h);
        if g.iter().all(|v| v.abs() < 1e-15) {
            break;
        }
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut accepted = None;
        while lambda < 1e12 {
            if let Some(mut d) = solve_shifted(&hess, lambda, &rhs) {
                let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if len > MAX_STEP {
                    d.iter_mut().for_each(|v| *v *= MAX_STEP / len);
                }
                let cand: Vec<f64> = h.iter().zip(&d).map(|(a, b)| a + b).collect();
                let fc = form.value(&cand);
                if fc < f {
                    accepted = Some((cand, fc));
                    lambda = (lambda * 0.1).max(1e-15);
                    break;
                }
            }
            lambda *= 10.0;
        }
        let Some((cand, fc)) = accepted else { break };
        let gain = f - fc;
        h = cand;
        f = fc;
        // two consecutive negligible gains end the search
        if gain <= TOL * TOL * f.abs().max(1.0) {
            small_steps += 1;
            if small_steps >= 2 {
                break;
            }
        } else {
            small_steps = 0;
        }
    }
    Ok(Minimized {
        scores: h,
        value: f,
        iterations,
    })
}

/// Outcome of one conditional bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub target_regret: f64,
    pub surrogate_regret: f64,
    pub bound_value: f64,
    pub slack: f64,
}

impl RegretReport {
    pub fn holds(&self) -> bool {
        self.slack >= -SLACK_TOL
    }
}

/// `Γ(t)` of the GLA bound.
pub fn gla_gamma(t: f64, q: f64, p_min: f64) -> f64 {
    let t = t.max(0.0);
    if q == 0.0 {
        (2.0 * t).sqrt() / p_min
    } else {
        (2.0 * t).sqrt() / (p_min.powf(1.0 / (1.0 - q)) * (1.0 - q).sqrt())
    }
}

/// `Γ̄(t)` of the GCA bound.
pub fn gca_gamma(t: f64, q: f64, p_min: f64, n: usize) -> f64 {
    let t = t.max(0.0);
    (2.0 * (n as f64).powf(q) * t).sqrt() / p_min.sqrt()
}

fn regret_report(
    spec: &LossSpec,
    point: &ConditionalPoint,
    scores: &[f64],
    gamma: impl Fn(f64) -> f64,
) -> Result<RegretReport> {
    if !point.is_regular() {
        return Err(Error::Unsupported(
            "bound checks need every label reachable".into(),
        ));
    }
    if scores.len() != point.n_classes() {
        return Err(Error::Dimension {
            expected: point.n_classes(),
            got: scores.len(),
        });
    }
    let target = bal_regret(point, argmax_highest(scores))?;
    let surrogate = conditional_error(spec, scores, point)? - best_conditional_error(spec, point)?;
    let bound = gamma(surrogate);
    Ok(RegretReport {
        target_regret: target,
        surrogate_regret: surrogate,
        bound_value: bound,
        slack: bound - target,
    })
}

/// Checks `ΔC_bal(h, x) ≤ Γ(ΔC_GLA(h, x))` at one point.
pub fn check_gla_bound(point: &ConditionalPoint, scores: &[f64], q: f64) -> Result<RegretReport> {
    check_q(q)?;
    let p_min = point.p_min();
    regret_report(&LossSpec::Gla { q }, point, scores, |t| {
        gla_gamma(t, q, p_min)
    })
}

/// Checks `ΔC_bal(h, x) ≤ Γ̄(ΔC_GCA(h, x))` at one point, with unit margins.
pub fn check_gca_bound(point: &ConditionalPoint, scores: &[f64], q: f64) -> Result<RegretReport> {
    check_q(q)?;
    let n = point.n_classes();
    let p_min = point.p_min();
    let spec = LossSpec::Gca {
        q,
        margins: vec![1.0; n],
    };
    regret_report(&spec, point, scores, |t| gca_gamma(t, q, p_min, n))
}

/// `min(1, max(0, 1 − u/ρ))`.
pub fn phi_rho(u: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::invalid("rho", "must be positive"));
    }
    Ok((1.0 - u / rho).clamp(0.0, 1.0))
}

fn check_margin_inputs(scores: &[f64], label: usize, cost: f64, rho: f64) -> Result<()> {
    if label >= scores.len() {
        return Err(Error::Label {
            label,
            n: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    if !(cost >= 0.0 && cost.is_finite()) {
        return Err(Error::invalid("cost", "must be finite and >= 0"));
    }
    phi_rho(0.0, rho).map(|_| ())
}

/// Cost-sensitive ρ-margin loss against the runner-up:
/// `c · max_{y' ≠ y} Φ_ρ(h(x,y) − h(x,y'))`.
pub fn margin_loss(scores: &[f64], label: usize, cost: f64, rho: f64) -> Result<f64> {
    check_margin_inputs(scores, label, cost, rho)?;
    let mut worst: f64 = 0.0;
    for (j, s) in scores.iter().enumerate() {
        if j != label {
            worst = worst.max(phi_rho(scores[label] - s, rho)?);
        }
    }
    Ok(cost * worst)
}

/// The same loss with the maximum over every label including `y` itself,
/// whose term `Φ_ρ(0) = 1` makes the value always equal to the cost.
pub fn margin_loss_inclusive(scores: &[f64], label: usize, cost: f64, rho: f64) -> Result<f64> {
    check_margin_inputs(scores, label, cost, rho)?;
    let mut worst: f64 = 0.0;
    for s in scores {
        worst = worst.max(phi_rho(scores[label] - s, rho)?);
    }
    Ok(cost * worst)
}

/// Monte-Carlo estimate of the empirical Rademacher complexity of
/// `{x ↦ w_y · x : ‖w_y‖ ≤ B}` with `n` score columns, as (mean, standard
/// error) over `trials` sign draws. The inner supremum is exact:
/// `B Σ_y ‖Σ_i ε_iy x_i‖ / m`.
pub fn rademacher_linear(
    features: &[Vec<f64>],
    n: usize,
    norm_bound: f64,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if features.is_empty() || n == 0 || trials == 0 {
        return Err(Error::invalid(
            "sample",
            "need examples, classes and trials",
        ));
    }
    if !(norm_bound >= 0.0 && norm_bound.is_finite()) {
        return Err(Error::invalid("norm_bound", "must be finite and >= 0"));
    }
    let d = features[0].len();
    let m = features.len() as f64;
    let mut rng = rng_from_seed(seed);
    let mut values = Vec::with_capacity(trials);
    let mut acc = vec![0.0; d];
    for _ in 0..trials {
        let mut total = 0.0;
        for _ in 0..n {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for x in features {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                acc.iter_mut().zip(x).for_each(|(a, v)| *a += sign * v);
            }
            total += acc.iter().map(|a| a * a).sum::<f64>().sqrt();
        }
        values.push(norm_bound * total / m);
    }
    let t = trials as f64;
    let mean = values.iter().sum::<f64>() / t;
    let se = if trials > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0);
        (var / t).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

/// [`rademacher_linear`] on a dataset's features with one score column per
/// class.
pub fn empirical_rademacher_linear(
    sample: &Dataset,
    norm_bound: f64,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    rademacher_linear(
        sample.features(),
        sample.n_classes(),
        norm_bound,
        trials,
        seed,
    )
}

/// Terms of the cost-sensitive margin bound and the test risk it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginBoundReport {
    pub empirical_margin_risk: f64,
    pub rademacher: f64,
    pub rademacher_se: f64,
    pub complexity_term: f64,
    pub deviation_term: f64,
    pub rhs: f64,
    pub test_risk: f64,
    pub holds: bool,
}

/// Evaluates `R̂_{S,ρ}(h) + 4 C̄ √(2n) R̂_S(H) + 3 √(log(2/δ) / 2m)` on
/// `train` with costs `1/p̂(y)` and `C̄ = 1/p̂_min`, and compares it to the
/// cost-weighted error of `model` on `test`.
#[allow(clippy::too_many_arguments)]
pub fn check_theorem5_bound(
    model: &LinearModel,
    train: &Dataset,
    test: &Dataset,
    rho: f64,
    norm_bound: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<MarginBoundReport> {
    phi_rho(0.0, rho)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", "must lie in (0, 1)"));
    }
    if model.biases().iter().any(|b| *b != 0.0) {
        return Err(Error::Unsupported(
            "margin bound for models with bias".into(),
        ));
    }
    if model.max_row_norm() > norm_bound * (1.0 + 1e-12) {
        return Err(Error::invalid("model", "row norm exceeds the family bound"));
    }
    if train.n_classes() != test.n_classes() || model.n_classes() != train.n_classes() {
        return Err(Error::Dimension {
            expected: train.n_classes(),
            got: test.n_classes(),
        });
    }
    let stats = train.class_stats();
    let n = train.n_classes();
    let m = train.len() as f64;
    let mut margin = 0.0;
    for (x, y) in train.iter() {
        margin += margin_loss(&model.scores(x), y, stats.class_weight(y), rho)?;
    }
    margin /= m;
    let (rad, rad_se) = empirical_rademacher_linear(train, norm_bound, trials, seed)?;
    let c_bar = 1.0 / stats.p_min();
    let complexity = 4.0 * c_bar * (2.0 * n as f64).sqrt() * rad;
    let deviation = 3.0 * ((2.0 / delta).ln() / (2.0 * m)).sqrt();
    let rhs = margin + complexity + deviation;
    let mut risk = 0.0;
    for (x, y) in test.iter() {
        if predict(model, x)? != y {
            risk += stats.class_weight(y);
        }
    }
    risk /= test.len() as f64;
    Ok(MarginBoundReport {
        empirical_margin_risk: margin,
        rademacher: rad,
        rademacher_se: rad_se,
        complexity_term: complexity,
        deviation_term: deviation,
        rhs,
        test_risk: risk,
        holds: risk <= rhs,
    })
}

/// Worst slack over the grid of
/// `C_max log(1 + (c_y/c_y') e^{−v/ρ}) − c_y Φ_ρ(v)` with
/// `C_max = c_max / log(1 + c_min/c_max)`.
pub fn check_lamargin(
    c_y: f64,
    c_yprime: f64,
    c_min: f64,
    c_max: f64,
    v_grid: &[f64],
    rho_grid: &[f64],
) -> Result<f64> {
    if !(c_min > 0.0 && c_min <= c_max) {
        return Err(Error::invalid("c_min", "need 0 < c_min <= c_max"));
    }
    for (name, c) in [("c_y", c_y), ("c_yprime", c_yprime)] {
        if !(c >= c_min && c <= c_max) {
            return Err(Error::invalid(name, "cost outside [c_min, c_max]"));
        }
    }
    if v_grid.is_empty() || rho_grid.is_empty() {
        return Err(Error::invalid("grid", "empty grid"));
    }
    let big = c_max / (c_min / c_max).ln_1p();
    let mut worst = f64::INFINITY;
    for &rho in rho_grid {
        for &v in v_grid {
            let lhs = c_y * phi_rho(v, rho)?;
            let rhs = big * ((c_y / c_yprime) * (-v / rho).exp()).ln_1p();
            worst = worst.min(rhs - lhs);
        }
    }
    Ok(worst)
}

fn finite_risks(
    joint: &DiscreteJoint,
    tables: &[Vec<Vec<f64>>],
    objective: &Objective,
) -> Result<Vec<Vec<f64>>> {
    let stats = joint.class_stats()?;
    let n = joint.n_classes();
    tables
        .iter()
        .map(|table| {
            if table.len() != joint.num_x() {
                return Err(Error::Dimension {
                    expected: joint.num_x(),
                    got: table.len(),
                });
            }
            (0..joint.num_x())
                .map(|x| {
                    let cond = joint.conditional(x);
                    let mut c = 0.0;
                    for y in 0..n {
                        if cond[y] > 0.0 {
                            c += cond[y] * objective.eval(&table[x], y, &stats)?;
                        }
                    }
                    Ok(c)
                })
                .collect()
        })
        .collect()
}

/// `min_h R(h) − E_x[min_h C(h, x)]` over a finite hypothesis set, each
/// hypothesis given as its score table `table[x][y]`.
pub fn minimizability_gap_finite(
    joint: &DiscreteJoint,
    hypotheses: &[Vec<Vec<f64>>],
    objective: &Objective,
) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::invalid("hypotheses", "empty hypothesis set"));
    }
    let cond = finite_risks(joint, hypotheses, objective)?;
    let px = joint.p_x();
    let best_risk = cond
        .iter()
        .map(|c| c.iter().zip(&px).map(|(a, p)| a * p).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let pointwise: f64 = (0..joint.num_x())
        .map(|x| px[x] * cond.iter().map(|c| c[x]).fold(f64::INFINITY, f64::min))
        .sum();
    Ok(best_risk - pointwise)
}

/// `min_h R(h) − E_x[min_s C(s, x)]` where the inner minimum runs over
/// `grid` together with every hypothesis' scores at `x`, standing in for
/// all measurable functions.
pub fn approximation_error_finite(
    joint: &DiscreteJoint,
    hypotheses: &[Vec<Vec<f64>>],
    objective: &Objective,
    grid: &[Vec<f64>],
) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::invalid("hypotheses", "empty hypothesis set"));
    }
    let cond = finite_risks(joint, hypotheses, objective)?;
    let px = joint.p_x();
    let best_risk = cond
        .iter()
        .map(|c| c.iter().zip(&px).map(|(a, p)| a * p).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let constant: Vec<Vec<Vec<f64>>> = grid
        .iter()
        .map(|s| vec![s.clone(); joint.num_x()])
        .collect();
    let grid_cond = finite_risks(joint, &constant, objective)?;
    let pointwise: f64 = (0..joint.num_x())
        .map(|x| {
            let h = cond.iter().map(|c| c[x]);
            let g = grid_cond.iter().map(|c| c[x]);
            px[x] * h.chain(g).fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(best_risk - pointwise)
}

/// First binary point on the grid `p(1|x), p(1) ∈ {0.05, 0.10, …, 0.95}`
/// (conditional outer, prior inner) where the logit-adjusted Bayes label at
/// `τ` differs from the balanced Bayes label. Points where either argmax is
/// a tie are skipped.
pub fn theorem1_witness(tau: f64) -> Result<Option<ConditionalPoint>> {
    for i in 1..20 {
        let c = i as f64 / 20.0;
        for j in 1..20 {
            let p = j as f64 / 20.0;
            let point = ConditionalPoint::new(vec![c, 1.0 - c], vec![p, 1.0 - p])?;
            let r = point.ratios();
            let la = [c / p.powf(tau), (1.0 - c) / (1.0 - p).powf(tau)];
            if r[0] == r[1] || la[0] == la[1] {
                continue;
            }
            if bayes_la_label(&point, tau)? != bayes_balanced_label(&point) {
                return Ok(Some(point));
            }
        }
    }
    Ok(None)
}

/// Draws a point with Dirichlet(1) conditional and priors over `n` classes.
pub fn random_conditional_point<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ConditionalPoint {
    let mut draw = |floor: f64| -> Vec<f64> {
        let mass: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = Exp1.sample(rng);
                e.max(floor)
            })
            .collect();
        SimplexVector::from_mass(&mass)
            .expect("positive mass")
            .into_inner()
    };
    let cond = draw(0.0);
    let priors = draw(1e-9);
    ConditionalPoint::new(cond, priors).expect("valid random point")
}

/// Which conditional bound a fuzz record exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundFamily {
    Gla,
    Gca,
}

/// One fuzzing trial, written as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzRecord {
    pub family: BoundFamily,
    pub trial: usize,
    pub q: f64,
    pub cond: Vec<f64>,
    pub priors: Vec<f64>,
    pub scores: Vec<f64>,
    #[serde(flatten)]
    pub report: RegretReport,
}

/// Runs `trials` random (point, scores, q) checks of one bound. A third of
/// the trials use q = 0; scores are Gaussian with a random scale, and every
/// fourth trial perturbs the surrogate minimizer slightly.
pub fn fuzz_bound(family: BoundFamily, trials: usize, seed: u64) -> Result<Vec<FuzzRecord>> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(trials);
    for trial in 0..trials {
        let n = rng.random_range(2..=6);
        let point = random_conditional_point(&mut rng, n);
        let q = if trial % 3 == 0 {
            0.0
        } else {
            rng.random_range(0.0..0.95)
        };
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        let mut scores: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        if trial % 4 == 0 {
            let base = near_minimizer(family, &point, q);
            scores
                .iter_mut()
                .zip(&base)
                .for_each(|(s, b)| *s = b + 1e-3 * *s);
        }
        let report = match family {
            BoundFamily::Gla => check_gla_bound(&point, &scores, q)?,
            BoundFamily::Gca => check_gca_bound(&point, &scores, q)?,
        };
        out.push(FuzzRecord {
            family,
            trial,
            q,
            cond: point.cond.clone(),
            priors: point.priors.clone(),
            scores,
            report,
        });
    }
    Ok(out)
}

/// Closed-form scores minimizing the conditional surrogate error, floored
/// where the conditional vanishes.
fn near_minimizer(family: BoundFamily, point: &ConditionalPoint, q: f64) -> Vec<f64> {
    let e = 1.0 / (1.0 - q);
    match family {
        BoundFamily::Gla => point
            .cond
            .iter()
            .zip(&point.priors)
            .map(|(c, p)| (c.max(1e-300).ln() - p.ln()) * e)
            .collect(),
        BoundFamily::Gca => point
            .ratios()
            .iter()
            .map(|r| r.max(1e-300).ln() * e)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, FD_STEP};
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::LN_2;

    fn pt(cond: &[f64], priors: &[f64]) -> ConditionalPoint {
        ConditionalPoint::new(cond.to_vec(), priors.to_vec()).unwrap()
    }

    #[test]
    fn regret_examples() {
        let p = pt(&[0.6, 0.4], &[0.8, 0.2]);
        assert!((bal_regret(&p, 0).unwrap() - 1.25).abs() < 1e-12);
        assert_eq!(bal_regret(&p, 1).unwrap(), 0.0);
        assert_eq!(bayes_balanced_label(&p), 1);
        let restricted =
            ConditionalPoint::with_reachable(vec![0.6, 0.4], vec![0.8, 0.2], vec![0]).unwrap();
        assert!(bal_regret(&restricted, 1).is_err());
        assert_eq!(bal_regret(&restricted, 0).unwrap(), 0.0);
    }

    #[test]
    fn la_label_examples() {
        let p = pt(&[0.55, 0.45], &[0.9, 0.1]);
        assert_eq!(bayes_la_label(&p, 2.0).unwrap(), 1);
        assert_eq!(bayes_la_label(&p, 0.0).unwrap(), 0);
        assert_eq!(bayes_la_label(&p, 1.0).unwrap(), bayes_balanced_label(&p));
    }

    #[test]
    fn minimizer_examples() {
        let p = pt(&[0.6, 0.4], &[0.5, 0.5]);
        assert_eq!(&*gla_pointwise_minimizer(&p, 0.0).unwrap(), &[0.6, 0.4]);
        let s = gla_pointwise_minimizer(&p, 0.5).unwrap();
        assert!((s[0] - 0.36 / 0.52).abs() < 1e-15);
        assert!(gla_pointwise_minimizer(&p, 1.0).is_err());
    }

    #[test]
    fn best_error_examples() {
        let p = pt(&[0.5, 0.5], &[0.3, 0.7]);
        let v = best_conditional_error(&LossSpec::Gla { q: 0.0 }, &p).unwrap();
        assert!((v - LN_2).abs() < 1e-15);
        let p = pt(&[0.6, 0.4], &[0.3, 0.7]);
        let spec = LossSpec::Gla { q: 0.5 };
        let closed = best_conditional_error(&spec, &p).unwrap();
        let numeric = minimize_conditional_error(&spec, &p).unwrap();
        assert!((closed - 0.557_779_2).abs() < 1e-6, "{closed}");
        assert!((closed - numeric.value).abs() < 1e-10);
        let spec = LossSpec::Gca {
            q: 0.0,
            margins: vec![1.0; 3],
        };
        let p = pt(&[0.2, 0.5, 0.3], &[1.0 / 3.0; 3]);
        let closed = best_conditional_error(&spec, &p).unwrap();
        let numeric = minimize_conditional_error(&spec, &p).unwrap();
        assert!((closed - numeric.value).abs() < 1e-10);
        assert!(best_conditional_error(&LossSpec::Ce, &p).is_err());
    }

    #[test]
    fn conditional_error_at_minimizer_is_entropy() {
        let p = pt(&[0.2, 0.5, 0.3], &[0.2, 0.3, 0.5]);
        let h: Vec<f64> = p
            .cond()
            .iter()
            .zip(p.priors())
            .map(|(c, q)| c.ln() - q.ln())
            .collect();
        let v = conditional_error(&LossSpec::Gla { q: 0.0 }, &h, &p).unwrap();
        let entropy: f64 = -p.cond().iter().map(|c| c * c.ln()).sum::<f64>();
        assert!((v - entropy).abs() < 1e-12);
        let one_hot = pt(&[1.0, 0.0], &[0.5, 0.5]);
        let v = conditional_error(&LossSpec::Gla { q: 0.0 }, &[40.0, 0.0], &one_hot).unwrap();
        assert!(v < 1e-15);
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let p = pt(&[0.2, 0.5, 0.3], &[0.2, 0.3, 0.5]);
        for spec in [
            LossSpec::Gla { q: 0.4 },
            LossSpec::Gca {
                q: 0.6,
                margins: vec![0.5, 1.0, 2.0],
            },
            LossSpec::Gce { q: 0.0 },
        ] {
            let form = GceForm::new(&spec, &p).unwrap();
            let h = [0.3, -0.7, 1.1];
            let (g, hess) = form.derivatives(&h);
            let fd = finite_diff_gradient(|v| form.value(v), &h, FD_STEP).unwrap();
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-8);
            }
            for i in 0..3 {
                let row = finite_diff_gradient(|v| form.derivatives(v).0[i], &h, FD_STEP).unwrap();
                for j in 0..3 {
                    assert!((hess[i][j] - row[j]).abs() < 1e-7, "{spec:?}");
                }
            }
            let direct = conditional_error(&spec, &h, &p).unwrap();
            assert!((direct - form.value(&h)).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_examples() {
        let p = pt(&[0.6, 0.4], &[0.8, 0.2]);
        let r = check_gla_bound(&p, &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(r.target_regret, 0.0);
        assert!(r.holds());
        let h: Vec<f64> = [0.6f64.ln() - 0.8f64.ln(), 0.4f64.ln() - 0.2f64.ln()].to_vec();
        let r = check_gla_bound(&p, &h, 0.0).unwrap();
        assert!(r.surrogate_regret.abs() < 1e-12 && r.target_regret == 0.0);
        let ratio = gca_gamma(0.37, 0.0, 0.2, 2) / gla_gamma(0.37, 0.0, 0.2);
        assert!((ratio - 0.2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn margin_examples() {
        assert_eq!(phi_rho(0.0, 1.0).unwrap(), 1.0);
        assert_eq!(phi_rho(2.0, 2.0).unwrap(), 0.0);
        assert_eq!(phi_rho(1.0, 2.0).unwrap(), 0.5);
        assert!(phi_rho(1.0, 0.0).is_err());
        assert_eq!(margin_loss(&[5.0, 0.0], 0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(margin_loss(&[5.0, 0.0, 1.0], 0, 3.0, 1.0).unwrap(), 0.0);
        assert_eq!(
            margin_loss_inclusive(&[5.0, 0.0, 1.0], 0, 3.0, 1.0).unwrap(),
            3.0
        );
    }

    #[test]
    fn lamargin_examples() {
        let s = check_lamargin(1.0, 1.0, 1.0, 1.0, &[0.0], &[1.0]).unwrap();
        assert!(s.abs() < 1e-15);
        let s = check_lamargin(2.0, 10.0, 1.0, 10.0, &[1.0, 5.0], &[1.0]).unwrap();
        assert!(s > 0.0);
        assert!(check_lamargin(20.0, 1.0, 1.0, 10.0, &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn rademacher_examples() {
        let zeros = vec![vec![0.0; 3]; 10];
        assert_eq!(rademacher_linear(&zeros, 2, 5.0, 20, 0).unwrap().0, 0.0);
        let (v, se) = rademacher_linear(&[vec![3.0, 4.0]], 1, 2.0, 7, 1).unwrap();
        assert_eq!(v, 10.0);
        assert_eq!(se, 0.0);
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.1, 1.0]).collect();
        let a = rademacher_linear(&xs, 3, 1.0, 50, 4).unwrap().0;
        let b = rademacher_linear(&xs, 3, 2.0, 50, 4).unwrap().0;
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn gap_examples() {
        let joint = random_discrete_joint_for_test();
        let single = vec![vec![vec![0.3, -0.2]; 3]];
        let obj = Objective::Surrogate(LossSpec::Ce);
        assert_eq!(
            minimizability_gap_finite(&joint, &single, &obj).unwrap(),
            0.0
        );
        // every per-x combination of two score vectors
        let a = vec![1.0, -1.0];
        let b = vec![-1.0, 1.0];
        let mut all = Vec::new();
        for mask in 0..8u32 {
            all.push(
                (0..3)
                    .map(|x| {
                        if mask >> x & 1 == 1 {
                            a.clone()
                        } else {
                            b.clone()
                        }
                    })
                    .collect(),
            );
        }
        assert!(minimizability_gap_finite(&joint, &all, &obj).unwrap().abs() < 1e-15);
    }

    fn random_discrete_joint_for_test() -> DiscreteJoint {
        crate::datagen::random_discrete_joint(3, 2, 0.2, 5).unwrap()
    }

    #[test]
    fn witnesses_exist() {
        for tau in [2.0, 0.5] {
            let w = theorem1_witness(tau).unwrap().expect("witness");
            assert_ne!(bayes_la_label(&w, tau).unwrap(), bayes_balanced_label(&w));
        }
        assert!(theorem1_witness(1.0).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn la_at_unit_tau_is_balanced(seed in 0u64..10_000, n in 2usize..7) {
            let p = random_conditional_point(&mut rng_from_seed(seed), n);
            prop_assert_eq!(bayes_la_label(&p, 1.0).unwrap(), bayes_balanced_label(&p));
            prop_assert_eq!(bal_regret(&p, bayes_balanced_label(&p)).unwrap(), 0.0);
        }

        #[test]
        fn margin_loss_dominates_zero_one(s in prop::collection::vec(-3.0..3.0f64, 2..6), c in 0.0..5.0f64, rho in 0.1..3.0f64, y in 0usize..6) {
            let y = y % s.len();
            let l = margin_loss(&s, y, c, rho).unwrap();
            let zero_one = if argmax_highest(&s) != y { c } else { 0.0 };
            prop_assert!(l >= zero_one);
        }

        #[test]
        fn gap_within_approximation_error(seed in 0u64..1000) {
            let mut rng = rng_from_seed(seed);
            let joint = crate::datagen::random_discrete_joint(3, 2, 0.1, seed).unwrap();
            let hyps: Vec<Vec<Vec<f64>>> = (0..4)
                .map(|_| (0..3).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect())
                .collect();
            let grid: Vec<Vec<f64>> = (-8..=8).map(|k| vec![k as f64 * 0.5, 0.0]).collect();
            let obj = Objective::Surrogate(LossSpec::Gla { q: 0.3 });
            let gap = minimizability_gap_finite(&joint, &hyps, &obj).unwrap();
            let approx = approximation_error_finite(&joint, &hyps, &obj, &grid).unwrap();
            prop_assert!(gap >= -1e-15);
            prop_assert!(gap <= approx + 1e-15);
        }
    }
}
