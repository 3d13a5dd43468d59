//! `verify`: numeric checks of the consistency results, written as JSON
//! lines. Any failed check is a violation.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use balsurr::datagen::{figure1_distribution, gaussian_mixture, random_means, Dataset};
use balsurr::losses::{LossSpec, Objective};
use balsurr::numerics::argmax_highest;
use balsurr::theory::{
    bal_regret, bayes_balanced_label, bayes_la_label, best_conditional_error, check_lamargin,
    check_theorem5_bound, fuzz_bound, minimize_conditional_error, random_conditional_point,
    theorem1_witness, BoundFamily, MarginBoundReport,
};
use balsurr::trainer::{
    best_in_class_search, boundary_angle_deg, train, BoundedLinearFamily, LinearModel,
    NormConstraint, Schedule, TrainConfig,
};
use balsurr::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::{derive_seed, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Bayes,
    Bounds,
    Margin,
    Counterexample,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Bayes,
        Suite::Bounds,
        Suite::Margin,
        Suite::Counterexample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Bayes => "bayes",
            Suite::Bounds => "bounds",
            Suite::Margin => "margin",
            Suite::Counterexample => "counterexample",
        }
    }

    /// Budget used when none is given: points per `q` for `bayes`, trials
    /// per family for `bounds`, resamples for `margin` and the sample size
    /// for `counterexample`.
    pub fn default_budget(self) -> usize {
        match self {
            Suite::Bayes => 500,
            Suite::Bounds => 10_000,
            Suite::Margin => 100,
            Suite::Counterexample => 50_000,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown suite `{s}`")))
    }
}

/// Evidence lines plus the number of failed checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub lines: Vec<Value>,
    pub checks: usize,
    pub violations: usize,
}

impl SuiteOutcome {
    fn new(suite: Suite) -> Self {
        Self {
            suite,
            lines: Vec::new(),
            checks: 0,
            violations: 0,
        }
    }

    fn push(&mut self, ok: bool, mut line: Value) {
        self.checks += 1;
        if !ok {
            self.violations += 1;
        }
        line["ok"] = Value::Bool(ok);
        self.lines.push(line);
    }
}

fn with_check(check: &str, v: &impl Serialize) -> Value {
    let mut line = serde_json::to_value(v).expect("plain data serializes");
    if !line.is_object() {
        line = json!({ "value": line });
    }
    line["check"] = Value::String(check.to_string());
    line
}

pub const GLA_QS: [f64; 3] = [0.0, 0.3, 0.7];
pub const MINIMIZER_TOL: f64 = 1e-10;

/// One numerically minimized GLA conditional error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BayesRecord {
    pub trial: usize,
    pub q: f64,
    pub cond: Vec<f64>,
    pub priors: Vec<f64>,
    pub bayes_label: usize,
    pub minimizer_label: usize,
    pub regret: f64,
    pub value: f64,
    pub closed_form: f64,
}

impl BayesRecord {
    pub fn ok(&self) -> bool {
        self.bayes_label == self.minimizer_label
            && (self.value - self.closed_form).abs() <= MINIMIZER_TOL
    }
}

/// `points` random points with `n ∈ {2, …, 6}`, each minimized for every
/// `q` in [`GLA_QS`].
pub fn bayes_trials(points: usize, seed: u64) -> Result<Vec<BayesRecord>, Error> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(points * GLA_QS.len());
    for trial in 0..points {
        let n = 2 + trial % 5;
        let point = random_conditional_point(&mut rng, n);
        let bayes = bayes_balanced_label(&point);
        for q in GLA_QS {
            let spec = LossSpec::Gla { q };
            let min = minimize_conditional_error(&spec, &point)?;
            let label = argmax_highest(&min.scores);
            out.push(BayesRecord {
                trial,
                q,
                cond: point.cond().to_vec(),
                priors: point.priors().to_vec(),
                bayes_label: bayes,
                minimizer_label: label,
                regret: bal_regret(&point, label)?,
                value: min.value,
                closed_form: best_conditional_error(&spec, &point)?,
            });
        }
    }
    Ok(out)
}

/// One logit-adjusted witness at a fixed temperature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessRecord {
    pub tau: f64,
    pub cond: Vec<f64>,
    pub priors: Vec<f64>,
    pub la_label: usize,
    pub balanced_label: usize,
}

pub fn witnesses(taus: &[f64]) -> Result<Vec<Option<WitnessRecord>>, Error> {
    taus.iter()
        .map(|&tau| {
            let Some(point) = theorem1_witness(tau)? else {
                return Ok(None);
            };
            Ok(Some(WitnessRecord {
                tau,
                cond: point.cond().to_vec(),
                priors: point.priors().to_vec(),
                la_label: bayes_la_label(&point, tau)?,
                balanced_label: bayes_balanced_label(&point),
            }))
        })
        .collect()
}

pub const LAMARGIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LamarginRecord {
    pub c_y: f64,
    pub c_yprime: f64,
    pub worst_slack: f64,
}

/// Worst slack of the logit-adjusted margin inequality for every cost pair
/// in `{1, 2, 10}` over `v ∈ [−10, 10]` in steps of 0.01 and
/// `ρ ∈ {0.1, 1, 10}`, with costs bounded by 1 and 10.
pub fn lamargin_grid() -> Result<Vec<LamarginRecord>, Error> {
    let v: Vec<f64> = (-1000..=1000).map(|k| k as f64 / 100.0).collect();
    let rho = [0.1, 1.0, 10.0];
    let costs = [1.0, 2.0, 10.0];
    let mut out = Vec::new();
    for &c_y in &costs {
        for &c_yprime in &costs {
            out.push(LamarginRecord {
                c_y,
                c_yprime,
                worst_slack: check_lamargin(c_y, c_yprime, 1.0, 10.0, &v, &rho)?,
            });
        }
    }
    Ok(out)
}

pub const MARGIN_COUNTS: [u64; 3] = [250, 150, 100];
pub const MARGIN_DELTA: f64 = 0.1;
pub const MARGIN_RHO: f64 = 1.0;
pub const MARGIN_NORM: f64 = 1.0;
pub const MARGIN_PASS_RATE: f64 = 0.85;

/// One resample of the margin bound check: a 3-class planar Gaussian task
/// with 500 training points, a norm-bounded linear model without bias
/// trained with logit adjustment, and a test set ten times larger.
pub fn margin_resample(resample: usize, seed: u64) -> Result<MarginBoundReport, Error> {
    let means = random_means(3, 2, 3.0, derive_seed(seed, 0));
    let scales = [1.0; 3];
    let s = derive_seed(seed, 100 + resample as u64);
    let train_data = gaussian_mixture(3, 2, &MARGIN_COUNTS, &means, &scales, derive_seed(s, 1))?;
    let test_counts: Vec<u64> = MARGIN_COUNTS.iter().map(|c| 10 * c).collect();
    let test = gaussian_mixture(3, 2, &test_counts, &means, &scales, derive_seed(s, 2))?;
    let mut model = LinearModel::new(3, 2, derive_seed(s, 3))?
        .with_bias(false)
        .with_norm_bound(MARGIN_NORM)?;
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 50,
        lr0: 0.1,
        momentum: 0.9,
        weight_decay: 0.0,
        seed: derive_seed(s, 4),
        schedule: Schedule::Cosine,
    };
    train(&mut model, &train_data, &LossSpec::La { tau: 1.0 }, &cfg)?;
    check_theorem5_bound(
        &model,
        &train_data,
        &test,
        MARGIN_RHO,
        MARGIN_NORM,
        MARGIN_DELTA,
        50,
        derive_seed(s, 5),
    )
}

pub const FIGURE1_NORM: f64 = 100.0;
pub const FIGURE1_RESTARTS: usize = 20;
pub const FIGURE1_FLAT_DEG: f64 = 2.0;
pub const FIGURE1_TILT_DEG: f64 = 5.0;

/// Boundary angles, in degrees from `x₂ = 0`, of the empirical minimizers
/// over the antisymmetric norm-100 linear family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure1Record {
    pub m: usize,
    pub seed: u64,
    pub balanced_deg: f64,
    pub gca_deg: f64,
    pub la_deg: f64,
}

pub fn figure1_family() -> BoundedLinearFamily {
    BoundedLinearFamily {
        n: 2,
        d: 2,
        norm_bound: FIGURE1_NORM,
        constraint: NormConstraint::Sphere,
        antisymmetric: true,
    }
}

pub fn figure1_angle(data: &Dataset, objective: &Objective, seed: u64) -> Result<f64, Error> {
    let r = best_in_class_search(&figure1_family(), data, objective, FIGURE1_RESTARTS, seed)?;
    boundary_angle_deg(&r.model)
}

pub fn figure1_angles(m: usize, seed: u64) -> Result<Figure1Record, Error> {
    let data = figure1_distribution(m, seed)?;
    let gca = LossSpec::Gca {
        q: 0.0,
        margins: vec![1.0, 1.0],
    };
    Ok(Figure1Record {
        m,
        seed,
        balanced_deg: figure1_angle(&data, &Objective::Balanced, seed)?,
        gca_deg: figure1_angle(&data, &Objective::Surrogate(gca), seed)?,
        la_deg: figure1_angle(
            &data,
            &Objective::Surrogate(LossSpec::La { tau: 1.0 }),
            seed,
        )?,
    })
}

/// Runs one suite in memory.
pub fn run_suite(suite: Suite, budget: Option<usize>, seed: u64) -> Result<SuiteOutcome, Error> {
    let budget = budget.unwrap_or(suite.default_budget());
    let mut out = SuiteOutcome::new(suite);
    match suite {
        Suite::Bayes => {
            for r in bayes_trials(budget, seed)? {
                out.push(r.ok(), with_check("gla_minimizer", &r));
            }
        }
        Suite::Bounds => {
            for (k, family) in [BoundFamily::Gla, BoundFamily::Gca].into_iter().enumerate() {
                for r in fuzz_bound(family, budget, derive_seed(seed, k as u64))? {
                    out.push(r.report.holds(), with_check("conditional_bound", &r));
                }
            }
        }
        Suite::Margin => {
            for r in lamargin_grid()? {
                out.push(r.worst_slack >= -LAMARGIN_TOL, with_check("lamargin", &r));
            }
            let mut held = 0;
            for k in 0..budget {
                let r = margin_resample(k, seed)?;
                held += usize::from(r.holds);
                let mut line = with_check("margin_bound_resample", &r);
                line["resample"] = json!(k);
                out.lines.push(line);
            }
            let needed = (MARGIN_PASS_RATE * budget as f64).ceil() as usize;
            out.push(
                held >= needed,
                json!({ "check": "margin_bound", "held": held, "resamples": budget, "needed": needed }),
            );
        }
        Suite::Counterexample => {
            for (tau, w) in [2.0, 0.5].into_iter().zip(witnesses(&[2.0, 0.5])?) {
                match w {
                    Some(w) => {
                        out.push(w.la_label != w.balanced_label, with_check("la_witness", &w))
                    }
                    None => out.push(false, json!({ "check": "la_witness", "tau": tau })),
                }
            }
            let r = figure1_angles(budget, seed)?;
            let line = with_check("figure1", &r);
            out.push(
                r.balanced_deg <= FIGURE1_FLAT_DEG,
                json!({ "check": "figure1_balanced_flat", "deg": r.balanced_deg }),
            );
            out.push(
                r.gca_deg <= FIGURE1_FLAT_DEG,
                json!({ "check": "figure1_gca_flat", "deg": r.gca_deg }),
            );
            out.push(
                r.la_deg >= FIGURE1_TILT_DEG,
                json!({ "check": "figure1_la_tilted", "deg": r.la_deg }),
            );
            out.lines.push(line);
        }
    }
    Ok(out)
}

pub fn evidence_path(out: &Path, suite: Suite) -> PathBuf {
    out.join("verify").join(format!("{}.jsonl", suite.name()))
}

/// Runs a suite, writes `verify/<suite>.jsonl` under `out`, and turns any
/// failed check into a violation after the evidence is on disk.
pub fn cmd_verify(
    suite: Suite,
    budget: Option<usize>,
    seed: u64,
    out: &Path,
) -> Result<SuiteOutcome, CliError> {
    if budget == Some(0) {
        return Err(CliError::Config("--budget must be >= 1".into()));
    }
    let outcome = run_suite(suite, budget, seed)?;
    let path = evidence_path(out, suite);
    fs::create_dir_all(path.parent().expect("has parent"))?;
    let mut file = std::io::BufWriter::new(fs::File::create(&path)?);
    for line in &outcome.lines {
        writeln!(file, "{line}")?;
    }
    file.flush()?;
    if outcome.violations > 0 {
        return Err(CliError::Violation(format!(
            "{suite}: {} of {} checks failed (see {})",
            outcome.violations,
            outcome.checks,
            path.display()
        )));
    }
    Ok(outcome)
}
