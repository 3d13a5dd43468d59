//! Acceptance suite: one PASS/FAIL line per criterion. Criteria listed in
//! `KNOWN_FAILURES` are reported but do not fail the run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use balsurr::losses::{default_gca_margins, eval, eval_grad, ClassStats, LossSpec};
use balsurr::numerics::{finite_diff_gradient, max_relative_error, FD_STEP};
use balsurr::theory::{
    bal_regret, bayes_balanced_label, bayes_la_label, fuzz_bound, theorem1_witness, BoundFamily,
    ConditionalPoint, SLACK_TOL,
};
use balsurr_cli::config::ExperimentConfig;
use balsurr_cli::synth::cmd_synth;
use balsurr_cli::train::{cmd_train, runs_dir, TrainSummary};
use balsurr_cli::verify::{
    bayes_trials, figure1_angles, lamargin_grid, margin_resample, FIGURE1_FLAT_DEG,
    FIGURE1_TILT_DEG, LAMARGIN_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Criteria that fail at desk scale; the analysis lives in the project
/// notes and the README.
const KNOWN_FAILURES: [usize; 2] = [7, 10];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("balsurr-acceptance-{}-{tag}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

struct Input {
    scores: Vec<f64>,
    stats: ClassStats,
    label: usize,
}

fn random_input(rng: &mut ChaCha20Rng) -> Input {
    let n = rng.random_range(2..=6);
    let scores = (0..n)
        .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let counts: Vec<u64> = (0..n).map(|_| rng.random_range(1..500)).collect();
    Input {
        scores,
        stats: ClassStats::from_counts(&counts).unwrap(),
        label: rng.random_range(0..n),
    }
}

fn family_spec(family: &str, rng: &mut ChaCha20Rng, stats: &ClassStats) -> LossSpec {
    match family {
        "ce" => LossSpec::Ce,
        "wce" => LossSpec::Wce,
        "la" => LossSpec::La {
            tau: rng.random_range(0.5..2.0),
        },
        "equal" => LossSpec::Equal {
            p: rng.random_range(0.1..0.9),
            lambda: rng.random_range(0.01..0.99),
        },
        "cb" => LossSpec::Cb {
            gamma: rng.random_range(0.5..0.999),
        },
        "focal" => LossSpec::Focal {
            gamma: rng.random_range(0.0..3.0),
        },
        "ldam" => LossSpec::Ldam {
            c: rng.random_range(0.1..2.0),
        },
        "gce" => LossSpec::Gce {
            q: rng.random_range(0.0..0.9),
        },
        "gla" => LossSpec::Gla {
            q: rng.random_range(0.0..0.9),
        },
        "gca" => LossSpec::Gca {
            q: rng.random_range(0.0..0.9),
            margins: default_gca_margins(stats),
        },
        "csmax" => LossSpec::Csmax {
            rho: rng.random_range(0.5..2.0),
            psi_tau: rng.random_range(0.0..2.0),
        },
        _ => unreachable!(),
    }
}

/// Smallest gap between the two largest competitor scores; CSMAX is not
/// differentiable where they tie.
fn competitor_gap(scores: &[f64], label: usize) -> f64 {
    let mut others: Vec<f64> = scores
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label)
        .map(|(_, s)| *s)
        .collect();
    if others.len() < 2 {
        return f64::INFINITY;
    }
    others.sort_by(|a, b| b.total_cmp(a));
    others[0] - others[1]
}

fn gradients() -> Outcome {
    let families = [
        "ce", "wce", "la", "equal", "cb", "focal", "ldam", "gce", "gla", "gca", "csmax",
    ];
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut worst: (f64, &str) = (0.0, "");
    for family in families {
        let mut done = 0;
        while done < 100 {
            let inp = random_input(&mut rng);
            if family == "csmax" && competitor_gap(&inp.scores, inp.label) < 1e-3 {
                continue;
            }
            let spec = family_spec(family, &mut rng, &inp.stats);
            let n = inp.scores.len();
            let draws: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let d = Some(draws.as_slice());
            let g = eval_grad(&spec, &inp.scores, inp.label, &inp.stats, d).unwrap();
            let fd = finite_diff_gradient(
                |v| eval(&spec, v, inp.label, &inp.stats, d).unwrap(),
                &inp.scores,
                FD_STEP,
            )
            .unwrap();
            let err = max_relative_error(&g, &fd);
            if err > worst.0 {
                worst = (err, family);
            }
            done += 1;
        }
    }
    outcome(
        worst.0 < 1e-6,
        format!(
            "11 families x 100 inputs, worst relative error {:.3e} ({})",
            worst.0, worst.1
        ),
    )
}

fn identities() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let inp = random_input(&mut rng);
        let (s, y, st) = (&inp.scores, inp.label, &inp.stats);
        let gla = eval(&LossSpec::Gla { q: 0.0 }, s, y, st, None).unwrap();
        let la = eval(&LossSpec::La { tau: 1.0 }, s, y, st, None).unwrap();
        let ones = vec![1.0; s.len()];
        let gca = eval(
            &LossSpec::Gca {
                q: 0.0,
                margins: ones,
            },
            s,
            y,
            st,
            None,
        )
        .unwrap();
        let wce = eval(&LossSpec::Wce, s, y, st, None).unwrap();
        mismatches += usize::from(gla != la) + usize::from(gca != wce);
    }
    outcome(
        mismatches == 0,
        format!("2 x 1000 inputs, {mismatches} inexact"),
    )
}

/// Conditional balanced error of always predicting `h`.
fn balanced_conditional_error(point: &ConditionalPoint, h: usize) -> f64 {
    (0..point.n_classes())
        .filter(|&y| y != h)
        .map(|y| point.cond()[y] / point.priors()[y])
        .sum()
}

fn regret_oracle() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for t in 0..1000 {
        let n = 2 + t % 5;
        let mass = |rng: &mut ChaCha20Rng| -> Vec<f64> {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let z: f64 = v.iter().sum();
            v.iter().map(|x| x / z).collect()
        };
        let cond = mass(&mut rng);
        let priors = mass(&mut rng);
        let mut reachable: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
        if reachable.is_empty() {
            reachable.push(rng.random_range(0..n));
        }
        let point = ConditionalPoint::with_reachable(cond, priors, reachable.clone()).unwrap();
        let best = reachable
            .iter()
            .map(|&h| balanced_conditional_error(&point, h))
            .fold(f64::INFINITY, f64::min);
        for &h in &reachable {
            let brute = balanced_conditional_error(&point, h) - best;
            worst = worst.max((bal_regret(&point, h).unwrap() - brute).abs());
            checked += 1;
        }
    }
    outcome(
        worst <= 1e-12,
        format!("1000 points, {checked} labels, worst gap {worst:.3e}"),
    )
}

fn gla_bayes() -> Outcome {
    let records = bayes_trials(500, 4).unwrap();
    let label_misses = records
        .iter()
        .filter(|r| r.bayes_label != r.minimizer_label)
        .count();
    let worst = records
        .iter()
        .map(|r| (r.value - r.closed_form).abs())
        .fold(0.0, f64::max);
    outcome(
        records.iter().all(|r| r.ok()),
        format!(
            "{} minimizations, {label_misses} label misses, worst value gap {worst:.3e}",
            records.len()
        ),
    )
}

fn la_witness() -> Outcome {
    // frozen fixtures: (tau, p(y|x), p(y), logit-adjusted label, balanced label)
    let fixtures = [
        (2.0, [0.05, 0.95], [0.1, 0.9], 0, 1),
        (0.5, [0.1, 0.9], [0.05, 0.95], 1, 0),
    ];
    let mut pass = true;
    for (tau, cond, priors, la, bal) in fixtures {
        let point = ConditionalPoint::new(cond.to_vec(), priors.to_vec()).unwrap();
        pass &= bayes_la_label(&point, tau).unwrap() == la;
        pass &= bayes_balanced_label(&point) == bal;
        pass &= la != bal;
        pass &= theorem1_witness(tau).unwrap().as_ref() == Some(&point);
    }
    outcome(pass, "tau = 2 and tau = 0.5 fixtures".into())
}

fn bound_fuzz() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (k, family) in [BoundFamily::Gla, BoundFamily::Gca].into_iter().enumerate() {
        let records = fuzz_bound(family, 10_000, 60 + k as u64).unwrap();
        let worst = records
            .iter()
            .map(|r| r.report.slack)
            .fold(f64::INFINITY, f64::min);
        pass &= worst >= -SLACK_TOL && records.len() == 10_000;
        parts.push(format!("{family:?} worst slack {worst:.3e}"));
    }
    outcome(
        pass,
        format!("10000 trials per family; {}", parts.join(", ")),
    )
}

fn figure1() -> Outcome {
    let r = figure1_angles(50_000, 2024).unwrap();
    let pass = r.balanced_deg <= FIGURE1_FLAT_DEG
        && r.gca_deg <= FIGURE1_FLAT_DEG
        && r.la_deg >= FIGURE1_TILT_DEG;
    outcome(
        pass,
        format!(
            "m = 50000, seed 2024: balanced {:.3} deg, GCA {:.3} deg (need <= {FIGURE1_FLAT_DEG}), LA {:.3} deg (need >= {FIGURE1_TILT_DEG})",
            r.balanced_deg, r.gca_deg, r.la_deg
        ),
    )
}

fn lamargin() -> Outcome {
    let worst = lamargin_grid()
        .unwrap()
        .iter()
        .map(|r| r.worst_slack)
        .fold(f64::INFINITY, f64::min);
    outcome(worst >= -LAMARGIN_TOL, format!("worst slack {worst:.3e}"))
}

fn margin_bound() -> Outcome {
    let held = (0..100)
        .filter(|&k| margin_resample(k, 9).unwrap().holds)
        .count();
    outcome(held >= 85, format!("bound held in {held}/100 resamples"))
}

const TABLE_CONFIG: &str = r#"
repeats = 5

[dataset]
profile = "PROFILE"
n = 10
d = 20
m_max = 500
imb_ratio = 100.0
test_m_max = 1000
seed = 0

[[loss]]
family = "ce"

[[loss]]
family = "la"
tau = 1.0

[[loss]]
family = "gla"
q = "default"

[[loss]]
family = "gca"
q = "default"

[train]
preset = "desk"
model = "linear"
"#;

fn best_mean(s: &TrainSummary, entry: usize) -> f64 {
    let p = &s.points[s.best[entry].expect("every entry has a usable point")];
    p.test_mean.unwrap()
}

fn table_analogue() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for profile in ["longtail", "step"] {
        let cfg = ExperimentConfig::parse(&TABLE_CONFIG.replace("PROFILE", profile)).unwrap();
        let dir = scratch(profile);
        cmd_synth(&cfg.dataset, &dir).unwrap();
        let s = cmd_train(&cfg, &dir, jobs()).unwrap();
        let [ce, la, gla, gca] = [0, 1, 2, 3].map(|e| best_mean(&s, e));
        let slack = 0.02 * cfg.dataset.n as f64;
        let ok_gla = gla < ce && gla < la + slack;
        let ok_gca = gca < ce && gca < la + slack;
        pass &= ok_gla && ok_gca;
        parts.push(format!(
            "{profile}: CE {ce:.4}, LA {la:.4}, GLA {gla:.4} [{}], GCA {gca:.4} [{}]",
            if ok_gla { "ok" } else { "fails" },
            if ok_gca { "ok" } else { "fails" }
        ));
        let _ = fs::remove_dir_all(&dir);
    }
    outcome(pass, parts.join("; "))
}

const SMALL_CONFIG: &str = r#"
repeats = 2

[dataset]
profile = "step"
n = 3
d = 4
m_max = 80
imb_ratio = 8.0

[[loss]]
family = "gla"
q = [0.0, 0.5]

[[loss]]
family = "equal"
p = 0.5
lambda = 0.2

[train]
epochs = 5
batch_size = 16
"#;

fn metrics_files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "metrics.json") {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig::parse(SMALL_CONFIG).unwrap();
    let a = scratch("det-a");
    let b = scratch("det-b");
    for dir in [&a, &b] {
        cmd_synth(&cfg.dataset, dir).unwrap();
    }
    cmd_train(&cfg, &a, 1).unwrap();
    cmd_train(&cfg, &b, jobs().max(2)).unwrap();
    let first = metrics_files(&runs_dir(&a));
    cmd_train(&cfg, &a, 1).unwrap();
    let rerun = metrics_files(&runs_dir(&a));
    let other = metrics_files(&runs_dir(&b));
    let pass = first.len() == 6 && first == rerun && first == other;
    for d in [a, b] {
        let _ = fs::remove_dir_all(d);
    }
    outcome(
        pass,
        format!(
            "{} metrics.json files compared across reruns and job counts",
            first.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "gradient correctness", gradients),
        (2, "identity reductions", identities),
        (3, "conditional regret oracle", regret_oracle),
        (4, "GLA Bayes consistency", gla_bayes),
        (5, "LA inconsistency witness", la_witness),
        (6, "conditional bound fuzzing", bound_fuzz),
        (7, "bounded linear counterexample", figure1),
        (8, "GLA margin inequality grid", lamargin),
        (9, "margin bound resamples", margin_bound),
        (10, "desk-scale comparison table", table_analogue),
        (11, "training determinism", determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        let known = if !o.pass && KNOWN_FAILURES.contains(&id) {
            " (known)"
        } else {
            ""
        };
        println!(
            "{verdict} criterion {id:>2} {name}{known}: {} [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass && !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
