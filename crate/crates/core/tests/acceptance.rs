//! Acceptance suite. Prints one PASS/FAIL line per criterion and a tally.
//!
//! Failing criteria are reported but do not fail the process unless
//! `QLP_ACCEPTANCE_STRICT=1` is set.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use qlp_core::algorithms::{RunOutcome, DEFAULT_ROUNDOFF_ULPS};
use qlp_core::basis::{greedy_action, BasisFamily, BasisKind, QBlocks, QParams};
use qlp_core::experiment::{preset, run_experiment, ExperimentResult, RolloutReport, DEFAULT_SEED, PRESET_NAMES};
use qlp_core::lp::{solve_lp, LpStatus, SolverSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_instance, reference, Construction, Reference};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

const QUAD_P: [f64; 25] = [
    1.1154, -0.0101, 0.0288, 0.0097, 0.6390, //
    -0.0101, 1.1195, 0.0667, 0.0209, 0.0617, //
    0.0288, 0.0667, 0.0023, 0.0045, -0.0305, //
    0.0097, 0.0209, 0.0045, -4e-4, -0.2880, //
    0.6390, 0.0617, -0.0305, -0.2880, 1.0157,
];
const QUAD_GAIN: [f64; 4] = [-0.6292, -0.0608, 0.0301, 0.2836];
const NONQUAD_P: [f64; 25] = [
    0.6435, 0.0682, 0.0259, -0.0131, 0.0329, //
    0.0682, 0.6310, 0.1173, 0.0190, 0.1450, //
    0.0259, 0.1173, 0.0146, 0.0044, 0.0451, //
    -0.0131, 0.0190, 0.0044, 0.0034, 0.0051, //
    0.0329, 0.1450, 0.0451, 0.0051, 0.2107,
];
const NONQUAD_GAIN: [f64; 4] = [-0.1561, -0.6881, -0.2140, -0.0242];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Runs = BTreeMap<(String, u64), (ExperimentResult, f64)>;

fn outcome_str(o: &RunOutcome) -> String {
    match o {
        RunOutcome::Converged => "converged".into(),
        RunOutcome::MaxIterations => "max_iters".into(),
        RunOutcome::Failed { stage, message } => format!("failed at {stage} ({message})"),
    }
}

fn run_all(jobs: &[(String, u64)]) -> Runs {
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(name, seed)| {
                scope.spawn(move || {
                    let cfg = preset(name).unwrap().with_seed(*seed);
                    let started = Instant::now();
                    let r = run_experiment(&cfg).unwrap();
                    ((name.clone(), *seed), (r, started.elapsed().as_secs_f64()))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn get<'a>(runs: &'a Runs, name: &str, seed: u64) -> &'a ExperimentResult {
    &runs[&(name.to_string(), seed)].0
}

fn lti_oracle_recovery(runs: &Runs) -> Verdict {
    let (r, secs) = &runs[&("lti4d-pi".to_string(), DEFAULT_SEED)];
    let s = &r.summary;
    let per_seed: Vec<String> = SEEDS
        .iter()
        .map(|&seed| {
            let s = &get(runs, "lti4d-pi", seed).summary;
            format!("seed {seed}: {} after {}", outcome_str(&s.outcome).split(' ').next().unwrap(), s.iterations)
        })
        .collect();
    let errors = s.oracle.as_ref().map(|o| o.error);
    let pass = s.converged
        && (7..=9).contains(&s.iterations)
        && errors.is_some_and(|e| e.p <= 1e-6 && e.lin <= 1e-6 && e.s <= 1e-6)
        && *secs < 60.0;
    verdict(
        pass,
        format!(
            "seed {DEFAULT_SEED}: {} after {} LPs, oracle errors {}, {:.1}s [{}]",
            outcome_str(&s.outcome),
            s.iterations,
            errors.map_or("n/a".into(), |e| format!("P {:.2e} p {:.2e} s {:.2e}", e.p, e.lin, e.s)),
            secs,
            per_seed.join("; ")
        ),
    )
}

fn vi_warm_start_ordering(runs: &Runs) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for &seed in &SEEDS {
        let a = &get(runs, "lti4d-vi-a", seed).summary;
        let b = &get(runs, "lti4d-vi-b", seed).summary;
        let in_band = |n: usize, reference: f64| (n as f64) >= 0.75 * reference && (n as f64) <= 1.25 * reference;
        let ok = a.converged && b.converged && b.iterations < a.iterations && in_band(a.iterations, 71.0) && in_band(b.iterations, 35.0);
        pass &= ok;
        parts.push(format!("seed {seed}: A {} B {}", a.iterations, b.iterations));
    }
    verdict(pass, format!("{} (need B < A, A in [53.25, 88.75], B in [26.25, 43.75])", parts.join("; ")))
}

fn max_entry_gap(a: &[Vec<f64>], b: &[f64]) -> f64 {
    a.iter().flatten().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn nonlinear_fixed_point(runs: &Runs) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (prefix, p_ref, gain_ref) in [("nl2d-quad", &QUAD_P, &QUAD_GAIN), ("nl2d-nonquad", &NONQUAD_P, &NONQUAD_GAIN)] {
        let mut alphas = Vec::new();
        for suffix in ["pi", "vi-a", "vi-b"] {
            let name = format!("{prefix}-{suffix}");
            let s = &get(runs, &name, DEFAULT_SEED).summary;
            let Some(learned) = s.learned.as_ref().filter(|_| s.converged) else {
                pass = false;
                parts.push(format!("{name}: {}", outcome_str(&s.outcome)));
                continue;
            };
            let p_gap = max_entry_gap(&learned.p, p_ref);
            let g_gap = learned
                .gain
                .as_ref()
                .map_or(f64::INFINITY, |g| max_entry_gap(g, gain_ref));
            pass &= p_gap <= 5e-2 && g_gap <= 5e-3;
            parts.push(format!("{name}: |P - P_ref| {p_gap:.3e}, |gain - gain_ref| {g_gap:.3e}"));
            alphas.push(DVector::from_vec(learned.alpha.clone()));
        }
        if alphas.len() == 3 {
            let spread = alphas.iter().map(|a| (a - &alphas[0]).amax()).fold(0.0, f64::max);
            pass &= spread <= 1e-6;
            parts.push(format!("{prefix} PI/VI spread {spread:.3e}"));
        } else {
            pass = false;
        }
    }
    verdict(pass, parts.join("; "))
}

fn regulation(runs: &Runs) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for prefix in ["nl2d-quad", "nl2d-nonquad"] {
        for suffix in ["pi", "vi-a", "vi-b"] {
            let name = format!("{prefix}-{suffix}");
            let s = &get(runs, &name, DEFAULT_SEED).summary;
            if !s.converged {
                pass = false;
                parts.push(format!("{name}: not converged ({})", outcome_str(&s.outcome)));
                continue;
            }
            match &s.rollout {
                Some(RolloutReport::Ok { states, x0, .. }) => {
                    let hit = states.iter().take(61).position(|x| x.iter().all(|v| v.abs() <= 1e-3));
                    pass &= hit.is_some();
                    parts.push(format!("{name}: from {x0:?} reaches 1e-3 at step {hit:?}"));
                }
                Some(RolloutReport::Failed { message }) => {
                    pass = false;
                    parts.push(format!("{name}: rollout failed ({message})"));
                }
                None => {
                    pass = false;
                    parts.push(format!("{name}: no rollout"));
                }
            }
        }
    }
    verdict(pass, parts.join("; "))
}

fn vi_monotonicity(runs: &Runs) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["nl2d-quad-vi-a", "nl2d-quad-vi-b", "nl2d-nonquad-vi-a", "nl2d-nonquad-vi-b"] {
        let r = get(runs, name, DEFAULT_SEED);
        let records = &r.trace.records;
        if records.len() < 2 || !r.summary.converged {
            pass = false;
            parts.push(format!("{name}: {} LPs, {}", records.len(), outcome_str(&r.summary.outcome)));
            continue;
        }
        // Q^0 = 0, so the first iterate must be nonnegative on the buffer too.
        let mut worst = -records[0].q_values.min();
        for w in records.windows(2) {
            worst = worst.max((&w[0].q_values - &w[1].q_values).max());
        }
        pass &= worst <= 1e-8;
        parts.push(format!("{name}: largest decrease {worst:.3e} over {} LPs", records.len()));
    }
    verdict(pass, parts.join("; "))
}

fn bellman_certificate(runs: &Runs) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["lti4d-pi", "nl2d-quad-pi", "nl2d-nonquad-pi"] {
        let s = &get(runs, name, DEFAULT_SEED).summary;
        match (s.converged, s.bellman_residual) {
            (true, Some(res)) => {
                pass &= res <= 1e-6;
                parts.push(format!("{name}: residual {res:.3e}"));
            }
            _ => {
                pass = false;
                let res = s.bellman_residual.map_or("n/a".into(), |r| format!("{r:.3e}"));
                parts.push(format!("{name}: {} (residual at last iterate {res})", outcome_str(&s.outcome)));
            }
        }
    }
    verdict(pass, parts.join("; "))
}

fn lp_conformance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let kinds = [Construction::Bounded, Construction::Unbounded, Construction::Infeasible];
    let mut wrong = Vec::new();
    let mut worst_rel: f64 = 0.0;
    for case in 0..100 {
        let kind = kinds[case % 3];
        let k = rng.gen_range(1..=30);
        let n = rng.gen_range(k.max(2)..=1000);
        let p = random_instance(&mut rng, kind, k, n);
        let s = solve_lp(&p, &SolverSettings::default());
        let expected = match kind {
            Construction::Bounded => LpStatus::Optimal,
            Construction::Unbounded => LpStatus::Unbounded,
            Construction::Infeasible => LpStatus::Infeasible,
        };
        if s.status != expected {
            wrong.push(format!("case {case}: {:?} expected {expected:?}", s.status));
            continue;
        }
        if kind == Construction::Bounded {
            match reference(&p) {
                Reference::Optimal(v) => {
                    let rel = (s.objective_value - v).abs() / v.abs().max(1.0);
                    worst_rel = worst_rel.max(rel);
                    if rel > 1e-7 {
                        wrong.push(format!("case {case}: objective {} vs reference {v}", s.objective_value));
                    }
                }
                _ => wrong.push(format!("case {case}: reference does not find an optimum")),
            }
        }
    }
    verdict(
        wrong.is_empty(),
        format!("100 instances, {} mismatches, worst relative objective gap {worst_rel:.2e} {}", wrong.len(), wrong.join("; ")),
    )
}

/// Golden-section search on `[lo, hi]` for a convex scalar function.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

fn random_params<R: Rng>(rng: &mut R, family: &BasisFamily) -> QParams {
    let d = family.lifted_dim();
    let l = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let mut p = &l * l.transpose() + DMatrix::identity(d, d) * 0.1;
    for i in 0..d - 1 {
        p[(i, i)] -= rng.gen_range(0.0..2.0);
    }
    let affine = family.has_affine_terms();
    let blocks = QBlocks {
        p,
        lin: if affine { DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0)) } else { DVector::zeros(d) },
        s: if affine { rng.gen_range(-1.0..1.0) } else { 0.0 },
        input_dim: family.input_dim(),
    };
    QParams::from_blocks(family.clone(), &blocks).unwrap()
}

fn greedy_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let families = [
        BasisFamily::new(BasisKind::ExtendedQuadratic, 4, 1).unwrap(),
        BasisFamily::new(BasisKind::Quartic, 2, 1).unwrap(),
        BasisFamily::new(BasisKind::PureQuadratic, 3, 1).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let family = &families[case % families.len()];
        let params = random_params(&mut rng, family);
        let x: Vec<f64> = (0..family.state_dim()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let closed = greedy_action(&params, &x).unwrap()[0];
        let numeric = golden_min(|u| params.eval(&x, &[u]).unwrap(), -1e4, 1e4);
        worst = worst.max((closed - numeric).abs() / closed.abs().max(1.0));
    }
    verdict(worst <= 1e-6, format!("200 pairs over 3 families, worst gap {worst:.2e}"))
}

fn puu_definiteness(runs: &Runs) -> Verdict {
    let mut violations = Vec::new();
    let mut incomplete = Vec::new();
    let mut smallest = f64::INFINITY;
    for ((name, seed), (r, _)) in runs {
        for rec in &r.trace.records {
            smallest = smallest.min(rec.puu_min_eig);
            if !(rec.puu_min_eig > 0.0) {
                violations.push(format!("{name}/{seed} LP {}", rec.iteration));
            }
        }
        if let RunOutcome::Failed { stage, .. } = &r.summary.outcome {
            incomplete.push(format!("{name}/{seed} ({stage} after {} LPs)", r.trace.records.len()));
        }
    }
    verdict(
        violations.is_empty() && incomplete.is_empty(),
        format!(
            "{} runs, smallest eigenvalue seen {smallest:.3e}, {} violations {}, {} runs stopped early: {}",
            runs.len(),
            violations.len(),
            violations.join(", "),
            incomplete.len(),
            incomplete.join(", ")
        ),
    )
}

fn main() {
    assert_eq!(DEFAULT_ROUNDOFF_ULPS, 256.0);
    let started = Instant::now();
    let jobs: Vec<(String, u64)> = PRESET_NAMES
        .iter()
        .flat_map(|name| SEEDS.iter().map(move |&s| (name.to_string(), s)))
        .collect();
    let runs = run_all(&jobs);

    let criteria: Vec<(&str, Verdict)> = vec![
        ("LTI oracle recovery", lti_oracle_recovery(&runs)),
        ("VI warm-start ordering", vi_warm_start_ordering(&runs)),
        ("nonlinear fixed-point match", nonlinear_fixed_point(&runs)),
        ("regulation", regulation(&runs)),
        ("VI monotonicity", vi_monotonicity(&runs)),
        ("Bellman-residual certificate", bellman_certificate(&runs)),
        ("LP solver conformance", lp_conformance()),
        ("greedy-policy oracle equivalence", greedy_equivalence()),
        ("P_uu positive definiteness", puu_definiteness(&runs)),
    ];
    let mut passed = 0;
    for (i, (name, v)) in criteria.iter().enumerate() {
        passed += v.pass as usize;
        println!("criterion {} {} {name}: {}", i + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!(
        "acceptance: {passed}/{} criteria passed ({:.1}s)",
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    let strict = std::env::var("QLP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < criteria.len() {
        std::process::exit(1);
    }
}
