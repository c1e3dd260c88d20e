//! Acceptance suite: one PASS/FAIL line per criterion, each with its
//! measured values and runtime. Exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use weaklp::exec::with_workers;
use weaklp::experiment::{run_experiment, ExperimentConfig, ExperimentOutput, Status};
use weaklp::quadrature::{k_closed_form, k_constant};

fn run(json: &str) -> ExperimentOutput {
    let cfg = ExperimentConfig::from_json(json).unwrap_or_else(|e| panic!("bad config {json}: {e}"));
    run_experiment(&cfg).unwrap_or_else(|e| panic!("experiment failed {json}: {e}"))
}

/// Whether every verdict whose key starts with `prefix` passed, plus a
/// short list of the failing ones.
fn verdicts_pass(outs: &[&ExperimentOutput], prefix: &str) -> (bool, usize, Vec<String>) {
    let mut count = 0;
    let mut bad = Vec::new();
    for out in outs {
        for v in out.verdicts.iter().filter(|v| v.key.starts_with(prefix)) {
            count += 1;
            if v.status != Status::Pass {
                bad.push(format!("{} {:?} value={:.4} tol={}", v.key, v.status, v.value, v.tolerance));
            }
        }
    }
    (bad.is_empty() && count > 0, count, bad)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn from_verdicts(outs: &[&ExperimentOutput], prefixes: &[&str]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for p in prefixes {
        let (ok, n, bad) = verdicts_pass(outs, p);
        pass &= ok;
        parts.push(format!("{p} {}/{n}", n - bad.len()));
        parts.extend(bad.into_iter().take(4));
    }
    outcome(pass, parts.join("; "))
}

fn constants() -> Outcome {
    let mut worst = 0.0f64;
    for dim in 1..=4 {
        for p in [1.0, 1.25, 1.5, 2.0, 3.0, 4.0] {
            match k_constant(p, dim) {
                Ok(c) => worst = worst.max((c.k - c.k_quadrature).abs() / c.k),
                Err(_) => worst = f64::INFINITY,
            }
        }
    }
    let exact = [
        (k_closed_form(1.5, 1), 2.0),
        (k_closed_form(1.0, 2), 4.0),
        (k_closed_form(2.0, 3), 4.0 * std::f64::consts::PI / 3.0),
    ];
    let exact_gap = exact.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        worst <= 1e-6 && exact_gap <= 1e-10,
        format!("worst relative gap {worst:.2e} (tol 1e-6); reference values within {exact_gap:.1e} (tol 1e-10)"),
    )
}

fn limit() -> Outcome {
    let one = run(r#"{"kind": "limit", "fields": [{"kind": "bump", "center": [0], "radius": 1}], "params": {"p": [1, 2]}}"#);
    let two = run(
        r#"{"kind": "limit", "fields": [{"kind": "bump", "center": [0, 0], "radius": 1}], "params": {"p": [1], "lambda_points": 24},
            "budget": {"estimator": "mc", "samples": 200000}, "seed": 17}"#,
    );
    let plateau_p1 = one.report["results"][0]["plateau"].as_f64().unwrap_or(f64::NAN);
    let fixture = (plateau_p1 / 1.471518 - 1.0).abs();
    let mut o = from_verdicts(&[&one, &two], &["limit:plateau_matches_gradient_norm"]);
    o.pass &= fixture <= 0.05;
    o.detail = format!("N=1 p=1 plateau {plateau_p1:.6} vs 1.471518 (rel {fixture:.1e}); {}", o.detail);
    o
}

fn two_sided() -> Outcome {
    let outs: Vec<ExperimentOutput> = (1..=3)
        .map(|d| {
            run(&format!(
                r#"{{"kind": "quasinorm", "catalogue_dim": {d}, "seed": {d}, "params": {{"p": [1, 1.5, 2], "lambda_points": 24}},
                    "budget": {{"refine": true}}}}"#
            ))
        })
        .collect();
    let refs: Vec<&ExperimentOutput> = outs.iter().collect();
    from_verdicts(&refs, &["quasinorm:lower_bound", "quasinorm:upper_ratio_stable"])
}

fn covering() -> Outcome {
    let out = run(r#"{"kind": "covering", "seed": 4, "params": {"gamma": [0.5, 1, 2]}, "budget": {"trials": 100, "cells": 128}}"#);
    from_verdicts(&[&out], &["covering:vitali_disjoint", "covering:five_fold_cover", "covering:energy_bound"])
}

fn rotation() -> Outcome {
    let out = run(r#"{"kind": "rotation", "catalogue_dim": 2, "seed": 5, "budget": {"refine": true, "samples": 200000}}"#);
    from_verdicts(&[&out], &["rotation:matches_pair_mc", "rotation:below_theory", "rotation:c_emp_stable"])
}

fn containment() -> Outcome {
    let one = run(r#"{"kind": "crosscheck", "catalogue_dim": 1, "seed": 6, "params": {"p": [1, 2]}, "budget": {"pairs": 10000}}"#);
    let two = run(
        r#"{"kind": "crosscheck", "catalogue_dim": 2, "seed": 7, "params": {"p": [1, 2], "lambda_multiples": [10, 100]},
            "budget": {"pairs": 10000}}"#,
    );
    from_verdicts(&[&one, &two], &["crosscheck:holder_containment", "crosscheck:sandwich"])
}

fn seminorm_ladders() -> ExperimentOutput {
    run(
        r#"{"kind": "gagliardo", "fields": [{"kind": "bump", "center": [0], "radius": 1}],
            "params": {"p": [1, 2], "deltas": [0.01, 0.001, 0.0001, 0.00001], "s_values": [0.9, 0.95, 0.99]}}"#,
    )
}

fn divergence(ladders: &ExperimentOutput) -> Outcome {
    let fail = run(r#"{"kind": "failure", "params": {"p": [1.5, 2], "epsilons": [0.2, 0.1, 0.05, 0.025]}}"#);
    from_verdicts(
        &[ladders, &fail],
        &["seminorm:divergence_slope", "failure:strong_increasing", "failure:log_increments", "failure:weak_bounded"],
    )
}

fn bbm(ladders: &ExperimentOutput) -> Outcome {
    from_verdicts(&[ladders], &["seminorm:bbm_plateau", "seminorm:probe_bbm_consistent"])
}

fn maximal() -> Outcome {
    let one = run(r#"{"kind": "maximal", "catalogue_dim": 1, "seed": 8, "params": {"p": [2]}, "budget": {"cells": 128, "pairs": 5000}}"#);
    let two = run(r#"{"kind": "maximal", "catalogue_dim": 2, "seed": 9, "params": {"p": [2]}, "budget": {"cells": 48, "pairs": 5000}}"#);
    from_verdicts(
        &[&one, &two],
        &[
            "maximal:bound_dominates",
            "maximal:lusin_refinement_stable",
            "maximal:lusin_amplitude_invariant",
            "maximal:zero_denominator_consistent",
        ],
    )
}

fn corollaries() -> Outcome {
    let configs = [
        r#"{"kind": "corollary", "catalogue_dim": 1, "params": {"check": "weak_gradient_1d", "p": [1.5, 2], "ladder": true}}"#,
        r#"{"kind": "corollary", "catalogue_dim": 1, "params": {"check": "weak_interpolation", "p": [1.5], "ladder": true}}"#,
        r#"{"kind": "corollary", "catalogue_dim": 2, "seed": 10, "params": {"check": "weak_interpolation", "p": [1.5]}, "budget": {"samples": 40000}}"#,
        r#"{"kind": "corollary", "catalogue_dim": 1, "params": {"check": "weak_fractional_gn", "theta": 0.5, "p1": 4, "s1": 0.5}}"#,
        r#"{"kind": "corollary", "catalogue_dim": 2, "seed": 11, "params": {"check": "weak_fractional_gn", "theta": 0.5, "p1": 4, "s1": 0.5}, "budget": {"samples": 40000}}"#,
        r#"{"kind": "corollary", "catalogue_dim": 1, "params": {"check": "strong_gn", "theta": 0.5, "p1": 2}}"#,
        r#"{"kind": "corollary", "catalogue_dim": 2, "seed": 27, "params": {"check": "strong_gn", "theta": 0.5, "p1": 2}}"#,
        r#"{"kind": "corollary", "catalogue_dim": 2, "seed": 28, "params": {"check": "sobolev_embedding", "s": 0.5}}"#,
    ];
    let outs: Vec<ExperimentOutput> = configs.iter().map(|c| run(c)).collect();
    let refs: Vec<&ExperimentOutput> = outs.iter().collect();
    let mut o = from_verdicts(&refs, &["corollary:"]);
    let embedding_p = outs[7].report["results"][0]["report"]["params"]["p"].as_f64();
    let exact = embedding_p == Some(4.0 / 3.0);
    o.pass &= exact;
    o.detail = format!("embedding exponent {embedding_p:?} (4/3 exactly: {exact}); {}", o.detail);
    o
}

fn determinism() -> Outcome {
    let configs = [
        r#"{"kind": "limit", "catalogue_dim": 2, "seed": 12, "params": {"p": [1, 2], "lambda_points": 6}, "budget": {"samples": 20000}}"#,
        r#"{"kind": "covering", "seed": 13, "budget": {"trials": 5, "cells": 64}}"#,
        r#"{"kind": "rotation", "catalogue_dim": 2, "seed": 14, "fields": [{"kind": "bump", "center": [0, 0], "radius": 1}],
            "budget": {"samples": 20000, "rotation": {"cells": 64, "cell_order": 2, "lines": 16, "sphere_order": 8}}}"#,
        r#"{"kind": "crosscheck", "catalogue_dim": 1, "seed": 15, "params": {"p": [2], "lambda_multiples": [10], "margins": [0.5]}, "budget": {"pairs": 500}}"#,
        r#"{"kind": "quasinorm", "catalogue_dim": 1, "params": {"p": [1.5], "lambda_points": 8}}"#,
    ];
    let mut mismatches = Vec::new();
    for c in configs {
        let cfg = ExperimentConfig::from_json(c).expect("valid config");
        let bytes = |workers: usize| {
            let out = with_workers(workers, || run_experiment(&cfg)).expect("experiment runs");
            let mut all = out.report_json();
            for (name, body) in &out.tables {
                all.push_str(name);
                all.push_str(body);
            }
            all
        };
        let (a, b) = (bytes(1), bytes(4));
        if a != b {
            mismatches.push(cfg.kind);
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("{} experiments compared at 1 and 4 workers; mismatches: {mismatches:?}", configs.len()),
    )
}

fn main() {
    let mut lines = Vec::new();
    let mut all = true;
    let mut record = |n: usize, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(&mut *f));
        let took = t.elapsed();
        let (mut pass, mut detail) = match res {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, e.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())),
        };
        if let Some(l) = limit {
            if took > l {
                pass = false;
                detail = format!("runtime {took:.1?} exceeds {l:?}; {detail}");
            }
        }
        let line = format!("criterion {n:>2} {name}: {} [{took:.1?}] {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        lines.push(line);
        all &= pass;
    };
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    record(1, "constants", Some(Duration::from_secs(1)), &mut constants);
    record(2, "limit", min(5), &mut limit);
    record(3, "two-sided bound", min(10), &mut two_sided);
    record(4, "covering", min(2), &mut covering);
    record(5, "rotations", min(5), &mut rotation);
    record(6, "containment and sandwich", min(3), &mut containment);
    let t = Instant::now();
    let ladders = catch_unwind(seminorm_ladders).ok();
    let ladder_time = t.elapsed();
    record(7, "divergence probes", min(5).map(|l| l.saturating_sub(ladder_time)), &mut || match &ladders {
        Some(l) => divergence(l),
        None => outcome(false, "seminorm ladders failed"),
    });
    record(8, "BBM cross-check", None, &mut || match &ladders {
        Some(l) => bbm(l),
        None => outcome(false, "seminorm ladders failed"),
    });
    record(9, "maximal route", None, &mut maximal);
    record(10, "corollaries and embeddings", None, &mut corollaries);
    record(11, "determinism", None, &mut determinism);
    println!("seminorm ladders (shared by 7 and 8) took {ladder_time:.1?}");
    if !all {
        eprintln!("acceptance failures:\n{}", lines.join("\n"));
        std::process::exit(1);
    }
    println!("all criteria passed");
}
