//! Config-driven experiments: each kind runs one family of checks and
//! returns CSV tables, a JSON report with verdicts and per-stage timings.
//!
//! Outputs depend only on the config (including its seed), never on the
//! worker count; timings are kept apart from the report for that reason.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corollaries::{
    homogeneity_ratios, reports_csv, sobolev_embedding, strong_gn, strong_norm_failure_probe, weak_fractional_gn,
    weak_gradient_bound_1d, weak_interpolation_bound, within_factor_of_median, CorollaryBudget, CorollaryReport,
    GNParams, EPSILON_LADDER,
};
use crate::covering::{
    admissible_intervals, check_vitali, cover_csv, holder_containment_check, pair_measure_direct, rotation_measure,
    verify_5j_cover, vitali_select, weighted_energy, Density, PiecewiseConstantField, RotationBudget,
};
use crate::error::{Error, Result};
use crate::fields::{catalogue, gradient_lp_norm, make_mollified_indicator, FieldSpec, ScalarField};
use crate::levelset::{
    distribution_profile, io_err, lambda_grid, tail_limit, verify_sandwich, weak_quasinorm,
    Estimator, LevelSetQuery, PolarBudget, ScanParams, PLATEAU_TOL,
};
use crate::maximal::{lusin_lipschitz_check, maximal_route_bound};
use crate::quadrature::{k_constant, K_AGREEMENT};
use crate::rng::RandomStream;
use crate::seminorms::{bbm_factor, diagonal_divergence_probe, gagliardo, SeminormBudget, SeminormQuery};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Constants,
    Limit,
    Quasinorm,
    Gagliardo,
    Covering,
    Rotation,
    Maximal,
    Corollary,
    Failure,
    Crosscheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorollaryCheck {
    #[serde(rename = "weak_gradient_1d")]
    WeakGradient1d,
    WeakInterpolation,
    WeakFractionalGn,
    StrongGn,
    SobolevEmbedding,
}

impl CorollaryCheck {
    fn key(self) -> &'static str {
        match self {
            CorollaryCheck::WeakGradient1d => "weak_gradient_1d",
            CorollaryCheck::WeakInterpolation => "weak_interpolation",
            CorollaryCheck::WeakFractionalGn => "weak_fractional_gn",
            CorollaryCheck::StrongGn => "strong_gn",
            CorollaryCheck::SobolevEmbedding => "sobolev_embedding",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub p: Vec<f64>,
    pub s: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Vec<f64>,
    pub theta: f64,
    pub p1: f64,
    pub s1: f64,
    pub check: CorollaryCheck,
    /// Also run the corollary check on mollified indicators of the
    /// centered unit box along `epsilons`.
    pub ladder: bool,
    pub lambda_grid: Option<GridSpec>,
    /// Points of the default grid on `[L/10, 1000 L]`.
    pub lambda_points: usize,
    /// Lambda values as multiples of the Lipschitz bound (sandwich).
    pub lambda_multiples: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Inner cut-offs for the diagonal divergence probe.
    pub deltas: Vec<f64>,
    /// Margins for the sandwich radii.
    pub margins: Vec<f64>,
    pub s_values: Vec<f64>,
    pub dims: Vec<usize>,
    /// Overrides the main tolerance of the experiment.
    pub tolerance: Option<f64>,
    pub window: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            p: vec![1.0],
            s: None,
            alpha: None,
            gamma: vec![0.5, 1.0, 2.0],
            theta: 0.5,
            p1: 2.0,
            s1: 0.5,
            check: CorollaryCheck::WeakInterpolation,
            ladder: false,
            lambda_grid: None,
            lambda_points: 64,
            lambda_multiples: vec![10.0, 100.0],
            epsilons: EPSILON_LADDER.to_vec(),
            deltas: Vec::new(),
            margins: vec![0.25, 0.5],
            s_values: Vec::new(),
            dims: vec![1, 2, 3, 4],
            tolerance: None,
            window: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Polar,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    /// Defaults to polar in one dimension and Monte Carlo above.
    pub estimator: Option<EstimatorKind>,
    pub polar: Option<PolarBudget>,
    pub samples: u64,
    pub golden_steps: usize,
    /// Rerun with a refined budget and report the drift.
    pub refine: bool,
    pub trials: usize,
    pub cells: usize,
    pub pairs: u64,
    pub seminorm: Option<SeminormBudget>,
    pub rotation: Option<RotationBudget>,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            estimator: None,
            polar: None,
            samples: 100_000,
            golden_steps: 8,
            refine: false,
            trials: 100,
            cells: 128,
            pairs: 10_000,
            seminorm: None,
            rotation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub fields: Vec<FieldSpec>,
    /// Dimension of the standard catalogue used when `fields` is empty.
    #[serde(default)]
    pub catalogue_dim: Option<usize>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolved_fields(&self) -> Result<Vec<ScalarField>> {
        if !self.fields.is_empty() {
            return self.fields.iter().cloned().map(ScalarField::from_spec).collect();
        }
        catalogue(self.catalogue_dim.unwrap_or(1))
    }

    fn samples_randomly(&self, fields: &[ScalarField]) -> bool {
        let mc = |dim: usize| self.estimator_kind(dim) == EstimatorKind::Mc;
        match self.kind {
            ExperimentKind::Constants | ExperimentKind::Gagliardo => false,
            ExperimentKind::Failure => false,
            ExperimentKind::Limit | ExperimentKind::Quasinorm | ExperimentKind::Corollary => {
                fields.iter().any(|f| mc(f.dim())) || (self.params.ladder && mc(self.catalogue_dim.unwrap_or(1)))
            }
            _ => true,
        }
    }

    fn estimator_kind(&self, dim: usize) -> EstimatorKind {
        self.budget
            .estimator
            .unwrap_or(if dim == 1 { EstimatorKind::Polar } else { EstimatorKind::Mc })
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        if p.p.is_empty() {
            return Err(Error::invalid("params.p", "need at least one exponent"));
        }
        if let Some(bad) = p.p.iter().find(|v| !(**v >= 1.0) || !v.is_finite()) {
            return Err(Error::invalid("params.p", format!("need 1 <= p < inf, got {bad}")));
        }
        if let Some(g) = p.lambda_grid {
            lambda_grid(g.lo, g.hi, g.n).map_err(|_| {
                Error::invalid("params.lambda_grid", format!("need 0 < lo <= hi and n > 0, got {g:?}"))
            })?;
        }
        if p.lambda_multiples.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("params.lambda_multiples", "lambda must be positive"));
        }
        if p.gamma.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("params.gamma", "need gamma > 0"));
        }
        if p.lambda_points == 0 {
            return Err(Error::invalid("params.lambda_points", "must be positive"));
        }
        if p.window == 0 {
            return Err(Error::invalid("params.window", "must be positive"));
        }
        let b = &self.budget;
        if b.samples == 0 || b.pairs == 0 || b.trials == 0 || b.cells < 4 {
            return Err(Error::invalid("budget", "samples, pairs and trials must be positive and cells >= 4"));
        }
        let fields = self.resolved_fields()?;
        if self.seed.is_none() && self.samples_randomly(&fields) {
            return Err(Error::invalid("seed", "required for experiments that sample"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub key: String,
    pub status: Status,
    pub tolerance: f64,
    /// The measured quantity compared against the tolerance.
    pub value: f64,
    pub detail: String,
}

impl Verdict {
    fn new(key: impl Into<String>, pass: bool, converged: bool, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        let status = if !converged {
            Status::Inconclusive
        } else if pass {
            Status::Pass
        } else {
            Status::Fail
        };
        Self {
            key: key.into(),
            status,
            tolerance,
            value,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConstant {
    pub name: String,
    pub field: String,
    pub dim: usize,
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    /// `(file name, CSV contents)` in a fixed order.
    pub tables: Vec<(String, String)>,
    pub report: Value,
    pub verdicts: Vec<Verdict>,
    /// `(stage, seconds)`.
    pub timings: Vec<(String, f64)>,
}

impl ExperimentOutput {
    /// Worst status over all verdicts: fail beats inconclusive beats pass.
    pub fn status(&self) -> Status {
        if self.verdicts.iter().any(|v| v.status == Status::Fail) {
            Status::Fail
        } else if self.verdicts.iter().any(|v| v.status == Status::Inconclusive) {
            Status::Inconclusive
        } else {
            Status::Pass
        }
    }

    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("report serializes") + "\n"
    }

    pub fn timings_json(&self) -> String {
        let map: serde_json::Map<String, Value> = self.timings.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        serde_json::to_string_pretty(&Value::Object(map)).expect("timings serialize") + "\n"
    }
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    stream: RandomStream,
    tables: Vec<(String, String)>,
    verdicts: Vec<Verdict>,
    constants: Vec<EmpiricalConstant>,
    timings: Vec<(String, f64)>,
}

impl Run<'_> {
    fn estimator(&self, dim: usize, tag: u64) -> Estimator {
        match self.cfg.estimator_kind(dim) {
            EstimatorKind::Polar => Estimator::Polar(self.cfg.budget.polar.unwrap_or_else(|| PolarBudget::for_dim(dim))),
            EstimatorKind::Mc => Estimator::MonteCarlo {
                samples: self.cfg.budget.samples,
                stream: self.stream.substream(tag),
            },
        }
    }

    fn lambdas(&self, field: &ScalarField) -> Result<Vec<f64>> {
        match self.cfg.params.lambda_grid {
            Some(g) => lambda_grid(g.lo, g.hi, g.n),
            None => {
                let l = if field.lip() > 0.0 { field.lip() } else { 1.0 };
                lambda_grid(0.1 * l, 1e3 * l, self.cfg.params.lambda_points)
            }
        }
    }

    fn seminorm_budget(&self, dim: usize) -> SeminormBudget {
        self.cfg.budget.seminorm.unwrap_or_else(|| SeminormBudget::for_dim(dim))
    }

    fn timed<T>(&mut self, stage: impl Into<String>, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f(self)?;
        self.timings.push((stage.into(), t.elapsed().as_secs_f64()));
        Ok(out)
    }
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.write_record(r).map_err(io_err)?;
    }
    String::from_utf8(w.into_inner().map_err(io_err)?).map_err(io_err)
}

/// A file-name-safe form of a label: runs of other characters become `_`.
fn stem(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

fn s(v: f64) -> String {
    v.to_string()
}

fn rel_err(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a / b - 1.0).abs()
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut run = Run {
        cfg,
        stream: RandomStream::new(cfg.seed.unwrap_or(0), 0),
        tables: Vec::new(),
        verdicts: Vec::new(),
        constants: Vec::new(),
        timings: Vec::new(),
    };
    let results = match cfg.kind {
        ExperimentKind::Constants => constants(&mut run)?,
        ExperimentKind::Limit => limit(&mut run)?,
        ExperimentKind::Quasinorm => quasinorm(&mut run)?,
        ExperimentKind::Gagliardo => seminorm(&mut run)?,
        ExperimentKind::Covering => covering(&mut run)?,
        ExperimentKind::Rotation => rotation(&mut run)?,
        ExperimentKind::Maximal => maximal(&mut run)?,
        ExperimentKind::Corollary => corollary(&mut run)?,
        ExperimentKind::Failure => failure(&mut run)?,
        ExperimentKind::Crosscheck => crosscheck(&mut run)?,
    };
    let mut out = ExperimentOutput {
        tables: run.tables,
        report: Value::Null,
        verdicts: run.verdicts,
        timings: run.timings,
    };
    let status = out.status();
    out.report = json!({
        "schema": SCHEMA_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "kind": cfg.kind,
        "config": cfg,
        "results": results,
        "empirical_constants": run.constants,
        "verdicts": out.verdicts,
        "status": status,
    });
    Ok(out)
}

fn constants(run: &mut Run<'_>) -> Result<Value> {
    let params = run.cfg.params.clone();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let mut results = Vec::new();
    run.timed("constants", |_| {
        for &dim in &params.dims {
            for &p in &params.p {
                let c = k_constant(p, dim)?;
                let rel = rel_err(c.k_quadrature, c.k);
                worst = worst.max(rel);
                rows.push(vec![dim.to_string(), s(p), s(c.k), s(c.k_quadrature), s(c.sigma)]);
                results.push(c);
            }
        }
        Ok(())
    })?;
    let tol = params.tolerance.unwrap_or(K_AGREEMENT);
    run.tables.push(("constants.csv".into(), csv_table(&["N", "p", "k_closed", "k_quad", "sigma"], &rows)?));
    run.verdicts.push(Verdict::new(
        "constants:closed_form_matches_quadrature",
        worst <= tol,
        true,
        worst,
        tol,
        "largest relative gap between closed-form and quadrature k(p, N)",
    ));
    Ok(json!(results))
}

fn limit(run: &mut Run<'_>) -> Result<Value> {
    let fields = run.cfg.resolved_fields()?;
    let params = run.cfg.params.clone();
    let mut results = Vec::new();
    for (fi, u) in fields.iter().enumerate() {
        for (pi, &p) in params.p.iter().enumerate() {
            let est = run.estimator(u.dim(), (fi * 64 + pi) as u64);
            let lambdas = run.lambdas(u)?;
            let q = LevelSetQuery::critical(u, p)?;
            let profile = run.timed(format!("limit:{}:p{p}", u.label()), |_| distribution_profile(&q, &lambdas, &est))?;
            let lim = tail_limit(&profile, params.window.min(profile.rows.len()), PLATEAU_TOL)?;
            let k = k_constant(p, u.dim())?.k;
            let expected = k / u.dim() as f64 * gradient_lp_norm(u, p, 1 << 22)?.value;
            let rel = rel_err(lim.plateau, expected);
            let tol = params.tolerance.unwrap_or(if u.dim() == 1 { 0.05 } else { 0.10 });
            run.tables.push((format!("limit_{}_p{p}.csv", stem(u.label())), profile.to_csv()?));
            run.verdicts.push(Verdict::new(
                format!("limit:plateau_matches_gradient_norm:{}:p{p}", u.label()),
                rel <= tol,
                lim.converged,
                rel,
                tol,
                format!("plateau {} vs k/N |grad u|_p^p = {expected}", lim.plateau),
            ));
            results.push(json!({"field": u.label(), "p": p, "plateau": lim.plateau, "expected": expected,
                "flatness": lim.flatness, "relative_error": rel, "estimator": est.tag()}));
        }
    }
    Ok(json!(results))
}

fn quasinorm(run: &mut Run<'_>) -> Result<Value> {
    let fields = run.cfg.resolved_fields()?;
    let params = run.cfg.params.clone();
    let steps = run.cfg.budget.golden_steps;
    let refine = run.cfg.budget.refine;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (fi, u) in fields.iter().enumerate() {
        for (pi, &p) in params.p.iter().enumerate() {
            let n = u.dim();
            let alpha = params.alpha.unwrap_or(n as f64 / p + 1.0);
            let q = LevelSetQuery::new(u, p, alpha)?;
            let est = run.estimator(n, (fi * 64 + pi) as u64);
            let lambdas = run.lambdas(u)?;
            let label = u.label().to_string();
            let (profile, qn) = run.timed(format!("quasinorm:{label}:p{p}"), |_| {
                let profile = distribution_profile(&q, &lambdas, &est)?;
                let qn = weak_quasinorm(&q, &profile, &est, steps)?;
                Ok((profile, qn))
            })?;
            let grad = gradient_lp_norm(u, p, 1 << 22)?.value;
            let ratio = if grad > 0.0 { qn.sup / grad } else { 0.0 };
            let lower = 0.95 * k_constant(p, n)?.k / n as f64;
            let refined = if refine {
                let fine = est.refined();
                let r = run.timed(format!("quasinorm:{label}:p{p}:refined"), |_| {
                    let profile = distribution_profile(&q, &lambdas, &fine)?;
                    weak_quasinorm(&q, &profile, &fine, steps)
                })?;
                Some(if grad > 0.0 { r.sup / grad } else { 0.0 })
            } else {
                None
            };
            let drift = refined.map(|r| rel_err(r, ratio));
            run.tables.push((format!("quasinorm_{}_p{p}.csv", stem(&label)), profile.to_csv()?));
            rows.push(vec![
                label.clone(),
                s(p),
                s(alpha),
                s(qn.sup),
                s(qn.lambda_star),
                s(grad),
                s(ratio),
                s(lower),
                refined.map(s).unwrap_or_default(),
                drift.map(s).unwrap_or_default(),
            ]);
            let critical = params.alpha.is_none();
            if critical {
                run.verdicts.push(Verdict::new(
                    format!("quasinorm:lower_bound:{label}:p{p}"),
                    ratio >= lower,
                    true,
                    ratio,
                    lower,
                    "sup lambda^p |E_lambda| / |grad u|_p^p against 0.95 k(p,N)/N",
                ));
            }
            if let Some(d) = drift {
                let tol = params.tolerance.unwrap_or(0.10);
                run.verdicts.push(Verdict::new(
                    format!("quasinorm:upper_ratio_stable:{label}:p{p}"),
                    d < tol,
                    true,
                    d,
                    tol,
                    "relative change of sup lambda^p |E_lambda| / |grad u|_p^p under refinement",
                ));
            }
            run.constants.push(EmpiricalConstant {
                name: "upper_ratio".into(),
                field: label.clone(),
                dim: n,
                p,
                value: ratio,
            });
            results.push(json!({"field": label, "p": p, "alpha": alpha, "estimate": qn, "gradient_norm_p": grad,
                "ratio": ratio, "refined_ratio": refined}));
        }
    }
    run.tables.push((
        "quasinorm.csv".into(),
        csv_table(
            &["field", "p", "alpha", "sup", "lambda_star", "gradient_norm_p", "ratio", "lower_constant", "refined_ratio", "drift"],
            &rows,
        )?,
    ));
    Ok(json!(results))
}

fn seminorm(run: &mut Run<'_>) -> Result<Value> {
    let fields = run.cfg.resolved_fields()?;
    let params = run.cfg.params.clone();
    let tol = params.tolerance.unwrap_or(0.10);
    let mut results = Vec::new();
    let mut rows = Vec::new();
    for u in &fields {
        let budget = run.seminorm_budget(u.dim());
        let label = u.label().to_string();
        for &p in &params.p {
            if let Some(sv) = params.s.filter(|v| *v < 1.0) {
                let g = run.timed(format!("gagliardo:{label}:p{p}"), |_| gagliardo(u, SeminormQuery::new(sv, p, 0.0)?, &budget))?;
                rows.push(vec![label.clone(), s(sv), s(p), s(g.value), s(g.error_estimate), g.converged.to_string()]);
                run.verdicts.push(Verdict::new(
                    format!("seminorm:converged:{label}:s{sv}:p{p}"),
                    true,
                    g.converged,
                    g.error_estimate,
                    budget.rel_tol,
                    "refinement estimate within the relative tolerance",
                ));
            }
            let probe = if params.deltas.is_empty() {
                None
            } else {
                let pr = run.timed(format!("divergence:{label}:p{p}"), |_| diagonal_divergence_probe(u, p, &params.deltas, &budget))?;
                let table: Vec<Vec<String>> = pr
                    .deltas
                    .iter()
                    .zip(&pr.values)
                    .map(|(d, v)| vec![s(*d), s(v.value), s(v.error_estimate)])
                    .collect();
                run.tables.push((format!("divergence_{}_p{p}.csv", stem(&label)), csv_table(&["delta", "value", "error_estimate"], &table)?));
                run.verdicts.push(Verdict::new(
                    format!("seminorm:divergence_slope:{label}:p{p}"),
                    pr.relative_error <= tol && pr.monotone,
                    true,
                    pr.relative_error,
                    tol,
                    format!("slope {} vs k(p,N) |grad u|_p^p = {}", pr.slope, pr.expected_slope),
                ));
                Some(pr)
            };
            let bbm = if params.s_values.is_empty() {
                None
            } else {
                let b = run.timed(format!("bbm:{label}:p{p}"), |_| bbm_factor(u, p, &params.s_values, &budget))?;
                let table: Vec<Vec<String>> = b
                    .s_values
                    .iter()
                    .zip(&b.values)
                    .map(|(sv, v)| vec![s(*sv), s(v.value), s(v.error_estimate)])
                    .collect();
                run.tables.push((format!("bbm_{}_p{p}.csv", stem(&label)), csv_table(&["s", "scaled_value", "error_estimate"], &table)?));
                run.verdicts.push(Verdict::new(
                    format!("seminorm:bbm_plateau:{label}:p{p}"),
                    b.relative_error <= tol,
                    true,
                    b.relative_error,
                    tol,
                    format!("(1-s)|u|^p plateau {} vs k(p,N)/p |grad u|_p^p = {}", b.plateau, b.conjectured),
                ));
                run.constants.push(EmpiricalConstant {
                    name: "bbm_multiple".into(),
                    field: label.clone(),
                    dim: u.dim(),
                    p,
                    value: b.measured_multiple,
                });
                Some(b)
            };
            if let (Some(pr), Some(b)) = (&probe, &bbm) {
                let rel = rel_err(pr.slope / p, b.plateau);
                run.verdicts.push(Verdict::new(
                    format!("seminorm:probe_bbm_consistent:{label}:p{p}"),
                    rel <= tol,
                    true,
                    rel,
                    tol,
                    "divergence slope / p against the BBM plateau",
                ));
            }
            results.push(json!({"field": label, "p": p, "divergence": probe, "bbm": bbm}));
        }
    }
    if !rows.is_empty() {
        run.tables.push((
            "gagliardo.csv".into(),
            csv_table(&["field", "s", "p", "value", "error_estimate", "converged"], &rows)?,
        ));
    }
    Ok(json!(results))
}

fn covering(run: &mut Run<'_>) -> Result<Value> {
    let params = run.cfg.params.clone();
    let budget = run.cfg.budget.clone();
    let stream = run.stream.substream(1);
    let mut rows = Vec::new();
    let (mut overlaps, mut unwitnessed, mut uncovered, mut violations, mut energy_fail) = (0usize, 0usize, 0usize, 0u64, 0usize);
    let mut worst_ratio = 0.0f64;
    let mut first_cover = None;
    run.timed("covering", |_| {
        for t in 0..budget.trials {
            let mut rng = stream.at(t as u64);
            let f = PiecewiseConstantField::random(budget.cells, 5, &mut rng);
            for &gamma in &params.gamma {
                let fam = admissible_intervals(&f, gamma)?;
                let cover = vitali_select(&fam);
                let vv = check_vitali(&fam, &cover);
                let cv = verify_5j_cover(&f, gamma, &cover);
                let e = weighted_energy(&f, gamma, &cover);
                overlaps += vv.overlapping_pairs;
                unwitnessed += vv.unwitnessed;
                uncovered += vv.uncovered;
                violations += cv.violations;
                energy_fail += (!e.chain_holds()) as usize;
                worst_ratio = worst_ratio.max(if e.mass_bound > 0.0 { e.energy / e.mass_bound } else { 0.0 });
                rows.push(vec![
                    t.to_string(),
                    s(gamma),
                    s(f.l1_norm()),
                    fam.intervals.len().to_string(),
                    cover.selected.len().to_string(),
                    cv.pairs_in_set.to_string(),
                    cv.violations.to_string(),
                    s(e.energy),
                    s(e.cover_bound),
                    s(e.mass_bound),
                ]);
                if first_cover.is_none() {
                    first_cover = Some(cover_csv(&f, &fam, &cover)?);
                }
            }
        }
        Ok(())
    })?;
    run.tables.push((
        "covering.csv".into(),
        csv_table(
            &["trial", "gamma", "l1_norm", "family_size", "selected", "pairs_in_set", "cover_violations", "energy", "cover_bound", "mass_bound"],
            &rows,
        )?,
    ));
    if let Some(c) = first_cover {
        run.tables.push(("cover_example.csv".into(), c));
    }
    run.verdicts.push(Verdict::new(
        "covering:vitali_disjoint",
        overlaps == 0 && unwitnessed == 0,
        true,
        (overlaps + unwitnessed) as f64,
        0.0,
        "intersecting selected pairs plus family members without a longer selected witness",
    ));
    run.verdicts.push(Verdict::new(
        "covering:five_fold_cover",
        violations == 0 && uncovered == 0,
        true,
        (violations + uncovered as u64) as f64,
        0.0,
        "grid pairs in E(f, gamma) outside every 5J x 5J",
    ));
    run.verdicts.push(Verdict::new(
        "covering:energy_bound",
        energy_fail == 0,
        true,
        worst_ratio,
        1.0,
        "weighted energy over 10 5^gamma/(gamma(gamma+1)) |f|_1, worst trial",
    ));
    Ok(json!({"trials": budget.trials, "cells": budget.cells, "gammas": params.gamma, "worst_energy_ratio": worst_ratio}))
}

fn rotation(run: &mut Run<'_>) -> Result<Value> {
    let fields = run.cfg.resolved_fields()?;
    let refine = run.cfg.budget.refine;
    let samples = run.cfg.budget.samples;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (fi, u) in fields.iter().enumerate() {
        let label = u.label().to_string();
        let budget = run.cfg.budget.rotation.unwrap_or_else(|| RotationBudget::for_dim(u.dim()));
        let density = Density::Abs(u);
        let stream = run.stream.substream(100 + fi as u64);
        let rot = run.timed(format!("rotation:{label}"), |_| rotation_measure(&density, &budget))?;
        let mc = run.timed(format!("rotation_mc:{label}"), |_| pair_measure_direct(&density, samples, stream))?;
        let fine = if refine {
            Some(run.timed(format!("rotation:{label}:refined"), |_| rotation_measure(&density, &budget.refined()))?)
        } else {
            None
        };
        let combined = (rot.measure.error_estimate.powi(2) + mc.error_estimate.powi(2)).sqrt();
        let gap = (rot.measure.value - mc.value).abs();
        run.verdicts.push(Verdict::new(
            format!("rotation:matches_pair_mc:{label}"),
            gap <= 3.0 * combined,
            true,
            if combined > 0.0 { gap / combined } else { 0.0 },
            3.0,
            "gap between rotation and pair Monte Carlo in combined standard errors",
        ));
        run.verdicts.push(Verdict::new(
            format!("rotation:below_theory:{label}"),
            rot.c_emp <= rot.c_theory,
            true,
            rot.c_emp,
            rot.c_theory,
            "|E(F)| / |F|_1 against 5^{N+1} sigma/(N(N+1))",
        ));
        let drift = fine.map(|f| rel_err(f.c_emp, rot.c_emp));
        if let Some(d) = drift {
            run.verdicts.push(Verdict::new(
                format!("rotation:c_emp_stable:{label}"),
                d < 0.10,
                true,
                d,
                0.10,
                "relative change of |E(F)| / |F|_1 under refinement",
            ));
        }
        run.constants.push(EmpiricalConstant {
            name: "rotation_c_emp".into(),
            field: label.clone(),
            dim: u.dim(),
            p: 1.0,
            value: rot.c_emp,
        });
        rows.push(vec![
            label.clone(),
            s(rot.measure.value),
            s(rot.measure.error_estimate),
            s(mc.value),
            s(mc.error_estimate),
            s(rot.l1_norm),
            s(rot.c_emp),
            fine.map(|f| s(f.c_emp)).unwrap_or_default(),
            s(rot.c_theory),
        ]);
        results.push(json!({"field": label, "rotation": rot, "pair_mc": mc, "refined": fine}));
    }
    run.tables.push((
        "rotation.csv".into(),
        csv_table(
            &["field", "measure", "error_estimate", "pair_mc", "pair_mc_stderr", "l1_norm", "c_emp", "c_emp_refined", "c_theory"],
            &rows,
        )?,
    ));
    Ok(json!(results))
}

fn maximal(run: &mut Run<'_>) -> Result<Value> {
    let fields = run.cfg.resolved_fields()?;
    let params = run.cfg.params.clone();
    let cells = run.cfg.budget.cells;
    let pairs = run.cfg.budget.pairs;
    let mut lusin_rows = Vec::new();
    let mut results = Vec::new();
    for (fi, u) in fields.iter().enumerate() {
        let label = u.label().to_string();
        let stream = run.stream.substream(200 + fi as u64);
        let (coarse, fine, scaled) = run.timed(format!("lusin:{label}"), |_| {
            Ok((
                lusin_lipschitz_check(u, cells, pairs, stream)?,
                lusin_lipschitz_check(u, 2 * cells, pairs, stream)?,
                lusin_lipschitz_check(&u.scaled(3.0), cells, pairs, stream)?,
            ))
        })?;
        for r in [&coarse, &fine] {
            lusin_rows.push(vec![label.clone(), r.cells.to_string(), r.pairs.to_string(), s(r.c_emp), r.zero_denominator.to_string()]);
        }
        let factor = if coarse.c_emp > 0.0 { fine.c_emp / coarse.c_emp } else { f64::INFINITY };
        run.verdicts.push(Verdict::new(
            format!("maximal:lusin_refinement_stable:{label}"),
            factor <= 2.0 && factor >= 0.5,
            true,
            factor,
            2.0,
            "C_emp on the refined grid over C_emp on the base grid",
        ));
        let amp = rel_err(scaled.c_emp, coarse.c_emp);
        run.verdicts.push(Verdict::new(
            format!("maximal:lusin_amplitude_invariant:{label}"),
            amp <= 1e-2,
            true,
            amp,
            1e-2,
            "relative change of C_emp under u -> 3u",
        ));
        run.verdicts.push(Verdict::new(
            format!("maximal:zero_denominator_consistent:{label}"),
            coarse.zero_denominator_violations + fine.zero_denominator_violations == 0,
            true,
            (coarse.zero_denominator_violations + fine.zero_denominator_violations) as f64,
            0.0,
            "pairs with M(x) + M(y) = 0 but u(x) != u(y)",
        ));
        run.constants.push(EmpiricalConstant {
            name: "lusin_c_emp".into(),
            field: label.clone(),
            dim: u.dim(),
            p: 1.0,
            value: fine.c_emp,
        });
        let mut routes = Vec::new();
        for (pi, &p) in params.p.iter().enumerate() {
            if p <= 1.0 {
                continue;
            }
            let est = run.estimator(u.dim(), (300 + fi * 64 + pi) as u64);
            let lambdas = match params.lambda_grid {
                Some(g) => lambda_grid(g.lo, g.hi, g.n)?,
                None => lambda_grid(u.lip(), 1e3 * u.lip(), 12)?,
            };
            let c = fine.c_emp;
            let rep = run.timed(format!("maximal_route:{label}:p{p}"), |_| maximal_route_bound(u, p, c, &lambdas, &est, cells))?;
            run.tables.push((format!("maximal_{}_p{p}.csv", stem(&label)), rep.to_csv()?));
            let worst = rep.rows.iter().map(|r| r.direct / rep.bound).fold(0.0, f64::max);
            run.verdicts.push(Verdict::new(
                format!("maximal:bound_dominates:{label}:p{p}"),
                rep.dominated,
                true,
                worst,
                1.0,
                "largest direct lambda^p |E_lambda| over the maximal-function bound",
            ));
            routes.push(rep);
        }
        results.push(json!({"field": label, "lusin": [coarse, fine, scaled], "routes": routes}));
    }
    run.tables.push((
        "lusin.csv".into(),
        csv_table(&["field", "cells", "pairs", "c_emp", "zero_denominator"], &lusin_rows)?,
    ));
    Ok(json!(results))
}

fn corollary_row(check: CorollaryCheck, u: &ScalarField, p: f64, params: &Params, budget: &CorollaryBudget) -> Result<CorollaryReport> {
    match check {
        CorollaryCheck::WeakGradient1d => weak_gradient_bound_1d(u, p, budget),
        CorollaryCheck::WeakInterpolation => weak_interpolation_bound(u, p, budget),
        CorollaryCheck::WeakFractionalGn => weak_fractional_gn(u, GNParams::new(params.theta, params.p1, params.s1)?, budget),
        CorollaryCheck::StrongGn => strong_gn(u, params.theta, params.p1, budget),
        CorollaryCheck::SobolevEmbedding => sobolev_embedding(u, params.s.unwrap_or(0.5), budget),
    }
}

fn corollary_budget(run: &Run<'_>, dim: usize, tag: u64) -> CorollaryBudget {
    let mut b = CorollaryBudget::for_dim(dim, run.stream.substream(tag));
    b.estimator = run.estimator(dim, tag);
    b.refine = run.cfg.budget.golden_steps;
    if let Some(sb) = run.cfg.budget.seminorm {
        b.seminorm = sb;
    }
    b
}

fn corollary(run: &mut Run<'_>) -> Result<Value> {
    let params = run.cfg.params.clone();
    let check = params.check;
    let key = check.key();
    let fields = run.cfg.resolved_fields()?;
    // The strong checks take their exponents from the interpolation
    // parameters, so one pass suffices.
    let ps: Vec<f64> = match check {
        CorollaryCheck::WeakGradient1d | CorollaryCheck::WeakInterpolation => params.p.clone(),
        _ => vec![params.p[0]],
    };
    let mut rows: Vec<(CorollaryReport, String)> = Vec::new();
    let mut results = Vec::new();
    for (fi, u) in fields.iter().enumerate() {
        for (pi, &p) in ps.iter().enumerate() {
            let budget = corollary_budget(run, u.dim(), (400 + fi * 64 + pi) as u64);
            let label = u.label().to_string();
            let (rep, (hl, hr)) = run.timed(format!("corollary:{key}:{label}:p{p}"), |_| {
                let rep = corollary_row(check, u, p, &params, &budget)?;
                let h = homogeneity_ratios(u, 3.0, |f| corollary_row(check, f, p, &params, &budget))?;
                Ok((rep, h))
            })?;
            let hom = (hl - 1.0).abs().max((hr - 1.0).abs());
            let finite = rep.finite();
            let verdict = if finite && hom <= 1e-2 { "pass" } else { "fail" };
            run.verdicts.push(Verdict::new(
                format!("corollary:{key}:finite:{label}:p{}", rep.params.p),
                finite,
                rep.converged,
                rep.ratio.unwrap_or(0.0),
                f64::INFINITY,
                "both sides and their ratio are finite",
            ));
            run.verdicts.push(Verdict::new(
                format!("corollary:{key}:homogeneous:{label}:p{}", rep.params.p),
                hom <= 1e-2,
                true,
                hom,
                1e-2,
                "largest |side(3u) / (3 side(u)) - 1| over both sides",
            ));
            results.push(json!({"report": rep, "homogeneity": [hl, hr]}));
            rows.push((rep, verdict.to_string()));
        }
    }
    if params.ladder {
        let dim = run.cfg.catalogue_dim.unwrap_or(1);
        let p = ps[0];
        let mut ratios = Vec::new();
        let mut converged = true;
        for (ei, &eps) in params.epsilons.iter().enumerate() {
            let u = make_mollified_indicator(&vec![-0.5; dim], &vec![0.5; dim], eps)?.with_label(format!("mollified_box{dim}d_eps{eps}"));
            let budget = corollary_budget(run, dim, (900 + ei) as u64);
            let rep = run.timed(format!("corollary:{key}:ladder:eps{eps}"), |_| corollary_row(check, &u, p, &params, &budget))?;
            converged &= rep.converged;
            ratios.push(rep.ratio.unwrap_or(f64::NAN));
            rows.push((rep.clone(), String::new()));
            results.push(json!({"report": rep}));
        }
        let bounded = within_factor_of_median(&ratios, 3.0);
        for row in rows.iter_mut().filter(|r| r.1.is_empty()) {
            row.1 = if bounded { "pass" } else { "fail" }.into();
        }
        run.verdicts.push(Verdict::new(
            format!("corollary:{key}:bounded_on_ladder:p{p}"),
            bounded,
            converged,
            ratios.iter().cloned().fold(0.0, f64::max),
            3.0,
            "every ratio within a factor 3 of the ladder median",
        ));
    }
    run.tables.push(("corollary.csv".into(), reports_csv(&rows)?));
    Ok(json!(results))
}

fn failure(run: &mut Run<'_>) -> Result<Value> {
    let params = run.cfg.params.clone();
    let mut results = Vec::new();
    for (pi, &p) in params.p.iter().enumerate() {
        let budget = corollary_budget(run, 1, 500 + pi as u64);
        let probe = run.timed(format!("failure:p{p}"), |_| strong_norm_failure_probe(p, &params.epsilons, &budget))?;
        run.tables.push((format!("failure_p{p}.csv"), probe.to_csv()?));
        run.verdicts.push(Verdict::new(
            format!("failure:strong_increasing:p{p}"),
            probe.strictly_increasing(),
            true,
            probe.increments.iter().cloned().fold(f64::INFINITY, f64::min),
            0.0,
            "smallest increment of the strong integral along the ladder",
        ));
        let spread_tol = params.tolerance.unwrap_or(0.25);
        run.verdicts.push(Verdict::new(
            format!("failure:log_increments:p{p}"),
            probe.increment_spread() <= spread_tol,
            true,
            probe.increment_spread(),
            spread_tol,
            "relative spread of the last two increments",
        ));
        run.verdicts.push(Verdict::new(
            format!("failure:weak_bounded:p{p}"),
            within_factor_of_median(&probe.weak, 3.0),
            probe.converged,
            probe.weak.iter().cloned().fold(0.0, f64::max),
            3.0,
            "weak quasinorms within a factor 3 of their median",
        ));
        results.push(json!(probe));
    }
    Ok(json!(results))
}

fn crosscheck(run: &mut Run<'_>) -> Result<Value> {
    let fields = run.cfg.resolved_fields()?;
    let params = run.cfg.params.clone();
    let pairs = run.cfg.budget.pairs;
    let mut crows = Vec::new();
    let mut srows = Vec::new();
    let (mut cviol, mut sviol) = (0u64, 0u64);
    let mut short = false;
    for (fi, u) in fields.iter().enumerate() {
        let label = u.label().to_string();
        let scan = ScanParams::for_dim(u.dim());
        for (pi, &p) in params.p.iter().enumerate() {
            let tag = (600 + fi * 64 + pi) as u64;
            let stream = run.stream.substream(tag);
            let c = run.timed(format!("containment:{label}:p{p}"), |_| holder_containment_check(u, p, u.lip(), pairs, stream))?;
            cviol += c.violations;
            short |= c.pairs < pairs;
            crows.push(vec![label.clone(), s(p), s(c.lambda), c.pairs.to_string(), c.attempts.to_string(), c.violations.to_string(), s(c.min_ratio)]);
            for (li, &m) in params.lambda_multiples.iter().enumerate() {
                for (di, &delta) in params.margins.iter().enumerate() {
                    let lambda = m * u.lip();
                    let st = run.stream.substream(tag * 1000 + (li * 16 + di) as u64 + 1);
                    let r = run.timed(format!("sandwich:{label}:p{p}:{m}L:d{delta}"), |_| verify_sandwich(u, p, lambda, pairs, delta, st, &scan))?;
                    sviol += r.lower_violations + r.upper_violations;
                    srows.push(vec![
                        label.clone(),
                        s(p),
                        s(lambda),
                        s(delta),
                        r.samples.to_string(),
                        r.lower_violations.to_string(),
                        r.upper_violations.to_string(),
                        r.flagged_profiles.to_string(),
                        r.unresolved.to_string(),
                    ]);
                }
            }
        }
    }
    run.tables.push((
        "containment.csv".into(),
        csv_table(&["field", "p", "lambda", "pairs", "attempts", "violations", "min_ratio"], &crows)?,
    ));
    run.tables.push((
        "sandwich.csv".into(),
        csv_table(
            &["field", "p", "lambda", "delta", "samples", "lower_violations", "upper_violations", "flagged", "unresolved"],
            &srows,
        )?,
    ));
    run.verdicts.push(Verdict::new(
        "crosscheck:holder_containment",
        cviol == 0,
        !short,
        cviol as f64,
        0.0,
        "sampled pairs of E_lambda whose gradient line integral falls short of |x - y|^{N+1}",
    ));
    run.verdicts.push(Verdict::new(
        "crosscheck:sandwich",
        sviol == 0,
        true,
        sviol as f64,
        0.0,
        "radial level sets escaping the inner or outer sandwich radius",
    ));
    Ok(json!({"containment_violations": cviol, "sandwich_violations": sviol}))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let cfg = ExperimentConfig::from_json(r#"{"kind": "constants", "params": {"p": [1, 2], "dims": [1, 2]}}"#).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Constants);
        let err = ExperimentConfig::from_json(r#"{"kind": "limit", "params": {"lambda_grid": {"lo": -1, "hi": 10, "n": 4}}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("lambda_grid"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"kind": "rotation"}"#).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"kind": "limit", "bogus": 1}"#).unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains("line"), "{err}");
    }

    #[test]
    fn constants_experiment_passes() {
        let cfg = ExperimentConfig::from_json(r#"{"kind": "constants", "params": {"p": [1, 2], "dims": [1, 2, 3]}}"#).unwrap();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.status(), Status::Pass);
        assert_eq!(out.tables[0].1.lines().count(), 7);
        assert_eq!(out.report["schema"], 1);
    }
}
