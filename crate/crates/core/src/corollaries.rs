//! Weak-norm interpolation inequalities and their strong-norm contrasts.
//!
//! Each check returns both sides of an inequality `LHS <= C RHS` with the
//! constant unknown; verdicts compare ratios across fields and families.
//! Weak left-hand sides are `sup_lambda (lambda^p |E_lambda|)^{1/p}` for
//! the quotient `|u(x) - u(y)| / |x - y|^alpha`, computed by the level-set
//! estimators; strong ones are Gagliardo seminorms `(iint ...)^{1/p}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{gradient_lp_norm, lp_norm_pow, make_mollified_indicator, ScalarField};
use crate::levelset::{
    distribution_profile, io_err, lambda_grid, weak_quasinorm, Estimator, LevelSetQuery, PolarBudget, QuasinormEstimate,
};
use crate::rng::RandomStream;
use crate::seminorms::{gagliardo, SeminormBudget, SeminormQuery};

const NORM_NODES: usize = 1 << 22;

/// Interpolation parameters: `s = theta s1 + (1 - theta)` and
/// `1/p = theta/p1 + (1 - theta)`. `p1` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GNParams {
    pub theta: f64,
    pub p1: f64,
    pub s1: f64,
}

impl GNParams {
    pub fn new(theta: f64, p1: f64, s1: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::invalid("theta", format!("need 0 < theta < 1, got {theta}")));
        }
        if !(p1 > 1.0) {
            return Err(Error::invalid("p1", format!("need p1 > 1, got {p1}")));
        }
        if !(0.0..1.0).contains(&s1) {
            return Err(Error::invalid("s1", format!("need 0 <= s1 < 1, got {s1}")));
        }
        Ok(Self { theta, p1, s1 })
    }

    pub fn s(&self) -> f64 {
        self.theta * self.s1 + (1.0 - self.theta)
    }

    pub fn inv_p(&self) -> f64 {
        self.theta / self.p1 + (1.0 - self.theta)
    }

    pub fn p(&self) -> f64 {
        1.0 / self.inv_p()
    }

    /// Largest residual of the two convex-combination identities.
    pub fn identity_residual(&self) -> f64 {
        let r1 = self.s() - (self.theta * self.s1 + (1.0 - self.theta));
        let r2 = 1.0 / self.p() - (self.theta / self.p1 + (1.0 - self.theta));
        r1.abs().max(r2.abs())
    }
}

/// Parameters echoed into a report row; absent ones are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckParams {
    pub p: f64,
    pub s: Option<f64>,
    pub alpha: Option<f64>,
    pub theta: Option<f64>,
    pub p1: Option<f64>,
    pub s1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryReport {
    pub check: String,
    pub field: String,
    pub params: CheckParams,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, absent when `rhs = 0`.
    pub ratio: Option<f64>,
    pub converged: bool,
}

impl CorollaryReport {
    fn new(check: &str, field: &ScalarField, params: CheckParams, lhs: f64, rhs: f64, converged: bool) -> Self {
        Self {
            check: check.to_string(),
            field: field.label().to_string(),
            params,
            lhs,
            rhs,
            ratio: if rhs > 0.0 { Some(lhs / rhs) } else { None },
            converged,
        }
    }

    pub fn finite(&self) -> bool {
        self.lhs.is_finite() && self.rhs.is_finite() && self.ratio.is_none_or(f64::is_finite)
    }
}

pub const REPORT_COLUMNS: [&str; 12] = ["check", "field", "p", "s", "alpha", "theta", "p1", "s1", "lhs", "rhs", "ratio", "verdict"];

/// CSV with [`REPORT_COLUMNS`], one row per report, with the verdict
/// supplied by the caller.
pub fn reports_csv(rows: &[(CorollaryReport, String)]) -> Result<String> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS).map_err(io_err)?;
    for (r, verdict) in rows {
        w.write_record([
            r.check.clone(),
            r.field.clone(),
            r.params.p.to_string(),
            opt(r.params.s),
            opt(r.params.alpha),
            opt(r.params.theta),
            opt(r.params.p1),
            opt(r.params.s1),
            r.lhs.to_string(),
            r.rhs.to_string(),
            opt(r.ratio),
            verdict.clone(),
        ])
        .map_err(io_err)?;
    }
    String::from_utf8(w.into_inner().map_err(io_err)?).map_err(io_err)
}

/// Resolution shared by the checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorollaryBudget {
    pub estimator: Estimator,
    /// Points in the log-spaced lambda grid.
    pub lambdas: usize,
    /// Golden-section steps around the grid maximum.
    pub refine: usize,
    pub seminorm: SeminormBudget,
}

impl CorollaryBudget {
    /// Polar estimation in one dimension, Monte Carlo above.
    pub fn for_dim(dim: usize, stream: RandomStream) -> Self {
        let estimator = if dim == 1 {
            Estimator::Polar(PolarBudget::for_dim(1))
        } else {
            Estimator::MonteCarlo { samples: 40_000, stream }
        };
        Self {
            estimator,
            lambdas: 36,
            refine: 10,
            seminorm: SeminormBudget::for_dim(dim),
        }
    }
}

/// Weak quasinorm of the `alpha` quotient over a grid spanning
/// `[1e-2 min(L, |u|_inf), 1e3 max(L, |u|_inf)]`. The grid scales with the
/// amplitude, so the result is exactly 1-homogeneous.
pub fn weak_lhs(field: &ScalarField, p: f64, alpha: f64, budget: &CorollaryBudget) -> Result<QuasinormEstimate> {
    let q = LevelSetQuery::new(field, p, alpha)?;
    if field.is_zero() || field.sup_norm() == 0.0 {
        return Ok(QuasinormEstimate {
            sup: 0.0,
            lambda_star: 0.0,
            quasinorm: 0.0,
            at_grid_edge: false,
            converged: true,
        });
    }
    let (a, b) = (field.lip(), field.sup_norm());
    let lambdas = lambda_grid(1e-2 * a.min(b), 1e3 * a.max(b), budget.lambdas)?;
    let profile = distribution_profile(&q, &lambdas, &budget.estimator)?;
    let mut est = weak_quasinorm(&q, &profile, &budget.estimator, budget.refine)?;
    est.converged &= !est.at_grid_edge;
    Ok(est)
}

fn grad_l1(field: &ScalarField) -> Result<f64> {
    Ok(gradient_lp_norm(field, 1.0, NORM_NODES)?.value)
}

fn seminorm_root(field: &ScalarField, s: f64, p: f64, budget: &SeminormBudget) -> Result<(f64, bool)> {
    if field.is_zero() {
        return Ok((0.0, true));
    }
    let g = gagliardo(field, SeminormQuery::new(s, p, 0.0)?, budget)?;
    Ok((g.value.max(0.0).powf(1.0 / p), g.converged))
}

fn require_p_above_one(p: f64) -> Result<()> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Refused(format!("the weak-norm inequality is stated for 1 < p < inf, got p = {p}")))
    }
}

/// One dimension: weak quasinorm at `alpha = 2/p` against `|u'|_1`.
pub fn weak_gradient_bound_1d(field: &ScalarField, p: f64, budget: &CorollaryBudget) -> Result<CorollaryReport> {
    require_p_above_one(p)?;
    if field.dim() != 1 {
        return Err(Error::UnsupportedDimension(field.dim()));
    }
    let alpha = 2.0 / p;
    let lhs = weak_lhs(field, p, alpha, budget)?;
    let params = CheckParams {
        p,
        alpha: Some(alpha),
        ..Default::default()
    };
    Ok(CorollaryReport::new("weak_gradient_1d", field, params, lhs.quasinorm, grad_l1(field)?, lhs.converged))
}

/// Weak quasinorm at `alpha = (N+1)/p` against
/// `|u|_inf^{1-1/p} |grad u|_1^{1/p}`.
pub fn weak_interpolation_bound(field: &ScalarField, p: f64, budget: &CorollaryBudget) -> Result<CorollaryReport> {
    require_p_above_one(p)?;
    let alpha = (field.dim() as f64 + 1.0) / p;
    let lhs = weak_lhs(field, p, alpha, budget)?;
    let sup = field.max_abs();
    let rhs = sup.powf(1.0 - 1.0 / p) * grad_l1(field)?.powf(1.0 / p);
    let params = CheckParams {
        p,
        alpha: Some(alpha),
        ..Default::default()
    };
    Ok(CorollaryReport::new("weak_interpolation", field, params, lhs.quasinorm, rhs, lhs.converged))
}

/// Weak quasinorm at `alpha = N/p + s` against
/// `|u|_{W^{s1,p1}}^theta |grad u|_1^{1-theta}`, for `s1 p1 >= 1`.
pub fn weak_fractional_gn(field: &ScalarField, params: GNParams, budget: &CorollaryBudget) -> Result<CorollaryReport> {
    if !params.p1.is_finite() {
        return Err(Error::invalid("p1", "the fractional factor needs a finite p1"));
    }
    if params.s1 * params.p1 < 1.0 {
        return Err(Error::Refused(format!(
            "s1 p1 = {} < 1 is the strong-inequality regime; use strong_gn",
            params.s1 * params.p1
        )));
    }
    let (s, p) = (params.s(), params.p());
    let alpha = field.dim() as f64 / p + s;
    let lhs = weak_lhs(field, p, alpha, budget)?;
    let (frac, conv) = seminorm_root(field, params.s1, params.p1, &budget.seminorm)?;
    let rhs = frac.powf(params.theta) * grad_l1(field)?.powf(1.0 - params.theta);
    let cp = CheckParams {
        p,
        s: Some(s),
        alpha: Some(alpha),
        theta: Some(params.theta),
        p1: Some(params.p1),
        s1: Some(params.s1),
    };
    Ok(CorollaryReport::new("weak_fractional_gn", field, cp, lhs.quasinorm, rhs, lhs.converged && conv))
}

/// Gagliardo seminorm at `s = 1 - theta`, `1/p = theta/p1 + 1 - theta`
/// against `|u|_{p1}^theta |grad u|_1^{1-theta}`, for finite `p1`.
pub fn strong_gn(field: &ScalarField, theta: f64, p1: f64, budget: &CorollaryBudget) -> Result<CorollaryReport> {
    if p1 == f64::INFINITY {
        return Err(Error::Refused("the strong inequality fails for every theta when p1 = inf".into()));
    }
    if !(p1 >= 1.0) {
        return Err(Error::invalid("p1", format!("need 1 <= p1 < inf, got {p1}")));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid("theta", format!("need 0 < theta < 1, got {theta}")));
    }
    let s = 1.0 - theta;
    let p = 1.0 / (theta / p1 + 1.0 - theta);
    let (lhs, conv) = seminorm_root(field, s, p, &budget.seminorm)?;
    let lp = if field.is_zero() { 0.0 } else { lp_norm_pow(field, p1, NORM_NODES)?.value.powf(1.0 / p1) };
    let rhs = lp.powf(theta) * grad_l1(field)?.powf(1.0 - theta);
    let cp = CheckParams {
        p,
        s: Some(s),
        theta: Some(theta),
        p1: Some(p1),
        s1: Some(0.0),
        ..Default::default()
    };
    Ok(CorollaryReport::new("strong_gn", field, cp, lhs, rhs, conv))
}

/// Exponent with `1/p = 1 - (1 - s)/N`.
pub fn embedding_exponent(s: f64, dim: usize) -> f64 {
    1.0 / (1.0 - (1.0 - s) / dim as f64)
}

/// `|u|_{W^{s,p}}` with `1/p = 1 - (1-s)/N` against `|grad u|_1`; `N >= 2`.
pub fn sobolev_embedding(field: &ScalarField, s: f64, budget: &CorollaryBudget) -> Result<CorollaryReport> {
    if field.dim() == 1 {
        return Err(Error::Refused(
            "the strong embedding fails in one dimension; see the strong-norm divergence probe".into(),
        ));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::invalid("s", format!("need 0 < s < 1, got {s}")));
    }
    let p = embedding_exponent(s, field.dim());
    let (lhs, conv) = seminorm_root(field, s, p, &budget.seminorm)?;
    let cp = CheckParams {
        p,
        s: Some(s),
        ..Default::default()
    };
    Ok(CorollaryReport::new("sobolev_embedding", field, cp, lhs, grad_l1(field)?, conv))
}

/// `a(c u) / (c a(u))` and `b(c u) / (c b(u))` for both sides of a check.
pub fn homogeneity_ratios<F>(field: &ScalarField, c: f64, check: F) -> Result<(f64, f64)>
where
    F: Fn(&ScalarField) -> Result<CorollaryReport>,
{
    let base = check(field)?;
    let scaled = check(&field.scaled(c))?;
    let rel = |a: f64, b: f64| if b == 0.0 && a == 0.0 { 1.0 } else { a / (c * b) };
    Ok((rel(scaled.lhs, base.lhs), rel(scaled.rhs, base.rhs)))
}

/// Whether every value lies within a factor `factor` of the median.
pub fn within_factor_of_median(values: &[f64], factor: f64) -> bool {
    if values.is_empty() {
        return true;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = if v.len() % 2 == 1 {
        v[v.len() / 2]
    } else {
        0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
    };
    m > 0.0 && values.iter().all(|&x| x <= factor * m && x >= m / factor)
}

/// `iint |u(x) - u(y)|^p / |x - y|^2` for one-dimensional mollified
/// indicators of `[-1/2, 1/2]` along an epsilon ladder, paired with the
/// weak quasinorm at `alpha = 2/p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureProbe {
    pub p: f64,
    pub epsilons: Vec<f64>,
    pub strong: Vec<f64>,
    /// `strong[k+1] - strong[k]`.
    pub increments: Vec<f64>,
    /// Fitted slope of `strong` against `log(1/epsilon)`.
    pub log_rate: f64,
    pub weak: Vec<f64>,
    pub gradient_l1: Vec<f64>,
    pub converged: bool,
}

impl FailureProbe {
    pub fn strictly_increasing(&self) -> bool {
        self.increments.iter().all(|&d| d > 0.0)
    }

    /// Relative spread of the last two increments.
    pub fn increment_spread(&self) -> f64 {
        match self.increments.as_slice() {
            [.., a, b] => (b - a).abs() / a.abs().max(b.abs()),
            _ => f64::INFINITY,
        }
    }

    /// CSV with columns `epsilon,strong,weak,gradient_l1`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epsilon", "strong", "weak", "gradient_l1"]).map_err(io_err)?;
        for k in 0..self.epsilons.len() {
            w.write_record([self.epsilons[k], self.strong[k], self.weak[k], self.gradient_l1[k]].map(|v| v.to_string()))
                .map_err(io_err)?;
        }
        String::from_utf8(w.into_inner().map_err(io_err)?).map_err(io_err)
    }
}

/// The strong integral is the Gagliardo seminorm at `s = 1/p`, which is
/// infinite for every non-constant field when `p = 1`, so `p > 1` is
/// required; every epsilon must be positive.
pub fn strong_norm_failure_probe(p: f64, epsilons: &[f64], budget: &CorollaryBudget) -> Result<FailureProbe> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::Refused(format!(
            "iint |u(x)-u(y)|^p/|x-y|^2 diverges on the diagonal for every non-constant u when p = 1; got p = {p}"
        )));
    }
    if epsilons.len() < 2 {
        return Err(Error::invalid("epsilons", "need at least two rungs"));
    }
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0 && **e < 0.5)) {
        return Err(Error::Refused(format!(
            "the unmollified indicator has infinite strong integral; need 0 < epsilon < 1/2, got {e}"
        )));
    }
    let mut strong = Vec::new();
    let mut weak = Vec::new();
    let mut gl1 = Vec::new();
    let mut converged = true;
    for &eps in epsilons {
        let u = make_mollified_indicator(&[-0.5], &[0.5], eps)?;
        let g = gagliardo(&u, SeminormQuery::new(1.0 / p, p, 0.0)?, &budget.seminorm)?;
        converged &= g.converged;
        strong.push(g.value);
        let w = weak_gradient_bound_1d(&u, p, budget)?;
        converged &= w.converged;
        weak.push(w.lhs);
        gl1.push(w.rhs);
    }
    let increments: Vec<f64> = strong.windows(2).map(|w| w[1] - w[0]).collect();
    let xs: Vec<f64> = epsilons.iter().map(|e| (1.0 / e).ln()).collect();
    let (log_rate, _) = crate::seminorms::linear_fit(&xs, &strong);
    Ok(FailureProbe {
        p,
        epsilons: epsilons.to_vec(),
        strong,
        increments,
        log_rate,
        weak,
        gradient_l1: gl1,
        converged,
    })
}

/// The epsilon ladder used by the contrast checks.
pub const EPSILON_LADDER: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_bump, FieldSpec};

    fn budget1() -> CorollaryBudget {
        CorollaryBudget::for_dim(1, RandomStream::new(1, 0))
    }

    #[test]
    fn gn_params_identities() {
        let g = GNParams::new(0.3, 4.0, 0.5).unwrap();
        assert!(g.identity_residual() < 1e-15);
        assert!((g.s() - 0.85).abs() < 1e-15);
        let inf = GNParams::new(0.5, f64::INFINITY, 0.5).unwrap();
        assert!((inf.p() - 2.0).abs() < 1e-15);
        assert!(GNParams::new(1.0, 2.0, 0.5).is_err());
    }

    #[test]
    fn embedding_exponent_in_two_dimensions() {
        assert_eq!(embedding_exponent(0.5, 2), 4.0 / 3.0);
    }

    #[test]
    fn refusals() {
        let u = make_bump(&[0.0], 1.0, 1.0).unwrap();
        let b = budget1();
        assert!(matches!(weak_gradient_bound_1d(&u, 1.0, &b), Err(Error::Refused(_))));
        assert!(matches!(weak_interpolation_bound(&u, 1.0, &b), Err(Error::Refused(_))));
        assert!(matches!(sobolev_embedding(&u, 0.5, &b), Err(Error::Refused(_))));
        assert!(matches!(strong_gn(&u, 0.5, f64::INFINITY, &b), Err(Error::Refused(_))));
        let g = GNParams::new(0.5, 2.0, 0.25).unwrap();
        assert!(matches!(weak_fractional_gn(&u, g, &b), Err(Error::Refused(_))));
        assert!(matches!(strong_norm_failure_probe(1.0, &EPSILON_LADDER, &b), Err(Error::Refused(_))));
        assert!(matches!(strong_norm_failure_probe(2.0, &[0.1, 0.0], &b), Err(Error::Refused(_))));
    }

    #[test]
    fn constant_field_gives_zero() {
        let z = ScalarField::from_spec(FieldSpec::Zero { dim: 1 }).unwrap();
        let r = weak_gradient_bound_1d(&z, 2.0, &budget1()).unwrap();
        assert_eq!((r.lhs, r.rhs, r.ratio), (0.0, 0.0, None));
        let s = strong_gn(&z, 0.5, 2.0, &budget1()).unwrap();
        assert_eq!(s.lhs, 0.0);
    }

    #[test]
    fn weak_side_is_homogeneous() {
        let u = make_bump(&[0.0], 1.0, 1.0).unwrap();
        let b = budget1();
        let (l, r) = homogeneity_ratios(&u, 3.0, |f| weak_gradient_bound_1d(f, 2.0, &b)).unwrap();
        assert!((l - 1.0).abs() < 1e-2 && (r - 1.0).abs() < 1e-2, "{l} {r}");
        let (l, r) = homogeneity_ratios(&u, 3.0, |f| weak_interpolation_bound(f, 1.5, &b)).unwrap();
        assert!((l - 1.0).abs() < 1e-2 && (r - 1.0).abs() < 1e-2, "{l} {r}");
    }

    #[test]
    fn indicator_ladder_has_fixed_gradient_mass() {
        let b = budget1();
        for eps in [0.2, 0.05] {
            let u = make_mollified_indicator(&[-0.5], &[0.5], eps).unwrap();
            let r = weak_gradient_bound_1d(&u, 2.0, &b).unwrap();
            assert!((r.rhs - 2.0).abs() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn median_factor() {
        assert!(within_factor_of_median(&[1.0, 2.0, 1.5], 3.0));
        assert!(!within_factor_of_median(&[1.0, 10.0, 1.5], 3.0));
    }
}
