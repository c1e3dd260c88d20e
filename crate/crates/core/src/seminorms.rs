//! Gagliardo seminorms `|u|^p_{W^{s,p}} = iint |u(x) - u(y)|^p / |x - y|^{N + sp}`,
//! the logarithmic divergence of the `s = 1` integral near the diagonal and
//! the `(1 - s)`-rescaled limit as `s -> 1`.
//!
//! With `S` the support box, pairs with both points outside `S` contribute
//! nothing and pairs with exactly one point outside are handled in closed
//! form: for `x` in `S` the ray `x + r omega` leaves `S` at `rho(x, omega)`
//! after which `u = 0`, so
//!
//! ```text
//! |u|^p = int_S int_S^{N-1} [ int_{d}^{rho} |u(x + r w) - u(x)|^p r^{-1-sp} dr
//!                             + 2 |u(x)|^p max(rho, d)^{-sp} / (sp) ] dw dx
//! ```
//!
//! where `d` is the inner cutoff. The inner integral subtracts its leading
//! term `|grad u(x) . w|^p r^{p-1-sp}`, integrated exactly, and applies a
//! geometrically graded Gauss rule to the remainder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::fields::{gradient_lp_norm, ScalarField};
use crate::quadrature::{gauss_nodes_1d, k_constant, sphere_rule, GaussRule, QuadratureResult, SphereRule, TensorGrid};
use crate::MAX_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeminormQuery {
    pub s: f64,
    pub p: f64,
    /// Pairs closer than this are excluded; required when `s = 1`.
    pub delta_in: f64,
}

impl SeminormQuery {
    pub fn new(s: f64, p: f64, delta_in: f64) -> Result<Self> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::invalid("s", format!("need 0 < s <= 1, got {s}")));
        }
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::invalid("p", format!("need 1 <= p < inf, got {p}")));
        }
        if !(delta_in >= 0.0) || !delta_in.is_finite() {
            return Err(Error::invalid("delta_in", format!("must be non-negative, got {delta_in}")));
        }
        if s == 1.0 && delta_in == 0.0 {
            return Err(Error::Refused(
                "the s = 1 integral is infinite unless u is constant; give a positive inner cutoff".into(),
            ));
        }
        Ok(Self { s, p, delta_in })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeminormBudget {
    /// Panels per knot gap of the base-point grid (the error estimate
    /// reruns with half as many, half the sphere order and three quarters
    /// of the radial order).
    pub panels: usize,
    pub order: usize,
    pub sphere_order: usize,
    /// Geometric levels of the radial rule, each shrinking by `ratio`.
    pub levels: usize,
    pub ratio: f64,
    pub radial_order: usize,
    pub rel_tol: f64,
}

impl SeminormBudget {
    pub fn for_dim(dim: usize) -> Self {
        let (panels, order, sphere_order, levels, radial_order) = match dim {
            1 => (8, 8, 1, 40, 16),
            2 => (4, 6, 16, 16, 10),
            _ => (2, 4, 6, 12, 8),
        };
        Self {
            panels,
            order,
            sphere_order,
            levels,
            ratio: 0.5,
            radial_order,
            rel_tol: 0.02,
        }
    }

    pub fn refined(&self) -> Self {
        let mut b = *self;
        b.panels *= 2;
        b.sphere_order *= 2;
        b
    }

    fn validate(&self) -> Result<()> {
        if self.panels < 2 {
            return Err(Error::invalid("panels", "need at least 2 panels for the refinement estimate"));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::invalid("ratio", "grading ratio must lie in (0, 1)"));
        }
        if self.order == 0 || self.radial_order == 0 || self.sphere_order == 0 {
            return Err(Error::invalid("order", "quadrature orders must be positive"));
        }
        Ok(())
    }
}

/// Distance from `x` (inside the box) to the box boundary along `omega`.
fn exit_distance(lo: &[f64], hi: &[f64], x: &[f64], omega: &[f64]) -> f64 {
    let mut rho = f64::INFINITY;
    for a in 0..x.len() {
        let w = omega[a];
        if w > 0.0 {
            rho = rho.min((hi[a] - x[a]) / w);
        } else if w < 0.0 {
            rho = rho.min((lo[a] - x[a]) / w);
        }
    }
    rho.max(0.0)
}

struct RayContext<'a> {
    field: &'a ScalarField,
    q: SeminormQuery,
    rule: GaussRule,
    levels: usize,
    ratio: f64,
    breaks: Vec<Vec<f64>>,
}

impl RayContext<'_> {
    /// `int_{d}^{rho} |u(x + r w) - u(x)|^p r^{-1-sp} dr`.
    fn inner(&self, x: &[f64], ux: f64, omega: &[f64], slope: f64, rho: f64, knots: &mut Vec<f64>) -> f64 {
        let d = self.q.delta_in;
        if rho <= d {
            return 0.0;
        }
        let (s, p) = (self.q.s, self.q.p);
        let n = x.len();
        let beta = p * (1.0 - s);
        let lead = slope.abs().powf(p);
        let singular = if lead == 0.0 {
            0.0
        } else if beta == 0.0 {
            lead * (rho / d).ln()
        } else if d == 0.0 {
            lead * rho.powf(beta) / beta
        } else {
            // (rho^b - d^b) / b without cancellation for small b.
            lead * d.powf(beta) * (beta * (rho / d).ln()).exp_m1() / beta
        };
        knots.clear();
        knots.push(d);
        knots.push(rho);
        let mut r = rho;
        for _ in 0..self.levels {
            r *= self.ratio;
            if r <= d {
                break;
            }
            knots.push(r);
        }
        for a in 0..n {
            if omega[a] != 0.0 {
                for &b in &self.breaks[a] {
                    let t = (b - x[a]) / omega[a];
                    if t > d && t < rho {
                        knots.push(t);
                    }
                }
            }
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let expo = -1.0 - s * p;
        let mut rem = 0.0;
        let mut y = [0.0; MAX_DIM];
        for w in knots.windows(2) {
            rem += self.rule.integrate(w[0], w[1], |r| {
                for a in 0..n {
                    y[a] = x[a] + r * omega[a];
                }
                let du = (self.field.evaluate(&y[..n]) - ux).abs();
                (du.powf(p) - lead * r.powf(p)) * r.powf(expo)
            });
        }
        singular + rem
    }
}

fn gagliardo_pass(
    field: &ScalarField,
    q: SeminormQuery,
    grid: &TensorGrid,
    sphere: &SphereRule,
    budget: &SeminormBudget,
    radial_order: usize,
) -> f64 {
    let n = field.dim();
    let (lo, hi) = field.support_box();
    let ctx = RayContext {
        field,
        q,
        rule: gauss_nodes_1d(radial_order).expect("positive order"),
        levels: budget.levels,
        ratio: budget.ratio,
        breaks: (0..n).map(|a| field.breakpoints(a)).collect(),
    };
    let sp = q.s * q.p;
    exec::map_chunks(grid.len(), 8, |range| {
        let mut total = 0.0;
        let mut x = [0.0; MAX_DIM];
        let mut knots = Vec::new();
        for i in range {
            let wx = grid.node(i, &mut x);
            let xs = &x[..n];
            let ux = field.evaluate(xs);
            let mut grad = [0.0; MAX_DIM];
            field.gradient(xs, &mut grad);
            let mut inner = 0.0;
            for (omega, wo) in sphere.iter() {
                let rho = exit_distance(lo, hi, xs, omega);
                let slope: f64 = (0..n).map(|a| grad[a] * omega[a]).sum();
                let mut v = ctx.inner(xs, ux, omega, slope, rho, &mut knots);
                if ux != 0.0 {
                    v += 2.0 * ux.abs().powf(q.p) * rho.max(q.delta_in).powf(-sp) / sp;
                }
                inner += wo * v;
            }
            total += wx * inner;
        }
        total
    })
    .into_iter()
    .sum()
}

/// `iint_{|x-y| >= delta_in} |u(x) - u(y)|^p / |x - y|^{N + sp} dx dy`.
pub fn gagliardo(field: &ScalarField, q: SeminormQuery, budget: &SeminormBudget) -> Result<QuadratureResult> {
    budget.validate()?;
    if field.is_zero() {
        return Ok(QuadratureResult::exact(0.0));
    }
    let n = field.dim();
    let run = |panels: usize, sphere_order: usize, radial_order: usize| -> Result<(f64, u64)> {
        let grid = field.support_grid(panels, budget.order, 0.0);
        let sphere = sphere_rule(n, sphere_order)?;
        let v = gagliardo_pass(field, q, &grid, &sphere, budget, radial_order);
        Ok((v, (grid.len() * sphere.len()) as u64))
    };
    let coarse_sphere = if n == 1 { budget.sphere_order } else { (budget.sphere_order / 2).max(1) };
    let (fine, nf) = run(budget.panels, budget.sphere_order, budget.radial_order)?;
    let (coarse, nc) = run(budget.panels / 2, coarse_sphere, (3 * budget.radial_order / 4).max(1))?;
    Ok(QuadratureResult::from_refinement(fine, coarse, nf + nc, budget.rel_tol * fine.abs()))
}

/// Least-squares slope and intercept of `ys` against `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceProbe {
    pub p: f64,
    pub deltas: Vec<f64>,
    pub values: Vec<QuadratureResult>,
    /// Least-squares slope of `V(delta)` against `log(1/delta)`.
    pub slope: f64,
    pub intercept: f64,
    /// `k(p, N) |grad u|_p^p`.
    pub expected_slope: f64,
    pub relative_error: f64,
    /// `V` is non-decreasing as `delta` decreases.
    pub monotone: bool,
}

fn check_geometric(ladder: &[f64], name: &'static str, decreasing: bool) -> Result<f64> {
    if ladder.len() < 2 {
        return Err(Error::invalid(name, "ladder needs at least two rungs"));
    }
    if ladder.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid(name, "ladder values must be positive"));
    }
    let q = ladder[1] / ladder[0];
    let ok = ladder
        .windows(2)
        .all(|w| ((w[1] / w[0]) - q).abs() <= 1e-9 * q);
    if !ok || (decreasing && !(q < 1.0)) {
        return Err(Error::invalid(name, "ladder must be geometric and decreasing"));
    }
    Ok(q)
}

/// `V(delta)`, the `s = 1` integral restricted to `|x - y| >= delta`, on a
/// geometric ladder; its slope against `log(1/delta)` should approach
/// `k(p, N) |grad u|_p^p`.
pub fn diagonal_divergence_probe(field: &ScalarField, p: f64, deltas: &[f64], budget: &SeminormBudget) -> Result<DivergenceProbe> {
    check_geometric(deltas, "deltas", true)?;
    let mut values = Vec::with_capacity(deltas.len());
    for &d in deltas {
        values.push(gagliardo(field, SeminormQuery::new(1.0, p, d)?, budget)?);
    }
    let xs: Vec<f64> = deltas.iter().map(|d| -d.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.value).collect();
    let (slope, intercept) = linear_fit(&xs, &ys);
    let expected_slope = k_constant(p, field.dim())?.k * gradient_lp_norm(field, p, 1 << 22)?.value;
    let monotone = ys.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
    Ok(DivergenceProbe {
        p,
        deltas: deltas.to_vec(),
        values,
        slope,
        intercept,
        expected_slope,
        relative_error: relative(slope, expected_slope),
        monotone,
    })
}

fn relative(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - b).abs() / b.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbmLadder {
    pub p: f64,
    pub s_values: Vec<f64>,
    /// `(1 - s) |u|^p_{W^{s,p}}` per rung.
    pub values: Vec<QuadratureResult>,
    /// The value at the rung closest to 1.
    pub plateau: f64,
    /// Linear extrapolation of the last two rungs to `s = 1`.
    pub extrapolated: f64,
    /// `k(p, N) / p |grad u|_p^p`.
    pub conjectured: f64,
    /// `plateau / |grad u|_p^p`: the measured multiple.
    pub measured_multiple: f64,
    pub relative_error: f64,
}

/// `(1 - s) |u|^p_{W^{s,p}}` along an increasing ladder of `s` in `(0, 1)`.
pub fn bbm_factor(field: &ScalarField, p: f64, s_values: &[f64], budget: &SeminormBudget) -> Result<BbmLadder> {
    if s_values.is_empty() {
        return Err(Error::invalid("s_values", "ladder is empty"));
    }
    if s_values.iter().any(|s| !(*s > 0.0 && *s < 1.0)) || s_values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("s_values", "ladder must increase inside (0, 1)"));
    }
    let mut values = Vec::with_capacity(s_values.len());
    for &s in s_values {
        let mut v = gagliardo(field, SeminormQuery::new(s, p, 0.0)?, budget)?;
        v.value *= 1.0 - s;
        v.error_estimate *= 1.0 - s;
        values.push(v);
    }
    let m = values.len();
    let plateau = values[m - 1].value;
    let extrapolated = if m >= 2 {
        let (s0, s1) = (s_values[m - 2], s_values[m - 1]);
        let (v0, v1) = (values[m - 2].value, values[m - 1].value);
        v1 + (v1 - v0) / (s1 - s0) * (1.0 - s1)
    } else {
        plateau
    };
    let grad = gradient_lp_norm(field, p, 1 << 22)?.value;
    let conjectured = k_constant(p, field.dim())?.k / p * grad;
    Ok(BbmLadder {
        p,
        s_values: s_values.to_vec(),
        values,
        plateau,
        extrapolated,
        conjectured,
        measured_multiple: if grad > 0.0 { plateau / grad } else { 0.0 },
        relative_error: relative(plateau, conjectured),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_bump, FieldSpec};

    fn bump1() -> ScalarField {
        make_bump(&[0.0], 1.0, 1.0).unwrap()
    }

    #[test]
    fn query_validation() {
        assert!(matches!(SeminormQuery::new(1.0, 1.0, 0.0), Err(Error::Refused(_))));
        assert!(SeminormQuery::new(1.0, 1.0, 1e-3).is_ok());
        assert!(SeminormQuery::new(0.0, 1.0, 0.0).is_err());
        assert!(SeminormQuery::new(0.5, 0.5, 0.0).is_err());
    }

    #[test]
    fn constant_field_is_zero() {
        let z = ScalarField::from_spec(FieldSpec::Zero { dim: 1 }).unwrap();
        let q = SeminormQuery::new(0.5, 2.0, 0.0).unwrap();
        assert_eq!(gagliardo(&z, q, &SeminormBudget::for_dim(1)).unwrap().value, 0.0);
    }

    #[test]
    fn bump_half_two_matches_reference() {
        // Reference from the one-dimensional autocorrelation formula
        // 2 int_0^2 D(h)/h^2 dh + 2 |u|_2^2 with adaptive quadrature.
        let r = gagliardo(&bump1(), SeminormQuery::new(0.5, 2.0, 0.0).unwrap(), &SeminormBudget::for_dim(1)).unwrap();
        let reference = 1.126_627_670_218_291_8;
        assert!((r.value - reference).abs() < 1e-6 * reference, "{r:?}");
    }

    #[test]
    fn amplitude_homogeneity() {
        let u = bump1();
        let v = u.scaled(3.0);
        let q = SeminormQuery::new(0.4, 1.5, 0.0).unwrap();
        let b = SeminormBudget::for_dim(1);
        let a = gagliardo(&u, q, &b).unwrap().value;
        let c = gagliardo(&v, q, &b).unwrap().value;
        assert!((c - 3f64.powf(1.5) * a).abs() < 1e-10 * c);
    }

    #[test]
    fn exit_distance_examples() {
        let (lo, hi) = ([0.0, 0.0], [1.0, 2.0]);
        assert!((exit_distance(&lo, &hi, &[0.5, 0.5], &[1.0, 0.0]) - 0.5).abs() < 1e-15);
        assert!((exit_distance(&lo, &hi, &[0.5, 0.5], &[0.0, -1.0]) - 0.5).abs() < 1e-15);
        let w = 0.5f64.sqrt();
        assert!((exit_distance(&lo, &hi, &[0.5, 0.5], &[w, w]) - 0.5 / w).abs() < 1e-15);
    }

    #[test]
    fn divergence_probe_n1_p1() {
        let deltas: Vec<f64> = (0..4).map(|k| 1e-2 * 0.1f64.powi(k)).collect();
        let probe = diagonal_divergence_probe(&bump1(), 1.0, &deltas, &SeminormBudget::for_dim(1)).unwrap();
        assert!(probe.monotone);
        assert!(probe.relative_error < 0.1, "{probe:?}");
        assert!(diagonal_divergence_probe(&bump1(), 1.0, &[1e-2, 1e-3, 1e-5], &SeminormBudget::for_dim(1)).is_err());
    }

    #[test]
    fn bbm_n1_p2() {
        let probe = bbm_factor(&bump1(), 2.0, &[0.9, 0.95, 0.99], &SeminormBudget::for_dim(1)).unwrap();
        assert!(probe.relative_error < 0.1, "{probe:?}");
    }
}
