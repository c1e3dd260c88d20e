//! Smooth compactly supported test functions with closed-form gradients and
//! certified bounds `L >= |grad u|`, `A >= |Hess u|` and `sup |u|`.

use std::f64::consts::E;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{composite_nodes, gauss_nodes_1d, GaussRule, QuadratureResult, TensorGrid};
use crate::MAX_DIM;

/// Safety factor applied to maxima found by grid sweeps.
pub const SAFETY: f64 = 1.05;
/// Points in a certification sweep.
pub const SWEEP_POINTS: usize = 1 << 12;

/// Serializable description of a field; the JSON form used by configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Bump {
        center: Vec<f64>,
        radius: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    ProductBump {
        center: Vec<f64>,
        radii: Vec<f64>,
        #[serde(default = "one")]
        amplitude: f64,
    },
    MollifiedIndicator {
        lo: Vec<f64>,
        hi: Vec<f64>,
        epsilon: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Sum {
        terms: Vec<FieldSpec>,
    },
    Zero {
        dim: usize,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    /// Maximum over a sweep of the 1-D profile derivatives times `SAFETY`.
    Certified,
    /// Triangle-inequality combination of term bounds.
    Composite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldBounds {
    /// Lipschitz bound `L`.
    pub lip: Bound,
    /// Second-order Taylor bound `A`.
    pub hess: Bound,
    pub sup_norm: Bound,
}

#[derive(Debug, Clone, PartialEq)]
enum Term {
    Bump {
        center: [f64; MAX_DIM],
        inv_r2: f64,
        amp: f64,
    },
    Product {
        center: [f64; MAX_DIM],
        inv_r: [f64; MAX_DIM],
        amp: f64,
    },
    Mollified {
        lo: [f64; MAX_DIM],
        hi: [f64; MAX_DIM],
        inv_eps: f64,
        amp: f64,
    },
}

/// An immutable test function `u in C_c^inf(R^N)`.
#[derive(Debug, Clone)]
pub struct ScalarField {
    dim: usize,
    spec: FieldSpec,
    terms: Vec<Term>,
    bounds: FieldBounds,
    support_lo: Vec<f64>,
    support_hi: Vec<f64>,
    support_radius: f64,
    label: String,
}

/// `exp(-1 / (1 - t))` for `t = s^2 < 1`, zero otherwise.
#[inline]
fn bump_profile(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t)).exp()
    }
}

/// 1-D bump `phi(s) = exp(-1/(1-s^2))` and its derivative.
#[inline]
fn phi_and_derivative(s: f64) -> (f64, f64) {
    let t = s * s;
    if t >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - t;
    let v = (-1.0 / q).exp();
    (v, v * (-2.0 * s / (q * q)))
}

fn phi_second(s: f64) -> f64 {
    let t = s * s;
    if t >= 1.0 {
        return 0.0;
    }
    let q = 1.0 - t;
    let v = (-1.0 / q).exp();
    // d/ds [v * (-2s/q^2)]
    let d1 = -2.0 * s / (q * q);
    let dd1 = -2.0 / (q * q) - 8.0 * s * s / (q * q * q);
    v * (d1 * d1 + dd1)
}

/// Sup-norms of the 1-D profile derivatives: `max |phi'|`, `max |phi''|`
/// and `max |phi'(r)/r|`, each from a sweep times `SAFETY`.
struct ProfileMaxima {
    d1: f64,
    d2: f64,
    d1_over_r: f64,
}

fn profile_maxima() -> &'static ProfileMaxima {
    static CELL: OnceLock<ProfileMaxima> = OnceLock::new();
    CELL.get_or_init(|| {
        let n = SWEEP_POINTS * 16;
        let (mut d1, mut d2, mut d1r) = (0.0f64, 0.0f64, 0.0f64);
        for i in 1..n {
            let s = i as f64 / n as f64;
            let (_, g) = phi_and_derivative(s);
            d1 = d1.max(g.abs());
            d2 = d2.max(phi_second(s).abs());
            d1r = d1r.max((g / s).abs());
        }
        // phi''(0) = -2/e is the limit of phi'(r)/r at the origin.
        d1r = d1r.max(2.0 / E);
        d2 = d2.max(2.0 / E);
        ProfileMaxima {
            d1: d1 * SAFETY,
            d2: d2 * SAFETY,
            d1_over_r: d1r * SAFETY,
        }
    })
}

/// `integral_0^a phi` for `0 <= a <= 1`, on panels refined toward 1 where
/// the profile flattens into its essential singularity.
fn half_profile_integral(a: f64) -> f64 {
    const KNOTS: [f64; 7] = [0.0, 0.5, 0.75, 0.875, 0.95, 0.985, 1.0];
    let rule = half_rule();
    let mut total = 0.0;
    for w in KNOTS.windows(2) {
        if w[0] >= a {
            break;
        }
        total += rule.integrate(w[0], w[1].min(a), |t| bump_profile(t * t));
    }
    total
}

/// Normalisation `Z = integral_{-1}^{1} phi`.
pub fn mollifier_mass() -> f64 {
    static CELL: OnceLock<f64> = OnceLock::new();
    *CELL.get_or_init(|| 2.0 * half_profile_integral(1.0))
}

fn half_rule() -> &'static GaussRule {
    static CELL: OnceLock<GaussRule> = OnceLock::new();
    CELL.get_or_init(|| gauss_nodes_1d(24).expect("24 nodes"))
}

/// Intervals in the tabulated mollifier CDF.
const CDF_TABLE: usize = 4096;

/// Cumulative values at `CDF_TABLE + 1` equispaced knots on `[-1, 1]`.
fn cdf_table() -> &'static [f64] {
    static CELL: OnceLock<Vec<f64>> = OnceLock::new();
    CELL.get_or_init(|| {
        let rule = gauss_nodes_1d(10).expect("10 nodes");
        let h = 2.0 / CDF_TABLE as f64;
        let z = mollifier_mass();
        let mut out = Vec::with_capacity(CDF_TABLE + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for i in 0..CDF_TABLE {
            let a = -1.0 + i as f64 * h;
            acc += rule.integrate(a, a + h, |t| bump_profile(t * t));
            out.push(acc / z);
        }
        out
    })
}

/// Cumulative distribution of the normalised mollifier `phi / Z` on
/// `[-1, 1]`: cubic Hermite interpolation of a Gauss-integrated table using
/// the exact density as slope.
pub fn mollifier_cdf(s: f64) -> f64 {
    if s <= -1.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let table = cdf_table();
    let h = 2.0 / CDF_TABLE as f64;
    let pos = (s + 1.0) / h;
    let i = (pos as usize).min(CDF_TABLE - 1);
    let t = pos - i as f64;
    let x0 = -1.0 + i as f64 * h;
    let (d0, _) = mollifier_density(x0);
    let (d1, _) = mollifier_density(x0 + h);
    let (y0, y1) = (table[i], table[i + 1]);
    let t2 = t * t;
    let t3 = t2 * t;
    let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * d1;
    v.clamp(0.0, 1.0)
}

/// Normalised mollifier density `phi(s)/Z` and its derivative.
fn mollifier_density(s: f64) -> (f64, f64) {
    let (v, d) = phi_and_derivative(s);
    let z = mollifier_mass();
    (v / z, d / z)
}

fn to_array(v: &[f64]) -> [f64; MAX_DIM] {
    let mut a = [0.0; MAX_DIM];
    a[..v.len()].copy_from_slice(v);
    a
}

fn check_dim(name: &'static str, v: &[f64]) -> Result<usize> {
    if v.is_empty() || v.len() > MAX_DIM {
        return Err(Error::invalid(name, format!("dimension must be in 1..={MAX_DIM}, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(name, "coordinates must be finite"));
    }
    Ok(v.len())
}

/// `u(x) = amplitude * exp(-1/(1 - |x-center|^2/radius^2))` inside the ball.
pub fn make_bump(center: &[f64], radius: f64, amplitude: f64) -> Result<ScalarField> {
    ScalarField::from_spec(FieldSpec::Bump {
        center: center.to_vec(),
        radius,
        amplitude,
    })
}

/// Smooth indicator of the box `[lo, hi]`: the box indicator convolved
/// per axis with the bump mollifier of half-width `epsilon`.
pub fn make_mollified_indicator(lo: &[f64], hi: &[f64], epsilon: f64) -> Result<ScalarField> {
    ScalarField::from_spec(FieldSpec::MollifiedIndicator {
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        epsilon,
        amplitude: 1.0,
    })
}

impl ScalarField {
    pub fn from_spec(spec: FieldSpec) -> Result<Self> {
        let mut terms = Vec::new();
        let mut parts = Vec::new();
        let dim = collect_terms(&spec, &mut terms, &mut parts)?;
        let (lip, hess, sup) = if parts.len() == 1 {
            parts[0]
        } else {
            let sum = |f: fn(&(Bound, Bound, Bound)) -> f64| parts.iter().map(f).sum::<f64>();
            let composite = |value| Bound {
                value,
                provenance: Provenance::Composite,
            };
            (
                composite(sum(|p| p.0.value)),
                composite(sum(|p| p.1.value)),
                composite(sum(|p| p.2.value)),
            )
        };
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut radius = 0.0f64;
        for t in &terms {
            let (tlo, thi, trad) = term_support(t, dim);
            for i in 0..dim {
                lo[i] = lo[i].min(tlo[i]);
                hi[i] = hi[i].max(thi[i]);
            }
            radius = radius.max(trad);
        }
        if terms.is_empty() {
            lo = vec![-1.0; dim];
            hi = vec![1.0; dim];
            radius = (dim as f64).sqrt();
        }
        let label = label_of(&spec);
        Ok(Self {
            dim,
            spec,
            terms,
            bounds: FieldBounds {
                lip,
                hess,
                sup_norm: sup,
            },
            support_lo: lo,
            support_hi: hi,
            support_radius: radius,
            label,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn bounds(&self) -> &FieldBounds {
        &self.bounds
    }

    pub fn lip(&self) -> f64 {
        self.bounds.lip.value
    }

    pub fn hess(&self) -> f64 {
        self.bounds.hess.value
    }

    pub fn sup_norm(&self) -> f64 {
        self.bounds.sup_norm.value
    }

    /// `u` vanishes outside the origin-centred ball of this radius.
    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Axis-aligned box containing the support.
    pub fn support_box(&self) -> (&[f64], &[f64]) {
        (&self.support_lo, &self.support_hi)
    }

    /// `max |u|`: the best node of the support grid, polished by a
    /// shrinking compass search.
    pub fn max_abs(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let grid = self.support_grid(16, 8, 0.0);
        let n = self.dim;
        let mut p = vec![0.0; n];
        let mut best = vec![0.0; n];
        let mut value = -1.0;
        for i in 0..grid.len() {
            grid.node(i, &mut p);
            let v = self.evaluate(&p).abs();
            if v > value {
                value = v;
                best.copy_from_slice(&p);
            }
        }
        let width = (0..n).map(|a| self.support_hi[a] - self.support_lo[a]).fold(0.0, f64::max);
        let mut step = width / 64.0;
        while step > 1e-12 * width {
            let mut moved = false;
            for a in 0..n {
                for sign in [-1.0, 1.0] {
                    p.copy_from_slice(&best);
                    p[a] += sign * step;
                    let v = self.evaluate(&p).abs();
                    if v > value {
                        value = v;
                        best.copy_from_slice(&p);
                        moved = true;
                    }
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        value
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Lower bound on `dist(x, supp u)` (exact for single terms).
    pub fn support_distance(&self, x: &[f64]) -> f64 {
        if self.terms.is_empty() {
            return f64::INFINITY;
        }
        self.terms
            .iter()
            .map(|t| match t {
                Term::Bump { center, inv_r2, .. } => {
                    let d: f64 = (0..self.dim).map(|i| (x[i] - center[i]).powi(2)).sum::<f64>().sqrt();
                    (d - 1.0 / inv_r2.sqrt()).max(0.0)
                }
                _ => {
                    let (lo, hi, _) = term_support(t, self.dim);
                    (0..self.dim)
                        .map(|i| (lo[i] - x[i]).max(x[i] - hi[i]).max(0.0).powi(2))
                        .sum::<f64>()
                        .sqrt()
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Per-axis coordinates where the field changes character (support
    /// edges, bump centres, transition bands); used as quadrature knots.
    pub fn breakpoints(&self, axis: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for t in &self.terms {
            match t {
                Term::Bump { center, inv_r2, .. } => {
                    let r = 1.0 / inv_r2.sqrt();
                    out.extend([center[axis] - r, center[axis], center[axis] + r]);
                }
                Term::Product { center, inv_r, .. } => {
                    let r = 1.0 / inv_r[axis];
                    out.extend([center[axis] - r, center[axis], center[axis] + r]);
                }
                Term::Mollified { lo, hi, inv_eps, .. } => {
                    let e = 1.0 / inv_eps;
                    out.extend([lo[axis] - e, lo[axis] + e, hi[axis] - e, hi[axis] + e]);
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let n = self.dim;
        let mut total = 0.0;
        for t in &self.terms {
            total += match t {
                Term::Bump { center, inv_r2, amp } => {
                    let mut d2 = 0.0;
                    for i in 0..n {
                        let d = x[i] - center[i];
                        d2 += d * d;
                    }
                    amp * bump_profile(d2 * inv_r2)
                }
                Term::Product { center, inv_r, amp } => {
                    let mut v = *amp;
                    for i in 0..n {
                        let s = (x[i] - center[i]) * inv_r[i];
                        v *= bump_profile(s * s);
                        if v == 0.0 {
                            break;
                        }
                    }
                    v
                }
                Term::Mollified { lo, hi, inv_eps, amp } => {
                    let mut v = *amp;
                    for i in 0..n {
                        let a = (x[i] - lo[i]) * inv_eps;
                        let b = (x[i] - hi[i]) * inv_eps;
                        if a <= -1.0 || b >= 1.0 {
                            v = 0.0;
                            break;
                        }
                        v *= (mollifier_cdf(a) - mollifier_cdf(b)).clamp(0.0, 1.0);
                    }
                    v
                }
            };
        }
        total
    }

    /// Closed-form gradient written into `out`.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        out[..n].iter_mut().for_each(|g| *g = 0.0);
        for t in &self.terms {
            match t {
                Term::Bump { center, inv_r2, amp } => {
                    let mut d2 = 0.0;
                    for i in 0..n {
                        let d = x[i] - center[i];
                        d2 += d * d;
                    }
                    let t = d2 * inv_r2;
                    if t < 1.0 {
                        let q = 1.0 - t;
                        let c = amp * (-1.0 / q).exp() * (-2.0 * inv_r2 / (q * q));
                        for i in 0..n {
                            out[i] += c * (x[i] - center[i]);
                        }
                    }
                }
                Term::Product { center, inv_r, amp } => {
                    let mut v = [0.0; MAX_DIM];
                    let mut d = [0.0; MAX_DIM];
                    for i in 0..n {
                        let (a, b) = phi_and_derivative((x[i] - center[i]) * inv_r[i]);
                        v[i] = a;
                        d[i] = b * inv_r[i];
                    }
                    for i in 0..n {
                        let mut g = *amp * d[i];
                        for (j, vj) in v.iter().enumerate().take(n) {
                            if j != i {
                                g *= vj;
                            }
                        }
                        out[i] += g;
                    }
                }
                Term::Mollified { lo, hi, inv_eps, amp } => {
                    let mut v = [0.0; MAX_DIM];
                    let mut d = [0.0; MAX_DIM];
                    for i in 0..n {
                        let a = (x[i] - lo[i]) * inv_eps;
                        let b = (x[i] - hi[i]) * inv_eps;
                        v[i] = mollifier_cdf(a) - mollifier_cdf(b);
                        d[i] = (mollifier_density(a).0 - mollifier_density(b).0) * inv_eps;
                    }
                    for i in 0..n {
                        let mut g = *amp * d[i];
                        for (j, vj) in v.iter().enumerate().take(n) {
                            if j != i {
                                g *= vj;
                            }
                        }
                        out[i] += g;
                    }
                }
            }
        }
    }

    pub fn gradient_norm(&self, x: &[f64]) -> f64 {
        let mut g = [0.0; MAX_DIM];
        self.gradient(x, &mut g);
        g[..self.dim].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `c * u`.
    pub fn scaled(&self, c: f64) -> Self {
        let spec = scale_spec(&self.spec, c);
        let mut f = Self::from_spec(spec).expect("scaling preserves validity");
        f.label = format!("{}*{}", c, self.label);
        f
    }

    /// `u(. - shift)`.
    pub fn translated(&self, shift: &[f64]) -> Self {
        let spec = translate_spec(&self.spec, shift);
        let mut f = Self::from_spec(spec).expect("translation preserves validity");
        f.label = format!("{}+shift", self.label);
        f
    }

    /// Composite Gauss rule over the support box with knots at the field's
    /// breakpoints, `panels` panels per knot gap and `order` nodes each.
    pub fn support_grid(&self, panels: usize, order: usize, margin: f64) -> TensorGrid {
        let axes = (0..self.dim)
            .map(|a| {
                let mut knots = self.breakpoints(a);
                knots.push(self.support_lo[a] - margin);
                knots.push(self.support_hi[a] + margin);
                composite_nodes(&knots, panels, order)
            })
            .collect();
        TensorGrid::new(axes)
    }

    /// Integral of `g(x, u(x), grad u(x))` over the support, refining the
    /// panel count until successive values agree to `rel_tol` or `max_nodes`
    /// would be exceeded.
    pub fn integrate<G>(&self, g: G, max_nodes: usize, rel_tol: f64) -> QuadratureResult
    where
        G: Fn(&[f64], f64, &[f64]) -> f64 + Sync + Send,
    {
        const ORDER: usize = 8;
        let eval = |panels: usize| {
            let grid = self.support_grid(panels, ORDER, 0.0);
            let v = grid.integrate(|x| {
                let mut grad = [0.0; MAX_DIM];
                self.gradient(x, &mut grad);
                g(x, self.evaluate(x), &grad[..self.dim])
            });
            (v, grid.len())
        };
        if self.is_zero() {
            return QuadratureResult::exact(0.0);
        }
        let mut panels = 1;
        let (mut prev, mut used) = eval(panels);
        let mut total_nodes = used as u64;
        loop {
            let (next, n) = eval(panels * 2);
            total_nodes += n as u64;
            let err = (next - prev).abs();
            let tol = rel_tol * next.abs().max(f64::MIN_POSITIVE);
            if err <= tol {
                return QuadratureResult {
                    value: next,
                    error_estimate: err,
                    nodes_used: total_nodes,
                    converged: true,
                };
            }
            panels *= 2;
            used = n;
            prev = next;
            if used * (1 << self.dim) > max_nodes {
                return QuadratureResult {
                    value: next,
                    error_estimate: err,
                    nodes_used: total_nodes,
                    converged: false,
                };
            }
        }
    }
}

/// `integral |grad u|^p dx` over the support.
pub fn gradient_lp_norm(field: &ScalarField, p: f64, max_nodes: usize) -> Result<QuadratureResult> {
    if !(p >= 1.0) {
        return Err(Error::invalid("p", format!("need p >= 1, got {p}")));
    }
    Ok(field.integrate(
        |_, _, g| g.iter().map(|v| v * v).sum::<f64>().powf(0.5 * p),
        max_nodes,
        1e-9,
    ))
}

/// `integral |u|^p dx` over the support.
pub fn lp_norm_pow(field: &ScalarField, p: f64, max_nodes: usize) -> Result<QuadratureResult> {
    if !(p >= 1.0) {
        return Err(Error::invalid("p", format!("need p >= 1, got {p}")));
    }
    Ok(field.integrate(|_, u, _| u.abs().powf(p), max_nodes, 1e-9))
}

type TermBounds = (Bound, Bound, Bound);

fn collect_terms(spec: &FieldSpec, terms: &mut Vec<Term>, parts: &mut Vec<TermBounds>) -> Result<usize> {
    let m = profile_maxima();
    let closed = |value| Bound {
        value,
        provenance: Provenance::ClosedForm,
    };
    let certified = |value| Bound {
        value,
        provenance: Provenance::Certified,
    };
    match spec {
        FieldSpec::Bump {
            center,
            radius,
            amplitude,
        } => {
            let dim = check_dim("center", center)?;
            if !(*radius > 0.0) || !radius.is_finite() {
                return Err(Error::invalid("radius", format!("must be positive, got {radius}")));
            }
            check_amplitude(*amplitude)?;
            let a = amplitude.abs();
            let hess = if dim == 1 { m.d2 } else { m.d2.max(m.d1_over_r) };
            terms.push(Term::Bump {
                center: to_array(center),
                inv_r2: 1.0 / (radius * radius),
                amp: *amplitude,
            });
            parts.push((
                certified(a * m.d1 / radius),
                certified(a * hess / (radius * radius)),
                closed(a / E),
            ));
            Ok(dim)
        }
        FieldSpec::ProductBump {
            center,
            radii,
            amplitude,
        } => {
            let dim = check_dim("center", center)?;
            if radii.len() != dim {
                return Err(Error::invalid("radii", "must match the dimension of center"));
            }
            if radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
                return Err(Error::invalid("radii", "must be positive"));
            }
            check_amplitude(*amplitude)?;
            let a = amplitude.abs();
            let rest = |k: usize| (1.0 / E).powi(k as i32);
            let lip = a * rest(dim - 1) * radii.iter().map(|r| (m.d1 / r).powi(2)).sum::<f64>().sqrt();
            let mut frob = 0.0;
            for (i, ri) in radii.iter().enumerate() {
                frob += (m.d2 / (ri * ri) * rest(dim - 1)).powi(2);
                for (j, rj) in radii.iter().enumerate() {
                    if i != j {
                        frob += (m.d1 * m.d1 / (ri * rj) * rest(dim - 2)).powi(2);
                    }
                }
            }
            let mut inv_r = [0.0; MAX_DIM];
            for (i, r) in radii.iter().enumerate() {
                inv_r[i] = 1.0 / r;
            }
            terms.push(Term::Product {
                center: to_array(center),
                inv_r,
                amp: *amplitude,
            });
            parts.push((certified(lip), certified(a * frob.sqrt()), closed(a * rest(dim))));
            Ok(dim)
        }
        FieldSpec::MollifiedIndicator {
            lo,
            hi,
            epsilon,
            amplitude,
        } => {
            let dim = check_dim("lo", lo)?;
            if hi.len() != dim {
                return Err(Error::invalid("hi", "must match the dimension of lo"));
            }
            let shortest = lo.iter().zip(hi).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
            if !(shortest > 0.0) {
                return Err(Error::invalid("hi", "box must have positive side lengths"));
            }
            if !(*epsilon > 0.0) || !(*epsilon < 0.5 * shortest) {
                return Err(Error::invalid(
                    "epsilon",
                    format!("need 0 < epsilon < {} (half the shortest side), got {epsilon}", 0.5 * shortest),
                ));
            }
            check_amplitude(*amplitude)?;
            let a = amplitude.abs();
            let z = mollifier_mass();
            let n = dim as f64;
            let eta = (1.0 / E) / (z * epsilon);
            let deta = m.d1 / (z * epsilon * epsilon);
            let lip = a * n.sqrt() * eta;
            let hess = a * (n * deta * deta + n * (n - 1.0) * eta.powi(4)).sqrt();
            terms.push(Term::Mollified {
                lo: to_array(lo),
                hi: to_array(hi),
                inv_eps: 1.0 / epsilon,
                amp: *amplitude,
            });
            parts.push((certified(lip), certified(hess), closed(a)));
            Ok(dim)
        }
        FieldSpec::Sum { terms: specs } => {
            if specs.is_empty() {
                return Err(Error::invalid("terms", "sum needs at least one term"));
            }
            let mut dim = None;
            for s in specs {
                let d = collect_terms(s, terms, parts)?;
                if *dim.get_or_insert(d) != d {
                    return Err(Error::invalid("terms", "all terms must share one dimension"));
                }
            }
            Ok(dim.unwrap_or(1))
        }
        FieldSpec::Zero { dim } => {
            if *dim == 0 || *dim > MAX_DIM {
                return Err(Error::UnsupportedDimension(*dim));
            }
            parts.push((closed(0.0), closed(0.0), closed(0.0)));
            Ok(*dim)
        }
    }
}

fn check_amplitude(a: f64) -> Result<()> {
    if a.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("amplitude", "must be finite"))
    }
}

fn term_support(t: &Term, dim: usize) -> (Vec<f64>, Vec<f64>, f64) {
    match t {
        Term::Bump { center, inv_r2, .. } => {
            let r = 1.0 / inv_r2.sqrt();
            let c = &center[..dim];
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (c.iter().map(|v| v - r).collect(), c.iter().map(|v| v + r).collect(), norm + r)
        }
        Term::Product { center, inv_r, .. } => {
            let lo: Vec<f64> = (0..dim).map(|i| center[i] - 1.0 / inv_r[i]).collect();
            let hi: Vec<f64> = (0..dim).map(|i| center[i] + 1.0 / inv_r[i]).collect();
            let rad = box_radius(&lo, &hi);
            (lo, hi, rad)
        }
        Term::Mollified { lo, hi, inv_eps, .. } => {
            let e = 1.0 / inv_eps;
            let lo: Vec<f64> = (0..dim).map(|i| lo[i] - e).collect();
            let hi: Vec<f64> = (0..dim).map(|i| hi[i] + e).collect();
            let rad = box_radius(&lo, &hi);
            (lo, hi, rad)
        }
    }
}

fn box_radius(lo: &[f64], hi: &[f64]) -> f64 {
    lo.iter()
        .zip(hi)
        .map(|(a, b)| a.abs().max(b.abs()).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn scale_spec(spec: &FieldSpec, c: f64) -> FieldSpec {
    let mut s = spec.clone();
    match &mut s {
        FieldSpec::Bump { amplitude, .. }
        | FieldSpec::ProductBump { amplitude, .. }
        | FieldSpec::MollifiedIndicator { amplitude, .. } => *amplitude *= c,
        FieldSpec::Sum { terms } => {
            for t in terms.iter_mut() {
                *t = scale_spec(t, c);
            }
        }
        FieldSpec::Zero { .. } => {}
    }
    s
}

fn translate_spec(spec: &FieldSpec, shift: &[f64]) -> FieldSpec {
    let add = |v: &mut Vec<f64>| v.iter_mut().zip(shift).for_each(|(a, b)| *a += b);
    let mut s = spec.clone();
    match &mut s {
        FieldSpec::Bump { center, .. } | FieldSpec::ProductBump { center, .. } => add(center),
        FieldSpec::MollifiedIndicator { lo, hi, .. } => {
            add(lo);
            add(hi);
        }
        FieldSpec::Sum { terms } => {
            for t in terms.iter_mut() {
                *t = translate_spec(t, shift);
            }
        }
        FieldSpec::Zero { .. } => {}
    }
    s
}

fn label_of(spec: &FieldSpec) -> String {
    match spec {
        FieldSpec::Bump {
            center,
            radius,
            amplitude,
        } => format!("bump{}d(r={radius},a={amplitude})", center.len()),
        FieldSpec::ProductBump { center, .. } => format!("product_bump{}d", center.len()),
        FieldSpec::MollifiedIndicator { lo, epsilon, .. } => {
            format!("mollified_indicator{}d(eps={epsilon})", lo.len())
        }
        FieldSpec::Sum { terms } => format!("sum{}", terms.len()),
        FieldSpec::Zero { dim } => format!("zero{dim}d"),
    }
}

/// The standard catalogue of test fields in dimension `dim`.
pub fn catalogue(dim: usize) -> Result<Vec<ScalarField>> {
    let origin = vec![0.0; dim];
    let mut shifted = vec![0.0; dim];
    shifted[0] = 0.9;
    let mut shifted_back = vec![0.0; dim];
    shifted_back[0] = -0.8;
    let radii: Vec<f64> = (0..dim).map(|i| 1.0 - 0.25 * i as f64).collect();
    let narrow: Vec<f64> = (0..dim).map(|i| if i % 2 == 0 { 0.3 } else { -0.2 }).collect();
    let fields = vec![
        make_bump(&origin, 1.0, 1.0)?.with_label(format!("bump{dim}d")),
        ScalarField::from_spec(FieldSpec::ProductBump {
            center: origin.clone(),
            radii,
            amplitude: 2.0,
        })?
        .with_label(format!("product_bump{dim}d")),
        ScalarField::from_spec(FieldSpec::Sum {
            terms: vec![
                FieldSpec::Bump {
                    center: shifted,
                    radius: 0.6,
                    amplitude: 1.0,
                },
                FieldSpec::Bump {
                    center: shifted_back,
                    radius: 0.5,
                    amplitude: -0.7,
                },
            ],
        })?
        .with_label(format!("bump_pair{dim}d")),
        make_mollified_indicator(&vec![-0.5; dim], &vec![0.5; dim], 0.2)?.with_label(format!("mollified_box{dim}d")),
        make_bump(&narrow, 0.5, 2.0)?.with_label(format!("narrow_bump{dim}d")),
    ];
    Ok(fields)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;
    use rand::Rng;

    #[test]
    fn bump_examples() {
        let u = make_bump(&[0.0], 1.0, 1.0).unwrap();
        assert!((u.evaluate(&[0.0]) - (-1.0f64).exp()).abs() < 1e-16);
        assert_eq!(u.evaluate(&[1.5]), 0.0);
        assert_eq!(u.evaluate(&[-1.0]), 0.0);
        assert!(make_bump(&[0.0], 0.0, 1.0).is_err());
        assert!(make_bump(&[0.0], -1.0, 1.0).is_err());
    }

    #[test]
    fn bump_gradient_norm_l1() {
        let u = make_bump(&[0.0], 1.0, 1.0).unwrap();
        let r = gradient_lp_norm(&u, 1.0, 1 << 16).unwrap();
        assert!((r.value - 2.0 / E).abs() < 1e-9, "{r:?}");
        assert!(r.converged);
    }

    #[test]
    fn mollifier_mass_matches_reference() {
        // Adaptive quadrature reference (scipy quad, 1e-14).
        assert!((mollifier_mass() - 0.443_993_816_168_079_4).abs() < 1e-13);
        assert!((mollifier_cdf(0.0) - 0.5).abs() < 1e-13);
        assert!((mollifier_cdf(0.999_999) - 1.0).abs() < 1e-12);
        // CDF derivative equals the density.
        for s in [-0.9, -0.3, 0.1, 0.7] {
            let h = 1e-5;
            let fd = (mollifier_cdf(s + h) - mollifier_cdf(s - h)) / (2.0 * h);
            assert!((fd - mollifier_density(s).0).abs() < 1e-8);
        }
    }

    #[test]
    fn tabulated_cdf_matches_direct_quadrature() {
        for i in 0..=200 {
            let s = -1.0 + i as f64 / 100.0;
            let direct = 0.5 + s.signum() * half_profile_integral(s.abs()) / mollifier_mass();
            assert!((mollifier_cdf(s) - direct).abs() < 1e-12, "s = {s}");
        }
    }

    #[test]
    fn mollified_indicator_examples() {
        let u = make_mollified_indicator(&[0.0], &[1.0], 0.1).unwrap();
        assert!((u.evaluate(&[0.5]) - 1.0).abs() < 1e-14);
        assert_eq!(u.evaluate(&[-0.2]), 0.0);
        assert!((u.evaluate(&[0.1]) - 1.0).abs() < 1e-14);
        for eps in [0.2, 0.1, 0.05, 0.025] {
            let u = make_mollified_indicator(&[0.0], &[1.0], eps).unwrap();
            let tv = gradient_lp_norm(&u, 1.0, 1 << 16).unwrap();
            assert!((tv.value - 2.0).abs() < 1e-8, "eps {eps}: {tv:?}");
        }
        assert!(make_mollified_indicator(&[0.0], &[1.0], 0.5).is_err());
        assert!(make_mollified_indicator(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn bump_l2_gradient_matches_reference() {
        // scipy quad reference for integral |phi'|^2 on [-1, 1].
        let u = make_bump(&[0.0], 1.0, 1.0).unwrap();
        let r = gradient_lp_norm(&u, 2.0, 1 << 16).unwrap();
        assert!((r.value - 0.409_587_060_752_770_2).abs() < 1e-9, "{r:?}");
        let u2 = make_bump(&[0.0, 0.0], 1.0, 1.0).unwrap();
        let r1 = gradient_lp_norm(&u2, 1.0, 1 << 20).unwrap();
        assert!((r1.value - 1.394_847_711_112_935_4).abs() < 1e-6, "{r1:?}");
    }

    #[test]
    fn zero_field_has_zero_norms() {
        let z = ScalarField::from_spec(FieldSpec::Zero { dim: 2 }).unwrap();
        assert_eq!(gradient_lp_norm(&z, 1.0, 1000).unwrap().value, 0.0);
        assert_eq!(z.evaluate(&[0.1, 0.2]), 0.0);
    }

    fn random_point(rng: &mut impl Rng, dim: usize, scale: f64) -> [f64; MAX_DIM] {
        let mut p = [0.0; MAX_DIM];
        for v in p.iter_mut().take(dim) {
            *v = scale * (2.0 * rng.random::<f64>() - 1.0);
        }
        p
    }

    #[test]
    fn support_is_exact() {
        let s = RandomStream::new(1, 0);
        for dim in 1..=3 {
            for u in catalogue(dim).unwrap() {
                let mut rng = s.at(dim as u64);
                let r = u.support_radius();
                let mut checked = 0;
                while checked < 10_000 {
                    let mut x = random_point(&mut rng, dim, 3.0 * r);
                    let norm = x[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm <= r {
                        let scale = (r * (1.0 + rng.random::<f64>())) / norm.max(1e-12);
                        x.iter_mut().for_each(|v| *v *= scale);
                    }
                    assert_eq!(u.evaluate(&x[..dim]), 0.0, "{}", u.label());
                    checked += 1;
                }
            }
        }
    }

    #[test]
    fn lipschitz_and_taylor_bounds_hold() {
        let s = RandomStream::new(2, 0);
        for dim in 1..=3 {
            for u in catalogue(dim).unwrap() {
                let (lo, hi) = u.support_box();
                let mut rng = s.at(10 + dim as u64);
                for _ in 0..10_000 {
                    let mut x = [0.0; MAX_DIM];
                    let mut y = [0.0; MAX_DIM];
                    for i in 0..dim {
                        let w = hi[i] - lo[i];
                        x[i] = lo[i] - 0.1 * w + 1.2 * w * rng.random::<f64>();
                        let h = 0.3 * w * (2.0 * rng.random::<f64>() - 1.0) * rng.random::<f64>().powi(3);
                        y[i] = x[i] + h;
                    }
                    let (ux, uy) = (u.evaluate(&x[..dim]), u.evaluate(&y[..dim]));
                    let d2: f64 = (0..dim).map(|i| (x[i] - y[i]).powi(2)).sum();
                    let d = d2.sqrt();
                    assert!((ux - uy).abs() <= u.lip() * d + 1e-14, "{} lip", u.label());
                    let mut g = [0.0; MAX_DIM];
                    u.gradient(&x[..dim], &mut g);
                    let lin: f64 = (0..dim).map(|i| g[i] * (y[i] - x[i])).sum();
                    assert!((uy - ux - lin).abs() <= u.hess() * d2 + 1e-13, "{} taylor", u.label());
                    assert!(ux.abs() <= u.sup_norm());
                }
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for dim in 1..=3 {
            for u in catalogue(dim).unwrap() {
                let mut x = [0.0; MAX_DIM];
                for (i, v) in x.iter_mut().enumerate().take(dim) {
                    *v = 0.13 + 0.11 * i as f64;
                }
                if u.label().starts_with("mollified") {
                    x[0] = 0.45;
                }
                let mut g = [0.0; MAX_DIM];
                u.gradient(&x[..dim], &mut g);
                let mut errs = Vec::new();
                for h in [1e-2, 5e-3, 2.5e-3] {
                    let mut e = 0.0f64;
                    for i in 0..dim {
                        let mut xp = x;
                        let mut xm = x;
                        xp[i] += h;
                        xm[i] -= h;
                        let fd = (u.evaluate(&xp[..dim]) - u.evaluate(&xm[..dim])) / (2.0 * h);
                        e = e.max((fd - g[i]).abs());
                    }
                    errs.push(e);
                }
                // Second order: halving h divides the error by about four.
                assert!(errs[2] < errs[0] / 10.0 || errs[2] < 1e-10, "{}: {errs:?}", u.label());
            }
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let json = r#"{"kind":"sum","terms":[{"kind":"bump","center":[0.0],"radius":1.0},
            {"kind":"mollified_indicator","lo":[2.0],"hi":[3.0],"epsilon":0.1,"amplitude":2.0}]}"#;
        let spec: FieldSpec = serde_json::from_str(json).unwrap();
        let u = ScalarField::from_spec(spec.clone()).unwrap();
        assert!((u.evaluate(&[2.5]) - 2.0).abs() < 1e-14);
        let back: FieldSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn scaling_and_translation() {
        let u = make_bump(&[0.2, -0.1], 0.8, 1.0).unwrap();
        let v = u.scaled(3.0);
        let w = u.translated(&[1.0, 2.0]);
        let x = [0.3, 0.1];
        assert!((v.evaluate(&x) - 3.0 * u.evaluate(&x)).abs() < 1e-15);
        assert!((w.evaluate(&[1.3, 2.1]) - u.evaluate(&x)).abs() < 1e-15);
        assert!((v.lip() - 3.0 * u.lip()).abs() < 1e-12);
    }
}
