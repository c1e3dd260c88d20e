//! Measures of the superlevel sets
//! `E_lambda = {(x, y) : |u(x) - u(y)| >= lambda |x - y|^alpha}` in
//! `R^N x R^N`, the weak-`L^p` quasinorm `sup_lambda lambda^p |E_lambda|`, its
//! large-`lambda` plateau and the radial sandwich bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::fields::ScalarField;
use crate::quadrature::{composite_nodes, sphere_area, sphere_rule, QuadratureResult, TensorGrid};
use crate::rng::{unit_vector, RandomStream};
use crate::MAX_DIM;

/// Largest dimension for which pair measures are computed.
pub const MAX_PAIR_DIM: usize = 3;

/// The difference quotient `(u(x) - u(y)) / |x - y|^alpha` of a field.
#[derive(Debug, Clone, Copy)]
pub struct LevelSetQuery<'a> {
    pub field: &'a ScalarField,
    pub p: f64,
    pub alpha: f64,
}

impl<'a> LevelSetQuery<'a> {
    pub fn new(field: &'a ScalarField, p: f64, alpha: f64) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::invalid("p", format!("need 1 <= p < inf, got {p}")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid("alpha", format!("need alpha > 0, got {alpha}")));
        }
        if field.dim() > MAX_PAIR_DIM {
            return Err(Error::UnsupportedDimension(field.dim()));
        }
        Ok(Self { field, p, alpha })
    }

    /// The quotient with `alpha = N/p + 1`.
    pub fn critical(field: &'a ScalarField, p: f64) -> Result<Self> {
        Self::new(field, p, field.dim() as f64 / p + 1.0)
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    /// No pair with `|x - y| > r_max` lies in `E_lambda`: `|u(x) - u(y)|` is
    /// at most `L r` and at most `2 |u|_inf`.
    pub fn r_max(&self, lambda: f64) -> f64 {
        let u = self.field;
        let mut r = (2.0 * u.sup_norm() / lambda).powf(1.0 / self.alpha);
        if self.alpha > 1.0 {
            r = r.min((u.lip() / lambda).powf(1.0 / (self.alpha - 1.0)));
        }
        r
    }

    pub fn contains(&self, lambda: f64, x: &[f64], y: &[f64]) -> bool {
        let d = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        d > 0.0 && (self.field.evaluate(x) - self.field.evaluate(y)).abs() >= lambda * d.powf(self.alpha)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("lambda", format!("must be positive and finite, got {lambda}")))
    }
}

/// Resolution of a radial scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    /// Uniform points on `(0, r_max]`.
    pub scan: usize,
    /// Extra points `r_max / scan * 2^-k` resolving short intervals at 0.
    pub geometric: usize,
    /// Bisection tolerance relative to `r_max`.
    pub tol: f64,
    /// Crossings beyond this flag the profile.
    pub crossing_cap: usize,
}

impl ScanParams {
    pub fn for_dim(dim: usize) -> Self {
        let (scan, geometric) = match dim {
            1 => (1024, 24),
            2 => (64, 12),
            _ => (32, 8),
        };
        Self {
            scan,
            geometric,
            tol: 1e-10,
            crossing_cap: 64,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.scan < 16 {
            return Err(Error::invalid("scan", format!("need at least 16 scan points, got {}", self.scan)));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::invalid("tol", "bisection tolerance must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// The set `{r in (0, r_max] : (x, x + r omega) in E_lambda}` as sorted,
/// disjoint intervals `(lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub intervals: Vec<(f64, f64)>,
    pub r_max: f64,
    pub crossings: usize,
    /// The crossing cap was hit; later endpoints are only grid-accurate.
    pub flagged: bool,
}

impl RadialProfile {
    pub fn contains(&self, r: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| r > lo && r <= hi)
    }

    /// Whether `(0, r]` lies inside the profile up to `slack`.
    pub fn covers_initial_segment(&self, r: f64, slack: f64) -> bool {
        if r <= 0.0 {
            return true;
        }
        match self.intervals.first() {
            Some(&(lo, hi)) => lo <= slack && hi >= r - slack,
            None => false,
        }
    }

    /// `integral 1_profile(r) r^{N-1} dr`.
    pub fn radial_measure(&self, dim: usize) -> f64 {
        let n = dim as i32;
        self.intervals
            .iter()
            .map(|&(lo, hi)| (hi.powi(n) - lo.powi(n)) / dim as f64)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ScanOutcome {
    crossings: usize,
    flagged: bool,
}

fn bisect<G: FnMut(f64) -> f64>(g: &mut G, mut a: f64, mut b: f64, a_inside: bool, tol: f64) -> f64 {
    while b - a > tol {
        let m = 0.5 * (a + b);
        if (g(m) >= 0.0) == a_inside {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Scans `g` on `(0, r_max]`, reporting every maximal interval with
/// `g >= 0` to `visit`. Membership at the smallest probe is taken to extend
/// down to 0.
fn scan_ray<G, V>(mut g: G, r_max: f64, params: &ScanParams, mut visit: V) -> ScanOutcome
where
    G: FnMut(f64) -> f64,
    V: FnMut(f64, f64),
{
    let mut out = ScanOutcome::default();
    if !(r_max > 0.0) {
        return out;
    }
    let h = r_max / params.scan as f64;
    let tol = params.tol * r_max;
    let mut prev: Option<(f64, bool)> = None;
    let mut start: Option<f64> = None;
    let probes = (1..=params.geometric)
        .rev()
        .map(|k| h * 0.5f64.powi(k as i32))
        .chain((1..=params.scan).map(|j| if j == params.scan { r_max } else { j as f64 * h }));
    for r in probes {
        let inside = g(r) >= 0.0;
        match prev {
            None => {
                if inside {
                    start = Some(0.0);
                }
            }
            Some((r0, was_inside)) if was_inside != inside => {
                out.crossings += 1;
                let c = if out.crossings > params.crossing_cap {
                    out.flagged = true;
                    0.5 * (r0 + r)
                } else {
                    bisect(&mut g, r0, r, was_inside, tol)
                };
                if inside {
                    start = Some(c);
                } else if let Some(s) = start.take() {
                    visit(s, c);
                }
            }
            _ => {}
        }
        prev = Some((r, inside));
    }
    if let Some(s) = start {
        visit(s, r_max);
    }
    out
}

fn ray_function<'b>(q: &'b LevelSetQuery<'_>, lambda: f64, x: &'b [f64], ux: f64, omega: &'b [f64]) -> impl FnMut(f64) -> f64 + 'b {
    let n = q.dim();
    let alpha = q.alpha;
    move |r: f64| {
        let mut y = [0.0; MAX_DIM];
        for i in 0..n {
            y[i] = x[i] + r * omega[i];
        }
        (q.field.evaluate(&y[..n]) - ux).abs() - lambda * r.powf(alpha)
    }
}

/// Membership profile of `E_lambda` along the ray `x + r omega`.
pub fn radial_levelset(
    q: &LevelSetQuery<'_>,
    lambda: f64,
    x: &[f64],
    omega: &[f64],
    params: &ScanParams,
) -> Result<RadialProfile> {
    check_lambda(lambda)?;
    params.validate()?;
    let n = q.dim();
    if x.len() != n || omega.len() != n {
        return Err(Error::invalid("x", "point and direction must match the field dimension"));
    }
    let norm = omega.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("omega", "direction must be a unit vector"));
    }
    let r_max = q.r_max(lambda);
    let ux = q.field.evaluate(x);
    let mut intervals = Vec::new();
    let outcome = scan_ray(ray_function(q, lambda, x, ux, omega), r_max, params, |lo, hi| {
        intervals.push((lo, hi))
    });
    Ok(RadialProfile {
        intervals,
        r_max,
        crossings: outcome.crossings,
        flagged: outcome.flagged,
    })
}

/// Resolution of the polar pair-measure estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarBudget {
    /// Panels per knot gap of the base-point grid (the error estimate
    /// reruns with half as many).
    pub panels: usize,
    /// Gauss nodes per panel.
    pub order: usize,
    pub sphere_order: usize,
    pub scan: ScanParams,
    /// Relative refinement difference accepted as converged.
    pub rel_tol: f64,
}

impl PolarBudget {
    pub fn for_dim(dim: usize) -> Self {
        let (panels, sphere_order) = match dim {
            1 => (16, 1),
            2 => (4, 32),
            _ => (2, 8),
        };
        Self {
            panels,
            order: 6,
            sphere_order,
            scan: ScanParams::for_dim(dim),
            rel_tol: 0.02,
        }
    }

    /// Doubles every resolution parameter.
    pub fn refined(&self) -> Self {
        let mut b = *self;
        b.panels *= 2;
        b.sphere_order *= 2;
        b.scan.scan *= 2;
        b
    }

    fn validate(&self) -> Result<()> {
        if self.panels < 2 {
            return Err(Error::invalid("panels", "need at least 2 panels for the refinement estimate"));
        }
        if self.order == 0 || self.sphere_order == 0 {
            return Err(Error::invalid("order", "quadrature orders must be positive"));
        }
        self.scan.validate()
    }
}

/// Base-point grid covering the support box dilated by `r`.
fn dilated_grid(field: &ScalarField, r: f64, panels: usize, order: usize) -> TensorGrid {
    let (lo, hi) = field.support_box();
    let axes = (0..field.dim())
        .map(|a| {
            let mut knots: Vec<f64> = field
                .breakpoints(a)
                .into_iter()
                .filter(|k| *k > lo[a] - r && *k < hi[a] + r)
                .collect();
            knots.push(lo[a] - r);
            knots.push(hi[a] + r);
            composite_nodes(&knots, panels, order)
        })
        .collect();
    TensorGrid::new(axes)
}

fn polar_pass(q: &LevelSetQuery<'_>, lambda: f64, panels: usize, order: usize, sphere_order: usize, scan: &ScanParams) -> Result<(f64, u64, u64)> {
    let n = q.dim();
    let r_max = q.r_max(lambda);
    let grid = dilated_grid(q.field, r_max, panels, order);
    let sphere = sphere_rule(n, sphere_order)?;
    let parts = exec::map_chunks(grid.len(), 16, |range| {
        let mut sum = 0.0;
        let mut flagged = 0u64;
        let mut x = [0.0; MAX_DIM];
        for i in range {
            let wx = grid.node(i, &mut x);
            let xs = &x[..n];
            if q.field.support_distance(xs) > r_max {
                continue;
            }
            let ux = q.field.evaluate(xs);
            let mut inner = 0.0;
            for (omega, wo) in sphere.iter() {
                let mut radial = 0.0;
                let out = scan_ray(ray_function(q, lambda, xs, ux, omega), r_max, scan, |lo, hi| {
                    radial += (hi.powi(n as i32) - lo.powi(n as i32)) / n as f64;
                });
                flagged += out.flagged as u64;
                inner += wo * radial;
            }
            sum += wx * inner;
        }
        (sum, flagged)
    });
    let (value, flagged) = parts
        .into_iter()
        .fold((0.0, 0), |(s, f), (a, b)| (s + a, f + b));
    Ok((value, (grid.len() * sphere.len()) as u64, flagged))
}

/// `|E_lambda|` by polar coordinates about each base point:
/// `integral_x integral_S sum (hi^N - lo^N)/N`, with base points on a
/// tensor Gauss grid over the support dilated by `r_max` and directions
/// from a sphere rule. The error estimate compares against a run with half
/// the panels and sphere order.
pub fn pair_measure_polar(q: &LevelSetQuery<'_>, lambda: f64, budget: &PolarBudget) -> Result<QuadratureResult> {
    check_lambda(lambda)?;
    budget.validate()?;
    if q.field.is_zero() {
        return Ok(QuadratureResult::exact(0.0));
    }
    let coarse_sphere = if q.dim() == 1 {
        budget.sphere_order
    } else {
        (budget.sphere_order / 2).max(1)
    };
    let (fine, n_fine, flagged) = polar_pass(q, lambda, budget.panels, budget.order, budget.sphere_order, &budget.scan)?;
    let (coarse, n_coarse, _) = polar_pass(q, lambda, budget.panels / 2, budget.order, coarse_sphere, &budget.scan)?;
    let mut r = QuadratureResult::from_refinement(fine, coarse, n_fine + n_coarse, budget.rel_tol * fine.abs());
    r.converged &= flagged == 0;
    Ok(r)
}

/// Minimum sample count for the Monte Carlo pair estimator.
pub const MIN_MC_SAMPLES: u64 = 1000;

/// Monte Carlo `|E_lambda|`: `x` uniform on the dilated support box,
/// `omega` uniform on the sphere and `r` with density proportional to
/// `r^{N-1}` on `(0, r_max]`. The same uniforms are reused for every
/// `lambda`, so profiles use common random numbers.
pub fn pair_measure_mc(q: &LevelSetQuery<'_>, lambda: f64, n: u64, stream: RandomStream) -> Result<QuadratureResult> {
    check_lambda(lambda)?;
    if n < MIN_MC_SAMPLES {
        return Err(Error::invalid("samples", format!("need at least {MIN_MC_SAMPLES}, got {n}")));
    }
    let dim = q.dim();
    let r_max = q.r_max(lambda);
    if q.field.is_zero() || r_max == 0.0 {
        return Ok(QuadratureResult {
            nodes_used: n,
            ..QuadratureResult::exact(0.0)
        });
    }
    let (lo, hi) = q.field.support_box();
    let lo: Vec<f64> = lo.iter().map(|v| v - r_max).collect();
    let width: Vec<f64> = hi.iter().zip(&lo).map(|(h, l)| h + r_max - l).collect();
    let volume: f64 = width.iter().product();
    let weight = volume * sphere_area(dim) * r_max.powi(dim as i32) / dim as f64;
    let inv_dim = 1.0 / dim as f64;
    crate::quadrature::monte_carlo_weighted(
        |rng, buf| {
            let (x, rest) = buf.split_at_mut(dim);
            for i in 0..dim {
                x[i] = lo[i] + width[i] * rng.random::<f64>();
            }
            let omega = &mut rest[..dim];
            unit_vector(rng, omega);
            let r = r_max * rng.random::<f64>().powf(inv_dim);
            let mut y = [0.0; MAX_DIM];
            for i in 0..dim {
                y[i] = x[i] + r * omega[i];
            }
            if q.contains(lambda, x, &y[..dim]) {
                weight
            } else {
                0.0
            }
        },
        2 * dim,
        n,
        stream,
    )
}

/// Which pair-measure estimator to use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    Polar(PolarBudget),
    MonteCarlo { samples: u64, stream: RandomStream },
}

impl Estimator {
    pub fn tag(&self) -> &'static str {
        match self {
            Estimator::Polar(_) => "polar",
            Estimator::MonteCarlo { .. } => "mc",
        }
    }

    /// The same estimator at twice the resolution.
    pub fn refined(&self) -> Self {
        match *self {
            Estimator::Polar(b) => Estimator::Polar(b.refined()),
            Estimator::MonteCarlo { samples, stream } => Estimator::MonteCarlo {
                samples: samples * 4,
                stream,
            },
        }
    }
}

pub fn pair_measure(q: &LevelSetQuery<'_>, lambda: f64, estimator: &Estimator) -> Result<QuadratureResult> {
    match estimator {
        Estimator::Polar(b) => pair_measure_polar(q, lambda, b),
        Estimator::MonteCarlo { samples, stream } => pair_measure_mc(q, lambda, *samples, *stream),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub lambda: f64,
    pub mu_hat: f64,
    pub stderr: f64,
    pub lambda_pow_p_mu: f64,
    pub converged: bool,
}

/// `lambda -> |E_lambda|` on an ascending grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionProfile {
    pub p: f64,
    pub alpha: f64,
    pub estimator: String,
    pub rows: Vec<ProfileRow>,
    /// Adjacent pairs where the measure grows by more than three combined
    /// error bars.
    pub monotonicity_violations: usize,
}

impl DistributionProfile {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }

    pub fn max_scaled(&self) -> f64 {
        self.rows.iter().map(|r| r.lambda_pow_p_mu).fold(0.0, f64::max)
    }

    /// CSV with columns `lambda,mu_hat,stderr,lambda_pow_p_mu,estimator`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["lambda", "mu_hat", "stderr", "lambda_pow_p_mu", "estimator"])
            .map_err(io_err)?;
        for r in &self.rows {
            w.write_record([
                format!("{:e}", r.lambda),
                format!("{:e}", r.mu_hat),
                format!("{:e}", r.stderr),
                format!("{:e}", r.lambda_pow_p_mu),
                self.estimator.clone(),
            ])
            .map_err(io_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Consistency(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub(crate) fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Consistency(format!("csv: {e}"))
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn lambda_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("lambda_grid", "grid is empty"));
    }
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::invalid("lambda_grid", format!("need 0 < lo <= hi, got [{lo}, {hi}]")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect())
}

/// 64 log-spaced points on `[L/10, 1000 L]`.
pub fn default_lambda_grid(field: &ScalarField) -> Vec<f64> {
    let l = if field.lip() > 0.0 { field.lip() } else { 1.0 };
    lambda_grid(0.1 * l, 1e3 * l, 64).expect("valid default grid")
}

pub fn distribution_profile(q: &LevelSetQuery<'_>, lambdas: &[f64], estimator: &Estimator) -> Result<DistributionProfile> {
    if lambdas.is_empty() {
        return Err(Error::invalid("lambda_grid", "grid is empty"));
    }
    for w in lambdas.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::invalid("lambda_grid", "grid must be strictly ascending"));
        }
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let m = pair_measure(q, lambda, estimator)?;
        rows.push(ProfileRow {
            lambda,
            mu_hat: m.value,
            stderr: m.error_estimate,
            lambda_pow_p_mu: lambda.powf(q.p) * m.value,
            converged: m.converged,
        });
    }
    let monotonicity_violations = rows
        .windows(2)
        .filter(|w| w[1].mu_hat > w[0].mu_hat + 3.0 * (w[0].stderr + w[1].stderr) + 1e-14 * w[0].mu_hat.abs())
        .count();
    Ok(DistributionProfile {
        p: q.p,
        alpha: q.alpha,
        estimator: estimator.tag().to_string(),
        rows,
        monotonicity_violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasinormEstimate {
    /// `sup_lambda lambda^p |E_lambda|`.
    pub sup: f64,
    pub lambda_star: f64,
    /// `sup^{1/p}`.
    pub quasinorm: f64,
    /// The grid maximum sits at an end of the grid, so the supremum may lie
    /// outside it.
    pub at_grid_edge: bool,
    pub converged: bool,
}

/// Supremum of `lambda^p mu_hat` over the profile, refined by `refine`
/// golden-section steps in `log lambda` between the neighbours of the
/// (smallest) grid argmax.
pub fn weak_quasinorm(
    q: &LevelSetQuery<'_>,
    profile: &DistributionProfile,
    estimator: &Estimator,
    refine: usize,
) -> Result<QuasinormEstimate> {
    if profile.rows.is_empty() {
        return Err(Error::invalid("profile", "profile is empty"));
    }
    let mut best = 0;
    for (i, r) in profile.rows.iter().enumerate() {
        if r.lambda_pow_p_mu > profile.rows[best].lambda_pow_p_mu {
            best = i;
        }
    }
    let rows = &profile.rows;
    let mut sup = rows[best].lambda_pow_p_mu;
    let mut lambda_star = rows[best].lambda;
    let mut converged = rows[best].converged;
    let at_grid_edge = rows.len() > 1 && (best == 0 || best == rows.len() - 1) && sup > 0.0;
    if refine > 0 && best > 0 && best + 1 < rows.len() && sup > 0.0 {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut a = rows[best - 1].lambda.ln();
        let mut b = rows[best + 1].lambda.ln();
        let eval = |t: f64| -> Result<(f64, bool)> {
            let l = t.exp();
            let m = pair_measure(q, l, estimator)?;
            Ok((l.powf(q.p) * m.value, m.converged))
        };
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, cc) = eval(c)?;
        let (mut fd, cd) = eval(d)?;
        let mut seen = [(c, fc, cc), (d, fd, cd)].to_vec();
        for _ in 0..refine.saturating_sub(2) {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                let (v, cv) = eval(c)?;
                fc = v;
                seen.push((c, v, cv));
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                let (v, cv) = eval(d)?;
                fd = v;
                seen.push((d, v, cv));
            }
        }
        for (t, v, cv) in seen {
            if v > sup {
                sup = v;
                lambda_star = t.exp();
                converged = cv;
            }
        }
    }
    Ok(QuasinormEstimate {
        sup,
        lambda_star,
        quasinorm: sup.powf(1.0 / q.p),
        at_grid_edge,
        converged,
    })
}

/// Plateau of `lambda^p |E_lambda|` over the last rows of a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitEstimate {
    pub plateau: f64,
    /// Largest relative deviation from the plateau inside the window.
    pub flatness: f64,
    pub window: usize,
    pub tolerance: f64,
    pub converged: bool,
}

/// Default flatness accepted as a plateau.
pub const PLATEAU_TOL: f64 = 0.03;

pub fn tail_limit(profile: &DistributionProfile, window: usize, tol: f64) -> Result<LimitEstimate> {
    let n = profile.rows.len();
    if window == 0 || window > n {
        return Err(Error::invalid("window", format!("window {window} does not fit a grid of {n} rows")));
    }
    let tail = &profile.rows[n - window..];
    let plateau = tail.iter().map(|r| r.lambda_pow_p_mu).sum::<f64>() / window as f64;
    let flatness = if plateau == 0.0 {
        if tail.iter().all(|r| r.lambda_pow_p_mu == 0.0) {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        tail.iter()
            .map(|r| ((r.lambda_pow_p_mu - plateau) / plateau).abs())
            .fold(0.0, f64::max)
    };
    Ok(LimitEstimate {
        plateau,
        flatness,
        window,
        tolerance: tol,
        converged: flatness < tol,
    })
}

/// Radii `R_lo <= R_hi` with `(0, R_lo] subset E_lambda(x, omega) subset (0, R_hi]`
/// for the critical quotient and `lambda > L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichBounds {
    pub lower: f64,
    pub upper: f64,
    pub delta: f64,
    /// `|grad u(x) . omega|`.
    pub slope: f64,
}

/// Inner radius from the second-order Taylor bound
/// (`R_lo^N = min{(delta g / A)^N, ((1 - delta) g / lambda)^p}` with
/// `g = |grad u(x) . omega|`) and outer radius
/// `R_hi^N = ((g + A (L/lambda)^{p/N}) / lambda)^p`, zero when
/// `dist(x, supp u) > 1`.
pub fn sandwich_bounds(field: &ScalarField, p: f64, lambda: f64, x: &[f64], omega: &[f64], delta: f64) -> Result<SandwichBounds> {
    check_lambda(lambda)?;
    let l = field.lip();
    if !(lambda > l) {
        return Err(Error::Precondition(format!("sandwich radii need lambda > L = {l}, got {lambda}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("need 0 < delta < 1, got {delta}")));
    }
    let n = field.dim();
    let nf = n as f64;
    let mut grad = [0.0; MAX_DIM];
    field.gradient(x, &mut grad);
    let g = (0..n).map(|i| grad[i] * omega[i]).sum::<f64>().abs();
    let a = field.hess();
    let second = ((1.0 - delta) * g / lambda).powf(p);
    let lower_n = if a > 0.0 { (delta * g / a).powf(nf).min(second) } else { second };
    let upper = if field.support_distance(x) <= 1.0 {
        ((g + a * (l / lambda).powf(p / nf)) / lambda).powf(p / nf)
    } else {
        0.0
    };
    Ok(SandwichBounds {
        lower: lower_n.powf(1.0 / nf),
        upper,
        delta,
        slope: g,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub lambda: f64,
    pub delta: f64,
    pub samples: u64,
    /// `(0, R_lo]` not contained in the scanned profile.
    pub lower_violations: u64,
    /// A profile interval reaching beyond `R_hi`.
    pub upper_violations: u64,
    pub flagged_profiles: u64,
    /// Samples with `R_lo > 0` whose increments `u(x + r omega) - u(x)`
    /// for `r <= R_lo` drown in rounding error, so the inner bound is
    /// untestable.
    pub unresolved: u64,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.lower_violations == 0 && self.upper_violations == 0
    }
}

/// Samples base points on the support box dilated by 1 and uniform
/// directions. The outer radius is checked against a radial scan of the
/// critical quotient, the inner one by direct membership tests at
/// `R_lo 2^-k`.
pub fn verify_sandwich(
    field: &ScalarField,
    p: f64,
    lambda: f64,
    samples: u64,
    delta: f64,
    stream: RandomStream,
    scan: &ScanParams,
) -> Result<SandwichReport> {
    let q = LevelSetQuery::critical(field, p)?;
    let mut report = SandwichReport {
        lambda,
        delta,
        samples,
        lower_violations: 0,
        upper_violations: 0,
        flagged_profiles: 0,
        unresolved: 0,
    };
    if field.is_zero() {
        return Ok(report);
    }
    if !(lambda > field.lip()) {
        return Err(Error::Precondition(format!("sandwich check needs lambda > L = {}", field.lip())));
    }
    let n = field.dim();
    let (lo, hi) = field.support_box();
    // Increments below this size are indistinguishable from rounding.
    let resolvable = 1e-11 * field.sup_norm();
    let outcomes = exec::map_indices(samples as usize, |i| -> Result<[bool; 4]> {
        let mut rng = stream.at(i as u64);
        let mut x = [0.0; MAX_DIM];
        let mut omega = [0.0; MAX_DIM];
        for a in 0..n {
            x[a] = lo[a] - 1.0 + (hi[a] - lo[a] + 2.0) * rng.random::<f64>();
        }
        unit_vector(&mut rng, &mut omega[..n]);
        let (xs, os) = (&x[..n], &omega[..n]);
        let prof = radial_levelset(&q, lambda, xs, os, scan)?;
        let b = sandwich_bounds(field, p, lambda, xs, os, delta)?;
        let slack = 4.0 * scan.tol * prof.r_max + 1e-15;
        let upper_bad = prof.intervals.iter().any(|&(_, h)| h > b.upper * (1.0 + 1e-9) + slack);
        let mut lower_bad = false;
        let mut tested = false;
        let mut r = b.lower * (1.0 - 1e-6);
        for _ in 0..12 {
            if b.slope * r <= resolvable {
                break;
            }
            tested = true;
            let mut y = [0.0; MAX_DIM];
            for a in 0..n {
                y[a] = xs[a] + r * os[a];
            }
            lower_bad |= !q.contains(lambda, xs, &y[..n]);
            r *= 0.5;
        }
        Ok([lower_bad, upper_bad, prof.flagged, b.lower > 0.0 && !tested])
    });
    for o in outcomes {
        let [l, u, f, unres] = o?;
        report.lower_violations += l as u64;
        report.upper_violations += u as u64;
        report.flagged_profiles += f as u64;
        report.unresolved += unres as u64;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_bump, FieldSpec};
    use crate::quadrature::k_constant;

    fn bump1() -> ScalarField {
        make_bump(&[0.0], 1.0, 1.0).unwrap()
    }

    #[test]
    fn zero_field_has_empty_profiles() {
        let z = ScalarField::from_spec(FieldSpec::Zero { dim: 1 }).unwrap();
        let q = LevelSetQuery::critical(&z, 1.0).unwrap();
        let p = radial_levelset(&q, 1.0, &[0.0], &[1.0], &ScanParams::for_dim(1)).unwrap();
        assert!(p.intervals.is_empty());
        assert_eq!(pair_measure_polar(&q, 1.0, &PolarBudget::for_dim(1)).unwrap().value, 0.0);
        let mc = pair_measure_mc(&q, 1.0, 1000, RandomStream::new(1, 1)).unwrap();
        assert_eq!((mc.value, mc.error_estimate), (0.0, 0.0));
    }

    #[test]
    fn linear_stretch_profile() {
        // u(t) = 0.5 t near the origin, so |u(x+r) - u(x)| = r / 2 for small
        // r, and with alpha = 2 membership is r <= g / lambda = 0.5 / lambda.
        let u = ScalarField::from_spec(FieldSpec::Sum {
            terms: vec![FieldSpec::Bump {
                center: vec![0.0],
                radius: 1.0,
                amplitude: 1.0,
            }],
        })
        .unwrap();
        let q = LevelSetQuery::new(&u, 1.0, 2.0).unwrap();
        let x = [-0.4];
        let mut g = [0.0];
        u.gradient(&x, &mut g);
        let lambda = 1e4;
        let prof = radial_levelset(&q, lambda, &x, &[1.0], &ScanParams::for_dim(1)).unwrap();
        assert_eq!(prof.intervals.len(), 1);
        let (lo, hi) = prof.intervals[0];
        assert_eq!(lo, 0.0);
        assert!((hi - g[0] / lambda).abs() < 1e-3 * g[0] / lambda, "{hi} vs {}", g[0] / lambda);
    }

    #[test]
    fn far_points_have_empty_profiles() {
        let u = bump1();
        let q = LevelSetQuery::critical(&u, 1.0).unwrap();
        let lambda = 2.0 * u.lip();
        for x in [2.1, -3.0] {
            for w in [1.0, -1.0] {
                let p = radial_levelset(&q, lambda, &[x], &[w], &ScanParams::for_dim(1)).unwrap();
                assert!(p.intervals.is_empty());
            }
        }
    }

    #[test]
    fn scan_finds_all_intervals_of_a_known_function() {
        // g >= 0 exactly on (0, 0.2] and [0.5, 0.7].
        let g = |r: f64| -((r - 0.2) * (r - 0.5) * (r - 0.7));
        let mut found = Vec::new();
        let out = scan_ray(g, 1.0, &ScanParams::for_dim(1), |a, b| found.push((a, b)));
        assert_eq!(out.crossings, 3);
        assert_eq!(found.len(), 2);
        assert!((found[0].1 - 0.2).abs() < 1e-9);
        assert!((found[1].0 - 0.5).abs() < 1e-9 && (found[1].1 - 0.7).abs() < 1e-9);
    }

    #[test]
    fn crossing_cap_flags() {
        let g = |r: f64| (200.0 * r).sin();
        let params = ScanParams {
            crossing_cap: 4,
            ..ScanParams::for_dim(1)
        };
        let out = scan_ray(g, 1.0, &params, |_, _| {});
        assert!(out.flagged);
    }

    #[test]
    fn polar_limit_n1_p1() {
        let u = bump1();
        let q = LevelSetQuery::critical(&u, 1.0).unwrap();
        let r = pair_measure_polar(&q, 100.0, &PolarBudget::for_dim(1)).unwrap();
        // Pixel-count reference for lambda = 100.
        let reference = 1.471_448_720_684_625_6;
        assert!((r.value * 100.0 - reference).abs() < 0.01 * reference, "{r:?}");
    }

    #[test]
    fn mc_agrees_with_polar() {
        let u = bump1();
        let q = LevelSetQuery::critical(&u, 2.0).unwrap();
        let polar = pair_measure_polar(&q, 5.0, &PolarBudget::for_dim(1)).unwrap();
        let mc = pair_measure_mc(&q, 5.0, 200_000, RandomStream::new(3, 0)).unwrap();
        let err = 3.0 * (mc.error_estimate + polar.error_estimate);
        assert!((mc.value - polar.value).abs() < err, "{mc:?} {polar:?}");
    }

    #[test]
    fn mc_stderr_scales() {
        let u = bump1();
        let q = LevelSetQuery::critical(&u, 1.0).unwrap();
        let a = pair_measure_mc(&q, 3.0, 20_000, RandomStream::new(4, 0)).unwrap();
        let b = pair_measure_mc(&q, 3.0, 40_000, RandomStream::new(4, 0)).unwrap();
        let ratio = b.error_estimate / a.error_estimate;
        assert!((ratio - 0.5f64.sqrt()).abs() < 0.2 * 0.5f64.sqrt(), "{ratio}");
    }

    #[test]
    fn amplitude_scaling_is_lambda_rescaling() {
        let u = bump1();
        let v = u.scaled(3.0);
        let qu = LevelSetQuery::critical(&u, 1.0).unwrap();
        let qv = LevelSetQuery::critical(&v, 1.0).unwrap();
        let b = PolarBudget::for_dim(1);
        let mu = pair_measure_polar(&qu, 2.0, &b).unwrap().value;
        let mv = pair_measure_polar(&qv, 6.0, &b).unwrap().value;
        assert!((mu - mv).abs() < 1e-9 * mu);
    }

    #[test]
    fn translation_invariance() {
        let u = bump1();
        let v = u.translated(&[0.37]);
        let b = PolarBudget::for_dim(1);
        let mu = pair_measure_polar(&LevelSetQuery::critical(&u, 1.0).unwrap(), 4.0, &b).unwrap();
        let mv = pair_measure_polar(&LevelSetQuery::critical(&v, 1.0).unwrap(), 4.0, &b).unwrap();
        assert!((mu.value - mv.value).abs() < 3.0 * (mu.error_estimate + mv.error_estimate) + 1e-9);
    }

    #[test]
    fn profile_tail_and_quasinorm() {
        let u = bump1();
        let q = LevelSetQuery::critical(&u, 1.0).unwrap();
        let l = u.lip();
        let grid = lambda_grid(0.1 * l, 1e3 * l, 16).unwrap();
        let est = Estimator::Polar(PolarBudget::for_dim(1));
        let prof = distribution_profile(&q, &grid, &est).unwrap();
        assert_eq!(prof.monotonicity_violations, 0);
        let lim = tail_limit(&prof, 4, PLATEAU_TOL).unwrap();
        let want = k_constant(1.0, 1).unwrap().k * 2.0 / std::f64::consts::E;
        assert!(lim.converged);
        assert!((lim.plateau - want).abs() < 0.05 * want, "{lim:?}");
        let qn = weak_quasinorm(&q, &prof, &est, 6).unwrap();
        assert!(qn.sup >= lim.plateau * (1.0 - 1e-12));
        assert!(tail_limit(&prof, 17, PLATEAU_TOL).is_err());
        assert!(distribution_profile(&q, &[], &est).is_err());
        assert!(distribution_profile(&q, &[2.0, 1.0], &est).is_err());
    }

    #[test]
    fn sandwich_examples() {
        let u = bump1();
        let l = u.lip();
        assert!(matches!(
            sandwich_bounds(&u, 1.0, 0.5 * l, &[0.1], &[1.0], 0.5),
            Err(Error::Precondition(_))
        ));
        let b = sandwich_bounds(&u, 1.0, 10.0 * l, &[0.0], &[1.0], 0.5).unwrap();
        assert_eq!(b.lower, 0.0);
        let far = sandwich_bounds(&u, 1.0, 10.0 * l, &[2.5], &[1.0], 0.5).unwrap();
        assert_eq!(far.upper, 0.0);
        let x = [0.3];
        let mut g = [0.0];
        u.gradient(&x, &mut g);
        let lambda = 10.0 * l;
        let b = sandwich_bounds(&u, 1.0, lambda, &x, &[1.0], 0.5).unwrap();
        let want = (g[0].abs() / (2.0 * u.hess())).min(g[0].abs() / (2.0 * lambda));
        assert!((b.lower - want).abs() < 1e-15);
    }

    #[test]
    fn sandwich_holds_for_bump() {
        let u = bump1();
        for p in [1.0, 2.0] {
            let r = verify_sandwich(&u, p, 10.0 * u.lip(), 1000, 0.5, RandomStream::new(9, 0), &ScanParams::for_dim(1)).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn estimates_do_not_depend_on_worker_count() {
        let u = make_bump(&[0.0, 0.0], 1.0, 1.0).unwrap();
        let q = LevelSetQuery::critical(&u, 1.0).unwrap();
        let mut b = PolarBudget::for_dim(2);
        b.sphere_order = 8;
        b.panels = 2;
        let one = exec::with_workers(1, || pair_measure_polar(&q, 3.0, &b).unwrap());
        let four = exec::with_workers(4, || pair_measure_polar(&q, 3.0, &b).unwrap());
        assert_eq!(one.value.to_bits(), four.value.to_bits());
        let s = RandomStream::new(5, 2);
        let one = exec::with_workers(1, || pair_measure_mc(&q, 3.0, 5000, s).unwrap());
        let four = exec::with_workers(4, || pair_measure_mc(&q, 3.0, 5000, s).unwrap());
        assert_eq!(one.value.to_bits(), four.value.to_bits());
    }
}
