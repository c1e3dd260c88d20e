//! Gauss-Legendre rules, composite and tensor grids, sphere rules, the
//! sphere constants `k(p, N)` and `sigma_{N-1}`, and a deterministic Monte
//! Carlo driver.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub error_estimate: f64,
    pub nodes_used: u64,
    pub converged: bool,
}

impl QuadratureResult {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            error_estimate: 0.0,
            nodes_used: 0,
            converged: true,
        }
    }

    /// Builds a result from a fine and a coarse evaluation; the error
    /// estimate is their difference.
    pub fn from_refinement(fine: f64, coarse: f64, nodes: u64, tol: f64) -> Self {
        let err = (fine - coarse).abs();
        Self {
            value: fine,
            error_estimate: err,
            nodes_used: nodes,
            converged: err <= tol,
        }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `n`-point Gauss-Legendre rule, exact for polynomials of degree `2n - 1`.
pub fn gauss_nodes_1d(n: usize) -> Result<GaussRule> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one node"));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(GaussRule { nodes, weights })
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(mid + half * t))
            .sum::<f64>()
            * half
    }

    /// Nodes and weights of the rule mapped to `[a, b]`, appended to `out`.
    pub fn push_mapped(&self, a: f64, b: f64, out: &mut Vec<(f64, f64)>) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (&t, &w) in self.nodes.iter().zip(&self.weights) {
            out.push((mid + half * t, w * half));
        }
    }
}

/// Composite Gauss rule: each gap between consecutive (sorted, distinct)
/// knots is split into `panels` equal panels carrying an `order`-point rule.
pub fn composite_nodes(knots: &[f64], panels: usize, order: usize) -> Vec<(f64, f64)> {
    let rule = gauss_nodes_1d(order.max(1)).expect("order >= 1");
    let mut ks: Vec<f64> = knots.iter().copied().filter(|k| k.is_finite()).collect();
    ks.sort_by(f64::total_cmp);
    ks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + b.abs()));
    let mut out = Vec::new();
    for w in ks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let h = (b - a) / panels.max(1) as f64;
        for j in 0..panels.max(1) {
            rule.push_mapped(a + j as f64 * h, a + (j + 1) as f64 * h, &mut out);
        }
    }
    out
}

/// Geometrically graded composite rule on `[a, b]` refined towards `a`:
/// panels `[a + (b-a) q^{k+1}, a + (b-a) q^k]` for `k < levels` plus a final
/// panel down to `a`.
pub fn graded_nodes(a: f64, b: f64, levels: usize, ratio: f64, order: usize) -> Vec<(f64, f64)> {
    let rule = gauss_nodes_1d(order.max(1)).expect("order >= 1");
    let mut out = Vec::with_capacity((levels + 1) * order);
    let len = b - a;
    let mut hi = 1.0;
    for _ in 0..levels {
        let lo = hi * ratio;
        rule.push_mapped(a + len * lo, a + len * hi, &mut out);
        hi = lo;
    }
    rule.push_mapped(a, a + len * hi, &mut out);
    out
}

/// Tensor product of per-axis 1-D node lists.
#[derive(Debug, Clone)]
pub struct TensorGrid {
    axes: Vec<Vec<(f64, f64)>>,
    len: usize,
}

impl TensorGrid {
    pub fn new(axes: Vec<Vec<(f64, f64)>>) -> Self {
        let len = axes.iter().map(Vec::len).product();
        Self { axes, len }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Writes node `index` into `point` and returns its weight.
    pub fn node(&self, mut index: usize, point: &mut [f64]) -> f64 {
        let mut w = 1.0;
        for (axis, nodes) in self.axes.iter().enumerate() {
            let (x, wx) = nodes[index % nodes.len()];
            index /= nodes.len();
            point[axis] = x;
            w *= wx;
        }
        w
    }

    /// Deterministic parallel sum of `weight * f(point)` over all nodes.
    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        let dim = self.dim();
        exec::sum_indices(self.len, |i| {
            let mut p = [0.0; crate::MAX_DIM];
            let w = self.node(i, &mut p);
            w * f(&p[..dim])
        })
    }
}

/// Surface area of the unit sphere `S^{N-1}` in `R^N`.
pub fn sphere_area(dim: usize) -> f64 {
    let n = dim as f64;
    2.0 * PI.powf(0.5 * n) / libm::tgamma(0.5 * n)
}

/// Volume of the unit ball in `R^N`.
pub fn ball_volume(dim: usize) -> f64 {
    sphere_area(dim) / dim as f64
}

/// Quadrature rule on the unit sphere `S^{N-1}`.
#[derive(Debug, Clone)]
pub struct SphereRule {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl SphereRule {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.nodes
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(w, wt)| wt * f(w)).sum()
    }
}

/// Sphere rule for `N` in `1..=4`.
///
/// * `N = 1`: the two points `{-1, +1}` with unit weights.
/// * `N = 2`: `order` equispaced angles.
/// * `N = 3`: Gauss nodes in the polar cosine (`order` per hemisphere) times
///   `2 * order` equispaced azimuths.
/// * `N = 4`: Gauss nodes in the polar angle (`order` per hemisphere) times
///   the `N = 3` rule of the same order, weighted by `sin^2`.
///
/// The polar axis is always the last coordinate, and for `N >= 3` the rule
/// splits at the equator so integrands like `|omega_N|^p` are smooth on
/// every panel.
pub fn sphere_rule(dim: usize, order: usize) -> Result<SphereRule> {
    if order == 0 {
        return Err(Error::invalid("order", "must be positive"));
    }
    match dim {
        1 => Ok(SphereRule {
            dim: 1,
            nodes: vec![-1.0, 1.0],
            weights: vec![1.0, 1.0],
        }),
        2 => {
            let m = order.max(2);
            let mut nodes = Vec::with_capacity(2 * m);
            let h = 2.0 * PI / m as f64;
            for j in 0..m {
                let t = j as f64 * h;
                nodes.push(t.cos());
                nodes.push(t.sin());
            }
            Ok(SphereRule {
                dim: 2,
                nodes,
                weights: vec![h; m],
            })
        }
        3 => {
            let g = gauss_nodes_1d(order)?;
            let mut polar = Vec::new();
            g.push_mapped(-1.0, 0.0, &mut polar);
            g.push_mapped(0.0, 1.0, &mut polar);
            let naz = 2 * order.max(2);
            let h = 2.0 * PI / naz as f64;
            let mut nodes = Vec::with_capacity(3 * polar.len() * naz);
            let mut weights = Vec::with_capacity(polar.len() * naz);
            for &(t, wt) in &polar {
                let s = (1.0 - t * t).max(0.0).sqrt();
                for j in 0..naz {
                    let phi = j as f64 * h;
                    nodes.extend_from_slice(&[s * phi.cos(), s * phi.sin(), t]);
                    weights.push(wt * h);
                }
            }
            Ok(SphereRule {
                dim: 3,
                nodes,
                weights,
            })
        }
        4 => {
            let sub = sphere_rule(3, order)?;
            // The sin^2 density makes the polar integrand non-polynomial; a
            // floor on the node count keeps low orders accurate.
            let g = gauss_nodes_1d(order.max(16))?;
            let mut polar = Vec::new();
            g.push_mapped(0.0, 0.5 * PI, &mut polar);
            g.push_mapped(0.5 * PI, PI, &mut polar);
            let mut nodes = Vec::with_capacity(4 * polar.len() * sub.len());
            let mut weights = Vec::with_capacity(polar.len() * sub.len());
            for &(psi, wpsi) in &polar {
                let (s, c) = psi.sin_cos();
                for (w3, ws) in sub.iter() {
                    nodes.extend_from_slice(&[s * w3[0], s * w3[1], s * w3[2], c]);
                    weights.push(wpsi * s * s * ws);
                }
            }
            Ok(SphereRule {
                dim: 4,
                nodes,
                weights,
            })
        }
        d => Err(Error::UnsupportedDimension(d)),
    }
}

/// `k(p, N) = integral over S^{N-1} of |e . omega|^p`, closed form.
pub fn k_closed_form(p: f64, dim: usize) -> f64 {
    let n = dim as f64;
    2.0 * PI.powf(0.5 * (n - 1.0)) * libm::tgamma(0.5 * (p + 1.0)) / libm::tgamma(0.5 * (n + p))
}

/// `k(p, N)` by sphere quadrature with `e` the polar axis.
pub fn k_quadrature(p: f64, dim: usize) -> Result<f64> {
    let order = match dim {
        1 => 1,
        2 => 1 << 14,
        3 => 64,
        _ => 48,
    };
    let rule = sphere_rule(dim, order)?;
    Ok(rule.integrate(|w| w[dim - 1].abs().powf(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereConstants {
    pub p: f64,
    pub dim: usize,
    /// Closed-form `k(p, N)`.
    pub k: f64,
    /// Sphere-quadrature `k(p, N)`.
    pub k_quadrature: f64,
    pub sigma: f64,
}

/// Relative agreement required between the two `k(p, N)` routes.
pub const K_AGREEMENT: f64 = 1e-6;

pub fn k_constant(p: f64, dim: usize) -> Result<SphereConstants> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::invalid("p", format!("need p >= 1, got {p}")));
    }
    if dim == 0 {
        return Err(Error::UnsupportedDimension(0));
    }
    let k = k_closed_form(p, dim);
    let k_quadrature = k_quadrature(p, dim)?;
    let rel = (k - k_quadrature).abs() / k;
    if rel > K_AGREEMENT {
        return Err(Error::Consistency(format!(
            "k({p},{dim}): closed form {k} vs quadrature {k_quadrature} (rel {rel:.2e})"
        )));
    }
    Ok(SphereConstants {
        p,
        dim,
        k,
        k_quadrature,
        sigma: sphere_area(dim),
    })
}

/// `c(N) = k(1,N) * min(1/N, 1/sigma_{N-1})`, the lower constant for the
/// weak-norm equivalence.
pub fn lower_constant_cn(dim: usize) -> f64 {
    let n = dim as f64;
    k_closed_form(1.0, dim) * (1.0 / n).min(1.0 / sphere_area(dim))
}

/// A normalised sampler: draws a point and returns its importance weight
/// (reciprocal density), so `E[w f(X)]` is the integral of `f`.
pub trait Sampler: Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut ChaCha8Rng, point: &mut [f64]) -> f64;
}

/// Uniform sampler on an axis-aligned box.
#[derive(Debug, Clone)]
pub struct BoxSampler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSampler {
    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }
}

impl Sampler for BoxSampler {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, point: &mut [f64]) -> f64 {
        for (i, p) in point.iter_mut().enumerate() {
            *p = self.lo[i] + (self.hi[i] - self.lo[i]) * rng.random::<f64>();
        }
        self.volume()
    }
}

/// Uniform sampler on a ball.
#[derive(Debug, Clone)]
pub struct BallSampler {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Sampler for BallSampler {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, point: &mut [f64]) -> f64 {
        let n = self.center.len();
        crate::rng::unit_vector(rng, point);
        let r = self.radius * rng.random::<f64>().powf(1.0 / n as f64);
        for (p, c) in point.iter_mut().zip(&self.center) {
            *p = c + r * *p;
        }
        ball_volume(n) * self.radius.powi(n as i32)
    }
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
    min: f64,
    max: f64,
}

impl Moments {
    const EMPTY: Self = Self {
        n: 0,
        sum: 0.0,
        sum_sq: 0.0,
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
    };

    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn merge(mut self, o: Self) -> Self {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
        self
    }

    fn result(&self) -> QuadratureResult {
        let n = self.n as f64;
        if self.min == self.max {
            return QuadratureResult {
                value: self.min,
                error_estimate: 0.0,
                nodes_used: self.n,
                converged: true,
            };
        }
        let mean = self.sum / n;
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        QuadratureResult {
            value: mean,
            error_estimate: (var / n).sqrt(),
            nodes_used: self.n,
            converged: true,
        }
    }
}

/// Monte Carlo estimate of the integral of `integrand` against the measure
/// represented by `sampler`. Sample `i` uses `stream.at(i)`, and the sum is
/// reduced in fixed chunks, so the result is bit-identical for any worker
/// count.
pub fn monte_carlo<F, S>(integrand: F, sampler: &S, n: u64, stream: RandomStream) -> Result<QuadratureResult>
where
    F: Fn(&[f64], &mut ChaCha8Rng) -> f64 + Sync + Send,
    S: Sampler,
{
    monte_carlo_weighted(
        |rng, point| {
            let w = sampler.sample(rng, point);
            w * integrand(point, rng)
        },
        sampler.dim(),
        n,
        stream,
    )
}

/// Monte Carlo over a user-supplied per-sample estimator `draw`, which
/// receives the positioned generator and a scratch point and returns one
/// unbiased sample of the integral.
pub fn monte_carlo_weighted<D>(draw: D, dim: usize, n: u64, stream: RandomStream) -> Result<QuadratureResult>
where
    D: Fn(&mut ChaCha8Rng, &mut [f64]) -> f64 + Sync + Send,
{
    if n == 0 {
        return Err(Error::invalid("n", "Monte Carlo needs at least one sample"));
    }
    let moments = exec::map_chunks(n as usize, 1024, |range| {
        let mut m = Moments::EMPTY;
        let mut point = [0.0; crate::MAX_DIM * 2];
        for i in range {
            let mut rng = stream.at(i as u64);
            m.push(draw(&mut rng, &mut point[..dim]));
        }
        m
    })
    .into_iter()
    .fold(Moments::EMPTY, Moments::merge);
    Ok(moments.result())
}
