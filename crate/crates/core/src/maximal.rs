//! Centered Hardy-Littlewood maximal function of piecewise-constant data on
//! uniform grids in one and two dimensions, the pointwise Lusin-Lipschitz
//! inequality `|u(x) - u(y)| <= C |x - y| (M|grad u|(x) + M|grad u|(y))`,
//! and the bound on `lambda^p |E_lambda|` it implies.
//!
//! Ball averages are exact for the data: prefix sums in one dimension and
//! closed-form disk/rectangle intersection areas in two. Radii run over the
//! ladder `h/2 * 2^{k/4}` up to the domain diameter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::fields::{gradient_lp_norm, ScalarField};
use crate::levelset::{io_err, pair_measure, Estimator, LevelSetQuery};
use crate::quadrature::{ball_volume, gauss_nodes_1d, sphere_area};
use crate::rng::RandomStream;

/// Cell values on `prod [lo_a, lo_a + shape_a h)`, first axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriddedFunction {
    pub lo: Vec<f64>,
    pub h: f64,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl GriddedFunction {
    pub fn new(lo: Vec<f64>, h: f64, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let dim = lo.len();
        if !(1..=2).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if shape.len() != dim || shape.iter().any(|&s| s == 0) {
            return Err(Error::invalid("shape", "one positive extent per axis"));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid("h", "cell width must be positive and finite"));
        }
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::invalid("values", "length must match the grid shape"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("values", "must be finite"));
        }
        Ok(Self { lo, h, shape, values })
    }

    /// Cell averages of `f` by a tensor Gauss rule of `order` nodes per axis.
    pub fn sample<F: Fn(&[f64]) -> f64 + Sync>(lo: Vec<f64>, h: f64, shape: Vec<usize>, order: usize, f: F) -> Result<Self> {
        let dim = lo.len();
        let rule = gauss_nodes_1d(order)?;
        let count: usize = shape.iter().product();
        let probe = Self::new(lo.clone(), h, shape.clone(), vec![0.0; count])?;
        let values = exec::map_indices(count, |idx| {
            let c = probe.cell_center(idx);
            let mut sum = 0.0;
            let mut p = [0.0; 2];
            let nodes = rule.len().pow(dim as u32);
            for k in 0..nodes {
                let mut w = 1.0;
                let mut rest = k;
                for a in 0..dim {
                    let j = rest % rule.len();
                    rest /= rule.len();
                    p[a] = c[a] + 0.5 * h * rule.nodes[j];
                    w *= 0.5 * rule.weights[j];
                }
                sum += w * f(&p[..dim]);
            }
            sum
        });
        Self::new(lo, h, shape, values)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_center(&self, idx: usize) -> [f64; 2] {
        let mut c = [0.0; 2];
        let mut rest = idx;
        for a in 0..self.dim() {
            let i = rest % self.shape[a];
            rest /= self.shape[a];
            c[a] = self.lo[a] + (i as f64 + 0.5) * self.h;
        }
        c
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    pub fn diameter(&self) -> f64 {
        self.shape.iter().map(|&s| (s as f64 * self.h).powi(2)).sum::<f64>().sqrt()
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// The same values on a grid scaled by `c` about the origin.
    pub fn dilated(&self, c: f64) -> Self {
        Self {
            lo: self.lo.iter().map(|v| v * c).collect(),
            h: self.h * c,
            ..self.clone()
        }
    }

    /// CSV with columns `x` (and `y` in 2-D) and `value`, one row per cell.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.dim() == 1 {
            w.write_record(["x", "value"]).map_err(io_err)?;
        } else {
            w.write_record(["x", "y", "value"]).map_err(io_err)?;
        }
        for (idx, v) in self.values.iter().enumerate() {
            let c = self.cell_center(idx);
            let mut rec: Vec<String> = c[..self.dim()].iter().map(|x| x.to_string()).collect();
            rec.push(v.to_string());
            w.write_record(&rec).map_err(io_err)?;
        }
        String::from_utf8(w.into_inner().map_err(io_err)?).map_err(io_err)
    }
}

/// `h/2 * 2^{k/4}` for `k = 0, 1, ...` up to the first radius `>= reach`.
pub fn radius_ladder(h: f64, reach: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let r = 0.5 * h * 2f64.powf(k as f64 / 4.0);
        out.push(r);
        if r >= reach {
            return out;
        }
        k += 1;
    }
}

/// Area of `{X <= x, Y <= y}` inside the disk of radius `r` at the origin.
fn quadrant_area(x: f64, y: f64, r: f64) -> f64 {
    if x <= -r || y <= -r {
        return 0.0;
    }
    let b = x.min(r);
    let s = |t: f64| (r * r - t * t).max(0.0).sqrt();
    let prim = |t: f64| 0.5 * (t * s(t) + r * r * (t / r).clamp(-1.0, 1.0).asin());
    let span = |lo: f64, hi: f64| if hi > lo { prim(hi) - prim(lo) } else { 0.0 };
    if y >= r {
        return 2.0 * span(-r, b);
    }
    let w = s(y);
    let mut area = 0.0;
    // |X| <= w: the chord crosses Y = y, length y + s(X).
    let (a1, b1) = (-w, w.min(b));
    if b1 > a1 {
        area += y * (b1 - a1) + span(a1, b1);
    }
    if y >= 0.0 {
        // |X| > w: the whole chord lies below Y = y.
        area += 2.0 * span(-r, (-w).min(b));
        area += 2.0 * span(w, b);
    }
    area
}

/// Area of the intersection of the disk `|z - c| <= r` with
/// `[x0, x1] x [y0, y1]`.
pub fn disk_rect_area(c: [f64; 2], r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let (ax, bx, ay, by) = (x0 - c[0], x1 - c[0], y0 - c[1], y1 - c[1]);
    let a = quadrant_area(bx, by, r) - quadrant_area(ax, by, r) - quadrant_area(bx, ay, r) + quadrant_area(ax, ay, r);
    a.max(0.0)
}

/// Cells meeting a disk centered on a cell center, row by row: offsets
/// `-full..=full` are covered entirely, `partial` lists `(offset, area)`.
struct StencilRow {
    dj: i64,
    full: i64,
    partial: Vec<(i64, f64)>,
}

fn disk_stencil(r: f64, h: f64) -> Vec<StencilRow> {
    let reach = (r / h + 0.5).ceil() as i64;
    let mut rows = Vec::new();
    for dj in -reach..=reach {
        let (y0, y1) = ((dj as f64 - 0.5) * h, (dj as f64 + 0.5) * h);
        let ynear = if y0 > 0.0 { y0 } else if y1 < 0.0 { -y1 } else { 0.0 };
        if ynear >= r {
            continue;
        }
        let yfar = y0.abs().max(y1.abs());
        let mut full = -1;
        let mut partial = Vec::new();
        for di in 0..=reach {
            let (x0, x1) = ((di as f64 - 0.5) * h, (di as f64 + 0.5) * h);
            let xnear = if di == 0 { 0.0 } else { x0 };
            if xnear.hypot(ynear) >= r {
                break;
            }
            if x1.hypot(yfar) <= r {
                full = di;
                continue;
            }
            let area = disk_rect_area([0.0, 0.0], r, x0, x1, y0, y1);
            partial.push((di, area));
            if di > 0 {
                partial.push((-di, area));
            }
        }
        rows.push(StencilRow { dj, full, partial });
    }
    rows
}

fn maximal_1d(g: &GriddedFunction, radii: &[f64]) -> Vec<f64> {
    let n = g.shape[0];
    let h = g.h;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in &g.values {
        prefix.push(prefix.last().unwrap() + v.abs() * h);
    }
    // Integral of g over (-inf, t], with g = 0 off the grid.
    let cumulative = |t: f64| {
        let s = (t - g.lo[0]) / h;
        if s <= 0.0 {
            return 0.0;
        }
        if s >= n as f64 {
            return prefix[n];
        }
        let k = s.floor() as usize;
        prefix[k] + (s - k as f64) * h * g.values[k].abs()
    };
    exec::map_indices(n, |i| {
        let c = g.lo[0] + (i as f64 + 0.5) * h;
        radii
            .iter()
            .map(|&r| (cumulative(c + r) - cumulative(c - r)) / (2.0 * r))
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

fn maximal_2d(g: &GriddedFunction, radii: &[f64]) -> Vec<f64> {
    let (nx, ny) = (g.shape[0], g.shape[1]);
    let h = g.h;
    let mut row_prefix = vec![0.0; (nx + 1) * ny];
    for j in 0..ny {
        for i in 0..nx {
            row_prefix[j * (nx + 1) + i + 1] = row_prefix[j * (nx + 1) + i] + g.values[j * nx + i].abs();
        }
    }
    let stencils: Vec<(f64, Vec<StencilRow>)> = radii.iter().map(|&r| (r, disk_stencil(r, h))).collect();
    exec::map_indices(nx * ny, |idx| {
        let (i, j) = ((idx % nx) as i64, (idx / nx) as i64);
        let mut best = f64::NEG_INFINITY;
        for (r, rows) in &stencils {
            let mut sum = 0.0;
            for row in rows {
                let jj = j + row.dj;
                if jj < 0 || jj >= ny as i64 {
                    continue;
                }
                let base = jj as usize * (nx + 1);
                if row.full >= 0 {
                    let a = (i - row.full).max(0) as usize;
                    let b = ((i + row.full + 1).min(nx as i64)).max(0) as usize;
                    if b > a {
                        sum += (row_prefix[base + b] - row_prefix[base + a]) * h * h;
                    }
                }
                for &(di, area) in &row.partial {
                    let ii = i + di;
                    if ii >= 0 && ii < nx as i64 {
                        sum += area * g.values[jj as usize * nx + ii as usize].abs();
                    }
                }
            }
            best = best.max(sum / (std::f64::consts::PI * r * r));
        }
        best
    })
}

/// `M g` at every cell center, with `g = 0` off the grid.
pub fn hl_maximal(g: &GriddedFunction) -> GriddedFunction {
    let radii = radius_ladder(g.h, g.diameter());
    let values = if g.dim() == 1 { maximal_1d(g, &radii) } else { maximal_2d(g, &radii) };
    GriddedFunction { values, ..g.clone() }
}

/// `M g(x)` at an arbitrary point over the ladder of `g`'s grid, by direct
/// exact averages (slow; for checks).
pub fn maximal_at(g: &GriddedFunction, x: &[f64]) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::invalid("x", "dimension mismatch"));
    }
    let radii = radius_ladder(g.h, g.diameter() + dist_to_grid(g, x));
    let h = g.h;
    let best = radii
        .iter()
        .map(|&r| {
            let mut sum = 0.0;
            for (idx, v) in g.values.iter().enumerate() {
                if *v == 0.0 {
                    continue;
                }
                let c = g.cell_center(idx);
                let part = if g.dim() == 1 {
                    ((c[0] + 0.5 * h).min(x[0] + r) - (c[0] - 0.5 * h).max(x[0] - r)).max(0.0)
                } else {
                    disk_rect_area([x[0], x[1]], r, c[0] - 0.5 * h, c[0] + 0.5 * h, c[1] - 0.5 * h, c[1] + 0.5 * h)
                };
                sum += part * v.abs();
            }
            sum / (ball_volume(g.dim()) * r.powi(g.dim() as i32))
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best)
}

fn dist_to_grid(g: &GriddedFunction, x: &[f64]) -> f64 {
    (0..g.dim())
        .map(|a| {
            let lo = g.lo[a];
            let hi = lo + g.shape[a] as f64 * g.h;
            (lo - x[a]).max(x[a] - hi).max(0.0).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// The field's support box widened by a quarter of its width on each side,
/// cut into square cells with `cells` along the widest axis.
pub fn gradient_grid(field: &ScalarField, cells: usize) -> Result<GriddedFunction> {
    let dim = field.dim();
    if !(1..=2).contains(&dim) {
        return Err(Error::UnsupportedDimension(dim));
    }
    if cells < 2 {
        return Err(Error::invalid("cells", "need at least two cells per axis"));
    }
    let (slo, shi) = field.support_box();
    let widths: Vec<f64> = (0..dim).map(|a| 1.5 * (shi[a] - slo[a])).collect();
    let wmax = widths.iter().cloned().fold(0.0, f64::max);
    let h = wmax / cells as f64;
    let shape: Vec<usize> = widths.iter().map(|w| ((w / h).round() as usize).max(1)).collect();
    let lo: Vec<f64> = (0..dim)
        .map(|a| 0.5 * (slo[a] + shi[a]) - 0.5 * shape[a] as f64 * h)
        .collect();
    GriddedFunction::sample(lo, h, shape, 2, |x| field.gradient_norm(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LusinReport {
    pub cells: usize,
    pub pairs: u64,
    /// Largest `|u(x) - u(y)| / (|x - y| (Mx + My))` over sampled pairs.
    pub c_emp: f64,
    pub zero_denominator: u64,
    /// Pairs with zero denominator but `u(x) != u(y)`.
    pub zero_denominator_violations: u64,
}

/// Samples pairs of distinct cell centers and records the smallest constant
/// for which the pointwise Lusin-Lipschitz inequality holds on them.
pub fn lusin_lipschitz_check(field: &ScalarField, cells: usize, pairs: u64, stream: RandomStream) -> Result<LusinReport> {
    let g = gradient_grid(field, cells)?;
    let m = hl_maximal(&g);
    let n = g.len();
    let dim = g.dim();
    let rows = exec::map_indices(pairs as usize, |k| {
        let mut rng = stream.at(k as u64);
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let (x, y) = (g.cell_center(a), g.cell_center(b));
        let num = (field.evaluate(&x[..dim]) - field.evaluate(&y[..dim])).abs();
        let dist = (0..dim).map(|i| (x[i] - y[i]).powi(2)).sum::<f64>().sqrt();
        let den = dist * (m.values[a] + m.values[b]);
        (num, den)
    });
    let mut report = LusinReport {
        cells,
        pairs,
        c_emp: 0.0,
        zero_denominator: 0,
        zero_denominator_violations: 0,
    };
    for (num, den) in rows {
        if den <= 0.0 {
            report.zero_denominator += 1;
            report.zero_denominator_violations += (num > 1e-14) as u64;
        } else {
            report.c_emp = report.c_emp.max(num / den);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalRouteRow {
    pub lambda: f64,
    pub direct: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalRouteReport {
    pub p: f64,
    pub c: f64,
    /// `int M^p` over the grid by the midpoint rule.
    pub integral_grid: f64,
    /// Upper bound for `int M^p` outside the ball the grid covers.
    pub integral_tail: f64,
    /// `(2 sigma / N) (2C)^p int M^p`, an upper bound for
    /// `lambda^p (|A_lambda| + |B_lambda|)` at every `lambda`.
    pub bound: f64,
    pub rows: Vec<MaximalRouteRow>,
    pub dominated: bool,
}

impl MaximalRouteReport {
    /// CSV with columns `lambda,direct,stderr,bound`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["lambda", "direct", "stderr", "bound"]).map_err(io_err)?;
        for r in &self.rows {
            w.write_record([r.lambda, r.direct, r.stderr, self.bound].map(|v| v.to_string())).map_err(io_err)?;
        }
        String::from_utf8(w.into_inner().map_err(io_err)?).map_err(io_err)
    }
}

/// If `|u(x) - u(y)| <= C |x - y| (Mx + My)`, every pair in `E_lambda`
/// has `|x - y|^{N/p} <= 2C max(Mx, My) / lambda`, so `E_lambda` lies in
/// the union of the sets `A` (condition on `x`) and `B` (on `y`), each of
/// measure `(sigma/N) (2C/lambda)^p int M^p`. The maximal integral is
/// finite only for `p > 1`.
pub fn maximal_route_bound(
    field: &ScalarField,
    p: f64,
    c: f64,
    lambdas: &[f64],
    estimator: &Estimator,
    cells: usize,
) -> Result<MaximalRouteReport> {
    if p <= 1.0 {
        return Err(Error::Refused(format!(
            "the maximal function is not p-integrable for p = {p}; the maximal route needs p > 1"
        )));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid("c", "constant must be positive and finite"));
    }
    let q = LevelSetQuery::critical(field, p)?;
    let dim = field.dim();
    if !(1..=2).contains(&dim) {
        return Err(Error::UnsupportedDimension(dim));
    }
    let rs = field.support_radius();
    let rg = 2.0 * rs;
    let h = 2.0 * rg / cells as f64;
    let shape = vec![cells; dim];
    let g = GriddedFunction::sample(vec![-rg; dim], h, shape, 2, |x| field.gradient_norm(x))?;
    let m = hl_maximal(&g);
    let integral_grid = m.values.iter().map(|v| v.powf(p)).sum::<f64>() * m.cell_volume();
    // Off the support, M|grad u|(x) <= |grad u|_1 / (omega_N dist^N), and
    // dist >= |x| - rs; integrate that radially beyond rg.
    let k1 = gradient_lp_norm(field, 1.0, 1 << 22)?.value;
    let nf = dim as f64;
    let a = rg - rs;
    let radial: f64 = (0..dim)
        .map(|k| {
            let binom = if k == 0 { 1.0 } else { (dim - 1) as f64 };
            let e = k as f64 + 1.0 - nf * p;
            binom * rs.powi((dim - 1 - k) as i32) * a.powf(e) / (-e)
        })
        .sum();
    let integral_tail = sphere_area(dim) * (k1 / ball_volume(dim)).powf(p) * radial;
    let bound = 2.0 * sphere_area(dim) / nf * (2.0 * c).powf(p) * (integral_grid + integral_tail);
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mu = pair_measure(&q, lambda, estimator)?;
        let scale = lambda.powf(p);
        rows.push(MaximalRouteRow {
            lambda,
            direct: scale * mu.value,
            stderr: scale * mu.error_estimate,
        });
    }
    let dominated = rows.iter().all(|r| r.direct <= bound);
    Ok(MaximalRouteReport {
        p,
        c,
        integral_grid,
        integral_tail,
        bound,
        rows,
        dominated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_bump;
    use crate::levelset::PolarBudget;

    #[test]
    fn indicator_example_in_one_dimension() {
        // g = 1 on [0, 1]; M g(2) = max_r min(1, r - 1) / (2r) = 1/4 at r = 2.
        let g = GriddedFunction::new(vec![0.0], 0.25, vec![4], vec![1.0; 4]).unwrap();
        let v = maximal_at(&g, &[2.0]).unwrap();
        assert!((v - 0.25).abs() < 0.01, "{v}");
        assert!(v <= 0.25 + 1e-15);
        let m = hl_maximal(&g);
        assert!(m.values.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn disk_areas() {
        let pi = std::f64::consts::PI;
        assert!((disk_rect_area([0.0, 0.0], 1.0, -2.0, 2.0, -2.0, 2.0) - pi).abs() < 1e-14);
        assert!((disk_rect_area([0.0, 0.0], 1.0, 0.0, 2.0, 0.0, 2.0) - pi / 4.0).abs() < 1e-14);
        assert!((disk_rect_area([0.0, 0.0], 1.0, -0.5, 0.5, -0.5, 0.5) - 1.0).abs() < 1e-14);
        // Half-strip above y = 0.5: segment area r^2 acos(d) - d sqrt(1 - d^2).
        let seg = (0.5f64).acos() - 0.5 * (0.75f64).sqrt();
        assert!((disk_rect_area([0.0, 0.0], 1.0, -2.0, 2.0, 0.5, 2.0) - seg).abs() < 1e-14);
        assert!((disk_rect_area([0.0, 0.0], 1.0, -2.0, 2.0, -2.0, -0.5) - seg).abs() < 1e-14);
        assert_eq!(disk_rect_area([0.0, 0.0], 1.0, 2.0, 3.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn stencil_covers_the_disk() {
        for r in [0.5, 0.9, 2.3, 7.7] {
            let total: f64 = disk_stencil(r, 1.0)
                .iter()
                .map(|row| (2 * row.full + 1).max(0) as f64 + row.partial.iter().map(|p| p.1).sum::<f64>())
                .sum();
            assert!((total - std::f64::consts::PI * r * r).abs() < 1e-10, "{r} {total}");
        }
    }

    #[test]
    fn two_dimensional_grid_matches_direct_evaluation() {
        let mut values = vec![0.0; 36];
        values[14] = 2.0;
        values[15] = 1.0;
        values[21] = 0.5;
        let g = GriddedFunction::new(vec![0.0, 0.0], 0.5, vec![6, 6], values).unwrap();
        let m = hl_maximal(&g);
        for idx in [0, 7, 14, 20, 35] {
            let c = g.cell_center(idx);
            let direct = maximal_at(&g, &c[..2]).unwrap();
            assert!((m.values[idx] - direct).abs() < 1e-12, "{idx}");
        }
    }

    #[test]
    fn dominates_the_function_and_is_sublinear() {
        let a = GriddedFunction::new(vec![0.0, 0.0], 0.5, vec![5, 4], (0..20).map(|i| (i % 3) as f64).collect()).unwrap();
        let b = GriddedFunction::new(vec![0.0, 0.0], 0.5, vec![5, 4], (0..20).map(|i| (i % 7) as f64 * 0.3).collect()).unwrap();
        let sum = GriddedFunction {
            values: a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect(),
            ..a.clone()
        };
        let (ma, mb, ms) = (hl_maximal(&a), hl_maximal(&b), hl_maximal(&sum));
        for i in 0..20 {
            assert!(ma.values[i] >= a.values[i] - 1e-12);
            assert!(ms.values[i] <= ma.values[i] + mb.values[i] + 1e-12);
        }
    }

    #[test]
    fn commutes_with_dilation() {
        let g = GriddedFunction::new(vec![-1.0], 0.25, vec![8], (0..8).map(|i| i as f64).collect()).unwrap();
        let a = hl_maximal(&g);
        let b = hl_maximal(&g.dilated(3.0));
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn lusin_constant_for_bump() {
        let u = make_bump(&[0.0], 1.0, 1.0).unwrap();
        let r = lusin_lipschitz_check(&u, 128, 5000, RandomStream::new(3, 0)).unwrap();
        assert_eq!(r.zero_denominator_violations, 0);
        assert!(r.c_emp > 0.0 && r.c_emp < 2.0, "{r:?}");
        let v = lusin_lipschitz_check(&u.scaled(5.0), 128, 5000, RandomStream::new(3, 0)).unwrap();
        assert!((r.c_emp - v.c_emp).abs() < 1e-9);
    }

    #[test]
    fn maximal_route_refuses_p_one_and_dominates() {
        let u = make_bump(&[0.0], 1.0, 1.0).unwrap();
        let est = Estimator::Polar(PolarBudget::for_dim(1));
        assert!(matches!(maximal_route_bound(&u, 1.0, 1.0, &[1.0], &est, 64), Err(Error::Refused(_))));
        let c = lusin_lipschitz_check(&u, 128, 5000, RandomStream::new(3, 0)).unwrap().c_emp;
        let lambdas = [u.lip(), 10.0 * u.lip()];
        let lo = maximal_route_bound(&u, 1.5, c, &lambdas, &est, 128).unwrap();
        assert!(lo.dominated, "{lo:?}");
        let hi = maximal_route_bound(&u, 3.0, c, &lambdas, &est, 128).unwrap();
        assert!(hi.dominated);
        let near_one = maximal_route_bound(&u, 1.05, c, &lambdas, &est, 128).unwrap();
        assert!(near_one.integral_tail > lo.integral_tail);
    }
}
