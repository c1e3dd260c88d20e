//! Interval families with the mass condition `int_I f >= |I|^{gamma+1}`,
//! greedy Vitali selection and its 5-fold cover, the weighted energy bound,
//! line integrals, the method-of-rotations measure of
//! `E(F) = {(x, y) : int_[x,y] F >= |x - y|^{N+1}}` and the Hölder
//! containment of `E_lambda` in such a set.
//!
//! Piecewise-constant densities live on a uniform grid and intervals have
//! endpoints on cell boundaries, so masses come from prefix sums and every
//! comparison is exact at grid resolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::fields::{gradient_lp_norm, lp_norm_pow, ScalarField};
use crate::levelset::{io_err, LevelSetQuery};
use crate::quadrature::{gauss_nodes_1d, sphere_area, sphere_rule, QuadratureResult};
use crate::rng::{unit_vector, RandomStream};
use crate::MAX_DIM;

/// Non-negative values on the cells `[lo + i h, lo + (i+1) h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantField {
    pub lo: f64,
    pub h: f64,
    values: Vec<f64>,
    prefix: Vec<f64>,
}

impl PiecewiseConstantField {
    pub fn new(lo: f64, h: f64, values: Vec<f64>) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() || !lo.is_finite() {
            return Err(Error::invalid("h", "cell width must be positive and finite"));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("values", format!("cell values must be finite and non-negative, got {v}")));
        }
        let mut prefix = Vec::with_capacity(values.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for v in &values {
            acc += v * h;
            prefix.push(acc);
        }
        Ok(Self { lo, h, values, prefix })
    }

    /// A random field on `cells` cells of width `2^-k`: each cell is zero
    /// with probability `1/2` and otherwise a multiple of `1/4` up to 4, so
    /// every prefix sum is exact in binary floating point.
    pub fn random(cells: usize, k: i32, rng: &mut impl Rng) -> Self {
        let values = (0..cells)
            .map(|_| {
                if rng.random::<bool>() {
                    0.0
                } else {
                    rng.random_range(1..=16) as f64 * 0.25
                }
            })
            .collect();
        Self::new(0.0, 0.5f64.powi(k), values).expect("valid random field")
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `int` over the cell-boundary interval `[i, j]`.
    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.prefix[j] - self.prefix[i]
    }

    pub fn l1_norm(&self) -> f64 {
        self.prefix[self.values.len()]
    }

    pub fn boundary(&self, i: i64) -> f64 {
        self.lo + i as f64 * self.h
    }

    /// Whether `[i, j]` satisfies `mass >= |I|^{gamma+1}`.
    pub fn admissible(&self, i: usize, j: usize, gamma: f64) -> bool {
        j > i && self.mass(i, j) >= ((j - i) as f64 * self.h).powf(gamma + 1.0)
    }
}

/// Closed interval between cell boundaries `start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridInterval {
    pub start: usize,
    pub end: usize,
}

impl GridInterval {
    pub fn cells(&self) -> usize {
        self.end - self.start
    }

    pub fn intersects(&self, other: &GridInterval) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    /// The 5-fold dilate about the midpoint, in boundary units (may extend
    /// past the grid).
    pub fn dilate5(&self) -> (i64, i64) {
        let len = self.cells() as i64;
        (self.start as i64 - 2 * len, self.end as i64 + 2 * len)
    }

    pub fn length(&self, h: f64) -> f64 {
        self.cells() as f64 * h
    }
}

/// All admissible grid intervals, longest first, then leftmost first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalFamily {
    pub gamma: f64,
    pub intervals: Vec<GridInterval>,
}

pub fn admissible_intervals(f: &PiecewiseConstantField, gamma: f64) -> Result<IntervalFamily> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid("gamma", format!("need gamma > 0, got {gamma}")));
    }
    let n = f.cells();
    let by_length = exec::map_indices(n, |k| {
        let len = n - k;
        (0..=n - len)
            .filter(|&i| f.admissible(i, i + len, gamma))
            .map(|i| GridInterval { start: i, end: i + len })
            .collect::<Vec<_>>()
    });
    Ok(IntervalFamily {
        gamma,
        intervals: by_length.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitaliCover {
    pub selected: Vec<GridInterval>,
}

/// Greedy selection: walk the family longest first and keep every interval
/// disjoint from those already kept.
pub fn vitali_select(family: &IntervalFamily) -> VitaliCover {
    let extent = family.intervals.iter().map(|i| i.end).max().unwrap_or(0);
    let mut occupied = vec![false; extent + 1];
    let mut selected = Vec::new();
    for iv in &family.intervals {
        if occupied[iv.start..=iv.end].iter().any(|&o| o) {
            continue;
        }
        occupied[iv.start..=iv.end].iter_mut().for_each(|o| *o = true);
        selected.push(*iv);
    }
    VitaliCover { selected }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitaliVerdict {
    /// Pairs of selected intervals that intersect.
    pub overlapping_pairs: usize,
    /// Family members meeting no selected interval at least as long.
    pub unwitnessed: usize,
    /// Family members not contained in the 5-dilate of a selected interval.
    pub uncovered: usize,
}

impl VitaliVerdict {
    pub fn passed(&self) -> bool {
        self.overlapping_pairs == 0 && self.unwitnessed == 0 && self.uncovered == 0
    }
}

pub fn check_vitali(family: &IntervalFamily, cover: &VitaliCover) -> VitaliVerdict {
    let sel = &cover.selected;
    let mut overlapping_pairs = 0;
    for (a, x) in sel.iter().enumerate() {
        overlapping_pairs += sel[a + 1..].iter().filter(|y| x.intersects(y)).count();
    }
    let mut unwitnessed = 0;
    let mut uncovered = 0;
    for iv in &family.intervals {
        let witnesses = sel.iter().filter(|j| j.intersects(iv) && j.cells() >= iv.cells());
        let mut any = false;
        let mut inside = false;
        for j in witnesses {
            any = true;
            let (a, b) = j.dilate5();
            inside |= a <= iv.start as i64 && iv.end as i64 <= b;
        }
        unwitnessed += (!any) as usize;
        uncovered += (!inside) as usize;
    }
    VitaliVerdict {
        overlapping_pairs,
        unwitnessed,
        uncovered,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverVerdict {
    pub pairs_checked: u64,
    pub pairs_in_set: u64,
    pub violations: u64,
}

/// Every boundary pair `x < y` with `int_x^y f >= |x - y|^{gamma+1}` must
/// lie in `5J x 5J` for some selected `J`.
pub fn verify_5j_cover(f: &PiecewiseConstantField, gamma: f64, cover: &VitaliCover) -> CoverVerdict {
    let n = f.cells();
    let dilates: Vec<(i64, i64)> = cover.selected.iter().map(GridInterval::dilate5).collect();
    let rows = exec::map_indices(n, |i| {
        let mut inset = 0u64;
        let mut bad = 0u64;
        for j in i + 1..=n {
            if f.admissible(i, j, gamma) {
                inset += 1;
                let (a, b) = (i as i64, j as i64);
                if !dilates.iter().any(|&(lo, hi)| lo <= a && b <= hi) {
                    bad += 1;
                }
            }
        }
        (inset, bad)
    });
    let (pairs_in_set, violations) = rows.iter().fold((0, 0), |(s, v), (a, b)| (s + a, v + b));
    CoverVerdict {
        pairs_checked: (n as u64 * (n as u64 + 1)) / 2,
        pairs_in_set,
        violations,
    }
}

/// `iint_{I x I} |x - y|^{gamma - 1} = 2 |I|^{gamma+1} / (gamma (gamma + 1))`.
pub fn interval_energy(len: f64, gamma: f64) -> f64 {
    2.0 * len.powf(gamma + 1.0) / (gamma * (gamma + 1.0))
}

/// `10 * 5^gamma / (gamma (gamma + 1))`.
pub fn energy_constant(gamma: f64) -> f64 {
    10.0 * 5f64.powf(gamma) / (gamma * (gamma + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub gamma: f64,
    /// Riemann sum of `|x - y|^{gamma-1} h^2` over ordered boundary pairs
    /// `x != y` in `E(f, gamma)`.
    pub energy: f64,
    /// `energy_constant * sum_J |J|^{gamma+1}`.
    pub cover_bound: f64,
    /// `energy_constant * |f|_1`.
    pub mass_bound: f64,
    /// `energy / (5^gamma / gamma |f|_1)`.
    pub empirical_ratio: f64,
}

impl EnergyReport {
    pub fn chain_holds(&self) -> bool {
        self.energy <= self.cover_bound && self.cover_bound <= self.mass_bound
    }
}

pub fn weighted_energy(f: &PiecewiseConstantField, gamma: f64, cover: &VitaliCover) -> EnergyReport {
    let n = f.cells();
    let h = f.h;
    let energy = 2.0
        * exec::map_indices(n, |i| {
            (i + 1..=n)
                .filter(|&j| f.admissible(i, j, gamma))
                .map(|j| ((j - i) as f64 * h).powf(gamma - 1.0) * h * h)
                .sum::<f64>()
        })
        .into_iter()
        .sum::<f64>();
    let c = energy_constant(gamma);
    let sum_j: f64 = cover.selected.iter().map(|j| j.length(h).powf(gamma + 1.0)).sum();
    let l1 = f.l1_norm();
    EnergyReport {
        gamma,
        energy,
        cover_bound: c * sum_j,
        mass_bound: c * l1,
        empirical_ratio: if l1 > 0.0 { energy / (5f64.powf(gamma) / gamma * l1) } else { 0.0 },
    }
}

/// Pairs `(x, y)` with `x < y` in `E(f, gamma)`, for the one- versus
/// two-sided comparison: returns `(one_sided, two_sided)` Riemann sums of
/// `|x - y|^{gamma-1}`.
pub fn sided_energies(f: &PiecewiseConstantField, gamma: f64) -> (f64, f64) {
    let n = f.cells();
    let h = f.h;
    let mut one = 0.0;
    let mut two = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            if i == j {
                continue;
            }
            let (a, b) = (i.min(j), i.max(j));
            if f.mass(a, b).abs() >= ((b - a) as f64 * h).powf(gamma + 1.0) {
                let w = ((b - a) as f64 * h).powf(gamma - 1.0) * h * h;
                two += w;
                if i < j {
                    one += w;
                }
            }
        }
    }
    (one, two)
}

/// CSV with columns `left,right,selected_flag`.
pub fn cover_csv(f: &PiecewiseConstantField, family: &IntervalFamily, cover: &VitaliCover) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["left", "right", "selected_flag"]).map_err(io_err)?;
    for iv in &family.intervals {
        let sel = cover.selected.contains(iv);
        w.write_record([
            format!("{}", f.boundary(iv.start as i64)),
            format!("{}", f.boundary(iv.end as i64)),
            (sel as u8).to_string(),
        ])
        .map_err(io_err)?;
    }
    String::from_utf8(w.into_inner().map_err(io_err)?).map_err(io_err)
}

/// A non-negative density built from a field.
#[derive(Debug, Clone, Copy)]
pub enum Density<'a> {
    /// `|u|`.
    Abs(&'a ScalarField),
    /// `scale * |grad u|^p`.
    GradientPower { field: &'a ScalarField, p: f64, scale: f64 },
}

impl Density<'_> {
    pub fn field(&self) -> &ScalarField {
        match self {
            Density::Abs(f) => f,
            Density::GradientPower { field, .. } => field,
        }
    }

    pub fn dim(&self) -> usize {
        self.field().dim()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Density::Abs(f) => f.evaluate(x).abs(),
            Density::GradientPower { field, p, scale } => scale * field.gradient_norm(x).powf(p),
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match *self {
            Density::Abs(f) => f.sup_norm(),
            Density::GradientPower { field, p, scale } => scale * field.lip().powf(p),
        }
    }

    pub fn l1_norm(&self) -> Result<f64> {
        Ok(match *self {
            Density::Abs(f) => lp_norm_pow(f, 1.0, 1 << 22)?.value,
            Density::GradientPower { field, p, scale } => scale * gradient_lp_norm(field, p, 1 << 22)?.value,
        })
    }
}

/// `int_0^{|y-x|} F(x + t w) dt`, `w = (y - x)/|y - x|`, by composite Gauss
/// rules on `panels` and `2 panels` panels; the error estimate is their
/// difference.
pub fn line_integral(density: &Density<'_>, x: &[f64], y: &[f64], panels: usize) -> Result<QuadratureResult> {
    let n = x.len();
    let len = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if len == 0.0 {
        return Err(Error::invalid("y", "line integral needs distinct endpoints"));
    }
    let rule = line_rule();
    let run = |m: usize| {
        let mut total = 0.0;
        let mut p = [0.0; MAX_DIM];
        for k in 0..m {
            let (a, b) = (k as f64 / m as f64, (k + 1) as f64 / m as f64);
            total += rule.integrate(a, b, |t| {
                for i in 0..n {
                    p[i] = x[i] + t * (y[i] - x[i]);
                }
                density.value(&p[..n])
            });
        }
        total * len
    };
    let m = panels.max(1);
    let coarse = run(m);
    let fine = run(2 * m);
    Ok(QuadratureResult::from_refinement(fine, coarse, (3 * m * rule.len()) as u64, 1e-8 * fine.abs() + 1e-14))
}

fn line_rule() -> &'static crate::quadrature::GaussRule {
    static CELL: std::sync::OnceLock<crate::quadrature::GaussRule> = std::sync::OnceLock::new();
    CELL.get_or_init(|| gauss_nodes_1d(16).expect("16 nodes"))
}

/// Resolution of the rotation estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationBudget {
    /// Cells per line (the error estimate reruns with half as many).
    pub cells: usize,
    /// Gauss nodes per cell for the cell averages.
    pub cell_order: usize,
    /// Lines per unit of hyperplane width, per axis.
    pub lines: usize,
    pub sphere_order: usize,
}

impl RotationBudget {
    pub fn for_dim(dim: usize) -> Self {
        match dim {
            1 => Self {
                cells: 2048,
                cell_order: 4,
                lines: 1,
                sphere_order: 1,
            },
            2 => Self {
                cells: 256,
                cell_order: 3,
                lines: 48,
                sphere_order: 32,
            },
            _ => Self {
                cells: 128,
                cell_order: 2,
                lines: 12,
                sphere_order: 6,
            },
        }
    }

    pub fn refined(&self) -> Self {
        Self {
            cells: self.cells * 2,
            lines: self.lines * 2,
            sphere_order: self.sphere_order * 2,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationReport {
    pub measure: QuadratureResult,
    pub l1_norm: f64,
    /// `measure / |F|_1`.
    pub c_emp: f64,
    /// `5^{N+1} sigma_{N-1} / (N (N + 1))`: half the weighted-energy
    /// constant at `gamma = N`, integrated over directions.
    pub c_theory: f64,
}

/// Orthonormal completion of `omega` (rows `1..N` span its complement).
fn complement_basis(omega: &[f64]) -> [[f64; MAX_DIM]; MAX_DIM] {
    let n = omega.len();
    let mut basis = [[0.0; MAX_DIM]; MAX_DIM];
    basis[0][..n].copy_from_slice(omega);
    let mut count = 1;
    for e in 0..n {
        if count == n {
            break;
        }
        let mut v = [0.0; MAX_DIM];
        v[e] = 1.0;
        for b in basis.iter().take(count) {
            let d: f64 = (0..n).map(|i| v[i] * b[i]).sum();
            for i in 0..n {
                v[i] -= d * b[i];
            }
        }
        let norm = (0..n).map(|i| v[i] * v[i]).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for vi in v.iter_mut().take(n) {
                *vi /= norm;
            }
            basis[count] = v;
            count += 1;
        }
    }
    basis
}

/// One-sided Riemann sum over grid pairs `a < b` on a line with cell
/// masses `masses` of `((b - a) h)^{N-1} h^2` where the mass condition
/// `int >= ((b - a) h)^{N+1}` holds.
fn line_pairs(masses: &[f64], h: f64, dim: usize) -> f64 {
    let m = masses.len();
    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(0.0);
    for v in masses {
        prefix.push(prefix.last().unwrap() + v);
    }
    let total = prefix[m];
    if total <= 0.0 {
        return 0.0;
    }
    let max_len = total.powf(1.0 / (dim as f64 + 1.0));
    let max_cells = ((max_len / h).ceil() as usize).min(m);
    let mut sum = 0.0;
    for a in 0..m {
        for d in 1..=max_cells.min(m - a) {
            let r = d as f64 * h;
            if prefix[a + d] - prefix[a] >= r.powf(dim as f64 + 1.0) {
                sum += r.powi(dim as i32 - 1);
            }
        }
    }
    sum * h * h
}

fn rotation_pass(density: &Density<'_>, budget: &RotationBudget, cells: usize, lines: usize, sphere_order: usize) -> Result<f64> {
    let n = density.dim();
    let radius = density.field().support_radius();
    let sphere = sphere_rule(n, sphere_order)?;
    let cell_rule = gauss_nodes_1d(budget.cell_order)?;
    let h = 2.0 * radius / cells as f64;
    // Hyperplane offsets: midpoints of `lines_per_axis` strips per axis.
    let per_axis = if n == 1 { 1 } else { ((2.0 * radius * lines as f64).ceil() as usize).max(2) };
    let strip = 2.0 * radius / per_axis as f64;
    let hyper_count = per_axis.pow(n as u32 - 1);
    let hyper_weight = strip.powi(n as i32 - 1);
    let mut total = 0.0;
    for (omega, w_omega) in sphere.iter() {
        let basis = complement_basis(omega);
        let sums = exec::map_indices(hyper_count, |k| {
            let mut z = [0.0; MAX_DIM];
            let mut idx = k;
            for b in basis.iter().take(n).skip(1) {
                let s = -radius + (idx % per_axis) as f64 * strip + 0.5 * strip;
                idx /= per_axis;
                for i in 0..n {
                    z[i] += s * b[i];
                }
            }
            let zn = z[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
            if zn > radius {
                return 0.0;
            }
            let mut masses = Vec::with_capacity(cells);
            let mut p = [0.0; MAX_DIM];
            for c in 0..cells {
                let a = -radius + c as f64 * h;
                masses.push(cell_rule.integrate(a, a + h, |t| {
                    for i in 0..n {
                        p[i] = z[i] + t * omega[i];
                    }
                    density.value(&p[..n])
                }));
            }
            line_pairs(&masses, h, n)
        });
        total += w_omega * hyper_weight * sums.into_iter().sum::<f64>();
    }
    Ok(total)
}

/// `|E(F)|` in `R^N x R^N` by the method of rotations: for each direction,
/// lines foliating the orthogonal hyperplane carry the one-dimensional
/// mass scan of `F` projected onto cells.
pub fn rotation_measure(density: &Density<'_>, budget: &RotationBudget) -> Result<RotationReport> {
    let n = density.dim();
    if n > 3 {
        return Err(Error::UnsupportedDimension(n));
    }
    if budget.cells < 4 {
        return Err(Error::invalid("cells", "need at least 4 cells per line"));
    }
    let l1 = density.l1_norm()?;
    let nf = n as f64;
    let c_theory = 5f64.powf(nf + 1.0) * sphere_area(n) / (nf * (nf + 1.0));
    if density.field().is_zero() {
        return Ok(RotationReport {
            measure: QuadratureResult::exact(0.0),
            l1_norm: 0.0,
            c_emp: 0.0,
            c_theory,
        });
    }
    let coarse_sphere = if n == 1 { 1 } else { (budget.sphere_order / 2).max(1) };
    let fine = rotation_pass(density, budget, budget.cells, budget.lines, budget.sphere_order)?;
    let coarse = rotation_pass(density, budget, budget.cells / 2, (budget.lines / 2).max(1), coarse_sphere)?;
    let measure = QuadratureResult::from_refinement(fine, coarse, 0, 0.02 * fine.abs());
    Ok(RotationReport {
        measure,
        l1_norm: l1,
        c_emp: if l1 > 0.0 { fine / l1 } else { 0.0 },
        c_theory,
    })
}

/// Monte Carlo `|E(F)|` over pairs: `x` uniform on the support ball dilated
/// by the largest admissible length, `omega` uniform and `r` with density
/// proportional to `r^{N-1}`.
pub fn pair_measure_direct(density: &Density<'_>, samples: u64, stream: RandomStream) -> Result<QuadratureResult> {
    let n = density.dim();
    let radius = density.field().support_radius();
    // int F over a segment of length r is at most min(sup F r, |F along line|),
    // so admissible lengths satisfy r^N <= sup F.
    let r_max = density.sup_bound().powf(1.0 / n as f64).min(2.0 * radius);
    if density.field().is_zero() || r_max == 0.0 {
        return Ok(QuadratureResult::exact(0.0));
    }
    let outer = radius + r_max;
    let weight = crate::quadrature::ball_volume(n) * outer.powi(n as i32) * sphere_area(n) * r_max.powi(n as i32) / n as f64;
    crate::quadrature::monte_carlo_weighted(
        |rng, buf| {
            let (x, rest) = buf.split_at_mut(n);
            unit_vector(rng, x);
            let rad = outer * rng.random::<f64>().powf(1.0 / n as f64);
            x.iter_mut().for_each(|v| *v *= rad);
            let omega = &mut rest[..n];
            unit_vector(rng, omega);
            let r = r_max * rng.random::<f64>().powf(1.0 / n as f64);
            let mut y = [0.0; MAX_DIM];
            for i in 0..n {
                y[i] = x[i] + r * omega[i];
            }
            let li = line_integral(density, x, &y[..n], 4).map(|q| q.value).unwrap_or(0.0);
            if li >= r.powf(n as f64 + 1.0) {
                weight
            } else {
                0.0
            }
        },
        2 * n,
        samples,
        stream,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub p: f64,
    pub lambda: f64,
    /// Sampled pairs found in `E_lambda`.
    pub pairs: u64,
    pub attempts: u64,
    /// Pairs whose line integral of `|grad u|^p / lambda^p` falls short of
    /// `|x - y|^{N+1}` beyond the quadrature error.
    pub violations: u64,
    /// Smallest ratio `int F / |x - y|^{N+1}` seen.
    pub min_ratio: f64,
}

/// Samples pairs in `E_lambda` (critical exponent) and checks that each
/// satisfies `int_[x,y] |grad u|^p / lambda^p >= |x - y|^{N+1}`.
pub fn holder_containment_check(field: &ScalarField, p: f64, lambda: f64, samples: u64, stream: RandomStream) -> Result<ContainmentReport> {
    let q = LevelSetQuery::critical(field, p)?;
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda", "must be positive"));
    }
    let mut report = ContainmentReport {
        p,
        lambda,
        pairs: 0,
        attempts: 0,
        violations: 0,
        min_ratio: f64::INFINITY,
    };
    let r_max = q.r_max(lambda);
    if field.is_zero() || r_max == 0.0 {
        return Ok(report);
    }
    let density = Density::GradientPower {
        field,
        p,
        scale: lambda.powf(-p),
    };
    let n = field.dim();
    let (lo, hi) = field.support_box();
    let batch = 4096usize;
    let max_attempts = samples.saturating_mul(200);
    let mut next = 0u64;
    while report.pairs < samples && report.attempts < max_attempts {
        let results = exec::map_indices(batch, |k| -> Result<Option<(bool, f64)>> {
            let mut rng = stream.at(next + k as u64);
            let mut x = [0.0; MAX_DIM];
            let mut omega = [0.0; MAX_DIM];
            for a in 0..n {
                x[a] = lo[a] - r_max + (hi[a] - lo[a] + 2.0 * r_max) * rng.random::<f64>();
            }
            unit_vector(&mut rng, &mut omega[..n]);
            let r = r_max * rng.random::<f64>().powf(1.0 / n as f64);
            let mut y = [0.0; MAX_DIM];
            for a in 0..n {
                y[a] = x[a] + r * omega[a];
            }
            if !q.contains(lambda, &x[..n], &y[..n]) {
                return Ok(None);
            }
            let li = line_integral(&density, &x[..n], &y[..n], 8)?;
            let need = r.powf(n as f64 + 1.0);
            let bad = li.value + 3.0 * li.error_estimate + 1e-12 * need < need;
            Ok(Some((bad, li.value / need)))
        });
        next += batch as u64;
        for res in results {
            report.attempts += 1;
            if let Some((bad, ratio)) = res? {
                if report.pairs < samples {
                    report.pairs += 1;
                    report.violations += bad as u64;
                    report.min_ratio = report.min_ratio.min(ratio);
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_bump, FieldSpec};

    #[test]
    fn zero_field_has_empty_family() {
        let f = PiecewiseConstantField::new(0.0, 0.25, vec![0.0; 16]).unwrap();
        let fam = admissible_intervals(&f, 1.0).unwrap();
        assert!(fam.intervals.is_empty());
        assert!(vitali_select(&fam).selected.is_empty());
        let e = weighted_energy(&f, 1.0, &vitali_select(&fam));
        assert_eq!((e.energy, e.cover_bound, e.mass_bound), (0.0, 0.0, 0.0));
    }

    #[test]
    fn single_cell_admissibility() {
        let f = PiecewiseConstantField::new(0.0, 1.0, vec![1.0]).unwrap();
        assert!(f.admissible(0, 1, 1.0));
        assert!(PiecewiseConstantField::new(0.0, 1.0, vec![-1.0]).is_err());
    }

    #[test]
    fn greedy_selection_example() {
        // [0,1], [0.5,1.5], [3,4] on a grid of width 1/2.
        let fam = IntervalFamily {
            gamma: 1.0,
            intervals: vec![
                GridInterval { start: 0, end: 2 },
                GridInterval { start: 1, end: 3 },
                GridInterval { start: 6, end: 8 },
            ],
        };
        let cover = vitali_select(&fam);
        assert_eq!(cover.selected, vec![GridInterval { start: 0, end: 2 }, GridInterval { start: 6, end: 8 }]);
        assert!(check_vitali(&fam, &cover).passed());
        let single = IntervalFamily {
            gamma: 1.0,
            intervals: vec![GridInterval { start: 3, end: 5 }],
        };
        assert_eq!(vitali_select(&single).selected, single.intervals);
    }

    #[test]
    fn interval_energy_identity() {
        assert!((interval_energy(1.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((interval_energy(1.0, 2.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn random_fields_satisfy_the_covering_chain() {
        let stream = RandomStream::new(11, 0);
        for t in 0..20u64 {
            let mut rng = stream.at(t);
            let f = PiecewiseConstantField::random(96, 5, &mut rng);
            for gamma in [0.5, 1.0, 2.0] {
                let fam = admissible_intervals(&f, gamma).unwrap();
                let bound = f.l1_norm().powf(1.0 / (gamma + 1.0));
                assert!(fam.intervals.iter().all(|i| i.length(f.h) <= bound * (1.0 + 1e-12)));
                let cover = vitali_select(&fam);
                assert!(check_vitali(&fam, &cover).passed());
                assert_eq!(verify_5j_cover(&f, gamma, &cover).violations, 0);
                assert!(weighted_energy(&f, gamma, &cover).chain_holds());
            }
        }
    }

    #[test]
    fn two_sided_is_twice_one_sided() {
        let mut rng = RandomStream::new(12, 0).at(0);
        let f = PiecewiseConstantField::random(64, 4, &mut rng);
        let (one, two) = sided_energies(&f, 2.0);
        assert!((two - 2.0 * one).abs() <= 1e-12 * two);
    }

    #[test]
    fn line_integral_examples() {
        let u = make_bump(&[0.0, 0.0], 2.0, 1.0).unwrap();
        let d = Density::Abs(&u);
        let a = line_integral(&d, &[0.1, 0.2], &[0.5, -0.3], 4).unwrap();
        let b = line_integral(&d, &[0.5, -0.3], &[0.1, 0.2], 4).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
        assert!(line_integral(&d, &[0.1, 0.2], &[0.1, 0.2], 4).is_err());
        let z = ScalarField::from_spec(FieldSpec::Zero { dim: 2 }).unwrap();
        assert_eq!(line_integral(&Density::Abs(&z), &[0.0, 0.0], &[1.0, 1.0], 4).unwrap().value, 0.0);
        // F = 1 along a segment: the indicator-like mollified box.
        let m = crate::fields::make_mollified_indicator(&[-2.0, -2.0], &[2.0, 2.0], 0.1).unwrap();
        let one = line_integral(&Density::Abs(&m), &[0.0, 0.0], &[0.3, 0.4], 2).unwrap();
        assert!((one.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rotation_measure_is_monotone_in_scale() {
        let u = make_bump(&[0.0], 1.0, 1.0).unwrap();
        let v = u.scaled(2.0);
        let b = RotationBudget::for_dim(1);
        let a = rotation_measure(&Density::Abs(&u), &b).unwrap();
        let c = rotation_measure(&Density::Abs(&v), &b).unwrap();
        assert!(c.measure.value >= a.measure.value);
        assert!(a.c_emp <= a.c_theory);
    }

    #[test]
    fn rotation_agrees_with_direct_pairs_in_1d() {
        let u = make_bump(&[0.0], 1.0, 2.0).unwrap();
        let d = Density::Abs(&u);
        let rot = rotation_measure(&d, &RotationBudget::for_dim(1)).unwrap();
        let mc = pair_measure_direct(&d, 100_000, RandomStream::new(13, 0)).unwrap();
        let tol = 3.0 * (rot.measure.error_estimate + mc.error_estimate);
        assert!((rot.measure.value - mc.value).abs() < tol, "{rot:?} {mc:?}");
    }

    #[test]
    fn holder_containment_for_bump() {
        let u = make_bump(&[0.0], 1.0, 1.0).unwrap();
        for p in [1.0, 2.0] {
            let r = holder_containment_check(&u, p, u.lip(), 2000, RandomStream::new(14, 0)).unwrap();
            assert_eq!(r.pairs, 2000);
            assert_eq!(r.violations, 0, "{r:?}");
        }
    }
}
