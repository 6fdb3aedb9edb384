//! Phase-space metrics: positive quadratic forms, symplectic duals, means,
//! the Planck function, the separation functional δ_r, axiom certification
//! on sampled pairs, and grid geodesics for geodesic temperance.
//!
//! Basis convention: coordinates ordered (x_1..x_n, ξ_1..ξ_n); the standard
//! symplectic matrix J maps (x, ξ) to (ξ, -x).

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::PhaseGrid;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BinaryHeap;

/// Positive definite symmetric form on 2n-dimensional phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadForm {
    pub m: DMatrix<f64>,
}

impl QuadForm {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let dim = m.nrows();
        if dim == 0 || dim % 2 != 0 || m.ncols() != dim {
            return Err(Error::precondition("form must be square with even dim"));
        }
        let scale = m.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        for i in 0..dim {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::precondition("form not symmetric"));
                }
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::precondition("form not positive definite"));
        }
        Ok(QuadForm { m: sym })
    }

    pub fn identity(dim: usize) -> Self {
        QuadForm { m: DMatrix::identity(dim, dim) }
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        QuadForm { m: DMatrix::identity(dim, dim) * c }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn eval(&self, t: &DVector<f64>) -> f64 {
        (t.transpose() * &self.m * t)[(0, 0)]
    }

    pub fn det(&self) -> f64 {
        self.m.determinant()
    }

    fn inv_matrix(&self) -> Result<DMatrix<f64>> {
        self.m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::numerical("degenerate form"))
    }

    /// Symmetric square root via eigendecomposition.
    pub fn sqrt_matrix(&self) -> DMatrix<f64> {
        let eig = self.m.clone().symmetric_eigen();
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        &eig.eigenvectors * d * eig.eigenvectors.transpose()
    }

    /// Q^σ = J^T Q^{-1} J; involution.
    pub fn symplectic_dual(&self) -> Result<QuadForm> {
        let dim = self.dim();
        let eig = self.m.clone().symmetric_eigen();
        let emax = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let emin = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        if !(emin > 0.0) || emax / emin > 1e14 {
            return Err(Error::numerical("degenerate form in symplectic dual"));
        }
        let j = symplectic_j(dim);
        let inv = self.inv_matrix()?;
        QuadForm::new(j.transpose() * inv * j)
    }

    /// Unique SPD G with G A^{-1} G = B, via A^{1/2}(A^{-1/2} B A^{-1/2})^{1/2} A^{1/2}.
    pub fn geometric_mean(&self, other: &QuadForm) -> Result<QuadForm> {
        if self.dim() != other.dim() {
            return Err(Error::precondition("dimension mismatch"));
        }
        let a_half = self.sqrt_matrix();
        let a_half_inv = a_half
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::numerical("degenerate form in geometric mean"))?;
        let middle = &a_half_inv * &other.m * &a_half_inv;
        let middle_sqrt = QuadForm::new(middle)?.sqrt_matrix();
        QuadForm::new(&a_half * middle_sqrt * &a_half)
    }

    /// 2 (A^{-1} + B^{-1})^{-1}; mean of equals is the form itself.
    pub fn harmonic_mean(&self, other: &QuadForm) -> Result<QuadForm> {
        if self.dim() != other.dim() {
            return Err(Error::precondition("dimension mismatch"));
        }
        let s = self.inv_matrix()? + other.inv_matrix()?;
        let inv = s
            .try_inverse()
            .ok_or_else(|| Error::numerical("degenerate harmonic mean"))?;
        QuadForm::new(inv * 2.0)
    }

    /// (λ_min, λ_max) of the form matrix.
    pub fn eigen_bounds(&self) -> (f64, f64) {
        let eig = self.m.clone().symmetric_eigen();
        let lo = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        let hi = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        (lo, hi)
    }

    /// Euclidean radius of the narrowest axis of the unit ball {self ≤ 1}.
    pub fn min_ball_radius(&self) -> f64 {
        1.0 / self.eigen_bounds().1.sqrt()
    }

    /// sup_T self(T)/other(T) = λ_max(other^{-1/2} self other^{-1/2}); exact,
    /// replaces direction probing for pairs of forms.
    pub fn ratio_sup(&self, other: &QuadForm) -> f64 {
        let oh_inv = {
            let eig = other.m.clone().symmetric_eigen();
            let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(1e-300).sqrt()));
            &eig.eigenvectors * d * eig.eigenvectors.transpose()
        };
        let sym = &oh_inv * &self.m * &oh_inv;
        sym.symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max)
    }
}

/// Standard symplectic matrix: (x, ξ) -> (ξ, -x) in the fixed basis.
pub fn symplectic_j(dim: usize) -> DMatrix<f64> {
    let n = dim / 2;
    let mut j = DMatrix::zeros(dim, dim);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

type MetricEval = dyn Fn(&DVector<f64>) -> QuadForm + Send + Sync;
type WeightEval = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

pub struct MetricField {
    pub label: String,
    pub dim: usize,
    eval: Box<MetricEval>,
}

impl MetricField {
    pub fn general(
        label: &str,
        dim: usize,
        eval: impl Fn(&DVector<f64>) -> QuadForm + Send + Sync + 'static,
    ) -> Self {
        MetricField { label: label.into(), dim, eval: Box::new(eval) }
    }

    /// Split metric φ(X)^{-2}|dx|^2 + Φ(X)^{-2}|dξ|^2 for n = dim/2.
    pub fn split(
        label: &str,
        dim: usize,
        phi: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        phi_cap: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let n = dim / 2;
        MetricField::general(label, dim, move |x| {
            let p = phi(x).powi(-2);
            let q = phi_cap(x).powi(-2);
            let mut m = DMatrix::zeros(dim, dim);
            for i in 0..n {
                m[(i, i)] = p;
                m[(n + i, n + i)] = q;
            }
            QuadForm { m }
        })
    }

    pub fn at(&self, x: &DVector<f64>) -> QuadForm {
        (self.eval)(x)
    }
}

pub struct Weight {
    pub label: String,
    eval: Box<WeightEval>,
}

impl Weight {
    pub fn new(label: &str, eval: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Weight { label: label.into(), eval: Box::new(eval) }
    }

    pub fn at(&self, x: &DVector<f64>) -> f64 {
        (self.eval)(x)
    }
}

fn norm_sq(x: &DVector<f64>) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Built-in metric registry (2-dim phase space).
pub fn metric_by_id(id: &str) -> Result<MetricField> {
    match id {
        "euclidean" => Ok(MetricField::general("euclidean", 2, |_| QuadForm::identity(2))),
        "shubin" => Ok(MetricField::split(
            "shubin",
            2,
            |x| (1.0 + norm_sq(x)).sqrt(),
            |x| (1.0 + norm_sq(x)).sqrt(),
        )),
        "sg" => Ok(MetricField::split(
            "sg",
            2,
            |x| (1.0 + x[0] * x[0]).sqrt(),
            |x| (1.0 + x[1] * x[1]).sqrt(),
        )),
        "planck-h" => {
            // semiclassical: constant form h·I, so λ_g = 1/h
            let h = 1.0 / 16.0;
            Ok(MetricField::general("planck-h", 2, move |_| {
                QuadForm::scaled_identity(2, h)
            }))
        }
        _ => Err(Error::UnknownId(id.into())),
    }
}

pub fn weight_by_id(id: &str) -> Result<Weight> {
    match id {
        "one" => Ok(Weight::new("one", |_| 1.0)),
        "bracket" => Ok(Weight::new("bracket", |x| (1.0 + norm_sq(x)).sqrt())),
        "bracket-sq" => Ok(Weight::new("bracket-sq", |x| 1.0 + norm_sq(x))),
        "bracket-inv" => Ok(Weight::new("bracket-inv", |x| (1.0 + norm_sq(x)).powf(-0.5))),
        _ => Err(Error::UnknownId(id.into())),
    }
}

/// λ_g(X) = inf_T (g^σ_X(T)/g_X(T))^{1/2}, the smallest generalized
/// eigenvalue of the pencil (g^σ_X, g_X), square-rooted.
pub fn planck(g: &MetricField, x: &DVector<f64>) -> Result<f64> {
    let q = g.at(x);
    let dual = q.symplectic_dual()?;
    Ok((1.0 / q.ratio_sup(&dual)).sqrt())
}

const PROJ_TOL: f64 = 1e-8;
const PROJ_CAP: usize = 10_000;

/// H-metric projection of p onto the ellipsoid {v : Q(v-c) ≤ r²}.
fn project_ellipsoid(
    h: &DMatrix<f64>,
    q: &QuadForm,
    c: &DVector<f64>,
    r: f64,
    p: &DVector<f64>,
) -> Result<DVector<f64>> {
    let dev = p - c;
    if q.eval(&dev) <= r * r {
        return Ok(p.clone());
    }
    let hp = h * p;
    let qc = &q.m * c;
    let x_of = |lam: f64| -> Result<DVector<f64>> {
        let a = h + &q.m * lam;
        let rhs = &hp + &qc * lam;
        a.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("singular system in ellipsoid projection"))
    };
    let f = |lam: f64| -> Result<f64> {
        let x = x_of(lam)?;
        Ok(q.eval(&(x - c)) - r * r)
    };
    // f is decreasing in λ with f(0) > 0; bracket then bisect
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut grow = 0;
    while f(hi)? > 0.0 {
        lo = hi;
        hi *= 8.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::numerical("projection multiplier bracket failed"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    x_of(0.5 * (lo + hi))
}

/// Gauge value of the displacement from `p` to the ball {ball(v - c) ≤ r²},
/// i.e. inf over the ball of gauge(p - v); zero when p is inside.
pub fn gauge_to_ball(
    gauge: &QuadForm,
    ball: &QuadForm,
    c: &DVector<f64>,
    r: f64,
    p: &DVector<f64>,
) -> Result<f64> {
    let z = project_ellipsoid(&gauge.m, ball, c, r, p)?;
    Ok(gauge.eval(&(p - z)))
}

/// δ_r(X,Y) = 1 + (g^σ_X ∧ g^σ_Y)(U_{X,r} - U_{Y,r}), the set value being the
/// minimum of the harmonic-mean form over the Minkowski difference, computed
/// by alternating H-projections onto the two metric balls.
pub fn delta_r(g: &MetricField, x: &DVector<f64>, y: &DVector<f64>, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::precondition("r must be positive"));
    }
    let gx = g.at(x);
    let gy = g.at(y);
    let h = gx.symplectic_dual()?.harmonic_mean(&gy.symplectic_dual()?)?;
    let hm = &h.m;
    let mut q = y.clone();
    let mut last = f64::MAX;
    for it in 0..PROJ_CAP {
        let p = project_ellipsoid(hm, &gx, x, r, &q)?;
        q = project_ellipsoid(hm, &gy, y, r, &p)?;
        let d = h.eval(&(&p - &q));
        if d <= PROJ_TOL {
            return Ok(1.0);
        }
        if (last - d).abs() <= PROJ_TOL * (1.0 + d) {
            return Ok(1.0 + d);
        }
        last = d;
        if it + 1 == PROJ_CAP {
            return Err(Error::numerical(format!(
                "δ_r projections did not converge: last value {d:.6e} after {PROJ_CAP} iterations"
            )));
        }
    }
    unreachable!()
}

/// Coarse one-shot estimate 1 + (g^σ_X ∧ g^σ_Y)(X - Y); no ball subtraction.
pub fn delta_r_fast(g: &MetricField, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let h = g
        .at(x)
        .symplectic_dual()?
        .harmonic_mean(&g.at(y).symplectic_dual()?)?;
    Ok(1.0 + h.eval(&(x - y)))
}

const C_GRID_MAX_POW: u32 = 20;
const N_GRID_MAX: u32 = 16;

pub fn default_r_grid() -> Vec<f64> {
    (0..=8).map(|k| (2.0f64).powi(-k)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FitComponent {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "r", skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n_exp: Option<u32>,
    pub pass: bool,
}

impl FitComponent {
    fn fail() -> Self {
        FitComponent { c: f64::INFINITY, r: None, n_exp: None, pass: false }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomReport {
    pub metric: String,
    pub samples_used: usize,
    pub slow_variation: FitComponent,
    pub temperance: FitComponent,
    pub uncertainty: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geodesic: Option<FitComponent>,
}

pub type PointPair = (DVector<f64>, DVector<f64>);

/// Deterministic extremes (center↔corners, corner↔corner, axis↔axis) plus
/// seeded uniform pairs over the per-coordinate box [-b, b]^2.
pub fn sample_pairs(box_half: f64, count: usize, seed: u64) -> Vec<PointPair> {
    let b = box_half;
    let pt = |x: f64, y: f64| DVector::from_vec(vec![x, y]);
    let mut pairs: Vec<PointPair> = Vec::new();
    let corners = [pt(b, b), pt(b, -b), pt(-b, b), pt(-b, -b)];
    for c in &corners {
        pairs.push((pt(0.0, 0.0), c.clone()));
    }
    pairs.push((corners[0].clone(), corners[3].clone()));
    pairs.push((corners[1].clone(), corners[2].clone()));
    pairs.push((corners[0].clone(), corners[1].clone()));
    pairs.push((pt(b, 0.0), pt(-b, 0.0)));
    pairs.push((pt(0.0, b), pt(0.0, -b)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while pairs.len() < count {
        let p = pt(rng.gen_range(-b..=b), rng.gen_range(-b..=b));
        let q = pt(rng.gen_range(-b..=b), rng.gen_range(-b..=b));
        pairs.push((p, q));
    }
    pairs
}

struct PairData {
    gx: QuadForm,
    gy: QuadForm,
    ratio_xy: f64, // sup g_X(T)/g_Y(T)
    ratio_yx: f64,
    gauge_x: f64, // g^σ_X(X-Y)
    gauge_y: f64,
    close_x: f64, // g_X(X-Y)
    close_y: f64,
}

fn pair_data(g: &MetricField, pairs: &[PointPair]) -> Result<Vec<PairData>> {
    let rows = exec::map_slice(pairs, |(x, y)| -> Result<PairData> {
        let gx = g.at(x);
        let gy = g.at(y);
        let d = x - y;
        Ok(PairData {
            ratio_xy: gx.ratio_sup(&gy),
            ratio_yx: gy.ratio_sup(&gx),
            gauge_x: gx.symplectic_dual()?.eval(&d),
            gauge_y: gy.symplectic_dual()?.eval(&d),
            close_x: gx.eval(&d),
            close_y: gy.eval(&d),
            gx,
            gy,
        })
    });
    rows.into_iter().collect()
}

/// Smallest C in {2^k} making `need_c` hold for all items, if any.
fn fit_c(needs: &[f64]) -> Option<f64> {
    let worst = needs.iter().cloned().fold(1.0f64, f64::max);
    (0..=C_GRID_MAX_POW)
        .map(|k| (2.0f64).powi(k as i32))
        .find(|&c| c >= worst)
}

/// Slow variation: largest r in the grid admitting some C ≤ 2^20, with the
/// smallest such C. Both implication directions are enforced.
fn fit_slow(data: &[PairData], r_grid: &[f64]) -> FitComponent {
    let mut rs: Vec<f64> = r_grid.to_vec();
    rs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for &r in &rs {
        let mut needs: Vec<f64> = Vec::new();
        for d in data {
            if d.close_x <= r * r {
                needs.push(d.ratio_xy.max(d.ratio_yx));
            }
            if d.close_y <= r * r {
                needs.push(d.ratio_xy.max(d.ratio_yx));
            }
        }
        if let Some(c) = fit_c(&needs) {
            return FitComponent { c, r: Some(r), n_exp: None, pass: true };
        }
    }
    FitComponent::fail()
}

/// Temperance: smallest N then smallest C with
/// (g_X(T)/g_Y(T))^{±1} ≤ C (1 + g^σ_X(X-Y))^N for both pair orientations.
fn fit_temperance(data: &[PairData]) -> FitComponent {
    for n in 0..=N_GRID_MAX {
        let mut needs: Vec<f64> = Vec::new();
        for d in data {
            let gauge_pow_x = (1.0 + d.gauge_x).powi(n as i32);
            let gauge_pow_y = (1.0 + d.gauge_y).powi(n as i32);
            needs.push(d.ratio_xy.max(d.ratio_yx) / gauge_pow_x);
            needs.push(d.ratio_xy.max(d.ratio_yx) / gauge_pow_y);
        }
        if let Some(c) = fit_c(&needs) {
            return FitComponent { c, r: None, n_exp: Some(n), pass: true };
        }
    }
    FitComponent::fail()
}

pub fn check_axioms(g: &MetricField, pairs: &[PointPair], r_grid: &[f64]) -> Result<AxiomReport> {
    if pairs.len() < 100 {
        return Err(Error::precondition(format!(
            "need at least 100 sample pairs, got {}",
            pairs.len()
        )));
    }
    let data = pair_data(g, pairs)?;
    let slow = fit_slow(&data, r_grid);
    let temper = fit_temperance(&data);
    let mut uncertainty = true;
    for d in &data {
        // λ_g ≥ 1 ⇔ sup g/g^σ ≤ 1
        for q in [&d.gx, &d.gy] {
            let dual = q.symplectic_dual()?;
            if q.ratio_sup(&dual) > 1.0 + 1e-9 {
                uncertainty = false;
            }
        }
    }
    Ok(AxiomReport {
        metric: g.label.clone(),
        samples_used: pairs.len(),
        slow_variation: slow,
        temperance: temper,
        uncertainty,
        geodesic: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightReport {
    pub weight: String,
    pub metric: String,
    pub samples_used: usize,
    pub slow_variation: FitComponent,
    pub temperance: FitComponent,
}

pub fn check_weight(
    g: &MetricField,
    m: &Weight,
    pairs: &[PointPair],
    r_grid: &[f64],
) -> Result<WeightReport> {
    let vals: Vec<(f64, f64, f64, f64, f64, f64)> = {
        let rows = exec::map_slice(pairs, |(x, y)| -> Result<_> {
            let gx = g.at(x);
            let gy = g.at(y);
            let d = x - y;
            Ok((
                m.at(x),
                m.at(y),
                gx.eval(&d),
                gy.eval(&d),
                gx.symplectic_dual()?.eval(&d),
                gy.symplectic_dual()?.eval(&d),
            ))
        });
        rows.into_iter().collect::<Result<Vec<_>>>()?
    };
    // slow variation for the weight: ratio within C on g-close pairs
    let mut rs: Vec<f64> = r_grid.to_vec();
    rs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut slow = FitComponent::fail();
    for &r in &rs {
        let mut needs: Vec<f64> = Vec::new();
        for &(mx, my, cx, cy, _, _) in &vals {
            let ratio = (mx / my).max(my / mx);
            if cx <= r * r || cy <= r * r {
                needs.push(ratio);
            }
        }
        if let Some(c) = fit_c(&needs) {
            slow = FitComponent { c, r: Some(r), n_exp: None, pass: true };
            break;
        }
    }
    let mut temper = FitComponent::fail();
    for n in 0..=N_GRID_MAX {
        let mut needs: Vec<f64> = Vec::new();
        for &(mx, my, _, _, gx_gauge, gy_gauge) in &vals {
            let ratio = (mx / my).max(my / mx);
            needs.push(ratio / (1.0 + gx_gauge).powi(n as i32));
            needs.push(ratio / (1.0 + gy_gauge).powi(n as i32));
        }
        if let Some(c) = fit_c(&needs) {
            temper = FitComponent { c, r: None, n_exp: Some(n), pass: true };
            break;
        }
    }
    Ok(WeightReport {
        weight: m.label.clone(),
        metric: g.label.clone(),
        samples_used: pairs.len(),
        slow_variation: slow,
        temperance: temper,
    })
}

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // reversed: BinaryHeap is a max-heap, we need the smallest distance
        other.dist.total_cmp(&self.dist)
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn snap(grid: &PhaseGrid, p: &DVector<f64>) -> Result<(usize, usize)> {
    // x_i = -L + i·dx; ξ_k = (k - N/2)·dξ
    let i = ((p[0] + grid.l_x) / grid.dx()).round() as isize;
    let k = (p[1] / grid.dxi() + grid.n_xi as f64 / 2.0).round() as isize;
    if i < 0 || i >= grid.n_x as isize || k < 0 || k >= grid.n_xi as isize {
        return Err(Error::precondition("point outside grid box"));
    }
    Ok((i as usize, k as usize))
}

/// Dijkstra distance field from `src` over the 8-connected grid graph with
/// edge lengths measured by g^# at each edge midpoint.
pub fn geodesic_field(g: &MetricField, grid: &PhaseGrid, src: (usize, usize)) -> Vec<f64> {
    let (nx, nk) = (grid.n_x, grid.n_xi);
    let idx = |i: usize, k: usize| i * nk + k;
    let sharp = |x: f64, xi: f64| -> QuadForm {
        let p = DVector::from_vec(vec![x, xi]);
        let q = g.at(&p);
        let dual = q.symplectic_dual().expect("valid metric");
        q.geometric_mean(&dual).expect("valid metric")
    };
    let mut dist = vec![f64::INFINITY; nx * nk];
    let mut heap = BinaryHeap::new();
    dist[idx(src.0, src.1)] = 0.0;
    heap.push(HeapEntry { dist: 0.0, node: idx(src.0, src.1) });
    let steps: [(isize, isize); 8] =
        [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
    while let Some(HeapEntry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        let (i, k) = (node / nk, node % nk);
        for &(di, dk) in &steps {
            let (ni, nk2) = (i as isize + di, k as isize + dk);
            if ni < 0 || ni >= nx as isize || nk2 < 0 || nk2 >= nk as isize {
                continue;
            }
            let (ni, nk2) = (ni as usize, nk2 as usize);
            let ex = di as f64 * grid.dx();
            let ek = dk as f64 * grid.dxi();
            let mx = 0.5 * (grid.x(i) + grid.x(ni));
            let mk = 0.5 * (grid.xi(k) + grid.xi(nk2));
            let form = sharp(mx, mk);
            let len = form.eval(&DVector::from_vec(vec![ex, ek])).sqrt();
            let nd = d + len;
            let t = idx(ni, nk2);
            if nd < dist[t] {
                dist[t] = nd;
                heap.push(HeapEntry { dist: nd, node: t });
            }
        }
    }
    dist
}

pub fn geodesic_distance(
    g: &MetricField,
    x: &DVector<f64>,
    y: &DVector<f64>,
    grid: &PhaseGrid,
) -> Result<f64> {
    let s = snap(grid, x)?;
    let t = snap(grid, y)?;
    let field = geodesic_field(g, grid, s);
    let d = field[t.0 * grid.n_xi + t.1];
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::numerical("target unreachable in grid graph"))
    }
}

/// Fit (C, N) for g_X(T) ≤ C g_Y(T) (1 + d(X,Y))^N over sampled pairs, with
/// d the g^#-geodesic grid distance. Pairs sharing a source reuse one
/// distance field.
pub fn check_geodesic_temperance(
    g: &MetricField,
    pairs: &[PointPair],
    grid: &PhaseGrid,
) -> Result<FitComponent> {
    // group by snapped source node
    let mut by_src: std::collections::HashMap<(usize, usize), Vec<usize>> =
        std::collections::HashMap::new();
    let mut snapped: Vec<((usize, usize), (usize, usize))> = Vec::with_capacity(pairs.len());
    for (pi, (x, y)) in pairs.iter().enumerate() {
        let s = snap(grid, x)?;
        let t = snap(grid, y)?;
        snapped.push((s, t));
        by_src.entry(s).or_default().push(pi);
    }
    let sources: Vec<(usize, usize)> = by_src.keys().cloned().collect();
    let fields = exec::map_slice(&sources, |s| geodesic_field(g, grid, *s));
    let mut dist_of = vec![0.0f64; pairs.len()];
    for (s, field) in sources.iter().zip(fields.iter()) {
        for &pi in &by_src[s] {
            let t = snapped[pi].1;
            dist_of[pi] = field[t.0 * grid.n_xi + t.1];
        }
    }
    let data = pair_data(g, pairs)?;
    for n in 0..=N_GRID_MAX {
        let mut needs: Vec<f64> = Vec::new();
        for (d, &gd) in data.iter().zip(dist_of.iter()) {
            if !gd.is_finite() {
                return Err(Error::numerical("unreachable pair in geodesic temperance"));
            }
            needs.push(d.ratio_xy.max(d.ratio_yx) / (1.0 + gd).powi(n as i32));
        }
        if let Some(c) = fit_c(&needs) {
            return Ok(FitComponent { c, r: None, n_exp: Some(n), pass: true });
        }
    }
    Ok(FitComponent::fail())
}
