//! Neumann-series inversion inside the symbol algebra: r = I − C⁻¹ a*#a is a
//! strict contraction for invertible a^w, its geometric series assembles the
//! two-sided # inverse, and inverse families inherit parameter regularity
//! through the derivative identity ∂b = −b # ∂a # b.

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::SymbolGrid;
use crate::linalg;
use crate::metric::{metric_by_id, weight_by_id, MetricField};
use crate::quantize::{dequantize, moyal, weyl_quantize, weyl_quantize_windowed, OperatorMatrix};
use crate::symbol::seminorm_s;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

/// A uniformly sampled one-parameter family of symbols on a shared grid.
#[derive(Debug, Clone)]
pub struct SymbolFamily {
    pub lambdas: Vec<f64>,
    pub members: Vec<SymbolGrid>,
    pub smoothness: usize,
}

impl SymbolFamily {
    pub fn new(lambdas: Vec<f64>, members: Vec<SymbolGrid>, smoothness: usize) -> Result<Self> {
        if lambdas.len() != members.len() || lambdas.len() < 2 {
            return Err(Error::precondition("family needs >= 2 (lambda, member) pairs"));
        }
        let h = lambdas[1] - lambdas[0];
        if h <= 0.0 {
            return Err(Error::precondition("lambda samples must increase"));
        }
        for w in lambdas.windows(2) {
            if ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0) {
                return Err(Error::precondition("lambda grid must be uniform"));
            }
        }
        let g0 = members[0].grid;
        let d0 = members[0].d;
        if members.iter().any(|m| m.grid != g0 || m.d != d0) {
            return Err(Error::IncompatibleGrids("family members on mixed grids".into()));
        }
        Ok(SymbolFamily { lambdas, members, smoothness })
    }

    pub fn from_fn(
        grid: crate::grid::PhaseGrid,
        lambdas: Vec<f64>,
        smoothness: usize,
        f: impl Fn(f64, f64, f64) -> Complex64 + Sync,
    ) -> Result<Self> {
        let members = lambdas
            .iter()
            .map(|&l| SymbolGrid::from_fn(grid, |x, xi| f(l, x, xi)))
            .collect::<Result<Vec<_>>>()?;
        SymbolFamily::new(lambdas, members, smoothness)
    }

    pub fn step(&self) -> f64 {
        self.lambdas[1] - self.lambdas[0]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NeumannReport {
    pub m_max: usize,
    /// Measured ‖r^w‖ — must be < 1.
    pub contraction: f64,
    /// ‖(r^w)^m‖ for the traced terms (m = 1, 2, …).
    pub tail_norms: Vec<f64>,
    /// S(1,g) seminorms of the de-quantized m-th power, orders k = 0, 1, 2.
    pub seminorm_traces: Vec<[f64; 3]>,
    /// Geometric decay ratio fitted per order (the proof's ε_k).
    pub fitted_ratios: [f64; 3],
    pub converged: bool,
    /// Set when the series was accumulated by repeated squaring (no per-m
    /// traces available beyond what was recorded).
    pub squared_mode: bool,
}

const TRACE_CAP: usize = 12;
const SQUARING_THRESHOLD: usize = 64;

fn fit_ratio(trace: &[f64]) -> f64 {
    // least-squares slope of ln(trace) against m
    let pts: Vec<(f64, f64)> = trace
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(i, &v)| (i as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    ((n * sxy - sx * sy) / (n * sxx - sx * sx)).exp()
}

/// The seminorm traces are measured in the isotropic small-parameter metric:
/// its g-balls stay resolvable on every grid the tests use, so the trace is a
/// property of the symbol rather than of the discretization.
fn trace_metric() -> Result<MetricField> {
    metric_by_id("planck-h")
}

/// Accumulate S = I + Σ_{m≥1} R^m with tail control ε^{m+1}/(1−ε) ≤ tol.
/// Sequential term-by-term up to the squaring threshold, then the
/// repeated-squaring product Π (I + R^{2^j}).
fn neumann_matrix(
    rw: &OperatorMatrix,
    tol: f64,
    m_cap: usize,
    trace: bool,
) -> Result<(DMatrix<Complex64>, NeumannReport)> {
    let eps = rw.norm();
    if eps >= 1.0 - 1e-12 {
        return Err(Error::precondition(format!(
            "Neumann contraction violated: measured norm {eps:.6} >= 1"
        )));
    }
    let n = rw.m.nrows();
    let needed = if eps <= 0.0 {
        0
    } else {
        ((tol * (1.0 - eps)).ln() / eps.ln()).ceil().max(0.0) as usize
    };
    let metric = trace_metric()?;
    let m_one = weight_by_id("one")?;
    let mut tail_norms = Vec::new();
    let mut seminorm_traces = Vec::new();
    let mut record = |p: &DMatrix<Complex64>| -> Result<()> {
        if !trace || tail_norms.len() >= TRACE_CAP {
            return Ok(());
        }
        tail_norms.push(linalg::opnorm(p));
        let op = OperatorMatrix::from_matrix(rw.grid, p.clone())?;
        let sym = dequantize(&op)?;
        let mut row = [0.0f64; 3];
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = seminorm_s(&sym, &m_one, &metric, k)?;
        }
        seminorm_traces.push(row);
        Ok(())
    };

    let (s, converged, m_used, squared) = if needed <= SQUARING_THRESHOLD.min(m_cap) {
        let mut s = linalg::identity(n);
        let mut p = linalg::identity(n);
        let mut m = 0usize;
        let mut ok = false;
        while m < m_cap {
            p = &p * &rw.m;
            m += 1;
            s += &p;
            record(&p)?;
            let tail = if eps <= 0.0 { 0.0 } else { eps.powi(m as i32 + 1) / (1.0 - eps) };
            if tail <= tol {
                ok = true;
                break;
            }
        }
        (s, ok, m, false)
    } else {
        // number of doublings so that ε^(2^j) is past the tolerance
        let mut j = 1u32;
        while (2f64.powi(j as i32)) * eps.ln() > (tol * (1.0 - eps)).ln() {
            j += 1;
            if j > 60 {
                break;
            }
        }
        let mut s = linalg::identity(n) + &rw.m;
        let mut rp = rw.m.clone();
        record(&rp)?;
        for _ in 1..j {
            rp = &rp * &rp;
            s *= linalg::identity(n) + &rp;
        }
        (s, true, 1usize << j.min(62), true)
    };

    if !converged {
        return Err(Error::numerical(format!(
            "Neumann series did not reach tol {tol:.1e} within {m_cap} terms (contraction {eps:.4})"
        )));
    }
    let fitted_ratios = [
        fit_ratio(&seminorm_traces.iter().map(|r| r[0]).collect::<Vec<_>>()),
        fit_ratio(&seminorm_traces.iter().map(|r| r[1]).collect::<Vec<_>>()),
        fit_ratio(&seminorm_traces.iter().map(|r| r[2]).collect::<Vec<_>>()),
    ];
    Ok((
        s,
        NeumannReport {
            m_max: m_used,
            contraction: eps,
            tail_norms,
            seminorm_traces,
            fitted_ratios,
            converged,
            squared_mode: squared,
        },
    ))
}

/// (1 − r)^{-#} by the geometric series, powers taken on the operator side
/// and de-quantized once at the end.
pub fn neumann_inverse(
    r: &SymbolGrid,
    tol: f64,
    m_cap: usize,
) -> Result<(SymbolGrid, NeumannReport)> {
    let rw = weyl_quantize_windowed(r)?;
    let (s, report) = neumann_matrix(&rw, tol, m_cap, true)?;
    let out = dequantize(&OperatorMatrix::from_matrix(r.grid, s)?)?;
    Ok((out, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct InverseReport {
    /// The upper bound C in r = I − C⁻¹ a*#a.
    pub c_bound: f64,
    pub contraction: f64,
    pub condition: f64,
    pub residual_left: f64,
    pub residual_right: f64,
    /// ‖dequantized inverse − direct matrix inverse‖ (grids ≤ 256 only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direct_agreement: Option<f64>,
    pub neumann: NeumannReport,
}

fn core_sup_diff_one(s: &SymbolGrid) -> Result<f64> {
    let vals = s.scalar()?;
    let g = s.grid;
    let mut e = 0.0f64;
    for i in 0..g.n_x {
        for k in 0..g.n_xi {
            if g.core_box(i, k) {
                e = e.max((vals[(i, k)] - Complex64::new(1.0, 0.0)).norm());
            }
        }
    }
    Ok(e)
}

const NEUMANN_TOL: f64 = 1e-10;
const NEUMANN_CAP: usize = 1 << 20;
const COND_CAP: f64 = 1e8;

fn symbol_inverse_core(
    aw: &OperatorMatrix,
    a_nodes: &SymbolGrid,
) -> Result<(SymbolGrid, InverseReport)> {
    let sv = linalg::singular_values(&aw.m);
    let smax = sv[0];
    let smin = *sv.last().unwrap();
    if smin <= 0.0 || smax / smin > COND_CAP {
        return Err(Error::precondition(format!(
            "operator not safely invertible: condition {:.3e}",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    let c = 1.01 * smax * smax;
    let n = aw.m.nrows();
    let ata = aw.m.adjoint() * &aw.m;
    let rm = linalg::identity(n) - &ata * Complex64::new(1.0 / c, 0.0);
    let rw = OperatorMatrix::from_matrix(aw.grid, rm)?;
    let (s, neumann) = neumann_matrix(&rw, NEUMANN_TOL, NEUMANN_CAP, true)?;
    let binv = &s * aw.m.adjoint() * Complex64::new(1.0 / c, 0.0);
    let direct_agreement = if n <= 256 {
        let direct = linalg::try_inverse(&aw.m)?;
        Some((&binv - &direct).iter().map(|z| z.norm()).fold(0.0, f64::max))
    } else {
        None
    };
    let b = dequantize(&OperatorMatrix::from_matrix(aw.grid, binv)?)?;
    let residual_left = core_sup_diff_one(&moyal(&b, a_nodes)?)?;
    let residual_right = core_sup_diff_one(&moyal(a_nodes, &b)?)?;
    Ok((
        b,
        InverseReport {
            c_bound: c,
            contraction: neumann.contraction,
            condition: smax / smin,
            residual_left,
            residual_right,
            direct_agreement,
            neumann,
        },
    ))
}

/// Two-sided # inverse of a node symbol.
pub fn symbol_inverse(a: &SymbolGrid) -> Result<(SymbolGrid, InverseReport)> {
    let aw = weyl_quantize(a)?;
    symbol_inverse_core(&aw, a)
}

/// Two-sided # inverse of a closure symbol, sampled exactly on the doubled
/// lattice (for symbols that grow toward the box boundary, where node
/// interpolation would ring).
pub fn symbol_inverse_fn(
    grid: &crate::grid::PhaseGrid,
    f: impl Fn(f64, f64) -> Complex64 + Sync,
) -> Result<(SymbolGrid, InverseReport)> {
    let aw = crate::quantize::weyl_quantize_fn(grid, &f, false)?;
    let nodes = SymbolGrid::from_fn(*grid, &f)?;
    symbol_inverse_core(&aw, &nodes)
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyReport {
    pub residuals: Vec<(f64, f64, f64)>,
    /// max over steps of ‖Δb‖_∞ / ‖Δa‖_∞.
    pub continuity_ratio: f64,
}

/// Memberwise inversion of a family, in parallel, with a continuity
/// diagnostic on the inverses.
pub fn family_inverse(family: &SymbolFamily) -> Result<(SymbolFamily, FamilyReport)> {
    let pairs: Vec<(f64, &SymbolGrid)> =
        family.lambdas.iter().copied().zip(family.members.iter()).collect();
    let results = exec::map_slice(&pairs, |(l, a)| {
        symbol_inverse(a).map_err(|e| Error::numerical(format!("at lambda {l}: {e}")))
    });
    let mut inverses = Vec::with_capacity(results.len());
    let mut residuals = Vec::with_capacity(results.len());
    for ((l, _), r) in pairs.iter().zip(results) {
        let (b, rep) = r?;
        residuals.push((*l, rep.residual_left, rep.residual_right));
        inverses.push(b);
    }
    let mut ratio = 0.0f64;
    for i in 0..inverses.len() - 1 {
        let da = diff_sup(&family.members[i + 1], &family.members[i])?;
        let db = diff_sup(&inverses[i + 1], &inverses[i])?;
        if da > 1e-14 {
            ratio = ratio.max(db / da);
        }
    }
    let out = SymbolFamily::new(family.lambdas.clone(), inverses, family.smoothness)?;
    Ok((out, FamilyReport { residuals, continuity_ratio: ratio }))
}

fn diff_sup(a: &SymbolGrid, b: &SymbolGrid) -> Result<f64> {
    let (av, bv) = (a.scalar()?, b.scalar()?);
    Ok((av - bv).iter().map(|z| z.norm()).fold(0.0, f64::max))
}

fn core_diff_sup(a: &SymbolGrid, b: &SymbolGrid) -> Result<f64> {
    let (av, bv) = (a.scalar()?, b.scalar()?);
    let g = a.grid;
    let mut e = 0.0f64;
    for i in 0..g.n_x {
        for k in 0..g.n_xi {
            if g.core_box(i, k) {
                e = e.max((av[(i, k)] - bv[(i, k)]).norm());
            }
        }
    }
    Ok(e)
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderCheck {
    pub order: usize,
    pub error: f64,
    pub error_coarse: f64,
    /// log2(error_coarse / error): ≥ ~2 for second-order stencils.
    pub richardson_slope: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub step: f64,
    pub orders: Vec<OrderCheck>,
}

fn lin_comb(terms: &[(f64, &SymbolGrid)]) -> Result<SymbolGrid> {
    let g = terms[0].1.grid;
    let mut acc = DMatrix::<Complex64>::zeros(g.n_x, g.n_xi);
    for (c, s) in terms {
        acc += s.scalar()? * Complex64::new(*c, 0.0);
    }
    SymbolGrid::from_planes(g, 1, vec![acc])
}

/// FD symbol for the q-th λ-derivative of the family at index i, stride s.
fn fd_symbol(members: &[SymbolGrid], i: usize, s: usize, h: f64, q: usize) -> Result<SymbolGrid> {
    let hs = h * s as f64;
    match q {
        1 => lin_comb(&[
            (1.0 / (2.0 * hs), &members[i + s]),
            (-1.0 / (2.0 * hs), &members[i - s]),
        ]),
        2 => lin_comb(&[
            (1.0 / (hs * hs), &members[i + s]),
            (-2.0 / (hs * hs), &members[i]),
            (1.0 / (hs * hs), &members[i - s]),
        ]),
        3 => lin_comb(&[
            (1.0 / (2.0 * hs * hs * hs), &members[i + 2 * s]),
            (-2.0 / (2.0 * hs * hs * hs), &members[i + s]),
            (2.0 / (2.0 * hs * hs * hs), &members[i - s]),
            (-1.0 / (2.0 * hs * hs * hs), &members[i - 2 * s]),
        ]),
        _ => Err(Error::precondition("derivative order must be 1..=3")),
    }
}

/// Identity-route q-th derivative of the inverse at index i: # chains in
/// quantized form (∂b = −b#∂a#b and its Leibniz descendants), de-quantized.
fn identity_route(
    family: &SymbolFamily,
    inverses: &SymbolFamily,
    i: usize,
    s: usize,
    q: usize,
) -> Result<SymbolGrid> {
    let h = family.step();
    let qb = weyl_quantize_windowed(&inverses.members[i])?.m;
    let da1 = weyl_quantize_windowed(&fd_symbol(&family.members, i, s, h, 1)?)?.m;
    let grid = family.members[0].grid;
    let chain = |mats: &[&DMatrix<Complex64>]| -> DMatrix<Complex64> {
        let mut acc = qb.clone();
        for m in mats {
            acc = acc * *m * &qb;
        }
        acc
    };
    let total = match q {
        1 => chain(&[&da1]) * Complex64::new(-1.0, 0.0),
        2 => {
            let da2 = weyl_quantize_windowed(&fd_symbol(&family.members, i, s, h, 2)?)?.m;
            chain(&[&da2]) * Complex64::new(-1.0, 0.0)
                + chain(&[&da1, &da1]) * Complex64::new(2.0, 0.0)
        }
        3 => {
            let da2 = weyl_quantize_windowed(&fd_symbol(&family.members, i, s, h, 2)?)?.m;
            let da3 = weyl_quantize_windowed(&fd_symbol(&family.members, i, s, h, 3)?)?.m;
            chain(&[&da3]) * Complex64::new(-1.0, 0.0)
                + (chain(&[&da2, &da1]) + chain(&[&da1, &da2])) * Complex64::new(3.0, 0.0)
                + chain(&[&da1, &da1, &da1]) * Complex64::new(-6.0, 0.0)
        }
        _ => return Err(Error::precondition("derivative order must be 1..=3")),
    };
    dequantize(&OperatorMatrix::from_matrix(grid, total)?)
}

/// Compare finite differences of the inverse family against the derivative
/// identity, per order up to n, at strides h and 2h for a Richardson slope.
pub fn regularity_check(
    family: &SymbolFamily,
    inverses: &SymbolFamily,
    n: usize,
) -> Result<RegularityReport> {
    if n == 0 || n > 3 {
        return Err(Error::precondition("regularity order must be 1..=3"));
    }
    let k = family.lambdas.len();
    if k < 2 * n + 3 {
        return Err(Error::precondition(format!(
            "need at least {} lambda samples for order {n}, got {k}",
            2 * n + 3
        )));
    }
    if inverses.lambdas.len() != k {
        return Err(Error::precondition("family and inverses must share the lambda grid"));
    }
    let h = family.step();
    let mut orders = Vec::new();
    for q in 1..=n {
        let mut errs = [0.0f64; 2]; // [fine (s=1), coarse (s=2)]
        for (slot, s) in [(0usize, 1usize), (1, 2)] {
            let reach = if q == 3 { 2 * s } else { s };
            let mut worst = 0.0f64;
            for i in reach..k - reach {
                let fd = fd_symbol(&inverses.members, i, s, h, q)?;
                let idr = identity_route(family, inverses, i, s, q)?;
                worst = worst.max(core_diff_sup(&fd, &idr)?);
            }
            errs[slot] = worst;
        }
        let slope = if errs[0] > 0.0 { (errs[1] / errs[0]).log2() } else { f64::INFINITY };
        orders.push(OrderCheck {
            order: q,
            error: errs[0],
            error_coarse: errs[1],
            richardson_slope: slope,
        });
    }
    Ok(RegularityReport { step: h, orders })
}

/// Built-in families for the CLI: id → (smoothness, closure).
pub fn family_by_id(
    id: &str,
    grid: &crate::grid::PhaseGrid,
    lambdas: Vec<f64>,
) -> Result<SymbolFamily> {
    match id {
        "gauss-perturbation" => SymbolFamily::from_fn(*grid, lambdas, 3, |l, x, xi| {
            Complex64::new(1.0 + 0.3 * l * (-x * x - xi * xi).exp(), 0.0)
        }),
        "gauss-depth" => SymbolFamily::from_fn(*grid, lambdas, 3, |l, x, xi| {
            Complex64::new(1.0 + 0.4 * (-x * x - xi * xi).exp() * (1.0 + l * l) / 2.0, 0.0)
        }),
        "scalar-quadratic" => SymbolFamily::from_fn(*grid, lambdas, 3, |l, _, _| {
            Complex64::new(1.0 + l * l, 0.0)
        }),
        other => Err(Error::UnknownId(other.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PhaseGrid;

    const TOL: f64 = 1e-10;

    fn grid_n(n: usize) -> PhaseGrid {
        PhaseGrid::quantization(n, 8.0).unwrap()
    }

    fn constant(g: PhaseGrid, z: Complex64) -> SymbolGrid {
        SymbolGrid::from_fn(g, |_, _| z).unwrap()
    }

    fn core_sup_vs(s: &SymbolGrid, f: impl Fn(f64, f64) -> Complex64) -> f64 {
        let vals = s.scalar().unwrap();
        let g = s.grid;
        let mut e = 0.0f64;
        for i in 0..g.n_x {
            for k in 0..g.n_xi {
                if g.core_box(i, k) {
                    e = e.max((vals[(i, k)] - f(g.x(i), g.xi(k))).norm());
                }
            }
        }
        e
    }

    fn gaussian_symbol(g: PhaseGrid, amp: f64) -> SymbolGrid {
        SymbolGrid::from_fn(g, move |x, xi| {
            Complex64::new(1.0 + amp * (-x * x - xi * xi).exp(), 0.0)
        })
        .unwrap()
    }

    #[test]
    fn neumann_of_zero_is_one() {
        let g = grid_n(128);
        let r = constant(g, Complex64::new(0.0, 0.0));
        let (out, rep) = neumann_inverse(&r, 1e-10, 100).unwrap();
        assert!(core_sup_vs(&out, |_, _| Complex64::new(1.0, 0.0)) < TOL);
        assert!(rep.converged);
    }

    #[test]
    fn neumann_scalar_geometric_series() {
        let g = grid_n(128);
        let r = constant(g, Complex64::new(0.4, 0.0));
        let (out, rep) = neumann_inverse(&r, 1e-12, 200).unwrap();
        let want = 1.0 / 0.6;
        assert!(core_sup_vs(&out, |_, _| Complex64::new(want, 0.0)) < TOL);
        assert!((rep.contraction - 0.4).abs() < 1e-9);
        assert!(!rep.squared_mode);
    }

    #[test]
    fn neumann_contraction_violation_rejected() {
        let g = grid_n(128);
        let r = constant(g, Complex64::new(1.5, 0.0));
        assert!(neumann_inverse(&r, 1e-10, 100).is_err());
    }

    #[test]
    fn neumann_gaussian_matches_matrix_resolvent() {
        let g = grid_n(128);
        let r = SymbolGrid::from_fn(g, |x, xi| {
            Complex64::new(0.3 * (-x * x - xi * xi).exp(), 0.0)
        })
        .unwrap();
        let (out, rep) = neumann_inverse(&r, 1e-10, 400).unwrap();
        // residual ‖R # (1−r) − 1‖ on the core box
        let one_minus = SymbolGrid::from_fn(g, |x, xi| {
            Complex64::new(1.0 - 0.3 * (-x * x - xi * xi).exp(), 0.0)
        })
        .unwrap();
        let prod = moyal(&out, &one_minus).unwrap();
        assert!(core_sup_vs(&prod, |_, _| Complex64::new(1.0, 0.0)) <= 1e-6);
        // direct oracle: dequantize((I − r^w)^{-1})
        let rw = weyl_quantize_windowed(&r).unwrap();
        let direct = linalg::try_inverse(&(linalg::identity(128) - &rw.m)).unwrap();
        let dsym = dequantize(&OperatorMatrix::from_matrix(g, direct).unwrap()).unwrap();
        assert!(core_diff_sup(&out, &dsym).unwrap() <= 1e-6);
        // the proof's geometric seminorm decay, empirically
        for k in 0..3 {
            let ratio = rep.fitted_ratios[k];
            assert!(ratio.is_finite() && ratio < 1.0, "ratio_{k} = {ratio}");
        }
    }

    #[test]
    fn inverse_of_constants() {
        let g = grid_n(128);
        let (b, _) = symbol_inverse(&constant(g, Complex64::new(1.0, 0.0))).unwrap();
        assert!(core_sup_vs(&b, |_, _| Complex64::new(1.0, 0.0)) < TOL);
        let (b2, _) = symbol_inverse(&constant(g, Complex64::new(2.0, 0.0))).unwrap();
        assert!(core_sup_vs(&b2, |_, _| Complex64::new(0.5, 0.0)) < TOL);
    }

    #[test]
    fn inverse_of_gaussian_bump() {
        let g = grid_n(256);
        let a = gaussian_symbol(g, 0.4);
        let (b, rep) = symbol_inverse(&a).unwrap();
        assert!(rep.residual_left <= 1e-5, "left residual {}", rep.residual_left);
        assert!(rep.residual_right <= 1e-5, "right residual {}", rep.residual_right);
        let direct = rep.direct_agreement.unwrap();
        assert!(direct <= 1e-5, "matrix-inverse disagreement {direct}");
        // contraction for this amplitude sits well inside (0, 1)
        assert!(rep.contraction > 0.1 && rep.contraction < 0.9);
        for k in 0..3 {
            assert!(rep.neumann.fitted_ratios[k] < 1.0);
        }
        drop(b);
    }

    #[test]
    fn inverse_respects_adjoints() {
        let g = grid_n(128);
        let f = |x: f64, xi: f64| {
            Complex64::new(1.0, 0.0)
                + Complex64::new(0.0, 0.4) * Complex64::new((-x * x - xi * xi).exp(), 0.0)
                    * Complex64::new(x.cos(), x.sin() * 0.5)
        };
        let a = SymbolGrid::from_fn(g, f).unwrap();
        let astar = SymbolGrid::from_fn(g, |x, xi| f(x, xi).conj()).unwrap();
        let (b, _) = symbol_inverse(&a).unwrap();
        let (bstar, _) = symbol_inverse(&astar).unwrap();
        let bconj = SymbolGrid::from_planes(g, 1, vec![b.scalar().unwrap().map(|z| z.conj())])
            .unwrap();
        assert!(core_diff_sup(&bconj, &bstar).unwrap() <= 1e-6);
    }

    #[test]
    fn double_inverse_returns_start() {
        let g = grid_n(128);
        let a = gaussian_symbol(g, 0.4);
        let (b, _) = symbol_inverse(&a).unwrap();
        let (aa, _) = symbol_inverse(&b).unwrap();
        assert!(core_diff_sup(&aa, &a).unwrap() <= 1e-4);
    }

    #[test]
    fn family_inverse_constant_and_phase() {
        let g = grid_n(128);
        let lambdas: Vec<f64> = (0..5).map(|i| i as f64 * 0.25).collect();
        // constant-in-λ family inverts to a constant family
        let fam = SymbolFamily::from_fn(g, lambdas.clone(), 3, |_, x, xi| {
            Complex64::new(1.0 + 0.4 * (-x * x - xi * xi).exp(), 0.0)
        })
        .unwrap();
        let (inv, rep) = family_inverse(&fam).unwrap();
        assert!(rep.continuity_ratio == 0.0 || rep.continuity_ratio.is_finite());
        for i in 0..4 {
            assert!(diff_sup(&inv.members[i + 1], &inv.members[i]).unwrap() <= 1e-9);
        }
        // unitary scalar family e^{iλ} inverts to e^{−iλ} exactly
        let phase = SymbolFamily::from_fn(g, lambdas, 3, |l, _, _| {
            Complex64::new(l.cos(), l.sin())
        })
        .unwrap();
        let (pinv, _) = family_inverse(&phase).unwrap();
        for (l, b) in pinv.lambdas.iter().zip(pinv.members.iter()) {
            let e = core_sup_vs(b, |_, _| Complex64::new(l.cos(), -l.sin()));
            assert!(e < 1e-9, "phase inverse error {e} at lambda {l}");
        }
    }

    #[test]
    fn family_inverse_gauss_ramp() {
        let g = grid_n(128);
        let lambdas: Vec<f64> = (0..5).map(|i| i as f64 * 0.25).collect();
        let fam = family_by_id("gauss-perturbation", &g, lambdas).unwrap();
        let (_, rep) = family_inverse(&fam).unwrap();
        for (l, rl, rr) in &rep.residuals {
            assert!(*rl <= 1e-5 && *rr <= 1e-5, "residuals at lambda {l}: {rl}, {rr}");
        }
        // inverse increments track symbol increments
        assert!(rep.continuity_ratio.is_finite() && rep.continuity_ratio > 0.0);
    }

    #[test]
    fn regularity_constant_family_is_flat() {
        let g = grid_n(128);
        let lambdas: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
        let fam = SymbolFamily::from_fn(g, lambdas, 3, |_, x, xi| {
            Complex64::new(1.0 + 0.4 * (-x * x - xi * xi).exp(), 0.0)
        })
        .unwrap();
        let (inv, _) = family_inverse(&fam).unwrap();
        let rep = regularity_check(&fam, &inv, 3).unwrap();
        for oc in &rep.orders {
            assert!(oc.error <= 1e-9, "order {} error {}", oc.order, oc.error);
        }
    }

    #[test]
    fn regularity_order_one_second_order_accurate() {
        let g = grid_n(128);
        let h = 1.0 / 64.0;
        let lambdas: Vec<f64> = (0..7).map(|i| 0.5 + (i as f64 - 3.0) * h).collect();
        let fam = family_by_id("gauss-perturbation", &g, lambdas).unwrap();
        let (inv, _) = family_inverse(&fam).unwrap();
        let rep = regularity_check(&fam, &inv, 1).unwrap();
        let oc = &rep.orders[0];
        assert!(oc.error <= 1e-4, "order-1 identity error {}", oc.error);
        assert!(oc.richardson_slope >= 1.9, "slope {}", oc.richardson_slope);
    }

    #[test]
    fn regularity_scalar_closed_form() {
        // a_λ = 1 + λ²: identity route output vs −2λ/(1+λ²)²
        let g = grid_n(128);
        let h = 1.0 / 32.0;
        let l0 = 0.5f64;
        let lambdas: Vec<f64> = (0..5).map(|i| l0 + (i as f64 - 2.0) * h).collect();
        let fam = family_by_id("scalar-quadratic", &g, lambdas).unwrap();
        let (inv, _) = family_inverse(&fam).unwrap();
        let idr = identity_route(&fam, &inv, 2, 1, 1).unwrap();
        // central difference of a quadratic is exact, so the chain output is
        // the exact calculus derivative
        let want = -2.0 * l0 / (1.0 + l0 * l0).powi(2);
        let e = core_sup_vs(&idr, |_, _| Complex64::new(want, 0.0));
        // accuracy floor: the inverse members are themselves series-computed
        // to NEUMANN_TOL, so the chain cannot beat that by much
        assert!(e <= 1e-9, "closed-form mismatch {e}");
    }

    #[test]
    fn family_validation_rejects_bad_grids() {
        let g = grid_n(128);
        assert!(SymbolFamily::new(vec![0.0], vec![constant(g, Complex64::new(1.0, 0.0))], 1)
            .is_err());
        let nonuniform = SymbolFamily::new(
            vec![0.0, 0.1, 0.3],
            (0..3).map(|_| constant(g, Complex64::new(1.0, 0.0))).collect(),
            1,
        );
        assert!(nonuniform.is_err());
    }
}
