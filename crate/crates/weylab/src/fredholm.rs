//! Operator-side Fredholm diagnostics: weighted Sobolev norms through the
//! partition family, compactness probes and truncation-stable index counts
//! from energy-filtered singular spectra, contour-integral kernel
//! projectors, weight conjugation between Sobolev scales, parametrix
//! construction, and the empirical loop tying ellipticity to Fredholmness.

use crate::error::{Error, Result};
use crate::grid::{PhaseGrid, SymbolGrid};
use crate::inversion::symbol_inverse_fn;
use crate::linalg;
use crate::metric::{planck, weight_by_id, MetricField, Weight};
use crate::quantize::{dequantize, moyal, weyl_quantize_fn, weyl_quantize_windowed, OperatorMatrix};
use crate::symbol::{check_elliptic, ConfinedFamily, EllipticityReport};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

fn point(x: f64, xi: f64) -> DVector<f64> {
    DVector::from_vec(vec![x, xi])
}

// ---------------------------------------------------------------- Sobolev

#[derive(Debug, Clone, Serialize)]
pub struct SobolevReport {
    pub value: f64,
    /// Plain L² norm of the same input, for the M ≡ 1 equivalence check.
    pub l2_value: f64,
    pub ratio: f64,
    pub weight: String,
    pub members: usize,
}

/// Weighted Sobolev norm of a spatial grid function: the lattice sum
/// Σ_Y M(Y)² ‖θ_Y^w u‖² |g_Y|^{1/2} cellvol over the partition members,
/// square-rooted.
pub fn sobolev_norm(
    u: &DVector<Complex64>,
    m: &Weight,
    family: &ConfinedFamily,
) -> Result<SobolevReport> {
    Ok(sobolev_norm_batch(std::slice::from_ref(u), m, family)?.pop().unwrap())
}

/// Batch variant: the member operators are quantized once and reused, which
/// is what makes many-function norm-equivalence sweeps affordable.
pub fn sobolev_norm_batch(
    us: &[DVector<Complex64>],
    m: &Weight,
    family: &ConfinedFamily,
) -> Result<Vec<SobolevReport>> {
    let grid = family.grid;
    let n = grid.n_x;
    for u in us {
        if u.len() != n {
            return Err(Error::IncompatibleGrids(format!(
                "function length {} vs spatial axis {n}",
                u.len()
            )));
        }
    }
    let dx = 2.0 * grid.l_x / n as f64;
    let mut pieces = Vec::with_capacity(family.len());
    for j in 0..family.len() {
        let theta = family.member(j)?;
        let q = weyl_quantize_windowed(&theta)?;
        let w = m.at(&family.centers[j]);
        pieces.push((q.m, w * w * family.root_dets[j] * family.cell_vol));
    }
    let mut out = Vec::with_capacity(us.len());
    for u in us {
        let mut acc = 0.0f64;
        for (q, wgt) in &pieces {
            let v = q * u;
            acc += wgt * v.norm_squared() * dx;
        }
        let value = acc.sqrt();
        let l2_value = u.norm() * dx.sqrt();
        out.push(SobolevReport {
            value,
            l2_value,
            ratio: if l2_value > 0.0 { value / l2_value } else { 0.0 },
            weight: m.label.clone(),
            members: family.len(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------- truncation machinery

/// Exact restriction of a scalar symbol to a coarser compatible grid: the
/// spatial axis keeps every (n/n_t)-th node and the frequency axis keeps the
/// centered block of n_t columns — both are node subsets, so no
/// interpolation happens.
pub fn subsample(a: &SymbolGrid, n_t: usize) -> Result<SymbolGrid> {
    let g = a.grid;
    let n = g.n_x;
    if g.n_xi != n {
        return Err(Error::grid("truncation needs a square grid"));
    }
    if n_t == 0 || n % n_t != 0 || n_t % 2 != 0 {
        return Err(Error::grid(format!("truncation size {n_t} incompatible with base {n}")));
    }
    let vals = a.scalar()?;
    let coarse = PhaseGrid::quantization(n_t, g.l_x)?;
    let stride = n / n_t;
    let off = (n - n_t) / 2;
    let m = DMatrix::from_fn(n_t, n_t, |i, k| vals[(i * stride, k + off)]);
    SymbolGrid::from_planes(coarse, 1, vec![m])
}

/// Rayleigh-energy cutoff separating states supported on the resolved part
/// of phase space from window/boundary artifacts. A quarter of the squared
/// half-extent of the shorter axis: genuine kernel candidates concentrate
/// near the origin and sit far below it, rolloff-localized states far above.
fn energy_cut(g: &PhaseGrid) -> f64 {
    0.25 * (g.l_x * g.l_x).min(g.l_xi * g.l_xi)
}

fn h_ref(grid: &PhaseGrid) -> Result<DMatrix<Complex64>> {
    // untapered on purpose: the reference energy must not roll off where the
    // probed operators do
    Ok(weyl_quantize_fn(grid, |x, xi| Complex64::new(x * x + xi * xi, 0.0), false)?.m)
}

struct SpectralData {
    svd: linalg::SvdFull,
    h: DMatrix<Complex64>,
    cut: f64,
    interior_right: Vec<bool>,
    interior_left: Vec<bool>,
}

/// Singular spectrum of an operator together with, per singular vector, a
/// flag telling whether it lives at bounded energy (harmonic Rayleigh
/// quotient under the cutoff) or is a boundary artifact.
fn spectral_data(op: &OperatorMatrix) -> Result<SpectralData> {
    let svd = linalg::svd_full(&op.m)?;
    let h = h_ref(&op.grid)?;
    let cut = energy_cut(&op.grid);
    let hv = &h * &svd.v;
    let hu = &h * &svd.u;
    let k = svd.s.len();
    let mut interior_right = Vec::with_capacity(k);
    let mut interior_left = Vec::with_capacity(k);
    for i in 0..k {
        interior_right.push(svd.v.column(i).dotc(&hv.column(i)).re < cut);
        interior_left.push(svd.u.column(i).dotc(&hu.column(i)).re < cut);
    }
    Ok(SpectralData { svd, h, cut, interior_right, interior_left })
}

// ------------------------------------------------------------ compactness

#[derive(Debug, Clone, Serialize)]
pub struct CompactnessReport {
    pub truncations: Vec<usize>,
    /// Leading singular values (up to 64) per truncation, descending.
    pub leading: Vec<Vec<f64>>,
    /// σ at the probe index on each truncation.
    pub probe_index: usize,
    pub probe_values: Vec<f64>,
    /// Relative drift of the probed value between the two finest truncations.
    pub probe_drift: f64,
    /// First k with σ_k < 1e-3 on the finest truncation, if any.
    pub k_star: Option<usize>,
}

const LEADING_KEPT: usize = 64;
const PROBE_K: usize = 50;

/// Singular-value tail of the quantized symbol across truncations: for
/// symbols vanishing at infinity the tail sinks and stabilizes, for symbols
/// bounded below it stays put.
pub fn compactness_probe(a: &SymbolGrid, truncations: &[usize]) -> Result<CompactnessReport> {
    if truncations.is_empty() {
        return Err(Error::precondition("need at least one truncation size"));
    }
    let mut sizes: Vec<usize> = truncations.to_vec();
    sizes.sort_unstable();
    let mut leading = Vec::new();
    let mut probe_values = Vec::new();
    for &n_t in &sizes {
        let op = weyl_quantize_windowed(&subsample(a, n_t)?)?;
        let s = linalg::singular_values(&op.m);
        probe_values.push(s.get(PROBE_K).copied().unwrap_or(0.0));
        leading.push(s.into_iter().take(LEADING_KEPT).collect());
    }
    let finest: &Vec<f64> = leading.last().unwrap();
    let k_star = finest.iter().position(|&s| s < 1e-3);
    let probe_drift = if probe_values.len() >= 2 {
        let a = probe_values[probe_values.len() - 2];
        let b = probe_values[probe_values.len() - 1];
        (a - b).abs() / b.abs().max(1e-300)
    } else {
        0.0
    };
    Ok(CompactnessReport {
        truncations: sizes,
        leading,
        probe_index: PROBE_K,
        probe_values,
        probe_drift,
        k_star,
    })
}

// ------------------------------------------------------------------ index

#[derive(Debug, Clone, Serialize)]
pub struct TruncationIndex {
    pub n: usize,
    pub dim_ker: usize,
    pub dim_coker: usize,
    /// Smallest separation ratio between the counted kernel levels and the
    /// bounded-energy spectrum above the threshold, when finite.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexReport {
    pub dim_ker: usize,
    pub dim_coker: usize,
    pub index: i64,
    /// Relative to σ_max of each truncation.
    pub rank_tol: f64,
    pub truncations: Vec<TruncationIndex>,
    pub stable: bool,
}

const GAP_FLOOR: f64 = 10.0;
const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Kernel-side count at the threshold. Individual singular vectors inside a
/// numerically degenerate σ cluster mix arbitrarily, so their energy flags
/// mean nothing there — but the cluster's span does not mix. The harmonic
/// reference is compressed onto the span of everything below the threshold
/// and its bounded eigenstates are counted instead. Returns the count, the
/// largest ‖A w‖ over the counted states (the kernel floor), and the
/// smallest bounded-energy σ above the threshold.
fn side_counts(
    op: &DMatrix<Complex64>,
    data: &SpectralData,
    right: bool,
    tol: f64,
) -> (usize, Option<f64>, f64) {
    let (vectors, interior) = if right {
        (&data.svd.v, &data.interior_right)
    } else {
        (&data.svd.u, &data.interior_left)
    };
    let sig = &data.svd.s;
    let min_above = sig
        .iter()
        .enumerate()
        .filter(|(i, &s)| s >= tol && interior[*i])
        .map(|(_, &s)| s)
        .fold(f64::INFINITY, f64::min);
    let below: Vec<usize> = (0..sig.len()).filter(|&i| sig[i] < tol).collect();
    if below.is_empty() {
        return (0, None, min_above);
    }
    let n = vectors.nrows();
    let w = DMatrix::from_fn(n, below.len(), |r, c| vectors[(r, below[c])]);
    let compressed = w.adjoint() * &data.h * &w;
    let es = compressed.symmetric_eigen();
    let mut dim = 0usize;
    let mut floor: Option<f64> = None;
    for j in 0..es.eigenvalues.len() {
        if es.eigenvalues[j] >= data.cut {
            continue;
        }
        dim += 1;
        let v = &w * es.eigenvectors.column(j);
        let s = if right { (op * &v).norm() } else { (op.adjoint() * &v).norm() };
        floor = Some(floor.map_or(s, |f: f64| f.max(s)));
    }
    (dim, floor, min_above)
}

fn truncation_counts(op: &OperatorMatrix, rel_tol: f64) -> Result<TruncationIndex> {
    let data = spectral_data(op)?;
    let smax = data.svd.s.first().copied().unwrap_or(0.0);
    let tol = rel_tol * smax;
    let (dim_ker, floor_r, above_r) = side_counts(&op.m, &data, true, tol);
    let (dim_coker, floor_l, above_l) = side_counts(&op.m, &data, false, tol);
    let mut gap: Option<f64> = None;
    for (count, floor, above) in [(dim_ker, floor_r, above_r), (dim_coker, floor_l, above_l)] {
        // with nothing counted the tolerance itself must sit clear of the
        // bounded-energy spectrum, else the count is an artifact of where
        // the threshold was planted
        let sep = if count > 0 {
            match floor {
                Some(f) if f > 0.0 => above / f,
                _ => f64::INFINITY,
            }
        } else {
            above / tol
        };
        if sep < GAP_FLOOR {
            return Err(Error::numerical(format!(
                "no spectral gap at rank tolerance {tol:.3e} on N = {}: \
                 bounded-energy σ = {above:.3e} sits within a factor {sep:.2} \
                 of the threshold",
                op.grid.n_x
            )));
        }
        if sep.is_finite() {
            gap = Some(gap.map_or(sep, |v: f64| v.min(sep)));
        }
    }
    Ok(TruncationIndex { n: op.grid.n_x, dim_ker, dim_coker, gap })
}

pub(crate) fn index_from_operators(
    ops: &[OperatorMatrix],
    rank_tol: Option<f64>,
) -> Result<IndexReport> {
    if ops.len() < 3 {
        return Err(Error::precondition("index stability needs >= 3 truncation sizes"));
    }
    let rel = rank_tol.unwrap_or(DEFAULT_RANK_TOL);
    let mut truncations = Vec::with_capacity(ops.len());
    for op in ops {
        truncations.push(truncation_counts(op, rel)?);
    }
    let finest = truncations.last().unwrap();
    let index = finest.dim_ker as i64 - finest.dim_coker as i64;
    let stable = truncations.iter().all(|t| t.dim_ker as i64 - t.dim_coker as i64 == index);
    Ok(IndexReport {
        dim_ker: finest.dim_ker,
        dim_coker: finest.dim_coker,
        index,
        rank_tol: rel,
        truncations,
        stable,
    })
}

/// Kernel/cokernel dimensions and index of the quantized symbol across
/// truncations. Counts use only bounded-energy singular vectors; rolloff
/// artifacts near the box edge carry high harmonic energy and are excluded
/// from both the counts and the gap safeguard.
pub fn numerical_index(
    a: &SymbolGrid,
    rank_tol: Option<f64>,
    truncations: &[usize],
) -> Result<IndexReport> {
    let mut sizes: Vec<usize> = truncations.to_vec();
    sizes.sort_unstable();
    let mut ops = Vec::with_capacity(sizes.len());
    for &n_t in &sizes {
        ops.push(weyl_quantize_windowed(&subsample(a, n_t)?)?);
    }
    index_from_operators(&ops, rank_tol)
}

// ------------------------------------------------------------------ Riesz

pub struct RieszProjector {
    pub b: DMatrix<Complex64>,
    pub radius: f64,
    pub nodes: usize,
    pub idempotency: f64,
    pub hermiticity: f64,
    pub rank: usize,
    pub norm: f64,
    /// Largest principal angle between range(B) and the SVD kernel subspace.
    pub principal_angle: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RieszSummary {
    pub radius: f64,
    pub nodes: usize,
    pub idempotency: f64,
    pub hermiticity: f64,
    pub rank: usize,
    pub norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub principal_angle: Option<f64>,
}

impl RieszProjector {
    pub fn summary(&self) -> RieszSummary {
        RieszSummary {
            radius: self.radius,
            nodes: self.nodes,
            idempotency: self.idempotency,
            hermiticity: self.hermiticity,
            rank: self.rank,
            norm: self.norm,
            principal_angle: self.principal_angle,
        }
    }
}

const RIESZ_STAB_TOL: f64 = 1e-8;
const RIESZ_NODE_CAP: usize = 1024;
const CONTOUR_MARGIN: f64 = 0.05;

/// Spectral projector onto the part of A*A inside the circle of the given
/// radius, by trapezoidal contour quadrature of λ ↦ λ(λI − A*A)⁻¹. Node
/// count doubles (reusing previous nodes — the circle lattices nest) until
/// the quadrature stabilizes below 1e-8.
pub fn riesz_projector(
    a: &OperatorMatrix,
    radius: f64,
    start_nodes: usize,
) -> Result<RieszProjector> {
    if !(radius > 0.0 && radius <= 1.0) {
        return Err(Error::precondition("contour radius must lie in (0, 1]"));
    }
    let sv = linalg::singular_values(&a.m);
    for &s in &sv {
        if (s * s - radius).abs() < CONTOUR_MARGIN * radius {
            return Err(Error::numerical(format!(
                "contour at radius {radius:.4} passes through the σ² spectrum (σ² = {:.6})",
                s * s
            )));
        }
    }
    let n = a.m.nrows();
    let t = a.m.adjoint() * &a.m;
    let term = |lam: Complex64| -> Result<DMatrix<Complex64>> {
        let r = linalg::try_inverse(&(linalg::identity(n) * lam - &t))?;
        Ok(r * lam)
    };
    let node = |j: usize, total: usize| -> Complex64 {
        let th = 2.0 * std::f64::consts::PI * j as f64 / total as f64;
        Complex64::new(radius * th.cos(), radius * th.sin())
    };
    let mut count = start_nodes.max(4);
    let mut sum = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..count {
        sum += term(node(j, count))?;
    }
    let mut b = &sum / Complex64::new(count as f64, 0.0);
    let mut converged = false;
    while count < RIESZ_NODE_CAP {
        let doubled = 2 * count;
        for j in (1..doubled).step_by(2) {
            sum += term(node(j, doubled))?;
        }
        let b_next = &sum / Complex64::new(doubled as f64, 0.0);
        let delta = linalg::frobenius(&(&b_next - &b));
        b = b_next;
        count = doubled;
        if delta <= RIESZ_STAB_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numerical(format!(
            "contour quadrature did not stabilize below {RIESZ_STAB_TOL:.1e} within \
             {RIESZ_NODE_CAP} nodes"
        )));
    }
    let idempotency = linalg::opnorm(&(&b * &b - &b));
    let hermiticity = linalg::opnorm(&(&b - &b.adjoint()));
    let norm = linalg::opnorm(&b);
    // rank and range basis from the hermitized projector
    let herm = (&b + &b.adjoint()) * Complex64::new(0.5, 0.0);
    let es = herm.clone().symmetric_eigen();
    let mut range_cols: Vec<usize> = (0..n).filter(|&i| es.eigenvalues[i] > 0.5).collect();
    range_cols.sort_by(|&i, &j| es.eigenvalues[j].partial_cmp(&es.eigenvalues[i]).unwrap());
    let rank = range_cols.len();
    // reference subspace: right-singular vectors with σ² inside the contour
    let svd = linalg::svd_full(&a.m)?;
    let kernel_cols: Vec<usize> =
        (0..svd.s.len()).filter(|&i| svd.s[i] * svd.s[i] < radius).collect();
    let principal_angle = if rank == 0 && kernel_cols.is_empty() {
        None
    } else {
        let k = rank.min(kernel_cols.len());
        if k == 0 {
            Some(std::f64::consts::FRAC_PI_2)
        } else {
            let q1 = DMatrix::from_fn(n, k, |r, c| es.eigenvectors[(r, range_cols[c])]);
            let q2 = DMatrix::from_fn(n, k, |r, c| svd.v[(r, kernel_cols[c])]);
            let overlap = q1.adjoint() * q2;
            let cos_min = linalg::singular_values(&overlap).last().copied().unwrap_or(0.0);
            Some(cos_min.clamp(-1.0, 1.0).acos())
        }
    };
    Ok(RieszProjector {
        b,
        radius,
        nodes: count,
        idempotency,
        hermiticity,
        rank,
        norm,
        principal_angle,
    })
}

// ----------------------------------------------------- weight conjugation

#[derive(Debug, Clone, Serialize)]
pub struct ConjugatorReport {
    pub residual_left: f64,
    pub residual_right: f64,
    pub condition: f64,
    pub contraction: f64,
    pub metric: String,
}

/// Elliptic conjugator pair between two weight scales: b1 is the sampled
/// ratio M1/M2, b2 its two-sided # inverse. Their product deviates from 1
/// only at the quantization floor, which the report measures.
pub fn weight_conjugators(
    m1: &Weight,
    m2: &Weight,
    metric: &MetricField,
    grid: &PhaseGrid,
) -> Result<(SymbolGrid, SymbolGrid, ConjugatorReport)> {
    let ratio = |x: f64, xi: f64| {
        let p = point(x, xi);
        Complex64::new(m1.at(&p) / m2.at(&p), 0.0)
    };
    let b1 = SymbolGrid::from_fn(*grid, ratio)?;
    let (b2, rep) = symbol_inverse_fn(grid, ratio)?;
    Ok((
        b1,
        b2,
        ConjugatorReport {
            residual_left: rep.residual_left,
            residual_right: rep.residual_right,
            condition: rep.condition,
            contraction: rep.contraction,
            metric: metric.label.clone(),
        },
    ))
}

/// Index of the symbol acting between the weighted spaces picked by M and
/// M1: the operator is conjugated down to the unweighted realization
/// ã = c # a # b (c the sampled M1/M ratio, b the # inverse of M1) and the
/// truncation-stable index of ã is returned. The answer must not depend on
/// M1 — that is the invariance worth testing.
pub fn fredholm_check(
    a: &SymbolGrid,
    m: &Weight,
    m1: &Weight,
    metric: &MetricField,
) -> Result<IndexReport> {
    let grid = a.grid;
    let c = SymbolGrid::from_fn(grid, |x, xi| {
        let p = point(x, xi);
        Complex64::new(m1.at(&p) / m.at(&p), 0.0)
    })?;
    let b = if m1.label == "one" {
        None
    } else {
        let one = weight_by_id("one")?;
        Some(weight_conjugators(m1, &one, metric, &grid)?.1)
    };
    let n = grid.n_x;
    let mut ops = Vec::new();
    for n_t in [n / 4, n / 2, n] {
        let qc = weyl_quantize_windowed(&subsample(&c, n_t)?)?;
        let qa = weyl_quantize_windowed(&subsample(a, n_t)?)?;
        let mut prod = qc.mul(&qa)?;
        if let Some(bs) = &b {
            prod = prod.mul(&weyl_quantize_windowed(&subsample(bs, n_t)?)?)?;
        }
        ops.push(prod);
    }
    // conjugation noise lifts the exact-zero singular values to ~1e-7·σmax,
    // so the separating tolerance sits above that floor
    index_from_operators(&ops, Some(1e-6))
}

// ------------------------------------------------------------- parametrix

#[derive(Debug, Clone, Serialize)]
pub struct ParametrixReport {
    pub epsilon: f64,
    /// Set when |a| clears ε everywhere and the plain pointwise inverse is
    /// used with no blending at all.
    pub pure_inverse: bool,
    /// sup of |moyal(ã,a) − 1| · λ_g over the annulus 2 ≤ |X| ≤ 6.
    pub annulus_sup: f64,
    /// (R, sup of the raw residual near |X| = R).
    pub ring_residuals: Vec<(f64, f64)>,
    pub rings_decreasing: bool,
    pub ellipticity: EllipticityReport,
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Approximate # inverse for an elliptic symbol: the exact pointwise inverse
/// away from the origin, blended over an annulus of width K/2 into a
/// regularized inverse on the compact core where a may vanish. The residual
/// decays like 1/λ_g, which the ring report makes visible.
pub fn parametrix(
    a: &SymbolGrid,
    m: &Weight,
    metric: &MetricField,
    k_radius: f64,
) -> Result<(SymbolGrid, ParametrixReport)> {
    let ell = check_elliptic(a, m, k_radius)?;
    if !ell.pass {
        return Err(Error::precondition(
            "symbol fails the lower bound needed for a parametrix",
        ));
    }
    let grid = a.grid;
    let vals = a.scalar()?;
    let mut max_core = 0.0f64;
    let mut min_all = f64::MAX;
    for i in 0..grid.n_x {
        for k in 0..grid.n_xi {
            let v = vals[(i, k)].norm();
            min_all = min_all.min(v);
            if grid.x(i).hypot(grid.xi(k)) <= k_radius {
                max_core = max_core.max(v);
            }
        }
    }
    let epsilon = (1e-3 * max_core).max(0.5);
    let pure_inverse = min_all > epsilon;
    let tilde_vals = DMatrix::from_fn(grid.n_x, grid.n_xi, |i, k| {
        let z = vals[(i, k)];
        if pure_inverse {
            return z.inv();
        }
        let t = smoothstep((grid.x(i).hypot(grid.xi(k)) - k_radius) / (k_radius / 2.0));
        let reg = z.conj() / (z.norm_sqr() + epsilon * epsilon);
        if t == 0.0 {
            reg
        } else {
            // t > 0 only where the lower bound keeps a away from zero
            reg * (1.0 - t) + z.inv() * t
        }
    });
    let tilde = SymbolGrid::from_planes(grid, 1, vec![tilde_vals])?;
    let res = moyal(&tilde, a)?;
    let rv = res.scalar()?;
    let mut annulus_sup = 0.0f64;
    let rings = [2.0f64, 4.0, 6.0];
    let mut ring_sup = [0.0f64; 3];
    for i in 0..grid.n_x {
        for k in 0..grid.n_xi {
            let x = grid.x(i);
            let xi = grid.xi(k);
            let rr = x.hypot(xi);
            let dev = (rv[(i, k)] - Complex64::new(1.0, 0.0)).norm();
            if (2.0..=6.0).contains(&rr) {
                annulus_sup = annulus_sup.max(dev * planck(metric, &point(x, xi))?);
            }
            for (s, &ring) in ring_sup.iter_mut().zip(rings.iter()) {
                if (rr - ring).abs() <= 0.2 {
                    *s = s.max(dev);
                }
            }
        }
    }
    let rings_decreasing = ring_sup[0] >= ring_sup[1] && ring_sup[1] >= ring_sup[2];
    Ok((
        tilde,
        ParametrixReport {
            epsilon,
            pure_inverse,
            annulus_sup,
            ring_residuals: rings.iter().copied().zip(ring_sup).collect(),
            rings_decreasing,
            ellipticity: ell,
        },
    ))
}

// --------------------------------------------------------------- converse

#[derive(Debug, Clone, Serialize)]
pub struct ConverseReport {
    pub elliptic: bool,
    pub ellipticity: EllipticityReport,
    /// Smallest bounded-energy σ above the rank floor, per truncation.
    pub sigma_stars: Vec<(usize, f64)>,
    pub gap_stable: bool,
    /// Neither direction asserted: the spectral-gap evidence is ambiguous.
    pub inconclusive: bool,
    pub fredholm: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<IndexReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub riesz: Option<RieszSummary>,
    /// sup over core nodes with |X| ≥ 2 of the symbol deviation of
    /// (B + A*A)⁻¹A*A from 1 — the left inverse modulo the kernel
    /// projector — when the projector chain ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inverse_residual: Option<f64>,
    /// The same residual multiplied by λ_g — the constant in its 1/λ_g decay.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inverse_residual_weighted: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub biconditional: Option<bool>,
}

/// Largest clear multiplicative gap in the σ² spectrum strictly below the
/// stable gap value, for placing the resolvent contour. Returns a radius
/// with at least ~15% clearance on both sides, or None when the low
/// spectrum is too dense for a contour to thread it.
fn pick_contour_radius(sigmas: &[f64], sigma_star: f64) -> Option<f64> {
    let ceiling = (0.9 * sigma_star).powi(2);
    // resolvent solves at the contour cost a condition number of about
    // σ_max²/radius, so radii near the kernel floor would drown in LU noise
    let floor = 1e-6 * sigmas.first().map_or(1.0, |s| s * s);
    let mut lows: Vec<f64> = sigmas
        .iter()
        .map(|s| s * s)
        .filter(|&q| q < ceiling)
        .map(|q| q.max(floor))
        .collect();
    lows.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lows.dedup();
    if lows.is_empty() {
        return Some((0.5 * sigma_star * sigma_star).min(1.0));
    }
    let mut best_ratio = ceiling / lows.last().unwrap();
    let mut best_mid = (ceiling * lows.last().unwrap()).sqrt();
    for w in lows.windows(2) {
        let ratio = w[1] / w[0];
        if ratio > best_ratio {
            best_ratio = ratio;
            best_mid = (w[0] * w[1]).sqrt();
        }
    }
    if best_ratio >= 1.3 && best_mid <= 1.0 {
        Some(best_mid)
    } else {
        None
    }
}

/// The two directions of the ellipticity/Fredholm equivalence on one
/// instance: ellipticity is certified pointwise, Fredholmness through a
/// truncation-stable spectral gap. For Fredholm instances the kernel
/// projector's symbol regularizes a*#a and the # inverse of the sum acts as
/// a left inverse away from the origin, which the residual report measures.
pub fn converse_experiment(a: &SymbolGrid, metric: &MetricField) -> Result<ConverseReport> {
    let one = weight_by_id("one")?;
    let ell = check_elliptic(a, &one, 1.0)?;
    let elliptic = ell.pass;
    let grid = a.grid;
    let n = grid.n_x;
    let mut sigma_stars = Vec::new();
    let mut tol_fine = 0.0;
    for n_t in [n / 4, n / 2, n] {
        let op = weyl_quantize_windowed(&subsample(a, n_t)?)?;
        let data = spectral_data(&op)?;
        let smax = data.svd.s.first().copied().unwrap_or(0.0);
        let tol = DEFAULT_RANK_TOL * smax;
        let star = data
            .svd
            .s
            .iter()
            .enumerate()
            .filter(|(i, &s)| data.interior_right[*i] && s >= tol)
            .map(|(_, &s)| s)
            .fold(f64::INFINITY, f64::min);
        sigma_stars.push((n_t, star));
        tol_fine = tol;
    }
    let smin = sigma_stars.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let smax_star = sigma_stars.iter().map(|p| p.1).fold(0.0f64, f64::max);
    let gap_stable =
        smin.is_finite() && smin >= 0.5 * smax_star && smin > 100.0 * tol_fine;
    if !gap_stable {
        return Ok(ConverseReport {
            elliptic,
            ellipticity: ell,
            sigma_stars,
            gap_stable,
            inconclusive: true,
            fredholm: None,
            index: None,
            riesz: None,
            inverse_residual: None,
            inverse_residual_weighted: None,
            biconditional: None,
        });
    }
    let truncs = [n / 4, n / 2, n];
    let index = numerical_index(a, None, &truncs)?;
    let aop = weyl_quantize_windowed(a)?;
    let sigma_star_fine = sigma_stars.last().unwrap().1;
    let mut riesz_summary = None;
    let mut inverse_residual = None;
    let mut inverse_residual_weighted = None;
    if let Some(radius) = pick_contour_radius(&linalg::singular_values(&aop.m), sigma_star_fine)
    {
        let proj = riesz_projector(&aop, radius, 8)?;
        let ata = aop.adjoint().mul(&aop)?;
        // the kernel projector regularizes a*#a inside the operator algebra:
        // (B + A*A)⁻¹ A*A = I − (B + A*A)⁻¹B is the left inverse modulo the
        // compact projector, and only the final product gets a symbol —
        // inverting through the window rolloff at the symbol level would
        // blow up where the taper kills a*#a
        let s_inv = linalg::try_inverse(&(&proj.b + &ata.m))?;
        let left = OperatorMatrix::from_matrix(grid, s_inv * &ata.m)?;
        let prod = dequantize(&left)?;
        let pv = prod.scalar()?;
        let mut worst = 0.0f64;
        let mut worst_weighted = 0.0f64;
        for i in 0..grid.n_x {
            for k in 0..grid.n_xi {
                if grid.core_box(i, k) && grid.x(i).hypot(grid.xi(k)) >= 2.0 {
                    let dev = (pv[(i, k)] - Complex64::new(1.0, 0.0)).norm();
                    worst = worst.max(dev);
                    worst_weighted =
                        worst_weighted.max(dev * planck(metric, &point(grid.x(i), grid.xi(k)))?);
                }
            }
        }
        riesz_summary = Some(proj.summary());
        inverse_residual = Some(worst);
        inverse_residual_weighted = Some(worst_weighted);
    }
    Ok(ConverseReport {
        elliptic,
        ellipticity: ell,
        sigma_stars,
        gap_stable,
        inconclusive: false,
        fredholm: Some(true),
        biconditional: Some(elliptic),
        index: Some(index),
        riesz: riesz_summary,
        inverse_residual,
        inverse_residual_weighted,
    })
}
