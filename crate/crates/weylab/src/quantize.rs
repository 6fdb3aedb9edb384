//! Weyl quantization on the Fourier-conjugate grid, de-quantization back to
//! a node symbol, the grid-route # product, operator-side seminorms, and
//! confinement chain-decay measurements.
//!
//! Kernel discretization: A[i,j] = (-1)^{(i-j) mod N} * ifft_ξ(a(μ_{i+j}, ·))
//! at separation (i-j) mod N, with μ_s = -L + s·Δx/2 the doubled midpoint
//! lattice. The Δx·Δξ·N/(2π) quadrature factor is exactly 1 on conjugate
//! grids, so sampling and assembly are the whole story.

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{PhaseGrid, SymbolGrid};
use crate::linalg;
use crate::metric::{delta_r, MetricField, Weight};
use crate::symbol::ConfinedFamily;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Smooth plateau window: 1 on the interior, erf roll-off hitting ~1e-9 at
/// |u| = extent. Edge position and width are tuned so that tapered and
/// untapered results agree to machine precision on the core box.
pub fn taper(u: f64, extent: f64) -> f64 {
    0.5 * (1.0 + linalg::erf((0.8 * extent - u.abs()) / (std::f64::consts::SQRT_2 * extent / 30.0)))
}

#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub grid: PhaseGrid,
    pub d: usize,
    pub m: DMatrix<Complex64>,
    /// Tapered before transforming (which axes is content-dependent).
    pub windowed: bool,
    /// Symbol mass within 10% of the ξ-boundary exceeded 1e-6 of the total.
    pub aliasing: bool,
}

impl OperatorMatrix {
    pub fn identity(grid: PhaseGrid) -> Self {
        OperatorMatrix {
            grid,
            d: 1,
            m: DMatrix::identity(grid.n_x, grid.n_x),
            windowed: false,
            aliasing: false,
        }
    }

    pub fn from_matrix(grid: PhaseGrid, m: DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != grid.n_x || m.ncols() != grid.n_x {
            return Err(Error::grid("operator matrix must be N_x square"));
        }
        Ok(OperatorMatrix { grid, d: 1, m, windowed: false, aliasing: false })
    }

    pub fn adjoint(&self) -> OperatorMatrix {
        OperatorMatrix {
            grid: self.grid,
            d: self.d,
            m: self.m.adjoint(),
            windowed: self.windowed,
            aliasing: self.aliasing,
        }
    }

    pub fn mul(&self, other: &OperatorMatrix) -> Result<OperatorMatrix> {
        if self.grid != other.grid {
            return Err(Error::IncompatibleGrids("operator product across grids".into()));
        }
        Ok(OperatorMatrix {
            grid: self.grid,
            d: self.d,
            m: &self.m * &other.m,
            windowed: self.windowed || other.windowed,
            aliasing: self.aliasing || other.aliasing,
        })
    }

    /// Spectral norm (largest singular value).
    pub fn norm(&self) -> f64 {
        linalg::opnorm(&self.m)
    }

    pub fn diagnostics(&self) -> OperatorDiagnostics {
        let norm = self.norm();
        let herm = linalg::frobenius(&(&self.m - self.m.adjoint()));
        let scale = linalg::frobenius(&self.m).max(1e-300);
        OperatorDiagnostics {
            norm,
            hermiticity_residual: herm / scale,
            windowed: self.windowed,
            aliasing: self.aliasing,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OperatorDiagnostics {
    pub norm: f64,
    pub hermiticity_residual: f64,
    pub windowed: bool,
    pub aliasing: bool,
}

/// Exact symbol samples on the doubled midpoint lattice μ_s = -L + s·Δx/2.
fn doubled_samples(
    grid: &PhaseGrid,
    f: impl Fn(f64, f64) -> Complex64 + Sync,
) -> DMatrix<Complex64> {
    let n = grid.n_x;
    let rows = exec::map_indexed(2 * n, |s| {
        let mu = grid.midpoint(s);
        (0..n).map(|k| f(mu, grid.xi(k))).collect::<Vec<_>>()
    });
    let mut m = DMatrix::zeros(2 * n, n);
    for (s, row) in rows.iter().enumerate() {
        for (k, z) in row.iter().enumerate() {
            m[(s, k)] = *z;
        }
    }
    m
}

/// Trigonometric x-interpolation of node samples to the doubled lattice:
/// zero-padded FFT with the Nyquist bin split across ±N/2. Exact for
/// x-band-limited data.
pub fn nodes_to_doubled(grid: &PhaseGrid, vals: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = grid.n_x;
    let mut f = vals.clone();
    linalg::fft_cols(&mut f, false);
    let mut fp = DMatrix::<Complex64>::zeros(2 * n, n);
    for k in 0..n {
        for i in 0..n / 2 {
            fp[(i, k)] = f[(i, k)];
        }
        for i in n / 2 + 1..n {
            fp[(n + i, k)] = f[(i, k)];
        }
        let half = f[(n / 2, k)] * 0.5;
        fp[(n / 2, k)] = half;
        fp[(2 * n - n / 2, k)] = half;
    }
    linalg::fft_cols(&mut fp, true);
    fp * Complex64::new(2.0, 0.0)
}

/// Does the symbol vary along x (rows) / along ξ (columns)?
fn varies_along(vals: &DMatrix<Complex64>) -> (bool, bool) {
    let scale = vals.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let mut vx = false;
    let mut vxi = false;
    for i in 0..vals.nrows() {
        for k in 0..vals.ncols() {
            if (vals[(i, k)] - vals[(0, k)]).norm() > 1e-12 * scale {
                vx = true;
            }
            if (vals[(i, k)] - vals[(i, 0)]).norm() > 1e-12 * scale {
                vxi = true;
            }
        }
        if vx && vxi {
            break;
        }
    }
    (vx, vxi)
}

/// Fraction of |a| mass within 10% of the ξ-boundary.
fn xi_boundary_mass(vals: &DMatrix<Complex64>) -> f64 {
    let nk = vals.ncols();
    let band = nk / 10;
    let mut total = 0.0;
    let mut edge = 0.0;
    for i in 0..vals.nrows() {
        for k in 0..nk {
            let v = vals[(i, k)].norm();
            total += v;
            if k < band || k >= nk - band {
                edge += v;
            }
        }
    }
    if total > 0.0 {
        edge / total
    } else {
        0.0
    }
}

/// Assemble the operator matrix from doubled samples, optionally tapering
/// per axis first.
fn assemble(
    grid: &PhaseGrid,
    mut vals: DMatrix<Complex64>,
    taper_x: bool,
    taper_xi: bool,
) -> (DMatrix<Complex64>, bool) {
    let n = grid.n_x;
    let aliasing = xi_boundary_mass(&vals) > 1e-6;
    if taper_x || taper_xi {
        for s in 0..2 * n {
            let wx = if taper_x { taper(grid.midpoint(s), grid.l_x) } else { 1.0 };
            for k in 0..n {
                let w = wx * if taper_xi { taper(grid.xi(k), grid.l_xi) } else { 1.0 };
                vals[(s, k)] *= w;
            }
        }
    }
    linalg::fft_rows(&mut vals, true);
    let w = vals;
    let rows = exec::map_indexed(n, |i| {
        (0..n)
            .map(|j| {
                let t = (i as i64 - j as i64).rem_euclid(n as i64) as usize;
                let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
                w[(i + j, t)] * sign
            })
            .collect::<Vec<_>>()
    });
    let mut a = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, z) in row.iter().enumerate() {
            a[(i, j)] = *z;
        }
    }
    (a, aliasing)
}

fn scalar_conjugate(a: &SymbolGrid) -> Result<&DMatrix<Complex64>> {
    a.grid.require_conjugate()?;
    a.scalar()
}

/// Plain quantization of a node symbol; x-interpolation to midpoints by FFT.
/// Exact (to rounding) for identity/diagonal symbols and band-limited data.
pub fn weyl_quantize(a: &SymbolGrid) -> Result<OperatorMatrix> {
    let vals = scalar_conjugate(a)?;
    let doubled = nodes_to_doubled(&a.grid, vals);
    let (m, aliasing) = assemble(&a.grid, doubled, false, false);
    Ok(OperatorMatrix { grid: a.grid, d: 1, m, windowed: false, aliasing })
}

/// Windowed quantization for the composition pipeline: axes the symbol
/// actually varies along are tapered, and a varying x-axis additionally gets
/// a node-level pre-taper so the FFT interpolation sees periodic data.
pub fn weyl_quantize_windowed(a: &SymbolGrid) -> Result<OperatorMatrix> {
    let vals = scalar_conjugate(a)?;
    let (vx, vxi) = varies_along(vals);
    let doubled = if vx {
        let mut nodes = vals.clone();
        for i in 0..a.grid.n_x {
            let w = Complex64::new(taper(a.grid.x(i), a.grid.l_x), 0.0);
            for k in 0..a.grid.n_xi {
                nodes[(i, k)] *= w;
            }
        }
        nodes_to_doubled(&a.grid, &nodes)
    } else {
        nodes_to_doubled(&a.grid, vals)
    };
    let (m, aliasing) = assemble(&a.grid, doubled, vx, vxi);
    Ok(OperatorMatrix { grid: a.grid, d: 1, m, windowed: vx || vxi, aliasing })
}

/// Quantize a closure, sampling the doubled midpoint lattice exactly.
pub fn weyl_quantize_fn(
    grid: &PhaseGrid,
    f: impl Fn(f64, f64) -> Complex64 + Sync,
    windowed: bool,
) -> Result<OperatorMatrix> {
    grid.require_conjugate()?;
    let vals = doubled_samples(grid, f);
    let (vx, vxi) = if windowed { varies_along(&vals) } else { (false, false) };
    let (m, aliasing) = assemble(grid, vals, vx, vxi);
    Ok(OperatorMatrix { grid: *grid, d: 1, m, windowed: vx || vxi, aliasing })
}

fn lagrange_half_coeffs() -> ([i64; 12], [f64; 12]) {
    // interpolation to t = 0 from the 12 half-integer offsets j - 5.5
    let mut shift = [0i64; 12];
    let mut coef = [0.0f64; 12];
    for j in 0..12 {
        let off_j = j as f64 - 5.5;
        shift[j] = (off_j - 0.5).round() as i64; // integer node offset
        let mut num = 1.0;
        let mut den = 1.0;
        for o in 0..12 {
            if o == j {
                continue;
            }
            let off_o = o as f64 - 5.5;
            num *= -off_o;
            den *= off_j - off_o;
        }
        coef[j] = num / den;
    }
    (shift, coef)
}

/// Invert the quantization index map back to a node symbol: gather kernel
/// anti-diagonals per separation slot (in-range only, no wraparound), with
/// 12-point half-step interpolation for odd separations, then transform the
/// separation axis back to ξ.
pub fn dequantize(a: &OperatorMatrix) -> Result<SymbolGrid> {
    a.grid.require_conjugate()?;
    let n = a.grid.n_x;
    let (shift, coef) = lagrange_half_coeffs();
    let am = &a.m;
    let fetch = |i: i64, j: i64| -> Complex64 {
        if i >= 0 && i < n as i64 && j >= 0 && j < n as i64 {
            am[(i as usize, j as usize)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let rows = exec::map_indexed(n, |m_idx| {
        let m = m_idx as i64;
        let nn = n as i64;
        let mut prof = vec![Complex64::new(0.0, 0.0); n];
        for slot in 0..n {
            let tt = if slot < n / 2 { slot as i64 } else { slot as i64 - nn };
            let v = if slot % 2 == 0 {
                if slot == n / 2 {
                    // both wrap images of the Nyquist separation, half weight
                    (fetch(m + nn / 4, m - nn / 4) + fetch(m - nn / 4, m + nn / 4)) * 0.5
                } else {
                    fetch(m + tt / 2, m - tt / 2)
                }
            } else {
                let mut acc = Complex64::new(0.0, 0.0);
                for (s, c) in shift.iter().zip(coef.iter()) {
                    let mp = m + s;
                    let i = mp + (tt + 1).div_euclid(2);
                    let j = mp + (1 - tt).div_euclid(2);
                    acc += fetch(i, j) * *c;
                }
                acc
            };
            let sign = if slot % 2 == 0 { 1.0 } else { -1.0 };
            prof[slot] = v * sign;
        }
        prof
    });
    let mut prof = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (t, z) in row.iter().enumerate() {
            prof[(i, t)] = *z;
        }
    }
    linalg::fft_rows(&mut prof, false);
    SymbolGrid::from_planes(a.grid, 1, vec![prof])
}

/// Grid-route # product: windowed quantization of both factors, operator
/// product, de-quantization. The polynomial expansion in `poly` is the
/// independent exact oracle for this route.
pub fn moyal(a: &SymbolGrid, b: &SymbolGrid) -> Result<SymbolGrid> {
    if a.grid != b.grid {
        return Err(Error::IncompatibleGrids("# product across grids".into()));
    }
    let qa = weyl_quantize_windowed(a)?;
    let qb = weyl_quantize_windowed(b)?;
    dequantize(&qa.mul(&qb)?)
}

/// sup over probed family centers Y and unit-g_Y commutator chains of
/// M(Y)^{-1} ‖ad L_1^w … ad L_k^w (θ_Y^w a^w)‖.
pub fn op_seminorm(
    a: &SymbolGrid,
    m: &Weight,
    _g: &MetricField,
    family: &ConfinedFamily,
    k: usize,
) -> Result<f64> {
    if k > 2 {
        return Err(Error::precondition("operator seminorm limited to k <= 2"));
    }
    let qa = weyl_quantize_windowed(a)?;
    let grid = a.grid;
    // probe subset: at most 8 centers, evenly strided
    let stride = (family.len() / 8).max(1);
    let mut best = 0.0f64;
    for j in (0..family.len()).step_by(stride) {
        let y = &family.centers[j];
        let theta = family.bump(j)?;
        let qtheta = weyl_quantize_windowed(&theta)?;
        let base = qtheta.mul(&qa)?;
        let mw = m.at(y);
        if k == 0 {
            best = best.max(linalg::opnorm(&base.m) / mw);
            continue;
        }
        // unit-g_Y axis directions as linear forms v·X
        let gy = &family.forms[j];
        let dirs: Vec<(f64, f64)> = [(1.0, 0.0), (0.0, 1.0)]
            .iter()
            .map(|&(ux, uk)| {
                let s = gy.eval(&DVector::from_vec(vec![ux, uk])).sqrt();
                (ux / s, uk / s)
            })
            .collect();
        let lws: Vec<DMatrix<Complex64>> = dirs
            .iter()
            .map(|&(v1, v2)| {
                weyl_quantize_fn(&grid, |x, xi| Complex64::new(v1 * x + v2 * xi, 0.0), false)
                    .map(|o| o.m)
            })
            .collect::<Result<Vec<_>>>()?;
        let comm = |l: &DMatrix<Complex64>, c: &DMatrix<Complex64>| l * c - c * l;
        for l1 in &lws {
            let c1 = comm(l1, &base.m);
            if k == 1 {
                best = best.max(linalg::opnorm(&c1) / mw);
            } else {
                for l2 in &lws {
                    let c2 = comm(l2, &c1);
                    best = best.max(linalg::opnorm(&c2) / mw);
                }
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainDecayReport {
    pub nu: usize,
    pub centers: Vec<(f64, f64)>,
    pub lhs: f64,
    pub norm_product: f64,
    pub deltas: Vec<f64>,
    pub fit_undefined: bool,
    /// Filled by `fit_decay_exponent`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rhs_model: Option<f64>,
}

/// Quantized peak-1 confined bumps at the chain centers; measures the norm of
/// the operator product against the δ_r separations.
pub fn confined_chain_decay(
    centers: &[DVector<f64>],
    g: &MetricField,
    r: f64,
    grid: &PhaseGrid,
) -> Result<ChainDecayReport> {
    if centers.len() < 2 || centers.len() > 9 {
        return Err(Error::precondition("chain length must be 2..=9 centers"));
    }
    let nu = centers.len() - 1;
    let mut prod: Option<DMatrix<Complex64>> = None;
    let mut norm_product = 1.0;
    for y in centers {
        let gy = g.at(y);
        let (y0, y1) = (y[0], y[1]);
        let q = weyl_quantize_fn(
            grid,
            |x, xi| {
                Complex64::new(
                    crate::symbol::bump_profile(&gy, &DVector::from_vec(vec![y0, y1]), r, x, xi),
                    0.0,
                )
            },
            true,
        )?;
        norm_product *= linalg::opnorm(&q.m);
        prod = Some(match prod {
            None => q.m,
            Some(p) => p * &q.m,
        });
    }
    let lhs = linalg::opnorm(&prod.unwrap());
    let mut deltas = Vec::with_capacity(nu);
    for w in centers.windows(2) {
        deltas.push(delta_r(g, &w[0], &w[1], r)?);
    }
    let fit_undefined = deltas.iter().all(|&d| (d - 1.0).abs() < 1e-9);
    Ok(ChainDecayReport {
        nu,
        centers: centers.iter().map(|c| (c[0], c[1])).collect(),
        lhs,
        norm_product,
        deltas,
        fit_undefined,
        rhs_model: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    #[serde(rename = "N0")]
    pub n0: f64,
    pub log_c: f64,
    pub rms_residual: f64,
}

/// Joint least-squares fit of log lhs = log C - N0 · Σ log δ over chains;
/// fills each report's rhs_model. Chains with fit_undefined are excluded.
pub fn fit_decay_exponent(reports: &mut [ChainDecayReport]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = reports
        .iter()
        .filter(|r| !r.fit_undefined && r.lhs > 0.0)
        .map(|r| (r.deltas.iter().map(|d| d.ln()).sum::<f64>(), r.lhs.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::precondition("need at least two defined chains to fit"));
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(Error::numerical("degenerate chain geometry: all separations equal"));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mut ss = 0.0;
    for &(x, y) in &pts {
        ss += (y - (intercept + slope * x)).powi(2);
    }
    let rms = (ss / n).sqrt();
    for r in reports.iter_mut() {
        if !r.fit_undefined {
            let lx: f64 = r.deltas.iter().map(|d| d.ln()).sum();
            r.rhs_model = Some((intercept + slope * lx).exp());
        }
    }
    Ok(DecayFit { n0: -slope, log_c: intercept, rms_residual: rms })
}

/// Band-limited test vector supported on the core x-box (frequencies in the
/// middle quarter of the band, smooth bump envelope).
pub fn core_band_vector(grid: &PhaseGrid, seed: u64) -> DVector<Complex64> {
    let n = grid.n_x;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = vec![Complex64::new(0.0, 0.0); n];
    for (t, slot) in f.iter_mut().enumerate() {
        // centered frequency index in [-N/2, N/2)
        let cf = if t < n / 2 { t as i64 } else { t as i64 - n as i64 };
        if cf.unsigned_abs() as usize <= n / 8 {
            *slot = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }
    linalg::fft_in_place(&mut f, true);
    let mut u = DVector::from_vec(f);
    for i in 0..n {
        let env = (-(grid.x(i) / (0.45 * grid.l_x)).powi(6)).exp();
        u[i] *= Complex64::new(env, 0.0);
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{moyal_poly, PolySymbol};
    use crate::symbol::symbol_by_id;

    const TOL: f64 = 1e-10;

    fn grid_n(n: usize) -> PhaseGrid {
        PhaseGrid::quantization(n, 8.0).unwrap()
    }

    fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn interior_err(
        got: &SymbolGrid,
        want: impl Fn(f64, f64) -> Complex64,
    ) -> f64 {
        let g = got.grid;
        let vals = got.scalar().unwrap();
        let mut e = 0.0f64;
        for i in 0..g.n_x {
            for k in 0..g.n_xi {
                if g.core_box(i, k) {
                    e = e.max((vals[(i, k)] - want(g.x(i), g.xi(k))).norm());
                }
            }
        }
        e
    }

    #[test]
    fn constant_symbol_quantizes_to_identity() {
        let g = grid_n(128);
        let a = symbol_by_id("one", &g).unwrap();
        let q = weyl_quantize(&a).unwrap();
        let id = DMatrix::identity(128, 128);
        assert!(max_abs_diff(&q.m, &id) < TOL);
    }

    #[test]
    fn xi_free_symbol_is_multiplication_operator() {
        let g = grid_n(128);
        let a = SymbolGrid::from_fn(g, |x, _| Complex64::new((-x * x).exp(), 0.0)).unwrap();
        let q = weyl_quantize(&a).unwrap();
        let want = DMatrix::from_fn(128, 128, |i, j| {
            if i == j {
                Complex64::new((-g.x(i) * g.x(i)).exp(), 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        assert!(max_abs_diff(&q.m, &want) < TOL);
    }

    #[test]
    fn xi_symbol_is_spectral_derivative() {
        let g = grid_n(256);
        let q = weyl_quantize_fn(&g, |_, xi| Complex64::new(xi, 0.0), false).unwrap();
        // on a sampled Gaussian: (ξ)^w u = -i u'
        let u = DVector::from_fn(256, |i, _| {
            Complex64::new((-g.x(i) * g.x(i)).exp(), 0.0)
        });
        let got = &q.m * &u;
        let mut err = 0.0f64;
        for i in 0..256 {
            let x = g.x(i);
            let want = Complex64::new(0.0, 2.0 * x * (-x * x).exp());
            err = err.max((got[i] - want).norm());
        }
        assert!(err < 1e-8, "derivative error {err}");
    }

    #[test]
    fn adjoint_matches_conjugate_symbol() {
        let g = grid_n(128);
        let a = SymbolGrid::from_fn(g, |x, xi| {
            Complex64::new(x, xi) * (-0.3 * (x * x + xi * xi)).exp()
        })
        .unwrap();
        let abar = SymbolGrid::from_fn(g, |x, xi| {
            Complex64::new(x, -xi) * (-0.3 * (x * x + xi * xi)).exp()
        })
        .unwrap();
        let q = weyl_quantize(&a).unwrap();
        let qbar = weyl_quantize(&abar).unwrap();
        assert!(max_abs_diff(&qbar.m, &q.m.adjoint()) < 1e-8);
        // real symbol gives a Hermitian matrix
        let h = weyl_quantize(&symbol_by_id("gaussian", &g).unwrap()).unwrap();
        assert!(h.diagnostics().hermiticity_residual < 1e-10);
    }

    #[test]
    fn oscillator_spectrum_odd_integers() {
        let g = grid_n(512);
        let q = weyl_quantize_fn(&g, |x, xi| Complex64::new(x * x + xi * xi, 0.0), false).unwrap();
        let re = q.m.map(|z| z.re);
        let eig = linalg::hermitian_eigenvalues(&q.m);
        let mut err = 0.0f64;
        for (j, want) in (0..10).map(|j| (j, 2.0 * j as f64 + 1.0)) {
            err = err.max((eig[j] - want).abs());
        }
        assert!(err < 1e-6, "oscillator eigenvalue error {err}");
        drop(re);
    }

    #[test]
    fn dequantize_inverts_identity_and_diagonal() {
        let g = grid_n(128);
        let id = OperatorMatrix::identity(g);
        let s = dequantize(&id).unwrap();
        let e = interior_err(&s, |_, _| Complex64::new(1.0, 0.0));
        assert!(e < 1e-8, "identity dequantize error {e}");
        let v = |x: f64| (-0.5 * x * x).exp();
        let diag = OperatorMatrix::from_matrix(
            g,
            DMatrix::from_fn(128, 128, |i, j| {
                if i == j {
                    Complex64::new(v(g.x(i)), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }),
        )
        .unwrap();
        let s2 = dequantize(&diag).unwrap();
        let e2 = interior_err(&s2, |x, _| Complex64::new(v(x), 0.0));
        assert!(e2 < 1e-8, "diagonal dequantize error {e2}");
    }

    #[test]
    fn gaussian_round_trip() {
        let g = grid_n(256);
        let a = symbol_by_id("gaussian", &g).unwrap();
        let rt = dequantize(&weyl_quantize(&a).unwrap()).unwrap();
        let scale = a.sup_norm();
        let mut err = 0.0f64;
        let (av, rv) = (a.scalar().unwrap(), rt.scalar().unwrap());
        for i in 0..256 {
            for k in 0..256 {
                err = err.max((av[(i, k)] - rv[(i, k)]).norm());
            }
        }
        assert!(err / scale <= 1e-6, "round trip rel err {}", err / scale);
    }

    #[test]
    fn moyal_unit_element() {
        let g = grid_n(256);
        let one = symbol_by_id("one", &g).unwrap();
        let b = symbol_by_id("gaussian", &g).unwrap();
        let left = moyal(&one, &b).unwrap();
        let e = interior_err(&left, |x, xi| Complex64::new((-x * x - xi * xi).exp(), 0.0));
        assert!(e < 1e-8, "unit moyal error {e}");
        let right = moyal(&b, &one).unwrap();
        let e2 = interior_err(&right, |x, xi| Complex64::new((-x * x - xi * xi).exp(), 0.0));
        assert!(e2 < 1e-8, "unit moyal error {e2}");
    }

    #[test]
    fn moyal_x_with_xi() {
        let g = grid_n(256);
        let x = SymbolGrid::from_fn(g, |x, _| Complex64::new(x, 0.0)).unwrap();
        let xi = SymbolGrid::from_fn(g, |_, xi| Complex64::new(xi, 0.0)).unwrap();
        let got = moyal(&x, &xi).unwrap();
        let e = interior_err(&got, |x, xi| Complex64::new(x * xi, 0.5));
        assert!(e <= 1e-6, "x#xi error {e}");
    }

    #[test]
    fn moyal_squares() {
        let g = grid_n(256);
        let x2 = SymbolGrid::from_fn(g, |x, _| Complex64::new(x * x, 0.0)).unwrap();
        let xi2 = SymbolGrid::from_fn(g, |_, xi| Complex64::new(xi * xi, 0.0)).unwrap();
        let got = moyal(&x2, &xi2).unwrap();
        // x²ξ² + 2i xξ − 1/2, relative to local scale
        let vals = got.scalar().unwrap();
        let mut rel = 0.0f64;
        for i in 0..256 {
            for k in 0..256 {
                if got.grid.core_box(i, k) {
                    let (xv, kv) = (g.x(i), g.xi(k));
                    let want = Complex64::new(xv * xv * kv * kv - 0.5, 2.0 * xv * kv);
                    rel = rel.max((vals[(i, k)] - want).norm() / (1.0 + want.norm()));
                }
            }
        }
        assert!(rel <= 1e-6, "x²#ξ² relative error {rel}");
    }

    #[test]
    fn moyal_matches_poly_oracle() {
        let g = grid_n(256);
        let pa = PolySymbol::from_terms(&[((1, 0), (1, 0)), ((0, 1), (0, 1))]); // x + iξ
        let pb = PolySymbol::from_terms(&[((1, 1), (1, 0)), ((0, 0), (2, 0))]); // xξ + 2
        let oracle = moyal_poly(&pa, &pb).unwrap();
        let got = moyal(&pa.sample(&g).unwrap(), &pb.sample(&g).unwrap()).unwrap();
        let e = interior_err(&got, |x, xi| oracle.eval_f64(x, xi).unwrap());
        assert!(e <= 1e-5, "poly oracle mismatch {e}");
    }

    #[test]
    fn moyal_associativity_on_grid() {
        let g = grid_n(256);
        let a = SymbolGrid::from_fn(g, |x, xi| {
            Complex64::new((-(x - 1.0).powi(2) - xi * xi).exp(), 0.0)
        })
        .unwrap();
        let b = SymbolGrid::from_fn(g, |x, xi| {
            Complex64::new((-x * x - (xi - 1.0).powi(2)).exp(), 0.0)
        })
        .unwrap();
        let c = SymbolGrid::from_fn(g, |x, xi| {
            Complex64::new((-(x + 1.0).powi(2) - (xi + 1.0).powi(2)).exp(), 0.0)
        })
        .unwrap();
        let left = moyal(&moyal(&a, &b).unwrap(), &c).unwrap();
        let right = moyal(&a, &moyal(&b, &c).unwrap()).unwrap();
        let (lv, rv) = (left.scalar().unwrap(), right.scalar().unwrap());
        let mut e = 0.0f64;
        for i in 0..256 {
            for k in 0..256 {
                if g.core_box(i, k) {
                    e = e.max((lv[(i, k)] - rv[(i, k)]).norm());
                }
            }
        }
        assert!(e <= 1e-6, "associativity defect {e}");
    }

    #[test]
    fn composition_identity_poly_route() {
        // (a#b)^w = a^w b^w for polynomial symbols, acting on core vectors
        let g = grid_n(256);
        let pairs = [
            (PolySymbol::x(), PolySymbol::xi()),
            (
                PolySymbol::from_terms(&[((2, 0), (1, 0))]),
                PolySymbol::from_terms(&[((0, 2), (1, 0))]),
            ),
        ];
        for (pa, pb) in &pairs {
            let sharp = moyal_poly(pa, pb).unwrap();
            // polynomials are not x-periodic: sample midpoints exactly
            let qab =
                weyl_quantize_fn(&g, |x, xi| sharp.eval_f64(x, xi).unwrap(), false).unwrap();
            let qa = weyl_quantize_fn(&g, |x, xi| pa.eval_f64(x, xi).unwrap(), false).unwrap();
            let qb = weyl_quantize_fn(&g, |x, xi| pb.eval_f64(x, xi).unwrap(), false).unwrap();
            let diff = &qab.m - &qa.m * &qb.m;
            let scale = linalg::opnorm(&(&qa.m * &qb.m)).max(1.0);
            let mut worst = 0.0f64;
            for seed in 0..10 {
                let u = core_band_vector(&g, seed);
                let un = u.norm();
                worst = worst.max((&diff * &u).norm() / un);
            }
            assert!(worst / scale <= 1e-6, "composition identity defect {}", worst / scale);
        }
    }

    #[test]
    fn aliasing_flag_fires_for_boundary_mass() {
        let g = grid_n(128);
        // flat symbol: plenty of mass at the ξ-boundary
        let q = weyl_quantize_fn(&g, |_, xi| Complex64::new(xi, 0.0), false).unwrap();
        assert!(q.aliasing);
        let decaying = weyl_quantize(&symbol_by_id("gaussian", &g).unwrap()).unwrap();
        assert!(!decaying.aliasing);
    }

    #[test]
    fn chain_decay_separated_centers() {
        // wide box: bumps and their tails sit entirely in the taper plateau,
        // and the through-boundary (torus) separation is twice the direct gap
        let g = PhaseGrid::quantization(256, 12.0).unwrap();
        let metric = crate::metric::metric_by_id("euclidean").unwrap();
        let centers: Vec<DVector<f64>> = [(-6.0, 0.0), (0.0, 0.0), (6.0, 0.0)]
            .iter()
            .map(|&(a, b)| DVector::from_vec(vec![a, b]))
            .collect();
        let rep = confined_chain_decay(&centers, &metric, 0.8, &g).unwrap();
        assert!(!rep.fit_undefined);
        assert!(rep.norm_product > 0.05, "bump norms collapsed: {}", rep.norm_product);
        assert!(rep.lhs < 1e-3 * rep.norm_product, "lhs {} vs product {}", rep.lhs, rep.norm_product);
        // coincident centers: no separation, fit undefined
        let same: Vec<DVector<f64>> = (0..3).map(|_| DVector::from_vec(vec![1.0, 0.0])).collect();
        let rep2 = confined_chain_decay(&same, &metric, 1.0, &g).unwrap();
        assert!(rep2.fit_undefined);
        assert!(rep2.lhs <= rep2.norm_product * (1.0 + 1e-9));
    }

    #[test]
    fn chain_decay_fit_spaced_vs_clustered() {
        let g = grid_n(128);
        let metric = crate::metric::metric_by_id("euclidean").unwrap();
        let mk = |pts: &[(f64, f64)]| -> Vec<DVector<f64>> {
            pts.iter().map(|&(a, b)| DVector::from_vec(vec![a, b])).collect()
        };
        let mut reports = vec![
            confined_chain_decay(&mk(&[(-6.0, 0.0), (-2.0, 0.0), (2.0, 0.0), (6.0, 0.0)]), &metric, 0.8, &g).unwrap(),
            confined_chain_decay(&mk(&[(-3.0, 0.0), (0.0, 0.0), (3.0, 0.0)]), &metric, 0.8, &g).unwrap(),
            confined_chain_decay(&mk(&[(0.0, -2.5), (0.0, 0.0), (0.0, 2.5)]), &metric, 0.8, &g).unwrap(),
            confined_chain_decay(&mk(&[(-2.0, -2.0), (0.0, 0.0), (2.0, 2.0)]), &metric, 0.8, &g).unwrap(),
        ];
        let fit = fit_decay_exponent(&mut reports).unwrap();
        assert!(fit.n0 > 0.0, "decay exponent {}", fit.n0);
        assert!(reports[0].rhs_model.is_some());
    }

    #[test]
    fn op_seminorm_identity_commutes() {
        let g = grid_n(128);
        let metric = crate::metric::metric_by_id("planck-h").unwrap();
        let fam = crate::symbol::partition_of_unity(&g, &metric, 0.5, 0.8).unwrap();
        let one = symbol_by_id("one", &g).unwrap();
        let m = crate::metric::weight_by_id("one").unwrap();
        let v1 = op_seminorm(&one, &m, &metric, &fam, 1).unwrap();
        // [L^w, θ^w · 1] = [L^w, θ^w]: bounded, and the k=0 part dominates
        assert!(v1.is_finite());
        let v0 = op_seminorm(&one, &m, &metric, &fam, 0).unwrap();
        assert!(v0.is_finite() && v0 > 0.0);
    }

    #[test]
    fn op_seminorm_stable_under_refinement() {
        let metric = crate::metric::metric_by_id("planck-h").unwrap();
        let m = crate::metric::weight_by_id("bracket").unwrap();
        let mut vals = Vec::new();
        for n in [128usize, 256] {
            let g = grid_n(n);
            let fam = crate::symbol::partition_of_unity(&g, &metric, 0.5, 0.8).unwrap();
            let a = symbol_by_id("annihilation", &g).unwrap();
            vals.push(op_seminorm(&a, &m, &metric, &fam, 0).unwrap());
        }
        let rel = (vals[0] - vals[1]).abs() / vals[1];
        assert!(rel <= 0.15, "refinement drift {rel}: {vals:?}");
    }
}
