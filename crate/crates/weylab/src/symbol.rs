//! Symbol-side estimates: the built-in symbol registry, weighted seminorms by
//! directional finite differences, confinement norms relative to a metric
//! ball, confined partition-of-unity families, and ellipticity certification.

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{PhaseGrid, SymbolGrid};
use crate::metric::{gauge_to_ball, MetricField, QuadForm, Weight};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

fn bracket(x: f64, xi: f64) -> f64 {
    (1.0 + x * x + xi * xi).sqrt()
}

/// Built-in scalar (and one 2x2) symbols by id. `shubin-weight-{s}` takes a
/// real exponent suffix, e.g. `shubin-weight-2` for (1+|X|^2)^1.
pub fn symbol_by_id(id: &str, grid: &PhaseGrid) -> Result<SymbolGrid> {
    let re = |f: fn(f64, f64) -> f64| move |x: f64, xi: f64| Complex64::new(f(x, xi), 0.0);
    let mut s = match id {
        "one" => SymbolGrid::from_fn(*grid, re(|_, _| 1.0))?,
        "harmonic" => SymbolGrid::from_fn(*grid, re(|x, xi| x * x + xi * xi))?,
        "harmonic-plus-one" => SymbolGrid::from_fn(*grid, re(|x, xi| x * x + xi * xi + 1.0))?,
        "annihilation" => SymbolGrid::from_fn(*grid, |x, xi| Complex64::new(x, xi))?,
        "creation" => SymbolGrid::from_fn(*grid, |x, xi| Complex64::new(x, -xi))?,
        "vanishing" => SymbolGrid::from_fn(*grid, re(|x, xi| 1.0 / bracket(x, xi)))?,
        "directional-degenerate" => SymbolGrid::from_fn(*grid, re(|x, _| x))?,
        "gaussian" => SymbolGrid::from_fn(*grid, re(|x, xi| (-x * x - xi * xi).exp()))?,
        "gauss-unit" => {
            SymbolGrid::from_fn(*grid, re(|x, xi| 1.0 + 0.4 * (-x * x - xi * xi).exp()))?
        }
        "winding" => {
            SymbolGrid::from_fn(*grid, |x, xi| Complex64::new(x, xi) / bracket(x, xi))?
        }
        "degenerate-bounded" => SymbolGrid::from_fn(*grid, re(|x, xi| x / bracket(x, xi)))?,
        "dirac" => {
            let n = grid.n_x;
            let m = grid.n_xi;
            let plane = |f: &dyn Fn(f64, f64) -> Complex64| {
                DMatrix::from_fn(n, m, |i, k| f(grid.x(i), grid.xi(k)))
            };
            SymbolGrid::from_planes(
                *grid,
                2,
                vec![
                    plane(&|_, _| Complex64::new(1.0, 0.0)),
                    plane(&|x, xi| Complex64::new(x, -xi)),
                    plane(&|x, xi| Complex64::new(x, xi)),
                    plane(&|_, _| Complex64::new(-1.0, 0.0)),
                ],
            )?
        }
        _ => {
            if let Some(rest) = id.strip_prefix("shubin-weight-") {
                let s: f64 = rest
                    .parse()
                    .map_err(|_| Error::UnknownId(id.into()))?;
                SymbolGrid::from_fn(*grid, move |x, xi| {
                    Complex64::new(bracket(x, xi).powf(s), 0.0)
                })?
            } else {
                return Err(Error::UnknownId(id.into()));
            }
        }
    };
    s.weight_label = id.to_string();
    Ok(s)
}

pub fn known_symbol_ids() -> &'static [&'static str] {
    &[
        "one",
        "harmonic",
        "harmonic-plus-one",
        "annihilation",
        "creation",
        "vanishing",
        "directional-degenerate",
        "gaussian",
        "gauss-unit",
        "winding",
        "degenerate-bounded",
        "dirac",
        "shubin-weight-{s}",
    ]
}

/// Largest singular value of a fiber matrix (|z| for scalars).
fn fiber_opnorm(m: &DMatrix<Complex64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].norm();
    }
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

// Central-difference stencils over unit parameter steps; index offset by
// STENCIL_REACH. Order l approximates d^l/dt^l f(X + t D) at t = 0.
const STENCIL_REACH: i64 = 2;
const STENCILS: [[f64; 5]; 5] = [
    [0.0, 0.0, 1.0, 0.0, 0.0],
    [0.0, -0.5, 0.0, 0.5, 0.0],
    [0.0, 1.0, -2.0, 1.0, 0.0],
    [-0.5, 1.0, 0.0, -1.0, 0.5],
    [1.0, -4.0, 6.0, -4.0, 1.0],
];

fn stencil_reach(l: usize) -> i64 {
    if l <= 2 {
        1
    } else {
        STENCIL_REACH
    }
}

/// Euclidean-unit probe directions: the two axes plus seeded random angles.
fn probe_directions(extra: usize) -> Vec<(f64, f64)> {
    let mut dirs = vec![(1.0, 0.0), (0.0, 1.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1CE);
    for _ in 0..extra {
        let th: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        dirs.push((th.cos(), th.sin()));
    }
    dirs
}

/// Snap an intended displacement to whole grid steps, keeping at least one
/// cell per nonzero component so off-node evaluation never occurs.
fn snap_displacement(grid: &PhaseGrid, dx_ideal: f64, dxi_ideal: f64) -> (i64, i64) {
    let snap = |v: f64, step: f64| -> i64 {
        if v.abs() < 1e-12 {
            0
        } else {
            let m = (v.abs() / step).round().max(1.0) as i64;
            if v > 0.0 {
                m
            } else {
                -m
            }
        }
    };
    (snap(dx_ideal, grid.dx()), snap(dxi_ideal, grid.dxi()))
}

struct DiffProbe {
    mx: i64,
    mk: i64,
    /// g-values of the snapped displacement vector, per node when the metric
    /// varies; here stored per (node, direction) by the caller.
    gval: f64,
}

/// Resolve probe displacements for one node: direction set scaled to
/// metric-unit length, stepped at 1/8 of the unit-ball reach, snapped to the
/// grid. Errors when the grid cannot resolve the metric scale.
fn node_probes(
    grid: &PhaseGrid,
    q: &QuadForm,
    dirs: &[(f64, f64)],
) -> Result<Vec<DiffProbe>> {
    let cell = grid.dx().max(grid.dxi());
    if cell > q.min_ball_radius() / 4.0 * (1.0 + 1e-9) {
        return Err(Error::grid(format!(
            "grid too coarse for metric scale: cell {cell:.3e} vs ball radius {:.3e}",
            q.min_ball_radius()
        )));
    }
    let mut out = Vec::with_capacity(dirs.len());
    for &(ux, uk) in dirs {
        let gu = q.eval(&DVector::from_vec(vec![ux, uk]));
        let scale = 1.0 / (8.0 * gu.sqrt()); // metric-unit direction, 1/8 step
        let (ix, ik) = (ux * scale, uk * scale);
        if (ix * ix + ik * ik).sqrt() < 2.0 * grid.dx() * (1.0 - 1e-9) {
            return Err(Error::grid(format!(
                "probe step {:.3e} below 2*dx = {:.3e}",
                (ix * ix + ik * ik).sqrt(),
                2.0 * grid.dx()
            )));
        }
        let (mx, mk) = snap_displacement(grid, ix, ik);
        let d = DVector::from_vec(vec![mx as f64 * grid.dx(), mk as f64 * grid.dxi()]);
        out.push(DiffProbe { mx, mk, gval: q.eval(&d) });
    }
    Ok(out)
}

/// Finite-difference l-th directional derivative of the fiber at node (i,k)
/// along integer displacement (mx, mk); None when the stencil leaves the grid.
fn fd_fiber(
    a: &SymbolGrid,
    i: usize,
    k: usize,
    mx: i64,
    mk: i64,
    l: usize,
) -> Option<DMatrix<Complex64>> {
    let reach = stencil_reach(l);
    let (nx, nk) = (a.grid.n_x as i64, a.grid.n_xi as i64);
    let mut acc = DMatrix::<Complex64>::zeros(a.d, a.d);
    for t in -reach..=reach {
        let w = STENCILS[l][(t + STENCIL_REACH) as usize];
        if w == 0.0 {
            continue;
        }
        let ii = i as i64 + t * mx;
        let kk = k as i64 + t * mk;
        if ii < 0 || ii >= nx || kk < 0 || kk >= nk {
            return None;
        }
        let f = a.fiber(ii as usize, kk as usize);
        acc += f * Complex64::new(w, 0.0);
    }
    Some(acc)
}

/// S(M,g) seminorm of order k: sup over interior nodes and probe directions,
/// over derivative orders l ≤ k, of |a^(l)(X; T,…,T)| / (M(X) g_X(T)^{l/2}).
/// Directional derivatives use central differences along grid-snapped probes.
pub fn seminorm_s(a: &SymbolGrid, m: &Weight, g: &MetricField, k: usize) -> Result<f64> {
    if k > 4 {
        return Err(Error::precondition("seminorm order limited to k <= 4"));
    }
    let grid = a.grid;
    let dirs = probe_directions(6);
    let rows = exec::map_indexed(grid.n_x, |i| -> Result<f64> {
        let mut best = 0.0f64;
        for kk in 0..grid.n_xi {
            if !grid.interior(i, kk) {
                continue;
            }
            let xp = DVector::from_vec(vec![grid.x(i), grid.xi(kk)]);
            let q = g.at(&xp);
            let probes = node_probes(&grid, &q, &dirs)?;
            let mw = m.at(&xp);
            // l = 0 term: |a(X)| / M(X)
            best = best.max(fiber_opnorm(&a.fiber(i, kk)) / mw);
            for l in 1..=k {
                for p in &probes {
                    if let Some(fd) = fd_fiber(a, i, kk, p.mx, p.mk, l) {
                        let denom = mw * p.gval.powf(l as f64 / 2.0);
                        best = best.max(fiber_opnorm(&fd) / denom);
                    }
                }
            }
        }
        Ok(best)
    });
    let mut out = 0.0f64;
    for r in rows {
        out = out.max(r?);
    }
    Ok(out)
}

/// Confinement seminorm of a relative to the ball U_{Y,r}: derivative bounds
/// in the frozen metric g_Y amplified by (1 + g^σ_Y(X - U_{Y,r}))^{k/2}.
pub fn confinement_norm(
    a: &SymbolGrid,
    y: &DVector<f64>,
    r: f64,
    g: &MetricField,
    k: usize,
    node_stride: usize,
) -> Result<f64> {
    if k > 4 {
        return Err(Error::precondition("confinement order limited to k <= 4"));
    }
    let grid = a.grid;
    let gy = g.at(y);
    let gauge = gy.symplectic_dual()?;
    let dirs = probe_directions(6);
    let probes = node_probes(&grid, &gy, &dirs)?;
    let stride = node_stride.max(1);
    let rows = exec::map_indexed(grid.n_x, |i| -> Result<f64> {
        if i % stride != 0 {
            return Ok(0.0);
        }
        let mut best = 0.0f64;
        for kk in (0..grid.n_xi).step_by(stride) {
            if !grid.interior(i, kk) {
                continue;
            }
            let xp = DVector::from_vec(vec![grid.x(i), grid.xi(kk)]);
            let amp = (1.0 + gauge_to_ball(&gauge, &gy, y, r, &xp)?).powf(k as f64 / 2.0);
            best = best.max(fiber_opnorm(&a.fiber(i, kk)) * amp);
            for l in 1..=k {
                for p in &probes {
                    if let Some(fd) = fd_fiber(a, i, kk, p.mx, p.mk, l) {
                        best = best.max(fiber_opnorm(&fd) * amp / p.gval.powf(l as f64 / 2.0));
                    }
                }
            }
        }
        Ok(best)
    });
    let mut out = 0.0f64;
    for r in rows {
        out = out.max(r?);
    }
    Ok(out)
}

/// Gaussian bump profile exp(-g_Y(X-Y) / (2 r^2)), the standard member shape.
pub fn bump_profile(gy: &QuadForm, y: &DVector<f64>, r: f64, x: f64, xi: f64) -> f64 {
    let d = DVector::from_vec(vec![x - y[0], xi - y[1]]);
    (-gy.eval(&d) / (2.0 * r * r)).exp()
}

/// Partition of unity with Gaussian members on a center lattice: after
/// pointwise renormalization, sum_Y φ_Y(X) |g_Y|^{1/2} cellvol = 1 on the
/// core box by construction.
pub struct ConfinedFamily {
    pub grid: PhaseGrid,
    pub r: f64,
    pub centers: Vec<DVector<f64>>,
    pub forms: Vec<QuadForm>,
    pub root_dets: Vec<f64>,
    pub cell_vol: f64,
    /// Raw weighted sum at each node; members divide by this.
    norm: DMatrix<f64>,
}

impl ConfinedFamily {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Renormalized member φ_Y sampled on the grid.
    pub fn member(&self, j: usize) -> Result<SymbolGrid> {
        let y = &self.centers[j];
        let gy = &self.forms[j];
        let g = self.grid;
        let m = DMatrix::from_fn(g.n_x, g.n_xi, |i, k| {
            let raw = bump_profile(gy, y, self.r, g.x(i), g.xi(k));
            Complex64::new(raw / self.norm[(i, k)], 0.0)
        });
        SymbolGrid::from_planes(g, 1, vec![m])
    }

    /// The raw (peak-1, unrenormalized) confined bump at center j. Unlike the
    /// partition members this decays in every direction, which is what the
    /// operator-side confinement probes need.
    pub fn bump(&self, j: usize) -> Result<SymbolGrid> {
        let y = &self.centers[j];
        let gy = &self.forms[j];
        let g = self.grid;
        let m = DMatrix::from_fn(g.n_x, g.n_xi, |i, k| {
            Complex64::new(bump_profile(gy, y, self.r, g.x(i), g.xi(k)), 0.0)
        });
        SymbolGrid::from_planes(g, 1, vec![m])
    }

    /// max |sum_Y φ_Y |g_Y|^{1/2} cellvol - 1| over the core box.
    pub fn sum_residual_core(&self) -> Result<f64> {
        let g = self.grid;
        let mut sums = DMatrix::<f64>::zeros(g.n_x, g.n_xi);
        for j in 0..self.len() {
            let phi = self.member(j)?;
            let w = self.root_dets[j] * self.cell_vol;
            let plane = phi.scalar()?;
            for i in 0..g.n_x {
                for k in 0..g.n_xi {
                    sums[(i, k)] += plane[(i, k)].re * w;
                }
            }
        }
        let mut res = 0.0f64;
        for i in 0..g.n_x {
            for k in 0..g.n_xi {
                if g.core_box(i, k) {
                    res = res.max((sums[(i, k)] - 1.0).abs());
                }
            }
        }
        Ok(res)
    }

    /// Confinement norms of a spread of members (stride-subsampled probe set);
    /// returns (max, min) over the probed members.
    pub fn uniform_confinement(
        &self,
        g: &MetricField,
        k: usize,
        member_stride: usize,
        node_stride: usize,
    ) -> Result<(f64, f64)> {
        let mut hi = 0.0f64;
        let mut lo = f64::MAX;
        for j in (0..self.len()).step_by(member_stride.max(1)) {
            let phi = self.member(j)?;
            let v = confinement_norm(&phi, &self.centers[j], self.r, g, k, node_stride)?;
            hi = hi.max(v);
            lo = lo.min(v);
        }
        Ok((hi, lo))
    }
}

/// Build the family over the core box: lattice spacing per axis is
/// cover · 2r · (smallest per-axis ball radius over the box), each member
/// carrying the covariance of the metric frozen at its own center.
pub fn partition_of_unity(
    grid: &PhaseGrid,
    g: &MetricField,
    r: f64,
    cover: f64,
) -> Result<ConfinedFamily> {
    if !(r > 0.0 && cover > 0.0 && cover <= 1.0) {
        return Err(Error::precondition("need r > 0 and 0 < cover <= 1"));
    }
    // probe the per-axis metric scale on a coarse sweep of the core box
    let mut rad_x = f64::MAX;
    let mut rad_xi = f64::MAX;
    for i in 0..=8 {
        for k in 0..=8 {
            let x = -grid.l_x / 2.0 + i as f64 * grid.l_x / 8.0;
            let xi = -grid.l_xi / 2.0 + k as f64 * grid.l_xi / 8.0;
            let q = g.at(&DVector::from_vec(vec![x, xi]));
            rad_x = rad_x.min(1.0 / q.m[(0, 0)].sqrt());
            rad_xi = rad_xi.min(1.0 / q.m[(1, 1)].sqrt());
        }
    }
    let sx = cover * 2.0 * r * rad_x;
    let sxi = cover * 2.0 * r * rad_xi;
    let mut centers = Vec::new();
    let nx_c = (grid.l_x / sx).ceil() as i64;
    let nxi_c = (grid.l_xi / sxi).ceil() as i64;
    for ic in -nx_c..=nx_c {
        for kc in -nxi_c..=nxi_c {
            let x = ic as f64 * sx;
            let xi = kc as f64 * sxi;
            if x.abs() <= grid.l_x / 2.0 + sx && xi.abs() <= grid.l_xi / 2.0 + sxi {
                centers.push(DVector::from_vec(vec![x, xi]));
            }
        }
    }
    family_with_centers(grid, g, r, centers, sx * sxi)
}

/// Same construction with an explicit center set (cell volume supplied).
pub fn family_with_centers(
    grid: &PhaseGrid,
    g: &MetricField,
    r: f64,
    centers: Vec<DVector<f64>>,
    cell_vol: f64,
) -> Result<ConfinedFamily> {
    if centers.is_empty() {
        return Err(Error::precondition("family needs at least one center"));
    }
    let forms: Vec<QuadForm> = centers.iter().map(|y| g.at(y)).collect();
    let root_dets: Vec<f64> = forms.iter().map(|f| f.det().sqrt()).collect();
    let rows = exec::map_indexed(grid.n_x, |i| {
        let x = grid.x(i);
        (0..grid.n_xi)
            .map(|k| {
                let xi = grid.xi(k);
                centers
                    .iter()
                    .zip(forms.iter().zip(root_dets.iter()))
                    .map(|(y, (gy, rd))| bump_profile(gy, y, r, x, xi) * rd * cell_vol)
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    let mut norm = DMatrix::zeros(grid.n_x, grid.n_xi);
    let mut worst_core = f64::MAX;
    for (i, row) in rows.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            norm[(i, k)] = v;
            if grid.core_box(i, k) {
                worst_core = worst_core.min(v);
            }
        }
    }
    if worst_core < 1e-12 {
        return Err(Error::numerical(format!(
            "centers too sparse: weighted sum falls to {worst_core:.3e} on the core box"
        )));
    }
    // clamp the off-core normalizer away from zero; members decay there anyway
    for v in norm.iter_mut() {
        *v = v.max(1e-12);
    }
    Ok(ConfinedFamily { grid: *grid, r, centers, forms, root_dets, cell_vol, norm })
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipticityReport {
    pub k_radius: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub margin: f64,
    pub inverse_bound: f64,
    pub pass: bool,
    /// Worst violating node (x, xi) when the certificate fails.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation: Option<(f64, f64)>,
}

/// Certify |det a(X)| ≥ C·M(X)^d outside the Euclidean ball of radius
/// `k_radius`; C is the measured margin, inverse_bound = sup ‖a(X)^{-1}‖·M(X).
pub fn check_elliptic(a: &SymbolGrid, m: &Weight, k_radius: f64) -> Result<EllipticityReport> {
    let grid = a.grid;
    if k_radius >= grid.l_x.min(grid.l_xi) {
        return Err(Error::precondition("K radius must sit strictly inside the grid box"));
    }
    let mut margin = f64::MAX;
    let mut inv_bound = 0.0f64;
    let mut violation = None;
    let mut worst = f64::MAX;
    let mut seen = false;
    for i in 0..grid.n_x {
        for k in 0..grid.n_xi {
            if !grid.interior(i, k) {
                continue;
            }
            let (x, xi) = (grid.x(i), grid.xi(k));
            if x * x + xi * xi <= k_radius * k_radius {
                continue;
            }
            seen = true;
            let xp = DVector::from_vec(vec![x, xi]);
            let mw = m.at(&xp);
            let f = a.fiber(i, k);
            let det = if a.d == 1 {
                f[(0, 0)]
            } else {
                f.clone().lu().determinant()
            };
            let ratio = det.norm() / mw.powi(a.d as i32);
            if ratio < worst {
                worst = ratio;
                violation = Some((x, xi));
            }
            margin = margin.min(ratio);
            let smin = if a.d == 1 {
                f[(0, 0)].norm()
            } else {
                f.clone()
                    .singular_values()
                    .iter()
                    .cloned()
                    .fold(f64::MAX, f64::min)
            };
            if smin > 0.0 {
                inv_bound = inv_bound.max(mw / smin);
            } else {
                inv_bound = f64::INFINITY;
            }
        }
    }
    if !seen {
        return Err(Error::precondition("no exterior nodes: K radius too large for grid"));
    }
    let pass = margin > 0.0 && margin.is_finite() && inv_bound.is_finite();
    Ok(EllipticityReport {
        k_radius,
        c: margin,
        margin,
        inverse_bound: inv_bound,
        pass,
        violation: if pass { None } else { violation },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{metric_by_id, weight_by_id};

    const TOL: f64 = 1e-10;

    fn assert_near(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn registry_samples_match_closed_forms() {
        let grid = PhaseGrid::quantization(64, 8.0).unwrap();
        let h = symbol_by_id("harmonic", &grid).unwrap();
        let (i, k) = (40, 37);
        let expect = grid.x(i).powi(2) + grid.xi(k).powi(2);
        assert_near(h.scalar().unwrap()[(i, k)].re, expect, TOL);
        let ann = symbol_by_id("annihilation", &grid).unwrap();
        assert_eq!(ann.scalar().unwrap()[(32, 32)], Complex64::new(0.0, 0.0));
        let one = symbol_by_id("one", &grid).unwrap();
        assert!(one.planes[0].iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < TOL));
        let gu = symbol_by_id("gauss-unit", &grid).unwrap();
        let r2 = grid.x(i).powi(2) + grid.xi(k).powi(2);
        assert_near(gu.scalar().unwrap()[(i, k)].re, 1.0 + 0.4 * (-r2).exp(), TOL);
    }

    #[test]
    fn shubin_weight_suffix_parses() {
        let grid = PhaseGrid::quantization(64, 8.0).unwrap();
        let w = symbol_by_id("shubin-weight-2", &grid).unwrap();
        let v = w.scalar().unwrap()[(40, 40)].re;
        let expect = 1.0 + grid.x(40).powi(2) + grid.xi(40).powi(2);
        assert_near(v, expect, 1e-9);
        assert!(symbol_by_id("shubin-weight-abc", &grid).is_err());
    }

    #[test]
    fn seminorm_of_one_is_one() {
        let grid = PhaseGrid::quantization(256, 8.0).unwrap();
        let a = symbol_by_id("one", &grid).unwrap();
        let m = weight_by_id("one").unwrap();
        let g = metric_by_id("planck-h").unwrap();
        assert_near(seminorm_s(&a, &m, &g, 0).unwrap(), 1.0, TOL);
        assert_near(seminorm_s(&a, &m, &g, 3).unwrap(), 1.0, TOL);
    }

    #[test]
    fn seminorm_is_homogeneous_and_monotone() {
        let grid = PhaseGrid::quantization(256, 8.0).unwrap();
        let a = symbol_by_id("gaussian", &grid).unwrap();
        let scaled = {
            let mut s = a.clone();
            s.planes[0] *= Complex64::new(-2.5, 0.0);
            s
        };
        let m = weight_by_id("one").unwrap();
        let g = metric_by_id("planck-h").unwrap();
        let s1 = seminorm_s(&a, &m, &g, 2).unwrap();
        let s2 = seminorm_s(&scaled, &m, &g, 2).unwrap();
        assert_near(s2, 2.5 * s1, 1e-10 * s2.max(1.0));
        let s0 = seminorm_s(&a, &m, &g, 0).unwrap();
        let s3 = seminorm_s(&a, &m, &g, 3).unwrap();
        assert!(s0 <= s1 + TOL && s1 <= s3 + TOL);
    }

    #[test]
    fn seminorm_annihilation_shubin_in_unit_range() {
        // fine wide grid so the metric scale is resolved near the origin
        let grid = PhaseGrid::new(512, 512, 16.0, 16.0).unwrap();
        let a = symbol_by_id("annihilation", &grid).unwrap();
        let m = weight_by_id("bracket").unwrap();
        let g = metric_by_id("shubin").unwrap();
        let v = seminorm_s(&a, &m, &g, 1).unwrap();
        assert!((1.0..=3.0).contains(&v), "seminorm {v}");
    }

    #[test]
    fn seminorm_rejects_unresolvable_grid() {
        let grid = PhaseGrid::quantization(128, 8.0).unwrap();
        let a = symbol_by_id("gaussian", &grid).unwrap();
        let m = weight_by_id("one").unwrap();
        let g = metric_by_id("euclidean").unwrap();
        assert!(seminorm_s(&a, &m, &g, 1).is_err());
    }

    #[test]
    fn seminorm_grid_consistency_band_limited() {
        let m = weight_by_id("one").unwrap();
        let g = metric_by_id("planck-h").unwrap();
        let mut vals = Vec::new();
        for n in [256usize, 512] {
            let grid = PhaseGrid::new(n, n, 16.0, 16.0).unwrap();
            let a = symbol_by_id("gaussian", &grid).unwrap();
            vals.push(seminorm_s(&a, &m, &g, 2).unwrap());
        }
        let rel = (vals[0] - vals[1]).abs() / vals[1];
        assert!(rel <= 0.05, "grids disagree by {rel}");
    }

    #[test]
    fn confinement_zero_symbol_and_bump_peak() {
        let grid = PhaseGrid::quantization(128, 8.0).unwrap();
        let g = metric_by_id("planck-h").unwrap();
        let zero = SymbolGrid::constant(grid, Complex64::new(0.0, 0.0));
        let y = DVector::from_vec(vec![0.0, 0.0]);
        assert_near(confinement_norm(&zero, &y, 1.0, &g, 2, 1).unwrap(), 0.0, TOL);
        let gy = g.at(&y);
        let bump = SymbolGrid::from_fn(grid, |x, xi| {
            Complex64::new(bump_profile(&gy, &y, 1.0, x, xi), 0.0)
        })
        .unwrap();
        let v = confinement_norm(&bump, &y, 1.0, &g, 0, 1).unwrap();
        assert!(v <= 1.0 + TOL && v > 0.9, "peak {v}");
    }

    #[test]
    fn confinement_translation_invariant_for_flat_metric() {
        let grid = PhaseGrid::new(256, 256, 16.0, 16.0).unwrap();
        let g = metric_by_id("planck-h").unwrap();
        let mut vals = Vec::new();
        for c in [(0.0, 0.0), (1.5, -2.0)] {
            let y = DVector::from_vec(vec![c.0, c.1]);
            let gy = g.at(&y);
            let bump = SymbolGrid::from_fn(grid, |x, xi| {
                Complex64::new(bump_profile(&gy, &y, 1.0, x, xi), 0.0)
            })
            .unwrap();
            vals.push(confinement_norm(&bump, &y, 1.0, &g, 2, 2).unwrap());
        }
        let rel = (vals[0] - vals[1]).abs() / vals[0];
        assert!(rel <= 0.05, "centers disagree by {rel}: {vals:?}");
    }

    #[test]
    fn partition_sums_to_one_on_core_box() {
        let grid = PhaseGrid::quantization(128, 8.0).unwrap();
        let g = metric_by_id("euclidean").unwrap();
        let fam = partition_of_unity(&grid, &g, 1.0, 0.8).unwrap();
        assert!(fam.len() > 10);
        assert!(fam.sum_residual_core().unwrap() <= 1e-12);
    }

    #[test]
    fn partition_shubin_metric_sums_to_one() {
        let grid = PhaseGrid::quantization(128, 8.0).unwrap();
        let g = metric_by_id("shubin").unwrap();
        let fam = partition_of_unity(&grid, &g, 1.0, 0.8).unwrap();
        assert!(fam.sum_residual_core().unwrap() <= 1e-12);
    }

    #[test]
    fn single_wide_center_is_whole_partition() {
        let grid = PhaseGrid::quantization(64, 8.0).unwrap();
        let g = metric_by_id("euclidean").unwrap();
        let fam = family_with_centers(
            &grid,
            &g,
            100.0,
            vec![DVector::from_vec(vec![0.0, 0.0])],
            1.0,
        )
        .unwrap();
        assert!(fam.sum_residual_core().unwrap() <= 1e-12);
    }

    #[test]
    fn sparse_centers_rejected() {
        let grid = PhaseGrid::quantization(64, 8.0).unwrap();
        let g = metric_by_id("euclidean").unwrap();
        let r = family_with_centers(
            &grid,
            &g,
            0.05,
            vec![DVector::from_vec(vec![0.0, 0.0])],
            1.0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn partition_members_uniformly_confined() {
        let grid = PhaseGrid::quantization(128, 8.0).unwrap();
        let g = metric_by_id("planck-h").unwrap();
        let fam = partition_of_unity(&grid, &g, 0.5, 0.8).unwrap();
        // probe members away from the lattice edge, where renormalization is
        // translation invariant for a flat metric
        let inner: Vec<usize> = (0..fam.len())
            .filter(|&j| {
                fam.centers[j][0].abs() <= grid.l_x / 2.0
                    && fam.centers[j][1].abs() <= grid.l_xi / 2.0
            })
            .collect();
        assert!(inner.len() >= 4);
        let mut hi = 0.0f64;
        let mut lo = f64::MAX;
        for &j in inner.iter().step_by((inner.len() / 5).max(1)) {
            let phi = fam.member(j).unwrap();
            let v = confinement_norm(&phi, &fam.centers[j], 0.5, &g, 2, 4).unwrap();
            hi = hi.max(v);
            lo = lo.min(v);
        }
        assert!(hi.is_finite() && lo > 0.0);
        assert!(hi / lo <= 1.10, "spread {hi}/{lo}");
    }

    #[test]
    fn elliptic_annihilation_with_bracket_weight() {
        let grid = PhaseGrid::quantization(256, 8.0).unwrap();
        let a = symbol_by_id("annihilation", &grid).unwrap();
        let m = weight_by_id("bracket").unwrap();
        let rep = check_elliptic(&a, &m, 1.0).unwrap();
        assert!(rep.pass);
        // |x+i xi| / <X> >= |X|/<X> >= 1/sqrt(2) on |X| >= 1
        assert!(rep.margin >= 1.0 / 2.0f64.sqrt() - 1e-6, "margin {}", rep.margin);
        assert!(rep.inverse_bound <= 2.0f64.sqrt() + 1e-6);
    }

    #[test]
    fn elliptic_constant_one() {
        let grid = PhaseGrid::quantization(128, 8.0).unwrap();
        let a = symbol_by_id("one", &grid).unwrap();
        let m = weight_by_id("one").unwrap();
        let rep = check_elliptic(&a, &m, 1.0).unwrap();
        assert!(rep.pass);
        assert_near(rep.c, 1.0, TOL);
        assert_near(rep.inverse_bound, 1.0, TOL);
    }

    #[test]
    fn degenerate_symbol_fails_with_locus() {
        let grid = PhaseGrid::quantization(128, 8.0).unwrap();
        let a = symbol_by_id("directional-degenerate", &grid).unwrap();
        let m = weight_by_id("bracket").unwrap();
        let rep = check_elliptic(&a, &m, 1.0).unwrap();
        assert!(!rep.pass);
        let (x, _) = rep.violation.unwrap();
        assert!(x.abs() <= grid.dx() + 1e-12, "violation off the zero line: x={x}");
    }

    #[test]
    fn dirac_fiber_det_equivalence() {
        let grid = PhaseGrid::quantization(128, 8.0).unwrap();
        let a = symbol_by_id("dirac", &grid).unwrap();
        let m = weight_by_id("bracket").unwrap();
        let rep = check_elliptic(&a, &m, 1.0).unwrap();
        assert!(rep.pass);
        // det = -(1+|X|^2) = -M^2 exactly: margin 1, inverse bound 1
        assert_near(rep.margin, 1.0, 1e-9);
        assert_near(rep.inverse_bound, 1.0, 1e-9);
        // two-sided norm bound 1/||a|| <= ||a^{-1}|| <= c0'·||a||^{d-1}/|det|
        let mut c0_needed = 0.0f64;
        for (i, k) in [(20, 30), (64, 64), (100, 90), (31, 115)] {
            let f = a.fiber(i, k);
            let sv = f.clone().singular_values();
            let (smax, smin) = (sv[0], sv[sv.len() - 1]);
            let det = f.lu().determinant().norm();
            if det < 1e-12 {
                continue;
            }
            let inv_norm = 1.0 / smin;
            assert!(inv_norm >= 1.0 / smax - 1e-12);
            c0_needed = c0_needed.max(inv_norm * det / smax);
        }
        assert!(c0_needed <= 1.0 + 1e-9, "c0' = {c0_needed}");
    }
}
