//! Phase-space grids and gridded symbols, plus the binary grid container.
//!
//! Conventions (used everywhere downstream):
//!   x_i  = -L_x + i*dx,          dx  = 2*L_x/N_x,   i in 0..N_x
//!   xi_k = (k - N_xi/2)*dxi,     dxi = 2*L_xi/N_xi, k in 0..N_xi
//! For quantization the grids must be Fourier-conjugate: dxi = 2*pi/(N_x*dx),
//! i.e. L_xi = N_x*pi/(2*L_x).

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::io::{Read as _, Write as _};
use std::path::Path;

pub const GRID_MAGIC: [u8; 16] = *b"weylab-grid-v001";

fn is_pow2(n: usize) -> bool {
    n >= 2 && n & (n - 1) == 0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseGrid {
    pub n_x: usize,
    pub n_xi: usize,
    pub l_x: f64,
    pub l_xi: f64,
}

impl PhaseGrid {
    pub fn new(n_x: usize, n_xi: usize, l_x: f64, l_xi: f64) -> Result<Self> {
        if !is_pow2(n_x) || !is_pow2(n_xi) {
            return Err(Error::grid(format!(
                "N_x={n_x}, N_xi={n_xi}: grid sizes must be powers of two"
            )));
        }
        if !(l_x > 0.0 && l_xi > 0.0) {
            return Err(Error::grid("extents must be positive"));
        }
        Ok(PhaseGrid { n_x, n_xi, l_x, l_xi })
    }

    /// Square Fourier-conjugate grid: N_x = N_xi = n, L_xi derived so that
    /// dxi = 2*pi/(N*dx). This is the only shape the quantization ops accept.
    pub fn quantization(n: usize, l: f64) -> Result<Self> {
        let g = PhaseGrid::new(n, n, l, n as f64 * std::f64::consts::PI / (2.0 * l))?;
        Ok(g)
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.l_x / self.n_x as f64
    }

    pub fn dxi(&self) -> f64 {
        2.0 * self.l_xi / self.n_xi as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.l_x + i as f64 * self.dx()
    }

    pub fn xi(&self, k: usize) -> f64 {
        (k as f64 - self.n_xi as f64 / 2.0) * self.dxi()
    }

    /// Midpoint of nodes i and j: (x_i+x_j)/2 = -L_x + (i+j)*dx/2.
    pub fn midpoint(&self, s: usize) -> f64 {
        -self.l_x + s as f64 * self.dx() / 2.0
    }

    pub fn xi_max(&self) -> f64 {
        self.l_xi
    }

    pub fn cell_vol(&self) -> f64 {
        self.dx() * self.dxi()
    }

    /// True when the ξ-grid is the Fourier dual of the x-grid.
    pub fn is_conjugate(&self) -> bool {
        self.n_x == self.n_xi
            && (self.dxi() - 2.0 * std::f64::consts::PI / (self.n_x as f64 * self.dx())).abs()
                < 1e-9 * self.dxi()
    }

    pub fn require_conjugate(&self) -> Result<()> {
        if self.is_conjugate() {
            Ok(())
        } else {
            Err(Error::IncompatibleGrids(format!(
                "quantization needs dxi = 2*pi/(N_x*dx); got N_x={}, N_xi={}, L_x={}, L_xi={}",
                self.n_x, self.n_xi, self.l_x, self.l_xi
            )))
        }
    }

    /// Nodes with |x| <= L_x/2 and |xi| <= L_xi/2; sups and residuals are
    /// measured here, away from the periodization boundary.
    pub fn core_box(&self, i: usize, k: usize) -> bool {
        self.x(i).abs() <= self.l_x / 2.0 && self.xi(k).abs() <= self.l_xi / 2.0
    }

    /// Nodes clear of a 10% margin at each box edge; sup-type estimates are
    /// restricted here to suppress discretization edge effects.
    pub fn interior(&self, i: usize, k: usize) -> bool {
        let mx = self.n_x / 10;
        let mk = self.n_xi / 10;
        i >= mx && i < self.n_x - mx && k >= mk && k < self.n_xi - mk
    }
}

/// Symbol sampled on a grid: d x d complex fiber per node, stored as d*d
/// planes in row-major fiber order (plane p*d+q holds component (p,q)).
#[derive(Debug, Clone)]
pub struct SymbolGrid {
    pub grid: PhaseGrid,
    pub d: usize,
    pub planes: Vec<DMatrix<Complex64>>,
    pub weight_label: String,
    pub metric_label: String,
}

impl SymbolGrid {
    pub fn from_planes(grid: PhaseGrid, d: usize, planes: Vec<DMatrix<Complex64>>) -> Result<Self> {
        if d == 0 || planes.len() != d * d {
            return Err(Error::grid(format!(
                "fiber dim {d} needs {} planes, got {}",
                d * d,
                planes.len()
            )));
        }
        for p in &planes {
            if p.nrows() != grid.n_x || p.ncols() != grid.n_xi {
                return Err(Error::grid("plane shape does not match grid"));
            }
            if p.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Numerical("non-finite symbol value".into()));
            }
        }
        Ok(SymbolGrid { grid, d, planes, weight_label: String::new(), metric_label: String::new() })
    }

    /// Scalar (d=1) symbol from a closure on (x, xi).
    pub fn from_fn(grid: PhaseGrid, f: impl Fn(f64, f64) -> Complex64 + Sync) -> Result<Self> {
        let rows = crate::exec::map_indexed(grid.n_x, |i| {
            let x = grid.x(i);
            (0..grid.n_xi).map(|k| f(x, grid.xi(k))).collect::<Vec<_>>()
        });
        let mut m = DMatrix::zeros(grid.n_x, grid.n_xi);
        for (i, row) in rows.iter().enumerate() {
            for (k, z) in row.iter().enumerate() {
                m[(i, k)] = *z;
            }
        }
        SymbolGrid::from_planes(grid, 1, vec![m])
    }

    pub fn constant(grid: PhaseGrid, z: Complex64) -> Self {
        let m = DMatrix::from_element(grid.n_x, grid.n_xi, z);
        SymbolGrid { grid, d: 1, planes: vec![m], weight_label: String::new(), metric_label: String::new() }
    }

    pub fn scalar(&self) -> Result<&DMatrix<Complex64>> {
        if self.d != 1 {
            return Err(Error::precondition(format!("scalar symbol required, fiber dim is {}", self.d)));
        }
        Ok(&self.planes[0])
    }

    /// Fiber matrix at node (i, k).
    pub fn fiber(&self, i: usize, k: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.d, self.d, |p, q| self.planes[p * self.d + q][(i, k)])
    }

    pub fn sup_norm(&self) -> f64 {
        self.planes
            .iter()
            .flat_map(|p| p.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm_core(&self) -> f64 {
        let mut m = 0.0f64;
        for p in &self.planes {
            for i in 0..self.grid.n_x {
                for k in 0..self.grid.n_xi {
                    if self.grid.core_box(i, k) {
                        m = m.max(p[(i, k)].norm());
                    }
                }
            }
        }
        m
    }
}

/// Binary container: 16-byte magic+version, u64 LE metadata length, JSON
/// metadata, then row-major little-endian complex64 payload (re, im f64).
pub fn write_container(
    path: &Path,
    meta: &serde_json::Value,
    planes: &[DMatrix<Complex64>],
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&GRID_MAGIC)?;
    let meta_bytes = serde_json::to_vec(meta)?;
    f.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&meta_bytes)?;
    for p in planes {
        for i in 0..p.nrows() {
            for j in 0..p.ncols() {
                f.write_all(&p[(i, j)].re.to_le_bytes())?;
                f.write_all(&p[(i, j)].im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_container(path: &Path) -> Result<(serde_json::Value, Vec<DMatrix<Complex64>>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 16];
    f.read_exact(&mut magic)?;
    if magic != GRID_MAGIC {
        return Err(Error::grid("bad container magic"));
    }
    let mut len8 = [0u8; 8];
    f.read_exact(&mut len8)?;
    let meta_len = u64::from_le_bytes(len8) as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    f.read_exact(&mut meta_bytes)?;
    let meta: serde_json::Value = serde_json::from_slice(&meta_bytes)?;
    let rows = meta["rows"].as_u64().ok_or_else(|| Error::grid("missing rows"))? as usize;
    let cols = meta["cols"].as_u64().ok_or_else(|| Error::grid("missing cols"))? as usize;
    let nplanes = meta["planes"].as_u64().unwrap_or(1) as usize;
    let mut planes = Vec::with_capacity(nplanes);
    let mut buf = vec![0u8; rows * cols * 16];
    for _ in 0..nplanes {
        f.read_exact(&mut buf)?;
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let off = (i * cols + j) * 16;
                let re = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
                let im = f64::from_le_bytes(buf[off + 8..off + 16].try_into().unwrap());
                m[(i, j)] = Complex64::new(re, im);
            }
        }
        planes.push(m);
    }
    Ok((meta, planes))
}

pub fn symbol_meta(a: &SymbolGrid, kind: &str) -> serde_json::Value {
    serde_json::json!({
        "kind": kind,
        "rows": a.grid.n_x,
        "cols": a.grid.n_xi,
        "planes": a.d * a.d,
        "d": a.d,
        "l_x": a.grid.l_x,
        "l_xi": a.grid.l_xi,
        "weight": a.weight_label,
        "metric": a.metric_label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn quantization_grid_is_conjugate() {
        let g = PhaseGrid::quantization(256, 8.0).unwrap();
        assert!(g.is_conjugate());
        assert!((g.dxi() - std::f64::consts::PI / 8.0).abs() < TOL);
        assert!((g.xi(128)).abs() < TOL); // center node at xi = 0
        assert!((g.x(0) + 8.0).abs() < TOL);
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(PhaseGrid::new(100, 128, 8.0, 8.0).is_err());
    }

    #[test]
    fn non_conjugate_grid_flagged() {
        let g = PhaseGrid::new(128, 128, 8.0, 8.0).unwrap();
        assert!(!g.is_conjugate());
        assert!(g.require_conjugate().is_err());
    }

    #[test]
    fn from_fn_samples_nodes() {
        let g = PhaseGrid::quantization(64, 8.0).unwrap();
        let a = SymbolGrid::from_fn(g, |x, xi| Complex64::new(x * x + xi * xi, 0.0)).unwrap();
        let m = a.scalar().unwrap();
        // node (i, k) with x=0, xi=0 sits at (32, 32)
        assert!(m[(32, 32)].norm() < TOL);
        assert!((m[(36, 32)].re - (g.x(36)).powi(2)).abs() < TOL);
    }

    #[test]
    fn non_finite_rejected() {
        let g = PhaseGrid::quantization(64, 8.0).unwrap();
        let r = SymbolGrid::from_fn(g, |x, _| Complex64::new(1.0 / x.sin(), 0.0));
        // x = 0 is a grid node -> sin(0) division blows up? sin(0)=0 -> inf
        assert!(r.is_err());
    }

    #[test]
    fn container_round_trip() {
        let g = PhaseGrid::quantization(64, 8.0).unwrap();
        let a = SymbolGrid::from_fn(g, |x, xi| Complex64::new(x, xi)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.grid");
        write_container(&p, &symbol_meta(&a, "symbol"), &a.planes).unwrap();
        let (meta, planes) = read_container(&p).unwrap();
        assert_eq!(meta["rows"].as_u64().unwrap(), 64);
        assert_eq!(planes.len(), 1);
        let diff = (&planes[0] - a.scalar().unwrap()).map(|z| z.norm()).max();
        assert!(diff < TOL);
    }
}
