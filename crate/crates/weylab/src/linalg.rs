//! Dense linear-algebra and FFT helpers shared by the quantization and
//! Fredholm layers. FFT normalization follows the usual convention:
//! forward is unnormalized, inverse divides by n.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

type PlanKey = (usize, bool);

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

pub fn fft_in_place(v: &mut [Complex64], inverse: bool) {
    let n = v.len();
    plan(n, inverse).process(v);
    if inverse {
        let scale = 1.0 / n as f64;
        for z in v.iter_mut() {
            *z *= scale;
        }
    }
}

/// FFT each row (the ξ-direction in symbol layout).
pub fn fft_rows(m: &mut DMatrix<Complex64>, inverse: bool) {
    let (nr, nc) = m.shape();
    let rows: Vec<Vec<Complex64>> = crate::exec::map_indexed(nr, |i| {
        let mut buf: Vec<Complex64> = (0..nc).map(|j| m[(i, j)]).collect();
        fft_in_place(&mut buf, inverse);
        buf
    });
    for (i, row) in rows.iter().enumerate() {
        for (j, z) in row.iter().enumerate() {
            m[(i, j)] = *z;
        }
    }
}

/// FFT each column (the x-direction in symbol layout). Columns are
/// contiguous in nalgebra's storage, so this transforms in place.
pub fn fft_cols(m: &mut DMatrix<Complex64>, inverse: bool) {
    let nr = m.nrows();
    let slice = m.as_mut_slice();
    #[cfg(feature = "parallel")]
    {
        slice
            .par_chunks_mut(nr)
            .for_each(|col| fft_in_place(col, inverse));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for col in slice.chunks_mut(nr) {
            fft_in_place(col, inverse);
        }
    }
}

/// Operator (spectral) norm. Full SVD up to 1024; power iteration above.
pub fn opnorm(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows().max(m.ncols());
    if n <= 1024 {
        m.clone()
            .singular_values()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    } else {
        opnorm_power(m, 200, 1e-12)
    }
}

/// Power iteration on A^H A; deterministic start vector.
pub fn opnorm_power(m: &DMatrix<Complex64>, max_iter: usize, tol: f64) -> f64 {
    let nc = m.ncols();
    let mut v = DVector::from_fn(nc, |i, _| {
        Complex64::new(1.0 + (i as f64 * 0.7).sin(), (i as f64 * 1.3).cos())
    });
    v /= Complex64::new(v.norm(), 0.0);
    let mut last = 0.0f64;
    for _ in 0..max_iter {
        let w = m * &v;
        let u = m.adjoint() * w;
        let s = u.norm().sqrt();
        if (s - last).abs() <= tol * s.max(1e-300) {
            return s;
        }
        last = s;
        let nu = u.norm();
        if nu == 0.0 {
            return 0.0;
        }
        v = u / Complex64::new(nu, 0.0);
    }
    last
}

pub fn frobenius(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// All singular values, descending.
pub fn singular_values(m: &DMatrix<Complex64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

pub struct SvdFull {
    pub u: DMatrix<Complex64>,
    pub s: Vec<f64>,
    pub v: DMatrix<Complex64>,
}

/// Full SVD with singular triplets sorted descending; A = U diag(s) V^H.
pub fn svd_full(m: &DMatrix<Complex64>) -> Result<SvdFull> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::numerical("svd: no U"))?;
    let vt = svd.v_t.ok_or_else(|| Error::numerical("svd: no V^T"))?;
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let s: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), idx.len(), |r, c| u[(r, idx[c])]);
    let v = DMatrix::from_fn(vt.ncols(), idx.len(), |r, c| vt[(idx[c], r)].conj());
    Ok(SvdFull { u, s, v })
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let es = m.clone().symmetric_eigen();
    let mut ev: Vec<f64> = es.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

pub fn try_inverse(m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::numerical("matrix not invertible"))
}

pub fn solve(m: &DMatrix<Complex64>, rhs: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::numerical("singular system"))
}

pub fn identity(n: usize) -> DMatrix<Complex64> {
    DMatrix::identity(n, n)
}

/// Condition number from the full singular spectrum.
pub fn cond(m: &DMatrix<Complex64>) -> f64 {
    let s = singular_values(m);
    let smin = *s.last().unwrap_or(&0.0);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        s[0] / smin
    }
}

/// erf via Abramowitz–Stegun 7.1.26-style rational approximation is not
/// accurate enough for the boundary window; use the libm implementation.
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-10;

    fn assert_near(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn fft_matches_dft_definition() {
        let mut v: Vec<Complex64> = (0..8)
            .map(|i| Complex64::new(i as f64, -(i as f64) * 0.5))
            .collect();
        let orig = v.clone();
        fft_in_place(&mut v, false);
        // check slot 3 against the direct sum
        let mut s = Complex64::new(0.0, 0.0);
        for (j, z) in orig.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * 3.0 * j as f64 / 8.0;
            s += z * Complex64::new(ang.cos(), ang.sin());
        }
        assert!((v[3] - s).norm() < TOL);
    }

    #[test]
    fn ifft_inverts_fft() {
        let mut v: Vec<Complex64> = (0..16)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64).cos()))
            .collect();
        let orig = v.clone();
        fft_in_place(&mut v, false);
        fft_in_place(&mut v, true);
        for (a, b) in v.iter().zip(orig.iter()) {
            assert!((a - b).norm() < TOL);
        }
    }

    #[test]
    fn rows_and_cols_transforms_commute() {
        let mut m = DMatrix::from_fn(8, 8, |i, j| Complex64::new(i as f64, j as f64));
        let mut m2 = m.clone();
        fft_rows(&mut m, false);
        fft_cols(&mut m, false);
        fft_cols(&mut m2, false);
        fft_rows(&mut m2, false);
        assert!(max_abs(&(&m - &m2)) < TOL);
    }

    #[test]
    fn opnorm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![
            Complex64::new(3.0, 0.0),
            Complex64::new(-7.0, 0.0),
            Complex64::new(2.0, 0.0),
        ]));
        assert_near(opnorm(&m), 7.0, TOL);
        assert_near(opnorm_power(&m, 500, 1e-14), 7.0, 1e-8);
    }

    #[test]
    fn hermitian_eigenvalues_sorted() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(2.0, 0.0),
            ],
        );
        let ev = hermitian_eigenvalues(&m);
        assert_near(ev[0], 1.0, TOL);
        assert_near(ev[1], 3.0, TOL);
    }

    #[test]
    fn svd_full_reconstructs() {
        let m = DMatrix::from_fn(5, 5, |i, j| {
            Complex64::new((i * j) as f64 * 0.3 + 1.0, (i as f64 - j as f64) * 0.2)
        });
        let f = svd_full(&m).unwrap();
        let s = DMatrix::from_fn(5, 5, |i, j| {
            if i == j {
                Complex64::new(f.s[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let rec = &f.u * s * f.v.adjoint();
        assert!(max_abs(&(&rec - &m)) < 1e-9);
        assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn erf_reference_values() {
        assert_near(erf(0.0), 0.0, 1e-15);
        assert_near(erf(1.0), 0.8427007929497149, 1e-12);
        assert_near(erf(-2.0), -0.9953222650189527, 1e-12);
    }
}
