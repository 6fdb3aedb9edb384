//! Exact polynomial symbols over complex rationals and the terminating
//! bidifferential expansion of the # product. This is the independent oracle
//! for the grid-route composition: no rounding anywhere.

use crate::error::{Error, Result};
use crate::grid::{PhaseGrid, SymbolGrid};
use num_bigint::BigInt;
use num_complex::{Complex, Complex64};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use std::collections::BTreeMap;

pub type CRat = Complex<BigRational>;

pub fn crat(re: i64, im: i64) -> CRat {
    Complex::new(
        BigRational::from_integer(BigInt::from(re)),
        BigRational::from_integer(BigInt::from(im)),
    )
}

fn crat_ratio(re_num: i64, re_den: i64, im_num: i64, im_den: i64) -> CRat {
    Complex::new(
        BigRational::new(BigInt::from(re_num), BigInt::from(re_den)),
        BigRational::new(BigInt::from(im_num), BigInt::from(im_den)),
    )
}

fn factorial(n: u32) -> BigInt {
    (1..=n as u64).map(BigInt::from).fold(BigInt::one(), |a, b| a * b)
}

fn binomial(n: u32, k: u32) -> BigRational {
    BigRational::from_integer(factorial(n) / (factorial(k) * factorial(n - k)))
}

/// Monomial-indexed polynomial in (x, ξ) with d×d complex-rational fibers
/// (row-major coefficient blocks). Scalar constructors cover the built-ins.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySymbol {
    pub d: usize,
    terms: BTreeMap<(u32, u32), Vec<CRat>>,
}

impl PolySymbol {
    pub fn zero(d: usize) -> Self {
        PolySymbol { d, terms: BTreeMap::new() }
    }

    pub fn monomial(alpha: u32, beta: u32, c: CRat) -> Self {
        let mut p = PolySymbol::zero(1);
        if !c.is_zero() {
            p.terms.insert((alpha, beta), vec![c]);
        }
        p
    }

    pub fn one() -> Self {
        PolySymbol::monomial(0, 0, crat(1, 0))
    }

    pub fn x() -> Self {
        PolySymbol::monomial(1, 0, crat(1, 0))
    }

    pub fn xi() -> Self {
        PolySymbol::monomial(0, 1, crat(1, 0))
    }

    /// Scalar polynomial from integer coefficients: ((α, β), (re, im)).
    pub fn from_terms(list: &[((u32, u32), (i64, i64))]) -> Self {
        let mut p = PolySymbol::zero(1);
        for &((a, b), (re, im)) in list {
            p = p.add(&PolySymbol::monomial(a, b, crat(re, im))).unwrap();
        }
        p
    }

    pub fn terms(&self) -> &BTreeMap<(u32, u32), Vec<CRat>> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|&(a, b)| a + b).max().unwrap_or(0)
    }

    fn prune(mut self) -> Self {
        self.terms.retain(|_, c| c.iter().any(|z| !z.is_zero()));
        self
    }

    pub fn add(&self, other: &PolySymbol) -> Result<PolySymbol> {
        if self.d != other.d {
            return Err(Error::precondition("fiber dim mismatch"));
        }
        let mut out = self.clone();
        for (k, c) in &other.terms {
            let entry = out
                .terms
                .entry(*k)
                .or_insert_with(|| vec![CRat::zero(); self.d * self.d]);
            for (e, v) in entry.iter_mut().zip(c.iter()) {
                *e = e.clone() + v.clone();
            }
        }
        Ok(out.prune())
    }

    pub fn scale(&self, c: &CRat) -> PolySymbol {
        let mut out = self.clone();
        for coef in out.terms.values_mut() {
            for v in coef.iter_mut() {
                *v = v.clone() * c.clone();
            }
        }
        out.prune()
    }

    pub fn neg(&self) -> PolySymbol {
        self.scale(&crat(-1, 0))
    }

    /// Pointwise (fiberwise matrix) product.
    pub fn mul(&self, other: &PolySymbol) -> Result<PolySymbol> {
        if self.d != other.d {
            return Err(Error::precondition("fiber dim mismatch"));
        }
        let d = self.d;
        let mut out = PolySymbol::zero(d);
        for (&(a1, b1), c1) in &self.terms {
            for (&(a2, b2), c2) in &other.terms {
                let entry = out
                    .terms
                    .entry((a1 + a2, b1 + b2))
                    .or_insert_with(|| vec![CRat::zero(); d * d]);
                for p in 0..d {
                    for q in 0..d {
                        let mut acc = CRat::zero();
                        for s in 0..d {
                            acc = acc + c1[p * d + s].clone() * c2[s * d + q].clone();
                        }
                        entry[p * d + q] = entry[p * d + q].clone() + acc;
                    }
                }
            }
        }
        Ok(out.prune())
    }

    /// j-fold partial derivative in x.
    pub fn dx(&self, j: u32) -> PolySymbol {
        let mut out = PolySymbol::zero(self.d);
        for (&(a, b), c) in &self.terms {
            if a < j {
                continue;
            }
            // falling factorial a(a-1)…(a-j+1)
            let mut fall = BigRational::one();
            for t in 0..j {
                fall *= BigRational::from_integer(BigInt::from(a - t));
            }
            let f = Complex::new(fall, BigRational::zero());
            out.terms.insert(
                (a - j, b),
                c.iter().map(|z| z.clone() * f.clone()).collect(),
            );
        }
        out.prune()
    }

    pub fn dxi(&self, j: u32) -> PolySymbol {
        let mut out = PolySymbol::zero(self.d);
        for (&(a, b), c) in &self.terms {
            if b < j {
                continue;
            }
            let mut fall = BigRational::one();
            for t in 0..j {
                fall *= BigRational::from_integer(BigInt::from(b - t));
            }
            let f = Complex::new(fall, BigRational::zero());
            out.terms.insert(
                (a, b - j),
                c.iter().map(|z| z.clone() * f.clone()).collect(),
            );
        }
        out.prune()
    }

    /// Evaluate a scalar polynomial at a point in double precision.
    pub fn eval_f64(&self, x: f64, xi: f64) -> Result<Complex64> {
        if self.d != 1 {
            return Err(Error::precondition("scalar polynomial required"));
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (&(a, b), c) in &self.terms {
            let z = Complex64::new(
                c[0].re.to_f64().unwrap_or(f64::NAN),
                c[0].im.to_f64().unwrap_or(f64::NAN),
            );
            acc += z * x.powi(a as i32) * xi.powi(b as i32);
        }
        Ok(acc)
    }

    pub fn sample(&self, grid: &PhaseGrid) -> Result<SymbolGrid> {
        if self.d != 1 {
            return Err(Error::precondition("scalar polynomial required"));
        }
        let terms: Vec<((u32, u32), Complex64)> = self
            .terms
            .iter()
            .map(|(&k, c)| {
                (
                    k,
                    Complex64::new(
                        c[0].re.to_f64().unwrap_or(f64::NAN),
                        c[0].im.to_f64().unwrap_or(f64::NAN),
                    ),
                )
            })
            .collect();
        SymbolGrid::from_fn(*grid, move |x, xi| {
            terms
                .iter()
                .map(|&((a, b), z)| z * x.powi(a as i32) * xi.powi(b as i32))
                .sum()
        })
    }
}

/// k-th term of the # expansion:
/// (1/k!) (i/2)^k Σ_j C(k,j) (-1)^{k-j} (∂_x^j ∂_ξ^{k-j} a) (∂_ξ^j ∂_x^{k-j} b).
pub fn moyal_poly_term(a: &PolySymbol, b: &PolySymbol, k: u32) -> Result<PolySymbol> {
    let mut acc = PolySymbol::zero(a.d);
    for j in 0..=k {
        let da = a.dx(j).dxi(k - j);
        let db = b.dxi(j).dx(k - j);
        if da.is_zero() || db.is_zero() {
            continue;
        }
        let sign = if (k - j) % 2 == 0 { 1 } else { -1 };
        let coef = Complex::new(binomial(k, j) * BigRational::from_integer(BigInt::from(sign)), BigRational::zero());
        acc = acc.add(&da.mul(&db)?.scale(&coef))?;
    }
    // (1/k!)(i/2)^k
    let mut pre = Complex::new(
        BigRational::new(BigInt::one(), factorial(k)),
        BigRational::zero(),
    );
    let half_i = crat_ratio(0, 1, 1, 2);
    for _ in 0..k {
        pre = pre * half_i.clone();
    }
    Ok(acc.scale(&pre))
}

/// Exact # product of polynomial symbols; the expansion terminates at
/// k = min(deg a, deg b).
pub fn moyal_poly(a: &PolySymbol, b: &PolySymbol) -> Result<PolySymbol> {
    if a.d != b.d {
        return Err(Error::precondition("fiber dim mismatch"));
    }
    let kmax = a.degree().min(b.degree());
    let mut out = PolySymbol::zero(a.d);
    for k in 0..=kmax {
        out = out.add(&moyal_poly_term(a, b, k)?)?;
    }
    Ok(out)
}

/// Poisson bracket {a,b} = ∂_x a ∂_ξ b − ∂_ξ a ∂_x b (the sign matching the
/// first-order # term: moyal_poly(a,b) = ab + (i/2){a,b} + …).
pub fn poisson(a: &PolySymbol, b: &PolySymbol) -> Result<PolySymbol> {
    a.dx(1).mul(&b.dxi(1))?.add(&a.dxi(1).mul(&b.dx(1))?.neg())
}
