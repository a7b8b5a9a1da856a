//! Nontrivial solutions of the Dirichlet system
//! `||q||_p <= T_p`, `||A_p q + p||_p^m <= C_p T_p^(-n)` at every place.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use super::kernel::real_window;
use super::TruncatedMatrix;
use crate::approx::PsiValue;
use crate::error::{Error, Result};
use crate::sring::{
    crt, enumerate_box, int_prime_power, norm_exponent, sup_norm, BoxBounds, NormProfile, PlaceSet, SVector,
};

/// `C_p = p^(c_p)` per finite place; `C_inf = 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DirichletConstants {
    exponents: BTreeMap<u64, i64>,
}

impl DirichletConstants {
    /// `C_p = p^m`, valid for every `T`.
    pub fn standard(places: &PlaceSet, m: u32) -> Self {
        Self { exponents: places.primes().iter().map(|&p| (p, m as i64)).collect() }
    }

    /// `C_p = 1`, valid when every `T_p` lies in `p^(mZ)`.
    pub fn tight(places: &PlaceSet) -> Self {
        Self { exponents: places.primes().iter().map(|&p| (p, 0)).collect() }
    }

    pub fn exponent(&self, p: u64) -> i64 {
        self.exponents.get(&p).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DirichletSolution {
    pub p: SVector,
    pub q: SVector,
    /// Candidates `q` examined before this one.
    pub searched: u64,
}

/// `j` with `||x||_p <= p^(-j)  <=>  ||x||_p^m <= p^(c - e n)`.
fn finite_threshold(c: i64, e: i64, m: u32, n: u32) -> i64 {
    -Integer::div_floor(&(c - e * n as i64), &(m as i64))
}

const SEARCH_LIMIT: u128 = 4_000_000;

fn check_input(a: &TruncatedMatrix, t: &NormProfile, constants: &DirichletConstants) -> Result<PlaceSet> {
    let places = PlaceSet::new(a.primes())?;
    t.check_places(&places)?;
    if *t.real() < BigRational::one() || t.exponents().values().any(|&e| e < 0) {
        return Err(Error::InvalidProfile("the Dirichlet system needs T_p >= 1 at every place".into()));
    }
    let (m, _) = a.dims();
    for (&p, &e) in t.exponents() {
        if constants.exponent(p) < m as i64 && e % m as i64 != 0 {
            return Err(Error::InvalidProfile(format!("C_{p} < {p}^m needs T_{p} in {p}^(mZ)")));
        }
    }
    Ok(places)
}

/// Search `q` in increasing height order and solve for `p` by congruences.
pub fn dirichlet_solve(a: &TruncatedMatrix, t: &NormProfile, constants: &DirichletConstants) -> Result<DirichletSolution> {
    let places = check_input(a, t, constants)?;
    let (m, n) = a.dims();
    let (m32, n32) = (m as u32, n as u32);
    let bounds = BoxBounds::new(t.real().clone(), t.exponents().clone())?;
    let boxed = enumerate_box(n, &bounds, None, &places)?;
    if boxed.len() > SEARCH_LIMIT {
        return Err(Error::BudgetExceeded { limit: SEARCH_LIMIT as u64 });
    }
    let den = boxed.denominator().clone();
    let mut qs: Vec<Vec<BigInt>> = boxed.numerators().collect();
    qs.sort_by(|x, y| {
        let hx = x.iter().map(|v| v.abs()).max();
        let hy = y.iter().map(|v| v.abs()).max();
        hx.cmp(&hy).then_with(|| x.cmp(y))
    });

    let real = a.real_part();
    let t_real = num_traits::pow(t.real().recip(), n);
    let thresholds: BTreeMap<u64, i64> = t
        .exponents()
        .iter()
        .map(|(&p, &e)| (p, finite_threshold(constants.exponent(p), e, m32, n32)))
        .collect();
    // p = b / D_b with D_b = prod p^(f_p), f_p = max(e_p, -j_p)
    let mut db = BigInt::one();
    let mut f = BTreeMap::new();
    for (&p, &e) in t.exponents() {
        let fp = e.max(-thresholds[&p]).max(0);
        db *= int_prime_power(p, fp as u32);
        f.insert(p, fp);
    }
    let ratio = &db / &den;
    let bound = PsiValue::Exact(&t_real * num_traits::pow(BigRational::from_integer(db.clone()), m));

    for (searched, num) in qs.iter().enumerate() {
        let q_zero = num.iter().all(Zero::is_zero);
        let mut rows = Vec::with_capacity(m);
        for r in 0..m {
            let g: BigRational = real[r]
                .iter()
                .zip(num)
                .map(|(x, y)| x * BigRational::from_integer(y.clone()))
                .sum::<BigRational>()
                * BigRational::new(db.clone(), den.clone());
            let (lo, hi) = real_window(&g, &bound, m32)?;
            let mut parts = Vec::new();
            for (&p, &j) in &thresholds {
                let level = f[&p] + j;
                if level <= 0 {
                    continue;
                }
                let delta = t.exponent(p);
                if delta + j > a.precision(p) as i64 {
                    return Err(Error::InsufficientPrecision {
                        prime: p,
                        needed: (delta + j) as u32,
                        available: a.precision(p),
                    });
                }
                let pl = int_prime_power(p, level as u32);
                let s: BigInt = a.finite_part(p).expect("matrix covers S")[r].iter().zip(num).map(|(x, y)| x * y).sum();
                parts.push(((-(&ratio * s)).mod_floor(&pl), pl));
            }
            let (res, modulus) = crt(&parts);
            rows.push((lo, hi, res, modulus));
        }
        if let Some(betas) = pick(&rows, q_zero) {
            let p_vec = SVector::new(betas.into_iter().map(|b| BigRational::new(b, db.clone())).collect())?;
            let q_vec = SVector::new(num.iter().map(|x| BigRational::new(x.clone(), den.clone())).collect())?;
            let sol = DirichletSolution { p: p_vec, q: q_vec, searched: searched as u64 };
            if !verify_dirichlet(a, t, constants, &sol)? {
                return Err(Error::SearchExhausted { searched: searched as u64 });
            }
            return Ok(sol);
        }
    }
    Err(Error::SearchExhausted { searched: qs.len() as u64 })
}

/// One progression element per row inside its window, not all zero when `q = 0`.
fn pick(rows: &[(BigInt, BigInt, BigInt, BigInt)], need_nonzero: bool) -> Option<Vec<BigInt>> {
    let mut out = Vec::with_capacity(rows.len());
    let mut alternatives = Vec::with_capacity(rows.len());
    for (lo, hi, res, modulus) in rows {
        let first = lo + (res - lo).mod_floor(modulus);
        if first > *hi {
            return None;
        }
        let second = &first + modulus;
        alternatives.push((second <= *hi).then_some(second));
        out.push(first);
    }
    if need_nonzero && out.iter().all(Zero::is_zero) {
        let (i, alt) = alternatives.iter().enumerate().find_map(|(i, a)| a.clone().map(|v| (i, v)))?;
        out[i] = alt;
    }
    Some(out)
}

/// Recheck a solution against the defining inequalities with exact norms.
pub fn verify_dirichlet(
    a: &TruncatedMatrix,
    t: &NormProfile,
    constants: &DirichletConstants,
    sol: &DirichletSolution,
) -> Result<bool> {
    let places = PlaceSet::new(a.primes())?;
    let (m, n) = a.dims();
    if sol.p.dim() != m || sol.q.dim() != n {
        return Err(Error::DimensionMismatch { expected: m + n, found: sol.p.dim() + sol.q.dim() });
    }
    if sol.p.is_zero() && sol.q.is_zero() {
        return Ok(false);
    }
    if !sol.p.coords().iter().chain(sol.q.coords()).all(|x| places.is_s_integer(x)) {
        return Ok(false);
    }
    let q = sol.q.coords();
    if sup_norm(q) > *t.real() {
        return Ok(false);
    }
    let real_image: Vec<BigRational> = a
        .real_part()
        .iter()
        .zip(sol.p.coords())
        .map(|(row, pr)| row.iter().zip(q).map(|(x, y)| x * y).sum::<BigRational>() + pr)
        .collect();
    let lhs = num_traits::pow(sup_norm(&real_image), m);
    if lhs > num_traits::pow(t.real().recip(), n) {
        return Ok(false);
    }
    for &p in places.primes() {
        let e = t.exponent(p);
        if norm_exponent(q, p).is_some_and(|k| k > e) {
            return Ok(false);
        }
        let rows = a.finite_part(p).expect("matrix covers S");
        let image: Vec<BigRational> = rows
            .iter()
            .zip(sol.p.coords())
            .map(|(row, pr)| {
                row.iter().zip(q).map(|(x, y)| BigRational::from_integer(x.clone()) * y).sum::<BigRational>() + pr
            })
            .collect();
        let limit = constants.exponent(p) - e * n as i64;
        if norm_exponent(&image, p).is_some_and(|k| k * m as i64 > limit) {
            return Ok(false);
        }
    }
    Ok(true)
}
