//! Direct enumeration oracles for the counter.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed};

use super::{CountRequest, TruncatedMatrix};
use crate::approx::ApproxCollection;
use crate::error::{Error, Result};
use crate::sring::{int_prime_power, norm_exponent, padic_valuation, sup_norm, NormProfile, PlaceSet, Valuation};
use crate::volume::{contains, AdelicPoint, Region};

pub const DEFAULT_BUDGET: u64 = 20_000_000;

/// `{x : (x - offset) / modulus in Z_S}` coordinatewise.
struct Coset<'a> {
    modulus: BigRational,
    offset: &'a [BigRational],
}

impl Coset<'_> {
    fn holds(&self, i: usize, x: &BigRational, places: &PlaceSet) -> bool {
        places.is_s_integer(&((x - &self.offset[i]) / &self.modulus))
    }
}

fn offset_exponent(offset: &[BigRational], p: u64) -> i64 {
    norm_exponent(offset, p).unwrap_or(0).max(0)
}

/// `offset_i + b / den` for every integer `b` with the value in `[lo, hi]`.
fn grid(lo: &BigRational, hi: &BigRational, den: &BigInt, offset: &BigRational) -> Vec<BigRational> {
    let d = BigRational::from_integer(den.clone());
    let b_lo = ((lo - offset) * &d).floor().to_integer();
    let b_hi = ((hi - offset) * &d).ceil().to_integer();
    let mut out = Vec::new();
    let mut b = b_lo;
    while b <= b_hi {
        out.push(offset + BigRational::new(b.clone(), den.clone()));
        b += 1u32;
    }
    out
}

struct Budget {
    used: u64,
    limit: u64,
}

impl Budget {
    fn spend(&mut self, k: u64) -> Result<()> {
        self.used = self.used.saturating_add(k);
        if self.used > self.limit {
            return Err(Error::BudgetExceeded { limit: self.limit });
        }
        Ok(())
    }
}

fn mat_vec(rows: &[Vec<BigRational>], q: &[BigRational]) -> Vec<BigRational> {
    rows.iter().map(|r| r.iter().zip(q).map(|(a, b)| a * b).sum()).collect()
}

fn finite_rows(a: &TruncatedMatrix, p: u64) -> Vec<Vec<BigRational>> {
    a.finite_part(p)
        .expect("matrix covers S")
        .iter()
        .map(|r| r.iter().map(|x| BigRational::from_integer(x.clone())).collect())
        .collect()
}

/// Count `(p, q)` in `p_coset x q_coset` with `u_A(p, q) in E_psi(T)`.
fn brute(
    a: &TruncatedMatrix,
    psi: &ApproxCollection,
    profile: &NormProfile,
    p_coset: &Coset,
    q_coset: &Coset,
    budget: u64,
) -> Result<u64> {
    let places = psi.places();
    let (m, n) = psi.dims();
    let (m, n) = (m as usize, n as usize);
    let region = Region::new(psi.clone(), profile.clone())?;
    let mut budget = Budget { used: 0, limit: budget };
    let finite_a: Vec<(u64, Vec<Vec<BigRational>>)> = places.primes().iter().map(|&p| (p, finite_rows(a, p))).collect();

    // q-candidates
    let mut den_q = BigInt::one();
    for &p in places.primes() {
        let k = region.finite_block(p).max(offset_exponent(q_coset.offset, p));
        den_q *= int_prime_power(p, k.max(0) as u32);
    }
    let t = profile.real();
    let root = t.floor().to_integer().nth_root(n as u32) + 1u32;
    let r = BigRational::from_integer(root);
    let axes: Vec<Vec<BigRational>> = (0..n).map(|i| grid(&-&r, &r, &den_q, &q_coset.offset[i])).collect();
    budget.spend(axes.iter().map(|x| x.len() as u64).product())?;

    let mut count = 0u64;
    let mut idx = vec![0usize; n];
    if axes.iter().any(Vec::is_empty) {
        return Ok(0);
    }
    let sup_w = psi.real().sup().ceil() + BigRational::one();
    loop {
        let q: Vec<BigRational> = idx.iter().enumerate().map(|(i, &j)| axes[i][j].clone()).collect();
        let in_q_coset = (0..n).all(|i| q_coset.holds(i, &q[i], &places));
        let qn = num_traits::pow(sup_norm(&q), n);
        let in_box = qn <= *t
            && places
                .primes()
                .iter()
                .all(|&p| norm_exponent(&q, p).is_none_or(|e| e <= region.finite_block(p)));
        if in_q_coset && in_box {
            count += count_p(a, psi, &region, &finite_a, &q, p_coset, &sup_w, m, &mut budget)?;
        }
        // odometer
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(count);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < axes[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn count_p(
    a: &TruncatedMatrix,
    psi: &ApproxCollection,
    region: &Region,
    finite_a: &[(u64, Vec<Vec<BigRational>>)],
    q: &[BigRational],
    p_coset: &Coset,
    sup_w: &BigRational,
    m: usize,
    budget: &mut Budget,
) -> Result<u64> {
    let places = psi.places();
    let n = q.len();
    let c_inf = mat_vec(a.real_part(), q);
    let c_fin: Vec<(u64, Vec<BigRational>)> = finite_a.iter().map(|(p, rows)| (*p, mat_vec(rows, q))).collect();
    let mut den = BigInt::one();
    for &p in places.primes() {
        let kappa = norm_exponent(q, p).unwrap_or(0).max(0).max(offset_exponent(p_coset.offset, p));
        den *= int_prime_power(p, kappa as u32 + 1);
    }
    let qn = num_traits::pow(sup_norm(q), n);
    let psi_inf = psi.real().evaluate(&qn);
    let thresholds: Vec<i64> = places
        .primes()
        .iter()
        .map(|&p| psi.finite(p).expect("psi covers S").threshold_for_norm(norm_exponent(q, p)) as i64)
        .collect();

    let mut survivors: Vec<Vec<BigRational>> = Vec::with_capacity(m);
    for r in 0..m {
        let cands = grid(&(-&c_inf[r] - sup_w), &(-&c_inf[r] + sup_w), &den, &p_coset.offset[r]);
        budget.spend(cands.len() as u64)?;
        let mut keep = Vec::new();
        for x in cands {
            if !p_coset.holds(r, &x, &places) {
                continue;
            }
            let y = num_traits::pow((&x + &c_inf[r]).abs(), m);
            let real_ok = psi_inf
                .bounds_above(&y)
                .ok_or_else(|| Error::Undecided(format!("{y} against psi_inf")))?;
            let fin_ok = c_fin.iter().zip(&thresholds).all(|((p, c), &j)| match padic_valuation(&(&x + &c[r]), *p) {
                Valuation::Infinite => true,
                Valuation::Finite(v) => v >= j,
            });
            if real_ok && fin_ok {
                keep.push(x);
            }
        }
        if keep.is_empty() {
            return Ok(0);
        }
        survivors.push(keep);
    }

    budget.spend(survivors.iter().map(|s| s.len() as u64).product())?;
    let mut count = 0u64;
    let mut idx = vec![0usize; m];
    loop {
        let x: Vec<BigRational> = idx.iter().enumerate().map(|(i, &j)| survivors[i][j].clone()).collect();
        let add = |c: &[BigRational]| x.iter().zip(c).map(|(a, b)| a + b).collect::<Vec<_>>();
        let point = AdelicPoint {
            real: (add(&c_inf), q.to_vec()),
            finite: c_fin.iter().map(|(p, c)| (*p, (add(c), q.to_vec()))).collect(),
        };
        if contains(region, &point)? {
            count += 1;
        }
        let mut pos = m;
        loop {
            if pos == 0 {
                return Ok(count);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < survivors[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// `N_{psi,A}(T)` by direct enumeration of candidate pairs.
pub fn count_solutions_bruteforce(req: &CountRequest, budget: u64) -> Result<u64> {
    req.validate()?;
    let (m, _) = req.dims();
    let (vm, vn) = req.congruence.split(m as usize);
    let modulus = BigRational::from_integer(BigInt::from(req.congruence.modulus()));
    let p_coset = Coset { modulus: modulus.clone(), offset: vm.coords() };
    let q_coset = Coset { modulus, offset: vn.coords() };
    brute(&req.matrix, &req.psi, &req.profile, &p_coset, &q_coset, budget)
}

/// `#(u_A(Z_S^d + shift) cap E_psi(T))` by direct enumeration.
pub fn count_affine_bruteforce(
    a: &TruncatedMatrix,
    psi: &ApproxCollection,
    profile: &NormProfile,
    shift: &[BigRational],
    budget: u64,
) -> Result<u64> {
    let (m, n) = psi.dims();
    if shift.len() != (m + n) as usize {
        return Err(Error::DimensionMismatch { expected: (m + n) as usize, found: shift.len() });
    }
    let (sm, sn) = shift.split_at(m as usize);
    let one = BigRational::one();
    brute(a, psi, profile, &Coset { modulus: one.clone(), offset: sm }, &Coset { modulus: one, offset: sn }, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counting::{count_solutions, Congruence};
    use crate::sring::{int, rat, SVector};

    #[test]
    fn examples() {
        let s = PlaceSet::new([2]).unwrap();
        let psi = ApproxCollection::constant_one(&s, 1, 1).unwrap();
        let a = TruncatedMatrix::zero(1, 1, &s, 8).unwrap();
        let t = NormProfile::new(int(2), [(2, 1)].into()).unwrap();
        let req = CountRequest::new(a.clone(), psi.clone(), t.clone(), Congruence::trivial(2)).unwrap();
        assert_eq!(count_solutions_bruteforce(&req, DEFAULT_BUDGET).unwrap(), 27);

        // N = 2 is not admissible when 2 is in S; use S = {inf, 3}, T = (2, 3)
        let s3 = PlaceSet::new([3]).unwrap();
        let psi3 = ApproxCollection::constant_one(&s3, 1, 1).unwrap();
        let a3 = TruncatedMatrix::zero(1, 1, &s3, 8).unwrap();
        let t3 = NormProfile::new(int(2), [(3, 1)].into()).unwrap();
        let c = Congruence::new(2, SVector::zeros(2), &s3).unwrap();
        let req = CountRequest::new(a3, psi3, t3, c).unwrap();
        let brute = count_solutions_bruteforce(&req, DEFAULT_BUDGET).unwrap();
        assert_eq!(brute, count_solutions(&req).unwrap());
        // p in {0}; q = b/3 with |b| <= 6 and b even
        assert_eq!(brute, 7);
        assert!(Congruence::new(2, SVector::zeros(2), &s).is_err());
    }

    #[test]
    fn budget_guard() {
        let s = PlaceSet::new([2]).unwrap();
        let psi = ApproxCollection::constant_one(&s, 1, 1).unwrap();
        let a = TruncatedMatrix::zero(1, 1, &s, 8).unwrap();
        let t = NormProfile::new(int(64), [(2, 4)].into()).unwrap();
        let req = CountRequest::new(a, psi, t, Congruence::trivial(2)).unwrap();
        assert!(matches!(count_solutions_bruteforce(&req, 100), Err(Error::BudgetExceeded { limit: 100 })));
    }

    #[test]
    fn shifted_count_matches_definition() {
        // Z + 1/2 in dimension 1 + 1, A = 0, psi = 1, T = (1, -): q in {-1/2, 1/2}, p in {-1/2, 1/2}
        let s = PlaceSet::real_only();
        let psi = ApproxCollection::constant_one(&s, 1, 1).unwrap();
        let a = TruncatedMatrix::zero(1, 1, &s, 1).unwrap();
        let t = NormProfile::new(int(1), Default::default()).unwrap();
        let c = count_affine_bruteforce(&a, &psi, &t, &[rat(1, 2), rat(1, 2)], DEFAULT_BUDGET).unwrap();
        assert_eq!(c, 4);
    }
}
