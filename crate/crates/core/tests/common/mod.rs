#![allow(dead_code)]

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use sarith::approx::PsiValue;
use sarith::counting::CountRequest;

pub fn r(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

pub fn i(n: i64) -> BigRational {
    BigRational::from_integer(n.into())
}

/// `v_p(x)` by repeated division; `None` for zero.
pub fn val(x: &BigRational, p: u64) -> Option<i64> {
    if x.is_zero() {
        return None;
    }
    let bp = BigInt::from(p);
    let mut v = 0;
    let (mut a, mut b) = (x.numer().abs(), x.denom().clone());
    while a.is_multiple_of(&bp) {
        a /= &bp;
        v += 1;
    }
    while b.is_multiple_of(&bp) {
        b /= &bp;
        v -= 1;
    }
    Some(v)
}

pub fn ppow(p: u64, e: i64) -> BigRational {
    let b = BigRational::from_integer(BigInt::from(p));
    if e >= 0 {
        num_traits::pow(b, e as usize)
    } else {
        num_traits::pow(b.recip(), (-e) as usize)
    }
}

/// `|x|_p` as a rational.
pub fn pnorm(x: &BigRational, p: u64) -> BigRational {
    val(x, p).map_or(BigRational::zero(), |v| ppow(p, -v))
}

pub fn vnorm_p(v: &[BigRational], p: u64) -> BigRational {
    v.iter().map(|x| pnorm(x, p)).max().unwrap_or_else(BigRational::zero)
}

pub fn vnorm_inf(v: &[BigRational]) -> BigRational {
    v.iter().map(|x| x.abs()).max().unwrap_or_else(BigRational::zero)
}

pub fn s_integer(x: &BigRational, primes: &[u64]) -> bool {
    let mut d = x.denom().clone();
    for &p in primes {
        let bp = BigInt::from(p);
        while d.is_multiple_of(&bp) {
            d /= &bp;
        }
    }
    d.is_one()
}

fn le_psi(lhs: &BigRational, v: &PsiValue) -> bool {
    match v {
        PsiValue::Exact(x) => lhs <= x,
        PsiValue::Enclosure { lo, hi } => {
            assert!(!(lhs > lo && lhs <= hi), "oracle met an undecided comparison");
            lhs <= lo
        }
    }
}

fn cartesian(axes: &[Vec<BigRational>]) -> Vec<Vec<BigRational>> {
    let mut out = vec![Vec::new()];
    for a in axes {
        let mut next = Vec::new();
        for v in &out {
            for x in a {
                let mut w = v.clone();
                w.push(x.clone());
                next.push(w);
            }
        }
        out = next;
    }
    out
}

/// `{b / den : lo <= b / den <= hi}`.
fn grid(lo: &BigRational, hi: &BigRational, den: &BigInt) -> Vec<BigRational> {
    let d = BigRational::from_integer(den.clone());
    let mut b = (lo * &d).ceil().to_integer();
    let top = (hi * &d).floor().to_integer();
    let mut out = Vec::new();
    while b <= top {
        out.push(BigRational::new(b.clone(), den.clone()));
        b += 1;
    }
    out
}

/// `N_psi,A(T)` straight from the definition: pairs `(p, q)` in `v + N Z_S^d` with
/// `||q||_w^n <= T_w` and `||A_w q + p||_w^m <= psi_w(||q||_w^n)` at every place `w`.
pub fn naive_count(req: &CountRequest) -> u64 {
    let primes: Vec<u64> = req.psi.primes().collect();
    let (m, n) = req.psi.dims();
    let (m, n) = (m as usize, n as usize);
    let modulus = i(req.congruence.modulus() as i64);
    let shift = req.congruence.shift().coords().to_vec();
    let (vp, vq) = shift.split_at(m);
    let t = req.profile.real();

    let mut den_q = BigInt::one();
    for &p in &primes {
        let e = Integer::div_floor(&req.profile.exponent(p), &(n as i64)).max(0);
        den_q *= BigInt::from(p).pow(e as u32);
    }
    let mut reach = BigRational::one();
    while num_traits::pow(reach.clone(), n) <= *t {
        reach += BigRational::one();
    }
    let q_axis = grid(&-&reach, &reach, &den_q);
    let mut count = 0;
    for q in cartesian(&vec![q_axis; n]) {
        let qn_inf = num_traits::pow(vnorm_inf(&q), n);
        if qn_inf > *t {
            continue;
        }
        if primes.iter().any(|&p| num_traits::pow(vnorm_p(&q, p), n) > ppow(p, req.profile.exponent(p))) {
            continue;
        }
        if !(0..n).all(|k| s_integer(&((&q[k] - &vq[k]) / &modulus), &primes)) {
            continue;
        }
        let mul = |rows: Vec<Vec<BigRational>>| -> Vec<BigRational> {
            rows.iter().map(|row| row.iter().zip(&q).map(|(a, b)| a * b).sum()).collect()
        };
        let c_inf = mul(req.matrix.real_part().to_vec());
        let c_fin: Vec<(u64, Vec<BigRational>)> = primes
            .iter()
            .map(|&p| {
                let rows = req.matrix.finite_part(p).unwrap();
                (p, mul(rows.iter().map(|r| r.iter().map(|x| BigRational::from_integer(x.clone())).collect()).collect()))
            })
            .collect();
        let axes: Vec<Vec<BigRational>> = (0..m)
            .map(|k| {
                let mut den = BigInt::one();
                for (p, c) in &c_fin {
                    let e = val(&c[k], *p).map_or(0, |v| (-v).max(0));
                    den *= BigInt::from(*p).pow(e as u32);
                }
                grid(&(-BigRational::one() - &c_inf[k]), &(BigRational::one() - &c_inf[k]), &den)
            })
            .collect();
        let psi_inf = if q.iter().all(Zero::is_zero) { PsiValue::Exact(BigRational::one()) } else { req.psi.real().evaluate(&qn_inf) };
        for pv in cartesian(&axes) {
            if !(0..m).all(|k| s_integer(&((&pv[k] - &vp[k]) / &modulus), &primes)) {
                continue;
            }
            let img: Vec<BigRational> = (0..m).map(|k| &c_inf[k] + &pv[k]).collect();
            if !le_psi(&num_traits::pow(vnorm_inf(&img), m), &psi_inf) {
                continue;
            }
            let fin_ok = c_fin.iter().all(|(p, c)| {
                let img: Vec<BigRational> = (0..m).map(|k| &c[k] + &pv[k]).collect();
                let qn = num_traits::pow(vnorm_p(&q, *p), n);
                let bound = if qn.is_zero() { BigRational::one() } else { req.psi.finite(*p).unwrap().evaluate(&qn) };
                num_traits::pow(vnorm_p(&img, *p), m) <= bound
            });
            if fin_ok {
                count += 1;
            }
        }
    }
    count
}

/// `#{q in Z_S^n : ||q||_inf = T_inf, ||q||_p = p^(e_p)}` by enumeration.
pub fn naive_profile_count(n: usize, t_inf: &BigRational, exps: &[(u64, i64)]) -> u64 {
    let primes: Vec<u64> = exps.iter().map(|e| e.0).collect();
    let mut den = BigInt::one();
    for &(p, e) in exps {
        den *= BigInt::from(p).pow(e.max(0) as u32);
    }
    let axis = grid(&-t_inf, t_inf, &den);
    cartesian(&vec![axis; n])
        .into_iter()
        .filter(|q| {
            q.iter().all(|x| s_integer(x, &primes))
                && vnorm_inf(q) == *t_inf
                && exps.iter().all(|&(p, e)| vnorm_p(q, p) == ppow(p, e))
        })
        .count() as u64
}
