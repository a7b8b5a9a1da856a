//! The coset counting kernel.
//!
//! For each `q = a / D` in the box, every row of `p = b / D` is constrained by a
//! real window `|b + g| <= D psi_inf(||q||^n)^(1/m)` and by congruences
//! `b == -(A_p a)_r mod p^(delta_p + j_p)` and `b == D v_m mod N`. The congruences
//! merge into one progression, so the per-row count is a closed form.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;

use super::CountRequest;
use crate::approx::{exact_root, FiniteApproxFunction, PsiValue, RealApproxFunction};
use crate::error::{Error, Result};
use crate::sring::{
    count_in_ap_int, crt, enumerate_box, from_f64, int_prime_power, int_valuation, residue_mod, BoxBounds,
    BoxEnumeration, NormProfile, Progression,
};

/// Which per-`q` evaluation to use. Both are exact; `Fast` filters with certified
/// floating point and machine integers and falls back to `Exact` when unsure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum KernelMode {
    #[default]
    Fast,
    Exact,
}

/// Integer window `[lo, hi]` of `b` with `|b + g|^root <= bound`.
pub(crate) fn real_window(g: &BigRational, bound: &PsiValue, root: u32) -> Result<(BigInt, BigInt)> {
    if let PsiValue::Exact(q) = bound {
        if let Some(w) = exact_root(q, root) {
            return Ok(((-&w - g).ceil().to_integer(), (&w - g).floor().to_integer()));
        }
    }
    let holds = |y: BigRational| -> Result<bool> {
        let ym = num_traits::pow(y.abs(), root as usize);
        bound
            .bounds_above(&ym)
            .ok_or_else(|| Error::Undecided(format!("|b + g|^{root} = {ym} against {}", bound.to_f64())))
    };
    let wf = bound.to_f64().max(0.0).powf(1.0 / root as f64);
    let off = from_f64(wf.floor()).map(|x| x.to_integer()).unwrap_or_else(BigInt::zero);
    let base = (-g).floor().to_integer();

    let mut hi = &base + &off;
    loop {
        let y = BigRational::from_integer(&hi + 1u32) + g;
        if y.is_positive() && !holds(y)? {
            break;
        }
        hi += 1u32;
    }
    loop {
        let y = BigRational::from_integer(hi.clone()) + g;
        if !y.is_positive() || holds(y)? {
            break;
        }
        hi -= 1u32;
    }
    let mut lo = &base - &off;
    loop {
        let y = BigRational::from_integer(&lo - 1u32) + g;
        if y.is_negative() && !holds(y)? {
            break;
        }
        lo -= 1u32;
    }
    loop {
        let y = BigRational::from_integer(lo.clone()) + g;
        if !y.is_negative() || holds(y)? {
            break;
        }
        lo += 1u32;
    }
    Ok((lo, hi))
}

struct FinitePlace<'a> {
    prime: u64,
    delta: i64,
    precision: u32,
    entries: &'a [Vec<BigInt>],
    psi: &'a FiniteApproxFunction,
}

/// Machine-integer copies of the request data, when everything fits.
struct FastData {
    den_f: f64,
    real_num: Vec<Vec<i128>>,
    real_den_f: f64,
    /// `(p, delta, entries mod p^K)`
    finite: Vec<(u64, i64, Vec<Vec<u128>>)>,
    n_res: Vec<u128>,
}

/// Box membership for one ladder step, in terms of the numerators `a`.
#[derive(Clone, Debug)]
struct Step {
    h_max: BigInt,
    h_max_i: Option<i64>,
    k: Vec<i64>,
}

struct Kernel<'a> {
    rows: usize,
    n: usize,
    root: u32,
    den: BigInt,
    real_num: Vec<Vec<BigInt>>,
    real_den: BigInt,
    real_psi: &'a RealApproxFunction,
    finite: Vec<FinitePlace<'a>>,
    modulus: u64,
    n_res: Vec<BigInt>,
    fast: Option<FastData>,
}

fn continuous(f: &RealApproxFunction) -> bool {
    match f {
        RealApproxFunction::Step { .. } => false,
        RealApproxFunction::Scaled { base, .. } => continuous(base),
        _ => true,
    }
}

const FAST_LIMIT: i128 = 1 << 62;

impl<'a> Kernel<'a> {
    fn new(req: &'a CountRequest, bounds: &BoxEnumeration, h_max: &BigInt, mode: KernelMode) -> Self {
        let (m, n) = req.psi.dims();
        let real = req.matrix.real_part();
        let real_den = real.iter().flatten().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
        let real_num: Vec<Vec<BigInt>> = real
            .iter()
            .map(|r| r.iter().map(|x| x.numer() * (&real_den / x.denom())).collect())
            .collect();
        let den = bounds.denominator().clone();
        let finite: Vec<FinitePlace<'a>> = req
            .psi
            .finite_functions()
            .iter()
            .map(|(&p, f)| FinitePlace {
                prime: p,
                delta: bounds.denominator_exponents()[&p],
                precision: req.matrix.precision(p),
                entries: req.matrix.finite_part(p).expect("validated places"),
                psi: f,
            })
            .collect();
        let modulus = req.congruence.modulus();
        let (vm, _) = req.congruence.split(m as usize);
        let n_res: Vec<BigInt> = vm
            .coords()
            .iter()
            .map(|v| BigInt::from(residue_mod(&(v * BigRational::from_integer(den.clone())), modulus)))
            .collect();

        let mut kernel = Kernel {
            rows: m as usize,
            n: n as usize,
            root: m,
            den,
            real_num,
            real_den,
            real_psi: req.psi.real(),
            finite,
            modulus,
            n_res,
            fast: None,
        };
        if mode == KernelMode::Fast {
            kernel.fast = kernel.fast_data(h_max);
        }
        kernel
    }

    fn fast_data(&self, h_max: &BigInt) -> Option<FastData> {
        if !continuous(self.real_psi) || *h_max >= BigInt::from(1i64 << 50) {
            return None;
        }
        let den = self.den.to_i64().filter(|&d| d < (1 << 50))?;
        let lim = BigInt::from(1u128 << 64);
        let real_num = self
            .real_num
            .iter()
            .map(|r| r.iter().map(|x| if x.abs() < lim { x.to_i128() } else { None }).collect::<Option<Vec<_>>>())
            .collect::<Option<Vec<_>>>()?;
        let mut finite = Vec::new();
        for f in &self.finite {
            if int_prime_power(f.prime, f.precision) >= BigInt::from(1u64 << 62) {
                return None;
            }
            let entries = f
                .entries
                .iter()
                .map(|r| r.iter().map(|x| x.to_u128()).collect::<Option<Vec<_>>>())
                .collect::<Option<Vec<_>>>()?;
            finite.push((f.prime, f.delta, entries));
        }
        Some(FastData {
            den_f: den as f64,
            real_num,
            real_den_f: self.real_den.to_f64()?,
            finite,
            n_res: self.n_res.iter().map(|x| x.to_u128().expect("residue below N")).collect(),
        })
    }

    /// `||q||_p = p^kappa` for `q = a / D`.
    fn kappa(&self, a: &[BigInt], f: &FinitePlace) -> Option<i64> {
        a.iter()
            .filter_map(|x| int_valuation(x, f.prime))
            .min()
            .map(|v| f.delta - v)
    }

    fn check_precision(&self, f: &FinitePlace, j: u32) -> Result<()> {
        let needed = f.delta + j as i64;
        if needed > f.precision as i64 {
            return Err(Error::InsufficientPrecision { prime: f.prime, needed: needed as u32, available: f.precision });
        }
        Ok(())
    }

    /// Number of `p` for the numerator vector `a`, exactly; also the `kappa_p`.
    fn count_exact(&self, a: &[BigInt], kappas: &mut Vec<Option<i64>>) -> Result<BigInt> {
        kappas.clear();
        let mut levels = Vec::with_capacity(self.finite.len());
        for f in &self.finite {
            let kappa = self.kappa(a, f);
            let j = f.psi.threshold_for_norm(kappa);
            self.check_precision(f, j)?;
            kappas.push(kappa);
            levels.push(f.delta + j as i64);
        }
        let h = a.iter().map(|x| x.abs()).max().unwrap_or_else(BigInt::zero);
        let t = num_traits::pow(BigRational::new(h, self.den.clone()), self.n);
        let scale = BigRational::from_integer(num_traits::pow(self.den.clone(), self.root as usize));
        let bound = match self.real_psi.evaluate(&t) {
            PsiValue::Exact(x) => PsiValue::Exact(x * &scale),
            PsiValue::Enclosure { lo, hi } => PsiValue::Enclosure { lo: lo * &scale, hi: hi * &scale },
        };

        let mut total = BigInt::one();
        for r in 0..self.rows {
            let g_num: BigInt = self.real_num[r].iter().zip(a).map(|(x, y)| x * y).sum();
            let g = BigRational::new(g_num, self.real_den.clone());
            let (lo, hi) = real_window(&g, &bound, self.root)?;
            if hi < lo {
                return Ok(BigInt::zero());
            }
            let mut parts = Vec::with_capacity(self.finite.len() + 1);
            for (f, &level) in self.finite.iter().zip(&levels) {
                if level > 0 {
                    let pl = int_prime_power(f.prime, level as u32);
                    let s: BigInt = f.entries[r].iter().zip(a).map(|(x, y)| x * y).sum();
                    parts.push(((-s).mod_floor(&pl), pl));
                }
            }
            if self.modulus > 1 {
                parts.push((self.n_res[r].clone(), BigInt::from(self.modulus)));
            }
            let (res, modulus) = crt(&parts);
            total *= count_in_ap_int(&lo, &hi, &res, &modulus);
            if total.is_zero() {
                break;
            }
        }
        Ok(total)
    }

    /// Machine-integer evaluation; `Ok(None)` asks for the exact path.
    fn count_fast(&self, fd: &FastData, a: &[i64], kappas: &mut Vec<Option<i64>>) -> Result<Option<u64>> {
        kappas.clear();
        let mut levels = [0u32; 16];
        if self.finite.len() > levels.len() {
            return Ok(None);
        }
        for (idx, f) in self.finite.iter().enumerate() {
            let p = f.prime as i64;
            let v = a
                .iter()
                .filter(|&&x| x != 0)
                .map(|&x| {
                    let (mut x, mut v) = (x, 0i64);
                    while x % p == 0 {
                        x /= p;
                        v += 1;
                    }
                    v
                })
                .min();
            let kappa = v.map(|v| f.delta - v);
            let j = f.psi.threshold_for_norm(kappa);
            self.check_precision(f, j)?;
            kappas.push(kappa);
            levels[idx] = (f.delta + j as i64) as u32;
        }
        let h = a.iter().map(|x| x.abs()).max().unwrap_or(0);
        let t = (h as f64 / fd.den_f).powi(self.n as i32);
        let w = fd.den_f * self.real_psi.evaluate_f64(t).powf(1.0 / self.root as f64);
        if !w.is_finite() {
            return Ok(None);
        }

        let mut total: u64 = 1;
        for r in 0..self.rows {
            let mut g: i128 = 0;
            for (x, &y) in fd.real_num[r].iter().zip(a) {
                let Some(term) = x.checked_mul(y as i128) else { return Ok(None) };
                let Some(s) = g.checked_add(term) else { return Ok(None) };
                g = s;
            }
            let gf = g as f64 / fd.real_den_f;
            let (lo_f, hi_f) = (-w - gf, w - gf);
            let eta = 1e-9 * (gf.abs() + w + 1.0);
            if (hi_f + eta).floor() < (lo_f - eta).ceil() {
                return Ok(Some(0));
            }
            let (lo, lo2) = ((lo_f - eta).ceil(), (lo_f + eta).ceil());
            let (hi, hi2) = ((hi_f - eta).floor(), (hi_f + eta).floor());
            if lo != lo2 || hi != hi2 || lo.abs() > 2f64.powi(60) || hi.abs() > 2f64.powi(60) {
                return Ok(None);
            }
            let (lo, hi) = (lo as i128, hi as i128);
            if hi < lo {
                return Ok(Some(0));
            }

            let (mut res, mut modulus): (i128, i128) = (0, 1);
            let mut merge = |r2: i128, m2: i128| -> bool {
                let Some(mm) = modulus.checked_mul(m2).filter(|&x| x < FAST_LIMIT) else { return false };
                // res + modulus * ((r2 - res) * modulus^-1 mod m2)
                let inv = match mod_inv_i128(modulus.rem_euclid(m2), m2) {
                    Some(i) => i,
                    None => return false,
                };
                let k = ((r2 - res).rem_euclid(m2) * inv).rem_euclid(m2);
                res = (res + modulus * k).rem_euclid(mm);
                modulus = mm;
                true
            };
            for (idx, (p, _, entries)) in fd.finite.iter().enumerate() {
                let level = levels[idx];
                if level == 0 {
                    continue;
                }
                let pl = (*p as u128).pow(level);
                let mut s: u128 = 0;
                for (&x, &y) in entries[r].iter().zip(a) {
                    let y = (y as i128).rem_euclid(pl as i128) as u128;
                    s = (s + (x % pl) * y % pl) % pl;
                }
                let rp = (pl - s) % pl;
                if !merge(rp as i128, pl as i128) {
                    return Ok(None);
                }
            }
            if self.modulus > 1 && !merge(fd.n_res[r] as i128, self.modulus as i128) {
                return Ok(None);
            }
            let count = (hi - res).div_euclid(modulus) - (lo - 1 - res).div_euclid(modulus);
            let Some(t) = total.checked_mul(count as u64) else { return Ok(None) };
            total = t;
            if total == 0 {
                break;
            }
        }
        Ok(Some(total))
    }
}

fn mod_inv_i128(a: i128, m: i128) -> Option<i128> {
    if m == 1 {
        return Some(0);
    }
    let (mut r0, mut r1, mut s0, mut s1) = (a, m, 1i128, 0i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (s0, s1) = (s1, s0 - q * s1);
    }
    (r0 == 1).then(|| s0.rem_euclid(m))
}

/// `||q||_inf^n <= T_inf` as `h <= H`, for numerators over `den`.
fn step_for(profile: &NormProfile, n: u32, den: &BigInt, primes: &[u64]) -> Result<Step> {
    let b = BoxBounds::from_profile(profile, n)?;
    let h_max = b.max_numerator(den);
    Ok(Step {
        h_max_i: h_max.to_i64(),
        h_max,
        k: primes.iter().map(|&p| b.finite_exponent(p)).collect(),
    })
}

/// The largest precision the counter can ask for inside the request's box.
pub fn required_precision(req: &CountRequest) -> BTreeMap<u64, u32> {
    let (_, n) = req.psi.dims();
    req.psi
        .finite_functions()
        .iter()
        .map(|(&p, f)| {
            let k = req.profile.exponent(p).div_euclid(n as i64);
            let delta = k.max(0);
            (p, ((delta + f.exponent(k) as i64) as u32).max(1))
        })
        .collect()
}

pub fn count_solutions(req: &CountRequest) -> Result<u64> {
    count_solutions_with(req, KernelMode::Fast)
}

pub fn count_solutions_with(req: &CountRequest, mode: KernelMode) -> Result<u64> {
    Ok(ladder(req, std::slice::from_ref(&req.profile), mode)?[0])
}

/// Counts for each profile of a ladder, enumerating the box of `req.profile` once.
/// Each profile must be dominated by `req.profile`.
pub fn count_ladder(req: &CountRequest, profiles: &[NormProfile], mode: KernelMode) -> Result<Vec<u64>> {
    ladder(req, profiles, mode)
}

const CHUNKS: u64 = 64;

fn ladder(req: &CountRequest, profiles: &[NormProfile], mode: KernelMode) -> Result<Vec<u64>> {
    req.validate()?;
    let places = req.places();
    let (m, n) = req.psi.dims();
    for p in profiles {
        p.check_places(&places)?;
        if !req.profile.dominates(p) {
            return Err(Error::InvalidProfile("ladder step exceeds the enumeration box".into()));
        }
    }
    let bounds = BoxBounds::from_profile(&req.profile, n)?;
    let (_, vn) = req.congruence.split(m as usize);
    let cong = (req.congruence.modulus() > 1).then_some((req.congruence.modulus(), &vn));
    let boxed = enumerate_box(n as usize, &bounds, cong, &places)?;
    let h_final = bounds.max_numerator(boxed.denominator());
    let kernel = Kernel::new(req, &boxed, &h_final, mode);
    let steps = profiles
        .iter()
        .map(|p| step_for(p, n, boxed.denominator(), places.primes()))
        .collect::<Result<Vec<_>>>()?;

    let coords = boxed.progressions();
    let first = coords[0].count;
    let chunk = first.div_ceil(CHUNKS).max(1);
    let ranges: Vec<(u64, u64)> = (0..first).step_by(chunk as usize).map(|s| (s, (s + chunk).min(first))).collect();
    let partial: Vec<Result<Vec<BigInt>>> = ranges
        .into_par_iter()
        .map(|(s, e)| visit_range(&kernel, coords, s, e, &steps))
        .collect();
    let mut totals = vec![BigInt::zero(); steps.len()];
    for part in partial {
        for (t, c) in totals.iter_mut().zip(part?) {
            *t += c;
        }
    }
    totals.into_iter().map(|t| t.to_u64().ok_or(Error::CountOverflow)).collect()
}

fn visit_range(kernel: &Kernel, coords: &[Progression], start: u64, end: u64, steps: &[Step]) -> Result<Vec<BigInt>> {
    let n = coords.len();
    let mut totals = vec![BigInt::zero(); steps.len()];
    let mut small = vec![0u64; steps.len()];
    let mut idx = vec![0u64; n];
    let mut kappas = Vec::new();
    let mut a_big: Vec<BigInt> = vec![BigInt::zero(); n];
    let mut a_i: Vec<i64> = vec![0; n];
    for i0 in start..end {
        idx.iter_mut().for_each(|x| *x = 0);
        idx[0] = i0;
        if coords[1..].iter().any(|c| c.count == 0) {
            break;
        }
        loop {
            let mut fits = kernel.fast.is_some();
            for (k, c) in coords.iter().enumerate() {
                a_big[k] = c.value(idx[k]);
                if fits {
                    match a_big[k].to_i64() {
                        Some(v) => a_i[k] = v,
                        None => fits = false,
                    }
                }
            }
            let fast = if fits {
                kernel.count_fast(kernel.fast.as_ref().expect("checked"), &a_i, &mut kappas)?
            } else {
                None
            };
            match fast {
                Some(c) => {
                    if c > 0 {
                        let h = a_i.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0);
                        for (s, step) in steps.iter().enumerate() {
                            let inside = step.h_max_i.is_some_and(|hm| h <= hm as u64)
                                && kappas.iter().zip(&step.k).all(|(kp, k)| kp.is_none_or(|v| v <= *k));
                            if inside {
                                small[s] += c;
                                if small[s] > 1 << 62 {
                                    totals[s] += small[s];
                                    small[s] = 0;
                                }
                            }
                        }
                    }
                }
                None => {
                    let c = kernel.count_exact(&a_big, &mut kappas)?;
                    if !c.is_zero() {
                        let h = a_big.iter().map(|x| x.abs()).max().unwrap_or_else(BigInt::zero);
                        for (s, step) in steps.iter().enumerate() {
                            let inside = h <= step.h_max
                                && kappas.iter().zip(&step.k).all(|(kp, k)| kp.is_none_or(|v| v <= *k));
                            if inside {
                                totals[s] += &c;
                            }
                        }
                    }
                }
            }
            // advance coordinates 1..n
            let mut pos = n;
            loop {
                pos -= 1;
                if pos == 0 {
                    break;
                }
                idx[pos] += 1;
                if idx[pos] < coords[pos].count {
                    break;
                }
                idx[pos] = 0;
            }
            if pos == 0 {
                break;
            }
        }
    }
    for (t, s) in totals.iter_mut().zip(small) {
        *t += s;
    }
    Ok(totals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::ApproxCollection;
    use crate::counting::{Congruence, TruncatedMatrix};
    use crate::sring::{int, rat, PlaceSet, SVector};

    fn req16(n_mod: u64, places: &PlaceSet) -> CountRequest {
        let psi = ApproxCollection::constant_one(places, 1, 1).unwrap();
        let a = TruncatedMatrix::zero(1, 1, places, 8).unwrap();
        let t = NormProfile::new(int(2), places.primes().iter().map(|&p| (p, 1)).collect()).unwrap();
        let cong = if n_mod == 1 {
            Congruence::trivial(2)
        } else {
            Congruence::new(n_mod, SVector::zeros(2), places).unwrap()
        };
        CountRequest::new(a, psi, t, cong).unwrap()
    }

    #[test]
    fn zero_matrix_example() {
        let s = PlaceSet::new([2]).unwrap();
        for mode in [KernelMode::Fast, KernelMode::Exact] {
            assert_eq!(count_solutions_with(&req16(1, &s), mode).unwrap(), 27);
        }
    }

    #[test]
    fn real_window_irrational_root() {
        // |b|^2 <= 2: b in {-1, 0, 1}
        let (lo, hi) = real_window(&int(0), &PsiValue::Exact(int(2)), 2).unwrap();
        assert_eq!((lo, hi), (BigInt::from(-1), BigInt::from(1)));
        // |b + 1/2|^2 <= 3: b + 1/2 in [-1.73, 1.73]
        let (lo, hi) = real_window(&rat(1, 2), &PsiValue::Exact(int(3)), 2).unwrap();
        assert_eq!((lo, hi), (BigInt::from(-2), BigInt::from(1)));
        // empty window
        let (lo, hi) = real_window(&rat(1, 2), &PsiValue::Exact(rat(1, 100)), 3).unwrap();
        assert!(hi < lo);
        let tie = PsiValue::Enclosure { lo: rat(99, 100), hi: rat(101, 100) };
        assert!(matches!(real_window(&int(0), &tie, 2), Err(Error::Undecided(_))));
    }

    #[test]
    fn precision_error_and_requirement() {
        let s = PlaceSet::new([2]).unwrap();
        let mut r = req16(1, &s);
        r.matrix = TruncatedMatrix::zero(1, 1, &s, 1).unwrap();
        r.psi = ApproxCollection::from_json(
            r#"{"real": {"kind": "constant_one"}, "finite": {"2": {"kind": "steps", "z": [3], "tail": {"kind": "constant"}}}}"#,
            &s,
            1,
            1,
        )
        .unwrap();
        match count_solutions(&r) {
            Err(Error::InsufficientPrecision { prime: 2, needed: 4, available: 1 }) => {}
            other => panic!("{other:?}"),
        }
        assert_eq!(required_precision(&r)[&2], 4);
    }
}
