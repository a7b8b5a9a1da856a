//! Exact arithmetic over `Q` and the ring of S-integers `Z_S = Z[1/p_1 ... p_s]`.
//!
//! Elements are plain [`BigRational`]s; membership in `Z_S` is a predicate on the
//! denominator relative to a [`PlaceSet`]. Finite-place norms are exact powers of
//! the prime (or zero), the real place uses the sup norm.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elements of `Q`, read as elements of `Z_S` when the denominator is S-supported.
pub type SRational = BigRational;

pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    if p % 2 == 0 {
        return p == 2;
    }
    let mut d = 3u64;
    while d.saturating_mul(d) <= p {
        if p % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

/// A place of `Q` that may appear in `S`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Place {
    Infinite,
    Finite(u64),
}

impl fmt::Display for Place {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Place::Infinite => write!(f, "inf"),
            Place::Finite(p) => write!(f, "{p}"),
        }
    }
}

/// The set `S = {inf, p_1, ..., p_s}`. The infinite place is always present.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct PlaceSet {
    primes: Vec<u64>,
}

impl PlaceSet {
    pub fn new(primes: impl IntoIterator<Item = u64>) -> Result<Self> {
        let mut primes: Vec<u64> = primes.into_iter().collect();
        primes.sort_unstable();
        for w in primes.windows(2) {
            if w[0] == w[1] {
                return Err(Error::InvalidPlaceSet(format!("prime {} listed twice", w[0])));
            }
        }
        if let Some(&p) = primes.iter().find(|&&p| !is_prime(p)) {
            return Err(Error::InvalidPlaceSet(format!("{p} is not prime")));
        }
        Ok(Self { primes })
    }

    /// `S = {inf}`: classical real approximation.
    pub fn real_only() -> Self {
        Self { primes: Vec::new() }
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn contains_prime(&self, p: u64) -> bool {
        self.primes.binary_search(&p).is_ok()
    }

    pub fn places(&self) -> impl Iterator<Item = Place> + '_ {
        std::iter::once(Place::Infinite).chain(self.primes.iter().map(|&p| Place::Finite(p)))
    }

    /// Whether every prime factor of the denominator of `x` lies in `S_f`.
    pub fn is_s_integer(&self, x: &BigRational) -> bool {
        let mut den = x.denom().clone();
        for &p in &self.primes {
            let pb = BigInt::from(p);
            while den.is_multiple_of(&pb) {
                den /= &pb;
            }
        }
        den.is_one()
    }

    /// `N in N_S`: a positive integer coprime to every finite place.
    pub fn is_admissible_modulus(&self, modulus: u64) -> bool {
        modulus >= 1 && self.primes.iter().all(|&p| modulus % p != 0)
    }

    pub fn check_modulus(&self, modulus: u64) -> Result<()> {
        if self.is_admissible_modulus(modulus) {
            Ok(())
        } else {
            Err(Error::InvalidModulus(modulus))
        }
    }
}

impl TryFrom<Vec<u64>> for PlaceSet {
    type Error = Error;
    fn try_from(v: Vec<u64>) -> Result<Self> {
        PlaceSet::new(v)
    }
}

impl From<PlaceSet> for Vec<u64> {
    fn from(s: PlaceSet) -> Self {
        s.primes
    }
}

/// A p-adic valuation; `Infinite` is the valuation of zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Valuation {
    Finite(i64),
    Infinite,
}

impl Valuation {
    pub fn finite(self) -> Option<i64> {
        match self {
            Valuation::Finite(v) => Some(v),
            Valuation::Infinite => None,
        }
    }
}

/// Valuation of a nonzero integer, `None` for zero.
pub fn int_valuation(x: &BigInt, p: u64) -> Option<i64> {
    if x.is_zero() {
        return None;
    }
    let pb = BigInt::from(p);
    let mut v = 0i64;
    let mut m = x.clone();
    loop {
        let (q, r) = m.div_rem(&pb);
        if !r.is_zero() {
            return Some(v);
        }
        m = q;
        v += 1;
    }
}

pub fn padic_valuation(x: &BigRational, p: u64) -> Valuation {
    match int_valuation(x.numer(), p) {
        None => Valuation::Infinite,
        Some(vn) => Valuation::Finite(vn - int_valuation(x.denom(), p).unwrap_or(0)),
    }
}

/// `p^e` for any integer exponent.
pub fn prime_power(p: u64, e: i64) -> BigRational {
    let base = BigInt::from(p);
    let mag = num_traits::pow(base, e.unsigned_abs() as usize);
    if e >= 0 {
        BigRational::from_integer(mag)
    } else {
        BigRational::new(BigInt::one(), mag)
    }
}

/// `p^e` as an integer, `e >= 0`.
pub fn int_prime_power(p: u64, e: u32) -> BigInt {
    num_traits::pow(BigInt::from(p), e as usize)
}

/// A nonempty vector over `Q` (typically over `Z_S`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SVector(#[serde(with = "ratio_str::vec")] Vec<BigRational>);

impl SVector {
    pub fn new(coords: Vec<BigRational>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        Ok(Self(coords))
    }

    pub fn from_integers(coords: &[i64]) -> Result<Self> {
        Self::new(coords.iter().map(|&c| BigRational::from_integer(c.into())).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0);
        Self(vec![BigRational::zero(); dim])
    }

    pub fn coords(&self) -> &[BigRational] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<BigRational> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(Zero::is_zero)
    }

    pub fn checked_add(&self, other: &SVector) -> Result<SVector> {
        self.check_dim(other)?;
        Ok(SVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn checked_sub(&self, other: &SVector) -> Result<SVector> {
        self.check_dim(other)?;
        Ok(SVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    pub fn scaled(&self, c: &BigRational) -> SVector {
        SVector(self.0.iter().map(|a| a * c).collect())
    }

    /// Split into the first `m` and remaining coordinates.
    pub fn split(&self, m: usize) -> (SVector, SVector) {
        let (a, b) = self.0.split_at(m);
        (SVector(a.to_vec()), SVector(b.to_vec()))
    }

    fn check_dim(&self, other: &SVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(())
    }
}

impl fmt::Display for SVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Sup norm of a coordinate list.
pub fn sup_norm(coords: &[BigRational]) -> BigRational {
    coords.iter().map(|c| c.abs()).max().unwrap_or_else(BigRational::zero)
}

/// `log_p ||x||_p`, or `None` for the zero vector.
pub fn norm_exponent(coords: &[BigRational], p: u64) -> Option<i64> {
    coords
        .iter()
        .filter_map(|c| padic_valuation(c, p).finite())
        .min()
        .map(|v| -v)
}

/// The per-place norm: sup norm at infinity, `p^(-min valuation)` at `p`.
pub fn norm_at(x: &SVector, place: Place) -> BigRational {
    match place {
        Place::Infinite => sup_norm(x.coords()),
        Place::Finite(p) => match norm_exponent(x.coords(), p) {
            None => BigRational::zero(),
            Some(e) => prime_power(p, e),
        },
    }
}

/// Image of `x in Z_S` in `Z_S / N Z_S = Z / N`, for `N` coprime to `S`.
pub fn residue_mod(x: &BigRational, modulus: u64) -> u64 {
    if modulus == 1 {
        return 0;
    }
    let n = BigInt::from(modulus);
    let num = x.numer().mod_floor(&n).to_u64().unwrap_or(0);
    let den = x.denom().mod_floor(&n).to_u64().unwrap_or(0);
    let inv = mod_inverse(den, modulus).expect("denominator invertible modulo N");
    ((num as u128 * inv as u128) % modulus as u128) as u64
}

/// Inverse of `a` modulo `m`, if it exists.
pub fn mod_inverse(a: u64, m: u64) -> Option<u64> {
    let (g, x, _) = ext_gcd(a as i128 % m as i128, m as i128);
    if g != 1 {
        return None;
    }
    Some(x.rem_euclid(m as i128) as u64)
}

fn ext_gcd(a: i128, b: i128) -> (i128, i128, i128) {
    if b == 0 {
        (a, 1, 0)
    } else {
        let (g, x, y) = ext_gcd(b, a % b);
        (g, y, x - (a / b) * y)
    }
}

/// `x == y (mod N)` in `Z_S^d`: every coordinate of `(x - y) / N` lies in `Z_S`.
pub fn congruent_mod(x: &SVector, y: &SVector, modulus: u64, places: &PlaceSet) -> Result<bool> {
    places.check_modulus(modulus)?;
    for c in x.coords().iter().chain(y.coords()) {
        if !places.is_s_integer(c) {
            return Err(Error::NotSInteger(c.to_string()));
        }
    }
    let diff = x.checked_sub(y)?;
    let n = BigRational::from_integer(modulus.into());
    Ok(diff.coords().iter().all(|c| places.is_s_integer(&(c / &n))))
}

/// `T = (T_p)`: a nonnegative real bound and `T_p = p^(e_p)` at each finite place.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormProfile {
    #[serde(with = "ratio_str")]
    t_inf: BigRational,
    t_fin: BTreeMap<u64, i64>,
}

impl NormProfile {
    pub fn new(t_inf: BigRational, t_fin: BTreeMap<u64, i64>) -> Result<Self> {
        if t_inf.is_negative() {
            return Err(Error::InvalidProfile(format!("negative real bound {t_inf}")));
        }
        Ok(Self { t_inf, t_fin })
    }

    /// Profile with the same exponent at every finite place of `places`.
    pub fn uniform(places: &PlaceSet, t_inf: BigRational, exponent: i64) -> Result<Self> {
        Self::new(t_inf, places.primes().iter().map(|&p| (p, exponent)).collect())
    }

    pub fn real(&self) -> &BigRational {
        &self.t_inf
    }

    pub fn exponents(&self) -> &BTreeMap<u64, i64> {
        &self.t_fin
    }

    pub fn exponent(&self, p: u64) -> i64 {
        self.t_fin.get(&p).copied().unwrap_or(0)
    }

    pub fn finite_value(&self, p: u64) -> BigRational {
        prime_power(p, self.exponent(p))
    }

    /// `|T| = prod_p T_p`.
    pub fn size(&self) -> BigRational {
        self.t_fin
            .iter()
            .fold(self.t_inf.clone(), |acc, (&p, &e)| acc * prime_power(p, e))
    }

    /// `self >= other` at every place.
    pub fn dominates(&self, other: &NormProfile) -> bool {
        self.t_inf >= other.t_inf
            && self
                .t_fin
                .keys()
                .chain(other.t_fin.keys())
                .all(|&p| self.exponent(p) >= other.exponent(p))
    }

    pub fn check_places(&self, places: &PlaceSet) -> Result<()> {
        for &p in self.t_fin.keys() {
            if !places.contains_prime(p) {
                return Err(Error::InvalidProfile(format!("exponent given for {p} outside S")));
            }
        }
        if let Some(&p) = places.primes().iter().find(|p| !self.t_fin.contains_key(p)) {
            return Err(Error::InvalidProfile(format!("missing exponent for {p}")));
        }
        Ok(())
    }

    /// Bounds on `||q||_p^n` need `e_p` divisible by `n` so that `T_p^(1/n)` is a power of `p`.
    pub fn check_multiple_of(&self, n: u32) -> Result<()> {
        for (&p, &e) in &self.t_fin {
            if e % n as i64 != 0 {
                return Err(Error::InvalidProfile(format!(
                    "exponent {e} at {p} is not a multiple of n = {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_real(&self, t_inf: BigRational) -> Result<Self> {
        Self::new(t_inf, self.t_fin.clone())
    }
}

/// Per-place bounds for [`enumerate_box`]: `|q_i|^power <= real_limit` and
/// `||q||_p <= p^(k_p)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoxBounds {
    real_limit: BigRational,
    real_power: u32,
    finite: BTreeMap<u64, i64>,
}

impl BoxBounds {
    /// Bounds `||q||_inf <= u_inf` and `||q||_p <= p^(k_p)`.
    pub fn new(u_inf: BigRational, finite: BTreeMap<u64, i64>) -> Result<Self> {
        if u_inf.is_negative() {
            return Err(Error::InvalidProfile(format!("negative real bound {u_inf}")));
        }
        Ok(Self { real_limit: u_inf, real_power: 1, finite })
    }

    /// The box `||q||_p^n <= T_p` at every place.
    pub fn from_profile(profile: &NormProfile, n: u32) -> Result<Self> {
        profile.check_multiple_of(n)?;
        Ok(Self {
            real_limit: profile.real().clone(),
            real_power: n,
            finite: profile.exponents().iter().map(|(&p, &e)| (p, e / n as i64)).collect(),
        })
    }

    pub fn finite_exponent(&self, p: u64) -> i64 {
        self.finite.get(&p).copied().unwrap_or(0)
    }

    /// Largest integer `h` with `(h / den)^power <= real_limit`.
    pub fn max_numerator(&self, den: &BigInt) -> BigInt {
        let scaled = &self.real_limit * BigRational::from_integer(num_traits::pow(den.clone(), self.real_power as usize));
        let x = scaled.floor().to_integer();
        if x.is_negative() {
            return BigInt::from(-1);
        }
        x.nth_root(self.real_power)
    }

    /// Whether `q` lies in the box.
    pub fn contains(&self, q: &SVector) -> bool {
        let h = sup_norm(q.coords());
        if num_traits::pow(h, self.real_power as usize) > self.real_limit {
            return false;
        }
        self.finite.iter().all(|(&p, &k)| norm_exponent(q.coords(), p).is_none_or(|e| e <= k))
    }
}

/// An arithmetic progression `first + idx * step`, `0 <= idx < count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Progression {
    pub first: BigInt,
    pub step: BigInt,
    pub count: u64,
}

impl Progression {
    pub fn value(&self, idx: u64) -> BigInt {
        &self.first + &self.step * BigInt::from(idx)
    }
}

/// The points `q = a / D` of `Z_S^n` inside an adelic box, enumerated through their
/// integer numerators `a` in lexicographic order.
#[derive(Clone, Debug)]
pub struct BoxEnumeration {
    denominator: BigInt,
    exponents: BTreeMap<u64, i64>,
    coords: Vec<Progression>,
}

impl BoxEnumeration {
    /// The common denominator `D = prod p^max(k_p, 0)`.
    pub fn denominator(&self) -> &BigInt {
        &self.denominator
    }

    /// `max(k_p, 0)` per finite place.
    pub fn denominator_exponents(&self) -> &BTreeMap<u64, i64> {
        &self.exponents
    }

    pub fn progressions(&self) -> &[Progression] {
        &self.coords
    }

    pub fn len(&self) -> u128 {
        self.coords.iter().map(|c| c.count as u128).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn numerators(&self) -> Numerators<'_> {
        Numerators {
            coords: &self.coords,
            idx: vec![0; self.coords.len()],
            done: self.is_empty(),
        }
    }

    pub fn points(&self) -> impl Iterator<Item = SVector> + '_ {
        let den = self.denominator.clone();
        self.numerators().map(move |a| {
            SVector(a.into_iter().map(|x| BigRational::new(x, den.clone())).collect())
        })
    }
}

/// Odometer over the numerator progressions (last coordinate fastest).
pub struct Numerators<'a> {
    coords: &'a [Progression],
    idx: Vec<u64>,
    done: bool,
}

impl Iterator for Numerators<'_> {
    type Item = Vec<BigInt>;

    fn next(&mut self) -> Option<Vec<BigInt>> {
        if self.done {
            return None;
        }
        let out = self.coords.iter().zip(&self.idx).map(|(c, &i)| c.value(i)).collect();
        let mut pos = self.coords.len();
        loop {
            if pos == 0 {
                self.done = true;
                break;
            }
            pos -= 1;
            self.idx[pos] += 1;
            if self.idx[pos] < self.coords[pos].count {
                break;
            }
            self.idx[pos] = 0;
        }
        Some(out)
    }
}

/// Enumerate `q in Z_S^dim` with `||q||_p <= U_p` at every place and, optionally,
/// `q == v (mod N)`.
pub fn enumerate_box(
    dim: usize,
    bounds: &BoxBounds,
    congruence: Option<(u64, &SVector)>,
    places: &PlaceSet,
) -> Result<BoxEnumeration> {
    if dim == 0 {
        return Err(Error::DimensionMismatch { expected: 1, found: 0 });
    }
    for &p in bounds.finite.keys() {
        if !places.contains_prime(p) {
            return Err(Error::InvalidProfile(format!("bound given for {p} outside S")));
        }
    }
    let mut den = BigInt::one();
    let mut exponents = BTreeMap::new();
    let mut base_mod = BigInt::one();
    for &p in places.primes() {
        let k = bounds.finite_exponent(p);
        if k > 0 {
            den *= int_prime_power(p, k as u32);
        } else if k < 0 {
            base_mod *= int_prime_power(p, (-k) as u32);
        }
        exponents.insert(p, k.max(0));
    }
    let h = bounds.max_numerator(&den);

    let mut coords = Vec::with_capacity(dim);
    for i in 0..dim {
        let (residue, modulus) = match congruence {
            Some((n, v)) if n > 1 => {
                places.check_modulus(n)?;
                if v.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: v.dim() });
                }
                let c = &v.coords()[i];
                if !places.is_s_integer(c) {
                    return Err(Error::NotSInteger(c.to_string()));
                }
                let dv = residue_mod(&(c * BigRational::from_integer(den.clone())), n);
                crt(&[(BigInt::zero(), base_mod.clone()), (BigInt::from(dv), BigInt::from(n))])
            }
            _ => (BigInt::zero(), base_mod.clone()),
        };
        coords.push(progression_in(&(-&h), &h, &residue, &modulus)?);
    }
    Ok(BoxEnumeration { denominator: den, exponents, coords })
}

/// The progression of integers in `[lo, hi]` congruent to `residue` mod `modulus`.
pub fn progression_in(lo: &BigInt, hi: &BigInt, residue: &BigInt, modulus: &BigInt) -> Result<Progression> {
    let count = count_in_ap_int(lo, hi, residue, modulus);
    let count = count.to_u64().ok_or(Error::BudgetExceeded { limit: u64::MAX })?;
    let first = lo + (residue - lo).mod_floor(modulus);
    Ok(Progression { first, step: modulus.clone(), count })
}

/// `#{b in Z : lo <= b <= hi, b == residue (mod modulus)}` in closed form.
pub fn count_in_ap(lo: &BigRational, hi: &BigRational, residue: &BigInt, modulus: &BigInt) -> BigInt {
    count_in_ap_int(&lo.ceil().to_integer(), &hi.floor().to_integer(), residue, modulus)
}

pub fn count_in_ap_int(lo: &BigInt, hi: &BigInt, residue: &BigInt, modulus: &BigInt) -> BigInt {
    assert!(modulus.is_positive(), "modulus must be positive");
    if lo > hi {
        return BigInt::zero();
    }
    (hi - residue).div_floor(modulus) - (lo - BigInt::one() - residue).div_floor(modulus)
}

/// Merge congruences with pairwise coprime moduli into `(residue, modulus)`.
pub fn crt(parts: &[(BigInt, BigInt)]) -> (BigInt, BigInt) {
    let mut res = BigInt::zero();
    let mut modulus = BigInt::one();
    for (r, m) in parts {
        if m.is_one() {
            continue;
        }
        let g = modulus.extended_gcd(m);
        assert!(g.gcd.is_one(), "CRT moduli must be pairwise coprime");
        // res + modulus * t == r (mod m)  =>  t == (r - res) * modulus^{-1} (mod m)
        let t = ((r - &res) * &g.x).mod_floor(m);
        res += &modulus * t;
        modulus *= m;
        res = res.mod_floor(&modulus);
    }
    (res, modulus)
}

/// Parse `"7"`, `"-3/4"`, or a terminating decimal such as `"2.5"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let err = || Error::Parse(format!("not a rational number: {s:?}"));
    if s.is_empty() || s.len() > 4096 {
        return Err(err());
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| err())?;
        let d: BigInt = d.trim().parse().map_err(|_| err())?;
        if d.is_zero() {
            return Err(err());
        }
        return Ok(BigRational::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let neg = int.starts_with('-');
        let int_digits = int.trim_start_matches(['-', '+']);
        if !int_digits.bytes().all(|b| b.is_ascii_digit()) || int.len() - int_digits.len() > 1 {
            return Err(err());
        }
        let digits: BigInt = format!("{int_digits}{frac}").parse().map_err(|_| err())?;
        let scale = num_traits::pow(BigInt::from(10), frac.len());
        let v = BigRational::new(digits, scale);
        return Ok(if neg { -v } else { v });
    }
    let n: BigInt = s.parse().map_err(|_| err())?;
    Ok(BigRational::from_integer(n))
}

/// Approximate a rational by the nearest `f64`.
pub fn to_f64(x: &BigRational) -> f64 {
    if let (Some(n), Some(d)) = (x.numer().to_f64(), x.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            return n / d;
        }
    }
    // Large operands: shift both down to keep the ratio representable.
    let nb = x.numer().bits() as i64;
    let db = x.denom().bits() as i64;
    let shift_n = (nb - 60).max(0) as u64;
    let shift_d = (db - 60).max(0) as u64;
    let n = (x.numer() >> shift_n).to_f64().unwrap_or(0.0);
    let d = (x.denom() >> shift_d).to_f64().unwrap_or(1.0);
    n / d * 2f64.powi((shift_n as i64 - shift_d as i64) as i32)
}

/// Closest rational to a finite `f64` (exact binary expansion).
pub fn from_f64(x: f64) -> Option<BigRational> {
    BigRational::from_float(x)
}

pub fn cmp_rational_f64(x: &BigRational, y: f64) -> Option<Ordering> {
    from_f64(y).map(|y| x.cmp(&y))
}

/// Serde adapters writing rationals as `"num/den"` strings.
pub mod ratio_str {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &BigRational, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&x.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BigRational, D::Error> {
        let raw = RawRational::deserialize(d)?;
        raw.into_rational().map_err(serde::de::Error::custom)
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    pub(crate) enum RawRational {
        Str(String),
        Int(i64),
    }

    impl RawRational {
        pub(crate) fn into_rational(self) -> Result<BigRational> {
            match self {
                RawRational::Str(s) => parse_rational(&s),
                RawRational::Int(i) => Ok(BigRational::from_integer(i.into())),
            }
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[BigRational], s: S) -> std::result::Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|x| x.to_string()))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<BigRational>, D::Error> {
            let raw = Vec::<RawRational>::deserialize(d)?;
            raw.into_iter()
                .map(|r| r.into_rational().map_err(serde::de::Error::custom))
                .collect()
        }
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<BigRational>, s: S) -> std::result::Result<S::Ok, S::Error> {
            match v {
                Some(x) => s.serialize_some(&x.to_string()),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<BigRational>, D::Error> {
            let raw = Option::<RawRational>::deserialize(d)?;
            raw.map(|r| r.into_rational().map_err(serde::de::Error::custom)).transpose()
        }
    }
}

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

pub fn int(n: i64) -> BigRational {
    BigRational::from_integer(n.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s2() -> PlaceSet {
        PlaceSet::new([2]).unwrap()
    }

    #[test]
    fn place_set_validation() {
        assert!(PlaceSet::new([2, 3, 5]).is_ok());
        assert!(PlaceSet::new([2, 2]).is_err());
        assert!(PlaceSet::new([4]).is_err());
        assert_eq!(PlaceSet::new([5, 2]).unwrap().primes(), &[2, 5]);
        assert!(PlaceSet::real_only().primes().is_empty());
    }

    #[test]
    fn valuation_examples() {
        assert_eq!(padic_valuation(&int(12), 2), Valuation::Finite(2));
        assert_eq!(padic_valuation(&int(0), 5), Valuation::Infinite);
        assert_eq!(padic_valuation(&rat(9, 20), 2), Valuation::Finite(-2));
        assert_eq!(padic_valuation(&rat(-50, 3), 5), Valuation::Finite(2));
    }

    #[test]
    fn norm_examples() {
        let x = SVector::from_integers(&[3, -5]).unwrap();
        assert_eq!(norm_at(&x, Place::Infinite), int(5));
        let y = SVector::new(vec![rat(1, 2), int(4)]).unwrap();
        assert_eq!(norm_at(&y, Place::Finite(2)), int(2));
        let z = SVector::zeros(2);
        assert_eq!(norm_at(&z, Place::Finite(3)), int(0));
        assert_eq!(norm_at(&z, Place::Infinite), int(0));
    }

    #[test]
    fn congruence_examples() {
        let s = s2();
        let v = |x: BigRational| SVector::new(vec![x]).unwrap();
        assert!(congruent_mod(&v(int(7)), &v(int(2)), 5, &s).unwrap());
        assert!(congruent_mod(&v(rat(3, 2)), &v(rat(3, 2) + rat(5, 4)), 5, &s).unwrap());
        assert!(!congruent_mod(&v(int(1)), &v(int(0)), 3, &s).unwrap());
        assert!(matches!(congruent_mod(&v(int(1)), &v(int(0)), 4, &s), Err(Error::InvalidModulus(4))));
        assert!(matches!(congruent_mod(&v(rat(1, 3)), &v(int(0)), 5, &s), Err(Error::NotSInteger(_))));
    }

    #[test]
    fn count_in_ap_examples() {
        let b = |x: i64| BigInt::from(x);
        assert_eq!(count_in_ap(&int(0), &int(10), &b(1), &b(3)), b(4));
        assert_eq!(count_in_ap(&int(5), &int(4), &b(0), &b(1)), b(0));
        assert_eq!(count_in_ap(&int(-7), &int(7), &b(2), &b(5)), b(3));
        assert_eq!(count_in_ap(&rat(-1, 2), &rat(7, 3), &b(0), &b(1)), b(3));
    }

    #[test]
    fn enumerate_box_examples() {
        let s = s2();
        // n = 1, U_inf = 2, U_2 = 2
        let bounds = BoxBounds::new(int(2), [(2, 1)].into()).unwrap();
        let pts: Vec<_> = enumerate_box(1, &bounds, None, &s).unwrap().points().collect();
        let expected: Vec<_> = (-4..=4).map(|a| SVector::new(vec![rat(a, 2)]).unwrap()).collect();
        assert_eq!(pts, expected);

        let bounds = BoxBounds::new(rat(1, 2), [(2, 0)].into()).unwrap();
        let pts: Vec<_> = enumerate_box(1, &bounds, None, &s).unwrap().points().collect();
        assert_eq!(pts, vec![SVector::zeros(1)]);

        // n = 2 with congruence mod 2 is rejected for S = {inf, 2}; use S = {inf, 3} instead
        let s3 = PlaceSet::new([3]).unwrap();
        let v = SVector::from_integers(&[1, 0]).unwrap();
        let bounds = BoxBounds::new(int(1), [(3, 0)].into()).unwrap();
        let pts: Vec<_> = enumerate_box(2, &bounds, Some((2, &v)), &s3).unwrap().points().collect();
        assert_eq!(
            pts,
            vec![SVector::from_integers(&[-1, 0]).unwrap(), SVector::from_integers(&[1, 0]).unwrap()]
        );
    }

    #[test]
    fn enumerate_box_negative_exponent() {
        let s = s2();
        // ||q||_2 <= 1/4 forces 4 | q
        let bounds = BoxBounds::new(int(9), [(2, -2)].into()).unwrap();
        let pts: Vec<_> = enumerate_box(1, &bounds, None, &s).unwrap().points().collect();
        let expected: Vec<_> = [-8, -4, 0, 4, 8].iter().map(|&a| SVector::from_integers(&[a]).unwrap()).collect();
        assert_eq!(pts, expected);
    }

    #[test]
    fn enumerate_box_power_bound() {
        // |q_i|^2 <= 5 with integer q: |q_i| <= 2
        let bounds = BoxBounds::from_profile(&NormProfile::new(int(5), BTreeMap::new()).unwrap(), 2).unwrap();
        let e = enumerate_box(2, &bounds, None, &PlaceSet::real_only()).unwrap();
        assert_eq!(e.len(), 25);
    }

    #[test]
    fn profile_rejects_non_multiple() {
        let p = NormProfile::new(int(4), [(2, 3)].into()).unwrap();
        assert!(p.check_multiple_of(2).is_err());
        assert!(p.check_multiple_of(3).is_ok());
        assert!(NormProfile::new(int(-1), BTreeMap::new()).is_err());
    }

    #[test]
    fn parse_rational_forms() {
        assert_eq!(parse_rational("7").unwrap(), int(7));
        assert_eq!(parse_rational("-3/4").unwrap(), rat(-3, 4));
        assert_eq!(parse_rational("2.5").unwrap(), rat(5, 2));
        assert_eq!(parse_rational("-0.125").unwrap(), rat(-1, 8));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("1.").is_err());
        assert!(parse_rational("--1.5").is_err());
    }

    #[test]
    fn crt_merges() {
        let b = |x: i64| BigInt::from(x);
        let (r, m) = crt(&[(b(2), b(3)), (b(3), b(5)), (b(1), b(4))]);
        assert_eq!(m, b(60));
        assert_eq!(r.mod_floor(&b(3)), b(2));
        assert_eq!(r.mod_floor(&b(5)), b(3));
        assert_eq!(r.mod_floor(&b(4)), b(1));
    }

    fn small_rational() -> impl Strategy<Value = BigRational> {
        (-2000i64..2000, 1i64..300).prop_map(|(n, d)| rat(n, d))
    }

    fn small_prime() -> impl Strategy<Value = u64> {
        prop::sample::select(vec![2u64, 3, 5, 7])
    }

    /// Direct-definition filter for `enumerate_box`.
    fn brute_box(bounds: &BoxBounds, den: i64, h: i64, n: usize, places: &PlaceSet, cong: Option<(u64, &SVector)>) -> Vec<SVector> {
        let mut out = Vec::new();
        let mut idx = vec![-h * den; n];
        loop {
            let q = SVector::new(idx.iter().map(|&a| rat(a, den)).collect()).unwrap();
            let in_cong = match cong {
                Some((m, v)) => congruent_mod(&q, v, m, places).unwrap(),
                None => true,
            };
            if bounds.contains(&q) && in_cong {
                out.push(q);
            }
            let mut pos = n;
            loop {
                if pos == 0 {
                    return out;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] <= h * den {
                    break;
                }
                idx[pos] = -h * den;
            }
        }
    }

    proptest! {
        #[test]
        fn valuation_is_additive(x in small_rational(), y in small_rational(), p in small_prime()) {
            let vx = padic_valuation(&x, p);
            let vy = padic_valuation(&y, p);
            let vxy = padic_valuation(&(&x * &y), p);
            match (vx, vy) {
                (Valuation::Finite(a), Valuation::Finite(b)) => prop_assert_eq!(vxy, Valuation::Finite(a + b)),
                _ => prop_assert_eq!(vxy, Valuation::Infinite),
            }
            let vs = padic_valuation(&(&x + &y), p);
            prop_assert!(vs >= vx.min(vy));
            if vx != vy {
                prop_assert_eq!(vs, vx.min(vy));
            }
        }

        #[test]
        fn ultrametric(a in small_rational(), b in small_rational(), c in small_rational(), d in small_rational(), p in small_prime()) {
            let x = SVector::new(vec![a, b]).unwrap();
            let y = SVector::new(vec![c, d]).unwrap();
            let s = x.checked_add(&y).unwrap();
            let bound = norm_at(&x, Place::Finite(p)).max(norm_at(&y, Place::Finite(p)));
            prop_assert!(norm_at(&s, Place::Finite(p)) <= bound);
        }

        #[test]
        fn count_in_ap_matches_loop(lo in -60i64..60, hi in -60i64..60, r in -20i64..20, m in 1i64..13) {
            let expected = (lo..=hi).filter(|b| (b - r).rem_euclid(m) == 0).count();
            let got = count_in_ap_int(&lo.into(), &hi.into(), &r.into(), &m.into());
            prop_assert_eq!(got, BigInt::from(expected));
        }

        #[test]
        fn congruence_is_equivalence_and_additive(
            a in -40i64..40, b in -40i64..40, c in -40i64..40, e in 0u32..3,
            n in prop::sample::select(vec![1u64, 3, 5, 7]),
        ) {
            let s = PlaceSet::new([2]).unwrap();
            let d = 1i64 << e;
            let x = SVector::new(vec![rat(a, d)]).unwrap();
            let y = SVector::new(vec![rat(b, d)]).unwrap();
            let z = SVector::new(vec![rat(c, d)]).unwrap();
            prop_assert!(congruent_mod(&x, &x, n, &s).unwrap());
            prop_assert_eq!(congruent_mod(&x, &y, n, &s).unwrap(), congruent_mod(&y, &x, n, &s).unwrap());
            if congruent_mod(&x, &y, n, &s).unwrap() && congruent_mod(&y, &z, n, &s).unwrap() {
                prop_assert!(congruent_mod(&x, &z, n, &s).unwrap());
            }
            if congruent_mod(&x, &y, n, &s).unwrap() {
                let xz = x.checked_add(&z).unwrap();
                let yz = y.checked_add(&z).unwrap();
                prop_assert!(congruent_mod(&xz, &yz, n, &s).unwrap());
            }
        }

        #[test]
        fn enumerate_box_matches_filter(
            u_num in 0i64..7, u_den in 1i64..3, k2 in -2i64..3, k3 in -1i64..2, n in 1usize..3,
            cong in prop::option::of((prop::sample::select(vec![5u64, 7]), -3i64..4, -3i64..4)),
        ) {
            let places = PlaceSet::new([2, 3]).unwrap();
            let bounds = BoxBounds::new(rat(u_num, u_den), [(2, k2), (3, k3)].into()).unwrap();
            let v = cong.map(|(_, a, b)| SVector::from_integers(&[a, b][..n]).unwrap());
            let c = cong.map(|(m, _, _)| m).zip(v.as_ref());
            let got: Vec<_> = enumerate_box(n, &bounds, c, &places).unwrap().points().collect();
            let den = 2i64.pow(k2.max(0) as u32) * 3i64.pow(k3.max(0) as u32);
            let h = u_num / u_den + 1;
            let expected = brute_box(&bounds, den, h, n, &places, c);
            prop_assert_eq!(got, expected);
        }
    }
}
