//! The region `E_psi(T)` and its volume.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::approx::{ApproxCollection, Quantity};
use crate::error::{Error, Result};
use crate::sampler::stream;
use crate::sring::{norm_exponent, prime_power, sup_norm, to_f64, NormProfile, PlaceSet};

/// `E_psi(T) = {(x, y) : ||x||_p^m <= psi_p(||y||_p^n), ||y||_p^n <= T_p for all p}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    psi: ApproxCollection,
    profile: NormProfile,
}

impl Region {
    pub fn new(psi: ApproxCollection, profile: NormProfile) -> Result<Self> {
        profile.check_places(&psi.places())?;
        Ok(Self { psi, profile })
    }

    pub fn psi(&self) -> &ApproxCollection {
        &self.psi
    }

    pub fn profile(&self) -> &NormProfile {
        &self.profile
    }

    pub fn dims(&self) -> (u32, u32) {
        self.psi.dims()
    }

    pub fn places(&self) -> PlaceSet {
        self.psi.places()
    }

    pub fn with_profile(&self, profile: NormProfile) -> Result<Self> {
        Self::new(self.psi.clone(), profile)
    }

    /// `t_p` with `||y||_p^n <= T_p  <=>  ||y||_p <= p^(t_p)`.
    pub fn finite_block(&self, p: u64) -> i64 {
        self.profile.exponent(p).div_euclid(self.psi.dims().1 as i64)
    }
}

/// `V = 2^m * real_factor * prod_p finite_factor_p`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeResult {
    /// `2^n int_0^(T_inf) psi_inf`.
    #[serde(serialize_with = "ser_quantity")]
    pub real_factor: Quantity,
    #[serde(serialize_with = "ser_factors")]
    pub finite_factors: BTreeMap<u64, BigRational>,
    #[serde(serialize_with = "ser_quantity")]
    pub total: Quantity,
    pub m: u32,
}

fn ser_quantity<S: serde::Serializer>(q: &Quantity, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(None)?;
    if let Some(x) = q.exact() {
        map.serialize_entry("exact", &x.to_string())?;
    }
    map.serialize_entry("value", &q.value())?;
    map.serialize_entry("error", &q.error())?;
    map.end()
}

fn ser_factors<S: serde::Serializer>(f: &BTreeMap<u64, BigRational>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_map(f.iter().map(|(p, v)| (p.to_string(), v.to_string())))
}

impl VolumeResult {
    /// Recompute `total` from the factors.
    pub fn recomputed_total(&self) -> Quantity {
        let two_m = BigRational::from_integer(BigInt::from(2u32).pow(self.m));
        self.finite_factors
            .values()
            .fold(self.real_factor.scale(&two_m), |acc, f| acc.scale(f))
    }

    pub fn is_consistent(&self) -> bool {
        let r = self.recomputed_total();
        match (&r, &self.total) {
            (Quantity::Exact(a), Quantity::Exact(b)) => a == b,
            _ => (r.value() - self.total.value()).abs() <= r.error() + self.total.error() + 1e-12 * r.value().abs(),
        }
    }
}

/// `vol(E_psi(T))` from the product decomposition over places.
pub fn volume_exact(region: &Region) -> VolumeResult {
    let (m, n) = region.dims();
    let integral = region.psi.real().integral_to(region.profile.real());
    let real_factor = integral.scale(&BigRational::from_integer(BigInt::from(2u32).pow(n)));
    let finite_factors: BTreeMap<u64, BigRational> = region
        .psi
        .finite_functions()
        .iter()
        .map(|(&p, f)| (p, f.factor_to(region.finite_block(p))))
        .collect();
    let mut out = VolumeResult { total: Quantity::Exact(BigRational::zero()), real_factor, finite_factors, m };
    out.total = out.recomputed_total();
    out
}

/// A point of `Q_S^m x Q_S^n`, given by rational coordinates at every place.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdelicPoint {
    pub real: (Vec<BigRational>, Vec<BigRational>),
    pub finite: BTreeMap<u64, (Vec<BigRational>, Vec<BigRational>)>,
}

impl AdelicPoint {
    /// The diagonal image of a rational point.
    pub fn diagonal(x: Vec<BigRational>, y: Vec<BigRational>, places: &PlaceSet) -> Self {
        let finite = places.primes().iter().map(|&p| (p, (x.clone(), y.clone()))).collect();
        Self { real: (x, y), finite }
    }
}

/// Membership in `E_psi(T)`, exact at every place.
pub fn contains(region: &Region, point: &AdelicPoint) -> Result<bool> {
    let (m, n) = region.dims();
    let check_dims = |x: &[BigRational], y: &[BigRational]| {
        if x.len() != m as usize {
            return Err(Error::DimensionMismatch { expected: m as usize, found: x.len() });
        }
        if y.len() != n as usize {
            return Err(Error::DimensionMismatch { expected: n as usize, found: y.len() });
        }
        Ok(())
    };
    let (x, y) = &point.real;
    check_dims(x, y)?;
    let yn = num_traits::pow(sup_norm(y), n as usize);
    if yn > *region.profile.real() {
        return Ok(false);
    }
    let xm = num_traits::pow(sup_norm(x), m as usize);
    let real_ok = region.psi.real().evaluate(&yn).bounds_above(&xm).ok_or_else(|| {
        Error::Undecided(format!("||x||^m = {xm} against psi({yn})"))
    })?;
    if !real_ok {
        return Ok(false);
    }
    for (&p, f) in region.psi.finite_functions() {
        let (x, y) = point
            .finite
            .get(&p)
            .ok_or_else(|| Error::InvalidProfile(format!("point has no coordinates at {p}")))?;
        check_dims(x, y)?;
        let ky = norm_exponent(y, p);
        if ky.is_some_and(|k| k > region.finite_block(p)) {
            return Ok(false);
        }
        let j = f.threshold_for_norm(ky) as i64;
        if norm_exponent(x, p).is_some_and(|kx| kx > -j) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// A Monte Carlo volume estimate with its binomial standard error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub hits: u64,
    pub samples: u64,
    pub box_volume: f64,
}

const CHUNK: u64 = 4096;

/// Number of leading zero digits of a uniform `Z_p` element, capped at `cap`.
pub(crate) fn sample_valuation<R: Rng>(rng: &mut R, p: u64, cap: u32) -> u32 {
    for v in 0..cap {
        if rng.gen_range(0..p) != 0 {
            return v;
        }
    }
    cap
}

/// Estimate `vol(E_psi(T))` by uniform sampling of the bounding box
/// `{||x||_p <= sup psi_p^(1/m)} x {||y||_p^n <= T_p}`.
pub fn volume_monte_carlo(region: &Region, samples: u64, seed: u64) -> Result<VolumeEstimate> {
    if samples == 0 {
        return Err(Error::Config("at least one sample is required".into()));
    }
    let (m, n) = region.dims();
    if *region.profile.real() < BigRational::one() {
        return Err(Error::InvalidProfile(format!("Monte Carlo needs T_inf >= 1, got {}", region.profile.real())));
    }
    let psi_inf = region.psi.real();
    let r_x = to_f64(&psi_inf.sup()).powf(1.0 / m as f64);
    let t_inf = to_f64(region.profile.real());
    let r_y = t_inf.powf(1.0 / n as f64);
    if r_x <= 0.0 || r_y <= 0.0 {
        return Err(Error::DegenerateBox);
    }
    let mut box_volume = (2.0 * r_x).powi(m as i32) * (2.0 * r_y).powi(n as i32);
    let blocks: Vec<(u64, i64)> = region.psi.primes().map(|p| (p, region.finite_block(p))).collect();
    for &(p, t) in &blocks {
        box_volume *= to_f64(&prime_power(p, t * n as i64));
    }

    let chunks = samples.div_ceil(CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, &[0x766f_6c75_6d65, c]);
            let len = CHUNK.min(samples - c * CHUNK);
            let mut hits = 0u64;
            for _ in 0..len {
                let mut ymax = 0f64;
                for _ in 0..n {
                    ymax = ymax.max(rng.gen_range(-r_y..=r_y).abs());
                }
                let mut xmax = 0f64;
                for _ in 0..m {
                    xmax = xmax.max(rng.gen_range(-r_x..=r_x).abs());
                }
                let yn = ymax.powi(n as i32);
                let real_ok = yn <= t_inf && xmax.powi(m as i32) <= psi_inf.evaluate_f64(yn);
                let mut ok = real_ok;
                for &(p, t) in &blocks {
                    let f = region.psi.finite(p).expect("block keys come from psi");
                    // y = p^(-t) u with u uniform in Z_p^n; only valuations up to t matter
                    let cap = t.max(0) as u32;
                    let vu = (0..n).map(|_| sample_valuation(&mut rng, p, cap)).min().unwrap_or(cap);
                    let ky = t - vu as i64;
                    let j = f.exponent(ky);
                    let vx = (0..m).map(|_| sample_valuation(&mut rng, p, j)).min().unwrap_or(j);
                    ok &= vx >= j;
                }
                if ok {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let frac = hits as f64 / samples as f64;
    Ok(VolumeEstimate {
        estimate: frac * box_volume,
        std_error: box_volume * (frac * (1.0 - frac) / samples as f64).sqrt(),
        hits,
        samples,
        box_volume,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{FiniteApproxFunction, FiniteTail, RealApproxFunction, Sign};
    use crate::sring::{int, rat};
    use proptest::prelude::*;

    fn s2() -> PlaceSet {
        PlaceSet::new([2]).unwrap()
    }

    fn region16() -> Region {
        let psi = ApproxCollection::constant_one(&s2(), 1, 1).unwrap();
        Region::new(psi, NormProfile::new(int(2), [(2, 1)].into()).unwrap()).unwrap()
    }

    #[test]
    fn exact_examples() {
        let v = volume_exact(&region16());
        assert_eq!(v.real_factor, Quantity::Exact(int(4)));
        assert_eq!(v.finite_factors[&2], int(2));
        assert_eq!(v.total, Quantity::Exact(int(16)));
        assert!(v.is_consistent());

        for (m, n) in [(1, 1), (2, 1), (1, 3)] {
            let s = PlaceSet::new([2, 5]).unwrap();
            let psi = ApproxCollection::constant_one(&s, m, n).unwrap();
            let r = Region::new(psi, NormProfile::uniform(&s, int(1), 0).unwrap()).unwrap();
            let v = volume_exact(&r);
            assert!(v.finite_factors.values().all(One::is_one));
            assert_eq!(v.total, Quantity::Exact(int(1 << (m + n))));
        }
    }

    #[test]
    fn log_example() {
        let psi = ApproxCollection::new(
            RealApproxFunction::power_law(int(1), int(1)),
            BTreeMap::new(),
            &PlaceSet::real_only(),
            1,
            1,
        )
        .unwrap();
        let e = crate::sring::from_f64(std::f64::consts::E).unwrap();
        let v = volume_exact(&Region::new(psi, NormProfile::new(e, BTreeMap::new()).unwrap()).unwrap());
        assert!((v.real_factor.value() - 4.0).abs() < 1e-9);
        assert!(v.real_factor.error() < 1e-9);
    }

    #[test]
    fn contains_examples() {
        let r = region16();
        let s = s2();
        let pt = |x: BigRational, y: BigRational| AdelicPoint::diagonal(vec![x], vec![y], &s);
        assert!(contains(&r, &pt(int(0), int(0))).unwrap());
        assert!(!contains(&r, &pt(rat(1001, 1000), int(0))).unwrap());
        assert!(!contains(&r, &pt(rat(1, 2), int(0))).unwrap());
        assert!(contains(&r, &pt(int(1), rat(3, 2))).unwrap());
        assert!(matches!(
            contains(&r, &AdelicPoint::diagonal(vec![], vec![int(0)], &s)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn monte_carlo_examples() {
        let s = s2();
        let unit = Region::new(
            ApproxCollection::constant_one(&s, 2, 1).unwrap(),
            NormProfile::uniform(&s, int(1), 0).unwrap(),
        )
        .unwrap();
        let est = volume_monte_carlo(&unit, 1000, 1).unwrap();
        assert_eq!(est.estimate, 8.0);
        assert_eq!(est.std_error, 0.0);

        let est = volume_monte_carlo(&region16(), 100_000, 7).unwrap();
        assert!((est.estimate - 16.0).abs() <= 3.0 * est.std_error, "{est:?}");

        let small = region16().with_profile(NormProfile::new(rat(1, 2), [(2, 1)].into()).unwrap()).unwrap();
        assert!(matches!(volume_monte_carlo(&small, 10, 1), Err(Error::InvalidProfile(_))));
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let a = volume_monte_carlo(&region16(), 10_000, 3).unwrap();
        let b = volume_monte_carlo(&region16(), 10_000, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inflation_ratio_is_square_for_all_dims() {
        let s = PlaceSet::new([3]).unwrap();
        for (m, n) in [(1, 1), (2, 1), (1, 2), (3, 1)] {
            let fin = [(3, FiniteApproxFunction::new(3, m, n, vec![0, 1], FiniteTail::Constant).unwrap())].into();
            let psi = ApproxCollection::new(RealApproxFunction::power_law(int(8), int(3)), fin, &s, m, n).unwrap();
            let t = NormProfile::new(int(7), [(3, 2 * n as i64)].into()).unwrap();
            let eps = rat(1, 4);
            let f = int(1) + &eps;
            let base = volume_exact(&Region::new(psi.clone(), t.clone()).unwrap());
            let up = volume_exact(&Region::new(psi.inflate(&eps, Sign::Plus).unwrap(), t.with_real(&f * t.real()).unwrap()).unwrap());
            let down = volume_exact(&Region::new(psi.inflate(&eps, Sign::Minus).unwrap(), t.with_real(t.real() / &f).unwrap()).unwrap());
            let (b, u, d) = (base.total.exact().unwrap(), up.total.exact().unwrap(), down.total.exact().unwrap());
            assert_eq!(u / b, &f * &f);
            assert_eq!(d / b, (&f * &f).recip());
        }
    }

    #[test]
    fn finite_factor_is_ball_volume() {
        let s = PlaceSet::new([3]).unwrap();
        let psi = ApproxCollection::constant_one(&s, 1, 2).unwrap();
        let r = Region::new(psi, NormProfile::new(int(1), [(3, 4)].into()).unwrap()).unwrap();
        let v = volume_exact(&r);
        // ||y||_3 <= 9 in Q_3^2: volume 81
        assert_eq!(v.finite_factors[&3], int(81));
    }

    fn small_region() -> impl Strategy<Value = Region> {
        (
            1u32..3,
            1u32..3,
            prop_oneof![
                Just(RealApproxFunction::ConstantOne),
                (1i64..4, 1i64..4).prop_map(|(c, a)| RealApproxFunction::power_law(int(c), int(a))),
            ],
            proptest::collection::vec(0u32..3, 0..3),
            1i64..40,
            0i64..4,
        )
            .prop_map(|(m, n, real, mut z, t, e)| {
                z.sort_unstable();
                let s = s2();
                let fin = [(2, FiniteApproxFunction::new(2, m, n, z, FiniteTail::Constant).unwrap())].into();
                let psi = ApproxCollection::new(real, fin, &s, m, n).unwrap();
                Region::new(psi, NormProfile::new(rat(t, 4).max(int(1)), [(2, e)].into()).unwrap()).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn factorization_is_consistent(r in small_region()) {
            prop_assert!(volume_exact(&r).is_consistent());
        }

        #[test]
        fn monotone_in_profile(r in small_region(), dt in 0i64..10, de in 0i64..3) {
            let bigger = NormProfile::new(r.profile().real() + int(dt), [(2, r.profile().exponent(2) + de)].into()).unwrap();
            let a = volume_exact(&r).total.value();
            let b = volume_exact(&r.with_profile(bigger).unwrap()).total.value();
            prop_assert!(b >= a * (1.0 - 1e-12));
        }

        #[test]
        fn monotone_in_psi(r in small_region(), eps in 1i64..5) {
            let up = r.psi().inflate(&rat(eps, 3), Sign::Plus).unwrap();
            let a = volume_exact(&r).total.value();
            let b = volume_exact(&Region::new(up, r.profile().clone()).unwrap()).total.value();
            prop_assert!(b >= a * (1.0 - 1e-12));
        }
    }
}
