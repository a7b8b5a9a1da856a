//! Randomized property suites, run by the `verify` campaign.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::approx::{Quantity, Sign};
use crate::counting::{
    count_affine_bruteforce, count_solutions, count_solutions_bruteforce, dirichlet_solve, discrepancy_points,
    lattice_points_in, profile_count_bound, required_precision, rescale_congruence, verify_dirichlet,
    vol_xq_monte_carlo, AffineLatticeSpec, Congruence, CountRequest, DirichletConstants, DEFAULT_BUDGET,
};
use crate::error::Result;
use crate::sampler::{deepen, gen, sample_matrix, stream, SamplerConfig};
use crate::sring::{prime_power, NormProfile, PlaceSet, SVector};
use crate::volume::{volume_exact, volume_monte_carlo, Region};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: u64,
    pub failures: u64,
    pub passed: bool,
    /// The first few failure descriptions.
    pub notes: Vec<String>,
}

const MAX_NOTES: usize = 5;

/// Run `case` `cases` times; `Ok(None)` is a pass, `Ok(Some(msg))` a failure.
fn suite(
    name: &str,
    seed: u64,
    tag: u64,
    cases: u64,
    mut case: impl FnMut(&mut ChaCha8Rng) -> Result<Option<String>>,
) -> SuiteResult {
    let mut rng = stream(seed, &[0x7665_7269, tag]);
    let mut failures = 0;
    let mut notes = Vec::new();
    for i in 0..cases {
        let msg = match case(&mut rng) {
            Ok(None) => continue,
            Ok(Some(m)) => m,
            Err(e) => format!("error: {e}"),
        };
        failures += 1;
        if notes.len() < MAX_NOTES {
            notes.push(format!("case {i}: {msg}"));
        }
    }
    SuiteResult { name: name.into(), cases, failures, passed: failures == 0, notes }
}

fn random_dims<R: Rng>(rng: &mut R) -> (u32, u32) {
    *[(1, 1), (2, 1), (1, 2)].choose(rng).expect("nonempty")
}

fn random_modulus<R: Rng>(rng: &mut R, places: &PlaceSet) -> u64 {
    *gen::admissible_moduli(places, &[1, 2, 3, 5]).choose(rng).expect("1 is admissible")
}

pub fn oracle_equivalence(seed: u64, cases: u64) -> SuiteResult {
    suite("oracle_equivalence", seed, 1, cases, |rng| {
        let places = gen::place_set(rng);
        let (m, n) = random_dims(rng);
        let modulus = random_modulus(rng, &places);
        let req = gen::small_request(rng, &places, m, n, modulus);
        let fast = count_solutions(&req)?;
        let brute = count_solutions_bruteforce(&req, DEFAULT_BUDGET)?;
        Ok((fast != brute).then(|| format!("counter {fast} != brute force {brute}")))
    })
}

/// All `v` in `{0..N-1}^d`.
pub fn residue_classes(modulus: u64, d: usize) -> Vec<Vec<BigRational>> {
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..modulus).map(move |r| {
                    let mut w = v.clone();
                    w.push(BigRational::from_integer(BigInt::from(r)));
                    w
                })
            })
            .collect();
    }
    out
}

pub fn residue_partition(seed: u64, cases: u64) -> SuiteResult {
    suite("residue_partition", seed, 2, cases, |rng| {
        let places = gen::place_set(rng);
        let (m, n) = random_dims(rng);
        let moduli = gen::admissible_moduli(&places, &[2, 3, 5]);
        let modulus = moduli[rng.gen_range(0..moduli.len())];
        let req = gen::small_request(rng, &places, m, n, 1);
        let whole = count_solutions(&req)?;
        let mut total = 0u64;
        for v in residue_classes(modulus, (m + n) as usize) {
            let c = Congruence::new(modulus, SVector::new(v)?, &places)?;
            total += count_solutions(&req.with_congruence(c)?)?;
        }
        Ok((total != whole).then(|| format!("sum over classes mod {modulus} is {total}, N = 1 count is {whole}")))
    })
}

pub fn rescaling_identity(seed: u64, cases: u64) -> SuiteResult {
    suite("rescaling_identity", seed, 3, cases, |rng| {
        let places = gen::place_set(rng);
        let (m, n) = random_dims(rng);
        let moduli = gen::admissible_moduli(&places, &[2, 3, 5]);
        let modulus = moduli[rng.gen_range(0..moduli.len())];
        let req = gen::small_request(rng, &places, m, n, modulus);
        let lhs = count_solutions_bruteforce(&req, DEFAULT_BUDGET)?;
        let r = rescale_congruence(&req.psi, &req.profile, modulus, req.congruence.shift().coords())?;
        let rhs = count_affine_bruteforce(&req.matrix, &r.psi, &r.profile, &r.shift, DEFAULT_BUDGET)?;
        Ok((lhs != rhs).then(|| format!("congruence count {lhs} != rescaled count {rhs}")))
    })
}

pub fn volume_identity(seed: u64, cases: u64, samples: u64) -> SuiteResult {
    suite("volume_identity", seed, 4, cases, |rng| {
        let places = gen::place_set(rng);
        let (m, n) = random_dims(rng);
        let psi = gen::psi(rng, &places, m, n, 3);
        let profile = gen::profile(rng, &places, n, 4, 2);
        let region = Region::new(psi, profile)?;
        let exact = volume_exact(&region).total.value();
        let est = volume_monte_carlo(&region, samples, rng.gen())?;
        let tol = 4.0 * est.std_error + 1e-9 * exact;
        Ok(((est.estimate - exact).abs() > tol)
            .then(|| format!("exact {exact} vs estimate {} +- {}", est.estimate, est.std_error)))
    })
}

pub fn inflation_ratio(seed: u64, cases: u64) -> SuiteResult {
    suite("inflation_ratio", seed, 5, cases, |rng| {
        let places = gen::place_set(rng);
        let (m, n) = random_dims(rng);
        let psi = gen::psi(rng, &places, m, n, 3);
        let profile = gen::profile(rng, &places, n, 4, 2);
        let eps = BigRational::new(BigInt::from(1), BigInt::from(rng.gen_range(2..10)));
        let f = BigRational::one() + &eps;
        let base = volume_exact(&Region::new(psi.clone(), profile.clone())?).total;
        let up_region = Region::new(psi.inflate(&eps, Sign::Plus)?, profile.with_real(&f * profile.real())?)?;
        let up = volume_exact(&up_region).total;
        let want = &f * &f;
        let ok = match (&base, &up) {
            (Quantity::Exact(b), Quantity::Exact(u)) => u / b == want,
            _ => (up.value() / base.value() - crate::sring::to_f64(&want)).abs() < 1e-8,
        };
        Ok((!ok).then(|| format!("volume ratio {} != (1 + {eps})^2", up.value() / base.value())))
    })
}

fn dirichlet_case<R: Rng>(rng: &mut R, tight: bool) -> Result<Option<String>> {
    let places = gen::place_set(rng);
    let (m, n) = random_dims(rng);
    let a = sample_matrix(&SamplerConfig::new(rng.gen(), m, n, places.clone(), 12))?;
    let t_inf = BigRational::new(BigInt::from(rng.gen_range(4..=24)), BigInt::from(4));
    let fin = places
        .primes()
        .iter()
        .map(|&p| (p, if tight { m as i64 * rng.gen_range(0..=1) } else { rng.gen_range(0..=2) }))
        .collect();
    let t = NormProfile::new(t_inf, fin)?;
    let c = if tight { DirichletConstants::tight(&places) } else { DirichletConstants::standard(&places, m) };
    let sol = dirichlet_solve(&a, &t, &c)?;
    Ok((!verify_dirichlet(&a, &t, &c, &sol)?).then(|| "solution does not re-verify".to_string()))
}

pub fn dirichlet(seed: u64, cases: u64) -> SuiteResult {
    suite("dirichlet", seed, 6, cases, |rng| dirichlet_case(rng, false))
}

pub fn dirichlet_tight(seed: u64, cases: u64) -> SuiteResult {
    suite("dirichlet_tight", seed, 7, cases, |rng| dirichlet_case(rng, true))
}

/// A profile with `T_inf = k prod p^(l_p)` and random exponents.
pub fn random_count_profile<R: Rng>(rng: &mut R, places: &PlaceSet) -> NormProfile {
    let mut t = BigRational::from_integer(BigInt::from(*[1, 1, 5, 7].choose(rng).expect("nonempty")));
    let mut fin = std::collections::BTreeMap::new();
    for &p in places.primes() {
        t *= prime_power(p, rng.gen_range(-2..=2));
        fin.insert(p, rng.gen_range(-1..=2));
    }
    NormProfile::new(t, fin).expect("positive")
}

pub fn profile_bounds(seed: u64, cases: u64) -> SuiteResult {
    suite("profile_bounds", seed, 8, cases, |rng| {
        let places = gen::place_set(rng);
        let n = rng.gen_range(1..=2);
        let t = random_count_profile(rng, &places);
        let c = profile_count_bound(n, &t, &places, DEFAULT_BUDGET)?;
        if c.condition_holds {
            Ok((!c.within_bound()).then(|| format!("count {} exceeds bound {} at {t:?}", c.exact, c.bound)))
        } else {
            Ok((c.exact != 0).then(|| format!("condition fails yet count is {} at {t:?}", c.exact)))
        }
    })
}

pub fn xq_bound(seed: u64, cases: u64, samples: u64) -> SuiteResult {
    suite("xq_bound", seed, 9, cases, |rng| {
        let places = gen::place_set(rng);
        let (m, n) = random_dims(rng);
        let psi = gen::psi(rng, &places, m, n, 3);
        let mut q;
        loop {
            let mut coords = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let mut x = BigRational::from_integer(BigInt::from(rng.gen_range(-6..=6)));
                for &p in places.primes() {
                    x *= prime_power(p, rng.gen_range(-2..=1));
                }
                coords.push(x);
            }
            q = SVector::new(coords)?;
            if !q.is_zero() {
                break;
            }
        }
        let e = vol_xq_monte_carlo(&q, &psi, samples, rng.gen())?;
        Ok((e.estimate > e.bound + 4.0 * e.std_error + 1e-12)
            .then(|| format!("estimate {} +- {} above bound {} at q = {q}", e.estimate, e.std_error, e.bound)))
    })
}

/// Outcome of one nested triple: `(corrected form holds, printed form holds)`.
pub fn sandwich_case<R: Rng>(rng: &mut R) -> Result<(bool, bool)> {
    let places = gen::place_set(rng);
    let (m, n) = random_dims(rng);
    let psi = gen::psi(rng, &places, m, n, 2);
    let t1 = gen::profile(rng, &places, n, 2, 1);
    let grow = |rng: &mut R, t: &NormProfile| -> Result<NormProfile> {
        let real = t.real() + BigRational::new(BigInt::from(rng.gen_range(0..=4)), BigInt::from(4));
        let fin = t.exponents().iter().map(|(&p, &e)| (p, e + n as i64 * rng.gen_range(0..=1))).collect();
        NormProfile::new(real, fin)
    };
    let t = grow(rng, &t1)?;
    let t2 = grow(rng, &t)?;
    let a = gen::small_matrix(rng, &places, m as usize, n as usize, 6);
    let shift = (0..m + n)
        .map(|_| BigRational::new(BigInt::from(rng.gen_range(0..4)), BigInt::from(4)))
        .collect();
    let lattice = AffineLatticeSpec::unipotent(&a, shift)?;
    let e1 = Region::new(psi.clone(), t1)?;
    let e = Region::new(psi.clone(), t)?;
    let e2 = Region::new(psi, t2)?;
    let points = lattice_points_in(&lattice, &e2, DEFAULT_BUDGET)?;
    let (d1, d, d2) = (discrepancy_points(&points, &e1)?, discrepancy_points(&points, &e)?, discrepancy_points(&points, &e2)?);
    let (v1, v2) = (volume_exact(&e1).total, volume_exact(&e2).total);
    match (d1, d, d2, v1, v2) {
        (Quantity::Exact(d1), Quantity::Exact(d), Quantity::Exact(d2), Quantity::Exact(v1), Quantity::Exact(v2)) => {
            let gap = &v2 - &v1;
            let top = d1.max(d2);
            Ok((d <= &top + &gap, &d + &gap <= top))
        }
        (d1, d, d2, v1, v2) => {
            let slack = d1.error() + d.error() + d2.error() + v1.error() + v2.error();
            let gap = v2.value() - v1.value();
            let top = d1.value().max(d2.value());
            Ok((d.value() <= top + gap + slack, d.value() + gap <= top + slack))
        }
    }
}

pub fn discrepancy_sandwich(seed: u64, cases: u64) -> SuiteResult {
    let mut printed_violations = 0u64;
    let mut out = suite("discrepancy_sandwich", seed, 10, cases, |rng| {
        let (corrected, printed) = sandwich_case(rng)?;
        printed_violations += u64::from(!printed);
        Ok((!corrected).then(|| "D(E) > max(D(E1), D(E2)) + vol(E2) - vol(E1)".to_string()))
    });
    out.notes.push(format!("printed form D(E) + vol(E2 - E1) <= max(D(E1), D(E2)) fails in {printed_violations} of {cases}"));
    out
}

pub fn truncation_consistency(seed: u64, cases: u64) -> SuiteResult {
    suite("truncation_consistency", seed, 11, cases, |rng| {
        let places = loop {
            let s = gen::place_set(rng);
            if !s.primes().is_empty() {
                break s;
            }
        };
        let (m, n) = random_dims(rng);
        let psi = gen::psi(rng, &places, m, n, 2);
        let profile = gen::profile(rng, &places, n, 3, 1);
        let need = required_precision(&CountRequest::new(
            crate::counting::TruncatedMatrix::zero(m as usize, n as usize, &places, 1)?,
            psi.clone(),
            profile.clone(),
            Congruence::trivial((m + n) as usize),
        )?);
        let mut a = sample_matrix(&SamplerConfig::new(rng.gen(), m, n, places.clone(), 1))?;
        for (&p, &k) in &need {
            if k > 1 {
                a = deepen(&a, p, k)?;
            }
        }
        let req = CountRequest::new(a.clone(), psi, profile, Congruence::trivial((m + n) as usize))?;
        let base = count_solutions(&req)?;
        let mut deeper = a;
        for &p in places.primes() {
            deeper = deepen(&deeper, p, deeper.precision(p) + 3)?;
        }
        let after = count_solutions(&req.with_matrix(deeper)?)?;
        Ok((base != after).then(|| format!("count {base} at K, {after} at K + 3")))
    })
}

pub fn run_suites(seed: u64, cases: u64) -> Vec<SuiteResult> {
    let few = cases.div_ceil(5).max(1);
    vec![
        oracle_equivalence(seed, cases),
        residue_partition(seed, few),
        rescaling_identity(seed, cases),
        volume_identity(seed, few, 20_000),
        inflation_ratio(seed, cases),
        dirichlet(seed, cases),
        dirichlet_tight(seed, few),
        profile_bounds(seed, cases),
        xq_bound(seed, few, 4_000),
        discrepancy_sandwich(seed, cases),
        truncation_consistency(seed, few),
    ]
}
