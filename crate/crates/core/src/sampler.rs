//! Seeded sampling of matrices from the fundamental domain `([0,1) x prod Z_p)^(m x n)`
//! and of random test inputs.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::counting::TruncatedMatrix;
use crate::error::{Error, Result};
use crate::sring::{int_prime_power, PlaceSet};

const TAG_REAL: u64 = 0x7265_616c;
const TAG_FINITE: u64 = 0x6669_6e69;
const TAG_SAMPLE: u64 = 0x7361_6d70;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seed derived from `seed` and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |acc, &x| splitmix(acc ^ splitmix(x)))
}

/// An independent stream for `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

pub const DEFAULT_REAL_RESOLUTION: u128 = 1 << 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub seed: u64,
    pub m: u32,
    pub n: u32,
    pub places: PlaceSet,
    /// `K_p` per finite place.
    pub precision: BTreeMap<u64, u32>,
    /// Real entries are drawn from `{j / R : 0 <= j < R}`.
    #[serde(default = "default_resolution", with = "u128_str")]
    pub real_resolution: u128,
}

fn default_resolution() -> u128 {
    DEFAULT_REAL_RESOLUTION
}

mod u128_str {
    use super::*;

    pub fn serialize<S: Serializer>(x: &u128, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&x.to_string())
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Str(String),
        Int(u64),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u128, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Str(s) => s.trim().parse().map_err(serde::de::Error::custom),
            Raw::Int(i) => Ok(i as u128),
        }
    }
}

impl SamplerConfig {
    pub fn new(seed: u64, m: u32, n: u32, places: PlaceSet, precision: u32) -> Self {
        let precision = places.primes().iter().map(|&p| (p, precision)).collect();
        Self { seed, m, n, places, precision, real_resolution: DEFAULT_REAL_RESOLUTION }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.real_resolution < 2 {
            return Err(Error::Config("real resolution must be at least 2".into()));
        }
        if self.precision.keys().copied().collect::<Vec<_>>() != self.places.primes() {
            return Err(Error::InvalidPrecision(format!("precision must be given for exactly {:?}", self.places.primes())));
        }
        if let Some((p, _)) = self.precision.iter().find(|(_, &k)| k == 0) {
            return Err(Error::InvalidPrecision(format!("precision at {p} must be at least 1")));
        }
        Ok(())
    }

    /// The configuration of the `i`-th matrix of a campaign.
    pub fn for_sample(&self, i: u64) -> Self {
        Self { seed: derive_seed(self.seed, &[TAG_SAMPLE, i]), ..self.clone() }
    }
}

/// `sum_{i < k} d_i p^i` for the digit stream of one entry, from digit `from` on.
fn digits(seed: u64, p: u64, r: usize, c: usize, from: u32, to: u32) -> BigInt {
    let mut rng = stream(seed, &[TAG_FINITE, p, r as u64, c as u64]);
    let mut x = BigInt::zero();
    let mut pw = BigInt::from(1u32);
    for i in 0..to {
        let d = rng.gen_range(0..p);
        if i >= from {
            x += &pw * d;
        }
        pw *= p;
    }
    x
}

pub fn sample_matrix(config: &SamplerConfig) -> Result<TruncatedMatrix> {
    config.validate()?;
    let (m, n) = (config.m as usize, config.n as usize);
    let res = BigInt::from(config.real_resolution);
    let real = (0..m)
        .map(|r| {
            (0..n)
                .map(|c| {
                    let j = stream(config.seed, &[TAG_REAL, r as u64, c as u64]).gen_range(0..config.real_resolution);
                    BigRational::new(BigInt::from(j), res.clone())
                })
                .collect()
        })
        .collect();
    let finite = config
        .precision
        .iter()
        .map(|(&p, &k)| (p, (0..m).map(|r| (0..n).map(|c| digits(config.seed, p, r, c, 0, k)).collect()).collect()))
        .collect();
    Ok(TruncatedMatrix::new(real, finite, config.precision.clone(), &config.places)?.with_stream_seed(config.seed))
}

/// Extend `A_p` to precision `new_k` with further digits of the same streams.
pub fn deepen(a: &TruncatedMatrix, p: u64, new_k: u32) -> Result<TruncatedMatrix> {
    let k = a.precision(p);
    let Some(rows) = a.finite_part(p) else {
        return Err(Error::InvalidPrecision(format!("{p} is not a place of the matrix")));
    };
    if new_k <= k {
        return Err(Error::InvalidPrecision(format!("new precision {new_k} must exceed {k} at {p}")));
    }
    let rows = rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            row.iter()
                .enumerate()
                .map(|(c, x)| x + digits(a.stream_seed(), p, r, c, k, new_k))
                .collect()
        })
        .collect();
    let mut out = a.clone();
    out.set_finite(p, rows, new_k);
    Ok(out)
}

/// Deepen every place to at least the given precisions.
pub fn deepen_to(a: &TruncatedMatrix, needed: &BTreeMap<u64, u32>) -> Result<(TruncatedMatrix, Vec<(u64, u32, u32)>)> {
    let mut out = a.clone();
    let mut events = Vec::new();
    for (&p, &k) in needed {
        let cur = out.precision(p);
        if k > cur {
            out = deepen(&out, p, k)?;
            events.push((p, cur, k));
        }
    }
    Ok((out, events))
}

/// Random inputs for property suites.
pub mod gen {
    use super::*;
    use crate::approx::{
        ApproxCollection, FiniteApproxFunction, FiniteTail, RealApproxFunction, StepPoint, StepTail,
    };
    use crate::counting::{Congruence, CountRequest};
    use crate::sring::{NormProfile, SVector};

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    /// A normalized real function with an exactly integrable closed form.
    pub fn real_function<R: Rng>(rng: &mut R) -> RealApproxFunction {
        match rng.gen_range(0..4) {
            0 => RealApproxFunction::ConstantOne,
            1 => RealApproxFunction::power_law(rat(1, 1), rat(rng.gen_range(1..4), 1)),
            2 => {
                let k = rng.gen_range(1..3u32);
                let root = rng.gen_range(1..3i64);
                RealApproxFunction::power_law(rat(root.pow(k), 1), rat(k as i64, 1))
            }
            _ => {
                let mut at = rat(1, 1);
                let mut v = rat(1, 1);
                let mut breakpoints = Vec::new();
                for _ in 0..rng.gen_range(1..4) {
                    at += rat(rng.gen_range(1..8), 2);
                    v /= rat(rng.gen_range(1..4), 1);
                    breakpoints.push(StepPoint { at: at.clone(), value: v.clone() });
                }
                RealApproxFunction::Step { breakpoints, tail: Some(StepTail::Hold) }
            }
        }
    }

    pub fn finite_function<R: Rng>(rng: &mut R, p: u64, m: u32, n: u32, max_z: u32) -> FiniteApproxFunction {
        let mut z: Vec<u32> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(0..=max_z)).collect();
        z.sort_unstable();
        FiniteApproxFunction::new(p, m, n, z, FiniteTail::Constant).expect("sorted exponents")
    }

    pub fn psi<R: Rng>(rng: &mut R, places: &PlaceSet, m: u32, n: u32, max_z: u32) -> ApproxCollection {
        let finite = places.primes().iter().map(|&p| (p, finite_function(rng, p, m, n, max_z))).collect();
        ApproxCollection::new(real_function(rng), finite, places, m, n).expect("generated collection is normalized")
    }

    /// `T_inf = j / 4 >= 1` with `j <= 4 max_real`, `e_p in n * [0, max_block]`.
    pub fn profile<R: Rng>(rng: &mut R, places: &PlaceSet, n: u32, max_real: i64, max_block: i64) -> NormProfile {
        let t = rat(rng.gen_range(4..=4 * max_real), 4);
        let fin = places
            .primes()
            .iter()
            .map(|&p| (p, n as i64 * rng.gen_range(0..=max_block)))
            .collect();
        NormProfile::new(t, fin).expect("positive bound")
    }

    pub fn admissible_moduli(places: &PlaceSet, candidates: &[u64]) -> Vec<u64> {
        candidates.iter().copied().filter(|&n| places.is_admissible_modulus(n)).collect()
    }

    pub fn congruence<R: Rng>(rng: &mut R, places: &PlaceSet, d: usize, modulus: u64) -> Congruence {
        if modulus == 1 {
            return Congruence::trivial(d);
        }
        let v = (0..d).map(|_| rat(rng.gen_range(0..modulus as i64), 1)).collect();
        Congruence::new(modulus, SVector::new(v).expect("d > 0"), places).expect("admissible modulus")
    }

    /// A matrix with small real denominators, for brute-force comparisons.
    pub fn small_matrix<R: Rng>(rng: &mut R, places: &PlaceSet, m: usize, n: usize, precision: u32) -> TruncatedMatrix {
        let real = (0..m)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let d = rng.gen_range(1..8i64);
                        rat(rng.gen_range(0..d), d)
                    })
                    .collect()
            })
            .collect();
        let finite = places
            .primes()
            .iter()
            .map(|&p| {
                let modulus = int_prime_power(p, precision);
                let rows = (0..m)
                    .map(|_| (0..n).map(|_| BigInt::from(rng.gen_range(0..u64::MAX)) % &modulus).collect())
                    .collect();
                (p, rows)
            })
            .collect();
        let precision = places.primes().iter().map(|&p| (p, precision)).collect();
        TruncatedMatrix::new(real, finite, precision, places).expect("consistent shapes")
    }

    /// A request small enough for brute-force enumeration.
    pub fn small_request<R: Rng>(rng: &mut R, places: &PlaceSet, m: u32, n: u32, modulus: u64) -> CountRequest {
        let psi = psi(rng, places, m, n, 2);
        let profile = profile(rng, places, n, 3, 1);
        let a = small_matrix(rng, places, m as usize, n as usize, 8);
        let cong = congruence(rng, places, (m + n) as usize, modulus);
        CountRequest::new(a, psi, profile, cong).expect("consistent request")
    }

    pub fn place_set<R: Rng>(rng: &mut R) -> PlaceSet {
        match rng.gen_range(0..3) {
            0 => PlaceSet::real_only(),
            1 => PlaceSet::new([2]).expect("prime"),
            _ => PlaceSet::new([2, 3]).expect("primes"),
        }
    }
}
