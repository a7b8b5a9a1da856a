//! Counting S-integer solutions of the approximation inequalities.

mod bounds;
mod brute;
mod dirichlet;
mod kernel;
mod lattice;

pub use bounds::{profile_count_bound, vol_xq_bound, vol_xq_monte_carlo, ProfileCount, XqEstimate};
pub use brute::{count_affine_bruteforce, count_solutions_bruteforce, DEFAULT_BUDGET};
pub use dirichlet::{dirichlet_solve, verify_dirichlet, DirichletConstants, DirichletSolution};
pub use kernel::{count_ladder, count_solutions, count_solutions_with, required_precision, KernelMode};
pub use lattice::{
    discrepancy, discrepancy_points, lattice_points_in, rescale_congruence, AffineLatticeSpec, Rescaled,
};

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

use crate::approx::ApproxCollection;
use crate::error::{Error, Result};
use crate::sring::{int_prime_power, NormProfile, PlaceSet, SVector};

/// `A = (A_p)_{p in S}`: exact rationals at the real place, integers known modulo
/// `p^(K_p)` at each finite place.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncatedMatrix {
    m: usize,
    n: usize,
    real: Vec<Vec<BigRational>>,
    finite: BTreeMap<u64, Vec<Vec<BigInt>>>,
    precision: BTreeMap<u64, u32>,
    stream_seed: u64,
}

fn check_shape<T>(rows: &[Vec<T>], m: usize, n: usize) -> Result<()> {
    if rows.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: rows.len() });
    }
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: r.len() });
    }
    Ok(())
}

impl TruncatedMatrix {
    /// Finite-place entries are reduced modulo `p^(K_p)`.
    pub fn new(
        real: Vec<Vec<BigRational>>,
        finite: BTreeMap<u64, Vec<Vec<BigInt>>>,
        precision: BTreeMap<u64, u32>,
        places: &PlaceSet,
    ) -> Result<Self> {
        let m = real.len();
        let n = real.first().map_or(0, Vec::len);
        if m == 0 || n == 0 {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        check_shape(&real, m, n)?;
        let keys: Vec<u64> = finite.keys().copied().collect();
        if keys != places.primes() || precision.keys().copied().collect::<Vec<_>>() != keys {
            return Err(Error::InvalidPrecision(format!(
                "finite parts and precisions must cover exactly {:?}",
                places.primes()
            )));
        }
        let mut reduced = BTreeMap::new();
        for (p, rows) in finite {
            check_shape(&rows, m, n)?;
            let k = precision[&p];
            if k == 0 {
                return Err(Error::InvalidPrecision(format!("precision at {p} must be at least 1")));
            }
            let modulus = int_prime_power(p, k);
            let rows = rows
                .into_iter()
                .map(|r| r.into_iter().map(|x| ((x % &modulus) + &modulus) % &modulus).collect())
                .collect();
            reduced.insert(p, rows);
        }
        Ok(Self { m, n, real, finite: reduced, precision, stream_seed: 0 })
    }

    /// `A = 0` at every place.
    pub fn zero(m: usize, n: usize, places: &PlaceSet, precision: u32) -> Result<Self> {
        let zeros = vec![vec![BigInt::zero(); n]; m];
        Self::new(
            vec![vec![BigRational::zero(); n]; m],
            places.primes().iter().map(|&p| (p, zeros.clone())).collect(),
            places.primes().iter().map(|&p| (p, precision)).collect(),
            places,
        )
    }

    /// The same rational matrix at every place (entries must be `p`-integral).
    pub fn diagonal(entries: Vec<Vec<BigRational>>, places: &PlaceSet, precision: u32) -> Result<Self> {
        let mut finite = BTreeMap::new();
        for &p in places.primes() {
            let modulus = int_prime_power(p, precision);
            let mut rows = Vec::with_capacity(entries.len());
            for r in &entries {
                let mut row = Vec::with_capacity(r.len());
                for x in r {
                    row.push(padic_integer_residue(x, p, &modulus)?);
                }
                rows.push(row);
            }
            finite.insert(p, rows);
        }
        let precision = places.primes().iter().map(|&p| (p, precision)).collect();
        Self::new(entries, finite, precision, places)
    }

    pub fn with_stream_seed(mut self, seed: u64) -> Self {
        self.stream_seed = seed;
        self
    }

    pub fn stream_seed(&self) -> u64 {
        self.stream_seed
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn real_part(&self) -> &[Vec<BigRational>] {
        &self.real
    }

    pub fn finite_part(&self, p: u64) -> Option<&[Vec<BigInt>]> {
        self.finite.get(&p).map(Vec::as_slice)
    }

    pub fn precision(&self, p: u64) -> u32 {
        self.precision.get(&p).copied().unwrap_or(0)
    }

    pub fn precisions(&self) -> &BTreeMap<u64, u32> {
        &self.precision
    }

    pub fn primes(&self) -> impl Iterator<Item = u64> + '_ {
        self.finite.keys().copied()
    }

    pub(crate) fn set_finite(&mut self, p: u64, rows: Vec<Vec<BigInt>>, precision: u32) {
        self.finite.insert(p, rows);
        self.precision.insert(p, precision);
    }

    /// Reduce the finite part at `p` to precision `k <= K_p`.
    pub fn truncate(&self, p: u64, k: u32) -> Result<Self> {
        let cur = self.precision(p);
        if k == 0 || k > cur {
            return Err(Error::InvalidPrecision(format!("cannot truncate precision {cur} at {p} to {k}")));
        }
        let modulus = int_prime_power(p, k);
        let mut out = self.clone();
        let rows = self.finite[&p].iter().map(|r| r.iter().map(|x| x % &modulus).collect()).collect();
        out.set_finite(p, rows, k);
        Ok(out)
    }
}

/// `x mod p^K` for a `p`-integral rational `x`.
fn padic_integer_residue(x: &BigRational, p: u64, modulus: &BigInt) -> Result<BigInt> {
    let den = x.denom();
    if (den % BigInt::from(p)).is_zero() {
        return Err(Error::NotSInteger(format!("{x} is not {p}-integral")));
    }
    let inv = mod_inverse_big(den, modulus).expect("denominator is a unit mod p^K");
    Ok(((x.numer() * inv) % modulus + modulus) % modulus)
}

pub(crate) fn mod_inverse_big(a: &BigInt, m: &BigInt) -> Option<BigInt> {
    use num_integer::Integer;
    let e = a.mod_floor(m).extended_gcd(m);
    if !e.gcd.abs().eq(&BigInt::from(1)) {
        return None;
    }
    Some(e.x.mod_floor(m))
}

/// `(p, q) == (v_m, v_n) mod N`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Congruence {
    modulus: u64,
    shift: SVector,
}

impl Congruence {
    pub fn new(modulus: u64, shift: SVector, places: &PlaceSet) -> Result<Self> {
        places.check_modulus(modulus)?;
        if let Some(c) = shift.coords().iter().find(|c| !places.is_s_integer(c)) {
            return Err(Error::NotSInteger(c.to_string()));
        }
        Ok(Self { modulus, shift })
    }

    pub fn trivial(d: usize) -> Self {
        Self { modulus: 1, shift: SVector::zeros(d) }
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn shift(&self) -> &SVector {
        &self.shift
    }

    /// `(v_m, v_n)`.
    pub fn split(&self, m: usize) -> (SVector, SVector) {
        self.shift.split(m)
    }
}

/// Input of the solution counter `N_{psi,A}(T)`.
#[derive(Clone, Debug)]
pub struct CountRequest {
    pub matrix: TruncatedMatrix,
    pub psi: ApproxCollection,
    pub profile: NormProfile,
    pub congruence: Congruence,
}

impl CountRequest {
    pub fn new(matrix: TruncatedMatrix, psi: ApproxCollection, profile: NormProfile, congruence: Congruence) -> Result<Self> {
        let req = Self { matrix, psi, profile, congruence };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.psi.dims();
        let (am, an) = self.matrix.dims();
        if am != m as usize {
            return Err(Error::DimensionMismatch { expected: m as usize, found: am });
        }
        if an != n as usize {
            return Err(Error::DimensionMismatch { expected: n as usize, found: an });
        }
        let places = self.psi.places();
        if self.matrix.primes().collect::<Vec<_>>() != places.primes() {
            return Err(Error::InvalidPrecision("matrix places differ from psi places".into()));
        }
        self.profile.check_places(&places)?;
        self.profile.check_multiple_of(n)?;
        places.check_modulus(self.congruence.modulus)?;
        if self.congruence.shift.dim() != (m + n) as usize {
            return Err(Error::DimensionMismatch { expected: (m + n) as usize, found: self.congruence.shift.dim() });
        }
        Ok(())
    }

    pub fn places(&self) -> PlaceSet {
        self.psi.places()
    }

    pub fn dims(&self) -> (u32, u32) {
        self.psi.dims()
    }

    pub fn with_profile(&self, profile: NormProfile) -> Result<Self> {
        Self::new(self.matrix.clone(), self.psi.clone(), profile, self.congruence.clone())
    }

    pub fn with_congruence(&self, congruence: Congruence) -> Result<Self> {
        Self::new(self.matrix.clone(), self.psi.clone(), self.profile.clone(), congruence)
    }

    pub fn with_matrix(&self, matrix: TruncatedMatrix) -> Result<Self> {
        Self::new(matrix, self.psi.clone(), self.profile.clone(), self.congruence.clone())
    }
}

