use std::collections::BTreeMap;
use std::path::PathBuf;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::approx::{ApproxCollection, PsiSpec};
use crate::counting::Congruence;
use crate::error::{Error, Result};
use crate::sampler::{SamplerConfig, DEFAULT_REAL_RESOLUTION};
use crate::sring::{ratio_str, NormProfile, PlaceSet, SVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Volume,
    Count,
    Asymptotic,
    Dirichlet,
    Dichotomy,
    Verify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Svg => "svg",
        }
    }
}

/// Step `s` has `T_inf = real_start * real_ratio^s` and `e_p = finite_start_p + s * finite_step_p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ladder {
    #[serde(with = "ratio_str")]
    pub real_start: BigRational,
    #[serde(with = "ratio_str")]
    pub real_ratio: BigRational,
    #[serde(default)]
    pub finite_start: BTreeMap<u64, i64>,
    #[serde(default)]
    pub finite_step: BTreeMap<u64, i64>,
    pub steps: u32,
}

/// Upper limit on ladder length.
pub const MAX_STEPS: u32 = 64;
pub const MAX_EXPONENT: i64 = 4096;

impl Ladder {
    pub fn profile(&self, step: u32) -> Result<NormProfile> {
        let t = &self.real_start * num_traits::pow(self.real_ratio.clone(), step as usize);
        let fin = self
            .finite_start
            .keys()
            .chain(self.finite_step.keys())
            .map(|&p| {
                let e = self.finite_start.get(&p).copied().unwrap_or(0)
                    + step as i64 * self.finite_step.get(&p).copied().unwrap_or(0);
                (p, e)
            })
            .collect();
        NormProfile::new(t, fin)
    }

    pub fn profiles(&self) -> Result<Vec<NormProfile>> {
        (0..self.steps).map(|s| self.profile(s)).collect()
    }

    pub fn validate(&self, places: &PlaceSet, n: u32) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.steps == 0 {
            return bad("the ladder needs at least one step".into());
        }
        if self.steps > MAX_STEPS {
            return bad(format!("at most {MAX_STEPS} ladder steps"));
        }
        if self.real_start <= BigRational::zero() {
            return bad("real_start must be positive".into());
        }
        if self.steps > 1 && self.real_ratio <= BigRational::one() {
            return bad("real_ratio must exceed 1 so the ladder increases at the real place".into());
        }
        for (what, map) in [("finite_start", &self.finite_start), ("finite_step", &self.finite_step)] {
            if let Some(p) = map.keys().find(|p| !places.contains_prime(**p)) {
                return bad(format!("{what} names {p}, which is not in S"));
            }
        }
        for &p in places.primes() {
            let start = self.finite_start.get(&p).copied().unwrap_or(0);
            let step = self.finite_step.get(&p).copied().unwrap_or(0);
            if self.steps > 1 && step <= 0 {
                return bad(format!("finite_step at {p} must be positive so the ladder increases there"));
            }
            let last = start.checked_add(step.saturating_mul(self.steps as i64 - 1));
            if !matches!(last, Some(e) if start.abs() <= MAX_EXPONENT && e.abs() <= MAX_EXPONENT) {
                return bad(format!("exponents at {p} must stay within +-{MAX_EXPONENT}"));
            }
            if start.rem_euclid(n as i64) != 0 || step.rem_euclid(n as i64) != 0 {
                return bad(format!("exponents at {p} must be multiples of n = {n}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CongruenceSpec {
    pub modulus: u64,
    #[serde(with = "ratio_str::vec")]
    pub shift: Vec<BigRational>,
}

fn default_precision() -> u32 {
    4
}

fn default_resolution() -> String {
    DEFAULT_REAL_RESOLUTION.to_string()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub seed: u64,
    /// Initial `K_p`; matrices are deepened when a request needs more.
    #[serde(default = "default_precision")]
    pub precision: u32,
    #[serde(default = "default_resolution")]
    pub real_resolution: String,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json, Format::Svg]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), formats: default_formats() }
    }
}

fn default_samples() -> u64 {
    1
}

fn default_mc_samples() -> u64 {
    100_000
}

fn default_cases() -> u64 {
    50
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub places: PlaceSet,
    pub m: u32,
    pub n: u32,
    pub psi: Option<PsiSpec>,
    pub ladder: Option<Ladder>,
    #[serde(default)]
    pub congruence: Option<CongruenceSpec>,
    pub sampler: SamplerSpec,
    /// Number of matrices `A`.
    #[serde(default = "default_samples")]
    pub samples: u64,
    /// Monte Carlo points per region in volume mode.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: u64,
    /// Random cases per property suite in verify mode.
    #[serde(default = "default_cases")]
    pub verify_cases: u64,
    /// Drop ladder steps with `T_inf prod_p T_p` above this bound.
    #[serde(default, with = "ratio_str::opt")]
    pub max_t: Option<BigRational>,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(json)?;
        c.validate()?;
        Ok(c)
    }

    /// Check the configuration and return warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config("m and n must be positive".into()));
        }
        if self.mode == Mode::Verify {
            return Ok(warnings);
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be positive".into()));
        }
        let ladder = self.ladder()?;
        ladder.validate(&self.places, self.n)?;
        if self.profiles()?.is_empty() {
            return Err(Error::Config("max_t removes every ladder step".into()));
        }
        if self.mode != Mode::Dirichlet {
            self.psi()?;
        }
        self.congruence()?;
        self.sampler_config()?;
        if self.m + self.n == 2 && matches!(self.mode, Mode::Asymptotic | Mode::Count) {
            warnings.push("d = m + n = 2: the asymptotic is only established for d >= 3".into());
        }
        if self.mode == Mode::Volume && self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be positive".into()));
        }
        Ok(warnings)
    }

    pub fn ladder(&self) -> Result<&Ladder> {
        self.ladder.as_ref().ok_or_else(|| Error::Config(format!("{:?} mode needs a ladder", self.mode)))
    }

    pub fn profiles(&self) -> Result<Vec<NormProfile>> {
        let mut out = self.ladder()?.profiles()?;
        if let Some(max) = &self.max_t {
            out.retain(|p| p.size() <= *max);
        }
        Ok(out)
    }

    pub fn psi(&self) -> Result<ApproxCollection> {
        let spec = self.psi.clone().unwrap_or_else(|| PsiSpec::constant_one(&self.places));
        ApproxCollection::from_spec(&spec, &self.places, self.m, self.n)
    }

    pub fn d(&self) -> usize {
        (self.m + self.n) as usize
    }

    pub fn modulus(&self) -> u64 {
        self.congruence.as_ref().map_or(1, |c| c.modulus)
    }

    pub fn congruence(&self) -> Result<Congruence> {
        match &self.congruence {
            None => Ok(Congruence::trivial(self.d())),
            Some(c) => {
                if c.shift.len() != self.d() {
                    return Err(Error::DimensionMismatch { expected: self.d(), found: c.shift.len() });
                }
                Congruence::new(c.modulus, SVector::new(c.shift.clone())?, &self.places)
            }
        }
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let real_resolution: u128 = self
            .sampler
            .real_resolution
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad real_resolution {:?}", self.sampler.real_resolution)))?;
        let mut c = SamplerConfig::new(self.sampler.seed, self.m, self.n, self.places.clone(), self.sampler.precision);
        c.real_resolution = real_resolution;
        c.validate()?;
        Ok(c)
    }

    /// `N^d` as a rational.
    pub fn modulus_power(&self) -> BigRational {
        BigRational::from_integer(num_traits::pow(BigInt::from(self.modulus()), self.d()))
    }
}
