//! Collections of approximation functions `psi = (psi_p)_{p in S}`.
//!
//! Functions are data (a catalog kind plus parameters) so that the volume and
//! divergence computations can integrate them in closed form. Every function is
//! extended to `t = 0` by its plateau value, which is `1` for normalized functions.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sring::{self, prime_power, ratio_str, to_f64, PlaceSet, Place};

/// Relative width of the enclosure used when a value is only available in floating point.
const ENCLOSURE_REL: f64 = 1e-10;

/// An exact value or an approximation with an absolute error bound.
#[derive(Clone, Debug, PartialEq)]
pub enum Quantity {
    Exact(BigRational),
    Approx { value: f64, error: f64 },
}

impl Quantity {
    pub fn value(&self) -> f64 {
        match self {
            Quantity::Exact(x) => to_f64(x),
            Quantity::Approx { value, .. } => *value,
        }
    }

    pub fn error(&self) -> f64 {
        match self {
            Quantity::Exact(_) => 0.0,
            Quantity::Approx { error, .. } => *error,
        }
    }

    pub fn exact(&self) -> Option<&BigRational> {
        match self {
            Quantity::Exact(x) => Some(x),
            Quantity::Approx { .. } => None,
        }
    }

    fn approx(value: f64) -> Quantity {
        Quantity::Approx { value, error: value.abs() * 1e-12 + f64::MIN_POSITIVE }
    }

    pub fn mul(&self, other: &Quantity) -> Quantity {
        match (self, other) {
            (Quantity::Exact(a), Quantity::Exact(b)) => Quantity::Exact(a * b),
            _ => {
                let (a, ea) = (self.value(), self.error());
                let (b, eb) = (other.value(), other.error());
                Quantity::Approx { value: a * b, error: a.abs() * eb + b.abs() * ea + ea * eb }
            }
        }
    }

    pub fn scale(&self, c: &BigRational) -> Quantity {
        self.mul(&Quantity::Exact(c.clone()))
    }

    fn add(&self, other: &Quantity) -> Quantity {
        match (self, other) {
            (Quantity::Exact(a), Quantity::Exact(b)) => Quantity::Exact(a + b),
            _ => Quantity::Approx {
                value: self.value() + other.value(),
                error: self.error() + other.error(),
            },
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::Exact(x) => write!(f, "{x}"),
            Quantity::Approx { value, error } => write!(f, "{value} ± {error:.3e}"),
        }
    }
}

/// A function value: exact, or known to lie in `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub enum PsiValue {
    Exact(BigRational),
    Enclosure { lo: BigRational, hi: BigRational },
}

impl PsiValue {
    fn from_f64(w: f64) -> PsiValue {
        let lo = sring::from_f64(w * (1.0 - ENCLOSURE_REL)).unwrap_or_else(BigRational::zero);
        let hi = sring::from_f64(w * (1.0 + ENCLOSURE_REL)).unwrap_or_else(BigRational::zero);
        PsiValue::Enclosure { lo, hi }
    }

    pub fn lower(&self) -> &BigRational {
        match self {
            PsiValue::Exact(x) => x,
            PsiValue::Enclosure { lo, .. } => lo,
        }
    }

    pub fn upper(&self) -> &BigRational {
        match self {
            PsiValue::Exact(x) => x,
            PsiValue::Enclosure { hi, .. } => hi,
        }
    }

    pub fn exact(&self) -> Option<&BigRational> {
        match self {
            PsiValue::Exact(x) => Some(x),
            PsiValue::Enclosure { .. } => None,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            PsiValue::Exact(x) => to_f64(x),
            PsiValue::Enclosure { lo, hi } => (to_f64(lo) + to_f64(hi)) / 2.0,
        }
    }

    /// Decide `x <= self`; `None` when `x` falls inside the enclosure.
    pub fn bounds_above(&self, x: &BigRational) -> Option<bool> {
        if x <= self.lower() {
            Some(true)
        } else if x > self.upper() {
            Some(false)
        } else {
            None
        }
    }

    fn scale(self, c: &BigRational) -> PsiValue {
        match self {
            PsiValue::Exact(x) => PsiValue::Exact(x * c),
            PsiValue::Enclosure { lo, hi } => PsiValue::Enclosure { lo: lo * c, hi: hi * c },
        }
    }

    fn min_one(self) -> PsiValue {
        let one = BigRational::one();
        match self {
            PsiValue::Exact(x) => PsiValue::Exact(x.min(one)),
            PsiValue::Enclosure { lo, hi } => {
                if lo >= one {
                    PsiValue::Exact(one)
                } else {
                    PsiValue::Enclosure { lo, hi: hi.min(one) }
                }
            }
        }
    }
}

/// A breakpoint of a step function: the value applies to arguments above `at`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPoint {
    #[serde(with = "ratio_str")]
    pub at: BigRational,
    #[serde(with = "ratio_str")]
    pub value: BigRational,
}

/// Behaviour of a step function past its last breakpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepTail {
    /// The last value persists.
    Hold,
    /// `v_last * (at_last / t)^a`.
    Power {
        #[serde(with = "ratio_str")]
        a: BigRational,
    },
}

/// The real-place function `psi_inf`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RealApproxFunction {
    /// `psi == 1`.
    ConstantOne,
    /// `min(1, c * t^(-a))`, `c >= 1`, `a > 0`.
    PowerLaw {
        #[serde(with = "ratio_str")]
        c: BigRational,
        #[serde(with = "ratio_str")]
        a: BigRational,
    },
    /// `min(1, c / (t * (1 + ln t)^b))` for `t > 1`, `c >= 1`, `b >= 0`.
    LogLaw {
        #[serde(with = "ratio_str")]
        c: BigRational,
        #[serde(with = "ratio_str")]
        b: BigRational,
    },
    /// `1` up to the first breakpoint, then piecewise constant.
    Step {
        breakpoints: Vec<StepPoint>,
        #[serde(default)]
        tail: Option<StepTail>,
    },
    /// `value_scale * base(arg_scale * t)`.
    Scaled {
        base: Box<RealApproxFunction>,
        #[serde(with = "ratio_str")]
        value_scale: BigRational,
        #[serde(with = "ratio_str")]
        arg_scale: BigRational,
    },
}

fn is_integer(x: &BigRational) -> bool {
    x.denom().is_one()
}

/// `x^k` for an integer exponent `k` (`x != 0` when `k < 0`).
fn pow_int(x: &BigRational, k: &BigInt) -> BigRational {
    let e = k.to_i64().expect("exponent fits in i64");
    let mag = num_traits::pow(x.clone(), e.unsigned_abs() as usize);
    if e >= 0 {
        mag
    } else {
        mag.recip()
    }
}

/// Exact rational `k`-th root, if one exists.
pub fn exact_root(x: &BigRational, k: u32) -> Option<BigRational> {
    if x.is_negative() {
        return None;
    }
    let n = x.numer().nth_root(k);
    let d = x.denom().nth_root(k);
    if num_traits::pow(n.clone(), k as usize) == *x.numer() && num_traits::pow(d.clone(), k as usize) == *x.denom() {
        Some(BigRational::new(n, d))
    } else {
        None
    }
}

/// Natural logarithm of a positive rational, robust for huge operands.
pub fn ln_rational(x: &BigRational) -> f64 {
    ln_int(x.numer()) - ln_int(x.denom())
}

fn ln_int(x: &BigInt) -> f64 {
    let bits = x.bits();
    if bits < 1000 {
        return x.to_f64().unwrap_or(f64::INFINITY).ln();
    }
    let shift = bits - 60;
    (x >> shift).to_f64().unwrap_or(1.0).ln() + shift as f64 * std::f64::consts::LN_2
}

impl RealApproxFunction {
    /// `value_scale * base(arg_scale * t)`, merging nested scalings.
    pub fn scaled(base: RealApproxFunction, value_scale: BigRational, arg_scale: BigRational) -> RealApproxFunction {
        let (base, v, k) = match base {
            RealApproxFunction::Scaled { base, value_scale: v0, arg_scale: k0 } => (*base, v0 * value_scale, k0 * arg_scale),
            other => (other, value_scale, arg_scale),
        };
        if v.is_one() && k.is_one() {
            base
        } else {
            RealApproxFunction::Scaled { base: Box::new(base), value_scale: v, arg_scale: k }
        }
    }

    pub fn power_law(c: BigRational, a: BigRational) -> RealApproxFunction {
        RealApproxFunction::PowerLaw { c, a }
    }

    /// Structural validity (monotone, positive); normalization is checked separately.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidApprox(m));
        match self {
            RealApproxFunction::ConstantOne => Ok(()),
            RealApproxFunction::PowerLaw { c, a } => {
                if *c < BigRational::one() || !a.is_positive() {
                    return bad(format!("power law needs c >= 1 and a > 0, got c = {c}, a = {a}"));
                }
                Ok(())
            }
            RealApproxFunction::LogLaw { c, b } => {
                if *c < BigRational::one() || b.is_negative() {
                    return bad(format!("log law needs c >= 1 and b >= 0, got c = {c}, b = {b}"));
                }
                Ok(())
            }
            RealApproxFunction::Step { breakpoints, tail } => {
                let mut prev_at: Option<&BigRational> = None;
                let mut prev_v = BigRational::one();
                for bp in breakpoints {
                    if !bp.at.is_positive() || prev_at.is_some_and(|a| bp.at <= *a) {
                        return bad("step breakpoints must be positive and strictly increasing".into());
                    }
                    if !bp.value.is_positive() || bp.value > prev_v {
                        return bad(format!("step values must be positive and non-increasing, got {}", bp.value));
                    }
                    prev_at = Some(&bp.at);
                    prev_v = bp.value.clone();
                }
                if let Some(StepTail::Power { a }) = tail {
                    if !a.is_positive() {
                        return bad("power tail exponent must be positive".into());
                    }
                    if breakpoints.is_empty() {
                        return bad("power tail needs at least one breakpoint".into());
                    }
                }
                Ok(())
            }
            RealApproxFunction::Scaled { base, value_scale, arg_scale } => {
                if !value_scale.is_positive() || !arg_scale.is_positive() {
                    return bad("scalings must be positive".into());
                }
                base.validate()
            }
        }
    }

    /// `psi(0+)`, the largest value.
    pub fn sup(&self) -> BigRational {
        match self {
            RealApproxFunction::Scaled { base, value_scale, .. } => value_scale * base.sup(),
            _ => BigRational::one(),
        }
    }

    /// `psi == 1` on `(0, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.sup().is_one() && self.evaluate(&BigRational::one()).exact().is_some_and(One::is_one)
    }

    pub fn evaluate(&self, t: &BigRational) -> PsiValue {
        let one = BigRational::one();
        if !t.is_positive() {
            return PsiValue::Exact(self.sup());
        }
        match self {
            RealApproxFunction::ConstantOne => PsiValue::Exact(one),
            RealApproxFunction::PowerLaw { c, a } => {
                if *t <= one {
                    return PsiValue::Exact(one);
                }
                if is_integer(a) {
                    PsiValue::Exact(c * pow_int(t, &-a.to_integer())).min_one()
                } else {
                    let lw = ln_rational(c) - to_f64(a) * ln_rational(t);
                    PsiValue::from_f64(lw.exp()).min_one()
                }
            }
            RealApproxFunction::LogLaw { c, b } => {
                if *t <= one {
                    return PsiValue::Exact(one);
                }
                if b.is_zero() {
                    return PsiValue::Exact(c / t).min_one();
                }
                let lt = ln_rational(t);
                let lw = ln_rational(c) - lt - to_f64(b) * (1.0 + lt).ln();
                PsiValue::from_f64(lw.exp()).min_one()
            }
            RealApproxFunction::Step { breakpoints, tail } => {
                let Some(idx) = breakpoints.iter().rposition(|bp| bp.at < *t) else {
                    return PsiValue::Exact(one);
                };
                let bp = &breakpoints[idx];
                match tail {
                    Some(StepTail::Power { a }) if idx + 1 == breakpoints.len() => {
                        let ratio = &bp.at / t;
                        if is_integer(a) {
                            PsiValue::Exact(&bp.value * pow_int(&ratio, &a.to_integer()))
                        } else {
                            let lw = ln_rational(&bp.value) + to_f64(a) * ln_rational(&ratio);
                            PsiValue::from_f64(lw.exp())
                        }
                    }
                    _ => PsiValue::Exact(bp.value.clone()),
                }
            }
            RealApproxFunction::Scaled { base, value_scale, arg_scale } => {
                base.evaluate(&(arg_scale * t)).scale(value_scale)
            }
        }
    }

    /// Floating-point evaluation for sampling.
    pub fn evaluate_f64(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return to_f64(&self.sup());
        }
        match self {
            RealApproxFunction::ConstantOne => 1.0,
            RealApproxFunction::PowerLaw { c, a } => {
                if t <= 1.0 {
                    1.0
                } else {
                    (to_f64(c) * t.powf(-to_f64(a))).min(1.0)
                }
            }
            RealApproxFunction::LogLaw { c, b } => {
                if t <= 1.0 {
                    1.0
                } else {
                    (to_f64(c) / (t * (1.0 + t.ln()).powf(to_f64(b)))).min(1.0)
                }
            }
            RealApproxFunction::Step { breakpoints, tail } => {
                let Some(idx) = breakpoints.iter().rposition(|bp| to_f64(&bp.at) < t) else {
                    return 1.0;
                };
                let bp = &breakpoints[idx];
                match tail {
                    Some(StepTail::Power { a }) if idx + 1 == breakpoints.len() => {
                        to_f64(&bp.value) * (to_f64(&bp.at) / t).powf(to_f64(a))
                    }
                    _ => to_f64(&bp.value),
                }
            }
            RealApproxFunction::Scaled { base, value_scale, arg_scale } => {
                to_f64(value_scale) * base.evaluate_f64(to_f64(arg_scale) * t)
            }
        }
    }

    /// `int_0^upper psi(r) dr`.
    pub fn integral_to(&self, upper: &BigRational) -> Quantity {
        let one = BigRational::one();
        if !upper.is_positive() {
            return Quantity::Exact(BigRational::zero());
        }
        match self {
            RealApproxFunction::ConstantOne => Quantity::Exact(upper.clone()),
            RealApproxFunction::PowerLaw { c, a } => power_law_integral(c, a, Some(upper)).expect("finite upper limit"),
            RealApproxFunction::LogLaw { c, b } => {
                if c.is_one() && *upper <= one {
                    return Quantity::Exact(upper.clone());
                }
                log_law_integral(c, b, Some(to_f64(upper))).expect("finite upper limit")
            }
            RealApproxFunction::Step { breakpoints, tail } => {
                let mut acc = Quantity::Exact(BigRational::zero());
                let mut left = BigRational::zero();
                let mut value = one;
                for bp in breakpoints {
                    if *upper <= bp.at {
                        return acc.add(&Quantity::Exact(&value * (upper - &left)));
                    }
                    acc = acc.add(&Quantity::Exact(&value * (&bp.at - &left)));
                    left = bp.at.clone();
                    value = bp.value.clone();
                }
                let rest = match tail {
                    Some(StepTail::Power { a }) => power_tail_integral(&value, &left, a, Some(upper)).expect("finite"),
                    _ => Quantity::Exact(&value * (upper - &left)),
                };
                acc.add(&rest)
            }
            RealApproxFunction::Scaled { base, value_scale, arg_scale } => {
                base.integral_to(&(arg_scale * upper)).scale(&(value_scale / arg_scale))
            }
        }
    }

    /// `int_0^inf psi(r) dr`: `Ok(None)` when it diverges.
    pub fn integral_total(&self) -> Result<Option<Quantity>> {
        match self {
            RealApproxFunction::ConstantOne => Ok(None),
            RealApproxFunction::PowerLaw { c, a } => Ok(power_law_integral(c, a, None)),
            RealApproxFunction::LogLaw { c, b } => Ok(log_law_integral(c, b, None)),
            RealApproxFunction::Step { breakpoints, tail } => {
                let Some(last) = breakpoints.last() else {
                    return Ok(None);
                };
                match tail {
                    None => Err(Error::Undecidable("step function without a tail rule".into())),
                    Some(StepTail::Hold) => Ok(None),
                    Some(StepTail::Power { a }) => {
                        let head = RealApproxFunction::Step { breakpoints: breakpoints.clone(), tail: Some(StepTail::Hold) }
                            .integral_to(&last.at);
                        Ok(power_tail_integral(&last.value, &last.at, a, None).map(|t| head.add(&t)))
                    }
                }
            }
            RealApproxFunction::Scaled { base, value_scale, arg_scale } => {
                Ok(base.integral_total()?.map(|q| q.scale(&(value_scale / arg_scale))))
            }
        }
    }
}

/// `int min(1, c r^-a) dr` over `(0, upper]` (`None` upper: the whole half-line).
fn power_law_integral(c: &BigRational, a: &BigRational, upper: Option<&BigRational>) -> Option<Quantity> {
    let one = BigRational::one();
    if upper.is_none() && *a <= one {
        return None;
    }
    let exact_break = if c.is_one() {
        Some(one.clone())
    } else if is_integer(a) {
        a.to_integer().to_u32().and_then(|k| exact_root(c, k))
    } else {
        None
    };
    if let Some(r0) = exact_break {
        match upper {
            Some(t) if *t <= r0 => return Some(Quantity::Exact(t.clone())),
            None => return Some(Quantity::Exact(&r0 * a / (a - &one))),
            Some(t) if is_integer(a) && !a.is_one() => {
                // r0 a/(a-1) - c t^(1-a)/(a-1)
                let am1 = a - &one;
                let tail = c * pow_int(t, &(-am1.to_integer())) / &am1;
                return Some(Quantity::Exact(&r0 * a / &am1 - tail));
            }
            _ => {}
        }
    }
    let (cf, af) = (to_f64(c), to_f64(a));
    let r0 = (c.numer().to_f64().map(|_| cf.ln()).unwrap_or(ln_rational(c)) / af).exp();
    let value = match upper {
        Some(t) => {
            let tf = to_f64(t);
            if tf <= r0 {
                tf
            } else if (af - 1.0).abs() < f64::EPSILON {
                r0 + cf * (tf / r0).ln()
            } else {
                r0 + cf * (r0.powf(1.0 - af) - tf.powf(1.0 - af)) / (af - 1.0)
            }
        }
        None => r0 * af / (af - 1.0),
    };
    Some(Quantity::approx(value))
}

/// `int min(1, c/(r (1+ln r)^b)) dr`, with the plateau on `(0, 1]`.
fn log_law_integral(c: &BigRational, b: &BigRational, upper: Option<f64>) -> Option<Quantity> {
    let bf = to_f64(b);
    if upper.is_none() && bf <= 1.0 {
        return None;
    }
    let cf = to_f64(c);
    let g = |r: f64| r * (1.0 + r.ln()).powf(bf);
    // breakpoint r0 >= 1 where c / g(r0) = 1
    let r0 = if cf <= 1.0 {
        1.0
    } else {
        let (mut lo, mut hi) = (1.0f64, cf.max(1.0));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < cf {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let anti = |r: f64| {
        if (bf - 1.0).abs() < f64::EPSILON {
            (1.0 + r.ln()).ln()
        } else {
            (1.0 + r.ln()).powf(1.0 - bf) / (1.0 - bf)
        }
    };
    let value = match upper {
        Some(t) if t <= r0 => t,
        Some(t) => r0 + cf * (anti(t) - anti(r0)),
        None => r0 - cf * anti(r0),
    };
    Some(Quantity::approx(value))
}

/// `int_left^upper v (left / r)^a dr`.
fn power_tail_integral(v: &BigRational, left: &BigRational, a: &BigRational, upper: Option<&BigRational>) -> Option<Quantity> {
    let one = BigRational::one();
    if upper.is_none() && *a <= one {
        return None;
    }
    let am1 = a - &one;
    match upper {
        None => Some(Quantity::Exact(v * left / &am1)),
        Some(t) if t <= left => Some(Quantity::Exact(BigRational::zero())),
        Some(t) if is_integer(a) && !a.is_one() => {
            // v left^a (left^(1-a) - t^(1-a)) / (a-1)
            let k = am1.to_integer();
            let la = pow_int(left, &a.to_integer());
            Some(Quantity::Exact(v * la * (pow_int(left, &-&k) - pow_int(t, &-k)) / &am1))
        }
        Some(t) => {
            let (vf, lf, af, tf) = (to_f64(v), to_f64(left), to_f64(a), to_f64(t));
            let value = if a.is_one() {
                vf * lf * (tf / lf).ln()
            } else {
                vf * lf.powf(af) * (lf.powf(1.0 - af) - tf.powf(1.0 - af)) / (af - 1.0)
            };
            Some(Quantity::approx(value))
        }
    }
}

/// Exponents `z_k` past the explicit list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FiniteTail {
    /// `z_k = z_K` (or `0` for an empty list).
    Constant,
    /// `z_k = alpha * k + beta`.
    Linear { alpha: u32, beta: i64 },
}

/// `psi_p(p^(kn + r)) = p^(-m z_k)` for `0 <= r < n`, `psi_p == 1` on `(0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteApproxFunction {
    prime: u64,
    m: u32,
    n: u32,
    z: Vec<u32>,
    tail: FiniteTail,
}

impl FiniteApproxFunction {
    /// `z` lists `z_1, ..., z_K`.
    pub fn new(prime: u64, m: u32, n: u32, z: Vec<u32>, tail: FiniteTail) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidApprox("dimensions must be positive".into()));
        }
        if !sring::is_prime(prime) {
            return Err(Error::InvalidApprox(format!("{prime} is not prime")));
        }
        if z.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidApprox(format!("exponents at {prime} must be non-decreasing: {z:?}")));
        }
        if let FiniteTail::Linear { alpha, beta } = tail {
            let k_next = z.len() as i64 + 1;
            let next = alpha as i64 * k_next + beta;
            let last = z.last().copied().unwrap_or(0) as i64;
            if next < last {
                return Err(Error::InvalidApprox(format!("linear tail at {prime} decreases past the explicit list")));
            }
        }
        Ok(Self { prime, m, n, z, tail })
    }

    pub fn constant_one(prime: u64, m: u32, n: u32) -> Result<Self> {
        Self::new(prime, m, n, Vec::new(), FiniteTail::Constant)
    }

    /// Build from explicit values `psi_p(p^(kn))`, `k = 1..=K`, each of which must be `p^(-m z)`.
    pub fn from_values(prime: u64, m: u32, n: u32, values: &[BigRational], tail: FiniteTail) -> Result<Self> {
        let mut z = Vec::with_capacity(values.len());
        for v in values {
            let e = match sring::padic_valuation(v, prime).finite() {
                Some(e) if *v == prime_power(prime, e) => -e,
                _ => return Err(Error::InvalidApprox(format!("{v} is not a power of {prime}"))),
            };
            if e < 0 || e % m as i64 != 0 {
                return Err(Error::InvalidApprox(format!("{v} is not in {prime}^(-{m}N)")));
            }
            z.push((e / m as i64) as u32);
        }
        Self::new(prime, m, n, z, tail)
    }

    pub fn prime(&self) -> u64 {
        self.prime
    }

    pub fn tail(&self) -> &FiniteTail {
        &self.tail
    }

    pub fn explicit(&self) -> &[u32] {
        &self.z
    }

    /// `z_k`, with `z_k = 0` for `k <= 0`.
    pub fn exponent(&self, k: i64) -> u32 {
        if k <= 0 {
            return 0;
        }
        let kk = k as usize;
        if kk <= self.z.len() {
            return self.z[kk - 1];
        }
        match self.tail {
            FiniteTail::Constant => self.z.last().copied().unwrap_or(0),
            FiniteTail::Linear { alpha, beta } => (alpha as i64 * k + beta).max(0) as u32,
        }
    }

    /// The threshold `j` with `psi_p(||y||_p^n)^(1/m) = p^(-j)` when `||y||_p = p^e`.
    pub fn threshold_for_norm(&self, norm_exp: Option<i64>) -> u32 {
        norm_exp.map_or(0, |e| self.exponent(e))
    }

    pub fn evaluate(&self, t: &BigRational) -> BigRational {
        let one = BigRational::one();
        if *t < one {
            return one;
        }
        // floor(log_p t)
        let fl = t.floor().to_integer();
        let pb = BigInt::from(self.prime);
        let mut j = 0i64;
        let mut pw = pb.clone();
        while pw <= fl {
            j += 1;
            pw *= &pb;
        }
        let k = j.div_euclid(self.n as i64);
        prime_power(self.prime, -(self.m as i64) * self.exponent(k) as i64)
    }

    /// `sum_{k <= t} p^(kn) (1 - p^(-n)) psi_p(p^(kn))`: the volume of the
    /// finite-place part of the region with `T_p = p^(t n)`.
    pub fn factor_to(&self, t: i64) -> BigRational {
        let (p, n, m) = (self.prime, self.n as i64, self.m as i64);
        if t <= 0 {
            return prime_power(p, t * n);
        }
        let shell = BigRational::one() - prime_power(p, -n);
        let mut acc = BigRational::one();
        for k in 1..=t {
            acc += prime_power(p, k * n - m * self.exponent(k) as i64) * &shell;
        }
        acc
    }

    /// The same sum over all `k`: `None` when it diverges.
    pub fn factor_total(&self) -> Option<BigRational> {
        let (p, n, m) = (self.prime, self.n as i64, self.m as i64);
        let FiniteTail::Linear { alpha, beta } = self.tail else {
            return None;
        };
        if m * alpha as i64 <= n {
            return None;
        }
        let big_k = self.z.len() as i64;
        let shell = BigRational::one() - prime_power(p, -n);
        let head = self.factor_to(big_k);
        // sum_{k > K} p^(k(n - m alpha) - m beta)
        let x = prime_power(p, n - m * alpha as i64);
        let geo = pow_int(&x, &BigInt::from(big_k + 1)) / (BigRational::one() - &x);
        Some(head + shell * prime_power(p, -m * beta) * geo)
    }
}

/// JSON form of a finite-place function.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FiniteSpec {
    ConstantOne,
    Steps {
        z: Vec<u32>,
        tail: FiniteTail,
    },
    Values {
        #[serde(with = "ratio_str::vec")]
        values: Vec<BigRational>,
        tail: FiniteTail,
    },
}

/// JSON form of a collection `psi`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsiSpec {
    pub real: RealApproxFunction,
    #[serde(default)]
    pub finite: BTreeMap<u64, FiniteSpec>,
}

impl PsiSpec {
    pub fn constant_one(places: &PlaceSet) -> Self {
        Self {
            real: RealApproxFunction::ConstantOne,
            finite: places.primes().iter().map(|&p| (p, FiniteSpec::ConstantOne)).collect(),
        }
    }
}

/// `psi = (psi_p)_{p in S}` for fixed dimensions `(m, n)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApproxCollection {
    real: RealApproxFunction,
    finite: BTreeMap<u64, FiniteApproxFunction>,
    m: u32,
    n: u32,
}

/// The sign of an inflation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// Outcome of the divergence test for `int_{Q_S^n} prod_p psi_p(||y||_p^n) dy`.
#[derive(Clone, Debug, PartialEq)]
pub enum Divergence {
    Divergent,
    Convergent(IntegralValue),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegralValue {
    /// `int_0^inf psi_inf`.
    pub real_integral: Quantity,
    /// `2^n int_0^inf psi_inf`.
    pub real_factor: Quantity,
    pub finite_factors: BTreeMap<u64, BigRational>,
    pub total: Quantity,
}

impl ApproxCollection {
    /// A collection with `psi_inf = 1` on `(0, 1]`.
    pub fn new(
        real: RealApproxFunction,
        finite: BTreeMap<u64, FiniteApproxFunction>,
        places: &PlaceSet,
        m: u32,
        n: u32,
    ) -> Result<Self> {
        let c = Self::new_unnormalized(real, finite, places, m, n)?;
        if !c.real.is_normalized() {
            return Err(Error::InvalidApprox("psi_inf must equal 1 on (0, 1]".into()));
        }
        Ok(c)
    }

    /// Structural checks only; used for inflated and rescaled collections.
    pub fn new_unnormalized(
        real: RealApproxFunction,
        finite: BTreeMap<u64, FiniteApproxFunction>,
        places: &PlaceSet,
        m: u32,
        n: u32,
    ) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidApprox("dimensions must be positive".into()));
        }
        real.validate()?;
        let keys: Vec<u64> = finite.keys().copied().collect();
        if keys != places.primes() {
            return Err(Error::InvalidApprox(format!(
                "finite functions given for {keys:?}, places are {:?}",
                places.primes()
            )));
        }
        for f in finite.values() {
            if f.m != m || f.n != n {
                return Err(Error::InvalidApprox(format!(
                    "function at {} has dimensions ({}, {}), expected ({m}, {n})",
                    f.prime, f.m, f.n
                )));
            }
        }
        Ok(Self { real, finite, m, n })
    }

    pub fn constant_one(places: &PlaceSet, m: u32, n: u32) -> Result<Self> {
        Self::from_spec(&PsiSpec::constant_one(places), places, m, n)
    }

    pub fn from_spec(spec: &PsiSpec, places: &PlaceSet, m: u32, n: u32) -> Result<Self> {
        let mut finite = BTreeMap::new();
        for (&p, fs) in &spec.finite {
            let f = match fs {
                FiniteSpec::ConstantOne => FiniteApproxFunction::constant_one(p, m, n)?,
                FiniteSpec::Steps { z, tail } => FiniteApproxFunction::new(p, m, n, z.clone(), tail.clone())?,
                FiniteSpec::Values { values, tail } => FiniteApproxFunction::from_values(p, m, n, values, tail.clone())?,
            };
            finite.insert(p, f);
        }
        Self::new(spec.real.clone(), finite, places, m, n)
    }

    pub fn from_json(json: &str, places: &PlaceSet, m: u32, n: u32) -> Result<Self> {
        let spec: PsiSpec = serde_json::from_str(json)?;
        Self::from_spec(&spec, places, m, n)
    }

    pub fn real(&self) -> &RealApproxFunction {
        &self.real
    }

    pub fn finite(&self, p: u64) -> Option<&FiniteApproxFunction> {
        self.finite.get(&p)
    }

    pub fn finite_functions(&self) -> &BTreeMap<u64, FiniteApproxFunction> {
        &self.finite
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.m, self.n)
    }

    pub fn primes(&self) -> impl Iterator<Item = u64> + '_ {
        self.finite.keys().copied()
    }

    pub fn places(&self) -> PlaceSet {
        PlaceSet::new(self.primes()).expect("collection keys are distinct primes")
    }

    pub fn evaluate(&self, place: Place, t: &BigRational) -> Result<PsiValue> {
        match place {
            Place::Infinite => Ok(self.real.evaluate(t)),
            Place::Finite(p) => self
                .finite
                .get(&p)
                .map(|f| PsiValue::Exact(f.evaluate(t)))
                .ok_or_else(|| Error::InvalidApprox(format!("no function at {p}"))),
        }
    }

    /// Replace the real component, keeping the finite ones.
    pub fn with_real(&self, real: RealApproxFunction) -> Result<Self> {
        Self::new_unnormalized(real, self.finite.clone(), &self.places(), self.m, self.n)
    }

    pub fn with_finite(&self, f: FiniteApproxFunction) -> Result<Self> {
        let mut finite = self.finite.clone();
        finite.insert(f.prime, f);
        Self::new_unnormalized(self.real.clone(), finite, &self.places(), self.m, self.n)
    }

    /// `(1+eps)^(+-1) psi_inf((1+eps)^(-+1) t)` at the real place, finite places unchanged.
    pub fn inflate(&self, eps: &BigRational, sign: Sign) -> Result<Self> {
        if !eps.is_positive() {
            return Err(Error::InvalidApprox(format!("inflation needs eps > 0, got {eps}")));
        }
        let f = BigRational::one() + eps;
        let (v, k) = match sign {
            Sign::Plus => (f.clone(), f.recip()),
            Sign::Minus => (f.recip(), f),
        };
        self.with_real(RealApproxFunction::scaled(self.real.clone(), v, k))
    }

    pub fn integral_diverges(&self) -> Result<Divergence> {
        let mut finite_factors = BTreeMap::new();
        let mut finite_divergent = false;
        for (&p, f) in &self.finite {
            match f.factor_total() {
                Some(v) => {
                    finite_factors.insert(p, v);
                }
                None => finite_divergent = true,
            }
        }
        let real = match self.real.integral_total() {
            Ok(r) => r,
            // all factors are positive, so one divergent factor settles it
            Err(_) if finite_divergent => return Ok(Divergence::Divergent),
            Err(e) => return Err(e),
        };
        let Some(real_integral) = real else {
            return Ok(Divergence::Divergent);
        };
        if finite_divergent {
            return Ok(Divergence::Divergent);
        }
        let real_factor = real_integral.scale(&BigRational::from_integer(BigInt::from(1u64 << self.n)));
        let total = finite_factors
            .values()
            .fold(real_factor.clone(), |acc, f| acc.scale(f));
        Ok(Divergence::Convergent(IntegralValue { real_integral, real_factor, finite_factors, total }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sring::{int, rat};
    use proptest::prelude::*;

    fn s2() -> PlaceSet {
        PlaceSet::new([2]).unwrap()
    }

    fn inv_square() -> RealApproxFunction {
        RealApproxFunction::power_law(int(1), int(2))
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(RealApproxFunction::ConstantOne.evaluate(&rat(173, 10)), PsiValue::Exact(int(1)));
        let inv = RealApproxFunction::power_law(int(1), int(1));
        assert_eq!(inv.evaluate(&int(4)), PsiValue::Exact(rat(1, 4)));
        let f = FiniteApproxFunction::new(2, 1, 1, vec![1, 2, 3], FiniteTail::Linear { alpha: 1, beta: 0 }).unwrap();
        assert_eq!(f.evaluate(&int(8)), rat(1, 8));
        assert_eq!(f.evaluate(&int(1)), int(1));
        assert_eq!(f.evaluate(&rat(1, 2)), int(1));
        assert_eq!(f.exponent(10), 10);
    }

    #[test]
    fn finite_block_constant() {
        // n = 2: constant on {p^(2k), p^(2k+1)}
        let f = FiniteApproxFunction::new(3, 1, 2, vec![1, 3], FiniteTail::Constant).unwrap();
        assert_eq!(f.evaluate(&int(3)), int(1));
        assert_eq!(f.evaluate(&int(9)), rat(1, 3));
        assert_eq!(f.evaluate(&int(27)), rat(1, 3));
        assert_eq!(f.evaluate(&int(81)), rat(1, 27));
        assert_eq!(f.evaluate(&int(100_000)), rat(1, 27));
    }

    #[test]
    fn validation_rejects_bad_data() {
        assert!(FiniteApproxFunction::new(2, 1, 1, vec![2, 1], FiniteTail::Constant).is_err());
        assert!(FiniteApproxFunction::new(2, 1, 1, vec![3], FiniteTail::Linear { alpha: 1, beta: 0 }).is_err());
        // 1/2 is not in 2^(-2N) for m = 2
        assert!(FiniteApproxFunction::from_values(2, 2, 1, &[rat(1, 2)], FiniteTail::Constant).is_err());
        assert!(FiniteApproxFunction::from_values(2, 1, 1, &[rat(1, 3)], FiniteTail::Constant).is_err());
        let ok = FiniteApproxFunction::from_values(2, 2, 1, &[rat(1, 4), rat(1, 16)], FiniteTail::Constant).unwrap();
        assert_eq!(ok.explicit(), &[1, 2]);

        let s = s2();
        let fin = || [(2, FiniteApproxFunction::constant_one(2, 1, 1).unwrap())].into();
        // not 1 on (0, 1]
        let early = RealApproxFunction::Step { breakpoints: vec![StepPoint { at: rat(1, 2), value: rat(1, 2) }], tail: None };
        assert!(ApproxCollection::new(early, fin(), &s, 1, 1).is_err());
        let small_c = RealApproxFunction::power_law(rat(1, 2), int(1));
        assert!(ApproxCollection::new(small_c, fin(), &s, 1, 1).is_err());
        let increasing = RealApproxFunction::Step {
            breakpoints: vec![
                StepPoint { at: int(2), value: rat(1, 4) },
                StepPoint { at: int(3), value: rat(1, 2) },
            ],
            tail: None,
        };
        assert!(ApproxCollection::new(increasing, fin(), &s, 1, 1).is_err());
        // missing finite place
        assert!(ApproxCollection::new(RealApproxFunction::ConstantOne, BTreeMap::new(), &s, 1, 1).is_err());
    }

    #[test]
    fn divergence_examples() {
        let s = s2();
        let one = ApproxCollection::constant_one(&s, 1, 1).unwrap();
        assert_eq!(one.integral_diverges().unwrap(), Divergence::Divergent);

        let fin_one = [(2, FiniteApproxFunction::constant_one(2, 1, 1).unwrap())].into();
        let div = ApproxCollection::new(inv_square(), fin_one, &s, 1, 1).unwrap();
        assert_eq!(div.integral_diverges().unwrap(), Divergence::Divergent);

        let z2k = [(2, FiniteApproxFunction::new(2, 1, 1, vec![], FiniteTail::Linear { alpha: 2, beta: 0 }).unwrap())].into();
        let conv = ApproxCollection::new(inv_square(), z2k, &s, 1, 1).unwrap();
        match conv.integral_diverges().unwrap() {
            Divergence::Convergent(v) => {
                assert_eq!(v.real_integral, Quantity::Exact(int(2)));
                assert_eq!(v.real_factor, Quantity::Exact(int(4)));
                // 1 + sum_k 2^k (1/2) 2^(-2k) = 3/2
                assert_eq!(v.finite_factors[&2], rat(3, 2));
                assert_eq!(v.total, Quantity::Exact(int(6)));
            }
            d => panic!("expected convergence, got {d:?}"),
        }
    }

    #[test]
    fn step_without_tail_is_undecidable() {
        let s = PlaceSet::real_only();
        let step = RealApproxFunction::Step { breakpoints: vec![StepPoint { at: int(2), value: rat(1, 2) }], tail: None };
        let c = ApproxCollection::new(step, BTreeMap::new(), &s, 1, 1).unwrap();
        assert!(matches!(c.integral_diverges(), Err(Error::Undecidable(_))));
    }

    #[test]
    fn log_law_boundary() {
        let s = PlaceSet::real_only();
        let mk = |b| ApproxCollection::new(RealApproxFunction::LogLaw { c: int(1), b }, BTreeMap::new(), &s, 1, 1).unwrap();
        assert_eq!(mk(int(1)).integral_diverges().unwrap(), Divergence::Divergent);
        match mk(int(2)).integral_diverges().unwrap() {
            // 1 + int_1^inf dr / (r (1 + ln r)^2) = 2
            Divergence::Convergent(v) => assert!((v.real_integral.value() - 2.0).abs() < 1e-9),
            d => panic!("{d:?}"),
        }
    }

    #[test]
    fn inflate_examples() {
        let s = s2();
        let one = ApproxCollection::constant_one(&s, 1, 1).unwrap();
        let up = one.inflate(&int(1), Sign::Plus).unwrap();
        assert_eq!(up.real().evaluate(&rat(1, 2)), PsiValue::Exact(int(2)));
        assert_eq!(up.real().evaluate(&int(7)), PsiValue::Exact(int(2)));
        assert_eq!(up.finite(2), one.finite(2));

        let fin = [(2, FiniteApproxFunction::constant_one(2, 1, 1).unwrap())].into();
        let inv = ApproxCollection::new(RealApproxFunction::power_law(int(1), int(1)), fin, &s, 1, 1).unwrap();
        let eps = rat(1, 3);
        let f = int(1) + &eps;
        let up = inv.inflate(&eps, Sign::Plus).unwrap();
        for t in [rat(1, 5), int(1), rat(4, 3), int(2), int(9)] {
            let expected = f.clone().min(&f * &f / &t);
            assert_eq!(up.real().evaluate(&t), PsiValue::Exact(expected));
        }
        let back = up.inflate(&eps, Sign::Minus).unwrap();
        assert_eq!(back, inv);
    }

    fn catalog() -> impl Strategy<Value = RealApproxFunction> {
        prop_oneof![
            Just(RealApproxFunction::ConstantOne),
            (1i64..5, 1i64..4, 1i64..3).prop_map(|(c, a, ad)| RealApproxFunction::power_law(int(c), rat(a, ad))),
            (1i64..5, 0i64..3).prop_map(|(c, b)| RealApproxFunction::LogLaw { c: int(c), b: int(b) }),
            proptest::collection::vec((1i64..4, 1i64..4), 0..4).prop_map(|steps| {
                let mut at = int(1);
                let mut v = int(1);
                let breakpoints = steps
                    .into_iter()
                    .map(|(da, dv)| {
                        at += int(da);
                        v /= int(dv);
                        StepPoint { at: at.clone(), value: v.clone() }
                    })
                    .collect();
                RealApproxFunction::Step { breakpoints, tail: Some(StepTail::Hold) }
            }),
        ]
    }

    proptest! {
        #[test]
        fn evaluate_is_non_increasing(f in catalog(), mut grid in proptest::collection::vec((1i64..5000, 1i64..50), 2..20)) {
            grid.sort_by(|a, b| rat(a.0, a.1).cmp(&rat(b.0, b.1)));
            let mut prev: Option<PsiValue> = None;
            for (a, b) in grid {
                let v = f.evaluate(&rat(a, b));
                if let Some(p) = &prev {
                    prop_assert!(v.lower() <= p.upper());
                }
                prop_assert!(v.lower().is_positive());
                prev = Some(v);
            }
            prop_assert_eq!(f.evaluate(&rat(1, 2)), PsiValue::Exact(int(1)));
        }

        #[test]
        fn inflation_brackets(f in catalog(), eps in (1i64..10, 1i64..10), grid in proptest::collection::vec((1i64..500, 1i64..20), 1..20)) {
            let s = PlaceSet::real_only();
            let c = ApproxCollection::new(f, BTreeMap::new(), &s, 1, 1).unwrap();
            let e = rat(eps.0, eps.1);
            let up = c.inflate(&e, Sign::Plus).unwrap();
            let down = c.inflate(&e, Sign::Minus).unwrap();
            for (a, b) in grid {
                let t = rat(a, b);
                let (u, v, d) = (up.real().evaluate(&t), c.real().evaluate(&t), down.real().evaluate(&t));
                prop_assert!(u.upper() >= v.lower());
                prop_assert!(v.upper() >= d.lower());
            }
        }

        #[test]
        fn finite_factor_partial_sums_approach_total(alpha in 2u32..4, beta in 0i64..3, z0 in proptest::collection::vec(0u32..3, 0..3)) {
            let mut z = z0;
            z.sort_unstable();
            let next = alpha as i64 * (z.len() as i64 + 1) + beta;
            prop_assume!(next >= z.last().copied().unwrap_or(0) as i64);
            let f = FiniteApproxFunction::new(3, 1, 1, z, FiniteTail::Linear { alpha, beta }).unwrap();
            let total = f.factor_total().unwrap();
            let partial = f.factor_to(60);
            prop_assert!(partial <= total);
            prop_assert!(to_f64(&(&total - &partial)) < 1e-20);
        }
    }

    #[test]
    fn psi_spec_json() {
        let s = PlaceSet::new([2, 3]).unwrap();
        let json = r#"{
            "real": {"kind": "power_law", "c": "1", "a": "2"},
            "finite": {
                "2": {"kind": "steps", "z": [1, 2], "tail": {"kind": "linear", "alpha": 2, "beta": -2}},
                "3": {"kind": "values", "values": ["1/3"], "tail": {"kind": "constant"}}
            }
        }"#;
        let c = ApproxCollection::from_json(json, &s, 1, 1).unwrap();
        assert_eq!(c.finite(2).unwrap().exponent(3), 4);
        assert_eq!(c.finite(3).unwrap().exponent(5), 1);
        assert!(ApproxCollection::from_json(r#"{"real": {"kind": "nope"}}"#, &s, 1, 1).is_err());
    }
}
