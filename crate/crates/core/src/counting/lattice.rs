//! Affine S-lattices `g(Z_S^d + s)`, the congruence rescaling and discrepancy.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::TruncatedMatrix;
use crate::approx::{ApproxCollection, Quantity, RealApproxFunction};
use crate::error::{Error, Result};
use crate::sring::{enumerate_box, norm_exponent, padic_valuation, sup_norm, BoxBounds, NormProfile, PlaceSet, Valuation};
use crate::volume::{contains, volume_exact, AdelicPoint, Region};

/// `(psi', T', v/N)` with `psi'_inf(t) = psi_inf(N^n t) / N^m` and `T'_inf = T_inf / N^n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rescaled {
    pub psi: ApproxCollection,
    pub profile: NormProfile,
    pub shift: Vec<BigRational>,
}

pub fn rescale_congruence(psi: &ApproxCollection, profile: &NormProfile, modulus: u64, shift: &[BigRational]) -> Result<Rescaled> {
    let places = psi.places();
    places.check_modulus(modulus)?;
    let (m, n) = psi.dims();
    if shift.len() != (m + n) as usize {
        return Err(Error::DimensionMismatch { expected: (m + n) as usize, found: shift.len() });
    }
    let nn = BigRational::from_integer(BigInt::from(modulus));
    let nm = num_traits::pow(nn.clone(), m as usize);
    let nnn = num_traits::pow(nn.clone(), n as usize);
    let real = RealApproxFunction::scaled(psi.real().clone(), nm.recip(), nnn.clone());
    Ok(Rescaled {
        psi: psi.with_real(real)?,
        profile: profile.with_real(profile.real() / &nnn)?,
        shift: shift.iter().map(|v| v / &nn).collect(),
    })
}

type Matrix = Vec<Vec<BigRational>>;

/// `Lambda = g(Z_S^d + shift)` with a generator `g_p` at every place of `S`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffineLatticeSpec {
    m: usize,
    real: Matrix,
    finite: BTreeMap<u64, Matrix>,
    shift: Vec<BigRational>,
}

fn determinant(a: &Matrix) -> BigRational {
    let d = a.len();
    let mut a = a.clone();
    let mut det = BigRational::one();
    for c in 0..d {
        let Some(piv) = (c..d).find(|&r| !a[r][c].is_zero()) else {
            return BigRational::zero();
        };
        if piv != c {
            a.swap(piv, c);
            det = -det;
        }
        det *= &a[c][c];
        for r in c + 1..d {
            let f = &a[r][c] / &a[c][c];
            for k in c..d {
                let v = &f * &a[c][k];
                a[r][k] -= v;
            }
        }
    }
    det
}

fn inverse(a: &Matrix) -> Option<Matrix> {
    let d = a.len();
    let mut aug: Vec<Vec<BigRational>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..d).map(|j| if i == j { BigRational::one() } else { BigRational::zero() }));
            row
        })
        .collect();
    for c in 0..d {
        let piv = (c..d).find(|&r| !aug[r][c].is_zero())?;
        aug.swap(piv, c);
        let inv = aug[c][c].recip();
        for k in 0..2 * d {
            aug[c][k] *= &inv;
        }
        for r in 0..d {
            if r != c && !aug[r][c].is_zero() {
                let f = aug[r][c].clone();
                for k in 0..2 * d {
                    let v = &f * &aug[c][k];
                    aug[r][k] -= v;
                }
            }
        }
    }
    Some(aug.into_iter().map(|r| r[d..].to_vec()).collect())
}

fn apply(g: &Matrix, x: &[BigRational]) -> Vec<BigRational> {
    g.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

impl AffineLatticeSpec {
    /// `m` is the split `Q_S^d = Q_S^m x Q_S^n` used when testing membership in regions.
    pub fn new(m: usize, real: Matrix, finite: BTreeMap<u64, Matrix>, shift: Vec<BigRational>) -> Result<Self> {
        let d = real.len();
        if d == 0 || m >= d {
            return Err(Error::DimensionMismatch { expected: m + 1, found: d });
        }
        for g in std::iter::once(&real).chain(finite.values()) {
            if g.len() != d || g.iter().any(|r| r.len() != d) {
                return Err(Error::DimensionMismatch { expected: d, found: g.len() });
            }
        }
        if shift.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: shift.len() });
        }
        if determinant(&real).abs() != BigRational::one() {
            return Err(Error::InvalidApprox("real generator must have |det| = 1".into()));
        }
        for (&p, g) in &finite {
            if padic_valuation(&determinant(g), p) != Valuation::Finite(0) {
                return Err(Error::InvalidApprox(format!("generator at {p} must have |det|_{p} = 1")));
            }
        }
        Ok(Self { m, real, finite, shift })
    }

    /// `Z_S^d + shift`.
    pub fn standard(places: &PlaceSet, m: usize, n: usize, shift: Vec<BigRational>) -> Result<Self> {
        let id = identity(m + n);
        Self::new(m, id.clone(), places.primes().iter().map(|&p| (p, id.clone())).collect(), shift)
    }

    /// `u_A(Z_S^d + shift)` with `u_A = [[I_m, A], [0, I_n]]` at every place.
    pub fn unipotent(a: &TruncatedMatrix, shift: Vec<BigRational>) -> Result<Self> {
        let (m, n) = a.dims();
        let build = |block: Vec<Vec<BigRational>>| {
            let mut g = identity(m + n);
            for (i, row) in block.into_iter().enumerate() {
                for (j, x) in row.into_iter().enumerate() {
                    g[i][m + j] = x;
                }
            }
            g
        };
        let real = build(a.real_part().to_vec());
        let finite = a
            .primes()
            .map(|p| {
                let rows = a.finite_part(p).expect("listed prime");
                (p, build(rows.iter().map(|r| r.iter().map(|x| BigRational::from_integer(x.clone())).collect()).collect()))
            })
            .collect();
        Self::new(m, real, finite, shift)
    }

    /// `g = [[I_m, B], [0, I_n]]` at every place.
    fn is_unipotent(&self) -> bool {
        let d = self.dim();
        std::iter::once(&self.real).chain(self.finite.values()).all(|g| {
            (0..d).all(|i| {
                (0..d).all(|j| {
                    let upper_right = i < self.m && j >= self.m;
                    upper_right || g[i][j] == if i == j { BigRational::one() } else { BigRational::zero() }
                })
            })
        })
    }

    pub fn dim(&self) -> usize {
        self.real.len()
    }

    fn image(&self, lambda: &[BigRational], places: &PlaceSet) -> AdelicPoint {
        let split = |v: Vec<BigRational>| {
            let (x, y) = v.split_at(self.m);
            (x.to_vec(), y.to_vec())
        };
        AdelicPoint {
            real: split(apply(&self.real, lambda)),
            finite: places.primes().iter().map(|&p| (p, split(apply(&self.finite[&p], lambda)))).collect(),
        }
    }
}

fn identity(d: usize) -> Matrix {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { BigRational::one() } else { BigRational::zero() }).collect())
        .collect()
}

/// The points of `Lambda` inside `region`.
pub fn lattice_points_in(spec: &AffineLatticeSpec, region: &Region, budget: u64) -> Result<Vec<AdelicPoint>> {
    let places = region.places();
    let (m, n) = region.dims();
    let d = spec.dim();
    if d != (m + n) as usize || spec.m != m as usize {
        return Err(Error::DimensionMismatch { expected: (m + n) as usize, found: d });
    }
    if spec.finite.keys().copied().collect::<Vec<_>>() != places.primes() {
        return Err(Error::InvalidProfile("lattice and region have different places".into()));
    }
    if spec.is_unipotent() {
        unipotent_points_in(spec, region, budget)
    } else {
        general_points_in(spec, region, budget)
    }
}

fn general_points_in(spec: &AffineLatticeSpec, region: &Region, budget: u64) -> Result<Vec<AdelicPoint>> {
    let places = region.places();
    let d = spec.dim();
    // bounding box of the region at each place, pulled back through g^(-1)
    let one = BigRational::one();
    let r_inf = region.psi().real().sup().max(one.clone()).max(region.profile().real().clone());
    let g_inv = inverse(&spec.real).expect("unimodular");
    let op = g_inv.iter().map(|r| r.iter().map(|x| x.abs()).sum::<BigRational>()).max().expect("d > 0");
    let real_bound = op * r_inf + sup_norm(&spec.shift);
    let mut finite = BTreeMap::new();
    for &p in places.primes() {
        let inv = inverse(&spec.finite[&p]).expect("unimodular");
        let flat: Vec<BigRational> = inv.into_iter().flatten().collect();
        let op = norm_exponent(&flat, p).unwrap_or(0);
        let k = (op + region.finite_block(p).max(0)).max(norm_exponent(&spec.shift, p).unwrap_or(0));
        finite.insert(p, k);
    }
    let boxed = enumerate_box(d, &BoxBounds::new(real_bound, finite)?, None, &places)?;
    if boxed.len() > budget as u128 {
        return Err(Error::BudgetExceeded { limit: budget });
    }
    let mut out = Vec::new();
    for lambda0 in boxed.points() {
        let lambda: Vec<BigRational> = lambda0.coords().iter().zip(&spec.shift).map(|(a, b)| a + b).collect();
        let pt = spec.image(&lambda, &places);
        if contains(region, &pt)? {
            out.push(pt);
        }
    }
    Ok(out)
}

/// `offset + b / den` for every integer `b` with the value in `[lo, hi]`.
fn axis(lo: &BigRational, hi: &BigRational, den: &BigInt, offset: &BigRational) -> Vec<BigRational> {
    let d = BigRational::from_integer(den.clone());
    let b_lo = ((lo - offset) * &d).ceil().to_integer();
    let b_hi = ((hi - offset) * &d).floor().to_integer();
    let mut out = Vec::new();
    let mut b = b_lo;
    while b <= b_hi {
        out.push(offset + BigRational::new(b.clone(), den.clone()));
        b += 1u32;
    }
    out
}

fn product<T: Clone>(axes: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new()];
    for a in axes {
        out = out
            .into_iter()
            .flat_map(|v| {
                a.iter().map(move |x| {
                    let mut w = v.clone();
                    w.push(x.clone());
                    w
                })
            })
            .collect();
    }
    out
}

/// Points of `[[I, B], [0, I]](Z_S^d + s)`: `y` runs over `s_y + Z_S^n`, then `x` over
/// `s_x + B y + Z_S^m` inside the unit window at every place.
fn unipotent_points_in(spec: &AffineLatticeSpec, region: &Region, budget: u64) -> Result<Vec<AdelicPoint>> {
    let places = region.places();
    let (m, d) = (spec.m, spec.dim());
    let n = d - m;
    let (sx, sy) = spec.shift.split_at(m);
    let mut spent = 0u64;
    let mut spend = |k: usize| {
        spent = spent.saturating_add(k as u64);
        if spent > budget {
            Err(Error::BudgetExceeded { limit: budget })
        } else {
            Ok(())
        }
    };

    let mut den_y = BigInt::one();
    for &p in places.primes() {
        let k = region.finite_block(p).max(norm_exponent(sy, p).unwrap_or(0)).max(0);
        den_y *= BigInt::from(p).pow(k as u32);
    }
    let r = {
        let t = region.profile().real();
        let root = t.floor().to_integer().nth_root(n as u32) + 1u32;
        BigRational::from_integer(root)
    };
    let axes: Vec<Vec<BigRational>> = sy.iter().map(|s| axis(&-&r, &r, &den_y, s)).collect();
    spend(axes.iter().map(Vec::len).product())?;
    let w = region.psi().real().sup().max(BigRational::one());
    let block = |g: &Matrix, y: &[BigRational]| -> Vec<BigRational> {
        (0..m).map(|i| &sx[i] + (0..n).map(|j| &g[i][m + j] * &y[j]).sum::<BigRational>()).collect()
    };

    let mut out = Vec::new();
    for y in product(&axes) {
        if num_traits::pow(sup_norm(&y), n) > *region.profile().real()
            || places
                .primes()
                .iter()
                .any(|&p| norm_exponent(&y, p).is_some_and(|k| k > region.finite_block(p)))
        {
            continue;
        }
        let c_inf = block(&spec.real, &y);
        let c_fin: Vec<(u64, Vec<BigRational>)> = places.primes().iter().map(|&p| (p, block(&spec.finite[&p], &y))).collect();
        let mut cand = Vec::with_capacity(m);
        for i in 0..m {
            let mut den = BigInt::one();
            for (p, c) in &c_fin {
                let v = match padic_valuation(&c[i], *p) {
                    Valuation::Finite(v) => (-v).max(0),
                    Valuation::Infinite => 0,
                };
                den *= BigInt::from(*p).pow(v as u32);
            }
            let lam = axis(&(-&w - &c_inf[i]), &(&w - &c_inf[i]), &den, &BigRational::zero());
            spend(lam.len())?;
            let keep: Vec<BigRational> = lam
                .into_iter()
                .filter(|l| {
                    places.is_s_integer(l)
                        && c_fin.iter().all(|(p, c)| match padic_valuation(&(l + &c[i]), *p) {
                            Valuation::Finite(v) => v >= 0,
                            Valuation::Infinite => true,
                        })
                })
                .collect();
            if keep.is_empty() {
                break;
            }
            cand.push(keep);
        }
        if cand.len() < m {
            continue;
        }
        let combos = product(&cand);
        spend(combos.len())?;
        for lam in combos {
            let add = |c: &[BigRational]| lam.iter().zip(c).map(|(a, b)| a + b).collect::<Vec<_>>();
            let pt = AdelicPoint {
                real: (add(&c_inf), y.clone()),
                finite: c_fin.iter().map(|(p, c)| (*p, (add(c), y.clone()))).collect(),
            };
            if contains(region, &pt)? {
                out.push(pt);
            }
        }
    }
    Ok(out)
}

fn abs_difference(count: u64, volume: &Quantity) -> Quantity {
    let c = BigRational::from_integer(BigInt::from(count));
    match volume {
        Quantity::Exact(v) => Quantity::Exact((c - v).abs()),
        Quantity::Approx { value, error } => Quantity::Approx {
            value: (c.to_f64().unwrap_or(f64::INFINITY) - value).abs(),
            error: *error,
        },
    }
}

/// `D(Lambda, E) = |#(Lambda cap E) - vol(E)|` for an explicit point list.
pub fn discrepancy_points(points: &[AdelicPoint], region: &Region) -> Result<Quantity> {
    let mut count = 0u64;
    for pt in points {
        if contains(region, pt)? {
            count += 1;
        }
    }
    Ok(abs_difference(count, &volume_exact(region).total))
}

/// `D(Lambda, E)` for an affine lattice, enumerating `Lambda cap E`.
pub fn discrepancy(spec: &AffineLatticeSpec, region: &Region, budget: u64) -> Result<Quantity> {
    let count = lattice_points_in(spec, region, budget)?.len() as u64;
    Ok(abs_difference(count, &volume_exact(region).total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counting::{count_solutions, CountRequest, Congruence};
    use crate::sring::{int, rat};

    #[test]
    fn rescale_examples() {
        let s = PlaceSet::new([2]).unwrap();
        let psi = ApproxCollection::constant_one(&s, 1, 1).unwrap();
        let t = NormProfile::new(int(25), [(2, 1)].into()).unwrap();
        let id = rescale_congruence(&psi, &t, 1, &[int(0), int(0)]).unwrap();
        assert_eq!(id.psi, psi);
        assert_eq!(id.profile, t);
        let r = rescale_congruence(&psi, &t, 5, &[int(1), int(2)]).unwrap();
        assert_eq!(r.profile.real(), &int(5));
        assert_eq!(r.psi.real().evaluate(&int(3)).exact().unwrap(), &rat(1, 5));
        assert_eq!(r.shift, vec![rat(1, 5), rat(2, 5)]);
        assert!(rescale_congruence(&psi, &t, 2, &[int(0), int(0)]).is_err());
    }

    #[test]
    fn standard_lattice_unit_box() {
        for (m, n) in [(1usize, 1usize), (2, 1), (1, 2)] {
            let s = PlaceSet::new([2]).unwrap();
            let psi = ApproxCollection::constant_one(&s, m as u32, n as u32).unwrap();
            let region = Region::new(psi, NormProfile::new(int(1), [(2, 0)].into()).unwrap()).unwrap();
            let lat = AffineLatticeSpec::standard(&s, m, n, vec![int(0); m + n]).unwrap();
            let d = discrepancy(&lat, &region, 1_000_000).unwrap();
            let expected = 3i64.pow((m + n) as u32) - 2i64.pow((m + n) as u32);
            assert_eq!(d, Quantity::Exact(int(expected)));
        }
    }

    #[test]
    fn disjoint_points() {
        let s = PlaceSet::new([2]).unwrap();
        let psi = ApproxCollection::constant_one(&s, 1, 1).unwrap();
        let region = Region::new(psi, NormProfile::new(int(2), [(2, 1)].into()).unwrap()).unwrap();
        let far = AdelicPoint::diagonal(vec![int(100)], vec![int(0)], &s);
        assert_eq!(discrepancy_points(&[far], &region).unwrap(), Quantity::Exact(int(16)));
    }

    #[test]
    fn unipotent_matches_counter() {
        let s = PlaceSet::new([3]).unwrap();
        let a = TruncatedMatrix::new(
            vec![vec![rat(2, 7)], vec![rat(5, 11)]],
            [(3, vec![vec![BigInt::from(4)], vec![BigInt::from(20)]])].into(),
            [(3, 6)].into(),
            &s,
        )
        .unwrap();
        let psi = ApproxCollection::constant_one(&s, 2, 1).unwrap();
        let t = NormProfile::new(int(4), [(3, 1)].into()).unwrap();
        let region = Region::new(psi.clone(), t.clone()).unwrap();
        let lat = AffineLatticeSpec::unipotent(&a, vec![int(0); 3]).unwrap();
        let pts = lattice_points_in(&lat, &region, 10_000_000).unwrap();
        let req = CountRequest::new(a, psi, t, Congruence::trivial(3)).unwrap();
        assert_eq!(pts.len() as u64, count_solutions(&req).unwrap());
    }

    #[test]
    fn enumeration_paths_agree() {
        let s = PlaceSet::new([2]).unwrap();
        let a = TruncatedMatrix::new(vec![vec![rat(3, 5)]], [(2, vec![vec![BigInt::from(3)]])].into(), [(2, 4)].into(), &s)
            .unwrap();
        let psi = ApproxCollection::new(
            RealApproxFunction::power_law(int(1), int(1)),
            [(2, crate::approx::FiniteApproxFunction::new(2, 1, 1, vec![1], crate::approx::FiniteTail::Constant).unwrap())]
                .into(),
            &s,
            1,
            1,
        )
        .unwrap();
        let region = Region::new(psi, NormProfile::new(rat(7, 2), [(2, 1)].into()).unwrap()).unwrap();
        let lat = AffineLatticeSpec::unipotent(&a, vec![rat(1, 3), rat(1, 2)]).unwrap();
        let fast = lattice_points_in(&lat, &region, 10_000_000).unwrap();
        let slow = general_points_in(&lat, &region, 10_000_000).unwrap();
        assert!(!fast.is_empty());
        assert_eq!(fast.len(), slow.len());
        assert!(fast.iter().all(|p| slow.contains(p)));
    }

    #[test]
    fn general_lattice() {
        // g = [[1, 0], [1, 1]] at every place: points (a, a + b)
        let s = PlaceSet::real_only();
        let g = vec![vec![int(1), int(0)], vec![int(1), int(1)]];
        let lat = AffineLatticeSpec::new(1, g, BTreeMap::new(), vec![int(0), int(0)]).unwrap();
        let psi = ApproxCollection::constant_one(&s, 1, 1).unwrap();
        let region = Region::new(psi, NormProfile::new(int(2), BTreeMap::new()).unwrap()).unwrap();
        // |a| <= 1, |a + b| <= 2: 3 * 5 points
        assert_eq!(lattice_points_in(&lat, &region, 1_000_000).unwrap().len(), 15);
    }

    #[test]
    fn rejects_non_unimodular() {
        let s = PlaceSet::new([2]).unwrap();
        let g = vec![vec![int(2), int(0)], vec![int(0), rat(1, 2)]];
        // real det 1 but 2-adic det 1 too: accepted
        assert!(AffineLatticeSpec::new(1, g.clone(), [(2, g.clone())].into(), vec![int(0); 2]).is_ok());
        let h = vec![vec![int(2), int(0)], vec![int(0), int(1)]];
        assert!(AffineLatticeSpec::new(1, g, [(2, h)].into(), vec![int(0); 2]).is_err());
        assert!(AffineLatticeSpec::standard(&s, 1, 1, vec![int(0)]).is_err());
    }
}
