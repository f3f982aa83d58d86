//! Number systems and combinatorial primitives shared by every formula.
//!
//! Formula code is written once against [`Scalar`] and instantiated twice:
//! with [`Rational`] for the exact identity checks and with [`Complex64`]
//! for the contour quadrature.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{AsepError, Result};

pub type Rational = BigRational;

/// Largest series index accepted by the prefactor routines.
pub const MAX_K: i64 = 64;

/// Field operations needed by the formula kernel.
pub trait Scalar:
    Clone
    + fmt::Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    /// True for the arbitrary-precision instantiation.
    const EXACT: bool;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(n: i64) -> Self;
    fn from_rational(r: &Rational) -> Self;
    fn is_zero(&self) -> bool;
    fn to_complex(&self) -> Complex64;

    fn checked_div(&self, rhs: &Self) -> Result<Self>;

    /// Integer power. A negative power of zero is a [`AsepError::DivisionByZero`].
    fn powi(&self, n: i64) -> Result<Self>;

    /// `exp(self · t)`. The exact instantiation only supports `t = 0`.
    fn exp_times(&self, t: f64) -> Result<Self>;

    fn is_one(&self) -> bool {
        *self == Self::one()
    }
}

impl Scalar for Rational {
    const EXACT: bool = true;

    fn zero() -> Self {
        Zero::zero()
    }

    fn one() -> Self {
        One::one()
    }

    fn from_i64(n: i64) -> Self {
        Rational::from_integer(BigInt::from(n))
    }

    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }

    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }

    fn to_complex(&self) -> Complex64 {
        Complex64::new(rational_to_f64(self), 0.0)
    }

    fn checked_div(&self, rhs: &Self) -> Result<Self> {
        if Zero::is_zero(rhs) {
            return Err(AsepError::DivisionByZero);
        }
        Ok(self / rhs)
    }

    fn powi(&self, n: i64) -> Result<Self> {
        if n < 0 && Zero::is_zero(self) {
            return Err(AsepError::DivisionByZero);
        }
        let e = i32::try_from(n)
            .map_err(|_| AsepError::Resource(format!("exponent {n} out of range")))?;
        Ok(num_traits::Pow::pow(self, e))
    }

    fn exp_times(&self, t: f64) -> Result<Self> {
        if t == 0.0 {
            Ok(One::one())
        } else {
            Err(AsepError::Domain(
                "exp(eps * t) is not rational for t != 0; use the floating instantiation".into(),
            ))
        }
    }
}

impl Scalar for Complex64 {
    const EXACT: bool = false;

    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }

    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }

    fn from_i64(n: i64) -> Self {
        Complex64::new(n as f64, 0.0)
    }

    fn from_rational(r: &Rational) -> Self {
        Complex64::new(rational_to_f64(r), 0.0)
    }

    fn is_zero(&self) -> bool {
        self.re == 0.0 && self.im == 0.0
    }

    fn to_complex(&self) -> Complex64 {
        *self
    }

    fn checked_div(&self, rhs: &Self) -> Result<Self> {
        if Scalar::is_zero(rhs) {
            return Err(AsepError::DivisionByZero);
        }
        Ok(self / rhs)
    }

    fn powi(&self, n: i64) -> Result<Self> {
        if n < 0 && Scalar::is_zero(self) {
            return Err(AsepError::DivisionByZero);
        }
        let e = i32::try_from(n)
            .map_err(|_| AsepError::Resource(format!("exponent {n} out of range")))?;
        Ok(Complex64::powi(self, e))
    }

    fn exp_times(&self, t: f64) -> Result<Self> {
        Ok((self * t).exp())
    }
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Parses `"3"`, `"-1/3"` or a plain decimal such as `"0.25"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    if s.is_empty() {
        return Err(AsepError::Parse("empty rational".into()));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if s.contains('/') || frac.contains(['+', '-']) {
            return Err(AsepError::Parse(format!("malformed rational {s:?}")));
        }
        let negative = int.starts_with('-');
        let int = int.trim_start_matches(['-', '+']);
        let digits = format!("{int}{frac}");
        if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
            return Err(AsepError::Parse(format!("malformed rational {s:?}")));
        }
        let numer =
            BigInt::from_str(&digits).map_err(|e| AsepError::Parse(format!("{s:?}: {e}")))?;
        let denom = num_traits::Pow::pow(BigInt::from(10), frac.len());
        let r = Rational::new(numer, denom);
        return Ok(if negative { -r } else { r });
    }
    Rational::from_str(s).map_err(|e| AsepError::Parse(format!("{s:?}: {e}")))
}

pub fn format_rational(r: &Rational) -> String {
    r.to_string()
}

/// Hop probabilities with `p + q = 1`.
///
/// This is the only restriction the dynamics themselves need; the simulator
/// accepts `q = 0` and the symmetric case.
#[derive(Debug, Clone, PartialEq)]
pub struct HopRates {
    p: Rational,
    q: Rational,
}

impl HopRates {
    pub fn new(p: Rational, q: Rational) -> Result<Self> {
        let zero = <Rational as Zero>::zero();
        let one = <Rational as One>::one();
        if p < zero || p > one || q < zero || q > one {
            return Err(AsepError::InvalidParameter(format!(
                "hop probabilities must lie in [0,1], got p={p}, q={q}"
            )));
        }
        if &p + &q != one {
            return Err(AsepError::InvalidParameter(format!(
                "p + q must equal 1, got p={p}, q={q}"
            )));
        }
        Ok(HopRates { p, q })
    }

    pub fn from_p(p: Rational) -> Result<Self> {
        let q = <Rational as One>::one() - &p;
        Self::new(p, q)
    }

    pub fn p_exact(&self) -> &Rational {
        &self.p
    }

    pub fn q_exact(&self) -> &Rational {
        &self.q
    }

    pub fn p<S: Scalar>(&self) -> S {
        S::from_rational(&self.p)
    }

    pub fn q<S: Scalar>(&self) -> S {
        S::from_rational(&self.q)
    }

    pub fn p_f64(&self) -> f64 {
        rational_to_f64(&self.p)
    }

    pub fn q_f64(&self) -> f64 {
        rational_to_f64(&self.q)
    }
}

/// Hop rates together with `τ = p/q`; requires `q ≠ 0` and `τ ≠ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    rates: HopRates,
    tau: Rational,
}

impl ModelParams {
    pub fn new(p: Rational, q: Rational) -> Result<Self> {
        let rates = HopRates::new(p, q)?;
        Self::from_rates(rates)
    }

    pub fn from_rates(rates: HopRates) -> Result<Self> {
        if Zero::is_zero(&rates.q) {
            return Err(AsepError::InvalidParameter("q must be nonzero".into()));
        }
        let tau = &rates.p / &rates.q;
        if One::is_one(&tau) {
            return Err(AsepError::DegenerateParameter(
                "tau = p/q = 1 (symmetric exclusion) is not supported".into(),
            ));
        }
        Ok(ModelParams { rates, tau })
    }

    /// Builds parameters from `p` alone, with `q = 1 - p`.
    pub fn from_p(p: Rational) -> Result<Self> {
        Self::from_rates(HopRates::from_p(p)?)
    }

    pub fn parse(p: &str, q: &str) -> Result<Self> {
        Self::new(parse_rational(p)?, parse_rational(q)?)
    }

    pub fn rates(&self) -> &HopRates {
        &self.rates
    }

    pub fn p<S: Scalar>(&self) -> S {
        self.rates.p()
    }

    pub fn q<S: Scalar>(&self) -> S {
        self.rates.q()
    }

    pub fn tau<S: Scalar>(&self) -> S {
        S::from_rational(&self.tau)
    }

    pub fn tau_exact(&self) -> &Rational {
        &self.tau
    }
}

/// A finite, strictly increasing set of positive sites `s_1 < … < s_k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SiteSet {
    sites: Vec<i64>,
}

impl SiteSet {
    pub fn new(sites: Vec<i64>) -> Result<Self> {
        if let Some(&first) = sites.first() {
            if first < 1 {
                return Err(AsepError::Domain(format!("site {first} is not positive")));
            }
        }
        if sites.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AsepError::Domain(format!(
                "sites must be strictly increasing: {sites:?}"
            )));
        }
        Ok(SiteSet { sites })
    }

    pub fn empty() -> Self {
        SiteSet { sites: Vec::new() }
    }

    /// `{1, …, n}`.
    pub fn interval(n: i64) -> Self {
        SiteSet {
            sites: (1..=n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[i64] {
        &self.sites
    }

    /// 1-based access, `get(i) = s_i`.
    pub fn get(&self, i: usize) -> Option<i64> {
        i.checked_sub(1).and_then(|j| self.sites.get(j).copied())
    }

    pub fn max(&self) -> Option<i64> {
        self.sites.last().copied()
    }

    pub fn contains(&self, site: i64) -> bool {
        self.sites.binary_search(&site).is_ok()
    }

    pub fn is_subset_of(&self, other: &SiteSet) -> bool {
        self.sites.iter().all(|&s| other.contains(s))
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> + '_ {
        self.sites.iter().copied()
    }
}

/// `[N over l]_τ`; 1 for `l = 0` and 0 for `l < 0` or `l > N`.
pub fn tau_binomial<S: Scalar>(n: i64, l: i64, tau: &S) -> Result<S> {
    if l < 0 || l > n {
        return Ok(S::zero());
    }
    let mut numer = S::one();
    let mut denom = S::one();
    for j in 0..l {
        numer = numer * (S::one() - tau.powi(n - j)?);
        denom = denom * (S::one() - tau.powi(j + 1)?);
    }
    numer.checked_div(&denom).map_err(|_| {
        AsepError::DegenerateParameter(format!(
            "tau-binomial [{n} over {l}] has a vanishing denominator (tau = {tau:?})"
        ))
    })
}

/// `#{(u, v) ∈ U × V : u ≥ v}`, by a merge over the two sorted sets.
pub fn sigma_count(u: &SiteSet, v: &SiteSet) -> u64 {
    let v = v.sites();
    let mut below = 0usize;
    let mut total = 0u64;
    for &x in u.sites() {
        while below < v.len() && v[below] <= x {
            below += 1;
        }
        total += below as u64;
    }
    total
}

fn check_lk(l: i64, k: i64) -> Result<()> {
    if l < 1 || l > k {
        return Err(AsepError::Domain(format!(
            "need 1 <= l <= k, got l={l}, k={k}"
        )));
    }
    if k > MAX_K {
        return Err(AsepError::Resource(format!(
            "k={k} exceeds the supported maximum {MAX_K}"
        )));
    }
    Ok(())
}

fn sign(l: i64) -> i64 {
    if l % 2 == 0 {
        1
    } else {
        -1
    }
}

/// `c_{l,k} · τ^{k(k+1)/2}` written with the non-negative τ-exponent
/// `(k-l)(k-l+1)/2`, so it stays finite at `τ = 0`.
pub fn combined_prefactor<S: Scalar>(l: i64, k: i64, params: &ModelParams) -> Result<S> {
    check_lk(l, k)?;
    let tau: S = params.tau();
    let q: S = params.q();
    let d = k - l;
    let value = S::from_i64(sign(l))
        * q.powi(k * (k - 1) / 2)?
        * tau.powi(d * (d + 1) / 2)?
        * tau_binomial(k - 1, l - 1, &tau)?;
    Ok(value)
}

/// `c_{l,k} = (-1)^l q^{k(k-1)/2} τ^{l(l-1)/2 - kl} [k-1 over l-1]_τ`; singular at `τ = 0`.
pub fn c_raw<S: Scalar>(l: i64, k: i64, params: &ModelParams) -> Result<S> {
    check_lk(l, k)?;
    let tau: S = params.tau();
    if tau.is_zero() {
        return Err(AsepError::SingularParameter(
            "c_{l,k} carries a negative power of tau = 0".into(),
        ));
    }
    let q: S = params.q();
    let value = S::from_i64(sign(l))
        * q.powi(k * (k - 1) / 2)?
        * tau.powi(l * (l - 1) / 2 - k * l)?
        * tau_binomial(k - 1, l - 1, &tau)?;
    Ok(value)
}

/// Relative distance used by the floating comparisons in tests and reports.
pub fn rel_diff(a: Complex64, b: Complex64) -> f64 {
    let scale = a.norm().max(b.norm()).max(f64::MIN_POSITIVE);
    (a - b).norm() / scale
}

pub fn is_negative(r: &Rational) -> bool {
    r.is_negative()
}
