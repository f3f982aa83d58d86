//! Analytic ingredients of the probability formula: the integrand, the
//! occupation profiles, the transfer matrices and the closed-form summation
//! factors for the special initial conditions.
//!
//! Every `*_factor` function returns the sum over `S` (averaged over `Y`)
//! *without* the `τ^{k(k+1)/2}` prefactor; that power is carried once by
//! [`combined_prefactor`](crate::scalar::combined_prefactor).
//!
//! Row and column indices of the periodic transfer matrices are residues
//! `0..m`; residue 0 is the class of the sites `m, 2m, …`.

use crate::error::{AsepError, Result};
use crate::scalar::{parse_rational, HopRates, ModelParams, Rational, Scalar, SiteSet};

/// Occupation probability as a function of the site.
pub trait SiteProfile {
    fn rho(&self, site: i64) -> Rational;
}

/// An `m`-periodic occupation profile, indexed by residue class.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoProfile {
    values: Vec<Rational>,
}

impl RhoProfile {
    /// `values[r]` is the occupation probability of sites `n ≡ r (mod m)`.
    pub fn new(values: Vec<Rational>) -> Result<Self> {
        if values.is_empty() {
            return Err(AsepError::InvalidParameter(
                "profile period must be positive".into(),
            ));
        }
        check_probabilities(&values)?;
        if values.iter().all(Scalar::is_zero) {
            return Err(AsepError::InvalidParameter(
                "periodic profile has no occupied residue class".into(),
            ));
        }
        Ok(RhoProfile { values })
    }

    pub fn parse(values: &[&str]) -> Result<Self> {
        Self::new(
            values
                .iter()
                .map(|s| parse_rational(s))
                .collect::<Result<_>>()?,
        )
    }

    pub fn uniform(rho: Rational) -> Result<Self> {
        Self::new(vec![rho])
    }

    /// `rho` on residue `nu mod m`, zero elsewhere.
    pub fn one_hot(m: usize, nu: usize, rho: Rational) -> Result<Self> {
        if m == 0 {
            return Err(AsepError::InvalidParameter(
                "profile period must be positive".into(),
            ));
        }
        let mut values = vec![Rational::zero(); m];
        values[nu % m] = rho;
        Self::new(values)
    }

    pub fn period(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Rational] {
        &self.values
    }

    /// The same profile written with period `times · m`.
    pub fn repeated(&self, times: usize) -> Self {
        let values = (0..times.max(1))
            .flat_map(|_| self.values.iter().cloned())
            .collect();
        RhoProfile { values }
    }

    /// Only the values 0 and 1 occur, i.e. the initial data are deterministic.
    pub fn is_deterministic(&self) -> bool {
        self.values.iter().all(|v| v.is_zero() || v.is_one())
    }

    pub fn mean(&self) -> f64 {
        let sum: Rational = self.values.iter().cloned().sum();
        crate::scalar::rational_to_f64(&sum) / self.values.len() as f64
    }
}

impl SiteProfile for RhoProfile {
    fn rho(&self, site: i64) -> Rational {
        let m = self.values.len() as i64;
        self.values[site.rem_euclid(m) as usize].clone()
    }
}

/// Arbitrary occupation probabilities on sites `1..=N`; zero beyond the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralRhoProfile {
    values: Vec<Rational>,
}

impl GeneralRhoProfile {
    /// `values[n - 1]` is the probability of site `n`.
    pub fn new(values: Vec<Rational>) -> Result<Self> {
        if values.is_empty() {
            return Err(AsepError::InvalidParameter(
                "general profile needs a positive horizon".into(),
            ));
        }
        check_probabilities(&values)?;
        Ok(GeneralRhoProfile { values })
    }

    pub fn parse(values: &[&str]) -> Result<Self> {
        Self::new(
            values
                .iter()
                .map(|s| parse_rational(s))
                .collect::<Result<_>>()?,
        )
    }

    /// Restriction of a periodic profile to `[1, horizon]`.
    pub fn from_periodic(rho: &RhoProfile, horizon: usize) -> Self {
        let values = (1..=horizon as i64).map(|n| rho.rho(n)).collect();
        GeneralRhoProfile { values }
    }

    /// Indicator profile of a deterministic configuration.
    pub fn indicator(y: &SiteSet) -> Result<Self> {
        let horizon = y
            .max()
            .ok_or_else(|| AsepError::InvalidParameter("empty initial configuration".into()))?;
        let mut values = vec![Rational::zero(); horizon as usize];
        for s in y.iter() {
            values[(s - 1) as usize] = Rational::one();
        }
        Ok(GeneralRhoProfile { values })
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Rational] {
        &self.values
    }
}

impl SiteProfile for GeneralRhoProfile {
    fn rho(&self, site: i64) -> Rational {
        if site >= 1 && (site as usize) <= self.values.len() {
            self.values[(site - 1) as usize].clone()
        } else {
            Rational::zero()
        }
    }
}

fn check_probabilities(values: &[Rational]) -> Result<()> {
    let zero = Rational::zero();
    let one = Rational::one();
    for (i, v) in values.iter().enumerate() {
        if *v < zero || *v > one {
            return Err(AsepError::InvalidParameter(format!(
                "occupation probability {v} at index {i} is outside [0,1]"
            )));
        }
    }
    Ok(())
}

/// Square matrix over a scalar field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix<S> {
    dim: usize,
    entries: Vec<S>,
}

impl<S: Scalar> TransferMatrix<S> {
    pub fn zeros(dim: usize) -> Self {
        TransferMatrix {
            dim,
            entries: vec![S::zero(); dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> &S {
        &self.entries[row * self.dim + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: S) {
        self.entries[row * self.dim + col] = value;
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(v.len(), self.dim, "dimension mismatch");
        (0..self.dim)
            .map(|r| {
                let row = &self.entries[r * self.dim..(r + 1) * self.dim];
                row.iter()
                    .zip(v)
                    .fold(S::zero(), |acc, (a, b)| acc + a.clone() * b.clone())
            })
            .collect()
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for c in 0..n {
                let mut acc = S::zero();
                for j in 0..n {
                    acc = acc + self.get(r, j).clone() * rhs.get(j, c).clone();
                }
                out.set(r, c, acc);
            }
        }
        out
    }

    /// Sum of the entries of row 0.
    pub fn top_row_sum(&self) -> S {
        self.entries[..self.dim]
            .iter()
            .cloned()
            .fold(S::zero(), |a, b| a + b)
    }

    pub fn is_strictly_upper_triangular(&self) -> bool {
        (0..self.dim).all(|r| (0..=r).all(|c| self.get(r, c).is_zero()))
    }
}

/// Integration variables `ξ_1..ξ_k` with cached suffix products
/// `Π_i = ξ_i ξ_{i+1} ⋯ ξ_k`, `Π_{k+1} = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct XiVector<S> {
    xi: Vec<S>,
    suffix: Vec<S>,
}

impl<S: Scalar> XiVector<S> {
    pub fn new(xi: Vec<S>) -> Self {
        let k = xi.len();
        let mut suffix = vec![S::one(); k + 1];
        for i in (0..k).rev() {
            suffix[i] = xi[i].clone() * suffix[i + 1].clone();
        }
        XiVector { xi, suffix }
    }

    pub fn from_rationals(xi: &[Rational]) -> Self {
        Self::new(xi.iter().map(S::from_rational).collect())
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// `ξ_i`, 1-based.
    pub fn xi(&self, i: usize) -> &S {
        &self.xi[i - 1]
    }

    /// `Π_i`, 1-based, valid for `1 <= i <= k + 1`.
    pub fn suffix(&self, i: usize) -> &S {
        &self.suffix[i - 1]
    }

    pub fn values(&self) -> &[S] {
        &self.xi
    }
}

/// `ε(ξ) = p/ξ + qξ - 1`.
pub fn epsilon<S: Scalar>(xi: &S, rates: &HopRates) -> Result<S> {
    if xi.is_zero() {
        return Err(AsepError::Domain("epsilon(0) is undefined".into()));
    }
    let p: S = rates.p();
    let q: S = rates.q();
    Ok(p.checked_div(xi)? + q * xi.clone() - S::one())
}

/// `f(ξ_i, ξ_j) = (ξ_j - ξ_i) / (p + q ξ_i ξ_j - ξ_i)`.
pub fn f_factor<S: Scalar>(xi_i: &S, xi_j: &S, rates: &HopRates) -> Result<S> {
    let p: S = rates.p();
    let q: S = rates.q();
    let denom = p + q * xi_i.clone() * xi_j.clone() - xi_i.clone();
    (xi_j.clone() - xi_i.clone())
        .checked_div(&denom)
        .map_err(|_| {
            AsepError::Pole(format!(
                "p + q xi_i xi_j - xi_i vanishes at ({xi_i:?}, {xi_j:?})"
            ))
        })
}

/// `I(x, k, ξ) = ∏_{i<j} f(ξ_i, ξ_j) ∏_i ξ_i^x e^{ε(ξ_i) t} / (1 - ξ_i)`.
pub fn integrand_i<S: Scalar>(x: i64, xi: &XiVector<S>, t: f64, rates: &HopRates) -> Result<S> {
    if t < 0.0 || !t.is_finite() {
        return Err(AsepError::InvalidParameter(format!(
            "time must be finite and >= 0, got {t}"
        )));
    }
    let k = xi.len();
    let mut value = S::one();
    for i in 1..=k {
        let z = xi.xi(i);
        if z.is_zero() || z.is_one() {
            return Err(AsepError::Domain(format!("xi_{i} = {z:?} is not allowed")));
        }
        let single = z.powi(x)? * epsilon(z, rates)?.exp_times(t)?;
        value = value * single.checked_div(&(S::one() - z.clone()))?;
    }
    for i in 1..=k {
        for j in (i + 1)..=k {
            value = value * f_factor(xi.xi(i), xi.xi(j), rates)?;
        }
    }
    Ok(value)
}

/// `φ(i, n) = 1 - ρ_n + ρ_n τ^{k-i+1}`.
pub fn phi<S: Scalar>(
    i: usize,
    n: i64,
    k: usize,
    rho: &impl SiteProfile,
    params: &ModelParams,
) -> Result<S> {
    if i < 1 || i > k {
        return Err(AsepError::Domain(format!(
            "phi needs 1 <= i <= k, got i={i}, k={k}"
        )));
    }
    let r = S::from_rational(&rho.rho(n));
    let tau: S = params.tau();
    Ok(S::one() - r.clone() + r * tau.powi((k - i + 1) as i64)?)
}

fn phi_range<S: Scalar>(
    i: usize,
    from: i64,
    to: i64,
    k: usize,
    rho: &impl SiteProfile,
    params: &ModelParams,
) -> Result<S> {
    let mut acc = S::one();
    for n in from..=to {
        acc = acc * phi(i, n, k, rho, params)?;
    }
    Ok(acc)
}

fn check_level(i: usize, k: usize) -> Result<()> {
    if i < 1 || i > k {
        return Err(AsepError::Domain(format!(
            "matrix index needs 1 <= i <= k, got i={i}, k={k}"
        )));
    }
    Ok(())
}

/// The `m × m` transfer matrix `A_i` of a periodic profile.
pub fn build_a<S: Scalar>(
    i: usize,
    xi: &XiVector<S>,
    rho: &RhoProfile,
    params: &ModelParams,
) -> Result<TransferMatrix<S>> {
    let k = xi.len();
    check_level(i, k)?;
    let m = rho.period();
    let z = xi.xi(i);
    if z.is_zero() {
        return Err(AsepError::Domain(format!("xi_{i} = 0")));
    }
    let pi_m = xi.suffix(i).powi(m as i64)?;
    let phi_period: S = phi_range(i, 1, m as i64, k, rho, params)?;
    let denom = pi_m.clone() - phi_period;
    if denom.is_zero() {
        return Err(AsepError::Pole(format!(
            "resonant transfer matrix A_{i}: (xi_i..xi_k)^m equals the period product of phi"
        )));
    }
    let mut a = TransferMatrix::zeros(m);
    for mu in 0..m {
        for nu in 0..m {
            let rho_nu = S::from_rational(&rho.rho(nu as i64));
            if rho_nu.is_zero() {
                continue;
            }
            let base = z.powi(-(nu as i64))? * rho_nu;
            let (mu, nu_i) = (mu as i64, nu as i64);
            let numer = if mu < nu_i {
                pi_m.clone() * base * phi_range(i, mu + 1, nu_i - 1, k, rho, params)?
            } else {
                base * phi_range(i, mu + 1, nu_i + m as i64 - 1, k, rho, params)?
            };
            a.set(mu as usize, nu, numer.checked_div(&denom)?);
        }
    }
    Ok(a)
}

/// The `(N+1) × (N+1)` truncation of the strictly upper-triangular `B_i`.
pub fn build_b_truncated<S: Scalar>(
    i: usize,
    xi: &XiVector<S>,
    rho: &GeneralRhoProfile,
    params: &ModelParams,
) -> Result<TransferMatrix<S>> {
    let k = xi.len();
    check_level(i, k)?;
    let z = xi.xi(i);
    if z.is_zero() {
        return Err(AsepError::Domain(format!("xi_{i} = 0")));
    }
    let n = rho.horizon();
    let phis: Vec<S> = (1..=n as i64)
        .map(|site| phi(i, site, k, rho, params))
        .collect::<Result<_>>()?;
    let mut b = TransferMatrix::zeros(n + 1);
    for mu in 0..=n {
        // running ∏_{n=μ+1}^{ν-1} φ(i, n)
        let mut interior = S::one();
        for nu in (mu + 1)..=n {
            if nu > mu + 1 {
                interior = interior * phis[nu - 2].clone();
            }
            let rho_nu = S::from_rational(&rho.values()[nu - 1]);
            if !rho_nu.is_zero() {
                b.set(mu, nu, z.powi(-(nu as i64))? * rho_nu * interior.clone());
            }
        }
    }
    Ok(b)
}

/// `(1 0 ⋯ 0) A_1 ⋯ A_k (1, …, 1)ᵀ`.
pub fn periodic_factor<S: Scalar>(
    xi: &XiVector<S>,
    rho: &RhoProfile,
    params: &ModelParams,
) -> Result<S> {
    let mut v = vec![S::one(); rho.period()];
    for i in (1..=xi.len()).rev() {
        v = build_a(i, xi, rho, params)?.mul_vec(&v);
    }
    Ok(v.swap_remove(0))
}

/// `(1 0 0 ⋯) B_1 ⋯ B_k (1, 1, …)ᵀ` with the matrices truncated at the
/// profile horizon. The truncation is exact for a profile supported on `[1, N]`.
pub fn general_factor_truncated<S: Scalar>(
    xi: &XiVector<S>,
    rho: &GeneralRhoProfile,
    params: &ModelParams,
) -> Result<S> {
    let mut v = vec![S::one(); rho.horizon() + 1];
    for i in (1..=xi.len()).rev() {
        v = build_b_truncated(i, xi, rho, params)?.mul_vec(&v);
    }
    Ok(v.swap_remove(0))
}

fn pole(what: &str, i: usize) -> AsepError {
    AsepError::Pole(format!("{what}: factor {i} has a vanishing denominator"))
}

/// Step initial data: `∏_i 1 / (Π_i - τ^{k-i+1})`.
pub fn step_factor<S: Scalar>(xi: &XiVector<S>, params: &ModelParams) -> Result<S> {
    let k = xi.len();
    let tau: S = params.tau();
    let mut acc = S::one();
    for i in 1..=k {
        let denom = xi.suffix(i).clone() - tau.powi((k - i + 1) as i64)?;
        acc = acc
            .checked_div(&denom)
            .map_err(|_| pole("step factor", i))?;
    }
    Ok(acc)
}

/// Step Bernoulli data of density `ρ`: `∏_i ρ / (Π_i - 1 + ρ - τ^{k-i+1} ρ)`.
pub fn bernoulli_factor<S: Scalar>(
    xi: &XiVector<S>,
    rho: &Rational,
    params: &ModelParams,
) -> Result<S> {
    let k = xi.len();
    let tau: S = params.tau();
    let r = S::from_rational(rho);
    let mut acc = S::one();
    for i in 1..=k {
        let denom =
            xi.suffix(i).clone() - S::one() + r.clone() - tau.powi((k - i + 1) as i64)? * r.clone();
        acc = (acc * r.clone())
            .checked_div(&denom)
            .map_err(|_| pole("bernoulli factor", i))?;
    }
    Ok(acc)
}

/// `Y = mℤ⁺`: `∏_i 1 / (Π_i^m - τ^{k-i+1})`.
pub fn lattice_factor<S: Scalar>(xi: &XiVector<S>, m: usize, params: &ModelParams) -> Result<S> {
    if m == 0 {
        return Err(AsepError::InvalidParameter(
            "lattice spacing must be positive".into(),
        ));
    }
    let k = xi.len();
    let tau: S = params.tau();
    let mut acc = S::one();
    for i in 1..=k {
        let denom = xi.suffix(i).powi(m as i64)? - tau.powi((k - i + 1) as i64)?;
        acc = acc
            .checked_div(&denom)
            .map_err(|_| pole("lattice factor", i))?;
    }
    Ok(acc)
}

/// Profile equal to `ρ` on the residue class `ν` and zero elsewhere:
/// `(Π_1)^{m-ν} ∏_i ρ / (Π_i^m - (1 - ρ + ρ τ^{k-i+1}))`, with no power
/// prefactor when `ν = 0`.
pub fn indicator_factor<S: Scalar>(
    xi: &XiVector<S>,
    m: usize,
    nu: usize,
    rho: &Rational,
    params: &ModelParams,
) -> Result<S> {
    if m == 0 || nu > m {
        return Err(AsepError::InvalidParameter(format!(
            "need 0 <= nu <= m, m > 0; got nu={nu}, m={m}"
        )));
    }
    let k = xi.len();
    let tau: S = params.tau();
    let r = S::from_rational(rho);
    let mut acc = if nu == 0 {
        S::one()
    } else {
        xi.suffix(1).powi((m - nu) as i64)?
    };
    for i in 1..=k {
        let phi_i = S::one() - r.clone() + r.clone() * tau.powi((k - i + 1) as i64)?;
        let denom = xi.suffix(i).powi(m as i64)? - phi_i;
        acc = (acc * r.clone())
            .checked_div(&denom)
            .map_err(|_| pole("indicator factor", i))?;
    }
    Ok(acc)
}

/// `τ^{σ(S,Y) - k(k+1)/2} ∏_i ξ_i^{-s_i}` for a deterministic configuration `Y ⊇ S`.
pub fn deterministic_factor<S: Scalar>(
    xi: &XiVector<S>,
    s: &SiteSet,
    y: &SiteSet,
    params: &ModelParams,
) -> Result<S> {
    let k = xi.len();
    if s.len() != k {
        return Err(AsepError::Domain(format!("|S| = {} but k = {k}", s.len())));
    }
    if !s.is_subset_of(y) {
        return Err(AsepError::Domain(format!(
            "S = {:?} is not a subset of Y",
            s.sites()
        )));
    }
    let sigma = crate::scalar::sigma_count(s, y) as i64;
    let tau: S = params.tau();
    let mut acc = tau.powi(sigma - (k * (k + 1) / 2) as i64)?;
    for (i, site) in s.iter().enumerate() {
        acc = acc * xi.xi(i + 1).powi(-site)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn r(s: &str) -> Rational {
        parse_rational(s).unwrap()
    }

    fn params(p: &str, q: &str) -> ModelParams {
        ModelParams::parse(p, q).unwrap()
    }

    fn xis(v: &[&str]) -> XiVector<Rational> {
        XiVector::new(v.iter().map(|s| r(s)).collect())
    }

    #[test]
    fn epsilon_examples() {
        let p = params("1/3", "2/3");
        assert_eq!(epsilon(&r("1"), p.rates()).unwrap(), r("0"));
        assert_eq!(epsilon(&r("2"), p.rates()).unwrap(), r("1/2"));
        let sym = HopRates::new(r("1/2"), r("1/2")).unwrap();
        assert_eq!(epsilon(&r("-1"), &sym).unwrap(), r("-2"));
        assert!(matches!(epsilon(&r("0"), &sym), Err(AsepError::Domain(_))));
    }

    #[test]
    fn f_factor_examples() {
        let p = params("1/3", "2/3");
        assert_eq!(f_factor(&r("5/2"), &r("5/2"), p.rates()).unwrap(), r("0"));
        assert_eq!(f_factor(&r("2"), &r("3"), p.rates()).unwrap(), r("3/7"));
        assert!(matches!(
            f_factor(&r("1"), &r("1"), p.rates()),
            Err(AsepError::Pole(_))
        ));
    }

    #[test]
    fn integrand_examples() {
        let p = params("1/3", "2/3");
        assert_eq!(
            integrand_i(0, &xis(&["2"]), 0.0, p.rates()).unwrap(),
            r("-1")
        );
        assert_eq!(
            integrand_i(3, &xis(&["2", "2"]), 0.0, p.rates()).unwrap(),
            r("0")
        );
        assert!(matches!(
            integrand_i(0, &xis(&["1"]), 0.0, p.rates()),
            Err(AsepError::Domain(_))
        ));
        assert!(integrand_i(0, &xis(&["2"]), 1.0, p.rates()).is_err());

        let tasep = params("0", "1");
        let xi = XiVector::new(vec![Complex64::new(2.0, 0.0)]);
        let v = integrand_i(2, &xi, 1.0, tasep.rates()).unwrap();
        let expected = -4.0 * std::f64::consts::E;
        assert!((v - Complex64::new(expected, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn phi_examples() {
        let p = params("1/3", "2/3");
        let zero = RhoProfile::parse(&["0", "1"]).unwrap();
        assert_eq!(phi::<Rational>(1, 2, 2, &zero, &p).unwrap(), r("1"));
        assert_eq!(phi::<Rational>(1, 1, 2, &zero, &p).unwrap(), r("1/4"));
        let half = RhoProfile::parse(&["1/2"]).unwrap();
        assert_eq!(
            phi::<Rational>(1, 7, 2, &half, &params("1/3", "2/3")).unwrap(),
            r("5/8")
        );
        assert!(phi::<Rational>(3, 1, 2, &half, &p).is_err());
    }

    #[test]
    fn suffix_products() {
        let xi = xis(&["2", "3", "-5/2"]);
        assert_eq!(xi.suffix(4), &r("1"));
        assert_eq!(xi.suffix(3), &r("-5/2"));
        assert_eq!(xi.suffix(1), &r("-15"));
        for i in 1..=3 {
            assert_eq!(
                xi.suffix(i).clone(),
                xi.xi(i).clone() * xi.suffix(i + 1).clone()
            );
        }
    }

    #[test]
    fn build_a_examples() {
        let p = params("1/3", "2/3");
        let a = build_a(1, &xis(&["2"]), &RhoProfile::parse(&["1/2"]).unwrap(), &p).unwrap();
        assert_eq!(a.dim(), 1);
        assert_eq!(a.get(0, 0), &r("2/5"));

        let rho = RhoProfile::parse(&["0", "1/2"]).unwrap();
        let a = build_a(1, &xis(&["2"]), &rho, &p).unwrap();
        assert_eq!(a.get(0, 1), &r("4/13"));
        assert_eq!(a.get(0, 0), &r("0"));
        assert_eq!(a.get(1, 0), &r("0"));
    }

    #[test]
    fn build_a_denominator_with_full_occupation() {
        // with ρ ≡ 1 each entry is ξ-powers over (Π_i)^m - τ^{(k-i+1)m}
        let p = params("1/3", "2/3");
        let rho = RhoProfile::parse(&["1", "1", "1"]).unwrap();
        let xi = xis(&["2", "3"]);
        let a = build_a(1, &xi, &rho, &p).unwrap();
        let denom = r("216") - r("1/64");
        // μ = ν = 0: ρ_0 ∏_{n=1}^{2} φ = τ^4
        assert_eq!(a.get(0, 0).clone(), r("1/16") / denom.clone());
        // μ = 0 < ν = 1: Π^m ξ^{-1} ρ_1 (empty product)
        assert_eq!(a.get(0, 1).clone(), r("216") * r("1/2") / denom);
    }

    #[test]
    fn build_a_resonance_is_a_pole() {
        let p = params("1/3", "2/3");
        let rho = RhoProfile::parse(&["1"]).unwrap();
        // Π_1 = ξ = τ makes the single denominator vanish
        let err = build_a(1, &xis(&["1/2"]), &rho, &p).unwrap_err();
        assert!(matches!(err, AsepError::Pole(_)));
    }

    #[test]
    fn build_b_examples() {
        let p = params("1/3", "2/3");
        let rho = GeneralRhoProfile::parse(&["1/2"; 6]).unwrap();
        let b = build_b_truncated(1, &xis(&["2"]), &rho, &p).unwrap();
        assert!(b.is_strictly_upper_triangular());
        for nu in 1..=6i32 {
            let expected = r("1/2").pow(nu) * r("1/2") * r("3/4").pow(nu - 1);
            assert_eq!(b.get(0, nu as usize), &expected);
        }
        let sparse = GeneralRhoProfile::parse(&["1/2", "0", "1/3"]).unwrap();
        let b = build_b_truncated(1, &xis(&["2"]), &sparse, &p).unwrap();
        assert!((0..4).all(|mu| b.get(mu, 2).is_zero()));
    }

    #[test]
    fn periodic_factor_examples() {
        let p = params("1/3", "2/3");
        let half = RhoProfile::parse(&["1/2"]).unwrap();
        assert_eq!(periodic_factor(&xis(&["2"]), &half, &p).unwrap(), r("2/5"));
        let rho = RhoProfile::parse(&["0", "1/2"]).unwrap();
        assert_eq!(periodic_factor(&xis(&["2"]), &rho, &p).unwrap(), r("4/13"));
        let full = RhoProfile::parse(&["1", "1"]).unwrap();
        let xi = xis(&["2", "3"]);
        assert_eq!(
            periodic_factor(&xi, &full, &p).unwrap(),
            step_factor(&xi, &p).unwrap()
        );
    }

    #[test]
    fn general_factor_examples() {
        let p = params("1/3", "2/3");
        let rho = GeneralRhoProfile::parse(&["1/2"; 30]).unwrap();
        let expected = r("2/5") * (r("1") - r("3/8").pow(30));
        assert_eq!(
            general_factor_truncated(&xis(&["2"]), &rho, &p).unwrap(),
            expected
        );

        let short = GeneralRhoProfile::parse(&["1/2", "1/3"]).unwrap();
        assert_eq!(
            general_factor_truncated(&xis(&["2", "3", "5/2"]), &short, &p).unwrap(),
            r("0")
        );

        let single = GeneralRhoProfile::parse(&["0", "0", "2/3"]).unwrap();
        assert_eq!(
            general_factor_truncated(&xis(&["2"]), &single, &p).unwrap(),
            r("1/8") * r("2/3")
        );
    }

    #[test]
    fn closed_form_examples() {
        let p = params("1/3", "2/3");
        assert_eq!(step_factor(&xis(&["2"]), &p).unwrap(), r("2/3"));
        assert_eq!(step_factor(&xis(&["2", "3"]), &p).unwrap(), r("8/115"));
        assert_eq!(
            bernoulli_factor(&xis(&["2"]), &r("1/2"), &p).unwrap(),
            r("2/5")
        );
        assert_eq!(
            bernoulli_factor(&xis(&["2", "3"]), &r("1"), &p).unwrap(),
            r("8/115")
        );
        assert_eq!(lattice_factor(&xis(&["2"]), 2, &p).unwrap(), r("2/7"));
        assert_eq!(
            lattice_factor(&xis(&["2", "3"]), 1, &p).unwrap(),
            step_factor(&xis(&["2", "3"]), &p).unwrap()
        );
        assert_eq!(
            indicator_factor(&xis(&["2"]), 2, 1, &r("1/2"), &p).unwrap(),
            r("4/13")
        );
        let xi = xis(&["2", "-3/2"]);
        assert_eq!(
            indicator_factor(&xi, 1, 0, &r("1/3"), &p).unwrap(),
            bernoulli_factor(&xi, &r("1/3"), &p).unwrap()
        );
        assert_eq!(
            indicator_factor(&xi, 3, 0, &r("1"), &p).unwrap(),
            lattice_factor(&xi, 3, &p).unwrap()
        );
        assert_eq!(
            indicator_factor(&xi, 3, 3, &r("1"), &p).unwrap(),
            lattice_factor(&xi, 3, &p).unwrap()
        );
        assert!(matches!(
            step_factor(&xis(&["1/2"]), &p),
            Err(AsepError::Pole(_))
        ));
    }

    #[test]
    fn deterministic_factor_examples() {
        let p = params("1/3", "2/3");
        let xi = xis(&["2", "3"]);
        let y = SiteSet::interval(2);
        assert_eq!(deterministic_factor(&xi, &y, &y, &p).unwrap(), r("1/18"));
        let s = SiteSet::new(vec![2]).unwrap();
        assert_eq!(
            deterministic_factor(&xis(&["2"]), &s, &y, &p).unwrap(),
            r("1/8")
        );
        let s = SiteSet::new(vec![1]).unwrap();
        let tasep = params("0", "1");
        assert_eq!(
            deterministic_factor(&xis(&["2"]), &s, &y, &tasep).unwrap(),
            r("1/2")
        );
        let bad = SiteSet::new(vec![3]).unwrap();
        assert!(matches!(
            deterministic_factor(&xis(&["2"]), &bad, &y, &p),
            Err(AsepError::Domain(_))
        ));
    }

    #[test]
    fn profile_validation() {
        assert!(RhoProfile::parse(&["0", "0"]).is_err());
        assert!(RhoProfile::parse(&["3/2"]).is_err());
        assert!(RhoProfile::parse(&[]).is_err());
        let rho = RhoProfile::parse(&["1/4", "1/2"]).unwrap();
        assert_eq!(rho.rho(2), r("1/4"));
        assert_eq!(rho.rho(0), r("1/4"));
        assert_eq!(rho.rho(-1), r("1/2"));
        let g = GeneralRhoProfile::from_periodic(&rho, 3);
        assert_eq!(g.values(), &[r("1/2"), r("1/4"), r("1/2")]);
        assert_eq!(g.rho(4), r("0"));
    }
}
