//! Brute-force summations over initial configurations and subsets, in exact
//! rational arithmetic, and the randomized identity suite built on them.
//!
//! Nothing here goes through the transfer matrices: configurations `Y` are
//! enumerated as bitmasks, subsets `S` as combinations, and `σ(S, Y)` is
//! counted pair by pair.

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AsepError, Result};
use crate::kernel::{
    bernoulli_factor, general_factor_truncated, indicator_factor, lattice_factor, periodic_factor,
    step_factor, GeneralRhoProfile, RhoProfile, SiteProfile, XiVector,
};
use crate::scalar::{format_rational, parse_rational, ModelParams, Rational, Scalar, SiteSet};

/// Largest horizon accepted by [`brute_y_average`].
pub const MAX_Y_HORIZON: usize = 20;
/// Largest horizon accepted by [`brute_double_sum`].
pub const MAX_DOUBLE_SUM_HORIZON: usize = 14;
/// Largest subset size accepted by [`brute_double_sum`].
pub const MAX_DOUBLE_SUM_K: usize = 4;

fn raw_sigma(s: &[i64], y: &[i64]) -> i64 {
    let mut count = 0;
    for &u in s {
        for &v in y {
            if u >= v {
                count += 1;
            }
        }
    }
    count
}

/// `Σ_{S ⊆ Y ⊆ [1,N]} τ^{σ(S,Y)} ∏_{n∈Y} ρ_n ∏_{n∈[1,N]∖Y} (1 - ρ_n)`.
pub fn brute_y_average(
    s: &SiteSet,
    horizon: usize,
    rho: &impl SiteProfile,
    params: &ModelParams,
) -> Result<Rational> {
    if horizon > MAX_Y_HORIZON {
        return Err(AsepError::Resource(format!(
            "horizon {horizon} exceeds the enumeration cap {MAX_Y_HORIZON}"
        )));
    }
    if let Some(max) = s.max() {
        if max as usize > horizon {
            return Err(AsepError::Domain(format!(
                "S reaches site {max} beyond horizon {horizon}"
            )));
        }
    }
    let tau = params.tau_exact();
    let one = <Rational as Scalar>::one();
    let free: Vec<i64> = (1..=horizon as i64).filter(|n| !s.contains(*n)).collect();
    let rho_s: Rational = s.iter().map(|n| rho.rho(n)).product();

    let mut total = <Rational as Scalar>::zero();
    let mut y = Vec::with_capacity(horizon);
    for mask in 0u64..(1u64 << free.len()) {
        y.clear();
        let mut weight = rho_s.clone();
        for (bit, &n) in free.iter().enumerate() {
            let r = rho.rho(n);
            if mask >> bit & 1 == 1 {
                y.push(n);
                weight *= r;
            } else {
                weight *= &one - r;
            }
        }
        if weight == <Rational as Scalar>::zero() {
            continue;
        }
        y.extend(s.iter());
        y.sort_unstable();
        let sigma = raw_sigma(s.sites(), &y);
        total += weight * tau.powi(sigma)?;
    }
    Ok(total)
}

/// `τ^{k(k+1)/2} ∏_{n∈S} ρ_n ∏_i ∏_{s_{i-1} < n < s_i} φ(i, n)` with `s_0 = 0`.
pub fn lucky_formula(
    s: &SiteSet,
    rho: &impl SiteProfile,
    params: &ModelParams,
) -> Result<Rational> {
    lucky_formula_shifted(s, rho, params, None)
}

fn lucky_formula_shifted(
    s: &SiteSet,
    rho: &impl SiteProfile,
    params: &ModelParams,
    phi_shift: Option<&Rational>,
) -> Result<Rational> {
    let k = s.len();
    if k == 0 {
        return Err(AsepError::Domain("lucky formula needs |S| >= 1".into()));
    }
    let tau = params.tau_exact();
    let mut acc = tau.powi((k * (k + 1) / 2) as i64)?;
    let mut prev = 0;
    for (idx, site) in s.iter().enumerate() {
        let i = idx + 1;
        acc *= rho.rho(site);
        for n in (prev + 1)..site {
            let mut phi: Rational = crate::kernel::phi(i, n, k, rho, params)?;
            if let Some(shift) = phi_shift {
                phi += shift;
            }
            acc *= phi;
        }
        prev = site;
    }
    Ok(acc)
}

/// `Σ_{S ⊆ [1,N], |S| = k} brute_y_average(S, N) · ∏_i ξ_i^{-s_i}`, from first principles.
pub fn brute_double_sum(
    horizon: usize,
    rho: &impl SiteProfile,
    xi: &XiVector<Rational>,
    params: &ModelParams,
) -> Result<Rational> {
    let k = xi.len();
    if horizon > MAX_DOUBLE_SUM_HORIZON || k > MAX_DOUBLE_SUM_K {
        return Err(AsepError::Resource(format!(
            "double sum with N={horizon}, k={k} exceeds the caps N<={MAX_DOUBLE_SUM_HORIZON}, k<={MAX_DOUBLE_SUM_K}"
        )));
    }
    let mut total = <Rational as Scalar>::zero();
    for combo in (1..=horizon as i64).combinations(k) {
        let mut xi_weight = <Rational as Scalar>::one();
        for (i, &site) in combo.iter().enumerate() {
            xi_weight *= xi.xi(i + 1).powi(-site)?;
        }
        let s = SiteSet::new(combo)?;
        total += brute_y_average(&s, horizon, rho, params)? * xi_weight;
    }
    Ok(total)
}

/// Parameters of one randomized instance, rendered as exact strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDescriptor {
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n: Option<usize>,
    pub tau: String,
    pub rho: Vec<String>,
    pub xi: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub s: Option<Vec<i64>>,
}

/// Outcome of one exact identity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub identity: String,
    pub instance: InstanceDescriptor,
    pub left: String,
    pub right: String,
    pub equal: bool,
}

impl IdentityReport {
    fn new(identity: &str, instance: InstanceDescriptor, left: Rational, right: Rational) -> Self {
        IdentityReport {
            identity: identity.to_string(),
            instance,
            equal: left == right,
            left: format_rational(&left),
            right: format_rational(&right),
        }
    }
}

/// Size caps and seeding for [`run_identity_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub trials: usize,
    pub k_max: usize,
    pub m_max: usize,
    pub n_max: usize,
    /// Test hook: adds a small offset to every φ in the lucky formula.
    #[serde(default)]
    pub perturb_phi: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 1,
            trials: 100,
            k_max: 4,
            m_max: 4,
            n_max: 12,
            perturb_phi: false,
        }
    }
}

/// Names of the identities checked per trial, in report order.
pub const IDENTITIES: [&str; 8] = [
    "y_average_lucky",
    "y_average_horizon_stability",
    "double_sum_general",
    "uniform_reduction",
    "period_doubling",
    "indicator_reduction",
    "step_reduction",
    "lattice_reduction",
];

const TAUS: [&str; 4] = ["0", "1/3", "1/2", "2/3"];
const RHOS: [&str; 8] = ["0", "1/5", "1/4", "1/3", "1/2", "2/3", "3/4", "1"];
const XI_MAGNITUDES: [&str; 5] = ["3/2", "2", "5/2", "3", "7/2"];

/// Per-trial generator: ChaCha8 seeded with `seed`, stream = trial index.
pub(crate) fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn pick(rng: &mut ChaCha8Rng, options: &[&str]) -> Rational {
    parse_rational(options.choose(rng).expect("non-empty")).expect("valid literal")
}

fn strings(values: &[Rational]) -> Vec<String> {
    values.iter().map(format_rational).collect()
}

struct Instance {
    params: ModelParams,
    k: usize,
    m: usize,
    xi: XiVector<Rational>,
    periodic: RhoProfile,
    general: GeneralRhoProfile,
    s: SiteSet,
    n_lucky: usize,
    n_double: usize,
    nu: usize,
    rho_scalar: Rational,
}

fn draw_instance(config: &SuiteConfig, trial: usize) -> Result<Instance> {
    let mut rng = trial_rng(config.seed, trial);
    let tau = pick(&mut rng, &TAUS);
    let one = <Rational as Scalar>::one();
    let p = &tau / (&one + &tau);
    let params = ModelParams::from_p(p)?;

    let k = rng.gen_range(1..=config.k_max.clamp(1, MAX_DOUBLE_SUM_K));
    let m = rng.gen_range(1..=config.m_max.max(1));
    let xi: Vec<Rational> = (0..k)
        .map(|_| {
            let x = pick(&mut rng, &XI_MAGNITUDES);
            if rng.gen_bool(0.3) {
                -x
            } else {
                x
            }
        })
        .collect();

    let mut periodic: Vec<Rational> = (0..m).map(|_| pick(&mut rng, &RHOS)).collect();
    if periodic.iter().all(Scalar::is_zero) {
        let r = rng.gen_range(0..m);
        periodic[r] = pick(&mut rng, &RHOS[1..]);
    }

    let n_max = config.n_max.clamp(k, MAX_DOUBLE_SUM_HORIZON);
    let general: Vec<Rational> = (0..n_max + 3).map(|_| pick(&mut rng, &RHOS)).collect();

    let n_lucky = rng.gen_range(k..=n_max);
    let mut sites: Vec<i64> = (1..=n_lucky as i64).collect();
    sites.shuffle(&mut rng);
    let mut s: Vec<i64> = sites.into_iter().take(k).collect();
    s.sort_unstable();

    let n_double = rng.gen_range(k..=n_max);
    let nu = rng.gen_range(0..m);
    let rho_scalar = pick(&mut rng, &RHOS[1..]);

    Ok(Instance {
        params,
        k,
        m,
        xi: XiVector::new(xi),
        periodic: RhoProfile::new(periodic)?,
        general: GeneralRhoProfile::new(general)?,
        s: SiteSet::new(s)?,
        n_lucky,
        n_double,
        nu,
        rho_scalar,
    })
}

fn check_trial(config: &SuiteConfig, trial: usize) -> Result<Vec<IdentityReport>> {
    let inst = draw_instance(config, trial)?;
    let params = &inst.params;
    let k = inst.k;
    let m = inst.m;
    let tau = params.tau_exact().clone();
    let tau_k = tau.powi((k * (k + 1) / 2) as i64)?;
    let xi_strings = strings(inst.xi.values());
    let tau_string = format_rational(&tau);
    let describe = |m: Option<usize>, n: Option<usize>, rho: &[Rational], s: Option<&SiteSet>| {
        InstanceDescriptor {
            k,
            m,
            n,
            tau: tau_string.clone(),
            rho: strings(rho),
            xi: xi_strings.clone(),
            s: s.map(|s| s.sites().to_vec()),
        }
    };
    let mut reports = Vec::with_capacity(IDENTITIES.len());

    // (a) average over Y for a fixed S
    let shift = parse_rational("1/97")?;
    let general_lucky = GeneralRhoProfile::new(inst.general.values()[..inst.n_lucky].to_vec())?;
    let left = brute_y_average(&inst.s, inst.n_lucky, &general_lucky, params)?;
    let right = lucky_formula_shifted(
        &inst.s,
        &general_lucky,
        params,
        config.perturb_phi.then_some(&shift),
    )?;
    let rho_desc = general_lucky.values().to_vec();
    reports.push(IdentityReport::new(
        IDENTITIES[0],
        describe(None, Some(inst.n_lucky), &rho_desc, Some(&inst.s)),
        left,
        right,
    ));

    // sites beyond max(S) do not change the average
    let s_max = inst.s.max().expect("k >= 1") as usize;
    let wide = GeneralRhoProfile::new(inst.general.values()[..s_max + 3].to_vec())?;
    let left = brute_y_average(&inst.s, s_max, &wide, params)?;
    let right = brute_y_average(&inst.s, s_max + 3, &wide, params)?;
    reports.push(IdentityReport::new(
        IDENTITIES[1],
        describe(None, Some(s_max + 3), wide.values(), Some(&inst.s)),
        left,
        right,
    ));

    // (b) sum over S at finite horizon
    let general_double = GeneralRhoProfile::new(inst.general.values()[..inst.n_double].to_vec())?;
    let left = brute_double_sum(inst.n_double, &general_double, &inst.xi, params)?;
    let right = tau_k.clone() * general_factor_truncated(&inst.xi, &general_double, params)?;
    reports.push(IdentityReport::new(
        IDENTITIES[2],
        describe(None, Some(inst.n_double), general_double.values(), None),
        left,
        right,
    ));

    // constant profile written with period m
    let uniform = RhoProfile::new(vec![inst.rho_scalar.clone(); m])?;
    let left = periodic_factor(&inst.xi, &uniform, params)?;
    let right = bernoulli_factor(&inst.xi, &inst.rho_scalar, params)?;
    reports.push(IdentityReport::new(
        IDENTITIES[3],
        describe(Some(m), None, uniform.values(), None),
        left,
        right,
    ));

    let left = periodic_factor(&inst.xi, &inst.periodic, params)?;
    let right = periodic_factor(&inst.xi, &inst.periodic.repeated(2), params)?;
    reports.push(IdentityReport::new(
        IDENTITIES[4],
        describe(Some(m), None, inst.periodic.values(), None),
        left,
        right,
    ));

    let one_hot = RhoProfile::one_hot(m, inst.nu, inst.rho_scalar.clone())?;
    let left = periodic_factor(&inst.xi, &one_hot, params)?;
    let right = indicator_factor(&inst.xi, m, inst.nu, &inst.rho_scalar, params)?;
    reports.push(IdentityReport::new(
        IDENTITIES[5],
        describe(Some(m), None, one_hot.values(), None),
        left,
        right,
    ));

    let full = RhoProfile::new(vec![<Rational as Scalar>::one(); m])?;
    let left = periodic_factor(&inst.xi, &full, params)?;
    let right = step_factor(&inst.xi, params)?;
    reports.push(IdentityReport::new(
        IDENTITIES[6],
        describe(Some(m), None, full.values(), None),
        left,
        right,
    ));

    let lattice = RhoProfile::one_hot(m, 0, <Rational as Scalar>::one())?;
    let left = periodic_factor(&inst.xi, &lattice, params)?;
    let right = lattice_factor(&inst.xi, m, params)?;
    reports.push(IdentityReport::new(
        IDENTITIES[7],
        describe(Some(m), None, lattice.values(), None),
        left,
        right,
    ));

    Ok(reports)
}

/// Runs every identity in [`IDENTITIES`] on `config.trials` random instances.
///
/// Failed identities come back as reports with `equal = false`; an `Err`
/// means an instance could not be evaluated at all.
pub fn run_identity_suite(config: &SuiteConfig) -> Result<Vec<IdentityReport>> {
    use rayon::prelude::*;
    let per_trial: Vec<Vec<IdentityReport>> = (0..config.trials)
        .into_par_iter()
        .map(|trial| check_trial(config, trial))
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}
