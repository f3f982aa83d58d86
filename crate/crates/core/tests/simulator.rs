use asep_core::kernel::RhoProfile;
use asep_core::quadrature::InitialData;
use asep_core::scalar::{parse_rational, HopRates, Rational, SiteSet};
use asep_core::simulator::*;
use num_traits::One;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

fn rates(p: &str) -> HopRates {
    HopRates::from_p(parse_rational(p).unwrap()).unwrap()
}

fn half() -> InitialData {
    InitialData::Periodic(RhoProfile::parse(&["1/2"]).unwrap())
}

/// Goodness of fit at the 1% level; the last bin collects the upper tail.
fn chi_square_fits(observed: &[u64], expected_prob: &[f64]) -> (f64, f64) {
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(expected_prob)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new((observed.len() - 1) as f64)
        .unwrap()
        .inverse_cdf(0.99);
    (stat, critical)
}

/// Homogeneity of two samples over shared bins, at the 1% level.
fn chi_square_same(a: &[u64], b: &[u64]) -> (f64, f64) {
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let mut stat = 0.0;
    let mut bins = 0;
    for (&u, &v) in a.iter().zip(b).filter(|(&u, &v)| u + v > 0) {
        bins += 1;
        let total = (u + v) as f64;
        for (obs, n) in [(u as f64, na), (v as f64, nb)] {
            let e = total * n / (na + nb);
            stat += (obs - e).powi(2) / e;
        }
    }
    let critical = ChiSquared::new((bins - 1) as f64)
        .unwrap()
        .inverse_cdf(0.99);
    (stat, critical)
}

/// Histogram of `values` over `lo..=hi`, clamping the tails into the end bins.
fn histogram(values: impl Iterator<Item = i64>, lo: i64, hi: i64) -> Vec<u64> {
    let mut bins = vec![0u64; (hi - lo + 1) as usize];
    for v in values {
        bins[(v.clamp(lo, hi) - lo) as usize] += 1;
    }
    bins
}

#[test]
fn free_particle_is_poisson() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rates = rates("0");
    let jumps = (0..100_000).map(|_| -evolve(&[5], 1.0, &rates, &mut rng)[0] + 5);
    let observed = histogram(jumps, 0, 5);
    let poisson = Poisson::new(1.0).unwrap();
    let mut probs: Vec<f64> = (0..5).map(|j| poisson.pmf(j)).collect();
    probs.push(1.0 - probs.iter().sum::<f64>());
    let (stat, critical) = chi_square_fits(&observed, &probs);
    assert!(stat < critical, "chi2 = {stat}, critical = {critical}");
}

#[test]
fn free_particle_displacement_is_a_difference_of_poissons() {
    let (p, q, t) = (0.3, 0.7, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rates = rates("3/10");
    let moves = (0..50_000).map(|_| evolve(&[0], t, &rates, &mut rng)[0]);
    let (lo, hi) = (-4, 2);
    let observed = histogram(moves, lo, hi);
    let (right, left) = (Poisson::new(p * t).unwrap(), Poisson::new(q * t).unwrap());
    let point = |d: i64| -> f64 {
        (0..60u64)
            .filter_map(|r| {
                let l = r as i64 - d;
                (l >= 0).then(|| right.pmf(r) * left.pmf(l as u64))
            })
            .sum()
    };
    let mut probs: Vec<f64> = (lo..=hi).map(point).collect();
    probs[0] = (-60..=lo).map(point).sum();
    probs[(hi - lo) as usize] = (hi..=60).map(point).sum();
    let (stat, critical) = chi_square_fits(&observed, &probs);
    assert!(stat < critical, "chi2 = {stat}, critical = {critical}");
}

#[test]
fn first_gap_is_geometric() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let first = (0..10_000).map(|_| sample_initial(&half(), 200, &mut rng).get(1).unwrap());
    let observed = histogram(first, 1, 8);
    let mut probs: Vec<f64> = (1..8).map(|n| 0.5f64.powi(n)).collect();
    probs.push(0.5f64.powi(7));
    let (stat, critical) = chi_square_fits(&observed, &probs);
    assert!(stat < critical, "chi2 = {stat}, critical = {critical}");
}

#[test]
fn mirror_symmetry() {
    let y: Vec<i64> = (1..=5).collect();
    let mirrored: Vec<i64> = y.iter().rev().map(|v| -v).collect();
    let (forward, backward) = (rates("7/10"), rates("3/10"));
    let mut rng_a = ChaCha8Rng::seed_from_u64(14);
    let mut rng_b = ChaCha8Rng::seed_from_u64(14);
    let n = 20_000;
    // leftmost particle of one system against the negated rightmost of the other
    let a = (0..n).map(|_| evolve(&y, 1.5, &forward, &mut rng_a)[0]);
    let b = (0..n).map(|_| -evolve(&mirrored, 1.5, &backward, &mut rng_b)[4]);
    let (ha, hb) = (histogram(a, -3, 2), histogram(b, -3, 2));
    let (stat, critical) = chi_square_same(&ha, &hb);
    assert!(
        stat < critical,
        "chi2 = {stat}, critical = {critical}: {ha:?} vs {hb:?}"
    );
}

/// `P(x_1(t) <= x)` for `p = 0`, `ρ ≡ 1/2`: the first particle starts at a
/// geometric site and then performs a free Poisson walk to the left.
fn geometric_poisson(x: i64, t: f64) -> f64 {
    let poisson = Poisson::new(t).unwrap();
    (1..80)
        .map(|j: i64| {
            let need = j - x;
            let tail = if need <= 0 {
                1.0
            } else {
                1.0 - (0..need as u64).map(|n| poisson.pmf(n)).sum::<f64>()
            };
            0.5f64.powi(j as i32) * tail
        })
        .sum()
}

#[test]
fn leftmost_particle_matches_geometric_poisson() {
    let mut config = SimConfig::new(rates("0"), 1.0, half(), 1, -8, 3);
    config.trials = 20_000;
    config.seed = 5;
    let cdf = estimate_cdf(&config).unwrap();
    for point in &cdf.points {
        let want = geometric_poisson(point.x, 1.0);
        let bound = 3.0 * (want * (1.0 - want) / point.trials as f64).sqrt() + 1e-3;
        assert!(
            (point.p_hat - want).abs() <= bound,
            "x={}: {} vs {want}",
            point.x,
            point.p_hat
        );
    }
}

#[test]
fn one_hot_horizon_alignment() {
    let rho = RhoProfile::one_hot(3, 0, <Rational as One>::one()).unwrap();
    for horizon in [30, 31] {
        let mut config = SimConfig::new(
            rates("1/3"),
            0.5,
            InitialData::Periodic(rho.clone()),
            2,
            -2,
            8,
        );
        config.horizon = Some(horizon);
        config.trials = 4_000;
        config.seed = 2;
        let report = truncation_check(&config).unwrap();
        assert!(!report.flagged, "L={horizon}: {report:?}");
    }
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let mut config = SimConfig::new(rates("3/10"), 1.0, half(), 2, -4, 4);
    config.trials = 3_000;
    config.seed = 9;
    let serial = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let parallel = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let a = serial.install(|| estimate_cdf(&config)).unwrap();
    let b = parallel.install(|| estimate_cdf(&config)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn deterministic_data_at_time_zero() {
    let y = SiteSet::new(vec![2, 4, 7]).unwrap();
    let mut config = SimConfig::new(rates("1/2"), 0.0, InitialData::Deterministic(y), 3, 0, 8);
    config.trials = 10;
    let cdf = estimate_cdf(&config).unwrap();
    for point in &cdf.points {
        let y_l = [2, 4, 7][point.l - 1];
        assert_eq!(point.p_hat, if y_l <= point.x { 1.0 } else { 0.0 });
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evolve_conserves_and_keeps_order(
        mask in 1u32..(1 << 16),
        p in 0u32..=10,
        t in 0.0f64..4.0,
        seed in any::<u64>(),
    ) {
        let y: Vec<i64> = (0..16).filter(|b| mask >> b & 1 == 1).map(|b| b as i64 + 1).collect();
        let rates = HopRates::from_p(Rational::new(p.into(), 10.into())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = evolve(&y, t, &rates, &mut rng);
        prop_assert_eq!(x.len(), y.len());
        prop_assert!(x.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empirical_cdf_is_monotone(seed in any::<u64>(), p in 0u32..=10) {
        let rates = HopRates::from_p(Rational::new(p.into(), 10.into())).unwrap();
        let mut config = SimConfig::new(rates, 1.0, half(), 2, -5, 5);
        config.trials = 200;
        config.seed = seed;
        let cdf = estimate_cdf(&config).unwrap();
        for w in cdf.points.windows(2).filter(|w| w[0].l == w[1].l) {
            prop_assert!(w[0].hits <= w[1].hits);
        }
        prop_assert!(cdf.points.iter().all(|pt| (0.0..=1.0).contains(&pt.p_hat)));
    }
}
