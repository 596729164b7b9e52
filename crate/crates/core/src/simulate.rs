//! Monte Carlo simulation of the population `Z(t, x)` through its Poisson
//! representation: conditional on survival data, `Z(t, x)` is the sum of the
//! atoms of a Poisson measure with intensity `x mu_t`, where `mu_t` is the
//! jump measure of the flow. Sampling is embarrassingly parallel and
//! deterministic for a fixed seed independently of the thread count: sample
//! `i` owns stream `i` of a counter-based generator.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exponent::ExactSolver;
use crate::gml::{MittagLefflerLaw, SelfSimilarFamily};
use crate::measures::gaver_stehfest;
use crate::mechanism::{AtomicMeasure, BranchingMechanism};

/// Monte Carlo sample set of `Z(t, x)` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub seed: u64,
    pub t: f64,
    pub x: f64,
    pub samples: Vec<f64>,
    pub extinct_count: usize,
}

/// Serializable summary of an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub n: usize,
    pub t: f64,
    pub x: f64,
    pub seed: u64,
    pub extinct_frac: f64,
    pub mean: f64,
    pub var: f64,
    pub quantiles: BTreeMap<String, f64>,
}

impl Ensemble {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.samples.iter().map(|s| (s - m) * (s - m)).sum::<f64>()
            / (self.samples.len() as f64 - 1.0)
    }

    pub fn extinct_frac(&self) -> f64 {
        self.extinct_count as f64 / self.samples.len() as f64
    }

    pub fn summary(&self) -> EnsembleSummary {
        let mut sorted = self.samples.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pick = |p: f64| sorted[((p * sorted.len() as f64) as usize).min(sorted.len() - 1)];
        let mut quantiles = BTreeMap::new();
        for (name, p) in [
            ("q01", 0.01),
            ("q05", 0.05),
            ("q25", 0.25),
            ("q50", 0.50),
            ("q75", 0.75),
            ("q95", 0.95),
            ("q99", 0.99),
        ] {
            quantiles.insert(name.to_string(), pick(p));
        }
        EnsembleSummary {
            n: self.samples.len(),
            t: self.t,
            x: self.x,
            seed: self.seed,
            extinct_frac: self.extinct_frac(),
            mean: self.mean(),
            var: self.variance(),
            quantiles,
        }
    }
}

enum JumpDraw {
    /// Homogeneous mechanisms: jumps are `F_{gamma,1}` rescaled by the
    /// reciprocal total number.
    Exact {
        law: MittagLefflerLaw,
        table: Vec<(f64, f64)>,
    },
    /// Inverse transform on a numerically inverted jump distribution grid.
    Grid { xs: Vec<f64>, cdf: Vec<f64> },
}

/// Jump-measure sampler for the population at a fixed time.
pub struct CsbpSampler {
    t: f64,
    /// Total jump intensity per unit initial mass, `<mu_t, 1>`.
    intensity: f64,
    jumps: JumpDraw,
    exact_jumps: bool,
}

impl CsbpSampler {
    /// Sampler for a homogeneous family; the family must be the fundamental
    /// solution (`rho = 1`), whose measure is the jump measure of the
    /// population process.
    pub fn for_family(fam: &SelfSimilarFamily, t: f64) -> Result<Self> {
        if fam.rho != 1.0 {
            return Err(Error::domain(format!(
                "population sampler needs the fundamental family (rho = 1), got rho = {}",
                fam.rho
            )));
        }
        if !(t > 0.0) {
            return Err(Error::domain(format!("time must be positive, got {t}")));
        }
        let intensity = fam.total_mass(t);
        let law = MittagLefflerLaw::new(fam.gamma, 1.0, 1.0 / intensity)?;
        let table = law.sampler_table();
        Ok(Self {
            t,
            intensity,
            jumps: JumpDraw::Exact { law, table },
            exact_jumps: true,
        })
    }

    /// Sampler for a critical mechanism satisfying the extinction condition.
    /// Homogeneous mechanisms get exact jump draws; anything else falls back
    /// to inverse transform on an inversion grid and is flagged as such.
    pub fn for_mechanism(mech: &BranchingMechanism, t: f64, quad_tol: f64) -> Result<Self> {
        if let Some((coeff, g)) = mech.as_power_law() {
            let fam = SelfSimilarFamily::new(coeff, g, 1.0)?;
            return Self::for_family(&fam, t);
        }
        if !(t > 0.0) {
            return Err(Error::domain(format!("time must be positive, got {t}")));
        }
        let solver = ExactSolver::build(mech.clone(), quad_tol)?;
        let intensity = solver.total_number_at(t)?;
        // number distribution N(x) = <mu_t, 1_(0,x]> has transform
        // (intensity - Phi(t, q)) / q
        let mean_jump = 1.0 / intensity;
        let n = 600;
        let lo = 1e-5 * mean_jump;
        let hi = 1e4 * mean_jump;
        let lr = (hi / lo).ln();
        let mut xs = Vec::with_capacity(n + 1);
        let mut cdf = Vec::with_capacity(n + 1);
        let mut prev = 0.0f64;
        for i in 0..=n {
            let x = lo * (lr * i as f64 / n as f64).exp();
            let raw = gaver_stehfest(|q| Ok((intensity - solver.phi(t, q)?) / q), x, 14)?;
            let g = (raw / intensity).clamp(0.0, 1.0).max(prev);
            prev = g;
            xs.push(x);
            cdf.push(g);
        }
        Ok(Self {
            t,
            intensity,
            jumps: JumpDraw::Grid { xs, cdf },
            exact_jumps: false,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// `<mu_t, 1>`, the Poisson intensity per unit initial mass.
    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    /// Whether jump draws are exact or inversion-grid backed.
    pub fn jumps_exact(&self) -> bool {
        self.exact_jumps
    }

    /// `P(Z(t, x) = 0) = exp(-x <mu_t, 1>)`.
    pub fn extinction_probability(&self, x: f64) -> f64 {
        (-x * self.intensity).exp()
    }

    fn draw_jump(&self, rng: &mut ChaCha8Rng) -> f64 {
        match &self.jumps {
            JumpDraw::Exact { law, table } => {
                let u: f64 = rng.gen::<f64>().clamp(1e-10, 1.0 - 1e-10);
                law.inverse_with_table(table, u).unwrap_or(f64::NAN)
            }
            JumpDraw::Grid { xs, cdf } => {
                let u: f64 = rng
                    .gen::<f64>()
                    .clamp(cdf[0].max(1e-12), cdf[cdf.len() - 1] - 1e-12);
                let idx = cdf.partition_point(|&c| c < u).clamp(1, cdf.len() - 1);
                let (c0, c1) = (cdf[idx - 1], cdf[idx]);
                let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
                xs[idx - 1] * (xs[idx] / xs[idx - 1]).powf(w)
            }
        }
    }

    fn stream_rng(seed: u64, i: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        rng
    }
}

fn poisson_draw(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    rng.sample(rand_distr::Poisson::new(lambda).expect("positive intensity")) as u64
}

/// Poisson count conditioned to be at least one, by inverse transform on a
/// uniform restricted to the surviving part of the distribution.
fn poisson_draw_conditional(rng: &mut ChaCha8Rng, lambda: f64) -> Result<u64> {
    if !(lambda > 0.0) {
        return Err(Error::domain("conditional count needs positive intensity"));
    }
    if lambda > 1e5 {
        return Err(Error::domain(format!(
            "intensity {lambda} too large for exact inversion"
        )));
    }
    let p0 = (-lambda).exp();
    let u = p0 + (1.0 - p0) * rng.gen::<f64>().clamp(1e-16, 1.0 - 1e-16);
    let mut k = 1u64;
    let mut p = lambda * p0;
    let mut c = p0 + p;
    while u > c && k < 1_000_000 {
        k += 1;
        p *= lambda / k as f64;
        c += p;
    }
    Ok(k)
}

/// Draws `n` copies of `Z(t, x)`: counts from `Poisson(x <mu_t, 1>)`, jump
/// sizes iid from the normalized jump measure.
pub fn sample_csbp(sampler: &CsbpSampler, x: f64, n: usize, seed: u64) -> Result<Ensemble> {
    if !(x >= 0.0) {
        return Err(Error::domain(format!(
            "initial mass must be nonnegative, got {x}"
        )));
    }
    if n == 0 {
        return Err(Error::domain("ensemble size must be positive"));
    }
    let lambda = x * sampler.intensity;
    let samples: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = CsbpSampler::stream_rng(seed, i);
            let count = poisson_draw(&mut rng, lambda);
            let mut z = 0.0;
            for _ in 0..count {
                z += sampler.draw_jump(&mut rng);
            }
            z
        })
        .collect();
    let extinct_count = samples.iter().filter(|&&s| s == 0.0).count();
    Ok(Ensemble {
        seed,
        t: sampler.t,
        x,
        samples,
        extinct_count,
    })
}

/// Draws `n` copies of `Z(t, x)` conditioned on survival; every sample is
/// strictly positive.
pub fn sample_conditional(sampler: &CsbpSampler, x: f64, n: usize, seed: u64) -> Result<Ensemble> {
    if !(x > 0.0) {
        return Err(Error::domain(format!(
            "initial mass must be positive, got {x}"
        )));
    }
    if n == 0 {
        return Err(Error::domain("ensemble size must be positive"));
    }
    let lambda = x * sampler.intensity;
    let samples: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = CsbpSampler::stream_rng(seed, i);
            let count = poisson_draw_conditional(&mut rng, lambda)?;
            let mut z = 0.0;
            for _ in 0..count {
                z += sampler.draw_jump(&mut rng);
            }
            Ok(z)
        })
        .collect::<Result<_>>()?;
    Ok(Ensemble {
        seed,
        t: sampler.t,
        x,
        samples,
        extinct_count: 0,
    })
}

/// Output of the subordination sampler.
#[derive(Debug, Clone)]
pub struct WeakSolutionSample {
    /// Draws distributed as `nu_t / <nu_t, 1>`.
    pub samples: Vec<f64>,
    /// Fraction of proposals accepted; estimates `<nu_t,1> / <mu_t,1>`.
    pub acceptance_rate: f64,
    /// Set when the acceptance rate dropped below 1e-2.
    pub low_acceptance: bool,
}

/// Samples the normalized weak solution with initial data `nu0` by
/// subordination: a directing level `s` is proposed from the normalized
/// fundamental measure and accepted with the survival weight
/// `1 - e^(-s <nu0, 1>)`; the output is then a compound Poisson sum over
/// `nu0 / <nu0, 1>` with count conditioned to be nonzero.
pub fn sample_weak_solution(
    sampler: &CsbpSampler,
    nu0: &AtomicMeasure,
    n: usize,
    seed: u64,
) -> Result<WeakSolutionSample> {
    if n == 0 {
        return Err(Error::domain("ensemble size must be positive"));
    }
    let m0 = nu0.total();
    let atoms = nu0.atoms().to_vec();
    let cum: Vec<f64> = atoms
        .iter()
        .scan(0.0, |acc, &(_, w)| {
            *acc += w / m0;
            Some(*acc)
        })
        .collect();
    let results: Vec<(f64, u64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = CsbpSampler::stream_rng(seed, i);
            let mut proposals = 0u64;
            loop {
                proposals += 1;
                let s = sampler.draw_jump(&mut rng);
                let accept: f64 = rng.gen();
                if accept < crate::numeric::one_minus_exp_neg(s * m0) {
                    let count = poisson_draw_conditional(&mut rng, s * m0)?;
                    let mut z = 0.0;
                    for _ in 0..count {
                        let u: f64 = rng.gen();
                        let idx = cum.partition_point(|&c| c < u).min(atoms.len() - 1);
                        z += atoms[idx].0;
                    }
                    return Ok((z, proposals));
                }
                if proposals > 100_000_000 {
                    return Err(Error::NonConvergence("rejection sampler starved".into()));
                }
            }
        })
        .collect::<Result<_>>()?;
    let total_proposals: u64 = results.iter().map(|r| r.1).sum();
    let acceptance_rate = n as f64 / total_proposals as f64;
    Ok(WeakSolutionSample {
        samples: results.into_iter().map(|r| r.0).collect(),
        acceptance_rate,
        low_acceptance: acceptance_rate < 1e-2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponent::{ExponentFlow, FlowBackend, InitialExponent};
    use crate::mechanism::JumpMeasure;
    use crate::numeric::{ks_statistic, ks_two_sample};

    fn feller_sampler(t: f64) -> CsbpSampler {
        CsbpSampler::for_family(&SelfSimilarFamily::new(1.0, 2.0, 1.0).unwrap(), t).unwrap()
    }

    #[test]
    fn extinction_probability_feller() {
        let s = feller_sampler(1.0);
        assert!((s.extinction_probability(1.0) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_initial_mass_gives_zero_samples() {
        let s = feller_sampler(1.0);
        let e = sample_csbp(&s, 0.0, 100, 3).unwrap();
        assert!(e.samples.iter().all(|&z| z == 0.0));
        assert_eq!(e.extinct_count, 100);
    }

    #[test]
    fn feller_extinction_and_mean_within_three_sigma() {
        let s = feller_sampler(1.0);
        let n = 100_000;
        let e = sample_csbp(&s, 1.0, n, 11).unwrap();
        let p = (-1.0f64).exp();
        let sigma_p = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (e.extinct_frac() - p).abs() <= 3.0 * sigma_p,
            "extinct {} vs {p}",
            e.extinct_frac()
        );
        // E Z = x and Var Z = 2 for the unit quadratic mechanism at t = 1
        let sigma_mean = (e.variance() / n as f64).sqrt();
        assert!(
            (e.mean() - 1.0).abs() <= 3.0 * sigma_mean,
            "mean {}",
            e.mean()
        );
    }

    #[test]
    fn laplace_identity_of_samples() {
        // (1/n) sum e^{-q Z_i} within three binomial sigma of e^{-x Phi(t,q)}
        let s = feller_sampler(1.0);
        let n = 100_000;
        let e = sample_csbp(&s, 1.0, n, 5).unwrap();
        for &q in &[0.5f64, 1.0, 2.0] {
            let expected: f64 = (-(q / (1.0 + q))).exp();
            let emp: f64 = e.samples.iter().map(|&z| (-q * z).exp()).sum::<f64>() / n as f64;
            let sd = (e
                .samples
                .iter()
                .map(|&z| ((-q * z).exp() - emp).powi(2))
                .sum::<f64>()
                / (n as f64 - 1.0))
                .sqrt();
            assert!(
                (emp - expected).abs() <= 3.0 * sd / (n as f64).sqrt(),
                "q={q}: {emp} vs {expected}"
            );
        }
    }

    #[test]
    fn determinism_across_thread_counts() {
        let s = feller_sampler(1.0);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| sample_csbp(&s, 1.0, 20_000, 42).unwrap());
        let b = four.install(|| sample_csbp(&s, 1.0, 20_000, 42).unwrap());
        assert_eq!(a.samples, b.samples);
        let a = one.install(|| {
            sample_weak_solution(&s, &AtomicMeasure::dirac(1.0).unwrap(), 5_000, 9).unwrap()
        });
        let b = four.install(|| {
            sample_weak_solution(&s, &AtomicMeasure::dirac(1.0).unwrap(), 5_000, 9).unwrap()
        });
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn conditional_samples_positive_and_near_exponential_at_large_time() {
        let t = 100.0;
        let s = feller_sampler(t);
        let n = 100_000;
        let e = sample_conditional(&s, 1.0, n, 17).unwrap();
        assert!(e.samples.iter().all(|&z| z > 0.0));
        // Z/t | survival approaches a unit exponential
        let mut scaled: Vec<f64> = e.samples.iter().map(|z| z / t).collect();
        scaled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = ks_statistic(&scaled, |z| -(-z).exp_m1());
        assert!(d < 0.02, "KS {d}");
        let mean = scaled.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn branching_property_two_sample() {
        let s = feller_sampler(1.0);
        let n = 10_000;
        let whole = sample_csbp(&s, 2.0, n, 100).unwrap();
        let part_a = sample_csbp(&s, 1.0, n, 101).unwrap();
        let part_b = sample_csbp(&s, 1.0, n, 102).unwrap();
        let mut combined: Vec<f64> = part_a
            .samples
            .iter()
            .zip(&part_b.samples)
            .map(|(a, b)| a + b)
            .collect();
        combined.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut direct = whole.samples;
        direct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = ks_two_sample(&direct, &combined);
        // 1% two-sample threshold: 1.628 sqrt(2/n)
        assert!(d < 1.628 * (2.0 / n as f64).sqrt(), "KS {d}");
    }

    #[test]
    fn weak_solution_consistency_with_composed_flow() {
        let t = 1.0;
        let s = feller_sampler(t);
        let nu0 = AtomicMeasure::dirac(1.0).unwrap();
        let n = 100_000;
        let out = sample_weak_solution(&s, &nu0, n, 23).unwrap();
        assert!(!out.low_acceptance);
        // acceptance * <mu_t,1> estimates <nu_t,1> = Phi(t, 1)
        let solver = ExactSolver::build(BranchingMechanism::quadratic(1.0).unwrap(), 1e-9).unwrap();
        let flow = ExponentFlow::new(
            FlowBackend::Exact(solver),
            InitialExponent::Measure(nu0.clone()),
        );
        let total = flow.total_number(t).unwrap();
        let est = out.acceptance_rate * s.intensity();
        let sigma = (out.acceptance_rate * (1.0 - out.acceptance_rate) / n as f64).sqrt()
            * s.intensity()
            / out.acceptance_rate;
        assert!((est - total).abs() <= 4.0 * sigma, "{est} vs {total}");
        // empirical Laplace functional against 1 - phi(t, q)/<nu_t, 1>
        for &q in &[0.5, 1.0, 2.0] {
            let expected = 1.0 - flow.phi(t, q).unwrap() / total;
            let emp: f64 = out.samples.iter().map(|&z| (-q * z).exp()).sum::<f64>() / n as f64;
            let sd = (out
                .samples
                .iter()
                .map(|&z| ((-q * z).exp() - emp).powi(2))
                .sum::<f64>()
                / (n as f64 - 1.0))
                .sqrt();
            assert!(
                (emp - expected).abs() <= 3.0 * sd / (n as f64).sqrt(),
                "q={q}: {emp} vs {expected}"
            );
        }
    }

    #[test]
    fn weak_solution_concentrates_at_initial_data_for_small_time() {
        let s = feller_sampler(1e-3);
        let nu0 = AtomicMeasure::dirac(1.0).unwrap();
        let out = sample_weak_solution(&s, &nu0, 2_000, 31).unwrap();
        let near_one = out
            .samples
            .iter()
            .filter(|&&z| (z - 1.0).abs() < 1e-6)
            .count();
        assert!(near_one as f64 >= 0.99 * out.samples.len() as f64);
    }

    #[test]
    fn inversion_grid_sampler_close_to_exact() {
        // route the quadratic mechanism through the grid path by disguising
        // it with a vanishing atom; compare with the exact path by KS
        let mech =
            BranchingMechanism::new(0.0, 1.0, Some(JumpMeasure::Atomic(vec![(1e-6, 1e-12)])))
                .unwrap();
        let grid_sampler = CsbpSampler::for_mechanism(&mech, 1.0, 1e-9).unwrap();
        assert!(!grid_sampler.jumps_exact());
        let exact = feller_sampler(1.0);
        let n = 20_000;
        let a = sample_conditional(&grid_sampler, 1.0, n, 7).unwrap();
        let b = sample_conditional(&exact, 1.0, n, 8).unwrap();
        let mut sa = a.samples;
        sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut sb = b.samples;
        sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let d = ks_two_sample(&sa, &sb);
        // grid bias plus statistical noise
        assert!(d < 0.03, "KS {d}");
    }

    #[test]
    fn sampler_requires_fundamental_family() {
        let fam = SelfSimilarFamily::new(1.0, 2.0, 0.5).unwrap();
        assert!(CsbpSampler::for_family(&fam, 1.0).is_err());
    }

    #[test]
    fn sampler_refuses_without_extinction() {
        let atomic_only =
            BranchingMechanism::new(0.0, 0.0, Some(JumpMeasure::Atomic(vec![(1.0, 1.0)]))).unwrap();
        assert!(CsbpSampler::for_mechanism(&atomic_only, 1.0, 1e-9).is_err());
    }
}
