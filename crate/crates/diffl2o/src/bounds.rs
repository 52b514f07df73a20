//! PAC-Bayes generalization-bound machinery: the diagonal Gaussian KL, the
//! Gaussian-posterior bound for diffusion-time priors, the classification
//! task term M, specialized single-line bounds, and a Monte-Carlo check that
//! measured train/test gaps stay under the computed bound.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::optimizee::OptimizeeInstance;
use crate::rngutil::SeededRng;

pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct BoundInput {
    pub n: usize,
    pub k: usize,
    pub alpha_bar_t: f64,
    /// Prior mean anchor: the corollary's sqrt(alpha_bar_t) * x.
    pub mu: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub sigma_hat_diag: Vec<f64>,
    pub delta: f64,
    pub m_term: f64,
}

impl BoundInput {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::invalid("n must be >= 1"));
        }
        if self.k != self.mu.len() || self.k != self.mu_hat.len() || self.k != self.sigma_hat_diag.len() {
            return Err(Error::dim("k must equal len(mu) = len(mu_hat) = len(sigma_hat_diag)"));
        }
        if !(self.alpha_bar_t > 0.0 && self.alpha_bar_t < 1.0) {
            return Err(Error::invalid("alpha_bar_t must lie in (0,1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0,1)"));
        }
        if self.m_term <= 0.0 {
            return Err(Error::invalid("M must be positive"));
        }
        if self.sigma_hat_diag.iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("posterior variances must be positive"));
        }
        Ok(())
    }
}

/// KL(q || p) between diagonal Gaussians q = N(mu_hat, diag(sigma_hat)) and
/// p = N(mu, diag(sigma)): 0.5 [ sum log(s/s_hat) - k + sum (mu_hat-mu)^2/s
/// + sum s_hat/s ] with s the variances.
pub fn gaussian_kl(mu_hat: &[f64], sigma_hat_diag: &[f64], mu: &[f64], sigma_diag: &[f64]) -> Result<f64> {
    let k = mu.len();
    if mu_hat.len() != k || sigma_hat_diag.len() != k || sigma_diag.len() != k {
        return Err(Error::dim("gaussian_kl arguments must share one length"));
    }
    if sigma_hat_diag.iter().chain(sigma_diag).any(|&v| v <= 0.0) {
        return Err(Error::invalid("variances must be positive"));
    }
    let mut acc = -(k as f64);
    for i in 0..k {
        acc += (sigma_diag[i] / sigma_hat_diag[i]).ln();
        acc += (mu_hat[i] - mu[i]).powi(2) / sigma_diag[i];
        acc += sigma_hat_diag[i] / sigma_diag[i];
    }
    Ok(0.5 * acc)
}

/// Labeled terms of the Gaussian bound, for the CLI breakdown.
#[derive(Debug, Clone, Copy)]
pub struct GaussianBoundTerms {
    /// k log(1 - alpha_bar_t): how diffuse the prior is (diversity).
    pub diversity: f64,
    /// ||mu_hat - mu||^2, as printed (unscaled Euclidean).
    pub bias: f64,
    /// -log|Sigma_hat| - k + sum(sigma_hat^2)/(1 - alpha_bar_t).
    pub variance: f64,
    /// log(M / delta).
    pub task: f64,
    pub total: f64,
    /// The bias term as the generic Gaussian-KL path would scale it,
    /// ||mu_hat - mu||^2 / (1 - alpha_bar_t); reported alongside.
    pub bias_kl_scaled: f64,
}

pub fn diffl2o_gaussian_bound(inp: &BoundInput) -> Result<GaussianBoundTerms> {
    inp.validate()?;
    let one_minus = 1.0 - inp.alpha_bar_t;
    let diversity = inp.k as f64 * one_minus.ln();
    let log_det: f64 = inp.sigma_hat_diag.iter().map(|v| v.ln()).sum();
    let var_sum: f64 = inp.sigma_hat_diag.iter().sum();
    let variance = -log_det - inp.k as f64 + var_sum / one_minus;
    let bias: f64 = inp.mu_hat.iter().zip(&inp.mu).map(|(a, b)| (a - b).powi(2)).sum();
    let task = (inp.m_term / inp.delta).ln();
    let total = (diversity + variance + bias + task) / inp.n as f64;
    Ok(GaussianBoundTerms { diversity, bias, variance, task, total, bias_kl_scaled: bias / one_minus })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    SquaredDiff,
    BernoulliKL,
    /// Delta == 0; degenerate case where M must equal 1 exactly.
    Zero,
}

impl DistanceKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "squared" | "squareddiff" => Ok(DistanceKind::SquaredDiff),
            "bernoulli" | "bernoullikl" => Ok(DistanceKind::BernoulliKL),
            "zero" => Ok(DistanceKind::Zero),
            other => Err(Error::Config(format!("unknown distance '{other}'"))),
        }
    }
}

/// kl(a || b) for Bernoulli rates, with 0 log 0 := 0.
pub fn bernoulli_kl(a: f64, b: f64) -> f64 {
    let term = |p: f64, q: f64| if p == 0.0 { 0.0 } else { p * (p / q).ln() };
    term(a, b) + term(1.0 - a, 1.0 - b)
}

fn log_binom_pmf(m: usize, n: usize, p: f64) -> f64 {
    // endpoints: pmf concentrates at m=0 (p=0) or m=n (p=1)
    if p <= 0.0 {
        return if m == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p >= 1.0 {
        return if m == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let log_choose =
        ln_gamma(n as f64 + 1.0) - ln_gamma(m as f64 + 1.0) - ln_gamma((n - m) as f64 + 1.0);
    log_choose + m as f64 * p.ln() + (n - m) as f64 * (1.0 - p).ln()
}

fn distance(kind: DistanceKind, a: f64, b: f64) -> f64 {
    match kind {
        DistanceKind::SquaredDiff => (a - b).powi(2),
        DistanceKind::BernoulliKL => bernoulli_kl(a, b),
        DistanceKind::Zero => 0.0,
    }
}

/// M = sup over P in [0,1] of sum_m Binom(m; n, P) exp{n * Delta(m/n, P)},
/// evaluated on a uniform grid. Exact binomial enumeration in log space.
pub fn classification_m(n: usize, kind: DistanceKind, grid_size: usize) -> Result<f64> {
    if n == 0 || n > 64 {
        return Err(Error::invalid("classification_m needs 1 <= n <= 64"));
    }
    if grid_size < 101 {
        return Err(Error::invalid("grid_size must be >= 101"));
    }
    let mut best = f64::NEG_INFINITY;
    for gi in 0..grid_size {
        let p = gi as f64 / (grid_size - 1) as f64;
        // log-sum-exp over m of log pmf + n * distance
        let terms: Vec<f64> = (0..=n)
            .map(|m| log_binom_pmf(m, n, p) + n as f64 * distance(kind, m as f64 / n as f64, p))
            .filter(|v| v.is_finite())
            .collect();
        let hi = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = hi + terms.iter().map(|v| (v - hi).exp()).sum::<f64>().ln();
        best = best.max(log_sum);
    }
    Ok(best.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecializedKind {
    BernoulliKlLangfordSeeger,
    SquaredMcAllester,
    LinearLambda,
}

impl SpecializedKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "langford-seeger" | "bernoullikl" | "kl" => Ok(SpecializedKind::BernoulliKlLangfordSeeger),
            "mcallester" | "squared" => Ok(SpecializedKind::SquaredMcAllester),
            "linear" | "lambda" => Ok(SpecializedKind::LinearLambda),
            other => Err(Error::Config(format!("unknown specialized bound '{other}'"))),
        }
    }
}

/// Right-hand side of the selected specialization, as written:
///  - Langford-Seeger: (1/n)   [KL + log(sqrt(2n)/delta)], bounding kl(a||b)
///  - McAllester:      (1/(2n))[KL + log(sqrt(2n)/delta)], bounding (b-a)^2
///  - Linear lambda:   (1/l)   [KL - log(delta) + (l/n) * gap], bounding b-a
/// The linear row carries (b-a) on both sides; it is evaluated with the
/// supplied `gap`, not solved.
pub fn specialized_bound(
    kind: SpecializedKind,
    n: usize,
    kl_qp: f64,
    delta: f64,
    lambda: Option<f64>,
    gap: Option<f64>,
) -> Result<f64> {
    if n < 1 {
        return Err(Error::invalid("n must be >= 1"));
    }
    if kl_qp < 0.0 {
        return Err(Error::invalid("KL must be nonnegative"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid("delta must lie in (0,1]"));
    }
    let nf = n as f64;
    match kind {
        SpecializedKind::BernoulliKlLangfordSeeger => {
            Ok((kl_qp + ((2.0 * nf).sqrt() / delta).ln()) / nf)
        }
        SpecializedKind::SquaredMcAllester => {
            Ok((kl_qp + ((2.0 * nf).sqrt() / delta).ln()) / (2.0 * nf))
        }
        SpecializedKind::LinearLambda => {
            let l = lambda.ok_or_else(|| Error::invalid("linear bound needs lambda"))?;
            if l <= 0.0 {
                return Err(Error::invalid("lambda must be positive"));
            }
            let g = gap.unwrap_or(0.0);
            Ok((kl_qp - delta.ln() + l / nf * g) / l)
        }
    }
}

/// Smallest b >= a with kl(a||b) <= rhs, found by bisection on b in [a, 1).
/// At the returned point the identity kl(a||b) = rhs holds within 1e-9
/// (unless the bound is vacuous, in which case 1 is returned).
pub fn invert_bernoulli_kl(a: f64, rhs: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) || rhs < 0.0 {
        return Err(Error::invalid("need a in [0,1] and rhs >= 0"));
    }
    if bernoulli_kl(a, 1.0 - 1e-15) <= rhs {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (a, 1.0 - 1e-15);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bernoulli_kl(a, mid) <= rhs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, Copy)]
pub struct GapCheck {
    pub gap: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Fit diagonal Gaussian moments to samples; variances floored so a
/// collapsed posterior keeps log|Sigma| finite.
pub fn fit_moments(samples: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples.len() < 2 {
        return Err(Error::invalid("need at least 2 samples to fit moments"));
    }
    let k = samples[0].len();
    let n = samples.len() as f64;
    let mut mu = vec![0.0; k];
    for s in samples {
        if s.len() != k {
            return Err(Error::dim("moment samples must share one length"));
        }
        for i in 0..k {
            mu[i] += s[i];
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; k];
    for s in samples {
        for i in 0..k {
            var[i] += (s[i] - mu[i]).powi(2);
        }
    }
    for v in var.iter_mut() {
        *v = (*v / (n - 1.0)).max(VARIANCE_FLOOR);
    }
    Ok((mu, var))
}

/// Monte-Carlo estimate of log M = log E_{h~p} exp{n * Delta(h)} from prior
/// samples, in log space. Delta here is the per-solution |train - test| loss
/// gap, so the task term reflects the actual loss scale.
pub fn estimate_log_m<F: FnMut(&[f64]) -> Result<f64>>(
    prior_samples: &[Vec<f64>],
    n: usize,
    mut gap_of: F,
) -> Result<f64> {
    if prior_samples.is_empty() {
        return Err(Error::invalid("need prior samples to estimate M"));
    }
    let mut logs = Vec::with_capacity(prior_samples.len());
    for h in prior_samples {
        logs.push(n as f64 * gap_of(h)?);
    }
    let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(hi + (logs.iter().map(|v| (v - hi).exp()).sum::<f64>() / logs.len() as f64).ln())
}

/// Draw solutions from a sampler, measure the train/test loss gap across
/// instance families, fit posterior moments, and compare the gap against the
/// Gaussian bound. M is estimated by Monte Carlo over prior draws.
#[allow(clippy::too_many_arguments)]
pub fn empirical_gap_check<S, I>(
    mut solution_source: S,
    mut instance_source: I,
    n_train: usize,
    n_test: usize,
    alpha_bar_t: f64,
    anchor_x: &[f64],
    delta: f64,
    n_solutions: usize,
    rng: &mut SeededRng,
) -> Result<GapCheck>
where
    S: FnMut(&mut SeededRng) -> Result<Vec<f64>>,
    I: FnMut(&mut SeededRng) -> Result<OptimizeeInstance>,
{
    if n_solutions < 2 {
        return Err(Error::invalid("need at least 2 solution samples"));
    }
    if n_train < 1 || n_test < 1 {
        return Err(Error::invalid("need at least one train and one test instance"));
    }
    let train: Vec<OptimizeeInstance> =
        (0..n_train).map(|_| instance_source(rng)).collect::<Result<_>>()?;
    let test: Vec<OptimizeeInstance> =
        (0..n_test).map(|_| instance_source(rng)).collect::<Result<_>>()?;
    let mean_loss = |insts: &[OptimizeeInstance], x: &[f64]| -> Result<f64> {
        let mut acc = 0.0;
        for inst in insts {
            acc += inst.value(x)?;
        }
        Ok(acc / insts.len() as f64)
    };

    let solutions: Vec<Vec<f64>> =
        (0..n_solutions).map(|_| solution_source(rng)).collect::<Result<_>>()?;
    let k = anchor_x.len();
    let (mu_hat, sigma_hat) = fit_moments(&solutions)?;
    if mu_hat.len() != k {
        return Err(Error::dim("solution dimension must match anchor"));
    }
    let mut train_mean = 0.0;
    let mut test_mean = 0.0;
    for x in &solutions {
        train_mean += mean_loss(&train, x)?;
        test_mean += mean_loss(&test, x)?;
    }
    train_mean /= n_solutions as f64;
    test_mean /= n_solutions as f64;
    let gap = (train_mean - test_mean).abs();

    // prior draws around sqrt(alpha_bar) * x with variance 1 - alpha_bar
    let sqrt_ab = alpha_bar_t.sqrt();
    let noise_sd = (1.0 - alpha_bar_t).sqrt();
    let prior_samples: Vec<Vec<f64>> = (0..n_solutions)
        .map(|_| {
            let eps = crate::rngutil::standard_normal_vec(rng, k);
            (0..k).map(|i| sqrt_ab * anchor_x[i] + noise_sd * eps[i]).collect()
        })
        .collect();
    let n = n_train;
    let log_m = estimate_log_m(&prior_samples, n, |h| {
        Ok((mean_loss(&train, h)? - mean_loss(&test, h)?).abs())
    })?;
    let mu_prior: Vec<f64> = anchor_x.iter().map(|&x| sqrt_ab * x).collect();
    let inp = BoundInput {
        n,
        k,
        alpha_bar_t,
        mu: mu_prior,
        mu_hat,
        sigma_hat_diag: sigma_hat,
        delta,
        m_term: log_m.exp().max(1.0),
    };
    let bound = diffl2o_gaussian_bound(&inp)?.total;
    Ok(GapCheck { gap, bound, holds: gap <= bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizee::{sample_instance, Hyper, Kind};
    use crate::rngutil::{derive_seed, rng_from_seed, standard_normal_vec};

    #[test]
    fn kl_zero_iff_equal() {
        let mu = vec![0.3, -1.2, 4.0];
        let s = vec![0.5, 2.0, 1.0];
        assert_eq!(gaussian_kl(&mu, &s, &mu, &s).unwrap(), 0.0);
        let mut rng = rng_from_seed(1);
        for _ in 0..50 {
            let a = standard_normal_vec(&mut rng, 4);
            let b = standard_normal_vec(&mut rng, 4);
            let sa: Vec<f64> = standard_normal_vec(&mut rng, 4).iter().map(|v| v.abs() + 0.1).collect();
            let sb: Vec<f64> = standard_normal_vec(&mut rng, 4).iter().map(|v| v.abs() + 0.1).collect();
            let kl = gaussian_kl(&a, &sa, &b, &sb).unwrap();
            assert!(kl >= 0.0);
            if a != b || sa != sb {
                assert!(kl > 0.0);
            }
        }
    }

    #[test]
    fn kl_hand_value_and_asymmetry() {
        // k=1, mean gap 1, both variances 1 -> 0.5
        let v = gaussian_kl(&[1.0], &[1.0], &[0.0], &[1.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let ab = gaussian_kl(&[0.0], &[0.25], &[0.0], &[1.0]).unwrap();
        let ba = gaussian_kl(&[0.0], &[1.0], &[0.0], &[0.25]).unwrap();
        assert!((ab - ba).abs() > 1e-6);
    }

    #[test]
    fn gaussian_bound_matched_posterior_is_log_inv_delta_over_n() {
        let x = vec![0.7, -0.3, 1.1];
        let ab = 0.4_f64;
        let mu: Vec<f64> = x.iter().map(|v| ab.sqrt() * v).collect();
        let inp = BoundInput {
            n: 20,
            k: 3,
            alpha_bar_t: ab,
            mu: mu.clone(),
            mu_hat: mu.clone(),
            sigma_hat_diag: vec![1.0 - ab; 3],
            delta: 0.1,
            m_term: 1.0,
        };
        let out = diffl2o_gaussian_bound(&inp).unwrap();
        assert!((out.total - (1.0f64 / 0.1).ln() / 20.0).abs() < 1e-12);
        // cross-check: the KL path also vanishes for the matched posterior
        let kl = gaussian_kl(&inp.mu_hat, &inp.sigma_hat_diag, &mu, &vec![1.0 - ab; 3]).unwrap();
        assert!(kl.abs() < 1e-12);
    }

    #[test]
    fn gaussian_bound_scales_as_one_over_n() {
        let mk = |n| BoundInput {
            n,
            k: 2,
            alpha_bar_t: 0.5,
            mu: vec![0.1, 0.2],
            mu_hat: vec![0.4, -0.1],
            sigma_hat_diag: vec![0.3, 0.9],
            delta: 0.05,
            m_term: 2.0,
        };
        let b1 = diffl2o_gaussian_bound(&mk(100)).unwrap().total;
        let b10 = diffl2o_gaussian_bound(&mk(1000)).unwrap().total;
        assert!((b1 / b10 - 10.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_bound_cross_checked_value() {
        // k=2, n=100, alpha_bar=0.5, mu_hat=mu, sigma_hat^2=0.5, delta=0.05,
        // M=1: terms cancel to ln(20)/100 (verified by an independent
        // evaluation of the formula).
        let inp = BoundInput {
            n: 100,
            k: 2,
            alpha_bar_t: 0.5,
            mu: vec![0.0, 0.0],
            mu_hat: vec![0.0, 0.0],
            sigma_hat_diag: vec![0.5, 0.5],
            delta: 0.05,
            m_term: 1.0,
        };
        let out = diffl2o_gaussian_bound(&inp).unwrap();
        assert!((out.total - 0.029957322735539908).abs() < 1e-15);
    }

    #[test]
    fn gaussian_bound_monotone_in_bias() {
        let mk = |shift: f64| BoundInput {
            n: 50,
            k: 2,
            alpha_bar_t: 0.3,
            mu: vec![0.0, 0.0],
            mu_hat: vec![shift, 0.0],
            sigma_hat_diag: vec![0.5, 0.5],
            delta: 0.05,
            m_term: 1.0,
        };
        let a = diffl2o_gaussian_bound(&mk(0.1)).unwrap().total;
        let b = diffl2o_gaussian_bound(&mk(0.5)).unwrap().total;
        assert!(b > a);
    }

    #[test]
    fn classification_m_zero_distance_is_one() {
        for n in [1usize, 2, 7, 16, 33, 64] {
            let terms: Vec<f64> = (0..=n).map(|m| log_binom_pmf(m, n, 0.37)).collect();
            let total: f64 = terms.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "pmf sums to {total} at n={n}");
        }
        // zero distance makes every exp factor 1 -> M = 1 at every grid point
        for n in [1usize, 8, 32, 64] {
            let m = classification_m(n, DistanceKind::Zero, 101).unwrap();
            assert!((m - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classification_m_n1_squared_matches_brute_force() {
        let m = classification_m(1, DistanceKind::SquaredDiff, 100001).unwrap();
        // direct scalar maximization of (1-P) e^{P^2} + P e^{(1-P)^2}
        let mut best = f64::NEG_INFINITY;
        for i in 0..=1_000_000 {
            let p = i as f64 / 1e6;
            let v = (1.0 - p) * (p * p).exp() + p * ((1.0 - p) * (1.0 - p)).exp();
            best = best.max(v);
        }
        assert!((m - best).abs() < 1e-6, "{m} vs {best}");
    }

    #[test]
    fn classification_m_envelope() {
        let m = classification_m(20, DistanceKind::BernoulliKL, 1001).unwrap();
        assert!(m <= 2.0 * (20.0f64).sqrt() + 2.0, "M = {m}");
        assert!(m >= 1.0);
    }

    #[test]
    fn specialized_bound_plug_in_values() {
        // McAllester, n=50, KL=0, delta=1 -> ln(10)/100
        let v = specialized_bound(SpecializedKind::SquaredMcAllester, 50, 0.0, 1.0, None, None).unwrap();
        assert!((v - (10.0f64).ln() / 100.0).abs() < 1e-15);
        // KL=0, delta=1 -> pure log(sqrt(2n)) scaled by 1/n
        let v = specialized_bound(SpecializedKind::BernoulliKlLangfordSeeger, 8, 0.0, 1.0, None, None).unwrap();
        assert!((v - (4.0f64).ln() / 8.0).abs() < 1e-15);
        // monotone in KL for all rows
        for kind in [
            SpecializedKind::BernoulliKlLangfordSeeger,
            SpecializedKind::SquaredMcAllester,
            SpecializedKind::LinearLambda,
        ] {
            let lo = specialized_bound(kind, 30, 0.5, 0.1, Some(2.0), Some(0.1)).unwrap();
            let hi = specialized_bound(kind, 30, 1.0, 0.1, Some(2.0), Some(0.1)).unwrap();
            assert!(hi > lo);
        }
    }

    #[test]
    fn bernoulli_kl_inversion_fixed_point() {
        for (a, rhs) in [(0.1, 0.05), (0.0, 0.2), (0.3, 0.01), (0.5, 0.5)] {
            let b = invert_bernoulli_kl(a, rhs).unwrap();
            assert!(b >= a);
            if b < 1.0 {
                assert!((bernoulli_kl(a, b) - rhs).abs() < 1e-9, "a={a} rhs={rhs} b={b}");
            }
        }
    }

    #[test]
    fn moment_fit_floors_collapsed_variance() {
        let samples = vec![vec![1.0, 2.0]; 5];
        let (mu, var) = fit_moments(&samples).unwrap();
        assert_eq!(mu, vec![1.0, 2.0]);
        assert_eq!(var, vec![VARIANCE_FLOOR; 2]);
    }

    #[test]
    fn gap_check_constant_solution_is_finite() {
        let mut rng = rng_from_seed(3);
        let anchor = vec![0.2, -0.4];
        let mut inst_seed = 0u64;
        let out = empirical_gap_check(
            |_r| Ok(vec![0.2, -0.4]),
            |_r| {
                inst_seed += 1;
                sample_instance(Kind::Quadratic, (2, 2), Hyper::default(), derive_seed(77, inst_seed))
            },
            50,
            50,
            0.5,
            &anchor,
            0.05,
            10,
            &mut rng,
        )
        .unwrap();
        assert!(out.bound.is_finite());
        assert!(out.gap.is_finite());
    }

    #[test]
    fn gap_check_delta_monotonicity() {
        let anchor = vec![0.0; 3];
        let run = |delta: f64| {
            let mut rng = rng_from_seed(9);
            let mut inst_seed = 0u64;
            empirical_gap_check(
                |r| Ok(standard_normal_vec(r, 3)),
                |_r| {
                    inst_seed += 1;
                    sample_instance(Kind::Quadratic, (3, 3), Hyper::default(), derive_seed(5, inst_seed))
                },
                100,
                100,
                0.2,
                &anchor,
                delta,
                20,
                &mut rng,
            )
            .unwrap()
        };
        assert!(run(0.01).bound > run(0.5).bound);
    }
}
