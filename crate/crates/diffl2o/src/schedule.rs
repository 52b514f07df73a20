//! Variance schedules: the discrete DDPM beta schedule used by the forward
//! blurring / training pipeline, and the continuous s-sigma families (VP, VE,
//! EDM) with their time derivatives.

use std::io::Write;

use crate::error::{Error, Result};

/// Discrete DDPM schedule. `alpha_bar` has length `T+1` with `alpha_bar[0] = 1`
/// (the clean state), so MSE targets at `t-1 = 0` hit the unblurred solution.
#[derive(Debug, Clone)]
pub struct DiscreteSchedule {
    pub t_max: usize,
    /// beta[t-1] is the step-t coefficient, t = 1..T.
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    /// alpha_bar[t] = prod_{i<=t} (1 - beta_i), alpha_bar[0] = 1.
    pub alpha_bar: Vec<f64>,
}

impl DiscreteSchedule {
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }
}

/// beta_t linear in the step index, beta_1 = beta_min, beta_T = beta_max.
pub fn linear_beta(t_max: usize, beta_min: f64, beta_max: f64) -> Result<DiscreteSchedule> {
    if t_max < 1 {
        return Err(Error::invalid("schedule needs T >= 1"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::invalid(format!(
            "beta range must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let beta: Vec<f64> = (1..=t_max)
        .map(|t| {
            if t_max == 1 {
                beta_min
            } else {
                beta_min + (t - 1) as f64 * (beta_max - beta_min) / (t_max - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_max + 1);
    alpha_bar.push(1.0);
    let mut prod = 1.0;
    for a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    Ok(DiscreteSchedule { t_max, beta, alpha, alpha_bar })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdeFamily {
    Vp,
    Ve,
    Edm,
}

/// Continuous s-sigma schedule family. `beta0`/`delta_beta` only matter for VP.
#[derive(Debug, Clone, Copy)]
pub struct ContinuousSchedule {
    pub family: SdeFamily,
    pub beta0: f64,
    pub delta_beta: f64,
}

impl ContinuousSchedule {
    pub fn vp(beta0: f64, delta_beta: f64) -> Result<Self> {
        if beta0 <= 0.0 || delta_beta < 0.0 {
            return Err(Error::invalid("VP requires beta0 > 0 and delta_beta >= 0"));
        }
        Ok(ContinuousSchedule { family: SdeFamily::Vp, beta0, delta_beta })
    }

    pub fn ve() -> Self {
        ContinuousSchedule { family: SdeFamily::Ve, beta0: 0.0, delta_beta: 0.0 }
    }

    pub fn edm() -> Self {
        ContinuousSchedule { family: SdeFamily::Edm, beta0: 0.0, delta_beta: 0.0 }
    }
}

/// The four schedule quantities at time t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SSigma {
    pub s: f64,
    pub sigma: f64,
    pub s_dot: f64,
    pub sigma_dot: f64,
}

/// Evaluate (s, sigma, s_dot, sigma_dot) for the family at time t > 0.
pub fn s_sigma(sched: &ContinuousSchedule, t: f64) -> Result<SSigma> {
    if t <= 0.0 {
        return Err(Error::invalid(format!("s_sigma requires t > 0, got {t}")));
    }
    Ok(match sched.family {
        SdeFamily::Ve => SSigma { s: 1.0, sigma: t.sqrt(), s_dot: 0.0, sigma_dot: 1.0 / (2.0 * t.sqrt()) },
        SdeFamily::Edm => SSigma { s: 1.0, sigma: t, s_dot: 0.0, sigma_dot: 1.0 },
        SdeFamily::Vp => {
            let (b0, db) = (sched.beta0, sched.delta_beta);
            let expo = 0.5 * db * t * t + b0 * t;
            let sigma2 = expo.exp() - 1.0;
            let sigma = sigma2.sqrt();
            let s = (-0.25 * db * t * t - 0.5 * b0 * t).exp();
            let sigma_dot = (1.0 + sigma2) * (db * t + b0) / (2.0 * sigma);
            let s_dot = -sigma * sigma_dot / (1.0 + sigma2).powf(1.5);
            SSigma { s, sigma, s_dot, sigma_dot }
        }
    })
}

/// Emit `t,beta,alpha_bar,s,sigma` rows for plotting. The continuous columns
/// evaluate the VP family matched to the discrete range.
pub fn dump_csv<W: Write>(disc: &DiscreteSchedule, cont: &ContinuousSchedule, out: &mut W) -> Result<()> {
    writeln!(out, "t,beta,alpha_bar,s,sigma")?;
    for t in 1..=disc.t_max {
        let ss = s_sigma(cont, t as f64 / disc.t_max as f64)?;
        writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{:.17e}",
            t, disc.beta[t - 1], disc.alpha_bar[t], ss.s, ss.sigma
        )?;
    }
    Ok(())
}
