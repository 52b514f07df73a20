//! Solution trajectories: forward Gaussian blurring of a base solution,
//! analytic optimizer runs (GD / Adam), and Euler integration of the inertial
//! Hessian-damped ODE  x'' + (a/t) x' + b H(x) x' + c grad f(x) = 0.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::optimizee::OptimizeeInstance;
use crate::rngutil::SeededRng;
use crate::schedule::DiscreteSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    BlurredForward,
    AnalyticRun,
    IshdRun,
    PredictedBackward,
}

impl Provenance {
    fn to_byte(self) -> u8 {
        match self {
            Provenance::BlurredForward => 0,
            Provenance::AnalyticRun => 1,
            Provenance::IshdRun => 2,
            Provenance::PredictedBackward => 3,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => Provenance::BlurredForward,
            1 => Provenance::AnalyticRun,
            2 => Provenance::IshdRun,
            3 => Provenance::PredictedBackward,
            other => return Err(Error::Format(format!("unknown provenance byte {other}"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub provenance: Provenance,
    pub losses: Option<Vec<f64>>,
    pub seed: u64,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory is nonempty")
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.as_ref().and_then(|l| l.last().copied())
    }
}

const TRAJ_MAGIC: &[u8; 8] = b"DL2OTRJ1";

impl Trajectory {
    /// Binary columnar layout: magic, dim (u32 LE), length, provenance byte,
    /// seed, loss flag, then row-major f64 LE states (plus losses if present).
    pub fn write_binary<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(TRAJ_MAGIC)?;
        out.write_all(&(self.dim() as u32).to_le_bytes())?;
        out.write_all(&(self.states.len() as u32).to_le_bytes())?;
        out.write_all(&[self.provenance.to_byte()])?;
        out.write_all(&self.seed.to_le_bytes())?;
        out.write_all(&[self.losses.is_some() as u8])?;
        for state in &self.states {
            for v in state {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        if let Some(losses) = &self.losses {
            for v in losses {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(input: &mut R) -> Result<Trajectory> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != TRAJ_MAGIC {
            return Err(Error::Format("bad trajectory magic".into()));
        }
        let mut u32buf = [0u8; 4];
        input.read_exact(&mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        input.read_exact(&mut u32buf)?;
        let len = u32::from_le_bytes(u32buf) as usize;
        let mut byte = [0u8; 1];
        input.read_exact(&mut byte)?;
        let provenance = Provenance::from_byte(byte[0])?;
        let mut u64buf = [0u8; 8];
        input.read_exact(&mut u64buf)?;
        let seed = u64::from_le_bytes(u64buf);
        input.read_exact(&mut byte)?;
        let has_losses = byte[0] != 0;
        let read_f64 = |input: &mut R| -> Result<f64> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let mut states = Vec::with_capacity(len);
        for _ in 0..len {
            let mut row = Vec::with_capacity(dim);
            for _ in 0..dim {
                row.push(read_f64(input)?);
            }
            states.push(row);
        }
        let losses = if has_losses {
            let mut l = Vec::with_capacity(len);
            for _ in 0..len {
                l.push(read_f64(input)?);
            }
            Some(l)
        } else {
            None
        };
        Ok(Trajectory { states, provenance, losses, seed })
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "step")?;
        for i in 0..self.dim() {
            write!(out, ",x{i}")?;
        }
        if self.losses.is_some() {
            write!(out, ",loss")?;
        }
        writeln!(out)?;
        for (k, state) in self.states.iter().enumerate() {
            write!(out, "{k}")?;
            for v in state {
                write!(out, ",{v:.16e}")?;
            }
            if let Some(losses) = &self.losses {
                write!(out, ",{:.16e}", losses[k])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Forward blurring: states[t] = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps_t with a
/// fresh standard normal eps per step (each state drawn from its marginal).
/// states[0] is x0 exactly.
pub fn forward_blur(x0: &[f64], sched: &DiscreteSchedule, rng: &mut SeededRng, seed: u64) -> Trajectory {
    let mut states = Vec::with_capacity(sched.t_max + 1);
    states.push(x0.to_vec());
    for t in 1..=sched.t_max {
        let ab = sched.alpha_bar[t];
        let (sig, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
        let state: Vec<f64> = x0
            .iter()
            .map(|xi| sig * xi + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        states.push(state);
    }
    Trajectory { states, provenance: Provenance::BlurredForward, losses: None, seed }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Gd,
    Adam,
}

#[derive(Debug, Clone, Copy)]
pub struct AnalyticOptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub steps: usize,
}

impl AnalyticOptimizerConfig {
    pub fn gd(lr: f64, steps: usize) -> Self {
        AnalyticOptimizerConfig { kind: OptimizerKind::Gd, lr, adam_betas: (0.9, 0.999), adam_eps: 1e-8, steps }
    }

    pub fn adam(lr: f64, steps: usize) -> Self {
        AnalyticOptimizerConfig { kind: OptimizerKind::Adam, lr, adam_betas: (0.9, 0.999), adam_eps: 1e-8, steps }
    }
}

impl Default for AnalyticOptimizerConfig {
    fn default() -> Self {
        AnalyticOptimizerConfig::adam(0.01, 100)
    }
}

/// Run GD or Adam from `x_init`, recording every state and its loss.
pub fn run_analytic(inst: &OptimizeeInstance, cfg: &AnalyticOptimizerConfig, x_init: &[f64]) -> Result<Trajectory> {
    if x_init.len() != inst.dim_x {
        return Err(Error::dim(format!("x_init len {} != dim_x {}", x_init.len(), inst.dim_x)));
    }
    if cfg.lr <= 0.0 {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let mut x = x_init.to_vec();
    let mut states = vec![x.clone()];
    let mut losses = vec![inst.value(&x)?];
    let (b1, b2) = cfg.adam_betas;
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    for k in 1..=cfg.steps {
        let g = inst.gradient(&x)?;
        match cfg.kind {
            OptimizerKind::Gd => linalg::axpy(&mut x, -cfg.lr, &g),
            OptimizerKind::Adam => {
                for i in 0..x.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let mhat = m[i] / (1.0 - b1.powi(k as i32));
                    let vhat = v[i] / (1.0 - b2.powi(k as i32));
                    x[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.adam_eps);
                }
            }
        }
        let loss = inst.value(&x)?;
        if !loss.is_finite() || !linalg::all_finite(&x) {
            return Err(Error::Diverged(format!("analytic run diverged at step {k} (loss {loss})")));
        }
        states.push(x.clone());
        losses.push(loss);
    }
    Ok(Trajectory { states, provenance: Provenance::AnalyticRun, losses: Some(losses), seed: inst.seed })
}

/// Euler-discretize the inertial ODE as a first-order system in (x, v),
/// starting the clock at t0 = dt to dodge the a/t singularity.
pub fn ishd_integrate(
    inst: &OptimizeeInstance,
    coeffs: (f64, f64, f64),
    x0: &[f64],
    v0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    if dt <= 0.0 {
        return Err(Error::invalid("dt must be positive"));
    }
    if x0.len() != inst.dim_x || v0.len() != inst.dim_x {
        return Err(Error::dim("ishd state length mismatch"));
    }
    let (ca, cb, cg) = coeffs;
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    let mut states = vec![x.clone()];
    let mut losses = vec![inst.value(&x)?];
    for k in 0..steps {
        let t = dt * (k + 1) as f64;
        let grad = inst.gradient(&x)?;
        let hvp = if cb != 0.0 { inst.hessian_vector_product(&x, &v)? } else { vec![0.0; x.len()] };
        let mut accel = vec![0.0; x.len()];
        for i in 0..x.len() {
            accel[i] = -(ca / t) * v[i] - cb * hvp[i] - cg * grad[i];
        }
        linalg::axpy(&mut x, dt, &v);
        linalg::axpy(&mut v, dt, &accel);
        let loss = inst.value(&x)?;
        if !loss.is_finite() || !linalg::all_finite(&x) || !linalg::all_finite(&v) {
            return Err(Error::Diverged(format!("ishd run diverged at step {k}")));
        }
        states.push(x.clone());
        losses.push(loss);
    }
    Ok(Trajectory { states, provenance: Provenance::IshdRun, losses: Some(losses), seed: inst.seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizee::{identity_instance, sample_instance, Hyper, Kind};
    use crate::rngutil::{rng_from_seed, standard_normal_vec};
    use crate::schedule::linear_beta;

    #[test]
    fn forward_blur_starts_clean_and_reproduces() {
        let sched = linear_beta(50, 1e-5, 2e-2).unwrap();
        let x0 = [1.0, -2.0, 0.5];
        let a = forward_blur(&x0, &sched, &mut rng_from_seed(9), 9);
        let b = forward_blur(&x0, &sched, &mut rng_from_seed(9), 9);
        assert_eq!(a.states[0], x0.to_vec());
        assert_eq!(a.states, b.states);
        assert_eq!(a.states.len(), 51);
    }

    #[test]
    fn forward_blur_variance_matches_schedule() {
        let sched = linear_beta(100, 1e-5, 2e-2).unwrap();
        let mut rng = rng_from_seed(123);
        let n = 10_000;
        let mut sums = [0.0; 3];
        let mut sqs = [0.0; 3];
        let ts = [25usize, 50, 100];
        for _ in 0..n {
            let traj = forward_blur(&[0.0], &sched, &mut rng, 0);
            for (j, &t) in ts.iter().enumerate() {
                let v = traj.states[t][0];
                sums[j] += v;
                sqs[j] += v * v;
            }
        }
        for (j, &t) in ts.iter().enumerate() {
            let mean = sums[j] / n as f64;
            let var = sqs[j] / n as f64 - mean * mean;
            let expect = 1.0 - sched.alpha_bar[t];
            assert!((var - expect).abs() / expect < 0.05, "t={t}: var {var} vs {expect}");
        }
    }

    #[test]
    fn gd_on_identity_quadratic_is_geometric() {
        let inst = identity_instance(Kind::Quadratic, 2, Hyper::default()).unwrap();
        let traj = run_analytic(&inst, &AnalyticOptimizerConfig::gd(0.1, 10), &[1.0, 1.0]).unwrap();
        for (k, state) in traj.states.iter().enumerate() {
            let expect = 0.9f64.powi(k as i32);
            for s in state {
                assert!((s - expect).abs() < 1e-12);
            }
        }
        // monotone loss
        let losses = traj.losses.unwrap();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let inst = identity_instance(Kind::Quadratic, 4, Hyper::default()).unwrap();
        let traj = run_analytic(&inst, &AnalyticOptimizerConfig::adam(0.01, 500), &[1.0, -1.0, 0.7, 0.2]).unwrap();
        assert!(linalg::norm2(traj.last_state()) < 1e-3);
    }

    #[test]
    fn gd_fixed_point_at_zero_gradient() {
        let inst = identity_instance(Kind::Quadratic, 3, Hyper::default()).unwrap();
        let traj = run_analytic(&inst, &AnalyticOptimizerConfig::gd(0.1, 5), &[0.0; 3]).unwrap();
        for state in &traj.states {
            assert_eq!(state, &vec![0.0; 3]);
        }
    }

    #[test]
    fn mlp_value_decreases_under_adam() {
        let inst = sample_instance(Kind::MlpClassifier, (6, 3), Hyper::default(), 17).unwrap();
        let mut rng = rng_from_seed(3);
        let x0: Vec<f64> = standard_normal_vec(&mut rng, inst.dim_x).iter().map(|v| 0.1 * v).collect();
        let traj = run_analytic(&inst, &AnalyticOptimizerConfig::adam(0.05, 50), &x0).unwrap();
        let losses = traj.losses.unwrap();
        assert!(losses.last().unwrap() < &losses[0], "{} -> {}", losses[0], losses.last().unwrap());
    }

    #[test]
    fn ishd_free_oscillator_tracks_cosine() {
        // a=0, b=0, c=1 on the identity quadratic: x'' = -x, x(0)=1, v(0)=0.
        let inst = identity_instance(Kind::Quadratic, 1, Hyper::default()).unwrap();
        let dt = 0.01;
        let traj = ishd_integrate(&inst, (0.0, 0.0, 1.0), &[1.0], &[0.0], dt, 100).unwrap();
        for (k, state) in traj.states.iter().enumerate() {
            let t = dt * k as f64;
            assert!((state[0] - t.cos()).abs() < 0.05, "k={k}: {} vs {}", state[0], t.cos());
        }
    }

    #[test]
    fn ishd_equilibrium_is_constant() {
        let inst = identity_instance(Kind::Quadratic, 2, Hyper::default()).unwrap();
        let traj = ishd_integrate(&inst, (3.0, 0.1, 1.0), &[0.0, 0.0], &[0.0, 0.0], 0.01, 50).unwrap();
        for state in &traj.states {
            assert_eq!(state, &vec![0.0; 2]);
        }
    }

    #[test]
    fn ishd_descends_on_lasso() {
        let inst = sample_instance(Kind::Lasso, (5, 10), Hyper::default(), 8).unwrap();
        let mut rng = rng_from_seed(8);
        let x0 = standard_normal_vec(&mut rng, 10);
        let traj = ishd_integrate(&inst, (3.0, 0.1, 1.0), &x0, &vec![0.0; 10], 0.01, 200).unwrap();
        let losses = traj.losses.unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
    }

    #[test]
    fn ishd_heavy_damping_shrinks_velocity() {
        let inst = identity_instance(Kind::Quadratic, 2, Hyper::default()).unwrap();
        let dt = 0.01;
        let steps = 400;
        let mut x = vec![1.0, -1.0];
        let mut v = vec![0.0, 0.0];
        let mut speeds = Vec::new();
        for k in 0..steps {
            let t = dt * (k + 1) as f64;
            let grad = inst.gradient(&x).unwrap();
            let hvp = inst.hessian_vector_product(&x, &v).unwrap();
            for i in 0..2 {
                let accel = -(50.0 / t) * v[i] - 0.5 * hvp[i] - 0.5 * grad[i];
                x[i] += dt * v[i];
                v[i] += dt * accel;
            }
            speeds.push(linalg::norm2(&v));
        }
        // after the transient the speed decays
        let peak_at = speeds.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(speeds.last().unwrap() < &speeds[peak_at]);
    }

    #[test]
    fn binary_round_trip() {
        let traj = Trajectory {
            states: vec![vec![1.0, 2.0], vec![-0.5, 3.25]],
            provenance: Provenance::IshdRun,
            losses: Some(vec![0.5, 0.25]),
            seed: 42,
        };
        let mut buf = Vec::new();
        traj.write_binary(&mut buf).unwrap();
        let back = Trajectory::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.states, traj.states);
        assert_eq!(back.losses, traj.losses);
        assert_eq!(back.seed, 42);
        assert_eq!(back.provenance, Provenance::IshdRun);
    }
}
