//! The learned-optimizer core: guided backward sampling, denoiser training,
//! oracle co-training, the element-wise (dimension-free) variant, and the
//! hybrid denoise-then-Adam pipeline.

use crate::error::{Error, Result};
use crate::linalg;
use crate::net::{adam_update, init_net, pos_embed, time_embed, Activation, AdamState, DenoiserNet, InputLayout};
use crate::optimizee::OptimizeeInstance;
use crate::rngutil::{standard_normal_vec, SeededRng};
use crate::schedule::DiscreteSchedule;
use crate::trajectory::{forward_blur, run_analytic, AnalyticOptimizerConfig, Provenance, Trajectory};

pub const TEMB_DIM: usize = 32;
pub const PEMB_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceVariant {
    /// The optimizee gradient at the current state, recomputed every step.
    Gradient,
    /// The flattened problem parameters theta, constant across steps.
    Global,
    /// Both, concatenated: [gradient, theta].
    All,
}

impl GuidanceVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gradient" => Ok(GuidanceVariant::Gradient),
            "global" => Ok(GuidanceVariant::Global),
            "all" => Ok(GuidanceVariant::All),
            other => Err(Error::Config(format!("unknown guidance variant '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GuidanceVariant::Gradient => "gradient",
            GuidanceVariant::Global => "global",
            GuidanceVariant::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GuidanceSpec {
    pub variant: GuidanceVariant,
    pub dim_g: usize,
}

impl GuidanceSpec {
    /// Fix dim_g from the instance shape.
    pub fn for_instance(variant: GuidanceVariant, inst: &OptimizeeInstance) -> Self {
        let theta_len = inst.flatten_theta().len();
        let dim_g = match variant {
            GuidanceVariant::Gradient => inst.dim_x,
            GuidanceVariant::Global => theta_len,
            GuidanceVariant::All => inst.dim_x + theta_len,
        };
        GuidanceSpec { variant, dim_g }
    }
}

pub fn make_guidance(spec: &GuidanceSpec, inst: &OptimizeeInstance, x_current: &[f64]) -> Result<Vec<f64>> {
    let g = match spec.variant {
        GuidanceVariant::Gradient => inst.gradient(x_current)?,
        GuidanceVariant::Global => inst.flatten_theta(),
        GuidanceVariant::All => {
            let mut g = inst.gradient(x_current)?;
            g.extend(inst.flatten_theta());
            g
        }
    };
    if g.len() != spec.dim_g {
        return Err(Error::dim(format!("guidance length {} != spec dim_g {}", g.len(), spec.dim_g)));
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub t_max: usize,
    pub blend: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// (N1, N2) phase boundaries for the element-wise variant.
    pub ele_phases: (usize, usize),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { t_max: 100, blend: 0.5, epochs: 30, lr: 1e-3, seed: 0, ele_phases: (0, 0) }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.blend) {
            return Err(Error::invalid("blend must lie in [0,1]"));
        }
        let (n1, n2) = self.ele_phases;
        if n1 > n2 || n2 > self.epochs {
            return Err(Error::invalid("ele phases must satisfy N1 <= N2 <= epochs"));
        }
        Ok(())
    }
}

/// Zero the last affine layer so the fresh net predicts 0 everywhere. The
/// sampler feeds each output back as the next input, and a generic random
/// init amplifies its own output exponentially across steps; starting from
/// the zero map keeps early training in a bounded regime.
fn zero_last_layer(net: &mut DenoiserNet) {
    let n = net.layer_sizes.len();
    let last = net.layer_sizes[n - 1] * net.layer_sizes[n - 2] + net.layer_sizes[n - 1];
    let total = net.params.len();
    net.params[total - last..].iter_mut().for_each(|p| *p = 0.0);
}

/// Default denoiser: [dim_x + dim_g + 32 -> 256 -> 256 -> dim_x], SiLU.
pub fn default_opt_net(dim_x: usize, dim_g: usize, rng: &mut SeededRng) -> DenoiserNet {
    let layout = InputLayout { dim_x, dim_g, dim_temb: TEMB_DIM, dim_pemb: 0 };
    let mut net =
        init_net(&[layout.total(), 256, 256, dim_x], Activation::SiLU, layout, rng).expect("valid sizes");
    zero_last_layer(&mut net);
    net
}

/// Default oracle: [dim_g -> 128 -> dim_x], SiLU.
pub fn default_oracle_net(dim_g: usize, dim_x: usize, rng: &mut SeededRng) -> DenoiserNet {
    let layout = InputLayout { dim_x: 0, dim_g, dim_temb: 0, dim_pemb: 0 };
    init_net(&[dim_g, 128, dim_x], Activation::SiLU, layout, rng).expect("valid sizes")
}

/// Element-wise denoiser: scalar coordinate + scalar guidance + TE + PE -> 1.
pub fn default_ele_net(rng: &mut SeededRng) -> DenoiserNet {
    let layout = InputLayout { dim_x: 1, dim_g: 1, dim_temb: TEMB_DIM, dim_pemb: PEMB_DIM };
    let mut net =
        init_net(&[layout.total(), 128, 128, 1], Activation::SiLU, layout, rng).expect("valid sizes");
    zero_last_layer(&mut net);
    net
}

fn denoiser_input(x_t: &[f64], g: &[f64], t: usize) -> Result<Vec<f64>> {
    let mut input = Vec::with_capacity(x_t.len() + g.len() + TEMB_DIM);
    input.extend_from_slice(x_t);
    input.extend_from_slice(g);
    input.extend(time_embed(t, TEMB_DIM)?);
    Ok(input)
}

fn check_opt_layout(opt: &DenoiserNet, inst: &OptimizeeInstance, gspec: &GuidanceSpec) -> Result<()> {
    let l = opt.layout;
    if l.dim_x != inst.dim_x || l.dim_g != gspec.dim_g || l.dim_temb != TEMB_DIM || l.dim_pemb != 0 {
        return Err(Error::dim(format!(
            "opt layout ({}, {}, {}, {}) does not match (dim_x={}, dim_g={}, temb={}, pemb=0)",
            l.dim_x, l.dim_g, l.dim_temb, l.dim_pemb, inst.dim_x, gspec.dim_g, TEMB_DIM
        )));
    }
    Ok(())
}

/// Deterministic denoising from x_T ~ N(0, I): no per-step noise injection.
/// Returns states ordered [x_T, ..., x_0] with per-state losses.
pub fn backward_sample(
    opt: &DenoiserNet,
    inst: &OptimizeeInstance,
    gspec: &GuidanceSpec,
    sched: &DiscreteSchedule,
    rng: &mut SeededRng,
    seed: u64,
) -> Result<Trajectory> {
    backward_sample_steps(opt, inst, gspec, sched, sched.t_max, rng, seed)
}

/// Denoise only the first `steps` of the reverse chain (t = T down to
/// T - steps + 1); `steps = T` is full sampling.
pub fn backward_sample_steps(
    opt: &DenoiserNet,
    inst: &OptimizeeInstance,
    gspec: &GuidanceSpec,
    sched: &DiscreteSchedule,
    steps: usize,
    rng: &mut SeededRng,
    seed: u64,
) -> Result<Trajectory> {
    check_opt_layout(opt, inst, gspec)?;
    if steps > sched.t_max {
        return Err(Error::invalid("steps exceeds schedule length"));
    }
    let mut x = standard_normal_vec(rng, inst.dim_x);
    let mut states = vec![x.clone()];
    let mut losses = vec![inst.value(&x)?];
    for k in 0..steps {
        let t = sched.t_max - k;
        let g = make_guidance(gspec, inst, &x)?;
        x = opt.forward(&denoiser_input(&x, &g, t)?)?;
        if !linalg::all_finite(&x) {
            return Err(Error::Diverged(format!("backward sampling diverged at t={t}")));
        }
        states.push(x.clone());
        losses.push(inst.value(&x)?);
    }
    Ok(Trajectory { states, provenance: Provenance::PredictedBackward, losses: Some(losses), seed })
}

#[derive(Debug, Clone, Copy)]
pub struct TrainStep {
    pub epoch: usize,
    pub t: usize,
    pub l1: f64,
    pub l2: f64,
    pub loss: f64,
}

/// Per-step training log plus instrumentation counters: how often the task
/// objective f was evaluated and how often forward-trajectory targets were
/// read.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub steps: Vec<TrainStep>,
    pub f_evals: usize,
    pub target_reads: usize,
}

impl TrainLog {
    /// Mean denoising MSE at t=1 (the x_0 reconstruction) for a given epoch.
    pub fn epoch_final_mse(&self, epoch: usize) -> Option<f64> {
        self.steps.iter().find(|s| s.epoch == epoch && s.t == 1).map(|s| s.l2)
    }
}

/// One reverse-chain pass of denoiser training on a fixed forward trajectory:
/// for t = T..1 predict x_{t-1}, blend task loss and denoising MSE, and take
/// one Adam step per t. The next step consumes the post-update prediction with
/// gradient history cut. Returns the final x_0 prediction.
pub fn train_epoch(
    opt: &mut DenoiserNet,
    adam: &mut AdamState,
    inst: &OptimizeeInstance,
    fwd: &Trajectory,
    gspec: &GuidanceSpec,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut SeededRng,
    log: &mut TrainLog,
) -> Result<Vec<f64>> {
    check_opt_layout(opt, inst, gspec)?;
    if fwd.states.len() != cfg.t_max + 1 {
        return Err(Error::dim(format!(
            "forward trajectory has {} states, expected T+1 = {}",
            fwd.states.len(),
            cfg.t_max + 1
        )));
    }
    if fwd.provenance != Provenance::BlurredForward {
        return Err(Error::invalid("training targets must come from a forward blur"));
    }
    let blend = cfg.blend;
    let dim = inst.dim_x as f64;
    let mut x = standard_normal_vec(rng, inst.dim_x);
    for t in (1..=cfg.t_max).rev() {
        let g = make_guidance(gspec, inst, &x)?;
        let input = denoiser_input(&x, &g, t)?;
        let pred = opt.forward(&input)?;

        let mut d_out = vec![0.0; inst.dim_x];
        let l1 = if blend > 0.0 {
            log.f_evals += 1;
            let fg = inst.gradient(&pred)?;
            linalg::axpy(&mut d_out, blend, &fg);
            inst.value(&pred)?
        } else {
            0.0
        };
        let l2 = if blend < 1.0 {
            log.target_reads += 1;
            let target = &fwd.states[t - 1];
            for i in 0..inst.dim_x {
                d_out[i] += (1.0 - blend) * 2.0 * (pred[i] - target[i]) / dim;
            }
            linalg::mean_sq_err(target, &pred)
        } else {
            0.0
        };
        let loss = blend * l1 + (1.0 - blend) * l2;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("training loss non-finite at epoch {epoch}, t={t}")));
        }
        let (pgrads, _) = opt.backward(&input, &d_out)?;
        adam_update(&mut opt.params, &pgrads, adam, cfg.lr)?;
        log.steps.push(TrainStep { epoch, t, l1, l2, loss });

        // detached input for the next step, from the updated network
        x = opt.forward(&input)?;
        if !linalg::all_finite(&x) {
            return Err(Error::Diverged(format!("training state non-finite at epoch {epoch}, t={t}")));
        }
    }
    Ok(x)
}

/// Train on one fixed forward trajectory for `cfg.epochs` reverse passes.
pub fn train(
    opt: &mut DenoiserNet,
    inst: &OptimizeeInstance,
    fwd: &Trajectory,
    gspec: &GuidanceSpec,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut adam = AdamState::new(opt.params.len());
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        train_epoch(opt, &mut adam, inst, fwd, gspec, cfg, epoch, rng, &mut log)?;
    }
    Ok(log)
}

/// The oracle takes a single update per loss per epoch, far fewer steps than
/// the denoiser's per-t updates, so it gets a larger fixed learning rate to
/// track the task at a comparable pace.
pub const ORACLE_LR: f64 = 1e-2;

/// Oracle behavior under ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OracleVariant {
    /// x_0 replaced with fresh noise each epoch.
    Noisy,
    /// Oracle network used but never updated.
    Fixed,
    /// Oracle updated with the pre-trajectory task loss only.
    Partial,
    /// x_0 pinned to a precomputed near-optimal solution.
    Perfect,
    /// Full co-training: task loss before, reconstruction loss after.
    Ours,
}

impl OracleVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "noisy" => Ok(OracleVariant::Noisy),
            "fixed" => Ok(OracleVariant::Fixed),
            "partial" => Ok(OracleVariant::Partial),
            "perfect" => Ok(OracleVariant::Perfect),
            "ours" => Ok(OracleVariant::Ours),
            other => Err(Error::Config(format!("unknown oracle variant '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OracleVariant::Noisy => "noisy",
            OracleVariant::Fixed => "fixed",
            OracleVariant::Partial => "partial",
            OracleVariant::Perfect => "perfect",
            OracleVariant::Ours => "ours",
        }
    }
}

/// Co-train the oracle (initial-point generator) and the denoiser. Per epoch
/// and instance: draw x_0 from the oracle, one Adam step on the oracle against
/// f(theta, x_0), blur forward from x_0, one denoiser training epoch, then one
/// Adam step on the oracle against MSE(x_0, predicted x_0). Variants switch
/// off parts of this loop.
pub fn train_with_oracle(
    oracle: &mut DenoiserNet,
    opt: &mut DenoiserNet,
    instances: &[OptimizeeInstance],
    gspec: &GuidanceSpec,
    cfg: &TrainConfig,
    sched: &DiscreteSchedule,
    variant: OracleVariant,
    rng: &mut SeededRng,
) -> Result<TrainLog> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::invalid("need at least one training instance"));
    }
    let dim_x = instances[0].dim_x;
    if oracle.output_dim() != dim_x || oracle.input_dim() != gspec.dim_g {
        return Err(Error::dim("oracle must map dim_g -> dim_x"));
    }
    // anchor for the Perfect variant: a strong Adam run per instance
    let solutions: Vec<Vec<f64>> = if variant == OracleVariant::Perfect {
        instances
            .iter()
            .map(|inst| {
                let x0 = standard_normal_vec(rng, inst.dim_x);
                run_analytic(inst, &AnalyticOptimizerConfig::adam(0.05, 500), &x0)
                    .map(|t| t.last_state().to_vec())
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut opt_adam = AdamState::new(opt.params.len());
    let mut oracle_adam = AdamState::new(oracle.params.len());
    let mut log = TrainLog::default();
    let anchor = vec![0.0; dim_x];
    for epoch in 0..cfg.epochs {
        for (idx, inst) in instances.iter().enumerate() {
            let g0 = make_guidance(gspec, inst, &anchor)?;
            // pre-trajectory oracle step
            if matches!(variant, OracleVariant::Partial | OracleVariant::Ours) {
                let x0 = oracle.forward(&g0)?;
                let d_out = inst.gradient(&x0)?;
                let (pg, _) = oracle.backward(&g0, &d_out)?;
                adam_update(&mut oracle.params, &pg, &mut oracle_adam, ORACLE_LR)?;
            }
            let x0 = match variant {
                OracleVariant::Noisy => standard_normal_vec(rng, dim_x),
                OracleVariant::Perfect => solutions[idx].clone(),
                _ => oracle.forward(&g0)?,
            };
            if !linalg::all_finite(&x0) {
                return Err(Error::Diverged("oracle output non-finite".into()));
            }
            let fwd = forward_blur(&x0, sched, rng, cfg.seed);
            let x0_hat = train_epoch(opt, &mut opt_adam, inst, &fwd, gspec, cfg, epoch, rng, &mut log)?;
            // post-trajectory oracle step against the denoiser's x_0
            if variant == OracleVariant::Ours {
                let x0_now = oracle.forward(&g0)?;
                let d_out: Vec<f64> =
                    x0_now.iter().zip(&x0_hat).map(|(a, b)| 2.0 * (a - b) / dim_x as f64).collect();
                let (pg, _) = oracle.backward(&g0, &d_out)?;
                adam_update(&mut oracle.params, &pg, &mut oracle_adam, ORACLE_LR)?;
            }
        }
    }
    Ok(log)
}

fn ele_input(xi: f64, gi: f64, t: usize, pos: usize) -> Result<Vec<f64>> {
    let mut input = Vec::with_capacity(2 + TEMB_DIM + PEMB_DIM);
    input.push(xi);
    input.push(gi);
    input.extend(time_embed(t, TEMB_DIM)?);
    input.extend(pos_embed(pos, PEMB_DIM)?);
    Ok(input)
}

fn ele_update_positions(dim: usize) -> Vec<usize> {
    if dim < 3 {
        // chunking collapses to per-element updates
        return (1..=dim).collect();
    }
    vec![dim / 3, 2 * dim / 3, dim]
}

/// Global-to-local training of the element-wise denoiser: accumulate gradients
/// over coordinate predictions and fire parameter updates per phase — at
/// pos = d early, at the third-chunk marks in the middle, and per element
/// late. The per-coordinate inputs keep the network independent of d.
pub fn train_ele(
    opt: &mut DenoiserNet,
    inst: &OptimizeeInstance,
    fwd: &Trajectory,
    gspec: &GuidanceSpec,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainLog> {
    cfg.validate()?;
    if gspec.variant != GuidanceVariant::Gradient {
        return Err(Error::invalid("element-wise training requires gradient guidance"));
    }
    if opt.output_dim() != 1 || opt.layout.dim_pemb != PEMB_DIM {
        return Err(Error::dim("element-wise net needs a scalar head and a PE input slot"));
    }
    if fwd.states.len() != cfg.t_max + 1 {
        return Err(Error::dim("forward trajectory length mismatch"));
    }
    let dim = inst.dim_x;
    let (n1, n2) = cfg.ele_phases;
    let chunk_marks = ele_update_positions(dim);
    let mut adam = AdamState::new(opt.params.len());
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let mut x = standard_normal_vec(rng, dim);
        for t in (1..=cfg.t_max).rev() {
            let g = inst.gradient(&x)?;
            let target = &fwd.states[t - 1];
            let mut pred = x.clone();
            let mut acc = vec![0.0; opt.params.len()];
            for pos in 1..=dim {
                let input = ele_input(x[pos - 1], g[pos - 1], t, pos)?;
                let out = opt.forward(&input)?[0];
                pred[pos - 1] = out;
                let l1 = inst.value(&pred)?;
                log.f_evals += 1;
                log.target_reads += 1;
                let l2 = linalg::mean_sq_err(target, &pred);
                let d_out = cfg.blend * inst.gradient(&pred)?[pos - 1]
                    + (1.0 - cfg.blend) * 2.0 * (out - target[pos - 1]) / dim as f64;
                let (pg, _) = opt.backward(&input, &[d_out])?;
                for (a, p) in acc.iter_mut().zip(&pg) {
                    *a += p;
                }
                let fire = if epoch < n1 {
                    pos == dim
                } else if epoch <= n2 {
                    chunk_marks.contains(&pos)
                } else {
                    true
                };
                if fire {
                    adam_update(&mut opt.params, &acc, &mut adam, cfg.lr)?;
                    acc.iter_mut().for_each(|a| *a = 0.0);
                }
                log.steps.push(TrainStep {
                    epoch,
                    t,
                    l1,
                    l2,
                    loss: cfg.blend * l1 + (1.0 - cfg.blend) * l2,
                });
            }
            if !linalg::all_finite(&pred) {
                return Err(Error::Diverged(format!("ele training diverged at epoch {epoch}, t={t}")));
            }
            x = pred;
        }
    }
    Ok(log)
}

/// Element-wise backward sampling; works for any dimension.
pub fn ele_backward_sample(
    opt: &DenoiserNet,
    inst: &OptimizeeInstance,
    sched: &DiscreteSchedule,
    rng: &mut SeededRng,
    seed: u64,
) -> Result<Trajectory> {
    let dim = inst.dim_x;
    let mut x = standard_normal_vec(rng, dim);
    let mut states = vec![x.clone()];
    let mut losses = vec![inst.value(&x)?];
    for k in 0..sched.t_max {
        let t = sched.t_max - k;
        let g = inst.gradient(&x)?;
        let mut next = vec![0.0; dim];
        for pos in 1..=dim {
            next[pos - 1] = opt.forward(&ele_input(x[pos - 1], g[pos - 1], t, pos)?)?[0];
        }
        if !linalg::all_finite(&next) {
            return Err(Error::Diverged(format!("ele sampling diverged at t={t}")));
        }
        x = next;
        states.push(x.clone());
        losses.push(inst.value(&x)?);
    }
    Ok(Trajectory { states, provenance: Provenance::PredictedBackward, losses: Some(losses), seed })
}

/// Denoise for `switch_step` steps, then hand the point to Adam. The returned
/// trajectory concatenates both phases (the switch point appears once).
pub fn hybrid_optimize(
    opt: &DenoiserNet,
    inst: &OptimizeeInstance,
    gspec: &GuidanceSpec,
    sched: &DiscreteSchedule,
    switch_step: usize,
    adam_cfg: &AnalyticOptimizerConfig,
    rng: &mut SeededRng,
    seed: u64,
) -> Result<Trajectory> {
    if switch_step > sched.t_max {
        return Err(Error::invalid("switch_step exceeds schedule length"));
    }
    let head = backward_sample_steps(opt, inst, gspec, sched, switch_step, rng, seed)?;
    let tail = run_analytic(inst, adam_cfg, head.last_state())?;
    let mut states = head.states;
    let mut losses = head.losses.unwrap_or_default();
    states.extend(tail.states.into_iter().skip(1));
    if let Some(tl) = tail.losses {
        losses.extend(tl.into_iter().skip(1));
    }
    Ok(Trajectory { states, provenance: Provenance::PredictedBackward, losses: Some(losses), seed })
}
