//! Fixed-step Euler–Maruyama integrator and the pathwise Jacobian flow.

use super::{
    wrap_position, DynamicsSpec, NoiseKind, ParticleEnsemble, SdeError, TimeVectorField,
    Trajectory, VectorField, BLOWUP_LIMIT,
};
use crate::exec;
use crate::expr::MAX_DIM;
use crate::rng::ParticleRng;
use std::sync::Mutex;

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Record a frame every `record_stride` steps (0 = final frame only).
    /// The initial frame is always included.
    pub record_stride: usize,
    /// Number of steps already consumed from each noise stream; chained
    /// sub-runs pass the running total so increments never repeat.
    pub noise_step_offset: u64,
}

impl SimOptions {
    pub fn new(dt: f64, horizon: f64, seed: u64) -> SimOptions {
        SimOptions {
            dt,
            horizon,
            seed,
            record_stride: 0,
            noise_step_offset: 0,
        }
    }

    pub fn with_noise_offset(mut self, steps: u64) -> SimOptions {
        self.noise_step_offset = steps;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> SimOptions {
        self.record_stride = stride;
        self
    }

    fn validate(&self) -> Result<usize, SdeError> {
        if !(self.dt > 0.0) {
            return Err(SdeError::Invalid("dt must be positive".into()));
        }
        if self.horizon < self.dt {
            return Err(SdeError::Invalid("horizon must be at least dt".into()));
        }
        Ok((self.horizon / self.dt).round().max(1.0) as usize)
    }
}

/// First error reported across parallel workers, keyed by the smallest
/// particle index so the error itself is deterministic.
struct ErrSlot(Mutex<Option<(usize, SdeError)>>);

impl ErrSlot {
    fn new() -> ErrSlot {
        ErrSlot(Mutex::new(None))
    }

    fn report(&self, idx: usize, e: SdeError) {
        let mut slot = self.0.lock().unwrap();
        match &*slot {
            Some((held, _)) if *held <= idx => {}
            _ => *slot = Some((idx, e)),
        }
    }

    fn take(&self) -> Option<SdeError> {
        self.0.lock().unwrap().take().map(|(_, e)| e)
    }
}

#[inline]
fn apply_noise(noise: &NoiseKind, sqrt_dt: f64, xi: &[f64], x: &mut [f64]) {
    match noise {
        NoiseKind::Zero => {}
        NoiseKind::Iso(s) => {
            for (xv, z) in x.iter_mut().zip(xi) {
                *xv += s * sqrt_dt * z;
            }
        }
        NoiseKind::Diag(diag) => {
            for ((xv, z), s) in x.iter_mut().zip(xi).zip(diag) {
                *xv += s * sqrt_dt * z;
            }
        }
        NoiseKind::Full(m) => {
            let d = x.len();
            for i in 0..d {
                let mut acc = 0.0;
                for (j, z) in xi.iter().enumerate().take(d) {
                    acc += m[(i, j)] * z;
                }
                x[i] += sqrt_dt * acc;
            }
        }
    }
}

#[inline]
fn check_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite() && v.abs() <= BLOWUP_LIMIT)
}

/// Shared ensemble stepping loop. `pre_step` may compute a per-step shared
/// quantity from the whole ensemble (the empirical sums of the interacting
/// system); `drift` fills the per-particle drift.
fn run_ensemble<P, D>(
    spec: &DynamicsSpec,
    init: &ParticleEnsemble,
    opts: &SimOptions,
    pre_step: P,
    drift: D,
) -> Result<Trajectory, SdeError>
where
    P: Fn(&[f64]) -> Result<Vec<f64>, SdeError>,
    D: Fn(f64, &[f64], &[f64], &mut [f64]) -> Result<(), SdeError> + Sync,
{
    let steps = opts.validate()?;
    let d = spec.dim();
    if init.dim() != d {
        return Err(SdeError::Invalid(format!(
            "ensemble dimension {} does not match dynamics dimension {d}",
            init.dim()
        )));
    }
    let dt = opts.dt;
    let sqrt_dt = dt.sqrt();
    let space = spec.space();
    let noise = spec.noise.clone();
    let draw_noise = noise != NoiseKind::Zero;

    let mut state = init.clone();
    state.space = space;
    let mut rngs: Vec<ParticleRng> = state
        .streams()
        .iter()
        .map(|&s| {
            let mut r = ParticleRng::new(opts.seed, s);
            if opts.noise_step_offset > 0 {
                r.seek_to_step(opts.noise_step_offset, d);
            }
            r
        })
        .collect();

    let mut times = vec![init.t];
    let mut frames = vec![state.clone()];
    let err = ErrSlot::new();

    for step in 0..steps {
        let t = init.t + step as f64 * dt;
        let shared = pre_step(state.positions())?;
        let positions = state.positions_mut();
        exec::for_each_particle(positions, &mut rngs, d, |i, x, rng| {
            let mut b = [0.0; MAX_DIM];
            if let Err(e) = drift(t, x, &shared, &mut b[..d]) {
                err.report(i, e);
                return;
            }
            for (xv, bv) in x.iter_mut().zip(&b[..d]) {
                *xv += bv * dt;
            }
            if draw_noise {
                let mut xi = [0.0; MAX_DIM];
                rng.fill_standard_normals(&mut xi[..d]);
                apply_noise(&noise, sqrt_dt, &xi[..d], x);
            }
            wrap_position(space, x);
            if !check_finite(x) {
                err.report(
                    i,
                    SdeError::BlowUp {
                        t: t + dt,
                        particle: i,
                        limit: BLOWUP_LIMIT,
                    },
                );
            }
        });
        if let Some(e) = err.take() {
            return Err(e);
        }
        state.t = init.t + (step + 1) as f64 * dt;
        let last = step + 1 == steps;
        if (opts.record_stride > 0 && (step + 1) % opts.record_stride == 0 && !last) || last {
            times.push(state.t);
            frames.push(state.clone());
        }
    }
    Ok(Trajectory { times, frames })
}

/// Integrate the linear (frozen-interaction) process `dY = (b + α)(Y) dt + σ dB`.
pub fn simulate_linear(
    spec: &DynamicsSpec,
    alpha: &dyn VectorField,
    init: &ParticleEnsemble,
    opts: &SimOptions,
) -> Result<Trajectory, SdeError> {
    let d = spec.dim();
    run_ensemble(
        spec,
        init,
        opts,
        |_| Ok(Vec::new()),
        |_t, x, _shared, out| {
            spec.drift().eval_vector(x, out)?;
            let mut a = [0.0; MAX_DIM];
            alpha.eval_into(x, &mut a[..d])?;
            for (o, av) in out.iter_mut().zip(&a[..d]) {
                *o += av;
            }
            Ok(())
        },
    )
}

/// Integrate the non-homogeneous linear process
/// `dY = (b + α)(Y) dt + k_t(Y) dt + σ dB`.
pub fn simulate_nonhomogeneous(
    spec: &DynamicsSpec,
    alpha: &dyn VectorField,
    k: &dyn TimeVectorField,
    init: &ParticleEnsemble,
    opts: &SimOptions,
) -> Result<Trajectory, SdeError> {
    let d = spec.dim();
    run_ensemble(
        spec,
        init,
        opts,
        |_| Ok(Vec::new()),
        |t, x, _shared, out| {
            spec.drift().eval_vector(x, out)?;
            let mut a = [0.0; MAX_DIM];
            alpha.eval_into(x, &mut a[..d])?;
            for (o, av) in out.iter_mut().zip(&a[..d]) {
                *o += av;
            }
            let mut kv = [0.0; MAX_DIM];
            k.eval_into(t, x, &mut kv[..d])?;
            for (o, val) in out.iter_mut().zip(&kv[..d]) {
                *o += val;
            }
            Ok(())
        },
    )
}

/// Integrate the interacting particle system: at each step the empirical
/// sums `s_i = (1/N) Σ_j f_i(x_j)` are formed once (O(N·p)), then every
/// particle sees the drift `b(x) + Σ_i s_i w_i(x)`.
pub fn simulate_mckean_vlasov(
    spec: &DynamicsSpec,
    init: &ParticleEnsemble,
    opts: &SimOptions,
) -> Result<Trajectory, SdeError> {
    if init.len() < 2 {
        return Err(SdeError::Invalid(
            "the particle system needs at least 2 particles".into(),
        ));
    }
    let d = spec.dim();
    let p = spec.n_terms();
    let n = init.len();
    let inv_n = 1.0 / n as f64;
    run_ensemble(
        spec,
        init,
        opts,
        |positions| {
            if p == 0 {
                return Ok(Vec::new());
            }
            let err = ErrSlot::new();
            let mut sums = exec::chunked_sum(n, p, |j, acc| {
                let y = &positions[j * d..(j + 1) * d];
                for (slot, term) in acc.iter_mut().zip(spec.interaction()) {
                    match term.f.eval_scalar(y) {
                        Ok(v) => *slot += v,
                        Err(e) => err.report(j, e.into()),
                    }
                }
            });
            if let Some(e) = err.take() {
                return Err(e);
            }
            sums.iter_mut().for_each(|s| *s *= inv_n);
            Ok(sums)
        },
        |_t, x, sums, out| {
            spec.drift().eval_vector(x, out)?;
            let mut w = [0.0; MAX_DIM];
            for (term, &s) in spec.interaction().iter().zip(sums) {
                term.w.eval_vector(x, &mut w[..d])?;
                for (o, wv) in out.iter_mut().zip(&w[..d]) {
                    *o += s * wv;
                }
            }
            Ok(())
        },
    )
}

/// Per-trajectory first-variation matrices `J_t` solving
/// `dJ = ∇(b+α)(Y_t) J dt`, `J_0 = I`, recorded alongside the path.
#[derive(Debug, Clone)]
pub struct JacobianFlow {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major d×d matrices, one per recorded time.
    pub mats: Vec<Vec<f64>>,
}

/// Step a single path together with its Jacobian flow, invoking `on_record`
/// at every `record_every`-th step (including t = 0). Shared by the public
/// wrapper and the kernel estimator.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_jacobian_path<F>(
    spec: &DynamicsSpec,
    alpha: &dyn VectorField,
    y0: &[f64],
    dt: f64,
    steps: usize,
    record_every: usize,
    seed: u64,
    stream: u64,
    mut on_record: F,
) -> Result<(), SdeError>
where
    F: FnMut(usize, f64, &[f64], &[f64]),
{
    let d = spec.dim();
    debug_assert_eq!(y0.len(), d);
    let sqrt_dt = dt.sqrt();
    let space = spec.space();
    let noise = spec.noise.clone();
    let draw_noise = noise != NoiseKind::Zero;
    let mut rng = ParticleRng::new(seed, stream);

    let mut y = [0.0; MAX_DIM];
    y[..d].copy_from_slice(y0);
    let mut jac = vec![0.0; d * d];
    for i in 0..d {
        jac[i * d + i] = 1.0;
    }
    let mut record_idx = 0;
    on_record(record_idx, 0.0, &y[..d], &jac);

    let mut a_b = vec![0.0; d * d];
    let mut a_alpha = vec![0.0; d * d];
    let mut jac_next = vec![0.0; d * d];

    for step in 0..steps {
        let t = step as f64 * dt;
        // Drift Jacobian at the pre-step position.
        spec.drift().jac(&y[..d], &mut a_b)?;
        alpha.jacobian_into(&y[..d], &mut a_alpha)?;
        for (a, b) in a_b.iter_mut().zip(&a_alpha) {
            *a += b;
        }
        // J <- J + dt * A J
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += a_b[i * d + k] * jac[k * d + j];
                }
                jac_next[i * d + j] = jac[i * d + j] + dt * acc;
            }
        }
        std::mem::swap(&mut jac, &mut jac_next);

        let mut b = [0.0; MAX_DIM];
        spec.drift().eval_vector(&y[..d], &mut b[..d])?;
        let mut a = [0.0; MAX_DIM];
        alpha.eval_into(&y[..d], &mut a[..d])?;
        for (yv, (bv, av)) in y[..d].iter_mut().zip(b[..d].iter().zip(&a[..d])) {
            *yv += (bv + av) * dt;
        }
        if draw_noise {
            let mut xi = [0.0; MAX_DIM];
            rng.fill_standard_normals(&mut xi[..d]);
            apply_noise(&noise, sqrt_dt, &xi[..d], &mut y[..d]);
        }
        wrap_position(space, &mut y[..d]);

        if !check_finite(&y[..d]) {
            return Err(SdeError::BlowUp {
                t: t + dt,
                particle: stream as usize,
                limit: BLOWUP_LIMIT,
            });
        }
        if jac.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(SdeError::JacobianBlowUp {
                t: t + dt,
                particle: stream as usize,
            });
        }
        if record_every > 0 && (step + 1) % record_every == 0 {
            record_idx += 1;
            on_record(record_idx, t + dt, &y[..d], &jac);
        }
    }
    Ok(())
}

/// Integrate one trajectory of the linear process together with its
/// Jacobian flow, recording every `record_stride.max(1)` steps.
pub fn propagate_jacobian(
    spec: &DynamicsSpec,
    alpha: &dyn VectorField,
    y0: &[f64],
    opts: &SimOptions,
) -> Result<(Trajectory, JacobianFlow), SdeError> {
    let steps = opts.validate()?;
    let d = spec.dim();
    let stride = opts.record_stride.max(1);
    let mut times = Vec::new();
    let mut frames = Vec::new();
    let mut mats = Vec::new();
    run_jacobian_path(
        spec,
        alpha,
        y0,
        opts.dt,
        steps,
        stride,
        opts.seed,
        0,
        |_, t, y, jac| {
            times.push(t);
            let mut e = ParticleEnsemble::from_positions(d, y.to_vec(), spec.space());
            e.t = t;
            frames.push(e);
            mats.push(jac.to_vec());
        },
    )?;
    Ok((
        Trajectory {
            times: times.clone(),
            frames,
        },
        JacobianFlow {
            dim: d,
            times,
            mats,
        },
    ))
}
