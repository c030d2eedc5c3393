//! Sampling from the invariant law of the linear process.
//!
//! The linearized process is an ergodic Markov diffusion but no direct
//! sampler exists, so samples come from simulation: an ensemble of
//! independent chains is burned in for `10/κ̂` time units (`κ̂` a user-set
//! dissipativity estimate, 1 by default), then positions are collected every
//! `thin` time units until the requested sample count is reached.

use super::{
    simulate_linear, DynamicsSpec, ParticleEnsemble, SdeError, SimOptions, VectorField,
};

#[derive(Debug, Clone, Copy)]
pub struct SamplerOptions {
    pub dt: f64,
    /// Dissipativity rate estimate κ̂; burn-in lasts 10/κ̂ time units.
    pub kappa_hat: f64,
    /// Time between collected frames once stationary.
    pub thin: f64,
    /// Independent chains run in parallel.
    pub chains: usize,
    pub seed: u64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            dt: 1e-2,
            kappa_hat: 1.0,
            thin: 1.0,
            chains: 4096,
            seed: 0,
        }
    }
}

impl SamplerOptions {
    pub fn burn_in(&self) -> f64 {
        10.0 / self.kappa_hat
    }
}

/// `count` approximate draws from the invariant law, plus the final chain
/// state for warm-started re-sampling.
#[derive(Debug, Clone)]
pub struct StationarySample {
    pub dim: usize,
    /// Flat `count × dim` sample matrix.
    pub points: Vec<f64>,
    pub chains: ParticleEnsemble,
}

impl StationarySample {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim.max(1)
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

/// Draw `count` samples of the invariant law of `dY = (b+α)(Y)dt + σ dB`.
///
/// `warm_start` skips most of the burn-in by continuing from a previous
/// chain state (the drift must not have moved far for this to be sound);
/// `reburn` time units are still simulated before collecting.
pub fn sample_invariant(
    spec: &DynamicsSpec,
    alpha: &dyn VectorField,
    count: usize,
    opts: &SamplerOptions,
    warm_start: Option<(&ParticleEnsemble, f64)>,
) -> Result<StationarySample, SdeError> {
    let d = spec.dim();
    if count == 0 {
        return Err(SdeError::Invalid("sample count must be positive".into()));
    }
    let chains = opts.chains.min(count).max(1);

    let (mut state, burn) = match warm_start {
        Some((ens, reburn)) if ens.len() == chains && ens.dim() == d => {
            (ens.clone(), reburn.max(opts.dt))
        }
        _ => {
            let init = match spec.space() {
                super::Space::Torus { beta } => {
                    ParticleEnsemble::uniform_torus(chains, d, beta, opts.seed)
                }
                super::Space::Euclidean => {
                    ParticleEnsemble::gaussian(chains, d, &vec![0.0; d], 1.0, opts.seed)
                }
            };
            (init, opts.burn_in())
        }
    };
    state.t = 0.0;

    // Burn-in, then thinning hops that continue the same noise streams.
    let burn_steps = (burn / opts.dt).round().max(1.0) as u64;
    let burn_opts = SimOptions::new(opts.dt, burn_steps as f64 * opts.dt, opts.seed);
    state = simulate_linear(spec, alpha, &state, &burn_opts)?
        .frames
        .pop()
        .expect("burn-in produced no frame");
    let mut consumed = burn_steps;

    let mut points = Vec::with_capacity(count * d);
    points.extend_from_slice(state.positions());
    let thin_steps = (opts.thin / opts.dt).round().max(1.0) as u64;
    while points.len() < count * d {
        let hop = SimOptions::new(opts.dt, thin_steps as f64 * opts.dt, opts.seed)
            .with_noise_offset(consumed);
        state = simulate_linear(spec, alpha, &state, &hop)?
            .frames
            .pop()
            .expect("thinning hop produced no frame");
        consumed += thin_steps;
        points.extend_from_slice(state.positions());
    }
    points.truncate(count * d);

    Ok(StationarySample {
        dim: d,
        points,
        chains: state,
    })
}
