//! Particle-system integration of the dynamics under study.
//!
//! Three processes are integrated with a shared fixed-step Euler–Maruyama
//! core: the frozen-interaction linear process, its non-homogeneous variant
//! with an extra time-dependent drift, and the interacting particle system
//! whose empirical measure approximates the mean-field law. A pathwise
//! Jacobian flow rides along trajectories to provide pathwise gradient
//! estimates of `y -> E_y f(Y_t)`.
//!
//! All noise comes from counter-based per-particle streams (see [`crate::rng`]),
//! so runs are reproducible under parallelism and two runs with the same seed
//! share Brownian increments path by path.

mod engine;
mod sampler;
mod sensitivity;

pub use engine::{
    propagate_jacobian, simulate_linear, simulate_mckean_vlasov, simulate_nonhomogeneous,
    JacobianFlow, SimOptions,
};
pub(crate) use engine::run_jacobian_path;
pub use sampler::{sample_invariant, SamplerOptions, StationarySample};
pub use sensitivity::{sensitivity_residual, SensitivityOptions, SensitivityReport};

use crate::expr::{Arity, ExprError, FieldHandle, MAX_DIM};
use nalgebra::DMatrix;
use thiserror::Error;

pub(crate) const BLOWUP_LIMIT: f64 = 1e8;
const INIT_STREAM_SALT: u64 = 0x9af1_d23b_11c0_77ee;
pub const TAU: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error(transparent)]
    Field(#[from] ExprError),
    #[error("trajectory blow-up at t = {t}: |x| > {limit} (particle {particle})")]
    BlowUp { t: f64, particle: usize, limit: f64 },
    #[error("Jacobian flow blow-up at t = {t} (particle {particle})")]
    JacobianBlowUp { t: f64, particle: usize },
    #[error("invalid dynamics: {0}")]
    Invalid(String),
}

/// State space of the dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Space {
    Euclidean,
    /// Flat torus `[0, 2π)^d` with isotropic noise `σ = sqrt(2/β) I`.
    Torus { beta: f64 },
}

impl Space {
    pub fn is_torus(&self) -> bool {
        matches!(self, Space::Torus { .. })
    }
}

/// One separable interaction term `f(y) · w(x)` with scalar `f` and vector `w`.
#[derive(Debug, Clone)]
pub struct InteractionTerm {
    pub f: FieldHandle,
    pub w: FieldHandle,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum NoiseKind {
    Zero,
    Iso(f64),
    Diag(Vec<f64>),
    Full(DMatrix<f64>),
}

/// Full problem description: drift, separable interaction, diffusion, space.
#[derive(Debug, Clone)]
pub struct DynamicsSpec {
    dim: usize,
    drift: FieldHandle,
    interaction: Vec<InteractionTerm>,
    sigma: DMatrix<f64>,
    space: Space,
    pub(crate) noise: NoiseKind,
}

impl DynamicsSpec {
    /// Euclidean dynamics. `sigma` must have positive determinant, or be
    /// identically zero (deterministic dynamics, used by the Jacobian
    /// stability criterion).
    pub fn new(
        drift: FieldHandle,
        interaction: Vec<InteractionTerm>,
        sigma: DMatrix<f64>,
    ) -> Result<DynamicsSpec, SdeError> {
        let dim = drift.dimension();
        Self::validate_fields(dim, &drift, &interaction)?;
        if sigma.nrows() != dim || sigma.ncols() != dim {
            return Err(SdeError::Invalid(format!(
                "sigma must be {dim}x{dim}, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let zero = sigma.iter().all(|&v| v == 0.0);
        if !zero && sigma.determinant() <= 0.0 {
            return Err(SdeError::Invalid(
                "sigma must have positive determinant (or be identically zero)".into(),
            ));
        }
        let noise = Self::classify_noise(&sigma);
        Ok(DynamicsSpec {
            dim,
            drift,
            interaction,
            sigma,
            space: Space::Euclidean,
            noise,
        })
    }

    /// Torus dynamics with inverse temperature `beta`; the diffusion is
    /// forced to `sqrt(2/beta) I`.
    pub fn torus(
        drift: FieldHandle,
        interaction: Vec<InteractionTerm>,
        beta: f64,
    ) -> Result<DynamicsSpec, SdeError> {
        if beta <= 0.0 {
            return Err(SdeError::Invalid("beta must be positive".into()));
        }
        let dim = drift.dimension();
        Self::validate_fields(dim, &drift, &interaction)?;
        let s = (2.0 / beta).sqrt();
        let sigma = DMatrix::identity(dim, dim) * s;
        Ok(DynamicsSpec {
            dim,
            drift,
            interaction,
            sigma,
            space: Space::Torus { beta },
            noise: NoiseKind::Iso(s),
        })
    }

    fn validate_fields(
        dim: usize,
        drift: &FieldHandle,
        interaction: &[InteractionTerm],
    ) -> Result<(), SdeError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(SdeError::Invalid(format!(
                "dimension must be in 1..={MAX_DIM}"
            )));
        }
        if drift.arity() != Arity::Vector {
            return Err(SdeError::Invalid("drift must be a vector field".into()));
        }
        for (i, term) in interaction.iter().enumerate() {
            if term.f.arity() != Arity::Scalar || term.f.dimension() != dim {
                return Err(SdeError::Invalid(format!(
                    "interaction term {i}: f must be a scalar field on R^{dim}"
                )));
            }
            if term.w.arity() != Arity::Vector || term.w.dimension() != dim {
                return Err(SdeError::Invalid(format!(
                    "interaction term {i}: w must be a vector field on R^{dim}"
                )));
            }
        }
        Ok(())
    }

    fn classify_noise(sigma: &DMatrix<f64>) -> NoiseKind {
        if sigma.iter().all(|&v| v == 0.0) {
            return NoiseKind::Zero;
        }
        let d = sigma.nrows();
        let off_diag_zero = (0..d).all(|i| (0..d).all(|j| i == j || sigma[(i, j)] == 0.0));
        if off_diag_zero {
            let first = sigma[(0, 0)];
            if (0..d).all(|i| sigma[(i, i)] == first) {
                return NoiseKind::Iso(first);
            }
            return NoiseKind::Diag((0..d).map(|i| sigma[(i, i)]).collect());
        }
        NoiseKind::Full(sigma.clone())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn drift(&self) -> &FieldHandle {
        &self.drift
    }
    pub fn interaction(&self) -> &[InteractionTerm] {
        &self.interaction
    }
    pub fn n_terms(&self) -> usize {
        self.interaction.len()
    }
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
    pub fn space(&self) -> Space {
        self.space
    }
    pub fn is_deterministic(&self) -> bool {
        self.noise == NoiseKind::Zero
    }

    /// Full interaction `F(x, y) = Σ f_i(y) w_i(x)`, written into `out`.
    pub fn interaction_at(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<(), SdeError> {
        out.fill(0.0);
        let mut w = [0.0; MAX_DIM];
        for term in &self.interaction {
            let fy = term.f.eval_scalar(y)?;
            term.w.eval_vector(x, &mut w[..self.dim])?;
            for (o, wv) in out.iter_mut().zip(&w[..self.dim]) {
                *o += fy * wv;
            }
        }
        Ok(())
    }
}

/// Things that can serve as a frozen interaction drift `α(x)`.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError>;
    /// Row-major d×d Jacobian.
    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError>;
}

impl VectorField for FieldHandle {
    fn dim(&self) -> usize {
        self.dimension()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        self.eval_vector(x, out)
    }
    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        self.jac(x, out)
    }
}

/// The zero field on R^d.
pub struct ZeroField(pub usize);

impl VectorField for ZeroField {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval_into(&self, _x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        out.fill(0.0);
        Ok(())
    }
    fn jacobian_into(&self, _x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        out.fill(0.0);
        Ok(())
    }
}

/// A constant drift.
pub struct ConstField(pub Vec<f64>);

impl VectorField for ConstField {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn eval_into(&self, _x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        out.copy_from_slice(&self.0);
        Ok(())
    }
    fn jacobian_into(&self, _x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        out.fill(0.0);
        Ok(())
    }
}

/// Time-dependent extra drift `k_t(x)` for the non-homogeneous process.
pub trait TimeVectorField: Sync {
    fn dim(&self) -> usize;
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ExprError>;
}

/// Adapter turning a closure `(t, x, out)` into a [`TimeVectorField`].
pub struct FnTimeField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> TimeVectorField for FnTimeField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        (self.f)(t, x, out);
        Ok(())
    }
}

/// N equally weighted positions representing an empirical law.
///
/// Each particle carries a noise-stream id assigned at creation, so
/// relabeling particles relabels their Brownian paths with them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    positions: Vec<f64>,
    streams: Vec<u64>,
    pub t: f64,
    pub space: Space,
}

impl ParticleEnsemble {
    pub fn from_positions(dim: usize, positions: Vec<f64>, space: Space) -> ParticleEnsemble {
        assert!(dim > 0 && positions.len() % dim == 0);
        let n = positions.len() / dim;
        ParticleEnsemble {
            dim,
            positions,
            streams: (0..n as u64).collect(),
            t: 0.0,
            space,
        }
    }

    /// N iid draws from `N(mean, std² I)`.
    pub fn gaussian(n: usize, dim: usize, mean: &[f64], std: f64, seed: u64) -> ParticleEnsemble {
        let mut positions = vec![0.0; n * dim];
        for (i, chunk) in positions.chunks_mut(dim).enumerate() {
            let mut rng = crate::rng::ParticleRng::new(seed ^ INIT_STREAM_SALT, i as u64);
            rng.fill_standard_normals(chunk);
            for (c, m) in chunk.iter_mut().zip(mean) {
                *c = m + std * *c;
            }
        }
        ParticleEnsemble::from_positions(dim, positions, Space::Euclidean)
    }

    /// N iid uniform draws on the torus.
    pub fn uniform_torus(n: usize, dim: usize, beta: f64, seed: u64) -> ParticleEnsemble {
        let mut positions = vec![0.0; n * dim];
        for (i, chunk) in positions.chunks_mut(dim).enumerate() {
            let mut rng = crate::rng::ParticleRng::new(seed ^ INIT_STREAM_SALT, i as u64);
            for c in chunk.iter_mut() {
                *c = TAU * rng.uniform();
            }
        }
        ParticleEnsemble::from_positions(dim, positions, Space::Torus { beta })
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }
    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }
    pub fn streams(&self) -> &[u64] {
        &self.streams
    }
    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn positions_mut(&mut self) -> &mut Vec<f64> {
        &mut self.positions
    }

    /// Relabel particles: positions and noise streams move together.
    pub fn permuted(&self, perm: &[usize]) -> ParticleEnsemble {
        assert_eq!(perm.len(), self.len());
        let mut positions = Vec::with_capacity(self.positions.len());
        let mut streams = Vec::with_capacity(self.streams.len());
        for &p in perm {
            positions.extend_from_slice(self.position(p));
            streams.push(self.streams[p]);
        }
        ParticleEnsemble {
            dim: self.dim,
            positions,
            streams,
            t: self.t,
            space: self.space,
        }
    }

    /// Offset all stream ids (used to decorrelate auxiliary runs).
    pub fn with_stream_offset(mut self, offset: u64) -> ParticleEnsemble {
        for s in &mut self.streams {
            *s = s.wrapping_add(offset);
        }
        self
    }

    /// Values of coordinate `axis` across particles.
    pub fn coordinate(&self, axis: usize) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.positions[i * self.dim + axis])
            .collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        let mut m = vec![0.0; self.dim];
        for chunk in self.positions.chunks(self.dim) {
            for (mi, v) in m.iter_mut().zip(chunk) {
                *mi += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

#[inline]
fn wrap_torus(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r == TAU {
        0.0
    } else {
        r
    }
}

pub(crate) fn wrap_position(space: Space, x: &mut [f64]) {
    if space.is_torus() {
        for v in x {
            *v = wrap_torus(*v);
        }
    }
}

/// A time-indexed sequence of ensembles.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub frames: Vec<ParticleEnsemble>,
}

impl Trajectory {
    pub fn last(&self) -> &ParticleEnsemble {
        self.frames
            .last()
            .expect("trajectory has at least one frame")
    }
}
