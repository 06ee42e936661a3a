//! Nosé-Hoover chain dynamics over network parameters.
//!
//! Each parameter is a unit of a one-dimensional particle system moving in the
//! loss landscape. A chain of `N_c` virtual particles exchanges kinetic energy
//! with it so that, at fixed target temperature `T`, trajectories sample
//! `exp(-L(x) / T)`.
//!
//! Phase space is split into position-like variables
//! `{x_i, s_even, v_s_odd}` and velocity-like variables `{v_i, s_odd, v_s_even}`
//! (chain indices counted from 1). One step applies the symmetric factorization
//! `exp(iL_X dt/2) exp(iL_V dt) exp(iL_X dt/2)`: a half update of the
//! position-like set, a full update of the velocity-like set using a single
//! gradient evaluated at the half-step positions, and a closing half update of
//! the position-like set.
//!
//! The chain is stored 0-based: index `j` holds chain particle `k = j + 1`, so
//! odd `k` live at even `j`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ParamVector;
use crate::potential::Potential;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct ThermostatChain {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub masses: Vec<f64>,
}

impl ThermostatChain {
    /// Chain at rest at the origin with all masses equal to `mass`.
    pub fn new(len: usize, mass: f64) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument("chain length must be at least 1".into()));
        }
        if !(mass > 0.0) {
            return Err(Error::InvalidArgument(format!("chain mass must be positive, got {mass}")));
        }
        Ok(ThermostatChain {
            positions: vec![0.0; len],
            velocities: vec![0.0; len],
            masses: vec![mass; len],
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Velocity of the next particle up the chain; zero past the end.
    #[inline]
    fn next_velocity(&self, j: usize) -> f64 {
        self.velocities.get(j + 1).copied().unwrap_or(0.0)
    }

    fn kinetic_energy(&self) -> f64 {
        self.velocities
            .iter()
            .zip(&self.masses)
            .map(|(v, q)| 0.5 * q * v * v)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub x: ParamVector,
    pub v: Vec<f64>,
    pub masses: Vec<f64>,
    pub chain: ThermostatChain,
    pub step: u64,
}

impl PhaseState {
    pub fn new(x: ParamVector, v: Vec<f64>, masses: Vec<f64>, chain: ThermostatChain) -> Result<Self> {
        if v.len() != x.len() || masses.len() != x.len() {
            return Err(Error::shape(
                format!("{} velocities and masses", x.len()),
                format!("{} velocities, {} masses", v.len(), masses.len()),
            ));
        }
        if let Some(m) = masses.iter().find(|m| !(**m > 0.0)) {
            return Err(Error::InvalidArgument(format!("particle mass must be positive, got {m}")));
        }
        Ok(PhaseState {
            x,
            v,
            masses,
            chain,
            step: 0,
        })
    }

    /// Particles at `x` with zero velocity and a resting chain.
    pub fn at_rest(x: ParamVector, config: &IntegratorConfig) -> Result<Self> {
        let n = x.len();
        let chain = ThermostatChain::new(config.chain_length, config.chain_mass)?;
        PhaseState::new(x, vec![0.0; n], vec![config.particle_mass; n], chain)
    }

    /// Velocities drawn from the Maxwell-Boltzmann distribution at
    /// `temperature`, i.e. `N(0, sqrt(T / m))` per coordinate; chain at rest.
    pub fn maxwell_boltzmann(
        x: ParamVector,
        config: &IntegratorConfig,
        temperature: f64,
        seed: u64,
        replicate: u32,
    ) -> Result<Self> {
        let mut state = PhaseState::at_rest(x, config)?;
        let mut rng = rng::stream(seed, Purpose::Velocities, replicate);
        sample_velocities(&mut state, temperature, &mut rng)?;
        Ok(state)
    }

    pub fn dof(&self) -> usize {
        self.x.len()
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.v
            .iter()
            .zip(&self.masses)
            .map(|(v, m)| 0.5 * m * v * v)
            .sum()
    }

    fn mv2(&self) -> f64 {
        2.0 * self.kinetic_energy()
    }

    fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
            && self.v.iter().all(|v| v.is_finite())
            && self.chain.positions.iter().all(|v| v.is_finite())
            && self.chain.velocities.iter().all(|v| v.is_finite())
    }
}

fn sample_velocities<R: Rng>(state: &mut PhaseState, temperature: f64, rng: &mut R) -> Result<()> {
    if !(temperature >= 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be >= 0, got {temperature}")));
    }
    for (v, m) in state.v.iter_mut().zip(&state.masses) {
        let sd = (temperature / m).sqrt();
        *v = Normal::new(0.0, sd).expect("finite sd").sample(rng);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemperatureSchedule {
    Constant {
        temperature: f64,
    },
    /// `min(target, initial + increment * floor(iteration / hold))`.
    Ramp {
        initial: f64,
        target: f64,
        increment: f64,
        hold: u64,
    },
}

impl TemperatureSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TemperatureSchedule::Constant { temperature } if temperature >= 0.0 => Ok(()),
            TemperatureSchedule::Constant { temperature } => Err(Error::InvalidArgument(format!(
                "temperature must be >= 0, got {temperature}"
            ))),
            TemperatureSchedule::Ramp {
                initial,
                target,
                increment,
                hold,
            } => {
                if !(initial >= 0.0 && target >= initial) {
                    return Err(Error::InvalidArgument(format!(
                        "ramp needs 0 <= initial <= target, got {initial} -> {target}"
                    )));
                }
                if !(increment > 0.0) || hold == 0 {
                    return Err(Error::InvalidArgument(
                        "ramp increment must be > 0 and hold >= 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn target(&self) -> f64 {
        match *self {
            TemperatureSchedule::Constant { temperature } => temperature,
            TemperatureSchedule::Ramp { target, .. } => target,
        }
    }

    pub fn at(&self, iteration: u64) -> f64 {
        match *self {
            TemperatureSchedule::Constant { temperature } => temperature,
            TemperatureSchedule::Ramp {
                initial,
                target,
                increment,
                hold,
            } => {
                let steps = (iteration / hold) as f64;
                (initial + increment * steps).min(target)
            }
        }
    }
}

pub fn schedule_at(schedule: &TemperatureSchedule, iteration: u64) -> f64 {
    schedule.at(iteration)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Time step; plays the role of the learning rate.
    pub dt: f64,
    pub chain_length: usize,
    pub chain_mass: f64,
    pub particle_mass: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: 0.002,
            chain_length: 2,
            chain_mass: 1.0,
            particle_mass: 1.0,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.chain_length == 0 {
            return Err(Error::InvalidArgument("chain_length must be >= 1".into()));
        }
        if !(self.chain_mass > 0.0 && self.particle_mass > 0.0) {
            return Err(Error::InvalidArgument("masses must be positive".into()));
        }
        Ok(())
    }
}

/// `a_i = -g_i / m_i`.
pub fn accel_real(gradient: &[f64], masses: &[f64]) -> Vec<f64> {
    gradient.iter().zip(masses).map(|(g, m)| -g / m).collect()
}

/// Force on the first chain particle: `(sum m v^2 - N T) / Q_1`.
pub fn accel_chain_first(v: &[f64], masses: &[f64], temperature: f64, q1: f64) -> f64 {
    let mv2: f64 = v.iter().zip(masses).map(|(v, m)| m * v * v).sum();
    (mv2 - v.len() as f64 * temperature) / q1
}

/// Force on chain particle `k` (1-based, `2 <= k <= N_c`):
/// `(Q_{k-1} v_{k-1}^2 - T) / Q_k`.
pub fn accel_chain_k(chain: &ThermostatChain, k: usize, temperature: f64) -> Result<f64> {
    if k < 2 || k > chain.len() {
        return Err(Error::OutOfRange {
            index: k,
            len: chain.len(),
        });
    }
    Ok(chain_force(chain, k - 1, temperature, f64::NAN, 0))
}

/// Chain force at 0-based index `j`. `j = 0` needs the system's `sum m v^2`
/// and degree-of-freedom count.
#[inline]
fn chain_force(chain: &ThermostatChain, j: usize, temperature: f64, mv2: f64, dof: usize) -> f64 {
    if j == 0 {
        (mv2 - dof as f64 * temperature) / chain.masses[0]
    } else {
        let prev = chain.velocities[j - 1];
        (chain.masses[j - 1] * prev * prev - temperature) / chain.masses[j]
    }
}

/// Kick `v_s[j]` by `tau` with friction from the next chain particle:
/// `v <- v exp(-tau v_next) + tau a exp(-tau v_next / 2)`.
#[inline]
fn chain_kick(chain: &mut ThermostatChain, j: usize, tau: f64, force: f64) {
    let damp = (-tau * chain.next_velocity(j) * 0.5).exp();
    chain.velocities[j] = chain.velocities[j] * damp * damp + tau * force * damp;
}

/// `(1/N) sum m_i v_i^2`.
pub fn kinetic_temperature(state: &PhaseState) -> f64 {
    if state.dof() == 0 {
        return 0.0;
    }
    state.mv2() / state.dof() as f64
}

/// Conserved quantity of the coupled system at constant `temperature`:
/// `sum p^2/2m + L + sum p_s^2/2Q + N T s_1 + T sum_{k>=2} s_k`.
pub fn extended_energy(state: &PhaseState, loss_value: f64, temperature: f64) -> f64 {
    let s = &state.chain.positions;
    let coupling = state.dof() as f64 * temperature * s[0]
        + temperature * s[1..].iter().sum::<f64>();
    state.kinetic_energy() + loss_value + state.chain.kinetic_energy() + coupling
}

/// Advances phase states one time step at a time.
///
/// Holds the gradient buffer so stepping does not allocate.
#[derive(Debug, Clone)]
pub struct NhcIntegrator {
    config: IntegratorConfig,
    grad: Vec<f64>,
    evaluations: u64,
}

impl NhcIntegrator {
    pub fn new(config: IntegratorConfig) -> Result<Self> {
        config.validate()?;
        Ok(NhcIntegrator {
            config,
            grad: Vec::new(),
            evaluations: 0,
        })
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.config
    }

    /// Number of gradient evaluations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// One symmetric Trotter step at thermostat temperature `temperature`.
    ///
    /// The potential is evaluated exactly once, at the half-step positions.
    /// Returns the loss value at those positions.
    pub fn step<P: Potential + ?Sized>(
        &mut self,
        state: &mut PhaseState,
        potential: &P,
        temperature: f64,
    ) -> Result<f64> {
        let n = state.dof();
        if potential.dim() != n {
            return Err(Error::shape(
                format!("potential of dimension {n}"),
                format!("dimension {}", potential.dim()),
            ));
        }
        if state.chain.len() != self.config.chain_length {
            return Err(Error::shape(
                format!("chain of length {}", self.config.chain_length),
                format!("length {}", state.chain.len()),
            ));
        }
        self.grad.resize(n, 0.0);
        let dt = self.config.dt;
        let half = 0.5 * dt;
        let nc = state.chain.len();

        // Position-like half update.
        for (x, v) in state.x.iter_mut().zip(&state.v) {
            *x += half * v;
        }
        for j in (1..nc).step_by(2) {
            state.chain.positions[j] += half * state.chain.velocities[j];
        }
        let mv2 = state.mv2();
        for j in (0..nc).step_by(2) {
            let f = chain_force(&state.chain, j, temperature, mv2, n);
            chain_kick(&mut state.chain, j, half, f);
        }

        // Velocity-like full update.
        let loss = potential
            .value_and_gradient(&state.x, &mut self.grad)
            .map_err(|e| Error::Diverged {
                step: state.step,
                detail: e.to_string(),
            })?;
        self.evaluations += 1;
        let vs1 = state.chain.velocities[0];
        let damp = (-half * vs1).exp();
        for ((v, g), m) in state.v.iter_mut().zip(&self.grad).zip(&state.masses) {
            *v = *v * damp * damp - dt * (g / m) * damp;
        }
        for j in (0..nc).step_by(2) {
            state.chain.positions[j] += dt * state.chain.velocities[j];
        }
        for j in (1..nc).step_by(2) {
            let f = chain_force(&state.chain, j, temperature, 0.0, n);
            chain_kick(&mut state.chain, j, dt, f);
        }

        // Position-like closing half update.
        for (x, v) in state.x.iter_mut().zip(&state.v) {
            *x += half * v;
        }
        for j in (1..nc).step_by(2) {
            state.chain.positions[j] += half * state.chain.velocities[j];
        }
        let mv2 = state.mv2();
        for j in (0..nc).step_by(2) {
            let f = chain_force(&state.chain, j, temperature, mv2, n);
            chain_kick(&mut state.chain, j, half, f);
        }

        state.step += 1;
        if !state.is_finite() {
            return Err(Error::Diverged {
                step: state.step,
                detail: "phase state contains non-finite values".into(),
            });
        }
        Ok(loss)
    }
}

/// Convenience wrapper for a single step with a throwaway integrator.
pub fn nhc_step<P: Potential + ?Sized>(
    state: &mut PhaseState,
    potential: &P,
    config: &IntegratorConfig,
    temperature: f64,
) -> Result<f64> {
    NhcIntegrator::new(*config)?.step(state, potential, temperature)
}
