//! Driving a phase state along a temperature schedule, logging per-iteration
//! records and capturing the snapshots an ensemble will be built from.

use serde::{Deserialize, Serialize};

use crate::dynamics::{extended_energy, kinetic_temperature, NhcIntegrator, PhaseState, TemperatureSchedule};
use crate::ensemble::{SamplingPlan, Snapshot};
use crate::error::{Error, Result};
use crate::potential::Potential;

/// State of a trajectory after `iteration` integration steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iteration: u64,
    #[serde(rename = "T_target")]
    pub t_target: f64,
    #[serde(rename = "T_kinetic")]
    pub t_kinetic: f64,
    pub loss_train: f64,
    /// NaN when no test objective was supplied.
    pub loss_test: f64,
    pub extended_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub schedule: TemperatureSchedule,
    pub iterations: u64,
    /// Emit a record every this many iterations; 0 disables logging.
    pub log_every: u64,
    pub plan: SamplingPlan,
    /// Selects the subsampling stream of the plan.
    #[serde(default)]
    pub replicate: u32,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        self.plan.validate(self.iterations)
    }
}

/// Integrates `iterations` steps from `state`.
///
/// Record `r` describes the state after `r + 1` steps, and step `r` runs at
/// `schedule.at(r)`. Records at the plan's indices are returned as snapshots;
/// logged records are handed to `on_record` in order.
pub fn run<P, Q, F>(
    state: &mut PhaseState,
    integrator: &mut NhcIntegrator,
    train: &P,
    test: Option<&Q>,
    spec: &RunSpec,
    mut on_record: F,
) -> Result<Vec<Snapshot>>
where
    P: Potential + ?Sized,
    Q: Potential + ?Sized,
    F: FnMut(&TrajectoryRecord) -> Result<()>,
{
    spec.validate()?;
    let picked = spec.plan.select_for(spec.iterations, spec.replicate)?;
    let mut next_pick = picked.iter().peekable();
    let mut snapshots = Vec::with_capacity(picked.len());
    for r in 0..spec.iterations {
        let temperature = spec.schedule.at(r);
        integrator.step(state, train, temperature)?;
        if next_pick.peek() == Some(&&r) {
            next_pick.next();
            snapshots.push(Snapshot {
                iteration: state.step,
                temperature,
                params: state.x.clone(),
            });
        }
        if spec.log_every > 0 && (r + 1) % spec.log_every == 0 {
            let record = record_at(state, train, test, temperature)?;
            on_record(&record)?;
        }
    }
    Ok(snapshots)
}

/// Losses and energies of `state` as it stands.
pub fn record_at<P, Q>(state: &PhaseState, train: &P, test: Option<&Q>, temperature: f64) -> Result<TrajectoryRecord>
where
    P: Potential + ?Sized,
    Q: Potential + ?Sized,
{
    let diverged = |e: Error| Error::Diverged {
        step: state.step,
        detail: e.to_string(),
    };
    let loss_train = train.value(&state.x).map_err(diverged)?;
    let loss_test = match test {
        Some(t) => t.value(&state.x).map_err(diverged)?,
        None => f64::NAN,
    };
    Ok(TrajectoryRecord {
        iteration: state.step,
        t_target: temperature,
        t_kinetic: kinetic_temperature(state),
        loss_train,
        loss_test,
        extended_energy: extended_energy(state, loss_train, temperature),
    })
}
