//! Full-batch Adam baseline and the hand-off from an optimizer endpoint to
//! thermostatted dynamics ("retrofitting").

use serde::{Deserialize, Serialize};

use crate::dynamics::{IntegratorConfig, PhaseState, ThermostatChain};
use crate::error::{Error, Result};
use crate::net::ParamVector;
use crate::potential::Potential;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            learning_rate,
        }
    }
}

/// Bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut [f64], gradient: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != gradient.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            format!("{} parameters", state.m.len()),
            format!("{} parameters, {} gradient entries", params.len(), gradient.len()),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let lr = state.learning_rate;
    for (((x, &g), m), v) in params
        .iter_mut()
        .zip(gradient)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *x -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

/// Outcome of an Adam run: loss curves and the last two iterates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub learning_rate: f64,
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    #[serde(skip)]
    pub final_params: ParamVector,
    #[serde(skip)]
    pub previous_params: ParamVector,
}

impl TrainReport {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

/// Runs `epochs` full-batch Adam steps from `params0`.
///
/// Entry `e` of the loss curves is measured after step `e + 1`. `test` may be
/// absent, in which case the test curve is empty.
pub fn train_adam<P, Q>(
    train: &P,
    test: Option<&Q>,
    params0: &ParamVector,
    epochs: usize,
    learning_rate: f64,
) -> Result<TrainReport>
where
    P: Potential + ?Sized,
    Q: Potential + ?Sized,
{
    if epochs < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 epochs to record two snapshots, got {epochs}"
        )));
    }
    if !(learning_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be > 0, got {learning_rate}"
        )));
    }
    let n = params0.len();
    let mut params = params0.clone();
    let mut previous = params0.clone();
    let mut state = AdamState::new(n, learning_rate);
    let mut grad = vec![0.0; n];
    let mut train_loss = Vec::with_capacity(epochs);
    let mut test_loss = Vec::with_capacity(if test.is_some() { epochs } else { 0 });
    let diverged = |epoch: usize, e: Error| Error::Diverged {
        step: epoch as u64,
        detail: e.to_string(),
    };

    for epoch in 0..epochs {
        train
            .value_and_gradient(&params, &mut grad)
            .map_err(|e| diverged(epoch, e))?;
        previous.copy_from_slice(&params);
        adam_step(&mut params, &grad, &mut state)?;
        train_loss.push(train.value(&params).map_err(|e| diverged(epoch + 1, e))?);
        if let Some(test) = test {
            test_loss.push(test.value(&params).map_err(|e| diverged(epoch + 1, e))?);
        }
    }
    Ok(TrainReport {
        learning_rate,
        train_loss,
        test_loss,
        final_params: params,
        previous_params: previous,
    })
}

/// First-order velocity from the last two iterates: `(x_last - x_prev) / lr`.
pub fn velocity_estimate(x_last: &[f64], x_prev: &[f64], learning_rate: f64) -> Result<Vec<f64>> {
    if !(learning_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be > 0, got {learning_rate}"
        )));
    }
    if x_last.len() != x_prev.len() {
        return Err(Error::shape(x_last.len(), x_prev.len()));
    }
    Ok(x_last
        .iter()
        .zip(x_prev)
        .map(|(a, b)| (a - b) / learning_rate)
        .collect())
}

/// Phase state placed exactly where the optimizer stopped, moving with the
/// optimizer's last velocity, with the thermostat chain at rest.
pub fn retrofit_init(report: &TrainReport, config: &IntegratorConfig) -> Result<PhaseState> {
    if report.final_params.is_empty() || report.previous_params.len() != report.final_params.len() {
        return Err(Error::InvalidArgument(
            "train report is missing its final parameter snapshots".into(),
        ));
    }
    config.validate()?;
    let v = velocity_estimate(
        &report.final_params,
        &report.previous_params,
        report.learning_rate,
    )?;
    let n = v.len();
    let chain = ThermostatChain::new(config.chain_length, config.chain_mass)?;
    PhaseState::new(
        report.final_params.clone(),
        v,
        vec![config.particle_mass; n],
        chain,
    )
}
