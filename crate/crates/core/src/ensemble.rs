//! Ensembles of networks sampled along a finite-temperature trajectory and
//! the aggregate predictions built from them.
//!
//! Snapshots keep parameters only; member predictions are recomputed on
//! demand. Members are evaluated in parallel but always reduced in snapshot
//! order, so aggregates do not depend on thread scheduling.

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ScalerParams;
use crate::error::{Error, Result};
use crate::net::{self, ParamVector, Topology};
use crate::rng::{self, Purpose};

/// Which trajectory records become ensemble members.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub burn_in: u64,
    #[serde(default = "one")]
    pub stride: u64,
    /// Uniform subsample (without replacement) of the strided records.
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> u64 {
    1
}

impl SamplingPlan {
    pub fn all() -> Self {
        SamplingPlan {
            burn_in: 0,
            stride: 1,
            fraction: None,
            seed: 0,
        }
    }

    pub fn validate(&self, total: u64) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        if self.burn_in >= total {
            return Err(Error::Empty(format!(
                "burn-in {} leaves nothing of {total} records",
                self.burn_in
            )));
        }
        if let Some(f) = self.fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "fraction must be in (0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }

    /// Sorted record indices (0-based) selected out of `total` records.
    pub fn select(&self, total: u64) -> Result<Vec<u64>> {
        self.select_for(total, 0)
    }

    /// As [`select`](Self::select), with the random subsample drawn from
    /// replicate `replicate`'s stream.
    pub fn select_for(&self, total: u64, replicate: u32) -> Result<Vec<u64>> {
        self.validate(total)?;
        let strided: Vec<u64> = (self.burn_in..total).step_by(self.stride as usize).collect();
        let Some(fraction) = self.fraction else {
            return Ok(strided);
        };
        let keep = ((fraction * strided.len() as f64).round() as usize).clamp(1, strided.len());
        let mut rng = rng::stream(self.seed, Purpose::Subsample, replicate);
        let mut picked: Vec<usize> = index::sample(&mut rng, strided.len(), keep).into_vec();
        picked.sort_unstable();
        Ok(picked.into_iter().map(|i| strided[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Number of integration steps taken when the snapshot was captured.
    pub iteration: u64,
    pub temperature: f64,
    pub params: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleBundle {
    pub topology: Topology,
    pub snapshots: Vec<Snapshot>,
    pub feature_scaler: Option<ScalerParams>,
    pub target_scaler: Option<ScalerParams>,
}

/// Picks the records of `trajectory` selected by `plan`.
pub fn collect(trajectory: &[Snapshot], plan: &SamplingPlan) -> Result<Vec<Snapshot>> {
    let picked = plan.select(trajectory.len() as u64)?;
    Ok(picked
        .into_iter()
        .map(|i| trajectory[i as usize].clone())
        .collect())
}

/// Majority vote of the ensemble and the per-class fractions behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Votes {
    /// `inputs x classes` member counts.
    pub counts: Array2<u32>,
    pub members: usize,
}

impl Votes {
    pub fn proportions(&self) -> Array2<f64> {
        let m = self.members as f64;
        self.counts.mapv(|c| f64::from(c) / m)
    }

    /// Most-voted class per input; ties go to the lowest class index.
    pub fn winners(&self) -> Vec<usize> {
        self.counts
            .outer_iter()
            .map(|row| argmax_lowest(row.iter().copied()))
            .collect()
    }
}

fn argmax_lowest<T: PartialOrd + Copy>(values: impl Iterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}

/// Class chosen by a single network output row. One output means a binary
/// logit thresholded at zero; otherwise the arg-max with ties to the lowest index.
pub fn decide(row: &[f64]) -> usize {
    if row.len() == 1 {
        usize::from(row[0] > 0.0)
    } else {
        argmax_lowest(row.iter().copied())
    }
}

/// 2-D grid of vote proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row `iy * xs.len() + ix` holds the class fractions at `(xs[ix], ys[iy])`.
    pub proportions: Array2<f64>,
}

/// Member predictions at one input and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistribution {
    /// One row per member.
    pub samples: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

/// Node coordinates of a `resolution x resolution` grid and the nodes
/// themselves, row `iy * resolution + ix` holding `(xs[ix], ys[iy])`.
pub fn grid_points(bounds: [(f64, f64); 2], resolution: usize) -> (Vec<f64>, Vec<f64>, Array2<f64>) {
    let xs = linspace(bounds[0].0, bounds[0].1, resolution);
    let ys = linspace(bounds[1].0, bounds[1].1, resolution);
    let mut points = Array2::zeros((resolution * resolution, 2));
    for (iy, &y) in ys.iter().enumerate() {
        for (ix, &x) in xs.iter().enumerate() {
            points[[iy * resolution + ix, 0]] = x;
            points[[iy * resolution + ix, 1]] = y;
        }
    }
    (xs, ys, points)
}

/// `n` evenly spaced values from `lo` to `hi`; the midpoint when `n == 1`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

impl EnsembleBundle {
    pub fn new(
        topology: Topology,
        snapshots: Vec<Snapshot>,
        feature_scaler: Option<ScalerParams>,
        target_scaler: Option<ScalerParams>,
    ) -> Result<Self> {
        let n = topology.param_count();
        if let Some(bad) = snapshots.iter().find(|s| s.params.len() != n) {
            return Err(Error::shape(
                format!("{n} parameters per snapshot"),
                format!("{} at iteration {}", bad.params.len(), bad.iteration),
            ));
        }
        if let Some(bad) = snapshots.iter().find(|s| !(s.temperature >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "negative temperature {} at iteration {}",
                bad.temperature, bad.iteration
            )));
        }
        Ok(EnsembleBundle {
            topology,
            snapshots,
            feature_scaler,
            target_scaler,
        })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Concatenates bundles that share topology and scalers, in order.
    pub fn pool(bundles: Vec<EnsembleBundle>) -> Result<EnsembleBundle> {
        let mut iter = bundles.into_iter();
        let mut first = iter
            .next()
            .ok_or_else(|| Error::Empty("no bundles to pool".into()))?;
        for b in iter {
            if b.topology != first.topology
                || b.feature_scaler != first.feature_scaler
                || b.target_scaler != first.target_scaler
            {
                return Err(Error::InvalidArgument(
                    "pooled bundles must share topology and scalers".into(),
                ));
            }
            first.snapshots.extend(b.snapshots);
        }
        Ok(first)
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.snapshots.is_empty() {
            return Err(Error::Empty("ensemble has no members".into()));
        }
        Ok(())
    }

    fn scale_inputs(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        match &self.feature_scaler {
            Some(s) => s.apply(inputs),
            None => Ok(inputs.to_owned()),
        }
    }

    /// Raw network outputs of every member on already-scaled inputs.
    fn member_outputs(&self, scaled: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.snapshots
            .par_iter()
            .map(|s| net::forward(&self.topology, &s.params, scaled))
            .collect()
    }

    /// Each member's prediction in original target units.
    pub fn member_predictions(&self, inputs: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_nonempty()?;
        let scaled = self.scale_inputs(inputs)?;
        let outputs = self.member_outputs(scaled.view())?;
        match &self.target_scaler {
            Some(s) => outputs.into_iter().map(|o| s.invert(o.view())).collect(),
            None => Ok(outputs),
        }
    }

    /// Pointwise mean of member predictions, in original target units.
    pub fn regression_mean(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let preds = self.member_predictions(inputs)?;
        Ok(mean_in_order(&preds))
    }

    /// All member predictions at a single input plus their mean.
    pub fn regression_distribution(&self, input: &[f64]) -> Result<PredictionDistribution> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|_| Error::shape(self.topology.input_dim(), input.len()))?;
        let preds = self.member_predictions(view)?;
        let mean = mean_in_order(&preds).row(0).to_vec();
        Ok(PredictionDistribution {
            samples: preds.iter().map(|p| p.row(0).to_vec()).collect(),
            mean,
        })
    }

    pub fn votes(&self, inputs: ArrayView2<f64>) -> Result<Votes> {
        self.check_nonempty()?;
        let scaled = self.scale_inputs(inputs)?;
        let outputs = self.member_outputs(scaled.view())?;
        let classes = self.topology.output_dim().max(2);
        let mut counts = Array2::<u32>::zeros((inputs.nrows(), classes));
        for out in &outputs {
            for (r, row) in out.outer_iter().enumerate() {
                let row = row.to_vec();
                counts[[r, decide(&row)]] += 1;
            }
        }
        Ok(Votes {
            counts,
            members: outputs.len(),
        })
    }

    pub fn majority_vote(&self, inputs: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(self.votes(inputs)?.winners())
    }

    pub fn vote_proportions(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.votes(inputs)?.proportions())
    }

    /// Vote proportions on a `resolution x resolution` grid spanning
    /// `bounds = [(x_lo, x_hi), (y_lo, y_hi)]` in original feature units.
    pub fn decision_grid(&self, bounds: [(f64, f64); 2], resolution: usize) -> Result<DecisionGrid> {
        if self.topology.input_dim() != 2 {
            return Err(Error::InvalidArgument(format!(
                "decision grids need a 2-D feature space, network takes {}",
                self.topology.input_dim()
            )));
        }
        if resolution == 0 {
            return Err(Error::InvalidArgument("resolution must be >= 1".into()));
        }
        let (xs, ys, points) = grid_points(bounds, resolution);
        Ok(DecisionGrid {
            xs,
            ys,
            proportions: self.vote_proportions(points.view())?,
        })
    }
}

/// Running mean in member order; exact when all members agree.
fn mean_in_order(preds: &[Array2<f64>]) -> Array2<f64> {
    let mut acc = preds[0].clone();
    for (k, p) in preds.iter().enumerate().skip(1) {
        let w = 1.0 / (k + 1) as f64;
        acc.zip_mut_with(p, |m, &x| *m += (x - *m) * w);
    }
    acc
}
