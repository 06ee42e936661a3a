//! Ensemble evaluation that can be merged across replicates.
//!
//! Each replicate's bundle is reduced to a [`Tally`] and dropped, so pooling
//! many replicates never holds more than one bundle per worker. Vote counts
//! add exactly; regression means combine weighted by member count.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use simmering::diagnostics::{self, MetricReport};
use simmering::ensemble::{self, decide, EnsembleBundle};

use crate::config::{DataSource, GridRequest};
use crate::error::Result;
use crate::experiment::Experiment;

#[derive(Debug, Clone, PartialEq)]
pub enum Aggregate {
    /// Mean prediction in original target units.
    Mean(Array2<f64>),
    /// `inputs x classes` member votes.
    Votes(Array2<u32>),
}

impl Aggregate {
    fn of(bundle: &EnsembleBundle, classification: bool, inputs: ArrayView2<f64>) -> Result<Self> {
        Ok(if classification {
            Aggregate::Votes(bundle.votes(inputs)?.counts)
        } else {
            Aggregate::Mean(bundle.regression_mean(inputs)?)
        })
    }

    fn merge(self, n_self: usize, other: Aggregate, n_other: usize) -> Aggregate {
        match (self, other) {
            (Aggregate::Votes(a), Aggregate::Votes(b)) => Aggregate::Votes(a + b),
            (Aggregate::Mean(a), Aggregate::Mean(b)) => {
                let w = n_other as f64 / (n_self + n_other) as f64;
                let mut out = a;
                out.zip_mut_with(&b, |m, &x| *m += (x - *m) * w);
                Aggregate::Mean(out)
            }
            _ => unreachable!("tallies of one experiment share a task"),
        }
    }

    /// Winning class per row, or the mean prediction.
    pub fn labels(&self) -> Vec<usize> {
        match self {
            Aggregate::Votes(c) => c.outer_iter().map(|r| argmax_lowest(r.iter().copied())).collect(),
            Aggregate::Mean(m) => m.outer_iter().map(|r| decide(&r.to_vec())).collect(),
        }
    }

    pub fn proportions(&self) -> Array2<f64> {
        match self {
            Aggregate::Votes(c) => {
                let members = c.row(0).sum() as f64;
                c.mapv(|v| f64::from(v) / members)
            }
            Aggregate::Mean(m) => m.clone(),
        }
    }
}

fn argmax_lowest(values: impl Iterator<Item = u32>) -> usize {
    let mut best = (0, 0);
    for (i, v) in values.enumerate() {
        if i == 0 || v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Inputs, in original feature units, at which ensembles are evaluated.
pub struct Requests {
    pub train_x: Array2<f64>,
    pub train_y: Array2<f64>,
    pub test_x: Array2<f64>,
    pub test_y: Array2<f64>,
    pub grid: Option<Grid>,
    pub truth: Option<Truth>,
    pub distribution_at: Vec<Vec<f64>>,
    pub classification: bool,
    pub metric_kind: &'static str,
}

pub struct Grid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub points: Array2<f64>,
}

/// Noiseless curve of the sine generator at evenly spaced inputs.
pub struct Truth {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
}

impl Requests {
    pub fn new(exp: &Experiment, grid: Option<GridRequest>, distribution_at: Vec<Vec<f64>>, truth_points: Option<usize>) -> Self {
        let (train_x, train_y) = exp.train_raw();
        let (test_x, test_y) = exp.test_raw();
        let grid = grid.map(|g| {
            let (xs, ys, points) = ensemble::grid_points(g.bounds(), g.resolution);
            Grid { xs, ys, points }
        });
        let truth = match (&exp.config.dataset.source, truth_points) {
            (DataSource::NoisySine { .. }, Some(n)) if n >= 1 => {
                let xs = ensemble::linspace(-1.0, 1.0, n);
                Some(Truth {
                    y: xs.iter().map(|x| (2.0 * PI * x).sin()).collect(),
                    x: Array2::from_shape_vec((n, 1), xs).expect("n x 1"),
                })
            }
            _ => None,
        };
        let classification = exp.is_classification();
        Requests {
            train_x,
            train_y,
            test_x,
            test_y,
            grid,
            truth,
            distribution_at,
            classification,
            metric_kind: if classification { "accuracy" } else { "mse" },
        }
    }

    pub fn from_config(exp: &Experiment) -> Self {
        let e = &exp.config.evaluation;
        Requests::new(exp, e.grid, e.distribution_at.clone(), e.truth_points)
    }

    pub fn tally(&self, bundle: &EnsembleBundle) -> Result<Tally> {
        let c = self.classification;
        let distributions = self
            .distribution_at
            .iter()
            .map(|x| {
                let d = bundle.regression_distribution(x)?;
                Ok(if c {
                    d.samples.iter().map(|o| vec![decide(o) as f64]).collect()
                } else {
                    d.samples
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tally {
            members: bundle.len(),
            train: Aggregate::of(bundle, c, self.train_x.view())?,
            test: Aggregate::of(bundle, c, self.test_x.view())?,
            grid: self
                .grid
                .as_ref()
                .map(|g| Aggregate::of(bundle, c, g.points.view()))
                .transpose()?,
            truth: self
                .truth
                .as_ref()
                .map(|t| Aggregate::of(bundle, c, t.x.view()))
                .transpose()?,
            distributions,
        })
    }

    /// Test metric, train metric and (sine only) squared error against the
    /// noiseless curve.
    pub fn metrics(&self, tally: &Tally) -> Result<(f64, f64, Option<f64>)> {
        let score = |agg: &Aggregate, y: &Array2<f64>| -> Result<f64> {
            Ok(match agg {
                Aggregate::Votes(_) => diagnostics::accuracy(&agg.labels(), &Experiment::labels(y))?,
                Aggregate::Mean(m) => {
                    let flat = |a: &Array2<f64>| a.iter().copied().collect::<Vec<_>>();
                    diagnostics::mse(&flat(m), &flat(y))?
                }
            })
        };
        let truth = match (&self.truth, &tally.truth) {
            (Some(t), Some(Aggregate::Mean(m))) => Some(diagnostics::mse(&m.column(0).to_vec(), &t.y)?),
            _ => None,
        };
        Ok((score(&tally.test, &self.test_y)?, score(&tally.train, &self.train_y)?, truth))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tally {
    pub members: usize,
    pub train: Aggregate,
    pub test: Aggregate,
    pub grid: Option<Aggregate>,
    pub truth: Option<Aggregate>,
    /// Per requested input, every member's prediction (or voted class).
    pub distributions: Vec<Vec<Vec<f64>>>,
}

impl Tally {
    /// Pools `other` after `self`, as if its members were appended.
    pub fn merge(self, other: Tally) -> Tally {
        let (n, m) = (self.members, other.members);
        let pair = |a: Option<Aggregate>, b: Option<Aggregate>| match (a, b) {
            (Some(a), Some(b)) => Some(a.merge(n, b, m)),
            _ => None,
        };
        let mut distributions = self.distributions;
        for (mine, theirs) in distributions.iter_mut().zip(other.distributions) {
            mine.extend(theirs);
        }
        Tally {
            members: n + m,
            train: self.train.merge(n, other.train, m),
            test: self.test.merge(n, other.test, m),
            grid: pair(self.grid, other.grid),
            truth: pair(self.truth, other.truth),
            distributions,
        }
    }
}

/// Ensemble metrics against an optional optimizer baseline.
pub fn report(
    requests: &Requests,
    ensemble: &Tally,
    adam: Option<&Tally>,
    seeds: Vec<u64>,
    config_hash: String,
) -> Result<MetricReport> {
    let (test, train, truth) = requests.metrics(ensemble)?;
    let baseline = adam.map(|a| requests.metrics(a)).transpose()?;
    let kind = requests.metric_kind;
    Ok(MetricReport {
        metric_kind: kind.to_owned(),
        adam_test_metric: baseline.map(|b| b.0),
        ensemble_test_metric: test,
        improved: baseline.is_some_and(|b| MetricReport::is_better(kind, test, b.0)),
        adam_train_metric: baseline.map(|b| b.1),
        ensemble_train_metric: train,
        adam_truth_mse: baseline.and_then(|b| b.2),
        ensemble_truth_mse: truth,
        ensemble_size: ensemble.members,
        seeds,
        config_hash,
    })
}
