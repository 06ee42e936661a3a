//! The five subcommands. Each writes a fresh run directory and never touches
//! the directories it reads from.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use simmering::diagnostics::{self, MetricReport, Spectrum};
use simmering::dynamics::{NhcIntegrator, PhaseState, TemperatureSchedule};
use simmering::net::ParamVector;
use simmering::optimize::{self, TrainReport};
use simmering::trajectory::{self, RunSpec};

use crate::artifacts::{self as art, replicate_dir};
use crate::config::{EvaluationConfig, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::eval::{self, Requests, Tally};
use crate::experiment::Experiment;

const ADAM_DIR: &str = "adam";

/// Summary written next to an Adam run's parameter snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamSummary {
    pub learning_rate: f64,
    pub epochs: usize,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub metric_kind: String,
    pub train_metric: f64,
    pub test_metric: f64,
}

fn train(exp: &Experiment, replicate: u32) -> Result<TrainReport> {
    let adam = exp.config.require_adam()?;
    let init = exp.config.network.initializer.init(&exp.topology, exp.config.seed, replicate);
    let train = exp.train_objective()?;
    let test = exp.test_objective()?;
    Ok(optimize::train_adam(&train, Some(&test), &init, adam.epochs, adam.learning_rate)?)
}

fn write_adam(dir: &Path, exp: &Experiment, report: &TrainReport, requests: &Requests) -> Result<Tally> {
    art::create_dir(dir)?;
    let mut w = art::csv_writer(&dir.join("loss.csv"))?;
    w.write_record(["epoch", "loss_train", "loss_test"])?;
    for (e, (tr, te)) in report.train_loss.iter().zip(&report.test_loss).enumerate() {
        w.serialize((e + 1, tr, te))?;
    }
    w.flush().map_err(|e| CliError::io(dir, e))?;
    let epochs = report.epochs() as u64;
    art::write_params(dir, "final", &exp.topology, &report.final_params, epochs)?;
    art::write_params(dir, "previous", &exp.topology, &report.previous_params, epochs - 1)?;
    let tally = requests.tally(&exp.single(&report.final_params)?)?;
    let (test_metric, train_metric, _) = requests.metrics(&tally)?;
    art::write_json(
        &dir.join("summary.json"),
        &AdamSummary {
            learning_rate: report.learning_rate,
            epochs: report.epochs(),
            final_train_loss: *report.train_loss.last().expect("epochs >= 2"),
            final_test_loss: *report.test_loss.last().expect("epochs >= 2"),
            metric_kind: requests.metric_kind.to_owned(),
            train_metric,
            test_metric,
        },
    )?;
    Ok(tally)
}

/// Reads the last two Adam iterates written by [`write_adam`].
fn read_adam(dir: &Path, exp: &Experiment) -> Result<TrainReport> {
    let summary: AdamSummary = art::read_json(&dir.join("summary.json"))?;
    let (t1, final_params) = art::read_params(dir, "final")?;
    let (t2, previous_params) = art::read_params(dir, "previous")?;
    if t1 != exp.topology || t2 != exp.topology {
        return Err(CliError::run_dir(dir, "snapshot topology differs from the config"));
    }
    Ok(TrainReport {
        learning_rate: summary.learning_rate,
        train_loss: Vec::new(),
        test_loss: Vec::new(),
        final_params,
        previous_params,
    })
}

/// Runs full-batch Adam for every replicate.
pub fn run_train_adam(config: &ExperimentConfig, out: &Path) -> Result<()> {
    config.require_adam()?;
    let exp = Experiment::new(config.clone())?;
    art::create_run_dir(out)?;
    art::write_run_header(out, "train-adam", config, None)?;
    let requests = Requests::new(&exp, None, Vec::new(), None);
    let results: Vec<Result<()>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let report = train(&exp, r)?;
            write_adam(&replicate_dir(out, r), &exp, &report, &requests).map(|_| ())
        })
        .collect();
    results.into_iter().collect()
}

fn write_trajectory<F>(path: &Path, body: F) -> Result<Vec<simmering::ensemble::Snapshot>>
where
    F: FnOnce(&mut dyn FnMut(&trajectory::TrajectoryRecord) -> simmering::Result<()>) -> simmering::Result<Vec<simmering::ensemble::Snapshot>>,
{
    let mut w = art::csv_writer(path)?;
    // Header written explicitly so runs that log nothing still carry it.
    w.write_record(["iteration", "T_target", "T_kinetic", "loss_train", "loss_test", "extended_energy"])?;
    let snapshots = body(&mut |r| {
        w.serialize((r.iteration, r.t_target, r.t_kinetic, r.loss_train, r.loss_test, r.extended_energy))?;
        Ok(())
    })?;
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(snapshots)
}

/// Integrates one replicate from `state`, writing its trajectory and
/// (optionally) its ensemble, and returns the ensemble's tally.
fn simmer_replicate(exp: &Experiment, requests: &Requests, mut state: PhaseState, replicate: u32, dir: &Path) -> Result<Tally> {
    let (simmer, sampling) = exp.config.require_simmer()?;
    let spec = RunSpec {
        schedule: simmer.schedule,
        iterations: simmer.iterations,
        log_every: simmer.log_every,
        plan: sampling.plan(exp.config.seed),
        replicate,
    };
    let train = exp.train_objective()?;
    let test = exp.test_objective()?;
    let mut integrator = NhcIntegrator::new(simmer.integrator())?;
    let snapshots = write_trajectory(&dir.join(art::TRAJECTORY), |log| {
        trajectory::run(&mut state, &mut integrator, &train, Some(&test), &spec, log)
    })?;
    let bundle = exp.bundle(snapshots)?;
    if exp.config.output.snapshots {
        art::write_bundle(dir, art::ENSEMBLE, &bundle)?;
    }
    requests.tally(&bundle)
}

struct ReplicateOutcome {
    ensemble: Tally,
    adam: Option<Tally>,
}

/// Writes pooled metrics and plot-ready CSVs for a finished run.
fn finish(out: &Path, exp: &Experiment, requests: &Requests, outcomes: Vec<ReplicateOutcome>, shared_adam: Option<Tally>) -> Result<MetricReport> {
    let hash = art::config_hash(&exp.config);
    let seeds = vec![exp.config.seed];
    for (r, o) in outcomes.iter().enumerate() {
        let adam = o.adam.as_ref().or(shared_adam.as_ref());
        let report = eval::report(requests, &o.ensemble, adam, seeds.clone(), hash.clone())?;
        art::write_json(&replicate_dir(out, r as u32).join(art::METRICS), &report)?;
    }
    let mut adams = Vec::new();
    let pooled = outcomes
        .into_iter()
        .map(|o| {
            adams.extend(o.adam);
            o.ensemble
        })
        .reduce(Tally::merge)
        .ok_or_else(|| CliError::config("replicates", "must be >= 1"))?;
    let mut report = eval::report(requests, &pooled, shared_adam.as_ref(), seeds, hash)?;
    if shared_adam.is_none() && !adams.is_empty() {
        // Each replicate has its own optimizer endpoint: compare the pool
        // with their average metric.
        let per: Vec<(f64, f64, Option<f64>)> = adams.iter().map(|a| requests.metrics(a)).collect::<Result<_>>()?;
        let n = per.len() as f64;
        let test = per.iter().map(|p| p.0).sum::<f64>() / n;
        report.adam_test_metric = Some(test);
        report.adam_train_metric = Some(per.iter().map(|p| p.1).sum::<f64>() / n);
        report.adam_truth_mse = per
            .iter()
            .map(|p| p.2)
            .sum::<Option<f64>>()
            .map(|s| s / n);
        report.improved = MetricReport::is_better(&report.metric_kind, report.ensemble_test_metric, test);
    }
    art::write_json(&out.join(art::METRICS), &report)?;
    let baseline = shared_adam.as_ref().or(if adams.len() == 1 { adams.first() } else { None });
    write_evaluation(out, exp, requests, &pooled, baseline)?;
    Ok(report)
}

/// Hands Adam endpoints to the thermostat and samples ensembles from them.
///
/// With `from_run`, the endpoints come from a `train-adam` run made with the
/// same data, network, seed and optimizer settings; otherwise Adam runs first.
pub fn run_retrofit(config: &ExperimentConfig, out: &Path, from_run: Option<&Path>) -> Result<MetricReport> {
    config.require_simmer()?;
    let exp = Experiment::new(config.clone())?;
    if let Some(src) = from_run {
        check_compatible(src, config)?;
    } else {
        config.require_adam()?;
    }
    art::create_run_dir(out)?;
    art::write_run_header(out, "retrofit", config, from_run)?;
    let requests = Requests::from_config(&exp);
    let integ = config.simmer.expect("checked").integrator();
    let outcomes: Vec<Result<ReplicateOutcome>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let dir = replicate_dir(out, r);
            art::create_dir(&dir)?;
            let (report, adam) = match from_run {
                Some(src) => {
                    let report = read_adam(&replicate_dir(src, r), &exp)?;
                    let tally = requests.tally(&exp.single(&report.final_params)?)?;
                    (report, tally)
                }
                None => {
                    let report = train(&exp, r)?;
                    let tally = write_adam(&dir.join(ADAM_DIR), &exp, &report, &requests)?;
                    (report, tally)
                }
            };
            let state = optimize::retrofit_init(&report, &integ)?;
            Ok(ReplicateOutcome {
                ensemble: simmer_replicate(&exp, &requests, state, r, &dir)?,
                adam: Some(adam),
            })
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    finish(out, &exp, &requests, outcomes, None)
}

/// Samples from fresh initializations at constant temperature and pools the
/// replicates. With an `[adam]` section a single Adam baseline is trained
/// from replicate 0's initialization for comparison.
pub fn run_simmer(config: &ExperimentConfig, out: &Path) -> Result<MetricReport> {
    let (simmer, _) = config.require_simmer()?;
    let TemperatureSchedule::Constant { temperature } = simmer.schedule else {
        return Err(CliError::config("simmer.schedule", "ab initio runs need kind = \"constant\""));
    };
    let exp = Experiment::new(config.clone())?;
    art::create_run_dir(out)?;
    art::write_run_header(out, "simmer", config, None)?;
    let requests = Requests::from_config(&exp);
    let baseline = match config.adam {
        Some(_) => Some(write_adam(&out.join(ADAM_DIR), &exp, &train(&exp, 0)?, &requests)?),
        None => None,
    };
    let integ = simmer.integrator();
    let outcomes: Vec<Result<ReplicateOutcome>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let dir = replicate_dir(out, r);
            art::create_dir(&dir)?;
            let init = config.network.initializer.init(&exp.topology, config.seed, r);
            let state = PhaseState::maxwell_boltzmann(init, &integ, temperature, config.seed, r)?;
            Ok(ReplicateOutcome {
                ensemble: simmer_replicate(&exp, &requests, state, r, &dir)?,
                adam: None,
            })
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    finish(out, &exp, &requests, outcomes, baseline)
}

/// Re-evaluates the ensembles saved in `run`, with the run's own
/// `[evaluation]` requests unless `evaluation` replaces them.
pub fn run_evaluate(run: &Path, out: &Path, evaluation: Option<EvaluationConfig>) -> Result<MetricReport> {
    let mut config = art::read_run_config(run)?;
    let manifest: art::Manifest = art::read_json(&run.join(art::MANIFEST))?;
    if let Some(e) = evaluation {
        config.evaluation = e;
    }
    config.validate()?;
    let exp = Experiment::new(config.clone())?;
    let requests = Requests::from_config(&exp);
    art::create_run_dir(out)?;
    art::write_run_header(out, "evaluate", &config, Some(run))?;

    let shared = run.join(ADAM_DIR);
    let shared_adam = if shared.join("final.bin").exists() {
        let (_, p) = art::read_params(&shared, "final")?;
        Some(requests.tally(&exp.single(&p)?)?)
    } else {
        None
    };
    let adam_source = |r: u32| -> Option<PathBuf> {
        let own = replicate_dir(run, r).join(ADAM_DIR);
        if own.join("final.bin").exists() {
            return Some(own);
        }
        manifest
            .from_run
            .as_ref()
            .map(|src| replicate_dir(Path::new(src), r))
            .filter(|d| d.join("final.bin").exists())
    };
    let mut outcomes = Vec::new();
    for r in 0..config.replicates {
        let bundle = art::read_bundle(&replicate_dir(run, r), art::ENSEMBLE)?;
        let adam = match (&shared_adam, adam_source(r)) {
            (None, Some(dir)) => {
                let (_, p) = art::read_params(&dir, "final")?;
                Some(requests.tally(&exp.single(&p)?)?)
            }
            _ => None,
        };
        outcomes.push(ReplicateOutcome {
            ensemble: requests.tally(&bundle)?,
            adam,
        });
        art::create_dir(&replicate_dir(out, r))?;
    }
    finish(out, &exp, &requests, outcomes, shared_adam)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub param_count: usize,
    pub final_train_loss: f64,
    pub decades: f64,
    #[serde(flatten)]
    pub spectrum: Spectrum,
}

/// Hessian eigenvalues of the training loss at replicate 0's Adam endpoint.
pub fn run_spectrum(config: &ExperimentConfig, out: &Path, from_run: Option<&Path>) -> Result<SpectrumReport> {
    let exp = Experiment::new(config.clone())?;
    let params: ParamVector = match from_run {
        Some(src) => {
            check_compatible(src, config)?;
            read_adam(&replicate_dir(src, 0), &exp)?.final_params
        }
        None => train(&exp, 0)?.final_params,
    };
    art::create_run_dir(out)?;
    art::write_run_header(out, "spectrum", config, from_run)?;
    let objective = exp.train_objective()?;
    let spectrum = diagnostics::hessian_spectrum(&objective, &params, diagnostics::DEFAULT_HESSIAN_CAP)?;
    let mut w = art::csv_writer(&out.join("spectrum.csv"))?;
    w.write_record(["rank", "eigenvalue"])?;
    for (i, v) in spectrum.eigenvalues.iter().enumerate() {
        w.serialize((i, v))?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;
    let report = SpectrumReport {
        param_count: params.len(),
        final_train_loss: simmering::potential::Potential::value(&objective, &params)?,
        decades: spectrum.decades(),
        spectrum,
    };
    art::write_json(&out.join("spectrum.json"), &report)?;
    art::write_params(out, "params", &exp.topology, &params, 0)?;
    Ok(report)
}

/// A source run must have used the same data, network, seed and optimizer.
fn check_compatible(src: &Path, config: &ExperimentConfig) -> Result<()> {
    let theirs = art::read_run_config(src)?;
    if theirs.dataset != config.dataset
        || theirs.network != config.network
        || theirs.seed != config.seed
        || theirs.adam != config.adam
    {
        return Err(CliError::run_dir(
            src,
            "was produced with different dataset, network, seed or adam settings",
        ));
    }
    if theirs.replicates < config.replicates {
        return Err(CliError::run_dir(
            src,
            format!("has {} replicates, {} requested", theirs.replicates, config.replicates),
        ));
    }
    Ok(())
}

fn write_evaluation(out: &Path, exp: &Experiment, requests: &Requests, pooled: &Tally, adam: Option<&Tally>) -> Result<()> {
    let features = &exp.dataset.feature_names;
    let outputs: Vec<String> = if exp.is_classification() {
        vec!["class".into()]
    } else {
        exp.dataset.target_names.clone()
    };

    // Test-set predictions.
    let mut w = art::csv_writer(&out.join("predictions.csv"))?;
    let mut header = vec!["row".to_string()];
    header.extend(features.iter().cloned());
    header.extend(outputs.iter().map(|o| format!("target_{o}")));
    if adam.is_some() {
        header.extend(outputs.iter().map(|o| format!("adam_{o}")));
    }
    header.extend(outputs.iter().map(|o| format!("ensemble_{o}")));
    w.write_record(&header)?;
    let as_columns = |t: &Tally| -> Vec<Vec<f64>> {
        match &t.test {
            eval::Aggregate::Votes(_) => t.test.labels().into_iter().map(|l| vec![l as f64]).collect(),
            eval::Aggregate::Mean(m) => m.outer_iter().map(|r| r.to_vec()).collect(),
        }
    };
    let ens = as_columns(pooled);
    let base = adam.map(as_columns);
    let targets: Vec<Vec<f64>> = if exp.is_classification() {
        Experiment::labels(&requests.test_y).into_iter().map(|l| vec![l as f64]).collect()
    } else {
        requests.test_y.outer_iter().map(|r| r.to_vec()).collect()
    };
    for (i, &row) in exp.split.test.iter().enumerate() {
        let mut rec = vec![row.to_string()];
        rec.extend(requests.test_x.row(i).iter().map(|v| v.to_string()));
        rec.extend(targets[i].iter().map(|v| v.to_string()));
        if let Some(b) = &base {
            rec.extend(b[i].iter().map(|v| v.to_string()));
        }
        rec.extend(ens[i].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;

    if let (Some(grid), Some(agg)) = (&requests.grid, &pooled.grid) {
        let mut w = art::csv_writer(&out.join("grid.csv"))?;
        let mut header = vec![
            format!("x_{}", features[0]),
            format!("y_{}", features[1]),
        ];
        let cols: Vec<String> = if exp.is_classification() {
            exp.class_names().iter().map(|c| format!("p_{c}")).collect()
        } else {
            outputs.iter().map(|o| format!("mean_{o}")).collect()
        };
        header.extend(cols);
        w.write_record(&header)?;
        let props = agg.proportions();
        for (i, p) in grid.points.outer_iter().zip(props.outer_iter()) {
            let mut rec: Vec<String> = i.iter().map(|v| v.to_string()).collect();
            rec.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| CliError::io(out, e))?;
    }

    if !requests.distribution_at.is_empty() {
        let mut w = art::csv_writer(&out.join("distribution.csv"))?;
        let mut header = vec!["point".to_string(), "member".to_string()];
        header.extend(features.iter().cloned());
        header.extend(outputs.iter().cloned());
        w.write_record(&header)?;
        for (p, (x, members)) in requests.distribution_at.iter().zip(&pooled.distributions).enumerate() {
            for (m, y) in members.iter().enumerate() {
                let mut rec = vec![p.to_string(), m.to_string()];
                rec.extend(x.iter().map(|v| v.to_string()));
                rec.extend(y.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| CliError::io(out, e))?;
    }

    if let (Some(truth), Some(eval::Aggregate::Mean(m))) = (&requests.truth, &pooled.truth) {
        let mut w = art::csv_writer(&out.join("curve.csv"))?;
        let base = adam.and_then(|a| match &a.truth {
            Some(eval::Aggregate::Mean(b)) => Some(b),
            _ => None,
        });
        let mut header = vec!["x", "truth"];
        if base.is_some() {
            header.push("adam");
        }
        header.push("ensemble");
        w.write_record(&header)?;
        for i in 0..truth.y.len() {
            let mut rec = vec![truth.x[[i, 0]].to_string(), truth.y[i].to_string()];
            if let Some(b) = base {
                rec.push(b[[i, 0]].to_string());
            }
            rec.push(m[[i, 0]].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| CliError::io(out, e))?;
    }
    Ok(())
}
