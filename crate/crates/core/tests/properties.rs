use ndarray::Array2;
use proptest::prelude::*;
use simmering::data::{gen_noisy_sine, split, ScalerParams};
use simmering::dynamics::{kinetic_temperature, IntegratorConfig, NhcIntegrator, PhaseState, TemperatureSchedule};
use simmering::ensemble::{collect, EnsembleBundle, SamplingPlan, Snapshot};
use simmering::net::{Activation, Topology};
use simmering::potential::{DiagonalQuadratic, Potential};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// Counts gradient evaluations of the wrapped potential.
struct Counting<'a> {
    inner: &'a DiagonalQuadratic,
    calls: std::cell::Cell<u64>,
}

impl Potential for Counting<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &[f64]) -> simmering::Result<f64> {
        self.inner.value(x)
    }
    fn value_and_gradient(&self, x: &[f64], g: &mut [f64]) -> simmering::Result<f64> {
        self.calls.set(self.calls.get() + 1);
        self.inner.value_and_gradient(x, g)
    }
}

fn snapshots(params: &[Vec<f64>]) -> Vec<Snapshot> {
    params
        .iter()
        .enumerate()
        .map(|(i, p)| Snapshot {
            iteration: i as u64 + 1,
            temperature: 0.1,
            params: p.clone().into(),
        })
        .collect()
}

fn bundle(topology: &Topology, params: &[Vec<f64>]) -> EnsembleBundle {
    EnsembleBundle::new(topology.clone(), snapshots(params), None, None).unwrap()
}

fn members(n_params: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, n_params), 1..12)
}

fn classifier() -> Topology {
    Topology::uniform(vec![2, 4, 3], Activation::Tanh, Activation::Linear).unwrap()
}

fn regressor() -> Topology {
    Topology::uniform(vec![1, 5, 1], Activation::Tanh, Activation::Linear).unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn split_partitions_indices(n in 2usize..300, frac in 0.01..0.99f64, seed in any::<u64>()) {
        let n_train = ((n as f64 * frac) as usize).clamp(1, n - 1);
        let s = split(n, n_train, seed).unwrap();
        prop_assert_eq!(s.train.len(), n_train);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s, split(n, n_train, seed).unwrap());
    }

    #[test]
    fn scaler_round_trips(rows in prop::collection::vec(prop::collection::vec(-1e3..1e3f64, 3), 2..30),
                          probe in prop::collection::vec(-1e4..1e4f64, 3)) {
        let data = Array2::from_shape_vec((rows.len(), 3), rows.concat()).unwrap();
        let names: Vec<String> = (0..3).map(|c| format!("c{c}")).collect();
        let all: Vec<usize> = (0..rows.len()).collect();
        let Ok(scaler) = ScalerParams::fit(data.view(), &all, &names) else {
            return Ok(());
        };
        let p = Array2::from_shape_vec((1, 3), probe.clone()).unwrap();
        let back = scaler.invert(scaler.apply(p.view()).unwrap().view()).unwrap();
        for (a, b) in back.iter().zip(&probe) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let scaled = scaler.apply(data.view()).unwrap();
        for v in scaled.iter() {
            prop_assert!((-1.0..=1.0).contains(v));
        }
    }

    #[test]
    fn sine_noiseless_part_is_seed_free(a in any::<u64>(), b in any::<u64>()) {
        let x = gen_noisy_sine(51, 0.1, a).unwrap();
        prop_assert_eq!(&x, &gen_noisy_sine(51, 0.1, a).unwrap());
        let y = gen_noisy_sine(51, 0.1, b).unwrap();
        prop_assert_eq!(x.features, y.features);
        if a != b {
            prop_assert_ne!(x.targets, y.targets);
        }
    }

    #[test]
    fn schedule_is_monotone(initial in 0.0..1.0f64, span in 0.0..1.0f64, inc in 1e-4..0.1f64,
                            hold in 1u64..500, i in 0u64..100_000, d in 0u64..100_000) {
        let s = TemperatureSchedule::Ramp { initial, target: initial + span, increment: inc, hold };
        prop_assert!(s.at(i) <= s.at(i + d));
        prop_assert!(s.at(i + d) <= s.target());
    }

    #[test]
    fn free_flight_translates_uniformly(x0 in -5.0..5.0f64, v in -3.0..3.0f64, steps in 1u64..400) {
        let cfg = IntegratorConfig::default();
        let flat = DiagonalQuadratic::flat(1);
        let counted = Counting { inner: &flat, calls: 0.into() };
        let mut s = PhaseState::at_rest(vec![x0].into(), &cfg).unwrap();
        s.v = vec![v];
        // With one degree of freedom at T = m v^2 the thermostat force vanishes exactly.
        let t = kinetic_temperature(&s);
        let mut integ = NhcIntegrator::new(cfg).unwrap();
        for _ in 0..steps {
            integ.step(&mut s, &counted, t).unwrap();
        }
        prop_assert_eq!(counted.calls.get(), steps);
        prop_assert_eq!(s.v[0], v);
        let expected = x0 + steps as f64 * cfg.dt * v;
        prop_assert!((s.x[0] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
    }

    #[test]
    fn regression_mean_within_member_range(m in members(16), x in prop::collection::vec(-2.0..2.0f64, 1..8)) {
        let t = regressor();
        let b = bundle(&t, &m);
        let inputs = Array2::from_shape_vec((x.len(), 1), x).unwrap();
        let mean = b.regression_mean(inputs.view()).unwrap();
        let preds = b.member_predictions(inputs.view()).unwrap();
        for (r, mu) in mean.iter().enumerate() {
            let lo = preds.iter().map(|p| p[[r, 0]]).fold(f64::INFINITY, f64::min);
            let hi = preds.iter().map(|p| p[[r, 0]]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= *mu && *mu <= hi);
            let naive = preds.iter().map(|p| p[[r, 0]]).sum::<f64>() / preds.len() as f64;
            prop_assert!((mu - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn vote_proportions_are_distributions(m in members(27), x in prop::collection::vec(-3.0..3.0f64, 2..20)) {
        let b = bundle(&classifier(), &m);
        let inputs = Array2::from_shape_vec((x.len() / 2, 2), x[..x.len() / 2 * 2].to_vec()).unwrap();
        let votes = b.votes(inputs.view()).unwrap();
        for counts in votes.counts.outer_iter() {
            prop_assert_eq!(counts.sum() as usize, m.len());
        }
        let p = b.vote_proportions(inputs.view()).unwrap();
        let winners = b.majority_vote(inputs.view()).unwrap();
        for (row, w) in p.outer_iter().zip(winners) {
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((row.sum() - 1.0).abs() <= 4.0 * f64::EPSILON);
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(row.iter().position(|&v| v == best).unwrap(), w);
        }
    }

    #[test]
    fn collect_is_deterministic_and_idempotent(total in 2u64..400, burn in 0.0..0.9f64, stride in 1u64..5,
                                               frac in prop::option::of(0.05..1.0f64), seed in any::<u64>()) {
        let traj: Vec<Snapshot> = (0..total)
            .map(|i| Snapshot { iteration: i + 1, temperature: 0.0, params: vec![i as f64].into() })
            .collect();
        let plan = SamplingPlan { burn_in: (burn * total as f64) as u64, stride, fraction: frac, seed };
        let once = collect(&traj, &plan).unwrap();
        prop_assert_eq!(&once, &collect(&traj, &plan).unwrap());
        prop_assert!(!once.is_empty());
        prop_assert!(once.iter().all(|s| s.iteration > plan.burn_in));
        prop_assert_eq!(&collect(&once, &SamplingPlan::all()).unwrap(), &once);
    }

    #[test]
    fn pooling_is_order_invariant(a in members(27), b in members(27), c in members(27),
                                  x in prop::collection::vec(-3.0..3.0f64, 2..12)) {
        let t = classifier();
        let inputs = Array2::from_shape_vec((x.len() / 2, 2), x[..x.len() / 2 * 2].to_vec()).unwrap();
        let forward = EnsembleBundle::pool(vec![bundle(&t, &a), bundle(&t, &b), bundle(&t, &c)]).unwrap();
        let backward = EnsembleBundle::pool(vec![bundle(&t, &c), bundle(&t, &a), bundle(&t, &b)]).unwrap();
        let concatenated = bundle(&t, &[a, b, c].concat());
        let v = forward.votes(inputs.view()).unwrap();
        prop_assert_eq!(&v, &backward.votes(inputs.view()).unwrap());
        prop_assert_eq!(&v, &concatenated.votes(inputs.view()).unwrap());
    }
}
