//! Property tests over randomly drawn models and data.

use ising_trw::bench::delta_j;
use ising_trw::exact::{exact_moments, log_partition};
use ising_trw::inverse::{invert_all, invert_bethe, invert_trw};
use ising_trw::model::generate_model;
use ising_trw::sampler::gibbs_sample;
use ising_trw::spikes::{bin_spikes, SpikeTrains};
use ising_trw::trw::{trw_log_partition, SolverOptions};
use ising_trw::{EdgeAppearance, Graph, Method, MomentAccumulator, Regime};
use proptest::prelude::*;

fn regime() -> impl Strategy<Value = Regime> {
    prop_oneof![Just(Regime::Attractive), Just(Regime::Mixed)]
}

fn small_graph() -> impl Strategy<Value = Graph> {
    prop_oneof![
        (3usize..=8).prop_map(Graph::complete),
        (3usize..=10).prop_map(Graph::cycle),
        (2usize..=3, 2usize..=3).prop_map(|(w, h)| Graph::grid2d(w, h)),
        (2usize..=10, any::<u64>()).prop_map(|(n, s)| Graph::random_tree(n, s)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trw_bound_dominates_exact(graph in small_graph(), regime in regime(), omega in 0.0f64..1.5, seed in any::<u64>()) {
        let model = generate_model::<f64>(graph, regime, omega, seed).unwrap();
        let rho = EdgeAppearance::uniform(model.graph()).unwrap();
        let bound = trw_log_partition(&model, &rho, &SolverOptions::default()).unwrap();
        let exact = log_partition(&model).unwrap();
        prop_assert!(bound >= exact - 1e-9, "bound {bound} below exact {exact}");
        if model.graph().is_tree() {
            prop_assert!((bound - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn inferred_couplings_are_symmetric(graph in small_graph(), regime in regime(), omega in 0.0f64..1.0, seed in any::<u64>()) {
        let model = generate_model::<f64>(graph.clone(), regime, omega, seed).unwrap();
        let st = exact_moments(&model).unwrap().to_statistics();
        let rho = EdgeAppearance::uniform(&graph).unwrap();
        for (_, est) in invert_all(&st, &graph, &rho, &Method::ALL).unwrap() {
            let m = est.unwrap().to_matrix();
            prop_assert!(m.is_symmetric());
        }
    }

    #[test]
    fn bethe_equals_trw_with_unit_rho(graph in small_graph(), regime in regime(), omega in 0.0f64..1.2, seed in any::<u64>()) {
        let model = generate_model::<f64>(graph.clone(), regime, omega, seed).unwrap();
        let st = exact_moments(&model).unwrap().to_statistics();
        let a = invert_bethe(&st, &graph).unwrap();
        let b = invert_trw(&st, &graph, &EdgeAppearance::bethe(&graph)).unwrap();
        for (x, y) in a.couplings.iter().zip(&b.couplings) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn bethe_is_exact_on_trees(n in 2usize..=10, tree_seed in any::<u64>(), omega in 0.0f64..1.2, seed in any::<u64>()) {
        let graph = Graph::random_tree(n, tree_seed);
        let model = generate_model::<f64>(graph.clone(), Regime::Mixed, omega, seed).unwrap();
        let st = exact_moments(&model).unwrap().to_statistics();
        let est = invert_bethe(&st, &graph).unwrap();
        for (j, t) in est.couplings.iter().zip(model.couplings()) {
            prop_assert!((j - t).abs() < 1e-7);
        }
    }

    #[test]
    fn methods_agree_to_second_order(seed in any::<u64>(), omega in 0.001f64..0.01) {
        let graph = Graph::complete(6);
        let model = generate_model::<f64>(graph.clone(), Regime::Mixed, omega, seed).unwrap();
        let st = exact_moments(&model).unwrap().to_statistics();
        let rho = EdgeAppearance::uniform(&graph).unwrap();
        let ests: Vec<Vec<f64>> = invert_all(&st, &graph, &rho, &Method::ALL).unwrap().into_iter().map(|(_, e)| e.unwrap().couplings).collect();
        for a in &ests {
            for b in &ests {
                for (x, y) in a.iter().zip(b) {
                    prop_assert!((x - y).abs() <= 10.0 * omega * omega);
                }
            }
        }
    }

    #[test]
    fn delta_j_is_zero_at_truth_and_scale_free(graph in small_graph(), omega in 0.1f64..1.0, seed in any::<u64>(), scale in 0.1f64..10.0) {
        let model = generate_model::<f64>(graph.clone(), Regime::Mixed, omega, seed).unwrap();
        let st = exact_moments(&model).unwrap().to_statistics();
        let mut est = invert_bethe(&st, &graph).unwrap();
        est.couplings = model.couplings().to_vec();
        prop_assert_eq!(delta_j(&est, model.couplings()).unwrap(), 0.0);
        est.couplings = model.couplings().iter().map(|j| j * (1.0 + scale)).collect();
        let scaled: Vec<f64> = model.couplings().iter().map(|j| j * scale).collect();
        let mut est2 = est.clone();
        est2.couplings = scaled.iter().map(|j| j * (1.0 + scale)).collect();
        let d1 = delta_j(&est, model.couplings()).unwrap();
        let d2 = delta_j(&est2, &scaled).unwrap();
        prop_assert!((d1 - scale).abs() < 1e-9 && (d2 - scale).abs() < 1e-9);
    }

    #[test]
    fn accumulator_merge_is_concatenation(split in 0usize..=400, seed in any::<u64>()) {
        let model = generate_model::<f64>(Graph::cycle(5), Regime::Mixed, 0.8, seed).unwrap();
        let samples = gibbs_sample(&model, 400, 10, 1, seed).unwrap();
        let rows: Vec<&[i8]> = samples.rows().collect();
        let mut whole = MomentAccumulator::new(5);
        let mut left = MomentAccumulator::new(5);
        let mut right = MomentAccumulator::new(5);
        for (k, r) in rows.iter().enumerate() {
            whole.push(r);
            if k < split { left.push(r) } else { right.push(r) }
        }
        left.merge(&right);
        prop_assert_eq!(left, whole);
    }

    #[test]
    fn binning_ignores_spike_order(times in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 0..30), 1..5), perm_seed in any::<u64>()) {
        let sorted = SpikeTrains::new(0.0, 1.0, times.clone()).unwrap();
        let shuffled: Vec<Vec<f64>> = times.iter().enumerate().map(|(k, t)| {
            let mut t = t.clone();
            let r = (perm_seed as usize).wrapping_add(k) % (t.len().max(1));
            t.rotate_left(r);
            t.reverse();
            t
        }).collect();
        let other = SpikeTrains::new(0.0, 1.0, shuffled).unwrap();
        let a = bin_spikes(&sorted, 0.05).unwrap();
        let b = bin_spikes(&other, 0.05).unwrap();
        prop_assert_eq!(a.as_samples(), b.as_samples());
    }
}
