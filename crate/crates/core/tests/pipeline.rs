//! Data-to-estimate pipeline through the public API.

use safe_rmdp::bayes::{bci_ambiguity_set, dirichlet_posterior, sample_posterior, DirichletPosterior};
use safe_rmdp::experiments::{solve_from_data, MethodId, SolveOptions};
use safe_rmdp::freq::ConfidenceBudget;
use safe_rmdp::mdp::{total_return, value_iteration, Dataset, TabularMdp, Transition};

fn model() -> TabularMdp {
    TabularMdp::new(
        vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![0.5, 0.5]],
        vec![
            vec![vec![0.3, 0.2, 0.5], vec![0.1, 0.8, 0.1]],
            vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.2, 0.8]],
            vec![vec![1.0, 0.0, 0.0], vec![0.2, 0.4, 0.4]],
        ],
        0.9,
        vec![1.0, 0.0, 0.0],
    )
    .unwrap()
}

/// Counts (3, 2, 5) for the first pair plus a few transitions elsewhere.
fn data() -> Dataset {
    let mut samples = Vec::new();
    for (next, count) in [(0, 3), (1, 2), (2, 5)] {
        samples.extend((0..count).map(|_| Transition { s: 0, a: 0, next }));
    }
    for &(s, a, next) in &[(0, 1, 1), (1, 0, 0), (1, 1, 2), (1, 1, 2), (2, 0, 0), (2, 1, 1), (2, 1, 2)] {
        samples.push(Transition { s, a, next });
    }
    Dataset::from_samples(3, 2, samples).unwrap()
}

#[test]
fn mean_transition_on_known_model_is_value_iteration() {
    let mdp = model();
    let options = SolveOptions::default();
    let sol = solve_from_data(&mdp, None, MethodId::MeanTransition, None, &options).unwrap();
    let (v, pi) = value_iteration(&mdp, options.tol).unwrap();
    assert_eq!(sol.value, v);
    assert_eq!(sol.policy, pi);
    assert_eq!(sol.safe_return, total_return(&v, mdp.initial_dist()).unwrap());
    assert!(sol.sets.radii().iter().flatten().all(|&psi| psi == 0.0));
}

#[test]
fn bci_radius_matches_direct_construction() {
    let (mdp, data) = (model(), data());
    let options = SolveOptions {
        delta: 0.1,
        seed: 77,
        ..SolveOptions::default()
    };
    let sol = solve_from_data(&mdp, Some(&data), MethodId::Bci, None, &options).unwrap();
    let prior = DirichletPosterior::symmetric(3, 2, &[1.0; 3]).unwrap();
    let post = dirichlet_posterior(&prior, &data).unwrap();
    assert_eq!(post.alpha(0, 0), &[4.0, 3.0, 6.0]);
    let samples = sample_posterior(&post, options.posterior_samples, options.seed).unwrap();
    let direct = bci_ambiguity_set(&samples, &ConfidenceBudget::new(0.1, 3, 2).unwrap()).unwrap();
    assert_eq!(sol.sets, direct);

    let supplied = solve_from_data(&mdp, Some(&data), MethodId::Bci, Some(&samples), &options).unwrap();
    assert_eq!(supplied, sol);
}

#[test]
fn repeated_solves_are_identical() {
    let (mdp, data) = (model(), data());
    let options = SolveOptions::default();
    for method in [MethodId::Hoeffding, MethodId::HoeffdingMonotone, MethodId::Bci, MethodId::Rsvf] {
        let a = solve_from_data(&mdp, Some(&data), method, None, &options).unwrap();
        let b = solve_from_data(&mdp, Some(&data), method, None, &options).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

#[test]
fn robust_estimates_sit_below_the_mean_model() {
    let (mdp, data) = (model(), data());
    let options = SolveOptions::default();
    let mean = solve_from_data(&mdp, Some(&data), MethodId::MeanTransition, None, &options).unwrap();
    for method in [MethodId::Hoeffding, MethodId::HoeffdingMonotone, MethodId::Bci] {
        let sol = solve_from_data(&mdp, Some(&data), method, None, &options).unwrap();
        assert!(sol.safe_return <= mean.safe_return + 1e-9, "{method}");
    }
    let rsvf = solve_from_data(&mdp, Some(&data), MethodId::Rsvf, None, &options).unwrap();
    let diagnostics = rsvf.rsvf.unwrap();
    assert!(diagnostics.termination.iter().flatten().all(|&ok| ok));
}

#[test]
fn missing_inputs_are_rejected() {
    let mdp = model();
    let options = SolveOptions::default();
    for method in [MethodId::Hoeffding, MethodId::Bci, MethodId::Rsvf] {
        assert!(solve_from_data(&mdp, None, method, None, &options).is_err());
    }
    let wrong = Dataset::new(2, 2);
    assert!(solve_from_data(&mdp, Some(&wrong), MethodId::Hoeffding, None, &options).is_err());
}
