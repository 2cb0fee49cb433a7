use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqg_core::dynamics::{field_from_fn, make_steady, EvolutionState, Mode, QgSystem, SteadyState, StepperConfig};
use sqg_core::linear::random_real_field;
use sqg_core::spectral::{norm, GridSpec, Norm, SpectralField};

fn random(g: GridSpec, k: usize, seed: u64, scale: f64) -> SpectralField {
    random_real_field(g, k, &mut ChaCha8Rng::seed_from_u64(seed)).scaled(scale)
}

#[test]
fn full_and_perturbation_forms_trace_the_same_solution() {
    let g = GridSpec::new(32).unwrap();
    let steady = Arc::new(SteadyState::shear(g, 2, 3.0).unwrap());
    let sys = QgSystem::new(steady.clone());
    let theta = random(g, 6, 5, 0.3);
    let mut full = theta.clone();
    full.axpy(1.0, steady.theta0()).unwrap();
    let mut a = EvolutionState::new(full, Mode::Full).unwrap();
    let mut b = EvolutionState::new(theta, Mode::Perturbation).unwrap();
    for _ in 0..200 {
        a = sys.step(&a, 5e-3).unwrap();
        b = sys.step(&b, 5e-3).unwrap();
    }
    let diff = sys.full_field(&a).sub(&sys.full_field(&b)).unwrap();
    assert!(norm(&diff, Norm::Linf) < 1e-10 * norm(&sys.full_field(&a), Norm::Linf), "{:e}", norm(&diff, Norm::Linf));
}

#[test]
fn energy_flux_matches_time_derivative_of_l2() {
    let g = GridSpec::new(32).unwrap();
    let sys = QgSystem::new(Arc::new(SteadyState::shear(g, 1, 2.0).unwrap()));
    let s = EvolutionState::new(random(g, 5, 8, 0.5), Mode::Perturbation).unwrap();
    let h = 1e-4;
    let mid = sys.step(&s, h).unwrap();
    let end = sys.step(&mid, h).unwrap();
    let e = |st: &EvolutionState| norm(&st.theta, Norm::L2).powi(2);
    let fd = (e(&end) - e(&s)) / (2.0 * h);
    let flux = sys.observe(&mid).unwrap().energy_flux;
    assert!((fd - flux).abs() < 1e-6 * flux.abs().max(1.0), "{fd} {flux}");
}

#[test]
fn custom_steady_state_stays_put() {
    let g = GridSpec::new(32).unwrap();
    let theta0 = field_from_fn(g, |x, y| (x + y).sin() + 0.4 * (2.0 * x - y).cos() - 0.2 * (3.0 * y).sin()).unwrap();
    let sys = QgSystem::new(Arc::new(make_steady(theta0.clone()).unwrap()));
    let (last, obs) = sys
        .evolve_recorded(EvolutionState::new(theta0.clone(), Mode::Full).unwrap(), 2.0, &StepperConfig::default())
        .unwrap();
    let drift = norm(&last.theta.sub(&theta0).unwrap(), Norm::Linf);
    assert!(drift < 1e-8, "{drift:e}");
    assert!(obs.iter().all(|o| (o.l2 - obs[0].l2).abs() < 1e-8));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Without forcing the L² norm can only decay.
    #[test]
    fn unforced_energy_is_nonincreasing(seed in any::<u64>(), amp in 0.1f64..3.0) {
        let g = GridSpec::new(16).unwrap();
        let sys = QgSystem::unforced(g);
        let cfg = StepperConfig { observe_every: 0.05, ..StepperConfig::default() };
        let s = EvolutionState::new(random(g, 5, seed, amp), Mode::Full).unwrap();
        let (_, obs) = sys.evolve_recorded(s, 0.5, &cfg).unwrap();
        for w in obs.windows(2) {
            prop_assert!(w[1].l2 <= w[0].l2 * (1.0 + 1e-12));
            prop_assert!(w[0].energy_flux <= 1e-12 * w[0].l2 * w[0].l2);
        }
    }

    /// The maximum principle: ‖Θ‖∞ never grows without forcing.
    #[test]
    fn unforced_sup_norm_is_nonincreasing(seed in any::<u64>()) {
        let g = GridSpec::new(32).unwrap();
        let sys = QgSystem::unforced(g);
        let cfg = StepperConfig { observe_every: 0.1, ..StepperConfig::default() };
        let s = EvolutionState::new(random(g, 3, seed, 1.0), Mode::Full).unwrap();
        let (_, obs) = sys.evolve_recorded(s, 1.0, &cfg).unwrap();
        // a small allowance for the discrete, truncated setting
        prop_assert!(obs.iter().all(|o| o.linf <= obs[0].linf * 1.01));
    }
}
