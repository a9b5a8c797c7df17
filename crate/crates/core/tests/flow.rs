mod common;

use common::*;
use flexform_core::integrator::{integrate, EventKind};
use flexform_core::oracle::desired_realization;
use flexform_core::{
    ClosedLoop, IntegrationOptions, LeaderSpec, PerturbationEvent, Potential, PotentialFamily, Realization, StepControl,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const Q: PotentialFamily = PotentialFamily::Quadratic;

fn nudged(base: &Realization, seed: u64, size: f64) -> Realization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = base.clone();
    p.as_mut_slice().iter_mut().for_each(|x| *x += rng.random_range(-size..size));
    p
}

fn run(system: &ClosedLoop<'_, PotentialFamily>, p0: &Realization, t_end: f64, step: StepControl) -> Realization {
    let opts = IntegrationOptions { t_end, step, ..IntegrationOptions::default() };
    integrate(system, p0, &opts).unwrap().final_state().clone()
}

fn gap(a: &Realization, b: &Realization) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn rk4_error_falls_with_the_fourth_power_of_the_step() {
    let g = triangle();
    let sys = ClosedLoop::gradient(&g, &Q);
    let p0 = nudged(&desired_realization(&g).unwrap(), 1, 0.4);
    let reference = run(&sys, &p0, 0.2, StepControl::Fixed { dt: 1e-5 });
    let errs: Vec<f64> =
        [4e-3, 2e-3, 1e-3].iter().map(|&dt| gap(&run(&sys, &p0, 0.2, StepControl::Fixed { dt }), &reference)).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((3.5..4.6).contains(&order), "observed order {order} from {errs:?}");
    }
}

#[test]
fn adaptive_and_fixed_steppers_agree() {
    let g = tetrahedron();
    let sys = ClosedLoop::gradient(&g, &PotentialFamily::Rational);
    let p0 = nudged(&desired_realization(&g).unwrap(), 2, 0.5);
    let a = run(&sys, &p0, 1.0, StepControl::Adaptive { rtol: 1e-11, atol: 1e-13, initial_dt: 1e-3 });
    let f = run(&sys, &p0, 1.0, StepControl::Fixed { dt: 1e-4 });
    assert!(gap(&a, &f) < 1e-8, "{}", gap(&a, &f));
}

#[test]
fn gradient_flow_keeps_the_centroid_and_lowers_the_energy() {
    for g in [triangle(), tetrahedron()] {
        let d = g.dimension();
        let sys = ClosedLoop::gradient(&g, &Q);
        let p0 = nudged(&desired_realization(&g).unwrap(), 3, 1.5);
        let opts = IntegrationOptions { t_end: 3.0, ..IntegrationOptions::default() };
        let tr = integrate(&sys, &p0, &opts).unwrap();
        assert!(tr.audit.passed());
        let c0 = p0.centroid(0..g.num_nodes());
        let c1 = tr.final_state().centroid(0..g.num_nodes());
        for c in 0..d {
            assert!((c0[c] - c1[c]).abs() < 1e-12);
        }
        // Energy recomputed from the recorded squared-distance errors.
        let energy: Vec<f64> = tr.errors.iter().map(|e| e.iter().map(|x| 0.25 * x * x).sum()).collect();
        for w in energy.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
        }
        assert!(tr.final_errors().iter().all(|e| e.abs() < 1e-6));
    }
}

#[test]
fn perturbations_are_applied_once_at_their_time() {
    let g = triangle();
    let sys = ClosedLoop::gradient(&g, &Q);
    let p0 = desired_realization(&g).unwrap();
    let kick = PerturbationEvent::new(0.5, 3, vec![0.0, 0.25]);
    let opts = IntegrationOptions { t_end: 1.0, perturbations: vec![kick], ..IntegrationOptions::default() };
    let tr = integrate(&sys, &p0, &opts).unwrap();
    let hits: Vec<_> = tr.events_of(EventKind::PerturbationApplied).collect();
    assert_eq!(hits.len(), 1);
    assert!((hits[0].time - 0.5).abs() < 1e-12);
    assert_eq!(hits[0].agent, Some(3));
    assert!((hits[0].value - 0.25).abs() < 1e-15);
    let k = tr.times.iter().position(|&t| t > 0.5).unwrap();
    assert!(tr.grad_norms[k] > 1e-3, "the kick must leave the desired shape");
}

#[test]
fn target_mode_brings_the_flex_agent_to_its_target() {
    for (g, target) in [(triangle(), vec![10.0, 10.0]), (tetrahedron(), vec![10.0, -10.0, 10.0])] {
        let leader = LeaderSpec::Target { gain: 5.0, target: target.clone() };
        let sys = ClosedLoop::with_leader(&g, &Q, leader).unwrap();
        let p0 = desired_realization(&g).unwrap();
        let opts = IntegrationOptions { t_end: 30.0, ..IntegrationOptions::default() };
        let tr = integrate(&sys, &p0, &opts).unwrap();
        assert!(tr.audit.passed());
        let flex = tr.final_state().agent(g.flex_node());
        assert!(dist(flex, &target) < 1e-3);
        assert!(tr.final_errors().iter().all(|e| e.abs() < 1e-6));
        assert_eq!(tr.events_of(EventKind::TargetReached).count(), 1);
        // Sum of velocities equals the leader input: the rigid part follows.
        let mut u = vec![0.0; p0.as_slice().len()];
        sys.velocity_into(0.0, p0.as_slice(), &mut u).unwrap();
        let d = g.dimension();
        let flex0 = p0.agent(g.flex_node());
        for c in 0..d {
            let s: f64 = u.iter().skip(c).step_by(d).sum();
            assert!((s - 5.0 * (target[c] - flex0[c])).abs() < 1e-10);
        }
    }
}

#[test]
fn custom_families_integrate_too() {
    let g = triangle();
    let fam = QuadQuartic;
    assert!(fam.rho(0.0, 4.0) > 0.0);
    let sys = ClosedLoop::gradient(&g, &fam);
    let p0 = nudged(&desired_realization(&g).unwrap(), 4, 0.2);
    let opts =
        IntegrationOptions { t_end: 0.5, step: StepControl::Fixed { dt: 1e-5 }, ..IntegrationOptions::default() };
    let tr = integrate(&sys, &p0, &opts).unwrap();
    assert!(tr.audit.passed());
    assert!(tr.final_errors().iter().all(|e| e.abs() < 1e-6));
}
