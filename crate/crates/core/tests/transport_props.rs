mod common;

use std::sync::OnceLock;

use common::{default_setup, solver};
use poreflow::mesh::Mesh;
use poreflow::stokes::FlowField;
use poreflow::transport::{surface_step, BreakthroughCurve, Isotherm, TransportSolver};
use proptest::prelude::*;

fn setup() -> &'static (Mesh, FlowField) {
    static SETUP: OnceLock<(Mesh, FlowField)> = OnceLock::new();
    SETUP.get_or_init(|| default_setup(0.1))
}

fn base_solver(tau: f64) -> TransportSolver {
    let (mesh, flow) = setup();
    solver(mesh, flow, 10.0, tau)
}

const HENRY: Isotherm = Isotherm::Henry { da_a: 0.005, da_d: 0.05 };

/// Relax the surface ODE with the bulk held at `c`.
fn clamped_equilibrium(iso: &Isotherm, c: f64) -> f64 {
    let mut m = 0.0;
    for _ in 0..200_000 {
        let next = surface_step(iso, 0.1, m, c, c).unwrap();
        if (next - m).abs() < 1e-15 {
            return next;
        }
        m = next;
    }
    m
}

#[test]
fn henry_equilibrium_under_clamped_bulk() {
    for (da_a, da_d, c) in [(0.005, 0.05, 1.0), (0.01, 0.02, 0.7), (0.002, 0.1, 0.3)] {
        let m = clamped_equilibrium(&Isotherm::Henry { da_a, da_d }, c);
        let exact = da_a / da_d * c;
        assert!((m - exact).abs() < 1e-8, "{m} vs {exact}");
    }
}

#[test]
fn langmuir_equilibrium_under_clamped_bulk() {
    for (da_a, da_d, cap) in [(0.005, 0.05, 1.0), (0.005, 0.05, 0.05), (0.02, 0.01, 0.5)] {
        let m = clamped_equilibrium(&Isotherm::Langmuir { da_a, da_d, capacity: cap }, 1.0);
        let exact = da_a * cap / (da_a + da_d * cap);
        assert!((m - exact).abs() < 1e-8, "{m} vs {exact}");
    }
}

#[test]
fn langmuir_surface_stays_within_capacity() {
    let s = base_solver(0.1);
    let iso = Isotherm::Langmuir { da_a: 0.05, da_d: 0.01, capacity: 0.05 };
    let stepper = s.stepper(iso).unwrap();
    let mut state = s.ops.initial_state(1.0);
    for _ in 0..400 {
        state = stepper.step(&state).unwrap();
        for &m in &state.m {
            assert!((-1e-12..=0.05 + 1e-12).contains(&m), "m = {m}");
        }
    }
    // Strong adsorption with low capacity saturates somewhere.
    assert!(state.m.iter().cloned().fold(0.0, f64::max) > 0.04);
}

#[test]
fn large_capacity_recovers_henry() {
    let s = base_solver(0.1);
    let henry = s.breakthrough(HENRY, 400).unwrap();
    let lang = s
        .breakthrough(Isotherm::Langmuir { da_a: 0.005, da_d: 0.05, capacity: 1e6 }, 400)
        .unwrap();
    assert!(henry.max_difference(&lang) < 1e-6);
}

fn observed_order(iso: Isotherm) -> f64 {
    let curves: Vec<BreakthroughCurve> = [(0.2, 200), (0.1, 400), (0.05, 800)]
        .iter()
        .map(|&(tau, n)| base_solver(tau).breakthrough(iso, n).unwrap())
        .collect();
    let diff = |a: &BreakthroughCurve, b: &BreakthroughCurve| {
        a.times
            .iter()
            .map(|&t| (a.value_at(t) - b.value_at(t)).abs())
            .fold(0.0, f64::max)
    };
    (diff(&curves[0], &curves[1]) / diff(&curves[1], &curves[2])).log2()
}

#[test]
fn crank_nicolson_is_second_order() {
    let p = observed_order(HENRY);
    assert!((1.7..=2.3).contains(&p), "Henry order {p}");
    let p = observed_order(Isotherm::Langmuir { da_a: 0.005, da_d: 0.05, capacity: 0.2 });
    assert!((1.7..=2.3).contains(&p), "Langmuir order {p}");
}

#[test]
fn sensitivity_directions() {
    let s = base_solver(0.1);
    let at = |iso: Isotherm| {
        let c = s.breakthrough(iso, 400).unwrap();
        [10.0, 20.0, 40.0].map(|t| c.value_at(t))
    };
    let by_da_a: Vec<_> = [0.002, 0.005, 0.008].map(|a| at(HENRY.with_rates(a, 0.05))).into();
    for w in by_da_a.windows(2) {
        for k in 0..3 {
            assert!(w[1][k] <= w[0][k] + 1e-12, "{w:?}");
        }
    }
    let by_da_d: Vec<_> = [0.02, 0.05, 0.08].map(|d| at(HENRY.with_rates(0.005, d))).into();
    for w in by_da_d.windows(2) {
        assert!(w[1][2] >= w[0][2] - 1e-12, "{w:?}");
    }
    let deposit: Vec<f64> = [0.05, 0.1, 0.2, 1.0]
        .map(|cap| 1.0 - at(Isotherm::Langmuir { da_a: 0.005, da_d: 0.05, capacity: cap })[2])
        .into();
    for w in deposit.windows(2) {
        assert!(w[1] > w[0], "{deposit:?}");
    }
}

proptest! {
    #[test]
    fn langmuir_step_stays_in_bounds(
        tau in 0.01f64..0.5,
        da_a in 0.0f64..0.05,
        da_d in 0.0f64..0.5,
        cap in 0.1f64..10.0,
        c_old in 0.0f64..1.0,
        c_new in 0.0f64..1.0,
        frac in 0.0f64..1.0,
    ) {
        let iso = Isotherm::Langmuir { da_a, da_d, capacity: cap };
        let m = frac * cap;
        let next = surface_step(&iso, tau, m, c_old, c_new).unwrap();
        prop_assert!(next >= -1e-12 && next <= cap + 1e-12);
    }

    #[test]
    fn henry_step_is_linear_in_data(
        tau in 0.01f64..0.5,
        m in 0.0f64..1.0,
        c in 0.0f64..1.0,
        scale in 0.1f64..10.0,
    ) {
        let iso = Isotherm::Henry { da_a: 0.005, da_d: 0.05 };
        let a = surface_step(&iso, tau, m, c, c).unwrap();
        let b = surface_step(&iso, tau, scale * m, scale * c, scale * c).unwrap();
        prop_assert!((b - scale * a).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}
