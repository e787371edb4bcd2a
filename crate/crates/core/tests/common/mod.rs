//! Fixtures and independent oracles shared by the integration tests and the
//! acceptance harness.
#![allow(dead_code)]

use num_complex::Complex64;
use poreflow::geometry::{build_geometry, GeometryConfig};
use poreflow::mesh::{triangulate, Mesh, RefinementLadder};
use poreflow::stokes::{solve_stokes, FlowBcs, FlowField};
use poreflow::transport::{assemble_transport, TransportSolver};

/// Mesh and Stokes flow for a geometry.
pub fn setup(geometry: &GeometryConfig, h: f64) -> (Mesh, FlowField) {
    let mesh = triangulate(&build_geometry(geometry).unwrap(), h).unwrap();
    let flow = solve_stokes(&mesh, &FlowBcs::default()).unwrap();
    (mesh, flow)
}

pub fn default_setup(h: f64) -> (Mesh, FlowField) {
    setup(&GeometryConfig::default(), h)
}

pub fn solver(mesh: &Mesh, flow: &FlowField, pe: f64, tau: f64) -> TransportSolver {
    TransportSolver::new(assemble_transport(mesh, flow, pe).unwrap(), tau).unwrap()
}

pub fn ladder(h: f64, refinements: usize) -> RefinementLadder {
    RefinementLadder::build(&build_geometry(&GeometryConfig::default()).unwrap(), h, refinements).unwrap()
}

/// Inverse Laplace transform by the fixed Talbot contour with `m` nodes.
pub fn talbot(f: impl Fn(Complex64) -> Complex64, t: f64, m: usize) -> f64 {
    let r = 2.0 * m as f64 / (5.0 * t);
    let mut sum = 0.5 * (f(Complex64::new(r, 0.0)) * (r * t).exp()).re;
    for k in 1..m {
        let th = k as f64 * std::f64::consts::PI / m as f64;
        let cot = th.cos() / th.sin();
        let s = Complex64::new(r * th * cot, r * th);
        let sigma = th + (th * cot - 1.0) * cot;
        sum += ((s * t).exp() * f(s) * Complex64::new(1.0, sigma)).re;
    }
    r / m as f64 * sum
}

/// Outlet value of `c_t + c_x = c_xx / pe` on `(0, length)` with `c(0) = 1`,
/// `c_x(length) = 0` and zero initial data, through its Laplace transform.
pub fn outlet_1d(pe: f64, length: f64, t: f64) -> f64 {
    let d = 1.0 / pe;
    let transform = |s: Complex64| {
        let root = (1.0 + 4.0 * d * s).sqrt();
        let r1 = (1.0 + root) / (2.0 * d);
        let r2 = (1.0 - root) / (2.0 * d);
        let q = r2 / r1;
        (r2 * length).exp() * (1.0 - q) / (s * (1.0 - q * ((r2 - r1) * length).exp()))
    };
    talbot(transform, t, 32)
}

/// Cheap analytic stand-in for the transport model: a smooth front whose
/// height and late-time slope depend on both rates.
pub struct ToyModel {
    pub tau: f64,
    pub n_steps: usize,
}

impl poreflow::identification::BreakthroughModel for ToyModel {
    fn breakthrough(&self, da_a: f64, da_d: f64) -> poreflow::Result<poreflow::transport::BreakthroughCurve> {
        let times: Vec<f64> = (1..=self.n_steps).map(|n| n as f64 * self.tau).collect();
        let values = times
            .iter()
            .map(|&t| {
                let front = 1.0 / (1.0 + (-(t - 15.0) / 2.0).exp());
                front * (1.0 - 20.0 * da_a * (-da_d * (t - 10.0).max(0.0)).exp())
            })
            .collect();
        Ok(poreflow::transport::BreakthroughCurve { times, values })
    }
}
