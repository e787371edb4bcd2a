//! Dimensionless convection–diffusion of a solute with adsorption and
//! desorption on the obstacle surfaces.
//!
//! Space: linear Lagrange elements; the convective term is used in the
//! integrated-by-parts form `-(c u, grad s) + (u.n c, s)_out`. Time:
//! Crank–Nicolson for both the bulk concentration `c` and the surface
//! concentration `m`. The surface equation uses a lumped surface mass, so
//! `m` updates node by node; the bulk loses exactly what the surface gains.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{p2_edge_values, TriGeom, EDGE_GAUSS3, TRI_QUAD4};
use crate::geometry::BoundaryTag;
use crate::mesh::Mesh;
use crate::sparse::{CscMatrix, LuPattern, SparseLu, Triplets};
use crate::stokes::FlowField;

/// Picard tolerance on the combined max-norm update (Langmuir).
pub const PICARD_TOLERANCE: f64 = 1e-10;
pub const PICARD_MAX_ITERATIONS: usize = 50;
/// Cell Peclet number above which plain Galerkin is reported as risky.
pub const MESH_PECLET_LIMIT: f64 = 2.0;

/// Surface kinetics `dm/dt = f(c, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Isotherm {
    /// `f = Da_a c - Da_d m`
    Henry { da_a: f64, da_d: f64 },
    /// `f = Da_a c (1 - m / M) - Da_d m`
    Langmuir { da_a: f64, da_d: f64, capacity: f64 },
}

impl Default for Isotherm {
    fn default() -> Self {
        Isotherm::Henry {
            da_a: 0.005,
            da_d: 0.05,
        }
    }
}

impl Isotherm {
    pub fn da_a(&self) -> f64 {
        match *self {
            Isotherm::Henry { da_a, .. } | Isotherm::Langmuir { da_a, .. } => da_a,
        }
    }

    pub fn da_d(&self) -> f64 {
        match *self {
            Isotherm::Henry { da_d, .. } | Isotherm::Langmuir { da_d, .. } => da_d,
        }
    }

    pub fn capacity(&self) -> Option<f64> {
        match *self {
            Isotherm::Henry { .. } => None,
            Isotherm::Langmuir { capacity, .. } => Some(capacity),
        }
    }

    /// Same kinetics law with the two rates replaced.
    pub fn with_rates(&self, da_a: f64, da_d: f64) -> Self {
        match *self {
            Isotherm::Henry { .. } => Isotherm::Henry { da_a, da_d },
            Isotherm::Langmuir { capacity, .. } => Isotherm::Langmuir {
                da_a,
                da_d,
                capacity,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, d) = (self.da_a(), self.da_d());
        if !(a.is_finite() && d.is_finite() && a >= 0.0 && d >= 0.0) {
            return Err(Error::Config(format!(
                "Damkoehler numbers must be finite and non-negative (da_a {a}, da_d {d})"
            )));
        }
        if let Some(m) = self.capacity() {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::Config(format!("Langmuir capacity must be positive, got {m}")));
            }
        }
        Ok(())
    }

    pub fn rate(&self, c: f64, m: f64) -> f64 {
        match *self {
            Isotherm::Henry { da_a, da_d } => da_a * c - da_d * m,
            Isotherm::Langmuir {
                da_a,
                da_d,
                capacity,
            } => da_a * c * (1.0 - m / capacity) - da_d * m,
        }
    }

    /// Stationary surface concentration for a fixed bulk value `c`.
    pub fn equilibrium(&self, c: f64) -> f64 {
        match *self {
            Isotherm::Henry { da_a, da_d } => da_a * c / da_d,
            Isotherm::Langmuir {
                da_a,
                da_d,
                capacity,
            } => da_a * c * capacity / (da_a * c + da_d * capacity),
        }
    }
}

/// Dimensional scales and rates, and the dimensionless groups they define.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Nondimensionalization {
    pub length: f64,
    pub inlet_speed: f64,
    pub inlet_concentration: f64,
    pub diffusivity: f64,
    pub k_a: f64,
    pub k_d: f64,
    pub m_infty: f64,
}

impl Nondimensionalization {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.length,
            self.inlet_speed,
            self.inlet_concentration,
            self.diffusivity,
            self.k_a,
            self.k_d,
            self.m_infty,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config("all dimensional scales must be positive".into()))
        }
    }

    pub fn pe(&self) -> f64 {
        self.length * self.inlet_speed / self.diffusivity
    }

    pub fn da_a(&self) -> f64 {
        self.k_a / self.inlet_speed
    }

    pub fn da_d(&self) -> f64 {
        self.k_d * self.length / self.inlet_speed
    }

    pub fn capacity(&self) -> f64 {
        self.m_infty / (self.length * self.inlet_concentration)
    }

    /// Scale of the surface concentration.
    pub fn m_bar(&self) -> f64 {
        self.length * self.inlet_concentration
    }

    pub fn henry(&self) -> Isotherm {
        Isotherm::Henry {
            da_a: self.da_a(),
            da_d: self.da_d(),
        }
    }

    pub fn langmuir(&self) -> Isotherm {
        Isotherm::Langmuir {
            da_a: self.da_a(),
            da_d: self.da_d(),
            capacity: self.capacity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportParams {
    pub pe: f64,
    pub isotherm: Isotherm,
    pub tau: f64,
    pub t_end: f64,
}

impl Default for TransportParams {
    fn default() -> Self {
        Self {
            pe: 10.0,
            isotherm: Isotherm::default(),
            tau: 0.1,
            t_end: 40.0,
        }
    }
}

impl TransportParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pe.is_finite() && self.pe > 0.0) {
            return Err(Error::Config(format!("Pe must be positive, got {}", self.pe)));
        }
        self.isotherm.validate()?;
        self.n_steps().map(|_| ())
    }

    /// Number of steps `T / tau`; an error unless it is a positive integer.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.tau.is_finite() && self.tau > 0.0 && self.t_end.is_finite() && self.tau <= self.t_end) {
            return Err(Error::Config(format!(
                "need 0 < tau <= t_end (tau {}, t_end {})",
                self.tau, self.t_end
            )));
        }
        let ratio = self.t_end / self.tau;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "tau {} does not divide t_end {}",
                self.tau, self.t_end
            )));
        }
        Ok(n as usize)
    }
}

/// Bulk and surface concentrations at time `t`. `m[k]` belongs to vertex
/// `surface_nodes[k]` of the operators that produced the state.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportState {
    pub t: f64,
    pub c: Vec<f64>,
    pub m: Vec<f64>,
}

/// Average outlet concentration at the step times `tau, 2 tau, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakthroughCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl BreakthroughCurve {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tau(&self) -> f64 {
        self.times.first().copied().unwrap_or(0.0)
    }

    /// Value at the step closest to `t`.
    pub fn value_at(&self, t: f64) -> f64 {
        let tau = self.tau();
        let k = ((t / tau).round() as usize).clamp(1, self.len());
        self.values[k - 1]
    }

    pub fn max_difference(&self, other: &BreakthroughCurve) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,c_out\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            let _ = writeln!(s, "{t:.16e},{v:.16e}");
        }
        s
    }
}

/// Discrete operators of the transport problem on one mesh and flow field.
#[derive(Debug, Clone)]
pub struct TransportOperators {
    pub n: usize,
    pub pe: f64,
    /// Consistent mass matrix.
    pub mass: CscMatrix,
    /// `-(phi_j u, grad phi_i)`
    pub convection: CscMatrix,
    /// `(1/Pe)(grad phi_j, grad phi_i)`
    pub diffusion: CscMatrix,
    /// `(u.n phi_j, phi_i)` on OUTLET.
    pub outlet: CscMatrix,
    pub surface_nodes: Vec<usize>,
    /// Lumped surface mass: half the length of the adjacent SURFACE facets.
    pub surface_weights: Vec<f64>,
    pub inlet_nodes: Vec<usize>,
    outlet_facets: Vec<([usize; 2], f64)>,
    pub outlet_length: f64,
    /// Largest cell Peclet number `|u| h Pe / 2`.
    pub mesh_peclet: f64,
    pub mesh_checksum: String,
}

pub fn assemble_transport(mesh: &Mesh, flow: &FlowField, pe: f64) -> Result<TransportOperators> {
    flow.check_mesh(mesh)?;
    if !(pe.is_finite() && pe > 0.0) {
        return Err(Error::Config(format!("Pe must be positive, got {pe}")));
    }
    if !mesh.has_tag(BoundaryTag::Outlet) {
        return Err(Error::Config("mesh has no OUTLET facets".into()));
    }
    let n = mesh.n_vertices();
    let nt = mesh.n_triangles();
    let mut mass = Triplets::with_capacity(n, n, 9 * nt);
    let mut conv = Triplets::with_capacity(n, n, 9 * nt);
    let mut diff = Triplets::with_capacity(n, n, 9 * nt);
    let mut mesh_peclet = 0.0f64;
    for t in 0..nt {
        let g = TriGeom::new(mesh, t);
        let tri = mesh.triangles[t];
        let mut ce = [[0.0; 3]; 3];
        for (l, w) in TRI_QUAD4.iter() {
            let u = flow.velocity_at(mesh, t, *l);
            let wa = w * g.area;
            for i in 0..3 {
                let ug = u[0] * g.grad[i][0] + u[1] * g.grad[i][1];
                for j in 0..3 {
                    ce[i][j] -= wa * l[j] * ug;
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let m = g.area / 12.0 * if i == j { 2.0 } else { 1.0 };
                let k = g.area * (g.grad[i][0] * g.grad[j][0] + g.grad[i][1] * g.grad[j][1]) / pe;
                mass.push(tri[i], tri[j], m);
                conv.push(tri[i], tri[j], ce[i][j]);
                diff.push(tri[i], tri[j], k);
            }
        }
        let u = flow.velocity_at(mesh, t, [1.0 / 3.0; 3]);
        let h = (0..3)
            .map(|k| crate::geometry::dist(mesh.vertices[tri[k]], mesh.vertices[tri[(k + 1) % 3]]))
            .fold(0.0, f64::max);
        mesh_peclet = mesh_peclet.max(u[0].hypot(u[1]) * h * pe / 2.0);
    }

    let mut outlet = Triplets::new(n, n);
    let mut outlet_facets = Vec::new();
    for f in mesh.facets_with(BoundaryTag::Outlet) {
        let len = mesh.facet_length(f);
        let normal = mesh.facet_normal(f);
        let mid = flow
            .space
            .edge_node(f.v[0], f.v[1])
            .expect("outlet facet is a mesh edge");
        let nodes = [f.v[0], f.v[1], mid];
        let mut be = [[0.0; 2]; 2];
        for (s, w) in EDGE_GAUSS3 {
            let phi2 = p2_edge_values(s);
            let un: f64 = nodes
                .iter()
                .zip(phi2)
                .map(|(&nd, p)| {
                    let v = flow.velocity_node(nd);
                    p * (v[0] * normal[0] + v[1] * normal[1])
                })
                .sum();
            let phi = [1.0 - s, s];
            for i in 0..2 {
                for j in 0..2 {
                    be[i][j] += w * len * un * phi[i] * phi[j];
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                outlet.push(f.v[i], f.v[j], be[i][j]);
            }
        }
        outlet_facets.push((f.v, len));
    }

    let surface_nodes = mesh.tagged_vertices(BoundaryTag::Surface);
    let mut weight = vec![0.0; n];
    for f in mesh.facets_with(BoundaryTag::Surface) {
        let half = 0.5 * mesh.facet_length(f);
        weight[f.v[0]] += half;
        weight[f.v[1]] += half;
    }
    let surface_weights = surface_nodes.iter().map(|&i| weight[i]).collect();

    if mesh_peclet > MESH_PECLET_LIMIT {
        log::warn!(
            "cell Peclet number {mesh_peclet:.3} exceeds {MESH_PECLET_LIMIT}; \
             the unstabilized scheme may oscillate"
        );
    }
    let outlet_length = outlet_facets.iter().map(|(_, l)| l).sum();
    Ok(TransportOperators {
        n,
        pe,
        mass: mass.into_csc(),
        convection: conv.into_csc(),
        diffusion: diff.into_csc(),
        outlet: outlet.into_csc(),
        surface_nodes,
        surface_weights,
        inlet_nodes: mesh.tagged_vertices(BoundaryTag::Inlet),
        outlet_facets,
        outlet_length,
        mesh_peclet,
        mesh_checksum: mesh.checksum(),
    })
}

impl TransportOperators {
    /// `d(c, s)` as a matrix: convection + diffusion + outlet term.
    pub fn transport_operator(&self) -> CscMatrix {
        self.convection.add(1.0, &self.diffusion, 1.0).add(1.0, &self.outlet, 1.0)
    }

    pub fn outlet_average(&self, c: &[f64]) -> f64 {
        self.outlet_facets
            .iter()
            .map(|(v, len)| 0.5 * len * (c[v[0]] + c[v[1]]))
            .sum::<f64>()
            / self.outlet_length
    }

    pub fn bulk_mass(&self, c: &[f64]) -> f64 {
        let mut mc = vec![0.0; self.n];
        self.mass.mul_vec(c, &mut mc);
        mc.iter().sum()
    }

    pub fn surface_mass(&self, m: &[f64]) -> f64 {
        self.surface_weights.iter().zip(m).map(|(w, m)| w * m).sum()
    }

    /// Zero data in the domain and on the surface; INLET nodes carry the
    /// boundary value, so the inflow is a sharp step at `t = 0` rather than
    /// a ramp over the first step (which would cost one order in `tau`).
    pub fn initial_state(&self, inlet_value: f64) -> TransportState {
        let mut c = vec![0.0; self.n];
        for &i in &self.inlet_nodes {
            c[i] = inlet_value;
        }
        TransportState {
            t: 0.0,
            c,
            m: vec![0.0; self.surface_nodes.len()],
        }
    }
}

/// Plain average of a linear-element field over the OUTLET facets.
pub fn compute_outlet_avg(mesh: &Mesh, c: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for f in mesh.facets_with(BoundaryTag::Outlet) {
        let len = mesh.facet_length(f);
        num += 0.5 * len * (c[f.v[0]] + c[f.v[1]]);
        den += len;
    }
    num / den
}

/// Time-step dependent matrices shared by all runs with the same `Pe` and
/// `tau`. Only the surface diagonal changes between parameter values, so
/// the symbolic factorization is computed once.
#[derive(Debug, Clone)]
pub struct TransportSolver {
    pub ops: TransportOperators,
    pub tau: f64,
    /// `d(c, s)` matrix.
    pub operator: CscMatrix,
    /// `M/tau + A/2`, with a structural diagonal.
    lhs_base: CscMatrix,
    /// `M/tau - A/2`
    rhs_base: CscMatrix,
    diag_pos: Vec<usize>,
    inlet_row_pos: Vec<usize>,
    outlet_colsum: Vec<f64>,
    pattern: LuPattern,
}

impl TransportSolver {
    pub fn new(ops: TransportOperators, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {tau}")));
        }
        let n = ops.n;
        let a = ops.transport_operator();
        let mut eye = Triplets::new(n, n);
        for i in 0..n {
            eye.push(i, i, 0.0);
        }
        let lhs_base = ops
            .mass
            .add(1.0 / tau, &a, 0.5)
            .add(1.0, &eye.to_csc(), 0.0);
        let rhs_base = ops.mass.add(1.0 / tau, &a, -0.5);
        let diag_pos: Vec<usize> = (0..n).map(|i| lhs_base.position(i, i).unwrap()).collect();
        let mut is_inlet = vec![false; n];
        for &i in &ops.inlet_nodes {
            is_inlet[i] = true;
        }
        let inlet_row_pos = (0..lhs_base.nnz())
            .filter(|&k| is_inlet[lhs_base.row_idx[k]])
            .collect();
        let mut outlet_colsum = vec![0.0; n];
        for (c, s) in outlet_colsum.iter_mut().enumerate() {
            *s = ops.outlet.values[ops.outlet.col_ptr[c]..ops.outlet.col_ptr[c + 1]]
                .iter()
                .sum();
        }
        let pattern = LuPattern::analyze(&lhs_base)?;
        Ok(Self {
            ops,
            tau,
            operator: a,
            lhs_base,
            rhs_base,
            diag_pos,
            inlet_row_pos,
            outlet_colsum,
            pattern,
        })
    }

    /// Factor the Crank–Nicolson matrix for one isotherm.
    pub fn stepper(&self, isotherm: Isotherm) -> Result<CnStepper<'_>> {
        isotherm.validate()?;
        let beta = 1.0 + 0.5 * self.tau * isotherm.da_d();
        let alpha = 0.5 * isotherm.da_a() / beta;
        let mut lhs = self.lhs_base.clone();
        for (&i, w) in self.ops.surface_nodes.iter().zip(&self.ops.surface_weights) {
            lhs.values[self.diag_pos[i]] += alpha * w;
        }
        for &k in &self.inlet_row_pos {
            lhs.values[k] = 0.0;
        }
        for &i in &self.ops.inlet_nodes {
            lhs.values[self.diag_pos[i]] = 1.0;
        }
        let lu = self.pattern.factor(&lhs)?;
        Ok(CnStepper {
            solver: self,
            isotherm,
            beta,
            alpha,
            lu,
            inlet_value: 1.0,
        })
    }

    /// Integrate `n_steps` steps from zero initial data.
    pub fn run(&self, isotherm: Isotherm, n_steps: usize, opts: &RunOptions) -> Result<TransportRun> {
        let mut stepper = self.stepper(isotherm)?;
        stepper.inlet_value = opts.inlet_value;
        let mut state = self.ops.initial_state(opts.inlet_value);
        let snap_steps: Vec<usize> = opts
            .snapshot_times
            .iter()
            .map(|t| ((t / self.tau).round().max(0.0) as usize).min(n_steps))
            .collect();
        let mut snapshots = Vec::new();
        let take = |step: usize, s: &TransportState, out: &mut Vec<Snapshot>| {
            for (k, &want) in snap_steps.iter().enumerate() {
                if want == step {
                    out.push(Snapshot {
                        requested: opts.snapshot_times[k],
                        step,
                        t: s.t,
                        c: s.c.clone(),
                    });
                }
            }
        };
        take(0, &state, &mut snapshots);
        let mut times = Vec::with_capacity(n_steps);
        let mut values = Vec::with_capacity(n_steps);
        let mut balance = opts.mass_balance.then(|| MassBalanceReport::start(&self.ops, &state));
        for step in 1..=n_steps {
            let next = stepper.step_with_index(&state, step)?;
            if let Some(report) = balance.as_mut() {
                report.record(self, &state, &next);
            }
            state = next;
            times.push(state.t);
            values.push(self.ops.outlet_average(&state.c));
            take(step, &state, &mut snapshots);
        }
        snapshots.sort_by_key(|s| s.step);
        Ok(TransportRun {
            curve: BreakthroughCurve { times, values },
            snapshots,
            final_state: state,
            balance,
        })
    }

    /// Breakthrough curve only.
    pub fn breakthrough(&self, isotherm: Isotherm, n_steps: usize) -> Result<BreakthroughCurve> {
        Ok(self.run(isotherm, n_steps, &RunOptions::default())?.curve)
    }

    /// Row sums of the unconstrained step equations on the inlet rows: the
    /// discrete inflow rate through INLET over one step.
    fn inlet_flux(&self, before: &TransportState, after: &TransportState) -> f64 {
        let n = self.ops.n;
        let tau = self.tau;
        let dc: Vec<f64> = after.c.iter().zip(&before.c).map(|(a, b)| (a - b) / tau).collect();
        let cbar: Vec<f64> = after.c.iter().zip(&before.c).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut r = vec![0.0; n];
        self.ops.mass.mul_vec(&dc, &mut r);
        self.operator.mul_vec_add(1.0, &cbar, &mut r);
        for (k, &i) in self.ops.surface_nodes.iter().enumerate() {
            r[i] += self.ops.surface_weights[k] * (after.m[k] - before.m[k]) / tau;
        }
        self.ops.inlet_nodes.iter().map(|&i| r[i]).sum()
    }
}

/// Crank–Nicolson stepper with a factored system matrix.
pub struct CnStepper<'a> {
    solver: &'a TransportSolver,
    pub isotherm: Isotherm,
    beta: f64,
    alpha: f64,
    lu: SparseLu,
    /// Dirichlet value of `c` on INLET.
    pub inlet_value: f64,
}

/// Outcome details of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub picard_iterations: usize,
    pub picard_update: f64,
}

impl CnStepper<'_> {
    pub fn step(&self, state: &TransportState) -> Result<TransportState> {
        let step = (state.t / self.solver.tau).round() as usize + 1;
        self.step_with_index(state, step)
    }

    fn step_with_index(&self, state: &TransportState, step: usize) -> Result<TransportState> {
        self.step_detailed(state, step).map(|(s, _)| s)
    }

    /// One step; `step` is the index of the new time level.
    pub fn step_detailed(&self, state: &TransportState, step: usize) -> Result<(TransportState, StepInfo)> {
        let s = self.solver;
        let ops = &s.ops;
        let tau = s.tau;
        let (da_a, da_d) = (self.isotherm.da_a(), self.isotherm.da_d());
        let beta = self.beta;

        let mut base = vec![0.0; ops.n];
        s.rhs_base.mul_vec(&state.c, &mut base);
        for (k, &i) in ops.surface_nodes.iter().enumerate() {
            base[i] += ops.surface_weights[k] * (-self.alpha * state.c[i] + da_d / beta * state.m[k]);
        }

        // Lagged Langmuir product g = (Da_a / M) cbar mbar per surface node.
        let lang = self.isotherm.capacity().map(|cap| da_a / cap);
        let mut g: Vec<f64> = match lang {
            Some(k) => ops
                .surface_nodes
                .iter()
                .zip(&state.m)
                .map(|(&i, m)| k * state.c[i] * m)
                .collect(),
            None => Vec::new(),
        };

        let solve = |g: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let mut c = base.clone();
            if !g.is_empty() {
                for (k, &i) in ops.surface_nodes.iter().enumerate() {
                    c[i] += ops.surface_weights[k] * g[k] / beta;
                }
            }
            for &i in &ops.inlet_nodes {
                c[i] = self.inlet_value;
            }
            self.lu.solve_in_place(&mut c);
            for &i in &ops.inlet_nodes {
                c[i] = self.inlet_value;
            }
            let m = ops
                .surface_nodes
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let cbar = 0.5 * (c[i] + state.c[i]);
                    let gk = if g.is_empty() { 0.0 } else { g[k] };
                    state.m[k] + tau / beta * (da_a * cbar - da_d * state.m[k] - gk)
                })
                .collect();
            (c, m)
        };

        let t = step as f64 * tau;
        let Some(kl) = lang else {
            let (c, m) = solve(&g);
            return Ok((
                TransportState { t, c, m },
                StepInfo {
                    picard_iterations: 1,
                    picard_update: 0.0,
                },
            ));
        };

        let (mut c, mut m) = solve(&g);
        let mut update = f64::INFINITY;
        for it in 2..=PICARD_MAX_ITERATIONS {
            for (k, &i) in ops.surface_nodes.iter().enumerate() {
                g[k] = kl * 0.5 * (c[i] + state.c[i]) * 0.5 * (m[k] + state.m[k]);
            }
            let (c2, m2) = solve(&g);
            update = max_diff(&c2, &c).max(max_diff(&m2, &m));
            c = c2;
            m = m2;
            if update < PICARD_TOLERANCE {
                return Ok((
                    TransportState { t, c, m },
                    StepInfo {
                        picard_iterations: it,
                        picard_update: update,
                    },
                ));
            }
        }
        Err(Error::NonConvergence {
            iterations: PICARD_MAX_ITERATIONS,
            residual: update,
        })
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Crank–Nicolson update of the surface ODE for a prescribed bulk
/// midpoint value `cbar` at a single node.
pub fn surface_step(isotherm: &Isotherm, tau: f64, m: f64, c_old: f64, c_new: f64) -> Result<f64> {
    let cbar = 0.5 * (c_old + c_new);
    let beta = 1.0 + 0.5 * tau * isotherm.da_d();
    let base = |g: f64| m + tau / beta * (isotherm.da_a() * cbar - isotherm.da_d() * m - g);
    match isotherm.capacity() {
        None => Ok(base(0.0)),
        Some(cap) => {
            let k = isotherm.da_a() / cap;
            let mut next = base(k * cbar * m);
            for _ in 0..PICARD_MAX_ITERATIONS {
                let again = base(k * cbar * 0.5 * (m + next));
                let update = (again - next).abs();
                next = again;
                if update < PICARD_TOLERANCE {
                    return Ok(next);
                }
            }
            Err(Error::NonConvergence {
                iterations: PICARD_MAX_ITERATIONS,
                residual: f64::NAN,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub inlet_value: f64,
    /// Times at which `c` is stored; matched to the nearest step.
    pub snapshot_times: Vec<f64>,
    pub mass_balance: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            inlet_value: 1.0,
            snapshot_times: Vec::new(),
            mass_balance: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub requested: f64,
    pub step: usize,
    pub t: f64,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TransportRun {
    pub curve: BreakthroughCurve,
    pub snapshots: Vec<Snapshot>,
    pub final_state: TransportState,
    pub balance: Option<MassBalanceReport>,
}

/// Assemble, factor and integrate in one call.
pub fn run_transport(mesh: &Mesh, flow: &FlowField, params: &TransportParams, opts: &RunOptions) -> Result<TransportRun> {
    params.validate()?;
    let ops = assemble_transport(mesh, flow, params.pe)?;
    let solver = TransportSolver::new(ops, params.tau)?;
    solver.run(params.isotherm, params.n_steps()?, opts)
}

/// Global balance after each step, with time-integrated boundary fluxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceRow {
    pub t: f64,
    pub bulk: f64,
    pub surface: f64,
    pub inflow: f64,
    pub outflow: f64,
    /// `(bulk - bulk0) + (surface - surface0) - (inflow - outflow)`
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassBalanceReport {
    pub bulk0: f64,
    pub surface0: f64,
    pub rows: Vec<BalanceRow>,
}

impl MassBalanceReport {
    fn start(ops: &TransportOperators, s: &TransportState) -> Self {
        Self {
            bulk0: ops.bulk_mass(&s.c),
            surface0: ops.surface_mass(&s.m),
            rows: Vec::new(),
        }
    }

    fn record(&mut self, solver: &TransportSolver, before: &TransportState, after: &TransportState) {
        let ops = &solver.ops;
        let tau = solver.tau;
        let (inflow, outflow) = self.rows.last().map_or((0.0, 0.0), |r| (r.inflow, r.outflow));
        let out_rate: f64 = solver
            .outlet_colsum
            .iter()
            .zip(after.c.iter().zip(&before.c))
            .map(|(s, (a, b))| s * 0.5 * (a + b))
            .sum();
        let inflow = inflow + tau * solver.inlet_flux(before, after);
        let outflow = outflow + tau * out_rate;
        let bulk = ops.bulk_mass(&after.c);
        let surface = ops.surface_mass(&after.m);
        self.rows.push(BalanceRow {
            t: after.t,
            bulk,
            surface,
            inflow,
            outflow,
            residual: (bulk - self.bulk0) + (surface - self.surface0) - (inflow - outflow),
        });
    }

    /// Largest `|residual| / t` over all steps.
    pub fn max_residual_rate(&self) -> f64 {
        self.rows
            .iter()
            .fold(0.0, |m, r| m.max(r.residual.abs() / r.t))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,bulk,surface,inflow,outflow,residual\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t, r.bulk, r.surface, r.inflow, r.outflow, r.residual
            );
        }
        s
    }
}

/// Parameter varied by [`sensitivity_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Pe,
    DaA,
    DaD,
    Capacity,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Pe => "pe",
            SweepAxis::DaA => "da_a",
            SweepAxis::DaD => "da_d",
            SweepAxis::Capacity => "capacity",
        }
    }

    pub fn apply(self, base: &TransportParams, value: f64) -> Result<TransportParams> {
        let mut p = *base;
        let iso = base.isotherm;
        match self {
            SweepAxis::Pe => p.pe = value,
            SweepAxis::DaA => p.isotherm = iso.with_rates(value, iso.da_d()),
            SweepAxis::DaD => p.isotherm = iso.with_rates(iso.da_a(), value),
            SweepAxis::Capacity => match iso {
                Isotherm::Langmuir { da_a, da_d, .. } => {
                    p.isotherm = Isotherm::Langmuir {
                        da_a,
                        da_d,
                        capacity: value,
                    }
                }
                Isotherm::Henry { .. } => {
                    return Err(Error::Config("capacity sweep needs a Langmuir isotherm".into()))
                }
            },
        }
        p.validate()?;
        Ok(p)
    }
}

/// One breakthrough curve per value of `axis`; the flow is shared and the
/// operators are reassembled only when Pe changes.
pub fn sensitivity_sweep(
    mesh: &Mesh,
    flow: &FlowField,
    base: &TransportParams,
    axis: SweepAxis,
    values: &[f64],
    exec: crate::par::Execution,
) -> Result<Vec<BreakthroughCurve>> {
    base.validate()?;
    let params = values
        .iter()
        .map(|&v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let n_steps = base.n_steps()?;
    if axis == SweepAxis::Pe {
        return exec
            .map(&params, |_, p| run_transport(mesh, flow, p, &RunOptions::default()).map(|r| r.curve))
            .into_iter()
            .collect();
    }
    let solver = TransportSolver::new(assemble_transport(mesh, flow, base.pe)?, base.tau)?;
    exec.map(&params, |_, p| solver.breakthrough(p.isotherm, n_steps))
        .into_iter()
        .collect()
}

/// Nodal scalar field dump.
pub fn scalar_field_text(mesh_checksum: &str, t: f64, values: &[f64]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "POREFLOW-SCALAR 1");
    let _ = writeln!(s, "MESH {mesh_checksum}");
    let _ = writeln!(s, "TIME {t:.16e}");
    let _ = writeln!(s, "VALUES {}", values.len());
    for v in values {
        let _ = writeln!(s, "{v:.16e}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, GeometryConfig};
    use crate::mesh::triangulate;
    use crate::stokes::{solve_stokes, FlowBcs};

    fn setup(cfg: GeometryConfig, h: f64) -> (Mesh, FlowField) {
        let mesh = triangulate(&build_geometry(&cfg).unwrap(), h).unwrap();
        let flow = solve_stokes(&mesh, &FlowBcs::default()).unwrap();
        (mesh, flow)
    }

    fn short_channel() -> (Mesh, FlowField) {
        setup(
            GeometryConfig {
                length: 5.0,
                obstacle_count: 2,
                first_center_x1: 1.5,
                ..GeometryConfig::default()
            },
            0.12,
        )
    }

    #[test]
    fn mass_rows_sum_to_area() {
        let (mesh, flow) = short_channel();
        let ops = assemble_transport(&mesh, &flow, 10.0).unwrap();
        let total: f64 = ops.mass.values.iter().sum();
        assert!((total - mesh.area()).abs() < 1e-10);
    }

    #[test]
    fn diffusion_scales_with_inverse_pe() {
        let (mesh, flow) = short_channel();
        let a = assemble_transport(&mesh, &flow, 10.0).unwrap();
        let b = assemble_transport(&mesh, &flow, 20.0).unwrap();
        for (x, y) in a.diffusion.values.iter().zip(&b.diffusion.values) {
            assert!((0.5 * x - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }

    #[test]
    fn zero_velocity_gives_zero_convection() {
        let (mesh, mut flow) = short_channel();
        flow.u.iter_mut().for_each(|u| *u = 0.0);
        let ops = assemble_transport(&mesh, &flow, 10.0).unwrap();
        assert!(ops.convection.values.iter().all(|v| *v == 0.0));
        assert!(ops.outlet.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn outlet_average_of_simple_fields() {
        let (mesh, _) = short_channel();
        let n = mesh.n_vertices();
        assert_eq!(compute_outlet_avg(&mesh, &vec![1.0; n]), 1.0);
        assert_eq!(compute_outlet_avg(&mesh, &vec![0.0; n]), 0.0);
        let lin: Vec<f64> = mesh.vertices.iter().map(|v| v[1]).collect();
        assert!((compute_outlet_avg(&mesh, &lin) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn step_count_must_be_integral() {
        let p = TransportParams {
            tau: 0.3,
            ..TransportParams::default()
        };
        assert!(matches!(p.n_steps(), Err(Error::Config(_))));
        assert_eq!(TransportParams::default().n_steps().unwrap(), 400);
    }

    #[test]
    fn mismatched_flow_is_rejected() {
        let (mesh, flow) = short_channel();
        let other = triangulate(&build_geometry(&GeometryConfig::empty_channel(5.0, 1.0)).unwrap(), 0.12).unwrap();
        assert!(matches!(
            assemble_transport(&other, &flow, 10.0),
            Err(Error::MeshMismatch { .. })
        ));
        assert!(assemble_transport(&mesh, &flow, 10.0).is_ok());
    }

    #[test]
    fn no_adsorption_keeps_surface_empty() {
        let (mesh, flow) = short_channel();
        let params = TransportParams {
            isotherm: Isotherm::Henry { da_a: 0.0, da_d: 0.05 },
            t_end: 2.0,
            ..TransportParams::default()
        };
        let opts = RunOptions {
            mass_balance: true,
            ..RunOptions::default()
        };
        let run = run_transport(&mesh, &flow, &params, &opts).unwrap();
        assert!(run.final_state.m.iter().all(|m| *m == 0.0));
        assert!(run.balance.unwrap().rows.iter().all(|r| r.surface == 0.0));
    }

    #[test]
    fn closed_inlet_keeps_zero_mass() {
        let (mesh, flow) = short_channel();
        let ops = assemble_transport(&mesh, &flow, 10.0).unwrap();
        let solver = TransportSolver::new(ops, 0.1).unwrap();
        let opts = RunOptions {
            inlet_value: 0.0,
            mass_balance: true,
            ..RunOptions::default()
        };
        let run = solver.run(Isotherm::default(), 1, &opts).unwrap();
        let row = run.balance.unwrap().rows[0];
        assert!(row.bulk.abs() < 1e-12 && row.surface.abs() < 1e-12);
    }

    #[test]
    fn global_balance_closes() {
        let (mesh, flow) = short_channel();
        let params = TransportParams {
            t_end: 5.0,
            isotherm: Isotherm::Henry { da_a: 0.05, da_d: 0.05 },
            ..TransportParams::default()
        };
        let opts = RunOptions {
            mass_balance: true,
            ..RunOptions::default()
        };
        let report = run_transport(&mesh, &flow, &params, &opts).unwrap().balance.unwrap();
        assert!(report.max_residual_rate() < 1e-10, "{}", report.max_residual_rate());
        let last = report.rows.last().unwrap();
        assert!(last.surface > 0.0 && last.inflow > last.outflow);
    }

    #[test]
    fn snapshots_match_nearest_step() {
        let (mesh, flow) = short_channel();
        let params = TransportParams {
            t_end: 1.0,
            ..TransportParams::default()
        };
        let opts = RunOptions {
            snapshot_times: vec![0.52, 0.0, 1.0],
            ..RunOptions::default()
        };
        let run = run_transport(&mesh, &flow, &params, &opts).unwrap();
        let steps: Vec<usize> = run.snapshots.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 5, 10]);
        assert_eq!(run.snapshots[2].c, run.final_state.c);
        assert_eq!(run.curve.len(), 10);
        assert!((run.curve.times[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn henry_surface_update_is_affine() {
        let iso = Isotherm::default();
        let f = |m: f64, c0: f64, c1: f64| surface_step(&iso, 0.1, m, c0, c1).unwrap();
        let (a, b) = ((0.3, 0.2, 0.7), (0.1, 0.9, 0.4));
        let mix = f(
            0.25 * a.0 + 0.75 * b.0,
            0.25 * a.1 + 0.75 * b.1,
            0.25 * a.2 + 0.75 * b.2,
        );
        assert!((mix - (0.25 * f(a.0, a.1, a.2) + 0.75 * f(b.0, b.1, b.2))).abs() < 1e-15);
    }

    #[test]
    fn nondimensional_groups() {
        let nd = Nondimensionalization {
            length: 2.0,
            inlet_speed: 4.0,
            inlet_concentration: 0.5,
            diffusivity: 0.8,
            k_a: 0.02,
            k_d: 0.1,
            m_infty: 3.0,
        };
        assert_eq!(nd.pe(), 10.0);
        assert_eq!(nd.da_a(), 0.005);
        assert_eq!(nd.da_d(), 0.05);
        assert_eq!(nd.capacity(), 3.0);
        assert_eq!(nd.m_bar(), 1.0);
    }

    #[test]
    fn isotherm_json_round_trip() {
        let iso = Isotherm::Langmuir {
            da_a: 0.005,
            da_d: 0.05,
            capacity: 1.0,
        };
        let s = serde_json::to_string(&iso).unwrap();
        assert_eq!(s, r#"{"kind":"langmuir","da_a":0.005,"da_d":0.05,"capacity":1.0}"#);
        assert_eq!(serde_json::from_str::<Isotherm>(&s).unwrap(), iso);
        assert!(serde_json::from_str::<Isotherm>(r#"{"kind":"henry","da_a":1,"da_d":1,"x":2}"#).is_err());
    }
}
