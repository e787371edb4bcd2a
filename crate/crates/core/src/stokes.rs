//! Steady Stokes flow with Taylor–Hood (P2 velocity, P1 pressure) elements.
//!
//! Boundary conditions: prescribed normal inflow at INLET, no-slip on
//! SURFACE, zero normal velocity on SYMMETRY, and the natural traction
//! condition `du/dn - p n = -p_out n` at OUTLET. Dirichlet values are
//! eliminated symmetrically, so the assembled matrix
//! `[[A, -B^T], [-B, 0]]` stays symmetric.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::{p2_edge_values, p2_gradients, p2_values, TriGeom, EDGE_GAUSS3, TRI_QUAD4};
use crate::geometry::BoundaryTag;
use crate::mesh::{barycentric, EdgeTable, Mesh, PointLocator};
use crate::sparse::{norm, CscMatrix, SymmetricLdlt, Triplets};

/// Relative residual accepted from the direct solver.
pub const SOLVER_TOLERANCE: f64 = 1e-10;
/// Relative shift on the pressure diagonal that makes the saddle-point
/// matrix quasi-definite; refinement removes its effect.
const STATIC_SHIFT: f64 = 1e-9;
const REFINEMENT_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowBcs {
    pub inlet_normal_speed: f64,
    pub outlet_pressure: f64,
}

impl Default for FlowBcs {
    fn default() -> Self {
        Self {
            inlet_normal_speed: 1.0,
            outlet_pressure: 0.0,
        }
    }
}

/// Degree-of-freedom layout: velocity nodes are the mesh vertices followed
/// by the edge midpoints; the velocity vector stores all `u1` values and
/// then all `u2` values. Pressure lives on vertices.
#[derive(Debug, Clone)]
pub struct TaylorHoodSpace {
    pub n_vertices: usize,
    pub edges: EdgeTable,
    edge_index: HashMap<(usize, usize), usize>,
}

impl TaylorHoodSpace {
    pub fn new(mesh: &Mesh) -> Self {
        let edges = mesh.edge_table();
        let edge_index = edges
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| ((e[0], e[1]), i))
            .collect();
        Self {
            n_vertices: mesh.n_vertices(),
            edges,
            edge_index,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.edges.len()
    }

    pub fn n_velocity_nodes(&self) -> usize {
        self.n_vertices + self.n_edges()
    }

    pub fn n_velocity_dofs(&self) -> usize {
        2 * self.n_velocity_nodes()
    }

    pub fn n_pressure_dofs(&self) -> usize {
        self.n_vertices
    }

    pub fn n_dofs(&self) -> usize {
        self.n_velocity_dofs() + self.n_pressure_dofs()
    }

    /// Velocity node indices of triangle `t` in P2 local order.
    pub fn tri_nodes(&self, mesh: &Mesh, t: usize) -> [usize; 6] {
        let v = mesh.triangles[t];
        let e = self.edges.tri_edges[t];
        let nv = self.n_vertices;
        [v[0], v[1], v[2], nv + e[0], nv + e[1], nv + e[2]]
    }

    /// Velocity node at the midpoint of edge `(a, b)`.
    pub fn edge_node(&self, a: usize, b: usize) -> Option<usize> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edge_index.get(&key).map(|e| self.n_vertices + e)
    }
}

/// Assembled, constraint-eliminated Stokes system.
#[derive(Debug, Clone)]
pub struct SaddlePointSystem {
    pub space: TaylorHoodSpace,
    pub matrix: CscMatrix,
    pub rhs: Vec<f64>,
    /// Prescribed value per velocity dof, if constrained.
    pub dirichlet: Vec<Option<f64>>,
}

impl SaddlePointSystem {
    pub fn n_dofs(&self) -> usize {
        self.rhs.len()
    }

    /// Relative asymmetry of the velocity block.
    pub fn velocity_block_asymmetry(&self) -> f64 {
        let nu = self.space.n_velocity_dofs();
        let mut t = Triplets::new(nu, nu);
        for c in 0..nu {
            for k in self.matrix.col_ptr[c]..self.matrix.col_ptr[c + 1] {
                let r = self.matrix.row_idx[k];
                if r < nu {
                    t.push(r, c, self.matrix.values[k]);
                }
            }
        }
        t.to_csc().asymmetry()
    }
}

fn velocity_constraints(mesh: &Mesh, space: &TaylorHoodSpace, bcs: &FlowBcs) -> Result<Vec<Option<f64>>> {
    let nn = space.n_velocity_nodes();
    let mut out: Vec<Option<f64>> = vec![None; 2 * nn];
    // Later passes override earlier ones: SYMMETRY < INLET < SURFACE.
    let order = [BoundaryTag::Symmetry, BoundaryTag::Inlet, BoundaryTag::Surface];
    for tag in order {
        for f in mesh.facets_with(tag) {
            let mid = space.edge_node(f.v[0], f.v[1]).expect("facet edge exists");
            let nodes = [f.v[0], f.v[1], mid];
            match tag {
                BoundaryTag::Surface => {
                    for n in nodes {
                        out[n] = Some(0.0);
                        out[nn + n] = Some(0.0);
                    }
                }
                BoundaryTag::Inlet => {
                    let normal = mesh.facet_normal(f);
                    let speed = bcs.inlet_normal_speed;
                    // u = -speed * n (inflow along the inward normal).
                    for n in nodes {
                        out[n] = Some(-speed * normal[0]);
                        out[nn + n] = Some(-speed * normal[1]);
                    }
                }
                BoundaryTag::Symmetry => {
                    let normal = mesh.facet_normal(f);
                    let comp = if normal[0].abs() < 1e-12 {
                        1
                    } else if normal[1].abs() < 1e-12 {
                        0
                    } else {
                        return Err(Error::Config(
                            "SYMMETRY facets must be axis-aligned".into(),
                        ));
                    };
                    for n in nodes {
                        out[comp * nn + n] = Some(0.0);
                    }
                }
                BoundaryTag::Outlet => {}
            }
        }
    }
    Ok(out)
}

/// Element Laplacian (6x6) and divergence (3x12) matrices.
fn element_matrices(geom: &TriGeom) -> ([[f64; 6]; 6], [[f64; 12]; 3]) {
    let mut k = [[0.0; 6]; 6];
    let mut b = [[0.0; 12]; 3];
    for (l, w) in TRI_QUAD4 {
        let wa = w * geom.area;
        let g = p2_gradients(l, &geom.grad);
        for i in 0..6 {
            for j in 0..6 {
                k[i][j] += wa * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
        for q in 0..3 {
            for j in 0..6 {
                b[q][j] += wa * l[q] * g[j][0];
                b[q][6 + j] += wa * l[q] * g[j][1];
            }
        }
    }
    (k, b)
}

/// Assemble the symmetric saddle-point system.
pub fn assemble_stokes(mesh: &Mesh, bcs: &FlowBcs) -> Result<SaddlePointSystem> {
    if !(bcs.inlet_normal_speed > 0.0) {
        return Err(Error::Config("inlet_normal_speed must be positive".into()));
    }
    if !mesh.has_tag(BoundaryTag::Inlet) {
        return Err(Error::Config("mesh has no INLET facets".into()));
    }
    if !mesh.has_tag(BoundaryTag::Outlet) {
        return Err(Error::SingularSystem(
            "no OUTLET facets: pressure is only determined up to a constant".into(),
        ));
    }
    let space = TaylorHoodSpace::new(mesh);
    let dirichlet = velocity_constraints(mesh, &space, bcs)?;
    let nn = space.n_velocity_nodes();
    let nu = space.n_velocity_dofs();
    let n = space.n_dofs();
    let mut rhs = vec![0.0; n];
    let mut trip = Triplets::with_capacity(n, n, mesh.n_triangles() * (2 * 36 + 4 * 36));

    let add = |r: usize, c: usize, v: f64, rhs: &mut Vec<f64>, trip: &mut Triplets| {
        let row_fixed = r < nu && dirichlet[r].is_some();
        if row_fixed {
            return;
        }
        match (c < nu).then(|| dirichlet[c]).flatten() {
            Some(g) => rhs[r] -= v * g,
            None => trip.push(r, c, v),
        }
    };

    for t in 0..mesh.n_triangles() {
        let geom = TriGeom::new(mesh, t);
        let (k, b) = element_matrices(&geom);
        let nodes = space.tri_nodes(mesh, t);
        let verts = mesh.triangles[t];
        for comp in 0..2 {
            for i in 0..6 {
                for j in 0..6 {
                    add(comp * nn + nodes[i], comp * nn + nodes[j], k[i][j], &mut rhs, &mut trip);
                }
            }
        }
        for q in 0..3 {
            let pr = nu + verts[q];
            for comp in 0..2 {
                for j in 0..6 {
                    let uc = comp * nn + nodes[j];
                    let v = -b[q][comp * 6 + j];
                    add(pr, uc, v, &mut rhs, &mut trip);
                    add(uc, pr, v, &mut rhs, &mut trip);
                }
            }
        }
    }

    // Outlet traction datum: -p_out * int (v . n).
    if bcs.outlet_pressure != 0.0 {
        for f in mesh.facets_with(BoundaryTag::Outlet) {
            let len = mesh.facet_length(f);
            let normal = mesh.facet_normal(f);
            let mid = space.edge_node(f.v[0], f.v[1]).unwrap();
            let nodes = [f.v[0], f.v[1], mid];
            for (s, w) in EDGE_GAUSS3 {
                let phi = p2_edge_values(s);
                for (a, &node) in nodes.iter().enumerate() {
                    for comp in 0..2 {
                        let r = comp * nn + node;
                        if dirichlet[r].is_none() {
                            rhs[r] -= bcs.outlet_pressure * w * len * phi[a] * normal[comp];
                        }
                    }
                }
            }
        }
    }

    for (r, g) in dirichlet.iter().enumerate() {
        if let Some(g) = g {
            trip.push(r, r, 1.0);
            rhs[r] = *g;
        }
    }
    Ok(SaddlePointSystem {
        space,
        matrix: trip.into_csc(),
        rhs,
        dirichlet,
    })
}

/// Discrete velocity and pressure.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub space: TaylorHoodSpace,
    /// `u1` on all velocity nodes, then `u2`.
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub solver_residual: f64,
    pub mesh_checksum: String,
}

pub fn solve_stokes(mesh: &Mesh, bcs: &FlowBcs) -> Result<FlowField> {
    let sys = assemble_stokes(mesh, bcs)?;
    solve_system(mesh, &sys)
}

pub fn solve_system(mesh: &Mesh, sys: &SaddlePointSystem) -> Result<FlowField> {
    let nu = sys.space.n_velocity_dofs();
    let positive: Vec<bool> = (0..sys.rhs.len()).map(|i| i < nu).collect();
    let ldlt = SymmetricLdlt::new(&sys.matrix, &positive, STATIC_SHIFT)?;
    let (x, rel) = ldlt.solve_refined(&sys.matrix, &sys.rhs, 1e-13, REFINEMENT_STEPS);
    if !(rel <= SOLVER_TOLERANCE) {
        return Err(Error::LinearSolve {
            message: "Stokes system".into(),
            residual: rel,
        });
    }
    let mut u = x[..nu].to_vec();
    // Constrained values are exact by construction; remove round-off.
    for (ui, g) in u.iter_mut().zip(&sys.dirichlet) {
        if let Some(g) = g {
            *ui = *g;
        }
    }
    Ok(FlowField {
        space: sys.space.clone(),
        u,
        p: x[nu..].to_vec(),
        solver_residual: rel,
        mesh_checksum: mesh.checksum(),
    })
}

impl FlowField {
    pub fn n_velocity_nodes(&self) -> usize {
        self.space.n_velocity_nodes()
    }

    pub fn velocity_node(&self, node: usize) -> [f64; 2] {
        let nn = self.n_velocity_nodes();
        [self.u[node], self.u[nn + node]]
    }

    /// Velocity inside triangle `t` at barycentric `l`.
    pub fn velocity_at(&self, mesh: &Mesh, t: usize, l: [f64; 3]) -> [f64; 2] {
        let nodes = self.space.tri_nodes(mesh, t);
        let phi = p2_values(l);
        let nn = self.n_velocity_nodes();
        let mut v = [0.0; 2];
        for (k, &node) in nodes.iter().enumerate() {
            v[0] += phi[k] * self.u[node];
            v[1] += phi[k] * self.u[nn + node];
        }
        v
    }

    pub fn pressure_at(&self, mesh: &Mesh, t: usize, l: [f64; 3]) -> f64 {
        let v = mesh.triangles[t];
        l[0] * self.p[v[0]] + l[1] * self.p[v[1]] + l[2] * self.p[v[2]]
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        let found = mesh.checksum();
        if found != self.mesh_checksum {
            return Err(Error::MeshMismatch {
                expected: self.mesh_checksum.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Largest `|b(u_h, q)|` over all pressure basis functions.
    pub fn divergence_residual(&self, mesh: &Mesh) -> f64 {
        let mut r = vec![0.0; mesh.n_vertices()];
        let nn = self.n_velocity_nodes();
        for t in 0..mesh.n_triangles() {
            let (_, b) = element_matrices(&TriGeom::new(mesh, t));
            let nodes = self.space.tri_nodes(mesh, t);
            for (q, &vq) in mesh.triangles[t].iter().enumerate() {
                for j in 0..6 {
                    r[vq] += b[q][j] * self.u[nodes[j]] + b[q][6 + j] * self.u[nn + nodes[j]];
                }
            }
        }
        r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn velocity_norm(&self) -> f64 {
        norm(&self.u)
    }

    pub fn max_speed(&self) -> f64 {
        (0..self.n_velocity_nodes())
            .map(|n| {
                let v = self.velocity_node(n);
                v[0].hypot(v[1])
            })
            .fold(0.0, f64::max)
    }

    /// Integral of `u . n` (outward normal) over facets with `tag`; exact
    /// for quadratic velocity on straight facets.
    pub fn flux_through(&self, mesh: &Mesh, tag: BoundaryTag) -> f64 {
        mesh.facets_with(tag)
            .map(|f| {
                let normal = mesh.facet_normal(f);
                let mid = self.space.edge_node(f.v[0], f.v[1]).unwrap();
                let un = |n: usize| {
                    let v = self.velocity_node(n);
                    v[0] * normal[0] + v[1] * normal[1]
                };
                mesh.facet_length(f) / 6.0 * (un(f.v[0]) + 4.0 * un(mid) + un(f.v[1]))
            })
            .sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "POREFLOW-FLOW 1");
        let _ = writeln!(s, "MESH {}", self.mesh_checksum);
        let _ = writeln!(s, "RESIDUAL {:.16e}", self.solver_residual);
        let nn = self.n_velocity_nodes();
        let _ = writeln!(s, "VELOCITY {}", nn);
        for i in 0..nn {
            let _ = writeln!(s, "{:.16e} {:.16e}", self.u[i], self.u[nn + i]);
        }
        let _ = writeln!(s, "PRESSURE {}", self.p.len());
        for p in &self.p {
            let _ = writeln!(s, "{p:.16e}");
        }
        s
    }

    /// Parse a dump written by [`FlowField::to_text`] for `mesh`.
    pub fn from_text(text: &str, mesh: &Mesh) -> Result<FlowField> {
        let err = |line: usize, message: &str| Error::Format {
            line,
            message: message.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first().map(|l| l.trim()) != Some("POREFLOW-FLOW 1") {
            return Err(err(1, "bad flow header"));
        }
        let checksum = lines
            .get(1)
            .and_then(|l| l.strip_prefix("MESH "))
            .ok_or_else(|| err(2, "expected MESH"))?
            .trim()
            .to_string();
        let found = mesh.checksum();
        if checksum != found {
            return Err(Error::MeshMismatch {
                expected: checksum,
                found,
            });
        }
        let residual: f64 = lines
            .get(2)
            .and_then(|l| l.strip_prefix("RESIDUAL "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| err(3, "expected RESIDUAL"))?;
        let space = TaylorHoodSpace::new(mesh);
        let nn: usize = lines
            .get(3)
            .and_then(|l| l.strip_prefix("VELOCITY "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| err(4, "expected VELOCITY"))?;
        if nn != space.n_velocity_nodes() {
            return Err(err(4, "velocity node count does not match the mesh"));
        }
        let mut u = vec![0.0; 2 * nn];
        for i in 0..nn {
            let ln = 5 + i;
            let vals: Vec<f64> = lines
                .get(4 + i)
                .ok_or_else(|| err(ln, "truncated velocity"))?
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err(ln, "bad number"))?;
            if vals.len() != 2 {
                return Err(err(ln, "expected two velocity components"));
            }
            u[i] = vals[0];
            u[nn + i] = vals[1];
        }
        let base = 4 + nn;
        let np: usize = lines
            .get(base)
            .and_then(|l| l.strip_prefix("PRESSURE "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| err(base + 1, "expected PRESSURE"))?;
        if np != mesh.n_vertices() {
            return Err(err(base + 1, "pressure count does not match the mesh"));
        }
        let p = (0..np)
            .map(|i| {
                lines
                    .get(base + 1 + i)
                    .and_then(|l| l.trim().parse::<f64>().ok())
                    .ok_or_else(|| err(base + 2 + i, "bad pressure value"))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(FlowField {
            space,
            u,
            p,
            solver_residual: residual,
            mesh_checksum: checksum,
        })
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// One sample on a horizontal line; `None` where the point is outside the
/// meshed fluid region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSample {
    pub x1: f64,
    pub u1: Option<f64>,
    pub u2: Option<f64>,
    pub p: Option<f64>,
}

fn line_positions(mesh: &Mesh, n_samples: usize) -> Vec<f64> {
    let (lo, hi) = mesh
        .vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[0]), hi.max(v[0])));
    let n = n_samples.max(2);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Velocity and pressure along `x2 = const`, interpolated with the element
/// basis (quadratic velocity, linear pressure).
pub fn sample_along_line(mesh: &Mesh, field: &FlowField, x2: f64, n_samples: usize) -> Vec<LineSample> {
    let loc = PointLocator::new(mesh);
    line_positions(mesh, n_samples)
        .into_iter()
        .map(|x1| match loc.locate([x1, x2]) {
            Some((t, l)) => {
                let v = field.velocity_at(mesh, t, l);
                LineSample {
                    x1,
                    u1: Some(v[0]),
                    u2: Some(v[1]),
                    p: Some(field.pressure_at(mesh, t, l)),
                }
            }
            None => LineSample {
                x1,
                u1: None,
                u2: None,
                p: None,
            },
        })
        .collect()
}

/// Linear-element nodal field along `x2 = const`.
pub fn sample_scalar_along_line(mesh: &Mesh, values: &[f64], x2: f64, n_samples: usize) -> Vec<(f64, Option<f64>)> {
    let loc = PointLocator::new(mesh);
    line_positions(mesh, n_samples)
        .into_iter()
        .map(|x1| {
            let v = loc.locate([x1, x2]).map(|(t, _)| {
                let l = barycentric(mesh, t, [x1, x2]);
                let tri = mesh.triangles[t];
                l[0] * values[tri[0]] + l[1] * values[tri[1]] + l[2] * values[tri[2]]
            });
            (x1, v)
        })
        .collect()
}

/// Root-mean-square difference of two line samplings over positions where
/// both are present.
pub fn line_difference(a: &[LineSample], b: &[LineSample]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (sa, sb) in a.iter().zip(b) {
        if let (Some(a1), Some(a2), Some(b1), Some(b2)) = (sa.u1, sa.u2, sb.u1, sb.u2) {
            sum += (a1 - b1).powi(2) + (a2 - b2).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, GeometryConfig};
    use crate::mesh::triangulate;

    fn channel_mesh() -> Mesh {
        let dom = build_geometry(&GeometryConfig::empty_channel(3.0, 1.0)).unwrap();
        triangulate(&dom, 0.25).unwrap()
    }

    #[test]
    fn dof_counts() {
        let mesh = channel_mesh();
        let sys = assemble_stokes(&mesh, &FlowBcs::default()).unwrap();
        let ne = mesh.edge_table().edges.len();
        assert_eq!(sys.n_dofs(), 2 * (mesh.n_vertices() + ne) + mesh.n_vertices());
        assert!(sys.velocity_block_asymmetry() < 1e-12);
        assert!(sys.matrix.asymmetry() < 1e-12);
    }

    #[test]
    fn plug_flow_is_exact() {
        let mesh = channel_mesh();
        let field = solve_stokes(&mesh, &FlowBcs::default()).unwrap();
        let nn = field.n_velocity_nodes();
        for i in 0..nn {
            assert!((field.u[i] - 1.0).abs() < 1e-10);
            assert!(field.u[nn + i].abs() < 1e-10);
        }
        for p in &field.p {
            assert!(p.abs() < 1e-10);
        }
        assert!((field.flux_through(&mesh, BoundaryTag::Inlet) + 1.0).abs() < 1e-12);
        assert!(field.flux_through(&mesh, BoundaryTag::Symmetry).abs() < 1e-12);
        assert!((field.flux_through(&mesh, BoundaryTag::Outlet) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn outlet_pressure_datum_shifts_pressure() {
        let mesh = channel_mesh();
        let bcs = FlowBcs {
            outlet_pressure: 2.5,
            ..FlowBcs::default()
        };
        let field = solve_stokes(&mesh, &bcs).unwrap();
        for p in &field.p {
            assert!((p - 2.5).abs() < 1e-10);
        }
    }

    #[test]
    fn missing_outlet_is_singular() {
        let mut mesh = channel_mesh();
        for f in &mut mesh.facets {
            if f.tag == BoundaryTag::Outlet {
                f.tag = BoundaryTag::Symmetry;
            }
        }
        assert!(matches!(
            assemble_stokes(&mesh, &FlowBcs::default()),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn obstacle_flow_conserves_mass() {
        let cfg = GeometryConfig {
            length: 5.0,
            obstacle_count: 2,
            first_center_x1: 1.5,
            ..GeometryConfig::default()
        };
        let mesh = triangulate(&build_geometry(&cfg).unwrap(), 0.15).unwrap();
        let field = solve_stokes(&mesh, &FlowBcs::default()).unwrap();
        let total: f64 = BoundaryTag::ALL
            .iter()
            .map(|&t| field.flux_through(&mesh, t))
            .sum();
        assert!(total.abs() < 1e-10, "net flux {total}");
        assert!((field.flux_through(&mesh, BoundaryTag::Outlet) - 1.0).abs() < 1e-10);
        assert!(field.divergence_residual(&mesh) <= 1e-10 * field.velocity_norm());
        assert!(field.max_speed() > 1.0);
        let back = FlowField::from_text(&field.to_text(), &mesh).unwrap();
        assert_eq!(back.u, field.u);
        assert_eq!(back.p, field.p);
    }
}
