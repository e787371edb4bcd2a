//! Tagged triangulations of the fluid region.
//!
//! Meshes are built by constrained Delaunay triangulation of the discretized
//! outline plus a staggered interior lattice with spacing close to
//! `h_target`, and refined by splitting each triangle into four.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::f64::consts::PI;
use std::path::Path;

use sha2::{Digest, Sha256};
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::geometry::{dist, BoundaryTag, PlanarDomain, SegmentShape, Wall};

/// Smallest interior angle accepted from [`triangulate`].
pub const MIN_ANGLE_DEG: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    pub fn project(&self, p: [f64; 2]) -> [f64; 2] {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let n = d[0].hypot(d[1]);
        [
            self.center[0] + self.radius * d[0] / n,
            self.center[1] + self.radius * d[1] / n,
        ]
    }
}

/// Boundary edge `v[0] -> v[1]`, oriented with the fluid on its left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Facet {
    pub v: [usize; 2],
    pub tag: BoundaryTag,
    /// Generating circle for SURFACE facets.
    pub circle: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub facets: Vec<Facet>,
    pub circles: Vec<Circle>,
    pub h_target: f64,
}

/// Unique edges of a mesh; local edge `k` of a triangle joins local
/// vertices `k` and `(k + 1) % 3`.
#[derive(Debug, Clone)]
pub struct EdgeTable {
    pub edges: Vec<[usize; 2]>,
    pub tri_edges: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub vertices: usize,
    pub triangles: usize,
    pub min_angle_deg: f64,
    pub max_edge: f64,
    pub area: f64,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.signed_area(t)).sum()
    }

    pub fn facet_length(&self, f: &Facet) -> f64 {
        dist(self.vertices[f.v[0]], self.vertices[f.v[1]])
    }

    /// Outward unit normal of a facet.
    pub fn facet_normal(&self, f: &Facet) -> [f64; 2] {
        let a = self.vertices[f.v[0]];
        let b = self.vertices[f.v[1]];
        let len = dist(a, b);
        [(b[1] - a[1]) / len, -(b[0] - a[0]) / len]
    }

    pub fn facets_with(&self, tag: BoundaryTag) -> impl Iterator<Item = &Facet> {
        self.facets.iter().filter(move |f| f.tag == tag)
    }

    pub fn tag_length(&self, tag: BoundaryTag) -> f64 {
        self.facets_with(tag).map(|f| self.facet_length(f)).sum()
    }

    pub fn has_tag(&self, tag: BoundaryTag) -> bool {
        self.facets.iter().any(|f| f.tag == tag)
    }

    /// Sorted, deduplicated vertices touched by facets with `tag`.
    pub fn tagged_vertices(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut v: Vec<usize> = self.facets_with(tag).flat_map(|f| f.v).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn edge_table(&self) -> EdgeTable {
        let mut index: HashMap<(usize, usize), usize> = HashMap::with_capacity(self.n_triangles() * 2);
        let mut edges = Vec::new();
        let mut tri_edges = Vec::with_capacity(self.n_triangles());
        for tri in &self.triangles {
            let mut te = [0; 3];
            for (k, slot) in te.iter_mut().enumerate() {
                let key = sorted(tri[k], tri[(k + 1) % 3]);
                *slot = *index.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edges.len() - 1
                });
            }
            tri_edges.push(te);
        }
        EdgeTable { edges, tri_edges }
    }

    pub fn quality(&self) -> QualityReport {
        let mut min_angle = f64::INFINITY;
        let mut max_edge: f64 = 0.0;
        for tri in &self.triangles {
            let p = tri.map(|i| self.vertices[i]);
            for k in 0..3 {
                let a = p[k];
                let b = p[(k + 1) % 3];
                let c = p[(k + 2) % 3];
                max_edge = max_edge.max(dist(a, b));
                let u = [b[0] - a[0], b[1] - a[1]];
                let v = [c[0] - a[0], c[1] - a[1]];
                let cross = u[0] * v[1] - u[1] * v[0];
                let dot = u[0] * v[0] + u[1] * v[1];
                min_angle = min_angle.min(cross.abs().atan2(dot).to_degrees());
            }
        }
        QualityReport {
            vertices: self.n_vertices(),
            triangles: self.n_triangles(),
            min_angle_deg: min_angle,
            max_edge,
            area: self.area(),
        }
    }

    /// Verifies orientation, conformity and facet coverage. Returns a
    /// description of the first violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.triangles.is_empty() {
            return Err("no triangles".into());
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= self.n_vertices()) {
                return Err(format!("triangle {t} references a missing vertex"));
            }
            if self.signed_area(t) <= 0.0 {
                return Err(format!("triangle {t} has non-positive area"));
            }
        }
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                *count.entry(sorted(tri[k], tri[(k + 1) % 3])).or_default() += 1;
                *directed.entry((tri[k], tri[(k + 1) % 3])).or_default() += 1;
            }
        }
        if let Some((e, n)) = count.iter().find(|(_, &n)| n > 2) {
            return Err(format!("edge {e:?} shared by {n} triangles"));
        }
        let boundary: usize = count.values().filter(|&&n| n == 1).count();
        if boundary != self.facets.len() {
            return Err(format!(
                "{} boundary edges but {} facets",
                boundary,
                self.facets.len()
            ));
        }
        for f in &self.facets {
            if directed.get(&(f.v[0], f.v[1])) != Some(&1)
                || count.get(&sorted(f.v[0], f.v[1])) != Some(&1)
            {
                return Err(format!("facet {:?} is not a boundary edge of the mesh", f.v));
            }
            match (f.tag, f.circle) {
                (BoundaryTag::Surface, Some(c)) if c < self.circles.len() => {}
                (BoundaryTag::Surface, _) => {
                    return Err(format!("surface facet {:?} without a valid circle", f.v))
                }
                (_, None) => {}
                (_, Some(_)) => return Err(format!("facet {:?} has a circle but is not SURFACE", f.v)),
            }
        }
        Ok(())
    }

    /// Largest distance of a SURFACE facet endpoint from its circle.
    pub fn surface_deviation(&self) -> f64 {
        self.facets_with(BoundaryTag::Surface)
            .flat_map(|f| {
                let c = self.circles[f.circle.unwrap()];
                f.v.map(|i| (dist(self.vertices[i], c.center) - c.radius).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(64 * (self.n_vertices() + self.n_triangles()));
        let _ = writeln!(s, "POREFLOW-MESH 1");
        let _ = writeln!(s, "H_TARGET {:.16e}", self.h_target);
        let _ = writeln!(s, "CIRCLES {}", self.circles.len());
        for c in &self.circles {
            let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", c.center[0], c.center[1], c.radius);
        }
        let _ = writeln!(s, "VERTICES {}", self.n_vertices());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.16e} {:.16e}", v[0], v[1]);
        }
        let _ = writeln!(s, "TRIANGLES {}", self.n_triangles());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "FACETS {}", self.facets.len());
        for f in &self.facets {
            match f.circle {
                Some(c) => {
                    let _ = writeln!(s, "{} {} {} {}", f.v[0], f.v[1], f.tag, c);
                }
                None => {
                    let _ = writeln!(s, "{} {} {}", f.v[0], f.v[1], f.tag);
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Mesh> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .by_ref()
                .find(|(_, l)| !l.is_empty())
                .ok_or_else(|| Error::Format {
                    line: 0,
                    message: format!("unexpected end of file, expected {what}"),
                })
        };
        let fmt_err = |line: usize, message: String| Error::Format { line, message };

        let (ln, header) = next("header")?;
        if header != "POREFLOW-MESH 1" {
            return Err(fmt_err(ln, format!("bad header {header:?}")));
        }
        let section = |(ln, l): (usize, &str), name: &str| -> Result<usize> {
            let mut it = l.split_whitespace();
            if it.next() != Some(name) {
                return Err(fmt_err(ln, format!("expected section {name}")));
            }
            it.next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| fmt_err(ln, format!("bad {name} count")))
        };
        let floats = |(ln, l): (usize, &str), n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| fmt_err(ln, e.to_string()))?;
            if v.len() != n || v.iter().any(|x| !x.is_finite()) {
                return Err(fmt_err(ln, format!("expected {n} finite numbers")));
            }
            Ok(v)
        };

        let (ln, l) = next("H_TARGET")?;
        let h_target = match l.split_whitespace().collect::<Vec<_>>()[..] {
            ["H_TARGET", v] => v.parse::<f64>().map_err(|e| fmt_err(ln, e.to_string()))?,
            _ => return Err(fmt_err(ln, "expected H_TARGET".into())),
        };

        let nc = section(next("CIRCLES")?, "CIRCLES")?;
        let mut circles = Vec::with_capacity(nc);
        for _ in 0..nc {
            let v = floats(next("circle")?, 3)?;
            circles.push(Circle {
                center: [v[0], v[1]],
                radius: v[2],
            });
        }
        let nv = section(next("VERTICES")?, "VERTICES")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let v = floats(next("vertex")?, 2)?;
            vertices.push([v[0], v[1]]);
        }
        let (ln, l) = next("TRIANGLES")?;
        let nt = section((ln, l), "TRIANGLES")?;
        if nt == 0 {
            return Err(fmt_err(ln, "empty triangle list".into()));
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (ln, l) = next("triangle")?;
            let idx: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| fmt_err(ln, e.to_string()))?;
            if idx.len() != 3 || idx.iter().any(|&i| i >= nv) {
                return Err(fmt_err(ln, "triangle needs 3 valid vertex indices".into()));
            }
            triangles.push([idx[0], idx[1], idx[2]]);
        }
        let nf = section(next("FACETS")?, "FACETS")?;
        let mut facets = Vec::with_capacity(nf);
        for _ in 0..nf {
            let (ln, l) = next("facet")?;
            let tok: Vec<&str> = l.split_whitespace().collect();
            if tok.len() < 3 || tok.len() > 4 {
                return Err(fmt_err(ln, "facet needs `a b TAG [circle]`".into()));
            }
            let a: usize = tok[0].parse().map_err(|_| fmt_err(ln, "bad facet index".into()))?;
            let b: usize = tok[1].parse().map_err(|_| fmt_err(ln, "bad facet index".into()))?;
            if a >= nv || b >= nv {
                return Err(fmt_err(ln, "facet index out of range".into()));
            }
            let tag = BoundaryTag::parse(tok[2])
                .ok_or_else(|| fmt_err(ln, format!("unknown facet tag {:?}", tok[2])))?;
            let circle = match tok.get(3) {
                Some(c) => {
                    let c: usize = c.parse().map_err(|_| fmt_err(ln, "bad circle index".into()))?;
                    if c >= nc {
                        return Err(fmt_err(ln, "circle index out of range".into()));
                    }
                    Some(c)
                }
                None => None,
            };
            if (tag == BoundaryTag::Surface) != circle.is_some() {
                return Err(fmt_err(ln, "only SURFACE facets carry a circle".into()));
            }
            facets.push(Facet { v: [a, b], tag, circle });
        }
        if let Some((ln, l)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(fmt_err(ln, format!("trailing content {l:?}")));
        }
        Ok(Mesh {
            vertices,
            triangles,
            facets,
            circles,
            h_target,
        })
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, mesh.to_text())?;
    Ok(())
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    Mesh::from_text(&std::fs::read_to_string(path)?)
}

fn sorted(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

struct BoundaryInfo {
    tag: BoundaryTag,
    circle: Option<usize>,
}

/// Triangulate the fluid region with target edge length `h_target`.
pub fn triangulate(domain: &PlanarDomain, h_target: f64) -> Result<Mesh> {
    let cfg = &domain.config;
    if !(h_target > 0.0 && h_target.is_finite()) {
        return Err(Error::Config(format!("h_target must be positive, got {h_target}")));
    }
    if cfg.obstacle_count > 0 && h_target >= cfg.obstacle_radius {
        return Err(Error::Config(format!(
            "h_target {h_target} must be below the obstacle radius {}",
            cfg.obstacle_radius
        )));
    }
    if h_target > cfg.height.min(cfg.length) {
        return Err(Error::Config(format!(
            "h_target {h_target} exceeds the channel extent"
        )));
    }

    let rows = ((cfg.height / (h_target * 3f64.sqrt() / 2.0)).round() as usize).max(1);
    let dy = cfg.height / rows as f64;
    let cols = ((cfg.length / h_target).round() as usize).max(1);
    let dx = cfg.length / cols as f64;

    // Boundary loop.
    let mut points: Vec<[f64; 2]> = Vec::new();
    let mut info: Vec<BoundaryInfo> = Vec::new();
    for seg in &domain.segments {
        let n = match seg.shape {
            SegmentShape::Line { from, to } if from[0] == to[0] => {
                ((seg.length() / dy).round() as usize).max(1)
            }
            SegmentShape::Line { .. } => ((seg.length() / dx).round() as usize).max(1),
            SegmentShape::Arc { .. } => cfg
                .boundary_arc_segments
                .max((seg.length() / h_target).round() as usize),
        };
        let circle = match seg.shape {
            SegmentShape::Arc { obstacle, .. } => Some(obstacle),
            _ => None,
        };
        let pts = seg.points(n);
        for p in &pts[..n] {
            points.push(*p);
            info.push(BoundaryInfo { tag: seg.tag, circle });
        }
    }
    let n_boundary = points.len();
    let mut boundary_edges: HashMap<(usize, usize), BoundaryInfo> = HashMap::new();
    let mut constraints = Vec::with_capacity(n_boundary);
    for (i, bi) in info.into_iter().enumerate() {
        let j = (i + 1) % n_boundary;
        constraints.push([i, j]);
        boundary_edges.insert((i, j), bi);
    }

    // Graded rings around obstacles whose arc chords are much finer than
    // the interior spacing.
    let clearance = 0.45 * h_target;
    let mut exclusion: Vec<f64> = domain.obstacles.iter().map(|o| o.radius + clearance).collect();
    let mut ring_points: Vec<([f64; 2], usize, f64)> = Vec::new();
    for (k, o) in domain.obstacles.iter().enumerate() {
        let arc_n = cfg
            .boundary_arc_segments
            .max((PI * o.radius / h_target).round() as usize);
        let mut spacing = PI * o.radius / arc_n as f64;
        let mut rho = o.radius;
        let side = if o.wall == Wall::Bottom { 1.0 } else { -1.0 };
        while spacing < RING_START * h_target {
            spacing = (spacing * RING_GROWTH).min(h_target);
            rho += spacing * 3f64.sqrt() / 2.0;
            let n = ((PI * rho / spacing).round() as usize).max(1);
            for j in 0..n {
                let th = (j as f64 + 0.5) * PI / n as f64;
                let p = [o.center[0] + rho * th.cos(), o.center[1] + side * rho * th.sin()];
                let gap = 0.5 * spacing;
                let inside = p[0] > gap && p[0] < cfg.length - gap && p[1] > gap && p[1] < cfg.height - gap;
                let clear_of_others = domain
                    .obstacles
                    .iter()
                    .enumerate()
                    .all(|(m, q)| m == k || dist(p, q.center) > q.radius + gap)
                    && ring_points
                        .iter()
                        .all(|&(q, m, sq)| m == k || dist(p, q) > 0.6 * spacing.max(sq));
                if inside && clear_of_others {
                    ring_points.push((p, k, spacing));
                }
            }
            exclusion[k] = rho + clearance;
        }
    }
    points.extend(ring_points.iter().map(|r| r.0));

    // Staggered interior lattice, kept away from the boundary.
    for r in 1..rows {
        let y = r as f64 * dy;
        let shift = if r % 2 == 1 { 0.5 * dx } else { 0.0 };
        for c in 0..=cols {
            let x = c as f64 * dx + shift;
            if x < clearance || x > cfg.length - clearance {
                continue;
            }
            if y < clearance || y > cfg.height - clearance {
                continue;
            }
            let near_obstacle = domain
                .obstacles
                .iter()
                .zip(&exclusion)
                .any(|(o, r)| dist([x, y], o.center) < *r);
            if !near_obstacle {
                points.push([x, y]);
            }
        }
    }

    // Half-disk polygons for the inside test.
    let notch_polys: Vec<Vec<[f64; 2]>> = (0..domain.obstacles.len())
        .map(|k| {
            (0..n_boundary)
                .filter(|&i| {
                    boundary_edges
                        .get(&(i, (i + 1) % n_boundary))
                        .is_some_and(|b| b.circle == Some(k))
                })
                .flat_map(|i| [points[i], points[(i + 1) % n_boundary]])
                .collect()
        })
        .collect();

    let mut triangles = fluid_triangles(&points, &constraints, domain, &notch_polys)?;
    for _ in 0..SMOOTHING_SWEEPS {
        smooth_interior(&mut points, &triangles, n_boundary, domain, 0.1 * h_target);
        triangles = fluid_triangles(&points, &constraints, domain, &notch_polys)?;
    }

    let mut mesh = Mesh {
        vertices: points,
        triangles,
        facets: Vec::new(),
        circles: domain
            .obstacles
            .iter()
            .map(|o| Circle {
                center: o.center,
                radius: o.radius,
            })
            .collect(),
        h_target,
    };
    for t in 0..mesh.n_triangles() {
        if mesh.signed_area(t) < 0.0 {
            mesh.triangles[t].swap(1, 2);
        }
    }
    mesh.facets = boundary_facets(&mesh.triangles, |a, b| {
        boundary_edges.get(&(a, b)).map(|bi| (bi.tag, bi.circle))
    })?;
    if mesh.facets.len() != n_boundary {
        return Err(Error::Triangulation(format!(
            "{} boundary edges after triangulation, {} expected",
            mesh.facets.len(),
            n_boundary
        )));
    }
    mesh.check().map_err(Error::Triangulation)?;

    let q = mesh.quality();
    if q.min_angle_deg < MIN_ANGLE_DEG {
        return Err(Error::MeshQuality {
            min_angle_deg: q.min_angle_deg,
            limit_deg: MIN_ANGLE_DEG,
        });
    }
    Ok(mesh)
}

const SMOOTHING_SWEEPS: usize = 4;
/// Rings are added while the local spacing is below this fraction of `h`.
const RING_START: f64 = 0.6;
/// Spacing ratio between consecutive rings.
const RING_GROWTH: f64 = 1.4;

fn fluid_triangles(
    points: &[[f64; 2]],
    constraints: &[[usize; 2]],
    domain: &PlanarDomain,
    notch_polys: &[Vec<[f64; 2]>],
) -> Result<Vec<[usize; 3]>> {
    let spade_points: Vec<Point2<f64>> = points.iter().map(|p| Point2::new(p[0], p[1])).collect();
    let cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::bulk_load_cdt(spade_points, constraints.to_vec())
        .map_err(|e| Error::Triangulation(format!("{e:?}")))?;
    if cdt.num_vertices() != points.len() {
        return Err(Error::Triangulation("duplicate input points".into()));
    }
    let mut triangles = Vec::new();
    for face in cdt.inner_faces() {
        let [a, b, c] = face.vertices().map(|v| v.fix().index());
        let centroid = [
            (points[a][0] + points[b][0] + points[c][0]) / 3.0,
            (points[a][1] + points[b][1] + points[c][1]) / 3.0,
        ];
        let inside_notch = domain.obstacles.iter().zip(notch_polys).any(|(o, poly)| {
            dist(centroid, o.center) < o.radius && point_in_polygon(centroid, poly)
        });
        if !inside_notch {
            triangles.push([a, b, c]);
        }
    }
    Ok(triangles)
}

/// One Laplacian sweep over the vertices after the first `fixed` ones.
/// Moves that would bring a vertex within `margin` of the outline are
/// skipped.
fn smooth_interior(
    points: &mut [[f64; 2]],
    triangles: &[[usize; 3]],
    fixed: usize,
    domain: &PlanarDomain,
    margin: f64,
) {
    let cfg = &domain.config;
    let mut sum = vec![[0.0f64; 2]; points.len()];
    let mut count = vec![0usize; points.len()];
    let mut seen: std::collections::HashSet<(usize, usize)> = std::collections::HashSet::new();
    for tri in triangles {
        for k in 0..3 {
            let (a, b) = sorted(tri[k], tri[(k + 1) % 3]);
            if seen.insert((a, b)) {
                for (i, j) in [(a, b), (b, a)] {
                    sum[i][0] += points[j][0];
                    sum[i][1] += points[j][1];
                    count[i] += 1;
                }
            }
        }
    }
    for i in fixed..points.len() {
        if count[i] == 0 {
            continue;
        }
        let p = [sum[i][0] / count[i] as f64, sum[i][1] / count[i] as f64];
        let inside = p[0] > margin
            && p[0] < cfg.length - margin
            && p[1] > margin
            && p[1] < cfg.height - margin
            && domain
                .obstacles
                .iter()
                .all(|o| dist(p, o.center) > o.radius + margin);
        if inside {
            points[i] = p;
        }
    }
}

fn boundary_facets(
    triangles: &[[usize; 3]],
    lookup: impl Fn(usize, usize) -> Option<(BoundaryTag, Option<usize>)>,
) -> Result<Vec<Facet>> {
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in triangles {
        for k in 0..3 {
            *count.entry(sorted(tri[k], tri[(k + 1) % 3])).or_default() += 1;
        }
    }
    let mut facets = Vec::new();
    for tri in triangles {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if count[&sorted(a, b)] == 1 {
                let (tag, circle) = lookup(a, b).ok_or_else(|| {
                    Error::Triangulation(format!("edge ({a}, {b}) lies on no boundary segment"))
                })?;
                facets.push(Facet { v: [a, b], tag, circle });
            }
        }
    }
    facets.sort_by_key(|f| f.v);
    Ok(facets)
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    // Polygon given as consecutive edge pairs; closed implicitly by the
    // diameter on the wall, which the crossing test handles by closing the
    // last vertex back to the first.
    let mut pts: Vec<[f64; 2]> = poly.chunks(2).map(|e| e[0]).collect();
    if let Some(last) = poly.last() {
        pts.push(*last);
    }
    let n = pts.len();
    let mut inside = false;
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Uniform red refinement: every triangle is split into four. Midpoints of
/// SURFACE facets are moved onto their circle.
pub fn refine(mesh: &Mesh) -> Mesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::with_capacity(mesh.n_triangles() * 2);
    let mut surface_circle: HashMap<(usize, usize), usize> = HashMap::new();
    for f in mesh.facets_with(BoundaryTag::Surface) {
        surface_circle.insert(sorted(f.v[0], f.v[1]), f.circle.unwrap());
    }
    let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
        let key = sorted(a, b);
        *midpoint.entry(key).or_insert_with(|| {
            let (pa, pb) = (vertices[a], vertices[b]);
            let mut m = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            if let Some(&c) = surface_circle.get(&key) {
                m = mesh.circles[c].project(m);
            }
            vertices.push(m);
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(4 * mesh.n_triangles());
    for &[a, b, c] in &mesh.triangles {
        let ab = mid(a, b, &mut vertices);
        let bc = mid(b, c, &mut vertices);
        let ca = mid(c, a, &mut vertices);
        triangles.push([a, ab, ca]);
        triangles.push([ab, b, bc]);
        triangles.push([ca, bc, c]);
        triangles.push([ab, bc, ca]);
    }
    let mut facets = Vec::with_capacity(2 * mesh.facets.len());
    for f in &mesh.facets {
        let m = midpoint[&sorted(f.v[0], f.v[1])];
        facets.push(Facet { v: [f.v[0], m], ..*f });
        facets.push(Facet { v: [m, f.v[1]], ..*f });
    }
    facets.sort_by_key(|f| f.v);
    Mesh {
        vertices,
        triangles,
        facets,
        circles: mesh.circles.clone(),
        h_target: 0.5 * mesh.h_target,
    }
}

/// Meshes from coarse to fine, each a uniform refinement of the previous.
#[derive(Debug, Clone)]
pub struct RefinementLadder {
    pub meshes: Vec<Mesh>,
}

impl RefinementLadder {
    pub fn build(domain: &PlanarDomain, h_target: f64, refinements: usize) -> Result<Self> {
        let mut meshes = vec![triangulate(domain, h_target)?];
        for _ in 0..refinements {
            let next = refine(meshes.last().unwrap());
            meshes.push(next);
        }
        Ok(Self { meshes })
    }
}

/// Triangle lookup by position over a uniform bucket grid.
pub struct PointLocator<'a> {
    mesh: &'a Mesh,
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &mesh.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        let area = ((hi[0] - lo[0]) * (hi[1] - lo[1])).max(f64::MIN_POSITIVE);
        let cell = (area / mesh.n_triangles().max(1) as f64).sqrt() * 2.0;
        let nx = (((hi[0] - lo[0]) / cell).ceil() as usize).max(1);
        let ny = (((hi[1] - lo[1]) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let p = tri.map(|i| mesh.vertices[i]);
            let bx0 = (((p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min) - lo[0]) / cell) as usize).min(nx - 1);
            let bx1 = (((p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max) - lo[0]) / cell) as usize).min(nx - 1);
            let by0 = (((p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min) - lo[1]) / cell) as usize).min(ny - 1);
            let by1 = (((p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max) - lo[1]) / cell) as usize).min(ny - 1);
            for by in by0..=by1 {
                for bx in bx0..=bx1 {
                    buckets[by * nx + bx].push(t);
                }
            }
        }
        Self {
            mesh,
            origin: lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    /// Containing triangle and barycentric coordinates of `p`.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let fx = (p[0] - self.origin[0]) / self.cell;
        let fy = (p[1] - self.origin[1]) / self.cell;
        if fx < -1e-9 || fy < -1e-9 {
            return None;
        }
        let bx = (fx.max(0.0) as usize).min(self.nx - 1);
        let by = (fy.max(0.0) as usize).min(self.ny - 1);
        let tol = -1e-12;
        self.buckets[by * self.nx + bx].iter().find_map(|&t| {
            let l = barycentric(self.mesh, t, p);
            (l.iter().all(|&x| x >= tol)).then_some((t, l))
        })
    }
}

pub fn barycentric(mesh: &Mesh, t: usize, p: [f64; 2]) -> [f64; 3] {
    let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, GeometryConfig};
    use approx::assert_relative_eq;

    fn default_mesh(h: f64) -> Mesh {
        triangulate(&build_geometry(&GeometryConfig::default()).unwrap(), h).unwrap()
    }

    #[test]
    fn default_mesh_satisfies_invariants() {
        let cfg = GeometryConfig::default();
        let mesh = default_mesh(0.1);
        mesh.check().unwrap();
        let q = mesh.quality();
        assert!(q.min_angle_deg >= MIN_ANGLE_DEG);
        assert!(q.max_edge <= 2.0 * 0.1, "max edge {}", q.max_edge);
        assert_relative_eq!(mesh.area(), cfg.fluid_area(), max_relative = 1e-3);
        assert_relative_eq!(mesh.tag_length(BoundaryTag::Inlet), 1.0, max_relative = 1e-12);
        assert_relative_eq!(mesh.tag_length(BoundaryTag::Outlet), 1.0, max_relative = 1e-12);
        assert!(mesh.surface_deviation() <= 1e-12);
        for tag in BoundaryTag::ALL {
            assert!(mesh.has_tag(tag));
        }
    }

    #[test]
    fn plain_rectangle_count_lower_bound() {
        let dom = build_geometry(&GeometryConfig::empty_channel(17.5, 1.0)).unwrap();
        let h = 0.5;
        let mesh = triangulate(&dom, h).unwrap();
        mesh.check().unwrap();
        assert!(mesh.n_triangles() as f64 >= 2.0 * (17.5 / h) * (1.0 / h));
        assert!(!mesh.has_tag(BoundaryTag::Surface));
    }

    #[test]
    fn halving_h_quadruples_triangles() {
        let a = default_mesh(0.1).n_triangles() as f64;
        let b = default_mesh(0.05).n_triangles() as f64;
        let ratio = b / a;
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn refinement_splits_into_four_and_projects() {
        let mesh = default_mesh(0.12);
        let fine = refine(&mesh);
        assert_eq!(fine.n_triangles(), 4 * mesh.n_triangles());
        fine.check().unwrap();
        assert!(fine.surface_deviation() <= 1e-12);
        assert_eq!(fine.facets.len(), 2 * mesh.facets.len());
        let ladder = RefinementLadder::build(
            &build_geometry(&GeometryConfig::default()).unwrap(),
            0.12,
            2,
        )
        .unwrap();
        let counts: Vec<usize> = ladder.meshes.iter().map(Mesh::n_vertices).collect();
        assert!(counts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mesh = default_mesh(0.12);
        let back = Mesh::from_text(&mesh.to_text()).unwrap();
        assert_eq!(back, mesh);
        assert_eq!(back.checksum(), mesh.checksum());
    }

    #[test]
    fn unknown_tag_is_format_error() {
        let text = default_mesh(0.12).to_text().replacen("INLET", "PORCH", 1);
        assert!(matches!(Mesh::from_text(&text), Err(Error::Format { .. })));
    }

    #[test]
    fn empty_triangles_is_format_error() {
        let text = "POREFLOW-MESH 1\nH_TARGET 1\nCIRCLES 0\nVERTICES 1\n0 0\nTRIANGLES 0\nFACETS 0\n";
        assert!(matches!(Mesh::from_text(text), Err(Error::Format { .. })));
    }

    #[test]
    fn triangulation_is_deterministic() {
        assert_eq!(default_mesh(0.1).to_text(), default_mesh(0.1).to_text());
    }

    #[test]
    fn locator_finds_vertices() {
        let mesh = default_mesh(0.12);
        let loc = PointLocator::new(&mesh);
        for v in mesh.vertices.iter().step_by(7) {
            assert!(loc.locate(*v).is_some());
        }
        assert!(loc.locate([2.0, 0.1]).is_none(), "point inside an obstacle");
    }
}
