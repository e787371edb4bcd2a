//! Channel geometry: a rectangle with half-disk obstacles attached
//! alternately to the bottom and top walls.
//!
//! The fluid region is a single simply connected polygon once the arcs are
//! discretized; the half-disks are notches in its outer loop. The loop is
//! traversed counter-clockwise so the fluid lies to the left of every
//! segment.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub length: f64,
    pub height: f64,
    pub obstacle_radius: f64,
    pub obstacle_pitch: f64,
    pub obstacle_count: usize,
    pub first_center_x1: f64,
    /// Minimum number of chords per half circle.
    pub boundary_arc_segments: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            length: 17.5,
            height: 1.0,
            obstacle_radius: 0.4,
            obstacle_pitch: 1.5,
            obstacle_count: 10,
            first_center_x1: 2.0,
            boundary_arc_segments: 20,
        }
    }
}

impl GeometryConfig {
    /// Plain channel without obstacles.
    pub fn empty_channel(length: f64, height: f64) -> Self {
        Self {
            length,
            height,
            obstacle_count: 0,
            ..Self::default()
        }
    }

    pub fn obstacles(&self) -> Vec<Obstacle> {
        (0..self.obstacle_count)
            .map(|k| {
                let wall = if k % 2 == 0 { Wall::Bottom } else { Wall::Top };
                let cy = match wall {
                    Wall::Bottom => 0.0,
                    Wall::Top => self.height,
                };
                Obstacle {
                    center: [self.first_center_x1 + k as f64 * self.obstacle_pitch, cy],
                    radius: self.obstacle_radius,
                    wall,
                }
            })
            .collect()
    }

    /// Smallest distance between the surfaces of two obstacles, or `None`
    /// with fewer than two obstacles.
    pub fn min_obstacle_gap(&self) -> Option<f64> {
        let obs = self.obstacles();
        let mut gap: Option<f64> = None;
        for i in 0..obs.len() {
            for j in i + 1..obs.len() {
                let d = dist(obs[i].center, obs[j].center) - obs[i].radius - obs[j].radius;
                gap = Some(gap.map_or(d, |g| g.min(d)));
            }
        }
        gap
    }

    /// Exact area of the fluid region.
    pub fn fluid_area(&self) -> f64 {
        self.length * self.height
            - self.obstacle_count as f64 * 0.5 * PI * self.obstacle_radius * self.obstacle_radius
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.length,
            self.height,
            self.obstacle_radius,
            self.obstacle_pitch,
            self.first_center_x1,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("geometry values must be finite".into()));
        }
        if self.length <= 0.0 || self.height <= 0.0 {
            return Err(Error::Config(format!(
                "channel extents must be positive (length {}, height {})",
                self.length, self.height
            )));
        }
        if self.boundary_arc_segments < 2 {
            return Err(Error::Config("boundary_arc_segments must be at least 2".into()));
        }
        if self.obstacle_count == 0 {
            return Ok(());
        }
        if self.obstacle_radius <= 0.0 {
            return Err(Error::Config("obstacle_radius must be positive".into()));
        }
        if self.obstacle_pitch <= 0.0 && self.obstacle_count > 1 {
            return Err(Error::Config("obstacle_pitch must be positive".into()));
        }
        let obs = self.obstacles();
        for (k, o) in obs.iter().enumerate() {
            // A half-disk reaching the opposite wall would cut the channel.
            if o.radius >= self.height {
                return Err(Error::WallOverlap {
                    index: k,
                    radius: o.radius,
                    height: self.height,
                });
            }
            if o.center[0] - o.radius <= 0.0 || o.center[0] + o.radius >= self.length {
                return Err(Error::OutOfDomain {
                    index: k,
                    detail: format!(
                        "x1 span [{}, {}] not inside (0, {})",
                        o.center[0] - o.radius,
                        o.center[0] + o.radius,
                        self.length
                    ),
                });
            }
        }
        for i in 0..obs.len() {
            for j in i + 1..obs.len() {
                let d = dist(obs[i].center, obs[j].center);
                let limit = obs[i].radius + obs[j].radius;
                if d <= limit {
                    return Err(Error::Overlap {
                        first: i,
                        second: j,
                        distance: d,
                        limit,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Wall {
    Bottom,
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
    pub wall: Wall,
}

/// Boundary classes of the fluid region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundaryTag {
    Inlet,
    Outlet,
    Symmetry,
    Surface,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [
        BoundaryTag::Inlet,
        BoundaryTag::Outlet,
        BoundaryTag::Symmetry,
        BoundaryTag::Surface,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::Inlet => "INLET",
            BoundaryTag::Outlet => "OUTLET",
            BoundaryTag::Symmetry => "SYMMETRY",
            BoundaryTag::Surface => "SURFACE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmentShape {
    Line { from: [f64; 2], to: [f64; 2] },
    /// Circular arc from `start` to `end` angle (radians, signed sweep).
    Arc {
        obstacle: usize,
        center: [f64; 2],
        radius: f64,
        start: f64,
        end: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySegment {
    pub shape: SegmentShape,
    pub tag: BoundaryTag,
}

impl BoundarySegment {
    pub fn length(&self) -> f64 {
        match self.shape {
            SegmentShape::Line { from, to } => dist(from, to),
            SegmentShape::Arc {
                radius, start, end, ..
            } => radius * (end - start).abs(),
        }
    }

    /// Split into `n` pieces; returns the `n + 1` points including both ends.
    /// Arc points lie exactly on the circle.
    pub fn points(&self, n: usize) -> Vec<[f64; 2]> {
        let n = n.max(1);
        (0..=n)
            .map(|i| {
                let s = i as f64 / n as f64;
                match self.shape {
                    SegmentShape::Line { from, to } => {
                        if i == n {
                            to
                        } else {
                            [from[0] + s * (to[0] - from[0]), from[1] + s * (to[1] - from[1])]
                        }
                    }
                    SegmentShape::Arc {
                        center,
                        radius,
                        start,
                        end,
                        ..
                    } => {
                        let a = start + s * (end - start);
                        point_on_circle(center, radius, a)
                    }
                }
            })
            .collect()
    }
}

/// Fluid region outline: one closed counter-clockwise loop.
#[derive(Debug, Clone)]
pub struct PlanarDomain {
    pub config: GeometryConfig,
    pub obstacles: Vec<Obstacle>,
    pub segments: Vec<BoundarySegment>,
}

impl PlanarDomain {
    /// Polygonalization using `boundary_arc_segments` chords per arc and one
    /// chord per straight segment.
    pub fn polygon(&self) -> Vec<([f64; 2], BoundaryTag)> {
        let mut out = Vec::new();
        for seg in &self.segments {
            let n = match seg.shape {
                SegmentShape::Line { .. } => 1,
                SegmentShape::Arc { .. } => self.config.boundary_arc_segments,
            };
            let pts = seg.points(n);
            for p in &pts[..pts.len() - 1] {
                out.push((*p, seg.tag));
            }
        }
        out
    }

    /// Total turning angle of the polygonal outline divided by 2π.
    pub fn turning_number(&self) -> f64 {
        let poly: Vec<[f64; 2]> = self.polygon().into_iter().map(|(p, _)| p).collect();
        let n = poly.len();
        let mut total = 0.0;
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            let c = poly[(i + 2) % n];
            let d1 = [b[0] - a[0], b[1] - a[1]];
            let d2 = [c[0] - b[0], c[1] - b[1]];
            let cross = d1[0] * d2[1] - d1[1] * d2[0];
            let dot = d1[0] * d2[0] + d1[1] * d2[1];
            total += cross.atan2(dot);
        }
        total / (2.0 * PI)
    }

    pub fn tag_length(&self, tag: BoundaryTag) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.tag == tag)
            .map(BoundarySegment::length)
            .sum()
    }
}

/// Lay out the channel outline with the obstacle notches.
pub fn build_geometry(config: &GeometryConfig) -> Result<PlanarDomain> {
    config.validate()?;
    let obstacles = config.obstacles();
    let (l, h) = (config.length, config.height);
    let mut segments = Vec::new();
    let line = |from: [f64; 2], to: [f64; 2], tag| BoundarySegment {
        shape: SegmentShape::Line { from, to },
        tag,
    };

    // Bottom wall, left to right.
    let mut x = 0.0;
    for (k, o) in obstacles.iter().enumerate().filter(|(_, o)| o.wall == Wall::Bottom) {
        let left = o.center[0] - o.radius;
        segments.push(line([x, 0.0], [left, 0.0], BoundaryTag::Symmetry));
        segments.push(BoundarySegment {
            shape: SegmentShape::Arc {
                obstacle: k,
                center: o.center,
                radius: o.radius,
                start: PI,
                end: 0.0,
            },
            tag: BoundaryTag::Surface,
        });
        x = o.center[0] + o.radius;
    }
    segments.push(line([x, 0.0], [l, 0.0], BoundaryTag::Symmetry));
    segments.push(line([l, 0.0], [l, h], BoundaryTag::Outlet));

    // Top wall, right to left.
    let mut x = l;
    for (k, o) in obstacles
        .iter()
        .enumerate()
        .rev()
        .filter(|(_, o)| o.wall == Wall::Top)
    {
        let right = o.center[0] + o.radius;
        segments.push(line([x, h], [right, h], BoundaryTag::Symmetry));
        segments.push(BoundarySegment {
            shape: SegmentShape::Arc {
                obstacle: k,
                center: o.center,
                radius: o.radius,
                start: 0.0,
                end: -PI,
            },
            tag: BoundaryTag::Surface,
        });
        x = o.center[0] - o.radius;
    }
    segments.push(line([x, h], [0.0, h], BoundaryTag::Symmetry));
    segments.push(line([0.0, h], [0.0, 0.0], BoundaryTag::Inlet));

    Ok(PlanarDomain {
        config: config.clone(),
        obstacles,
        segments,
    })
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub(crate) fn point_on_circle(center: [f64; 2], radius: f64, angle: f64) -> [f64; 2] {
    // Snap the wall contact points so they sit exactly on the wall line.
    let (s, c) = angle.sin_cos();
    let s = if (angle.abs() - PI).abs() < 1e-15 || angle == 0.0 { 0.0 } else { s };
    [center[0] + radius * c, center[1] + radius * s]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_layout_has_ten_notches() {
        let dom = build_geometry(&GeometryConfig::default()).unwrap();
        let arcs = dom
            .segments
            .iter()
            .filter(|s| matches!(s.shape, SegmentShape::Arc { .. }))
            .count();
        assert_eq!(arcs, 10);
        assert_abs_diff_eq!(dom.turning_number(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(dom.tag_length(BoundaryTag::Inlet), 1.0);
        assert_abs_diff_eq!(dom.tag_length(BoundaryTag::Outlet), 1.0);
    }

    #[test]
    fn empty_channel_is_rectangle() {
        let dom = build_geometry(&GeometryConfig::empty_channel(3.0, 1.0)).unwrap();
        assert_eq!(dom.segments.len(), 4);
        let tags: Vec<_> = dom.segments.iter().map(|s| s.tag).collect();
        assert_eq!(
            tags,
            vec![
                BoundaryTag::Symmetry,
                BoundaryTag::Outlet,
                BoundaryTag::Symmetry,
                BoundaryTag::Inlet
            ]
        );
        assert_abs_diff_eq!(dom.turning_number(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn minimum_gap_between_staggered_obstacles() {
        let gap = GeometryConfig::default().min_obstacle_gap().unwrap();
        let expected = (1.5f64 * 1.5 + 1.0).sqrt() - 0.8;
        assert_abs_diff_eq!(gap, expected, epsilon = 1e-14);
        assert_abs_diff_eq!(gap, 1.0028, epsilon = 1e-4);
    }

    #[test]
    fn radius_beyond_height_reaches_wall() {
        let cfg = GeometryConfig {
            obstacle_radius: 1.2,
            ..GeometryConfig::default()
        };
        assert!(matches!(build_geometry(&cfg), Err(Error::WallOverlap { .. })));
    }

    #[test]
    fn colliding_neighbours_are_rejected() {
        let cfg = GeometryConfig {
            obstacle_radius: 0.9,
            obstacle_pitch: 0.5,
            height: 1.0,
            ..GeometryConfig::default()
        };
        assert!(matches!(build_geometry(&cfg), Err(Error::Overlap { .. })));
    }

    #[test]
    fn obstacle_past_outlet_is_out_of_domain() {
        let cfg = GeometryConfig {
            length: 10.0,
            ..GeometryConfig::default()
        };
        assert!(matches!(build_geometry(&cfg), Err(Error::OutOfDomain { index: 6, .. })));
    }

    #[test]
    fn arc_points_lie_on_circle() {
        let dom = build_geometry(&GeometryConfig::default()).unwrap();
        for seg in &dom.segments {
            if let SegmentShape::Arc { center, radius, .. } = seg.shape {
                for p in seg.points(17) {
                    assert!((dist(p, center) - radius).abs() < 1e-15);
                }
            }
        }
    }
}
