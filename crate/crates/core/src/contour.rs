//! Isolines of a scalar field sampled on a rectilinear grid (marching
//! squares), joined into polylines.

use std::collections::HashMap;
use std::fmt::Write as _;

/// Values `z[j * nx + i]` at `(x[i], y[j])`.
#[derive(Debug, Clone)]
pub struct GridField<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub z: &'a [f64],
}

/// Grid edge identifier used to join segments: horizontal edges between
/// `(i, j)` and `(i + 1, j)` and vertical edges between `(i, j)` and
/// `(i, j + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum EdgeId {
    H(usize, usize),
    V(usize, usize),
}

impl GridField<'_> {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.z[j * self.x.len() + i]
    }

    fn crossing(&self, e: EdgeId, level: f64) -> [f64; 2] {
        let (a, b, pa, pb) = match e {
            EdgeId::H(i, j) => (self.at(i, j), self.at(i + 1, j), [self.x[i], self.y[j]], [self.x[i + 1], self.y[j]]),
            EdgeId::V(i, j) => (self.at(i, j), self.at(i, j + 1), [self.x[i], self.y[j]], [self.x[i], self.y[j + 1]]),
        };
        let s = if b == a { 0.5 } else { ((level - a) / (b - a)).clamp(0.0, 1.0) };
        [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])]
    }

    fn segments(&self, level: f64) -> Vec<(EdgeId, EdgeId)> {
        let (nx, ny) = (self.x.len(), self.y.len());
        let mut out = Vec::new();
        for j in 0..ny.saturating_sub(1) {
            for i in 0..nx.saturating_sub(1) {
                let v = [self.at(i, j), self.at(i + 1, j), self.at(i + 1, j + 1), self.at(i, j + 1)];
                if v.iter().any(|z| !z.is_finite()) {
                    continue;
                }
                let above = v.map(|z| z >= level);
                // Cell edges counter-clockwise from the bottom.
                let edges = [EdgeId::H(i, j), EdgeId::V(i + 1, j), EdgeId::H(i, j + 1), EdgeId::V(i, j)];
                let cut: Vec<EdgeId> = (0..4)
                    .filter(|&k| above[k] != above[(k + 1) % 4])
                    .map(|k| edges[k])
                    .collect();
                match cut.len() {
                    2 => out.push((cut[0], cut[1])),
                    4 => {
                        // Saddle: decide by the cell-center average.
                        let center = 0.25 * v.iter().sum::<f64>();
                        if (center >= level) == above[0] {
                            out.push((cut[0], cut[1]));
                            out.push((cut[2], cut[3]));
                        } else {
                            out.push((cut[0], cut[3]));
                            out.push((cut[1], cut[2]));
                        }
                    }
                    _ => {}
                }
            }
        }
        out
    }

    /// Polylines of the isoline `z = level`; closed loops repeat their
    /// first point at the end.
    pub fn isolines(&self, level: f64) -> Vec<Vec<[f64; 2]>> {
        let segs = self.segments(level);
        let mut by_edge: HashMap<EdgeId, Vec<usize>> = HashMap::new();
        for (k, (a, b)) in segs.iter().enumerate() {
            by_edge.entry(*a).or_default().push(k);
            by_edge.entry(*b).or_default().push(k);
        }
        let mut used = vec![false; segs.len()];
        let mut lines = Vec::new();
        let next = |edge: EdgeId, used: &[bool]| by_edge[&edge].iter().copied().find(|&s| !used[s]);
        for start in 0..segs.len() {
            if used[start] {
                continue;
            }
            used[start] = true;
            let mut chain = vec![segs[start].0, segs[start].1];
            // Grow forward, then backward.
            for forward in [true, false] {
                loop {
                    let end = if forward { *chain.last().unwrap() } else { chain[0] };
                    let Some(s) = next(end, &used) else { break };
                    used[s] = true;
                    let (a, b) = segs[s];
                    let other = if a == end { b } else { a };
                    if forward {
                        chain.push(other);
                    } else {
                        chain.insert(0, other);
                    }
                }
            }
            lines.push(chain.into_iter().map(|e| self.crossing(e, level)).collect());
        }
        lines
    }
}

/// CSV with columns `level,line,x,y`, one row per polyline vertex.
pub fn isolines_csv(field: &GridField<'_>, levels: &[f64]) -> String {
    let mut s = String::from("level,line,x,y\n");
    for &level in levels {
        for (k, line) in field.isolines(level).iter().enumerate() {
            for p in line {
                let _ = writeln!(s, "{level:.16e},{k},{:.16e},{:.16e}", p[0], p[1]);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_isoline_is_one_closed_loop() {
        let x: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let y = x.clone();
        let z: Vec<f64> = y
            .iter()
            .flat_map(|&b| x.iter().map(move |&a| a.hypot(b)))
            .collect();
        let f = GridField { x: &x, y: &y, z: &z };
        let lines = f.isolines(1.0);
        assert_eq!(lines.len(), 1);
        let l = &lines[0];
        assert_eq!(l.first(), l.last());
        for p in l {
            assert!((p[0].hypot(p[1]) - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn level_outside_range_gives_nothing() {
        let x = [0.0, 1.0];
        let z = [0.0, 1.0, 2.0, 3.0];
        let f = GridField { x: &x, y: &x, z: &z };
        assert!(f.isolines(5.0).is_empty());
        assert_eq!(f.isolines(1.5).len(), 1);
    }
}
