//! Lagrange P1/P2 shape functions on affine triangles and quadrature rules.

use crate::mesh::Mesh;

/// Degree-4 rule on the reference triangle: (barycentric point, weight),
/// weights summing to one (multiply by the triangle area).
pub const TRI_QUAD4: [([f64; 3], f64); 6] = [
    ([0.108103018168070, 0.445948490915965, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.108103018168070, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.445948490915965, 0.108103018168070], 0.223381589678011),
    ([0.816847572980459, 0.091576213509771, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.816847572980459, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.091576213509771, 0.816847572980459], 0.109951743655322),
];

/// Three-point Gauss rule on [0, 1]: (position, weight).
pub const EDGE_GAUSS3: [(f64, f64); 3] = [
    (0.112701665379258311, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887298334620741689, 5.0 / 18.0),
];

/// Affine triangle data: area and constant barycentric gradients.
#[derive(Debug, Clone, Copy)]
pub struct TriGeom {
    pub area: f64,
    pub grad: [[f64; 2]; 3],
}

impl TriGeom {
    pub fn new(mesh: &Mesh, t: usize) -> Self {
        let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let inv = 1.0 / det;
        Self {
            area: 0.5 * det,
            grad: [
                [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
                [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
                [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
            ],
        }
    }
}

/// P2 values at barycentric point `l`: vertices 0..3 then edge midpoints
/// (0,1), (1,2), (2,0).
#[inline]
pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

#[inline]
pub fn p2_gradients(l: [f64; 3], g: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let lin = |a: f64, ga: [f64; 2], b: f64, gb: [f64; 2]| {
        [4.0 * (a * gb[0] + b * ga[0]), 4.0 * (a * gb[1] + b * ga[1])]
    };
    [
        [(4.0 * l[0] - 1.0) * g[0][0], (4.0 * l[0] - 1.0) * g[0][1]],
        [(4.0 * l[1] - 1.0) * g[1][0], (4.0 * l[1] - 1.0) * g[1][1]],
        [(4.0 * l[2] - 1.0) * g[2][0], (4.0 * l[2] - 1.0) * g[2][1]],
        lin(l[0], g[0], l[1], g[1]),
        lin(l[1], g[1], l[2], g[2]),
        lin(l[2], g[2], l[0], g[0]),
    ]
}

/// P2 values restricted to an edge at parameter `s` from its first to its
/// second endpoint: [first, second, midpoint].
#[inline]
pub fn p2_edge_values(s: f64) -> [f64; 3] {
    [(1.0 - s) * (1.0 - 2.0 * s), s * (2.0 * s - 1.0), 4.0 * s * (1.0 - s)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate_monomial(px: u32, py: u32) -> f64 {
        // Reference triangle (0,0),(1,0),(0,1): x = l1, y = l2, area 1/2.
        TRI_QUAD4
            .iter()
            .map(|(l, w)| 0.5 * w * l[1].powi(px as i32) * l[2].powi(py as i32))
            .sum()
    }

    fn exact_monomial(px: u32, py: u32) -> f64 {
        let f = |n: u32| (1..=n).map(f64::from).product::<f64>();
        f(px) * f(py) / f(px + py + 2)
    }

    #[test]
    fn quadrature_exact_to_degree_four() {
        for px in 0..=4 {
            for py in 0..=(4 - px) {
                let q = integrate_monomial(px, py);
                let e = exact_monomial(px, py);
                assert!((q - e).abs() < 1e-14, "x^{px} y^{py}: {q} vs {e}");
            }
        }
    }

    #[test]
    fn edge_rule_exact_to_degree_five() {
        for p in 0..=5 {
            let q: f64 = EDGE_GAUSS3.iter().map(|(s, w)| w * s.powi(p)).sum();
            assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn p2_partition_of_unity_and_nodality() {
        let l = [0.2, 0.3, 0.5];
        let v = p2_values(l);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let nodes = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.5, 0.5, 0.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
        ];
        for (i, n) in nodes.iter().enumerate() {
            let v = p2_values(*n);
            for (j, x) in v.iter().enumerate() {
                assert!((x - if i == j { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
        let g = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        let grads = p2_gradients(l, &g);
        let sx: f64 = grads.iter().map(|d| d[0]).sum();
        let sy: f64 = grads.iter().map(|d| d[1]).sum();
        assert!(sx.abs() < 1e-14 && sy.abs() < 1e-14);
    }
}
