//! Gauss-Legendre quadrature and the rectangle contour used by the subspace
//! estimator.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Nodes (ascending, in `(-1, 1)`) and weights of the `n`-point
/// Gauss-Legendre rule, by Newton iteration on the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Tricomi-style initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// One quadrature node on a contour: evaluate the integrand at `z` and
/// accumulate `f(z) * weight` (the weight already carries the edge tangent
/// and scaling, so the sum approximates the path integral).
#[derive(Debug, Clone, Copy)]
pub struct ContourNode {
    pub z: C64,
    pub weight: C64,
}

/// Boundary of the rectangle `[x_minus, x_plus] x [-y, y]`, traversed
/// clockwise.
///
/// Horizontal edges sit at `+-iy` and never touch the real axis. Vertical
/// edges are split at the axis into two half-edges so that the (interior)
/// Gauss nodes stay strictly off it regardless of the node count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourSpec {
    pub x_minus: f64,
    pub x_plus: f64,
    pub y: f64,
    pub nodes_per_edge: usize,
}

impl ContourSpec {
    pub fn new(x_minus: f64, x_plus: f64, y: f64, nodes_per_edge: usize) -> Result<Self> {
        if !(x_minus.is_finite() && x_plus.is_finite() && y.is_finite()) {
            return Err(Error::Quadrature("contour parameters must be finite".into()));
        }
        if x_minus >= x_plus {
            return Err(Error::Quadrature(format!(
                "x_minus = {x_minus} must be < x_plus = {x_plus}"
            )));
        }
        if y <= 0.0 {
            return Err(Error::Quadrature(format!("y = {y} must be > 0")));
        }
        if nodes_per_edge < 4 {
            return Err(Error::Quadrature(format!(
                "nodes_per_edge = {nodes_per_edge} must be >= 4"
            )));
        }
        Ok(ContourSpec {
            x_minus,
            x_plus,
            y,
            nodes_per_edge,
        })
    }

    /// All nodes in clockwise traversal order, starting at the top-left
    /// corner. Each edge carries a composite rule: panels of ~16 Gauss
    /// nodes, so doubling `nodes_per_edge` halves the panel length.
    pub fn nodes(&self) -> Vec<ContourNode> {
        let k = self.nodes_per_edge;
        let k_half = k.div_ceil(2);
        let mut out = Vec::with_capacity(self.total_nodes());

        let mut push_composite = |a: C64, b: C64, total: usize| {
            let (panels, per_panel) = composite_layout(total);
            let (ts, ws) = gauss_legendre(per_panel);
            let step = (b - a) / panels as f64;
            for p in 0..panels {
                let pa = a + step * p as f64;
                let pb = a + step * (p + 1) as f64;
                let mid = (pa + pb) * 0.5;
                let half = (pb - pa) * 0.5;
                for (&t, &w) in ts.iter().zip(&ws) {
                    out.push(ContourNode {
                        z: mid + half * t,
                        weight: half * w,
                    });
                }
            }
        };

        let tl = C64::new(self.x_minus, self.y);
        let tr = C64::new(self.x_plus, self.y);
        let r0 = C64::new(self.x_plus, 0.0);
        let br = C64::new(self.x_plus, -self.y);
        let bl = C64::new(self.x_minus, -self.y);
        let l0 = C64::new(self.x_minus, 0.0);

        // clockwise: top (left to right), right (down), bottom (right to
        // left), left (up); vertical edges split at the axis so no node
        // can land on it
        push_composite(tl, tr, k);
        push_composite(tr, r0, k_half);
        push_composite(r0, br, k_half);
        push_composite(br, bl, k);
        push_composite(bl, l0, k_half);
        push_composite(l0, tl, k_half);
        out
    }

    pub fn total_nodes(&self) -> usize {
        let count = |total: usize| {
            let (panels, per_panel) = composite_layout(total);
            panels * per_panel
        };
        2 * count(self.nodes_per_edge) + 4 * count(self.nodes_per_edge.div_ceil(2))
    }
}

fn composite_layout(total: usize) -> (usize, usize) {
    let panels = total.div_ceil(16).max(1);
    (panels, total.div_ceil(panels))
}

/// Approximate winding number of the closed polyline `points` (in traversal
/// order) around `c`, as total argument increment over `2 pi`.
pub fn winding_number(points: &[C64], c: C64) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..points.len() {
        let a = points[i] - c;
        let b = points[(i + 1) % points.len()] - c;
        let cross = a.re * b.im - a.im * b.re;
        let dot = a.re * b.re + a.im * b.im;
        total += cross.atan2(dot);
    }
    total / std::f64::consts::TAU
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        for n in [4usize, 8, 16, 64] {
            let (x, w) = gauss_legendre(n);
            let mass: f64 = w.iter().sum();
            assert!((mass - 2.0).abs() < 1e-13, "n = {n}: mass {mass}");
            // degree 2n-1 monomial: odd, integrates to 0
            let odd: f64 = x
                .iter()
                .zip(&w)
                .map(|(&xi, &wi)| wi * xi.powi(2 * n as i32 - 1))
                .sum();
            assert!(odd.abs() < 1e-13);
            // x^4 on [-1, 1] = 2/5
            let quartic: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(4)).sum();
            assert!((quartic - 0.4).abs() < 1e-13);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn contour_validation() {
        assert!(ContourSpec::new(1.0, 0.0, 0.5, 8).is_err());
        assert!(ContourSpec::new(-1.0, 2.0, 0.0, 8).is_err());
        assert!(ContourSpec::new(-1.0, 2.0, 0.5, 3).is_err());
        assert!(ContourSpec::new(-1.0, 2.0, 0.5, 4).is_ok());
    }

    #[test]
    fn no_node_touches_the_real_axis() {
        let c = ContourSpec::new(-0.5, 3.0, 0.25, 5).unwrap();
        for node in c.nodes() {
            assert!(node.z.im != 0.0, "node {} on the axis", node.z);
        }
        assert_eq!(c.nodes().len(), c.total_nodes());
    }

    #[test]
    fn cauchy_integrals_have_the_clockwise_sign() {
        let c = ContourSpec::new(-1.0, 2.0, 0.8, 32).unwrap();
        let integrate = |f: &dyn Fn(C64) -> C64| -> C64 {
            let acc: C64 = c.nodes().iter().map(|n| f(n.z) * n.weight).sum();
            acc / C64::new(0.0, std::f64::consts::TAU)
        };
        // pole inside: clockwise orientation gives -1
        let inside = integrate(&|z| (z - C64::new(0.5, 0.0)).inv());
        assert!((inside - C64::new(-1.0, 0.0)).norm() < 1e-10, "{inside}");
        // pole outside: 0
        let outside = integrate(&|z| (z - C64::new(5.0, 0.0)).inv());
        assert!(outside.norm() < 1e-10);
        // entire integrand: 0
        let entire = integrate(&|z| z.exp());
        assert!(entire.norm() < 1e-9);
    }

    #[test]
    fn quadrature_error_decays_with_node_count() {
        let f = |z: C64| (z - C64::new(0.4, 0.05)).inv();
        let reference = C64::new(-1.0, 0.0);
        let err = |k: usize| {
            let c = ContourSpec::new(-1.0, 2.0, 0.6, k).unwrap();
            let acc: C64 = c.nodes().iter().map(|n| f(n.z) * n.weight).sum();
            (acc / C64::new(0.0, std::f64::consts::TAU) - reference).norm()
        };
        let e16 = err(16);
        let e32 = err(32);
        let e64 = err(64);
        assert!(e32 < e16 / 3.0, "{e16} -> {e32}");
        assert!(e64 < e32 / 3.0 || e64 < 1e-12, "{e32} -> {e64}");
    }

    #[test]
    fn winding_counts_turns() {
        let c = ContourSpec::new(-1.0, 2.0, 0.5, 16).unwrap();
        let pts: Vec<C64> = c.nodes().iter().map(|n| n.z).collect();
        let inside = winding_number(&pts, C64::new(0.3, 0.0));
        assert!((inside + 1.0).abs() < 1e-6, "clockwise winding {inside}");
        let outside = winding_number(&pts, C64::new(4.0, 0.0));
        assert!(outside.abs() < 1e-6);
    }
}
