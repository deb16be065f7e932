//! Gauss rules on segments and triangles.

use nalgebra::{Point2, Vector2};

/// Gauss-Legendre nodes and weights on `[-1, 1]` with `n` points.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-type initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_and_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Number of 1D points that makes a Gauss rule exact for degree `q`.
pub fn points_for_degree(q: usize) -> usize {
    q / 2 + 1
}

/// A weighted point set in the plane.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<Point2<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(&Point2<f64>) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    pub fn extend(&mut self, other: &QuadratureRule) {
        self.points.extend_from_slice(&other.points);
        self.weights.extend_from_slice(&other.weights);
    }
}

/// Gauss rule on the segment `a -> b`, exact for polynomials of degree `q`.
pub fn segment_rule(a: &Point2<f64>, b: &Point2<f64>, q: usize) -> QuadratureRule {
    let (x, w) = gauss_legendre(points_for_degree(q));
    let len = (b - a).norm();
    let mut rule = QuadratureRule::default();
    for (xi, wi) in x.iter().zip(&w) {
        let s = 0.5 * (xi + 1.0);
        rule.points.push(a + (b - a) * s);
        rule.weights.push(0.5 * wi * len);
    }
    rule
}

/// Collapsed (Duffy) tensor Gauss rule on a triangle, exact for degree `q`.
///
/// The collapse adds one degree in the collapsed direction, so both directions
/// use enough points for degree `q + 1`.
pub fn triangle_rule(p: &[Point2<f64>; 3], q: usize) -> QuadratureRule {
    let n = points_for_degree(q + 1);
    let (x, w) = gauss_legendre(n);
    let e1: Vector2<f64> = p[1] - p[0];
    let e2: Vector2<f64> = p[2] - p[0];
    let jac = e1.perp(&e2).abs();
    let mut rule = QuadratureRule::default();
    for (u, wu) in x.iter().zip(&w) {
        let s = 0.5 * (u + 1.0);
        for (v, wv) in x.iter().zip(&w) {
            let t = 0.5 * (v + 1.0);
            // (s, t) in the unit square mapped to the reference triangle.
            let xi = s * (1.0 - t);
            let eta = t;
            rule.points.push(p[0] + e1 * xi + e2 * eta);
            rule.weights.push(0.25 * wu * wv * (1.0 - t) * jac);
        }
    }
    rule
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_nodes_known_values() {
        let (x, w) = gauss_legendre(2);
        let r = 1.0 / 3f64.sqrt();
        assert!((x[0] + r).abs() < 1e-15 && (x[1] - r).abs() < 1e-15);
        assert!((w[0] - 1.0).abs() < 1e-15);
        let (x, w) = gauss_legendre(3);
        assert!(x[1].abs() < 1e-15);
        assert!((w[1] - 8.0 / 9.0).abs() < 1e-14);
        assert!((x[2] - 0.6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn segment_rule_exact_for_degree() {
        for q in 0..12 {
            let a = Point2::new(0.3, -0.2);
            let b = Point2::new(1.1, 0.4);
            let rule = segment_rule(&a, &b, q);
            let len = (b - a).norm();
            // Integrate s^q along the segment parameter.
            let approx = rule.integrate(|p| ((p - a).norm() / len).powi(q as i32));
            assert!((approx - len / (q as f64 + 1.0)).abs() < 1e-13, "q = {q}");
        }
    }

    #[test]
    fn triangle_rule_exact_for_monomials() {
        // Reference triangle: int x^a y^b = a! b! / (a + b + 2)!
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        let tri = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)];
        for q in 0..10u32 {
            let rule = triangle_rule(&tri, q as usize);
            for a in 0..=q {
                let b = q - a;
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                let approx = rule.integrate(|p| p.x.powi(a as i32) * p.y.powi(b as i32));
                assert!((approx - exact).abs() < 1e-14, "q = {q}, a = {a}");
            }
        }
    }

    #[test]
    fn triangle_rule_orientation_independent() {
        let tri = [Point2::new(0.0, 0.0), Point2::new(0.0, 2.0), Point2::new(1.0, 0.0)];
        let rule = triangle_rule(&tri, 2);
        assert!((rule.total_weight() - 1.0).abs() < 1e-14);
        assert!(rule.weights.iter().all(|&w| w > 0.0));
    }
}
