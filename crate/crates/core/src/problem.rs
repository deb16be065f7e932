//! PDE data: coefficients, method parameters and exact solutions.

use nalgebra::{Matrix2, Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::geometry::{Domain, LevelSet};

/// Physical coefficients. Diffusion is isotropic, `A_i = a_i I`; on the interface
/// it acts on tangential gradients only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Coefficients {
    /// `a_0, a_1, a_2`.
    pub diffusion: [f64; 3],
    /// `kappa_1, kappa_2`.
    pub kappa: [f64; 2],
    /// `kappa_01, kappa_02`.
    pub kappa0: [f64; 2],
    /// Strength of the rotation `beta = s (y - c_y, -(x - c_x))`.
    pub velocity_scale: f64,
    /// Centre of the rotation.
    pub velocity_center: [f64; 2],
}

impl Default for Coefficients {
    fn default() -> Self {
        Self {
            diffusion: [1.0, 1.0, 0.5],
            kappa: [2.0, 0.5],
            kappa0: [1.0, 2.0],
            velocity_scale: 1.0,
            velocity_center: [0.0, 0.0],
        }
    }
}

impl Coefficients {
    pub fn diffusion(&self, d: Domain) -> f64 {
        self.diffusion[d.index()]
    }

    pub fn diffusion_matrix(&self, d: Domain) -> Matrix2<f64> {
        Matrix2::identity() * self.diffusion(d)
    }

    /// `kappa_i` for a bulk domain.
    pub fn kappa(&self, d: Domain) -> f64 {
        self.kappa[d.index() - 1]
    }

    /// `kappa_{0,i}` for a bulk domain.
    pub fn kappa0(&self, d: Domain) -> f64 {
        self.kappa0[d.index() - 1]
    }

    /// Test-function weights: 1 on the interface, `kappa_i / kappa_{0,i}` in the bulk.
    pub fn kappa_tilde(&self, d: Domain) -> f64 {
        match d {
            Domain::Interface => 1.0,
            _ => self.kappa(d) / self.kappa0(d),
        }
    }

    pub fn velocity(&self, p: &Point2<f64>) -> Vector2<f64> {
        let c = self.velocity_center;
        Vector2::new(p.y - c[1], -(p.x - c[0])) * self.velocity_scale
    }

    pub fn with_velocity_center(mut self, c: Point2<f64>) -> Self {
        self.velocity_center = [c.x, c.y];
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = self.diffusion.iter().chain(&self.kappa).chain(&self.kappa0).all(|&v| v.is_finite() && v > 0.0);
        if !positive {
            return Err("diffusion and kappa coefficients must be positive".into());
        }
        if !self.velocity_scale.is_finite() {
            return Err("velocity scale must be finite".into());
        }
        Ok(())
    }
}

/// Penalty, stabilization and partition parameters of the method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodParameters {
    /// Nitsche diffusion penalties per domain.
    pub tau_a: [f64; 3],
    /// Upwind convection penalties per domain.
    pub tau_b: [f64; 3],
    /// Ghost-penalty constants `tau_{i,k}`; the bulk domains use `k = 0, 1`.
    pub tau_stab: [[f64; 3]; 3],
    /// Large-element thresholds.
    pub gamma: [f64; 3],
    /// Face weight of the first-listed element.
    pub theta: f64,
}

impl Default for MethodParameters {
    fn default() -> Self {
        let a = Coefficients::default().diffusion;
        Self {
            tau_a: [10.0; 3],
            tau_b: [0.5; 3],
            tau_stab: [[a[0], a[0], 0.1 * a[0]], [a[1], 0.1 * a[1], 0.0], [a[2], 0.1 * a[2], 0.0]],
            gamma: [0.25, 0.125, 0.125],
            theta: 0.5,
        }
    }
}

impl MethodParameters {
    /// Stabilization constants scaled with the given diffusion coefficients.
    pub fn scaled_to(diffusion: [f64; 3]) -> Self {
        let a = diffusion;
        Self {
            tau_stab: [[a[0], a[0], 0.1 * a[0]], [a[1], 0.1 * a[1], 0.0], [a[2], 0.1 * a[2], 0.0]],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.gamma.iter().any(|&g| !(g > 0.0 && g <= 1.0)) {
            return Err(format!("gamma values must lie in (0, 1], got {:?}", self.gamma));
        }
        if self.tau_a.iter().any(|&t| !(t.is_finite() && t > 0.0)) {
            return Err("tau_a must be positive".into());
        }
        if self.tau_b.iter().chain(self.tau_stab.iter().flatten()).any(|&t| !(t.is_finite() && t >= 0.0)) {
            return Err("tau_b and tau_stab must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err("face weight theta must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Closed-form solution of the coupled problem with its data.
pub trait ExactSolution: Sync {
    /// Value of the component for `d`. The interface component is a formula in the
    /// plane that is only meaningful on the circle.
    fn value(&self, d: Domain, p: &Point2<f64>) -> f64;
    /// Gradient of the same formula.
    fn gradient(&self, d: Domain, p: &Point2<f64>) -> Vector2<f64>;
    /// Right-hand side `f_i`; for the interface `p` should lie on the circle.
    fn rhs(&self, d: Domain, p: &Point2<f64>) -> f64;
    /// Dirichlet data on the outer boundary.
    fn boundary(&self, p: &Point2<f64>) -> f64 {
        self.value(Domain::Outer, p)
    }
}

/// Harmonic cubic `3x^2 y - y^3` in coordinates relative to `c`.
fn cubic(q: &Vector2<f64>) -> f64 {
    3.0 * q.x * q.x * q.y - q.y.powi(3)
}

fn cubic_gradient(q: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(6.0 * q.x * q.y, 3.0 * q.x * q.x - 3.0 * q.y * q.y)
}

/// `u_0 = 3x^2y - y^3`, `u_1 = e^{1 - |x|^2} u_0`, `u_2 = 2 u_1` about the circle centre,
/// with a rotation velocity about the same centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedSolution {
    pub coefficients: Coefficients,
    pub level_set: LevelSet,
}

impl ManufacturedSolution {
    pub fn new(coefficients: Coefficients, level_set: LevelSet) -> Self {
        Self { coefficients, level_set }
    }

    fn local(&self, p: &Point2<f64>) -> Vector2<f64> {
        p - self.level_set.center
    }

    fn bulk_factor(d: Domain) -> f64 {
        match d {
            Domain::Inner => 2.0,
            _ => 1.0,
        }
    }

    /// `-a Delta u_1 + beta . grad u_1` without the factor of `u_2`.
    fn bulk_rhs(&self, a: f64, q: &Vector2<f64>) -> f64 {
        let r2 = q.norm_squared();
        let e = (1.0 - r2).exp();
        let laplacian = e * cubic(q) * (4.0 * r2 - 16.0);
        let s = self.coefficients.velocity_scale;
        let beta_grad = s * e * (9.0 * q.x * q.y * q.y - 3.0 * q.x.powi(3));
        -a * laplacian + beta_grad
    }
}

impl ExactSolution for ManufacturedSolution {
    fn value(&self, d: Domain, p: &Point2<f64>) -> f64 {
        let q = self.local(p);
        match d {
            Domain::Interface => cubic(&q),
            _ => Self::bulk_factor(d) * (1.0 - q.norm_squared()).exp() * cubic(&q),
        }
    }

    fn gradient(&self, d: Domain, p: &Point2<f64>) -> Vector2<f64> {
        let q = self.local(p);
        match d {
            Domain::Interface => cubic_gradient(&q),
            _ => {
                let e = (1.0 - q.norm_squared()).exp();
                (cubic_gradient(&q) - q * (2.0 * cubic(&q))) * (e * Self::bulk_factor(d))
            }
        }
    }

    fn rhs(&self, d: Domain, p: &Point2<f64>) -> f64 {
        let c = &self.coefficients;
        match d {
            Domain::Interface => {
                let q = self.local(p);
                let r = self.level_set.radius;
                let t = q.y.atan2(q.x);
                let (s3, c3) = ((3.0 * t).sin(), (3.0 * t).cos());
                let flux_jump = (2.0 * c.diffusion[2] - c.diffusion[1])
                    * (1.0 - r * r).exp()
                    * (3.0 * r * r - 2.0 * r.powi(4))
                    * s3;
                9.0 * c.diffusion[0] * r * s3 - 3.0 * c.velocity_scale * r.powi(3) * c3 + flux_jump
            }
            _ => Self::bulk_factor(d) * self.bulk_rhs(c.diffusion(d), &self.local(p)),
        }
    }
}

/// Affine bulk solutions with `A = I`, `beta = 0` that satisfy the interface
/// conditions exactly on a circle of any radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearInterfaceSolution {
    pub coefficients: Coefficients,
    pub level_set: LevelSet,
    pub alpha: f64,
    pub slope: Vector2<f64>,
}

impl LinearInterfaceSolution {
    /// Coefficients are reset to unit diffusion and zero velocity.
    pub fn new(coefficients: Coefficients, level_set: LevelSet, alpha: f64, slope: Vector2<f64>) -> Self {
        let coefficients = Coefficients { diffusion: [1.0; 3], velocity_scale: 0.0, ..coefficients };
        Self { coefficients, level_set, alpha, slope }
    }

    /// Constant and slope of `u_0`, `u_1`, `u_2` in coordinates relative to the centre.
    fn affine(&self, d: Domain) -> (f64, Vector2<f64>) {
        let c = &self.coefficients;
        let r = self.level_set.radius;
        let (k1, k2, k01, k02) = (c.kappa[0], c.kappa[1], c.kappa0[0], c.kappa0[1]);
        let c0 = k1 * self.alpha / k01;
        let g0 = self.slope * ((k1 - 1.0 / r) / k01);
        match d {
            Domain::Outer => (self.alpha, self.slope),
            Domain::Interface => (c0, g0),
            Domain::Inner => (k02 * c0 / k2, g0 * (k02 / (k2 + 1.0 / r))),
        }
    }
}

impl ExactSolution for LinearInterfaceSolution {
    fn value(&self, d: Domain, p: &Point2<f64>) -> f64 {
        let (a, g) = self.affine(d);
        a + g.dot(&(p - self.level_set.center))
    }

    fn gradient(&self, d: Domain, _p: &Point2<f64>) -> Vector2<f64> {
        self.affine(d).1
    }

    fn rhs(&self, d: Domain, p: &Point2<f64>) -> f64 {
        match d {
            Domain::Interface => {
                let n = self.level_set.normal(p);
                let (_, g0) = self.affine(Domain::Interface);
                let (_, g1) = self.affine(Domain::Outer);
                let (_, g2) = self.affine(Domain::Inner);
                n.dot(&g0) / self.level_set.radius - n.dot(&g1) + n.dot(&g2)
            }
            _ => 0.0,
        }
    }
}

/// `-n_i . A_i grad u_i - (kappa_i u_i - kappa_{0,i} u_0)` at a point on the circle.
pub fn interface_condition_residual(
    solution: &dyn ExactSolution,
    coefficients: &Coefficients,
    level_set: &LevelSet,
    d: Domain,
    p: &Point2<f64>,
) -> f64 {
    let n0 = level_set.normal(p);
    // Exterior normal of the bulk domain.
    let n = if d == Domain::Outer { -n0 } else { n0 };
    let flux = -n.dot(&(coefficients.diffusion_matrix(d) * solution.gradient(d, p)));
    let jump = coefficients.kappa(d) * solution.value(d, p) - coefficients.kappa0(d) * solution.value(Domain::Interface, p);
    flux - jump
}
