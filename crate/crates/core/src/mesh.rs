//! Structured background triangulation of an axis-aligned box.
//!
//! The box is divided into squares of side `h`; every square is split along its
//! south-west to north-east diagonal into two counter-clockwise triangles.
//! Faces are numbered in the order they are first met while walking the
//! triangles, which makes the whole construction deterministic.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Point2, Vector2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh size must be positive and finite, got {0}")]
    InvalidMeshSize(f64),
    #[error("box side of length {length} is not an integer multiple of h = {h}")]
    NotDivisible { length: f64, h: f64 },
    #[error("box is empty or inverted")]
    EmptyBox,
    #[error("element index {0} out of range")]
    InvalidElement(usize),
    #[error("face index {0} out of range")]
    InvalidFace(usize),
}

/// Axis-aligned rectangle `[min.x, max.x] x [min.y, max.y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub min: Point2<f64>,
    pub max: Point2<f64>,
}

impl BoxDomain {
    pub fn new(min: Point2<f64>, max: Point2<f64>) -> Self {
        Self { min, max }
    }

    /// The square `[-a, a]^2`.
    pub fn centered_square(half_width: f64) -> Self {
        Self::new(Point2::new(-half_width, -half_width), Point2::new(half_width, half_width))
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.width() + self.height())
    }

    /// Distance from `p` to the nearest side, negative outside.
    pub fn distance_to_boundary(&self, p: &Point2<f64>) -> f64 {
        let dx = (p.x - self.min.x).min(self.max.x - p.x);
        let dy = (p.y - self.min.y).min(self.max.y - p.y);
        dx.min(dy)
    }
}

impl Default for BoxDomain {
    fn default() -> Self {
        Self::centered_square(1.5)
    }
}

/// A mesh edge together with its one or two neighbouring triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub vertices: [usize; 2],
    /// First-listed triangle. The face normal points out of it.
    pub first: usize,
    pub second: Option<usize>,
    pub normal: Vector2<f64>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.second.is_none()
    }

    pub fn elements(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.first).chain(self.second)
    }

    /// The triangle on the other side of the face from `element`.
    pub fn neighbor_of(&self, element: usize) -> Option<usize> {
        if element == self.first {
            self.second
        } else if Some(element) == self.second {
            Some(self.first)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundMesh {
    domain: BoxDomain,
    h: f64,
    divisions: [usize; 2],
    vertices: Vec<Point2<f64>>,
    triangles: Vec<[usize; 3]>,
    /// `element_faces[t][k]` is the face joining local vertices `k` and `k + 1`.
    element_faces: Vec<[usize; 3]>,
    faces: Vec<Face>,
}

fn divisions(length: f64, h: f64) -> Result<usize, MeshError> {
    let ratio = length / h;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-12 * ratio.max(1.0) {
        return Err(MeshError::NotDivisible { length, h });
    }
    Ok(n as usize)
}

impl BackgroundMesh {
    /// Builds the uniform triangulation of `domain` with square side `h`.
    pub fn build(domain: BoxDomain, h: f64) -> Result<Self, MeshError> {
        if !(h.is_finite() && h > 0.0) {
            return Err(MeshError::InvalidMeshSize(h));
        }
        if !(domain.width() > 0.0 && domain.height() > 0.0) {
            return Err(MeshError::EmptyBox);
        }
        let nx = divisions(domain.width(), h)?;
        let ny = divisions(domain.height(), h)?;

        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                // Pin the last row/column to the box so the boundary is exact.
                let x = if i == nx { domain.max.x } else { domain.min.x + i as f64 * h };
                let y = if j == ny { domain.max.y } else { domain.min.y + j as f64 * h };
                vertices.push(Point2::new(x, y));
            }
        }
        let vid = |i: usize, j: usize| j * (nx + 1) + i;

        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let sw = vid(i, j);
                let se = vid(i + 1, j);
                let ne = vid(i + 1, j + 1);
                let nw = vid(i, j + 1);
                triangles.push([sw, se, ne]);
                triangles.push([sw, ne, nw]);
            }
        }

        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut faces: Vec<Face> = Vec::new();
        let mut element_faces = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut local = [0usize; 3];
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                let id = match lookup.get(&key) {
                    Some(&id) => {
                        faces[id].second = Some(t);
                        id
                    }
                    None => {
                        let d = vertices[b] - vertices[a];
                        // Counter-clockwise triangle: the exterior normal is the right-hand normal.
                        let normal = Vector2::new(d.y, -d.x).normalize();
                        faces.push(Face { vertices: [a, b], first: t, second: None, normal });
                        lookup.insert(key, faces.len() - 1);
                        faces.len() - 1
                    }
                };
                local[k] = id;
            }
            element_faces.push(local);
        }

        Ok(Self { domain, h, divisions: [nx, ny], vertices, triangles, element_faces, faces })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn divisions(&self) -> [usize; 2] {
        self.divisions
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn face(&self, id: usize) -> Result<&Face, MeshError> {
        self.faces.get(id).ok_or(MeshError::InvalidFace(id))
    }

    pub fn element_faces(&self, t: usize) -> [usize; 3] {
        self.element_faces[t]
    }

    /// Vertex coordinates of triangle `t` in counter-clockwise order.
    pub fn triangle(&self, t: usize) -> [Point2<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_points(&self, f: usize) -> [Point2<f64>; 2] {
        let [a, b] = self.faces[f].vertices;
        [self.vertices[a], self.vertices[b]]
    }

    pub fn face_length(&self, f: usize) -> f64 {
        let [a, b] = self.face_points(f);
        (b - a).norm()
    }

    /// The stored unit normal of a face; it is the exterior normal of the first-listed triangle.
    pub fn face_normal(&self, f: usize) -> Result<Vector2<f64>, MeshError> {
        Ok(self.face(f)?.normal)
    }

    /// Longest edge of the triangle.
    pub fn element_diameter(&self, t: usize) -> Result<f64, MeshError> {
        if t >= self.triangles.len() {
            return Err(MeshError::InvalidElement(t));
        }
        let p = self.triangle(t);
        let d = (0..3).map(|k| (p[(k + 1) % 3] - p[k]).norm()).fold(0.0, f64::max);
        assert!(self.area(t) > 0.0, "degenerate triangle {t}");
        Ok(d)
    }

    pub fn area(&self, t: usize) -> f64 {
        signed_area(&self.triangle(t))
    }

    pub fn boundary_faces(&self) -> impl Iterator<Item = usize> + '_ {
        self.faces.iter().enumerate().filter(|(_, f)| f.is_boundary()).map(|(i, _)| i)
    }

    /// Plain-text listing of nodes, elements and faces. Not a stable format.
    pub fn to_canonical_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "mesh h={} box=[{},{}]x[{},{}]",
            self.h, self.domain.min.x, self.domain.max.x, self.domain.min.y, self.domain.max.y
        );
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        for (i, v) in self.vertices.iter().enumerate() {
            let _ = writeln!(s, "{i} {} {}", v.x, v.y);
        }
        let _ = writeln!(s, "triangles {}", self.triangles.len());
        for (i, t) in self.triangles.iter().enumerate() {
            let _ = writeln!(s, "{i} {} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "faces {}", self.faces.len());
        for (i, f) in self.faces.iter().enumerate() {
            let second = f.second.map_or("-".to_string(), |t| t.to_string());
            let _ = writeln!(
                s,
                "{i} {} {} {} {} {} {}",
                f.vertices[0], f.vertices[1], f.first, second, f.normal.x, f.normal.y
            );
        }
        s
    }
}

pub fn signed_area(p: &[Point2<f64>; 3]) -> f64 {
    0.5 * (p[1] - p[0]).perp(&(p[2] - p[0]))
}
