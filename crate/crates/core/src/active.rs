//! Active meshes and the composite discontinuous P1 space.

use nalgebra::{DVector, Point2, Vector2};
use thiserror::Error;

use crate::geometry::{CutGeometry, Domain, Location};
use crate::mesh::{signed_area, BackgroundMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("active mesh for domain {0:?} is empty; the circle must intersect the mesh")]
    EmptyActiveMesh(Domain),
    #[error("element {element} is not active in domain {domain:?}")]
    InactiveElement { domain: Domain, element: usize },
    #[error("point ({x}, {y}) lies outside element {element}")]
    PointOutside { element: usize, x: f64, y: f64 },
    #[error("coefficient vector has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// Elements and interior faces of the background mesh that meet one subdomain.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveMesh {
    pub domain: Domain,
    /// Background element ids in ascending order.
    pub elements: Vec<usize>,
    /// Interior faces whose two neighbours are both active, ascending.
    pub faces: Vec<usize>,
    local: Vec<Option<usize>>,
}

impl ActiveMesh {
    pub fn build(mesh: &BackgroundMesh, geometry: &CutGeometry, domain: Domain) -> Result<Self, SpaceError> {
        let elements: Vec<usize> = (0..mesh.n_elements())
            .filter(|&t| {
                let loc = geometry.element(t).location;
                match domain {
                    Domain::Interface => loc == Location::Cut,
                    d => loc.touches(d),
                }
            })
            .collect();
        if elements.is_empty() {
            return Err(SpaceError::EmptyActiveMesh(domain));
        }
        let mut local = vec![None; mesh.n_elements()];
        for (k, &t) in elements.iter().enumerate() {
            local[t] = Some(k);
        }
        let faces = mesh
            .faces()
            .iter()
            .enumerate()
            .filter(|(_, f)| f.elements().all(|t| local[t].is_some()) && !f.is_boundary())
            .map(|(id, _)| id)
            .collect();
        Ok(Self { domain, elements, faces, local })
    }

    pub fn dimension(&self) -> usize {
        self.domain.dimension()
    }

    pub fn contains(&self, element: usize) -> bool {
        self.local.get(element).is_some_and(|l| l.is_some())
    }

    /// Position of a background element within `elements`.
    pub fn local_index(&self, element: usize) -> Option<usize> {
        self.local.get(element).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Builds the three active meshes in domain order.
pub fn build_active_meshes(mesh: &BackgroundMesh, geometry: &CutGeometry) -> Result<[ActiveMesh; 3], SpaceError> {
    Ok([
        ActiveMesh::build(mesh, geometry, Domain::Interface)?,
        ActiveMesh::build(mesh, geometry, Domain::Outer)?,
        ActiveMesh::build(mesh, geometry, Domain::Inner)?,
    ])
}

/// Linear nodal basis on one physical triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct P1Basis {
    pub vertices: [Point2<f64>; 3],
    pub gradients: [Vector2<f64>; 3],
    pub area: f64,
}

impl P1Basis {
    pub fn new(vertices: [Point2<f64>; 3]) -> Self {
        let area = signed_area(&vertices);
        let gradients = std::array::from_fn(|k| {
            let a = vertices[(k + 1) % 3];
            let b = vertices[(k + 2) % 3];
            Vector2::new(a.y - b.y, b.x - a.x) / (2.0 * area)
        });
        Self { vertices, gradients, area }
    }

    /// Barycentric coordinates of `p`; they extend affinely outside the triangle.
    pub fn values(&self, p: &Point2<f64>) -> [f64; 3] {
        std::array::from_fn(|k| {
            let a = self.vertices[(k + 1) % 3];
            let b = self.vertices[(k + 2) % 3];
            0.5 * (b - a).perp(&(p - a)) / self.area
        })
    }

    /// Value and gradient of the function with nodal values `c`.
    pub fn evaluate(&self, c: &[f64; 3], p: &Point2<f64>) -> (f64, Vector2<f64>) {
        let phi = self.values(p);
        let v = (0..3).map(|k| c[k] * phi[k]).sum();
        let g = (0..3).map(|k| self.gradients[k] * c[k]).sum();
        (v, g)
    }
}

/// `W_h`: one discontinuous P1 block per domain, laid out as interface, outer, inner.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeDGSpace {
    elements: [Vec<usize>; 3],
    lookup: [Vec<Option<usize>>; 3],
    offsets: [usize; 3],
    dim: usize,
}

impl CompositeDGSpace {
    pub fn new(active: &[ActiveMesh; 3]) -> Self {
        Self::from_elements(std::array::from_fn(|i| active[i].elements.clone()))
    }

    /// Space over explicit ascending element lists per domain.
    pub fn from_elements(elements: [Vec<usize>; 3]) -> Self {
        let mut offsets = [0; 3];
        let mut dim = 0;
        for i in 0..3 {
            offsets[i] = dim;
            dim += 3 * elements[i].len();
        }
        let lookup = std::array::from_fn(|i| {
            let n = elements[i].iter().max().map_or(0, |&m| m + 1);
            let mut l = vec![None; n];
            for (k, &t) in elements[i].iter().enumerate() {
                l[t] = Some(k);
            }
            l
        });
        Self { elements, lookup, offsets, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offset(&self, domain: Domain) -> usize {
        self.offsets[domain.index()]
    }

    pub fn block_len(&self, domain: Domain) -> usize {
        3 * self.elements[domain.index()].len()
    }

    pub fn elements(&self, domain: Domain) -> &[usize] {
        &self.elements[domain.index()]
    }

    pub fn is_active(&self, domain: Domain, element: usize) -> bool {
        self.lookup[domain.index()].get(element).is_some_and(|l| l.is_some())
    }

    pub fn dof(&self, domain: Domain, element: usize, node: usize) -> Option<usize> {
        debug_assert!(node < 3);
        let k = self.lookup[domain.index()].get(element).copied().flatten()?;
        Some(self.offsets[domain.index()] + 3 * k + node)
    }

    pub fn element_dofs(&self, domain: Domain, element: usize) -> Option<[usize; 3]> {
        let first = self.dof(domain, element, 0)?;
        Some([first, first + 1, first + 2])
    }

    /// Inverse of [`dof`](Self::dof).
    pub fn locate(&self, global: usize) -> Option<(Domain, usize, usize)> {
        if global >= self.dim {
            return None;
        }
        let i = (0..3).rev().find(|&i| global >= self.offsets[i])?;
        let rel = global - self.offsets[i];
        Some((Domain::from_index(i)?, self.elements[i][rel / 3], rel % 3))
    }

    /// Value and gradient of the `domain` component of `coeffs` at `p` in `element`.
    pub fn evaluate(
        &self,
        mesh: &BackgroundMesh,
        coeffs: &DVector<f64>,
        domain: Domain,
        element: usize,
        p: &Point2<f64>,
    ) -> Result<(f64, Vector2<f64>), SpaceError> {
        if coeffs.len() != self.dim {
            return Err(SpaceError::LengthMismatch { got: coeffs.len(), expected: self.dim });
        }
        let dofs = self.element_dofs(domain, element).ok_or(SpaceError::InactiveElement { domain, element })?;
        let basis = P1Basis::new(mesh.triangle(element));
        if basis.values(p).iter().any(|&l| l < -1e-10) {
            return Err(SpaceError::PointOutside { element, x: p.x, y: p.y });
        }
        Ok(basis.evaluate(&dofs.map(|d| coeffs[d]), p))
    }

    /// Nodal interpolant of a function given per domain.
    pub fn interpolate(
        &self,
        mesh: &BackgroundMesh,
        f: impl Fn(Domain, &Point2<f64>) -> f64,
    ) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        for d in Domain::ALL {
            for &t in self.elements(d) {
                let tri = mesh.triangle(t);
                for (node, dof) in self.element_dofs(d, t).into_iter().flatten().enumerate() {
                    v[dof] = f(d, &tri[node]);
                }
            }
        }
        v
    }
}
