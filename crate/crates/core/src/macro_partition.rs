//! Macro-element partitions and their stabilized face sets.
//!
//! Elements with a large intersection with their subdomain are roots. Small
//! elements are attached, sweep by sweep, to a face-neighbour that is already
//! marked large, and the connecting face is recorded for stabilization. Faces on
//! the boundary of a macro element are never stabilized, which is what keeps the
//! method locally conservative on macro elements.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::active::ActiveMesh;
use crate::geometry::{CutGeometry, Domain, Location};
use crate::mesh::BackgroundMesh;

/// Longest allowed chain of faces from an element to its root.
pub const MAX_CHAIN_LENGTH: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("no large element in the {0:?} active mesh; lower gamma")]
    NoLargeElement(Domain),
    #[error("element {element} of the {domain:?} active mesh cannot reach a large element")]
    Unreachable { domain: Domain, element: usize },
    #[error("element {element} is {length} faces away from its root (limit {MAX_CHAIN_LENGTH})")]
    ChainTooLong { element: usize, length: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroPartition {
    pub domain: Domain,
    /// Macro id per background element; `None` outside the active mesh.
    pub macro_of: Vec<Option<usize>>,
    /// Root element of each macro.
    pub roots: Vec<usize>,
    /// Stabilized faces with the element that was attached through each, in face order.
    pub stabilized: Vec<(usize, usize)>,
    /// Number of faces between an element and its root.
    pub chain_length: Vec<Option<usize>>,
    /// Initial large marking per background element.
    pub large: Vec<bool>,
}

impl MacroPartition {
    pub fn n_macros(&self) -> usize {
        self.roots.len()
    }

    pub fn stabilized_faces(&self) -> Vec<usize> {
        self.stabilized.iter().map(|&(f, _)| f).collect()
    }

    pub fn max_chain_length(&self) -> usize {
        self.chain_length.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Elements of macro `m` in ascending order.
    pub fn members(&self, m: usize) -> Vec<usize> {
        (0..self.macro_of.len()).filter(|&t| self.macro_of[t] == Some(m)).collect()
    }

    /// Per macro: root, elements and stabilized faces.
    pub fn dump(&self) -> String {
        let mut groups = vec![(Vec::new(), Vec::new()); self.roots.len()];
        for (t, m) in self.macro_of.iter().enumerate() {
            if let Some(m) = m {
                groups[*m].0.push(t);
            }
        }
        for &(f, t) in &self.stabilized {
            if let Some(m) = self.macro_of[t] {
                groups[m].1.push(f);
            }
        }
        let mut s = String::new();
        let _ = writeln!(s, "domain {} macros {}", self.domain.index(), self.roots.len());
        for (m, (elements, faces)) in groups.iter().enumerate() {
            let _ = writeln!(s, "macro {m} root {} elements {:?} faces {:?}", self.roots[m], elements, faces);
        }
        s
    }
}

/// `|T ∩ Ω_i| / h_T^{d_i} >= γ_i`.
pub fn large_ratio(measure: f64, diameter: f64, dimension: usize) -> f64 {
    measure / diameter.powi(dimension as i32)
}

pub fn is_large(mesh: &BackgroundMesh, geometry: &CutGeometry, domain: Domain, element: usize, gamma: f64) -> bool {
    let h_t = mesh.element_diameter(element).expect("element id from the mesh");
    large_ratio(geometry.element(element).measure(domain), h_t, domain.dimension()) >= gamma
}

/// Measure used to rank candidate faces: segment length for bulk domains,
/// number of crossings for the interface.
fn face_measure(geometry: &CutGeometry, domain: Domain, face: usize) -> f64 {
    geometry.face(face).measure(domain)
}

/// Runs the sweep-based macro construction.
///
/// Ties between candidate faces go to faces in `preferred`, then to the larger
/// `|F ∩ Ω_i|`, then to the lower face id.
pub fn build_partition(
    mesh: &BackgroundMesh,
    geometry: &CutGeometry,
    active: &ActiveMesh,
    gamma: f64,
    preferred: Option<&BTreeSet<usize>>,
) -> Result<MacroPartition, PartitionError> {
    let domain = active.domain;
    let n = mesh.n_elements();
    let mut large = vec![false; n];
    let mut marked = vec![false; n];
    let mut macro_of = vec![None; n];
    let mut chain_length = vec![None; n];
    let mut roots = Vec::new();
    for &t in &active.elements {
        if is_large(mesh, geometry, domain, t, gamma) {
            large[t] = true;
            marked[t] = true;
            macro_of[t] = Some(roots.len());
            chain_length[t] = Some(0);
            roots.push(t);
        }
    }
    if roots.is_empty() {
        return Err(PartitionError::NoLargeElement(domain));
    }

    let face_set: BTreeSet<usize> = active.faces.iter().copied().collect();
    let mut stabilized = Vec::new();
    let mut remaining: Vec<usize> = active.elements.iter().copied().filter(|&t| !marked[t]).collect();
    while !remaining.is_empty() {
        // Every element picks against the marking at the start of the sweep.
        let mut picks = Vec::new();
        for &t in &remaining {
            let best = mesh
                .element_faces(t)
                .into_iter()
                .filter(|f| face_set.contains(f))
                .filter_map(|f| {
                    let nb = mesh.faces()[f].neighbor_of(t)?;
                    marked[nb].then_some((f, nb))
                })
                .max_by(|&(fa, _), &(fb, _)| {
                    let pa = preferred.is_some_and(|p| p.contains(&fa));
                    let pb = preferred.is_some_and(|p| p.contains(&fb));
                    pa.cmp(&pb)
                        .then(face_measure(geometry, domain, fa).total_cmp(&face_measure(geometry, domain, fb)))
                        .then(fb.cmp(&fa))
                });
            if let Some((f, nb)) = best {
                picks.push((t, f, nb));
            }
        }
        if picks.is_empty() {
            return Err(PartitionError::Unreachable { domain, element: remaining[0] });
        }
        for &(t, f, nb) in &picks {
            marked[t] = true;
            macro_of[t] = macro_of[nb];
            let len = chain_length[nb].unwrap_or(0) + 1;
            if len > MAX_CHAIN_LENGTH {
                return Err(PartitionError::ChainTooLong { element: t, length: len });
            }
            chain_length[t] = Some(len);
            stabilized.push((f, t));
        }
        remaining.retain(|&t| !marked[t]);
    }
    stabilized.sort_unstable();
    Ok(MacroPartition { domain, macro_of, roots, stabilized, chain_length, large })
}

/// Interior active faces with at least one cut neighbour.
pub fn full_stabilization_faces(mesh: &BackgroundMesh, geometry: &CutGeometry, active: &ActiveMesh) -> Vec<usize> {
    active
        .faces
        .iter()
        .copied()
        .filter(|&f| mesh.faces()[f].elements().any(|t| geometry.element(t).location == Location::Cut))
        .collect()
}
