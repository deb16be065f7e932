//! Everything a solve needs for one mesh and interface position.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::{build_active_meshes, ActiveMesh, CompositeDGSpace, P1Basis, SpaceError};
use crate::geometry::{CutGeometry, CutOptions, Domain, GeometryError, LevelSet};
use crate::macro_partition::{build_partition, full_stabilization_faces, MacroPartition, PartitionError};
use crate::mesh::{BackgroundMesh, BoxDomain, MeshError};
use crate::problem::{Coefficients, MethodParameters};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizationError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("invalid parameters: {0}")]
    Parameters(String),
}

/// Which faces carry the ghost penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilizationMode {
    /// Faces chosen by the macro-element partition.
    #[default]
    Macro,
    /// Every active interior face next to a cut element.
    Full,
    /// No ghost penalty and no normal-gradient term.
    None,
}

impl StabilizationMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Macro => "macro",
            Self::Full => "full",
            Self::None => "none",
        }
    }
}

/// Stabilized faces per domain together with the macro partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Stabilization {
    pub mode: StabilizationMode,
    /// Face ids per domain, ascending.
    pub faces: [Vec<usize>; 3],
    /// Present in macro mode, and in the other modes when the partition exists.
    pub partitions: Option<[MacroPartition; 3]>,
}

impl Stabilization {
    pub fn build(
        mesh: &BackgroundMesh,
        geometry: &CutGeometry,
        active: &[ActiveMesh; 3],
        gamma: [f64; 3],
        mode: StabilizationMode,
    ) -> Result<Self, PartitionError> {
        let partitions = || -> Result<[MacroPartition; 3], PartitionError> {
            let [p0, p1, p2] = [0, 1, 2].map(|i| build_partition(mesh, geometry, &active[i], gamma[i], None));
            Ok([p0?, p1?, p2?])
        };
        let (faces, partitions) = match mode {
            StabilizationMode::Macro => {
                let p = partitions()?;
                (p.clone().map(|p| p.stabilized_faces()), Some(p))
            }
            StabilizationMode::Full => {
                ([0, 1, 2].map(|i| full_stabilization_faces(mesh, geometry, &active[i])), partitions().ok())
            }
            StabilizationMode::None => (Default::default(), partitions().ok()),
        };
        Ok(Self { mode, faces, partitions })
    }

    pub fn faces(&self, d: Domain) -> &[usize] {
        &self.faces[d.index()]
    }

    /// Whether the interface normal-gradient penalty is applied.
    pub fn normal_term(&self) -> bool {
        self.mode != StabilizationMode::None
    }

    pub fn partition(&self, d: Domain) -> Option<&MacroPartition> {
        self.partitions.as_ref().map(|p| &p[d.index()])
    }
}

/// Mesh, cut geometry, spaces and parameters for one configuration.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: BackgroundMesh,
    pub geometry: CutGeometry,
    pub active: [ActiveMesh; 3],
    pub space: CompositeDGSpace,
    pub coefficients: Coefficients,
    pub parameters: MethodParameters,
    pub stabilization: Option<Stabilization>,
    bases: Vec<P1Basis>,
}

impl Discretization {
    /// Builds everything on the default box `[-1.5, 1.5]^2`.
    pub fn build(
        h: f64,
        level_set: LevelSet,
        options: CutOptions,
        coefficients: Coefficients,
        parameters: MethodParameters,
        mode: StabilizationMode,
    ) -> Result<Self, DiscretizationError> {
        coefficients.validate().map_err(DiscretizationError::Parameters)?;
        parameters.validate().map_err(DiscretizationError::Parameters)?;
        let mesh = BackgroundMesh::build(BoxDomain::default(), h)?;
        let geometry = CutGeometry::build(&mesh, level_set, options)?;
        let active = build_active_meshes(&mesh, &geometry)?;
        let stabilization = Stabilization::build(&mesh, &geometry, &active, parameters.gamma, mode)?;
        Ok(Self::from_parts(mesh, geometry, active, coefficients, parameters, Some(stabilization)))
    }

    pub fn from_parts(
        mesh: BackgroundMesh,
        geometry: CutGeometry,
        active: [ActiveMesh; 3],
        coefficients: Coefficients,
        parameters: MethodParameters,
        stabilization: Option<Stabilization>,
    ) -> Self {
        let space = CompositeDGSpace::new(&active);
        let bases = (0..mesh.n_elements()).map(|t| P1Basis::new(mesh.triangle(t))).collect();
        Self { mesh, geometry, active, space, coefficients, parameters, stabilization, bases }
    }

    pub fn h(&self) -> f64 {
        self.mesh.h()
    }

    pub fn level_set(&self) -> &LevelSet {
        &self.geometry.level_set
    }

    pub fn basis(&self, element: usize) -> &P1Basis {
        &self.bases[element]
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Same configuration with the cut rules rebuilt at a different order.
    pub fn with_options(&self, options: CutOptions) -> Result<Self, DiscretizationError> {
        let geometry = CutGeometry::build(&self.mesh, self.geometry.level_set, options)?;
        let mut out = self.clone();
        out.geometry = geometry;
        Ok(out)
    }
}
