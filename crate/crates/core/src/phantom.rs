//! Labeled anatomy model: a watertight mesh with per-vertex calyx ids.
//!
//! Label 0 marks the unannotated pelvis/ureter/entrance; ids >= 1 are
//! calyces and must form a contiguous range starting at 1. Labels live on
//! vertices because the visitation score counts vertices.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Point3;
use thiserror::Error;

use crate::formats::{self, FormatError, PlyData};
use crate::geom::{MeshError, TriMesh};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("mesh has {vertices} vertices but {labels} labels")]
    LabelCountMismatch { labels: usize, vertices: usize },
    #[error("calyx ids must be contiguous from 1; missing {missing:?}")]
    NonContiguousLabels { missing: Vec<u32> },
    #[error("calyx {id} has {count} vertices, below the minimum of {min}")]
    UndersizedCalyx { id: u32, count: usize, min: usize },
    #[error("labeled mesh file has no calyx_id property: {0}")]
    MissingLabels(String),
}

/// Validation knobs for [`LabeledMesh`] construction.
#[derive(Debug, Clone, Copy)]
pub struct LabelValidation {
    /// Guards against annotation typos; a real calyx has far more vertices.
    pub min_calyx_vertices: usize,
}

impl Default for LabelValidation {
    fn default() -> Self {
        Self {
            min_calyx_vertices: 50,
        }
    }
}

/// Per-calyx size and location summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CalyxSummary {
    pub calyx_id: u32,
    pub vertex_count: usize,
    pub centroid: Point3<f64>,
}

/// A validated mesh with per-vertex calyx labels. Immutable after load.
#[derive(Debug)]
pub struct LabeledMesh {
    mesh: TriMesh,
    labels: Vec<u32>,
    calyx_names: BTreeMap<u32, String>,
}

impl LabeledMesh {
    pub fn new(
        mesh: TriMesh,
        labels: Vec<u32>,
        calyx_names: BTreeMap<u32, String>,
    ) -> Result<Self, PhantomError> {
        Self::with_validation(mesh, labels, calyx_names, &LabelValidation::default())
    }

    pub fn with_validation(
        mesh: TriMesh,
        labels: Vec<u32>,
        calyx_names: BTreeMap<u32, String>,
        validation: &LabelValidation,
    ) -> Result<Self, PhantomError> {
        if labels.len() != mesh.vertices().len() {
            return Err(PhantomError::LabelCountMismatch {
                labels: labels.len(),
                vertices: mesh.vertices().len(),
            });
        }
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &l in &labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        let max_id = counts.keys().max().copied().unwrap_or(0);
        let missing: Vec<u32> = (1..=max_id).filter(|id| !counts.contains_key(id)).collect();
        if !missing.is_empty() {
            return Err(PhantomError::NonContiguousLabels { missing });
        }
        for (&id, &count) in counts.iter().filter(|(&id, _)| id >= 1) {
            if count < validation.min_calyx_vertices {
                return Err(PhantomError::UndersizedCalyx {
                    id,
                    count,
                    min: validation.min_calyx_vertices,
                });
            }
        }
        Ok(Self {
            mesh,
            labels,
            calyx_names,
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn calyx_names(&self) -> &BTreeMap<u32, String> {
        &self.calyx_names
    }

    /// Number of calyces (the largest label id).
    pub fn calyx_count(&self) -> u32 {
        self.labels.iter().max().copied().unwrap_or(0)
    }

    pub fn calyx_summaries(&self) -> Vec<CalyxSummary> {
        let mut acc: BTreeMap<u32, (usize, Point3<f64>)> = BTreeMap::new();
        for (v, &l) in self.labels.iter().enumerate() {
            if l == 0 {
                continue;
            }
            let entry = acc.entry(l).or_insert((0, Point3::origin()));
            entry.0 += 1;
            entry.1 += self.mesh.vertices()[v].coords;
        }
        acc.into_iter()
            .map(|(calyx_id, (vertex_count, sum))| CalyxSummary {
                calyx_id,
                vertex_count,
                centroid: Point3::from(sum.coords / vertex_count as f64),
            })
            .collect()
    }
}

pub fn load_labeled_mesh(path: &Path) -> Result<LabeledMesh, PhantomError> {
    load_labeled_mesh_with(path, &LabelValidation::default())
}

pub fn load_labeled_mesh_with(
    path: &Path,
    validation: &LabelValidation,
) -> Result<LabeledMesh, PhantomError> {
    let ply = formats::read_ply(path)?;
    let labels = ply
        .calyx_ids
        .ok_or_else(|| PhantomError::MissingLabels(path.display().to_string()))?;
    let mesh = TriMesh::new(ply.vertices, ply.faces.unwrap_or_default())?;
    LabeledMesh::with_validation(mesh, labels, ply.calyx_names, validation)
}

pub fn save_labeled_mesh(path: &Path, mesh: &LabeledMesh) -> Result<(), PhantomError> {
    let ply = PlyData {
        vertices: mesh.mesh.vertices().to_vec(),
        calyx_ids: Some(mesh.labels.clone()),
        visited: None,
        faces: Some(mesh.mesh.faces().to_vec()),
        calyx_names: mesh.calyx_names.clone(),
    };
    formats::write_ply(path, &ply)?;
    Ok(())
}

/// Writes the labeled mesh with an extra per-vertex `visited` flag so the
/// result opens in standard mesh viewers.
pub fn save_visited_mesh(
    path: &Path,
    mesh: &LabeledMesh,
    visited: &dyn Fn(usize) -> bool,
) -> Result<(), PhantomError> {
    let flags: Vec<u8> = (0..mesh.labels.len())
        .map(|v| if visited(v) { 1 } else { 0 })
        .collect();
    let ply = PlyData {
        vertices: mesh.mesh.vertices().to_vec(),
        calyx_ids: Some(mesh.labels.clone()),
        visited: Some(flags),
        faces: Some(mesh.mesh.faces().to_vec()),
        calyx_names: mesh.calyx_names.clone(),
    };
    formats::write_ply(path, &ply)?;
    Ok(())
}
