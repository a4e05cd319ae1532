//! Landmark normalization and region grouping.
//!
//! Normalization recenters every point on a reference landmark (the nose
//! tip by default) and divides per axis by that axis's raw coordinate
//! range, which cancels any scale or translation the upstream detector
//! introduced. The reference point itself maps to the origin and is
//! dropped. Grouping then selects five facial regions out of the surviving
//! points; those five small sets are the model input.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{RawLandmarkSet, LANDMARK_COUNT};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default reference landmark: the nose tip in the 68-point ordering.
pub const DEFAULT_REFERENCE: usize = 30;

/// The 67 surviving points after normalization, each coordinate in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedLandmarks {
    pub points: Vec<[f64; 3]>,
    /// Index (into the original 68-point ordering) of the removed reference.
    pub reference_index: usize,
}

impl NormalizedLandmarks {
    /// Looks up a point by its index in the original 68-point ordering.
    pub fn by_original_index(&self, idx: usize) -> Option<&[f64; 3]> {
        if idx == self.reference_index || idx >= LANDMARK_COUNT {
            return None;
        }
        let shifted = if idx > self.reference_index { idx - 1 } else { idx };
        self.points.get(shifted)
    }
}

/// Named landmark-index lists for the five regions, in model input order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupSpec {
    pub left_eye: Vec<usize>,
    pub right_eye: Vec<usize>,
    pub left_cheek: Vec<usize>,
    pub right_cheek: Vec<usize>,
    pub chin: Vec<usize>,
}

impl Default for GroupSpec {
    /// The 68-point ordering puts the eyes at 36-47 and the jawline at 0-16;
    /// cheeks and chin are read off the jawline.
    fn default() -> Self {
        Self {
            left_eye: (36..=41).collect(),
            right_eye: (42..=47).collect(),
            left_cheek: (1..=5).collect(),
            right_cheek: (11..=15).collect(),
            chin: (6..=10).collect(),
        }
    }
}

impl GroupSpec {
    pub fn regions(&self) -> [(&'static str, &[usize]); 5] {
        [
            ("left_eye", &self.left_eye),
            ("right_eye", &self.right_eye),
            ("left_cheek", &self.left_cheek),
            ("right_cheek", &self.right_cheek),
            ("chin", &self.chin),
        ]
    }

    pub fn group_count(&self) -> usize {
        5
    }

    pub fn total_points(&self) -> usize {
        self.regions().iter().map(|(_, idx)| idx.len()).sum()
    }

    /// Rejects out-of-range, duplicated, or reference-colliding indices.
    pub fn validate(&self, reference_index: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, indices) in self.regions() {
            if indices.is_empty() {
                return Err(Error::Config(format!("group '{name}' is empty")));
            }
            for &i in indices {
                if i >= LANDMARK_COUNT {
                    return Err(Error::Config(format!(
                        "group '{name}' index {i} out of range for 68 landmarks"
                    )));
                }
                if i == reference_index {
                    return Err(Error::Config(format!(
                        "group '{name}' index {i} collides with the reference landmark"
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Config(format!(
                        "landmark index {i} appears in more than one group"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The five grouped landmark matrices, each `S×3`, in fixed region order.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedLandmarks {
    pub groups: Vec<Tensor>,
}

impl GroupedLandmarks {
    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.rows()).collect()
    }
}

/// Recenters on the reference point and scales per axis by the raw range.
///
/// The reference maps to the origin exactly and is removed from the output,
/// so 68 points in yields 67 points out.
pub fn normalize(raw: &RawLandmarkSet, reference_index: usize) -> Result<NormalizedLandmarks> {
    if raw.points.len() != LANDMARK_COUNT {
        return Err(Error::Validation {
            sample_id: raw.sample_id.clone(),
            msg: format!("expected 68 landmarks, got {}", raw.points.len()),
        });
    }
    if reference_index >= LANDMARK_COUNT {
        return Err(Error::Config(format!(
            "reference index {reference_index} out of range"
        )));
    }
    let mut range = [0.0f64; 3];
    for axis in 0..3 {
        let mut mn = f64::INFINITY;
        let mut mx = f64::NEG_INFINITY;
        for p in &raw.points {
            mn = mn.min(p[axis]);
            mx = mx.max(p[axis]);
        }
        if mx == mn {
            return Err(Error::Degenerate(format!(
                "axis {} of sample '{}' has zero range ({mn})",
                ["x", "y", "z"][axis],
                raw.sample_id
            )));
        }
        range[axis] = mx - mn;
    }
    let reference = raw.points[reference_index];
    let points = raw
        .points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != reference_index)
        .map(|(_, p)| {
            [
                (p[0] - reference[0]) / range[0],
                (p[1] - reference[1]) / range[1],
                (p[2] - reference[2]) / range[2],
            ]
        })
        .collect();
    Ok(NormalizedLandmarks {
        points,
        reference_index,
    })
}

/// Selects the configured regions from normalized points. Group order is
/// fixed (left eye, right eye, left cheek, right cheek, chin); within a
/// group, points follow the spec's index order.
pub fn group(norm: &NormalizedLandmarks, spec: &GroupSpec) -> Result<GroupedLandmarks> {
    spec.validate(norm.reference_index)?;
    let mut groups = Vec::with_capacity(5);
    for (name, indices) in spec.regions() {
        let mut data = Vec::with_capacity(indices.len() * 3);
        for &i in indices {
            let p = norm.by_original_index(i).ok_or_else(|| {
                Error::Config(format!("group '{name}' index {i} is not available"))
            })?;
            data.extend_from_slice(p);
        }
        groups.push(Tensor::from_vec(&[indices.len(), 3], data)?);
    }
    Ok(GroupedLandmarks { groups })
}

/// Normalize-then-group with the default reference landmark.
pub fn prepare(raw: &RawLandmarkSet, spec: &GroupSpec) -> Result<GroupedLandmarks> {
    group(&normalize(raw, DEFAULT_REFERENCE)?, spec)
}
