//! Procedural brain-like phantom with a paired anatomical prior image.
//!
//! The activity image assigns each pixel the tissue activity of the
//! innermost containing ellipse (ellipses are listed outer to inner; the
//! last containing one wins), with tumor disks overwriting activity.
//! The prior image uses the same ellipse geometry with its own per-tissue
//! intensities and never contains the tumors.

use crate::error::{Error, Result};
use crate::grid::{circular_roi, Image, ImageGrid, RoiMask};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipseSpec {
    /// Center in mm.
    pub center_mm: [f64; 2],
    /// Semi-axes in mm.
    pub semi_axes_mm: [f64; 2],
    /// Rotation in radians (counterclockwise).
    #[serde(default)]
    pub rotation_rad: f64,
    pub tissue: String,
}

impl EllipseSpec {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center_mm[0];
        let dy = y - self.center_mm[1];
        let (sin, cos) = self.rotation_rad.sin_cos();
        let u = cos * dx + sin * dy;
        let v = -sin * dx + cos * dy;
        let a = self.semi_axes_mm[0];
        let b = self.semi_axes_mm[1];
        (u / a) * (u / a) + (v / b) * (v / b) <= 1.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TumorSpec {
    pub center_mm: [f64; 2],
    pub diameter_mm: f64,
    pub activity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub grid: ImageGrid,
    /// Outer-to-inner ellipse list; the last containing ellipse assigns
    /// the tissue.
    pub ellipses: Vec<EllipseSpec>,
    /// Tissue label -> activity (arbitrary units).
    pub activities: BTreeMap<String, f64>,
    /// Tissue label -> prior-image intensity.
    pub prior_intensities: BTreeMap<String, f64>,
    #[serde(default)]
    pub tumors: Vec<TumorSpec>,
    #[serde(default)]
    pub seed: u64,
}

/// Ground-truth activity, anatomical prior, and the derived masks.
#[derive(Debug, Clone)]
pub struct PhantomPair {
    pub activity: Image,
    pub prior: Image,
    pub tumor_masks: Vec<RoiMask>,
    /// Pure-tissue masks (tumor pixels excluded) for quantification.
    pub tissue_masks: BTreeMap<String, RoiMask>,
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<PhantomPair> {
    if spec.ellipses.is_empty() {
        return Err(Error::InvalidArgument("phantom needs at least one ellipse".into()));
    }
    for (label, &a) in &spec.activities {
        if a < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "activity for '{label}' must be nonnegative, got {a}"
            )));
        }
    }
    let grid = spec.grid;
    let n = grid.n_pixels();
    let mut activity = vec![0.0; n];
    let mut prior = vec![0.0; n];
    // usize::MAX marks background.
    let mut tissue_of: Vec<usize> = vec![usize::MAX; n];

    for row in 0..grid.height {
        let y = grid.y_center(row);
        for col in 0..grid.width {
            let x = grid.x_center(col);
            let idx = grid.index(col, row);
            for (e_idx, ellipse) in spec.ellipses.iter().enumerate() {
                if ellipse.contains(x, y) {
                    tissue_of[idx] = e_idx;
                }
            }
            if tissue_of[idx] != usize::MAX {
                let label = &spec.ellipses[tissue_of[idx]].tissue;
                activity[idx] = *spec.activities.get(label).ok_or_else(|| {
                    Error::Config(format!("no activity defined for tissue '{label}'"))
                })?;
                prior[idx] = *spec.prior_intensities.get(label).ok_or_else(|| {
                    Error::Config(format!("no prior intensity defined for tissue '{label}'"))
                })?;
            }
        }
    }

    // Tumors overwrite the activity image only; the prior never sees them.
    let mut tumor_masks = Vec::with_capacity(spec.tumors.len());
    let mut in_tumor = vec![false; n];
    for (t_idx, tumor) in spec.tumors.iter().enumerate() {
        let mask = circular_roi(
            grid,
            (tumor.center_mm[0], tumor.center_mm[1]),
            tumor.diameter_mm,
            format!("tumor_{t_idx}"),
        )?;
        for i in mask.member_indices() {
            activity[i] = tumor.activity;
            in_tumor[i] = true;
        }
        tumor_masks.push(mask);
    }

    let mut tissue_masks = BTreeMap::new();
    for (e_idx, ellipse) in spec.ellipses.iter().enumerate() {
        let members: Vec<bool> = (0..n)
            .map(|i| tissue_of[i] == e_idx && !in_tumor[i])
            .collect();
        if members.iter().any(|&m| m) {
            tissue_masks.insert(
                ellipse.tissue.clone(),
                RoiMask::new(grid, members, ellipse.tissue.clone())?,
            );
        }
    }

    Ok(PhantomPair {
        activity: Image::new(grid, activity)?,
        prior: Image::new(grid, prior)?,
        tumor_masks,
        tissue_masks,
    })
}

/// Default desk-scale phantom: skull-bounded gray-matter ribbon, white
/// interior, one ventricle, three 16 mm tumor disks (activity
/// gray:white:tumor = 4:1:8, T1-like prior contrast).
pub fn default_brain_spec(grid: ImageGrid, seed: u64) -> PhantomSpec {
    let mut activities = BTreeMap::new();
    activities.insert("gray".to_string(), 4.0);
    activities.insert("white".to_string(), 1.0);
    activities.insert("ventricle".to_string(), 0.5);
    let mut prior_intensities = BTreeMap::new();
    prior_intensities.insert("gray".to_string(), 0.6);
    prior_intensities.insert("white".to_string(), 1.0);
    prior_intensities.insert("ventricle".to_string(), 0.2);

    // Scale the anatomy to the field of view so the same spec works on any
    // grid size; 1.0 corresponds to a 128 mm FOV.
    let (half_w, half_h) = grid.half_extent();
    let sx = half_w / 64.0;
    let sy = half_h / 64.0;

    PhantomSpec {
        grid,
        ellipses: vec![
            EllipseSpec {
                center_mm: [0.0, 0.0],
                semi_axes_mm: [56.0 * sx, 46.0 * sy],
                rotation_rad: 0.0,
                tissue: "gray".into(),
            },
            EllipseSpec {
                center_mm: [0.0, 0.0],
                semi_axes_mm: [44.0 * sx, 34.0 * sy],
                rotation_rad: 0.0,
                tissue: "white".into(),
            },
            EllipseSpec {
                center_mm: [0.0, 4.0 * sy],
                semi_axes_mm: [14.0 * sx, 9.0 * sy],
                rotation_rad: 0.0,
                tissue: "ventricle".into(),
            },
        ],
        activities,
        prior_intensities,
        tumors: vec![
            TumorSpec {
                center_mm: [22.0 * sx, 12.0 * sy],
                diameter_mm: 16.0 * sx,
                activity: 8.0,
            },
            TumorSpec {
                center_mm: [-20.0 * sx, 14.0 * sy],
                diameter_mm: 16.0 * sx,
                activity: 8.0,
            },
            TumorSpec {
                center_mm: [0.0, -24.0 * sy],
                diameter_mm: 16.0 * sx,
                activity: 8.0,
            },
        ],
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid64() -> ImageGrid {
        ImageGrid::new(64, 64, 2.0).unwrap()
    }

    #[test]
    fn single_ellipse_is_constant_inside() {
        let grid = grid64();
        let mut activities = BTreeMap::new();
        activities.insert("a".to_string(), 1.0);
        let mut prior_intensities = BTreeMap::new();
        prior_intensities.insert("a".to_string(), 0.5);
        let spec = PhantomSpec {
            grid,
            ellipses: vec![EllipseSpec {
                center_mm: [0.0, 0.0],
                semi_axes_mm: [30.0, 20.0],
                rotation_rad: 0.3,
                tissue: "a".into(),
            }],
            activities,
            prior_intensities,
            tumors: vec![],
            seed: 0,
        };
        let pair = make_phantom(&spec).unwrap();
        for row in 0..grid.height {
            for col in 0..grid.width {
                let inside = spec.ellipses[0].contains(grid.x_center(col), grid.y_center(row));
                let a = pair.activity.get(col, row);
                let p = pair.prior.get(col, row);
                if inside {
                    assert_eq!(a, 1.0);
                    assert_eq!(p, 0.5);
                } else {
                    assert_eq!(a, 0.0);
                    assert_eq!(p, 0.0);
                }
            }
        }
    }

    #[test]
    fn tumor_changes_activity_but_not_prior() {
        let grid = grid64();
        let spec_with = default_brain_spec(grid, 1);
        let mut spec_without = spec_with.clone();
        spec_without.tumors.clear();
        let with = make_phantom(&spec_with).unwrap();
        let without = make_phantom(&spec_without).unwrap();
        // Prior identical whether or not tumors exist.
        assert_eq!(with.prior.values, without.prior.values);
        // Activity elevated to 8 on every tumor pixel.
        for mask in &with.tumor_masks {
            for i in mask.member_indices() {
                assert_eq!(with.activity.values[i], 8.0);
            }
        }
        assert!(!with.tumor_masks.is_empty());
    }

    #[test]
    fn default_spec_tissue_means_match_activities_exactly() {
        let grid = grid64();
        let spec = default_brain_spec(grid, 0);
        let pair = make_phantom(&spec).unwrap();
        for (label, mask) in &pair.tissue_masks {
            let mean = mask.mean(&pair.activity).unwrap();
            let expected = spec.activities[label];
            assert_eq!(mean, expected, "tissue {label}");
        }
    }

    #[test]
    fn empty_ellipse_list_is_rejected() {
        let spec = PhantomSpec {
            grid: grid64(),
            ellipses: vec![],
            activities: BTreeMap::new(),
            prior_intensities: BTreeMap::new(),
            tumors: vec![],
            seed: 0,
        };
        assert!(make_phantom(&spec).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = default_brain_spec(grid64(), 3);
        let json = serde_json::to_string(&spec).unwrap();
        let back: PhantomSpec = serde_json::from_str(&json).unwrap();
        let a = make_phantom(&spec).unwrap();
        let b = make_phantom(&back).unwrap();
        assert_eq!(a.activity.values, b.activity.values);
    }
}
