//! Families of point-set transformations used to generate contrasting data
//! from a single class: exact 90-degree image rotations (pixel permutations,
//! no interpolation) and random affine maps.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::PointSet;
use crate::error::VcaError;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationAngle {
    Deg0,
    Deg90,
    Deg180,
    Deg270,
}

impl RotationAngle {
    pub fn degrees(self) -> u32 {
        match self {
            RotationAngle::Deg0 => 0,
            RotationAngle::Deg90 => 90,
            RotationAngle::Deg180 => 180,
            RotationAngle::Deg270 => 270,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    /// Rotate square images stored as flattened side*side rows.
    Rotation { angle: RotationAngle, side: usize },
    /// x -> A x + b in the feature space; `seed` records provenance of the
    /// draw (0 for the hand-built identity).
    RandomAffine {
        matrix: Array2<f64>,
        bias: Array1<f64>,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Rotations,
    RandomAffine,
}

impl Transform {
    pub fn identity_affine(dim: usize) -> Transform {
        Transform::RandomAffine {
            matrix: Array2::eye(dim),
            bias: Array1::zeros(dim),
            seed: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Transform::Rotation { side, .. } => side * side,
            Transform::RandomAffine { matrix, .. } => matrix.ncols(),
        }
    }
}

/// Apply a transform to every row of a point set.
pub fn apply(transform: &Transform, points: &PointSet) -> Result<PointSet> {
    match transform {
        Transform::Rotation { angle, side } => {
            let n = side * side;
            if points.dim() != n {
                return Err(VcaError::dim(format!(
                    "rotation expects {n} columns (side {side}), got {}",
                    points.dim()
                )));
            }
            if *angle == RotationAngle::Deg0 {
                return Ok(points.clone());
            }
            let data = points.data();
            let mut out = Array2::zeros((points.len(), n));
            let s = *side;
            for p in 0..points.len() {
                for r in 0..s {
                    for c in 0..s {
                        // counter-clockwise rotation as an index permutation
                        let (sr, sc) = match angle {
                            RotationAngle::Deg0 => (r, c),
                            RotationAngle::Deg90 => (c, s - 1 - r),
                            RotationAngle::Deg180 => (s - 1 - r, s - 1 - c),
                            RotationAngle::Deg270 => (s - 1 - c, r),
                        };
                        out[[p, r * s + c]] = data[[p, sr * s + sc]];
                    }
                }
            }
            PointSet::new(out)
        }
        Transform::RandomAffine { matrix, bias, .. } => {
            if points.dim() != matrix.ncols() {
                return Err(VcaError::dim(format!(
                    "affine expects {} columns, got {}",
                    matrix.ncols(),
                    points.dim()
                )));
            }
            let mut out = points.data().dot(&matrix.t());
            for mut row in out.rows_mut() {
                row += bias;
            }
            PointSet::new(out)
        }
    }
}

/// Build a deterministic family of `m` transforms.
///
/// Rotations support m = 3 (0, 90, 180 degrees) or m = 4 (adds 270);
/// random-affine families start with the identity, the remaining members
/// have i.i.d. standard-normal matrix and bias entries drawn from `seed`.
pub fn make_transform_family(
    kind: FamilyKind,
    m: usize,
    dim_or_side: usize,
    seed: u64,
) -> Result<Vec<Transform>> {
    match kind {
        FamilyKind::Rotations => {
            let side = dim_or_side;
            let angles: &[RotationAngle] = match m {
                3 => &[RotationAngle::Deg0, RotationAngle::Deg90, RotationAngle::Deg180],
                4 => &[
                    RotationAngle::Deg0,
                    RotationAngle::Deg90,
                    RotationAngle::Deg180,
                    RotationAngle::Deg270,
                ],
                _ => {
                    return Err(VcaError::invalid(format!(
                        "rotation families support M in {{3,4}}, got {m}"
                    )))
                }
            };
            Ok(angles
                .iter()
                .map(|&angle| Transform::Rotation { angle, side })
                .collect())
        }
        FamilyKind::RandomAffine => {
            if m < 1 {
                return Err(VcaError::invalid("family size must be >= 1"));
            }
            let dim = dim_or_side;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut family = vec![Transform::identity_affine(dim)];
            for _ in 1..m {
                let matrix = Array2::from_shape_fn((dim, dim), |_| {
                    StandardNormal.sample(&mut rng)
                });
                let bias = Array1::from_shape_fn(dim, |_| StandardNormal.sample(&mut rng));
                family.push(Transform::RandomAffine { matrix, bias, seed });
            }
            Ok(family)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image_points() -> PointSet {
        // two 3x3 "images"
        PointSet::from_rows(&[
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
            vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
        ])
        .unwrap()
    }

    #[test]
    fn rotation_zero_is_identity() {
        let p = image_points();
        let t = Transform::Rotation {
            angle: RotationAngle::Deg0,
            side: 3,
        };
        assert_eq!(apply(&t, &p).unwrap(), p);
    }

    #[test]
    fn rotation_90_four_times_is_identity() {
        let p = image_points();
        let t = Transform::Rotation {
            angle: RotationAngle::Deg90,
            side: 3,
        };
        let mut q = p.clone();
        for _ in 0..4 {
            q = apply(&t, &q).unwrap();
        }
        assert_eq!(q, p);
    }

    #[test]
    fn rotation_180_equals_90_twice() {
        let p = image_points();
        let t90 = Transform::Rotation {
            angle: RotationAngle::Deg90,
            side: 3,
        };
        let t180 = Transform::Rotation {
            angle: RotationAngle::Deg180,
            side: 3,
        };
        let twice = apply(&t90, &apply(&t90, &p).unwrap()).unwrap();
        assert_eq!(apply(&t180, &p).unwrap(), twice);
    }

    #[test]
    fn identity_affine_is_identity() {
        let p = PointSet::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let t = Transform::identity_affine(2);
        assert_eq!(apply(&t, &p).unwrap(), p);
    }

    #[test]
    fn family_rotations() {
        let f4 = make_transform_family(FamilyKind::Rotations, 4, 28, 0).unwrap();
        let angles: Vec<u32> = f4
            .iter()
            .map(|t| match t {
                Transform::Rotation { angle, .. } => angle.degrees(),
                _ => panic!(),
            })
            .collect();
        assert_eq!(angles, vec![0, 90, 180, 270]);
        let f3 = make_transform_family(FamilyKind::Rotations, 3, 28, 0).unwrap();
        assert_eq!(f3.len(), 3);
        assert!(make_transform_family(FamilyKind::Rotations, 5, 28, 0).is_err());
    }

    #[test]
    fn affine_family_deterministic_and_identity_first() {
        let a = make_transform_family(FamilyKind::RandomAffine, 3, 4, 99).unwrap();
        let b = make_transform_family(FamilyKind::RandomAffine, 3, 4, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], Transform::identity_affine(4));
        assert_ne!(a[1], a[2]);
    }

    #[test]
    fn rotation_dimension_mismatch() {
        let p = PointSet::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let t = Transform::Rotation {
            angle: RotationAngle::Deg90,
            side: 3,
        };
        assert!(apply(&t, &p).is_err());
    }

    proptest! {
        #[test]
        fn rotation_preserves_pixel_multiset(vals in proptest::collection::vec(-10.0f64..10.0, 9)) {
            let p = PointSet::from_rows(&[vals.clone()]).unwrap();
            for angle in [RotationAngle::Deg90, RotationAngle::Deg180, RotationAngle::Deg270] {
                let t = Transform::Rotation { angle, side: 3 };
                let q = apply(&t, &p).unwrap();
                let mut a: Vec<f64> = p.data().iter().copied().collect();
                let mut b: Vec<f64> = q.data().iter().copied().collect();
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                prop_assert_eq!(a, b);
            }
        }
    }
}
