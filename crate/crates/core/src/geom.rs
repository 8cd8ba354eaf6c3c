//! Point scenes, 3D boxes and the geometric helpers shared by the
//! augmentation operations.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Passed through unchanged by every geometric operation.
    pub intensity: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point {
            x,
            y,
            z,
            intensity: 0.0,
        }
    }

    pub fn with_intensity(mut self, intensity: f64) -> Self {
        self.intensity = intensity;
        self
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Point) -> bool {
        self.x.to_bits() == other.x.to_bits()
            && self.y.to_bits() == other.y.to_bits()
            && self.z.to_bits() == other.z.to_bits()
            && self.intensity.to_bits() == other.intensity.to_bits()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Vehicle,
    Pedestrian,
    Cyclist,
    Other,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Vehicle,
        ClassLabel::Pedestrian,
        ClassLabel::Cyclist,
        ClassLabel::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Vehicle => "vehicle",
            ClassLabel::Pedestrian => "pedestrian",
            ClassLabel::Cyclist => "cyclist",
            ClassLabel::Other => "other",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown class label `{s}`"))
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_heading(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    if a <= -PI {
        a += TAU;
    }
    a
}

/// Shortest unsigned angular distance between two azimuths, in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center_x: f64,
    pub center_y: f64,
    pub center_z: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Rotation about +z in `(-π, π]`.
    pub heading: f64,
    pub class_label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("box dimensions must be positive and finite, got {length} x {width} x {height}")]
    BadDimensions { length: f64, width: f64, height: f64 },
    #[error("box pose must be finite")]
    NonFinitePose,
}

impl Box3D {
    pub fn new(
        center: [f64; 3],
        dims: [f64; 3],
        heading: f64,
        class_label: ClassLabel,
    ) -> Result<Self, GeometryError> {
        let [length, width, height] = dims;
        if !(length > 0.0 && width > 0.0 && height > 0.0)
            || !(length.is_finite() && width.is_finite() && height.is_finite())
        {
            return Err(GeometryError::BadDimensions {
                length,
                width,
                height,
            });
        }
        if !(center.iter().all(|c| c.is_finite()) && heading.is_finite()) {
            return Err(GeometryError::NonFinitePose);
        }
        Ok(Box3D {
            center_x: center[0],
            center_y: center[1],
            center_z: center[2],
            length,
            width,
            height,
            heading: normalize_heading(heading),
            class_label,
        })
    }

    pub fn bit_eq(&self, other: &Box3D) -> bool {
        let a = [
            self.center_x,
            self.center_y,
            self.center_z,
            self.length,
            self.width,
            self.height,
            self.heading,
        ];
        let b = [
            other.center_x,
            other.center_y,
            other.center_z,
            other.length,
            other.width,
            other.height,
            other.heading,
        ];
        self.class_label == other.class_label
            && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    /// World point to box-local frame (u along length, v along width, w up).
    pub fn to_local(&self, p: &Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        let dx = p.x - self.center_x;
        let dy = p.y - self.center_y;
        Point {
            x: dx * c + dy * s,
            y: -dx * s + dy * c,
            z: p.z - self.center_z,
            intensity: p.intensity,
        }
    }

    pub fn to_world(&self, local: &Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        Point {
            x: self.center_x + local.x * c - local.y * s,
            y: self.center_y + local.x * s + local.y * c,
            z: self.center_z + local.z,
            intensity: local.intensity,
        }
    }

    /// Inclusive point-in-box test with a small absolute slack for points
    /// that were round-tripped through the local frame.
    pub fn contains(&self, p: &Point, slack: f64) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.length / 2.0 + slack
            && l.y.abs() <= self.width / 2.0 + slack
            && l.z.abs() <= self.height / 2.0 + slack
    }

    /// Bird's-eye-view footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[u, v]| [self.center_x + u * c - v * s, self.center_y + u * s + v * c])
    }

    pub fn bev_area(&self) -> f64 {
        self.length * self.width
    }
}

/// `true` when the two footprints share a region of positive area, i.e. when
/// their bird's-eye-view IoU is strictly positive. Separating-axis test on
/// the four edge normals; touching footprints do not overlap.
pub fn bev_overlaps(a: &Box3D, b: &Box3D) -> bool {
    let ca = a.bev_corners();
    let cb = b.bev_corners();
    for corners in [&ca, &cb] {
        for i in 0..2 {
            let e = [
                corners[i + 1][0] - corners[i][0],
                corners[i + 1][1] - corners[i][1],
            ];
            let axis = [-e[1], e[0]];
            let project = |pts: &[[f64; 2]; 4]| {
                pts.iter()
                    .map(|p| p[0] * axis[0] + p[1] * axis[1])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    })
            };
            let (alo, ahi) = project(&ca);
            let (blo, bhi) = project(&cb);
            if ahi <= blo || bhi <= alo {
                return false;
            }
        }
    }
    true
}

/// Bird's-eye-view intersection-over-union via convex polygon clipping.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let inter = polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners()));
    let union = a.bev_area() + b.bev_area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Sutherland–Hodgman clip of `subject` against the counter-clockwise convex
/// polygon `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let sc = side(cur);
            let sp = side(prev);
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    acc.abs() / 2.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointScene {
    pub scene_id: String,
    pub points: Vec<Point>,
    pub boxes: Vec<Box3D>,
}

impl PointScene {
    pub fn new(scene_id: impl Into<String>, points: Vec<Point>, boxes: Vec<Box3D>) -> Self {
        PointScene {
            scene_id: scene_id.into(),
            points,
            boxes,
        }
    }

    /// Bitwise equality of ids, points and boxes.
    pub fn bit_eq(&self, other: &PointScene) -> bool {
        self.scene_id == other.scene_id
            && self.points.len() == other.points.len()
            && self.boxes.len() == other.boxes.len()
            && self.points.iter().zip(&other.points).all(|(a, b)| a.bit_eq(b))
            && self.boxes.iter().zip(&other.boxes).all(|(a, b)| a.bit_eq(b))
    }

    pub fn all_finite(&self) -> bool {
        self.points.iter().all(Point::is_finite)
            && self.boxes.iter().all(|b| {
                [b.center_x, b.center_y, b.center_z, b.heading]
                    .iter()
                    .all(|v| v.is_finite())
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoord {
    pub r: f64,
    /// Polar angle from +z, in `[0, π]`.
    pub theta: f64,
    /// Azimuth from +x, in `(-π, π]`.
    pub phi: f64,
}

pub fn to_spherical(p: &Point) -> SphericalCoord {
    let r = p.norm();
    if r == 0.0 {
        return SphericalCoord {
            r: 0.0,
            theta: 0.0,
            phi: 0.0,
        };
    }
    let theta = (p.z / r).clamp(-1.0, 1.0).acos();
    // atan2 returns -π for (-0.0, negative x); fold it onto +π.
    let phi = normalize_heading(p.y.atan2(p.x));
    SphericalCoord { r, theta, phi }
}

pub fn from_spherical(s: &SphericalCoord) -> Point {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    Point::new(s.r * st * cp, s.r * st * sp, s.r * ct)
}

/// Rotates every point and box about the z axis by `angle` radians.
pub fn rotate_z(scene: &PointScene, angle: f64) -> PointScene {
    if angle == 0.0 {
        return scene.clone();
    }
    let (s, c) = angle.sin_cos();
    let points = scene
        .points
        .iter()
        .map(|p| Point {
            x: p.x * c - p.y * s,
            y: p.x * s + p.y * c,
            z: p.z,
            intensity: p.intensity,
        })
        .collect();
    let boxes = scene
        .boxes
        .iter()
        .map(|b| Box3D {
            center_x: b.center_x * c - b.center_y * s,
            center_y: b.center_x * s + b.center_y * c,
            heading: normalize_heading(b.heading + angle),
            ..*b
        })
        .collect();
    PointScene {
        scene_id: scene.scene_id.clone(),
        points,
        boxes,
    }
}
