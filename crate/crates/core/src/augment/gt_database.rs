//! Ground-truth object database and copy-paste augmentation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{invalid, AugmentError, OpKind};
use crate::geom::{bev_overlaps, Box3D, ClassLabel, Point, PointScene};
use crate::rng::RandomStream;

/// Hard cap on boxes pasted into one scene (strictly fewer than 25).
pub const MAX_PASTED_BOXES: usize = 24;

const CONTAINMENT_SLACK: f64 = 1e-9;

/// One stored object: its world pose and its interior points in the
/// box-local frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtEntry {
    pub bbox: Box3D,
    pub local_points: Vec<Point>,
}

impl GtEntry {
    pub fn class_label(&self) -> ClassLabel {
        self.bbox.class_label
    }

    fn local_contains(&self, p: &Point) -> bool {
        p.x.abs() <= self.bbox.length / 2.0 + CONTAINMENT_SLACK
            && p.y.abs() <= self.bbox.width / 2.0 + CONTAINMENT_SLACK
            && p.z.abs() <= self.bbox.height / 2.0 + CONTAINMENT_SLACK
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatabaseError {
    #[error("entry {index}: local point {point} lies outside its box")]
    PointOutsideBox { index: usize, point: usize },
}

/// Read-only after construction; safe to share across threads.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruthDatabase {
    entries: Vec<GtEntry>,
    by_class: BTreeMap<ClassLabel, Vec<usize>>,
}

impl GroundTruthDatabase {
    pub fn new(entries: Vec<GtEntry>) -> Result<Self, DatabaseError> {
        for (index, e) in entries.iter().enumerate() {
            if let Some(point) = e.local_points.iter().position(|p| !e.local_contains(p)) {
                return Err(DatabaseError::PointOutsideBox { index, point });
            }
        }
        let mut by_class: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            by_class.entry(e.class_label()).or_default().push(i);
        }
        Ok(GroundTruthDatabase { entries, by_class })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Harvests every labeled box of every scene together with the scene
    /// points that fall inside it.
    pub fn from_scenes<'a>(scenes: impl IntoIterator<Item = &'a PointScene>) -> Self {
        let mut entries = Vec::new();
        for scene in scenes {
            for b in &scene.boxes {
                let local_points = scene
                    .points
                    .iter()
                    .map(|p| b.to_local(p))
                    .filter(|l| {
                        l.x.abs() <= b.length / 2.0 && l.y.abs() <= b.width / 2.0 && l.z.abs() <= b.height / 2.0
                    })
                    .collect();
                entries.push(GtEntry {
                    bbox: *b,
                    local_points,
                });
            }
        }
        Self::new(entries).expect("harvested points are inside their boxes")
    }

    pub fn entries(&self) -> &[GtEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_count(&self, class: ClassLabel) -> usize {
        self.by_class.get(&class).map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GtOutcome {
    pub pasted: usize,
    pub warnings: Vec<String>,
}

/// Pastes stored objects at their stored world pose.
///
/// Up to [`MAX_PASTED_BOXES`] candidates are drawn uniformly from the
/// database. A candidate of class `c` is accepted with `class_probs[c]` and
/// then rejected if its footprint overlaps (BEV IoU > 0) any box already in
/// the scene or already pasted. Each candidate consumes exactly two draws.
pub fn ground_truth_augment(
    scene: &PointScene,
    db: &GroundTruthDatabase,
    class_probs: [f64; 4],
    rng: &mut RandomStream,
) -> Result<(PointScene, GtOutcome), AugmentError> {
    const NAMES: [&str; 4] = ["vehicle_prob", "pedestrian_prob", "cyclist_prob", "other_prob"];
    for (p, name) in class_probs.iter().zip(NAMES) {
        if !(0.0..=1.0).contains(p) {
            return Err(invalid(OpKind::GroundTruthAugmentor, name, format!("{p} outside [0, 1]")));
        }
    }
    let mut outcome = GtOutcome::default();
    for class in ClassLabel::ALL {
        if class_probs[class.index()] > 0.0 && db.class_count(class) == 0 {
            outcome
                .warnings
                .push(format!("ground-truth database has no `{class}` entries; class skipped"));
        }
    }
    if db.is_empty() || class_probs.iter().all(|p| *p == 0.0) {
        return Ok((scene.clone(), outcome));
    }

    let mut out = scene.clone();
    let mut occupied: Vec<Box3D> = scene.boxes.clone();
    for _ in 0..MAX_PASTED_BOXES {
        let idx = rng.index(db.len());
        let accept = rng.chance(class_probs[db.entries[idx].class_label().index()]);
        if !accept {
            continue;
        }
        let entry = &db.entries[idx];
        if occupied.iter().any(|b| bev_overlaps(b, &entry.bbox)) {
            continue;
        }
        occupied.push(entry.bbox);
        out.boxes.push(entry.bbox);
        out.points
            .extend(entry.local_points.iter().map(|l| entry.bbox.to_world(l)));
        outcome.pasted += 1;
    }
    Ok((out, outcome))
}
