//! Coarse gripper–object contact-transition tokens between consecutive keyframes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::KEYFRAME_SIZE;
use crate::model::{ContactFlag, ContactLabel, ContactTransition, Detection, DetectionSet, RobotProfile, TrackSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContactError {
    #[error("NO_OBJECTS: no candidate objects to measure against")]
    NoObjects,
    #[error("INVALID_PARAMS: {0}")]
    InvalidParams(String),
}

impl ContactError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NoObjects => "NO_OBJECTS",
            Self::InvalidParams(_) => "INVALID_PARAMS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactParams {
    pub tau_iou: f64,
    /// Threshold on diagonal-normalized center distance change.
    pub tau_d: f64,
    pub min_confidence: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { tau_iou: 0.1, tau_d: 0.15, min_confidence: 0.5 }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<(), ContactError> {
        if !(self.tau_iou > 0.0 && self.tau_d > 0.0) {
            return Err(ContactError::InvalidParams("tau_iou and tau_d must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(ContactError::InvalidParams("min_confidence must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Diagonal of a 512×512 keyframe.
pub fn keyframe_diagonal() -> f64 {
    KEYFRAME_SIZE as f64 * std::f64::consts::SQRT_2
}

/// Index into `objects` of the nearest box center and its normalized distance.
/// Equal distances resolve to the lower instance id.
pub fn nearest_object_distance(
    gripper: &Detection,
    objects: &[Detection],
    diagonal: f64,
) -> Result<(usize, f64), ContactError> {
    objects
        .iter()
        .enumerate()
        .map(|(i, o)| (i, gripper.bbox.center_distance(&o.bbox) / diagonal))
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(objects[a.0].instance_id.cmp(&objects[b.0].instance_id))
        })
        .ok_or(ContactError::NoObjects)
}

/// The piecewise GAIN / LOSS / STABLE rule on raw deltas. Bounds are inclusive.
pub fn classify_deltas<S: Scalar>(delta_iou: S, delta_d: S, tau_iou: S, tau_d: S) -> ContactLabel {
    if delta_iou >= tau_iou && delta_d <= -tau_d {
        ContactLabel::Gain
    } else if -delta_iou >= tau_iou && delta_d >= tau_d {
        ContactLabel::Loss
    } else {
        ContactLabel::Stable
    }
}

/// Classify one (gripper, object) pair observed at keyframe `from_keyframe`
/// and again at the next keyframe.
///
/// If any of the four detections is below `min_confidence` the transition is
/// STABLE with a `LOW_CONFIDENCE` flag; deltas are still recorded.
pub fn classify_contact(
    from_keyframe: usize,
    pair_k: (&Detection, &Detection),
    pair_k1: (&Detection, &Detection),
    params: &ContactParams,
) -> ContactTransition {
    classify_contact_scaled(from_keyframe, pair_k, pair_k1, params, keyframe_diagonal())
}

/// [`classify_contact`] with an explicit image diagonal for distance normalization.
pub fn classify_contact_scaled(
    from_keyframe: usize,
    pair_k: (&Detection, &Detection),
    pair_k1: (&Detection, &Detection),
    params: &ContactParams,
    diagonal: f64,
) -> ContactTransition {
    let (g0, o0) = pair_k;
    let (g1, o1) = pair_k1;
    let delta_iou = g1.bbox.iou(&o1.bbox) - g0.bbox.iou(&o0.bbox);
    let delta_dist = (g1.bbox.center_distance(&o1.bbox) - g0.bbox.center_distance(&o0.bbox)) / diagonal;
    let confident = [g0, o0, g1, o1].iter().all(|d| d.confidence >= params.min_confidence);
    let (label, flag) = if confident {
        (classify_deltas(delta_iou, delta_dist, params.tau_iou, params.tau_d), None)
    } else {
        (ContactLabel::Stable, Some(ContactFlag::LowConfidence))
    };
    ContactTransition { from_keyframe, to_keyframe: from_keyframe + 1, label, delta_iou, delta_dist, flag }
}

fn find_instance(set: &DetectionSet, id: u32) -> Option<&Detection> {
    set.iter().find(|d| d.instance_id == Some(id))
}

/// One transition per consecutive keyframe pair.
///
/// At keyframe k the most confident gripper detection is paired with its
/// nearest non-gripper object; both are then followed through their tracks
/// into keyframe k+1. Missing pieces yield STABLE with a `NO_PAIR` flag.
pub fn episode_contacts(
    detections: &[DetectionSet],
    tracks: &TrackSet,
    profile: &RobotProfile,
    params: &ContactParams,
) -> Vec<ContactTransition> {
    let diagonal = keyframe_diagonal();
    (0..detections.len().saturating_sub(1))
        .map(|k| {
            let here = &detections[k];
            let gripper = here
                .iter()
                .filter(|d| profile.is_gripper(&d.class_label))
                .max_by(|a, b| a.confidence.total_cmp(&b.confidence).then(b.instance_id.cmp(&a.instance_id)));
            let objects: Vec<Detection> = here.iter().filter(|d| !profile.is_gripper(&d.class_label)).cloned().collect();
            let Some(g0) = gripper else {
                return ContactTransition::fallback(k, ContactFlag::NoPair);
            };
            let Ok((oi, _)) = nearest_object_distance(g0, &objects, diagonal) else {
                return ContactTransition::fallback(k, ContactFlag::NoPair);
            };
            let o0 = &objects[oi];
            let next = &detections[k + 1];
            let followed = g0
                .instance_id
                .zip(o0.instance_id)
                .filter(|(g, o)| tracks.get(*g).is_some() && tracks.get(*o).is_some())
                .and_then(|(g, o)| Some((find_instance(next, g)?, find_instance(next, o)?)));
            match followed {
                Some((g1, o1)) => classify_contact_scaled(k, (g0, o0), (g1, o1), params, diagonal),
                None => ContactTransition::fallback(k, ContactFlag::NoPair),
            }
        })
        .collect()
}
