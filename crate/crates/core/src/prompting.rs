//! Point prompts for the body target and each hand target.
//!
//! Body: every detected `body_core` keypoint is a positive; no negatives.
//! Hand: the detected first joint of each finger is a positive; detected
//! `body_negatives` and `face_negatives` are negatives. Undetected keypoints
//! never become prompts.

use serde::{Deserialize, Serialize};

use crate::pose::{Hand, KeypointFrame, KeypointTaxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Body,
    LeftHand,
    RightHand,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Body, Target::LeftHand, Target::RightHand];

    pub fn name(self) -> &'static str {
        match self {
            Target::Body => "body",
            Target::LeftHand => "left_hand",
            Target::RightHand => "right_hand",
        }
    }

    pub fn object_id(self) -> u32 {
        self as u32 + 1
    }
}

impl From<Hand> for Target {
    fn from(h: Hand) -> Self {
        match h {
            Hand::Left => Target::LeftHand,
            Hand::Right => Target::RightHand,
        }
    }
}

pub type Point = (f32, f32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub target: Target,
    pub anchor_frame: usize,
    pub positives: Vec<Point>,
    pub negatives: Vec<Point>,
}

impl PromptSet {
    /// No detected keypoint qualified as a positive; the caller picks a fallback.
    pub fn is_unpromptable(&self) -> bool {
        self.positives.is_empty()
    }
}

fn collect(kf: &KeypointFrame, indices: &[usize]) -> Vec<Point> {
    kf.detected_in(indices).map(|(_, k)| (k.x, k.y)).collect()
}

pub fn body_prompts(kf: &KeypointFrame, tax: &KeypointTaxonomy) -> PromptSet {
    PromptSet {
        target: Target::Body,
        anchor_frame: kf.frame_index,
        positives: collect(kf, &tax.groups.body_core),
        negatives: Vec::new(),
    }
}

/// Negatives that coincide exactly with a positive are dropped.
pub fn hand_prompts(kf: &KeypointFrame, tax: &KeypointTaxonomy, hand: Hand) -> PromptSet {
    let positives = collect(kf, tax.first_joints(hand));
    let negatives = collect(kf, &tax.hand_negatives())
        .into_iter()
        .filter(|n| !positives.contains(n))
        .collect();
    PromptSet {
        target: hand.into(),
        anchor_frame: kf.frame_index,
        positives,
        negatives,
    }
}

/// Body, left hand and right hand prompts from the anchor frame.
pub fn all_prompts(kf: &KeypointFrame, tax: &KeypointTaxonomy) -> [PromptSet; 3] {
    [
        body_prompts(kf, tax),
        hand_prompts(kf, tax, Hand::Left),
        hand_prompts(kf, tax, Hand::Right),
    ]
}
