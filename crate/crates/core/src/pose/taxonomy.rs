use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PoseError;

const DEFAULT_LAYOUT: &str = include_str!("../../config/taxonomy_default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hand {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyGroups {
    pub body_core: Vec<usize>,
    pub face_detail: Vec<usize>,
    pub left_hand_all: Vec<usize>,
    pub right_hand_all: Vec<usize>,
    pub left_hand_first_joints: Vec<usize>,
    pub right_hand_first_joints: Vec<usize>,
    pub face_negatives: Vec<usize>,
    pub body_negatives: Vec<usize>,
}

/// Named index groups over a whole-body keypoint layout.
///
/// Coordinates follow the image convention: origin top-left, x right, y down,
/// in pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeypointTaxonomy {
    pub total_count: usize,
    pub groups: TaxonomyGroups,
}

impl Default for KeypointTaxonomy {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_LAYOUT).expect("built-in taxonomy is valid")
    }
}

impl KeypointTaxonomy {
    pub fn from_toml_str(text: &str) -> Result<Self, PoseError> {
        let tax: Self = toml::from_str(text).map_err(|e| PoseError::Taxonomy(e.to_string()))?;
        tax.validate()?;
        Ok(tax)
    }

    pub fn load(path: &Path) -> Result<Self, PoseError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// The checked-in layout text, for hashing and inspection.
    pub fn default_toml() -> &'static str {
        DEFAULT_LAYOUT
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("taxonomy serializes")
    }

    pub fn hand_all(&self, hand: Hand) -> &[usize] {
        match hand {
            Hand::Left => &self.groups.left_hand_all,
            Hand::Right => &self.groups.right_hand_all,
        }
    }

    pub fn first_joints(&self, hand: Hand) -> &[usize] {
        match hand {
            Hand::Left => &self.groups.left_hand_first_joints,
            Hand::Right => &self.groups.right_hand_first_joints,
        }
    }

    /// `body_negatives` followed by `face_negatives`, duplicates removed.
    pub fn hand_negatives(&self) -> Vec<usize> {
        let mut seen = BTreeSet::new();
        self.groups
            .body_negatives
            .iter()
            .chain(&self.groups.face_negatives)
            .copied()
            .filter(|i| seen.insert(*i))
            .collect()
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        let g = &self.groups;
        let named: [(&str, &[usize]); 8] = [
            ("body_core", &g.body_core),
            ("face_detail", &g.face_detail),
            ("left_hand_all", &g.left_hand_all),
            ("right_hand_all", &g.right_hand_all),
            ("left_hand_first_joints", &g.left_hand_first_joints),
            ("right_hand_first_joints", &g.right_hand_first_joints),
            ("face_negatives", &g.face_negatives),
            ("body_negatives", &g.body_negatives),
        ];
        for (name, idx) in named {
            if let Some(bad) = idx.iter().find(|&&i| i >= self.total_count) {
                return Err(PoseError::Taxonomy(format!(
                    "{name} index {bad} out of range for {} keypoints",
                    self.total_count
                )));
            }
        }
        for hand in [Hand::Left, Hand::Right] {
            let first = self.first_joints(hand);
            if first.len() != 5 {
                return Err(PoseError::Taxonomy(format!(
                    "{hand:?} hand needs exactly 5 first-joint indices, got {}",
                    first.len()
                )));
            }
            let all: BTreeSet<_> = self.hand_all(hand).iter().collect();
            if let Some(bad) = first.iter().find(|i| !all.contains(i)) {
                return Err(PoseError::Taxonomy(format!(
                    "{hand:?} first joint {bad} is not part of that hand"
                )));
            }
            if let Some(bad) = g.face_negatives.iter().find(|i| all.contains(i)) {
                return Err(PoseError::Taxonomy(format!(
                    "face negative {bad} belongs to the {hand:?} hand"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_shape() {
        let tax = KeypointTaxonomy::default();
        assert_eq!(tax.total_count, 116);
        assert_eq!(tax.groups.left_hand_all.len(), 21);
        assert_eq!(tax.groups.right_hand_all.len(), 21);
        assert_eq!(tax.groups.face_detail.len(), 51);
        // the groups partition the layout
        let mut all: Vec<usize> = tax
            .groups
            .body_core
            .iter()
            .chain(&tax.groups.face_detail)
            .chain(&tax.groups.left_hand_all)
            .chain(&tax.groups.right_hand_all)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..116).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_out_of_range_and_bad_joint_sets() {
        let mut tax = KeypointTaxonomy::default();
        tax.groups.body_core.push(116);
        assert!(tax.validate().is_err());

        let mut tax = KeypointTaxonomy::default();
        tax.groups.left_hand_first_joints.pop();
        assert!(tax.validate().is_err());

        let mut tax = KeypointTaxonomy::default();
        tax.groups.right_hand_first_joints[0] = 75;
        assert!(tax.validate().is_err());

        let mut tax = KeypointTaxonomy::default();
        tax.groups.face_negatives.push(80);
        assert!(tax.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let tax = KeypointTaxonomy::default();
        let back = KeypointTaxonomy::from_toml_str(&tax.to_toml_string()).unwrap();
        assert_eq!(back, tax);
    }

    #[test]
    fn hand_negatives_are_union_without_duplicates() {
        let mut tax = KeypointTaxonomy::default();
        tax.groups.face_negatives.push(5);
        let neg = tax.hand_negatives();
        assert_eq!(neg.iter().filter(|&&i| i == 5).count(), 1);
        assert_eq!(neg.len(), 6 + 8);
    }
}
