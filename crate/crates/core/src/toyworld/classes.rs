use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Partition of class ids into in-distribution and out-of-distribution sets,
/// with a base color for each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSet {
    pub in_dist_ids: Vec<u8>,
    pub ood_ids: Vec<u8>,
    pub palette: BTreeMap<u8, [u8; 3]>,
    pub background_id: u8,
}

impl Default for ClassSet {
    /// Eight street-scene-like in-distribution classes and three OoD classes.
    fn default() -> Self {
        let colors: [(u8, [u8; 3]); 11] = [
            (0, [128, 64, 128]),  // road
            (1, [244, 35, 232]),  // sidewalk
            (2, [70, 70, 70]),    // building
            (3, [107, 142, 35]),  // vegetation
            (4, [70, 130, 180]),  // sky
            (5, [0, 0, 142]),     // car
            (6, [220, 20, 60]),   // person
            (7, [220, 220, 0]),   // sign
            (8, [255, 140, 0]),   // ood: orange
            (9, [0, 255, 255]),   // ood: cyan
            (10, [160, 255, 160]), // ood: mint
        ];
        ClassSet {
            in_dist_ids: (0..8).collect(),
            ood_ids: (8..11).collect(),
            palette: colors.into_iter().collect(),
            background_id: 0,
        }
    }
}

impl ClassSet {
    /// Build and validate a class set.
    pub fn new(
        in_dist_ids: Vec<u8>,
        ood_ids: Vec<u8>,
        palette: BTreeMap<u8, [u8; 3]>,
        background_id: u8,
    ) -> Result<Self> {
        let set = ClassSet {
            in_dist_ids,
            ood_ids,
            palette,
            background_id,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dist_ids.is_empty() {
            return Err(Error::invalid("class set has no in-distribution ids"));
        }
        if let Some(id) = self.ood_ids.iter().find(|id| self.in_dist_ids.contains(id)) {
            return Err(Error::invalid(format!(
                "class {id} is both in-distribution and out-of-distribution"
            )));
        }
        if !self.in_dist_ids.contains(&self.background_id) {
            return Err(Error::invalid(format!(
                "background id {} is not an in-distribution class",
                self.background_id
            )));
        }
        for id in self.all_ids() {
            if !self.palette.contains_key(&id) {
                return Err(Error::invalid(format!("palette has no color for class {id}")));
            }
        }
        let mut seen = self.all_ids();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.in_dist_ids.len() + self.ood_ids.len() {
            return Err(Error::invalid("duplicate class ids"));
        }
        Ok(())
    }

    pub fn all_ids(&self) -> Vec<u8> {
        self.in_dist_ids
            .iter()
            .chain(&self.ood_ids)
            .copied()
            .collect()
    }

    pub fn contains(&self, id: u8) -> bool {
        self.in_dist_ids.contains(&id) || self.ood_ids.contains(&id)
    }

    pub fn is_ood(&self, id: u8) -> bool {
        self.ood_ids.contains(&id)
    }

    /// Number of in-distribution classes, i.e. the channel count of one-hot
    /// inputs and of segmentation outputs.
    pub fn num_in_dist(&self) -> usize {
        self.in_dist_ids.len()
    }

    /// Channel index of an in-distribution id.
    pub fn channel_of(&self, id: u8) -> Option<usize> {
        self.in_dist_ids.iter().position(|&c| c == id)
    }

    pub fn color(&self, id: u8) -> Result<[u8; 3]> {
        self.palette.get(&id).copied().ok_or(Error::UnknownClass(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = ClassSet::default();
        c.validate().unwrap();
        assert_eq!(c.num_in_dist(), 8);
        assert_eq!(c.ood_ids.len(), 3);
    }

    #[test]
    fn overlapping_sets_rejected() {
        let mut c = ClassSet::default();
        c.ood_ids.push(3);
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_palette_rejected() {
        let mut c = ClassSet::default();
        c.palette.remove(&9);
        assert!(c.validate().is_err());
    }
}
