use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::{ObjectCatalog, Session};

pub const DEFAULT_MIN_TRIALS: usize = 3;

/// Geometry of one class. Class indices are sorted by shape group, then size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub shape_group: u32,
    pub size_index: u32,
    /// Raw object ids merged into this class.
    pub object_ids: Vec<u32>,
    pub trial_count: usize,
}

/// Maps raw object ids to contiguous class indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    /// `None` marks a dropped object.
    pub objects: BTreeMap<u32, Option<usize>>,
    pub classes: Vec<ClassInfo>,
}

impl ClassMap {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Class index of a raw object id, or `None` when dropped or unknown.
    pub fn class_of(&self, object_id: u32) -> Option<usize> {
        self.objects.get(&object_id).copied().flatten()
    }

    pub fn is_dropped(&self, object_id: u32) -> bool {
        matches!(self.objects.get(&object_id), Some(None))
    }

    /// True when `a` and `b` are index neighbours inside the same shape group.
    pub fn size_neighbours(&self, a: usize, b: usize) -> bool {
        a.abs_diff(b) == 1
            && match (self.classes.get(a), self.classes.get(b)) {
                (Some(x), Some(y)) => x.shape_group == y.shape_group,
                _ => false,
            }
    }

    pub fn shape_groups(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.shape_group).collect()
    }
}

/// Follows `duplicate_of` links to the object that defines the geometry.
fn canonical(catalog: &ObjectCatalog, object_id: u32) -> Result<(u32, u32)> {
    let mut id = object_id;
    for _ in 0..=catalog.entries.len() {
        let e = catalog
            .get(id)
            .ok_or_else(|| Error::Data(format!("object {id} missing from catalog")))?;
        match e.duplicate_of {
            Some(next) if next != id => id = next,
            _ => return Ok((e.shape_group, e.size_index)),
        }
    }
    Err(Error::Data(format!("duplicate_of cycle at object {object_id}")))
}

/// Merges duplicate objects, drops classes with fewer than `min_trials` trials,
/// and indexes the rest by (shape group, size).
pub fn build_class_map(session: &Session, min_trials: usize) -> Result<ClassMap> {
    if session.catalog.is_empty() {
        return Err(Error::Data("empty object catalog".into()));
    }
    if min_trials == 0 {
        return Err(Error::Config("min_trials must be at least 1".into()));
    }

    let mut key_of = BTreeMap::new();
    for e in &session.catalog.entries {
        key_of.insert(e.object_id, canonical(&session.catalog, e.object_id)?);
    }
    let mut trials: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for t in &session.trials {
        let key = key_of
            .get(&t.object_id)
            .ok_or_else(|| Error::Data(format!("trial {} uses unknown object", t.trial_id)))?;
        *trials.entry(*key).or_default() += 1;
    }

    let retained: BTreeSet<(u32, u32)> = trials
        .iter()
        .filter(|(_, &n)| n >= min_trials)
        .map(|(&k, _)| k)
        .collect();
    let index: BTreeMap<(u32, u32), usize> =
        retained.iter().enumerate().map(|(i, &k)| (k, i)).collect();

    let mut classes: Vec<ClassInfo> = retained
        .iter()
        .map(|&(shape_group, size_index)| ClassInfo {
            shape_group,
            size_index,
            object_ids: Vec::new(),
            trial_count: trials[&(shape_group, size_index)],
        })
        .collect();
    let mut objects = BTreeMap::new();
    for (&object_id, key) in &key_of {
        let class = index.get(key).copied();
        if let Some(c) = class {
            classes[c].object_ids.push(object_id);
        }
        objects.insert(object_id, class);
    }
    Ok(ClassMap { objects, classes })
}
