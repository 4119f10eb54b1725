use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-level label hierarchy: types (coarse) and items (fine), with every
/// item belonging to exactly one type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTaxonomy {
    pub type_names: Vec<String>,
    pub item_names: Vec<String>,
    pub item_to_type: Vec<usize>,
}

pub const DEFAULT_TYPE_NAMES: [&str; 4] = ["main_dish", "rice", "soup", "side_dish"];

impl LabelTaxonomy {
    pub fn new(type_names: Vec<String>, item_names: Vec<String>, item_to_type: Vec<usize>) -> Result<Self> {
        let t = LabelTaxonomy { type_names, item_names, item_to_type };
        t.validate()?;
        Ok(t)
    }

    /// `types` types with `items_per_type` items each, items grouped by type.
    pub fn uniform(type_names: &[&str], items_per_type: usize) -> Result<Self> {
        let mut item_names = Vec::new();
        let mut item_to_type = Vec::new();
        for (t, name) in type_names.iter().enumerate() {
            for i in 0..items_per_type {
                item_names.push(format!("{name}_{i}"));
                item_to_type.push(t);
            }
        }
        Self::new(type_names.iter().map(|s| s.to_string()).collect(), item_names, item_to_type)
    }

    /// Four types × eight items.
    pub fn desk_default() -> Self {
        Self::uniform(&DEFAULT_TYPE_NAMES, 8).expect("valid default taxonomy")
    }

    pub fn type_count(&self) -> usize {
        self.type_names.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_names.len()
    }

    pub fn type_of(&self, item: usize) -> usize {
        self.item_to_type[item]
    }

    /// Items of each type, in item order.
    pub fn items_by_type(&self) -> Vec<Vec<usize>> {
        groups_of(&self.item_to_type, self.type_count())
    }

    pub fn validate(&self) -> Result<()> {
        let (t, n) = (self.type_count(), self.item_count());
        if t < 2 {
            return Err(Error::Validation(format!("taxonomy needs at least 2 types, got {t}")));
        }
        if n < t {
            return Err(Error::Validation(format!("taxonomy has {n} items for {t} types")));
        }
        if self.item_to_type.len() != n {
            return Err(Error::Validation(format!(
                "item_to_type has {} entries for {n} items",
                self.item_to_type.len()
            )));
        }
        validate_grouping(&self.item_to_type, t)?;
        for (kind, names) in [("type", &self.type_names), ("item", &self.item_names)] {
            let mut sorted: Vec<&String> = names.iter().collect();
            sorted.sort();
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::Validation(format!("duplicate {kind} name {:?}", w[0])));
            }
        }
        Ok(())
    }
}

pub(crate) fn groups_of(assignment: &[usize], groups: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); groups];
    for (item, &g) in assignment.iter().enumerate() {
        out[g].push(item);
    }
    out
}

/// Every entry names a group below `groups` and every group is non-empty.
pub fn validate_grouping(assignment: &[usize], groups: usize) -> Result<()> {
    if let Some((item, g)) = assignment.iter().enumerate().find(|(_, &g)| g >= groups) {
        return Err(Error::Validation(format!("item {item} maps to group {g}, only {groups} exist")));
    }
    let empty: Vec<usize> = groups_of(assignment, groups)
        .iter()
        .enumerate()
        .filter(|(_, items)| items.is_empty())
        .map(|(g, _)| g)
        .collect();
    if !empty.is_empty() {
        return Err(Error::Validation(format!("groups without items: {empty:?}")));
    }
    Ok(())
}
