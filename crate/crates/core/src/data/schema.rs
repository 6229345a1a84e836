use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    User,
    Item,
}

/// One integer-coded categorical field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub name: String,
    pub vocab: usize,
    pub side: Side,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, vocab: usize, side: Side) -> Self {
        Self {
            name: name.into(),
            vocab,
            side,
        }
    }
}

/// Ordered field list. Must contain a user-side `user_id` and an item-side
/// `item_id` field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct Schema {
    fields: Vec<FieldSpec>,
    user_id: usize,
    item_id: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaRepr {
    fields: Vec<FieldSpec>,
}

impl TryFrom<SchemaRepr> for Schema {
    type Error = DataError;
    fn try_from(r: SchemaRepr) -> Result<Self, DataError> {
        Schema::new(r.fields)
    }
}

impl From<Schema> for SchemaRepr {
    fn from(s: Schema) -> Self {
        SchemaRepr { fields: s.fields }
    }
}

pub const CLICK_COLUMN: &str = "click";
pub const CONVERSION_COLUMN: &str = "conversion";

impl Schema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self, DataError> {
        let bad = |m: String| Err(DataError::InvalidSchema(m));
        let mut seen = HashSet::new();
        for f in &fields {
            if f.vocab == 0 {
                return bad(format!("field `{}` has empty vocabulary", f.name));
            }
            if f.name == CLICK_COLUMN || f.name == CONVERSION_COLUMN {
                return bad(format!("field name `{}` is reserved", f.name));
            }
            if !seen.insert(f.name.as_str()) {
                return bad(format!("duplicate field `{}`", f.name));
            }
        }
        let find = |name: &str, side: Side| fields.iter().position(|f| f.name == name && f.side == side);
        let Some(user_id) = find("user_id", Side::User) else {
            return bad("schema needs a user-side `user_id` field".into());
        };
        let Some(item_id) = find("item_id", Side::Item) else {
            return bad("schema needs an item-side `item_id` field".into());
        };
        Ok(Self {
            fields,
            user_id,
            item_id,
        })
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn user_id_index(&self) -> usize {
        self.user_id
    }

    pub fn item_id_index(&self) -> usize {
        self.item_id
    }

    /// Start row of each field inside a single stacked embedding table.
    pub fn offsets(&self) -> Vec<usize> {
        self.fields
            .iter()
            .scan(0, |acc, f| {
                let o = *acc;
                *acc += f.vocab;
                Some(o)
            })
            .collect()
    }

    pub fn total_vocab(&self) -> usize {
        self.fields.iter().map(|f| f.vocab).sum()
    }

    pub fn side_indices(&self, side: Side) -> Vec<usize> {
        (0..self.fields.len()).filter(|&i| self.fields[i].side == side).collect()
    }

    /// Header line of the dataset file.
    pub fn header(&self) -> Vec<String> {
        self.fields
            .iter()
            .map(|f| f.name.clone())
            .chain([CLICK_COLUMN.to_string(), CONVERSION_COLUMN.to_string()])
            .collect()
    }
}
