use serde::{Deserialize, Serialize};

/// One removable element of a layer.
///
/// Singular values are identified by their descending rank position in the
/// current factorization, not by a persistent identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Unit {
    Channel(usize),
    SingularValue(usize),
}

impl Unit {
    pub fn is_channel(&self) -> bool {
        matches!(self, Unit::Channel(_))
    }

    pub fn index(&self) -> usize {
        match *self {
            Unit::Channel(i) | Unit::SingularValue(i) => i,
        }
    }
}

/// Which unit kinds a compression run may remove.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKinds {
    #[default]
    Both,
    ChannelsOnly,
    SingularValuesOnly,
}

impl UnitKinds {
    pub fn allows(&self, unit: Unit) -> bool {
        match self {
            UnitKinds::Both => true,
            UnitKinds::ChannelsOnly => unit.is_channel(),
            UnitKinds::SingularValuesOnly => !unit.is_channel(),
        }
    }
}

/// Maps units chosen against one frozen state onto the positions they occupy
/// when removed one after another.
///
/// Removing singular value `p` shifts every later rank position down by one,
/// so a singular-value unit's position drops by the number of earlier
/// singular-value removals ranked above it. Channel indices are stable.
pub fn sequential_positions(units: &[Unit]) -> Vec<Unit> {
    let mut removed: Vec<usize> = Vec::new();
    units
        .iter()
        .map(|&unit| match unit {
            Unit::Channel(_) => unit,
            Unit::SingularValue(p) => {
                let shift = removed.iter().filter(|&&q| q < p).count();
                removed.push(p);
                Unit::SingularValue(p - shift)
            }
        })
        .collect()
}
