use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PolicyTable;
use crate::error::CheckpointError;
use crate::events::BIN_COUNT;

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk policy: TOML with the table shape, the action grid and the
/// weights flattened in (building, stage, bin, action) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub dims: [usize; 4],
    pub actions: Vec<f64>,
    pub weight_floor: f64,
    pub weights: Vec<f64>,
}

impl Checkpoint {
    pub fn from_table(table: &PolicyTable) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            dims: table.dims(),
            actions: table.actions().to_vec(),
            weight_floor: table.weight_floor(),
            weights: table.flat_weights().to_vec(),
        }
    }

    pub fn into_table(self) -> Result<PolicyTable, CheckpointError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(self.version));
        }
        let [k, t, bins, m] = self.dims;
        if bins != BIN_COUNT || m != self.actions.len() {
            return Err(CheckpointError::Shape { dims: self.dims, len: self.weights.len() });
        }
        let len = self.weights.len();
        PolicyTable::from_parts(k, t, self.actions, self.weight_floor, self.weights)
            .ok_or(CheckpointError::Shape { dims: self.dims, len })
    }
}

pub fn save_checkpoint(table: &PolicyTable, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let text = toml::to_string(&Checkpoint::from_table(table))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PolicyTable, CheckpointError> {
    let text = fs::read_to_string(path)?;
    let ck: Checkpoint = toml::from_str(&text)?;
    ck.into_table()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut t = PolicyTable::uniform(2, 4, vec![0.0, 0.5, 1.0], 1e-6);
        t.cell_mut(1, 3, 9).copy_from_slice(&[0.1 + 0.2, 1e-6, 0.987654321012345]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.ckpt");
        save_checkpoint(&t, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), t);
    }

    #[test]
    fn rejects_wrong_version_and_shape() {
        let t = PolicyTable::uniform(1, 2, vec![0.0, 1.0], 1e-6);
        let mut ck = Checkpoint::from_table(&t);
        ck.version = 9;
        assert!(matches!(ck.clone().into_table(), Err(CheckpointError::Version(9))));
        ck.version = CHECKPOINT_VERSION;
        ck.weights.pop();
        assert!(matches!(ck.into_table(), Err(CheckpointError::Shape { .. })));
    }
}
