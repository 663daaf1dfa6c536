//! Flow provider contract and the file-import provider.

use std::path::PathBuf;

use super::{cache, FlowField};
use crate::error::{Error, Result};

/// Answers flow queries for ordered frame pairs. Providers that support
/// warm-starting accept the previous target's field as initialization.
pub trait FlowProvider {
    fn name(&self) -> &str;

    fn supports_init(&self) -> bool {
        false
    }

    fn flow(&mut self, i: usize, j: usize, init: Option<&FlowField>) -> Result<FlowField>;
}

/// Reads precomputed flow fields from a directory in the cache format.
pub struct ImportProvider {
    dir: PathBuf,
}

impl ImportProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ImportProvider { dir: dir.into() }
    }
}

impl FlowProvider for ImportProvider {
    fn name(&self) -> &str {
        "import"
    }

    fn flow(&mut self, i: usize, j: usize, _init: Option<&FlowField>) -> Result<FlowField> {
        let path = cache::pair_path(&self.dir, i, j);
        let flow = cache::read(&path).map_err(|e| Error::Provider {
            i,
            j,
            reason: e.to_string(),
        })?;
        if flow.source_index != i || flow.target_index != j {
            return Err(Error::Provider {
                i,
                j,
                reason: format!(
                    "file holds pair ({}, {})",
                    flow.source_index, flow.target_index
                ),
            });
        }
        Ok(flow)
    }
}
