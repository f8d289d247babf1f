//! Serializable description of a physical index.
//!
//! A config records topology, routing and per-node physical choices, plus
//! the number of tuples each leaf held on the dataset it was derived from.
//! Keys themselves are not stored; [`crate::builder::build_from_config`]
//! redistributes any sorted dataset over the same shape.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64;

use crate::layout::DataLayout;
use crate::model::PartitioningFunction;
use crate::physical::{PhysicalIndex, PhysicalNode, Routing};
use crate::search::SearchMethod;
use crate::Key;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported config version {found}, expected {CONFIG_VERSION}")]
    Version { found: u32 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_fingerprint: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub version: u32,
    /// Maximum entries or children per node.
    pub capacity: usize,
    pub root: NodeConfig,
    #[serde(default)]
    pub metadata: ConfigMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum NodeConfig {
    Leaf {
        layout: DataLayout,
        search: SearchMethod,
        /// Tuples held on the origin dataset.
        count: usize,
    },
    Inner {
        routing: RoutingConfig,
        children: Vec<ChildConfig>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoutingConfig {
    /// Child `i` holds the `i`-th key range. Pivots are the first key of
    /// every child but the first on the origin dataset.
    Pivots { layout: DataLayout, search: SearchMethod, pivots: Vec<Key> },
    Function { function: PartitioningFunction },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildConfig {
    /// Child position for pivot routing, partition value for function routing.
    pub slot: u64,
    pub node: NodeConfig,
}

impl NodeConfig {
    /// Tuples below this node on the origin dataset.
    pub fn total_count(&self) -> usize {
        match self {
            NodeConfig::Leaf { count, .. } => *count,
            NodeConfig::Inner { children, .. } => children.iter().map(|c| c.node.total_count()).sum(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            NodeConfig::Leaf { .. } => 1,
            NodeConfig::Inner { children, .. } => 1 + children.iter().map(|c| c.node.node_count()).sum::<usize>(),
        }
    }

    /// Same tree with leaf counts and pivot values erased.
    pub fn topology(&self) -> NodeConfig {
        match self {
            NodeConfig::Leaf { layout, search, .. } => NodeConfig::Leaf { layout: *layout, search: *search, count: 0 },
            NodeConfig::Inner { routing, children } => NodeConfig::Inner {
                routing: match routing {
                    RoutingConfig::Pivots { layout, search, pivots } => RoutingConfig::Pivots {
                        layout: *layout,
                        search: *search,
                        pivots: vec![0; pivots.len()],
                    },
                    f => f.clone(),
                },
                children: children.iter().map(|c| ChildConfig { slot: c.slot, node: c.node.topology() }).collect(),
            },
        }
    }

    fn from_node(node: &PhysicalNode) -> NodeConfig {
        match node {
            PhysicalNode::Leaf(l) => NodeConfig::Leaf { layout: l.layout(), search: l.search, count: l.data.len() },
            PhysicalNode::Inner(i) => {
                let (routing, slots): (RoutingConfig, Vec<u64>) = match &i.routing {
                    Routing::Pivots { search, pivots, store } => (
                        RoutingConfig::Pivots { layout: store.layout(), search: *search, pivots: pivots.clone() },
                        (0..i.children.len() as u64).collect(),
                    ),
                    Routing::Function { function, slots } => {
                        (RoutingConfig::Function { function: function.clone() }, slots.clone())
                    }
                };
                let children = i
                    .children
                    .iter()
                    .zip(slots)
                    .map(|(c, slot)| ChildConfig { slot, node: NodeConfig::from_node(c) })
                    .collect();
                NodeConfig::Inner { routing, children }
            }
        }
    }
}

impl IndexConfig {
    pub fn new(capacity: usize, root: NodeConfig) -> Self {
        IndexConfig { version: CONFIG_VERSION, capacity, root, metadata: ConfigMetadata::default() }
    }

    pub fn from_index(index: &PhysicalIndex) -> Self {
        IndexConfig::new(index.capacity(), NodeConfig::from_node(index.root()))
    }

    /// Canonical bytes of everything but the metadata.
    fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&(self.version, self.capacity, &self.root)).expect("config serializes")
    }

    /// 64-bit digest of version, capacity and node tree; metadata is ignored.
    pub fn structural_hash(&self) -> u64 {
        xxh3_64(&self.canonical_bytes())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: IndexConfig = serde_json::from_str(text)?;
        if cfg.version != CONFIG_VERSION {
            return Err(ConfigError::Version { found: cfg.version });
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl PhysicalIndex {
    pub fn to_config(&self) -> IndexConfig {
        IndexConfig::from_index(self)
    }

    pub fn structural_hash(&self) -> u64 {
        self.to_config().structural_hash()
    }
}
