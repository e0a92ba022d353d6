//! JSON document form of an architecture.

use serde::{Deserialize, Serialize};

use super::{ArchGraph, Conv2d, Dense, NodeKind, Pool2d, PoolMode, Shape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDoc {
    pub name: String,
    pub nodes: Vec<NodeDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(flatten)]
    pub kind: KindDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KindDoc {
    Input {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        units: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        channels: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<usize>,
    },
    Dense(Dense),
    Conv2d(Conv2d),
    Pool2d(PoolDoc),
    Flatten,
    Add,
    Output,
}

/// Pool fields as written; `stride` defaults to the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolDoc {
    pub window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default)]
    pub padding: usize,
    #[serde(default = "default_mode")]
    pub mode: PoolMode,
}

fn default_mode() -> PoolMode {
    PoolMode::Max
}

impl KindDoc {
    pub(super) fn into_kind(self, id: &str) -> Result<NodeKind> {
        Ok(match self {
            KindDoc::Input {
                units,
                channels,
                height,
                width,
            } => match (units, channels, height, width) {
                (Some(u), None, None, None) => NodeKind::Input(Shape::Flat(u)),
                (None, Some(c), Some(h), Some(w)) => NodeKind::Input(Shape::Spatial {
                    channels: c,
                    height: h,
                    width: w,
                }),
                _ => {
                    return Err(Error::validation(
                        id,
                        "input needs either `units` or all of `channels`, `height`, `width`",
                    ))
                }
            },
            KindDoc::Dense(d) => NodeKind::Dense(d),
            KindDoc::Conv2d(c) => NodeKind::Conv2d(c),
            KindDoc::Pool2d(p) => NodeKind::Pool2d(Pool2d {
                window: p.window,
                stride: p.stride.unwrap_or(p.window),
                padding: p.padding,
                mode: p.mode,
            }),
            KindDoc::Flatten => NodeKind::Flatten,
            KindDoc::Add => NodeKind::Add,
            KindDoc::Output => NodeKind::Output,
        })
    }

    fn from_kind(kind: &NodeKind) -> KindDoc {
        match kind {
            NodeKind::Input(Shape::Flat(u)) => KindDoc::Input {
                units: Some(*u),
                channels: None,
                height: None,
                width: None,
            },
            NodeKind::Input(Shape::Spatial {
                channels,
                height,
                width,
            }) => KindDoc::Input {
                units: None,
                channels: Some(*channels),
                height: Some(*height),
                width: Some(*width),
            },
            NodeKind::Dense(d) => KindDoc::Dense(*d),
            NodeKind::Conv2d(c) => KindDoc::Conv2d(*c),
            NodeKind::Pool2d(p) => KindDoc::Pool2d(PoolDoc {
                window: p.window,
                stride: Some(p.stride),
                padding: p.padding,
                mode: p.mode,
            }),
            NodeKind::Flatten => KindDoc::Flatten,
            NodeKind::Add => KindDoc::Add,
            NodeKind::Output => KindDoc::Output,
        }
    }
}

impl ArchDoc {
    pub(super) fn from_graph(g: &ArchGraph) -> ArchDoc {
        let nodes = g
            .nodes()
            .iter()
            .map(|n| NodeDoc {
                id: n.id.clone(),
                inputs: n.inputs.iter().map(|&j| g.node(j).id.clone()).collect(),
                kind: KindDoc::from_kind(&n.kind),
            })
            .collect();
        ArchDoc {
            name: g.name().to_string(),
            nodes,
        }
    }
}
