use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Architecture, EmbeddingTrajectories, GcrnParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const FORMAT: &str = "tgx-gcrn";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointWire {
    format: String,
    version: u32,
    config_hash: Option<String>,
    architecture: Architecture,
    parameters: Vec<NamedTensor>,
}

/// Trained parameters plus the hash of the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: GcrnParams,
    pub config_hash: Option<String>,
}

pub fn write_checkpoint<W: Write>(out: W, params: &GcrnParams, config_hash: Option<&str>) -> Result<()> {
    let parameters = params
        .arch
        .layout()
        .into_iter()
        .zip(params.to_tensors())
        .map(|((name, shape), t)| NamedTensor {
            name,
            shape,
            values: t.into_data(),
        })
        .collect();
    let wire = CheckpointWire {
        format: FORMAT.into(),
        version: VERSION,
        config_hash: config_hash.map(str::to_owned),
        architecture: params.arch,
        parameters,
    };
    serde_json::to_writer_pretty(out, &wire).map_err(|e| Error::Io(e.into()))
}

pub fn read_checkpoint<R: std::io::Read>(input: R) -> Result<Checkpoint> {
    let wire: CheckpointWire = serde_json::from_reader(input).map_err(|e| Error::Parse {
        line: e.line(),
        field: "checkpoint".into(),
        message: e.to_string(),
    })?;
    if wire.format != FORMAT || wire.version != VERSION {
        return Err(Error::Contract(format!(
            "unsupported checkpoint {} v{}",
            wire.format, wire.version
        )));
    }
    let layout = wire.architecture.layout();
    if layout.len() != wire.parameters.len() {
        return Err(Error::shape(
            "checkpoint",
            format!("{} tensors, layout has {}", wire.parameters.len(), layout.len()),
        ));
    }
    let mut tensors = Vec::with_capacity(layout.len());
    for ((name, _), p) in layout.iter().zip(wire.parameters) {
        if *name != p.name {
            return Err(Error::Contract(format!("expected tensor {name}, found {}", p.name)));
        }
        tensors.push(Tensor::new(p.shape, p.values)?);
    }
    Ok(Checkpoint {
        params: GcrnParams::from_tensors(wire.architecture, tensors)?,
        config_hash: wire.config_hash,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingWire {
    id: String,
    #[serde(rename = "T")]
    horizon: usize,
    #[serde(rename = "N")]
    num_nodes: usize,
    #[serde(rename = "L")]
    layers: usize,
    #[serde(rename = "F")]
    hidden: usize,
    /// `[t][n][FL]`.
    h_node: Vec<Vec<Vec<f64>>>,
    /// `[t][FL]`.
    h_graph: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// One JSON line per graph. The tag, when given, is stored on every line.
pub fn write_embeddings<W: Write>(mut out: W, items: &[EmbeddingTrajectories], tag: Option<&str>) -> Result<()> {
    for e in items {
        let wire = EmbeddingWire {
            id: e.id.clone(),
            horizon: e.horizon(),
            num_nodes: e.num_nodes,
            layers: e.layers,
            hidden: e.hidden,
            h_node: e.node_states.clone(),
            h_graph: e.graph_states.clone(),
            config_hash: tag.map(str::to_owned),
        };
        serde_json::to_writer(&mut out, &wire).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads embeddings and the tag of the first line.
pub fn read_embeddings<R: BufRead>(input: R) -> Result<(Vec<EmbeddingTrajectories>, Option<String>)> {
    let mut out = Vec::new();
    let mut tag = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let wire: EmbeddingWire = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            field: "embedding".into(),
            message: e.to_string(),
        })?;
        let width = wire.layers * wire.hidden;
        let bad = wire.h_node.len() != wire.horizon
            || wire.h_graph.len() != wire.horizon
            || wire.h_node.iter().any(|r| r.len() != wire.num_nodes || r.iter().any(|v| v.len() != width))
            || wire.h_graph.iter().any(|v| v.len() != width);
        if bad {
            return Err(Error::Parse {
                line: lineno,
                field: "h_node".into(),
                message: format!("dimensions disagree with T={}, N={}, L*F={width}", wire.horizon, wire.num_nodes),
            });
        }
        if out.is_empty() {
            tag = wire.config_hash.clone();
        }
        out.push(EmbeddingTrajectories {
            id: wire.id,
            num_nodes: wire.num_nodes,
            layers: wire.layers,
            hidden: wire.hidden,
            node_states: wire.h_node,
            graph_states: wire.h_graph,
        });
    }
    Ok((out, tag))
}
