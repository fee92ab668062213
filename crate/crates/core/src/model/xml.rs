//! Model XML format.
//!
//! ```xml
//! <model name="demo">
//!   <block id="b1" kind="Gain" k="2.0"/>
//!   <block id="b2" kind="Compute" w="1200"/>
//!   <edge src="b1" dst="b2" port="0"/>
//! </model>
//! ```
//!
//! Const carries `c`, Gain `k`, Compute `w` (non-negative integer cycles) and
//! Delay an optional initial state `init` (default 0).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};

use super::{validate_graph, Block, BlockGraph, BlockKind, Edge, Kind, ModelError};

/// Parses and validates a model document.
pub fn parse_model(text: &str) -> Result<BlockGraph, ModelError> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);

    let mut name: Option<String> = None;
    let mut closed = false;
    let mut blocks = Vec::new();
    let mut edges = Vec::new();

    loop {
        let event = reader
            .read_event()
            .map_err(|e| ModelError::MalformedXml(format!("at byte {}: {e}", reader.error_position())))?;
        match event {
            Event::Start(e) | Event::Empty(e) if e.name().into_inner() == "model" => {
                if name.is_some() {
                    return Err(ModelError::MalformedXml("nested <model>".into()));
                }
                let attrs = attributes(&e)?;
                name = Some(attrs.get("name").cloned().unwrap_or_default());
            }
            Event::Start(e) | Event::Empty(e) => {
                if name.is_none() || closed {
                    return Err(ModelError::MalformedXml(format!(
                        "<{}> outside <model>",
                        e.name().into_inner()
                    )));
                }
                let attrs = attributes(&e)?;
                match e.name().into_inner() {
                    "block" => blocks.push(parse_block(&attrs)?),
                    "edge" => edges.push(parse_edge(&attrs)?),
                    other => {
                        return Err(ModelError::MalformedXml(format!(
                            "unexpected element <{}>",
                            other
                        )))
                    }
                }
            }
            Event::End(e) if e.name().into_inner() == "model" => closed = true,
            Event::End(_) => {}
            Event::Text(t) if !t.trim_ascii().is_empty() => {
                return Err(ModelError::MalformedXml("unexpected text content".into()));
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if name.is_none() {
        return Err(ModelError::MalformedXml("missing <model> element".into()));
    }

    let ids: BTreeSet<&str> = blocks.iter().map(|b: &Block| b.id.as_str()).collect();
    let mut ports = BTreeSet::new();
    for e in &edges {
        if !ids.contains(e.src.as_str()) || !ids.contains(e.dst.as_str()) {
            return Err(ModelError::DanglingEdge(e.to_string()));
        }
        if !ports.insert((e.dst.clone(), e.port)) {
            return Err(ModelError::PortConflict {
                block: e.dst.clone(),
                port: e.port,
            });
        }
    }

    let graph = BlockGraph::new(name.unwrap_or_default(), blocks, edges);
    let report = validate_graph(&graph);
    if !report.is_ok() {
        return Err(ModelError::Invalid(report));
    }
    Ok(graph)
}

fn attributes(e: &BytesStart<'_>) -> Result<BTreeMap<String, String>, ModelError> {
    let mut out = BTreeMap::new();
    for attr in e.attributes() {
        let attr = attr.map_err(|err| ModelError::MalformedXml(err.to_string()))?;
        let key = attr.key.into_inner().to_string();
        let value = attr
            .normalized_value(XmlVersion::default())
            .map_err(|err| ModelError::MalformedXml(err.to_string()))?
            .into_owned();
        if out.insert(key.clone(), value).is_some() {
            return Err(ModelError::MalformedXml(format!("duplicate attribute `{key}`")));
        }
    }
    Ok(out)
}

fn required<'a>(attrs: &'a BTreeMap<String, String>, key: &str, elem: &str) -> Result<&'a str, ModelError> {
    attrs
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| ModelError::InvalidAttribute(format!("<{elem}> is missing `{key}`")))
}

fn number<T: std::str::FromStr>(raw: &str, key: &str, id: &str) -> Result<T, ModelError> {
    raw.trim()
        .parse()
        .map_err(|_| ModelError::InvalidAttribute(format!("`{key}`=\"{raw}\" on block `{id}`")))
}

fn parse_block(attrs: &BTreeMap<String, String>) -> Result<Block, ModelError> {
    let id = required(attrs, "id", "block")?;
    let kind: Kind = required(attrs, "kind", "block")?.parse()?;
    let param = |key: &str| -> Result<&str, ModelError> {
        attrs
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| ModelError::InvalidAttribute(format!("{kind} block `{id}` is missing `{key}`")))
    };
    let kind = match kind {
        Kind::Inport => BlockKind::Inport,
        Kind::Outport => BlockKind::Outport,
        Kind::Sum => BlockKind::Sum,
        Kind::Const => BlockKind::Const {
            value: number(param("c")?, "c", id)?,
        },
        Kind::Gain => BlockKind::Gain {
            factor: number(param("k")?, "k", id)?,
        },
        Kind::Compute => BlockKind::Compute {
            weight: number(param("w")?, "w", id)?,
        },
        Kind::Delay => BlockKind::Delay {
            initial: match attrs.get("init") {
                Some(raw) => number(raw, "init", id)?,
                None => 0.0,
            },
        },
    };
    Ok(Block::new(id, kind))
}

fn parse_edge(attrs: &BTreeMap<String, String>) -> Result<Edge, ModelError> {
    let src = required(attrs, "src", "edge")?;
    let dst = required(attrs, "dst", "edge")?;
    let port = required(attrs, "port", "edge")?;
    let port = port
        .trim()
        .parse()
        .map_err(|_| ModelError::InvalidAttribute(format!("port=\"{port}\" on edge {src}->{dst}")))?;
    Ok(Edge::new(src, dst, port))
}

/// Writes a model in canonical form: blocks sorted by id, then edges sorted
/// by `(src, dst, port)`. Floats use the shortest representation that reads
/// back to the same value.
pub fn serialize_model(g: &BlockGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<model name=\"{}\">", escape(g.name.as_str()));
    for b in g.blocks() {
        let _ = write!(out, "  <block id=\"{}\" kind=\"{}\"", escape(b.id.as_str()), b.kind.kind());
        match b.kind {
            BlockKind::Const { value } => {
                let _ = write!(out, " c=\"{value:?}\"");
            }
            BlockKind::Gain { factor } => {
                let _ = write!(out, " k=\"{factor:?}\"");
            }
            BlockKind::Compute { weight } => {
                let _ = write!(out, " w=\"{weight}\"");
            }
            BlockKind::Delay { initial } => {
                let _ = write!(out, " init=\"{initial:?}\"");
            }
            BlockKind::Inport | BlockKind::Outport | BlockKind::Sum => {}
        }
        out.push_str("/>\n");
    }
    for e in g.edges() {
        let _ = writeln!(
            out,
            "  <edge src=\"{}\" dst=\"{}\" port=\"{}\"/>",
            escape(e.src.as_str()),
            escape(e.dst.as_str()),
            e.port
        );
    }
    out.push_str("</model>\n");
    out
}
