//! JSON file formats: topology, demand (session list) and solver config.
//! Link index is the position in the serialized link array. An undirected
//! topology is expanded on load: entry i becomes directed links 2i (as
//! written) and 2i+1 (reversed), with independent capacity and energy.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Link, ModelError, Session, SolverConfig, Topology, UtilityFunction};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    nodes: Vec<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    undirected: bool,
    links: Vec<Link>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandFile {
    sessions: Vec<SessionFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionFile {
    id: String,
    source: String,
    destination: String,
    rates: Vec<f64>,
    utility: UtilitySpec,
}

/// Utility in demand files: a bare kind name, or an object with parameters.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum UtilitySpec {
    Name(String),
    Detailed {
        kind: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slope: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        top: Option<f64>,
    },
}

impl UtilitySpec {
    fn resolve(&self, session_id: &str, ladder_top: f64) -> Result<UtilityFunction, ModelError> {
        let (kind, scale, slope, top) = match self {
            UtilitySpec::Name(kind) => (kind.as_str(), None, None, None),
            UtilitySpec::Detailed {
                kind,
                scale,
                slope,
                top,
            } => (kind.as_str(), *scale, *slope, *top),
        };
        match kind {
            "log1p" => Ok(UtilityFunction::Log1p {
                scale: scale.unwrap_or(1.0),
            }),
            "linear" => Ok(UtilityFunction::Linear {
                slope: slope.unwrap_or(1.0),
            }),
            "normalized-ladder" => Ok(UtilityFunction::NormalizedLadder {
                top: top.unwrap_or(ladder_top),
            }),
            other => Err(ModelError::Invalid(format!(
                "session {session_id:?}: unknown utility kind {other:?}"
            ))),
        }
    }

    fn from_function(u: &UtilityFunction, ladder_top: f64) -> Self {
        match *u {
            UtilityFunction::Log1p { scale } if scale == 1.0 => {
                UtilitySpec::Name("log1p".into())
            }
            UtilityFunction::Log1p { scale } => UtilitySpec::Detailed {
                kind: "log1p".into(),
                scale: Some(scale),
                slope: None,
                top: None,
            },
            UtilityFunction::Linear { slope } if slope == 1.0 => {
                UtilitySpec::Name("linear".into())
            }
            UtilityFunction::Linear { slope } => UtilitySpec::Detailed {
                kind: "linear".into(),
                scale: None,
                slope: Some(slope),
                top: None,
            },
            UtilityFunction::NormalizedLadder { top } if top == ladder_top => {
                UtilitySpec::Name("normalized-ladder".into())
            }
            UtilityFunction::NormalizedLadder { top } => UtilitySpec::Detailed {
                kind: "normalized-ladder".into(),
                scale: None,
                slope: None,
                top: Some(top),
            },
        }
    }
}

fn read_file(path: &Path) -> Result<String, ModelError> {
    fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_json<'a, T: Deserialize<'a>>(text: &'a str, origin: &str) -> Result<T, ModelError> {
    serde_json::from_str(text).map_err(|source| ModelError::Json {
        path: origin.to_string(),
        source,
    })
}

pub fn parse_topology(text: &str, origin: &str) -> Result<Topology, ModelError> {
    let file: TopologyFile = parse_json(text, origin)?;
    let links = if file.undirected {
        let mut expanded = Vec::with_capacity(file.links.len() * 2);
        for link in file.links {
            expanded.push(link.clone());
            expanded.push(Link {
                from: link.to,
                to: link.from,
                capacity: link.capacity,
                energy: link.energy,
            });
        }
        expanded
    } else {
        file.links
    };
    Topology::new(file.nodes, links)
}

pub fn load_topology(path: &Path) -> Result<Topology, ModelError> {
    parse_topology(&read_file(path)?, &path.display().to_string())
}

pub fn parse_demands(text: &str, origin: &str) -> Result<Vec<Session>, ModelError> {
    let file: DemandFile = parse_json(text, origin)?;
    let mut seen = BTreeMap::new();
    let mut sessions = Vec::with_capacity(file.sessions.len());
    for (i, sf) in file.sessions.into_iter().enumerate() {
        if let Some(prev) = seen.insert(sf.id.clone(), i) {
            return Err(ModelError::Invalid(format!(
                "sessions[{i}]: id {:?} already used by sessions[{prev}]",
                sf.id
            )));
        }
        let ladder_top = sf.rates.last().copied().unwrap_or(0.0);
        let utility = sf.utility.resolve(&sf.id, ladder_top)?;
        sessions.push(Session::new(
            sf.id,
            sf.source,
            sf.destination,
            sf.rates,
            utility,
        )?);
    }
    Ok(sessions)
}

pub fn load_demands(path: &Path) -> Result<Vec<Session>, ModelError> {
    parse_demands(&read_file(path)?, &path.display().to_string())
}

pub fn parse_config(text: &str, origin: &str) -> Result<SolverConfig, ModelError> {
    let cfg: SolverConfig = parse_json(text, origin)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SolverConfig, ModelError> {
    parse_config(&read_file(path)?, &path.display().to_string())
}

/// Serialize any value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ModelError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| ModelError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Canonical file form of a topology (directed, as stored).
pub fn topology_to_json(topo: &Topology) -> serde_json::Value {
    serde_json::to_value(TopologyFile {
        nodes: topo.nodes().to_vec(),
        undirected: false,
        links: topo.links().to_vec(),
    })
    .expect("topology serialization cannot fail")
}

pub fn sessions_to_json(sessions: &[Session]) -> serde_json::Value {
    serde_json::to_value(DemandFile {
        sessions: sessions.iter().map(session_to_file).collect(),
    })
    .expect("session serialization cannot fail")
}

fn session_to_file(s: &Session) -> SessionFile {
    SessionFile {
        id: s.id().to_string(),
        source: s.source().to_string(),
        destination: s.destination().to_string(),
        rates: s.rates().to_vec(),
        utility: UtilitySpec::from_function(s.utility(), s.max_rate()),
    }
}

/// Session (de)serialization for trace files reuses the demand schema.
impl Serialize for Session {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        session_to_file(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Session {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let sf = SessionFile::deserialize(deserializer)?;
        let ladder_top = sf.rates.last().copied().unwrap_or(0.0);
        let utility = sf
            .utility
            .resolve(&sf.id, ladder_top)
            .map_err(serde::de::Error::custom)?;
        Session::new(sf.id, sf.source, sf.destination, sf.rates, utility)
            .map_err(serde::de::Error::custom)
    }
}
