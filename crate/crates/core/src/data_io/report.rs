// SPDX-License-Identifier: MIT OR Apache-2.0

//! Versioned JSON reports: `{kind, version, metadata, payload}`.
//!
//! The metadata block records the exact argument list of the run, so a
//! report can be regenerated bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::interpolation::InterpolationCurve;
use crate::lens::LensGrid;
use crate::model::{GenerationRecord, Intervention, ModelConfig};
use crate::routing::{RoutingReport, RoutingVerdict};
use crate::steering::{SteerOutcome, SteeringVector, SweepResult};
use crate::tracing::{TraceConfig, TraceGrid};

pub const REPORT_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "lingualens";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub tool: String,
    pub tool_version: String,
    pub bundle_hash: String,
    pub command: String,
    /// Arguments after the subcommand, without `--out`.
    pub args: Vec<String>,
    pub seeds: Vec<u64>,
}

impl Metadata {
    pub fn new(bundle_hash: &str, command: &str, args: Vec<String>, seeds: Vec<u64>) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            bundle_hash: bundle_hash.into(),
            command: command.into(),
            args,
            seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundlePayload {
    pub seed: u64,
    pub config: ModelConfig,
    pub facts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationPayload {
    pub generation: GenerationRecord,
    pub interventions: Vec<Intervention>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LensPayload {
    pub generation: GenerationRecord,
    pub grid: LensGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracePayload {
    pub prompt: String,
    pub config: TraceConfig,
    pub grid: TraceGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveVector {
    pub vector: SteeringVector,
    pub layer: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerPayload {
    pub topic: ActiveVector,
    pub language: Option<ActiveVector>,
    pub generation: GenerationRecord,
    pub target_forms: Vec<String>,
    pub outcome: SteerOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPayload {
    pub vector: SteeringVector,
    pub holdout_prompts: Vec<String>,
    pub target_forms: Vec<String>,
    pub result: SweepResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordVerdict {
    pub generation: usize,
    pub surface: String,
    pub pos: Option<String>,
    pub tokens: [usize; 2],
    pub verdict: RoutingVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingPayload {
    pub report: RoutingReport,
    pub words: Vec<WordVerdict>,
    /// Percentage of flagged top-1 cells per generation, when the lexicon
    /// lists flagged terms.
    pub flagged_percent: Option<Vec<f64>>,
    pub generations: Vec<LensPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolationPayload {
    pub fact_id: Option<String>,
    pub curve: InterpolationCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryPayload {
    pub a: SteeringVector,
    pub b: SteeringVector,
    pub cosine: Vec<Option<f64>>,
    pub delta: Option<SteeringVector>,
    pub beta: Option<f64>,
    pub nudged: Option<Vec<Option<f64>>>,
}

/// Typed report body; the variant fixes the `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Payload {
    Bundle(BundlePayload),
    Generation(GenerationPayload),
    Lens(LensPayload),
    Trace(TracePayload),
    Steer(SteerPayload),
    Sweep(SweepPayload),
    Routing(RoutingPayload),
    Interpolation(InterpolationPayload),
    Geometry(GeometryPayload),
}

pub const REPORT_KINDS: [&str; 9] = [
    "bundle",
    "generation",
    "lens",
    "trace",
    "steer",
    "sweep",
    "routing",
    "interpolation",
    "geometry",
];

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Bundle(_) => "bundle",
            Self::Generation(_) => "generation",
            Self::Lens(_) => "lens",
            Self::Trace(_) => "trace",
            Self::Steer(_) => "steer",
            Self::Sweep(_) => "sweep",
            Self::Routing(_) => "routing",
            Self::Interpolation(_) => "interpolation",
            Self::Geometry(_) => "geometry",
        }
    }

    fn from_value(kind: &str, value: Value) -> Result<Self> {
        let err = |e| Error::json(format!("{kind} payload"), e);
        Ok(match kind {
            "bundle" => Self::Bundle(serde_json::from_value(value).map_err(err)?),
            "generation" => Self::Generation(serde_json::from_value(value).map_err(err)?),
            "lens" => Self::Lens(serde_json::from_value(value).map_err(err)?),
            "trace" => Self::Trace(serde_json::from_value(value).map_err(err)?),
            "steer" => Self::Steer(serde_json::from_value(value).map_err(err)?),
            "sweep" => Self::Sweep(serde_json::from_value(value).map_err(err)?),
            "routing" => Self::Routing(serde_json::from_value(value).map_err(err)?),
            "interpolation" => Self::Interpolation(serde_json::from_value(value).map_err(err)?),
            "geometry" => Self::Geometry(serde_json::from_value(value).map_err(err)?),
            other => return Err(Error::Report(format!("unknown report kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub metadata: Metadata,
    pub payload: Payload,
}

#[derive(Serialize)]
struct RawOut<'a> {
    kind: &'a str,
    version: u32,
    metadata: &'a Metadata,
    payload: &'a Payload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIn {
    kind: String,
    version: u32,
    metadata: Metadata,
    payload: Value,
}

impl Report {
    pub fn new(metadata: Metadata, payload: Payload) -> Self {
        Self { metadata, payload }
    }

    pub fn kind(&self) -> &'static str {
        self.payload.kind()
    }

    fn validate_metadata(m: &Metadata) -> Result<()> {
        if m.bundle_hash.trim().is_empty() {
            return Err(Error::Report("metadata.bundle_hash is empty".into()));
        }
        if m.command.trim().is_empty() {
            return Err(Error::Report("metadata.command is empty".into()));
        }
        Ok(())
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        Self::validate_metadata(&self.metadata)?;
        let raw = RawOut {
            kind: self.kind(),
            version: REPORT_VERSION,
            metadata: &self.metadata,
            payload: &self.payload,
        };
        let mut s = serde_json::to_string_pretty(&raw).map_err(|e| Error::json("serialize report", e))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawIn = serde_json::from_str(text).map_err(|e| Error::json("report", e))?;
        if raw.version != REPORT_VERSION {
            return Err(Error::Report(format!(
                "report version {} (this build reads {REPORT_VERSION})",
                raw.version
            )));
        }
        if !REPORT_KINDS.contains(&raw.kind.as_str()) {
            return Err(Error::Report(format!("unknown report kind {:?}", raw.kind)));
        }
        Self::validate_metadata(&raw.metadata)?;
        Ok(Self {
            payload: Payload::from_value(&raw.kind, raw.payload)?,
            metadata: raw.metadata,
        })
    }
}

pub fn write_report(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Report::from_json(&text)
}
