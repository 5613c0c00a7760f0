//! On-disk formats. Everything is JSON with camelCase keys; collections are
//! vectors or sorted maps so serialization is byte-deterministic. Datasets
//! use one JSON object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ExoError;
use crate::factor::FactorSet;
use crate::model::{ExoMdpModel, ModelParts};
use crate::policy::{NonstationaryPolicy, PolicyCover};
use crate::trajectory::Trajectory;
use crate::Result;

/// Where a model came from, carried alongside the tables so generator-aware
/// checks can reconstruct instance-specific structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Provenance {
    pub generator: String,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub params: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Reachability floor the generator certifies for the instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

/// Serialized model: dimensions, the hidden factor set, and the block
/// transition, reward, and initial-state tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ModelFile {
    pub d: usize,
    pub k: usize,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "A")]
    pub a: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub i_star: FactorSet,
    pub t_en: Vec<Vec<Vec<f64>>>,
    pub t_ex: Vec<Vec<f64>>,
    pub r_en: Vec<Vec<f64>>,
    pub d1_en: Vec<f64>,
    pub d1_ex: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Borrowed mirror of [`ModelFile`] so saving never clones the tables.
#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ModelFileRef<'a> {
    d: usize,
    k: usize,
    #[serde(rename = "S")]
    s: usize,
    #[serde(rename = "A")]
    a: usize,
    #[serde(rename = "H")]
    h: usize,
    i_star: &'a FactorSet,
    t_en: &'a [Vec<Vec<f64>>],
    t_ex: &'a [Vec<f64>],
    r_en: &'a [Vec<f64>],
    d1_en: &'a [f64],
    d1_ex: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<&'a Provenance>,
}

/// Serialized policy. Deterministic policies and uniform mixtures share one
/// envelope so evaluation tooling can consume either.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", deny_unknown_fields)]
pub enum PolicyFile {
    #[serde(rename_all = "camelCase")]
    Deterministic { policy: NonstationaryPolicy },
    #[serde(rename_all = "camelCase")]
    Mixture { members: Vec<NonstationaryPolicy> },
}

impl PolicyFile {
    /// All deterministic policies the file denotes, each with its mixture
    /// weight (uniform).
    pub fn members(&self) -> &[NonstationaryPolicy] {
        match self {
            PolicyFile::Deterministic { policy } => std::slice::from_ref(policy),
            PolicyFile::Mixture { members } => members,
        }
    }
}

fn schema_err(path: &Path, message: impl std::fmt::Display) -> ExoError {
    ExoError::Schema {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Reads and parses one JSON value, naming the file in any failure.
pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| schema_err(path, e))?;
    let mut reader = BufReader::new(file);
    let mut text = String::new();
    std::io::Read::read_to_string(&mut reader, &mut text).map_err(|e| schema_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| schema_err(path, e))
}

/// Writes one compact JSON value plus a trailing newline. Output depends
/// only on the value, never on the clock or the environment.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| schema_err(path, e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, value).map_err(|e| schema_err(path, e))?;
    writer.write_all(b"\n").map_err(|e| schema_err(path, e))?;
    writer.flush().map_err(|e| schema_err(path, e))?;
    Ok(())
}

/// Loads a model file, validating tables and dimensions against the
/// structural contract; failures name the offending file.
pub fn load_model(path: impl AsRef<Path>) -> Result<(ExoMdpModel, Option<Provenance>)> {
    let path = path.as_ref();
    let file: ModelFile = load_json(path)?;
    let ModelFile {
        d,
        k,
        s,
        a,
        h,
        i_star,
        t_en,
        t_ex,
        r_en,
        d1_en,
        d1_ex,
        provenance,
    } = file;
    let model = ExoMdpModel::new(ModelParts {
        d,
        k,
        s_per_factor: s,
        a_count: a,
        horizon: h,
        i_star,
        t_en,
        t_ex,
        r_en,
        d1_en,
        d1_ex,
    })
    .map_err(|e| schema_err(path, e))?;
    Ok((model, provenance))
}

pub fn save_model(
    path: impl AsRef<Path>,
    model: &ExoMdpModel,
    provenance: Option<&Provenance>,
) -> Result<()> {
    let oracle = model.oracle();
    save_json(
        path,
        &ModelFileRef {
            d: model.d(),
            k: model.k(),
            s: model.s_per_factor(),
            a: model.a_count(),
            h: model.horizon(),
            i_star: oracle.i_star(),
            t_en: oracle.t_en(),
            t_ex: oracle.t_ex(),
            r_en: oracle.r_en(),
            d1_en: oracle.d1_en(),
            d1_ex: oracle.d1_ex(),
            provenance,
        },
    )
}

pub fn load_cover(path: impl AsRef<Path>, model: &ExoMdpModel) -> Result<PolicyCover> {
    let path = path.as_ref();
    let cover: PolicyCover = load_json(path)?;
    cover
        .validate(model.d(), model.s_per_factor(), model.a_count())
        .map_err(|e| schema_err(path, e))?;
    Ok(cover)
}

pub fn save_cover(path: impl AsRef<Path>, cover: &PolicyCover) -> Result<()> {
    save_json(path, cover)
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicyFile> {
    load_json(path)
}

pub fn save_policy(path: impl AsRef<Path>, policy: &PolicyFile) -> Result<()> {
    save_json(path, policy)
}

/// Appends nothing; writes the whole dataset as JSON lines.
pub fn save_dataset(path: impl AsRef<Path>, episodes: &[Trajectory]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| schema_err(path, e))?;
    let mut writer = BufWriter::new(file);
    for episode in episodes {
        serde_json::to_writer(&mut writer, episode).map_err(|e| schema_err(path, e))?;
        writer.write_all(b"\n").map_err(|e| schema_err(path, e))?;
    }
    writer.flush().map_err(|e| schema_err(path, e))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| schema_err(path, e))?;
    let reader = BufReader::new(file);
    let mut episodes = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| schema_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let episode = serde_json::from_str(&line)
            .map_err(|e| schema_err(path, format!("line {}: {e}", no + 1)))?;
        episodes.push(episode);
    }
    Ok(episodes)
}
