//! Versioned model checkpoints on top of the named-array container.
//!
//! A checkpoint stores the architecture config (JSON), every parameter and
//! running-stat array, optionally the optimizer state, and a meta chunk with
//! a hash of the config. Loading verifies the hash and the kind tag, so a
//! checkpoint cannot silently deserialize into a different architecture.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::ArrayFile;
use crate::nn::{Adam, AdamConfig, ParamSet};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema: u32,
    /// Model kind tag, e.g. "ser" or "vc".
    pub kind: String,
    pub step: u64,
    pub config_hash: String,
    /// Free-form extras (RNG position, normalization scope, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Canonical hash of a config (serde_json sorts object keys).
pub fn config_hash(config: &serde_json::Value) -> String {
    let s = serde_json::to_string(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(s.as_bytes());
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub config: serde_json::Value,
    pub params: ParamSet,
    pub adam: Option<Adam>,
}

pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    config: &serde_json::Value,
    params: &ParamSet,
    adam: Option<&Adam>,
    step: u64,
    extra: serde_json::Value,
) -> Result<()> {
    let meta = CheckpointMeta {
        schema: SCHEMA_VERSION,
        kind: kind.to_string(),
        step,
        config_hash: config_hash(config),
        extra,
    };
    let mut file = ArrayFile::new();
    file.push_bytes("meta", serde_json::to_vec(&meta).unwrap());
    file.push_bytes("config", serde_json::to_vec(config).unwrap());
    let order: Vec<&str> = params.names().iter().map(|s| s.as_str()).collect();
    file.push_bytes("param_order", serde_json::to_vec(&order).unwrap());
    for (name, value) in params.iter() {
        file.push_array_f64(&format!("param/{name}"), value);
    }
    if let Some(adam) = adam {
        let acfg = serde_json::json!({
            "learning_rate": adam.cfg.learning_rate,
            "beta1": adam.cfg.beta1,
            "beta2": adam.cfg.beta2,
            "eps": adam.cfg.eps,
            "step": adam.step,
        });
        file.push_bytes("adam", serde_json::to_vec(&acfg).unwrap());
        for (i, name) in params.names().iter().enumerate() {
            file.push_array_f64(&format!("adam_m/{name}"), &adam.m[i]);
            file.push_array_f64(&format!("adam_v/{name}"), &adam.v[i]);
        }
    }
    file.save(path)
}

pub fn load_checkpoint(path: &Path, expect_kind: &str) -> Result<Checkpoint> {
    let file = ArrayFile::load(path)?;
    let err = |what: String| Error::format(path, what);
    let meta: CheckpointMeta = serde_json::from_slice(
        file.get_bytes("meta")
            .ok_or_else(|| err("missing meta chunk".into()))?,
    )
    .map_err(|e| err(format!("bad meta chunk: {e}")))?;
    if meta.schema != SCHEMA_VERSION {
        return Err(err(format!("unsupported checkpoint schema {}", meta.schema)));
    }
    if meta.kind != expect_kind {
        return Err(err(format!(
            "checkpoint kind is {:?}, expected {:?}",
            meta.kind, expect_kind
        )));
    }
    let config: serde_json::Value = serde_json::from_slice(
        file.get_bytes("config")
            .ok_or_else(|| err("missing config chunk".into()))?,
    )
    .map_err(|e| err(format!("bad config chunk: {e}")))?;
    if config_hash(&config) != meta.config_hash {
        return Err(err("config hash mismatch: checkpoint is corrupt".into()));
    }
    let order: Vec<String> = serde_json::from_slice(
        file.get_bytes("param_order")
            .ok_or_else(|| err("missing param_order chunk".into()))?,
    )
    .map_err(|e| err(format!("bad param_order chunk: {e}")))?;
    let mut params = ParamSet::new();
    for name in &order {
        let arr = file
            .get_array_f64(&format!("param/{name}"))
            .ok_or_else(|| err(format!("missing parameter array {name}")))?;
        params.register(name, arr);
    }
    let adam = if let Some(bytes) = file.get_bytes("adam") {
        let acfg: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| err(format!("bad adam chunk: {e}")))?;
        let cfg = AdamConfig {
            learning_rate: acfg["learning_rate"].as_f64().unwrap_or(1e-4),
            beta1: acfg["beta1"].as_f64().unwrap_or(0.5),
            beta2: acfg["beta2"].as_f64().unwrap_or(0.999),
            eps: acfg["eps"].as_f64().unwrap_or(1e-8),
        };
        let mut adam = Adam::new(cfg, &params);
        adam.step = acfg["step"].as_u64().unwrap_or(0);
        for (i, name) in order.iter().enumerate() {
            adam.m[i] = file
                .get_array_f64(&format!("adam_m/{name}"))
                .ok_or_else(|| err(format!("missing adam_m/{name}")))?;
            adam.v[i] = file
                .get_array_f64(&format!("adam_v/{name}"))
                .ok_or_else(|| err(format!("missing adam_v/{name}")))?;
        }
        Some(adam)
    } else {
        None
    };
    Ok(Checkpoint {
        meta,
        config,
        params,
        adam,
    })
}

/// One named parameter group inside a multi-network checkpoint.
pub struct Section<'a> {
    pub name: &'a str,
    pub params: &'a ParamSet,
    pub adam: Option<&'a Adam>,
}

pub struct LoadedSection {
    pub name: String,
    pub params: ParamSet,
    pub adam: Option<Adam>,
}

/// Save several parameter groups (networks) into one checkpoint file.
pub fn save_sections(
    path: &Path,
    kind: &str,
    config: &serde_json::Value,
    sections: &[Section<'_>],
    step: u64,
    extra: serde_json::Value,
) -> Result<()> {
    let meta = CheckpointMeta {
        schema: SCHEMA_VERSION,
        kind: kind.to_string(),
        step,
        config_hash: config_hash(config),
        extra,
    };
    let mut file = ArrayFile::new();
    file.push_bytes("meta", serde_json::to_vec(&meta).unwrap());
    file.push_bytes("config", serde_json::to_vec(config).unwrap());
    let names: Vec<&str> = sections.iter().map(|s| s.name).collect();
    file.push_bytes("sections", serde_json::to_vec(&names).unwrap());
    for sec in sections {
        let order: Vec<&str> = sec.params.names().iter().map(|s| s.as_str()).collect();
        file.push_bytes(&format!("order/{}", sec.name), serde_json::to_vec(&order).unwrap());
        for (name, value) in sec.params.iter() {
            file.push_array_f64(&format!("param/{}/{name}", sec.name), value);
        }
        if let Some(adam) = sec.adam {
            let acfg = serde_json::json!({
                "learning_rate": adam.cfg.learning_rate,
                "beta1": adam.cfg.beta1,
                "beta2": adam.cfg.beta2,
                "eps": adam.cfg.eps,
                "step": adam.step,
            });
            file.push_bytes(&format!("adam/{}", sec.name), serde_json::to_vec(&acfg).unwrap());
            for (i, name) in sec.params.names().iter().enumerate() {
                file.push_array_f64(&format!("adam_m/{}/{name}", sec.name), &adam.m[i]);
                file.push_array_f64(&format!("adam_v/{}/{name}", sec.name), &adam.v[i]);
            }
        }
    }
    file.save(path)
}

pub fn load_sections(
    path: &Path,
    expect_kind: &str,
) -> Result<(CheckpointMeta, serde_json::Value, Vec<LoadedSection>)> {
    let file = ArrayFile::load(path)?;
    let err = |what: String| Error::format(path, what);
    let meta: CheckpointMeta = serde_json::from_slice(
        file.get_bytes("meta")
            .ok_or_else(|| err("missing meta chunk".into()))?,
    )
    .map_err(|e| err(format!("bad meta chunk: {e}")))?;
    if meta.schema != SCHEMA_VERSION {
        return Err(err(format!("unsupported checkpoint schema {}", meta.schema)));
    }
    if meta.kind != expect_kind {
        return Err(err(format!(
            "checkpoint kind is {:?}, expected {:?}",
            meta.kind, expect_kind
        )));
    }
    let config: serde_json::Value = serde_json::from_slice(
        file.get_bytes("config")
            .ok_or_else(|| err("missing config chunk".into()))?,
    )
    .map_err(|e| err(format!("bad config chunk: {e}")))?;
    if config_hash(&config) != meta.config_hash {
        return Err(err("config hash mismatch: checkpoint is corrupt".into()));
    }
    let names: Vec<String> = serde_json::from_slice(
        file.get_bytes("sections")
            .ok_or_else(|| err("missing sections chunk".into()))?,
    )
    .map_err(|e| err(format!("bad sections chunk: {e}")))?;
    let mut out = Vec::new();
    for sec_name in names {
        let order: Vec<String> = serde_json::from_slice(
            file.get_bytes(&format!("order/{sec_name}"))
                .ok_or_else(|| err(format!("missing order/{sec_name}")))?,
        )
        .map_err(|e| err(format!("bad order chunk: {e}")))?;
        let mut params = ParamSet::new();
        for name in &order {
            let arr = file
                .get_array_f64(&format!("param/{sec_name}/{name}"))
                .ok_or_else(|| err(format!("missing param/{sec_name}/{name}")))?;
            params.register(name, arr);
        }
        let adam = if let Some(bytes) = file.get_bytes(&format!("adam/{sec_name}")) {
            let acfg: serde_json::Value =
                serde_json::from_slice(bytes).map_err(|e| err(format!("bad adam chunk: {e}")))?;
            let cfg = AdamConfig {
                learning_rate: acfg["learning_rate"].as_f64().unwrap_or(1e-4),
                beta1: acfg["beta1"].as_f64().unwrap_or(0.5),
                beta2: acfg["beta2"].as_f64().unwrap_or(0.999),
                eps: acfg["eps"].as_f64().unwrap_or(1e-8),
            };
            let mut adam = Adam::new(cfg, &params);
            adam.step = acfg["step"].as_u64().unwrap_or(0);
            for (i, name) in order.iter().enumerate() {
                adam.m[i] = file
                    .get_array_f64(&format!("adam_m/{sec_name}/{name}"))
                    .ok_or_else(|| err(format!("missing adam_m/{sec_name}/{name}")))?;
                adam.v[i] = file
                    .get_array_f64(&format!("adam_v/{sec_name}/{name}"))
                    .ok_or_else(|| err(format!("missing adam_v/{sec_name}/{name}")))?;
            }
            Some(adam)
        } else {
            None
        };
        out.push(LoadedSection {
            name: sec_name,
            params,
            adam,
        });
    }
    Ok((meta, config, out))
}

/// Error unless the stored config matches the current one exactly.
pub fn ensure_config_matches(
    ckpt: &Checkpoint,
    current: &serde_json::Value,
    path: &Path,
) -> Result<()> {
    if config_hash(current) != ckpt.meta.config_hash {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with a different configuration \
             (stored hash {}, current {})",
            path.display(),
            &ckpt.meta.config_hash[..12.min(ckpt.meta.config_hash.len())],
            &config_hash(current)[..12]
        )));
    }
    Ok(())
}
