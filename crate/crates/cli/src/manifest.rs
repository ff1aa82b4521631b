//! Run manifests: provenance embedded in every output and its verification.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const TOOL_VERSION: &str = concat!("spinshape ", env!("CARGO_PKG_VERSION"));

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    /// Start of the run, seconds since the Unix epoch.
    pub started: f64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command_line: Vec<String>,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub wall_clock: WallClock,
    pub inputs: Vec<FileDigest>,
    /// File the digest covers, for sidecar manifests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_file: Option<String>,
    pub payload_digest: String,
}

/// Provenance shared by all outputs of one run.
pub struct RunContext {
    command_line: Vec<String>,
    config_digest: String,
    seed: Option<u64>,
    started: f64,
    clock: Instant,
    inputs: Vec<FileDigest>,
}

impl RunContext {
    pub fn new(config: &impl Serialize, seed: Option<u64>) -> Self {
        let config = serde_json::to_vec(config).expect("configuration serializes");
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        Self {
            command_line: std::env::args().collect(),
            config_digest: sha256_hex(&config),
            seed,
            started,
            clock: Instant::now(),
            inputs: Vec::new(),
        }
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    fn manifest(&self, payload_digest: String, payload_file: Option<String>) -> Manifest {
        Manifest {
            command_line: self.command_line.clone(),
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            tool_version: TOOL_VERSION.to_string(),
            wall_clock: WallClock { started: self.started, elapsed_seconds: self.clock.elapsed().as_secs_f64() },
            inputs: self.inputs.clone(),
            payload_file,
            payload_digest,
        }
    }

    /// Writes `payload` as a JSON object with the manifest under `"manifest"`.
    pub fn write_json(&self, path: &Path, payload: &impl Serialize) -> Result<(), CliError> {
        let mut value = serde_json::to_value(payload).expect("payload serializes");
        let Value::Object(map) = &mut value else {
            panic!("JSON payloads are objects");
        };
        let digest = payload_digest(&Value::Object(map.clone()));
        map.insert("manifest".into(), serde_json::to_value(self.manifest(digest, None)).expect("manifest"));
        let mut text = serde_json::to_string_pretty(&value).expect("serializes");
        text.push('\n');
        write(path, text.as_bytes())
    }

    /// Writes `text` and a sidecar manifest next to it.
    pub fn write_with_sidecar(&self, path: &Path, text: &str) -> Result<(), CliError> {
        write(path, text.as_bytes())?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let manifest = self.manifest(sha256_hex(text.as_bytes()), Some(name));
        let mut json = serde_json::to_string_pretty(&manifest).expect("serializes");
        json.push('\n');
        write(&sidecar_path(path), json.as_bytes())
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Digest of a JSON payload in compact form with sorted keys.
fn payload_digest(payload: &Value) -> String {
    sha256_hex(&serde_json::to_vec(payload).expect("serializes"))
}

/// Splits a JSON document into its payload and embedded manifest.
pub fn split_document(bytes: &[u8], path: &Path) -> Result<(Value, Option<Manifest>), CliError> {
    let mut value: Value = serde_json::from_slice(bytes)
        .map_err(|e| CliError::Data(format!("{} is not valid JSON: {e}", path.display())))?;
    let manifest = match value.as_object_mut().and_then(|m| m.remove("manifest")) {
        Some(m) => Some(
            serde_json::from_value(m)
                .map_err(|e| CliError::Data(format!("{} has a malformed manifest: {e}", path.display())))?,
        ),
        None => None,
    };
    Ok((value, manifest))
}

/// Checks a document's own payload digest.
pub fn check_payload(payload: &Value, manifest: &Manifest, path: &Path) -> Result<(), CliError> {
    let digest = payload_digest(payload);
    if digest != manifest.payload_digest {
        return Err(CliError::Data(format!(
            "{}: payload digest {digest} does not match manifest {}",
            path.display(),
            manifest.payload_digest
        )));
    }
    Ok(())
}

fn resolve(recorded: &str, base: &Path) -> PathBuf {
    let p = PathBuf::from(recorded);
    if p.is_absolute() || p.exists() {
        p
    } else {
        base.join(p)
    }
}

/// Re-derives every digest recorded for `path`: the payload, and the inputs
/// that still exist on disk.
pub fn verify_file(path: &Path) -> Result<Vec<String>, CliError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let read = |p: &Path| fs::read(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())));
    let bytes = read(path)?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let manifest = if is_json {
        let (payload, manifest) = split_document(&bytes, path)?;
        match (manifest, payload.get("payload_digest")) {
            (Some(m), _) => {
                check_payload(&payload, &m, path)?;
                m
            }
            // a sidecar manifest given directly
            (None, Some(_)) => {
                let m: Manifest = serde_json::from_value(payload)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                let target = base.join(m.payload_file.as_deref().unwrap_or_default());
                check_bytes(&read(&target)?, &m, &target)?;
                m
            }
            (None, None) => return Err(CliError::Data(format!("{} carries no manifest", path.display()))),
        }
    } else {
        let side = sidecar_path(path);
        let m: Manifest = serde_json::from_slice(&read(&side)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", side.display())))?;
        check_bytes(&bytes, &m, path)?;
        m
    };

    let mut notes = Vec::new();
    for input in &manifest.inputs {
        let p = resolve(&input.path, base);
        match fs::read(&p) {
            Ok(b) if sha256_hex(&b) == input.sha256 => notes.push(format!("input {} ok", input.path)),
            Ok(_) => {
                return Err(CliError::Data(format!("{}: input {} changed since the run", path.display(), input.path)))
            }
            Err(_) => notes.push(format!("input {} not found, skipped", input.path)),
        }
    }
    Ok(notes)
}

fn check_bytes(bytes: &[u8], manifest: &Manifest, path: &Path) -> Result<(), CliError> {
    let digest = sha256_hex(bytes);
    if digest != manifest.payload_digest {
        return Err(CliError::Data(format!(
            "{}: digest {digest} does not match manifest {}",
            path.display(),
            manifest.payload_digest
        )));
    }
    Ok(())
}
