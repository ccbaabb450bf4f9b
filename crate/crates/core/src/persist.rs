//! On-disk formats: binary value functions, JSON-lines datasets with a
//! manifest sidecar, and JSON policies. Every write goes through a
//! temporary file and an atomic rename.

use crate::collect::{CollectError, Dataset, DatasetManifest, DemoRecord};
use crate::envmodels::Env;
use crate::gridcore::{Axis, Field, Grid, GridError};
use crate::policy::{MlpPolicy, PolicyError};
use crate::reach::{ReachError, ValueFunction, VfMetadata};
use serde::Serialize;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const VF_MAGIC: &[u8; 4] = b"SGVF";
pub const VF_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not a value-function file")]
    BadMagic,
    #[error("unknown format version {0}")]
    UnknownVersion(u32),
    #[error("truncated payload: need {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

impl PersistError {
    /// The referenced file does not exist.
    pub fn is_missing_file(&self) -> bool {
        matches!(self, PersistError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()
    };
    write().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read(path: &Path) -> Result<Vec<u8>, PersistError> {
    fs::read(path).map_err(io_err(path))
}

fn to_json_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        let available = self.bytes.len() - self.at;
        if n > available {
            return Err(PersistError::Truncated {
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], PersistError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, PersistError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, PersistError> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, PersistError> {
        self.array().map(f64::from_le_bytes)
    }

    fn len(&mut self) -> Result<usize, PersistError> {
        usize::try_from(self.u64()?)
            .map_err(|_| PersistError::Invalid("length overflows usize".into()))
    }
}

/// Serializes a value function: header, metadata JSON, then every slice's
/// node values as little-endian f64, slices outermost.
pub fn encode_vf(vf: &ValueFunction) -> Vec<u8> {
    let axes = vf.grid().axes();
    let meta = serde_json::to_vec(vf.metadata()).expect("metadata serializes");
    let mut out = Vec::with_capacity(64 + meta.len() + vf.slices().len() * vf.grid().len() * 8);
    out.extend_from_slice(VF_MAGIC);
    out.extend_from_slice(&VF_VERSION.to_le_bytes());
    out.extend_from_slice(&(axes.len() as u32).to_le_bytes());
    for a in axes {
        out.extend_from_slice(&a.lo.to_le_bytes());
        out.extend_from_slice(&a.hi.to_le_bytes());
        out.extend_from_slice(&(a.n as u64).to_le_bytes());
        out.push(u8::from(a.periodic));
    }
    out.extend_from_slice(&(vf.dbar_levels().len() as u64).to_le_bytes());
    for d in vf.dbar_levels() {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    for s in vf.slices() {
        for v in s.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses [`encode_vf`] output and checks monotonicity in the disturbance
/// bound.
pub fn decode_vf(bytes: &[u8]) -> Result<ValueFunction, PersistError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4).ok() != Some(&VF_MAGIC[..]) {
        return Err(PersistError::BadMagic);
    }
    let version = r.u32()?;
    if version != VF_VERSION {
        return Err(PersistError::UnknownVersion(version));
    }
    let ndim = r.u32()? as usize;
    let mut axes = Vec::with_capacity(ndim.min(16));
    for _ in 0..ndim {
        let (lo, hi, n) = (r.f64()?, r.f64()?, r.len()?);
        let periodic = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(PersistError::Invalid(format!("periodic flag {b}"))),
        };
        axes.push(Axis {
            lo,
            hi,
            n,
            periodic,
        });
    }
    let grid = Grid::new(axes)?;
    let levels_len = r.len()?;
    let levels = (0..levels_len)
        .map(|_| r.f64())
        .collect::<Result<Vec<_>, _>>()?;
    let meta_len = r.len()?;
    let meta: VfMetadata =
        serde_json::from_slice(r.take(meta_len)?).map_err(|source| PersistError::Json {
            path: PathBuf::from("<metadata>"),
            line: source.line(),
            source,
        })?;
    let nodes = grid.len();
    let payload = nodes
        .checked_mul(levels_len)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| PersistError::Invalid("payload size overflows".into()))?;
    let data = r.take(payload)?;
    if r.at != bytes.len() {
        return Err(PersistError::TrailingBytes(bytes.len() - r.at));
    }
    let slices = data
        .chunks_exact(nodes * 8)
        .map(|chunk| {
            let values = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            Field::new(grid.clone(), values)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let vf = ValueFunction::from_parts(grid, levels, slices, meta)?;
    vf.check_invariants(None)?;
    Ok(vf)
}

pub fn save_vf(path: &Path, vf: &ValueFunction) -> Result<(), PersistError> {
    write_atomic(path, &encode_vf(vf))
}

/// Loads a value function; with `env`, also checks its hash and `V <= l`.
pub fn load_vf(path: &Path, env: Option<&Env>) -> Result<ValueFunction, PersistError> {
    let vf = decode_vf(&read(path)?)?;
    if let Some(env) = env {
        vf.check_env(env)?;
        vf.check_invariants(Some(env))?;
    }
    Ok(vf)
}

/// Sidecar manifest path: `d.jsonl` becomes `d.manifest.json`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("manifest.json")
}

pub fn encode_dataset(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    for r in &data.records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    out
}

/// Writes the records as JSON lines and the manifest alongside.
pub fn save_dataset(path: &Path, data: &Dataset) -> Result<(), PersistError> {
    write_atomic(path, &encode_dataset(data))?;
    write_atomic(&manifest_path(path), &to_json_pretty(&data.manifest))
}

pub fn load_dataset(path: &Path) -> Result<Dataset, PersistError> {
    let mpath = manifest_path(path);
    let manifest: DatasetManifest =
        serde_json::from_slice(&read(&mpath)?).map_err(|source| PersistError::Json {
            path: mpath.clone(),
            line: source.line(),
            source,
        })?;
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DemoRecord =
            serde_json::from_str(&line).map_err(|source| PersistError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?;
        records.push(record);
    }
    if records.len() != manifest.records {
        return Err(PersistError::Invalid(format!(
            "{}: {} records, manifest says {}",
            path.display(),
            records.len(),
            manifest.records
        )));
    }
    let data = Dataset { records, manifest };
    data.validate()?;
    Ok(data)
}

pub fn save_policy(path: &Path, policy: &MlpPolicy) -> Result<(), PersistError> {
    write_atomic(path, &to_json_pretty(policy))
}

pub fn load_policy(path: &Path) -> Result<MlpPolicy, PersistError> {
    let policy: MlpPolicy = load_json(path)?;
    policy.validate()?;
    Ok(policy)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PersistError> {
    write_atomic(path, &to_json_pretty(value))
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PersistError> {
    serde_json::from_slice(&read(path)?).map_err(|source| PersistError::Json {
        path: path.to_path_buf(),
        line: source.line(),
        source,
    })
}
