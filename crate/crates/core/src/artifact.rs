//! Binary value/policy files and the run manifest.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then little-endian payload. Headers carry the problem hash and a
//! loader rejects files whose hash differs from the one it expects.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::solver::{Impulse, PolicyTables, Shape, ValueField};

pub const FORMAT_VERSION: u32 = 1;
const VALUE_MAGIC: &[u8; 8] = b"PFQVIVAL";
const POLICY_MAGIC: &[u8; 8] = b"PFQVIPOL";
pub const VALUE_FILE: &str = "value.bin";
pub const POLICY_FILE: &str = "policy.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ValueHeader {
    config_hash: String,
    shape: Shape,
    t_steps: usize,
    dt: f64,
    slices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PolicyHeader {
    config_hash: String,
    shape: Shape,
    t_steps: usize,
    dt: f64,
    submittable: usize,
    moves: Vec<Vec<Impulse>>,
    nu_slices: Vec<usize>,
}

fn open_missing(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))
}

fn write_head<W: Write, H: Serialize>(w: &mut W, magic: &[u8; 8], header: &H) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Artifact(e.to_string()))?;
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

fn read_head<R: Read, H: for<'de> Deserialize<'de>>(
    r: &mut R,
    magic: &[u8; 8],
    path: &Path,
) -> Result<H> {
    let bad = |what: &str| Error::Artifact(format!("{}: {what}", path.display()));
    let mut m = [0u8; 8];
    r.read_exact(&mut m).map_err(|_| bad("truncated"))?;
    if &m != magic {
        return Err(bad("wrong magic"));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(|_| bad("truncated"))?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(bad(&format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let mut l = [0u8; 8];
    r.read_exact(&mut l).map_err(|_| bad("truncated"))?;
    let len = u64::from_le_bytes(l) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)
        .map_err(|_| bad("truncated header"))?;
    serde_json::from_slice(&json).map_err(|e| bad(&format!("header: {e}")))
}

fn check_hash(found: &str, expected: &str, path: &Path) -> Result<()> {
    if found != expected {
        return Err(Error::Artifact(format!(
            "{} was written for config {found}, current config is {expected}",
            path.display()
        )));
    }
    Ok(())
}

pub fn write_value(value: &ValueField, hash: &str, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = ValueHeader {
        config_hash: hash.to_string(),
        shape: value.shape,
        t_steps: value.t_steps,
        dt: value.dt,
        slices: value.retained().collect(),
    };
    write_head(&mut w, VALUE_MAGIC, &header)?;
    for n in &header.slices {
        for v in value.slice(*n)? {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_value(path: &Path, hash: &str) -> Result<ValueField> {
    let mut r = BufReader::new(open_missing(path)?);
    let h: ValueHeader = read_head(&mut r, VALUE_MAGIC, path)?;
    check_hash(&h.config_hash, hash, path)?;
    let mut field = ValueField::new(h.shape, h.t_steps, h.dt);
    let mut buf = vec![0u8; h.shape.len() * 8];
    for n in h.slices {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Artifact(format!("{}: truncated data", path.display())))?;
        field.insert(
            n,
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    Ok(field)
}

pub fn write_policy(policy: &PolicyTables, hash: &str, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = PolicyHeader {
        config_hash: hash.to_string(),
        shape: policy.shape,
        t_steps: policy.t_steps,
        dt: policy.dt,
        submittable: policy.submittable,
        moves: policy.moves.clone(),
        nu_slices: policy.nu_indices().collect(),
    };
    write_head(&mut w, POLICY_MAGIC, &header)?;
    for d in &policy.decisions {
        for x in d {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    for x in policy.nu.values().flatten() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_policy(path: &Path, hash: &str) -> Result<PolicyTables> {
    let mut r = BufReader::new(open_missing(path)?);
    let h: PolicyHeader = read_head(&mut r, POLICY_MAGIC, path)?;
    check_hash(&h.config_hash, hash, path)?;
    let trunc = || Error::Artifact(format!("{}: truncated data", path.display()));
    let per_step = h.submittable * h.shape.per_config();
    let mut buf = vec![0u8; per_step * 2];
    let mut decisions = Vec::with_capacity(h.t_steps + 1);
    for _ in 0..=h.t_steps {
        r.read_exact(&mut buf).map_err(|_| trunc())?;
        decisions.push(
            buf.chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect(),
        );
    }
    let mut nu = BTreeMap::new();
    let mut buf = vec![0u8; h.shape.len() * 4];
    for n in h.nu_slices {
        r.read_exact(&mut buf).map_err(|_| trunc())?;
        nu.insert(
            n,
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    Ok(PolicyTables {
        shape: h.shape,
        t_steps: h.t_steps,
        dt: h.dt,
        submittable: h.submittable,
        moves: h.moves,
        decisions,
        nu,
    })
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut r = BufReader::new(open_missing(path)?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

/// Index of everything a command wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    pub commands: BTreeMap<String, Vec<FileEntry>>,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read(&path)?;
        serde_json::from_slice(&text)
            .map(Some)
            .map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
    }

    /// Records `files` under `command`, replacing a manifest written for a
    /// different config.
    pub fn record(
        dir: &Path,
        hash: &str,
        config: serde_json::Value,
        command: &str,
        files: &[PathBuf],
    ) -> Result<()> {
        let mut m = match Self::load(dir)? {
            Some(m) if m.config_hash == hash && m.format_version == FORMAT_VERSION => m,
            _ => Manifest {
                format_version: FORMAT_VERSION,
                config_hash: hash.to_string(),
                commands: BTreeMap::new(),
                config: serde_json::Value::Null,
            },
        };
        m.config = config;
        let mut entries = Vec::with_capacity(files.len());
        for f in files {
            entries.push(FileEntry {
                name: f
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                sha256: file_sha256(f)?,
            });
        }
        m.commands.insert(command.to_string(), entries);
        write_json(&dir.join(MANIFEST_FILE), &m)
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Artifact(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (ValueField, PolicyTables) {
        let shape = Shape {
            ns: 2,
            nz: 2,
            nq: 3,
            nc: 2,
        };
        let mut v = ValueField::new(shape, 4, 0.25);
        v.insert(0, (0..shape.len()).map(|x| x as f64 * 0.5 - 1.0).collect());
        v.insert(4, vec![f64::MIN_POSITIVE; shape.len()]);
        let per = shape.per_config();
        let mut nu = BTreeMap::new();
        nu.insert(2, (0..shape.len()).map(|x| x as f32).collect());
        let p = PolicyTables {
            shape,
            t_steps: 4,
            dt: 0.25,
            submittable: 1,
            moves: vec![vec![Impulse {
                level: 0,
                size: -1.0,
            }]],
            decisions: (0..5)
                .map(|n| (0..per).map(|x| ((x + n) % 2) as u16).collect())
                .collect(),
            nu,
        };
        (v, p)
    }

    #[test]
    fn round_trip_and_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let (v, p) = sample();
        let vp = dir.path().join(VALUE_FILE);
        let pp = dir.path().join(POLICY_FILE);
        write_value(&v, "abc", &vp).unwrap();
        write_policy(&p, "abc", &pp).unwrap();
        assert_eq!(read_value(&vp, "abc").unwrap(), v);
        assert_eq!(read_policy(&pp, "abc").unwrap(), p);
        let e = read_value(&vp, "xyz").unwrap_err();
        assert!(matches!(e, Error::Artifact(_)));
        assert_eq!(e.exit_code(), 4);
        assert!(matches!(read_policy(&vp, "abc"), Err(Error::Artifact(_))));
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let e = read_value(&dir.path().join("nope.bin"), "abc").unwrap_err();
        assert!(matches!(e, Error::MissingArtifact(_)));
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn manifest_accumulates_commands() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.json");
        write_json(&f, &1).unwrap();
        Manifest::record(
            dir.path(),
            "h1",
            serde_json::json!({}),
            "solve",
            std::slice::from_ref(&f),
        )
        .unwrap();
        Manifest::record(
            dir.path(),
            "h1",
            serde_json::json!({}),
            "regions",
            std::slice::from_ref(&f),
        )
        .unwrap();
        let m = Manifest::load(dir.path()).unwrap().unwrap();
        assert_eq!(m.commands.len(), 2);
        Manifest::record(dir.path(), "h2", serde_json::json!({}), "solve", &[f]).unwrap();
        assert_eq!(
            Manifest::load(dir.path()).unwrap().unwrap().commands.len(),
            1
        );
    }
}
