//! Parameter checkpoints: a versioned text header followed by a flat
//! little-endian `f64` dump.
//!
//! ```text
//! NCC-CHECKPOINT v1
//! module nccq
//! algorithm NCC_Q
//! seed 17
//! steps 4000
//! tensor online/enc0.0.w 4x32
//! ...
//! end
//! <raw f64 data, tensors in header order>
//! ```

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::ParamStore;

const MAGIC: &str = "NCC-CHECKPOINT v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint header line {line}: {detail}")]
    Header { line: usize, detail: String },
    #[error("checkpoint holds {found} but {expected} was requested")]
    Mismatch { expected: String, found: String },
    #[error("checkpoint tensor count {found} does not match the architecture ({expected})")]
    TensorCount { expected: usize, found: usize },
    #[error("tensor `{tensor}`: checkpoint shape {found:?}, architecture expects {expected:?}")]
    Shape {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {index}: checkpoint has `{found}`, architecture expects `{expected}`")]
    Name {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("checkpoint data ends early: need {expected} bytes, got {found}")]
    Truncated { expected: usize, found: usize },
}

/// Header fields other than the tensor list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub module: String,
    pub algorithm: String,
    pub seed: u64,
    pub steps: u64,
}

struct Entry {
    name: String,
    shape: Vec<usize>,
}

pub fn write(
    out: &mut impl Write,
    meta: &CheckpointMeta,
    stores: &[(&str, &ParamStore)],
) -> std::io::Result<()> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "module {}", meta.module)?;
    writeln!(out, "algorithm {}", meta.algorithm)?;
    writeln!(out, "seed {}", meta.seed)?;
    writeln!(out, "steps {}", meta.steps)?;
    for (label, store) in stores {
        for (_, name, t) in store.iter() {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let shape = if shape.is_empty() { "scalar".to_string() } else { shape.join("x") };
            writeln!(out, "tensor {label}/{name} {shape}")?;
        }
    }
    writeln!(out, "end")?;
    for (_, store) in stores {
        for (_, _, t) in store.iter() {
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn save(path: &Path, meta: &CheckpointMeta, stores: &[(&str, &ParamStore)]) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    write(&mut f, meta, stores).map_err(io)?;
    f.flush().map_err(io)
}

/// Reads the header only.
pub fn read_meta(path: &Path) -> Result<CheckpointMeta, CheckpointError> {
    let f = std::fs::File::open(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (meta, _) = read_header(&mut std::io::BufReader::new(f))?;
    Ok(meta)
}

fn read_header(input: &mut impl BufRead) -> Result<(CheckpointMeta, Vec<Entry>), CheckpointError> {
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        let n = input.read_line(&mut line).map_err(|e| CheckpointError::Header {
            line: lines.len() + 1,
            detail: e.to_string(),
        })?;
        if n == 0 {
            return Err(CheckpointError::Header {
                line: lines.len() + 1,
                detail: "missing `end`".into(),
            });
        }
        let line = line.trim_end_matches('\n').to_string();
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    let bad = |line: usize, detail: &str| CheckpointError::Header {
        line,
        detail: detail.to_string(),
    };
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(bad(1, "not an NCC checkpoint (or unsupported version)"));
    }
    let field = |k: usize, key: &str| -> Result<String, CheckpointError> {
        lines
            .get(k)
            .and_then(|l| l.strip_prefix(key))
            .and_then(|l| l.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(k + 1, &format!("expected `{key}`")))
    };
    let number = |k: usize, key: &str| -> Result<u64, CheckpointError> {
        field(k, key)?.parse().map_err(|_| bad(k + 1, &format!("`{key}` is not an integer")))
    };
    let meta = CheckpointMeta {
        module: field(1, "module")?,
        algorithm: field(2, "algorithm")?,
        seed: number(3, "seed")?,
        steps: number(4, "steps")?,
    };
    let mut entries = Vec::new();
    for (k, line) in lines.iter().enumerate().skip(5) {
        let mut parts = line.split(' ');
        let (Some("tensor"), Some(name), Some(shape), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad(k + 1, "expected `tensor <name> <shape>`"));
        };
        let shape = if shape == "scalar" { "" } else { shape };
        let shape = shape
            .split_terminator('x')
            .map(str::parse)
            .collect::<Result<Vec<usize>, _>>()
            .map_err(|_| bad(k + 1, "bad shape"))?;
        entries.push(Entry {
            name: name.to_string(),
            shape,
        });
    }
    Ok((meta, entries))
}

/// Loads values into stores whose layout must match the checkpoint exactly.
/// `module` and `algorithm` must match the header.
pub fn read_into(
    input: &mut impl BufRead,
    module: &str,
    algorithm: &str,
    stores: &mut [(&str, &mut ParamStore)],
) -> Result<CheckpointMeta, CheckpointError> {
    let (meta, entries) = read_header(input)?;
    for (want, got) in [(module, &meta.module), (algorithm, &meta.algorithm)] {
        if want != got {
            return Err(CheckpointError::Mismatch {
                expected: want.to_string(),
                found: got.clone(),
            });
        }
    }
    let expected: usize = stores.iter().map(|(_, s)| s.len()).sum();
    if entries.len() != expected {
        return Err(CheckpointError::TensorCount {
            expected,
            found: entries.len(),
        });
    }
    let mut k = 0;
    let mut total = 0;
    for (label, store) in stores.iter() {
        for (_, name, t) in store.iter() {
            let e = &entries[k];
            let full = format!("{label}/{name}");
            if e.name != full {
                return Err(CheckpointError::Name {
                    index: k,
                    expected: full,
                    found: e.name.clone(),
                });
            }
            if e.shape != t.shape() {
                return Err(CheckpointError::Shape {
                    tensor: full,
                    expected: t.shape().to_vec(),
                    found: e.shape.clone(),
                });
            }
            total += t.numel();
            k += 1;
        }
    }
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| CheckpointError::Header {
        line: 0,
        detail: e.to_string(),
    })?;
    if bytes.len() != total * 8 {
        return Err(CheckpointError::Truncated {
            expected: total * 8,
            found: bytes.len(),
        });
    }
    let mut chunks = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for (_, store) in stores.iter_mut() {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            for v in store.get_mut(id).data_mut() {
                *v = chunks.next().expect("length checked");
            }
        }
    }
    Ok(meta)
}

pub fn load_into(
    path: &Path,
    module: &str,
    algorithm: &str,
    stores: &mut [(&str, &mut ParamStore)],
) -> Result<CheckpointMeta, CheckpointError> {
    let f = std::fs::File::open(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_into(&mut std::io::BufReader::new(f), module, algorithm, stores)
}
