//! File formats: JSON-Lines instance files and the stream manifest that
//! ties staged files together.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{Block, Stage, Stream, Supervision};
use crate::synth::CompInstance;

/// One instance per line, schema fixed by `CompInstance`'s fields.
pub fn write_jsonl(path: &Path, instances: &[CompInstance]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        let line = serde_json::to_string(inst).map_err(|e| Error::json(path, e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<CompInstance>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(out)
}

/// Block boundary inside a stage file: `len` consecutive instances
/// trained under `supervision`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub supervision: Supervision,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEntry {
    pub name: String,
    pub file: String,
    pub epochs: usize,
    /// Present only for multi-block stages; a plain stage is one fully
    /// supervised block.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub blocks: Option<Vec<BlockEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamManifest {
    pub stages: Vec<StageEntry>,
}

/// Write each stage as `<name>.jsonl` plus `manifest.json` into `dir`.
pub fn write_stream(dir: &Path, stream: &Stream) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for stage in &stream.stages {
        let file = format!("{}.jsonl", stage.name);
        let instances: Vec<CompInstance> = stage.instances().cloned().collect();
        write_jsonl(&dir.join(&file), &instances)?;
        let blocks = if stage.blocks.len() == 1
            && stage.blocks[0].supervision == Supervision::Full
        {
            None
        } else {
            Some(
                stage
                    .blocks
                    .iter()
                    .map(|b| BlockEntry {
                        supervision: b.supervision,
                        len: b.instances.len(),
                    })
                    .collect(),
            )
        };
        entries.push(StageEntry {
            name: stage.name.clone(),
            file,
            epochs: stage.epochs,
            blocks,
        });
    }
    let manifest = StreamManifest { stages: entries };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reconstruct a stream from its manifest.
pub fn read_stream(manifest_path: &Path) -> Result<Stream> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: StreamManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(manifest_path, e))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut stages = Vec::new();
    for entry in &manifest.stages {
        let mut instances = read_jsonl(&dir.join(&entry.file))?;
        let blocks = match &entry.blocks {
            None => vec![Block {
                instances,
                supervision: Supervision::Full,
            }],
            Some(entries) => {
                let declared: usize = entries.iter().map(|b| b.len).sum();
                if declared != instances.len() {
                    return Err(Error::Parse(format!(
                        "stage {}: blocks declare {declared} instances, file has {}",
                        entry.name,
                        instances.len()
                    )));
                }
                entries
                    .iter()
                    .map(|b| Block {
                        instances: instances.drain(..b.len).collect(),
                        supervision: b.supervision,
                    })
                    .collect()
            }
        };
        stages.push(Stage {
            name: entry.name.clone(),
            blocks,
            epochs: entry.epochs,
            shuffle_within: true,
        });
    }
    Ok(Stream { stages })
}
