//! Model checkpoints: concatenated tensor records plus a CSV index.
//!
//! Each parameter is stored as one tensor record (shape padded with
//! leading 1s to rank 4); the sidecar index lists `name,shape,offset`
//! where `offset` is the record's byte position in the blob.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Result, VlucError};
use crate::rasterize::{read_vluc, write_vluc, VideoTensor};

use super::Model;

fn pad4(shape: &[usize]) -> Result<[usize; 4]> {
    if shape.len() > 4 {
        return Err(VlucError::shape(format!(
            "cannot checkpoint a rank-{} tensor",
            shape.len()
        )));
    }
    let mut out = [1usize; 4];
    out[4 - shape.len()..].copy_from_slice(shape);
    Ok(out)
}

pub fn save_checkpoint(model: &mut dyn Model, blob_path: &Path, index_path: &Path) -> Result<()> {
    let mut blob = BufWriter::new(File::create(blob_path)?);
    let mut index = BufWriter::new(File::create(index_path)?);
    writeln!(index, "name,shape,offset")?;
    let mut offset = 0u64;
    for param in model.params_mut() {
        let [t, h, w, c] = pad4(param.value.shape())?;
        let record = VideoTensor {
            t,
            h,
            w,
            c,
            data: param.value.data().to_vec(),
            start_timestamp: 0,
            frame_interval: 1,
            channel_labels: Vec::new(),
        };
        let mut bytes = Vec::new();
        write_vluc(&record, &mut bytes)?;
        blob.write_all(&bytes)?;
        let shape_str = param
            .value
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        writeln!(index, "{},{},{}", param.name, shape_str, offset)?;
        offset += bytes.len() as u64;
    }
    blob.flush()?;
    index.flush()?;
    Ok(())
}

/// Restore parameter values by name. Every model parameter must be present
/// in the checkpoint with a matching shape.
pub fn load_checkpoint(model: &mut dyn Model, blob_path: &Path, index_path: &Path) -> Result<()> {
    let mut blob = File::open(blob_path)?;
    let index = BufReader::new(File::open(index_path)?);
    let mut entries = std::collections::BTreeMap::new();
    for (lineno, line) in index.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim() != "name,shape,offset" {
                return Err(VlucError::data("checkpoint index header mismatch"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(3, ',').collect();
        if parts.len() != 3 {
            return Err(VlucError::data(format!(
                "checkpoint index line {} is malformed",
                lineno + 1
            )));
        }
        let offset: u64 = parts[2]
            .trim()
            .parse()
            .map_err(|_| VlucError::data(format!("bad offset on index line {}", lineno + 1)))?;
        entries.insert(parts[0].to_string(), offset);
    }
    for param in model.params_mut() {
        let offset = *entries
            .get(&param.name)
            .ok_or_else(|| VlucError::data(format!("checkpoint is missing '{}'", param.name)))?;
        blob.seek(SeekFrom::Start(offset))?;
        let record = read_vluc(&mut blob)?;
        if record.data.len() != param.value.len() {
            return Err(VlucError::shape(format!(
                "checkpoint tensor '{}' has {} values, model expects {}",
                param.name,
                record.data.len(),
                param.value.len()
            )));
        }
        param.value.data_mut().copy_from_slice(&record.data);
    }
    Ok(())
}

/// Byte-for-byte read of a file (used by determinism checks).
pub fn file_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}
