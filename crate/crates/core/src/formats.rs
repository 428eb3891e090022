//! Binary exchange formats: frame features, segmentation matrices,
//! precomputed embeddings, centroid checkpoints, plus a thin WAV header
//! reader used to derive stream length for oracle runs.
//!
//! All containers are little-endian with a 4-byte magic.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::clustering::CentroidSet;
use crate::{Error, Result};

const FEATURES_MAGIC: &[u8; 4] = b"SDFE";
const SEGMENTATION_MAGIC: &[u8; 4] = b"SDSG";
const EMBEDDINGS_MAGIC: &[u8; 4] = b"SDEM";
const CHECKPOINT_MAGIC: &[u8; 4] = b"SDCK";

fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(false);
            }
            return Err(Error::BadFormat("truncated record".into()));
        }
        filled += n;
    }
    Ok(true)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn check_magic(r: &mut impl Read, expected: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != expected {
        return Err(Error::BadFormat(format!(
            "bad magic {:?}, expected {:?}",
            m,
            String::from_utf8_lossy(expected)
        )));
    }
    Ok(())
}

/// Frame-feature stream: header (magic, version, dim, frame_step) then
/// f32 rows in time order.
pub struct FeatureFile {
    pub frame_step: f64,
    pub rows: Vec<Vec<f64>>,
}

pub fn write_features(path: &Path, frame_step: f64, rows: &[Vec<f64>]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.len());
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURES_MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&frame_step.to_le_bytes())?;
    for row in rows {
        for &v in row {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureFile> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, FEATURES_MAGIC)?;
    let version = read_u32(&mut r)?;
    if version != 1 {
        return Err(Error::BadFormat(format!("unsupported version {version}")));
    }
    let dim = read_u32(&mut r)? as usize;
    let frame_step = read_f64(&mut r)?;
    let mut rows = Vec::new();
    let mut buf = vec![0u8; dim * 4];
    while read_exact_or_eof(&mut r, &mut buf)? {
        let row = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        rows.push(row);
    }
    Ok(FeatureFile { frame_step, rows })
}

/// Segmentation store: header (magic, version, frames, k_max) then one
/// `F x K_max` f32 block per window in window order.
pub fn write_segmentation(path: &Path, frames: usize, k_max: usize, windows: &[Vec<Vec<f64>>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SEGMENTATION_MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&(frames as u32).to_le_bytes())?;
    w.write_all(&(k_max as u32).to_le_bytes())?;
    for block in windows {
        debug_assert_eq!(block.len(), frames);
        for row in block {
            debug_assert_eq!(row.len(), k_max);
            for &v in row {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_segmentation(path: &Path) -> Result<(usize, Vec<Vec<Vec<f64>>>)> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, SEGMENTATION_MAGIC)?;
    let version = read_u32(&mut r)?;
    if version != 1 {
        return Err(Error::BadFormat(format!("unsupported version {version}")));
    }
    let frames = read_u32(&mut r)? as usize;
    let k_max = read_u32(&mut r)? as usize;
    let mut windows = Vec::new();
    let mut buf = vec![0u8; frames * k_max * 4];
    while read_exact_or_eof(&mut r, &mut buf)? {
        let flat: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let block = flat.chunks_exact(k_max).map(|c| c.to_vec()).collect();
        windows.push(block);
    }
    Ok((k_max, windows))
}

/// Per-window precomputed embeddings: magic, u32 dim, then per window a
/// u32 channel count, the channel ids, and the f32 vectors.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingWindow {
    pub channels: Vec<u32>,
    pub vectors: Vec<Vec<f64>>,
}

pub fn write_embeddings(path: &Path, dim: usize, windows: &[EmbeddingWindow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(EMBEDDINGS_MAGIC)?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for win in windows {
        w.write_all(&(win.channels.len() as u32).to_le_bytes())?;
        for &c in &win.channels {
            w.write_all(&c.to_le_bytes())?;
        }
        for v in &win.vectors {
            debug_assert_eq!(v.len(), dim);
            for &x in v {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<EmbeddingWindow>)> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, EMBEDDINGS_MAGIC)?;
    let dim = read_u32(&mut r)? as usize;
    let mut windows = Vec::new();
    loop {
        let mut b = [0u8; 4];
        if !read_exact_or_eof(&mut r, &mut b)? {
            break;
        }
        let k = u32::from_le_bytes(b) as usize;
        let mut channels = Vec::with_capacity(k);
        for _ in 0..k {
            channels.push(read_u32(&mut r)?);
        }
        let mut vectors = Vec::with_capacity(k);
        for _ in 0..k {
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                let mut fb = [0u8; 4];
                r.read_exact(&mut fb)?;
                v.push(f32::from_le_bytes(fb) as f64);
            }
            vectors.push(v);
        }
        windows.push(EmbeddingWindow { channels, vectors });
    }
    Ok((dim, windows))
}

/// Centroid checkpoint: K, D, sums (f64), counts (u64), labels.
pub fn write_checkpoint(path: &Path, pool: &CentroidSet) -> Result<()> {
    let dim = pool.sums.first().map_or(0, |r| r.len());
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(pool.len() as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for row in &pool.sums {
        for &v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for &c in &pool.counts {
        w.write_all(&c.to_le_bytes())?;
    }
    for label in &pool.labels {
        w.write_all(&(label.len() as u32).to_le_bytes())?;
        w.write_all(label.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<CentroidSet> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, CHECKPOINT_MAGIC)?;
    let k = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    let mut sums = Vec::with_capacity(k);
    for _ in 0..k {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            row.push(read_f64(&mut r)?);
        }
        sums.push(row);
    }
    let mut counts = Vec::with_capacity(k);
    for _ in 0..k {
        counts.push(read_u64(&mut r)?);
    }
    let mut labels = Vec::with_capacity(k);
    for _ in 0..k {
        let len = read_u32(&mut r)? as usize;
        let mut b = vec![0u8; len];
        r.read_exact(&mut b)?;
        labels.push(
            String::from_utf8(b).map_err(|_| Error::BadFormat("label not utf8".into()))?,
        );
    }
    Ok(CentroidSet {
        sums,
        counts,
        labels,
    })
}

/// Duration in seconds of a PCM WAV file, from the header only.
pub fn wav_duration(path: &Path) -> Result<f64> {
    let mut r = BufReader::new(File::open(path)?);
    let mut riff = [0u8; 12];
    r.read_exact(&mut riff)?;
    if &riff[0..4] != b"RIFF" || &riff[8..12] != b"WAVE" {
        return Err(Error::BadFormat("not a RIFF/WAVE file".into()));
    }
    let mut byte_rate: Option<u32> = None;
    loop {
        let mut header = [0u8; 8];
        if !read_exact_or_eof(&mut r, &mut header)? {
            break;
        }
        let id = [header[0], header[1], header[2], header[3]];
        let size = u32::from_le_bytes([header[4], header[5], header[6], header[7]]) as usize;
        match &id {
            b"fmt " => {
                let mut fmt = vec![0u8; size];
                r.read_exact(&mut fmt)?;
                if fmt.len() >= 12 {
                    byte_rate = Some(u32::from_le_bytes([fmt[8], fmt[9], fmt[10], fmt[11]]));
                }
            }
            b"data" => {
                let rate = byte_rate
                    .ok_or_else(|| Error::BadFormat("data chunk before fmt".into()))?;
                if rate == 0 {
                    return Err(Error::BadFormat("zero byte rate".into()));
                }
                return Ok(size as f64 / rate as f64);
            }
            _ => {
                // skip unknown chunk (word aligned)
                let skip = size + (size & 1);
                std::io::copy(&mut r.by_ref().take(skip as u64), &mut std::io::sink())?;
            }
        }
    }
    Err(Error::BadFormat("no data chunk".into()))
}
