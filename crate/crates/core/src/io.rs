//! File formats: binary PPM images, "ILTF" raw tensors, and the named-tensor
//! weight container (ILTF payload plus JSON manifest).

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

const ILTF_MAGIC: &[u8; 4] = b"ILTF";

// ── PPM (P6, maxval 255) ───────────────────────────────────────────

pub fn write_ppm<T: Scalar>(img: &Image<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(img.width() * img.height() * 3 + 32);
    buf.extend_from_slice(format!("P6\n{} {}\n255\n", img.width(), img.height()).as_bytes());
    let half = lit::<T>(0.5);
    let hi = lit::<T>(255.0);
    for v in img.pixels() {
        let clamped = (*v + half).floor().max(T::zero()).min(hi);
        buf.push(clamped.to_u8().unwrap_or(255));
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_ppm<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format(path, start as u64, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P6" {
        return Err(Error::format(path, 0, "not a P6 PPM"));
    }
    let w: usize = token(&mut pos)?
        .parse()
        .map_err(|_| Error::format(path, pos as u64, "bad width"))?;
    let h: usize = token(&mut pos)?
        .parse()
        .map_err(|_| Error::format(path, pos as u64, "bad height"))?;
    let maxval: usize = token(&mut pos)?
        .parse()
        .map_err(|_| Error::format(path, pos as u64, "bad maxval"))?;
    if maxval != 255 {
        return Err(Error::format(path, pos as u64, "only maxval 255 supported"));
    }
    pos += 1; // single whitespace after maxval
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated pixel data: need {} bytes", need),
        ));
    }
    let pixels = bytes[pos..pos + need]
        .iter()
        .map(|b| lit::<T>(*b as f64))
        .collect();
    Image::new(w, h, pixels)
}

// ── ILTF raw tensors ───────────────────────────────────────────────

/// Serializes one tensor as: magic "ILTF", u32 rank, u32 extents,
/// little-endian f64 payload.
pub fn iltf_bytes<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 4 * t.shape().len() + 8 * t.len());
    buf.extend_from_slice(ILTF_MAGIC);
    buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_f64().expect("scalar fits f64").to_le_bytes());
    }
    buf
}

/// Parses one ILTF record starting at `offset`; returns the tensor and the
/// offset just past it.
pub fn iltf_parse<T: Scalar>(bytes: &[u8], offset: usize, path: &Path) -> Result<(Tensor<T>, usize)> {
    let take = |at: usize, n: usize| -> Result<&[u8]> {
        bytes.get(at..at + n).ok_or_else(|| {
            Error::format(
                path,
                bytes.len() as u64,
                format!("truncated: need {} bytes at offset {}", n, at),
            )
        })
    };
    if take(offset, 4)? != ILTF_MAGIC {
        return Err(Error::format(path, offset as u64, "bad ILTF magic"));
    }
    let rank = u32::from_le_bytes(take(offset + 4, 4)?.try_into().unwrap()) as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut at = offset + 8;
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(take(at, 4)?.try_into().unwrap()) as usize);
        at += 4;
    }
    let numel: usize = shape.iter().product();
    let payload = take(at, numel * 8)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| lit::<T>(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let t = Tensor::from_vec(shape, data)
        .map_err(|e| Error::format(path, at as u64, e.to_string()))?;
    Ok((t, at + numel * 8))
}

pub fn write_iltf<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    fs::write(path, iltf_bytes(t)).map_err(|e| Error::io(path, e))
}

pub fn read_iltf<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, end) = iltf_parse(&bytes, 0, path)?;
    if end != bytes.len() {
        return Err(Error::format(path, end as u64, "trailing bytes after tensor"));
    }
    Ok(t)
}

// ── Named-tensor container ─────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    tensors: BTreeMap<String, ManifestEntry>,
    sha256: String,
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Writes named tensors as concatenated ILTF records at `path` plus a JSON
/// manifest (shapes, byte offsets, payload checksum) at `path.json`.
pub fn save_tensors<T: Scalar>(tensors: &[(&str, &Tensor<T>)], path: &Path) -> Result<()> {
    let mut payload = Vec::new();
    let mut manifest = Manifest { tensors: BTreeMap::new(), sha256: String::new() };
    for (name, t) in tensors {
        manifest.tensors.insert(
            name.to_string(),
            ManifestEntry { shape: t.shape().to_vec(), offset: payload.len() },
        );
        payload.extend_from_slice(&iltf_bytes(t));
    }
    manifest.sha256 = hex_digest(&payload);
    fs::write(path, &payload).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let json = serde_json::to_string_pretty(&manifest)?;
    let mut f = fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
    f.write_all(json.as_bytes()).map_err(|e| Error::io(&mpath, e))?;
    f.write_all(b"\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

pub fn load_tensors<T: Scalar>(path: &Path) -> Result<BTreeMap<String, Tensor<T>>> {
    let mpath = manifest_path(path);
    let mut json = String::new();
    fs::File::open(&mpath)
        .and_then(|mut f| f.read_to_string(&mut json))
        .map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&json)?;
    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
    if hex_digest(&payload) != manifest.sha256 {
        return Err(Error::format(path, 0, "payload checksum mismatch"));
    }
    let mut out = BTreeMap::new();
    for (name, entry) in &manifest.tensors {
        let (t, _) = iltf_parse::<T>(&payload, entry.offset, path)?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::format(
                path,
                entry.offset as u64,
                format!(
                    "tensor '{}': manifest shape {:?} vs stored {:?}",
                    name,
                    entry.shape,
                    t.shape()
                ),
            ));
        }
        out.insert(name.clone(), t);
    }
    Ok(out)
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{:02x}", b)).collect()
}
