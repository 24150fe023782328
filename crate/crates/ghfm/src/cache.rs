//! On-disk cache of design vectors, keyed by a SHA-256 digest of everything
//! they depend on: grid, covariate values, basis and centering curves.
//!
//! Layout (little endian): magic, 32-byte key, `n`, `p`, `L` as `u64`, the
//! `p` gamma blocks as `f64`, a centering flag byte and, if set, `p * m`
//! centering values.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fusion_core::fdata::compute_gamma_centered;
use fusion_core::{compute_gamma, BasisSpec, DesignCache, FunctionalDataset};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GHFMGAM1";

/// Content key of `(dataset covariates, basis, centers)`.
pub fn design_key(
    dataset: &FunctionalDataset,
    basis: &BasisSpec,
    centers: Option<&[Vec<f64>]>,
) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(MAGIC);
    for v in [
        dataset.n(),
        dataset.p(),
        dataset.m(),
        basis.degree,
        basis.spans,
    ] {
        h.update((v as u64).to_le_bytes());
    }
    for v in [dataset.domain_end(), basis.domain_start, basis.domain_end] {
        h.update(v.to_bits().to_le_bytes());
    }
    for v in dataset.grid().iter().chain(dataset.raw_values()) {
        h.update(v.to_bits().to_le_bytes());
    }
    match centers {
        None => h.update([0u8]),
        Some(c) => {
            h.update([1u8]);
            for v in c.iter().flatten() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
    }
    h.finalize().into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn encode(key: &[u8; 32], cache: &DesignCache) -> Vec<u8> {
    let (n, p, l) = (cache.n(), cache.p(), cache.dim());
    let mut out = Vec::with_capacity(8 + 32 + 24 + n * p * l * 8 + 1);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(key);
    for v in [n, p, l] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for j in 0..p {
        for v in cache.block(j) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &cache.centers {
        None => out.push(0),
        Some(c) => {
            out.push(1);
            for v in c.iter().flatten() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, k: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.at..self.at + k)?;
        self.at += k;
        Some(s)
    }
    fn u64(&mut self) -> Option<usize> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?) as usize)
    }
    fn f64s(&mut self, k: usize) -> Option<Vec<f64>> {
        let raw = self.take(k.checked_mul(8)?)?;
        Some(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }
}

/// Decodes a sidecar written for `key`; `None` if it is stale or damaged.
fn decode(bytes: &[u8], key: &[u8; 32], basis: &BasisSpec, m: usize) -> Option<DesignCache> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(8)? != MAGIC || c.take(32)? != key {
        return None;
    }
    let (n, p, l) = (c.u64()?, c.u64()?, c.u64()?);
    if l != basis.dimension() {
        return None;
    }
    let gamma: Vec<Vec<f64>> = (0..p).map(|_| c.f64s(n * l)).collect::<Option<_>>()?;
    let centers = match c.take(1)?[0] {
        0 => None,
        1 => {
            let flat = c.f64s(p * m)?;
            Some(flat.chunks(m).map(<[f64]>::to_vec).collect())
        }
        _ => return None,
    };
    if c.at != bytes.len() {
        return None;
    }
    DesignCache::from_parts(*basis, n, p, gamma, centers).ok()
}

/// Sidecar path for `key` under `dir`.
pub fn sidecar_path(dir: &Path, key: &[u8; 32]) -> PathBuf {
    dir.join(format!("gamma-{}.bin", &hex(key)[..16]))
}

pub fn compute(
    dataset: &FunctionalDataset,
    basis: &BasisSpec,
    centers: Option<Vec<Vec<f64>>>,
) -> Result<DesignCache> {
    Ok(match centers {
        Some(c) => compute_gamma_centered(dataset, basis, c)?,
        None => compute_gamma(dataset, basis)?,
    })
}

/// Loads the design from `dir` if a matching sidecar exists, otherwise
/// computes it and writes the sidecar. `dir = None` disables caching.
pub fn load_or_compute(
    dataset: &FunctionalDataset,
    basis: &BasisSpec,
    centers: Option<Vec<Vec<f64>>>,
    dir: Option<&Path>,
) -> Result<DesignCache> {
    let Some(dir) = dir else {
        return compute(dataset, basis, centers);
    };
    let key = design_key(dataset, basis, centers.as_deref());
    let path = sidecar_path(dir, &key);
    if let Ok(bytes) = fs::read(&path) {
        if let Some(cache) = decode(&bytes, &key, basis, dataset.m()) {
            if cache.n() == dataset.n() && cache.p() == dataset.p() {
                return Ok(cache);
            }
        }
    }
    let cache = compute(dataset, basis, centers)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode(&key, &cache))?;
        f.sync_all()?;
        fs::rename(&tmp, &path)
    };
    write().map_err(|e| Error::io(&path, e))?;
    Ok(cache)
}
