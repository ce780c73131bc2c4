//! Binary dataset files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "CSIF" | version u32
//! config text length u32 | config text (UTF-8, canonical key = value form)
//! seed u64 | positions u32 | stations u32 | pilots u32 | antennas u32
//! per station: channel minima then maxima, 3 + 3 f64
//! split, one byte per position (0 train, 1 test)
//! record offsets, one u64 per position, from the start of the file
//! records
//! CRC-32 of everything above, u32
//! ```
//!
//! A record holds the position (x, y as f64) and, per station, the distance
//! (f64), the LOS ray (delay, gain re/im, angle of arrival; f64) and the
//! clean CSI as interleaved real/imaginary binary32, pilot-major.

use std::path::Path as FsPath;

use num_complex::Complex64;

use super::dataset::{BsRecord, Dataset, Record, Split};
use crate::binio::{Reader, Writer};
use crate::channel::{CsiMatrix, Path};
use crate::config::{Point, ScenarioConfig};
use crate::error::{Error, Result};
use crate::fingerprint::{NormStats, CHANNELS};

pub const DATASET_MAGIC: [u8; 4] = *b"CSIF";
pub const DATASET_VERSION: u32 = 1;

fn record_len(n_bs: usize, n_sc: usize, n_rx: usize) -> usize {
    16 + n_bs * (8 + 32 + n_sc * n_rx * 8)
}

pub fn dataset_to_bytes(ds: &Dataset) -> Vec<u8> {
    let cfg = &ds.config;
    let (n, n_bs, n_sc, n_rx) = (ds.len(), cfg.n_bs, cfg.n_sc_used(), cfg.n_rx);
    let mut w = Writer::default();
    w.bytes(&DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    let text = cfg.to_text();
    w.u32(text.len() as u32);
    w.bytes(text.as_bytes());
    w.u64(ds.seed);
    for v in [n, n_bs, n_sc, n_rx] {
        w.u32(v as u32);
    }
    for st in &ds.norm {
        st.min.iter().chain(&st.max).for_each(|v| w.f64(*v));
    }
    for s in &ds.split {
        w.bytes(&[match s {
            Split::Train => 0,
            Split::Test => 1,
        }]);
    }
    let first = w.len() + 8 * n;
    let rec = record_len(n_bs, n_sc, n_rx);
    for i in 0..n {
        w.u64((first + i * rec) as u64);
    }
    for r in &ds.records {
        w.f64(r.position.x);
        w.f64(r.position.y);
        for bs in &r.per_bs {
            w.f64(bs.distance_m);
            w.f64(bs.los.delay_s);
            w.f64(bs.los.complex_gain.re);
            w.f64(bs.los.complex_gain.im);
            w.f64(bs.los.aoa_rad);
            for e in bs.clean.entries() {
                w.f32(e.re as f32);
                w.f32(e.im as f32);
            }
        }
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

/// Decode a dataset file. Magic and version are checked first, then the
/// length implied by the header (truncation), then the checksum.
pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let text_len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(text_len)?)
        .map_err(|e| Error::Malformed(format!("config header is not UTF-8: {e}")))?;
    let config = ScenarioConfig::parse(text)?;
    let seed = r.u64()?;
    let n = r.u32()? as usize;
    let n_bs = r.u32()? as usize;
    let n_sc = r.u32()? as usize;
    let n_rx = r.u32()? as usize;
    if (n_bs, n_sc, n_rx) != (config.n_bs, config.n_sc_used(), config.n_rx) {
        return Err(Error::Malformed("counts disagree with the stored configuration".into()));
    }
    let header_end = r.position() + n_bs * 2 * CHANNELS * 8 + n + 8 * n;
    let expected = n
        .checked_mul(record_len(n_bs, n_sc, n_rx))
        .and_then(|v| v.checked_add(header_end + 4))
        .ok_or_else(|| Error::Malformed("counts overflow".into()))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: expected - bytes.len(),
            available: 0,
        });
    }
    if bytes.len() > expected {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let body = &bytes[..expected - 4];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut norm = Vec::with_capacity(n_bs);
    for _ in 0..n_bs {
        let mut st = NormStats {
            min: [0.0; CHANNELS],
            max: [0.0; CHANNELS],
        };
        for v in st.min.iter_mut().chain(st.max.iter_mut()) {
            *v = r.f64()?;
        }
        norm.push(st);
    }
    let split = r
        .take(n)?
        .iter()
        .map(|b| match b {
            0 => Ok(Split::Train),
            1 => Ok(Split::Test),
            _ => Err(Error::Malformed(format!("bad split byte {b}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let offsets = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(n);
    for (i, off) in offsets.into_iter().enumerate() {
        let want = header_end + i * record_len(n_bs, n_sc, n_rx);
        if off as usize != want {
            return Err(Error::Malformed(format!("record {i} at offset {off}, expected {want}")));
        }
        r.seek(want)?;
        let position = Point::new(r.f64()?, r.f64()?);
        let mut per_bs = Vec::with_capacity(n_bs);
        for _ in 0..n_bs {
            let distance_m = r.f64()?;
            let los = Path {
                delay_s: r.f64()?,
                complex_gain: Complex64::new(r.f64()?, r.f64()?),
                aoa_rad: r.f64()?,
                is_los: true,
            };
            let entries = (0..n_sc * n_rx)
                .map(|_| Ok(Complex64::new(r.f32()? as f64, r.f32()? as f64)))
                .collect::<Result<Vec<_>>>()?;
            per_bs.push(BsRecord {
                distance_m,
                los,
                clean: CsiMatrix::from_entries(n_sc, n_rx, entries)?,
            });
        }
        records.push(Record { position, per_bs });
    }
    Ok(Dataset {
        config,
        seed,
        records,
        split,
        norm,
    })
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<FsPath>) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<FsPath>) -> Result<Dataset> {
    dataset_from_bytes(&std::fs::read(path)?)
}
