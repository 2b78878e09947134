//! ICLS frozen evaluation suites.
//!
//! Episodes store exemplar references by class id (not store position) and
//! are resolved against a store whose hash is recorded in the header.

use std::collections::HashMap;
use std::path::Path;

use iclforge_core::data::{ExemplarRef, ExemplarStore};
use iclforge_core::seq::{Episode, EpisodeKind, EvalSuite, EvalTask, Provenance, SuiteKind};

use crate::binio::{read_file, sha256_hex, write_file, Reader, Writer};
use crate::{Error, Result};

pub const SUITE_MAGIC: &[u8; 4] = b"ICLS";
pub const SUITE_VERSION: u32 = 1;

/// Metric split name of a suite: `icl-<k>w<n>s` or `iwl-acc`.
pub fn split_name(kind: SuiteKind) -> String {
    match kind {
        SuiteKind::Icl(t) => t.split_name(),
        SuiteKind::Iwl { .. } => "iwl-acc".into(),
    }
}

fn class_id(store: &ExemplarStore, pos: u32) -> u32 {
    store.classes()[pos as usize].id
}

pub fn encode_suite(suite: &EvalSuite, store: &ExemplarStore, store_hash: &str) -> Result<Vec<u8>> {
    let hash = hex::decode(store_hash).map_err(|_| Error::Config(format!("store hash {store_hash:?} is not hex")))?;
    let mut w = Writer::default();
    w.bytes(SUITE_MAGIC);
    w.u32(SUITE_VERSION);
    w.u32(hash.len() as u32);
    w.bytes(&hash);
    match suite.kind {
        SuiteKind::Icl(t) => {
            w.u8(0);
            w.u32(t.ways as u32);
            w.u32(t.shots as u32);
        }
        SuiteKind::Iwl { pairs } => {
            w.u8(1);
            w.u32(pairs as u32);
            w.u32(0);
        }
    }
    w.u64(suite.seed);
    w.u32(suite.episodes.len() as u32);
    let exemplar = |w: &mut Writer, r: ExemplarRef| {
        w.u32(class_id(store, r.class));
        w.u32(r.index);
    };
    for ep in &suite.episodes {
        w.u8(ep.provenance.kind as u8);
        w.u8(u8::from(ep.provenance.swapped) | u8::from(ep.provenance.inst_copy) << 1);
        w.u32(ep.context.len() as u32);
        for &(r, label) in &ep.context {
            exemplar(&mut w, r);
            w.u32(label);
        }
        exemplar(&mut w, ep.query);
        w.u32(ep.target);
        w.u32(ep.remap.len() as u32);
        for &(class, label) in &ep.remap {
            w.u32(class_id(store, class));
            w.u32(label);
        }
    }
    Ok(w.buf)
}

/// Header of a suite file: kind, seed and the hash of the store it
/// references.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuiteHeader {
    pub kind: SuiteKind,
    pub seed: u64,
    pub store_hash: String,
    pub count: usize,
}

fn read_header(r: &mut Reader) -> Result<SuiteHeader> {
    r.magic(SUITE_MAGIC)?;
    let version = r.u32("version")?;
    if version != SUITE_VERSION {
        return Err(r.error_at(4, format!("unsupported version {version}")));
    }
    let n = r.u32("hash length")? as usize;
    if n > 64 {
        return Err(r.error_at(8, format!("hash length {n}")));
    }
    let store_hash = hex::encode(r.bytes(n, "store hash")?);
    let at = r.pos();
    let tag = r.u8("suite kind")?;
    let a = r.u32("suite shape")? as usize;
    let b = r.u32("suite shape")? as usize;
    let kind = match tag {
        0 if a > 0 && b > 0 => SuiteKind::Icl(EvalTask { ways: a, shots: b }),
        1 if a > 0 => SuiteKind::Iwl { pairs: a },
        _ => return Err(r.error_at(at, format!("bad suite kind {tag} ({a}, {b})"))),
    };
    let seed = r.u64("seed")?;
    let count = r.u32("episode count")? as usize;
    Ok(SuiteHeader {
        kind,
        seed,
        store_hash,
        count,
    })
}

/// Decodes a suite, resolving class ids against `store` after checking that
/// the suite was built from a store with hash `store_hash`.
pub fn decode_suite(bytes: &[u8], path: &Path, store: &ExemplarStore, store_hash: &str) -> Result<EvalSuite> {
    let mut r = Reader::new(bytes, path, "ICLS");
    let header = read_header(&mut r)?;
    if header.store_hash != store_hash {
        return Err(Error::HashMismatch {
            what: format!("store referenced by suite {}", path.display()),
            expected: header.store_hash,
            found: store_hash.to_string(),
        });
    }
    let positions: HashMap<u32, u32> = store
        .classes()
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id, i as u32))
        .collect();
    let class = |r: &mut Reader, at: usize| -> Result<u32> {
        let id = r.u32("class id")?;
        positions
            .get(&id)
            .copied()
            .ok_or_else(|| r.error_at(at, format!("class id {id} not in store")))
    };
    let exemplar = |r: &mut Reader| -> Result<ExemplarRef> {
        let at = r.pos();
        let c = class(r, at)?;
        let index = r.u32("exemplar index")?;
        if index as usize >= store.classes()[c as usize].len() {
            return Err(r.error_at(at, format!("exemplar {index} out of range")));
        }
        Ok(ExemplarRef { class: c, index })
    };
    let pairs = header.kind.pairs();
    let mut episodes = Vec::with_capacity(header.count.min(1 << 20));
    for _ in 0..header.count {
        let at = r.pos();
        let kind = EpisodeKind::from_byte(r.u8("episode kind")?).ok_or_else(|| r.error_at(at, "bad episode kind"))?;
        let flags = r.u8("flags")?;
        let n = r.u32("context length")? as usize;
        if n != pairs {
            return Err(r.error_at(at, format!("episode has {n} pairs, suite expects {pairs}")));
        }
        let mut context = Vec::with_capacity(n);
        for _ in 0..n {
            let e = exemplar(&mut r)?;
            context.push((e, r.u32("label")?));
        }
        let query = exemplar(&mut r)?;
        let target = r.u32("target")?;
        let m = r.u32("remap length")? as usize;
        if m > n + 1 {
            return Err(r.error_at(at, format!("remap of {m} classes")));
        }
        let mut remap = Vec::with_capacity(m);
        for _ in 0..m {
            let at = r.pos();
            remap.push((class(&mut r, at)?, r.u32("remap label")?));
        }
        episodes.push(Episode {
            context,
            query,
            target,
            provenance: Provenance {
                kind,
                swapped: flags & 1 != 0,
                inst_copy: flags & 2 != 0,
            },
            remap,
        });
    }
    r.finish()?;
    Ok(EvalSuite {
        kind: header.kind,
        seed: header.seed,
        episodes,
    })
}

pub fn save_suite(suite: &EvalSuite, store: &ExemplarStore, store_hash: &str, path: &Path) -> Result<String> {
    let bytes = encode_suite(suite, store, store_hash)?;
    write_file(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn read_suite_header(path: &Path) -> Result<SuiteHeader> {
    let bytes = read_file(path)?;
    read_header(&mut Reader::new(&bytes, path, "ICLS"))
}

/// Loads a suite and returns it with the SHA-256 of the file contents.
pub fn load_suite(path: &Path, store: &ExemplarStore, store_hash: &str) -> Result<(EvalSuite, String)> {
    let bytes = read_file(path)?;
    let suite = decode_suite(&bytes, path, store, store_hash)?;
    Ok((suite, sha256_hex(&bytes)))
}
