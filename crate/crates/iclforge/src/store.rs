//! EXB1 store files and the P5 graymap directory importer.

use std::collections::HashSet;
use std::path::Path;

use iclforge_core::data::{ClassRecord, ExemplarData, ExemplarKind, ExemplarStore, Split};

use crate::binio::{read_file, sha256_hex, write_file, Reader, Writer};
use crate::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"EXB1";

/// Serialized size of a store: header, per-class records and payloads.
pub fn encoded_len(store: &ExemplarStore) -> usize {
    let (shape, payload) = match store.kind() {
        ExemplarKind::Raster { height, width } => (8, height * width),
        ExemplarKind::Vector { dim } => (4, dim * 4),
    };
    4 + 1 + shape + 4 + store.num_classes() * 9 + store.num_exemplars() * (1 + payload)
}

pub fn encode_store(store: &ExemplarStore) -> Vec<u8> {
    let mut w = Writer {
        buf: Vec::with_capacity(encoded_len(store)),
    };
    w.bytes(STORE_MAGIC);
    match store.kind() {
        ExemplarKind::Raster { height, width } => {
            w.u8(0);
            w.u32(height as u32);
            w.u32(width as u32);
        }
        ExemplarKind::Vector { dim } => {
            w.u8(1);
            w.u32(dim as u32);
        }
    }
    let per = store.kind().values();
    w.u32(store.num_classes() as u32);
    for c in store.classes() {
        w.u32(c.id);
        w.u32(c.len() as u32);
        w.u8(u8::from(c.novel));
        for (i, s) in c.splits.iter().enumerate() {
            w.u8(*s as u8);
            match &c.data {
                ExemplarData::Raster(b) => w.bytes(&b[i * per..(i + 1) * per]),
                ExemplarData::Vector(v) => w.f32s(&v[i * per..(i + 1) * per]),
            }
        }
    }
    w.buf
}

pub fn decode_store(bytes: &[u8], path: &Path) -> Result<ExemplarStore> {
    let mut r = Reader::new(bytes, path, "EXB1");
    r.magic(STORE_MAGIC)?;
    let at = r.pos();
    let kind = match r.u8("kind")? {
        0 => {
            let height = r.u32("height")? as usize;
            let width = r.u32("width")? as usize;
            ExemplarKind::Raster { height, width }
        }
        1 => ExemplarKind::Vector {
            dim: r.u32("dim")? as usize,
        },
        k => return Err(r.error_at(at, format!("unknown kind byte {k}"))),
    };
    let per = kind.values();
    if per == 0 {
        return Err(r.error_at(at + 1, "zero-sized exemplar shape"));
    }
    let n = r.u32("class count")? as usize;
    let mut classes = Vec::with_capacity(n.min(1 << 16));
    let mut seen = HashSet::new();
    for _ in 0..n {
        let at = r.pos();
        let id = r.u32("class id")?;
        if !seen.insert(id) {
            return Err(r.error_at(at, format!("duplicate class id {id}")));
        }
        let count = r.u32("exemplar count")? as usize;
        let at = r.pos();
        let novel = match r.u8("novel flag")? {
            0 => false,
            1 => true,
            b => return Err(r.error_at(at, format!("novel flag {b}"))),
        };
        let stride = 1 + match kind {
            ExemplarKind::Raster { .. } => per,
            ExemplarKind::Vector { .. } => per * 4,
        };
        if r.remaining() < count.saturating_mul(stride) {
            return Err(r.error_at(
                r.pos(),
                format!("truncated payload: class {id} needs {} bytes, {} left", count * stride, r.remaining()),
            ));
        }
        let mut splits = Vec::with_capacity(count);
        let mut data = match kind {
            ExemplarKind::Raster { .. } => ExemplarData::Raster(Vec::with_capacity(count * per)),
            ExemplarKind::Vector { .. } => ExemplarData::Vector(Vec::with_capacity(count * per)),
        };
        for _ in 0..count {
            let at = r.pos();
            let tag = r.u8("split tag")?;
            splits.push(Split::from_byte(tag).ok_or_else(|| r.error_at(at, format!("split tag {tag}")))?);
            match &mut data {
                ExemplarData::Raster(b) => b.extend_from_slice(r.bytes(per, "raster payload")?),
                ExemplarData::Vector(v) => v.extend(r.f32s(per, "vector payload")?),
            }
        }
        classes.push(ClassRecord {
            id,
            novel,
            splits,
            data,
        });
    }
    r.finish()?;
    Ok(ExemplarStore::new(kind, classes)?)
}

pub fn save_store(store: &ExemplarStore, path: &Path) -> Result<String> {
    let bytes = encode_store(store);
    write_file(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// Loads a store and returns it with the SHA-256 of the file contents.
pub fn load_store(path: &Path) -> Result<(ExemplarStore, String)> {
    let bytes = read_file(path)?;
    let store = decode_store(&bytes, path)?;
    Ok((store, sha256_hex(&bytes)))
}

pub fn store_hash(store: &ExemplarStore) -> String {
    sha256_hex(&encode_store(store))
}

/// Parsed binary portable graymap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    /// Row-major, rescaled to a maximum of 255.
    pub pixels: Vec<u8>,
}

pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Graymap> {
    let err = |offset: usize, detail: String| Error::Format {
        path: path.to_path_buf(),
        what: "P5",
        offset: offset as u64,
        detail,
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(err(0, "bad magic, expected P5".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, f) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let name = ["width", "height", "maxval"][k];
            return Err(err(start, format!("expected {name}")));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| err(start, "header value out of range".into()))?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err(pos, "expected whitespace after maxval".into()));
    }
    pos += 1;
    if width == 0 || height == 0 {
        return Err(err(2, "zero-sized image".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(err(2, format!("maxval {maxval} is not 8-bit")));
    }
    let n = width * height;
    if bytes.len() - pos < n {
        return Err(err(pos, format!("truncated raster: need {n} bytes, {} left", bytes.len() - pos)));
    }
    let raw = &bytes[pos..pos + n];
    let pixels = if maxval == 255 {
        raw.to_vec()
    } else {
        raw.iter()
            .map(|&v| ((u32::from(v.min(maxval as u8)) * 255 + maxval as u32 / 2) / maxval as u32) as u8)
            .collect()
    };
    Ok(Graymap {
        width,
        height,
        pixels,
    })
}

pub fn write_pgm(path: &Path, img: &Graymap) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.pixels);
    write_file(path, &bytes)
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::fs::DirEntry>> {
    let mut v = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    v.sort_by_key(|e| e.file_name());
    Ok(v)
}

/// Builds a store from one subdirectory per class of `.pgm` files.
///
/// Classes take ids `0..` in lexicographic directory order; every exemplar
/// is a non-novel training exemplar. All images must share one size.
pub fn import_pgm_dir(dir: &Path) -> Result<ExemplarStore> {
    let mut shape = None;
    let mut classes = Vec::new();
    for entry in sorted_entries(dir)? {
        let class_dir = entry.path();
        if !class_dir.is_dir() {
            continue;
        }
        let mut pixels = Vec::new();
        let mut count = 0;
        for file in sorted_entries(&class_dir)? {
            let path = file.path();
            if !path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
                continue;
            }
            let img = parse_pgm(&read_file(&path)?, &path)?;
            match shape {
                None => shape = Some((img.height, img.width)),
                Some(s) if s != (img.height, img.width) => {
                    return Err(Error::Format {
                        path,
                        what: "P5",
                        offset: 0,
                        detail: format!("shape mismatch: {}x{} but store is {}x{}", img.height, img.width, s.0, s.1),
                    });
                }
                Some(_) => {}
            }
            pixels.extend_from_slice(&img.pixels);
            count += 1;
        }
        if count == 0 {
            return Err(Error::Config(format!("class directory {} holds no .pgm files", class_dir.display())));
        }
        classes.push(ClassRecord {
            id: classes.len() as u32,
            novel: false,
            splits: vec![Split::Train; count],
            data: ExemplarData::Raster(pixels),
        });
    }
    let Some((height, width)) = shape else {
        return Err(Error::Config(format!("{} holds no class directories", dir.display())));
    };
    Ok(ExemplarStore::new(ExemplarKind::Raster { height, width }, classes)?)
}
