use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExemplarKind {
    /// Single-channel 8-bit raster, row-major.
    Raster { height: usize, width: usize },
    Vector { dim: usize },
}

impl ExemplarKind {
    /// Number of scalar values per exemplar.
    pub fn values(&self) -> usize {
        match *self {
            ExemplarKind::Raster { height, width } => height * width,
            ExemplarKind::Vector { dim } => dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train = 0,
    Validation = 1,
}

impl Split {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Split::Train),
            1 => Some(Split::Validation),
            _ => None,
        }
    }
}

/// Flat per-class exemplar payload, `count * kind.values()` entries.
#[derive(Clone, Debug, PartialEq)]
pub enum ExemplarData {
    Raster(Vec<u8>),
    Vector(Vec<f32>),
}

impl ExemplarData {
    fn len(&self) -> usize {
        match self {
            ExemplarData::Raster(v) => v.len(),
            ExemplarData::Vector(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassRecord {
    pub id: u32,
    pub novel: bool,
    pub splits: Vec<Split>,
    pub data: ExemplarData,
}

impl ClassRecord {
    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }
}

/// Reference to one exemplar: position of the class in the store and
/// position of the exemplar within the class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExemplarRef {
    pub class: u32,
    pub index: u32,
}

impl ExemplarRef {
    pub fn new(class: usize, index: usize) -> Self {
        Self {
            class: class as u32,
            index: index as u32,
        }
    }
}

/// Class-indexed collection of same-shaped exemplars. Immutable once built.
///
/// Base (non-novel) classes carry dense training labels `0..n_base`, assigned
/// by ascending class id; novel classes carry none.
#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarStore {
    kind: ExemplarKind,
    classes: Vec<ClassRecord>,
    base: Vec<u32>,
    novel: Vec<u32>,
    labels: Vec<Option<u32>>,
    train: Vec<Vec<u32>>,
    validation: Vec<Vec<u32>>,
}

impl ExemplarStore {
    pub fn new(kind: ExemplarKind, classes: Vec<ClassRecord>) -> Result<Self> {
        let per = kind.values();
        if per == 0 {
            return Err(Error::Spec("exemplar shape has zero values".into()));
        }
        for c in &classes {
            let ok = match (&c.data, kind) {
                (ExemplarData::Raster(_), ExemplarKind::Raster { .. }) => true,
                (ExemplarData::Vector(_), ExemplarKind::Vector { .. }) => true,
                _ => false,
            };
            if !ok || c.data.len() != c.splits.len() * per {
                return Err(Error::shape(
                    "exemplar_store",
                    format!("class {} payload does not match {kind:?} x {}", c.id, c.splits.len()),
                ));
            }
        }
        let mut ids: Vec<u32> = classes.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Spec("duplicate class id".into()));
        }
        let mut base: Vec<u32> = (0..classes.len() as u32)
            .filter(|&i| !classes[i as usize].novel)
            .collect();
        base.sort_by_key(|&i| classes[i as usize].id);
        let novel: Vec<u32> = (0..classes.len() as u32)
            .filter(|&i| classes[i as usize].novel)
            .collect();
        let mut labels = alloc::vec![None; classes.len()];
        for (label, &ci) in base.iter().enumerate() {
            labels[ci as usize] = Some(label as u32);
        }
        let pick = |s: Split| -> Vec<Vec<u32>> {
            classes
                .iter()
                .map(|c| {
                    c.splits
                        .iter()
                        .enumerate()
                        .filter(|(_, &t)| t == s)
                        .map(|(i, _)| i as u32)
                        .collect()
                })
                .collect()
        };
        let train = pick(Split::Train);
        let validation = pick(Split::Validation);
        Ok(Self {
            kind,
            classes,
            base,
            novel,
            labels,
            train,
            validation,
        })
    }

    pub fn kind(&self) -> ExemplarKind {
        self.kind
    }

    pub fn classes(&self) -> &[ClassRecord] {
        &self.classes
    }

    pub fn into_classes(self) -> Vec<ClassRecord> {
        self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_exemplars(&self) -> usize {
        self.classes.iter().map(|c| c.len()).sum()
    }

    /// Store positions of base classes, in label order.
    pub fn base_classes(&self) -> &[u32] {
        &self.base
    }

    pub fn novel_classes(&self) -> &[u32] {
        &self.novel
    }

    pub fn label_of(&self, class: u32) -> Option<u32> {
        self.labels.get(class as usize).copied().flatten()
    }

    /// Store position of the base class carrying `label`.
    pub fn class_of_label(&self, label: u32) -> Option<u32> {
        self.base.get(label as usize).copied()
    }

    pub fn train_exemplars(&self, class: u32) -> &[u32] {
        &self.train[class as usize]
    }

    pub fn validation_exemplars(&self, class: u32) -> &[u32] {
        &self.validation[class as usize]
    }

    pub fn split_of(&self, r: ExemplarRef) -> Split {
        self.classes[r.class as usize].splits[r.index as usize]
    }

    /// Writes the exemplar as reals; raster bytes are scaled to `[0, 1]`.
    pub fn write_exemplar<F: Real>(&self, r: ExemplarRef, out: &mut [F]) {
        let per = self.kind.values();
        let start = r.index as usize * per;
        match &self.classes[r.class as usize].data {
            ExemplarData::Raster(b) => {
                for (o, &v) in out.iter_mut().zip(&b[start..start + per]) {
                    *o = F::from_f32(f32::from(v) / 255.0);
                }
            }
            ExemplarData::Vector(v) => {
                for (o, &x) in out.iter_mut().zip(&v[start..start + per]) {
                    *o = F::from_f32(x);
                }
            }
        }
    }

    /// Byte-level equality of two exemplars' payloads.
    pub fn same_bytes(&self, a: ExemplarRef, b: ExemplarRef) -> bool {
        let per = self.kind.values();
        let (sa, sb) = (a.index as usize * per, b.index as usize * per);
        match (&self.classes[a.class as usize].data, &self.classes[b.class as usize].data) {
            (ExemplarData::Raster(x), ExemplarData::Raster(y)) => x[sa..sa + per] == y[sb..sb + per],
            (ExemplarData::Vector(x), ExemplarData::Vector(y)) => x[sa..sa + per]
                .iter()
                .zip(&y[sb..sb + per])
                .all(|(p, q)| p.to_bits() == q.to_bits()),
            _ => false,
        }
    }
}
