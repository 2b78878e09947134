use alloc::vec::Vec;

use super::store::{ClassRecord, ExemplarData, ExemplarKind, ExemplarStore, Split};
use crate::rng::{purpose, RngStream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SyntheticKind {
    /// Unit-norm class prototype plus isotropic Gaussian noise.
    GaussianPrototype { dim: usize },
    /// Per-class random strokes rendered to a raster with endpoint jitter.
    ProceduralGlyph { height: usize, width: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub kind: SyntheticKind,
    /// Within-class noise: per-coordinate std for prototypes, endpoint
    /// jitter as a fraction of the raster size for glyphs.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 1623,
            per_class: 20,
            kind: SyntheticKind::GaussianPrototype { dim: 32 },
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Spec("need at least 2 classes".into()));
        }
        if self.per_class == 0 {
            return Err(Error::Spec("need at least 1 exemplar per class".into()));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::Spec("noise scale must be finite and non-negative".into()));
        }
        match self.kind {
            SyntheticKind::GaussianPrototype { dim } if dim < 2 => {
                Err(Error::Spec("vector dim must be at least 2".into()))
            }
            SyntheticKind::ProceduralGlyph { height, width } if height < 4 || width < 4 => {
                Err(Error::Spec("glyph rasters must be at least 4x4".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Deterministic synthetic store; every exemplar is tagged `Train` and no
/// class is novel until [`super::split_holdout`] runs.
pub fn gen_synthetic_store(spec: &SyntheticSpec) -> Result<ExemplarStore> {
    spec.validate()?;
    let classes = (0..spec.classes)
        .map(|c| {
            let data = match spec.kind {
                SyntheticKind::GaussianPrototype { dim } => {
                    ExemplarData::Vector(gaussian_class(spec, c, dim))
                }
                SyntheticKind::ProceduralGlyph { height, width } => {
                    ExemplarData::Raster(glyph_class(spec, c, height, width))
                }
            };
            ClassRecord {
                id: c as u32,
                novel: false,
                splits: alloc::vec![Split::Train; spec.per_class],
                data,
            }
        })
        .collect();
    let kind = match spec.kind {
        SyntheticKind::GaussianPrototype { dim } => ExemplarKind::Vector { dim },
        SyntheticKind::ProceduralGlyph { height, width } => ExemplarKind::Raster { height, width },
    };
    ExemplarStore::new(kind, classes)
}

fn gaussian_class(spec: &SyntheticSpec, class: usize, dim: usize) -> Vec<f32> {
    let mut rng = RngStream::derive(spec.seed, &[purpose::STORE, class as u64]);
    let mut proto: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let norm = libm::sqrt(proto.iter().map(|v| v * v).sum::<f64>());
    proto.iter_mut().for_each(|v| *v /= norm);
    let mut out = Vec::with_capacity(dim * spec.per_class);
    for _ in 0..spec.per_class {
        for &p in &proto {
            out.push((p + spec.noise * rng.normal()) as f32);
        }
    }
    out
}

#[derive(Clone, Copy)]
struct Stroke {
    a: (f64, f64),
    b: (f64, f64),
}

fn glyph_class(spec: &SyntheticSpec, class: usize, h: usize, w: usize) -> Vec<u8> {
    let mut rng = RngStream::derive(spec.seed, &[purpose::STORE, class as u64]);
    let n_strokes = 2 + rng.below(3);
    let thickness = 0.03 + 0.02 * rng.uniform();
    let point = |rng: &mut RngStream| (0.15 + 0.7 * rng.uniform(), 0.15 + 0.7 * rng.uniform());
    let strokes: Vec<Stroke> = (0..n_strokes)
        .map(|_| Stroke {
            a: point(&mut rng),
            b: point(&mut rng),
        })
        .collect();
    let mut out = Vec::with_capacity(h * w * spec.per_class);
    for _ in 0..spec.per_class {
        let jittered: Vec<Stroke> = strokes
            .iter()
            .map(|s| {
                let mut j = |p: (f64, f64)| {
                    (
                        p.0 + spec.noise * rng.normal(),
                        p.1 + spec.noise * rng.normal(),
                    )
                };
                Stroke { a: j(s.a), b: j(s.b) }
            })
            .collect();
        render(&jittered, thickness, h, w, &mut out);
    }
    out
}

fn render(strokes: &[Stroke], thickness: f64, h: usize, w: usize, out: &mut Vec<u8>) {
    let px = 1.0 / (h.max(w) as f64);
    for y in 0..h {
        for x in 0..w {
            let p = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            let d = strokes
                .iter()
                .map(|s| segment_distance(p, s.a, s.b))
                .fold(f64::INFINITY, f64::min);
            let v = (1.0 - (d - thickness) / px).clamp(0.0, 1.0);
            out.push((v * 255.0 + 0.5) as u8);
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (p.0 - (a.0 + t * vx), p.1 - (a.1 + t * vy));
    libm::sqrt(dx * dx + dy * dy)
}
