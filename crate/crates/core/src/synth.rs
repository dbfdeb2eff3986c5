//! Procedurally rendered, exactly disentangled face-like dataset.
//!
//! Identity-defining geometry (face shape, skin tone, eye spacing/size, mouth
//! curve) is controlled by class factors; pose proxy (translation, rotation,
//! scale), expression and background texture are content factors. Rendering
//! is a pure function of the two factor sets, and every synthetic image
//! carries its generating factors, so the class/content oracles are exact
//! lookups.
//!
//! The module also ingests external identity-labeled image folders
//! (`<root>/<identity>/<files>`), which carry no latent codes.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::types::{LabeledImage, LatentPair, Mask};

/// Index constants into [`ClassParams`].
pub const CLASS_DIM: usize = 8;
/// Index constants into [`ContentParams`].
pub const CONTENT_DIM: usize = 8;

/// Identity-defining factors: `[face_rx, face_ry, skin_r, skin_g, skin_b,
/// eye_spacing, eye_size, mouth_curve]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams(pub [f32; CLASS_DIM]);

/// Content factors: `[shift_x, shift_y, rotation, scale, expression,
/// bg_a, bg_b, bg_c]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentParams(pub [f32; CONTENT_DIM]);

impl ClassParams {
    pub fn to_code(&self) -> Vec<f32> {
        self.0.to_vec()
    }
    pub fn from_code(code: &[f32]) -> Result<Self> {
        let arr: [f32; CLASS_DIM] = code
            .try_into()
            .map_err(|_| Error::Dataset(format!("class code must have dim {CLASS_DIM}")))?;
        Ok(Self(arr))
    }
}

impl ContentParams {
    pub fn to_code(&self) -> Vec<f32> {
        self.0.to_vec()
    }
    pub fn from_code(code: &[f32]) -> Result<Self> {
        let arr: [f32; CONTENT_DIM] = code
            .try_into()
            .map_err(|_| Error::Dataset(format!("content code must have dim {CONTENT_DIM}")))?;
        Ok(Self(arr))
    }
}

/// Inclusive parameter range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorRange {
    pub lo: f32,
    pub hi: f32,
}

impl FactorRange {
    pub fn new(lo: f32, hi: f32) -> Self {
        Self { lo, hi }
    }
    pub fn contains(&self, v: f32) -> bool {
        v >= self.lo && v <= self.hi
    }
    pub fn sample(&self, rng: &mut impl Rng) -> f32 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

/// Factor ranges and image geometry of the synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFactorSpec {
    /// (H, W, C); the renderer requires C = 3.
    pub image_size: (usize, usize, usize),
    pub class_ranges: [FactorRange; CLASS_DIM],
    pub content_ranges: [FactorRange; CONTENT_DIM],
    /// Rectangle where the eyes render for centered content; fixed-location
    /// eye attacks anchor here.
    pub eye_region: Rect,
}

impl SyntheticFactorSpec {
    /// Desk-scale default at the given square image size.
    pub fn default_at(size: usize) -> Self {
        let h = size;
        let w = size;
        let eye_h = (3 * h + 8) / 16; // 12 at 64
        let eye_w = w / 2;
        let row_center = 0.4 * h as f32;
        let row0 = (row_center - eye_h as f32 / 2.0).round() as usize;
        Self {
            image_size: (h, w, 3),
            class_ranges: [
                FactorRange::new(0.26, 0.40),  // face_rx
                FactorRange::new(0.32, 0.46),  // face_ry
                FactorRange::new(0.45, 0.95),  // skin_r
                FactorRange::new(0.30, 0.85),  // skin_g
                FactorRange::new(0.25, 0.80),  // skin_b
                FactorRange::new(0.09, 0.15),  // eye_spacing
                FactorRange::new(0.030, 0.050), // eye_size
                FactorRange::new(-0.6, 0.6),   // mouth_curve
            ],
            content_ranges: [
                FactorRange::new(-0.06, 0.06), // shift_x
                FactorRange::new(-0.06, 0.06), // shift_y
                FactorRange::new(-0.25, 0.25), // rotation
                FactorRange::new(0.88, 1.12),  // scale
                FactorRange::new(-0.5, 0.5),   // expression
                FactorRange::new(0.0, 1.0),    // bg_a
                FactorRange::new(0.0, 1.0),    // bg_b
                FactorRange::new(0.0, 1.0),    // bg_c
            ],
            eye_region: Rect {
                row0,
                col0: (w - eye_w) / 2,
                height: eye_h,
                width: eye_w,
            },
        }
    }

    pub fn validate_class(&self, p: &ClassParams) -> Result<()> {
        for (i, (&v, r)) in p.0.iter().zip(&self.class_ranges).enumerate() {
            if !r.contains(v) {
                return Err(Error::Dataset(format!(
                    "class factor {i} = {v} outside [{}, {}]",
                    r.lo, r.hi
                )));
            }
        }
        Ok(())
    }

    pub fn validate_content(&self, p: &ContentParams) -> Result<()> {
        for (i, (&v, r)) in p.0.iter().zip(&self.content_ranges).enumerate() {
            if !r.contains(v) {
                return Err(Error::Dataset(format!(
                    "content factor {i} = {v} outside [{}, {}]",
                    r.lo, r.hi
                )));
            }
        }
        Ok(())
    }

    pub fn sample_class(&self, rng: &mut impl Rng) -> ClassParams {
        let mut p = [0f32; CLASS_DIM];
        for (v, r) in p.iter_mut().zip(&self.class_ranges) {
            *v = r.sample(rng);
        }
        ClassParams(p)
    }

    pub fn sample_content(&self, rng: &mut impl Rng) -> ContentParams {
        let mut p = [0f32; CONTENT_DIM];
        for (v, r) in p.iter_mut().zip(&self.content_ranges) {
            *v = r.sample(rng);
        }
        ContentParams(p)
    }

    /// Stable hash of the spec, recorded in dataset manifests.
    pub fn hash_hex(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn smoothstep(edge0: f32, edge1: f32, x: f32) -> f32 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Renders an image from factors. Pure and deterministic; the returned image
/// carries the factors as latent codes and the label 0 (callers relabel).
pub fn render(
    class: &ClassParams,
    content: &ContentParams,
    spec: &SyntheticFactorSpec,
) -> Result<LabeledImage> {
    spec.validate_class(class)?;
    spec.validate_content(content)?;
    let (h, w, c) = spec.image_size;
    if c != 3 {
        return Err(Error::Dataset("renderer requires 3 channels".into()));
    }
    let [rx, ry, skin_r, skin_g, skin_b, eye_sp, eye_sz, mouth_curve] = class.0;
    let [shift_x, shift_y, rot, scale, expr, bg_a, bg_b, bg_c] = content.0;
    let (sin_t, cos_t) = rot.sin_cos();
    let tau = std::f32::consts::TAU;
    let aa = 1.6 / h.min(w) as f32; // anti-alias width in face units

    let mut pixels = Array3::zeros((h, w, 3));
    for r in 0..h {
        for col in 0..w {
            let xf = (col as f32 + 0.5) / w as f32;
            let yf = (r as f32 + 0.5) / h as f32;

            // Background texture (image frame, independent of the face pose).
            let val = 0.5
                + 0.25 * (tau * ((1.5 + 4.0 * bg_a) * xf + (1.5 + 4.0 * bg_b) * yf)).sin()
                + 0.25 * (tau * (2.0 + 4.0 * bg_c) * (xf - yf)).sin();
            let val = val.clamp(0.0, 1.0);
            let mut px = [
                0.30 + 0.45 * val,
                0.35 + 0.45 * val,
                0.45 + 0.45 * val,
            ];

            // Face frame coordinates.
            let u0 = xf - 0.5 - shift_x;
            let v0 = yf - 0.5 - shift_y;
            let u = (u0 * cos_t + v0 * sin_t) / scale;
            let v = (-u0 * sin_t + v0 * cos_t) / scale;
            let e = (u / rx) * (u / rx) + (v / ry) * (v / ry);

            if e < 1.3 {
                let shade = 1.0 - 0.18 * e.min(1.0);
                let mut face = [skin_r * shade, skin_g * shade, skin_b * shade];

                // Eyes: sclera disc with pupil.
                for side in [-1.0f32, 1.0] {
                    let du = u - side * eye_sp;
                    let dv = v + 0.10;
                    let d = (du * du + dv * dv).sqrt();
                    let sclera = eye_sz * 1.45;
                    let pupil = eye_sz * 0.75;
                    let s_mix = 1.0 - smoothstep(sclera - aa, sclera + aa, d);
                    let p_mix = 1.0 - smoothstep(pupil - aa, pupil + aa, d);
                    for (f, (sc, pc)) in face.iter_mut().zip([
                        (0.93f32, 0.09f32),
                        (0.93, 0.07),
                        (0.95, 0.10),
                    ]) {
                        *f = *f * (1.0 - s_mix) + sc * s_mix;
                        *f = *f * (1.0 - p_mix) + pc * p_mix;
                    }
                }

                // Mouth: curved band below center.
                let hw = 0.10;
                if u.abs() <= hw + aa {
                    let t_u = (u / hw).clamp(-1.0, 1.0);
                    let vm = 0.16 + mouth_curve * 0.10 * (t_u * t_u - 0.5);
                    let th = 0.018 * (1.0 + 0.5 * expr);
                    let dist = (v - vm).abs();
                    let m_mix = (1.0 - smoothstep(th - aa, th + aa, dist))
                        * (1.0 - smoothstep(hw - aa, hw + aa, u.abs()));
                    for (f, mc) in face.iter_mut().zip([0.55f32, 0.18, 0.20]) {
                        *f = *f * (1.0 - m_mix) + mc * m_mix;
                    }
                }

                // Blend face over background with an anti-aliased rim.
                let alpha = 1.0 - smoothstep(1.0, 1.0 + 4.0 * aa, e);
                for (p, f) in px.iter_mut().zip(face) {
                    *p = *p * (1.0 - alpha) + f * alpha;
                }
            }

            for ch in 0..3 {
                pixels[(r, col, ch)] = px[ch].clamp(0.0, 1.0);
            }
        }
    }

    Ok(LabeledImage {
        pixels,
        identity: 0,
        latents: Some(LatentPair::new(class.to_code(), content.to_code())),
    })
}

/// Identity-bearing support of a rendered face: the (hard) interior of the
/// face ellipse under the given content pose.
pub fn foreground_mask(
    class: &ClassParams,
    content: &ContentParams,
    spec: &SyntheticFactorSpec,
) -> Mask {
    let (h, w, _) = spec.image_size;
    let [rx, ry, ..] = class.0;
    let [shift_x, shift_y, rot, scale, ..] = content.0;
    let (sin_t, cos_t) = rot.sin_cos();
    let mut grid = ndarray::Array2::zeros((h, w));
    for r in 0..h {
        for col in 0..w {
            let xf = (col as f32 + 0.5) / w as f32;
            let yf = (r as f32 + 0.5) / h as f32;
            let u0 = xf - 0.5 - shift_x;
            let v0 = yf - 0.5 - shift_y;
            let u = (u0 * cos_t + v0 * sin_t) / scale;
            let v = (-u0 * sin_t + v0 * cos_t) / scale;
            let e = (u / rx) * (u / rx) + (v / ry) * (v / ry);
            if e <= 1.0 {
                grid[(r, col)] = 1;
            }
        }
    }
    Mask::new(grid).expect("binary grid")
}

/// Ground-truth class factors of a synthetic image.
pub fn oracle_class(image: &LabeledImage) -> Result<ClassParams> {
    let latents = image
        .latents
        .as_ref()
        .ok_or_else(|| Error::MissingLatents("oracle_class".into()))?;
    ClassParams::from_code(&latents.class_code)
}

/// Ground-truth content factors of a synthetic image.
pub fn oracle_content(image: &LabeledImage) -> Result<ContentParams> {
    let latents = image
        .latents
        .as_ref()
        .ok_or_else(|| Error::MissingLatents("oracle_content".into()))?;
    ContentParams::from_code(&latents.content_code)
}

/// Disjoint identity sets for train/validation/test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
    pub samples_per_identity: usize,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for id in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(*id) {
                return Err(Error::Dataset(format!(
                    "identity {id} assigned to more than one split"
                )));
            }
        }
        Ok(())
    }
}

/// Which identity subset to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subset {
    Train,
    Validation,
    Test,
}

/// An in-memory dataset: images grouped by identity plus the split layout.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: Option<SyntheticFactorSpec>,
    images: Vec<LabeledImage>,
    by_identity: BTreeMap<u32, Vec<usize>>,
    pub split: DatasetSplit,
    pub identity_names: BTreeMap<u32, String>,
}

impl Dataset {
    /// Renders a synthetic dataset. Identities `0..n_train` are training,
    /// the next `n_val` validation, the last `n_test` test.
    pub fn synthetic(
        spec: SyntheticFactorSpec,
        n_train: usize,
        n_val: usize,
        n_test: usize,
        samples_per_identity: usize,
        seed: u64,
    ) -> Result<Self> {
        if samples_per_identity < 2 {
            return Err(Error::Dataset("need at least 2 samples per identity".into()));
        }
        let total = n_train + n_val + n_test;
        let mut images = Vec::with_capacity(total * samples_per_identity);
        let mut by_identity = BTreeMap::new();
        let mut names = BTreeMap::new();
        for id in 0..total as u32 {
            let class = spec.sample_class(&mut rng_for(seed, &[0x1d, id as u64]));
            let mut idxs = Vec::with_capacity(samples_per_identity);
            for s in 0..samples_per_identity {
                let content =
                    spec.sample_content(&mut rng_for(seed, &[0xc0, id as u64, s as u64]));
                let img = render(&class, &content, &spec)?.relabeled(id);
                idxs.push(images.len());
                images.push(img);
            }
            by_identity.insert(id, idxs);
            names.insert(id, format!("id{id:04}"));
        }
        let split = DatasetSplit {
            train: (0..n_train as u32).collect(),
            validation: (n_train as u32..(n_train + n_val) as u32).collect(),
            test: ((n_train + n_val) as u32..total as u32).collect(),
            samples_per_identity,
        };
        split.validate()?;
        Ok(Self {
            spec: Some(spec),
            images,
            by_identity,
            split,
            identity_names: names,
        })
    }

    /// Loads `<root>/<identity>/<image files>`, resizing to `image_size` and
    /// normalizing pixels to `[0,1]`. Identities are indexed in sorted-name
    /// order; unreadable images are skipped with a warning and identities
    /// with fewer than two readable images are excluded with a warning.
    pub fn ingest_folder(root: &Path, image_size: (usize, usize, usize)) -> Result<Self> {
        let mut dirs: Vec<_> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.path())
            .collect();
        dirs.sort();

        let mut images = Vec::new();
        let mut by_identity = BTreeMap::new();
        let mut names = BTreeMap::new();
        let mut next_id = 0u32;
        for dir in dirs {
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut files: Vec<_> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_file())
                .map(|e| e.path())
                .collect();
            files.sort();
            let mut loaded = Vec::new();
            for f in files {
                match load_image(&f, image_size) {
                    Ok(px) => loaded.push(px),
                    Err(e) => log::warn!("skipping unreadable image {}: {e}", f.display()),
                }
            }
            if loaded.len() < 2 {
                log::warn!("excluding identity '{name}': fewer than 2 readable images");
                continue;
            }
            let id = next_id;
            next_id += 1;
            let mut idxs = Vec::new();
            for px in loaded {
                idxs.push(images.len());
                images.push(LabeledImage::new(px, id));
            }
            by_identity.insert(id, idxs);
            names.insert(id, name);
        }
        let samples_per_identity = by_identity
            .values()
            .map(|v| v.len())
            .min()
            .unwrap_or(0);
        let split = DatasetSplit {
            train: by_identity.keys().copied().collect(),
            validation: vec![],
            test: vec![],
            samples_per_identity,
        };
        Ok(Self {
            spec: None,
            images,
            by_identity,
            split,
            identity_names: names,
        })
    }

    /// Reassigns identities to splits by position in the sorted identity
    /// order (deterministic).
    pub fn reassign_splits(&mut self, n_train: usize, n_val: usize, n_test: usize) -> Result<()> {
        let ids: Vec<u32> = self.by_identity.keys().copied().collect();
        if n_train + n_val + n_test > ids.len() {
            return Err(Error::Dataset(format!(
                "split sizes {n_train}+{n_val}+{n_test} exceed {} identities",
                ids.len()
            )));
        }
        self.split.train = ids[..n_train].to_vec();
        self.split.validation = ids[n_train..n_train + n_val].to_vec();
        self.split.test = ids[n_train + n_val..n_train + n_val + n_test].to_vec();
        self.split.validate()
    }

    pub fn num_images(&self) -> usize {
        self.images.len()
    }

    pub fn image(&self, idx: usize) -> &LabeledImage {
        &self.images[idx]
    }

    pub fn identities(&self, subset: Subset) -> &[u32] {
        match subset {
            Subset::Train => &self.split.train,
            Subset::Validation => &self.split.validation,
            Subset::Test => &self.split.test,
        }
    }

    pub fn images_of(&self, id: u32) -> Vec<&LabeledImage> {
        self.by_identity
            .get(&id)
            .map(|v| v.iter().map(|&i| &self.images[i]).collect())
            .unwrap_or_default()
    }

    pub fn sample_identity(&self, subset: Subset, rng: &mut impl Rng) -> Result<u32> {
        let ids = self.identities(subset);
        if ids.is_empty() {
            return Err(Error::Dataset("subset has no identities".into()));
        }
        Ok(ids[rng.random_range(0..ids.len())])
    }

    pub fn sample_image_of(&self, id: u32, rng: &mut impl Rng) -> Result<&LabeledImage> {
        let idxs = self
            .by_identity
            .get(&id)
            .ok_or_else(|| Error::Dataset(format!("unknown identity {id}")))?;
        Ok(&self.images[idxs[rng.random_range(0..idxs.len())]])
    }

    /// Samples a negative pair: class first (uniform over subset identities),
    /// then a uniform image within the class; `t`'s class is drawn uniformly
    /// from the remaining identities.
    pub fn sample_pair(
        &self,
        subset: Subset,
        rng: &mut impl Rng,
    ) -> Result<(&LabeledImage, &LabeledImage)> {
        let ids = self.identities(subset);
        if ids.len() < 2 {
            return Err(Error::Dataset(
                "need at least 2 identities to sample a negative pair".into(),
            ));
        }
        let cx = ids[rng.random_range(0..ids.len())];
        let mut ct = cx;
        while ct == cx {
            ct = ids[rng.random_range(0..ids.len())];
        }
        Ok((self.sample_image_of(cx, rng)?, self.sample_image_of(ct, rng)?))
    }

    /// JSON index: identity -> files (when materialized), split assignment,
    /// spec hash.
    pub fn manifest(&self, files: Option<&BTreeMap<u32, Vec<String>>>) -> serde_json::Value {
        let split_of = |id: &u32| -> &str {
            if self.split.train.contains(id) {
                "train"
            } else if self.split.validation.contains(id) {
                "validation"
            } else if self.split.test.contains(id) {
                "test"
            } else {
                "unassigned"
            }
        };
        let identities: Vec<_> = self
            .by_identity
            .keys()
            .map(|id| {
                serde_json::json!({
                    "index": id,
                    "name": self.identity_names.get(id).cloned().unwrap_or_default(),
                    "split": split_of(id),
                    "num_samples": self.by_identity[id].len(),
                    "files": files.and_then(|f| f.get(id)).cloned().unwrap_or_default(),
                })
            })
            .collect();
        serde_json::json!({
            "spec_hash": self.spec.as_ref().map(|s| s.hash_hex()),
            "samples_per_identity": self.split.samples_per_identity,
            "identities": identities,
        })
    }
}

/// Loads and resizes a raster image, normalizing pixels to `[0,1]`.
pub fn load_image(path: &Path, image_size: (usize, usize, usize)) -> Result<Array3<f32>> {
    let (h, w, c) = image_size;
    let img = image::open(path).map_err(|e| Error::Dataset(format!("decode: {e}")))?;
    let img = img.resize_exact(
        w as u32,
        h as u32,
        image::imageops::FilterType::Triangle,
    );
    let rgb = img.to_rgb8();
    let mut out = Array3::zeros((h, w, c));
    for r in 0..h {
        for col in 0..w {
            let p = rgb.get_pixel(col as u32, r as u32);
            if c == 1 {
                let lum =
                    0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32;
                out[(r, col, 0)] = lum / 255.0;
            } else {
                for ch in 0..c.min(3) {
                    out[(r, col, ch)] = p[ch] as f32 / 255.0;
                }
            }
        }
    }
    Ok(out)
}

/// Writes an image as 8-bit PNG.
pub fn save_png(image: &LabeledImage, path: &Path) -> Result<()> {
    let (h, w, c) = image.shape();
    let mut buf = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for col in 0..w {
            for ch in 0..3 {
                let v = if c == 1 {
                    image.pixels[(r, col, 0)]
                } else {
                    image.pixels[(r, col, ch.min(c - 1))]
                };
                buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let rgb: image::RgbImage = image::ImageBuffer::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| Error::Dataset("buffer size mismatch".into()))?;
    rgb.save(path)
        .map_err(|e| Error::Dataset(format!("save {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn spec32() -> SyntheticFactorSpec {
        SyntheticFactorSpec::default_at(32)
    }

    #[test]
    fn render_is_bitwise_deterministic() {
        let spec = spec32();
        let mut rng = rng_for(1, &[0]);
        let class = spec.sample_class(&mut rng);
        let content = spec.sample_content(&mut rng);
        let a = render(&class, &content, &spec).unwrap();
        let b = render(&class, &content, &spec).unwrap();
        assert_eq!(
            a.pixels.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.pixels.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn translation_preserves_oracle_class() {
        let spec = spec32();
        let mut rng = rng_for(2, &[0]);
        let class = spec.sample_class(&mut rng);
        let mut content = spec.sample_content(&mut rng);
        let a = render(&class, &content, &spec).unwrap();
        content.0[0] = spec.content_ranges[0].lo; // move shift_x
        let b = render(&class, &content, &spec).unwrap();
        assert_eq!(oracle_class(&a).unwrap(), oracle_class(&b).unwrap());
    }

    #[test]
    fn thousand_random_renders_stay_in_unit_range() {
        let spec = SyntheticFactorSpec::default_at(16);
        let mut rng = rng_for(3, &[0]);
        for _ in 0..1000 {
            let class = spec.sample_class(&mut rng);
            let content = spec.sample_content(&mut rng);
            let img = render(&class, &content, &spec).unwrap();
            assert!(img.pixels_in_range());
        }
    }

    #[test]
    fn out_of_range_parameters_are_rejected() {
        let spec = spec32();
        let mut rng = rng_for(4, &[0]);
        let mut class = spec.sample_class(&mut rng);
        let content = spec.sample_content(&mut rng);
        class.0[0] = 9.0;
        assert!(render(&class, &content, &spec).is_err());
    }

    #[test]
    fn oracles_return_stored_factors_exactly() {
        let spec = spec32();
        let mut rng = rng_for(5, &[0]);
        let class = spec.sample_class(&mut rng);
        let content = spec.sample_content(&mut rng);
        let img = render(&class, &content, &spec).unwrap();
        assert_eq!(oracle_class(&img).unwrap(), class);
        assert_eq!(oracle_content(&img).unwrap(), content);
    }

    #[test]
    fn oracle_requires_latents() {
        let img = LabeledImage::new(Array3::zeros((4, 4, 3)), 0);
        assert!(oracle_class(&img).is_err());
        assert!(oracle_content(&img).is_err());
    }

    #[test]
    fn splits_are_disjoint() {
        let ds = Dataset::synthetic(spec32(), 4, 2, 2, 2, 7).unwrap();
        ds.split.validate().unwrap();
        assert_eq!(ds.identities(Subset::Train).len(), 4);
        assert_eq!(ds.identities(Subset::Validation).len(), 2);
        assert_eq!(ds.identities(Subset::Test).len(), 2);
    }

    #[test]
    fn sample_pair_never_repeats_identity() {
        let ds = Dataset::synthetic(spec32(), 4, 0, 0, 2, 8).unwrap();
        let mut rng = rng_for(8, &[1]);
        for _ in 0..500 {
            let (x, t) = ds.sample_pair(Subset::Train, &mut rng).unwrap();
            assert_ne!(x.identity, t.identity);
        }
    }

    #[test]
    fn sample_pair_target_class_is_uniform() {
        let ds = Dataset::synthetic(spec32(), 4, 0, 0, 2, 9).unwrap();
        let mut rng = rng_for(9, &[1]);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let (x, _) = ds.sample_pair(Subset::Train, &mut rng).unwrap();
            counts[x.identity as usize] += 1;
        }
        for &c in &counts {
            let frac = c as f64 / n as f64;
            assert!((frac - 0.25).abs() <= 0.02, "class frequency {frac}");
        }
    }

    #[test]
    fn within_class_image_choice_is_uniform() {
        // Chi-squared over (identity, sample) cells at the 1% level.
        let ds = Dataset::synthetic(spec32(), 4, 0, 0, 2, 10).unwrap();
        let mut rng = rng_for(10, &[1]);
        let n = 10_000;
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..n {
            let (x, _) = ds.sample_pair(Subset::Train, &mut rng).unwrap();
            // Identify which of the two samples was chosen by latent equality.
            let imgs = ds.images_of(x.identity);
            let which = imgs
                .iter()
                .position(|im| im.latents == x.latents)
                .unwrap();
            *counts.entry((x.identity, which)).or_insert(0usize) += 1;
        }
        let mut chi2 = 0.0f64;
        for id in 0..4u32 {
            let total = (0..2)
                .map(|s| counts.get(&(id, s)).copied().unwrap_or(0))
                .sum::<usize>() as f64;
            for s in 0..2 {
                let o = counts.get(&(id, s)).copied().unwrap_or(0) as f64;
                let e = total / 2.0;
                chi2 += (o - e) * (o - e) / e;
            }
        }
        // df = 4 identities x (2-1); critical value at 1% is 13.277.
        assert!(chi2 <= 13.277, "chi2 {chi2}");
    }

    #[test]
    fn ingest_empty_directory_yields_empty_split() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::ingest_folder(dir.path(), (8, 8, 3)).unwrap();
        assert_eq!(ds.num_images(), 0);
        assert!(ds.identities(Subset::Train).is_empty());
    }

    #[test]
    fn ingest_three_identities_four_images_each() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticFactorSpec::default_at(16);
        let mut rng = rng_for(11, &[0]);
        for name in ["alice", "bob", "carol"] {
            let sub = dir.path().join(name);
            std::fs::create_dir(&sub).unwrap();
            let class = spec.sample_class(&mut rng);
            for i in 0..4 {
                let content = spec.sample_content(&mut rng);
                let img = render(&class, &content, &spec).unwrap();
                save_png(&img, &sub.join(format!("{i}.png"))).unwrap();
            }
        }
        let ds = Dataset::ingest_folder(dir.path(), (8, 8, 3)).unwrap();
        assert_eq!(ds.identities(Subset::Train).len(), 3);
        assert_eq!(ds.num_images(), 12);
        assert!(ds.images_of(0).iter().all(|im| im.pixels_in_range()));
        // Deterministic indexing on re-ingest.
        let ds2 = Dataset::ingest_folder(dir.path(), (8, 8, 3)).unwrap();
        assert_eq!(ds.identity_names, ds2.identity_names);
    }

    #[test]
    fn identities_with_one_image_are_excluded() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticFactorSpec::default_at(16);
        let mut rng = rng_for(12, &[0]);
        let sub = dir.path().join("lonely");
        std::fs::create_dir(&sub).unwrap();
        let class = spec.sample_class(&mut rng);
        let content = spec.sample_content(&mut rng);
        save_png(
            &render(&class, &content, &spec).unwrap(),
            &sub.join("only.png"),
        )
        .unwrap();
        let ds = Dataset::ingest_folder(dir.path(), (8, 8, 3)).unwrap();
        assert_eq!(ds.num_images(), 0);
    }

    #[test]
    fn eye_region_matches_paper_footprint_at_64() {
        let spec = SyntheticFactorSpec::default_at(64);
        assert_eq!(spec.eye_region.width, 32);
        assert_eq!(spec.eye_region.height, 12);
        assert_eq!(spec.eye_region.col0, 16);
        assert_eq!(spec.eye_region.row0, 20);
    }

    #[test]
    fn foreground_mask_is_nonempty_and_binary() {
        let spec = spec32();
        let mut rng = rng_for(13, &[0]);
        let class = spec.sample_class(&mut rng);
        let content = spec.sample_content(&mut rng);
        let m = foreground_mask(&class, &content, &spec);
        assert!(m.num_set() > 50);
        assert!(m.num_set() < 32 * 32);
    }
}
