//! Static augmentations (mirror, shift, Gaussian cutout) and random
//! rectangle-mask sampling.
//!
//! Augmented outputs keep the identity label but drop latent codes: the
//! factors no longer describe the transformed pixels, and the encoders are
//! only defined on rendered or generated samples.

use rand::Rng;

use crate::error::{Error, Result};
use crate::types::{LabeledImage, Mask};

/// Gaussian-cutout configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CutoutSpec {
    pub probability: f32,
    pub area_range: (f32, f32),
    pub aspect_range: (f32, f32),
}

impl Default for CutoutSpec {
    fn default() -> Self {
        Self {
            probability: 0.5,
            area_range: (0.02, 0.2),
            aspect_range: (0.5, 2.0),
        }
    }
}

/// Random rectangle-mask sampler used by weak adversarial training.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskSampler {
    pub area_range: (f32, f32),
    pub aspect_range: (f32, f32),
}

impl Default for MaskSampler {
    fn default() -> Self {
        Self {
            area_range: (0.02, 0.1),
            aspect_range: (0.5, 2.0),
        }
    }
}

/// Horizontal flip; an involution.
pub fn mirror(image: &LabeledImage) -> LabeledImage {
    let (h, w, c) = image.shape();
    let mut pixels = ndarray::Array3::zeros((h, w, c));
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                pixels[(r, col, ch)] = image.pixels[(r, w - 1 - col, ch)];
            }
        }
    }
    LabeledImage::new(pixels, image.identity)
}

/// Translates by a uniform integer offset in `[-max_px, max_px]^2`, filling
/// vacated borders by edge replication.
pub fn random_shift(image: &LabeledImage, rng: &mut impl Rng, max_px: usize) -> LabeledImage {
    let (h, w, _) = image.shape();
    assert!(max_px < h.min(w), "shift must be smaller than the image");
    let m = max_px as i64;
    let dx = rng.random_range(-m..=m);
    let dy = rng.random_range(-m..=m);
    shift_by(image, dy, dx)
}

/// Deterministic shift by (dy, dx) pixels with edge replication.
pub fn shift_by(image: &LabeledImage, dy: i64, dx: i64) -> LabeledImage {
    let (h, w, c) = image.shape();
    let mut pixels = ndarray::Array3::zeros((h, w, c));
    for r in 0..h {
        let src_r = (r as i64 - dy).clamp(0, h as i64 - 1) as usize;
        for col in 0..w {
            let src_c = (col as i64 - dx).clamp(0, w as i64 - 1) as usize;
            for ch in 0..c {
                pixels[(r, col, ch)] = image.pixels[(src_r, src_c, ch)];
            }
        }
    }
    LabeledImage::new(pixels, image.identity)
}

/// Samples a rectangle mask with area fraction in `area_range` (after
/// rounding) and aspect ratio (width/height) in `aspect_range`, placed
/// uniformly. Aspect is drawn log-uniformly. Rejects and resamples up to 100
/// times; an infeasible configuration is an error.
pub fn sample_rect_mask(
    h: usize,
    w: usize,
    area_range: (f32, f32),
    aspect_range: (f32, f32),
    rng: &mut impl Rng,
) -> Result<Mask> {
    let (a_lo, a_hi) = area_range;
    let (r_lo, r_hi) = aspect_range;
    if !(0.0 < a_lo && a_lo <= a_hi && a_hi <= 1.0) || !(0.0 < r_lo && r_lo <= r_hi) {
        return Err(Error::MaskGeometry(format!(
            "invalid ranges: area {area_range:?}, aspect {aspect_range:?}"
        )));
    }
    let total = (h * w) as f32;
    for _ in 0..100 {
        let area = if a_lo == a_hi {
            a_lo
        } else {
            rng.random_range(a_lo..a_hi)
        };
        let aspect = if r_lo == r_hi {
            r_lo
        } else {
            (rng.random_range(r_lo.ln()..r_hi.ln())).exp()
        };
        let area_px = area * total;
        let rh = ((area_px / aspect).sqrt().round() as usize).max(1);
        let rw = ((area_px * aspect).sqrt().round() as usize).max(1);
        if rh > h || rw > w {
            continue;
        }
        let actual_area = (rh * rw) as f32 / total;
        let actual_aspect = rw as f32 / rh as f32;
        if actual_area < a_lo || actual_area > a_hi {
            continue;
        }
        if actual_aspect < r_lo || actual_aspect > r_hi {
            continue;
        }
        let row0 = rng.random_range(0..=h - rh);
        let col0 = rng.random_range(0..=w - rw);
        return Mask::rect(h, w, row0, col0, rh, rw);
    }
    Err(Error::MaskGeometry(format!(
        "no feasible {area_range:?}/{aspect_range:?} rectangle for {h}x{w} after 100 attempts"
    )))
}

/// Samples a perturbation mask for weak adversarial training.
pub fn sample_mask(sampler: &MaskSampler, h: usize, w: usize, rng: &mut impl Rng) -> Result<Mask> {
    sample_rect_mask(h, w, sampler.area_range, sampler.aspect_range, rng)
}

/// With probability `spec.probability`, overwrites a random rectangle with
/// uniform random pixels. Returns the (possibly unchanged) image, whether the
/// cutout was applied, and the region.
pub fn cutout(
    image: &LabeledImage,
    spec: &CutoutSpec,
    rng: &mut impl Rng,
) -> Result<(LabeledImage, bool, Mask)> {
    let (h, w, c) = image.shape();
    if rng.random_range(0.0..1.0f32) >= spec.probability {
        return Ok((
            LabeledImage::new(image.pixels.clone(), image.identity),
            false,
            Mask::zeros(h, w),
        ));
    }
    let region = sample_rect_mask(h, w, spec.area_range, spec.aspect_range, rng)?;
    let mut out = LabeledImage::new(image.pixels.clone(), image.identity);
    for (r, col) in region.set_indices() {
        for ch in 0..c {
            out.pixels[(r, col, ch)] = rng.random_range(0.0..1.0);
        }
    }
    Ok((out, true, region))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::synth::{render, SyntheticFactorSpec};

    fn sample_image(seed: u64) -> LabeledImage {
        let spec = SyntheticFactorSpec::default_at(32);
        let mut rng = rng_for(seed, &[0]);
        let class = spec.sample_class(&mut rng);
        let content = spec.sample_content(&mut rng);
        render(&class, &content, &spec).unwrap()
    }

    #[test]
    fn mirror_is_an_involution() {
        let x = sample_image(1);
        let back = mirror(&mirror(&x));
        assert_eq!(
            x.pixels.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.pixels.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn mirror_maps_columns_exactly() {
        let x = sample_image(2);
        let m = mirror(&x);
        let (_, w, _) = x.shape();
        for col in 0..w {
            assert_eq!(m.pixels[(5, col, 0)], x.pixels[(5, w - 1 - col, 0)]);
        }
    }

    #[test]
    fn mirror_preserves_pixel_sum() {
        let x = sample_image(3);
        let m = mirror(&x);
        let sx: f64 = x.pixels.iter().map(|&v| v as f64).sum();
        let sm: f64 = m.pixels.iter().map(|&v| v as f64).sum();
        assert_eq!(sx, sm);
    }

    #[test]
    fn zero_shift_is_identity() {
        let x = sample_image(4);
        let s = shift_by(&x, 0, 0);
        assert_eq!(x.pixels, s.pixels);
    }

    #[test]
    fn shifts_stay_within_bounds_and_range() {
        let x = sample_image(5);
        let mut rng = rng_for(5, &[1]);
        for _ in 0..10_000 {
            let m = 5i64;
            let dx = rng.random_range(-m..=m);
            let dy = rng.random_range(-m..=m);
            assert!(dx.abs() <= 5 && dy.abs() <= 5);
        }
        // Edge replication keeps pixels in range.
        let s = random_shift(&x, &mut rng, 5);
        assert!(s.pixels_in_range());
    }

    #[test]
    fn unapplied_cutout_leaves_image_unchanged() {
        let x = sample_image(6);
        let spec = CutoutSpec {
            probability: 0.0,
            ..CutoutSpec::default()
        };
        let (out, applied, region) = cutout(&x, &spec, &mut rng_for(6, &[1])).unwrap();
        assert!(!applied);
        assert_eq!(region.num_set(), 0);
        assert_eq!(
            x.pixels.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            out.pixels.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn applied_cutout_only_touches_the_region() {
        let x = sample_image(7);
        let spec = CutoutSpec {
            probability: 1.0,
            ..CutoutSpec::default()
        };
        let (out, applied, region) = cutout(&x, &spec, &mut rng_for(7, &[1])).unwrap();
        assert!(applied);
        let (h, w, c) = x.shape();
        for r in 0..h {
            for col in 0..w {
                if !region.is_set(r, col) {
                    for ch in 0..c {
                        assert_eq!(
                            out.pixels[(r, col, ch)].to_bits(),
                            x.pixels[(r, col, ch)].to_bits()
                        );
                    }
                }
            }
        }
        assert!(out.pixels_in_range());
    }

    #[test]
    fn cutout_apply_rate_matches_probability() {
        let x = sample_image(8);
        let spec = CutoutSpec::default();
        let mut rng = rng_for(8, &[1]);
        let n = 10_000;
        let mut applied = 0;
        for _ in 0..n {
            if cutout(&x, &spec, &mut rng).unwrap().1 {
                applied += 1;
            }
        }
        let rate = applied as f64 / n as f64;
        assert!((rate - 0.5).abs() <= 0.02, "apply rate {rate}");
    }

    #[test]
    fn sampled_masks_respect_area_and_aspect() {
        let mut rng = rng_for(9, &[1]);
        let sampler = MaskSampler::default();
        for _ in 0..10_000 {
            let m = sample_mask(&sampler, 64, 64, &mut rng).unwrap();
            let area = m.area_fraction();
            assert!((0.02..=0.1).contains(&area), "area {area}");
            // Recover the rectangle dims from the support.
            let set = m.set_indices();
            let rh = set.iter().map(|p| p.0).max().unwrap() - set[0].0 + 1;
            let rw = set.iter().map(|p| p.1).max().unwrap() - set[0].1 + 1;
            assert_eq!(rh * rw, m.num_set(), "support must be a full rectangle");
            let aspect = rw as f32 / rh as f32;
            assert!((0.5..=2.0).contains(&aspect), "aspect {aspect}");
        }
    }

    #[test]
    fn mask_area_fraction_is_exact_pixel_count() {
        let mut rng = rng_for(10, &[1]);
        let sampler = MaskSampler::default();
        let m = sample_mask(&sampler, 48, 48, &mut rng).unwrap();
        assert_eq!(m.area_fraction(), m.num_set() as f64 / (48.0 * 48.0));
    }

    #[test]
    fn degenerate_ranges_give_fixed_square_at_uniform_positions() {
        // 4x4 square on a 16x16 grid; positions should cover the lattice
        // uniformly (chi-squared over 169 cells, 1% critical ~ 214).
        let mut rng = rng_for(11, &[1]);
        let n = 10_000usize;
        let cells = 13 * 13;
        let mut counts = vec![0usize; cells];
        for _ in 0..n {
            let m = sample_rect_mask(16, 16, (16.0 / 256.0, 16.0 / 256.0), (1.0, 1.0), &mut rng)
                .unwrap();
            assert_eq!(m.num_set(), 16);
            let set = m.set_indices();
            let (r0, c0) = set[0];
            counts[r0 * 13 + c0] += 1;
        }
        let e = n as f64 / cells as f64;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        assert!(chi2 < 214.0, "chi2 {chi2}");
    }

    #[test]
    fn infeasible_geometry_is_an_error() {
        let mut rng = rng_for(12, &[1]);
        // A 3x3 image cannot host a rectangle of 80-90% area at aspect 2.
        assert!(sample_rect_mask(3, 3, (0.8, 0.9), (2.0, 2.0), &mut rng).is_err());
    }

    #[test]
    fn augmentations_preserve_unit_range() {
        let x = sample_image(13);
        let mut rng = rng_for(13, &[1]);
        assert!(mirror(&x).pixels_in_range());
        assert!(random_shift(&x, &mut rng, 5).pixels_in_range());
        let (c, _, _) = cutout(&x, &CutoutSpec::default(), &mut rng).unwrap();
        assert!(c.pixels_in_range());
    }

    #[test]
    fn cutout_is_reproducible_under_a_fixed_seed() {
        let x = sample_image(14);
        let spec = CutoutSpec::default();
        let a = cutout(&x, &spec, &mut rng_for(14, &[1])).unwrap();
        let b = cutout(&x, &spec, &mut rng_for(14, &[1])).unwrap();
        assert_eq!(a.0.pixels, b.0.pixels);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }
}
