//! Threat-model mask geometries: eyeglass frames, searched square patch,
//! fixed eye patch, and the location-search square used during training.
//!
//! The footprints are exact at 64x64 (eyeglasses inside a 32x16 box covering
//! about 2.6% of the image, 10x10 square on a stride-5 grid, 32x12 eye
//! patch, 20x20 training square) and scale proportionally at other sizes,
//! with a minimum 1px stroke for the frames.

use crate::synth::Rect;
use crate::types::Mask;

/// Square-patch search geometry: patch side and search stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SquarePatchGeometry {
    pub patch: usize,
    pub stride: usize,
}

impl SquarePatchGeometry {
    /// Top-left positions along one axis: the stride lattice plus the flush
    /// edge position when the extent is not a lattice point. The count is
    /// `ceil((extent - patch) / stride) + 1`.
    pub fn positions(&self, extent: usize) -> Vec<usize> {
        grid_positions(extent, self.patch, self.stride)
    }

    /// All candidate top-left corners (row, col) for an HxW image.
    pub fn grid(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let rows = self.positions(h);
        let cols = self.positions(w);
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for &r in &rows {
            for &c in &cols {
                out.push((r, c));
            }
        }
        out
    }

    pub fn mask_at(&self, h: usize, w: usize, row0: usize, col0: usize) -> crate::error::Result<Mask> {
        Mask::rect(h, w, row0, col0, self.patch, self.patch)
    }
}

/// See [`SquarePatchGeometry::positions`].
pub fn grid_positions(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    assert!(patch <= extent && stride >= 1);
    let last = extent - patch;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

/// Constructors for the evaluation and training masks.
pub struct MaskGeometry;

impl MaskGeometry {
    fn scale(v: f32, s: f32) -> usize {
        (v * s).round().max(1.0) as usize
    }

    /// Glasses-shaped mask: two rectangular lens outlines, a bridge, and two
    /// temple stubs, centered on the eye region. At 64x64 the footprint is a
    /// 32x16 box and the covered area is about 2.6% of the image.
    pub fn eyeglasses(h: usize, w: usize, eye_region: &Rect) -> Mask {
        let s = h.min(w) as f32 / 64.0;
        let stroke = Self::scale(1.0, s).min(2);
        let lens_w = Self::scale(13.0, s);
        let lens_h = Self::scale(11.0, s);
        let gap = Self::scale(4.0, s);
        let temple = Self::scale(1.0, s);

        let center_row = eye_region.row0 + eye_region.height / 2;
        let center_col = w / 2;
        let top = center_row.saturating_sub(lens_h / 2);
        let left1 = center_col.saturating_sub(gap / 2 + lens_w);
        let left2 = center_col + gap - gap / 2;

        let mut grid = ndarray::Array2::zeros((h, w));
        let mut outline = |r0: usize, c0: usize, rh: usize, rw: usize| {
            for r in r0..(r0 + rh).min(h) {
                for c in c0..(c0 + rw).min(w) {
                    let on_edge = r < r0 + stroke
                        || r >= r0 + rh - stroke
                        || c < c0 + stroke
                        || c >= c0 + rw - stroke;
                    if on_edge {
                        grid[(r, c)] = 1u8;
                    }
                }
            }
        };
        outline(top, left1, lens_h, lens_w);
        outline(top, left2, lens_h, lens_w);
        // Bridge at the upper third of the lenses.
        let bridge_row = top + lens_h / 3;
        for r in bridge_row..(bridge_row + stroke).min(h) {
            for c in (left1 + lens_w)..left2.min(w) {
                grid[(r, c)] = 1;
            }
        }
        // Temple stubs extending outward at bridge height.
        for r in bridge_row..(bridge_row + stroke).min(h) {
            for c in left1.saturating_sub(temple)..left1 {
                grid[(r, c)] = 1;
            }
            for c in (left2 + lens_w)..(left2 + lens_w + temple).min(w) {
                grid[(r, c)] = 1;
            }
        }
        Mask::new(grid).expect("binary grid")
    }

    /// 10x10 patch searched on a stride-5 grid (at 64x64).
    pub fn square_patch(h: usize, w: usize) -> SquarePatchGeometry {
        let s = h.min(w) as f32 / 64.0;
        SquarePatchGeometry {
            patch: Self::scale(10.0, s),
            stride: Self::scale(5.0, s),
        }
    }

    /// Fixed rectangle over the eye region (32x12 at 64x64, about 10% area).
    pub fn eye_patch(h: usize, w: usize, eye_region: &Rect) -> Mask {
        Mask::rect(
            h,
            w,
            eye_region.row0,
            eye_region.col0,
            eye_region.height,
            eye_region.width,
        )
        .expect("eye region fits the image")
    }

    /// 20x20 location-search square used by gradient-guided patch training.
    pub fn doa_square(h: usize, w: usize) -> SquarePatchGeometry {
        let s = h.min(w) as f32 / 64.0;
        SquarePatchGeometry {
            patch: Self::scale(20.0, s),
            stride: Self::scale(5.0, s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SyntheticFactorSpec;

    #[test]
    fn footprints_match_threat_models_at_64() {
        let spec = SyntheticFactorSpec::default_at(64);
        let total = 64.0 * 64.0;

        let glasses = MaskGeometry::eyeglasses(64, 64, &spec.eye_region);
        let frac = glasses.area_fraction();
        assert!(
            (0.021..=0.031).contains(&frac),
            "eyeglasses area {frac} outside 2.6% +- 0.5%"
        );
        // Footprint stays within a 32x16 box.
        let set = glasses.set_indices();
        let rows: Vec<_> = set.iter().map(|p| p.0).collect();
        let cols: Vec<_> = set.iter().map(|p| p.1).collect();
        assert!(rows.iter().max().unwrap() - rows.iter().min().unwrap() < 16);
        assert!(cols.iter().max().unwrap() - cols.iter().min().unwrap() <= 32);

        let sq = MaskGeometry::square_patch(64, 64);
        assert_eq!((sq.patch, sq.stride), (10, 5));
        let sq_frac = (sq.patch * sq.patch) as f64 / total;
        assert!((sq_frac - 0.025).abs() <= 0.005, "square area {sq_frac}");

        let eye = MaskGeometry::eye_patch(64, 64, &spec.eye_region);
        assert_eq!(eye.num_set(), 32 * 12);

        let doa = MaskGeometry::doa_square(64, 64);
        assert_eq!((doa.patch, doa.stride), (20, 5));
    }

    #[test]
    fn grid_count_includes_the_flush_position() {
        // ceil((64-10)/5)+1 = 12 positions per axis.
        let sq = SquarePatchGeometry { patch: 10, stride: 5 };
        let pos = sq.positions(64);
        assert_eq!(pos.len(), 12);
        assert_eq!(*pos.last().unwrap(), 54);
        assert_eq!(sq.grid(64, 64).len(), 144);
        // Exact lattice fit: no extra position.
        let sq2 = SquarePatchGeometry { patch: 10, stride: 5 };
        assert_eq!(sq2.positions(60).len(), 11);
    }

    #[test]
    fn masks_scale_to_other_image_sizes() {
        let spec = SyntheticFactorSpec::default_at(32);
        let glasses = MaskGeometry::eyeglasses(32, 32, &spec.eye_region);
        assert!(glasses.num_set() > 0);
        let eye = MaskGeometry::eye_patch(32, 32, &spec.eye_region);
        assert_eq!(eye.num_set(), 16 * 6);
        let sq = MaskGeometry::square_patch(32, 32);
        assert_eq!((sq.patch, sq.stride), (5, 3));
    }
}
