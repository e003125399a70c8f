//! Sliding-window anchor generation over a feature grid.
//!
//! Anchors use the area-preserving aspect parameterization `w = s/√r`,
//! `h = s·√r`, so `w·h = s²` for every scale/ratio combination and the scale
//! keeps meaning "size". Grid sites sit on half-stride offsets, covering the
//! image symmetrically.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::geometry::BBox;
use crate::{Error, Result};

/// Configuration of the anchor grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Pixels between grid sites (the feature stride).
    pub stride: usize,
    /// Anchor side lengths in pixels.
    pub scales: Vec<f64>,
    /// Height/width aspect ratios.
    pub ratios: Vec<f64>,
    pub image_w: usize,
    pub image_h: usize,
}

impl AnchorConfig {
    /// Toy default: stride 8 on 64×64 images, with an extra small scale and
    /// a flat ratio so dot- and bar-like objects have anchors within
    /// regression range.
    pub fn toy_64() -> Self {
        Self {
            stride: 8,
            scales: alloc::vec![4.0, 8.0, 16.0, 32.0],
            ratios: alloc::vec![0.25, 0.5, 1.0, 2.0],
            image_w: 64,
            image_h: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride < 1 {
            return Err(Error::InvalidConfig { field: "stride", message: format!("must be ≥ 1, got {}", self.stride) });
        }
        if self.scales.is_empty() || self.scales.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig { field: "scales", message: format!("must be nonempty and positive, got {:?}", self.scales) });
        }
        if self.ratios.is_empty() || self.ratios.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::InvalidConfig { field: "ratios", message: format!("must be nonempty and positive, got {:?}", self.ratios) });
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::InvalidConfig { field: "image_w/image_h", message: format!("must be positive, got {}×{}", self.image_w, self.image_h) });
        }
        Ok(())
    }

    /// Number of grid sites along x.
    pub fn grid_w(&self) -> usize {
        self.image_w / self.stride
    }

    /// Number of grid sites along y.
    pub fn grid_h(&self) -> usize {
        self.image_h / self.stride
    }

    /// Anchors per grid site.
    pub fn per_site(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }
}

/// The generated anchor list, in raster order over grid sites, then scale,
/// then ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub anchors: Vec<BBox>,
    pub site_count: usize,
    pub per_site: usize,
}

/// Generates one anchor per (site, scale, ratio), centered on half-stride
/// offsets. Anchors are not clipped; clipping is the caller's choice.
pub fn generate_anchors(cfg: &AnchorConfig) -> Result<AnchorGrid> {
    cfg.validate()?;
    let (gw, gh) = (cfg.grid_w(), cfg.grid_h());
    let per_site = cfg.per_site();
    let mut anchors = Vec::with_capacity(gw * gh * per_site);
    for gy in 0..gh {
        for gx in 0..gw {
            let cx = cfg.stride as f64 * (gx as f64 + 0.5);
            let cy = cfg.stride as f64 * (gy as f64 + 0.5);
            for &s in &cfg.scales {
                for &r in &cfg.ratios {
                    let sqrt_r = fmath::sqrt(r);
                    let w = s / sqrt_r;
                    let h = s * sqrt_r;
                    anchors.push(BBox {
                        x1: cx - 0.5 * w,
                        y1: cy - 0.5 * h,
                        x2: cx + 0.5 * w,
                        y2: cy + 0.5 * h,
                    });
                }
            }
        }
    }
    Ok(AnchorGrid { anchors, site_count: gw * gh, per_site })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_enumerated_grid() {
        let cfg = AnchorConfig {
            stride: 8,
            scales: alloc::vec![8.0],
            ratios: alloc::vec![1.0],
            image_w: 16,
            image_h: 16,
        };
        let grid = generate_anchors(&cfg).unwrap();
        assert_eq!(grid.anchors.len(), 4);
        assert_eq!(grid.per_site, 1);
        let centers: Vec<(f64, f64)> = grid.anchors.iter().map(|a| a.center()).collect();
        assert_eq!(centers, alloc::vec![(4.0, 4.0), (12.0, 4.0), (4.0, 12.0), (12.0, 12.0)]);
        for a in &grid.anchors {
            assert_eq!(a.width(), 8.0);
            assert_eq!(a.height(), 8.0);
        }
    }

    #[test]
    fn unit_ratio_is_square() {
        let cfg = AnchorConfig { ratios: alloc::vec![1.0], ..AnchorConfig::toy_64() };
        for a in generate_anchors(&cfg).unwrap().anchors {
            assert!((a.width() - a.height()).abs() < 1e-12);
        }
    }

    #[test]
    fn per_site_is_scales_times_ratios() {
        let cfg = AnchorConfig {
            scales: alloc::vec![8.0, 16.0, 32.0],
            ratios: alloc::vec![0.5, 1.0, 2.0],
            ..AnchorConfig::toy_64()
        };
        let grid = generate_anchors(&cfg).unwrap();
        assert_eq!(grid.per_site, 9);
        assert_eq!(grid.anchors.len(), grid.site_count * grid.per_site);
        assert_eq!(grid.anchors.len(), (64 / 8) * (64 / 8) * 9);
    }

    #[test]
    fn area_equals_scale_squared() {
        let cfg = AnchorConfig::toy_64();
        let grid = generate_anchors(&cfg).unwrap();
        let n_ratios = cfg.ratios.len();
        for (i, a) in grid.anchors.iter().enumerate() {
            let s = cfg.scales[(i / n_ratios) % cfg.scales.len()];
            assert!((a.area() - s * s).abs() < 1e-9, "anchor {i} area {} vs {}", a.area(), s * s);
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let cfg = AnchorConfig::toy_64();
        assert_eq!(generate_anchors(&cfg).unwrap(), generate_anchors(&cfg).unwrap());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = AnchorConfig::toy_64();
        cfg.scales.clear();
        assert!(matches!(generate_anchors(&cfg), Err(Error::InvalidConfig { field: "scales", .. })));
        let mut cfg = AnchorConfig::toy_64();
        cfg.ratios = alloc::vec![0.0];
        assert!(generate_anchors(&cfg).is_err());
        let mut cfg = AnchorConfig::toy_64();
        cfg.stride = 0;
        assert!(generate_anchors(&cfg).is_err());
    }
}
