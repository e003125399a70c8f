//! Deterministic synthetic detection benchmarks: images of geometric shapes
//! over noisy, cluttered backgrounds, with exact ground-truth boxes.
//!
//! The default benchmark `craft-toy-6` carries six classes: an easy pair
//! (square, circle), a confusable pair (pentagon, hexagon — same size,
//! texture and intensity, differing only in vertex count) and a
//! hard-coverage pair (thin horizontal bars of aspect ≥ 4:1 and dots of at
//! most 6 px). Generation is counter-based: image `i` is produced from rng
//! stream `i + 1` of the dataset seed, so images are independent and any
//! subset can be regenerated bit-identically.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::geometry::{clip_to_image, iou, BBox, ScoredBox};
use crate::rngutil::{self, Rng};
use crate::tinynet::Tensor;
use crate::{Error, Result};

/// Shape family drawn for a class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ShapeFamily {
    Square,
    Circle,
    /// Filled regular polygon with this many sides, near-canonical
    /// orientation with a small rotation jitter.
    RegularPolygon { sides: usize },
    /// Filled axis-aligned bar, wider than tall by the aspect range.
    HorizontalBar,
    /// Small filled disc.
    Dot,
}

/// Appearance and size distribution of one object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub shape: ShapeFamily,
    /// Primary dimension in pixels: side, diameter, or bar height.
    pub size_range: (f64, f64),
    /// Width/height ratio; only bars use a range other than 1.
    pub aspect_range: (f64, f64),
    /// Fill intensity range (background sits around 0.3–0.5).
    pub intensity_range: (f64, f64),
    /// Per-pixel gaussian noise inside the shape.
    pub texture_noise: f64,
    /// Classes sharing a group id are deliberately confusable.
    pub confusion_group: Option<u32>,
}

/// Full description of a dataset split; regeneration from an equal config is
/// bit-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_classes: usize,
    pub image_w: usize,
    pub image_h: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub class_specs: Vec<ClassSpec>,
    pub n_images: usize,
    pub seed: u64,
}

impl DatasetConfig {
    /// The default six-class benchmark on 64×64 grayscale-replicated images.
    pub fn craft_toy6(n_images: usize, seed: u64) -> Self {
        let shape_intensity = (0.68, 0.95);
        Self {
            n_classes: 6,
            image_w: 64,
            image_h: 64,
            objects_min: 2,
            objects_max: 5,
            class_specs: alloc::vec![
                ClassSpec {
                    name: "square".into(),
                    shape: ShapeFamily::Square,
                    size_range: (12.0, 24.0),
                    aspect_range: (1.0, 1.0),
                    intensity_range: shape_intensity,
                    texture_noise: 0.02,
                    confusion_group: None,
                },
                ClassSpec {
                    name: "circle".into(),
                    shape: ShapeFamily::Circle,
                    size_range: (12.0, 24.0),
                    aspect_range: (1.0, 1.0),
                    // dark-filled, so the disc is not confusable with the
                    // bright polygon pair
                    intensity_range: (0.04, 0.20),
                    texture_noise: 0.02,
                    confusion_group: None,
                },
                ClassSpec {
                    name: "pentagon".into(),
                    shape: ShapeFamily::RegularPolygon { sides: 5 },
                    size_range: (16.0, 28.0),
                    aspect_range: (1.0, 1.0),
                    intensity_range: shape_intensity,
                    texture_noise: 0.02,
                    confusion_group: Some(1),
                },
                ClassSpec {
                    name: "hexagon".into(),
                    shape: ShapeFamily::RegularPolygon { sides: 6 },
                    size_range: (16.0, 28.0),
                    aspect_range: (1.0, 1.0),
                    intensity_range: shape_intensity,
                    texture_noise: 0.02,
                    confusion_group: Some(1),
                },
                ClassSpec {
                    name: "thin-bar".into(),
                    shape: ShapeFamily::HorizontalBar,
                    size_range: (3.5, 5.5),
                    aspect_range: (5.0, 9.0),
                    intensity_range: shape_intensity,
                    texture_noise: 0.02,
                    confusion_group: None,
                },
                ClassSpec {
                    name: "small-dot".into(),
                    shape: ShapeFamily::Dot,
                    size_range: (3.5, 6.0),
                    aspect_range: (1.0, 1.0),
                    intensity_range: shape_intensity,
                    texture_noise: 0.02,
                    confusion_group: None,
                },
            ],
            n_images,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig {
                field: "n_classes",
                message: alloc::format!("need at least 2 classes, got {}", self.n_classes),
            });
        }
        if self.class_specs.len() != self.n_classes {
            return Err(Error::InvalidConfig {
                field: "class_specs",
                message: alloc::format!("expected {} specs, got {}", self.n_classes, self.class_specs.len()),
            });
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::InvalidConfig { field: "image_w/image_h", message: "must be positive".into() });
        }
        if self.objects_min > self.objects_max {
            return Err(Error::InvalidConfig {
                field: "objects_min/objects_max",
                message: alloc::format!("min {} exceeds max {}", self.objects_min, self.objects_max),
            });
        }
        for spec in &self.class_specs {
            if !(spec.size_range.0 > 0.0 && spec.size_range.1 >= spec.size_range.0) {
                return Err(Error::InvalidConfig {
                    field: "size_range",
                    message: alloc::format!("class `{}` has non-positive or inverted range", spec.name),
                });
            }
        }
        let mut groups: BTreeMap<u32, usize> = BTreeMap::new();
        for spec in &self.class_specs {
            if let Some(g) = spec.confusion_group {
                *groups.entry(g).or_insert(0) += 1;
            }
        }
        if !groups.values().any(|&n| n >= 2) {
            return Err(Error::InvalidConfig {
                field: "confusion_group",
                message: "need at least one confusion group with ≥ 2 classes".into(),
            });
        }
        if !self.class_specs.iter().any(|s| s.aspect_range.1 >= 3.0) {
            return Err(Error::InvalidConfig {
                field: "aspect_range",
                message: "need at least one class with aspect reaching ≥ 3:1".into(),
            });
        }
        Ok(())
    }
}

/// One image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Channels × H × W, values in [0, 1].
    pub image: Tensor,
    pub gts: Vec<(BBox, usize)>,
}

/// A generated split plus its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DetDataset {
    pub samples: Vec<Sample>,
    /// Split tag ("train" / "test").
    pub split: String,
    pub config: DatasetConfig,
}

impl DetDataset {
    pub fn image_id(index: usize) -> String {
        alloc::format!("img{index}")
    }

    pub fn total_gts(&self) -> usize {
        self.samples.iter().map(|s| s.gts.len()).sum()
    }
}

struct PlacedShape {
    class_id: usize,
    gt: BBox,
    geometry: ShapeGeometry,
    intensity: f64,
    texture: f64,
}

enum ShapeGeometry {
    Rect(BBox),
    Disc { cx: f64, cy: f64, r: f64 },
    Polygon(Vec<(f64, f64)>),
}

impl ShapeGeometry {
    fn contains(&self, px: f64, py: f64) -> bool {
        match self {
            ShapeGeometry::Rect(b) => px >= b.x1 && px <= b.x2 && py >= b.y1 && py <= b.y2,
            ShapeGeometry::Disc { cx, cy, r } => {
                let (dx, dy) = (px - cx, py - cy);
                dx * dx + dy * dy <= r * r
            }
            ShapeGeometry::Polygon(verts) => {
                // convex polygon with counter-clockwise vertices
                for i in 0..verts.len() {
                    let (x1, y1) = verts[i];
                    let (x2, y2) = verts[(i + 1) % verts.len()];
                    if (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1) < 0.0 {
                        return false;
                    }
                }
                true
            }
        }
    }
}

fn sample_shape(spec: &ClassSpec, class_id: usize, cfg: &DatasetConfig, rng: &mut Rng) -> Option<PlacedShape> {
    let size = rngutil::uniform_in(rng, spec.size_range.0, spec.size_range.1);
    let intensity = rngutil::uniform_in(rng, spec.intensity_range.0, spec.intensity_range.1);
    let (w, h) = match spec.shape {
        ShapeFamily::HorizontalBar => {
            let aspect = rngutil::uniform_in(rng, spec.aspect_range.0, spec.aspect_range.1);
            ((size * aspect).min(cfg.image_w as f64 - 4.0), size)
        }
        _ => (size, size),
    };
    if w + 2.0 >= cfg.image_w as f64 || h + 2.0 >= cfg.image_h as f64 {
        return None;
    }
    let cx = rngutil::uniform_in(rng, 1.0 + w / 2.0, cfg.image_w as f64 - 1.0 - w / 2.0);
    let cy = rngutil::uniform_in(rng, 1.0 + h / 2.0, cfg.image_h as f64 - 1.0 - h / 2.0);

    let (geometry, gt) = match spec.shape {
        ShapeFamily::Square | ShapeFamily::HorizontalBar => {
            let b = BBox::from_center_size(cx, cy, w, h).ok()?;
            (ShapeGeometry::Rect(b), b)
        }
        ShapeFamily::Circle | ShapeFamily::Dot => {
            let r = size / 2.0;
            let b = BBox::from_center_size(cx, cy, size, size).ok()?;
            (ShapeGeometry::Disc { cx, cy, r }, b)
        }
        ShapeFamily::RegularPolygon { sides } => {
            let r = size / 2.0;
            // canonical orientation plus a small jitter keeps the pair
            // separable in principle while staying visually confusable
            let jitter = rngutil::uniform_in(rng, -0.26, 0.26);
            let theta0 = core::f64::consts::FRAC_PI_2 + jitter;
            let mut verts = Vec::with_capacity(sides);
            for k in 0..sides {
                let a = theta0 + core::f64::consts::TAU * k as f64 / sides as f64;
                verts.push((cx + r * fmath::cos(a), cy + r * fmath::sin(a)));
            }
            let (mut x1, mut y1, mut x2, mut y2) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for &(x, y) in &verts {
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x);
                y2 = y2.max(y);
            }
            let b = BBox::new(x1, y1, x2, y2).ok()?;
            (ShapeGeometry::Polygon(verts), b)
        }
    };
    Some(PlacedShape { class_id, gt, geometry, intensity, texture: spec.texture_noise })
}

fn render_background(cfg: &DatasetConfig, rng: &mut Rng) -> Vec<f64> {
    let (w, h) = (cfg.image_w, cfg.image_h);
    // low-frequency field: coarse grid, bilinear upsample
    let cell = 8usize;
    let (gw, gh) = (w / cell + 2, h / cell + 2);
    let mut grid = Vec::with_capacity(gw * gh);
    for _ in 0..gw * gh {
        grid.push(rngutil::uniform_in(rng, 0.30, 0.50));
    }
    let mut img = Vec::with_capacity(w * h);
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let gy = fy as usize;
        let ty = fy - gy as f64;
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let gx = fx as usize;
            let tx = fx - gx as f64;
            let v00 = grid[gy * gw + gx];
            let v01 = grid[gy * gw + gx + 1];
            let v10 = grid[(gy + 1) * gw + gx];
            let v11 = grid[(gy + 1) * gw + gx + 1];
            let v = v00 * (1.0 - ty) * (1.0 - tx) + v01 * (1.0 - ty) * tx + v10 * ty * (1.0 - tx) + v11 * ty * tx;
            img.push(v);
        }
    }
    // per-pixel sensor noise
    for v in &mut img {
        *v = (*v + 0.015 * rngutil::normal01(rng)).clamp(0.0, 1.0);
    }
    img
}

/// Thin random polylines, faint blobs and object-like clutter (rings and
/// crosses) that belongs to no class.
fn render_scribbles(img: &mut [f64], cfg: &DatasetConfig, rng: &mut Rng) {
    let (w, h) = (cfg.image_w as f64, cfg.image_h as f64);
    // rings: bright annuli — round like discs but hollow
    let n_rings = rngutil::uniform_usize(rng, 3);
    for _ in 0..n_rings {
        let r_out = rngutil::uniform_in(rng, 4.0, 9.0);
        let r_in = r_out - rngutil::uniform_in(rng, 1.5, 2.5);
        let cx = rngutil::uniform_in(rng, r_out + 1.0, w - r_out - 1.0);
        let cy = rngutil::uniform_in(rng, r_out + 1.0, h - r_out - 1.0);
        let v = rngutil::uniform_in(rng, 0.55, 0.85);
        for py in (cy - r_out) as usize..=((cy + r_out) as usize).min(cfg.image_h - 1) {
            for px in (cx - r_out) as usize..=((cx + r_out) as usize).min(cfg.image_w - 1) {
                let dx = px as f64 + 0.5 - cx;
                let dy = py as f64 + 0.5 - cy;
                let d = (dx * dx + dy * dy).sqrt();
                if d <= r_out && d >= r_in {
                    img[py * cfg.image_w + px] = v;
                }
            }
        }
    }
    // crosses: two crossing thin bright strokes
    let n_crosses = rngutil::uniform_usize(rng, 3);
    for _ in 0..n_crosses {
        let arm = rngutil::uniform_in(rng, 4.0, 7.0);
        let thick = rngutil::uniform_in(rng, 1.0, 1.5);
        let cx = rngutil::uniform_in(rng, arm + 1.0, w - arm - 1.0);
        let cy = rngutil::uniform_in(rng, arm + 1.0, h - arm - 1.0);
        let v = rngutil::uniform_in(rng, 0.55, 0.85);
        for py in (cy - arm) as usize..=((cy + arm) as usize).min(cfg.image_h - 1) {
            for px in (cx - arm) as usize..=((cx + arm) as usize).min(cfg.image_w - 1) {
                let dx = fmath::abs(px as f64 + 0.5 - cx);
                let dy = fmath::abs(py as f64 + 0.5 - cy);
                if (dx <= thick && dy <= arm) || (dy <= thick && dx <= arm) {
                    img[py * cfg.image_w + px] = v;
                }
            }
        }
    }
    // faint soft blobs, dimmer than any class intensity
    let n_blobs = rngutil::uniform_usize(rng, 3);
    for _ in 0..n_blobs {
        let cx = rngutil::uniform_in(rng, 6.0, w - 6.0);
        let cy = rngutil::uniform_in(rng, 6.0, h - 6.0);
        let r = rngutil::uniform_in(rng, 3.0, 8.0);
        let delta = rngutil::uniform_in(rng, 0.06, 0.12);
        let (x_lo, x_hi) = ((cx - r).max(0.0) as usize, ((cx + r).min(w - 1.0)) as usize);
        let (y_lo, y_hi) = ((cy - r).max(0.0) as usize, ((cy + r).min(h - 1.0)) as usize);
        for py in y_lo..=y_hi {
            for px in x_lo..=x_hi {
                let dx = px as f64 + 0.5 - cx;
                let dy = py as f64 + 0.5 - cy;
                let d2 = (dx * dx + dy * dy) / (r * r);
                if d2 < 1.0 {
                    let p = &mut img[py * cfg.image_w + px];
                    *p = (*p + delta * (1.0 - d2)).clamp(0.0, 1.0);
                }
            }
        }
    }
    let n = 2 + rngutil::uniform_usize(rng, 5);
    for _ in 0..n {
        let mut x = rngutil::uniform_in(rng, 2.0, w - 2.0);
        let mut y = rngutil::uniform_in(rng, 2.0, h - 2.0);
        let delta = rngutil::uniform_in(rng, 0.12, 0.22) * if rngutil::uniform01(rng) < 0.5 { -1.0 } else { 1.0 };
        let segments = 3 + rngutil::uniform_usize(rng, 4);
        for _ in 0..segments {
            let len = rngutil::uniform_in(rng, 3.0, 8.0);
            let ang = rngutil::uniform_in(rng, 0.0, core::f64::consts::TAU);
            let (nx, ny) = (
                (x + len * fmath::cos(ang)).clamp(1.0, w - 1.0),
                (y + len * fmath::sin(ang)).clamp(1.0, h - 1.0),
            );
            let steps = (len * 2.0) as usize + 1;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let px = x + (nx - x) * t;
                let py = y + (ny - y) * t;
                let (ix, iy) = (px as usize, py as usize);
                if ix < cfg.image_w && iy < cfg.image_h {
                    let p = &mut img[iy * cfg.image_w + ix];
                    *p = (*p + delta).clamp(0.0, 1.0);
                }
            }
            x = nx;
            y = ny;
        }
    }
}

fn generate_image(cfg: &DatasetConfig, index: usize) -> Result<Sample> {
    let mut rng = rngutil::substream(cfg.seed, 1 + index as u64);
    let mut gray = render_background(cfg, &mut rng);
    render_scribbles(&mut gray, cfg, &mut rng);

    let span = cfg.objects_max - cfg.objects_min + 1;
    let n_objects = cfg.objects_min + rngutil::uniform_usize(&mut rng, span);
    let mut placed: Vec<PlacedShape> = Vec::with_capacity(n_objects);
    let mut attempts = 0usize;
    while placed.len() < n_objects {
        attempts += 1;
        if attempts > 1000 {
            return Err(Error::PlacementInfeasible {
                image_index: index,
                relax: "objects_min/objects_max, size_range or image_w/image_h",
            });
        }
        let class_id = rngutil::uniform_usize(&mut rng, cfg.n_classes);
        let Some(shape) = sample_shape(&cfg.class_specs[class_id], class_id, cfg, &mut rng) else {
            continue;
        };
        if placed.iter().any(|p| iou(&p.gt, &shape.gt) > 0.3) {
            continue;
        }
        placed.push(shape);
    }

    for shape in &placed {
        let b = &shape.gt;
        let x_lo = (b.x1.max(0.0)) as usize;
        let y_lo = (b.y1.max(0.0)) as usize;
        let x_hi = (fmath::floor(b.x2).min(cfg.image_w as f64 - 1.0)) as usize;
        let y_hi = (fmath::floor(b.y2).min(cfg.image_h as f64 - 1.0)) as usize;
        for py in y_lo..=y_hi {
            for px in x_lo..=x_hi {
                if shape.geometry.contains(px as f64 + 0.5, py as f64 + 0.5) {
                    let v = shape.intensity + shape.texture * rngutil::normal01(&mut rng);
                    gray[py * cfg.image_w + px] = v.clamp(0.0, 1.0);
                }
            }
        }
    }

    // grayscale replicated over three channels
    let mut data = Vec::with_capacity(3 * gray.len());
    for _ in 0..3 {
        data.extend_from_slice(&gray);
    }
    let image = Tensor::from_vec(&[3, cfg.image_h, cfg.image_w], data)?;
    let gts = placed
        .iter()
        .map(|p| (clip_to_image(&p.gt, cfg.image_w as f64, cfg.image_h as f64), p.class_id))
        .collect();
    Ok(Sample { image, gts })
}

/// Generates a split deterministically from its config.
pub fn generate_dataset(cfg: &DatasetConfig, split: &str) -> Result<DetDataset> {
    cfg.validate()?;
    let mut samples = Vec::with_capacity(cfg.n_images);
    for i in 0..cfg.n_images {
        samples.push(generate_image(cfg, i)?);
    }
    Ok(DetDataset { samples, split: split.into(), config: cfg.clone() })
}

/// Parses an external proposal file: one record per line,
/// `image_id x1 y1 x2 y2 [score]`, `#`-prefixed comment lines skipped.
/// Image ids must exist in `valid_ids`; scores default to 1.0.
pub fn parse_external_proposals(
    text: &str,
    valid_ids: &alloc::collections::BTreeSet<String>,
) -> Result<BTreeMap<String, Vec<ScoredBox>>> {
    let mut out: BTreeMap<String, Vec<ScoredBox>> = BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 && fields.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                message: alloc::format!("expected 5 or 6 fields, got {}", fields.len()),
            });
        }
        let id = fields[0];
        if !valid_ids.contains(id) {
            return Err(Error::UnknownImageId(id.into()));
        }
        let mut nums = [0.0f64; 5];
        nums[4] = 1.0;
        for (i, f) in fields[1..].iter().enumerate() {
            nums[i] = f
                .parse::<f64>()
                .map_err(|_| Error::Parse { line: line_no, message: alloc::format!("bad number `{f}`") })?;
        }
        let bbox = BBox::new(nums[0], nums[1], nums[2], nums[3])
            .map_err(|e| Error::Parse { line: line_no, message: alloc::format!("{e}") })?;
        if !(0.0..=1.0).contains(&nums[4]) {
            return Err(Error::Parse { line: line_no, message: alloc::format!("score {} outside [0, 1]", nums[4]) });
        }
        out.entry(id.into()).or_default().push(ScoredBox::new(bbox, nums[4]));
    }
    Ok(out)
}

/// Ground-truth boxes perturbed by gaussian coordinate noise; stands in for
/// an external proposal source with good localization.
pub fn jittered_gt_proposals(dataset: &DetDataset, sigma: f64, copies: usize, seed: u64) -> Vec<Vec<ScoredBox>> {
    let (w, h) = (dataset.config.image_w as f64, dataset.config.image_h as f64);
    dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, sample)| {
            let mut rng = rngutil::substream(seed, i as u64);
            let mut boxes = Vec::with_capacity(sample.gts.len() * copies);
            for (gt, _) in &sample.gts {
                for _ in 0..copies {
                    let b = BBox {
                        x1: gt.x1 + sigma * rngutil::normal01(&mut rng),
                        y1: gt.y1 + sigma * rngutil::normal01(&mut rng),
                        x2: gt.x2 + sigma * rngutil::normal01(&mut rng),
                        y2: gt.y2 + sigma * rngutil::normal01(&mut rng),
                    };
                    let b = BBox {
                        x1: b.x1.min(b.x2),
                        y1: b.y1.min(b.y2),
                        x2: b.x1.max(b.x2),
                        y2: b.y1.max(b.y2),
                    };
                    boxes.push(ScoredBox::new(clip_to_image(&b, w, h), 1.0));
                }
            }
            boxes
        })
        .collect()
}
