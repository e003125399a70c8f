//! On-disk dataset layout: one directory per split holding `meta.json`
//! (config + split tag), `images.bin` (indexed, little-endian f64 tensors)
//! and `gt.jsonl` (one record per image). Round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cascadet::geometry::BBox;
use cascadet::synthdata::{DatasetConfig, DetDataset, Sample};
use cascadet::tinynet::Tensor;

const IMAGES_MAGIC: &[u8; 8] = b"CTIMGS\x00\x01";

#[derive(Serialize, Deserialize)]
struct Meta {
    config: DatasetConfig,
    split: String,
}

#[derive(Serialize, Deserialize)]
struct GtRecord {
    id: String,
    boxes: Vec<[f64; 4]>,
    labels: Vec<usize>,
}

pub fn write_dataset(ds: &DetDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let meta = Meta { config: ds.config.clone(), split: ds.split.clone() };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;

    let mut images = Vec::new();
    images.extend_from_slice(IMAGES_MAGIC);
    images.extend_from_slice(&(ds.samples.len() as u32).to_le_bytes());
    for s in &ds.samples {
        let shape = s.image.shape();
        for &d in shape {
            images.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for s in &ds.samples {
        for v in s.image.data() {
            images.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(dir.join("images.bin"))?;
    f.write_all(&images)?;

    let mut gt = String::new();
    for (i, s) in ds.samples.iter().enumerate() {
        let rec = GtRecord {
            id: DetDataset::image_id(i),
            boxes: s.gts.iter().map(|(b, _)| [b.x1, b.y1, b.x2, b.y2]).collect(),
            labels: s.gts.iter().map(|(_, c)| *c).collect(),
        };
        gt.push_str(&serde_json::to_string(&rec)?);
        gt.push('\n');
    }
    std::fs::write(dir.join("gt.jsonl"), gt)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<DetDataset> {
    let meta: Meta = serde_json::from_str(
        &std::fs::read_to_string(dir.join("meta.json"))
            .with_context(|| format!("no dataset at {} (run gen-data first)", dir.display()))?,
    )?;

    let mut raw = Vec::new();
    std::fs::File::open(dir.join("images.bin"))?.read_to_end(&mut raw)?;
    if raw.len() < 12 || &raw[..8] != IMAGES_MAGIC {
        bail!("images.bin: bad magic");
    }
    let count = u32::from_le_bytes(raw[8..12].try_into().unwrap()) as usize;
    let mut off = 12;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = u32::from_le_bytes(raw[off..off + 4].try_into().unwrap()) as usize;
            off += 4;
        }
        shapes.push(dims);
    }

    let gt_text = std::fs::read_to_string(dir.join("gt.jsonl"))?;
    let mut gt_records = Vec::with_capacity(count);
    for (ln, line) in gt_text.lines().enumerate() {
        let rec: GtRecord =
            serde_json::from_str(line).with_context(|| format!("gt.jsonl line {}", ln + 1))?;
        gt_records.push(rec);
    }
    if gt_records.len() != count {
        bail!("gt.jsonl has {} records but images.bin holds {count}", gt_records.len());
    }

    let mut samples = Vec::with_capacity(count);
    for (shape, rec) in shapes.iter().zip(gt_records.into_iter()) {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(raw[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        let image = Tensor::from_vec(&[shape[0], shape[1], shape[2]], data)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let mut gts = Vec::with_capacity(rec.boxes.len());
        for (b, c) in rec.boxes.iter().zip(rec.labels.iter()) {
            gts.push((BBox::new(b[0], b[1], b[2], b[3]).map_err(|e| anyhow::anyhow!("{e}"))?, *c));
        }
        samples.push(Sample { image, gts });
    }
    Ok(DetDataset { samples, split: meta.split, config: meta.config })
}
