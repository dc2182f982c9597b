//! On-disk dataset layout:
//!
//! ```text
//! <dir>/meta.json
//! <dir>/pools/{labeled,unlabeled,test}/images/NNNNN.png   (8-bit RGB)
//! <dir>/pools/<pool>/annotations.json
//! ```
//!
//! `annotations.json` is an array of `{image, boxes: [{x1,y1,x2,y2,category}]}`
//! records; category ids index the vocabulary in `meta.json` (known
//! categories first).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CategoryVocabulary, DatasetConfig, PoolTag, SamplePools, Scene};
use crate::boxes::BoundingBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const META_SCHEMA: &str = "ossod-dataset/v1";

#[derive(Serialize, Deserialize)]
struct MetaJson {
    schema: String,
    seed: u64,
    vocabulary: CategoryVocabulary,
    counts: PoolCounts,
    config: DatasetConfig,
}

#[derive(Serialize, Deserialize)]
struct PoolCounts {
    labeled: usize,
    unlabeled: usize,
    test: usize,
}

#[derive(Serialize, Deserialize)]
struct AnnotationRecord {
    image: String,
    boxes: Vec<BoxRecord>,
}

#[derive(Serialize, Deserialize)]
struct BoxRecord {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    category: usize,
}

fn pool_name(tag: PoolTag) -> &'static str {
    match tag {
        PoolTag::Labeled => "labeled",
        PoolTag::Unlabeled => "unlabeled",
        PoolTag::Test => "test",
    }
}

fn image_to_png(image: &Tensor<f32>, path: &Path) -> Result<()> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let at = (y * w + x) * 3;
            let px = [
                (image.data()[at] * 255.0).round() as u8,
                (image.data()[at + 1] * 255.0).round() as u8,
                (image.data()[at + 2] * 255.0).round() as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)?;
    Ok(())
}

fn png_to_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            let at = (y * w + x) * 3;
            for c in 0..3 {
                data[at + c] = px[c] as f32 / 255.0;
            }
        }
    }
    Tensor::from_vec(&[h, w, 3], data)
}

fn write_pool(dir: &Path, scenes: &[Scene], tag: PoolTag) -> Result<()> {
    let pool_dir = dir.join("pools").join(pool_name(tag));
    let image_dir = pool_dir.join("images");
    fs::create_dir_all(&image_dir)?;
    let mut records = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let name = format!("{i:05}.png");
        image_to_png(&scene.image, &image_dir.join(&name))?;
        records.push(AnnotationRecord {
            image: name,
            boxes: scene
                .annotations
                .iter()
                .map(|b| BoxRecord {
                    x1: b.x1,
                    y1: b.y1,
                    x2: b.x2,
                    y2: b.y2,
                    category: b.category.expect("annotated box without category"),
                })
                .collect(),
        });
    }
    let json = serde_json::to_string_pretty(&records)?;
    fs::write(pool_dir.join("annotations.json"), json)?;
    Ok(())
}

/// Write all pools plus `meta.json` under `dir` (created if absent).
pub fn write_pools(dir: &Path, pools: &SamplePools) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_pool(dir, &pools.labeled, PoolTag::Labeled)?;
    write_pool(dir, &pools.unlabeled, PoolTag::Unlabeled)?;
    write_pool(dir, &pools.test, PoolTag::Test)?;
    let meta = MetaJson {
        schema: META_SCHEMA.to_string(),
        seed: pools.seed,
        vocabulary: pools.vocab.clone(),
        counts: PoolCounts {
            labeled: pools.labeled.len(),
            unlabeled: pools.unlabeled.len(),
            test: pools.test.len(),
        },
        config: pools.config.clone(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn load_pool(dir: &Path, tag: PoolTag) -> Result<Vec<Scene>> {
    let pool_dir = dir.join("pools").join(pool_name(tag));
    let ann_path = pool_dir.join("annotations.json");
    let text = fs::read_to_string(&ann_path)
        .map_err(|e| Error::Dataset(format!("reading {}: {e}", ann_path.display())))?;
    let records: Vec<AnnotationRecord> = serde_json::from_str(&text)?;
    let mut scenes = Vec::with_capacity(records.len());
    for rec in records {
        let image = png_to_image(&pool_dir.join("images").join(&rec.image))?;
        let annotations = rec
            .boxes
            .iter()
            .map(|b| {
                BoundingBox::new(b.x1, b.y1, b.x2, b.y2).map(|bb| bb.with_category(b.category))
            })
            .collect::<Result<Vec<_>>>()?;
        scenes.push(Scene { image, annotations, pool_tag: tag });
    }
    Ok(scenes)
}

/// Load a dataset directory produced by [`write_pools`].
pub fn load_pools(dir: &Path) -> Result<SamplePools> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path)
        .map_err(|e| Error::Dataset(format!("reading {}: {e}", meta_path.display())))?;
    let meta: MetaJson = serde_json::from_str(&text)?;
    if meta.schema != META_SCHEMA {
        return Err(Error::Dataset(format!(
            "unsupported dataset schema {:?} (expected {META_SCHEMA:?})",
            meta.schema
        )));
    }
    Ok(SamplePools {
        labeled: load_pool(dir, PoolTag::Labeled)?,
        unlabeled: load_pool(dir, PoolTag::Unlabeled)?,
        test: load_pool(dir, PoolTag::Test)?,
        vocab: meta.vocabulary,
        config: meta.config,
        seed: meta.seed,
    })
}
