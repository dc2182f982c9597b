//! Deterministic scene rendering.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DatasetConfig, PoolTag, SamplePools, Scene};
use crate::boxes::{iou, BoundingBox};
use crate::error::Result;
use crate::rng::stream_rng;
use crate::tensor::Tensor;

/// Shape palette; categories map onto it by name, falling back to id order
/// for unrecognized names.
#[derive(Clone, Copy, Debug)]
enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Cross,
    Star,
    Ring,
    Diamond,
    Bars,
}

const PALETTE: [ShapeKind; 8] = [
    ShapeKind::Circle,
    ShapeKind::Square,
    ShapeKind::Triangle,
    ShapeKind::Cross,
    ShapeKind::Star,
    ShapeKind::Ring,
    ShapeKind::Diamond,
    ShapeKind::Bars,
];

fn shape_for(name: &str, id: usize) -> ShapeKind {
    match name {
        "circle" => ShapeKind::Circle,
        "square" => ShapeKind::Square,
        "triangle" => ShapeKind::Triangle,
        "cross" => ShapeKind::Cross,
        "star" => ShapeKind::Star,
        "ring" => ShapeKind::Ring,
        "diamond" => ShapeKind::Diamond,
        "bars" => ShapeKind::Bars,
        _ => PALETTE[id % PALETTE.len()],
    }
}

impl ShapeKind {
    /// Membership test around the shape center with half-size `h`.
    fn contains(self, dx: f64, dy: f64, h: f64) -> bool {
        match self {
            ShapeKind::Circle => dx * dx + dy * dy <= h * h,
            ShapeKind::Square => dx.abs() <= h && dy.abs() <= h,
            // apex up, base down
            ShapeKind::Triangle => dy.abs() <= h && dx.abs() <= (dy + h) / 2.0,
            ShapeKind::Cross => {
                (dx.abs() <= h / 3.0 && dy.abs() <= h) || (dy.abs() <= h / 3.0 && dx.abs() <= h)
            }
            // hexagram: up triangle plus down triangle
            ShapeKind::Star => {
                dy.abs() <= h && (dx.abs() <= (dy + h) / 2.0 || dx.abs() <= (h - dy) / 2.0)
            }
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= h * h && d2 >= (0.55 * h) * (0.55 * h)
            }
            ShapeKind::Diamond => dx.abs() + dy.abs() <= h,
            ShapeKind::Bars => {
                dy.abs() <= h && (((-h)..=(-h / 3.0)).contains(&dx) || ((h / 3.0)..=h).contains(&dx))
            }
        }
    }
}

struct ObjectSpec {
    category: usize,
    shape: ShapeKind,
    cx: f64,
    cy: f64,
    size: f64,
    color: [f64; 3],
}

/// Snap to the 8-bit intensity grid (what a PNG round trip would produce).
fn quantize(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

fn draw_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let hi = rng.random_range(0.70..1.0);
    let mid = rng.random_range(0.10..0.90);
    let lo = rng.random_range(0.0..0.30);
    let mut color = [hi, mid, lo];
    // random channel permutation
    for i in (1..3).rev() {
        let j = rng.random_range(0..=i);
        color.swap(i, j);
    }
    color
}

fn render_scene(
    cfg: &DatasetConfig,
    pool: PoolTag,
    rng: &mut ChaCha8Rng,
) -> Scene {
    let size = cfg.image_size;
    let shifted = pool != PoolTag::Labeled;
    let brightness = cfg.labeled_brightness + if shifted { cfg.shift_brightness } else { 0.0 };
    let sigma = cfg.labeled_noise * if shifted { cfg.noise_scale } else { 1.0 };

    // object layout first so all pools consume draws in the same order
    let n_known = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let contaminated = shifted && cfg.unknown_rate > 0.0 && rng.random_range(0.0..1.0) < cfg.unknown_rate;
    let n_unknown = if contaminated { rng.random_range(1..=cfg.max_unknown_objects.max(1)) } else { 0 };

    let mut objects: Vec<ObjectSpec> = Vec::new();
    let place = |category: usize, name: &str, rng: &mut ChaCha8Rng, objects: &mut Vec<ObjectSpec>| {
        let s = rng.random_range(cfg.object_size_min..=cfg.object_size_max);
        let half = s / 2.0;
        let lo = half + 1.0;
        let hi = size as f64 - half - 1.0;
        let mut cx = rng.random_range(lo..hi);
        let mut cy = rng.random_range(lo..hi);
        for _ in 0..16 {
            let candidate = BoundingBox::new(cx - half, cy - half, cx + half, cy + half).unwrap();
            let overlaps = objects.iter().any(|o| {
                let oh = o.size / 2.0;
                let other =
                    BoundingBox::new(o.cx - oh, o.cy - oh, o.cx + oh, o.cy + oh).unwrap();
                iou(&candidate, &other) > 0.25
            });
            if !overlaps {
                break;
            }
            cx = rng.random_range(lo..hi);
            cy = rng.random_range(lo..hi);
        }
        let color = draw_color(rng);
        objects.push(ObjectSpec { category, shape: shape_for(name, category), cx, cy, size: s, color });
    };

    for _ in 0..n_known {
        let k = rng.random_range(0..cfg.known.len());
        place(k, &cfg.known[k].clone(), rng, &mut objects);
    }
    for _ in 0..n_unknown {
        let u = rng.random_range(0..cfg.unknown.len().max(1)).min(cfg.unknown.len().saturating_sub(1));
        let category = cfg.known.len() + u;
        place(category, &cfg.unknown[u].clone(), rng, &mut objects);
    }

    // background with per-pixel gaussian noise
    let normal = Normal::new(0.0f64, sigma.max(0.0)).expect("noise sigma");
    let mut data = vec![0f32; size * size * 3];
    for px in data.iter_mut() {
        *px = quantize(brightness + normal.sample(rng));
    }

    // paint objects over the background, later objects occlude earlier ones
    for obj in &objects {
        let half = obj.size / 2.0;
        let x_lo = (obj.cx - half).floor().max(0.0) as usize;
        let x_hi = ((obj.cx + half).ceil() as usize).min(size);
        let y_lo = (obj.cy - half).floor().max(0.0) as usize;
        let y_hi = ((obj.cy + half).ceil() as usize).min(size);
        for py in y_lo..y_hi {
            for px in x_lo..x_hi {
                let dx = px as f64 + 0.5 - obj.cx;
                let dy = py as f64 + 0.5 - obj.cy;
                if obj.shape.contains(dx, dy, half) {
                    let at = (py * size + px) * 3;
                    for c in 0..3 {
                        data[at + c] = quantize(obj.color[c]);
                    }
                }
            }
        }
    }

    let keep_unknown = pool != PoolTag::Test;
    let annotations = objects
        .iter()
        .filter(|o| keep_unknown || o.category < cfg.known.len())
        .map(|o| {
            let half = o.size / 2.0;
            BoundingBox::new(o.cx - half, o.cy - half, o.cx + half, o.cy + half)
                .expect("object box")
                .with_category(o.category)
        })
        .collect();

    Scene {
        image: Tensor::from_vec(&[size, size, 3], data).expect("scene image"),
        annotations,
        pool_tag: pool,
    }
}

/// Generate the three pools deterministically from `(config, seed)`.
pub fn generate_pools(cfg: &DatasetConfig, seed: u64) -> Result<SamplePools> {
    cfg.validate()?;
    let gen_pool = |tag: PoolTag, count: usize, stream: &str| -> Vec<Scene> {
        (0..count)
            .map(|i| {
                let mut rng = stream_rng(seed, stream, i as u64);
                render_scene(cfg, tag, &mut rng)
            })
            .collect()
    };
    Ok(SamplePools {
        labeled: gen_pool(PoolTag::Labeled, cfg.n_labeled, "scene/labeled"),
        unlabeled: gen_pool(PoolTag::Unlabeled, cfg.n_unlabeled, "scene/unlabeled"),
        test: gen_pool(PoolTag::Test, cfg.n_test, "scene/test"),
        vocab: cfg.vocabulary(),
        config: cfg.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::pool_statistics;

    fn small_cfg() -> DatasetConfig {
        DatasetConfig {
            n_labeled: 30,
            n_unlabeled: 60,
            n_test: 20,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_pools(&cfg, 7).unwrap();
        let b = generate_pools(&cfg, 7).unwrap();
        for (sa, sb) in a.labeled.iter().zip(b.labeled.iter()) {
            assert_eq!(sa.image, sb.image);
            assert_eq!(sa.annotations, sb.annotations);
        }
        for (sa, sb) in a.unlabeled.iter().zip(b.unlabeled.iter()) {
            assert_eq!(sa.image, sb.image);
        }
        let c = generate_pools(&cfg, 8).unwrap();
        assert_ne!(a.labeled[0].image, c.labeled[0].image);
    }

    #[test]
    fn pool_counts_match_config() {
        let cfg = small_cfg();
        let pools = generate_pools(&cfg, 1).unwrap();
        assert_eq!(pools.labeled.len(), 30);
        assert_eq!(pools.unlabeled.len(), 60);
        assert_eq!(pools.test.len(), 20);
    }

    #[test]
    fn labeled_pool_has_only_known_annotations() {
        let pools = generate_pools(&small_cfg(), 3).unwrap();
        for scene in &pools.labeled {
            assert!(!scene.annotations.is_empty());
            for b in &scene.annotations {
                assert!(pools.vocab.is_known(b.category.unwrap()));
            }
        }
        // test pool only annotates known categories, even in contaminated scenes
        for scene in &pools.test {
            for b in &scene.annotations {
                assert!(pools.vocab.is_known(b.category.unwrap()));
            }
        }
    }

    #[test]
    fn unknown_rate_zero_keeps_unlabeled_clean() {
        let cfg = DatasetConfig { unknown_rate: 0.0, ..small_cfg() };
        let pools = generate_pools(&cfg, 5).unwrap();
        let stats = pool_statistics(&pools.unlabeled, &pools.vocab);
        assert_eq!(stats.contamination_rate, 0.0);
    }

    #[test]
    fn contamination_rate_tracks_config() {
        let cfg = DatasetConfig { n_unlabeled: 400, ..small_cfg() };
        let pools = generate_pools(&cfg, 11).unwrap();
        let stats = pool_statistics(&pools.unlabeled, &pools.vocab);
        assert!(
            (stats.contamination_rate - 0.5).abs() < 0.08,
            "contamination {} too far from 0.5",
            stats.contamination_rate
        );
    }

    #[test]
    fn boxes_stay_inside_image() {
        let pools = generate_pools(&small_cfg(), 9).unwrap();
        let s = pools.config.image_size as f64;
        for scene in pools.labeled.iter().chain(&pools.unlabeled).chain(&pools.test) {
            for b in &scene.annotations {
                assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= s && b.y2 <= s);
            }
        }
    }

    #[test]
    fn background_brightness_shift_is_realized() {
        // Mean intensity over pixels outside every annotated box differs
        // between pools by the configured offset, within 0.02.
        let cfg = DatasetConfig { n_labeled: 60, n_unlabeled: 60, ..small_cfg() };
        let pools = generate_pools(&cfg, 13).unwrap();
        let bg_mean = |scenes: &[Scene]| -> f64 {
            let mut sum = 0.0;
            let mut count = 0usize;
            for scene in scenes {
                let size = cfg.image_size;
                for py in 0..size {
                    for px in 0..size {
                        let inside = scene.annotations.iter().any(|b| {
                            (px as f64 + 0.5) >= b.x1
                                && (px as f64 + 0.5) < b.x2
                                && (py as f64 + 0.5) >= b.y1
                                && (py as f64 + 0.5) < b.y2
                        });
                        if !inside {
                            let at = (py * size + px) * 3;
                            for c in 0..3 {
                                sum += scene.image.data()[at + c] as f64;
                            }
                            count += 3;
                        }
                    }
                }
            }
            sum / count as f64
        };
        let labeled = bg_mean(&pools.labeled);
        let unlabeled = bg_mean(&pools.unlabeled);
        let diff = unlabeled - labeled;
        assert!(
            (diff - cfg.shift_brightness).abs() < 0.02,
            "shift {diff} vs configured {}",
            cfg.shift_brightness
        );
    }

    #[test]
    fn pools_are_disjoint_and_counts_are_additive() {
        let pools = generate_pools(&small_cfg(), 17).unwrap();
        // pools draw from independent streams: no shared images
        for a in pools.labeled.iter().take(10) {
            for b in pools.unlabeled.iter().take(10) {
                assert_ne!(a.image, b.image);
            }
            for b in pools.test.iter().take(10) {
                assert_ne!(a.image, b.image);
            }
        }
        // total object count equals the per-scene sum
        let stats = pool_statistics(&pools.labeled, &pools.vocab);
        let per_scene: usize = pools.labeled.iter().map(|s| s.annotations.len()).sum();
        assert_eq!(stats.total_objects, per_scene);
    }

    #[test]
    fn rejects_bad_configs() {
        let cfg = DatasetConfig { known: vec!["one".into()], ..DatasetConfig::default() };
        assert!(generate_pools(&cfg, 0).is_err());

        let cfg = DatasetConfig { unknown_rate: 1.5, ..DatasetConfig::default() };
        assert!(generate_pools(&cfg, 0).is_err());

        let cfg = DatasetConfig { min_objects: 4, max_objects: 2, ..DatasetConfig::default() };
        assert!(generate_pools(&cfg, 0).is_err());
    }
}
