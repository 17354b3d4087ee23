//! Analytic stand-in datasets: three surface classes, two two-part objects,
//! and box-shaped rooms for scene segmentation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::manifest::{CategoryParts, Dataset, DatasetManifest, SampleRecord, Split, Task};
use super::scene::{split_room_into_blocks, BLOCK_CHANNELS, SCENE_CLASSES};
use super::{DataError, PointCloud};

pub const POINT_NOISE: f64 = 0.01;
pub const SCALE_RANGE: (f64, f64) = (0.8, 1.2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Sphere,
    Cube,
    Cylinder,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Sphere, Shape::Cube, Shape::Cylinder];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Cube => "cube",
            Shape::Cylinder => "cylinder",
        }
    }
}

/// Uniform points on a unit-size surface: sphere of radius 1, cube
/// `[-1, 1]³`, closed cylinder of radius 1 with `z ∈ [-1, 1]`.
pub fn sample_surface(shape: Shape, n: usize, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| match shape {
            Shape::Sphere => loop {
                let v: [f64; 3] = [
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                ];
                let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if r > 1e-9 {
                    break [v[0] / r, v[1] / r, v[2] / r];
                }
            },
            Shape::Cube => {
                let face = rng.random_range(0..6);
                let (u, w) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, u, w],
                    1 => [u, s, w],
                    _ => [u, w, s],
                }
            }
            Shape::Cylinder => cylinder_point(1.0, -1.0, 1.0, true, rng),
        })
        .collect()
}

fn cylinder_point(r: f64, z0: f64, z1: f64, caps: bool, rng: &mut impl Rng) -> [f64; 3] {
    let side = 2.0 * PI * r * (z1 - z0);
    let cap = if caps { PI * r * r } else { 0.0 };
    let t = rng.random_range(0.0..side + 2.0 * cap);
    let theta = rng.random_range(0.0..2.0 * PI);
    if t < side {
        [r * theta.cos(), r * theta.sin(), rng.random_range(z0..=z1)]
    } else {
        let rr = r * rng.random::<f64>().sqrt();
        let z = if t < side + cap { z0 } else { z1 };
        [rr * theta.cos(), rr * theta.sin(), z]
    }
}

fn box_point(center: [f64; 3], half: [f64; 3], rng: &mut impl Rng) -> [f64; 3] {
    let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
    let t = rng.random_range(0.0..areas.iter().sum::<f64>());
    let axis = if t < areas[0] {
        0
    } else if t < areas[0] + areas[1] {
        1
    } else {
        2
    };
    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut p = [0.0; 3];
    for a in 0..3 {
        p[a] = center[a]
            + if a == axis {
                s * half[a]
            } else {
                rng.random_range(-half[a]..=half[a])
            };
    }
    p
}

fn sphere_point(center: [f64; 3], r: f64, rng: &mut impl Rng) -> [f64; 3] {
    let u = sample_surface(Shape::Sphere, 1, rng)[0];
    [center[0] + r * u[0], center[1] + r * u[1], center[2] + r * u[2]]
}

/// Random rotation about z, isotropic scale jitter, Gaussian point noise of
/// standard deviation `sigma`.
fn augment(points: &mut [[f64; 3]], sigma: f64, rng: &mut impl Rng) {
    let theta = rng.random_range(0.0..2.0 * PI);
    let scale = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
    let (s, c) = theta.sin_cos();
    let noise = Normal::new(0.0, sigma).expect("valid sigma");
    for p in points.iter_mut() {
        let (x, y) = (c * p[0] - s * p[1], s * p[0] + c * p[1]);
        *p = [
            scale * x + noise.sample(rng),
            scale * y + noise.sample(rng),
            scale * p[2] + noise.sample(rng),
        ];
    }
}

fn to_cloud(points: &[[f64; 3]]) -> PointCloud {
    PointCloud::new(points.iter().flat_map(|p| p.map(|v| v as f32)).collect(), 3)
        .expect("synthetic points are finite")
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn split_for(j: usize, per_group: usize, test_fraction: f64) -> Split {
    let train = ((per_group as f64) * (1.0 - test_fraction.clamp(0.0, 1.0))).round() as usize;
    if j < train {
        Split::Train
    } else {
        Split::Test
    }
}

fn record(i: usize, split: Split) -> SampleRecord {
    SampleRecord {
        path: format!("sample_{i:05}.pgrc"),
        split,
    }
}

/// `num_per_class` samples of each [`Shape`], `n_points` points each. The last
/// `test_fraction` of every class is tagged `test`.
pub fn make_synthetic_classification(num_per_class: usize, n_points: usize, seed: u64, test_fraction: f64) -> Dataset {
    make_noisy_classification(num_per_class, n_points, POINT_NOISE, seed, test_fraction)
}

/// [`make_synthetic_classification`] with point noise of standard deviation
/// `noise` instead of [`POINT_NOISE`].
///
/// # Panics
/// If `noise` is negative or not finite.
pub fn make_noisy_classification(
    num_per_class: usize,
    n_points: usize,
    noise: f64,
    seed: u64,
    test_fraction: f64,
) -> Dataset {
    assert!(noise.is_finite() && noise >= 0.0, "noise must be finite and >= 0");
    let mut records = Vec::new();
    let mut samples = Vec::new();
    for j in 0..num_per_class {
        for (class, &shape) in Shape::ALL.iter().enumerate() {
            let i = samples.len();
            let mut rng = sample_rng(seed, i);
            let mut pts = sample_surface(shape, n_points, &mut rng);
            augment(&mut pts, noise, &mut rng);
            samples.push(to_cloud(&pts).with_class(class as u16));
            records.push(record(i, split_for(j, num_per_class, test_fraction)));
        }
    }
    Dataset {
        manifest: DatasetManifest {
            task: Task::Classification,
            num_classes: Shape::ALL.len(),
            channels: 3,
            category_parts: None,
            records,
        },
        samples,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartObject {
    /// Handle (part 0) and head (part 1).
    Hammer,
    /// Stick (part 2) and candy (part 3).
    Lollipop,
}

impl PartObject {
    pub const ALL: [PartObject; 2] = [PartObject::Hammer, PartObject::Lollipop];

    pub fn parts(self) -> [u16; 2] {
        match self {
            PartObject::Hammer => [0, 1],
            PartObject::Lollipop => [2, 3],
        }
    }
}

pub fn synthetic_category_parts() -> CategoryParts {
    CategoryParts(PartObject::ALL.iter().map(|o| o.parts().to_vec()).collect())
}

/// Clean object surface points with their part labels, before augmentation.
pub fn sample_part_object(object: PartObject, n: usize, rng: &mut impl Rng) -> (Vec<[f64; 3]>, Vec<u16>) {
    let (stick_r, stick_top, area_stick, area_head) = match object {
        PartObject::Hammer => (0.1, 0.6, 2.0 * PI * 0.1 * 1.6, 2.0 * (0.3 + 0.3 + 0.09)),
        PartObject::Lollipop => (0.05, 0.4, 2.0 * PI * 0.05 * 1.4, 4.0 * PI * 0.09),
    };
    let [p_stick, p_head] = object.parts();
    let mut pts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.random_range(0.0..area_stick + area_head) < area_stick {
            pts.push(cylinder_point(stick_r, -1.0, stick_top, false, rng));
            labels.push(p_stick);
        } else {
            pts.push(match object {
                PartObject::Hammer => box_point([0.0, 0.0, 0.75], [0.5, 0.15, 0.15], rng),
                PartObject::Lollipop => sphere_point([0.0, 0.0, 0.7], 0.3, rng),
            });
            labels.push(p_head);
        }
    }
    (pts, labels)
}

/// `num_per_category` samples of each [`PartObject`]; four parts in total.
pub fn make_synthetic_partseg(num_per_category: usize, n_points: usize, seed: u64, test_fraction: f64) -> Dataset {
    let mut records = Vec::new();
    let mut samples = Vec::new();
    for j in 0..num_per_category {
        for (cat, &object) in PartObject::ALL.iter().enumerate() {
            let i = samples.len();
            let mut rng = sample_rng(seed, i);
            let (mut pts, labels) = sample_part_object(object, n_points, &mut rng);
            augment(&mut pts, POINT_NOISE, &mut rng);
            let cloud = to_cloud(&pts)
                .with_category(cat as u16)
                .with_part_labels(labels)
                .expect("one label per point");
            samples.push(cloud);
            records.push(record(i, split_for(j, num_per_category, test_fraction)));
        }
    }
    Dataset {
        manifest: DatasetManifest {
            task: Task::PartSeg,
            num_classes: 4,
            channels: 3,
            category_parts: Some(synthetic_category_parts()),
            records,
        },
        samples,
    }
}

const CEILING: u16 = 0;
const FLOOR: u16 = 1;
const WALL: u16 = 2;
const TABLE: u16 = 7;
const BOOKCASE: u16 = 10;
const CLUTTER: u16 = 12;

fn class_color(label: u16) -> [f64; 3] {
    match label {
        CEILING => [230.0, 230.0, 220.0],
        FLOOR => [120.0, 90.0, 60.0],
        WALL => [200.0, 200.0, 180.0],
        TABLE => [160.0, 110.0, 40.0],
        BOOKCASE => [60.0, 60.0, 140.0],
        _ => [90.0, 160.0, 90.0],
    }
}

/// Box room of `width × depth × 2.5` m: floor, ceiling, four walls, a table,
/// a bookcase against a wall and scattered clutter. Six channels (xyz, rgb
/// in 0–255) with per-point semantic labels in `part_labels`. `density` is
/// points per square metre of surface.
pub fn make_synthetic_room(width: f64, depth: f64, density: f64, seed: u64) -> PointCloud {
    const HEIGHT: f64 = 2.5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<[f64; 3]> = Vec::new();
    let mut labels = Vec::new();
    let count = |area: f64| (area * density).round() as usize;

    let plane = |pts: &mut Vec<[f64; 3]>, labels: &mut Vec<u16>, rng: &mut ChaCha8Rng, label, area: f64, f: &dyn Fn(f64, f64) -> [f64; 3]| {
        for _ in 0..count(area) {
            pts.push(f(rng.random(), rng.random()));
            labels.push(label);
        }
    };
    plane(&mut pts, &mut labels, &mut rng, FLOOR, width * depth, &|u, v| [u * width, v * depth, 0.0]);
    plane(&mut pts, &mut labels, &mut rng, CEILING, width * depth, &|u, v| [u * width, v * depth, HEIGHT]);
    plane(&mut pts, &mut labels, &mut rng, WALL, width * HEIGHT, &|u, v| [u * width, 0.0, v * HEIGHT]);
    plane(&mut pts, &mut labels, &mut rng, WALL, width * HEIGHT, &|u, v| [u * width, depth, v * HEIGHT]);
    plane(&mut pts, &mut labels, &mut rng, WALL, depth * HEIGHT, &|u, v| [0.0, v * depth, u * HEIGHT]);
    plane(&mut pts, &mut labels, &mut rng, WALL, depth * HEIGHT, &|u, v| [width, v * depth, u * HEIGHT]);

    let solid = |pts: &mut Vec<[f64; 3]>, labels: &mut Vec<u16>, rng: &mut ChaCha8Rng, label, center: [f64; 3], half: [f64; 3]| {
        let area = 8.0 * (half[0] * half[1] + half[0] * half[2] + half[1] * half[2]);
        for _ in 0..count(area) {
            pts.push(box_point(center, half, rng));
            labels.push(label);
        }
    };
    let tx = rng.random_range(0.3..0.7) * width;
    let ty = rng.random_range(0.3..0.7) * depth;
    solid(&mut pts, &mut labels, &mut rng, TABLE, [tx, ty, 0.72], [0.6, 0.4, 0.03]);
    let bx = rng.random_range(0.2..0.8) * width;
    solid(&mut pts, &mut labels, &mut rng, BOOKCASE, [bx, 0.2, 1.0], [0.4, 0.18, 1.0]);
    for _ in 0..3 {
        let c = [
            rng.random_range(0.1..0.9) * width,
            rng.random_range(0.1..0.9) * depth,
            0.15,
        ];
        solid(&mut pts, &mut labels, &mut rng, CLUTTER, c, [0.15, 0.15, 0.15]);
    }

    let jitter = Normal::new(0.0, 8.0).expect("valid sigma");
    let mut data = Vec::with_capacity(pts.len() * 6);
    for (p, &l) in pts.iter().zip(&labels) {
        data.extend(p.iter().map(|&v| v as f32));
        data.extend(
            class_color(l)
                .iter()
                .map(|&c| (c + jitter.sample(&mut rng)).clamp(0.0, 255.0) as f32),
        );
    }
    PointCloud::new(data, 6)
        .and_then(|c| c.with_part_labels(labels))
        .expect("room is a valid cloud")
}

/// Rooms of random size in `[3, 5) × [3, 5)` m cut into `n_points` blocks.
/// The last `test_fraction` of the rooms are tagged `test`.
pub fn make_synthetic_scenes(
    rooms: usize,
    n_points: usize,
    density: f64,
    seed: u64,
    test_fraction: f64,
) -> Result<Dataset, DataError> {
    let mut records = Vec::new();
    let mut samples = Vec::new();
    for r in 0..rooms {
        let mut rng = sample_rng(seed, r);
        let (w, d) = (rng.random_range(3.0..5.0), rng.random_range(3.0..5.0));
        let room = make_synthetic_room(w, d, density, rng.random());
        let split = split_for(r, rooms, test_fraction);
        for block in split_room_into_blocks(&room, 1.0, n_points, rng.random())? {
            records.push(record(samples.len(), split));
            samples.push(block.to_cloud());
        }
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            task: Task::SceneSeg,
            num_classes: SCENE_CLASSES,
            channels: BLOCK_CHANNELS,
            category_parts: None,
            records,
        },
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_and_cylinder_points_lie_on_their_surfaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in sample_surface(Shape::Cube, 500, &mut rng) {
            let m = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!((m - 1.0).abs() < 1e-12);
        }
        for p in sample_surface(Shape::Cylinder, 500, &mut rng) {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 1.0).abs() < 1e-12 || (p[2].abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn part_labels_follow_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (pts, labels) = sample_part_object(PartObject::Lollipop, 400, &mut rng);
        for (p, l) in pts.iter().zip(labels) {
            let on_candy = ((p[0] * p[0] + p[1] * p[1] + (p[2] - 0.7).powi(2)).sqrt() - 0.3).abs() < 1e-9;
            assert_eq!(on_candy, l == 3);
        }
        let (pts, labels) = sample_part_object(PartObject::Hammer, 400, &mut rng);
        for (p, l) in pts.iter().zip(labels) {
            let on_handle = ((p[0] * p[0] + p[1] * p[1]).sqrt() - 0.1).abs() < 1e-9 && p[2] <= 0.6;
            assert_eq!(on_handle, l == 0);
        }
    }

    #[test]
    fn room_labels_in_range() {
        let room = make_synthetic_room(3.0, 3.0, 50.0, 4);
        assert_eq!(room.channels(), 6);
        assert!(room.part_labels.as_ref().unwrap().iter().all(|&l| (l as usize) < SCENE_CLASSES));
    }
}
