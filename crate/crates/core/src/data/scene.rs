use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sampling::sample_rows;
use super::{DataError, PointCloud};

/// x, y, z (block-local), r, g, b, nx, ny, nz.
pub const BLOCK_CHANNELS: usize = 9;
/// Cells with fewer points are dropped.
pub const MIN_BLOCK_POINTS: usize = 100;
pub const SCENE_CLASSES: usize = 13;

/// One fixed-size crop of a room.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBlock {
    /// `n × BLOCK_CHANNELS`, row-major.
    pub points: Vec<f32>,
    pub labels: Vec<u16>,
    /// Room row of every block row.
    pub source_rows: Vec<usize>,
    /// Room-frame (x, y) of the cell's lower corner.
    pub origin: [f32; 2],
}

impl SceneBlock {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_cloud(&self) -> PointCloud {
        PointCloud::new(self.points.clone(), BLOCK_CHANNELS)
            .and_then(|c| c.with_part_labels(self.labels.clone()))
            .expect("scene block is a valid cloud")
    }
}

/// Tile the room's xy extent into `block × block` cells and turn each
/// populated cell into blocks of exactly `n` points.
///
/// The room needs at least six channels (xyz, rgb) and per-point labels in
/// `part_labels`. Colors above 1 are taken as 0–255 and rescaled. A cell
/// holding more than `n` points is split into `ceil(count / n)` disjoint
/// random chunks so every kept point lands in some block; each chunk is then
/// sampled up to `n` rows with replacement. Cells below [`MIN_BLOCK_POINTS`]
/// are discarded. Blocks are ordered by cell (x index major, then y).
pub fn split_room_into_blocks(
    room: &PointCloud,
    block: f32,
    n: usize,
    seed: u64,
) -> Result<Vec<SceneBlock>, DataError> {
    if room.channels() < 6 {
        return Err(DataError::Invalid(format!(
            "room needs xyz+rgb (6 channels), got {}",
            room.channels()
        )));
    }
    if !(block > 0.0) || n == 0 {
        return Err(DataError::Invalid(format!(
            "block size {block} and sample count {n} must be positive"
        )));
    }
    let labels = room
        .part_labels
        .as_ref()
        .ok_or_else(|| DataError::Invalid("room has no per-point labels".into()))?;

    let (mut lo, mut hi) = ([f32::INFINITY; 3], [f32::NEG_INFINITY; 3]);
    let mut color_max = 0f32;
    for i in 0..room.len() {
        let p = room.point(i);
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
        color_max = color_max.max(p[3]).max(p[4]).max(p[5]);
    }
    let color_scale = if color_max > 1.0 { 1.0 / 255.0 } else { 1.0 };
    let cells_along = |a: usize| (((hi[a] - lo[a]) / block).ceil() as usize).max(1);
    let (cx, cy) = (cells_along(0), cells_along(1));
    let cell_of = |v: f32, a: usize, count: usize| (((v - lo[a]) / block) as usize).min(count - 1);

    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); cx * cy];
    for i in 0..room.len() {
        let p = room.point(i);
        cells[cell_of(p[0], 0, cx) * cy + cell_of(p[1], 1, cy)].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    for (cell, mut members) in cells.into_iter().enumerate() {
        if members.len() < MIN_BLOCK_POINTS {
            continue;
        }
        let origin = [
            lo[0] + (cell / cy) as f32 * block,
            lo[1] + (cell % cy) as f32 * block,
        ];
        let chunks = members.len().div_ceil(n);
        if chunks > 1 {
            members.shuffle(&mut rng);
        }
        let base = members.len() / chunks;
        let extra = members.len() % chunks;
        let mut start = 0;
        for c in 0..chunks {
            let len = base + usize::from(c < extra);
            let chunk = &members[start..start + len];
            start += len;
            let rows: Vec<usize> = sample_rows(len, n, &mut rng).into_iter().map(|r| chunk[r]).collect();
            let mut points = Vec::with_capacity(n * BLOCK_CHANNELS);
            for &r in &rows {
                let p = room.point(r);
                points.extend_from_slice(&[p[0] - origin[0], p[1] - origin[1], p[2] - lo[2]]);
                points.extend(p[3..6].iter().map(|v| (v * color_scale).clamp(0.0, 1.0)));
                for a in 0..3 {
                    let extent = hi[a] - lo[a];
                    points.push(if extent > 0.0 { (p[a] - lo[a]) / extent } else { 0.0 });
                }
            }
            blocks.push(SceneBlock {
                points,
                labels: rows.iter().map(|&r| labels[r]).collect(),
                source_rows: rows,
                origin,
            });
        }
    }
    if blocks.is_empty() {
        return Err(DataError::NoBlocks {
            min: MIN_BLOCK_POINTS,
        });
    }
    Ok(blocks)
}
