use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PointCloud;

/// Draw `n` points uniformly.
///
/// For `n <= N` the points are drawn without replacement, so `n == N` yields
/// a permutation. For `n > N` every input point appears once and the
/// remaining `n − N` rows are drawn with replacement; the result is shuffled.
/// Per-point labels follow their points.
///
/// # Panics
/// If `n == 0`.
pub fn uniform_sample(cloud: &PointCloud, n: usize, seed: u64) -> PointCloud {
    assert!(n >= 1, "uniform_sample needs n >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cloud.select(&sample_rows(cloud.len(), n, &mut rng))
}

pub(crate) fn sample_rows(total: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    if n <= total {
        index::sample(rng, total, n).into_vec()
    } else {
        let mut rows: Vec<usize> = (0..total).collect();
        rows.extend((0..n - total).map(|_| rng.random_range(0..total)));
        rows.shuffle(rng);
        rows
    }
}
