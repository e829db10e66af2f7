//! Split schemes and the static rank schedule.
//!
//! Everything here is a pure function of its arguments, so every rank can
//! compute the same scheme and schedule without talking to the others.

use crate::error::{Error, Result};
use crate::raster::{ImageInfo, Region};

/// Ordered partition of an image into regions, row-major by `(y, x)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitScheme {
    splits: Vec<Region>,
}

impl SplitScheme {
    pub fn splits(&self) -> &[Region] {
        &self.splits
    }

    pub fn total(&self) -> usize {
        self.splits.len()
    }

    pub fn get(&self, index: usize) -> Option<Region> {
        self.splits.get(index).copied()
    }

    /// True when every split spans the full image width.
    pub fn is_striped(&self, info: &ImageInfo) -> bool {
        self.splits
            .iter()
            .all(|r| r.x() == 0 && r.width() == info.width)
    }
}

/// Full-width stripes of `ceil(height / n)` rows; the last stripe takes the
/// remainder. Asking for more stripes than rows yields one-row stripes.
pub fn striped_split(info: &ImageInfo, n_splits: usize) -> SplitScheme {
    let n = n_splits.clamp(1, info.height.max(1));
    let rows = info.height.div_ceil(n);
    let splits = (0..info.height)
        .step_by(rows.max(1))
        .map(|y| Region::new(0, y, info.width, rows.min(info.height - y)))
        .collect();
    SplitScheme { splits }
}

/// Row-major grid of `tile_w x tile_h` tiles, edge tiles truncated.
pub fn tiled_split(info: &ImageInfo, tile_w: usize, tile_h: usize) -> SplitScheme {
    let tile_w = tile_w.max(1);
    let tile_h = tile_h.max(1);
    let mut splits = Vec::new();
    for y in (0..info.height).step_by(tile_h) {
        for x in (0..info.width).step_by(tile_w) {
            splits.push(Region::new(
                x,
                y,
                tile_w.min(info.width - x),
                tile_h.min(info.height - y),
            ));
        }
    }
    SplitScheme { splits }
}

/// Number of stripes needed so one stripe fits in `memory_budget_bytes`,
/// rounded up to a multiple of `world_size` so no rank sits idle, and never
/// more than one stripe per row.
pub fn auto_split_count(info: &ImageInfo, memory_budget_bytes: u64, world_size: usize) -> Result<usize> {
    let row_bytes = info.row_bytes();
    if memory_budget_bytes < row_bytes || memory_budget_bytes == 0 {
        return Err(Error::BudgetTooSmall {
            budget: memory_budget_bytes,
            row_bytes,
        });
    }
    let world = world_size.max(1) as u64;
    let needed = info.total_bytes().div_ceil(memory_budget_bytes).max(1);
    let rounded = needed.div_ceil(world) * world;
    Ok(rounded.min(info.height as u64) as usize)
}

/// How a mapper partitions its output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitStrategy {
    Striped(usize),
    Tiled { width: usize, height: usize },
    Auto { memory_budget_bytes: u64 },
}

impl Default for SplitStrategy {
    fn default() -> Self {
        SplitStrategy::Auto {
            memory_budget_bytes: 64 * 1024 * 1024,
        }
    }
}

impl SplitStrategy {
    pub fn compute(&self, info: &ImageInfo, world_size: usize) -> Result<SplitScheme> {
        Ok(match *self {
            SplitStrategy::Striped(n) => {
                if n == 0 {
                    return Err(Error::Config("striped split count must be at least 1".into()));
                }
                striped_split(info, n)
            }
            SplitStrategy::Tiled { width, height } => {
                if width == 0 || height == 0 {
                    return Err(Error::Config("tile dimensions must be at least 1".into()));
                }
                tiled_split(info, width, height)
            }
            SplitStrategy::Auto {
                memory_budget_bytes,
            } => striped_split(info, auto_split_count(info, memory_budget_bytes, world_size)?),
        })
    }
}

/// Static assignment of split indices to ranks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    world_size: usize,
    assignment: Vec<usize>,
}

impl Schedule {
    pub fn world_size(&self) -> usize {
        self.world_size
    }

    /// Rank owning split `index`.
    pub fn rank_of(&self, index: usize) -> usize {
        self.assignment[index]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Split indices owned by `rank`, ascending.
    pub fn splits_for(&self, rank: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(_, &r)| r == rank)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Round-robin: split `i` goes to rank `i mod world_size`.
pub fn assign_splits(n_splits: usize, world_size: usize) -> Schedule {
    let world_size = world_size.max(1);
    Schedule {
        world_size,
        assignment: (0..n_splits).map(|i| i % world_size).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::SampleType;

    fn info(w: usize, h: usize) -> ImageInfo {
        ImageInfo::new(w, h, 1, SampleType::U8)
    }

    #[test]
    fn striped_xs_height() {
        let s = striped_split(&ImageInfo::new(10699, 11899, 4, SampleType::U16), 8);
        assert_eq!(s.total(), 8);
        for r in &s.splits()[..7] {
            assert_eq!(r.height(), 1488);
        }
        assert_eq!(s.splits()[7].height(), 1483);
        assert_eq!(7 * 1488 + 1483, 11899);
        assert_eq!(s.splits()[1], Region::new(0, 1488, 10699, 1488));
    }

    #[test]
    fn striped_identity_and_clamp() {
        let i = info(7, 9);
        assert_eq!(striped_split(&i, 1).splits(), &[i.largest_region()]);
        let s = striped_split(&info(4, 3), 5);
        assert_eq!(s.total(), 3);
        assert!(s.splits().iter().all(|r| r.height() == 1));
    }

    #[test]
    fn tiled_grid() {
        let s = tiled_split(&info(100, 80), 64, 64);
        assert_eq!(
            s.splits(),
            &[
                Region::new(0, 0, 64, 64),
                Region::new(64, 0, 36, 64),
                Region::new(0, 64, 64, 16),
                Region::new(64, 64, 36, 16),
            ]
        );
        assert_eq!(tiled_split(&info(100, 80), 100, 80).total(), 1);
        assert!(!s.is_striped(&info(100, 80)));
    }

    #[test]
    fn auto_split_examples() {
        let xs = ImageInfo::new(10699, 11899, 4, SampleType::U16);
        // 10699*11899*4*2 = 1018459208; ceil(/ 67108864) = 16, already a multiple of 8
        assert_eq!(1018459208u64.div_ceil(67108864), 16);
        assert_eq!(auto_split_count(&xs, 64 << 20, 8).unwrap(), 16);

        let small = ImageInfo::new(64, 64, 1, SampleType::U8);
        assert_eq!(auto_split_count(&small, 1 << 20, 4).unwrap(), 4);

        let total = small.total_bytes();
        assert_eq!(auto_split_count(&small, total / 2 + 1, 1).unwrap(), 2);
    }

    #[test]
    fn auto_split_clamps_and_rejects_tiny_budgets() {
        let i = ImageInfo::new(100, 6, 1, SampleType::U8);
        // one row per split would need 6; world 4 rounds to 8, clamp to 6
        assert_eq!(auto_split_count(&i, 100, 4).unwrap(), 6);
        assert!(matches!(
            auto_split_count(&i, 99, 1),
            Err(Error::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn round_robin_examples() {
        let s = assign_splits(8, 2);
        assert_eq!(s.splits_for(0), vec![0, 2, 4, 6]);
        assert_eq!(s.splits_for(1), vec![1, 3, 5, 7]);
        let s = assign_splits(5, 2);
        assert_eq!((s.splits_for(0).len(), s.splits_for(1).len()), (3, 2));
        assert_eq!(assign_splits(6, 1).splits_for(0), (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn strategy_rejects_zero_parameters() {
        let i = info(4, 4);
        assert!(SplitStrategy::Striped(0).compute(&i, 1).is_err());
        assert!(SplitStrategy::Tiled { width: 0, height: 3 }.compute(&i, 1).is_err());
    }
}
