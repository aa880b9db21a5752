//! Procedural level generation with verified reachability.
//!
//! A level is a ground-height profile with ledges (elevation steps of 1-3
//! cells) and hazard-filled trenches (width 1-2), a start near the left edge,
//! and a coin whose column depends on the mode. Every candidate layout is
//! checked by a breadth-first search over `(x, y, velocity)` states using the
//! real step dynamics; layouts whose coin is unreachable within the step
//! budget are redrawn, and the seed is rejected after a bounded number of
//! attempts.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;
use thiserror::Error;

use super::{advance, ActionId, LevelSpec, Mode, Outcome, TileKind};

/// Generator parameters. Defaults match the experiment setup throughout the
/// crate; width and height are validated on use.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal window radius of the observation encoding.
    pub window_radius: usize,
    /// Step budget per episode.
    pub max_steps: u32,
    /// Inclusive range for the number of hazard trenches per level.
    pub min_trenches: usize,
    pub max_trenches: usize,
    /// Layout redraws per seed before the seed is rejected.
    pub max_retries: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            width: 48,
            height: 12,
            window_radius: 5,
            max_steps: 256,
            min_trenches: 2,
            max_trenches: 4,
            max_retries: 100,
        }
    }
}

impl GenConfig {
    pub fn obs_dim(&self) -> usize {
        super::Observation::dim(self.height, self.window_radius)
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("seed {seed} rejected: no reachable layout after {attempts} attempts")]
    SeedRejected { seed: u64, attempts: usize },
}

fn validate(config: &GenConfig) -> Result<(), GenError> {
    if config.width < 16 {
        return Err(GenError::InvalidConfig(format!(
            "width {} < 16",
            config.width
        )));
    }
    if config.height < 8 {
        return Err(GenError::InvalidConfig(format!(
            "height {} < 8",
            config.height
        )));
    }
    if config.min_trenches > config.max_trenches {
        return Err(GenError::InvalidConfig(
            "min_trenches > max_trenches".into(),
        ));
    }
    Ok(())
}

/// Start column; kept clear of trenches so it is always standable.
const START_X: usize = 1;

/// Generates the level for `(seed, mode)` deterministically.
///
/// The same seed produces the same terrain in both modes; only the coin
/// placement differs.
pub fn generate_level(seed: u64, mode: Mode, config: &GenConfig) -> Result<LevelSpec, GenError> {
    validate(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::splitmix64(seed));
    for _ in 0..config.max_retries {
        let level = draw_layout(seed, mode, config, &mut rng);
        if let Some(level) = level {
            if reachable(&level, config.max_steps) {
                return Ok(level);
            }
        }
    }
    Err(GenError::SeedRejected {
        seed,
        attempts: config.max_retries,
    })
}

fn draw_layout(seed: u64, mode: Mode, config: &GenConfig, rng: &mut ChaCha8Rng) -> Option<LevelSpec> {
    let (w, h) = (config.width, config.height);
    let max_ground = h - 5; // headroom for a full jump arc

    // Ground-height profile: flat runs separated by ledges of 1-3 cells.
    // Downward steps are favored so that a right-running agent spends time
    // airborne and skips surface cells below drop edges.
    let mut ground = vec![0usize; w];
    let mut g: i64 = rng.gen_range(2..=3);
    let mut x = 0;
    while x < w {
        let run = rng.gen_range(2..=5).min(w - x);
        for gx in ground.iter_mut().skip(x).take(run) {
            *gx = g as usize;
        }
        x += run;
        let magnitude = rng.gen_range(1..=3) as i64;
        let up = rng.gen_bool(0.4);
        let delta = if up { magnitude } else { -magnitude };
        g = (g + delta).clamp(1, max_ground as i64);
    }

    // Trenches: hazard-filled gaps of width 1-2, away from the start and the
    // right wall, never closer than two columns to each other.
    let n_trenches = rng.gen_range(config.min_trenches..=config.max_trenches);
    let mut trench = vec![false; w];
    let mut placed = 0;
    for _ in 0..40 {
        if placed >= n_trenches {
            break;
        }
        let tw = rng.gen_range(1..=2usize);
        let tx = rng.gen_range(4..w - 3 - tw);
        let clear = (tx.saturating_sub(2)..(tx + tw + 2).min(w)).all(|c| !trench[c]);
        if clear {
            for c in tx..tx + tw {
                trench[c] = true;
            }
            placed += 1;
        }
    }
    if placed < config.min_trenches {
        return None;
    }

    // Build tiles: solid ground up to the profile, trenches keep only the
    // bottom row solid and fill with hazard below the shoulder height.
    let mut tiles = vec![TileKind::Empty; w * h];
    for x in 0..w {
        if trench[x] {
            tiles[x] = TileKind::Solid; // bottom row
            let left = (0..x).rev().find(|&c| !trench[c])?;
            let right = (x + 1..w).find(|&c| !trench[c])?;
            let shoulder = ground[left].min(ground[right]);
            let top = shoulder.saturating_sub(1).max(1);
            for y in 1..=top {
                tiles[y * w + x] = TileKind::Hazard;
            }
        } else {
            for y in 0..ground[x] {
                tiles[y * w + x] = TileKind::Solid;
            }
        }
    }

    let standable: Vec<usize> = (0..w).filter(|&c| !trench[c]).collect();
    let start_cell = (START_X, ground[START_X]);

    let coin_x = match mode {
        Mode::Train => *standable.last()?,
        Mode::Test => {
            let options: Vec<usize> = standable.iter().copied().filter(|&c| c != START_X).collect();
            options[rng.gen_range(0..options.len())]
        }
    };
    let coin_cell = (coin_x, ground[coin_x]);
    if coin_cell == start_cell {
        return None;
    }
    tiles[coin_cell.1 * w + coin_cell.0] = TileKind::Coin;

    Some(LevelSpec {
        width: w,
        height: h,
        tiles,
        start_cell,
        coin_cell,
        seed,
        mode,
    })
}

/// Breadth-first search over `(x, y, velocity)` states under the real step
/// dynamics: true iff some action sequence of length `<= max_steps` reaches
/// the coin from the start.
pub fn reachable(level: &LevelSpec, max_steps: u32) -> bool {
    let (w, h) = (level.width, level.height);
    let idx = |x: usize, y: usize, vy: i32| (y * w + x) * 5 + (vy + 2) as usize;
    let mut seen = vec![false; w * h * 5];
    let mut queue = VecDeque::new();
    let start = (level.start_cell.0, level.start_cell.1, 0i32);
    seen[idx(start.0, start.1, start.2)] = true;
    queue.push_back((start, 0u32));
    while let Some(((x, y, vy), depth)) = queue.pop_front() {
        if depth >= max_steps {
            continue;
        }
        for action in ActionId::ALL {
            let tr = advance(level, x, y, vy, action);
            match tr.outcome {
                Outcome::Coin => return true,
                Outcome::Hazard => continue,
                _ => {
                    let i = idx(tr.x, tr.y, tr.vy);
                    if !seen[i] {
                        seen[i] = true;
                        queue.push_back(((tr.x, tr.y, tr.vy), depth + 1));
                    }
                }
            }
        }
    }
    false
}

/// True iff `(x, y)` is a standable cell: empty (or holding the coin) with
/// solid directly below.
pub fn cell_standable(level: &LevelSpec, x: usize, y: usize) -> bool {
    y >= 1
        && y < level.height
        && level.tile(x, y - 1) == TileKind::Solid
        && matches!(level.tile(x, y), TileKind::Empty | TileKind::Coin)
}

/// Columns containing at least one standable cell. Trench columns never
/// qualify: their only solid tile is the bottom row, capped by hazard.
pub fn standable_columns(level: &LevelSpec) -> Vec<usize> {
    (0..level.width)
        .filter(|&x| (1..level.height).any(|y| cell_standable(level, x, y)))
        .collect()
}
