//! Egocentric observation encoding.
//!
//! The observation is a one-hot tile window of shape
//! `height x (2r + 1) x TILE_KINDS`, horizontally centered on the agent and
//! spanning the full level height, flattened row-major
//! (`y`, then window column, then channel), with two appended scalars:
//! vertical velocity normalized to `[-1, 1]` and agent x normalized to
//! `[0, 1]`. Cells outside the level encode as solid.

use super::{EnvState, LevelSpec, TileKind, TILE_KINDS};

/// Flattened observation vector plus the window geometry needed to inspect it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub data: Vec<f32>,
    pub height: usize,
    pub window_width: usize,
}

impl Observation {
    /// Observation length for a level of `height` rows and window radius `r`.
    pub fn dim(height: usize, window_radius: usize) -> usize {
        height * (2 * window_radius + 1) * TILE_KINDS + 2
    }

    pub(crate) fn encode(level: &LevelSpec, state: &EnvState, window_radius: usize) -> Observation {
        let w = 2 * window_radius + 1;
        let (ax, _) = state.agent_cell;
        let mut data = vec![0.0f32; Self::dim(level.height, window_radius)];
        for y in 0..level.height {
            for wx in 0..w {
                let lx = ax as i64 + wx as i64 - window_radius as i64;
                let kind = level.tile_or_solid(lx, y as i64);
                data[(y * w + wx) * TILE_KINDS + kind.channel()] = 1.0;
            }
        }
        let n = data.len();
        data[n - 2] = state.vertical_velocity as f32 / 2.0;
        data[n - 1] = ax as f32 / (level.width - 1) as f32;
        Observation {
            data,
            height: level.height,
            window_width: w,
        }
    }

    /// True iff the coin tile lies inside the window.
    pub fn coin_visible(&self) -> bool {
        let cells = self.height * self.window_width;
        (0..cells).any(|c| self.data[c * TILE_KINDS + TileKind::Coin.channel()] == 1.0)
    }

    /// One-hot channel of the cell at window coordinates `(wx, y)`.
    pub fn cell_channel(&self, wx: usize, y: usize) -> usize {
        let base = (y * self.window_width + wx) * TILE_KINDS;
        (0..TILE_KINDS)
            .find(|k| self.data[base + k] == 1.0)
            .expect("observation cell must be one-hot")
    }

    /// Overwrites the one-hot of the cell at `(wx, y)` with `channel`.
    pub fn set_cell_channel(&mut self, wx: usize, y: usize, channel: usize) {
        let base = (y * self.window_width + wx) * TILE_KINDS;
        for k in 0..TILE_KINDS {
            self.data[base + k] = if k == channel { 1.0 } else { 0.0 };
        }
    }
}
