//! Seeded side-scrolling platformer with a train/test coin asymmetry.
//!
//! Levels are grids of [`TileKind`] with y = 0 at the bottom row (always
//! solid) and y increasing upward. The agent occupies one cell, moves
//! horizontally by one cell per step, and jumps with an integer vertical
//! velocity in `[-2, 2]`. Reaching the coin ends the episode with reward 10;
//! touching a hazard or running out of time ends it with reward 0. In train
//! mode the coin sits on the rightmost standable column; in test mode it is
//! drawn uniformly over standable columns away from the start.
//!
//! Within a step the order is: jump intent (only while standing), vertical
//! motion cell by cell, horizontal motion by one cell, then gravity. Solid
//! cells block motion; everything outside the grid counts as solid. Entering
//! a coin or hazard cell at any sub-move ends the episode immediately.

mod gen;
mod obs;

pub use gen::{cell_standable, generate_level, reachable, standable_columns, GenConfig, GenError};
pub use obs::Observation;

use thiserror::Error;

/// Content of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileKind {
    Empty,
    Solid,
    Hazard,
    Coin,
}

impl TileKind {
    /// Channel index in the one-hot observation encoding.
    pub fn channel(self) -> usize {
        match self {
            TileKind::Empty => 0,
            TileKind::Solid => 1,
            TileKind::Hazard => 2,
            TileKind::Coin => 3,
        }
    }

    /// Character used by the textual level dump.
    pub fn glyph(self) -> char {
        match self {
            TileKind::Empty => '.',
            TileKind::Solid => '#',
            TileKind::Hazard => '^',
            TileKind::Coin => 'o',
        }
    }
}

/// Number of tile kinds (one-hot width per cell).
pub const TILE_KINDS: usize = 4;

/// Level distribution: coin at the far right vs. coin anywhere standable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Test,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Test => "test",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Mode::Train),
            "test" => Ok(Mode::Test),
            other => Err(format!("unknown mode `{other}` (expected train|test)")),
        }
    }
}

/// Discrete action set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionId {
    Left,
    Right,
    Jump,
    JumpRight,
    Noop,
}

/// Number of discrete actions.
pub const N_ACTIONS: usize = 5;

impl ActionId {
    pub const ALL: [ActionId; N_ACTIONS] = [
        ActionId::Left,
        ActionId::Right,
        ActionId::Jump,
        ActionId::JumpRight,
        ActionId::Noop,
    ];

    pub fn index(self) -> usize {
        match self {
            ActionId::Left => 0,
            ActionId::Right => 1,
            ActionId::Jump => 2,
            ActionId::JumpRight => 3,
            ActionId::Noop => 4,
        }
    }

    pub fn from_index(i: usize) -> ActionId {
        Self::ALL[i]
    }
}

/// Immutable, procedurally generated level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSpec {
    pub width: usize,
    pub height: usize,
    /// Row-major grid, `tiles[y * width + x]`, y = 0 at the bottom.
    pub tiles: Vec<TileKind>,
    pub start_cell: (usize, usize),
    pub coin_cell: (usize, usize),
    pub seed: u64,
    pub mode: Mode,
}

impl LevelSpec {
    pub fn tile(&self, x: usize, y: usize) -> TileKind {
        self.tiles[y * self.width + x]
    }

    /// Tile lookup with out-of-bounds cells treated as solid.
    pub fn tile_or_solid(&self, x: i64, y: i64) -> TileKind {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            TileKind::Solid
        } else {
            self.tile(x as usize, y as usize)
        }
    }

    fn solid(&self, x: i64, y: i64) -> bool {
        self.tile_or_solid(x, y) == TileKind::Solid
    }

    /// Textual dump: header line plus one row of glyphs per grid row,
    /// top row first.
    pub fn dump(&self) -> String {
        let mut out = format!(
            "seed={} mode={} start={},{} coin={},{}\n",
            self.seed,
            self.mode.name(),
            self.start_cell.0,
            self.start_cell.1,
            self.coin_cell.0,
            self.coin_cell.1
        );
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                out.push(self.tile(x, y).glyph());
            }
            out.push('\n');
        }
        out
    }
}

/// How an episode ended (or that it is still running).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Running,
    Coin,
    Hazard,
    Timeout,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Coin => "coin",
            Outcome::Hazard => "hazard",
            Outcome::Timeout => "timeout",
        }
    }
}

/// Mutable episode state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvState {
    pub agent_cell: (usize, usize),
    /// Cells per step, positive upward, in `[-2, 2]`.
    pub vertical_velocity: i32,
    pub t: u32,
    pub terminal: bool,
    pub outcome: Outcome,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a terminal state (outcome {0:?})")]
    SteppedTerminal(Outcome),
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOut {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub outcome: Outcome,
}

/// Outcome of the pure physics transition, before time accounting.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Transition {
    pub x: usize,
    pub y: usize,
    pub vy: i32,
    pub outcome: Outcome,
}

/// One physics step from `(x, y, vy)` under `action`. Pure; shared by the
/// environment, the generator's reachability search, and tests.
pub(crate) fn advance(level: &LevelSpec, x: usize, y: usize, vy: i32, action: ActionId) -> Transition {
    let mut x = x as i64;
    let mut y = y as i64;
    let mut vy = vy;

    let standing = level.solid(x, y - 1);
    if standing && matches!(action, ActionId::Jump | ActionId::JumpRight) {
        vy = 2;
    }

    let enters = |tx: i64, ty: i64| -> Option<Outcome> {
        match level.tile_or_solid(tx, ty) {
            TileKind::Coin => Some(Outcome::Coin),
            TileKind::Hazard => Some(Outcome::Hazard),
            _ => None,
        }
    };
    let done = |x: i64, y: i64, o: Outcome| Transition {
        x: x as usize,
        y: y as usize,
        vy: 0,
        outcome: o,
    };

    // Vertical motion, cell by cell; solid cells stop it.
    let dy = if vy > 0 { 1 } else { -1 };
    for _ in 0..vy.abs() {
        if level.solid(x, y + dy) {
            vy = 0;
            break;
        }
        y += dy;
        if let Some(o) = enters(x, y) {
            return done(x, y, o);
        }
    }

    // Horizontal motion by one cell at the new height.
    let dx = match action {
        ActionId::Left => -1,
        ActionId::Right | ActionId::JumpRight => 1,
        _ => 0,
    };
    if dx != 0 && !level.solid(x + dx, y) {
        x += dx;
        if let Some(o) = enters(x, y) {
            return done(x, y, o);
        }
    }

    // Gravity, unless landed.
    if level.solid(x, y - 1) && vy <= 0 {
        vy = 0;
    } else {
        vy = (vy - 1).max(-2);
    }

    Transition {
        x: x as usize,
        y: y as usize,
        vy,
        outcome: Outcome::Running,
    }
}

/// An episode: a level plus mutable state.
#[derive(Debug, Clone)]
pub struct Env {
    level: LevelSpec,
    state: EnvState,
    max_steps: u32,
    window_radius: usize,
}

impl Env {
    /// Starts an episode at the level's start cell and returns the initial
    /// observation.
    pub fn reset(level: LevelSpec, config: &GenConfig) -> (Env, Observation) {
        let state = EnvState {
            agent_cell: level.start_cell,
            vertical_velocity: 0,
            t: 0,
            terminal: false,
            outcome: Outcome::Running,
        };
        let obs = Observation::encode(&level, &state, config.window_radius);
        (
            Env {
                level,
                state,
                max_steps: config.max_steps,
                window_radius: config.window_radius,
            },
            obs,
        )
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn level(&self) -> &LevelSpec {
        &self.level
    }

    /// Advances one step. Rewards are 10 on reaching the coin and 0
    /// otherwise; hazards and the step limit terminate with 0.
    pub fn step(&mut self, action: ActionId) -> Result<StepOut, EnvError> {
        if self.state.terminal {
            return Err(EnvError::SteppedTerminal(self.state.outcome));
        }
        let (x, y) = self.state.agent_cell;
        let tr = advance(&self.level, x, y, self.state.vertical_velocity, action);

        self.state.agent_cell = (tr.x, tr.y);
        self.state.vertical_velocity = tr.vy;
        self.state.t += 1;
        self.state.outcome = tr.outcome;
        if self.state.outcome == Outcome::Running && self.state.t >= self.max_steps {
            self.state.outcome = Outcome::Timeout;
        }
        self.state.terminal = self.state.outcome != Outcome::Running;

        let reward = if self.state.outcome == Outcome::Coin { 10.0 } else { 0.0 };
        let obs = Observation::encode(&self.level, &self.state, self.window_radius);
        Ok(StepOut {
            obs,
            reward,
            done: self.state.terminal,
            outcome: self.state.outcome,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Flat 20x10 test level: ground height 2, coin on the surface at x=16,
    /// a hazard cell at (10, 2).
    fn flat_level() -> LevelSpec {
        let (w, h) = (20, 10);
        let mut tiles = vec![TileKind::Empty; w * h];
        for x in 0..w {
            tiles[x] = TileKind::Solid;
            tiles[w + x] = TileKind::Solid;
        }
        tiles[2 * w + 16] = TileKind::Coin;
        tiles[2 * w + 10] = TileKind::Hazard;
        LevelSpec {
            width: w,
            height: h,
            tiles,
            start_cell: (1, 2),
            coin_cell: (16, 2),
            seed: 0,
            mode: Mode::Train,
        }
    }

    fn small_config() -> GenConfig {
        GenConfig {
            width: 20,
            height: 10,
            max_steps: 64,
            ..GenConfig::default()
        }
    }

    #[test]
    fn reset_starts_at_origin() {
        let (env, obs) = Env::reset(flat_level(), &small_config());
        assert_eq!(env.state().t, 0);
        assert!(!env.state().terminal);
        assert_eq!(env.state().agent_cell, (1, 2));
        assert!(!obs.coin_visible()); // coin at x=16, window radius 5
    }

    #[test]
    fn coin_visible_within_window() {
        let mut level = flat_level();
        level.tiles[2 * level.width + 16] = TileKind::Empty;
        level.tiles[2 * level.width + 4] = TileKind::Coin;
        level.coin_cell = (4, 2);
        let (_, obs) = Env::reset(level, &small_config());
        assert!(obs.coin_visible()); // 3 cells right of start
    }

    #[test]
    fn walk_right_moves_one_cell() {
        let (mut env, _) = Env::reset(flat_level(), &small_config());
        let out = env.step(ActionId::Right).unwrap();
        assert_eq!(env.state().agent_cell, (2, 2));
        assert_eq!(out.reward, 0.0);
        assert!(!out.done);
    }

    #[test]
    fn solid_blocks_horizontal_motion() {
        let mut level = flat_level();
        level.tiles[2 * level.width + 2] = TileKind::Solid;
        let (mut env, _) = Env::reset(level, &small_config());
        env.step(ActionId::Right).unwrap();
        assert_eq!(env.state().agent_cell, (1, 2));
    }

    #[test]
    fn left_edge_is_solid() {
        let mut level = flat_level();
        level.start_cell = (0, 2);
        let (mut env, _) = Env::reset(level, &small_config());
        env.step(ActionId::Left).unwrap();
        assert_eq!(env.state().agent_cell, (0, 2));
    }

    #[test]
    fn jump_arc_rises_then_falls() {
        let (mut env, _) = Env::reset(flat_level(), &small_config());
        env.step(ActionId::Jump).unwrap();
        assert_eq!(env.state().agent_cell, (1, 4));
        assert_eq!(env.state().vertical_velocity, 1);
        env.step(ActionId::Noop).unwrap();
        assert_eq!(env.state().agent_cell, (1, 5));
        assert_eq!(env.state().vertical_velocity, 0);
        env.step(ActionId::Noop).unwrap(); // apex
        assert_eq!(env.state().agent_cell, (1, 5));
        env.step(ActionId::Noop).unwrap();
        assert_eq!(env.state().agent_cell, (1, 4));
        env.step(ActionId::Noop).unwrap();
        assert_eq!(env.state().agent_cell, (1, 2));
        assert_eq!(env.state().vertical_velocity, 0); // landed
    }

    #[test]
    fn jump_requires_standing() {
        let (mut env, _) = Env::reset(flat_level(), &small_config());
        env.step(ActionId::Jump).unwrap();
        let y_before = env.state().agent_cell.1;
        env.step(ActionId::Jump).unwrap(); // airborne: no second boost
        assert!(env.state().agent_cell.1 <= y_before + 1);
    }

    #[test]
    fn entering_coin_terminates_with_reward_10() {
        let mut level = flat_level();
        level.tiles[2 * level.width + 2] = TileKind::Coin;
        level.coin_cell = (2, 2);
        level.tiles[2 * level.width + 16] = TileKind::Empty;
        let (mut env, _) = Env::reset(level, &small_config());
        let out = env.step(ActionId::Right).unwrap();
        assert_eq!(out.reward, 10.0);
        assert!(out.done);
        assert_eq!(out.outcome, Outcome::Coin);
    }

    #[test]
    fn entering_hazard_terminates_with_zero() {
        let mut level = flat_level();
        level.tiles[2 * level.width + 2] = TileKind::Hazard;
        let (mut env, _) = Env::reset(level, &small_config());
        let out = env.step(ActionId::Right).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(out.done);
        assert_eq!(out.outcome, Outcome::Hazard);
    }

    #[test]
    fn timeout_at_step_limit() {
        let (mut env, _) = Env::reset(flat_level(), &small_config());
        for t in 0..64 {
            let out = env.step(ActionId::Noop).unwrap();
            if t < 63 {
                assert!(!out.done);
            } else {
                assert!(out.done);
                assert_eq!(out.outcome, Outcome::Timeout);
                assert_eq!(out.reward, 0.0);
            }
        }
    }

    #[test]
    fn stepping_terminal_state_is_an_error() {
        let (mut env, _) = Env::reset(flat_level(), &small_config());
        for _ in 0..64 {
            env.step(ActionId::Noop).unwrap();
        }
        assert!(matches!(
            env.step(ActionId::Noop),
            Err(EnvError::SteppedTerminal(Outcome::Timeout))
        ));
    }

    #[test]
    fn observation_locality() {
        // Same local window and scalars => identical observations, even when
        // the far side of the level differs.
        let a = flat_level();
        let mut b = flat_level();
        b.tiles[2 * b.width + 16] = TileKind::Empty;
        b.tiles[3 * b.width + 18] = TileKind::Solid;
        b.coin_cell = (18, 4);
        let cfg = small_config();
        let (_, obs_a) = Env::reset(a, &cfg);
        let (_, obs_b) = Env::reset(b, &cfg);
        assert_eq!(obs_a, obs_b);
    }

    #[test]
    fn out_of_bounds_encodes_as_solid() {
        let (_, obs) = Env::reset(flat_level(), &small_config());
        // Agent at x=1, radius 5: window columns -4..=6; column -4 is wx=0.
        for y in 0..10 {
            assert_eq!(obs.cell_channel(0, y), TileKind::Solid.channel());
        }
    }

    #[test]
    fn dump_has_header_and_grid() {
        let level = flat_level();
        let dump = level.dump();
        let mut lines = dump.lines();
        assert_eq!(lines.next().unwrap(), "seed=0 mode=train start=1,2 coin=16,2");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.len() == 20));
        // Bottom row (printed last) is fully solid.
        assert_eq!(rows[9], "####################");
        // Coin glyph on the surface row.
        assert_eq!(&rows[7][16..17], "o");
        assert_eq!(&rows[7][10..11], "^");
    }
}

