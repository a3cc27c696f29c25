//! Board, positions, the move alphabet and the synchronous transition.
//!
//! Coordinates are 1-based: row 1 is the road, row 2 the shoulder. The agent
//! starts at the upper right corner `(1, n)` and travels toward column 1; the
//! human starts at `(1, 1)` and travels toward column `n`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub n_cols: u8,
    pub collision_penalty: i32,
    pub arrival_reward: i32,
    pub step_cost: i32,
    pub max_steps: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_cols: 6,
            collision_penalty: -100,
            arrival_reward: 30,
            step_cost: -1,
            max_steps: 100,
        }
    }
}

impl GridConfig {
    pub fn with_cols(n_cols: u8) -> Self {
        Self {
            n_cols,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cols < 3 {
            return Err(Error::InvalidConfig(format!(
                "n_cols must be at least 3, got {}",
                self.n_cols
            )));
        }
        if self.max_steps < 2 * self.n_cols as u32 {
            return Err(Error::InvalidConfig(format!(
                "max_steps {} is below 2 * n_cols = {}",
                self.max_steps,
                2 * self.n_cols as u32
            )));
        }
        Ok(())
    }

    /// Same rewards with an effectively unbounded horizon; used where the
    /// horizon is handled by discounting rather than by truncation.
    pub(crate) fn unbounded(&self) -> Self {
        Self {
            max_steps: u32::MAX,
            ..*self
        }
    }

    /// Number of distinct on-board cells.
    pub fn n_cells(&self) -> usize {
        2 * self.n_cols as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seat {
    Agent,
    Human,
}

impl Seat {
    pub fn other(self) -> Seat {
        match self {
            Seat::Agent => Seat::Human,
            Seat::Human => Seat::Agent,
        }
    }

    pub fn target_col(self, n_cols: u8) -> u8 {
        match self {
            Seat::Agent => 1,
            Seat::Human => n_cols,
        }
    }

    fn forward(self) -> i16 {
        match self {
            Seat::Agent => -1,
            Seat::Human => 1,
        }
    }
}

/// Where a player is. Once `Arrived` or `Collided` a player never returns to
/// the board.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PlayerPos {
    OnBoard { row: u8, col: u8 },
    Arrived,
    Collided,
}

impl PlayerPos {
    pub const fn at(row: u8, col: u8) -> Self {
        PlayerPos::OnBoard { row, col }
    }

    pub fn is_on_board(self) -> bool {
        matches!(self, PlayerPos::OnBoard { .. })
    }

    pub fn row(self) -> Option<u8> {
        match self {
            PlayerPos::OnBoard { row, .. } => Some(row),
            _ => None,
        }
    }

    pub fn col(self) -> Option<u8> {
        match self {
            PlayerPos::OnBoard { col, .. } => Some(col),
            _ => None,
        }
    }

    /// Left-right reflection of the board.
    pub fn reflect(self, n_cols: u8) -> Self {
        match self {
            PlayerPos::OnBoard { row, col } => PlayerPos::OnBoard {
                row,
                col: n_cols + 1 - col,
            },
            other => other,
        }
    }

    /// Every on-board cell followed by the two finished statuses.
    pub fn all(n_cols: u8) -> Vec<PlayerPos> {
        let mut out = Vec::with_capacity(2 * n_cols as usize + 2);
        for row in 1..=2 {
            for col in 1..=n_cols {
                out.push(PlayerPos::at(row, col));
            }
        }
        out.push(PlayerPos::Arrived);
        out.push(PlayerPos::Collided);
        out
    }
}

impl fmt::Display for PlayerPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlayerPos::OnBoard { row, col } => write!(f, "{row},{col}"),
            PlayerPos::Arrived => f.write_str("A"),
            PlayerPos::Collided => f.write_str("X"),
        }
    }
}

impl FromStr for PlayerPos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(PlayerPos::Arrived),
            "X" => Ok(PlayerPos::Collided),
            _ => {
                let (r, c) = s
                    .split_once(',')
                    .ok_or_else(|| Error::Parse(format!("bad position {s:?}")))?;
                let row: u8 = r
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad row in {s:?}")))?;
                let col: u8 = c
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad column in {s:?}")))?;
                if !(1..=2).contains(&row) || col == 0 {
                    return Err(Error::Parse(format!("position {s:?} out of range")));
                }
                Ok(PlayerPos::OnBoard { row, col })
            }
        }
    }
}

impl From<PlayerPos> for String {
    fn from(p: PlayerPos) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for PlayerPos {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// The move alphabet. `Noop` is submitted on behalf of a finished player so
/// that joint stepping stays total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Advance,
    Stay,
    Down,
    Up,
    Noop,
}

const UPPER_ROW: [Action; 3] = [Action::Advance, Action::Stay, Action::Down];
const LOWER_ROW: [Action; 2] = [Action::Stay, Action::Up];

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Advance,
        Action::Stay,
        Action::Down,
        Action::Up,
        Action::Noop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "advance" => Ok(Action::Advance),
            "stay" => Ok(Action::Stay),
            "down" => Ok(Action::Down),
            "up" => Ok(Action::Up),
            "noop" => Ok(Action::Noop),
            _ => Err(Error::Parse(format!("unknown action {s:?}"))),
        }
    }
}

/// Actions available at a position: the road allows Advance/Stay/Down, the
/// shoulder only Stay/Up.
pub fn legal_actions(pos: PlayerPos) -> Result<&'static [Action]> {
    match pos {
        PlayerPos::OnBoard { row: 1, .. } => Ok(&UPPER_ROW),
        PlayerPos::OnBoard { .. } => Ok(&LOWER_ROW),
        finished => Err(Error::PlayerFinished(finished)),
    }
}

/// Legal moves for a player, or just `Noop` once it has finished.
pub fn available_actions(pos: PlayerPos) -> &'static [Action] {
    legal_actions(pos).unwrap_or(&[Action::Noop])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Positions {
    pub agent: PlayerPos,
    pub human: PlayerPos,
}

impl Positions {
    pub fn seat(&self, seat: Seat) -> PlayerPos {
        match seat {
            Seat::Agent => self.agent,
            Seat::Human => self.human,
        }
    }

    pub fn both_finished(&self) -> bool {
        !self.agent.is_on_board() && !self.human.is_on_board()
    }

    /// Reflect the board and swap seats.
    pub fn mirror(&self, n_cols: u8) -> Positions {
        Positions {
            agent: self.human.reflect(n_cols),
            human: self.agent.reflect(n_cols),
        }
    }
}

impl fmt::Display for Positions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.agent, self.human)
    }
}

impl FromStr for Positions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, h) = s
            .split_once('|')
            .ok_or_else(|| Error::Parse(format!("bad positions {s:?}")))?;
        Ok(Positions {
            agent: a.parse()?,
            human: h.parse()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameState {
    pub agent: PlayerPos,
    pub human: PlayerPos,
    pub step_count: u32,
}

impl GameState {
    pub fn from_positions(p: Positions, step_count: u32) -> Self {
        GameState {
            agent: p.agent,
            human: p.human,
            step_count,
        }
    }

    pub fn positions(&self) -> Positions {
        Positions {
            agent: self.agent,
            human: self.human,
        }
    }

    pub fn seat(&self, seat: Seat) -> PlayerPos {
        self.positions().seat(seat)
    }

    pub fn is_terminal(&self, cfg: &GridConfig) -> bool {
        self.positions().both_finished() || self.step_count >= cfg.max_steps
    }

    pub fn mirror(&self, n_cols: u8) -> GameState {
        GameState::from_positions(self.positions().mirror(n_cols), self.step_count)
    }
}

/// Current state together with the state one step earlier; the previous
/// state equals the current one at the start of a game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VelocityState {
    pub current: GameState,
    pub previous: GameState,
}

impl VelocityState {
    pub fn still(state: GameState) -> Self {
        VelocityState {
            current: state,
            previous: state,
        }
    }

    pub fn initial(cfg: &GridConfig) -> Self {
        Self::still(initial_state(cfg))
    }

    pub fn advance(&self, next: GameState) -> Self {
        VelocityState {
            current: next,
            previous: self.current,
        }
    }

    pub fn mirror(&self, n_cols: u8) -> Self {
        VelocityState {
            current: self.current.mirror(n_cols),
            previous: self.previous.mirror(n_cols),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: GameState,
    pub agent_reward: i32,
    pub human_reward: i32,
    pub terminal: bool,
}

impl StepOutcome {
    pub fn reward(&self, seat: Seat) -> i32 {
        match seat {
            Seat::Agent => self.agent_reward,
            Seat::Human => self.human_reward,
        }
    }

    pub fn collided(&self) -> bool {
        self.next_state.agent == PlayerPos::Collided
    }
}

pub fn initial_state(cfg: &GridConfig) -> GameState {
    GameState {
        agent: PlayerPos::at(1, cfg.n_cols),
        human: PlayerPos::at(1, 1),
        step_count: 0,
    }
}

fn check_action(seat: Seat, pos: PlayerPos, action: Action) -> Result<()> {
    let ok = available_actions(pos).contains(&action);
    if ok {
        Ok(())
    } else {
        Err(Error::IllegalAction { seat, action, pos })
    }
}

fn moved(pos: PlayerPos, seat: Seat, action: Action) -> PlayerPos {
    match (pos, action) {
        (PlayerPos::OnBoard { row, col }, Action::Advance) => PlayerPos::OnBoard {
            row,
            col: (col as i16 + seat.forward()) as u8,
        },
        (PlayerPos::OnBoard { col, .. }, Action::Down) => PlayerPos::OnBoard { row: 2, col },
        (PlayerPos::OnBoard { col, .. }, Action::Up) => PlayerPos::OnBoard { row: 1, col },
        (p, _) => p,
    }
}

/// Applies both moves simultaneously.
///
/// A collision happens when the two players end on the same cell or swap
/// cells. A player reaching its target column is removed from the board. A
/// player still on the board after the step pays the step cost; the arrival
/// and collision steps pay only their own reward.
pub fn step(
    state: &GameState,
    agent_action: Action,
    human_action: Action,
    cfg: &GridConfig,
) -> Result<StepOutcome> {
    if state.is_terminal(cfg) {
        return Err(Error::TerminalState);
    }
    check_action(Seat::Agent, state.agent, agent_action)?;
    check_action(Seat::Human, state.human, human_action)?;

    let new_agent = moved(state.agent, Seat::Agent, agent_action);
    let new_human = moved(state.human, Seat::Human, human_action);

    let both_on_board = state.agent.is_on_board() && state.human.is_on_board();
    let collision = both_on_board
        && (new_agent == new_human || (new_agent == state.human && new_human == state.agent));

    let (agent, human, agent_reward, human_reward) = if collision {
        (
            PlayerPos::Collided,
            PlayerPos::Collided,
            cfg.collision_penalty,
            cfg.collision_penalty,
        )
    } else {
        let (a, ra) = settle(state.agent, new_agent, Seat::Agent, cfg);
        let (h, rh) = settle(state.human, new_human, Seat::Human, cfg);
        (a, h, ra, rh)
    };

    let next_state = GameState {
        agent,
        human,
        step_count: state.step_count + 1,
    };
    Ok(StepOutcome {
        next_state,
        agent_reward,
        human_reward,
        terminal: next_state.is_terminal(cfg),
    })
}

fn settle(before: PlayerPos, after: PlayerPos, seat: Seat, cfg: &GridConfig) -> (PlayerPos, i32) {
    if !before.is_on_board() {
        return (before, 0);
    }
    match after {
        PlayerPos::OnBoard { col, .. } if col == seat.target_col(cfg.n_cols) => {
            (PlayerPos::Arrived, cfg.arrival_reward)
        }
        p => (p, cfg.step_cost),
    }
}

/// Column gap `x(agent) - x(human)`; negative once the human has passed.
pub fn distance_gap(state: &GameState) -> Result<i32> {
    match (state.agent, state.human) {
        (PlayerPos::OnBoard { col: a, .. }, PlayerPos::OnBoard { col: h, .. }) => {
            Ok(a as i32 - h as i32)
        }
        (PlayerPos::OnBoard { .. }, finished) | (finished, _) => {
            Err(Error::PlayerFinished(finished))
        }
    }
}

/// Unobstructed steps to the target column; 0 for a finished player.
pub fn remaining_steps(pos: PlayerPos, seat: Seat, cfg: &GridConfig) -> u32 {
    match pos {
        PlayerPos::OnBoard { row, col } => {
            let target = seat.target_col(cfg.n_cols);
            (col as i32 - target as i32).unsigned_abs() + u32::from(row == 2)
        }
        _ => 0,
    }
}

/// True when some legal joint action takes `previous` to `current`.
pub fn is_predecessor(previous: &Positions, current: &Positions, cfg: &GridConfig) -> bool {
    if previous.both_finished() {
        return false;
    }
    let state = GameState::from_positions(*previous, 0);
    let cfg = cfg.unbounded();
    available_actions(previous.agent).iter().any(|&a| {
        available_actions(previous.human).iter().any(|&h| {
            step(&state, a, h, &cfg)
                .map(|o| o.next_state.positions() == *current)
                .unwrap_or(false)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(agent: PlayerPos, human: PlayerPos) -> GameState {
        GameState {
            agent,
            human,
            step_count: 0,
        }
    }

    #[test]
    fn initial_positions() {
        let s = initial_state(&GridConfig::default());
        assert_eq!(s.agent, PlayerPos::at(1, 6));
        assert_eq!(s.human, PlayerPos::at(1, 1));
        assert_eq!(s.step_count, 0);

        let s3 = initial_state(&GridConfig::with_cols(3));
        assert_eq!(s3.agent, PlayerPos::at(1, 3));
        assert_eq!(s3.human, PlayerPos::at(1, 1));
        assert_eq!(s3, initial_state(&GridConfig::with_cols(3)));
    }

    #[test]
    fn config_validation() {
        assert!(GridConfig::default().validate().is_ok());
        assert!(GridConfig::with_cols(2).validate().is_err());
        let short = GridConfig {
            max_steps: 11,
            ..GridConfig::default()
        };
        assert!(short.validate().is_err());
    }

    #[test]
    fn legal_sets_by_row() {
        assert_eq!(
            legal_actions(PlayerPos::at(1, 4)).unwrap(),
            &[Action::Advance, Action::Stay, Action::Down]
        );
        assert_eq!(
            legal_actions(PlayerPos::at(2, 4)).unwrap(),
            &[Action::Stay, Action::Up]
        );
        assert!(matches!(
            legal_actions(PlayerPos::Arrived),
            Err(Error::PlayerFinished(_))
        ));
    }

    #[test]
    fn swap_is_a_collision() {
        let cfg = GridConfig::default();
        let s = state(PlayerPos::at(1, 4), PlayerPos::at(1, 3));
        let out = step(&s, Action::Advance, Action::Advance, &cfg).unwrap();
        assert_eq!(out.next_state.agent, PlayerPos::Collided);
        assert_eq!(out.next_state.human, PlayerPos::Collided);
        assert_eq!((out.agent_reward, out.human_reward), (-100, -100));
        assert!(out.terminal);
    }

    #[test]
    fn vertical_swap_is_a_collision() {
        let cfg = GridConfig::default();
        let s = state(PlayerPos::at(1, 3), PlayerPos::at(2, 3));
        let out = step(&s, Action::Down, Action::Up, &cfg).unwrap();
        assert!(out.collided());
    }

    #[test]
    fn co_occupancy_is_a_collision() {
        let cfg = GridConfig::default();
        let s = state(PlayerPos::at(1, 4), PlayerPos::at(1, 2));
        let out = step(&s, Action::Advance, Action::Advance, &cfg).unwrap();
        assert!(out.collided());
    }

    #[test]
    fn following_into_a_vacated_cell_is_safe() {
        let cfg = GridConfig::default();
        let s = state(PlayerPos::at(1, 4), PlayerPos::at(1, 3));
        let out = step(&s, Action::Advance, Action::Down, &cfg).unwrap();
        assert_eq!(out.next_state.agent, PlayerPos::at(1, 3));
        assert_eq!(out.next_state.human, PlayerPos::at(2, 3));
        assert!(!out.terminal);
    }

    #[test]
    fn arrival_pays_reward_only() {
        let cfg = GridConfig::default();
        let s = state(PlayerPos::at(1, 2), PlayerPos::at(2, 3));
        let out = step(&s, Action::Advance, Action::Stay, &cfg).unwrap();
        assert_eq!(out.next_state.agent, PlayerPos::Arrived);
        assert_eq!(out.agent_reward, 30);
        assert_eq!(out.next_state.human, PlayerPos::at(2, 3));
        assert_eq!(out.human_reward, -1);
        assert!(!out.terminal);
    }

    #[test]
    fn standing_still() {
        let cfg = GridConfig::default();
        let s = state(PlayerPos::at(1, 5), PlayerPos::at(1, 1));
        let out = step(&s, Action::Stay, Action::Stay, &cfg).unwrap();
        assert_eq!(out.next_state.positions(), s.positions());
        assert_eq!((out.agent_reward, out.human_reward), (-1, -1));
        assert!(!out.terminal);
        assert_eq!(out.next_state.step_count, 1);
    }

    #[test]
    fn arrived_player_no_longer_blocks() {
        let cfg = GridConfig::default();
        let s = state(PlayerPos::Arrived, PlayerPos::at(1, 5));
        let out = step(&s, Action::Noop, Action::Advance, &cfg).unwrap();
        assert_eq!(out.next_state.human, PlayerPos::Arrived);
        assert_eq!((out.agent_reward, out.human_reward), (0, 30));
        assert!(out.terminal);
    }

    #[test]
    fn step_errors() {
        let cfg = GridConfig::default();
        let s = state(PlayerPos::at(1, 5), PlayerPos::at(1, 1));
        assert!(matches!(
            step(&s, Action::Up, Action::Stay, &cfg),
            Err(Error::IllegalAction { seat: Seat::Agent, .. })
        ));
        assert!(matches!(
            step(&s, Action::Stay, Action::Noop, &cfg),
            Err(Error::IllegalAction { seat: Seat::Human, .. })
        ));
        let done = state(PlayerPos::Collided, PlayerPos::Collided);
        assert!(matches!(
            step(&done, Action::Noop, Action::Noop, &cfg),
            Err(Error::TerminalState)
        ));
        let capped = GameState {
            step_count: cfg.max_steps,
            ..s
        };
        assert!(matches!(
            step(&capped, Action::Stay, Action::Stay, &cfg),
            Err(Error::TerminalState)
        ));
    }

    #[test]
    fn horizon_cap_is_terminal() {
        let cfg = GridConfig {
            max_steps: 12,
            ..GridConfig::default()
        };
        let s = GameState {
            step_count: 11,
            ..initial_state(&cfg)
        };
        let out = step(&s, Action::Stay, Action::Stay, &cfg).unwrap();
        assert!(out.terminal);
        assert_eq!((out.agent_reward, out.human_reward), (-1, -1));
    }

    #[test]
    fn gap() {
        assert_eq!(distance_gap(&initial_state(&GridConfig::default())).unwrap(), 5);
        let s = state(PlayerPos::at(1, 3), PlayerPos::at(2, 3));
        assert_eq!(distance_gap(&s).unwrap(), 0);
        let s = state(PlayerPos::at(1, 2), PlayerPos::at(1, 3));
        assert_eq!(distance_gap(&s).unwrap(), -1);
        let s = state(PlayerPos::Arrived, PlayerPos::at(1, 3));
        assert!(distance_gap(&s).is_err());
    }

    /// Breadth-first search over an empty board as an independent check of the
    /// closed-form step count.
    fn shortest_path(start: PlayerPos, seat: Seat, cfg: &GridConfig) -> u32 {
        use std::collections::{HashSet, VecDeque};
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([(start, 0u32)]);
        while let Some((p, d)) = queue.pop_front() {
            if p == PlayerPos::Arrived {
                return d;
            }
            if !seen.insert(p) {
                continue;
            }
            for &a in legal_actions(p).unwrap() {
                let (next, _) = settle(p, moved(p, seat, a), seat, cfg);
                queue.push_back((next, d + 1));
            }
        }
        unreachable!()
    }

    #[test]
    fn remaining_steps_matches_search() {
        let cfg = GridConfig::default();
        assert_eq!(remaining_steps(PlayerPos::at(1, 6), Seat::Agent, &cfg), 5);
        assert_eq!(remaining_steps(PlayerPos::at(2, 3), Seat::Human, &cfg), 4);
        assert_eq!(remaining_steps(PlayerPos::Arrived, Seat::Human, &cfg), 0);
        for seat in [Seat::Agent, Seat::Human] {
            for p in PlayerPos::all(cfg.n_cols) {
                let Some(col) = p.col() else { continue };
                if col == seat.target_col(cfg.n_cols) {
                    continue;
                }
                assert_eq!(remaining_steps(p, seat, &cfg), shortest_path(p, seat, &cfg), "{p}");
            }
        }
    }

    #[test]
    fn position_text_roundtrip() {
        for p in PlayerPos::all(6) {
            assert_eq!(p.to_string().parse::<PlayerPos>().unwrap(), p);
        }
        assert!("3,1".parse::<PlayerPos>().is_err());
        assert!("1".parse::<PlayerPos>().is_err());
    }

    #[test]
    fn predecessor_check() {
        let cfg = GridConfig::default();
        let init = initial_state(&cfg).positions();
        assert!(is_predecessor(&init, &init, &cfg));
        let next = Positions {
            agent: PlayerPos::at(1, 5),
            human: PlayerPos::at(2, 1),
        };
        assert!(is_predecessor(&init, &next, &cfg));
        let jump = Positions {
            agent: PlayerPos::at(1, 4),
            human: PlayerPos::at(1, 1),
        };
        assert!(!is_predecessor(&init, &jump, &cfg));
    }
}
