//! Add-one smoothed conditional action model `P(a | s)` fitted from logged
//! human moves.
//!
//! With `|a_s|` observations of move `a` at state `s`, `n_s` observations in
//! total and `|A_s|` legal moves, the model returns `(|a_s| + 1) / (n_s + |A_s|)`.
//! Unseen states therefore fall back to the uniform distribution and no legal
//! move ever gets probability zero.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::ActionDist;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::game::{
    initial_state, is_predecessor, legal_actions, Action, GameState, GridConfig, Positions, Seat,
    VelocityState,
};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Representation {
    #[serde(rename = "positions")]
    Positions,
    #[serde(rename = "velocity")]
    PositionsWithVelocity,
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::Positions => "positions",
            Representation::PositionsWithVelocity => "velocity",
        })
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positions" => Ok(Representation::Positions),
            "velocity" => Ok(Representation::PositionsWithVelocity),
            _ => Err(Error::Parse(format!(
                "unknown representation {s:?} (expected positions or velocity)"
            ))),
        }
    }
}

/// Canonical model/planner state: positions only, optionally with the
/// previous positions. Step counts are never part of a key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum StateKey {
    Positions(Positions),
    Velocity {
        current: Positions,
        previous: Positions,
    },
}

impl StateKey {
    pub fn from_view(view: &VelocityState, repr: Representation) -> StateKey {
        match repr {
            Representation::Positions => StateKey::Positions(view.current.positions()),
            Representation::PositionsWithVelocity => StateKey::Velocity {
                current: view.current.positions(),
                previous: view.previous.positions(),
            },
        }
    }

    pub fn initial(cfg: &GridConfig, repr: Representation) -> StateKey {
        StateKey::from_view(&VelocityState::initial(cfg), repr)
    }

    pub fn representation(&self) -> Representation {
        match self {
            StateKey::Positions(_) => Representation::Positions,
            StateKey::Velocity { .. } => Representation::PositionsWithVelocity,
        }
    }

    pub fn current(&self) -> Positions {
        match self {
            StateKey::Positions(p) => *p,
            StateKey::Velocity { current, .. } => *current,
        }
    }

    /// Key of the state reached when the positions move to `next`.
    pub fn successor(&self, next: Positions) -> StateKey {
        match self {
            StateKey::Positions(_) => StateKey::Positions(next),
            StateKey::Velocity { current, .. } => StateKey::Velocity {
                current: next,
                previous: *current,
            },
        }
    }

    /// A view carrying the key's positions (step count zero).
    pub fn to_view(&self) -> VelocityState {
        match self {
            StateKey::Positions(p) => VelocityState::still(GameState::from_positions(*p, 0)),
            StateKey::Velocity { current, previous } => VelocityState {
                current: GameState::from_positions(*current, 0),
                previous: GameState::from_positions(*previous, 0),
            },
        }
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateKey::Positions(p) => write!(f, "{p}"),
            StateKey::Velocity { current, previous } => write!(f, "{current}/{previous}"),
        }
    }
}

impl FromStr for StateKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('/') {
            Some((c, p)) => Ok(StateKey::Velocity {
                current: c.parse()?,
                previous: p.parse()?,
            }),
            None => Ok(StateKey::Positions(s.parse()?)),
        }
    }
}

impl From<StateKey> for String {
    fn from(k: StateKey) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for StateKey {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Per-move observation counts at one state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "BTreeMap<Action, u64>", from = "BTreeMap<Action, u64>")]
pub struct ActionCounts {
    counts: [u64; 5],
}

impl ActionCounts {
    pub fn get(&self, a: Action) -> u64 {
        self.counts[a.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn record(&mut self, a: Action) {
        self.counts[a.index()] += 1;
    }

    pub fn add(&mut self, a: Action, n: u64) {
        self.counts[a.index()] += n;
    }
}

impl From<ActionCounts> for BTreeMap<Action, u64> {
    fn from(c: ActionCounts) -> Self {
        Action::ALL
            .iter()
            .filter(|a| c.get(**a) > 0)
            .map(|&a| (a, c.get(a)))
            .collect()
    }
}

impl From<BTreeMap<Action, u64>> for ActionCounts {
    fn from(m: BTreeMap<Action, u64>) -> Self {
        let mut c = ActionCounts::default();
        for (a, n) in m {
            c.add(a, n);
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HumanModel {
    representation: Representation,
    grid: GridConfig,
    entries: BTreeMap<StateKey, ActionCounts>,
}

#[derive(Serialize, Deserialize)]
struct ModelEntry {
    state: StateKey,
    counts: ActionCounts,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    representation: Representation,
    grid: GridConfig,
    entries: Vec<ModelEntry>,
}

impl HumanModel {
    /// A model with no observations: uniform over legal moves everywhere.
    pub fn empty(representation: Representation, grid: GridConfig) -> HumanModel {
        HumanModel {
            representation,
            grid,
            entries: BTreeMap::new(),
        }
    }

    /// Counts every human move (while the human is on the board) over all
    /// episodes. Only human-seat moves are counted.
    pub fn fit(episodes: &[Episode], representation: Representation, grid: &GridConfig) -> Result<HumanModel> {
        grid.validate()?;
        let mut model = HumanModel::empty(representation, *grid);
        for ep in episodes {
            if ep.grid.n_cols != grid.n_cols {
                return Err(Error::InvalidConfig(format!(
                    "episode {} uses {} columns, model expects {}",
                    ep.id, ep.grid.n_cols, grid.n_cols
                )));
            }
            for (i, (view, rec)) in ep.views().enumerate() {
                if !view.current.human.is_on_board() {
                    continue;
                }
                let legal = legal_actions(view.current.human)?;
                if !legal.contains(&rec.human_action) {
                    return Err(Error::IllegalRecordedAction {
                        episode: ep.id.clone(),
                        step: i,
                        source: Box::new(Error::IllegalAction {
                            seat: Seat::Human,
                            action: rec.human_action,
                            pos: view.current.human,
                        }),
                    });
                }
                model
                    .entries
                    .entry(StateKey::from_view(&view, representation))
                    .or_default()
                    .record(rec.human_action);
            }
        }
        Ok(model)
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn n_states_seen(&self) -> usize {
        self.entries.len()
    }

    pub fn counts(&self, key: &StateKey) -> ActionCounts {
        self.entries.get(key).copied().unwrap_or_default()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&StateKey, &ActionCounts)> {
        self.entries.iter()
    }

    fn check_key(&self, key: &StateKey) -> Result<&'static [Action]> {
        if key.representation() != self.representation {
            return Err(Error::RepresentationMismatch {
                model: self.representation.to_string(),
                planner: key.representation().to_string(),
            });
        }
        let current = key.current();
        if current.agent.is_on_board() && current.agent == current.human {
            return Err(Error::UnreachableKey(key.to_string()));
        }
        if let StateKey::Velocity { current, previous } = key {
            let start = initial_state(&self.grid).positions();
            let valid = (current == previous && *current == start)
                || is_predecessor(previous, current, &self.grid);
            if !valid {
                return Err(Error::UnreachableKey(key.to_string()));
            }
        }
        legal_actions(current.human)
    }

    /// Smoothed distribution over the human's legal moves at `key`.
    pub fn distribution(&self, key: &StateKey) -> Result<ActionDist> {
        let legal = self.check_key(key)?;
        let counts = self.counts(key);
        let n: u64 = legal.iter().map(|&a| counts.get(a)).sum();
        let denom = (n + legal.len() as u64) as f64;
        Ok(ActionDist::from_weights(
            &legal
                .iter()
                .map(|&a| (a, (counts.get(a) + 1) as f64 / denom))
                .collect::<Vec<_>>(),
        ))
    }

    pub fn action_probability(&self, key: &StateKey, action: Action) -> Result<f64> {
        let legal = self.check_key(key)?;
        if !legal.contains(&action) {
            return Err(Error::IllegalAction {
                seat: Seat::Human,
                action,
                pos: key.current().human,
            });
        }
        let counts = self.counts(key);
        let n: u64 = legal.iter().map(|&a| counts.get(a)).sum();
        Ok((counts.get(action) + 1) as f64 / (n + legal.len() as u64) as f64)
    }

    /// Sum of `log P(a | s)` over every human move in the dataset.
    pub fn log_likelihood(&self, episodes: &[Episode]) -> Result<f64> {
        let mut total = 0.0;
        for ep in episodes {
            for (view, rec) in ep.views() {
                if !view.current.human.is_on_board() {
                    continue;
                }
                let key = StateKey::from_view(&view, self.representation);
                total += self.action_probability(&key, rec.human_action)?.ln();
            }
        }
        Ok(total)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            version: MODEL_SCHEMA_VERSION,
            representation: self.representation,
            grid: self.grid,
            entries: self
                .entries
                .iter()
                .map(|(k, c)| ModelEntry {
                    state: *k,
                    counts: *c,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<HumanModel> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.version != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: doc.version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        let mut entries = BTreeMap::new();
        for e in doc.entries {
            if e.state.representation() != doc.representation {
                return Err(Error::RepresentationMismatch {
                    model: doc.representation.to_string(),
                    planner: e.state.representation().to_string(),
                });
            }
            entries.insert(e.state, e.counts);
        }
        Ok(HumanModel {
            representation: doc.representation,
            grid: doc.grid,
            entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::PlayerPos;

    fn upper_key() -> StateKey {
        StateKey::Positions(Positions {
            agent: PlayerPos::at(1, 6),
            human: PlayerPos::at(1, 2),
        })
    }

    #[test]
    fn unseen_states_are_uniform() {
        let m = HumanModel::empty(Representation::Positions, GridConfig::default());
        for a in [Action::Advance, Action::Stay, Action::Down] {
            assert_eq!(m.action_probability(&upper_key(), a).unwrap(), 1.0 / 3.0);
        }
        let lower = StateKey::Positions(Positions {
            agent: PlayerPos::at(1, 6),
            human: PlayerPos::at(2, 2),
        });
        assert_eq!(m.action_probability(&lower, Action::Up).unwrap(), 0.5);
        assert_eq!(m.action_probability(&lower, Action::Stay).unwrap(), 0.5);
    }

    #[test]
    fn succession_rule_on_counts() {
        let mut m = HumanModel::empty(Representation::Positions, GridConfig::default());
        let c = m.entries.entry(upper_key()).or_default();
        c.add(Action::Advance, 2);
        c.add(Action::Stay, 1);
        assert_eq!(m.action_probability(&upper_key(), Action::Advance).unwrap(), 0.5);
        assert_eq!(m.action_probability(&upper_key(), Action::Stay).unwrap(), 2.0 / 6.0);
        assert_eq!(m.action_probability(&upper_key(), Action::Down).unwrap(), 1.0 / 6.0);
    }

    #[test]
    fn illegal_or_finished_queries_fail() {
        let m = HumanModel::empty(Representation::Positions, GridConfig::default());
        assert!(matches!(
            m.action_probability(&upper_key(), Action::Up),
            Err(Error::IllegalAction { .. })
        ));
        let done = StateKey::Positions(Positions {
            agent: PlayerPos::at(1, 6),
            human: PlayerPos::Arrived,
        });
        assert!(m.distribution(&done).is_err());
        let vel = StateKey::Velocity {
            current: upper_key().current(),
            previous: upper_key().current(),
        };
        assert!(matches!(
            m.distribution(&vel),
            Err(Error::RepresentationMismatch { .. })
        ));
    }

    #[test]
    fn velocity_keys_need_a_legal_predecessor() {
        let cfg = GridConfig::default();
        let m = HumanModel::empty(Representation::PositionsWithVelocity, cfg);
        let init = StateKey::initial(&cfg, Representation::PositionsWithVelocity);
        assert!(m.distribution(&init).is_ok());
        let jump = StateKey::Velocity {
            current: Positions {
                agent: PlayerPos::at(1, 4),
                human: PlayerPos::at(1, 1),
            },
            previous: initial_state(&cfg).positions(),
        };
        assert!(matches!(m.distribution(&jump), Err(Error::UnreachableKey(_))));
    }

    #[test]
    fn key_text_roundtrip() {
        let cfg = GridConfig::default();
        let k = StateKey::initial(&cfg, Representation::PositionsWithVelocity);
        assert_eq!(k.to_string(), "1,6|1,1/1,6|1,1");
        assert_eq!(k.to_string().parse::<StateKey>().unwrap(), k);
        let k = upper_key();
        assert_eq!(k.to_string().parse::<StateKey>().unwrap(), k);
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let mut m = HumanModel::empty(Representation::Positions, GridConfig::default());
        m.entries.entry(upper_key()).or_default().add(Action::Down, 7);
        let text = m.to_json().unwrap();
        let back = HumanModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let m = HumanModel::empty(Representation::Positions, GridConfig::default());
        let text = m.to_json().unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(
            HumanModel::from_json(&text),
            Err(Error::SchemaVersion { found: 9, .. })
        ));
    }
}
