//! Logged games and their replay validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{initial_state, step, Action, GameState, GridConfig, StepOutcome, VelocityState};
use crate::sarl::ScorePair;

pub const LIKERT_MIN: u8 = 1;
pub const LIKERT_MAX: u8 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    /// State before the joint move.
    pub state: GameState,
    pub agent_action: Action,
    pub human_action: Action,
    pub agent_reward: i32,
    pub human_reward: i32,
}

/// Post-game questionnaire: agreement with five statements about the agent
/// (aggressive, generous, wise, predictable, felt like a computer).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Survey {
    pub responses: [u8; 5],
}

impl Survey {
    pub fn new(responses: [u8; 5]) -> Result<Survey> {
        if let Some(bad) = responses
            .iter()
            .find(|r| !(LIKERT_MIN..=LIKERT_MAX).contains(*r))
        {
            return Err(Error::Parse(format!(
                "survey response {bad} outside {LIKERT_MIN}..={LIKERT_MAX}"
            )));
        }
        Ok(Survey { responses })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Demographics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub education: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub driving_license: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub grid: GridConfig,
    pub opponent_agent_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_name: Option<String>,
    pub steps: Vec<StepRecord>,
    pub final_scores: ScorePair,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survey: Option<Survey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<Demographics>,
}

impl Episode {
    /// Each step paired with the view the players acted on.
    pub fn views(&self) -> impl Iterator<Item = (VelocityState, &StepRecord)> {
        self.steps.iter().enumerate().map(move |(i, rec)| {
            let previous = if i == 0 {
                rec.state
            } else {
                self.steps[i - 1].state
            };
            (
                VelocityState {
                    current: rec.state,
                    previous,
                },
                rec,
            )
        })
    }

    pub fn collided(&self) -> bool {
        // Only a collision pays the collision penalty, and it ends the game.
        self.steps.last().is_some_and(|s| {
            s.agent_reward == self.grid.collision_penalty
                && s.human_reward == self.grid.collision_penalty
                && s.agent_action != Action::Noop
        })
    }

    /// Replays the logged steps and returns the final state.
    pub fn final_state(&self) -> Result<GameState> {
        let mut state = initial_state(&self.grid);
        for (i, rec) in self.steps.iter().enumerate() {
            let out = step(&state, rec.agent_action, rec.human_action, &self.grid).map_err(|e| {
                Error::Replay {
                    episode: self.id.clone(),
                    step: i,
                    reason: e.to_string(),
                }
            })?;
            state = out.next_state;
        }
        Ok(state)
    }

    /// Checks that every logged state, reward and the final scores agree
    /// with a replay under the game rules.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let fail = |step: usize, reason: String| Error::Replay {
            episode: self.id.clone(),
            step,
            reason,
        };
        let mut state = initial_state(&self.grid);
        let (mut agent_total, mut human_total) = (0i64, 0i64);
        let mut terminal = state.is_terminal(&self.grid);
        for (i, rec) in self.steps.iter().enumerate() {
            if rec.state != state {
                return Err(fail(i, format!("logged state {:?} != replayed {:?}", rec.state, state)));
            }
            let out = step(&state, rec.agent_action, rec.human_action, &self.grid)
                .map_err(|e| fail(i, e.to_string()))?;
            if (out.agent_reward, out.human_reward) != (rec.agent_reward, rec.human_reward) {
                return Err(fail(
                    i,
                    format!(
                        "logged rewards ({}, {}) != replayed ({}, {})",
                        rec.agent_reward, rec.human_reward, out.agent_reward, out.human_reward
                    ),
                ));
            }
            agent_total += out.agent_reward as i64;
            human_total += out.human_reward as i64;
            state = out.next_state;
            terminal = out.terminal;
        }
        let n = self.steps.len();
        if self.final_scores.agent_score != agent_total as f64
            || self.final_scores.human_score != human_total as f64
        {
            return Err(fail(
                n,
                format!(
                    "final scores ({}, {}) != replayed sums ({agent_total}, {human_total})",
                    self.final_scores.agent_score, self.final_scores.human_score
                ),
            ));
        }
        let natural_end = state.positions().both_finished();
        if self.truncated == natural_end {
            return Err(fail(
                n,
                format!("truncated flag {} inconsistent with final state", self.truncated),
            ));
        }
        if !self.truncated && !terminal {
            return Err(fail(n, "episode ends before a terminal state".into()));
        }
        Ok(())
    }
}

/// Accumulates a game step by step; shared by the simulator and the live
/// play service.
#[derive(Clone, Debug)]
pub struct EpisodeRecorder {
    grid: GridConfig,
    view: VelocityState,
    steps: Vec<StepRecord>,
    agent_total: i64,
    human_total: i64,
    last: Option<StepOutcome>,
}

impl EpisodeRecorder {
    pub fn new(grid: GridConfig) -> Result<Self> {
        grid.validate()?;
        Ok(EpisodeRecorder {
            grid,
            view: VelocityState::initial(&grid),
            steps: Vec::new(),
            agent_total: 0,
            human_total: 0,
            last: None,
        })
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn view(&self) -> &VelocityState {
        &self.view
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn last_outcome(&self) -> Option<&StepOutcome> {
        self.last.as_ref()
    }

    pub fn scores(&self) -> ScorePair {
        ScorePair {
            agent_score: self.agent_total as f64,
            human_score: self.human_total as f64,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.view.current.is_terminal(&self.grid)
    }

    pub fn apply(&mut self, agent_action: Action, human_action: Action) -> Result<StepOutcome> {
        let state = self.view.current;
        let out = step(&state, agent_action, human_action, &self.grid)?;
        self.steps.push(StepRecord {
            state,
            agent_action,
            human_action,
            agent_reward: out.agent_reward,
            human_reward: out.human_reward,
        });
        self.agent_total += out.agent_reward as i64;
        self.human_total += out.human_reward as i64;
        self.view = self.view.advance(out.next_state);
        self.last = Some(out);
        Ok(out)
    }

    /// Closes the log. Games that stopped before both players finished are
    /// flagged truncated.
    pub fn finish(self, id: impl Into<String>, opponent: impl Into<String>) -> Episode {
        let truncated = !self.view.current.positions().both_finished();
        Episode {
            id: id.into(),
            grid: self.grid,
            opponent_agent_name: opponent.into(),
            human_name: None,
            final_scores: self.scores(),
            steps: self.steps,
            truncated,
            survey: None,
            demographics: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_game() -> Episode {
        let mut rec = EpisodeRecorder::new(GridConfig::default()).unwrap();
        rec.apply(Action::Advance, Action::Down).unwrap();
        for _ in 0..4 {
            rec.apply(Action::Advance, Action::Stay).unwrap();
        }
        rec.apply(Action::Noop, Action::Up).unwrap();
        for _ in 0..5 {
            rec.apply(Action::Noop, Action::Advance).unwrap();
        }
        assert!(rec.is_terminal());
        rec.finish("e0", "aggressive")
    }

    #[test]
    fn recorded_game_validates() {
        let ep = short_game();
        ep.validate().unwrap();
        assert!(!ep.truncated);
        // agent: 4 paid steps then arrival; human: 10 paid steps then arrival
        assert_eq!(ep.final_scores.agent_score, 30.0 - 4.0);
        assert_eq!(ep.final_scores.human_score, 30.0 - 10.0);
        assert!(!ep.collided());
    }

    #[test]
    fn tampering_is_detected() {
        let mut ep = short_game();
        ep.steps[3].human_reward = 5;
        assert!(matches!(ep.validate(), Err(Error::Replay { step: 3, .. })));

        let mut ep = short_game();
        ep.steps[2].human_action = Action::Advance;
        assert!(matches!(ep.validate(), Err(Error::Replay { step: 2, .. })));

        let mut ep = short_game();
        ep.final_scores.agent_score += 1.0;
        assert!(ep.validate().is_err());

        let mut ep = short_game();
        ep.truncated = true;
        assert!(ep.validate().is_err());
    }

    #[test]
    fn unfinished_game_is_truncated() {
        let mut rec = EpisodeRecorder::new(GridConfig::default()).unwrap();
        rec.apply(Action::Stay, Action::Stay).unwrap();
        let ep = rec.finish("e1", "careful");
        assert!(ep.truncated);
        ep.validate().unwrap();
    }

    #[test]
    fn survey_range() {
        assert!(Survey::new([3, 5, 6, 4, 2]).is_ok());
        assert!(Survey::new([3, 5, 8, 4, 2]).is_err());
        assert!(Survey::new([0, 5, 6, 4, 2]).is_err());
    }
}
