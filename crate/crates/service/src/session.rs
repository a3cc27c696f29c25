//! One live game between a remote human and a server-side agent.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sarl_core::episode::Demographics;
use sarl_core::game::{available_actions, legal_actions};
use sarl_core::{Action, AgentPolicy, Episode, EpisodeRecorder, GridConfig, PlayerPos, ScorePair, Seat, Survey};

use crate::error::ServiceError;
use crate::API_SCHEMA_VERSION;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Finished,
    Abandoned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Arrived,
    Collision,
    MaxSteps,
    Abandoned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerStatus {
    OnBoard,
    Arrived,
    Collided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerView {
    pub position: PlayerPos,
    pub status: PlayerStatus,
}

impl From<PlayerPos> for PlayerView {
    fn from(position: PlayerPos) -> Self {
        let status = match position {
            PlayerPos::OnBoard { .. } => PlayerStatus::OnBoard,
            PlayerPos::Arrived => PlayerStatus::Arrived,
            PlayerPos::Collided => PlayerStatus::Collided,
        };
        PlayerView { position, status }
    }
}

/// Both moves of the last committed step, revealed together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub agent_action: Action,
    pub human_action: Action,
    pub agent_reward: i32,
    pub human_reward: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub schema_version: u32,
    pub session_id: String,
    pub opponent: String,
    pub status: Status,
    /// Top row first; cells hold "A" (agent), "H" (human) or "".
    pub board: Vec<Vec<String>>,
    pub agent: PlayerView,
    pub human: PlayerView,
    pub legal_actions: Vec<Action>,
    pub scores: ScorePair,
    pub step_count: u32,
    pub terminal_reason: Option<TerminalReason>,
    pub last_step: Option<StepView>,
}

pub struct Session {
    id: String,
    opponent: String,
    agent: Arc<dyn AgentPolicy>,
    recorder: EpisodeRecorder,
    rng: ChaCha8Rng,
    status: Status,
    /// Seconds since the Unix epoch; informational only.
    created_at: u64,
    last_active: Instant,
    survey: Option<Survey>,
    demographics: Option<Demographics>,
    finalized: bool,
}

impl Session {
    pub fn new(
        id: String,
        opponent: String,
        agent: Arc<dyn AgentPolicy>,
        grid: GridConfig,
        seed: u64,
        created_at: u64,
        now: Instant,
    ) -> Result<Session, ServiceError> {
        Ok(Session {
            id,
            opponent,
            agent,
            recorder: EpisodeRecorder::new(grid).map_err(ServiceError::internal)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            status: Status::Active,
            created_at,
            last_active: now,
            survey: None,
            demographics: None,
            finalized: false,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn created_at(&self) -> u64 {
        self.created_at
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn mark_finalized(&mut self) {
        self.finalized = true;
    }

    pub fn idle_for(&self, now: Instant) -> Duration {
        now.saturating_duration_since(self.last_active)
    }

    fn terminal_reason(&self) -> Option<TerminalReason> {
        let state = &self.recorder.view().current;
        match self.status {
            Status::Abandoned => Some(TerminalReason::Abandoned),
            Status::Active => None,
            Status::Finished if state.agent == PlayerPos::Collided => Some(TerminalReason::Collision),
            Status::Finished if state.positions().both_finished() => Some(TerminalReason::Arrived),
            Status::Finished => Some(TerminalReason::MaxSteps),
        }
    }

    pub fn view(&self) -> View {
        let grid = self.recorder.grid();
        let state = self.recorder.view().current;
        let mut board = vec![vec![String::new(); grid.n_cols as usize]; 2];
        for (pos, mark) in [(state.agent, "A"), (state.human, "H")] {
            if let PlayerPos::OnBoard { row, col } = pos {
                board[row as usize - 1][col as usize - 1] = mark.to_string();
            }
        }
        let legal_actions = if self.status == Status::Active {
            legal_actions(state.human).map(|a| a.to_vec()).unwrap_or_default()
        } else {
            Vec::new()
        };
        View {
            schema_version: API_SCHEMA_VERSION,
            session_id: self.id.clone(),
            opponent: self.opponent.clone(),
            status: self.status,
            board,
            agent: state.agent.into(),
            human: state.human.into(),
            legal_actions,
            scores: self.recorder.scores(),
            step_count: state.step_count,
            terminal_reason: self.terminal_reason(),
            last_step: self.recorder.steps().last().map(|s| StepView {
                agent_action: s.agent_action,
                human_action: s.human_action,
                agent_reward: s.agent_reward,
                human_reward: s.human_reward,
            }),
        }
    }

    /// Commits the human's move together with the agent's. The agent's move
    /// is drawn only after the human's has been accepted. Once the human has
    /// left the board the agent plays out the rest of the game on its own.
    pub fn submit(&mut self, action: Action, now: Instant) -> Result<View, ServiceError> {
        if self.status != Status::Active {
            return Err(ServiceError::SessionFinished);
        }
        let human = self.recorder.view().current.human;
        let legal = available_actions(human);
        if !legal.contains(&action) {
            return Err(ServiceError::IllegalAction {
                action,
                legal: legal.to_vec(),
            });
        }
        self.last_active = now;
        self.commit(action)?;
        while !self.recorder.is_terminal() && !self.recorder.view().current.human.is_on_board() {
            self.commit(Action::Noop)?;
        }
        if self.recorder.is_terminal() {
            self.status = Status::Finished;
        }
        Ok(self.view())
    }

    fn commit(&mut self, human_action: Action) -> Result<(), ServiceError> {
        let view = *self.recorder.view();
        let agent_action = self.agent.sample(&view, Seat::Agent, &mut self.rng);
        self.recorder
            .apply(agent_action, human_action)
            .map_err(ServiceError::internal)?;
        Ok(())
    }

    /// Marks an idle active game abandoned. Returns true on the transition.
    pub fn expire(&mut self, now: Instant, timeout: Duration) -> bool {
        if self.status == Status::Active && self.idle_for(now) >= timeout {
            self.status = Status::Abandoned;
            return true;
        }
        false
    }

    pub fn abandon(&mut self) {
        if self.status == Status::Active {
            self.status = Status::Abandoned;
        }
    }

    pub fn set_survey(
        &mut self,
        responses: [u8; 5],
        demographics: Option<Demographics>,
        now: Instant,
    ) -> Result<(), ServiceError> {
        if self.status != Status::Finished {
            return Err(ServiceError::NotFinished);
        }
        if self.finalized {
            return Err(ServiceError::AlreadyFinalized);
        }
        let survey = Survey::new(responses).map_err(|e| ServiceError::InvalidSurvey(e.to_string()))?;
        self.survey = Some(survey);
        self.demographics = demographics;
        self.last_active = now;
        Ok(())
    }

    /// The game in dataset form.
    pub fn episode(&self) -> Episode {
        let mut ep = self.recorder.clone().finish(self.id.clone(), self.opponent.clone());
        ep.survey = self.survey.clone();
        ep.demographics = self.demographics.clone();
        ep
    }
}
