//! MDP planning with the human model inside the transition kernel.
//!
//! The agent's objective blends both players' outcomes,
//! `beta * u(agent) + (1 - beta) * u(human)`. The process stops as soon as the
//! agent's fate is decided: on a collision, on the agent's arrival, or on the
//! human's arrival. The finished player's remaining journey is folded into a
//! one-shot reward `arrival + step_cost * remaining_steps` for the player
//! still on the board, so there is no need to keep simulating it.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{ActionDist, AgentPolicy};
use crate::error::{Error, Result};
use crate::game::{
    legal_actions, remaining_steps, step, Action, GameState, GridConfig, PlayerPos, Seat,
    StepOutcome, VelocityState,
};
use crate::human_model::{HumanModel, Representation, StateKey};

pub const POLICY_SCHEMA_VERSION: u32 = 1;

/// Order in which numerically tied actions are preferred: yield first, then
/// wait, then climb back, then advance.
pub const TIE_PREFERENCE: [Action; 4] = [Action::Down, Action::Stay, Action::Up, Action::Advance];

/// Q-values closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub gamma: f64,
    pub beta: f64,
    pub representation: Representation,
    /// Sup-norm change between sweeps below which iteration stops.
    pub epsilon: f64,
    pub max_sweeps: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            gamma: 0.999,
            beta: 1.0,
            representation: Representation::PositionsWithVelocity,
            epsilon: 1e-6,
            max_sweeps: 200_000,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidPlannerConfig(format!("beta {} outside [0, 1]", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidPlannerConfig(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidPlannerConfig(format!("epsilon {} must be positive", self.epsilon)));
        }
        if self.max_sweeps == 0 {
            return Err(Error::InvalidPlannerConfig("max_sweeps must be positive".into()));
        }
        Ok(())
    }

    pub fn with_beta(self, beta: f64) -> Self {
        PlannerConfig { beta, ..self }
    }

    pub fn with_representation(self, representation: Representation) -> Self {
        PlannerConfig {
            representation,
            ..self
        }
    }
}

/// Which of the four blended-reward cases a transition falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardCase {
    Collision,
    /// The human reached its side while the agent is still on the board.
    HumanArrived,
    /// The agent reached its side (the human may have arrived as well).
    AgentArrived,
    Ongoing,
}

pub fn reward_case(outcome: &StepOutcome) -> RewardCase {
    let next = &outcome.next_state;
    if next.agent == PlayerPos::Collided {
        RewardCase::Collision
    } else if next.agent == PlayerPos::Arrived {
        RewardCase::AgentArrived
    } else if next.human == PlayerPos::Arrived {
        RewardCase::HumanArrived
    } else {
        RewardCase::Ongoing
    }
}

/// Blended reward of one transition. Remaining steps are measured from the
/// post-transition state, which makes the folded reward equal to the raw
/// points the player still on the board collects from this step on.
pub fn blended_reward(outcome: &StepOutcome, beta: f64, cfg: &GridConfig) -> f64 {
    let arrival = cfg.arrival_reward as f64;
    let per_step = cfg.step_cost as f64;
    let next = &outcome.next_state;
    let (own, other) = match reward_case(outcome) {
        RewardCase::Collision => {
            let c = cfg.collision_penalty as f64;
            (c, c)
        }
        RewardCase::HumanArrived => {
            let left = remaining_steps(next.agent, Seat::Agent, cfg) as f64;
            (arrival + per_step * left, arrival)
        }
        RewardCase::AgentArrived => {
            let left = remaining_steps(next.human, Seat::Human, cfg) as f64;
            (arrival, arrival + per_step * left)
        }
        RewardCase::Ongoing => (per_step, per_step),
    };
    beta * own + (1.0 - beta) * other
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub prob: f64,
    pub reward: f64,
    /// `None` when the transition ends the process.
    pub next: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct StateActions {
    pub actions: Vec<(Action, Vec<Transition>)>,
}

#[derive(Clone, Debug)]
pub struct Mdp {
    grid: GridConfig,
    config: PlannerConfig,
    states: Vec<StateKey>,
    index: HashMap<StateKey, usize>,
    rows: Vec<StateActions>,
}

/// Enumerates every state reachable from the initial state (both players on
/// the board) with the human's moves drawn from `model`.
pub fn build_mdp(model: &HumanModel, grid: &GridConfig, config: &PlannerConfig) -> Result<Mdp> {
    config.validate()?;
    grid.validate()?;
    if model.representation() != config.representation {
        return Err(Error::RepresentationMismatch {
            model: model.representation().to_string(),
            planner: config.representation.to_string(),
        });
    }
    let unbounded = grid.unbounded();
    let start = StateKey::initial(grid, config.representation);
    let mut states = vec![start];
    let mut index = HashMap::from([(start, 0usize)]);
    let mut rows = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let key = states[i];
        let here = key.current();
        let state = GameState::from_positions(here, 0);
        let human = model.distribution(&key)?;
        let mut actions = Vec::new();
        for &a in legal_actions(here.agent)? {
            let mut transitions = Vec::new();
            for (h, p) in human.support() {
                let out = step(&state, a, h, &unbounded)?;
                let reward = blended_reward(&out, config.beta, grid);
                let next = match reward_case(&out) {
                    RewardCase::Ongoing => {
                        let k = key.successor(out.next_state.positions());
                        Some(*index.entry(k).or_insert_with(|| {
                            states.push(k);
                            queue.push_back(states.len() - 1);
                            states.len() - 1
                        }))
                    }
                    _ => None,
                };
                transitions.push(Transition {
                    prob: p,
                    reward,
                    next,
                });
            }
            actions.push((a, transitions));
        }
        rows.push(StateActions { actions });
    }
    Ok(Mdp {
        grid: *grid,
        config: *config,
        states,
        index,
        rows,
    })
}

impl Mdp {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[StateKey] {
        &self.states
    }

    pub fn index_of(&self, key: &StateKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn row(&self, i: usize) -> &StateActions {
        &self.rows[i]
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    /// Copy with every reward multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Mdp {
        let mut out = self.clone();
        for row in &mut out.rows {
            for (_, ts) in &mut row.actions {
                for t in ts {
                    t.reward *= factor;
                }
            }
        }
        out
    }

    fn q(&self, transitions: &[Transition], values: &[f64], gamma: f64) -> f64 {
        transitions
            .iter()
            .map(|t| t.prob * (t.reward + gamma * t.next.map_or(0.0, |n| values[n])))
            .sum()
    }

    /// Q-values of every legal action at state `i`.
    pub fn q_values(&self, i: usize, values: &[f64]) -> Vec<(Action, f64)> {
        self.rows[i]
            .actions
            .iter()
            .map(|(a, ts)| (*a, self.q(ts, values, self.config.gamma)))
            .collect()
    }

    /// Greedy action with ties broken by [`TIE_PREFERENCE`].
    pub fn greedy(&self, i: usize, values: &[f64]) -> Action {
        pick_greedy(&self.q_values(i, values))
    }

    fn iterate<F>(&self, mut sweep: F) -> Result<(Vec<f64>, Vec<f64>)>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let mut values = vec![0.0; self.len()];
        let mut history = Vec::new();
        for _ in 0..self.config.max_sweeps {
            let next = sweep(&values);
            let residual = next
                .iter()
                .zip(&values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            values = next;
            history.push(residual);
            if residual < self.config.epsilon {
                return Ok((values, history));
            }
        }
        Err(Error::NotConverged {
            sweeps: history.len(),
            residual: history.last().copied().unwrap_or(f64::INFINITY),
        })
    }

    fn table(&self, values: &[f64], residuals: Vec<f64>) -> ValueTable {
        ValueTable {
            values: self.states.iter().copied().zip(values.iter().copied()).collect(),
            initial: values[0],
            residual: residuals.last().copied().unwrap_or(0.0),
            sweeps: residuals.len(),
            residual_history: residuals,
        }
    }

    /// Jacobi value iteration: every sweep reads the previous table and writes
    /// a fresh one, so the result does not depend on the worker count.
    pub fn value_iteration(&self) -> Result<Solution> {
        let gamma = self.config.gamma;
        let (values, residuals) = self.iterate(|v| {
            (0..self.len())
                .into_par_iter()
                .map(|i| {
                    self.rows[i]
                        .actions
                        .iter()
                        .map(|(_, ts)| self.q(ts, v, gamma))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect()
        })?;
        let actions = (0..self.len())
            .map(|i| (self.states[i], self.greedy(i, &values)))
            .collect();
        Ok(Solution {
            values: self.table(&values, residuals),
            policy: Policy { actions },
        })
    }

    /// Fixed point of the Bellman expectation operator for the agent policy
    /// `policy` (queried in the agent seat).
    pub fn evaluate(&self, policy: &dyn AgentPolicy) -> Result<ValueTable> {
        let gamma = self.config.gamma;
        let mut dists: Vec<Vec<(usize, f64)>> = Vec::with_capacity(self.len());
        for (i, key) in self.states.iter().enumerate() {
            let dist: ActionDist = policy.distribution(&key.to_view(), Seat::Agent);
            let mut row = Vec::new();
            for (a, p) in dist.support() {
                let slot = self.rows[i]
                    .actions
                    .iter()
                    .position(|(b, _)| *b == a)
                    .ok_or(Error::IllegalAction {
                        seat: Seat::Agent,
                        action: a,
                        pos: key.current().agent,
                    })?;
                row.push((slot, p));
            }
            dists.push(row);
        }
        let (values, residuals) = self.iterate(|v| {
            (0..self.len())
                .into_par_iter()
                .map(|i| {
                    dists[i]
                        .iter()
                        .map(|&(slot, p)| p * self.q(&self.rows[i].actions[slot].1, v, gamma))
                        .sum()
                })
                .collect()
        })?;
        Ok(self.table(&values, residuals))
    }
}

pub(crate) fn pick_greedy(q: &[(Action, f64)]) -> Action {
    let best = q.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    TIE_PREFERENCE
        .iter()
        .copied()
        .find(|a| q.iter().any(|(b, v)| b == a && *v >= best - TIE_TOLERANCE))
        .expect("at least one action per state")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    pub values: BTreeMap<StateKey, f64>,
    /// Value of the initial state: the predicted score.
    pub initial: f64,
    pub residual: f64,
    pub sweeps: usize,
    pub residual_history: Vec<f64>,
}

impl ValueTable {
    pub fn get(&self, key: &StateKey) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            version: u32,
            initial: f64,
            residual: f64,
            sweeps: usize,
            values: &'a BTreeMap<StateKey, f64>,
        }
        Ok(serde_json::to_string_pretty(&Doc {
            version: POLICY_SCHEMA_VERSION,
            initial: self.initial,
            residual: self.residual,
            sweeps: self.sweeps,
            values: &self.values,
        })?)
    }
}

/// Greedy action per MDP state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub actions: BTreeMap<StateKey, Action>,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub values: ValueTable,
    pub policy: Policy,
}

pub fn value_iteration(mdp: &Mdp) -> Result<Solution> {
    mdp.value_iteration()
}

/// Builds the MDP for `model` and evaluates `policy` on it.
pub fn policy_evaluation(
    policy: &dyn AgentPolicy,
    model: &HumanModel,
    grid: &GridConfig,
    config: &PlannerConfig,
) -> Result<ValueTable> {
    build_mdp(model, grid, config)?.evaluate(policy)
}

/// Moves for the agent once the human has left the board: a single-player
/// problem paying `beta` times the agent's raw rewards. With `beta = 0` every
/// move is tied and the tie preference decides.
fn solo_moves(grid: &GridConfig, config: &PlannerConfig) -> BTreeMap<PlayerPos, Action> {
    let cells: Vec<PlayerPos> = PlayerPos::all(grid.n_cols)
        .into_iter()
        .filter(|p| p.col().is_some_and(|c| c != Seat::Agent.target_col(grid.n_cols)))
        .collect();
    let idx: HashMap<PlayerPos, usize> = cells.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let unbounded = grid.unbounded();
    let edges: Vec<Vec<(Action, f64, Option<usize>)>> = cells
        .iter()
        .map(|&p| {
            let state = GameState {
                agent: p,
                human: PlayerPos::Arrived,
                step_count: 0,
            };
            legal_actions(p)
                .expect("on board")
                .iter()
                .map(|&a| {
                    let o = step(&state, a, Action::Noop, &unbounded).expect("legal solo move");
                    (
                        a,
                        config.beta * o.agent_reward as f64,
                        idx.get(&o.next_state.agent).copied(),
                    )
                })
                .collect()
        })
        .collect();
    let q = |v: &[f64], i: usize| -> Vec<(Action, f64)> {
        edges[i]
            .iter()
            .map(|&(a, r, n)| (a, r + config.gamma * n.map_or(0.0, |j| v[j])))
            .collect()
    };
    let mut v = vec![0.0; cells.len()];
    for _ in 0..config.max_sweeps {
        let next: Vec<f64> = (0..cells.len())
            .map(|i| q(&v, i).iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if residual < config.epsilon * 1e-3 {
            break;
        }
    }
    cells
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, pick_greedy(&q(&v, i))))
        .collect()
}

/// A solved policy wrapped as an agent.
///
/// In the agent seat it looks up the current state key; once the human has
/// finished it follows the single-player continuation. In the human seat the
/// board is mirrored first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedAgent {
    pub name: String,
    pub representation: Representation,
    pub grid: GridConfig,
    pub beta: f64,
    pub gamma: f64,
    pub actions: BTreeMap<StateKey, Action>,
    pub solo: BTreeMap<PlayerPos, Action>,
}

impl PlannedAgent {
    pub fn new(name: impl Into<String>, policy: Policy, grid: &GridConfig, config: &PlannerConfig) -> Self {
        PlannedAgent {
            name: name.into(),
            representation: config.representation,
            grid: *grid,
            beta: config.beta,
            gamma: config.gamma,
            actions: policy.actions,
            solo: solo_moves(grid, config),
        }
    }

    /// Action for the agent seat, or `None` when the state was never part
    /// of the solved MDP.
    pub fn action_at(&self, view: &VelocityState) -> Option<Action> {
        let cur = view.current;
        if !cur.agent.is_on_board() {
            return Some(Action::Noop);
        }
        if !cur.human.is_on_board() {
            return self.solo.get(&cur.agent).copied();
        }
        self.actions
            .get(&StateKey::from_view(view, self.representation))
            .copied()
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            version: u32,
            #[serde(flatten)]
            agent: &'a PlannedAgent,
        }
        Ok(serde_json::to_string(&Doc {
            version: POLICY_SCHEMA_VERSION,
            agent: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<PlannedAgent> {
        #[derive(Deserialize)]
        struct Doc {
            version: u32,
            #[serde(flatten)]
            agent: PlannedAgent,
        }
        let doc: Doc = serde_json::from_str(text)?;
        if doc.version != POLICY_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: doc.version,
                expected: POLICY_SCHEMA_VERSION,
            });
        }
        Ok(doc.agent)
    }
}

impl AgentPolicy for PlannedAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn distribution(&self, view: &VelocityState, seat: Seat) -> ActionDist {
        let own_view = match seat {
            Seat::Agent => *view,
            Seat::Human => view.mirror(self.grid.n_cols),
        };
        // States outside the solved MDP only arise from non-standard starts;
        // Stay is legal in both rows.
        ActionDist::point(self.action_at(&own_view).unwrap_or(Action::Stay))
    }
}

/// Builds, solves and wraps an agent in one call.
pub fn solve_agent(
    name: &str,
    model: &HumanModel,
    grid: &GridConfig,
    config: &PlannerConfig,
) -> Result<(PlannedAgent, Solution)> {
    let mdp = build_mdp(model, grid, config)?;
    let solution = mdp.value_iteration()?;
    let agent = PlannedAgent::new(name, solution.policy.clone(), grid, config);
    Ok((agent, solution))
}
