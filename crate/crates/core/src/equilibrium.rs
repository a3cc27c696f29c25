//! Exhaustive best-response check for a pair of position-Markov policies.
//!
//! Every position pair reachable from the initial state under any joint
//! action is treated as the root of a subgame with `horizon` steps left. For
//! each seat we compare the discounted value of following its own policy
//! against the best response to the opponent's fixed policy, both computed by
//! backward induction. A pair is a subgame-perfect equilibrium when no seat
//! gains more than [`EQUILIBRIUM_TOLERANCE`] anywhere.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;

use crate::agents::{ActionDist, AgentPolicy};
use crate::error::{Error, Result};
use crate::game::{
    available_actions, initial_state, step, Action, GameState, GridConfig, Positions, Seat,
    VelocityState,
};

pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BestResponseReport {
    pub verified: bool,
    pub worst_state: Option<GameState>,
    pub worst_seat: Option<Seat>,
    pub gain: f64,
    /// Largest deviation gain of either seat at the initial state.
    pub initial_gain: f64,
    pub states_checked: usize,
}

struct Edge {
    agent: Action,
    human: Action,
    next: usize,
    agent_reward: f64,
    human_reward: f64,
}

/// Reachable position pairs with their joint transitions.
struct GameGraph {
    states: Vec<Positions>,
    edges: Vec<Vec<Edge>>,
    terminal: Vec<bool>,
}

impl GameGraph {
    fn build(cfg: &GridConfig) -> Result<GameGraph> {
        let unbounded = cfg.unbounded();
        let start = initial_state(cfg).positions();
        let mut index = HashMap::from([(start, 0usize)]);
        let mut states = vec![start];
        let mut edges = Vec::new();
        let mut terminal = Vec::new();
        let mut queue = VecDeque::from([0usize]);
        // BFS assigns indices in discovery order, so edges[i] is filled in order.
        while let Some(i) = queue.pop_front() {
            let here = states[i];
            let done = here.both_finished();
            terminal.push(done);
            let mut out = Vec::new();
            if !done {
                let state = GameState::from_positions(here, 0);
                for &a in available_actions(here.agent) {
                    for &h in available_actions(here.human) {
                        let o = step(&state, a, h, &unbounded)?;
                        let p = o.next_state.positions();
                        let next = *index.entry(p).or_insert_with(|| {
                            states.push(p);
                            queue.push_back(states.len() - 1);
                            states.len() - 1
                        });
                        out.push(Edge {
                            agent: a,
                            human: h,
                            next,
                            agent_reward: o.agent_reward as f64,
                            human_reward: o.human_reward as f64,
                        });
                    }
                }
            }
            edges.push(out);
        }
        Ok(GameGraph {
            states,
            edges,
            terminal,
        })
    }

    fn policy_table(&self, policy: &dyn AgentPolicy, seat: Seat) -> Vec<ActionDist> {
        self.states
            .iter()
            .map(|&p| policy.distribution(&VelocityState::still(GameState::from_positions(p, 0)), seat))
            .collect()
    }
}

fn reward(e: &Edge, seat: Seat) -> f64 {
    match seat {
        Seat::Agent => e.agent_reward,
        Seat::Human => e.human_reward,
    }
}

fn own_action(e: &Edge, seat: Seat) -> Action {
    match seat {
        Seat::Agent => e.agent,
        Seat::Human => e.human,
    }
}

/// Values after `horizon` steps: (on-policy, best response) for one seat.
struct SeatValues {
    on_policy: Vec<f64>,
    best: Vec<f64>,
    /// Best-response continuation with one step fewer, used to read off the
    /// maximizing moves at the root.
    best_prev: Vec<f64>,
}

fn backward_induction(
    graph: &GameGraph,
    agent: &[ActionDist],
    human: &[ActionDist],
    seat: Seat,
    horizon: u32,
    gamma: f64,
) -> SeatValues {
    let n = graph.states.len();
    let (own, opp) = match seat {
        Seat::Agent => (agent, human),
        Seat::Human => (human, agent),
    };
    let mut v = vec![0.0; n];
    let mut br = vec![0.0; n];
    let mut br_prev = vec![0.0; n];
    for _ in 0..horizon {
        let mut v_next = vec![0.0; n];
        let mut br_next = vec![0.0; n];
        for s in 0..n {
            if graph.terminal[s] {
                continue;
            }
            let mut on = 0.0;
            let mut by_move: [f64; 5] = [0.0; 5];
            let mut seen: [bool; 5] = [false; 5];
            for e in &graph.edges[s] {
                let mine = own_action(e, seat);
                let theirs = own_action(e, seat.other());
                let p_opp = opp[s].prob(theirs);
                let p_own = own[s].prob(mine);
                on += p_own * p_opp * (reward(e, seat) + gamma * v[e.next]);
                by_move[mine.index()] += p_opp * (reward(e, seat) + gamma * br[e.next]);
                seen[mine.index()] = true;
            }
            v_next[s] = on;
            br_next[s] = (0..5)
                .filter(|&i| seen[i])
                .map(|i| by_move[i])
                .fold(f64::NEG_INFINITY, f64::max);
        }
        v = v_next;
        br_prev = std::mem::replace(&mut br, br_next);
    }
    SeatValues {
        on_policy: v,
        best: br,
        best_prev: br_prev,
    }
}

fn check_termination(
    graph: &GameGraph,
    agent: &[ActionDist],
    human: &[ActionDist],
    horizon: u32,
) -> f64 {
    let n = graph.states.len();
    let mut alive: Vec<f64> = graph.terminal.iter().map(|&t| if t { 0.0 } else { 1.0 }).collect();
    for _ in 0..horizon {
        let mut next = vec![0.0; n];
        for s in 0..n {
            if graph.terminal[s] {
                continue;
            }
            next[s] = graph.edges[s]
                .iter()
                .map(|e| agent[s].prob(e.agent) * human[s].prob(e.human) * alive[e.next])
                .sum();
        }
        alive = next;
    }
    alive[0]
}

/// Checks that `agent_policy` (agent seat) and `human_policy` (human seat)
/// are mutual best responses in every reachable subgame.
///
/// Both policies must depend on current positions only.
pub fn verify_equilibrium(
    agent_policy: &dyn AgentPolicy,
    human_policy: &dyn AgentPolicy,
    cfg: &GridConfig,
    horizon: u32,
    gamma: f64,
) -> Result<BestResponseReport> {
    cfg.validate()?;
    if horizon < 2 * cfg.n_cols as u32 {
        return Err(Error::HorizonTooShort {
            horizon,
            reason: format!("must be at least 2 * n_cols = {}", 2 * cfg.n_cols as u32),
        });
    }
    let graph = GameGraph::build(cfg)?;
    let agent = graph.policy_table(agent_policy, Seat::Agent);
    let human = graph.policy_table(human_policy, Seat::Human);

    let unfinished = check_termination(&graph, &agent, &human, horizon);
    if unfinished > 1e-12 {
        return Err(Error::HorizonTooShort {
            horizon,
            reason: format!(
                "policy-following play from the initial state is still running with probability {unfinished:.3e}"
            ),
        });
    }

    let mut worst: Option<(f64, usize, Seat)> = None;
    let mut initial_gain = 0.0f64;
    for seat in [Seat::Agent, Seat::Human] {
        let vals = backward_induction(&graph, &agent, &human, seat, horizon, gamma);
        initial_gain = initial_gain.max(vals.best[0] - vals.on_policy[0]);
        for s in 0..graph.states.len() {
            if graph.terminal[s] || !graph.states[s].seat(seat).is_on_board() {
                continue;
            }
            let gain = vals.best[s] - vals.on_policy[s];
            if worst.is_none_or(|(g, _, _)| gain > g) {
                worst = Some((gain, s, seat));
            }
        }
    }
    let (gain, s, seat) = worst.unwrap_or((0.0, 0, Seat::Agent));
    Ok(BestResponseReport {
        verified: gain <= EQUILIBRIUM_TOLERANCE,
        worst_state: worst.map(|_| GameState::from_positions(graph.states[s], 0)),
        worst_seat: worst.map(|_| seat),
        gain: gain.max(0.0),
        initial_gain,
        states_checked: graph.terminal.iter().filter(|t| !**t).count(),
    })
}

/// For every reachable state where `seat` is on the board, the moves that
/// attain the best-response value against `opponent` (within tolerance).
pub fn best_response_moves(
    opponent: &dyn AgentPolicy,
    seat: Seat,
    cfg: &GridConfig,
    horizon: u32,
    gamma: f64,
) -> Result<Vec<(Positions, Vec<Action>)>> {
    let graph = GameGraph::build(cfg)?;
    let opp_table = graph.policy_table(opponent, seat.other());
    // The acting seat's own policy does not enter the best-response recursion.
    let filler = vec![ActionDist::point(Action::Noop); graph.states.len()];
    let (agent, human) = match seat {
        Seat::Agent => (&filler, &opp_table),
        Seat::Human => (&opp_table, &filler),
    };
    let vals = backward_induction(&graph, agent, human, seat, horizon, gamma);
    let mut out = Vec::new();
    for s in 0..graph.states.len() {
        if graph.terminal[s] || !graph.states[s].seat(seat).is_on_board() {
            continue;
        }
        let mut q = [f64::NEG_INFINITY; 5];
        for e in &graph.edges[s] {
            let mine = own_action(e, seat);
            let theirs = own_action(e, seat.other());
            let p = opp_table[s].prob(theirs);
            if q[mine.index()] == f64::NEG_INFINITY {
                q[mine.index()] = 0.0;
            }
            q[mine.index()] += p * (reward(e, seat) + gamma * vals.best_prev[e.next]);
        }
        let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let moves = Action::ALL
            .iter()
            .copied()
            .filter(|a| q[a.index()] >= best - EQUILIBRIUM_TOLERANCE)
            .collect();
        out.push((graph.states[s], moves));
    }
    Ok(out)
}
