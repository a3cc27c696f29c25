//! Baseline agents and the equilibrium strategy pair.
//!
//! Every policy here reasons in a seat-relative frame: the acting player moves
//! toward increasing columns and the opponent toward decreasing ones. In that
//! frame the gap `x(opponent) - x(self)` equals `distance_gap` for either seat,
//! so the same rule table serves both sides of the board.

use rand::{Rng, RngCore};

use crate::game::{available_actions, Action, PlayerPos, Seat, VelocityState};

/// Probability mass over the move alphabet, indexed by [`Action::index`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionDist {
    probs: [f64; 5],
}

impl ActionDist {
    pub fn point(action: Action) -> Self {
        let mut probs = [0.0; 5];
        probs[action.index()] = 1.0;
        ActionDist { probs }
    }

    pub fn uniform(actions: &[Action]) -> Self {
        let mut probs = [0.0; 5];
        let p = 1.0 / actions.len() as f64;
        for a in actions {
            probs[a.index()] = p;
        }
        ActionDist { probs }
    }

    /// Builds a distribution from raw weights; weights need not be normalized.
    pub fn from_weights(weights: &[(Action, f64)]) -> Self {
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        let mut probs = [0.0; 5];
        for &(a, w) in weights {
            probs[a.index()] += w / total;
        }
        ActionDist { probs }
    }

    pub fn prob(&self, action: Action) -> f64 {
        self.probs[action.index()]
    }

    pub fn support(&self) -> impl Iterator<Item = (Action, f64)> + '_ {
        Action::ALL
            .iter()
            .map(|&a| (a, self.probs[a.index()]))
            .filter(|&(_, p)| p > 0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn is_point_mass(&self) -> bool {
        self.support().count() == 1
    }

    /// `self * (1 - weight) + other * weight`.
    pub fn blend(&self, other: &ActionDist, weight: f64) -> ActionDist {
        let mut probs = [0.0; 5];
        for (i, p) in probs.iter_mut().enumerate() {
            *p = self.probs[i] * (1.0 - weight) + other.probs[i] * weight;
        }
        ActionDist { probs }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Action {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = Action::Noop;
        for (a, p) in self.support() {
            acc += p;
            last = a;
            if u < acc {
                return a;
            }
        }
        last
    }
}

/// A named mapping from an observed state to a distribution over the acting
/// player's legal actions.
pub trait AgentPolicy: Send + Sync {
    fn name(&self) -> &str;

    fn distribution(&self, view: &VelocityState, seat: Seat) -> ActionDist;

    fn sample(&self, view: &VelocityState, seat: Seat, rng: &mut dyn RngCore) -> Action {
        self.distribution(view, seat).sample(rng)
    }
}

impl<P: AgentPolicy + ?Sized> AgentPolicy for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn distribution(&self, view: &VelocityState, seat: Seat) -> ActionDist {
        (**self).distribution(view, seat)
    }
}

impl<P: AgentPolicy + ?Sized> AgentPolicy for std::sync::Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn distribution(&self, view: &VelocityState, seat: Seat) -> ActionDist {
        (**self).distribution(view, seat)
    }
}

/// The acting player's situation in its own frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Perspective {
    pub own_row: u8,
    /// `None` once the opponent has left the board.
    pub opponent_row: Option<u8>,
    /// `x(opponent) - x(self)` in the acting player's frame; meaningful only
    /// while the opponent is on the board.
    pub gap: i32,
}

impl Perspective {
    /// `None` when the acting player has already finished.
    pub fn of(view: &VelocityState, seat: Seat) -> Option<Perspective> {
        let me = view.current.seat(seat);
        let them = view.current.seat(seat.other());
        let own_row = me.row()?;
        let gap = match (view.current.agent, view.current.human) {
            (PlayerPos::OnBoard { col: a, .. }, PlayerPos::OnBoard { col: h, .. }) => {
                a as i32 - h as i32
            }
            _ => 0,
        };
        Some(Perspective {
            own_row,
            opponent_row: them.row(),
            gap,
        })
    }

    /// The opponent is finished or has already passed.
    fn clear(&self) -> bool {
        self.opponent_row.is_none() || self.gap < 0
    }
}

/// Moves the first equilibrium strategy prescribes: always press forward.
pub fn aggressive_permitted(p: &Perspective) -> &'static [Action] {
    if p.own_row == 1 {
        &[Action::Advance]
    } else {
        &[Action::Up]
    }
}

/// Moves the yielding equilibrium strategy permits. Where the strategy leaves
/// a free choice both moves are returned.
pub fn careful_permitted(p: &Perspective) -> &'static [Action] {
    const ADVANCE: &[Action] = &[Action::Advance];
    const DOWN: &[Action] = &[Action::Down];
    const STAY: &[Action] = &[Action::Stay];
    const UP: &[Action] = &[Action::Up];
    const STAY_OR_DOWN: &[Action] = &[Action::Stay, Action::Down];
    const STAY_OR_UP: &[Action] = &[Action::Stay, Action::Up];

    if p.clear() {
        return if p.own_row == 1 { ADVANCE } else { UP };
    }
    let opp_row = p.opponent_row.unwrap_or(1);
    let d = p.gap;
    if p.own_row == 1 {
        match (opp_row, d) {
            (_, d) if d >= 3 => ADVANCE,
            (1, 1) => DOWN,
            (1, 2) => STAY_OR_DOWN,
            // Opponent on the shoulder. Directly below or two columns ahead
            // there is no risk; one column ahead it may step Up into the cell
            // we would advance to.
            (2, 1) => STAY_OR_DOWN,
            _ => ADVANCE,
        }
    } else {
        match (opp_row, d) {
            (_, d) if d <= 0 => UP,
            (1, 1) => STAY,
            (1, d) if d >= 4 => UP,
            (2, d) if d >= 3 => UP,
            _ => STAY_OR_UP,
        }
    }
}

/// Deterministic pick from a permitted set: Stay whenever it is allowed.
fn resolve(permitted: &[Action]) -> Action {
    if permitted.contains(&Action::Stay) {
        Action::Stay
    } else {
        permitted[0]
    }
}

#[derive(Clone, Debug, Default)]
pub struct Aggressive;

impl AgentPolicy for Aggressive {
    fn name(&self) -> &str {
        "aggressive"
    }

    fn distribution(&self, view: &VelocityState, seat: Seat) -> ActionDist {
        match Perspective::of(view, seat) {
            Some(p) => ActionDist::point(aggressive_permitted(&p)[0]),
            None => ActionDist::point(Action::Noop),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Careful;

impl AgentPolicy for Careful {
    fn name(&self) -> &str {
        "careful"
    }

    fn distribution(&self, view: &VelocityState, seat: Seat) -> ActionDist {
        match Perspective::of(view, seat) {
            Some(p) => ActionDist::point(resolve(careful_permitted(&p))),
            None => ActionDist::point(Action::Noop),
        }
    }
}

/// Advances unless the opponent occupies the cell ahead; climbs back when
/// the cell above is free.
#[derive(Clone, Debug, Default)]
pub struct SemiAggressive;

impl AgentPolicy for SemiAggressive {
    fn name(&self) -> &str {
        "semi_aggressive"
    }

    fn distribution(&self, view: &VelocityState, seat: Seat) -> ActionDist {
        let Some(p) = Perspective::of(view, seat) else {
            return ActionDist::point(Action::Noop);
        };
        let action = if p.own_row == 1 {
            if p.opponent_row == Some(1) && p.gap == 1 {
                Action::Stay
            } else {
                Action::Advance
            }
        } else if p.opponent_row == Some(1) && p.gap == 0 {
            Action::Stay
        } else {
            Action::Up
        };
        ActionDist::point(action)
    }
}

/// Uniform over the legal moves.
#[derive(Clone, Debug, Default)]
pub struct Uniform;

impl AgentPolicy for Uniform {
    fn name(&self) -> &str {
        "random"
    }

    fn distribution(&self, view: &VelocityState, seat: Seat) -> ActionDist {
        ActionDist::uniform(available_actions(view.current.seat(seat)))
    }
}

pub fn aggressive_policy() -> Aggressive {
    Aggressive
}

pub fn careful_policy() -> Careful {
    Careful
}

pub fn semi_aggressive_policy() -> SemiAggressive {
    SemiAggressive
}

/// Uniformly random agent. Draws come from the episode generator, so a run
/// is reproduced by reusing the episode seed.
pub fn random_policy() -> Uniform {
    Uniform
}

/// Looks up a built-in baseline by name.
pub fn baseline(name: &str) -> Option<Box<dyn AgentPolicy>> {
    match name {
        "careful" => Some(Box::new(Careful)),
        "aggressive" => Some(Box::new(Aggressive)),
        "semi_aggressive" | "semi-aggressive" => Some(Box::new(SemiAggressive)),
        "random" => Some(Box::new(Uniform)),
        _ => None,
    }
}

pub const BASELINE_NAMES: [&str; 4] = ["careful", "aggressive", "semi_aggressive", "random"];
