//! Simulation, metrics, strategy classification and dataset persistence.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{
    aggressive_permitted, careful_permitted, ActionDist, AgentPolicy, Aggressive, Careful, Perspective,
};
use crate::episode::{Episode, EpisodeRecorder};
use crate::error::{Error, Result};
use crate::game::{available_actions, Action, GridConfig, Seat, VelocityState};
use crate::human_model::{HumanModel, StateKey};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Generator for episode `index` of a run seeded with `seed`. Each episode
/// owns a separate stream, so results do not depend on scheduling.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Plays one game. The agent's move is drawn before the human's at every
/// step, both from `rng`.
pub fn run_episode_with_rng(
    agent: &dyn AgentPolicy,
    human: &dyn AgentPolicy,
    grid: &GridConfig,
    id: impl Into<String>,
    rng: &mut dyn RngCore,
) -> Result<Episode> {
    let mut rec = EpisodeRecorder::new(*grid)?;
    while !rec.is_terminal() {
        let view = *rec.view();
        let a = agent.sample(&view, Seat::Agent, rng);
        let h = human.sample(&view, Seat::Human, rng);
        rec.apply(a, h)?;
    }
    let mut ep = rec.finish(id, agent.name());
    ep.human_name = Some(human.name().to_string());
    Ok(ep)
}

pub fn run_episode(
    agent: &dyn AgentPolicy,
    human: &dyn AgentPolicy,
    grid: &GridConfig,
    seed: u64,
) -> Result<Episode> {
    let mut rng = episode_rng(seed, 0);
    run_episode_with_rng(agent, human, grid, format!("{}-{seed}", agent.name()), &mut rng)
}

/// Stand-ins for human players.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SyntheticKind {
    /// The yielding strategy, replaced by a uniform legal move w.p. epsilon.
    NoisyCareful(f64),
    /// The pressing strategy, replaced by a uniform legal move w.p. epsilon.
    NoisyAggressive(f64),
    Uniform,
    /// Per step: the yielding strategy w.p. `w`, otherwise the pressing one.
    Mixture(f64),
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyntheticKind::NoisyCareful(e) => write!(f, "noisy_careful:{e}"),
            SyntheticKind::NoisyAggressive(e) => write!(f, "noisy_aggressive:{e}"),
            SyntheticKind::Uniform => write!(f, "uniform"),
            SyntheticKind::Mixture(w) => write!(f, "mixture:{w}"),
        }
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => {
                let v: f64 = a
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidSynthetic(format!("bad parameter in {s:?}")))?;
                (n.trim(), Some(v))
            }
            None => (s.trim(), None),
        };
        match (name, arg) {
            ("noisy_careful", Some(e)) => Ok(SyntheticKind::NoisyCareful(e)),
            ("noisy_aggressive", Some(e)) => Ok(SyntheticKind::NoisyAggressive(e)),
            ("careful", None) => Ok(SyntheticKind::NoisyCareful(0.0)),
            ("aggressive", None) => Ok(SyntheticKind::NoisyAggressive(0.0)),
            ("uniform" | "random", None) => Ok(SyntheticKind::Uniform),
            ("mixture", Some(w)) => Ok(SyntheticKind::Mixture(w)),
            _ => Err(Error::InvalidSynthetic(format!("unknown human {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticHuman {
    kind: SyntheticKind,
    name: String,
}

/// Validates the parameters and builds the simulator. Draws come from the
/// episode generator, so there is no seed here.
pub fn make_synthetic_human(kind: SyntheticKind) -> Result<SyntheticHuman> {
    let p = match kind {
        SyntheticKind::NoisyCareful(p) | SyntheticKind::NoisyAggressive(p) | SyntheticKind::Mixture(p) => p,
        SyntheticKind::Uniform => 0.0,
    };
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidSynthetic(format!("parameter {p} outside [0, 1]")));
    }
    Ok(SyntheticHuman {
        kind,
        name: kind.to_string(),
    })
}

impl SyntheticHuman {
    pub fn kind(&self) -> SyntheticKind {
        self.kind
    }
}

impl AgentPolicy for SyntheticHuman {
    fn name(&self) -> &str {
        &self.name
    }

    fn distribution(&self, view: &VelocityState, seat: Seat) -> ActionDist {
        let noise = ActionDist::uniform(available_actions(view.current.seat(seat)));
        let careful = Careful.distribution(view, seat);
        let aggressive = Aggressive.distribution(view, seat);
        match self.kind {
            SyntheticKind::NoisyCareful(e) => careful.blend(&noise, e),
            SyntheticKind::NoisyAggressive(e) => aggressive.blend(&noise, e),
            SyntheticKind::Uniform => noise,
            SyntheticKind::Mixture(w) => aggressive.blend(&careful, w),
        }
    }
}

/// A human whose moves are drawn from a fitted model.
pub struct ModelHuman<'a> {
    model: &'a HumanModel,
}

impl<'a> ModelHuman<'a> {
    pub fn new(model: &'a HumanModel) -> Self {
        ModelHuman { model }
    }
}

impl AgentPolicy for ModelHuman<'_> {
    fn name(&self) -> &str {
        "model"
    }

    fn distribution(&self, view: &VelocityState, seat: Seat) -> ActionDist {
        let view = match seat {
            Seat::Human => *view,
            Seat::Agent => view.mirror(self.model.grid().n_cols),
        };
        if !view.current.human.is_on_board() {
            return ActionDist::point(Action::Noop);
        }
        let key = StateKey::from_view(&view, self.model.representation());
        self.model
            .distribution(&key)
            .unwrap_or_else(|_| ActionDist::uniform(available_actions(view.current.human)))
    }
}

/// Humans drawn per episode with fixed weights.
pub struct Population {
    members: Vec<(Box<dyn AgentPolicy>, f64)>,
    name: String,
}

impl Population {
    pub fn new(members: Vec<(Box<dyn AgentPolicy>, f64)>) -> Result<Population> {
        if members.is_empty() || members.iter().any(|(_, w)| !(*w > 0.0)) {
            return Err(Error::InvalidSynthetic("population needs positive weights".into()));
        }
        let name = members
            .iter()
            .map(|(m, _)| m.name())
            .collect::<Vec<_>>()
            .join(",");
        Ok(Population { members, name })
    }

    pub fn single(human: Box<dyn AgentPolicy>) -> Population {
        Population::new(vec![(human, 1.0)]).expect("one positive weight")
    }

    /// Comma-separated synthetic kinds, equally weighted, e.g.
    /// `noisy_careful:0.2,noisy_aggressive:0.2`.
    pub fn parse(spec: &str) -> Result<Population> {
        let members = spec
            .split(',')
            .map(|s| {
                let h = make_synthetic_human(s.parse()?)?;
                Ok((Box::new(h) as Box<dyn AgentPolicy>, 1.0))
            })
            .collect::<Result<Vec<_>>>()?;
        Population::new(members)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn pick(&self, rng: &mut dyn RngCore) -> &dyn AgentPolicy {
        if self.members.len() == 1 {
            return self.members[0].0.as_ref();
        }
        let total: f64 = self.members.iter().map(|(_, w)| w).sum();
        let mut u = rng.random::<f64>() * total;
        for (m, w) in &self.members {
            if u < *w {
                return m.as_ref();
            }
            u -= w;
        }
        self.members.last().expect("non-empty").0.as_ref()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub agent: String,
    pub humans: String,
    pub n_episodes: usize,
    pub agent_mean: f64,
    pub agent_ci95: f64,
    pub human_mean: f64,
    pub human_ci95: f64,
    pub welfare_mean: f64,
    pub welfare_ci95: f64,
    pub collision_rate: f64,
    /// Games stopped at the step cap; their accrued scores are included.
    pub truncated: usize,
}

fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

impl MetricsReport {
    pub fn from_episodes(agent: &str, humans: &str, episodes: &[Episode]) -> MetricsReport {
        let a: Vec<f64> = episodes.iter().map(|e| e.final_scores.agent_score).collect();
        let h: Vec<f64> = episodes.iter().map(|e| e.final_scores.human_score).collect();
        let w: Vec<f64> = a.iter().zip(&h).map(|(x, y)| x + y).collect();
        let (agent_mean, agent_ci95) = mean_ci(&a);
        let (human_mean, human_ci95) = mean_ci(&h);
        let (_, welfare_ci95) = mean_ci(&w);
        let n = episodes.len();
        MetricsReport {
            agent: agent.to_string(),
            humans: humans.to_string(),
            n_episodes: n,
            agent_mean,
            agent_ci95,
            human_mean,
            human_ci95,
            welfare_mean: agent_mean + human_mean,
            welfare_ci95,
            collision_rate: episodes.iter().filter(|e| e.collided()).count() as f64 / n as f64,
            truncated: episodes.iter().filter(|e| e.truncated).count(),
        }
    }

    pub const CSV_HEADER: &'static str = "agent,humans,n_episodes,agent_mean,agent_ci95,human_mean,human_ci95,welfare_mean,welfare_ci95,collision_rate,truncated";

    pub fn csv_row(&self) -> String {
        format!(
            "{},\"{}\",{},{},{},{},{},{},{},{},{}",
            self.agent,
            self.humans,
            self.n_episodes,
            self.agent_mean,
            self.agent_ci95,
            self.human_mean,
            self.human_ci95,
            self.welfare_mean,
            self.welfare_ci95,
            self.collision_rate,
            self.truncated
        )
    }
}

pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(MetricsReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub struct Experiment {
    pub reports: Vec<MetricsReport>,
    pub episodes: Vec<Episode>,
}

/// Plays `n_episodes` games per agent. Episode `i` uses the same generator
/// stream for every agent, so the agents face the same draw of humans.
pub fn run_experiment(
    agents: &[&dyn AgentPolicy],
    humans: &Population,
    n_episodes: usize,
    grid: &GridConfig,
    seed: u64,
) -> Result<Experiment> {
    if n_episodes == 0 {
        return Err(Error::InvalidConfig("n_episodes must be at least 1".into()));
    }
    let mut reports = Vec::new();
    let mut episodes = Vec::new();
    for agent in agents {
        let batch = (0..n_episodes)
            .into_par_iter()
            .map(|i| {
                let mut rng = episode_rng(seed, i as u64);
                let human = humans.pick(&mut rng);
                run_episode_with_rng(*agent, human, grid, format!("{}-{i}", agent.name()), &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(MetricsReport::from_episodes(agent.name(), humans.name(), &batch));
        episodes.extend(batch);
    }
    Ok(Experiment { reports, episodes })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyLabel {
    CarefulConsistent,
    AggressiveConsistent,
    NotInEquilibrium,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyClassification {
    pub label: StrategyLabel,
    /// Step at which the last equilibrium strategy still consistent with
    /// the play was contradicted.
    pub first_deviation_step: Option<usize>,
}

/// Checks every human move against the two equilibrium strategies. Where a
/// strategy leaves a free choice, both moves count as consistent. Play that
/// fits both strategies is labelled careful.
pub fn classify_strategy(ep: &Episode) -> Result<StrategyClassification> {
    ep.validate()?;
    let mut careful_dev = None;
    let mut aggressive_dev = None;
    for (i, (view, rec)) in ep.views().enumerate() {
        let Some(p) = Perspective::of(&view, Seat::Human) else {
            continue;
        };
        if careful_dev.is_none() && !careful_permitted(&p).contains(&rec.human_action) {
            careful_dev = Some(i);
        }
        if aggressive_dev.is_none() && !aggressive_permitted(&p).contains(&rec.human_action) {
            aggressive_dev = Some(i);
        }
    }
    Ok(match (careful_dev, aggressive_dev) {
        (None, _) => StrategyClassification {
            label: StrategyLabel::CarefulConsistent,
            first_deviation_step: None,
        },
        (Some(_), None) => StrategyClassification {
            label: StrategyLabel::AggressiveConsistent,
            first_deviation_step: None,
        },
        (Some(c), Some(a)) => StrategyClassification {
            label: StrategyLabel::NotInEquilibrium,
            first_deviation_step: Some(c.max(a)),
        },
    })
}

#[derive(Serialize)]
struct LineOut<'a> {
    version: u32,
    #[serde(flatten)]
    episode: &'a Episode,
}

#[derive(Deserialize)]
struct LineIn {
    version: u32,
    #[serde(flatten)]
    episode: Episode,
}

pub fn episode_line(ep: &Episode) -> Result<String> {
    Ok(serde_json::to_string(&LineOut {
        version: DATASET_SCHEMA_VERSION,
        episode: ep,
    })?)
}

/// Parses and replay-validates one dataset line (`line` is 1-based, for
/// error messages).
pub fn parse_episode_line(text: &str, line: usize) -> Result<Episode> {
    let fail = |reason: String| Error::Dataset { line, reason };
    let parsed: LineIn = serde_json::from_str(text).map_err(|e| fail(e.to_string()))?;
    if parsed.version != DATASET_SCHEMA_VERSION {
        return Err(fail(
            Error::SchemaVersion {
                found: parsed.version,
                expected: DATASET_SCHEMA_VERSION,
            }
            .to_string(),
        ));
    }
    parsed.episode.validate().map_err(|e| fail(e.to_string()))?;
    Ok(parsed.episode)
}

pub fn write_dataset<W: Write>(mut out: W, episodes: &[Episode]) -> Result<()> {
    for ep in episodes {
        out.write_all(episode_line(ep)?.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<Episode>> {
    let mut episodes = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        episodes.push(parse_episode_line(&line, i + 1)?);
    }
    Ok(episodes)
}

pub fn save_dataset(path: &Path, episodes: &[Episode]) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), episodes)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Episode>> {
    read_dataset(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{aggressive_policy, careful_policy};
    use crate::game::PlayerPos;

    #[test]
    fn aggressive_pair_collides() {
        let grid = GridConfig::default();
        let ep = run_episode(&aggressive_policy(), &aggressive_policy(), &grid, 1).unwrap();
        assert!(ep.collided());
        // two paid steps, then the swap in the middle
        assert_eq!(ep.final_scores.agent_score, -2.0 - 100.0);
        assert_eq!(ep.final_scores.human_score, -2.0 - 100.0);
    }

    #[test]
    fn aggressive_agent_against_careful_human() {
        let grid = GridConfig::default();
        let ep = run_episode(&aggressive_policy(), &careful_policy(), &grid, 1).unwrap();
        assert!(!ep.collided() && !ep.truncated);
        let agent_moves = ep.steps.iter().filter(|s| s.agent_action != Action::Noop).count();
        assert_eq!(agent_moves, 5);
        assert_eq!(ep.final_scores.agent_score, 30.0 - (agent_moves as f64 - 1.0));
        assert_eq!(classify_strategy(&ep).unwrap().label, StrategyLabel::CarefulConsistent);
    }

    #[test]
    fn careful_pair_baseline() {
        // Both yield with Stay first; the regression baseline is whatever the
        // deterministic pair does, pinned here.
        let grid = GridConfig::default();
        let ep = run_episode(&careful_policy(), &careful_policy(), &grid, 1).unwrap();
        assert!(!ep.collided());
        ep.validate().unwrap();
        assert!(ep.truncated);
        assert_eq!(ep.steps.len(), grid.max_steps as usize);
    }

    #[test]
    fn synthetic_parameters() {
        assert!(make_synthetic_human(SyntheticKind::NoisyCareful(1.5)).is_err());
        assert!(make_synthetic_human(SyntheticKind::Mixture(-0.1)).is_err());
        let k: SyntheticKind = "noisy_careful:0.2".parse().unwrap();
        assert_eq!(k, SyntheticKind::NoisyCareful(0.2));
        assert_eq!(k.to_string().parse::<SyntheticKind>().unwrap(), k);
        assert!("noisy_careful".parse::<SyntheticKind>().is_err());
        assert!("whatever:1".parse::<SyntheticKind>().is_err());
    }

    #[test]
    fn noise_endpoints() {
        let grid = GridConfig::default();
        let zero = make_synthetic_human(SyntheticKind::NoisyCareful(0.0)).unwrap();
        let one = make_synthetic_human(SyntheticKind::NoisyCareful(1.0)).unwrap();
        for agent in PlayerPos::all(grid.n_cols) {
            for human in PlayerPos::all(grid.n_cols) {
                if agent == human && agent.is_on_board() {
                    continue;
                }
                let view = VelocityState::still(crate::game::GameState {
                    agent,
                    human,
                    step_count: 0,
                });
                assert_eq!(
                    zero.distribution(&view, Seat::Human),
                    careful_policy().distribution(&view, Seat::Human)
                );
                let u = ActionDist::uniform(available_actions(human));
                let d = one.distribution(&view, Seat::Human);
                for a in Action::ALL {
                    assert!((d.prob(a) - u.prob(a)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn stay_at_gap_five_is_a_deviation() {
        let grid = GridConfig::default();
        let mut rec = EpisodeRecorder::new(grid).unwrap();
        rec.apply(Action::Stay, Action::Stay).unwrap();
        let ep = rec.finish("x", "careful");
        let c = classify_strategy(&ep).unwrap();
        assert_eq!(c.label, StrategyLabel::NotInEquilibrium);
        assert_eq!(c.first_deviation_step, Some(0));
    }

    #[test]
    fn metrics_linearity_and_determinism() {
        let grid = GridConfig::default();
        let humans = Population::parse("noisy_careful:0.3,noisy_aggressive:0.3").unwrap();
        let agents: [&dyn AgentPolicy; 2] = [&careful_policy(), &aggressive_policy()];
        let a = run_experiment(&agents, &humans, 200, &grid, 7).unwrap();
        let b = run_experiment(&agents, &humans, 200, &grid, 7).unwrap();
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.episodes, b.episodes);
        for r in &a.reports {
            assert!((r.welfare_mean - (r.agent_mean + r.human_mean)).abs() < 1e-9);
        }
        let csv = metrics_csv(&a.reports);
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn dataset_errors_name_the_line() {
        let grid = GridConfig::default();
        let ep = run_episode(&aggressive_policy(), &careful_policy(), &grid, 3).unwrap();
        let good = episode_line(&ep).unwrap();
        let mut bad_ep = ep.clone();
        bad_ep.steps[1].agent_reward = 7;
        let bad = episode_line(&bad_ep).unwrap();
        let text = format!("{good}\n{bad}\n");
        match read_dataset(text.as_bytes()) {
            Err(Error::Dataset { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("step 1"), "{reason}");
            }
            other => panic!("expected dataset error, got {other:?}"),
        }
        let wrong_version = good.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            read_dataset(wrong_version.as_bytes()),
            Err(Error::Dataset { line: 1, .. })
        ));
        assert!(read_dataset("".as_bytes()).unwrap().is_empty());
    }
}
