//! Blend weight from logged outcomes, and assembly of the socially aware agent.

use serde::{Deserialize, Serialize};

use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::game::GridConfig;
use crate::human_model::{HumanModel, Representation};
use crate::planner::{solve_agent, PlannedAgent, PlannerConfig, Solution};

/// Final outcomes of one game.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub agent_score: f64,
    pub human_score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaReport {
    /// `None` when either score vector has zero variance.
    pub correlation: Option<f64>,
    pub beta: f64,
    pub n_episodes: usize,
}

/// Product-moment correlation. `Ok(None)` when either input is constant.
pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::BadSampleSize {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

pub fn beta_from_correlation(correlation: Option<f64>) -> f64 {
    correlation.map_or(0.5, |c| ((1.0 - c) / 2.0).clamp(0.0, 1.0))
}

pub fn compute_beta(scores: &[ScorePair]) -> Result<BetaReport> {
    let xs: Vec<f64> = scores.iter().map(|s| s.agent_score).collect();
    let ys: Vec<f64> = scores.iter().map(|s| s.human_score).collect();
    let correlation = pearson_correlation(&xs, &ys)?;
    Ok(BetaReport {
        correlation,
        beta: beta_from_correlation(correlation),
        n_episodes: scores.len(),
    })
}

/// Final scores of the episodes played against `opponent`, or of all of them.
pub fn score_pairs(episodes: &[Episode], opponent: Option<&str>) -> Vec<ScorePair> {
    episodes
        .iter()
        .filter(|e| opponent.is_none_or(|o| e.opponent_agent_name == o))
        .map(|e| e.final_scores)
        .collect()
}

pub struct SarlBuild {
    pub agent: PlannedAgent,
    pub beta: BetaReport,
    pub model: HumanModel,
    pub solution: Solution,
}

/// Fits the human model, derives beta from the pooled final scores and solves
/// the blended MDP. The `beta` field of `planner` is overwritten.
pub fn build_sarl(
    episodes: &[Episode],
    representation: Representation,
    grid: &GridConfig,
    planner: &PlannerConfig,
) -> Result<SarlBuild> {
    let model = HumanModel::fit(episodes, representation, grid)?;
    let beta = compute_beta(&score_pairs(episodes, None))?;
    let cfg = planner
        .with_beta(beta.beta)
        .with_representation(representation);
    let (agent, solution) = solve_agent("sarl", &model, grid, &cfg)?;
    Ok(SarlBuild {
        agent,
        beta,
        model,
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(xs: &[f64], ys: &[f64]) -> Vec<ScorePair> {
        xs.iter()
            .zip(ys)
            .map(|(&agent_score, &human_score)| ScorePair {
                agent_score,
                human_score,
            })
            .collect()
    }

    #[test]
    fn endpoints() {
        let xs = [3.0, -1.0, 7.5, 2.0, 0.0];
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        let r = compute_beta(&pairs(&xs, &neg)).unwrap();
        assert!((r.correlation.unwrap() + 1.0).abs() < 1e-12);
        assert!((r.beta - 1.0).abs() < 1e-12);
        let r = compute_beta(&pairs(&xs, &xs)).unwrap();
        assert!(r.beta.abs() < 1e-12);
        assert_eq!(r.n_episodes, 5);
    }

    #[test]
    fn hand_computed_correlation() {
        // x = 1,2,3 ; y = 1,3,2: sxy = 1, sxx = syy = 2
        let c = pearson_correlation(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap().unwrap();
        assert!((c - 0.5).abs() < 1e-15);
        assert!((beta_from_correlation(Some(c)) - 0.25).abs() < 1e-15);
        // corr 0.74 gives the 0.13 blend
        assert!((beta_from_correlation(Some(0.74)) - 0.13).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(pearson_correlation(&[1.0], &[2.0]).is_err());
        assert!(pearson_correlation(&[1.0, 2.0], &[2.0]).is_err());
        let r = compute_beta(&pairs(&[26.0, 26.0], &[20.0, 20.0])).unwrap();
        assert_eq!(r.correlation, None);
        assert_eq!(r.beta, 0.5);
    }
}
