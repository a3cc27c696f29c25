use criterion::{criterion_group, criterion_main, Criterion};

use sarl_core::agents::{aggressive_policy, baseline, careful_policy, BASELINE_NAMES};
use sarl_core::equilibrium::verify_equilibrium;
use sarl_core::harness::{run_experiment, Population};
use sarl_core::planner::build_mdp;
use sarl_core::{AgentPolicy, GridConfig, HumanModel, PlannerConfig, Representation};

fn fitted(repr: Representation) -> HumanModel {
    let grid = GridConfig::default();
    let agents: Vec<Box<dyn AgentPolicy>> = BASELINE_NAMES.iter().map(|n| baseline(n).unwrap()).collect();
    let refs: Vec<&dyn AgentPolicy> = agents.iter().map(|a| a.as_ref()).collect();
    let humans = Population::parse("noisy_careful:0.2,noisy_aggressive:0.2").unwrap();
    let data = run_experiment(&refs, &humans, 1000, &grid, 1).unwrap().episodes;
    HumanModel::fit(&data, repr, &grid).unwrap()
}

fn value_iteration(c: &mut Criterion) {
    let grid = GridConfig::default();
    for repr in [Representation::Positions, Representation::PositionsWithVelocity] {
        let model = fitted(repr);
        let cfg = PlannerConfig::default().with_representation(repr).with_beta(0.5);
        let mdp = build_mdp(&model, &grid, &cfg).unwrap();
        c.bench_function(&format!("build_mdp/{repr}"), |b| b.iter(|| build_mdp(&model, &grid, &cfg).unwrap()));
        c.bench_function(&format!("value_iteration/{repr}"), |b| b.iter(|| mdp.value_iteration().unwrap()));
    }
}

fn equilibrium(c: &mut Criterion) {
    let grid = GridConfig::default();
    c.bench_function("verify_equilibrium/n6_h50", |b| {
        b.iter(|| verify_equilibrium(&aggressive_policy(), &careful_policy(), &grid, 50, 0.999).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let grid = GridConfig::default();
    let humans = Population::parse("noisy_careful:0.2,noisy_aggressive:0.2").unwrap();
    let agent = careful_policy();
    c.bench_function("run_experiment/1000", |b| {
        b.iter(|| run_experiment(&[&agent], &humans, 1000, &grid, 3).unwrap())
    });
}

criterion_group!(benches, value_iteration, equilibrium, simulation);
criterion_main!(benches);
