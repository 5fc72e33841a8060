//! Randomized equivalence between the engine and the independent reference
//! simulator: for random DAG/placement/policy/bandwidth configurations the
//! per-function invoked/started/completed times must agree exactly.

mod common;

use common::to_refsim;
use faasim::workflow::{synthesize_workflow, GenParams, Shape};
use faasim::{
    BandwidthScope, ClusterConfig, CostModel, Engine, Placement, Policy, Strategy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_scenario(seed: u64) -> (faasim::WorkflowSpec, Placement, ClusterConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=16);
    let edge_prob = rng.gen_range(0.15..0.5);
    let spec = synthesize_workflow(
        &Shape::Random { n, edge_prob, seed: seed ^ 0xabcdef },
        &GenParams {
            compute_ms: (0, 800),
            output_bytes: (0, 4 << 20),
            coldstart_ms: [0, 150, 400][rng.gen_range(0..3)],
            seed,
        },
    )
    .unwrap();
    let nodes = rng.gen_range(1..=4u32);
    let strategy = if rng.gen_bool(0.5) { Strategy::RoundRobin } else { Strategy::GreedyEdgeCut };
    let view = spec.dag_view();
    let placement = faasim::partition::partition(&spec, &view, nodes, strategy);

    let policy = match rng.gen_range(0..3) {
        0 => Policy::Dataflow,
        1 => Policy::Controlflow,
        _ => Policy::CFlow,
    };
    let mut cfg = ClusterConfig::new(nodes).policy(policy).seed(seed);
    cfg.pool_cap = [2, 4, 64][rng.gen_range(0..3)];
    cfg.cost = CostModel {
        ctrl_latency_ns: [0, 1_000_000][rng.gen_range(0..2)],
        meta_write_ns: [0, 150_000][rng.gen_range(0..2)],
        memcpy_ns_per_byte: 0,
    };
    match rng.gen_range(0..3) {
        0 => {}
        1 => {
            cfg = cfg.bandwidth(BandwidthScope::AllInterfaces, Some(25_000_000));
        }
        _ => {
            cfg = cfg.bandwidth(BandwidthScope::AllIngress, Some(100_000_000));
        }
    }
    (spec, placement, cfg)
}

pub fn assert_equivalent(seed: u64) {
    let (spec, placement, cfg) = random_scenario(seed);
    let (wl, rcfg) = to_refsim(&spec, &placement, &cfg);
    let oracle = refsim::simulate(&wl, &rcfg);

    let mut engine = Engine::new(cfg).unwrap();
    let wf = engine
        .register_with_placement(spec.clone(), placement, Strategy::GreedyEdgeCut)
        .unwrap();
    let h = engine.submit_at(wf, 0).unwrap();
    engine.run();
    let times = engine.fn_times(h).unwrap();
    for f in 0..spec.func_count() {
        let name = spec.func_name(f);
        let got = &times[name];
        let want = &oracle.times[f];
        assert_eq!(got.invoked, want.invoked, "seed {seed} fn {name} invoked");
        assert_eq!(got.started, want.started, "seed {seed} fn {name} started");
        assert_eq!(got.completed, want.completed, "seed {seed} fn {name} completed");
    }
    let timed_out = matches!(
        engine.exec_result(h).unwrap().status,
        faasim::ExecStatus::TimedOut
    );
    assert_eq!(timed_out, oracle.timed_out, "seed {seed} timeout status");
}

#[test]
fn engine_matches_oracle_on_random_configs() {
    for seed in 0..60 {
        assert_equivalent(seed);
    }
}
