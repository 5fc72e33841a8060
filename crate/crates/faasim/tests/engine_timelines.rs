//! Exact virtual-time timelines for the canonical five-function fan, checked
//! against hand arithmetic and against the independent reference simulator.

mod common;

use common::{fan5_workflow, ms, to_refsim};
use faasim::workflow::Shape;
use faasim::{ClusterConfig, CostModel, Engine, Placement, Policy, Strategy};

fn single_node_placement(n: usize) -> Placement {
    Placement { node_count: 1, assignment: vec![0; n] }
}

fn engine_for(
    spec: &faasim::WorkflowSpec,
    cfg: ClusterConfig,
    placement: Placement,
) -> (Engine, faasim::engine::WorkflowHandle) {
    let mut engine = Engine::new(cfg).unwrap();
    let wf = engine
        .register_with_placement(spec.clone(), placement, Strategy::GreedyEdgeCut)
        .unwrap();
    (engine, wf)
}

#[test]
fn controlflow_join_matches_hand_timeline() {
    let spec = fan5_workflow(1000, 1500, 2000, 1000, 500, 64);
    let cfg = ClusterConfig::new(1).policy(Policy::Controlflow).cost(CostModel::zero());
    let (mut engine, wf) = engine_for(&spec, cfg, single_node_placement(5));
    let h = engine.submit_at(wf, 0).unwrap();
    engine.run();
    let times = engine.fn_times(h).unwrap();
    assert_eq!(times["D"].started, Some(ms(2000)), "D starts when C completes");
    assert_eq!(times["E"].started, Some(ms(3000)), "E starts when D completes");
    assert_eq!(times["D"].invoked, Some(ms(2000)));
}

#[test]
fn dataflow_prewarm_matches_hand_timeline() {
    let spec = fan5_workflow(500, 1500, 2000, 1000, 500, 64);
    let cfg = ClusterConfig::new(1).policy(Policy::Dataflow).cost(CostModel::zero());
    let (mut engine, wf) = engine_for(&spec, cfg, single_node_placement(5));
    let h = engine.submit_at(wf, 0).unwrap();
    engine.run();
    let times = engine.fn_times(h).unwrap();
    for f in ["A", "B", "C", "D"] {
        assert_eq!(times[f].invoked, Some(0), "{f} invoked at arrival");
    }
    assert_eq!(times["E"].invoked, Some(ms(500)), "E invoked when A completes");
    assert_eq!(times["D"].completed, Some(ms(3000)), "D computes after C's output");
}

#[test]
fn chain_dataflow_invokes_grand_successor_on_completion() {
    let spec = faasim::workflow::synthesize_workflow(
        &Shape::Chain(3),
        &faasim::workflow::GenParams {
            compute_ms: (1000, 1000),
            output_bytes: (64, 64),
            coldstart_ms: 0,
            seed: 0,
        },
    )
    .unwrap();
    let cfg = ClusterConfig::new(1).policy(Policy::Dataflow).cost(CostModel::zero());
    let (mut engine, wf) = engine_for(&spec, cfg, single_node_placement(3));
    let h = engine.submit_at(wf, 0).unwrap();
    engine.run();
    let times = engine.fn_times(h).unwrap();
    assert_eq!(times["A"].invoked, Some(0));
    assert_eq!(times["B"].invoked, Some(0), "successor of entry invoked at arrival");
    assert_eq!(times["C"].invoked, Some(ms(1000)), "grand-successor invoked on A's completion");
    assert_eq!(times["C"].completed, Some(ms(3000)));
}

#[test]
fn timelines_match_reference_simulator_across_policies() {
    for policy in [Policy::Dataflow, Policy::Controlflow, Policy::CFlow] {
        let spec = fan5_workflow(1000, 1500, 2000, 1000, 500, 256 * 1024);
        let mut cfg = ClusterConfig::new(2).policy(policy).cost(CostModel::default());
        cfg.cost.ctrl_latency_ns = 1_000_000;
        let placement = Placement { node_count: 2, assignment: vec![0, 0, 1, 1, 0] };
        let (wl, rcfg) = to_refsim(&spec, &placement, &cfg);
        let oracle = refsim::simulate(&wl, &rcfg);

        let (mut engine, wf) = engine_for(&spec, cfg, placement);
        let h = engine.submit_at(wf, 0).unwrap();
        engine.run();
        let times = engine.fn_times(h).unwrap();
        for (f, name) in ["A", "B", "C", "D", "E"].iter().enumerate() {
            let got = &times[*name];
            let want = &oracle.times[f];
            assert_eq!(got.invoked, want.invoked, "{policy:?} {name} invoked");
            assert_eq!(got.started, want.started, "{policy:?} {name} started");
            assert_eq!(got.completed, want.completed, "{policy:?} {name} completed");
        }
    }
}

#[test]
fn empty_workflow_completes_immediately() {
    let spec = faasim::workflow::parse_workflow("name = \"empty\"\n").unwrap();
    let cfg = ClusterConfig::new(1).policy(Policy::Dataflow).cost(CostModel::zero());
    let (mut engine, wf) =
        engine_for(&spec, cfg, Placement { node_count: 1, assignment: vec![] });
    let h = engine.submit_at(wf, 0).unwrap();
    engine.run();
    match engine.exec_result(h).unwrap().status {
        faasim::ExecStatus::Completed { latency_ns, .. } => assert_eq!(latency_ns, 0),
        other => panic!("expected completion, got {other:?}"),
    }
}
