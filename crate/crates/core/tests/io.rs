use cppa::ctap::{cppa_ctap, CtapConfig};
use cppa::gen::{grid_on_pipe, hearn_network, random_directed, random_traffic_instance, three_path_fixture, GenSpec, Sampling};
use cppa::graph::{Graph, NodeId};
use cppa::io::{
    parse_flow_instance, parse_traffic_instance, write_demands, write_flow_instance, write_report,
    write_traffic_network, FlowProblem, IoError, ReportFormat, RunReport,
};
use cppa::maxflow::{cppa_maxflow, oracle_maxflow};
use cppa::mincost::{cppa_mcmf, oracle_mcmf};
use cppa::CppaConfig;
use proptest::prelude::*;

fn round_trip(g: &Graph, s: NodeId, t: NodeId) {
    let text = write_flow_instance(g, s, t);
    let back = parse_flow_instance(&text).unwrap();
    assert_eq!(&back.graph, g);
    assert_eq!((back.source, back.sink), (s, t));
    assert_eq!(write_flow_instance(&back.graph, s, t), text);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_instances_round_trip(n in 2usize..30, seed in any::<u64>(), p in 0.0f64..1.0, ordered in any::<bool>()) {
        let mut spec = GenSpec::new(n, seed).with_probability(p);
        if ordered {
            spec.sampling = Sampling::Ordered;
        }
        round_trip(&random_directed(&spec), NodeId(0), NodeId(n - 1));
    }

    #[test]
    fn grids_round_trip(w in 2usize..5, d in 2usize..5, seed in any::<u64>()) {
        let g = grid_on_pipe(w, d, seed, (1, 10));
        round_trip(&g, NodeId(0), NodeId(g.node_count() - 1));
    }

    #[test]
    fn random_traffic_round_trips(n in 4usize..16, seed in 0u64..1000) {
        let (net, demands) = random_traffic_instance(&GenSpec::new(n, seed));
        let (net2, demands2) = parse_traffic_instance(&write_traffic_network(&net), &write_demands(&demands)).unwrap();
        prop_assert_eq!(net2, net);
        prop_assert_eq!(demands2, demands);
    }
}

#[test]
fn three_path_round_trips() {
    let f = three_path_fixture();
    round_trip(&f.graph, f.source, f.sink);
}

#[test]
fn hearn_round_trips() {
    let (net, demands) = hearn_network();
    let (net2, demands2) = parse_traffic_instance(&write_traffic_network(&net), &write_demands(&demands)).unwrap();
    assert_eq!(net2, net);
    assert_eq!(demands2, demands);
}

#[test]
fn minimal_max_instance() {
    let f = parse_flow_instance("p max 2 1\nn 1 s\nn 2 t\na 1 2 5\n").unwrap();
    assert_eq!(f.problem, FlowProblem::Max);
    assert_eq!(f.graph.arc(0).capacity, 5.0);
    let f = parse_flow_instance("c costed\np min 2 1\nn 1 s\nn 2 t\na 1 2 5 3\n").unwrap();
    assert_eq!(f.problem, FlowProblem::Min);
    assert_eq!((f.graph.arc(0).capacity, f.graph.arc(0).unit_cost), (5.0, 3.0));
}

#[test]
fn malformed_flow_files() {
    assert!(matches!(
        parse_flow_instance("a 1 2 5\np max 2 1\nn 1 s\nn 2 t\n"),
        Err(IoError::SyntaxError { line: 1, .. })
    ));
    assert!(matches!(
        parse_flow_instance("p max 2 1\np max 2 1\n"),
        Err(IoError::DuplicateProblemLine { line: 2 })
    ));
    assert_eq!(parse_flow_instance("p max 2 1\nn 1 s\na 1 2 5\n"), Err(IoError::MissingSourceOrSink));
    assert!(matches!(
        parse_flow_instance("p max 2 1\nn 1 s\nn 2 t\na 1 3 5\n"),
        Err(IoError::SyntaxError { line: 4, .. })
    ));
    assert!(matches!(
        parse_flow_instance("p max 2 1\nn 1 s\nn 2 t\na 1 2 x\n"),
        Err(IoError::SyntaxError { line: 4, .. })
    ));
}

#[test]
fn traffic_defaults_and_rejections() {
    let (net, _) = parse_traffic_instance("1 2 10 1\n", "1 2 5\n").unwrap();
    assert_eq!((net.alpha[0], net.beta[0]), (0.15, 4.0));
    assert_eq!(
        parse_traffic_instance("1 2 10 1\n", "~ od\n1 1 5\n").unwrap_err(),
        IoError::NonPositiveDemand { line: 2 }
    );
    assert_eq!(
        parse_traffic_instance("1 2 10 1\n", "1 2 0\n").unwrap_err(),
        IoError::NonPositiveDemand { line: 1 }
    );
}

fn json_number(text: &str, path: &[&str]) -> f64 {
    let v: serde_json::Value = serde_json::from_str(text).unwrap();
    path.iter().fold(&v, |v, k| &v[k]).as_f64().unwrap()
}

#[test]
fn report_carries_the_exact_max_flow() {
    let g = random_directed(&GenSpec::new(25, 7));
    let cfg = CppaConfig::default();
    let r = cppa_maxflow(&g, NodeId(0), NodeId(24), &cfg).unwrap();
    let o = oracle_maxflow(&g, NodeId(0), NodeId(24)).unwrap();
    let report = RunReport::maxflow("gen:n=25,seed=7", &cfg, Some(7), &g, &r, Some(o.value));
    let text = write_report(&report, ReportFormat::Json);
    assert_eq!(json_number(&text, &["results", "max_flow"]), r.max_flow);
    assert_eq!(json_number(&text, &["results", "oracle_max_flow"]), o.value);
    assert_eq!(json_number(&text, &["config", "k"]), 0.85);
}

#[test]
fn reports_are_reproducible() {
    let g = random_directed(&GenSpec::new(20, 3));
    let cfg = CppaConfig::default();
    let render = || {
        let r = cppa_mcmf(&g, NodeId(0), NodeId(19), &cfg).unwrap();
        let o = oracle_mcmf(&g, NodeId(0), NodeId(19)).unwrap();
        let mut report = RunReport::mcmf("x", &cfg, Some(3), &g, &r, Some((o.max_flow, o.min_cost)));
        report.wall_time_s = std::time::Instant::now().elapsed().as_secs_f64();
        report
    };
    let (a, b) = (render(), render());
    for fmt in [ReportFormat::Json, ReportFormat::Csv] {
        assert_eq!(write_report(&a.timeless(), fmt), write_report(&b.timeless(), fmt));
    }
}

#[test]
fn traffic_report_lists_links() {
    let (net, demands) = hearn_network();
    let cfg = CtapConfig {
        uncapacitated: true,
        ..Default::default()
    };
    let r = cppa_ctap(&net, &demands, &cfg).unwrap();
    let report = RunReport::ctap("hearn", &cfg, &net, &r);
    assert_eq!(report.results.links.len(), 18);
    let csv = write_report(&report, ReportFormat::Csv);
    let table: Vec<&str> = csv.split("\n\n").nth(1).unwrap().lines().collect();
    assert_eq!(table[0], "link,tail,head,capacity,flow,time,relative_excess");
    assert_eq!(table.len(), 19);
    assert!(table[3].starts_with("3,2,5,43.59,"));
    let json = write_report(&report, ReportFormat::Json);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let links = v["results"]["links"].as_array().unwrap();
    for (row, l) in links.iter().zip(&report.results.links) {
        assert_eq!(row["flow"].as_f64().unwrap(), l.flow);
        assert_eq!(row["capacity"].as_f64().unwrap(), l.capacity);
    }
}
