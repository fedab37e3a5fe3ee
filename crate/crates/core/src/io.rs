//! Instance files and run reports.
//!
//! Flow instances use the DIMACS max-flow layout with 1-based node ids:
//!
//! ```text
//! c comment
//! p max <nodes> <arcs> [directed|undirected]
//! n <id> s
//! n <id> t
//! a <tail> <head> <capacity>
//! ```
//!
//! Under `p min` an arc line carries a unit cost and optionally a length:
//! `a <tail> <head> <capacity> <cost> [<length>]`.
//!
//! Traffic instances are two whitespace-separated tables. Network rows are
//! `tail head capacity free_flow_time [alpha beta]`, demand rows are
//! `origin destination demand`. `~` starts a comment, a trailing `;` is
//! ignored and `<NUMBER OF NODES> n` fixes the node count.

use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use thiserror::Error;

use crate::cppa::{ConvergenceTrace, CppaConfig, RunStatus};
use crate::ctap::{validate_demands, CtapConfig, CtapError, CtapResult, Link, LinkRow, OdDemand, TrafficNetwork};
use crate::graph::{build_graph_with, max_relative_excess, validate_capacity, ArcSpec, Graph, GraphError, Mode, NodeId};
use crate::maxflow::MaxFlowResult;
use crate::mincost::McmfResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("line {line}: {message}")]
    SyntaxError { line: usize, message: String },
    #[error("missing source or sink designation")]
    MissingSourceOrSink,
    #[error("line {line}: second problem line")]
    DuplicateProblemLine { line: usize },
    #[error("line {line}: demand must be positive between distinct nodes")]
    NonPositiveDemand { line: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ctap(#[from] CtapError),
}

fn syntax<T>(line: usize, message: impl Into<String>) -> Result<T, IoError> {
    Err(IoError::SyntaxError {
        line,
        message: message.into(),
    })
}

fn number<T: std::str::FromStr>(line: usize, field: &str, what: &str) -> Result<T, IoError> {
    field
        .parse()
        .or_else(|_| syntax(line, format!("bad {what} `{field}`")))
}

fn node_id(line: usize, field: &str, node_count: usize) -> Result<usize, IoError> {
    let id: usize = number(line, field, "node id")?;
    if id == 0 || id > node_count {
        return syntax(line, format!("node id {id} outside 1..={node_count}"));
    }
    Ok(id - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowProblem {
    Max,
    Min,
}

/// A parsed flow instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowInstanceFile {
    pub problem: FlowProblem,
    pub graph: Graph,
    pub source: NodeId,
    pub sink: NodeId,
}

pub fn parse_flow_instance(text: &str) -> Result<FlowInstanceFile, IoError> {
    let mut header: Option<(FlowProblem, usize, usize, Mode, usize)> = None;
    let (mut source, mut sink) = (None, None);
    let mut arcs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        let Some(&kind) = fields.first() else { continue };
        match kind {
            "c" => {}
            "p" => {
                if header.is_some() {
                    return Err(IoError::DuplicateProblemLine { line });
                }
                if !(4..=5).contains(&fields.len()) {
                    return syntax(line, "expected `p max|min <nodes> <arcs> [mode]`");
                }
                let problem = match fields[1] {
                    "max" => FlowProblem::Max,
                    "min" => FlowProblem::Min,
                    other => return syntax(line, format!("unknown problem `{other}`")),
                };
                let n = number(line, fields[2], "node count")?;
                let m = number(line, fields[3], "arc count")?;
                let mode = match fields.get(4) {
                    None => Mode::Directed,
                    Some(s) => s.parse().or_else(|e: String| syntax(line, e))?,
                };
                header = Some((problem, n, m, mode, line));
            }
            "n" => {
                let Some((_, n, ..)) = header else {
                    return syntax(line, "node line before problem line");
                };
                if fields.len() != 3 {
                    return syntax(line, "expected `n <id> s|t`");
                }
                let id = node_id(line, fields[1], n)?;
                let slot = match fields[2] {
                    "s" => &mut source,
                    "t" => &mut sink,
                    other => return syntax(line, format!("unknown designation `{other}`")),
                };
                if slot.replace(id).is_some() {
                    return syntax(line, format!("terminal `{}` given twice", fields[2]));
                }
            }
            "a" => {
                let Some((problem, n, ..)) = header else {
                    return syntax(line, "arc line before problem line");
                };
                let ok = match problem {
                    FlowProblem::Max => fields.len() == 4,
                    FlowProblem::Min => (5..=6).contains(&fields.len()),
                };
                if !ok {
                    return syntax(line, "wrong number of arc fields");
                }
                let tail = node_id(line, fields[1], n)?;
                let head = node_id(line, fields[2], n)?;
                let capacity = number(line, fields[3], "capacity")?;
                let cost = fields.get(4).map_or(Ok(1.0), |f| number(line, f, "cost"))?;
                let length = fields.get(5).map_or(Ok(1.0), |f| number(line, f, "length"))?;
                arcs.push(ArcSpec::new(tail, head, length, capacity, cost));
            }
            other => return syntax(line, format!("unknown line type `{other}`")),
        }
    }
    let Some((problem, n, m, mode, pline)) = header else {
        return syntax(text.lines().count().max(1), "missing problem line");
    };
    if arcs.len() != m {
        return syntax(pline, format!("problem line announces {m} arcs, found {}", arcs.len()));
    }
    let (Some(source), Some(sink)) = (source, sink) else {
        return Err(IoError::MissingSourceOrSink);
    };
    Ok(FlowInstanceFile {
        problem,
        graph: build_graph_with(n, arcs, mode, true)?,
        source: NodeId(source),
        sink: NodeId(sink),
    })
}

/// Writes `graph` so that [`parse_flow_instance`] rebuilds it exactly. Costs
/// and lengths are emitted (under `p min`) only when some arc differs from 1.
pub fn write_flow_instance(graph: &Graph, source: NodeId, sink: NodeId) -> String {
    let plain = graph.arcs().iter().all(|a| a.unit_cost == 1.0 && a.length == 1.0);
    let unit_length = graph.arcs().iter().all(|a| a.length == 1.0);
    let mut out = String::new();
    let _ = write!(
        out,
        "p {} {} {}",
        if plain { "max" } else { "min" },
        graph.node_count(),
        graph.arc_count()
    );
    if graph.mode() == Mode::Undirected {
        out.push_str(" undirected");
    }
    let _ = writeln!(out, "\nn {} s\nn {} t", source.0 + 1, sink.0 + 1);
    for a in graph.arcs() {
        let _ = write!(out, "a {} {} {}", a.tail.0 + 1, a.head.0 + 1, a.capacity);
        if !plain {
            let _ = write!(out, " {}", a.unit_cost);
            if !unit_length {
                let _ = write!(out, " {}", a.length);
            }
        }
        out.push('\n');
    }
    out
}

/// Data rows of a TNTP-like table with their line numbers.
fn table_rows(text: &str) -> Result<(Vec<(usize, Vec<&str>)>, Option<usize>), IoError> {
    let mut rows = Vec::new();
    let mut nodes = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('~').next().unwrap_or("").trim();
        let body = body.strip_suffix(';').unwrap_or(body).trim();
        if body.is_empty() {
            continue;
        }
        if let Some(meta) = body.strip_prefix('<') {
            let Some((key, value)) = meta.split_once('>') else {
                return syntax(line, "unterminated metadata tag");
            };
            if key.trim() == "NUMBER OF NODES" {
                nodes = Some(number(line, value.trim(), "node count")?);
            }
            continue;
        }
        rows.push((line, body.split_whitespace().collect()));
    }
    Ok((rows, nodes))
}

fn row_node(line: usize, field: &str) -> Result<usize, IoError> {
    let id: usize = number(line, field, "node id")?;
    if id == 0 {
        return syntax(line, "node ids are 1-based");
    }
    Ok(id - 1)
}

pub fn parse_traffic_instance(
    network_text: &str,
    demand_text: &str,
) -> Result<(TrafficNetwork, Vec<OdDemand>), IoError> {
    let (rows, declared) = table_rows(network_text)?;
    let mut links = Vec::with_capacity(rows.len());
    let mut max_id = 0;
    for (line, f) in rows {
        if f.len() != 4 && f.len() != 6 {
            return syntax(line, "expected `tail head capacity free_flow_time [alpha beta]`");
        }
        let mut link = Link::new(
            row_node(line, f[0])?,
            row_node(line, f[1])?,
            number(line, f[2], "capacity")?,
            number(line, f[3], "free-flow time")?,
        );
        if f.len() == 6 {
            link.alpha = number(line, f[4], "alpha")?;
            link.beta = number(line, f[5], "beta")?;
        }
        max_id = max_id.max(link.tail + 1).max(link.head + 1);
        links.push(link);
    }
    let node_count = declared.unwrap_or(max_id);
    let network = TrafficNetwork::from_links(node_count, &links)?;

    let (rows, _) = table_rows(demand_text)?;
    let mut demands = Vec::with_capacity(rows.len());
    for (line, f) in rows {
        if f.len() != 3 {
            return syntax(line, "expected `origin destination demand`");
        }
        let d = OdDemand::new(row_node(line, f[0])?, row_node(line, f[1])?, number(line, f[2], "demand")?);
        if !(d.demand > 0.0 && d.demand.is_finite()) || d.origin == d.destination {
            return Err(IoError::NonPositiveDemand { line });
        }
        demands.push(d);
    }
    validate_demands(&network, &demands)?;
    Ok((network, demands))
}

pub fn write_traffic_network(network: &TrafficNetwork) -> String {
    let mut out = format!(
        "<NUMBER OF NODES> {}\n<NUMBER OF LINKS> {}\n<END OF METADATA>\n~ tail head capacity free_flow_time alpha beta\n",
        network.node_count(),
        network.link_count()
    );
    for l in network.links() {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} ;",
            l.tail + 1,
            l.head + 1,
            l.capacity,
            l.free_flow_time,
            l.alpha,
            l.beta
        );
    }
    out
}

pub fn write_demands(demands: &[OdDemand]) -> String {
    let mut out = String::from("~ origin destination demand\n");
    for d in demands {
        let _ = writeln!(out, "{} {} {} ;", d.origin.0 + 1, d.destination.0 + 1, d.demand);
    }
    out
}

/// `x` with `digits` significant digits, in the style of C's `%g`: fixed
/// notation for moderate exponents, trailing zeros removed.
pub fn format_sig(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{exp}", trim_fraction(mantissa))
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Pretty JSON with every float printed at 17 significant digits.
struct SigFormatter(PrettyFormatter<'static>);

impl Formatter for SigFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_sig(value, 17).as_bytes())
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes `value` as pretty JSON with 17-digit floats.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("report types serialize");
    buf.push(b'\n');
    String::from_utf8(buf).expect("json is utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Maxflow,
    Mcmf,
    Ctap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Everything needed to rerun the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub k: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub max_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rgap_target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncapacitated: Option<bool>,
}

impl ConfigEcho {
    pub fn cppa(config: &CppaConfig, seed: Option<u64>) -> Self {
        ConfigEcho {
            k: config.k,
            epsilon: Some(config.epsilon),
            max_iterations: config.max_iterations,
            mode: Some(config.mode),
            seed,
            rgap_target: None,
            uncapacitated: None,
        }
    }

    pub fn ctap(config: &CtapConfig) -> Self {
        ConfigEcho {
            k: config.k,
            epsilon: None,
            max_iterations: config.max_iterations,
            mode: None,
            seed: None,
            rgap_target: Some(config.rgap_target),
            uncapacitated: Some(config.uncapacitated),
        }
    }
}

/// One row of an epsilon sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub max_flow: f64,
    pub min_cost: f64,
    pub iterations: usize,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_gap: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Results {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_flow: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounded_max_flow: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_max_flow: Option<f64>,
    /// `|MF_cppa - MF_oracle|`, using the rounded value when there is one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_min_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase1_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase2_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rgap: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilon_sweep: Vec<SweepRow>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationSummary {
    pub max_relative_excess: f64,
    /// Arcs whose flow exceeds capacity by more than the feasibility tolerance.
    pub capacity_violations: usize,
    /// Largest node conservation residual over the recorded iterates.
    pub max_conservation_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: ProblemKind,
    /// Input path or generator spec.
    pub instance: String,
    pub config: ConfigEcho,
    pub status: RunStatus,
    pub iterations: usize,
    pub results: Results,
    pub violations: ViolationSummary,
    /// File name of the trace csv, relative to the report.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    /// Seconds spent in the solver loop.
    pub wall_time_s: f64,
}

fn trace_residual(trace: &ConvergenceTrace) -> f64 {
    trace.rows.iter().map(|r| r.conservation_residual).fold(0.0, f64::max)
}

fn violations(graph: &Graph, flows: &[f64], tol: f64, residual: f64) -> ViolationSummary {
    let count = validate_capacity(graph, flows, tol).map_or(0, |r| r.capacity.len());
    ViolationSummary {
        max_relative_excess: max_relative_excess(graph, flows),
        capacity_violations: count,
        max_conservation_residual: residual,
    }
}

impl RunReport {
    pub fn maxflow(
        instance: &str,
        config: &CppaConfig,
        seed: Option<u64>,
        graph: &Graph,
        result: &MaxFlowResult,
        oracle: Option<f64>,
    ) -> Self {
        RunReport {
            problem: ProblemKind::Maxflow,
            instance: instance.to_string(),
            config: ConfigEcho::cppa(config, seed),
            status: result.status,
            iterations: result.iterations,
            results: Results {
                max_flow: Some(result.max_flow),
                rounded_max_flow: result.rounded,
                oracle_max_flow: oracle,
                gap: oracle.map(|o| (result.value() - o).abs()),
                flows: result.flows.clone(),
                ..Default::default()
            },
            violations: violations(graph, &result.flows, config.feasibility_tol, trace_residual(&result.trace)),
            trace: None,
            wall_time_s: 0.0,
        }
    }

    /// `oracle` is the exact (max flow, min cost) pair.
    pub fn mcmf(
        instance: &str,
        config: &CppaConfig,
        seed: Option<u64>,
        graph: &Graph,
        result: &McmfResult,
        oracle: Option<(f64, f64)>,
    ) -> Self {
        let value = result.rounded_max_flow.unwrap_or(result.max_flow);
        let status = if result.phase1_status.is_converged() {
            result.phase2_status
        } else {
            result.phase1_status
        };
        let residual = trace_residual(&result.phase1_trace).max(trace_residual(&result.phase2_trace));
        RunReport {
            problem: ProblemKind::Mcmf,
            instance: instance.to_string(),
            config: ConfigEcho::cppa(config, seed),
            status,
            iterations: result.phase1_iterations + result.phase2_iterations,
            results: Results {
                max_flow: Some(result.max_flow),
                rounded_max_flow: result.rounded_max_flow,
                oracle_max_flow: oracle.map(|o| o.0),
                gap: oracle.map(|o| (value - o.0).abs()),
                min_cost: Some(result.min_cost),
                oracle_min_cost: oracle.map(|o| o.1),
                cost_gap: oracle.map(|o| (result.min_cost - o.1).abs()),
                phase1_iterations: Some(result.phase1_iterations),
                phase2_iterations: Some(result.phase2_iterations),
                flows: result.flows.clone(),
                ..Default::default()
            },
            violations: violations(graph, &result.flows, config.feasibility_tol, residual),
            trace: None,
            wall_time_s: 0.0,
        }
    }

    pub fn ctap(instance: &str, config: &CtapConfig, network: &TrafficNetwork, result: &CtapResult) -> Self {
        RunReport {
            problem: ProblemKind::Ctap,
            instance: instance.to_string(),
            config: ConfigEcho::ctap(config),
            status: result.status,
            iterations: result.iterations,
            results: Results {
                rgap: result.rgap,
                links: result.link_rows(network),
                ..Default::default()
            },
            violations: ViolationSummary {
                max_relative_excess: result.max_relative_excess,
                capacity_violations: result.violations.capacity.len(),
                max_conservation_residual: trace_residual(&result.trace),
            },
            trace: None,
            wall_time_s: 0.0,
        }
    }

    /// The report with the wall time zeroed, for byte comparisons.
    pub fn timeless(&self) -> Self {
        RunReport {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Renders a report. JSON floats carry 17 significant digits; the csv
/// summary carries 6 and, for traffic runs, appends the link table.
pub fn write_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => to_json(report),
        ReportFormat::Csv => summary_csv(report),
    }
}

fn summary_csv(r: &RunReport) -> String {
    let g = |x: f64| format_sig(x, 6);
    let mut rows: Vec<(&str, String)> = vec![
        ("problem", format!("{:?}", r.problem).to_lowercase()),
        ("instance", r.instance.clone()),
        ("status", serde_json::to_value(r.status).map_or(String::new(), |v| v.as_str().unwrap_or("").into())),
        ("iterations", r.iterations.to_string()),
        ("k", g(r.config.k)),
    ];
    let c = &r.config;
    let res = &r.results;
    let opt: [(&str, Option<String>); 16] = [
        ("epsilon", c.epsilon.map(g)),
        ("max_iterations", Some(c.max_iterations.to_string())),
        ("mode", c.mode.map(|m| format!("{m:?}").to_lowercase())),
        ("seed", c.seed.map(|s| s.to_string())),
        ("rgap_target", c.rgap_target.map(g)),
        ("uncapacitated", c.uncapacitated.map(|u| u.to_string())),
        ("max_flow", res.max_flow.map(g)),
        ("rounded_max_flow", res.rounded_max_flow.map(g)),
        ("oracle_max_flow", res.oracle_max_flow.map(g)),
        ("gap", res.gap.map(g)),
        ("min_cost", res.min_cost.map(g)),
        ("oracle_min_cost", res.oracle_min_cost.map(g)),
        ("cost_gap", res.cost_gap.map(g)),
        ("phase1_iterations", res.phase1_iterations.map(|x| x.to_string())),
        ("phase2_iterations", res.phase2_iterations.map(|x| x.to_string())),
        ("rgap", res.rgap.map(g)),
    ];
    rows.extend(opt.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
    rows.push(("max_relative_excess", g(r.violations.max_relative_excess)));
    rows.push(("capacity_violations", r.violations.capacity_violations.to_string()));
    rows.push(("max_conservation_residual", g(r.violations.max_conservation_residual)));
    rows.push(("wall_time_s", g(r.wall_time_s)));

    let mut out = String::from("field,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    if !res.links.is_empty() {
        out.push_str("\nlink,tail,head,capacity,flow,time,relative_excess\n");
        for l in &res.links {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                l.link + 1,
                l.tail + 1,
                l.head + 1,
                g(l.capacity),
                g(l.flow),
                g(l.time),
                g(l.relative_excess)
            );
        }
    }
    if !res.epsilon_sweep.is_empty() {
        out.push_str("\nepsilon,max_flow,min_cost,iterations,cost_gap\n");
        for s in &res.epsilon_sweep {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                g(s.epsilon),
                g(s.max_flow),
                g(s.min_cost),
                s.iterations,
                s.cost_gap.map(g).unwrap_or_default()
            );
        }
    }
    out
}

/// Trace as csv. The `rgap` column is present only when some row has one.
pub fn write_trace_csv(trace: &ConvergenceTrace) -> String {
    let with_rgap = trace.rows.iter().any(|r| r.rgap.is_some());
    let mut out = String::from("iteration,l1_change,max_rel_excess");
    out.push_str(if with_rgap { ",rgap\n" } else { "\n" });
    for r in &trace.rows {
        let _ = write!(
            out,
            "{},{},{}",
            r.iteration,
            format_sig(r.l1_change, 17),
            format_sig(r.max_rel_excess, 17)
        );
        if with_rgap {
            out.push(',');
            if let Some(g) = r.rgap {
                out.push_str(&format_sig(g, 17));
            }
        }
        out.push('\n');
    }
    out
}
