//! Workflow data model: declarative workflow files, DAG validation, and
//! synthetic DAG generation.
//!
//! A workflow file is a TOML document listing functions with their input and
//! output data keys plus the emulated execution parameters. Edges are never
//! written explicitly: an edge exists from the producer of a key to each of
//! its consumers. `foreach = k` on a function expands statically into `k`
//! parallel copies at parse time, keeping the runtime DAG static.
//!
//! ```toml
//! name = "diamond"
//! external_inputs = []
//!
//! [[functions]]
//! name = "A"
//! inputs = []
//! outputs = ["a_out"]
//! compute_ms = 100
//! output_bytes = 1024
//! coldstart_ms = 0
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a function within its workflow (file order).
pub type FuncId = usize;
/// Index of an interned data key within its workflow.
pub type KeyId = usize;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("cycle detected: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("input key `{key}` of function `{consumer}` has no producer and is not an external input")]
    DanglingKey { key: String, consumer: String },
    #[error("duplicate function name `{0}`")]
    DuplicateName(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
}

/// One function of a workflow, with its emulated runtime parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDef {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Emulated execution duration in milliseconds.
    pub compute_ms: u64,
    /// Size of each produced output in bytes.
    pub output_bytes: u64,
    /// Emulated container startup delay in milliseconds.
    pub coldstart_ms: u64,
}

/// A validated workflow DAG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowSpec {
    pub name: String,
    pub external_inputs: Vec<String>,
    pub functions: Vec<FunctionDef>,
    keys: Vec<String>,
    key_producer: Vec<Option<FuncId>>,
    /// (source function, destination function, key), one per consumer.
    edges: Vec<(FuncId, FuncId, KeyId)>,
    entry_points: Vec<FuncId>,
}

/// Derived successor/predecessor index over a [`WorkflowSpec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagView {
    pub successors: Vec<Vec<FuncId>>,
    pub predecessors: Vec<Vec<FuncId>>,
    pub topo_order: Vec<FuncId>,
}

impl WorkflowSpec {
    pub fn func_count(&self) -> usize {
        self.functions.len()
    }

    pub fn func_id(&self, name: &str) -> Option<FuncId> {
        self.functions.iter().position(|f| f.name == name)
    }

    pub fn func_name(&self, f: FuncId) -> &str {
        &self.functions[f].name
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn key_id(&self, name: &str) -> Option<KeyId> {
        self.keys.iter().position(|k| k == name)
    }

    pub fn key_name(&self, k: KeyId) -> &str {
        &self.keys[k]
    }

    /// Producing function of a key, `None` for external workflow inputs.
    pub fn key_producer(&self, k: KeyId) -> Option<FuncId> {
        self.key_producer[k]
    }

    /// Size in bytes of the datum carried by a key (0 for external inputs).
    pub fn key_bytes(&self, k: KeyId) -> u64 {
        self.key_producer[k].map(|f| self.functions[f].output_bytes).unwrap_or(0)
    }

    pub fn edges(&self) -> &[(FuncId, FuncId, KeyId)] {
        &self.edges
    }

    pub fn entry_points(&self) -> &[FuncId] {
        &self.entry_points
    }

    pub fn input_key_ids(&self, f: FuncId) -> Vec<KeyId> {
        self.functions[f].inputs.iter().map(|k| self.key_id(k).unwrap()).collect()
    }

    pub fn output_key_ids(&self, f: FuncId) -> Vec<KeyId> {
        self.functions[f].outputs.iter().map(|k| self.key_id(k).unwrap()).collect()
    }

    pub fn is_external(&self, k: KeyId) -> bool {
        self.key_producer[k].is_none()
    }

    /// Canonical file-format rendering; `parse_workflow` of the result yields
    /// a structurally equal spec.
    pub fn to_text(&self) -> String {
        let doc = RawWorkflow {
            name: self.name.clone(),
            external_inputs: self.external_inputs.clone(),
            functions: self
                .functions
                .iter()
                .map(|f| RawFunction {
                    name: f.name.clone(),
                    inputs: f.inputs.clone(),
                    outputs: f.outputs.clone(),
                    compute_ms: f.compute_ms,
                    output_bytes: f.output_bytes,
                    coldstart_ms: f.coldstart_ms,
                    foreach: None,
                })
                .collect(),
        };
        toml::to_string(&doc).expect("workflow spec serializes")
    }
}

impl fmt::Display for WorkflowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} functions, {} edges, entries: {})",
            self.name,
            self.functions.len(),
            self.edges.len(),
            self.entry_points.iter().map(|&e| self.func_name(e)).collect::<Vec<_>>().join(",")
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawWorkflow {
    name: String,
    #[serde(default)]
    external_inputs: Vec<String>,
    #[serde(default)]
    functions: Vec<RawFunction>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawFunction {
    name: String,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    outputs: Vec<String>,
    #[serde(default)]
    compute_ms: u64,
    #[serde(default)]
    output_bytes: u64,
    #[serde(default)]
    coldstart_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    foreach: Option<u32>,
}

/// Parse and validate a workflow file.
pub fn parse_workflow(text: &str) -> Result<WorkflowSpec, WorkflowError> {
    let raw: RawWorkflow =
        toml::from_str(text).map_err(|e| WorkflowError::Syntax(e.to_string()))?;
    build_spec(raw)
}

fn build_spec(raw: RawWorkflow) -> Result<WorkflowSpec, WorkflowError> {
    let expanded = expand_foreach(raw.functions, &raw.external_inputs)?;

    let mut seen = BTreeSet::new();
    for f in &expanded {
        if f.name.is_empty() {
            return Err(WorkflowError::Syntax("function with empty name".into()));
        }
        if !seen.insert(f.name.clone()) {
            return Err(WorkflowError::DuplicateName(f.name.clone()));
        }
    }

    // Intern keys; externals first so they exist even when unconsumed.
    let mut keys: Vec<String> = Vec::new();
    let mut key_ids: BTreeMap<String, KeyId> = BTreeMap::new();
    let intern = |name: &str, keys: &mut Vec<String>, ids: &mut BTreeMap<String, KeyId>| {
        if let Some(&id) = ids.get(name) {
            id
        } else {
            keys.push(name.to_string());
            ids.insert(name.to_string(), keys.len() - 1);
            keys.len() - 1
        }
    };
    for ext in &raw.external_inputs {
        intern(ext, &mut keys, &mut key_ids);
    }
    let mut key_producer: Vec<Option<FuncId>> = vec![None; keys.len()];
    for (fi, f) in expanded.iter().enumerate() {
        for out in &f.outputs {
            let k = intern(out, &mut keys, &mut key_ids);
            if k >= key_producer.len() {
                key_producer.resize(keys.len(), None);
            }
            if raw.external_inputs.contains(out) {
                return Err(WorkflowError::Syntax(format!(
                    "key `{out}` is declared external but produced by `{}`",
                    f.name
                )));
            }
            if let Some(prev) = key_producer[k] {
                return Err(WorkflowError::Syntax(format!(
                    "key `{out}` produced by both `{}` and `{}`",
                    expanded[prev].name, f.name
                )));
            }
            key_producer[k] = Some(fi);
        }
    }
    key_producer.resize(keys.len(), None);

    let mut edges: Vec<(FuncId, FuncId, KeyId)> = Vec::new();
    for (fi, f) in expanded.iter().enumerate() {
        for inp in &f.inputs {
            match key_ids.get(inp) {
                Some(&k) => {
                    if let Some(src) = key_producer[k] {
                        edges.push((src, fi, k));
                    }
                    // external inputs carry no edge
                }
                None => {
                    return Err(WorkflowError::DanglingKey {
                        key: inp.clone(),
                        consumer: f.name.clone(),
                    })
                }
            }
        }
    }
    // Keys referenced as inputs must be produced or external; producted keys
    // were interned above, so any input key that is neither errors out here.
    for (fi, f) in expanded.iter().enumerate() {
        for inp in &f.inputs {
            let k = key_ids[inp];
            if key_producer[k].is_none() && !raw.external_inputs.contains(inp) {
                return Err(WorkflowError::DanglingKey {
                    key: inp.clone(),
                    consumer: expanded[fi].name.clone(),
                });
            }
        }
    }

    check_acyclic(&expanded, &edges)?;

    let mut has_incoming = vec![false; expanded.len()];
    for &(_, dst, _) in &edges {
        has_incoming[dst] = true;
    }
    let entry_points =
        (0..expanded.len()).filter(|&f| !has_incoming[f]).collect::<Vec<_>>();

    Ok(WorkflowSpec {
        name: raw.name,
        external_inputs: raw.external_inputs,
        functions: expanded,
        keys,
        key_producer,
        edges,
        entry_points,
    })
}

/// Static expansion of `foreach = k` into k parallel copies.
///
/// Each copy `f#i` rewrites its outputs `key -> key#i`. Consumers of a
/// fanned key receive all k copies as inputs, except that a foreach consumer
/// with the same width consumes elementwise (`f#i` reads `key#i`).
fn expand_foreach(
    raw: Vec<RawFunction>,
    externals: &[String],
) -> Result<Vec<FunctionDef>, WorkflowError> {
    let mut fan: BTreeMap<String, u32> = BTreeMap::new();
    for f in &raw {
        if let Some(k) = f.foreach {
            if k == 0 {
                return Err(WorkflowError::Syntax(format!("foreach = 0 on `{}`", f.name)));
            }
            for out in &f.outputs {
                fan.insert(out.clone(), k);
            }
        }
    }
    let mut result = Vec::new();
    for f in raw {
        let width = f.foreach.unwrap_or(1);
        for i in 0..width {
            let name = if f.foreach.is_some() { format!("{}#{}", f.name, i) } else { f.name.clone() };
            let outputs = f
                .outputs
                .iter()
                .map(|o| if f.foreach.is_some() { format!("{o}#{i}") } else { o.clone() })
                .collect();
            let mut inputs = Vec::new();
            for inp in &f.inputs {
                match fan.get(inp) {
                    None => {
                        if !externals.contains(inp) && !fan.contains_key(inp) {
                            // plain key; producer check happens later
                        }
                        inputs.push(inp.clone());
                    }
                    Some(&k) if f.foreach == Some(k) => inputs.push(format!("{inp}#{i}")),
                    Some(&k) if f.foreach.is_none() => {
                        for j in 0..k {
                            inputs.push(format!("{inp}#{j}"));
                        }
                    }
                    Some(&k) => {
                        return Err(WorkflowError::Syntax(format!(
                            "foreach width mismatch: `{}` (width {:?}) consumes `{inp}` fanned {k} ways",
                            f.name, f.foreach
                        )))
                    }
                }
            }
            result.push(FunctionDef {
                name,
                inputs,
                outputs,
                compute_ms: f.compute_ms,
                output_bytes: f.output_bytes,
                coldstart_ms: f.coldstart_ms,
            });
        }
    }
    Ok(result)
}

fn check_acyclic(
    funcs: &[FunctionDef],
    edges: &[(FuncId, FuncId, KeyId)],
) -> Result<(), WorkflowError> {
    let n = funcs.len();
    let mut succ: Vec<Vec<FuncId>> = vec![Vec::new(); n];
    for &(s, d, _) in edges {
        succ[s].push(d);
    }
    // Iterative coloring DFS; on a back edge, walk the stack to report the cycle.
    let mut color = vec![0u8; n]; // 0 white, 1 gray, 2 black
    for start in 0..n {
        if color[start] != 0 {
            continue;
        }
        let mut stack: Vec<(FuncId, usize)> = vec![(start, 0)];
        color[start] = 1;
        while let Some(&mut (node, ref mut idx)) = stack.last_mut() {
            if *idx < succ[node].len() {
                let next = succ[node][*idx];
                *idx += 1;
                match color[next] {
                    0 => {
                        color[next] = 1;
                        stack.push((next, 0));
                    }
                    1 => {
                        let mut cycle: Vec<String> =
                            Vec::with_capacity(stack.len() + 1);
                        let pos = stack.iter().position(|&(f, _)| f == next).unwrap();
                        for &(f, _) in &stack[pos..] {
                            cycle.push(funcs[f].name.clone());
                        }
                        cycle.push(funcs[next].name.clone());
                        return Err(WorkflowError::Cycle(cycle));
                    }
                    _ => {}
                }
            } else {
                color[node] = 2;
                stack.pop();
            }
        }
    }
    Ok(())
}

/// Build the successor/predecessor index and a topological order.
pub fn build_dag_view(spec: &WorkflowSpec) -> DagView {
    let n = spec.functions.len();
    let mut successors: Vec<Vec<FuncId>> = vec![Vec::new(); n];
    let mut predecessors: Vec<Vec<FuncId>> = vec![Vec::new(); n];
    for &(s, d, _) in &spec.edges {
        if !successors[s].contains(&d) {
            successors[s].push(d);
        }
        if !predecessors[d].contains(&s) {
            predecessors[d].push(s);
        }
    }
    // Kahn's algorithm, preferring file order among ready functions.
    let mut indeg: Vec<usize> = predecessors.iter().map(|p| p.len()).collect();
    let mut ready: BTreeSet<FuncId> = (0..n).filter(|&f| indeg[f] == 0).collect();
    let mut topo_order = Vec::with_capacity(n);
    while let Some(&f) = ready.iter().next() {
        ready.remove(&f);
        topo_order.push(f);
        for &s in &successors[f] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
    }
    debug_assert_eq!(topo_order.len(), n, "parse guarantees acyclicity");
    DagView { successors, predecessors, topo_order }
}

impl WorkflowSpec {
    pub fn dag_view(&self) -> DagView {
        build_dag_view(self)
    }
}

// ---------------------------------------------------------------------------
// Synthetic workflows
// ---------------------------------------------------------------------------

/// Generator shapes standing in for benchmark applications.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Chain(usize),
    FanIn(usize),
    FanOut(usize),
    Diamond,
    Layered(Vec<usize>),
    Random { n: usize, edge_prob: f64, seed: u64 },
}

/// Emulation parameters drawn per generated function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenParams {
    /// Inclusive range of compute durations in milliseconds.
    pub compute_ms: (u64, u64),
    /// Inclusive range of per-output sizes in bytes.
    pub output_bytes: (u64, u64),
    pub coldstart_ms: u64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            compute_ms: (100, 500),
            output_bytes: (1 << 20, 32 << 20),
            coldstart_ms: 100,
            seed: 0,
        }
    }
}

fn fn_names(n: usize) -> Vec<String> {
    if n <= 26 {
        (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect()
    } else {
        (0..n).map(|i| format!("f{i:03}")).collect()
    }
}

/// Generate a valid workflow of the given shape. Deterministic per seed.
pub fn synthesize_workflow(shape: &Shape, params: &GenParams) -> Result<WorkflowSpec, WorkflowError> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let draw = |range: (u64, u64), rng: &mut ChaCha8Rng| -> u64 {
        if range.0 >= range.1 {
            range.0
        } else {
            rng.gen_range(range.0..=range.1)
        }
    };

    // (name, inputs, outputs) triples; edges implied by key matching.
    let structure: Vec<(String, Vec<String>, Vec<String>)> = match shape {
        Shape::Chain(n) => {
            if *n == 0 {
                return Err(WorkflowError::InvalidShape("chain(0)".into()));
            }
            let names = fn_names(*n);
            (0..*n)
                .map(|i| {
                    let inputs = if i == 0 { vec![] } else { vec![format!("k{}", i - 1)] };
                    let outputs =
                        if i + 1 == *n { vec![] } else { vec![format!("k{i}")] };
                    (names[i].clone(), inputs, outputs)
                })
                .collect()
        }
        Shape::FanIn(n) => {
            if *n == 0 {
                return Err(WorkflowError::InvalidShape("fan_in(0)".into()));
            }
            let names = fn_names(*n + 1);
            let mut v: Vec<_> = (0..*n)
                .map(|i| (names[i].clone(), vec![], vec![format!("k{i}")]))
                .collect();
            let sink_inputs = (0..*n).map(|i| format!("k{i}")).collect();
            v.push((names[*n].clone(), sink_inputs, vec![]));
            v
        }
        Shape::FanOut(n) => {
            if *n == 0 {
                return Err(WorkflowError::InvalidShape("fan_out(0)".into()));
            }
            let names = fn_names(*n + 1);
            let mut v = vec![(names[0].clone(), vec![], vec!["k0".to_string()])];
            for i in 0..*n {
                v.push((names[i + 1].clone(), vec!["k0".to_string()], vec![]));
            }
            v
        }
        Shape::Diamond => vec![
            ("A".into(), vec![], vec!["a_out".into()]),
            ("B".into(), vec!["a_out".into()], vec!["b_out".into()]),
            ("C".into(), vec!["a_out".into()], vec!["c_out".into()]),
            ("D".into(), vec!["b_out".into(), "c_out".into()], vec![]),
        ],
        Shape::Layered(widths) => {
            if widths.is_empty() || widths.contains(&0) {
                return Err(WorkflowError::InvalidShape("layered with empty layer".into()));
            }
            let total: usize = widths.iter().sum();
            let names = fn_names(total);
            let mut v = Vec::new();
            let mut base = 0usize;
            for (li, &w) in widths.iter().enumerate() {
                for j in 0..w {
                    let idx = base + j;
                    let inputs = if li == 0 {
                        vec![]
                    } else {
                        let prev_base = base - widths[li - 1];
                        (0..widths[li - 1]).map(|p| format!("k{}", prev_base + p)).collect()
                    };
                    let outputs = if li + 1 == widths.len() {
                        vec![]
                    } else {
                        vec![format!("k{idx}")]
                    };
                    v.push((names[idx].clone(), inputs, outputs));
                }
                base += w;
            }
            v
        }
        Shape::Random { n, edge_prob, seed } => {
            if *n == 0 {
                return Err(WorkflowError::InvalidShape("random(0)".into()));
            }
            let mut erng = ChaCha8Rng::seed_from_u64(*seed);
            let names = fn_names(*n);
            let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); *n];
            for i in 0..*n {
                for j in (i + 1)..*n {
                    if erng.gen::<f64>() < *edge_prob {
                        consumers[i].push(j);
                    }
                }
            }
            (0..*n)
                .map(|i| {
                    let inputs: Vec<String> = (0..i)
                        .filter(|&p| consumers[p].contains(&i))
                        .map(|p| format!("k{p}"))
                        .collect();
                    let outputs = if consumers[i].is_empty() {
                        vec![]
                    } else {
                        vec![format!("k{i}")]
                    };
                    (names[i].clone(), inputs, outputs)
                })
                .collect()
        }
    };

    let functions = structure
        .into_iter()
        .map(|(name, inputs, outputs)| RawFunction {
            name,
            inputs,
            outputs,
            compute_ms: draw(params.compute_ms, &mut rng),
            output_bytes: draw(params.output_bytes, &mut rng),
            coldstart_ms: params.coldstart_ms,
            foreach: None,
        })
        .collect();

    let shape_name = match shape {
        Shape::Chain(n) => format!("chain{n}"),
        Shape::FanIn(n) => format!("fan_in{n}"),
        Shape::FanOut(n) => format!("fan_out{n}"),
        Shape::Diamond => "diamond".into(),
        Shape::Layered(w) => format!(
            "layered{}",
            w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("x")
        ),
        Shape::Random { n, .. } => format!("random{n}"),
    };
    build_spec(RawWorkflow { name: shape_name, external_inputs: vec![], functions })
}

/// Parse a shape specifier such as `chain:8`, `fan_in:4`, `diamond`,
/// `layered:3x4x2` or `random:40:0.1:7`.
pub fn parse_shape(s: &str) -> Result<Shape, WorkflowError> {
    let parts: Vec<&str> = s.split(':').collect();
    let usize_arg = |idx: usize| -> Result<usize, WorkflowError> {
        parts
            .get(idx)
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| WorkflowError::InvalidShape(format!("bad argument in `{s}`")))
    };
    match parts[0] {
        "chain" => Ok(Shape::Chain(usize_arg(1)?)),
        "fan_in" => Ok(Shape::FanIn(usize_arg(1)?)),
        "fan_out" => Ok(Shape::FanOut(usize_arg(1)?)),
        "diamond" => Ok(Shape::Diamond),
        "layered" => {
            let widths: Result<Vec<usize>, _> = parts
                .get(1)
                .ok_or_else(|| WorkflowError::InvalidShape(format!("layered needs widths: `{s}`")))?
                .split('x')
                .map(|w| w.parse::<usize>())
                .collect();
            Ok(Shape::Layered(widths.map_err(|_| {
                WorkflowError::InvalidShape(format!("bad layer width in `{s}`"))
            })?))
        }
        "random" => {
            let n = usize_arg(1)?;
            let p: f64 = parts
                .get(2)
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| WorkflowError::InvalidShape(format!("bad edge prob in `{s}`")))?;
            let seed: u64 = parts.get(3).and_then(|p| p.parse().ok()).unwrap_or(0);
            Ok(Shape::Random { n, edge_prob: p, seed })
        }
        other => Err(WorkflowError::InvalidShape(format!("unknown shape `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIAMOND: &str = r#"
name = "diamond"

[[functions]]
name = "A"
outputs = ["x"]
compute_ms = 10
output_bytes = 64

[[functions]]
name = "B"
inputs = ["x"]
outputs = ["bx"]
compute_ms = 10
output_bytes = 64

[[functions]]
name = "C"
inputs = ["x"]
outputs = ["cx"]
compute_ms = 10
output_bytes = 64

[[functions]]
name = "D"
inputs = ["bx", "cx"]
compute_ms = 10
output_bytes = 64
"#;

    #[test]
    fn diamond_parses_to_four_edges() {
        let spec = parse_workflow(DIAMOND).unwrap();
        assert_eq!(spec.func_count(), 4);
        assert_eq!(spec.edges().len(), 4);
        assert_eq!(spec.entry_points(), &[0]);
    }

    #[test]
    fn cycle_is_reported_with_a_path() {
        let text = format!(
            "{DIAMOND}\n[[functions]]\nname = \"E\"\ninputs = [\"dx\"]\noutputs = []\ncompute_ms = 1\noutput_bytes = 0\n"
        );
        // Give D an output consumed by A to close a cycle A -> B -> D -> A.
        let text = text.replace(
            "name = \"D\"\ninputs = [\"bx\", \"cx\"]",
            "name = \"D\"\ninputs = [\"bx\", \"cx\"]\noutputs = [\"dx\"]",
        );
        let text = text.replace(
            "name = \"A\"\noutputs = [\"x\"]",
            "name = \"A\"\ninputs = [\"dx\"]\noutputs = [\"x\"]",
        );
        match parse_workflow(&text) {
            Err(WorkflowError::Cycle(path)) => {
                assert!(path.len() >= 3, "cycle path too short: {path:?}");
                assert_eq!(path.first(), path.last());
            }
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn fig3_shape_has_three_entries() {
        // A, B, C -> D -> E
        let text = r#"
name = "fan"
[[functions]]
name = "A"
outputs = ["a"]
compute_ms = 1000
output_bytes = 64
[[functions]]
name = "B"
outputs = ["b"]
compute_ms = 1500
output_bytes = 64
[[functions]]
name = "C"
outputs = ["c"]
compute_ms = 2000
output_bytes = 64
[[functions]]
name = "D"
inputs = ["a", "b", "c"]
outputs = ["d"]
compute_ms = 1000
output_bytes = 64
[[functions]]
name = "E"
inputs = ["d"]
compute_ms = 500
output_bytes = 64
"#;
        let spec = parse_workflow(text).unwrap();
        assert_eq!(spec.entry_points().len(), 3);
        let view = spec.dag_view();
        let d = spec.func_id("D").unwrap();
        let e = spec.func_id("E").unwrap();
        assert_eq!(view.predecessors[d].len(), 3);
        assert_eq!(view.successors[d], vec![e]);
        assert_eq!(view.predecessors[e], vec![d]);
    }

    #[test]
    fn dangling_key_rejected() {
        let text = r#"
name = "bad"
[[functions]]
name = "A"
inputs = ["nowhere"]
compute_ms = 1
output_bytes = 0
"#;
        assert!(matches!(
            parse_workflow(text),
            Err(WorkflowError::DanglingKey { .. })
        ));
    }

    #[test]
    fn duplicate_name_rejected() {
        let text = r#"
name = "bad"
[[functions]]
name = "A"
compute_ms = 1
output_bytes = 0
[[functions]]
name = "A"
compute_ms = 1
output_bytes = 0
"#;
        assert!(matches!(parse_workflow(text), Err(WorkflowError::DuplicateName(_))));
    }

    #[test]
    fn external_inputs_do_not_dangle() {
        let text = r#"
name = "ext"
external_inputs = ["raw"]
[[functions]]
name = "A"
inputs = ["raw"]
compute_ms = 1
output_bytes = 0
"#;
        let spec = parse_workflow(text).unwrap();
        assert_eq!(spec.entry_points(), &[0]);
        assert!(spec.edges().is_empty());
    }

    #[test]
    fn foreach_expands_statically() {
        let text = r#"
name = "fe"
[[functions]]
name = "split"
outputs = ["part"]
compute_ms = 1
output_bytes = 64
foreach = 3
[[functions]]
name = "merge"
inputs = ["part"]
compute_ms = 1
output_bytes = 0
"#;
        let spec = parse_workflow(text).unwrap();
        assert_eq!(spec.func_count(), 4);
        let merge = spec.func_id("merge").unwrap();
        assert_eq!(spec.functions[merge].inputs, vec!["part#0", "part#1", "part#2"]);
        let view = spec.dag_view();
        assert_eq!(view.predecessors[merge].len(), 3);
    }

    #[test]
    fn generator_shapes() {
        let p = GenParams { seed: 3, ..GenParams::default() };
        let fan = synthesize_workflow(&Shape::FanIn(8), &p).unwrap();
        assert_eq!(fan.entry_points().len(), 8);
        let view = fan.dag_view();
        let sink = fan.func_count() - 1;
        assert_eq!(view.predecessors[sink].len(), 8);

        let chain = synthesize_workflow(&Shape::Chain(3), &p).unwrap();
        assert_eq!(chain.entry_points(), &[0]);
        assert_eq!(chain.edges().len(), 2);

        assert!(matches!(
            synthesize_workflow(&Shape::Chain(0), &p),
            Err(WorkflowError::InvalidShape(_))
        ));
    }

    #[test]
    fn random_generation_is_deterministic() {
        let p = GenParams::default();
        let shape = Shape::Random { n: 40, edge_prob: 0.1, seed: 7 };
        let a = synthesize_workflow(&shape, &p).unwrap();
        let b = synthesize_workflow(&shape, &p).unwrap();
        assert_eq!(a.to_text(), b.to_text(), "byte-identical across runs");
    }

    #[test]
    fn round_trip_preserves_structure() {
        for shape in [
            Shape::Diamond,
            Shape::Chain(5),
            Shape::FanIn(4),
            Shape::FanOut(6),
            Shape::Layered(vec![2, 3, 2]),
            Shape::Random { n: 12, edge_prob: 0.3, seed: 11 },
        ] {
            let spec = synthesize_workflow(&shape, &GenParams::default()).unwrap();
            let back = parse_workflow(&spec.to_text()).unwrap();
            assert_eq!(spec, back, "round trip for {shape:?}");
        }
    }

    #[test]
    fn topo_order_is_valid() {
        let spec = parse_workflow(DIAMOND).unwrap();
        let view = spec.dag_view();
        let pos: Vec<usize> = {
            let mut p = vec![0; spec.func_count()];
            for (i, &f) in view.topo_order.iter().enumerate() {
                p[f] = i;
            }
            p
        };
        for &(s, d, _) in spec.edges() {
            assert!(pos[s] < pos[d]);
        }
    }
}
