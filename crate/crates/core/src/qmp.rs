//! Multi-programming: many small circuits share one wide register, separated
//! by idle buffer qubits, and each circuit's histogram is recovered from the
//! joint measurement by marginalization.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::Circuit;
use crate::error::{Error, Result};
use crate::sim::{index_to_bitstring, CountsMap};
use crate::util::{mix_seed, read_json, write_json};

/// Above this window width marginals are returned sparse instead of zero-filled.
pub const MAX_DENSE_WINDOW: usize = 16;

const SAMPLE_STREAM: u64 = 0x5157;
const NOISE_STREAM: u64 = 0x4e4f;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub circuit: usize,
    /// Physical qubit hosting logical qubit `k` of the circuit at position `k`.
    pub qubits: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmpLayout {
    pub device_width: usize,
    /// Coupling graph; `None` means a line `0 - 1 - ... - (width - 1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(usize, usize)>>,
    pub assignments: Vec<Assignment>,
    /// Minimum number of idle qubits on any path between two windows.
    #[serde(default = "default_buffer")]
    pub buffer: usize,
}

fn default_buffer() -> usize {
    1
}

/// Target hardware topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Device {
    Line(usize),
    Graph {
        width: usize,
        edges: Vec<(usize, usize)>,
    },
}

impl Device {
    pub fn width(&self) -> usize {
        match self {
            Device::Line(w) => *w,
            Device::Graph { width, .. } => *width,
        }
    }

    fn edges(&self) -> Option<Vec<(usize, usize)>> {
        match self {
            Device::Line(_) => None,
            Device::Graph { edges, .. } => Some(edges.clone()),
        }
    }
}

struct Graph {
    adj: Vec<Vec<usize>>,
}

impl Graph {
    fn new(width: usize, edges: Option<&[(usize, usize)]>) -> Result<Self> {
        let mut adj = vec![Vec::new(); width];
        match edges {
            None => {
                for q in 1..width {
                    adj[q - 1].push(q);
                    adj[q].push(q - 1);
                }
            }
            Some(es) => {
                for &(a, b) in es {
                    if a >= width || b >= width || a == b {
                        return Err(Error::usage(format!("invalid device edge ({a}, {b})")));
                    }
                    if !adj[a].contains(&b) {
                        adj[a].push(b);
                        adj[b].push(a);
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Graph { adj })
    }

    /// Hop distance from `sources` to every vertex, capped at `limit + 1`.
    fn distances(&self, sources: &[usize], limit: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.adj.len()];
        let mut queue = VecDeque::new();
        for &s in sources {
            dist[s] = 0;
            queue.push_back(s);
        }
        while let Some(v) = queue.pop_front() {
            if dist[v] > limit {
                continue;
            }
            for &u in &self.adj[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    fn is_connected_subset(&self, qubits: &[usize]) -> bool {
        let set: BTreeSet<usize> = qubits.iter().copied().collect();
        let mut seen = BTreeSet::from([qubits[0]]);
        let mut stack = vec![qubits[0]];
        while let Some(v) = stack.pop() {
            for &u in &self.adj[v] {
                if set.contains(&u) && seen.insert(u) {
                    stack.push(u);
                }
            }
        }
        seen.len() == set.len()
    }

    /// Depth-first visiting order from qubit 0 (then any unvisited qubit),
    /// smallest neighbour first. On a line this is the identity order.
    fn walk_order(&self) -> Vec<usize> {
        let n = self.adj.len();
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        for root in 0..n {
            if seen[root] {
                continue;
            }
            let mut stack = vec![root];
            while let Some(v) = stack.pop() {
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                order.push(v);
                for &u in self.adj[v].iter().rev() {
                    if !seen[u] {
                        stack.push(u);
                    }
                }
            }
        }
        order
    }
}

impl QmpLayout {
    fn graph(&self) -> Result<Graph> {
        Graph::new(self.device_width, self.edges.as_deref())
    }

    /// Disjoint, in-range, connected windows separated by at least `buffer`
    /// idle qubits.
    pub fn validate(&self) -> Result<()> {
        let graph = self.graph()?;
        let mut used = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for a in &self.assignments {
            if !ids.insert(a.circuit) {
                return Err(Error::usage(format!("circuit {} assigned twice", a.circuit)));
            }
            if a.qubits.is_empty() {
                return Err(Error::usage(format!("circuit {} has an empty window", a.circuit)));
            }
            for &q in &a.qubits {
                if q >= self.device_width {
                    return Err(Error::usage(format!(
                        "qubit {q} of circuit {} exceeds device width {}",
                        a.circuit, self.device_width
                    )));
                }
                if !used.insert(q) {
                    return Err(Error::usage(format!("qubit {q} is used by two windows")));
                }
            }
            if !graph.is_connected_subset(&a.qubits) {
                return Err(Error::usage(format!(
                    "window of circuit {} is not connected on the device",
                    a.circuit
                )));
            }
        }
        for (k, a) in self.assignments.iter().enumerate() {
            let dist = graph.distances(&a.qubits, self.buffer);
            for b in &self.assignments[k + 1..] {
                if let Some(&q) = b.qubits.iter().find(|&&q| dist[q] <= self.buffer) {
                    return Err(Error::usage(format!(
                        "circuits {} and {} are closer than {} buffer qubit(s) (qubit {q})",
                        a.circuit, b.circuit, self.buffer
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn active_qubits(&self) -> usize {
        self.assignments.iter().map(|a| a.qubits.len()).sum()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let layout: QmpLayout = read_json(path)?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Greedily place up to `n_circuits` windows of `width` qubits, walking the
/// device in depth-first order. On a line this gives offsets
/// `0, w + buffer, 2 (w + buffer), ...`.
pub fn pack(n_circuits: usize, width: usize, device: &Device, buffer: usize) -> Result<QmpLayout> {
    let dw = device.width();
    if width == 0 || width > dw {
        return Err(Error::Capacity(format!(
            "circuits of width {width} do not fit a {dw}-qubit device"
        )));
    }
    let edges = device.edges();
    let graph = Graph::new(dw, edges.as_deref())?;
    let order = graph.walk_order();
    let mut blocked = vec![false; dw];
    let mut assignments = Vec::new();
    let mut pos = 0;
    while pos + width <= order.len() && assignments.len() < n_circuits {
        let window = &order[pos..pos + width];
        let chained = window.windows(2).all(|p| graph.adj[p[0]].contains(&p[1]));
        if chained && window.iter().all(|&q| !blocked[q]) {
            let dist = graph.distances(window, buffer);
            for (q, &d) in dist.iter().enumerate() {
                if d <= buffer {
                    blocked[q] = true;
                }
            }
            assignments.push(Assignment {
                circuit: assignments.len(),
                qubits: window.to_vec(),
            });
            pos += width;
        } else {
            pos += 1;
        }
    }
    if assignments.is_empty() {
        return Err(Error::Capacity("no window fits on the device".into()));
    }
    let layout = QmpLayout {
        device_width: dw,
        edges,
        assignments,
        buffer,
    };
    layout.validate()?;
    Ok(layout)
}

/// Circuits executed per joint run.
pub fn trf(layout: &QmpLayout) -> usize {
    layout.assignments.len()
}

/// Kernel-element evaluations needed for training plus test Gram matrices:
/// `p (N_tr (N_tr - 1) / 2 + N_te N_tr)`.
pub fn serial_calls(p: usize, n_train: usize, n_test: usize) -> u64 {
    let (p, a, b) = (p as u64, n_train as u64, n_test as u64);
    p * (a * a.saturating_sub(1) / 2 + b * a)
}

/// Joint runs needed when `trf` circuits share each run.
pub fn packed_calls(serial: u64, trf: usize) -> u64 {
    serial.div_ceil(trf as u64)
}

/// Sub-seed of circuit `circuit` inside a packed run.
pub fn circuit_seed(seed: u64, circuit: usize) -> u64 {
    mix_seed(seed, &[SAMPLE_STREAM, circuit as u64])
}

/// Serial reference: sample circuit `index` alone on the same stream it
/// would use inside a packed run.
pub fn run_serial(circuit: &Circuit, index: usize, shots: u64, seed: u64) -> Result<CountsMap> {
    circuit.run().sample_counts(shots, circuit_seed(seed, index))
}

/// Sample a packed run. Windows share no qubits, so the joint state is a
/// tensor product: each circuit is sampled on its own stream
/// [`circuit_seed`] and the per-shot outcomes are written into a
/// `device_width`-bit string with idle qubits at `0`. `flip_prob` flips each
/// active qubit's readout independently.
pub fn run_packed(
    layout: &QmpLayout,
    circuits: &[Circuit],
    shots: u64,
    seed: u64,
    flip_prob: f64,
) -> Result<CountsMap> {
    layout.validate()?;
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::config(format!("flip probability {flip_prob} outside [0, 1]")));
    }
    for a in &layout.assignments {
        let c = circuits.get(a.circuit).ok_or_else(|| {
            Error::usage(format!("layout references missing circuit {}", a.circuit))
        })?;
        if c.n_qubits() != a.qubits.len() {
            return Err(Error::usage(format!(
                "circuit {} has {} qubits but its window has {}",
                a.circuit,
                c.n_qubits(),
                a.qubits.len()
            )));
        }
    }
    let per_circuit = layout
        .assignments
        .par_iter()
        .map(|a| {
            let state = circuits[a.circuit].run();
            let mut rng = ChaCha8Rng::seed_from_u64(circuit_seed(seed, a.circuit));
            let mut outcomes = state.sample_outcomes(shots, &mut rng)?;
            if flip_prob > 0.0 {
                let mut noise = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[NOISE_STREAM, a.circuit as u64]));
                for o in &mut outcomes {
                    for k in 0..a.qubits.len() {
                        if noise.random::<f64>() < flip_prob {
                            *o ^= 1 << k;
                        }
                    }
                }
            }
            Ok(outcomes)
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    let w = layout.device_width;
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut key = vec![b'0'; w];
    for shot in 0..shots as usize {
        key.fill(b'0');
        for (a, outcomes) in layout.assignments.iter().zip(&per_circuit) {
            let o = outcomes[shot];
            for (k, &q) in a.qubits.iter().enumerate() {
                if o >> k & 1 == 1 {
                    key[w - 1 - q] = b'1';
                }
            }
        }
        *counts
            .entry(String::from_utf8(key.clone()).expect("ascii"))
            .or_insert(0) += 1;
    }
    Ok(CountsMap {
        width: w,
        shots,
        counts,
    })
}

/// Marginal histogram over `qubits` (logical qubit `k` = `qubits[k]`, written
/// rightmost-first). Linear in the number of observed keys; all `2^n` keys are
/// present when `n <= MAX_DENSE_WINDOW`.
pub fn window_counts(counts: &CountsMap, qubits: &[usize]) -> Result<CountsMap> {
    let w = counts.width;
    if qubits.is_empty() {
        return Err(Error::usage("empty measurement window"));
    }
    if let Some(&q) = qubits.iter().find(|&&q| q >= w) {
        return Err(Error::usage(format!("qubit {q} outside a {w}-bit register")));
    }
    let n = qubits.len();
    let mut out: BTreeMap<String, u64> = BTreeMap::new();
    if n <= MAX_DENSE_WINDOW {
        for idx in 0..1usize << n {
            out.insert(index_to_bitstring(idx, n), 0);
        }
    }
    let mut sub = vec![b'0'; n];
    for (key, &c) in &counts.counts {
        let bytes = key.as_bytes();
        for (k, &q) in qubits.iter().enumerate() {
            sub[n - 1 - k] = bytes[w - 1 - q];
        }
        *out.entry(String::from_utf8(sub.clone()).expect("ascii")).or_insert(0) += c;
    }
    Ok(CountsMap {
        width: n,
        shots: counts.shots,
        counts: out,
    })
}

/// Marginal over the contiguous window `least .. least + n`.
pub fn partial_measurement(counts: &CountsMap, least: usize, n: usize) -> Result<CountsMap> {
    if n == 0 || least + n > counts.width {
        return Err(Error::usage(format!(
            "window [{least}, {}) outside a {}-bit register",
            least + n,
            counts.width
        )));
    }
    let qubits: Vec<usize> = (least..least + n).collect();
    window_counts(counts, &qubits)
}

/// `(sum_j sqrt(P1(j) P2(j)))^2`.
pub fn bhattacharyya_fidelity(p1: &BTreeMap<String, f64>, p2: &BTreeMap<String, f64>) -> f64 {
    let s: f64 = p1
        .iter()
        .filter_map(|(k, &a)| p2.get(k).map(|&b| (a * b).sqrt()))
        .sum();
    s * s
}

/// Fidelity of `p_out` to `p_ideal`, rescaled so the uniform distribution over
/// `n_outcomes` scores 0 and `p_ideal` itself scores 1; negative values clamp to 0.
pub fn result_fidelity(
    p_out: &BTreeMap<String, f64>,
    p_ideal: &BTreeMap<String, f64>,
    n_outcomes: usize,
) -> Result<f64> {
    if n_outcomes == 0 {
        return Err(Error::usage("outcome space is empty"));
    }
    let total: f64 = p_ideal.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::usage(format!("ideal distribution sums to {total}")));
    }
    let u = (n_outcomes as f64).recip();
    // only the ideal support matters for the overlap with the uniform distribution
    let f_uni = p_ideal.values().map(|&p| (p * u).sqrt()).sum::<f64>().powi(2);
    if f_uni >= 1.0 - 1e-12 {
        return Err(Error::usage(
            "result fidelity is undefined when the ideal distribution is uniform",
        ));
    }
    let f = bhattacharyya_fidelity(p_out, p_ideal);
    Ok(((f - f_uni) / (1.0 - f_uni)).clamp(0.0, 1.0))
}

/// Exact output distribution of a circuit, keyed like sampled counts.
pub fn exact_distribution(circuit: &Circuit) -> BTreeMap<String, f64> {
    let n = circuit.n_qubits();
    circuit
        .run()
        .probabilities()
        .into_iter()
        .enumerate()
        .map(|(i, p)| (index_to_bitstring(i, n), p))
        .collect()
}

/// Edges of a 127-qubit heavy-hex device: seven rows joined by bridge qubits
/// (rows of 14, 15, 15, 15, 15, 15, 14 qubits).
pub fn heavy_hex_127() -> Vec<(usize, usize)> {
    let rows: [(usize, usize); 7] = [(0, 14), (18, 15), (37, 15), (56, 15), (75, 15), (94, 15), (113, 14)];
    let mut edges = Vec::new();
    for &(start, len) in &rows {
        for q in start..start + len - 1 {
            edges.push((q, q + 1));
        }
    }
    // (bridge start, upper-row columns, lower-row columns)
    let bridges: [(usize, [usize; 4], [usize; 4]); 6] = [
        (14, [0, 4, 8, 12], [18, 22, 26, 30]),
        (33, [20, 24, 28, 32], [39, 43, 47, 51]),
        (52, [37, 41, 45, 49], [56, 60, 64, 68]),
        (71, [58, 62, 66, 70], [75, 79, 83, 87]),
        (90, [77, 81, 85, 89], [94, 98, 102, 106]),
        (109, [96, 100, 104, 108], [114, 118, 122, 126]),
    ];
    for (b0, up, down) in bridges {
        for k in 0..4 {
            edges.push((up[k], b0 + k));
            edges.push((b0 + k, down[k]));
        }
    }
    edges
}

/// Hand layout of 35 two-qubit windows on [`heavy_hex_127`]: five adjacent
/// pairs per row at row offsets 0, 3, 6, 9, 12, bridge qubits left idle.
pub fn heavy_hex_layout_35() -> QmpLayout {
    let starts = [0, 18, 37, 56, 75, 94, 113];
    let mut assignments = Vec::new();
    for s in starts {
        for off in [0, 3, 6, 9, 12] {
            assignments.push(Assignment {
                circuit: assignments.len(),
                qubits: vec![s + off, s + off + 1],
            });
        }
    }
    QmpLayout {
        device_width: 127,
        edges: Some(heavy_hex_127()),
        assignments,
        buffer: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Gate;

    fn counts(width: usize, pairs: &[(&str, u64)]) -> CountsMap {
        CountsMap::new(width, pairs.iter().map(|(k, c)| (k.to_string(), *c)).collect()).unwrap()
    }

    fn x_circuit(n: usize, flips: &[usize]) -> Circuit {
        let mut c = Circuit::new(n, 0);
        for &q in flips {
            c.push(Gate::Ry { qubit: q, angle: std::f64::consts::PI }, None).unwrap();
        }
        c
    }

    #[test]
    fn line_packing() {
        let l = pack(100, 2, &Device::Line(8), 1).unwrap();
        let starts: Vec<usize> = l.assignments.iter().map(|a| a.qubits[0]).collect();
        assert_eq!(starts, vec![0, 3, 6]);
        assert_eq!(trf(&l), 3);
        assert_eq!(trf(&pack(1000, 2, &Device::Line(127), 1).unwrap()), 42);
        assert_eq!(trf(&pack(1, 2, &Device::Line(127), 1).unwrap()), 1);
        assert!(matches!(pack(1, 3, &Device::Line(2), 1), Err(Error::Capacity(_))));
    }

    #[test]
    fn heavy_hex_layout() {
        let edges = heavy_hex_127();
        assert_eq!(edges.len(), 144);
        let l = heavy_hex_layout_35();
        l.validate().unwrap();
        assert_eq!(trf(&l), 35);
        assert_eq!(l.active_qubits(), 70);
        let greedy = pack(
            1000,
            2,
            &Device::Graph {
                width: 127,
                edges,
            },
            1,
        )
        .unwrap();
        greedy.validate().unwrap();
    }

    #[test]
    fn buffer_violations_rejected() {
        let mut l = pack(2, 2, &Device::Line(5), 1).unwrap();
        l.assignments[1].qubits = vec![2, 3];
        assert!(l.validate().is_err());
        l.assignments[1].qubits = vec![1, 2];
        assert!(l.validate().is_err());
        l.assignments[1].qubits = vec![3, 4];
        l.validate().unwrap();
        l.buffer = 2;
        assert!(l.validate().is_err());
    }

    #[test]
    fn deterministic_packed_runs() {
        let layout = QmpLayout {
            device_width: 3,
            edges: None,
            assignments: vec![Assignment { circuit: 0, qubits: vec![0, 1] }],
            buffer: 1,
        };
        let c = run_packed(&layout, &[x_circuit(2, &[0, 1])], 50, 1, 0.0).unwrap();
        assert_eq!(c.counts, BTreeMap::from([("011".to_string(), 50)]));
        let two = pack(2, 2, &Device::Line(5), 1).unwrap();
        let c = run_packed(&two, &[x_circuit(2, &[0]), x_circuit(2, &[0])], 20, 1, 0.0).unwrap();
        assert_eq!(c.counts, BTreeMap::from([("01001".to_string(), 20)]));
    }

    #[test]
    fn packed_marginals_equal_serial_runs() {
        let layout = pack(3, 2, &Device::Line(8), 1).unwrap();
        let circuits: Vec<Circuit> = (0..3)
            .map(|k| {
                let mut c = Circuit::new(2, 0);
                c.push(Gate::Ry { qubit: 0, angle: 0.4 + k as f64 }, None).unwrap();
                c.push(Gate::Cx { control: 0, target: 1 }, None).unwrap();
                c.push(Gate::Rx { qubit: 1, angle: 0.9 }, None).unwrap();
                c
            })
            .collect();
        let joint = run_packed(&layout, &circuits, 2000, 17, 0.0).unwrap();
        for a in &layout.assignments {
            let m = window_counts(&joint, &a.qubits).unwrap();
            let s = run_serial(&circuits[a.circuit], a.circuit, 2000, 17).unwrap();
            for (k, &c) in &m.counts {
                assert_eq!(c, s.get(k));
            }
        }
    }

    #[test]
    fn marginal_examples() {
        let c = counts(4, &[("0101", 600), ("0001", 400)]);
        let m = partial_measurement(&c, 0, 2).unwrap();
        assert_eq!(m.counts, BTreeMap::from([
            ("00".to_string(), 0),
            ("01".to_string(), 1000),
            ("10".to_string(), 0),
            ("11".to_string(), 0),
        ]));
        let c = counts(2, &[("10", 7)]);
        let m = partial_measurement(&c, 1, 1).unwrap();
        assert_eq!(m.counts, BTreeMap::from([("0".to_string(), 0), ("1".to_string(), 7)]));
        let full = partial_measurement(&c, 0, 2).unwrap();
        assert_eq!(full.get("10"), 7);
        assert_eq!(full.counts.len(), 4);
        assert!(partial_measurement(&c, 1, 2).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let d = |pairs: &[(&str, f64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>();
        let ideal = d(&[("00", 1.0)]);
        let out = d(&[("00", 0.5), ("11", 0.5)]);
        assert!((result_fidelity(&out, &ideal, 4).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(result_fidelity(&ideal, &ideal, 4).unwrap(), 1.0);
        let uni = d(&[("00", 0.25), ("01", 0.25), ("10", 0.25), ("11", 0.25)]);
        assert_eq!(result_fidelity(&uni, &ideal, 4).unwrap(), 0.0);
        assert!(result_fidelity(&ideal, &uni, 4).is_err());
    }

    #[test]
    fn call_accounting() {
        assert_eq!(serial_calls(50, 50, 150), 436_250);
        assert_eq!(packed_calls(436_250, 35), 12_465);
    }
}
