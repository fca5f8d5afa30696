//! Randomized differential testing of the event runtime against the
//! frame-based forward pass.
//!
//! A case is a random small network plus one input vector. The input is
//! streamed in several random orders; every run must end with accumulators
//! equal to the frame outputs. Traces are also checked for the neuron-level
//! properties: basic neurons alternate signs, and extended neurons end with
//! an emission balance equal to their discretized-ReLU output.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Serialize;

use crate::data::{stream_pixels, EventStream};
use crate::error::{Error, Result};
use crate::event::{run_stream, NeuronModel, RunOptions};
use crate::frame;
use crate::model;
use crate::seed::SeedStream;
use crate::synapse::Network;
use crate::types::{
    ActivationKind, LayerKind, LayerParams, LayerSpec, Model, NetworkSpec, QuantizedParams,
};

const LAMBDAS: [u32; 4] = [1, 2, 4, 64];

/// Worst-case synaptic deliveries allowed for one streamed case.
pub const DELIVERY_BUDGET: f64 = 2.0e5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeLimits {
    pub min_layers: usize,
    pub max_layers: usize,
    /// Upper bound on the input size and every layer's output size.
    pub max_width: usize,
    pub max_theta: i8,
    /// Force one neuron model instead of drawing it per case.
    pub model: Option<NeuronModel>,
    /// Probability that the first layer is a convolution.
    pub conv_probability: f64,
    /// Cases whose [`activity_bound`] exceeds this are regenerated smaller.
    pub delivery_budget: f64,
}

impl Default for SizeLimits {
    fn default() -> Self {
        SizeLimits {
            min_layers: 2,
            max_layers: 4,
            max_width: 32,
            max_theta: 32,
            model: None,
            conv_probability: 0.25,
            delivery_budget: DELIVERY_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseInput {
    pub seed: u64,
    pub model: Model,
    pub input: Vec<i32>,
}

impl CaseInput {
    pub fn neuron_model(&self) -> NeuronModel {
        NeuronModel::of(self.model.spec.layers[0].activation)
    }
}

fn random_activation<R: Rng>(rng: &mut R, model: Option<NeuronModel>) -> ActivationKind {
    let model = model.unwrap_or(if rng.gen_bool(0.5) {
        NeuronModel::Basic
    } else {
        NeuronModel::Extended
    });
    match model {
        NeuronModel::Basic => ActivationKind::Binary,
        NeuronModel::Extended => ActivationKind::drelu(LAMBDAS[rng.gen_range(0..LAMBDAS.len())]),
    }
}

fn random_conv<R: Rng>(rng: &mut R, act: ActivationKind, max_width: usize) -> Option<LayerSpec> {
    let h = rng.gen_range(3..=5usize);
    let w = rng.gen_range(3..=5usize);
    let in_ch = rng.gen_range(1..=2usize);
    if in_ch * h * w > max_width {
        return None;
    }
    let kernel = rng.gen_range(2..=3usize).min(h).min(w);
    let positions = (h - kernel + 1) * (w - kernel + 1);
    let max_ch = (max_width / positions).clamp(1, 3);
    let channels = rng.gen_range(1..=max_ch);
    LayerSpec::conv2d([in_ch, h, w], channels, kernel, act).ok()
}

fn random_params<R: Rng>(rng: &mut R, layer: &LayerSpec, max_theta: i8) -> LayerParams {
    // theta = 0 is common enough to matter on its own
    let zero_theta = rng.gen_bool(0.2);
    LayerParams {
        weights: (0..layer.weight_count()).map(|_| rng.gen::<i8>()).collect(),
        theta: (0..layer.out_size())
            .map(|_| {
                if zero_theta {
                    0
                } else {
                    rng.gen_range(0..=max_theta)
                }
            })
            .collect(),
    }
}

/// Upper bound on the synaptic deliveries of any event ordering, and on
/// the largest counter magnitude reached along the way.
///
/// An incoming event of weight `w` makes a basic neuron emit at most once
/// and an extended neuron at most `|w| / lambda + 1` times, which bounds
/// every neuron's emissions layer by layer.
pub fn activity_bound(model: &Model, input: &[i32]) -> (f64, f64) {
    let net = Network::new(model.clone());
    let mut events: Vec<f64> = input.iter().map(|&v| v.max(0) as f64).collect();
    let (mut deliveries, mut counter) = (0.0f64, 0.0f64);
    for (k, layer) in model.spec.layers.iter().enumerate() {
        let table = &net.tables[k];
        let mut next = vec![0.0; layer.out_size()];
        let mut reach: Vec<f64> = model.params.layers[k]
            .theta
            .iter()
            .map(|&t| t as f64)
            .collect();
        for (src, &e) in events.iter().enumerate() {
            if e == 0.0 {
                continue;
            }
            let (targets, weights) = table.row(src);
            deliveries += e * targets.len() as f64;
            for (&t, &w) in targets.iter().zip(weights) {
                let per_event = match layer.activation {
                    ActivationKind::Binary => 1.0,
                    ActivationKind::DiscretizedRelu { lambda } => {
                        (w.unsigned_abs() / lambda) as f64 + 1.0
                    }
                };
                next[t as usize] += e * per_event;
                reach[t as usize] += e * w.unsigned_abs() as f64;
            }
        }
        counter = reach.into_iter().fold(counter, f64::max);
        events = next;
    }
    (deliveries, counter)
}

/// Deterministic random case for `seed`.
///
/// Deep networks with small `lambda` can emit astronomically many events.
/// Cases whose worst-case activity exceeds the delivery budget, or whose
/// counters could leave `i32`, are redrawn with half the width until they
/// fit; the activation kind stays the one drawn first.
pub fn gen_random_case(seed: u64, limits: &SizeLimits) -> CaseInput {
    let mut rng = SeedStream::new(seed).rng("case");
    let act = random_activation(&mut rng, limits.model);
    let mut max_width = limits.max_width;
    let mut max_depth = limits.max_layers.max(limits.min_layers);
    loop {
        let case = draw_case(&mut rng, seed, act, max_width, max_depth, limits);
        let (deliveries, counter) = activity_bound(&case.model, &case.input);
        let fits = deliveries <= limits.delivery_budget && counter < i32::MAX as f64 / 2.0;
        if fits || (max_width == 1 && max_depth == limits.min_layers) {
            return case;
        }
        if max_width > 1 {
            max_width /= 2;
        } else {
            max_depth -= 1;
        }
    }
}

fn draw_case<R: Rng>(
    rng: &mut R,
    seed: u64,
    act: ActivationKind,
    max_width: usize,
    max_depth: usize,
    limits: &SizeLimits,
) -> CaseInput {
    let depth = rng.gen_range(limits.min_layers..=max_depth);

    let mut layers = Vec::with_capacity(depth);
    if rng.gen_bool(limits.conv_probability) {
        if let Some(conv) = random_conv(rng, act, max_width) {
            layers.push(conv);
        }
    }
    let mut width = match layers.first() {
        Some(l) => l.out_size(),
        None => rng.gen_range(1..=max_width),
    };
    while layers.len() < depth {
        let out = rng.gen_range(1..=max_width);
        layers.push(LayerSpec::dense(width, out, act));
        width = out;
    }
    let spec = NetworkSpec::new(layers).expect("generated shapes compose");
    let params = QuantizedParams {
        layers: spec
            .layers
            .iter()
            .map(|l| random_params(rng, l, limits.max_theta))
            .collect(),
    };
    let model = Model::new(spec, params).expect("generated parameters are valid");

    let max_value = match act {
        ActivationKind::Binary => 1,
        ActivationKind::DiscretizedRelu { .. } if rng.gen_bool(0.5) => 3,
        ActivationKind::DiscretizedRelu { .. } => 1,
    };
    let density = rng.gen_range(0.0..=1.0);
    let input = (0..model.spec.input_size())
        .map(|_| {
            if rng.gen_bool(density) {
                rng.gen_range(1..=max_value)
            } else {
                0
            }
        })
        .collect();
    CaseInput { seed, model, input }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Quiescent accumulators differ from the frame output.
    Accumulators {
        ordering: u64,
        expected: Vec<i32>,
        got: Vec<i32>,
    },
    /// A basic neuron emitted two events of the same sign in a row.
    Alternation {
        ordering: u64,
        layer: usize,
        unit: usize,
    },
    /// An extended neuron's balance differs from its signed emission count.
    Balance {
        ordering: u64,
        layer: usize,
        unit: usize,
        z: i32,
        emitted: i64,
    },
    /// An extended neuron's balance differs from its discretized-ReLU output.
    Activation {
        ordering: u64,
        layer: usize,
        unit: usize,
        z: i32,
        expected: i32,
    },
    RuntimeError {
        message: String,
    },
}

#[derive(Debug, Clone)]
pub struct DiffCase {
    pub case: CaseInput,
    pub ordering_seeds: Vec<u64>,
    pub frame_output: Vec<i32>,
    pub accumulators: Vec<Vec<i32>>,
    pub violations: Vec<Violation>,
    /// Minimized failing case, attached only on failure.
    pub shrunk: Option<Box<CaseInput>>,
    /// Neurons whose traces were checked for sign alternation.
    pub alternation_checked: usize,
    /// Neurons whose final balance was checked.
    pub balance_checked: usize,
}

impl DiffCase {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn ordering_seeds(case_seed: u64, n: usize) -> Vec<u64> {
    let s = SeedStream::new(case_seed);
    (0..n)
        .map(|i| s.derive_indexed("order", i as u64))
        .collect()
}

fn check_without_shrinking(case: &CaseInput, n_orderings: usize) -> DiffCase {
    let seeds = ordering_seeds(case.seed, n_orderings);
    let mut diff = DiffCase {
        case: case.clone(),
        ordering_seeds: seeds.clone(),
        frame_output: Vec::new(),
        accumulators: Vec::new(),
        violations: Vec::new(),
        shrunk: None,
        alternation_checked: 0,
        balance_checked: 0,
    };
    let record = match frame::forward(&case.model, &case.input) {
        Ok(r) => r,
        Err(e) => {
            diff.violations.push(Violation::RuntimeError {
                message: e.to_string(),
            });
            return diff;
        }
    };
    diff.frame_output = record.output().to_vec();
    let net = Network::new(case.model.clone());
    let neuron_model = case.neuron_model();

    for &ordering in &seeds {
        let out = stream_pixels(&case.input, ordering)
            .and_then(|s| run_stream(&net, &s, neuron_model, RunOptions { trace: true }));
        let out = match out {
            Ok(o) => o,
            Err(e) => {
                diff.violations.push(Violation::RuntimeError {
                    message: e.to_string(),
                });
                continue;
            }
        };
        if out.accumulators != diff.frame_output {
            diff.violations.push(Violation::Accumulators {
                ordering,
                expected: diff.frame_output.clone(),
                got: out.accumulators.clone(),
            });
        }
        match neuron_model {
            NeuronModel::Basic => {
                let trace = out.trace.as_deref().unwrap_or_default();
                let mut last: Vec<Vec<i8>> = case
                    .model
                    .spec
                    .layers
                    .iter()
                    .map(|l| vec![0; l.out_size()])
                    .collect();
                let mut flagged = vec![false; last.len()];
                for row in trace.iter().filter(|r| r.layer > 0) {
                    let (layer, unit) = (row.layer as usize - 1, row.unit as usize);
                    if last[layer][unit] == row.sign && !flagged[layer] {
                        flagged[layer] = true;
                        diff.violations.push(Violation::Alternation {
                            ordering,
                            layer,
                            unit,
                        });
                    }
                    last[layer][unit] = row.sign;
                }
                diff.alternation_checked += last.iter().map(Vec::len).sum::<usize>();
            }
            NeuronModel::Extended => {
                for (layer, state) in out.states.iter().enumerate() {
                    let z = state.balance().expect("extended layer");
                    let expected = &record.layers[layer].output;
                    for unit in 0..z.len() {
                        let (pos, neg) = out.emissions[layer][unit];
                        let emitted = pos as i64 - neg as i64;
                        if z[unit] as i64 != emitted {
                            diff.violations.push(Violation::Balance {
                                ordering,
                                layer,
                                unit,
                                z: z[unit],
                                emitted,
                            });
                        }
                        if z[unit] != expected[unit] {
                            diff.violations.push(Violation::Activation {
                                ordering,
                                layer,
                                unit,
                                z: z[unit],
                                expected: expected[unit],
                            });
                        }
                    }
                    diff.balance_checked += z.len();
                }
            }
        }
        diff.accumulators.push(out.accumulators);
    }
    diff
}

/// Runs the frame pass once and the event runtime `n_orderings` times.
/// Failing cases get a minimized reproduction attached.
pub fn check_case(case: &CaseInput, n_orderings: usize) -> DiffCase {
    let mut diff = check_without_shrinking(case, n_orderings);
    if !diff.passed() {
        diff.shrunk = Some(Box::new(shrink(case, n_orderings)));
    }
    diff
}

fn fails(case: &CaseInput, n_orderings: usize) -> bool {
    !check_without_shrinking(case, n_orderings).passed()
}

fn truncate(case: &CaseInput, depth: usize) -> Option<CaseInput> {
    let spec = NetworkSpec::new(case.model.spec.layers[..depth].to_vec()).ok()?;
    let params = QuantizedParams {
        layers: case.model.params.layers[..depth].to_vec(),
    };
    Some(CaseInput {
        model: Model::new(spec, params).ok()?,
        ..case.clone()
    })
}

/// Removes output unit `unit` of dense layer `k` and the matching input
/// column of layer `k + 1`.
fn drop_unit(case: &CaseInput, k: usize, unit: usize) -> Option<CaseInput> {
    let spec = &case.model.spec;
    let layer = &spec.layers[k];
    if layer.kind != LayerKind::Dense || layer.out_size() <= 1 {
        return None;
    }
    if spec
        .layers
        .get(k + 1)
        .is_some_and(|l| l.kind != LayerKind::Dense)
    {
        return None;
    }
    let mut layers = spec.layers.clone();
    let mut params = case.model.params.layers.clone();
    let n_in = layer.in_size();
    let n_out = layer.out_size();
    layers[k].out_shape = vec![n_out - 1];
    params[k].weights.drain(unit * n_in..(unit + 1) * n_in);
    params[k].theta.remove(unit);
    if k + 1 < layers.len() {
        let next_out = layers[k + 1].out_size();
        layers[k + 1].in_shape = vec![n_out - 1];
        for row in (0..next_out).rev() {
            params[k + 1].weights.remove(row * n_out + unit);
        }
    }
    let spec = NetworkSpec::new(layers).ok()?;
    Some(CaseInput {
        model: Model::new(spec, QuantizedParams { layers: params }).ok()?,
        ..case.clone()
    })
}

/// Greedy minimization: drop trailing layers, then hidden and output units,
/// then input events, keeping each step only if the case still fails.
pub fn shrink(case: &CaseInput, n_orderings: usize) -> CaseInput {
    shrink_with(case, |c| fails(c, n_orderings))
}

/// [`shrink`] with an arbitrary failure predicate.
pub fn shrink_with(case: &CaseInput, mut fails: impl FnMut(&CaseInput) -> bool) -> CaseInput {
    let mut best = case.clone();
    if !fails(&best) {
        return best;
    }
    for depth in 1..best.model.num_layers() {
        if let Some(c) = truncate(&best, depth) {
            if fails(&c) {
                best = c;
                break;
            }
        }
    }
    let mut progress = true;
    while progress {
        progress = false;
        for k in 0..best.model.num_layers() {
            let mut unit = 0;
            while unit < best.model.spec.layers[k].out_size() {
                match drop_unit(&best, k, unit) {
                    Some(c) if fails(&c) => {
                        best = c;
                        progress = true;
                    }
                    _ => unit += 1,
                }
            }
        }
        for i in 0..best.input.len() {
            while best.input[i] > 0 {
                let mut c = best.clone();
                c.input[i] -= 1;
                if !fails(&c) {
                    break;
                }
                best = c;
                progress = true;
            }
        }
    }
    best
}

#[derive(Debug, Clone, Default)]
pub struct SuiteSummary {
    pub cases: usize,
    pub basic_cases: usize,
    pub extended_cases: usize,
    pub runs: usize,
    pub alternation_checked: usize,
    pub balance_checked: usize,
    pub failures: Vec<DiffCase>,
}

impl SuiteSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks `cases` generated cases, seeded from `seed`.
pub fn run_suite(cases: usize, n_orderings: usize, seed: u64, limits: &SizeLimits) -> SuiteSummary {
    let seeds = SeedStream::new(seed);
    let mut summary = SuiteSummary::default();
    for i in 0..cases {
        let case = gen_random_case(seeds.derive_indexed("case", i as u64), limits);
        let diff = check_case(&case, n_orderings);
        summary.cases += 1;
        match case.neuron_model() {
            NeuronModel::Basic => summary.basic_cases += 1,
            NeuronModel::Extended => summary.extended_cases += 1,
        }
        summary.runs += diff.accumulators.len();
        summary.alternation_checked += diff.alternation_checked;
        summary.balance_checked += diff.balance_checked;
        if !diff.passed() {
            summary.failures.push(diff);
        }
    }
    summary
}

#[derive(Serialize)]
struct ReportRepr<'a> {
    seed: u64,
    ordering_seeds: &'a [u64],
    input: &'a [i32],
    frame_output: &'a [i32],
    accumulators: &'a [Vec<i32>],
    violations: &'a [Violation],
}

/// Writes `model.json`, `stream.csv` (first ordering) and `report.json` for
/// the minimized case (or the original one if it was not shrunk) into `dir`.
pub fn write_failure(diff: &DiffCase, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let case = diff.shrunk.as_deref().unwrap_or(&diff.case);
    let replay = check_without_shrinking(case, diff.ordering_seeds.len().max(1));
    let stream: EventStream = stream_pixels(&case.input, replay.ordering_seeds[0])?;

    let model_path = dir.join("model.json");
    let stream_path = dir.join("stream.csv");
    let report_path = dir.join("report.json");
    model::save_model(&case.model, &model_path)?;
    fs::write(&stream_path, stream.to_csv()).map_err(|e| Error::io(&stream_path, e))?;
    let report = ReportRepr {
        seed: case.seed,
        ordering_seeds: &replay.ordering_seeds,
        input: &case.input,
        frame_output: &replay.frame_output,
        accumulators: &replay.accumulators,
        violations: &replay.violations,
    };
    let json = serde_json::to_vec_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
    Ok(vec![model_path, stream_path, report_path])
}
