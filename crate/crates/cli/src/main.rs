use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use counternet::arch::parse_arch;
use counternet::data::{stream_pixels, subset_indices, Encoding, EventStream, LabeledImage, Mnist};
use counternet::equivalence::{run_suite, write_failure, SizeLimits};
use counternet::event::{readout, write_trace_csv, NeuronModel, RunOptions, Runtime};
use counternet::metrics::{curve_for_model, efficiency_summary, Crossing};
use counternet::model::{from_bytes, to_bytes};
use counternet::train::{self, fit, Dataset, Logits, StopReason, TrainConfig};
use counternet::{frame, load_model, save_model, ActivationKind, Model, Network, SeedStream};

/// Integer-only counter-neuron networks: train, evaluate and run them
/// event by event.
#[derive(Parser)]
#[command(name = "counternet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on MNIST and write the model and trainer checkpoint.
    Train(TrainArgs),
    /// Frame-based test error of a model.
    Eval(EvalArgs),
    /// Stream one input through the event-driven network.
    Stream(StreamArgs),
    /// Classification and operation-count curves over a test subset.
    Bench(BenchArgs),
    /// Differential test of event-driven against frame-based execution.
    Equiv(EquivArgs),
    /// Re-serialize a model file.
    Export(ExportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the four MNIST IDX files.
    #[arg(long, env = "COUNTERNET_DATA_DIR", default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Input encoding: `binary` or `levels:N`.
    #[arg(long, default_value = "binary", value_parser = parse_encoding)]
    encoding: Encoding,
}

impl DataArgs {
    fn load(&self) -> Result<Mnist> {
        Mnist::load_dir(&self.data_dir)
            .with_context(|| format!("loading MNIST from {}", self.data_dir.display()))
    }
}

fn parse_encoding(s: &str) -> Result<Encoding, String> {
    match s {
        "binary" => Ok(Encoding::Binary),
        _ => {
            let levels = s
                .strip_prefix("levels:")
                .and_then(|n| n.parse::<u32>().ok())
                .filter(|&n| n >= 2)
                .ok_or_else(|| format!("expected `binary` or `levels:N` with N >= 2, got {s:?}"))?;
            Ok(Encoding::Levels(levels))
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Binary,
    Drelu,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogitsArg {
    Linear,
    Activation,
}

#[derive(Args)]
struct TrainArgs {
    /// Architecture, e.g. `784-300-100-10` or `784-12c5-12c7-10`.
    #[arg(long)]
    arch: String,
    #[arg(long, value_enum, default_value = "drelu")]
    activation: ActivationArg,
    /// Step size of the discretized ReLU.
    #[arg(long, default_value_t = 64)]
    lambda: u32,
    /// Defaults to 0.01 for convolutional and 0.005 for dense networks.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 200)]
    batch: usize,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    /// Stop once the validation error is at or below this fraction.
    #[arg(long)]
    target_error: Option<f64>,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Sigmoid surrogate steepness for binary activations.
    #[arg(long, default_value_t = 1.0)]
    steepness: f64,
    /// Multiplier on the initial weight range.
    #[arg(long, default_value_t = 1.0)]
    init_gain: f64,
    #[arg(long, value_enum, default_value = "linear")]
    logits: LogitsArg,
    #[arg(long, default_value_t = 1e-3)]
    bias_penalty: f64,
    /// Training images taken from the start of the training set; the rest
    /// is the validation set.
    #[arg(long, default_value_t = 55_000)]
    train_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Trainer checkpoint path; defaults to the model path with a
    /// `.ckpt.json` extension.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Evaluate on the first N test images only.
    #[arg(long)]
    limit: Option<usize>,
    /// Exit with status 2 if the error exceeds this fraction.
    #[arg(long)]
    target: Option<f64>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test-set image to stream.
    #[arg(long, conflicts_with = "stream", required_unless_present = "stream")]
    index: Option<usize>,
    /// Event stream CSV to replay instead of a test image.
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the event trace (timestep, layer, unit, sign) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the readout after every input event here.
    #[arg(long)]
    timeline: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// One or more models; each gets its own curves and summary.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Use the whole test set.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Average this many consecutive event indices per CSV row.
    #[arg(long, default_value_t = 1)]
    bin: usize,
    #[arg(long, default_value = "bench-out")]
    out_dir: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum NeuronArg {
    Basic,
    Extended,
    Both,
}

#[derive(Args)]
struct EquivArgs {
    #[arg(long, default_value_t = 1000)]
    cases: usize,
    #[arg(long, default_value_t = 3)]
    orderings: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    neurons: NeuronArg,
    #[arg(long, default_value_t = 4)]
    max_layers: usize,
    #[arg(long, default_value_t = 32)]
    max_width: usize,
    /// Failing cases are written here as model + stream files.
    #[arg(long, default_value = "equiv-failures")]
    report_dir: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Model file to re-serialize.
    #[arg(
        long,
        conflicts_with = "checkpoint",
        required_unless_present = "checkpoint"
    )]
    model: Option<PathBuf>,
    /// Extract the model from a trainer checkpoint instead.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

enum Outcome {
    Success,
    CheckFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Stream(a) => cmd_stream(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Equiv(a) => cmd_equiv(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn activation(kind: ActivationArg, lambda: u32) -> Result<ActivationKind> {
    Ok(match kind {
        ActivationArg::Binary => ActivationKind::Binary,
        ActivationArg::Drelu => {
            if lambda == 0 {
                bail!("--lambda must be at least 1");
            }
            ActivationKind::drelu(lambda)
        }
    })
}

fn neuron_model(model: &Model) -> Result<NeuronModel> {
    model
        .spec
        .uniform_activation()
        .map(NeuronModel::of)
        .ok_or_else(|| anyhow!("the network mixes activation kinds"))
}

fn checkpoint_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.ckpt.json"))
}

fn cmd_train(a: TrainArgs) -> Result<Outcome> {
    let spec = parse_arch(&a.arch, activation(a.activation, a.lambda)?)?;
    let defaults = TrainConfig::for_spec(&spec);
    let config = TrainConfig {
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        batch_size: a.batch,
        max_epochs: a.epochs,
        target_val_error: a.target_error,
        patience: a.patience,
        sigmoid_steepness: a.steepness,
        init_gain: a.init_gain,
        logits: match a.logits {
            LogitsArg::Linear => Logits::Linear,
            LogitsArg::Activation => Logits::Activation,
        },
        bias_penalty_weight: a.bias_penalty,
        seed: a.seed,
        ..defaults
    };
    config.validate()?;
    let mnist = a.data.load()?;
    let (train_images, val_images) = mnist.split_validation(a.train_size);
    let train_set = Dataset::from_images(train_images, a.data.encoding)?;
    let val_set = Dataset::from_images(val_images, a.data.encoding)?;
    println!(
        "seed: {}  arch: {}  train: {}  val: {}  lr: {}",
        config.seed,
        a.arch,
        train_set.len(),
        val_set.len(),
        config.learning_rate
    );

    let started = Instant::now();
    let report = fit(&spec, &config, &train_set, &val_set, |e| {
        println!(
            "epoch {:>3}  loss {:.4}  train_error {:.4}  val_error {:.4}  ({:.0}s)",
            e.epoch,
            e.mean_loss,
            e.train_error,
            e.val_error,
            started.elapsed().as_secs_f64()
        );
    })?;
    let stop = match report.stop {
        StopReason::TargetReached => "target reached",
        StopReason::EpochCap => "epoch cap",
        StopReason::Diverged => "no improvement within patience",
    };
    let test_set = Dataset::from_images(&mnist.test, a.data.encoding)?;
    let test_error = train::error_rate(&report.best_model, &test_set);

    save_model(&report.best_model, &a.out)?;
    let ckpt = a.checkpoint.unwrap_or_else(|| checkpoint_path(&a.out));
    train::save_checkpoint(&report.best_checkpoint, &ckpt)?;
    println!(
        "stopped: {stop}; best epoch {} val_error {:.4} test_error {:.4}",
        report.best_epoch, report.best_val_error, test_error
    );
    println!("wrote {} and {}", a.out.display(), ckpt.display());
    Ok(Outcome::Success)
}

fn cmd_eval(a: EvalArgs) -> Result<Outcome> {
    let model = load_model(&a.model)?;
    let mnist = a.data.load()?;
    let images = &mnist.test[..a.limit.unwrap_or(mnist.test.len()).min(mnist.test.len())];
    let data = Dataset::from_images(images, a.data.encoding)?;
    if data.input_size != model.spec.input_size() {
        bail!(
            "model expects {} inputs, images have {}",
            model.spec.input_size(),
            data.input_size
        );
    }
    let predictions = train::predict_batch(&model, &data);
    let wrong = predictions
        .iter()
        .zip(&data.labels)
        .filter(|(&p, &l)| p != l as usize)
        .count();
    let error = wrong as f64 / data.len().max(1) as f64;
    println!(
        "test error: {error:.4} ({wrong} of {} misclassified)",
        data.len()
    );
    if let Some(target) = a.target {
        if error > target {
            println!("FAIL: error above target {target}");
            return Ok(Outcome::CheckFailed);
        }
        println!("PASS: error within target {target}");
    }
    Ok(Outcome::Success)
}

fn load_input(data: &DataArgs, index: usize) -> Result<(LabeledImage, Vec<i32>)> {
    let mnist = data.load()?;
    let image = mnist.test.get(index).cloned().ok_or_else(|| {
        anyhow!(
            "index {index} out of range: the test set has {} images",
            mnist.test.len()
        )
    })?;
    let encoded = data.encoding.encode(&image)?;
    Ok((image, encoded))
}

fn cmd_stream(a: StreamArgs) -> Result<Outcome> {
    let model = load_model(&a.model)?;
    let neurons = neuron_model(&model)?;
    let (stream, encoded, label) = match (&a.stream, a.index) {
        (Some(path), _) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let stream = EventStream::from_csv(&text)?;
            let mut encoded = vec![0i32; stream.input_size];
            for e in &stream.events {
                *encoded
                    .get_mut(e.unit as usize)
                    .ok_or_else(|| anyhow!("event unit {} out of range", e.unit))? += e.sign as i32;
            }
            (stream, encoded, None)
        }
        (None, Some(index)) => {
            let (image, encoded) = load_input(&a.data, index)?;
            let order = SeedStream::new(a.seed).derive_indexed("order", index as u64);
            (stream_pixels(&encoded, order)?, encoded, Some(image.label))
        }
        (None, None) => bail!("either --index or --stream is required"),
    };
    if stream.input_size != model.spec.input_size() {
        bail!(
            "model expects {} inputs, stream has {}",
            model.spec.input_size(),
            stream.input_size
        );
    }
    stream.validate()?;
    let record = frame::forward(&model, &encoded)?;
    let predicted = frame::predict_from_record(&model, &record);

    let net = Network::new(model.clone());
    let mut rt = Runtime::new(
        &net,
        RunOptions {
            trace: a.trace.is_some(),
        },
    );
    let mut timeline = vec![readout(rt.accumulators())];
    for group in stream.groups() {
        rt.feed(group);
        timeline.push(readout(rt.accumulators()));
    }
    let out = rt.finish();
    let n = timeline.len() - 1;
    let target = label.map_or(predicted, |l| l as usize);
    let stable_from = timeline
        .iter()
        .rposition(|&r| r != Some(target))
        .map_or(Some(0), |i| (i < n).then_some(i + 1));

    println!("seed: {}  model: {:?}  events: {n}", a.seed, neurons);
    if let Some(l) = label {
        println!("label: {l}");
    }
    println!("frame prediction: {predicted}");
    println!("frame output: {:?}", record.output());
    println!("accumulators: {:?}", out.accumulators);
    println!(
        "readout: {}",
        readout(&out.accumulators).map_or("undecided".to_string(), |c| c.to_string())
    );
    let what = if label.is_some() {
        "correct"
    } else {
        "equal to the frame prediction"
    };
    match stable_from {
        Some(k) => println!("readout {what} from event {k} of {n}"),
        None => println!("readout never settles {what}"),
    }
    println!(
        "additions: {}  comparisons: {}  network events: {}  multiplications: {}",
        out.ledger.additions,
        out.ledger.comparisons,
        out.ledger.events_emitted,
        out.ledger.multiplications
    );
    if let Some(path) = &a.timeline {
        let mut w = BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        writeln!(w, "k,readout")?;
        for (k, r) in timeline.iter().enumerate() {
            let r = r.map_or("undecided".to_string(), |c| c.to_string());
            writeln!(w, "{k},{r}")?;
        }
        w.flush()?;
    }
    if let (Some(path), Some(rows)) = (&a.trace, &out.trace) {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        write_trace_csv(rows, &mut w)?;
        w.flush()?;
        println!("wrote trace {}", path.display());
    }
    Ok(Outcome::Success)
}

fn describe(c: &Crossing) -> String {
    match c {
        Crossing::Reached {
            events,
            mean_cum_adds,
            mean_cum_network_events,
        } => format!(
            "after {events:.1} input events, {mean_cum_adds:.0} additions, {mean_cum_network_events:.0} network events"
        ),
        Crossing::NotReached { max_fraction } => format!("not reached (max {max_fraction:.4})"),
    }
}

fn cmd_bench(a: BenchArgs) -> Result<Outcome> {
    let mnist = a.data.load()?;
    let total = mnist.test.len();
    let indices = if a.full {
        (0..total).collect()
    } else {
        subset_indices(total, a.count, SeedStream::new(a.seed).derive("subset"))
    };
    let inputs = indices
        .iter()
        .map(|&i| {
            Ok((
                a.data.encoding.encode(&mnist.test[i])?,
                Some(mnist.test[i].label),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    println!("seed: {}  inputs: {}", a.seed, inputs.len());

    let mut failed = false;
    for path in &a.model {
        let model = load_model(path)?;
        let started = Instant::now();
        let curves = curve_for_model(&model, &inputs, a.seed)?;
        let elapsed = started.elapsed().as_secs_f64();
        let summary = efficiency_summary(&curves);
        let stem = path
            .file_stem()
            .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
        let csv = a.out_dir.join(format!("{stem}.curves.csv"));
        let mut w = BufWriter::new(
            File::create(&csv).with_context(|| format!("creating {}", csv.display()))?,
        );
        curves.write_csv(&mut w, a.bin)?;
        w.flush()?;
        let json = a.out_dir.join(format!("{stem}.summary.json"));
        let mut doc = serde_json::to_value(&summary)?;
        doc["wall_clock_seconds"] = serde_json::json!(elapsed);
        fs::write(&json, serde_json::to_vec_pretty(&doc)?)
            .with_context(|| format!("writing {}", json.display()))?;

        println!("{} ({:?} neurons)", path.display(), summary.model);
        for (t, c) in &summary.thresholds {
            println!("  {:>5.1}% frame match {}", t * 100.0, describe(c));
        }
        println!("  terminal fraction: {}", summary.terminal_fraction);
        println!(
            "  settled before the last event: {:.4} (readout), {:.4} (full output)",
            summary.early_prediction_fraction, summary.early_frame_fraction
        );
        if let Some(q) = summary.quartile_means {
            println!(
                "  additions per event by stream quartile: {:.1} {:.1} {:.1} {:.1}",
                q[0], q[1], q[2], q[3]
            );
        }
        println!(
            "  mean total additions: {:.0}  multiplications: {}",
            summary.mean_total_adds, summary.multiplications
        );
        println!(
            "  wall clock: {elapsed:.2}s; wrote {} and {}",
            csv.display(),
            json.display()
        );
        failed |= summary.terminal_fraction != 1.0 || summary.multiplications != 0;
    }
    Ok(if failed {
        Outcome::CheckFailed
    } else {
        Outcome::Success
    })
}

fn cmd_equiv(a: EquivArgs) -> Result<Outcome> {
    if a.orderings == 0 || a.max_layers < 2 || a.max_width == 0 {
        bail!("--orderings and --max-width must be positive and --max-layers at least 2");
    }
    let limits = SizeLimits {
        max_layers: a.max_layers,
        max_width: a.max_width,
        model: match a.neurons {
            NeuronArg::Basic => Some(NeuronModel::Basic),
            NeuronArg::Extended => Some(NeuronModel::Extended),
            NeuronArg::Both => None,
        },
        ..Default::default()
    };
    let started = Instant::now();
    let summary = run_suite(a.cases, a.orderings, a.seed, &limits);
    println!(
        "seed: {}  cases: {} ({} basic, {} extended)  runs: {}  ({:.1}s)",
        a.seed,
        summary.cases,
        summary.basic_cases,
        summary.extended_cases,
        summary.runs,
        started.elapsed().as_secs_f64()
    );
    println!(
        "neurons checked: {} for sign alternation, {} for balance",
        summary.alternation_checked, summary.balance_checked
    );
    if summary.passed() {
        println!("PASS: all accumulators equal the frame outputs");
        return Ok(Outcome::Success);
    }
    for diff in &summary.failures {
        let dir = a.report_dir.join(format!("case-{}", diff.case.seed));
        write_failure(diff, &dir)?;
        println!(
            "FAIL: case {} ({} violations), report in {}",
            diff.case.seed,
            diff.violations.len(),
            dir.display()
        );
    }
    Ok(Outcome::CheckFailed)
}

fn cmd_export(a: ExportArgs) -> Result<Outcome> {
    let model = match (&a.model, &a.checkpoint) {
        (Some(path), _) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            from_bytes(&bytes)?
        }
        (None, Some(path)) => train::load_checkpoint(path)?.model(),
        (None, None) => bail!("either --model or --checkpoint is required"),
    };
    let bytes = to_bytes(&model)?;
    fs::write(&a.out, &bytes).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} ({} bytes)", a.out.display(), bytes.len());
    Ok(Outcome::Success)
}
