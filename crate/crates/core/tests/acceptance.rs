//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any of them fails.
//!
//! MNIST is read from `COUNTERNET_DATA_DIR`, falling back to `data/mnist` in
//! the workspace root. Without it the training and efficiency criteria fail.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use counternet::arch::parse_arch;
use counternet::data::{binarize, subset_indices, Encoding, Mnist};
use counternet::equivalence::{run_suite, SizeLimits, SuiteSummary, Violation};
use counternet::metrics::{curve_for_model, efficiency_summary, Crossing, EfficiencySummary};
use counternet::train::{
    error_rate, fit, gradient_check, kink_margin, Dataset, Logits, Mat, ShadowLayer, Surrogates,
    TrainConfig,
};
use counternet::{ActivationKind, LayerSpec, Model, NetworkSpec, NeuronModel, SeedStream};

const SEED: u64 = 20240;
const EQUIV_CASES: usize = 1000;
const ORDERINGS: usize = 3;
const DRELU_MAX_ERROR: f64 = 0.03;
const BINARY_MAX_ERROR: f64 = 0.05;
const EFFICIENCY_INPUTS: usize = 1000;
const EARLY_FRACTION: f64 = 0.9;
const GRAD_TOLERANCE: f64 = 1e-4;

type Outcome = Result<String, String>;

struct Board {
    failed: usize,
}

impl Board {
    fn report(&mut self, id: u32, name: &str, outcome: Outcome) {
        match outcome {
            Ok(detail) => println!("PASS  {id}  {name}: {detail}"),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL  {id}  {name}: {detail}");
            }
        }
    }
}

fn equivalence(model: NeuronModel, seed: u64) -> SuiteSummary {
    let limits = SizeLimits {
        model: Some(model),
        ..SizeLimits::default()
    };
    run_suite(EQUIV_CASES, ORDERINGS, seed, &limits)
}

fn count_violations(suites: &[&SuiteSummary], pick: impl Fn(&Violation) -> bool) -> usize {
    suites
        .iter()
        .flat_map(|s| &s.failures)
        .flat_map(|d| &d.violations)
        .filter(|v| pick(v))
        .count()
}

fn data_dir() -> PathBuf {
    match std::env::var_os("COUNTERNET_DATA_DIR") {
        Some(d) => PathBuf::from(d),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}

struct Trained {
    model: Model,
    test_error: f64,
    best_epoch: usize,
    seconds: f64,
}

fn train(spec: &NetworkSpec, config: &TrainConfig, mnist: &Mnist) -> Result<Trained, String> {
    let (tr, va) = mnist.split_validation(55_000);
    let enc = |imgs| Dataset::from_images(imgs, Encoding::Binary).map_err(|e| e.to_string());
    let (train, val, test) = (enc(tr)?, enc(va)?, enc(&mnist.test)?);
    let t0 = Instant::now();
    let report = fit(spec, config, &train, &val, |e| {
        eprintln!(
            "  epoch {:>2}  loss {:.4}  val_error {:.4}",
            e.epoch, e.mean_loss, e.val_error
        )
    })
    .map_err(|e| e.to_string())?;
    Ok(Trained {
        test_error: error_rate(&report.best_model, &test),
        model: report.best_model,
        best_epoch: report.best_epoch,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

fn describe_crossing(c: &Crossing) -> String {
    match c {
        Crossing::Reached {
            events,
            mean_cum_adds,
            ..
        } => {
            format!("{events:.1} input events, {mean_cum_adds:.0} additions")
        }
        Crossing::NotReached { max_fraction } => format!("not reached (max {max_fraction:.3})"),
    }
}

fn efficiency(model: &Model, mnist: &Mnist, seed: u64) -> Result<EfficiencySummary, String> {
    let picks = subset_indices(mnist.test.len(), EFFICIENCY_INPUTS, seed);
    let inputs: Vec<_> = picks
        .iter()
        .map(|&i| (binarize(&mnist.test[i]), Some(mnist.test[i].label)))
        .collect();
    let curves = curve_for_model(model, &inputs, seed).map_err(|e| e.to_string())?;
    Ok(efficiency_summary(&curves))
}

fn random_shadow(spec: &NetworkSpec, rng: &mut ChaCha8Rng, scale: f64) -> Vec<ShadowLayer> {
    // thresholds stay clear of the penalty hinge at zero
    let theta = |rng: &mut ChaCha8Rng| {
        let t: f64 = rng.gen_range(0.05..scale);
        if rng.gen_bool(0.5) {
            t
        } else {
            -t
        }
    };
    spec.layers
        .iter()
        .map(|l| ShadowLayer {
            weights: (0..l.weight_count())
                .map(|_| rng.gen_range(-scale..scale))
                .collect(),
            theta: (0..l.out_size()).map(|_| theta(rng)).collect(),
        })
        .collect()
}

fn toy_gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    // (network, parameter scale, largest input value, sigmoid steepness)
    let nets = [
        (
            NetworkSpec::new(vec![
                LayerSpec::dense(6, 8, ActivationKind::Binary),
                LayerSpec::dense(8, 5, ActivationKind::Binary),
                LayerSpec::dense(5, 3, ActivationKind::Binary),
            ]),
            1.5,
            1,
            0.7,
        ),
        (
            NetworkSpec::new(vec![
                LayerSpec::dense(6, 10, ActivationKind::drelu(4)),
                LayerSpec::dense(10, 4, ActivationKind::drelu(4)),
            ]),
            4.0,
            3,
            1.0,
        ),
        (
            NetworkSpec::new(vec![
                LayerSpec::conv2d([1, 4, 4], 2, 3, ActivationKind::drelu(2))
                    .map_err(|e| e.to_string())?,
                LayerSpec::dense(8, 3, ActivationKind::drelu(2)),
            ]),
            1.5,
            1,
            1.0,
        ),
        (
            NetworkSpec::new(vec![
                LayerSpec::conv2d([1, 4, 4], 2, 3, ActivationKind::Binary)
                    .map_err(|e| e.to_string())?,
                LayerSpec::dense(8, 3, ActivationKind::Binary),
            ]),
            1.5,
            1,
            0.7,
        ),
    ];
    let mut worst = 0.0f64;
    let mut params = 0;
    let mut checks = 0;
    for (spec, scale, max_input, steepness) in nets {
        let spec = spec.map_err(|e| e.to_string())?;
        let n_in = spec.input_size();
        let n_out = spec.num_classes();
        let mut attempts = 0;
        let mut done = 0;
        while done < 4 {
            attempts += 1;
            if attempts > 500 {
                return Err("could not draw a toy batch away from activation kinks".into());
            }
            let shadow = random_shadow(&spec, &mut rng, scale);
            let rows = 4;
            let x = Mat::from_vec(
                rows,
                n_in,
                (0..rows * n_in)
                    .map(|_| rng.gen_range(0..=max_input) as f64)
                    .collect(),
            );
            let labels: Vec<u8> = (0..rows).map(|_| rng.gen_range(0..n_out) as u8).collect();
            if kink_margin(&spec, &shadow, &x, steepness) < 1e-3 {
                continue;
            }
            for logits in [Logits::Activation, Logits::Linear] {
                let sg = Surrogates { steepness, logits };
                let r = gradient_check(&spec, &shadow, &x, &labels, sg, 0.01, 1e-5);
                worst = worst.max(r.max_rel_error);
                params += r.checked;
                checks += 1;
            }
            done += 1;
        }
    }
    let detail =
        format!("{checks} checks over {params} parameters, max relative error {worst:.2e}");
    if worst < GRAD_TOLERANCE {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let mut board = Board { failed: 0 };
    let seeds = SeedStream::new(SEED);
    println!("acceptance seed: {SEED}");

    let t0 = Instant::now();
    let basic = equivalence(NeuronModel::Basic, seeds.derive("equiv-basic"));
    let extended = equivalence(NeuronModel::Extended, seeds.derive("equiv-extended"));
    eprintln!("equivalence: {:.1}s", t0.elapsed().as_secs_f64());
    let both = [&basic, &extended];

    let failures: Vec<u64> = both
        .iter()
        .flat_map(|s| &s.failures)
        .map(|d| d.case.seed)
        .collect();
    let runs = basic.runs + extended.runs;
    board.report(
        1,
        "event runtime equals frame forward on random networks",
        if failures.is_empty() && basic.cases == EQUIV_CASES && extended.cases == EQUIV_CASES {
            Ok(format!(
                "{} basic + {} extended cases, {runs} orderings",
                basic.cases, extended.cases
            ))
        } else {
            Err(format!(
                "{} failing cases, seeds {:?}",
                failures.len(),
                &failures[..failures.len().min(10)]
            ))
        },
    );

    let alt = count_violations(&both, |v| matches!(v, Violation::Alternation { .. }));
    board.report(
        2,
        "basic neurons alternate emission signs",
        if alt == 0 && basic.alternation_checked > 0 {
            Ok(format!(
                "{} emission pairs checked",
                basic.alternation_checked
            ))
        } else {
            Err(format!(
                "{alt} violations, {} pairs checked",
                basic.alternation_checked
            ))
        },
    );

    let bal = count_violations(&both, |v| {
        matches!(v, Violation::Balance { .. } | Violation::Activation { .. })
    });
    board.report(
        3,
        "extended neuron balance equals signed emissions and the layer output",
        if bal == 0 && extended.balance_checked > 0 {
            Ok(format!("{} neurons checked", extended.balance_checked))
        } else {
            Err(format!(
                "{bal} violations, {} neurons checked",
                extended.balance_checked
            ))
        },
    );

    let dir = data_dir();
    let mnist =
        Mnist::load_dir(&dir).map_err(|e| format!("MNIST not available at {}: {e}", dir.display()));

    let drelu_config = TrainConfig {
        learning_rate: 0.05,
        init_gain: 1.5,
        max_epochs: 25,
        patience: 10,
        ..TrainConfig::default()
    };
    let binary_config = TrainConfig {
        learning_rate: 0.02,
        sigmoid_steepness: 0.05,
        max_epochs: 25,
        patience: 10,
        ..TrainConfig::default()
    };
    let trained = mnist.as_ref().map_err(Clone::clone).and_then(|m| {
        let arch = "784-300-100-10";
        let spec_d = parse_arch(arch, ActivationKind::drelu(64)).map_err(|e| e.to_string())?;
        let spec_b = parse_arch(arch, ActivationKind::Binary).map_err(|e| e.to_string())?;
        eprintln!("training discretized-ReLU network");
        let d = train(&spec_d, &drelu_config, m)?;
        eprintln!("training binary network");
        let b = train(&spec_b, &binary_config, m)?;
        let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
        for (name, t) in [
            ("acceptance-drelu.json", &d),
            ("acceptance-binary.json", &b),
        ] {
            counternet::save_model(&t.model, out.join(name)).map_err(|e| e.to_string())?;
        }
        Ok((d, b))
    });

    board.report(
        4,
        "MNIST test error after training",
        trained.as_ref().map_err(Clone::clone).and_then(|(d, b)| {
            let detail = format!(
                "discretized ReLU {:.2}% (<= {:.0}%, epoch {}, {:.0}s), binary {:.2}% (<= {:.0}%, epoch {}, {:.0}s)",
                100.0 * d.test_error,
                100.0 * DRELU_MAX_ERROR,
                d.best_epoch,
                d.seconds,
                100.0 * b.test_error,
                100.0 * BINARY_MAX_ERROR,
                b.best_epoch,
                b.seconds
            );
            if d.test_error <= DRELU_MAX_ERROR && b.test_error <= BINARY_MAX_ERROR {
                Ok(detail)
            } else {
                Err(detail)
            }
        }),
    );

    let summaries = trained.as_ref().map_err(Clone::clone).and_then(|(d, b)| {
        let m = mnist.as_ref().map_err(Clone::clone)?;
        let seed = seeds.derive("efficiency");
        Ok((
            efficiency(&d.model, m, seed)?,
            efficiency(&b.model, m, seed)?,
        ))
    });

    board.report(
        5,
        "extended network decides before its input is exhausted",
        summaries.as_ref().map_err(Clone::clone).and_then(|(ext, _)| {
            let detail = format!(
                "readout final before last event for {:.1}%, frame match at end {:.3}, 99% frame match at {}",
                100.0 * ext.early_prediction_fraction,
                ext.terminal_fraction,
                describe_crossing(&ext.crossing_99)
            );
            if ext.early_prediction_fraction >= EARLY_FRACTION && ext.terminal_fraction == 1.0 {
                Ok(detail)
            } else {
                Err(detail)
            }
        }),
    );

    board.report(
        6,
        "per-event cost falls for basic and rises for extended neurons",
        summaries
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|(ext, bas)| {
                let (Some(e), Some(b)) = (ext.quartile_means, bas.quartile_means) else {
                    return Err("streams too short for quartiles".into());
                };
                let detail = format!(
                    "basic {:.0} -> {:.0}, extended {:.0} -> {:.0} additions per event",
                    b[0], b[3], e[0], e[3]
                );
                if b[0] > b[3] && e[0] < e[3] {
                    Ok(detail)
                } else {
                    Err(detail)
                }
            }),
    );

    board.report(
        7,
        "extended network reaches 99% frame agreement with fewer additions",
        summaries
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|(ext, bas)| {
                let detail = format!(
                    "extended {}, basic {}",
                    describe_crossing(&ext.crossing_99),
                    describe_crossing(&bas.crossing_99)
                );
                match (
                    ext.crossing_99.mean_cum_adds(),
                    bas.crossing_99.mean_cum_adds(),
                ) {
                    (Some(e), Some(b)) if e < b => Ok(detail),
                    _ => Err(detail),
                }
            }),
    );

    board.report(
        8,
        "event runtime performs no multiplications",
        summaries
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|(ext, bas)| {
                let m = ext.multiplications + bas.multiplications;
                let detail = format!(
                    "{m} multiplications over {} streamed inputs",
                    ext.inputs + bas.inputs
                );
                if m == 0 {
                    Ok(detail)
                } else {
                    Err(detail)
                }
            }),
    );

    board.report(
        9,
        "surrogate gradients match finite differences",
        toy_gradient_checks(),
    );

    if board.failed == 0 {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{} criteria failed", board.failed);
        ExitCode::FAILURE
    }
}
