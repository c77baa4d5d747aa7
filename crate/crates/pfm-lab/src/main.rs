//! Experiment command line: dataset generation, training, parameter
//! counting, property checks, a small CPU benchmark, and filter export.
//!
//! Exit codes: 0 success, 1 check or runtime failure, 2 usage error.

use pfm_core::analysis::{
    complementary_response_violations, relu_independence_check, representability_check,
    switch_property_check,
};
use pfm_core::autodiff::{self, Mode, Var};
use pfm_core::dashes::{oracle_accuracy, oracle_classify, DashDataset, SCORE_PER_DASH};
use pfm_core::filters::{
    make_edge_line_bank, make_random_bank, make_translating_bank, parse_bank_selector,
    select_subset, spanned_dimensions, FilterBank, KernelTag, SubsetSpec,
};
use pfm_core::models::{
    build_counting_graph, build_mini_pfnet, build_toy, CountArch, MiniNetConfig, Model, ModelSpec,
    ToyVariant,
};
use pfm_core::pfm::{PfmConfig, PfmLayer};
use pfm_core::rng::Rng;
use pfm_core::tensor::Tensor;
use pfm_core::train::{kaiming_init, train, TrainConfig};
use pfm_lab::config::KeyValues;
use pfm_lab::{checkpoint, metrics, odcd};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::rc::Rc;
use std::time::Instant;

enum CliError {
    Usage(String),
    Runtime(String),
}

type CliResult = Result<u8, CliError>;

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

const USAGE: &str = "\
pfm-lab: pre-defined filter module experiments

usage: pfm-lab <subcommand> [flags]

subcommands:
  gen-dashes      --out FILE [--seed N] [--count N]
  train           --model toy-pfm|toy-cnn|toy-pfm-norelu|mini-pfnet
                  --data FILE --out DIR
                  [--bank edge_line9|edge_line18|random:<seed>|translating|subset:<name>]
                  [--no-relu] [--trainable-filters] [--test-data FILE]
                  [--epochs N] [--lr X] [--momentum X] [--weight-decay X]
                  [--batch-size N] [--lr-step N] [--lr-gamma X] [--seed N]
                  [--width N] [--config FILE]
  count-params    --arch resnet18|pfnet18 [--bank-size N] [--classes N]
  check           (runs the property suite; nonzero exit on failure)
  bench           [--shape N,C,H,W] [--filters N] [--reps N]
  export-filters  --bank <selector> [--out FILE]

The PFM_LAB_THREADS environment variable caps worker threads (default 1;
the current implementation always runs single-threaded for bit-exact
output).";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `pfm-lab help` for usage");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(args: &[String]) -> CliResult {
    if let Some(threads) = std::env::var_os("PFM_LAB_THREADS") {
        let text = threads.to_string_lossy();
        match text.parse::<usize>() {
            Ok(n) if n >= 1 => {}
            _ => {
                return usage(format!(
                    "PFM_LAB_THREADS must be a positive integer, got '{text}'"
                ))
            }
        }
    }
    let Some(subcommand) = args.first() else {
        println!("{USAGE}");
        return Err(CliError::Usage("missing subcommand".into()));
    };
    let rest = &args[1..];
    match subcommand.as_str() {
        "gen-dashes" => cmd_gen_dashes(rest),
        "train" => cmd_train(rest),
        "count-params" => cmd_count_params(rest),
        "check" => cmd_check(rest),
        "bench" => cmd_bench(rest),
        "export-filters" => cmd_export_filters(rest),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(0)
        }
        other => usage(format!("unknown subcommand '{other}'")),
    }
}

/// Collects `--key value` and bare `--switch` flags into a key=value map.
fn parse_flags(
    args: &[String],
    value_keys: &[&str],
    bool_keys: &[&str],
) -> Result<KeyValues, CliError> {
    let mut kv = KeyValues::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(key) = arg.strip_prefix("--") else {
            return usage(format!("unexpected argument '{arg}'"));
        };
        if bool_keys.contains(&key) {
            kv.set(key, "true");
            i += 1;
        } else if value_keys.contains(&key) {
            let Some(value) = args.get(i + 1) else {
                return usage(format!("flag --{key} needs a value"));
            };
            kv.set(key, value);
            i += 2;
        } else {
            return usage(format!("unknown flag --{key}"));
        }
    }
    Ok(kv)
}

fn get_parsed<T: std::str::FromStr>(kv: &KeyValues, key: &str, default: T) -> Result<T, CliError> {
    match kv.get(key) {
        None => Ok(default),
        Some(text) => text
            .parse()
            .map_err(|_| CliError::Usage(format!("bad value '{text}' for --{key}"))),
    }
}

fn get_required<'a>(kv: &'a KeyValues, key: &str) -> Result<&'a str, CliError> {
    kv.get(key)
        .ok_or_else(|| CliError::Usage(format!("missing required flag --{key}")))
}

fn get_bool(kv: &KeyValues, key: &str) -> Result<bool, CliError> {
    match kv.get(key) {
        None => Ok(false),
        Some("true") | Some("1") => Ok(true),
        Some("false") | Some("0") => Ok(false),
        Some(other) => usage(format!("bad boolean '{other}' for {key}")),
    }
}

fn cmd_gen_dashes(args: &[String]) -> CliResult {
    let kv = parse_flags(args, &["seed", "count", "out"], &[])?;
    let seed: u64 = get_parsed(&kv, "seed", 7)?;
    let count: usize = get_parsed(&kv, "count", 1024)?;
    if count == 0 {
        return usage("--count must be at least 1");
    }
    let out = PathBuf::from(get_required(&kv, "out")?);
    let dataset = DashDataset::generate(seed, count);
    odcd::write_files(&dataset, &out).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "wrote {count} images (seed {seed}) to {} (+ manifest)",
        out.display()
    );
    Ok(0)
}

const TRAIN_VALUE_KEYS: &[&str] = &[
    "model",
    "bank",
    "data",
    "test-data",
    "epochs",
    "lr",
    "momentum",
    "weight-decay",
    "batch-size",
    "lr-step",
    "lr-gamma",
    "seed",
    "width",
    "out",
    "config",
];
const TRAIN_BOOL_KEYS: &[&str] = &["no-relu", "trainable-filters"];

fn cmd_train(args: &[String]) -> CliResult {
    let flags = parse_flags(args, TRAIN_VALUE_KEYS, TRAIN_BOOL_KEYS)?;

    // A config file provides the base values; flags win.
    let mut resolved = match flags.get("config") {
        Some(path) => {
            let base = KeyValues::from_file(Path::new(path)).map_err(CliError::Usage)?;
            for key in base.keys() {
                let k = key.as_str();
                if !TRAIN_VALUE_KEYS.contains(&k) && !TRAIN_BOOL_KEYS.contains(&k) {
                    return usage(format!("unknown key '{k}' in config file"));
                }
            }
            base.merged_with(&flags)
        }
        None => flags.clone(),
    };

    let model_name = get_required(&resolved, "model")?.to_string();
    let bank_selector = resolved.get("bank").unwrap_or("edge_line9").to_string();
    // The bank selector is validated regardless of the model variant.
    let bank = parse_bank_selector(&bank_selector).map_err(|e| CliError::Usage(e.to_string()))?;
    let data_path = PathBuf::from(get_required(&resolved, "data")?);
    let out_dir = PathBuf::from(get_required(&resolved, "out")?);
    let epochs: usize = get_parsed(&resolved, "epochs", 50)?;
    let lr: f64 = get_parsed(&resolved, "lr", 0.05)?;
    let momentum: f64 = get_parsed(&resolved, "momentum", 0.9)?;
    let weight_decay: f64 = get_parsed(&resolved, "weight-decay", 1e-4)?;
    let batch_size: usize = get_parsed(&resolved, "batch-size", 64)?;
    let lr_step: usize = get_parsed(&resolved, "lr-step", 30)?;
    let lr_gamma: f64 = get_parsed(&resolved, "lr-gamma", 0.1)?;
    let seed: u64 = get_parsed(&resolved, "seed", 0)?;
    let width: usize = get_parsed(&resolved, "width", 8)?;
    let no_relu = get_bool(&resolved, "no-relu")?;
    let trainable_filters = get_bool(&resolved, "trainable-filters")?;

    let spec: ModelSpec = match model_name.as_str() {
        "toy-pfm" => build_toy(ToyVariant::Pfm),
        "toy-cnn" => build_toy(ToyVariant::Cnn),
        "toy-pfm-norelu" => build_toy(ToyVariant::PfmNoRelu),
        "mini-pfnet" => build_mini_pfnet(&MiniNetConfig {
            bank: Rc::new(bank),
            classes: 2,
            width,
            use_relu: !no_relu,
            filters_trainable: trainable_filters,
        })
        .map_err(|e| CliError::Usage(e.to_string()))?,
        other => return usage(format!("unknown model '{other}'")),
    };

    let cfg = TrainConfig {
        lr0: lr,
        momentum,
        weight_decay,
        epochs,
        lr_step,
        lr_gamma,
        batch_size,
        seed,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    // Echo the fully resolved configuration so the run can be reproduced
    // from the written file alone.
    for (key, value) in [
        ("model", model_name.clone()),
        ("bank", bank_selector),
        ("data", data_path.display().to_string()),
        ("out", out_dir.display().to_string()),
        ("epochs", epochs.to_string()),
        ("lr", lr.to_string()),
        ("momentum", momentum.to_string()),
        ("weight-decay", weight_decay.to_string()),
        ("batch-size", batch_size.to_string()),
        ("lr-step", lr_step.to_string()),
        ("lr-gamma", lr_gamma.to_string()),
        ("seed", seed.to_string()),
        ("width", width.to_string()),
        ("no-relu", no_relu.to_string()),
        ("trainable-filters", trainable_filters.to_string()),
    ] {
        resolved.set(key, value);
    }
    // The echoed file stands on its own; a stale pointer to the file it was
    // merged from would be misleading.
    resolved.remove("config");
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    resolved
        .write_to(&out_dir.join("config.txt"))
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let dataset = odcd::read_file(&data_path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let test_dataset = match resolved.get("test-data") {
        Some(path) => {
            Some(odcd::read_file(Path::new(path)).map_err(|e| CliError::Runtime(e.to_string()))?)
        }
        None => None,
    };

    let mut model = Model::instantiate(&spec).map_err(|e| CliError::Runtime(e.to_string()))?;
    kaiming_init(&model, seed);
    println!(
        "training {} ({} trainable parameters) on {} images",
        model.name(),
        model.trainable_count(),
        dataset.len()
    );
    let records = train(&mut model, &dataset, test_dataset.as_ref(), &cfg)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    metrics::append_and_echo(&out_dir.join("metrics.tsv"), &records)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    checkpoint::save(&model, &out_dir.join("model.pfmckpt"))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "wrote metrics.tsv, model.pfmckpt, config.txt to {}",
        out_dir.display()
    );
    Ok(0)
}

fn cmd_count_params(args: &[String]) -> CliResult {
    let kv = parse_flags(args, &["arch", "bank-size", "classes"], &[])?;
    let arch: CountArch = get_required(&kv, "arch")?
        .parse()
        .map_err(|e: pfm_core::Error| CliError::Usage(e.to_string()))?;
    let default_bank = match arch {
        CountArch::ResNet18 => 0,
        CountArch::PfNet18 => 9,
    };
    let bank_size: usize = get_parsed(&kv, "bank-size", default_bank)?;
    let classes: usize = get_parsed(&kv, "classes", 200)?;
    let spec = build_counting_graph(arch, bank_size, classes)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    println!("# model: {}", spec.name);
    println!("position\tkind\tcount");
    for group in spec.param_breakdown() {
        println!("{}\t{}\t{}", group.position, group.kind, group.count);
    }
    println!("total\t-\t{}", spec.trainable_count());
    Ok(0)
}

fn cmd_check(args: &[String]) -> CliResult {
    if !args.is_empty() {
        return usage("check takes no flags");
    }
    let mut failed = 0usize;
    let mut run = |name: &str, outcome: Result<(), String>| match outcome {
        Ok(()) => println!("check {name}: pass"),
        Err(detail) => {
            failed += 1;
            println!("check {name}: FAIL ({detail})");
        }
    };

    let bank18 = make_edge_line_bank(18).expect("builtin bank");
    let bank9 = make_edge_line_bank(9).expect("builtin bank");

    run("edge-line-normalization", {
        let mut out = Ok(());
        for k in bank18.kernels() {
            if matches!(k.tag(), KernelTag::Edge | KernelTag::Line) {
                let sum: f64 = k.values().iter().sum();
                let l1: f64 = k.values().iter().map(|v| v.abs()).sum();
                if sum.abs() > 1e-12 || (l1 - 1.0).abs() > 1e-12 {
                    out = Err(format!("kernel {}: sum {sum:e}, L1 {l1}", k.index()));
                    break;
                }
            }
        }
        out
    });

    run("sign-pairing", {
        let mut out = Ok(());
        'outer: for i in 1..=9 {
            for j in 0..9 {
                if bank18.kernel(i).values()[j] + bank18.kernel(i + 9).values()[j] != 0.0 {
                    out = Err(format!("kernels {i} and {} are not negatives", i + 9));
                    break 'outer;
                }
            }
        }
        out
    });

    run("spanned-dimensions", {
        let minus_lowpass = FilterBank::custom(bank9.kernels()[..8].to_vec());
        let rank4 = select_subset(&bank18, SubsetSpec::Rank4).expect("subset");
        let observed = [
            spanned_dimensions(&bank9),
            spanned_dimensions(&minus_lowpass),
            spanned_dimensions(&rank4),
            spanned_dimensions(&make_translating_bank()),
        ];
        if observed == [9, 8, 4, 9] {
            Ok(())
        } else {
            Err(format!("expected [9, 8, 4, 9], got {observed:?}"))
        }
    });

    run("independence-nonnegative-a", {
        let kernels = make_random_bank(3, 77);
        let mut out = Ok(());
        'outer: for w1 in kernels.kernels() {
            for a in [0.5, 1.0, 2.0] {
                match relu_independence_check(w1, a, 1000, 5) {
                    Ok(r) if r.numeric_rank == 1 => {}
                    Ok(r) => {
                        out = Err(format!("a={a}: rank {}", r.numeric_rank));
                        break 'outer;
                    }
                    Err(e) => {
                        out = Err(e.to_string());
                        break 'outer;
                    }
                }
            }
        }
        out
    });

    run("independence-negative-a", {
        let kernels = make_random_bank(3, 78);
        let mut out = Ok(());
        'outer: for w1 in kernels.kernels() {
            for a in [-0.5, -1.0, -2.0] {
                match relu_independence_check(w1, a, 1000, 5) {
                    Ok(r) if r.numeric_rank == 2 => {}
                    Ok(r) => {
                        out = Err(format!("a={a}: rank {}", r.numeric_rank));
                        break 'outer;
                    }
                    Err(e) => {
                        out = Err(e.to_string());
                        break 'outer;
                    }
                }
            }
        }
        out
    });

    run("representability-translating", {
        let translating = make_translating_bank();
        let target = bank9.kernel(5).clone();
        match representability_check(&translating, &target) {
            Ok((residual, _)) if residual < 1e-10 => Ok(()),
            Ok((residual, _)) => Err(format!("residual {residual:e}")),
            Err(e) => Err(e.to_string()),
        }
    });

    run("representability-edge-line", {
        let mut rng = Rng::new(13);
        let mut out = Ok(());
        for _ in 0..100 {
            let mut values = [0.0; 9];
            for v in values.iter_mut() {
                *v = rng.uniform_signed();
            }
            let target =
                pfm_core::filters::Kernel3x3::new(values, KernelTag::Derived, 1).expect("kernel");
            match representability_check(&bank9, &target) {
                Ok((residual, _)) if residual < 1e-9 => {}
                Ok((residual, _)) => {
                    out = Err(format!("residual {residual:e}"));
                    break;
                }
                Err(e) => {
                    out = Err(e.to_string());
                    break;
                }
            }
        }
        out
    });

    run("representability-rank4-gap", {
        let rank4 = select_subset(&bank18, SubsetSpec::Rank4).expect("subset");
        let target = bank18.kernel(2).clone();
        match representability_check(&rank4, &target) {
            Ok((residual, _)) if residual > 0.01 => Ok(()),
            Ok((residual, _)) => Err(format!(
                "kernel 2 should lie outside the rank-4 span, residual {residual:e}"
            )),
            Err(e) => Err(e.to_string()),
        }
    });

    run("switch-formula", {
        match switch_property_check(bank9.kernel(1), -1.0, 3.0, 2.0, 1000, 21) {
            Ok(dev) if dev < 1e-12 => Ok(()),
            Ok(dev) => Err(format!("deviation {dev:e}")),
            Err(e) => Err(e.to_string()),
        }
    });

    run("complementary-responses", {
        match complementary_response_violations(bank9.kernel(3), 200, 22) {
            Ok(0) => Ok(()),
            Ok(n) => Err(format!("{n} pixels had both signs active")),
            Err(e) => Err(e.to_string()),
        }
    });

    run("toy-oracle", {
        let ds = DashDataset::generate(1234, 256);
        if oracle_accuracy(&ds) != 1.0 {
            Err("oracle accuracy below 1.0".into())
        } else {
            let mut out = Ok(());
            for img in ds.images() {
                let (_, score) = oracle_classify(img);
                let expect = SCORE_PER_DASH * (img.n_horizontal() as f64 - img.n_vertical() as f64);
                if score != expect {
                    out = Err(format!("score {score} vs {expect}"));
                    break;
                }
            }
            out
        }
    });

    run("conv-identity", {
        let mut rng = Rng::new(9);
        let data: Vec<f64> = (0..49).map(|_| rng.uniform_signed()).collect();
        let x = Var::leaf(Tensor::new([1, 1, 7, 7], data.clone()));
        let mut kd = vec![0.0; 9];
        kd[4] = 1.0;
        let k = Var::leaf(Tensor::new([1, 1, 3, 3], kd));
        match autodiff::conv2d(&x, &k, 1, 1) {
            Ok(y) if y.value().data() == data.as_slice() => Ok(()),
            Ok(_) => Err("delta kernel did not reproduce the input".into()),
            Err(e) => Err(e.to_string()),
        }
    });

    if failed == 0 {
        println!("all checks passed");
        Ok(0)
    } else {
        println!("{failed} checks failed");
        Ok(1)
    }
}

fn cmd_bench(args: &[String]) -> CliResult {
    let kv = parse_flags(args, &["shape", "filters", "reps"], &[])?;
    let shape_text = kv.get("shape").unwrap_or("8,3,32,32");
    let dims: Vec<usize> = shape_text
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad --shape '{shape_text}'")))?;
    if dims.len() != 4 || dims.contains(&0) {
        return usage("--shape must be four positive integers N,C,H,W");
    }
    let filters: usize = get_parsed(&kv, "filters", 9)?;
    let reps: usize = get_parsed(&kv, "reps", 5)?;
    if filters == 0 || reps == 0 {
        return usage("--filters and --reps must be positive");
    }
    let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);

    let bank = if filters == 9 || filters == 18 {
        make_edge_line_bank(filters).expect("builtin bank")
    } else {
        make_random_bank(filters, 1)
    };
    let cfg = PfmConfig::new(c, c, Rc::new(bank));
    let mut layer = PfmLayer::new(cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut rng = Rng::new(3);
    layer.mix().update_value(|t| {
        for v in t.data_mut().iter_mut() {
            *v = rng.uniform_signed() * 0.1;
        }
    });
    let input = Tensor::new(
        [n, c, h, w],
        (0..n * c * h * w).map(|_| rng.uniform_signed()).collect(),
    );

    println!("# pfm bench: shape {n}x{c}x{h}x{w}, {filters} filters, {reps} reps");
    println!("pass\tmean_ms");
    let mut forward_total = 0.0;
    let mut backward_total = 0.0;
    for _ in 0..reps {
        let x = Var::leaf(input.clone());
        let started = Instant::now();
        let out = layer
            .forward(&x, Mode::Train)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        forward_total += started.elapsed().as_secs_f64() * 1e3;

        let loss = autodiff::sum_all(&out);
        let started = Instant::now();
        autodiff::backward(&loss).map_err(|e| CliError::Runtime(e.to_string()))?;
        backward_total += started.elapsed().as_secs_f64() * 1e3;
        layer.mix().zero_grad();
    }
    println!("forward\t{:.3}", forward_total / reps as f64);
    println!("backward\t{:.3}", backward_total / reps as f64);
    Ok(0)
}

fn cmd_export_filters(args: &[String]) -> CliResult {
    let kv = parse_flags(args, &["bank", "out"], &[])?;
    let selector = get_required(&kv, "bank")?;
    let bank = parse_bank_selector(selector).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut text = String::new();
    for kernel in bank.kernels() {
        text.push_str(&format!("# {} {}\n", kernel.index(), kernel.tag()));
        for row in 0..3 {
            let mut line = String::new();
            for col in 0..3 {
                if col > 0 {
                    line.push(' ');
                }
                // 17 significant digits: every f64 round-trips.
                line.push_str(&format!("{:.16e}", kernel.at(row, col)));
            }
            text.push_str(&line);
            text.push('\n');
        }
        text.push('\n');
    }
    match kv.get("out") {
        Some(path) => {
            std::fs::write(path, &text).map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("wrote {} kernels to {path}", bank.len());
        }
        None => print!("{text}"),
    }
    Ok(0)
}
