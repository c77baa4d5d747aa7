//! End-to-end tests of the `pfm-lab` binary: flag handling, exit codes,
//! and the files each subcommand writes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pfm-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pfm-lab-cli-{tag}-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn usage_errors_exit_with_code_2() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["gen-dashes", "--bogus", "1"]).status.code(), Some(2));
    assert_eq!(run(&["gen-dashes"]).status.code(), Some(2), "missing --out");
    assert_eq!(
        run(&["count-params", "--arch", "vgg"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["export-filters", "--bank", "nope"]).status.code(),
        Some(2)
    );
}

#[test]
fn help_exits_cleanly() {
    let out = run(&["help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_of(&out).contains("subcommands"));
}

#[test]
fn invalid_thread_cap_is_a_usage_error() {
    let out = bin()
        .args(["check"])
        .env("PFM_LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["help"])
        .env("PFM_LAB_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn gen_dashes_is_byte_deterministic() {
    let dir = tmp_dir("gen");
    let a = dir.join("a.odcd");
    let b = dir.join("b.odcd");
    assert_eq!(
        run(&[
            "gen-dashes",
            "--seed",
            "7",
            "--count",
            "32",
            "--out",
            a.to_str().unwrap()
        ])
        .status
        .code(),
        Some(0)
    );
    assert_eq!(
        run(&[
            "gen-dashes",
            "--seed",
            "7",
            "--count",
            "32",
            "--out",
            b.to_str().unwrap()
        ])
        .status
        .code(),
        Some(0)
    );
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    // The generated file parses and the closed-form classifier solves it.
    let ds = pfm_lab::odcd::read_file(&a).unwrap();
    assert_eq!(ds.len(), 32);
    assert_eq!(ds.seed(), 7);
    assert_eq!(pfm_core::dashes::oracle_accuracy(&ds), 1.0);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn gen_dashes_single_image_file_is_valid() {
    let dir = tmp_dir("gen1");
    let path = dir.join("one.odcd");
    assert_eq!(
        run(&[
            "gen-dashes",
            "--seed",
            "1",
            "--count",
            "1",
            "--out",
            path.to_str().unwrap()
        ])
        .status
        .code(),
        Some(0)
    );
    let ds = pfm_lab::odcd::read_file(&path).unwrap();
    assert_eq!(ds.len(), 1);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn check_subcommand_passes() {
    let out = run(&["check"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_of(&out);
    assert!(text.lines().filter(|l| l.starts_with("check ")).count() >= 10);
    assert!(!text.contains("FAIL"));
}

#[test]
fn count_params_emits_tsv_with_total() {
    let out = run(&[
        "count-params",
        "--arch",
        "pfnet18",
        "--bank-size",
        "9",
        "--classes",
        "200",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_of(&out);
    let total_line = text
        .lines()
        .find(|l| l.starts_with("total\t"))
        .expect("total line");
    let total: f64 = total_line.split('\t').nth(2).unwrap().parse().unwrap();
    assert!((total - 11.3e6).abs() / 11.3e6 < 0.05);
    // Per-position lines are machine readable: three tab-separated fields.
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        assert_eq!(line.split('\t').count(), 3, "line {line}");
    }
}

#[test]
fn export_filters_writes_negating_pairs() {
    let out = run(&["export-filters", "--bank", "edge_line18"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_of(&out);
    // Parse the blocks back into (index, values).
    let mut kernels: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut current: Option<(usize, Vec<f64>)> = None;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some(k) = current.take() {
                kernels.push(k);
            }
            let index: usize = rest.split_whitespace().next().unwrap().parse().unwrap();
            current = Some((index, Vec::new()));
        } else if !line.trim().is_empty() {
            let values = current.as_mut().expect("values belong to a block");
            for v in line.split_whitespace() {
                values.1.push(v.parse().unwrap());
            }
        }
    }
    if let Some(k) = current.take() {
        kernels.push(k);
    }
    assert_eq!(kernels.len(), 18);
    for (i, (index, values)) in kernels.iter().enumerate() {
        assert_eq!(*index, i + 1);
        assert_eq!(values.len(), 9);
    }
    for i in 0..9 {
        for (a, b) in kernels[i].1.iter().zip(kernels[i + 9].1.iter()) {
            assert_eq!(*a, -b, "pair {}", i + 1);
        }
    }
    // 17 significant digits reproduce the exact f64 values.
    let bank = pfm_core::filters::make_edge_line_bank(18).unwrap();
    for ((_, values), kernel) in kernels.iter().zip(bank.kernels()) {
        for (parsed, exact) in values.iter().zip(kernel.values()) {
            assert_eq!(parsed.to_bits(), exact.to_bits());
        }
    }
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let dir = tmp_dir("train");
    let data = dir.join("data.odcd");
    assert_eq!(
        run(&[
            "gen-dashes",
            "--seed",
            "5",
            "--count",
            "64",
            "--out",
            data.to_str().unwrap()
        ])
        .status
        .code(),
        Some(0)
    );
    let train_into = |out_dir: &Path| {
        let status = run(&[
            "train",
            "--model",
            "toy-pfm",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--epochs",
            "3",
            "--seed",
            "1",
        ])
        .status;
        assert_eq!(status.code(), Some(0));
    };
    let run_a = dir.join("a");
    let run_b = dir.join("b");
    train_into(&run_a);
    train_into(&run_b);

    for name in ["metrics.tsv", "model.pfmckpt", "config.txt"] {
        assert!(run_a.join(name).exists(), "{name} missing");
    }
    // Checkpoints are bit-identical across reruns; metrics match except for
    // the wall-clock column.
    assert_eq!(
        fs::read(run_a.join("model.pfmckpt")).unwrap(),
        fs::read(run_b.join("model.pfmckpt")).unwrap()
    );
    let strip_wall = |path: &Path| -> Vec<String> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| {
                l.rsplit_once('\t')
                    .map(|(head, _)| head.to_string())
                    .unwrap_or_default()
            })
            .collect()
    };
    assert_eq!(
        strip_wall(&run_a.join("metrics.tsv")),
        strip_wall(&run_b.join("metrics.tsv"))
    );

    // The echoed config re-runs to the same checkpoint.
    let run_c = dir.join("c");
    let status = run(&[
        "train",
        "--config",
        run_a.join("config.txt").to_str().unwrap(),
        "--out",
        run_c.to_str().unwrap(),
    ])
    .status;
    assert_eq!(status.code(), Some(0));
    assert_eq!(
        fs::read(run_a.join("model.pfmckpt")).unwrap(),
        fs::read(run_c.join("model.pfmckpt")).unwrap()
    );
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_toy_pfm_reaches_high_accuracy_through_the_cli() {
    let dir = tmp_dir("train-acc");
    let data = dir.join("data.odcd");
    assert_eq!(
        run(&[
            "gen-dashes",
            "--seed",
            "3",
            "--count",
            "256",
            "--out",
            data.to_str().unwrap()
        ])
        .status
        .code(),
        Some(0)
    );
    let out_dir = dir.join("run");
    assert_eq!(
        run(&[
            "train",
            "--model",
            "toy-pfm",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--epochs",
            "10",
            "--seed",
            "0",
        ])
        .status
        .code(),
        Some(0)
    );
    let metrics = fs::read_to_string(out_dir.join("metrics.tsv")).unwrap();
    let best: f64 = metrics
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').nth(2).unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(best >= 0.99, "best train accuracy {best}");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_rejects_bad_banks_and_missing_data() {
    let dir = tmp_dir("train-err");
    let data = dir.join("data.odcd");
    assert_eq!(
        run(&[
            "gen-dashes",
            "--seed",
            "5",
            "--count",
            "8",
            "--out",
            data.to_str().unwrap()
        ])
        .status
        .code(),
        Some(0)
    );
    // Unknown bank selector: usage error even for toy models.
    let out = run(&[
        "train",
        "--model",
        "toy-pfm",
        "--bank",
        "gabor",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    // Unknown model: usage error.
    let out = run(&[
        "train",
        "--model",
        "resnet50",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.join("y").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    // Missing data file: runtime error.
    let out = run(&[
        "train",
        "--model",
        "toy-pfm",
        "--data",
        dir.join("nope.odcd").to_str().unwrap(),
        "--out",
        dir.join("z").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_flags_override_config_file() {
    let dir = tmp_dir("train-cfg");
    let data = dir.join("data.odcd");
    assert_eq!(
        run(&[
            "gen-dashes",
            "--seed",
            "2",
            "--count",
            "16",
            "--out",
            data.to_str().unwrap()
        ])
        .status
        .code(),
        Some(0)
    );
    let cfg_path = dir.join("base.cfg");
    fs::write(
        &cfg_path,
        format!("model=toy-pfm\ndata={}\nepochs=5\nseed=3\n", data.display()),
    )
    .unwrap();
    let out_dir = dir.join("out");
    let status = run(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--epochs",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ])
    .status;
    assert_eq!(status.code(), Some(0));
    let config = fs::read_to_string(out_dir.join("config.txt")).unwrap();
    assert!(config.contains("epochs=2"), "flag must win: {config}");
    assert!(
        config.contains("seed=3"),
        "file value must survive: {config}"
    );
    let metrics = fs::read_to_string(out_dir.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 3, "header + 2 epochs");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn checkpoint_from_cli_loads_into_a_fresh_model() {
    let dir = tmp_dir("ckpt");
    let data = dir.join("data.odcd");
    assert_eq!(
        run(&[
            "gen-dashes",
            "--seed",
            "9",
            "--count",
            "32",
            "--out",
            data.to_str().unwrap()
        ])
        .status
        .code(),
        Some(0)
    );
    let out_dir = dir.join("run");
    assert_eq!(
        run(&[
            "train",
            "--model",
            "toy-cnn",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--epochs",
            "2",
        ])
        .status
        .code(),
        Some(0)
    );
    let spec = pfm_core::models::build_toy(pfm_core::models::ToyVariant::Cnn);
    let model = pfm_core::models::Model::instantiate(&spec).unwrap();
    pfm_lab::checkpoint::load(&model, &out_dir.join("model.pfmckpt")).unwrap();
    // All parameters must now be nonzero-initialized (trained values).
    let any_nonzero = model
        .params()
        .iter()
        .any(|p| p.var.value().data().iter().any(|&v| v != 0.0));
    assert!(any_nonzero);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn bench_reports_timings() {
    let out = run(&[
        "bench",
        "--shape",
        "1,2,12,12",
        "--filters",
        "4",
        "--reps",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_of(&out);
    assert!(text.contains("forward\t"));
    assert!(text.contains("backward\t"));
}

#[test]
fn mini_pfnet_smoke_run_from_the_cli() {
    let dir = tmp_dir("mini");
    let data = dir.join("data.odcd");
    assert_eq!(
        run(&[
            "gen-dashes",
            "--seed",
            "4",
            "--count",
            "8",
            "--out",
            data.to_str().unwrap()
        ])
        .status
        .code(),
        Some(0)
    );
    let out_dir = dir.join("run");
    let out = run(&[
        "train",
        "--model",
        "mini-pfnet",
        "--bank",
        "translating",
        "--no-relu",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--epochs",
        "1",
        "--batch-size",
        "4",
        "--width",
        "2",
        "--lr",
        "0.01",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = fs::read_to_string(out_dir.join("metrics.tsv")).unwrap();
    let line = metrics.lines().nth(1).expect("one epoch");
    let fields: Vec<&str> = line.split('\t').collect();
    let loss: f64 = fields[1].parse().unwrap();
    assert!(loss.is_finite());
    fs::remove_dir_all(&dir).ok();
}
