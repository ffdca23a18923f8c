//! End-to-end tests of the cddm binary: round trips through saved models,
//! exit codes, and the plot-data extractors.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cddm::dataset::Dataset;
use cddm::experiment::{self, DataSpec, ExperimentConfig};
use cddm::network::{self, NetworkModel};
use cddm::trainer::TrainMode;

fn cddm_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cddm"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn cddm");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().expect("spawn cddm").status.code().expect("exit code")
}

fn stdout_line_value(out: &Output, prefix: &str) -> f64 {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text
        .lines()
        .find(|l| l.starts_with(prefix))
        .unwrap_or_else(|| panic!("no '{prefix}' line in output:\n{text}"));
    line[prefix.len()..].trim().parse().expect("numeric value")
}

/// Rebuilds the exact train/test data a `train --synthetic tf1` invocation
/// used, relying on the fixed-seed source path.
fn tf1_train_data(seed: u64, n_train: usize, n_test: usize) -> (Dataset<f64>, Dataset<f64>) {
    let cfg = ExperimentConfig {
        dataset: DataSpec::Tf1,
        mode: TrainMode::Ddm,
        m: 1,
        k_prime: 2,
        theta0: -0.01,
        stall_q: 50,
        trials: 1,
        master_seed: seed,
        output_dir: std::env::temp_dir(),
        n_train,
        n_test,
        noise: 0.2,
        train_fraction: 0.75,
        max_candidates: 0,
        allow_small_k: false,
        naive_pinv: false,
        resplit_per_trial: false,
    };
    let source = experiment::build_source(&cfg).unwrap();
    let td = source.trial_data(seed).unwrap();
    (td.train, td.test)
}

#[test]
fn train_save_load_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.txt");
    let out = run_ok(
        cddm_bin()
            .args(["train", "--synthetic", "tf1", "--mode", "ddm"])
            .args(["--m", "6", "--k-prime", "5", "--seed", "9"])
            .args(["--n-train", "120", "--n-test", "40"])
            .arg("--out")
            .arg(&model_path),
    );
    let reported_test = stdout_line_value(&out, "test RMSE");

    let model: NetworkModel<f64> = network::load_model(&model_path).unwrap();
    assert_eq!(model.node_count(), 6);
    let (_, test) = tf1_train_data(9, 120, 40);
    let preds = model.predict_dataset(&test).unwrap();
    let rmse = network::rmse(&preds, &test.targets()).unwrap();
    assert!(
        (rmse - reported_test).abs() < 1e-12,
        "reported {reported_test}, recomputed {rmse}"
    );
}

#[test]
fn predict_applies_model_normalizer() {
    let dir = tempfile::tempdir().unwrap();
    // Inputs span [0,4] and [10,50]; targets [100,300]. The saved model
    // carries the fitted normalizer, so predict takes original units.
    let data_path = dir.path().join("toy.dat");
    let mut text = String::from(
        "@relation toy\n@attribute a real\n@attribute b real\n@attribute y real\n@data\n",
    );
    for i in 0..40 {
        let a = i as f64 / 10.0;
        let b = 10.0 + i as f64;
        text.push_str(&format!("{a}, {b}, {}\n", 100.0 + 5.0 * i as f64));
    }
    fs::write(&data_path, text).unwrap();

    let model_path = dir.path().join("model.txt");
    run_ok(
        cddm_bin()
            .arg("train")
            .arg("--data")
            .arg(&data_path)
            .args(["--mode", "ddm", "--m", "3", "--k-prime", "4", "--seed", "3"])
            .arg("--out")
            .arg(&model_path),
    );
    let model: NetworkModel<f64> = network::load_model(&model_path).unwrap();

    let input_path = dir.path().join("inputs.csv");
    fs::write(&input_path, "a,b\n1.0,20.0\n3.0,40.0\n").unwrap();
    let norm_out = dir.path().join("norm.csv");
    let den_out = dir.path().join("den.csv");
    run_ok(
        cddm_bin()
            .arg("predict")
            .arg("--model")
            .arg(&model_path)
            .arg("--input")
            .arg(&input_path)
            .arg("--output")
            .arg(&norm_out),
    );
    run_ok(
        cddm_bin()
            .arg("predict")
            .arg("--model")
            .arg(&model_path)
            .arg("--input")
            .arg(&input_path)
            .arg("--output")
            .arg(&den_out)
            .arg("--denormalize"),
    );

    let parse_preds = |path: &Path| -> Vec<f64> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect()
    };
    let norm_preds = parse_preds(&norm_out);
    let den_preds = parse_preds(&den_out);
    assert_eq!(norm_preds.len(), 2);
    for (i, x) in [[1.0, 20.0], [3.0, 40.0]].iter().enumerate() {
        let nx = model.normalizer.normalize_input(x).unwrap();
        let y = model.predict(&nx).unwrap();
        assert!((norm_preds[i] - y).abs() < 1e-12);
        let d = model.normalizer.denormalize_target(y);
        assert!((den_preds[i] - d).abs() < 1e-12);
    }
    // The two output spaces genuinely differ for this data.
    assert!((norm_preds[0] - den_preds[0]).abs() > 1.0);
}

#[test]
fn zero_theta_cddm_matches_ddm_via_cli() {
    let dir = tempfile::tempdir().unwrap();
    let cddm_path = dir.path().join("cddm.txt");
    let ddm_path = dir.path().join("ddm.txt");
    for (mode, theta, path) in [
        ("cddm", Some("0"), &cddm_path),
        ("ddm", None, &ddm_path),
    ] {
        let mut cmd = cddm_bin();
        cmd.args(["train", "--synthetic", "tf1", "--mode", mode])
            .args(["--m", "10", "--k-prime", "5", "--seed", "21"])
            .args(["--n-train", "200", "--n-test", "50"]);
        if let Some(t) = theta {
            cmd.args(["--theta0", t]);
        }
        run_ok(cmd.arg("--out").arg(path));
    }
    let a: NetworkModel<f64> = network::load_model(&cddm_path).unwrap();
    let b: NetworkModel<f64> = network::load_model(&ddm_path).unwrap();
    assert_eq!(a.node_count(), b.node_count());
    assert_eq!(a.nodes, b.nodes);
}

#[test]
fn exit_codes_distinguish_config_data_and_partial() {
    let dir = tempfile::tempdir().unwrap();

    // trials = 0 is a config error.
    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(
        &bad_cfg,
        format!(
            "dataset = tf1\nmode = ddm\nm = 3\nk_prime = 5\ntrials = 0\n\
             master_seed = 1\noutput_dir = {}\n",
            dir.path().display()
        ),
    )
    .unwrap();
    assert_eq!(exit_code(cddm_bin().arg("run").arg("--config").arg(&bad_cfg)), 1);

    // Missing files are data errors.
    assert_eq!(
        exit_code(cddm_bin().args(["run", "--config", "/nonexistent/x.cfg"])),
        2
    );
    assert_eq!(
        exit_code(
            cddm_bin()
                .args(["train", "--data", "/nonexistent/y.dat", "--mode", "ddm"])
                .args(["--m", "2", "--k-prime", "3", "--out"])
                .arg(dir.path().join("m.txt")),
        ),
        2
    );

    // A model file from the future is a data error.
    let future = dir.path().join("future.txt");
    fs::write(&future, "cddm-model 99\n").unwrap();
    let inputs = dir.path().join("in.csv");
    fs::write(&inputs, "0.5\n").unwrap();
    assert_eq!(
        exit_code(
            cddm_bin()
                .arg("predict")
                .arg("--model")
                .arg(&future)
                .arg("--input")
                .arg(&inputs)
                .arg("--output")
                .arg(dir.path().join("out.csv")),
        ),
        2
    );

    // An unreachable candidate budget ends with the partial-result code and
    // still saves the partial model.
    let partial_model = dir.path().join("partial.txt");
    let code = exit_code(
        cddm_bin()
            .args(["train", "--synthetic", "tf1", "--mode", "cddm"])
            .args(["--m", "50", "--k-prime", "5", "--seed", "4"])
            .args(["--n-train", "100", "--n-test", "20"])
            .args(["--theta0", "-1e9", "--Q", "100000", "--max-candidates", "6"])
            .arg("--out")
            .arg(&partial_model),
    );
    assert_eq!(code, 4);
    let partial: NetworkModel<f64> = network::load_model(&partial_model).unwrap();
    assert_eq!(partial.node_count(), 0);
}

#[test]
fn crossval_single_cell_prints_and_reruns_identically() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let write_cfg = |out_dir: &Path| {
        let cfg = dir_a.path().join(format!(
            "cv_{}.cfg",
            out_dir.file_name().unwrap().to_string_lossy()
        ));
        fs::write(
            &cfg,
            format!(
                "dataset = tf1\nmode = ddm\nk_prime_grid = 5\nm_grid = 3\nfolds = 4\n\
                 master_seed = 6\nn_train = 48\nn_test = 10\noutput_dir = {}\n",
                out_dir.display()
            ),
        )
        .unwrap();
        cfg
    };
    let out = run_ok(
        cddm_bin()
            .arg("crossval")
            .arg("--config")
            .arg(write_cfg(&dir_a.path().join("cv"))),
    );
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("k_prime=5 m=3"), "{text}");

    run_ok(
        cddm_bin()
            .arg("crossval")
            .arg("--config")
            .arg(write_cfg(&dir_b.path().join("cv"))),
    );
    let body = |p: &Path| {
        fs::read_to_string(p.join("cv_scores.csv"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(String::from)
            .collect::<Vec<_>>()
    };
    assert_eq!(body(&dir_a.path().join("cv")), body(&dir_b.path().join("cv")));
}

#[test]
fn crossval_selection_close_to_best_cell_on_held_out_data() {
    // Grid of a clearly bad and a clearly good cell; the winner must be
    // within 10% of the best cell's held-out RMSE.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cv.cfg");
    fs::write(
        &cfg,
        format!(
            "dataset = tf1\nmode = ddm\nk_prime_grid = 20\nm_grid = 2,25\nfolds = 5\n\
             master_seed = 11\nn_train = 150\nn_test = 60\noutput_dir = {}\n",
            dir.path().join("cv").display()
        ),
    )
    .unwrap();
    let out = run_ok(cddm_bin().arg("crossval").arg("--config").arg(&cfg));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let selected_m: usize = text
        .lines()
        .find(|l| l.starts_with("selected:"))
        .and_then(|l| l.split("m=").nth(1))
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("no selection line in {text}"));

    // Exhaustive held-out evaluation of both cells.
    use cddm::dataset::Normalizer;
    use cddm::trainer::{self, TrainConfig};
    let (train, test) = cddm::dataset::generate_tf1::<f64>(150, 60, 77).unwrap();
    let mut held_out = std::collections::BTreeMap::new();
    for m in [2usize, 25] {
        let cfg = TrainConfig::new(TrainMode::Ddm, m, 20, 5);
        let (model, _) =
            trainer::train(&train, &cfg, Some(&test), &Normalizer::identity(1)).unwrap();
        let preds = model.predict_dataset(&test).unwrap();
        held_out.insert(m, network::rmse(&preds, &test.targets()).unwrap());
    }
    let best = held_out.values().cloned().fold(f64::INFINITY, f64::min);
    let selected = held_out[&selected_m];
    assert!(
        selected <= best * 1.10,
        "selected m={selected_m} at {selected}, best {best}"
    );
}

#[test]
fn plotdata_theta_kind_halves_stepwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "dataset = tf1\nmode = cddm\nm = 8\nk_prime = 5\ntrials = 1\n\
             master_seed = 15\nn_train = 150\nn_test = 30\nQ = 6\noutput_dir = {}\n",
            dir.path().join("run").display()
        ),
    )
    .unwrap();
    run_ok(cddm_bin().arg("run").arg("--config").arg(&cfg));

    let out = run_ok(
        cddm_bin()
            .arg("plotdata")
            .arg("--records")
            .arg(dir.path().join("run"))
            .args(["--kind", "theta"]),
    );
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let thetas: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!thetas.is_empty());
    for w in thetas.windows(2) {
        assert!(w[1].abs() <= w[0].abs(), "|theta| grew: {w:?}");
    }
    // Each value is theta0 scaled by a power of two.
    for t in &thetas {
        let ratio = -0.01 / t;
        assert!((ratio.log2() - ratio.log2().round()).abs() < 1e-9, "{t}");
    }
}

#[test]
fn plotdata_fitcurve_writes_file_and_rejects_2d() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "dataset = tf1\nmode = ddm\nm = 4\nk_prime = 5\ntrials = 1\n\
             master_seed = 3\nn_train = 100\nn_test = 20\noutput_dir = {}\n",
            dir.path().join("run").display()
        ),
    )
    .unwrap();
    run_ok(cddm_bin().arg("run").arg("--config").arg(&cfg));
    let out_file = dir.path().join("curve.csv");
    run_ok(
        cddm_bin()
            .arg("plotdata")
            .arg("--records")
            .arg(dir.path().join("run"))
            .args(["--kind", "fitcurve"])
            .arg("--output")
            .arg(&out_file),
    );
    let text = fs::read_to_string(&out_file).unwrap();
    assert!(text.starts_with("x,target,fitted,node1"));
    assert_eq!(text.lines().count(), 301);

    let cfg2 = dir.path().join("run2.cfg");
    fs::write(
        &cfg2,
        format!(
            "dataset = tf2\nmode = ddm\nm = 3\nk_prime = 5\ntrials = 1\n\
             master_seed = 3\nn_train = 80\nn_test = 20\nnoise = 0\noutput_dir = {}\n",
            dir.path().join("run2").display()
        ),
    )
    .unwrap();
    run_ok(cddm_bin().arg("run").arg("--config").arg(&cfg2));
    assert_eq!(
        exit_code(
            cddm_bin()
                .arg("plotdata")
                .arg("--records")
                .arg(dir.path().join("run2"))
                .args(["--kind", "fitcurve"]),
        ),
        2
    );
}
