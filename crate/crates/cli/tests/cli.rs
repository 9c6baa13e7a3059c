//! Drives the installed binary end to end: artifact layout, exit codes,
//! and consistency between commands.

use std::path::Path;
use std::process::Output;

use ifseg_cli::config::ExperimentConfig;
use ifseg_cli::dataset;
use ifseg_core::data::LabelMapping;
use ifseg_core::pgm;

fn ifseg(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_ifseg"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    // One file per distinct body so multi-case tests don't clobber earlier
    // configs before the binary reads them.
    let path = dir.join(format!("exp_{:016x}.cfg", fxhash(body)));
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn fxhash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

const TINY: &str = "base_channels = 4\ndepth = 1\nphantom_count = 5\nphantom_size = 32\ntarget_size = 32\nepochs = 3\nseed = 7\n";

/// Parses the numeric cells of a CSV with one header line.
fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn train_writes_every_artifact_with_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let res = ifseg(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for artifact in ["run.csv", "weights.ifseg", "ledger.txt", "metrics.json", "metrics_train.json"] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }
    let rows = csv_rows(&out.join("run.csv"));
    assert_eq!(rows.len(), 3);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], (i + 1) as f64, "epochs must increase one by one");
        assert_eq!(row.len(), 9);
    }
    let header = std::fs::read_to_string(out.join("run.csv")).unwrap();
    assert!(header.starts_with("epoch,loss,ac,dc,iou,ac_val,dc_val,iou_val,wall_seconds\n"));
}

#[test]
fn five_epoch_unet_loss_goes_down() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "model = unet\nbase_channels = 8\ndepth = 2\nphantom_count = 5\nphantom_size = 32\ntarget_size = 32\nepochs = 5\nseed = 21\n",
    );
    let out = dir.path().join("run");
    let res = ifseg(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let rows = csv_rows(&out.join("run.csv"));
    assert_eq!(rows.len(), 5);
    assert!(rows[4][1] < rows[0][1], "loss row 5 {} !< row 1 {}", rows[4][1], rows[0][1]);
}

#[test]
fn eval_matches_the_final_training_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = dir.path().join("run");
    let res = ifseg(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));

    let eval_out = dir.path().join("eval");
    let weights = run.join("weights.ifseg");
    let res = ifseg(&[
        "eval",
        "--config",
        &cfg,
        "--out",
        eval_out.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_out.join("metrics.json")).unwrap()).unwrap();
    let last = csv_rows(&run.join("run.csv")).pop().unwrap();
    for (field, column) in [("ac", 5), ("dice_macro_incl_bg", 6), ("iou_macro_incl_bg", 7)] {
        let json = metrics[field].as_f64().unwrap();
        assert!(
            (json - last[column]).abs() <= 1e-12,
            "{field}: eval {json} vs final row {}",
            last[column]
        );
    }
    // Evaluating twice gives identical bytes.
    let eval2 = dir.path().join("eval2");
    let res = ifseg(&["eval", "--config", &cfg, "--out", eval2.to_str().unwrap(), "--weights", weights.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    assert_eq!(
        std::fs::read(eval_out.join("metrics.json")).unwrap(),
        std::fs::read(eval2.join("metrics.json")).unwrap()
    );
}

#[test]
fn overfit_then_segment_agrees_with_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let body = "variant = stacked3\nbase_channels = 8\ndepth = 2\ndropout = 0.0\nphantom_count = 5\nphantom_size = 32\ntarget_size = 32\nepochs = 40\nseed = 13\npartition = train\n";
    let cfg = write_config(dir.path(), body);
    let run = dir.path().join("run");
    let res = ifseg(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));

    let seg = dir.path().join("seg");
    let res = ifseg(&[
        "segment",
        "--config",
        &cfg,
        "--out",
        seg.to_str().unwrap(),
        "--weights",
        run.join("weights.ifseg").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));

    // Reconstruct the dataset the binary saw and compare maps to the truth.
    let config = ExperimentConfig::from_file(Path::new(&cfg)).unwrap();
    let negation = config.negation_spec(1.2).unwrap();
    let prepared = dataset::prepare(&config, &negation).unwrap();
    let gray_to_class = LabelMapping::gray_levels();
    let mut agree = 0usize;
    let mut total = 0usize;
    for (pos, &i) in prepared.train.iter().enumerate() {
        let (w, h, bytes) = pgm::read_pgm(seg.join(format!("slice_{pos:04}.pgm"))).unwrap();
        assert_eq!((w, h), (32, 32));
        let gray16: Vec<u16> = bytes.iter().map(|&b| b as u16).collect();
        let pred = gray_to_class.apply(&gray16).unwrap();
        // Histogram partition: exactly one class per pixel.
        assert_eq!(pred.len(), 32 * 32);
        agree += pred
            .iter()
            .zip(&prepared.masks[i])
            .filter(|(a, b)| a == b)
            .count();
        total += pred.len();
    }
    let fraction = agree as f64 / total as f64;
    assert!(fraction >= 0.95, "training-slice agreement {fraction:.4} < 0.95");
}

#[test]
fn zero_weights_segment_to_the_lowest_class() {
    let dir = tempfile::tempdir().unwrap();
    // No normalization layers: an all-zero model needs no statistics and
    // produces all-zero logits, so every argmax tie breaks to class 0.
    let body = "norm = none\nbase_channels = 4\ndepth = 1\nphantom_count = 5\nphantom_size = 32\ntarget_size = 32\nseed = 3\npartition = all\n";
    let cfg = write_config(dir.path(), body);
    let config = ExperimentConfig::from_file(Path::new(&cfg)).unwrap();
    let mut model = config
        .build_model(1.2, &mut ifseg_core::Rng::new(1))
        .unwrap();
    let ids: Vec<_> = model.params().iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for v in model.params_mut().tensor_mut(id).data_mut() {
            *v = 0.0;
        }
    }
    let weights = dir.path().join("zero.ifseg");
    model.save(&weights).unwrap();

    let seg = dir.path().join("seg");
    let res = ifseg(&[
        "segment",
        "--config",
        &cfg,
        "--out",
        seg.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for pos in 0..5 {
        let (_, _, bytes) = pgm::read_pgm(seg.join(format!("slice_{pos:04}.pgm"))).unwrap();
        assert!(bytes.iter().all(|&b| b == 0), "slice {pos} not constant class 0");
    }
}

#[test]
fn segment_optional_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let body = "variant = stacked3\nbase_channels = 4\ndepth = 1\nphantom_count = 5\nphantom_size = 32\ntarget_size = 32\nepochs = 1\nseed = 5\nclass_maps = true\ndump_ifs = true\n";
    let cfg = write_config(dir.path(), body);
    let run = dir.path().join("run");
    let res = ifseg(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let seg = dir.path().join("seg");
    let res = ifseg(&[
        "segment",
        "--config",
        &cfg,
        "--out",
        seg.to_str().unwrap(),
        "--weights",
        run.join("weights.ifseg").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    // One holdout slice: the label map, four class maps, planes + previews.
    for name in [
        "slice_0000.pgm",
        "slice_0000_class0.pgm",
        "slice_0000_class3.pgm",
        "ifs_0000.ifseg",
        "ifs_0000_mu.pgm",
        "ifs_0000_pi.pgm",
    ] {
        assert!(seg.join(name).exists(), "missing {name}");
    }
    let entries: Vec<(String, ifseg_core::Tensor)> =
        ifseg_core::container::read_entries(seg.join("ifs_0000.ifseg")).unwrap();
    let names: Vec<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, vec!["mu", "nu", "pi"]);
    for (_, plane) in &entries {
        assert_eq!(plane.shape(), &[32, 32]);
    }
}

#[test]
fn sweep_rejects_duplicates_and_accepts_singletons() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("sweep");
    let res = ifseg(&[
        "sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--lambda", "0.9,0.9",
    ]);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("duplicate lambda"), "{}", stderr(&res));

    let res = ifseg(&[
        "sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--lambda", "0.9",
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "metric,lambda=0.9");
    assert_eq!(lines.len(), 7, "header + six metric rows");
}

#[test]
fn bench_single_repeat_and_plain_model_reports_no_fuzzification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("bench");
    let res = ifseg(&[
        "bench", "--config", &cfg, "--out", out.to_str().unwrap(), "--model", "unet",
        "--weights", "fresh", "--repeats", "1",
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let timing: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("timing.json")).unwrap()).unwrap();
    assert_eq!(timing["repeats"], 1);
    assert_eq!(timing["model"], "unet");
    assert_eq!(timing["mean_fuzzification_seconds"], 0.0);
    assert!(timing["mean_inference_seconds"].as_f64().unwrap() > 0.0);
}

#[test]
fn gradcheck_passes_and_repeats_identically() {
    let first = ifseg(&["gradcheck", "--seed", "5"]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let second = ifseg(&["gradcheck", "--seed", "5"]);
    assert_eq!(first.stdout, second.stdout, "same seed must print the same report");
    let text = String::from_utf8_lossy(&first.stdout);
    assert!(text.contains("conv2d"));
    assert!(text.contains("negative control trips as intended"));
}

#[test]
fn config_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let cases: Vec<(Vec<String>, &str)> = vec![
        (
            vec!["train".into(), "--config".into(), write_config(dir.path(), "epochz = 3\n")],
            "unknown config key",
        ),
        (
            vec!["train".into(), "--config".into(), write_config(dir.path(), "epochs = 0\n")],
            "nothing to train",
        ),
        (
            vec!["train".into(), "--lambda".into(), "0.5,0.9".into()],
            "exactly one lambda",
        ),
        (vec!["eval".into()], "needs trained weights"),
        (
            vec!["sweep".into(), "--model".into(), "unet".into()],
            "set model = ifunet",
        ),
        (
            vec!["bench".into(), "--weights".into(), "fresh".into(), "--repeats".into(), "0".into()],
            "repeats",
        ),
    ];
    for (args, needle) in cases {
        let mut full: Vec<String> = args.clone();
        full.push("--out".into());
        full.push(out.to_string_lossy().into_owned());
        let refs: Vec<&str> = full.iter().map(|s| s.as_str()).collect();
        let res = ifseg(&refs);
        assert_eq!(code(&res), 2, "args {args:?}: {}", stderr(&res));
        assert!(stderr(&res).contains(needle), "args {args:?}: {}", stderr(&res));
    }
}

#[test]
fn missing_and_corrupt_data_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    // Missing weights file.
    let cfg = write_config(dir.path(), TINY);
    let res = ifseg(&[
        "eval", "--config", &cfg, "--out", out.to_str().unwrap(),
        "--weights", dir.path().join("absent.ifseg").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 3, "{}", stderr(&res));

    // Truncated volume in an IBSR directory.
    let data = dir.path().join("ibsr");
    std::fs::create_dir(&data).unwrap();
    dataset::write_raw16_pair(&data, "s01", (1, 8, 8), &[1u16; 64], &[0u16; 64]).unwrap();
    let raw = std::fs::read(data.join("s01.raw")).unwrap();
    std::fs::write(data.join("s01.raw"), &raw[..raw.len() - 2]).unwrap();
    let body = format!(
        "dataset = ibsr\nibsr_dir = {}\nibsr_format = raw16\nraw_dims = 1x8x8\n",
        data.display()
    );
    let cfg = write_config(dir.path(), &body);
    let res = ifseg(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 3, "{}", stderr(&res));
    assert!(stderr(&res).contains("expected 128 bytes"), "{}", stderr(&res));
}

#[test]
fn incompatible_weights_exit_2_naming_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = dir.path().join("run");
    let res = ifseg(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    // Same weights, different architecture width.
    let wide = write_config(dir.path(), &TINY.replace("base_channels = 4", "base_channels = 8"));
    let res = ifseg(&[
        "eval", "--config", &wide, "--out", dir.path().join("e").to_str().unwrap(),
        "--weights", run.join("weights.ifseg").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2, "{}", stderr(&res));
    assert!(stderr(&res).contains("parameter mismatch"), "{}", stderr(&res));
}
