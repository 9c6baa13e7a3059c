//! The six verbs and their artifacts.
//!
//! Everything a run writes is reproducible from (config, seed) — the one
//! exception is measured wall time (the `wall_seconds` CSV column and the
//! timing JSON), which is real elapsed time and naturally varies.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use ifseg_core::autodiff::adam::AdamConfig;
use ifseg_core::autodiff::gradcheck;
use ifseg_core::container;
use ifseg_core::data::{pad_or_crop, NUM_CLASSES};
use ifseg_core::error::{Error, Result};
use ifseg_core::metrics::{report, ConfusionCounts, MetricsReport};
use ifseg_core::models::ParamId;
use ifseg_core::pgm;
use ifseg_core::{Adam, Model, Tensor};

use crate::config::{ExperimentConfig, ModelKind, NegationChoice, Partition};
use crate::dataset::{self, Prepared};
use crate::seeds;

/// Shapes per op in the finite-difference suite the `gradcheck` verb runs.
const GRADCHECK_ROUNDS: usize = 5;

/// One row of the training log.
#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    /// Pixel-weighted mean cross-entropy over the epoch's training steps.
    pub loss: f64,
    pub ac: f64,
    pub dc: f64,
    pub iou: f64,
    pub ac_val: f64,
    pub dc_val: f64,
    pub iou_val: f64,
    pub wall_seconds: f64,
}

/// What `bench` reports; `mean_fuzzification_seconds` is the slice-encoding
/// share of the mean, zero for models that take the raw plane.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    pub model: String,
    pub trainable_params: usize,
    pub mean_inference_seconds: f64,
    pub mean_fuzzification_seconds: f64,
    pub repeats: usize,
}

pub struct TrainOutcome {
    pub model: Model,
    pub rows: Vec<EpochRow>,
    /// Final-epoch metrics, eval-mode statistics, both partitions.
    pub train_report: MetricsReport,
    pub val_report: MetricsReport,
}

/// Per-pixel argmax over the channel axis of a `1 x C x H x W` logits
/// tensor; ties break to the lowest class index.
pub fn argmax_mask(logits: &Tensor) -> Result<Vec<u8>> {
    let (n, c, h, w) = logits.dims4()?;
    if n != 1 || c == 0 || c > u8::MAX as usize + 1 {
        return Err(Error::invalid(format!(
            "argmax expects one sample with 1..=256 classes, got {n} x {c}"
        )));
    }
    let data = logits.data();
    let plane = h * w;
    let mut out = Vec::with_capacity(plane);
    for p in 0..plane {
        let mut best = 0usize;
        for ci in 1..c {
            if data[ci * plane + p] > data[best * plane + p] {
                best = ci;
            }
        }
        out.push(best as u8);
    }
    Ok(out)
}

/// Display gray for one class. The four-tissue table matches the
/// `gray_levels` label scheme, so written maps read back as label masks;
/// other class counts spread evenly over 0..=255.
pub fn class_gray(class: u8, classes: usize) -> u8 {
    const TISSUE_GRAYS: [u8; 4] = [0, 128, 192, 254];
    if classes == NUM_CLASSES {
        TISSUE_GRAYS[class as usize]
    } else if classes <= 1 {
        0
    } else {
        (class as usize * 255 / (classes - 1)) as u8
    }
}

/// Concatenates per-slice `1 x C x H x W` tensors along the batch axis.
fn stack(tensors: &[Tensor], idxs: &[usize]) -> Result<Tensor> {
    let first = &tensors[idxs[0]];
    let mut shape = first.shape().to_vec();
    shape[0] = idxs.len();
    let mut data = Vec::with_capacity(first.numel() * idxs.len());
    for &i in idxs {
        if tensors[i].shape() != first.shape() {
            return Err(Error::shape("batch item", first.shape(), tensors[i].shape()));
        }
        data.extend_from_slice(tensors[i].data());
    }
    Tensor::new(shape, data)
}

/// Hard metrics of one partition under eval-mode normalization statistics.
pub fn evaluate(
    model: &Model,
    prepared: &Prepared,
    idxs: &[usize],
    partition: &str,
) -> Result<MetricsReport> {
    let mut counts = ConfusionCounts::new(model.config().num_classes);
    for &i in idxs {
        let pred = argmax_mask(&model.logits_eval(&prepared.inputs[i])?)?;
        counts.accumulate(&pred, &prepared.masks[i])?;
    }
    report(&counts, partition)
}

/// The training loop shared by `train` and `sweep`: Adam on per-pixel
/// cross-entropy, reshuffled batches each epoch, metrics on both partitions
/// after every epoch.
pub fn fit(config: &ExperimentConfig, lambda: f64) -> Result<TrainOutcome> {
    if config.epochs == 0 {
        return Err(Error::invalid("nothing to train (epochs = 0)"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let negation = config.negation_spec(lambda)?;
    let prepared = dataset::prepare(config, &negation)?;
    let mut model = config.build_model(lambda, &mut seeds::stream(config.seed, seeds::INIT))?;
    let ids: Vec<ParamId> = model.params().iter().map(|(id, _, _)| id).collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            ..AdamConfig::default()
        },
        ids.len(),
    );
    let mut shuffle_rng = seeds::stream(config.seed, seeds::SHUFFLE);
    let mut dropout_rng = seeds::stream(config.seed, seeds::DROPOUT);

    let (h, w) = prepared.hw;
    let mut rows = Vec::with_capacity(config.epochs);
    let mut final_reports = None;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut order = prepared.train.clone();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut pixels = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = stack(&prepared.inputs, chunk)?;
            let target = stack(&prepared.targets, chunk)?;
            let mut fwd = model.forward_train(&batch, &mut dropout_rng)?;
            let loss = fwd.tape.softmax_ce_loss(fwd.logits, &target)?;
            let grads = fwd.tape.backward(loss)?;
            let batch_pixels = chunk.len() * h * w;
            loss_sum += fwd.tape.value(loss).item() * batch_pixels as f64;
            pixels += batch_pixels;
            adam.begin_step();
            for (slot, &id) in ids.iter().enumerate() {
                let grad = grads.of(fwd.var(id));
                adam.update(slot, model.params_mut().tensor_mut(id).data_mut(), grad)?;
            }
        }
        let train_report = evaluate(&model, &prepared, &prepared.train, "train")?;
        let val_report = evaluate(&model, &prepared, &prepared.val, "val")?;
        rows.push(EpochRow {
            epoch,
            loss: loss_sum / pixels as f64,
            ac: train_report.ac,
            dc: train_report.dice_macro_incl_bg,
            iou: train_report.iou_macro_incl_bg,
            ac_val: val_report.ac,
            dc_val: val_report.dice_macro_incl_bg,
            iou_val: val_report.iou_macro_incl_bg,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        println!(
            "{} epoch {epoch}/{}: loss {:.4}, train dice {:.4}, val dice {:.4}",
            model.name(),
            config.epochs,
            rows.last().unwrap().loss,
            train_report.dice_macro_incl_bg,
            val_report.dice_macro_incl_bg,
        );
        final_reports = Some((train_report, val_report));
    }
    let (train_report, val_report) = final_reports.expect("epochs >= 1");
    Ok(TrainOutcome {
        model,
        rows,
        train_report,
        val_report,
    })
}

/// The training log as CSV; floats print in shortest round-trip form so the
/// file is bit-faithful to the run.
pub fn run_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from("epoch,loss,ac,dc,iou,ac_val,dc_val,iou_val,wall_seconds\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch, r.loss, r.ac, r.dc, r.iou, r.ac_val, r.dc_val, r.iou_val, r.wall_seconds
        )
        .expect("string write");
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("serializing {}: {e}", path.display())))?;
    write_text(path, &(body + "\n"))
}

fn ensure_out(config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))
}

/// A real weights path; `fresh` is only meaningful to `bench`.
fn required_weights<'c>(config: &'c ExperimentConfig, verb: &str) -> Result<&'c str> {
    match config.weights.as_deref() {
        Some("fresh") | None => Err(Error::invalid(format!(
            "{verb} needs trained weights: set weights = PATH (or pass --weights)"
        ))),
        Some(path) => Ok(path),
    }
}

pub fn cmd_train(config: &ExperimentConfig) -> Result<()> {
    let lambda = config.single_lambda()?;
    let outcome = fit(config, lambda)?;
    ensure_out(config)?;
    write_text(&config.out.join("run.csv"), &run_csv(&outcome.rows))?;
    outcome.model.save(config.out.join("weights.ifseg"))?;
    write_text(&config.out.join("ledger.txt"), &outcome.model.ledger())?;
    write_json(&config.out.join("metrics.json"), &outcome.val_report)?;
    write_json(&config.out.join("metrics_train.json"), &outcome.train_report)?;
    println!(
        "wrote run.csv, weights.ifseg, ledger.txt, metrics.json, metrics_train.json to {}",
        config.out.display()
    );
    Ok(())
}

pub fn cmd_eval(config: &ExperimentConfig) -> Result<()> {
    let lambda = config.single_lambda()?;
    let weights = required_weights(config, "eval")?;
    let negation = config.negation_spec(lambda)?;
    let prepared = dataset::prepare(config, &negation)?;
    let mut model = config.build_model(lambda, &mut seeds::stream(config.seed, seeds::INIT))?;
    model.load(weights)?;
    let val_report = evaluate(&model, &prepared, &prepared.val, "val")?;
    ensure_out(config)?;
    write_json(&config.out.join("metrics.json"), &val_report)?;
    println!(
        "holdout: ac {:.4}, dice {:.4}, iou {:.4} ({} slice(s)); wrote metrics.json to {}",
        val_report.ac,
        val_report.dice_macro_incl_bg,
        val_report.iou_macro_incl_bg,
        prepared.val.len(),
        config.out.display()
    );
    Ok(())
}

pub fn cmd_sweep(config: &ExperimentConfig) -> Result<()> {
    if config.model != ModelKind::IfUnet {
        return Err(Error::invalid("sweep varies the fuzzified model; set model = ifunet"));
    }
    if config.negation != NegationChoice::Sugeno {
        return Err(Error::invalid("sweep varies the Sugeno lambda; set negation = sugeno"));
    }
    if config.lambdas.is_empty() {
        return Err(Error::invalid("sweep needs at least one lambda"));
    }
    for (i, a) in config.lambdas.iter().enumerate() {
        if config.lambdas[..i].contains(a) {
            return Err(Error::invalid(format!("duplicate lambda {a}")));
        }
    }

    let mut columns: Vec<(String, MetricsReport, MetricsReport)> = Vec::new();
    if config.include_baselines {
        for kind in [ModelKind::Unet, ModelKind::AttentionUnet] {
            let mut baseline = config.clone();
            baseline.model = kind;
            let outcome = fit(&baseline, 1.0)?;
            columns.push((kind.as_str().to_string(), outcome.train_report, outcome.val_report));
        }
    }
    for &lambda in &config.lambdas {
        let outcome = fit(config, lambda)?;
        columns.push((format!("lambda={lambda}"), outcome.train_report, outcome.val_report));
    }

    let mut csv = String::from("metric");
    for (name, _, _) in &columns {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    let metric_rows: [(&str, fn(&MetricsReport, &MetricsReport) -> f64); 6] = [
        ("AC", |t, _| t.ac),
        ("DC", |t, _| t.dice_macro_incl_bg),
        ("IoU", |t, _| t.iou_macro_incl_bg),
        ("AC_val", |_, v| v.ac),
        ("DC_val", |_, v| v.dice_macro_incl_bg),
        ("IoU_val", |_, v| v.iou_macro_incl_bg),
    ];
    for (label, pick) in metric_rows {
        csv.push_str(label);
        for (_, train, val) in &columns {
            write!(csv, ",{}", pick(train, val)).expect("string write");
        }
        csv.push('\n');
    }
    ensure_out(config)?;
    write_text(&config.out.join("sweep.csv"), &csv)?;
    println!("wrote sweep.csv ({} column(s)) to {}", columns.len(), config.out.display());
    Ok(())
}

pub fn cmd_segment(config: &ExperimentConfig) -> Result<()> {
    let lambda = config.single_lambda()?;
    let weights = required_weights(config, "segment")?;
    if config.dump_ifs && config.model != ModelKind::IfUnet {
        return Err(Error::invalid("dump_ifs writes fuzzified planes; set model = ifunet"));
    }
    let negation = config.negation_spec(lambda)?;
    let prepared = dataset::prepare(config, &negation)?;
    let mut model = config.build_model(lambda, &mut seeds::stream(config.seed, seeds::INIT))?;
    model.load(weights)?;
    let idxs = match config.partition {
        Partition::Train => prepared.train.clone(),
        Partition::Val => prepared.val.clone(),
        Partition::All => (0..prepared.inputs.len()).collect(),
    };
    ensure_out(config)?;
    let (h, w) = prepared.hw;
    let classes = config.num_classes;
    for (pos, &i) in idxs.iter().enumerate() {
        let pred = argmax_mask(&model.logits_eval(&prepared.inputs[i])?)?;
        let pixels: Vec<u8> = pred.iter().map(|&c| class_gray(c, classes)).collect();
        pgm::write_pgm(config.out.join(format!("slice_{pos:04}.pgm")), w, h, &pixels)?;
        if config.class_maps {
            for k in 0..classes {
                let map: Vec<u8> = pred
                    .iter()
                    .map(|&c| if c as usize == k { 255 } else { 0 })
                    .collect();
                pgm::write_pgm(config.out.join(format!("slice_{pos:04}_class{k}.pgm")), w, h, &map)?;
            }
        }
        if config.dump_ifs {
            // The model input already is the (mu, nu, pi) stack; peel it
            // back apart rather than fuzzifying a second time.
            let planes = prepared.inputs[i].data();
            let entries: Vec<(String, Tensor)> = ["mu", "nu", "pi"]
                .iter()
                .enumerate()
                .map(|(ci, name)| {
                    let plane = planes[ci * h * w..(ci + 1) * h * w].to_vec();
                    Ok((name.to_string(), Tensor::new(vec![h, w], plane)?))
                })
                .collect::<Result<_>>()?;
            container::write_entries(config.out.join(format!("ifs_{pos:04}.ifseg")), &entries)?;
            for (name, plane) in &entries {
                pgm::write_pgm(
                    config.out.join(format!("ifs_{pos:04}_{name}.pgm")),
                    w,
                    h,
                    &pgm::unit_plane_to_bytes(plane),
                )?;
            }
        }
    }
    println!("wrote {} label map(s) to {}", idxs.len(), config.out.display());
    Ok(())
}

pub fn cmd_bench(config: &ExperimentConfig) -> Result<()> {
    if config.repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    let lambda = config.single_lambda()?;
    let negation = config.negation_spec(lambda)?;
    let mut model = config.build_model(lambda, &mut seeds::stream(config.seed, seeds::INIT))?;
    match config.weights.as_deref() {
        None => {
            return Err(Error::invalid(
                "bench needs weights = PATH, or weights = fresh to time an untrained model",
            ))
        }
        // Untrained scale-only norms have no running statistics yet; identity
        // statistics stand in so eval-mode forwards are well defined.
        Some("fresh") => model.assume_identity_stats(),
        Some(path) => model.load(path)?,
    }

    let mut items = dataset::load_slices(config)?;
    if items.is_empty() {
        return Err(Error::invalid("dataset produced no slices to time"));
    }
    let item = items.remove(0);
    let target = (config.target_size, config.target_size);
    let (image, _) = pad_or_crop(&item.image, &item.mask, target)?;
    let encode = || dataset::encode_input(config.model, &config.membership, &negation, &image);

    // Warmup forward, untimed; data loading is excluded throughout.
    let _ = model.logits_eval(&encode()?)?;

    let fuzzifies = config.model == ModelKind::IfUnet;
    let mut fuzz_seconds = 0.0;
    let started = Instant::now();
    if fuzzifies {
        for _ in 0..config.repeats {
            let t0 = Instant::now();
            let input = encode()?;
            fuzz_seconds += t0.elapsed().as_secs_f64();
            let _ = model.logits_eval(&input)?;
        }
    } else {
        let input = encode()?;
        for _ in 0..config.repeats {
            let _ = model.logits_eval(&input)?;
        }
    }
    let timing = TimingReport {
        model: model.name().to_string(),
        trainable_params: model.count_params(),
        mean_inference_seconds: started.elapsed().as_secs_f64() / config.repeats as f64,
        mean_fuzzification_seconds: fuzz_seconds / config.repeats as f64,
        repeats: config.repeats,
    };
    ensure_out(config)?;
    write_json(&config.out.join("timing.json"), &timing)?;
    println!(
        "{}: {} params, mean inference {:.6} s over {} repeat(s) (fuzzification {:.6} s); wrote timing.json to {}",
        timing.model,
        timing.trainable_params,
        timing.mean_inference_seconds,
        timing.repeats,
        timing.mean_fuzzification_seconds,
        config.out.display()
    );
    Ok(())
}

/// Runs the finite-difference suite plus the deliberately-broken control.
/// Returns the process exit code: 0 all good, 1 any gradient failure.
pub fn cmd_gradcheck(seed: u64) -> Result<i32> {
    let reports = gradcheck::full_suite(seed, GRADCHECK_ROUNDS)?;
    let mut failures = Vec::new();
    for r in &reports {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<16} max rel err {:.3e} over {} values (tolerance {:.0e}) {verdict}",
            r.op, r.max_rel_err, r.checked, r.tolerance
        );
        if !r.passed() {
            failures.push(format!("{}: max rel err {:.3e}", r.op, r.max_rel_err));
        }
    }
    // A checker that passes a corrupted backward rule proves nothing.
    let control = gradcheck::negative_control()?;
    if control.passed() {
        eprintln!("negative control FAILED to trip the checker");
        return Ok(1);
    }
    println!("negative control trips as intended (max rel err {:.3e})", control.max_rel_err);
    if failures.is_empty() {
        println!("all {} gradient checks passed ({} shapes per op)", reports.len(), GRADCHECK_ROUNDS);
        Ok(0)
    } else {
        for f in &failures {
            eprintln!("gradient check failed: {f}");
        }
        Ok(1)
    }
}
