use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use advshield::attacks::{craft, AdvBatch, AttackMethod};
use advshield::data::container::{DType, Tensor};
use advshield::data::{
    class_counts, generate_synthetic, import_csv, load_dataset, preprocess, split_balanced, Dataset, DatasetManifest,
    Splits, MANIFEST_FILE, TEST_FILE, TRAIN_FILE, UNLABELED_FILE,
};
use advshield::diffnet::checkpoint;
use advshield::diffnet::{DiffNet, InputDims};
use advshield::evaluation::{accuracy, auprc_table, risk_ledger_from_run, risk_with_uad, risk_without_uad, AdvMode};
use advshield::experiment::{
    emit_curves, parse_adv_mode, point_name, run_experiment_with, DatasetSource, ExperimentPlan, ExperimentSummary,
};
use advshield::projection::{project_features, write_projection};
use advshield::training::{dataset_accuracy, train, write_trace, Regime};
use advshield::uad::{self, calibrate_thresholds, defended_inference, detection_scores, fit_uad, DiagReg, UadSettings};
use advshield::{seed, Error, Result};

use crate::{
    AttackArgs, CalibrateArgs, Cli, Command, CurvesArgs, DataCommand, EvalArgs, FitUadArgs, InferArgs, ProjectArgs,
    TrainArgs,
};

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Data(DataCommand::Gen { spec }) => data_gen(cli, spec.as_deref()),
        Command::Data(DataCommand::Split {
            data,
            train,
            unlabeled,
            test,
        }) => data_split(cli, data, [*train, *unlabeled, *test]),
        Command::Data(DataCommand::Import {
            csv,
            height,
            width,
            channels,
            scale,
            crop,
        }) => data_import(cli, csv, InputDims::new(*height, *width, *channels), *scale, *crop),
        Command::Train(a) => train_cmd(cli, a),
        Command::Attack(a) => attack_cmd(cli, a),
        Command::FitUad(a) => fit_uad_cmd(cli, a),
        Command::Calibrate(a) => calibrate_cmd(cli, a),
        Command::Infer(a) => infer_cmd(cli, a),
        Command::Eval(a) => eval_cmd(cli, a),
        Command::Run => run_cmd(cli),
        Command::Curves(a) => curves_cmd(cli, a),
        Command::Project(a) => project_cmd(cli, a),
    }
}

/// The plan from `--config` (or the built-in synthetic plan) with `--seed` applied.
fn plan(cli: &Cli) -> Result<ExperimentPlan> {
    let mut plan = match &cli.config {
        Some(path) => ExperimentPlan::load(path)?,
        None => ExperimentPlan::synthetic_default(),
    };
    if let Some(s) = cli.seed {
        plan.seed = s;
    }
    Ok(plan)
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::config("--out is required for this command"))
}

/// A directory argument stands for its conventional split file.
fn resolve(path: &Path, default_file: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default_file)
    } else {
        path.to_path_buf()
    }
}

fn json_out(cli: &Cli, value: &serde_json::Value, default_stdout: bool) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::input(e.to_string()))?;
    match (&cli.out, default_stdout) {
        (Some(path), true) => write_file(path, text.as_bytes()),
        _ => emit(&text),
    }
}

/// Writes a line to stdout; a closed pipe is an i/o error rather than a panic.
fn emit(text: &str) -> Result<()> {
    writeln!(std::io::stdout().lock(), "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_out(cli: &Cli, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::input(e.to_string());
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(&row).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
    match &cli.out {
        Some(path) => write_file(path, &bytes),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn data_gen(cli: &Cli, spec: Option<&Path>) -> Result<()> {
    let out = require_out(cli)?;
    let mut plan = match spec {
        Some(path) => ExperimentPlan::load(path)?,
        None => plan(cli)?,
    };
    if let Some(s) = cli.seed {
        plan.seed = s;
    }
    let DatasetSource::Synthetic(spec) = plan.dataset else {
        return Err(Error::config("data gen needs a synthetic dataset spec"));
    };
    let spec = advshield::data::SynthSpec {
        seed: seed::derive(plan.seed, &["data"]),
        ..spec
    };
    let (pool, manifest) = generate_synthetic(&spec)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    pool.save(&out.join("pool.adtn"))?;
    manifest.save(&out.join(MANIFEST_FILE))?;
    eprintln!("wrote {} samples to {}", pool.len(), out.join("pool.adtn").display());
    Ok(())
}

fn data_split(cli: &Cli, pool_path: &Path, sizes: [usize; 3]) -> Result<()> {
    let out = require_out(cli)?;
    let base = cli.seed.unwrap_or(0);
    let (pool, manifest) = load_dataset(pool_path)?;
    pool.require_labels()?;
    let classes = manifest
        .as_ref()
        .map_or_else(|| pool.num_classes_seen(), |m| m.num_classes());
    let [a, b, c] = sizes;
    let splits = split_balanced(&pool, a, b, c, seed::derive(base, &["split"]))?;
    let mut manifest = manifest.unwrap_or_else(|| generic_manifest("imported", pool.dims, classes, base));
    manifest.splits = BTreeMap::from([
        (
            "train".to_string(),
            class_counts(splits.train.require_labels()?, classes),
        ),
        ("unlabeled".to_string(), class_counts(&splits.unlabeled_audit, classes)),
        ("test".to_string(), class_counts(splits.test.require_labels()?, classes)),
    ]);
    splits.save(out, &manifest)?;
    eprintln!("wrote {a}/{b}/{c} train/unlabeled/test samples to {}", out.display());
    Ok(())
}

fn generic_manifest(name: &str, dims: InputDims, classes: usize, seed: u64) -> DatasetManifest {
    DatasetManifest {
        name: name.into(),
        class_names: (0..classes).map(|k| format!("class{k}")).collect(),
        dims,
        splits: BTreeMap::new(),
        pixel_scale: "[0,1]".into(),
        seed,
    }
}

fn data_import(cli: &Cli, csv_path: &Path, dims: InputDims, scale: bool, crop: Option<usize>) -> Result<()> {
    let out = require_out(cli)?;
    let mut ds = import_csv(csv_path, dims, scale)?;
    if let Some(crop) = crop {
        let (images, cropped) = preprocess(&ds.images, ds.dims, crop, false)?;
        ds = Dataset::new(cropped, images, ds.labels)?;
    }
    if ds.images.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Data("pixels outside [0,1]; pass --scale for 0-255 data".into()));
    }
    let classes = ds.num_classes_seen();
    let mut manifest = generic_manifest("imported", ds.dims, classes, 0);
    manifest.pixel_scale = if scale { "[0,255]/255" } else { "[0,1]" }.into();
    manifest
        .splits
        .insert("pool".into(), class_counts(ds.require_labels()?, classes));
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    ds.save(&out.join("pool.adtn"))?;
    manifest.save(&out.join(MANIFEST_FILE))?;
    eprintln!("imported {} samples into {}", ds.len(), out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<DiffNet> {
    checkpoint::load(path)
}

fn load_labeled(path: &Path, default_file: &str) -> Result<Dataset> {
    let (ds, _) = load_dataset(&resolve(path, default_file))?;
    ds.require_labels()?;
    Ok(ds)
}

fn train_cmd(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let out = require_out(cli)?;
    let plan = plan(cli)?;
    let regime: Regime = args.regime.parse()?;
    let (splits, manifest) = Splits::load(&args.data)?;
    let seen = splits.train.num_classes_seen().max(splits.test.num_classes_seen());
    let classes = manifest.map_or(seen, |m| m.num_classes().max(seen));
    let net = DiffNet::build(plan.net_config(splits.train.dims, classes, seed::derive(plan.seed, &["net"])))?;
    let cfg = advshield::training::TrainConfig {
        regime,
        seed: seed::derive(plan.seed, &["train"]),
        ..plan.train.clone()
    };
    let outcome = train(net, &splits.train, Some(&splits.unlabeled), &cfg)?;
    let mut net = outcome.net;
    net.round_to_f32();
    checkpoint::save(&net, out)?;
    write_trace(&outcome.trace, &out.with_extension("loss.csv"))?;
    let agreement = outcome
        .pseudo
        .as_ref()
        .filter(|_| !splits.unlabeled_audit.is_empty())
        .map(|p| p.agreement(&splits.unlabeled_audit));
    let report = serde_json::json!({
        "regime": regime.name(),
        "model": out,
        "model_hash": checkpoint::model_hash(&net)?,
        "train_accuracy": dataset_accuracy(&net, &splits.train)?,
        "test_accuracy": dataset_accuracy(&net, &splits.test)?,
        "pseudo_label_agreement": agreement,
        "final_loss": outcome.trace.last().map(|e| e.total),
    });
    json_out(cli, &report, false)
}

fn attack_cmd(cli: &Cli, args: &AttackArgs) -> Result<()> {
    let out = require_out(cli)?;
    let plan = plan(cli)?;
    let net = load_model(&args.model)?;
    let data = load_labeled(&args.data, TEST_FILE)?;
    let method: AttackMethod = args.method.parse()?;
    let strength = if method == AttackMethod::Cw { args.c } else { args.eps };
    let mut spec = plan.attack_spec(method, strength);
    if let Some(steps) = args.steps {
        spec.steps = steps;
    }
    if let Some(step) = args.step_size {
        spec.step_size = step;
    }
    if let Some(lr) = args.cw_lr {
        spec.cw_lr = lr;
    }
    spec.random_start = args.random_start;
    let point = point_name(method, strength);
    spec.seed = seed::derive(plan.seed, &["attack", &point]);
    let adv = craft(&net, &data.to_batch(), &spec)?;
    let archive = Dataset::new(data.dims, adv.perturbed.clone(), Some(adv.labels.clone()))?;
    archive.save_f64(out)?;
    let mut rows = Vec::with_capacity(adv.len());
    for i in 0..adv.len() {
        let linf = (0..adv.perturbed.ncols())
            .map(|j| (adv.perturbed[(i, j)] - adv.originals[(i, j)]).abs())
            .fold(0.0, f64::max);
        rows.push(vec![
            i.to_string(),
            adv.labels[i].to_string(),
            adv.predictions[i].to_string(),
            adv.success[i].to_string(),
            linf.to_string(),
        ]);
    }
    let manifest_path = out.with_extension("csv");
    let mut w = csv::Writer::from_path(&manifest_path).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    let to_err = |e: csv::Error| Error::format(&manifest_path, e.to_string());
    w.write_record(["index", "label", "prediction", "success", "linf"])
        .map_err(to_err)?;
    for row in rows {
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(&manifest_path, e))?;
    let report = serde_json::json!({
        "method": method.name(),
        "strength": strength,
        "attacked": adv.len(),
        "successful": adv.success_count(),
        "adv_accuracy": 1.0 - adv.success_count() as f64 / adv.len().max(1) as f64,
        "max_linf": adv.max_linf(),
    });
    json_out(cli, &report, false)
}

fn fit_uad_cmd(cli: &Cli, args: &FitUadArgs) -> Result<()> {
    let out = require_out(cli)?;
    let base = cli.seed.unwrap_or(0);
    let net = load_model(&args.model)?;
    let data = load_labeled(&args.data, TRAIN_FILE)?;
    let settings = UadSettings {
        components: args.components,
        diag_reg: if args.absolute_reg {
            DiagReg::Absolute(args.diag_reg)
        } else {
            DiagReg::Relative(args.diag_reg)
        },
        tol: args.tol,
        max_iter: args.max_iter,
        seed: seed::derive(base, &["uad"]),
    };
    let model = fit_uad(&net, &data, &settings)?;
    uad::save(&model, out)?;
    eprintln!(
        "fitted {} class mixtures over {} features; run `calibrate` before inference",
        model.num_classes(),
        model.feature_dim()
    );
    Ok(())
}

fn calibrate_cmd(cli: &Cli, args: &CalibrateArgs) -> Result<()> {
    let net = load_model(&args.model)?;
    let detector = uad::load(&args.detector)?;
    let (held_out, _) = load_dataset(&resolve(&args.data, UNLABELED_FILE))?;
    let calibrated = calibrate_thresholds(&detector, &net, &held_out, args.percentile)?;
    let out = cli.out.as_deref().unwrap_or(&args.detector);
    uad::save(&calibrated, out)?;
    let thresholds = calibrated.thresholds.clone().unwrap_or_default();
    let report = serde_json::json!({ "percentile": args.percentile, "thresholds": thresholds });
    json_out(cli, &report, false)
}

fn infer_cmd(cli: &Cli, args: &InferArgs) -> Result<()> {
    let net = load_model(&args.model)?;
    let detector = uad::load(&args.detector)?;
    let (data, _) = load_dataset(&resolve(&args.data, TEST_FILE))?;
    let decisions = defended_inference(&net, &detector, &data.images)?;
    let rejected = decisions.iter().filter(|d| d.is_rejected()).count();
    let rows = decisions
        .iter()
        .enumerate()
        .map(|(i, d)| {
            vec![
                i.to_string(),
                if d.is_rejected() { "rejected" } else { "accepted" }.to_string(),
                d.predicted().to_string(),
                d.score().to_string(),
            ]
        })
        .collect();
    csv_out(cli, &["index", "decision", "predicted", "score"], rows)?;
    eprintln!("{rejected} of {} inputs rejected", decisions.len());
    Ok(())
}

fn eval_cmd(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let plan = plan(cli)?;
    let net = load_model(&args.model)?;
    let detector = args.detector.as_deref().map(uad::load).transpose()?;
    let clean = load_labeled(&args.clean, TEST_FILE)?;
    let mode: AdvMode = parse_adv_mode(&args.mode)?;
    let adv_path = &args.adv;
    let t = Tensor::load(adv_path)?;
    if t.dtype != DType::F64 {
        eprintln!(
            "warning: {} stores f32 pixels; perturbations are rounded",
            adv_path.display()
        );
    }
    let stored = Dataset::from_tensor(t)?;
    let labels = clean.require_labels()?.to_vec();
    if stored.len() != clean.len() || stored.dims != clean.dims {
        return Err(Error::Data(format!(
            "{} has {} rows of {:?}, clean set has {} of {:?}",
            adv_path.display(),
            stored.len(),
            stored.dims,
            clean.len(),
            clean.dims
        )));
    }
    if stored.labels.as_ref().is_some_and(|l| *l != labels) {
        return Err(Error::Data("adversarial labels do not match the clean set".into()));
    }
    let adv = AdvBatch::from_perturbed(&net, clean.images.clone(), stored.images, labels.clone())?;
    let clean_accuracy = accuracy(&net.predict(&clean.images)?, &labels)?;
    let ledger_without = risk_ledger_from_run(&net, None, &clean, &adv, mode)?;
    let mut report = serde_json::json!({
        "clean_accuracy": clean_accuracy,
        "adv_accuracy": 1.0 - adv.success_count() as f64 / adv.len() as f64,
        "attacked": adv.len(),
        "successful": adv.success_count(),
        "max_linf": adv.max_linf(),
        "mode": args.mode,
        "ledger_without_uad": ledger_without,
        "risk_without_uad": risk_without_uad(&ledger_without, &plan.risk_weights)?,
    });
    if let Some(d) = &detector {
        let (successful, _) = advshield::attacks::filter_successful(&adv, &net)?;
        let auprc = match detection_scores(&net, d, &clean.images, &successful.perturbed)
            .and_then(|s| auprc_table(&s, net.num_classes()))
        {
            Ok(t) => Some(t),
            Err(Error::UndefinedMetric(m)) => {
                eprintln!("auprc undefined: {m}");
                None
            }
            Err(e) => return Err(e),
        };
        let ledger_with = risk_ledger_from_run(&net, Some(d), &clean, &adv, mode)?;
        report["auprc"] = serde_json::to_value(auprc).map_err(|e| Error::input(e.to_string()))?;
        report["ledger_with_uad"] = serde_json::to_value(ledger_with).map_err(|e| Error::input(e.to_string()))?;
        report["risk_with_uad"] = serde_json::to_value(risk_with_uad(&ledger_with, &plan.risk_weights)?)
            .map_err(|e| Error::input(e.to_string()))?;
    }
    json_out(cli, &report, true)
}

fn run_cmd(cli: &Cli) -> Result<()> {
    let mut plan = plan(cli)?;
    if let Some(out) = &cli.out {
        plan.out = out.clone();
    }
    let outcome = run_experiment_with(&plan, &mut |stage| eprintln!("stage {stage}"))?;
    let summary = &outcome.summary;
    for cell in &summary.cells {
        eprintln!(
            "{:<5} {:<5} {:<6} adv_acc {:.3}  risk {:.3} -> {}",
            cell.regime.name(),
            cell.method.name(),
            cell.strength,
            cell.adv_accuracy,
            cell.risk_without_uad.average,
            cell.risk_with_uad
                .map_or("NA".to_string(), |r| format!("{:.3}", r.average)),
        );
    }
    emit(&plan.out.join(advshield::experiment::SUMMARY_FILE).display().to_string())
}

fn curves_cmd(cli: &Cli, args: &CurvesArgs) -> Result<()> {
    let out = require_out(cli)?;
    let summary = ExperimentSummary::load(&args.summary)?;
    let written = emit_curves(&summary, out)?;
    for path in written {
        emit(&path.display().to_string())?;
    }
    Ok(())
}

fn project_cmd(cli: &Cli, args: &ProjectArgs) -> Result<()> {
    let out = require_out(cli)?;
    let net = load_model(&args.model)?;
    let (data, _) = load_dataset(&resolve(&args.data, TEST_FILE))?;
    let mut inputs = data.images.clone();
    let mut labels = data.labels.clone();
    let mut flags = vec![false; data.len()];
    if let Some(adv_path) = &args.adv {
        let adv = Dataset::from_tensor(Tensor::load(adv_path)?)?;
        if adv.dims != data.dims {
            return Err(Error::Data("adversarial archive dims differ from the data".into()));
        }
        let n = inputs.nrows();
        let m = adv.len();
        inputs = inputs.insert_rows(n, m, 0.0);
        inputs.rows_mut(n, m).copy_from(&adv.images);
        labels = match (labels, adv.labels) {
            (Some(mut a), Some(b)) => {
                a.extend(b);
                Some(a)
            }
            _ => None,
        };
        flags.extend(std::iter::repeat_n(true, m));
    }
    let points = project_features(&net, &inputs, labels.as_deref(), &flags)?;
    write_projection(&points, out)?;
    eprintln!("projected {} points to {}", points.len(), out.display());
    Ok(())
}
