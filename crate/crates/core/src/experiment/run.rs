use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::plan::{DatasetSource, ExperimentPlan};
use super::report;
use crate::attacks::{craft, filter_successful, AdvBatch, AttackMethod};
use crate::binio;
use crate::data::container::{DType, Tensor};
use crate::data::{class_counts, generate_synthetic, split_balanced, Dataset, DatasetManifest, Splits};
use crate::diffnet::{checkpoint, DiffNet};
use crate::error::{Error, Result};
use crate::evaluation::{
    accuracy, auprc_table, risk_ledger_from_run, risk_with_uad, risk_without_uad, AuprcTable, Risk, RiskLedger,
};
use crate::seed;
use crate::training::{train, write_trace, Regime};
use crate::uad::{self, calibrate_thresholds, defended_inference, detection_scores, fit_uad, UadModel, UadSettings};

/// Provenance of one run. Timings vary between runs; everything else is a
/// function of the plan.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    /// Path relative to the output directory → hex SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub completed: bool,
    pub failed_stage: Option<String>,
}

pub const RUN_RECORD_FILE: &str = "run_record.json";
pub const SUMMARY_FILE: &str = "reports/summary.json";

/// Per-regime results that do not depend on the attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: Regime,
    pub clean_accuracy: f64,
    /// Share of pseudo-labels matching the sealed labels (SSAT only).
    pub pseudo_label_agreement: Option<f64>,
    /// Share of clean test samples the calibrated detector rejects.
    pub clean_rejection_rate: Option<f64>,
}

/// Results for one (regime, attack point) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub regime: Regime,
    pub method: AttackMethod,
    pub strength: f64,
    pub clean_accuracy: f64,
    pub adv_accuracy: f64,
    pub attacked: usize,
    pub successful: usize,
    pub max_linf: f64,
    pub auprc: Option<AuprcTable>,
    pub ledger_without_uad: RiskLedger,
    pub ledger_with_uad: Option<RiskLedger>,
    pub risk_without_uad: Risk,
    pub risk_with_uad: Option<Risk>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub class_names: Vec<String>,
    pub split_counts: BTreeMap<String, Vec<usize>>,
    pub regimes: Vec<RegimeSummary>,
    pub cells: Vec<CellResult>,
}

impl ExperimentSummary {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = binio::read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn cell(&self, regime: Regime, method: AttackMethod, strength: f64) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.regime == regime && c.method == method && c.strength == strength)
    }

    pub fn regime(&self, regime: Regime) -> Option<&RegimeSummary> {
        self.regimes.iter().find(|r| r.regime == regime)
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub summary: ExperimentSummary,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(binio::read_file(path)?)))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| Error::input(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Point label used in file names, e.g. `pgd_0.1`.
pub fn point_name(method: AttackMethod, strength: f64) -> String {
    format!("{}_{}", method.name(), strength)
}

struct Runner<'a> {
    plan: &'a ExperimentPlan,
    out: PathBuf,
    record: RunRecord,
    progress: &'a mut dyn FnMut(&str),
}

impl Runner<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        (self.progress)(name);
        let start = Instant::now();
        match f(self) {
            Ok(v) => {
                self.record
                    .timings
                    .insert(name.to_string(), start.elapsed().as_secs_f64());
                Ok(v)
            }
            Err(e) => {
                self.record.failed_stage = Some(name.to_string());
                // best effort: the stage error matters more than a failed record write
                let _ = self.write_record();
                Err(Error::Stage {
                    stage: name.to_string(),
                    source: Box::new(e),
                })
            }
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn register(&mut self, rel: &str) -> Result<()> {
        let hash = sha256_file(&self.path(rel))?;
        self.record.artifacts.insert(rel.to_string(), hash);
        Ok(())
    }

    fn seed(&mut self, labels: &[&str]) -> u64 {
        let s = seed::derive(self.plan.seed, labels);
        self.record.seeds.insert(labels.join("/"), s);
        s
    }

    fn write_record(&self) -> Result<()> {
        binio::write_atomic(&self.path(RUN_RECORD_FILE), &json_bytes(&self.record)?)
    }

    fn load_data(&mut self) -> Result<(Splits, Vec<String>)> {
        let (splits, manifest) = match &self.plan.dataset {
            DatasetSource::Directory(dir) => Splits::load(dir)?,
            DatasetSource::Synthetic(spec) => {
                let dir = self.path("data");
                let data_seed = self.seed(&["data"]);
                let split_seed = self.seed(&["split"]);
                if !dir.join(crate::data::TEST_FILE).exists() {
                    let spec = crate::data::SynthSpec {
                        seed: data_seed,
                        ..spec.clone()
                    };
                    let (pool, mut manifest) = generate_synthetic(&spec)?;
                    let [a, b, c] = self.plan.split;
                    let splits = split_balanced(&pool, a, b, c, split_seed)?;
                    let k = manifest.num_classes();
                    manifest.splits = BTreeMap::from([
                        ("train".to_string(), class_counts(splits.train.require_labels()?, k)),
                        ("unlabeled".to_string(), class_counts(&splits.unlabeled_audit, k)),
                        ("test".to_string(), class_counts(splits.test.require_labels()?, k)),
                    ]);
                    splits.save(&dir, &manifest)?;
                }
                for f in [
                    crate::data::TRAIN_FILE,
                    crate::data::UNLABELED_FILE,
                    crate::data::TEST_FILE,
                    crate::data::MANIFEST_FILE,
                ] {
                    self.register(&format!("data/{f}"))?;
                }
                Splits::load(&dir)?
            }
        };
        let seen = splits.train.num_classes_seen().max(splits.test.num_classes_seen());
        let names = match manifest {
            Some(DatasetManifest { class_names, .. }) if class_names.len() >= seen => class_names,
            _ => (0..seen).map(|k| format!("class_{k}")).collect(),
        };
        if splits.train.is_empty() || splits.test.is_empty() {
            return Err(Error::Data("train and test splits must be non-empty".into()));
        }
        Ok((splits, names))
    }

    fn train_regime(&mut self, regime: Regime, splits: &Splits, classes: usize) -> Result<(DiffNet, Option<f64>)> {
        ensure_dir(&self.path("models"))?;
        let model_rel = format!("models/{regime}.adsh");
        let pseudo_rel = format!("models/{regime}_pseudo.json");
        let net_seed = self.seed(&["net"]);
        let train_seed = self.seed(&["train"]);
        if !self.path(&model_rel).exists() {
            let net = DiffNet::build(self.plan.net_config(splits.train.dims, classes, net_seed))?;
            let cfg = crate::training::TrainConfig {
                regime,
                seed: train_seed,
                ..self.plan.train.clone()
            };
            let outcome = train(net, &splits.train, Some(&splits.unlabeled), &cfg)?;
            let mut net = outcome.net;
            net.round_to_f32();
            write_trace(&outcome.trace, &self.path(&format!("models/{regime}_loss.csv")))?;
            if let Some(p) = &outcome.pseudo {
                let agreement = (!splits.unlabeled_audit.is_empty()).then(|| p.agreement(&splits.unlabeled_audit));
                binio::write_atomic(&self.path(&pseudo_rel), &json_bytes(&agreement)?)?;
            }
            checkpoint::save(&net, &self.path(&model_rel))?;
        }
        let net = checkpoint::load(&self.path(&model_rel))?;
        if net.num_classes() != classes || net.input_len() != splits.train.dims.len() {
            return Err(Error::State(format!("{model_rel} does not match the dataset")));
        }
        self.register(&model_rel)?;
        let mut agreement = None;
        if self.path(&pseudo_rel).exists() {
            let bytes = binio::read_file(&self.path(&pseudo_rel))?;
            agreement =
                serde_json::from_slice(&bytes).map_err(|e| Error::format(self.path(&pseudo_rel), e.to_string()))?;
        }
        Ok((net, agreement))
    }

    fn attack_point(
        &mut self,
        regime: Regime,
        net: &DiffNet,
        test: &Dataset,
        method: AttackMethod,
        strength: f64,
    ) -> Result<AdvBatch> {
        let dir = format!("attacks/{regime}");
        ensure_dir(&self.path(&dir))?;
        let rel = format!("{dir}/{}.adtn", point_name(method, strength));
        let labels = test.require_labels()?.to_vec();
        // derived up front so a resumed run records the same seeds
        let attack_seed = self.seed(&["attack", regime.name(), &point_name(method, strength)]);
        if !self.path(&rel).exists() {
            let mut spec = self.plan.attack_spec(method, strength);
            spec.seed = attack_seed;
            let adv = craft(net, &test.to_batch(), &spec)?;
            let ds = Dataset::new(test.dims, adv.perturbed, Some(labels.clone()))?;
            ds.save_f64(&self.path(&rel))?;
        }
        let t = Tensor::load(&self.path(&rel))?;
        if t.dtype != DType::F64 {
            return Err(Error::format(self.path(&rel), "adversarial archives must be f64"));
        }
        let stored = Dataset::from_tensor(t)?;
        if stored.len() != test.len() || stored.labels.as_deref() != Some(&labels[..]) {
            return Err(Error::format(self.path(&rel), "archive does not match the test split"));
        }
        self.register(&rel)?;
        AdvBatch::from_perturbed(net, test.images.clone(), stored.images, labels)
    }

    fn detector(&mut self, regime: Regime, net: &DiffNet, splits: &Splits) -> Result<UadModel> {
        ensure_dir(&self.path("detectors"))?;
        let rel = format!("detectors/{regime}.adud");
        let uad_seed = self.seed(&["uad", regime.name()]);
        if !self.path(&rel).exists() {
            let settings = UadSettings {
                seed: uad_seed,
                ..self.plan.uad
            };
            let fitted = fit_uad(net, &splits.train, &settings)?;
            let calibrated = calibrate_thresholds(&fitted, net, &splits.unlabeled, self.plan.percentile)?;
            uad::save(&calibrated, &self.path(&rel))?;
        }
        let model = uad::load(&self.path(&rel))?;
        self.register(&rel)?;
        Ok(model)
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cell(
    plan: &ExperimentPlan,
    regime: Regime,
    net: &DiffNet,
    detector: Option<&UadModel>,
    test: &Dataset,
    adv: &AdvBatch,
    (method, strength): (AttackMethod, f64),
    classes: usize,
) -> Result<CellResult> {
    let labels = test.require_labels()?;
    let clean_accuracy = accuracy(&net.predict(&test.images)?, labels)?;
    let (successful, count) = filter_successful(adv, net)?;
    let detector = detector.filter(|_| strength > 0.0);
    let auprc = match detector {
        Some(d) if count > 0 => {
            match auprc_table(&detection_scores(net, d, &test.images, &successful.perturbed)?, classes) {
                Ok(t) => Some(t),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            }
        }
        _ => None,
    };
    let ledger_without_uad = risk_ledger_from_run(net, None, test, adv, plan.risk_mode)?;
    let ledger_with_uad = detector
        .map(|d| risk_ledger_from_run(net, Some(d), test, adv, plan.risk_mode))
        .transpose()?;
    Ok(CellResult {
        regime,
        method,
        strength,
        clean_accuracy,
        adv_accuracy: 1.0 - adv.success_count() as f64 / adv.len() as f64,
        attacked: adv.len(),
        successful: count,
        max_linf: adv.max_linf(),
        auprc,
        risk_without_uad: risk_without_uad(&ledger_without_uad, &plan.risk_weights)?,
        risk_with_uad: ledger_with_uad
            .as_ref()
            .map(|l| risk_with_uad(l, &plan.risk_weights))
            .transpose()?,
        ledger_without_uad,
        ledger_with_uad,
    })
}

/// Runs the full plan under `plan.out`, reusing any stage artifact already on disk.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<RunOutcome> {
    run_experiment_with(plan, &mut |_| {})
}

/// Like [`run_experiment`], calling `progress` with each stage name as it starts.
pub fn run_experiment_with(plan: &ExperimentPlan, progress: &mut dyn FnMut(&str)) -> Result<RunOutcome> {
    plan.validate()?;
    ensure_dir(&plan.out)?;
    let config_hash = plan.config_hash()?;
    let mut runner = Runner {
        plan,
        out: plan.out.clone(),
        record: RunRecord {
            config_hash: config_hash.clone(),
            seed: plan.seed,
            ..RunRecord::default()
        },
        progress,
    };
    let (splits, class_names) = runner.stage("data", |r| r.load_data())?;
    let classes = class_names.len();
    let needs_detector = plan.attacks.iter().any(|g| g.strengths.iter().any(|&s| s > 0.0));

    let mut regimes = Vec::new();
    let mut cells = Vec::new();
    for &regime in &plan.regimes {
        let (net, agreement) =
            runner.stage(&format!("train:{regime}"), |r| r.train_regime(regime, &splits, classes))?;
        let detector = if needs_detector {
            Some(runner.stage(&format!("uad:{regime}"), |r| r.detector(regime, &net, &splits))?)
        } else {
            None
        };
        for grid in &plan.attacks {
            for &strength in &grid.strengths {
                let point = point_name(grid.method, strength);
                let adv = runner.stage(&format!("attack:{regime}:{point}"), |r| {
                    r.attack_point(regime, &net, &splits.test, grid.method, strength)
                })?;
                let cell = runner.stage(&format!("evaluate:{regime}:{point}"), |_| {
                    evaluate_cell(
                        plan,
                        regime,
                        &net,
                        detector.as_ref(),
                        &splits.test,
                        &adv,
                        (grid.method, strength),
                        classes,
                    )
                })?;
                cells.push(cell);
            }
        }
        let clean_rejection_rate = match &detector {
            Some(d) => {
                let decisions = runner.stage(&format!("uad-test:{regime}"), |_| {
                    defended_inference(&net, d, &splits.test.images)
                })?;
                Some(decisions.iter().filter(|d| d.is_rejected()).count() as f64 / decisions.len() as f64)
            }
            None => None,
        };
        regimes.push(RegimeSummary {
            regime,
            clean_accuracy: accuracy(&net.predict(&splits.test.images)?, splits.test.require_labels()?)?,
            pseudo_label_agreement: agreement,
            clean_rejection_rate,
        });
    }

    let mut split_counts = BTreeMap::new();
    split_counts.insert("train".into(), class_counts(splits.train.require_labels()?, classes));
    split_counts.insert("test".into(), class_counts(splits.test.require_labels()?, classes));
    if !splits.unlabeled_audit.is_empty() {
        split_counts.insert("unlabeled".into(), class_counts(&splits.unlabeled_audit, classes));
    }
    let summary = ExperimentSummary {
        name: plan.name.clone(),
        config_hash,
        seed: plan.seed,
        seeds: runner.record.seeds.clone(),
        class_names,
        split_counts,
        regimes,
        cells,
    };
    runner.stage("reports", |r| {
        let written = report::write_reports(&r.out, plan, &summary)?;
        for rel in written {
            r.register(&rel)?;
        }
        Ok(())
    })?;
    runner.record.completed = true;
    runner.write_record()?;
    Ok(RunOutcome {
        record: runner.record,
        summary,
    })
}
