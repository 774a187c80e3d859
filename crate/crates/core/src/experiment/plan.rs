use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{AttackMethod, AttackSpec};
use crate::data::SynthSpec;
use crate::diffnet::{Activation, InputDims, LayerSpec, NetConfig};
use crate::error::{Error, Result};
use crate::evaluation::{AdvMode, RiskWeights};
use crate::kv::KvFile;
use crate::training::{Regime, TrainConfig, TRAIN_KEYS};
use crate::uad::{DiagReg, UadSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    /// Generate a pool and split it under `<out>/data`.
    Synthetic(SynthSpec),
    /// A directory holding `train.adtn`, `unlabeled.adtn` and `test.adtn`.
    Directory(PathBuf),
}

/// One attack method swept over an ascending list of strengths (ε, or c for C&W).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackGrid {
    pub method: AttackMethod,
    pub strengths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub name: String,
    pub dataset: DatasetSource,
    /// Train / unlabeled / test sizes for synthetic data.
    pub split: [usize; 3],
    pub hidden: Vec<LayerSpec>,
    pub activation: Activation,
    pub regimes: Vec<Regime>,
    /// Shared training settings; `regime` is replaced per run.
    pub train: TrainConfig,
    pub attacks: Vec<AttackGrid>,
    pub pgd_steps: usize,
    pub cw_steps: usize,
    pub cw_lr: f64,
    pub uad: UadSettings,
    pub percentile: f64,
    pub risk_weights: RiskWeights,
    pub risk_mode: AdvMode,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
}

const PLAN_KEYS: &[&str] = &[
    "name",
    "dataset",
    "synth.classes",
    "synth.height",
    "synth.width",
    "synth.channels",
    "synth.sigma",
    "synth.wave",
    "synth.patch",
    "synth.per_class",
    "split.train",
    "split.unlabeled",
    "split.test",
    "net.hidden",
    "net.activation",
    "regimes",
    "attack.fgsm",
    "attack.pgd",
    "attack.cw",
    "attack.pgd_steps",
    "attack.cw_steps",
    "attack.cw_lr",
    "uad.components",
    "uad.diag_reg",
    "uad.diag_reg_mode",
    "uad.tol",
    "uad.max_iter",
    "uad.percentile",
    "risk.r_cln_prd",
    "risk.r_cln_uad",
    "risk.r_adv_prd",
    "risk.mode",
    "seed",
    "out",
];

/// `32` is a dense layer of width 32; `conv:F:K` is a convolution with `F`
/// filters of size `K x K`.
pub fn parse_layer(s: &str) -> Result<LayerSpec> {
    let bad = || Error::config(format!("bad layer `{s}`; expected WIDTH or conv:FILTERS:KERNEL"));
    if let Some(rest) = s.strip_prefix("conv:") {
        let (f, k) = rest.split_once(':').ok_or_else(bad)?;
        return Ok(LayerSpec::Conv {
            filters: f.trim().parse().map_err(|_| bad())?,
            kernel: k.trim().parse().map_err(|_| bad())?,
        });
    }
    Ok(LayerSpec::Dense {
        width: s.trim().parse().map_err(|_| bad())?,
    })
}

pub fn parse_activation(s: &str) -> Result<Activation> {
    match s {
        "relu" => Ok(Activation::Relu),
        "identity" => Ok(Activation::Identity),
        other => Err(Error::config(format!("unknown activation `{other}`"))),
    }
}

pub fn parse_adv_mode(s: &str) -> Result<AdvMode> {
    match s {
        "successful" => Ok(AdvMode::Successful),
        "raw" => Ok(AdvMode::Raw),
        other => Err(Error::config(format!("unknown risk mode `{other}` (successful|raw)"))),
    }
}

impl ExperimentPlan {
    /// The frozen desk-scale synthetic protocol.
    pub fn synthetic_default() -> Self {
        Self {
            name: "synthetic".into(),
            dataset: DatasetSource::Synthetic(SynthSpec {
                samples_per_class: 840,
                ..SynthSpec::default()
            }),
            split: [1500, 500, 500],
            hidden: vec![LayerSpec::Dense { width: 32 }],
            activation: Activation::Relu,
            regimes: vec![Regime::Nt, Regime::At, Regime::Ssat],
            train: TrainConfig {
                batch_size: 16,
                lr: 0.02,
                train_eps: [0.05, 0.15],
                warmup_epochs: 5,
                ..TrainConfig::default()
            },
            attacks: vec![
                AttackGrid {
                    method: AttackMethod::Fgsm,
                    strengths: vec![0.0, 0.05, 0.1, 0.2],
                },
                AttackGrid {
                    method: AttackMethod::Pgd,
                    strengths: vec![0.0, 0.05, 0.1, 0.2],
                },
                AttackGrid {
                    method: AttackMethod::Cw,
                    strengths: vec![0.0, 0.1, 1.0],
                },
            ],
            pgd_steps: 10,
            cw_steps: 100,
            cw_lr: 0.01,
            uad: UadSettings::default(),
            percentile: 5.0,
            risk_weights: RiskWeights::default(),
            risk_mode: AdvMode::Successful,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }

    /// Overrides [`ExperimentPlan::synthetic_default`] with the keys of `kv`.
    /// Training keys take a `train.` prefix. A relative `dataset` directory
    /// is resolved against `base_dir`.
    pub fn from_kv(kv: &KvFile, base_dir: &Path) -> Result<Self> {
        let train_keys: Vec<String> = TRAIN_KEYS.iter().map(|k| format!("train.{k}")).collect();
        for key in kv.keys() {
            if !PLAN_KEYS.contains(&key) && !train_keys.iter().any(|k| k == key) {
                return Err(Error::config(format!("unknown plan key `{key}`")));
            }
        }
        if kv.get_str("train.regime").is_some() {
            return Err(Error::config("set regimes with `regimes`, not `train.regime`"));
        }
        let mut plan = Self::synthetic_default();
        if let Some(v) = kv.get_str("name") {
            plan.name = v.to_string();
        }
        let mut synth = match &plan.dataset {
            DatasetSource::Synthetic(s) => s.clone(),
            DatasetSource::Directory(_) => SynthSpec::default(),
        };
        synth.num_classes = kv.get_or("synth.classes", synth.num_classes)?;
        synth.dims = InputDims::new(
            kv.get_or("synth.height", synth.dims.height)?,
            kv.get_or("synth.width", synth.dims.width)?,
            kv.get_or("synth.channels", synth.dims.channels)?,
        );
        synth.noise_sigma = kv.get_or("synth.sigma", synth.noise_sigma)?;
        synth.wave_amplitude = kv.get_or("synth.wave", synth.wave_amplitude)?;
        synth.patch_amplitude = kv.get_or("synth.patch", synth.patch_amplitude)?;
        synth.samples_per_class = kv.get_or("synth.per_class", synth.samples_per_class)?;
        plan.dataset = match kv.get_str("dataset") {
            None | Some("synthetic") => DatasetSource::Synthetic(synth),
            Some(dir) => DatasetSource::Directory(base_dir.join(dir)),
        };
        plan.split = [
            kv.get_or("split.train", plan.split[0])?,
            kv.get_or("split.unlabeled", plan.split[1])?,
            kv.get_or("split.test", plan.split[2])?,
        ];
        if let Some(items) = kv.get_list::<String>("net.hidden")? {
            plan.hidden = items.iter().map(|s| parse_layer(s)).collect::<Result<_>>()?;
        }
        if let Some(a) = kv.get_str("net.activation") {
            plan.activation = parse_activation(a)?;
        }
        if let Some(r) = kv.get_list::<Regime>("regimes")? {
            plan.regimes = r;
        }
        plan.seed = kv.get_or("seed", plan.seed)?;
        plan.train = TrainConfig::from_kv(kv, "train.", plan.train.clone())?;
        let grid_keys = [
            ("attack.fgsm", AttackMethod::Fgsm),
            ("attack.pgd", AttackMethod::Pgd),
            ("attack.cw", AttackMethod::Cw),
        ];
        if grid_keys.iter().any(|(k, _)| kv.get_str(k).is_some()) {
            plan.attacks.clear();
            for (key, method) in grid_keys {
                if let Some(strengths) = kv.get_list::<f64>(key)? {
                    plan.attacks.push(AttackGrid { method, strengths });
                }
            }
        }
        plan.pgd_steps = kv.get_or("attack.pgd_steps", plan.pgd_steps)?;
        plan.cw_steps = kv.get_or("attack.cw_steps", plan.cw_steps)?;
        plan.cw_lr = kv.get_or("attack.cw_lr", plan.cw_lr)?;
        plan.uad.components = kv.get_or("uad.components", plan.uad.components)?;
        let reg = kv.get_or("uad.diag_reg", 1e-6)?;
        plan.uad.diag_reg = match kv.get_str("uad.diag_reg_mode").unwrap_or("relative") {
            "relative" => DiagReg::Relative(reg),
            "absolute" => DiagReg::Absolute(reg),
            other => return Err(Error::config(format!("unknown diag_reg_mode `{other}`"))),
        };
        plan.uad.tol = kv.get_or("uad.tol", plan.uad.tol)?;
        plan.uad.max_iter = kv.get_or("uad.max_iter", plan.uad.max_iter)?;
        plan.percentile = kv.get_or("uad.percentile", plan.percentile)?;
        plan.risk_weights = RiskWeights {
            r_cln_prd: kv.get_or("risk.r_cln_prd", 1.0)?,
            r_cln_uad: kv.get_or("risk.r_cln_uad", 1.0)?,
            r_adv_prd: kv.get_or("risk.r_adv_prd", 1.0)?,
        };
        if let Some(m) = kv.get_str("risk.mode") {
            plan.risk_mode = parse_adv_mode(m)?;
        }
        if let Some(o) = kv.get_str("out") {
            plan.out = base_dir.join(o);
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let kv = KvFile::load(path)?;
        Self::from_kv(&kv, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::config("plan needs at least one regime"));
        }
        let mut seen = self.regimes.clone();
        seen.sort_by_key(|r| r.name());
        seen.dedup();
        if seen.len() != self.regimes.len() {
            return Err(Error::config("regimes listed twice"));
        }
        if self.attacks.is_empty() || self.attacks.iter().all(|g| g.strengths.is_empty()) {
            return Err(Error::config("plan needs at least one attack point"));
        }
        for g in &self.attacks {
            if g.strengths.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                return Err(Error::config(format!("{} grid must be nonnegative", g.method)));
            }
            if g.strengths.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config(format!("{} grid must be strictly ascending", g.method)));
            }
        }
        if self.attacks.iter().any(|g| g.method == AttackMethod::Pgd) && self.pgd_steps == 0 {
            return Err(Error::config("attack.pgd_steps must be >= 1"));
        }
        for g in &self.attacks {
            for &s in &g.strengths {
                self.attack_spec(g.method, s).validate()?;
            }
        }
        let mut t = self.train.clone();
        for &r in &self.regimes {
            t.regime = r;
            t.validate()?;
        }
        self.uad.validate()?;
        if !(0.0..=50.0).contains(&self.percentile) {
            return Err(Error::config("uad.percentile must lie in [0, 50]"));
        }
        self.risk_weights.validate()?;
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate()?;
            if self.split.contains(&0) {
                return Err(Error::config("split sizes must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn attack_spec(&self, method: AttackMethod, strength: f64) -> AttackSpec {
        match method {
            AttackMethod::Fgsm => AttackSpec::fgsm(strength),
            AttackMethod::Pgd => AttackSpec {
                steps: self.pgd_steps,
                ..AttackSpec::pgd(strength)
            },
            AttackMethod::Cw => AttackSpec {
                steps: self.cw_steps,
                cw_lr: self.cw_lr,
                ..AttackSpec::cw(strength)
            },
        }
    }

    pub fn net_config(&self, input: InputDims, num_classes: usize, seed: u64) -> NetConfig {
        NetConfig {
            input,
            hidden: self.hidden.clone(),
            num_classes,
            activation: self.activation,
            seed,
        }
    }

    /// Hex SHA-256 of the plan's canonical JSON, excluding the output directory.
    pub fn config_hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self).map_err(|e| Error::input(e.to_string()))?;
        Ok(hex::encode(Sha256::digest(json)))
    }
}
