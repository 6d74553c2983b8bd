//! Run configuration and its content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::Pooling;
use crate::error::{Error, Result};
use crate::fusion::{ExperimentConfig, MissingPolicy, ModalityKind, Strategy, WeightSource, MODALITIES};
use crate::io;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::neural::Profile;
use crate::resample::ResamplePlan;
use crate::synth::SyntheticSpec;
use crate::tabular::{ColumnDecl, DEFAULT_SPLIT};
use crate::volume::{NormalizeParams, DEFAULT_TARGET};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    /// Raw clinical records for `preprocess`.
    pub clinical_csv: Option<PathBuf>,
    pub clinical: Option<PathBuf>,
    pub radiology: Option<PathBuf>,
    pub histology: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    /// Raw volume; its sidecar is the same path with `.json` appended.
    pub volume: Option<PathBuf>,
    pub instances: Option<PathBuf>,
}

impl InputPaths {
    pub fn modality(&self, m: ModalityKind) -> Option<&PathBuf> {
        match m {
            ModalityKind::Clinical => self.clinical.as_ref(),
            ModalityKind::Radiology => self.radiology.as_ref(),
            ModalityKind::Histology => self.histology.as_ref(),
        }
    }

    pub fn set_modality(&mut self, m: ModalityKind, path: PathBuf) {
        match m {
            ModalityKind::Clinical => self.clinical = Some(path),
            ModalityKind::Radiology => self.radiology = Some(path),
            ModalityKind::Histology => self.histology = Some(path),
        }
    }

    fn all_mut(&mut self) -> [&mut Option<PathBuf>; 9] {
        [
            &mut self.clinical_csv,
            &mut self.clinical,
            &mut self.radiology,
            &mut self.histology,
            &mut self.labels,
            &mut self.manifest,
            &mut self.rules,
            &mut self.volume,
            &mut self.instances,
        ]
    }

    fn all(&self) -> [(&'static str, &Option<PathBuf>); 9] {
        [
            ("clinical_csv", &self.clinical_csv),
            ("clinical", &self.clinical),
            ("radiology", &self.radiology),
            ("histology", &self.histology),
            ("labels", &self.labels),
            ("manifest", &self.manifest),
            ("rules", &self.rules),
            ("volume", &self.volume),
            ("instances", &self.instances),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClinicalConfig {
    pub id_column: String,
    pub columns: Vec<ColumnDecl>,
    pub resample: ResamplePlan,
    /// Hidden layer whose activations become the clinical embedding; the last one when unset.
    pub embedding_layer: Option<usize>,
}

impl Default for ClinicalConfig {
    fn default() -> Self {
        ClinicalConfig {
            id_column: "case_id".into(),
            columns: Vec::new(),
            resample: ResamplePlan::default(),
            embedding_layer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Profiles {
    pub ehr: Profile,
    pub radiology: Profile,
    pub baseline: Profile,
    pub early_head: Profile,
    pub late_head: Profile,
}

impl Default for Profiles {
    fn default() -> Self {
        Profiles {
            ehr: Profile::ehr(),
            radiology: Profile::radiology_mil(),
            baseline: Profile::baseline(),
            early_head: Profile::baseline(),
            late_head: Profile::late_head(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Ehr,
    Radiology,
    Baseline,
}

impl Profiles {
    pub fn get(&self, name: ProfileName) -> &Profile {
        match name {
            ProfileName::Ehr => &self.ehr,
            ProfileName::Radiology => &self.radiology,
            ProfileName::Baseline => &self.baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub strategies: Vec<Strategy>,
    pub early_policy: MissingPolicy,
    pub late_policy: MissingPolicy,
    pub split: [f64; 3],
    pub threshold: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            strategies: vec![
                Strategy::LateWeightedSum { weights: WeightSource::ValidationBalancedAccuracy },
                Strategy::EarlyConcat,
            ],
            early_policy: MissingPolicy::ZeroImpute,
            late_policy: MissingPolicy::Renormalize,
            split: DEFAULT_SPLIT,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeConfig {
    pub normalize: NormalizeParams,
    pub target: [usize; 3],
}

impl Default for VolumeConfig {
    fn default() -> Self {
        VolumeConfig { normalize: NormalizeParams::default(), target: DEFAULT_TARGET }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregateConfig {
    pub pooling: Pooling,
    /// Under mean pooling, average within each group (slide) first, then across groups.
    pub two_stage: bool,
    pub expected_width: Option<usize>,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        AggregateConfig { pooling: Pooling::Mean, two_stage: true, expected_width: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub inputs: InputPaths,
    /// Expected feature widths in modality order.
    pub widths: [usize; 3],
    pub clinical: ClinicalConfig,
    pub profiles: Profiles,
    pub fusion: FusionConfig,
    pub volume: VolumeConfig,
    pub aggregate: AggregateConfig,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: None,
            inputs: InputPaths::default(),
            widths: MODALITIES.map(|m| m.default_width()),
            clinical: ClinicalConfig::default(),
            profiles: Profiles::default(),
            fusion: FusionConfig::default(),
            volume: VolumeConfig::default(),
            aggregate: AggregateConfig::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    /// Load a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let mut cfg = Self::from_json(&io::read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.inputs.all_mut().into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(out) = cfg.out_dir.as_mut().filter(|o| o.is_relative()) {
            *out = base.join(&*out);
        }
        Ok(cfg)
    }

    /// Check value ranges and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        for (name, path) in self.inputs.all() {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::invalid(format!("inputs.{name}: {} does not exist", p.display())));
                }
            }
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid(format!("widths {:?} must be positive", self.widths)));
        }
        if !(0.0..=1.0).contains(&self.fusion.threshold) {
            return Err(Error::invalid(format!("threshold {} outside [0, 1]", self.fusion.threshold)));
        }
        for p in [&self.profiles.ehr, &self.profiles.radiology, &self.profiles.baseline, &self.profiles.early_head, &self.profiles.late_head] {
            p.train.validate()?;
        }
        self.volume.normalize.validate()?;
        if self.volume.target.contains(&0) {
            return Err(Error::invalid("volume target dimensions must be positive"));
        }
        self.synthetic.validate()
    }

    /// sha256 over the canonical JSON form (sorted keys) with the output directory left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let value = serde_json::to_value(&c).expect("config serializes");
        io::sha256_hex(value.to_string().as_bytes())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            split: self.fusion.split,
            baseline: self.profiles.baseline.clone(),
            early_head: self.profiles.early_head.clone(),
            late_head: self.profiles.late_head.clone(),
            strategies: self.fusion.strategies.clone(),
            early_policy: self.fusion.early_policy,
            late_policy: self.fusion.late_policy,
            threshold: self.fusion.threshold,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn hash_ignores_out_dir_and_key_order() {
        let a = RunConfig::from_json(r#"{"seed": 3, "widths": [2, 3, 4]}"#).unwrap();
        let b = RunConfig::from_json(r#"{"widths": [2, 3, 4], "seed": 3, "out_dir": "elsewhere"}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: 4, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("labels.csv"), "patient_id,label\nA,1\n").unwrap();
        let cfg_path = dir.path().join("run.json");
        std::fs::write(&cfg_path, r#"{"inputs": {"labels": "labels.csv"}, "out_dir": "out"}"#).unwrap();
        let cfg = RunConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.inputs.labels.as_deref(), Some(dir.path().join("labels.csv").as_path()));
        assert_eq!(cfg.out_dir.as_deref(), Some(dir.path().join("out").as_path()));
        cfg.validate().unwrap();
    }

    #[test]
    fn missing_input_is_validation_error() {
        let cfg = RunConfig::from_json(r#"{"inputs": {"radiology": "/no/such/file.csv"}}"#).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("inputs.radiology"));
    }

    #[test]
    fn strategies_parse_from_json() {
        let cfg = RunConfig::from_json(
            r#"{"fusion": {"strategies": [{"kind": "early_mean_pool"}, {"kind": "late_weighted_sum", "weights": {"fixed": [1, 2, 3]}}]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.fusion.strategies[0], Strategy::EarlyMeanPool { projection_dim: 128 });
        assert_eq!(cfg.experiment().strategies.len(), 2);
    }
}
