//! Staged experiment driver. Every stage reads its inputs from the run
//! config or from earlier stages' output directories, writes its artifacts
//! atomically, stamps them with the config hash and leaves a `manifest.json`.
//!
//! ```text
//! <out>/synth/                 clinical.csv radiology.csv histology.csv labels.csv
//! <out>/preprocess/            matrix.csv labels.csv schema.json
//! <out>/filter-series/         decisions.csv summary.json summary.txt
//! <out>/volume-prep/           volume.raw volume.raw.json
//! <out>/aggregate/             features.csv
//! <out>/unimodal/<modality>/   model.mmf history.csv probs.csv val_metrics.json result.json
//! <out>/fusion/<strategy>/     test_probs.csv result.json
//! <out>/evaluate/              metrics.json
//! <out>/report/                unified.txt unified.json metrics.json
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::aggregate_rows;
use crate::config::{ProfileName, RunConfig};
use crate::curate::{self, RuleSet, RuleSpec};
use crate::error::{Error, Result};
use crate::features::{ingest_features, read_instances, read_labels, FeatureTable, LabelTable};
use crate::fusion::{
    self, align_labels, baseline_result, run_strategy, ModalityBundle, ModalityKind, ModelResult, PatientSplit,
    UnimodalScores, MODALITIES,
};
use crate::io::{self, Manifest};
use crate::metrics::{self, render_unified_table, EvalReport, UnifiedRow};
use crate::neural::{history_csv, load_model, save_model, ModelFile};
use crate::resample::ResamplePlan;
use crate::seed;
use crate::synth::{generate_synthetic, SyntheticSpec};
use crate::tabular::{self, ColumnKind};
use crate::volume::{self, Sidecar};

pub const DEFAULT_OUT_DIR: &str = "out";

/// A JSON artifact tagged with the producing configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub seed: u64,
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub part: String,
    pub n: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub result: ModelResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub late_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub models: Vec<ModelResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub late_weights: Option<Vec<f64>>,
}

/// Rows a split part selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Val,
    Test,
    All,
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
            Part::All => "all",
        }
    }
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub hash: String,
    /// Accept upstream artifacts produced under a different config hash.
    pub force: bool,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &str) -> Result<T> {
    let text = io::read_upstream(path, stage)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn table_from(path: &Path, width: Option<usize>, stage: &str) -> Result<FeatureTable> {
    let text = io::read_upstream(path, stage)?;
    ingest_features(text.as_bytes(), width).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

impl Pipeline {
    pub fn new(cfg: RunConfig, out_dir: Option<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let out = out_dir.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        let hash = cfg.hash();
        Ok(Pipeline { cfg, out, hash, force: false })
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    fn manifest(&self, stage: &str) -> Manifest {
        Manifest::new(stage, &self.hash, self.cfg.seed)
    }

    fn stamp<T>(&self, body: T) -> Stamped<T> {
        Stamped { config_hash: self.hash.clone(), seed: self.cfg.seed, body }
    }

    fn check_hash(&self, what: &Path, hash: Option<&str>) -> Result<()> {
        if self.force {
            return Ok(());
        }
        match hash {
            Some(h) if h == self.hash => Ok(()),
            Some(h) => Err(Error::invalid(format!(
                "{} was produced under config {h}, current config is {} (rerun the stage or pass --force)",
                what.display(),
                self.hash
            ))),
            None => Err(Error::invalid(format!("{} carries no config hash", what.display()))),
        }
    }

    pub fn unimodal_dir(&self, m: ModalityKind, profile: ProfileName) -> PathBuf {
        let name = match profile {
            ProfileName::Baseline => m.name().to_string(),
            ProfileName::Ehr => format!("{}-ehr", m.name()),
            ProfileName::Radiology => format!("{}-radiology", m.name()),
        };
        self.out.join("unimodal").join(name)
    }

    pub fn fusion_dir(&self, key: &str) -> PathBuf {
        self.out.join("fusion").join(key)
    }

    fn synth_path(&self, name: &str) -> PathBuf {
        self.dir("synth").join(format!("{name}.csv"))
    }

    /// Feature file for a modality: configured input, else synthetic output when present.
    pub fn modality_path(&self, m: ModalityKind) -> Option<PathBuf> {
        if let Some(p) = self.cfg.inputs.modality(m) {
            return Some(p.clone());
        }
        let synth = self.synth_path(m.name());
        synth.exists().then_some(synth)
    }

    fn any_modality_configured(&self) -> bool {
        MODALITIES.iter().any(|&m| self.cfg.inputs.modality(m).is_some())
    }

    /// Label file and the stage that produces it when it is not a configured input.
    pub fn labels_path(&self) -> (PathBuf, &'static str) {
        if let Some(p) = &self.cfg.inputs.labels {
            return (p.clone(), "inputs");
        }
        let pre = self.dir("preprocess").join("labels.csv");
        if pre.exists() {
            return (pre, "preprocess");
        }
        let synth = self.synth_path("labels");
        if synth.exists() || self.cfg.inputs.clinical_csv.is_none() {
            return (synth, "synth");
        }
        (pre, "preprocess")
    }

    pub fn labels(&self) -> Result<(LabelTable, PathBuf)> {
        let (path, stage) = self.labels_path();
        let text = io::read_upstream(&path, stage)?;
        let labels = read_labels(text.as_bytes()).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        Ok((labels, path))
    }

    pub fn split(&self, labels: &LabelTable) -> Result<PatientSplit> {
        PatientSplit::from_labels(labels, self.cfg.fusion.split, seed::derive(self.cfg.seed, "split"))
    }

    /// Every available modality table, checked against the configured widths.
    pub fn bundle(&self) -> Result<(ModalityBundle, Vec<PathBuf>)> {
        let mut tables: [Option<FeatureTable>; 3] = [None, None, None];
        let mut paths = Vec::new();
        for m in MODALITIES {
            if let Some(p) = self.modality_path(m) {
                tables[m.index()] = Some(table_from(&p, Some(self.cfg.widths[m.index()]), "synth")?);
                paths.push(p);
            }
        }
        if paths.is_empty() {
            return Err(Error::MissingStage { stage: "synth".into(), path: self.synth_path("clinical") });
        }
        Ok((ModalityBundle::new(tables)?, paths))
    }

    pub fn synth(&self) -> Result<PathBuf> {
        let stage = "synth";
        let spec = SyntheticSpec { seed: seed::derive(self.cfg.seed, stage), ..self.cfg.synthetic.clone() };
        let cohort = generate_synthetic(&spec)?;
        let mut man = self.manifest(stage);
        for (m, table) in MODALITIES.iter().zip(&cohort.tables) {
            man.output(&self.synth_path(m.name()), io::stamp_csv(&self.hash, &table.to_csv("patient_id")).as_bytes())?;
        }
        man.output(&self.synth_path("labels"), io::stamp_csv(&self.hash, &cohort.labels.to_csv()).as_bytes())?;
        log::info!("synth: {} patients", spec.patients);
        man.finish(&self.dir(stage))
    }

    pub fn preprocess(&self) -> Result<PathBuf> {
        let stage = "preprocess";
        let input = self
            .cfg
            .inputs
            .clinical_csv
            .clone()
            .ok_or_else(|| Error::invalid("preprocess needs inputs.clinical_csv"))?;
        let decls = &self.cfg.clinical.columns;
        if decls.is_empty() {
            return Err(Error::invalid("preprocess needs clinical.columns declarations"));
        }
        let text = io::read_text(&input)?;
        let records = tabular::read_clinical_csv(text.as_bytes(), &self.cfg.clinical.id_column, decls)?;
        let has_label = decls.iter().any(|d| matches!(d.kind, ColumnKind::Label { .. }));
        let mut schemas = tabular::fit_schema(&records, decls)?;
        let mut labels = None;
        if has_label {
            let first = tabular::transform(&records, &schemas)?.matrix;
            let table = LabelTable::new(first.ids.clone(), first.labels.clone().expect("label column"))?;
            let split = self.split(&table)?;
            let train: std::collections::HashSet<&str> = split.train.iter().map(String::as_str).collect();
            let fit_rows: Vec<_> = records.iter().filter(|r| train.contains(r.case_id.as_str())).cloned().collect();
            schemas = tabular::fit_schema(&fit_rows, decls)?;
            labels = Some(table);
        }
        let out = tabular::transform(&records, &schemas)?;
        if out.unknown_categories > 0 {
            log::warn!("preprocess: {} unseen categorical cells replaced by the mode", out.unknown_categories);
        }
        let m = out.matrix;
        let table = FeatureTable::new(m.ids, m.columns, m.data)?;
        let dir = self.dir(stage);
        let mut man = self.manifest(stage);
        man.input(&input)?;
        man.output(&dir.join("matrix.csv"), io::stamp_csv(&self.hash, &table.to_csv("patient_id")).as_bytes())?;
        if let Some(l) = labels {
            man.output(&dir.join("labels.csv"), io::stamp_csv(&self.hash, &l.to_csv()).as_bytes())?;
        }
        man.output_json(&dir.join("schema.json"), &self.stamp(&schemas))?;
        log::info!("preprocess: {} rows x {} features", table.len(), table.width());
        man.finish(&dir)
    }

    pub fn filter_series(&self) -> Result<PathBuf> {
        let stage = "filter-series";
        let input = self.cfg.inputs.manifest.clone().ok_or_else(|| Error::invalid("filter-series needs inputs.manifest"))?;
        let mut man = self.manifest(stage);
        let rules = match &self.cfg.inputs.rules {
            Some(p) => {
                man.input(p)?;
                RuleSet::compile(&RuleSpec::from_json(&io::read_text(p)?)?)?
            }
            None => RuleSet::default_rules(),
        };
        man.input(&input)?;
        let records = curate::read_manifest(io::read_text(&input)?.as_bytes())?;
        let decisions: Vec<_> = records.iter().map(|r| curate::classify(r, &rules)).collect();
        let summary = curate::summarize(&records, &decisions)?;
        let dir = self.dir(stage);
        man.output(&dir.join("decisions.csv"), io::stamp_csv(&self.hash, &curate::decisions_csv(&records, &decisions)).as_bytes())?;
        man.output_json(&dir.join("summary.json"), &self.stamp(&summary))?;
        man.output(&dir.join("summary.txt"), summary.render().as_bytes())?;
        log::info!("filter-series: kept {} of {}", summary.kept_scans, summary.total_scans);
        man.finish(&dir)
    }

    pub fn volume_prep(&self) -> Result<PathBuf> {
        let stage = "volume-prep";
        let input = self.cfg.inputs.volume.clone().ok_or_else(|| Error::invalid("volume-prep needs inputs.volume"))?;
        let sidecar_path = PathBuf::from(format!("{}.json", input.display()));
        let sidecar = Sidecar::parse(&io::read_text(&sidecar_path)?)?;
        let v = volume::decode_volume(&io::read_bytes(&input)?, &sidecar)?;
        let v = volume::clip_normalize(&v, &self.cfg.volume.normalize)?;
        let v = volume::resample_trilinear(&v, self.cfg.volume.target)?;
        let (raw, mut out_sidecar) = volume::encode_volume(&v);
        out_sidecar.config_hash = Some(self.hash.clone());
        let dir = self.dir(stage);
        let mut man = self.manifest(stage);
        man.input(&input)?;
        man.input(&sidecar_path)?;
        man.output(&dir.join("volume.raw"), &raw)?;
        man.output_json(&dir.join("volume.raw.json"), &out_sidecar)?;
        man.finish(&dir)
    }

    pub fn aggregate(&self) -> Result<PathBuf> {
        let stage = "aggregate";
        let input = self.cfg.inputs.instances.clone().ok_or_else(|| Error::invalid("aggregate needs inputs.instances"))?;
        let (names, rows) = read_instances(io::read_text(&input)?.as_bytes())?;
        let a = &self.cfg.aggregate;
        if let Some(w) = a.expected_width.filter(|&w| w != names.len()) {
            return Err(Error::shape(format!("instance file has {} feature columns, expected {w}", names.len())));
        }
        let pooled = aggregate_rows(&rows, a.pooling, a.two_stage)?;
        let ids: Vec<String> = pooled.iter().map(|(id, _)| id.clone()).collect();
        let flat: Vec<f64> = pooled.into_iter().flat_map(|(_, v)| v).collect();
        let data = ndarray::Array2::from_shape_vec((ids.len(), names.len()), flat).map_err(|e| Error::shape(e.to_string()))?;
        let table = FeatureTable::new(ids, names, data)?;
        let dir = self.dir(stage);
        let mut man = self.manifest(stage);
        man.input(&input)?;
        man.output(&dir.join("features.csv"), io::stamp_csv(&self.hash, &table.to_csv("patient_id")).as_bytes())?;
        log::info!("aggregate: {} patients", table.len());
        man.finish(&dir)
    }

    /// Train one modality classifier. `features` overrides the modality's
    /// configured file and skips the width check.
    pub fn train_unimodal(&self, m: ModalityKind, profile_name: ProfileName, features: Option<&Path>) -> Result<PathBuf> {
        let stage = "train-unimodal";
        let (path, width) = match features {
            Some(p) => (p.to_path_buf(), None),
            None => {
                let p = self.modality_path(m).ok_or_else(|| Error::MissingStage {
                    stage: "synth".into(),
                    path: self.synth_path(m.name()),
                })?;
                (p, Some(self.cfg.widths[m.index()]))
            }
        };
        let table = table_from(&path, width, "synth")?;
        let (labels, labels_path) = self.labels()?;
        let orphans: Vec<&str> = table.ids.iter().filter(|id| labels.get(id).is_none()).map(String::as_str).take(10).collect();
        if !orphans.is_empty() {
            return Err(Error::invalid(format!("patients without labels: {}", orphans.join(", "))));
        }
        let split = self.split(&labels)?;
        let profile = self.cfg.profiles.get(profile_name);
        let resample = if m == ModalityKind::Clinical { self.cfg.clinical.resample.clone() } else { ResamplePlan::default() };
        let run = fusion::train_baseline(&table, m, &labels, &split, profile, &resample, self.cfg.seed)?;

        let dir = self.unimodal_dir(m, profile_name);
        let mut man = self.manifest(stage);
        man.input(&path)?;
        man.input(&labels_path)?;
        let file = ModelFile {
            model: run.model.clone(),
            seed: seed::derive(self.cfg.seed, &format!("{}/init", fusion::baseline_stage(m))),
            train_config: Some(serde_json::json!({ "config_hash": self.hash, "profile": profile })),
        };
        man.output(&dir.join("model.mmf"), &save_model(&file)?)?;

        man.output(&dir.join("history.csv"), io::stamp_csv(&self.hash, &history_csv(&run.history)).as_bytes())?;
        let mut probs = String::from("patient_id,prob\n");
        for (id, p) in &run.scores.probs {
            let _ = writeln!(probs, "{id},{p}");
        }
        man.output(&dir.join("probs.csv"), io::stamp_csv(&self.hash, &probs).as_bytes())?;

        let val = self.metrics_for(&run.model, &table, &labels, &split, Part::Val)?;
        man.output_json(&dir.join("val_metrics.json"), &self.stamp(val))?;
        let result = baseline_result(&run.scores, Some(run.best_epoch), &split, &labels, self.cfg.fusion.threshold)?;
        man.output_json(&dir.join("result.json"), &self.stamp(ResultFile { result, late_weights: None }))?;

        if profile_name == ProfileName::Ehr {
            let layer = self.cfg.clinical.embedding_layer.unwrap_or(run.model.hidden_count().saturating_sub(1));
            let emb = run.model.extract_embedding(table.data.view(), layer)?;
            let emb = FeatureTable::with_default_columns(table.ids.clone(), emb, "emb_")?;
            man.output(&dir.join("embeddings.csv"), io::stamp_csv(&self.hash, &emb.to_csv("patient_id")).as_bytes())?;
        }
        log::info!(
            "train-unimodal {}: best epoch {}, val balanced accuracy {:.4}",
            m.name(),
            run.best_epoch,
            run.scores.val_balanced_accuracy
        );
        man.finish(&dir)
    }

    fn part_ids(table: &FeatureTable, split: &PatientSplit, part: Part) -> Vec<String> {
        let ids: &[String] = match part {
            Part::Train => &split.train,
            Part::Val => &split.val,
            Part::Test => &split.test,
            Part::All => &table.ids,
        };
        ids.iter().filter(|id| table.row_of(id).is_some()).cloned().collect()
    }

    fn metrics_for(
        &self,
        model: &crate::neural::MlpModel,
        table: &FeatureTable,
        labels: &LabelTable,
        split: &PatientSplit,
        part: Part,
    ) -> Result<MetricsFile> {
        let ids = Self::part_ids(table, split, part);
        if ids.is_empty() {
            return Err(Error::invalid(format!("no patients in the {} part have features", part.name())));
        }
        let x = table.select_ids(&ids)?;
        let scores = model.predict_positive(x.data.view())?;
        let report = fusion::evaluate_ids(&ids, &scores, labels, self.cfg.fusion.threshold)?;
        Ok(MetricsFile { part: part.name().into(), n: ids.len(), report })
    }

    /// Score a saved model on a feature file and write the metrics.
    pub fn evaluate(&self, model_path: &Path, features: &Path, part: Part, output: Option<&Path>) -> Result<(PathBuf, MetricsFile)> {
        let stage = "evaluate";
        if !model_path.exists() {
            return Err(Error::MissingStage { stage: "train-unimodal".into(), path: model_path.to_path_buf() });
        }
        let file = load_model(&io::read_bytes(model_path)?)?;
        let table = table_from(features, Some(file.model.spec.input_width()), "synth")?;
        let (labels, labels_path) = self.labels()?;
        let split = self.split(&labels)?;
        let metrics = self.metrics_for(&file.model, &table, &labels, &split, part)?;
        let out = output.map(Path::to_path_buf).unwrap_or_else(|| self.dir(stage).join("metrics.json"));
        let mut man = self.manifest(stage);
        man.input(model_path)?;
        man.input(features)?;
        man.input(&labels_path)?;
        man.output_json(&out, &self.stamp(metrics.clone()))?;
        man.finish(&self.dir(stage))?;
        Ok((out, metrics))
    }

    fn load_unimodal(&self, m: ModalityKind) -> Result<UnimodalScores> {
        let dir = self.unimodal_dir(m, ProfileName::Baseline);
        let probs_path = dir.join("probs.csv");
        let text = io::read_upstream(&probs_path, "train-unimodal")?;
        self.check_hash(&probs_path, io::csv_hash(&text))?;
        let probs = ingest_features(text.as_bytes(), Some(1))?;
        let result_path = dir.join("result.json");
        let result: Stamped<ResultFile> = read_json(&result_path, "train-unimodal")?;
        self.check_hash(&result_path, Some(&result.config_hash))?;
        let val_ba = result
            .body
            .result
            .val_balanced_accuracy
            .ok_or_else(|| Error::Format(format!("{} has no validation balanced accuracy", result_path.display())))?;
        Ok(UnimodalScores {
            modality: m,
            val_balanced_accuracy: val_ba,
            probs: probs.ids.iter().cloned().zip(probs.data.column(0).iter().copied()).collect(),
        })
    }

    /// Run every configured fusion strategy, or only `only` when given.
    pub fn fuse(&self, only: Option<&[String]>) -> Result<Vec<PathBuf>> {
        let stage = "fuse";
        let (bundle, paths) = self.bundle()?;
        let (labels, labels_path) = self.labels()?;
        align_labels(&bundle, &labels)?;
        let split = self.split(&labels)?;
        let exp = self.cfg.experiment();
        let strategies: Vec<_> = exp
            .strategies
            .iter()
            .filter(|s| only.is_none_or(|keys| keys.iter().any(|k| k == s.key())))
            .collect();
        if let Some(keys) = only {
            if let Some(k) = keys.iter().find(|k| !strategies.iter().any(|s| s.key() == k.as_str())) {
                return Err(Error::invalid(format!("strategy `{k}` is not configured in fusion.strategies")));
            }
        }
        let unimodal = if strategies.iter().any(|s| s.is_late()) {
            bundle.available().into_iter().map(|m| self.load_unimodal(m)).collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let mut written = Vec::new();
        for strategy in strategies {
            let run = run_strategy(&bundle, &labels, &split, &unimodal, strategy, &exp)?;
            let result = run.result(strategy, &split, &labels, exp.threshold)?;
            let dir = self.fusion_dir(strategy.key());
            let mut man = self.manifest(stage);
            for p in &paths {
                man.input(p)?;
            }
            man.input(&labels_path)?;
            if strategy.is_late() {
                for u in &unimodal {
                    man.input(&self.unimodal_dir(u.modality, ProfileName::Baseline).join("probs.csv"))?;
                }
            }
            let mut probs = String::from("patient_id,prob\n");
            for (id, p) in split.test.iter().zip(&run.test_scores) {
                let _ = writeln!(probs, "{id},{p}");
            }
            man.output(&dir.join("test_probs.csv"), io::stamp_csv(&self.hash, &probs).as_bytes())?;
            log::info!("fuse {}: test balanced accuracy {:.4}", strategy.key(), result.report.summary.balanced_accuracy);
            man.output_json(&dir.join("result.json"), &self.stamp(ResultFile { result, late_weights: run.late_weights }))?;
            written.push(man.finish(&dir)?);
        }
        Ok(written)
    }

    /// Collect unimodal and fusion results into the unified comparison table.
    pub fn report(&self) -> Result<(PathBuf, ReportFile)> {
        let stage = "report";
        let mut sources = Vec::new();
        for m in MODALITIES {
            if self.modality_path(m).is_some() {
                sources.push((self.unimodal_dir(m, ProfileName::Baseline).join("result.json"), "train-unimodal"));
            }
        }
        for s in &self.cfg.fusion.strategies {
            sources.push((self.fusion_dir(s.key()).join("result.json"), "fuse"));
        }
        if !MODALITIES.iter().any(|&m| self.modality_path(m).is_some()) {
            return Err(Error::MissingStage { stage: "synth".into(), path: self.synth_path("clinical") });
        }
        let mut files = Vec::new();
        for (path, upstream) in &sources {
            files.push((path.clone(), read_json::<Stamped<ResultFile>>(path, upstream)?));
        }
        if !self.force {
            io::check_hashes(files.iter().map(|(p, f)| (p.display().to_string(), f.config_hash.as_str())))?;
            let (path, first) = &files[0];
            self.check_hash(path, Some(&first.config_hash))?;
        }
        let late_weights = files.iter().find_map(|(_, f)| f.body.late_weights.clone());
        let models: Vec<ModelResult> = files.into_iter().map(|(_, f)| f.body.result).collect();
        let rows: Vec<UnifiedRow> = models.iter().map(|r| UnifiedRow::from_report(r.name.clone(), &r.report)).collect();
        let body = ReportFile { models, late_weights };
        let dir = self.dir(stage);
        let mut man = self.manifest(stage);
        for (path, _) in &sources {
            man.input(path)?;
        }
        man.output(&dir.join("unified.txt"), render_unified_table(&rows).as_bytes())?;
        man.output_json(&dir.join("unified.json"), &self.stamp(&rows))?;
        man.output_json(&dir.join("metrics.json"), &self.stamp(&body))?;
        man.finish(&dir)?;
        Ok((dir.join("metrics.json"), body))
    }

    /// Synthetic data when no modality input is configured, then every baseline, every fusion and the report.
    pub fn run_all(&self) -> Result<(PathBuf, ReportFile)> {
        if !self.any_modality_configured() && self.cfg.inputs.labels.is_none() {
            self.synth()?;
        }
        let available: Vec<ModalityKind> = MODALITIES.into_iter().filter(|&m| self.modality_path(m).is_some()).collect();
        if available.is_empty() {
            return Err(Error::MissingStage { stage: "synth".into(), path: self.synth_path("clinical") });
        }
        for m in available {
            self.train_unimodal(m, ProfileName::Baseline, None)?;
        }
        self.fuse(None)?;
        self.report()
    }
}

/// Render the unified table of a report file.
pub fn render_report(report: &ReportFile) -> String {
    let rows: Vec<UnifiedRow> = report.models.iter().map(|r| UnifiedRow::from_report(r.name.clone(), &r.report)).collect();
    render_unified_table(&rows)
}

/// Human-readable metrics of one evaluation.
pub fn render_metrics(m: &MetricsFile) -> String {
    format!("part: {} (n = {})\n{}", m.part, m.n, metrics::render_metric_table(&m.report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.synthetic.patients = 120;
        cfg.synthetic.dims = [6, 8, 10];
        cfg.widths = [6, 8, 10];
        for p in [&mut cfg.profiles.baseline, &mut cfg.profiles.early_head, &mut cfg.profiles.late_head] {
            p.train.epochs = 3;
        }
        cfg
    }

    #[test]
    fn missing_synth_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(small_cfg(), Some(dir.path().to_path_buf())).unwrap();
        let err = p.train_unimodal(ModalityKind::Clinical, ProfileName::Baseline, None).unwrap_err();
        assert!(matches!(err, Error::MissingStage { ref stage, .. } if stage == "synth"), "{err}");
        p.synth().unwrap();
        let err = p.fuse(None).unwrap_err();
        assert!(matches!(err, Error::MissingStage { ref stage, .. } if stage == "train-unimodal"), "{err}");
        let err = p.report().unwrap_err();
        assert!(matches!(err, Error::MissingStage { ref stage, .. } if stage == "train-unimodal"), "{err}");
    }

    #[test]
    fn small_run_produces_five_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(small_cfg(), Some(dir.path().to_path_buf())).unwrap();
        let (path, report) = p.run_all().unwrap();
        assert_eq!(report.models.len(), 5);
        assert!(path.exists());
        let text = std::fs::read_to_string(dir.path().join("report/unified.txt")).unwrap();
        assert_eq!(text.lines().filter(|l| l.contains("Baseline") || l.contains("Fusion")).count(), 5);
        let probs = std::fs::read_to_string(dir.path().join("unimodal/clinical/probs.csv")).unwrap();
        assert_eq!(io::csv_hash(&probs), Some(p.hash.as_str()));
    }

    #[test]
    fn foreign_hash_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        let a = Pipeline::new(small_cfg(), Some(dir.path().to_path_buf())).unwrap();
        a.run_all().unwrap();
        let mut other = small_cfg();
        other.fusion.threshold = 0.4;
        let mut b = Pipeline::new(other, Some(dir.path().to_path_buf())).unwrap();
        b.fuse(Some(&["early_concat".to_string()])).unwrap();
        let err = b.report().unwrap_err();
        assert!(err.to_string().contains("different configurations"), "{err}");
        b.force = true;
        b.report().unwrap();
    }
}
