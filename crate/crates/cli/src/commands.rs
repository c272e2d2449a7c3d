use std::path::{Path, PathBuf};
use std::time::Instant;

use minerva_core::knn::{evaluate_subset, KnnConfig};
use minerva_core::ksg::{ksg_filter, KsgConfig};
use minerva_core::minerva::{classify_selection, select_features};
use minerva_core::report::{
    collate, rows_to_csv, rows_to_text, Method, MetricsReport, RunMetadata, SelectionReport, TraceEntry, SCHEMA_VERSION,
};
use minerva_core::statnet::EmbedDimRule;
use minerva_core::synth::{gen_experiment_a, gen_experiment_b, ExpASpec, ExpBSpec};
use minerva_core::{Dataset, DatasetMeta, Error, NetworkSpec, OptimizerKind, Result, TrainConfig};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{EvaluateSection, Experiment, GenerateSection, NetworkSection, ReportSection, SelectSection};
use crate::{EvaluateArgs, GenerateArgs, OptimizerArg, ReportArgs, SelectArgs};

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn generate(file: GenerateSection, a: GenerateArgs) -> Result<()> {
    let experiment = a.experiment.or(file.experiment).unwrap_or(Experiment::A);
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let n = a.n.or(file.n).unwrap_or(20_000);
    let m_default = match experiment {
        Experiment::A => 5,
        Experiment::B => 3,
    };
    let m = a.m.or(file.m).unwrap_or(m_default);
    let k0 = a.k0.or(file.k0);
    let k1 = a.k1.or(file.k1);
    let (synthetic, spec_json, tag) = match experiment {
        Experiment::A => {
            let spec = ExpASpec {
                d: a.d.or(file.d).unwrap_or(10),
                m,
                k0: k0.unwrap_or(3),
                k1: k1.unwrap_or(8),
                n,
                seed,
            };
            (gen_experiment_a(&spec)?, serde_json::to_value(&spec)?, "a")
        }
        Experiment::B => {
            let spec = ExpBSpec {
                d1: a.d1.or(file.d1).unwrap_or(6),
                d2: a.d2.or(file.d2).unwrap_or(10),
                m,
                k0: k0.unwrap_or(1),
                k1: k1.unwrap_or(2),
                j_indices: a.j.or(file.j).unwrap_or_else(|| vec![7, 9]),
                i_indices: a.i.or(file.i).unwrap_or_else(|| vec![12, 15]),
                alpha: a.alpha.or(file.alpha).unwrap_or_else(|| vec![1.0, 1.0]),
                beta: a.beta.or(file.beta).unwrap_or_else(|| vec![1.0, 1.0]),
                n,
                seed,
            };
            (gen_experiment_b(&spec)?, serde_json::to_value(&spec)?, "b")
        }
    };
    let dir = a.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));
    let name = a.name.or(file.name).unwrap_or_else(|| format!("exp_{tag}_seed{seed}"));
    std::fs::create_dir_all(&dir)?;
    let csv_path = dir.join(format!("{name}.csv"));
    let meta_path = dir.join(format!("{name}.json"));
    let hash = synthetic.dataset.content_hash();
    synthetic.dataset.write_csv(&csv_path)?;
    DatasetMeta {
        schema_version: SCHEMA_VERSION,
        experiment: tag.to_uppercase(),
        spec: spec_json,
        seed,
        truth: synthetic.truth.iter().map(|i| i + 1).collect(),
        cardinalities: synthetic.dataset.cardinalities(),
        dataset_hash: hash.clone(),
    }
    .write(&meta_path)?;
    println!("{hash}  {}", csv_path.display());
    Ok(())
}

/// Reads a CSV plus its sidecar when present.
fn load_dataset(data: &Path, meta: Option<&Path>) -> Result<(Dataset, Option<DatasetMeta>)> {
    let default_meta = data.with_extension("json");
    let meta_path = match meta {
        Some(p) => Some(p.to_path_buf()),
        None if default_meta.exists() => Some(default_meta),
        None => None,
    };
    let meta = meta_path.as_deref().map(DatasetMeta::read).transpose()?;
    let text = std::fs::read_to_string(data)?;
    let dataset = Dataset::from_csv_str(&text, meta.as_ref().map(|m| &m.cardinalities))?;
    if let Some(m) = &meta {
        if m.dataset_hash != dataset.content_hash() {
            return Err(Error::Config(format!(
                "{} does not match the hash recorded in its sidecar",
                data.display()
            )));
        }
        if m.truth.iter().any(|&i| i == 0 || i > dataset.n_features()) {
            return Err(Error::Schema("sidecar truth index out of range".into()));
        }
    }
    Ok((dataset, meta))
}

fn resolve_train(file: Option<TrainConfig>, a: &SelectArgs) -> TrainConfig {
    let mut c = file.unwrap_or_default();
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { c.$f = v; })* };
    }
    set!(
        learning_rate,
        c1,
        c2,
        threshold,
        batch_size,
        stage1_max_steps,
        stage2_max_steps,
        patience,
        eval_every
    );
    if let Some(v) = a.weight_learning_rate {
        c.weight_learning_rate = Some(v);
    }
    if let Some(v) = a.drift_target {
        c.drift_target = Some(v);
    }
    if let Some(o) = a.optimizer {
        c.optimizer = match o {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::adam(),
        };
    }
    if let Some(w) = a.weight_update {
        c.weight_update = w.into();
    }
    c
}

fn resolve_network(dataset: &Dataset, file: &NetworkSection, a: &SelectArgs) -> NetworkSpec {
    let mut spec = NetworkSpec::for_dataset(dataset);
    if let Some(h) = a.hidden_width.or(file.hidden_width) {
        spec.hidden_width = h;
    }
    if let Some(b) = a.residual_blocks.or(file.n_residual_blocks) {
        spec.n_residual_blocks = b;
    }
    if let Some(b) = file.clamp_bound {
        spec.clamp_bound = b;
    }
    if let Some(cap) = file.embed_cap {
        spec.embed_dim_rule = EmbedDimRule::SqrtCapped { cap };
    }
    spec
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|i| i + 1).collect()
}

struct SelectJob<'a> {
    method: Method,
    dataset: &'a Dataset,
    meta: Option<&'a DatasetMeta>,
    train: TrainConfig,
    network: NetworkSpec,
    ksg: KsgConfig,
    data_path: &'a Path,
}

impl SelectJob<'_> {
    fn run(&self, seed: u64) -> Result<SelectionReport> {
        let start = Instant::now();
        let truth = self.meta.map(|m| m.truth_zero_based());
        let d = self.dataset.n_features();
        let mut report = SelectionReport {
            schema_version: SCHEMA_VERSION,
            method: self.method,
            dataset_hash: self.dataset.content_hash(),
            n_features: d,
            seed,
            selected: Vec::new(),
            weights: None,
            scores: None,
            mi_trace: Vec::new(),
            truth: truth.as_deref().map(one_based),
            classification: None,
            stage1_steps: None,
            stage2_steps: None,
            config: json!(null),
            metadata: RunMetadata::default(),
        };
        let selected = match self.method {
            Method::Minerva => {
                let train = TrainConfig {
                    seed,
                    ..self.train.clone()
                };
                let r = select_features(self.dataset, &self.network, &train)?;
                report.weights = Some(r.final_p.0.clone());
                report.mi_trace = r
                    .mi_trace
                    .iter()
                    .map(|t| TraceEntry {
                        stage: t.stage,
                        step: t.step,
                        mi_nats: t.mi_nats(),
                    })
                    .collect();
                report.stage1_steps = Some(r.stage1_steps);
                report.stage2_steps = Some(r.stage2_steps);
                report.config = json!({
                    "data": self.data_path,
                    "method": "minerva",
                    "train": train,
                    "network": self.network,
                });
                r.selected
            }
            Method::Ksg => {
                let ksg = KsgConfig {
                    seed,
                    ..self.ksg.clone()
                };
                let r = ksg_filter(self.dataset, &ksg)?;
                report.scores = Some(r.scores);
                report.config = json!({
                    "data": self.data_path,
                    "method": "ksg",
                    "ksg": ksg,
                });
                r.selected
            }
        };
        report.classification = truth.as_deref().map(|t| classify_selection(&selected, t));
        report.selected = one_based(&selected);
        report.metadata = RunMetadata::now(start.elapsed().as_secs_f64());
        report.validate()?;
        Ok(report)
    }
}

pub fn select(file: SelectSection, a: SelectArgs) -> Result<()> {
    let method: Method = a.method.map(Into::into).or(file.method).unwrap_or(Method::Minerva);
    let data = a
        .data
        .clone()
        .or(file.data.clone())
        .ok_or_else(|| Error::Config("select needs --data".into()))?;
    let seeds = match (a.seed, a.seeds.clone(), file.seeds.clone()) {
        (Some(s), _, _) => vec![s],
        (None, Some(s), _) | (None, None, Some(s)) => s,
        _ => vec![0],
    };
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let train = resolve_train(file.train.clone(), &a);
    train.validate()?;
    let mut ksg = file.ksg.clone().unwrap_or_default();
    if let Some(k) = a.k {
        ksg.k = k;
    }
    if let Some(t) = a.ksg_threshold {
        ksg.threshold = t;
    }
    ksg.validate()?;

    let (dataset, meta) = load_dataset(&data, a.meta.as_deref().or(file.meta.as_deref()))?;
    let network = resolve_network(&dataset, &file.network, &a);
    network.validate()?;
    let job = SelectJob {
        method,
        dataset: &dataset,
        meta: meta.as_ref(),
        train,
        network,
        ksg,
        data_path: &data,
    };
    let results: Vec<Result<SelectionReport>> = seeds.par_iter().map(|&s| job.run(s)).collect();
    let out = a.out.or(file.out);
    let many = seeds.len() > 1;
    if many && out.is_none() {
        return Err(Error::Config("several seeds need --out DIR".into()));
    }
    let mut first_err = None;
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(report) => {
                let text = serde_json::to_string_pretty(&report)? + "\n";
                match &out {
                    Some(dir) if many => {
                        std::fs::create_dir_all(dir)?;
                        let path = dir.join(format!("{}_seed{seed}.json", method.as_str()));
                        write_text(&path, &text)?;
                        eprintln!(
                            "seed {seed}: selected {:?} {}",
                            report.selected,
                            report.classification.map_or(String::new(), |c| format!("{c:?}"))
                        );
                    }
                    Some(path) => write_text(path, &text)?,
                    None => print!("{text}"),
                }
            }
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

pub fn evaluate(file: EvaluateSection, a: EvaluateArgs) -> Result<()> {
    let data = a
        .data
        .or(file.data)
        .ok_or_else(|| Error::Config("evaluate needs --data".into()))?;
    let (dataset, _) = load_dataset(&data, None)?;
    let selected = match (
        a.selected.or(file.selected),
        a.selection_report.or(file.selection_report),
    ) {
        (Some(s), _) => s,
        (None, Some(p)) => {
            let r = SelectionReport::read(&p)?;
            if r.dataset_hash != dataset.content_hash() {
                return Err(Error::Config("selection report was made on a different dataset".into()));
            }
            r.selected
        }
        (None, None) => return Err(Error::Config("evaluate needs --selected or --selection-report".into())),
    };
    let mut sorted = selected.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&i| i == 0 || i > dataset.n_features()) {
        return Err(Error::Config(format!(
            "selected index {bad} outside 1..={}",
            dataset.n_features()
        )));
    }
    let mut knn = file.knn.unwrap_or_default();
    if let Some(k) = a.k {
        knn.k = k;
    }
    if let Some(s) = a.seed {
        knn.seed = s;
    }
    let start = Instant::now();
    let zero: Vec<usize> = sorted.iter().map(|i| i - 1).collect();
    let metrics = evaluate_subset(&dataset, &zero, &knn)?;
    let report = MetricsReport {
        schema_version: SCHEMA_VERSION,
        dataset_hash: dataset.content_hash(),
        selected: sorted,
        n_features: dataset.n_features(),
        regressor: "knn".into(),
        metrics,
        config: json!({ "data": data, "knn": knn_echo(&knn) }),
        metadata: RunMetadata::now(start.elapsed().as_secs_f64()),
    };
    report.validate()?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match a.out.or(file.out) {
        Some(p) => write_text(&p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn knn_echo(k: &KnnConfig) -> serde_json::Value {
    serde_json::to_value(k).unwrap_or(serde_json::Value::Null)
}

pub fn report(file: ReportSection, a: ReportArgs) -> Result<()> {
    let inputs = if a.inputs.is_empty() { file.inputs } else { a.inputs };
    if inputs.is_empty() {
        return Err(Error::Config("no reports".into()));
    }
    let reports = inputs
        .iter()
        .map(|p| SelectionReport::read(p))
        .collect::<Result<Vec<_>>>()?;
    let rows = collate(&reports)?;
    let text = rows_to_text(&rows);
    match a.out.or(file.out) {
        Some(stem) => {
            write_text(&stem.with_extension("csv"), &rows_to_csv(&rows)?)?;
            write_text(&stem.with_extension("txt"), &text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
