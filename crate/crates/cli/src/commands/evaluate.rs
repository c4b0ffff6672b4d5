use std::path::Path;

use avuc_core::bayes::BnnModel;
use avuc_core::metrics::{self, DetectionReport, EvalOptions, EvalReport};
use avuc_core::par::{self, Exec};
use avuc_core::seed::{self, stream};
use avuc_core::shiftlab::{Dataset, ShiftKind, Split};
use avuc_core::uncertainty::{self, McPrediction};
use serde::Serialize;

use super::{create_dir, load_checkpoint, load_data_dir, read_dataset, write_json, DataDescriptor};
use crate::error::CliError;

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const SPEARMAN_FILE: &str = "spearman.csv";
pub const CURVE_DIR: &str = "curves";

/// Which shifted sets to evaluate besides the in-distribution test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShiftSelection {
    All,
    Kinds(Vec<ShiftKind>),
}

impl std::str::FromStr for ShiftSelection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "all" => Ok(ShiftSelection::All),
            "none" | "" => Ok(ShiftSelection::Kinds(Vec::new())),
            list => list
                .split(',')
                .map(|k| k.trim().parse::<ShiftKind>().map_err(|e| e.to_string()))
                .collect::<Result<Vec<_>, _>>()
                .map(ShiftSelection::Kinds),
        }
    }
}

impl ShiftSelection {
    fn includes(&self, kind: ShiftKind) -> bool {
        match self {
            ShiftSelection::All => true,
            ShiftSelection::Kinds(k) => k.contains(&kind),
        }
    }
}

pub struct EvaluateArgs<'a> {
    pub ckpt: &'a Path,
    pub data: &'a Path,
    pub shifts: ShiftSelection,
    pub mc: usize,
    pub seed: u64,
    pub method: &'a str,
    pub options: EvalOptions,
    pub out: &'a Path,
}

/// One row of `aggregate.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub method: String,
    pub shift: String,
    pub intensity: u8,
    pub acc: f64,
    pub ece: f64,
    pub uce: f64,
    pub nll: f64,
    pub brier: f64,
    pub avu_auc: f64,
}

/// One row of `spearman.csv`: rank correlation of a metric with shift intensity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpearmanRow {
    pub method: String,
    pub metric: String,
    /// Empty when the metric is constant across rows.
    pub rho: Option<f64>,
    pub n: usize,
}

struct EvalSet {
    name: String,
    shift: String,
    intensity: u8,
    data: Dataset,
}

pub fn predict(model: &BnnModel, data: &Dataset, mc: usize, seed_value: u64, temperature: f64) -> Result<McPrediction, CliError> {
    Ok(uncertainty::mc_predict_with(
        model,
        &data.features,
        mc,
        seed::derive(seed_value, stream::EVAL),
        temperature,
        Exec::Auto,
    )?)
}

fn collect_sets(desc: &DataDescriptor, ds: &Dataset, dir: &Path, sel: &ShiftSelection) -> Result<Vec<EvalSet>, CliError> {
    let mut sets = vec![EvalSet {
        name: "test".into(),
        shift: "none".into(),
        intensity: 0,
        data: ds.subset(Split::Test),
    }];
    for entry in desc.shifts.iter().filter(|e| sel.includes(e.kind)) {
        sets.push(EvalSet {
            name: format!("{}_{}", entry.kind, entry.intensity),
            shift: entry.kind.to_string(),
            intensity: entry.intensity,
            data: read_dataset(&dir.join(&entry.file), Some(desc.class_count))?,
        });
    }
    Ok(sets)
}

/// Rank correlation of ECE, UCE and AvU-AUC with intensity over every row of one method.
pub fn spearman_rows(method: &str, rows: &[AggregateRow]) -> Vec<SpearmanRow> {
    let x: Vec<f64> = rows.iter().map(|r| r.intensity as f64).collect();
    let metric = |name: &str, f: fn(&AggregateRow) -> f64| {
        let y: Vec<f64> = rows.iter().map(f).collect();
        SpearmanRow {
            method: method.to_string(),
            metric: name.to_string(),
            rho: metrics::spearman_rho(&x, &y).ok(),
            n: rows.len(),
        }
    };
    vec![
        metric("ece", |r| r.ece),
        metric("uce", |r| r.uce),
        metric("avu_auc", |r| r.avu_auc),
    ]
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(avuc_core::Error::from)?;
    for r in rows {
        w.serialize(r).map_err(avuc_core::Error::from)?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn write_curve(path: &Path, report: &EvalReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(avuc_core::Error::from)?;
    w.write_record(["t", "u_th", "avu", "p_acc_given_certain", "p_unc_given_inaccurate"])
        .map_err(avuc_core::Error::from)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.thresholds {
        w.write_record([
            r.t.to_string(),
            r.u_th.to_string(),
            r.avu.to_string(),
            opt(r.p_acc_given_certain),
            opt(r.p_unc_given_inaccurate),
        ])
        .map_err(avuc_core::Error::from)?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone)]
pub struct EvaluateOutput {
    pub aggregate: Vec<AggregateRow>,
    pub spearman: Vec<SpearmanRow>,
    pub reports: Vec<(String, EvalReport)>,
}

pub fn run(args: &EvaluateArgs<'_>) -> Result<EvaluateOutput, CliError> {
    if args.mc == 0 {
        return Err(CliError::Config("--mc must be at least 1".into()));
    }
    let ck = load_checkpoint(args.ckpt)?;
    let model = ck.to_model()?;
    let (desc, ds) = load_data_dir(args.data)?;
    if model.input_dim() != desc.dim || model.class_count != desc.class_count {
        return Err(CliError::Config("checkpoint does not match the dataset dimensions".into()));
    }
    let sets = collect_sets(&desc, &ds, args.data, &args.shifts)?;

    let test_pred = predict(&model, &sets[0].data, args.mc, args.seed, ck.temperature)?;
    let results = par::map_slice(Exec::Auto, &sets, |set| -> Result<EvalReport, CliError> {
        let labels = set.data.class_labels()?;
        let pred = if set.intensity == 0 {
            test_pred.clone()
        } else {
            predict(&model, &set.data, args.mc, args.seed, ck.temperature)?
        };
        let mut report = metrics::evaluate(&pred, &labels, ck.u_th, &args.options)?;
        if set.intensity > 0 {
            report.detection = Some(DetectionReport::compute(&test_pred.entropy, &pred.entropy, args.options.hist_bins)?);
        }
        Ok(report)
    });

    create_dir(&args.out.join(CURVE_DIR))?;
    let mut aggregate = Vec::with_capacity(sets.len());
    let mut reports = Vec::with_capacity(sets.len());
    for (set, report) in sets.iter().zip(results) {
        let report = report?;
        write_json(&args.out.join(format!("{}.json", set.name)), &report)?;
        write_curve(&args.out.join(CURVE_DIR).join(format!("{}.csv", set.name)), &report)?;
        aggregate.push(AggregateRow {
            method: args.method.to_string(),
            shift: set.shift.clone(),
            intensity: set.intensity,
            acc: report.accuracy,
            ece: report.ece,
            uce: report.uce,
            nll: report.nll,
            brier: report.brier,
            avu_auc: report.avu_auc,
        });
        reports.push((set.name.clone(), report));
    }
    let spearman = spearman_rows(args.method, &aggregate);
    write_rows(&args.out.join(AGGREGATE_FILE), &aggregate)?;
    write_rows(&args.out.join(SPEARMAN_FILE), &spearman)?;
    log::info!(
        "{}: test acc {:.4} ece {:.4} uce {:.4}; {} sets written to {}",
        args.method,
        aggregate[0].acc,
        aggregate[0].ece,
        aggregate[0].uce,
        aggregate.len(),
        args.out.display()
    );
    Ok(EvaluateOutput {
        aggregate,
        spearman,
        reports,
    })
}
