use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use survkit::artifact::{subset_design, ArtifactOptions, ModelArtifact, PatientInput, ServeError};
use survkit::models::{fit_model, ModelSpec};
use survkit::report::{
    auc_curve_csv, evaluate_model, evaluate_risks, km_groups_csv, EvalOptions, Evaluation, RiskInputs, Table1,
};
use survkit::synth::{OracleTruth, STUDY_HORIZON_DAYS};
use survkit::tune::{stratified_kfold, tune_model, Config, CvScore, TpeOptions};

use crate::fsio::{self, parse_model_kind, CliError, ErrorKind};
use crate::select::SelectionFile;
use crate::{Cli, EvaluateArgs, PredictArgs, TrainArgs, TuneArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneFile {
    pub model: String,
    pub features: Vec<String>,
    pub spec: ModelSpec,
    pub config: Config,
    pub cv: CvScore,
    pub best_trial: usize,
    pub n_trials: usize,
    pub folds: usize,
    pub seed: u64,
    pub estimator: String,
}

fn resolve_features(
    explicit: &Option<Vec<String>>,
    selection: Option<&std::path::Path>,
    model: &str,
    all: Vec<String>,
) -> Result<Vec<String>, CliError> {
    if let Some(f) = explicit {
        return Ok(f.clone());
    }
    if let Some(path) = selection {
        let sel: SelectionFile = fsio::read_json(path)?;
        let subset = sel
            .subset_for(model)
            .ok_or_else(|| CliError::validation(format!("{} has no forward selection for `{model}`", path.display())))?;
        if subset.is_empty() {
            return Err(CliError::validation(format!("forward selection for `{model}` selected no features")));
        }
        return Ok(subset.to_vec());
    }
    Ok(all)
}

pub fn tune(cli: &Cli, a: &TuneArgs) -> Result<(), CliError> {
    let kind = parse_model_kind(&a.model)?;
    let data = fsio::load_prepared(&a.data)?;
    let features = resolve_features(&a.features, a.selection.as_deref(), kind.name(), data.train.feature_names())?;
    let (train, x, _) = subset_design(&data.train, &features)?;
    let events: Vec<bool> = train.outcomes.iter().map(|o| o.event).collect();
    let folds = stratified_kfold(&events, a.folds, cli.seed)?;
    let r = tune_model(kind, &x, &train.outcomes, &folds, a.trials, cli.seed, &TpeOptions::default())?;
    let best = r.log.best().expect("tuning succeeded").index;
    let mut jsonl = Vec::new();
    r.log.write_jsonl(&mut jsonl)?;
    let name = kind.name();
    fsio::write_text(&cli.out.join(format!("trials_{name}.jsonl")), &String::from_utf8_lossy(&jsonl))?;
    let mut trace = String::from("trial,score,best_so_far\n");
    for (t, b) in r.log.trials.iter().zip(r.log.best_so_far()) {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(trace, "{},{},{}", t.index, opt(t.score), opt(b));
    }
    fsio::write_text(&cli.out.join(format!("tpe_trace_{name}.csv")), &trace)?;
    let file = TuneFile {
        model: name.to_string(),
        features,
        spec: r.spec,
        config: r.config,
        cv: r.cv,
        best_trial: best,
        n_trials: a.trials,
        folds: a.folds,
        seed: cli.seed,
        estimator: "TPE with independent per-dimension Parzen estimators".into(),
    };
    fsio::write_json(&cli.out.join(format!("tune_{name}.json")), &file)
}

/// 6142 days when follow-up reaches it, else the last training event time.
fn default_horizon(train: &survkit::dataset::Cohort) -> f64 {
    let max_time = train.outcomes.iter().map(|o| o.time).fold(0.0, f64::max);
    if max_time >= STUDY_HORIZON_DAYS {
        return STUDY_HORIZON_DAYS;
    }
    train.outcomes.iter().filter(|o| o.event).map(|o| o.time).fold(0.0, f64::max)
}

pub fn train(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    let data = fsio::load_prepared(&a.data)?;
    let (spec, features, c_cv) = match &a.tune {
        Some(path) => {
            let t: TuneFile = fsio::read_json(path)?;
            if a.model.is_some() || a.features.is_some() {
                return Err(CliError::validation("--tune already fixes the model and features"));
            }
            (t.spec, t.features, Some(t.cv.mean))
        }
        None => {
            let kind = parse_model_kind(a.model.as_deref().unwrap_or("est"))?;
            let features = resolve_features(&a.features, None, kind.name(), data.train.feature_names())?;
            (ModelSpec::default_for(kind), features, None)
        }
    };
    let (train, x, _) = subset_design(&data.train, &features)?;
    let model = fit_model(&spec, &x, &train.outcomes, cli.seed)?;
    let opts = ArtifactOptions {
        horizon_days: a.horizon.unwrap_or_else(|| default_horizon(&train)),
        background_cap: a.background_cap,
        donor_cap: a.donor_cap,
        knn_k: 5,
        seed: cli.seed,
    };
    let artifact = ModelArtifact::build(model, spec.clone(), &train, &data.stats, c_cv, &opts)?;
    let path = cli.out.join(format!("model_{}.json", spec.kind().name()));
    fsio::write_text(&path, &artifact.to_json()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFile {
    pub horizon_days: f64,
    pub table1: Table1,
    pub evaluations: BTreeMap<String, Evaluation>,
}

pub fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<(), CliError> {
    let data = fsio::load_prepared(&a.data)?;
    let mut rows = Vec::new();
    let mut evaluations = BTreeMap::new();
    let mut horizon = None;
    for path in &a.models {
        let art = ModelArtifact::load(path)?;
        let features: Vec<String> = art.features.iter().map(|f| f.name.clone()).collect();
        let (train, xtr, _) = subset_design(&data.train, &features)?;
        let (test, xte, _) = subset_design(&data.test, &features)?;
        let mut name = art.model.kind().display_name().to_string();
        let mut k = 2;
        while evaluations.contains_key(&name) {
            name = format!("{}_{k}", art.model.kind().display_name());
            k += 1;
        }
        let e = evaluate_model(
            &name,
            &features,
            &art.model,
            art.summary.cv_cindex,
            &xtr,
            &train.outcomes,
            &xte,
            &test.outcomes,
            &EvalOptions::new(art.horizon_days),
        )?;
        horizon.get_or_insert(art.horizon_days);
        write_exports(&cli.out, &name, &e)?;
        rows.push(e.report.clone());
        evaluations.insert(name, e);
    }
    if let Some(path) = &a.truth {
        let truth: OracleTruth = fsio::read_json(path)?;
        let h = horizon.unwrap_or(STUDY_HORIZON_DAYS);
        let e = oracle_evaluation(&truth, &data, h)?;
        write_exports(&cli.out, ORACLE, &e)?;
        rows.push(e.report.clone());
        evaluations.insert(ORACLE.to_string(), e);
    }
    let table1 = Table1::new(rows);
    fsio::write_text(&cli.out.join("table1.csv"), &table1.to_csv())?;
    let file = EvaluationFile { horizon_days: horizon.unwrap_or(STUDY_HORIZON_DAYS), table1, evaluations };
    fsio::write_json(&cli.out.join("report.json"), &file)
}

const ORACLE: &str = "Oracle";

fn write_exports(out: &std::path::Path, name: &str, e: &Evaluation) -> Result<(), CliError> {
    let tag = name.to_ascii_lowercase();
    fsio::write_text(&out.join(format!("auc_curve_{tag}.csv")), &auc_curve_csv(&e.auc_curve))?;
    fsio::write_text(&out.join(format!("km_groups_{tag}.csv")), &km_groups_csv(&e.risk_groups))?;
    fsio::write_text(&out.join(format!("km_groups_train_{tag}.csv")), &km_groups_csv(&e.risk_groups_train))?;
    fsio::write_json(&out.join(format!("risk_groups_{tag}.json")), &e.risk_groups)?;
    fsio::write_json(&out.join(format!("risk_groups_train_{tag}.json")), &e.risk_groups_train)?;
    if let Some(b) = &e.brier {
        let mut s = String::from("t_days,brier\n");
        for (t, v) in b.grid.iter().zip(&b.brier) {
            let _ = writeln!(s, "{t},{v}");
        }
        fsio::write_text(&out.join(format!("brier_{tag}.csv")), &s)?;
    }
    Ok(())
}

/// Scores the generating model itself: risks are the true linear predictors
/// and survival curves the true Weibull survival, looked up by row id.
fn oracle_evaluation(truth: &OracleTruth, data: &fsio::Prepared, horizon: f64) -> Result<Evaluation, CliError> {
    let eta = |ids: &[usize]| -> Result<Vec<f64>, CliError> {
        ids.iter()
            .map(|&i| {
                truth.eta.get(i).copied().ok_or_else(|| CliError::validation(format!("truth has no row {i}")))
            })
            .collect()
    };
    let train_risks = eta(&data.train.row_ids)?;
    let test_risks = eta(&data.test.row_ids)?;
    let ids = data.test.row_ids.clone();
    let survival = move |grid: &[f64]| -> survkit::Result<Vec<Vec<f64>>> {
        Ok(ids.iter().map(|&i| grid.iter().map(|&t| truth.survival(i, t)).collect()).collect())
    };
    let features = truth.informative.clone();
    Ok(evaluate_risks(
        ORACLE,
        &features,
        None,
        &RiskInputs {
            train_risks: &train_risks,
            train: &data.train.outcomes,
            test_risks: &test_risks,
            test: &data.test.outcomes,
        },
        Some(&survival),
        &EvalOptions::new(horizon),
    )?)
}

/// The JSON line printed by `predict`.
pub fn predict(a: &PredictArgs) -> Result<String, CliError> {
    let art = ModelArtifact::load(&a.model)?;
    let text = if a.input.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(|e| fsio::io_err(&a.input, e))?;
        s
    } else {
        fsio::read_text(&a.input)?
    };
    let input: PatientInput =
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("patient input: {e}")))?;
    let resp = art.predict(&input).map_err(|e| match e {
        ServeError::Input(rej) => CliError::validation(serde_json::to_string(&rej).expect("serializes")),
        ServeError::Model(e) => e.into(),
    })?;
    let mut body = serde_json::to_string(&resp).map_err(|e| CliError::new(ErrorKind::Io, e.to_string()))?;
    body.push('\n');
    Ok(body)
}
