use std::fmt::Write as _;

use serde::Serialize;
use survkit::artifact::{subset_design, ExplanationResponse, FeatureThreshold, ModelArtifact};
use survkit::explain::{sign_change_threshold, FeatureImportance, GlobalImportance, SignThreshold, THRESHOLD_BINS};

use crate::fsio::{self, CliError};
use crate::{Cli, ExplainArgs, Split};

#[derive(Serialize)]
struct RowExplanation<'a> {
    row_id: usize,
    #[serde(flatten)]
    explanation: &'a ExplanationResponse,
}

pub fn explain(cli: &Cli, a: &ExplainArgs) -> Result<(), CliError> {
    let data = fsio::load_prepared(&a.data)?;
    let mut art = ModelArtifact::load(&a.model)?;
    let features: Vec<String> = art.features.iter().map(|f| f.name.clone()).collect();
    let cohort = match a.split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    let (sub, x, _) = subset_design(cohort, &features)?;
    let mut rows: Vec<usize> = match a.row {
        Some(id) => vec![sub
            .row_ids
            .iter()
            .position(|&r| r == id)
            .ok_or_else(|| CliError::validation(format!("row id {id} is not in the {:?} split", a.split)))?],
        None => (0..sub.n_rows()).collect(),
    };
    if let Some(m) = a.max_rows {
        rows.truncate(m);
    }
    let mut explanations = Vec::with_capacity(rows.len());
    for &r in &rows {
        let enc = art.encoded_row(x.row(r).to_vec())?;
        explanations.push(art.explain_encoded(&enc).map_err(|e| CliError::from(e.at_row(sub.row_ids[r])))?);
    }

    let wf_dir = cli.out.join("waterfalls");
    fsio::create_dir(&wf_dir)?;
    let mut jsonl = String::new();
    let mut beeswarm = String::from("row_id,feature,value,phi\n");
    for (&r, e) in rows.iter().zip(&explanations) {
        let id = sub.row_ids[r];
        let rec = RowExplanation { row_id: id, explanation: e };
        jsonl.push_str(&serde_json::to_string(&rec).expect("serializes"));
        jsonl.push('\n');
        fsio::write_json(&wf_dir.join(format!("row_{id}.json")), &rec)?;
        for p in &e.phi {
            let _ = writeln!(beeswarm, "{id},{},{},{}", p.feature, p.value_original_scale, p.phi);
        }
    }
    fsio::write_text(&cli.out.join("explanations.jsonl"), &jsonl)?;
    fsio::write_text(&cli.out.join("beeswarm.csv"), &beeswarm)?;

    let names = art.design_names();
    let n = explanations.len().max(1) as f64;
    let mut importance: Vec<FeatureImportance> = names
        .iter()
        .enumerate()
        .map(|(j, name)| FeatureImportance {
            feature: name.clone(),
            mean_abs_phi: explanations.iter().map(|e| e.phi[j].phi.abs()).sum::<f64>() / n,
        })
        .collect();
    importance.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi).then_with(|| a.feature.cmp(&b.feature)));
    fsio::write_json(&cli.out.join("global_importance.json"), &GlobalImportance { features: importance })?;

    let mut thresholds = Vec::new();
    for (j, d) in art.design.iter().enumerate() {
        if d.level.is_some() {
            continue;
        }
        let values: Vec<f64> = explanations.iter().map(|e| e.phi[j].value_original_scale).collect();
        let phi: Vec<f64> = explanations.iter().map(|e| e.phi[j].phi).collect();
        thresholds.push(FeatureThreshold {
            feature: d.name.clone(),
            threshold: sign_change_threshold(&values, &phi, THRESHOLD_BINS),
        });
    }
    fsio::write_json(&cli.out.join("thresholds.json"), &thresholds)?;
    if a.annotate {
        art.thresholds =
            thresholds.into_iter().filter(|t| matches!(t.threshold, SignThreshold::Crossing { .. })).collect();
        let name = a.model.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or("model.json".into());
        fsio::write_text(&cli.out.join(name), &art.to_json()?)?;
    }
    Ok(())
}
