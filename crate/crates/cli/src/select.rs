use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use survkit::featselect::{
    combine_filters, forward_select, inject_priors, mrmr_rank, mutual_information_rank, surf_relieff_rank,
    univariate_cox_screen, CoxScreen, FeatureRanking, ForwardSelection, SelectionResult, MI_BINS,
};
use survkit::models::{ForestParams, ModelSpec};
use survkit::tune::{score_subset, stratified_kfold, SubsetTuning};

use crate::fsio::{self, parse_model_kind, CliError};
use crate::{Cli, SelectArgs, SubsetTuningMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    pub model: String,
    pub tuning: SubsetTuning,
    pub forward: ForwardSelection,
}

/// Everything `select` writes to `selection.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub target: String,
    pub mi_bins: usize,
    pub rankings: Vec<FeatureRanking>,
    pub cox_screen: CoxScreen,
    pub combined: SelectionResult,
    pub folds: usize,
    pub models: Vec<ModelSelection>,
}

impl SelectionFile {
    pub fn subset_for(&self, model: &str) -> Option<&[String]> {
        self.models.iter().find(|m| m.model == model).map(|m| m.forward.selected.as_slice())
    }
}

pub fn select(cli: &Cli, a: &SelectArgs) -> Result<(), CliError> {
    let data = fsio::load_prepared(&a.data)?;
    let train = &data.train;
    let p = train.n_features();
    let m = ((a.keep_frac * p as f64).ceil() as usize).clamp(1, p);
    let rankings = vec![mutual_information_rank(train)?, surf_relieff_rank(train)?, mrmr_rank(train, m)?];
    let cox = univariate_cox_screen(train, a.alpha)?;
    let combined = inject_priors(&combine_filters(&rankings, &cox, a.keep_frac)?, &a.priors)?;
    if combined.candidates.is_empty() {
        return Err(CliError::validation("no candidate features: empty filter intersection and no --priors"));
    }
    let events: Vec<bool> = train.outcomes.iter().map(|o| o.event).collect();
    let folds = stratified_kfold(&events, a.folds, cli.seed)?;
    let mut models = Vec::new();
    for name in &a.models {
        let kind = parse_model_kind(name)?;
        let tuning = match a.subset_tuning {
            SubsetTuningMode::Retune => SubsetTuning::Retune { n_trials: a.subset_trials },
            SubsetTuningMode::Fixed => SubsetTuning::Fixed {
                spec: match ModelSpec::default_for(kind) {
                    ModelSpec::Rsf(fp) => ModelSpec::Rsf(ForestParams { n_trees: a.fixed_trees, ..fp }),
                    ModelSpec::Est(fp) => ModelSpec::Est(ForestParams { n_trees: a.fixed_trees, ..fp }),
                    cox => cox,
                },
            },
        };
        let forward = forward_select(
            &combined.candidates,
            |subset| score_subset(train, subset, kind, &folds, &tuning, cli.seed),
            a.min_improvement,
        )?;
        models.push(ModelSelection { model: kind.name().to_string(), tuning, forward });
    }
    let file = SelectionFile {
        target: "event indicator (filters); censored outcome (Cox screen)".into(),
        mi_bins: MI_BINS,
        rankings,
        cox_screen: cox,
        combined,
        folds: a.folds,
        models,
    };
    fsio::write_json(&cli.out.join("selection.json"), &file)?;
    fsio::write_text(&cli.out.join("selection_report.txt"), &render(&file))?;
    Ok(())
}

fn render(f: &SelectionFile) -> String {
    let mut s = String::new();
    let c = &f.combined;
    let _ = writeln!(s, "Feature universe: {} features; keep fraction {}", c.universe.len(), c.keep_frac);
    for (method, kept) in &c.retained {
        let _ = writeln!(s, "\n{method:?}: {} retained", kept.len());
        let _ = writeln!(s, "  {}", kept.join(", "));
    }
    let _ = writeln!(s, "\nIntersection ({}): {}", c.intersection.len(), c.intersection.join(", "));
    if !c.priors.is_empty() {
        let _ = writeln!(s, "Priors: {}", c.priors.join(", "));
    }
    let _ = writeln!(s, "Candidates ({}): {}", c.candidates.len(), c.candidates.join(", "));
    for w in &c.warnings {
        let _ = writeln!(s, "WARNING: {w}");
    }
    for m in &f.models {
        let _ = writeln!(s, "\nForward selection, {} ({}-fold CV):", m.model, f.folds);
        for (i, step) in m.forward.trace.iter().enumerate() {
            let _ = writeln!(s, "  {:>2}. + {:<24} C = {:.4}", i + 1, step.added, step.score);
            for (name, err) in &step.skipped {
                let _ = writeln!(s, "      skipped {name}: {err}");
            }
        }
        if let Some(r) = m.forward.rejected_score {
            let _ = writeln!(s, "  stop: best next C = {r:.4} (gain < {})", m.forward.min_improvement);
        }
        let _ = writeln!(s, "  selected ({}): {}", m.forward.selected.len(), m.forward.selected.join(", "));
    }
    s
}
