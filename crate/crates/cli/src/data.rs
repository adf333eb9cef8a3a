use serde::Serialize;
use survkit::dataset::{load_cohort, preprocess as run_preprocess, PreprocessConfig, Schema};
use survkit::synth::{generate_cohort, paper_shaped_spec, sparse_linear_spec, threshold_interaction_spec, CohortSpec};

use crate::fsio::{self, CliError};
use crate::{Cli, PreprocessArgs, Preset, SynthArgs};

fn build_spec(cli: &Cli, a: &SynthArgs) -> Result<CohortSpec, CliError> {
    let mut spec = match (&a.spec, a.preset) {
        (Some(path), _) => fsio::read_json::<CohortSpec>(path)?,
        (None, Preset::PaperShaped) => {
            let mut s = paper_shaped_spec(cli.seed);
            if let Some(n) = a.n {
                s.n = n;
            }
            if a.p.is_some() {
                return Err(CliError::validation("--p does not apply to the paper-shaped preset"));
            }
            s
        }
        (None, Preset::SparseLinear) => {
            let p = a.p.unwrap_or(20);
            if a.informative > p {
                return Err(CliError::validation(format!("--informative {} exceeds --p {p}", a.informative)));
            }
            sparse_linear_spec(a.n.unwrap_or(500), p, a.informative, a.effect, cli.seed)
        }
        (None, Preset::ThresholdInteraction) => {
            let p = a.p.unwrap_or(10);
            if p < 5 {
                return Err(CliError::validation("threshold-interaction needs --p >= 5"));
            }
            threshold_interaction_spec(a.n.unwrap_or(1500), p, cli.seed)
        }
    };
    if a.spec.is_some() {
        spec.seed = cli.seed;
    }
    if let Some(c) = a.censoring {
        spec.censoring_target = c;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn synth(cli: &Cli, a: &SynthArgs) -> Result<(), CliError> {
    let spec = build_spec(cli, a)?;
    let (cohort, truth) = generate_cohort(&spec)?;
    fsio::write_cohort_csv(&cli.out.join("cohort.csv"), &cohort)?;
    fsio::write_json(&cli.out.join("schema.json"), &cohort.schema())?;
    fsio::write_json(&cli.out.join("truth.json"), &truth)?;
    fsio::write_json(&cli.out.join("spec.json"), &spec)?;
    Ok(())
}

#[derive(Serialize)]
struct PreprocessReport<'a> {
    sparse: &'a survkit::dataset::SparseRemovalReport,
    samples: &'a survkit::dataset::SampleRemovalReport,
    n_clean: usize,
    n_train: usize,
    n_test: usize,
    events_train: usize,
    events_test: usize,
    event_fraction_train: f64,
    event_fraction_test: f64,
    train_imputed_cells: usize,
    test_imputed_cells: usize,
    zero_variance: Vec<&'a str>,
}

#[derive(Serialize)]
struct SplitFile<'a> {
    /// Row ids (0-based data rows of the input CSV).
    train_row_ids: &'a [usize],
    test_row_ids: &'a [usize],
}

pub fn preprocess(cli: &Cli, a: &PreprocessArgs) -> Result<(), CliError> {
    let schema_path = a.schema.clone().unwrap_or_else(|| {
        a.input.parent().unwrap_or_else(|| std::path::Path::new(".")).join("schema.json")
    });
    let schema = Schema::load(&schema_path)?;
    let cohort = load_cohort(&a.input, &schema)?;
    let cfg = PreprocessConfig {
        max_missing_frac: a.max_missing,
        required: a.required.clone(),
        train_frac: a.train_frac,
        knn_k: a.knn_k,
        seed: cli.seed,
    };
    let p = run_preprocess(&cohort, &cfg)?;
    let out = &cli.out;
    fsio::write_cohort_csv(&out.join("clean.csv"), &p.clean)?;
    fsio::write_json(&out.join("schema.json"), &p.clean.schema())?;
    fsio::write_json(&out.join("train.json"), &p.train)?;
    fsio::write_json(&out.join("test.json"), &p.test)?;
    fsio::write_cohort_csv(&out.join("train_normalized.csv"), &p.train)?;
    fsio::write_cohort_csv(&out.join("test_normalized.csv"), &p.test)?;
    fsio::write_json(&out.join("normalization.json"), &p.stats)?;
    fsio::write_json(
        &out.join("split.json"),
        &SplitFile { train_row_ids: &p.train.row_ids, test_row_ids: &p.test.row_ids },
    )?;
    fsio::write_json(&out.join("baseline.json"), &p.baseline)?;
    fsio::write_text(&out.join("baseline.csv"), &baseline_csv(&p.baseline))?;
    let frac = |c: &survkit::dataset::Cohort| c.n_events() as f64 / c.n_rows().max(1) as f64;
    let report = PreprocessReport {
        sparse: &p.sparse,
        samples: &p.samples,
        n_clean: p.clean.n_rows(),
        n_train: p.train.n_rows(),
        n_test: p.test.n_rows(),
        events_train: p.train.n_events(),
        events_test: p.test.n_events(),
        event_fraction_train: frac(&p.train),
        event_fraction_test: frac(&p.test),
        train_imputed_cells: p.train_imputation.imputed_cells,
        test_imputed_cells: p.test_imputation.imputed_cells,
        zero_variance: p.stats.flagged(),
    };
    fsio::write_json(&out.join("preprocess_report.json"), &report)?;
    Ok(())
}

fn baseline_csv(t: &survkit::dataset::BaselineTable) -> String {
    let mut s = String::from("feature,test,statistic,p_value,p_adjusted,significant,skipped\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &t.rows {
        s.push_str(&format!(
            "{},{:?},{},{},{},{},{}\n",
            r.feature,
            r.test,
            opt(r.statistic),
            opt(r.p_value),
            opt(r.p_adjusted),
            r.significant,
            r.skipped.as_deref().unwrap_or("")
        ));
    }
    s
}
