use axum::body::Body;
use axum::http::{Request, StatusCode};
use clap::Parser;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use survkit::artifact::{ArtifactOptions, ModelArtifact};
use survkit::dataset::{apply_normalizer, fit_normalizer};
use survkit::models::{fit_model, FittedModel, ForestParams, ModelSpec};
use survkit::synth::{generate_cohort, CohortSpec, Marginal, SynthFeature};
use survkit_service::{router, AppState};
use tower::ServiceExt;

fn spec() -> CohortSpec {
    CohortSpec {
        n: 300,
        features: vec![
            SynthFeature {
                name: "age".into(),
                marginal: Marginal::Normal { mean: 60.0, sd: 10.0 },
                coef: 0.9,
                missing_rate: 0.0,
                required: true,
                unit: Some("years".into()),
            },
            SynthFeature::standard("marker", 0.0),
            SynthFeature {
                name: "smoker".into(),
                marginal: Marginal::Categorical { levels: vec!["no".into(), "yes".into()], probs: vec![0.6, 0.4] },
                coef: 0.5,
                missing_rate: 0.0,
                required: false,
                unit: None,
            },
        ],
        blocks: vec![],
        terms: vec![],
        weibull_shape: 1.4,
        weibull_scale: 1000.0,
        censoring_target: 0.3,
        horizon: None,
        seed: 11,
    }
}

fn artifact(model: ModelSpec) -> ModelArtifact {
    let (raw, _) = generate_cohort(&spec()).unwrap();
    let all: Vec<usize> = (0..raw.n_rows()).collect();
    let stats = fit_normalizer(&raw, &all);
    let train = apply_normalizer(&raw, &stats);
    let (x, _) = train.design_matrix();
    let fitted = fit_model(&model, &x, &train.outcomes, 1).unwrap();
    let opts = ArtifactOptions { horizon_days: 900.0, background_cap: 40, ..Default::default() };
    ModelArtifact::build(fitted, model, &train, &stats, Some(0.7), &opts).unwrap()
}

fn cox() -> ModelArtifact {
    artifact(ModelSpec::Cox { lambda: 0.01 })
}

fn est() -> ModelArtifact {
    artifact(ModelSpec::Est(ForestParams { n_trees: 30, ..Default::default() }))
}

async fn call(app: axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn app(a: ModelArtifact) -> axum::Router {
    router(AppState::new(Some(a), 2))
}

fn patient() -> Value {
    json!({"age": 67.0, "marker": 0.4, "smoker": "yes"})
}

#[tokio::test]
async fn no_artifact_is_503() {
    let empty = router(AppState::new(None, 1));
    assert_eq!(call(empty.clone(), "GET", "/model", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(call(empty, "POST", "/predict", Some(patient())).await.0, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn model_metadata_describes_the_form() {
    let a = cox();
    let (status, body) = call(app(a.clone()), "GET", "/model", None).await;
    assert_eq!(status, StatusCode::OK);
    let m: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(m["features"].as_array().unwrap().len(), a.features.len());
    assert_eq!(m["horizon_days"], 900.0);
    assert_eq!(m["features"][0]["unit"], "years");
    assert_eq!(m["features"][2]["levels"], json!(["no", "yes"]));
    let names: Vec<&str> = m["features"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    for t in m["thresholds"].as_array().unwrap() {
        assert!(names.contains(&t["feature"].as_str().unwrap()));
    }
}

#[tokio::test]
async fn training_mean_patient_gets_baseline_probability() {
    let a = cox();
    let mean = |n: &str| a.normalization.get(n).unwrap().mean;
    let input = json!({"age": mean("age"), "marker": mean("marker"), "smoker": "no"});
    let (status, body) = call(app(a.clone()), "POST", "/predict", Some(input)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let v: Value = serde_json::from_str(&body).unwrap();
    let FittedModel::Cox(m) = &a.model else { unreachable!() };
    let expected = 1.0 - (-m.baseline_hazard.eval(900.0)).exp();
    assert!((v["probability"].as_f64().unwrap() - expected).abs() < 1e-12);
    let curve = v["survival_curve"].as_array().unwrap();
    assert!(curve.windows(2).all(|w| w[1]["value"].as_f64() <= w[0]["value"].as_f64()));
}

#[tokio::test]
async fn validation_statuses() {
    let router = app(cox());
    let (status, body) = call(router.clone(), "POST", "/predict", Some(json!({"marker": 1.0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body.contains("\"feature\":\"age\""), "{body}");
    let (status, body) = call(router.clone(), "POST", "/predict", Some(json!({"age": 60, "smoker": "maybe"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body.contains("smoker"));
    let (status, _) = call(router.clone(), "POST", "/predict", Some(json!({"age": 900.0}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let req = Request::post("/predict").body(Body::from("{not json")).unwrap();
    assert_eq!(router.oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn absent_optional_features_are_imputed() {
    let (status, body) = call(app(cox()), "POST", "/predict", Some(json!({"age": 50.0}))).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["imputed"], json!(["marker", "smoker"]));
}

#[tokio::test]
async fn explanation_is_locally_accurate_and_deterministic() {
    let router = app(est());
    let (status, body) = call(router.clone(), "POST", "/explain", Some(patient())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let v: Value = serde_json::from_str(&body).unwrap();
    let sum: f64 = v["phi"].as_array().unwrap().iter().map(|p| p["phi"].as_f64().unwrap()).sum();
    let (_, pbody) = call(router.clone(), "POST", "/predict", Some(patient())).await;
    let p: Value = serde_json::from_str(&pbody).unwrap();
    let prob = p["probability"].as_f64().unwrap();
    assert!((v["base"].as_f64().unwrap() + sum - prob).abs() < 1e-6);
    assert!((v["phi"][0]["value_original_scale"].as_f64().unwrap() - 67.0).abs() < 1e-9);
    let (_, again) = call(router, "POST", "/explain", Some(patient())).await;
    assert_eq!(body, again);
}

#[tokio::test]
async fn whatif_deltas() {
    let router = app(cox());
    let req = json!({
        "base": patient(),
        "overrides": [{"feature": "age", "value": 67.0}, {"feature": "age", "value": 80.0}]
    });
    let (status, body) = call(router.clone(), "POST", "/whatif", Some(req)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["results"][0]["delta_probability"], 0.0);
    assert!(v["results"][1]["delta_probability"].as_f64().unwrap() > 0.0);
    let (_, body) = call(router.clone(), "POST", "/whatif", Some(json!({"base": patient(), "overrides": []}))).await;
    let v: Value = serde_json::from_str(&body).unwrap();
    assert!(v["results"].as_array().unwrap().is_empty());
    assert!(v["base"]["probability"].is_number());
    let bad = json!({"base": patient(), "overrides": [{"feature": "bmi", "value": 1.0}]});
    assert_eq!(call(router, "POST", "/whatif", Some(bad)).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn cors_headers_present() {
    let req = Request::get("/health").header("origin", "http://localhost:5173").body(Body::empty()).unwrap();
    let resp = app(cox()).oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}

#[tokio::test]
async fn predict_matches_cli_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let a = est();
    let model_path = dir.path().join("model.json");
    std::fs::write(&model_path, a.to_json().unwrap()).unwrap();
    let input_path = dir.path().join("patient.json");
    std::fs::write(&input_path, patient().to_string()).unwrap();
    let cli = survkit_cli::Cli::parse_from([
        "survkit",
        "predict",
        "--model",
        model_path.to_str().unwrap(),
        "--input",
        input_path.to_str().unwrap(),
    ]);
    let mut out = Vec::new();
    survkit_cli::run(&cli, &mut out).unwrap();
    let loaded = ModelArtifact::load(&model_path).unwrap();
    let (status, body) = call(app(loaded), "POST", "/predict", Some(patient())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.as_bytes(), out.as_slice());
}
