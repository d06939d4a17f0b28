use tgx::config::{ExperimentConfig, RuleName, StageHashes};
use tgx::CliError;
use tgx_core::metrics::ThresholdRule;
use tgx_core::reduction::Method;

#[test]
fn empty_file_gives_defaults() {
    let cfg = ExperimentConfig::parse("").unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(cfg.model.layers, 9);
    assert_eq!(cfg.explain.dim, 16);
    assert_eq!(cfg.evaluate.window, 6);
    cfg.resolve(None).unwrap();
}

#[test]
fn dotted_keys_and_tables_agree() {
    let dotted = ExperimentConfig::parse(
        "model.layers = 3\nexplain.reduction = \"svd\"\nevaluate.threshold_rule = \"mean_std\"\n",
    )
    .unwrap();
    let tables = ExperimentConfig::parse(
        "[model]\nlayers = 3\n[explain]\nreduction = \"svd\"\n[evaluate]\nthreshold_rule = \"mean_std\"\n",
    )
    .unwrap();
    assert_eq!(dotted, tables);
    assert_eq!(dotted.model.layers, 3);
    assert_eq!(dotted.explain.reduction, Method::Svd);
    assert_eq!(dotted.evaluate.threshold_rule, RuleName::MeanStd);
    assert_eq!(dotted.metric_config().threshold, ThresholdRule::MeanPlusStd);
}

#[test]
fn unknown_keys_are_config_errors() {
    let err = ExperimentConfig::parse("model.layerz = 3\n").unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn seed_override_reaches_every_stage() {
    let cfg = ExperimentConfig::parse("seed = 4\n").unwrap().resolve(Some(9)).unwrap();
    assert_eq!(cfg.generator.seed, 9);
    assert_eq!(cfg.model.seed, 9);
    assert_eq!(cfg.metric_config().seed, 9);
}

#[test]
fn invalid_values_are_rejected() {
    for text in [
        "explain.dim = 0\n",
        "model.hidden = 4\nmodel.layers = 2\nexplain.dim = 9\n",
        "evaluate.mode = 3\n",
        "explain.modes = [0, 20]\nevaluate.mode = 0\n",
        "generator.infection_prob = 1.5\n",
        "evaluate.window = 0\n",
    ] {
        let err = ExperimentConfig::parse(text).unwrap().resolve(None).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text}: {err}");
    }
}

#[test]
fn values_outside_the_grid_only_warn() {
    ExperimentConfig::parse("model.hidden = 12\nevaluate.delta = 0.33\nevaluate.window = 9\nexplain.dim = 12\n")
        .unwrap()
        .resolve(None)
        .unwrap();
}

#[test]
fn hashes_chain_through_the_stages() {
    let base = StageHashes::of(&ExperimentConfig::default());
    assert_eq!(base, StageHashes::of(&ExperimentConfig::default()));
    assert_eq!(base.train.len(), 16);

    let later = StageHashes::of(&ExperimentConfig::parse("evaluate.delta = 0.5\n").unwrap());
    assert_eq!(later.generate, base.generate);
    assert_eq!(later.train, base.train);
    assert_eq!(later.explain, base.explain);
    assert_ne!(later.evaluate, base.evaluate);

    let earlier = StageHashes::of(&ExperimentConfig::parse("model.beta = 0.5\n").unwrap());
    assert_eq!(earlier.generate, base.generate);
    assert_ne!(earlier.train, base.train);
    assert_ne!(earlier.explain, base.explain);
    assert_ne!(earlier.evaluate, base.evaluate);

    let seeded = StageHashes::of(&ExperimentConfig::parse("").unwrap().resolve(Some(1)).unwrap());
    assert_ne!(seeded.generate, base.generate);
}
