import json

import numpy as np
import pytest

from tsnerisk.dataset import SyntheticConfig, claims_of, generate_synthetic
from tsnerisk.neuralnet import TrainConfig
from tsnerisk.pipeline import ArtifactError, PipelineConfig, RiskPipeline, StageError
from tsnerisk.tsne import TsneConfig

SMALL = PipelineConfig(
    tsne=TsneConfig(perplexity=20, n_iterations=300),
    nn_tsne=TrainConfig(epochs=40),
    nn_risk=TrainConfig(epochs=40),
)


@pytest.fixture(scope="module")
def fitted():
    records, _ = generate_synthetic(SyntheticConfig(n_contracts=400, seed=2))
    return RiskPipeline(SMALL).fit(records[:300]), records[:300], records[300:]


def test_training_points_are_never_out_of_surface(fitted):
    pipe, train, _ = fitted
    scores = pipe.predict(train)
    assert not np.isnan(scores).any()
    assert scores.min() >= 0 and scores.max() <= 1


def test_predict_matches_surface_lookup(fitted):
    pipe, _, test = fitted
    coords = pipe.transform(test)
    np.testing.assert_array_equal(pipe.predict(test), pipe.surface_.score(coords))


def test_evaluate_report(fitted):
    pipe, _, test = fitted
    report = pipe.evaluate(test, insurer=True)
    assert report.n_submitted == 100
    assert report.n_retained + report.n_out_of_surface == 100
    assert report.insurer is not None
    assert sum(report.groups.contracts) == report.n_retained


def test_artifact_round_trip_is_byte_identical(fitted):
    pipe, _, test = fitted
    text = pipe.dumps()
    again = RiskPipeline.loads(text)
    assert again.dumps() == text
    np.testing.assert_array_equal(again.predict(test), pipe.predict(test))


def test_artifact_version_and_consistency_checks(fitted):
    pipe, _, _ = fitted
    data = pipe.to_dict()
    data["format_version"] = 99
    with pytest.raises(ArtifactError, match="format_version"):
        RiskPipeline.from_dict(data)
    data = pipe.to_dict()
    data["train_claims"] = data["train_claims"][:-1]
    with pytest.raises(ArtifactError, match="row counts"):
        RiskPipeline.from_dict(data)
    with pytest.raises(ArtifactError, match="not valid JSON"):
        RiskPipeline.loads("{")
    with pytest.raises(ArtifactError, match="malformed"):
        RiskPipeline.loads(json.dumps({"format_version": 1}))


def test_refit_is_deterministic(fitted):
    pipe, train, _ = fitted
    assert RiskPipeline(SMALL).fit(train).dumps() == pipe.dumps()


def test_config_round_trip_and_unknown_keys():
    cfg = SMALL.with_seed(7)
    assert cfg.tsne.seed == cfg.nn_tsne.seed == cfg.nn_risk.seed == 7
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown pipeline config"):
        PipelineConfig.from_dict({"grid": 3})


def test_stage_failure_names_the_stage():
    records, _ = generate_synthetic(SyntheticConfig(n_contracts=60, seed=0))
    records = [r for r in records if r.claim == 0][:40]
    with pytest.raises(StageError, match="stage 'nn_risk'"):
        RiskPipeline(PipelineConfig(tsne=TsneConfig(perplexity=5, n_iterations=50),
                                    nn_tsne=TrainConfig(epochs=2),
                                    nn_risk=TrainConfig(epochs=2))).fit(records)
    assert claims_of(records).sum() == 0
