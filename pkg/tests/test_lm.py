import numpy as np
import pytest

from tabtext.datasets import register_builtin
from tabtext.lm import (LOCAL_TINY, LOCAL_TRAIN_DEFAULTS, BackboneUnresolvable, LMError, LogitMatrix, TextClassifier,
                        TrainConfig, backbone_benchmark, evaluate_classifier, fine_tune, predict_logits)
from tabtext.template import SerializedExample, load_builtin_template, render_dataset


@pytest.fixture(scope="module")
def titanic_corpus():
    return render_dataset(register_builtin("titanic"), load_builtin_template("titanic"))


def one_batch_config(**kw):
    base = dict(learning_rate=1e-3, batch_size=16, epochs=60, dropout=0.0, scheduler="none",
                early_stopping_patience=None)
    return TrainConfig(**{**base, **kw})


def test_overfit_one_batch(titanic_corpus):
    batch = titanic_corpus[:16]
    clf = fine_tune(batch, LOCAL_TINY, one_batch_config())
    h = clf.history
    assert h.epochs_run == 60
    assert h.epoch_end_loss[-1] < 0.1 * h.initial_loss


def test_train_config_validation_and_loss():
    with pytest.raises(LMError):
        TrainConfig(batch_size=0)
    with pytest.raises(LMError):
        TrainConfig(scheduler="cosine")
    assert TrainConfig().resolve_loss(2) == "binary_cross_entropy"
    assert TrainConfig().resolve_loss(3) == "cross_entropy"
    with pytest.raises(LMError, match="does not fit"):
        TrainConfig(loss="binary_cross_entropy").resolve_loss(3)


def test_local_recipe_applies_only_to_local_backbones():
    assert TrainConfig.for_backbone(LOCAL_TINY).learning_rate == LOCAL_TRAIN_DEFAULTS["learning_rate"]
    assert TrainConfig.for_backbone("distilbert-base-uncased") == TrainConfig()
    assert TrainConfig.for_backbone(LOCAL_TINY, epochs=2).epochs == 2


def test_single_class_corpus_rejected():
    corpus = [SerializedExample("a b c", 1, 0), SerializedExample("b c d", 1, 0)]
    with pytest.raises(LMError, match="single-class"):
        fine_tune(corpus, LOCAL_TINY, one_batch_config(epochs=1))
    clf = fine_tune(corpus, LOCAL_TINY, one_batch_config(epochs=1), num_classes=2)
    assert clf.num_classes == 2


def test_unknown_backbones_raise():
    corpus = [SerializedExample("a", 0, 0), SerializedExample("b", 1, 0)]
    with pytest.raises(BackboneUnresolvable):
        fine_tune(corpus, "local:nope", one_batch_config(epochs=1))
    with pytest.raises(BackboneUnresolvable):
        fine_tune(corpus, "no-such-org/no-such-model-xyz", one_batch_config(epochs=1))


def test_logits_shape_save_load_round_trip(tmp_path, titanic_corpus):
    train = titanic_corpus[:64]
    clf = fine_tune(train, LOCAL_TINY, one_batch_config(epochs=2), checkpoint_dir=tmp_path / "ck")
    texts = [ex.text for ex in titanic_corpus[100:110]]
    lm = predict_logits(clf, texts)
    assert isinstance(lm, LogitMatrix) and lm.values.shape == (10, 2)
    np.testing.assert_allclose(lm.probabilities().sum(1), 1.0)
    back = TextClassifier.load(tmp_path / "ck")
    np.testing.assert_allclose(predict_logits(back, texts).values, lm.values, atol=1e-5)
    rep = evaluate_classifier(clf, titanic_corpus[100:140])
    assert rep.n == 40 and rep.loss is not None and rep.samples_per_second > 0


def test_training_is_deterministic(titanic_corpus):
    a = fine_tune(titanic_corpus[:48], LOCAL_TINY, one_batch_config(epochs=2))
    b = fine_tune(titanic_corpus[:48], LOCAL_TINY, one_batch_config(epochs=2))
    texts = [ex.text for ex in titanic_corpus[200:210]]
    np.testing.assert_array_equal(predict_logits(a, texts).values, predict_logits(b, texts).values)


def test_logit_matrix_validation():
    with pytest.raises(LMError):
        LogitMatrix(np.zeros((2, 3)), (0, 1))
    with pytest.raises(LMError, match="non-finite"):
        LogitMatrix(np.array([[np.nan, 0.0]]), (0, 1))


def test_backbone_benchmark_isolates_failures(titanic_corpus):
    res = backbone_benchmark(["local:nope", LOCAL_TINY], titanic_corpus[:40], titanic_corpus[40:60],
                             overrides={"epochs": 1})
    assert res[0].failed and "BackboneUnresolvable" in res[0].error
    assert not res[1].failed and res[1].report.n == 20
