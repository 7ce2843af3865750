import json
import math

import numpy as np
import pytest
from scipy.special import logit

from zilm.domain import (
    Attempt,
    ConfigError,
    ContentType,
    DataError,
    Dataset,
    Delivery,
    Item,
    NdcProfile,
    NumericError,
    Outcome,
    ResponseType,
    Split,
    StudentProfile,
    Subject,
)
from zilm.fit import (
    FitConfig,
    FittedModel,
    ModelKind,
    Optimizer,
    TrainingTrace,
    check_gradients,
    fit,
    load_model,
    predict,
    save_model,
    save_trace,
)
from zilm.models import PI_FEATURE_COUNT, ZilmParams, irt_prob


def separable_dataset():
    """Four attempts whose labels follow the delivery type exactly."""
    students = [StudentProfile(0, 0.0, NdcProfile()), StudentProfile(1, 0.0, NdcProfile())]

    def item(i, delivery):
        return Item(i, 0.0, 1.0, 0.0, Subject.MATHS, ContentType.BOTH, 0.5,
                    delivery, ResponseType.WRITTEN)

    items = [item(0, Delivery.READ), item(1, Delivery.LISTEN),
             item(2, Delivery.READ), item(3, Delivery.LISTEN)]
    attempts = [
        Attempt(0, 0, Outcome.CORRECT, split=Split.TRAIN),
        Attempt(0, 1, Outcome.INCORRECT, split=Split.TRAIN),
        Attempt(1, 2, Outcome.CORRECT, split=Split.TRAIN),
        Attempt(1, 3, Outcome.INCORRECT, split=Split.TRAIN),
    ]
    return Dataset(students=students, items=items, attempts=attempts)


class TestFit:
    def test_separable_toy_reaches_tiny_nll(self):
        model = fit(separable_dataset(), ModelKind.KTM1,
                    FitConfig(l2_theta=0.0, l2_item=0.0, l2_weights=0.0))
        assert model.trace.nll[-1] < 0.05
        assert model.trace.iterations <= 3000

    def test_gradient_descent_monotone_on_toy(self):
        cfg = FitConfig(optimizer=Optimizer.GRADIENT_DESCENT, learning_rate=0.01,
                        max_iters=400)
        for kind in (ModelKind.KTM1, ModelKind.IRT_ZILM):
            model = fit(separable_dataset(), kind, cfg)
            deltas = np.diff(model.trace.nll)
            assert (deltas <= 1e-9).all(), f"{kind} ascended: max delta {deltas.max()}"

    def test_bit_identical_refits(self, small_dataset):
        cfg = FitConfig(max_iters=200)
        a = fit(small_dataset, ModelKind.IRT_ZILM, cfg)
        b = fit(small_dataset, ModelKind.IRT_ZILM, cfg)
        assert (a.params.to_vector() == b.params.to_vector()).all()
        assert a.trace.nll == b.trace.nll

    def test_kind_accepts_strings_and_rejects_unknown(self, small_dataset):
        model = fit(small_dataset, "ktm1", FitConfig(max_iters=5))
        assert model.kind is ModelKind.KTM1
        with pytest.raises(ConfigError, match="unknown model kind"):
            fit(small_dataset, "dkt", FitConfig(max_iters=5))

    def test_irt_kind_keeps_inflation_frozen(self, small_dataset):
        model = fit(small_dataset, ModelKind.IRT, FitConfig(max_iters=50))
        assert model.params.w_pi[0] == -13.8
        assert (model.params.w_pi[1:] == 0).all()

    def test_pi_bias_initialised_at_five_percent(self):
        from zilm.fit import _init_params
        params = _init_params(ModelKind.IRT_ZILM, 5, 5, FitConfig())
        assert params.w_pi[0] == pytest.approx(float(logit(0.05)))

    def test_empty_train_split_rejected(self):
        ds = separable_dataset()
        test_only = Dataset(
            students=ds.students, items=ds.items,
            attempts=[Attempt(a.student_id, a.item_id, a.outcome, split=Split.TEST)
                      for a in ds.attempts],
        )
        with pytest.raises(DataError, match="no attempts"):
            fit(test_only, ModelKind.KTM1, FitConfig(max_iters=5))

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_numeric_blowup_reports_iteration(self):
        cfg = FitConfig(optimizer=Optimizer.GRADIENT_DESCENT, learning_rate=1e160,
                        max_iters=10)
        with pytest.raises(NumericError, match="iteration"):
            fit(separable_dataset(), ModelKind.IRT_ZILM, cfg)

    def test_ability_location_anchored(self, default_models):
        # regularization pins the location gauge of the ability scale
        for kind in (ModelKind.IRT, ModelKind.IRT_ZILM):
            mean_theta = float(default_models[kind].params.theta.mean())
            assert -0.15 <= mean_theta <= 0.15

    def test_held_out_nll_ordering(self, default_dataset, default_design, default_models):
        from zilm.evaluate import classification_metrics
        zilm_nll = classification_metrics(default_models[ModelKind.IRT_ZILM],
                                          default_dataset, design=default_design).nll
        irt_nll = classification_metrics(default_models[ModelKind.IRT],
                                         default_dataset, design=default_design).nll
        assert zilm_nll <= irt_nll


class TestFitConfig:
    def test_validation(self):
        assert FitConfig().validate() == []
        assert any("learning_rate" in p for p in FitConfig(learning_rate=0).validate())
        assert any("rel_tol" in p for p in FitConfig(rel_tol=0).validate())

    def test_json_round_trip(self, tmp_path):
        cfg = FitConfig(learning_rate=0.1, optimizer=Optimizer.GRADIENT_DESCENT)
        path = tmp_path / "fit.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert FitConfig.from_json_file(path) == cfg

    def test_unknown_optimizer_rejected(self):
        with pytest.raises(ConfigError, match="unknown optimizer"):
            FitConfig.from_dict({"optimizer": "lbfgs"})


class TestCheckGradients:
    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_small_instance_fidelity(self, kind, tiny_dataset):
        report = check_gradients(kind, tiny_dataset, FitConfig(seed=0), 1e-5)
        assert report["overall"] < 1e-4

    def test_zero_epsilon_rejected(self, tiny_dataset):
        with pytest.raises(ConfigError, match="epsilon"):
            check_gradients(ModelKind.IRT, tiny_dataset, FitConfig(), 0.0)

    def test_frozen_block_excluded_for_irt(self, tiny_dataset):
        report = check_gradients(ModelKind.IRT, tiny_dataset, FitConfig(), 1e-5)
        assert "w_pi" not in report
        assert {"theta", "b", "a_raw", "g_raw"} <= set(report)


def worked_example_model(dataset):
    """pi = 0.75 on every context, p = 0.6 for student 0 on item 0."""
    n_s, n_i = len(dataset.students), len(dataset.items)
    params = ZilmParams(
        theta=np.full(n_s, float(logit(0.6))),
        b=np.zeros(n_i),
        a_raw=np.full(n_i, math.log(math.e - 1.0)),  # discrimination 1
        g_raw=np.full(n_i, -800.0),  # guessing exactly 0 in floats
        w_pi=np.concatenate([[float(logit(0.75))], np.zeros(PI_FEATURE_COUNT - 1)]),
    )
    return FittedModel(kind=ModelKind.IRT_ZILM, n_students=n_s, n_items=n_i,
                       params=params, trace=TrainingTrace([0.5], 1, True),
                       fit_config=FitConfig())


class TestPredict:
    def test_mixture_worked_example(self):
        ds = separable_dataset()
        model = worked_example_model(ds)
        assert predict(model, ds, 0, 0) == pytest.approx(0.15, abs=1e-9)

    def test_irt_kind_equals_irt_prob(self, small_dataset):
        model = fit(small_dataset, ModelKind.IRT, FitConfig(max_iters=60))
        for sid, iid in ((0, 3), (5, 17), (40, 0)):
            assert predict(model, small_dataset, sid, iid) == irt_prob(model.params, sid, iid)

    def test_no_inflation_reduces_to_irt_component(self):
        ds = separable_dataset()
        model = worked_example_model(ds)
        model.params.w_pi[0] = -800.0  # pi = 0 in floats
        assert predict(model, ds, 0, 0) == pytest.approx(irt_prob(model.params, 0, 0), abs=1e-12)

    def test_context_override_changes_inflation_only(self, small_dataset):
        model = fit(small_dataset, ModelKind.IRT_ZILM, FitConfig(max_iters=150))
        base = predict(model, small_dataset, 1, 2)
        via_listen = predict(model, small_dataset, 1, 2, delivery=Delivery.LISTEN)
        assert base != via_listen or small_dataset.items[2].delivery is Delivery.LISTEN

    def test_unknown_ids_rejected(self):
        ds = separable_dataset()
        model = worked_example_model(ds)
        with pytest.raises(IndexError):
            predict(model, ds, 99, 0)

    def test_incompatible_dataset_rejected(self, small_dataset):
        model = worked_example_model(separable_dataset())
        with pytest.raises(DataError, match="model sized for"):
            predict(model, small_dataset, 0, 0)


class TestSerialization:
    def test_model_round_trip(self, small_dataset, tmp_path):
        model = fit(small_dataset, ModelKind.IRT_ZILM, FitConfig(max_iters=40))
        save_model(model, tmp_path / "model.json")
        loaded = load_model(tmp_path / "model.json")
        assert loaded.kind is model.kind
        assert (loaded.params.to_vector() == model.params.to_vector()).all()
        assert loaded.trace.nll == model.trace.nll
        assert loaded.fit_config == model.fit_config

    def test_ktm_round_trip(self, small_dataset, tmp_path):
        model = fit(small_dataset, ModelKind.KTM1, FitConfig(max_iters=40))
        save_model(model, tmp_path / "model.json")
        loaded = load_model(tmp_path / "model.json")
        assert (loaded.params.to_vector() == model.params.to_vector()).all()

    def test_trace_csv(self, tmp_path):
        trace = TrainingTrace(nll=[1.5, 0.75, 0.5], iterations=3, converged=True)
        save_trace(trace, tmp_path / "trace.csv")
        lines = (tmp_path / "trace.csv").read_text().strip().splitlines()
        assert lines[0] == "iter,nll"
        assert lines[1] == "1,1.5"
        assert len(lines) == 4

    def test_missing_model_file(self, tmp_path):
        with pytest.raises(DataError, match="no model file"):
            load_model(tmp_path / "absent.json")

    def test_malformed_model_file(self, tmp_path):
        (tmp_path / "model.json").write_text('{"kind": "irt_zilm"}')
        with pytest.raises(DataError, match="malformed"):
            load_model(tmp_path / "model.json")
