import dataclasses

import numpy as np
import pytest

from chebmixer import autodiff as ad
from chebmixer.autodiff import GradTape, Tensor
from chebmixer.graph import build_csr
from chebmixer.model import (
    ModelConfig,
    init_params,
    model_forward,
    param_count,
    predict,
    prepare_operator,
    rng_stream,
)
from chebmixer.verify import random_graph

torch = pytest.importorskip("torch")

SMALL = ModelConfig(K=3, d=4, layers=1, d_s=4, d_c=4, n_classes=3)


def _perturbed(params, rng, scale=0.1):
    return params.map(lambda _, v: v + scale * rng.standard_normal(v.shape))


def _torch_model(L_hat, X, p, cfg):
    """Dense torch composition of the same model, used as an independent reference."""
    ln, gelu = torch.nn.functional.layer_norm, torch.nn.functional.gelu
    x = X @ p["w_in"].T + p["b_in"]
    hops = [x]
    if cfg.K >= 1:
        hops.append(L_hat @ x)
    for _ in range(2, cfg.K + 1):
        hops.append(2 * L_hat @ hops[-1] - hops[-2])
    t = torch.stack(hops, dim=1)
    d = t.shape[-1]
    for i in range(cfg.layers):
        q = {k.split(".")[-1]: v for k, v in p.items() if k.startswith(f"mixers.{i}.")}
        h = torch.einsum("sh,nhd->nsd", q["W1"], ln(t, (d,), q["ln1_gain"], q["ln1_bias"], 1e-5)) + q["b1"][:, None]
        t = t + torch.einsum("hs,nsd->nhd", q["W2"], gelu(h)) + q["b2"][:, None]
        h = gelu(ln(t, (d,), q["ln2_gain"], q["ln2_bias"], 1e-5) @ q["W3"].T + q["b3"]) @ q["W4"].T + q["b4"]
        t = t + h
    K = cfg.K
    j = torch.arange(K + 1, dtype=torch.float64)
    x_nodes = torch.cos((j + 0.5) * torch.pi / (K + 1))
    T = torch.cos(j[:, None] * torch.arccos(x_nodes)[None, :])
    W = (2.0 / (K + 1)) * T @ p["agg.gamma"]
    emb = (t * W[None]).sum(dim=1)
    return emb @ p["w_out"].T + p["b_out"]


def test_forward_and_gradients_match_torch(rng):
    for seed in range(3):
        g = random_graph(rng, 8, 0.4)
        cfg = dataclasses.replace(SMALL, layers=2)
        op = prepare_operator(g, cfg)
        X = rng.standard_normal((8, 5))
        y = rng.integers(0, 3, 8)
        params = _perturbed(init_params(cfg, 5, seed), rng)
        named = params.named()

        tracked = {k: Tensor(v, requires_grad=True) for k, v in named}
        with GradTape() as tape:
            logits = model_forward(op, X, params.with_values(tracked), cfg)
            loss = ad.cross_entropy(logits, y, np.arange(8))
        grads = dict(zip(tracked, tape.gradient(loss, list(tracked.values()))))

        tp = {k: torch.tensor(v, requires_grad=True) for k, v in named}
        tl = _torch_model(torch.tensor(op.to_dense()), torch.tensor(X), tp, cfg)
        torch.nn.functional.cross_entropy(tl, torch.tensor(y)).backward()

        assert np.abs(logits.data - tl.detach().numpy()).max() < 1e-12
        for k in tracked:
            assert np.abs(grads[k] - tp[k].grad.numpy()).max() < 1e-10, k


def test_full_model_gradient_check(rng):
    g = random_graph(rng, 6, 0.5)
    op = prepare_operator(g, SMALL)
    X, y = rng.standard_normal((6, 5)), rng.integers(0, 3, 6)
    params = _perturbed(init_params(SMALL, 5, 0), rng)
    names = [k for k, _ in params.named()]

    def f(*vals):
        return ad.cross_entropy(model_forward(op, X, params.with_values(dict(zip(names, vals))), SMALL), y, np.arange(6))

    rep = ad.grad_check(f, [v for _, v in params.named()])
    assert rep.passed, rep


def test_zero_head_gives_zero_logits(rng):
    g = random_graph(rng, 10, 0.3)
    params = init_params(SMALL, 5, 0)
    params = params.map(lambda k, v: np.zeros_like(v) if k in ("w_out", "b_out") else v)
    logits = model_forward(prepare_operator(g, SMALL), rng.standard_normal((10, 5)), params, SMALL)
    np.testing.assert_array_equal(logits.data, 0.0)
    np.testing.assert_array_equal(predict(logits), 0)


@pytest.mark.parametrize("n", [1, 2, 17])
def test_output_shape(rng, n):
    g = random_graph(rng, n, 0.3)
    logits = model_forward(prepare_operator(g, SMALL), rng.standard_normal((n, 5)), init_params(SMALL, 5, 0), SMALL)
    assert logits.shape == (n, 3)


def test_degenerate_composition_is_linear(rng):
    # no mixer layers and W = (1, 0, ..., 0): the model collapses to two affine maps
    cfg = dataclasses.replace(SMALL, layers=0)
    g = random_graph(rng, 9, 0.4)
    X = rng.standard_normal((9, 5))
    params = _perturbed(init_params(cfg, 5, 1), rng)
    params = params.map(lambda k, v: np.full_like(v, 0.5) if k == "agg.gamma" else v)
    logits = model_forward(prepare_operator(g, cfg), X, params, cfg).data
    want = (X @ params.w_in.T + params.b_in) @ params.w_out.T + params.b_out
    assert np.abs(logits - want).max() < 1e-10


def test_node_permutation_equivariance(rng):
    g = random_graph(rng, 50, 0.1)
    X = rng.standard_normal((50, 5))
    params = init_params(SMALL, 5, 0)
    perm = rng.permutation(50)
    Xp = np.empty_like(X)
    Xp[perm] = X
    a = model_forward(prepare_operator(g, SMALL), X, params, SMALL).data
    b = model_forward(prepare_operator(g.permute(perm), SMALL), Xp, params, SMALL).data
    assert np.abs(b[perm] - a).max() < 1e-10


def test_deterministic_logits(rng):
    g = random_graph(rng, 20, 0.2)
    X = rng.standard_normal((20, 5))
    a = model_forward(prepare_operator(g, SMALL), X, init_params(SMALL, 5, 7), SMALL).data
    b = model_forward(prepare_operator(g, SMALL), X, init_params(SMALL, 5, 7), SMALL).data
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("aggregator", ["chebinterp_shared", "sum", "mean", "max"])
def test_aggregator_variants_run(rng, aggregator):
    cfg = dataclasses.replace(SMALL, aggregator=aggregator)
    g = random_graph(rng, 6, 0.5)
    params = init_params(cfg, 5, 0)
    assert (params.agg is None) == (aggregator in ("sum", "mean", "max"))
    assert model_forward(prepare_operator(g, cfg), rng.standard_normal((6, 5)), params, cfg).shape == (6, 3)


def test_hop2token_variant(rng):
    cfg = dataclasses.replace(SMALL, extractor="hop2token")
    g = random_graph(rng, 6, 0.5)
    op = prepare_operator(g, cfg)
    assert op.kind == "normalized-adjacency"
    params = _perturbed(init_params(cfg, 5, 0), rng)
    names = [k for k, _ in params.named()]
    X, y = rng.standard_normal((6, 5)), rng.integers(0, 3, 6)

    def f(*vals):
        return ad.cross_entropy(model_forward(op, X, params.with_values(dict(zip(names, vals))), cfg), y, np.arange(6))

    assert ad.grad_check(f, [v for _, v in params.named()]).passed


def test_fixed_lambda_operator(p3):
    op = prepare_operator(p3, dataclasses.replace(SMALL, lambda_max="fixed"))
    assert op.lambda_max_used == 2.0


def test_shape_errors_name_the_stage(rng):
    g = random_graph(rng, 6, 0.5)
    with pytest.raises(ValueError, match="projection"):
        model_forward(prepare_operator(g, SMALL), rng.standard_normal((6, 4)), init_params(SMALL, 5, 0), SMALL)
    bad = dataclasses.replace(SMALL, K=2)
    with pytest.raises(ValueError, match="mixer 0"):
        model_forward(prepare_operator(g, bad), rng.standard_normal((6, 5)), init_params(SMALL, 5, 0), bad)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(K=-1)
    with pytest.raises(ValueError):
        ModelConfig(d=0)
    with pytest.raises(ValueError):
        ModelConfig(aggregator="attention")
    with pytest.raises(ValueError):
        ModelConfig(lambda_max="exact")


def test_predict_tie_breaks():
    np.testing.assert_array_equal(predict(np.array([[0.5, 0.5, 0.1], [-1, 2, 0], [0, 0, 0]])), [0, 1, 0])


def test_param_count():
    cfg0 = ModelConfig(K=3, d=4, layers=0, d_s=8, d_c=8, n_classes=3)
    assert param_count(init_params(cfg0, 5, 0)) == 20 + 4 + 16 + 12 + 3
    cfg1 = dataclasses.replace(cfg0, layers=1)
    mixer = 2 * (8 * 4 + 4 * 8 + 8 + 4) + 4 * 4
    assert param_count(init_params(cfg1, 5, 0)) == 55 + mixer
    assert param_count(init_params(cfg1, 5, 0)) == param_count(init_params(cfg1, 5, 9))


def test_named_order_and_round_trip():
    params = init_params(dataclasses.replace(SMALL, layers=2), 5, 0)
    names = [k for k, _ in params.named()]
    assert names[:2] == ["w_in", "b_in"] and names[-3:] == ["agg.gamma", "w_out", "b_out"]
    assert "mixers.1.W4" in names
    copy = params.copy()
    for (k, a), (_, b) in zip(params.named(), copy.named()):
        assert a is not b and np.array_equal(a, b)


def test_rng_streams_are_independent():
    a = rng_stream(0, 1).random(5)
    assert not np.array_equal(a, rng_stream(0, 2).random(5))
    assert not np.array_equal(a, rng_stream(1, 1).random(5))
    np.testing.assert_array_equal(a, rng_stream(0, 1).random(5))


def test_isolated_nodes(rng):
    g = build_csr(4, [(0, 1, 1.0)])
    logits = model_forward(prepare_operator(g, SMALL), rng.standard_normal((4, 5)), init_params(SMALL, 5, 0), SMALL)
    assert np.all(np.isfinite(logits.data))
