"""Seeded property suites run by ``chebmixer verify``."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import spectral
from .aggregator import cheb_interp_weights
from .graph import build_csr, estimate_lambda_max, scale_laplacian, sym_norm_laplacian
from .mixer import init_mixer, mixer_forward
from .model import ModelConfig, init_params, model_forward, prepare_operator

__all__ = ["SuiteResult", "SUITES", "random_graph", "run_suites"]


@dataclass
class SuiteResult:
    suite: str
    passed: bool
    worst_error: float
    tolerance: float
    cases: int
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "passed": self.passed,
            "worst_error": self.worst_error,
            "tolerance": self.tolerance,
            "cases": self.cases,
            "seconds": round(self.seconds, 6),
        }


def random_graph(rng: np.random.Generator, n: int, p: float = 0.3, weighted: bool = True):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    w = rng.uniform(0.5, 2.0, keep.sum()) if weighted else np.ones(keep.sum())
    return build_csr(n, list(zip(iu[keep].tolist(), ju[keep].tolist(), w.tolist())))


def spectral_suite(seed: int = 0, cases: int = 10) -> SuiteResult:
    """Recurrence filter versus eigendecomposition filter."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(2, 21))
        d = int(rng.integers(1, 5))
        K = int(rng.integers(0, 9))
        g = random_graph(rng, n, float(rng.uniform(0.1, 0.6)))
        L = sym_norm_laplacian(g)
        lam = estimate_lambda_max(L)
        X = rng.standard_normal((n, d))
        theta = rng.standard_normal(K + 1)
        hops = spectral.cheb_hop_extract(scale_laplacian(L, lam), X, K).data
        fast = np.einsum("k,nkd->nd", theta, hops)
        exact = spectral.exact_spectral_filter(L.to_dense(), X, theta, lam)
        worst = max(worst, float(np.abs(fast - exact).max()))
    return SuiteResult("spectral", worst < 1e-8, worst, 1e-8, cases)


def aggregator_suite(max_k: int = 8) -> SuiteResult:
    """Interpolating ``T_m`` at the Chebyshev nodes recovers a one-hot weight."""
    worst = 0.0
    cases = 0
    for K in range(1, max_k + 1):
        x = spectral.cheb_nodes(K)
        T = spectral.cheb_polynomial_matrix(K, x)
        for m in range(K + 1):
            W = cheb_interp_weights(T[m][:, None]).data[:, 0]
            want = np.zeros(K + 1)
            want[m] = 2.0 if m == 0 else 1.0
            worst = max(worst, float(np.abs(W - want).max()))
            cases += 1
    return SuiteResult("aggregator", worst < 1e-10, worst, 1e-10, cases)


def laplacian_suite(seed: int = 0, cases: int = 20) -> SuiteResult:
    """Scaled spectra stay inside [-1, 1] up to 1e-6."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(1, 21))
        g = random_graph(rng, n, float(rng.uniform(0.0, 0.7)))
        L = sym_norm_laplacian(g)
        ev = np.linalg.eigvalsh(scale_laplacian(L, estimate_lambda_max(L)).to_dense())
        worst = max(worst, float(max(ev.max() - 1.0, -1.0 - ev.min(), 0.0)))
    return SuiteResult("laplacian", worst <= 1e-6, worst, 1e-6, cases)


def gradient_suite(seed: int = 0, cases: int = 3) -> SuiteResult:
    """Reverse-mode gradients of the mixer and the full model against central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for c in range(cases):
        layer = init_mixer(2, 4, 8, 8, int(rng.integers(2**31)))
        layer = layer.map(lambda _, v: v + 0.1 * rng.standard_normal(v.shape))
        names = [k for k, _ in layer.named()]
        xg = rng.standard_normal((3, 3, 4))

        def mixer_loss(x, *vals):
            return ad.sum_all(mixer_forward(x, layer.map(lambda k, _: vals[names.index(k)])))

        rep = ad.grad_check(mixer_loss, [xg] + [v for _, v in layer.named()])
        worst = max(worst, rep.max_rel_error)

        cfg = ModelConfig(K=3, d=4, layers=1, d_s=4, d_c=4, n_classes=3)
        g = random_graph(rng, 6, 0.5)
        op = prepare_operator(g, cfg)
        X = rng.standard_normal((6, 5))
        y = rng.integers(0, 3, 6)
        params = init_params(cfg, 5, seed * 100 + c)
        params = params.map(lambda _, v: v + 0.1 * rng.standard_normal(v.shape))
        pnames = [k for k, _ in params.named()]

        def model_loss(*vals):
            p = params.map(lambda k, _: vals[pnames.index(k)])
            return ad.cross_entropy(model_forward(op, X, p, cfg), y, np.ones(6, dtype=bool))

        rep = ad.grad_check(model_loss, [v for _, v in params.named()])
        worst = max(worst, rep.max_rel_error)
    return SuiteResult("gradients", worst < 1e-4, worst, 1e-4, 2 * cases)


SUITES = {
    "spectral": spectral_suite,
    "aggregator": aggregator_suite,
    "laplacian": laplacian_suite,
    "gradients": gradient_suite,
}


def run_suites(names=None) -> list[SuiteResult]:
    out = []
    for name in names or list(SUITES):
        if name not in SUITES:
            raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
        t0 = time.perf_counter()
        res = SUITES[name]()
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out
