"""
Gradient and property verification suites behind ``verify``.

Every suite draws from fixed seeds, so two runs print identical reports.
Closed-form gradients are looked up on ``gradient_oracles`` at call time.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

import numpy as np
from scipy.special import softmax

from app.core.tensor import CompGraph, RealArray
from app.models.batch import EmbeddingBatch, SimilarityBundle, build_similarity_bundle, similarity_bundle_from_arrays
from app.models.run_config import D2DCEParams
from app.services import gradient_oracles
from app.services.conditioning_losses import (
    acgan_ce,
    d2dce,
    d2dce_lower_bound,
    false_negative_mask,
    two_c_loss,
)
from app.services.gradient_check import numerical_gradient, relative_error

logger = logging.getLogger(__name__)

AUTODIFF_TOL = 1e-8
FD_TOL = 1e-5
FD_FLOOR = 1e-3
GRADIENT_INSTANCES = 100
PROPERTY_BUNDLES = 1000


class Suite(str, Enum):
    GRADIENTS = "gradients"
    PROPERTIES = "properties"
    ALL = "all"


@dataclass
class CheckResult:
    name: str
    passed: bool
    count: int
    max_error: float = 0.0
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name} n={self.count} max_err={self.max_error:.3e}"
        return f"{text} {self.detail}" if self.detail else text


@dataclass
class VerificationReport:
    suite: Suite
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def comparisons(self) -> int:
        return sum(check.count for check in self.checks)

    @property
    def failed(self) -> list[CheckResult]:
        return [check for check in self.checks if not check.passed]

    def lines(self) -> list[str]:
        out = [check.line() for check in self.checks]
        out.append(
            f"{len(self.checks) - len(self.failed)}/{len(self.checks)} checks passed, "
            f"{self.comparisons} comparisons"
        )
        return out


# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------

def _unit_rows(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    x = rng.standard_normal((rows, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_batch(rng: np.random.Generator, n: int = 6, c: int = 3, dim: int = 3) -> EmbeddingBatch:
    return EmbeddingBatch(_unit_rows(rng, n, dim), rng.integers(0, c, size=n), _unit_rows(rng, c, dim))


def random_params(rng: np.random.Generator) -> D2DCEParams:
    m_p = float(rng.uniform(0.3, 1.0))
    return D2DCEParams(tau=float(rng.uniform(0.1, 1.0)), m_p=m_p, m_n=float(rng.uniform(0.0, 0.9 * m_p)))


def _max_and_pass(errors: Iterable[float], tol: float) -> tuple[float, bool]:
    errors = list(errors)
    worst = max(errors) if errors else 0.0
    return worst, worst <= tol


# ---------------------------------------------------------------------------
# Gradient suite
# ---------------------------------------------------------------------------

def _autodiff_similarity_grads(bundle: SimilarityBundle, params: D2DCEParams) -> tuple[np.ndarray, np.ndarray]:
    s_pos = RealArray(bundle.s_pos.data, requires_grad=True)
    s_neg = RealArray(bundle.s_neg.data, requires_grad=True)
    graph = CompGraph()
    with graph.record():
        loss = d2dce(SimilarityBundle(s_pos, s_neg, bundle.neg_mask, bundle.labels), params)
    graph.backward(loss)
    return graph.grad(s_pos), graph.grad(s_neg)


def _autodiff_embedding_grads(batch: EmbeddingBatch, mask: np.ndarray,
                              loss_fn: Callable[[SimilarityBundle], RealArray]) -> tuple[np.ndarray, np.ndarray]:
    f = RealArray(batch.f.data, requires_grad=True)
    v = RealArray(batch.v.data, requires_grad=True)
    graph = CompGraph()
    with graph.record():
        loss = loss_fn(build_similarity_bundle(EmbeddingBatch(f, batch.y, v), mask))
    graph.backward(loss)
    return graph.grad(f), graph.grad(v)


def _fd_embedding_grad(batch: EmbeddingBatch, mask: np.ndarray,
                       loss_fn: Callable[[SimilarityBundle], RealArray]) -> np.ndarray:
    v = batch.v.data

    def value(f: np.ndarray) -> float:
        return loss_fn(similarity_bundle_from_arrays(f, batch.y, v, mask, validate=False)).item()

    return numerical_gradient(value, batch.f.data)


def check_acgan_weight_gradient(rng: np.random.Generator) -> list[CheckResult]:
    auto_err, fd_err = [], []
    for _ in range(GRADIENT_INSTANCES):
        n, d, c = 5, 4, 3
        features = rng.standard_normal((n, d)) * rng.uniform(0.5, 3.0)
        weights = rng.standard_normal((d, c))
        y = rng.integers(0, c, size=n)
        oracle = gradient_oracles.acgan_ce_grad_w(features, y, weights)

        w_leaf = RealArray(weights, requires_grad=True)
        graph = CompGraph()
        with graph.record():
            loss, _ = acgan_ce(RealArray(features) @ w_leaf, y)
        graph.backward(loss)
        auto_err.append(relative_error(oracle, graph.grad(w_leaf)))
        numeric = numerical_gradient(lambda w: acgan_ce(features @ w, y)[0].item(), weights)
        fd_err.append(relative_error(oracle, numeric, floor=FD_FLOOR))
    auto_max, auto_ok = _max_and_pass(auto_err, AUTODIFF_TOL)
    fd_max, fd_ok = _max_and_pass(fd_err, FD_TOL)
    return [
        CheckResult("gradients.acgan_weight.autodiff", auto_ok, len(auto_err), auto_max),
        CheckResult("gradients.acgan_weight.finite_diff", fd_ok, len(fd_err), fd_max),
    ]


def _fd_similarity_grads(bundle: SimilarityBundle, params: D2DCEParams) -> tuple[np.ndarray, np.ndarray]:
    """Central differences over every s_i and every s_ij taken independently."""
    s_pos, s_neg = bundle.s_pos.data, bundle.s_neg.data

    def with_pos(values: np.ndarray) -> float:
        return d2dce(SimilarityBundle(values, s_neg, bundle.neg_mask, bundle.labels, validate=False),
                     params).item()

    def with_neg(values: np.ndarray) -> float:
        return d2dce(SimilarityBundle(s_pos, values, bundle.neg_mask, bundle.labels, validate=False),
                     params).item()

    return numerical_gradient(with_pos, s_pos), numerical_gradient(with_neg, s_neg)


def check_d2dce_similarity_gradients(rng: np.random.Generator) -> list[CheckResult]:
    errors = {key: [] for key in ("pos_auto", "neg_auto", "pos_fd", "neg_fd")}
    for _ in range(GRADIENT_INSTANCES):
        batch = random_batch(rng)
        params = random_params(rng)
        bundle = build_similarity_bundle(batch, false_negative_mask(batch.y))
        grads = gradient_oracles.d2dce_analytic_grads(bundle, params)
        auto_pos, auto_neg = _autodiff_similarity_grads(bundle, params)
        fd_pos, fd_neg = _fd_similarity_grads(bundle, params)
        errors["pos_auto"].append(relative_error(grads.d_pos, auto_pos))
        errors["neg_auto"].append(relative_error(grads.d_neg, auto_neg))
        errors["pos_fd"].append(relative_error(grads.d_pos, fd_pos, floor=FD_FLOOR))
        errors["neg_fd"].append(relative_error(grads.d_neg, fd_neg, floor=FD_FLOOR))
    results = []
    for key, name, tol in (
        ("pos_auto", "positive_similarity.autodiff", AUTODIFF_TOL),
        ("neg_auto", "negative_similarity.autodiff", AUTODIFF_TOL),
        ("pos_fd", "positive_similarity.finite_diff", FD_TOL),
        ("neg_fd", "negative_similarity.finite_diff", FD_TOL),
    ):
        worst, ok = _max_and_pass(errors[key], tol)
        results.append(CheckResult(f"gradients.d2dce_{name}", ok, len(errors[key]), worst))
    return results


def check_embedding_gradients(rng: np.random.Generator) -> list[CheckResult]:
    results = []
    families = {
        "d2dce": (
            lambda b, params: d2dce(b, params),
            lambda bundle, params, batch: gradient_oracles.d2dce_analytic_grads(bundle, params, batch),
        ),
        "two_c": (
            lambda b, params: two_c_loss(b, params.tau),
            lambda bundle, params, batch: gradient_oracles.two_c_grad_embedding(bundle, params.tau, batch),
        ),
    }
    for name, (loss_of, oracle_of) in families.items():
        auto_err, fd_err, proxy_err = [], [], []
        for _ in range(GRADIENT_INSTANCES):
            batch = random_batch(rng)
            params = random_params(rng)
            mask = false_negative_mask(batch.y)
            grads = oracle_of(build_similarity_bundle(batch, mask), params, batch)
            loss_fn = lambda bundle, params=params: loss_of(bundle, params)  # noqa: E731
            auto_f, auto_v = _autodiff_embedding_grads(batch, mask, loss_fn)
            auto_err.append(relative_error(grads.d_f, auto_f))
            proxy_err.append(relative_error(grads.d_v, auto_v))
            fd_err.append(relative_error(grads.d_f, _fd_embedding_grad(batch, mask, loss_fn), floor=FD_FLOOR))
        for label, errors, tol in (
            ("embedding.autodiff", auto_err, AUTODIFF_TOL),
            ("proxy.autodiff", proxy_err, AUTODIFF_TOL),
            ("embedding.finite_diff", fd_err, FD_TOL),
        ):
            worst, ok = _max_and_pass(errors, tol)
            results.append(CheckResult(f"gradients.{name}_{label}", ok, len(errors), worst))
    return results


def gradient_suite() -> list[CheckResult]:
    rng = np.random.default_rng(20240601)
    return (
        check_acgan_weight_gradient(rng)
        + check_d2dce_similarity_gradients(rng)
        + check_embedding_gradients(rng)
    )


# ---------------------------------------------------------------------------
# Property suite
# ---------------------------------------------------------------------------

def _property_instances(seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(PROPERTY_BUNDLES):
        batch = random_batch(rng, n=int(rng.integers(2, 9)), c=int(rng.integers(2, 5)))
        params = random_params(rng)
        yield batch, params, build_similarity_bundle(batch, false_negative_mask(batch.y))


def check_hard_negative_monotonicity() -> CheckResult:
    violations, count = 0, 0
    for _, params, bundle in _property_instances(1):
        grads = gradient_oracles.d2dce_analytic_grads(bundle, params)
        s = bundle.s_neg.data
        for q in range(bundle.num_samples):
            negatives = np.flatnonzero(bundle.neg_mask[q])
            order = negatives[np.argsort(s[q, negatives], kind="stable")]
            g = grads.d_neg[q, order]
            count += 1
            strictly = np.diff(s[q, order]) > 0
            if np.any(g < 0) or np.any(np.diff(g)[strictly] < 0):
                violations += 1
    return CheckResult("properties.hard_negative_mining", violations == 0, count,
                       detail=f"violations={violations}")


def check_clamp_zeros() -> list[CheckResult]:
    pos_bad = neg_bad = pos_seen = neg_seen = 0
    for _, params, bundle in _property_instances(2):
        grads = gradient_oracles.d2dce_analytic_grads(bundle, params)
        easy_pos = bundle.s_pos.data >= params.m_p
        easy_neg = bundle.s_neg.data <= params.m_n
        pos_seen += int(easy_pos.sum())
        neg_seen += int(easy_neg.sum())
        pos_bad += int(np.count_nonzero(grads.d_pos[easy_pos]))
        neg_bad += int(np.count_nonzero(grads.d_neg[easy_neg]))
    return [
        CheckResult("properties.easy_positive_suppression", pos_bad == 0 and pos_seen > 0, pos_seen,
                    detail=f"nonzero={pos_bad}"),
        CheckResult("properties.easy_negative_suppression", neg_bad == 0 and neg_seen > 0, neg_seen,
                    detail=f"nonzero={neg_bad}"),
    ]


def clamp_active_bundle(rng: np.random.Generator, params: D2DCEParams, n: int, c: int) -> SimilarityBundle:
    """Similarities with every positive above m_p and every pair below m_n."""
    y = rng.integers(0, c, size=n)
    s_pos = rng.uniform(params.m_p, 1.0, size=n)
    upper = rng.uniform(-1.0, params.m_n, size=(n, n))
    s_neg = np.triu(upper, 1) + np.triu(upper, 1).T + np.eye(n)
    return SimilarityBundle(s_pos, s_neg, false_negative_mask(y), y)


def check_global_minimum() -> list[CheckResult]:
    below, gap_at_min = 0, 0.0
    rng = np.random.default_rng(3)
    count = 0
    for _, params, bundle in _property_instances(3):
        count += 1
        if d2dce(bundle, params).item() < d2dce_lower_bound(bundle) - 1e-12:
            below += 1
        active = clamp_active_bundle(rng, params, bundle.num_samples, int(bundle.labels.max()) + 1)
        gap_at_min = max(gap_at_min, abs(d2dce(active, params).item() - d2dce_lower_bound(active)))
    return [
        CheckResult("properties.global_minimum_lower_bound", below == 0, count, detail=f"violations={below}"),
        CheckResult("properties.global_minimum_attained", gap_at_min <= 1e-12, count, gap_at_min),
    ]


def check_normalized_gradient_bound() -> CheckResult:
    worst, count = 0.0, 0
    for batch, params, bundle in _property_instances(4):
        grads = gradient_oracles.d2dce_analytic_grads(bundle, params, batch)
        n = bundle.num_samples
        ratio = max(
            np.linalg.norm(grads.d_f, axis=1).max(),
            n * np.linalg.norm(grads.anchor, axis=1).max(),
        ) * params.tau / 3.0
        worst = max(worst, float(ratio))
        count += n
    return CheckResult("properties.normalized_gradient_bound", worst <= 1.0, count, worst,
                       detail="max |grad| * tau / 3")


def check_weight_gradient_linearity() -> CheckResult:
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(GRADIENT_INSTANCES):
        features = rng.standard_normal((6, 4))
        y = rng.integers(0, 3, size=6)
        probs = softmax(rng.standard_normal((6, 3)), axis=1)
        single = np.linalg.norm(gradient_oracles.acgan_ce_grad_w(features, y, probabilities=probs), axis=0)
        double = np.linalg.norm(gradient_oracles.acgan_ce_grad_w(2.0 * features, y, probabilities=probs), axis=0)
        worst = max(worst, relative_error(double, 2.0 * single))
    return CheckResult("properties.unnormalized_weight_gradient_linearity", worst <= 1e-12,
                       GRADIENT_INSTANCES, worst)


def easy_positive_geometry(similarity: float = 0.999) -> tuple[EmbeddingBatch, int, int]:
    """Anchor 0 and same-class sample 1 at cosine ``similarity``, anchor on its proxy."""
    angle = np.arccos(similarity)
    f = np.array([
        [1.0, 0.0, 0.0],
        [np.cos(angle), np.sin(angle), 0.0],
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
    ])
    v = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    return EmbeddingBatch(f, np.array([0, 0, 1, 1]), v), 0, 1


def check_two_c_contrast() -> list[CheckResult]:
    batch, anchor, easy = easy_positive_geometry()
    params = D2DCEParams(tau=0.5, m_p=0.98)
    bundle = build_similarity_bundle(batch, false_negative_mask(batch.y))
    two_c = gradient_oracles.two_c_grad_embedding(bundle, params.tau, batch)
    d2 = gradient_oracles.d2dce_analytic_grads(bundle, params, batch)
    pull = float(two_c.positive_samples[anchor] @ batch.f.data[easy])
    clamped = float(d2.d_pos[anchor])

    with_fn = two_c_loss(bundle, params.tau).item()
    without_fn = two_c_loss(bundle, params.tau, include_false_negatives=False).item()
    return [
        CheckResult("properties.two_c_easy_positive_mining", pull != 0.0 and clamped == 0.0, 1, abs(pull),
                    detail=f"d2dce_clamped_grad={clamped:.3e}"),
        CheckResult("properties.two_c_false_negatives_in_denominator", with_fn != without_fn, 1,
                    abs(with_fn - without_fn)),
    ]


def property_suite() -> list[CheckResult]:
    return (
        [check_hard_negative_monotonicity()]
        + check_clamp_zeros()
        + check_global_minimum()
        + [check_normalized_gradient_bound(), check_weight_gradient_linearity()]
        + check_two_c_contrast()
    )


def run_verification(suite: Suite) -> VerificationReport:
    suite = Suite(suite)
    report = VerificationReport(suite)
    if suite in (Suite.GRADIENTS, Suite.ALL):
        report.checks.extend(gradient_suite())
    if suite in (Suite.PROPERTIES, Suite.ALL):
        report.checks.extend(property_suite())
    for check in report.failed:
        logger.error(f"Verification check failed: {check.name}")
    logger.info(f"Verification '{suite.value}': {len(report.checks) - len(report.failed)}"
                f"/{len(report.checks)} checks passed")
    return report
