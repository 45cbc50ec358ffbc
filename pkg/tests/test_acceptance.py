"""Acceptance criteria, each checked at its full tolerance.

Run with ``pytest -s tests/test_acceptance.py`` to see one PASS/FAIL line per
criterion, or ``python3 tests/test_acceptance.py`` for the same lines without
pytest.  Criteria 1, 2 and 7 take minutes (about 2, 5 and 1 on one core).
"""

import time

import numpy as np
import pytest

from qaan import oracles
from qaan.experiments import SyntheticConfig, metric_series, run_synthetic, run_toy, toy_config
from qaan.metrics import inception_from_probs

SEEDS = (0, 1, 2, 3, 4)


def report(number: int, passed: bool, detail: str) -> None:
    print(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}", flush=True)


def criterion_1():
    start = time.perf_counter()
    finals = {"rbm": [], "qbm": []}
    for seed in SEEDS:
        run = run_synthetic(SyntheticConfig(), seed)
        for model in finals:
            finals[model].append(metric_series(run.log, model, "kl")[-1])
    rbm, qbm = float(np.median(finals["rbm"])), float(np.median(finals["qbm"]))
    passed = qbm < rbm and 0.85 <= rbm <= 1.6 and 0.5 <= qbm <= 1.1
    minutes = (time.perf_counter() - start) / 60
    passed = passed and minutes <= 30
    return passed, (f"median KL rbm {rbm:.3f} in [0.85, 1.6], qbm {qbm:.3f} in [0.5, 1.1], qbm < rbm "
                    f"({minutes:.1f} min)")


def criterion_2():
    start = time.perf_counter()
    result, _ = oracles.pimc_fidelity_check(0)
    minutes = (time.perf_counter() - start) / 60
    return result.passed and minutes <= 10, f"{result.line()} ({minutes:.1f} min)"


def criterion_3():
    results = [oracles.rbm_gradient_check(0), oracles.qbm_gradient_check(0), oracles.dense_gradient_check(0)]
    return all(r.passed for r in results), "; ".join(r.line() for r in results)


def criterion_4():
    r = oracles.bound_validity_check(0)
    return r.passed, r.line()


def criterion_5():
    r = oracles.clamped_phase_check(0)
    return r.passed, r.line()


def criterion_6():
    r = oracles.metric_identity_check(0)
    rng = np.random.default_rng(0)
    in_range = True
    for _ in range(200):
        C = int(rng.integers(2, 11))
        score = inception_from_probs(rng.dirichlet(np.full(C, 0.5), size=int(rng.integers(1, 100))))
        in_range &= 1.0 - 1e-12 <= score <= C + 1e-12
    return r.passed and in_range, f"{r.line()}; IS within [1, C] on 200 random classifiers: {in_range}"


def criterion_7():
    logs = [run_toy(toy_config("qaan"), 0).log for _ in range(2)]
    deterministic = logs[0] == logs[1]
    kl = metric_series(logs[0], "qaan", "bm_feature_kl")
    d = metric_series(logs[0], "qaan", "d_real_heldout")
    kl_down = kl[-1] < kl[0]
    toward_half = abs(d[-1] - 0.5) < abs(d[0] - 0.5)
    passed = deterministic and len(kl) == 5 and kl_down and toward_half
    return passed, (f"deterministic {deterministic}; feature KL {kl[0]:.4f} -> {kl[-1]:.4f}; "
                    f"held-out D {d[0]:.4f} -> {d[-1]:.4f}")


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
            7: criterion_7}
SLOW = {1, 2, 7}


def check(number: int) -> None:
    passed, detail = CRITERIA[number]()
    report(number, passed, detail)
    assert passed, detail


@pytest.mark.parametrize("number", [pytest.param(n, marks=pytest.mark.slow) if n in SLOW else n for n in CRITERIA])
def test_criterion(number):
    check(number)


def test_criterion_8_documented_only():
    print("SKIP criterion 8: full-scale MNIST and CIFAR-10 scores are out of reach at desk scale", flush=True)


if __name__ == "__main__":
    for n in CRITERIA:
        try:
            check(n)
        except AssertionError:
            pass
