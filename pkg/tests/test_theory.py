import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from divshare.core import DomainError, NumericalError, validate_config
from divshare.netsim import build_straggler_network
from divshare.theory import (
    DelayMatrix, alpha_coeffs, assumption4_check, assumption4_lhs, contraction_check, delays_from_network,
    disagreement_projector, expected_W, k_rho, lambda2, random_delays, rate_constant, sample_W, t_hat,
    theory_report,
)


def test_alpha_full_communication():
    for n in (2, 3, 10, 60):
        a1, a = alpha_coeffs(n, n - 1)
        assert a1 == pytest.approx(1 / n, abs=1e-15) and a == pytest.approx(1 / n, abs=1e-15)
    assert alpha_coeffs(2, 1) == (0.5, 0.5)


def test_alpha_sixty_six():
    a1, a = alpha_coeffs(60, 6)
    assert round(a1, 4) == 0.1636 and round(a, 5) == 0.01418


def test_alpha_monte_carlo(rng):
    draws = rng.binomial(59, 6 / 59, size=10**6)
    vals = 1 / (1 + draws)
    a1, _ = alpha_coeffs(60, 6)
    assert abs(vals.mean() - a1) < 3 * vals.std() / 1e3


@given(st.integers(2, 500), st.data())
@settings(max_examples=200)
def test_alpha_identity(n, data):
    J = data.draw(st.integers(1, n - 1))
    a1, a = alpha_coeffs(n, J)
    assert abs(a * (n - 1) + a1 - 1) <= 1e-15
    assert 0 < a <= a1 + 1e-15 and a1 <= 1


def test_alpha_domain():
    with pytest.raises(ValueError):
        alpha_coeffs(1, 1)
    with pytest.raises(ValueError):
        alpha_coeffs(5, 5)


def test_delay_matrix_structure():
    k = np.array([[1, 2, 3], [1, 1, 1], [2, 1, 1]])
    d = DelayMatrix(k)
    assert d.K_j.tolist() == [3, 1, 2] and d.K == 3 and d.T == 6
    assert d.window_labels() == [(0, 1), (0, 2), (0, 3), (1, 1), (2, 1), (2, 2)]
    assert [d.slot(i, kk) for i, kk in d.window_labels()] == list(range(6))
    with pytest.raises(IndexError):
        d.slot(1, 2)


@pytest.mark.parametrize("k", [[[1, 0], [1, 1]], [[2, 1], [1, 1]], [[1, 1.5], [1, 1]], [[1, np.inf], [1, 1]]])
def test_delay_matrix_invalid(k):
    with pytest.raises(ValueError):
        DelayMatrix(np.array(k))


def test_balance_hand_values():
    assert assumption4_check(4, 3, DelayMatrix.synchronous(4)) == (0.0, True)
    lhs, ok = assumption4_check(4, 3, 11)
    assert lhs == pytest.approx(7 * (1 / 11 + 1 / 16), abs=1e-12) and round(lhs, 5) == 1.07386 and not ok
    lhs, ok = assumption4_check(4, 3, 10)
    assert lhs == pytest.approx(0.975, abs=1e-12) and ok


def test_t_hat_closed_form():
    for n in (4, 8, 16):
        assert t_hat(n, n - 1) - n == pytest.approx(n**1.5 * math.sqrt(1 + 1 / (4 * n)) - n / 2, abs=1e-9)
    assert round(t_hat(4, 3), 5) == 10.24621


@given(st.integers(2, 300), st.data())
@settings(max_examples=200)
def test_t_hat_root_and_flip(n, data):
    J = data.draw(st.integers(1, n - 1))
    th = t_hat(n, J)
    assert assumption4_lhs(n, J, th) == pytest.approx(1.0, abs=1e-9)
    # an integer root (n=2: T_hat = 4) sits exactly on the boundary, where the strict bound fails
    assert assumption4_check(n, J, math.ceil(th) - 1)[1]
    if th != math.floor(th):
        assert assumption4_check(n, J, math.floor(th))[1]
    assert not assumption4_check(n, J, math.ceil(th) + 1)[1]


def test_t_hat_log_squared_growth():
    ratios = []
    for n in (16, 64, 256, 1024, 4096):
        J = math.ceil(math.log2(n))
        ratios.append((t_hat(n, J) - n) / math.log(n) ** 2)
    assert max(ratios) / min(ratios) < 2.0


def _delayed_instance():
    k = np.ones((5, 5), dtype=int)
    k[[1, 3], :] = 2
    np.fill_diagonal(k, 1)
    return DelayMatrix(k)


def test_sample_w_rows_stochastic(rng):
    d = _delayed_instance()
    W = sample_W(5, 3, d, rng, size=500)
    assert W.shape == (500, d.T, d.T)
    assert np.all(W >= 0)
    assert np.array_equal(W.sum(axis=2), np.ones((500, d.T)))
    assert np.allclose(W @ np.ones(d.T), 1.0)


class _NoShare:
    def random(self, shape):
        return np.ones(shape)


def test_sample_w_without_events_is_identity():
    assert np.array_equal(sample_W(2, 1, DelayMatrix.synchronous(2), _NoShare()), np.eye(2))


def test_sample_w_shift_rows(rng):
    d = DelayMatrix(np.array([[1, 3], [1, 1]]))
    W = sample_W(2, 1, d, rng)
    # window: (0,1) (0,2) (0,3) (1,1); node 1 reads node 0's value from 3 rounds back
    assert W[1].tolist() == [1, 0, 0, 0] and W[2].tolist() == [0, 1, 0, 0]
    assert W[3].tolist() == [0, 0, 0.5, 0.5]


def test_expected_w_synchronous_pair():
    assert np.array_equal(expected_W(2, 1, DelayMatrix.synchronous(2)), np.full((2, 2), 0.5))


def test_expected_w_matches_monte_carlo(rng):
    d = _delayed_instance()
    trials = 20_000
    W = sample_W(5, 3, d, rng, size=trials)
    mean, se = W.mean(axis=0), W.std(axis=0, ddof=1) / math.sqrt(trials)
    E = expected_W(5, 3, d)
    assert np.allclose(E.sum(axis=1), 1.0)
    const = se == 0
    assert np.array_equal(mean[const], E[const])
    assert np.all(np.abs(mean - E)[~const] <= 4 * se[~const])


def test_alpha_shift_frobenius_bound(rng):
    checked = 0
    for _ in range(200):
        n = int(rng.integers(2, 9))
        J = int(rng.integers(1, n))
        d = random_delays(n, 3, rng)
        lhs, ok = assumption4_check(n, J, d)
        if not ok:
            continue
        M = expected_W(n, J, d, convention="alpha_shift") @ disagreement_projector(d.T)
        assert np.linalg.norm(M, "fro") ** 2 <= lhs + 1e-9
        checked += 1
    assert checked > 20


def test_exact_mean_exceeds_bound_when_delayed():
    d = _delayed_instance()
    lhs, ok = assumption4_check(5, 3, d)
    assert ok and lambda2(expected_W(5, 3, d)) ** 2 > lhs


def test_unknown_convention():
    with pytest.raises(ValueError):
        expected_W(2, 1, DelayMatrix.synchronous(2), convention="other")


def test_lambda2_synchronous_pair():
    assert lambda2(expected_W(2, 1, DelayMatrix.synchronous(2))) == pytest.approx(0.0, abs=1e-12)


def test_lambda2_matches_svd(rng):
    for _ in range(20):
        M = rng.standard_normal((20, 20))
        expect = np.linalg.norm(M @ disagreement_projector(20), 2)
        assert lambda2(M) == pytest.approx(expect, abs=1e-8)


def test_lambda2_non_convergence(rng):
    M = rng.standard_normal((20, 20))
    with pytest.raises(NumericalError) as err:
        lambda2(M, max_iter=1, tol=1e-300)
    assert err.value.last_iterate is not None


def test_k_rho_special_cases():
    with pytest.raises(DomainError):
        k_rho(0.5, 10, 0.1, 1.0)
    assert k_rho(0.5, 10, 0.1, 0.0) == 0.0
    with pytest.raises(ValueError):
        k_rho(1.0, 10, 0.1, 0.5)
    lam = 0.3
    assert k_rho(0.4, 5, 1.0, lam) == pytest.approx(2 * math.log(1 - 0.4) / math.log(lam), rel=1e-12)


def test_k_rho_monotone():
    rhos = np.linspace(0.01, 0.99, 50)
    ks = [k_rho(r, 20, 0.1, 0.5) for r in rhos]
    assert np.all(np.diff(ks) > 0)
    lams = np.linspace(0.05, 0.95, 50)
    ks = [k_rho(0.5, 20, 0.1, lam) for lam in lams]
    assert np.all(np.diff(ks) > 0)
    small = k_rho(1e-9, 20, 0.1, 0.5)
    assert small == pytest.approx(2 * math.log(20) * 0.9 / 0.1 / math.log(0.5) ** 2, rel=1e-6)


def test_rate_constant():
    lam, a, T = 0.5, 0.2, 10
    expect = (a * abs(math.log(lam)) + (1 - a) * math.log(T)) / (a * math.log(lam) ** 2)
    assert rate_constant(T, a, lam) == pytest.approx(expect)
    with pytest.raises(DomainError):
        rate_constant(T, a, 1.0)


def test_contraction_synchronous(rng):
    res = contraction_check(3, 2, DelayMatrix.synchronous(3), 0.5, 2000, rng)
    assert res.ratio < 0.1 and res.k_tilde == 1


def test_contraction_partial_fanout(rng):
    res = contraction_check(6, 2, DelayMatrix.synchronous(6), 0.5, 4000, rng)
    assert res.ratio <= 1 + 3 * res.stderr


def test_contraction_propagates_domain_error(rng):
    with pytest.raises(DomainError):
        contraction_check(5, 3, _delayed_instance(), 0.5, 10, rng)


def test_delays_from_network():
    cfg = validate_config({"n": 4, "j_fanout": 2, "straggler_count": 1, "straggling_factor": 4.0,
                           "fast_bandwidth": 1000.0, "straggler_bw_std": 1e-9, "fast_latency": 0.0})
    net = build_straggler_network(cfg, np.random.default_rng(0))
    d = delays_from_network(net, 1400, 1.0)
    s = net.stragglers[0]
    for j in range(4):
        for i in range(4):
            expect = 1 if i == j else (6 if j == s else 2)
            assert d.k[j, i] == expect


def test_theory_report(rng):
    rep = theory_report(8, 3, DelayMatrix.synchronous(8), rng=rng, contraction_trials=500)
    data = json.loads(json.dumps(rep.to_dict()))
    assert data["assumption4_holds"] is True and data["T"] == 8
    assert 0 < data["alpha"] <= data["alpha1"] <= 1
    assert data["assumption4_holds"] == (data["assumption4_lhs"] < 1)
    assert data["contraction_empirical"] is not None
    assert "lambda2" in rep.table()


def test_theory_report_without_mixing():
    rep = theory_report(5, 3, _delayed_instance())
    assert rep.lambda2 >= 1 and all(v is None for v in rep.k_rho.values()) and rep.notes


def test_contraction_round_cap(rng):
    k = np.ones((6, 6), dtype=int)
    k[2, :] = 2
    np.fill_diagonal(k, 1)
    d = DelayMatrix(k)
    with pytest.raises(DomainError):
        contraction_check(6, 3, d, 0.5, 10, rng, max_rounds=1000)
    rep = theory_report(6, 3, d, rng=rng, contraction_trials=10)
    assert rep.contraction_empirical is None and any("skipped" in note for note in rep.notes)
