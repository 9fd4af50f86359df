import numpy as np
import pytest
from hypothesis import given, strategies as st

from oransteer.traffic import QueueMatrix, buffer_ok, demand_matrix, generate_arrivals, update_queue


def test_poisson_moments():
    lam = generate_arrivals(20.0, 10_000, seed=4)
    assert 19.5 <= lam.mean() <= 20.5
    assert 19.0 <= lam.var() <= 21.0          # Poisson: variance equals the mean


def test_arrivals_reject_non_positive_mean():
    with pytest.raises(ValueError):
        generate_arrivals(0.0, 10, seed=0)


def test_arrivals_deterministic_and_capped():
    a = generate_arrivals(2.5, 500, seed=9)
    assert np.array_equal(a, generate_arrivals(2.5, 500, seed=9))
    assert generate_arrivals(50.0, 2000, seed=1, cap=52.0).max() <= 52.0


def test_demand_matrix_columns_differ():
    d = demand_matrix([20.0, 20.0, 0.0], 300, seed=2)
    assert d.shape == (300, 3)
    assert not np.array_equal(d[:, 0], d[:, 1])
    assert np.all(d[:, 2] == 0)


def test_queue_empty_system():
    assert update_queue(0.0, 0.0, 17.0, 1024, 0.0, 1e-4) == 0.0


def test_queue_floors_at_zero():
    # 1000 B queued, 500 B arriving, 1500 B of service: 1000*8 / 1e-3 bits/s over 1 ms... keep it simple
    q = update_queue(1000.0, 1.0, 500.0, 1.0, 1500.0 * 8 / 1.0, 1.0, arrival_time=1.0)
    assert q == 0.0


def test_queue_hand_example():
    q = update_queue(2000.0, 0.5, 2.5, 1024.0, 1e6, 0.125e-3)
    # 0.5 * 2.5 * 1024 * 1.25e-4 = 0.16 in, 1e6 * 1.25e-4 / 8 = 15.625 out
    assert q == pytest.approx(2000 + 0.16 - 15.625, abs=1e-9)


@given(st.floats(0, 1e5), st.floats(0, 1), st.floats(0, 200), st.floats(0, 1e9))
def test_queue_never_negative(q, phi, lam, r):
    assert update_queue(q, phi, lam, 1024.0, r, 0.25e-3) >= 0.0


def test_buffer_boundaries():
    qm = QueueMatrix(np.zeros((3, 2)), capacity=10240.0)
    assert buffer_ok(qm) == (True, [])
    qm.q[1] = [10000.0, 240.0]
    assert buffer_ok(qm) == (True, [])
    qm.q[2, 0] = 10241.0
    assert buffer_ok(qm) == (False, [2])
