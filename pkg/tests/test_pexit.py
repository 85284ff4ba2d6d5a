import math
import warnings

import mpmath as mp
import numpy as np
import pytest
from scipy.optimize import brentq

from anytime_ldpc import pexit
from anytime_ldpc.plant import PAPER_A
from anytime_ldpc.protograph import ProtographSpec, TimeExpandedProtograph, expand


def j_oracle(rho):
    """Mutual information by adaptive quadrature at 30 digits."""
    mp.mp.dps = 30
    rho = mp.mpf(rho)
    s = mp.sqrt(8 * rho)

    def f(y):
        return mp.exp(-((y - 2 * rho) ** 2) / (8 * rho)) / mp.sqrt(8 * mp.pi * rho) * mp.log(1 + mp.exp(-y))

    pts = sorted({float(p) for p in (2 * rho - 20 * s, -40, 0, 40, 2 * rho, 2 * rho + 20 * s)})
    return float(1 - mp.quad(f, [-mp.inf] + pts + [mp.inf]) / mp.log(2))


@pytest.fixture(scope="module")
def table():
    return pexit.default_table()


def test_j_endpoints():
    assert pexit.j_function(0.0) == 0.0
    assert pexit.j_function(1e6) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("rho", [1e-6, 1e-3, 0.05, 0.3, 1.0, 1.7, 3.0, 5.0, 8.0, 12.0, 25.0, 60.0, 150.0])
def test_j_matches_quadrature_oracle(rho):
    assert abs(pexit.j_function(rho) - j_oracle(rho)) < 1e-9


def test_table_matches_direct(table):
    rho = np.logspace(-8, 3, 500)
    np.testing.assert_allclose(table.j(rho), pexit.j_function(rho), atol=1e-10, rtol=0)


def test_self_dual_point(table):
    rho_star = brentq(lambda r: pexit.j_function(r) - 0.5, 0.1, 10, xtol=1e-14)
    assert table.m(rho_star) == pytest.approx(rho_star, abs=1e-6)


@pytest.mark.property
def test_j_inverse_roundtrip(table):
    x = np.linspace(1e-6, 1 - 1e-6, 1000)
    assert np.abs(table.j(table.j_inv(x)) - x).max() < 1e-9


def test_m_examples(table):
    assert table.m(1e6) == table.rho_min
    assert table.m(0.0) == table.rho_max
    assert table.m(table.m(2.0)) == pytest.approx(2.0, abs=1e-6)


@pytest.mark.property
def test_m_involution_and_monotone(table):
    # M maps [1e-6, 50] into the clamp range, so the involution is unclamped here
    rho = np.logspace(-6, math.log10(50.0), 1000)
    assert np.abs(table.m(table.m(rho)) - rho).max() < 1e-6
    assert (np.diff(table.m(rho)) < 0).all()
    assert (np.diff(table.j(rho)) > 0).all()


@pytest.mark.property
def test_log_m_is_involution_far_out(table):
    u = np.linspace(-60, 13, 2000)
    assert np.abs(table.log_m_u(table.log_m_u(u)) - u).max() < 1e-9


def tiny_proto(adj, spec=None):
    adj = np.asarray(adj, dtype=np.int64)
    spec = spec or ProtographSpec.paper_code()
    return TimeExpandedProtograph(spec=spec, t=1, adjacency=adj, cn_neighbors=(), vn_neighbors=())


def test_degree_one_vn_keeps_channel_snr():
    st = pexit.evolve(tiny_proto([[1, 1, 1]]), [2.0, 3.0, 4.0])
    first = st.vn == 0
    assert st.rho_v2c[first] == pytest.approx(2.0)


def test_single_check_two_vns():
    st = pexit.evolve(tiny_proto([[1, 1]]), 1.7)
    np.testing.assert_allclose(st.rho_c2v, 1.7, atol=1e-6)


def test_degree_zero_vn_output():
    st = pexit.evolve(tiny_proto([[1, 1, 0]]), 2.5)
    assert pexit.output_snr(st)[2] == pytest.approx(2.5)


@pytest.mark.property
def test_paper_code_bounds_and_monotone():
    proto = expand(ProtographSpec.paper_code(), 60)
    rho = 10**0.45
    st = pexit.evolve(proto, rho)
    assert st.converged and st.monotone
    out = pexit.output_snr(st)
    assert (out >= rho - 1e-12).all()
    # messages into systematic VNs never beat the channel SNR
    sys_edges = st.vn % 2 == 0
    assert (st.rho_c2v[sys_edges] <= rho + 1e-9).all()
    # output at delay d never exceeds (d + 1) rho
    d, mins = pexit.min_systematic_output(out, 60, 1, 2)
    assert (mins <= (d + 1) * rho + 1e-9).all()


@pytest.mark.property
def test_sweeps_are_monotone_step_by_step():
    proto = expand(ProtographSpec.paper_code(), 30)
    prev = None
    for n in range(1, 12):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", pexit.NotConverged)
            st = pexit.evolve(proto, 1.5, max_sweeps=n)
        if prev is not None:
            assert (st.rho_c2v >= prev.rho_c2v - 1e-12).all()
            assert (st.rho_v2c >= prev.rho_v2c - 1e-12).all()
        prev = st


def test_not_converged_warns():
    with pytest.warns(pexit.NotConverged):
        st = pexit.evolve(expand(ProtographSpec.paper_code(), 30), 1.5, max_sweeps=2)
    assert not st.converged


def test_high_snr_output_approaches_cap():
    rep = pexit.analyze(ProtographSpec.paper_code(), 20.0, t=60)
    ratio = rep.fit.min_output / ((rep.fit.delays + 1) * rep.rho_ch)
    assert (ratio <= 1 + 1e-12).all()
    assert ratio[10:].min() > 0.95


def test_beta_closed_form_approach():
    spec = ProtographSpec.paper_code()
    ratios = [pexit.analyze(spec, s, t=200).beta_bar / (10 ** (s / 10) / 2) for s in (10.0, 15.0, 20.0)]
    assert all(r <= 1 + 1e-9 for r in ratios)
    assert ratios[0] <= ratios[1] + 1e-9 <= ratios[2] + 2e-9
    assert ratios[2] == pytest.approx(1.0, abs=0.05)


def test_beta_capped_at_4p5_db():
    rep = pexit.analyze(ProtographSpec.paper_code(), 4.5, t=200)
    assert rep.beta_bar <= 10**0.45 / 2 + 1e-9


def test_gamma_zero_code_has_zero_exponent():
    spec = ProtographSpec(2, 1, ([[1, 1]], [[1, 0]]), tail="zero")
    rep = pexit.analyze(spec, 4.5, t=60)
    assert rep.beta_bar == 0.0


def test_pe_bound():
    d, b = pexit.pe_upper_bound([0.0, 2.0], k0=1)
    assert d.tolist() == [1, 2]
    assert b[0] == 0.5 and b[1] == pytest.approx(0.5 * math.exp(-1))
    rho = 100.0
    slope = -np.diff(np.log(pexit.pe_bound_closed_form(rho, 1, 1.0, [5, 6])))[0]
    assert slope == pytest.approx(rho / 2)


def test_threshold():
    th = pexit.stabilization_threshold(1.0, PAPER_A)
    assert th.rho_star_db == pytest.approx(4.4, abs=0.05)
    th2 = pexit.stabilization_threshold(2.0, PAPER_A)
    assert th2.rho_star == pytest.approx(th.rho_star / 2)
    assert th2.rho_star_db == pytest.approx(1.41, abs=0.01)
    with pytest.raises(pexit.StablePlant):
        pexit.stabilization_threshold(1.0, np.eye(3))
