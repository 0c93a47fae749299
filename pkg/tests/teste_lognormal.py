"""
Testes do modelo lognormal e da divisão do coeficiente
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from src import lognormal
from src.chaos import exp_coeffs, hermite_table
from src.lognormal import (a_exact, bm_eval, check_positivity, coeff_mean,
                           coeff_rrms, load_coefficient, mode_frequencies,
                           physical_quadrature, positive_coefficient,
                           save_coefficient, split_coefficient)
from src.models import FieldSpec, SolverError

from .conftest import SMALL_QUAD


@pytest.fixture(scope="module")
def spec_l1():
    return FieldSpec(amp=0.9, decay=2.0, L=1, m_trunc=10, **SMALL_QUAD)


def teste_enumeracao_dos_modos():
    assert mode_frequencies(1) == (0, 1)
    assert mode_frequencies(2) == (1, 0)
    assert mode_frequencies(3) == (0, 2)
    assert mode_frequencies(4) == (1, 1)
    assert mode_frequencies(6) == (0, 3)
    with pytest.raises(ValueError):
        mode_frequencies(0)


def teste_bm_exemplos(small_spec):
    assert bm_eval(1, [0.3, 0.0], small_spec) == pytest.approx(0.9)
    assert bm_eval(2, [0.0, 0.7], small_spec) == pytest.approx(0.225)
    x = np.array([[0.1, 0.2], [0.5, 0.5]])
    assert_allclose(bm_eval(3, x, small_spec), 0.1 * np.cos(4 * np.pi * x[:, 1]))


def teste_medida_respeita_n_explicito(small_spec):
    assert len(small_spec.measure(0)) == 0
    assert len(small_spec.measure(3)) == 3
    assert len(small_spec.measure()) == small_spec.m_trunc


def teste_a_exact_exemplos(small_spec):
    assert a_exact([0.4, 0.4], np.zeros(5), small_spec) == pytest.approx(1.0)
    assert a_exact([0.3, 0.0], [1.0], small_spec, M=1) == pytest.approx(math.exp(0.9))
    # M trunca a soma
    assert a_exact([0.3, 0.0], [1.0, 5.0], small_spec, M=1) == pytest.approx(math.exp(0.9))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=1, max_size=8),
       st.floats(0, 1), st.floats(0, 1))
def teste_a_exact_limitado(y, x1, x2):
    spec = FieldSpec(amp=0.9, decay=2.0, L=1, m_trunc=10)
    value = float(a_exact([x1, x2], y, spec))
    bound = float(np.sum(spec.beta(len(y)) * np.abs(y)))
    assert math.exp(-bound) * (1 - 1e-12) <= value <= math.exp(bound) * (1 + 1e-12)


def teste_quadratura_fisica():
    quad = physical_quadrature(4, 3)
    assert quad.points.shape == (144, 2)
    assert np.sum(quad.weights) == pytest.approx(1.0)
    x, y = quad.points.T
    assert np.sum(quad.weights * x ** 5 * y ** 4) == pytest.approx(1 / 30)
    assert np.all((quad.points > 0) & (quad.points < 1))


def teste_split_l1_reproduz_serie_truncada(spec_l1):
    c = split_coefficient(spec_l1, (4,), max_rank=10)
    sigma = c.params.sigma[0]
    coeffs = exp_coeffs(bm_eval(1, c.quad.points, spec_l1) * sigma, 3)   # (4, P)
    for y in (-1.7, 0.0, 0.4, 2.2):
        series = hermite_table(3, y / sigma) @ coeffs
        assert_allclose(c.evaluate([y]), series, atol=1e-10 * np.max(np.abs(series)))


def teste_split_nucleos_ortonormais(coeff3):
    for core in coeff3.cores:
        mat = core.reshape(core.shape[0], -1)
        assert_allclose(mat @ mat.T, np.eye(core.shape[0]), atol=1e-12)
    assert coeff3.ranks[0] == 1 and coeff3.ranks[-1] == 1
    assert max(coeff3.ranks) <= 10


def teste_split_respeita_posto_maximo(small_spec):
    c = split_coefficient(small_spec, (3, 3, 3), max_rank=2)
    assert max(c.ranks) <= 2


def teste_split_campo_constante(flat_coeff):
    for core in flat_coeff.cores:
        assert core.shape == (1, 3, 1)
        assert_allclose(core[0, :, 0], [1.0, 0.0, 0.0], atol=1e-15)
    assert_allclose(coeff_mean(flat_coeff), 1.0, atol=1e-14)
    assert_allclose(flat_coeff.evaluate([0.3, -2.0]), 1.0, atol=1e-14)


def teste_split_entradas_invalidas(small_spec):
    with pytest.raises(ValueError):
        split_coefficient(small_spec, (), max_rank=3)
    with pytest.raises(ValueError):
        split_coefficient(small_spec, (3, 0), max_rank=3)
    with pytest.raises(ValueError):
        split_coefficient(small_spec, (3, 3), max_rank=0)


def teste_media_l1_forma_fechada(spec_l1):
    c = split_coefficient(spec_l1, (6,), max_rank=10)
    t = bm_eval(1, c.quad.points, spec_l1) * c.params.sigma[0]
    assert_allclose(coeff_mean(c), np.exp(0.5 * t ** 2), rtol=1e-9)


def teste_reavaliacao_consistente(coeff3):
    y = np.array([0.8, -1.1, 0.3])
    assert_allclose(coeff3.evaluate(y, points=coeff3.quad.points), coeff3.evaluate(y),
                    rtol=1e-10, atol=1e-12)
    assert_allclose(coeff3.mean(points=coeff3.quad.points), coeff3.mean(), rtol=1e-10)


def teste_vetor_estocastico_exige_dimensoes(coeff3):
    with pytest.raises(ValueError):
        coeff3.stochastic_vector([0.1, 0.2])


def teste_rrms_serie_l1_grau_16(spec_l1, rng):
    c = split_coefficient(spec_l1, (17,), max_rank=20)
    assert coeff_rrms(c, 50, rng) <= 1e-6


def teste_rrms_campo_constante(flat_coeff, rng):
    assert coeff_rrms(flat_coeff, 10, rng) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        coeff_rrms(flat_coeff, 0, rng)


@pytest.fixture(scope="module")
def resolved_coeff(small_spec):
    """q = 9 e posto até 20: a_{Δ,s} resolvido na faixa |y| ≲ 4"""
    return split_coefficient(small_spec, (9, 9, 9), max_rank=20)


def teste_positividade(resolved_coeff, rng):
    assert max(resolved_coeff.ranks) >= 10
    assert check_positivity(resolved_coeff, 1000, rng) == 1.0
    assert np.all(coeff_mean(resolved_coeff) > 0)


def teste_coeficiente_positivo_sem_aumento(small_spec):
    c = positive_coefficient(small_spec, (9, 9), 20, seed=0)
    assert c.degrees == (9, 9)


def teste_coeficiente_positivo_aumenta_grau_e_posto(small_spec, monkeypatch):
    """Uma amostra negativa leva a graus +2 e posto máximo dobrado"""
    fractions = iter([0.8, 1.0])
    monkeypatch.setattr(lognormal, "check_positivity", lambda c, n, rng: next(fractions))
    c = positive_coefficient(small_spec, (3, 3), 2, seed=0)
    assert c.degrees == (5, 5)
    assert max(c.ranks) == 4


def teste_coeficiente_nunca_positivo_falha(small_spec, monkeypatch):
    calls = []

    def always_negative(c, n, rng):
        calls.append(c.degrees)
        return 0.5

    monkeypatch.setattr(lognormal, "check_positivity", always_negative)
    with pytest.raises(SolverError, match="não positivo"):
        positive_coefficient(small_spec, (3, 3), 10, seed=0, max_attempts=2)
    assert calls == [(3, 3), (5, 5), (7, 7)]


def teste_serializacao(tmp_path, coeff3):
    path = tmp_path / "coef.json"
    save_coefficient(coeff3, path)
    loaded = load_coefficient(path)
    assert loaded.degrees == coeff3.degrees
    assert loaded.ranks == coeff3.ranks
    y = np.array([0.2, 0.5, -0.7])
    assert_allclose(loaded.evaluate(y), coeff3.evaluate(y), rtol=0, atol=0)


@pytest.mark.slow
def teste_rrms_l10_posto_10():
    spec = FieldSpec(amp=0.9, decay=2.0, L=10, m_trunc=100)
    c = split_coefficient(spec, (16,) * 10, max_rank=10)
    value = coeff_rrms(c, 100, np.random.default_rng(0))
    assert 1.21e-3 / 5 <= value <= 1.21e-3 * 5


@pytest.mark.slow
def teste_rrms_decresce_com_o_posto():
    spec = FieldSpec(amp=0.9, decay=2.0, L=10, m_trunc=100)
    values = []
    for s_max in (5, 10, 20):
        c = split_coefficient(spec, (16,) * 10, max_rank=s_max)
        values.append(coeff_rrms(c, 100, np.random.default_rng(0)))
    assert values[1] <= values[0] * 1.2
    assert values[2] <= values[1] * 1.2


@pytest.fixture(scope="module")
def spec_l50():
    return FieldSpec(amp=0.9, decay=2.0, L=50, m_trunc=100)


@pytest.mark.slow
def teste_rrms_l50_posto_50(spec_l50):
    c = split_coefficient(spec_l50, (16,) * 50, max_rank=50)
    assert max(c.ranks) == 50
    assert coeff_rrms(c, 250, np.random.default_rng(0)) <= 3e-4


@pytest.mark.slow
def teste_rrms_l50_melhora_de_10_para_50(spec_l50):
    """Mesmas amostras: o posto 50 reduz o erro do posto 10"""
    values = [coeff_rrms(split_coefficient(spec_l50, (16,) * 50, max_rank=s_max), 250,
                         np.random.default_rng(0))
              for s_max in (10, 50)]
    assert values[1] < values[0]
