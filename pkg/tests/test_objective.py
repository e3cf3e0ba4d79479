import numpy as np
import pytest
import torch

import oracles
from xmask_attack.errors import InvalidInputError, NumericError
from xmask_attack.geometry import ImageShape, XMaskSpec, build_x_mask
from xmask_attack.objective import (
    TERMS,
    SimilarityContext,
    TextPools,
    WeightSchedule,
    Weights,
    line_smoothness_loss,
    magnitude_loss,
    margin_loss,
    similarity_logits,
    source_suppression_loss,
    stage_weights,
    target_attraction_loss,
    targeted_loss,
    total_loss,
)

D64 = torch.float64


def unit(*shape, g):
    return torch.nn.functional.normalize(torch.randn(*shape, generator=g, dtype=D64), dim=-1)


def rel_err(a, b):
    return float((a - b).abs().max() / max(float(a.abs().max()), float(b.abs().max()), 1e-8))


def fd_grad(fn, x, h=1e-4):
    """Central differences of a scalar function, one coordinate at a time."""
    g = torch.zeros_like(x)
    flat, gf = x.view(-1), g.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + h
        fp = fn(x).item()
        flat[i] = old - h
        fm = fn(x).item()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def analytic_grad(fn, x):
    x = x.clone().requires_grad_(True)
    (g,) = torch.autograd.grad(fn(x), x)
    return g


def small_mask():
    return build_x_mask(XMaskSpec(line_width=1, length_ratio=0.8), ImageShape(8, 8))


# --- values against loop oracles ----------------------------------------------------


def test_similarity_logits_match_recomputation(gen):
    v, E = unit(16, g=gen), unit(6, 16, g=gen)
    got = similarity_logits(SimilarityContext(v, E, 0.07))
    want = [sum(float(E[k, j]) * float(v[j]) for j in range(16)) / 0.07 for k in range(6)]
    assert np.allclose(got.numpy(), want, atol=1e-6)


def test_similarity_context_rejects_unnormalized(gen):
    with pytest.raises(InvalidInputError, match="unit-norm"):
        SimilarityContext(2 * unit(8, g=gen), unit(3, 8, g=gen), 0.07)
    with pytest.raises(InvalidInputError):
        SimilarityContext(unit(8, g=gen), unit(3, 8, g=gen), 0.0)


def test_margin_loss_matches_oracle(gen):
    for _ in range(20):
        z = torch.randn(7, generator=gen, dtype=D64)
        y = int(torch.randint(0, 7, (1,), generator=gen))
        assert float(margin_loss(z, y)) == pytest.approx(oracles.margin(z.tolist(), y), abs=1e-12)


def test_margin_loss_sign_and_errors():
    assert float(margin_loss(torch.tensor([3.0, 1.0, 2.0]), 0)) == pytest.approx(1.0)
    assert float(margin_loss(torch.tensor([1.0, 3.0, 2.0]), 0)) == pytest.approx(-2.0)
    with pytest.raises(InvalidInputError):
        margin_loss(torch.tensor([1.0]), 0)
    with pytest.raises(InvalidInputError):
        margin_loss(torch.tensor([1.0, 2.0]), 2)


def test_targeted_loss_matches_cross_entropy(gen):
    for _ in range(10):
        z = torch.randn(5, generator=gen, dtype=D64) * 3
        assert float(targeted_loss(z, 2)) == pytest.approx(oracles.cross_entropy(z.tolist(), 2), abs=1e-6)
    with pytest.raises(InvalidInputError):
        targeted_loss(torch.zeros(3), 3)


def test_pool_terms_match_mean_of_dots(gen):
    v = unit(16, g=gen)
    pools = TextPools(unit(3, 16, g=gen), unit(4, 16, g=gen))
    tar = -np.mean([float(pools.target_features[i] @ v) for i in range(3)])
    src = np.mean([float(pools.source_features[i] @ v) for i in range(4)])
    assert float(target_attraction_loss(v, pools)) == pytest.approx(tar, abs=1e-6)
    assert float(source_suppression_loss(v, pools)) == pytest.approx(src, abs=1e-6)


def test_pools_reject_empty(gen):
    with pytest.raises(InvalidInputError, match="target pool is empty"):
        TextPools(torch.zeros(0, 8, dtype=D64), unit(2, 8, g=gen))
    with pytest.raises(InvalidInputError, match="source pool is empty"):
        TextPools(unit(2, 8, g=gen), torch.zeros(0, 8, dtype=D64))


def test_magnitude_loss_matches_loop():
    m = build_x_mask(XMaskSpec(), ImageShape(16, 16))
    d = torch.randn(3, 16, 16, dtype=D64)
    assert float(magnitude_loss(d, m)) == pytest.approx(oracles.magnitude(d, m.mask), abs=1e-6)
    with pytest.raises(InvalidInputError):
        magnitude_loss(torch.zeros(3, 8, 16), m)


def test_line_smoothness_matches_loop():
    m = build_x_mask(XMaskSpec(0.4, 0.6, (0.3, 2.0), 0.9, 3), ImageShape(16, 16))
    d = torch.randn(3, 16, 16, dtype=D64)
    paths = [p.tolist() for p in m.paths]
    assert float(line_smoothness_loss(d, m.paths)) == pytest.approx(
        oracles.line_smoothness(d, paths), abs=1e-6)


def test_line_smoothness_zero_on_constant_and_rejects_short_path():
    m = small_mask()
    assert float(line_smoothness_loss(torch.full((3, 8, 8), 0.2), m.paths)) == 0.0
    with pytest.raises(InvalidInputError):
        line_smoothness_loss(torch.zeros(3, 8, 8), [np.array([[0, 0]])])


def test_total_loss_is_weighted_sum(gen):
    w = Weights(1.3, 0.2, 0.7, 4.0, 2.5)
    vals = {k: float(torch.randn(1, generator=gen)) for k in TERMS}
    total, rec = total_loss({k: torch.tensor(v, dtype=D64) for k, v in vals.items()},
                            WeightSchedule(), 0, 10, w)
    want = sum(getattr(w, k) * vals[k] for k in TERMS)
    assert float(total) == pytest.approx(want, abs=1e-9)
    assert rec.weighted_total == pytest.approx(want, abs=1e-9)
    assert rec.terms() == tuple(vals[k] for k in TERMS)


def test_total_loss_names_nonfinite_term():
    terms = {k: torch.tensor(0.0) for k in TERMS}
    terms["line"] = torch.tensor(float("nan"))
    with pytest.raises(NumericError, match="line") as exc:
        total_loss(terms, WeightSchedule(), 0, 10)
    assert exc.value.term == "line"


def test_stage_switch_is_strict():
    s = WeightSchedule(Weights(1, 0, 0, 0, 0), Weights(2, 0, 0, 0, 0), 0.5)
    assert stage_weights(s, 99, 200) == s.early
    assert stage_weights(s, 100, 200) == s.late
    assert stage_weights(s, 0, 1) == s.early
    with pytest.raises(InvalidInputError):
        stage_weights(s, 200, 200)


def test_schedule_validation_and_without():
    with pytest.raises(InvalidInputError):
        WeightSchedule(switch_ratio=1.0)
    with pytest.raises(InvalidInputError):
        WeightSchedule(early=Weights(mag=-1))
    s = WeightSchedule().without("line")
    assert s.early.line == 0 and s.late.line == 0 and s.late.tar == WeightSchedule().late.tar


# --- finite-difference gradient suite -------------------------------------------------

N_CASES = 20
TOL = 1e-4


def _cases(seed):
    g = torch.Generator().manual_seed(seed)
    for _ in range(N_CASES):
        yield g


def test_fd_margin_loss():
    for g in _cases(1):
        E = unit(5, 12, g=g)
        y = int(torch.randint(0, 5, (1,), generator=g))
        fn = lambda v: margin_loss(E @ torch.nn.functional.normalize(v, dim=0) / 0.07, y)
        v = torch.randn(12, generator=g, dtype=D64)
        assert rel_err(analytic_grad(fn, v), fd_grad(fn, v)) <= TOL


def test_fd_targeted_loss():
    for g in _cases(2):
        E = unit(5, 12, g=g)
        fn = lambda v: targeted_loss(E @ torch.nn.functional.normalize(v, dim=0) / 0.07, 3)
        v = torch.randn(12, generator=g, dtype=D64)
        assert rel_err(analytic_grad(fn, v), fd_grad(fn, v)) <= TOL


def test_fd_pool_terms():
    for g in _cases(3):
        pools = TextPools(unit(3, 10, g=g), unit(4, 10, g=g))
        v = torch.randn(10, generator=g, dtype=D64)
        for term in (target_attraction_loss, source_suppression_loss):
            fn = lambda u: term(torch.nn.functional.normalize(u, dim=0), pools)
            assert rel_err(analytic_grad(fn, v), fd_grad(fn, v)) <= TOL


def test_fd_magnitude_and_line():
    m = small_mask()
    for g in _cases(4):
        d = torch.randn(3, 8, 8, generator=g, dtype=D64) * 0.1
        for fn in (lambda x: magnitude_loss(x, m), lambda x: line_smoothness_loss(x, m.paths)):
            assert rel_err(analytic_grad(fn, d), fd_grad(fn, d)) <= TOL
