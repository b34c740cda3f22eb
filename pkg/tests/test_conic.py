import numpy as np
import pytest

from starris import conic
from starris.channel import GeometryConfig, generate
from starris.model import SystemConfig
from starris.optimizer.ao import initialize
from starris.optimizer.operators import derive
from starris.optimizer.ris import build_ris_standard, build_ris_subproblem
from starris.optimizer.surrogate import SurrogateState


def random_hermitian(rng, m):
    A = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return A + A.conj().T


def test_lp():
    p = conic.ConicProgram("lp")
    x = p.variable("x")
    y = p.variable("y")
    p.add_nonneg(x)
    p.add_nonneg(y)
    p.add_le(x + y * 2.0, 4.0)
    p.add_le(x * 3.0 + y, 6.0)
    p.maximize(x + y)
    sol = conic.solve(p)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(14 / 5, rel=1e-7)
    assert sol.value(x)[0] == pytest.approx(8 / 5, rel=1e-6)


def test_soc_and_rotated_soc():
    p = conic.ConicProgram("soc")
    x = p.variable("x")
    y = p.variable("y")
    p.add_eq(y - 0.6)
    p.add_soc(conic.Affine.constant([1.0], p.n), conic.vstack(x, y))
    p.maximize(x)
    assert conic.solve(p).objective == pytest.approx(0.8, rel=1e-7)

    p = conic.ConicProgram("rsoc")
    t = p.variable("t")
    p.add_rsoc(conic.Affine.constant([2.0], p.n), conic.Affine.constant([8.0], p.n), t)
    p.maximize(t)
    assert conic.solve(p).objective == pytest.approx(4.0, rel=1e-7)


def test_hermitian_sdp_both_backends(rng):
    m = 4
    A = random_hermitian(rng, m)
    lam = np.linalg.eigvalsh(A)[-1]

    p = conic.ConicProgram("sdp")
    U = p.hermitian("U", m)
    p.add_hermitian_psd(U)
    p.add_eq(U.diag().sum() - 1.0)
    p.maximize(U.trace_with(A))
    sol = conic.solve(p)
    assert sol.objective == pytest.approx(lam, rel=1e-7)
    Uv = sol.value(U)
    np.testing.assert_allclose(Uv, Uv.conj().T, atol=1e-12)
    assert np.trace(Uv).real == pytest.approx(1.0, abs=1e-7)

    q = conic.StandardProgram("sdp")
    V = q.hermitian_psd("U", m)
    s = q.nonneg("slack")
    n = q.n
    q.add_eq(V.diag(n).sum() + s - 1.0)
    q.maximize(V.trace_with(A, n))
    for kkt in ("block", "ldl"):
        sol = conic.solve_standard(q, kkt=kkt)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(max(lam, 0.0), rel=1e-6, abs=1e-8)
        Vv = V.value(sol.x)
        # the optimum is the rank-one projector on the top eigenvector
        top = np.linalg.eigh(A)[1][:, -1]
        assert abs(np.vdot(top, Vv @ top)) == pytest.approx(1.0, abs=1e-5)


def test_standard_form_with_free_and_soc_blocks():
    # max t  s.t.  ||(1, z)|| <= t,  z free with z = 2  ->  t = sqrt(5); t <= 10 via a nonneg slack
    q = conic.StandardProgram("mixed")
    c = q.soc("c", 3)
    z = q.free("z")
    s = q.nonneg("s")
    n = q.n
    q.add_eq(c[1] - 1.0)
    q.add_eq(c[2] - z)
    q.add_eq(z - 2.0)
    q.add_eq(c[0] + s - 10.0)
    q.maximize(-c[0])
    sol = conic.solve_standard(q)
    assert sol.objective == pytest.approx(-np.sqrt(5.0), rel=1e-6)
    assert max(q.residuals(sol.x).values()) <= 1e-7


def test_infeasible_and_unbounded():
    p = conic.ConicProgram()
    x = p.variable("x")
    p.add_le(x, 0.0)
    p.add_nonneg(x - 1.0)
    p.maximize(x)
    sol = conic.solve(p)
    assert sol.status == "infeasible" and sol.x is None and not sol.optimal

    p = conic.ConicProgram()
    x = p.variable("x")
    p.add_nonneg(x)
    p.maximize(x)
    assert conic.solve(p).status == "unbounded"

    q = conic.StandardProgram()
    s = q.nonneg("s", 2)
    q.add_eq(s[0] + s[1] + 1.0)
    q.maximize(s[0])
    assert conic.solve_standard(q).status == "infeasible"


def test_affine_algebra():
    p = conic.ConicProgram()
    x = p.variable("x", 3)
    e = (x * 2.0 - 1.0)[np.array([0, 2])]
    np.testing.assert_allclose(e.value(np.array([1.0, 5.0, 3.0])), [1.0, 5.0])
    np.testing.assert_allclose(x.sum().value(np.ones(3)), [3.0])
    np.testing.assert_allclose((np.eye(3)[:2] @ x).value(np.arange(3.0)), [0.0, 1.0])
    with pytest.raises(TypeError):
        x * x
    with pytest.raises(ValueError, match="duplicate"):
        p.variable("x")
    with pytest.raises(ValueError, match="scalar"):
        p.maximize(x)
    with pytest.raises(ValueError, match="Hermitian"):
        conic.hermitian_embed(np.array([[0, 1], [2, 0]]))


def test_dump_is_deterministic_and_complete():
    def build():
        p = conic.ConicProgram("toy")
        x = p.variable("x", 2)
        U = p.hermitian("U", 2)
        p.add_hermitian_psd(U, "psd")
        p.add_le(x[0], 1.0, "cap")
        p.add_soc(x[1], x[0], "cone")
        p.maximize(x.sum())
        return p

    text = build().dump()
    assert text == build().dump()
    assert "constraint 0 psd dim=4" in text
    assert "name=cap" in text and "name=cone" in text
    assert "U hermitian offset=2 size=4" in text


@pytest.fixture(scope="module")
def ris_instance():
    cfg = SystemConfig(M=6)
    ch = generate(GeometryConfig(), cfg, seed=4)
    bf, star, alpha, _ = initialize(ch, cfg, seed=0)
    return cfg, ch, bf, star, alpha


@pytest.mark.parametrize("passive", [False, True])
def test_ris_relaxation_same_optimum_in_both_forms(ris_instance, passive):
    cfg, ch, bf, star, alpha = ris_instance
    if passive:
        cfg = cfg.with_updates(passive=True)
        star = star.scaled(np.sqrt(0.5 / cfg.rho_max))
    state = SurrogateState.at(bf, star, ch, cfg, alpha)
    ops = derive(bf, star, ch, cfg)
    a = conic.solve(build_ris_subproblem(state, ops, bf, ch, cfg).program)
    rp = build_ris_standard(state, ops, bf, ch, cfg)
    b = conic.solve_standard(rp.program)
    assert a.status == b.status == "optimal"
    assert b.objective == pytest.approx(a.objective, rel=1e-5)
    # relaxed matrices are Hermitian PSD and within the element bounds
    for U in rp.lifted(b).values():
        np.testing.assert_allclose(U, U.conj().T, atol=1e-12)
        assert np.linalg.eigvalsh(U)[0] >= -1e-6 * np.abs(U).max()
