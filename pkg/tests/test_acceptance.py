"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""
import json
import math
import time

import numpy as np
import pytest

from conftest import numeric_grad, rel_err
from dissipatgrid.cli import main
from dissipatgrid.diffcore import Tape, value_of
from dissipatgrid.gridsim import (
    Plant,
    ReducedNetwork,
    find_equilibrium,
    kron_reduce,
    load_scenario,
    rk4_step,
    sample_step,
    simulate,
)
from dissipatgrid.matnets import (
    DissipativityModel,
    control_pi,
    controller,
    delta_matrix,
    storage_V,
    supply_rate,
)
from dissipatgrid.training import (
    Batch,
    TrainConfig,
    UserCost,
    loss_delta,
    loss_dissipativity,
    loss_reg,
    loss_shaping,
    violation,
)
from dissipatgrid.matnets import ConstantModel
from dissipatgrid.verify import telescoping_cost_check

GRAD_TOL = 1e-5


def scib_model(rng, width=4, depth=1, **kw):
    return DissipativityModel.init(2, 1, rng, width=width, depth=depth,
                                   input_scale=np.array([1 / math.pi, 10.0]),
                                   state_weight=np.array([1.0, 31.4]), **kw)


def kundur_model(rng):
    d = np.array([2 * math.pi] * 3 + [0.1] * 4)
    return DissipativityModel.init(7, 4, rng, width=16, depth=2, input_scale=1 / d,
                                   state_weight=d.max() / d)


# --- 1: gradients ---------------------------------------------------------------

def _probe_batch(rng, k=8):
    x = rng.normal(size=(k, 2)) * [1.0, 0.05]
    return Batch(x, x + rng.normal(size=(k, 2)) * [0.01, 0.001], rng.uniform(-0.5, 0.5, size=(k, 1)))


def _degenerate(m, b, gap=1e-4):
    v = np.sort(violation(m, b))
    lam = np.sort(np.linalg.eigvalsh(delta_matrix(m, b.x)), axis=1)
    lmin = np.sort(lam[:, 0])
    return v[-1] - v[-2] < gap or lmin[1] - lmin[0] < gap or np.min(lam[:, 1] - lam[:, 0]) < gap


def _fd_check(f, arrays, grads, which):
    """Relative error of the concatenated gradient over the arrays indexed by ``which``."""
    rev, fd = [], []
    for i in which:
        p = arrays[i]
        orig = p.copy()

        def fval(z, p=p, orig=orig):
            p[...] = z
            try:
                return float(value_of(f()))
            finally:
                p[...] = orig

        rev.append(np.ravel(grads[i]))
        fd.append(numeric_grad(fval, orig).ravel())
    return rel_err(np.concatenate(rev), np.concatenate(fd), floor=1e-6)


def test_criterion_1_gradients(criterion):
    rng = np.random.default_rng(2024)
    cost = UserCost()
    t0 = time.time()
    worst = {k: 0.0 for k in ("L_d", "L_delta", "L_sp", "L_r", "outputs")}
    probes = skipped = 0
    while probes < 100:
        m, b = scib_model(rng), _probe_batch(rng)
        if _degenerate(m, b):
            skipped += 1
            continue
        params = m.parameters()
        # first-layer and output biases of every net; the former's gradient crosses every layer
        which = [i for k in range(4) for i in (4 * k + 1, 4 * k + 3)]
        losses = {
            "L_d": lambda mm: loss_dissipativity(mm, b, 1e-4),
            "L_delta": lambda mm: loss_delta(mm, b, 1e-3),
            "L_sp": lambda mm: loss_shaping(mm, b, cost, 1e-2, 1),
        }
        for name, f in losses.items():
            tape = Tape()
            bound, leaves = m.bind(tape)
            grads = tape.grad(f(bound), leaves)
            worst[name] = max(worst[name], _fd_check(lambda: f(m), params, grads, which))
        # |theta| has a kink at 0; entries within the FD step of it are excluded
        if min(np.min(np.abs(p)) for p in params) > 1e-4:
            tape = Tape()
            leaves = [tape.leaf(p) for p in params]
            grads = tape.grad(loss_reg(leaves), leaves)
            worst["L_r"] = max(worst["L_r"], _fd_check(lambda: loss_reg(params), params, grads, which))
        # every entry of every network output, at one state
        x0 = b.x[:1]
        for k, name in enumerate(("W", "Q", "S", "Rinv")):
            rows, cols = m.matrix(name, x0).shape[1:]
            for i in range(rows):
                for j in range(cols):
                    tape = Tape()
                    bound, leaves = m.bind(tape)
                    grads = tape.grad(bound.matrix(name, x0)[0, i, j], leaves)
                    own = (4 * k + 1, 4 * k + 3)
                    worst["outputs"] = max(worst["outputs"], _fd_check(
                        lambda name=name, i=i, j=j: m.matrix(name, x0)[0, i, j], params, grads, own))
        probes += 1
    elapsed = time.time() - t0
    ok = all(v <= GRAD_TOL for v in worst.values()) and elapsed <= 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    criterion(1, ok, f"max rel err over {probes} probes ({skipped} degenerate skipped): {detail}; "
                     f"{elapsed:.0f}s")
    assert ok


# --- 2: constructive guarantees --------------------------------------------------

def test_criterion_2_constructive_guarantees(criterion):
    rng = np.random.default_rng(7)
    findings = []
    for m, scale in ((scib_model(rng, width=32, depth=2), np.array([math.pi, 0.1])),
                     (kundur_model(rng), np.array([2 * math.pi] * 3 + [0.1] * 4))):
        x = rng.uniform(-2, 2, size=(1000, m.n)) * scale
        Q = m.matrix("Q", x)
        sym = np.array_equal(Q, np.swapaxes(Q, 1, 2))
        # eigvalsh resolves eigenvalues only to about u * |A|_2 (Weyl), so that is the comparison floor
        margin = np.inf
        for k in ("W", "Rinv"):
            A = m.matrix(k, x)
            lam = np.linalg.eigvalsh(A)
            res = 8 * np.finfo(float).eps * np.abs(lam).max(axis=1)
            margin = min(margin, float(np.min(lam[:, 0] - m.eps_pd + res)))
        V = storage_V(m, x)
        v_ok = bool(np.all(V >= m.eps_pd * np.sum(x * x, axis=1)))
        findings.append((sym, margin >= 0, v_ok, margin))
    ok = all(a and b and c for a, b, c, _ in findings)
    criterion(2, ok, "2x1000 inputs: symmetric outputs exact; min eig - eps_pd + resolution "
              + " / ".join(f"{f[3]:.2g}" for f in findings) + " >= 0; V >= eps_pd |x|^2")
    assert ok


# --- 3: algebraic identities -----------------------------------------------------

def test_criterion_3_identities(criterion):
    rng = np.random.default_rng(8)
    worst_id, worst_min = 0.0, -np.inf
    for m in (scib_model(rng, width=32, depth=2), kundur_model(rng)):
        scale = np.array([math.pi, 0.1]) if m.n == 2 else np.array([2 * math.pi] * 3 + [0.1] * 4)
        x = rng.uniform(-1, 1, size=(1000, m.n)) * scale
        u = rng.normal(size=(1000, m.m))
        p = control_pi(m, x)
        D = delta_matrix(m, x)
        xDx = np.einsum("bi,bij,bj->b", x, D, x)
        w_pi, w_u = supply_rate(m, x, p), supply_rate(m, x, u)
        worst_id = max(worst_id, float(np.max(np.abs(w_pi + xDx) / (1 + np.abs(xDx)))))
        worst_min = max(worst_min, float(np.max((w_pi - w_u) / (1 + np.abs(xDx)))))
    tele = []
    for sc_name, m in (("scib_fault.json", scib_model(rng, width=32, depth=2)),
                       ("kundur2a_fault.json", kundur_model(rng))):
        sc = load_scenario(sc_name, horizon=1.5)
        t = telescoping_cost_check(m, simulate(sc, controller(m)))
        tele.append(abs(t["residual"]) / (1 + abs(t["V0"])))
    ok = worst_id <= 1e-10 and worst_min <= 1e-10 and max(tele) <= 1e-8
    criterion(3, ok, f"|w(x,pi)+x'Dx|/(1+|x'Dx|) max {worst_id:.1e}; "
                     f"max (w(x,pi)-w(x,u)) scaled {worst_min:.1e}; telescoping {max(tele):.1e}")
    assert ok


# --- 4: Kron reduction -------------------------------------------------------------

def test_criterion_4_kron(criterion):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        n = 6
        keep = sorted(rng.choice(n, size=int(rng.integers(2, 5)), replace=False).tolist())
        Y = np.zeros((n, n), complex)
        for i in range(n):
            for j in range(i + 1, n):
                if i + 1 == j or rng.random() < 0.5:
                    y = 1 / complex(rng.uniform(0.01, 0.1), rng.uniform(0.1, 1.0))
                    Y[[i, j], [i, j]] += y
                    Y[i, j] -= y
                    Y[j, i] -= y
            Y[i, i] += complex(rng.uniform(0, 0.1), rng.uniform(-0.1, 0.1))
        red = kron_reduce(Y, keep)
        elim = [i for i in range(n) if i not in keep]
        V = np.zeros(n, complex)
        V[keep] = rng.normal(size=len(keep)) + 1j * rng.normal(size=len(keep))
        V[elim] = np.linalg.solve(Y[np.ix_(elim, elim)], -Y[np.ix_(elim, keep)] @ V[keep])
        worst = max(worst, float(np.max(np.abs(red.Y @ V[keep] - (Y @ V)[keep]))))
    y1, y2 = 1 / (0.02 + 0.3j), 1 / (0.01 + 0.5j)
    series = kron_reduce(np.array([[y1, 0, -y1], [0, y2, -y2], [-y1, -y2, y1 + y2]]), [0, 1])
    s_err = abs(-series.Y[0, 1] - y1 * y2 / (y1 + y2)) / abs(y1 * y2 / (y1 + y2))
    ok = worst <= 1e-9 and s_err <= 1e-12
    criterion(4, ok, f"50 random 6-bus networks, max |I_red - I_full| {worst:.1e}; series closed form rel {s_err:.1e}")
    assert ok


# --- 5: integrator -----------------------------------------------------------------

def test_criterion_5_integrator(criterion):
    sc = load_scenario("scib_fault.json")
    net, plant = sc.networks["post-fault"], sc.plant_post

    def run(x, h, T):
        for _ in range(int(round(T / h))):
            x = rk4_step(x, np.zeros(1), h, net, plant)
        return x

    x0 = sc.equilibrium.x + np.array([0.5, 0.01])
    ref = run(x0, 2.5e-4, 0.5)
    ratio = np.max(np.abs(run(x0, 0.01, 0.5) - ref)) / np.max(np.abs(run(x0, 0.005, 0.5) - ref))
    x1 = sc.equilibrium.x + np.array([0.8, -0.02])
    sub = float(np.max(np.abs(sample_step(x1, np.array([0.3]), 5e-4, 5, net, plant)
                              - sample_step(x1, np.array([0.3]), 5e-4, 50, net, plant))))
    ok = 12 <= ratio <= 20 and sub <= 1e-10
    criterion(5, ok, f"Richardson ratio {ratio:.2f} in [12, 20]; 5 vs 50 substeps {sub:.1e}")
    assert ok


# --- 6: equilibria -------------------------------------------------------------------

def test_criterion_6_equilibria(criterion):
    X, P = 0.5, 1.2
    b = 1 / X
    net = ReducedNetwork(np.zeros((2, 2)), np.array([[-b, b], [b, -b]]), ["a", "b"], np.ones(2))
    plant = Plant(M=np.array([4.0]), D=np.array([5.0]), P_ref=np.array([P]), scale=np.ones(1),
                  E=np.ones(2), omega_b=2 * math.pi * 60, vsg_cols=np.array([0]), inf_col=1)
    err = abs(find_equilibrium(net, plant, [0.1]).x[0] - math.asin(P * X))
    res = load_scenario("kundur2a_fault.json").equilibrium.residual
    ok = err <= 1e-10 and res <= 1e-10
    criterion(6, ok, f"|delta* - arcsin(P X)| {err:.1e}; two-area post-fault residual {res:.1e}")
    assert ok


# --- 9: loss fixtures ------------------------------------------------------------------

def test_criterion_9_loss_fixtures(criterion):
    ident = ConstantModel(np.eye(2), np.zeros((2, 2)), np.zeros((2, 1)), np.eye(1))
    eps = 0.01
    at_margin = Batch(np.array([[math.sqrt(eps), 0.0]]), np.zeros((1, 2)), np.zeros((1, 1)))
    ld = float(loss_dissipativity(ident, at_margin, eps))
    dl = float(loss_delta(ConstantModel(np.eye(2), -np.eye(2), np.zeros((2, 1)), np.eye(1)),
                          Batch(np.ones((3, 2)), np.ones((3, 2)), np.zeros((3, 1))), eps))
    sp = float(loss_shaping(ident, Batch(np.array([[1.0, 0.0]]), np.zeros((1, 2)), np.zeros((1, 1))),
                            UserCost(a=0.0, b=2.0, c=0.0), eps, 1))
    errs = [abs(ld - math.log(2)), abs(dl - math.log1p(math.exp(-0.99))), abs(sp - (1 / 2.01) ** 2)]
    ok = max(errs) <= 1e-10 and abs(dl - 0.3160) <= 5e-5
    criterion(9, ok, f"ln 2 err {errs[0]:.1e}; loss_delta {dl:.4f} (err {errs[1]:.1e}); "
                     f"shaping (1/2.01)^2 err {errs[2]:.1e}")
    assert ok


# --- 10: determinism via manifests ---------------------------------------------------

def test_criterion_10_manifest_replay(criterion, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = TrainConfig(n_trajectories=30, traj_length=0.2, width=8, epochs=2, n_probes=300)
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    steps = [
        ["gen-data", "--config", "c.json", "--out", "d.jsonl"],
        ["train", "--data", "d.jsonl", "--config", "c.json", "--out", "m.json"],
        ["verify", "--model", "m.json", "--data", "d.jsonl", "--scenario", "scib_fault.json",
         "--config", "c.json", "--out", "r.json"],
        ["simulate", "--scenario", "scib_fault.json", "--model", "m.json", "--out", "t.csv"],
    ]
    for s in steps:
        assert main(["--quiet", *s]) in (0, 1)
    codes = {out: main(["--quiet", "replay", f"{out}.manifest.json"])
             for out in ("d.jsonl", "m.json", "r.json", "t.csv")}
    ok = all(c == 0 for c in codes.values())
    criterion(10, ok, "bitwise replay of gen-data, train, verify, simulate: "
              + ", ".join(f"{k} {'identical' if c == 0 else 'DIFFERENT'}" for k, c in codes.items()))
    assert ok


# --- 7 and 8: end-to-end reproductions -------------------------------------------------

def _repro(exp, workdir):
    rc = main(["--quiet", "repro", exp, "--workdir", str(workdir)])
    summary = json.loads((workdir / "summary.json").read_text())
    return rc, summary


def _describe(summary):
    bad = [k for k, v in summary["criteria"].items() if not v]
    vals = summary["values"]
    return (f"heldout viol frac {vals['heldout_violation_fraction']:.4f}, "
            f"delta-PD fail frac {vals['delta_pd_failure_fraction']:.4f}, "
            f"max|dw| after check {vals['max_domega_after_check_time']}, "
            f"final dd {vals['controlled_final_ddelta']}"
            + (f"; failing: {', '.join(bad)}" if bad else ""))


@pytest.mark.slow
def test_criterion_7_scib_repro(criterion, tmp_path):
    rc, summary = _repro("scib", tmp_path / "scib")
    ok = rc == 0 and summary["passed"]
    criterion(7, ok, f"repro scib (seed {summary['seed']}): {_describe(summary)}")
    assert ok


@pytest.mark.slow
def test_criterion_8_kundur_repro(criterion, tmp_path):
    rc, summary = _repro("kundur2a", tmp_path / "kundur2a")
    ok = rc == 0 and summary["passed"]
    criterion(8, ok, f"repro kundur2a (seed {summary['seed']}): {_describe(summary)}")
    assert ok
