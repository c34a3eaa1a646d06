"""Acceptance suite: one test per headline guarantee of the shipped system.

Order of the tests mirrors the dependency chain: gradient correctness,
composition identities, advantage estimation, freeze discipline, then the
desk-scale learning results, metric oracles, and pipeline determinism.

Tests 5-8 judge artifacts of the desk-scale experiment. They do not skip:
when an artifact is missing the test fails and names the command that
produces it. Everything else runs self-contained in a few minutes.
"""

import calendar
import time
from pathlib import Path

import numpy as np
import pytest

from hemirl import autodiff as ad
from hemirl import cli
from hemirl import metrics
from hemirl import nn
from hemirl import training as tr
from hemirl.agent import (
    BiHemisphericAgent,
    GatingNetwork,
    GaussianPolicy,
    PenaltyConfig,
    SingleHemisphereAgent,
    compose_mean,
    compose_value,
    hemispheric_penalty,
)
from hemirl.autodiff import Tensor, backward, no_grad
from hemirl.envs import make_task_spec
from hemirl.nn import GruCellParams, gru_step
from hemirl.runner import read_csv
from hemirl.training import PPOConfig, augmented_dim

REPO = Path(__file__).resolve().parents[1]
DESK = REPO / "runs" / "desk"
ACCEPT = REPO / "runs" / "accept"

DESK_PIPELINE = ("python3 -m hemirl.cli meta-train configs/desk.ini && "
                 "python3 -m hemirl.cli main configs/desk.ini && "
                 "python3 -m hemirl.cli eval configs/desk.ini && "
                 "python3 -m hemirl.cli report runs/desk")
ACCEPT_PIPELINE = "python3 -m hemirl.cli main configs/accept.ini"


def _artifact(path: Path, producer: str) -> Path:
    if not path.exists():
        pytest.fail(f"missing artifact {path}\nproduce it with: {producer}",
                    pytrace=False)
    return path


# ---------------------------------------------------------------- gradients

FD_EPS = 1e-5
GRAD_TOL = 1e-4


def _fd_grad(f, arrays, idx):
    g = np.zeros_like(arrays[idx])
    flat_g = g.reshape(-1)
    flat_a = arrays[idx].reshape(-1)
    for i in range(flat_a.size):
        orig = flat_a[i]
        flat_a[i] = orig + FD_EPS
        hi = f(*arrays)
        flat_a[i] = orig - FD_EPS
        lo = f(*arrays)
        flat_a[i] = orig
        flat_g[i] = (hi - lo) / (2.0 * FD_EPS)
    return g


def _checked_inputs(f, arrays) -> int:
    """Backward vs central differences for every input; returns #comparisons."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    backward(f(*tensors))

    def scalar(*raw):
        with no_grad():
            return f(*[Tensor(r) for r in raw]).item()

    for k, t in enumerate(tensors):
        want = _fd_grad(scalar, [a.copy() for a in arrays], k)
        got = t.grad if t.grad is not None else np.zeros_like(want)
        err = np.max(np.abs(got - want) / np.maximum(np.abs(want), 1.0))
        assert err < GRAD_TOL, f"input {k}: max rel err {err:.3e}"
    return len(tensors)


def test_01_gradients_match_finite_differences():
    """>=100 randomized backward-vs-central-difference checks in under a minute."""
    rng = np.random.default_rng(20260815)
    t0 = time.perf_counter()
    compared = 0

    for _ in range(30):  # affine chains through both saturating nonlinearities
        b, i, o = rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 6)
        x, w, bias = rng.normal(size=(b, i)), rng.normal(size=(i, o)), rng.normal(size=o)
        squash = ad.tanh if rng.integers(2) else ad.sigmoid
        compared += _checked_inputs(
            lambda xx, ww, bb, s=squash: s(ad.matmul(xx, ww) + bb).sum(), [x, w, bias])

    names = ("w_zx", "w_zh", "b_z", "w_rx", "w_rh", "b_r", "w_nx", "w_nh", "b_n")
    for steps in (1, 2, 3):  # recurrent cell unrolled through time
        for _ in range(12):
            b, i, h = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
            cell = GruCellParams.create(rng, i, h)
            cell_arrays = [getattr(cell, n).data for n in names]
            xs = [rng.normal(size=(b, i)) for _ in range(steps)]
            h0 = rng.normal(size=(b, h))
            proj = rng.normal(size=h)

            def unrolled(*ts, n_steps=steps, idim=i, hdim=h):
                p = GruCellParams(idim, hdim, **dict(zip(names, ts[:9])))
                state = ts[9]
                for s in range(n_steps):
                    state = gru_step(ts[10 + s], state, p)
                return (state * Tensor(proj)).sum()

            compared += _checked_inputs(unrolled, cell_arrays + [h0] + xs)

    for _ in range(24):  # action log-density wrt mean and log-std
        b, a = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        mu, log_std = rng.normal(size=(b, a)), rng.normal(size=a) * 0.3
        acts = rng.normal(size=(b, a))
        compared += _checked_inputs(
            lambda m, s, ac=acts: GaussianPolicy(m, s).log_prob(ac).sum(),
            [mu, log_std])

    for alpha in (0.75, 1.0, 1.3):  # responsibility penalty through the gate
        for _ in range(7):
            z = rng.uniform(-3.0, 3.0, size=(int(rng.integers(1, 7)), 1))
            cfg = PenaltyConfig(alpha=alpha, beta=5.0)

            def pen(zz, c=cfg):
                p_left = ad.sigmoid(zz)
                return hemispheric_penalty(1.0 - p_left, p_left, c).sum()

            compared += _checked_inputs(pen, [z])

    elapsed = time.perf_counter() - t0
    assert compared >= 100, f"only {compared} gradient checks ran"
    assert elapsed < 60.0, f"gradient suite took {elapsed:.1f}s"
    print(f"\nPASS gradients: {compared} randomized checks vs central "
          f"differences, rel err < {GRAD_TOL}, {elapsed:.1f}s")


# ---------------------------------------------------- composition identities

def test_02_composition_identities():
    """Gate complement, blend endpoints, and penalty reference values."""
    rng = np.random.default_rng(7)
    gate = GatingNetwork(rng)
    h = gate.initial_hidden(64)
    x = Tensor(rng.normal(size=(64, GatingNetwork.INPUT_DIM)))
    with no_grad():
        p_right, p_left, _ = gate.forward(x, h)
    # One degree of freedom: the right gate is literally 1 - P_left, so the
    # pair can never drift apart; the float sum sits within one ulp of 1.
    assert np.array_equal(p_right.data, 1.0 - p_left.data)
    assert np.max(np.abs((p_right.data + p_left.data) - 1.0)) <= 2.0 ** -52

    v_r = Tensor(rng.normal(size=(32, 1)) * 10.0)
    v_l = Tensor(rng.normal(size=(32, 1)) * 10.0)
    ones, zeros = Tensor(np.ones((32, 1))), Tensor(np.zeros((32, 1)))
    with no_grad():
        assert np.max(np.abs(compose_value(ones, v_r, v_l).data - v_r.data)) < 1e-12
        assert np.max(np.abs(compose_value(zeros, v_r, v_l).data - v_l.data)) < 1e-12
        mu_r = Tensor(rng.normal(size=(32, 3)))
        mu_l = Tensor(rng.normal(size=(32, 3)))
        ones3, zeros3 = Tensor(np.ones((32, 1))), Tensor(np.zeros((32, 1)))
        assert np.max(np.abs(compose_mean(ones3, mu_r, mu_l).data - mu_r.data)) < 1e-12
        assert np.max(np.abs(compose_mean(zeros3, mu_r, mu_l).data - mu_l.data)) < 1e-12

    cfg = PenaltyConfig(alpha=0.75, beta=5.0)
    with no_grad():
        for p_r, want in ((0.0, 0.0), (0.5, 5.0), (0.8, 5.0 * 2.0 ** 1.5)):
            got = hemispheric_penalty(
                Tensor(np.array([p_r])), Tensor(np.array([1.0 - p_r])), cfg).item()
            assert abs(got - want) < 1e-9, f"penalty at P_right={p_r}: {got} != {want}"
    print("\nPASS composition: complement exact, endpoints < 1e-12, "
          "penalty values {0, 5, 5*2^1.5} < 1e-9")


# ------------------------------------------------------- advantage estimation

def _gae_direct(rewards, values, dones, gamma, lam):
    """O(T^2) definition: discounted sum of one-step errors, cut at dones."""
    T = len(rewards)
    adv = np.zeros(T)
    for t in range(T):
        w = 1.0
        for u in range(t, T):
            v_next = values[u + 1] if u + 1 < T else 0.0
            delta = rewards[u] + gamma * (1.0 - dones[u]) * v_next - values[u]
            adv[t] += w * delta
            if dones[u]:
                break
            w *= gamma * lam
    return adv, adv + values


def test_03_gae_recursion_matches_direct_definition():
    """Backward recursion equals the quadratic-time definition on 1000 episodes."""
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 21))
        rewards = rng.normal(size=T) * 3.0
        values = rng.normal(size=T) * 2.0
        dones = (rng.random(T) < 0.2).astype(float)
        gamma = float(rng.uniform(0.5, 1.0))
        lam = float(rng.uniform(0.5, 1.0))
        adv, ret = tr.compute_gae(rewards, values, dones, gamma, lam)
        adv_o, ret_o = _gae_direct(rewards, values, dones, gamma, lam)
        worst = max(worst, float(np.max(np.abs(adv - adv_o))),
                    float(np.max(np.abs(ret - ret_o))))
    assert worst < 1e-10, f"worst deviation {worst:.3e}"
    print(f"\nPASS advantage estimation: 1000 random episodes, "
          f"recursive vs direct worst diff {worst:.2e} < 1e-10")


# ------------------------------------------------------------ freeze discipline

def test_04_right_hemisphere_frozen_through_training():
    """A complete composite training run leaves the right hemisphere bitwise intact."""
    spec = make_task_spec("reach", pool_seed=3, episode_length=100)
    dim = augmented_dim(spec)
    agent = BiHemisphericAgent(np.random.default_rng(1), dim, hidden=24)
    donor = SingleHemisphereAgent(np.random.default_rng(2), dim, hidden=24)
    agent.load_right({"right." + k[len("net."):]: t.data
                      for k, t in donor.params().items() if k.startswith("net.")})

    right_before = {k: t.data.copy() for k, t in agent.right.params("right").items()}
    hash_before = agent.right_hash()
    left_before = {k: t.data.copy() for k, t in agent.trainable_params().items()}

    cfg = PPOConfig(learning_rate=3e-4, epochs=4, batch_episodes=10)
    rows = tr.train_bihem(agent, spec, cfg, total_steps=6000,
                          rng=np.random.default_rng(5), eval_episodes=2)
    assert len(rows) == 6

    assert agent.right_hash() == hash_before
    for k, arr in agent.right.params("right").items():
        assert np.array_equal(arr.data, right_before[k]), f"{k} drifted"
    moved = any(not np.array_equal(t.data, left_before[k])
                for k, t in agent.trainable_params().items())
    assert moved, "training loop made no parameter progress at all"
    print("\nPASS freeze discipline: right-hemisphere hash and raw parameters "
          "unchanged across a full composite training run")


# --------------------------------------------------------- desk-scale learning

def _record_duration_seconds(record_path: Path) -> float:
    import json
    rec = json.loads(record_path.read_text())
    fmt = "%Y-%m-%dT%H:%M:%S"
    t0 = calendar.timegm(time.strptime(rec["started"], fmt))
    t1 = calendar.timegm(time.strptime(rec["finished"], fmt))
    return float(t1 - t0)


def test_05_left_only_reaches_success_on_reach():
    """GRU-256 from-scratch baseline: success >= 0.8 within 300k steps, 3/3 seeds."""
    lines = []
    for idx in range(3):
        log = _artifact(ACCEPT / "logs" / f"main_reach_left_only_seed{idx}.csv",
                        ACCEPT_PIPELINE)
        rows = read_csv(log)
        hits = [int(r["step"]) for r in rows
                if float(r["success_rate"]) >= 0.8 and int(r["step"]) <= 300_000]
        assert hits, f"seed {idx}: success never reached 0.8 within 300k steps"
        dur = _record_duration_seconds(
            _artifact(ACCEPT / "records" / f"main_reach_left_only_seed{idx}.json",
                      ACCEPT_PIPELINE))
        assert dur < 1800.0, f"seed {idx} took {dur:.0f}s (budget 1800s)"
        lines.append(f"seed{idx} first at {min(hits)} steps in {dur / 60:.1f} min")
    print("\nPASS left-only learning: " + "; ".join(lines))


def test_06_meta_trained_agent_adapts_within_trial():
    """Held-out sub-tasks: final within-trial episode beats the first.

    Judged on the probe log the eval stage writes: one row per trial, one
    column per within-trial episode, all on a reach pool disjoint from the
    training pools. The effect is small relative to per-trial noise, so the
    pipeline measures it once at high trial count instead of re-rolling
    trials at test time.
    """
    probe = _artifact(DESK / "logs" / "eval_adapt_right.csv", DESK_PIPELINE)
    rows = read_csv(probe)
    assert len(rows) >= 100, f"only {len(rows)} probe trials logged"

    from hemirl.config import load_config
    cfg = load_config(DESK / "config.ini")
    pool_seeds = {int(r["pool_seed"]) for r in rows}
    assert pool_seeds.isdisjoint({cfg.meta.pool_seed, cfg.main.pool_seed}), \
        f"probe pool seeds {pool_seeds} overlap the training pools"
    distinct = len({r["subtask_seed"] for r in rows})
    assert distinct >= 100, \
        f"only {distinct} distinct held-out sub-tasks probed"

    ep_cols = sorted((c for c in rows[0] if c.startswith("ep")),
                     key=lambda c: int(c[2:]))
    first = np.array([float(r[ep_cols[0]]) for r in rows])
    last = np.array([float(r[ep_cols[-1]]) for r in rows])
    assert last.mean() > first.mean(), \
        (f"no within-trial adaptation: episode1 {first.mean():.3f} vs "
         f"episode{len(ep_cols)} {last.mean():.3f} over {len(rows)} trials")
    print(f"\nPASS within-trial adaptation: episode1 reward {first.mean():.3f} -> "
          f"episode{len(ep_cols)} {last.mean():.3f} over {len(rows)} trials, "
          f"{distinct} distinct held-out sub-tasks")


def _summary_rows():
    summary = _artifact(DESK / "report" / "summary.csv", DESK_PIPELINE)
    gaps = _artifact(DESK / "report" / "gaps.txt", DESK_PIPELINE).read_text().strip()
    assert not gaps, f"experiment grid incomplete:\n{gaps}"
    rows = read_csv(summary)
    competent = [r for r in rows if r["right_competent"] == "true"]
    assert competent, ("no task qualified as right-competent "
                       "(right-only < 2x random everywhere); "
                       "meta-training artifacts are too weak to judge")
    return competent


def test_07_initial_relative_reward_above_one_where_right_competent():
    """Median IRR over 5 seeds > 1 wherever the frozen prior is competent."""
    lines = []
    for r in _summary_rows():
        assert r["median_irr"] != "", f"{r['task']}: IRR undefined"
        irr = float(r["median_irr"])
        assert irr > 1.0, f"{r['task']}: median IRR {irr:.3f} <= 1"
        lines.append(f"{r['task']} {irr:.2f}")
    print("\nPASS initial relative reward: " + ", ".join(lines))


def test_08_final_relative_reward_retained_where_right_competent():
    """Median FRR over 5 seeds >= 0.8 on the same right-competent tasks."""
    lines = []
    for r in _summary_rows():
        assert r["median_frr"] != "", f"{r['task']}: FRR undefined"
        frr = float(r["median_frr"])
        assert frr >= 0.8, f"{r['task']}: median FRR {frr:.3f} < 0.8"
        lines.append(f"{r['task']} {frr:.2f}")
    print("\nPASS final relative reward: " + ", ".join(lines))


# ---------------------------------------------------------------- metric oracles

def _median(vals):
    s = sorted(vals)
    n = len(s)
    return s[n // 2] if n % 2 else 0.5 * (s[n // 2 - 1] + s[n // 2])


def test_09_metrics_match_sort_based_oracles():
    """IRR/FRR/rolling median vs brute-force oracles plus locality and scaling."""
    rng = np.random.default_rng(909)
    checked = 0
    for i in range(1000):
        n = int(rng.integers(2, 120))
        steps = np.cumsum(rng.integers(1, 5, size=n))
        total = int(steps[-1])
        a = rng.normal(loc=2.0, size=n) * (10.0 ** rng.integers(-2, 3))
        b = rng.normal(loc=2.0, size=n) * (10.0 ** rng.integers(-2, 3))
        k = int(rng.integers(steps[0], total + 1))  # first window nonempty
        w = metrics.MetricWindow(k, total)
        sa = metrics.RewardSeries(steps, a)
        sb = metrics.RewardSeries(steps, b)

        first = steps <= k
        last = steps >= total - k
        num, den = _median(a[first]), _median(b[first])
        got = metrics.irr(sa, sb, w)
        assert got.defined == (den > 0)
        if got.defined:
            assert abs(got.value - num / den) <= 1e-12 * abs(num / den)

        num2, den2 = _median(a[last]), _median(b[last])
        got2 = metrics.frr(sa, sb, w)
        assert got2.defined == (den2 > 0)
        if got2.defined:
            assert abs(got2.value - num2 / den2) <= 1e-12 * abs(num2 / den2)
        checked += 1

        if i < 300:  # trailing-window running median, brute force
            ws = int(rng.integers(1, 20))
            got_rm = metrics.rolling_median(sa, window_steps=ws)
            want_rm = np.array([
                _median([v for s, v in zip(steps, a) if steps[j] - ws < s <= steps[j]])
                for j in range(n)])
            assert np.array_equal(got_rm.rewards, want_rm)

        if i < 200:  # locality: values outside the window are irrelevant
            a2 = np.where(first, a, a + 1e6)
            g = metrics.irr(metrics.RewardSeries(steps, a2), sb, w)
            assert g.defined == got.defined
            if got.defined:
                assert g.value == got.value
            b2 = np.where(last, b, b - 1e6)
            g2 = metrics.frr(sa, metrics.RewardSeries(steps, b2), w)
            assert g2.defined == got2.defined
            if got2.defined:
                assert g2.value == got2.value

        if i < 200:  # covariance under common positive rescaling
            for c in (1e-3, 7.0, 1e6):
                g = metrics.irr(metrics.RewardSeries(steps, a * c),
                                metrics.RewardSeries(steps, b * c), w)
                assert g.defined == got.defined
                if got.defined:
                    assert abs(g.value - got.value) <= 1e-12 * abs(got.value)
    assert checked == 1000
    print("\nPASS metric oracles: 1000 random series vs sort-based oracles; "
          "window locality and scale covariance hold")


# ------------------------------------------------------------- determinism

_TINY_CONFIG = """\
[experiment]
global_seed = 3
seeds = 1
output_dir = ./out
agents = bihem,left_only

[meta]
tasks = reach,push
total_steps = 1600
episodes_per_trial = 2
lanes_per_update = 2
right_hidden = 16
right_only_hidden = 24
pool_seed = 1
episode_length = 40
epochs = 2

[main]
tasks = reach,push
total_steps = 800
eval_episodes = 2
hemisphere_hidden = 16
baseline_hidden = 24
pool_seed = 0
episode_length = 40
batch_episodes = 4
epochs = 2
learning_rate = 3e-4

[eval]
episodes = 4
batch_episodes = 4
agents = random
"""


def test_10_training_csvs_byte_identical_across_runs(tmp_path):
    """Same config text, two fresh runs: every training CSV matches byte for byte."""
    outs = []
    for name in ("first", "second"):
        root = tmp_path / name
        root.mkdir()
        cfg = root / "exp.ini"
        cfg.write_text(_TINY_CONFIG)
        assert cli.main(["meta-train", str(cfg)]) == 0
        assert cli.main(["main", str(cfg)]) == 0
        outs.append(root / "out")

    first = sorted(p.name for p in (outs[0] / "logs").glob("*.csv"))
    second = sorted(p.name for p in (outs[1] / "logs").glob("*.csv"))
    assert first == second and first, "runs produced different log sets"
    main_logs = [n for n in first if n.startswith("main_")]
    assert len(main_logs) == 4
    for name in first:
        b0 = (outs[0] / "logs" / name).read_bytes()
        b1 = (outs[1] / "logs" / name).read_bytes()
        assert b0 == b1, f"{name} differs between identical runs"
    print(f"\nPASS determinism: {len(main_logs)} training CSVs (and "
          f"{len(first) - len(main_logs)} meta logs) byte-identical across fresh runs")
