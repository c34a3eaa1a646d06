"""Two-stage experiment pipeline: meta-train, then per-task training and
baseline evaluation, with a pure report stage over the persisted CSVs.

Execution is organized in cells (stage x task x agent-kind x seed). Each
completed cell writes its artifacts and then a JSON run record; re-running
a stage skips recorded cells, so interrupted pipelines resume and repeat
invocations are no-ops. Cells are independent: distinct processes may run
disjoint cells against one output directory (use --only), coordination
happens only through the records. Within a process everything is
single-threaded and bit-deterministic for a fixed config.

Per-cell seeds are derived by hashing (global seed, stage, task,
agent-kind, seed-index), so any cell is reproducible in isolation.

The report stage is a pure view: summary CSVs and SVG figures are
computed from the logged CSVs alone, never from live training state.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .agent import BiHemisphericAgent, RandomAgent, SingleHemisphereAgent, \
    assign_params, make_baseline, right_values_from_checkpoint
from .config import ExperimentConfig
from .envs import ObsLayout, PointWorld, TASK_NAMES, make_task_spec, sample_subtask
from .errors import ConfigurationError, UsageError
from .metrics import MetricResult, MetricWindow, RewardSeries, frr, irr, \
    median_over_seeds, quadrant_label, rolling_median
from .nn import load_checkpoint, save_checkpoint
from .svgplot import Chart
from .training import PPOConfig, RewardNormalizer, adaptation_probe, \
    augmented_dim, collect_single, meta_train_rl2, train_bihem, train_single

MAIN_LOG_COLUMNS = ("step", "task", "seed", "agent_kind", "mean_reward_raw",
                    "success_rate", "median_p_left", "policy_loss", "value_loss",
                    "entropy", "penalty", "left_alone_mean_reward")
EVAL_LOG_COLUMNS = ("batch", "episodes", "task", "agent_kind", "mean_reward_raw",
                    "success_rate")
META_LOG_COLUMNS = ("step", "agent_kind", "mean_reward_raw",
                    "episode1_mean_reward", "episode_last_mean_reward",
                    "policy_loss", "value_loss", "entropy")

# Adaptation probe: fresh reach sub-task pool, disjoint by seed from the
# training pools; large so distinct held-out sub-tasks are plentiful.
PROBE_TASK = "reach"
PROBE_POOL_SEED = 9
PROBE_POOL_SIZE = 1024


def cell_seed(global_seed: int, stage: str, task: str, agent_kind: str,
              seed_index: int) -> int:
    """Stable 63-bit seed per cell; independent of process hash randomization."""
    key = f"{global_seed}|{stage}|{task}|{agent_kind}|{seed_index}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1


def _csv_cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_csv_cell(row.get(c, "")) for c in columns])


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@dataclass
class RunRecord:
    cell: str
    config_hash: str
    seed: int
    started: str
    finished: str = ""
    version: str = ""
    files: list[str] = field(default_factory=list)

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.__dict__, sort_keys=True, indent=1) + "\n")


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


class Runner:
    def __init__(self, cfg: ExperimentConfig, only: str = ""):
        self.cfg = cfg
        self.only = only
        self.out = Path(cfg.output_dir)
        self.logs = self.out / "logs"
        self.ckpts = self.out / "checkpoints"
        self.records = self.out / "records"
        self.report_dir = self.out / "report"
        self._hash = cfg.config_hash()
        self._version = f"hemirl-{__version__}+cfg.{self._hash[:12]}"

    # ---- cell bookkeeping ----------------------------------------------
    def _record_path(self, cell: str) -> Path:
        return self.records / f"{cell}.json"

    def _done(self, cell: str) -> bool:
        return self._record_path(cell).exists()

    def _skip(self, cell: str) -> bool:
        if self.only and self.only not in cell:
            return True
        if self._done(cell):
            print(f"[skip] {cell} (already recorded)")
            return True
        return False

    def _finish(self, cell: str, seed: int, started: str, files: list[Path]) -> None:
        rec = RunRecord(cell=cell, config_hash=self._hash, seed=seed,
                        started=started, finished=_now(), version=self._version,
                        files=[str(p.relative_to(self.out)) for p in files])
        rec.save(self._record_path(cell))
        print(f"[done] {cell}")

    def _write_experiment_manifest(self) -> None:
        payload = {
            "config_hash": self._hash,
            "version": self._version,
            "global_seed": self.cfg.global_seed,
            "seeds": self.cfg.seeds,
            "tasks": list(self.cfg.main.tasks),
            "agents": list(self.cfg.agents),
            "metric_window_fraction": self.cfg.metric_window_fraction,
            "main_total_steps": self.cfg.main.total_steps,
            "meta_total_steps": self.cfg.meta.total_steps,
            "eval_episodes": self.cfg.eval.episodes,
        }
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "experiment.json").write_text(
            json.dumps(payload, sort_keys=True, indent=1) + "\n")
        (self.out / "config.ini").write_text(self.cfg.source_text)

    # ---- meta stage ------------------------------------------------------
    def _right_ckpt_path(self, kind: str) -> Path:
        hidden = (self.cfg.meta.right_hidden if kind == "right"
                  else self.cfg.meta.right_only_hidden)
        return self.ckpts / f"{kind}_h{hidden}.npz"

    def run_meta(self) -> None:
        self._write_experiment_manifest()
        specs = [self.cfg.task_spec(t, "meta") for t in self.cfg.meta.tasks]
        obs_dim = augmented_dim(specs[0])
        for kind, hidden in (("right", self.cfg.meta.right_hidden),
                             ("right_only", self.cfg.meta.right_only_hidden)):
            cell = f"meta_{kind}"
            if self._skip(cell):
                continue
            started = _now()
            seed = cell_seed(self.cfg.global_seed, "meta", "pool", kind, 0)
            rng = np.random.default_rng(seed)
            agent = SingleHemisphereAgent(rng, obs_dim, hidden=hidden)
            log_path = self.logs / f"meta_{kind}.csv"
            ckpt_path = self._right_ckpt_path(kind)
            rows = meta_train_rl2(
                agent, specs, self.cfg.meta.ppo, self.cfg.meta.total_steps, rng,
                episodes_per_trial=self.cfg.meta.episodes_per_trial,
                lanes_per_update=self.cfg.meta.lanes_per_update,
                checkpoint_path=str(ckpt_path),
                on_update=_progress(cell))
            for r in rows:
                r["agent_kind"] = kind
            write_csv(log_path, META_LOG_COLUMNS, rows)
            self._finish(cell, seed, started, [log_path, ckpt_path])

    # ---- main stage ------------------------------------------------------
    def _load_right(self, kind: str) -> tuple[dict, dict]:
        path = self._right_ckpt_path(kind)
        if not path.exists():
            raise ConfigurationError(
                f"missing checkpoint {path}; run the meta-train stage first")
        return load_checkpoint(path)

    def run_main(self) -> None:
        self._write_experiment_manifest()
        train_kinds = [a for a in self.cfg.agents if a in ("bihem", "left_only")]
        for task in self.cfg.main.tasks:
            spec = self.cfg.task_spec(task, "main")
            obs_dim = augmented_dim(spec)
            ppo = self.cfg.ppo_for(task)
            for kind in train_kinds:
                for idx in range(self.cfg.seeds):
                    cell = f"main_{task}_{kind}_seed{idx}"
                    if self._skip(cell):
                        continue
                    started = _now()
                    seed = cell_seed(self.cfg.global_seed, "main", task, kind, idx)
                    rng = np.random.default_rng(seed)
                    if kind == "left_only":
                        agent = SingleHemisphereAgent(
                            rng, obs_dim, hidden=self.cfg.main.baseline_hidden)
                        rows = train_single(agent, spec, ppo,
                                            self.cfg.main.total_steps, rng,
                                            on_update=_progress(cell))
                    else:
                        values, meta = self._load_right("right")
                        if meta["hidden"] != self.cfg.main.hemisphere_hidden:
                            raise ConfigurationError(
                                f"checkpoint hidden size {meta['hidden']} != "
                                f"main.hemisphere_hidden {self.cfg.main.hemisphere_hidden}")
                        if meta["obs_dim"] != obs_dim:
                            raise ConfigurationError(
                                f"checkpoint observation dim {meta['obs_dim']} != "
                                f"main-stage dim {obs_dim}; meta and main layouts differ")
                        agent = BiHemisphericAgent(
                            rng, obs_dim, hidden=self.cfg.main.hemisphere_hidden,
                            penalty=self.cfg.penalty_for(task))
                        agent.load_right(right_values_from_checkpoint(values))
                        rows = train_bihem(agent, spec, ppo,
                                           self.cfg.main.total_steps, rng,
                                           eval_episodes=self.cfg.main.eval_episodes,
                                           on_update=_progress(cell))
                    for r in rows:
                        r["task"] = task
                        r["seed"] = idx
                        r["agent_kind"] = kind
                    log_path = self.logs / f"{cell}.csv"
                    write_csv(log_path, MAIN_LOG_COLUMNS, rows)
                    self._finish(cell, seed, started, [log_path])
        eval_kinds = [a for a in self.cfg.agents if a in ("right_only", "random")]
        if eval_kinds:
            self.run_eval(eval_kinds)

    # ---- eval stage ------------------------------------------------------
    def run_eval(self, kinds: list[str] | None = None) -> None:
        self._write_experiment_manifest()
        kinds = kinds if kinds is not None else self.cfg.eval.agents
        for task in self.cfg.main.tasks:
            spec = self.cfg.task_spec(task, "main")
            obs_dim = augmented_dim(spec)
            for kind in kinds:
                cell = f"eval_{task}_{kind}"
                if self._skip(cell):
                    continue
                started = _now()
                seed = cell_seed(self.cfg.global_seed, "eval", task, kind, 0)
                rng = np.random.default_rng(seed)
                if kind == "right_only":
                    values, _ = self._load_right("right_only")
                    agent = make_baseline("right_only", rng, obs_dim,
                                          right_checkpoint=values)
                elif kind == "random":
                    agent = make_baseline("random", rng, obs_dim)
                else:
                    raise ConfigurationError(
                        f"eval stage only evaluates non-learning baselines, got {kind!r}")
                rows = self._eval_batches(agent, kind, spec, rng)
                for r in rows:
                    r["task"] = task
                    r["agent_kind"] = kind
                log_path = self.logs / f"{cell}.csv"
                write_csv(log_path, EVAL_LOG_COLUMNS, rows)
                self._finish(cell, seed, started, [log_path])
        if self.cfg.eval.probe_trials > 0:
            self._run_probe()

    def _run_probe(self) -> None:
        """Within-trial adaptation probe of the frozen right hemisphere.

        Runs probe_trials full trials on a held-out reach sub-task pool and
        logs each trial's per-episode mean raw reward, one row per trial.
        """
        cell = "eval_adapt_right"
        if self._skip(cell):
            return
        if PROBE_POOL_SEED in (self.cfg.meta.pool_seed, self.cfg.main.pool_seed):
            raise ConfigurationError(
                f"pool seed {PROBE_POOL_SEED} is reserved for the adaptation "
                "probe; choose different meta/main pool seeds so the probe "
                "pool stays held out")
        started = _now()
        seed = cell_seed(self.cfg.global_seed, "eval", PROBE_TASK, "adapt_right", 0)
        rng = np.random.default_rng(seed)
        values, meta = self._load_right("right")
        slots = self.cfg.meta.task_slots
        layout = ObsLayout(slots, TASK_NAMES.index(PROBE_TASK) if slots > 0 else -1)
        spec = make_task_spec(PROBE_TASK, pool_seed=PROBE_POOL_SEED,
                              pool_size=PROBE_POOL_SIZE,
                              episode_length=self.cfg.meta.episode_length,
                              layout=layout)
        if int(meta["obs_dim"]) != augmented_dim(spec):
            raise ConfigurationError(
                f"checkpoint observation dim {meta['obs_dim']} != probe dim "
                f"{augmented_dim(spec)}; meta stage used a different layout")
        agent = SingleHemisphereAgent(rng, int(meta["obs_dim"]),
                                      hidden=int(meta["hidden"]))
        assign_params(agent.params(), values)
        episodes = int(meta["episodes_per_trial"])
        curve = adaptation_probe(
            agent, spec, self.cfg.eval.probe_trials, episodes, rng,
            on_chunk=lambda n: (n % 500 == 0 or n == self.cfg.eval.probe_trials)
            and print(f"  [{cell}] trial {n}", flush=True))
        cols = ("trial", "subtask_seed", "pool_seed", "pool_size") + tuple(
            f"ep{e + 1}" for e in range(episodes))
        rows = []
        for i in range(curve.per_trial.shape[1]):
            row = {"trial": i, "subtask_seed": int(curve.subtask_seeds[i]),
                   "pool_seed": PROBE_POOL_SEED, "pool_size": PROBE_POOL_SIZE}
            for e in range(episodes):
                row[f"ep{e + 1}"] = curve.per_trial[e, i]
            rows.append(row)
        log_path = self.logs / f"{cell}.csv"
        write_csv(log_path, cols, rows)
        self._finish(cell, seed, started, [log_path])

    def _eval_batches(self, agent, kind: str, spec, rng) -> list[dict]:
        """Sub-tasks sampled with replacement, summarized per batch."""
        rows = []
        remaining = self.cfg.eval.episodes
        batch_idx = 0
        while remaining > 0:
            b = min(remaining, self.cfg.eval.batch_episodes)
            if kind == "random":
                rewards = np.empty((spec.episode_length, b))
                succ = np.zeros(b, dtype=bool)
                for i in range(b):
                    env = PointWorld(spec)
                    env.reset(sample_subtask(spec, rng))
                    for t in range(spec.episode_length):
                        res = env.step(agent.act(rng, 1)[0])
                        rewards[t, i] = res.reward
                        succ[i] |= res.success
                mean_r, sr = float(rewards.mean()), float(succ.mean())
            else:
                roll = collect_single(agent, spec, b, rng,
                                      RewardNormalizer(enabled=False))
                mean_r, sr = roll.mean_reward_raw, roll.success_fraction
            rows.append({"batch": batch_idx, "episodes": b,
                         "mean_reward_raw": mean_r, "success_rate": sr})
            batch_idx += 1
            remaining -= b
        return rows

    # ---- report stage ----------------------------------------------------
    def run_report(self) -> None:
        report(self.out)


def _progress(cell: str):
    def cb(row: dict) -> None:
        step = row.get("step", "?")
        r = row.get("mean_reward_raw", float("nan"))
        print(f"  [{cell}] step {step} mean_reward {r:.3f}", flush=True)
    return cb


# ---- report over persisted artifacts -------------------------------------

def _series_from_rows(rows: list[dict], column: str, task: str, seed: int,
                      kind: str) -> RewardSeries:
    steps, vals = [], []
    for r in rows:
        v = r.get(column, "")
        if v == "":
            continue
        steps.append(int(r["step"]))
        vals.append(float(v))
    return RewardSeries(np.array(steps), np.array(vals), kind, task, seed)


def _weighted_eval_mean(rows: list[dict]) -> tuple[float, float]:
    eps = np.array([int(r["episodes"]) for r in rows], dtype=np.float64)
    rew = np.array([float(r["mean_reward_raw"]) for r in rows])
    succ = np.array([float(r["success_rate"]) for r in rows])
    return float((rew * eps).sum() / eps.sum()), float((succ * eps).sum() / eps.sum())


def report(output_dir: str | Path) -> int:
    """Summary CSVs + SVG figures from the logged artifacts; pure view.

    Missing cells are listed in report/gaps.txt and their rows skipped;
    the exit status is still success so partial pipelines can be inspected.
    """
    out = Path(output_dir)
    manifest_path = out / "experiment.json"
    if not manifest_path.exists():
        raise UsageError(
            f"{out} does not contain experiment.json; run a stage first")
    manifest = json.loads(manifest_path.read_text())
    tasks = manifest["tasks"]
    n_seeds = int(manifest["seeds"])
    frac = float(manifest["metric_window_fraction"])
    logs = out / "logs"
    rep = out / "report"
    rep.mkdir(parents=True, exist_ok=True)

    gaps: list[str] = []
    metric_rows: list[dict] = []
    summary_rows: list[dict] = []
    per_task_medians: dict[str, tuple[MetricResult, MetricResult]] = {}

    for task in tasks:
        per_seed: dict[int, dict[str, list[dict]]] = {}
        for kind in ("bihem", "left_only"):
            for idx in range(n_seeds):
                p = logs / f"main_{task}_{kind}_seed{idx}.csv"
                if not p.exists():
                    gaps.append(f"missing {p.relative_to(out)}")
                    continue
                per_seed.setdefault(idx, {})[kind] = read_csv(p)

        irr_vals: list[MetricResult] = []
        frr_vals: list[MetricResult] = []
        for idx in sorted(per_seed):
            cell = per_seed[idx]
            if "bihem" not in cell or "left_only" not in cell:
                continue
            bihem_s = _series_from_rows(cell["bihem"], "mean_reward_raw",
                                        task, idx, "bihem")
            left_s = _series_from_rows(cell["left_only"], "mean_reward_raw",
                                       task, idx, "left_only")
            try:
                left_alone_s = _series_from_rows(cell["bihem"],
                                                 "left_alone_mean_reward",
                                                 task, idx, "left_alone")
            except UsageError:
                gaps.append(f"{task} seed {idx}: no left-alone evaluation column")
                continue
            total = int(max(bihem_s.steps.max(), left_s.steps.max()))
            k = max(1, int(round(frac * total)))
            w = MetricWindow(k, total)
            i_res = irr(bihem_s, left_s, w)
            f_res = frr(left_alone_s, left_s, w)
            irr_vals.append(i_res)
            frr_vals.append(f_res)
            metric_rows.append({
                "task": task, "seed": idx,
                "irr": i_res.value if i_res.defined else "",
                "frr": f_res.value if f_res.defined else "",
                "irr_defined": i_res.defined, "frr_defined": f_res.defined,
            })
        eval_means = {}
        for kind in ("right_only", "random"):
            p = logs / f"eval_{task}_{kind}.csv"
            if p.exists():
                eval_means[kind] = _weighted_eval_mean(read_csv(p))
            else:
                gaps.append(f"missing {p.relative_to(out)}")
        if irr_vals:
            med_i = median_over_seeds(irr_vals)
            med_f = median_over_seeds(frr_vals)
            per_task_medians[task] = (med_i, med_f)
            ro = eval_means.get("right_only", (float("nan"),) * 2)
            rd = eval_means.get("random", (float("nan"),) * 2)
            competent = (np.isfinite(ro[0]) and np.isfinite(rd[0])
                         and ro[0] >= 2.0 * rd[0])
            summary_rows.append({
                "task": task,
                "median_irr": med_i.value if med_i.defined else "",
                "median_frr": med_f.value if med_f.defined else "",
                "quadrant": quadrant_label(med_i, med_f),
                "right_only_mean_reward": ro[0],
                "random_mean_reward": rd[0],
                "right_competent": competent,
                "seeds": len(irr_vals),
            })
        else:
            gaps.append(f"{task}: no complete (bihem, left_only) seed pairs")

        _plot_training_curves(rep, logs, out, task, n_seeds, frac, gaps)
        _plot_gating(rep, logs, out, task, n_seeds, gaps)

    write_csv(rep / "irr_frr.csv",
              ("task", "seed", "irr", "frr", "irr_defined", "frr_defined"),
              metric_rows)
    write_csv(rep / "summary.csv",
              ("task", "median_irr", "median_frr", "quadrant",
               "right_only_mean_reward", "random_mean_reward",
               "right_competent", "seeds"),
              summary_rows)
    _plot_strips(rep, tasks, metric_rows)
    _plot_quadrants(rep, summary_rows)
    (rep / "gaps.txt").write_text("".join(g + "\n" for g in gaps))
    if gaps:
        print(f"report: partial ({len(gaps)} gaps listed in report/gaps.txt)")
    else:
        print("report: complete")
    return 0


def _plot_training_curves(rep: Path, logs: Path, out: Path, task: str,
                          n_seeds: int, frac: float, gaps: list[str]) -> None:
    chart = Chart(f"training reward: {task}", "environment steps",
                  "mean raw reward (rolling median)")
    drew = False
    for kind, color in (("bihem", "#1f6fb4"), ("left_only", "#d1542c")):
        curves = []
        for idx in range(n_seeds):
            p = logs / f"main_{task}_{kind}_seed{idx}.csv"
            if not p.exists():
                continue
            rows = read_csv(p)
            s = _series_from_rows(rows, "mean_reward_raw", task, idx, kind)
            k = max(1, int(round(frac * int(s.steps.max()))))
            curves.append(rolling_median(s, k))
        if not curves:
            continue
        steps = curves[0].steps
        if not all(np.array_equal(c.steps, steps) for c in curves):
            gaps.append(f"{task} {kind}: seed step grids differ; curves unpooled")
            for c in curves:
                chart.add_line(f"{kind} s{c.seed}", c.steps, c.rewards)
            drew = True
            continue
        stack = np.stack([c.rewards for c in curves])
        chart.add_ribbon(steps, stack.min(axis=0), stack.max(axis=0), color=color)
        chart.add_line(kind, steps, np.median(stack, axis=0), color=color)
        drew = True
    if drew:
        chart.save(rep / f"train_curve_{task}.svg")


def _plot_gating(rep: Path, logs: Path, out: Path, task: str, n_seeds: int,
                 gaps: list[str]) -> None:
    chart = Chart(f"left-hemisphere gate: {task}", "environment steps",
                  "median P_left per update")
    curves = []
    for idx in range(n_seeds):
        p = logs / f"main_{task}_bihem_seed{idx}.csv"
        if not p.exists():
            continue
        rows = read_csv(p)
        try:
            curves.append(_series_from_rows(rows, "median_p_left", task, idx, "bihem"))
        except UsageError:
            continue
    if not curves:
        return
    steps = curves[0].steps
    if all(np.array_equal(c.steps, steps) for c in curves):
        stack = np.stack([c.rewards for c in curves])
        chart.add_ribbon(steps, stack.min(axis=0), stack.max(axis=0), color="#3d8f4e")
        chart.add_line("median over seeds", steps, np.median(stack, axis=0),
                       color="#3d8f4e")
    else:
        for c in curves:
            chart.add_line(f"seed {c.seed}", c.steps, c.rewards)
    chart.href_lines.append(0.5)
    chart.save(rep / f"gating_{task}.svg")


def _plot_strips(rep: Path, tasks: list[str], metric_rows: list[dict]) -> None:
    for metric in ("irr", "frr"):
        chart = Chart(f"{metric.upper()} per seed", "task index", metric.upper())
        xs, ys, texts = [], [], []
        for ti, task in enumerate(tasks):
            rows = [r for r in metric_rows if r["task"] == task and r[metric] != ""]
            for j, r in enumerate(rows):
                xs.append(ti + (j - (len(rows) - 1) / 2) * 0.08)
                ys.append(float(r[metric]))
                texts.append(task if j == 0 else "")
        if not xs:
            continue
        chart.add_points("", np.array(xs), np.array(ys), color="#1f6fb4",
                         texts=texts)
        chart.href_lines.append(1.0)
        chart.save(rep / f"{metric}_strip.svg")


def _plot_quadrants(rep: Path, summary_rows: list[dict]) -> None:
    rows = [r for r in summary_rows if r["median_irr"] != "" and r["median_frr"] != ""]
    if not rows:
        return
    chart = Chart("IRR vs FRR (per-task medians)", "median IRR", "median FRR")
    chart.add_points("", np.array([float(r["median_irr"]) for r in rows]),
                     np.array([float(r["median_frr"]) for r in rows]),
                     color="#8458a8", texts=[r["task"] for r in rows])
    chart.vref_lines.append(1.0)
    chart.href_lines.append(1.0)
    chart.save(rep / "irr_vs_frr.svg")
