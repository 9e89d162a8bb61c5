"""Command-line entry point covering the full pipeline.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Every run writes a ``<output>.manifest.json`` next to its outputs with the
package version, resolved parameters, a config hash, and the seed, so any
artifact can be regenerated from its manifest alone.
"""

from __future__ import annotations

import hashlib
import json
import math
import statistics
import sys
import time

import click
import numpy as np

EXIT_DATA_ERROR = 3
EXIT_NUMERIC_ERROR = 4


class DataError(click.ClickException):
    exit_code = EXIT_DATA_ERROR


class NumericError(click.ClickException):
    exit_code = EXIT_NUMERIC_ERROR


def _write_manifest(out_path: str, command: str, params: dict, seed: int | None) -> None:
    from importlib.metadata import version
    try:
        pkg_version = version("trafficweave")
    except Exception:
        pkg_version = "unknown"
    payload = {"command": command, "package_version": pkg_version,
               "seed": seed, "params": params}
    payload["config_hash"] = hashlib.sha256(
        json.dumps(params, sort_keys=True).encode()).hexdigest()
    with open(out_path + ".manifest.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def _load_trials(path: str):
    from .trialio import TrialFormatError, import_trials
    try:
        return import_trials(path)
    except FileNotFoundError as e:
        raise DataError(f"trial file not found: {path}") from e
    except TrialFormatError as e:
        raise DataError(str(e)) from e


def _load_model(path: str):
    from .model import BehaviorModel, ModelIOError
    try:
        return BehaviorModel.load(path)
    except FileNotFoundError as e:
        raise DataError(f"model file not found: {path}") from e
    except ModelIOError as e:
        raise DataError(str(e)) from e


def _dataset_from_trials(trials):
    from .synth import slice_exemplars
    from .training import ExemplarDataset
    exemplars, trial_ids = [], []
    for trial in trials:
        for ex in slice_exemplars(trial):
            exemplars.append(ex)
            trial_ids.append(trial.id)
    return ExemplarDataset(exemplars=exemplars, trial_ids=trial_ids)


@click.group()
@click.option("--threads", type=int, default=1, show_default=True,
              help="Cap on worker threads for numeric libraries.")
def main(threads: int) -> None:
    """Multimodal driver prediction and sampling-based robot planning."""
    import torch
    torch.set_num_threads(max(1, threads))
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=max(1, threads))
    except ImportError:
        pass


@main.command("gen-data")
@click.option("--trials", "n_trials", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def gen_data(n_trials: int, seed: int, out_path: str) -> None:
    """Generate scripted lane-swap trials and write them as a trial file."""
    from .synth import generate_dataset
    from .trialio import export_trials
    trials = generate_dataset(n_trials, seed)
    export_trials(trials, out_path)
    outcomes: dict[str, int] = {}
    for t in trials:
        outcomes[t.outcome] = outcomes.get(t.outcome, 0) + 1
    _write_manifest(out_path, "gen-data",
                    {"trials": n_trials, "seed": seed}, seed)
    click.echo(f"wrote {len(trials)} trials to {out_path}; outcomes: "
               + json.dumps(outcomes, sort_keys=True))


@main.command("train")
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--epochs", type=int, default=20, show_default=True)
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--learning-rate", type=float, default=3e-3, show_default=True)
@click.option("--hidden", type=int, default=32, show_default=True)
@click.option("--preset", type=click.Choice(["full", "basic"]), default="full",
              show_default=True,
              help="'basic' ablation drops the latent and mixture structure.")
def train_cmd(data_path: str, out_path: str, seed: int, epochs: int,
              batch_size: int, learning_rate: float, hidden: int,
              preset: str) -> None:
    """Fit the behavior model on a trial file by exact maximum likelihood."""
    from .model import LatentSpec, ModelConfig
    from .training import TrainConfig, train, write_metrics_csv
    dataset = _dataset_from_trials(_load_trials(data_path))
    if len(dataset) == 0:
        raise DataError("no exemplars could be sliced from the trial file")
    if preset == "basic":
        model_config = ModelConfig(latent=LatentSpec(n_z=1, k_z=1),
                                   m_gmm=1, hidden=hidden)
    else:
        model_config = ModelConfig(hidden=hidden)
    result = train(dataset, model_config,
                   TrainConfig(epochs=epochs, batch_size=batch_size,
                               learning_rate=learning_rate, seed=seed))
    result.model.save(out_path)
    write_metrics_csv(result.curve, out_path + ".metrics.csv")
    _write_manifest(out_path, "train",
                    {"data": data_path, "seed": seed, "epochs": epochs,
                     "batch_size": batch_size, "learning_rate": learning_rate,
                     "hidden": hidden, "preset": preset}, seed)
    final = result.curve[-1]
    click.echo(f"trained {preset} model on {len(dataset)} exemplars; "
               f"final val NLL {final.val_nll:.4f} -> {out_path}")
    if result.diverged:
        raise NumericError("training diverged (non-finite loss); "
                           "last finite checkpoint was saved")


@main.command("eval-nll")
@click.option("--model", "model_paths", type=click.Path(), multiple=True,
              required=True, help="Repeatable for side-by-side comparison.")
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def eval_nll(model_paths: tuple[str, ...], data_path: str,
             out_path: str | None) -> None:
    """Mean exact NLL of one or more models on a trial file."""
    dataset = _dataset_from_trials(_load_trials(data_path))
    if len(dataset) == 0:
        raise DataError("dataset is empty: no exemplars to evaluate")
    rows = []
    for path in model_paths:
        model = _load_model(path)
        if model.config.horizon != len(dataset.exemplars[0][1].actions):
            raise DataError(
                f"horizon mismatch: model {path} expects "
                f"{model.config.horizon} future steps")
        import torch
        per_ex = []
        with torch.no_grad():
            for start in range(0, len(dataset), 256):
                batch = model.pack_batch(dataset.exemplars[start:start + 256])
                per_ex.extend((-model.batch_log_likelihood(batch)).tolist())
        if not all(math.isfinite(v) for v in per_ex):
            raise NumericError(f"non-finite NLL from model {path}")
        mean = statistics.fmean(per_ex)
        stderr = (statistics.stdev(per_ex) / math.sqrt(len(per_ex))
                  if len(per_ex) > 1 else 0.0)
        rows.append({"model": path, "mean_nll": mean, "stderr": stderr,
                     "n": len(per_ex), "per_exemplar": per_ex})
        click.echo(f"{path}: mean NLL {mean:.4f} +/- {stderr:.4f} "
                   f"({len(per_ex)} exemplars)")
    if out_path:
        with open(out_path, "w") as f:
            json.dump({"v": 1, "data": data_path, "models": rows}, f)
        _write_manifest(out_path, "eval-nll",
                        {"models": list(model_paths), "data": data_path}, None)


@main.command("plot-predictions")
@click.option("--model", "model_path", type=click.Path(), required=True)
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--trial-id", default=None, help="Defaults to the first trial.")
@click.option("--t", "t_index", type=int, default=0, show_default=True)
@click.option("--samples", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def plot_predictions(model_path: str, data_path: str, trial_id: str | None,
                     t_index: int, samples: int, seed: int, out_path: str) -> None:
    """Emit renderer-agnostic plot data: sampled action fans by latent class,
    the true human future, and the conditioning robot future."""
    from .features import ConditioningInput, HumanFuture, human_future_array, \
        robot_future_array
    from .sampler import FastSampler
    model = _load_model(model_path)
    trials = _load_trials(data_path)
    if trial_id is not None:
        trials = [t for t in trials if t.id == trial_id]
        if not trials:
            raise DataError(f"trial {trial_id!r} not found in {data_path}")
    trial = trials[0]
    n = model.config.horizon
    if t_index < 0 or t_index > len(trial.actions) - n - 1:
        raise DataError(
            f"t={t_index} leaves fewer than {n} future steps in trial "
            f"{trial.id} ({len(trial.actions)} actions)")
    future = trial.actions[t_index + 1: t_index + 1 + n]
    x = ConditioningInput(
        history_states=trial.trajectory[: t_index + 1],
        history_actions=trial.actions[: t_index + 1],
        robot_future=[u_r for _, u_r in future],
    )
    truth = human_future_array(HumanFuture([u_h for u_h, _ in future]))
    payload = {
        "v": 1, "trial": trial.id, "t": t_index, "horizon": n,
        "history": [[s.human.s, s.human.tau, s.human.s_dot, s.human.tau_dot]
                    for s in x.history_states],
        "true_future_actions": truth.tolist(),
        "robot_future_actions": robot_future_array(x.robot_future).tolist(),
        "samples": [],
    }
    if samples > 0:
        sampler = FastSampler(model)
        actions, z = sampler.sample_futures(x, samples, seed)
        payload["samples"] = [
            {"latent_class": int(z[i]), "actions": actions[i].tolist()}
            for i in range(samples)
        ]
    with open(out_path, "w") as f:
        json.dump(payload, f)
    _write_manifest(out_path, "plot-predictions",
                    {"model": model_path, "data": data_path, "trial": trial.id,
                     "t": t_index, "samples": samples, "seed": seed}, seed)
    click.echo(f"wrote {samples} sampled futures for trial {trial.id} @t={t_index} "
               f"to {out_path}")


@main.command("plan-bench")
@click.option("--model", "model_path", type=click.Path(), required=True)
@click.option("--repetitions", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def plan_bench(model_path: str, repetitions: int, seed: int,
               out_path: str | None) -> None:
    """Time full planning cycles on a fixed state; report the soft deadline."""
    if repetitions < 1:
        raise click.UsageError("repetitions must be >= 1")
    from . import kernels
    from .dynamics import DEFAULT_ROAD, HumanState, JointState, RobotState
    from .episode import PLAN_DEADLINE_S
    from .features import step_features
    from .dynamics import HumanAction, RobotAction
    from .planner import PlannerConfig, bootstrap_window, plan_cycle
    from .sampler import FastSampler
    sampler = FastSampler(_load_model(model_path))
    road = DEFAULT_ROAD
    x0 = JointState(
        human=HumanState(s=-120.0, tau=road.left_lane_center_tau, s_dot=29.0,
                         tau_dot=0.0),
        robot=RobotState(s=-125.0, tau=road.right_lane_center_tau, s_dot=30.0,
                         tau_dot=0.0, tau_ddot=0.0))
    hist = step_features(x0, HumanAction(0, 0), RobotAction(0, 0))[None]
    fixed = bootstrap_window(x0.robot, road)
    cfg = PlannerConfig()
    totals, stage1, stage2 = [], [], []
    result = None
    for rep in range(repetitions):
        result = plan_cycle(sampler, hist, np.zeros(2), x0, fixed,
                            road.left_lane_center_tau, seed + rep, cfg, road)
        totals.append(result.timing_ms["total"])
        stage1.append(result.timing_ms["stage1"])
        stage2.append(result.timing_ms["stage2"])
    totals_s = sorted(totals)
    median = totals_s[len(totals_s) // 2]
    p95 = totals_s[min(len(totals_s) - 1, math.ceil(0.95 * len(totals_s)) - 1)]
    rollouts = cfg.n_plans * cfg.stage1_samples + cfg.top_k * cfg.stage2_samples
    report = {
        "v": 1, "backend": kernels.BACKEND, "repetitions": repetitions,
        "plans_per_cycle": cfg.n_plans,
        "rollouts_per_cycle": rollouts,
        "cycle_ms": {"median": median, "p95": p95, "all": totals},
        "stage1_ms_mean": statistics.fmean(stage1),
        "stage2_ms_mean": statistics.fmean(stage2),
        "rollouts_per_second": rollouts / (statistics.fmean(totals) / 1e3),
        "deadline_ms": PLAN_DEADLINE_S * 1e3,
        "meets_deadline": p95 <= PLAN_DEADLINE_S * 1e3,
    }
    click.echo(f"backend={kernels.BACKEND} plans={cfg.n_plans} "
               f"rollouts/cycle={rollouts}")
    click.echo(f"cycle: median {median:.1f} ms, p95 {p95:.1f} ms "
               f"({report['rollouts_per_second']:.0f} rollouts/s); "
               f"0.3 s deadline {'holds' if report['meets_deadline'] else 'missed'}")
    if out_path:
        with open(out_path, "w") as f:
            json.dump(report, f, indent=2)
        _write_manifest(out_path, "plan-bench",
                        {"model": model_path, "repetitions": repetitions,
                         "seed": seed}, seed)


@main.command("batch-eval")
@click.option("--model", "model_path", type=click.Path(), required=True)
@click.option("--episodes", type=int, default=10, show_default=True,
              help="Episodes per initial-condition cell.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--intent", type=click.Choice(["yield", "assert", "sampled"]),
              default="sampled", show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def batch_eval(model_path: str, episodes: int, seed: int, workers: int,
               intent: str, out_path: str) -> None:
    """Robot-vs-scripted-human statistics over the 9-cell IC grid."""
    from .episode import EpisodeConfig, ScriptedHumanSpec, batch_evaluate
    from .synth import InitialCondition, ScriptedDriverParams
    _load_model(model_path)  # validate early
    params = ScriptedDriverParams(
        intent=None if intent == "sampled" else intent)
    configs = []
    for dv in (0.0, 2.0, -2.0):
        t_cos = (1.0, 2.0, 3.0) if dv != 0.0 else (0.0,)
        for t_co in t_cos:
            # Robot in the right lane targeting left; human fast when dv>0.
            configs.append(EpisodeConfig(
                ic=InitialCondition(fast_car_lane="left", delta_v=dv, t_co=t_co),
                human_source=ScriptedHumanSpec(params=params),
                robot_target_lane="left"))
    # 1 + 3 + 3 = 7 cells from the loop above; two fast-car-right cells
    # complete a 9-cell grid.
    configs.append(EpisodeConfig(
        ic=InitialCondition(fast_car_lane="right", delta_v=2.0, t_co=2.0),
        human_source=ScriptedHumanSpec(params=params),
        robot_target_lane="left"))
    configs.append(EpisodeConfig(
        ic=InitialCondition(fast_car_lane="right", delta_v=-2.0, t_co=2.0),
        human_source=ScriptedHumanSpec(params=params),
        robot_target_lane="left"))
    report = batch_evaluate(configs, episodes, seed, model_path, workers)
    report["intent"] = intent
    with open(out_path, "w") as f:
        json.dump(report, f, indent=2)
    _write_manifest(out_path, "batch-eval",
                    {"model": model_path, "episodes": episodes, "seed": seed,
                     "workers": workers, "intent": intent}, seed)
    click.echo(f"wrote batch report ({len(configs)} cells x {episodes} episodes) "
               f"to {out_path}")


@main.command("serve")
@click.option("--model-dir", type=click.Path(), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8700, show_default=True)
def serve(model_dir: str, host: str, port: int) -> None:
    """Run the real-time simulation service."""
    import uvicorn
    from .server import create_app
    uvicorn.run(create_app(model_dir), host=host, port=port, log_level="info")


@main.command("replay")
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--trial-id", default=None, help="Defaults to the first trial.")
@click.option("--tolerance", type=float, default=1e-9, show_default=True)
def replay(data_path: str, trial_id: str | None, tolerance: float) -> None:
    """Re-integrate a logged trial through the dynamics and verify it."""
    from .dynamics import DEFAULT_ROAD, rollout_joint
    trials = _load_trials(data_path)
    if trial_id is not None:
        trials = [t for t in trials if t.id == trial_id]
        if not trials:
            raise DataError(f"trial {trial_id!r} not found in {data_path}")
    if not trials:
        raise DataError(f"no trials in {data_path}")
    trial = trials[0]
    u_h = [a for a, _ in trial.actions]
    u_r = [a for _, a in trial.actions]
    redone = rollout_joint(trial.trajectory[0], u_h, u_r, DEFAULT_ROAD.dt)
    worst = 0.0
    for logged, again in zip(trial.trajectory, redone):
        worst = max(
            worst,
            abs(logged.human.s - again.human.s),
            abs(logged.human.tau - again.human.tau),
            abs(logged.human.s_dot - again.human.s_dot),
            abs(logged.human.tau_dot - again.human.tau_dot),
            abs(logged.robot.s - again.robot.s),
            abs(logged.robot.tau - again.robot.tau),
            abs(logged.robot.s_dot - again.robot.s_dot),
            abs(logged.robot.tau_dot - again.robot.tau_dot),
            abs(logged.robot.tau_ddot - again.robot.tau_ddot),
        )
    click.echo(f"trial {trial.id}: {len(trial.actions)} steps, "
               f"outcome {trial.outcome}, max re-integration error {worst:.3e}")
    if worst > tolerance:
        raise NumericError(
            f"re-integrated states deviate by {worst:.3e} > {tolerance:.0e}")


if __name__ == "__main__":
    main()
