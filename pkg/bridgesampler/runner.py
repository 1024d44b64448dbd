# MIT License
#
# Copyright (c) 2019 Tuomas Halvari, Juha Harviainen, Juha Mylläri, Antti Röyskö, Juuso Silvennoinen
#
# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:
#
# The above copyright notice and this permission notice shall be included in all
# copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
# SOFTWARE.

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import Pool
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

import bridgesampler
from bridgesampler.bridge import build_bridge, joint_entropy_closed_form, simulate_forward, simulate_reverse
from bridgesampler.config import RunConfig
from bridgesampler.exceptions import ConfigurationError, EstimationError
from bridgesampler.losses import BatchConfig, divergence_diagnostics, grad_lv, grad_rkl_ld, grad_rkl_r, lv_loss_value
from bridgesampler.metrics import elbo, reference_baselines, sample_metrics
from bridgesampler.networks import parameters_from_json, parameters_to_json
from bridgesampler.optim import OptimizerState, lr_schedule, optimizer_step
from bridgesampler.targets import dump_samples, make_target
from bridgesampler.utils import filter_optimized_results, read_json, worker_pool, write_json

logger = logging.getLogger(__name__)

EVAL_STREAM_OFFSET = 2 ** 32
SAMPLE_STREAM_OFFSET = 2 ** 33
INTERPOLATION_COMPONENTS = ("schedule", "prior", "diffusion")
METRIC_COLUMNS = ["iteration", "metric", "value", "stderr", "flag"]


@dataclass
class RunManifest:
    """The record of a training run.

    Attributes:
        config (dict): The resolved configuration.
        version (str): Version of the package that produced the run.
        rows (list): Metric rows (iteration, metric, value, stderr, flag) of every evaluation.
        final (dict): Final metrics, computed from the best snapshot if the run diverged.
        diverged (bool): Whether the run diverged.
        divergence_iteration (int): Iteration at which divergence was detected, or None.
        divergence_reason (str): Which criterion detected the divergence, or None.
        best_elbo (float): Best evaluated ELBO.
        best_iteration (int): Iteration of the best evaluated ELBO.
        skipped_steps (int): Number of updates skipped because of non-finite gradients.
        iteration (int): Number of completed optimizer steps.
        wall_clock (float): Seconds spent in train.
        files (dict): Paths of the files written by the run.
    """
    config: dict
    version: str
    rows: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    diverged: bool = False
    divergence_iteration: int = None
    divergence_reason: str = None
    best_elbo: float = None
    best_iteration: int = None
    skipped_steps: int = 0
    iteration: int = 0
    wall_clock: float = 0.0
    files: dict = field(default_factory=dict)

    @property
    def metrics(self):
        return pd.DataFrame(self.rows, columns=METRIC_COLUMNS)

    def metric(self, name):
        """Returns the rows of one metric as a dataframe indexed by iteration."""
        df = self.metrics
        return df[df["metric"] == name].set_index("iteration")

    def to_dict(self):
        return asdict(self)


def learning_rates(params, config):
    """The base learning rate of every learnable parameter: interpolation_lr for the schedule, prior and
    diffusion coefficients, lr for the networks.
    """
    return {
        param_id: config.interpolation_lr if param_id.split(".")[0] in INTERPOLATION_COMPONENTS else config.lr
        for param_id in params.learnable_ids
    }


def build_run(config):
    """Builds the target and the initial bridge of a configuration.

    Returns:
        tuple: The target and the bridge.
    """
    target = make_target(config.target)
    params = build_bridge(config.parameterization, target.dim, config.T, np.random.RandomState(config.seed),
                          sigma_init=config.sigma_init, prior_mean=config.prior_mean,
                          prior_std=config.prior_std_init, learn_sigma=config.learn_sigma,
                          learn_prior=config.learn_prior)
    return target, params


def estimate_gradient(config, params, target, iteration, pool=None):
    """Simulates the batch of an iteration and estimates the gradient of the configured loss.

    Returns:
        GradReport: The gradient blocks.
    """
    if config.loss == "rkl_r":
        batch_config = BatchConfig(config.batch_size, config.seed, stream=iteration, chunk_size=config.chunk_size)
        return grad_rkl_r(params, target, batch_config, pool)
    if config.loss == "lv" and config.proposal == "forward":
        batch = simulate_forward(params, target, config.batch_size, config.seed, iteration, pool, config.chunk_size)
        return grad_lv(batch, params, "forward", pool)
    batch = simulate_reverse(params, target, config.batch_size, config.seed, iteration, pool, config.chunk_size)
    if config.loss == "lv":
        return grad_lv(batch, params, "on_policy", pool)
    return grad_rkl_ld(batch, params, pool=pool)


def evaluate(params, target, config, iteration, reference=None, pool=None):
    """Evaluates a bridge on fresh paths from the evaluation stream of an iteration.

    Args:
        params (BridgeParams): The bridge.
        target (TargetDensity): The target.
        config (RunConfig): The run configuration.
        iteration (int): The iteration, which selects the noise streams.
        reference (numpy.ndarray, optional): Exact target samples. If given, the sample-based metrics are
            computed too. Defaults to None.
        pool (multiprocessing.pool.ThreadPool, optional): Pool for the simulation. Defaults to None.

    Returns:
        list: Metric rows (iteration, metric, value, stderr, flag).
    """
    batch = simulate_reverse(params, target, config.eval_paths, config.seed, EVAL_STREAM_OFFSET + iteration, pool,
                             config.chunk_size)
    value, stderr = elbo(batch)
    rows = [
        (iteration, "elbo", value, stderr, ""),
        (iteration, "entropy", joint_entropy_closed_form(params), np.nan, ""),
        (iteration, "lv_loss", lv_loss_value(batch), np.nan, ""),
        (iteration, "n_invalid", batch.n_invalid, np.nan, ""),
    ]
    try:
        diagnostics = divergence_diagnostics(batch, target.log_z if target.log_z_known else None)
    except EstimationError as e:
        logger.debug(f"No divergence diagnostics at iteration {iteration}: {e}")
    else:
        rows.append((iteration, "jeffrey", diagnostics["jeffrey"], np.nan, ""))
        rows.append((iteration, "nis_ess", diagnostics["ess"], np.nan, ""))
        for name in ("rkl", "fkl"):
            if diagnostics[name] is not None:
                rows.append((iteration, name, diagnostics[name], np.nan, ""))
    if reference is not None:
        samples = simulate_reverse(params, target, config.metric_samples, config.seed,
                                   SAMPLE_STREAM_OFFSET + iteration, pool, config.chunk_size).samples
        result = sample_metrics(samples, target, reference, config.sinkhorn_epsilon)
        flag = "" if result["sinkhorn_converged"] else "unconverged"
        rows.append((iteration, "sinkhorn", result["sinkhorn"], np.nan, flag))
        rows.append((iteration, "mmd", result["mmd"], np.nan, ""))
        if "emc" in result:
            rows.append((iteration, "emc", result["emc"], np.nan, ""))
    return [(int(i), m, float(v), float(s), f) for i, m, v, s, f in rows]


def _rows_value(rows, metric, column=2):
    for row in rows:
        if row[1] == metric:
            return row[column]
    return None


def _check_divergence(rows, best_elbo, config):
    value = _rows_value(rows, "elbo")
    if value is None or not np.isfinite(value):
        return "non-finite ELBO"
    if best_elbo is not None and value < best_elbo - config.divergence_drop:
        return f"ELBO dropped more than {config.divergence_drop} nats below its best value"
    return None


def _checkpoint(config, params, state, iteration, best, rows):
    return {
        "config": config.to_dict(),
        "version": bridgesampler.__version__,
        "iteration": iteration,
        "params": parameters_to_json(params.values()),
        "optimizer": state.to_json(),
        "best_elbo": best["elbo"],
        "best_iteration": best["iteration"],
        "best_params": parameters_to_json(best["values"]),
        "rows": [list(row) for row in rows],
    }


def load_checkpoint(path):
    """Reads a checkpoint and rebuilds its bridge.

    Returns:
        dict: The checkpoint with "config" as a RunConfig, "target", "params", "optimizer" as an
        OptimizerState and "best_params" as a mapping of arrays.
    """
    checkpoint = read_json(path)
    try:
        config = RunConfig.from_dict(checkpoint["config"])
        target, params = build_run(config)
        params.update(parameters_from_json(checkpoint["params"]))
        checkpoint.update(config=config, target=target, params=params,
                          optimizer=OptimizerState.from_json(checkpoint["optimizer"]),
                          best_params=parameters_from_json(checkpoint["best_params"]),
                          rows=[tuple(row) for row in checkpoint["rows"]])
    except KeyError as e:
        raise ConfigurationError(f"The checkpoint {path} is missing the key {e}.") from e
    return checkpoint


def restore_bridge(path):
    """Returns the configuration, target and trained bridge stored in a checkpoint."""
    checkpoint = load_checkpoint(path)
    return checkpoint["config"], checkpoint["target"], checkpoint["params"]


def _reference_samples(target, config):
    if not target.has_sampler:
        return None
    return target.sample(config.metric_samples, np.random.RandomState(config.seed + 2))


def _sample_metrics_due(config, iteration):
    return config.sample_metrics_every > 0 and iteration % config.sample_metrics_every == 0


def train(config=None, out_dir=None, progress=True, pool=None, resume=None, stop_after=None):
    """Trains a bridge sampler.

    Every iteration simulates a batch from its own noise stream, estimates the gradient of the configured
    loss and applies a rectified Adam step with a cosine learning rate schedule. The bridge is evaluated
    every eval_every iterations and after the last one.

    A run diverges when the ELBO is not finite, drops more than divergence_drop nats below its best value,
    or when max_nan_steps consecutive updates are skipped. A diverged run stops, and its final metrics
    are computed from the parameters with the best ELBO.

    Args:
        config (RunConfig, optional): The configuration. Defaults to the configuration of the checkpoint.
        out_dir (str, optional): Directory for metrics.csv, manifest.json and checkpoint.json. Nothing is
            written if None. Defaults to None.
        progress (bool, optional): Show a progress bar. Defaults to True.
        pool (multiprocessing.pool.ThreadPool, optional): Pool for simulation and gradients. Defaults to a
            pool sized by BRIDGESAMPLER_NUM_THREADS.
        resume (str, optional): Checkpoint to continue from. Defaults to None.
        stop_after (int, optional): Stop after this many completed iterations, leaving a checkpoint to resume
            from. Defaults to None.

    Returns:
        RunManifest: The record of the run.
    """
    if pool is None:
        with worker_pool() as own_pool:
            return _train(config, out_dir, progress, own_pool, resume, stop_after)
    return _train(config, out_dir, progress, pool, resume, stop_after)


def _train(config, out_dir, progress, pool, resume, stop_after):
    time_start = time.time()
    if resume is not None:
        checkpoint = load_checkpoint(resume)
        if config is not None and config != checkpoint["config"]:
            raise ConfigurationError("The configuration differs from the one stored in the checkpoint.")
        config, target, params = checkpoint["config"], checkpoint["target"], checkpoint["params"]
        state, start, rows = checkpoint["optimizer"], checkpoint["iteration"], list(checkpoint["rows"])
        best = {"elbo": checkpoint["best_elbo"], "iteration": checkpoint["best_iteration"],
                "values": checkpoint["best_params"]}
        logger.info(f"Resuming from {resume} at iteration {start}")
    else:
        if config is None:
            raise ConfigurationError("Either a configuration or a checkpoint to resume from is needed.")
        target, params = build_run(config)
        state, start, rows = OptimizerState(), 0, []
        best = {"elbo": None, "iteration": None, "values": params.values()}
    end = config.iterations if stop_after is None else min(stop_after, config.iterations)
    reference = _reference_samples(target, config)
    base_lrs = learning_rates(params, config)
    manifest = RunManifest(config=config.to_dict(), version=bridgesampler.__version__)
    logger.info(f"Training {params} on {target} with {config.loss}, iterations {start} to {end}")

    def run_evaluation(iteration, with_samples):
        try:
            new_rows = evaluate(params, target, config, iteration, reference if with_samples else None, pool)
        except EstimationError as e:
            logger.warning(f"Evaluation at iteration {iteration} failed: {e}")
            return "no valid evaluation paths"
        rows.extend(new_rows)
        reason = _check_divergence(new_rows, best["elbo"], config)
        value = _rows_value(new_rows, "elbo")
        if reason is None and (best["elbo"] is None or value > best["elbo"]):
            best.update(elbo=value, iteration=iteration, values=params.values())
        return reason

    reason = None
    iteration = start
    bar = tqdm(range(start, end), initial=start, total=config.iterations, disable=not progress)
    for iteration in bar:
        if iteration % config.eval_every == 0:
            reason = run_evaluation(iteration, _sample_metrics_due(config, iteration))
            if reason is not None:
                break
            bar.set_postfix(elbo=f"{best['elbo']:.3f}")
        try:
            report = estimate_gradient(config, params, target, iteration, pool)
            grads = report.gradients()
        except EstimationError as e:
            logger.warning(f"Iteration {iteration}: {e}")
            grads = {param_id: np.full_like(value, np.nan) for param_id, value in params.learnable_values().items()}
        lrs = {param_id: lr_schedule(iteration, config.iterations, base) for param_id, base in base_lrs.items()}
        params.update(optimizer_step(params.learnable_values(), grads, state, lrs, max_norm=config.max_grad_norm))
        if state.consecutive_skips >= config.max_nan_steps:
            reason = f"{state.consecutive_skips} consecutive non-finite gradients"
            iteration += 1
            break
    else:
        iteration = end
        if end == config.iterations and not any(row[0] == end for row in rows):
            reason = run_evaluation(end, reference is not None)
    bar.close()

    if reason is not None:
        logger.warning(f"Run diverged at iteration {iteration}: {reason}")
        manifest.diverged, manifest.divergence_iteration, manifest.divergence_reason = True, iteration, reason
        params.update(best["values"])
        try:
            final_rows = evaluate(params, target, config, config.iterations, reference, pool)
        except EstimationError as e:
            logger.warning(f"The best snapshot cannot be evaluated: {e}")
            final_rows = []
    else:
        final_rows = [row for row in rows if row[0] == iteration]
    manifest.final = {row[1]: row[2] for row in final_rows}
    if reference is not None and (manifest.diverged or iteration == config.iterations):
        baselines = reference_baselines(target, config.metric_samples, config.seed + 3, config.sinkhorn_epsilon)
        manifest.final.update({f"{name}_baseline": value for name, value in baselines.items()})

    manifest.rows = rows
    manifest.iteration = iteration
    manifest.best_elbo, manifest.best_iteration = best["elbo"], best["iteration"]
    manifest.skipped_steps = state.skipped
    manifest.wall_clock = round(time.time() - time_start, 3)
    if out_dir is not None:
        _write_run(out_dir, manifest, _checkpoint(config, params, state, iteration, best, rows))
    return manifest


def _write_run(out_dir, manifest, checkpoint):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest.files = {
        "metrics": str(out_dir / "metrics.csv"),
        "manifest": str(out_dir / "manifest.json"),
        "checkpoint": str(out_dir / "checkpoint.json"),
    }
    manifest.metrics.to_csv(manifest.files["metrics"], index=False)
    write_json(manifest.files["checkpoint"], checkpoint)
    write_json(manifest.files["manifest"], manifest.to_dict())
    logger.info(f"Wrote the run to {out_dir}")


def evaluate_checkpoint(path, target_name=None, n_samples=None, seed=None, pool=None):
    """Evaluates a trained bridge against its target.

    Args:
        path (str): The checkpoint.
        target_name (str, optional): Name of the target; must match the trained one. Defaults to it.
        n_samples (int, optional): Number of evaluation paths and samples. Defaults to the configured counts.
        seed (int, optional): Seed of the evaluation. Defaults to the seed of the run.
        pool (multiprocessing.pool.ThreadPool, optional): Pool for the simulation. Defaults to None.

    Returns:
        dict: Metric name to value; "elbo_stderr" holds the standard error of the ELBO.
    """
    config, target, params = restore_bridge(path)
    if target_name is not None and target_name != target.name:
        raise ConfigurationError(f"The checkpoint was trained on '{target.name}', not on '{target_name}'.")
    overrides = {}
    if n_samples is not None:
        overrides.update(eval_paths=n_samples, metric_samples=n_samples)
    if seed is not None:
        overrides.update(seed=seed)
    config = replace(config, **overrides)
    rows = evaluate(params, target, config, config.iterations, _reference_samples(target, config), pool)
    result = {row[1]: row[2] for row in rows}
    result["elbo_stderr"] = _rows_value(rows, "elbo", column=3)
    return result


def sample_checkpoint(path, n, out, seed=None, pool=None):
    """Draws n samples from a trained bridge and writes them to a CSV file.

    Returns:
        numpy.ndarray: The samples of the valid paths.
    """
    config, target, params = restore_bridge(path)
    seed = config.seed if seed is None else seed
    batch = simulate_reverse(params, target, n, seed, SAMPLE_STREAM_OFFSET + config.iterations, pool,
                             config.chunk_size)
    dump_samples(out, batch.samples, target, seed)
    logger.info(f"Wrote {batch.n_valid} samples to {out}")
    return batch.samples


def summarize(manifest):
    """Flattens a manifest into one row of a sweep table."""
    config = manifest.config
    return {
        "target": config["target"]["name"],
        "parameterization": config["parameterization"],
        "loss": config["loss"],
        "lr": config["lr"],
        "sigma_init": config["sigma_init"],
        "prior_std_init": config["prior_std_init"],
        "learn_sigma": config["learn_sigma"],
        "seed": config["seed"],
        "final_elbo": manifest.final.get("elbo", np.nan),
        "best_elbo": np.nan if manifest.best_elbo is None else manifest.best_elbo,
        "sinkhorn": manifest.final.get("sinkhorn", np.nan),
        "mmd": manifest.final.get("mmd", np.nan),
        "emc": manifest.final.get("emc", np.nan),
        "diverged": manifest.diverged,
        "divergence_iteration": manifest.divergence_iteration,
        "time_used": manifest.wall_clock,
    }


def worker(inputs):
    index, config, out_root = inputs
    out_dir = None if out_root is None else Path(out_root) / f"run_{index}"
    with worker_pool(1) as pool:
        manifest = train(config, out_dir=out_dir, progress=False, pool=pool)
    return summarize(manifest)


def sweep(configs, n_processes=None, out_root=None, progress=True):
    """Trains every configuration in its own process.

    Args:
        configs (list): RunConfig instances.
        n_processes (int, optional): Number of processes. Defaults to the number of CPUs.
        out_root (str, optional): Directory holding one run_<index> directory per run. Defaults to None.
        progress (bool, optional): Show a progress bar. Defaults to True.

    Returns:
        pandas.DataFrame: One row per run, in the order of configs.
    """
    inputs = [(i, config, out_root) for i, config in enumerate(configs)]
    with Pool(n_processes) as pool:
        results = list(tqdm(pool.imap(worker, inputs), total=len(inputs), disable=not progress))
    return pd.DataFrame(results)


def select_best_runs(df, group_by=("target", "parameterization", "loss")):
    """Selects the best run of every group both by final ELBO and by Sinkhorn divergence.

    Returns:
        dict: Dataframes under "elbo" and "sinkhorn".
    """
    group_by = list(group_by)
    return {
        "elbo": filter_optimized_results(df, group_by, "final_elbo", is_higher_score_better=True),
        "sinkhorn": filter_optimized_results(df, group_by, "sinkhorn", is_higher_score_better=False),
    }


def stability_report(base_config, seeds=(0, 1, 2), n_processes=None, out_root=None, progress=True):
    """Trains LV and rKL-LD with learned diffusion coefficients over several seeds and records divergence.

    Returns:
        pandas.DataFrame: One row per seed with the divergence flags of both losses, and "contrast" set where
        LV diverged while rKL-LD did not.
    """
    configs = [replace(base_config, loss=loss, proposal="on_policy", learn_sigma=True, seed=seed)
               for seed in seeds for loss in ("lv", "rkl_ld")]
    df = sweep(configs, n_processes, out_root, progress)
    report = df.pivot(index="seed", columns="loss", values="diverged").rename(columns=lambda c: f"{c}_diverged")
    report["contrast"] = report["lv_diverged"] & ~report["rkl_ld_diverged"]
    if report["contrast"].any():
        logger.info(f"LV diverged while rKL-LD did not for seeds {list(report.index[report['contrast']])}")
    return report.reset_index()
