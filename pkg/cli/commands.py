"""Subcommands of the command-line entry point.

Every `cmd_*` function returns a process exit code. Configuration is validated
in full (including dataset paths) before any dataset is opened.
"""
import functools
import logging

import numpy as np
import pandas as pd

from analysis.metrics import (
    FiringStats,
    cost_report,
    cost_summary,
    inflation_sweep,
    kappa_sweep,
    measure_firing_stats,
    predcoding_overhead,
)
from analysis.stability import compare_stability, stability_traces
from config.constants import (
    CHECKPOINT_NAME,
    EXIT_CHECKPOINT_VERSION,
    EXIT_CONFIG,
    EXIT_DIVERGENCE,
    EXIT_GRADCHECK_FAIL,
    EXIT_OK,
    EXIT_ORACLE,
    STABILITY_RESIDUAL_BOUND,
    STREAM_GRADCHECK,
)
from config.logging_config import setup_logging
from config.settings import load_config
from data.batching import expand_labels
from data.idx import load_idx
from data.synthetic import make_moving_bar, make_random_dataset
from exceptions import (
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    DatasetError,
    DivergenceError,
    EPError,
    NonFiniteGradientError,
    OracleUnavailableError,
)
from models.checkpoint import load_checkpoint, save_checkpoint
from models.network import LayeredEnergyModel
from models.rng import RngStream, SpikeSampler
from training.oracle import fd_gradient, per_connection_cosine
from training.optimizers import init_optimizer_state
from training.trainer import ep_gradient_three_phase, evaluate, train_epoch, train_temporal

logger = logging.getLogger(__name__)


def exit_codes(command):
    """Translate framework errors raised by `command` into exit codes."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except CheckpointVersionError as err:
            return _fail(EXIT_CHECKPOINT_VERSION, err)
        except (ConfigError, DatasetError, CheckpointError) as err:
            return _fail(EXIT_CONFIG, err)
        except (DivergenceError, NonFiniteGradientError) as err:
            return _fail(EXIT_DIVERGENCE, err)
        except OracleUnavailableError as err:
            return _fail(EXIT_ORACLE, err)
        except EPError as err:
            return _fail(EXIT_CONFIG, err)
    return wrapper


def _fail(code, err):
    logger.error("%s: %s", type(err).__name__, err)
    print(f"error: {err}")
    return code


def _prepare(config_path, overrides):
    config = load_config(config_path, overrides)
    setup_logging(config.run.log_level)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    return config


def load_datasets(config):
    """(train, test) datasets described by the [data] section."""
    data = config.data
    seed = config.run.seed
    if data.dataset == 'mnist':
        paths = data.require_files()
        train = load_idx(paths['train_images'], paths['train_labels'], config.model.n_classes)
        test = load_idx(paths['test_images'], paths['test_labels'], config.model.n_classes)
        return train.subset(data.train_subset, seed), test.subset(data.test_subset, seed)
    if data.dataset == 'moving_bar':
        return (make_moving_bar(data.n_train, data.frames, data.size, seed),
                make_moving_bar(data.n_test, data.frames, data.size, seed + 1))
    shape = config.model.input_shape
    return (make_random_dataset(data.n_train, shape, config.model.n_classes, seed),
            make_random_dataset(data.n_test, shape, config.model.n_classes, seed + 1))


def build_model(config, checkpoint=None):
    """Model from `checkpoint` (or [run] checkpoint) or freshly initialised."""
    path = checkpoint or config.run.checkpoint
    if path:
        restored = load_checkpoint(path)
        logger.info("resuming from %s (epoch %d)", path, restored.epoch)
        return restored.model, restored.optimizer_state, restored.epoch
    model = LayeredEnergyModel.initialise(config.topology(), config.model.kappa, config.run.seed,
                                          config.model.init_gain, config.model.init_nonnegative)
    return model, init_optimizer_state(model.params, config.train.optimizer), 0


def _is_sequence(dataset):
    return hasattr(dataset, 'sequences')


@exit_codes
def cmd_train(config_path, overrides=None, checkpoint=None):
    config = _prepare(config_path, overrides)
    train_set, test_set = load_datasets(config)
    model, optimizer_state, start_epoch = build_model(config, checkpoint)
    cfg = config.train_config()
    rng = RngStream(cfg.seed)
    step = train_temporal if _is_sequence(train_set) else train_epoch

    rows = []
    metrics_path = config.out_dir / 'metrics.csv'
    for epoch in range(start_epoch, cfg.epochs):
        train_metrics = step(model, train_set, cfg, rng, optimizer_state, epoch)
        test_metrics = evaluate(model, test_set, cfg, rng, epoch)
        row = train_metrics.as_row()
        row['test_accuracy'] = test_metrics.accuracy
        rows.append(row)
        pd.DataFrame(rows).to_csv(metrics_path, index=False)
        logger.info("epoch %d: test accuracy %.4f", epoch, test_metrics.accuracy)

    save_checkpoint(config.out_dir / CHECKPOINT_NAME, model, optimizer_state, cfg.seed, max(cfg.epochs, start_epoch))
    with open(config.out_dir / 'summary.txt', 'w') as summary:
        if rows:
            last = rows[-1]
            summary.write(f"epochs: {len(rows)}\nloss: {last['loss']:.6f}\n"
                          f"train_accuracy: {last['accuracy']:.4f}\ntest_accuracy: {last['test_accuracy']:.4f}\n")
        else:
            summary.write('epochs: 0\n')
    print(f"training finished; checkpoint written to {config.out_dir / CHECKPOINT_NAME}")
    return EXIT_OK


@exit_codes
def cmd_eval(config_path, overrides=None, checkpoint=None):
    config = _prepare(config_path, overrides)
    _, test_set = load_datasets(config)
    model, _, epoch = build_model(config, checkpoint)
    cfg = config.train_config()
    metrics = evaluate(model, test_set, cfg, RngStream(cfg.seed), epoch)
    pd.DataFrame([metrics.as_row()]).to_csv(config.out_dir / 'eval.csv', index=False)
    print(f"accuracy: {metrics.accuracy:.4f} ({metrics.n_samples} samples)")
    return EXIT_OK


def _gradcheck_batch(config):
    train_set, _ = load_datasets(config)
    n = min(config.gradcheck.n_samples, len(train_set))
    samples = train_set.sequences[:n, 0] if _is_sequence(train_set) else train_set.images[:n]
    labels = train_set.labels[:n]
    return samples, expand_labels(labels, config.model.n_classes, config.model.n_perclass)


def gradcheck_cosines(model, x, y, cfg, ocfg, beta, reference=None):
    """Per-connection cosine between the three-phase estimate at `beta` and the oracle."""
    run_cfg = cfg.model_copy(update={'beta': beta, 'dynamics': 'meanfield'})
    sampler = SpikeSampler(RngStream(cfg.seed).child(STREAM_GRADCHECK), np.arange(x.shape[0]))
    estimate = ep_gradient_three_phase(model, x, y, run_cfg, sampler)
    unsettled = max(estimate.free.residual, estimate.nudge_residual)
    if unsettled > ocfg.residual_tol:
        raise OracleUnavailableError(
            f"EP phases at beta {beta:g} stopped at residual {unsettled:.3g} after "
            f"{cfg.t_free}/{cfg.t_nudge} steps (tolerance {ocfg.residual_tol:.3g}); "
            f"longer phases help unless a unit oscillates across the kink of sigma"
        )
    if reference is None:
        reference = fd_gradient(model, x, y, ocfg)
    return per_connection_cosine(estimate, reference), reference


@exit_codes
def cmd_gradcheck(config_path, overrides=None, checkpoint=None, threshold=None, beta_sweep=False):
    config = _prepare(config_path, overrides)
    threshold = config.gradcheck.threshold if threshold is None else threshold
    x, y = _gradcheck_batch(config)
    model, _, _ = build_model(config, checkpoint)
    cfg = config.train_config()
    ocfg = config.oracle_config()

    cosines, reference = gradcheck_cosines(model, x, y, cfg, ocfg, config.gradcheck.beta)
    for i, cosine in enumerate(cosines):
        print(f"connection {i}: cosine {cosine:.6f}")
    rows = [{'beta': config.gradcheck.beta, 'connection': i, 'cosine': c} for i, c in enumerate(cosines)]

    if beta_sweep:
        sweep = []
        for beta in config.gradcheck.betas:
            values, _ = gradcheck_cosines(model, x, y, cfg, ocfg, beta, reference)
            sweep.append((beta, min(values)))
            rows += [{'beta': beta, 'connection': i, 'cosine': c} for i, c in enumerate(values)]
        print('beta      min cosine')
        for beta, value in sweep:
            print(f"{beta:<9g} {value:.6f}")
        ordered = sorted(sweep, key=lambda item: -item[0])
        monotone = all(a[1] <= b[1] for a, b in zip(ordered, ordered[1:]))
        print(f"monotone improvement as beta decreases: {'yes' if monotone else 'no'}")

    pd.DataFrame(rows).to_csv(config.out_dir / 'gradcheck.csv', index=False)
    passed = all(c >= threshold for c in cosines)
    print(f"{'PASS' if passed else 'FAIL'} (threshold {threshold})")
    return EXIT_OK if passed else EXIT_GRADCHECK_FAIL


@exit_codes
def cmd_stability(config_path, overrides=None, checkpoint=None):
    config = _prepare(config_path, overrides)
    train_set, test_set = load_datasets(config)
    model, _, _ = build_model(config, checkpoint)
    cfg = config.train_config()
    dataset = test_set if len(test_set) >= config.stability.n_samples else train_set
    n = min(config.stability.n_samples, len(dataset))
    x = dataset.sequences[:n, 0] if _is_sequence(dataset) else dataset.images[:n]
    y = expand_labels(dataset.labels[:n], config.model.n_classes, config.model.n_perclass)

    traces = stability_traces(model, x, y, cfg, config.run.seed, config.stability.spike_rasters)
    if config.stability.spike_rasters:
        traces['stochastic'].raster_frame(config.stability.layer).to_csv(
            config.out_dir / 'raster_stochastic.csv', index=False)
    for label, trace in traces.items():
        trace.to_csv(config.out_dir / f"trace_{label}.csv")
        trace.heatmap_frame(config.stability.layer).to_csv(config.out_dir / f"heatmap_{label}.csv", index=False)
    report, summary = compare_stability(traces, config.stability.layer, config.stability.window)
    report.to_csv(config.out_dir / 'stability_report.csv', index=False)
    summary.to_csv(config.out_dir / 'stability_summary.csv', index=False)
    print(summary.to_string(index=False))
    variance = summary.set_index('model')['tail_variance']
    print(f"stochastic below lif_lowpass: {'yes' if variance['stochastic'] < variance['lif_lowpass'] else 'no'}")
    residual = summary.set_index('model').loc['stochastic', 'trace_residual']
    print(f"stochastic trace residual {residual:.4f} (bound {STABILITY_RESIDUAL_BOUND}): "
          f"{'within' if residual <= STABILITY_RESIDUAL_BOUND else 'exceeded'}")
    return EXIT_OK


@exit_codes
def cmd_cost(config_path, overrides=None, checkpoint=None):
    config = _prepare(config_path, overrides)
    topology_snn = config.topology()
    topology_fp = config.topology(n_perclass=1)
    if config.cost.ifr is not None:
        stats = FiringStats(rates=config.cost.ifr)
    else:
        _, test_set = load_datasets(config)
        model, _, _ = build_model(config, checkpoint)
        cfg = config.train_config()
        stats = measure_firing_stats(model, test_set.subset(config.cost.n_samples), cfg, RngStream(cfg.seed))
    report = cost_report(topology_snn, stats, bidirectional=config.cost.bidirectional)
    summary = cost_summary(topology_snn, topology_fp, stats, bidirectional=config.cost.bidirectional)
    report.to_csv(config.out_dir / 'cost_report.csv', index=False)
    pd.DataFrame([summary]).to_csv(config.out_dir / 'cost_summary.csv', index=False)
    predcoding_overhead(topology_snn).to_csv(config.out_dir / 'predcoding_overhead.csv', index=False)
    print(report.to_string(index=False))
    print(f"energy ratio: {summary['ratio']:.2f}x")
    return EXIT_OK


@exit_codes
def cmd_sweep(config_path, overrides=None, checkpoint=None):
    config = _prepare(config_path, overrides)
    _, test_set = load_datasets(config)
    if _is_sequence(test_set):
        test_set = test_set.frame(0)
    model, _, _ = build_model(config, checkpoint)
    cfg = config.train_config()
    rng = RngStream(cfg.seed)
    dataset = test_set.subset(config.sweep.n_samples)

    table = kappa_sweep(model.with_kappa, config.sweep.kappas, dataset, cfg, rng)
    table.to_csv(config.out_dir / 'kappa_sweep.csv', index=False)
    print(table.to_string(index=False))

    if config.sweep.perclass:
        def factory(n_perclass):
            model = config.model
            return LayeredEnergyModel.initialise(config.topology(n_perclass), model.kappa, config.run.seed,
                                                 model.init_gain, model.init_nonnegative)

        inflation = inflation_sweep(factory, config.sweep.perclass, dataset, cfg, rng)
        inflation.to_csv(config.out_dir / 'inflation_sweep.csv', index=False)
        print(inflation.to_string(index=False))
    return EXIT_OK


COMMANDS = {
    'train': cmd_train,
    'eval': cmd_eval,
    'gradcheck': cmd_gradcheck,
    'stability': cmd_stability,
    'cost': cmd_cost,
    'sweep': cmd_sweep,
}
