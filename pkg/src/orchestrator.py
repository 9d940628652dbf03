"""
Orchestrator Module - Run configuration, seeded runs, sweeps and evidence estimation
"""

import itertools
import json
import logging
import os
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

import artifacts
from base import VERSION, ConfigError, DivergenceError, RunConfig, RunInfo, RunStatus
from diffcore import NonFiniteError, RngStream
from driftnet import load_checkpoint, save_checkpoint
from samplers import SamplerFactory, TrainConfig
from targets import DatasetError, TargetDensity, TargetRegistry

MAX_SWEEP_CELLS = 64

# Substreams of a seed's RngStream; training itself uses 0 and 1
INIT_STREAM = 2
FINAL_EVAL_STREAM = 3

DEFAULT_SETTINGS = {
    'output_dir': 'results',
    'presets_file': 'recipes/presets.yaml',
    'logging': {'level': 'INFO', 'file': 'dds-lab.log'},
    'sweep': {'workers': 1},
    'run_defaults': {},
}


def _read_mapping(path: Path) -> Dict[str, Any]:
    """Parse a YAML, JSON or TOML file into a dict."""
    suffix = path.suffix.lower()
    with open(path, 'rb') as f:
        raw = f.read()
    try:
        if suffix in ('.yaml', '.yml'):
            data = yaml.safe_load(raw.decode('utf-8'))
        elif suffix == '.json':
            data = json.loads(raw.decode('utf-8'))
        elif suffix == '.toml':
            data = tomllib.loads(raw.decode('utf-8'))
        else:
            raise ConfigError(f"Unsupported config format '{suffix}' (use .yaml, .json or .toml)")
    except (yaml.YAMLError, json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"Could not parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping")
    return data


def _set_dotted(data: Dict[str, Any], key: str, value: Any):
    """Assign ``a.b`` as data['a']['b']; only ``target_params`` nests."""
    parts = key.split('.')
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"Cannot set '{key}': '{part}' is not a mapping")
    node[parts[-1]] = value


def _execute_cell(payload: Tuple[str, Dict[str, Any], str]) -> Dict[str, Any]:
    """Process-pool entry point for one sweep cell."""
    config_path, cell_config, base_dir = payload
    orchestrator = ExperimentOrchestrator(config_path)
    summary = orchestrator.run(RunConfig.from_dict(cell_config), base_dir=base_dir)
    return summary


class ExperimentOrchestrator:
    """Resolves run configurations and drives training, evaluation and artifact output"""

    def __init__(self, config_path: str = "config.yaml"):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.config_path = config_path
        self.config = self._load_config(config_path)
        self.root = Path(config_path).resolve().parent
        self._presets: Optional[Dict[str, Dict[str, Any]]] = None

    def _load_config(self, config_path: str) -> Dict[str, Any]:
        """Load global settings from YAML, filling gaps from the defaults"""
        settings = json.loads(json.dumps(DEFAULT_SETTINGS))
        if os.path.exists(config_path):
            try:
                with open(config_path, 'r') as f:
                    loaded = yaml.safe_load(f) or {}
                for key, value in loaded.items():
                    if isinstance(value, dict) and isinstance(settings.get(key), dict):
                        settings[key].update(value)
                    else:
                        settings[key] = value
                self.logger.info(f"Loaded configuration from {config_path}")
                return settings
            except Exception as e:
                self.logger.error(f"Failed to load config {config_path}: {e}")

        self.logger.warning("Using default configuration")
        return settings

    # -- configuration -----------------------------------------------------------

    @property
    def presets(self) -> Dict[str, Dict[str, Any]]:
        if self._presets is None:
            path = Path(self.config['presets_file'])
            if not path.is_absolute():
                path = self.root / path
            if path.exists():
                data = _read_mapping(path)
                self._presets = data.get('presets', data)
                self.logger.debug(f"Loaded {len(self._presets)} presets from {path}")
            else:
                self.logger.warning(f"Preset file not found: {path}")
                self._presets = {}
        return self._presets

    def list_presets(self) -> List[str]:
        return sorted(self.presets)

    def get_preset(self, name: str) -> Dict[str, Any]:
        if name not in self.presets:
            raise ConfigError(f"Unknown preset: {name}")
        return json.loads(json.dumps(self.presets[name]))

    def resolve(self, data: Dict[str, Any]) -> RunConfig:
        """Merge run defaults, the named preset and explicit keys; then validate."""
        merged: Dict[str, Any] = dict(self.config.get('run_defaults') or {})
        if data.get('preset'):
            merged.update(self.get_preset(data['preset']))
        for key, value in data.items():
            if key == 'target_params' and isinstance(value, dict):
                merged.setdefault('target_params', {})
                merged['target_params'] = dict(merged['target_params'], **value)
            else:
                merged[key] = value
        config = RunConfig.from_dict(merged)
        SamplerFactory.get(config.method).validate_config(config)
        if config.target not in TargetRegistry.list_available():
            raise ConfigError(f"Unknown target: {config.target}")
        return config

    def load_recipe(self, file_path: str) -> Dict[str, Any]:
        """Load a run config or sweep grid file (YAML, JSON or TOML)"""
        path = Path(file_path)
        if not path.exists():
            raise FileNotFoundError(f"Recipe file not found: {file_path}")
        recipe = _read_mapping(path)
        self.logger.info(f"Loaded recipe from {file_path}")
        return recipe

    def load_run_config(self, file_path: str, seed: Optional[int] = None,
                        deterministic: Optional[bool] = None) -> RunConfig:
        data = self.load_recipe(file_path)
        if seed is not None:
            data['seeds'] = [seed]
        if deterministic is not None:
            data['deterministic'] = deterministic
        return self.resolve(data)

    def build_target(self, config: RunConfig, base_dir: Optional[Path] = None) -> TargetDensity:
        """Relative dataset paths resolve against ``base_dir``, then the project root."""
        search = [base_dir, self.root] if base_dir and Path(base_dir) != self.root else [self.root]
        for index, directory in enumerate(search):
            try:
                return TargetRegistry.create(config.target, config.target_params, directory)
            except FileNotFoundError as e:
                if index == len(search) - 1:
                    raise ConfigError(f"Cannot build target '{config.target}': {e}") from e
            except DatasetError:
                raise
            except ValueError as e:
                raise ConfigError(f"Cannot build target '{config.target}': {e}") from e

    def output_root(self, config: RunConfig) -> Path:
        root = artifacts.resolve_output_root(config.output_dir, self.config)
        return root if root.is_absolute() else self.root / root

    # -- runs --------------------------------------------------------------------

    def run_seed(self, config: RunConfig, target: TargetDensity, seed: int, run_dir: Path,
                 trace: artifacts.TraceWriter) -> RunInfo:
        """Train, evaluate and checkpoint one seed; divergence is recorded, not raised."""
        info = RunInfo(seed=seed, status=RunStatus.RUNNING, started_at=time.time())
        rng = RngStream(seed)
        sampler = SamplerFactory.create(config, target, rng.substream(INIT_STREAM))
        resolved = config.to_dict()
        result = None
        try:
            result = sampler.train(TrainConfig.from_run_config(config), rng, on_record=trace.write)
            info.iterations_run = result.iterations_run
            samples, report = sampler.evaluate(config.eval_batch, rng.substream(FINAL_EVAL_STREAM))
        except DivergenceError as e:
            self.logger.warning(f"Seed {seed}: {e}")
            info.status = RunStatus.DIVERGED
            info.diverged_at = e.iteration
            info.message = str(e)
        except NonFiniteError as e:
            self.logger.warning(f"Seed {seed}: non-finite evaluation: {e}")
            info.status = RunStatus.DIVERGED
            info.iterations_run = result.iterations_run if result is not None else config.iterations
            info.message = str(e)
        else:
            info.status = RunStatus.COMPLETED
            info.ln_z = report.ln_z_is
            info.elbo = report.elbo
            info.std_error = report.std_error
            artifacts.write_samples(run_dir / f"samples_seed{seed}.csv", samples, report.log_weights,
                                    resolved)
            save_checkpoint(run_dir / f"checkpoint_seed{seed}.ckpt", sampler.network,
                            {'version': VERSION, 'seed': seed, 'config': resolved,
                             'ln_z': report.ln_z_is})
            self.logger.info(f"Seed {seed}: ln Z = {report.ln_z_is:.4f} +- {report.std_error:.4f} "
                             f"(elbo {report.elbo:.4f}, ess {report.ess:.1f})")
        info.completed_at = time.time()
        return info

    def run(self, config: RunConfig, base_dir: Optional[str] = None,
            run_dir: Optional[Path] = None) -> Dict[str, Any]:
        """
        Run every seed of ``config`` and write the trace, samples, checkpoints and summary.

        Returns:
            The summary dict; its ``status`` is 'diverged' if any seed diverged.
        """
        target = self.build_target(config, Path(base_dir) if base_dir else None)
        run_dir = Path(run_dir) if run_dir else self.output_root(config) / config.name
        resolved = config.to_dict()
        trace = artifacts.TraceWriter(run_dir / 'trace.jsonl', resolved)
        self.logger.info(f"Run '{config.name}': method={config.method} target={config.target} "
                         f"d={target.dim} K={config.K} seeds={config.seeds}")

        infos = [self.run_seed(config, target, seed, run_dir, trace) for seed in config.seeds]
        runs = [info.to_dict() for info in infos]
        if config.deterministic:
            for run in runs:
                run['started_at'] = run['completed_at'] = None
        summary = artifacts.build_summary(resolved, runs, target.exact_log_z)
        summary['run_dir'] = str(run_dir)
        artifacts.write_json(run_dir / 'summary.json', summary)
        return summary

    # -- sweeps ------------------------------------------------------------------

    def expand_grid(self, grid_spec: Dict[str, Any]) -> List[Tuple[Dict[str, Any], Dict[str, Any]]]:
        """Cartesian product of ``grid`` over ``base``; returns (overrides, config data) pairs."""
        base = dict(grid_spec.get('base') or {})
        grid = grid_spec.get('grid') or {}
        if not isinstance(grid, dict):
            raise ConfigError("Sweep 'grid' must map keys to lists of values")
        keys = list(grid)
        values = []
        for key in keys:
            options = grid[key] if isinstance(grid[key], list) else [grid[key]]
            if not options:
                raise ConfigError(f"Sweep key '{key}' has no values")
            values.append(options)
        n_cells = int(np.prod([len(v) for v in values])) if values else 1
        if n_cells > MAX_SWEEP_CELLS:
            raise ConfigError(f"Sweep has {n_cells} cells, at most {MAX_SWEEP_CELLS} are allowed")

        cells = []
        for combo in itertools.product(*values):
            data = json.loads(json.dumps(base))
            overrides = dict(zip(keys, combo))
            for key, value in overrides.items():
                _set_dotted(data, key, value)
            cells.append((overrides, data))
        return cells

    def select_best(self, rows: List[Dict[str, Any]], exact_log_z: Optional[float]) -> Optional[int]:
        """Cell whose median ln Z is closest to ln Z from below; highest median without ln Z."""
        candidates = [(row['median'], row['cell']) for row in rows
                      if not row['diverged'] and row['median'] is not None]
        if exact_log_z is not None:
            candidates = [c for c in candidates if c[0] <= exact_log_z]
        if not candidates:
            return None
        return max(candidates)[1]

    def sweep(self, grid_spec: Dict[str, Any], base_dir: Optional[str] = None) -> Dict[str, Any]:
        """
        Run every cell of a grid; cell failures are recorded and the sweep continues.

        Returns:
            Dict with the table rows, the best cell index and the table path.
        """
        name = grid_spec.get('name', 'sweep')
        cells = self.expand_grid(grid_spec)
        configs: List[Optional[RunConfig]] = [None] * len(cells)
        errors: List[Optional[str]] = [None] * len(cells)
        for index, (overrides, data) in enumerate(cells):
            data['name'] = f"{name}/cell{index:02d}"
            try:
                configs[index] = self.resolve(data)
            except ConfigError as e:
                self.logger.error(f"Cell {index} rejected: {e}")
                errors[index] = str(e)
        valid = [(index, c) for index, c in enumerate(configs) if c is not None]

        workers = int((self.config.get('sweep') or {}).get('workers', 1))
        deterministic = any(c.deterministic for _, c in valid)
        self.logger.info(f"Sweep '{name}': {len(cells)} cells ({len(valid)} valid), "
                         f"workers={workers}")

        summaries: List[Optional[Dict[str, Any]]] = [None] * len(cells)
        if workers > 1 and not deterministic and len(valid) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {index: pool.submit(_execute_cell, (self.config_path, c.to_dict(), base_dir))
                           for index, c in valid}
                for index, future in futures.items():
                    try:
                        summaries[index] = future.result()
                    except Exception as e:
                        errors[index] = str(e)
        else:
            for index, config in valid:
                try:
                    summaries[index] = self.run(config, base_dir=base_dir)
                except Exception as e:
                    self.logger.error(f"Cell {index} failed: {e}")
                    errors[index] = str(e)

        rows = []
        exact_log_z = None
        for index, ((overrides, _), summary) in enumerate(zip(cells, summaries)):
            row = {'cell': index}
            row.update({key: json.dumps(v) if isinstance(v, (list, dict)) else v
                        for key, v in overrides.items()})
            if summary is None:
                row.update({'median': None, 'lower_quartile': None, 'upper_quartile': None,
                            'diverged': False, 'status': 'failed', 'error': errors[index]})
            else:
                exact_log_z = summary.get('exact_log_z', exact_log_z)
                row.update({'median': summary['median'],
                            'lower_quartile': summary['lower_quartile'],
                            'upper_quartile': summary['upper_quartile'],
                            'diverged': summary['status'] == 'diverged',
                            'status': summary['status'], 'error': None})
            rows.append(row)

        if valid:
            sweep_root = self.output_root(valid[0][1]) / name
        else:
            root = artifacts.resolve_output_root(None, self.config)
            sweep_root = (root if root.is_absolute() else self.root / root) / name
        table_path = sweep_root / 'sweep.csv'
        artifacts.write_sweep_table(table_path, rows)
        best = self.select_best(rows, exact_log_z)
        if best is not None:
            self.logger.info(f"Best cell: {best} (median ln Z {rows[best]['median']:.4f})")
        return {'name': name, 'rows': rows, 'best_cell': best, 'exact_log_z': exact_log_z,
                'table': str(table_path)}

    # -- evidence from a checkpoint ------------------------------------------------

    def estimate_z(self, checkpoint: str, target: Optional[str] = None, n: int = 2000,
                   seed: int = 0, base_dir: Optional[str] = None) -> Dict[str, Any]:
        """
        Re-estimate ln Z with a saved network.

        ``target`` may name a preset (its target and target_params are used) or a
        registered target; by default the checkpoint's own target is used.
        """
        network, metadata = load_checkpoint(checkpoint)
        data = dict(metadata.get('config') or {})
        if not data:
            raise ConfigError(f"Checkpoint {checkpoint} carries no run configuration")
        if target:
            if target in self.presets:
                preset = self.get_preset(target)
                data['target'] = preset.get('target', data.get('target'))
                data['target_params'] = preset.get('target_params', {})
            else:
                data['target'] = target
        data['eval_batch'] = n
        config = RunConfig.from_dict(data)
        density = self.build_target(config, Path(base_dir) if base_dir else None)
        sampler_class = SamplerFactory.get(config.method)
        sampler_class.validate_config(config)
        sampler = sampler_class.from_config(config, density, network)
        report = sampler.estimate_log_z(n, RngStream(seed).substream(FINAL_EVAL_STREAM))
        result = dict(report.to_dict(), method=config.method, target=config.target,
                      checkpoint=str(checkpoint), exact_log_z=density.exact_log_z, version=VERSION)
        self.logger.info(f"ln Z estimate from {checkpoint}: {report.ln_z_is:.4f} +- {report.std_error:.4f}")
        return result
