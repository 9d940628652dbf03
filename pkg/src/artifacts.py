"""
Run artifact writers

Layout of one run directory::

    <output_root>/<name>/
        trace.jsonl            header line with config + version, then one record per evaluation
        samples_seed<N>.csv    '#'-prefixed header line, then terminal samples and log weights
        checkpoint_seed<N>.ckpt
        summary.json           per-seed outcomes and median/quartiles of ln Z across seeds

Sweeps add ``sweep.csv`` with one row per grid cell.
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from base import VERSION

logger = logging.getLogger(__name__)

OUTPUT_ENV = 'DDS_LAB_OUTPUT'


def resolve_output_root(config_dir: Optional[str], settings: Optional[Dict[str, Any]] = None) -> Path:
    """``DDS_LAB_OUTPUT`` beats the run's ``output_dir``, which beats ``config.yaml``."""
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    if config_dir:
        return Path(config_dir)
    return Path((settings or {}).get('output_dir', 'results'))


def _dumps(data: Any) -> str:
    return json.dumps(data, sort_keys=True, allow_nan=True)


def artifact_header(config: Dict[str, Any], kind: str) -> Dict[str, Any]:
    return {'type': kind, 'version': VERSION, 'config': config}


class TraceWriter:
    """Append-only JSONL trace; the first line carries the resolved config."""

    def __init__(self, path: Path, config: Dict[str, Any]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, 'w') as f:
            f.write(_dumps(artifact_header(config, 'header')) + '\n')

    def write(self, record: Dict[str, Any]):
        with open(self.path, 'a') as f:
            f.write(_dumps(dict(record, type='eval')) + '\n')


def read_trace(path: Path) -> List[Dict[str, Any]]:
    with open(path, 'r') as f:
        return [json.loads(line) for line in f if line.strip()]


def write_samples(path: Path, samples: np.ndarray, log_weights: np.ndarray,
                  config: Dict[str, Any]) -> Path:
    """Terminal samples as columns x0..x{d-1} plus ``log_weight``."""
    samples = np.asarray(samples)
    frame = pd.DataFrame(samples, columns=[f"x{i}" for i in range(samples.shape[1])])
    frame['log_weight'] = np.asarray(log_weights)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        f.write('# ' + _dumps(artifact_header(config, 'samples')) + '\n')
        frame.to_csv(f, index=False, float_format='%.17g')
    return path


def read_samples(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment='#')


def quartile_summary(values: Iterable[float]) -> Dict[str, Optional[float]]:
    """Median and lower/upper quartiles (linear interpolation); None when empty."""
    data = np.asarray([v for v in values if v is not None and np.isfinite(v)], dtype=np.float64)
    if data.size == 0:
        return {'median': None, 'lower_quartile': None, 'upper_quartile': None}
    lower, median, upper = np.quantile(data, [0.25, 0.5, 0.75])
    return {'median': float(median), 'lower_quartile': float(lower), 'upper_quartile': float(upper)}


def build_summary(config: Dict[str, Any], runs: List[Dict[str, Any]],
                  exact_log_z: Optional[float] = None) -> Dict[str, Any]:
    statuses = {run['status'] for run in runs}
    if statuses == {'completed'}:
        status = 'completed'
    elif 'diverged' in statuses:
        status = 'diverged'
    else:
        status = 'failed'
    summary = artifact_header(config, 'summary')
    summary.update({
        'status': status,
        'runs': runs,
        'ln_z': [run.get('ln_z') for run in runs],
        'elbo': quartile_summary(run.get('elbo') for run in runs),
        'exact_log_z': exact_log_z,
    })
    summary.update(quartile_summary(run.get('ln_z') for run in runs))
    return summary


def write_json(path: Path, data: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
    logger.info(f"Wrote {path}")
    return path


def write_sweep_table(path: Path, rows: List[Dict[str, Any]]) -> pd.DataFrame:
    """One row per cell: overridden keys, median and quartiles, diverged flag."""
    frame = pd.DataFrame(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote sweep table with {len(frame)} cells to {path}")
    return frame
