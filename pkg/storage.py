import logging
import os
import json
from datetime import datetime

import numpy as np
import pandas as pd
import yaml

from errors import DomainError
from rough_tensor import table_records
from tfbm_sampler import DyadicGrid, GaussianPathSample

logger = logging.getLogger(__name__)

LIBRARY_VERSION = "0.1.0"

# Directory for experiment outputs and the run manifest
DEFAULT_OUT_DIR = 'results'
MANIFEST_NAME = 'manifest.json'
FLOAT_FORMAT = '%.17g'


def manifest_path(out_dir):
    return os.path.join(out_dir, MANIFEST_NAME)


def _empty_manifest():
    return {
        "last_updated": "",
        "version": LIBRARY_VERSION,
        "total_runs": 0,
        "runs": []
    }


def load_manifest(out_dir=DEFAULT_OUT_DIR):
    """Load the run manifest, or a fresh structure if it is missing or unreadable."""
    path = manifest_path(out_dir)
    if not os.path.exists(path):
        logger.info(f"Manifest file not found at {path}. Creating a new one.")
        return _empty_manifest()
    try:
        with open(path, 'r', encoding='utf-8') as f:
            manifest_data = json.load(f)
            if not isinstance(manifest_data, dict) or "runs" not in manifest_data:
                raise ValueError("Manifest file has an invalid structure.")
            return manifest_data
    except json.JSONDecodeError as e:
        logger.error(f"Error decoding JSON from manifest file {path}: {e}. Recreating manifest.")
        return _empty_manifest()
    except Exception as e:
        logger.error(f"Error loading manifest from {path}: {e}. Recreating manifest.")
        return _empty_manifest()


def save_manifest(manifest, out_dir=DEFAULT_OUT_DIR):
    """Save the run manifest; failures are logged, never raised."""
    path = manifest_path(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2, ensure_ascii=False)
        logger.info(f"✅ Manifest saved: {path}")
        return True
    except Exception as e:
        logger.error(f"Error saving manifest to {path}: {e}")
        return False


def record_run(out_dir, subcommand, config, outputs, wall_time):
    """Append one run entry (config, version, wall time, output files) to the manifest."""
    manifest = load_manifest(out_dir)
    manifest["runs"].append({
        "subcommand": subcommand,
        "config": config,
        "version": LIBRARY_VERSION,
        "wall_time_seconds": round(float(wall_time), 3),
        "finished_at": datetime.now().isoformat(timespec='seconds'),
        "outputs": [os.path.relpath(p, out_dir) for p in outputs],
    })
    manifest["total_runs"] = len(manifest["runs"])
    manifest["last_updated"] = datetime.now().isoformat(timespec='seconds')
    manifest["version"] = LIBRARY_VERSION
    save_manifest(manifest, out_dir)
    return manifest


def save_frame_csv(frame, path):
    """Write a result table; the byte layout is fixed so identical runs give identical files."""
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    logger.info(f"💾 Saved {len(frame)} rows to {path}")
    return path


def sample_frame(sample):
    columns = {"t": sample.times}
    for c in range(sample.dim):
        columns[f"comp_{c}"] = sample.values[:, c]
    return pd.DataFrame(columns)


def sample_metadata(sample):
    return {
        "H": sample.H,
        "lambda": sample.lam,
        "level": sample.level,
        "horizon": sample.grid.horizon,
        "dim": sample.dim,
        "seed": sample.seed,
        "replica": sample.replica,
        "version": LIBRARY_VERSION,
    }


def save_sample_csv(sample, path):
    """Sample CSV plus its ``.meta.json`` sidecar; returns both paths."""
    save_frame_csv(sample_frame(sample), path)
    meta_path = os.path.splitext(path)[0] + '.meta.json'
    with open(meta_path, 'w', encoding='utf-8') as f:
        json.dump(sample_metadata(sample), f, indent=2, ensure_ascii=False)
    return [path, meta_path]


def load_sample_csv(path):
    """Read a sample written by save_sample_csv back, provenance included."""
    meta_path = os.path.splitext(path)[0] + '.meta.json'
    if not os.path.exists(meta_path):
        raise DomainError(f"sample sidecar {meta_path} is missing")
    with open(meta_path, 'r', encoding='utf-8') as f:
        meta = json.load(f)
    frame = pd.read_csv(path)
    values = frame[[f"comp_{c}" for c in range(meta["dim"])]].to_numpy(dtype=float)
    grid = DyadicGrid(meta["level"], meta["horizon"], allow_large=True)
    if values.shape[0] != grid.cells + 1:
        raise DomainError(f"{path} has {values.shape[0]} rows, its sidecar promises {grid.cells + 1}")
    values.setflags(write=False)
    return GaussianPathSample(grid=grid, H=meta["H"], lam=meta["lambda"], values=values,
                              seed=meta["seed"], replica=meta.get("replica", 0))


def save_table_csv(table, path, n_max=None):
    return save_frame_csv(pd.DataFrame(table_records(table, n_max)), path)


def save_solution_csv(solution, path):
    columns = {"t": solution.times}
    values = np.atleast_2d(solution.values)
    for c in range(values.shape[1]):
        columns[f"y_{c}"] = values[:, c]
    return save_frame_csv(pd.DataFrame(columns), path)


def save_report_yaml(report, path):
    """Write a report mapping (for example AprioriReport.as_dict()) as YAML."""
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(report, f, sort_keys=False, allow_unicode=True)
    logger.info(f"📝 Report saved: {path}")
    return path
