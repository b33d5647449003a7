"""Single-file checkpoint archive.

Layout (zip, stored uncompressed):

    VERSION          text version tag
    config.json      ModelConfig manifest
    params.json      ordered list of {"name", "shape"}
    params/<name>    raw little-endian float32 payload
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .model import MNTFA, ModelConfig

FORMAT_VERSION = "mntfa-ckpt-1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: MNTFA, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    index = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
    tmp = path.with_suffix(path.suffix + ".tmp")
    # fixed timestamps keep archives byte-identical across runs
    stamp = (1980, 1, 1, 0, 0, 0)
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo("VERSION", stamp), FORMAT_VERSION)
        zf.writestr(zipfile.ZipInfo("config.json", stamp), json.dumps(model.config.to_dict(), indent=2, sort_keys=True))
        zf.writestr(zipfile.ZipInfo("params.json", stamp), json.dumps(index, indent=1))
        if extra is not None:
            zf.writestr(zipfile.ZipInfo("extra.json", stamp), json.dumps(extra, sort_keys=True))
        for name, value in state.items():
            payload = value.detach().cpu().numpy().astype("<f4").tobytes()
            zf.writestr(zipfile.ZipInfo(f"params/{name}", stamp), payload)
    tmp.replace(path)
    return path


def load_checkpoint(path, dtype=torch.float32) -> MNTFA:
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path}: not a checkpoint archive ({exc})") from exc
    with zf:
        names = set(zf.namelist())
        for required in ("VERSION", "config.json", "params.json"):
            if required not in names:
                raise CheckpointError(f"{path}: missing {required}")
        version = zf.read("VERSION").decode().strip()
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unknown checkpoint version {version!r}")
        config = ModelConfig.from_dict(json.loads(zf.read("config.json")))
        index = json.loads(zf.read("params.json"))
        model = MNTFA(config)
        expected = model.state_dict()
        if [e["name"] for e in index] != list(expected):
            missing = set(expected) ^ {e["name"] for e in index}
            raise CheckpointError(f"{path}: parameter set does not match manifest config ({sorted(missing)[:5]})")
        state = {}
        for entry in index:
            name, shape = entry["name"], tuple(entry["shape"])
            if shape != tuple(expected[name].shape):
                raise CheckpointError(f"{path}: {name} has shape {shape}, config implies {tuple(expected[name].shape)}")
            raw = np.frombuffer(zf.read(f"params/{name}"), dtype="<f4")
            if raw.size != int(np.prod(shape, dtype=np.int64)):
                raise CheckpointError(f"{path}: {name} payload has {raw.size} values for shape {shape}")
            state[name] = torch.from_numpy(raw.reshape(shape).copy())
    model.load_state_dict(state)
    return model.to(dtype)


def read_extra(path) -> dict | None:
    with zipfile.ZipFile(path) as zf:
        if "extra.json" not in zf.namelist():
            return None
        return json.loads(zf.read("extra.json"))
