"""File-based exchange with out-of-process backends.

The orchestrator (client) and a backend worker share a root directory and
exchange NPY tensors; every message is a directory that appears
atomically by rename. ``docs/backend-protocol.md`` describes the layout.
:func:`serve` is a reference worker wrapping any in-process backend.
"""
from __future__ import annotations

import itertools
import json
import os
import shutil
import time
from pathlib import Path

import numpy as np

from .attention import AttentionPacket
from .errors import BackendError
from .formats import read_tensor, write_tensor

REQUESTS, RESPONSES, HOOKS, HOOK_RESPONSES = "requests", "responses", "hooks", "hook_responses"


def _publish(parent: Path, name: str, tensors: dict[str, np.ndarray], meta: dict) -> None:
    parent.mkdir(parents=True, exist_ok=True)
    tmp = parent / f".tmp-{name}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    for key, arr in tensors.items():
        write_tensor(np.ascontiguousarray(arr, dtype=np.float64), tmp / f"{key}.npy")
    (tmp / "meta.json").write_text(json.dumps(meta))
    os.rename(tmp, parent / name)


def _consume(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    meta = json.loads((path / "meta.json").read_text())
    tensors = {p.stem: read_tensor(p) for p in path.glob("*.npy")}
    shutil.rmtree(path)
    return meta, tensors


def _ready(parent: Path, prefix: str = "") -> list[Path]:
    if not parent.is_dir():
        return []
    return sorted(p for p in parent.iterdir()
                  if not p.name.startswith(".") and p.name.startswith(prefix))


class DirectoryBackend:
    """Predictor and codec whose work is done by a worker process.

    While waiting for a ``predict`` response the client answers attention
    hook requests from the worker, so hooks behave as if in-process.
    """

    _ids = itertools.count()

    def __init__(self, root, timeout: float = 600.0, poll: float = 0.002):
        self.root = Path(root)
        self.timeout = timeout
        self.poll = poll
        for sub in (REQUESTS, RESPONSES, HOOKS, HOOK_RESPONSES):
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    def _call(self, op: str, tensors: dict, meta: dict, hook=None):
        rid = f"{os.getpid()}-{next(self._ids):08d}"
        meta = dict(meta, op=op, id=rid, hooked=hook is not None)
        _publish(self.root / REQUESTS, rid, tensors, meta)
        deadline = time.monotonic() + self.timeout
        done = self.root / RESPONSES / rid
        while not done.exists():
            for hp in _ready(self.root / HOOKS, rid + "."):
                hmeta, ht = _consume(hp)
                pkt = AttentionPacket(ht["q"], ht["k"], ht["v"])
                if hook is not None:
                    pkt = hook(hmeta["layer"], pkt)
                _publish(self.root / HOOK_RESPONSES, hp.name,
                         {"q": pkt.q, "k": pkt.k, "v": pkt.v}, {"layer": hmeta["layer"]})
            if time.monotonic() > deadline:
                raise BackendError(f"backend at {self.root} timed out on {op} {rid}")
            time.sleep(self.poll)
        rmeta, out = _consume(done)
        if rmeta.get("status") != "ok":
            raise BackendError(f"backend error on {op}: {rmeta.get('message', 'unknown')}")
        return out

    def _predict_request(self, z, timestep, conditioning):
        tensors = {"input": np.asarray(z)}
        if conditioning is not None:
            tensors["conditioning"] = np.asarray(conditioning)
        return tensors, {"timestep": int(timestep)}

    def predict(self, z, timestep, conditioning=None, hook=None):
        tensors, meta = self._predict_request(z, timestep, conditioning)
        return self._call("predict", tensors, meta, hook)["output"]

    def predict_with_features(self, z, timestep, conditioning=None, hook=None):
        tensors, meta = self._predict_request(z, timestep, conditioning)
        out = self._call("predict_with_features", tensors, meta, hook)
        if "features" not in out:
            raise BackendError("backend returned no features")
        return out["output"], out["features"]

    def decode(self, z):
        return self._call("decode", {"input": np.asarray(z)}, {})["output"]

    def encode(self, pixels):
        return self._call("encode", {"input": np.asarray(pixels)}, {})["output"]


class _RemoteHook:
    """Worker-side hook that forwards packets to the client and waits."""

    def __init__(self, root: Path, rid: str, timeout: float, poll: float):
        self.root, self.rid, self.timeout, self.poll = root, rid, timeout, poll
        self.seq = itertools.count()

    def __call__(self, layer: str, pkt: AttentionPacket) -> AttentionPacket:
        name = f"{self.rid}.{next(self.seq):04d}"
        _publish(self.root / HOOKS, name, {"q": pkt.q, "k": pkt.k, "v": pkt.v}, {"layer": layer})
        path = self.root / HOOK_RESPONSES / name
        deadline = time.monotonic() + self.timeout
        while not path.exists():
            if time.monotonic() > deadline:
                raise BackendError(f"client did not answer hook {name}")
            time.sleep(self.poll)
        _, t = _consume(path)
        return AttentionPacket(t["q"], t["k"], t["v"])


def serve(root, predictor=None, codec=None, stop=None, max_requests: int | None = None,
          timeout: float = 600.0, poll: float = 0.002) -> int:
    """Answer requests under ``root`` until ``stop`` is set or ``max_requests`` are served.

    Returns the number of requests handled.
    """
    root = Path(root)
    for sub in (REQUESTS, RESPONSES, HOOKS, HOOK_RESPONSES):
        (root / sub).mkdir(parents=True, exist_ok=True)
    handled = 0
    while (stop is None or not stop.is_set()) and (max_requests is None or handled < max_requests):
        pending = _ready(root / REQUESTS)
        if not pending:
            time.sleep(poll)
            continue
        meta, t = _consume(pending[0])
        rid, op = meta["id"], meta["op"]
        try:
            hook = _RemoteHook(root, rid, timeout, poll) if meta.get("hooked") else None
            cond = t.get("conditioning")
            if op == "predict":
                out = {"output": predictor.predict(t["input"], meta["timestep"], cond, hook=hook)}
            elif op == "predict_with_features":
                eps, feats = predictor.predict_with_features(t["input"], meta["timestep"], cond, hook=hook)
                out = {"output": eps, "features": feats}
            elif op == "decode":
                out = {"output": codec.decode(t["input"])}
            elif op == "encode":
                out = {"output": codec.encode(t["input"])}
            else:
                raise BackendError(f"unknown op {op!r}")
            _publish(root / RESPONSES, rid, out, {"status": "ok"})
        except Exception as exc:  # reported to the client, worker keeps running
            _publish(root / RESPONSES, rid, {}, {"status": "error", "message": str(exc)})
        handled += 1
    return handled
