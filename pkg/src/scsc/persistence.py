"""Binary model container with a JSON sidecar.

The layout (little-endian throughout) is documented in ``docs/format.md``.
Arrays are written with their exact bit patterns, so ``load_model(save_model(m))``
reproduces filters, statistics and ADMM state bit for bit.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import FilterBank
from .errors import InvalidInputError
from .fftops import FilterSupport
from .ocsc import OcscConfig, OcscModel
from .online import HistoryStats, ScscConfig, ScscModel
from .solvers import AdmmConfig, AdmmState, NiApgConfig

FORMAT_VERSION = 1
MAGIC_SCSC = b"SCSC"
MAGIC_OCSC = b"OCSC"

TAGS = {"none": 0, "l1": 1, "l2": 2}
TAG_NAMES = {v: k for k, v in TAGS.items()}

FLAG_STATS = 1
FLAG_ADMM = 2
FLAG_SHARED_W = 4

_C16 = np.dtype("<c16")
_F8 = np.dtype("<f8")


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def _write_array(fh, a, dtype):
    fh.write(np.ascontiguousarray(a, dtype=dtype).tobytes())


def _read_array(fh, dtype, shape):
    count = int(np.prod(shape))
    raw = fh.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise InvalidInputError("model file is truncated")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def _unpack(fh, fmt):
    size = struct.calcsize(fmt)
    raw = fh.read(size)
    if len(raw) != size:
        raise InvalidInputError("model file is truncated")
    return struct.unpack(fmt, raw)


def _parts(model):
    if isinstance(model, ScscModel):
        cfg = model.config
        return (MAGIC_SCSC, cfg.R, cfg.K, model.bank, cfg.constraint, cfg.beta,
                model.shared_W)
    if isinstance(model, OcscModel):
        cfg = model.config
        return MAGIC_OCSC, cfg.K, cfg.K, model.dictionary, "none", cfg.beta, None


def metadata(model):
    """Scalar metadata and solver configs, as mirrored in the sidecar."""
    magic, R, K, bank, tag, beta, _ = _parts(model)
    meta = {"format": magic.decode(), "version": FORMAT_VERSION, "R": R, "K": K,
            "filterExtents": list(bank.support.extents),
            "paddedShape": list(bank.support.padded), "tag": tag, "beta": beta,
            "seed": model.seed, "t": model.stats.t,
            "admm": asdict(model.config.admm)}
    if isinstance(model, ScscModel):
        meta["niapg"] = asdict(model.config.niapg)
        meta["cacheWarmStarts"] = model.config.cache_warm_starts
        meta["sharedWeights"] = model.config.shared_weights
    else:
        meta["code"] = asdict(model.config.code)
    return meta


def save_model(model, path, include_stats=True, include_state=True):
    """Write ``model`` to ``path`` and its metadata to ``path + '.json'``.

    Per-sample warm-start caches are not persisted.
    """
    if _parts(model) is None:
        raise InvalidInputError(f"cannot save object of type {type(model).__name__}")
    magic, R, K, bank, tag, beta, shared_W = _parts(model)
    support = bank.support
    flags = ((FLAG_STATS if include_stats else 0) | (FLAG_ADMM if include_state else 0)
             | (FLAG_SHARED_W if shared_W is not None else 0))
    buf = io.BytesIO()
    buf.write(magic)
    buf.write(struct.pack("<IIII", FORMAT_VERSION, R, K, support.ndim))
    buf.write(struct.pack(f"<{support.ndim}I", *support.extents))
    buf.write(struct.pack(f"<{support.ndim}I", *support.padded))
    buf.write(struct.pack("<BdqQI", TAGS[tag], beta, model.seed, model.stats.t, flags))
    _write_array(buf, bank.spectral, _C16)
    if include_stats:
        _write_array(buf, model.stats.H, _C16)
        _write_array(buf, model.stats.G, _C16)
    if include_state:
        st = model.admm_state
        for a in (st.primal, st.auxiliary, st.dual):
            _write_array(buf, a, _C16)
        buf.write(struct.pack("<d", st.rho))
    if shared_W is not None:
        _write_array(buf, shared_W, _F8)
    path = Path(path)
    path.write_bytes(buf.getvalue())
    sidecar_path(path).write_text(json.dumps(metadata(model), indent=2, sort_keys=True) + "\n")
    return path


def _read_sidecar(path):
    side = sidecar_path(path)
    if not side.exists():
        return {}
    try:
        return json.loads(side.read_text())
    except json.JSONDecodeError as err:
        raise InvalidInputError(f"{side}: malformed sidecar ({err})") from err


def load_model(path):
    """Read a model written by :func:`save_model`.

    Solver configs come from the sidecar when present, defaults otherwise.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as err:
        raise InvalidInputError(f"cannot read model file {path}: {err}") from err
    fh = io.BytesIO(data)
    magic = fh.read(4)
    if magic not in (MAGIC_SCSC, MAGIC_OCSC):
        raise InvalidInputError(f"{path}: not a model file (magic {magic!r})")
    version, R, K, ndim = _unpack(fh, "<IIII")
    if version != FORMAT_VERSION:
        raise InvalidInputError(f"{path}: unsupported format version {version}")
    extents = _unpack(fh, f"<{ndim}I")
    padded = _unpack(fh, f"<{ndim}I")
    tag_code, beta, seed, t, flags = _unpack(fh, "<BdqQI")
    if tag_code not in TAG_NAMES:
        raise InvalidInputError(f"{path}: unknown constraint tag {tag_code}")
    support = FilterSupport(extents, padded)
    P = support.P
    spectral = _read_array(fh, _C16, (R,) + support.padded)
    stats = HistoryStats.zeros(P, R)
    stats.t = t
    if flags & FLAG_STATS:
        stats = HistoryStats(_read_array(fh, _C16, (P, R, R)), _read_array(fh, _C16, (P, R)), t)
    meta = _read_sidecar(path)
    admm = AdmmConfig(**meta.get("admm", {}))
    if flags & FLAG_ADMM:
        arrays = [_read_array(fh, _C16, (R,) + support.padded) for _ in range(3)]
        (rho,) = _unpack(fh, "<d")
        state = AdmmState(*arrays, rho)
    else:
        state = AdmmState.from_filters(spectral, admm.rho)
    shared_W = _read_array(fh, _F8, (R, K)) if flags & FLAG_SHARED_W else None
    if fh.read(1):
        raise InvalidInputError(f"{path}: trailing bytes after payload")
    bank = FilterBank(spectral, support)
    if magic == MAGIC_OCSC:
        config = OcscConfig(K=K, beta=beta, admm=admm, code=AdmmConfig(**meta["code"])) \
            if "code" in meta else OcscConfig(K=K, beta=beta, admm=admm)
        return OcscModel(bank, stats, state, config, seed)
    config = ScscConfig(R=R, K=K, beta=beta, constraint=TAG_NAMES[tag_code], admm=admm,
                        niapg=NiApgConfig(**meta.get("niapg", {})),
                        cache_warm_starts=meta.get("cacheWarmStarts", True),
                        shared_weights=meta.get("sharedWeights", False))
    return ScscModel(bank, stats, state, config, seed, shared_W=shared_W)
