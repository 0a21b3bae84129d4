"""NCCK checkpoint container for every model kind.

Byte layout (little-endian)::

    b"NCCK"            magic
    u32                format version
    u64                payload length P
    P bytes            payload
    u64                CRC-64/WE of the payload (ECMA-182 polynomial,
                       init and xorout all-ones; check value 0x62EC59E3F1A4F00A)

Payload: ``u64`` header length H, H bytes of UTF-8 JSON header, then one
NCMX block per name in ``header["matrices"]``, in that order. The header
carries the kind tag, architecture descriptor, training-config record and
scalar metadata (logs, vocabulary, activation).
"""

import json
import os
import struct
import tempfile

import crcmod.predefined
import numpy as np

from .decoder.lm import LanguageModel
from .decoder.vocab import Vocabulary
from .errors import ChecksumError, FormatError, KindError, VersionError
from .mathcore.io import pack_matrix, unpack_matrix
from .regressors import AutoencoderStack, MlpModel, RidgeModel, Standardizer

MAGIC = b"NCCK"
VERSION = 1
KINDS = ("ridge", "mlp3", "dnn5", "ae", "lm")
_crc64 = crcmod.predefined.mkCrcFun("crc-64-we")


def crc64(data):
    return _crc64(data)


def _std_out(std, mats):
    if std is not None:
        mats["std.mean"] = std.mean
        mats["std.scale"] = std.scale


def _std_in(mats):
    if "std.mean" in mats:
        return Standardizer(mats["std.mean"], mats["std.scale"])
    return None


def _encode(model):
    mats = {}
    header = {"kind": getattr(model, "kind", None)}
    if isinstance(model, RidgeModel):
        header["arch"] = list(model.arch)
        header["lam"] = model.lam
        mats["W"], mats["b"] = model.W, model.b
        _std_out(model.standardizer, mats)
    elif isinstance(model, MlpModel):
        header["arch"] = list(model.arch)
        header["activation"] = model.activation
        header["log"] = [list(r) for r in model.log]
        header["epochs_done"] = model.epochs_done
        for k, v in model.params.items():
            mats[f"param.{k}"] = v
        _std_out(model.standardizer, mats)
    elif isinstance(model, AutoencoderStack):
        header["arch"] = list(model.arch)
        header["activation"] = model.activation
        header["losses"] = model.losses
        for i, ((we, be), (wd, bd)) in enumerate(zip(model.encoders, model.decoders)):
            mats[f"enc{i}.W"], mats[f"enc{i}.b"] = we, be
            mats[f"dec{i}.W"], mats[f"dec{i}.b"] = wd, bd
        _std_out(model.standardizer, mats)
    elif isinstance(model, LanguageModel):
        header["arch"] = list(model.arch)
        header["vocab"] = model.vocab.tokens
        header["log"] = [list(r) for r in model.log]
        header["epochs_done"] = model.epochs_done
        for k, v in model.params.items():
            mats[f"param.{k}"] = v
        for k, v in model.opt_state.items():
            mats[f"opt.{k}"] = v
    else:
        raise KindError(f"cannot checkpoint object of type {type(model).__name__}")
    return header, mats


def _check_arch(kind, arch):
    ok = {
        "ridge": len(arch) == 2,
        "mlp3": 2 <= len(arch) <= 3,
        "dnn5": len(arch) > 3,
        "ae": len(arch) >= 2,
        "lm": len(arch) == 5,
    }[kind]
    if not ok:
        raise KindError(f"kind {kind!r} does not match architecture {arch}")


def _decode(header, mats):
    kind = header.get("kind")
    if kind not in KINDS:
        raise KindError(f"unknown model kind {kind!r}")
    arch = tuple(header["arch"])
    _check_arch(kind, arch)
    if kind == "ridge":
        m = RidgeModel(mats["W"], mats["b"], header["lam"], _std_in(mats))
        if m.arch != arch:
            raise KindError("ridge weights disagree with architecture descriptor")
        return m
    if kind in ("mlp3", "dnn5"):
        params = {k[6:]: v for k, v in mats.items() if k.startswith("param.")}
        return MlpModel(arch, params, header["activation"], _std_in(mats),
                        [tuple(r) for r in header["log"]], header["epochs_done"])
    if kind == "ae":
        n = len(arch) - 1
        enc = [(mats[f"enc{i}.W"], mats[f"enc{i}.b"]) for i in range(n)]
        dec = [(mats[f"dec{i}.W"], mats[f"dec{i}.b"]) for i in range(n)]
        return AutoencoderStack(arch[0], arch[1:], enc, dec, header["losses"],
                                header["activation"], _std_in(mats))
    feature_dim, embed_dim, hidden, n_layers, vsize = arch
    vocab = Vocabulary(header["vocab"])
    if len(vocab) != vsize:
        raise KindError("vocabulary size disagrees with architecture descriptor")
    params = {k[6:]: v for k, v in mats.items() if k.startswith("param.")}
    opt = {k[4:]: v for k, v in mats.items() if k.startswith("opt.")}
    return LanguageModel(vocab, feature_dim, embed_dim, hidden, params, n_layers,
                         [tuple(r) for r in header["log"]], header["epochs_done"], opt)


def dumps_checkpoint(model, config=None):
    header, mats = _encode(model)
    header["config"] = config or {}
    header["matrices"] = list(mats)
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join([struct.pack("<Q", len(hbytes)), hbytes]
                       + [pack_matrix(np.asarray(mats[k])) for k in header["matrices"]])
    return (MAGIC + struct.pack("<IQ", VERSION, len(payload)) + payload
            + struct.pack("<Q", crc64(payload)))


def loads_checkpoint(buf, expect_kind=None):
    """Parse a checkpoint; returns ``(model, config)``."""
    if len(buf) < 16:
        raise FormatError("truncated checkpoint header", 0)
    if buf[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {bytes(buf[:4])!r}", 0)
    version, plen = struct.unpack_from("<IQ", buf, 4)
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads {VERSION}")
    if len(buf) != 16 + plen + 8:
        raise FormatError(f"checkpoint length {len(buf)} != declared {16 + plen + 8}", len(buf))
    payload = buf[16:16 + plen]
    (stored,) = struct.unpack_from("<Q", buf, 16 + plen)
    if crc64(payload) != stored:
        raise ChecksumError("checkpoint checksum mismatch")
    (hlen,) = struct.unpack_from("<Q", payload, 0)
    header = json.loads(payload[8:8 + hlen].decode("utf-8"))
    off = 8 + hlen
    mats = {}
    for name in header["matrices"]:
        mats[name], off = unpack_matrix(payload, off)
    if off != len(payload):
        raise FormatError("trailing bytes in checkpoint payload", 16 + off)
    if expect_kind is not None and header["kind"] != expect_kind:
        raise KindError(f"expected a {expect_kind!r} checkpoint, found {header['kind']!r}")
    return _decode(header, mats), header["config"]


def save_checkpoint(model, path, config=None):
    """Atomic write: temp file in the target directory, then rename."""
    data = dumps_checkpoint(model, config)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, expect_kind=None):
    with open(path, "rb") as fh:
        model, _ = loads_checkpoint(fh.read(), expect_kind)
    return model


def load_checkpoint_config(path):
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())[1]
