"""Binary checkpoints for teachers and students.

Layout: 8 magic bytes, a little-endian uint32 header length, a UTF-8 JSON
header, the flat network parameters as little-endian float64, and for
students the K log-stds in the same encoding.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .nets import Denoiser
from .schedule import schedule_from_descriptor
from .student import CoarseSchedule, StudentPolicy

MAGIC = b"SDCKPT\x00\x01"
FORMAT_VERSION = 1


def _header(net, schedule, kind):
    return {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "layer_widths": [int(w) for w in net.layer_widths],
        "activation": net.activation,
        "data_dim": net.data_dim,
        "time_dim": net.time_dim,
        "cond_dim": net.cond_dim,
        "T_ref": net.T_ref,
        "seed": int(net.seed),
        "schedule": schedule.descriptor(),
        "n_params": int(net.params.size),
    }


def _write(path, header, blocks):
    path = Path(path)
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            for b in blocks:
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def save_teacher(path, net, schedule):
    return _write(path, _header(net, schedule, "teacher"), [net.params])


def save_student(path, policy):
    header = _header(policy.net, policy.schedule, "student")
    header["coarse"] = policy.coarse.descriptor()
    header["freeze_log_std"] = bool(policy.freeze_log_std)
    return _write(path, header, [policy.net.params, policy.log_stds])


def read_checkpoint(path):
    """Returns (header dict, list of float64 blocks)."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path} is not a checkpoint (bad magic)")
    off = len(MAGIC)
    try:
        (hlen,) = struct.unpack("<I", data[off:off + 4])
        off += 4
        header = json.loads(data[off:off + hlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: unreadable checkpoint header ({exc})") from exc
    off += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {header.get('format_version')}")
    sizes = [header["n_params"]] + ([header["coarse"]["K"]] if header["kind"] == "student" else [])
    if len(data) - off != 8 * sum(sizes):
        raise ValidationError(f"{path}: payload size does not match the header")
    blocks = []
    for n in sizes:
        blocks.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64))
        off += 8 * n
    return header, blocks


def _net_from_header(h, params):
    return Denoiser(h["data_dim"], tuple(h["layer_widths"][1:-1]), h["time_dim"], h["cond_dim"], h["T_ref"],
                    h["activation"], params=params, seed=h["seed"])


def load_checkpoint(path):
    """Returns (Denoiser, schedule) for teachers or a StudentPolicy for students."""
    h, blocks = read_checkpoint(path)
    net = _net_from_header(h, blocks[0])
    schedule = schedule_from_descriptor(h["schedule"])
    if h["kind"] == "teacher":
        return net, schedule
    c = h["coarse"]
    coarse = CoarseSchedule(T=c["T"], K=c["K"], taus=tuple(c["taus"]), strategy=c["strategy"])
    return StudentPolicy(net, schedule, coarse, log_stds=blocks[1], freeze_log_std=h["freeze_log_std"])
