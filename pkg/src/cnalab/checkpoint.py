"""Versioned binary checkpoints.

Layout (all integers little-endian, documented in README):

    bytes 0-3   magic "CNAC"
    u32         format version (currently 1)
    u32         byte length of the metadata block
    ...         metadata: UTF-8 JSON holding the layer table (specs,
                input shape, depth-map flags, init seed), the epoch
                counter, optimizer config and step count, caller seeds,
                and the ordered block table [{name, shape}, ...]
    ...         one raw little-endian float64 array per table entry,
                row-major, concatenated in table order

A round trip reproduces parameters bit-identically: arrays are written
with tobytes() and read back with frombuffer(), no text formatting.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .nn import LayerSpec, Network
from .optim import OptConfig, OptState

MAGIC = b"CNAC"
VERSION = 1


@dataclass
class Checkpoint:
    version: int
    net: Network
    opt_config: OptConfig
    opt_state: OptState
    epoch: int
    seeds: dict = field(default_factory=dict)


def _block_name(prefix, idx, name):
    return f"{prefix}/{idx}/{name}"


def save_checkpoint(net, opt_config, opt_state, epoch, path, seeds=None):
    blocks = []
    arrays = []
    for idx, name, arr in net.param_items():
        blocks.append({"name": _block_name("param", idx, name), "shape": list(arr.shape)})
        arrays.append(arr)
    for prefix, table in (("adam_m", opt_state.m), ("adam_v", opt_state.v)):
        for idx in sorted(table):
            for name in sorted(table[idx]):
                arr = table[idx][name]
                blocks.append({"name": _block_name(prefix, idx, name), "shape": list(arr.shape)})
                arrays.append(arr)

    meta = {
        "specs": [s.to_dict() for s in net.specs],
        "input_shape": list(net.input_shape),
        "aggregation": net.aggregation,
        "include_output": net.include_output,
        "init_seed": net.init_seed,
        "epoch": int(epoch),
        "opt": opt_config.to_dict(),
        "opt_t": int(opt_state.t),
        "seeds": seeds or {},
        "blocks": blocks,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(VERSION).tobytes())
        fh.write(np.uint32(len(meta_bytes)).tobytes())
        fh.write(meta_bytes)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    version = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    meta_len = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    if len(raw) < 12 + meta_len:
        raise FormatError(f"{path}: truncated metadata")
    try:
        meta = json.loads(raw[12:12 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt metadata ({exc})") from exc

    offset = 12 + meta_len
    tensors = {}
    for block in meta["blocks"]:
        shape = tuple(block["shape"])
        nbytes = int(np.prod(shape)) * 8
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: truncated parameter block {block['name']}")
        tensors[block["name"]] = np.frombuffer(
            raw[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after last block")

    specs = [LayerSpec.from_dict(d) for d in meta["specs"]]
    params = {}
    state = OptState(t=meta["opt_t"])
    for name, arr in tensors.items():
        prefix, idx, pname = name.split("/")
        idx = int(idx)
        if prefix == "param":
            params.setdefault(idx, {})[pname] = arr
        elif prefix == "adam_m":
            state.m.setdefault(idx, {})[pname] = arr
        elif prefix == "adam_v":
            state.v.setdefault(idx, {})[pname] = arr
        else:
            raise FormatError(f"{path}: unknown block prefix {prefix!r}")

    input_shape = tuple(meta["input_shape"])
    shape = input_shape
    layer_shapes = []
    from .nn import _propagate_shape
    for spec in specs:
        shape = _propagate_shape(spec, shape)
        layer_shapes.append(shape)
    param_indices = sorted(params)
    depth_map = param_indices if meta["include_output"] else param_indices[:-1]
    net = Network(specs=specs, params=params, input_shape=input_shape,
                  layer_shapes=layer_shapes, depth_map=depth_map,
                  aggregation=meta["aggregation"], include_output=meta["include_output"],
                  init_seed=meta["init_seed"])
    return Checkpoint(version=version, net=net, opt_config=OptConfig.from_dict(meta["opt"]),
                      opt_state=state, epoch=meta["epoch"], seeds=meta.get("seeds", {}))
