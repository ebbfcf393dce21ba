"""Binary persistence for trained bundles.

Layout: magic ``RCBN``, a u32-length-prefixed JSON header (format
version, full training config, array manifest), then every float64 array
in manifest order as a u64 entry count plus little-endian payload, and a
trailing CRC-32 of all preceding bytes. Forest trees ride along as
(n_nodes, 5) arrays of [feature, threshold, left, right, prob]; integer
fields round-trip exactly through float64.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .classifiers import Forest, LinearSvm, MlpHead, Tree
from .errors import CorruptionError, FormatError, VersionError
from .layers import DenseLayer
from .network import CodeanParams, RCodeanNet, SkipSpec, LAYER_ORDER
from .pipeline import (BUNDLE_FORMAT_VERSION, ModelBundle, N_SOURCES,
                       PatchWeights)
from .tensor import Mat

BUNDLE_MAGIC = b"RCBN"


def _tree_to_array(tree: Tree) -> np.ndarray:
    return np.column_stack([tree.feature.astype(np.float64), tree.threshold,
                            tree.left.astype(np.float64),
                            tree.right.astype(np.float64), tree.prob])


def _tree_from_array(arr: np.ndarray) -> Tree:
    return Tree(feature=arr[:, 0].astype(np.int64), threshold=arr[:, 1].copy(),
                left=arr[:, 2].astype(np.int64), right=arr[:, 3].astype(np.int64),
                prob=arr[:, 4].copy())


def _enumerate_arrays(bundle: ModelBundle) -> list[tuple[str, np.ndarray]]:
    arrays: list[tuple[str, np.ndarray]] = []
    for s, net in enumerate(bundle.nets):
        for name, arr in net.parameters():
            arrays.append((f"net{s}.{name}", arr))
    for s, head in enumerate(bundle.heads):
        for name, arr in head.parameters():
            arrays.append((f"head{s}.{name}", arr))
    arrays.append(("patch_weights", bundle.patch_weights.values))
    for name, arr in bundle.stage2_mlp.parameters():
        arrays.append((f"stage2_mlp.{name}", arr))
    for a, per_attr in enumerate(bundle.forest.trees):
        for t, tree in enumerate(per_attr):
            arrays.append((f"forest.attr{a}.tree{t}", _tree_to_array(tree)))
    arrays.append(("svm.weights", bundle.svm.weights))
    arrays.append(("svm.biases", bundle.svm.biases.reshape(-1, 1)))
    return arrays


def save_bundle(bundle: ModelBundle, path) -> None:
    arrays = _enumerate_arrays(bundle)
    header = {
        "format_version": bundle.version,
        "config": bundle.config,
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [BUNDLE_MAGIC, struct.pack("<I", len(header_bytes)), header_bytes]
    for _, arr in arrays:
        payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        chunks.append(struct.pack("<Q", arr.size))
        chunks.append(payload)
    body = b"".join(chunks)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def _rebuild_net(config: dict, arrays: dict[str, np.ndarray], s: int) -> RCodeanNet:
    params = CodeanParams(alpha=config["alpha"], beta=config["beta"],
                          lam=config["lam"])
    acts = {lid: "relu" for lid in LAYER_ORDER}
    acts["dec3"] = "linear"
    layers = {}
    for lid in LAYER_ORDER:
        w = arrays[f"net{s}.{lid}.weight"]
        b = arrays[f"net{s}.{lid}.bias"]
        layers[lid] = DenseLayer(Mat(w), Mat(b), acts[lid], name=lid)
    skips = []
    for src, dst, kind in config["skip_layout"]:
        proj_name = f"net{s}.skip.{src}->{dst}.projection"
        proj = Mat(arrays[proj_name]) if proj_name in arrays else None
        skips.append(SkipSpec(src, dst, kind, proj))
    return RCodeanNet(encoder=[layers[lid] for lid in LAYER_ORDER[:3]],
                      decoder=[layers[lid] for lid in LAYER_ORDER[3:]],
                      skips=skips, params=params)


def _rebuild_head(arrays: dict[str, np.ndarray], prefix: str) -> MlpHead:
    layers = []
    acts = ("relu", "relu", "sigmoid")
    for i in range(3):
        w = arrays[f"{prefix}.layer{i}.weight"]
        b = arrays[f"{prefix}.layer{i}.bias"]
        layers.append(DenseLayer(Mat(w), Mat(b), acts[i], name=f"head{i}"))
    return MlpHead(layers)


def load_bundle(path) -> ModelBundle:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != BUNDLE_MAGIC:
        raise FormatError(f"{path}: not a bundle file (bad magic)")
    body, crc_bytes = data[:-4], data[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(body):
        raise CorruptionError(f"{path}: checksum mismatch")
    header_len = struct.unpack("<I", body[4:8])[0]
    try:
        header = json.loads(body[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from None
    version = header.get("format_version")
    if version != BUNDLE_FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {version!r}")
    config = header["config"]

    arrays: dict[str, np.ndarray] = {}
    pos = 8 + header_len
    for entry in header["arrays"]:
        if pos + 8 > len(body):
            raise FormatError(f"{path}: truncated array table")
        count = struct.unpack("<Q", body[pos:pos + 8])[0]
        pos += 8
        nbytes = count * 8
        if pos + nbytes > len(body):
            raise FormatError(f"{path}: truncated payload for {entry['name']}")
        flat = np.frombuffer(body[pos:pos + nbytes], dtype="<f8")
        pos += nbytes
        shape = tuple(entry["shape"])
        if int(np.prod(shape)) != count:
            raise FormatError(f"{path}: array {entry['name']} count {count} "
                              f"does not match shape {shape}")
        arrays[entry["name"]] = flat.reshape(shape).copy()

    nets = [_rebuild_net(config, arrays, s) for s in range(N_SOURCES)]
    heads = [_rebuild_head(arrays, f"head{s}") for s in range(N_SOURCES)]
    weights = PatchWeights(arrays["patch_weights"])
    stage2 = _rebuild_head(arrays, "stage2_mlp")
    k = int(config["k"])
    trees = []
    for a in range(k):
        per_attr = []
        t = 0
        while f"forest.attr{a}.tree{t}" in arrays:
            per_attr.append(_tree_from_array(arrays[f"forest.attr{a}.tree{t}"]))
            t += 1
        trees.append(per_attr)
    forest = Forest(trees=trees, n_features=int(arrays["svm.weights"].shape[1]))
    svm = LinearSvm(weights=arrays["svm.weights"],
                    biases=arrays["svm.biases"].reshape(-1),
                    reg=float(config["svm_reg"]))
    return ModelBundle(config=config, nets=nets, heads=heads,
                       patch_weights=weights, stage2_mlp=stage2,
                       forest=forest, svm=svm, version=version)
