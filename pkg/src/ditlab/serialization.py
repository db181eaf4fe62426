"""Binary tensor fixtures, checkpoints, and the PPM eyeball-viewer.

Tensor layout (the format golden tests read): rank as a little-endian
int64, then each dim as little-endian int64, then the values as row-major
float32. Nothing else; no magic, no alignment padding.
"""

from __future__ import annotations

import json
import os

import numpy as np


def save_tensor(path, arr):
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    with open(path, "wb") as f:
        _write_tensor(f, arr)


def load_tensor(path):
    with open(path, "rb") as f:
        return _read_tensor(f)


def _write_tensor(f, arr):
    f.write(np.int64(arr.ndim).tobytes())
    f.write(np.asarray(arr.shape, dtype="<i8").tobytes())
    f.write(arr.astype("<f4", copy=False).tobytes())


def _read_tensor(f):
    rank = int(np.frombuffer(f.read(8), dtype="<i8")[0])
    shape = tuple(int(v) for v in np.frombuffer(f.read(8 * rank), dtype="<i8"))
    n = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
    return data.astype(np.float32)


def save_checkpoint(out_dir, network):
    """Manifest (config + ordered parameter names/shapes) + one blob file."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    with open(os.path.join(out_dir, "params.bin"), "wb") as f:
        for name, p in network.parameters().items():
            entries.append({"name": name, "shape": list(p.data.shape)})
            _write_tensor(f, np.ascontiguousarray(p.data, dtype=np.float32))
    manifest = {
        "config": network.config.to_dict(),
        "resolution": network.resolution,
        "conditioning": network.conditioning.to_dict() if network.conditioning else None,
        "params": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def load_checkpoint(ckpt_dir):
    """Returns (manifest dict, {name: float32 ndarray})."""
    with open(os.path.join(ckpt_dir, "manifest.json")) as f:
        manifest = json.load(f)
    params = {}
    with open(os.path.join(ckpt_dir, "params.bin"), "rb") as f:
        for entry in manifest["params"]:
            arr = _read_tensor(f)
            if list(arr.shape) != entry["shape"]:
                raise ValueError(
                    f"checkpoint blob out of sync at {entry['name']}: "
                    f"{list(arr.shape)} vs manifest {entry['shape']}")
            params[entry["name"]] = arr
    return manifest, params


def restore_checkpoint(network, ckpt_dir):
    manifest, params = load_checkpoint(ckpt_dir)
    own = network.parameters()
    if set(own) != set(params):
        missing = sorted(set(own) ^ set(params))
        raise ValueError(f"checkpoint/network parameter mismatch: {missing}")
    for name, t in own.items():
        t.data = params[name].astype(t.data.dtype)
    return manifest


def latent_to_rgb(latent):
    """(4,H,W) latent -> (H,W,3) uint8. Channels 0..2 as RGB in [-1,1],
    channel 3 added as brightness. Eyeball-quality only."""
    latent = np.asarray(latent, dtype=np.float32)
    rgb = latent[:3] + 0.35 * latent[3:4]
    rgb = np.clip(0.5 * (rgb + 1.0), 0.0, 1.0)
    return np.round(rgb * 255.0).astype(np.uint8).transpose(1, 2, 0)


def write_ppm(path, img):
    """Binary P6 writer; img is (H,W,3) uint8."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w, c = img.shape
    if c != 3:
        raise ValueError(f"PPM needs 3 channels, got {c}")
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_latent_grid_ppm(path, latents, pad=1):
    """Tile a batch of latents into one PPM preview."""
    imgs = [latent_to_rgb(l) for l in latents]
    h, w, _ = imgs[0].shape
    cols = int(np.ceil(np.sqrt(len(imgs))))
    rows = int(np.ceil(len(imgs) / cols))
    grid = np.zeros((rows * (h + pad) - pad, cols * (w + pad) - pad, 3), np.uint8)
    for idx, im in enumerate(imgs):
        r, c = divmod(idx, cols)
        grid[r * (h + pad):r * (h + pad) + h, c * (w + pad):c * (w + pad) + w] = im
    write_ppm(path, grid)
