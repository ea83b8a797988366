"""Checkpoint files: "MTVL1\\n" magic, a text manifest of (name, dtype,
shape) entries, then little-endian float32 payloads in manifest order.
Save -> load -> save is byte-identical.
"""

import numpy as np

MAGIC = b"MTVL1\n"


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays):
    """arrays: ordered name -> numpy array; everything stored as <f4."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{len(arrays)}\n".encode("ascii"))
        payloads = []
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype="<f4")
            if arr.ndim:
                arr = np.ascontiguousarray(arr)
            shape = ",".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
            fh.write(f"{name} f4 {shape}\n".encode("ascii"))
            payloads.append(arr)
        for arr in payloads:
            fh.write(arr.tobytes())


def load_arrays(path):
    """Returns ordered name -> float32 array; validates magic and sizes."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise CheckpointError("bad magic: not a checkpoint file")
    body = raw[len(MAGIC):]
    try:
        count_line, body = body.split(b"\n", 1)
        count = int(count_line)
    except ValueError:
        raise CheckpointError("corrupt header: entry count unreadable")
    entries = []
    for _ in range(count):
        try:
            line, body = body.split(b"\n", 1)
        except ValueError:
            raise CheckpointError("corrupt header: truncated manifest")
        parts = line.decode("ascii").split()
        if len(parts) != 3:
            raise CheckpointError(f"corrupt manifest line: {line!r}")
        name, dtype, shape_s = parts
        if dtype != "f4":
            raise CheckpointError(f"unsupported dtype '{dtype}' for '{name}'")
        shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split(","))
        entries.append((name, shape))
    out = {}
    offset = 0
    for name, shape in entries:
        n = int(np.prod(shape)) if shape else 1
        nbytes = 4 * n
        if offset + nbytes > len(body):
            raise CheckpointError(f"truncated payload at '{name}'")
        out[name] = np.frombuffer(body[offset:offset + nbytes], dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise CheckpointError("trailing bytes after final payload")
    return out


def save_state(path, state, adam=None):
    """Model parameters plus (optionally) the full optimizer state."""
    arrays = {name: p.data for name, p in state.params.items()}
    if adam is not None:
        arrays["optim.learning_rate"] = np.array(adam.learning_rate)
        arrays["optim.beta1"] = np.array(adam.beta1)
        arrays["optim.beta2"] = np.array(adam.beta2)
        arrays["optim.epsilon"] = np.array(adam.epsilon)
        arrays["optim.step_count"] = np.array(float(adam.step_count))
        for name in state.params:
            if name in adam.first_moment:
                arrays[f"optim.m.{name}"] = adam.first_moment[name]
                arrays[f"optim.v.{name}"] = adam.second_moment[name]
    save_arrays(path, arrays)


def load_state(path, state, adam=None):
    """Load parameters into an existing ModelState; shapes must match."""
    from .optim import AdamState

    arrays = load_arrays(path)
    for name, p in state.params.items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing parameter '{name}'")
        if arrays[name].shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for '{name}': {arrays[name].shape} vs {p.data.shape}")
        p.data = arrays[name].astype(state.dtype)
        p.grad = None
    if adam is None:
        adam = AdamState()
    if "optim.step_count" in arrays:
        adam.learning_rate = float(arrays["optim.learning_rate"])
        adam.beta1 = float(arrays["optim.beta1"])
        adam.beta2 = float(arrays["optim.beta2"])
        adam.epsilon = float(arrays["optim.epsilon"])
        adam.step_count = int(arrays["optim.step_count"])
        for name in state.params:
            key = f"optim.m.{name}"
            if key in arrays:
                adam.first_moment[name] = arrays[key].astype(state.dtype)
                adam.second_moment[name] = arrays[f"optim.v.{name}"].astype(state.dtype)
    return adam
