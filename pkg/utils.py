"""
Shared helpers: busy-wait timing, per-row cost timing, array payload encoding
and small JSON/number utilities used across the optimizer.
"""

import base64
import io
import json
import math
import time
import zipfile

import numpy as np

ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def spin_wait(microseconds):
    """
    Busy-wait for the given number of microseconds.
    Sleep granularity is far coarser than per-row feature costs, so we spin.
    """
    if microseconds <= 0:
        return
    deadline = time.perf_counter_ns() + int(microseconds * 1000)
    while time.perf_counter_ns() < deadline:
        pass


def median_us_per_row(fn, n_rows, repetitions=3):
    """
    Run fn() `repetitions` times and return the median wall time in
    microseconds, divided by n_rows.
    """
    assert repetitions >= 1
    timings = []
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        timings.append(time.perf_counter() - start)
    return float(np.median(timings)) * 1e6 / max(n_rows, 1)


def round_half_up(x):
    return int(math.floor(x + 0.5))


def encode_arrays(arrays):
    """
    Pack a dict of numpy arrays into an opaque base64 string. The container is
    an npz archive with fixed member timestamps, so equal arrays encode to
    equal text.
    """
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_DEFLATED) as archive:
        for key in sorted(arrays):
            member = io.BytesIO()
            np.save(member, np.asarray(arrays[key]), allow_pickle=False)
            info = zipfile.ZipInfo(key + ".npy", date_time=ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            archive.writestr(info, member.getvalue())
    return base64.b64encode(buffer.getvalue()).decode("ascii")


def decode_arrays(text):
    buffer = io.BytesIO(base64.b64decode(text.encode("ascii")))
    with np.load(buffer, allow_pickle=False) as npz:
        return {k: npz[k] for k in npz.files}


def write_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)
