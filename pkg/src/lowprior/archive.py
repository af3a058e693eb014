"""Byte-stable containers for arrays plus JSON metadata.

``np.savez`` stamps zip members with the wall-clock time, so two identical
saves differ on disk. These helpers pin every zip header field instead.
"""
from __future__ import annotations

import io
import json
import zipfile

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    with zipfile.ZipFile(path, "w") as zf:
        def put(name, data: bytes):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)

        put("meta.json", dumps_json(meta or {}).encode())
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            put(f"{name}.npy", buf.getvalue())


def load_arrays(path):
    arrays = {}
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    return arrays, meta
