"""Deterministic persistence helpers shared by datasets, checkpoints and reports."""
import hashlib
import io
import json
import zipfile

import numpy as np

FORMAT_VERSION = 1

# Fixed zip timestamp so identical arrays produce byte-identical files.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_npz(path, arrays, meta):
    """Write ``arrays`` plus a JSON ``meta`` record as an uncompressed npz.

    ``np.load`` reads the result. Member order and timestamps are fixed.
    """
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH), buf.getvalue())
        meta_arr = np.frombuffer(canonical_json(meta).encode("utf-8"), dtype=np.uint8)
        buf = io.BytesIO()
        np.lib.format.write_array(buf, meta_arr, allow_pickle=False)
        zf.writestr(zipfile.ZipInfo("__meta__.npy", date_time=_ZIP_EPOCH), buf.getvalue())


def read_npz(path):
    """Inverse of :func:`write_npz`; returns ``(arrays, meta)``."""
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
        if "__meta__" not in data.files:
            raise ValueError(f"{path}: missing metadata record")
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
    return arrays, meta


def provenance_lines(provenance):
    """Comment header lines for CSV outputs, ``# key: value``."""
    return "".join(f"# {k}: {provenance[k]}\n" for k in sorted(provenance))


def write_csv(path, frame, provenance=None, float_format="%.10g"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if provenance:
            fh.write(provenance_lines(provenance))
        frame.to_csv(fh, index=False, float_format=float_format, lineterminator="\n")
