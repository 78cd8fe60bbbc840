"""Telemetry files: per-epoch CSV and per-batch JSONL.

Column order and field names are part of the on-disk contract
(``TELEMETRY_VERSION``). Floats are written with ``repr`` so files are
byte-identical across identical runs.
"""

from __future__ import annotations

import csv
import json

from .errors import DataError

TELEMETRY_VERSION = 1

EPOCH_COLUMNS = (
    "epoch", "lr", "clean_train_acc", "adv_train_acc", "gap", "clean_val_acc", "pgd_val_acc",
    "fosc_mean", "sgcs_mean", "w_grad_norm_mean", "ce_norm_mean", "kl_norm_mean",
    "grad_cos_mean", "guard_triggered", "noise_batches_applied",
)
BATCH_FIELDS = ("step", "w_grad_norm", "ce_norm", "kl_norm", "grad_cosine_similarity")

_INT_COLUMNS = {"epoch", "noise_batches_applied"}
_BOOL_COLUMNS = {"guard_triggered"}


def _fmt(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _get(rec, name):
    return rec[name] if isinstance(rec, dict) else getattr(rec, name)


def write_epochs_csv(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(EPOCH_COLUMNS) + "\n")
        for rec in records:
            fh.write(",".join(_fmt(_get(rec, c)) for c in EPOCH_COLUMNS) + "\n")


def read_epochs_csv(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != EPOCH_COLUMNS:
            raise DataError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            try:
                row = {}
                for c in EPOCH_COLUMNS:
                    if c in _INT_COLUMNS:
                        row[c] = int(raw[c])
                    elif c in _BOOL_COLUMNS:
                        row[c] = raw[c] not in ("0", "false", "False", "")
                    else:
                        row[c] = float(raw[c])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            rows.append(row)
    return rows


def write_batches_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for rec in records:
            fh.write(json.dumps({k: _get(rec, k) for k in BATCH_FIELDS}) + "\n")


def read_batches_jsonl(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
