"""Power unit conversions. Everything inside the package is in Watts."""

import numpy as np


def dbm_to_watt(dbm):
    out = 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)
    return float(out) if out.ndim == 0 else out


def watt_to_dbm(watt):
    out = 10.0 * np.log10(np.asarray(watt, dtype=float)) + 30.0
    return float(out) if out.ndim == 0 else out


def db_to_linear(db):
    out = 10.0 ** (np.asarray(db, dtype=float) / 10.0)
    return float(out) if out.ndim == 0 else out
