"""Report records shared by the verification modules, and their CSV/JSON forms."""

from dataclasses import asdict, dataclass, fields
from enum import Enum
import csv
import io
import json
import math

import numpy as np
from scipy import stats


class Hypothesis(str, Enum):
    H1 = "H1"
    H2I = "H2i"
    H2II = "H2ii"
    LOWER_LINEAR = "LowerLinear"
    UPPER_ONE_MINUS_ETA = "UpperOneMinusEta"
    HOLDER_TIME = "HolderTime"
    HOLDER_SPACE = "HolderSpace"
    DERIVATIVE_SCALING = "DerivativeScaling"


@dataclass(frozen=True)
class ScalingReport:
    hypothesis: Hypothesis
    fitted_exponent: float
    reference_exponent: float
    r_squared: float
    passed: bool
    tolerance: float = 0.02
    bound: float = math.nan

    def row(self):
        return {
            "hypothesis": self.hypothesis.value,
            "fitted": self.fitted_exponent,
            "reference": self.reference_exponent,
            "r2": self.r_squared,
            "pass": self.passed,
        }


SCALING_COLUMNS = ("hypothesis", "fitted", "reference", "r2", "pass")


def loglog_fit(x, y):
    """Least-squares slope of log y against log x; returns (slope, intercept, r^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log regression needs strictly positive data")
    res = stats.linregress(np.log(x), np.log(y))
    return float(res.slope), float(res.intercept), float(res.rvalue**2)


def exponent_report(hyp, x, y, reference, tol=0.02, r2_min=0.999):
    slope, _, r2 = loglog_fit(x, y)
    ok = abs(slope - reference) <= tol and r2 >= r2_min
    return ScalingReport(hyp, slope, reference, r2, bool(ok), tol)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def scaling_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCALING_COLUMNS)
    for r in reports:
        row = r.row()
        w.writerow([_fmt(row[c]) for c in SCALING_COLUMNS])
    return buf.getvalue()


def to_jsonable(obj):
    """Plain-data view of report dataclasses, enums and numpy values."""
    if isinstance(obj, Enum):
        return obj.value
    if hasattr(obj, "__dataclass_fields__"):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(obj):
    """Deterministic JSON text (sorted keys, shortest float repr)."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


__all__ = ["Hypothesis", "ScalingReport", "loglog_fit", "exponent_report", "scaling_csv",
           "to_jsonable", "dumps", "asdict"]
