"""Command-line front end.

File formats
------------
model document (JSON)
    ``{"m": int, "nu": [int], "theta_I": [float], "theta_J": [float], "R": [float]}``
    with ``R`` optional (``m*m`` entries, row-major). No other keys allowed.
matrix (CSV)
    no header, row-major, 17 significant digits.
time series (CSV)
    header ``t,u1..um,y1..ym`` (``simulate`` also accepts ``t,u1..um``).
fit trace (CSV)
    header ``iter,cost,grad_inf,lambda,step_norm,rho``.
identify config (JSON)
    ``{"model": <model document>, "max_iters", "grad_tol", "lambda0", "engine"}``;
    only ``model`` is required.

Exit codes: 0 success, 1 validation failure, 2 usage or parse error.
"""

import argparse
import io
import json
import sys
from dataclasses import dataclass

import numpy as np

from .errors import BadNoiseError, DimensionError, LSMetricError, ParseError
from .natgrad import FitConfig, fit, simulate
from .stochastic import NoiseModel, metric_T, metric_U
from .sysrep import KroneckerStructure, ParamVector, build_state_space, sample_stable
from .tensor import DEFAULT_GRID, ENGINES, compute_metric, cross_validate

MODEL_KEYS = ("m", "nu", "theta_I", "theta_J", "R")
CONFIG_KEYS = ("model", "max_iters", "grad_tol", "lambda0", "engine")
USAGE_CODES = {"E_PARSE", "E_DIM", "E_BADNOISE", "E_RANGE"}


@dataclass(frozen=True)
class ModelDocument:
    m: int
    nu: tuple
    theta_I: tuple
    theta_J: tuple
    R: tuple | None = None

    @property
    def structure(self) -> KroneckerStructure:
        return KroneckerStructure(self.nu)

    @property
    def theta(self) -> ParamVector:
        return ParamVector.from_groups(self.structure, self.theta_I, self.theta_J)

    @property
    def noise(self) -> NoiseModel | None:
        if self.R is None:
            return None
        return NoiseModel(np.array(self.R).reshape(self.m, self.m))


def _int(value, name):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"{name} must be an integer")
    return value


def _floats(value, name):
    if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
        raise ParseError(f"{name} must be a list of numbers")
    return tuple(float(v) for v in value)


def model_from_dict(obj) -> ModelDocument:
    if not isinstance(obj, dict):
        raise ParseError("model document must be a JSON object")
    unknown = set(obj) - set(MODEL_KEYS)
    if unknown:
        raise ParseError(f"unknown keys {sorted(unknown)}")
    missing = [k for k in MODEL_KEYS[:4] if k not in obj]
    if missing:
        raise ParseError(f"missing keys {missing}")
    m = _int(obj["m"], "m")
    if not isinstance(obj["nu"], list):
        raise ParseError("nu must be a list of integers")
    nu = tuple(_int(v, "nu") for v in obj["nu"])
    theta_I = _floats(obj["theta_I"], "theta_I")
    theta_J = _floats(obj["theta_J"], "theta_J")
    R = None if obj.get("R") is None else _floats(obj["R"], "R")
    if m < 1 or len(nu) != m or any(v < 1 for v in nu):
        raise DimensionError(f"nu={list(nu)} is not a valid structure for m={m}")
    mn = m * sum(nu)
    if len(theta_I) != mn or len(theta_J) != mn:
        raise DimensionError(f"theta_I and theta_J must each have {mn} entries")
    doc = ModelDocument(m, nu, theta_I, theta_J, R)
    if R is not None:
        if len(R) != m * m:
            raise DimensionError(f"R must have {m * m} entries")
        doc.noise  # validates symmetry and definiteness
    return doc


def parse_model_document(text: str) -> ModelDocument:
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    return model_from_dict(obj)


def model_to_dict(doc: ModelDocument) -> dict:
    out = {"m": doc.m, "nu": list(doc.nu), "theta_I": list(doc.theta_I), "theta_J": list(doc.theta_J)}
    if doc.R is not None:
        out["R"] = list(doc.R)
    return out


def serialize_model_document(doc: ModelDocument) -> str:
    return json.dumps(model_to_dict(doc), indent=2) + "\n"


def document_from_theta(theta: ParamVector, R=None) -> ModelDocument:
    s = theta.structure
    return ModelDocument(
        s.m,
        s.nu,
        tuple(float(v) for v in theta.theta_I),
        tuple(float(v) for v in theta.theta_J),
        None if R is None else tuple(float(v) for v in np.asarray(R).reshape(-1)),
    )


def format_matrix(G) -> str:
    rows = [",".join(f"{v:.16e}" for v in row) for row in np.atleast_2d(G)]
    return "\n".join(rows) + "\n"


def read_series(text: str, m: int, require_output: bool = True) -> tuple:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty time-series file")
    header = [h.strip() for h in lines[0].split(",")]
    u_cols = [f"u{i + 1}" for i in range(m)]
    y_cols = [f"y{i + 1}" for i in range(m)]
    if header == ["t"] + u_cols + y_cols:
        has_y = True
    elif header == ["t"] + u_cols and not require_output:
        has_y = False
    else:
        raise ParseError(f"unexpected time-series header {','.join(header)}")
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    except ValueError as exc:
        raise ParseError(f"non-numeric time-series entry: {exc}") from exc
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != len(header):
        raise ParseError("ragged or empty time-series file")
    if not np.array_equal(data[:, 0], np.arange(data.shape[0])):
        raise ParseError("t must ascend from 0 in unit steps")
    u = data[:, 1 : 1 + m]
    y = data[:, 1 + m :] if has_y else None
    return u, y


def format_series(u, y) -> str:
    m = u.shape[1]
    out = io.StringIO()
    out.write(",".join(["t"] + [f"u{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(m)]) + "\n")
    for t in range(u.shape[0]):
        out.write(",".join([str(t)] + [f"{v:.16e}" for v in np.concatenate([u[t], y[t]])]) + "\n")
    return out.getvalue()


def format_trace(trace) -> str:
    out = io.StringIO()
    out.write("iter,cost,grad_inf,lambda,step_norm,rho\n")
    for r in trace.records:
        vals = [r.cost, r.grad_inf, r.lam, r.step_norm, r.rho]
        out.write(",".join([str(r.iter)] + [f"{v:.16e}" for v in vals]) + "\n")
    return out.getvalue()


def _read(path) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from exc


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _load_model(path) -> ModelDocument:
    return parse_model_document(_read(path))


def cmd_tensor(args):
    doc = _load_model(args.model)
    G = compute_metric(doc.theta, args.engine, tol=args.tol, N=args.grid, threads=args.threads)
    _write(args.out, format_matrix(G.G))
    return 0


def cmd_validate(args):
    doc = _load_model(args.model)
    report = cross_validate(doc.theta, args.tol, threads=args.threads)
    for pair, d in report.discrepancies.items():
        print(f"{pair} {d:.6e}")
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def cmd_stochastic(args):
    doc = _load_model(args.model)
    if doc.R is None:
        raise BadNoiseError("stochastic-tensor requires R in the model document")
    model = build_state_space(doc.theta)
    fn = metric_U if args.which == "U" else metric_T
    _write(args.out, format_matrix(fn(model, doc.noise, args.tol).G))
    return 0


def cmd_simulate(args):
    doc = _load_model(args.model)
    u, _ = read_series(_read(args.input), doc.m, require_output=False)
    y = simulate(build_state_space(doc.theta), u)
    _write(args.out, format_series(u, y))
    return 0


def cmd_identify(args):
    try:
        cfg = json.loads(_read(args.config))
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(cfg, dict) or "model" not in cfg:
        raise ParseError("identify config must be an object with a 'model' entry")
    unknown = set(cfg) - set(CONFIG_KEYS)
    if unknown:
        raise ParseError(f"unknown keys {sorted(unknown)}")
    doc = model_from_dict(cfg["model"])
    engine = cfg.get("engine", "stein")
    if engine not in ENGINES:
        raise ParseError(f"engine must be one of {ENGINES}")
    u, y = read_series(_read(args.data), doc.m)
    config = FitConfig(
        doc.structure,
        doc.theta,
        max_iters=_int(cfg.get("max_iters", 200), "max_iters"),
        grad_tol=float(cfg.get("grad_tol", 1e-10)),
        lambda0=float(cfg.get("lambda0", 0.0)),
        engine=engine,
    )
    trace = fit(config, u, y)
    _write(args.out_trace, format_trace(trace))
    print(f"status {trace.status}")
    print("theta " + " ".join(f"{v:.16e}" for v in trace.theta))
    return 0


def cmd_make_example(args):
    try:
        nu = [int(v) for v in args.structure.split(",")]
    except ValueError as exc:
        raise ParseError(f"bad structure {args.structure!r}") from exc
    theta = sample_stable(KroneckerStructure(nu), args.seed, args.rho_max)
    _write(args.out, serialize_model_document(document_from_theta(theta)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsmetric", description="Metric tensors of linear systems.")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for per-entry evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tensor", help="compute G(theta) for a model document")
    p.add_argument("--model", required=True)
    p.add_argument("--engine", choices=ENGINES, default="stein")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--grid", type=int, default=DEFAULT_GRID)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_tensor)

    p = sub.add_parser("validate", help="cross-validate all engines")
    p.add_argument("--model", required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stochastic-tensor", help="U- or T-based tensor of the innovation model")
    p.add_argument("--model", required=True)
    p.add_argument("--which", choices=("U", "T"), required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_stochastic)

    p = sub.add_parser("simulate", help="simulate the model on an input series")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("identify", help="natural-gradient prediction-error fit")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-trace", default="-")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("make-example", help="write a random stable model document")
    p.add_argument("--structure", required=True, help="comma-separated Kronecker indices, e.g. 2,1")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--rho-max", type=float, default=0.9)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_make_example)
    return parser


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except LSMetricError as exc:
        print(str(exc), file=sys.stderr)
        return 2 if exc.code in USAGE_CODES else 1


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
