"""Batch front-end: config-driven verification runs with JSON reports.

Subcommands mirror the verification pipelines: check-gaussian decides the
exact Gaussian criteria, check-density decides the splitting property,
verify-rp chains both in front of the Monte Carlo Gram estimators, and
selftest replays the built-in closed-form oracles. Reports echo the fully
resolved configuration, so a run is reproducible from its report alone;
with identical config and seed the report bytes are identical except for
the wall_time_s field.

Exit codes: 0 all checks pass (or are inconclusive but consistent with a
pass), 1 a check failed, 2 usage, config or IO error.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .density import (
    Potential,
    ZERO_POTENTIAL,
    potential_from_obj,
    potential_to_obj,
    split_check,
)
from .gaussian import (
    Covariance,
    char_fn,
    check_gaussian_rp,
    check_theta_invariance,
    cross_block,
    decompose_pq,
    free_field_covariance,
    theta_inner,
    verify_convolution_identity,
)
from .lattice import build_lattice, positive_support
from .rp_verify import (
    FAIL,
    IllConditionedWeightsError,
    McParams,
    gram_exact_gaussian,
    gram_mc_direct,
    gram_mc_factorized,
    random_test_functions,
    schur_product,
    small_lambda_probe,
)

STRUCTURAL_PSD_FLOOR = -1e-10

DEFAULT_PSD_TOL = 1e-10
DEFAULT_INVARIANCE_TOL = 1e-12


class ConfigError(Exception):
    """Invalid configuration or unreadable input; maps to exit code 2."""


def _fail(msg):
    raise ConfigError(msg)


def write_matrix_csv(path, matrix):
    """Row-major CSV, 17 significant digits per entry."""
    rows = []
    for row in np.atleast_2d(np.asarray(matrix, dtype=np.float64)):
        rows.append(",".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def read_matrix_csv(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        _fail(f"cannot read matrix file {path}: {exc}")
    try:
        rows = [
            [float(tok) for tok in line.split(",")]
            for line in text.splitlines()
            if line.strip()
        ]
    except ValueError as exc:
        _fail(f"matrix file {path} has a non-numeric entry: {exc}")
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        _fail(f"matrix file {path} is ragged or empty")
    return np.array(rows, dtype=np.float64)


class Resolved:
    """Config after validation, defaulting and seed overrides."""

    def __init__(self, lattice, covariance, density, phis, mc, tolerances, echo):
        self.lattice = lattice
        self.covariance = covariance
        self.density = density
        self.phis = phis
        self.mc = mc
        self.tolerances = tolerances
        self.echo = echo


def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        _fail(f"cannot read config {path}: {exc}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        _fail(f"config {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        _fail(f"config {path} must be a JSON object")
    return raw


def resolve_config(raw, config_dir, seed_override=None, need_mc=False, need_density=False):
    if "lattice" not in raw:
        _fail("config is missing the 'lattice' section")
    lat_cfg = raw["lattice"]
    try:
        lattice = build_lattice(
            lat_cfg["time_extent"], lat_cfg.get("spatial_extents", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        _fail(f"invalid lattice section: {exc}")

    tol_cfg = raw.get("tolerances", {})
    tolerances = {
        "psd_tol": float(tol_cfg.get("psd_tol", DEFAULT_PSD_TOL)),
        "invariance_tol": float(tol_cfg.get("invariance_tol", DEFAULT_INVARIANCE_TOL)),
    }
    if tolerances["psd_tol"] < 0 or tolerances["invariance_tol"] < 0:
        _fail("tolerances must be nonnegative")

    mc_cfg = raw.get("mc")
    if need_mc and mc_cfg is None:
        _fail("this command needs an 'mc' section")
    mc = None
    mc_echo = None
    if mc_cfg is not None:
        if "n_samples" not in mc_cfg:
            _fail("mc section needs n_samples")
        seed = int(mc_cfg.get("seed", 0))
        if seed_override is not None:
            seed = int(seed_override)
        try:
            mc = McParams(
                n_samples=int(mc_cfg["n_samples"]),
                seed=seed,
                n_outer=int(mc_cfg.get("n_outer", 10_000)),
                n_inner=int(mc_cfg.get("n_inner", 1_000)),
                share_inner=bool(mc_cfg.get("share_inner", True)),
            )
        except ValueError as exc:
            _fail(f"invalid mc section: {exc}")
        mc_echo = {
            "n_samples": mc.n_samples,
            "seed": mc.seed,
            "n_outer": mc.n_outer,
            "n_inner": mc.n_inner,
            "share_inner": mc.share_inner,
        }

    covariance = None
    cov_echo = None
    if "covariance" in raw:
        cov_cfg = raw["covariance"]
        kind = cov_cfg.get("kind")
        if kind == "free_field":
            if "mass" not in cov_cfg:
                _fail("free_field covariance needs a mass")
            try:
                covariance = free_field_covariance(
                    lattice, float(cov_cfg["mass"]), tolerances["psd_tol"]
                )
            except ValueError as exc:
                _fail(f"invalid covariance: {exc}")
            cov_echo = {"kind": "free_field", "mass": float(cov_cfg["mass"])}
        elif kind == "explicit":
            if "matrix_file" not in cov_cfg:
                _fail("explicit covariance needs a matrix_file")
            matrix = read_matrix_csv(Path(config_dir) / cov_cfg["matrix_file"])
            if matrix.shape != (lattice.site_count, lattice.site_count):
                _fail(
                    f"explicit covariance is {matrix.shape}, lattice needs "
                    f"({lattice.site_count}, {lattice.site_count})"
                )
            try:
                covariance = Covariance(matrix, tolerances["psd_tol"])
            except ValueError as exc:
                _fail(f"invalid covariance: {exc}")
            cov_echo = {
                "kind": "explicit",
                "matrix_file": str(cov_cfg["matrix_file"]),
                "matrix": matrix.tolist(),
            }
        else:
            _fail(f"unknown covariance kind {kind!r}")

    density = None
    density_echo = None
    if "density" in raw:
        try:
            density = potential_from_obj(lattice, raw["density"])
        except (KeyError, TypeError, ValueError) as exc:
            _fail(f"invalid density: {exc}")
        density_echo = potential_to_obj(lattice, density)
    if need_density and density is None:
        _fail("this command needs a 'density' section")

    phis = None
    tf_echo = None
    if "test_functions" in raw:
        tf_cfg = raw["test_functions"]
        kind = tf_cfg.get("kind", "random")
        if kind == "random":
            count = int(tf_cfg.get("count", 4))
            if count < 1:
                _fail("test_functions count must be >= 1")
            tf_seed = int(tf_cfg.get("seed", mc.seed if mc is not None else 0))
            phis = random_test_functions(lattice, count, tf_seed)
            tf_echo = {"kind": "random", "count": count, "seed": tf_seed}
        elif kind == "explicit":
            vectors = tf_cfg.get("vectors")
            if not vectors:
                _fail("explicit test_functions need a nonempty 'vectors' list")
            phis = []
            for i, vec in enumerate(vectors):
                arr = np.asarray(vec, dtype=np.float64)
                if arr.shape != (lattice.site_count,):
                    _fail(f"test function {i} has length {arr.shape}, lattice has {lattice.site_count} sites")
                if not positive_support(lattice, arr):
                    _fail(f"test function {i} is not supported on positive times")
                phis.append(arr)
            tf_echo = {"kind": "explicit", "vectors": [list(map(float, v)) for v in vectors]}
        else:
            _fail(f"unknown test_functions kind {kind!r}")

    echo = {"lattice": {
        "time_extent": lattice.time_extent,
        "spatial_extents": list(lattice.spatial_extents),
    }, "tolerances": tolerances}
    if cov_echo is not None:
        echo["covariance"] = cov_echo
    if density_echo is not None:
        echo["density"] = density_echo
    if tf_echo is not None:
        echo["test_functions"] = tf_echo
    if mc_echo is not None:
        echo["mc"] = mc_echo

    return Resolved(lattice, covariance, density, phis, mc, tolerances, echo)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def render_report(report, include_wall_time=True):
    """Deterministic JSON bytes for a report dict."""
    obj = _jsonable(report)
    if not include_wall_time:
        obj = {k: v for k, v in obj.items() if k != "wall_time_s"}
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _invariance_dict(r):
    return {"passed": r.passed, "deviation": r.deviation, "threshold": r.threshold, "tol": r.tol}


def _rp_dict(r):
    return {
        "passed": r.passed,
        "min_eigenvalue": r.min_eigenvalue,
        "threshold": r.threshold,
        "tol": r.tol,
        "failure_kind": r.failure_kind,
    }


def _psd_dict(r):
    return {"passed": r.passed, "min_eigenvalue": r.min_eigenvalue, "threshold": r.threshold}


def _violation_dict(lattice, v):
    wire = potential_to_obj(lattice, Potential((v.term,), 0.0))
    return {"term": wire["terms"][0], "reason": v.reason}


def cmd_check_gaussian(resolved, csv_dir=None):
    if resolved.covariance is None:
        _fail("check-gaussian needs a 'covariance' section")
    lattice, cov = resolved.lattice, resolved.covariance
    tols = resolved.tolerances
    checks = {}
    reasons = []

    inv = check_theta_invariance(cov, lattice, tols["invariance_tol"])
    checks["theta_invariance"] = _invariance_dict(inv)
    if not inv.passed:
        reasons.append("theta-invariance")

    rp = check_gaussian_rp(cov, lattice, tols["psd_tol"], tols["invariance_tol"])
    checks["gaussian_rp"] = _rp_dict(rp)
    if not rp.passed:
        reasons.append("gaussian-rp")

    pq = decompose_pq(cov, lattice)
    sum_exact = bool(np.array_equal(pq.c_p + pq.c_q, pq.a_block))
    checks["pq_decomposition"] = {
        "passed": sum_exact and pq.both_psd,
        "sum_exact": sum_exact,
        "p": _psd_dict(pq.report_p),
        "q": _psd_dict(pq.report_q),
    }
    if not (sum_exact and pq.both_psd):
        reasons.append("pq-decomposition")

    n = resolved.mc.n_samples if resolved.mc is not None else 100_000
    seed = resolved.mc.seed if resolved.mc is not None else 0
    conv = verify_convolution_identity(
        cov, lattice, tols["invariance_tol"], n_samples=n, seed=seed
    )
    checks["convolution_identity"] = {
        "passed": conv.passed,
        "algebraic_passed": conv.algebraic_passed,
        "block_deviation": conv.block_deviation,
        "block_threshold": conv.block_threshold,
        "sampling_passed": conv.sampling_passed,
        "max_sigma_deviation": conv.max_sigma_deviation,
        "n_samples": conv.n_samples,
        "seed": conv.seed,
    }
    if not conv.passed:
        reasons.append("convolution-identity")

    if csv_dir is not None:
        out = Path(csv_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_matrix_csv(out / "covariance.csv", cov.matrix)
        write_matrix_csv(out / "cross_block.csv", cross_block(cov, lattice, warn=False))

    return checks, reasons


def cmd_check_density(resolved):
    if resolved.density is None:
        _fail("check-density needs a 'density' section")
    lattice = resolved.lattice
    result = split_check(lattice, resolved.density)
    check = {
        "is_splitting": result.is_splitting,
        "violations": [_violation_dict(lattice, v) for v in result.violations],
        "witness": potential_to_obj(lattice, result.witness_g, half=True)
        if result.is_splitting
        else None,
    }
    reasons = [] if result.is_splitting else ["split:" + result.violations[0].reason]
    return {"split": check}, reasons


def cmd_verify_rp(resolved):
    if resolved.covariance is None:
        _fail("verify-rp needs a 'covariance' section")
    lattice, cov = resolved.lattice, resolved.covariance
    tols = resolved.tolerances
    mc = resolved.mc
    phis = resolved.phis
    if phis is None:
        phis = random_test_functions(lattice, 4, mc.seed)
        resolved.echo["test_functions"] = {"kind": "random", "count": 4, "seed": mc.seed}

    checks = {}
    reasons = []

    inv = check_theta_invariance(cov, lattice, tols["invariance_tol"])
    checks["theta_invariance"] = _invariance_dict(inv)
    rp = check_gaussian_rp(cov, lattice, tols["psd_tol"], tols["invariance_tol"])
    checks["gaussian_rp"] = _rp_dict(rp)
    if not (inv.passed and rp.passed):
        reasons.append("gaussian-gate")
        return checks, reasons

    split = split_check(lattice, resolved.density)
    checks["split"] = {
        "is_splitting": split.is_splitting,
        "violations": [_violation_dict(lattice, v) for v in split.violations],
    }
    if not split.is_splitting:
        reasons.append("split:" + split.violations[0].reason)
        return checks, reasons

    try:
        direct = gram_mc_direct(
            cov, lattice, resolved.density, phis, mc, tols["psd_tol"]
        )
    except IllConditionedWeightsError:
        checks["gram_direct"] = None
        reasons.append("ill-conditioned-weights")
        return checks, reasons
    checks["gram_direct"] = direct.to_json_dict()
    if direct.verdict == FAIL:
        reasons.append("gram-direct-stable-fail")

    pq = decompose_pq(cov, lattice)
    checks["pq_decomposition"] = {
        "passed": pq.both_psd,
        "p": _psd_dict(pq.report_p),
        "q": _psd_dict(pq.report_q),
    }
    if not pq.both_psd:
        reasons.append("pq-decomposition")
        return checks, reasons

    try:
        factorized = gram_mc_factorized(
            cov, lattice, split.witness_g, phis, mc, tols["psd_tol"]
        )
    except IllConditionedWeightsError:
        checks["gram_factorized"] = None
        reasons.append("ill-conditioned-weights")
        return checks, reasons
    checks["gram_factorized"] = factorized.to_json_dict()
    if factorized.verdict == FAIL:
        reasons.append("gram-factorized-stable-fail")

    if mc.share_inner:
        structural_ok = factorized.min_eigenvalue >= STRUCTURAL_PSD_FLOOR
        checks["structural_psd"] = {
            "passed": structural_ok,
            "min_eigenvalue": factorized.min_eigenvalue,
            "floor": STRUCTURAL_PSD_FLOOR,
        }
        if not structural_ok:
            reasons.append("structural-psd")

    bias_allowance = 2.0 / mc.n_inner if mc.share_inner else 0.0
    delta = np.abs(direct.matrix - factorized.matrix)
    gate = 5.0 * (direct.stderr + factorized.stderr + bias_allowance)
    agree = bool((delta <= gate).all())
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = float(np.max(np.where(gate > 0, delta / gate, np.inf))) if delta.size else 0.0
    checks["estimator_agreement"] = {
        "passed": agree,
        "max_abs_difference": float(delta.max()) if delta.size else 0.0,
        "max_gate_ratio": ratio,
        "bias_allowance": bias_allowance,
    }
    if not agree:
        reasons.append("estimator-agreement")

    return checks, reasons


def cmd_selftest(psd_tol=DEFAULT_PSD_TOL):
    """Built-in oracle battery: closed forms, Schur products, probe sweep."""
    entries = []

    def entry(name, passed, measured, gate):
        entries.append({"name": name, "passed": bool(passed), "measured": measured, "gate": gate})

    lat2 = build_lattice(1, [])
    cov2 = free_field_covariance(lat2, 1.0)
    dev = float(np.abs(cov2.matrix - np.array([[2.0, 1.0], [1.0, 2.0]]) / 3.0).max())
    entry("free-field-2site-inverse", dev <= 1e-12, dev, 1e-12)

    chalf = Covariance(np.array([[1.0, 0.5], [0.5, 1.0]]))
    cneg = Covariance(np.array([[1.0, -0.5], [-0.5, 1.0]]))
    phi = np.array([0.0, 1.0])
    dev = abs(char_fn(chalf, phi) - float(np.exp(-0.5)))
    entry("char-fn-closed-form", dev <= 1e-15, dev, 1e-15)

    phis = [phi, np.zeros(2)]
    for cov, c, want in ((chalf, 0.5, "pass"), (cneg, -0.5, "fail")):
        rep = gram_exact_gaussian(cov, lat2, phis, psd_tol)
        det = float(np.linalg.det(rep.matrix.real))
        closed = float(np.exp(-(1.0 - c)) - np.exp(-1.0))
        ok = abs(det - closed) <= 1e-12 and rep.verdict == want
        entry(f"exact-gram-determinant-c={c}", ok, det, closed)

    dev = abs(theta_inner(chalf, lat2, phi) - 0.5)
    entry("theta-inner-value", dev <= 1e-15, dev, 1e-15)

    probes = small_lambda_probe(chalf, lat2, phi, [0.2, 0.1, 0.05, 0.025])
    closed = float(100.0 * (1.0 - np.exp(-0.005)))
    dev = abs(probes[1] - closed)
    entry("probe-closed-form", dev <= 1e-12, dev, 1e-12)
    errs = [abs(p - 0.5) for p in probes]
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    ok = all(3.2 <= r <= 4.8 for r in ratios)
    entry("probe-sweep-ratio", ok, ratios, [3.2, 4.8])

    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        k = int(rng.integers(1, 9))
        x = rng.standard_normal((k, k))
        y = rng.standard_normal((k, k))
        a, b = x @ x.T, y @ y.T
        prod = schur_product(a, b)
        scale = float(np.linalg.norm(a, 2) * np.linalg.norm(b, 2))
        rel = float(np.linalg.eigvalsh((prod + prod.T) / 2.0).min()) / max(scale, 1e-300)
        worst = min(worst, rel)
    entry("schur-psd-battery", worst >= -psd_tol, worst, -psd_tol)

    lat = build_lattice(2, [4])
    cov = free_field_covariance(lat, 1.0, psd_tolerance=max(psd_tol, 1e-15))
    pq = decompose_pq(cov, lat)
    sum_exact = bool(np.array_equal(pq.c_p + pq.c_q, pq.a_block))
    floor = min(pq.report_p.min_eigenvalue, pq.report_q.min_eigenvalue)
    entry("pq-decomposition", sum_exact and floor >= -psd_tol, floor, -psd_tol)

    params = McParams(n_samples=1, seed=7, n_outer=256, n_inner=64, share_inner=True)
    fact = gram_mc_factorized(
        cov, lat, ZERO_POTENTIAL, random_test_functions(lat, 3, 7), params
    )
    entry(
        "factorized-structural-psd",
        fact.min_eigenvalue >= min(STRUCTURAL_PSD_FLOOR, -psd_tol),
        fact.min_eigenvalue,
        min(STRUCTURAL_PSD_FLOOR, -psd_tol),
    )

    reasons = [e["name"] for e in entries if not e["passed"]]
    return {"selftest": entries}, reasons


def _summarize(report, quiet):
    if quiet:
        return
    print(f"rplattice {report['tool_version']} — {report['command']}")
    checks = report["checks"]
    if "selftest" in checks:
        width = max(len(e["name"]) for e in checks["selftest"])
        for e in checks["selftest"]:
            status = "PASS" if e["passed"] else "FAIL"
            print(f"  {e['name']:<{width}}  {status}  measured={e['measured']}")
    else:
        for name, body in checks.items():
            if body is None:
                print(f"  {name:<24} SKIPPED")
                continue
            if "passed" in body:
                status = "PASS" if body["passed"] else "FAIL"
            elif "verdict" in body:
                status = body["verdict"].upper()
            elif "is_splitting" in body:
                status = "PASS" if body["is_splitting"] else "FAIL"
            else:
                status = "?"
            print(f"  {name:<24} {status}")
    if report["failure_reasons"]:
        print("failure reasons: " + ", ".join(report["failure_reasons"]))
    print(f"overall: {report['verdict'].upper()} (exit {report['exit_code']})")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rplattice",
        description="Reflection-positivity checks on finite theta-symmetric lattices.",
    )
    parser.add_argument("--version", action="version", version=f"rplattice {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", help="write the JSON report here")
        p.add_argument("--seed", type=int, help="override the mc seed from the config")
        p.add_argument("--csv-dir", help="dump matrices as CSV into this directory")
        p.add_argument("--quiet", action="store_true", help="suppress the stdout summary")

    common(sub.add_parser("check-gaussian", help="exact Gaussian reflection checks"))
    common(sub.add_parser("check-density", help="splitting decision for a density"))
    common(sub.add_parser("verify-rp", help="full pipeline incl. Monte Carlo Gram checks"))
    st = sub.add_parser("selftest", help="run the built-in oracle battery")
    common(st, needs_config=False)
    st.add_argument("--psd-tol", type=float, default=DEFAULT_PSD_TOL, help="PSD gate for the battery")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        if args.command == "selftest":
            checks, reasons = cmd_selftest(args.psd_tol)
            echo = {"psd_tol": args.psd_tol}
        else:
            raw = load_config(args.config)
            resolved = resolve_config(
                raw,
                Path(args.config).parent,
                seed_override=args.seed,
                need_mc=args.command == "verify-rp",
                need_density=args.command in ("check-density", "verify-rp"),
            )
            if args.command == "check-gaussian":
                checks, reasons = cmd_check_gaussian(resolved, csv_dir=args.csv_dir)
            elif args.command == "check-density":
                checks, reasons = cmd_check_density(resolved)
            else:
                checks, reasons = cmd_verify_rp(resolved)
            echo = resolved.echo
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    exit_code = 0 if not reasons else 1
    report = {
        "command": args.command,
        "tool_version": __version__,
        "config": echo,
        "checks": checks,
        "failure_reasons": reasons,
        "verdict": "pass" if exit_code == 0 else "fail",
        "exit_code": exit_code,
        "wall_time_s": time.perf_counter() - started,
    }

    if args.out:
        try:
            Path(args.out).write_text(render_report(report), encoding="utf-8")
        except OSError as exc:
            print(f"error: cannot write report: {exc}", file=sys.stderr)
            return 2
    _summarize(report, args.quiet)
    return exit_code


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
