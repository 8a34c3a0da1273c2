"""
cltlab command line
Loads a model (inline JSON, model file or gallery preset), runs one analysis and emits
machine-readable tables.

Exit status: 0 success, 1 unexpected failure, 2 validation error, 3 budget exceeded,
4 internal invariant violated.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, TextIO

import pydantic

from cltlab.config import settings
from cltlab.logging_config import get_logger, setup_logging
from cltlab.schemas import RunConfig
from cltlab.services.blocks_service import (
    approximation_gap,
    block_decompose,
    identity_terms,
    orthogonality_check,
    remainder_second_moment,
)
from cltlab.services.bridge_service import (
    bridge_sum_table,
    centered_sigma,
    endpoint_projection_norm,
    interior_projection,
    x0_two_sided_norm,
)
from cltlab.services.enumeration_service import check_enumeration_budget
from cltlab.services.export_service import ExportService, write_statistics
from cltlab.services.gallery_service import GALLERY_NAMES, GallerySpec, build_preset, parse_preset
from cltlab.services.kernel_service import ergodicity_report
from cltlab.services.mixing_service import clt_condition_report
from cltlab.services.moments_service import (
    Model,
    autocovariances,
    load_model,
    model_checksum,
    second_moment_profile,
    sigma_series,
    varsup_profile,
)
from cltlab.services.montecarlo_service import (
    SeedSpec,
    abs_mean_sigma,
    class_mixture_reference,
    clt_statistics,
    reference_law,
    sample_path,
    summarize_experiment,
)
from cltlab.utils import (
    BudgetExceeded,
    CltlabError,
    ErrorResponse,
    NonSummable,
    ParameterValidator,
    ValidationError,
)

logger = get_logger("cltlab.main")

COMMANDS = ("validate", "stationary", "ergodicity", "moments", "bridge", "conditions", "blocks", "simulate", "report")

DEFAULTS = {
    "n": 64,
    "max_n": 64,
    "m": 4,
    "u": 4,
    "reps": 10_000,
}

# Flags whose values are comma-separated lists that may start with a minus sign
_LIST_FLAGS = ("--f", "--pi")


# ==================== Argument parsing ====================


def normalize_argv(argv: List[str]) -> List[str]:
    """Join '--f -1,1' into '--f=-1,1' so argparse does not read the value as an option."""
    out: List[str] = []
    index = 0
    while index < len(argv):
        token = argv[index]
        if token in _LIST_FLAGS and index + 1 < len(argv):
            out.append(f"{token}={argv[index + 1]}")
            index += 2
            continue
        out.append(token)
        index += 1
    return out


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_argument_group("model source")
    source.add_argument("--config", help="JSON RunConfig file")
    source.add_argument("--model", help="JSON model document {kernel, pi?, f}")
    source.add_argument("--gallery", help=f"gallery preset: {', '.join(GALLERY_NAMES)}")
    source.add_argument("--a", type=float, help="two_state: rate 0 -> 1")
    source.add_argument("--b", type=float, help="two_state: rate 1 -> 0")
    source.add_argument("--f", type=_float_list, help="observable values, comma-separated")
    source.add_argument("--pi", type=_float_list, help="iid: state probabilities")
    source.add_argument("--truncation", type=int, help="truncated_renewal: N")
    source.add_argument("--log-exponent", type=int, choices=(1, 2), help="truncated_renewal: e")
    source.add_argument("--center-observable", action="store_true", default=None,
                        help="center f under pi instead of rejecting it")

    params = common.add_argument_group("parameters")
    params.add_argument("--n", type=int)
    params.add_argument("--max-n", type=int, dest="max_n")
    params.add_argument("--m", type=int)
    params.add_argument("--u", type=int)
    params.add_argument("--v", type=int)
    params.add_argument("--reps", type=int)
    params.add_argument("--seed", type=int)
    params.add_argument("--centering", choices=("endpoint", "none"))
    params.add_argument("--experiment", choices=("clt", "abs-mean", "mixture"))
    params.add_argument("--mode", choices=("exact", "mc"))
    params.add_argument("--tol", type=float)
    params.add_argument("--workers", type=int)

    output = common.add_argument_group("output")
    output.add_argument("--format", choices=("csv", "json"))
    output.add_argument("--output", help="output file (stdout when omitted)")
    output.add_argument("--dump-statistics", dest="dump_statistics", help="one-column CSV of raw statistics")
    output.add_argument("--log-level", dest="log_level", help="override LOG_LEVEL")

    parser = argparse.ArgumentParser(prog="cltlab", description="Exact and simulated random-centering CLT analyses")
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _gallery_fragment(args: argparse.Namespace) -> Dict[str, Any]:
    fragment: Dict[str, Any] = {"gallery": args.gallery}
    for key, value in (
        ("a", args.a),
        ("b", args.b),
        ("f", args.f),
        ("pi", args.pi),
        ("N", args.truncation),
        ("log_exponent", args.log_exponent),
    ):
        if value is not None:
            fragment[key] = value
    return fragment


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """
    Merge a config file (if any) with command line flags; flags win.

    Raises:
        pydantic.ValidationError: On unknown keys or invalid values
        UnknownGallery: If --gallery names no preset
    """
    data: Dict[str, Any] = {}
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValidationError("config file must hold a JSON object", type(data).__name__, "config object")
    data["command"] = args.command

    if args.model:
        data["model"] = json.loads(Path(args.model).read_text(encoding="utf-8"))
        data.pop("gallery", None)
    elif args.gallery:
        parse_preset(_gallery_fragment(args))
        data["gallery"] = _gallery_fragment(args)
        data.pop("model", None)

    params = dict(data.get("params") or {})
    for key in ("n", "max_n", "m", "u", "v", "reps", "centering", "experiment", "mode", "tol", "workers"):
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    data["params"] = params

    for key in ("format", "output", "dump_statistics", "center_observable"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    return RunConfig.model_validate(data)


def resolve_seed(config: RunConfig, flag: Optional[int] = None) -> SeedSpec:
    """Master seed precedence: config file < CLTLAB_SEED < --seed."""
    if flag is not None:
        return SeedSpec(flag)
    if "SEED" in settings.model_fields_set:
        return SeedSpec(settings.SEED)
    if config.params.seed is not None:
        return SeedSpec(config.params.seed)
    return SeedSpec(settings.SEED)


def resolve_model(config: RunConfig) -> tuple:
    """Return (Model, GallerySpec or None)."""
    if config.model is not None:
        return load_model(config.model, center=config.center_observable), None
    spec: GallerySpec = build_preset(config.gallery)
    return spec.model, spec


def _param(config: RunConfig, name: str) -> int:
    value = getattr(config.params, name)
    return DEFAULTS[name] if value is None else value


# ==================== Commands ====================


def _validate(M: Model, spec: Optional[GallerySpec], config: RunConfig, out: ExportService, seed: SeedSpec) -> None:
    record = {
        "valid": True,
        "size": M.size,
        "model_checksum": model_checksum(M),
        "stationary_residual": M.pi.residual,
        "unique_stationary_law": M.pi.unique,
    }
    if spec is not None:
        record["gallery"] = spec.name
        if spec.tail_mass is not None:
            record["truncation"] = spec.truncation
            record["tail_mass"] = spec.tail_mass
    out.emit_record(record)


def _stationary(M: Model, spec, config: RunConfig, out: ExportService, seed: SeedSpec) -> None:
    out.emit_table(
        {"state": list(range(M.size)), "pi": M.pi.probs, "f": M.f},
        header={
            "residual": M.pi.residual,
            "unique": M.pi.unique,
            "method": M.pi.method,
            "classes": [list(c) for c in M.pi.classes],
        },
    )


def _ergodicity(M: Model, spec, config: RunConfig, out: ExportService, seed: SeedSpec) -> None:
    report = ergodicity_report(M.kernel, M.pi)
    out.emit_record(
        {
            "irreducible": report.irreducible,
            "period": report.period,
            "totally_ergodic": report.totally_ergodic,
            "support_size": len(report.support),
            "classes": ";".join(" ".join(str(s) for s in c) for c in report.classes),
        }
    )


def _series_note(M: Model, config: RunConfig) -> str:
    try:
        estimate = sigma_series(M, config.params.tol)
        return f"sigma_series = {estimate.value!r} (truncated at k={estimate.truncation_index})"
    except NonSummable as e:
        return f"sigma_series: {e.message}"


def _moments(M: Model, spec, config: RunConfig, out: ExportService, seed: SeedSpec) -> None:
    N = _param(config, "max_n")
    profile = varsup_profile(M, N)
    out.emit_table(
        {
            "n": list(range(1, N + 1)),
            "autocovariance": autocovariances(M, N + 1)[1:],
            "second_moment": second_moment_profile(M, N),
            "v_n": profile.values,
        },
        header={"N": N, "model_checksum": model_checksum(M)},
        notes=[
            f"sup E(S_n²)/n = {profile.sup!r} at n={profile.argsup}",
            f"tail converged: {profile.tail_converged}",
            _series_note(M, config),
        ],
    )


def _bridge(M: Model, spec, config: RunConfig, out: ExportService, seed: SeedSpec) -> None:
    n = _param(config, "n")
    table = bridge_sum_table(M, n)
    out.emit_bridge_table(table, model_checksum(M))


def _conditions(M: Model, spec, config: RunConfig, out: ExportService, seed: SeedSpec) -> None:
    profile = clt_condition_report(M, _param(config, "max_n"))
    out.emit_mixing_profile(profile, model_checksum(M))


def _blocks(M: Model, spec, config: RunConfig, out: ExportService, seed: SeedSpec) -> None:
    m, u = _param(config, "m"), _param(config, "u")
    lhs, rhs = identity_terms(M, m, u)
    sampling = {"reps": _param(config, "reps"), "seed": seed, "workers": config.params.workers}
    try:
        check_enumeration_budget(M.size, u * m)
        orthogonality = orthogonality_check(M, m, u, mode=config.params.mode, **sampling)
    except BudgetExceeded:
        orthogonality = orthogonality_check(M, m, u, mode="mc", **sampling)
    gap = approximation_gap(M, m, u)
    path = sample_path(M, u * m, seed)
    decomposition = block_decompose(M, path, m)
    aggregate = {
        "m": m,
        "u": u,
        "identity_lhs": lhs,
        "identity_rhs": rhs,
        "identity_residual": abs(lhs - rhs),
        "remainder_second_moment": remainder_second_moment(M, m, u),
        "orthogonality": orthogonality.value,
        "orthogonality_mode": orthogonality.mode,
        "orthogonality_half_width": orthogonality.half_width,
        "orthogonality_reps": orthogonality.reps,
        "orthogonality_passed": orthogonality.passed,
        "approximation_gap": gap.value,
        "M_u": decomposition.martingale,
        "R_u": decomposition.remainder,
        "master_seed": seed.master,
    }
    out.emit_blocks(decomposition, aggregate)


def _simulate(M: Model, spec, config: RunConfig, out: ExportService, seed: SeedSpec) -> None:
    params = config.params
    n, reps = _param(config, "n"), _param(config, "reps")

    if params.experiment == "abs-mean":
        estimate = abs_mean_sigma(M, n, mode=params.mode, reps=reps, seed=seed, workers=params.workers)
        out.emit_record(
            {
                "n": n,
                "mode": estimate.mode,
                "value": estimate.value,
                "half_width": estimate.half_width,
                "abs_mean": estimate.abs_mean,
                "master_seed": seed.master,
            }
        )
        return

    centering = "endpoint" if params.experiment == "mixture" else params.centering
    ParameterValidator.validate_horizon(reps, "reps", minimum=100)
    table = bridge_sum_table(M, n) if centering == "endpoint" else None
    statistics, shifts = clt_statistics(M, n, reps, seed, centering, table, params.workers)
    if params.experiment == "mixture":
        reference = class_mixture_reference(M, n)
        provenance = reference.provenance
    else:
        reference, provenance = reference_law(M, n, centering)
    report = summarize_experiment(M, n, seed, centering, statistics, shifts, reference, provenance)
    if config.dump_statistics:
        write_statistics(config.dump_statistics, statistics)
    out.emit_record(report.model_dump())


def _report(M: Model, spec, config: RunConfig, out: ExportService, seed: SeedSpec) -> None:
    n, N = _param(config, "n"), _param(config, "max_n")
    ergodicity = ergodicity_report(M.kernel, M.pi)
    dossier: Dict[str, Any] = {
        "model_checksum": model_checksum(M),
        "size": M.size,
        "stationary_residual": M.pi.residual,
        "unique_stationary_law": M.pi.unique,
        "irreducible": ergodicity.irreducible,
        "period": ergodicity.period,
        "totally_ergodic": ergodicity.totally_ergodic,
        "n": n,
        "partial_sum_variance_over_n": float(second_moment_profile(M, n)[-1]) / n,
        "centered_sigma": centered_sigma(M, n),
        "endpoint_projection_norm": endpoint_projection_norm(M, n),
        "x0_two_sided_norm": x0_two_sided_norm(M, n),
    }
    try:
        dossier["sigma_series"] = sigma_series(M, config.params.tol).value
    except NonSummable:
        dossier["sigma_series"] = None

    profile = clt_condition_report(M, N)
    dossier["max_n"] = N
    dossier["varsup_sup"] = profile.variance.sup
    for verdict in profile.verdicts():
        dossier[f"verdict {verdict.name}"] = verdict.status

    if config.params.v is not None:
        interior = interior_projection(M, n, config.params.v)
        dossier["v"] = interior.v
        dossier["interior_projection_norm"] = interior.projection_norm
        dossier["interior_norm"] = interior.interior_norm
        dossier["interior_rho"] = interior.rho

    m, u = _param(config, "m"), _param(config, "u")
    try:
        lhs, rhs = identity_terms(M, m, u)
        dossier["identity_residual"] = abs(lhs - rhs)
    except BudgetExceeded:
        dossier["identity_residual"] = None

    if config.params.reps is not None:
        centering = config.params.centering
        table = bridge_sum_table(M, n) if centering == "endpoint" else None
        statistics, shifts = clt_statistics(M, n, config.params.reps, seed, centering, table, config.params.workers)
        reference, provenance = reference_law(M, n, centering)
        report = summarize_experiment(M, n, seed, centering, statistics, shifts, reference, provenance)
        dossier.update({f"experiment {key}": value for key, value in report.model_dump().items()})

    if out.fmt == "json":
        out.emit_record(dossier)
    else:
        out.emit_table({"quantity": list(dossier), "value": list(dossier.values())})


HANDLERS = {
    "validate": _validate,
    "stationary": _stationary,
    "ergodicity": _ergodicity,
    "moments": _moments,
    "bridge": _bridge,
    "conditions": _conditions,
    "blocks": _blocks,
    "simulate": _simulate,
    "report": _report,
}


def _report_error(payload: Dict[str, Any], stderr: TextIO) -> None:
    stderr.write(json.dumps(payload, ensure_ascii=False) + "\n")


def _pydantic_message(error: pydantic.ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def run(
    config: RunConfig,
    seed_override: Optional[int] = None,
    stream: Optional[TextIO] = None,
    stderr: Optional[TextIO] = None,
) -> int:
    """
    Execute one RunConfig and return the exit status.

    Errors are reported on stderr as a JSON payload naming the failing invariant and value.
    """
    stderr = stderr or sys.stderr
    try:
        seed = resolve_seed(config, seed_override)
        model, spec = resolve_model(config)
        out = ExportService(config.format, config.output, stream=stream)
        logger.info(f"Running '{config.command}' on a {model.size}-state model")
        HANDLERS[config.command](model, spec, config, out, seed)
        logger.debug(f"Power cache: {model.kernel.cache_stats()}")
        return 0
    except CltlabError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        _report_error(ErrorResponse.from_error(e), stderr)
        return e.exit_status
    except pydantic.ValidationError as e:
        _report_error(ErrorResponse.validation_error(_pydantic_message(e)), stderr)
        return 2
    except Exception as e:
        logger.exception(f"Unexpected failure in '{config.command}'")
        _report_error(ErrorResponse.internal_error(f"run '{config.command}'", e), stderr)
        return 1


def run_cli(argv: Optional[List[str]] = None, stream: Optional[TextIO] = None, stderr: Optional[TextIO] = None) -> int:
    """Parse argv, build the RunConfig and run it."""
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(normalize_argv(list(sys.argv[1:] if argv is None else argv)))
    setup_logging(log_level=args.log_level or settings.LOG_LEVEL, log_dir=settings.LOG_DIR)
    try:
        config = config_from_args(args)
    except CltlabError as e:
        _report_error(ErrorResponse.from_error(e), stderr)
        return e.exit_status
    except pydantic.ValidationError as e:
        message = _pydantic_message(e)
        _report_error(ErrorResponse.validation_error(message), stderr)
        return 2
    except (OSError, json.JSONDecodeError) as e:
        _report_error(ErrorResponse.validation_error(f"cannot read input: {e}"), stderr)
        return 2
    return run(config, seed_override=args.seed, stream=stream, stderr=stderr)


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
