"""Command-line laboratory: configs, manifests, artifacts, and reports.

This module turns the library into reproducible batch experiments.  A
run is described by a flat text config of dotted ``key = value`` lines,
parsed strictly (unknown keys are errors, so typos in sweep definitions
cannot pass silently).  Every run writes a JSON manifest recording the
config echo, the master seed, the documented seed-splitting rule, and
per-replica seed words; feeding a manifest back through ``--config``
re-executes the run and reproduces every CSV byte for byte, regardless
of worker count.

Artifacts are plain files: CSV for tabular data (first line carries a
versioned schema tag), JSON for manifests and rate fits, ``.npy`` for
density snapshots, and hand-rendered SVG for plots.  Replicas are
scheduled on a process pool; jobs go in as immutable configs, results
come back as immutable records, and output order is fixed by replica
index rather than completion order.

Subcommands
-----------
simulate
    Integrate R particle replicas and write one statistics CSV each.
solve
    Integrate the limiting density, writing snapshots + diagnostics.
sweep-lln
    Replica-averaged squared-error functional across particle counts.
sweep-chaos
    Sliced Wasserstein-2, kNN relative-entropy, and L1-vs-entropy
    margins between pooled particle samples and limit-density draws.
verify-moments
    Gate the propagated fourth-moment bound along trajectories.
report
    Render SVG plots and a summary JSON from a previous run's manifest.

Exit codes: 0 success, 2 config or schema error, 3 numerical failure,
4 verification-gate failure.
"""

from __future__ import annotations

import argparse
import difflib
import json
import math
import re
import sys
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dataclass_field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .chaos_metrics import (
    RateFit,
    ckp_check,
    convergence_slope,
    histogram_l1,
    knn_kl,
    pool_samples,
    sample_from_field,
    sliced_w2,
)
from .kernels import axis_pairs
from .limit_solver import (
    CflError,
    Grid2D,
    NegativityError,
    admissible_dt,
    gaussian_field,
    log_gradient_ratio,
    log_hessian_ratio,
    solve,
)
from .particle_system import BlowUpError, InitialLaw, SchemeKind, SimConfig, run
from .seeding import (
    SEED_RULE,
    STREAM_LIMIT_DRAWS,
    STREAM_PROJECTIONS,
    STREAM_SIMULATE,
    check_seed,
    seed_words,
    spawn_generator,
)
from .statistics import StatRecord, moment_bound_check
from .svgplot import Series, line_plot

__all__ = [
    "ConfigError",
    "SchemaError",
    "ExperimentConfig",
    "RunManifest",
    "parse_config_text",
    "load_config",
    "write_csv",
    "read_csv",
    "cmd_simulate",
    "cmd_solve",
    "cmd_sweep_lln",
    "cmd_sweep_chaos",
    "cmd_verify_moments",
    "cmd_report",
    "main",
]


# ---------------------------------------------------------------------------
# errors and exit codes
# ---------------------------------------------------------------------------

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_GATE = 4


class ConfigError(ValueError):
    """Invalid or missing configuration; maps to exit code 2."""


class SchemaError(ValueError):
    """Artifact with a wrong or unsupported schema; maps to exit code 2."""


# ---------------------------------------------------------------------------
# value parsers for config entries
# ---------------------------------------------------------------------------


def _parse_int(text: str) -> int:
    try:
        return int(text, 10)
    except ValueError:
        raise ValueError(f"could not parse {text!r} as an integer") from None


def _parse_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"could not parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise ValueError(f"{text!r} is not a finite number")
    return value


def _parse_float_or_auto(text: str) -> float | None:
    if text.strip() == "auto":
        return None
    return _parse_float(text)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _parse_name(text: str) -> str:
    return text.strip()


def _split_tokens(text: str, sep: str) -> list[str]:
    tokens = [tok.strip() for tok in text.split(sep)]
    if any(not tok for tok in tokens):
        raise ValueError(f"empty entry in list {text!r}")
    return tokens


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(_parse_float(tok) for tok in _split_tokens(text, ","))


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(_parse_int(tok) for tok in _split_tokens(text, ","))


def _parse_matrix(text: str) -> tuple[tuple[float, ...], ...]:
    rows = tuple(_parse_floats(row) for row in _split_tokens(text, ";"))
    if len({len(row) for row in rows}) != 1:
        raise ValueError(f"rows of {text!r} have unequal lengths")
    return rows


def _parse_seed(text: str) -> int:
    return check_seed(_parse_int(text))


# Every legal config key and its value parser.  Strictness is the point:
# a key outside this table is rejected with a suggestion.
_KEY_TYPES = {
    "seed": _parse_seed,
    "sim.dimension": _parse_int,
    "sim.particles": _parse_int,
    "sim.dt": _parse_float,
    "sim.t_end": _parse_float,
    "sim.scheme": _parse_name,
    "sim.record_every": _parse_int,
    "sim.fast_path": _parse_bool,
    "sim.replicas": _parse_int,
    "sim.initial.kind": _parse_name,
    "sim.initial.variances": _parse_floats,
    "sim.initial.weights": _parse_floats,
    "sim.initial.centers": _parse_matrix,
    "sim.initial.component_variances": _parse_matrix,
    "solve.cells": _parse_int,
    "solve.box": _parse_float,
    "solve.t_end": _parse_float,
    "solve.dt": _parse_float_or_auto,
    "solve.snapshots": _parse_floats,
    "solve.variances": _parse_floats,
    "solve.moment_mode": _parse_name,
    "sweep.particles": _parse_ints,
    "sweep.replicas": _parse_int,
    "sweep.t_end": _parse_float,
    "sweep.dt": _parse_float,
    "sweep.scheme": _parse_name,
    "sweep.variances": _parse_floats,
    "sweep.times": _parse_floats,
    "sweep.pool": _parse_name,
    "sweep.projections": _parse_int,
    "sweep.knn_k": _parse_int,
    "sweep.limit_draws": _parse_int,
    "sweep.l1_bins": _parse_int,
    "sweep.groups": _parse_int,
    "sweep.solve_cells": _parse_int,
    "sweep.solve_box": _parse_float,
}

_MISSING = object()


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description.

    ``entries`` is the raw key/value echo in file order (what manifests
    store); ``values`` maps each key to its typed value.  ``seed`` is
    the resolved master seed and ``out_dir`` the resolved output
    directory; both come from flags or the config itself.
    """

    entries: tuple[tuple[str, str], ...]
    values: dict = dataclass_field(repr=False)
    seed: int | None = None
    out_dir: str | None = None

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def require(self, key: str, command: str):
        value = self.values.get(key, _MISSING)
        if value is _MISSING:
            raise ConfigError(
                f"missing key {key!r} (required by the {command} command)"
            )
        return value


def parse_config_text(text: str, source: str = "config") -> tuple[tuple[str, str], ...]:
    """Parse dotted ``key = value`` lines into an ordered entry list.

    Blank lines and ``#`` comments (full-line or trailing) are ignored.
    Unknown keys, duplicate keys, and empty values are errors carrying
    the line number and, for near misses, a suggestion.
    """
    entries: list[tuple[str, str]] = []
    seen: dict[str, int] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source} line {lineno}: expected 'key = value', got {line!r}"
            )
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if key not in _KEY_TYPES:
            hint = ""
            close = difflib.get_close_matches(key, _KEY_TYPES, n=1)
            if close:
                hint = f" (did you mean {close[0]!r}?)"
            raise ConfigError(f"{source} line {lineno}: unknown key {key!r}{hint}")
        if key in seen:
            raise ConfigError(
                f"{source} line {lineno}: duplicate key {key!r} "
                f"(first set on line {seen[key]})"
            )
        if not value:
            raise ConfigError(f"{source} line {lineno}: empty value for key {key!r}")
        seen[key] = lineno
        entries.append((key, value))
    return tuple(entries)


def _typed_config(entries: tuple[tuple[str, str], ...]) -> ExperimentConfig:
    values: dict = {}
    for key, text in entries:
        if key not in _KEY_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        if key in values:
            raise ConfigError(f"duplicate key {key!r}")
        try:
            values[key] = _KEY_TYPES[key](text)
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: {exc}") from None
    return ExperimentConfig(entries=tuple(entries), values=values)


def load_config(path: str, seed_override: int | None = None) -> ExperimentConfig:
    """Load a config file or a manifest JSON from a previous run.

    A file whose first non-blank character is ``{`` is treated as a
    manifest: its config echo and master seed are reused, which is how
    re-execution works.  ``seed_override`` (the ``--seed`` flag) wins
    over both the manifest seed and any ``seed`` config line.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    manifest_seed: int | None = None
    if text.lstrip().startswith("{"):
        manifest = RunManifest.from_json(text, source=path)
        entries = manifest.config
        manifest_seed = manifest.master_seed
    else:
        entries = parse_config_text(text, source=path)
    config = _typed_config(entries)
    seed = seed_override
    if seed is None:
        seed = manifest_seed
    if seed is None:
        seed = config.get("seed")
    if seed is None:
        raise ConfigError("no master seed: add 'seed = <u64>' or pass --seed")
    return replace(config, seed=check_seed(seed))


# ---------------------------------------------------------------------------
# config -> domain objects
# ---------------------------------------------------------------------------


def _scheme_from(config: ExperimentConfig, key: str, default: str) -> SchemeKind:
    name = config.get(key, default)
    try:
        return SchemeKind(name)
    except ValueError:
        choices = ", ".join(kind.value for kind in SchemeKind)
        raise ConfigError(
            f"key {key!r}: unknown scheme {name!r} (choose one of: {choices})"
        ) from None


def _initial_law(config: ExperimentConfig, prefix: str, command: str) -> InitialLaw:
    kind = config.get(f"{prefix}.kind", "anisotropic_gaussian")
    try:
        if kind == "anisotropic_gaussian":
            variances = config.require(f"{prefix}.variances", command)
            return InitialLaw.anisotropic_gaussian(variances)
        if kind == "gaussian_mixture":
            weights = config.require(f"{prefix}.weights", command)
            centers = config.require(f"{prefix}.centers", command)
            spreads = config.require(f"{prefix}.component_variances", command)
            return InitialLaw.gaussian_mixture(weights, centers, spreads)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"key '{prefix}.*': {exc}") from None
    raise ConfigError(
        f"key '{prefix}.kind': unknown initial law {kind!r} "
        "(choose anisotropic_gaussian or gaussian_mixture)"
    )


def _sim_configs(config: ExperimentConfig, command: str) -> list[SimConfig]:
    replicas = int(config.get("sim.replicas", 1))
    if replicas < 1:
        raise ConfigError(f"key 'sim.replicas': must be >= 1, got {replicas}")
    law = _initial_law(config, "sim.initial", command)
    scheme = _scheme_from(config, "sim.scheme", "fournier")
    try:
        return [
            SimConfig(
                d=int(config.get("sim.dimension", 2)),
                N=int(config.require("sim.particles", command)),
                dt=float(config.require("sim.dt", command)),
                t_end=float(config.require("sim.t_end", command)),
                scheme=scheme,
                seed=int(config.seed),
                initial=law,
                record_every=int(config.get("sim.record_every", 1)),
                fast_path=bool(config.get("sim.fast_path", True)),
                replica_id=index,
            )
            for index in range(replicas)
        ]
    except ValueError as exc:
        raise ConfigError(f"invalid 'sim.*' parameters: {exc}") from None


# Replica indices for sweeps: sweep point i, replica r -> i * _SWEEP_STRIDE + r.
# The stride caps replicas per point so indices never collide across points.
_SWEEP_STRIDE = 1000


def _sweep_common(config: ExperimentConfig, command: str):
    particle_counts = config.require("sweep.particles", command)
    if len(particle_counts) != len(set(particle_counts)) or list(
        particle_counts
    ) != sorted(particle_counts):
        raise ConfigError("key 'sweep.particles': values must be strictly increasing")
    if any(n < 1 for n in particle_counts):
        raise ConfigError("key 'sweep.particles': values must be positive")
    replicas = int(config.require("sweep.replicas", command))
    if not 1 <= replicas <= _SWEEP_STRIDE:
        raise ConfigError(
            f"key 'sweep.replicas': must lie in [1, {_SWEEP_STRIDE}], got {replicas}"
        )
    t_end = float(config.get("sweep.t_end", 0.5))
    dt = float(config.get("sweep.dt", 1e-3))
    if not dt > 0.0:
        raise ConfigError(f"key 'sweep.dt': must be positive, got {dt}")
    scheme = _scheme_from(config, "sweep.scheme", "fournier")
    try:
        law = InitialLaw.anisotropic_gaussian(
            config.require("sweep.variances", command)
        )
    except ValueError as exc:
        raise ConfigError(f"key 'sweep.variances': {exc}") from None
    return particle_counts, replicas, t_end, dt, scheme, law


def _sweep_sim(config, law, scheme, n, dt, t_end, point_index, replica, every=1):
    return SimConfig(
        d=law.d,
        N=int(n),
        dt=dt,
        t_end=t_end,
        scheme=scheme,
        seed=int(config.seed),
        initial=law,
        record_every=every,
        fast_path=True,
        replica_id=point_index * _SWEEP_STRIDE + replica,
    )


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

_MANIFEST_FORMAT = "landaulab.manifest.v1"


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run and audit what it produced.

    The config echo plus the master seed determine every artifact byte;
    wall-clock and stage timings are informational and may differ
    between otherwise identical runs.
    """

    command: str
    master_seed: int
    config: tuple[tuple[str, str], ...]
    replica_seeds: tuple[tuple[int, int, tuple[int, int, int, int]], ...]
    tool: str
    status: str
    failures: tuple[str, ...]
    wall_clock_seconds: float
    stage_seconds: tuple[tuple[str, float], ...]
    artifacts: tuple[str, ...]

    def to_json(self) -> str:
        doc = {
            "format": _MANIFEST_FORMAT,
            "tool": self.tool,
            "command": self.command,
            "master_seed": self.master_seed,
            "seed_rule": SEED_RULE,
            "replica_seeds": [
                {"stream": stream, "index": index, "words": list(words)}
                for stream, index, words in self.replica_seeds
            ],
            "config": {key: value for key, value in self.config},
            "status": self.status,
            "failures": list(self.failures),
            "wall_clock_seconds": self.wall_clock_seconds,
            "stage_seconds": {name: secs for name, secs in self.stage_seconds},
            "artifacts": list(self.artifacts),
        }
        return json.dumps(doc, indent=2) + "\n"

    @staticmethod
    def from_json(text: str, source: str = "manifest") -> RunManifest:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{source}: not valid JSON ({exc})") from None
        if not isinstance(doc, dict) or doc.get("format") != _MANIFEST_FORMAT:
            raise SchemaError(
                f"{source}: expected a {_MANIFEST_FORMAT} document, "
                f"found format {doc.get('format')!r}"
                if isinstance(doc, dict)
                else f"{source}: expected a JSON object"
            )
        required = ("command", "master_seed", "config", "status", "artifacts")
        missing = [key for key in required if key not in doc]
        if missing:
            raise SchemaError(f"{source}: manifest missing keys {missing}")
        config = doc["config"]
        if not isinstance(config, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in config.items()
        ):
            raise SchemaError(f"{source}: manifest config must map strings to strings")
        return RunManifest(
            command=str(doc["command"]),
            master_seed=check_seed(int(doc["master_seed"])),
            config=tuple(config.items()),
            replica_seeds=tuple(
                (int(row["stream"]), int(row["index"]), tuple(row["words"]))
                for row in doc.get("replica_seeds", ())
            ),
            tool=str(doc.get("tool", "")),
            status=str(doc["status"]),
            failures=tuple(str(item) for item in doc.get("failures", ())),
            wall_clock_seconds=float(doc.get("wall_clock_seconds", 0.0)),
            stage_seconds=tuple(
                (str(k), float(v)) for k, v in doc.get("stage_seconds", {}).items()
            ),
            artifacts=tuple(str(item) for item in doc["artifacts"]),
        )


def _seed_rows(master_seed: int, stream: int, indices) -> list:
    return [
        (stream, index, tuple(seed_words(master_seed, stream, index)))
        for index in indices
    ]


def _write_manifest(
    out_dir: Path,
    command: str,
    config: ExperimentConfig,
    seed_rows,
    status: str,
    failures,
    stages: dict,
    wall_seconds: float,
    artifacts,
) -> None:
    manifest = RunManifest(
        command=command,
        master_seed=int(config.seed),
        config=config.entries,
        replica_seeds=tuple(seed_rows),
        tool=f"landaulab {__version__}",
        status=status,
        failures=tuple(failures),
        wall_clock_seconds=round(wall_seconds, 3),
        stage_seconds=tuple((name, round(secs, 3)) for name, secs in stages.items()),
        artifacts=tuple(artifacts),
    )
    (out_dir / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")


# ---------------------------------------------------------------------------
# csv artifacts
# ---------------------------------------------------------------------------

# Current major version per schema name; readers reject other majors.
_CSV_SCHEMAS = {
    "statrecord": 1,
    "solvediag": 1,
    "llnsweep": 1,
    "chaossweep": 1,
    "momentbound": 1,
}


def _schema_tag(name: str) -> str:
    return f"landaulab.{name}.v{_CSV_SCHEMAS[name]}"


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    text = str(value)
    if "," in text or "\n" in text:
        raise ValueError(f"cell value {text!r} contains a delimiter")
    return text


def write_csv(path: Path, schema_name: str, header, rows) -> None:
    """Write rows under a versioned schema tag, floats as shortest repr."""
    header = list(header)
    lines = [f"# schema: {_schema_tag(schema_name)}", ",".join(header)]
    for row in rows:
        row = list(row)
        if len(row) != len(header):
            raise ValueError(
                f"row has {len(row)} cells, header has {len(header)} columns"
            )
        lines.append(",".join(_cell(value) for value in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path, schema_name: str):
    """Read a tagged CSV, returning (header, rows of strings).

    Rejects files whose schema name differs or whose major version is
    not the one this tool writes.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read artifact {path!s}: {exc}") from None
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# schema: "):
        raise SchemaError(f"{path!s}: missing schema line")
    tag = lines[0][len("# schema: "):].strip()
    match = re.fullmatch(r"landaulab\.([a-z0-9_]+)\.v(\d+)", tag)
    if match is None:
        raise SchemaError(f"{path!s}: malformed schema tag {tag!r}")
    name, major = match.group(1), int(match.group(2))
    if name != schema_name:
        raise SchemaError(
            f"{path!s}: expected landaulab.{schema_name} data, found {tag}"
        )
    if major != _CSV_SCHEMAS[schema_name]:
        raise SchemaError(
            f"{path!s}: unsupported major version {major} for landaulab.{name} "
            f"(this tool reads v{_CSV_SCHEMAS[schema_name]})"
        )
    if len(lines) < 2:
        raise SchemaError(f"{path!s}: missing header line")
    header = lines[1].split(",")
    rows = [line.split(",") for line in lines[2:] if line]
    return header, rows


def _columns(path, header, rows, names) -> dict[str, list[float]]:
    missing = [name for name in names if name not in header]
    if missing:
        raise SchemaError(f"{path!s}: missing columns {missing}")
    out: dict[str, list[float]] = {}
    for name in names:
        at = header.index(name)
        out[name] = [float(row[at]) for row in rows]
    return out


def _statrecord_header(record: StatRecord) -> list[str]:
    d = len(record.Psi_alpha)
    columns = ["time", "M2", "M4"]
    columns += [f"M{p}" for p in sorted(record.M_p)]
    columns += [f"psi_{a + 1}" for a in range(d)]
    columns += [f"cross_{a}{b}" for a, b in axis_pairs(d)]
    columns.append("lln")
    columns += [f"hierarchy_{name}" for name in record.hierarchy]
    columns += ["replica", "scheme"]
    return columns


def _statrecord_row(record: StatRecord) -> list:
    row: list = [record.time, record.M_2, record.M_4]
    row += [record.M_p[p] for p in sorted(record.M_p)]
    row += list(record.Psi_alpha)
    row += list(record.cross_moments)
    row.append(record.lln_value)
    row += list(record.hierarchy.values())
    row += [record.replica_id, record.scheme]
    return row


def _write_statrecords(path: Path, records) -> None:
    if not records:
        raise ValueError("no records to write")
    write_csv(
        path,
        "statrecord",
        _statrecord_header(records[0]),
        [_statrecord_row(record) for record in records],
    )


# ---------------------------------------------------------------------------
# worker pool
# ---------------------------------------------------------------------------


def _records_job(sim: SimConfig):
    """Run one replica; never lets an exception cross the process boundary."""
    try:
        return ("ok", sim.replica_id, run(sim), "")
    except BlowUpError as exc:
        return ("blowup", sim.replica_id, exc.records, str(exc))


def _state_job(sim: SimConfig):
    """Run one replica to its final velocities (no per-step records)."""
    from .particle_system import run_to_state

    try:
        return ("ok", sim.replica_id, run_to_state(sim).velocities, "")
    except BlowUpError as exc:
        return ("blowup", sim.replica_id, None, str(exc))


def _map_ordered(job, payloads, workers: int) -> list:
    """Run jobs across a process pool; results keep payload order."""
    if workers < 1:
        raise ConfigError(f"--workers must be >= 1, got {workers}")
    if workers == 1 or len(payloads) <= 1:
        return [job(payload) for payload in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, payloads))


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _prepare_out(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path!r}: {exc}") from None
    return out


def _fit_doc(fit: RateFit) -> dict:
    return {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "points": [[int(n), float(v)] for n, v in fit.points],
    }


def _write_json(path: Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(config: ExperimentConfig, workers: int = 1) -> int:
    """Integrate particle replicas; one statistics CSV per replica."""
    t0 = _time.perf_counter()
    out = Path(config.out_dir)
    sims = _sim_configs(config, "simulate")
    stages: dict[str, float] = {}

    t1 = _time.perf_counter()
    results = _map_ordered(_records_job, sims, workers)
    stages["simulate"] = _time.perf_counter() - t1

    t2 = _time.perf_counter()
    artifacts: list[str] = []
    failures: list[str] = []
    for status, replica_id, records, message in results:
        name = f"replica_{replica_id:03d}.csv"
        _write_statrecords(out / name, records)
        artifacts.append(name)
        if status == "blowup":
            failures.append(f"replica {replica_id}: {message}")
    stages["write"] = _time.perf_counter() - t2

    run_status = "ok" if not failures else "blowup"
    _write_manifest(
        out,
        "simulate",
        config,
        _seed_rows(config.seed, STREAM_SIMULATE, range(len(sims))),
        run_status,
        failures,
        stages,
        _time.perf_counter() - t0,
        artifacts,
    )
    print(f"simulate: wrote {len(sims)} replica CSVs to {out} (status {run_status})")
    for line in failures:
        print(f"  {line}", file=sys.stderr)
    return EXIT_OK if run_status == "ok" else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def _solve_setup(config: ExperimentConfig, command: str):
    try:
        grid = Grid2D(
            int(config.require("solve.cells", command)),
            float(config.require("solve.box", command)),
        )
        variances = config.require("solve.variances", command)
        field = gaussian_field(grid, variances)
        moments = InitialLaw.anisotropic_gaussian(variances).moment_state()
    except ValueError as exc:
        raise ConfigError(f"invalid 'solve.*' parameters: {exc}") from None
    t_end = float(config.require("solve.t_end", command))
    dt = config.get("solve.dt")
    if dt is None:
        # Each temperature relaxes monotonically toward 1, so the floor
        # over the whole run is min(min(E(0)), 1).
        e_floor = min(min(variances), 1.0)
        dt = 0.9 * admissible_dt(grid, e_floor)
    mode = config.get("solve.moment_mode", "closed_form")
    if mode not in ("closed_form", "self_consistent"):
        raise ConfigError(
            f"key 'solve.moment_mode': unknown mode {mode!r} "
            "(choose closed_form or self_consistent)"
        )
    return grid, field, moments, t_end, float(dt), mode


def cmd_solve(config: ExperimentConfig) -> int:
    """Integrate the limiting density; snapshots plus diagnostics CSV."""
    t0 = _time.perf_counter()
    out = Path(config.out_dir)
    _, field, moments, t_end, dt, mode = _solve_setup(config, "solve")
    snapshots = config.get("solve.snapshots")
    stages: dict[str, float] = {}

    t1 = _time.perf_counter()
    try:
        result = solve(
            field, t_end, dt, moments, snapshot_times=snapshots, moment_mode=mode
        )
    except (CflError, NegativityError) as exc:
        stages["solve"] = _time.perf_counter() - t1
        _write_manifest(
            out, "solve", config, [], "numerical_failure", [str(exc)], stages,
            _time.perf_counter() - t0, [],
        )
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    stages["solve"] = _time.perf_counter() - t1

    t2 = _time.perf_counter()
    artifacts: list[str] = []
    rows = []
    for snap, report, (mass, momentum, energy) in zip(
        result.fields, result.reports, result.conserved
    ):
        name = f"snapshot_t{snap.time:.12g}.npy"
        np.save(out / name, snap.values)
        artifacts.append(name)
        rows.append(
            [
                snap.time,
                mass,
                momentum[0],
                momentum[1],
                energy,
                report.e_grid[0],
                report.e_grid[1],
                report.e_closed[0],
                report.e_closed[1],
                report.diag_dev,
                report.offdiag_dev,
                log_gradient_ratio(snap, snap.time),
                log_hessian_ratio(snap, snap.time),
            ]
        )
    header = [
        "time",
        "mass",
        "momentum_1",
        "momentum_2",
        "energy",
        "e_grid_1",
        "e_grid_2",
        "e_closed_1",
        "e_closed_2",
        "diag_dev",
        "offdiag_dev",
        "log_grad_ratio",
        "log_hess_ratio",
    ]
    write_csv(out / "diagnostics.csv", "solvediag", header, rows)
    artifacts.append("diagnostics.csv")
    stages["write"] = _time.perf_counter() - t2

    _write_manifest(
        out, "solve", config, [], "ok", [], stages, _time.perf_counter() - t0,
        artifacts,
    )
    worst = max(row[9] for row in rows)
    print(
        f"solve: {len(result.fields)} snapshots to {out} "
        f"(max temperature deviation {worst:.3e})"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep-lln
# ---------------------------------------------------------------------------


def cmd_sweep_lln(config: ExperimentConfig, workers: int = 1) -> int:
    """Replica-averaged squared-error functional across particle counts."""
    t0 = _time.perf_counter()
    out = Path(config.out_dir)
    command = "sweep-lln"
    counts, replicas, t_end, dt, scheme, law = _sweep_common(config, command)
    if len(counts) < 3:
        raise ConfigError(
            "key 'sweep.particles': a rate fit needs at least three particle "
            f"counts, got {len(counts)}"
        )
    times = config.get("sweep.times", (t_end,))
    for t in times:
        steps = round(t / dt)
        if not 0.0 <= t <= t_end + 1e-12 or abs(steps * dt - t) > 1e-9:
            raise ConfigError(
                f"key 'sweep.times': {t!r} must lie in [0, {t_end}] on the "
                f"step grid of dt={dt!r}"
            )

    sims = [
        _sweep_sim(config, law, scheme, n, dt, t_end, i, r)
        for i, n in enumerate(counts)
        for r in range(replicas)
    ]
    stages: dict[str, float] = {}
    t1 = _time.perf_counter()
    results = _map_ordered(_records_job, sims, workers)
    stages["simulate"] = _time.perf_counter() - t1

    blowups = [
        f"replica {rid}: {msg}" for status, rid, _, msg in results if status != "ok"
    ]
    if blowups:
        _write_manifest(
            out, command, config,
            _seed_rows(config.seed, STREAM_SIMULATE, [s.replica_id for s in sims]),
            "blowup", blowups, stages, _time.perf_counter() - t0, [],
        )
        for line in blowups:
            print(f"numerical failure: {line}", file=sys.stderr)
        return EXIT_NUMERICAL

    t2 = _time.perf_counter()
    rows = []
    last_time_points = []
    for i, n in enumerate(counts):
        chunk = results[i * replicas:(i + 1) * replicas]
        for t in times:
            values = []
            for _, _, records, _ in chunk:
                hits = [rec for rec in records if abs(rec.time - t) <= 1e-9]
                if not hits:
                    raise ConfigError(
                        f"key 'sweep.times': no record at t={t!r} "
                        "(recording is per step; check dt)"
                    )
                values.append(hits[0].lln_value)
            mean = float(np.mean(values))
            spread = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
            rows.append([n, t, mean, spread / math.sqrt(len(values)), len(values)])
            if t == times[-1]:
                last_time_points.append((n, mean))
    header = ["particles", "time", "lln_mean", "lln_se", "replicas"]
    write_csv(out / "lln_sweep.csv", "llnsweep", header, rows)

    fits: dict = {}
    notes: dict = {}
    try:
        fits["lln"] = _fit_doc(convergence_slope(last_time_points))
    except ValueError as exc:
        fits["lln"] = None
        notes["lln"] = str(exc)
    doc = {"format": "landaulab.ratefit.v1", "fits": fits}
    if notes:
        doc["notes"] = notes
    _write_json(out / "ratefit.json", doc)
    stages["metrics"] = _time.perf_counter() - t2

    _write_manifest(
        out, command, config,
        _seed_rows(config.seed, STREAM_SIMULATE, [s.replica_id for s in sims]),
        "ok", [], stages, _time.perf_counter() - t0,
        ["lln_sweep.csv", "ratefit.json"],
    )
    if fits["lln"] is not None:
        print(
            f"sweep-lln: slope {fits['lln']['slope']:+.3f} "
            f"(r^2 {fits['lln']['r_squared']:.3f}) over {len(counts)} particle counts"
        )
    else:
        print(f"sweep-lln: no rate fit ({notes['lln']})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep-chaos
# ---------------------------------------------------------------------------


def _group_pools(arrays, groups: int, pool: str):
    size = len(arrays) // groups
    return [
        pool_samples(arrays[g * size:(g + 1) * size], pool=pool)
        for g in range(groups)
    ]


def cmd_sweep_chaos(config: ExperimentConfig, workers: int = 1) -> int:
    """Distributional distances between pooled replicas and limit draws.

    The limit density is solved inline on a grid, sampled by rejection,
    and compared against pooled particle velocities at each particle
    count.  Replicas are split into groups and every metric is
    evaluated once per group pool, then averaged, with the spread
    across groups reported as a standard error.  Group pools keep the
    per-comparison sample size proportional to the particle count, so
    the sampling floor of each metric shrinks together with the chaos
    signal instead of saturating at large pools.  The sliced
    Wasserstein-2 distance reuses one projection seed for every
    evaluation, so rows differ only through the samples.
    """
    t0 = _time.perf_counter()
    out = Path(config.out_dir)
    command = "sweep-chaos"
    counts, replicas, t_end, dt, scheme, law = _sweep_common(config, command)
    pool = config.get("sweep.pool", "first")
    if pool not in ("first", "all"):
        raise ConfigError(f"key 'sweep.pool': choose first or all, got {pool!r}")
    groups = int(config.get("sweep.groups", 8))
    if groups < 2 or replicas % groups != 0:
        raise ConfigError(
            f"key 'sweep.groups': must be >= 2 and divide sweep.replicas, "
            f"got {groups} groups for {replicas} replicas"
        )
    k_entropy = int(config.get("sweep.knn_k", 5))
    limit_draws = int(config.get("sweep.limit_draws", 100_000))
    bins = int(config.get("sweep.l1_bins", 12))
    projections = int(config.get("sweep.projections", 128))
    if law.d != 2:
        raise ConfigError("key 'sweep.variances': the inline solve needs d = 2")
    group_floor = (replicas // groups) * (1 if pool == "first" else min(counts))
    if group_floor <= k_entropy:
        raise ConfigError(
            f"key 'sweep.groups': group pools would hold {group_floor} points, "
            f"which cannot support knn_k = {k_entropy}"
        )

    stages: dict[str, float] = {}
    t1 = _time.perf_counter()
    try:
        grid = Grid2D(
            int(config.get("sweep.solve_cells", 129)),
            float(config.get("sweep.solve_box", 6.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid 'sweep.solve_*' parameters: {exc}") from None
    moments = law.moment_state()
    e_floor = min(min(law.axis_variances()), 1.0)
    try:
        result = solve(
            gaussian_field(grid, law.axis_variances()),
            t_end,
            0.9 * admissible_dt(grid, e_floor),
            moments,
            snapshot_times=(t_end,),
        )
        field = result.fields[-1]
        limit = sample_from_field(
            field, limit_draws, spawn_generator(config.seed, STREAM_LIMIT_DRAWS, 0)
        )
        sanity = sample_from_field(
            field, limit_draws, spawn_generator(config.seed, STREAM_LIMIT_DRAWS, 1)
        )
    except (CflError, NegativityError, RuntimeError) as exc:
        stages["limit"] = _time.perf_counter() - t1
        _write_manifest(
            out, command, config, [], "numerical_failure", [str(exc)], stages,
            _time.perf_counter() - t0, [],
        )
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    stages["limit"] = _time.perf_counter() - t1

    def directions_rng():
        return spawn_generator(config.seed, STREAM_PROJECTIONS, 0)

    t2 = _time.perf_counter()
    sims = [
        _sweep_sim(config, law, scheme, n, dt, t_end, i, r)
        for i, n in enumerate(counts)
        for r in range(replicas)
    ]
    results = _map_ordered(_state_job, sims, workers)
    stages["simulate"] = _time.perf_counter() - t2

    blowups = [
        f"replica {rid}: {msg}" for status, rid, _, msg in results if status != "ok"
    ]
    if blowups:
        _write_manifest(
            out, command, config,
            _seed_rows(config.seed, STREAM_SIMULATE, [s.replica_id for s in sims]),
            "blowup", blowups, stages, _time.perf_counter() - t0, [],
        )
        for line in blowups:
            print(f"numerical failure: {line}", file=sys.stderr)
        return EXIT_NUMERICAL

    t3 = _time.perf_counter()
    header = [
        "pair",
        "particles",
        "group_points",
        "groups",
        "sliced_w2",
        "sliced_w2_se",
        "knn_kl",
        "knn_kl_se",
        "l1",
        "ckp_margin",
        "ckp_se",
    ]
    rows = []
    sanity_sw2 = sliced_w2(sanity, limit, n_proj=projections, rng=directions_rng())
    sanity_kl = knn_kl(sanity, limit, k=k_entropy)
    sanity_l1 = histogram_l1(sanity, limit, bins=bins)
    sanity_ckp = ckp_check(knn_kl(sanity, limit, k=1), sanity_l1)
    rows.append(
        [
            "limit_vs_limit",
            0,
            sanity.size,
            1,
            sanity_sw2,
            0.0,
            sanity_kl,
            0.0,
            sanity_l1,
            sanity_ckp,
            0.0,
        ]
    )

    def mean_se(values):
        mean = float(np.mean(values))
        if len(values) < 2:
            return mean, 0.0
        return mean, float(np.std(values, ddof=1)) / math.sqrt(len(values))

    sw2_points = []
    kl_points = []
    for i, n in enumerate(counts):
        arrays = [
            velocities
            for _, _, velocities, _ in results[i * replicas:(i + 1) * replicas]
        ]
        group_sets = _group_pools(arrays, groups, pool)
        sw2_g, kl_g, l1_g, ckp_g = [], [], [], []
        for group_set in group_sets:
            sw2_g.append(
                sliced_w2(group_set, limit, n_proj=projections, rng=directions_rng())
            )
            kl_g.append(knn_kl(group_set, limit, k=k_entropy))
            l1 = histogram_l1(group_set, limit, bins=bins)
            l1_g.append(l1)
            ckp_g.append(ckp_check(knn_kl(group_set, limit, k=1), l1))
        sw2_mean, sw2_se = mean_se(sw2_g)
        kl_mean, kl_se = mean_se(kl_g)
        ckp_mean, ckp_se = mean_se(ckp_g)
        rows.append(
            [
                "particles_vs_limit",
                n,
                group_sets[0].size,
                groups,
                sw2_mean,
                sw2_se,
                kl_mean,
                kl_se,
                float(np.mean(l1_g)),
                ckp_mean,
                ckp_se,
            ]
        )
        sw2_points.append((n, sw2_mean))
        kl_points.append((n, kl_mean))
    write_csv(out / "chaos_sweep.csv", "chaossweep", header, rows)

    fits: dict = {}
    notes: dict = {}
    fits["sliced_w2"] = _fit_doc(convergence_slope(sw2_points))
    try:
        fits["knn_kl"] = _fit_doc(convergence_slope(kl_points))
    except ValueError as exc:
        fits["knn_kl"] = None
        notes["knn_kl"] = str(exc)
    doc = {"format": "landaulab.ratefit.v1", "fits": fits}
    if notes:
        doc["notes"] = notes
    _write_json(out / "ratefit.json", doc)
    stages["metrics"] = _time.perf_counter() - t3

    seed_rows = _seed_rows(
        config.seed, STREAM_SIMULATE, [s.replica_id for s in sims]
    )
    seed_rows += _seed_rows(config.seed, STREAM_LIMIT_DRAWS, (0, 1))
    seed_rows += _seed_rows(config.seed, STREAM_PROJECTIONS, (0,))
    _write_manifest(
        out, command, config, seed_rows, "ok", [], stages,
        _time.perf_counter() - t0, ["chaos_sweep.csv", "ratefit.json"],
    )
    kl_text = "none (nonpositive values)"
    if fits["knn_kl"] is not None:
        kl_text = f"{fits['knn_kl']['slope']:+.3f}"
    print(
        f"sweep-chaos: sliced_w2 slope {fits['sliced_w2']['slope']:+.3f}, "
        f"knn_kl slope {kl_text}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify-moments
# ---------------------------------------------------------------------------

_VERIFY_ORDER = 4


def cmd_verify_moments(config: ExperimentConfig, workers: int = 1) -> int:
    """Gate the propagated fourth-moment bound along trajectories."""
    t0 = _time.perf_counter()
    out = Path(config.out_dir)
    sims = _sim_configs(config, "verify-moments")
    stages: dict[str, float] = {}

    t1 = _time.perf_counter()
    results = _map_ordered(_records_job, sims, workers)
    stages["simulate"] = _time.perf_counter() - t1

    blowups = [
        f"replica {rid}: {msg}" for status, rid, _, msg in results if status != "ok"
    ]
    seed_rows = _seed_rows(config.seed, STREAM_SIMULATE, range(len(sims)))
    if blowups:
        _write_manifest(
            out, "verify-moments", config, seed_rows, "blowup", blowups, stages,
            _time.perf_counter() - t0, [],
        )
        for line in blowups:
            print(f"numerical failure: {line}", file=sys.stderr)
        return EXIT_NUMERICAL

    t2 = _time.perf_counter()
    rows = []
    worst = math.inf
    for _, replica_id, records, _ in results:
        m4_start = records[0].M_4
        for record in records:
            margin = moment_bound_check(
                record.M_4,
                m4_start,
                _VERIFY_ORDER,
                len(record.Psi_alpha),
                sims[0].N,
                record.time,
            )
            worst = min(worst, margin)
            rows.append([replica_id, record.time, record.M_4, margin])
    write_csv(
        out / "moment_bound.csv",
        "momentbound",
        ["replica", "time", "M4", "margin"],
        rows,
    )
    stages["check"] = _time.perf_counter() - t2

    passed = worst > 0.0
    failures = [] if passed else [f"minimum margin {worst!r} is not positive"]
    _write_manifest(
        out, "verify-moments", config, seed_rows,
        "ok" if passed else "gate_failed", failures, stages,
        _time.perf_counter() - t0, ["moment_bound.csv"],
    )
    verdict = "pass" if passed else "FAIL"
    print(f"verify-moments: minimum margin {worst:.6g} over all replicas ({verdict})")
    return EXIT_OK if passed else EXIT_GATE


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _report_simulate(manifest: RunManifest, base: Path, out: Path) -> dict:
    names = [a for a in manifest.artifacts if re.fullmatch(r"replica_\d+\.csv", a)]
    if not names:
        raise SchemaError("manifest lists no replica CSVs to plot")
    config = _typed_config(manifest.config)
    law = _initial_law(config, "sim.initial", "report")
    per_replica = []
    for name in names:
        header, rows = read_csv(base / name, "statrecord")
        if not rows:
            raise SchemaError(f"{base / name}: no data rows")
        d = law.d
        wanted = ["time"] + [f"psi_{a + 1}" for a in range(d)]
        per_replica.append(_columns(base / name, header, rows, wanted))
    times = per_replica[0]["time"]
    if any(cols["time"] != times for cols in per_replica):
        raise SchemaError("replica CSVs disagree on recording times")

    moments = law.moment_state()
    closed = np.array([moments.temperatures(t) for t in times])
    series = []
    worst = 0.0
    for a in range(law.d):
        measured = np.mean(
            [cols[f"psi_{a + 1}"] for cols in per_replica], axis=0
        )
        worst = max(worst, float(np.max(np.abs(measured - closed[:, a]))))
        series.append(
            Series(
                x=tuple(times),
                y=tuple(float(v) for v in measured),
                label=f"psi_{a + 1} (replica mean)",
                markers=True,
            )
        )
        series.append(
            Series(
                x=tuple(times),
                y=tuple(float(v) for v in closed[:, a]),
                label=f"target temperature {a + 1}",
                dashed=True,
            )
        )
    svg = line_plot(
        series,
        title="Directional temperatures along the particle flow",
        xlabel="time",
        ylabel="temperature",
    )
    (out / "statistics_vs_time.svg").write_text(svg, encoding="utf-8")
    return {
        "replicas": len(names),
        "rows_per_replica": len(times),
        "max_temperature_deviation": worst,
        "plots": ["statistics_vs_time.svg"],
    }


def _report_solve(manifest: RunManifest, base: Path, out: Path) -> dict:
    header, rows = read_csv(base / "diagnostics.csv", "solvediag")
    if not rows:
        raise SchemaError(f"{base / 'diagnostics.csv'}: no data rows")
    cols = _columns(
        base / "diagnostics.csv",
        header,
        rows,
        ["time", "mass", "e_grid_1", "e_grid_2", "e_closed_1", "e_closed_2",
         "diag_dev", "offdiag_dev"],
    )
    series = []
    for a in (1, 2):
        series.append(
            Series(
                x=tuple(cols["time"]),
                y=tuple(cols[f"e_grid_{a}"]),
                label=f"grid temperature {a}",
                markers=True,
            )
        )
        series.append(
            Series(
                x=tuple(cols["time"]),
                y=tuple(cols[f"e_closed_{a}"]),
                label=f"target temperature {a}",
                dashed=True,
            )
        )
    svg = line_plot(
        series,
        title="Grid temperatures against the closed-form flow",
        xlabel="time",
        ylabel="temperature",
    )
    (out / "solve_diagnostics.svg").write_text(svg, encoding="utf-8")
    mass = cols["mass"]
    return {
        "snapshots": len(rows),
        "max_diag_dev": max(cols["diag_dev"]),
        "max_offdiag_dev": max(cols["offdiag_dev"]),
        "mass_drift": max(abs(m - mass[0]) for m in mass),
        "plots": ["solve_diagnostics.svg"],
    }


def _loglog_rate_plot(points, label: str, fit: RateFit | None):
    series = [
        Series(
            x=tuple(float(n) for n, _ in points),
            y=tuple(float(v) for _, v in points),
            label=label,
            markers=True,
        )
    ]
    if fit is not None:
        series.append(
            Series(
                x=tuple(float(n) for n, _ in points),
                y=tuple(fit.evaluate(n) for n, _ in points),
                label=f"fit slope {fit.slope:+.2f}",
                dashed=True,
            )
        )
    return series


def _report_sweep_lln(manifest: RunManifest, base: Path, out: Path) -> dict:
    header, rows = read_csv(base / "lln_sweep.csv", "llnsweep")
    if not rows:
        raise SchemaError(f"{base / 'lln_sweep.csv'}: no data rows")
    cols = _columns(
        base / "lln_sweep.csv", header, rows, ["particles", "time", "lln_mean"]
    )
    t_last = max(cols["time"])
    points = [
        (int(n), v)
        for n, t, v in zip(cols["particles"], cols["time"], cols["lln_mean"])
        if t == t_last
    ]
    if len(points) < 3:
        raise SchemaError(
            f"{base / 'lln_sweep.csv'}: need at least three particle counts "
            f"at t={t_last!r} for a rate plot, found {len(points)}"
        )
    fit = convergence_slope(points)
    svg = line_plot(
        _loglog_rate_plot(points, "replica-mean squared error", fit),
        title="Squared-error functional against particle count",
        xlabel="particles",
        ylabel="squared error",
        loglog=True,
    )
    (out / "lln_rate.svg").write_text(svg, encoding="utf-8")
    return {
        "slopes": {"lln": fit.slope},
        "r_squared": {"lln": fit.r_squared},
        "time": t_last,
        "plots": ["lln_rate.svg"],
    }


def _report_sweep_chaos(manifest: RunManifest, base: Path, out: Path) -> dict:
    header, rows = read_csv(base / "chaos_sweep.csv", "chaossweep")
    if not rows:
        raise SchemaError(f"{base / 'chaos_sweep.csv'}: no data rows")
    if "pair" not in header:
        raise SchemaError(f"{base / 'chaos_sweep.csv'}: missing columns ['pair']")
    pair_at = header.index("pair")
    data_rows = [row for row in rows if row[pair_at] == "particles_vs_limit"]
    sanity_rows = [row for row in rows if row[pair_at] == "limit_vs_limit"]
    if not data_rows:
        raise SchemaError(f"{base / 'chaos_sweep.csv'}: no particle rows")
    cols = _columns(
        base / "chaos_sweep.csv",
        header,
        data_rows,
        ["particles", "sliced_w2", "knn_kl", "ckp_margin"],
    )
    sw2_points = [(int(n), v) for n, v in zip(cols["particles"], cols["sliced_w2"])]
    kl_points = [(int(n), v) for n, v in zip(cols["particles"], cols["knn_kl"])]
    sw2_fit = convergence_slope(sw2_points)
    kl_fit = None
    if all(v > 0.0 for _, v in kl_points):
        kl_fit = convergence_slope(kl_points)
    series = _loglog_rate_plot(sw2_points, "sliced W2", sw2_fit)
    if kl_fit is not None:
        series += _loglog_rate_plot(kl_points, "kNN relative entropy", kl_fit)
    svg = line_plot(
        series,
        title="Chaos metrics against particle count",
        xlabel="particles",
        ylabel="metric",
        loglog=True,
    )
    (out / "chaos_rate.svg").write_text(svg, encoding="utf-8")
    summary = {
        "slopes": {
            "sliced_w2": sw2_fit.slope,
            "knn_kl": None if kl_fit is None else kl_fit.slope,
        },
        "min_ckp_margin": min(cols["ckp_margin"]),
        "plots": ["chaos_rate.svg"],
    }
    if sanity_rows:
        sanity = _columns(
            base / "chaos_sweep.csv", header, sanity_rows, ["sliced_w2", "knn_kl"]
        )
        summary["sanity"] = {
            "sliced_w2": sanity["sliced_w2"][0],
            "knn_kl": sanity["knn_kl"][0],
        }
    return summary


def _report_verify(manifest: RunManifest, base: Path, out: Path) -> dict:
    header, rows = read_csv(base / "moment_bound.csv", "momentbound")
    if not rows:
        raise SchemaError(f"{base / 'moment_bound.csv'}: no data rows")
    cols = _columns(base / "moment_bound.csv", header, rows, ["time", "margin"])
    per_time: dict[float, float] = {}
    for t, margin in zip(cols["time"], cols["margin"]):
        per_time[t] = min(margin, per_time.get(t, math.inf))
    times = sorted(per_time)
    series = [
        Series(
            x=tuple(times),
            y=tuple(per_time[t] for t in times),
            label="worst margin over replicas",
            markers=True,
        )
    ]
    svg = line_plot(
        series,
        title="Fourth-moment bound margin along the flow",
        xlabel="time",
        ylabel="margin",
    )
    (out / "moment_margins.svg").write_text(svg, encoding="utf-8")
    return {"min_margin": min(cols["margin"]), "plots": ["moment_margins.svg"]}


_REPORTERS = {
    "simulate": _report_simulate,
    "solve": _report_solve,
    "sweep-lln": _report_sweep_lln,
    "sweep-chaos": _report_sweep_chaos,
    "verify-moments": _report_verify,
}


def cmd_report(manifest_path: str, out_dir: str) -> int:
    """Render SVG plots and a summary JSON from a previous run."""
    path = Path(manifest_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {manifest_path!r}: {exc}") from None
    if not text.lstrip().startswith("{"):
        raise ConfigError(
            "report takes the manifest.json of a previous run as --config"
        )
    manifest = RunManifest.from_json(text, source=str(path))
    reporter = _REPORTERS.get(manifest.command)
    if reporter is None:
        raise SchemaError(f"no report defined for command {manifest.command!r}")
    out = _prepare_out(out_dir)
    summary = reporter(manifest, path.resolve().parent, out)
    doc = {
        "format": "landaulab.report.v1",
        "command": manifest.command,
        "source_status": manifest.status,
    }
    doc.update(summary)
    _write_json(out / "summary.json", doc)
    print(f"report: wrote {', '.join(summary['plots'])} and summary.json to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="landaulab",
        description=(
            "Reproducible experiments for an interacting-particle velocity "
            "diffusion and its mean-field limit."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("simulate", "integrate particle replicas into statistics CSVs"),
        ("solve", "integrate the limiting density into snapshots"),
        ("sweep-lln", "squared-error functional across particle counts"),
        ("sweep-chaos", "distribution distances against the limit density"),
        ("verify-moments", "gate the propagated fourth-moment bound"),
        ("report", "render plots and a summary from a manifest"),
    ]
    for name, help_text in specs:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument(
            "--config",
            required=True,
            help="config file, or a manifest.json to re-execute"
            if name != "report"
            else "manifest.json of the run to report on",
        )
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument(
            "--workers", type=int, default=1, help="process-pool size (default 1)"
        )
        cmd.add_argument(
            "--seed", type=int, default=None, help="master seed (overrides config)"
        )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {args.workers}")
        if args.command == "report":
            return cmd_report(args.config, args.out)
        config = load_config(args.config, args.seed)
        config = replace(config, out_dir=str(_prepare_out(args.out)))
        if args.command == "simulate":
            return cmd_simulate(config, args.workers)
        if args.command == "solve":
            return cmd_solve(config)
        if args.command == "sweep-lln":
            return cmd_sweep_lln(config, args.workers)
        if args.command == "sweep-chaos":
            return cmd_sweep_chaos(config, args.workers)
        if args.command == "verify-moments":
            return cmd_verify_moments(config, args.workers)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, SchemaError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CflError, NegativityError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
