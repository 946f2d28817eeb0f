"""Compile-and-run evaluation runtime.

Compiles candidate CPU sources with a system toolchain inside per-job
sandbox directories, executes them with timeouts, compares the output
stream against the interpreter oracle, and scores Compile Pass, Execute
Pass, and Speedup Ratio.
"""

from __future__ import annotations

import re
import shutil
import statistics
import subprocess
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from .interpreter import input_values, interpret

if TYPE_CHECKING:  # pragma: no cover
    from .dataset import CodePair


class CompileFailure(Exception):
    pass


class CompileTimeout(Exception):
    pass


class RunFailure(Exception):
    def __init__(self, kind: str, detail: str):
        super().__init__(detail)
        self.kind = kind  # "exit" | "signal" | "timeout"
        self.detail = detail


class ParseError(Exception):
    pass


class StreamShapeMismatch(Exception):
    pass


@dataclass
class ToolchainConfig:
    cc: str = "cc"
    base_flags: tuple[str, ...] = ("-O3", "-fopenmp")
    link_flags: tuple[str, ...] = ("-lm",)
    timeout_compile: float = 60.0
    timeout_run: float = 30.0
    work_dir: str | None = None


@dataclass(frozen=True)
class CompareSpec:
    """Per-element pass criterion: |a - b| <= abs_tol + rel_tol * |b| with
    b the oracle value; integer outputs compare exactly; any NaN fails."""

    abs_tol: float = 1e-5
    rel_tol: float = 1e-4


@dataclass
class EvalReport:
    pair_id: int
    compile_pass: int = 0
    execute_pass: int = 0
    max_abs_err: float = 0.0
    speedup_ratio: float = 0.0
    failure_stage: str = "none"  # none|compile|run|compare|timeout
    diagnostics: str = ""

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "compile_pass": self.compile_pass,
            "execute_pass": self.execute_pass,
            "max_abs_err": self.max_abs_err,
            "speedup_ratio": self.speedup_ratio,
            "failure_stage": self.failure_stage,
            "diagnostics": self.diagnostics,
        }


@dataclass(frozen=True)
class CompareResult:
    passed: bool
    max_abs_err: float
    detail: str = ""


# ---------------------------------------------------------------------------
# Toolchain plumbing


def compile_source(
    sources: Sequence[str | Path], toolchain: ToolchainConfig, out_path: str | Path
) -> str:
    """Invoke the external compiler; stderr is captured verbatim into the
    raised failure."""
    cmd = [
        toolchain.cc,
        *toolchain.base_flags,
        *(str(s) for s in sources),
        "-o",
        str(out_path),
        *toolchain.link_flags,
    ]
    try:
        proc = subprocess.run(
            cmd, capture_output=True, text=True, timeout=toolchain.timeout_compile
        )
    except subprocess.TimeoutExpired as exc:
        raise CompileTimeout(
            f"compiler exceeded {toolchain.timeout_compile}s: {' '.join(cmd)}"
        ) from exc
    if proc.returncode != 0:
        raise CompileFailure(proc.stderr.strip() or f"compiler exit {proc.returncode}")
    return str(out_path)


def run_binary(binary: str | Path, args: Sequence[str], timeout: float) -> str:
    try:
        proc = subprocess.run(
            [str(binary), *args], capture_output=True, text=True, timeout=timeout
        )
    except subprocess.TimeoutExpired as exc:
        raise RunFailure("timeout", f"run exceeded {timeout}s") from exc
    if proc.returncode < 0:
        raise RunFailure("signal", f"terminated by signal {-proc.returncode}")
    if proc.returncode != 0:
        raise RunFailure(
            "exit", f"exit code {proc.returncode}: {proc.stderr.strip()[:500]}"
        )
    return proc.stdout


# ---------------------------------------------------------------------------
# Output comparison


def parse_out_stream(text: str) -> dict[int, dict[int, str]]:
    """Parse `OUT <node> <index> <value>` lines into node -> index -> token."""
    values: dict[int, dict[int, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "OUT" or len(parts) != 4:
            raise ParseError(f"line {lineno}: malformed OUT line {raw!r}")
        try:
            nid = int(parts[1])
            idx = int(parts[2])
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
        slot = values.setdefault(nid, {})
        if idx in slot:
            raise ParseError(f"line {lineno}: duplicate index {idx} for node {nid}")
        slot[idx] = parts[3]
    return values


def _tokens_to_array(tokens: dict[int, str], size: int, nid: int) -> np.ndarray:
    if len(tokens) != size or set(tokens) != set(range(size)):
        raise StreamShapeMismatch(
            f"node {nid}: got {len(tokens)} elements, expected {size}"
        )
    try:
        return np.array([float(tokens[i]) for i in range(size)], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"node {nid}: non-numeric value ({exc})") from exc


def compare_outputs(
    candidate_stream: str,
    oracle: Mapping[int, np.ndarray],
    spec: CompareSpec,
) -> CompareResult:
    """Element-wise tolerance check of a harness OUT stream against oracle
    buffers (flat, keyed by node id)."""
    parsed = parse_out_stream(candidate_stream)
    if set(parsed) != set(oracle):
        raise StreamShapeMismatch(
            f"output nodes {sorted(parsed)} != oracle nodes {sorted(oracle)}"
        )
    max_err = 0.0
    first_divergence = ""
    passed = True
    for nid in sorted(oracle):
        ref = np.asarray(oracle[nid]).reshape(-1)
        got = _tokens_to_array(parsed[nid], ref.size, nid)
        if np.issubdtype(ref.dtype, np.integer):
            diff = np.abs(got - ref.astype(np.float64))
            bad = np.nonzero(diff != 0)[0]
        else:
            # The stream carries float32 precision (%.9g round-trips f32),
            # so compare in float32 space: identical bits give exactly 0.
            got32 = got.astype(np.float32).astype(np.float64)
            ref64 = ref.astype(np.float64)
            if np.isnan(got32).any() or np.isnan(ref64).any():
                first = int(np.nonzero(np.isnan(got32) | np.isnan(ref64))[0][0])
                return CompareResult(False, float("nan"), f"node {nid}[{first}]: NaN")
            diff = np.abs(got32 - ref64)
            tol = spec.abs_tol + spec.rel_tol * np.abs(ref64)
            bad = np.nonzero(diff > tol)[0]
        if diff.size:
            max_err = max(max_err, float(diff.max()))
        if bad.size and passed:
            i = int(bad[0])
            first_divergence = (
                f"node {nid}[{i}]: candidate {float(got[i])} vs oracle {float(ref[i])}"
            )
            passed = False
    return CompareResult(passed, max_err, first_divergence)


def oracle_outputs(pair: "CodePair") -> dict[int, np.ndarray]:
    """Ground-truth flat output buffers for a pair, regenerated by the
    interpreter from the pair's own PRNG inputs."""
    values = interpret(pair.graph, input_values(pair.graph, pair.pair_id))
    return {nid: values[nid].flat() for nid in pair.graph.outputs}


# ---------------------------------------------------------------------------
# Timing


_TIME_RE = re.compile(r"^TIME_NS (\d+)$", re.MULTILINE)


def _timed_ns(binary, warmups: int, reps: int, timeout: float) -> int:
    out = run_binary(binary, ["--time", str(warmups), str(reps)], timeout)
    match = _TIME_RE.search(out)
    if not match:
        raise RunFailure("exit", "timing run printed no TIME_NS line")
    return max(int(match.group(1)), 1)


def measure_speedup(
    reference_binary,
    candidate_binary,
    warmups: int = 2,
    reps: int = 10,
    timeout: float = 30.0,
    lock: threading.Lock | None = None,
) -> float:
    """median(reference) / median(candidate) over timed repetitions.

    Both binaries are expected to have passed correctness mode already.
    """
    if lock is None:
        lock = threading.Lock()
    with lock:
        ref_ns = _timed_ns(reference_binary, warmups, reps, timeout)
        cand_ns = _timed_ns(candidate_binary, warmups, reps, timeout)
    return ref_ns / cand_ns


# ---------------------------------------------------------------------------
# Candidate pipeline


def evaluate_candidate(
    pair: "CodePair",
    candidate_source: str,
    toolchain: ToolchainConfig,
    compare_spec: CompareSpec | None = None,
    baseline: str = "ref",
    measure: bool = True,
    warmups: int = 2,
    reps: int = 10,
    timing_lock: threading.Lock | None = None,
) -> EvalReport:
    """compile -> run -> compare -> (on pass) time against the pair's own
    emitted baseline. The first failure sets the stage and zeroes all
    downstream metrics; nothing raises."""
    report = EvalReport(pair_id=pair.pair_id)
    spec = compare_spec or CompareSpec(pair.compare.abs_tol, pair.compare.rel_tol)
    if toolchain.work_dir:
        Path(toolchain.work_dir).mkdir(parents=True, exist_ok=True)
    job_dir = Path(tempfile.mkdtemp(prefix=f"pair{pair.pair_id}-", dir=toolchain.work_dir))
    try:
        harness_c = job_dir / "harness.c"
        harness_c.write_text(pair.harness_src)
        candidate_c = job_dir / "candidate.c"
        candidate_c.write_text(candidate_source)
        try:
            cand_bin = compile_source(
                [harness_c, candidate_c], toolchain, job_dir / "candidate.bin"
            )
        except CompileTimeout as exc:
            report.failure_stage = "timeout"
            report.diagnostics = str(exc)
            return report
        except CompileFailure as exc:
            report.failure_stage = "compile"
            report.diagnostics = str(exc)
            return report
        report.compile_pass = 1

        try:
            stdout = run_binary(cand_bin, [], toolchain.timeout_run)
        except RunFailure as exc:
            report.failure_stage = "timeout" if exc.kind == "timeout" else "run"
            report.diagnostics = exc.detail
            return report

        try:
            result = compare_outputs(stdout, oracle_outputs(pair), spec)
        except (ParseError, StreamShapeMismatch) as exc:
            report.failure_stage = "compare"
            report.diagnostics = str(exc)
            return report
        report.max_abs_err = result.max_abs_err
        if not result.passed:
            report.failure_stage = "compare"
            report.diagnostics = result.detail
            return report
        report.execute_pass = 1

        if measure:
            base_src = pair.cpu_src if baseline == "ref" else pair.cpu_ref_src
            base_c = job_dir / "baseline.c"
            base_c.write_text(base_src)
            try:
                base_bin = compile_source(
                    [harness_c, base_c], toolchain, job_dir / "baseline.bin"
                )
                report.speedup_ratio = measure_speedup(
                    base_bin,
                    cand_bin,
                    warmups=warmups,
                    reps=reps,
                    timeout=toolchain.timeout_run,
                    lock=timing_lock,
                )
            except (CompileFailure, CompileTimeout) as exc:
                report.diagnostics = f"baseline build failed: {exc}"
            except RunFailure as exc:
                report.failure_stage = "timeout" if exc.kind == "timeout" else "run"
                report.diagnostics = f"timing run failed: {exc.detail}"
        return report
    finally:
        shutil.rmtree(job_dir, ignore_errors=True)


def aggregate_reports(reports: Sequence[EvalReport]) -> dict:
    n = len(reports)
    if n == 0:
        return {"pairs": 0, "compile_pass": 0.0, "execute_pass": 0.0, "mean_speedup": 0.0}
    executing = [r.speedup_ratio for r in reports if r.speedup_ratio > 0]
    return {
        "pairs": n,
        "compile_pass": sum(r.compile_pass for r in reports) / n,
        "execute_pass": sum(r.execute_pass for r in reports) / n,
        "mean_speedup": statistics.fmean(executing) if executing else 0.0,
    }


def evaluate_corpus(
    pairs: Iterable["CodePair"],
    candidates_dir: str | Path,
    toolchain: ToolchainConfig,
    jobs: int = 1,
    baseline: str = "ref",
    measure: bool = True,
    serial_timing: bool = False,
    warmups: int = 2,
    reps: int = 10,
) -> tuple[list[EvalReport], dict]:
    """Per-pair reports plus aggregates; candidates are `<pair_id>.c` files
    and a missing file counts as compile_pass = 0."""
    pairs = list(pairs)
    candidates = Path(candidates_dir)
    lock = threading.Lock() if serial_timing else None

    def one(pair: "CodePair") -> EvalReport:
        path = candidates / f"{pair.pair_id}.c"
        if not path.exists():
            return EvalReport(
                pair_id=pair.pair_id,
                failure_stage="compile",
                diagnostics=f"candidate file {path.name} missing",
            )
        return evaluate_candidate(
            pair,
            path.read_text(),
            toolchain,
            baseline=baseline,
            measure=measure,
            warmups=warmups,
            reps=reps,
            timing_lock=lock,
        )

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        reports = list(pool.map(one, pairs))
    return reports, aggregate_reports(reports)
