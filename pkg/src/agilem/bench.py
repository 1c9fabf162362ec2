"""Microbenchmark comparing the compiled and pure-python kernel lanes."""

import time

import numpy as np

from agilem import kernels
from agilem.kernels import fallback


def _time(fn, *args, repeats: int = 3) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(count: int = 200_000, seed: int = 0) -> dict:
    """Time both lanes on representative inputs and report the ratio."""
    rng = np.random.default_rng(seed)
    urls = [f"https://img.example/{seed}/{i:012d}.jpg".encode("utf-8") for i in range(count)]
    key = bytes(range(16))
    probs = rng.random(count)

    compiled = None
    if kernels.BACKEND == "compiled":
        from agilem.kernels import _core as compiled  # noqa: F401

    report = {
        "count": count,
        "active_backend": kernels.BACKEND,
        "siphash_python_seconds": _time(fallback.siphash64_many, key, urls, repeats=1),
        "margin_python_seconds": _time(fallback.margin_from_probs, probs),
    }
    if compiled is not None:
        report["siphash_compiled_seconds"] = _time(compiled.siphash64_many, key, urls)
        report["margin_compiled_seconds"] = _time(compiled.margin_from_probs, probs)
        report["siphash_speedup"] = (
            report["siphash_python_seconds"] / report["siphash_compiled_seconds"]
        )
        report["margin_speedup"] = (
            report["margin_python_seconds"] / report["margin_compiled_seconds"]
        )
        same_hash = np.array_equal(
            fallback.siphash64_many(key, urls[:512]),
            compiled.siphash64_many(key, urls[:512]),
        )
        same_margin = np.array_equal(
            fallback.margin_from_probs(probs[:4096]),
            compiled.margin_from_probs(probs[:4096]),
        )
        report["lanes_agree"] = bool(same_hash and same_margin)
    return report


def format_report(report: dict) -> str:
    lines = [f"kernel lanes (n={report['count']}, active={report['active_backend']})"]
    for metric in ("siphash", "margin"):
        py = report.get(f"{metric}_python_seconds")
        cc = report.get(f"{metric}_compiled_seconds")
        if cc is None:
            lines.append(f"  {metric:8s} python {py * 1e3:9.2f} ms (compiled lane unavailable)")
        else:
            lines.append(
                f"  {metric:8s} python {py * 1e3:9.2f} ms   compiled {cc * 1e3:9.2f} ms"
                f"   speedup x{report[f'{metric}_speedup']:.1f}"
            )
    if "lanes_agree" in report:
        lines.append(f"  lanes agree bit for bit: {report['lanes_agree']}")
    return "\n".join(lines)
