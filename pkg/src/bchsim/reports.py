"""Experiment reports: a verdict-carrying record with lossless text round trip.

File layout: ``key: value`` header lines, then one block per section
([parameters], [series], [verdicts], [environment]).  Series and verdicts are
embedded CSV; floats are written with repr so parsing returns the exact
values.  Report files are named <experiment>-<timestamp>-<seed>.report; the
timestamp lives only in the filename so report contents stay a pure function
of (config, seed).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    measured: float
    threshold: float


@dataclass
class ExperimentReport:
    experiment: str
    parameters: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)

    def add_verdict(self, name: str, passed: bool, measured: float, threshold: float):
        self.verdicts.append(Verdict(name, bool(passed), float(measured), float(threshold)))

    @property
    def all_passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def verdict(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def render_report(report: ExperimentReport) -> str:
    lines = [f"experiment: {report.experiment}"]
    lines.append("[environment]")
    for k, v in report.environment.items():
        lines.append(f"{k}: {_fmt(v)}")
    lines.append("[parameters]")
    for k, v in sorted(report.parameters.items()):
        lines.append(f"{k} = {v}")
    lines.append("[series]")
    names = list(report.series.keys())
    lines.append(",".join(names))
    if names:
        length = max(len(report.series[n]) for n in names)
        for i in range(length):
            row = []
            for n in names:
                col = report.series[n]
                row.append(repr(float(col[i])) if i < len(col) else "")
            lines.append(",".join(row))
    lines.append("[verdicts]")
    lines.append("name,passed,measured,threshold")
    for v in report.verdicts:
        lines.append(f"{v.name},{_fmt(v.passed)},{repr(v.measured)},{repr(v.threshold)}")
    return "\n".join(lines) + "\n"


def write_report(report: ExperimentReport, directory: str = ".") -> str:
    import os

    seed = report.environment.get("seed", 0)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = os.path.join(directory, f"{report.experiment}-{stamp}-{seed}.report")
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_report(report))
    return path


def parse_report(text: str) -> ExperimentReport:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("experiment: "):
        raise ValueError("not a report: missing experiment header")
    report = ExperimentReport(experiment=lines[0][len("experiment: "):])
    section = None
    series_names = None
    for line in lines[1:]:
        if line in ("[environment]", "[parameters]", "[series]", "[verdicts]"):
            section = line[1:-1]
            series_names = None
            continue
        if line == "":
            continue
        if section == "environment":
            k, _, v = line.partition(": ")
            report.environment[k] = _parse_env_value(v)
        elif section == "parameters":
            k, _, v = line.partition(" = ")
            report.parameters[k] = v
        elif section == "series":
            if series_names is None:
                series_names = [n for n in line.split(",") if n]
                for n in series_names:
                    report.series[n] = []
            else:
                for n, cell in zip(series_names, line.split(",")):
                    if cell != "":
                        report.series[n].append(float(cell))
        elif section == "verdicts":
            if line == "name,passed,measured,threshold":
                continue
            name, passed, measured, threshold = line.split(",")
            report.verdicts.append(
                Verdict(name, passed == "true", float(measured), float(threshold))
            )
    return report


def _parse_env_value(v: str):
    if v in ("true", "false"):
        return v == "true"
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def read_report(path: str) -> ExperimentReport:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_report(fh.read())
