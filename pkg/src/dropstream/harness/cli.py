"""Command-line entry point: ``dropstream <phase> --config FILE`` or ``dropstream plot``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..sender import StopCondition
from ..topology import ConfigError
from ..transport import FaultPlan, HostCostModel
from .config import ExperimentConfig, Phase, load, save, single_stream
from .phases import run_phase
from .report import load_report

log = logging.getLogger("dropstream")


def default_config(phase: Phase) -> ExperimentConfig:
    """Small desk-scale settings used when no config file is given."""
    if phase is Phase.SOAK:
        streams = [single_stream(2000, 2048000, port=9000 + i, stream_id=i) for i in range(8)]
        return ExperimentConfig(phase, streams, stop=StopCondition(packets=12500), burst_size=1024,
                                params={"abort_on_event": False})
    if phase is Phase.FAULT_ORACLE:
        return ExperimentConfig(phase, [single_stream(64)], stop=StopCondition(packets=100000), burst_size=4096,
                                faults=FaultPlan(1e-3, 1e-3, 1e-3, 3), params={"seeds": 10})
    if phase is Phase.SIZE_SWEEP:
        return ExperimentConfig(phase, [single_stream(64, line_rate=100e9)], stop=StopCondition(packets=20000),
                                burst_size=64, simulate=HostCostModel())
    if phase is Phase.LOSSLESS_RATE:
        streams = [single_stream(350, 350 * 1024, port=9000 + i, stream_id=i) for i in range(5)]
        return ExperimentConfig(phase, streams, stop=StopCondition(packets=20000), burst_size=64,
                                simulate=HostCostModel(), params={"per_stream_pps": 3.4e6})
    if phase is Phase.ASSIGNMENT_SEARCH:
        streams = [single_stream(2000, 2048000, port=9000 + i, stream_id=i) for i in range(2)]
        return ExperimentConfig(phase, streams, stop=StopCondition(packets=20000), burst_size=256)
    streams = [single_stream(64, 65536, port=9000 + i, stream_id=i, target_rate=4e6 * 64 * 8) for i in range(4)]
    return ExperimentConfig(phase, streams, stop=StopCondition(packets=20000), burst_size=32,
                            simulate=HostCostModel())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dropstream", description="DROP streaming measurements")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for phase in Phase:
        sp = sub.add_parser(phase.value, help=f"run the {phase.value} phase")
        sp.add_argument("--config", type=Path, help="YAML experiment config (.cfg)")
        sp.add_argument("--out", type=Path, help="output directory (default: config output_dir/<phase>)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--duration", type=float, help="stop each stream after this many seconds")
        sp.add_argument("--packets", type=int, help="stop each stream after this many packets")
        sp.add_argument("--transport", choices=("loopback", "udp", "raw"))
    pp = sub.add_parser("plot", help="render a report column against another to an image")
    pp.add_argument("report", type=Path, help="report.json written by a phase")
    pp.add_argument("--x", help="x column (default: first column)")
    pp.add_argument("--y", default="packet_rate")
    pp.add_argument("-o", "--output", type=Path, help="image path (default: next to the report)")
    return p


def plot_report(report_path: Path, x: str | None, y: str, output: Path | None) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rep = load_report(report_path)
    rows = rep["rows"]
    if not rows:
        raise ValueError(f"{report_path} has no rows")
    x = x or next(iter(rows[0]))
    pts = [(r[x], r[y]) for r in rows if isinstance(r.get(x), (int, float)) and isinstance(r.get(y), (int, float))]
    if not pts:
        raise ValueError(f"no numeric ({x}, {y}) pairs in {report_path}")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([a for a, _ in pts], [b for _, b in pts], marker="o")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.set_title(rep["phase"])
    ax.grid(True, alpha=0.3)
    output = output or report_path.with_name(f"{report_path.stem}-{y}.png")
    fig.tight_layout()
    fig.savefig(output, dpi=120)
    plt.close(fig)
    return output


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.command == "plot":
        try:
            print(plot_report(args.report, args.x, args.y, args.output))
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return 0

    phase = Phase(args.command)
    try:
        cfg = load(args.config) if args.config else default_config(phase)
        if cfg.phase is not phase:
            raise ConfigError(f"config is for phase {cfg.phase.value!r}, not {phase.value!r}")
        out = args.out or Path(cfg.output_dir) / phase.value
        cfg = cfg.with_overrides(args.seed, args.duration, args.packets, args.transport, out)
        save(cfg, out / "config.cfg")
        report = run_phase(cfg)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    paths = report.write(out)
    print(report.table())
    print(f"{'PASS' if report.passed else 'FAIL'}: {phase.value} -> {paths['json']}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
