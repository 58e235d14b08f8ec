"""Command line driver: simulate | detect | eval | export | report.

Exit codes: 0 success, 1 anomalies found in ``--monitor`` mode, 2 usage or
configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .aggregation import ALL_CLUSTERS, ChangeMetric, ClusterKey, downsample_hourly
from .core import HOUR, ConfigError, PipelineConfig, load_config
from .datafiles import campaigns_to_csv, incidents_to_csv, read_campaigns, read_incidents
from .detector import Label, bounds_to_csv, labels_to_csv, read_labels_csv
from .evaluation import EvalReport, evaluate, stability_report, stability_report_csv
from .pipeline import all_campaign_metrics, monitor_start, run_pipeline
from .simulator import GroundTruth, ScenarioError, default_scenario, format_scenario, load_scenario
from .stability import rolling_correlation
from .tsdb import PutLine, PutLineError, SeriesStore, StoreError, encode_put

log = logging.getLogger("seasonwatch")

OUT_ENV = "SEASONWATCH_OUT"

EXIT_OK, EXIT_ALERT, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def cluster_slug(key: ClusterKey) -> str:
    return f"{key.kind}-{key.name}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _out_dir(args, cmd: str) -> Path:
    if args.out:
        out = Path(args.out)
    elif os.environ.get(OUT_ENV):
        out = Path(os.environ[OUT_ENV]) / cmd
    else:
        raise UsageError(f"--out not given and ${OUT_ENV} not set")
    out.mkdir(parents=True, exist_ok=True)
    return out


class Manifest:
    """Records inputs, every written file and per-stage timings."""

    def __init__(self, out: Path, command: str):
        self.out = out
        self.data = {"command": command, "version": __version__, "files": {}, "timings": {}}
        self._t = time.perf_counter()

    def stage(self, name: str):
        now = time.perf_counter()
        self.data["timings"][name] = round(now - self._t, 6)
        self._t = now

    def write_file(self, name: str, text: str) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        return path

    def save(self):
        files = {}
        for path in sorted(self.out.rglob("*")):
            if path.is_file() and path.name != "manifest.json":
                files[path.relative_to(self.out).as_posix()] = _sha256(path)
        self.data["files"] = files
        self.data["output_dir"] = str(self.out)
        (self.out / "manifest.json").write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = {}
    for name in ("alpha", "delta", "beta_policy", "negative_test", "membership", "detect_p", "x", "l", "shrink_window", "training_len"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    return cfg.replace(**overrides) if overrides else cfg


# -- simulate ---------------------------------------------------------------------


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario) if args.scenario else default_scenario()
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    out = _out_dir(args, "simulate")
    m = Manifest(out, "simulate")
    m.data.update(seed=scenario.seed, scenario=str(args.scenario or "<built-in default>"))
    portfolio, streams, truth = scenario.simulate()
    m.stage("simulate")

    store_dir = out / "store"
    if store_dir.exists():
        for old in store_dir.glob("*.put"):
            old.unlink()
    store = SeriesStore(store_dir)
    n_lines = 0
    for c in portfolio:
        s = streams[c.id]
        # reporter jitter: each campaign submits at a fixed second within the hour
        offset = zlib.crc32(c.id.encode()) % HOUR
        tags = (("campaign", c.id),)
        lines = [
            PutLine(scenario.metric, h + offset, v, tags)
            for h, v in zip(s.hours().tolist(), s.values.tolist())
            if v == v
        ]
        store.append_many(lines)
        n_lines += len(lines)
    m.stage("write_store")

    m.write_file("scenario.ini", format_scenario(scenario))
    m.write_file("campaigns.csv", campaigns_to_csv(portfolio))
    m.write_file("stable_labels.txt", "".join(f"{cid}\n" for cid in sorted(portfolio.stable_ids)))
    m.write_file("truth.csv", truth.to_csv())
    m.write_file("incidents.csv", incidents_to_csv(scenario.incidents))
    m.data["put_lines"] = n_lines
    m.stage("write_meta")
    m.save()
    print(f"simulated {len(portfolio)} campaigns, {n_lines} put lines -> {out}")
    return EXIT_OK


# -- detect -----------------------------------------------------------------------


def load_data_dir(data: Path):
    """(scenario, campaigns, hourly streams) from a simulate output directory."""
    for name in ("scenario.ini", "campaigns.csv"):
        if not (data / name).exists():
            raise UsageError(f"missing {data / name}; run 'simulate' first")
    scenario = load_scenario(data / "scenario.ini")
    campaigns = read_campaigns(data / "campaigns.csv")
    store = SeriesStore(data / "store")
    streams = {}
    for c in campaigns:
        raw = store.read(scenario.metric, (("campaign", c.id),))
        if len(raw):
            streams[c.id] = downsample_hourly(raw)
    if not streams:
        raise UsageError(f"no series found under {data / 'store'}")
    return scenario, campaigns, streams


def cmd_detect(args) -> int:
    cfg = _config(args)
    data = Path(args.data)
    out = _out_dir(args, "detect")
    m = Manifest(out, "detect")
    scenario, campaigns, streams = load_data_dir(data)
    m.stage("load")
    run = run_pipeline(campaigns, streams, cfg)
    m.stage("pipeline")

    m.data.update(
        config_hash=cfg.digest(),
        config=cfg.to_text().splitlines(),
        beta_policy=cfg.beta_policy,
        membership=cfg.membership,
        data_dir=str(data),
        seed=scenario.seed,
        warnings=run.warnings,
    )
    m.write_file("config.txt", cfg.to_text())
    if run.stable is not None:
        m.write_file("stable_set.txt", run.stable.to_text())
    anomalies = 0
    latest = None
    for key, cr in run.clusters.items():
        slug = cluster_slug(key)
        for p, cm in sorted(cr.metrics.items()):
            m.write_file(f"change/{slug}_p{p}.csv", cm.to_csv())
        if cr.detections:
            m.write_file(f"labels/{slug}.csv", labels_to_csv(cr.detections))
            m.write_file(f"bounds/{slug}.csv", bounds_to_csv(cr.detections))
            latest = max(latest or 0, cr.detections[-1].hour)
    m.stage("write")
    m.save()

    since = None
    if args.monitor and latest is not None:
        since = latest - (args.monitor_hours - 1) * HOUR
    for cr in run.clusters.values():
        for r in cr.detections:
            if r.label is Label.ANOMALY and (since is None or r.hour >= since):
                anomalies += 1
    print(f"labeled {len(run.clusters)} clusters (p={cfg.detect_p}); {anomalies} anomaly labels -> {out}")
    for w in run.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.monitor and anomalies:
        return EXIT_ALERT
    return EXIT_OK


# -- eval -------------------------------------------------------------------------


def _eval_one(labels, truth_hours, incidents, cfg_snapshot, key, p, args):
    inc = [i for i in incidents if key is None or key in i.scope]
    return evaluate(
        labels, truth_hours, inc, cfg_snapshot, str(key or ""), p,
        tolerance=args.tolerance, unlabeled="miss" if args.count_unlabeled else "error",
    )


def cmd_eval(args) -> int:
    out = _out_dir(args, "eval")
    m = Manifest(out, "eval")
    reports = []
    if args.labels:
        if not args.truth:
            raise UsageError("--labels needs --truth")
        truth = GroundTruth.from_csv(Path(args.truth).read_text())
        key = ClusterKey.parse(args.cluster) if args.cluster else None
        if key is not None:
            hours = truth.hours(key, args.p)
        else:
            hours = set()
            for (_, p), hs in truth.anomalous.items():
                if p == args.p:
                    hours |= hs
        incidents = read_incidents(args.incidents) if args.incidents else []
        reports.append(_eval_one(read_labels_csv(args.labels), hours, incidents, {}, key, args.p, args))
    else:
        if not (args.detect and args.data):
            raise UsageError("give --detect and --data, or --labels and --truth")
        det, data = Path(args.detect), Path(args.data)
        truth = GroundTruth.from_csv((data / "truth.csv").read_text())
        incidents = read_incidents(data / "incidents.csv")
        cfg_lines = (det / "config.txt").read_text().splitlines()
        cfg_snapshot = dict(line.split("=", 1) for line in cfg_lines if line)
        p = int(cfg_snapshot.get("detect_p", 7))
        keys = [ClusterKey.parse(args.cluster)] if args.cluster else list(ALL_CLUSTERS)
        for key in keys:
            path = det / "labels" / f"{cluster_slug(key)}.csv"
            if not path.exists():
                continue
            reports.append(_eval_one(read_labels_csv(path), truth.hours(key, p), incidents, cfg_snapshot, key, p, args))
        if not reports:
            raise UsageError(f"no label files under {det / 'labels'}")
    m.write_file("report.txt", "\n".join(r.to_text() for r in reports))
    m.write_file("report.csv", EvalReport.CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in reports))
    lat_rows = ["cluster,incident,latency_hours"]
    for r in reports:
        for name, lat in r.latencies.items():
            lat_rows.append(f"{r.cluster},{name},{'' if lat is None else lat}")
    m.write_file("latency.csv", "\n".join(lat_rows) + "\n")
    m.stage("eval")
    m.save()
    for r in reports:
        print(f"{r.cluster or '-'}: precision={r.precision:.3f} recall={r.recall:.3f} f1={r.f1:.3f}"
              + (f" ({r.note})" if r.note else ""))
    return EXIT_OK


# -- export -----------------------------------------------------------------------


def cmd_export(args) -> int:
    """Change metrics from a detect run as put lines (into a store or to stdout)."""
    det = Path(args.detect)
    files = sorted((det / "change").glob("*.csv"))
    if not files:
        raise UsageError(f"no change metrics under {det / 'change'}")
    lines = []
    for path in files:
        slug, _, p = path.stem.rpartition("_p")
        kind, _, name = slug.partition("-")
        key = ClusterKey(kind, name)
        cm = ChangeMetric.read_csv(path, key, int(p))
        tags = (("cluster", str(key)), ("p", p))
        for h, v in zip(*cm.present()):
            lines.append(PutLine(args.metric, int(h), float(v), tags))
    if args.store:
        SeriesStore(args.store).append_many(lines)
        print(f"exported {len(lines)} points to {args.store}")
    else:
        out = sys.stdout
        for p in lines:
            out.write(encode_put(p) + "\n")
    return EXIT_OK


# -- report -----------------------------------------------------------------------


def seasonal_profile_csv(streams, ids, start, end) -> str:
    """Mean hourly total by (weekday, hour of day): the seasonal pattern table."""
    n = (end - start) // HOUR
    total = np.zeros(n)
    for cid in ids:
        v = streams[cid].window(start, n)
        total += np.nan_to_num(v)
    hours = start + HOUR * np.arange(n, dtype=np.int64)
    weekday = ((hours // 86400) + 3) % 7  # 0 = Monday
    hod = (hours // HOUR) % 24
    rows = ["weekday,hour,mean"]
    for wd in range(7):
        for h in range(24):
            sel = (weekday == wd) & (hod == h)
            rows.append(f"{wd},{h},{float(total[sel].mean())!r}" if sel.any() else f"{wd},{h},")
    return "\n".join(rows) + "\n"


def cmd_report(args) -> int:
    cfg = _config(args)
    data = Path(args.data)
    out = _out_dir(args, "report")
    m = Manifest(out, "report")
    scenario, campaigns, streams = load_data_dir(data)
    truth = GroundTruth.from_csv((data / "truth.csv").read_text())
    key = ClusterKey.parse(args.cluster) if args.cluster else scenario.eval_cluster
    run = run_pipeline(campaigns, streams, cfg, clusters=[key], detect=False)
    stable_metrics = run.clusters[key].metrics
    p_values = sorted(stable_metrics)
    all_metrics = all_campaign_metrics(campaigns, streams, key, p_values)
    exclude = set()
    for p in p_values:
        exclude |= truth.hours(key, p)
    rows = stability_report(all_metrics, stable_metrics, p_values, exclude)
    m.write_file("stability.csv", stability_report_csv(rows))
    for p in p_values:
        a, s = all_metrics[p], stable_metrics[p]
        lines = ["hour,all,stable"]
        n = max(len(a), len(s))
        av = np.full(n, np.nan)
        sv = np.full(n, np.nan)
        av[: len(a)] = a.d
        sv[: len(s)] = s.d
        for i in range(n):
            fa = "" if np.isnan(av[i]) else repr(float(av[i]))
            fs = "" if np.isnan(sv[i]) else repr(float(sv[i]))
            lines.append(f"{a.start_hour + i * HOUR},{fa},{fs}")
        m.write_file(f"compare_{cluster_slug(key)}_p{p}.csv", "\n".join(lines) + "\n")

    start = min(s.start_hour for s in streams.values())
    end = max(s.end_hour for s in streams.values())
    stable_ids = sorted(run.stable.campaign_ids) if run.stable is not None else sorted(streams)
    m.write_file("seasonal_profile.csv", seasonal_profile_csv(streams, stable_ids, start, end))

    # week-over-week window correlation of every campaign at the stable-set reference hour
    ref = run.stable.computed_at if run.stable is not None else monitor_start(start, cfg)
    corr = ["campaign,p,correlation,stable"]
    back = cfg.x + cfg.max_p * 24 + cfg.l
    for c in campaigns:
        if c.id not in streams:
            continue
        vals = streams[c.id].window(ref - back * HOUR, back + 1)
        for p in cfg.p_values:
            r = rolling_correlation(vals, 24 * p, cfg.l)[back - cfg.x]
            flag = int(run.stable is not None and c.id in run.stable)
            corr.append(f"{c.id},{p},{'' if np.isnan(r) else repr(float(r))},{flag}")
    m.write_file("correlations.csv", "\n".join(corr) + "\n")
    m.data.update(config_hash=cfg.digest(), cluster=str(key))
    m.stage("report")
    m.save()
    for r in rows:
        print(f"p={r.p}: MAD all={r.mad_all:.1f} stable={r.mad_stable:.1f} ratio={r.ratio:.3f}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def _add_config_flags(p):
    p.add_argument("--config", help="flat key=value pipeline config file")
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--x", type=int, help="freshness delay in hours")
    p.add_argument("--l", type=int, help="correlation window length in hours")
    p.add_argument("--shrink-window", dest="shrink_window", type=int)
    p.add_argument("--training-len", dest="training_len", type=int)
    p.add_argument("--detect-p", dest="detect_p", type=int)
    p.add_argument("--beta-policy", dest="beta_policy", choices=["window", "literal"])
    p.add_argument("--negative-test", dest="negative_test", choices=["mean", "zero"])
    p.add_argument("--membership", choices=["snapshot", "hourly"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seasonwatch", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a portfolio, metric streams and ground truth")
    p.add_argument("--scenario", help="scenario file (default: built-in 13-week scenario)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="filter, aggregate and label change metrics")
    p.add_argument("--data", required=True, help="output directory of 'simulate'")
    p.add_argument("--out")
    p.add_argument("--monitor", action="store_true", help="exit 1 when anomalies are found")
    p.add_argument("--monitor-hours", type=int, default=1,
                   help="with --monitor, only the last N labeled hours count")
    _add_config_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score labels against ground truth")
    p.add_argument("--detect", help="output directory of 'detect'")
    p.add_argument("--data", help="output directory of 'simulate'")
    p.add_argument("--labels", help="single labels CSV")
    p.add_argument("--truth", help="truth CSV (with --labels)")
    p.add_argument("--incidents", help="incidents CSV (with --labels)")
    p.add_argument("--cluster", help="restrict to one cluster, e.g. channel:display")
    p.add_argument("--p", type=int, default=7)
    p.add_argument("--tolerance", type=int, default=0, help="hours of slack when matching")
    p.add_argument("--count-unlabeled", action="store_true",
                   help="count truth hours without labels as misses instead of failing")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write change metrics as put lines")
    p.add_argument("--detect", required=True)
    p.add_argument("--metric", default="changemetric")
    p.add_argument("--store", help="store root; default prints to stdout")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("report", help="stability comparison and seasonal tables")
    p.add_argument("--data", required=True)
    p.add_argument("--cluster")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ScenarioError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head); not an error
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return EXIT_OK
    except (StoreError, PutLineError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
