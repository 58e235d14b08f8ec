"""CSV layouts for campaign portfolios and incident lists."""
from __future__ import annotations

import csv
import io
from pathlib import Path

from .aggregation import ClusterKey
from .core import CampaignRecord
from .simulator import IncidentSpec

CAMPAIGN_FIELDS = ["id", "currency", "status", "start", "end", "targeting", "channel"]
INCIDENT_FIELDS = ["name", "start", "duration", "severity", "kind", "scope"]


def campaigns_to_csv(campaigns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CAMPAIGN_FIELDS)
    for c in campaigns:
        w.writerow([
            c.id, c.currency, c.status.value, c.start, "" if c.end is None else c.end,
            ";".join(sorted(t.value for t in c.targeting)), c.channel.value,
        ])
    return buf.getvalue()


def read_campaigns(path) -> list:
    with Path(path).open(newline="") as f:
        rows = list(csv.DictReader(f))
    out = []
    for row in rows:
        out.append(CampaignRecord(
            id=row["id"],
            currency=row["currency"],
            status=row["status"],
            start=int(row["start"]),
            end=int(row["end"]) if row["end"] else None,
            targeting=frozenset(t for t in row["targeting"].split(";") if t),
            channel=row["channel"],
        ))
    return out


def incidents_to_csv(incidents) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(INCIDENT_FIELDS)
    for inc in incidents:
        w.writerow([
            inc.name, inc.start, inc.duration, repr(inc.severity), inc.kind.value,
            ";".join(str(k) for k in sorted(inc.scope)),
        ])
    return buf.getvalue()


def read_incidents(path) -> list:
    with Path(path).open(newline="") as f:
        rows = list(csv.DictReader(f))
    return [
        IncidentSpec(
            start=int(r["start"]),
            duration=int(r["duration"]),
            severity=float(r["severity"]),
            scope=frozenset(ClusterKey.parse(k) for k in r["scope"].split(";") if k),
            kind=r["kind"],
            name=r["name"],
        )
        for r in rows
    ]
