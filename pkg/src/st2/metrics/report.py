import json
from dataclasses import asdict, dataclass, field
from importlib import resources

METRIC_FIELDS = ("bleu_ref", "bleu_self", "ppl", "acc", "separation")


@dataclass
class MetricReport:
    task_id: str
    bleu_ref: float = None
    bleu_self: float = None
    ppl: float = None
    acc: float = None
    separation: float = None
    counts: dict = field(default_factory=dict)
    config_hash: str = ""

    def to_dict(self):
        # Metrics whose inputs were not supplied are omitted rather than null.
        return {k: v for k, v in asdict(self).items() if not (k in METRIC_FIELDS and v is None)}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as f:
                f.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def average_reports(reports, task_id="average") -> MetricReport:
    """Per-metric mean over the reports that carry the metric."""
    reports = list(reports)
    out = MetricReport(task_id=task_id, counts={"tasks": len(reports)})
    for name in METRIC_FIELDS:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if values:
            setattr(out, name, sum(values) / len(values))
    hashes = {r.config_hash for r in reports}
    out.config_hash = hashes.pop() if len(hashes) == 1 else ""
    return out


def report_schema() -> dict:
    return json.loads(resources.files("st2.schemas").joinpath("metric_report.schema.json").read_text())
