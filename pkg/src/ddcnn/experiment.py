"""Config-driven experiment runner, reports, accuracy tables and timing files.

Configs and reports share one plain-text format: ``key = value`` lines with
dotted section prefixes and ``#`` comments, e.g.::

    seed = 0
    dataset.name = synth2d
    decomposition.p = 2 2
    local.epochs = 20
"""

from __future__ import annotations

import csv
import io
import logging
import math
import shutil
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .architectures import ScalingRule, cnn3d_global, scale_to_local, vgg3_global
from .data import Dataset, load_cifar10, load_flat, split, synth2d, synth3d
from .decomposition import make_plan
from .exceptions import DDCNNError, FormatError, ParameterError
from .pipeline import (
    AccuracyStats,
    RunMetrics,
    assemble_coarse_dataset,
    local_accuracies,
    local_seeds,
    speedup_factor,
    train_coarse,
    train_locals_parallel,
)
from .training import TrainedModel, TrainingConfig, evaluate, train_model

log = logging.getLogger(__name__)


class ExperimentError(DDCNNError):
    def __init__(self, stage, cause):
        super().__init__(stage, cause)
        self.stage = stage
        self.cause = cause

    def __str__(self):
        return f"experiment failed during {self.stage!r}: {self.cause}"


# --- key = value files ----------------------------------------------------

def parse_kv(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"line {lineno}: empty key")
        out[key] = value
    return out


def format_kv(items):
    return "".join(f"{k} = {v}\n" for k, v in items)


def _ints(value):
    return tuple(int(v) for v in str(value).split())


_TRAIN_KEYS = {f.name: f.type for f in fields(TrainingConfig)}


def _training_config(section, defaults):
    kwargs = {}
    for key, value in section.items():
        if key not in _TRAIN_KEYS:
            raise ParameterError(f"unknown training option {key!r}")
        if key == "patience":
            kwargs[key] = None if value.lower() in ("none", "off", "") else int(value)
        elif key == "dtype":
            kwargs[key] = value
        elif key in ("epochs", "batch_size", "shuffle_seed"):
            kwargs[key] = int(value)
        else:
            kwargs[key] = float(value)
    return replace(defaults, **kwargs)


def _training_items(prefix, config):
    return [(f"{prefix}.{k}", "none" if v is None else v) for k, v in asdict(config).items()]


# --- experiment config ----------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"name": "synth2d"})
    variant: str = "type-a"
    p: tuple = (2,)
    delta: int = 0
    architecture: str = "vgg3"
    width_divisor: int | None = None
    global_width_divisor: int = 1
    coarse_variant: str = "plain"
    local: TrainingConfig = TrainingConfig()
    coarse: TrainingConfig = TrainingConfig()
    global_: TrainingConfig = TrainingConfig()
    seed: int = 0
    output: str = "runs/experiment"
    workers: int = 1
    label: str | None = None

    @classmethod
    def from_text(cls, text):
        return cls.from_mapping(parse_kv(text))

    @classmethod
    def from_file(cls, path):
        return cls.from_text(Path(path).read_text())

    @classmethod
    def from_mapping(cls, kv):
        sections = {"dataset": {}, "decomposition": {}, "architecture": {},
                    "local": {}, "coarse": {}, "global": {}}
        top = {}
        for key, value in kv.items():
            head, _, rest = key.partition(".")
            if rest and head in sections:
                sections[head][rest] = value
            elif not rest:
                top[key] = value
            else:
                raise ParameterError(f"unknown config section in {key!r}")
        arch = sections["architecture"]
        decomp = sections["decomposition"]
        coarse = dict(sections["coarse"])
        coarse_variant = coarse.pop("variant", "plain")
        for key in top:
            if key not in ("seed", "output", "workers", "label"):
                raise ParameterError(f"unknown config key {key!r}")
        for key in decomp:
            if key not in ("variant", "p", "delta"):
                raise ParameterError(f"unknown decomposition option {key!r}")
        for key in arch:
            if key not in ("name", "width_divisor", "global_width_divisor"):
                raise ParameterError(f"unknown architecture option {key!r}")
        wd = arch.get("width_divisor", "none")
        is_3d = arch.get("name", "vgg3") == "cnn3d"
        base = TrainingConfig(epochs=30, batch_size=2, patience=15) if is_3d else TrainingConfig()
        coarse_base = base
        return cls(
            dataset=dict(sections["dataset"]) or {"name": "synth2d"},
            variant=decomp.get("variant", "type-a"),
            p=_ints(decomp.get("p", "2")),
            delta=int(decomp.get("delta", 0)),
            architecture=arch.get("name", "vgg3"),
            width_divisor=None if wd.lower() == "none" else int(wd),
            global_width_divisor=int(arch.get("global_width_divisor", 1)),
            coarse_variant=coarse_variant,
            local=_training_config(sections["local"], base),
            coarse=_training_config(coarse, coarse_base),
            global_=_training_config(sections["global"], base),
            seed=int(top.get("seed", 0)),
            output=top.get("output", "runs/experiment"),
            workers=int(top.get("workers", 1)),
            label=top.get("label"),
        )

    def items(self):
        out = [("seed", self.seed), ("output", self.output), ("workers", self.workers)]
        if self.label:
            out.append(("label", self.label))
        out += [(f"dataset.{k}", v) for k, v in self.dataset.items()]
        out += [("decomposition.variant", self.variant),
                ("decomposition.p", " ".join(map(str, self.p))),
                ("decomposition.delta", self.delta),
                ("architecture.name", self.architecture),
                ("architecture.width_divisor", "none" if self.width_divisor is None else self.width_divisor),
                ("architecture.global_width_divisor", self.global_width_divisor),
                ("coarse.variant", self.coarse_variant)]
        out += _training_items("local", self.local)
        out += _training_items("coarse", self.coarse)
        out += _training_items("global", self.global_)
        return out

    def to_text(self):
        return format_kv(self.items())

    def decomposition_label(self):
        if self.label:
            return self.label
        if self.variant == "type-b":
            return "type B, 3x3 + 2x2"
        return f"type A {'x'.join(map(str, self.p))}, delta={self.delta}"

    def baseline_key(self):
        """Configs sharing this key train an identical global baseline."""
        return (tuple(sorted(self.dataset.items())), self.architecture, self.global_width_divisor,
                self.global_, self.seed)


# --- dataset / model construction ----------------------------------------

def _size(value, default):
    return _ints(value) if value else default


def load_datasets(dcfg, seed=0):
    """``(train, validation)`` for the ``dataset.*`` section of a config."""
    name = dcfg.get("name", "synth2d")
    frac = float(dcfg.get("train_fraction", 0.8))
    split_seed = int(dcfg.get("split_seed", seed))
    if name == "cifar10":
        train, test = load_cifar10(dcfg["path"])
        rng = np.random.default_rng(int(dcfg.get("subset_seed", seed)))
        n_tr = int(dcfg.get("train_size", len(train)))
        n_va = int(dcfg.get("val_size", len(test)))
        tr_idx = np.sort(rng.choice(len(train), n_tr, replace=False))
        va_idx = np.sort(rng.choice(len(test), n_va, replace=False))
        return train.subset(tr_idx, "cifar10-train"), test.subset(va_idx, "cifar10-val")
    if name == "synth2d":
        ds = synth2d(int(dcfg.get("n", 400)), int(dcfg.get("classes", 4)),
                     _size(dcfg.get("size"), (32, 32)), dcfg.get("placement", "per-quadrant"),
                     float(dcfg.get("noise", 0.5)), int(dcfg.get("seed", seed)),
                     int(dcfg.get("channels", 1)))
        return split(ds, frac, split_seed)
    if name == "synth3d":
        ds = synth3d(int(dcfg.get("n", 100)), _size(dcfg.get("size"), (64, 64, 32)),
                     int(dcfg.get("seed", seed)), float(dcfg.get("noise", 0.1)))
        return split(ds, frac, split_seed)
    if name == "flat":
        return split(load_flat(dcfg["path"]), frac, split_seed)
    raise ParameterError(f"unknown dataset {name!r}")


def build_global_spec(config, train: Dataset):
    shape = train.X.shape[1:]
    if config.architecture == "vgg3":
        spec = vgg3_global(shape, train.n_classes)
    elif config.architecture == "cnn3d":
        if train.n_classes != 2:
            raise ParameterError("cnn3d is a binary architecture")
        spec = cnn3d_global(shape)
    else:
        raise ParameterError(f"unknown architecture {config.architecture!r}")
    if config.global_width_divisor > 1:
        spec = replace_name(scale_to_local(spec, shape[:-1], ScalingRule(config.global_width_divisor)), spec.name)
    return spec


def replace_name(spec, name):
    return type(spec)(spec.input_shape, spec.layers, spec.n_classes, name)


def build_plan(config, train: Dataset):
    domain = train.domain
    p = config.p * domain.ndim if len(config.p) == 1 else config.p
    return make_plan(domain, config.variant, p, config.delta)


def build_rule(config, plan):
    if config.width_divisor is not None:
        return ScalingRule(config.width_divisor)
    return ScalingRule.for_plan(plan)


# --- report ---------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


@dataclass
class Report:
    config: ExperimentConfig
    metrics: RunMetrics
    n_train: int
    n_val: int
    n_patches: int
    seeds: dict = field(default_factory=dict)
    local_val_each: list = field(default_factory=list)
    local_train_each: list = field(default_factory=list)
    started: str = ""
    finished: str = ""
    version: str = __version__
    notes: dict = field(default_factory=dict)

    @property
    def label(self):
        return self.config.decomposition_label()

    def to_text(self):
        m = self.metrics
        items = [("report.version", self.version), ("report.started", self.started),
                 ("report.finished", self.finished), ("report.label", self.label),
                 ("report.n_train", self.n_train), ("report.n_val", self.n_val),
                 ("report.n_patches", self.n_patches)]
        items += [(f"report.note.{k}", v) for k, v in self.notes.items()]
        items += [(f"seeds.{k}", " ".join(map(str, v)) if isinstance(v, (list, tuple)) else v)
                  for k, v in self.seeds.items()]
        items += [(f"config.{k}", v) for k, v in self.config.items()]
        if m.global_acc is not None:
            items += [("metrics.global.train", _fmt(m.global_acc[0])), ("metrics.global.val", _fmt(m.global_acc[1]))]
        for split_name, stats in (("train", m.local_train), ("val", m.local_val)):
            if stats is not None:
                items += [(f"metrics.local.{split_name}.{a}", _fmt(getattr(stats, a))) for a in ("avg", "min", "max")]
        if self.local_train_each:
            items.append(("metrics.local.train.each", " ".join(map(_fmt, self.local_train_each))))
        if self.local_val_each:
            items.append(("metrics.local.val.each", " ".join(map(_fmt, self.local_val_each))))
        if m.cnn_dnn_acc is not None:
            items += [("metrics.cnn_dnn.train", _fmt(m.cnn_dnn_acc[0])), ("metrics.cnn_dnn.val", _fmt(m.cnn_dnn_acc[1]))]
        items += [("timing.global", _fmt(m.global_seconds)),
                  ("timing.local", " ".join(map(_fmt, m.local_seconds))),
                  ("timing.max_local", _fmt(m.max_local_seconds)),
                  ("timing.coarse", _fmt(m.coarse_seconds)),
                  ("timing.speedup", _fmt(m.speedup))]
        return "# ddcnn experiment report\n" + format_kv(items)

    @classmethod
    def from_text(cls, text):
        kv = parse_kv(text)
        get = lambda k: float(kv[k])
        def stats(name):
            keys = [f"metrics.local.{name}.{a}" for a in ("avg", "min", "max")]
            return AccuracyStats(*(get(k) for k in keys)) if keys[0] in kv else None
        def pair(name):
            a, b = f"metrics.{name}.train", f"metrics.{name}.val"
            return (get(a), get(b)) if a in kv else None
        try:
            metrics = RunMetrics(
                global_acc=pair("global"), local_train=stats("train"), local_val=stats("val"),
                cnn_dnn_acc=pair("cnn_dnn"), global_seconds=get("timing.global"),
                local_seconds=[float(v) for v in kv.get("timing.local", "").split()],
                coarse_seconds=get("timing.coarse"),
            )
            config = ExperimentConfig.from_mapping(
                {k[len("config."):]: v for k, v in kv.items() if k.startswith("config.")})
            seeds = {k[len("seeds."):]: v for k, v in kv.items() if k.startswith("seeds.")}
            notes = {k[len("report.note."):]: v for k, v in kv.items() if k.startswith("report.note.")}
            each = lambda k: [float(v) for v in kv.get(k, "").split()]
            return cls(config, metrics, int(kv["report.n_train"]), int(kv["report.n_val"]),
                       int(kv["report.n_patches"]), seeds, each("metrics.local.val.each"),
                       each("metrics.local.train.each"), kv.get("report.started", ""),
                       kv.get("report.finished", ""), kv.get("report.version", ""), notes)
        except KeyError as exc:
            raise FormatError(f"report is missing {exc}") from exc

    @classmethod
    def from_file(cls, path):
        return cls.from_text(Path(path).read_text())


def timing_report(global_seconds, max_local_seconds, coarse_seconds, label="timing", local_seconds=None):
    """A metrics-free report carrying only the three timing quantities."""
    metrics = RunMetrics(global_seconds=float(global_seconds),
                         local_seconds=list(local_seconds or [max_local_seconds]),
                         coarse_seconds=float(coarse_seconds))
    return Report(ExperimentConfig(label=label), metrics, 0, 0, len(metrics.local_seconds))


# --- table / timing emission ----------------------------------------------

def _decimals(denominator):
    """4 decimals, more when k/denominator fractions could collide after rounding."""
    if denominator <= 0:
        return 4
    return max(4, math.ceil(math.log10(denominator)))


def _cells(report):
    m = report.metrics
    N = max(report.n_patches, 1)
    dv, dt = _decimals(report.n_val), _decimals(report.n_train)
    dv_avg, dt_avg = _decimals(report.n_val * N), _decimals(report.n_train * N)
    def one(value, d):
        return "-" if value is None else f"{value:.{d}f}"
    rows = []  # (val, train) per column
    g = m.global_acc
    rows.append((one(g and g[1], dv), one(g and g[0], dt)))
    for attr in ("avg", "min", "max"):
        dva, dtr = (dv_avg, dt_avg) if attr == "avg" else (dv, dt)
        rows.append((one(m.local_val and getattr(m.local_val, attr), dva),
                     one(m.local_train and getattr(m.local_train, attr), dtr)))
    c = m.cnn_dnn_acc
    rows.append((one(c and c[1], dv), one(c and c[0], dt)))
    return rows


TABLE_HEADER = ("Decomp", "global", "local avg", "local min", "local max", "CNN-DNN")
CSV_HEADER = ("decomp", "global_val", "global_train", "local_avg_val", "local_avg_train",
              "local_min_val", "local_min_train", "local_max_val", "local_max_train",
              "cnn_dnn_val", "cnn_dnn_train")


def emit_table(reports, fmt="aligned-text", path=None):
    """Accuracy table with validation values over bracketed training values."""
    if not isinstance(reports, (list, tuple)):
        reports = [reports]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in reports:
            writer.writerow([r.label, *(v for pair in _cells(r) for v in pair)])
        text = buf.getvalue()
    elif fmt == "aligned-text":
        body = []
        for r in reports:
            cells = _cells(r)
            label = r.label.split(", ", 1)
            # trailing space keeps the digits above their bracketed counterpart
            body.append([label[0], *(f"{v} " for v, _ in cells)])
            body.append([label[1] if len(label) > 1 else "", *(f"({t})" for _, t in cells)])
        widths = [max(len(row[i]) for row in [list(TABLE_HEADER), *body]) for i in range(len(TABLE_HEADER))]
        def line(row):
            return " | ".join(cell.ljust(w) if i == 0 else cell.rjust(w)
                              for i, (cell, w) in enumerate(zip(row, widths))).rstrip() + "\n"
        rule = "-+-".join("-" * w for w in widths) + "\n"
        text = line(TABLE_HEADER) + rule
        for i in range(0, len(body), 2):
            text += line(body[i]) + line(body[i + 1]) + rule
    else:
        raise ParameterError(f"unknown table format {fmt!r}; expected 'aligned-text' or 'csv'")
    if path is not None:
        Path(path).write_text(text)
    return text


def emit_timing(report, path=None):
    """One ``quantity,seconds`` row per timing quantity, then the speedup factor."""
    m = report.metrics
    rows = [("global", m.global_seconds), ("max_local", m.max_local_seconds), ("coarse", m.coarse_seconds)]
    rows += [(f"local_{i}", s) for i, s in enumerate(m.local_seconds)]
    rows.append(("speedup", speedup_factor(m.global_seconds, m.max_local_seconds, m.coarse_seconds)))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("quantity", "seconds"))
    for name, value in rows:
        writer.writerow((name, repr(float(value))))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_timing(text):
    rows = list(csv.reader(io.StringIO(text)))
    return {name: float(value) for name, value in rows[1:]}


# --- runner ---------------------------------------------------------------

@dataclass
class Baseline:
    key: tuple
    model: TrainedModel
    seconds: float
    acc: tuple


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_experiment(config: ExperimentConfig, baseline: Baseline | None = None, write=True):
    """Execute the full protocol and return a :class:`Report`.

    Stages: data, split, global baseline, plan, local training, coarse
    training, evaluation. A ``baseline`` from an earlier run whose
    :meth:`ExperimentConfig.baseline_key` matches is reused instead of being
    retrained. With ``write`` the artifacts land in ``config.output``; a
    failing run leaves nothing behind.
    """
    started = _now()
    stage = "data"
    try:
        train, val = load_datasets(config.dataset, config.seed)
        stage = "global"
        gspec = build_global_spec(config, train)
        if baseline is not None and baseline.key == config.baseline_key():
            gmodel, gsec, gacc = baseline.model, baseline.seconds, baseline.acc
            reused = True
        else:
            gmodel = train_model(gspec, train.as_tuple(), val.as_tuple(), config.global_, config.seed)
            gsec = gmodel.train_seconds
            gacc = (evaluate(gmodel, *train.as_tuple()), evaluate(gmodel, *val.as_tuple()))
            reused = False
        stage = "plan"
        plan = build_plan(config, train)
        rule = build_rule(config, plan)
        stage = "locals"
        seeds = local_seeds(config.seed, plan.n)
        ensemble = train_locals_parallel(gspec, plan, rule, train.as_tuple(), val.as_tuple(),
                                         config.local, seeds, config.workers)
        stage = "coarse"
        btr = assemble_coarse_dataset(ensemble, *train.as_tuple())
        bva = assemble_coarse_dataset(ensemble, *val.as_tuple())
        coarse = train_coarse(btr, bva, plan.n, train.n_classes, config.coarse_variant,
                              config.coarse, config.seed + plan.n)
        stage = "evaluate"
        lt = local_accuracies(ensemble, *train.as_tuple())
        lv = local_accuracies(ensemble, *val.as_tuple())
        cnn_dnn = (evaluate(coarse, *btr), evaluate(coarse, *bva))
        metrics = RunMetrics(gacc, AccuracyStats.of(lt), AccuracyStats.of(lv), cnn_dnn,
                             gsec, list(ensemble.seconds), coarse.train_seconds)
        report = Report(config, metrics, len(train), len(val), plan.n,
                        {"global": config.seed, "local": seeds, "coarse": config.seed + plan.n,
                         "local_divisor": rule.divisor},
                        lv, lt, started, _now())
        if reused:
            report.notes["global_reused"] = "true"
        report.baseline = Baseline(config.baseline_key(), gmodel, gsec, gacc)
        if write:
            stage = "write"
            _write_artifacts(config, report, plan, gspec, ensemble, coarse)
        return report
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(stage, exc) from exc


def _write_artifacts(config, report, plan, gspec, ensemble, coarse):
    out = Path(config.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}-", dir=out.parent))
    try:
        (tmp / "config.txt").write_text(config.to_text())
        (tmp / "report.txt").write_text(report.to_text())
        (tmp / "plan.txt").write_text(plan.to_text())
        (tmp / "global_spec.txt").write_text(gspec.to_text())
        (tmp / "local_spec_0.txt").write_text(ensemble.locals[0].spec.to_text())
        (tmp / "coarse_spec.txt").write_text(coarse.spec.to_text())
        emit_table(report, "aligned-text", tmp / "table.txt")
        emit_table(report, "csv", tmp / "table.csv")
        emit_timing(report, tmp / "timing.csv")
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def run_many(configs, write=True):
    """Run configs in order, reusing a global baseline between compatible ones."""
    reports, baseline = [], None
    for cfg in configs:
        t0 = time.perf_counter()
        report = run_experiment(cfg, baseline, write)
        baseline = report.baseline
        log.info("%s finished in %.1fs", cfg.decomposition_label(), time.perf_counter() - t0)
        reports.append(report)
    return reports
