"""Pipeline driver: one run directory of artifacts, one subcommand per stage.

Configuration is a flat ``section.field = value`` file; command-line flags
override it. Each stage reads the artifacts of earlier stages from the run
directory, so stages can be re-run individually.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import attribution as attr
from . import blackbox as bb
from . import data as data_mod
from . import probe as probe_mod
from . import rules as rules_mod
from . import surrogate as sur
from .errors import DataError, InvalidConfig, InvalidFeature, TabxError
from .metrics import compute_metrics

SCHEMA_VERSION = 1


# --- configuration -------------------------------------------------------------------

@dataclass(frozen=True)
class DataSection:
    source: str = "synth"  # synth | csv
    path: str = ""
    label_column: str = "label"
    delimiter: str = ","
    subsample: int = 0  # stratified row cap, 0 keeps every row
    test_fraction: float = 0.2
    n: int = 600
    m_total: int = 60
    m_informative: int = 8
    classes: int = 3
    noise_sigma: float = 1.0
    separation: float = 1.0


@dataclass(frozen=True)
class BlackboxSection:
    conv_layers: str = "8:5:1,16:5:1"  # channels:width:stride per stage
    pool: int = 2
    embedding_dim: int = 16
    dense_bottleneck: bool = True
    latent_activation: str = "elu"
    alpha_r: float = 0.5
    alpha_ce: float = 0.5
    weight_decay: float = 1e-4
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3


@dataclass(frozen=True)
class ProbeSection:
    placement: str = "embedding"
    heads: int = 1
    hidden: int = 32
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64
    top_k: int = 20
    jacobian_rows: int = 512


@dataclass(frozen=True)
class SensitivitySection:
    w: float = 1.0
    scheme: str = "gaussian-noise"


@dataclass(frozen=True)
class SurrogateSection:
    kinds: str = "dt,rf,ert"
    primary: str = "ert"
    target: str = "truth"  # truth | blackbox: labels the surrogates are fitted to
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int | None = None
    r2_mode: str = "label"
    r2_threshold: float = 0.8


@dataclass(frozen=True)
class ImportanceSection:
    background: int = 32
    eval_rows: int = 50
    n_perms: int = 64
    perm_repeats: int = 5
    metric: str = "accuracy"


@dataclass(frozen=True)
class RulesSection:
    min_support: float = 0.01
    min_confidence: float = 0.6
    min_coverage: int = 5
    best_trees: int = 10
    max_rules: int | None = None


@dataclass(frozen=True)
class ExplainSection:
    instance: int = 0
    max_changes: int = 2
    n_perms: int = 256
    n_whatif: int = 5
    background: int = 100


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    blackbox: BlackboxSection = field(default_factory=BlackboxSection)
    probe: ProbeSection = field(default_factory=ProbeSection)
    sensitivity: SensitivitySection = field(default_factory=SensitivitySection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    importance: ImportanceSection = field(default_factory=ImportanceSection)
    rules: RulesSection = field(default_factory=RulesSection)
    explain: ExplainSection = field(default_factory=ExplainSection)

    def to_flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {"seed": self.seed}
        for f in dataclasses.fields(self):
            if f.name == "seed":
                continue
            for k, v in dataclasses.asdict(getattr(self, f.name)).items():
                out[f"{f.name}.{k}"] = v
        return out

    def to_json(self) -> dict:
        return self.to_flat()

    def hash(self) -> str:
        canon = json.dumps(self.to_flat(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_updates(self, updates: dict[str, Any]) -> "RunConfig":
        cfg = self
        for key, raw in updates.items():
            cfg = _set(cfg, key, raw)
        return cfg

    @classmethod
    def from_flat(cls, flat: dict[str, Any]) -> "RunConfig":
        return cls().with_updates(flat)

    def cae_config(self) -> bb.CAEConfig:
        s = self.blackbox
        layers = tuple(tuple(int(v) for v in stage.split(":")) for stage in s.conv_layers.split(",") if stage)
        return bb.CAEConfig(conv_layers=layers, pool=s.pool, embedding_dim=s.embedding_dim,
                            dense_bottleneck=s.dense_bottleneck, latent_activation=s.latent_activation,
                            alpha_r=s.alpha_r, alpha_ce=s.alpha_ce, weight_decay=s.weight_decay,
                            epochs=s.epochs, batch_size=s.batch_size, lr=s.lr, seed=self.seed)


def _coerce(value: Any, annotation: str, key: str) -> Any:
    if not isinstance(value, str):
        if value is None and "None" in annotation:
            return None
        if annotation.startswith("float") and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if annotation.startswith("int") and isinstance(value, int) and not isinstance(value, bool):
            return value
        if annotation == "bool" and isinstance(value, bool):
            return value
        if annotation == "str":
            raise InvalidConfig(f"{key}: expected a string")
        value = str(value)
    text = value.strip()
    if "None" in annotation and text.lower() in ("none", "null", ""):
        return None
    base = annotation.split("|")[0].strip()
    try:
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
        if base == "bool":
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise InvalidConfig(f"{key}: cannot parse {text!r} as {base}") from None
    return text


def _set(cfg: RunConfig, key: str, raw: Any) -> RunConfig:
    if key == "seed":
        return dataclasses.replace(cfg, seed=_coerce(raw, "int", key))
    section, _, name = key.partition(".")
    sections = {f.name for f in dataclasses.fields(cfg)} - {"seed"}
    if section not in sections:
        raise InvalidConfig(f"unknown config key {key!r}")
    sec = getattr(cfg, section)
    fields = {f.name: f for f in dataclasses.fields(sec)}
    if name not in fields:
        raise InvalidConfig(f"unknown config key {key!r}")
    new_sec = dataclasses.replace(sec, **{name: _coerce(raw, str(fields[name].type), key)})
    return dataclasses.replace(cfg, **{section: new_sec})


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"config line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# --- run directory -------------------------------------------------------------------

def dump_json(obj: Any, compact: bool = False) -> str:
    if compact:
        return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False, default=_np_default)
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False, default=_np_default) + "\n"


def _np_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


class RunDir:
    def __init__(self, path: str | Path, config: RunConfig, threads: int = 1):
        self.path = Path(path)
        self.config = config
        self.threads = max(1, int(threads))

    def file(self, name: str) -> Path:
        return self.path / name

    def write(self, name: str, payload: dict, compact: bool = False) -> Path:
        doc = {"schema_version": SCHEMA_VERSION, "config_hash": self.config.hash(),
               "config": self.config.to_json(), **payload}
        p = self.file(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(dump_json(doc, compact))
        return p

    def read(self, name: str) -> dict:
        p = self.file(name)
        if not p.exists():
            raise DataError(f"missing artifact {name}; run the stage that produces it first")
        return json.loads(p.read_text())

    # data

    def save_data(self, train: data_mod.Dataset, test: data_mod.Dataset, scaler: data_mod.ScalerParams) -> None:
        self.path.mkdir(parents=True, exist_ok=True)
        np.savez(self.file("data.npz"), X_train=train.features, y_train=train.labels,
                 X_test=test.features, y_test=test.labels)
        self.write("data.json", {"feature_names": list(train.feature_names),
                                 "class_names": list(train.class_names),
                                 "informative": None if train.informative is None else list(train.informative),
                                 "scaler": scaler.to_json(), "n_train": train.n_rows, "n_test": test.n_rows})

    def load_data(self) -> tuple[data_mod.Dataset, data_mod.Dataset, data_mod.ScalerParams]:
        meta = self.read("data.json")
        arr = np.load(self.file("data.npz"))
        inf = tuple(meta["informative"]) if meta["informative"] is not None else None
        names, classes = tuple(meta["feature_names"]), tuple(meta["class_names"])
        train = data_mod.Dataset(arr["X_train"], arr["y_train"], names, classes, inf)
        test = data_mod.Dataset(arr["X_test"], arr["y_test"], names, classes, inf)
        return train, test, data_mod.ScalerParams.from_json(meta["scaler"])

    def load_model(self) -> bb.CAEClassifier:
        return bb.CAEClassifier.from_json(self.read("checkpoint.json")["model"])

    def load_ranking(self) -> probe_mod.FeatureRanking:
        return probe_mod.FeatureRanking.from_json(self.read("ranking.json")["ranking"])

    def load_surrogates(self) -> dict[str, sur.SurrogateModel]:
        doc = self.read("surrogates.json")
        return {k: sur.SurrogateModel.from_json(v["model"]) for k, v in sorted(doc["surrogates"].items())}

    def load_rules(self) -> rules_mod.DecisionList:
        return rules_mod.DecisionList.from_json(self.read("rules.json")["decision_list"])


# --- stages -------------------------------------------------------------------------

def _finish_data(run: RunDir, d: data_mod.Dataset) -> dict:
    cfg = run.config
    if cfg.data.subsample and cfg.data.subsample < d.n_rows:
        _, d = data_mod.split(d, cfg.data.subsample / d.n_rows, cfg.seed)
    train, test = data_mod.split(d, cfg.data.test_fraction, cfg.seed)
    train_s, scaler = data_mod.standardize(train)
    test_s = test.with_features(scaler.transform(test.features))
    run.save_data(train_s, test_s, scaler)
    return {"rows": d.n_rows, "features": d.n_features, "classes": d.n_classes,
            "train": train.n_rows, "test": test.n_rows}


def stage_ingest(run: RunDir) -> dict:
    c = run.config.data
    if not c.path:
        raise InvalidConfig("data.path is required for ingest")
    d = data_mod.load_csv(c.path, c.label_column, c.delimiter)
    return _finish_data(run, d)


def stage_synth(run: RunDir) -> dict:
    c = run.config.data
    d = data_mod.synth_highdim(c.n, c.m_total, c.m_informative, c.classes, c.noise_sigma,
                               run.config.seed, c.separation)
    return _finish_data(run, d)


def stage_data(run: RunDir) -> dict:
    return stage_ingest(run) if run.config.data.source == "csv" else stage_synth(run)


def stage_train_blackbox(run: RunDir) -> dict:
    train, test, scaler = run.load_data()
    cfg = run.config.cae_config()
    model = bb.train(train, cfg, scaler)
    metrics = compute_metrics(bb.predict(model, test.features), test.labels, test.n_classes)
    run.write("checkpoint.json", {"model": model.to_json(), "checksum": model.checksum(),
                                  "test_metrics": metrics}, compact=True)
    return metrics


def stage_probe(run: RunDir) -> dict:
    train, _, _ = run.load_data()
    model = run.load_model()
    c = run.config.probe
    placement = c.placement
    pr = probe_mod.train_probe(model if placement == "embedding" else None, train, placement, c.heads,
                               c.epochs, c.hidden, c.lr, c.batch_size, run.config.seed)
    k = min(c.top_k, train.n_features)
    if placement == "embedding":
        rows = np.random.default_rng([run.config.seed, 3]).permutation(train.n_rows)[: c.jacobian_rows]
        ranking = probe_mod.input_attribution(model, pr, train.features[np.sort(rows)], k_cut=k)
    else:
        ranking = probe_mod.input_ranking(pr, k_cut=k)
    run.write("probe.json", {"probe": pr.to_json(), "relevance": probe_mod.extract_relevance(pr).tolist()})
    run.write("ranking.json", {"ranking": ranking.to_json(train.feature_names)})
    top = [train.feature_names[i] for i in ranking.top]
    hits = None
    if train.informative is not None:
        hits = len(set(ranking.top.tolist()) & set(train.informative))
    return {"top_k": k, "top": top, "informative_hits": hits}


def stage_sensitivity(run: RunDir) -> dict:
    _, test, _ = run.load_data()
    model = run.load_model()
    ranking = run.load_ranking()
    c = run.config.sensitivity
    rep = probe_mod.validate_topk(model, test, ranking, c.w, c.scheme, run.config.seed, run.threads)
    run.write("sensitivity.json", {"sensitivity": rep.to_json(test.feature_names)})
    return {"mean_S": float(rep.values.mean()), "features": len(rep.features)}


def _reduced(run: RunDir):
    train, test, scaler = run.load_data()
    ranking = run.load_ranking()
    sel = np.sort(ranking.top)
    return train, test, sel


def stage_surrogate(run: RunDir) -> dict:
    train, test, sel = _reduced(run)
    model = run.load_model()
    c = run.config.surrogate
    if c.target == "truth":
        y_fit = train.labels
    elif c.target == "blackbox":
        y_fit = bb.predict(model, train.features)
    else:
        raise InvalidConfig(f"surrogate.target must be truth or blackbox, got {c.target!r}")
    bb_test_proba = bb.predict_proba(model, test.features)
    Xr, Xr_test = train.features[:, sel], test.features[:, sel]
    out, summary = {}, {}
    for kind in [k.strip().upper() for k in c.kinds.split(",") if k.strip()]:
        m = sur.fit_surrogate(kind, Xr, y_fit, train.n_classes, run.config.seed, run.threads,
                              c.max_depth, c.min_leaf, c.n_trees, sel.tolist())
        s_pred, b_pred = sur.fidelity_inputs(m, Xr_test, bb_test_proba, c.r2_mode)
        fid = sur.r_squared(s_pred, b_pred, c.r2_threshold)
        preds = m.predict(Xr_test)
        entry = {"fidelity": fid.to_json(), "agreement": float(np.mean(preds == bb_test_proba.argmax(axis=1))),
                 "metrics": compute_metrics(preds, test.labels, test.n_classes)}
        out[kind.lower()] = {"model": m.to_json(), **entry}
        summary[kind.lower()] = {"r2": fid.r_squared, "verdict": fid.verdict, "agreement": entry["agreement"]}
    run.write("surrogates.json", {"surrogates": out, "selected": sel.tolist()}, compact=True)
    return summary


def stage_importance(run: RunDir) -> dict:
    train, test, sel = _reduced(run)
    models = run.load_surrogates()
    c = run.config.importance
    rng = np.random.default_rng([run.config.seed, 4])
    bg = train.features[np.sort(rng.permutation(train.n_rows)[: c.background])][:, sel]
    ev = test.features[np.sort(rng.permutation(test.n_rows)[: c.eval_rows])][:, sel]
    stacked, per = attr.stacked_shap(models, ev, bg, c.n_perms, run.config.seed)
    names = [train.feature_names[i] for i in sel]
    bb_model = run.load_model()
    bb_test = bb.predict(bb_model, test.features)
    doc = {"selected": sel.tolist(), "names": names, "stacked_gfi": stacked.tolist(), "models": {}}
    for kind, m in models.items():
        pm, ps = attr.permutation_importance(m.predict, test.features[:, sel], bb_test, c.metric,
                                            c.perm_repeats, run.config.seed)
        doc["models"][kind] = {"shap": per[kind].to_json(names), "mdi": sur.mdi_importance(m).tolist(),
                               "permutation": {"mean": pm.tolist(), "std": ps.tolist(), "metric": c.metric}}
    run.write("importance.json", doc)
    order = np.lexsort((np.arange(len(stacked)), -stacked))
    return {"top_stacked": [names[i] for i in order[:5]]}


def _primary(run: RunDir, models: dict) -> tuple[str, sur.SurrogateModel]:
    kind = run.config.surrogate.primary.lower()
    if kind not in models:
        raise InvalidConfig(f"surrogate {kind!r} was not fitted (surrogate.kinds)")
    return kind, models[kind]


def stage_rules(run: RunDir) -> dict:
    train, test, sel = _reduced(run)
    kind, m = _primary(run, run.load_surrogates())
    c = run.config.rules
    Xr, Xr_test = train.features[:, sel], test.features[:, sel]
    y = train.labels
    if m.n_trees == 1:
        cand = [rules_mod.score_rule(r, Xr, y) for r in rules_mod.extract_rules(m.trees[0])]
    else:
        cand = rules_mod.forest_rules(m, Xr, y, c.best_trees)
    kept = rules_mod.filter_rules(cand, c.min_support, c.min_confidence, c.min_coverage)
    dl = rules_mod.assemble_decision_list(kept, Xr, y, train.n_classes, c.min_support,
                                          c.min_confidence, c.min_coverage, c.max_rules)
    fidelity = rules_mod.list_fidelity(dl, m, Xr_test)
    confidence = rules_mod.list_confidence(dl, Xr_test, test.labels)
    names = [train.feature_names[i] for i in sel]
    run.write("rules.json", {"surrogate": kind, "decision_list": dl.to_json(), "fidelity": fidelity,
                             "confidence": confidence, "candidates": len(cand), "filtered": len(kept),
                             "names": names})
    run.file("rules.txt").write_text(dl.render(names, train.class_names) + "\n")
    return {"surrogate": kind, "rules": len(dl.rules), "fidelity": fidelity, "confidence": confidence}


def _explain_context(run: RunDir, instance: int):
    train, test, sel = _reduced(run)
    if not 0 <= instance < test.n_rows:
        raise InvalidConfig(f"instance {instance} outside the test split [0, {test.n_rows})")
    model = run.load_model()
    x_full = test.features[instance]

    def blackbox_fn(R):
        rows = np.repeat(x_full[None], len(R), axis=0)
        rows[:, sel] = R
        return bb.predict(model, rows)

    return train, test, sel, model, x_full, blackbox_fn


def stage_explain(run: RunDir, instance: int) -> dict:
    train, test, sel, model, x_full, blackbox_fn = _explain_context(run, instance)
    kind, m = _primary(run, run.load_surrogates())
    dl = run.load_rules()
    c = run.config.explain
    rng = np.random.default_rng([run.config.seed, 5])
    bg = train.features[np.sort(rng.permutation(train.n_rows)[: c.background])][:, sel]
    names = [train.feature_names[i] for i in sel]
    sigma = train.features[:, sel].std(axis=0)
    ex = rules_mod.explain_instance(m, dl, x_full[sel], bg, instance, sigma, blackbox_fn, c.max_changes,
                                    c.n_perms, run.config.seed, c.n_whatif, names, train.class_names)
    doc = ex.to_json(names, train.class_names)
    doc["label"] = int(test.labels[instance])
    doc["surrogate"] = kind
    run.write(f"explanations/instance_{instance}.json", {"explanation": doc})
    return {"instance": instance, "class": train.class_names[ex.predicted_class],
            "rule": ex.rule_text, "counterfactuals": len(ex.counterfactuals)}


def stage_whatif(run: RunDir, instance: int, feature: str) -> dict:
    train, test, sel, model, x_full, _ = _explain_context(run, instance)
    if feature in train.feature_names:
        f = train.feature_names.index(feature)
    else:
        try:
            f = int(feature)
        except ValueError:
            raise InvalidFeature(f"unknown feature {feature!r}") from None
    if f not in sel.tolist():
        raise InvalidFeature(f"feature {feature!r} is not among the top-k features")
    w = rules_mod.whatif_remove_feature(lambda X: bb.predict_proba(model, X), x_full, f, train.features,
                                        allowed=sel.tolist())
    doc = w.to_json(train.feature_names)
    run.write(f"explanations/whatif_{instance}_{f}.json", {"whatif": doc})
    return {"feature": train.feature_names[f], "old_class": train.class_names[w.old_class],
            "new_class": train.class_names[w.new_class], "flipped": w.flipped}


def _optional(run: RunDir, name: str) -> dict | None:
    p = run.file(name)
    return json.loads(p.read_text()) if p.exists() else None


def _strip(doc: dict | None, *drop: str) -> dict | None:
    if doc is None:
        return None
    return {k: v for k, v in doc.items() if k not in ("config", "config_hash", "schema_version") + drop}


def build_report(run: RunDir) -> dict:
    ck = run.read("checkpoint.json")
    surs = _optional(run, "surrogates.json")
    sur_summary = None
    if surs is not None:
        sur_summary = {k: {kk: vv for kk, vv in v.items() if kk != "model"} for k, v in surs["surrogates"].items()}
    explanations = {}
    exdir = run.file("explanations")
    if exdir.exists():
        for p in sorted(exdir.glob("*.json")):
            explanations[p.stem] = _strip(json.loads(p.read_text()))
    rules_doc = _optional(run, "rules.json")
    return {
        "schema_version": SCHEMA_VERSION,
        "run": {"seed": run.config.seed, "config_hash": run.config.hash(),
                "timestamps": {"created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}},
        "config": run.config.to_json(),
        "blackbox": {"metrics": ck["test_metrics"], "checksum": ck["checksum"]},
        "ranking": _strip(_optional(run, "ranking.json")),
        "sensitivity": _strip(_optional(run, "sensitivity.json")),
        "surrogates": sur_summary,
        "importance": _strip(_optional(run, "importance.json")),
        "rules": _strip(rules_doc),
        "rules_text": run.file("rules.txt").read_text() if run.file("rules.txt").exists() else None,
        "explanations": explanations,
    }


def validate_report(doc: dict) -> None:
    """Schema v1 check: required sections present and every number finite."""
    for key in ("schema_version", "run", "config", "blackbox"):
        if key not in doc:
            raise DataError(f"report is missing {key!r}")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise DataError(f"unsupported report schema {doc['schema_version']!r}")
    for k in ("seed", "config_hash", "timestamps"):
        if k not in doc["run"]:
            raise DataError(f"report run metadata is missing {k!r}")

    def walk(v, path):
        if isinstance(v, float) and not np.isfinite(v):
            raise DataError(f"non-finite number at {path}")
        if isinstance(v, dict):
            for k, x in v.items():
                walk(x, f"{path}.{k}")
        elif isinstance(v, list):
            for i, x in enumerate(v):
                walk(x, f"{path}[{i}]")

    walk(doc, "report")


def save_report(doc: dict, path: str | Path) -> None:
    validate_report(doc)
    Path(path).write_text(dump_json(doc))


def load_report(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    validate_report(doc)
    return doc


def report_without_timestamps(doc: dict) -> str:
    d = json.loads(json.dumps(doc))
    d["run"].pop("timestamps", None)
    return dump_json(d)


def stage_report(run: RunDir) -> dict:
    doc = build_report(run)
    save_report(doc, run.file("report.json"))
    return {"report": str(run.file("report.json")), "config_hash": run.config.hash()}


def run_pipeline(run: RunDir, instances: Sequence[int] = ()) -> dict:
    stage_data(run)
    stage_train_blackbox(run)
    stage_probe(run)
    stage_sensitivity(run)
    stage_surrogate(run)
    stage_importance(run)
    stage_rules(run)
    for i in instances:
        stage_explain(run, i)
    return stage_report(run)


# --- command line -----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "UsageError", "message": message}) + "\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--run-dir", default="run")
    common.add_argument("--top-k", type=int)
    common.add_argument("--placement", choices=["input", "embedding"])
    common.add_argument("--surrogate", choices=["dt", "rf", "ert"])
    common.add_argument("--threads", type=int, default=1)

    p = _Parser(prog="tabxplain", description="Explainable tabular classification pipeline")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    ing = sub.add_parser("ingest", parents=[common], help="load a CSV, split and standardize")
    ing.add_argument("path", nargs="?")
    ing.add_argument("--label-column")
    for name, text in [("synth", "generate a synthetic dataset"),
                       ("train-blackbox", "train the autoencoder classifier"),
                       ("probe", "fit the attention probe and rank features"),
                       ("sensitivity", "perturbation sensitivity of the top-k features"),
                       ("surrogate", "fit DT/RF/ERT surrogates on the top-k space"),
                       ("importance", "SHAP, MDI and permutation importance"),
                       ("rules", "extract rules and assemble a decision list"),
                       ("report", "collect artifacts into report.json")]:
        sub.add_parser(name, parents=[common], help=text)
    ex = sub.add_parser("explain", parents=[common], help="local explanation for one test row")
    ex.add_argument("--instance", type=int)
    wi = sub.add_parser("whatif", parents=[common], help="replace one feature by its mean")
    wi.add_argument("--instance", type=int)
    wi.add_argument("--feature", required=True)
    pipe = sub.add_parser("run", parents=[common], help="all stages in order")
    pipe.add_argument("--instance", type=int, action="append", default=[])
    return p


def resolve_config(args) -> RunConfig:
    stored = Path(args.run_dir) / "config.json"
    cfg = RunConfig()
    if stored.exists() and args.command not in ("ingest", "synth", "run"):
        cfg = RunConfig.from_flat(json.loads(stored.read_text())["config"])
    updates: dict[str, Any] = {}
    if args.config:
        p = Path(args.config)
        if not p.exists():
            raise InvalidConfig(f"config file {args.config} not found")
        updates.update(parse_config_text(p.read_text()))
    for item in args.set:
        if "=" not in item:
            raise InvalidConfig(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        updates[k.strip()] = v.strip()
    flags = {"seed": args.seed, "probe.top_k": args.top_k, "probe.placement": args.placement,
             "surrogate.primary": args.surrogate}
    if args.command == "ingest":
        updates["data.source"] = "csv"
        flags["data.path"] = args.path
        flags["data.label_column"] = args.label_column
    elif args.command == "synth":
        updates["data.source"] = "synth"
    if args.command in ("explain", "whatif") and args.instance is not None:
        flags["explain.instance"] = args.instance
    updates.update({k: v for k, v in flags.items() if v is not None})
    return cfg.with_updates(updates)


def print_table(title: str, rows: dict) -> None:
    flat = []
    for k, v in rows.items():
        if isinstance(v, dict):
            flat.extend((f"{k}.{kk}", vv) for kk, vv in v.items())
        else:
            flat.append((k, v))
    width = max((len(k) for k, _ in flat), default=0)
    print(title)
    for k, v in flat:
        val = f"{v:.4f}" if isinstance(v, float) else str(v)
        print(f"  {k:<{width}}  {val}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        run = RunDir(args.run_dir, cfg, args.threads)
        run.path.mkdir(parents=True, exist_ok=True)
        run.file("config.json").write_text(dump_json({"config": cfg.to_json(), "config_hash": cfg.hash()}))
        cmd = args.command
        if cmd in ("ingest", "synth"):
            result = stage_ingest(run) if cmd == "ingest" else stage_synth(run)
        elif cmd == "explain":
            result = stage_explain(run, cfg.explain.instance)
        elif cmd == "whatif":
            result = stage_whatif(run, cfg.explain.instance, args.feature)
        elif cmd == "run":
            result = run_pipeline(run, args.instance)
        else:
            result = {"train-blackbox": stage_train_blackbox, "probe": stage_probe,
                      "sensitivity": stage_sensitivity, "surrogate": stage_surrogate,
                      "importance": stage_importance, "rules": stage_rules,
                      "report": stage_report}[cmd](run)
        print_table(cmd, result)
        return 0
    except TabxError as e:
        sys.stderr.write(json.dumps({"error": e.code, "message": str(e)}) + "\n")
        return e.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
