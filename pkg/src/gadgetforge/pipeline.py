"""Pipeline configuration, stage functions and up-to-date stamps.

Every stage reads its inputs from the corpus directory or earlier artifacts,
writes its outputs under the artifacts directory, and records a stamp with
the digests of what it consumed and produced. A stage whose stamp still
matches is skipped.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import SCHEMA_VERSION, __version__
from .corpusgen import TRUTH_FILE, CorpusSpec, corpus_files, generate, make_labeler, read_truth, verify_corpus
from .embedding import EmbeddingConfig, load_table, save_table, table_digest, export_tsv, train_embeddings
from .errors import ConfigError, EmptyDataset, GadgetForgeError, InvalidSpec
from .evaluation import ConfusionMatrix, confusion, report_dict, report_table, split_indices
from .gadgets import default_rules, extract_gadgets, load_rules, read_gadgets, write_gadgets
from .graphs import analyze_function, graph_dump
from .ingest import analyze_structure, bundle_to_json, combine_analyses, load_listing
from .kan import FeatureScaler, struct_features
from .network import (
    ModelConfig,
    NetworkInput,
    TrainConfig,
    check_embeddings,
    init_model,
    load_model,
    predict_scores,
    save_model,
    train,
)

log = logging.getLogger(__name__)

ARTIFACTS_ENV = "GADGETFORGE_ARTIFACTS"
STAGES = ("gen-corpus", "ingest", "graph", "slice", "embed", "train", "detect", "eval", "report")
RUN_CHAIN = STAGES


def _digest_bytes(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def _digest_json(obj) -> str:
    return _digest_bytes(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8"))


def file_digest(path) -> str:
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _schema() -> dict:
    return json.loads(resources.files("gadgetforge.data").joinpath("config.schema.json").read_text("utf-8"))


DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "split_ratio": 0.8,
    "stratified": True,
    "threshold": 0.5,
    "paths": {"corpus_dir": "corpus", "rules": None, "artifacts_dir": "artifacts"},
    "corpus": None,
    "slicing": {"direction": "both", "max_tokens": 500},
    "embedding": {"dim": 100, "window": 5, "negatives": 5, "lr": 0.025, "epochs": 5, "min_count": 1},
    "model": {"hidden": 128, "layers": 3, "attention_dim": 128, "kernel_sizes": [1, 3, 5], "dropout": 0.5,
              "use_kan": True, "trainable_embeddings": False, "kan_grid": 5, "kan_order": 3},
    "train": {"batch": 64, "epochs": 30, "optimizer": "adamax", "lr": 0.001, "bucket": 8},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    raw: dict  # fully defaulted config as JSON
    base_dir: Path

    @classmethod
    def from_dict(cls, obj: dict, base_dir=".", seed: Optional[int] = None,
                  threads: Optional[int] = None) -> "PipelineConfig":
        import jsonschema

        try:
            jsonschema.validate(obj, _schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {where}: {exc.message}") from None
        raw = _merge(DEFAULTS, obj)
        if raw.get("corpus") is not None:
            raw["corpus"] = _merge({"n_functions": 2000, "vulnerable_ratio": 0.5,
                                    "families": list(CorpusSpec().families), "distractors": [2, 5],
                                    "identifier_pool": 64}, raw["corpus"])
        if seed is not None:
            raw["seed"] = int(seed)
        if threads is not None:
            raw["threads"] = int(threads)
        if raw["threads"] < 1:
            raise ConfigError("threads must be >= 1")
        cfg = cls(raw, Path(base_dir).resolve())
        cfg.validate()
        return cfg

    def validate(self) -> None:
        self.embedding_config().validate()
        self.model_config(vocab_size=2).validate()  # real vocab size is known only after embed
        self.train_config().validate()
        spec = self.corpus_spec()
        if spec is not None:
            try:
                spec.validate()
            except InvalidSpec as exc:
                raise ConfigError(f"corpus: {exc}") from None

    @classmethod
    def load(cls, path, seed: Optional[int] = None, threads: Optional[int] = None) -> "PipelineConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(obj, path.parent, seed, threads)

    # -- digests: everything except execution knobs that cannot change results
    @property
    def digest(self) -> str:
        body = {k: v for k, v in self.raw.items() if k not in ("threads", "paths")}
        return _digest_json(body)

    # -- paths
    def _resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def corpus_dir(self) -> Path:
        return self._resolve(self.raw["paths"]["corpus_dir"])

    @property
    def artifacts_dir(self) -> Path:
        env = os.environ.get(ARTIFACTS_ENV)
        return Path(env).resolve() if env else self._resolve(self.raw["paths"]["artifacts_dir"])

    @property
    def rules_path(self) -> Optional[Path]:
        p = self.raw["paths"].get("rules")
        return self._resolve(p) if p else None

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def threads(self) -> int:
        return int(self.raw["threads"])

    def rules(self):
        return load_rules(self.rules_path) if self.rules_path else default_rules()

    def corpus_spec(self) -> Optional[CorpusSpec]:
        c = self.raw.get("corpus")
        if c is None:
            return None
        return CorpusSpec(c["n_functions"], c["vulnerable_ratio"], tuple(c["families"]), tuple(c["distractors"]),
                          c["identifier_pool"], self.seed)

    def embedding_config(self) -> EmbeddingConfig:
        return EmbeddingConfig(seed=self.seed, **self.raw["embedding"])

    def model_config(self, vocab_size: int = 0) -> ModelConfig:
        m = dict(self.raw["model"])
        m["kernel_sizes"] = tuple(m["kernel_sizes"])
        m["embed_dim"] = self.raw["embedding"]["dim"]
        m["max_tokens"] = self.raw["slicing"]["max_tokens"]
        if m.get("trainable_embeddings"):
            m["vocab_size"] = vocab_size
        return ModelConfig(seed=self.seed, **m)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, threshold=self.raw["threshold"], **self.raw["train"])


# ----------------------------------------------------------------------------
# artifacts and stamps


class Artifacts:
    def __init__(self, root: Path):
        self.root = Path(root)

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    @property
    def gadgets(self) -> Path:
        return self.path("gadgets.jsonl")

    @property
    def split(self) -> Path:
        return self.path("split.json")

    @property
    def embeddings(self) -> Path:
        return self.path("embeddings.bin")

    @property
    def model(self) -> Path:
        return self.path("model.gfmb")

    @property
    def history(self) -> Path:
        return self.path("history.json")

    @property
    def predictions(self) -> Path:
        return self.path("predictions.jsonl")

    @property
    def metrics(self) -> Path:
        return self.path("metrics.json")

    @property
    def report(self) -> Path:
        return self.path("report.json")

    @property
    def report_text(self) -> Path:
        return self.path("report.txt")

    @property
    def timestamps(self) -> Path:
        return self.path("timestamps.json")

    def stamp(self, stage: str) -> Path:
        return self.path(".stamps", f"{stage}.json")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _inputs_digest(paths: Sequence[Path]) -> dict:
    return {str(p): file_digest(p) for p in paths}


def _stamp_key(stage: str, cfg_digest: str, inputs: Sequence[Path]) -> str:
    return _digest_json({"stage": stage, "config": cfg_digest, "inputs": _inputs_digest(sorted(inputs)),
                         "version": __version__})


def stamp_current(art: Artifacts, stage: str, key: str) -> bool:
    p = art.stamp(stage)
    if not p.exists():
        return False
    try:
        rec = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    if rec.get("key") != key:
        return False
    for name, dig in rec.get("outputs", {}).items():
        f = Path(name)
        if not f.exists() or file_digest(f) != dig:
            return False
    return True


def write_stamp(art: Artifacts, stage: str, key: str, outputs: Sequence[Path]) -> None:
    _write_json(art.stamp(stage), {"stage": stage, "key": key,
                                   "outputs": {str(p): file_digest(p) for p in sorted(outputs)}})


def _record_time(art: Artifacts, stage: str, started: float, status: str) -> None:
    path = art.timestamps
    try:
        rec = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    except json.JSONDecodeError:
        rec = {}
    rec[stage] = {
        "finished": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "seconds": round(time.time() - started, 3),
        "status": status,
    }
    _write_json(path, rec)


# ----------------------------------------------------------------------------
# stage bodies: each returns (key inputs, outputs, body) so the runner can skip


def _map_files(cfg: PipelineConfig, files: Sequence[Path], fn: Callable) -> list:
    """Apply ``fn`` per file, optionally across threads; results in sorted file order."""
    files = sorted(files)
    if cfg.threads > 1 and len(files) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(fn, files))
    return [fn(f) for f in files]


def _require(paths: Sequence[Path], stage: str) -> None:
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise GadgetForgeError(f"{stage}: missing input(s) {', '.join(missing)}; run the earlier stages first")


def _corpus_inputs(cfg: PipelineConfig) -> List[Path]:
    files = corpus_files(cfg.corpus_dir)
    if not files:
        raise EmptyDataset(f"no .pc files in {cfg.corpus_dir}")
    truth = cfg.corpus_dir / TRUTH_FILE
    extra = [truth] if truth.exists() else []
    if cfg.rules_path:
        extra.append(cfg.rules_path)
    return files + extra


def stage_gen_corpus(cfg: PipelineConfig, art: Artifacts):
    spec = cfg.corpus_spec()
    if spec is None:
        return None  # user-supplied corpus
    outputs_dir = cfg.corpus_dir

    def body():
        generate(spec, outputs_dir)
        report = verify_corpus(outputs_dir)
        log.info("corpus: %d functions (%d vulnerable) verified", report["functions"], report["vulnerable"])
        return corpus_files(outputs_dir) + [outputs_dir / TRUTH_FILE, outputs_dir / "corpus_spec.json"]

    return [], cfg.digest, body


def stage_ingest(cfg: PipelineConfig, art: Artifacts):
    inputs = _corpus_inputs(cfg)

    def one(path: Path):
        module = load_listing(path, source_id=path.name)
        bundle = combine_analyses(module, analyze_structure(module), {"config_digest": cfg.digest})
        out = art.path("ingest", path.stem + ".json")
        _write_json(out, bundle_to_json(bundle))
        return out, {"file": path.name, "digest": module.digest, "functions": list(module.function_names)}

    def body():
        res = _map_files(cfg, corpus_files(cfg.corpus_dir), one)
        index = art.path("ingest", "index.json")
        _write_json(index, {"schema_version": SCHEMA_VERSION, "config_digest": cfg.digest,
                            "modules": [r[1] for r in res]})
        return [r[0] for r in res] + [index]

    return inputs, cfg.digest, body


def stage_graph(cfg: PipelineConfig, art: Artifacts):
    inputs = _corpus_inputs(cfg)

    def one(path: Path):
        module = load_listing(path, source_id=path.name)
        dump = {"schema_version": SCHEMA_VERSION, "config_digest": cfg.digest, "source_id": path.name,
                "functions": [graph_dump(analyze_function(fn)) for fn in module.functions]}
        out = art.path("graphs", path.stem + ".json")
        _write_json(out, dump)
        return out

    def body():
        return _map_files(cfg, corpus_files(cfg.corpus_dir), one)

    return inputs, cfg.digest, body


def stage_slice(cfg: PipelineConfig, art: Artifacts):
    inputs = _corpus_inputs(cfg)
    direction = cfg.raw["slicing"]["direction"]
    max_tokens = cfg.raw["slicing"]["max_tokens"]

    def body():
        truth_path = cfg.corpus_dir / TRUTH_FILE
        labeler = make_labeler(read_truth(truth_path)) if truth_path.exists() else None
        rules = cfg.rules()

        def one(path: Path):
            module = load_listing(path, source_id=path.name)
            out = []
            for g, fg in extract_gadgets(module, rules, labeler, direction, True, max_tokens):
                out.append((g, struct_features(fg.ast, fg.pdg, g).tolist()))
            return out

        pairs = [p for chunk in _map_files(cfg, corpus_files(cfg.corpus_dir), one) for p in chunk]
        if not pairs:
            raise EmptyDataset("slicing produced no gadgets")
        gadgets = [g for g, _ in pairs]
        write_gadgets(art.gadgets, gadgets, [{"struct": s, "config_digest": cfg.digest} for _, s in pairs])
        labels = [g.label for g in gadgets]
        tr, te = split_indices(labels, cfg.raw["split_ratio"], cfg.seed, cfg.raw["stratified"])
        _write_json(art.split, {"config_digest": cfg.digest, "train": tr, "test": te})
        return [art.gadgets, art.split]

    return inputs, cfg.digest, body


def _load_dataset(art: Artifacts):
    _require([art.gadgets, art.split], "dataset")
    recs = read_gadgets(art.gadgets)
    split = json.loads(art.split.read_text(encoding="utf-8"))
    return recs, split["train"], split["test"]


def stage_embed(cfg: PipelineConfig, art: Artifacts):
    inputs = [art.gadgets, art.split]

    def body():
        recs, tr, _ = _load_dataset(art)
        table = train_embeddings([recs[i]["tokens"] for i in tr], cfg.embedding_config())
        table.config["config_digest"] = cfg.digest
        save_table(table, art.embeddings)
        tsv = art.path("embeddings.tsv")
        export_tsv(table, tsv)
        return [art.embeddings, art.embeddings.with_name("embeddings.vocab.json"), tsv]

    return inputs, cfg.digest, body


def _inputs_for(recs: Sequence[dict], idx: Sequence[int], table, scaler, max_tokens: int) -> List[NetworkInput]:
    raw = np.asarray([recs[i]["struct"] for i in idx], dtype=np.float64).reshape(len(idx), -1)
    scaled = scaler.transform(raw) if scaler is not None and len(idx) else np.zeros((len(idx), 0))
    return [NetworkInput(table.vocab.encode(recs[i]["tokens"]), scaled[k], max_tokens) for k, i in enumerate(idx)]


def stage_train(cfg: PipelineConfig, art: Artifacts):
    inputs = [art.gadgets, art.split, art.embeddings]

    def body():
        recs, tr, te = _load_dataset(art)
        _require([art.embeddings], "train")
        table = load_table(art.embeddings)
        mcfg = cfg.model_config(len(table.vocab))
        scaler = None
        if mcfg.use_kan:
            scaler = FeatureScaler().fit(np.asarray([recs[i]["struct"] for i in tr], dtype=np.float64))
        model = init_model(mcfg, table.input_vectors, table_digest(table), scaler)
        model.meta = {"pipeline_digest": cfg.digest, "train": cfg.train_config().to_json()}
        labels = np.asarray([r["label"] for r in recs])
        x_tr = _inputs_for(recs, tr, table, scaler, mcfg.max_tokens)
        x_te = _inputs_for(recs, te, table, scaler, mcfg.max_tokens)
        train(model, x_tr, labels[tr], cfg.train_config(), heldout=(x_te, labels[te]))
        save_model(model, art.model)
        _write_json(art.history, {"config_digest": cfg.digest, "history": model.history})
        return [art.model, art.history]

    return inputs, cfg.digest, body


def _load_for_inference(cfg: PipelineConfig, art: Artifacts):
    _require([art.model, art.embeddings], "inference")
    table = load_table(art.embeddings)
    model = load_model(art.model)
    check_embeddings(model, table)
    if not model.config.trainable_embeddings:
        model.embeddings = table.input_vectors
    return model, table


def score_records(cfg: PipelineConfig, model, table, recs: Sequence[dict]) -> np.ndarray:
    idx = list(range(len(recs)))
    inputs = _inputs_for(recs, idx, table, model.scaler, model.config.max_tokens)
    return predict_scores(model, inputs, threads=cfg.threads)


def stage_detect(cfg: PipelineConfig, art: Artifacts):
    inputs = [art.gadgets, art.split, art.model, art.embeddings]

    def body():
        recs, _, te = _load_dataset(art)
        model, table = _load_for_inference(cfg, art)
        scores = score_records(cfg, model, table, [recs[i] for i in te])
        thr = cfg.raw["threshold"]
        art.predictions.parent.mkdir(parents=True, exist_ok=True)
        with open(art.predictions, "w", encoding="utf-8") as fh:
            for i, s in zip(te, scores):
                fh.write(json.dumps({"index": i, "gadget_id": recs[i]["gadget_id"], "score": float(s),
                                     "label": int(s >= thr), "truth": recs[i]["label"],
                                     "function": recs[i]["provenance"]["function"],
                                     "config_digest": cfg.digest}, sort_keys=True) + "\n")
        return [art.predictions]

    return inputs, cfg.digest, body


def _read_predictions(art: Artifacts) -> List[dict]:
    _require([art.predictions], "eval")
    with open(art.predictions, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def stage_eval(cfg: PipelineConfig, art: Artifacts):
    inputs = [art.predictions]

    def body():
        preds = _read_predictions(art)
        cm = confusion([p["label"] for p in preds], [p["truth"] for p in preds])
        _write_json(art.metrics, report_dict(cm, cfg.digest))
        return [art.metrics]

    return inputs, cfg.digest, body


def stage_report(cfg: PipelineConfig, art: Artifacts):
    inputs = [art.metrics, art.history, art.gadgets, art.split]

    def body():
        _require(inputs, "report")
        m = json.loads(art.metrics.read_text(encoding="utf-8"))
        hist = json.loads(art.history.read_text(encoding="utf-8"))["history"]
        recs, tr, te = _load_dataset(art)
        labels = [r["label"] for r in recs]
        rep = dict(m)
        rep["dataset"] = {
            "gadgets": len(recs),
            "positives": int(sum(labels)),
            "train": len(tr),
            "test": len(te),
            "mean_tokens": round(float(np.mean([len(r["tokens"]) for r in recs])), 3),
        }
        rep["training"] = {"epochs": len(hist), "final_loss": hist[-1]["loss"] if hist else None}
        rep["config"] = {k: v for k, v in cfg.raw.items() if k not in ("paths", "threads")}
        _write_json(art.report, rep)
        c = m["confusion"]
        text = report_table(ConfusionMatrix(c["tp"], c["tn"], c["fp"], c["fn"]))
        art.report_text.write_text(f"config {cfg.digest}\n" + text, encoding="utf-8")
        return [art.report, art.report_text]

    return inputs, cfg.digest, body


STAGE_FUNCS = {
    "gen-corpus": stage_gen_corpus,
    "ingest": stage_ingest,
    "graph": stage_graph,
    "slice": stage_slice,
    "embed": stage_embed,
    "train": stage_train,
    "detect": stage_detect,
    "eval": stage_eval,
    "report": stage_report,
}


class StageFailure(GadgetForgeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {cause}")


def run_stage(cfg: PipelineConfig, stage: str, force: bool = False) -> str:
    """Run one stage; returns "done", "skipped" or "n/a"."""
    art = Artifacts(cfg.artifacts_dir)
    art.root.mkdir(parents=True, exist_ok=True)
    started = time.time()
    try:
        plan = STAGE_FUNCS[stage](cfg, art)
        if plan is None:
            return "n/a"
        inputs, section, body = plan
        _require(inputs, stage)
        key = _stamp_key(stage, section, inputs)
        if not force and stamp_current(art, stage, key):
            _record_time(art, stage, started, "skipped")
            return "skipped"
        outputs = body()
        write_stamp(art, stage, key, outputs)
    except GadgetForgeError as exc:
        _record_time(art, stage, started, "failed")
        if isinstance(exc, StageFailure):
            raise
        raise StageFailure(stage, exc) from exc
    _record_time(art, stage, started, "done")
    return "done"


def run_pipeline(cfg: PipelineConfig, force: bool = False, stages: Sequence[str] = RUN_CHAIN,
                 echo: Optional[Callable[[str], None]] = None) -> Dict[str, str]:
    out = {}
    for stage in stages:
        status = run_stage(cfg, stage, force)
        out[stage] = status
        if echo:
            echo(f"{stage}: {status}")
    return out
