"""Bridge configurations: persisted artifact bundles and their runtime form.

A configuration lives under ``configs/<id>/`` with a ``manifest.json``
listing relative artifact paths. Activation refuses to load a manifest
with any missing artifact (torn-write protection) and returns a fully
loaded BridgeConfig with lazily cached FE assembly and influence lines.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, TYPE_CHECKING, Union

import numpy as np

from ..errors import ConfigError
from ..fe import StructuralModel, assemble, influence_line

if TYPE_CHECKING:  # imported lazily at runtime: skills depend on state
    from ..skills.anomaly import DetectorCalibration
    from ..skills.assessment import SnCurve
    from ..skills.rag import Index
    from ..skills.traffic import TrafficModel


def _default_sn_curve():
    from ..skills.assessment import SnCurve

    return SnCurve()


@dataclass
class LlmSettings:
    endpoint: str = ""
    chat_model: str = "gpt-4o"
    embedding_model: str = "text-embedding-ada-002"
    key_env: str = "SHM_AGENTS_LLM_KEY"

    def to_json(self) -> dict[str, str]:
        return {"endpoint": self.endpoint, "chat_model": self.chat_model,
                "embedding_model": self.embedding_model, "key_env": self.key_env}

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "LlmSettings":
        return cls(endpoint=str(doc.get("endpoint", "")),
                   chat_model=str(doc.get("chat_model", "gpt-4o")),
                   embedding_model=str(doc.get("embedding_model", "text-embedding-ada-002")),
                   key_env=str(doc.get("key_env", "SHM_AGENTS_LLM_KEY")))


@dataclass
class BridgeConfig:
    config_id: str
    bridge_name: str
    llm_settings: LlmSettings
    fe_model: StructuralModel
    traffic_model: "TrafficModel"
    anomaly_thresholds: "DetectorCalibration"
    rag_index: "Index"
    config_dir: Path
    modal_f_min: float = 0.05
    reference_load_kn_m: float = 10.0
    sn_curve: "SnCurve" = field(default_factory=_default_sn_curve)
    modal_cache: dict[str, Any] = field(default_factory=dict)
    influence_cache: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    _assembled: Any = field(default=None, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def assembled(self):
        with self._lock:
            if self._assembled is None:
                self._assembled = assemble(self.fe_model)
            return self._assembled

    def default_dt(self) -> float:
        freqs = self.modal_cache.get("frequencies") or [1.0]
        f_max = max(freqs)
        return min(1.0 / (20.0 * f_max), 0.02)

    def fatigue_details(self) -> list[str]:
        return [f"cable_{i}" for i in range(len(self.fe_model.cable_elements))]

    def influence(self, lane: str, quantity: str, location: str,
                  step: float = 2.0) -> Optional[tuple[np.ndarray, np.ndarray]]:
        key = f"{lane}|{quantity}|{location}"
        with self._lock:
            hit = self.influence_cache.get(key)
        if hit is not None:
            return hit
        try:
            pos, val = influence_line(self.assembled(), lane, quantity, location, step)
        except Exception:
            return None
        with self._lock:
            self.influence_cache[key] = (pos, val)
        return pos, val


MANIFEST_NAME = "manifest.json"


def write_manifest(config_dir: Path, doc: dict[str, Any]) -> None:
    (config_dir / MANIFEST_NAME).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def save_influence_cache(path: Path, cache: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
    arrays: dict[str, np.ndarray] = {}
    for key, (pos, val) in cache.items():
        arrays[f"{key}::pos"] = np.asarray(pos)
        arrays[f"{key}::val"] = np.asarray(val)
    np.savez(path, **arrays)


def load_influence_cache(path: Path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    with np.load(path) as data:
        keys = {name.rsplit("::", 1)[0] for name in data.files}
        for key in keys:
            out[key] = (data[f"{key}::pos"].copy(), data[f"{key}::val"].copy())
    return out


class ConfigStore:
    """Registry of configurations under ``<root>/configs``."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.configs_dir = self.root / "configs"
        self.configs_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._active: dict[str, BridgeConfig] = {}

    def list_configs(self) -> list[dict[str, Any]]:
        out = []
        for mdir in sorted(self.configs_dir.iterdir()):
            manifest = mdir / MANIFEST_NAME
            if not manifest.exists():
                continue
            try:
                doc = json.loads(manifest.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                continue
            out.append({"config_id": doc.get("config_id", mdir.name),
                        "bridge_name": doc.get("bridge_name", ""),
                        "created_at": doc.get("created_at", "")})
        return out

    def config_dir(self, config_id: str) -> Path:
        return self.configs_dir / config_id

    def activate(self, config_id: str) -> BridgeConfig:
        with self._lock:
            if config_id in self._active:
                return self._active[config_id]
        cdir = self.config_dir(config_id)
        manifest = cdir / MANIFEST_NAME
        if not manifest.exists():
            raise ConfigError(f"unknown configuration {config_id!r}")
        doc = json.loads(manifest.read_text(encoding="utf-8"))
        artifacts = doc.get("artifacts", {})
        for label, rel in artifacts.items():
            if not (cdir / rel).exists():
                raise ConfigError(f"configuration {config_id!r} is missing artifact "
                                  f"{label} ({rel})")
        from ..skills.anomaly import DetectorCalibration
        from ..skills.assessment import SnCurve
        from ..skills.rag import Index
        from ..skills.traffic import TrafficModel

        settings = doc.get("settings", {})
        llm_doc = json.loads((cdir / artifacts["llm"]).read_text(encoding="utf-8"))
        config = BridgeConfig(
            config_id=config_id,
            bridge_name=doc.get("bridge_name", ""),
            llm_settings=LlmSettings.from_json(llm_doc),
            fe_model=StructuralModel.load(cdir / artifacts["fe_model"]),
            traffic_model=TrafficModel.from_json(
                json.loads((cdir / artifacts["traffic_model"]).read_text(encoding="utf-8"))),
            anomaly_thresholds=DetectorCalibration.from_json(
                json.loads((cdir / artifacts["detector"]).read_text(encoding="utf-8"))),
            rag_index=Index.load(cdir / artifacts["rag_index"]),
            config_dir=cdir,
            modal_f_min=float(settings.get("modal_f_min", 0.05)),
            reference_load_kn_m=float(settings.get("reference_load_kn_m", 10.0)),
            sn_curve=SnCurve.from_json(settings["sn_curve"]) if settings.get("sn_curve") else SnCurve(),
            modal_cache=json.loads((cdir / artifacts["modal_cache"]).read_text(encoding="utf-8"))
            if "modal_cache" in artifacts else {},
            influence_cache=load_influence_cache(cdir / artifacts["influence_cache"])
            if "influence_cache" in artifacts else {},
        )
        with self._lock:
            self._active[config_id] = config
        return config

    @staticmethod
    def timestamp() -> str:
        return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
