"""Plain-text run configuration (``key = value`` lines) and its resolution into typed configs."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .embedding import EmbeddingConfig
from .events import SplitSpec, SyntheticSpec
from .model import ModelConfig
from .tasks import RunSpec, TrainConfig
from .trajectory import TeParams


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(message)
        self.key = key


# key -> (default, description). Every accepted key is listed here.
DEFAULTS: dict[str, tuple[str, str]] = {
    "seed": ("0", "run seed: model init, negatives, inductive mask"),
    "data.path": ("", "CSV event file; empty means use the synthetic generator"),
    "data.generator": ("recurrent_bipartite", "recurrent_bipartite | symmetric_cycle"),
    "synth.sources": ("50", "synthetic source nodes"),
    "synth.targets": ("100", "synthetic target nodes"),
    "synth.events": ("2000", "synthetic event count"),
    "synth.period": ("2", "targets per source, visited in rotation"),
    "synth.jitter": ("0.25", "uniform time jitter added to each step"),
    "synth.label_threshold": ("36", "label = 1 once a source has more interactions than this"),
    "synth.seed": ("0", "generator seed"),
    "split.train": ("0.70", "train fraction"),
    "split.val": ("0.15", "validation fraction"),
    "split.inductive_fraction": ("0.10", "fraction of val/test nodes hidden from training"),
    "train.batch_size": ("200", "events per batch"),
    "train.n_neg": ("5", "training negatives per event"),
    "train.lr": ("1e-4", "Adam learning rate"),
    "train.epochs": ("30", "maximum epochs"),
    "train.patience": ("5", "early-stopping patience on validation AP"),
    "train.nc_mode": ("probe", "node classification head: probe | joint"),
    "train.nc_epochs": ("10", "probe training passes"),
    "model.mem_dim": ("0", "memory width; 0 picks 172 with edge features, else 100"),
    "model.time_dim": ("100", "time encoding width"),
    "model.traj_dim": ("4", "trajectory / ID dimension d"),
    "model.mem_agg": ("last", "memory message aggregator: last | mean"),
    "emb.layers": ("1", "attention layers L"),
    "emb.heads": ("2", "attention heads"),
    "emb.n_neighbors": ("10", "most recent neighbors attended to"),
    "te.alpha": ("2", "step-count scale alpha"),
    "te.beta": ("0.1", "time decay beta"),
    "te.mode": ("exp", "trajectory stream: exp | raw_id | off"),
    "te.clamp": ("1e4", "norm clamp of positional features"),
    "sweep.alphas": ("1,2", "alpha grid"),
    "sweep.betas": ("0.1,1", "beta grid"),
    "sweep.dims": ("4,12,20,28", "d grid"),
    "sweep.repeats": ("1", "seeded repeats per cell"),
    "sweep.settings": ("transductive", "settings reported per cell"),
    "bench.pair": ("1,3", "node pair compared by the expressiveness bench"),
    "bench.t": ("3", "query time of the bench"),
    "bench.seeds": ("10", "seeds for the full model in the bench"),
    "bench.layers": ("2", "tree depth / attention layers in the bench"),
}


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    values: dict[str, str]

    @classmethod
    def resolve(cls, file_values: dict[str, str] | None = None,
                overrides: dict[str, str] | None = None) -> "RunConfig":
        values = {k: d for k, (d, _) in DEFAULTS.items()}
        for layer in (file_values or {}, overrides or {}):
            for key, value in layer.items():
                if key not in DEFAULTS:
                    raise ConfigError(key, f"unknown config key {key!r}")
                values[key] = value
        cfg = cls(values)
        cfg.typed()  # surface bad values early
        return cfg

    @classmethod
    def load(cls, path=None, overrides: dict[str, str] | None = None) -> "RunConfig":
        file_values = parse_text(Path(path).read_text(), str(path)) if path else {}
        return cls.resolve(file_values, overrides)

    def text(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in DEFAULTS)

    # ------------------------------------------------------------- typed views

    def _get(self, key: str, kind):
        raw = self.values[key]
        try:
            return kind(raw)
        except ValueError:
            raise ConfigError(key, f"bad value {raw!r} for {key}") from None

    def _list(self, key: str, kind) -> tuple:
        return tuple(kind(x) for x in self.values[key].split(",") if x.strip())

    def typed(self) -> dict:
        try:
            return {"run": self.run_spec(), "split": self.split_spec(), "synth": self.synthetic_spec()}
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError("?", f"invalid config: {exc}") from None

    @property
    def seed(self) -> int:
        return self._get("seed", int)

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(self.values["data.generator"], self._get("synth.sources", int),
                             self._get("synth.targets", int), self._get("synth.events", int),
                             self._get("synth.period", int), self._get("synth.jitter", float),
                             self._get("synth.label_threshold", int), self._get("synth.seed", int))

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self._get("split.train", float), self._get("split.val", float),
                         self._get("split.inductive_fraction", float), self.seed)

    def run_spec(self, feat_dim: int = 0) -> RunSpec:
        mem_dim = self._get("model.mem_dim", int) or (172 if feat_dim > 0 else 100)
        emb = EmbeddingConfig(self._get("emb.layers", int), self._get("emb.heads", int),
                              self._get("emb.n_neighbors", int), mem_dim)
        te = TeParams(self._get("te.alpha", float), self._get("te.beta", float),
                      self.values["te.mode"], self._get("te.clamp", float))
        model = ModelConfig(mem_dim=mem_dim, time_dim=self._get("model.time_dim", int),
                            traj_dim=self._get("model.traj_dim", int), embedding=emb, te=te,
                            mem_agg=self.values["model.mem_agg"], seed=self.seed)
        train = TrainConfig(self._get("train.batch_size", int), self._get("train.n_neg", int),
                            self._get("train.lr", float), self._get("train.epochs", int), self.seed,
                            self._get("train.patience", int), self.values["train.nc_mode"],
                            self._get("train.nc_epochs", int))
        return RunSpec(model, train)

    def sweep_grid(self) -> dict:
        return {"alphas": self._list("sweep.alphas", float), "betas": self._list("sweep.betas", float),
                "dims": self._list("sweep.dims", int), "repeats": self._get("sweep.repeats", int),
                "settings": self._list("sweep.settings", str.strip)}
