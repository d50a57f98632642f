"""Flat `key = value` run-configuration files.

Lines starting with `#` and blank lines are ignored. Every key has a
documented default; unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .model import PacrrConfig


@dataclass
class RunConfig:
    # input/output paths
    corpus: str | None = None
    queries: str | None = None
    qrels: str | None = None
    embeddings: str | None = None
    run: str | None = None
    train_qids: str | None = None
    val_qids: str | None = None
    out_dir: str = "out"
    # model hyper-parameters
    l_q: int = 16
    l_d: int = 768
    l_g: int = 3
    n_f: int = 32
    n_s: int = 2
    mode: str = "firstk"
    # training
    learning_rate: float = 0.001
    seed: int = 42
    iterations: int = 150
    batches_per_iteration: int = 64
    # evaluation
    k: int = 20
    g_max: int = 4
    run_tag: str = "pacrr"
    # optional raw-grade remapping, e.g. "-1:0,5:4"
    grade_map: str | None = None

    def pacrr_config(self) -> PacrrConfig:
        try:
            return PacrrConfig(
                l_q=self.l_q, l_d=self.l_d, l_g=self.l_g, n_f=self.n_f,
                n_s=self.n_s, mode=self.mode, learning_rate=self.learning_rate,
                seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def parsed_grade_map(self) -> dict[int, int] | None:
        if not self.grade_map:
            return None
        mapping = {}
        for item in self.grade_map.split(","):
            try:
                raw, canonical = item.split(":")
                mapping[int(raw)] = int(canonical)
            except ValueError:
                raise ConfigError(f"bad grade_map entry {item!r}") from None
        return mapping

    def require_paths(self, *names: str) -> None:
        """Check that the named path fields are set and exist on disk."""
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"config is missing the required path {name!r}")
            if not Path(value).exists():
                raise ConfigError(f"{name} path does not exist: {value}")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_INT_KEYS = {name for name, t in _FIELD_TYPES.items() if t == "int"}
_FLOAT_KEYS = {name for name, t in _FIELD_TYPES.items() if t == "float"}


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Parse a config file (if given) and apply overrides on top of defaults."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                if key in _INT_KEYS:
                    values[key] = int(raw)
                elif key in _FLOAT_KEYS:
                    values[key] = float(raw)
                else:
                    values[key] = raw
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}") from None
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def write_run_config(config: RunConfig, path) -> None:
    lines = []
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if value is None:
            continue
        lines.append(f"{f.name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
