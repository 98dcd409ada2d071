"""Run configuration: config-file loading and provenance records."""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import __version__
from .errors import DataError
from .files import atomic_write

ENV_PREFIX = "SUBMARKET"


def load_config(path: Path) -> dict[str, dict[str, Any]]:
    """Read a `{subcommand: {option: value}}` mapping from JSON or YAML.

    Option keys may use dashes or underscores and come back with underscores,
    matching click parameter names. Subcommand keys come back with dashes.
    """
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise DataError(f"invalid config file {path}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict) or not all(
        isinstance(v, dict) for v in data.values()
    ):
        raise DataError(f"config file {path} must map subcommands to option tables")
    return {
        str(command).replace("_", "-"): {
            str(k).replace("-", "_"): v for k, v in options.items()
        }
        for command, options in data.items()
    }


def _plain(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


@dataclass
class RunConfig:
    """Resolved parameters of one subcommand invocation."""

    subcommand: str
    parameters: dict[str, Any]
    threads: int = 1
    version: str = __version__
    outputs: list[str] = field(default_factory=list)

    @classmethod
    def from_params(cls, subcommand: str, params: dict[str, Any]) -> "RunConfig":
        plain = {k: _plain(v) for k, v in sorted(params.items()) if k != "config"}
        return cls(subcommand, plain, threads=int(plain.get("threads", 1) or 1))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def record(self, output: Path) -> Path:
        """Write `<output>.run.json` next to an output and return its path."""
        output = Path(output)
        if str(output) not in self.outputs:
            self.outputs.append(str(output))
        target = output.with_name(output.name + ".run.json")
        atomic_write(target, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return target
