"""
Run manifests: the record every command writes before it starts work.

A manifest holds the command name, its fully resolved arguments and
configuration, seeds, input digests, output paths and format versions. It has
no timestamps, so the same invocation always writes the same manifest, and
`replay` can rerun the command from the manifest alone.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

from uck.errors import DataIOError
from uck.kernel import CHECKPOINT_FORMAT, CHECKPOINT_VERSION
from uck.tasks import DATASET_FORMAT, DATASET_VERSION
from uck.utils import file_md5, read_json, write_json

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = 'uck-manifest'
MANIFEST_VERSION = 1

FORMAT_VERSIONS = {
    DATASET_FORMAT: DATASET_VERSION,
    CHECKPOINT_FORMAT: CHECKPOINT_VERSION,
    MANIFEST_FORMAT: MANIFEST_VERSION,
}


@dataclass
class RunManifest:
    command: str
    args: List[str]
    config: dict = field(default_factory=dict)
    seeds: List[int] = field(default_factory=list)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    formats: Dict[str, int] = field(default_factory=lambda: dict(FORMAT_VERSIONS))
    tool_version: str = ''

    def __post_init__(self):
        if not self.tool_version:
            from uck import __version__
            self.tool_version = __version__

    def add_input(self, path):
        """Pin an input file by its MD5 digest."""
        try:
            self.inputs[str(path)] = file_md5(path)
        except OSError as e:
            raise DataIOError(f'cannot read input {path}: {e}') from e
        return self

    def to_dict(self):
        data = dataclasses.asdict(self)
        data['format'] = MANIFEST_FORMAT
        data['version'] = MANIFEST_VERSION
        return data

    @classmethod
    def from_dict(cls, data):
        if data.get('format') != MANIFEST_FORMAT or data.get('version') != MANIFEST_VERSION:
            raise DataIOError(f'unsupported manifest format {data.get("format")} v{data.get("version")}')
        fields = {f.name for f in dataclasses.fields(cls)}
        try:
            return cls(**{k: v for k, v in data.items() if k in fields})
        except TypeError as e:
            raise DataIOError(f'malformed manifest: {e}') from e

    def write(self, path):
        write_json(path, self.to_dict())
        logger.info(f'Wrote {self.command} manifest {path}')

    @classmethod
    def read(cls, path):
        return cls.from_dict(read_json(path))

    def changed_inputs(self):
        """Inputs whose current digest differs from the recorded one."""
        changed = []
        for path, digest in self.inputs.items():
            if not Path(path).exists() or file_md5(path) != digest:
                changed.append(path)
        return changed
