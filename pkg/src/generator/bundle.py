"""
Adapted-model bundle: one zip archive holding manifest.json plus torch payloads
for the target generator, the frozen source generator and the reference pair.
"""
import io
import json
import os
import tempfile
import zipfile
from pathlib import Path
from typing import Dict, Optional
import torch
from pydantic import BaseModel, ConfigDict, ValidationError
from src.config import StylizerConfig
from src.errors import BundleFormatError
from src.generator.latents import ReferencePair
from src.generator.synthesis import Generator, build_generator, freeze, state_digest
from src.logger import logger
from src.models import BUNDLE_VERSION, BundleManifest

MANIFEST_NAME = "manifest.json"


class Bundle(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    target: Generator
    source: Generator
    refs: ReferencePair
    config: StylizerConfig
    manifest: BundleManifest


def _to_bytes(obj) -> bytes:
    buffer = io.BytesIO()
    torch.save(obj, buffer)
    return buffer.getvalue()


def _from_bytes(archive: zipfile.ZipFile, name: str):
    try:
        return torch.load(io.BytesIO(archive.read(name)), map_location="cpu")
    except KeyError as e:
        raise BundleFormatError(f"Bundle entry '{name}' is missing") from e


def save_bundle(
    path: Path,
    target: Generator,
    source: Generator,
    refs: ReferencePair,
    config: StylizerConfig,
    metadata: Optional[Dict] = None,
) -> Path:
    """Write the bundle atomically (temp file in the same directory, then rename)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    manifest = BundleManifest(
        config=config.model_dump(mode="json"),
        metadata={
            "config_hash": config.config_hash(),
            "target_hash": state_digest(target),
            "source_hash": state_digest(source),
            **(metadata or {}),
        },
    )

    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    try:
        with zipfile.ZipFile(tmp_name, "w", compression=zipfile.ZIP_DEFLATED) as archive:
            archive.writestr(MANIFEST_NAME, manifest.model_dump_json(indent=2))
            archive.writestr(manifest.weights["target"], _to_bytes(target.state_dict()))
            archive.writestr(manifest.weights["source"], _to_bytes(source.state_dict()))
            archive.writestr(manifest.refs, _to_bytes(refs.to_state()))
        os.replace(tmp_name, path)
    finally:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)

    logger.info(f"[green]Saved bundle to {path}[/green]")
    return path


def _restore(state: Dict, config: StylizerConfig, with_transforms: bool) -> Generator:
    generator = build_generator(config.generator)
    if with_transforms:
        gc = config.generator
        generator.add_transforms(gc.transform_resolutions, gc.grid_size, gc.stn_channels, gc.stn_hidden)
    try:
        generator.load_state_dict(state)
    except RuntimeError as e:
        raise BundleFormatError(f"Generator weights do not match the bundled config: {e}") from e
    return generator


def load_bundle(path: Path) -> Bundle:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Bundle not found: {path}")

    try:
        archive = zipfile.ZipFile(path)
    except zipfile.BadZipFile as e:
        raise BundleFormatError(f"{path} is not a bundle archive") from e

    with archive:
        try:
            manifest = BundleManifest(**json.loads(archive.read(MANIFEST_NAME)))
            config = StylizerConfig(**manifest.config)
        except KeyError as e:
            raise BundleFormatError(f"{path} has no {MANIFEST_NAME}") from e
        except (ValueError, ValidationError) as e:
            raise BundleFormatError(f"Invalid bundle manifest in {path}: {e}") from e

        if manifest.version > BUNDLE_VERSION:
            raise BundleFormatError(f"Bundle version {manifest.version} is newer than supported ({BUNDLE_VERSION})")

        target_state = _from_bytes(archive, manifest.weights["target"])
        source_state = _from_bytes(archive, manifest.weights["source"])
        refs = ReferencePair.from_state(_from_bytes(archive, manifest.refs))

    with_transforms = any(key.startswith("transforms.") for key in target_state)
    target = freeze(_restore(target_state, config, with_transforms))
    target.frozen = False
    source = freeze(_restore(source_state, config, False))

    logger.info(f"[green]Loaded bundle {path} ({len(target.transforms)} Transform modules)[/green]")
    return Bundle(target=target, source=source, refs=refs, config=config, manifest=manifest)
