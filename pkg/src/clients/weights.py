import os
from pathlib import Path
from typing import Dict, Optional
from urllib.parse import urlparse
import httpx
from src.config import StylizerConfig, StylizerSettings
from src.errors import MissingBackendError
from src.logger import logger

CHUNK_SIZE = 1 << 20


class WeightsClient:
    """Resolves checkpoint references to local files, downloading named ones into the cache"""

    def __init__(self, checkpoints: Optional[Dict[str, str]] = None, cache_dir: Optional[Path] = None):
        self.checkpoints = checkpoints or {}
        self.cache_dir = Path(cache_dir or StylizerSettings().cache_dir)
        self.client = httpx.Client(timeout=60.0, follow_redirects=True)

    def cached_path(self, name: str) -> Path:
        suffix = Path(urlparse(self.checkpoints[name]).path).suffix or ".pt"
        return self.cache_dir / f"{name}{suffix}"

    def resolve(self, ref: str) -> Path:
        """A local path as-is, or a configured checkpoint name from the cache"""
        path = Path(ref).expanduser()
        if path.exists():
            return path

        if ref not in self.checkpoints:
            raise FileNotFoundError(f"Checkpoint not found: {ref} (not a file and not a configured checkpoint name)")

        cached = self.cached_path(ref)
        if cached.exists():
            logger.debug(f"Using cached checkpoint {cached}")
            return cached
        return self.download(ref)

    def download(self, name: str) -> Path:
        url = self.checkpoints[name]
        target = self.cached_path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        partial = target.with_suffix(target.suffix + ".part")

        logger.info(f"[cyan]Downloading checkpoint '{name}' from {url}[/cyan]")
        try:
            with self.client.stream("GET", url) as response:
                response.raise_for_status()
                total = int(response.headers.get("Content-Length", 0))
                received = 0
                with open(partial, "wb") as f:
                    for chunk in response.iter_bytes(CHUNK_SIZE):
                        f.write(chunk)
                        received += len(chunk)
        except httpx.HTTPError as e:
            logger.error(f"[red]Failed to download checkpoint '{name}': {e}[/red]")
            partial.unlink(missing_ok=True)
            raise MissingBackendError(f"checkpoint '{name}'") from e

        if total and received != total:
            partial.unlink(missing_ok=True)
            raise MissingBackendError(f"checkpoint '{name}' (truncated download: {received}/{total} bytes)")
        logger.info(f"[green]Downloaded {received / 2 ** 20:.1f} MiB for '{name}'[/green]")

        os.replace(partial, target)
        return target

    def close(self):
        self.client.close()


def fetch_checkpoint(name: str, config: StylizerConfig, settings: Optional[StylizerSettings] = None) -> Path:
    """Cache-or-download a checkpoint by name (or pass a local path through)"""
    settings = settings or StylizerSettings()
    client = WeightsClient(config.checkpoints, settings.cache_dir)
    try:
        return client.resolve(name)
    finally:
        client.close()
