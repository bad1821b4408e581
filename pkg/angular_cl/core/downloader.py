"""
Raw Dataset Downloader

Convenience fetch of the four gzipped IDX files for MNIST or Fashion-MNIST.
Not a correctness surface: prepared caches are validated independently.

Features:
  - Configurable mirror (env: ANGULAR_CL_MNIST_MIRROR / ANGULAR_CL_FASHION_MIRROR)
  - Retry with backoff on timeouts and 5xx statuses
  - Skips files already present
"""

import logging
import os
import time

import requests

from .sequence_cache import RAW_FILES, raw_dir

logger = logging.getLogger("angular_cl.download")

DEFAULT_MIRRORS = {
    "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "fashion-mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
}
MIRROR_ENV = {
    "mnist": "ANGULAR_CL_MNIST_MIRROR",
    "fashion-mnist": "ANGULAR_CL_FASHION_MIRROR",
}


def mirror_for(base_dataset: str) -> str:
    return os.environ.get(MIRROR_ENV[base_dataset], DEFAULT_MIRRORS[base_dataset])


def download_raw(
    data_dir: str,
    base_dataset: str,
    mirror: str | None = None,
    max_retries: int = 2,
    backoff: list[float] | None = None,
    timeout: int = 60,
    session: requests.Session | None = None,
) -> list[str]:
    """Download missing raw files; returns the paths written."""
    if base_dataset not in DEFAULT_MIRRORS:
        raise ValueError(f"No download source for dataset: {base_dataset}")
    base_url = (mirror or mirror_for(base_dataset)).rstrip("/") + "/"
    backoff = backoff or [1.0, 2.0, 4.0]
    directory = raw_dir(data_dir, base_dataset)
    os.makedirs(directory, exist_ok=True)
    session = session or requests.Session()

    written = []
    for name in RAW_FILES.values():
        filename = f"{name}.gz"
        target = os.path.join(directory, filename)
        if os.path.exists(target) or os.path.exists(os.path.join(directory, name)):
            logger.debug("Raw file present, skipping: %s", target)
            continue
        url = base_url + filename
        content = _fetch(session, url, max_retries, backoff, timeout)
        with open(f"{target}.part", "wb") as f:
            f.write(content)
        os.replace(f"{target}.part", target)
        logger.info("Downloaded %s (%d bytes)", url, len(content))
        written.append(target)
    return written


def _fetch(session: requests.Session, url: str, max_retries: int, backoff: list[float], timeout: int) -> bytes:
    for attempt in range(max_retries + 1):
        try:
            response = session.get(url, timeout=timeout)
            if response.status_code >= 500 and attempt < max_retries:
                wait = backoff[min(attempt, len(backoff) - 1)]
                logger.info("Got %d from %s, retrying in %.1fs (%d/%d)",
                            response.status_code, url, wait, attempt + 1, max_retries)
                time.sleep(wait)
                continue
            response.raise_for_status()
            return response.content
        except (requests.exceptions.Timeout, requests.exceptions.ConnectionError) as e:
            if attempt < max_retries:
                wait = backoff[min(attempt, len(backoff) - 1)]
                logger.info("%s fetching %s, retrying in %.1fs (%d/%d)",
                            type(e).__name__, url, wait, attempt + 1, max_retries)
                time.sleep(wait)
                continue
            raise
    raise requests.exceptions.RetryError(f"No response from {url} after {max_retries} retries")
