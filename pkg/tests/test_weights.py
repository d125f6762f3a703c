import httpx
import pytest
from src.clients.weights import WeightsClient
from src.errors import MissingBackendError

PAYLOAD = b"\x00\x01" * 1000


def client_with(tmp_path, handler) -> WeightsClient:
    client = WeightsClient({"ffhq": "https://weights.test/ffhq.pt"}, tmp_path / "cache")
    client.client = httpx.Client(transport=httpx.MockTransport(handler))
    return client


def test_local_path_passes_through(tmp_path):
    local = tmp_path / "g.pt"
    local.write_bytes(b"x")
    assert WeightsClient({}, tmp_path).resolve(str(local)) == local


def test_unknown_name_is_not_found(tmp_path):
    with pytest.raises(FileNotFoundError, match="nothing"):
        WeightsClient({}, tmp_path).resolve("nothing")


def test_download_then_cache(tmp_path):
    calls = []

    def handler(request):
        calls.append(request.url)
        return httpx.Response(200, content=PAYLOAD, headers={"Content-Length": str(len(PAYLOAD))})

    client = client_with(tmp_path, handler)
    path = client.resolve("ffhq")

    assert path == tmp_path / "cache" / "ffhq.pt"
    assert path.read_bytes() == PAYLOAD
    assert client.resolve("ffhq") == path
    assert len(calls) == 1


def test_http_error_leaves_no_partial_file(tmp_path):
    client = client_with(tmp_path, lambda request: httpx.Response(404))

    with pytest.raises(MissingBackendError, match="ffhq"):
        client.resolve("ffhq")
    assert list((tmp_path / "cache").iterdir()) == []


def test_truncated_download_is_rejected(tmp_path):
    def handler(request):
        return httpx.Response(200, content=PAYLOAD[:10], headers={"Content-Length": str(len(PAYLOAD))})

    client = client_with(tmp_path, handler)
    with pytest.raises(MissingBackendError, match="truncated"):
        client.resolve("ffhq")
    assert not (tmp_path / "cache" / "ffhq.pt").exists()
