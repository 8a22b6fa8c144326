"""
Unit tests for embedding providers, sidecar files and output storage
"""

import numpy as np
import pandas as pd
import pytest

from core.dependencies import get_embedding_provider
from core.exceptions import KalmatchError, MissingEmbeddingError, OutputPathError
from services.embedding_service import (
    FileEmbeddingProvider,
    InMemoryEmbeddingProvider,
    read_embedding_file,
    write_embedding_file,
)
from services.storage_service import LocalStorage


@pytest.mark.unit
class TestInMemoryProvider:
    def test_lookup_by_crop_id(self):
        provider = InMemoryEmbeddingProvider({"1:0": [1.0, 2.0], "2:0": [3.0, 4.0]})

        batch = provider.get_many(["2:0", "1:0"])

        assert provider.dim == 2
        assert len(provider) == 2
        assert "1:0" in provider
        assert batch.tolist() == [[3.0, 4.0], [1.0, 2.0]]

    def test_unknown_crop_id(self):
        provider = InMemoryEmbeddingProvider({"1:0": [1.0]})

        with pytest.raises(MissingEmbeddingError) as exc_info:
            provider.get_many(["1:0", "9:9"])

        assert exc_info.value.crop_id == "9:9"

    def test_missing_crop_id_on_filled_box(self):
        with pytest.raises(MissingEmbeddingError):
            InMemoryEmbeddingProvider({"1:0": [1.0]}).get_many([None])

    def test_empty_request(self):
        assert InMemoryEmbeddingProvider({"1:0": [1.0, 0.0]}).get_many([]).shape == (0, 2)

    def test_mixed_dimensions_rejected(self):
        with pytest.raises(KalmatchError, match="mixed dimensions"):
            InMemoryEmbeddingProvider({"a": [1.0], "b": [1.0, 2.0]})


@pytest.mark.unit
class TestEmbeddingFiles:
    def test_written_vectors_read_back_exactly(self, temp_dir):
        vectors = {"1:0": np.array([0.1, -2.5, 1e-9]), "seq/3:2": np.array([np.pi, 0.0, 7.0])}

        path = write_embedding_file(temp_dir / "embeddings.txt", vectors)
        loaded = read_embedding_file(path)

        assert list(loaded) == ["1:0", "seq/3:2"]
        for key, value in vectors.items():
            assert np.array_equal(loaded[key], value)

    def test_comments_ignored(self, temp_dir):
        path = temp_dir / "embeddings.txt"
        path.write_text("# crop dim values\n1:0 2 0.5 0.25\n")

        assert read_embedding_file(path)["1:0"].tolist() == [0.5, 0.25]

    def test_short_record_rejected(self, temp_dir):
        path = temp_dir / "embeddings.txt"
        path.write_text("1:0 3 0.5 0.25 1.0\n1:1 3 0.5 0.25\n")

        with pytest.raises(KalmatchError, match="record 2"):
            read_embedding_file(path)

    def test_empty_file(self, temp_dir):
        path = temp_dir / "embeddings.txt"
        path.write_text("")
        assert read_embedding_file(path) == {}

    def test_provider_from_file(self, temp_dir):
        path = write_embedding_file(temp_dir / "e.txt", {"1:0": [1.0, 0.0]})

        provider = get_embedding_provider(path)

        assert isinstance(provider, FileEmbeddingProvider)
        assert provider.get("1:0").tolist() == [1.0, 0.0]
        assert get_embedding_provider(None) is None

    def test_missing_file(self, temp_dir):
        with pytest.raises(KalmatchError, match="not found"):
            FileEmbeddingProvider(temp_dir / "absent.txt")


@pytest.mark.unit
class TestLocalStorage:
    def test_relative_names_resolve_against_root(self, temp_dir):
        storage = LocalStorage(temp_dir)

        path = storage.save_text("hello\n", "nested/dir/out.txt")

        assert path == temp_dir / "nested" / "dir" / "out.txt"
        assert path.read_text() == "hello\n"

    def test_frame_written_without_index(self, temp_dir):
        table = pd.DataFrame({"a": [1, 2], "b": [0.5, 0.25]})

        path = LocalStorage(temp_dir).save_frame(table, "t.csv")

        assert path.read_text() == "a,b\n1,0.5\n2,0.25\n"

    def test_directory_target_rejected(self, temp_dir):
        (temp_dir / "taken").mkdir()

        with pytest.raises(OutputPathError, match="is a directory"):
            LocalStorage(temp_dir).save_text("x", "taken")

    def test_parent_that_is_a_file_rejected(self, temp_dir):
        (temp_dir / "file").write_text("x")

        with pytest.raises(OutputPathError, match="cannot create"):
            LocalStorage(temp_dir).save_text("x", "file/out.txt")
