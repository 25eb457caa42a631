import json

import pytest

from moescale.errors import DomainError, ImmutableEntryError, UnknownLabelError
from moescale.laws import PUBLISHED_CONSTANTS
from moescale.registry import BUILTIN_LABEL, ConstantsRegistry, load_constants_file, resolve_registry_dir


@pytest.fixture
def registry(tmp_path):
    return ConstantsRegistry(tmp_path / "constants")


class TestRegistryDir:
    def test_flag_wins(self, tmp_path, registry_dir):
        assert resolve_registry_dir(tmp_path / "flag") == tmp_path / "flag"

    def test_environment(self, registry_dir):
        assert resolve_registry_dir() == registry_dir

    def test_default(self, monkeypatch, tmp_path):
        monkeypatch.delenv("MOESCALE_REGISTRY_DIR", raising=False)
        monkeypatch.setenv("HOME", str(tmp_path))
        assert resolve_registry_dir() == tmp_path / ".config" / "moescale" / "constants"


class TestConstantsRegistry:
    def test_builtin_entry(self, registry):
        entry = registry.get(BUILTIN_LABEL)
        assert entry.builtin
        assert entry.constants == PUBLISHED_CONSTANTS

    def test_builtin_is_immutable(self, registry):
        with pytest.raises(ImmutableEntryError):
            registry.save(BUILTIN_LABEL, PUBLISHED_CONSTANTS)
        with pytest.raises(ImmutableEntryError):
            registry.remove(BUILTIN_LABEL)

    def test_save_load_remove(self, registry):
        refit = PUBLISHED_CONSTANTS.replace(e=0.2, f=6.0)
        registry.save("refit-1", refit, {"source": "campaign.csv"})
        assert registry.load("refit-1") == refit
        entry = registry.get("refit-1")
        assert entry.provenance["source"] == "campaign.csv"
        assert "saved_at" in entry.provenance
        assert [e.label for e in registry.list_entries()] == [BUILTIN_LABEL, "refit-1"]
        registry.remove("refit-1")
        with pytest.raises(UnknownLabelError):
            registry.load("refit-1")

    def test_saved_document(self, registry):
        registry.save("refit-1", PUBLISHED_CONSTANTS)
        data = json.loads((registry.registry_dir / "refit-1.json").read_text())
        assert data["label"] == "refit-1"
        assert data["constants"]["epsilon"] == PUBLISHED_CONSTANTS.eps

    def test_unknown_label(self, registry):
        with pytest.raises(UnknownLabelError) as info:
            registry.get("missing")
        assert str(info.value) == "Constants 'missing' not found"
        with pytest.raises(KeyError):
            registry.get("missing")

    def test_invalid_label(self, registry):
        with pytest.raises(DomainError):
            registry.save("../escape", PUBLISHED_CONSTANTS)

    def test_list_skips_corrupt_files(self, registry):
        registry.registry_dir.mkdir(parents=True)
        (registry.registry_dir / "broken.json").write_text("{not json")
        assert [e.label for e in registry.list_entries()] == [BUILTIN_LABEL]

    def test_resolve_path(self, registry, tmp_path):
        path = tmp_path / "fit.json"
        path.write_text(json.dumps({"law": "joint", "constants": PUBLISHED_CONSTANTS.replace(k=0.002).to_dict()}))
        assert registry.resolve(str(path)).k == 0.002
        assert load_constants_file(path).k == 0.002
        assert registry.resolve(BUILTIN_LABEL) == PUBLISHED_CONSTANTS
