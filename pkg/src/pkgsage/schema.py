"""Person-centric graph schema: views, facets and graph topology versions."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import PkgSageError, UnsupportedVersion


class View(str, enum.Enum):
    DEMOGRAPHIC = "Demographic"
    CLINICAL = "Clinical"
    SOCIAL = "Social"


class Arity(str, enum.Enum):
    SINGLE = "Single"
    MULTI = "Multi"


class Version(str, enum.Enum):
    V1 = "V1"
    V3 = "V3"


class EdgeDirection(str, enum.Enum):
    PATIENT_TO_ATTRIBUTE = "PatientToAttribute"
    ATTRIBUTE_TO_PATIENT = "AttributeToPatient"
    UNDIRECTED = "Undirected"


@dataclass(frozen=True)
class Facet:
    name: str
    view: View
    arity: Arity


@dataclass(frozen=True)
class TopologyDescriptor:
    version: Version
    directed: bool
    edge_direction: EdgeDirection

    def __post_init__(self):
        if self.version is Version.V1 and not self.directed:
            raise PkgSageError("V1 topology must be directed")
        if self.version is Version.V3 and self.directed:
            raise PkgSageError("V3 topology must be undirected")


@dataclass(frozen=True)
class Schema:
    facets: tuple[Facet, ...]
    topology: TopologyDescriptor

    def __post_init__(self):
        names = [f.name for f in self.facets]
        if len(set(names)) != len(names):
            raise PkgSageError(f"duplicate facet names in schema: {names}")

    @property
    def facet_names(self) -> list[str]:
        return [f.name for f in self.facets]

    @property
    def directed(self) -> bool:
        return self.topology.directed

    def facet(self, name: str) -> Facet:
        for f in self.facets:
            if f.name == name:
                return f
        raise KeyError(name)

    def with_version(self, version) -> "Schema":
        return Schema(self.facets, topology_for(version))

    def to_dict(self) -> dict:
        return {
            "version": self.topology.version.value,
            "facets": [
                {"name": f.name, "view": f.view.value, "arity": f.arity.value}
                for f in self.facets
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Schema":
        try:
            facets = tuple(
                Facet(f["name"], View(f["view"]), Arity(f["arity"]))
                for f in data["facets"]
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise PkgSageError(f"malformed schema document: {exc}") from exc
        return cls(facets, topology_for(data.get("version", "V1")))


DEMOGRAPHIC_FACETS = ("age_group", "gender", "religion", "marital_status", "race")
CLINICAL_FACETS = ("disease", "medication", "procedure")
SOCIAL_FACETS = ("employment", "household", "housing")


def topology_for(version) -> TopologyDescriptor:
    try:
        version = Version(version)
    except ValueError:
        raise UnsupportedVersion(f"unsupported graph version: {version!r}") from None
    if version is Version.V1:
        return TopologyDescriptor(Version.V1, True, EdgeDirection.PATIENT_TO_ATTRIBUTE)
    return TopologyDescriptor(Version.V3, False, EdgeDirection.UNDIRECTED)


def default_schema(version="V1") -> Schema:
    topology = topology_for(version)
    facets = (
        [Facet(n, View.DEMOGRAPHIC, Arity.SINGLE) for n in DEMOGRAPHIC_FACETS]
        + [Facet(n, View.CLINICAL, Arity.MULTI) for n in CLINICAL_FACETS]
        + [Facet(n, View.SOCIAL, Arity.SINGLE) for n in SOCIAL_FACETS]
    )
    return Schema(tuple(facets), topology)


def facets_of_view(schema: Schema, view) -> list[Facet]:
    view = View(view)
    return [f for f in schema.facets if f.view is view]


def load_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return Schema.from_dict(json.load(fh))


def save_schema(schema: Schema, path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n", encoding="utf-8")
