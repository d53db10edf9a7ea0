# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Problem families for training and benchmarking the hybrid solvers.

Four families are supported:

| Family | Domain | Material | Dirichlet | Traction |
| --- | --- | --- | --- | --- |
| Data1 | [0, 1]^2 | isotropic, random field E, nu = 0.4 | left | (1e6, 0) on right |
| Data2 | [0, 3] x [0, 1]^2 | isotropic, random field E, nu = 0.4 | left | (1e6, 0, 0) on right |
| Data3 | [0, 1]^2 | rotated orthotropic layer, uniform draws | left, bottom | (1e8, 0) on top |
| Data4 | [0, 3] x [0, 1]^2 | orthotropic solid, uniform parameters | left | (0, 0, 1e8) on right |

The Young's modulus field is log-normal, E = alpha exp(w) + beta, with w a Gaussian field whose
covariance is the square of the inverse of L = -a div(b grad) + c (natural boundary conditions).
A sample is drawn by solving L_h w = M_lumped^{1/2} z with P1 finite elements on the elasticity
mesh and z standard normal.

Every sample draws from its own stream seeded by (seed, index), so samples can be generated in
any order and regenerated individually.

You can use this library as follows:

```python
from fns.v0.datasets import DatasetSpec, generate, export_dataset, load_dataset

spec = DatasetSpec("Data1", samples=200, resolution=8, seed=0)
samples = generate(spec)
export_dataset(spec, "data/data1")
spec, samples = load_dataset("data/data1")
```

A dataset directory holds `manifest.yaml` (sorted keys), `mesh.txt` and one `sample_NNNN`
directory per sample with `material.yaml`; `--systems` exports add `matrix.txt` and `rhs.txt`.
"""

import functools
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as splinalg
import scipy.stats
import yaml

from fns.v0.blocks import save_matrix, save_vector
from fns.v0.config import ConfigError, Error
from fns.v0.elasticity import (
    Anisotropic2D,
    Isotropic2D,
    Isotropic3D,
    LinearSystem,
    MaterialModel,
    Orthotropic3D,
    ProblemDefinition,
    assemble,
    p1_gradients,
)
from fns.v0.mesh import (
    MeshTopology,
    build_structured_box,
    build_structured_square,
    build_unstructured_2d,
    load_mesh,
    save_mesh,
)

logger = logging.getLogger(__name__)

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version when making compatible changes
LIBPATCH = 4

FAMILIES = ("Data1", "Data2", "Data3", "Data4")
MESH_KINDS = ("structured", "unstructured")
DATASET_FORMAT = "fns-dataset"
POISSON_RATIO = 0.4
KS_MIN_SAMPLES = 20
KS_LEVEL = 0.01

DATA3_RANGES: Dict[str, Tuple[float, float]] = {
    "E1": (50e9, 200e9),
    "E2": (50e6, 200e6),
    "G12": (2e9, 20e9),
    "nu12": (0.2, 0.35),
    "theta": (0.0, np.pi / 2),
}

DATA4_RANGES: Dict[str, Tuple[float, float]] = {
    "E1": (50e9, 200e9),
    "E2": (50e8, 200e8),
    "E3": (50e6, 200e6),
    "G12": (2e9, 20e9),
    "G23": (2e6, 20e6),
    "G31": (2e8, 20e8),
    "nu12": (0.25, 0.4),
    "nu13": (0.25, 0.4),
    "nu23": (0.25, 0.4),
}


class DatasetError(Error):
    """Raised when a dataset cannot be generated or read."""


@dataclass(frozen=True)
class GrfConfig:
    """Log-normal random field E = alpha exp(w) + beta with w ~ N(0, L^-2)."""

    alpha: float = 1e8
    beta: float = 100.0
    a: float = 0.005
    b: float = 1.0
    c: float = 0.2

    def __post_init__(self):
        if self.a <= 0 or self.c <= 0 or self.b <= 0:
            raise ConfigError(f"a, b and c must be positive, got {self.to_dict()}")
        if self.alpha <= 0 or self.beta < 0:
            raise ConfigError("alpha must be positive and beta non-negative")

    def to_dict(self) -> dict:
        """Return the config as a Python dictionary."""
        return asdict(self)

    def __str__(self) -> str:
        """Return the config as a YAML string."""
        return yaml.safe_dump(self.to_dict())


@dataclass(frozen=True)
class DatasetSpec:
    """Everything needed to regenerate a dataset exactly."""

    family: str = "Data1"
    samples: int = 200
    resolution: int = 8
    mesh: str = "structured"
    seed: int = 0
    test_fraction: float = 0.05
    grf: GrfConfig = field(default_factory=GrfConfig)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family '{self.family}', expected one of {FAMILIES}")
        if self.samples < 1:
            raise ConfigError(f"sample count must be >= 1, got {self.samples}")
        if self.resolution < 1:
            raise ConfigError(f"resolution must be >= 1, got {self.resolution}")
        if self.mesh not in MESH_KINDS:
            raise ConfigError(f"unknown mesh kind '{self.mesh}', expected one of {MESH_KINDS}")
        if self.mesh == "unstructured" and self.dim == 3:
            raise ConfigError("unstructured meshes are only available in 2D")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError(f"test fraction must lie in [0, 1), got {self.test_fraction}")

    @property
    def dim(self) -> int:
        """Spatial dimension of the family."""
        return 3 if self.family in ("Data2", "Data4") else 2

    @property
    def n_test(self) -> int:
        """Number of held-out samples (at least one when there are two or more samples)."""
        if self.samples < 2:
            return 0
        return min(max(int(round(self.samples * self.test_fraction)), 1), self.samples - 1)

    def split(self) -> Tuple[List[int], List[int]]:
        """Train and test indices; the last `n_test` samples are held out."""
        cut = self.samples - self.n_test
        return list(range(cut)), list(range(cut, self.samples))

    def to_dict(self) -> dict:
        """Return the spec as a Python dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSpec":
        """Inverse of `to_dict`."""
        data = dict(data)
        data["grf"] = GrfConfig(**data.get("grf", {}))
        try:
            return cls(**data)
        except TypeError as e:
            raise DatasetError(f"invalid dataset spec: {e}") from e

    def __str__(self) -> str:
        """Return the spec as a YAML string."""
        return yaml.safe_dump(self.to_dict())


@dataclass
class Sample:
    """One generated problem with its assembled system and network inputs."""

    index: int
    problem: ProblemDefinition
    system: LinearSystem
    features: np.ndarray
    parameters: Dict[str, float] = field(default_factory=dict)

    @property
    def mesh(self) -> MeshTopology:
        """The sample's mesh."""
        return self.problem.mesh


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Independent random stream of sample `index`."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def p1_operator_matrices(mesh: MeshTopology) -> Tuple[sp.csr_matrix, sp.csr_matrix, np.ndarray]:
    """Scalar P1 stiffness K, consistent mass M and lumped mass diagonal of a mesh."""
    gradients, measures = p1_gradients(mesh.nodes[mesh.elements])
    n_vertices = mesh.dim + 1
    local_k = measures[:, None, None] * np.einsum("mad,mbd->mab", gradients, gradients)
    local_m = (
        measures[:, None, None]
        * (np.ones((n_vertices, n_vertices)) + np.eye(n_vertices))
        / ((mesh.dim + 1) * (mesh.dim + 2))
    )
    rows = np.repeat(mesh.elements, n_vertices, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, n_vertices)).ravel()
    shape = (mesh.n_nodes, mesh.n_nodes)
    K = sp.coo_matrix((local_k.ravel(), (rows, cols)), shape=shape).tocsr()
    M = sp.coo_matrix((local_m.ravel(), (rows, cols)), shape=shape).tocsr()
    lumped = np.zeros(mesh.n_nodes)
    np.add.at(lumped, mesh.elements.ravel(), np.repeat(measures / n_vertices, n_vertices))
    return K, M, lumped


def sample_grf(
    mesh: MeshTopology, config: GrfConfig, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Draw one log-normal modulus field at the mesh nodes.

    Returns:
        the modulus E and the underlying Gaussian field w, both of shape (N,).
    """
    K, M, lumped = p1_operator_matrices(mesh)
    operator = (config.a * config.b * K + config.c * M).tocsc()
    z = rng.standard_normal(mesh.n_nodes)
    w = splinalg.spsolve(operator, np.sqrt(lumped) * z)
    if not np.all(np.isfinite(w)):
        raise DatasetError("random field operator is singular")
    return config.alpha * np.exp(w) + config.beta, w


def draw_uniform(
    rng: np.random.Generator, ranges: Dict[str, Tuple[float, float]]
) -> Dict[str, float]:
    """One independent uniform draw per named parameter, in the order of `ranges`."""
    return {name: float(rng.uniform(low, high)) for name, (low, high) in ranges.items()}


def parameter_ranges(family: str) -> Dict[str, Tuple[float, float]]:
    """Sampling ranges of a parametric family (empty for random-field families)."""
    return {"Data3": DATA3_RANGES, "Data4": DATA4_RANGES}.get(family, {})


def feature_dim(family: str) -> int:
    """Width of the per-node network input of a family."""
    dim = 3 if family in ("Data2", "Data4") else 2
    ranges = parameter_ranges(family)
    return dim + (len(ranges) if ranges else 1)


@functools.lru_cache(maxsize=8)
def _cached_mesh(family: str, resolution: int, kind: str, seed: int) -> MeshTopology:
    if family in ("Data2", "Data4"):
        return build_structured_box(2 * resolution, resolution, resolution)
    if kind == "unstructured":
        return build_unstructured_2d(resolution, seed)
    return build_structured_square(resolution)


def build_mesh(spec: DatasetSpec) -> MeshTopology:
    """Mesh shared by every sample of the dataset.

    3D families use a box of 2r x r x r cells over [0, 3] x [0, 1]^2 for resolution r.
    """
    return _cached_mesh(spec.family, spec.resolution, spec.mesh, spec.seed)


def boundary_conditions(family: str) -> Tuple[List[Tuple[str, Tuple[float, ...]]], List[str]]:
    """Tractions and Dirichlet tags of a family."""
    if family == "Data1":
        return [("right", (1e6, 0.0))], ["left"]
    if family == "Data2":
        return [("right", (1e6, 0.0, 0.0))], ["left"]
    if family == "Data3":
        return [("top", (1e8, 0.0))], ["left", "bottom"]
    if family == "Data4":
        return [("right", (0.0, 0.0, 1e8))], ["left"]
    raise DatasetError(f"unknown dataset family '{family}'")


def _material(family: str, params: Dict[str, float], E=None) -> MaterialModel:
    if family == "Data1":
        return Isotropic2D(E=E, nu=POISSON_RATIO)
    if family == "Data2":
        return Isotropic3D(E=E, nu=POISSON_RATIO)
    if family == "Data3":
        return Anisotropic2D(**params)
    return Orthotropic3D(**params)


def node_features(
    family: str, mesh: MeshTopology, material: MaterialModel, grf: Optional[GrfConfig] = None
) -> np.ndarray:
    """Per-node network inputs.

    Random-field families use log((E - beta) / alpha), i.e. the Gaussian field w, next to the
    coordinates. Parametric families broadcast every parameter, mapped to [0, 1] over its
    sampling range, to all nodes.
    """
    coordinates = mesh.nodes
    ranges = parameter_ranges(family)
    if not ranges:
        grf = grf or GrfConfig()
        E = np.broadcast_to(np.asarray(material.E, dtype=np.float64), (mesh.n_nodes,))
        w = np.log(np.maximum(E - grf.beta, np.finfo(float).tiny) / grf.alpha)
        return np.column_stack([w, coordinates])
    params = material.to_dict()
    scaled = [(params[name] - low) / (high - low) for name, (low, high) in ranges.items()]
    return np.column_stack([np.tile(scaled, (mesh.n_nodes, 1)), coordinates])


def build_sample(
    spec: DatasetSpec, index: int, material: MaterialModel, parameters: Dict[str, float]
) -> Sample:
    """Assemble the problem of one sample from its material."""
    mesh = build_mesh(spec)
    tractions, dirichlet = boundary_conditions(spec.family)
    problem = ProblemDefinition(mesh, material, tractions=tractions, dirichlet=dirichlet)
    system = assemble(problem)
    features = node_features(spec.family, mesh, material, spec.grf)
    return Sample(index, problem, system, features, parameters)


def make_problem(spec: DatasetSpec, index: int) -> Sample:
    """Generate sample `index` of a dataset."""
    if not 0 <= index < spec.samples:
        raise DatasetError(f"sample index {index} outside [0, {spec.samples})")
    rng = sample_stream(spec.seed, index)
    mesh = build_mesh(spec)
    ranges = parameter_ranges(spec.family)
    if ranges:
        parameters = draw_uniform(rng, ranges)
        material = _material(spec.family, parameters)
    else:
        E, _ = sample_grf(mesh, spec.grf, rng)
        parameters = {}
        material = _material(spec.family, parameters, E)
    return build_sample(spec, index, material, parameters)


def uniformity_check(samples: List[Sample], family: str) -> Dict[str, float]:
    """Kolmogorov-Smirnov p-values of the parameter draws against their uniform ranges.

    Small p-values are logged as warnings and never raise.
    """
    ranges = parameter_ranges(family)
    if not ranges or len(samples) < KS_MIN_SAMPLES:
        return {}
    p_values = {}
    for name, (low, high) in ranges.items():
        values = [sample.parameters[name] for sample in samples]
        result = scipy.stats.kstest(values, "uniform", args=(low, high - low))
        p_values[name] = float(result.pvalue)
        if result.pvalue < KS_LEVEL:
            logger.warning(
                "parameter %s fails the uniformity check (KS p-value %.3g)", name, result.pvalue
            )
    return p_values


def generate(spec: DatasetSpec, indices: Optional[List[int]] = None) -> List[Sample]:
    """Generate all (or the selected) samples of a dataset."""
    indices = list(range(spec.samples)) if indices is None else list(indices)
    samples = [make_problem(spec, index) for index in indices]
    uniformity_check(samples, spec.family)
    logger.info("generated %d %s samples", len(samples), spec.family)
    return samples


def sample_directory(root: Union[str, Path], index: int) -> Path:
    """Directory of sample `index` inside a dataset."""
    return Path(root) / f"sample_{index:04d}"


def manifest_document(spec: DatasetSpec) -> str:
    """YAML manifest of a dataset."""
    train, test = spec.split()
    document = {
        "format": DATASET_FORMAT,
        "libapi": LIBAPI,
        "spec": spec.to_dict(),
        "split": {"train": train, "test": test},
    }
    return yaml.safe_dump(document, sort_keys=True)


def export_dataset(
    spec: DatasetSpec,
    root: Union[str, Path],
    samples: Optional[List[Sample]] = None,
    systems: bool = False,
) -> Path:
    """Write the manifest, the shared mesh and one directory per sample."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    samples = generate(spec) if samples is None else samples
    (root / "manifest.yaml").write_text(manifest_document(spec))
    save_mesh(build_mesh(spec), root / "mesh.txt")
    for sample in samples:
        directory = sample_directory(root, sample.index)
        directory.mkdir(exist_ok=True)
        record = {
            "index": sample.index,
            "material": sample.problem.material.to_dict(),
            "parameters": sample.parameters,
        }
        (directory / "material.yaml").write_text(yaml.safe_dump(record, sort_keys=True))
        if systems:
            save_matrix(sample.system.matrix, directory / "matrix.txt")
            save_vector(sample.system.rhs, directory / "rhs.txt")
    logger.info("exported %d samples to %s", len(samples), root)
    return root


def read_manifest(root: Union[str, Path]) -> DatasetSpec:
    """Dataset spec recorded in a dataset directory."""
    path = Path(root) / "manifest.yaml"
    try:
        document = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as e:
        raise DatasetError(f"cannot read manifest {path}: {e}") from e
    if not isinstance(document, dict) or document.get("format") != DATASET_FORMAT:
        raise DatasetError(f"{path} is not a dataset manifest")
    if document.get("libapi") != LIBAPI:
        raise DatasetError(f"dataset API version {document.get('libapi')} does not match {LIBAPI}")
    try:
        return DatasetSpec.from_dict(document["spec"])
    except (KeyError, ConfigError) as e:
        raise DatasetError(f"manifest {path} holds an invalid spec: {e}") from e


def load_dataset(
    root: Union[str, Path],
    expected: Optional[DatasetSpec] = None,
    indices: Optional[List[int]] = None,
) -> Tuple[DatasetSpec, List[Sample]]:
    """Read a dataset written by `export_dataset`.

    Args:
        root: dataset directory.
        expected: refuse a dataset generated from a different spec.
        indices: load only these samples.
    """
    root = Path(root)
    spec = read_manifest(root)
    if expected is not None and expected != spec:
        raise DatasetError(f"dataset at {root} was generated from a different spec")
    indices = list(range(spec.samples)) if indices is None else list(indices)
    missing = [i for i in indices if not (sample_directory(root, i) / "material.yaml").exists()]
    if missing:
        raise DatasetError(f"dataset at {root} is missing samples {missing}")

    mesh = load_mesh(root / "mesh.txt")
    if mesh != build_mesh(spec):
        raise DatasetError(f"mesh stored at {root} does not match the manifest")
    samples = []
    for index in indices:
        record = yaml.safe_load((sample_directory(root, index) / "material.yaml").read_text())
        material = MaterialModel.from_dict(record["material"])
        samples.append(build_sample(spec, index, material, record.get("parameters") or {}))
    logger.info("loaded %d %s samples from %s", len(samples), spec.family, root)
    return spec, samples
