"""Person-centric knowledge graphs, a from-scratch GraphSAGE readmission
classifier, and a facet ablation harness."""

__version__ = "0.1.0"

from .schema import Facet, Schema, View, default_schema, facets_of_view  # noqa: E402
from .ingest import (  # noqa: E402
    AdmissionRecord,
    CohortDataset,
    ConceptDictionary,
    assess_missingness,
    enrich_social,
    label_readmissions,
    parse_cohort,
    sample_cohort,
    summarize,
)
from .graph import FacetMask, PatientGraph, build_graph, neighbors, validate_graph  # noqa: E402
from .gnn import TrainConfig, evaluate, predict, train  # noqa: E402
from .ablation import generate_plans, percentage_decrease, run_sweep  # noqa: E402
from .report import compute_metrics, rank_facets, write_report  # noqa: E402
from .synth import SyntheticConfig, bayes_accuracy, generate_cohort  # noqa: E402
