"""Knowledge-graph-guided multi-hop question answering.

Pipeline: load a multi-relational KG, ground a question and its choices
to entities, extract the k-hop subgraph between them, then let a
pluggable decision backend walk the subgraph one relation at a time
until it reaches an answer entity. Every run yields an auditable
reasoning trace; the same machinery also generates instruction-tuning
datasets from shortest correct paths.
"""

from .backend_clients import (
    JudgeVerdict,
    OracleBackend,
    RandomBackend,
    RemoteBackendConfig,
    RemoteChatBackend,
    RemoteJudge,
    local_judge,
    oracle_factory,
    random_factory,
)
from .dataset_generator import (
    TRAINING_CONFIG,
    EncoderContext,
    InstructionInstance,
    PathInstance,
    emit_dataset,
    extract_paths,
    generate_dataset,
    paths_to_instances,
)
from .errors import (
    BackendFailure,
    EmptyNeighborList,
    JudgeParseError,
    KSolverError,
    NoAnswerReachable,
    NoCorrectEntity,
    NotFound,
    SchemaViolation,
)
from .eval_harness import EvalReport, evaluate, inspect_trace, report_from_traces
from .grounding import GroundedInstance, QAInstance, ground, load_qa_file
from .kg_store import (
    Edge,
    Entity,
    EntityId,
    KnowledgeGraph,
    Neighbor,
    RelationCatalog,
    RelationType,
    Step,
    default_relation_catalog,
    load_graph,
    load_relation_catalog,
)
from .prompt_codec import (
    INSTRUCTION_TEXT,
    TEMPLATE_VERSION,
    EncodeLimits,
    Selection,
    StepPrompt,
    decode_label,
    decode_selection,
    encode_direct,
    encode_step,
)
from .solver_loop import (
    BackendContext,
    DecisionBackend,
    ReasoningTrace,
    SolveParams,
    TraversalState,
    derive_seed,
    fallback_direct,
    read_traces,
    run_batch,
    solve,
    write_traces,
)
from .subgraph_extractor import Subgraph, extract, reachability_report

__version__ = "0.1.0"
