"""Decoding engine for masked discrete diffusion language models.

Strategies: vanilla progressive unmasking, two-stage fill-up +
cross-validation refinement, and the RCR / ReMDM remasking baselines, all
driven through one backend interface with exact forward-call accounting.
An exact-inference Markov-chain oracle makes every decoder verifiable at
desk scale, in-process or over the wire protocol.
"""

from .backends import CountingBackend, LogitsRequest, LogitsResponse, MarkovOracleBackend
from .baselines import RcrState, RemdmConfig, rcr_decode, remdm_decode
from .core import (
    SequenceState,
    StepTrace,
    Vocabulary,
    apply_update,
    init_state,
    read_trace,
    replay_trace,
    trace_header,
    write_trace,
)
from .harness import (
    ResultTable,
    SweepSpec,
    TaskInstance,
    ablation_refine_steps,
    gen_cloze_suite,
    run_sweep,
    score_output,
)
from .oracle import (
    MarkovOracleSpec,
    chain_loglik,
    oracle_logits,
    posterior_marginals,
    random_chain,
    sample_chain,
    sticky_chain,
    two_symbol_chain,
    uniform_chain,
)
from .protocol import LogitsServer, RemoteBackend
from .sampling import (
    EotPenalty,
    SamplerConfig,
    apply_eot_penalty,
    confidence_metric,
    sample_tokens,
    softmax,
)
from .tolerator import RefineSchedule, ToleratorConfig, anneal_gamma, fillup, refine_step, tolerator_decode
from .vanilla import AcceptanceSchedule, vanilla_decode

__version__ = "0.1.0"
