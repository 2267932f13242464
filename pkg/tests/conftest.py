import numpy as np
import pytest

import dllm_decode as dd


@pytest.fixture
def vocab4():
    # two content symbols 0,1 + eot + mask
    return dd.Vocabulary(size=4, mask_id=3, eot_id=2)


@pytest.fixture
def vocab6():
    # four content symbols + eot + mask
    return dd.Vocabulary(size=6, mask_id=5, eot_id=4)


@pytest.fixture
def sticky_backend(vocab6):
    spec = dd.sticky_chain(vocab6, stay=0.85)
    return dd.MarkovOracleBackend(spec, vocab6)


def trace_content(traces):
    """Trace tuples without the decoder-identity tags, for differential tests."""
    return [(t.step_index, t.decoded, t.remasked, t.accepted_now) for t in traces]
