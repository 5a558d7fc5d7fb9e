"""Every trajectory produced anywhere in the suite is checked for the
monotone-objective and step-budget invariants."""
import functools

import repopt
import repopt.core
import repopt.harness

from repopt.core import check_run_invariants

RUN_LOG = {"runs": 0, "violations": []}
_original_run = repopt.core.run


@functools.wraps(_original_run)
def _checked_run(problem, oracle, dir_sampler, step_sampler, params, N, seed, *args, **kw):
    traj = _original_run(problem, oracle, dir_sampler, step_sampler, params, N, seed, *args, **kw)
    RUN_LOG["runs"] += 1
    if not check_run_invariants(traj, params):
        RUN_LOG["violations"].append((type(problem).__name__, seed))
        raise AssertionError(f"run invariants violated ({type(problem).__name__}, seed={seed})")
    return traj


for _mod in (repopt.core, repopt.harness, repopt):
    _mod.run = _checked_run
