"""Document-level runs: reference, multipliers and reports in one call."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .document import ProblemDocument
from .model import ReferenceProcess
from .reductions.change_of_vars import (
    TubeReport, build_problem_d, certify_tube, map_multipliers_d_to_c, verify_theorem_c,
)
from .reductions.problem_b import build_problem_b, map_multipliers_a_to_b, verify_b_conditions
from .stationarity import EQ_TOL, SIGN_TOL, StationarityReport, reconstruct_multipliers, verify_theorem
from .variations import (
    Kappa, build_variation, check_dj_inequality, directional_derivative, fd_ladder, measure_pairing,
    pairing_identity_residual,
)

__all__ = ["Settings", "VerifyResult", "settings_for", "verify_document", "reduce_document",
           "variation_document", "a_form"]


@dataclass(frozen=True)
class Settings:
    n_steps: int
    tol: float = EQ_TOL
    sign_tol: float = SIGN_TOL
    tol_act: float = 1e-6

    def to_dict(self) -> dict:
        return {"n_steps": self.n_steps, "tol": self.tol, "sign_tol": self.sign_tol, "tol_act": self.tol_act}


def settings_for(doc: ProblemDocument, n_steps: int | None = None, tol: float | None = None) -> Settings:
    """Explicit arguments beat the document's ``[grid]``/``[tolerances]``, which beat the defaults."""
    t = doc.tolerances
    return Settings(int(n_steps or doc.n_steps), float(tol if tol is not None else t.get("tol", EQ_TOL)),
                    float(t.get("sign_tol", SIGN_TOL)), float(t.get("tol_act", 1e-6)))


@dataclass
class VerifyResult:
    document: ProblemDocument
    settings: Settings
    process: ReferenceProcess
    multipliers: object
    report: StationarityReport
    tube: TubeReport | None = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.report.passed and (self.tube is None or self.tube.passed)

    def to_dict(self) -> dict:
        d = self.report.to_dict()
        d["verdict"] = "PASS" if self.passed else "FAIL"
        d["problem"] = {"name": self.document.name, "kind": self.document.kind, "params": self.document.params}
        d["settings"] = self.settings.to_dict()
        d["violations"] = self.report.violations + ([] if self.tube is None or self.tube.passed else ["TUBE"])
        d["min_mu_dot"] = float(np.min(self.multipliers.mu_dot.segments[1].values))
        if self.tube is not None:
            d["tube"] = {"min_abs_det": self.tube.min_abs_det, "max_roundtrip": self.tube.max_roundtrip,
                         "max_gzpp": self.tube.max_gzpp, "n_points": self.tube.n_points}
        d["diagnostics"] = {k: float(v) for k, v in self.multipliers.diagnostics.items()}
        return d


def a_form(doc: ProblemDocument, settings: Settings):
    """Problem, reference and multipliers in ``(z, x)`` coordinates.

    For kind C this is the transformed problem built from the document's
    change of variables, with the reference pushed forward. Returns
    ``(problem, w0, mult, extra)`` where ``extra`` holds the ``y``-side objects.
    """
    pr = doc.problem()
    w = doc.reference_process(pr, settings.n_steps)
    extra = {}
    if doc.kind == "C":
        cv = doc.change_of_variables()
        D = build_problem_d(pr, cv, w)
        extra = {"pc": pr, "w0_y": w, "cv": cv}
        pr, w = D, D.pushforward(w)
    return pr, w, reconstruct_multipliers(pr, w, settings.tol_act), extra


def verify_document(doc: ProblemDocument, settings: Settings | None = None,
                    seed: int | None = None) -> VerifyResult:
    """Full stationarity check; for kind C also certifies the change of variables on the tube.

    With a ``seed`` the tube check adds random points around the reference.
    """
    s = settings or settings_for(doc)
    p, w, mult, extra = a_form(doc, s)
    if doc.kind == "A":
        rep = verify_theorem(p, w, mult, s.tol, s.sign_tol, s.tol_act)
        return VerifyResult(doc, s, w, mult, rep)
    mc = map_multipliers_d_to_c(mult, extra["w0_y"], extra["cv"])
    rep = verify_theorem_c(extra["pc"], extra["w0_y"], mc, s.tol, s.sign_tol, s.tol_act)
    tube = certify_tube(extra["cv"], extra["w0_y"], *(() if seed is None else (1e-2, 500, seed)))
    return VerifyResult(doc, s, extra["w0_y"], mc, rep, tube, {"a_form": mult})


def reduce_document(doc: ProblemDocument, settings: Settings | None = None, anchor: str = "t2"):
    """Replicated instance, mapped multipliers and the condition report for it."""
    s = settings or settings_for(doc)
    p, w, mult, _ = a_form(doc, s)
    B = build_problem_b(p, w)
    mb = map_multipliers_a_to_b(mult, w, anchor=anchor, tol=s.tol)
    return B, mb, verify_b_conditions(B, mb, s.tol, s.sign_tol, s.tol_act)


def variation_document(doc: ProblemDocument, kappas: Sequence[Kappa], settings: Settings | None = None,
                       eps: Sequence[float] = (1e-2, 1e-3, 1e-4), family: Sequence[Kappa] | None = None) -> dict:
    """Pairing identity, directional derivative and difference-quotient ladder per ``kappa``; family minimum."""
    s = settings or settings_for(doc)
    p, w, mult, _ = a_form(doc, s)
    rows, ok = [], True
    for j, k in enumerate(kappas):
        var = build_variation(p, w, k)
        pr = pairing_identity_residual(p, w, mult, var)
        d = directional_derivative(p, w, var)
        mp = measure_pairing(mult, w, k)
        lad = fd_ladder(p, w, var, eps)
        ok &= pr.relative <= s.tol and abs(d - mp) <= s.tol * (1 + abs(d))
        rows.append({"kappa": k.label or f"kappa{j}", "pairing": pr.to_dict(), "directional_derivative": d,
                     "measure_pairing": mp, "ladder": lad.to_dict()})
    dj = check_dj_inequality(p, w, mult, family, s.tol)
    ok &= dj.nonnegative
    return {"schema": 1, "problem": {"name": doc.name, "kind": doc.kind, "params": doc.params},
            "settings": s.to_dict(), "variations": rows, "dj_family": dj.to_dict(),
            "verdict": "PASS" if ok else "FAIL"}
