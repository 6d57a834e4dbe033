"""Flat structured-text configuration grammar.

A model is described by `key = value` lines: column names, design-term
expressions (`1 + ns(year, 2) + drug`, interactions with `*`), the
response family, the association structure with optional transformation
features (`value = identity, pow2`), priors, and MCMC controls.  The
same term syntax is used when serializing fitted models, so parsing and
unparsing must round-trip exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..errors import InvalidSpecError
from ..longitudinal import (Covariate, DnsTime, Family, InsTime, Intercept,
                            Interaction, NsTime, RawTime, TermList)
from ..mcmc import MCMCControl, PriorSpec
from ..model import ModelSpec
from ..survival import (AssociationSpec, ExtraForm, FeatureList, Identity,
                        InteractWith, Power)

__all__ = [
    "parse_terms", "terms_to_text", "parse_features", "features_to_text",
    "parse_family", "family_to_text", "parse_config", "config_to_spec",
    "ModelConfig",
]

_SPLINES = {"ns": NsTime, "dns": DnsTime, "ins": InsTime}
_SPLINE_RE = re.compile(r"^(ns|dns|ins)\(\s*([^,()]+)\s*,\s*(\d+)\s*\)$")


def _split_top(text: str, sep: str) -> list[str]:
    """Split on sep at parenthesis depth zero."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise InvalidSpecError(f"unbalanced parentheses in {text!r}")
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth != 0:
        raise InvalidSpecError(f"unbalanced parentheses in {text!r}")
    parts.append("".join(cur))
    return parts


def _parse_atom(tok: str, time_col: str):
    tok = tok.strip()
    if not tok:
        raise InvalidSpecError("empty term")
    if tok == "1":
        return Intercept()
    m = _SPLINE_RE.match(tok)
    if m:
        kind, col, df = m.group(1), m.group(2).strip(), int(m.group(3))
        if col != time_col:
            raise InvalidSpecError(
                f"spline terms apply to the time column {time_col!r}, "
                f"got {col!r}")
        return _SPLINES[kind](df=df)
    if "(" in tok or ")" in tok:
        raise InvalidSpecError(f"cannot parse term {tok!r}")
    if tok == time_col:
        return RawTime()
    if not re.match(r"^[A-Za-z_][A-Za-z0-9_.]*$", tok):
        raise InvalidSpecError(f"cannot parse term {tok!r}")
    return Covariate(tok)


def parse_terms(text: str, time_col: str) -> TermList:
    """`1 + ns(year, 2) + drug + drug*year` -> TermList."""
    out = []
    for piece in _split_top(text, "+"):
        piece = piece.strip()
        if not piece:
            raise InvalidSpecError(f"empty term in {text!r}")
        factors = [f.strip() for f in _split_top(piece, "*")]
        if len(factors) == 1:
            out.append(_parse_atom(factors[0], time_col))
        elif len(factors) == 2:
            out.append(Interaction(_parse_atom(factors[0], time_col),
                                   _parse_atom(factors[1], time_col)))
        else:
            raise InvalidSpecError("only two-way interactions are supported")
    return TermList(tuple(out))


def _atom_to_text(term, time_col: str) -> str:
    if isinstance(term, Intercept):
        return "1"
    if isinstance(term, RawTime):
        return time_col
    if isinstance(term, Covariate):
        return term.name
    if isinstance(term, NsTime):
        return f"ns({time_col}, {term.df})"
    if isinstance(term, DnsTime):
        return f"dns({time_col}, {term.df})"
    if isinstance(term, InsTime):
        return f"ins({time_col}, {term.df})"
    raise InvalidSpecError(f"cannot serialize term {term!r}")


def terms_to_text(terms: TermList, time_col: str) -> str:
    parts = []
    for t in terms:
        if isinstance(t, Interaction):
            parts.append(f"{_atom_to_text(t.left, time_col)}"
                         f"*{_atom_to_text(t.right, time_col)}")
        else:
            parts.append(_atom_to_text(t, time_col))
    return " + ".join(parts)


_POW_RE = re.compile(r"^pow(\d+)$")
_INTERACT_RE = re.compile(r"^interact\(\s*([^,()]+)\s*,\s*([^()]+?)\s*\)$")


def parse_features(text: str) -> FeatureList:
    """`identity, pow2, interact(drug, D-penicil)` -> FeatureList."""
    feats = []
    for tok in _split_top(text, ","):
        tok = tok.strip()
        if tok == "identity":
            feats.append(Identity())
            continue
        m = _POW_RE.match(tok)
        if m:
            feats.append(Power(int(m.group(1))))
            continue
        m = _INTERACT_RE.match(tok)
        if m:
            feats.append(InteractWith(m.group(1).strip(), m.group(2)))
            continue
        raise InvalidSpecError(f"unknown transformation feature {tok!r}")
    return FeatureList(tuple(feats))


def features_to_text(flist: FeatureList) -> str:
    parts = []
    for f in flist.features:
        if isinstance(f, Identity):
            parts.append("identity")
        elif isinstance(f, Power):
            parts.append(f"pow{f.k}")
        elif isinstance(f, InteractWith):
            parts.append(f"interact({f.covariate}, {f.level})")
        else:
            raise InvalidSpecError(f"cannot serialize feature {f!r}")
    return ", ".join(parts)


def parse_family(text: str) -> Family:
    """`gaussian`, `student_t df=4`, `censored_gaussian censor=status`."""
    parts = text.split()
    kind = parts[0]
    kw = {}
    for p in parts[1:]:
        if "=" not in p:
            raise InvalidSpecError(f"bad family option {p!r}")
        k, v = p.split("=", 1)
        if k == "df":
            kw["df"] = int(v)
        elif k == "censor":
            kw["censor_column"] = v
        else:
            raise InvalidSpecError(f"unknown family option {k!r}")
    return Family(kind, **kw)


def family_to_text(fam: Family) -> str:
    out = fam.kind
    if fam.df is not None:
        out += f" df={fam.df}"
    if fam.censor_column is not None:
        out += f" censor={fam.censor_column}"
    return out


@dataclass
class ModelConfig:
    """Parsed configuration: column names plus everything in ModelSpec."""

    subject_col: str = "id"
    time_col: str = "time"
    response_col: str = "y"
    surv_time_col: str = "T"
    surv_event_col: str = "delta"
    entries: dict = field(default_factory=dict)


_COLUMN_KEYS = {
    "id": "subject_col", "time": "time_col", "response": "response_col",
    "surv_time": "surv_time_col", "surv_event": "surv_event_col",
}
_PRIOR_KEYS = {"v0", "nu0", "r0_scale", "a0", "b0", "tau_shape", "tau_rate"}
_CONTROL_INT = {"n_adapt", "n_batch", "n_burnin", "n_iter", "n_thin", "seed"}
_SPEC_KEYS = {"fixed", "random", "surv", "family", "association", "value",
              "extra", "extra_fixed", "extra_random", "ind_fixed",
              "ind_random", "n_basis_h0", "penalized", "penalty_order",
              "store_b"}


def parse_config(text: str) -> ModelConfig:
    cfg = ModelConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidSpecError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in _COLUMN_KEYS:
            setattr(cfg, _COLUMN_KEYS[key], val)
        elif key in _SPEC_KEYS | _PRIOR_KEYS | _CONTROL_INT:
            cfg.entries[key] = val
        else:
            raise InvalidSpecError(f"line {lineno}: unknown key {key!r}")
    return cfg


def _parse_indices(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def config_to_spec(cfg: ModelConfig) -> ModelSpec:
    e = dict(cfg.entries)
    tc = cfg.time_col
    for req in ("fixed", "random", "surv"):
        if req not in e:
            raise InvalidSpecError(f"missing required config key {req!r}")
    fixed = parse_terms(e.pop("fixed"), tc)
    random = parse_terms(e.pop("random"), tc)
    surv_terms = parse_terms(e.pop("surv"), tc)
    family = parse_family(e.pop("family", "gaussian"))

    kind = e.pop("association", "td_value")
    extra_form = None
    if "extra_fixed" in e or "extra_random" in e:
        for req in ("extra_fixed", "extra_random", "ind_fixed", "ind_random"):
            if req not in e:
                raise InvalidSpecError(
                    f"extra association form needs config key {req!r}")
        extra_form = ExtraForm(
            fixed=parse_terms(e.pop("extra_fixed"), tc),
            random=parse_terms(e.pop("extra_random"), tc),
            ind_fixed=_parse_indices(e.pop("ind_fixed")),
            ind_random=_parse_indices(e.pop("ind_random")))
    assoc_kw = {}
    if "value" in e:
        assoc_kw["transform_value"] = parse_features(e.pop("value"))
    if "extra" in e:
        assoc_kw["transform_extra"] = parse_features(e.pop("extra"))
    association = AssociationSpec(kind, extra_form=extra_form, **assoc_kw)

    prior_kw = {}
    for k in list(e):
        if k in _PRIOR_KEYS:
            v = e.pop(k)
            prior_kw[k] = int(v) if k == "nu0" else float(v)
    control_kw = {}
    for k in list(e):
        if k in _CONTROL_INT:
            control_kw[k] = int(e.pop(k))
    if "store_b" in e:
        control_kw["store_b"] = e.pop("store_b").lower() in ("1", "true",
                                                             "yes")
    spec_kw = {}
    if "n_basis_h0" in e:
        spec_kw["n_basis_h0"] = int(e.pop("n_basis_h0"))
    if "penalized" in e:
        spec_kw["penalized"] = e.pop("penalized").lower() in ("1", "true",
                                                              "yes")
    if "penalty_order" in e:
        spec_kw["penalty_order"] = int(e.pop("penalty_order"))
    if e:
        raise InvalidSpecError(f"unused config keys: {sorted(e)}")
    return ModelSpec(fixed=fixed, random=random, family=family,
                     surv_terms=surv_terms, association=association,
                     priors=PriorSpec(**prior_kw),
                     control=MCMCControl(**control_kw), **spec_kw)
