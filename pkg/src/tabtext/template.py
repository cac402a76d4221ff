"""Row-to-text serialization driven by clause templates.

A template is an ordered list of clauses.  Each clause carries literal text
with ``{feature}`` placeholders (``{{`` and ``}}`` escape literal braces) and a
policy for what happens when one of its features is missing.  Clauses may be
grouped into sentences; a grouped clause contributes a fragment and the
group is closed with ``sentence_end``.
"""
from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .datasets import FeatureSchema, TabularDataset, is_missing

SCALED_DECIMALS = 3
RAW_DECIMALS = 1


class TemplateError(ValueError):
    def __init__(self, message: str, clause_index: int | None = None, offset: int | None = None):
        self.clause_index = clause_index
        self.offset = offset
        where = []
        if clause_index is not None:
            where.append(f"clause {clause_index}")
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class Placeholder:
    name: str


@dataclass(frozen=True)
class MissingPolicy:
    kind: str = "drop"  # drop | filler_unrelated | filler_related
    filler: str | None = None

    def __post_init__(self):
        if self.kind not in ("drop", "filler_unrelated", "filler_related"):
            raise TemplateError(f"unknown missing policy {self.kind!r}")
        if self.kind != "drop" and self.filler is None:
            raise TemplateError(f"policy {self.kind} needs a filler string")


DROP = MissingPolicy()


def parse_text(text: str, clause_index: int | None = None) -> tuple:
    """Split clause text into literal strings and :class:`Placeholder` parts."""
    parts: list = []
    buf: list[str] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "{":
            if i + 1 < n and text[i + 1] == "{":
                buf.append("{")
                i += 2
                continue
            close = text.find("}", i + 1)
            nested = text.find("{", i + 1)
            if close < 0 or (0 <= nested < close):
                raise TemplateError("unbalanced '{'", clause_index, i)
            name = text[i + 1:close].strip()
            if not name:
                raise TemplateError("empty placeholder name", clause_index, i)
            if buf:
                parts.append("".join(buf))
                buf = []
            parts.append(Placeholder(name))
            i = close + 1
        elif ch == "}":
            if i + 1 < n and text[i + 1] == "}":
                buf.append("}")
                i += 2
                continue
            raise TemplateError("unbalanced '}'", clause_index, i)
        else:
            buf.append(ch)
            i += 1
    if buf:
        parts.append("".join(buf))
    return tuple(parts)


def _literal(parts: tuple) -> str:
    return "".join(p for p in parts if isinstance(p, str))


@dataclass(frozen=True)
class Clause:
    id: str
    text: str
    parts: tuple
    requires: frozenset
    missing: MissingPolicy = DROP
    sentence: str | None = None
    join: str = " "

    @classmethod
    def build(cls, id, text, missing=DROP, sentence=None, join=" ", index=None):
        parts = parse_text(text, index)
        requires = frozenset(p.name for p in parts if isinstance(p, Placeholder))
        if missing.filler is not None and any(isinstance(p, Placeholder) for p in parse_text(missing.filler, index)):
            raise TemplateError("filler contains a placeholder", index)
        return cls(id, text, parts, requires, missing, sentence, join)


@dataclass(frozen=True)
class ColumnRule:
    """Generates one clause per schema column whose name matches ``pattern``."""

    pattern: str
    text: str

    def expand(self, names: Sequence[str]) -> list[Clause]:
        rx = re.compile(self.pattern)
        tmpl = string.Template(self.text)
        out = []
        for name in names:
            m = rx.fullmatch(name)
            if not m:
                continue
            groups = {f"g{i}": g for i, g in enumerate(m.groups(), start=1)}
            out.append(Clause.build(name, tmpl.substitute(column=name, **groups)))
        return out


@dataclass(frozen=True)
class SerializationTemplate:
    dataset_name: str
    id: str
    clauses: tuple
    number_format: Mapping = field(default_factory=dict)
    default_format: object = None
    value_map: Mapping = field(default_factory=dict)
    transforms: Mapping = field(default_factory=dict)
    fillers: Mapping = field(default_factory=dict)
    sentence_end: str = "."
    column_rule: ColumnRule | None = None

    @property
    def requires(self) -> frozenset:
        out = set()
        for c in self.clauses:
            out |= c.requires
        return frozenset(out)

    def bind(self, names: Sequence[str]) -> tuple:
        """Concrete clause list for a schema; validates every placeholder."""
        clauses = self.clauses
        if self.column_rule is not None:
            clauses = tuple(self.column_rule.expand(names)) + clauses
        known = set(names)
        for i, c in enumerate(clauses):
            absent = c.requires - known
            if absent:
                raise RenderError(f"clause {i} ({c.id}) references unknown feature(s) {sorted(absent)}")
        return clauses

    def filler(self, register: str, feature: str) -> str:
        table = self.fillers.get(register, {})
        # "*" is the catch-all entry for features without a dedicated filler
        text = table.get(feature, table.get("*"))
        if text is None:
            raise RenderError(f"template {self.id!r} has no {register} filler for {feature!r}")
        return text


@dataclass(frozen=True)
class SerializedExample:
    text: str
    label: int | None
    source_row: int
    degenerate: bool = False

    def to_json(self) -> str:
        return json.dumps({"text": self.text, "label": self.label}, ensure_ascii=False)


# ---------------------------------------------------------------- parsing


def _policy_from_doc(doc, index) -> MissingPolicy:
    if doc is None or doc == "drop":
        return DROP
    if isinstance(doc, dict) and len(doc) == 1:
        (kind, filler), = doc.items()
        if kind in ("filler_related", "filler_unrelated"):
            for p in parse_text(filler, index):
                if isinstance(p, Placeholder):
                    raise TemplateError("filler contains a placeholder", index)
            return MissingPolicy(kind, _literal(parse_text(filler, index)))
    raise TemplateError(f"bad missing policy {doc!r}", index)


def parse_template(source) -> SerializationTemplate:
    """Build a template from a mapping, a YAML/JSON string, or a file path."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and source.endswith((".yaml", ".yml", ".json"))):
        source = Path(source).read_text(encoding="utf-8")
    if isinstance(source, str):
        source = yaml.safe_load(source)
    if not isinstance(source, dict):
        raise TemplateError("template document must be a mapping")
    doc = source
    clauses, seen = [], set()
    for i, entry in enumerate(doc.get("clauses") or ()):
        if isinstance(entry, str):
            entry = {"text": entry}
        if "text" not in entry:
            raise TemplateError("clause without text", i)
        cid = str(entry.get("id", f"c{i}"))
        if cid in seen:
            raise TemplateError(f"duplicate clause id {cid!r}", i)
        seen.add(cid)
        parts = parse_text(entry["text"], i)
        requires = frozenset(p.name for p in parts if isinstance(p, Placeholder))
        clauses.append(Clause(cid, entry["text"], parts, requires, _policy_from_doc(entry.get("missing"), i),
                              entry.get("sentence"), entry.get("join", " ")))
    rule = None
    if "clause_per_column" in doc:
        r = doc["clause_per_column"]
        rule = ColumnRule(r["match"], r["text"])
        parse_text(string.Template(rule.text).safe_substitute(column="x"), None)
    if not clauses and rule is None:
        raise TemplateError("template has no clauses")
    fillers = {}
    for register, table in (doc.get("fillers") or {}).items():
        if register not in ("unrelated", "related"):
            raise TemplateError(f"unknown filler register {register!r}")
        fillers[register] = {}
        for feat, text in table.items():
            if any(isinstance(p, Placeholder) for p in parse_text(text)):
                raise TemplateError(f"{register} filler for {feat!r} contains a placeholder")
            fillers[register][feat] = _literal(parse_text(text))
    value_map = {f: {str(k): str(v) for k, v in m.items()} for f, m in (doc.get("value_map") or {}).items()}
    for f, t in (doc.get("transforms") or {}).items():
        if t not in TRANSFORMS:
            raise TemplateError(f"unknown transform {t!r} for {f!r}")
    return SerializationTemplate(
        dataset_name=doc.get("dataset", doc.get("id", "")),
        id=doc.get("id", doc.get("dataset", "")),
        clauses=tuple(clauses),
        number_format=dict(doc.get("number_format") or {}),
        default_format=doc.get("default_format"),
        value_map=value_map,
        transforms=dict(doc.get("transforms") or {}),
        fillers=fillers,
        sentence_end=doc.get("sentence_end", "."),
        column_rule=rule,
    )


def builtin_template_ids() -> list[str]:
    root = resources.files("tabtext") / "templates"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_builtin_template(template_id: str) -> SerializationTemplate:
    path = resources.files("tabtext") / "templates" / f"{template_id}.yaml"
    if not path.is_file():
        raise TemplateError(f"no builtin template {template_id!r}; have {builtin_template_ids()}")
    return parse_template(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------- rendering


def _title_first(name: str) -> str:
    # "Braund, Mr. Owen Harris" -> "Mr. Owen Harris Braund"
    if "," not in name:
        return name
    surname, rest = name.split(",", 1)
    return f"{rest.strip()} {surname.strip()}"


TRANSFORMS = {"title_first": _title_first}


def format_number(value: float, fmt) -> str:
    """``fmt`` is an int (decimal places), ``"int"`` or ``"auto"``."""
    v = float(value)
    if fmt == "int":
        return str(int(round(v)))
    if fmt == "auto":
        if v.is_integer():
            return str(int(v))
        fmt = RAW_DECIMALS
    return f"{v:.{int(fmt)}f}"


def _format_value(name, value, template, schema_lookup, scaler) -> str:
    if isinstance(value, str):
        text = value
    else:
        if isinstance(value, (bool, np.bool_)):
            value = int(value)
        if scaler is not None:
            text = format_number(scaler.apply(float(value)), template.number_format.get(f"{name}:scaled", SCALED_DECIMALS))
            return text
        if name in template.number_format:
            fmt = template.number_format[name]
        elif template.default_format is not None:
            fmt = template.default_format
        elif schema_lookup is not None and name in schema_lookup:
            fmt = "int" if schema_lookup[name].integer else RAW_DECIMALS
        else:
            fmt = "auto"
        text = format_number(value, fmt)
    if name in template.value_map:
        text = template.value_map[name].get(text, text)
    if name in template.transforms:
        text = TRANSFORMS[template.transforms[name]](text)
    return text


def _resolve_policy(clause: Clause, feature: str, template: SerializationTemplate, plan) -> MissingPolicy:
    override = None
    if plan is not None and getattr(plan, "imputation", None):
        override = plan.imputation.get(feature)
    if override is None:
        return clause.missing
    if isinstance(override, MissingPolicy):
        return override
    if override == "drop":
        return DROP
    if override in ("impute_1", "filler_unrelated"):
        return MissingPolicy("filler_unrelated", template.filler("unrelated", feature))
    if override in ("impute_2", "filler_related"):
        return MissingPolicy("filler_related", template.filler("related", feature))
    raise RenderError(f"unknown imputation override {override!r} for {feature!r}")


def _render_clauses(row, clauses, template, plan, schema_lookup) -> list[tuple[Clause, str]]:
    selected = getattr(plan, "selected_features", None) if plan is not None else None
    scaling = (getattr(plan, "scaling", None) or {}) if plan is not None else {}
    out = []
    for clause in clauses:
        if selected is not None and not clause.requires <= selected:
            continue
        pieces, dropped, filled = [], False, None
        for part in clause.parts:
            if isinstance(part, str):
                pieces.append(part)
                continue
            if part.name not in row:
                raise RenderError(f"placeholder {{{part.name}}} in clause {clause.id!r} is not a feature of this row")
            value = row[part.name]
            if is_missing(value):
                policy = _resolve_policy(clause, part.name, template, plan)
                if policy.kind == "drop":
                    dropped = True
                else:
                    filled = policy.filler
                break
            pieces.append(_format_value(part.name, value, template, schema_lookup, scaling.get(part.name)))
        if dropped:
            continue
        out.append((clause, filled if filled is not None else "".join(pieces)))
    return out


def _assemble(rendered: list[tuple[Clause, str]], sentence_end: str) -> str:
    chunks: list[str] = []
    group, buf = None, []

    def close():
        if buf:
            chunks.append("".join(buf) + sentence_end)

    for clause, text in rendered:
        if clause.sentence is None:
            close()
            group, buf = None, []
            chunks.append(text)
        elif clause.sentence == group and buf:
            buf.append(clause.join + text)
        else:
            close()
            group, buf = clause.sentence, [text]
    close()
    return " ".join(c for c in chunks if c)


def render_row(
    row: Mapping,
    template: SerializationTemplate,
    plan=None,
    *,
    schema: Sequence[FeatureSchema] | None = None,
    index: int = 0,
    label: int | None = None,
    clauses: tuple | None = None,
) -> SerializedExample:
    """Serialize one row.  ``row`` maps feature name to value (or MISSING)."""
    schema_lookup = {f.name: f for f in schema} if schema is not None else None
    if clauses is None:
        clauses = template.bind(list(schema_lookup) if schema_lookup is not None else list(row))
    rendered = _render_clauses(row, clauses, template, plan, schema_lookup)
    text = _assemble(rendered, template.sentence_end)
    return SerializedExample(text, label, index, degenerate=not text)


def render_dataset(ds: TabularDataset, template: SerializationTemplate, plan=None) -> list[SerializedExample]:
    clauses = template.bind(ds.feature_names)
    out = []
    for i in range(ds.n):
        try:
            ex = render_row(ds.row(i), template, plan, schema=ds.schema, index=int(ds.index[i]),
                            label=int(ds.y[i]), clauses=clauses)
        except RenderError as exc:
            raise RenderError(f"row {i}: {exc}") from exc
        if ex.degenerate:
            raise RenderError(f"row {i} rendered to empty text: every clause was dropped")
        out.append(ex)
    return out


def export_jsonl(examples: Sequence[SerializedExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(ex.to_json() + "\n")


def read_jsonl(path) -> list[SerializedExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if line.strip():
                rec = json.loads(line)
                out.append(SerializedExample(rec["text"], rec["label"], i))
    return out
