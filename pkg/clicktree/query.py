"""Lucene-style queries over the run registry.

``command:simulate AND seed:[1 TO 10]`` is parsed with luqum and translated into a SQL
``WHERE`` clause: words match by ``LIKE`` on text columns and by equality otherwise,
phrases by equality, ``*`` selects non-null columns, ranges and ``>``/``<`` bounds compare.
Terms without a field are matched against every column. Juxtaposed terms are OR-ed.
"""

import contextlib
from collections.abc import Callable, Iterator, Sequence
from functools import cached_property
from types import MappingProxyType
from typing import Annotated, Any

from luqum.exceptions import ParseError
from luqum.thread import parse
from luqum.tree import (
    AndOperation,
    FieldGroup,
    From,
    Group,
    Item,
    Not,
    OrOperation,
    Phrase,
    Plus,
    Prohibit,
    Range,
    SearchField,
    To,
    UnknownOperation,
    Word,
)
from pydantic import TypeAdapter
from pydantic.fields import FieldInfo
from sqlalchemy.orm.attributes import InstrumentedAttribute
from sqlalchemy.sql._typing import _ColumnExpressionArgument
from sqlmodel import SQLModel, and_, not_, or_, select
from sqlmodel.sql.expression import SelectOfScalar

from .exceptions import IllegalFieldError, IllegalQueryError
from .utils import dequote

Expression = _ColumnExpressionArgument[bool]


class LikeWord:
    # Lucene ? and * map to SQL LIKE _ and %
    WILDCARD_MAPPING = MappingProxyType({"?": "_", "*": "%"})

    def __init__(self, value: str):
        self.value = value

    @property
    def has_wildcard(self) -> bool:
        return any(wildcard in self.value for wildcard in self.WILDCARD_MAPPING)

    def __str__(self):
        if not self.has_wildcard:
            return f"%{self.value}%"

        value = self.value
        for lucene, sql in self.WILDCARD_MAPPING.items():
            value = value.replace(lucene, sql)

        return value


class ModelField:
    def __init__(self, model: type[SQLModel], name: str):
        if name not in model.model_fields:
            raise IllegalFieldError(f"{model.__name__} does not have field:{name}")

        self.model = model
        self.name = name

    @property
    def column(self) -> InstrumentedAttribute:
        return getattr(self.model, self.name)

    @cached_property
    def field_info(self) -> FieldInfo:
        return self.model.model_fields[self.name]

    @cached_property
    def type_adapter(self) -> TypeAdapter[Any]:
        return TypeAdapter(Annotated[self.field_info.annotation, self.field_info])  # type: ignore

    def cast(self, obj: Any) -> Any:
        try:
            return self.type_adapter.validate_python(obj)
        except ValueError as e:
            raise IllegalQueryError(f"{obj!r} is not a valid value for {self.name}") from e

    def word(self, value: str) -> Expression:
        if value == "*":
            return self.column.isnot(None)

        if LikeWord(value).has_wildcard:
            return self.column.like(str(LikeWord(value)))

        casted = self.cast(value)
        if isinstance(casted, str):
            return self.column.like(str(LikeWord(casted)))

        return self.column == casted

    def phrase(self, value: str) -> Expression:
        return self.column == self.cast(dequote(value))

    def lower(self, value: str, *, include: bool) -> Expression | None:
        if value == "*":
            return None

        casted = self.cast(value)
        return self.column >= casted if include else self.column > casted

    def upper(self, value: str, *, include: bool) -> Expression | None:
        if value == "*":
            return None

        casted = self.cast(value)
        return self.column <= casted if include else self.column < casted


class QueryTranslator:
    def __init__(self, model: type[SQLModel], *, default_fields: Sequence[str] | None = None):
        self.model = model
        self.default_fields = tuple(default_fields or model.model_fields)

    def field(self, name: str) -> ModelField:
        return ModelField(self.model, name)

    def _combine(self, nodes: Sequence[Item], field: str | None, combinator: Callable[..., Expression]) -> Expression:
        return combinator(*(self.translate(child, field=field) for child in nodes))

    def _default_fields(self, term: Item) -> Iterator[Expression]:
        for name in self.default_fields:
            with contextlib.suppress(IllegalQueryError):
                yield self._field_term(self.field(name), term)

    def _field_term(self, field: ModelField, term: Item) -> Expression:
        match term:
            case Phrase():
                return field.phrase(term.value)
            case Word():
                return field.word(term.value)
            case Range():
                bounds = [
                    field.lower(term.low.value, include=term.include_low),
                    field.upper(term.high.value, include=term.include_high),
                ]
                return and_(*(bound for bound in bounds if bound is not None))
            case From():
                bound = field.lower(term.children[0].value, include=term.include)
                return field.column.isnot(None) if bound is None else bound
            case To():
                bound = field.upper(term.children[0].value, include=term.include)
                return field.column.isnot(None) if bound is None else bound
            case unknown:
                raise IllegalQueryError(f"{unknown.__class__.__name__} is not supported yet")

    def translate(self, node: Item, *, field: str | None = None) -> Expression:
        match node:
            case SearchField():
                return self.translate(node.children[0], field=node.name)
            case FieldGroup() | Group() | Plus():
                return self.translate(node.children[0], field=field)
            case Not() | Prohibit():
                return not_(self.translate(node.children[0], field=field))
            case AndOperation():
                return self._combine(node.children, field, and_)
            case OrOperation() | UnknownOperation():
                return self._combine(node.children, field, or_)
            case Word() | Phrase() | Range() | From() | To():
                if field is not None:
                    return self._field_term(self.field(field), node)

                expressions = list(self._default_fields(node))
                if not expressions:
                    raise IllegalQueryError(f"{node} matches no field of {self.model.__name__}")
                return or_(*expressions)
            case unknown:
                raise IllegalQueryError(f"{unknown.__class__.__name__} is not supported yet")

    def __call__(self, tree: Item) -> Expression:
        return self.translate(tree)


def q_to_select(
    q: str,
    model: type[SQLModel],
    *,
    default_fields: Sequence[str] | None = None,
    parser: Callable[[str], Item] = parse,
) -> SelectOfScalar:
    """Translate a Lucene-style query into a select statement over a SQLModel table.

    Args:
        q: Query string. An empty query selects every row.
        model: Table model the query fields refer to.
        default_fields: Fields searched by terms without a field name.
        parser: Query parser, luqum's thread-safe parser by default.

    Returns:
        SelectOfScalar: Select statement filtered by the query.

    Raises:
        IllegalQueryError: The query cannot be parsed or a value does not fit its field.
        IllegalFieldError: The query names a field the model does not have.
    """
    statement = select(model)
    if not q.strip():
        return statement

    try:
        tree = parser(q)
    except ParseError as e:
        raise IllegalQueryError(f"cannot parse query {q!r}: {e}") from e

    return statement.where(QueryTranslator(model, default_fields=default_fields)(tree))
