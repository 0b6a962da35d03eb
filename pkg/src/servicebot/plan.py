"""Instruction-to-plan pipeline.

A plan is a tiny JSON dialect: an object carrying free-text reasoning and a
list of actions restricted to two shapes, pick-then-place and
pick-then-handover. The dialect is fixed by an explicit grammar (strict key
order, no extra keys, closed vocabulary), so anything that parses is
directly executable.

Two front ends produce plans: a deterministic rule-based parser for
structured phrasings, and an adapter that asks a remote text-completion
endpoint and accepts only grammar-valid output (validate-and-retry).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import requests

LOCATIONS = ("table", "dishwasher", "cabinet")


# -- vocabulary ---------------------------------------------------------------

@dataclass
class Vocabulary:
    """Canonical labels plus synonym tables, all lowercase."""

    objects: dict[str, list[str]]
    locations: dict[str, list[str]]
    verbs: dict[str, list[str]]
    person_words: list[str]

    def __post_init__(self):
        if set(self.locations) != set(LOCATIONS):
            raise ValueError(f"locations must be exactly {LOCATIONS}")
        self._canon: dict[str, tuple[str, str]] = {}
        for label, syns in self.objects.items():
            for word in [label, *syns]:
                self._canon[word.lower()] = ("object", label)
        for label, syns in self.locations.items():
            for word in [label, *syns]:
                self._canon[word.lower()] = ("location", label)
        for label, syns in self.verbs.items():
            for word in [label, *syns]:
                self._canon[word.lower()] = ("verb", label)
        for word in self.person_words:
            self._canon[word.lower()] = ("person", "person")

    def lookup(self, word: str):
        return self._canon.get(word.lower())

    def object_labels(self) -> list[str]:
        return sorted(self.objects)


def load_vocabulary(text: str) -> Vocabulary:
    doc = json.loads(text)
    return Vocabulary(doc["objects"], doc["locations"], doc["verbs"],
                      doc.get("person", []))


# -- plan values --------------------------------------------------------------

@dataclass(frozen=True)
class Pick:
    object: str
    location: str
    type: str = field(default="pick", init=False)


@dataclass(frozen=True)
class Place:
    location: str
    type: str = field(default="place", init=False)


@dataclass(frozen=True)
class Handover:
    type: str = field(default="handover", init=False)


Action = Pick | Place | Handover


@dataclass
class Plan:
    chain_of_thought: str
    actions: list[Action]

    def pattern_ok(self) -> bool:
        """Exactly pick-then-place or pick-then-handover."""
        if len(self.actions) != 2 or not isinstance(self.actions[0], Pick):
            return False
        return isinstance(self.actions[1], (Place, Handover))


def serialize_plan(plan: Plan) -> str:
    """Canonical text form; parse(serialize(p)) == p."""
    actions = []
    for a in plan.actions:
        if isinstance(a, Pick):
            actions.append({"type": "pick", "object": a.object, "location": a.location})
        elif isinstance(a, Place):
            actions.append({"type": "place", "location": a.location})
        else:
            actions.append({"type": "handover"})
    return json.dumps({"chain_of_thought": plan.chain_of_thought,
                       "actions": actions})


# -- errors -------------------------------------------------------------------

class PlanError(Exception):
    """Base for everything the pipeline can reject."""

    def __init__(self, message: str, position: int = -1,
                 expected: tuple[str, ...] = ()):
        text = message if position < 0 else f"{message} at offset {position}"
        if expected:
            text += f" (expected {' | '.join(expected)})"
        super().__init__(text)
        self.position = position
        self.expected = expected


class PlanLexicalError(PlanError):
    pass


class PlanStructuralError(PlanError):
    pass


class PlanVocabularyError(PlanError):
    pass


class PlanPatternError(PlanError):
    pass


# -- grammar ------------------------------------------------------------------

@dataclass
class PlanGrammar:
    """The dialect's production set over a closed vocabulary."""

    vocabulary: Vocabulary
    start: str = "plan"

    def ebnf(self) -> str:
        objects = " | ".join(f'"\\"{o}\\""' for o in self.vocabulary.object_labels())
        return "\n".join([
            "plan      := '{' cot ',' actions '}' ;",
            "cot       := '\"chain_of_thought\"' ':' string ;",
            "actions   := '\"actions\"' ':' '[' action (',' action)* ']' ;",
            "action    := pick | place | handover ;",
            "pick      := '{' '\"type\"' ':' '\"pick\"' ',' '\"object\"' ':' objlabel ','"
            " '\"location\"' ':' loc '}' ;",
            "place     := '{' '\"type\"' ':' '\"place\"' ',' '\"location\"' ':' loc '}' ;",
            "handover  := '{' '\"type\"' ':' '\"handover\"' '}' ;",
            "loc       := '\"table\"' | '\"dishwasher\"' | '\"cabinet\"' ;",
            f"objlabel  := {objects} ;",
            "string    := JSON string ;",
        ])


_PUNCT = set("{}[]:,")

_ESCAPES = {'"': '"', "\\": "\\", "/": "/", "b": "\b", "f": "\f",
            "n": "\n", "r": "\r", "t": "\t"}


def _tokenize(text: str):
    """JSON-subset lexer: punctuation and strings only."""
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in " \t\r\n":
            i += 1
            continue
        if c in _PUNCT:
            tokens.append((c, c, i))
            i += 1
            continue
        if c == '"':
            start = i
            i += 1
            out = []
            while True:
                if i >= n:
                    raise PlanLexicalError("unterminated string", start)
                c = text[i]
                if c == '"':
                    i += 1
                    break
                if c == "\\":
                    if i + 1 >= n:
                        raise PlanLexicalError("unterminated escape", i)
                    nxt = text[i + 1]
                    if nxt == "u":
                        if i + 6 > n or not re.fullmatch(r"[0-9a-fA-F]{4}",
                                                         text[i + 2:i + 6]):
                            raise PlanLexicalError("invalid unicode escape", i)
                        out.append(chr(int(text[i + 2:i + 6], 16)))
                        i += 6
                        continue
                    if nxt not in _ESCAPES:
                        raise PlanLexicalError(f"invalid escape '\\{nxt}'", i)
                    out.append(_ESCAPES[nxt])
                    i += 2
                    continue
                if ord(c) < 0x20:
                    raise PlanLexicalError("control character in string", i)
                out.append(c)
                i += 1
            tokens.append(("string", "".join(out), start))
            continue
        raise PlanLexicalError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens, vocabulary: Vocabulary):
        self.tokens = tokens
        self.vocab = vocabulary
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind: str, expected: tuple[str, ...] = ()):
        tok = self.tokens[self.pos]
        if tok[0] != kind:
            raise PlanStructuralError(f"unexpected {tok[0]} {tok[1]!r}", tok[2],
                                      expected or (kind,))
        self.pos += 1
        return tok

    def key(self, name: str):
        tok = self.take("string", (f'"{name}"',))
        if tok[1] != name:
            raise PlanStructuralError(f"unexpected key {tok[1]!r}", tok[2],
                                      (f'"{name}"',))
        self.take(":", (":",))

    def plan(self) -> dict:
        self.take("{", ("{",))
        self.key("chain_of_thought")
        cot = self.take("string", ("string",))[1]
        self.take(",", (",",))
        self.key("actions")
        self.take("[", ("[",))
        actions = [self.action()]
        while self.peek()[0] == ",":
            self.take(",")
            actions.append(self.action())
        self.take("]", ("]", ","))
        self.take("}", ("}",))
        self.take("end", ("end of input",))
        return {"chain_of_thought": cot, "actions": actions}

    def action(self) -> dict:
        self.take("{", ("{",))
        self.key("type")
        tok = self.take("string", ('"pick"', '"place"', '"handover"'))
        kind = tok[1]
        if kind == "pick":
            self.take(",", (",",))
            self.key("object")
            obj = self.take("string", ("object label",))
            if obj[1] not in self.vocab.objects:
                raise PlanVocabularyError(f"unknown object {obj[1]!r}", obj[2],
                                          tuple(self.vocab.object_labels()))
            self.take(",", (",",))
            self.key("location")
            loc = self.location()
            self.take("}", ("}",))
            return {"type": "pick", "object": obj[1], "location": loc}
        if kind == "place":
            self.take(",", (",",))
            self.key("location")
            loc = self.location()
            self.take("}", ("}",))
            return {"type": "place", "location": loc}
        if kind == "handover":
            self.take("}", ("}",))
            return {"type": "handover"}
        raise PlanStructuralError(f"unknown action type {kind!r}", tok[2],
                                  ('"pick"', '"place"', '"handover"'))

    def location(self) -> str:
        tok = self.take("string", tuple(f'"{l}"' for l in LOCATIONS))
        if tok[1] not in LOCATIONS:
            raise PlanVocabularyError(f"unknown location {tok[1]!r}", tok[2],
                                      tuple(f'"{l}"' for l in LOCATIONS))
        return tok[1]


def validate_plan_text(text: str, vocabulary: Vocabulary) -> dict:
    """Accept iff the text derives from the plan grammar; returns the tree.

    Raises PlanLexicalError, PlanStructuralError or PlanVocabularyError with
    the offending offset and the terminals that would have been accepted.
    """
    return _Parser(_tokenize(text), vocabulary).plan()


def parse_plan(text: str, vocabulary: Vocabulary) -> Plan:
    """Grammar-validate, then type the tree; enforces the two action shapes."""
    tree = validate_plan_text(text, vocabulary)
    actions: list[Action] = []
    for node in tree["actions"]:
        if node["type"] == "pick":
            actions.append(Pick(node["object"], node["location"]))
        elif node["type"] == "place":
            actions.append(Place(node["location"]))
        else:
            actions.append(Handover())
    plan = Plan(tree["chain_of_thought"], actions)
    if not plan.pattern_ok():
        kinds = [a.type for a in actions]
        raise PlanPatternError(
            f"action sequence {kinds} is neither pick,place nor pick,handover")
    return plan


# -- deterministic rule-based instruction parser -------------------------------

_SOURCE_MARKERS = ("from",)
_DEST_MARKERS = ("to", "in", "into", "on", "onto", "at", "inside")


def rule_parse(instruction: str, vocabulary: Vocabulary) -> Plan | None:
    """Slot extraction over the synonym tables; None when slots are missing.

    Recognized shapes: a take-style verb with an object and a 'from'
    location, followed by either a put-style verb with a second location or
    a delivery verb / person word.
    """
    words = re.findall(r"[a-z']+", instruction.lower())
    hits = []
    for i, w in enumerate(words):
        found = vocabulary.lookup(w)
        if found:
            hits.append((i, found[0], found[1], w))

    obj = next((h for h in hits if h[1] == "object"), None)
    verbs = [h for h in hits if h[1] == "verb"]
    locations = [h for h in hits if h[1] == "location"]
    person = next((h for h in hits if h[1] == "person"), None)

    def marked(markers, loc_hit):
        i = loc_hit[0]
        return any(words[j] in markers for j in range(max(0, i - 3), i))

    source = next((l for l in locations if marked(_SOURCE_MARKERS, l)), None)
    dest = next((l for l in locations if l is not source
                 and marked(_DEST_MARKERS, l)), None)

    handover_verb = next((v for v in verbs if v[2] == "handover"), None)
    wants_handover = handover_verb is not None and dest is None
    if person is not None and dest is None:
        wants_handover = True

    if obj is None or source is None:
        return None
    if not verbs:
        return None
    if dest is None and not wants_handover:
        return None

    matched = [f"{h[3]}->{h[1]}:{h[2]}" for h in hits]
    if wants_handover:
        trace = (f"Matched tokens [{', '.join(matched)}]: take '{obj[2]}' from "
                 f"'{source[2]}', then deliver it to the person.")
        plan = Plan(trace, [Pick(obj[2], source[2]), Handover()])
    else:
        trace = (f"Matched tokens [{', '.join(matched)}]: take '{obj[2]}' from "
                 f"'{source[2]}', then put it at '{dest[2]}'.")
        plan = Plan(trace, [Pick(obj[2], source[2]), Place(dest[2])])
    return plan


# -- prompt assembly ------------------------------------------------------------

@dataclass
class PromptBundle:
    system: str
    examples: list[tuple[str, str]]      # (instruction, plan text)

    def validate(self, vocabulary: Vocabulary) -> None:
        if len(self.examples) != 5:
            raise PlanError(f"prompt bundle needs exactly 5 examples, "
                            f"got {len(self.examples)}")
        for _, plan_text in self.examples:
            parse_plan(plan_text, vocabulary)


def load_prompt_bundle(text: str, vocabulary: Vocabulary) -> PromptBundle:
    doc = json.loads(text)
    bundle = PromptBundle(doc["system"],
                          [(e["instruction"], json.dumps(e["plan"]))
                           for e in doc["examples"]])
    bundle.validate(vocabulary)
    return bundle


def build_prompt(bundle: PromptBundle, instruction: str,
                 vocabulary: Vocabulary | None = None) -> str:
    """Byte-stable concatenation: system text, the examples, the instruction."""
    if len(bundle.examples) != 5:
        raise PlanError(f"prompt bundle needs exactly 5 examples, "
                        f"got {len(bundle.examples)}")
    if not instruction.strip():
        raise PlanError("instruction is empty")
    parts = [bundle.system.rstrip("\n"), ""]
    for i, (ins, plan_text) in enumerate(bundle.examples, 1):
        parts += [f"Example {i}:", f"Instruction: {ins}", f"Plan: {plan_text}", ""]
    parts += [f"Instruction: {instruction.strip()}", "Plan:"]
    return "\n".join(parts)


# -- remote completion adapter ---------------------------------------------------

@dataclass
class LlmEndpoint:
    url: str
    timeout_s: float = 30.0
    retries: int = 2
    max_tokens: int = 512


class LlmNetworkError(PlanError):
    pass


class LlmRejectionError(PlanError):
    """Endpoint kept answering outside the grammar."""


def llm_request(endpoint: LlmEndpoint, prompt: str,
                vocabulary: Vocabulary) -> Plan:
    """POST the prompt, grammar-gate the completion, retry on rejection.

    The retry loop enforces at the client what a constrained decoder would
    enforce at the server: only grammar-valid plans come back.
    """
    failures = []
    for _ in range(endpoint.retries + 1):
        try:
            resp = requests.post(endpoint.url,
                                 json={"prompt": prompt,
                                       "max_tokens": endpoint.max_tokens},
                                 timeout=endpoint.timeout_s)
            resp.raise_for_status()
        except requests.RequestException as e:
            raise LlmNetworkError(f"completion endpoint failed: {e}") from e
        try:
            return parse_plan(resp.text.strip(), vocabulary)
        except PlanError as e:
            failures.append(str(e))
    raise LlmRejectionError(
        f"no grammar-valid plan after {endpoint.retries + 1} attempts: "
        f"{'; '.join(failures)}")


# -- random plan texts for property tests ----------------------------------------

def generate_plan_text(rng, vocabulary: Vocabulary, *,
                       valid_pattern: bool = True) -> str:
    """Sample a grammar-derivable plan text (optionally pattern-violating)."""
    objects = vocabulary.object_labels()

    def pick():
        return {"type": "pick", "object": objects[rng.integers(len(objects))],
                "location": LOCATIONS[rng.integers(3)]}

    def place():
        return {"type": "place", "location": LOCATIONS[rng.integers(3)]}

    def handover():
        return {"type": "handover"}

    if valid_pattern:
        actions = [pick(), place() if rng.random() < 0.5 else handover()]
    else:
        makers = [pick, place, handover]
        actions = [makers[rng.integers(3)]() for _ in range(rng.integers(1, 5))]
    cot_chars = list(" abcdefghijklmnopqrstuvwxyz\"\\/\n\t{}[]:,0123456789")
    cot = "".join(cot_chars[rng.integers(len(cot_chars))]
                  for _ in range(rng.integers(0, 40)))
    return json.dumps({"chain_of_thought": cot, "actions": actions})
