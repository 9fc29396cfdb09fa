"""In-context evaluation: candidate scoring with verbalizer templates,
greedy translation with exact references, and token-level corpus BLEU.

Candidates are ranked by summed next-token log-likelihood (verbalizers here
are equal-length by construction, so no length normalization is needed);
ties resolve to the lowest index.
"""

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import corpus as C
from .errors import ShapeError, UsageError
from .model import ModelParams, forward
from .rng import stream


@dataclass
class Template:
    k: int
    verbalizer: dict  # label -> candidate token list
    sep: int = C.SEP

    def __post_init__(self):
        if self.k < 0:
            raise UsageError("k must be >= 0")
        rendered = [tuple(v) for v in self.verbalizer.values()]
        if len(set(rendered)) != len(rendered):
            raise UsageError("verbalizer outputs must be distinct")

    @property
    def labels(self) -> list:
        return list(self.verbalizer)

    @property
    def candidates(self) -> list:
        return [list(self.verbalizer[label]) for label in self.labels]


@dataclass
class EvalResult:
    task: str
    n: int
    score: float
    records: list = field(default_factory=list)
    details: dict = field(default_factory=dict)
    flagged: bool = False

    def __post_init__(self):
        if not self.flagged and not 0.0 <= self.score <= 1.0:
            raise UsageError(f"score {self.score} outside [0, 1]")

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "n": self.n,
            "score": self.score,
            "details": self.details,
            "flagged": self.flagged,
            "examples": self.records,
        }


def build_prompt(template: Template, demos, query_input, max_len: int | None = None) -> list[int]:
    """[demo_1 + SEP + ... + demo_k + SEP + query]; demos are (input, label)."""
    if len(demos) != template.k:
        raise UsageError(f"template.k={template.k} but got {len(demos)} demos")
    prompt: list[int] = []
    for demo_input, label in demos:
        prompt += list(demo_input) + list(template.verbalizer[label]) + [template.sep]
    prompt += list(query_input)
    if max_len is not None and len(prompt) > max_len:
        raise ShapeError(f"prompt length {len(prompt)} exceeds {max_len}")
    return prompt


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def candidate_loglik(logits: np.ndarray, prompt_len: int, candidate) -> float:
    """Sum of log P(candidate_i | prefix) from a [seq, vocab] logits matrix
    for the sequence prompt + candidate. Invariant to per-position constant
    logit offsets (softmax shift invariance)."""
    logp = _log_softmax(np.asarray(logits, dtype=np.float64))
    total = 0.0
    for i, tok in enumerate(candidate):
        total += logp[prompt_len - 1 + i, tok]
    return float(total)


def score_candidates(params: ModelParams, prompt, candidates) -> tuple[int, list[float]]:
    """Log-likelihood of each candidate continuation; argmax wins, ties to
    the lowest index."""
    if len(candidates) < 2:
        raise UsageError("need at least 2 candidates")
    limit = params.config.max_seq_len
    scores = []
    for cand in candidates:
        seq = list(prompt) + list(cand)
        if len(seq) > limit:
            raise ShapeError(f"prompt+candidate length {len(seq)} exceeds max_seq_len {limit}")
        res = forward(params, np.asarray([seq]))
        scores.append(candidate_loglik(res.logits.data[0], len(prompt), cand))
    return int(np.argmax(scores)), scores


def greedy_decode(params: ModelParams, prompt, max_new_tokens: int, stop_token: int = C.SEP) -> list[int]:
    """Greedy continuation of prompt; stops on stop_token or after
    max_new_tokens. Returns only the generated tokens (without stop_token)."""
    seq = list(prompt)
    out: list[int] = []
    limit = params.config.max_seq_len
    for _ in range(max_new_tokens):
        if len(seq) >= limit:
            break
        res = forward(params, np.asarray([seq]))
        nxt = int(np.argmax(res.logits.data[0, -1]))
        if nxt == stop_token:
            break
        out.append(nxt)
        seq.append(nxt)
    return out


@dataclass
class PairClassificationTask:
    """Same-concept vs different-concept sentence pairs across two languages.

    Inputs are s (lang_a) + t (lang_b); label "same" iff t carries the same
    concept sequence as s. Verbalized by two reserved tokens.
    """

    family: C.TwinLanguageFamily
    lang_a: str
    lang_b: str
    name: str = "same-concept"

    def verbalizer(self) -> dict:
        return {"same": [C.VERB_SAME], "diff": [C.VERB_DIFF]}

    def make_example(self, rng) -> tuple[list[int], str]:
        s = C.sample_sentence(self.family, self.lang_a, rng)
        if rng.random() < 0.5:
            return s + C.translate(self.family, s, self.lang_a, self.lang_b), "same"
        while True:
            t = C.sample_sentence(self.family, self.lang_b, rng)
            if self.family.parse(t, self.lang_b) != self.family.parse(s, self.lang_a):
                return s + t, "diff"


def classification_eval(
    params: ModelParams,
    task_spec,
    template: Template,
    n: int,
    seed: int,
    scorer=None,
) -> EvalResult:
    """Accuracy over n fresh queries with template.k demonstrations drawn
    from a disjoint stream. `scorer(prompt, candidates) -> (index, loglikes)`
    defaults to model scoring."""
    if n == 0:
        return EvalResult(task=task_spec.name, n=0, score=0.0, flagged=True)
    if scorer is None:
        scorer = lambda prompt, cands: score_candidates(params, prompt, cands)
    demo_rng = stream(seed, "demos")
    query_rng = stream(seed, "queries")
    labels = template.labels
    candidates = template.candidates
    hits = 0
    records = []
    for i in range(n):
        demos = [task_spec.make_example(demo_rng) for _ in range(template.k)]
        query, label = task_spec.make_example(query_rng)
        prompt = [C.BOS] + build_prompt(template, demos, query, max_len=params.config.max_seq_len)
        chosen, scores = scorer(prompt, candidates)
        ok = labels[chosen] == label
        hits += ok
        records.append({"index": i, "label": label, "chosen": int(chosen), "loglik": list(map(float, scores))})
    return EvalResult(task=task_spec.name, n=n, score=hits / n, records=records)


def translation_eval(
    params: ModelParams,
    family: C.TwinLanguageFamily,
    src_lang: str,
    tgt_lang: str,
    n: int,
    max_new_tokens: int,
    k_shot: int = 0,
    seed: int = 0,
    task: str = "copy",
    generate_fn=None,
) -> EvalResult:
    """Greedy translation against the exact translator's references.

    Prompts mirror the instruction-sample layout (task tag, source sentence,
    target-language tag, SEP), with k_shot completed demonstrations in front.
    Scores: exact-match rate (primary) and corpus BLEU.
    """
    if n == 0:
        return EvalResult(task="translation", n=0, score=0.0, flagged=True)
    if generate_fn is None:
        generate_fn = lambda prompt: greedy_decode(params, prompt, max_new_tokens, stop_token=C.SEP)
    rng = stream(seed, "translation")
    task_fn = (lambda toks: list(toks)) if task == "copy" else (lambda toks: list(reversed(toks)))
    hyps, refs, records = [], [], []
    exact = 0
    for i in range(n):
        demo_part: list[int] = []
        for _ in range(k_shot):
            d_src = C.sample_sentence(family, src_lang, rng)
            d_ref = C.translate(family, task_fn(d_src), src_lang, tgt_lang)
            demo_part += C.cif_prompt(family, task, d_src, tgt_lang)[1:] + d_ref + [C.SEP]
        src = C.sample_sentence(family, src_lang, rng)
        ref = C.translate(family, task_fn(src), src_lang, tgt_lang)
        prompt = [C.BOS] + demo_part + C.cif_prompt(family, task, src, tgt_lang)[1:]
        hyp = list(generate_fn(prompt))
        hyps.append(hyp)
        refs.append(ref)
        ok = hyp == ref
        exact += ok
        records.append({"index": i, "src": src, "ref": ref, "hyp": hyp, "exact": bool(ok)})
    score = exact / n
    return EvalResult(
        task="translation",
        n=n,
        score=score,
        records=records,
        details={"exact_match": score, "bleu": bleu(hyps, refs)},
    )


def _ngram_counts(tokens, order: int) -> Counter:
    return Counter(tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1))


def bleu(hypotheses, references) -> float:
    """Corpus BLEU in [0, 1] over token lists, one reference per hypothesis.

    Modified n-gram precision with clipping, n up to min(4, shortest
    reference); brevity penalty exp(1 - r/c) when c < r; plain geometric
    mean, so any zero precision zeroes the score.
    """
    if len(hypotheses) == 0:
        raise UsageError("bleu: empty corpus")
    if len(hypotheses) != len(references):
        raise UsageError(f"bleu: {len(hypotheses)} hypotheses vs {len(references)} references")
    max_order = min(4, min(len(r) for r in references))
    if max_order == 0:
        raise UsageError("bleu: empty reference")
    c = sum(len(h) for h in hypotheses)
    r = sum(len(rf) for rf in references)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for order in range(1, max_order + 1):
        matched, total = 0, 0
        for hyp, ref in zip(hypotheses, references):
            hc = _ngram_counts(hyp, order)
            rc = _ngram_counts(ref, order)
            matched += sum(min(count, rc[g]) for g, count in hc.items())
            total += max(len(hyp) - order + 1, 0)
        if total == 0 or matched == 0:
            return 0.0
        log_sum += math.log(matched / total) / max_order
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)
