import json
import math
import threading

import httpx
import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid as scipy_trapezoid

from selective_eval.confidence import AnnotatorSimulation, ShotPlan, build_shot_plan
from selective_eval.core import agreement_density
from selective_eval.errors import (
    CacheMissError,
    ConfigError,
    DigestMismatchError,
    ResponseFormatError,
    SchemaError,
    TransportError,
)
from selective_eval.judges import (
    CachedJudge,
    JudgeKind,
    JudgeSpec,
    PredictionCache,
    SyntheticJudge,
    check_cost_order,
    generate_world,
    human_accuracy,
    judge,
    write_cache,
)
from selective_eval.judges.prompts import messages, render_prompt
from selective_eval.judges.remote import RemoteJudge, distribution_from_logprobs, verdict_from_text

from _support import A, B, TIE, inst

ZERO = ShotPlan.zero_shot()


def synth(skill=1.0, noise=0.5, jid="s"):
    return JudgeSpec(jid, JudgeKind.SYNTHETIC, 1.0, {"skill": skill, "noise": noise})


def world_inst(iid="x", latent="A", d=0.0, seed=0):
    return inst(iid, (A,), latent=latent, difficulty=d, world_seed=seed)


def plan_n(n):
    return build_shot_plan([inst(f"p{i}", (A,) * n) for i in range(3)], "individual", 1, n, seed=0)


# -- synthetic -----------------------------------------------------------------


def test_saturated_judge_is_certain():
    s = judge(synth(skill=1e6, noise=0.0), world_inst(latent="B", d=0.0), plan_n(4))
    assert s.labels == (A, B)
    assert np.array_equal(s.rows, np.tile([0.0, 1.0], (4, 1)))


def test_zero_skill_judge_is_uniform():
    s = judge(synth(skill=0.0, noise=0.0), world_inst(d=0.3), plan_n(3))
    assert np.array_equal(s.rows, np.full((3, 2), 0.5))


def test_synthetic_rows_reproducible_and_keyed():
    x = world_inst(d=0.4, seed=3)
    p = plan_n(5)
    a = judge(synth(), x, p).rows
    assert np.array_equal(a, judge(synth(), x, p).rows)
    assert not np.array_equal(a, judge(synth(jid="other"), x, p).rows)
    assert not np.array_equal(a, judge(synth(), world_inst("y", d=0.4, seed=3), p).rows)
    assert not np.array_equal(a, judge(synth(), world_inst(d=0.4, seed=4), p).rows)
    # row j depends only on j, not on N
    assert np.array_equal(judge(synth(), x, plan_n(2)).rows, a[:2])


def test_synthetic_needs_world_meta():
    from selective_eval.errors import DomainError

    with pytest.raises(DomainError):
        judge(synth(), inst("plain"), ZERO)


def _row_accuracy(skill, difficulties):
    b = SyntheticJudge(synth(skill=skill))
    hits = 0
    for i, d in enumerate(difficulties):
        x = world_inst(f"i{i}", d=float(d))
        hits += b.simulate(x, ZERO).rows[0, 0] > 0.5
    return hits / len(difficulties)


def test_correctness_nondecreasing_in_skill():
    rng = np.random.default_rng(0)
    # averaged over the default world's difficulty distribution
    ds = rng.uniform(0, 0.85, 10_000)
    accs = [_row_accuracy(s, ds) for s in (0.5, 1.0, 2.0, 4.0)]
    assert all(b >= a - 0.01 for a, b in zip(accs, accs[1:]))
    # and at every fixed difficulty below one half
    for d in (0.1, 0.3, 0.45):
        fixed = [_row_accuracy(s, np.full(2_000, d)) for s in (1.0, 2.0, 4.0)]
        assert all(b >= a - 0.01 for a, b in zip(fixed, fixed[1:]))


def test_world_boundaries():
    assert human_accuracy(0.0) == 1.0 and human_accuracy(1.0) == 0.5
    ds, world = generate_world(400, 5, seed=1, max_difficulty=0.0)
    assert all(i.annotations == (A,) * 5 or i.annotations == (B,) * 5 for i in ds)
    assert all(i.annotations[0].value == i.meta["latent"] for i in ds)
    ds, _ = generate_world(4000, 1, seed=2, max_difficulty=1.0)
    # with d uniform on [0, 1] a single vote matches the latent label with probability 3/4
    hit = np.mean([i.annotations[0].value == i.meta["latent"] for i in ds])
    assert hit == pytest.approx(0.75, abs=0.02)


def test_coin_flip_votes_at_full_difficulty():
    ds, world = generate_world(3000, 5, seed=4, max_difficulty=1.0)
    hard = [i for i, d in zip(ds, world.difficulty) if d > 0.98]
    votes = [v.value == i.meta["latent"] for i in hard for v in i.annotations]
    assert abs(np.mean(votes) - 0.5) < 0.08


def expected_density(annotators, d_max, grid=20_001):
    """E[plurality share of A votes] for d ~ U(0, d_max), by trapezoidal integration."""
    d = np.linspace(0, d_max, grid)
    h = 1 - d / 2
    x = np.arange(annotators + 1)
    share = np.maximum(x, annotators - x) / annotators
    pmf = stats.binom.pmf(x[None, :], annotators, h[:, None])
    return scipy_trapezoid(pmf @ share, d) / d_max if d_max > 0 else 1.0


@pytest.mark.parametrize("d_max", [1.0, 0.85])
def test_mean_density_matches_integration(d_max):
    from selective_eval.core import majority_label

    ds, _ = generate_world(1000, 5, seed=7, max_difficulty=d_max)
    mean = np.mean([agreement_density(majority_label(i.annotations)) for i in ds])
    assert mean == pytest.approx(expected_density(5, d_max), abs=0.02)


def test_world_determinism_and_validation():
    a, _ = generate_world(50, 3, seed=9, n_models=4)
    b, _ = generate_world(50, 3, seed=9, n_models=4)
    assert a.instances == b.instances
    assert all(i.meta["model_a"] != i.meta["model_b"] for i in a)
    for bad in ({"annotators": 4}, {"size": 0}, {"n_models": 1}):
        kw = {"size": 10, "annotators": 5, **bad}
        with pytest.raises(ConfigError):
            generate_world(kw.pop("size"), kw.pop("annotators"), 0, **kw)


def test_cost_order_check():
    specs = [JudgeSpec("a", JudgeKind.SYNTHETIC, 2.0), JudgeSpec("b", JudgeKind.SYNTHETIC, 1.0)]
    with pytest.raises(ConfigError):
        check_cost_order(specs)
    check_cost_order(specs[::-1])


def test_spec_roundtrip_and_errors():
    s = JudgeSpec("r", JudgeKind.REMOTE, 3.0, {"endpoint": "http://x", "model": "m"})
    assert JudgeSpec.from_json(s.to_json()) == s
    for bad in ({"id": "x"}, {"id": "x", "kind": "nope"}, {"id": "x", "kind": "synthetic", "cost_weight": -1}):
        with pytest.raises(ConfigError):
            JudgeSpec.from_json(bad)


# -- cached ------------------------------------------------------------------------


def two_row_cache(tmp_path, plan):
    p = tmp_path / "c.jsonl"
    rows = [
        {"header": True, "shot_plan_digest": plan.digest()},
        {"instance_id": "x", "judge_id": "c", "annotator": 0, "p": {"A": 0.7, "B": 0.3}},
        {"instance_id": "x", "judge_id": "c", "annotator": 1, "p": {"B": 0.125, "A": 0.875}},
    ]
    p.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return p


def cached(path, jid="c"):
    return CachedJudge(JudgeSpec(jid, JudgeKind.CACHED, 1.0, {"path": str(path)}))


def test_cached_rows_verbatim(tmp_path):
    plan = plan_n(2)
    s = cached(two_row_cache(tmp_path, plan)).simulate(inst("x"), plan)
    assert s.labels == (A, B)
    assert s.rows.tolist() == [[0.7, 0.3], [0.875, 0.125]]


def test_cache_miss_lists_keys(tmp_path):
    plan = plan_n(3)
    path = tmp_path / "c.jsonl"
    write_cache(path, plan, [AnnotatorSimulation("x", "c", (A, B), np.array([[0.5, 0.5]] * 3))])
    j = cached(path)
    with pytest.raises(CacheMissError) as e:
        j.require([inst("x"), inst("y")], plan)
    assert e.value.missing == [("y", "c", 0), ("y", "c", 1), ("y", "c", 2)]
    assert "(y, c, 0)" in str(e.value)


def test_cache_digest_mismatch(tmp_path):
    path = two_row_cache(tmp_path, plan_n(2))
    other = build_shot_plan([inst(f"q{i}", (B,) * 2) for i in range(3)], "individual", 1, 2, seed=0)
    with pytest.raises(DigestMismatchError):
        cached(path).simulate(inst("x"), other)


@pytest.mark.parametrize(
    "lines, needle",
    [
        (['{"instance_id": "x"}'], ":1:"),
        (['{"header": true, "shot_plan_digest": "d"}', '{"instance_id": "x", "judge_id": "c", "p": {}}'], ":2:"),
        (['{"header": true, "shot_plan_digest": "d"}', "nope"], ":2:"),
        ([], "no header"),
    ],
)
def test_cache_schema_errors(tmp_path, lines, needle):
    p = tmp_path / "bad.jsonl"
    p.write_text("".join(l + "\n" for l in lines))
    with pytest.raises(SchemaError, match=needle):
        PredictionCache.load(p)


def test_cache_write_roundtrip(tmp_path):
    plan = plan_n(2)
    sims = [SyntheticJudge(synth(jid="c")).simulate(world_inst(f"w{i}", d=0.2 * i), plan) for i in range(3)]
    write_cache(tmp_path / "c.jsonl", plan, sims)
    j = cached(tmp_path / "c.jsonl")
    for s in sims:
        assert np.array_equal(j.simulate(inst(s.instance_id), plan).rows, s.rows)


def test_missing_cache_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        cached(tmp_path / "absent.jsonl")


# -- prompts ---------------------------------------------------------------------


def test_prompt_layout():
    shots = build_shot_plan([inst("s1", (B,)), inst("s2", (A,))], "individual", 2, 1, seed=0).shots[0]
    text = render_prompt(inst("x"), shots)
    assert text.endswith('Verdict (either "[[A]]" or "[[B]]"):')
    assert text.index("q s1") < text.index("q x") and text.index("q s2") < text.index("q x")
    assert "[Question]\nq x\n\n[Assistant A's response]\na x\n\n[Assistant B's response]\nb x" in text
    for s in shots:
        assert f"[Verdict]:\n[[{s.label.value}]]" in text
    msgs = messages(inst("x"), shots, "summarization", allow_tie=True)
    assert msgs[0]["role"] == "system" and msgs[1]["role"] == "user"
    assert "[Document]\nq x" in msgs[1]["content"] and "[[tie]]" in msgs[1]["content"]
    with pytest.raises(ValueError):
        render_prompt(inst("x"), shots, "poetry")


# -- remote ------------------------------------------------------------------------


def lp(token, logprob, alts=()):
    return {"token": token, "logprob": logprob, "top_logprobs": [{"token": t, "logprob": l} for t, l in alts]}


def logprob_response(pa):
    alts = [("A", math.log(pa)), ("B", math.log(1 - pa)), ("C", math.log(1e-3))]
    content = [lp("Verdict", -0.1), lp(": [[", -0.01), lp("A" if pa >= 0.5 else "B", max(alts[:2])[1], alts), lp("]]", -0.01)]
    return {"choices": [{"message": {"content": "[[A]]"}, "logprobs": {"content": content}}]}


def remote(handler, samples=5, retries=3, **params):
    spec = JudgeSpec("r", JudgeKind.REMOTE, 1.0, {"endpoint": "http://judge.test/v1/chat/completions", "model": "m",
                                                 "samples": samples, "retries": retries, **params})
    client = httpx.Client(transport=httpx.MockTransport(handler))
    sleeps = []
    return RemoteJudge(spec, client=client, sleep=sleeps.append), sleeps


def test_logprob_distribution_normalized_over_verdicts():
    def handler(req):
        body = json.loads(req.content)
        assert body["model"] == "m" and body["logprobs"] is True and body["temperature"] == 0.0
        last = body["messages"][1]["content"].split("[Question]")[-1]
        return httpx.Response(200, json=logprob_response(0.8 if "q x" in last else 0.3))

    j, _ = remote(handler)
    s = j.simulate_many([inst("x"), inst("y")], plan_n(2))
    assert s[0].rows == pytest.approx(np.array([[0.8, 0.2]] * 2))
    assert s[1].rows == pytest.approx(np.array([[0.3, 0.7]] * 2))


def test_api_key_header(monkeypatch):
    monkeypatch.setenv("JUDGE_API_KEY", "sekrit")
    seen = []

    def handler(req):
        seen.append(req.headers.get("authorization"))
        return httpx.Response(200, json=logprob_response(0.6))

    remote(handler)[0].simulate(inst("x"), ZERO)
    assert seen == ["Bearer sekrit"]


def test_tie_token_when_enabled():
    alts = [("A", math.log(0.5)), ("B", math.log(0.2)), ("tie", math.log(0.3))]
    content = [lp("[[", -0.1), lp("A", math.log(0.5), alts)]
    dist = distribution_from_logprobs(content, (A, B, TIE))
    assert dist[A] == pytest.approx(0.5) and dist[TIE] == pytest.approx(0.3)


def test_sampling_fallback_without_logprobs():
    replies = iter(["[[A]]", "I pick [[B]]", "[[A]]", "[[A]]", "no idea"])
    lock = threading.Lock()

    def handler(req):
        with lock:
            text = next(replies)
        return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})

    j, _ = remote(handler, samples=5, max_in_flight=1)
    s = j.simulate(inst("x"), ZERO)
    assert s.rows.tolist() == [[0.75, 0.25]]


def test_retries_then_success():
    calls = []

    def handler(req):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json=logprob_response(0.9))

    j, sleeps = remote(handler, backoff=0.5)
    assert j.simulate(inst("x"), ZERO).rows[0, 0] == pytest.approx(0.9)
    assert sleeps == [0.5, 1.0]


def test_exhausted_retries_carry_status():
    j, sleeps = remote(lambda req: httpx.Response(429), retries=2)
    with pytest.raises(TransportError) as e:
        j.simulate(inst("x"), ZERO)
    assert e.value.status == 429 and len(sleeps) == 2


def test_client_errors_not_retried():
    calls = []

    def handler(req):
        calls.append(1)
        return httpx.Response(401)

    with pytest.raises(TransportError):
        remote(handler)[0].simulate(inst("x"), ZERO)
    assert len(calls) == 1


def test_connection_errors_retried():
    def handler(req):
        raise httpx.ConnectError("down")

    with pytest.raises(TransportError):
        remote(handler, retries=1)[0].simulate(inst("x"), ZERO)


@pytest.mark.parametrize(
    "payload",
    [
        {"choices": []},
        {"choices": [{"message": {"content": "hmm"}, "logprobs": {"content": [lp("hmm", -0.1)]}}]},
        {"choices": [{"message": {"content": "no verdict"}}]},
    ],
)
def test_malformed_responses_are_errors(payload):
    with pytest.raises(ResponseFormatError):
        remote(lambda req: httpx.Response(200, json=payload))[0].simulate(inst("x"), ZERO)


def test_verdict_from_text():
    assert verdict_from_text('Verdict: "[[B]]"') is B
    assert verdict_from_text("[[ tie ]]") is TIE
    assert verdict_from_text("A") is None


def test_remote_requires_endpoint():
    with pytest.raises(ConfigError):
        RemoteJudge(JudgeSpec("r", JudgeKind.REMOTE, 1.0, {"model": "m"}))
