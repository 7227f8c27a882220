import numpy as np
import pytest

from boxkg import cross_model, inst_model, onto_model
from boxkg import evaluation as ev
from boxkg.config import TrainConfig
from boxkg.geometry import inverse_softplus
from boxkg.kgdata import SplitKG, TwoViewKG, Vocab, split_kg
from boxkg.state import TrainState, init_state
from boxkg.synth import make_synthetic_kg


def vocab(prefix, n):
    return Vocab(f"{prefix}{i}" for i in range(n))


def make_kg(n_e, n_c, inst=(), onto=(), links=(), n_ir=1, n_or=1):
    return TwoViewKG(vocab("e", n_e), vocab("c", n_c), vocab("r", n_ir), vocab("s", n_or),
                     np.array(inst, int).reshape(-1, 3), np.array(onto, int).reshape(-1, 3),
                     np.array(links, int).reshape(-1, 2))


def make_state(entity, centers, offsets, **cfg):
    entity, centers = np.asarray(entity, float), np.asarray(centers, float)
    d = centers.shape[1]
    conf = TrainConfig(d_vec=entity.shape[1], d_box=d, **cfg)
    params = {
        "entity": entity,
        "inst_rel": np.zeros((1, entity.shape[1])),
        "concept_center": centers,
        "concept_pre_offset": inverse_softplus(np.asarray(offsets, float)),
        "onto_rel_shift": np.zeros((1, d)),
        "onto_rel_pre_scale": np.full((1, d), float(inverse_softplus(1.0))),
    }
    return TrainState(conf, params)


def test_split(kg, links_test=None, onto_test=None):
    def parts(arr, test):
        test = arr if test is None else np.asarray(test, int).reshape(-1, arr.shape[1])
        return {"train": arr, "valid": arr[:0], "test": test}

    return SplitKG(kg, parts(kg.inst_triples, None), parts(kg.onto_triples, onto_test),
                   parts(kg.cross_links, links_test), (0.8, 0.1, 0.1), 0, "kgc")


test_split.__test__ = False


class TestRanks:
    def test_mrr_examples(self):
        assert ev.MetricReport.from_ranks("instance", [1, 2, 4]).mrr == pytest.approx(0.58333, abs=1e-5)
        rep = ev.MetricReport.from_ranks("linking", [1, 1, 2, 3, 10])
        assert rep.mrr == pytest.approx(0.58667, abs=1e-5)
        assert (rep.hits1, rep.hits3, rep.hits10) == (40.0, 80.0, 100.0)

    def test_no_ranks(self):
        with pytest.raises(ValueError):
            ev.MetricReport.from_ranks("instance", [])

    def test_filtered_ties(self):
        scores = np.array([[0.5, 0.9, 0.5, 0.1], [3.0, 3.0, 3.0, 3.0]])
        exclude = np.array([[False, True, False, False], [False, False, False, False]])
        np.testing.assert_array_equal(ev.filtered_ranks(scores, np.array([0, 2]), exclude),
                                      [1.5, 2.5])

    def test_filtered_never_exceeds_raw(self, rng):
        scores = rng.normal(size=(50, 8))
        target = rng.integers(0, 8, 50)
        exclude = rng.random((50, 8)) < 0.3
        exclude[np.arange(50), target] = False
        raw = ev.filtered_ranks(scores, target, np.zeros_like(exclude))
        assert np.all(ev.filtered_ranks(scores, target, exclude) <= raw)

    def test_random_mrr(self):
        assert ev.random_ranking_mrr(3) == pytest.approx((1 + 1 / 2 + 1 / 3) / 3)

    def test_reports_csv(self, tmp_path):
        rep = ev.MetricReport.from_ranks("ontology", [1, 3])
        path = tmp_path / "out" / "r.csv"
        ev.write_reports([rep], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "view,metric,value,query_count"
        assert lines[1] == "ontology,mrr,0.6666666666666666,2"
        assert "hits10" in ev.format_reports([rep])


def brute_force_ranks(score_fn, triples, known, n_cand):
    """Explicit sort per query; a tied block shares its mean position."""
    ranks = []
    known = {tuple(map(int, t)) for t in known}
    for side in ("tail", "head"):
        for h, r, t in triples.tolist():
            target = t if side == "tail" else h
            cands = []
            for x in range(n_cand):
                tri = (h, r, x) if side == "tail" else (x, r, t)
                if x != target and tri in known:
                    continue
                cands.append((score_fn(*tri), x))
            cands.sort(key=lambda sx: -sx[0])
            s_true = next(s for s, x in cands if x == target)
            tied = [i + 1 for i, (s, _) in enumerate(cands) if s == s_true]
            ranks.append(sum(tied) / len(tied))
    return np.array(ranks)


@pytest.fixture(scope="module")
def world():
    syn = make_synthetic_kg(roots=2, branching=(3, 2), n_entities=40, n_inst_triples=200,
                            n_inst_relations=3, seed=2)
    data = split_kg(syn.kg, seed=1)
    state = init_state(TrainConfig(d_vec=4, d_box=3, beta=0.3, seed=3), syn.kg)
    return syn.kg, data, state


class TestKGC:

    def test_instance_matches_brute_force(self, world):
        kg, data, state = world
        rep = ev.eval_kgc(state, data, "instance", "test")
        ref = brute_force_ranks(lambda h, r, t: inst_model.score_inst_triple(h, r, t, state.inst()),
                                data.inst["test"], kg.inst_triples, kg.n_entities)
        np.testing.assert_array_equal(np.sort(rep.ranks), np.sort(ref))
        ref_rep = ev.MetricReport.from_ranks("instance", ref)
        assert (rep.mrr, rep.hits1, rep.hits3, rep.hits10) == (
            ref_rep.mrr, ref_rep.hits1, ref_rep.hits3, ref_rep.hits10)

    @pytest.mark.parametrize("intersection", ["smooth", "hard"])
    def test_ontology_matches_brute_force(self, world, intersection):
        kg, data, state = world
        cfg = state.box_config(intersection)
        rep = ev.eval_kgc(state, data, "ontology", "test", intersection=intersection)
        known = {tuple(t) for t in kg.onto_triples.tolist()}

        def phi(h, r, t):
            row = onto_model.score_all(state.onto(), [h], [r], cfg)[0]
            return row[t]

        ranks = brute_force_ranks(phi, data.onto["test"], known, kg.n_concepts)
        np.testing.assert_array_equal(np.sort(rep.ranks), np.sort(ranks))

    def test_threads_agree(self, world):
        _, data, state = world
        a = ev.eval_kgc(state, data, "instance", "test", threads=1)
        b = ev.eval_kgc(state, data, "instance", "test", threads=4)
        np.testing.assert_array_equal(a.ranks, b.ranks)

    def test_perfect_model(self):
        # e0 + r = e1 and e1 + r = e2 exactly
        kg = make_kg(3, 1, inst=[[0, 0, 1], [1, 0, 2]], links=[[0, 0]])
        state = make_state([[0.0], [1.0], [2.0]], [[0.0]], [[1.0]])
        state.params["inst_rel"][:] = 1.0
        rep = ev.eval_kgc(state, test_split(kg), "instance", "test")
        assert rep.mrr == 1.0 and rep.hits1 == 100.0

    def test_errors(self, world):
        _, data, state = world
        with pytest.raises(ValueError):
            ev.eval_kgc(state, data, "nonsense")
        lk = split_kg(data.kg, mode="linking")
        with pytest.raises(ValueError, match="empty"):
            ev.eval_kgc(state, lk, "ontology", "test")


class TestLinking:
    def test_center_is_rank_one(self):
        kg = make_kg(2, 3, links=[[0, 1], [1, 2]])
        state = make_state([[5.0, 5.0], [-5.0, 5.0]], [[0, 0], [5, 5], [-5, 5]],
                           np.full((3, 2), 0.5), beta=0.1)
        rep = ev.eval_linking(state, test_split(kg))
        np.testing.assert_array_equal(rep.ranks, [1.0, 1.0])

    def test_identical_boxes_tie(self):
        kg = make_kg(1, 3, links=[[0, 0]])
        state = make_state([[0.0, 0.0]], [[0, 0], [0, 0], [9, 9]], np.full((3, 2), 0.5))
        np.testing.assert_array_equal(ev.eval_linking(state, test_split(kg)).ranks, [1.5])

    def test_filters_other_known_concepts(self):
        kg = make_kg(1, 3, links=[[0, 0], [0, 2]])
        state = make_state([[0.0, 0.0]], [[0, 0], [3, 3], [9, 9]], np.full((3, 2), 0.5))
        rep = ev.eval_linking(state, test_split(kg, links_test=[[0, 2]]))
        np.testing.assert_array_equal(rep.ranks, [2.0])

    def test_frequency_baseline(self):
        kg = make_kg(4, 3, links=[[0, 1], [1, 1], [2, 1], [3, 0], [3, 2]])
        data = test_split(kg, links_test=[[3, 2]])
        # concept 2 has frequency 1, concept 0 is filtered, concept 1 has 3
        assert ev.eval_linking_frequency_baseline(data).ranks.tolist() == [2.0]


def diversity_world(n_ing=12, per=20):
    """Recipe box 0 covering ingredient boxes 1..n_ing laid out along a line.

    Each ingredient holds ``per`` entities; the one at its center is gold.
    """
    centers = [[5.0 * (n_ing - 1), 0.0]] + [[10.0 * i, 0.0] for i in range(n_ing)]
    offsets = [[5.0 * n_ing + 5, 5.0]] + [[1.0, 1.0]] * n_ing
    rng = np.random.default_rng(0)
    ents, links, gold = [], [], set()
    for i in range(n_ing):
        for j in range(per):
            e = len(ents)
            jitter = np.zeros(2) if j == 0 else rng.uniform(0.05, 0.9, 2) * rng.choice([-1, 1], 2)
            ents.append(np.array(centers[i + 1]) + jitter)
            links.append([e, i + 1])
            if j == 0:
                gold.add(e)
    onto = [[0, 0, i + 1] for i in range(n_ing)]
    kg = make_kg(len(ents), n_ing + 1, onto=onto, links=links)
    state = make_state(ents, centers, offsets, beta=0.01)
    return kg, state, {0: gold}


class TestDiversity:
    def test_more_types_beat_one(self):
        kg, state, gold = diversity_world()
        data = test_split(kg)
        wide = ev.eval_diversity(state, data, [0], 12, 10, 0, gold)
        narrow = ev.eval_diversity(state, data, [0], 1, 120, 0, gold)
        assert wide.hits[0] == 100.0
        assert narrow.hits[0] < wide.hits[0]
        assert wide.union_sizes[0] == 120 and wide.padded[0] == 0

    def test_concentrated_gold(self):
        kg, state, _ = diversity_world()
        data = test_split(kg)
        top = ev.eval_diversity(state, data, [0], 1, 120, 0, {0: set()})
        assert top.hits == {}
        phi_best = onto_model.score_all(state.onto(), [0], [0], state.box_config())[0]
        best = int(1 + np.argmax(phi_best[1:]))
        d = cross_model.concept_distances(best, state.inst(), state.onto(), state.box_config())
        # inside the top-M list of the best type for every M tried below
        gold = {0: set(np.argsort(d, kind="stable")[:5].tolist())}
        for k, m in ((1, 120), (10, 12), (12, 10), (24, 5)):
            assert ev.eval_diversity(state, data, [0], k, m, 0, gold).hits[0] == 100.0

    def test_padding_reported(self):
        kg, state, gold = diversity_world()
        rep = ev.eval_diversity(state, test_split(kg), [0], 24, 5, 0, gold)
        assert rep.padded[0] == 12
        assert rep.union_sizes[0] <= 120

    def test_budget_error(self):
        kg, state, gold = diversity_world()
        with pytest.raises(ValueError, match="budget"):
            ev.eval_diversity(state, test_split(kg), [0], 12, 12, 0, gold)


class TestInspect:
    def test_self_tops_list_hard(self, rng):
        kg = make_kg(1, 5, links=[[0, 0]])
        state = init_state(TrainConfig(d_vec=3, d_box=3, intersection="hard", seed=4), kg)
        for c in range(5):
            ins = ev.inspect_concepts(state, c, 0, top_k=3)
            assert ins.intersections[0][0] == c
            assert len(ins.intersections) == 3
            vols = [v for _, _, v in ins.volumes]
            assert vols == sorted(vols, reverse=True) and len(vols) == 5

    def test_containing_box_is_larger(self):
        state = make_state([[0.0]], [[0.0], [0.0]], [[3.0], [1.0]], beta=0.1)
        vols = ev.inspect_concepts(state, 0, 0).volumes
        assert [c for c, _, _ in vols] == [0, 1]

    def test_disjoint_small_beta(self):
        state = make_state([[0.0]], [[0.0], [10.0]], [[1.0], [1.0]], beta=0.01)
        ins = ev.inspect_concepts(state, 0, 0, top_k=2)
        assert dict((c, v) for c, v, _ in ins.intersections)[1] < 1e-12

    def test_tsv_and_errors(self):
        state = make_state([[0.0]], [[0.0], [10.0]], [[1.0], [1.0]])
        tsv = ev.inspect_concepts(state, 0, 0, top_k=1).to_tsv(["A", "B"])
        assert tsv.splitlines()[0] == "section\tconcept\tvolume\tlog_volume"
        assert tsv.splitlines()[1].startswith("intersection\tA\t")
        with pytest.raises(IndexError):
            ev.inspect_concepts(state, 2, 0)
        with pytest.raises(IndexError):
            ev.inspect_concepts(state, 0, 1)
