import os
import subprocess

import pytest

ouroboros = pytest.importorskip("ouroboros")

ANCESTOR = "org1\nlr 0.001000\nhid 016\nnoi 008\naux 008\nend\n"


def test_genome_round_trip():
    g = ouroboros.parse_genome(ANCESTOR)
    assert (g.lr_micros, g.hid, g.noi, g.aux) == (1000, 16, 8, 8)
    assert ouroboros.serialize_genome(g) == ANCESTOR
    assert g == ouroboros.Genome.ancestor()
    assert len(ouroboros.Genome(0.015, 31, 8, 8).text()) == 45


def test_bad_genomes_raise_value_error():
    with pytest.raises(ValueError):
        ouroboros.parse_genome(ANCESTOR.replace("016", "16 "))
    with pytest.raises(ValueError):
        ouroboros.Genome(lr=2.0)


def test_mutation_is_seeded_and_legal():
    g = ouroboros.Genome.ancestor()
    a = ouroboros.mutate(g, seed=4)
    assert a == ouroboros.mutate(g, seed=4)
    assert len(a.text()) == 45
    assert ouroboros.mutate(g, seed=4, sigma_lr=0.0, int_delta=0) == g


def test_gradient_check_and_cost():
    r = ouroboros.gradient_check()
    assert r["parameters"] == 366
    assert r["max_rel_error"] < 1e-4
    assert ouroboros.gradient_check(corrupt=True)["max_rel_error"] > 1e-2
    assert ouroboros.cost_epoch(ouroboros.Genome.ancestor()) == 660960.0


def test_small_simulation_validates(tmp_path):
    cheap = ouroboros.Genome(0.02, 8, 2, 2)
    run = ouroboros.sim_run(capacity=2, budget=6, seed=3, ancestor=cheap, max_epochs=5000, arena=tmp_path)
    assert run["valid"] and run["ended"]
    assert run["max_population"] <= 2
    assert run["spawned"] == run["replicated"] + run["evicted"] + run["sterile"] + run["alive"]
    again = ouroboros.validate_log(tmp_path / "events.log", 2)
    assert again["valid"]
    assert ouroboros.validate_log(tmp_path / "events.log", 1)["violation_kind"] == "capacity"
    stats = ouroboros.summarize_log(tmp_path / "events.log", window=2)
    assert len(stats["maturity_cost"]) == run["matured"]


@pytest.mark.skipif("OUROBOROS_HOST" not in os.environ, reason="CLI path not given")
def test_cli_gradcheck():
    out = subprocess.run([os.environ["OUROBOROS_HOST"], "gradcheck"], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.startswith("config: gradcheck")
    assert "PASS" in out.stdout
