import pytest

from ordergan import checkpoint
from ordergan.cli import main
from ordergan.config import ConfigError, RunConfig, parse_lines
from ordergan.gan import read_metrics


class TestConfig:
    def test_sections_and_types(self):
        cfg = RunConfig.from_pairs({"seed": "7", "world.n_orders": "900", "gan.gen_hidden": "4,8", "gan.lr": "3e-4", "eval.tsne_n": "40"})
        assert cfg.world().n_orders == 900 and cfg.world().seed == 7
        g = cfg.gan(40)
        assert g.gen_hidden == (4, 8) and g.lr == 3e-4 and g.seed == 7
        assert cfg.eval().tsne_n == 40

    @pytest.mark.parametrize(
        "pairs",
        [
            {"world.n_orders": "0"},
            {"world.nope": "1"},
            {"bogus.x": "1"},
            {"gan.dim": "12"},
            {"seed": "abc"},
            {"gan.lr": "fast"},
            {"stray": "1"},
        ],
    )
    def test_rejected(self, pairs):
        with pytest.raises(ConfigError):
            RunConfig.from_pairs(pairs)

    def test_file_then_flags(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# comment\nseed=3\nworld.n_orders=1000\n\ngan.lr=1e-3\n")
        cfg = RunConfig.load(str(p), ["world.n_orders=2000"])
        assert cfg.seed == 3 and cfg.world().n_orders == 2000 and cfg.gan(40).lr == 1e-3

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_lines(["a=1", "oops"])

    def test_digest_ignores_output_location(self):
        a = RunConfig.from_pairs({"seed": "1", "out": "/x"})
        b = RunConfig.from_pairs({"seed": "1", "out": "/y"})
        assert a.digest() == b.digest() != RunConfig.from_pairs({"seed": "2"}).digest()
        assert a.provenance("rsm") == f"# ordergan rsm seed=1 config={a.digest()}"

    def test_output_dir_precedence(self, monkeypatch):
        monkeypatch.delenv("ORDERGAN_OUT", raising=False)
        cfg = RunConfig()
        assert str(cfg.output_dir()) == "ordergan-out"
        monkeypatch.setenv("ORDERGAN_OUT", "/env")
        assert str(cfg.output_dir()) == "/env"
        assert str(cfg.output_dir("/flag")) == "/flag"

    def test_paper_scale(self):
        cfg = RunConfig(paper_scale=True)
        assert cfg.world().word_dim == 128 and cfg.encoder().hidden == 128
        assert cfg.gan(264).noise_dim == 96


TINY = [
    "world.n_customers=150",
    "world.n_products=40",
    "world.n_orders=3000",
    "embed.iterations=40",
    "gan.epochs=1",
    "gan.tracker_n=200",
    "gan.tracker_every=5",
    "gan.log_every=5",
    "cvae.epochs=1",
    "eval.tracker_n=200",
    "eval.triplets=1000",
    "eval.forest_n=500",
    "eval.tsne_n=30",
    "eval.tsne_iterations=150",
    "eval.n_per_product=50",
    "eval.min_orders=5",
    "eval.rsm_pairs=1000",
    "eval.recon_products=4",
    "eval.recon_samples=20",
]


def run(out, *argv):
    args = list(argv) + ["--out", str(out)]
    for s in TINY:
        args += ["--set", s]
    return main(args)


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run(out, "synth") == 0
    assert run(out, "embed") == 0
    for model in ("ecgan", "ec2gan", "cvae"):
        assert run(out, "train", "--model", model) == 0
    return out


class TestCommands:
    def test_synth_refuses_overwrite_and_is_reproducible(self, built, tmp_path):
        assert run(built, "synth") == 2
        assert run(tmp_path / "fresh" / "nested", "synth") == 0
        for name in ("customers.tsv", "products.tsv", "orders.tsv", "vocab.tsv"):
            assert (tmp_path / "fresh" / "nested" / "world" / name).read_bytes() == (built / "world" / name).read_bytes()

    def test_invalid_count_is_usage_error(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path), "--set", "world.n_orders=0"]) == 2
        assert "n_orders" in capsys.readouterr().err

    def test_embed_rows_and_provenance(self, built):
        X = checkpoint.load(built / "embed" / "orders.ogan")["orders"]
        n_orders = len((built / "world" / "orders.tsv").read_text().splitlines()) - 2
        assert len(X) + len(checkpoint.load(built / "embed" / "eval.ogan")["orders"]) == n_orders
        assert X.shape[1] == 40
        assert (built / "embed" / "orders.sidecar").read_text().startswith("# ordergan orders seed=0 config=")

    def test_metrics_csv(self, built):
        rows = read_metrics(built / "models" / "ecgan_metrics.csv")
        steps = [r["step"] for r in rows]
        assert steps and steps == sorted(set(steps))
        assert all(r["critic_steps"] == 5 * r["step"] for r in rows)

    def test_resume_continues(self, built):
        out = built
        # train two more steps on top of the finished ecgan, then check the log extends
        before = read_metrics(out / "models" / "ecgan_metrics.csv")[-1]["step"]
        assert run(out, "train", "--model", "ecgan", "--resume", "--steps", str(before + 2)) == 0
        after = read_metrics(out / "models" / "ecgan_metrics.csv")
        assert after[-1]["step"] == before + 2

    def test_generate(self, built, capsys):
        assert run(built, "generate", "--model", "ec2gan", "--product", "3", "--n", "25") == 0
        lines = (built / "generated" / "ec2gan_3.csv").read_text().splitlines()
        assert lines[0].startswith("# ordergan generated ec2gan")
        assert len(lines) == 2 + 25
        assert lines[1].split(",")[-2:] == ["price", "month"]

    def test_generate_errors(self, built):
        assert run(built, "generate", "--model", "ec2gan", "--product", "999", "--n", "5") == 2
        assert run(built, "generate", "--model", "ec2gan", "--n", "5") == 2
        assert run(built, "generate", "--model", "ecgan", "--product", "1", "--n", "5") == 2
        assert run(built, "generate", "--model", "ec2gan", "--title", "zzzz qqqq", "--n", "5") == 2

    def test_generate_from_title(self, built):
        words = (built / "world" / "products.tsv").read_text().splitlines()[2].split("\t")[-1].split()[:3]
        assert run(built, "generate", "--model", "cvae", "--title", " ".join(words), "--n", "7", "--force") == 0
        assert len((built / "generated" / "cvae_title.csv").read_text().splitlines()) == 9

    def test_missing_prerequisite(self, tmp_path, capsys):
        assert run(tmp_path, "embed") == 2
        assert "ordergan synth" in capsys.readouterr().err

    def test_evaluate_report_and_determinism(self, built, tmp_path):
        assert run(built, "evaluate") == 0
        report = built / "report"
        rsm = report / "rsm.csv"
        rows = [l.split(",") for l in rsm.read_text().splitlines()[2:]]
        assert len(rows) == 19
        assert {r[1] for r in rows} == {"ec2gan", "cvae", "random"}
        assert sum(r[1] == "ec2gan" for r in rows) == 9 == sum(r[1] == "cvae" for r in rows)
        for name in ("metrics.csv", "histogram.svg", "tsne.csv", "pca.csv", "propensity.csv", "distribution_report/distribution.csv"):
            assert (report / name).exists()
        first = {p.name: p.read_bytes() for p in report.glob("*.csv")}
        assert run(built, "evaluate") == 2
        assert run(built, "evaluate", "--force") == 0
        assert first == {p.name: p.read_bytes() for p in report.glob("*.csv")}

    def test_selftest(self, capsys):
        assert main(["selftest"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines and all(l.startswith("PASS ") for l in lines)

    def test_bad_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as e:
            main(["train", "--model", "nope"])
        assert e.value.code == 2
