import io
import json
import os
import shutil
import tempfile
import unittest
from contextlib import redirect_stdout

from hybrid_ap import main as cli
from hybrid_ap.edge_files import write_edge_file


class MainTestCase(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, self.directory)

        # Two tight image pairs and two tight tag pairs, each image tagged with the
        # tags of its pair
        images = []
        for i in range(4):
            for k in range(4):
                if i != k:
                    images.append((i, k, -0.1 - 0.01 * (i + k) if i // 2 == k // 2 else -5.0))
        tags = [(0, 1, -0.2), (1, 0, -0.2), (2, 3, -0.3), (3, 2, -0.3), (0, 2, -4.0), (2, 0, -4.0)]
        assoc = [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (2, 3), (3, 2), (3, 3)]

        self.image_sims = self.path("images.tsv")
        self.tag_sims = self.path("tags.tsv")
        self.assoc = self.path("assoc.tsv")
        write_edge_file(self.image_sims, images)
        write_edge_file(self.tag_sims, tags)
        write_edge_file(self.assoc, assoc)

        self.pair = self.path("pair.tsv")
        write_edge_file(self.pair, [(0, 0, -10.0), (1, 1, -12.0), (0, 1, -0.1), (1, 0, -0.1)])

    def path(self, name):
        return os.path.join(self.directory, name)

    def run_cli(self, *args):
        """Run the command line and return (exit code, stdout)"""
        out = io.StringIO()
        with redirect_stdout(out):
            code = cli.main(["--log-level", "CRITICAL", *args])
        return code, out.getvalue()

    def hybrid_args(self, *extra):
        return (
            "--algo", "h2mp",
            "--image-sims", self.image_sims,
            "--tag-sims", self.tag_sims,
            "--assoc", self.assoc,
            *extra,
        )

    def test_ap_on_a_pair(self):
        code, out = self.run_cli(
            "--algo", "ap", "--image-sims", self.pair, "--keep-user-diagonal"
        )
        self.assertEqual(code, cli.EXIT_OK)
        document = json.loads(out)
        self.assertEqual(document["image_exemplars"], [0])
        self.assertEqual(document["image_assignment"], [0, 0])
        self.assertEqual(document["tag_assignment"], [])

    def test_result_keys(self):
        code, out = self.run_cli(*self.hybrid_args())
        self.assertEqual(code, cli.EXIT_OK)
        document = json.loads(out)
        self.assertEqual(
            list(document),
            [
                "image_exemplars",
                "image_assignment",
                "tag_exemplars",
                "tag_assignment",
                "objective",
                "iterations",
                "converged",
                "visual_exemplarness",
                "semantic_exemplarness",
            ],
        )
        self.assertEqual(document["image_exemplars"], sorted(set(document["image_assignment"])))
        self.assertIn("total", document["objective"])

    def test_metrics_only_on_request(self):
        _, out = self.run_cli(*self.hybrid_args())
        self.assertIsNone(json.loads(out)["visual_exemplarness"])

        _, out = self.run_cli(*self.hybrid_args("--emit-metrics"))
        document = json.loads(out)
        self.assertIsInstance(document["visual_exemplarness"], float)
        self.assertIsInstance(document["semantic_exemplarness"], float)

    def test_zero_theta_matches_ap(self):
        # Same number of sweeps on both sides
        fixed = ("--max-iter", "40", "--conv-window", "100")
        _, hybrid = self.run_cli(*self.hybrid_args("--theta", "0", *fixed))
        _, plain = self.run_cli("--algo", "ap", "--image-sims", self.image_sims, *fixed)
        self.assertEqual(
            json.loads(hybrid)["image_assignment"], json.loads(plain)["image_assignment"]
        )

    def test_identical_runs_write_identical_files(self):
        first, second = self.path("first.json"), self.path("second.json")
        self.assertEqual(self.run_cli(*self.hybrid_args("--out", first))[0], cli.EXIT_OK)
        self.assertEqual(self.run_cli(*self.hybrid_args("--out", second))[0], cli.EXIT_OK)
        with open(first, "rb") as f, open(second, "rb") as g:
            self.assertEqual(f.read(), g.read())

    def test_config_file_and_flags(self):
        config = self.path("config.yaml")
        with open(config, "w") as f:
            f.write("solver:\n  max_iter: 3\n  conv_window: 50\n")

        _, out = self.run_cli(*self.hybrid_args("--config", config))
        document = json.loads(out)
        self.assertEqual(document["iterations"], 3)
        self.assertFalse(document["converged"])

        _, out = self.run_cli(*self.hybrid_args("--config", config, "--max-iter", "5"))
        self.assertEqual(json.loads(out)["iterations"], 5)

    def test_missing_association_file(self):
        code, out = self.run_cli(
            "--algo", "h2mp", "--image-sims", self.image_sims, "--tag-sims", self.tag_sims
        )
        self.assertEqual(code, cli.EXIT_USAGE)
        self.assertEqual(out, "")

    def test_usage_errors(self):
        self.assertEqual(self.run_cli("--image-sims", self.pair, "--bogus")[0], cli.EXIT_USAGE)
        self.assertEqual(
            self.run_cli("--algo", "ap", "--image-sims", self.pair, "--damping", "1.5")[0],
            cli.EXIT_USAGE,
        )
        self.assertEqual(
            self.run_cli("--algo", "ap", "--image-sims", self.pair, "--config", self.path("none.yaml"))[0],
            cli.EXIT_USAGE,
        )

    def test_input_errors(self):
        broken = self.path("broken.tsv")
        with open(broken, "w") as f:
            f.write("0\tx\t1\n")
        self.assertEqual(self.run_cli("--algo", "ap", "--image-sims", broken)[0], cli.EXIT_INPUT)
        self.assertEqual(
            self.run_cli("--algo", "ap", "--image-sims", self.path("missing.tsv"))[0],
            cli.EXIT_INPUT,
        )
        # An index beyond an explicit count
        self.assertEqual(
            self.run_cli("--algo", "ap", "--image-sims", self.pair, "--n-images", "1")[0],
            cli.EXIT_INPUT,
        )

    def test_markdown_report(self):
        names = self.path("tags.txt")
        with open(names, "w") as f:
            f.write("beach\nsea\nforest\ntree\n")
        report = self.path("summary.md")

        code, _ = self.run_cli(*self.hybrid_args("--report", report, "--tag-names", names))
        self.assertEqual(code, cli.EXIT_OK)
        with open(report) as f:
            text = f.read()
        self.assertTrue(text.startswith("# Exemplar summary (h2mp)"))
        self.assertIn("## Image exemplars", text)
        self.assertIn("**In words:**", text)

    def test_html_report_with_oracle_check(self):
        report = self.path("summary.html")
        code, _ = self.run_cli(*self.hybrid_args("--report", report, "--verify-oracle"))
        self.assertEqual(code, cli.EXIT_OK)
        with open(report) as f:
            html = f.read()
        self.assertIn("<table>", html)
        self.assertIn("Oracle check", html)
        self.assertIn("Exhaustive optimum", html)
        self.assertIn("Vector engine deviation", html)


if __name__ == "__main__":
    unittest.main()
