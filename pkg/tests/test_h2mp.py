import unittest
from dataclasses import replace

import numpy as np

from hybrid_ap.ap import ApSolver, ap_run
from hybrid_ap.config import H2mpConfig
from hybrid_ap.errors import SolverError
from hybrid_ap.graph import build_graph, build_potentials, scale_similarities
from hybrid_ap.h2mp import (
    H2mpSolver,
    MessageState,
    assign_exemplars,
    compute_sbar,
    h2mp_run,
    message_update_count,
    update_availability_h,
    update_contributability,
    update_discardability,
    update_responsibility_h,
)
from hybrid_ap.objective import validity

from tests.utils import random_instance


def linked_graph():
    """One image with two tags; every node only has its self-similarity"""
    g = build_graph([(0, 0, -1.0)], [(0, 0, -1.0), (1, 1, -1.0)], [(0, 0), (0, 1)], 1, 2)
    return scale_similarities(g)


def shared_tag_graph():
    """Two images sharing one tag, so p(i,j) = theta and p(j,i) = theta / 2"""
    images = [(0, 0, -1.0), (1, 1, -1.0), (0, 1, -1.0), (1, 0, -1.0)]
    g = build_graph(images, [(0, 0, -1.0)], [(0, 0), (1, 0)], 2, 1)
    return scale_similarities(g)


class SbarTestCase(unittest.TestCase):
    def test_zero_contributability(self):
        g = linked_graph()
        sbar = compute_sbar(MessageState.zeros(g), g, "image")
        np.testing.assert_array_equal(sbar, g.image.sims)

    def test_contributions_are_summed(self):
        g = linked_graph()
        state = replace(MessageState.zeros(g), v_tag_to_image=np.array([0.5, -0.2]))
        sbar = compute_sbar(state, g, "image")
        self.assertAlmostEqual(sbar[g.image.diag[0]], -0.7)

    def test_tag_side_uses_messages_from_images(self):
        g = linked_graph()
        state = replace(MessageState.zeros(g), v_image_to_tag=np.array([2.0, -1.0]))
        sbar = compute_sbar(state, g, "tag")
        self.assertEqual(sbar[g.tag.diag].tolist(), [1.0, -2.0])

    def test_node_without_tags(self):
        images = [(0, 0, -1.0), (1, 1, -3.0), (0, 1, -2.0), (1, 0, -2.0)]
        g = scale_similarities(build_graph(images, [(0, 0, -1.0)], [(0, 0)], 2, 1))
        state = replace(MessageState.zeros(g), v_tag_to_image=np.array([1.0]))
        sbar = compute_sbar(state, g, "image")
        self.assertEqual(sbar[g.image.diag[1]], g.image.sims[g.image.diag[1]])
        self.assertEqual(sbar[g.image.diag[0]], g.image.sims[g.image.diag[0]] + 1.0)

    def test_only_the_diagonal_moves(self):
        g = shared_tag_graph()
        state = replace(MessageState.zeros(g), v_tag_to_image=np.array([0.25, 0.5]))
        sbar = compute_sbar(state, g, "image")
        off = g.image.off_diagonal
        np.testing.assert_array_equal(sbar[off], g.image.sims[off])
        self.assertTrue((sbar[~off] > g.image.sims[~off]).all())


class HomogeneousUpdateTestCase(unittest.TestCase):
    def test_sbar_feeds_responsibility(self):
        g = scale_similarities(build_graph([(0, 0, -2.0)], [(0, 0, -1.0)], [(0, 0)], 1, 1))
        state = replace(MessageState.zeros(g), v_tag_to_image=np.array([1.0]))
        state = update_responsibility_h(state, g, "image", damping=0.0)
        self.assertEqual(state.r_image.tolist(), [-1.0])
        self.assertEqual(state.sbar_image.tolist(), [-1.0])

    def test_without_associations_matches_affinity_propagation(self):
        g, _ = random_instance(10, 0, seed=4)
        pot = build_potentials(g, -15.0)
        hybrid = H2mpSolver(g, pot, H2mpConfig())
        plain = ApSolver(g, H2mpConfig())
        for _ in range(25):
            hybrid.step()
            plain.step()
            np.testing.assert_array_equal(hybrid.state.r_image, plain.state.r)
            np.testing.assert_array_equal(hybrid.state.a_image, plain.state.a)

    def test_zero_theta_matches_affinity_propagation(self):
        g, pot = random_instance(8, 5, seed=11, theta=0.0)
        hybrid = H2mpSolver(g, pot, H2mpConfig())
        images = ApSolver(g, H2mpConfig(), side="image")
        tags = ApSolver(g, H2mpConfig(), side="tag")
        for _ in range(30):
            hybrid.step()
            images.step()
            tags.step()
        self.assertEqual(hybrid.state.v_tag_to_image.tolist(), [0.0] * g.n_assoc)
        np.testing.assert_array_equal(hybrid.state.r_image, images.state.r)
        np.testing.assert_array_equal(hybrid.state.a_tag, tags.state.a)
        np.testing.assert_array_equal(hybrid.labels()[: g.n_images], images.labels())

    def test_first_sweep_matches_affinity_propagation_with_coupling(self):
        g, pot = random_instance(5, 4, seed=0, theta=-15.0)
        hybrid = H2mpSolver(g, pot, H2mpConfig())
        images = ApSolver(g, H2mpConfig(), side="image")
        tags = ApSolver(g, H2mpConfig(), side="tag")
        hybrid.step()
        images.step()
        tags.step()

        np.testing.assert_array_equal(hybrid.state.sbar_image, g.image.sims)
        np.testing.assert_array_equal(hybrid.state.sbar_tag, g.tag.sims)
        np.testing.assert_array_equal(hybrid.state.r_image, images.state.r)
        np.testing.assert_array_equal(hybrid.state.a_image, images.state.a)
        np.testing.assert_array_equal(hybrid.state.r_tag, tags.state.r)
        np.testing.assert_array_equal(hybrid.state.a_tag, tags.state.a)

        # w already sees this sweep's beliefs, so v moves off zero
        self.assertTrue(np.any(hybrid.state.v_tag_to_image != 0.0))

        # and the second sweep no longer sees the raw preferences
        hybrid.step()
        self.assertFalse(np.array_equal(hybrid.state.sbar_image, g.image.sims))

    def test_availability_on_zero_state(self):
        g = shared_tag_graph()
        state = update_availability_h(MessageState.zeros(g), g, "image", damping=0.0)
        self.assertEqual(state.a_image.tolist(), [0.0] * 4)


class CrossDomainUpdateTestCase(unittest.TestCase):
    def setUp(self):
        self.g = shared_tag_graph()
        self.pot = build_potentials(self.g, -2.0)

    def test_potentials(self):
        self.assertEqual(self.pot.p_img.tolist(), [-2.0, -2.0])
        self.assertEqual(self.pot.p_tag.tolist(), [-1.0, -1.0])

    def test_discardability_zero_state(self):
        state = update_discardability(MessageState.zeros(self.g), self.g, damping=0.0)
        self.assertEqual(state.w_image_to_tag.tolist(), [0.0, 0.0])
        self.assertEqual(state.w_tag_to_image.tolist(), [0.0, 0.0])

    def test_discardability_removes_own_contribution(self):
        r_image = np.zeros(4)
        r_image[self.g.image.diag] = [0.3, 0.5]
        state = replace(
            MessageState.zeros(self.g),
            r_image=r_image,
            v_tag_to_image=np.array([0.1, 0.5]),
        )
        state = update_discardability(state, self.g, damping=0.0)
        self.assertAlmostEqual(state.w_image_to_tag[0], 0.2)
        self.assertEqual(state.w_image_to_tag[1], 0.0)

    def test_contributability(self):
        for w, expected in ((0.0, 0.0), (3.0, 1.0), (-5.0, -2.0)):
            with self.subTest(w=w):
                state = replace(
                    MessageState.zeros(self.g), w_tag_to_image=np.array([w, w])
                )
                state = update_contributability(state, self.pot, damping=0.0)
                self.assertEqual(state.v_tag_to_image.tolist(), [expected, expected])

    def test_contributability_to_tags(self):
        state = replace(MessageState.zeros(self.g), w_image_to_tag=np.array([3.0, 0.0]))
        state = update_contributability(state, self.pot, damping=0.0)
        # max(-1, 3) - max(0, -2 + 3) and max(-1, 0) - max(0, -2)
        self.assertEqual(state.v_image_to_tag.tolist(), [2.0, 0.0])

    def test_contributability_is_damped(self):
        state = replace(
            MessageState.zeros(self.g),
            w_tag_to_image=np.array([3.0, 3.0]),
            v_tag_to_image=np.array([3.0, 0.0]),
        )
        state = update_contributability(state, self.pot, damping=0.5)
        self.assertEqual(state.v_tag_to_image.tolist(), [2.0, 0.5])


class AssignmentTestCase(unittest.TestCase):
    def setUp(self):
        self.g = scale_similarities(
            build_graph([(0, 0, -1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, -1.0)], [], [], 2, 0)
        )

    def test_ties_pick_the_lower_index(self):
        state = replace(MessageState.zeros(self.g), r_image=np.array([2.0, 2.0, 0.0, 1.0]))
        self.assertEqual(assign_exemplars(state, self.g).c, (0, 1))

    def test_follows_the_best_belief(self):
        state = replace(MessageState.zeros(self.g), r_image=np.array([-1.0, 0.5, 0.0, 1.0]))
        self.assertEqual(assign_exemplars(state, self.g).c, (1, 1))

    def test_single_node(self):
        g = linked_graph()
        labeling = assign_exemplars(MessageState.zeros(g), g)
        self.assertEqual(labeling.c, (0,))
        self.assertEqual(labeling.b, (0, 1))


class H2mpRunTestCase(unittest.TestCase):
    def test_message_update_count(self):
        g, _ = random_instance(5, 3, seed=2)
        expected = 2 * 25 + 2 * 9 + 4 * g.n_assoc
        self.assertEqual(message_update_count(g), expected)

    def test_without_associations_matches_ap_run(self):
        g, pot = random_instance(12, 0, seed=5)
        hybrid = h2mp_run(g, pot, H2mpConfig())
        plain = ap_run(g, H2mpConfig())
        self.assertEqual(hybrid.image_assignment, plain.image_assignment)
        self.assertEqual(hybrid.iterations, plain.iterations)
        self.assertEqual(hybrid.converged, plain.converged)
        self.assertEqual(hybrid.objective.total, plain.objective.total)

    def test_result_is_valid(self):
        for seed in range(5):
            g, pot = random_instance(10, 6, seed, theta=-2.0)
            result = h2mp_run(g, pot, H2mpConfig(max_iter=300))
            self.assertEqual(validity(result.image_assignment, 10), 0.0)
            self.assertEqual(validity(result.tag_assignment, 6), 0.0)
            self.assertEqual(result.image_exemplars, sorted(set(result.image_assignment)))
            self.assertTrue(np.isfinite(result.objective.total))

    def test_messages_stay_finite(self):
        g, pot = random_instance(9, 5, seed=8, theta=-15.0)
        solver = H2mpSolver(g, pot, H2mpConfig())
        for _ in range(60):
            solver.step()
        for name in ("r_image", "a_image", "r_tag", "a_tag", "w_image_to_tag", "v_image_to_tag"):
            self.assertTrue(np.isfinite(getattr(solver.state, name)).all(), name)

    def test_unscaled_graph(self):
        g = build_graph([(0, 0, -1.0)], [(0, 0, -1.0)], [(0, 0)], 1, 1)
        with self.assertRaises(SolverError):
            h2mp_run(g, build_potentials(g, -1.0), H2mpConfig())

    def test_potentials_from_another_graph(self):
        g = linked_graph()
        other = scale_similarities(build_graph([(0, 0, -1.0)], [(0, 0, -1.0)], [(0, 0)], 1, 1))
        with self.assertRaises(SolverError):
            h2mp_run(g, build_potentials(other, -1.0), H2mpConfig())


if __name__ == "__main__":
    unittest.main()
