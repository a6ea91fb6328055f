import numpy as np
from django.test import SimpleTestCase

from estimator.core import autodiff as ad
from estimator.core import data as data_io
from estimator.core import ukf
from estimator.core.bundle import build_bundle
from estimator.exceptions import DataValidationError, FilterDivergenceError, ParameterError, ShapeError

A = np.array(
    [
        [0.95, 0.05, 0.0, 0.0],
        [-0.05, 0.9, 0.1, 0.0],
        [0.0, 0.0, 0.97, 0.02],
        [0.01, 0.0, 0.0, 0.99],
    ]
)
B = np.array([[0.1, 0.0], [0.0, 0.05], [0.2, 0.0], [0.0, 0.1]])
H = np.array(
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.5, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.3, 1.0],
    ]
)
R = np.diag([0.01, 0.02, 0.01, 0.005])
Q = np.diag([0.1, 0.2, 0.05, 0.1])


class LinearModel:
    """Linear-Gaussian filter model for comparison with the Kalman filter."""

    n_x = 4
    augmented = False

    def view(self, tape=None):
        return {}

    def transition(self, view, x, u, ts):
        return ad.matmul(x, A.T) + np.asarray(u) @ B.T

    def observe(self, view, x, u):
        return ad.matmul(x, H.T)

    def process_covariance(self, view, x_hat):
        return ad.Tensor(R)

    def measurement_covariance(self, view, x_hat):
        return ad.Tensor(Q)


def kalman_filter(x0, p0, controls, measurements):
    x, p, means = x0.copy(), p0.copy(), []
    for k, y in enumerate(measurements):
        if k > 0:
            x = A @ x + B @ controls[k - 1]
            p = A @ p @ A.T + R
        s = H @ p @ H.T + Q
        gain = p @ H.T @ np.linalg.inv(s)
        x = x + gain @ (y - H @ x)
        p = p - gain @ s @ gain.T
        means.append(x)
    return np.array(means)


def linear_data(steps=100, seed=0):
    rng = np.random.default_rng(seed)
    controls = rng.normal(size=(steps, 2))
    x, measurements = np.array([1.0, 0.0, 0.5, 1.0]), []
    for k in range(steps):
        measurements.append(H @ x + rng.normal(size=4) * np.sqrt(np.diag(Q)))
        x = A @ x + B @ controls[k] + rng.normal(size=4) * np.sqrt(np.diag(R))
    return controls, np.array(measurements)


class UnscentedTransformTests(SimpleTestCase):
    def test_weights_sum_to_one(self):
        cfg = ukf.UkfConfig()
        for n in (4, 5):
            wm, wc = cfg.weights(n)
            self.assertAlmostEqual(wm.sum(), 1.0, places=14)
            self.assertEqual(len(wc), 2 * n + 1)
            self.assertAlmostEqual(wc[0], wm[0] + 2.0, places=14)

    def test_sigma_points_reproduce_mean_and_covariance(self):
        cfg = ukf.UkfConfig()
        cov = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 0.5]])
        belief = ukf.GaussianBelief(ad.Tensor([1.0, -2.0, 0.5]), ad.Tensor(cov))
        points = ukf.sigma_points(belief, cfg).values
        wm, wc = cfg.weights(3)
        mean = wm @ points
        np.testing.assert_allclose(mean, [1.0, -2.0, 0.5], atol=1e-14)
        deviations = points - mean
        np.testing.assert_allclose(deviations.T @ (deviations * wc[:, None]), cov, atol=1e-12)

    def test_invalid_alpha(self):
        with self.assertRaises(ParameterError):
            ukf.UkfConfig(alpha=1.5)

    def test_belief_shapes_must_conform(self):
        with self.assertRaises(ShapeError):
            ukf.GaussianBelief(ad.Tensor(np.zeros(3)), ad.Tensor(np.eye(4)))


class LinearOracleTests(SimpleTestCase):
    def test_matches_closed_form_kalman_filter(self):
        controls, measurements = linear_data()
        x0, p0 = np.array([0.8, 0.1, 0.4, 0.9]), np.eye(4) * 0.5
        initial = ukf.GaussianBelief(ad.Tensor(x0), ad.Tensor(p0))
        trajectory = ukf.run_sequence(initial, controls, measurements, LinearModel(), ukf.UkfConfig())
        expected = kalman_filter(x0, p0, controls, measurements)
        self.assertEqual(len(trajectory), 100)
        self.assertLess(np.abs(trajectory.mean_array() - expected).max(), 1e-8)

    def test_posterior_covariances_stay_symmetric_positive_definite(self):
        controls, measurements = linear_data(steps=30, seed=1)
        initial = ukf.GaussianBelief(ad.Tensor(np.zeros(4)), ad.Tensor(np.eye(4)))
        trajectory = ukf.run_sequence(initial, controls, measurements, LinearModel(), ukf.UkfConfig())
        for cov in trajectory.cov_array():
            np.testing.assert_array_equal(cov, cov.T)
            self.assertGreater(np.linalg.eigvalsh(cov).min(), 0.0)

    def test_mismatched_sequence_lengths(self):
        controls, measurements = linear_data(steps=5)
        initial = ukf.GaussianBelief(ad.Tensor(np.zeros(4)), ad.Tensor(np.eye(4)))
        with self.assertRaises(ShapeError):
            ukf.run_sequence(initial, controls[:3], measurements, LinearModel(), ukf.UkfConfig())


class FrictionTests(SimpleTestCase):
    def setUp(self):
        self.cfg = ukf.UkfConfig()
        self.bundle = build_bundle("pc", augmented=True)
        self.u = np.array([0.1, 4.0])
        self.y = np.array([0.2, 0.5, 0.3, 2.0])

    def belief(self, mu=0.6):
        return ukf.augment_with_friction(
            ukf.GaussianBelief(ad.Tensor([2.0, 0.0, 0.3, 2.0]), ad.Tensor(np.eye(4) * 0.1)), mu, 0.04, self.cfg
        )

    def test_augmentation_is_block_diagonal(self):
        cov = self.belief().cov.values
        self.assertEqual(cov.shape, (5, 5))
        np.testing.assert_array_equal(cov[4, :4], np.zeros(4))
        self.assertEqual(cov[4, 4], 0.04)

    def test_prior_outside_bounds_is_rejected(self):
        with self.assertRaises(ParameterError):
            self.belief(mu=2.0)

    def test_predict_keeps_friction_mean(self):
        predicted = ukf.predict(self.belief(0.6), self.u, self.bundle, self.cfg, self.bundle.view())
        self.assertEqual(predicted.mean.values[4], 0.6)

    def test_update_clamps_friction(self):
        cfg = ukf.UkfConfig(mu_min=0.55, mu_max=0.6, mu_prior=0.58)
        updated = ukf.update(self.belief(0.6), self.y, self.u, self.bundle, cfg, self.bundle.view())
        self.assertGreaterEqual(updated.mean.values[4], 0.55)
        self.assertLessEqual(updated.mean.values[4], 0.6)

    def test_initial_belief_from_first_measurement(self):
        belief = ukf.initial_belief(self.y, self.cfg, augmented=True)
        np.testing.assert_array_equal(belief.mean.values, [2.0, 0.0, 0.3, 2.0, 0.6])
        self.assertEqual(belief.cov.values[0, 0], self.cfg.p0_diag)

    def test_measurement_must_have_four_entries(self):
        with self.assertRaises(ShapeError):
            ukf.update(self.belief(), np.zeros(3), self.u, self.bundle, self.cfg, self.bundle.view())

    def test_dropping_friction_recovers_the_belief(self):
        base = ukf.GaussianBelief(ad.Tensor([2.0, 0.1, 0.3, 2.2]), ad.Tensor(np.eye(4) * 0.1 + 0.01))
        augmented = ukf.augment_with_friction(base, 0.5, 0.02, self.cfg)
        np.testing.assert_array_equal(augmented.mean.values[:4], base.mean.values)
        np.testing.assert_array_equal(augmented.cov.values[:4, :4], base.cov.values)

    def test_non_finite_measurement_is_rejected(self):
        y = np.array([0.2, np.nan, 0.3, 2.0])
        with self.assertRaises(DataValidationError):
            ukf.update(self.belief(), y, self.u, self.bundle, self.cfg, self.bundle.view())


class RolloutTests(SimpleTestCase):
    def test_rollout_gradients_match_finite_differences(self):
        bundle = build_bundle("pc", augmented=True)
        ds = data_io.simulate_dataset(
            data_io.SimConfig(duration=0.5, segment_seconds=0.5, maneuvers=("sine_steer",), tires=("B",), seed=4)
        )
        controls, measurements, truth = ds.controls, ds.measurements, ds.truth
        self.assertEqual(len(ds), 50)
        cfg = ukf.UkfConfig()

        def loss(view):
            trajectory = ukf.filter_sequence(bundle, controls, measurements, cfg, view)
            return ad.reduce_mean(ad.square(trajectory.stacked_means()[:, :4] - truth))

        error = ad.grad_check(loss, bundle.parameters, samples=25, floor=1e-6)
        self.assertLess(error, 1e-4)

    def test_divergence_reports_step(self):
        class Exploding(LinearModel):
            def transition(self, view, x, u, ts):
                return ad.matmul(x, A.T) * np.inf

        controls, measurements = linear_data(steps=4)
        initial = ukf.GaussianBelief(ad.Tensor(np.zeros(4)), ad.Tensor(np.eye(4)))
        with self.assertLogs("estimator.core.ukf", level="ERROR"):
            with self.assertRaises(FilterDivergenceError) as ctx:
                ukf.run_sequence(initial, controls, measurements, Exploding(), ukf.UkfConfig())
        self.assertEqual(ctx.exception.step, 1)

    def test_non_finite_measurement_is_a_data_error(self):
        controls, measurements = linear_data(steps=6)
        measurements[3, 1] = np.inf
        initial = ukf.GaussianBelief(ad.Tensor(np.zeros(4)), ad.Tensor(np.eye(4)))
        with self.assertRaisesMessage(DataValidationError, "step 3"):
            ukf.run_sequence(initial, controls, measurements, LinearModel(), ukf.UkfConfig())

    def test_empty_sequence(self):
        bundle = build_bundle("pc")
        trajectory = ukf.filter_sequence(bundle, np.zeros((0, 2)), np.zeros((0, 4)), ukf.UkfConfig())
        self.assertEqual(len(trajectory), 0)


class StraightLineTests(SimpleTestCase):
    def test_unmeasured_speed_is_tracked(self):
        # iq balancing drag at about 3 m/s; the wheels start 5 % fast
        bundle = build_bundle("pc")
        view = bundle.view()
        steps = 60
        controls = np.tile([0.0, 4.6], (steps, 1))
        x, states, measurements = np.array([3.0, 0.0, 0.0, 3.15]), [], []
        for u in controls:
            states.append(x)
            measurements.append(bundle.observe(view, x, u).values)
            x = bundle.transition(view, x, u, 0.01).values
        states = np.array(states)

        trajectory = ukf.filter_sequence(bundle, controls, np.array(measurements), ukf.UkfConfig())
        vx = trajectory.mean_array()[:, 0]
        start = ukf.initial_belief(measurements[0], ukf.UkfConfig()).mean.values[0]
        self.assertGreater(abs(start - states[0, 0]) / states[0, 0], 0.02)
        self.assertLess(abs(vx[50] - states[50, 0]) / states[50, 0], 0.02)
        self.assertLess(np.abs(states[:, 0] - 3.0).max(), 0.3)


class FrictionTrendTests(SimpleTestCase):
    """Friction estimates on noiseless low-grip data, starting from the default prior."""

    maneuvers = ("sine_steer", "launch", "brake_and_turn", "drift_arc")

    def test_estimate_moves_toward_true_friction(self):
        ds = data_io.simulate_dataset(
            data_io.SimConfig(
                duration=8.0, segment_seconds=2.0, maneuvers=self.maneuvers, tires=("C",), noise_std=(0.0,) * 4, seed=0
            )
        )
        truth = ds.friction[0]
        bundle = build_bundle("pc", augmented=True)
        cfg = ukf.UkfConfig()
        for maneuver, (start, stop) in zip(self.maneuvers, ds.segment_bounds()):
            with self.subTest(maneuver=maneuver):
                window = data_io.Window.of(ds, start, stop)
                means = ukf.filter_sequence(bundle, window.controls, window.measurements, cfg).mean_array()
                mu = means[:, 4]
                self.assertEqual(len(mu), 200)
                self.assertTrue(np.isfinite(means).all())
                self.assertTrue(((mu >= cfg.mu_min) & (mu <= cfg.mu_max)).all())
                settled = mu[-50:].mean()
                self.assertLess(abs(settled - truth), abs(cfg.mu_prior - truth))
