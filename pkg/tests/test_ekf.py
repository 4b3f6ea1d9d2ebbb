import numpy as np
import pytest

from rangeloc.ekf import (
    EkfConfig,
    default_config,
    initialize,
    measurement_dim,
    predict,
    propagate_state,
    propagation_jacobian,
    update,
    write_trace_csv,
)
from rangeloc.geometry import (
    InputVector,
    MeasurementA,
    MeasurementB,
    RelativeState,
    Vec2,
    ZERO_INPUT,
    observe_a,
    observe_b,
)

ZERO_STATE = RelativeState(p=Vec2(0, 0), delta_psi=0.0,
                           v1=Vec2(0, 0), v2=Vec2(0, 0))


def make_config(variant="A", x0=ZERO_STATE, **kw):
    return default_config(variant=variant, dt_nominal=0.02, x0=x0, **kw)


def random_state_array(rng):
    x = np.empty(7)
    x[0:2] = rng.uniform(-5, 5, 2)
    x[2] = rng.uniform(-2, 2)
    x[3:7] = rng.uniform(-2, 2, 4)
    return x


def random_input_array(rng):
    u = np.empty(6)
    u[0:4] = rng.uniform(-1, 1, 4)
    u[4:6] = rng.uniform(-1, 1, 2)
    return u


class TestPredict:
    def test_equilibrium_state_unchanged_covariance_grows(self):
        dt = 0.02
        # With zero prior covariance the growth is exactly Q*dt; the
        # transported prior otherwise also enters through the Jacobian.
        cfg = EkfConfig(variant="A", dt_nominal=dt, Q=1e-4 * np.eye(7),
                        Rm=0.01 * np.eye(6), P0=np.zeros((7, 7)),
                        x0=ZERO_STATE)
        ekf = initialize(cfg)
        out = predict(ekf, ZERO_INPUT, dt)
        assert np.array_equal(out.x, ekf.x)
        assert np.allclose(out.P, cfg.Q * dt, atol=1e-15)

        dflt = predict(initialize(make_config()), ZERO_INPUT, dt)
        assert np.all(np.diag(dflt.P) >= np.diag(make_config().P0))

    def test_constant_host_velocity_step(self):
        x0 = RelativeState(p=Vec2(1, 1), delta_psi=0.0,
                           v1=Vec2(1, 0), v2=Vec2(0, 0))
        ekf = initialize(make_config(x0=x0))
        out = predict(ekf, ZERO_INPUT, 0.02)
        assert out.x[0] == pytest.approx(1.0 - 0.02, abs=1e-12)
        assert out.x[1] == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("integrator", ["rk4", "euler"])
    def test_jacobian_matches_propagation_map(self, integrator):
        rng = np.random.default_rng(30)
        dt = 0.05
        h = 1e-6
        for _ in range(30):
            x = random_state_array(rng)
            u = random_input_array(rng)
            F = propagation_jacobian(x, u, dt, integrator)
            for j in range(7):
                xp = x.copy()
                xm = x.copy()
                xp[j] += h
                xm[j] -= h
                col = (propagate_state(xp, u, dt, integrator)
                       - propagate_state(xm, u, dt, integrator)) / (2 * h)
                assert np.allclose(F[:, j], col, rtol=1e-5, atol=1e-8)

    def test_rejects_bad_dt(self):
        ekf = initialize(make_config())
        with pytest.raises(ValueError):
            predict(ekf, ZERO_INPUT, 0.0)
        with pytest.raises(ValueError):
            predict(ekf, ZERO_INPUT, -0.1)
        with pytest.raises(ValueError):
            predict(ekf, ZERO_INPUT, 2.5)

    def test_dpsi_wrapped_after_prediction(self):
        x0 = RelativeState(p=Vec2(1, 0), delta_psi=3.1,
                           v1=Vec2(0, 0), v2=Vec2(0, 0))
        ekf = initialize(make_config(x0=x0))
        u = InputVector(a1=Vec2(0, 0), a2=Vec2(0, 0), r1=0.0, r2=1.0)
        out = predict(ekf, u, 0.2)
        assert -np.pi < out.x[2] <= np.pi


class TestUpdate:
    def test_zero_innovation_keeps_state_shrinks_covariance(self):
        x0 = RelativeState(p=Vec2(2, 1), delta_psi=0.3,
                           v1=Vec2(0.5, 0), v2=Vec2(0, 0.5))
        ekf = initialize(make_config(x0=x0))
        out = update(ekf, observe_a(x0))
        assert np.allclose(out.x, ekf.x, atol=1e-12)
        assert np.trace(out.P) < np.trace(ekf.P)
        assert not out.range_row_skipped

    def test_variant_b_zero_innovation(self):
        x0 = RelativeState(p=Vec2(2, 1), delta_psi=0.3,
                           v1=Vec2(0.5, 0), v2=Vec2(0, 0.5))
        ekf = initialize(make_config(variant="B", x0=x0))
        out = update(ekf, observe_b(x0))
        assert np.allclose(out.x, ekf.x, atol=1e-12)
        assert np.trace(out.P) < np.trace(ekf.P)

    def test_range_row_skipped_near_origin(self):
        x0 = RelativeState(p=Vec2(1e-4, 1e-4), delta_psi=0.0,
                           v1=Vec2(0, 0), v2=Vec2(0, 0))
        ekf = initialize(make_config(x0=x0))
        z = MeasurementA(range=1.0, delta_psi_meas=0.0,
                         v1_meas=Vec2(0, 0), v2_meas=Vec2(0, 0))
        out = update(ekf, z)
        assert out.range_row_skipped
        assert np.all(np.isfinite(out.x))

    def test_variant_measurement_mismatch(self):
        ekf_a = initialize(make_config(variant="A"))
        ekf_b = initialize(make_config(variant="B"))
        zb = MeasurementB(range=1.0, v1_meas=Vec2(0, 0), v2_meas=Vec2(0, 0))
        za = MeasurementA(range=1.0, delta_psi_meas=0.0,
                          v1_meas=Vec2(0, 0), v2_meas=Vec2(0, 0))
        with pytest.raises(TypeError):
            update(ekf_a, zb)
        with pytest.raises(TypeError):
            update(ekf_b, za)

    def test_dpsi_innovation_wrapped(self):
        # Measurement and estimate on opposite sides of the wrap point must
        # produce a small correction, not a near-2pi one.
        x0 = RelativeState(p=Vec2(3, 0), delta_psi=3.1,
                           v1=Vec2(0, 0), v2=Vec2(0, 0))
        ekf = initialize(make_config(x0=x0))
        z = MeasurementA(range=3.0, delta_psi_meas=-3.1,
                         v1_meas=Vec2(0, 0), v2_meas=Vec2(0, 0))
        out = update(ekf, z)
        # True innovation is +2*0.0415..., wrapped; estimate moves up past pi.
        assert abs(out.x[2]) > 3.0

    def test_covariance_stays_symmetric_psd(self):
        rng = np.random.default_rng(31)
        x0 = RelativeState(p=Vec2(2, 2), delta_psi=0.1,
                           v1=Vec2(1, 0), v2=Vec2(0, 1))
        ekf = initialize(make_config(x0=x0, sigma_range=0.5))
        u = InputVector(a1=Vec2(0.1, 0), a2=Vec2(0, 0.1), r1=0.05, r2=-0.05)
        for _ in range(200):
            ekf = predict(ekf, u, 0.02)
            noisy = MeasurementA(
                range=max(0.0, np.linalg.norm(ekf.x[:2]) + rng.normal(0, 0.5)),
                delta_psi_meas=ekf.x[2] + rng.normal(0, 0.05),
                v1_meas=Vec2(*(ekf.x[3:5] + rng.normal(0, 0.05, 2))),
                v2_meas=Vec2(*(ekf.x[5:7] + rng.normal(0, 0.05, 2))),
            )
            ekf = update(ekf, noisy)
            assert np.allclose(ekf.P, ekf.P.T, atol=1e-10)
            assert np.all(np.diag(ekf.P) >= 0)


class TestInitialize:
    def test_case1_initial_error(self):
        truth = RelativeState(p=Vec2(1, 1), delta_psi=0.0,
                              v1=Vec2(1, 0), v2=Vec2(0, 0))
        guess = RelativeState(p=Vec2(0.1, 0.1), delta_psi=1.0,
                              v1=truth.v1, v2=truth.v2)
        ekf = initialize(make_config(x0=guess))
        err = truth.as_array() - ekf.x
        assert err[:3] == pytest.approx([0.9, 0.9, -1.0])

    def test_truth_init_zero_error(self):
        truth = RelativeState(p=Vec2(1, 1), delta_psi=0.0,
                              v1=Vec2(1, 0), v2=Vec2(0, 0))
        ekf = initialize(make_config(x0=truth))
        assert np.array_equal(ekf.x, truth.as_array())

    def test_degenerate_freeze(self):
        x0 = RelativeState(p=Vec2(1, 2), delta_psi=0.2,
                           v1=Vec2(0.3, 0), v2=Vec2(0, 0))
        cfg = EkfConfig(variant="A", dt_nominal=0.02,
                        Q=np.zeros((7, 7)), Rm=0.01 * np.eye(6),
                        P0=np.zeros((7, 7)), x0=x0)
        ekf = initialize(cfg)
        for _ in range(20):
            ekf = update(ekf, observe_a(x0))
        assert np.allclose(ekf.x, x0.as_array(), atol=1e-12)
        assert np.allclose(ekf.P, 0.0)

    def test_rejects_non_psd_matrices(self):
        x0 = ZERO_STATE
        bad = -np.eye(7)
        with pytest.raises(ValueError):
            EkfConfig(variant="A", dt_nominal=0.02, Q=bad,
                      Rm=np.eye(6), P0=np.eye(7), x0=x0)
        asym = np.eye(7)
        asym[0, 1] = 0.5
        with pytest.raises(ValueError):
            EkfConfig(variant="A", dt_nominal=0.02, Q=asym,
                      Rm=np.eye(6), P0=np.eye(7), x0=x0)
        with pytest.raises(ValueError):
            EkfConfig(variant="A", dt_nominal=0.0, Q=np.eye(7),
                      Rm=np.eye(6), P0=np.eye(7), x0=x0)

    def test_measurement_dims(self):
        assert measurement_dim("A") == 6
        assert measurement_dim("B") == 5


class TestTraceCsv:
    def test_header_and_values(self, tmp_path):
        ekf = initialize(make_config())
        path = tmp_path / "trace.csv"
        write_trace_csv(path, [0.0, 0.02], [ekf.x, ekf.x], [ekf.P, ekf.P])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,px,py,dpsi,v1x,v1y,v2x,v2y,p_trace"
        assert len(lines) == 3
        fields = lines[1].split(",")
        assert float(fields[0]) == 0.0
        assert float(fields[-1]) == pytest.approx(np.trace(ekf.P))
