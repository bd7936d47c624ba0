"""Acceptance gate: one PASS/FAIL line per criterion, tolerances fixed below."""

import hashlib
import math
import subprocess
import sys
import time
from pathlib import Path

import pytest

from mesonbell.detector import (
    EfficiencyModel,
    hardy_table,
    ident_probs_channel,
    ident_probs_window,
    pss_closed_form,
    pss_integral_oracle,
)
from mesonbell.inequalities import (
    FIG1_ETA_TAUS,
    Relation,
    ch_Q,
    chsh_search,
    curve_csv,
    curves_nested,
    eberhard_H,
    threshold_scan,
    wigner_uchiyama,
)
from mesonbell.lhv import lhv_vs_qm_report
from mesonbell.meson import MesonParams
from mesonbell.montecarlo import estimate_inequalities, generate_events, write_event_log

TESTS = Path(__file__).parent


@pytest.fixture
def gate(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail

    return report


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def test_criterion_01_identification(gate, kaon):
    (w, c), dt = _timed(lambda: (ident_probs_window(4.8, kaon), ident_probs_channel(kaon)))
    checks = [
        abs(w[0] - 0.9918) <= 5e-5,
        abs(w[1] - 0.9918) <= 5e-5,
        abs(c[0] - 0.99594) <= 5e-6,
        abs(c[1] - 0.99997) <= 5e-6,
        dt < 1.0,
    ]
    gate(1, all(checks),
         f"window p_S={w[0]:.6f} p_L={w[1]:.6f} (0.9918 +/- 5e-5); "
         f"channel p_S={c[0]:.7f} (0.99594 +/- 5e-6) p_L={c[1]:.7f} (0.99997 +/- 5e-6)")


def test_criterion_02_hardy_constants(gate, kaon):
    eta, eta_tau = 0.7, 0.9
    t = hardy_table(-1, EfficiencyModel.build("channel", eta, 0.4, eta_tau, kaon), kaon)
    a = t.p_k0_kl / (eta * eta_tau)
    b = t.p_ks_ks / eta_tau**2
    ok = abs(a - 6.77e-4) <= 0.01e-4 and abs(b - 1.19e-5) <= 0.02e-5
    gate(2, ok, f"p_k0_kl/(eta eta_tau)={a:.5e} (6.77e-4 +/- 1e-6); p_ks_ks/eta_tau^2={b:.5e} (1.19e-5 +/- 2e-7)")


def test_criterion_03_integral_oracle(gate, kaon):
    closed = pss_closed_form(EfficiencyModel.build("channel", 1, 1, 1, kaon), kaon)
    (loose, tight), dt = _timed(lambda: (pss_integral_oracle(1.0, kaon), pss_integral_oracle(1.0, kaon, rtol=1e-9)))
    r1, r2 = abs(loose / closed - 1), abs(tight / closed - 1)
    gate(3, r1 < 1e-2 and r2 < 1e-4 and dt < 1.0,
         f"relative error default={r1:.2e} (<1e-2), tightened={r2:.2e} (<1e-4), {dt:.3f} s (<1 s)")


def test_criterion_04_headline_values(gate, kaon):
    t = hardy_table(-1, EfficiencyModel.build("channel", 1, 1, 1, kaon), kaon)
    h, q = eberhard_H(t).value, ch_Q(t).value
    gate(4, 58 <= h <= 64 and abs(q - 1.25) <= 0.01, f"H={h:.4f} (in [58, 64]); Q={q:.4f} (1.25 +/- 0.01)")


def test_criterion_05_thresholds(gate, kaon):
    def run():
        eq = threshold_scan((1.0,), Relation.EQUAL, p=kaon)[0].eta
        dbl = threshold_scan((1.0,), Relation.DOUBLE, p=kaon)[0].eta
        return eq, dbl

    (eq, dbl), dt = _timed(run)
    ok = abs(eq - 0.0226) <= 0.001 and abs(dbl - 0.0165) <= 0.001 and dt < 1.0
    gate(5, ok, f"eta=eta_bar boundary {eq:.5f} (0.0226 +/- 0.001); eta=eta_bar/2 boundary {dbl:.5f} "
                f"(0.0165 +/- 0.001); {dt:.3f} s (<1 s)")


def test_criterion_06_fig1_curves(gate, kaon, tmp_path):
    def run():
        pts = threshold_scan(FIG1_ETA_TAUS, Relation.GRID, p=kaon)
        path = tmp_path / "curves.csv"
        path.write_text(curve_csv(pts), encoding="utf-8", newline="\n")
        return pts, path

    (pts, path), dt = _timed(run)
    taus = sorted({pt.eta_tau for pt in pts})
    rows = path.read_text().count("\n") - 1
    ok = taus == sorted(FIG1_ETA_TAUS) and curves_nested(pts) and rows == len(pts) and dt < 10.0
    gate(6, ok, f"{len(taus)} curves, {rows} CSV rows, nested={curves_nested(pts)}, {dt:.2f} s (<10 s)")


def test_criterion_07_chsh(gate, kaon):
    control = MesonParams.defaults(gamma_S=0.0, gamma_L=0.0)
    (r, c), dt = _timed(lambda: (chsh_search(kaon), chsh_search(control)))
    ok = r.max_value < 2.0 and c.max_value > 2.7 and dt < 30.0
    gate(7, ok, f"kaon max|S|={r.max_value!r} at {tuple(round(x, 4) for x in r.argmax)} (<2); "
                f"control max|S|={c.max_value:.6f} (>2.7); {dt:.1f} s (<30 s)")


def test_criterion_08_wigner(gate, kaon):
    eps = kaon.epsilon
    d = wigner_uchiyama(eps)
    i = wigner_uchiyama(1j * abs(eps))
    factor = eps.real / abs(eps) ** 2
    gate(8, d.violated and factor > 100 and not i.violated,
         f"Re eps/|eps|^2={factor:.1f} (>100), default violated={d.violated}, eps=i|eps| violated={i.violated}")


@pytest.mark.parametrize("species", ["b", "kaon"])
def test_criterion_09_lhv_audit(gate, kaon, bmeson, species):
    p = bmeson if species == "b" else kaon
    rep, dt = _timed(lambda: lhv_vs_qm_report(1_000_000, p, seed=7))
    z = max(rep.max_abs_z.values())
    w = rep.chsh
    ok = z < 5 and w.agree and dt < 60.0
    gate(9, ok, f"[{species}] max|z|={z:.2f} (<5 on 50x50); windowed S lhv={w.S_lhv:.4f} "
                f"qm={w.S_qm:.4f} sigma={w.sigma_S:.4f} (agree within 3 sigma: {w.agree}); {dt:.1f} s (<60 s)")


def test_criterion_10_monte_carlo(gate, kaon, tmp_path):
    eff = EfficiencyModel.build("channel", 0.05, 0.05, 1.0, kaon)

    def digest(log, name):
        csv_path, meta_path = write_event_log(log, tmp_path / name)
        h = hashlib.sha256(csv_path.read_bytes() + meta_path.read_bytes()).hexdigest()
        csv_path.unlink()
        return h

    def run():
        log = generate_events(-1, eff, 10_000_000, 42, p=kaon)
        est = estimate_inequalities(log)
        first = digest(log, "a")
        del log
        second = digest(generate_events(-1, eff, 10_000_000, 42, p=kaon), "b")
        return est, first == second

    (est, same), dt = _timed(run)
    h, s = est.H.value, est.H.sigma
    ok = abs(h - 2.62) < 4 * s and same and dt < 120.0
    gate(10, ok, f"H_est={h:.4f} +/- {s:.4f} vs 2.62 (|diff|={abs(h - 2.62) / s:.2f} sigma, <4); "
                 f"byte-identical re-run={same}; {dt:.1f} s (<120 s)")


def test_criterion_11_property_suites(gate):
    files = sorted(str(p) for p in TESTS.glob("test_*.py") if p.name != "test_acceptance.py")
    t0 = time.perf_counter()
    res = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-m", "invariant", "-p", "no:cacheprovider", *files],
        capture_output=True, text=True,
    )
    dt = time.perf_counter() - t0
    summary = res.stdout.strip().splitlines()[-1] if res.stdout.strip() else res.stderr[-200:]
    gate(11, res.returncode == 0 and dt < 120.0, f"invariant suites: {summary}; {dt:.1f} s (<120 s)")
