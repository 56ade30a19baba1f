"""Preset experiments.  Each runner maps a resolved config to ``(report, extra_files)``."""

from __future__ import annotations

import numpy as np

from . import invariants
from .bounds import (
    component_weights,
    frozen_bound_report,
    mixed_oracle_upper_bound,
    mixed_penalty_terms,
    regression_oracle_mc,
    sandwich_violations,
    solve_mixed_projector,
)
from .config import (
    build_mixture,
    build_projector,
    build_schedule,
    build_target,
    build_train_config,
    seed_for,
)
from .datamodel import Gaussian, NoisyLowDimModel, sample_data, sample_mixture
from .geometry import axis_frame, subspace_report
from .report import Table, analytic, from_estimate, given, mc
from .risk import estimate_comparator_approx, estimate_risk, frozen_comparator, mixed_comparator
from .sampler import SamplerConfig, covariance_with_se, quadratic_energy, reverse_sample, samples_csv
from .schedule import h
from .score import AnalyticScore
from .trainer import core_diagnostics, train, truncation_radii

Z_MARGIN = 3.0


def _mc(cfg):
    m = cfg["mc"]
    return dict(n=m["n_samples"], n_batches=m["n_batches"], workers=m["workers"])


def _bound_columns(rep):
    """Time-averaged LB / oracle / UB pieces of a frozen BoundReport."""
    v = rep.values
    ok = not sandwich_violations(rep)
    return {
        "lower_bound": v["lower_bound"],
        "lower_signal": v["lower_signal"],
        "lower_noise": v["lower_noise"],
        "oracle": v.get("oracle"),
        "upper_bound": v.get("upper_bound"),
        "upper_signal": v.get("upper_signal"),
        "upper_stability": v.get("upper_stability"),
        "upper_info": v.get("upper_info"),
        "upper_noise": v.get("upper_noise"),
        "sandwich_ok": ok,
        "outside_hypotheses": bool(rep.meta.get("outside_upper_hypotheses")),
    }


def _node_rows(table, key, rep, terms=("lower_bound", "oracle", "upper_bound")):
    for term in terms:
        if term in rep.series:
            for t, val in zip(rep.nodes, rep.series[term]):
                table.add(**{key[0]: key[1], "t": float(t), "term": term, "value": float(val)})


def _train_frozen(cfg, target, V, sched, stream):
    tr = cfg["trainer"]
    X = sample_data(target, tr["n_train"], seed_for(cfg, "train_data", stream))
    region = truncation_radii(target, tr["n_train"], tr["delta"], tr["C_z"], tr["C_perp"]) if tr["truncation"] else None
    return train(X, V, build_train_config(cfg, stream), sched, region)


# --------------------------------------------------------------------------
# frozen-reuse sweeps


def run_angle_sweep(cfg):
    sched = build_schedule(cfg)
    target = build_target(cfg)
    budget = _mc(cfg)
    train_on = cfg["trainer"]["enabled"]
    reg = cfg["mc"]["regression_check"]
    cols = [("theta", "input"), ("lower_bound", "analytic"), ("oracle", "analytic"), ("upper_bound", "analytic"),
            ("comparator_risk", "mc")]
    if reg:
        cols.append(("regression_oracle", "mc"))
    if train_on:
        cols.append(("trained_risk", "mc"))
    cols += [("sandwich_ok", "label"), ("outside_hypotheses", "label")]
    table = Table(cols)
    nodes = Table([("theta", "input"), ("t", "input"), ("term", "label"), ("value", "analytic")])
    results = {}
    for j, theta in enumerate(cfg["sweep"]["thetas"]):
        V = build_projector(cfg, target, angles=[theta] * min(target.d, target.D - target.d))
        rep = frozen_bound_report(target, V, sched)
        row = _bound_columns(rep)
        _, s_comp = frozen_comparator(target, V)
        comp = estimate_risk(s_comp, target, sched, seed=seed_for(cfg, "comparator", j), **budget)
        row.update(theta=theta, comparator_risk=comp)
        entry = {
            "theta": given(theta),
            "lower_bound": analytic(row["lower_bound"]),
            "oracle": analytic(row["oracle"]),
            "upper_bound": analytic(row["upper_bound"]),
            "comparator_risk": from_estimate(comp),
            "sandwich_ok": row["sandwich_ok"],
            "outside_hypotheses": row["outside_hypotheses"],
        }
        if reg:
            r = regression_oracle_mc(target, V, sched, seed=seed_for(cfg, "regression", j), **budget)
            row["regression_oracle"] = r
            entry["regression_oracle"] = from_estimate(r)
        if train_on:
            res = _train_frozen(cfg, target, V, sched, f"angle{j}")
            est = estimate_risk(res.score_field(), target, sched, seed=seed_for(cfg, "trained_risk", j), **budget)
            row["trained_risk"] = est
            entry["trained_risk"] = from_estimate(est)
            entry["trained_above_lower_bound"] = bool(est.value >= row["lower_bound"] - Z_MARGIN * est.stderr)
        table.add(**row)
        _node_rows(nodes, ("theta", theta), rep)
        results[f"theta_{j}"] = entry
    return {"tables": {"angle_sweep": table.to_dict(), "angle_sweep_nodes": nodes.to_dict()}, "results": results}, {}


def run_dimension_sweep(cfg):
    sched = build_schedule(cfg)
    target = build_target(cfg)
    angles = cfg["projector"]["angles"]
    table = Table([
        ("d1", "input"), ("d2", "input"), ("branch", "label"),
        ("lower_bound", "analytic"), ("oracle", "analytic"),
        ("upper_signal", "analytic"), ("upper_stability", "analytic"), ("upper_info", "analytic"),
        ("upper_noise", "analytic"), ("upper_bound", "analytic"),
        ("sandwich_ok", "label"), ("outside_hypotheses", "label"),
    ])
    results = {}
    for d1 in cfg["sweep"]["d1_values"]:
        r = min(d1, target.d)
        V = build_projector(cfg, target, latent_dim=d1, angles=list(angles[:r]))
        rep = frozen_bound_report(target, V, sched)
        row = _bound_columns(rep)
        row.update(d1=d1, d2=target.d, branch=rep.meta.get("branch", "d1>=d2" if d1 >= target.d else "d1<d2"))
        table.add(**row)
        results[f"d1_{d1}"] = {
            "branch": row["branch"],
            "lower_bound": analytic(row["lower_bound"]),
            "oracle": analytic(row["oracle"]),
            "upper_bound": analytic(row["upper_bound"]),
            "upper_info": analytic(row["upper_info"]),
            "sandwich_ok": row["sandwich_ok"],
        }
    return {"tables": {"dimension_sweep": table.to_dict()}, "results": results}, {}


def run_noise_sweep(cfg):
    sched = build_schedule(cfg)
    base = build_target(cfg)
    V = build_projector(cfg, base)
    table = Table([
        ("sigma", "input"), ("lower_noise", "analytic"), ("lower_bound", "analytic"), ("oracle", "analytic"),
        ("upper_noise", "analytic"), ("upper_bound", "analytic"), ("sandwich_ok", "label"),
    ])
    results = {}
    for j, sigma in enumerate(cfg["sweep"]["sigmas"]):
        target = build_target(cfg, sigma=sigma)
        rep = frozen_bound_report(target, V, sched)
        row = _bound_columns(rep)
        row["sigma"] = sigma
        table.add(**row)
        results[f"sigma_{j}"] = {
            "sigma": given(sigma),
            "lower_noise": analytic(row["lower_noise"]),
            "upper_noise": analytic(row["upper_noise"]),
            "oracle": analytic(row["oracle"]),
            "sandwich_ok": row["sandwich_ok"],
        }
    return {"tables": {"noise_sweep": table.to_dict()}, "results": results}, {}


# --------------------------------------------------------------------------
# mixed training


def _mixed_setup(cfg):
    sched = build_schedule(cfg)
    mix, V1 = build_mixture(cfg)
    m = cfg["mixed"]
    weights = component_weights(mix, sched, m["c_mode"], cfg["mc"]["n_moment_samples"], seed_for(cfg, "moments"))
    c, n_bar = weights
    frames = tuple(comp.frame for comp in mix.components)
    w = tuple(mix.omega[i] * c[i] for i in range(2))
    return sched, mix, V1, weights, frames, w


def _bound_entry(b):
    return {
        "gamma": analytic(b["gamma"]),
        "noise": analytic(b["noise"]),
        "R_1": mc(b["R"][0], b["R_stderr"][0]),
        "R_2": mc(b["R"][1], b["R_stderr"][1]),
        "P": mc(b["P"], b["compression_stderr"] / 2),
        "bracket": mc(b["bracket"], b["bracket_stderr"]),
        "approx_term": given(b["approx_term"]),
        "total": mc(b["total"], b["stderr"]),
    }


def run_mixed_vs_frozen(cfg):
    sched, mix, V1, weights, frames, w = _mixed_setup(cfg)
    k = cfg["mixed"]["k"]
    eta = cfg["mixed"]["eta"]
    budget = _mc(cfg)
    sol = solve_mixed_projector(frames, w, k)
    target = mix.components[1]
    train_on = cfg["trainer"]["enabled"]
    cols = [("projector", "label"), ("dim", "input"), ("gamma", "analytic"), ("noise", "analytic"),
            ("R_1", "mc"), ("R_2", "mc"), ("P", "mc"), ("bracket", "mc"), ("approx_term", "mc"), ("bound", "mc")]
    if train_on:
        cols += [("trained_target_risk", "mc"), ("trained_mixture_risk", "mc")]
    table = Table(cols)
    results = {
        "spectrum": [analytic(v) for v in sol.spectrum],
        "closed_form_error": analytic(sol.closed_form_error),
        "residual": analytic(sol.residual),
        "target_outside_source": analytic(subspace_report(frames[0], frames[1]).residual_V_of_A),
    }
    brackets = {}
    for name, U in (("frozen_V1", V1), ("shared_W_k", sol.W_k)):
        pen = mixed_penalty_terms(mix, U, sched, budget["n"], seed_for(cfg, "penalties", name),
                                  budget["n_batches"], budget["workers"])
        b0 = mixed_oracle_upper_bound(mix, U, sched, eta, 0.0, 0.0, pen, weights)
        brackets[name] = b0
        row = dict(projector=name, dim=U.latent_dim, gamma=b0["gamma"], noise=b0["noise"],
                   R_1=(b0["R"][0], b0["R_stderr"][0]), R_2=(b0["R"][1], b0["R_stderr"][1]),
                   P=(b0["P"], b0["compression_stderr"] / 2), bracket=(b0["bracket"], b0["bracket_stderr"]))
        entry = {"bound_without_approx": _bound_entry(b0)}
        if train_on:
            tr = cfg["trainer"]
            if name == "frozen_V1":
                X = sample_data(target, tr["n_train"], seed_for(cfg, "train_data", name))
            else:
                X, _ = sample_mixture(mix, tr["n_train"], seed_for(cfg, "train_data", name))
            res = train(X, U, build_train_config(cfg, name), sched)
            f_mix, _ = mixed_comparator(mix, U)
            approx = estimate_comparator_approx(res.core, f_mix, U, mix, sched,
                                                seed=seed_for(cfg, "approx", name), **budget)
            b1 = mixed_oracle_upper_bound(mix, U, sched, eta, approx.value, approx.stderr, pen, weights)
            s_net = res.score_field()
            r_t = estimate_risk(s_net, target, sched, seed=seed_for(cfg, "target_risk", name), **budget)
            r_m = estimate_risk(s_net, mix, sched, seed=seed_for(cfg, "mix_risk", name), **budget)
            row.update(approx_term=approx, bound=(b1["total"], b1["stderr"]),
                       trained_target_risk=r_t, trained_mixture_risk=r_m)
            entry.update(bound_with_measured_approx=_bound_entry(b1),
                         trained_target_risk=from_estimate(r_t), trained_mixture_risk=from_estimate(r_m))
        else:
            row.update(bound=(b0["total"], b0["stderr"]))
        table.add(**row)
        results[name] = entry
    f, s = brackets["frozen_V1"], brackets["shared_W_k"]
    results["shared_beats_frozen_at_3se"] = bool(
        s["total"] + Z_MARGIN * s["stderr"] < f["total"] - Z_MARGIN * f["stderr"]
    )
    results["gamma_W_k"] = analytic(s["gamma"])
    results["gamma_V1"] = analytic(f["gamma"])
    return {"tables": {"mixed_vs_frozen": table.to_dict()}, "results": results}, {}


def run_containment_demo(cfg):
    sched, mix, V1, weights, frames, w = _mixed_setup(cfg)
    c, n_bar = weights
    budget = _mc(cfg)
    span = int(np.linalg.matrix_rank(np.hstack([f.data for f in frames]), tol=1e-10))
    ks = cfg["sweep"]["k_values"] or list(range(span, mix.D + 1))
    om = mix.omega
    table = Table([("k", "input"), ("gamma", "analytic"), ("noise", "analytic"), ("noise_expected", "analytic"),
                   ("R_1", "mc"), ("R_1_expected", "analytic"), ("R_2", "mc"), ("R_2_expected", "analytic"),
                   ("P", "mc"), ("bracket", "mc")])
    results = {"span_dim": given(span)}
    for k in ks:
        sol = solve_mixed_projector(frames, w, k)
        pen = mixed_penalty_terms(mix, sol.W_k, sched, budget["n"], seed_for(cfg, "penalties", k),
                                  budget["n_batches"], budget["workers"])
        b = mixed_oracle_upper_bound(mix, sol.W_k, sched, cfg["mixed"]["eta"], 0.0, 0.0, pen, weights)
        contained = k >= span
        noise_exp = sum(om[i] * n_bar[i] * (mix.D - k) for i in range(2)) if contained else None
        R_exp = [n_bar[i] * (k - frames[i].latent_dim) for i in range(2)] if contained else [None, None]
        table.add(k=k, gamma=b["gamma"], noise=b["noise"], noise_expected=noise_exp,
                  R_1=(b["R"][0], b["R_stderr"][0]), R_1_expected=R_exp[0],
                  R_2=(b["R"][1], b["R_stderr"][1]), R_2_expected=R_exp[1],
                  P=(b["P"], b["compression_stderr"] / 2), bracket=(b["bracket"], b["bracket_stderr"]))
        results[f"k_{k}"] = {
            "contained": contained,
            "gamma": analytic(b["gamma"]),
            "noise": analytic(b["noise"]),
            "noise_expected": analytic(noise_exp),
            "R_expected": [analytic(v) for v in R_exp],
            "bound": _bound_entry(b),
        }
    return {"tables": {"containment": table.to_dict()}, "results": results}, {}


# --------------------------------------------------------------------------
# sampler and invariants


def run_sampler_demo(cfg):
    sched = build_schedule(cfg)
    sp = cfg["sampler"]
    n = sp["n_chains"]
    std1 = NoisyLowDimModel(axis_frame(2, [0]), Gaussian.standard(1), 0.0)
    scfg = SamplerConfig(sp["n_steps"], sched, seed_for(cfg, "sampler", "std1"), sp["grid"])
    x = reverse_sample(AnalyticScore(std1), scfg, n, 2)
    cov, se = covariance_with_se(x)
    expect = np.diag([1.0, float(h(sched.t0))])
    z = np.abs(cov - expect) / se
    table = Table([("entry", "label"), ("covariance", "mc"), ("expected", "analytic"), ("z", "label")])
    for (i, j), name in zip([(0, 0), (0, 1), (1, 1)], ["c00", "c01", "c11"]):
        table.add(entry=name, covariance=(cov[i, j], se[i, j]), expected=expect[i, j], z=float(z[i, j]))
    results = {
        "std1_max_z": analytic(float(z.max())),
        "std1_within_5se": bool(z.max() <= 5.0),
    }

    target = build_target(cfg)
    V = build_projector(cfg, target)
    if cfg["trainer"]["enabled"]:
        res = _train_frozen(cfg, target, V, sched, "sampler")
        s_freeze = res.score_field()
        diag = core_diagnostics(res.core, sample_data(target, 2048, seed_for(cfg, "diag")) @ V.data, sched,
                                seed_for(cfg, "diag_probe"))
        results["core_diagnostics"] = {k: analytic(v) for k, v in diag.items()}
        label = "trained_frozen"
    else:
        _, s_freeze = frozen_comparator(target, V)
        label = "frozen_comparator"
    cfg_f = SamplerConfig(sp["n_steps"], sched, seed_for(cfg, "sampler", "frozen"), sp["grid"])
    cfg_a = SamplerConfig(sp["n_steps"], sched, seed_for(cfg, "sampler", "analytic"), sp["grid"])
    x_f = reverse_sample(s_freeze, cfg_f, n, target.D)
    x_a = reverse_sample(AnalyticScore(target), cfg_a, n, target.D)
    P_off = target.frame.perp_projector()
    Q = V.perp_projector() @ target.frame.projector()
    energy = Table([("score", "label"), ("off_support_energy", "mc"), ("misaligned_quadratic_form", "mc")])
    em = {}
    for name, xs in (("analytic", x_a), (label, x_f)):
        e_off = quadratic_energy(xs, P_off)
        e_q = quadratic_energy(xs, 0.5 * (Q + Q.T))
        energy.add(score=name, off_support_energy=e_off, misaligned_quadratic_form=e_q)
        em[name] = (e_off, e_q)
    (fa, _), (ff, _) = em["analytic"], em[label]
    results["frozen_score"] = label
    results["off_support_inflated_at_3se"] = bool(ff[0] - fa[0] > Z_MARGIN * np.hypot(ff[1], fa[1]))
    results["energies"] = {
        name: {"off_support": mc(*v[0]), "misaligned_quadratic_form": mc(*v[1])} for name, v in em.items()
    }
    extra = {"samples/std1_analytic.csv": samples_csv(x), f"samples/{label}.csv": samples_csv(x_f),
             "samples/target_analytic.csv": samples_csv(x_a)}
    return {"tables": {"sampler_std1": table.to_dict(), "sampler_energy": energy.to_dict()}, "results": results}, extra


def run_invariant_suite(cfg):
    sched = build_schedule(cfg)
    rows = invariants.run_all(cfg["invariants"], sched, cfg["mc"]["n_samples"], cfg["seed"])
    table = Table([("name", "label"), ("statistic", "analytic"), ("tolerance", "input"), ("passed", "label"),
                   ("detail", "label")])
    for r in rows:
        table.add(**r)
    results = {r["name"]: {"statistic": analytic(r["statistic"]), "passed": r["passed"]} for r in rows}
    results["all_passed"] = all(r["passed"] for r in rows)
    return {"tables": {"invariants": table.to_dict()}, "results": results}, {}


RUNNERS = {
    "angle-sweep": run_angle_sweep,
    "dimension-sweep": run_dimension_sweep,
    "noise-sweep": run_noise_sweep,
    "mixed-vs-frozen": run_mixed_vs_frozen,
    "containment-demo": run_containment_demo,
    "sampler-demo": run_sampler_demo,
    "invariant-suite": run_invariant_suite,
}


def run(cfg: dict):
    """Execute the preset named in a resolved config."""
    body, extra = RUNNERS[cfg["preset"]](cfg)
    echo = {k: v for k, v in cfg.items() if k != "out"}
    report = {"preset": cfg["preset"], "seed": cfg["seed"], "config": echo, **body}
    return report, extra
