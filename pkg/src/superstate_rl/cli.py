"""``superstate`` command-line interface.

Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

``--model`` accepts a model file or one of the built-in names
``customer_retail``, ``two_state_toy``, ``tmaze`` and ``gridworld``.
"""
from __future__ import annotations

import argparse
import math
import shlex
import sys
from pathlib import Path

import numpy as np

from . import envs
from .bounds import BoundInputs, ais_bounds, all_bounds
from .errors import ModelFormatError, SuperstateError
from .filtering import estimate_rho, stability_check
from .learning import (PolitexConfig, TdConfig, empirical_regret, make_features, politex_train,
                       recurrent_rows, td_train)
from .modelio import dumps_model, load_model, load_model_unchecked, load_smdp
from .planning import (belief_tree_value, oracle_value, policy_evaluation, theorem2_gap, value_iteration)
from .pomdp import belief_of_history, make_rng
from .report import RunManifest, plot_lines, render_csv, write_text
from .superstates import build, uniform_policy

BUILTINS = {
    "customer_retail": lambda g: envs.customer_retail(gamma=g),
    "two_state_toy": lambda g: envs.two_state_toy(gamma=g),
    "tmaze": lambda g: envs.tmaze(gamma=g),
    "gridworld": lambda g: envs.noisy_gridworld(envs.GridSpec.from_map(noise_p=0.3), gamma=g),
}
ALIASES = {"customer": "customer_retail", "toy2": "two_state_toy"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _get_model(args):
    name = ALIASES.get(args.model, args.model) if not Path(args.model).exists() else args.model
    gamma = getattr(args, "gamma", None)
    if not Path(name).exists() and name in BUILTINS:
        return BUILTINS[name](0.9 if gamma is None else gamma)
    model = load_model(name)
    if gamma is not None:
        model = model.replace(gamma=gamma)
    return model


def _command_line(argv) -> str:
    # --out paths are left out so that a rerun to another file has the same header
    kept, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok in ("--out", "--figure", "--summary-out", "--regret-out"):
            skip = True
            continue
        if tok.split("=", 1)[0] in ("--out", "--figure", "--summary-out", "--regret-out"):
            continue
        kept.append(tok)
    return "superstate " + shlex.join(kept)


def _emit(args, text: str) -> None:
    if getattr(args, "out", None):
        write_text(args.out, text)
    else:
        sys.stdout.write(text)


def _parse_history(s: str):
    if not s:
        return ()
    pairs = []
    for chunk in s.split(","):
        a, _, y = chunk.partition(":")
        if not _:
            raise UsageError(f"history step {chunk!r} must look like action:observation")
        pairs.append((int(a), int(y)))
    return tuple(pairs)


def _int_list(s: str):
    out = []
    for part in s.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise UsageError("empty integer list")
    return tuple(out)


def _float_list(s: str):
    vals = tuple(float(v) for v in s.split(",") if v.strip())
    if not vals:
        raise UsageError("empty list")
    return vals


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args, argv):
    if not Path(args.model).exists() and ALIASES.get(args.model, args.model) in BUILTINS:
        print(f"{args.model}: ok (built-in)")
        return 0
    try:
        model, problems = load_model_unchecked(args.model)
    except OSError as exc:
        print(f"{args.model}: {exc.strerror}", file=sys.stderr)
        return 1
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return 1
    print(f"{args.model}: ok ({model.n_states} states, {model.n_actions} actions, {model.n_obs} observations)")
    return 0


def cmd_stability(args, argv):
    model = _get_model(args)
    rep = stability_check(model)
    if args.format == "csv":
        rows = [[rep.delta_P, rep.delta_Phi, rep.product, rep.stable, rep.rho_dobrushin]]
        header = rep.CSV_HEADER.split(",")
        if args.pairs:
            est = estimate_rho(model, args.pairs, make_rng(args.seed))
            header += ["rho_hat", "max_ratio"]
            rows[0] += [est.rho_hat, est.max_ratio]
        man = RunManifest(_command_line(argv), args.seed, model.content_hash(), {"pairs": args.pairs})
        _emit(args, render_csv(man, header, rows))
        return 0
    text = rep.as_text()
    if args.pairs:
        est = estimate_rho(model, args.pairs, make_rng(args.seed))
        text += f"\nrho_hat       = {est.rho_hat:.12g}\nmax_ratio     = {est.max_ratio:.12g}"
        text += f"\ncontractive   = {str(est.contractive).lower()}"
    _emit(args, text + "\n")
    return 0


def cmd_build_smdp(args, argv):
    import json

    model = _get_model(args)
    smdp = build(model, args.l)
    man = RunManifest(_command_line(argv), None, model.content_hash(), {"l": args.l, "n_superstates": smdp.n_states})
    _emit(args, man.header() + json.dumps(smdp.to_dict()) + "\n")
    if not args.out:
        return 0
    print(f"{smdp.n_states} superstates written to {args.out}", file=sys.stderr)
    return 0


def _smdp_from_args(args):
    if args.smdp:
        return load_smdp(args.smdp), None
    if args.model is None or args.l is None:
        raise UsageError("plan needs --smdp FILE or both --model and --l")
    model = _get_model(args)
    return build(model, args.l), model


def cmd_plan(args, argv):
    smdp, model = _smdp_from_args(args)
    vt = value_iteration(smdp, tol=args.tol, max_iter=args.max_iter)
    rows = []
    for i, B in enumerate(smdp.states):
        label = ";".join(f"{a}:{y}" for a, y in B) or "()"
        for a in range(smdp.n_actions):
            rows.append([label, a, float(vt.q_values[i, a]), float(vt.values[i]), int(vt.greedy[i])])
    man = RunManifest(_command_line(argv), None, model.content_hash() if model else None,
                      {"tol": args.tol, "l": smdp.l, "residual": vt.residual})
    _emit(args, render_csv(man, ["superstate", "action", "q", "value", "greedy"], rows))
    return 0


def cmd_oracle(args, argv):
    model = _get_model(args)
    history = _parse_history(args.history)
    belief = belief_of_history(model, history)
    if args.tol is not None:
        ov = oracle_value(model, belief, args.tol, max_nodes=args.max_nodes)
    else:
        depth = args.depth if args.depth is not None else None
        if depth is None:
            raise UsageError("oracle needs --depth or --tol")
        ov = belief_tree_value(model, belief, depth)
    lines = [
        f"value            = {ov.value!r}",
        f"truncation_bound = {ov.truncation_bound!r}",
        f"depth            = {ov.depth}",
        f"nodes            = {ov.nodes}",
    ]
    if args.l is not None:
        rho = args.rho if args.rho is not None else stability_check(model).rho_dobrushin
        smdp = build(model, args.l)
        rec = theorem2_gap(model, smdp, [history], rho=rho, depth=args.depth if args.tol is None else None,
                           tol=args.tol, oracle_cache={history: ov})[0]
        lines += [
            f"v_smdp           = {rec.v_smdp!r}",
            f"gap              = {rec.gap!r}",
            f"xi_bound         = {rec.xi_bound!r}",
            f"slack            = {rec.slack!r}",
            f"rho              = {rho!r}",
        ]
    _emit(args, "\n".join(lines) + "\n")
    return 0


def cmd_bounds(args, argv):
    inp = BoundInputs(
        r_bar=args.r_bar, gamma=args.gamma if args.gamma is not None else 0.9, rho=args.rho,
        rho_prime=args.rho_prime, l=args.l if args.l is not None else 1, l_prime=args.l_prime,
        tau=args.tau, R=args.R, xi_fa=args.xi_fa, n_actions=args.n_actions, M=args.M,
    )
    rows = all_bounds(inp, n_obs=args.n_obs, N=args.N)
    if args.epsilon is not None or args.delta is not None:
        ais = ais_bounds(args.epsilon or 0.0, args.delta or 0.0, inp.r_bar, inp.gamma)
        rows += [("ais.original", ais["original"]), ("ais.improved", ais["improved"])]
    man = RunManifest(_command_line(argv), None, None, {k: getattr(inp, k) for k in inp.__dataclass_fields__})
    _emit(args, render_csv(man, ["bound", "value"], rows))
    return 0


def _td_config(args, tau):
    return TdConfig(tau=tau, l_prime=args.l_prime, step_size=args.step_size, radius=args.radius,
                    seed=args.seed, log_every=args.log_every)


def cmd_td(args, argv):
    model = _get_model(args)
    smdp = build(model, args.l)
    feats = make_features(smdp, kind=args.features, dim=args.dim, seed=args.seed)
    pol = uniform_policy(smdp.n_states, smdp.n_actions)
    q_ref, _ = policy_evaluation(smdp, pol)
    mask = recurrent_rows(smdp, pol)
    cfg = _td_config(args, args.tau)
    lin_q, diag = td_train(model, args.l, pol, feats, cfg, q_reference=q_ref, error_mask=mask, smdp=smdp)
    rows = [[k, step, rew, norm, err] for k, (step, rew, norm, err) in enumerate(diag.rows, start=1)]
    config = {"l": args.l, "tau": args.tau, "l_prime": diag.warmup, "step_size": diag.step_size,
              "radius": diag.radius, "features": args.features, "dim": feats.dim, "policy": "uniform",
              "log_every": args.log_every, "gamma": model.gamma}
    man = RunManifest(_command_line(argv), args.seed, model.content_hash(), config)
    _emit(args, render_csv(man, ["iter", "step", "reward", "theta_norm", "q_error_if_oracle"], rows))
    if args.figure:
        x = [r[1] for r in rows]
        plot_lines(args.figure, {"q_error": (x, [r[4] for r in rows])}, "step", "max |Q - Q_exact|")
    return 0


def _run_politex(args, model):
    smdp = build(model, args.l)
    feats = make_features(smdp, kind=args.features, dim=args.dim, seed=args.seed)
    cfg = PolitexConfig(M=args.M, td=_td_config(args, args.tau), eta=args.eta, explore_mix=args.explore_mix,
                        seed=args.seed)
    res = politex_train(model, args.l, feats, cfg, smdp=smdp)
    return smdp, feats, cfg, res


def _regret_records(args, model, smdp, res):
    belief = model.init_dist
    if args.depth is not None:
        ov = belief_tree_value(model, belief, args.depth)
    else:
        ov = oracle_value(model, belief, args.tol, max_nodes=args.max_nodes)
    recs = empirical_regret(model, smdp, res.policy_tables(smdp.n_states), res.episode_lengths(), ov.value)
    return recs, ov


def cmd_politex(args, argv):
    model = _get_model(args)
    smdp, feats, cfg, res = _run_politex(args, model)
    vt = value_iteration(smdp, tol=1e-10)
    root = smdp.index_of[()]
    rows = []
    for i, (pol, diag) in enumerate(zip(res.policy_tables(smdp.n_states), res.diagnostics), start=1):
        _, v = policy_evaluation(smdp, pol)
        rows.append([i, diag.steps, diag.total_reward / diag.steps, float(v[root]), float(vt.values[root]),
                     diag.warmup])
    config = {"l": args.l, "M": args.M, "tau": args.tau, "eta": res.eta, "explore_mix": args.explore_mix,
              "features": args.features, "step_size": args.step_size, "l_prime": args.l_prime, "gamma": model.gamma}
    man = RunManifest(_command_line(argv), args.seed, model.content_hash(), config)
    _emit(args, render_csv(man, ["iter", "steps", "mean_reward", "v_policy_root", "v_opt_root", "warmup"], rows))
    if args.figure:
        x = [r[0] for r in rows]
        plot_lines(args.figure, {"policy": (x, [r[3] for r in rows]), "optimum": (x, [r[4] for r in rows])},
                   "iteration", "value at the empty superstate")
    return 0


def cmd_regret(args, argv):
    model = _get_model(args)
    if args.depth is None and args.tol is None:
        raise UsageError("regret needs --depth or --tol for the oracle")
    smdp, feats, cfg, res = _run_politex(args, model)
    recs, ov = _regret_records(args, model, smdp, res)
    config = {"l": args.l, "M": args.M, "tau": args.tau, "eta": res.eta, "explore_mix": args.explore_mix,
              "oracle_depth": ov.depth, "oracle_truncation": ov.truncation_bound, "gamma": model.gamma}
    man = RunManifest(_command_line(argv), args.seed, model.content_hash(), config)
    rows = [[r.iteration, r.v_star_oracle, r.v_policy, r.per_iter_gap, r.cumulative] for r in recs]
    _emit(args, render_csv(man, ["i", "v_star", "v_policy", "gap", "cumulative"], rows))
    if args.figure:
        x = [r[0] for r in rows]
        plot_lines(args.figure, {"cumulative regret": (x, [r[4] for r in rows])}, "iteration", "regret")
    return 0


def cmd_sweep(args, argv):
    from .experiments import SweepConfig, moving_average, summarize, sweep_gridworld

    seeds = _int_list(args.seeds) if args.seeds else tuple(range(args.seed, args.seed + args.n_seeds))
    cfg = SweepConfig(ls=_int_list(args.l), noise=_float_list(args.noise), seeds=seeds, M=args.M, tau=args.tau,
                      l_prime=args.l_prime or 0, eta=args.eta, step_size=args.step_size,
                      explore_mix=args.explore_mix, gamma=args.gamma if args.gamma is not None else 0.9,
                      window=args.final_window)
    results = sweep_gridworld(cfg)
    rows = []
    for r in results:
        ma = moving_average(r.episode_reward, args.ma_window)
        for k, (rew, m) in enumerate(zip(r.episode_reward, ma), start=1):
            rows.append([r.l, r.noise, r.seed, k, rew, float(m)])
    config = dict(cfg.__dict__)
    config["ma_window"] = args.ma_window
    model_hash = envs.noisy_gridworld(envs.GridSpec.from_map(terminal="reset")).content_hash()
    man = RunManifest(_command_line(argv), seeds[0], model_hash, config)
    _emit(args, render_csv(man, ["l", "p", "seed", "episode", "reward", "moving_avg"], rows))
    summary = summarize(results, cfg.window)
    table = render_csv(man, ["l", "p", "mean_final_reward"], [[l, p, v] for (l, p), v in summary.items()])
    if args.summary_out:
        write_text(args.summary_out, table)
    else:
        sys.stdout.write(table if args.out else "\n" + table)
    if args.figure:
        series = {}
        for l in cfg.ls:
            for p in cfg.noise:
                runs = [r.episode_reward for r in results if r.l == l and r.noise == p]
                mean = np.mean(runs, axis=0)
                series[f"l={l}, p={p}"] = (np.arange(1, len(mean) + 1), moving_average(mean, args.ma_window))
        plot_lines(args.figure, series, "POLITEX iteration", "success rate (moving average)")
    return 0


def cmd_env(args, argv):
    g = args.gamma if args.gamma is not None else 0.9
    args.name = ALIASES.get(args.name, args.name)
    if args.name == "customer_retail":
        model = envs.customer_retail(gamma=g)
    elif args.name == "two_state_toy":
        model = envs.two_state_toy(gamma=g)
    elif args.name == "tmaze":
        model = envs.tmaze(corridor_len=args.corridor_len, arm_cap=args.arm_cap, gamma=g)
    else:
        spec = envs.GridSpec.from_map(noise_p=args.noise, terminal=args.terminal)
        model = envs.noisy_gridworld(spec, gamma=g)
    config = {"name": args.name, "gamma": g}
    man = RunManifest(_command_line(argv), None, model.content_hash(), config)
    _emit(args, man.header() + dumps_model(model))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="superstate", description="Finite-window approximations of POMDPs.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    def model_flags(sp, required=True):
        sp.add_argument("--model", required=required, help="model file or built-in name")
        sp.add_argument("--gamma", type=float, default=None, help="override the discount factor")

    def out_flag(sp):
        sp.add_argument("--out", default=None, help="output file (default: stdout)")

    def learn_flags(sp):
        sp.add_argument("--l", type=int, required=True, help="superstate window length")
        sp.add_argument("--tau", type=int, default=5000, help="TD updates per episode")
        sp.add_argument("--l-prime", dest="l_prime", type=int, default=None, help="TD warm-up steps")
        sp.add_argument("--step-size", dest="step_size", type=float, default=None, help="default 1/sqrt(tau)")
        sp.add_argument("--radius", type=float, default=None, help="parameter-ball radius")
        sp.add_argument("--features", choices=["one-hot", "random-projection"], default="one-hot")
        sp.add_argument("--dim", type=int, default=None, help="random-projection dimension")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--log-every", dest="log_every", type=int, default=1000)
        sp.add_argument("--figure", default=None, help="also write a figure (png/pdf/svg)")

    def politex_flags(sp):
        sp.add_argument("--M", type=int, default=50, help="policy updates")
        sp.add_argument("--eta", type=float, default=None, help="default sqrt(8 log|A| / M)")
        sp.add_argument("--explore-mix", dest="explore_mix", type=float, default=0.05)

    sp = add("validate", cmd_validate, "check a model file's invariants")
    sp.add_argument("--model", required=True)

    sp = add("stability", cmd_stability, "Dobrushin filter-stability report")
    model_flags(sp)
    sp.add_argument("--pairs", type=int, default=0, help="also estimate rho from this many random belief pairs")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--format", choices=["text", "csv"], default="text")
    out_flag(sp)

    sp = add("build-smdp", cmd_build_smdp, "enumerate superstates and write the superstate MDP")
    model_flags(sp)
    sp.add_argument("--l", type=int, required=True)
    out_flag(sp)

    sp = add("plan", cmd_plan, "value iteration on the superstate MDP")
    sp.add_argument("--smdp", default=None, help="superstate MDP file from build-smdp")
    model_flags(sp, required=False)
    sp.add_argument("--l", type=int, default=None)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--max-iter", dest="max_iter", type=int, default=100_000)
    out_flag(sp)

    sp = add("oracle", cmd_oracle, "belief-tree value of a history (and its superstate gap with --l)")
    model_flags(sp)
    sp.add_argument("--depth", type=int, default=None, help="zero-leaf expectimax depth")
    sp.add_argument("--tol", type=float, default=None, help="certified half-width target (bounded leaves)")
    sp.add_argument("--history", default="", help="comma-separated action:observation pairs")
    sp.add_argument("--l", type=int, default=None)
    sp.add_argument("--rho", type=float, default=None, help="contraction modulus for the gap bound")
    sp.add_argument("--max-nodes", dest="max_nodes", type=int, default=2_000_000)
    out_flag(sp)

    sp = add("bounds", cmd_bounds, "evaluate the closed-form error bounds")
    sp.add_argument("--r-bar", dest="r_bar", type=float, default=1.0)
    sp.add_argument("--gamma", type=float, default=0.9)
    sp.add_argument("--rho", type=float, default=0.5)
    sp.add_argument("--rho-prime", dest="rho_prime", type=float, default=0.5)
    sp.add_argument("--l", type=int, default=1)
    sp.add_argument("--l-prime", dest="l_prime", type=int, default=0)
    sp.add_argument("--tau", type=int, default=10_000)
    sp.add_argument("--R", type=float, default=1.0)
    sp.add_argument("--xi-fa", dest="xi_fa", type=float, default=0.0)
    sp.add_argument("--n-actions", dest="n_actions", type=int, default=2)
    sp.add_argument("--M", type=int, default=1)
    sp.add_argument("--n-obs", dest="n_obs", type=int, default=None)
    sp.add_argument("--N", type=int, default=None, help="superstate count for the count-based bound")
    sp.add_argument("--epsilon", type=float, default=None)
    sp.add_argument("--delta", type=float, default=None)
    out_flag(sp)

    sp = add("td", cmd_td, "TD learning of the uniform policy's Q-function")
    model_flags(sp)
    learn_flags(sp)
    out_flag(sp)

    sp = add("politex", cmd_politex, "POLITEX policy optimisation")
    model_flags(sp)
    learn_flags(sp)
    politex_flags(sp)
    out_flag(sp)

    sp = add("regret", cmd_regret, "POLITEX run scored against the POMDP oracle")
    model_flags(sp)
    learn_flags(sp)
    politex_flags(sp)
    sp.add_argument("--depth", type=int, default=None)
    sp.add_argument("--tol", type=float, default=None)
    sp.add_argument("--max-nodes", dest="max_nodes", type=int, default=2_000_000)
    out_flag(sp)

    sp = add("sweep", cmd_sweep, "noisy-gridworld grid over window length, noise and seed")
    sp.add_argument("--l", default="1,2,3", help="comma list of window lengths")
    sp.add_argument("--noise", default="0.3", help="comma list of observation noise levels")
    sp.add_argument("--seeds", default=None, help="seed list, e.g. 0-9 or 1,4,7")
    sp.add_argument("--seed", type=int, default=0, help="first seed when --seeds is not given")
    sp.add_argument("--n-seeds", dest="n_seeds", type=int, default=10)
    sp.add_argument("--M", type=int, default=30)
    sp.add_argument("--tau", type=int, default=2000)
    sp.add_argument("--l-prime", dest="l_prime", type=int, default=0)
    sp.add_argument("--eta", type=float, default=5.0)
    sp.add_argument("--step-size", dest="step_size", type=float, default=0.1)
    sp.add_argument("--explore-mix", dest="explore_mix", type=float, default=0.05)
    sp.add_argument("--gamma", type=float, default=None)
    sp.add_argument("--ma-window", dest="ma_window", type=int, default=20)
    sp.add_argument("--final-window", dest="final_window", type=int, default=10)
    sp.add_argument("--summary-out", dest="summary_out", default=None)
    sp.add_argument("--figure", default=None)
    out_flag(sp)

    sp = add("env", cmd_env, "write a built-in environment as a model file")
    sp.add_argument("--name", required=True, choices=sorted(BUILTINS) + sorted(ALIASES))
    sp.add_argument("--gamma", type=float, default=None)
    sp.add_argument("--noise", type=float, default=0.3, help="gridworld observation noise")
    sp.add_argument("--terminal", choices=["absorbing", "reset"], default="absorbing")
    sp.add_argument("--corridor-len", dest="corridor_len", type=int, default=4)
    sp.add_argument("--arm-cap", dest="arm_cap", type=int, default=10)
    out_flag(sp)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"superstate: error: {exc}", file=sys.stderr)
        return 2
    except (ModelFormatError, SuperstateError, ValueError, KeyError) as exc:
        print(f"superstate: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
