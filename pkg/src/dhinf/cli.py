"""``dhinf analyze|synth|worstcase|regularize|simulate <plant.json>``.

Exit codes: 0 success, 1 infeasible or undecided, 2 input error,
3 numerical failure. ``DHINF_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import Measure, compute_measure, freq_sweep_j0, worst_case
from .descriptor import (
    apply_preliminary_feedback,
    check_impulse_free,
    finite_spectrum,
    output_conditions,
    preliminary_feedback,
    reduce,
)
from .errors import DhinfError, ImpulsivePairError, InputError, UndecidedError
from .fileio import (
    PlantBundle,
    load_plant,
    load_regulator,
    plant_to_dict,
    regulator_to_dict,
    result_document,
    write_result,
)
from .sim import Disturbance, achieved_ratio, simulate, write_plot_script
from .synthesis import (
    SynthesisOptions,
    close_loop,
    optimize_gamma,
    synth_dynamic,
    synth_static_special,
)

log = logging.getLogger("dhinf")


def _measure(value: str) -> Measure:
    return Measure.J0 if value.lower() == "j0" else Measure.J


def _tol(bundle: PlantBundle, args) -> float:
    return float(getattr(args, "tol", None) or bundle.options.get("tol", 1e-9))


def _reduced(bundle: PlantBundle, tol: float):
    try:
        return reduce(bundle.plant, bundle.weights, tol)
    except ImpulsivePairError as exc:
        raise ImpulsivePairError(f"{exc}. Hint: run `dhinf regularize` and pass its result file") from None


class _Loop:
    """The system under study: open loop, or closed by a stored regulator."""

    def __init__(self, bundle: PlantBundle, args):
        self.bundle = bundle
        self.tol = _tol(bundle, args)
        self.regulator = None
        self.K1 = bundle.K1
        plant = bundle.plant
        if getattr(args, "regulator", None):
            self.regulator, K1 = load_regulator(args.regulator)
            if K1 is not None and self.K1 is None:
                self.K1 = K1
                plant = apply_preliminary_feedback(bundle.plant, K1)
        self.reduced = _reduced(PlantBundle(plant, bundle.weights), self.tol)
        original = bundle.original or bundle.plant
        if self.regulator is None:
            self.loop = None
            self.system = self.reduced.open_loop()
        else:
            self.loop = close_loop(self.reduced, self.regulator, original, self.K1)
            self.system = self.loop.system

    def control(self):
        return None if self.loop is None else self.loop.control


def _band_dict(report) -> dict:
    return {"measure": report.kind.value, "gamma_infeasible": report.gamma_infeasible,
            "gamma_feasible": report.gamma_feasible, "half_width": report.half_width}


def _fmt_band(report) -> str:
    mid = 0.5 * (report.gamma_feasible + report.gamma_infeasible)
    return (f"{report.kind.value} in [{report.gamma_infeasible:.8g}, {report.gamma_feasible:.8g}] "
            f"({mid:.6f} +/- {report.half_width:.2e})")


def _output_path(args, command: str) -> Path:
    if args.output:
        return Path(args.output)
    return Path(f"{Path(args.plant).stem}.{command}.json")


def _finish(args, command, bundle, result) -> int:
    path = write_result(_output_path(args, command), result_document(command, bundle, result, sys.argv[1:]))
    print(f"result written to {path}")
    return 0


def cmd_analyze(args) -> int:
    bundle = load_plant(args.plant)
    L = _Loop(bundle, args)
    kind = _measure(args.measure)
    report = compute_measure(L.system, bundle.weights, kind, rtol=args.rtol)
    print(_fmt_band(report))
    result = {"band": _band_dict(report), "certificate_X": report.X,
              "spectrum": np.sort_complex(np.linalg.eigvals(L.system.A))}
    if L.regulator is not None:
        result["regulator"] = regulator_to_dict(L.regulator)
    if args.oracle:
        sweep = freq_sweep_j0(L.system, bundle.weights)
        ref = report if kind is Measure.J0 else compute_measure(L.system, bundle.weights, Measure.J0, rtol=args.rtol)
        gap = abs(sweep - ref.value)
        print(f"frequency sweep J0 = {sweep:.8g}; LMI J0 = {ref.value:.8g}; discrepancy {gap:.2e}")
        result["oracle"] = {"freq_sweep_J0": sweep, "lmi_J0": ref.value, "discrepancy": gap}
    return _finish(args, "analyze", bundle, result)


def cmd_synth(args) -> int:
    bundle = load_plant(args.plant)
    tol = _tol(bundle, args)
    red = _reduced(bundle, tol)
    kind = _measure(args.mode)
    opts = SynthesisOptions(reduce_order=not args.keep_order)
    original = bundle.original or bundle.plant
    p = 0 if args.static else args.dynamic

    def synth(gamma):
        if args.special:
            return synth_static_special(red, bundle.weights, gamma, kind, opts=opts, plant=original, K1=bundle.K1)
        return synth_dynamic(red, bundle.weights, gamma, p, kind, opts, plant=original, K1=bundle.K1)

    search = None
    if args.optimize:
        seed = None
        try:
            seed = compute_measure(red.open_loop(), bundle.weights, kind).value * 1.05
        except DhinfError:
            pass
        search = optimize_gamma(synth, upper=seed, rtol=args.rtol)
        res = search.best
        print(f"gamma search: infimum in [{search.gamma_fail:.6g}, {search.gamma_success:.6g}]")
    else:
        try:
            res = synth(args.gamma)
        except UndecidedError as exc:
            raise UndecidedError(f"{exc}. Suggestion: retry with a larger --gamma or --optimize") from None
    reg = res.regulator
    print(f"{reg.kind} regulator (order {reg.p}); verified closed loop {_fmt_band(res.report)}")
    result = {
        "gamma": res.gamma,
        "regulator": regulator_to_dict(reg),
        "band": _band_dict(res.report),
        "spectrum": res.closed_loop.spectrum,
        "info": {k: v for k, v in res.info.items() if np.isscalar(v) or isinstance(v, list)},
    }
    if bundle.K1 is not None:
        result["K1"] = bundle.K1
    result["output_conditions"] = output_conditions(bundle.plant, tol)._asdict()
    desc = res.closed_loop.descriptor
    if desc is not None:
        result["descriptor_loop"] = desc._asdict()
        result["descriptor_finite_spectrum"] = finite_spectrum(desc.E, desc.A0, tol)
    if search is not None:
        result["gamma_search"] = {"gamma_fail": search.gamma_fail, "gamma_success": search.gamma_success,
                                  "history": [[g, ok] for g, ok in search.history]}
    return _finish(args, "synth", bundle, result)


def _worst(L: _Loop, bundle, kind, rtol):
    report = compute_measure(L.system, bundle.weights, kind, rtol=rtol)
    wc = worst_case(L.system, bundle.weights, report, reduced=L.reduced, control=L.control())
    return report, wc


def _sim_outputs(args, traj, stem: str) -> dict:
    out = {}
    csv_path = Path(args.csv) if args.csv else Path(f"{stem}.csv")
    traj.to_csv(csv_path)
    out["csv"] = str(csv_path)
    print(f"trajectory written to {csv_path}")
    if not args.no_plot:
        plot = csv_path.with_name(csv_path.stem + "_plot.py")
        write_plot_script(plot, csv_path)
        out["plot_script"] = str(plot)
        print(f"plot script written to {plot}")
    return out


def cmd_worstcase(args) -> int:
    bundle = load_plant(args.plant)
    L = _Loop(bundle, args)
    kind = _measure(args.measure)
    report, wc = _worst(L, bundle, kind, args.rtol)
    print(_fmt_band(report))
    print(f"Kstar = {np.array2string(wc.Kstar, precision=5)}")
    print(f"xi10 = {np.array2string(wc.xi10, precision=5)}")
    if wc.x0 is not None:
        print(f"x0 = {np.array2string(wc.x0, precision=5)}")
    energy = float(wc.xi10 @ L.reduced.Hbar @ wc.xi10) if kind is Measure.J else 0.0
    traj = simulate(L.system, bundle.weights, Disturbance.from_gain(wc.Kstar), wc.x_init,
                    args.horizon, args.step)
    result = {"band": _band_dict(report), "Kstar": wc.Kstar, "xi10": wc.xi10, "x0": wc.x0,
              "kernel_residual": wc.kernel_residual}
    try:
        ratio = achieved_ratio(traj, energy)
        print(f"simulated ratio {ratio:.6f} vs {kind.value} = {report.value:.6f}")
        result["achieved_ratio"] = ratio
    except InputError as exc:
        print(f"achieved ratio unavailable: {exc}")
    result.update(_sim_outputs(args, traj, f"{Path(args.plant).stem}.worstcase"))
    return _finish(args, "worstcase", bundle, result)


def cmd_regularize(args) -> int:
    bundle = load_plant(args.plant)
    if bundle.K1 is not None:
        raise InputError("input is already a regularize result")
    tol = _tol(bundle, args)
    seed = args.seed if args.seed is not None else int(bundle.options.get("seed", 0))
    plant = bundle.plant
    if check_impulse_free(plant.E, plant.A, tol).impulse_free:
        print("plant is already impulse-free; K1 = 0 (no-op)")
        pf = preliminary_feedback(plant, args.attempts, seed, tol, force=True)
    else:
        pf = preliminary_feedback(plant, args.attempts, seed, tol)
        print(f"K1 found after {pf.attempts_used} attempt(s)")
    check = check_impulse_free(pf.transformed.E, pf.transformed.A, tol)
    print(f"K1 = {np.array2string(pf.K1, precision=6)}; transformed pair impulse-free: {check.impulse_free}")
    result = {"K1": pf.K1, "attempts_used": pf.attempts_used, "seed": seed,
              "impulse_free": check.impulse_free,
              "transformed_plant": plant_to_dict(pf.transformed, bundle.weights, bundle.options)}
    return _finish(args, "regularize", bundle, result)


def cmd_simulate(args) -> int:
    bundle = load_plant(args.plant)
    L = _Loop(bundle, args)
    n, s = L.system.order, L.system.B.shape[1]
    energy = 0.0
    if args.disturbance == "worstcase":
        kind = _measure(args.measure)
        report, wc = _worst(L, bundle, kind, args.rtol)
        dist, x_init = Disturbance.from_gain(wc.Kstar), wc.x_init
        if kind is Measure.J:
            energy = float(wc.xi10 @ L.reduced.Hbar @ wc.xi10)
    else:
        if args.disturbance == "sine":
            amp, freq = args.amplitude, args.frequency
            dist = Disturbance.from_signal(lambda t: amp * np.sin(freq * t) * np.ones(s))
        else:
            dist = Disturbance.zero()
        x_init = np.zeros(n)
        if args.xi0:
            xi0 = np.array([float(v) for v in args.xi0.split(",")])
            x_init = L.system.init_map @ xi0
            energy = float(xi0 @ L.reduced.Hbar @ xi0)
    traj = simulate(L.system, bundle.weights, dist, x_init, args.horizon, args.step)
    result = {"disturbance": args.disturbance, "x_init": x_init,
              "int_zQz": float(traj.int_zQz[-1]), "int_wPw": float(traj.int_wPw[-1])}
    try:
        result["achieved_ratio"] = achieved_ratio(traj, energy)
        print(f"achieved ratio {result['achieved_ratio']:.6g}")
    except InputError as exc:
        print(f"achieved ratio unavailable: {exc}")
    result.update(_sim_outputs(args, traj, f"{Path(args.plant).stem}.simulate"))
    return _finish(args, "simulate", bundle, result)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dhinf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dhinf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, regulator=True):
        p.add_argument("plant", help="plant JSON file (or a regularize result)")
        p.add_argument("-o", "--output", help="result file (default <plant>.<command>.json)")
        p.add_argument("--tol", type=float, help="rank tolerance (default from options or 1e-9)")
        if regulator:
            p.add_argument("--regulator", help="synth result file whose regulator closes the loop")

    p = sub.add_parser("analyze", help="performance measure band")
    common(p)
    p.add_argument("--measure", choices=["j0", "j"], default="j")
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--oracle", action="store_true", help="cross-check J0 by frequency sweep")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="output-feedback synthesis")
    common(p, regulator=False)
    order = p.add_mutually_exclusive_group(required=True)
    order.add_argument("--static", action="store_true")
    order.add_argument("--dynamic", type=int, metavar="P", help="regulator order 0 <= P <= r")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--gamma", type=float)
    target.add_argument("--optimize", action="store_true", help="bisect on gamma")
    p.add_argument("--mode", choices=["j0", "j"], default="j")
    p.add_argument("--special", action="store_true",
                   help="convex static path for rank C2 = r, D21 = D22 = 0")
    p.add_argument("--keep-order", action="store_true",
                   help="keep order P even when a static regulator would do")
    p.add_argument("--rtol", type=float, default=1e-4, help="gamma search tolerance")
    p.set_defaults(func=cmd_synth)

    def sim_flags(p):
        p.add_argument("--measure", choices=["j0", "j"], default="j")
        p.add_argument("--rtol", type=float, default=1e-6)
        p.add_argument("--horizon", type=float, help="seconds (default 8/|Re slowest pole|)")
        p.add_argument("--step", type=float, help="RK4 step (default min(1e-3, 0.05/rho(A)))")
        p.add_argument("--csv", help="trajectory CSV path")
        p.add_argument("--no-plot", action="store_true", help="skip the plot script")

    p = sub.add_parser("worstcase", help="worst-case disturbance and initial state")
    common(p)
    sim_flags(p)
    p.set_defaults(func=cmd_worstcase)

    p = sub.add_parser("regularize", help="preliminary feedback removing impulsive modes")
    common(p, regulator=False)
    p.add_argument("--attempts", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_regularize)

    p = sub.add_parser("simulate", help="time-domain simulation")
    common(p)
    sim_flags(p)
    p.add_argument("--disturbance", choices=["zero", "worstcase", "sine"], default="zero")
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--frequency", type=float, default=1.0, help="rad/s")
    p.add_argument("--xi0", help="comma-separated reduced initial state")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("DHINF_LOG", "WARNING").upper()
    logging.basicConfig(level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "synth" and args.dynamic is not None and args.dynamic < 0:
        print("error: --dynamic P must be non-negative", file=sys.stderr)
        return InputError.exit_code
    try:
        return args.func(args)
    except DhinfError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error (input): {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
