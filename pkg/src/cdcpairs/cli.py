"""``cdcpairs`` command line: model, simulate, analyze, reproduce figures.

Exit codes: 0 success, 2 usage or configuration error, 3 unreadable or
corrupt data, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    CombNotDetected,
    Correlogram,
    analyze,
    centered_range,
    comb_period,
    fit_bandwidths,
    fringe_visibility,
)
from .config import ConfigError, describe_keys, load_config, parse_quantity
from .correlation import (
    bin_histogram,
    comb_modulation_depth,
    michelson_visibility,
    pair_jitter,
)
from .rates import (
    accidentals_per_bin,
    coincidence_rate,
    g2_power_sweep,
    power_law_slope,
    spectral_brightness,
    true_pair_rate,
)
from .source import Source, fringe_scans
from .timetags import (
    TagFileError,
    expected_tag_count,
    read_tags,
    read_tags_csv,
    simulate,
    simulate_to_file,
    write_tags_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "CDCPAIRS_THREADS"

FIGURES = ("fig2", "fig3", "fig4", "fig5", "brightness")

_CAVITIES = ("signal_cavity", "idler_cavity", "envelope", "etalon")
_TIME = _CAVITIES + ("grid", "detector")
_RATES = _TIME + ("rates", "counting")
_READS = {
    "spectrum": _CAVITIES + ("grid",),
    "g2": _RATES,
    "gsweep": _RATES,
    "michelson": _CAVITIES + ("michelson",),
    "simulate": _RATES + ("chopper",),
    "analyze": ("detector", "counting", "grid"),
    "reproduce": _RATES + ("chopper", "michelson"),
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _quantity(kind):
    def parse(text):
        try:
            return parse_quantity(text, kind)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    parse.__name__ = kind
    return parse


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _write_csv(path, header, rows):
    out = open(path, "w", newline="") if path != "-" else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()


def _fmt(x):
    return f"{x:.9g}"


def _source(args) -> Source:
    return Source(load_config(args.config))


def _histogram(src: Source, filtered, bin_width, span, pairs):
    return bin_histogram(src.profile(filtered), bin_width, pairs, span=span)


def _hist_rows(hist, floor=0.0):
    return [(f"{t * 1e9:.6f}", _fmt(n + floor)) for t, n in zip(hist.bin_centers, hist.counts)]


# subcommands --------------------------------------------------------------

def cmd_spectrum(args):
    src = _source(args)
    sp = src.spectrum(args.etalon, args.max_detuning)
    w = sp.amplitude_weight / sp.amplitude_weight.max()
    rows = [(_fmt(c), _fmt(x), _fmt(s), _fmt(i)) for c, x, s, i in
            zip(sp.center_detuning, w, sp.signal_width, sp.idler_width)]
    _write_csv(args.out, ["center_hz", "weight", "signal_fwhm_hz", "idler_fwhm_hz"], rows)


def cmd_g2(args):
    src = _source(args)
    span = args.span if args.span is not None else src.config["grid.tau_span"]
    if args.pairs is None:
        model = src.rates_for(args.etalon)
        pairs = true_pair_rate(model, args.pump) * src.counting.integration_time
    else:
        pairs = args.pairs
    hist = _histogram(src, args.etalon, args.bin, span, pairs)
    _write_csv(args.out, ["tau_ns", "counts"], _hist_rows(hist))


def _parse_powers(text):
    items = [t for t in (s.strip() for s in text.split(",")) if t]
    if not items:
        raise CliError("empty power list", EXIT_USAGE)
    try:
        return [parse_quantity(t, "power") for t in items]
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None


def _sweep_rows(src, filtered, powers):
    model = src.rates_for(filtered)
    prof = src.profile(filtered)
    if any(p <= 0 for p in powers):
        raise CliError("powers must be positive", EXIT_USAGE)
    sweep = g2_power_sweep(model, prof, src.counting, powers)
    rows = [(_fmt(p), _fmt(g), _fmt(coincidence_rate(model, prof, src.counting, p))) for p, g in sweep]
    return sweep, rows


SWEEP_HEADER = ["pump_mw", "g2_zero", "coincidence_rate_per_s"]


def cmd_gsweep(args):
    src = _source(args)
    _, rows = _sweep_rows(src, args.etalon, _parse_powers(args.powers))
    _write_csv(args.out, SWEEP_HEADER, rows)


def _michelson_rows(src, case, max_path, step):
    if not step > 0 or max_path < 0:
        raise CliError("step must be positive and max path non-negative", EXIT_USAGE)
    d = np.arange(0, int(round(max_path / step)) + 1) * step
    v = np.atleast_1d(michelson_visibility(src.michelson_spectrum(case), d))
    return d, v, [(f"{x:.6f}", _fmt(y)) for x, y in zip(d, v)]


def cmd_michelson(args):
    src = _source(args)
    case = "classical" if args.classical else ("filtered" if args.filtered else "unfiltered")
    _, _, rows = _michelson_rows(src, case, args.max_path, args.step)
    _write_csv(args.out, ["path_m", "visibility"], rows)


def cmd_simulate(args):
    src = _source(args)
    duration = args.duration if args.duration is not None else src.counting.integration_time
    cfg = src.sim_config(duration, args.pump, args.seed, args.etalon)
    workers = _threads(args)
    if not args.chunked and expected_tag_count(cfg) > cfg.max_tags:
        raise CliError(f"stream too large: ~{expected_tag_count(cfg):.3g} tags; use --chunked",
                       EXIT_USAGE)
    if str(args.out).endswith(".csv"):
        if args.chunked:
            raise CliError("chunked output needs the binary format", EXIT_USAGE)
        stream = simulate(cfg, workers)
        write_tags_csv(stream, args.out)
        n = len(stream)
    else:
        n = simulate_to_file(cfg, args.out, chunked=args.chunked, workers=workers)
    print(f"tags={n}")


def _read_any(path):
    try:
        return read_tags_csv(path) if str(path).endswith(".csv") else read_tags(path)
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror}", EXIT_DATA) from None


def cmd_analyze(args):
    cfg = load_config(args.config)
    stream = _read_any(args.tags)
    summary = analyze(
        stream.signal, stream.idler,
        args.bin if args.bin is not None else cfg["counting.bin_width"],
        args.span if args.span is not None else cfg["grid.tau_span"],
        jitter_fwhm=pair_jitter(cfg["detector.jitter_fwhm"]),
        wall_time=args.wall_time if args.wall_time else None,
        comb_bin_width=args.comb_bin,
        accidental_window=(cfg["counting.accidental_min"], cfg["counting.accidental_max"]))
    text = summary.to_text()
    if args.report:
        with open(args.report, "w", newline="") as fh:
            fh.write(text)
    sys.stdout.write(text)


# reproduce ----------------------------------------------------------------

def _model_correlogram(src, filtered, bin_width, pump):
    """Noise-free expected correlogram (true pairs plus accidental floor)."""
    model = src.rates_for(filtered)
    cfg = src.counting
    pairs = true_pair_rate(model, pump) * cfg.integration_time
    span = src.config["grid.tau_span"]
    hist = _histogram(src, filtered, bin_width, span, pairs)
    acc = accidentals_per_bin(model, pump, cfg) * bin_width / cfg.bin_width
    corr = Correlogram(bin_width, centered_range(bin_width, span), hist.counts + acc, 0, 0,
                       cfg.integration_time)
    return hist, acc, corr


def _reproduce_fig2(src, out, lines):
    for filtered in (False, True):
        tag = "filtered" if filtered else "unfiltered"
        hist, acc, corr = _model_correlogram(src, filtered, src.counting.bin_width, 0.8)
        _write_csv(out / f"fig2_{tag}.csv", ["tau_ns", "counts"], _hist_rows(hist, acc))
        fit = fit_bandwidths(corr, src.pair_jitter_fwhm, src.counting.accidental_window)
        lines += [f"fig2_{tag}_delta_nu_left_hz={_fmt(fit.delta_nu_left)}",
                  f"fig2_{tag}_delta_nu_right_hz={_fmt(fit.delta_nu_right)}"]


def _reproduce_fig3(src, out, lines):
    powers = [0.05, 0.08, 0.1, 0.2, 0.3, 0.5, 0.8, 1.0, 1.5, 2.0]
    for filtered in (False, True):
        tag = "filtered" if filtered else "unfiltered"
        sweep, rows = _sweep_rows(src, filtered, powers)
        _write_csv(out / f"fig3_{tag}.csv", SWEEP_HEADER, rows)
        g1 = dict(sweep)[1.0]
        dark_free = g2_power_sweep(src.rates_for(filtered).without_darks(),
                                   src.profile(filtered), src.counting, powers)
        lines += [f"fig3_{tag}_g2_at_1mw={_fmt(g1)}",
                  f"fig3_{tag}_slope={_fmt(power_law_slope(sweep))}",
                  f"fig3_{tag}_slope_without_darks={_fmt(power_law_slope(dark_free))}"]


def _reproduce_fig4(src, out, lines):
    bw = 256e-12
    for filtered in (False, True):
        tag = "filtered" if filtered else "unfiltered"
        hist, acc, corr = _model_correlogram(src, filtered, bw, 0.8)
        _write_csv(out / f"fig4_{tag}.csv", ["tau_ns", "counts"], _hist_rows(hist, acc))
        depth = comb_modulation_depth(hist, (2e-9, 20e-9))
        try:
            period = f"{comb_period(corr, src.pair_jitter_fwhm) * 1e12:.6g}"
        except CombNotDetected:
            period = "none"
        lines += [f"fig4_{tag}_modulation_depth={_fmt(depth)}", f"fig4_{tag}_comb_period_ps={period}"]


def _reproduce_fig5(src, out, lines):
    wavelength = src.config["michelson.wavelength"]
    for case in ("classical", "unfiltered", "filtered"):
        d, v, rows = _michelson_rows(src, case, 1.0, 0.005)
        _write_csv(out / f"fig5_{case}.csv", ["path_m", "visibility"], rows)
        test = d <= 0.5
        fits = fringe_visibility(fringe_scans(src.michelson_spectrum(case), d[test], wavelength),
                                 wavelength)
        mean_v = np.mean([p.visibility for p in fits if p.ok])
        lines.append(f"fig5_{case}_mean_visibility_0_to_0.5m={_fmt(mean_v)}")


def _reproduce_brightness(src, out, lines):
    r = src.config.section("rates")
    rate, pump = r["single_mode_rate"], r["single_mode_pump"]
    bandwidth = 0.5 * (src.signal_cavity.fwhm + src.idler_cavity.fwhm) / 1e6
    model_rate = coincidence_rate(src.rates_for(True), src.profile(True), src.counting, pump)
    lines += [f"brightness={spectral_brightness(rate, pump, bandwidth):.2f}",
              f"model_coincidence_rate_per_s={_fmt(model_rate)}"]


def cmd_reproduce(args):
    src = _source(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []
    {"fig2": _reproduce_fig2, "fig3": _reproduce_fig3, "fig4": _reproduce_fig4,
     "fig5": _reproduce_fig5, "brightness": _reproduce_brightness}[args.figure](src, out, lines)
    text = "".join(line + "\n" for line in lines)
    with open(out / f"{args.figure}_summary.txt", "w", newline="") as fh:
        fh.write(text)
    sys.stdout.write(text)


# parser -------------------------------------------------------------------

def _threads(args) -> int:
    n = args.threads
    if n is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                n = int(env)
            except ValueError:
                raise CliError(f"{THREADS_ENV} must be an integer, got {env!r}", EXIT_USAGE) from None
    if n is None:
        return 1
    if n < 1:
        raise CliError("thread count must be at least 1", EXIT_USAGE)
    return n


def _apply_threads(args):
    n = _threads(args)
    import numba
    # the fallback threading layer works fine; the notice is noise on a CLI
    warnings.filterwarnings("ignore", message=".*TBB threading layer.*")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cdcpairs",
        description="Model, simulate and analyze a narrow-band cavity-enhanced photon-pair source.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    time_, freq, length = _quantity("time"), _quantity("frequency"), _quantity("length")
    power = _quantity("power")

    def add(name, func, help_):
        epilog = ("config keys read (default, provenance):\n"
                  + describe_keys(_READS[name])
                  + f"\n\nthreads default from ${THREADS_ENV}")
        sp = sub.add_parser(name, help=help_, description=help_, epilog=epilog,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--config", help="configuration file (default: shipped defaults)")
        sp.add_argument("--threads", type=int, help=f"worker cap (default ${THREADS_ENV} or 1)")
        sp.set_defaults(func=func)
        return sp

    s = add("spectrum", cmd_spectrum, "write the mode-line list of the biphoton spectrum")
    s.add_argument("--max-detuning", type=freq, default=None, help="e.g. 6GHz (default grid.max_detuning)")
    s.add_argument("--etalon", type=_on_off, default=False, metavar="on|off")
    s.add_argument("--out", default="-")

    s = add("g2", cmd_g2, "write the expected coincidence histogram of true pairs")
    s.add_argument("--bin", type=time_, default=4e-9, help="bin width, e.g. 4ns or 256ps")
    s.add_argument("--span", type=time_, default=None, help="half width (default grid.tau_span)")
    s.add_argument("--pairs", type=float, default=None,
                   help="total pairs (default: model count at --pump over the integration time)")
    s.add_argument("--pump", type=power, default=0.8, help="pump power in mW")
    s.add_argument("--etalon", type=_on_off, default=False, metavar="on|off")
    s.add_argument("--out", default="-")

    s = add("gsweep", cmd_gsweep, "write g2(0) and coincidence rate against pump power")
    s.add_argument("--powers", default="0.05,0.1,0.2,0.5,1,2", help="comma-separated mW")
    s.add_argument("--etalon", type=_on_off, default=False, metavar="on|off")
    s.add_argument("--out", default="-")

    s = add("michelson", cmd_michelson, "write idler Michelson visibility against path difference")
    s.add_argument("--max-path", type=length, default=1.0)
    s.add_argument("--step", type=length, default=0.005)
    s.add_argument("--filtered", type=_on_off, default=True, metavar="on|off")
    s.add_argument("--classical", action="store_true", help="single-frequency reference laser")
    s.add_argument("--out", default="-")

    s = add("simulate", cmd_simulate, "simulate a detector time-tag file")
    s.add_argument("--duration", type=time_, default=None, help="default counting.integration_time")
    s.add_argument("--pump", type=power, default=0.8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--etalon", type=_on_off, default=False, metavar="on|off")
    s.add_argument("--chunked", action="store_true", help="stream blocks to disk, no size limit")
    s.add_argument("--out", required=True, help="tag file (.ttg binary or .csv)")

    s = add("analyze", cmd_analyze, "estimate g2(0), bandwidths, comb period and rate from a tag file")
    s.add_argument("tags")
    s.add_argument("--bin", type=time_, default=None, help="default counting.bin_width")
    s.add_argument("--comb-bin", type=time_, default=256e-12)
    s.add_argument("--span", type=time_, default=None, help="default grid.tau_span")
    s.add_argument("--wall-time", type=time_, default=None,
                   help="acquisition time (default: last timestamp)")
    s.add_argument("--report", help="also write the key=value summary here")

    s = add("reproduce", cmd_reproduce, "regenerate one figure's CSV set and summary")
    s.add_argument("figure", help="|".join(FIGURES))
    s.add_argument("--out-dir", default=".")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "reproduce" and args.figure not in FIGURES:
            raise CliError(f"unknown figure {args.figure!r}; choose from {', '.join(FIGURES)}", EXIT_USAGE)
        _apply_threads(args)
        args.func(args)
    except CliError as exc:
        print(f"cdcpairs: error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"cdcpairs: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TagFileError as exc:
        print(f"cdcpairs: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"cdcpairs: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
