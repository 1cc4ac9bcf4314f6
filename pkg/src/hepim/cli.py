"""Command-line entry point: ``hepim <group> <command> [options]``."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from importlib import resources

import numpy as np

from .errors import HepimError

EXIT_OK, EXIT_INVALID, EXIT_INCONSISTENT = 0, 2, 3

TABLE4_REF_J = {"mnist": 1.188716, "har": 0.851282, "adult": 0.031736}


def config_hash(args: argparse.Namespace) -> str:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func" and not k.startswith("_")}
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def header(args) -> str:
    from . import __version__
    return f"# hepim {__version__} {args._command} config={config_hash(args)} seed={args.seed}"


def emit(args, text: str):
    """Print, and also write to ``--out`` with the versioned header line."""
    print(text)
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            fh.write(header(args) + "\n" + text.rstrip("\n") + "\n")


def _rng(args):
    return np.random.default_rng(args.seed)


def _parse_list(text: str, kind=float) -> list:
    return [kind(v) for v in text.replace(",", " ").split()]


# ------------------------------------------------------------------ he

def cmd_he_keygen(args):
    from .bfv import keygen
    from .presets import load_preset

    params = load_preset(args.preset)
    sk = keygen(params, _rng(args))
    doc = {"preset": args.preset, "n": params.n, "primes": list(params.primes), "t": params.t,
           "secret_key": sk.s.tolist()}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh)
    print(f"keygen ok preset={args.preset} n={params.n} primes={list(params.primes)} t={params.t}")
    return EXIT_OK


def cmd_he_roundtrip(args):
    from .bfv import ciphertext_bytes, decode, decrypt, encode, encrypt, keygen, noise_budget
    from .presets import load_preset

    params = load_preset(args.preset)
    rng = _rng(args)
    sk = keygen(params, rng)
    values = rng.integers(0, params.t, params.n)
    ct = encrypt(encode(values, params), sk, rng)
    ok = decode(decrypt(ct, sk)) == values.tolist()
    print(f"roundtrip {'ok' if ok else 'FAILED'} preset={args.preset} ciphertext_bytes={ciphertext_bytes(params)} "
          f"noise_budget_bits={noise_budget(ct, sk):.1f}")
    return EXIT_OK if ok else EXIT_INCONSISTENT


def cmd_he_bench(args):
    from .bfv import ciphertext_bytes, decrypt, encode, encrypt, he_add, he_mul, he_mul_scalar, keygen
    from .presets import load_preset

    params = load_preset(args.preset)
    rng = _rng(args)
    sk = keygen(params, rng)
    pt = encode(rng.integers(0, params.t, params.n), params)
    a, b = encrypt(pt, sk, rng), encrypt(pt, sk, rng)
    ops = {"encrypt": lambda: encrypt(pt, sk, rng), "decrypt": lambda: decrypt(a, sk),
           "add": lambda: he_add(a, b), "mul_scalar": lambda: he_mul_scalar(a, 7),
           "mul": lambda: he_mul(a, b)}
    lines = [f"ciphertext_bytes={ciphertext_bytes(params)}", "op,seconds"]
    for name, fn in ops.items():
        fn()
        t = time.perf_counter()
        for _ in range(args.reps):
            fn()
        lines.append(f"{name},{(time.perf_counter() - t) / args.reps:.6g}")
    emit(args, "\n".join(lines))
    return EXIT_OK


# ------------------------------------------------------------------ svm

def _load_model(args):
    from .svm import load_libsvm_model

    data = resources.files("hepim.data")
    if args.model:
        text = open(args.model).read()
        sidecar = open(args.sidecar).read() if args.sidecar else None
    else:
        text = data.joinpath("toy_model.txt").read_text()
        sidecar = data.joinpath("toy_model.json").read_text()
    return load_libsvm_model(text, sidecar)


def cmd_svm_infer(args):
    from .bfv import keygen
    from .pim.compiler import compile_svm_linear, svm_inputs, svm_partial_result
    from .presets import load_preset
    from .svm import (encrypt_model, fly_finish, plaintext_reference_inference, quantize_input,
                      read_samples_csv, rodent_linear_phase)

    model = _load_model(args)
    source = args.input or str(resources.files("hepim.data").joinpath("toy_input.csv"))
    samples = read_samples_csv(source, model.dimension)
    if args.mode == "grid" and args.preset != "desk" and not args.allow_slow:
        print("grid mode at this preset is bit-level and slow; pass --allow-slow", file=sys.stderr)
        return EXIT_INVALID
    rng = _rng(args)
    if args.mode != "plain":
        params = load_preset(args.preset)
        sk = keygen(params, rng)
        em = encrypt_model(model, sk, rng)
    if args.mode == "grid":
        prog = compile_svm_linear({"dimension": model.dimension, "classes": model.class_count}, params)
    lines = ["sample,predicted,reference,agree"]
    agree = 0
    for i, raw in enumerate(samples):
        x = quantize_input(raw, model.quantizer).astype(np.int64)
        ref = plaintext_reference_inference(model, x)
        if args.mode == "plain":
            got = ref
        elif args.mode == "functional":
            got = fly_finish(rodent_linear_phase(em, x), sk, model)
        else:
            grid = prog.run(prog.fresh_grid(), svm_inputs(prog, em, x), validate=False)
            got = fly_finish(svm_partial_result(prog, grid, em), sk, model)
        agree += got == ref
        lines.append(f"{i},{model.labels[got]},{model.labels[ref]},{int(got == ref)}")
    lines.append(f"agreement: {agree}/{len(samples)} mode={args.mode}")
    emit(args, "\n".join(lines))
    return EXIT_OK if agree == len(samples) else EXIT_INCONSISTENT


# ------------------------------------------------------------------ sim

def benchmark_program(name: str):
    """Count-mode program and payload sizes for a named benchmark."""
    from .offload import BENCHMARKS
    from .pim.compiler import compile_svm_linear
    from .presets import load_preset
    from .runtime import IoSpec

    b = BENCHMARKS[name]
    params = load_preset("paper")
    prog = compile_svm_linear({"dimension": b.dimension, "classes": b.classes}, params, streamed=True)
    k = len(params.primes)
    io = IoSpec(input_elements=b.dimension, output_elements=b.classes * 2 * k * params.n,
                output_bits=params.prime_bits)
    return prog, io


def desk_fuzz_case(seed: int, classes: int = 2, dimension: int = 4):
    """Desk-size SVM program with a random model and input, plus its uninterrupted result."""
    from .bfv import keygen
    from .pim.compiler import compile_svm_linear, svm_inputs
    from .presets import load_preset
    from .runtime import IoSpec
    from .svm import encrypt_model, random_model

    params = load_preset("desk")
    rng = np.random.default_rng(seed)
    sk = keygen(params, rng)
    em = encrypt_model(random_model(rng, classes=classes, dimension=dimension, max_svs=params.n), sk, rng)
    prog = compile_svm_linear({"dimension": dimension, "classes": classes}, params)
    inputs = svm_inputs(prog, em, rng.integers(0, 8, dimension))
    ref = prog.run(prog.fresh_grid(), inputs, validate=False)
    io = IoSpec(input_elements=dimension, output_elements=len(prog.outputs) * params.n,
                output_bits=params.prime_bits)
    expected = [int(v) for n in prog.outputs for v in prog.read(ref, n)]
    return prog, inputs, io, ref.snapshot(), expected


def interrupt_fuzz(profile: str, power: float, schedules: int, seed: int, case=None) -> tuple[int, list]:
    """Replay randomized interruption schedules on the desk program; count consistent runs."""
    from .runtime import HarvesterConfig, run_episode

    prog, inputs, io, snap, expected = case or desk_fuzz_case(seed)
    rng = np.random.default_rng(seed)
    good, failures = 0, []
    for s in range(schedules):
        r = np.random.default_rng(rng.integers(1 << 62))
        forced = np.sort(r.integers(0, prog.steps, int(r.integers(1, 25))))
        h = HarvesterConfig.for_profile(profile, power, initial_charge=float(r.random()))
        rep = run_episode(prog, prog.fresh_grid(), h, io=io, profile=profile, inputs=inputs,
                          interrupts=forced, rng=r)
        ok = (rep.snapshot == snap and rep.transmitted == expected and rep.pc_trace_ok
              and rep.reperformed <= rep.restarts)
        good += ok
        if not ok:
            failures.append(s)
    return good, failures


def _harvester_overrides(args) -> dict:
    if not args.config:
        return {}
    with open(args.config) as fh:
        cfg = json.load(fh)
    return cfg.get("harvester", cfg)


def cmd_sim_sweep(args):
    from .runtime import rows_to_csv, sweep

    profiles = ("modern", "projected") if args.profile == "both" else (args.profile,)
    powers = _parse_list(args.powers)
    prog, io = benchmark_program(args.benchmark)
    rows = sweep(prog, powers, profiles, io=io, **_harvester_overrides(args))
    emit(args, rows_to_csv(rows).rstrip("\n"))
    status = EXIT_OK
    if args.interrupt_fuzz:
        case = desk_fuzz_case(args.seed)
        for profile in profiles:
            for p in powers:
                good, bad = interrupt_fuzz(profile, p, args.interrupt_fuzz, args.seed, case)
                print(f"consistent: {good}/{args.interrupt_fuzz} profile={profile} power_w={p:g}")
                if bad:
                    status = EXIT_INCONSISTENT
    return status


# ------------------------------------------------------------------ offload

def cmd_offload_table3(args):
    from .offload import format_table3, table3

    e_r = None
    if args.energy_source == "model":
        from .pim.energy import default_peripheral, mtj_profile
        from .runtime import HarvesterConfig, run_episode

        e_r = {}
        for key in ("mnist", "har", "adult"):
            prog, io = benchmark_program(key)
            rep = run_episode(prog, None, HarvesterConfig.for_profile("modern", 1.0), io=io, profile="modern",
                              peripheral=default_peripheral())
            e_r[key] = rep.energy
    emit(args, format_table3(table3(e_r), args.format))
    return EXIT_OK


# ------------------------------------------------------------------ bench

def polymult_report(profile: str) -> list[dict]:
    from .pim.calibrate import POLYMULT_TARGETS
    from .pim.compiler import compile_poly_mult
    from .pim.energy import default_peripheral, mtj_profile

    rows = []
    for (n, b), ref in sorted(POLYMULT_TARGETS.items()):
        prog = compile_poly_mult(n, b)
        e = prog.energy(mtj_profile(profile), default_peripheral())
        rows.append({"n": n, "bits": b, "energy_uj": e * 1e6, "ref_uj": ref * 1e6,
                     "dev_pct": 100 * (e - ref) / ref, "steps": prog.steps,
                     "instructions": prog.instruction_count()})
    return rows


def table4_report(profile: str = "modern") -> list[dict]:
    from .runtime import HarvesterConfig, run_episode

    rows = []
    for key, ref in TABLE4_REF_J.items():
        prog, io = benchmark_program(key)
        rep = run_episode(prog, None, HarvesterConfig.for_profile(profile, 1.0), io=io, profile=profile)
        rows.append({"benchmark": key, "energy_uj": rep.energy * 1e6, "ref_uj": ref * 1e6,
                     "dev_pct": 100 * (rep.energy - ref) / ref})
    return rows


def cmd_bench_polymult(args):
    lines = [f"polynomial multiply, profile={args.profile}, count mode",
             "n,bits,energy_uj,ref_uj,dev_pct,steps,instructions"]
    for r in polymult_report(args.profile):
        lines.append(f"{r['n']},{r['bits']},{r['energy_uj']:.4f},{r['ref_uj']:.2f},{r['dev_pct']:+.2f},"
                     f"{r['steps']},{r['instructions']}")
    status = EXIT_OK
    if args.check:
        from .ntt import negacyclic_convolve_naive
        from .pim.compiler import compile_poly_mult

        prog = compile_poly_mult(16, 13, q=4129)
        rng = _rng(args)
        a, b = rng.integers(0, 4129, 16), rng.integers(0, 4129, 16)
        got = prog.read(prog.run(prog.fresh_grid(), {"A": a, "B": b}, validate=False), "A").tolist()
        ok = got == negacyclic_convolve_naive(a.tolist(), b.tolist(), 4129)
        lines.append(f"functional check n=16 q=4129: {'pass' if ok else 'FAIL'}")
        status = EXIT_OK if ok else EXIT_INCONSISTENT
    if args.table4:
        lines.append("inference episode totals (reference values not gated), profile=modern")
        lines.append("benchmark,energy_uj,ref_uj,dev_pct")
        for r in table4_report():
            lines.append(f"{r['benchmark']},{r['energy_uj']:.1f},{r['ref_uj']:.0f},{r['dev_pct']:+.1f}")
    emit(args, "\n".join(lines))
    return status


def cmd_bench_calibrate(args):
    from .pim.calibrate import fit_peripheral, write_profile_table

    fit = fit_peripheral(args.profile)
    p = fit.peripheral
    print(f"profile={fit.profile} fraction={p.fraction:.10g} per_instruction_j={p.per_instruction:.10g}")
    for k, v in fit.predicted().items():
        print(f"  {k[0]},{k[1]}: {v * 1e6:.4f} uJ")
    if args.write:
        write_profile_table(fit)
        print("profile table updated")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hepim", description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--allow-slow", action="store_true", help="permit bit-level runs at full-size presets")
    groups = ap.add_subparsers(dest="group", required=True)

    def command(group, name, func, help_):
        p = group.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--out", help="also write the output, with a header line, to this file")
        return p

    he = groups.add_parser("he", help="encryption layer").add_subparsers(dest="cmd", required=True)
    for name, func in (("keygen", cmd_he_keygen), ("roundtrip", cmd_he_roundtrip), ("bench", cmd_he_bench)):
        p = command(he, name, func, f"{name} at a preset")
        p.add_argument("--preset", default="desk")
        if name == "bench":
            p.add_argument("--reps", type=int, default=3)

    svm = groups.add_parser("svm", help="inference").add_subparsers(dest="cmd", required=True)
    p = command(svm, "infer", cmd_svm_infer, "classify samples and check against the plaintext oracle")
    p.add_argument("--model", help="libSVM model file (default: bundled toy model)")
    p.add_argument("--sidecar", help="JSON quantization sidecar for --model")
    p.add_argument("--input", help="CSV of raw samples (default: bundled toy input)")
    p.add_argument("--mode", choices=("functional", "grid", "plain"), default="functional")
    p.add_argument("--preset", default="desk")

    sim = groups.add_parser("sim", help="harvested-power runtime").add_subparsers(dest="cmd", required=True)
    p = command(sim, "sweep", cmd_sim_sweep, "latency and overheads across source powers")
    p.add_argument("--profile", choices=("modern", "projected", "both"), default="both")
    p.add_argument("--powers", default="2e-3,5e-3,10e-3,20e-3,50e-3,100e-3")
    p.add_argument("--benchmark", choices=("mnist", "har", "adult"), default="mnist")
    p.add_argument("--interrupt-fuzz", type=int, default=0, metavar="K")
    p.add_argument("--config", help="JSON harvester overrides")

    off = groups.add_parser("offload", help="offloading comparison").add_subparsers(dest="cmd", required=True)
    p = command(off, "table3", cmd_offload_table3, "option latencies and minimum accelerator power")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--energy-source", choices=("reference", "model"), default="reference")

    bench = groups.add_parser("bench", help="energy model").add_subparsers(dest="cmd", required=True)
    p = command(bench, "polymult", cmd_bench_polymult, "polynomial-multiply energy against reference rows")
    p.add_argument("--profile", choices=("modern", "projected"), default="projected")
    p.add_argument("--check", action="store_true", help="also run a small product bit-exactly")
    p.add_argument("--table4", action="store_true", help="also report whole-inference totals")
    p = command(bench, "calibrate", cmd_bench_calibrate, "refit the peripheral constants")
    p.add_argument("--profile", choices=("modern", "projected"), default="projected")
    p.add_argument("--write", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    args._command = f"{args.group} {args.cmd}"
    try:
        return args.func(args)
    except (HepimError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
