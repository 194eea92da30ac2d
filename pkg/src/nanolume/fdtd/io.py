"""CSV output for antenna runs."""

from __future__ import annotations

import csv

import numpy as np


def _header(fh, header_lines):
    for line in header_lines:
        fh.write(f"# {line}\n")


def write_spectrum_csv(path, wavelengths, total_power, purcell, eta, header_lines=()):
    """Per-wavelength table: lambda_nm, P_total, F_purcell, eta_NA."""
    n = len(wavelengths)
    purcell = np.full(n, np.nan) if purcell is None else np.asarray(purcell)
    eta = np.full(n, np.nan) if eta is None else np.asarray(eta)
    with open(path, "w", newline="") as fh:
        _header(fh, header_lines)
        w = csv.writer(fh)
        w.writerow(["lambda_nm", "P_total", "F_purcell", "eta_NA"])
        for lam, p, f, e in zip(wavelengths, total_power, purcell, eta):
            w.writerow([f"{lam:.6g}", f"{p:.10e}", f"{f:.10g}", f"{e:.10g}"])


def write_far_field_csv(path, ff, header_lines=()):
    """Long-format far field: theta_deg, phi_deg, lambda_nm, dP_dOmega."""
    with open(path, "w", newline="") as fh:
        _header(fh, header_lines)
        w = csv.writer(fh)
        w.writerow(["theta_deg", "phi_deg", "lambda_nm", "dP_dOmega"])
        for li, lam in enumerate(ff.wavelengths):
            for ti, th in enumerate(ff.theta_deg):
                for pi, ph in enumerate(ff.phi_deg):
                    w.writerow([f"{th:.6g}", f"{ph:.6g}", f"{lam:.6g}", f"{ff.dp_domega[li, ti, pi]:.8e}"])


def read_csv_table(path) -> dict:
    """Columns of a headed CSV (comment lines skipped) as float arrays."""
    with open(path) as fh:
        rows = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(rows)
    head = next(reader)
    data = np.array([[float(v) for v in r] for r in reader if r])
    return {name: data[:, i] if data.size else np.empty(0) for i, name in enumerate(head)}
