//! Newton solvers for the two semilinear elliptic equations on the surface:
//! the vortex equation for w = log H driving the minimal-lagrangian
//! pipeline, and the maximal-surface equation for u, plus the derived
//! density fields.
//!
//! Both equations share the structure Delta_sigma v = rhs(v) with rhs
//! monotone increasing in v, so damped Newton from v = 0 is globally
//! convergent and the linearizations are symmetric positive definite.

use num_complex::Complex64;
use serde::Serialize;

use crate::hyperbolic::sigma;
use crate::mesh::{integrate, EquivariantMesh, ScalarField};
use crate::qdiff::{BasisOnMesh, QuadDifferential, ZeroOfDifferential};
use crate::{Error, Result};

/// Solved vortex system: w = log H and the derived densities.
pub struct HarmonicSystem {
    pub q: QuadDifferential,
    /// P = |f|^2 / sigma^2 sampled at canonical vertices.
    pub p: ScalarField,
    pub w: ScalarField,
    pub h_density: ScalarField,
    pub l_density: ScalarField,
    pub e_density: ScalarField,
    pub jacobian: ScalarField,
    pub nu_abs: ScalarField,
    /// G = log(1/|nu|), +infinity at zeros of the differential.
    pub g_log: ScalarField,
    pub energy: f64,
    pub residual: f64,
    pub newton_iters: usize,
    /// Sup-norm residual history of the accepted Newton steps.
    pub residual_history: Vec<f64>,
}

/// Solved maximal-surface system.
pub struct MaximalSystem {
    pub u: ScalarField,
    pub p: ScalarField,
    /// Conformal factor H sigma of the induced metric.
    pub induced_factor: ScalarField,
    pub residual: f64,
    pub newton_iters: usize,
}

/// P = |f|^2/sigma^2 at canonical vertices, phase-free by construction.
pub fn sample_p(mesh: &EquivariantMesh, q: &QuadDifferential, cache: &BasisOnMesh) -> ScalarField {
    ScalarField {
        values: (0..mesh.n_canonical)
            .map(|c| {
                let v = mesh.canon_rep[c];
                let s = sigma(mesh.vertices[v].z());
                q.cached_jet(cache, v).0.norm_sqr() / (s * s)
            })
            .collect(),
    }
}

/// Conjugate gradients for the SPD system (K + D) x = b, where K = -S is
/// the positive semidefinite stiffness and D a positive diagonal. Jacobi
/// preconditioned, fixed iteration order, deterministic.
fn solve_spd(
    mesh: &EquivariantMesh,
    diag: &[f64],
    b: &[f64],
    rel_tol: f64,
) -> Result<Vec<f64>> {
    let n = b.len();
    let apply = |x: &[f64], out: &mut [f64]| {
        mesh.stiffness.apply_diff(x, out);
        for i in 0..n {
            out[i] = -out[i] + diag[i] * x[i];
        }
    };
    let mut precond = vec![0.0; n];
    for i in 0..n {
        // Diagonal of K: negated stiffness diagonal entry.
        let mut kd = 0.0;
        for k in mesh.stiffness.row_ptr[i]..mesh.stiffness.row_ptr[i + 1] {
            if mesh.stiffness.col_idx[k] == i {
                kd = -mesh.stiffness.vals[k];
            }
        }
        precond[i] = 1.0 / (kd + diag[i]);
    }
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&precond) .map(|(r, p)| r * p).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    let max_iters = 40 * (n as f64).sqrt() as usize + 200;
    for _ in 0..max_iters {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= rel_tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * precond[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NewtonDivergence { residual: f64::NAN, iters: max_iters })
}

/// Damped Newton for stiffness*v = area .* rhs(v), rhs monotone in v.
/// Returns (v, sup residual, iterations, residual history).
fn newton_solve(
    mesh: &EquivariantMesh,
    rhs: &dyn Fn(f64, usize) -> (f64, f64),
    tol: f64,
) -> Result<(ScalarField, f64, usize, Vec<f64>)> {
    let n = mesh.n_canonical;
    let mut v = vec![0.0; n];
    let mut sv = vec![0.0; n];
    // Residual of the PDE: (1/area) S v - rhs(v); assembled form
    // g = S v - area .* rhs(v).
    let residual = |v: &[f64], sv: &mut [f64]| -> (Vec<f64>, f64) {
        mesh.stiffness.apply_diff(v, sv);
        let mut g = vec![0.0; n];
        let mut sup = 0.0f64;
        for i in 0..n {
            let (r, _) = rhs(v[i], i);
            g[i] = sv[i] - mesh.vertex_area[i] * r;
            sup = sup.max((g[i] / mesh.vertex_area[i]).abs());
        }
        (g, sup)
    };
    let (mut g, mut sup) = residual(&v, &mut sv);
    let mut history = vec![sup];
    let mut iters = 0;
    while sup > tol {
        if iters >= 50 {
            return Err(Error::NewtonDivergence { residual: sup, iters });
        }
        iters += 1;
        // Linearization: S - area .* rhs'(v); negate for SPD.
        let mut diag = vec![0.0; n];
        for i in 0..n {
            let (_, dr) = rhs(v[i], i);
            debug_assert!(dr > 0.0, "linearization lost positivity");
            diag[i] = mesh.vertex_area[i] * dr;
        }
        let delta = solve_spd(mesh, &diag, &g, 1e-13)?;
        // g = Sv - A rhs: Newton step is v <- v + delta with
        // (K + D) delta = g  (K = -S).
        let gnorm2: f64 = g.iter().map(|x| x * x).sum();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = v.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
            let (gt, sup_t) = residual(&trial, &mut sv);
            let gt2: f64 = gt.iter().map(|x| x * x).sum();
            if gt2 < gnorm2 * (1.0 - 0.25 * step).max(0.1) {
                v = trial;
                g = gt;
                sup = sup_t;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDivergence { residual: sup, iters });
        }
        history.push(sup);
    }
    Ok((ScalarField { values: v }, sup, iters, history))
}

/// Solves the vortex equation  Delta_sigma w = 2 e^w - 2 P e^{-w} - 2
/// for w = log H, from w = 0, with backtracking damping.
pub fn solve_bochner(
    mesh: &EquivariantMesh,
    q: &QuadDifferential,
    cache: &BasisOnMesh,
) -> Result<HarmonicSystem> {
    let p = sample_p(mesh, q, cache);
    solve_bochner_with_p(mesh, q, p)
}

pub fn solve_bochner_with_p(
    mesh: &EquivariantMesh,
    q: &QuadDifferential,
    p: ScalarField,
) -> Result<HarmonicSystem> {
    let pv = p.values.clone();
    let rhs = move |w: f64, i: usize| -> (f64, f64) {
        let ew = w.exp();
        let emw = (-w).exp();
        (2.0 * ew - 2.0 * pv[i] * emw - 2.0, 2.0 * ew + 2.0 * pv[i] * emw)
    };
    let (w, residual, newton_iters, history) = newton_solve(mesh, &rhs, 1e-10)?;
    let h_density = w.map(f64::exp);
    let l_density = p.zip(&w, |pp, ww| pp * (-ww).exp());
    let e_density = h_density.zip(&l_density, |h, l| h + l);
    let jacobian = h_density.zip(&l_density, |h, l| h - l);
    let nu_abs = l_density.zip(&h_density, |l, h| (l / h).sqrt());
    let g_log = nu_abs.map(|nu| -(nu.max(1e-300)).ln());
    let energy = integrate(mesh, &e_density);
    Ok(HarmonicSystem {
        q: q.clone(),
        p,
        w,
        h_density,
        l_density,
        e_density,
        jacobian,
        nu_abs,
        g_log,
        energy,
        residual,
        newton_iters,
        residual_history: history,
    })
}

/// Total energy of a solved system.
pub fn total_energy(sys: &HarmonicSystem, mesh: &EquivariantMesh) -> f64 {
    integrate(mesh, &sys.e_density)
}

/// Solves the maximal-surface equation Delta_sigma u = e^{2u} - P e^{-2u} - 1.
pub fn solve_maximal(
    mesh: &EquivariantMesh,
    q: &QuadDifferential,
    cache: &BasisOnMesh,
) -> Result<MaximalSystem> {
    let p = sample_p(mesh, q, cache);
    let pv = p.values.clone();
    let rhs = move |u: f64, i: usize| -> (f64, f64) {
        let e2 = (2.0 * u).exp();
        let em2 = (-2.0 * u).exp();
        (e2 - pv[i] * em2 - 1.0, 2.0 * e2 + 2.0 * pv[i] * em2)
    };
    let (u, residual, newton_iters, _) = newton_solve(mesh, &rhs, 1e-10)?;
    let induced_factor = ScalarField {
        values: (0..mesh.n_canonical)
            .map(|c| {
                let z = mesh.vertices[mesh.canon_rep[c]].z();
                (2.0 * u.values[c]).exp() * sigma(z)
            })
            .collect(),
    };
    Ok(MaximalSystem { u, p, induced_factor, residual, newton_iters })
}

/// One probe of the injectivity-radius bound.
#[derive(Debug, Clone, Serialize)]
pub struct MinskyProbe {
    pub vertex: usize,
    pub g_value: f64,
    pub flat_radius: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MinskyReport {
    pub probes: usize,
    pub violations: Vec<MinskyProbe>,
    pub min_margin: f64,
}

/// Checks G(p) <= asinh(2 / r(p)^2) + slack over the canonical vertices,
/// where r(p) is the flat distance to the nearest zero capped by the systole
/// proxy (all in the metric of the solved differential).
pub fn minsky_bound_check(
    sys: &HarmonicSystem,
    mesh: &EquivariantMesh,
    zeros: &[ZeroOfDifferential],
    systole_cap: f64,
    slack: f64,
) -> MinskyReport {
    // |f|^(1/2) per canonical vertex: flat lengths of chart segments by
    // linear interpolation, accurate enough for radius probes.
    let flat_speed = ScalarField {
        values: (0..mesh.n_canonical)
            .map(|c| {
                let z = mesh.vertices[mesh.canon_rep[c]].z();
                (sys.p.values[c].sqrt() * sigma(z)).sqrt()
            })
            .collect(),
    };
    let seg_flat = |from: Complex64, to: Complex64| -> f64 {
        let n = 24;
        let mut acc = 0.0;
        let dz = to - from;
        for k in 0..n {
            let t = (k as f64 + 0.5) / n as f64;
            acc += mesh.interp_linear(&flat_speed, from + dz * t);
        }
        acc * dz.norm() / n as f64
    };
    let mut violations = Vec::new();
    let mut min_margin = f64::INFINITY;
    let mut probes = 0;
    for c in 0..mesh.n_canonical {
        if sys.p.values[c].sqrt() * sigma(mesh.vertices[mesh.canon_rep[c]].z()) <= 1e-10 {
            continue;
        }
        let z = mesh.vertices[mesh.canon_rep[c]].z();
        let mut r = systole_cap;
        for zero in zeros {
            let d = seg_flat(z, zero.position.z());
            if d < r {
                r = d;
            }
        }
        if r <= 1e-6 {
            continue;
        }
        probes += 1;
        let bound = (2.0 / (r * r)).asinh();
        let margin = bound + slack - sys.g_log.values[c];
        if margin < min_margin {
            min_margin = margin;
        }
        if margin < 0.0 {
            violations.push(MinskyProbe {
                vertex: c,
                g_value: sys.g_log.values[c],
                flat_radius: r,
                bound,
                margin,
            });
        }
    }
    MinskyReport { probes, violations, min_margin }
}
