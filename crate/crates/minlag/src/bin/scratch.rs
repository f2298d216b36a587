use minlag::hyperbolic::*;
use minlag::mesh::*;
use minlag::qdiff::*;
use minlag::vortex::*;
use num_complex::Complex64;
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let g = build_octagon_group();
    let basis = Arc::new(PoincareBasis::build_unchecked(&g, 10.5, 2_000_000).unwrap());
    let coeffs = [
        Complex64::new(1.0, 0.0),
        Complex64::new(0.55, 0.35),
        Complex64::new(-0.4, 0.25),
    ];
    // Subharmonicity details.
    {
        let mesh = build_mesh(&g, 0.2).unwrap();
        let cache = BasisOnMesh::build(&basis, &mesh);
        let q = QuadDifferential::from_coeffs(basis.clone(), coeffs);
        let sys = solve_bochner(&mesh, &q, &cache).unwrap();
        let fabs: Vec<f64> = (0..mesh.n_canonical)
            .map(|c| q.cached_jet(&cache, mesh.canon_rep[c]).0.norm())
            .collect();
        let mut sorted = fabs.clone();
        sorted.sort_by(f64::total_cmp);
        let med = sorted[sorted.len() / 2];
        let lap_g = laplacian_apply(&mesh, &sys.g_log);
        let mut worst = (0usize, f64::INFINITY);
        let mut nviol = 0;
        for c in 0..mesh.n_canonical {
            if fabs[c] < 0.4 * med || mesh.canonical_on_boundary(c) {
                continue;
            }
            if lap_g.values[c] < worst.1 {
                worst = (c, lap_g.values[c]);
            }
            if lap_g.values[c] < -1e-6 { nviol += 1; }
        }
        let c = worst.0;
        eprintln!("subharm: {}/{} violations, worst {:.3e} at c={} fabs {:.3e} (med {med:.3e}) J {:.3e} G {:.3e}",
            nviol, mesh.n_canonical, worst.1, c, fabs[c], sys.jacobian.values[c], sys.g_log.values[c]);
        // neighbors' G values
        let gs: Vec<f64> = mesh.neighbors[c].iter().map(|&n| sys.g_log.values[n]).collect();
        eprintln!("  G at worst: {:.3}, neighbors {:?}", sys.g_log.values[c], gs.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
    }
    // Refinement deltas.
    {
        let probes = [
            Complex64::new(0.17, 0.05),
            Complex64::new(-0.3, 0.21),
            Complex64::new(0.42, -0.33),
        ];
        let mut vals = Vec::new();
        for &h in &[0.2, 0.1, 0.05] {
            let t0 = Instant::now();
            let mesh = build_mesh(&g, h).unwrap();
            let cache = BasisOnMesh::build(&basis, &mesh);
            let q = QuadDifferential::from_coeffs(basis.clone(), coeffs);
            let sys = solve_bochner(&mesh, &q, &cache).unwrap();
            eprintln!("h={h}: V={} iters={} in {:.1}s", mesh.n_canonical, sys.newton_iters, t0.elapsed().as_secs_f64());
            vals.push(probes.iter().map(|&z| mesh.interp_linear(&sys.w, z)).collect::<Vec<f64>>());
        }
        for k in 0..3 {
            let d1 = (vals[0][k] - vals[1][k]).abs();
            let d2 = (vals[1][k] - vals[2][k]).abs();
            eprintln!("probe {k}: d1 {:.3e} d2 {:.3e} ratio {:.3}", d1, d2, d2 / d1);
        }
    }
    // Minsky margins.
    {
        let mesh = build_mesh(&g, 0.2).unwrap();
        let cache = BasisOnMesh::build(&basis, &mesh);
        let q = QuadDifferential::from_coeffs(basis.clone(), coeffs).scaled(16.0);
        let sys = solve_bochner(&mesh, &q, &cache).unwrap();
        let zeros = find_zeros_cached(&q, &mesh, Some(&cache)).unwrap();
        eprintln!("zeros: {:?}", zeros.iter().map(|z| (z.position.x, z.position.y, z.multiplicity)).collect::<Vec<_>>());
        let t0 = Instant::now();
        let report = minsky_bound_check(&sys, &mesh, &zeros, 0.3 * 4.0, 5e-2);
        eprintln!("minsky: probes {} violations {} min_margin {:.3} in {:.2}s",
            report.probes, report.violations.len(), report.min_margin, t0.elapsed().as_secs_f64());
        for v in report.violations.iter().take(5) {
            eprintln!("  viol: vertex {} G {:.3} r {:.3} bound {:.3}", v.vertex, v.g_value, v.flat_radius, v.bound);
        }
    }
}
